//! Multi-layer perceptrons over the tape: specs, parameter storage,
//! initialization, and forward passes (plain and recorded).

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Layer widths plus the activation applied between layers (the output layer
/// is always linear).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least two widths".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("all MLP widths must be >= 1".into()));
        }
        Ok(MlpSpec { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Number of tensors in this spec's parameter layout (a weight matrix and
    /// a bias row per layer).
    pub fn n_tensors(&self) -> usize {
        2 * self.n_layers()
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and
    /// biases alike.
    pub fn init_params<S: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<S> {
        let mut tensors = Vec::with_capacity(self.n_tensors());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let half = S::one() / S::lit(fan_in as f64).sqrt();
            tensors.push(Tensor::from_fn(fan_in, fan_out, |_, _| {
                S::uniform_symmetric(rng, half)
            }));
            tensors.push(Tensor::from_fn(1, fan_out, |_, _| {
                S::uniform_symmetric(rng, half)
            }));
        }
        ParamStore { tensors }
    }

    pub fn validate_params<S: Real>(&self, params: &ParamStore<S>) -> Result<()> {
        if params.tensors.len() != self.n_tensors() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                self.n_tensors(),
                params.tensors.len()
            )));
        }
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            if params.tensors[2 * l].shape() != (fan_in, fan_out) {
                return Err(Error::Config(format!("layer {l} weight shape mismatch")));
            }
            if params.tensors[2 * l + 1].shape() != (1, fan_out) {
                return Err(Error::Config(format!("layer {l} bias shape mismatch")));
            }
        }
        Ok(())
    }

    /// Plain forward pass over a batch of rows; no tape is recorded.
    pub fn forward<S: Real>(&self, params: &ParamStore<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
        if input.cols() != self.input_width() {
            return Err(Error::Config(format!(
                "input width {} does not match spec width {}",
                input.cols(),
                self.input_width()
            )));
        }
        let mut h = input.clone();
        for l in 0..self.n_layers() {
            let w = &params.tensors[2 * l];
            let b = &params.tensors[2 * l + 1];
            let mut z = h.matmul(w)?;
            for i in 0..z.rows() {
                for j in 0..z.cols() {
                    z.set(i, j, z.get(i, j) + b.get(0, j));
                }
            }
            h = if l + 1 < self.n_layers() {
                match self.activation {
                    Activation::Relu => z.map(|x| if x > S::zero() { x } else { S::zero() }),
                    Activation::Tanh => z.map(|x| x.tanh()),
                    Activation::Identity => z,
                }
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Forward pass recorded on a graph. `param_ids` must hold this spec's
    /// tensors in layout order (weight, bias per layer).
    pub fn forward_on_graph<S: Real>(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        input: NodeId,
    ) -> Result<NodeId> {
        if param_ids.len() != self.n_tensors() {
            return Err(Error::Config("param node count mismatch".into()));
        }
        if g.value(input).cols() != self.input_width() {
            return Err(Error::Config(format!(
                "input width {} does not match spec width {}",
                g.value(input).cols(),
                self.input_width()
            )));
        }
        let mut h = input;
        for l in 0..self.n_layers() {
            let z = g.matmul(h, param_ids[2 * l])?;
            let z = g.add_row(z, param_ids[2 * l + 1])?;
            h = if l + 1 < self.n_layers() {
                match self.activation {
                    Activation::Relu => g.relu(z),
                    Activation::Tanh => g.tanh(z),
                    Activation::Identity => z,
                }
            } else {
                z
            };
        }
        Ok(h)
    }
}

/// Flat parameter storage: weight matrix then bias row, per layer. A model
/// built from several MLPs concatenates their stores into one tensor list so
/// the optimizer sees a single parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn empty() -> Self {
        ParamStore { tensors: Vec::new() }
    }
}

/// Exact count of scalar parameters.
pub fn param_count<S: Real>(tensors: &[Tensor<S>]) -> usize {
    tensors.iter().map(|t| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_affine_layer_has_no_activation() {
        // widths [1,1], weight 1, bias 0, relu, input [-2] -> [-2]
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu).unwrap();
        let params = ParamStore {
            tensors: vec![Tensor::scalar(1.0f64), Tensor::scalar(0.0)],
        };
        let out = spec.forward(&params, &Tensor::scalar(-2.0)).unwrap();
        assert_eq!(out.get(0, 0), -2.0);
    }

    #[test]
    fn hand_computed_two_layer_relu() {
        // widths [2,2,1], all weights 1, biases 0, relu, input [1,-3] -> [0]
        let spec = MlpSpec::new(vec![2, 2, 1], Activation::Relu).unwrap();
        let params = ParamStore {
            tensors: vec![
                Tensor::from_fn(2, 2, |_, _| 1.0f64),
                Tensor::zeros(1, 2),
                Tensor::from_fn(2, 1, |_, _| 1.0),
                Tensor::zeros(1, 1),
            ],
        };
        let input = Tensor::from_vec(1, 2, vec![1.0, -3.0]).unwrap();
        let out = spec.forward(&params, &input).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
    }

    /// Independent loop-based forward used as an oracle against the
    /// matmul-based implementation.
    fn naive_forward(spec: &MlpSpec, params: &ParamStore<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..spec.n_layers() {
            let w = &params.tensors[2 * l];
            let b = &params.tensors[2 * l + 1];
            let mut z = vec![0.0; w.cols()];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &hi) in h.iter().enumerate() {
                    acc += hi * w.get(i, j);
                }
                *zj = acc + b.get(0, j);
            }
            if l + 1 < spec.n_layers() {
                for v in z.iter_mut() {
                    match spec.activation() {
                        Activation::Relu => *v = v.max(0.0),
                        Activation::Tanh => *v = v.tanh(),
                        Activation::Identity => {}
                    }
                }
            }
            h = z;
        }
        h
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for widths in [vec![3, 4, 2], vec![2, 5, 5, 1], vec![4, 1]] {
            for act in [Activation::Relu, Activation::Tanh, Activation::Identity] {
                let spec = MlpSpec::new(widths.clone(), act).unwrap();
                let params: ParamStore<f64> = spec.init_params(&mut rng);
                let x: Vec<f64> =
                    (0..spec.input_width()).map(|_| f64::standard_normal(&mut rng)).collect();
                let input = Tensor::from_vec(1, x.len(), x.clone()).unwrap();
                let got = spec.forward(&params, &input).unwrap();
                let want = naive_forward(&spec, &params, &x);
                for (g, w) in got.data().iter().zip(want.iter()) {
                    assert!((g - w).abs() < 1e-12, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Tanh).unwrap();
        let params: ParamStore<f64> = spec.init_params(&mut rng);
        let input = Tensor::from_vec(2, 2, vec![0.3, -0.7, 1.1, 0.0]).unwrap();
        let a = spec.forward(&params, &input).unwrap();
        let b = spec.forward(&params, &input).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn param_count_examples() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu).unwrap();
        let params: ParamStore<f64> = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(param_count(&params.tensors), 13);
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu).unwrap();
        let params: ParamStore<f64> = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(param_count(&params.tensors), 2);
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Relu).unwrap();
        let params: ParamStore<f64> = spec.init_params(&mut rng);
        let input = Tensor::from_fn(5, 3, |i, j| (i as f64 * 0.3 - j as f64 * 0.2).sin());
        let plain = spec.forward(&params, &input).unwrap();
        let mut g = Graph::new();
        let ids = g.params(&params.tensors);
        let x = g.constant(input);
        let out = spec.forward_on_graph(&mut g, &ids, x).unwrap();
        assert_eq!(g.value(out).data(), plain.data());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(vec![3], Activation::Relu).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Relu).is_err());
        let spec = MlpSpec::new(vec![3, 1], Activation::Relu).unwrap();
        let params = ParamStore::<f64> { tensors: vec![] };
        assert!(spec.validate_params(&params).is_err());
        let store: ParamStore<f64> = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(spec.forward(&store, &Tensor::zeros(1, 2)).is_err());
    }
}
