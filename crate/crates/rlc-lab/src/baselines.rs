//! Deterministic comparison models: Deep Sets (sum pooling) and a 3-layer
//! GIN. Both pool with order-canonical sums, so permutation and isomorphism
//! invariance hold bit-exactly per forward pass, not just in distribution.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamStore};
use crate::scalar::Real;
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

/// A deterministic classifier trained on its logit: it can record a batched
/// forward pass on a tape. `inputs` rows are flat samples (the `d` items of a
/// set, or a vectorized adjacency).
pub trait BaselineModel<S: Real> {
    fn params(&self) -> &[Tensor<S>];

    fn params_mut(&mut self) -> &mut [Tensor<S>];

    fn set_params(&mut self, params: Vec<Tensor<S>>) -> Result<()>;

    fn param_count(&self) -> usize {
        crate::nn::param_count(self.params())
    }

    fn logits_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        inputs: &Tensor<S>,
    ) -> Result<NodeId>;

    /// Plain logits, computed through a throwaway tape so that training and
    /// evaluation share one arithmetic path bit for bit.
    fn logits(&self, inputs: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let ids = g.params(self.params());
        let out = self.logits_on_graph(&mut g, &ids, inputs)?;
        Ok(g.value(out).clone())
    }
}

// ---------------------------------------------------------------------------
// Deep Sets
// ---------------------------------------------------------------------------

/// `rho(sum_i phi(x_i))` with exact sum pooling over the items of each row.
#[derive(Debug, Clone)]
pub struct DeepSets<S> {
    d: usize,
    item_width: usize,
    phi: MlpSpec,
    rho: MlpSpec,
    /// `phi`'s tensors followed by `rho`'s.
    params: Vec<Tensor<S>>,
}

impl<S: Real> DeepSets<S> {
    pub fn new(
        d: usize,
        item_width: usize,
        phi: MlpSpec,
        rho: MlpSpec,
        params: Vec<Tensor<S>>,
    ) -> Result<Self> {
        if d == 0 || item_width == 0 {
            return Err(Error::Config("DeepSets needs d >= 1 and item width >= 1".into()));
        }
        if phi.input_width() != item_width {
            return Err(Error::Config("phi input width must match the item width".into()));
        }
        if rho.input_width() != phi.output_width() || rho.output_width() != 1 {
            return Err(Error::Config("rho must map phi's output width to R".into()));
        }
        let me = DeepSets { d, item_width, phi, rho, params };
        me.validate_params()?;
        Ok(me)
    }

    /// Single hidden layer of width `hidden` in each network.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        item_width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let phi = MlpSpec::new(vec![item_width, hidden, hidden], Activation::Relu)?;
        let rho = MlpSpec::new(vec![hidden, hidden, 1], Activation::Relu)?;
        let mut params: Vec<Tensor<S>> = phi.init_params(rng).tensors;
        params.extend(rho.init_params::<S, R>(rng).tensors);
        DeepSets::new(d, item_width, phi, rho, params)
    }

    fn validate_params(&self) -> Result<()> {
        let n_phi = self.phi.n_tensors();
        if self.params.len() != n_phi + self.rho.n_tensors() {
            return Err(Error::Config("DeepSets parameter tensor count mismatch".into()));
        }
        self.phi.validate_params(&ParamStore { tensors: self.params[..n_phi].to_vec() })?;
        self.rho.validate_params(&ParamStore { tensors: self.params[n_phi..].to_vec() })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Same networks at a different set size (sum pooling absorbs the size).
    pub fn with_set_size(&self, d: usize) -> Result<Self> {
        DeepSets::new(d, self.item_width, self.phi.clone(), self.rho.clone(), self.params.clone())
    }
}

impl<S: Real> BaselineModel<S> for DeepSets<S> {
    fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    fn set_params(&mut self, params: Vec<Tensor<S>>) -> Result<()> {
        self.params = params;
        self.validate_params()
    }

    fn logits_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        inputs: &Tensor<S>,
    ) -> Result<NodeId> {
        let batch = inputs.rows();
        if inputs.cols() != self.d * self.item_width {
            return Err(Error::Shape(format!(
                "DeepSets input width {} != d * item width {}",
                inputs.cols(),
                self.d * self.item_width
            )));
        }
        let n_phi = self.phi.n_tensors();
        let items = g.constant(inputs.reshape(batch * self.d, self.item_width)?);
        let encoded = self.phi.forward_on_graph(g, &param_ids[..n_phi], items)?;
        let pooled = g.sum_groups(encoded, self.d)?;
        self.rho.forward_on_graph(g, &param_ids[n_phi..], pooled)
    }
}

// ---------------------------------------------------------------------------
// GIN
// ---------------------------------------------------------------------------

/// Graph Isomorphism Network: from constant-1 node features,
/// `h_v <- MLP_l((1 + eps_l) h_v + sum_(u in N(v)) h_u)` per layer, then a
/// linear readout of the node-feature sum. Exactly relabeling-invariant.
///
/// Constant node features are deliberate: the tasks carry no node features,
/// and degree features would leak connectivity information.
#[derive(Debug, Clone)]
pub struct Gin<S> {
    n: usize,
    layer_mlps: Vec<MlpSpec>,
    /// Per layer: the `eps` scalar then the layer MLP's tensors; finally the
    /// readout weight and bias.
    params: Vec<Tensor<S>>,
}

impl<S: Real> Gin<S> {
    pub fn new(n: usize, layer_mlps: Vec<MlpSpec>, params: Vec<Tensor<S>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("Gin needs n >= 1".into()));
        }
        if layer_mlps.is_empty() {
            return Err(Error::Config("Gin needs at least one layer".into()));
        }
        if layer_mlps[0].input_width() != 1 {
            return Err(Error::Config("first Gin layer must accept the constant-1 feature".into()));
        }
        for w in layer_mlps.windows(2) {
            if w[1].input_width() != w[0].output_width() {
                return Err(Error::Config("Gin layer widths must chain".into()));
            }
        }
        let me = Gin { n, layer_mlps, params };
        me.validate_params()?;
        Ok(me)
    }

    /// Three layers with one hidden layer of width `hidden` per layer MLP.
    pub fn init<R: Rng + ?Sized>(n: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let layer_mlps = vec![
            MlpSpec::new(vec![1, hidden, hidden], Activation::Relu)?,
            MlpSpec::new(vec![hidden, hidden, hidden], Activation::Relu)?,
            MlpSpec::new(vec![hidden, hidden, hidden], Activation::Relu)?,
        ];
        let mut params: Vec<Tensor<S>> = Vec::new();
        for mlp in &layer_mlps {
            params.push(Tensor::zeros(1, 1)); // eps starts at 0
            params.extend(mlp.init_params::<S, R>(rng).tensors);
        }
        let half = S::one() / S::lit(hidden as f64).sqrt();
        params.push(Tensor::from_fn(hidden, 1, |_, _| S::uniform_symmetric(rng, half)));
        params.push(Tensor::from_fn(1, 1, |_, _| S::uniform_symmetric(rng, half)));
        Gin::new(n, layer_mlps, params)
    }

    fn validate_params(&self) -> Result<()> {
        let expected: usize =
            self.layer_mlps.iter().map(|m| 1 + m.n_tensors()).sum::<usize>() + 2;
        if self.params.len() != expected {
            return Err(Error::Config("Gin parameter tensor count mismatch".into()));
        }
        let mut at = 0;
        for mlp in &self.layer_mlps {
            if self.params[at].shape() != (1, 1) {
                return Err(Error::Config("Gin eps must be a 1x1 scalar".into()));
            }
            at += 1;
            mlp.validate_params(&ParamStore {
                tensors: self.params[at..at + mlp.n_tensors()].to_vec(),
            })?;
            at += mlp.n_tensors();
        }
        let width = self.layer_mlps.last().unwrap().output_width();
        if self.params[at].shape() != (width, 1) || self.params[at + 1].shape() != (1, 1) {
            return Err(Error::Config("Gin readout shape mismatch".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn with_vertex_count(&self, n: usize) -> Result<Self> {
        Gin::new(n, self.layer_mlps.clone(), self.params.clone())
    }

    /// Logit for a single adjacency matrix.
    pub fn logit(&self, adjacency: &Tensor<S>) -> Result<S> {
        if adjacency.shape() != (self.n, self.n) {
            return Err(Error::Shape("adjacency shape != n x n".into()));
        }
        let input = adjacency.reshape(1, self.n * self.n)?;
        Ok(self.logits(&input)?.get(0, 0))
    }
}

impl<S: Real> BaselineModel<S> for Gin<S> {
    fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    fn set_params(&mut self, params: Vec<Tensor<S>>) -> Result<()> {
        self.params = params;
        self.validate_params()
    }

    fn logits_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        inputs: &Tensor<S>,
    ) -> Result<NodeId> {
        let n = self.n;
        let batch = inputs.rows();
        if inputs.cols() != n * n {
            return Err(Error::Shape(format!(
                "Gin input width {} != n^2 = {}",
                inputs.cols(),
                n * n
            )));
        }
        let adjacencies: Vec<Tensor<S>> = (0..batch)
            .map(|i| Tensor::from_vec(n, n, inputs.row(i).to_vec()))
            .collect::<Result<_>>()?;
        let adjacencies = Rc::new(adjacencies);

        let mut h = g.constant(Tensor::from_fn(batch * n, 1, |_, _| S::one()));
        let mut at = 0;
        for mlp in &self.layer_mlps {
            let eps = param_ids[at];
            at += 1;
            let mlp_ids = &param_ids[at..at + mlp.n_tensors()];
            at += mlp.n_tensors();
            let agg = g.adj_matmul(h, Rc::clone(&adjacencies))?;
            let scaled = g.scale_scalar(h, eps)?;
            let pre = g.add(h, scaled)?;
            let pre = g.add(pre, agg)?;
            h = mlp.forward_on_graph(g, mlp_ids, pre)?;
        }
        let pooled = g.sum_groups(h, n)?;
        let out = g.matmul(pooled, param_ids[at])?;
        g.add_row(out, param_ids[at + 1])
    }
}
