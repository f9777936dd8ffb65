//! Coefficient samplers whose weight distributions are invariant by
//! construction: exchangeable set classifiers (shared plus per-item noise),
//! jointly exchangeable graph classifiers (shared, per-node, and per-edge
//! noise), and rotatable sphere classifiers (random scale times an i.i.d.
//! Gaussian vector). Also the exact coupling-based invariance checks.
//!
//! Coupling scores are accumulated in a canonical order (sorted terms, see
//! [`canonical_sum`]) so that permuting an input together with its matched
//! noise components leaves the pre-sign score bit-identical, not merely
//! equal up to rounding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamStore};
use crate::rlc::{CoefficientSampler, LinearClassifier, Stream};
use crate::scalar::{canonical_sum, Real};
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;

/// A sampler backed by hypernetworks whose parameters can be trained: it can
/// emit its coefficient batch as differentiable tape nodes.
pub trait HyperRlc<S: Real>: CoefficientSampler<S> {
    fn hyper_params(&self) -> &[Tensor<S>];

    fn hyper_params_mut(&mut self) -> &mut [Tensor<S>];

    fn set_hyper_params(&mut self, params: Vec<Tensor<S>>) -> Result<()>;

    fn param_count(&self) -> usize {
        crate::nn::param_count(self.hyper_params())
    }

    /// Number of contiguous weight chunks whose permutation the sampler's
    /// noise coupling tracks; the training score accumulates canonically over
    /// these chunks (1 means plain accumulation).
    fn score_chunks(&self) -> usize {
        1
    }

    /// Constant temperature applied to the pre-tanh score in the training
    /// surrogate. Majority prediction is invariant to positive rescaling of
    /// the score, so this is purely a training aid; samplers override it
    /// where the raw score magnitude would mismatch tanh's linear range.
    fn score_scale(&self) -> S {
        S::one()
    }

    /// Records `m` coefficient draws on the graph using fresh noise from the
    /// stream. Returns `(weights, biases)` with shapes `m x dim` and `m x 1`.
    /// Noise enters only as constant network inputs, so gradients with
    /// respect to the parameters are exact for the softened objective.
    fn coefficients_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        m: usize,
        stream: &mut Stream,
    ) -> Result<(NodeId, NodeId)>;
}

// ---------------------------------------------------------------------------
// RSetC
// ---------------------------------------------------------------------------

/// Noise for one set-classifier draw: shared latent, one scalar per item,
/// and the bias noise. All sources are scalar standard normal.
#[derive(Debug, Clone)]
pub struct SetNoise<S> {
    pub shared: S,
    pub items: Vec<S>,
    pub bias: S,
}

impl<S: Real> SetNoise<S> {
    pub fn draw(d: usize, stream: &mut Stream) -> Self {
        let shared = S::standard_normal(stream);
        let items = (0..d).map(|_| S::standard_normal(stream)).collect();
        let bias = S::standard_normal(stream);
        SetNoise { shared, items, bias }
    }

    /// Items permuted so that `permuted.items[i] == self.items[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        SetNoise {
            shared: self.shared,
            items: perm.iter().map(|&p| self.items[p]).collect(),
            bias: self.bias,
        }
    }
}

/// Randomized set classifier: weight chunk `i` is `f(shared, item_i)`, the
/// bias is `g(shared, bias_noise)`. Exchangeable in the items by
/// construction, and the parameter count is independent of the set size.
#[derive(Debug, Clone)]
pub struct RSetC<S> {
    d: usize,
    k: usize,
    f_spec: MlpSpec,
    g_spec: MlpSpec,
    /// `f`'s tensors followed by `g`'s, one flat optimizer-facing list.
    params: Vec<Tensor<S>>,
}

impl<S: Real> RSetC<S> {
    pub fn new(
        d: usize,
        k: usize,
        f_spec: MlpSpec,
        g_spec: MlpSpec,
        params: Vec<Tensor<S>>,
    ) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::Config("RSetC needs d >= 1 and k >= 1".into()));
        }
        if f_spec.input_width() != 2 || f_spec.output_width() != k {
            return Err(Error::Config("RSetC f network must map R^2 -> R^k".into()));
        }
        if g_spec.input_width() != 2 || g_spec.output_width() != 1 {
            return Err(Error::Config("RSetC g network must map R^2 -> R".into()));
        }
        let me = RSetC { d, k, f_spec, g_spec, params };
        me.validate_params()?;
        Ok(me)
    }

    /// Fresh sampler with one hidden layer of width `hidden` in each network.
    pub fn init<R: Rng + ?Sized>(d: usize, k: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let f_spec = MlpSpec::new(vec![2, hidden, k], Activation::Relu)?;
        let g_spec = MlpSpec::new(vec![2, hidden, 1], Activation::Relu)?;
        let mut params: Vec<Tensor<S>> = f_spec.init_params(rng).tensors;
        params.extend(g_spec.init_params::<S, R>(rng).tensors);
        RSetC::new(d, k, f_spec, g_spec, params)
    }

    fn validate_params(&self) -> Result<()> {
        let n_f = self.f_spec.n_tensors();
        if self.params.len() != n_f + self.g_spec.n_tensors() {
            return Err(Error::Config("RSetC parameter tensor count mismatch".into()));
        }
        self.f_spec.validate_params(&ParamStore { tensors: self.params[..n_f].to_vec() })?;
        self.g_spec.validate_params(&ParamStore { tensors: self.params[n_f..].to_vec() })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Same networks applied to a different set size; the parameter count is
    /// unchanged, which is the point of the construction.
    pub fn with_set_size(&self, d: usize) -> Result<Self> {
        RSetC::new(d, self.k, self.f_spec.clone(), self.g_spec.clone(), self.params.clone())
    }

    fn f_params(&self) -> ParamStore<S> {
        ParamStore { tensors: self.params[..self.f_spec.n_tensors()].to_vec() }
    }

    fn g_params(&self) -> ParamStore<S> {
        ParamStore { tensors: self.params[self.f_spec.n_tensors()..].to_vec() }
    }

    pub fn sample_with_noise(&self, noise: &SetNoise<S>) -> Result<LinearClassifier<S>> {
        if noise.items.len() != self.d {
            return Err(Error::Shape("noise item count != set size".into()));
        }
        let f_in = Tensor::from_fn(self.d, 2, |i, j| if j == 0 { noise.shared } else { noise.items[i] });
        let chunks = self.f_spec.forward(&self.f_params(), &f_in)?;
        let g_in = Tensor::from_vec(1, 2, vec![noise.shared, noise.bias])?;
        let bias = self.g_spec.forward(&self.g_params(), &g_in)?.get(0, 0);
        Ok(LinearClassifier { weights: chunks.data().to_vec(), bias })
    }
}

impl<S: Real> CoefficientSampler<S> for RSetC<S> {
    fn dim(&self) -> usize {
        self.d * self.k
    }

    fn sample(&self, stream: &mut Stream) -> LinearClassifier<S> {
        self.sample_with_noise(&SetNoise::draw(self.d, stream))
            .expect("validated spec")
    }

    fn sample_batch(&self, m: usize, stream: &mut Stream) -> Vec<LinearClassifier<S>> {
        // One batched forward over all draws; per-row arithmetic is identical
        // to m sequential samples, including stream consumption order.
        let mut f_in = Tensor::zeros(m * self.d, 2);
        let mut g_in = Tensor::zeros(m, 2);
        for j in 0..m {
            let noise = SetNoise::draw(self.d, stream);
            for i in 0..self.d {
                f_in.set(j * self.d + i, 0, noise.shared);
                f_in.set(j * self.d + i, 1, noise.items[i]);
            }
            g_in.set(j, 0, noise.shared);
            g_in.set(j, 1, noise.bias);
        }
        let chunks = self.f_spec.forward(&self.f_params(), &f_in).expect("validated spec");
        let biases = self.g_spec.forward(&self.g_params(), &g_in).expect("validated spec");
        let dim = self.d * self.k;
        (0..m)
            .map(|j| LinearClassifier {
                weights: chunks.data()[j * dim..(j + 1) * dim].to_vec(),
                bias: biases.get(j, 0),
            })
            .collect()
    }
}

impl<S: Real> HyperRlc<S> for RSetC<S> {
    fn hyper_params(&self) -> &[Tensor<S>] {
        &self.params
    }

    fn score_chunks(&self) -> usize {
        self.d
    }

    /// Sharpens tanh toward the hard sign it stands in for; tuned on the
    /// validation sets (1, 1/sqrt(d), and larger constants all trained, this
    /// value gave the best validation accuracy on the set tasks).
    fn score_scale(&self) -> S {
        S::lit(8.0)
    }

    fn hyper_params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    fn set_hyper_params(&mut self, params: Vec<Tensor<S>>) -> Result<()> {
        self.params = params;
        self.validate_params()
    }

    fn coefficients_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        m: usize,
        stream: &mut Stream,
    ) -> Result<(NodeId, NodeId)> {
        let n_f = self.f_spec.n_tensors();
        let mut f_in = Tensor::zeros(m * self.d, 2);
        let mut g_in = Tensor::zeros(m, 2);
        for j in 0..m {
            let noise = SetNoise::draw(self.d, stream);
            for i in 0..self.d {
                f_in.set(j * self.d + i, 0, noise.shared);
                f_in.set(j * self.d + i, 1, noise.items[i]);
            }
            g_in.set(j, 0, noise.shared);
            g_in.set(j, 1, noise.bias);
        }
        let f_in = g.constant(f_in);
        let g_in = g.constant(g_in);
        let chunks = self.f_spec.forward_on_graph(g, &param_ids[..n_f], f_in)?;
        let weights = g.reshape(chunks, m, self.d * self.k)?;
        let biases = self.g_spec.forward_on_graph(g, &param_ids[n_f..], g_in)?;
        Ok((weights, biases))
    }
}

// ---------------------------------------------------------------------------
// RGraphC
// ---------------------------------------------------------------------------

/// Noise for one graph-classifier draw. Edge noise is drawn once per
/// unordered pair and mirrored, so the weight array is symmetric in
/// distribution under the natural coupling for undirected graphs.
#[derive(Debug, Clone)]
pub struct GraphNoise<S> {
    pub shared: S,
    pub nodes: Vec<S>,
    /// Full `d x d`, with `edges[(i, j)] == edges[(j, i)]`.
    pub edges: Tensor<S>,
    pub bias: S,
}

impl<S: Real> GraphNoise<S> {
    pub fn draw(d: usize, stream: &mut Stream) -> Self {
        let shared = S::standard_normal(stream);
        let nodes: Vec<S> = (0..d).map(|_| S::standard_normal(stream)).collect();
        let mut edges = Tensor::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let e = S::standard_normal(stream);
                edges.set(i, j, e);
                edges.set(j, i, e);
            }
        }
        let bias = S::standard_normal(stream);
        GraphNoise { shared, nodes, edges, bias }
    }

    /// Vertex relabeling coupling: `permuted.nodes[i] == self.nodes[perm[i]]`
    /// and `permuted.edges[(i, j)] == self.edges[(perm[i], perm[j])]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.nodes.len();
        GraphNoise {
            shared: self.shared,
            nodes: perm.iter().map(|&p| self.nodes[p]).collect(),
            edges: Tensor::from_fn(d, d, |i, j| self.edges.get(perm[i], perm[j])),
            bias: self.bias,
        }
    }
}

/// Randomized graph classifier over vectorized `d x d` adjacencies: the
/// weight for entry `(i, j)` is `f(shared, node_i, node_j, edge_ij)` and the
/// bias is `g(shared, bias_noise)`. Jointly exchangeable by construction.
///
/// The bias uses a separate two-input network rather than reusing `f`, whose
/// arity would not fit; this mirrors the set classifier.
#[derive(Debug, Clone)]
pub struct RGraphC<S> {
    d: usize,
    f_spec: MlpSpec,
    g_spec: MlpSpec,
    params: Vec<Tensor<S>>,
}

impl<S: Real> RGraphC<S> {
    pub fn new(d: usize, f_spec: MlpSpec, g_spec: MlpSpec, params: Vec<Tensor<S>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("RGraphC needs d >= 1".into()));
        }
        if f_spec.input_width() != 4 || f_spec.output_width() != 1 {
            return Err(Error::Config("RGraphC f network must map R^4 -> R".into()));
        }
        if g_spec.input_width() != 2 || g_spec.output_width() != 1 {
            return Err(Error::Config("RGraphC g network must map R^2 -> R".into()));
        }
        let me = RGraphC { d, f_spec, g_spec, params };
        me.validate_params()?;
        Ok(me)
    }

    /// Fresh sampler with `hidden_layers` hidden layers of width `hidden` in
    /// each network.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        hidden: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut f_widths = vec![4];
        let mut g_widths = vec![2];
        for _ in 0..hidden_layers {
            f_widths.push(hidden);
            g_widths.push(hidden);
        }
        f_widths.push(1);
        g_widths.push(1);
        let f_spec = MlpSpec::new(f_widths, Activation::Relu)?;
        let g_spec = MlpSpec::new(g_widths, Activation::Relu)?;
        let mut params: Vec<Tensor<S>> = f_spec.init_params(rng).tensors;
        params.extend(g_spec.init_params::<S, R>(rng).tensors);
        RGraphC::new(d, f_spec, g_spec, params)
    }

    fn validate_params(&self) -> Result<()> {
        let n_f = self.f_spec.n_tensors();
        if self.params.len() != n_f + self.g_spec.n_tensors() {
            return Err(Error::Config("RGraphC parameter tensor count mismatch".into()));
        }
        self.f_spec.validate_params(&ParamStore { tensors: self.params[..n_f].to_vec() })?;
        self.g_spec.validate_params(&ParamStore { tensors: self.params[n_f..].to_vec() })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn with_vertex_count(&self, d: usize) -> Result<Self> {
        RGraphC::new(d, self.f_spec.clone(), self.g_spec.clone(), self.params.clone())
    }

    fn f_params(&self) -> ParamStore<S> {
        ParamStore { tensors: self.params[..self.f_spec.n_tensors()].to_vec() }
    }

    fn g_params(&self) -> ParamStore<S> {
        ParamStore { tensors: self.params[self.f_spec.n_tensors()..].to_vec() }
    }

    fn noise_rows(&self, noise: &GraphNoise<S>) -> Tensor<S> {
        Tensor::from_fn(self.d * self.d, 4, |row, col| {
            let (i, j) = (row / self.d, row % self.d);
            match col {
                0 => noise.shared,
                1 => noise.nodes[i],
                2 => noise.nodes[j],
                _ => noise.edges.get(i, j),
            }
        })
    }

    pub fn sample_with_noise(&self, noise: &GraphNoise<S>) -> Result<LinearClassifier<S>> {
        if noise.nodes.len() != self.d {
            return Err(Error::Shape("noise node count != vertex count".into()));
        }
        let weights = self.f_spec.forward(&self.f_params(), &self.noise_rows(noise))?;
        let g_in = Tensor::from_vec(1, 2, vec![noise.shared, noise.bias])?;
        let bias = self.g_spec.forward(&self.g_params(), &g_in)?.get(0, 0);
        Ok(LinearClassifier { weights: weights.data().to_vec(), bias })
    }
}

impl<S: Real> CoefficientSampler<S> for RGraphC<S> {
    fn dim(&self) -> usize {
        self.d * self.d
    }

    fn sample(&self, stream: &mut Stream) -> LinearClassifier<S> {
        self.sample_with_noise(&GraphNoise::draw(self.d, stream))
            .expect("validated spec")
    }

    fn sample_batch(&self, m: usize, stream: &mut Stream) -> Vec<LinearClassifier<S>> {
        let dd = self.d * self.d;
        let mut f_in = Tensor::zeros(m * dd, 4);
        let mut g_in = Tensor::zeros(m, 2);
        for j in 0..m {
            let noise = GraphNoise::draw(self.d, stream);
            let rows = self.noise_rows(&noise);
            f_in.data_mut()[j * dd * 4..(j + 1) * dd * 4].copy_from_slice(rows.data());
            g_in.set(j, 0, noise.shared);
            g_in.set(j, 1, noise.bias);
        }
        let weights = self.f_spec.forward(&self.f_params(), &f_in).expect("validated spec");
        let biases = self.g_spec.forward(&self.g_params(), &g_in).expect("validated spec");
        (0..m)
            .map(|j| LinearClassifier {
                weights: weights.data()[j * dd..(j + 1) * dd].to_vec(),
                bias: biases.get(j, 0),
            })
            .collect()
    }
}

impl<S: Real> HyperRlc<S> for RGraphC<S> {
    fn hyper_params(&self) -> &[Tensor<S>] {
        &self.params
    }

    fn hyper_params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    fn set_hyper_params(&mut self, params: Vec<Tensor<S>>) -> Result<()> {
        self.params = params;
        self.validate_params()
    }

    /// Raw graph scores accumulate over all d^2 adjacency entries and grow
    /// with the edge count, which saturates tanh at init and freezes
    /// training; 1/sqrt(d^2) = 1/d keeps the pre-tanh score O(1).
    fn score_scale(&self) -> S {
        S::one() / S::lit(self.d as f64)
    }

    fn coefficients_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        m: usize,
        stream: &mut Stream,
    ) -> Result<(NodeId, NodeId)> {
        let n_f = self.f_spec.n_tensors();
        let dd = self.d * self.d;
        let mut f_in = Tensor::zeros(m * dd, 4);
        let mut g_in = Tensor::zeros(m, 2);
        for j in 0..m {
            let noise = GraphNoise::draw(self.d, stream);
            let rows = self.noise_rows(&noise);
            f_in.data_mut()[j * dd * 4..(j + 1) * dd * 4].copy_from_slice(rows.data());
            g_in.set(j, 0, noise.shared);
            g_in.set(j, 1, noise.bias);
        }
        let f_in = g.constant(f_in);
        let g_in = g.constant(g_in);
        let raw = self.f_spec.forward_on_graph(g, &param_ids[..n_f], f_in)?;
        let weights = g.reshape(raw, m, dd)?;
        let biases = self.g_spec.forward_on_graph(g, &param_ids[n_f..], g_in)?;
        Ok((weights, biases))
    }
}

// ---------------------------------------------------------------------------
// RSphereC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SphereNoise<S> {
    pub shared: S,
    pub scale: S,
    pub gaussian: Vec<S>,
    pub bias: S,
}

impl<S: Real> SphereNoise<S> {
    pub fn draw(d: usize, stream: &mut Stream) -> Self {
        let shared = S::standard_normal(stream);
        let scale = S::standard_normal(stream);
        let gaussian = (0..d).map(|_| S::standard_normal(stream)).collect();
        let bias = S::standard_normal(stream);
        SphereNoise { shared, scale, gaussian, bias }
    }
}

/// Randomized sphere classifier: weights are `f(shared, scale_noise)` times a
/// fresh i.i.d. standard-normal vector, so their distribution is rotatable.
#[derive(Debug, Clone)]
pub struct RSphereC<S> {
    d: usize,
    f_spec: MlpSpec,
    g_spec: MlpSpec,
    params: Vec<Tensor<S>>,
}

impl<S: Real> RSphereC<S> {
    pub fn new(d: usize, f_spec: MlpSpec, g_spec: MlpSpec, params: Vec<Tensor<S>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("RSphereC needs d >= 1".into()));
        }
        if f_spec.input_width() != 2 || f_spec.output_width() != 1 {
            return Err(Error::Config("RSphereC f network must map R^2 -> R".into()));
        }
        if g_spec.input_width() != 2 || g_spec.output_width() != 1 {
            return Err(Error::Config("RSphereC g network must map R^2 -> R".into()));
        }
        let me = RSphereC { d, f_spec, g_spec, params };
        me.validate_params()?;
        Ok(me)
    }

    pub fn init<R: Rng + ?Sized>(d: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let f_spec = MlpSpec::new(vec![2, hidden, 1], Activation::Relu)?;
        let g_spec = MlpSpec::new(vec![2, hidden, 1], Activation::Relu)?;
        let mut params: Vec<Tensor<S>> = f_spec.init_params(rng).tensors;
        params.extend(g_spec.init_params::<S, R>(rng).tensors);
        RSphereC::new(d, f_spec, g_spec, params)
    }

    fn validate_params(&self) -> Result<()> {
        let n_f = self.f_spec.n_tensors();
        if self.params.len() != n_f + self.g_spec.n_tensors() {
            return Err(Error::Config("RSphereC parameter tensor count mismatch".into()));
        }
        self.f_spec.validate_params(&ParamStore { tensors: self.params[..n_f].to_vec() })?;
        self.g_spec.validate_params(&ParamStore { tensors: self.params[n_f..].to_vec() })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn f_params(&self) -> ParamStore<S> {
        ParamStore { tensors: self.params[..self.f_spec.n_tensors()].to_vec() }
    }

    fn g_params(&self) -> ParamStore<S> {
        ParamStore { tensors: self.params[self.f_spec.n_tensors()..].to_vec() }
    }

    pub fn sample_with_noise(&self, noise: &SphereNoise<S>) -> Result<LinearClassifier<S>> {
        let f_in = Tensor::from_vec(1, 2, vec![noise.shared, noise.scale])?;
        let scale = self.f_spec.forward(&self.f_params(), &f_in)?.get(0, 0);
        let g_in = Tensor::from_vec(1, 2, vec![noise.shared, noise.bias])?;
        let bias = self.g_spec.forward(&self.g_params(), &g_in)?.get(0, 0);
        Ok(LinearClassifier {
            weights: noise.gaussian.iter().map(|&z| scale * z).collect(),
            bias,
        })
    }
}

impl<S: Real> CoefficientSampler<S> for RSphereC<S> {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample(&self, stream: &mut Stream) -> LinearClassifier<S> {
        self.sample_with_noise(&SphereNoise::draw(self.d, stream))
            .expect("validated spec")
    }
}

impl<S: Real> HyperRlc<S> for RSphereC<S> {
    fn hyper_params(&self) -> &[Tensor<S>] {
        &self.params
    }

    fn hyper_params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    fn set_hyper_params(&mut self, params: Vec<Tensor<S>>) -> Result<()> {
        self.params = params;
        self.validate_params()
    }

    fn coefficients_on_graph(
        &self,
        g: &mut Graph<S>,
        param_ids: &[NodeId],
        m: usize,
        stream: &mut Stream,
    ) -> Result<(NodeId, NodeId)> {
        let n_f = self.f_spec.n_tensors();
        let mut f_in = Tensor::zeros(m, 2);
        let mut g_in = Tensor::zeros(m, 2);
        let mut gauss = Tensor::zeros(m, self.d);
        for j in 0..m {
            let noise = SphereNoise::draw(self.d, stream);
            f_in.set(j, 0, noise.shared);
            f_in.set(j, 1, noise.scale);
            for (i, &z) in noise.gaussian.iter().enumerate() {
                gauss.set(j, i, z);
            }
            g_in.set(j, 0, noise.shared);
            g_in.set(j, 1, noise.bias);
        }
        let f_in = g.constant(f_in);
        let g_in = g.constant(g_in);
        let gauss = g.constant(gauss);
        let scales = self.f_spec.forward_on_graph(g, &param_ids[..n_f], f_in)?;
        let weights = g.scale_rows(gauss, scales)?;
        let biases = self.g_spec.forward_on_graph(g, &param_ids[n_f..], g_in)?;
        Ok((weights, biases))
    }
}

// ---------------------------------------------------------------------------
// Coupling-based invariance checks
// ---------------------------------------------------------------------------

pub fn is_permutation(perm: &[usize], d: usize) -> bool {
    if perm.len() != d {
        return false;
    }
    let mut seen = vec![false; d];
    for &p in perm {
        if p >= d || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// All permutations of `0..n`, lexicographic. Intended for small `n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    fn rec(cur: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == cur.len() {
            out.push(cur.clone());
            return;
        }
        for i in k..cur.len() {
            cur.swap(k, i);
            rec(cur, k + 1, out);
            cur.swap(k, i);
        }
    }
    rec(&mut cur, 0, &mut out);
    out.sort();
    out
}

/// Pre-sign score with order-canonical accumulation of per-item terms.
fn canonical_set_score<S: Real>(lc: &LinearClassifier<S>, x: &[S], k: usize) -> Result<S> {
    if x.len() != lc.weights.len() {
        return Err(Error::Shape("input/classifier dimension mismatch".into()));
    }
    let mut terms: Vec<S> = lc
        .weights
        .chunks(k)
        .zip(x.chunks(k))
        .map(|(a, xi)| {
            let mut acc = S::zero();
            for (&av, &xv) in a.iter().zip(xi.iter()) {
                acc = acc + av * xv;
            }
            acc
        })
        .collect();
    Ok(canonical_sum(&mut terms) - lc.bias)
}

/// Exact coupling check for the set classifier: permuting the input chunks
/// together with the item noises leaves the pre-sign score bit-identical.
pub fn rsetc_coupling_check<S: Real>(
    sampler: &RSetC<S>,
    x: &[S],
    perm: &[usize],
    stream: &mut Stream,
) -> Result<bool> {
    if !is_permutation(perm, sampler.d()) {
        return Err(Error::Config("invalid permutation for set size".into()));
    }
    if x.len() != sampler.dim() {
        return Err(Error::Shape("input dimension != d * k".into()));
    }
    let noise = SetNoise::draw(sampler.d(), stream);
    let k = sampler.k();
    let lc = sampler.sample_with_noise(&noise)?;
    let score = canonical_set_score(&lc, x, k)?;

    let permuted_x: Vec<S> = perm
        .iter()
        .flat_map(|&p| x[p * k..(p + 1) * k].iter().copied())
        .collect();
    let lc_p = sampler.sample_with_noise(&noise.permuted(perm))?;
    let score_p = canonical_set_score(&lc_p, &permuted_x, k)?;
    Ok(score == score_p && lc.bias == lc_p.bias)
}

/// Exact coupling check for the graph classifier under a vertex relabeling.
pub fn rgraphc_coupling_check<S: Real>(
    sampler: &RGraphC<S>,
    adjacency: &Tensor<S>,
    perm: &[usize],
    stream: &mut Stream,
) -> Result<bool> {
    let d = sampler.d();
    if !is_permutation(perm, d) {
        return Err(Error::Config("invalid permutation for vertex count".into()));
    }
    if adjacency.shape() != (d, d) {
        return Err(Error::Shape("adjacency shape != d x d".into()));
    }
    let noise = GraphNoise::draw(d, stream);
    let lc = sampler.sample_with_noise(&noise)?;
    let score = canonical_set_score(&lc, adjacency.data(), 1)?;

    let relabeled = Tensor::from_fn(d, d, |i, j| adjacency.get(perm[i], perm[j]));
    let lc_p = sampler.sample_with_noise(&noise.permuted(perm))?;
    let score_p = canonical_set_score(&lc_p, relabeled.data(), 1)?;
    Ok(score == score_p && lc.bias == lc_p.bias)
}

/// Statistical invariance check for the sphere classifier: two-sample
/// Kolmogorov-Smirnov on the pre-sign scores at `x` versus `Q x`, at fixed
/// significance 0.01. Returns `true` when the test does not reject.
pub fn rspherec_invariance_check<S: Real>(
    sampler: &RSphereC<S>,
    x: &[S],
    orthogonal: &Tensor<S>,
    n_draws: usize,
    seed: u64,
) -> Result<bool> {
    let d = sampler.d();
    if x.len() != d || orthogonal.shape() != (d, d) {
        return Err(Error::Shape("dimension mismatch in sphere check".into()));
    }
    if !is_orthogonal(orthogonal) {
        return Err(Error::Config("group element is not orthogonal".into()));
    }
    let rotated: Vec<S> = (0..d)
        .map(|i| {
            let mut acc = S::zero();
            for j in 0..d {
                acc = acc + orthogonal.get(i, j) * x[j];
            }
            acc
        })
        .collect();
    let mut s1 = crate::rlc::derive_stream(seed, 0);
    let mut s2 = crate::rlc::derive_stream(seed, 1);
    let mut a: Vec<S> = (0..n_draws)
        .map(|_| sampler.sample(&mut s1).score(x))
        .collect::<Result<_>>()?;
    let mut b: Vec<S> = (0..n_draws)
        .map(|_| sampler.sample(&mut s2).score(&rotated))
        .collect::<Result<_>>()?;
    Ok(!ks_two_sample_rejects(&mut a, &mut b))
}

fn is_orthogonal<S: Real>(q: &Tensor<S>) -> bool {
    let d = q.rows();
    let tol = S::lit(1e-9);
    for i in 0..d {
        for j in 0..d {
            let mut acc = S::zero();
            for k in 0..d {
                acc = acc + q.get(k, i) * q.get(k, j);
            }
            let expect = if i == j { S::one() } else { S::zero() };
            if (acc - expect).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Two-sample KS at significance 0.01: rejects when
/// `D > 1.628 * sqrt((n + m) / (n m))`.
fn ks_two_sample_rejects<S: Real>(a: &mut [S], b: &mut [S]) -> bool {
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite scores"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite scores"));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d_max = 0.0f64;
    while i < n && j < m {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / n as f64;
        let fb = j as f64 / m as f64;
        d_max = d_max.max((fa - fb).abs());
    }
    let threshold = 1.628 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    d_max > threshold
}

/// Group element for [`coupling_invariance_check`].
pub enum GroupElement<'a, S> {
    Permutation(&'a [usize]),
    Orthogonal(&'a Tensor<S>),
}

/// Sampler wrapper for the kind-dispatched invariance check.
pub enum InvariantSampler<S> {
    Set(RSetC<S>),
    Graph(RGraphC<S>),
    Sphere(RSphereC<S>),
}

/// Dispatches to the exact coupling check for sets and graphs, and to the
/// statistical test for spheres.
pub fn coupling_invariance_check<S: Real>(
    sampler: &InvariantSampler<S>,
    x: &[S],
    group_element: &GroupElement<S>,
    seed: u64,
) -> Result<bool> {
    match (sampler, group_element) {
        (InvariantSampler::Set(s), GroupElement::Permutation(p)) => {
            rsetc_coupling_check(s, x, p, &mut crate::rlc::stream_from_seed(seed))
        }
        (InvariantSampler::Graph(s), GroupElement::Permutation(p)) => {
            let d = s.d();
            let adj = Tensor::from_vec(d, d, x.to_vec())?;
            rgraphc_coupling_check(s, &adj, p, &mut crate::rlc::stream_from_seed(seed))
        }
        (InvariantSampler::Sphere(s), GroupElement::Orthogonal(q)) => {
            rspherec_invariance_check(s, x, q, 10_000, seed)
        }
        _ => Err(Error::Config("group element does not match sampler kind".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rlc::stream_from_seed;
    use rand::SeedableRng;

    /// f ≡ const c, g ≡ 0: single linear layer with zero weights and bias c.
    fn constant_rsetc(d: usize, c: f64) -> RSetC<f64> {
        let f_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let g_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let params = vec![
            Tensor::zeros(2, 1),
            Tensor::from_vec(1, 1, vec![c]).unwrap(),
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
        ];
        RSetC::new(d, 1, f_spec, g_spec, params).unwrap()
    }

    #[test]
    fn constant_f_net_gives_constant_weights() {
        let s = constant_rsetc(4, 2.5);
        let lc = s.sample(&mut stream_from_seed(0));
        assert_eq!(lc.weights, vec![2.5; 4]);
        assert_eq!(lc.bias, 0.0);
    }

    /// f(u, u_i) = u_i: weights are i.i.d. standard normal.
    #[test]
    fn item_noise_passthrough_has_standard_moments() {
        let f_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let g_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let params = vec![
            Tensor::from_vec(2, 1, vec![0.0, 1.0]).unwrap(),
            Tensor::zeros(1, 1),
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
        ];
        let s = RSetC::new(3, 1, f_spec, g_spec, params).unwrap();
        let mut stream = stream_from_seed(42);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for lc in s.sample_batch(n / 3, &mut stream) {
            for w in lc.weights {
                sum += w;
                sum_sq += w * w;
            }
        }
        let count = (n / 3 * 3) as f64;
        let mean = sum / count;
        let var = sum_sq / count - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn rsetc_batch_matches_sequential_sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s: RSetC<f64> = RSetC::init(5, 1, 5, &mut rng).unwrap();
        let batch = s.sample_batch(7, &mut stream_from_seed(3));
        let mut stream = stream_from_seed(3);
        for lc in batch {
            let single = s.sample(&mut stream);
            assert_eq!(lc, single);
        }
    }

    #[test]
    fn rsetc_swap_coupling_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s: RSetC<f64> = RSetC::init(5, 1, 5, &mut rng).unwrap();
        let x = vec![0.3, -1.2, 0.5, 2.0, -0.7];
        // swap items 2 and 3
        let perm = vec![0, 2, 1, 3, 4];
        for seed in 0..20 {
            assert!(rsetc_coupling_check(&s, &x, &perm, &mut stream_from_seed(seed)).unwrap());
        }
    }

    #[test]
    fn rsetc_param_count_independent_of_d() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s: RSetC<f64> = RSetC::init(5, 1, 5, &mut rng).unwrap();
        let p5 = s.param_count();
        let s15 = s.with_set_size(15).unwrap();
        assert_eq!(p5, s15.param_count());
        assert_eq!(s15.dim(), 15);
    }

    /// f ≡ 1 for the graph sampler: the score counts directed adjacency
    /// entries, i.e. 2|E| for a symmetric adjacency.
    #[test]
    fn unit_weights_count_edges_twice() {
        let f_spec = MlpSpec::new(vec![4, 1], Activation::Relu).unwrap();
        let g_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let params = vec![
            Tensor::zeros(4, 1),
            Tensor::from_vec(1, 1, vec![1.0]).unwrap(),
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
        ];
        let s = RGraphC::new(3, f_spec, g_spec, params).unwrap();
        let lc = s.sample(&mut stream_from_seed(0));
        // triangle: 3 edges
        let adj = Tensor::from_vec(
            3,
            3,
            vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        assert_eq!(lc.score(adj.data()).unwrap(), 6.0);
    }

    /// f(u, ., ., e) = e with symmetrized edge noise: weights for (i, j) and
    /// (j, i) coincide.
    #[test]
    fn symmetric_edge_noise_gives_symmetric_weights() {
        let f_spec = MlpSpec::new(vec![4, 1], Activation::Relu).unwrap();
        let g_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let params = vec![
            Tensor::from_vec(4, 1, vec![0.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(1, 1),
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
        ];
        let s = RGraphC::new(4, f_spec, g_spec, params).unwrap();
        let lc = s.sample(&mut stream_from_seed(9));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(lc.weights[i * 4 + j], lc.weights[j * 4 + i]);
            }
        }
    }

    #[test]
    fn rgraphc_relabeling_coupling_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let s: RGraphC<f64> = RGraphC::init(4, 2, 3, &mut rng).unwrap();
        // path 0-1-2-3
        let mut adj = Tensor::zeros(4, 4);
        for (i, j) in [(0, 1), (1, 2), (2, 3)] {
            adj.set(i, j, 1.0);
            adj.set(j, i, 1.0);
        }
        for perm in permutations(4) {
            assert!(
                rgraphc_coupling_check(&s, &adj, &perm, &mut stream_from_seed(17)).unwrap(),
                "failed for {perm:?}"
            );
        }
    }

    #[test]
    fn identity_permutation_always_couples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let s: RSetC<f64> = RSetC::init(4, 1, 3, &mut rng).unwrap();
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert!(rsetc_coupling_check(&s, &x, &[0, 1, 2, 3], &mut stream_from_seed(0)).unwrap());
        assert!(rsetc_coupling_check(&s, &x, &[0, 0, 1, 2], &mut stream_from_seed(0)).is_err());
    }

    /// f ≡ 0 for the sphere sampler: zero weights, prediction sgn(-b).
    #[test]
    fn zero_scale_sphere_weights() {
        let f_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let g_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let params = vec![
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
            Tensor::zeros(2, 1),
            Tensor::from_vec(1, 1, vec![0.5]).unwrap(),
        ];
        let s = RSphereC::new(3, f_spec, g_spec, params).unwrap();
        let lc = s.sample(&mut stream_from_seed(0));
        assert_eq!(lc.weights, vec![0.0; 3]);
        assert_eq!(lc.bias, 0.5);
    }

    fn unit_scale_sphere(d: usize) -> RSphereC<f64> {
        let f_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let g_spec = MlpSpec::new(vec![2, 1], Activation::Relu).unwrap();
        let params = vec![
            Tensor::zeros(2, 1),
            Tensor::from_vec(1, 1, vec![1.0]).unwrap(),
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
        ];
        RSphereC::new(d, f_spec, g_spec, params).unwrap()
    }

    #[test]
    fn sphere_rotation_passes_ks_test() {
        let s = unit_scale_sphere(2);
        // 90-degree rotation
        let q = Tensor::from_vec(2, 2, vec![0.0, -1.0, 1.0, 0.0]).unwrap();
        assert!(rspherec_invariance_check(&s, &[1.0, 0.0], &q, 10_000, 7).unwrap());
        // not orthogonal
        let bad = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(rspherec_invariance_check(&s, &[1.0, 0.0], &bad, 100, 7).is_err());
    }

    #[test]
    fn sphere_p_hat_depends_only_on_norm() {
        let s = unit_scale_sphere(2);
        let m = 100_000;
        let (_, p1) =
            crate::rlc::estimate_limiting(&s, &[1.0, 0.0], m, &mut stream_from_seed(1)).unwrap();
        let (_, p2) =
            crate::rlc::estimate_limiting(&s, &[0.0, 1.0], m, &mut stream_from_seed(2)).unwrap();
        let se = (0.25f64 / m as f64).sqrt();
        assert!((p1 - p2).abs() < 3.0 * se, "{p1} vs {p2}");
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
