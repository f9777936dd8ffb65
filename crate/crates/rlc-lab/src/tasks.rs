//! Synthetic tasks: sorting and sign labels on Gaussian sets, G(n, p)
//! connectivity on graphs, exact labeling oracles, spanning-tree enumeration
//! for the inner-product certificate, and the line-oriented dataset format.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rlc::{derive_stream, Stream};
use crate::scalar::{sgn, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetTask {
    Sorting,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Sorting,
    Sign,
    Connectivity,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sorting => "sorting",
            TaskKind::Sign => "sign",
            TaskKind::Connectivity => "connectivity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sorting" => Ok(TaskKind::Sorting),
            "sign" => Ok(TaskKind::Sign),
            "connectivity" => Ok(TaskKind::Connectivity),
            other => Err(Error::Parse(format!("unknown task kind `{other}`"))),
        }
    }
}

impl From<SetTask> for TaskKind {
    fn from(t: SetTask) -> Self {
        match t {
            SetTask::Sorting => TaskKind::Sorting,
            SetTask::Sign => TaskKind::Sign,
        }
    }
}

/// A labeled dataset. For set tasks each row is the `d` items; for
/// connectivity each row is the vectorized `n x n` adjacency (both
/// directions of every edge set to 1, zero diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub kind: TaskKind,
    /// Set size `d` or vertex count `n`.
    pub size: usize,
    /// `n_samples x dim` where `dim = d` for sets and `n^2` for graphs.
    pub inputs: Tensor<S>,
    pub labels: Vec<i8>,
}

impl<S: Real> Dataset<S> {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn row(&self, i: usize) -> &[S] {
        self.inputs.row(i)
    }

    /// Fraction of `+1` labels.
    pub fn base_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let plus = self.labels.iter().filter(|&&l| l == 1).count();
        plus as f64 / self.labels.len() as f64
    }

    /// Recovers the `n x n` adjacency of a connectivity row.
    pub fn adjacency(&self, i: usize) -> Result<Tensor<S>> {
        if self.kind != TaskKind::Connectivity {
            return Err(Error::Usage("adjacency() on a set dataset".into()));
        }
        Tensor::from_vec(self.size, self.size, self.row(i).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 1000, validation: 100, test: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<S> {
    pub train: Dataset<S>,
    pub validation: Dataset<S>,
    pub test: Dataset<S>,
}

// ---------------------------------------------------------------------------
// Labeling oracles
// ---------------------------------------------------------------------------

fn require_odd(d: usize) -> Result<()> {
    if d == 0 || d % 2 == 0 {
        return Err(Error::Config(format!("set size must be odd and positive, got {d}")));
    }
    Ok(())
}

/// Sorting label: sort ascending and return `sgn(sum_i (-1)^(i+1) sorted_i)`.
/// Requires odd `d`; the alternating inner product on an even-length sorted
/// vector is a different task.
pub fn label_sorting<S: Real>(x: &[S]) -> Result<i8> {
    require_odd(x.len())?;
    Ok(label_sorting_unchecked(x))
}

/// Same rule without the odd-size restriction; used for the out-of-
/// distribution test sets of doubled (hence even) size.
pub fn label_sorting_unchecked<S: Real>(x: &[S]) -> i8 {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite inputs"));
    let mut score = S::zero();
    for (i, &v) in sorted.iter().enumerate() {
        score = if i % 2 == 0 { score + v } else { score - v };
    }
    sgn(score)
}

/// Sign label: the majority sign of the coordinates,
/// `sgn(sum_i sgn(x_i))`. Requires odd `d` so the inner sum cannot be zero.
pub fn label_sign<S: Real>(x: &[S]) -> Result<i8> {
    require_odd(x.len())?;
    Ok(label_sign_unchecked(x))
}

/// Same rule without the odd-size restriction; an even split resolves to
/// `+1` via the global `sgn(0) = +1` convention.
pub fn label_sign_unchecked<S: Real>(x: &[S]) -> i8 {
    let mut total = 0i64;
    for &v in x {
        total += sgn(v) as i64;
    }
    if total >= 0 {
        1
    } else {
        -1
    }
}

fn set_label<S: Real>(task: SetTask, x: &[S]) -> i8 {
    match task {
        SetTask::Sorting => label_sorting_unchecked(x),
        SetTask::Sign => label_sign_unchecked(x),
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

fn gen_set_part<S: Real>(task: SetTask, d: usize, n: usize, stream: &mut Stream) -> Dataset<S> {
    let mut inputs = Tensor::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..d {
            inputs.set(i, j, S::standard_normal(stream));
        }
        labels.push(set_label(task, inputs.row(i)));
    }
    Dataset { kind: task.into(), size: d, inputs, labels }
}

/// Train/validation/test split of i.i.d. standard-normal sets labeled by the
/// task oracle. Each part uses its own stream derived from the seed, so
/// resizing one part does not shift the others.
pub fn gen_set_dataset<S: Real>(
    task: SetTask,
    d: usize,
    sizes: SplitSizes,
    seed: u64,
) -> Result<Split<S>> {
    require_odd(d)?;
    Ok(Split {
        train: gen_set_part(task, d, sizes.train, &mut derive_stream(seed, 0)),
        validation: gen_set_part(task, d, sizes.validation, &mut derive_stream(seed, 1)),
        test: gen_set_part(task, d, sizes.test, &mut derive_stream(seed, 2)),
    })
}

/// Out-of-distribution test set at a different (possibly even) set size,
/// labeled by the unchecked oracle.
pub fn gen_set_ood_test<S: Real>(
    task: SetTask,
    d: usize,
    n_samples: usize,
    seed: u64,
) -> Dataset<S> {
    gen_set_part(task, d, n_samples, &mut derive_stream(seed, 3))
}

/// Default edge probability for the connectivity task: `1.1 ln(n) / n`.
pub fn default_edge_probability(n: usize) -> f64 {
    1.1 * (n as f64).ln() / n as f64
}

/// One G(n, p) draw as a symmetric 0/1 adjacency with zero diagonal.
pub fn gen_gnp<S: Real>(n: usize, p: f64, stream: &mut Stream) -> Result<Tensor<S>> {
    if n < 2 {
        return Err(Error::Config("gen_gnp needs n >= 2".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config("edge probability must lie in [0, 1]".into()));
    }
    use rand::Rng;
    let mut adj = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if stream.gen_range(0.0..1.0) < p {
                adj.set(i, j, S::one());
                adj.set(j, i, S::one());
            }
        }
    }
    Ok(adj)
}

/// Connectivity label: `+1` iff the graph has a single connected component.
/// Union-find over the edges; an independent breadth-first oracle lives in
/// the tests.
pub fn is_connected<S: Real>(adjacency: &Tensor<S>) -> Result<i8> {
    let n = adjacency.rows();
    if n == 0 || adjacency.cols() != n {
        return Err(Error::Shape("is_connected expects a nonempty square adjacency".into()));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut components = n;
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency.get(i, j) != S::zero() {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                    components -= 1;
                }
            }
        }
    }
    Ok(if components == 1 { 1 } else { -1 })
}

fn gen_graph_part<S: Real>(n: usize, p: f64, count: usize, stream: &mut Stream) -> Result<Dataset<S>> {
    let mut inputs = Tensor::zeros(count, n * n);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let adj = gen_gnp::<S>(n, p, stream)?;
        labels.push(is_connected(&adj)?);
        inputs.data_mut()[i * n * n..(i + 1) * n * n].copy_from_slice(adj.data());
    }
    Ok(Dataset { kind: TaskKind::Connectivity, size: n, inputs, labels })
}

/// Connectivity split: G(n, 1.1 ln(n)/n) samples labeled by [`is_connected`].
/// No class rebalancing; the constant-classifier baseline makes imbalance
/// visible instead.
pub fn gen_connectivity_dataset<S: Real>(
    n: usize,
    sizes: SplitSizes,
    seed: u64,
) -> Result<Split<S>> {
    if n < 3 {
        return Err(Error::Config("connectivity task needs n >= 3".into()));
    }
    let p = default_edge_probability(n);
    Ok(Split {
        train: gen_graph_part(n, p, sizes.train, &mut derive_stream(seed, 0))?,
        validation: gen_graph_part(n, p, sizes.validation, &mut derive_stream(seed, 1))?,
        test: gen_graph_part(n, p, sizes.test, &mut derive_stream(seed, 2))?,
    })
}

// ---------------------------------------------------------------------------
// Spanning trees and the connectivity certificate
// ---------------------------------------------------------------------------

/// Inner-product threshold for the spanning-tree certificate on `n` vertices.
/// A spanning tree has `n - 1` edges and the vectorized adjacency counts each
/// edge in both `(i, j)` and `(j, i)`, so a full hit scores exactly
/// `2 (n - 1)`.
pub fn certificate_threshold<S: Real>(n: usize) -> S {
    S::lit(2.0 * (n as f64 - 1.0))
}

/// All spanning trees of the given graph as vectorized symmetric 0/1
/// adjacencies in `R^(n^2)`. Brute force over `(n-1)`-edge subsets; limited
/// to `n <= 6`. Disconnected graphs yield an empty list.
pub fn enumerate_spanning_trees<S: Real>(adjacency: &Tensor<S>) -> Result<Vec<Vec<S>>> {
    let n = adjacency.rows();
    if n == 0 || adjacency.cols() != n {
        return Err(Error::Shape("expected a nonempty square adjacency".into()));
    }
    if n > 6 {
        return Err(Error::Config("spanning-tree enumeration is limited to n <= 6".into()));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency.get(i, j) != S::zero() {
                edges.push((i, j));
            }
        }
    }
    let want = n - 1;
    if edges.len() < want {
        return Ok(Vec::new());
    }
    let mut trees = Vec::new();
    let mut choice = Vec::with_capacity(want);
    enumerate_subsets(&edges, want, 0, &mut choice, &mut |subset| {
        if spans(n, subset) {
            let mut vec_adj = vec![S::zero(); n * n];
            for &(i, j) in subset {
                vec_adj[i * n + j] = S::one();
                vec_adj[j * n + i] = S::one();
            }
            trees.push(vec_adj);
        }
    });
    Ok(trees)
}

fn enumerate_subsets<F: FnMut(&[(usize, usize)])>(
    edges: &[(usize, usize)],
    want: usize,
    start: usize,
    choice: &mut Vec<(usize, usize)>,
    visit: &mut F,
) {
    if choice.len() == want {
        visit(choice);
        return;
    }
    let remaining = want - choice.len();
    for k in start..edges.len() {
        if edges.len() - k < remaining {
            break;
        }
        choice.push(edges[k]);
        enumerate_subsets(edges, want, k + 1, choice, visit);
        choice.pop();
    }
}

/// `n - 1` edges span `n` vertices iff they connect everything (then they
/// are automatically acyclic).
fn spans(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut components = n;
    for &(i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            components -= 1;
        }
    }
    components == 1
}

/// All labeled trees on `n` vertices (the certificate set for connectivity):
/// the spanning trees of the complete graph, `n^(n-2)` of them.
pub fn all_labeled_trees<S: Real>(n: usize) -> Result<Vec<Vec<S>>> {
    let complete = Tensor::from_fn(n, n, |i, j| if i == j { S::zero() } else { S::one() });
    enumerate_spanning_trees(&complete)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Writes the line format: header `kind d n_samples`, then one sample per
/// line. Set rows are the `d` items; graph rows are the strict upper
/// triangle of the adjacency, row-major. The ±1 label ends each line.
pub fn write_dataset<S: Real, W: Write>(ds: &Dataset<S>, w: &mut W) -> Result<()> {
    writeln!(w, "{} {} {}", ds.kind.name(), ds.size, ds.n_samples())?;
    for i in 0..ds.n_samples() {
        let row = ds.row(i);
        match ds.kind {
            TaskKind::Sorting | TaskKind::Sign => {
                for &v in row {
                    write!(w, "{} ", v.to_f64())?;
                }
            }
            TaskKind::Connectivity => {
                let n = ds.size;
                for a in 0..n {
                    for b in (a + 1)..n {
                        write!(w, "{} ", row[a * n + b].to_f64())?;
                    }
                }
            }
        }
        writeln!(w, "{}", ds.labels[i])?;
    }
    Ok(())
}

pub fn read_dataset<S: Real, R: BufRead>(r: &mut R) -> Result<Dataset<S>> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut parts = header.split_whitespace();
    let kind = TaskKind::parse(parts.next().ok_or_else(|| Error::Parse("empty header".into()))?)?;
    let size: usize = parse_field(parts.next(), "size")?;
    let n_samples: usize = parse_field(parts.next(), "sample count")?;

    let dim = match kind {
        TaskKind::Sorting | TaskKind::Sign => size,
        TaskKind::Connectivity => size * size,
    };
    let row_values = match kind {
        TaskKind::Sorting | TaskKind::Sign => size,
        TaskKind::Connectivity => size * (size - 1) / 2,
    };

    let mut inputs = Tensor::zeros(n_samples, dim);
    let mut labels = Vec::with_capacity(n_samples);
    let mut line = String::new();
    for i in 0..n_samples {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Parse(format!("expected {n_samples} samples, got {i}")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != row_values + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} values + label, got {}",
                i + 2,
                row_values,
                fields.len()
            )));
        }
        match kind {
            TaskKind::Sorting | TaskKind::Sign => {
                for (j, f) in fields[..row_values].iter().enumerate() {
                    inputs.set(i, j, parse_scalar(f)?);
                }
            }
            TaskKind::Connectivity => {
                let n = size;
                let mut it = fields[..row_values].iter();
                for a in 0..n {
                    for b in (a + 1)..n {
                        let v: S = parse_scalar(it.next().unwrap())?;
                        inputs.set(i, a * n + b, v);
                        inputs.set(i, b * n + a, v);
                    }
                }
            }
        }
        let label: i64 = fields[row_values]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad label", i + 2)))?;
        if label != 1 && label != -1 {
            return Err(Error::Parse(format!("line {}: label must be ±1", i + 2)));
        }
        labels.push(label as i8);
    }
    Ok(Dataset { kind, size, inputs, labels })
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, name: &str) -> Result<T> {
    field
        .ok_or_else(|| Error::Parse(format!("missing {name} in header")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} in header")))
}

fn parse_scalar<S: Real>(s: &str) -> Result<S> {
    let v: f64 = s.parse().map_err(|_| Error::Parse(format!("bad float `{s}`")))?;
    Ok(S::lit(v))
}
