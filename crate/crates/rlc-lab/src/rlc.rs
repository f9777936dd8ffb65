//! Randomized linear classifiers: single and majority predictions, limiting
//! and minimum-bias estimation, amplification bounds, and the constructive
//! samplers (sign-network and certificate).

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::scalar::{sgn, Real};

/// Deterministic random stream. Streams for independent units of work are
/// derived from a root seed via [`derive_stream`].
pub type Stream = rand_chacha::ChaCha8Rng;

pub fn stream_from_seed(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Stream for the `index`-th independent task under a root seed.
pub fn derive_stream(root_seed: u64, index: u64) -> Stream {
    let mut s = Stream::seed_from_u64(root_seed);
    s.set_stream(index.wrapping_add(1));
    s
}

/// One sampled linear classifier: weights `a` and bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier<S> {
    pub weights: Vec<S>,
    pub bias: S,
}

impl<S: Real> LinearClassifier<S> {
    pub fn score(&self, x: &[S]) -> Result<S> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "input dim {} vs classifier dim {}",
                x.len(),
                self.weights.len()
            )));
        }
        let mut acc = S::zero();
        for (&a, &xi) in self.weights.iter().zip(x.iter()) {
            acc = acc + a * xi;
        }
        Ok(acc - self.bias)
    }
}

/// `sgn(<a, x> - b)` with `sgn(0) = +1`.
pub fn predict_once<S: Real>(lc: &LinearClassifier<S>, x: &[S]) -> Result<i8> {
    Ok(sgn(lc.score(x)?))
}

/// A seeded generator of [`LinearClassifier`] draws. Draws are i.i.d. given
/// independent stream states; samplers are immutable after construction.
pub trait CoefficientSampler<S: Real> {
    fn dim(&self) -> usize;

    fn sample(&self, stream: &mut Stream) -> LinearClassifier<S>;

    /// `m` draws. Overridden by hypernetwork samplers to batch their MLP
    /// forwards; overrides must consume the stream exactly like `m`
    /// sequential `sample` calls.
    fn sample_batch(&self, m: usize, stream: &mut Stream) -> Vec<LinearClassifier<S>> {
        (0..m).map(|_| self.sample(stream)).collect()
    }
}

/// Majority vote over `m` draws. Ties (even `m`) resolve to `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplifiedPrediction<S> {
    pub votes_plus: usize,
    pub votes_minus: usize,
    pub m: usize,
    pub label: i8,
    pub p_hat: S,
}

pub fn predict_majority<S: Real>(
    sampler: &dyn CoefficientSampler<S>,
    x: &[S],
    m: usize,
    stream: &mut Stream,
) -> Result<AmplifiedPrediction<S>> {
    if m == 0 {
        return Err(Error::Config("predict_majority needs m >= 1".into()));
    }
    let mut votes_plus = 0usize;
    for lc in sampler.sample_batch(m, stream) {
        if predict_once(&lc, x)? == 1 {
            votes_plus += 1;
        }
    }
    let votes_minus = m - votes_plus;
    Ok(AmplifiedPrediction {
        votes_plus,
        votes_minus,
        m,
        label: if votes_plus >= votes_minus { 1 } else { -1 },
        p_hat: S::lit(votes_plus as f64) / S::lit(m as f64),
    })
}

/// Monte-Carlo estimate of the limiting classification: the majority label
/// and the empirical `P(prediction = +1)`. Only ever an estimate; the
/// standard error is `sqrt(p_hat (1 - p_hat) / m)`.
pub fn estimate_limiting<S: Real>(
    sampler: &dyn CoefficientSampler<S>,
    x: &[S],
    m: usize,
    stream: &mut Stream,
) -> Result<(i8, S)> {
    let pred = predict_majority(sampler, x, m, stream)?;
    Ok((pred.label, pred.p_hat))
}

/// Minimum-bias estimate over a finite evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate<S> {
    /// `min_x |p_hat(x) - 0.5|`
    pub epsilon_hat: S,
    /// Per-input margins `|p_hat - 0.5|`, in input order.
    pub margins: Vec<S>,
}

/// Estimates the minimum bias over the given inputs.
///
/// For a ±1-valued prediction `Y`, the total-variation distance to a
/// Rademacher variable is exactly `|P(Y = +1) - 0.5|`, so the per-input
/// margin `|p_hat - 0.5|` is the empirical total-variation distance and the
/// minimum over inputs estimates the minimum bias.
pub fn estimate_min_bias<S: Real>(
    sampler: &dyn CoefficientSampler<S>,
    inputs: &[Vec<S>],
    m: usize,
    stream: &mut Stream,
) -> Result<BiasEstimate<S>> {
    if inputs.is_empty() {
        return Err(Error::Config("estimate_min_bias needs at least one input".into()));
    }
    let half = S::lit(0.5);
    let mut margins = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (_, p_hat) = estimate_limiting(sampler, x, m, stream)?;
        margins.push((p_hat - half).abs());
    }
    let epsilon_hat = margins.iter().copied().fold(S::infinity(), S::min);
    Ok(BiasEstimate { epsilon_hat, margins })
}

/// The two amplification bounds, labeled.
///
/// The source analysis states the exponent as `-2 eps^2 m^2`; the standard
/// Hoeffding bound over `m` i.i.d. votes has exponent `-2 eps^2 m`. Both are
/// reported; empirical checks in this crate use the standard form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoeffdingBound<S> {
    /// `1 - exp(-2 eps^2 m^2)` as printed in the source analysis.
    pub paper_form: S,
    /// `1 - exp(-2 eps^2 m)`, the standard Hoeffding form.
    pub standard_form: S,
}

pub fn hoeffding_bound<S: Real>(epsilon: S, m: usize) -> Result<HoeffdingBound<S>> {
    if epsilon < S::zero() || epsilon > S::lit(0.5) {
        return Err(Error::Config("epsilon must lie in [0, 0.5]".into()));
    }
    if m == 0 {
        return Err(Error::Config("m must be >= 1".into()));
    }
    let two = S::lit(2.0);
    let mf = S::lit(m as f64);
    let e2 = epsilon * epsilon;
    Ok(HoeffdingBound {
        paper_form: S::one() - (-two * e2 * mf * mf).exp(),
        standard_form: S::one() - (-two * e2 * mf).exp(),
    })
}

/// One hidden unit of a sign network `N(x) = sum_j o_j sgn(<w_j, x> - b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignUnit<S> {
    pub w: Vec<S>,
    pub b: S,
    pub o: S,
}

/// Sampler that draws unit `j` with probability `|o_j| / sum |o_j|` and emits
/// `(w_j * sgn(o_j), b_j)`. Its limiting classifier equals `sgn(N(x))`.
pub struct SignNetworkSampler<S> {
    units: Vec<(Vec<S>, S)>,
    cumulative: Vec<S>,
    dim: usize,
}

pub fn from_sign_network<S: Real>(units: &[SignUnit<S>]) -> Result<SignNetworkSampler<S>> {
    if units.is_empty() {
        return Err(Error::Config("sign network needs at least one unit".into()));
    }
    let dim = units[0].w.len();
    if units.iter().any(|u| u.w.len() != dim) {
        return Err(Error::Config("sign network units must share one input dimension".into()));
    }
    let total: S = units.iter().fold(S::zero(), |acc, u| acc + u.o.abs());
    if total <= S::zero() {
        return Err(Error::Config("all-zero output weights in sign network".into()));
    }
    let mut flipped = Vec::with_capacity(units.len());
    let mut cumulative = Vec::with_capacity(units.len());
    let mut acc = S::zero();
    for u in units {
        // Negating the whole affine form flips the unit's sign output, so a
        // unit with negative output weight contributes `sgn(o) sgn(<w,x>-b)`.
        let flip = S::lit(sgn(u.o) as f64);
        flipped.push((u.w.iter().map(|&w| w * flip).collect(), u.b * flip));
        acc = acc + u.o.abs() / total;
        cumulative.push(acc);
    }
    // Guard against rounding leaving the last cumulative slightly below 1.
    if let Some(last) = cumulative.last_mut() {
        *last = S::one();
    }
    Ok(SignNetworkSampler { units: flipped, cumulative, dim })
}

impl<S: Real> CoefficientSampler<S> for SignNetworkSampler<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, stream: &mut Stream) -> LinearClassifier<S> {
        let u: S = stream.gen_range(S::zero()..S::one());
        let j = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.units.len() - 1);
        LinearClassifier { weights: self.units[j].0.clone(), bias: self.units[j].1 }
    }
}

/// Certificate sampler from the inner-product-verifiable construction: draw
/// `t ~ Bernoulli(0.5 + gamma)` and a support vector `s`, and emit
/// `(t * s, t * b)`. With `sgn(0) = +1`, a negative instance is classified
/// correctly with probability exactly `0.5 + gamma`, a positive one with
/// probability `0.5 - gamma + P(<s, x> >= b) * (0.5 + gamma)`.
pub struct CertificateSampler<S> {
    support: Box<dyn Fn(&mut Stream) -> Vec<S> + Send + Sync>,
    threshold: S,
    gamma: S,
    dim: usize,
}

pub fn certificate_sampler<S: Real>(
    support: Box<dyn Fn(&mut Stream) -> Vec<S> + Send + Sync>,
    threshold: S,
    gamma: S,
    dim: usize,
) -> Result<CertificateSampler<S>> {
    if gamma <= S::zero() || gamma >= S::lit(0.5) {
        return Err(Error::Config("gamma must lie in (0, 0.5)".into()));
    }
    Ok(CertificateSampler { support, threshold, gamma, dim })
}

impl<S: Real> CoefficientSampler<S> for CertificateSampler<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, stream: &mut Stream) -> LinearClassifier<S> {
        let u: S = stream.gen_range(S::zero()..S::one());
        let t = u < S::lit(0.5) + self.gamma;
        let s = (self.support)(stream);
        debug_assert_eq!(s.len(), self.dim);
        if t {
            LinearClassifier { weights: s, bias: self.threshold }
        } else {
            LinearClassifier { weights: vec![S::zero(); self.dim], bias: S::zero() }
        }
    }
}

/// Exact success probability of the certificate construction, given the hit
/// probability `P(<s, x> >= b)` under the support distribution.
pub fn certificate_success_probability<S: Real>(gamma: S, hit_probability: S, label: i8) -> S {
    let half = S::lit(0.5);
    if label == 1 {
        half - gamma + hit_probability * (half + gamma)
    } else {
        half + gamma
    }
}

/// Degenerate sampler returning one fixed classifier; handy in tests and as
/// the trivial baseline for amplification checks.
pub struct FixedSampler<S>(pub LinearClassifier<S>);

impl<S: Real> CoefficientSampler<S> for FixedSampler<S> {
    fn dim(&self) -> usize {
        self.0.weights.len()
    }

    fn sample(&self, _stream: &mut Stream) -> LinearClassifier<S> {
        self.0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lc(w: &[f64], b: f64) -> LinearClassifier<f64> {
        LinearClassifier { weights: w.to_vec(), bias: b }
    }

    #[test]
    fn predict_once_examples() {
        assert_eq!(predict_once(&lc(&[1.0, 0.0], 0.0), &[2.0, 5.0]).unwrap(), 1);
        // sgn(0) = +1 convention
        assert_eq!(predict_once(&lc(&[1.0], 3.0), &[3.0]).unwrap(), 1);
        assert_eq!(predict_once(&lc(&[-1.0, 1.0], 0.5), &[1.0, 1.0]).unwrap(), -1);
        assert!(predict_once(&lc(&[1.0], 0.0), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn majority_of_degenerate_sampler() {
        let s = FixedSampler(lc(&[1.0], 0.0));
        let mut stream = stream_from_seed(0);
        let pred = predict_majority(&s, &[5.0], 3, &mut stream).unwrap();
        assert_eq!((pred.votes_plus, pred.votes_minus, pred.label), (3, 0, 1));
        assert_eq!(pred.p_hat, 1.0);
    }

    /// Alternates between +1 and -1 weight on each draw.
    struct Alternating(std::cell::Cell<bool>);
    impl CoefficientSampler<f64> for Alternating {
        fn dim(&self) -> usize {
            1
        }
        fn sample(&self, _stream: &mut Stream) -> LinearClassifier<f64> {
            let flip = self.0.get();
            self.0.set(!flip);
            lc(&[if flip { 1.0 } else { -1.0 }], 0.0)
        }
    }

    #[test]
    fn even_tie_resolves_to_plus_one() {
        let s = Alternating(std::cell::Cell::new(true));
        let mut stream = stream_from_seed(0);
        let pred = predict_majority(&s, &[1.0], 4, &mut stream).unwrap();
        assert_eq!((pred.votes_plus, pred.votes_minus, pred.label), (2, 2, 1));
    }

    #[test]
    fn majority_is_reproducible_per_seed() {
        let units = vec![
            SignUnit { w: vec![0.3, -0.2], b: 0.1, o: 0.7 },
            SignUnit { w: vec![-1.0, 0.4], b: -0.3, o: -0.3 },
        ];
        let s = from_sign_network(&units).unwrap();
        let a = predict_majority(&s, &[0.5, 0.5], 101, &mut stream_from_seed(9)).unwrap();
        let b = predict_majority(&s, &[0.5, 0.5], 101, &mut stream_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn min_bias_of_degenerate_sampler_is_half() {
        let s = FixedSampler(lc(&[1.0], 0.0));
        let mut stream = stream_from_seed(1);
        let est = estimate_min_bias(&s, &[vec![1.0], vec![-1.0]], 100, &mut stream).unwrap();
        assert_eq!(est.epsilon_hat, 0.5);
    }

    /// Fair-coin sampler: symmetric ± flip of a fixed vector, bias 0.
    struct FairCoin;
    impl CoefficientSampler<f64> for FairCoin {
        fn dim(&self) -> usize {
            1
        }
        fn sample(&self, stream: &mut Stream) -> LinearClassifier<f64> {
            let flip: f64 = stream.gen_range(0.0..1.0);
            lc(&[if flip < 0.5 { 1.0 } else { -1.0 }], 0.0)
        }
    }

    #[test]
    fn fair_coin_min_bias_tends_to_zero() {
        let mut stream = stream_from_seed(2);
        let est = estimate_min_bias(&FairCoin, &[vec![1.0]], 100_000, &mut stream).unwrap();
        assert!(est.epsilon_hat < 0.01, "epsilon_hat = {}", est.epsilon_hat);
    }

    #[test]
    fn fair_coin_limiting_p_hat_near_half() {
        let mut stream = stream_from_seed(3);
        let (_, p_hat) = estimate_limiting(&FairCoin, &[1.0], 100_000, &mut stream).unwrap();
        assert!((p_hat - 0.5).abs() < 0.01);
    }

    #[test]
    fn hoeffding_bound_examples() {
        let b = hoeffding_bound(0.1f64, 10).unwrap();
        assert!((b.paper_form - (1.0 - (-2.0f64).exp())).abs() < 1e-12);
        assert!((b.standard_form - (1.0 - (-0.2f64).exp())).abs() < 1e-12);
        let b = hoeffding_bound(0.0f64, 7).unwrap();
        assert_eq!(b.paper_form, 0.0);
        assert_eq!(b.standard_form, 0.0);
        let b = hoeffding_bound(0.5f64, 1).unwrap();
        assert!((b.paper_form - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert!(hoeffding_bound(0.7f64, 1).is_err());
        assert!(hoeffding_bound(0.1f64, 0).is_err());
    }

    #[test]
    fn single_unit_sign_network_is_degenerate() {
        let s = from_sign_network(&[SignUnit { w: vec![1.0], b: 0.0, o: 1.0 }]).unwrap();
        let mut stream = stream_from_seed(0);
        let lc0 = s.sample(&mut stream);
        assert_eq!(lc0.weights, vec![1.0]);
        assert_eq!(lc0.bias, 0.0);
    }

    #[test]
    fn sign_network_draw_frequencies_match_output_weights() {
        let units = vec![
            SignUnit { w: vec![1.0], b: 0.0, o: 0.7 },
            SignUnit { w: vec![-1.0], b: 0.0, o: 0.3 },
        ];
        let s = from_sign_network(&units).unwrap();
        let mut stream = stream_from_seed(5);
        let m = 100_000;
        let mut first = 0usize;
        for _ in 0..m {
            if s.sample(&mut stream).weights[0] > 0.0 {
                first += 1;
            }
        }
        let p = first as f64 / m as f64;
        let se = (0.7f64 * 0.3 / m as f64).sqrt();
        assert!((p - 0.7).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn negative_output_weight_flips_unit() {
        let units = vec![SignUnit { w: vec![2.0, -1.0], b: 0.5, o: -1.0 }];
        let s = from_sign_network(&units).unwrap();
        let lc0 = s.sample(&mut stream_from_seed(0));
        assert_eq!(lc0.weights, vec![-2.0, 1.0]);
        assert_eq!(lc0.bias, -0.5);
        // The draw realizes sgn(o) * sgn(<w,x> - b) on every input.
        for x in [[1.0, 0.0], [0.0, 1.0], [-1.0, 2.0]] {
            let raw: f64 = 2.0 * x[0] - 1.0 * x[1] - 0.5;
            assert_eq!(predict_once(&lc0, &x).unwrap(), -sgn(raw));
        }
    }

    #[test]
    fn all_zero_output_weights_rejected() {
        let units = vec![SignUnit { w: vec![1.0], b: 0.0, o: 0.0 }];
        assert!(from_sign_network(&units).is_err());
    }

    #[test]
    fn certificate_negative_instance_success_rate() {
        // Support: single vector [1]; threshold 1; instance x = [0] (miss).
        // A "negative" instance is classified correctly iff t = 1.
        let sampler = certificate_sampler(
            Box::new(|_: &mut Stream| vec![1.0f64]),
            1.0,
            0.25,
            1,
        )
        .unwrap();
        let mut stream = stream_from_seed(11);
        let m = 100_000;
        let mut correct = 0usize;
        for _ in 0..m {
            let lc0 = sampler.sample(&mut stream);
            if predict_once(&lc0, &[0.0]).unwrap() == -1 {
                correct += 1;
            }
        }
        let p = correct as f64 / m as f64;
        let se = (0.75f64 * 0.25 / m as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn certificate_formula_with_hit_probability_one() {
        // gamma = 0.25, hit probability 1 -> P(correct | y = +1) = 1.
        assert_eq!(certificate_success_probability(0.25f64, 1.0, 1), 1.0);
        assert_eq!(certificate_success_probability(0.25f64, 0.0, -1), 0.75);
    }

    #[test]
    fn certificate_gamma_range_enforced() {
        let mk = |g: f64| {
            certificate_sampler(Box::new(|_: &mut Stream| vec![1.0f64]), 1.0, g, 1)
        };
        assert!(mk(0.0).is_err());
        assert!(mk(0.5).is_err());
        assert!(mk(0.2).is_ok());
    }
}
