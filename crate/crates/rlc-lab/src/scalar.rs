//! Scalar abstraction. All numeric code is generic over [`Real`], with
//! `f64` as the default instantiation (see the aliases at the crate root).

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumCast};
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float + FloatConst + SampleUniform + NumCast + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only on values unrepresentable
    /// even approximately (never for finite inputs).
    fn lit(v: f64) -> Self {
        NumCast::from(v).expect("finite literal")
    }

    fn to_f64(self) -> f64 {
        NumCast::from(self).expect("finite scalar")
    }

    /// One standard-normal draw.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw uniform in `[-half_width, half_width]`.
    fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: Self) -> Self {
        rng.gen_range(-half_width..=half_width)
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Sign with the `sgn(0) = +1` convention, applied everywhere in the crate.
pub fn sgn<S: Real>(v: S) -> i8 {
    if v >= S::zero() {
        1
    } else {
        -1
    }
}

/// Sums terms in an order that depends only on the multiset of values, not on
/// their original ordering. Sorting by total order before accumulating makes
/// permutation-coupled scores and pooled sums bit-identical.
pub fn canonical_sum<S: Real>(terms: &mut [S]) -> S {
    terms.sort_by(|a, b| a.partial_cmp(b).expect("finite terms"));
    let mut acc = S::zero();
    for &t in terms.iter() {
        acc = acc + t;
    }
    acc
}

/// Dot product accumulated as a canonical sum over `n_chunks` equal
/// contiguous chunks (left-to-right within each chunk). Swapping whole
/// chunks of both operands together leaves the result bit-identical, which
/// is what the set-classifier noise coupling permutes.
pub fn chunked_dot<S: Real>(x: &[S], a: &[S], n_chunks: usize) -> S {
    debug_assert_eq!(x.len(), a.len());
    debug_assert!(n_chunks >= 1 && x.len() % n_chunks == 0);
    let chunk = x.len() / n_chunks;
    if n_chunks == 1 {
        let mut acc = S::zero();
        for (&xv, &av) in x.iter().zip(a.iter()) {
            acc = acc + xv * av;
        }
        return acc;
    }
    let mut partials: Vec<S> = x
        .chunks(chunk)
        .zip(a.chunks(chunk))
        .map(|(xc, ac)| {
            let mut acc = S::zero();
            for (&xv, &av) in xc.iter().zip(ac.iter()) {
                acc = acc + xv * av;
            }
            acc
        })
        .collect();
    canonical_sum(&mut partials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgn_zero_is_plus_one() {
        assert_eq!(sgn(0.0f64), 1);
        assert_eq!(sgn(-0.0f64), 1);
        assert_eq!(sgn(3.5f64), 1);
        assert_eq!(sgn(-1e-300f64), -1);
    }

    #[test]
    fn canonical_sum_is_order_independent() {
        let mut a = vec![0.1f64, 0.7, -0.3, 1e-9, 2.0];
        let mut b = vec![2.0f64, -0.3, 0.1, 0.7, 1e-9];
        assert_eq!(canonical_sum(&mut a).to_bits(), canonical_sum(&mut b).to_bits());
    }

    #[test]
    fn chunked_dot_is_chunk_permutation_invariant() {
        let x = [0.1f64, 0.7, -0.3, 1e-9, 2.0, -1.1];
        let a = [1.3f64, -0.2, 0.9, 4.0, -0.8, 0.05];
        // swap chunks 0 and 2 (chunk size 2) in both operands
        let xp = [2.0f64, -1.1, -0.3, 1e-9, 0.1, 0.7];
        let ap = [-0.8f64, 0.05, 0.9, 4.0, 1.3, -0.2];
        assert_eq!(
            chunked_dot(&x, &a, 3).to_bits(),
            chunked_dot(&xp, &ap, 3).to_bits()
        );
        // single chunk degenerates to the plain left-to-right dot
        let plain: f64 = x.iter().zip(a.iter()).map(|(u, v)| u * v).sum();
        assert_eq!(chunked_dot(&x, &a, 1), plain);
    }
}
