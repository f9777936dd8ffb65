//! Adagrad with a cosine-annealed learning rate.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const ADAGRAD_EPS: f64 = 1e-10;

/// Per-parameter accumulated squared gradients.
#[derive(Debug, Clone)]
pub struct AdagradState<S> {
    accum: Vec<Tensor<S>>,
}

impl<S: Real> AdagradState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdagradState {
            accum: params.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    /// `accum += grad^2; param -= lr * grad / (sqrt(accum) + 1e-10)`
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], lr: S) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.accum.len() {
            return Err(Error::Shape("adagrad: parameter/gradient count mismatch".into()));
        }
        let eps = S::lit(ADAGRAD_EPS);
        for ((p, g), a) in params.iter_mut().zip(grads.iter()).zip(self.accum.iter_mut()) {
            p.check_same_shape(g)?;
            for (k, (&gv, av)) in g.data().iter().zip(a.data_mut().iter_mut()).enumerate() {
                *av = *av + gv * gv;
                let upd = lr * gv / (av.sqrt() + eps);
                p.data_mut()[k] = p.data()[k] - upd;
            }
        }
        Ok(())
    }
}

/// `eta(t) = eta0 * (1 + cos(pi * t / total)) / 2` for `t in [0, total]`.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule<S> {
    pub initial_lr: S,
    pub total_epochs: usize,
}

impl<S: Real> CosineSchedule<S> {
    pub fn new(initial_lr: S, total_epochs: usize) -> Result<Self> {
        if total_epochs == 0 {
            return Err(Error::Config("cosine schedule needs total_epochs >= 1".into()));
        }
        Ok(CosineSchedule { initial_lr, total_epochs })
    }

    pub fn lr_at(&self, epoch: usize) -> S {
        if epoch >= self.total_epochs {
            return S::zero();
        }
        let frac = S::lit(epoch as f64) / S::lit(self.total_epochs as f64);
        let half = S::lit(0.5);
        self.initial_lr * (S::one() + (S::PI() * frac).cos()) * half
    }
}
