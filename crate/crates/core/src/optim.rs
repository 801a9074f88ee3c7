//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamKind, ParamSet};
use crate::real::Real;

pub const ADAM_EPS: f64 = 1e-8;

/// One optimizer over several networks sharing a step counter.
///
/// Moments are stored per network, per parameter entry (empty for buffers).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub t: u64,
    pub m: Vec<Vec<Vec<T>>>,
    pub v: Vec<Vec<Vec<T>>>,
}

fn zeros_for<T: Real>(p: &ParamSet<T>) -> Vec<Vec<T>> {
    p.entries()
        .iter()
        .map(|e| match e.kind {
            ParamKind::Trainable => vec![T::zero(); e.data.len()],
            ParamKind::Buffer => Vec::new(),
        })
        .collect()
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, params: &[&ParamSet<T>]) -> Self {
        Adam {
            beta1,
            beta2,
            t: 0,
            m: params.iter().map(|p| zeros_for(p)).collect(),
            v: params.iter().map(|p| zeros_for(p)).collect(),
        }
    }

    /// Applies one update. `params` and `grads` are parallel to the
    /// networks given at construction.
    pub fn step(&mut self, params: &mut [&mut ParamSet<T>], grads: &[&Grads<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract("optimizer called with a different set of networks"));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = lr / bc1;
        for (k, p) in params.iter_mut().enumerate() {
            for (j, e) in p.entries_mut().iter_mut().enumerate() {
                if e.kind != ParamKind::Trainable {
                    continue;
                }
                let g = &grads[k].bufs[j];
                let m = &mut self.m[k][j];
                let v = &mut self.v[k][j];
                if g.len() != e.data.len() || m.len() != e.data.len() {
                    return Err(Error::contract(format!("gradient shape mismatch for `{}`", e.name)));
                }
                for i in 0..g.len() {
                    let gi = g[i].as_f64();
                    let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                    let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                    m[i] = T::lit(mi);
                    v[i] = T::lit(vi);
                    let denom = (vi / bc2).sqrt() + ADAM_EPS;
                    e.data[i] = T::lit(e.data[i].as_f64() - step * mi / denom);
                }
            }
        }
        Ok(())
    }
}
