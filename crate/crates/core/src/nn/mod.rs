//! Small hand-differentiated network building blocks.
//!
//! Every network stores its parameters in one flat `Vec<f64>`; layers hold
//! offsets into it. Gradients use the same layout, which keeps the optimiser,
//! checkpointing and finite-difference checks layer-agnostic.

mod gru;
mod layers;

pub use gru::{Gru, GruCache};
pub use layers::{Conv2d, ConvTranspose2d, Dense};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named contiguous range of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Parameter group used when reporting per-group diagnostics.
    pub group: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, group: &str, name: &str, len: usize) -> usize {
        let offset = self.total;
        self.segments.push(Segment {
            name: format!("{group}.{name}"),
            offset,
            len,
            group: group.to_string(),
        });
        self.total += len;
        offset
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Distinct group names in allocation order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.segments {
            if !out.contains(&s.group) {
                out.push(s.group.clone());
            }
        }
        out
    }
}

/// Fills `params[offset..offset + len]` from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(params: &mut [f64], offset: usize, len: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in &mut params[offset..offset + len] {
        *v = rng.random_range(-a..a);
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adam moment estimates for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() || grad.len() != self.m.len() {
            return Err(Error::config("optimizer, parameter and gradient sizes differ"));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at coordinate {i}")));
        }
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("invalid step size {lr}")));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        if lr == 0.0 {
            // Moments still track the gradient; parameters stay bit-identical.
            for ((m, v), &g) in self.m.iter_mut().zip(&mut self.v).zip(grad) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            }
            return Ok(());
        }
        for ((p, (m, v)), &g) in params.iter_mut().zip(self.m.iter_mut().zip(&mut self.v)).zip(grad) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence("parameters became non-finite".into()));
        }
        Ok(())
    }
}
