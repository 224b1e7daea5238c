//! L1-regularised logistic regression over one-hot bin indicators, trained
//! by full-batch proximal gradient descent.
//!
//! The optimiser works on centred indicators and a rescaled intercept. Both
//! are exact reparametrisations: the intercept is unpenalised, so the
//! optimum and the objective at every iterate are those of the plain
//! problem, but the step 1/L no longer has to cover the all-ones direction.

use super::discretize::BinnedMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_L1: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 300;
const POWER_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// First indicator index of each column.
    pub offsets: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l1: f64,
    pub iterations: usize,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn offsets_for(x: &BinnedMatrix) -> Vec<usize> {
    let mut acc = 0;
    x.cardinality()
        .iter()
        .map(|&k| {
            let o = acc;
            acc += k;
            o
        })
        .collect()
}

struct Design<'a> {
    x: &'a BinnedMatrix,
    offsets: Vec<usize>,
    n_features: usize,
    /// Fraction of rows carrying each indicator.
    mean: Vec<f64>,
}

impl Design<'_> {
    #[inline]
    fn margin(&self, row: usize, w: &[f64], b: f64) -> f64 {
        let mut z = b;
        for (c, &o) in self.offsets.iter().enumerate() {
            z += w[o + usize::from(self.x.get(row, c))];
        }
        z
    }

    fn shift(&self, w: &[f64]) -> f64 {
        self.mean.iter().zip(w).map(|(m, w)| m * w).sum()
    }

    /// `Σ_r u_r (x_r − mean)` into `out`.
    fn centred_transpose(&self, u: impl Fn(usize) -> f64, out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for r in 0..self.x.n_rows() {
            let ur = u(r);
            for (c, &o) in self.offsets.iter().enumerate() {
                out[o + usize::from(self.x.get(r, c))] += ur;
            }
            total += ur;
        }
        for (g, m) in out.iter_mut().zip(&self.mean) {
            *g -= m * total;
        }
        total
    }

    /// Largest eigenvalue of `AᵀA` for the centred indicator matrix `A`, by power iteration.
    fn gram_spectral_norm(&self) -> f64 {
        let mut v = vec![1.0; self.n_features];
        // Start off the null space: centred indicators of one column sum to zero.
        for (i, x) in v.iter_mut().enumerate() {
            *x += (i % 7) as f64 * 0.1;
        }
        let mut next = vec![0.0; self.n_features];
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let shift = self.shift(&v);
            self.centred_transpose(|r| self.margin(r, &v, -shift), &mut next);
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            let prev = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm / prev;
            if norm == 0.0 {
                break;
            }
            v.iter_mut().zip(&next).for_each(|(v, x)| *v = x / norm);
        }
        lambda
    }

    fn objective(&self, y: &[bool], w: &[f64], b: f64, l1: f64) -> f64 {
        let loss: f64 = (0..self.x.n_rows())
            .map(|r| {
                let z = self.margin(r, w, b);
                softplus(z) - if y[r] { z } else { 0.0 }
            })
            .sum();
        loss + l1 * w.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Trained model plus the objective before each iteration and after the last.
#[derive(Debug, Clone)]
pub struct LrFit {
    pub model: LinearModel,
    pub objective: Vec<f64>,
}

impl LinearModel {
    /// Minimises `Σ logloss + l1·‖w‖₁` (bias unpenalised) for exactly `iterations` steps.
    pub fn train(x: &BinnedMatrix, y: &[bool], l1: f64, iterations: usize) -> Result<Self> {
        Ok(Self::train_traced(x, y, l1, iterations, false)?.model)
    }

    pub fn train_traced(x: &BinnedMatrix, y: &[bool], l1: f64, iterations: usize, trace: bool) -> Result<LrFit> {
        if x.n_rows() == 0 {
            return Err(Error::Empty("training data"));
        }
        if y.len() != x.n_rows() {
            return Err(Error::Arity {
                expected: x.n_rows(),
                got: y.len(),
            });
        }
        if !(l1.is_finite() && l1 >= 0.0) {
            return Err(Error::Config("l1 must be finite and >= 0".into()));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::DegenerateLabels);
        }
        let offsets = offsets_for(x);
        let n_features: usize = x.cardinality().iter().sum();
        let n = x.n_rows() as f64;
        let mut mean = vec![0.0; n_features];
        for r in 0..x.n_rows() {
            for (c, &o) in offsets.iter().enumerate() {
                mean[o + usize::from(x.get(r, c))] += 1.0;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let d = Design {
            x,
            offsets,
            n_features,
            mean,
        };
        // The intercept column is the constant `scale`, chosen so its
        // curvature matches the largest one of the centred indicators.
        let lambda = d.gram_spectral_norm().max(f64::MIN_POSITIVE);
        let scale = (lambda / n).sqrt();
        let step = 1.0 / (0.25 * lambda * 1.05);

        let mut w = vec![0.0; n_features];
        let mut beta = 0.0;
        let bias = |w: &[f64], beta: f64| scale * beta - d.shift(w);
        let mut grad = vec![0.0; n_features];
        let mut objective = Vec::new();
        for _ in 0..iterations {
            if trace {
                objective.push(d.objective(y, &w, bias(&w, beta), l1));
            }
            let b = bias(&w, beta);
            let total = d.centred_transpose(
                |r| sigmoid(d.margin(r, &w, b)) - if y[r] { 1.0 } else { 0.0 },
                &mut grad,
            );
            for (wi, &g) in w.iter_mut().zip(&grad) {
                *wi = soft_threshold(*wi - step * g, step * l1);
            }
            beta -= step * scale * total;
        }
        let b = bias(&w, beta);
        if trace {
            objective.push(d.objective(y, &w, b, l1));
        }
        Ok(LrFit {
            model: LinearModel {
                offsets: d.offsets,
                weights: w,
                bias: b,
                l1,
                iterations,
            },
            objective,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.offsets.len()
    }

    pub fn predict_binned(&self, row: &[u16]) -> f64 {
        let z = self.offsets.iter().zip(row).fold(self.bias, |z, (&o, &bin)| {
            // Bins beyond the trained cardinality never occur for rows from the same discretizer.
            z + self.weights.get(o + usize::from(bin)).copied().unwrap_or(0.0)
        });
        sigmoid(z)
    }
}
