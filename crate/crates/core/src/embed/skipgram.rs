//! Skip-gram with negative sampling over a walk corpus.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use super::walk::WalkCorpus;
use crate::error::{Error, Result};

fn d_dim() -> usize {
    32
}
fn d_window() -> usize {
    5
}
fn d_negatives() -> usize {
    5
}
fn d_lr() -> f64 {
    0.025
}
fn d_epochs() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_window")]
    pub context_window: usize,
    #[serde(default = "d_negatives")]
    pub negatives_per_positive: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: d_dim(),
            context_window: d_window(),
            negatives_per_positive: d_negatives(),
            learning_rate: d_lr(),
            epochs: d_epochs(),
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.context_window == 0 || self.negatives_per_positive == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "dim, context_window, negatives_per_positive and epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Lane-split dot product; the fixed accumulation order keeps results
/// reproducible while letting the compiler vectorise.
#[inline]
pub(crate) fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); LANES];
    let mut ac = a.chunks_exact(LANES);
    let mut bc = b.chunks_exact(LANES);
    for (x, y) in (&mut ac).zip(&mut bc) {
        let x: &[F; LANES] = x.try_into().expect("chunk");
        let y: &[F; LANES] = y.try_into().expect("chunk");
        for k in 0..LANES {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ac.remainder().iter().zip(bc.remainder()) {
        tail = tail + x * y;
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    s01 + s23 + tail
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<F: Float>(y: &mut [F], a: F, x: &[F]) {
    const LANES: usize = 8;
    let n = y.len().min(x.len());
    let (y, x) = (&mut y[..n], &x[..n]);
    let mut yc = y.chunks_exact_mut(LANES);
    let mut xc = x.chunks_exact(LANES);
    for (yy, xx) in (&mut yc).zip(&mut xc) {
        let yy: &mut [F; LANES] = yy.try_into().expect("chunk");
        let xx: &[F; LANES] = xx.try_into().expect("chunk");
        for k in 0..LANES {
            yy[k] = yy[k] + a * xx[k];
        }
    }
    for (yi, &xi) in yc.into_remainder().iter_mut().zip(xc.remainder()) {
        *yi = *yi + a * xi;
    }
}

#[inline]
fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// `-log σ(x)` without overflow.
#[inline]
fn neg_log_sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Derivative of a target's loss term with respect to the score `u·v`.
///
/// The positive term is `-log σ(s)`, a negative term is `-log σ(-s)`; both
/// have derivative `σ(s) - label`.
#[inline]
pub(crate) fn score_gradient<F: Float>(score: F, label: bool) -> F {
    let target = if label { F::one() } else { F::zero() };
    sigmoid(score) - target
}

/// Loss of one (center, context) pair with its sampled negatives:
/// `-log σ(u_ctx·v) - Σ log σ(-u_neg·v)`.
pub fn pair_loss<F: Float>(center: &[F], context: &[F], negatives: &[&[F]]) -> F {
    let mut loss = neg_log_sigmoid(dot(context, center));
    for neg in negatives {
        loss = loss + neg_log_sigmoid(-dot(neg, center));
    }
    loss
}

/// Analytic gradient of [`pair_loss`] with respect to every vector involved.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient<F> {
    pub center: Vec<F>,
    pub context: Vec<F>,
    pub negatives: Vec<Vec<F>>,
}

pub fn pair_gradient<F: Float>(center: &[F], context: &[F], negatives: &[&[F]]) -> PairGradient<F> {
    let mut g_center = vec![F::zero(); center.len()];
    let targets = std::iter::once((context, true)).chain(negatives.iter().map(|n| (*n, false)));
    let mut per_target = Vec::with_capacity(negatives.len() + 1);
    for (u, label) in targets {
        let g = score_gradient(dot(u, center), label);
        axpy(&mut g_center, g, u);
        per_target.push(center.iter().map(|&c| g * c).collect::<Vec<F>>());
    }
    let context_grad = per_target.remove(0);
    PairGradient {
        center: g_center,
        context: context_grad,
        negatives: per_target,
    }
}

/// Center ("input") and context ("output") vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params<F> {
    pub dim: usize,
    pub center: Vec<F>,
    pub context: Vec<F>,
}

impl<F: Float> Params<F> {
    /// Centers uniform in `[-0.5/dim, 0.5/dim]`, contexts zero.
    pub fn init(n: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0001);
        let half = 0.5 / dim as f64;
        let center = (0..n * dim)
            .map(|_| F::from(rng.gen_range(-half..=half)).expect("representable"))
            .collect();
        Params {
            dim,
            center,
            context: vec![F::zero(); n * dim],
        }
    }

    #[cfg(test)]
    pub fn center_row(&self, i: usize) -> &[F] {
        &self.center[i * self.dim..(i + 1) * self.dim]
    }
}

/// One SGD step on a pair: updates every target's context vector, then the
/// center vector with the accumulated gradient. Returns the pair loss
/// evaluated before the update.
pub(crate) fn sgd_pair<F: Float>(
    params: &mut Params<F>,
    center: usize,
    context: usize,
    negatives: &[u32],
    lr: F,
    scratch: &mut [F],
) -> F {
    let dim = params.dim;
    scratch.iter_mut().for_each(|s| *s = F::zero());
    let v = &params.center[center * dim..(center + 1) * dim];
    // Product of per-target likelihoods; one log per pair instead of one per target.
    let mut likelihood = F::one();
    let targets = std::iter::once((context, true)).chain(negatives.iter().map(|&n| (n as usize, false)));
    for (t, label) in targets {
        let u = &mut params.context[t * dim..(t + 1) * dim];
        let score = dot(u, v);
        let g = score_gradient(score, label);
        likelihood = likelihood * (F::one() - g.abs());
        likelihood = likelihood.max(F::min_positive_value());
        let step = -lr * g;
        axpy(scratch, step, u);
        axpy(u, step, v);
    }
    axpy(&mut params.center[center * dim..(center + 1) * dim], F::one(), scratch);
    -likelihood.ln()
}

/// Unigram^0.75 negative sampler over corpus token counts.
pub(crate) struct NegativeSampler {
    alias: Option<WeightedAliasIndex<f64>>,
}

impl NegativeSampler {
    pub fn new(corpus: &WalkCorpus) -> Self {
        let mut counts = vec![0u64; corpus.nodes().len()];
        for w in corpus.walks() {
            for &t in w {
                counts[t as usize] += 1;
            }
        }
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let alias = if counts.iter().filter(|&&c| c > 0).count() >= 2 {
            WeightedAliasIndex::new(weights).ok()
        } else {
            None
        };
        NegativeSampler { alias }
    }

    /// Fills `out` with negatives different from `positive`. Leaves `out`
    /// empty when the corpus has fewer than two distinct nodes.
    pub fn sample<R: Rng>(&self, positive: usize, k: usize, rng: &mut R, out: &mut Vec<u32>) {
        out.clear();
        let Some(alias) = &self.alias else { return };
        while out.len() < k {
            let n = alias.sample(rng);
            if n != positive {
                out.push(n as u32);
            }
        }
    }
}

/// Number of (center, context) pairs one pass over `walk` produces.
pub(crate) fn pairs_in_walk(len: usize, window: usize) -> u64 {
    (0..len)
        .map(|i| (i.min(window) + (len - 1 - i).min(window)) as u64)
        .sum()
}

/// Learning rate after `done` of `total` pairs: linear from `lr0` to `lr0 / 100`.
#[inline]
pub(crate) fn decayed_lr(lr0: f64, done: u64, total: u64) -> f64 {
    let frac = if total == 0 { 0.0 } else { done as f64 / total as f64 };
    lr0 - (lr0 - lr0 / 100.0) * frac.min(1.0)
}

/// Sequential trainer state shared by the single-worker and distributed paths.
pub(crate) struct Trainer<'a> {
    pub cfg: &'a SkipGramConfig,
    pub sampler: &'a NegativeSampler,
    pub rng: ChaCha8Rng,
    pub done: u64,
    pub total: u64,
    negatives: Vec<u32>,
    scratch: Vec<f32>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a SkipGramConfig, sampler: &'a NegativeSampler, stream: u64, total: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        Trainer {
            cfg,
            sampler,
            rng,
            done: 0,
            total,
            negatives: Vec::with_capacity(cfg.negatives_per_positive),
            scratch: vec![0.0; cfg.dim],
        }
    }

    /// Trains on one walk; returns (summed loss, pair count). When `touched`
    /// is given, every (center, context) row written is flagged in it.
    pub fn train_walk(
        &mut self,
        params: &mut Params<f32>,
        walk: &[u32],
        mut touched: Option<(&mut Vec<bool>, &mut Vec<bool>)>,
    ) -> (f64, u64) {
        let w = self.cfg.context_window;
        let mut loss = 0.0f64;
        let mut pairs = 0u64;
        for (i, &c) in walk.iter().enumerate() {
            let lo = i.saturating_sub(w);
            let hi = (i + w + 1).min(walk.len());
            for (j, &ctx) in walk.iter().enumerate().take(hi).skip(lo) {
                if j == i {
                    continue;
                }
                let lr = decayed_lr(self.cfg.learning_rate, self.done, self.total) as f32;
                self.sampler.sample(
                    ctx as usize,
                    self.cfg.negatives_per_positive,
                    &mut self.rng,
                    &mut self.negatives,
                );
                loss += f64::from(sgd_pair(
                    params,
                    c as usize,
                    ctx as usize,
                    &self.negatives,
                    lr,
                    &mut self.scratch,
                ));
                if let Some((tc, tx)) = touched.as_mut() {
                    tc[c as usize] = true;
                    tx[ctx as usize] = true;
                    for &n in &self.negatives {
                        tx[n as usize] = true;
                    }
                }
                self.done += 1;
                pairs += 1;
            }
        }
        (loss, pairs)
    }
}

/// Vectors plus the per-epoch mean pair loss observed during training.
#[derive(Debug, Clone)]
pub struct TrainedVectors {
    pub dim: usize,
    pub rows: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

pub(crate) fn export(params: &Params<f32>) -> Vec<f64> {
    params.center.iter().map(|&x| f64::from(x)).collect()
}

/// Single-worker SGD over the corpus, `epochs` passes in corpus order.
pub(crate) fn train_sequential(corpus: &WalkCorpus, cfg: &SkipGramConfig) -> Result<TrainedVectors> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("walk corpus"));
    }
    let n = corpus.nodes().len();
    let mut params = Params::<f32>::init(n, cfg.dim, cfg.seed);
    let sampler = NegativeSampler::new(corpus);
    let per_epoch: u64 = corpus.walks().map(|w| pairs_in_walk(w.len(), cfg.context_window)).sum();
    let mut trainer = Trainer::new(cfg, &sampler, 0, per_epoch * cfg.epochs as u64);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (mut loss, mut pairs) = (0.0, 0u64);
        for walk in corpus.walks() {
            let (l, p) = trainer.train_walk(&mut params, walk, None);
            loss += l;
            pairs += p;
        }
        epoch_losses.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
    }
    Ok(TrainedVectors {
        dim: cfg.dim,
        rows: export(&params),
        epoch_losses,
    })
}
