//! Gradient-boosted regression trees under squared error.
//!
//! Split thresholds are restricted to training quantiles of each column
//! (at most `max_bins` candidates); the model itself stores raw thresholds.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::discretize::{BinnedMatrix, Discretizer};
use super::features::FeatureMatrix;
use crate::error::{Error, Result};

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub row_subsample: f64,
    /// Fraction of columns considered at each split.
    pub col_subsample: f64,
    pub shrinkage: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 400,
            max_depth: 3,
            row_subsample: 0.4,
            col_subsample: 0.4,
            shrinkage: 0.1,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.row_subsample) || !frac(self.col_subsample) {
            return Err(Error::Config("subsample rates must be in (0, 1]".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) || self.max_depth == 0 || self.max_bins < 2 {
            return Err(Error::Config(
                "shrinkage > 0, max_depth >= 1 and max_bins >= 2 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegNode {
    /// `x[feature] <= threshold` goes to the next node, otherwise to `right`.
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                RegNode::Leaf { value } => return value,
                RegNode::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    /// Rebuilds right-child links from preorder nodes.
    pub fn from_preorder(mut nodes: Vec<RegNode>, n_cols: usize) -> Result<Self> {
        fn close(nodes: &mut [RegNode], i: usize, n_cols: usize) -> Result<usize> {
            match nodes.get(i) {
                None => Err(Error::corrupt("regression tree", "truncated")),
                Some(RegNode::Leaf { value }) if value.is_finite() => Ok(i + 1),
                Some(RegNode::Leaf { .. }) => Err(Error::corrupt("regression tree", "non-finite leaf")),
                Some(&RegNode::Split { feature, threshold, .. }) => {
                    if feature >= n_cols || !threshold.is_finite() {
                        return Err(Error::corrupt("regression tree", format!("bad split at node {i}")));
                    }
                    let r = close(nodes, i + 1, n_cols)?;
                    if let RegNode::Split { right, .. } = &mut nodes[i] {
                        *right = r;
                    }
                    close(nodes, r, n_cols)
                }
            }
        }
        if close(&mut nodes, 0, n_cols)? != nodes.len() {
            return Err(Error::corrupt("regression tree", "trailing nodes"));
        }
        Ok(RegTree { nodes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub n_cols: usize,
    pub base_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegTree>,
}

impl GbdtModel {
    /// Unclipped ensemble sum.
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + self.shrinkage * t.predict(x))
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(0.0, 1.0)
    }

    pub fn train(x: &FeatureMatrix, y: &[f64], cfg: &GbdtConfig) -> Result<Self> {
        Ok(Self::train_traced(x, y, cfg)?.0)
    }

    /// Also returns the training sum of squared errors after each tree.
    pub fn train_traced(x: &FeatureMatrix, y: &[f64], cfg: &GbdtConfig) -> Result<(Self, Vec<f64>)> {
        cfg.validate()?;
        let n = x.n_rows();
        if n == 0 {
            return Err(Error::Empty("training data"));
        }
        if y.len() != n {
            return Err(Error::Arity {
                expected: n,
                got: y.len(),
            });
        }
        let disc = Discretizer::fit(x, cfg.max_bins)?;
        let binned = disc.apply(x)?;
        let base_score = y.iter().sum::<f64>() / n as f64;
        let mut f = vec![base_score; n];
        let mut residual = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_sample = ((cfg.row_subsample * n as f64).round() as usize).clamp(1, n);
        let n_cols_split = ((cfg.col_subsample * x.n_cols() as f64).round() as usize).clamp(1, x.n_cols());
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut sse = Vec::with_capacity(cfg.n_trees);
        for _ in 0..cfg.n_trees {
            for i in 0..n {
                residual[i] = y[i] - f[i];
            }
            let mut rows: Vec<usize> = if n_sample < n {
                let mut r = sample(&mut rng, n, n_sample).into_vec();
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            let mut grower = Grower {
                binned: &binned,
                disc: &disc,
                residual: &residual,
                cfg,
                n_cols_split,
                rng: &mut rng,
                nodes: Vec::new(),
                hist: Vec::new(),
            };
            grower.grow(&mut rows, 0);
            let tree = RegTree { nodes: grower.nodes };
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += cfg.shrinkage * tree.predict(x.row(i));
            }
            sse.push(y.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum());
            trees.push(tree);
        }
        Ok((
            GbdtModel {
                n_cols: x.n_cols(),
                base_score,
                shrinkage: cfg.shrinkage,
                trees,
            },
            sse,
        ))
    }
}

struct Grower<'a> {
    binned: &'a BinnedMatrix,
    disc: &'a Discretizer,
    residual: &'a [f64],
    cfg: &'a GbdtConfig,
    n_cols_split: usize,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<RegNode>,
    hist: Vec<(f64, usize)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: u16,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) {
        let total: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let leaf = RegNode::Leaf {
            value: total / rows.len() as f64,
        };
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            self.nodes.push(leaf);
            return;
        }
        let Some(best) = self.best_split(rows, total) else {
            self.nodes.push(leaf);
            return;
        };
        let mut split = 0;
        for i in 0..rows.len() {
            if self.binned.get(rows[i], best.feature) <= best.bin {
                rows.swap(i, split);
                split += 1;
            }
        }
        // Keep row order stable within each side for reproducible sums.
        rows[..split].sort_unstable();
        rows[split..].sort_unstable();
        let me = self.nodes.len();
        self.nodes.push(RegNode::Split {
            feature: best.feature,
            threshold: self.disc.edges(best.feature)[usize::from(best.bin)],
            right: 0,
        });
        let (left, right) = rows.split_at_mut(split);
        self.grow(left, depth + 1);
        let r = self.nodes.len();
        if let RegNode::Split { right, .. } = &mut self.nodes[me] {
            *right = r;
        }
        self.grow(right, depth + 1);
    }

    fn best_split(&mut self, rows: &[usize], total: f64) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let parent = total * total / n;
        let mut cols = sample(&mut *self.rng, self.binned.n_cols(), self.n_cols_split).into_vec();
        cols.sort_unstable();
        let mut best: Option<BestSplit> = None;
        for col in cols {
            let k = self.binned.cardinality()[col];
            if k < 2 {
                continue;
            }
            self.hist.clear();
            self.hist.resize(k, (0.0, 0));
            for &r in rows {
                let h = &mut self.hist[usize::from(self.binned.get(r, col))];
                h.0 += self.residual[r];
                h.1 += 1;
            }
            let (mut s_left, mut n_left) = (0.0, 0usize);
            for b in 0..k - 1 {
                s_left += self.hist[b].0;
                n_left += self.hist[b].1;
                let n_right = rows.len() - n_left;
                if n_left == 0 || self.hist[b].1 == 0 {
                    continue;
                }
                if n_right == 0 {
                    break;
                }
                let s_right = total - s_left;
                let gain = s_left * s_left / n_left as f64 + s_right * s_right / n_right as f64 - parent;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: col,
                        bin: b as u16,
                    });
                }
            }
        }
        best
    }
}
