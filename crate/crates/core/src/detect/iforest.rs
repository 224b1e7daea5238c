use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IsoNode {
    /// `right` is the index of the right subtree; the left one starts at the next node.
    Split {
        column: usize,
        value: f64,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// Preorder: a split is followed by its left (`x < value`) subtree, then its right.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoTree {
    pub nodes: Vec<IsoNode>,
}

impl IsoTree {
    fn grow(
        x: &FeatureMatrix,
        rows: &mut [usize],
        depth: usize,
        limit: usize,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<IsoNode>,
    ) {
        if depth >= limit || rows.len() <= 1 {
            nodes.push(IsoNode::Leaf { size: rows.len() });
            return;
        }
        let spread: Vec<(usize, f64, f64)> = (0..x.n_cols())
            .filter_map(|c| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = x.row(r)[c];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((c, lo, hi))
            })
            .collect();
        if spread.is_empty() {
            nodes.push(IsoNode::Leaf { size: rows.len() });
            return;
        }
        let (column, lo, hi) = spread[rng.gen_range(0..spread.len())];
        let mut value = rng.gen_range(lo..hi);
        if value <= lo {
            value = hi;
        }
        let mut split = 0;
        for i in 0..rows.len() {
            if x.row(rows[i])[column] < value {
                rows.swap(i, split);
                split += 1;
            }
        }
        let me = nodes.len();
        nodes.push(IsoNode::Split {
            column,
            value,
            right: 0,
        });
        let (left, right) = rows.split_at_mut(split);
        Self::grow(x, left, depth + 1, limit, rng, nodes);
        let r = nodes.len();
        if let IsoNode::Split { right, .. } = &mut nodes[me] {
            *right = r;
        }
        Self::grow(x, right, depth + 1, limit, rng, nodes);
    }

    /// Path length `h(x)`: edges traversed plus `c(size)` at the leaf.
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[i] {
                IsoNode::Leaf { size } => return depth as f64 + average_path_length(*size),
                IsoNode::Split { column, value, right } => {
                    i = if row[*column] < *value { i + 1 } else { *right };
                    depth += 1;
                }
            }
        }
    }

    /// Rebuilds a tree from preorder `(column, value)` splits and leaf sizes.
    pub fn from_preorder(items: Vec<Result<(usize, f64), usize>>, n_cols: usize) -> Result<Self> {
        let mut nodes: Vec<IsoNode> = items
            .into_iter()
            .map(|it| match it {
                Ok((column, value)) => IsoNode::Split {
                    column,
                    value,
                    right: 0,
                },
                Err(size) => IsoNode::Leaf { size },
            })
            .collect();
        fn close(nodes: &mut [IsoNode], i: usize) -> Result<usize> {
            match nodes.get(i) {
                None => Err(Error::corrupt("isolation tree", "truncated")),
                Some(IsoNode::Leaf { .. }) => Ok(i + 1),
                Some(IsoNode::Split { .. }) => {
                    let r = close(nodes, i + 1)?;
                    if let IsoNode::Split { right, .. } = &mut nodes[i] {
                        *right = r;
                    }
                    close(nodes, r)
                }
            }
        }
        if close(&mut nodes, 0)? != nodes.len() {
            return Err(Error::corrupt("isolation tree", "trailing nodes"));
        }
        let tree = IsoTree { nodes };
        tree.validate(n_cols)?;
        Ok(tree)
    }

    pub fn validate(&self, n_cols: usize) -> Result<()> {
        let mut pending = 1usize;
        for (k, node) in self.nodes.iter().enumerate() {
            if pending == 0 {
                return Err(Error::corrupt("isolation tree", format!("trailing node {k}")));
            }
            match node {
                IsoNode::Split { column, value, right } => {
                    if *column >= n_cols || !value.is_finite() || *right <= k || *right >= self.nodes.len() {
                        return Err(Error::corrupt("isolation tree", format!("bad split at node {k}")));
                    }
                    pending += 1;
                }
                IsoNode::Leaf { .. } => pending -= 1,
            }
        }
        if pending != 0 {
            return Err(Error::corrupt("isolation tree", "truncated"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    pub n_cols: usize,
    pub subsample: usize,
    pub trees: Vec<IsoTree>,
}

impl IsolationForest {
    pub fn train(x: &FeatureMatrix, n_trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        if x.n_rows() < 2 {
            return Err(Error::Config("isolation forest needs at least 2 rows".into()));
        }
        if n_trees == 0 || subsample < 2 {
            return Err(Error::Config(
                "isolation forest needs n_trees >= 1 and subsample >= 2".into(),
            ));
        }
        let psi = subsample.min(x.n_rows());
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..n_trees)
            .map(|_| {
                let mut rows = sample(&mut rng, x.n_rows(), psi).into_vec();
                let mut nodes = Vec::new();
                IsoTree::grow(x, &mut rows, 0, limit, &mut rng, &mut nodes);
                IsoTree { nodes }
            })
            .collect();
        Ok(IsolationForest {
            n_cols: x.n_cols(),
            subsample: psi,
            trees,
        })
    }

    pub fn mean_path_length(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(-E[h(x)] / c(ψ))`; higher is more anomalous.
    pub fn score(&self, row: &[f64]) -> f64 {
        (-self.mean_path_length(row) / average_path_length(self.subsample)).exp2()
    }
}
