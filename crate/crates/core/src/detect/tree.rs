//! ID3 / C5.0-style multiway trees over binned features.

use super::discretize::BinnedMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEPTH: usize = 16;
const MIN_GAIN: f64 = 1e-12;
/// One-sided normal quantile for the usual 25% pruning confidence.
const PRUNE_Z: f64 = 0.6744897501960817;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    InformationGain,
    GainRatio,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::InformationGain => "information_gain",
            Criterion::GainRatio => "gain_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "information_gain" => Some(Criterion::InformationGain),
            "gain_ratio" => Some(Criterion::GainRatio),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub prune: bool,
}

impl TreeConfig {
    /// ID3: information gain, no pruning.
    pub fn id3() -> Self {
        TreeConfig {
            criterion: Criterion::InformationGain,
            max_depth: DEFAULT_MAX_DEPTH,
            prune: false,
        }
    }

    /// C5.0 approximation: gain ratio plus pessimistic-error pruning.
    pub fn c50() -> Self {
        TreeConfig {
            criterion: Criterion::GainRatio,
            max_depth: DEFAULT_MAX_DEPTH,
            prune: true,
        }
    }
}

/// Nodes are stored in preorder; a split's children follow it in order of
/// ascending bin value.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        prob: f64,
        n: usize,
    },
    Split {
        prob: f64,
        n: usize,
        column: usize,
        /// `(bin value, node index)` sorted by bin value.
        children: Vec<(u16, usize)>,
    },
}

impl TreeNode {
    pub fn prob(&self) -> f64 {
        match self {
            TreeNode::Leaf { prob, .. } | TreeNode::Split { prob, .. } => *prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    criterion: Criterion,
    n_cols: usize,
    nodes: Vec<TreeNode>,
}

fn entropy(pos: usize, n: usize) -> f64 {
    if n == 0 || pos == 0 || pos == n {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Upper confidence bound on the error rate of a leaf with `errors` out of `n`.
fn pessimistic_errors(errors: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let z2 = PRUNE_Z * PRUNE_Z;
    let f = errors / n;
    let upper =
        (f + z2 / (2.0 * n) + PRUNE_Z * (f / n - f * f / n + z2 / (4.0 * n * n)).max(0.0).sqrt()) / (1.0 + z2 / n);
    n * upper
}

fn class_weights(y: &[bool]) -> (f64, f64) {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v).count() as f64;
    let w = |m: f64| if m > 0.0 { n / (2.0 * m) } else { 1.0 };
    (w(n - pos), w(pos))
}

struct Candidate {
    column: usize,
    gain: f64,
    ratio: f64,
}

struct Builder<'a> {
    x: &'a BinnedMatrix,
    y: &'a [bool],
    cfg: TreeConfig,
    nodes: Vec<TreeNode>,
    used: Vec<bool>,
    counts: Vec<(usize, usize)>,
    /// Case weights of (negative, positive) rows for pruning; each class sums to n/2.
    weights: (f64, f64),
}

impl Builder<'_> {
    fn best_split(&mut self, rows: &[usize], pos: usize) -> Option<Candidate> {
        let n = rows.len();
        let parent = entropy(pos, n);
        let mut candidates = Vec::new();
        for col in 0..self.x.n_cols() {
            if self.used[col] {
                continue;
            }
            let k = self.x.cardinality()[col];
            self.counts.clear();
            self.counts.resize(k, (0, 0));
            for &r in rows {
                let c = &mut self.counts[usize::from(self.x.get(r, col))];
                c.0 += 1;
                c.1 += usize::from(self.y[r]);
            }
            let mut child = 0.0;
            let mut split_info = 0.0;
            for &(m, p) in self.counts.iter().filter(|c| c.0 > 0) {
                let w = m as f64 / n as f64;
                child += w * entropy(p, m);
                split_info -= w * w.log2();
            }
            let gain = parent - child;
            if gain <= MIN_GAIN || split_info <= MIN_GAIN {
                continue;
            }
            candidates.push(Candidate {
                column: col,
                gain,
                ratio: gain / split_info,
            });
        }
        if candidates.is_empty() {
            return self.lookahead_split(rows, parent);
        }
        match self.cfg.criterion {
            Criterion::InformationGain => candidates
                .into_iter()
                .reduce(|a, b| if b.gain > a.gain { b } else { a }),
            Criterion::GainRatio => {
                // Quinlan's guard: only attributes with at least average gain compete on ratio.
                let mean = candidates.iter().map(|c| c.gain).sum::<f64>() / candidates.len().max(1) as f64;
                candidates
                    .into_iter()
                    .filter(|c| c.gain >= mean - MIN_GAIN)
                    .reduce(|a, b| if b.ratio > a.ratio { b } else { a })
            }
        }
    }

    /// When no single column gains anything (XOR-like structure), picks the
    /// first column of the column pair whose joint split gains the most.
    fn lookahead_split(&mut self, rows: &[usize], parent: f64) -> Option<Candidate> {
        let n = rows.len() as f64;
        let card = self.x.cardinality();
        let free: Vec<usize> = (0..self.x.n_cols()).filter(|&c| !self.used[c] && card[c] > 1).collect();
        let mut best: Option<Candidate> = None;
        let mut keys: Vec<(u32, bool)> = Vec::with_capacity(rows.len());
        for &a in &free {
            for &b in free.iter().filter(|&&b| b != a) {
                keys.clear();
                keys.extend(rows.iter().map(|&r| {
                    let k = u32::from(self.x.get(r, a)) * card[b] as u32 + u32::from(self.x.get(r, b));
                    (k, self.y[r])
                }));
                keys.sort_unstable_by_key(|k| k.0);
                let child: f64 = keys
                    .chunk_by(|p, q| p.0 == q.0)
                    .map(|cell| {
                        let pos = cell.iter().filter(|c| c.1).count();
                        cell.len() as f64 / n * entropy(pos, cell.len())
                    })
                    .sum();
                let gain = parent - child;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate {
                        column: a,
                        gain,
                        ratio: 0.0,
                    });
                }
            }
        }
        best.filter(|c| {
            let mut seen = vec![false; card[c.column]];
            rows.iter()
                .for_each(|&r| seen[usize::from(self.x.get(r, c.column))] = true);
            seen.iter().filter(|&&s| s).count() > 1
        })
    }

    /// Builds the subtree for `rows` and returns its estimated error count
    /// (pessimistic when pruning, resubstitution otherwise).
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> f64 {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        let prob = pos as f64 / n as f64;
        let (wn, wp) = self.weights;
        let (neg_mass, pos_mass) = ((n - pos) as f64 * wn, pos as f64 * wp);
        let leaf_estimate = if self.cfg.prune {
            pessimistic_errors(neg_mass.min(pos_mass), neg_mass + pos_mass)
        } else {
            pos.min(n - pos) as f64
        };
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { prob, n });
        if pos == 0 || pos == n || depth >= self.cfg.max_depth {
            return leaf_estimate;
        }
        let Some(best) = self.best_split(&rows, pos) else {
            return leaf_estimate;
        };
        let mut groups: Vec<(u16, Vec<usize>)> = Vec::new();
        {
            let mut by_bin: Vec<Vec<usize>> = vec![Vec::new(); self.x.cardinality()[best.column]];
            for r in rows {
                by_bin[usize::from(self.x.get(r, best.column))].push(r);
            }
            for (b, g) in by_bin.into_iter().enumerate() {
                if !g.is_empty() {
                    groups.push((b as u16, g));
                }
            }
        }
        self.used[best.column] = true;
        let mut children = Vec::with_capacity(groups.len());
        let mut subtree = 0.0;
        for (bin, g) in groups {
            children.push((bin, self.nodes.len()));
            subtree += self.grow(g, depth + 1);
        }
        self.used[best.column] = false;
        if self.cfg.prune && leaf_estimate <= subtree + 0.1 {
            self.nodes.truncate(me + 1);
            return leaf_estimate;
        }
        self.nodes[me] = TreeNode::Split {
            prob,
            n,
            column: best.column,
            children,
        };
        subtree
    }
}

impl DecisionTree {
    pub fn train(x: &BinnedMatrix, y: &[bool], cfg: TreeConfig) -> Result<Self> {
        if x.n_rows() == 0 {
            return Err(Error::Empty("training data"));
        }
        if y.len() != x.n_rows() {
            return Err(Error::Arity {
                expected: x.n_rows(),
                got: y.len(),
            });
        }
        let mut b = Builder {
            x,
            y,
            cfg,
            nodes: Vec::new(),
            used: vec![false; x.n_cols()],
            counts: Vec::new(),
            weights: class_weights(y),
        };
        b.grow((0..x.n_rows()).collect(), 0);
        Ok(DecisionTree {
            criterion: cfg.criterion,
            n_cols: x.n_cols(),
            nodes: b.nodes,
        })
    }

    pub fn from_nodes(criterion: Criterion, n_cols: usize, nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::corrupt("tree", "no nodes"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if !(0.0..=1.0).contains(&node.prob()) {
                return Err(Error::corrupt("tree", "leaf probability outside [0,1]"));
            }
            if let TreeNode::Split { column, children, .. } = node {
                if *column >= n_cols || children.iter().any(|&(_, c)| c <= i || c >= nodes.len()) {
                    return Err(Error::corrupt("tree", format!("bad split at node {i}")));
                }
            }
        }
        Ok(DecisionTree {
            criterion,
            n_cols,
            nodes,
        })
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { children, .. } => 1 + children.iter().map(|&(_, c)| go(nodes, c)).max().unwrap_or(0),
            }
        }
        go(&self.nodes, 0)
    }

    /// Index of the node where `row` stops: a leaf, or a split that has no
    /// child for the row's bin value.
    pub fn node_for(&self, row: &[u16]) -> usize {
        let mut i = 0;
        while let TreeNode::Split { column, children, .. } = &self.nodes[i] {
            match children.binary_search_by_key(&row[*column], |&(b, _)| b) {
                Ok(k) => i = children[k].1,
                Err(_) => break,
            }
        }
        i
    }

    pub fn predict_binned(&self, row: &[u16]) -> f64 {
        self.nodes[self.node_for(row)].prob()
    }
}

#[cfg(test)]
mod tests {
    use super::super::discretize::Discretizer;
    use super::super::features::FeatureMatrix;
    use super::*;

    fn binned(rows: &[&[f64]]) -> BinnedMatrix {
        let n_cols = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let m = FeatureMatrix::from_rows(n_cols, data, None).unwrap();
        Discretizer::fit(&m, 200).unwrap().apply(&m).unwrap()
    }

    #[test]
    fn pure_labels_single_leaf() {
        let x = binned(&[&[0.0], &[1.0], &[2.0]]);
        for label in [false, true] {
            let t = DecisionTree::train(&x, &[label; 3], TreeConfig::id3()).unwrap();
            assert_eq!(t.nodes().len(), 1);
            assert_eq!(t.predict_binned(x.row(0)), if label { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn xor_needs_depth_two() {
        let x = binned(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let y = [false, true, true, false];
        // Exhaustive oracle: no single column separates XOR, and splitting on
        // both does, so the smallest accurate tree has depth exactly 2.
        for cfg in [
            TreeConfig::id3(),
            TreeConfig {
                prune: false,
                ..TreeConfig::c50()
            },
        ] {
            let t = DecisionTree::train(&x, &y, cfg).unwrap();
            assert_eq!(t.depth(), 2);
            for (i, &label) in y.iter().enumerate() {
                assert_eq!(t.predict_binned(x.row(i)), if label { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_is_error() {
        let x = binned(&[&[0.0]]);
        assert!(DecisionTree::train(&x, &[true, false], TreeConfig::id3()).is_err());
    }

    #[test]
    fn gain_ratio_skips_constant_column() {
        let x = binned(&[&[5.0, 0.0], &[5.0, 1.0], &[5.0, 0.0], &[5.0, 1.0]]);
        let t = DecisionTree::train(&x, &[false, true, false, true], TreeConfig::c50()).unwrap();
        match &t.nodes()[0] {
            TreeNode::Split { column, .. } => assert_eq!(*column, 1),
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn pruning_collapses_noise() {
        // Labels independent of the single column: pruning should keep a leaf.
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i % 4)]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let x = binned(&refs);
        let y: Vec<bool> = (0..40).map(|i| (i * 7 + i / 4) % 5 == 0).collect();
        let pruned = DecisionTree::train(&x, &y, TreeConfig::c50()).unwrap();
        assert_eq!(pruned.nodes().len(), 1);
    }
}
