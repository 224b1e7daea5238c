use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::discretize::{Discretizer, DEFAULT_BINS};
use super::features::FeatureMatrix;
use super::gbdt::{GbdtConfig, GbdtModel, RegNode, RegTree};
use super::iforest::{IsoNode, IsoTree, IsolationForest, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
use super::lr::{LinearModel, DEFAULT_ITERATIONS, DEFAULT_L1};
use super::tree::{Criterion, DecisionTree, TreeConfig, TreeNode, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};

const MAGIC: &str = "titant-model 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Id3,
    C50,
    IsolationForest,
    LogisticRegression,
    Gbdt,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::Id3,
        DetectorKind::C50,
        DetectorKind::IsolationForest,
        DetectorKind::LogisticRegression,
        DetectorKind::Gbdt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Id3 => "id3",
            DetectorKind::C50 => "c50",
            DetectorKind::IsolationForest => "isolation_forest",
            DetectorKind::LogisticRegression => "logistic_regression",
            DetectorKind::Gbdt => "gbdt",
        }
    }

    /// Whether the detector consumes discretised features.
    pub fn needs_discretizer(self) -> bool {
        matches!(
            self,
            DetectorKind::Id3 | DetectorKind::C50 | DetectorKind::LogisticRegression
        )
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown detector {s:?}")))
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn d_bins() -> usize {
    DEFAULT_BINS
}
fn d_depth() -> usize {
    DEFAULT_MAX_DEPTH
}
fn d_if_trees() -> usize {
    DEFAULT_TREES
}
fn d_if_subsample() -> usize {
    DEFAULT_SUBSAMPLE
}
fn d_l1() -> f64 {
    DEFAULT_L1
}
fn d_iters() -> usize {
    DEFAULT_ITERATIONS
}
fn d_gbdt_trees() -> usize {
    400
}
fn d_gbdt_depth() -> usize {
    3
}
fn d_subsample() -> f64 {
    0.4
}
fn d_shrinkage() -> f64 {
    0.1
}

/// Hyperparameters for every family; fields irrelevant to `kind` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    #[serde(default = "d_bins")]
    pub bins: usize,
    #[serde(default = "d_depth")]
    pub tree_max_depth: usize,
    #[serde(default = "d_if_trees")]
    pub iforest_trees: usize,
    #[serde(default = "d_if_subsample")]
    pub iforest_subsample: usize,
    #[serde(default = "d_l1")]
    pub l1: f64,
    #[serde(default = "d_iters")]
    pub lr_iterations: usize,
    #[serde(default = "d_gbdt_trees")]
    pub gbdt_trees: usize,
    #[serde(default = "d_gbdt_depth")]
    pub gbdt_max_depth: usize,
    #[serde(default = "d_subsample")]
    pub subsample: f64,
    #[serde(default = "d_shrinkage")]
    pub shrinkage: f64,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        DetectorConfig {
            kind,
            bins: d_bins(),
            tree_max_depth: d_depth(),
            iforest_trees: d_if_trees(),
            iforest_subsample: d_if_subsample(),
            l1: d_l1(),
            lr_iterations: d_iters(),
            gbdt_trees: d_gbdt_trees(),
            gbdt_max_depth: d_gbdt_depth(),
            subsample: d_subsample(),
            shrinkage: d_shrinkage(),
        }
    }

    pub fn gbdt(&self, seed: u64) -> GbdtConfig {
        GbdtConfig {
            n_trees: self.gbdt_trees,
            max_depth: self.gbdt_max_depth,
            row_subsample: self.subsample,
            col_subsample: self.subsample,
            shrinkage: self.shrinkage,
            seed,
            ..GbdtConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Tree(DecisionTree),
    IsolationForest(IsolationForest),
    Linear(LinearModel),
    Gbdt(GbdtModel),
}

/// A trained detector with everything needed to score raw feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: DetectorKind,
    pub version_date: Option<NaiveDate>,
    pub feature_arity: usize,
    pub discretizer: Option<Discretizer>,
    pub detector: Detector,
}

fn bool_labels(x: &FeatureMatrix) -> Result<&[bool]> {
    x.labels()
        .ok_or_else(|| Error::Config("supervised detector needs labelled rows".into()))
}

impl Model {
    pub fn train(x: &FeatureMatrix, cfg: &DetectorConfig, seed: u64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("training data"));
        }
        let discretizer = if cfg.kind.needs_discretizer() {
            Some(Discretizer::fit(x, cfg.bins)?)
        } else {
            None
        };
        let detector = match cfg.kind {
            DetectorKind::Id3 | DetectorKind::C50 => {
                let y = bool_labels(x)?;
                let binned = discretizer.as_ref().expect("fitted").apply(x)?;
                let tree_cfg = TreeConfig {
                    max_depth: cfg.tree_max_depth,
                    ..if cfg.kind == DetectorKind::Id3 {
                        TreeConfig::id3()
                    } else {
                        TreeConfig::c50()
                    }
                };
                Detector::Tree(DecisionTree::train(&binned, y, tree_cfg)?)
            }
            DetectorKind::LogisticRegression => {
                let y = bool_labels(x)?;
                let binned = discretizer.as_ref().expect("fitted").apply(x)?;
                Detector::Linear(LinearModel::train(&binned, y, cfg.l1, cfg.lr_iterations)?)
            }
            DetectorKind::IsolationForest => Detector::IsolationForest(IsolationForest::train(
                x,
                cfg.iforest_trees,
                cfg.iforest_subsample,
                seed,
            )?),
            DetectorKind::Gbdt => {
                let y: Vec<f64> = bool_labels(x)?.iter().map(|&b| f64::from(u8::from(b))).collect();
                Detector::Gbdt(GbdtModel::train(x, &y, &cfg.gbdt(seed))?)
            }
        };
        Ok(Model {
            kind: cfg.kind,
            version_date: None,
            feature_arity: x.n_cols(),
            discretizer,
            detector,
        })
    }

    pub fn with_version(mut self, date: NaiveDate) -> Self {
        self.version_date = Some(date);
        self
    }

    /// Fraud score in `[0, 1]` for a raw feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_arity {
            return Err(Error::Arity {
                expected: self.feature_arity,
                got: x.len(),
            });
        }
        let binned = |d: &Discretizer| -> Vec<u16> { x.iter().enumerate().map(|(c, &v)| d.bin(c, v)).collect() };
        Ok(match (&self.detector, &self.discretizer) {
            (Detector::Tree(t), Some(d)) => t.predict_binned(&binned(d)),
            (Detector::Linear(m), Some(d)) => m.predict_binned(&binned(d)),
            (Detector::IsolationForest(f), _) => f.score(x),
            (Detector::Gbdt(g), _) => g.predict(x),
            _ => return Err(Error::corrupt("model", "discretizer missing")),
        })
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        x.rows().map(|r| self.predict(r)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let date = self.version_date.map_or_else(|| "-".to_string(), |d| d.to_string());
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "model_type {}", self.kind);
        let _ = writeln!(s, "version_date {date}");
        let _ = writeln!(s, "feature_arity {}", self.feature_arity);
        match &self.discretizer {
            None => s.push_str("discretizer none\n"),
            Some(d) => {
                let _ = writeln!(s, "discretizer {} {}", d.bins(), d.n_cols());
                for c in 0..d.n_cols() {
                    let _ = write!(s, "edges {}", d.edges(c).len());
                    for e in d.edges(c) {
                        let _ = write!(s, " {e:?}");
                    }
                    s.push('\n');
                }
            }
        }
        match &self.detector {
            Detector::Tree(t) => {
                let _ = writeln!(s, "tree {} {} {}", t.criterion().as_str(), t.n_cols(), t.nodes().len());
                for node in t.nodes() {
                    match node {
                        TreeNode::Leaf { prob, n } => {
                            let _ = writeln!(s, "leaf {prob:?} {n}");
                        }
                        TreeNode::Split {
                            prob,
                            n,
                            column,
                            children,
                        } => {
                            let _ = write!(s, "split {prob:?} {n} {column} {}", children.len());
                            for (b, _) in children {
                                let _ = write!(s, " {b}");
                            }
                            s.push('\n');
                        }
                    }
                }
            }
            Detector::IsolationForest(f) => {
                let _ = writeln!(s, "iforest {} {} {}", f.n_cols, f.subsample, f.trees.len());
                for t in &f.trees {
                    let _ = writeln!(s, "itree {}", t.nodes.len());
                    for node in &t.nodes {
                        match node {
                            IsoNode::Split { column, value, .. } => {
                                let _ = writeln!(s, "split {column} {value:?}");
                            }
                            IsoNode::Leaf { size } => {
                                let _ = writeln!(s, "leaf {size}");
                            }
                        }
                    }
                }
            }
            Detector::Linear(m) => {
                let nnz = m.weights.iter().filter(|&&w| w != 0.0).count();
                let _ = writeln!(
                    s,
                    "lr {} {:?} {:?} {} {}",
                    m.weights.len(),
                    m.bias,
                    m.l1,
                    m.iterations,
                    nnz
                );
                let _ = write!(s, "offsets {}", m.offsets.len());
                for o in &m.offsets {
                    let _ = write!(s, " {o}");
                }
                s.push('\n');
                for (i, w) in m.weights.iter().enumerate().filter(|(_, &w)| w != 0.0) {
                    let _ = writeln!(s, "w {i} {w:?}");
                }
            }
            Detector::Gbdt(g) => {
                let _ = writeln!(
                    s,
                    "gbdt {} {:?} {:?} {}",
                    g.n_cols,
                    g.base_score,
                    g.shrinkage,
                    g.trees.len()
                );
                for t in &g.trees {
                    let _ = writeln!(s, "rtree {}", t.nodes.len());
                    for node in &t.nodes {
                        match node {
                            RegNode::Split { feature, threshold, .. } => {
                                let _ = writeln!(s, "split {feature} {threshold:?}");
                            }
                            RegNode::Leaf { value } => {
                                let _ = writeln!(s, "leaf {value:?}");
                            }
                        }
                    }
                }
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut p = Lines {
            inner: r.lines(),
            line: 0,
        };
        p.expect_exact(MAGIC)?;
        let kind: DetectorKind = p.keyed("model_type")?[0].parse()?;
        let date = match p.keyed("version_date")?[0].as_str() {
            "-" => None,
            d => Some(NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| Error::corrupt("model", e.to_string()))?),
        };
        let arity_fields = p.keyed("feature_arity")?;
        let feature_arity: usize = p.field(&arity_fields, 0)?;
        let disc_fields = p.keyed("discretizer")?;
        let discretizer = if disc_fields.first().map(String::as_str) == Some("none") {
            None
        } else {
            let bins: usize = p.field(&disc_fields, 0)?;
            let n_cols: usize = p.field(&disc_fields, 1)?;
            let mut edges = Vec::with_capacity(n_cols);
            for _ in 0..n_cols {
                let f = p.keyed("edges")?;
                let k: usize = p.field(&f, 0)?;
                if f.len() != k + 1 {
                    return Err(p.err("edge count mismatch"));
                }
                edges.push(f[1..].iter().map(|v| p.num(v)).collect::<Result<Vec<f64>>>()?);
            }
            Some(Discretizer::from_edges(bins, edges)?)
        };
        let detector = match kind {
            DetectorKind::Id3 | DetectorKind::C50 => {
                let f = p.keyed("tree")?;
                let criterion = Criterion::parse(&f[0]).ok_or_else(|| p.err("unknown criterion"))?;
                let n_cols: usize = p.field(&f, 1)?;
                let n_nodes: usize = p.field(&f, 2)?;
                let mut raw = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    let (tag, f) = p.tagged()?;
                    let prob: f64 = p.field(&f, 0)?;
                    let n: usize = p.field(&f, 1)?;
                    raw.push(match tag.as_str() {
                        "leaf" => (prob, n, None),
                        "split" => {
                            let column: usize = p.field(&f, 2)?;
                            let k: usize = p.field(&f, 3)?;
                            if f.len() != 4 + k {
                                return Err(p.err("child count mismatch"));
                            }
                            let bins = f[4..].iter().map(|b| p.num(b)).collect::<Result<Vec<u16>>>()?;
                            (prob, n, Some((column, bins)))
                        }
                        _ => return Err(p.err("expected leaf or split")),
                    });
                }
                Detector::Tree(DecisionTree::from_nodes(criterion, n_cols, link_tree(raw)?)?)
            }
            DetectorKind::IsolationForest => {
                let f = p.keyed("iforest")?;
                let n_cols: usize = p.field(&f, 0)?;
                let subsample: usize = p.field(&f, 1)?;
                let n_trees: usize = p.field(&f, 2)?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let f = p.keyed("itree")?;
                    let n_nodes: usize = p.field(&f, 0)?;
                    let mut items = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        let (tag, f) = p.tagged()?;
                        items.push(match tag.as_str() {
                            "split" => Ok((p.field(&f, 0)?, p.field(&f, 1)?)),
                            "leaf" => Err(p.field(&f, 0)?),
                            _ => return Err(p.err("expected leaf or split")),
                        });
                    }
                    trees.push(IsoTree::from_preorder(items, n_cols)?);
                }
                Detector::IsolationForest(IsolationForest {
                    n_cols,
                    subsample,
                    trees,
                })
            }
            DetectorKind::LogisticRegression => {
                let f = p.keyed("lr")?;
                let n_weights: usize = p.field(&f, 0)?;
                let bias: f64 = p.field(&f, 1)?;
                let l1: f64 = p.field(&f, 2)?;
                let iterations: usize = p.field(&f, 3)?;
                let nnz: usize = p.field(&f, 4)?;
                let o = p.keyed("offsets")?;
                let k: usize = p.field(&o, 0)?;
                if o.len() != k + 1 {
                    return Err(p.err("offset count mismatch"));
                }
                let offsets = o[1..].iter().map(|v| p.num(v)).collect::<Result<Vec<usize>>>()?;
                let mut weights = vec![0.0; n_weights];
                for _ in 0..nnz {
                    let w = p.keyed("w")?;
                    let i: usize = p.field(&w, 0)?;
                    *weights.get_mut(i).ok_or_else(|| p.err("weight index out of range"))? = p.field(&w, 1)?;
                }
                Detector::Linear(LinearModel {
                    offsets,
                    weights,
                    bias,
                    l1,
                    iterations,
                })
            }
            DetectorKind::Gbdt => {
                let f = p.keyed("gbdt")?;
                let n_cols: usize = p.field(&f, 0)?;
                let base_score: f64 = p.field(&f, 1)?;
                let shrinkage: f64 = p.field(&f, 2)?;
                let n_trees: usize = p.field(&f, 3)?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let f = p.keyed("rtree")?;
                    let n_nodes: usize = p.field(&f, 0)?;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        let (tag, f) = p.tagged()?;
                        nodes.push(match tag.as_str() {
                            "split" => RegNode::Split {
                                feature: p.field(&f, 0)?,
                                threshold: p.field(&f, 1)?,
                                right: 0,
                            },
                            "leaf" => RegNode::Leaf { value: p.field(&f, 0)? },
                            _ => return Err(p.err("expected leaf or split")),
                        });
                    }
                    trees.push(RegTree::from_preorder(nodes, n_cols)?);
                }
                Detector::Gbdt(GbdtModel {
                    n_cols,
                    base_score,
                    shrinkage,
                    trees,
                })
            }
        };
        p.expect_exact("end")?;
        let model = Model {
            kind,
            version_date: date,
            feature_arity,
            discretizer,
            detector,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let cols = match &self.detector {
            Detector::Tree(t) => t.n_cols(),
            Detector::IsolationForest(f) => f.n_cols,
            Detector::Linear(m) => m.n_cols(),
            Detector::Gbdt(g) => g.n_cols,
        };
        let disc_ok = match &self.discretizer {
            Some(d) => self.kind.needs_discretizer() && d.n_cols() == self.feature_arity,
            None => !self.kind.needs_discretizer(),
        };
        if cols != self.feature_arity || !disc_ok {
            return Err(Error::corrupt("model", "component arities disagree"));
        }
        Ok(())
    }
}

/// `(prob, n, split)` as read from a tree line; `split` is the column and its child bins.
type RawNode = (f64, usize, Option<(usize, Vec<u16>)>);

/// Converts preorder records into nodes with child indices.
fn link_tree(raw: Vec<RawNode>) -> Result<Vec<TreeNode>> {
    fn go(raw: &[RawNode], i: usize, out: &mut Vec<Option<TreeNode>>) -> Result<usize> {
        let (prob, n, split) = raw.get(i).ok_or_else(|| Error::corrupt("tree", "truncated"))?;
        match split {
            None => {
                out[i] = Some(TreeNode::Leaf { prob: *prob, n: *n });
                Ok(i + 1)
            }
            Some((column, bins)) => {
                let mut next = i + 1;
                let mut children = Vec::with_capacity(bins.len());
                for &b in bins {
                    children.push((b, next));
                    next = go(raw, next, out)?;
                }
                if children.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::corrupt("tree", "child bins not ascending"));
                }
                out[i] = Some(TreeNode::Split {
                    prob: *prob,
                    n: *n,
                    column: *column,
                    children,
                });
                Ok(next)
            }
        }
    }
    let mut out = vec![None; raw.len()];
    if go(&raw, 0, &mut out)? != raw.len() {
        return Err(Error::corrupt("tree", "trailing nodes"));
    }
    Ok(out.into_iter().map(|n| n.expect("every node visited")).collect())
}

struct Lines<B> {
    inner: std::io::Lines<B>,
    line: usize,
}

impl<B: BufRead> Lines<B> {
    fn err(&self, message: &str) -> Error {
        Error::corrupt("model", format!("line {}: {message}", self.line))
    }

    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn expect_exact(&mut self, want: &str) -> Result<()> {
        if self.next()? != want {
            return Err(self.err(&format!("expected {want:?}")));
        }
        Ok(())
    }

    fn tagged(&mut self) -> Result<(String, Vec<String>)> {
        let l = self.next()?;
        let mut it = l.split(' ').map(str::to_string);
        let tag = it.next().unwrap_or_default();
        Ok((tag, it.collect()))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let (tag, f) = self.tagged()?;
        if tag != key {
            return Err(self.err(&format!("expected {key}")));
        }
        Ok(f)
    }

    fn num<T: FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(&format!("bad number {s:?}")))
    }

    fn field<T: FromStr>(&self, f: &[String], i: usize) -> Result<T> {
        self.num(f.get(i).ok_or_else(|| self.err("missing field"))?)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn data(n: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FeatureMatrix::new(cols);
        for _ in 0..n {
            let row: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let label = row[0] + 0.5 * row[1] > 0.6 || rng.gen_bool(0.02);
            m.push(&row, Some(label)).unwrap();
        }
        m
    }

    fn small(kind: DetectorKind) -> DetectorConfig {
        DetectorConfig {
            bins: 20,
            iforest_trees: 20,
            lr_iterations: 50,
            gbdt_trees: 30,
            ..DetectorConfig::new(kind)
        }
    }

    #[test]
    fn round_trip_every_family() {
        let x = data(400, 4, 1);
        for kind in DetectorKind::ALL {
            let m = Model::train(&x, &small(kind), 5)
                .unwrap()
                .with_version(NaiveDate::from_ymd_opt(2017, 4, 10).unwrap());
            let text = m.to_text();
            let back = Model::read(text.as_bytes()).unwrap();
            assert_eq!(back, m, "{kind}");
            assert_eq!(back.to_text(), text);
            for r in x.rows().take(50) {
                let s = m.predict(r).unwrap();
                assert!((0.0..=1.0).contains(&s));
                assert_eq!(s, back.predict(r).unwrap());
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let x = data(300, 3, 2);
        for kind in DetectorKind::ALL {
            let a = Model::train(&x, &small(kind), 9).unwrap().to_text();
            let b = Model::train(&x, &small(kind), 9).unwrap().to_text();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn arity_mismatch() {
        let x = data(100, 3, 3);
        let m = Model::train(&x, &small(DetectorKind::Gbdt), 0).unwrap();
        assert!(m.predict(&[0.0; 2]).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let x = data(100, 3, 4);
        let text = Model::train(&x, &small(DetectorKind::C50), 0).unwrap().to_text();
        let cut = &text[..text.len() - 10];
        assert!(Model::read(cut.as_bytes()).is_err());
    }

    #[test]
    fn kind_names() {
        for k in DetectorKind::ALL {
            assert_eq!(k.as_str().parse::<DetectorKind>().unwrap(), k);
        }
        let cfg: DetectorConfig = toml::from_str("kind = \"gbdt\"").unwrap();
        assert_eq!(cfg, DetectorConfig::new(DetectorKind::Gbdt));
    }
}
