//! T+1 orchestration: slice windows, embed the network window, train a
//! detector on the train window, score the test day and publish features.

pub mod metrics;
pub mod sweep;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::detect::{concat_features, DetectorConfig, FeatureMatrix, Model};
use crate::embed::{
    generate_walks, lookup_embedding, train_skipgram, train_skipgram_distributed_batched, EmbeddingMatrix,
    SkipGramConfig, WalkConfig, DEFAULT_BATCH_WALKS,
};
use crate::error::{Error, Result};
use crate::graph::build_network;
use crate::ingest::{
    generate_synthetic, parse_labels, parse_records, slice_windows, LabelRecord, LabeledRecord, SyntheticConfig,
    TransactionRecord, WindowSpec, Windows, BASIC_FEATURES,
};
use crate::store::{FeatureRow, FeatureStore, Version};

pub use metrics::{
    best_threshold_f1, evaluate, f1_score, recall_at_top_frac, EvalReport, ThresholdMode, DEFAULT_THRESHOLD,
};
pub use sweep::{sweep, write_sweep_table, SweepAxis, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    BasicOnly,
    BasicPlusEmbedding,
}

/// Where `titant train` reads its input: two files or a synthetic generator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataConfig {
    pub records: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

impl DataConfig {
    /// Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<(Vec<TransactionRecord>, Vec<LabelRecord>)> {
        let open = |p: &Path| -> Result<std::io::BufReader<std::fs::File>> {
            Ok(std::io::BufReader::new(std::fs::File::open(base.join(p))?))
        };
        match (&self.records, &self.labels, &self.synthetic) {
            (Some(r), Some(l), None) => Ok((parse_records(open(r)?)?, parse_labels(open(l)?)?)),
            (None, None, Some(s)) => {
                let d = generate_synthetic(s)?;
                Ok((d.records, d.labels))
            }
            _ => Err(Error::Config(
                "data needs either `records` and `labels`, or a `synthetic` table".into(),
            )),
        }
    }
}

fn d_mode() -> FeatureMode {
    FeatureMode::BasicPlusEmbedding
}
fn d_workers() -> usize {
    1
}
fn d_batch() -> usize {
    DEFAULT_BATCH_WALKS
}
fn d_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn d_mode_threshold() -> ThresholdMode {
    ThresholdMode::Fixed
}
fn d_fracs() -> Vec<f64> {
    vec![0.01]
}

/// Stage seeds are derived from `seed`; the `seed` fields inside `walk` and
/// `skipgram` are ignored by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub data: DataConfig,
    pub window: WindowSpec,
    #[serde(default)]
    pub walk: WalkConfig,
    #[serde(default)]
    pub skipgram: SkipGramConfig,
    pub detector: DetectorConfig,
    #[serde(default = "d_mode")]
    pub feature_mode: FeatureMode,
    #[serde(default = "d_workers")]
    pub embedding_workers: usize,
    #[serde(default = "d_batch")]
    pub batch_walks: usize,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_mode_threshold")]
    pub threshold_mode: ThresholdMode,
    #[serde(default = "d_fracs")]
    pub top_fracs: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// SplitMix64 finaliser; decorrelates stage seeds derived from one seed.
fn mix(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PipelineConfig {
    pub fn new(window: WindowSpec, detector: DetectorConfig) -> Self {
        PipelineConfig {
            data: DataConfig::default(),
            window,
            walk: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
            detector,
            feature_mode: d_mode(),
            embedding_workers: d_workers(),
            batch_walks: d_batch(),
            threshold: d_threshold(),
            threshold_mode: d_mode_threshold(),
            top_fracs: d_fracs(),
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.feature_mode == FeatureMode::BasicPlusEmbedding {
            self.walk.validate()?;
            self.skipgram.validate()?;
        }
        if self.embedding_workers == 0 || self.batch_walks == 0 {
            return Err(Error::Config("embedding_workers and batch_walks must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            seed: mix(self.seed, 1),
            ..self.walk
        }
    }

    pub fn skipgram_config(&self) -> SkipGramConfig {
        SkipGramConfig {
            seed: mix(self.seed, 2),
            ..self.skipgram
        }
    }

    pub fn detector_seed(&self) -> u64 {
        mix(self.seed, 3)
    }

    pub fn embedding_dim(&self) -> usize {
        match self.feature_mode {
            FeatureMode::BasicOnly => 0,
            FeatureMode::BasicPlusEmbedding => self.skipgram.dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: Model,
    pub embeddings: Option<Arc<EmbeddingMatrix>>,
    pub report: EvalReport,
    /// Test-day feature rows with labels, in record order.
    pub test: FeatureMatrix,
    pub test_scores: Vec<f64>,
    pub published: Option<Arc<Version>>,
}

/// Builds the network from the network window only and embeds it.
pub fn embed_window(windows: &Windows<'_>, cfg: &PipelineConfig) -> Result<EmbeddingMatrix> {
    let net = build_network(windows.network.iter().copied())?;
    let corpus = generate_walks(&net, &cfg.walk_config())?;
    let sg = cfg.skipgram_config();
    let m = if cfg.embedding_workers == 1 {
        train_skipgram(&corpus, &sg)?
    } else {
        train_skipgram_distributed_batched(&corpus, &sg, cfg.embedding_workers, cfg.batch_walks)?
    };
    Ok(m.with_version(cfg.window.test_date))
}

/// One row per record: its basic features, then the transferor's embedding
/// (zeros when unknown) if `embeddings` is given.
pub fn feature_matrix(rows: &[LabeledRecord<'_>], embeddings: Option<&EmbeddingMatrix>) -> Result<FeatureMatrix> {
    let width = BASIC_FEATURES + embeddings.map_or(0, |e| e.dim());
    let mut m = FeatureMatrix::new(width);
    for r in rows {
        let basic = &r.record.basic_features[..];
        match embeddings {
            Some(e) => {
                let v = lookup_embedding(e, &r.record.transferor);
                m.push(&concat_features(basic, &v.vector, e.dim())?, Some(r.is_fraud))?;
            }
            None => m.push(basic, Some(r.is_fraud))?,
        }
    }
    Ok(m)
}

/// Store rows for every user seen in the network or train window. The basic
/// family holds the user's most recent transfer-out features (zeros if the
/// user never sent money); the embedding family is zero for users outside
/// the network.
pub fn store_rows(windows: &Windows<'_>, embeddings: Option<&EmbeddingMatrix>) -> Vec<FeatureRow> {
    let dim = embeddings.map_or(0, |e| e.dim());
    let mut order: Vec<&str> = Vec::new();
    let mut latest: HashMap<&str, Option<&TransactionRecord>> = HashMap::new();
    let all = windows
        .network
        .iter()
        .copied()
        .chain(windows.train.iter().map(|r| r.record));
    for rec in all {
        for user in [rec.transferor.as_str(), rec.transferee.as_str()] {
            latest.entry(user).or_insert_with(|| {
                order.push(user);
                None
            });
        }
        let slot = latest.get_mut(rec.transferor.as_str()).expect("inserted");
        if slot.is_none_or(|prev| prev.timestamp <= rec.timestamp) {
            *slot = Some(rec);
        }
    }
    order
        .into_iter()
        .map(|user| FeatureRow {
            user: user.to_string(),
            basic: latest[user].map_or_else(|| vec![0.0; BASIC_FEATURES], |r| r.basic_features.to_vec()),
            embedding: embeddings.map_or_else(Vec::new, |e| lookup_embedding(e, user).vector.into_owned()),
        })
        .inspect(|r| debug_assert_eq!(r.embedding.len(), dim))
        .collect()
}

/// Runs the full T+1 cycle. Publishes to `store` when one is given.
pub fn run_t_plus_1(
    records: &[TransactionRecord],
    labels: &[LabelRecord],
    cfg: &PipelineConfig,
    store: Option<&FeatureStore>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let windows = slice_windows(records, labels, &cfg.window)?;
    let embeddings = match cfg.feature_mode {
        FeatureMode::BasicOnly => None,
        FeatureMode::BasicPlusEmbedding => Some(Arc::new(embed_window(&windows, cfg)?)),
    };
    run_with_embeddings(&windows, cfg, embeddings, store)
}

/// The detector half of [`run_t_plus_1`], for callers that reuse embeddings.
pub fn run_with_embeddings(
    windows: &Windows<'_>,
    cfg: &PipelineConfig,
    embeddings: Option<Arc<EmbeddingMatrix>>,
    store: Option<&FeatureStore>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let emb = match (cfg.feature_mode, &embeddings) {
        (FeatureMode::BasicOnly, _) => None,
        (FeatureMode::BasicPlusEmbedding, Some(e)) => Some(e.as_ref()),
        (FeatureMode::BasicPlusEmbedding, None) => {
            return Err(Error::Config("feature mode needs embeddings".into()));
        }
    };
    let train = feature_matrix(&windows.train, emb)?;
    let model = Model::train(&train, &cfg.detector, cfg.detector_seed())?.with_version(cfg.window.test_date);
    let test = feature_matrix(&windows.test, emb)?;
    let test_scores = model.predict_matrix(&test)?;
    let labels = test.labels().expect("labelled");
    let report = evaluate(&test_scores, labels, cfg.threshold, cfg.threshold_mode, &cfg.top_fracs)?;
    let published = match store {
        Some(s) => Some(s.publish(cfg.window.test_date, cfg.embedding_dim(), &store_rows(windows, emb))?),
        None => None,
    };
    let keep = emb.is_some();
    Ok(PipelineRun {
        model,
        embeddings: if keep { embeddings } else { None },
        report,
        test,
        test_scores,
        published,
    })
}

/// Tab-separated `label f1 .. fk`, one row per line; floats round-trip exactly.
pub fn write_labeled_features<W: Write>(m: &FeatureMatrix, mut out: W) -> Result<()> {
    let labels = m.labels().ok_or_else(|| Error::Config("matrix has no labels".into()))?;
    let mut line = String::new();
    for (row, &y) in m.rows().zip(labels) {
        line.clear();
        line.push(if y { '1' } else { '0' });
        for v in row {
            line.push('\t');
            line.push_str(&format!("{v:?}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_labeled_features<R: BufRead>(input: R) -> Result<FeatureMatrix> {
    let mut m: Option<FeatureMatrix> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let label = match fields.next() {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(Error::parse(i + 1, "label", "expected 0 or 1")),
        };
        let row = fields
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(i + 1, format!("feature {c}"), e.to_string()))
            })
            .collect::<Result<Vec<f64>>>()?;
        m.get_or_insert_with(|| FeatureMatrix::new(row.len()))
            .push(&row, Some(label))
            .map_err(|_| Error::parse(i + 1, "features", "row width differs from the first row"))?;
    }
    m.ok_or(Error::Empty("feature file"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::DetectorKind;

    #[test]
    fn config_from_toml_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            seed = 3
            [window]
            test_date = "2017-04-10"
            [detector]
            kind = "gbdt"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.walk.samples_per_node, 100);
        assert_eq!(cfg.skipgram.dim, 32);
        assert_eq!(cfg.detector.kind, DetectorKind::Gbdt);
        assert_eq!(cfg.feature_mode, FeatureMode::BasicPlusEmbedding);
        assert_ne!(cfg.walk_config().seed, cfg.skipgram_config().seed);
    }

    #[test]
    fn labeled_features_round_trip() {
        let mut m = FeatureMatrix::new(3);
        m.push(&[0.1, -1e-300, 7.0], Some(true)).unwrap();
        m.push(&[f64::MAX, 0.0, -0.0], Some(false)).unwrap();
        let mut buf = Vec::new();
        write_labeled_features(&m, &mut buf).unwrap();
        assert_eq!(read_labeled_features(&buf[..]).unwrap(), m);
    }
}
