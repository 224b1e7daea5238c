use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use super::{embed_window, run_with_embeddings, FeatureMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::ingest::{slice_windows, LabelRecord, TransactionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    EmbeddingDim,
    GbdtTrees,
    SamplesPerNode,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::EmbeddingDim => "embedding_dim",
            SweepAxis::GbdtTrees => "gbdt_trees",
            SweepAxis::SamplesPerNode => "samples_per_node",
        }
    }

    fn apply(self, cfg: &mut PipelineConfig, value: usize) {
        match self {
            SweepAxis::EmbeddingDim => cfg.skipgram.dim = value,
            SweepAxis::GbdtTrees => cfg.detector.gbdt_trees = value,
            SweepAxis::SamplesPerNode => cfg.walk.samples_per_node = value,
        }
    }

    fn changes_embeddings(self) -> bool {
        !matches!(self, SweepAxis::GbdtTrees)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::EmbeddingDim, SweepAxis::GbdtTrees, SweepAxis::SamplesPerNode]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    /// F1 per repetition, repetition `r` using seed `cfg.seed + r`.
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub sd_f1: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the pipeline for every `value` x repetition. Embeddings are shared
/// across values when the axis does not affect them.
pub fn sweep(
    records: &[TransactionRecord],
    labels: &[LabelRecord],
    cfg: &PipelineConfig,
    axis: SweepAxis,
    values: &[usize],
    repetitions: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || repetitions == 0 {
        return Err(Error::Config(
            "sweep needs at least one value and one repetition".into(),
        ));
    }
    let windows = slice_windows(records, labels, &cfg.window)?;
    let needs_embeddings = cfg.feature_mode == FeatureMode::BasicPlusEmbedding;
    let point = |value: usize, rep: usize| {
        let mut c = cfg.clone();
        axis.apply(&mut c, value);
        c.seed = cfg.seed.wrapping_add(rep as u64);
        c
    };
    let shared: Vec<Option<Arc<_>>> = if needs_embeddings && !axis.changes_embeddings() {
        (0..repetitions)
            .into_par_iter()
            .map(|rep| embed_window(&windows, &point(values[0], rep)).map(|e| Some(Arc::new(e))))
            .collect::<Result<_>>()?
    } else {
        vec![None; repetitions]
    };
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..repetitions).map(move |r| (v, r)))
        .collect();
    let f1s: Vec<f64> = jobs
        .par_iter()
        .map(|&(v, rep)| {
            let c = point(values[v], rep);
            let emb = match (&shared[rep], needs_embeddings) {
                (Some(e), _) => Some(Arc::clone(e)),
                (None, true) => Some(Arc::new(embed_window(&windows, &c)?)),
                (None, false) => None,
            };
            Ok(run_with_embeddings(&windows, &c, emb, None)?.report.f1)
        })
        .collect::<Result<_>>()?;
    Ok(values
        .iter()
        .enumerate()
        .map(|(v, &value)| {
            let f1 = f1s[v * repetitions..(v + 1) * repetitions].to_vec();
            let (mean_f1, sd_f1) = mean_sd(&f1);
            SweepRow {
                value,
                f1,
                mean_f1,
                sd_f1,
            }
        })
        .collect())
}

/// Tab-separated table with a header row.
pub fn write_sweep_table<W: Write>(axis: SweepAxis, rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{}\tmean_f1\tsd_f1\trepetitions", axis.as_str())?;
    for r in rows {
        writeln!(out, "{}\t{:.6}\t{:.6}\t{}", r.value, r.mean_f1, r.sd_f1, r.f1.len())?;
    }
    Ok(())
}
