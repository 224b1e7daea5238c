//! In-process simulation of parameter-server training with model averaging.
//!
//! The server owns the center and context matrices. Each round every worker
//! pulls the current matrices, runs SGD over the next batch of walks from its
//! shard, and pushes back the rows it wrote. The server replaces each pushed
//! row by the mean of the versions pushed for it; rows nobody touched keep
//! their value. Rounds are barriers, so the outcome does not depend on how
//! the workers are scheduled.

use rayon::prelude::*;

use super::skipgram::{export, pairs_in_walk, NegativeSampler, Params, SkipGramConfig, TrainedVectors, Trainer};
use super::walk::WalkCorpus;
use crate::error::{Error, Result};

/// Walks each worker consumes per round.
pub const DEFAULT_BATCH_WALKS: usize = 128;

struct Worker<'a> {
    trainer: Trainer<'a>,
    shard: Vec<usize>,
    cursor: usize,
    local: Params<f32>,
    touched_center: Vec<bool>,
    touched_context: Vec<bool>,
    loss: f64,
    pairs: u64,
}

fn average_into<'w, 'a: 'w>(
    server: &mut [f32],
    dim: usize,
    workers: &'w [Worker<'a>],
    pick: impl Fn(&'w Worker<'a>) -> (&'w [bool], &'w [f32]),
) {
    let n = server.len() / dim;
    let mut acc = vec![0.0f64; dim];
    for row in 0..n {
        let mut count = 0u32;
        acc.iter_mut().for_each(|a| *a = 0.0);
        for w in workers {
            let (touched, values) = pick(w);
            if touched[row] {
                count += 1;
                for (a, &v) in acc.iter_mut().zip(&values[row * dim..(row + 1) * dim]) {
                    *a += f64::from(v);
                }
            }
        }
        match count {
            0 => {}
            1 => {
                let w = workers.iter().find(|w| pick(w).0[row]).expect("one pusher");
                server[row * dim..(row + 1) * dim].copy_from_slice(&pick(w).1[row * dim..(row + 1) * dim]);
            }
            c => {
                for (s, a) in server[row * dim..(row + 1) * dim].iter_mut().zip(&acc) {
                    *s = (*a / f64::from(c)) as f32;
                }
            }
        }
    }
}

pub(crate) fn train_distributed(
    corpus: &WalkCorpus,
    cfg: &SkipGramConfig,
    num_workers: usize,
    batch_walks: usize,
) -> Result<TrainedVectors> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("walk corpus"));
    }
    if num_workers == 0 || batch_walks == 0 {
        return Err(Error::Config("num_workers and batch size must be >= 1".into()));
    }
    if num_workers > corpus.len() {
        return Err(Error::Config(format!(
            "{num_workers} workers exceed the corpus size of {} walks",
            corpus.len()
        )));
    }
    let n = corpus.nodes().len();
    let mut server = Params::<f32>::init(n, cfg.dim, cfg.seed);
    let sampler = NegativeSampler::new(corpus);

    let mut workers: Vec<Worker<'_>> = (0..num_workers)
        .map(|k| {
            let shard: Vec<usize> = (k..corpus.len()).step_by(num_workers).collect();
            let pairs: u64 = shard
                .iter()
                .map(|&i| pairs_in_walk(corpus.walk(i).len(), cfg.context_window))
                .sum();
            Worker {
                trainer: Trainer::new(cfg, &sampler, k as u64, pairs * cfg.epochs as u64),
                shard,
                cursor: 0,
                local: server.clone(),
                touched_center: vec![false; n],
                touched_context: vec![false; n],
                loss: 0.0,
                pairs: 0,
            }
        })
        .collect();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        workers.iter_mut().for_each(|w| {
            w.cursor = 0;
            w.loss = 0.0;
            w.pairs = 0;
        });
        while workers.iter().any(|w| w.cursor < w.shard.len()) {
            workers.par_iter_mut().for_each(|w| {
                // Pull.
                w.local.center.copy_from_slice(&server.center);
                w.local.context.copy_from_slice(&server.context);
                w.touched_center.iter_mut().for_each(|t| *t = false);
                w.touched_context.iter_mut().for_each(|t| *t = false);
                let end = (w.cursor + batch_walks).min(w.shard.len());
                for &walk_id in &w.shard[w.cursor..end] {
                    let (l, p) = w.trainer.train_walk(
                        &mut w.local,
                        corpus.walk(walk_id),
                        Some((&mut w.touched_center, &mut w.touched_context)),
                    );
                    w.loss += l;
                    w.pairs += p;
                }
                w.cursor = end;
            });
            // Push + model average.
            let dim = cfg.dim;
            average_into(&mut server.center, dim, &workers, |w| {
                (&w.touched_center, &w.local.center)
            });
            average_into(&mut server.context, dim, &workers, |w| {
                (&w.touched_context, &w.local.context)
            });
        }
        let loss: f64 = workers.iter().map(|w| w.loss).sum();
        let pairs: u64 = workers.iter().map(|w| w.pairs).sum();
        epoch_losses.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
    }
    Ok(TrainedVectors {
        dim: cfg.dim,
        rows: export(&server),
        epoch_losses,
    })
}
