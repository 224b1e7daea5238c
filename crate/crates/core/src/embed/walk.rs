use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeIndex, TransactionNetwork};

fn d_walk_length() -> usize {
    50
}
fn d_samples() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    #[serde(default = "d_walk_length")]
    pub walk_length: usize,
    #[serde(default = "d_samples")]
    pub samples_per_node: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_length: d_walk_length(),
            samples_per_node: d_samples(),
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 || self.samples_per_node < 1 {
            return Err(Error::Config(
                "walk_length must be >= 2 and samples_per_node >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Flat storage for node sequences: `walk(i) = tokens[offsets[i]..offsets[i+1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCorpus {
    nodes: Arc<NodeIndex>,
    tokens: Vec<u32>,
    offsets: Vec<usize>,
}

impl WalkCorpus {
    /// Builds a corpus from explicit node-id sequences.
    pub fn from_walks(nodes: Arc<NodeIndex>, walks: &[Vec<u32>]) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut offsets = vec![0];
        for w in walks {
            if let Some(&bad) = w.iter().find(|&&t| t as usize >= nodes.len()) {
                return Err(Error::NodeOutOfRange {
                    id: bad as usize,
                    len: nodes.len(),
                });
            }
            tokens.extend_from_slice(w);
            offsets.push(tokens.len());
        }
        Ok(WalkCorpus { nodes, tokens, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn walk(&self, i: usize) -> &[u32] {
        &self.tokens[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn walks(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |i| self.walk(i))
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn nodes(&self) -> &Arc<NodeIndex> {
        &self.nodes
    }
}

/// Cumulative-weight transition tables over an undirected network.
struct Transitions {
    neighbors: Vec<Vec<u32>>,
    cumulative: Vec<Vec<u64>>,
}

impl Transitions {
    fn new(net: &TransactionNetwork) -> Self {
        let n = net.node_count();
        let mut neighbors = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        for u in 0..n {
            let list = net.out_neighbors(u).expect("id in range");
            neighbors.push(list.iter().map(|&(v, _)| v as u32).collect());
            cumulative.push(
                list.iter()
                    .scan(0u64, |acc, &(_, w)| {
                        *acc += w;
                        Some(*acc)
                    })
                    .collect(),
            );
        }
        Transitions { neighbors, cumulative }
    }

    fn step<R: Rng>(&self, node: u32, rng: &mut R) -> Option<u32> {
        let cum = &self.cumulative[node as usize];
        let total = *cum.last()?;
        if total == 0 {
            return None;
        }
        let r = rng.gen_range(0..total);
        let i = cum.partition_point(|&c| c <= r);
        Some(self.neighbors[node as usize][i])
    }
}

/// Weight-biased random walks over the undirected view of `net`.
///
/// Walks are produced in passes; pass `p` visits every node once in a
/// shuffled order, drawing from its own ChaCha stream, so passes can run in
/// parallel and still concatenate deterministically. A walk stops early
/// at a node without neighbours.
pub fn generate_walks(net: &TransactionNetwork, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    if net.node_count() == 0 {
        return Err(Error::Empty("network"));
    }
    let undirected;
    let view = if net.is_undirected() {
        net
    } else {
        undirected = net.as_undirected();
        &undirected
    };
    let table = Transitions::new(view);
    let n = view.node_count();

    let passes: Vec<Vec<u32>> = (0..cfg.samples_per_node)
        .into_par_iter()
        .map(|pass| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(pass as u64);
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(&mut rng);
            let mut tokens = Vec::with_capacity(n * cfg.walk_length);
            for start in order {
                tokens.push(start);
                let mut cur = start;
                for _ in 1..cfg.walk_length {
                    match table.step(cur, &mut rng) {
                        Some(next) => {
                            tokens.push(next);
                            cur = next;
                        }
                        None => break,
                    }
                }
                // Mark the boundary with the sentinel; offsets are rebuilt below.
                tokens.push(u32::MAX);
            }
            tokens
        })
        .collect();

    let mut tokens = Vec::with_capacity(passes.iter().map(Vec::len).sum());
    let mut offsets = Vec::with_capacity(n * cfg.samples_per_node + 1);
    offsets.push(0);
    for pass in passes {
        for t in pass {
            if t == u32::MAX {
                offsets.push(tokens.len());
            } else {
                tokens.push(t);
            }
        }
    }
    Ok(WalkCorpus {
        nodes: Arc::clone(view.nodes()),
        tokens,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_network;
    use crate::ingest::{TransactionRecord, BASIC_FEATURES};

    fn recs(pairs: &[(&str, &str, usize)]) -> Vec<TransactionRecord> {
        let mut out = Vec::new();
        for &(a, b, w) in pairs {
            for _ in 0..w {
                out.push(TransactionRecord {
                    txn_id: format!("t{}", out.len()),
                    timestamp: 0,
                    transferor: a.into(),
                    transferee: b.into(),
                    amount: 1.0,
                    basic_features: [0.0; BASIC_FEATURES],
                });
            }
        }
        out
    }

    fn cfg(walk_length: usize, samples_per_node: usize) -> WalkConfig {
        WalkConfig {
            walk_length,
            samples_per_node,
            seed: 3,
        }
    }

    #[test]
    fn two_node_forced_path() {
        let net = build_network(&recs(&[("A", "B", 1)])).unwrap();
        let corpus = generate_walks(&net, &cfg(3, 1)).unwrap();
        let mut walks: Vec<_> = corpus.walks().map(<[u32]>::to_vec).collect();
        walks.sort();
        assert_eq!(walks, vec![vec![0, 1, 0], vec![1, 0, 1]]);
    }

    #[test]
    fn isolated_node_walk_has_length_one() {
        let net = build_network(&recs(&[("A", "B", 1), ("C", "C", 1)])).unwrap();
        let corpus = generate_walks(&net, &cfg(5, 2)).unwrap();
        assert_eq!(corpus.len(), 6);
        let c = net.nodes().id_of("C").unwrap() as u32;
        let from_c: Vec<_> = corpus.walks().filter(|w| w[0] == c).collect();
        assert_eq!(from_c.len(), 2);
        assert!(from_c.iter().all(|w| w.len() == 1));
    }

    #[test]
    fn transition_frequency_follows_weights() {
        // Path A-B-C with weights 3 and 1: from B, P(A) = 3/4.
        let net = build_network(&recs(&[("A", "B", 3), ("B", "C", 1)])).unwrap();
        let corpus = generate_walks(&net, &cfg(2, 100_000)).unwrap();
        let b = net.nodes().id_of("B").unwrap() as u32;
        let a = net.nodes().id_of("A").unwrap() as u32;
        let (mut hits, mut total) = (0usize, 0usize);
        for w in corpus.walks().filter(|w| w[0] == b) {
            total += 1;
            hits += usize::from(w[1] == a);
        }
        assert_eq!(total, 100_000);
        let freq = hits as f64 / total as f64;
        assert!((0.74..=0.76).contains(&freq), "freq {freq}");
    }

    #[test]
    fn deterministic_and_counted() {
        let net = build_network(&recs(&[("A", "B", 2), ("B", "C", 1), ("C", "D", 4), ("D", "A", 1)])).unwrap();
        let c = cfg(10, 7);
        let a = generate_walks(&net, &c).unwrap();
        assert_eq!(a, generate_walks(&net, &c).unwrap());
        assert_eq!(a.len(), 4 * 7);
        assert!(a.walks().all(|w| w.len() == 10));
    }

    #[test]
    fn invalid_config() {
        let net = build_network(&recs(&[("A", "B", 1)])).unwrap();
        assert!(generate_walks(&net, &cfg(1, 1)).is_err());
        assert!(generate_walks(&net, &cfg(2, 0)).is_err());
    }
}
