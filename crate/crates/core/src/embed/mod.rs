//! Node embeddings: random walks over the transaction network followed by
//! skip-gram with negative sampling, single-worker or model-averaged.

mod distributed;
mod skipgram;
mod walk;

use std::borrow::Cow;
use std::io::{BufRead, Write};
use std::sync::Arc;

use chrono::NaiveDate;

pub use distributed::DEFAULT_BATCH_WALKS;
pub use skipgram::{pair_gradient, pair_loss, PairGradient, SkipGramConfig, TrainedVectors};
pub use walk::{generate_walks, WalkConfig, WalkCorpus};

use crate::error::{Error, Result};
use crate::graph::NodeIndex;

/// `|V| x dim` matrix whose row `i` represents node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    nodes: Arc<NodeIndex>,
    dim: usize,
    rows: Vec<f64>,
    version_date: Option<NaiveDate>,
}

/// Result of [`lookup_embedding`]; unknown users get a zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLookup<'a> {
    pub vector: Cow<'a, [f64]>,
    pub cold_start: bool,
}

impl EmbeddingMatrix {
    pub fn new(nodes: Arc<NodeIndex>, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows.len() != nodes.len() * dim {
            return Err(Error::Arity {
                expected: nodes.len() * dim,
                got: rows.len(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::corrupt("embedding matrix", "non-finite entry"));
        }
        Ok(EmbeddingMatrix {
            nodes,
            dim,
            rows,
            version_date: None,
        })
    }

    pub fn with_version(mut self, date: NaiveDate) -> Self {
        self.version_date = Some(date);
        self
    }

    pub fn version_date(&self) -> Option<NaiveDate> {
        self.version_date
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &Arc<NodeIndex> {
        &self.nodes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes the text form: `<n> <dim> <version_date|->`, then
    /// `user v1 .. v_dim` per node with six decimals.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let date = self.version_date.map_or_else(|| "-".to_owned(), |d| d.to_string());
        writeln!(out, "{} {} {}", self.len(), self.dim, date)?;
        let mut line = String::new();
        for (i, user) in self.nodes.users().iter().enumerate() {
            use std::fmt::Write as _;
            line.clear();
            line.push_str(user);
            for v in self.row(i) {
                write!(line, " {v:.6}").expect("writing to a String cannot fail");
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Empty("embedding file"))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [n, dim, date] = parts.as_slice() else {
            return Err(Error::parse(1, "header", "expected `<n> <dim> <version_date>`"));
        };
        let n: usize = n.parse().map_err(|_| Error::parse(1, "n", "not an integer"))?;
        let dim: usize = dim.parse().map_err(|_| Error::parse(1, "dim", "not an integer"))?;
        let version_date = match *date {
            "-" => None,
            d => Some(
                d.parse::<NaiveDate>()
                    .map_err(|e| Error::parse(1, "version_date", e.to_string()))?,
            ),
        };
        let mut users = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            users.push(parts.next().expect("non-empty line").to_owned());
            let before = rows.len();
            for p in parts {
                rows.push(
                    p.parse::<f64>()
                        .map_err(|e| Error::parse(i + 2, "value", e.to_string()))?,
                );
            }
            if rows.len() - before != dim {
                return Err(Error::Arity {
                    expected: dim,
                    got: rows.len() - before,
                });
            }
        }
        if users.len() != n {
            return Err(Error::corrupt(
                "embedding file",
                format!("header says {n} rows, found {}", users.len()),
            ));
        }
        let mut m = EmbeddingMatrix::new(Arc::new(NodeIndex::from_users(users)?), dim, rows)?;
        m.version_date = version_date;
        Ok(m)
    }
}

/// Row for `user`, or a zero vector flagged as cold start.
pub fn lookup_embedding<'a>(matrix: &'a EmbeddingMatrix, user: &str) -> EmbeddingLookup<'a> {
    match matrix.nodes.id_of(user) {
        Some(i) => EmbeddingLookup {
            vector: Cow::Borrowed(matrix.row(i)),
            cold_start: false,
        },
        None => EmbeddingLookup {
            vector: Cow::Owned(vec![0.0; matrix.dim]),
            cold_start: true,
        },
    }
}

/// Single-worker skip-gram training; bit-reproducible for a fixed corpus and config.
pub fn train_skipgram(corpus: &WalkCorpus, cfg: &SkipGramConfig) -> Result<EmbeddingMatrix> {
    let t = train_skipgram_traced(corpus, cfg)?;
    EmbeddingMatrix::new(Arc::clone(corpus.nodes()), t.dim, t.rows)
}

/// Like [`train_skipgram`] but also returns per-epoch mean pair losses.
pub fn train_skipgram_traced(corpus: &WalkCorpus, cfg: &SkipGramConfig) -> Result<TrainedVectors> {
    skipgram::train_sequential(corpus, cfg)
}

/// Parameter-server simulation with `num_workers` workers and the default
/// round size. One worker reproduces [`train_skipgram`] exactly.
pub fn train_skipgram_distributed(
    corpus: &WalkCorpus,
    cfg: &SkipGramConfig,
    num_workers: usize,
) -> Result<EmbeddingMatrix> {
    train_skipgram_distributed_batched(corpus, cfg, num_workers, DEFAULT_BATCH_WALKS)
}

pub fn train_skipgram_distributed_batched(
    corpus: &WalkCorpus,
    cfg: &SkipGramConfig,
    num_workers: usize,
    batch_walks: usize,
) -> Result<EmbeddingMatrix> {
    let t = distributed::train_distributed(corpus, cfg, num_workers, batch_walks)?;
    EmbeddingMatrix::new(Arc::clone(corpus.nodes()), t.dim, t.rows)
}

/// Mean cosine similarity within and across two node groups.
pub fn cosine_separation(m: &EmbeddingMatrix, a: &[usize], b: &[usize]) -> (f64, f64) {
    fn cos(x: &[f64], y: &[f64]) -> f64 {
        let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            d / (nx * ny)
        }
    }
    let (mut within, mut wn) = (0.0, 0usize);
    for g in [a, b] {
        for (i, &x) in g.iter().enumerate() {
            for &y in &g[i + 1..] {
                within += cos(m.row(x), m.row(y));
                wn += 1;
            }
        }
    }
    let (mut cross, mut cn) = (0.0, 0usize);
    for &x in a {
        for &y in b {
            cross += cos(m.row(x), m.row(y));
            cn += 1;
        }
    }
    (within / wn.max(1) as f64, cross / cn.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EmbeddingMatrix {
        let nodes = Arc::new(NodeIndex::from_users(vec!["a".into(), "b".into()]).unwrap());
        EmbeddingMatrix::new(nodes, 2, vec![1.0, -0.5, 0.25, 2.0]).unwrap()
    }

    #[test]
    fn lookup_known_and_cold() {
        let m = tiny();
        let hit = lookup_embedding(&m, "b");
        assert_eq!((&*hit.vector, hit.cold_start), (&[0.25, 2.0][..], false));
        let miss = lookup_embedding(&m, "zz");
        assert_eq!((&*miss.vector, miss.cold_start), (&[0.0, 0.0][..], true));
    }

    #[test]
    fn text_round_trip() {
        let m = tiny().with_version("2017-04-10".parse().unwrap());
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "2 2 2017-04-10\na 1.000000 -0.500000\nb 0.250000 2.000000\n");
        assert_eq!(EmbeddingMatrix::read_text(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_bad_shapes() {
        let nodes = Arc::new(NodeIndex::from_users(vec!["a".into()]).unwrap());
        assert!(EmbeddingMatrix::new(Arc::clone(&nodes), 2, vec![1.0]).is_err());
        assert!(EmbeddingMatrix::new(nodes, 1, vec![f64::NAN]).is_err());
    }
}
