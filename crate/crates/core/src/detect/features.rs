use crate::error::{Error, Result};
use crate::ingest::BASIC_FEATURES;

/// Concatenates basic features and an embedding: `[basic | embedding]`.
///
/// The layout is fixed across training and serving.
pub fn concat_features(basic: &[f64], embedding: &[f64], dim: usize) -> Result<Vec<f64>> {
    if basic.len() != BASIC_FEATURES {
        return Err(Error::Arity {
            expected: BASIC_FEATURES,
            got: basic.len(),
        });
    }
    if embedding.len() != dim {
        return Err(Error::Arity {
            expected: dim,
            got: embedding.len(),
        });
    }
    let mut out = Vec::with_capacity(BASIC_FEATURES + dim);
    out.extend_from_slice(basic);
    out.extend_from_slice(embedding);
    Ok(out)
}

/// Inverse of [`concat_features`].
pub fn split_features(features: &[f64]) -> Result<(&[f64], &[f64])> {
    if features.len() < BASIC_FEATURES {
        return Err(Error::Arity {
            expected: BASIC_FEATURES,
            got: features.len(),
        });
    }
    Ok(features.split_at(BASIC_FEATURES))
}

/// Dense row-major matrix with optional aligned labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    n_cols: usize,
    data: Vec<f64>,
    labels: Option<Vec<bool>>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize) -> Self {
        FeatureMatrix {
            n_cols,
            data: Vec::new(),
            labels: None,
        }
    }

    pub fn from_rows(n_cols: usize, data: Vec<f64>, labels: Option<Vec<bool>>) -> Result<Self> {
        if n_cols == 0 || !data.len().is_multiple_of(n_cols) {
            return Err(Error::Arity {
                expected: n_cols,
                got: data.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != data.len() / n_cols {
                return Err(Error::Arity {
                    expected: data.len() / n_cols,
                    got: l.len(),
                });
            }
        }
        Ok(FeatureMatrix { n_cols, data, labels })
    }

    /// Appends a row; `label` must be given for every row or for none.
    pub fn push(&mut self, row: &[f64], label: Option<bool>) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(Error::Arity {
                expected: self.n_cols,
                got: row.len(),
            });
        }
        match (label, &mut self.labels) {
            (Some(l), Some(ls)) => ls.push(l),
            (Some(l), None) if self.data.is_empty() => self.labels = Some(vec![l]),
            (None, None) => {}
            _ => return Err(Error::Config("labels must be given for all rows or none".into())),
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.n_cols).unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    /// Keeps only the first `n` columns of every row.
    pub fn truncate_columns(&self, n: usize) -> FeatureMatrix {
        let n = n.min(self.n_cols);
        let data = self.rows().flat_map(|r| r[..n].iter().copied()).collect();
        FeatureMatrix {
            n_cols: n,
            data,
            labels: self.labels.clone(),
        }
    }
}
