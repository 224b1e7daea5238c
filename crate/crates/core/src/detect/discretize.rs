//! Equal-frequency discretisation.

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 200;

/// Per-column ascending cut points. A value's bin is the number of cut
/// points strictly below it, so each cut is the inclusive upper bound of its
/// bin and a column with `k` cuts has `k + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    bins: usize,
    edges: Vec<Vec<f64>>,
}

/// Bin ids for every cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMatrix {
    n_cols: usize,
    cells: Vec<u16>,
    cardinality: Vec<usize>,
}

impl BinnedMatrix {
    pub fn n_rows(&self) -> usize {
        self.cells.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.cells[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.cells[row * self.n_cols + col]
    }

    /// Number of bins available in each column.
    pub fn cardinality(&self) -> &[usize] {
        &self.cardinality
    }
}

impl Discretizer {
    /// Fits `bins` equal-frequency bins per column; duplicate quantiles merge.
    pub fn fit(x: &FeatureMatrix, bins: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("feature matrix"));
        }
        if bins == 0 || bins > usize::from(u16::MAX) {
            return Err(Error::Config(format!("bin count {bins} out of range")));
        }
        let n = x.n_rows();
        let mut column = Vec::with_capacity(n);
        let edges = (0..x.n_cols())
            .map(|c| {
                column.clear();
                column.extend(x.rows().map(|r| r[c]));
                column.sort_by(f64::total_cmp);
                let max = column[n - 1];
                let mut cuts: Vec<f64> = Vec::with_capacity(bins - 1);
                for q in 1..bins {
                    let rank = (q * n).div_ceil(bins).max(1) - 1;
                    let cut = column[rank];
                    if cut < max && cuts.last().is_none_or(|&last| cut > last) {
                        cuts.push(cut);
                    }
                }
                cuts
            })
            .collect();
        Ok(Discretizer { bins, edges })
    }

    pub fn from_edges(bins: usize, edges: Vec<Vec<f64>>) -> Result<Self> {
        for e in &edges {
            if e.windows(2).any(|w| w[0] >= w[1]) || e.iter().any(|v| !v.is_finite()) {
                return Err(Error::corrupt(
                    "discretizer",
                    "edges must be finite and strictly increasing",
                ));
            }
            if e.len() >= usize::from(u16::MAX) {
                return Err(Error::corrupt("discretizer", "too many edges"));
            }
        }
        Ok(Discretizer { bins, edges })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn n_cols(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self, col: usize) -> &[f64] {
        &self.edges[col]
    }

    /// Bins that actually occur in column `col`.
    pub fn effective_bins(&self, col: usize) -> usize {
        self.edges[col].len() + 1
    }

    #[inline]
    pub fn bin(&self, col: usize, value: f64) -> u16 {
        self.edges[col].partition_point(|&e| e < value) as u16
    }

    /// A value that falls in `bin` of `col` (its inclusive upper bound, or
    /// infinity for the last bin).
    pub fn representative(&self, col: usize, bin: u16) -> f64 {
        self.edges[col].get(usize::from(bin)).copied().unwrap_or(f64::INFINITY)
    }

    pub fn apply_row(&self, row: &[f64], out: &mut Vec<u16>) -> Result<()> {
        if row.len() != self.n_cols() {
            return Err(Error::Arity {
                expected: self.n_cols(),
                got: row.len(),
            });
        }
        out.clear();
        out.extend(row.iter().enumerate().map(|(c, &v)| self.bin(c, v)));
        Ok(())
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<BinnedMatrix> {
        if x.n_cols() != self.n_cols() {
            return Err(Error::Arity {
                expected: self.n_cols(),
                got: x.n_cols(),
            });
        }
        let mut cells = Vec::with_capacity(x.n_rows() * x.n_cols());
        for r in x.rows() {
            cells.extend(r.iter().enumerate().map(|(c, &v)| self.bin(c, v)));
        }
        Ok(BinnedMatrix {
            n_cols: x.n_cols(),
            cells,
            cardinality: (0..self.n_cols()).map(|c| self.effective_bins(c)).collect(),
        })
    }
}
