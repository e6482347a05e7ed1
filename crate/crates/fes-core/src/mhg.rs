//! The multivariate hypergeometric (MHG) distribution of a dyadic contingency
//! table given both margins, in two equivalent forms.
//!
//! [`mhg_logpmf_direct`] evaluates the classical closed form
//! `Π row! · Π col! / (N! · Π cell!)`. [`mhg_logpmf_factorized`] evaluates the
//! same probability as a sum of univariate hypergeometric log-pmfs, one per
//! dyadic window of every coarser stratum. The factorization also yields
//! [`mhg_sample`], which generates a margin-consistent table coarse-to-fine by
//! drawing each window's top-left quadrant from an HG distribution whose
//! parameters were fixed by the coarser strata.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactstats::{hg_sample, log_factorial, HgParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MhgError {
    #[error("table dimensions must be powers of two, got {rows}x{cols}")]
    NonDyadic { rows: usize, cols: usize },
    #[error("row totals sum to {row_sum} but column totals sum to {col_sum}")]
    UnequalSums { row_sum: u64, col_sum: u64 },
    #[error("table margins do not match the margin specification")]
    MarginMismatch,
    #[error("stratum ({i},{j}) does not aggregate to stratum ({pi},{pj})")]
    InconsistentCascade { i: u32, j: u32, pi: u32, pj: u32 },
    #[error("cascade has wrong shape: expected {expected} tables, got {got}")]
    CascadeShape { expected: usize, got: usize },
}

/// A dense table of non-negative counts, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl CountTable {
    pub fn new(rows: usize, cols: usize, data: Vec<u64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.rows).map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.get(r, c);
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }

    pub fn cells(&self) -> &[u64] {
        &self.data
    }

    /// Halves the number of rows by summing adjacent pairs.
    fn coarsen_rows(&self) -> CountTable {
        debug_assert!(self.rows % 2 == 0);
        let mut out = CountTable::zeros(self.rows / 2, self.cols);
        for r in 0..self.rows / 2 {
            for c in 0..self.cols {
                out.set(r, c, self.get(2 * r, c) + self.get(2 * r + 1, c));
            }
        }
        out
    }

    /// Halves the number of columns by summing adjacent pairs.
    fn coarsen_cols(&self) -> CountTable {
        debug_assert!(self.cols % 2 == 0);
        let mut out = CountTable::zeros(self.rows, self.cols / 2);
        for r in 0..self.rows {
            for c in 0..self.cols / 2 {
                out.set(r, c, self.get(r, 2 * c) + self.get(r, 2 * c + 1));
            }
        }
        out
    }
}

/// Row and column totals of a `2^k1 × 2^k2` table, with equal grand totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginSpec {
    rows: Vec<u64>,
    cols: Vec<u64>,
}

impl MarginSpec {
    pub fn new(rows: Vec<u64>, cols: Vec<u64>) -> Result<Self, MhgError> {
        if !rows.len().is_power_of_two() || !cols.len().is_power_of_two() {
            return Err(MhgError::NonDyadic { rows: rows.len(), cols: cols.len() });
        }
        let row_sum: u64 = rows.iter().sum();
        let col_sum: u64 = cols.iter().sum();
        if row_sum != col_sum {
            return Err(MhgError::UnequalSums { row_sum, col_sum });
        }
        Ok(Self { rows, cols })
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.rows
    }

    pub fn col_totals(&self) -> &[u64] {
        &self.cols
    }

    pub fn k1(&self) -> u32 {
        self.rows.len().trailing_zeros()
    }

    pub fn k2(&self) -> u32 {
        self.cols.len().trailing_zeros()
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().sum()
    }
}

/// The full coarse-to-fine cascade of aggregated tables: for every
/// `0 ≤ i ≤ k1` and `0 ≤ j ≤ k2`, the `2^i × 2^j` table of the `(i,j)`-stratum.
///
/// Consistency (each table aggregates its finer neighbours by pairing adjacent
/// rows or columns) is a construction invariant: both [`StrataCascade::from_finest`]
/// and [`mhg_sample`] produce consistent cascades, and
/// [`StrataCascade::from_tables`] rejects inconsistent input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataCascade {
    k1: u32,
    k2: u32,
    /// Indexed by `i * (k2+1) + j`.
    tables: Vec<CountTable>,
}

impl StrataCascade {
    /// Builds the cascade by aggregating a finest-level dyadic table.
    pub fn from_finest(finest: CountTable) -> Result<Self, MhgError> {
        if !finest.rows.is_power_of_two() || !finest.cols.is_power_of_two() {
            return Err(MhgError::NonDyadic { rows: finest.rows, cols: finest.cols });
        }
        let k1 = finest.rows.trailing_zeros();
        let k2 = finest.cols.trailing_zeros();
        let mut tables = vec![CountTable::zeros(1, 1); ((k1 + 1) * (k2 + 1)) as usize];
        let idx = |i: u32, j: u32| (i * (k2 + 1) + j) as usize;
        tables[idx(k1, k2)] = finest;
        for i in (0..k1).rev() {
            tables[idx(i, k2)] = tables[idx(i + 1, k2)].coarsen_rows();
        }
        for i in 0..=k1 {
            for j in (0..k2).rev() {
                tables[idx(i, j)] = tables[idx(i, j + 1)].coarsen_cols();
            }
        }
        Ok(Self { k1, k2, tables })
    }

    /// Builds a cascade from explicitly given strata, verifying every
    /// aggregation relation.
    pub fn from_tables(k1: u32, k2: u32, tables: Vec<CountTable>) -> Result<Self, MhgError> {
        let expected = ((k1 + 1) * (k2 + 1)) as usize;
        if tables.len() != expected {
            return Err(MhgError::CascadeShape { expected, got: tables.len() });
        }
        let cascade = Self { k1, k2, tables };
        for i in 0..=k1 {
            for j in 0..=k2 {
                let t = cascade.table(i, j);
                if t.rows != 1usize << i || t.cols != 1usize << j {
                    return Err(MhgError::CascadeShape { expected, got: tables_len_of(t) });
                }
                if i > 0 && cascade.table(i, j).coarsen_rows() != *cascade.table(i - 1, j) {
                    return Err(MhgError::InconsistentCascade { i, j, pi: i - 1, pj: j });
                }
                if j > 0 && cascade.table(i, j).coarsen_cols() != *cascade.table(i, j - 1) {
                    return Err(MhgError::InconsistentCascade { i, j, pi: i, pj: j - 1 });
                }
            }
        }
        Ok(cascade)
    }

    pub fn k1(&self) -> u32 {
        self.k1
    }

    pub fn k2(&self) -> u32 {
        self.k2
    }

    pub fn table(&self, i: u32, j: u32) -> &CountTable {
        &self.tables[(i * (self.k2 + 1) + j) as usize]
    }

    fn table_mut(&mut self, i: u32, j: u32) -> &mut CountTable {
        &mut self.tables[(i * (self.k2 + 1) + j) as usize]
    }

    /// The finest (level `(k1, k2)`) table.
    pub fn finest(&self) -> &CountTable {
        self.table(self.k1, self.k2)
    }

    /// The margins of the finest table.
    pub fn margins(&self) -> MarginSpec {
        MarginSpec {
            rows: self.table(self.k1, 0).cells().to_vec(),
            cols: self.table(0, self.k2).cells().to_vec(),
        }
    }
}

fn tables_len_of(t: &CountTable) -> usize {
    t.rows * t.cols
}

/// Log-pmf of the MHG distribution: the probability of `table` among all
/// tables sharing the margins `m`, under independence of the two variables.
///
/// `ln[ Π_r row_r! · Π_c col_c! / ( N! · Π_{r,c} cell_{r,c}! ) ]`.
pub fn mhg_logpmf_direct(table: &CountTable, m: &MarginSpec) -> Result<f64, MhgError> {
    if table.row_sums() != m.rows || table.col_sums() != m.cols {
        return Err(MhgError::MarginMismatch);
    }
    crate::exactstats::reserve_log_factorials(m.total() as usize);
    let mut lp = -log_factorial(m.total());
    for &r in &m.rows {
        lp += log_factorial(r);
    }
    for &c in &m.cols {
        lp += log_factorial(c);
    }
    for &cell in table.cells() {
        lp -= log_factorial(cell);
    }
    Ok(lp)
}

/// Log-pmf of the MHG distribution via the product-of-HG factorization: the
/// sum over every window `A` of every stratum `(i,j)` with `i < k1`, `j < k2`
/// of the HG log-pmf of `n(A00)` given the window's margins.
///
/// Windows with a degenerate margin have single-point support and contribute
/// exactly 0.
pub fn mhg_logpmf_factorized(cascade: &StrataCascade) -> f64 {
    crate::exactstats::reserve_log_factorials(cascade.table(0, 0).get(0, 0) as usize);
    let mut lp = 0.0;
    for i in 0..cascade.k1 {
        for j in 0..cascade.k2 {
            let fine = cascade.table(i + 1, j + 1);
            for rr in 0..1usize << i {
                for cc in 0..1usize << j {
                    let n00 = fine.get(2 * rr, 2 * cc);
                    let n01 = fine.get(2 * rr, 2 * cc + 1);
                    let n10 = fine.get(2 * rr + 1, 2 * cc);
                    let n11 = fine.get(2 * rr + 1, 2 * cc + 1);
                    let params = HgParams {
                        a: n00 + n01,
                        b: n00 + n10,
                        c: n00 + n01 + n10 + n11,
                    };
                    lp += crate::exactstats::hg_logpmf(n00, &params)
                        .expect("cascade cells are consistent, so n00 is in support");
                }
            }
        }
    }
    lp
}

/// Draws a margin-consistent table from the MHG distribution by the
/// sequential generative model: strata are generated in increasing resolution
/// `i + j` (and increasing `i` within a resolution), each window's top-left
/// quadrant drawn from the HG distribution fixed by its parent strata.
pub fn mhg_sample<R: Rng + ?Sized>(m: &MarginSpec, rng: &mut R) -> StrataCascade {
    let (k1, k2) = (m.k1(), m.k2());
    let mut cascade = StrataCascade {
        k1,
        k2,
        tables: vec![CountTable::zeros(1, 1); ((k1 + 1) * (k2 + 1)) as usize],
    };
    // Margin coarsenings populate the two boundary rows of the DAG.
    let mut rows = m.rows.clone();
    for i in (0..=k1).rev() {
        *cascade.table_mut(i, 0) = CountTable::new(rows.len(), 1, rows.clone());
        rows = rows.chunks(2).map(|p| p.iter().sum()).collect();
    }
    let mut cols = m.cols.clone();
    for j in (0..=k2).rev() {
        *cascade.table_mut(0, j) = CountTable::new(1, cols.len(), cols.clone());
        cols = cols.chunks(2).map(|p| p.iter().sum()).collect();
    }
    for r in 2..=(k1 + k2) {
        for i in 1..=k1.min(r - 1) {
            let j = r - i;
            if j > k2 {
                continue;
            }
            let mut fine = CountTable::zeros(1 << i, 1 << j);
            for rr in 0..1usize << (i - 1) {
                for cc in 0..1usize << (j - 1) {
                    let c = cascade.table(i - 1, j - 1).get(rr, cc);
                    let a = cascade.table(i, j - 1).get(2 * rr, cc);
                    let b = cascade.table(i - 1, j).get(rr, 2 * cc);
                    let params = HgParams::new(a, b, c)
                        .expect("parent strata are consistent, so a,b <= c");
                    let x = hg_sample(&params, rng);
                    fine.set(2 * rr, 2 * cc, x);
                    fine.set(2 * rr, 2 * cc + 1, a - x);
                    fine.set(2 * rr + 1, 2 * cc, b - x);
                    fine.set(2 * rr + 1, 2 * cc + 1, c + x - a - b);
                }
            }
            *cascade.table_mut(i, j) = fine;
        }
    }
    cascade
}
