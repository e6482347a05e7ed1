//! Dyadic binning of bivariate samples.
//!
//! The pipeline is: rank-transform each margin onto the lattice
//! `{0, 1/n, …, (n−1)/n}` (ties broken uniformly at random from a seeded
//! stream), bin the points into a `2^k1 × 2^k2` count grid, and answer any
//! window's 2×2 subtable in O(1) from a summed-area table. The grid uses
//! `2^(k1+k2)` counters regardless of the sample size.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactstats::Table2x2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },
    #[error("empty point set")]
    Empty,
    #[error("coordinate {value} at index {index} outside [0, 1)")]
    OutOfUnitBox { index: usize, value: f64 },
    #[error("stratum ({i},{j}) needs grid levels above ({k1},{k2})")]
    Resolution { i: u32, j: u32, k1: u32, k2: u32 },
    #[error("window index ({l1},{l2}) out of range for stratum ({i},{j})")]
    WindowIndex { i: u32, j: u32, l1: u64, l2: u64 },
    #[error("log-odds-ratio undefined: a quadrant has zero mass")]
    UndefinedLor,
    #[error("probability grid must be non-negative and sum to 1 (sum = {sum})")]
    BadProbGrid { sum: f64 },
}

/// A bivariate sample; both margins have the same length `n ≥ 1` and all
/// values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PointSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, GridError> {
        assert_eq!(x.len(), y.len(), "margins must have equal length");
        if x.is_empty() {
            return Err(GridError::Empty);
        }
        for (index, (&a, &b)) in x.iter().zip(&y).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(GridError::NonFinite { index });
            }
        }
        Ok(Self { x, y })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, GridError> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        false // n ≥ 1 by construction
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    /// Rescales both margins affinely onto `[0, 1)` using the data's own
    /// bounding box. A constant margin collapses to 0. This is the
    /// preprocessing used when the rank transform is explicitly disabled.
    pub fn normalize_unit(&self) -> PointSet {
        let scale = |v: &[f64]| -> Vec<f64> {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return vec![0.0; v.len()];
            }
            v.iter()
                .map(|&t| (((t - lo) / (hi - lo)) * (1.0 - f64::EPSILON)).min(1.0 - f64::EPSILON))
                .collect()
        };
        PointSet { x: scale(&self.x), y: scale(&self.y) }
    }

    /// Rescales into `[0, 1)` by a caller-supplied bounding box
    /// `(x_lo, x_hi, y_lo, y_hi)`; the top edge maps into the last cell.
    /// Points outside the box are an error.
    pub fn scale_to_unit(&self, bounds: (f64, f64, f64, f64)) -> Result<PointSet, GridError> {
        let (x_lo, x_hi, y_lo, y_hi) = bounds;
        let map = |v: &[f64], lo: f64, hi: f64| -> Result<Vec<f64>, GridError> {
            if !(hi > lo) {
                return Err(GridError::OutOfUnitBox { index: 0, value: hi });
            }
            v.iter()
                .enumerate()
                .map(|(index, &t)| {
                    if t < lo || t > hi {
                        Err(GridError::OutOfUnitBox { index, value: t })
                    } else {
                        Ok((((t - lo) / (hi - lo)) * (1.0 - f64::EPSILON)).min(1.0 - f64::EPSILON))
                    }
                })
                .collect()
        };
        Ok(PointSet { x: map(&self.x, x_lo, x_hi)?, y: map(&self.y, y_lo, y_hi)? })
    }
}

/// Ranks one margin onto `{0, 1/n, …, (n−1)/n}` with uniformly random tie
/// breaking from `rng`.
fn rank_margin<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps tied entries in input order, so the shuffle below is
    // the only source of randomness.
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].shuffle(rng);
        }
        start = end;
    }
    let mut out = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = rank as f64 / n as f64;
    }
    out
}

/// Empirical CDF (rank) transform of both margins.
///
/// Each margin independently becomes a permutation of `{0, 1/n, …, (n−1)/n}`;
/// ties are broken uniformly at random using `rng`, so the output is
/// deterministic given the seed. The transform is invariant under strictly
/// increasing maps of either margin.
pub fn rank_transform<R: Rng + ?Sized>(points: &PointSet, rng: &mut R) -> PointSet {
    let x = rank_margin(&points.x, rng);
    let y = rank_margin(&points.y, rng);
    PointSet { x, y }
}

/// A `2^k1 × 2^k2` grid of cell counts with a summed-area table.
///
/// Rows index the X margin and columns the Y margin. Immutable once built;
/// any number of threads may read it concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountGrid {
    k1: u32,
    k2: u32,
    rows: usize,
    cols: usize,
    cells: Vec<u64>,
    /// `(rows+1) × (cols+1)`; `sat[r][c]` = count of cells with row < r, col < c.
    sat: Vec<u64>,
    n: u64,
}

/// Bins points with coordinates in `[0, 1)²` into a level-`(k1,k2)` grid.
///
/// Cell `(l1, l2)` (1-based) receives the points with
/// `floor(x·2^k1) = l1−1` and `floor(y·2^k2) = l2−1`.
pub fn build_grid(points: &PointSet, k1: u32, k2: u32) -> Result<CountGrid, GridError> {
    let rows = 1usize << k1;
    let cols = 1usize << k2;
    let mut cells = vec![0u64; rows * cols];
    let (rf, cf) = (rows as f64, cols as f64);
    for (index, (&x, &y)) in points.x.iter().zip(&points.y).enumerate() {
        if !(0.0..1.0).contains(&x) {
            return Err(GridError::OutOfUnitBox { index, value: x });
        }
        if !(0.0..1.0).contains(&y) {
            return Err(GridError::OutOfUnitBox { index, value: y });
        }
        // Multiplication by a power of two is exact, so x < 1 stays < 2^k1.
        let r = (x * rf) as usize;
        let c = (y * cf) as usize;
        cells[r * cols + c] += 1;
    }
    Ok(CountGrid::from_cells(k1, k2, cells))
}

impl CountGrid {
    fn from_cells(k1: u32, k2: u32, cells: Vec<u64>) -> Self {
        let rows = 1usize << k1;
        let cols = 1usize << k2;
        debug_assert_eq!(cells.len(), rows * cols);
        let mut sat = vec![0u64; (rows + 1) * (cols + 1)];
        for r in 0..rows {
            let mut run = 0u64;
            for c in 0..cols {
                run += cells[r * cols + c];
                sat[(r + 1) * (cols + 1) + (c + 1)] = sat[r * (cols + 1) + (c + 1)] + run;
            }
        }
        let n = sat[(rows + 1) * (cols + 1) - 1];
        Self { k1, k2, rows, cols, cells, sat, n }
    }

    pub fn k1(&self) -> u32 {
        self.k1
    }

    pub fn k2(&self) -> u32 {
        self.k2
    }

    /// Total number of binned points.
    pub fn total(&self) -> u64 {
        self.n
    }

    /// Count in cell `(r, c)` (0-based).
    pub fn cell(&self, r: usize, c: usize) -> u64 {
        self.cells[r * self.cols + c]
    }

    /// Sum of the cells in `[r0, r1) × [c0, c1)` in O(1).
    pub fn rect_sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> u64 {
        let w = self.cols + 1;
        self.sat[r1 * w + c1] + self.sat[r0 * w + c0]
            - self.sat[r1 * w + c0]
            - self.sat[r0 * w + c1]
    }
}

/// A level-`(i,j)` dyadic window together with its 2×2 subtable.
///
/// `l1 ∈ 1..=2^i` and `l2 ∈ 1..=2^j` locate the window; the subtable counts
/// the four quadrants obtained by halving the window along each axis, with
/// `n00` the low/low quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub i: u32,
    pub j: u32,
    pub l1: u64,
    pub l2: u64,
    pub table: Table2x2,
}

impl Window {
    /// Resolution of the stratum this window belongs to.
    pub fn resolution(&self) -> u32 {
        self.i + self.j
    }

    /// The window's rectangle `[x0, x1) × [y0, y1)` in the unit square.
    pub fn rect(&self) -> (f64, f64, f64, f64) {
        let wx = 1.0 / (1u64 << self.i) as f64;
        let wy = 1.0 / (1u64 << self.j) as f64;
        let x0 = (self.l1 - 1) as f64 * wx;
        let y0 = (self.l2 - 1) as f64 * wy;
        (x0, x0 + wx, y0, y0 + wy)
    }
}

/// Extracts the level-`(i,j)` window `(l1, l2)` with its quadrant counts,
/// computed from the summed-area table in O(1).
///
/// Requires `i ≤ k1−1` and `j ≤ k2−1`: the 2×2 split needs one extra level of
/// grid resolution on each axis.
pub fn window_table(g: &CountGrid, i: u32, j: u32, l1: u64, l2: u64) -> Result<Window, GridError> {
    if i + 1 > g.k1 || j + 1 > g.k2 {
        return Err(GridError::Resolution { i, j, k1: g.k1, k2: g.k2 });
    }
    if l1 == 0 || l1 > (1 << i) || l2 == 0 || l2 > (1 << j) {
        return Err(GridError::WindowIndex { i, j, l1, l2 });
    }
    // Window extent in finest-grid cells, split at the midpoint.
    let rh = 1usize << (g.k1 - i - 1); // half-height in rows
    let ch = 1usize << (g.k2 - j - 1);
    let r0 = (l1 as usize - 1) * 2 * rh;
    let c0 = (l2 as usize - 1) * 2 * ch;
    let table = Table2x2 {
        n00: g.rect_sum(r0, r0 + rh, c0, c0 + ch),
        n01: g.rect_sum(r0, r0 + rh, c0 + ch, c0 + 2 * ch),
        n10: g.rect_sum(r0 + rh, r0 + 2 * rh, c0, c0 + ch),
        n11: g.rect_sum(r0 + rh, r0 + 2 * rh, c0 + ch, c0 + 2 * ch),
    };
    Ok(Window { i, j, l1, l2, table })
}

/// A probability mass function on a `2^k1 × 2^k2` grid; the population-level
/// counterpart of [`CountGrid`], used to state population properties of the
/// scan (all quadrant masses of all windows, log-odds-ratios, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    k1: u32,
    k2: u32,
    rows: usize,
    cols: usize,
    mass: Vec<f64>,
}

impl ProbGrid {
    /// Validates non-negativity and total mass 1 (within 1e-9).
    pub fn new(k1: u32, k2: u32, mass: Vec<f64>) -> Result<Self, GridError> {
        let rows = 1usize << k1;
        let cols = 1usize << k2;
        assert_eq!(mass.len(), rows * cols, "mass vector has wrong length");
        let sum: f64 = mass.iter().sum();
        if mass.iter().any(|&m| m < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(GridError::BadProbGrid { sum });
        }
        Ok(Self { k1, k2, rows, cols, mass })
    }

    /// The product measure `u ⊗ v` (both factors are normalized first).
    pub fn product(u: &[f64], v: &[f64]) -> Result<Self, GridError> {
        let k1 = u.len().trailing_zeros();
        let k2 = v.len().trailing_zeros();
        assert!(u.len().is_power_of_two() && v.len().is_power_of_two());
        let su: f64 = u.iter().sum();
        let sv: f64 = v.iter().sum();
        let mass = u
            .iter()
            .flat_map(|&a| v.iter().map(move |&b| (a / su) * (b / sv)))
            .collect();
        Self::new(k1, k2, mass)
    }

    pub fn k1(&self) -> u32 {
        self.k1
    }

    pub fn k2(&self) -> u32 {
        self.k2
    }

    pub fn mass_at(&self, r: usize, c: usize) -> f64 {
        self.mass[r * self.cols + c]
    }

    /// Total mass of the cells in `[r0, r1) × [c0, c1)`.
    pub fn rect_mass(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let mut total = 0.0;
        for r in r0..r1 {
            for c in c0..c1 {
                total += self.mass[r * self.cols + c];
            }
        }
        total
    }
}

/// Population log-odds-ratio `θ(A) = ln[F(A00)F(A11) / (F(A10)F(A01))]` of
/// the level-`(i,j)` window `(l1, l2)` under `pmf`.
///
/// Signals [`GridError::UndefinedLor`] when any quadrant has zero mass rather
/// than propagating infinities.
pub fn population_lor(
    pmf: &ProbGrid,
    i: u32,
    j: u32,
    l1: u64,
    l2: u64,
) -> Result<f64, GridError> {
    if i + 1 > pmf.k1 || j + 1 > pmf.k2 {
        return Err(GridError::Resolution { i, j, k1: pmf.k1, k2: pmf.k2 });
    }
    if l1 == 0 || l1 > (1 << i) || l2 == 0 || l2 > (1 << j) {
        return Err(GridError::WindowIndex { i, j, l1, l2 });
    }
    let rh = 1usize << (pmf.k1 - i - 1);
    let ch = 1usize << (pmf.k2 - j - 1);
    let r0 = (l1 as usize - 1) * 2 * rh;
    let c0 = (l2 as usize - 1) * 2 * ch;
    let f00 = pmf.rect_mass(r0, r0 + rh, c0, c0 + ch);
    let f01 = pmf.rect_mass(r0, r0 + rh, c0 + ch, c0 + 2 * ch);
    let f10 = pmf.rect_mass(r0 + rh, r0 + 2 * rh, c0, c0 + ch);
    let f11 = pmf.rect_mass(r0 + rh, r0 + 2 * rh, c0 + ch, c0 + 2 * ch);
    if f00 <= 0.0 || f01 <= 0.0 || f10 <= 0.0 || f11 <= 0.0 {
        return Err(GridError::UndefinedLor);
    }
    Ok(f00.ln() + f11.ln() - f01.ln() - f10.ln())
}
