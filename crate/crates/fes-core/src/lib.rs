//! Fisher exact scanning (FES): an exact, resampling-free test of independence
//! between two scalar variables that also localizes the dependency.
//!
//! The method scans the unit square with dyadic windows, runs a two-sided
//! Fisher's exact test on the 2×2 subtable of every window that passes a
//! sample-size screening rule, and combines the resulting p-values with a
//! three-stage Šidák (or Bonferroni) correction: first within each stratum of
//! equally-shaped windows, then across the strata of a resolution, and finally
//! across resolutions. Because the multivariate hypergeometric likelihood of a
//! margin-conditioned contingency table factorizes into the product of the
//! univariate hypergeometric likelihoods on those windows, the per-window
//! p-values are mutually independent under the null (up to discreteness) and
//! the correction controls the family-wise error rate without any resampling.
//!
//! Module map:
//!
//! * [`exactstats`] — log-space hypergeometric pmf, two-sided Fisher exact
//!   p-values (with optional mid-p correction), and hypergeometric sampling.
//! * [`grid`] — marginal rank transform, dyadic count grids with a summed-area
//!   table, and O(1) window subtable extraction.
//! * [`mhg`] — the multivariate hypergeometric likelihood, its factorization
//!   into per-window terms, and the coarse-to-fine sequential sampler.
//! * [`scanner`] — the scanning procedure itself: screening, the three-stage
//!   correction, the overall decision, and significant-window reporting.
//! * [`simlab`] — scenario generators and a Monte Carlo harness for power and
//!   error-rate studies, plus a permutation-Pearson baseline.

pub mod exactstats;
pub mod grid;
pub mod mhg;
pub mod scanner;
pub mod simlab;

pub use exactstats::{fisher_two_sided_p, hg_logpmf, hg_sample, log_choose, HgParams, Table2x2};
pub use grid::{build_grid, population_lor, rank_transform, CountGrid, PointSet, ProbGrid, Window};
pub use mhg::{mhg_logpmf_direct, mhg_logpmf_factorized, mhg_sample, CountTable, MarginSpec, StrataCascade};
pub use scanner::{
    scan, scan_points, sidak_combine, significant_windows, Correction, FesConfig, ScanReport,
    WindowResult,
};
pub use simlab::{estimate_power, pearson_permutation_p, MonteCarloResult, Scenario, ScenarioKind};
