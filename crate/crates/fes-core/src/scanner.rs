//! The scanning procedure: screened coarse-to-fine window testing with a
//! three-stage multiplicity correction.
//!
//! For every stratum `(i,j)` with `i + j ≤ M`, each window passing the
//! screening rule gets a two-sided Fisher exact p-value. Within a stratum the
//! minimum p-value over the `L(i,j)` tested windows is corrected to `p(i,j)`;
//! across the strata of a resolution `r` the minimum `p(i,j)` is corrected to
//! `p_resol(r)` over the `T(r)` strata that tested anything; and the overall
//! p-value corrects the minimum `p_resol(r)` over all `M + 1` resolutions.
//! The same three exponents, inverted, give each stratum its window-level
//! significance threshold `α(i,j)`, which makes "reject overall" and "at
//! least one significant window" the same event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactstats::{fisher_two_sided_p, Table2x2};
use crate::grid::{build_grid, rank_transform, window_table, CountGrid, GridError, PointSet, Window};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "sample size {n} too small for derived defaults (needs n >= 20); set k1/k2 explicitly"
    )]
    SampleTooSmall { n: usize },
    #[error("grid carries levels ({gk1},{gk2}) but the config needs ({k1},{k2})")]
    GridTooCoarse { gk1: u32, gk2: u32, k1: u32, k2: u32 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Family-wise correction flavor used at all three stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    Sidak,
    Bonferroni,
}

impl std::str::FromStr for Correction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sidak" => Ok(Correction::Sidak),
            "bonferroni" => Ok(Correction::Bonferroni),
            other => Err(format!("unknown correction '{other}' (expected sidak|bonferroni)")),
        }
    }
}

/// Scan configuration.
///
/// `k1`/`k2` are the marginal partition depths of the grid, `max_resolution`
/// is the deepest scanned resolution `M ≤ k1 + k2 − 2`, `min_count` (`s`) and
/// `min_margin` (`s'`) are the screening thresholds, and `seed` drives the
/// rank transform's tie breaking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FesConfig {
    pub k1: u32,
    pub k2: u32,
    pub max_resolution: u32,
    pub min_count: u64,
    pub min_margin: u64,
    pub alpha: f64,
    pub correction: Correction,
    pub midp: bool,
    pub seed: u64,
}

impl FesConfig {
    /// The recommended configuration for a sample of size `n`:
    /// `k1 = k2 = M + 1 = ⌊log2(n/10)⌋`, screening at `s = 25`, `s' = 10`,
    /// mid-p Šidák at level 0.05.
    pub fn for_sample_size(n: usize) -> Result<Self, ScanError> {
        if n < 20 {
            return Err(ScanError::SampleTooSmall { n });
        }
        let k = (n as f64 / 10.0).log2().floor() as u32;
        Ok(Self {
            k1: k,
            k2: k,
            max_resolution: k - 1,
            min_count: 25,
            min_margin: 10,
            alpha: 0.05,
            correction: Correction::Sidak,
            midp: true,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(ScanError::Config("k1 and k2 must be at least 1".into()));
        }
        if self.max_resolution > self.k1 + self.k2 - 2 {
            return Err(ScanError::Config(format!(
                "max_resolution {} exceeds k1+k2-2 = {}",
                self.max_resolution,
                self.k1 + self.k2 - 2
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ScanError::Config(format!("alpha {} not in (0,1)", self.alpha)));
        }
        Ok(())
    }
}

/// One scanned window: whether it passed screening, its nominal p-value, the
/// stratum's adjusted threshold `α(i,j)` (absent when the stratum tested
/// nothing), and the significance flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: Window,
    pub screened_in: bool,
    pub p: Option<f64>,
    pub adjusted_threshold: Option<f64>,
    pub significant: bool,
}

/// Per-stratum summary: the test counter `L(i,j)` and corrected `p(i,j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub i: u32,
    pub j: u32,
    /// Number of windows tested in this stratum, `L(i,j)`.
    pub tested: u64,
    /// Šidák/Bonferroni-corrected minimum p-value, absent when `tested = 0`.
    pub p: Option<f64>,
}

/// Per-resolution summary: the stratum counter `T(r)` and corrected
/// `p_resol(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSummary {
    pub r: u32,
    /// Number of strata at this resolution with at least one test, `T(r)`.
    pub tested_strata: u64,
    /// Corrected p-value for the resolution, absent when `tested_strata = 0`.
    pub p: Option<f64>,
}

/// Complete result of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub n: u64,
    pub config: FesConfig,
    pub strata: Vec<StratumSummary>,
    pub resolutions: Vec<ResolutionSummary>,
    pub p_overall: f64,
    /// True iff `p_overall < alpha`.
    pub reject: bool,
    /// Diagnostic: no window anywhere passed screening, so `p_overall = 1`.
    pub no_tests: bool,
    /// Every scanned window, stratum-major and row-major within a stratum.
    pub windows: Vec<WindowResult>,
}

impl ScanReport {
    /// The windows flagged significant after multiplicity adjustment.
    pub fn significant(&self) -> impl Iterator<Item = &WindowResult> {
        self.windows.iter().filter(|w| w.significant)
    }
}

/// Screening rule: test a window iff `n(A) > s` and every row/column margin
/// of its 2×2 subtable exceeds `s'`.
///
/// The rule depends on the window's margins only, which is what keeps the
/// per-window p-values independent under the null.
pub fn screen(t: &Table2x2, min_count: u64, min_margin: u64) -> bool {
    t.total() > min_count
        && t.row0() > min_margin
        && t.row1() > min_margin
        && t.col0() > min_margin
        && t.col1() > min_margin
}

/// Corrects a minimum p-value over `m ≥ 1` independent tests:
/// `1 − (1 − p_min)^m` (Šidák) or `min(1, m·p_min)` (Bonferroni).
pub fn sidak_combine(p_min: f64, m: u64, correction: Correction) -> f64 {
    assert!(m >= 1, "cannot combine over an empty family");
    match correction {
        Correction::Sidak => -((m as f64) * (-p_min).ln_1p()).exp_m1(),
        Correction::Bonferroni => (m as f64 * p_min).min(1.0),
    }
}

/// The window-level significance threshold `α(i,j)` for a stratum whose three
/// correction exponents multiply to `m = (M+1)·T(r)·L(i,j)`.
fn stratum_threshold(alpha: f64, m: u64, correction: Correction) -> f64 {
    match correction {
        Correction::Sidak => -((-alpha).ln_1p() / m as f64).exp_m1(),
        Correction::Bonferroni => alpha / m as f64,
    }
}

struct StratumAcc {
    i: u32,
    j: u32,
    tested: u64,
    min_p: f64,
    /// Range of this stratum's windows in the report's window list.
    window_range: (usize, usize),
}

/// Runs the scan over `grid`.
///
/// The grid must carry one extra level beyond the deepest scanned stratum on
/// each axis (`cfg.k1 ≤ grid.k1`, `cfg.k2 ≤ grid.k2`). Strata are visited in
/// increasing resolution `r = i + j` and increasing `i` within a resolution;
/// windows within a stratum in row-major order. The enumeration order never
/// affects the decision, only the report layout.
pub fn scan(grid: &CountGrid, cfg: &FesConfig) -> Result<ScanReport, ScanError> {
    cfg.validate()?;
    if cfg.k1 > grid.k1() || cfg.k2 > grid.k2() {
        return Err(ScanError::GridTooCoarse {
            gk1: grid.k1(),
            gk2: grid.k2(),
            k1: cfg.k1,
            k2: cfg.k2,
        });
    }
    crate::exactstats::reserve_log_factorials(grid.total() as usize);

    let m_res = cfg.max_resolution;
    let mut windows: Vec<WindowResult> = Vec::new();
    let mut strata: Vec<StratumAcc> = Vec::new();
    let mut resolutions: Vec<ResolutionSummary> = Vec::new();
    let mut min_p_resol = f64::INFINITY;
    let mut any_tested = false;

    for r in 0..=m_res {
        let mut min_p_stratum_at_r = f64::INFINITY;
        let mut tested_strata = 0u64;
        let stratum_start = strata.len();
        for i in 0..=r.min(cfg.k1 - 1) {
            let j = r - i;
            if j > cfg.k2 - 1 {
                continue;
            }
            let start = windows.len();
            let mut tested = 0u64;
            let mut min_p = f64::INFINITY;
            for l1 in 1..=(1u64 << i) {
                for l2 in 1..=(1u64 << j) {
                    let w = window_table(grid, i, j, l1, l2)?;
                    if screen(&w.table, cfg.min_count, cfg.min_margin) {
                        let p = fisher_two_sided_p(&w.table, cfg.midp);
                        tested += 1;
                        min_p = min_p.min(p);
                        windows.push(WindowResult {
                            window: w,
                            screened_in: true,
                            p: Some(p),
                            adjusted_threshold: None,
                            significant: false,
                        });
                    } else {
                        windows.push(WindowResult {
                            window: w,
                            screened_in: false,
                            p: None,
                            adjusted_threshold: None,
                            significant: false,
                        });
                    }
                }
            }
            strata.push(StratumAcc { i, j, tested, min_p, window_range: (start, windows.len()) });
            if tested > 0 {
                tested_strata += 1;
                let p_stratum = sidak_combine(min_p, tested, cfg.correction);
                min_p_stratum_at_r = min_p_stratum_at_r.min(p_stratum);
            }
        }
        let p_resol = if tested_strata > 0 {
            any_tested = true;
            let p = sidak_combine(min_p_stratum_at_r, tested_strata, cfg.correction);
            min_p_resol = min_p_resol.min(p);
            Some(p)
        } else {
            None
        };
        resolutions.push(ResolutionSummary { r, tested_strata, p: p_resol });
        // Thresholds for this resolution's strata are now determined.
        for acc in &strata[stratum_start..] {
            if acc.tested == 0 {
                continue;
            }
            let exponent = (m_res as u64 + 1) * tested_strata * acc.tested;
            let threshold = stratum_threshold(cfg.alpha, exponent, cfg.correction);
            for w in &mut windows[acc.window_range.0..acc.window_range.1] {
                if w.screened_in {
                    let p = w.p.expect("screened-in windows carry a p-value");
                    w.adjusted_threshold = Some(threshold);
                    w.significant = p < threshold;
                }
            }
        }
    }

    // The outer exponent is always M+1, even when some resolutions tested
    // nothing: the conservative direction.
    let p_overall = if any_tested {
        sidak_combine(min_p_resol, m_res as u64 + 1, cfg.correction)
    } else {
        1.0
    };

    Ok(ScanReport {
        n: grid.total(),
        config: cfg.clone(),
        strata: strata
            .iter()
            .map(|a| StratumSummary {
                i: a.i,
                j: a.j,
                tested: a.tested,
                p: (a.tested > 0).then(|| sidak_combine(a.min_p, a.tested, cfg.correction)),
            })
            .collect(),
        resolutions,
        p_overall,
        reject: p_overall < cfg.alpha,
        no_tests: !any_tested,
        windows,
    })
}

/// Convenience pipeline: optional rank transform (seeded from `cfg.seed`),
/// grid construction at `(cfg.k1, cfg.k2)`, then [`scan`].
///
/// With `rank = false` the points are instead rescaled affinely onto the unit
/// square by their own bounding box.
pub fn scan_points(points: &PointSet, cfg: &FesConfig, rank: bool) -> Result<ScanReport, ScanError> {
    use rand::SeedableRng;
    let prepared = if rank {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        rank_transform(points, &mut rng)
    } else {
        points.normalize_unit()
    };
    let grid = build_grid(&prepared, cfg.k1, cfg.k2)?;
    scan(&grid, cfg)
}

/// The windows deemed significant by `report`, in scan order.
pub fn significant_windows(report: &ScanReport) -> Vec<WindowResult> {
    report.significant().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn screening_rule_examples() {
        assert!(screen(&Table2x2::new(10, 10, 10, 10), 25, 10));
        assert!(!screen(&Table2x2::new(25, 0, 0, 0), 25, 10));
        // n = 26 > 25 but one row margin is zero.
        assert!(!screen(&Table2x2::new(13, 13, 0, 0), 25, 10));
        // Strict comparison: n(A) = s is skipped.
        assert!(!screen(&Table2x2::new(7, 6, 6, 6), 25, 10));
    }

    #[test]
    fn sidak_combine_examples() {
        let p = sidak_combine(0.01, 10, Correction::Sidak);
        assert!((p - 0.0956179250).abs() < 1e-10, "got {p}");
        assert_eq!(sidak_combine(0.37, 1, Correction::Sidak), 0.37);
        assert_eq!(sidak_combine(0.0, 17, Correction::Sidak), 0.0);
        assert_eq!(sidak_combine(0.2, 3, Correction::Bonferroni), 0.6000000000000001);
        assert_eq!(sidak_combine(0.5, 4, Correction::Bonferroni), 1.0);
    }

    #[test]
    #[should_panic(expected = "empty family")]
    fn sidak_combine_rejects_empty_family() {
        sidak_combine(0.5, 0, Correction::Sidak);
    }

    #[test]
    fn stratum_threshold_example() {
        // alpha = 0.05, M+1 = 5, T = 3, L = 16  =>  1 - 0.95^(1/240)
        let t = stratum_threshold(0.05, 5 * 3 * 16, Correction::Sidak);
        let direct = 1.0 - 0.95f64.powf(1.0 / 240.0);
        assert!((t - direct).abs() < 1e-15, "got {t}, direct {direct}");
        assert!((t - 2.137e-4).abs() < 1e-7, "got {t}");
        assert!((stratum_threshold(0.05, 1, Correction::Sidak) - 0.05).abs() < 1e-15);
    }

    fn diagonal_points(n: usize) -> PointSet {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        PointSet::new(xs.clone(), xs).unwrap()
    }

    #[test]
    fn scan_detects_pure_diagonal() {
        let pts = diagonal_points(300);
        let cfg = FesConfig::for_sample_size(300).unwrap();
        let report = scan_points(&pts, &cfg, true).unwrap();
        assert!(report.reject);
        assert!(report.p_overall < 1e-6, "p_overall {}", report.p_overall);
        assert!(!significant_windows(&report).is_empty());
    }

    #[test]
    fn scan_single_resolution_degenerates_to_one_stratum() {
        let pts = diagonal_points(200);
        let mut cfg = FesConfig::for_sample_size(200).unwrap();
        cfg.max_resolution = 0;
        let report = scan_points(&pts, &cfg, true).unwrap();
        assert_eq!(report.resolutions.len(), 1);
        let stratum_p = report.strata[0].p.unwrap();
        // M = 0: the overall p-value is the single stratum's corrected value.
        assert!((report.p_overall - stratum_p).abs() < 1e-15);
    }

    #[test]
    fn scan_with_everything_screened_out() {
        let pts = diagonal_points(30);
        let mut cfg = FesConfig::for_sample_size(30).unwrap();
        cfg.min_count = 1000; // nothing can pass
        let report = scan_points(&pts, &cfg, true).unwrap();
        assert!(report.no_tests);
        assert_eq!(report.p_overall, 1.0);
        assert!(!report.reject);
        assert!(significant_windows(&report).is_empty());
    }

    #[test]
    fn scan_grid_too_coarse_is_an_error() {
        let pts = diagonal_points(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rank_transform(&pts, &mut rng);
        let grid = build_grid(&t, 2, 2).unwrap();
        let cfg = FesConfig::for_sample_size(100).unwrap(); // k1 = k2 = 3
        assert!(matches!(scan(&grid, &cfg), Err(ScanError::GridTooCoarse { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(matches!(FesConfig::for_sample_size(19), Err(ScanError::SampleTooSmall { .. })));
        let mut cfg = FesConfig::for_sample_size(1000).unwrap();
        assert_eq!(cfg.k1, 6);
        assert_eq!(cfg.max_resolution, 5);
        cfg.max_resolution = 20;
        assert!(cfg.validate().is_err());
        cfg.max_resolution = 5;
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bonferroni_is_no_less_conservative() {
        let pts = diagonal_points(300);
        let mut cfg = FesConfig::for_sample_size(300).unwrap();
        let sidak = scan_points(&pts, &cfg, true).unwrap();
        cfg.correction = Correction::Bonferroni;
        let bonf = scan_points(&pts, &cfg, true).unwrap();
        assert!(bonf.p_overall >= sidak.p_overall - 1e-15);
        assert!(bonf.reject, "the diagonal is extreme enough for either correction");
    }

    #[test]
    fn window_counters_match_report_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let pts = PointSet::new(xs, ys).unwrap();
        let cfg = FesConfig::for_sample_size(n).unwrap();
        let report = scan_points(&pts, &cfg, true).unwrap();

        for s in &report.strata {
            let l = report
                .windows
                .iter()
                .filter(|w| w.window.i == s.i && w.window.j == s.j && w.screened_in)
                .count() as u64;
            assert_eq!(l, s.tested);
        }
        for r in &report.resolutions {
            let t = report
                .strata
                .iter()
                .filter(|s| s.i + s.j == r.r && s.tested > 0)
                .count() as u64;
            assert_eq!(t, r.tested_strata);
        }
        // Stratum-major enumeration: full stratum sizes when skipped windows
        // are counted too.
        for s in &report.strata {
            let all = report
                .windows
                .iter()
                .filter(|w| w.window.i == s.i && w.window.j == s.j)
                .count() as u64;
            assert_eq!(all, 1u64 << (s.i + s.j));
        }
    }

    proptest! {
        /// Decision equivalence: the overall rejection and the existence of a
        /// significant window are the same event.
        #[test]
        fn reject_iff_significant_window_exists(
            seed in 0u64..300,
            n in 60usize..400,
            dependent in proptest::bool::ANY,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = if dependent {
                xs.iter().map(|&x| x + 0.05 * rng.random::<f64>()).collect()
            } else {
                (0..n).map(|_| rng.random::<f64>()).collect()
            };
            let pts = PointSet::new(xs, ys).unwrap();
            let cfg = FesConfig::for_sample_size(n).unwrap().with_seed(seed);
            let report = scan_points(&pts, &cfg, true).unwrap();
            prop_assert_eq!(report.reject, significant_windows(&report).len() > 0);
            prop_assert_eq!(report.reject, report.p_overall < cfg.alpha);
        }

        /// Significant windows always carry a p-value below their threshold.
        #[test]
        fn significant_implies_screened_and_below_threshold(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 300;
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| x * 0.7 + 0.3 * rng.random::<f64>()).collect();
            let pts = PointSet::new(xs, ys).unwrap();
            let cfg = FesConfig::for_sample_size(n).unwrap().with_seed(seed);
            let report = scan_points(&pts, &cfg, true).unwrap();
            for w in &report.windows {
                if w.significant {
                    prop_assert!(w.screened_in);
                    prop_assert!(w.p.unwrap() < w.adjusted_threshold.unwrap());
                }
                if !w.screened_in {
                    prop_assert!(w.p.is_none());
                    prop_assert!(!w.significant);
                }
            }
        }
    }
}
