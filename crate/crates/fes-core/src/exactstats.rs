//! Exact log-space combinatorics for 2×2 contingency tables.
//!
//! Everything here is computed through a shared table of log-factorials, so a
//! pmf evaluation is a handful of array lookups. The table is grown lazily
//! behind a [`RwLock`]; callers that are about to hammer it (the scanner, the
//! Monte Carlo harness) should call [`reserve_log_factorials`] once with the
//! dataset size so the hot path only ever takes read locks.

use std::sync::RwLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from the exact-statistics primitives.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    /// `k` outside `0..=n` in a binomial coefficient.
    #[error("log_choose domain error: k={k} not in 0..={n}")]
    ChooseDomain { n: u64, k: u64 },
    /// Inconsistent hypergeometric parameters.
    #[error("invalid hypergeometric parameters: a={a}, b={b}, c={c}")]
    BadParams { a: u64, b: u64, c: u64 },
    /// Query outside the support of the distribution.
    #[error("x={x} outside hypergeometric support {lo}..={hi}")]
    OutsideSupport { x: u64, lo: u64, hi: u64 },
}

// ln(k!) for k = 0..len, built by compensated (Kahan) summation so each entry
// stays within a few ulps of the true value even for entries in the millions.
static LN_FACT: RwLock<Vec<f64>> = RwLock::new(Vec::new());

fn extend_table(upto: usize) {
    let mut table = LN_FACT.write().unwrap();
    if table.is_empty() {
        table.push(0.0); // ln 0! = 0
    }
    if table.len() > upto {
        return;
    }
    // Rebuild the running compensation from the last stored entry; the
    // residual lost there is below the accuracy we promise.
    let mut sum = *table.last().unwrap();
    let mut comp = 0.0f64;
    let start = table.len();
    table.reserve(upto + 1 - start);
    for k in start..=upto {
        let term = (k as f64).ln() - comp;
        let next = sum + term;
        comp = (next - sum) - term;
        sum = next;
        table.push(sum);
    }
}

/// Pre-sizes the shared log-factorial table to cover factorials up to `n`.
///
/// After this call, concurrent readers never block on table growth as long as
/// their arguments stay at or below `n`.
pub fn reserve_log_factorials(n: usize) {
    if LN_FACT.read().unwrap().len() <= n {
        extend_table(n);
    }
}

/// Runs `f` with a log-factorial table guaranteed to cover `0..=upto`.
fn with_ln_fact<R>(upto: u64, f: impl FnOnce(&[f64]) -> R) -> R {
    let upto = upto as usize;
    {
        let table = LN_FACT.read().unwrap();
        if table.len() > upto {
            return f(&table);
        }
    }
    extend_table(upto);
    f(&LN_FACT.read().unwrap())
}

#[inline]
fn ln_choose_in(table: &[f64], n: u64, k: u64) -> f64 {
    table[n as usize] - table[k as usize] - table[(n - k) as usize]
}

/// Natural-log binomial coefficient `ln C(n, k)`.
pub fn log_choose(n: u64, k: u64) -> Result<f64, StatsError> {
    if k > n {
        return Err(StatsError::ChooseDomain { n, k });
    }
    Ok(with_ln_fact(n, |t| ln_choose_in(t, n, k)))
}

/// Natural-log factorial `ln n!`.
pub fn log_factorial(n: u64) -> f64 {
    with_ln_fact(n, |t| t[n as usize])
}

/// Parameters of the hypergeometric distribution `HG_{a,b,c}`: the law of the
/// top-left cell of a 2×2 table with first-row total `a`, first-column total
/// `b`, and grand total `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HgParams {
    /// First-row total.
    pub a: u64,
    /// First-column total.
    pub b: u64,
    /// Grand total.
    pub c: u64,
}

impl HgParams {
    /// Validates `0 ≤ a ≤ c` and `0 ≤ b ≤ c`.
    pub fn new(a: u64, b: u64, c: u64) -> Result<Self, StatsError> {
        if a > c || b > c {
            return Err(StatsError::BadParams { a, b, c });
        }
        Ok(Self { a, b, c })
    }

    /// Support of the distribution: `max(0, a+b−c) ..= min(a, b)`.
    pub fn support(&self) -> (u64, u64) {
        let lo = (self.a + self.b).saturating_sub(self.c);
        (lo, self.a.min(self.b))
    }

    /// Exact mean `a·b/c` (0 when `c = 0`).
    pub fn mean(&self) -> f64 {
        if self.c == 0 {
            0.0
        } else {
            self.a as f64 * self.b as f64 / self.c as f64
        }
    }

    /// A mode of the distribution, clamped into the support.
    pub fn mode(&self) -> u64 {
        let (lo, hi) = self.support();
        let m = ((self.a + 1) as f64 * (self.b + 1) as f64 / (self.c + 2) as f64).floor() as u64;
        m.clamp(lo, hi)
    }
}

#[inline]
fn hg_logpmf_in(table: &[f64], x: u64, p: &HgParams) -> f64 {
    ln_choose_in(table, p.a, x) + ln_choose_in(table, p.c - p.a, p.b - x)
        - ln_choose_in(table, p.c, p.b)
}

/// Log-pmf of `HG_{a,b,c}` at `x`: `ln[ C(a,x) C(c−a,b−x) / C(c,b) ]`.
///
/// `x` outside the support is a domain error; callers that need "probability
/// zero" semantics must handle those outcomes themselves.
pub fn hg_logpmf(x: u64, p: &HgParams) -> Result<f64, StatsError> {
    let (lo, hi) = p.support();
    if x < lo || x > hi {
        return Err(StatsError::OutsideSupport { x, lo, hi });
    }
    Ok(with_ln_fact(p.c, |t| hg_logpmf_in(t, x, p)))
}

/// A 2×2 contingency table of non-negative counts.
///
/// `n00` counts the joint low/low quadrant; the first index is the row (X)
/// category and the second the column (Y) category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table2x2 {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl Table2x2 {
    pub fn new(n00: u64, n01: u64, n10: u64, n11: u64) -> Self {
        Self { n00, n01, n10, n11 }
    }

    /// Builds a table from possibly-signed counts, rejecting negatives.
    pub fn try_from_counts(cells: [i64; 4]) -> Result<Self, StatsError> {
        if cells.iter().any(|&c| c < 0) {
            // Reuse the choose-domain error shape for the negative-cell case.
            return Err(StatsError::BadParams { a: 0, b: 0, c: 0 });
        }
        Ok(Self::new(cells[0] as u64, cells[1] as u64, cells[2] as u64, cells[3] as u64))
    }

    /// Grand total `n(A)`.
    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    /// First-row total `n(A_{0·})`.
    pub fn row0(&self) -> u64 {
        self.n00 + self.n01
    }

    /// Second-row total `n(A_{1·})`.
    pub fn row1(&self) -> u64 {
        self.n10 + self.n11
    }

    /// First-column total `n(A_{·0})`.
    pub fn col0(&self) -> u64 {
        self.n00 + self.n10
    }

    /// Second-column total `n(A_{·1})`.
    pub fn col1(&self) -> u64 {
        self.n01 + self.n11
    }

    /// Empirical log-odds-ratio `ln(n00·n11 / (n01·n10))`, or `None` when any
    /// cell is zero.
    pub fn empirical_lor(&self) -> Option<f64> {
        if self.n00 == 0 || self.n01 == 0 || self.n10 == 0 || self.n11 == 0 {
            None
        } else {
            Some(
                (self.n00 as f64).ln() + (self.n11 as f64).ln()
                    - (self.n01 as f64).ln()
                    - (self.n10 as f64).ln(),
            )
        }
    }
}

/// Relative slack when comparing pmf values for two-sided inclusion, so that
/// outcomes tied with the observed one by symmetry are included regardless of
/// float rounding.
const TIE_RELATIVE_TOL: f64 = 1e-7;

/// Two-sided Fisher exact p-value of a 2×2 table by the minimum-likelihood
/// criterion: the total probability of all outcomes no more probable than the
/// observed one, under `HG` with the table's margins.
///
/// With `midp`, half the probability of the observed outcome is subtracted,
/// which trades exactness guarantees for less conservative behaviour. The
/// result is clamped to `[0, 1]`. Tables with a zero row or column margin have
/// single-point support and return 1.0 (0.5 with `midp`).
pub fn fisher_two_sided_p(t: &Table2x2, midp: bool) -> f64 {
    let params = HgParams {
        a: t.row0(),
        b: t.col0(),
        c: t.total(),
    };
    let (lo, hi) = params.support();
    let p = with_ln_fact(params.c, |tab| {
        let lp_obs = hg_logpmf_in(tab, t.n00, &params);
        let cutoff = lp_obs + TIE_RELATIVE_TOL.ln_1p();
        let mut acc = 0.0;
        for x in lo..=hi {
            let lp = hg_logpmf_in(tab, x, &params);
            if lp <= cutoff {
                acc += lp.exp();
            }
        }
        if midp {
            acc -= 0.5 * lp_obs.exp();
        }
        acc
    });
    p.clamp(0.0, 1.0)
}

/// Draws from `HG_{a,b,c}` by an inverse-CDF walk that starts at the mode and
/// expands outward in decreasing-probability order.
///
/// Successive pmf values come from the ratio recurrence, so the walk needs a
/// single log-space evaluation no matter how large `c` is, and never under- or
/// overflows: every intermediate value is a probability in `(0, 1]`.
pub fn hg_sample<R: Rng + ?Sized>(p: &HgParams, rng: &mut R) -> u64 {
    let (lo, hi) = p.support();
    if lo == hi {
        return lo;
    }
    let mode = p.mode();
    let pm = with_ln_fact(p.c, |t| hg_logpmf_in(t, mode, p)).exp();
    let (a, b, c) = (p.a as f64, p.b as f64, p.c as f64);
    let up_ratio = |x: f64, px: f64| px * (a - x) * (b - x) / ((x + 1.0) * (c - a - b + x + 1.0));
    let dn_ratio = |x: f64, px: f64| px * x * (c - a - b + x) / ((a - x + 1.0) * (b - x + 1.0));

    let u: f64 = rng.random();
    let mut acc = pm;
    if u < acc {
        return mode;
    }
    // Candidate probabilities one step beyond each frontier of the visited
    // interval [dn, up]; `None` once a support edge has been passed.
    let mut up = mode;
    let mut dn = mode;
    let mut p_up = if up < hi { Some(up_ratio(up as f64, pm)) } else { None };
    let mut p_dn = if dn > lo { Some(dn_ratio(dn as f64, pm)) } else { None };
    loop {
        let take_up = match (p_up, p_dn) {
            (Some(pu), Some(pd)) => pu >= pd,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            // Float rounding left a sliver of u uncovered; the walk has
            // visited the entire support, so the edge we ended on is as good
            // an answer as any.
            (None, None) => return if u < 0.5 { dn } else { up },
        };
        if take_up {
            let pu = p_up.unwrap();
            up += 1;
            acc += pu;
            if u < acc {
                return up;
            }
            p_up = if up < hi { Some(up_ratio(up as f64, pu)) } else { None };
        } else {
            let pd = p_dn.unwrap();
            dn -= 1;
            acc += pd;
            if u < acc {
                return dn;
            }
            p_dn = if dn > lo { Some(dn_ratio(dn as f64, pd)) } else { None };
        }
    }
}
