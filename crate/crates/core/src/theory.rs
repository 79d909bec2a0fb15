//! Closed-form pooling quantities: information bound, optimal pool size,
//! optimal group redundancy and the expected number of tests for group coding.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest redundancy considered by the brute-force scan in [`verify_k_optimality`].
pub const MAX_SCAN_K: u32 = 64;

/// Population infection rate, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Prevalence(f64);

impl Prevalence {
    pub fn new(f: f64) -> Result<Self> {
        if f > 0.0 && f < 1.0 {
            Ok(Prevalence(f))
        } else {
            Err(Error::Prevalence(f))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Prevalence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Nearest integer (halves round up), never below 1.
pub fn round_clamped(x: f64) -> u64 {
    let r = (x + 0.5).floor();
    if r.is_nan() || r < 1.0 {
        1
    } else {
        r as u64
    }
}

/// Shannon information of the infection pattern of `n` subjects, in bits.
pub fn entropy_bound(f: Prevalence, n: u64) -> f64 {
    let f = f.get();
    let g = 1.0 - f;
    n as f64 * (-f * f.log2() - g * g.log2())
}

/// Pool size at which a pool is negative with probability exactly 1/2.
pub fn optimal_pool_size(f: Prevalence) -> f64 {
    -1.0 / (1.0 - f.get()).log2()
}

/// Analytic minimiser of the expected group-coding test count over the
/// number of groups per subject. Negative for large `f`.
pub fn optimal_k(f: Prevalence) -> f64 {
    let f = f.get();
    let g = 1.0 - f;
    -(-g.log2() / (g * std::f64::consts::LN_2)).log2()
}

/// Expected tests for group coding with pool size `m` and `k` groups per
/// subject. With `with_retest` every first-pass positive is retested
/// individually; without it only the `n·k/m` group tests are counted.
pub fn expected_total_tests(f: Prevalence, m: u64, k: u64, n: u64, with_retest: bool) -> f64 {
    debug_assert!(m >= 1 && k >= 1);
    let first = k as f64 / m as f64;
    let per_subject = if with_retest {
        let f = f.get();
        first + f + (1.0 - f) * 0.5f64.powi(k as i32)
    } else {
        first
    };
    n as f64 * per_subject
}

/// Integer `k` in `1..=MAX_SCAN_K` minimising [`expected_total_tests`] (with
/// retest) at the rounded optimal pool size. Ties resolve to the smaller `k`.
pub fn verify_k_optimality(f: Prevalence) -> u64 {
    let m = round_clamped(optimal_pool_size(f));
    let mut best = (1, f64::INFINITY);
    for k in 1..=MAX_SCAN_K as u64 {
        let cost = expected_total_tests(f, m, k, 1, true);
        if cost < best.1 {
            best = (k, cost);
        }
    }
    best.0
}

/// Everything derived from a prevalence in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryParams {
    pub f: Prevalence,
    pub m_exact: f64,
    pub m: u64,
    pub k_exact: f64,
    pub k: u64,
    pub bits_per_subject: f64,
    /// Expected tests per subject for group coding with a retest pass.
    pub expected_cost: f64,
    /// Expected tests per subject for the first (group) pass alone.
    pub first_pass_cost: f64,
}

impl TheoryParams {
    pub fn new(f: Prevalence) -> Self {
        let m_exact = optimal_pool_size(f);
        let k_exact = optimal_k(f);
        let m = round_clamped(m_exact);
        let k = round_clamped(k_exact);
        TheoryParams {
            f,
            m_exact,
            m,
            k_exact,
            k,
            bits_per_subject: entropy_bound(f, 1),
            expected_cost: expected_total_tests(f, m, k, 1, true),
            first_pass_cost: expected_total_tests(f, m, k, 1, false),
        }
    }

    /// Pooling cannot help: pools of one, or expected cost at or above
    /// individual testing.
    pub fn is_degenerate(&self) -> bool {
        self.m <= 1 || self.expected_cost >= 1.0
    }
}
