//! Divide and conquer: pool everyone, drop the members of negative pools,
//! re-pool the survivors with a smaller pool size and repeat until pools
//! hold a single subject.
//!
//! The pool-size schedule is fixed before the run from the initial
//! prevalence estimate. After a round the survivors are concentrated: the
//! prevalence among them is the infected count over the expected number of
//! survivors, and the next pool size is the one that makes a pool negative
//! with probability 1/2 at that prevalence.
//!
//! Survivors are re-pooled in the order they were retained, so infected
//! subjects stay clustered in the blocks that came out of positive pools.
//! [`ScheduleModel::Clustered`] accounts for that by carrying the
//! distribution of infected counts inside each positive pool from round to
//! round; [`ScheduleModel::Independent`] assumes survivors are freshly mixed.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::testbed::{PoolTester, Population, SimRng, TestLedger, TestModel};
use crate::theory::{optimal_pool_size, round_clamped, Prevalence};

// Counts whose probability falls below this are dropped from the model.
const TAIL_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ScheduleModel {
    /// Infected-count distribution tracked through order-preserving splits.
    #[default]
    Clustered,
    /// Survivors treated as a fresh Bernoulli population each round.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DncSchedule {
    pub f0: Prevalence,
    pub m_sequence: Vec<usize>,
    pub model: ScheduleModel,
    /// Expected tests per subject predicted by the model.
    pub expected_cost: f64,
}

impl DncSchedule {
    pub fn iterations(&self) -> usize {
        self.m_sequence.len()
    }

    /// Schedule from an explicit pool-size sequence, which must be
    /// non-increasing, positive and end with 1.
    pub fn from_sequence(f0: Prevalence, m_sequence: Vec<usize>) -> Result<Self> {
        if m_sequence.last() != Some(&1) {
            return Err(Error::domain(
                "m_sequence",
                "must be non-empty and end with 1",
            ));
        }
        if m_sequence.contains(&0) || m_sequence.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::domain(
                "m_sequence",
                "entries must be positive and non-increasing",
            ));
        }
        Ok(DncSchedule {
            f0,
            m_sequence,
            model: ScheduleModel::Clustered,
            expected_cost: f64::NAN,
        })
    }
}

fn pool_size_for(f: f64) -> usize {
    if f >= 1.0 {
        1
    } else {
        round_clamped(-1.0 / (1.0 - f).log2()) as usize
    }
}

/// Next pool size: the half-negative size at `f`, but always strictly below
/// the previous one so every schedule terminates.
fn next_pool_size(prev: usize, f: f64) -> usize {
    pool_size_for(f).min(prev.saturating_sub(1)).max(1)
}

pub fn make_schedule(f0: Prevalence) -> DncSchedule {
    make_schedule_with(f0, ScheduleModel::Clustered)
}

pub fn make_schedule_with(f0: Prevalence, model: ScheduleModel) -> DncSchedule {
    match model {
        ScheduleModel::Clustered => clustered_schedule(f0),
        ScheduleModel::Independent => independent_schedule(f0),
    }
}

fn independent_schedule(f0: Prevalence) -> DncSchedule {
    let mut f = f0.get();
    let mut m = round_clamped(optimal_pool_size(f0)) as usize;
    let mut seq = vec![m];
    let mut retained = 1.0;
    let mut cost = 0.0;
    loop {
        cost += retained / m as f64;
        if m == 1 {
            break;
        }
        let positive = 1.0 - (1.0 - f).powi(m as i32);
        retained *= positive;
        f /= positive;
        m = next_pool_size(m, f);
        seq.push(m);
    }
    DncSchedule {
        f0,
        m_sequence: seq,
        model: ScheduleModel::Independent,
        expected_cost: cost,
    }
}

/// Infected-count pmf of a Binomial(m, f) pool, truncated where the tail is
/// negligible. Index is the count.
fn binomial_pmf(m: usize, f: f64) -> Vec<f64> {
    let mut pmf = Vec::new();
    let mut term = (1.0 - f).powi(m as i32);
    let ratio = f / (1.0 - f);
    let mut total = 0.0;
    for x in 0..=m {
        pmf.push(term);
        total += term;
        if 1.0 - total < TAIL_EPS && x as f64 > m as f64 * f {
            break;
        }
        term *= (m - x) as f64 / (x + 1) as f64 * ratio;
    }
    pmf
}

/// Infected-count mass of a sub-pool of `size` cut from pools of `parent`
/// subjects whose count mass is `parent_mass` (index = count).
fn split_mass(parent: usize, parent_mass: &[f64], size: usize) -> Vec<f64> {
    let max_count = (parent_mass.len() - 1).min(size);
    let mut out = vec![0.0; max_count + 1];
    for (x, &w) in parent_mass.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (n, x, k) = (parent as u64, x as u64, size as u64);
        let denom = ln_binomial(n, k);
        let lo = (x + k).saturating_sub(n);
        for y in lo..=x.min(k) {
            let ln_p = ln_binomial(x, y) + ln_binomial(n - x, k - y) - denom;
            out[y as usize] += w * ln_p.exp();
        }
    }
    out
}

fn clustered_schedule(f0: Prevalence) -> DncSchedule {
    let f = f0.get();
    let mut m = round_clamped(optimal_pool_size(f0)) as usize;
    let mut seq = vec![m];
    let mut cost = 1.0 / m as f64;
    if m == 1 {
        return DncSchedule {
            f0,
            m_sequence: seq,
            model: ScheduleModel::Clustered,
            expected_cost: cost,
        };
    }

    // Positive pools per subject, keyed by pool size; the mass vector holds
    // the expected number of positive pools with each infected count.
    let mut classes: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut first = binomial_pmf(m, f);
    first[0] = 0.0;
    first.iter_mut().for_each(|w| *w /= m as f64);
    classes.insert(m, first);

    loop {
        let retained: f64 = classes
            .iter()
            .map(|(&size, mass)| size as f64 * mass.iter().sum::<f64>())
            .sum();
        let prev = m;
        m = if retained > 0.0 {
            next_pool_size(prev, f / retained)
        } else {
            1
        };
        seq.push(m);

        let mut next: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&parent, mass) in &classes {
            let pools: f64 = mass.iter().sum();
            cost += pools * parent.div_ceil(m) as f64;
            if m == 1 {
                continue;
            }
            let full = parent / m;
            let rem = parent % m;
            for (size, copies) in [(m, full), (rem, 1)] {
                if size == 0 || copies == 0 {
                    continue;
                }
                let mut sub = split_mass(parent, mass, size);
                sub[0] = 0.0;
                let acc = next.entry(size).or_default();
                if acc.len() < sub.len() {
                    acc.resize(sub.len(), 0.0);
                }
                for (a, s) in acc.iter_mut().zip(&sub) {
                    *a += copies as f64 * s;
                }
            }
        }
        if m == 1 {
            break;
        }
        for mass in next.values_mut() {
            let total: f64 = mass.iter().sum();
            while mass.len() > 2 && *mass.last().unwrap() < TAIL_EPS * total {
                mass.pop();
            }
        }
        classes = next;
    }

    DncSchedule {
        f0,
        m_sequence: seq,
        model: ScheduleModel::Clustered,
        expected_cost: cost,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Repooling {
    /// Survivors keep the order in which their pools were formed.
    #[default]
    InOrder,
    /// Survivors are shuffled before every re-pooling.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DncOptions {
    pub repooling: Repooling,
    /// Re-estimate the prevalence after each round from the observed
    /// fraction of positive pools instead of following the schedule.
    pub reestimate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub m: usize,
    pub pools_formed: usize,
    pub pools_positive: usize,
    pub subjects_retained: usize,
    pub tests_cumulative: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DncTrace {
    pub iterations: Vec<IterationRecord>,
    /// Ascending subject indices reported positive.
    pub positives: Vec<usize>,
    pub ledger: TestLedger,
}

impl DncTrace {
    pub fn m_sequence(&self) -> Vec<usize> {
        self.iterations.iter().map(|r| r.m).collect()
    }

    /// One row per iteration:
    /// `iteration,m,pools_formed,pools_positive,subjects_retained,tests_cumulative`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "iteration,m,pools_formed,pools_positive,subjects_retained,tests_cumulative"
        )?;
        for r in &self.iterations {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iteration,
                r.m,
                r.pools_formed,
                r.pools_positive,
                r.subjects_retained,
                r.tests_cumulative
            )?;
        }
        Ok(())
    }
}

pub fn run_divide_and_conquer(
    pop: &Population,
    schedule: &DncSchedule,
    model: TestModel,
    rng: SimRng,
) -> Result<DncTrace> {
    let mut tester = PoolTester::new(pop, model, rng);
    divide_and_conquer(&mut tester, schedule, DncOptions::default())
}

/// Runs the method through `tester`; the returned ledger is a copy of the
/// tester's ledger at the end of the run.
pub fn divide_and_conquer(
    tester: &mut PoolTester<'_>,
    schedule: &DncSchedule,
    options: DncOptions,
) -> Result<DncTrace> {
    let mut retained: Vec<usize> = (0..tester.n()).collect();
    let mut iterations = Vec::with_capacity(schedule.iterations());
    let mut m = schedule.m_sequence[0];
    let mut f_est = schedule.f0.get();

    loop {
        if retained.is_empty() {
            break;
        }
        if options.repooling == Repooling::Shuffled {
            retained.shuffle(tester.rng());
        }
        let iteration = iterations.len() + 1;
        tester.begin_stage(format!("round {iteration}"));

        let mut survivors = Vec::new();
        let (mut formed, mut positive) = (0usize, 0usize);
        for pool in retained.chunks(m) {
            formed += 1;
            if tester.test(pool)? {
                positive += 1;
                survivors.extend_from_slice(pool);
            }
        }
        iterations.push(IterationRecord {
            iteration,
            m,
            pools_formed: formed,
            pools_positive: positive,
            subjects_retained: survivors.len(),
            tests_cumulative: tester.ledger().tests_performed(),
        });
        retained = survivors;
        if m == 1 {
            break;
        }

        m = if options.reestimate {
            if positive == 0 {
                break;
            }
            f_est /= positive as f64 / formed as f64;
            next_pool_size(m, f_est)
        } else {
            schedule.m_sequence.get(iteration).copied().unwrap_or(1)
        };
    }

    retained.sort_unstable();
    Ok(DncTrace {
        iterations,
        positives: retained,
        ledger: tester.ledger().clone(),
    })
}
