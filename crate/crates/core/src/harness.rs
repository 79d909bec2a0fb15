//! Seeded Monte Carlo experiments over the identification methods.
//!
//! Trial `t` of an experiment uses seed `base_seed + t` for its population,
//! its design and its test noise, so every trial can be reproduced on its
//! own. Trials run in parallel and are collected in trial order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::adaptive::{self, DncOptions, DncSchedule, ScheduleModel};
use crate::error::{Error, Result};
use crate::groupcode;
use crate::testbed::{rng_for, streams, PoolTester, Population, TestModel};
use crate::theory::{entropy_bound, expected_total_tests, Prevalence, TheoryParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DivideConquer,
    GroupCoding,
    Individual,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::DivideConquer => "divide_conquer",
            Method::GroupCoding => "group_coding",
            Method::Individual => "individual",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnc" | "divide_conquer" | "divide-conquer" => Ok(Method::DivideConquer),
            "gc" | "group_coding" | "group-coding" => Ok(Method::GroupCoding),
            "individual" | "ind" => Ok(Method::Individual),
            _ => Err(Error::domain("method", format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub n: usize,
    pub f: Prevalence,
    pub method: Method,
    pub model: TestModel,
    pub with_retest: bool,
    pub trials: usize,
    pub base_seed: u64,
    pub dnc: DncOptions,
    pub schedule_model: ScheduleModel,
}

impl ExperimentSpec {
    /// Perfect test, retest on, 25 trials, default divide-and-conquer options.
    pub fn new(n: usize, f: Prevalence, method: Method) -> Self {
        ExperimentSpec {
            n,
            f,
            method,
            model: TestModel::PERFECT,
            with_retest: true,
            trials: 25,
            base_seed: 0,
            dnc: DncOptions::default(),
            schedule_model: ScheduleModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("n", "population size must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials", "need at least one trial"));
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub infected: usize,
    pub tests: u64,
    pub cost: f64,
    pub false_pos: usize,
    pub false_neg: usize,
    /// Group tests for group coding; all tests otherwise.
    pub first_pass_tests: u64,
    /// False positives before any retest.
    pub first_pass_false_pos: usize,
    /// Pool sizes actually used, divide and conquer only.
    pub m_sequence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub spec: ExperimentSpec,
    pub mean_tests: f64,
    pub mean_cost: f64,
    pub cost_stddev: f64,
    pub mean_false_positives: f64,
    pub mean_false_negatives: f64,
    /// Expected cost from the closed-form model of the method.
    pub theory_cost: f64,
    /// Information bound per subject.
    pub entropy_cost: f64,
    pub trials: Vec<TrialRecord>,
}

impl AggregateResult {
    pub fn cost_std_error(&self) -> f64 {
        self.cost_stddev / (self.trials.len() as f64).sqrt()
    }

    /// One row per trial, `trial,seed,method,f,n,tests,cost,false_pos,false_neg`,
    /// then a `mean` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        writeln!(w, "trial,seed,method,f,n,tests,cost,false_pos,false_neg")?;
        for t in &self.trials {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                t.trial, t.seed, s.method, s.f, s.n, t.tests, t.cost, t.false_pos, t.false_neg
            )?;
        }
        writeln!(
            w,
            "mean,,{},{},{},{},{},{},{}",
            s.method,
            s.f,
            s.n,
            self.mean_tests,
            self.mean_cost,
            self.mean_false_positives,
            self.mean_false_negatives
        )?;
        Ok(())
    }

    /// Machine-readable summary without the per-trial records.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            spec: &'a ExperimentSpec,
            mean_tests: f64,
            mean_cost: f64,
            cost_stddev: f64,
            mean_false_positives: f64,
            mean_false_negatives: f64,
            theory_cost: f64,
            entropy_cost: f64,
        }
        serde_json::to_string_pretty(&Summary {
            spec: &self.spec,
            mean_tests: self.mean_tests,
            mean_cost: self.mean_cost,
            cost_stddev: self.cost_stddev,
            mean_false_positives: self.mean_false_positives,
            mean_false_negatives: self.mean_false_negatives,
            theory_cost: self.theory_cost,
            entropy_cost: self.entropy_cost,
        })
        .expect("summary serializes")
    }
}

fn count_mismatches(reported: &[usize], truth: &[usize]) -> (usize, usize) {
    // Both ascending.
    let (mut i, mut j) = (0, 0);
    let (mut fp, mut fneg) = (0, 0);
    while i < reported.len() || j < truth.len() {
        match (reported.get(i), truth.get(j)) {
            (Some(a), Some(b)) if a == b => {
                i += 1;
                j += 1;
            }
            (Some(a), Some(b)) if a < b => {
                fp += 1;
                i += 1;
            }
            (Some(_), None) => {
                fp += 1;
                i += 1;
            }
            _ => {
                fneg += 1;
                j += 1;
            }
        }
    }
    (fp, fneg)
}

pub fn run_trial(
    spec: &ExperimentSpec,
    schedule: Option<&DncSchedule>,
    trial: usize,
) -> Result<TrialRecord> {
    let seed = spec.trial_seed(trial);
    let pop = Population::generate(spec.n, spec.f, seed)?;
    let truth = pop.infected_indices();
    let rng = rng_for(seed, streams::TESTS);

    let (reported, tests, first_pass_tests, first_pass_reported, m_sequence) = match spec.method {
        Method::Individual => {
            let mut tester = PoolTester::new(&pop, spec.model, rng);
            tester.begin_stage("individual");
            let mut positives = Vec::new();
            for s in 0..spec.n {
                if tester.test(&[s])? {
                    positives.push(s);
                }
            }
            let tests = tester.ledger().tests_performed();
            (positives.clone(), tests, tests, positives, Vec::new())
        }
        Method::DivideConquer => {
            let owned;
            let schedule = match schedule {
                Some(s) => s,
                None => {
                    owned = adaptive::make_schedule_with(spec.f, spec.schedule_model);
                    &owned
                }
            };
            let mut tester = PoolTester::new(&pop, spec.model, rng);
            let trace = adaptive::divide_and_conquer(&mut tester, schedule, spec.dnc)?;
            let tests = trace.ledger.tests_performed();
            let m_sequence = trace.m_sequence();
            (
                trace.positives.clone(),
                tests,
                tests,
                trace.positives,
                m_sequence,
            )
        }
        Method::GroupCoding => {
            let design = groupcode::build_design(spec.n, spec.f, seed)?;
            let out =
                groupcode::run_group_coding(&pop, &design, spec.model, spec.with_retest, rng)?;
            let first = out.ledger.stage_count(groupcode::FIRST_PASS_STAGE);
            let tests = out.ledger.tests_performed();
            let reported = out.reported().to_vec();
            (reported, tests, first, out.first_pass_positives, Vec::new())
        }
    };

    let (false_pos, false_neg) = count_mismatches(&reported, &truth);
    let (first_pass_false_pos, _) = count_mismatches(&first_pass_reported, &truth);
    Ok(TrialRecord {
        trial,
        seed,
        infected: truth.len(),
        tests,
        cost: tests as f64 / spec.n as f64,
        false_pos,
        false_neg,
        first_pass_tests,
        first_pass_false_pos,
        m_sequence,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<AggregateResult> {
    spec.validate()?;
    let schedule = (spec.method == Method::DivideConquer)
        .then(|| adaptive::make_schedule_with(spec.f, spec.schedule_model));

    let trials: Vec<TrialRecord> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, schedule.as_ref(), t))
        .collect::<Result<_>>()?;

    let mean_cost = mean(trials.iter().map(|t| t.cost));
    let cost_stddev = if trials.len() > 1 {
        let ss: f64 = trials.iter().map(|t| (t.cost - mean_cost).powi(2)).sum();
        (ss / (trials.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let theory_cost = match spec.method {
        Method::Individual => 1.0,
        Method::DivideConquer => schedule.as_ref().map_or(f64::NAN, |s| s.expected_cost),
        Method::GroupCoding => {
            let t = TheoryParams::new(spec.f);
            expected_total_tests(spec.f, t.m, t.k, 1, spec.with_retest)
        }
    };

    Ok(AggregateResult {
        spec: spec.clone(),
        mean_tests: mean(trials.iter().map(|t| t.tests as f64)),
        mean_cost,
        cost_stddev,
        mean_false_positives: mean(trials.iter().map(|t| t.false_pos as f64)),
        mean_false_negatives: mean(trials.iter().map(|t| t.false_neg as f64)),
        theory_cost,
        entropy_cost: entropy_bound(spec.f, 1),
        trials,
    })
}

/// Prevalences shown in the reference comparison table.
pub const REFERENCE_PREVALENCES: [f64; 2] = [1e-2, 1e-3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCodingColumns {
    pub m: u64,
    pub k: u64,
    pub n_groups: u64,
    /// First-pass false positives, averaged over trials.
    pub mean_false_positives: f64,
    pub mean_total_tests: f64,
    pub first_pass_cost: f64,
    pub total_cost: f64,
    pub total_cost_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub f: Prevalence,
    pub mean_infected: f64,
    /// Iterations and pool sizes of the first trial.
    pub dnc_iterations: usize,
    pub dnc_m_sequence: Vec<usize>,
    pub dnc_mean_tests: f64,
    pub dnc_cost: f64,
    pub dnc_cost_stddev: f64,
    /// `None` when no design with unique signatures exists at this size.
    pub group_coding: Option<GroupCodingColumns>,
    pub entropy_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceReport {
    pub n: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub rows: Vec<ReferenceRow>,
    pub warnings: Vec<String>,
}

/// Both methods at the reference prevalences with a perfect test.
pub fn reference_report(n: usize, trials: usize, base_seed: u64) -> Result<ReferenceReport> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for fv in REFERENCE_PREVALENCES {
        let f = Prevalence::new(fv)?;
        if (n as f64) * fv < 10.0 {
            warnings.push(format!(
                "n*f = {} < 10 at f = {fv}: single realizations will be very noisy",
                n as f64 * fv
            ));
        }
        let mut spec = ExperimentSpec::new(n, f, Method::DivideConquer);
        spec.trials = trials;
        spec.base_seed = base_seed;
        let dnc = run_experiment(&spec)?;

        spec.method = Method::GroupCoding;
        let group_coding = match run_experiment(&spec) {
            Ok(gc) => {
                let t = TheoryParams::new(f);
                Some(GroupCodingColumns {
                    m: t.m,
                    k: t.k,
                    n_groups: gc.trials[0].first_pass_tests,
                    mean_false_positives: mean(
                        gc.trials.iter().map(|r| r.first_pass_false_pos as f64),
                    ),
                    mean_total_tests: gc.mean_tests,
                    first_pass_cost: mean(gc.trials.iter().map(|r| r.first_pass_tests as f64))
                        / n as f64,
                    total_cost: gc.mean_cost,
                    total_cost_stddev: gc.cost_stddev,
                })
            }
            Err(e @ Error::Infeasible { .. }) => {
                warnings.push(format!("group coding skipped at f = {fv}: {e}"));
                None
            }
            Err(e) => return Err(e),
        };

        let first = &dnc.trials[0];
        rows.push(ReferenceRow {
            f,
            mean_infected: mean(dnc.trials.iter().map(|r| r.infected as f64)),
            dnc_iterations: first.m_sequence.len(),
            dnc_m_sequence: first.m_sequence.clone(),
            dnc_mean_tests: dnc.mean_tests,
            dnc_cost: dnc.mean_cost,
            dnc_cost_stddev: dnc.cost_stddev,
            group_coding,
            entropy_cost: entropy_bound(f, 1),
        });
    }
    Ok(ReferenceReport {
        n,
        trials,
        base_seed,
        rows,
        warnings,
    })
}

impl fmt::Display for ReferenceReport {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            out,
            "N = {}, trials = {}, base seed = {}, perfect test",
            self.n, self.trials, self.base_seed
        )?;
        writeln!(
            out,
            "{:>6} {:>9} | {:>4} {:<44} {:>9} {:>6} | {:>4} {:>2} {:>8} {:>15} {:>11} | {:>8}",
            "f",
            "infected",
            "iter",
            "M (divide and conquer)",
            "N_t",
            "cost",
            "M",
            "K",
            "false+",
            "N_t",
            "cost",
            "min cost"
        )?;
        for r in &self.rows {
            let seq: Vec<String> = r.dnc_m_sequence.iter().map(|m| m.to_string()).collect();
            write!(
                out,
                "{:>6} {:>9.1} | {:>4} {:<44} {:>9.1} {:>6.3} | ",
                format!("{:e}", r.f.get()),
                r.mean_infected,
                r.dnc_iterations,
                seq.join(", "),
                r.dnc_mean_tests,
                r.dnc_cost,
            )?;
            match &r.group_coding {
                Some(gc) => write!(
                    out,
                    "{:>4} {:>2} {:>8.1} {:>15} {:>11}",
                    gc.m,
                    gc.k,
                    gc.mean_false_positives,
                    format!("{}/{:.0}", gc.n_groups, gc.mean_total_tests),
                    format!("{:.3}/{:.3}", gc.first_pass_cost, gc.total_cost),
                )?,
                None => write!(
                    out,
                    "{:>4} {:>2} {:>8} {:>15} {:>11}",
                    "-", "-", "-", "-", "-"
                )?,
            }
            writeln!(out, " | {:>8.4}", r.entropy_cost)?;
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}")?;
        }
        Ok(())
    }
}
