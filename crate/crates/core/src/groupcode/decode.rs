use serde::Serialize;

use super::PoolingDesign;
use crate::error::{Error, Result};
use crate::testbed::{PoolTester, Population, SimRng, TestLedger, TestModel};

pub const FIRST_PASS_STAGE: &str = "group pass";
pub const RETEST_STAGE: &str = "retest";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    pub first_pass_positives: Vec<usize>,
    /// Present when the individual retest pass ran.
    pub confirmed_positives: Option<Vec<usize>>,
    /// First-pass positives that are not infected, when ground truth is known.
    pub false_positive_count: Option<usize>,
    pub ledger: TestLedger,
}

impl DecodeResult {
    /// Confirmed positives if a retest ran, first-pass positives otherwise.
    pub fn reported(&self) -> &[usize] {
        self.confirmed_positives
            .as_deref()
            .unwrap_or(&self.first_pass_positives)
    }
}

/// Tests every group once. The schedule never depends on any outcome.
pub fn first_pass(tester: &mut PoolTester<'_>, design: &PoolingDesign) -> Result<Vec<bool>> {
    if tester.n() != design.n {
        return Err(Error::domain(
            "design",
            format!(
                "design covers {} subjects, population has {}",
                design.n,
                tester.n()
            ),
        ));
    }
    tester.begin_stage(FIRST_PASS_STAGE);
    design
        .groups
        .iter()
        .map(|members| {
            if members.is_empty() {
                // An empty group holds no sample; it reads negative without a test.
                Ok(false)
            } else {
                tester.test(members)
            }
        })
        .collect()
}

/// Subjects whose groups all tested positive, ascending.
pub fn decode(design: &PoolingDesign, results: &[bool]) -> Result<Vec<usize>> {
    if results.len() != design.n_groups {
        return Err(Error::LengthMismatch {
            expected: design.n_groups,
            actual: results.len(),
        });
    }
    Ok(design
        .signatures
        .iter()
        .enumerate()
        .filter(|(_, sig)| sig.iter().all(|&g| results[g]))
        .map(|(s, _)| s)
        .collect())
}

/// Individually retests `candidates`; returns those that test positive.
pub fn retest_pass(tester: &mut PoolTester<'_>, candidates: &[usize]) -> Result<Vec<usize>> {
    tester.begin_stage(RETEST_STAGE);
    let mut confirmed = Vec::new();
    for &s in candidates {
        if tester.test(&[s])? {
            confirmed.push(s);
        }
    }
    Ok(confirmed)
}

/// Perfect-test decode straight from the definitions: a group is positive
/// iff one of its listed members is infected, and a subject is positive iff
/// every group listing it is positive. Reads only `design.groups`, never the
/// signatures, and is quadratic in size. Meant for cross-checking.
pub fn decode_bruteforce_oracle(design: &PoolingDesign, infected: &[usize]) -> Vec<usize> {
    let group_positive: Vec<bool> = design
        .groups
        .iter()
        .map(|members| members.iter().any(|s| infected.contains(s)))
        .collect();
    (0..design.n)
        .filter(|&s| {
            design
                .groups
                .iter()
                .zip(&group_positive)
                .filter(|(members, _)| members.contains(&s))
                .all(|(_, &pos)| pos)
        })
        .collect()
}

/// Full group-coding run against a population: first pass, decode, and
/// optionally the retest pass. Ground truth is consulted only for the
/// false-positive count after the method has finished.
pub fn run_group_coding(
    pop: &Population,
    design: &PoolingDesign,
    model: TestModel,
    with_retest: bool,
    rng: SimRng,
) -> Result<DecodeResult> {
    let mut tester = PoolTester::new(pop, model, rng);
    let results = first_pass(&mut tester, design)?;
    let first_pass_positives = decode(design, &results)?;
    let confirmed_positives = if with_retest {
        Some(retest_pass(&mut tester, &first_pass_positives)?)
    } else {
        None
    };
    let false_positive_count = first_pass_positives
        .iter()
        .filter(|&&s| !pop.is_infected(s))
        .count();
    Ok(DecodeResult {
        first_pass_positives,
        confirmed_positives,
        false_positive_count: Some(false_positive_count),
        ledger: tester.into_ledger(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupcode::{build_design, build_design_with};
    use crate::testbed::{rng_for, streams};
    use crate::theory::Prevalence;
    use proptest::prelude::*;

    fn f(x: f64) -> Prevalence {
        Prevalence::new(x).unwrap()
    }

    #[test]
    fn healthy_population_reads_all_negative() {
        let d = build_design(5000, f(0.01), 1).unwrap();
        let pop = Population::from_infected(5000, f(0.01), 1, &[]).unwrap();
        let mut tester = PoolTester::new(&pop, TestModel::PERFECT, rng_for(1, streams::TESTS));
        let results = first_pass(&mut tester, &d).unwrap();
        assert_eq!(results.len(), d.n_groups);
        assert!(results.iter().all(|&r| !r));
        assert_eq!(tester.ledger().tests_performed(), d.n_groups as u64);
        assert!(decode(&d, &results).unwrap().is_empty());
    }

    #[test]
    fn single_infected_subject_is_identified() {
        let d = build_design(5000, f(0.01), 2).unwrap();
        let pop = Population::from_infected(5000, f(0.01), 2, &[1234]).unwrap();
        let mut tester = PoolTester::new(&pop, TestModel::PERFECT, rng_for(2, streams::TESTS));
        let results = first_pass(&mut tester, &d).unwrap();
        let positive_groups: Vec<usize> = (0..d.n_groups).filter(|&g| results[g]).collect();
        assert_eq!(positive_groups, d.signatures[1234]);
        assert_eq!(decode(&d, &results).unwrap(), vec![1234]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let d = build_design_with(10, 5, 2, 0).unwrap();
        assert!(matches!(
            decode(&d, &[true; 4]),
            Err(Error::LengthMismatch {
                expected: 5,
                actual: 4
            })
        ));
    }

    #[test]
    fn retest_of_nothing_costs_nothing() {
        let pop = Population::from_infected(10, f(0.1), 0, &[2]).unwrap();
        let mut tester = PoolTester::new(&pop, TestModel::PERFECT, rng_for(0, streams::TESTS));
        assert!(retest_pass(&mut tester, &[]).unwrap().is_empty());
        assert_eq!(tester.ledger().tests_performed(), 0);
        assert_eq!(retest_pass(&mut tester, &[1, 2, 3]).unwrap(), vec![2]);
        assert_eq!(tester.ledger().stage_count(RETEST_STAGE), 3);
    }

    #[test]
    fn oracle_on_empty_infected_set() {
        let d = build_design(500, f(0.02), 5).unwrap();
        assert!(decode_bruteforce_oracle(&d, &[]).is_empty());
    }

    #[test]
    fn false_positive_rate_tracks_overlap_free_approximation() {
        let (n, fv) = (5000, 0.01);
        let d = build_design(n, f(fv), 77).unwrap();
        let m = crate::theory::TheoryParams::new(f(fv)).m as i32;
        let predicted = (1.0 - (1.0 - fv).powi(m - 1)).powi(d.k as i32);
        let (mut fp, mut healthy) = (0usize, 0usize);
        for seed in 0..200 {
            let pop = Population::generate(n, f(fv), seed).unwrap();
            let out = run_group_coding(
                &pop,
                &d,
                TestModel::PERFECT,
                false,
                rng_for(seed, streams::TESTS),
            )
            .unwrap();
            fp += out.false_positive_count.unwrap();
            healthy += n - pop.infected_count();
        }
        let rate = fp as f64 / healthy as f64;
        assert!(
            rate > predicted / 2.0 && rate < predicted * 2.0,
            "rate {rate} predicted {predicted}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn decode_matches_oracle(seed in any::<u64>(), fv in 0.005f64..0.1) {
            let n = 500;
            let d = match build_design(n, f(fv), seed) {
                Ok(d) => d,
                Err(_) => return Ok(()),
            };
            let pop = Population::generate(n, f(fv), seed ^ 0x5eed).unwrap();
            let mut tester = PoolTester::new(&pop, TestModel::PERFECT, rng_for(seed, streams::TESTS));
            let results = first_pass(&mut tester, &d).unwrap();
            prop_assert_eq!(decode(&d, &results).unwrap(), decode_bruteforce_oracle(&d, &pop.infected_indices()));
        }

        #[test]
        fn perfect_test_properties(n in 50usize..3000, fv in 0.002f64..0.05, seed in any::<u64>()) {
            let d = match build_design(n, f(fv), seed) {
                Ok(d) => d,
                Err(_) => return Ok(()),
            };
            let pop = Population::generate(n, f(fv), seed).unwrap();
            let out = run_group_coding(&pop, &d, TestModel::PERFECT, true, rng_for(seed, streams::TESTS)).unwrap();
            let truth = pop.infected_indices();
            // no false negatives in the first pass
            prop_assert!(truth.iter().all(|s| out.first_pass_positives.binary_search(s).is_ok()));
            prop_assert_eq!(out.confirmed_positives.as_ref().unwrap(), &truth);
            let groups_tested = d.groups.iter().filter(|g| !g.is_empty()).count() as u64;
            prop_assert_eq!(out.ledger.stage_count(FIRST_PASS_STAGE), groups_tested);
            prop_assert_eq!(out.ledger.stage_count(RETEST_STAGE), out.first_pass_positives.len() as u64);
        }
    }
}
