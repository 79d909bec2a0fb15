//! Synthetic populations and the pooled-test oracle.
//!
//! A [`Population`] holds ground truth. Identification methods never see it
//! directly: they go through a [`PoolTester`], which answers pooled queries
//! (with optional noise) and counts every test in a [`TestLedger`].

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::theory::Prevalence;

/// Portable, seedable generator used for every stochastic step.
pub type SimRng = ChaCha8Rng;

/// Stream ids carved out of a single seed so that population generation,
/// design construction and test noise never share random numbers.
pub mod streams {
    pub const POPULATION: u64 = 0;
    pub const DESIGN: u64 = 1;
    pub const TESTS: u64 = 2;
    pub const SAMPLING: u64 = 3;
}

/// Generator for `seed` positioned on the given stream.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    n: usize,
    f: Prevalence,
    seed: u64,
    infected: Vec<bool>,
    infected_count: usize,
}

impl Population {
    /// Each subject is infected independently with probability `f`.
    pub fn generate(n: usize, f: Prevalence, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("n", "population size must be at least 1"));
        }
        let mut rng = rng_for(seed, streams::POPULATION);
        let infected: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < f.get()).collect();
        let infected_count = infected.iter().filter(|&&b| b).count();
        Ok(Population {
            n,
            f,
            seed,
            infected,
            infected_count,
        })
    }

    /// Population with an explicit infected set, for tests and hand-built cases.
    pub fn from_infected(
        n: usize,
        f: Prevalence,
        seed: u64,
        infected_indices: &[usize],
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("n", "population size must be at least 1"));
        }
        let mut infected = vec![false; n];
        for &i in infected_indices {
            if i >= n {
                return Err(Error::SubjectOutOfRange { index: i, n });
            }
            infected[i] = true;
        }
        let infected_count = infected.iter().filter(|&&b| b).count();
        Ok(Population {
            n,
            f,
            seed,
            infected,
            infected_count,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prevalence(&self) -> Prevalence {
        self.f
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn infected_count(&self) -> usize {
        self.infected_count
    }

    pub fn is_infected(&self, subject: usize) -> bool {
        self.infected[subject]
    }

    pub fn infected_mask(&self) -> &[bool] {
        &self.infected
    }

    /// Ascending infected subject indices.
    pub fn infected_indices(&self) -> Vec<usize> {
        self.infected
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Header line `n,f,seed,infected_count`, then the infected indices in
    /// ascending order on one comma-separated line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{}",
            self.n, self.f, self.seed, self.infected_count
        )?;
        let line: Vec<String> = self
            .infected_indices()
            .iter()
            .map(|i| i.to_string())
            .collect();
        writeln!(w, "{}", line.join(","))?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))??;
        let fields: Vec<&str> = header.trim().split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(1, "header must be n,f,seed,infected_count"));
        }
        let n: usize = fields[0].parse().map_err(|_| Error::parse(1, "bad n"))?;
        let f: f64 = fields[1].parse().map_err(|_| Error::parse(1, "bad f"))?;
        let seed: u64 = fields[2].parse().map_err(|_| Error::parse(1, "bad seed"))?;
        let count: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(1, "bad infected_count"))?;
        let f = Prevalence::new(f)?;

        let body = lines.next().transpose()?.unwrap_or_default();
        let mut indices = Vec::with_capacity(count);
        for tok in body.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let i: usize = tok
                .parse()
                .map_err(|_| Error::parse(2, format!("bad subject index `{tok}`")))?;
            if indices.last().is_some_and(|&prev| prev >= i) {
                return Err(Error::parse(2, "indices must be strictly ascending"));
            }
            indices.push(i);
        }
        if indices.len() != count {
            return Err(Error::parse(
                2,
                format!("header says {count} infected, found {}", indices.len()),
            ));
        }
        Population::from_infected(n, f, seed, &indices)
    }
}

/// Noise of a single pooled test. `p` is the false-negative rate (a pool
/// holding an infected sample reads negative), `q` the false-positive rate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TestModel {
    pub p: f64,
    pub q: f64,
}

impl TestModel {
    pub const PERFECT: TestModel = TestModel { p: 0.0, q: 0.0 };

    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(
                "p",
                format!("false-negative rate {p} outside [0, 1]"),
            ));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::domain(
                "q",
                format!("false-positive rate {q} outside [0, 1]"),
            ));
        }
        Ok(TestModel { p, q })
    }

    pub fn is_perfect(&self) -> bool {
        self.p == 0.0 && self.q == 0.0
    }

    /// Observed outcome for a pool whose true state is `hot`. Draws from
    /// `rng` only when the outcome is actually random.
    pub fn observe<R: Rng + ?Sized>(&self, hot: bool, rng: &mut R) -> bool {
        let flip = if hot { self.p } else { self.q };
        if flip <= 0.0 {
            hot
        } else if flip >= 1.0 {
            !hot
        } else {
            (rng.random::<f64>() < flip) != hot
        }
    }
}

impl Default for TestModel {
    fn default() -> Self {
        TestModel::PERFECT
    }
}

/// Counts tests, grouped into labelled stages.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct TestLedger {
    tests_performed: u64,
    stages: Vec<(String, u64)>,
}

impl TestLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Subsequent tests are booked under `label` until the next call.
    pub fn begin_stage(&mut self, label: impl Into<String>) {
        self.stages.push((label.into(), 0));
    }

    pub fn record(&mut self, count: u64) {
        if self.stages.is_empty() {
            self.begin_stage("tests");
        }
        self.stages.last_mut().unwrap().1 += count;
        self.tests_performed += count;
    }

    pub fn tests_performed(&self) -> u64 {
        self.tests_performed
    }

    pub fn stages(&self) -> &[(String, u64)] {
        &self.stages
    }

    pub fn stage_count(&self, label: &str) -> u64 {
        self.stages
            .iter()
            .filter(|(l, _)| l == label)
            .map(|(_, c)| c)
            .sum()
    }

    /// Adds `other` stage by stage; labels keep their first-seen order.
    pub fn merge(&mut self, other: &TestLedger) {
        for (label, count) in &other.stages {
            match self.stages.iter_mut().find(|(l, _)| l == label) {
                Some(slot) => slot.1 += count,
                None => self.stages.push((label.clone(), *count)),
            }
        }
        self.tests_performed += other.tests_performed;
    }
}

/// One pooled test: positive iff any member is infected, then passed through
/// the noise model. Always books exactly one test.
pub fn pooled_test<R: Rng + ?Sized>(
    pop: &Population,
    members: &[usize],
    model: &TestModel,
    ledger: &mut TestLedger,
    rng: &mut R,
) -> Result<bool> {
    if members.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut hot = false;
    for &i in members {
        if i >= pop.n {
            return Err(Error::SubjectOutOfRange { index: i, n: pop.n });
        }
        hot |= pop.infected[i];
    }
    ledger.record(1);
    Ok(model.observe(hot, rng))
}

/// The only window identification methods get onto a population.
pub struct PoolTester<'a> {
    population: &'a Population,
    model: TestModel,
    rng: SimRng,
    ledger: TestLedger,
}

impl<'a> PoolTester<'a> {
    pub fn new(population: &'a Population, model: TestModel, rng: SimRng) -> Self {
        PoolTester {
            population,
            model,
            rng,
            ledger: TestLedger::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.population.n
    }

    pub fn model(&self) -> TestModel {
        self.model
    }

    pub fn begin_stage(&mut self, label: impl Into<String>) {
        self.ledger.begin_stage(label);
    }

    pub fn test(&mut self, members: &[usize]) -> Result<bool> {
        pooled_test(
            self.population,
            members,
            &self.model,
            &mut self.ledger,
            &mut self.rng,
        )
    }

    pub fn ledger(&self) -> &TestLedger {
        &self.ledger
    }

    /// Shuffling and other method-side randomness share the noise stream.
    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn into_ledger(self) -> TestLedger {
        self.ledger
    }
}
