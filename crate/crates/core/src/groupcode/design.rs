use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::testbed::{rng_for, streams};
use crate::theory::{Prevalence, TheoryParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolingDesign {
    pub n: usize,
    pub n_groups: usize,
    pub k: usize,
    pub seed: u64,
    /// Members of each group, ascending.
    pub groups: Vec<Vec<usize>>,
    /// Groups of each subject, ascending.
    pub signatures: Vec<Vec<usize>>,
}

/// True when `C(n, k) >= target`.
pub fn binomial_at_least(n: usize, k: usize, target: usize) -> bool {
    if k > n {
        return target == 0;
    }
    let k = k.min(n - k);
    let target = target as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        // C(n, i) * (n - i) / (i + 1) is exact and non-decreasing for i < k.
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c >= target {
            return true;
        }
    }
    c >= target
}

/// `(n_groups, k)` for `n` subjects at prevalence `f`: pool size and
/// redundancy from the closed-form optimum, `n_groups = round(n·k/m)` but
/// never fewer than `k`.
pub fn design_parameters(n: usize, f: Prevalence) -> (usize, usize) {
    let t = TheoryParams::new(f);
    let k = t.k as usize;
    let groups = (n as f64 * k as f64 / t.m as f64 + 0.5).floor() as usize;
    (groups.max(k), k)
}

pub fn build_design(n: usize, f: Prevalence, seed: u64) -> Result<PoolingDesign> {
    let (n_groups, k) = design_parameters(n, f);
    build_design_with(n, n_groups, k, seed)
}

/// Greedy balanced construction. Subjects are placed in order; each takes the
/// `k` least-loaded groups, ties broken by a seeded random key. If that set
/// is already somebody's signature, candidate sets are tried in
/// lexicographic order over the load-sorted groups, so the first retry swaps
/// the last pick for the next-least-loaded group. Sets that keep all group
/// sizes within one of each other are tried before any others.
pub fn build_design_with(n: usize, n_groups: usize, k: usize, seed: u64) -> Result<PoolingDesign> {
    if n == 0 {
        return Err(Error::domain("n", "need at least one subject"));
    }
    if k == 0 {
        return Err(Error::domain(
            "k",
            "each subject must join at least one group",
        ));
    }
    if !binomial_at_least(n_groups, k, n) {
        return Err(Error::Infeasible { n, n_groups, k });
    }

    let mut rng = rng_for(seed, streams::DESIGN);
    let mut load = vec![0usize; n_groups];
    let mut key: Vec<u64> = (0..n_groups).map(|_| rng.random()).collect();
    let mut queue: BTreeSet<(usize, u64, usize)> = (0..n_groups).map(|g| (0, key[g], g)).collect();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    let mut signatures: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut used: HashSet<Vec<usize>> = HashSet::with_capacity(n);

    for subject in 0..n {
        let mut sig: Vec<usize> = queue.iter().take(k).map(|&(_, _, g)| g).collect();
        sig.sort_unstable();
        if used.contains(&sig) {
            sig = probe_free_signature(&queue, k, &used);
        }

        for &g in &sig {
            queue.remove(&(load[g], key[g], g));
            load[g] += 1;
            key[g] = rng.random();
            queue.insert((load[g], key[g], g));
            groups[g].push(subject);
        }
        used.insert(sig.clone());
        signatures.push(sig);
    }

    rebalance(&mut groups, &mut signatures, &mut used);

    Ok(PoolingDesign {
        n,
        n_groups,
        k,
        seed,
        groups,
        signatures,
    })
}

/// Moves subjects from the largest groups to the smallest until sizes are
/// within one of each other. The greedy pass only leaves work here when
/// collisions forced it off the lowest load level, which happens in small,
/// nearly saturated designs.
fn rebalance(
    groups: &mut [Vec<usize>],
    signatures: &mut [Vec<usize>],
    used: &mut HashSet<Vec<usize>>,
) {
    loop {
        let lo = groups.iter().map(Vec::len).min().unwrap_or(0);
        let hi = groups.iter().map(Vec::len).max().unwrap_or(0);
        if hi <= lo + 1 {
            break;
        }
        let Some((s, from, to, sig)) = find_move(groups, signatures, used, lo, hi) else {
            break;
        };
        used.remove(&signatures[s]);
        used.insert(sig.clone());
        signatures[s] = sig;
        groups[from].retain(|&x| x != s);
        let at = groups[to].partition_point(|&x| x < s);
        groups[to].insert(at, s);
    }
}

fn find_move(
    groups: &[Vec<usize>],
    signatures: &[Vec<usize>],
    used: &HashSet<Vec<usize>>,
    lo: usize,
    hi: usize,
) -> Option<(usize, usize, usize, Vec<usize>)> {
    let small: Vec<usize> = (0..groups.len())
        .filter(|&g| groups[g].len() == lo)
        .collect();
    for from in (0..groups.len()).filter(|&g| groups[g].len() == hi) {
        for &s in &groups[from] {
            for &to in &small {
                if signatures[s].binary_search(&to).is_ok() {
                    continue;
                }
                let mut sig: Vec<usize> = signatures[s]
                    .iter()
                    .map(|&g| if g == from { to } else { g })
                    .collect();
                sig.sort_unstable();
                if !used.contains(&sig) {
                    return Some((s, from, to, sig));
                }
            }
        }
    }
    None
}

fn probe_free_signature(
    queue: &BTreeSet<(usize, u64, usize)>,
    k: usize,
    used: &HashSet<Vec<usize>>,
) -> Vec<usize> {
    let order: Vec<usize> = queue.iter().map(|&(_, _, g)| g).collect();
    let loads: Vec<usize> = queue.iter().map(|&(l, _, _)| l).collect();
    let min = loads[0];
    let at_min = loads.iter().take_while(|&&l| l == min).count();

    // Stay balanced if possible: draw only from the lowest load level, or
    // take all of it and fill up from the next level.
    let (forced, end) = if at_min >= k {
        (0, at_min)
    } else {
        let next = loads[at_min..]
            .iter()
            .take_while(|&&l| l == min + 1)
            .count();
        (at_min, at_min + next)
    };
    first_free_combination(&order[forced..end], k - forced, &order[..forced], used)
        .or_else(|| first_free_combination(&order, k, &[], used))
        .expect("feasibility was checked, a free signature must exist")
}

/// First `fixed` + r-subset of `pool`, in lexicographic order of positions,
/// whose signature is unused.
fn first_free_combination(
    pool: &[usize],
    r: usize,
    fixed: &[usize],
    used: &HashSet<Vec<usize>>,
) -> Option<Vec<usize>> {
    if r > pool.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        let mut sig: Vec<usize> = fixed
            .iter()
            .copied()
            .chain(idx.iter().map(|&p| pool[p]))
            .collect();
        sig.sort_unstable();
        if !used.contains(&sig) {
            return Some(sig);
        }
        let mut i = r;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if idx[i] < pool.len() - r + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

impl PoolingDesign {
    /// Checks the structural invariants: consistent groups and signatures,
    /// every subject in exactly `k` distinct groups, all signatures unique.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::domain("design", msg));
        if self.groups.len() != self.n_groups {
            return bad(format!(
                "{} groups listed, header says {}",
                self.groups.len(),
                self.n_groups
            ));
        }
        if self.signatures.len() != self.n {
            return bad(format!(
                "{} signatures for {} subjects",
                self.signatures.len(),
                self.n
            ));
        }
        let mut seen = HashSet::with_capacity(self.n);
        for (s, sig) in self.signatures.iter().enumerate() {
            if sig.len() != self.k {
                return bad(format!(
                    "subject {s} is in {} groups, expected {}",
                    sig.len(),
                    self.k
                ));
            }
            if sig.windows(2).any(|w| w[0] >= w[1]) || sig.iter().any(|&g| g >= self.n_groups) {
                return bad(format!("subject {s} has a malformed signature"));
            }
            if !seen.insert(sig.as_slice()) {
                return bad(format!(
                    "subject {s} shares its signature with another subject"
                ));
            }
        }
        let total: usize = self.groups.iter().map(Vec::len).sum();
        if total != self.n * self.k {
            return bad(format!(
                "group sizes sum to {total}, expected {}",
                self.n * self.k
            ));
        }
        for (g, members) in self.groups.iter().enumerate() {
            for &s in members {
                if s >= self.n || self.signatures[s].binary_search(&g).is_err() {
                    return bad(format!("group {g} lists subject {s} inconsistently"));
                }
            }
        }
        Ok(())
    }

    pub fn group_size_range(&self) -> (usize, usize) {
        let sizes = self.groups.iter().map(Vec::len);
        (sizes.clone().min().unwrap_or(0), sizes.max().unwrap_or(0))
    }

    /// Rebuilds signatures from group membership lists.
    pub(crate) fn from_groups(
        n: usize,
        k: usize,
        seed: u64,
        groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let mut signatures = vec![Vec::with_capacity(k); n];
        for (g, members) in groups.iter().enumerate() {
            for &s in members {
                if s >= n {
                    return Err(Error::SubjectOutOfRange { index: s, n });
                }
                signatures[s].push(g);
            }
        }
        let mut groups = groups;
        groups.iter_mut().for_each(|m| m.sort_unstable());
        let design = PoolingDesign {
            n,
            n_groups: groups.len(),
            k,
            seed,
            groups,
            signatures,
        };
        design.validate()?;
        Ok(design)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(x: f64) -> Prevalence {
        Prevalence::new(x).unwrap()
    }

    fn binomial_exact(n: u128, k: u128) -> u128 {
        if k > n {
            return 0;
        }
        (0..k).fold(1, |c, i| c * (n - i) / (i + 1))
    }

    #[test]
    fn binomial_threshold() {
        for n in 0..30usize {
            for k in 0..=n + 1 {
                let c = binomial_exact(n as u128, k as u128);
                for target in [0usize, 1, 2, 10, 100, 1000] {
                    assert_eq!(
                        binomial_at_least(n, k, target),
                        c >= target as u128,
                        "C({n},{k}) vs {target}"
                    );
                }
            }
        }
        assert!(binomial_at_least(8696, 6, 100_000));
    }

    #[test]
    fn parameters_for_reference_prevalences() {
        assert_eq!(design_parameters(100_000, f(1e-2)), (8696, 6));
        assert_eq!(design_parameters(100_000, f(1e-3)), (1299, 9));
        assert_eq!(design_parameters(1, f(1e-2)), (6, 6));
    }

    #[test]
    fn single_subject() {
        let d = build_design(1, f(1e-2), 3).unwrap();
        assert_eq!((d.n_groups, d.k), (6, 6));
        assert!(d.groups.iter().all(|g| g == &vec![0]));
        d.validate().unwrap();
    }

    #[test]
    fn large_design_is_balanced() {
        let d = build_design(100_000, f(1e-2), 1).unwrap();
        assert_eq!(d.n_groups, 8696);
        d.validate().unwrap();
        let (lo, hi) = d.group_size_range();
        assert!(hi - lo <= 1, "{lo}..{hi}");
        assert!((68..=70).contains(&lo));
    }

    #[test]
    fn saturated_design_uses_every_signature() {
        // C(5, 2) = 10: the only valid design uses all pairs.
        let d = build_design_with(10, 5, 2, 4).unwrap();
        d.validate().unwrap();
        let mut sigs = d.signatures.clone();
        sigs.sort();
        sigs.dedup();
        assert_eq!(sigs.len(), 10);
    }

    #[test]
    fn infeasible_design() {
        assert!(matches!(
            build_design_with(11, 5, 2, 0),
            Err(Error::Infeasible {
                n: 11,
                n_groups: 5,
                k: 2
            })
        ));
        assert!(matches!(
            build_design(10, f(1e-2), 0),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = build_design(5000, f(0.01), 9).unwrap();
        let b = build_design(5000, f(0.01), 9).unwrap();
        let c = build_design(5000, f(0.01), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.groups, c.groups);
    }

    #[test]
    fn validate_catches_duplicates() {
        let mut d = build_design_with(10, 5, 2, 4).unwrap();
        let dup = d.signatures[0].clone();
        d.signatures[1] = dup;
        assert!(d.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn generated_designs_hold_invariants(n in 1usize..3000, fv in 0.002f64..0.2, seed in any::<u64>()) {
            let (n_groups, k) = design_parameters(n, f(fv));
            match build_design(n, f(fv), seed) {
                Ok(d) => {
                    d.validate().unwrap();
                    prop_assert_eq!(d.n_groups, n_groups);
                    let (lo, hi) = d.group_size_range();
                    prop_assert!(hi - lo <= 1);
                }
                Err(Error::Infeasible { .. }) => prop_assert!(!binomial_at_least(n_groups, k, n)),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn explicit_small_designs(n_groups in 2usize..12, k in 1usize..5, seed in any::<u64>(), frac in 0.1f64..1.0) {
            prop_assume!(k <= n_groups);
            let cap = binomial_exact(n_groups as u128, k as u128).min(400) as usize;
            let n = ((cap as f64 * frac).ceil() as usize).max(1);
            let d = build_design_with(n, n_groups, k, seed).unwrap();
            d.validate().unwrap();
            let (lo, hi) = d.group_size_range();
            prop_assert!(hi - lo <= 1, "{}..{} for n={} C({},{})", lo, hi, n, n_groups, k);
        }
    }
}
