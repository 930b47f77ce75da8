//! Permutation-test p-values.
//!
//! The null distribution is taken over size-preserving reassignments of the
//! pooled targets to the X and Y positions. The p-value is one-sided: the
//! share of partitions whose statistic is at least the observed one.
//!
//! * Exact: all `C(nx + ny, nx)` partitions are enumerated; the observed
//!   partition is one of them, so `p ≥ 1 / C(nx + ny, nx)`.
//! * Monte Carlo: `p = (1 + hits) / (1 + n_samples)`, each sample a seeded
//!   shuffle of the pooled targets whose first `nx` entries form X.
//!
//! Both modes split work into fixed blocks. Monte-Carlo block `b` draws from
//! its own ChaCha8 stream `(seed, b)`, so sequential and parallel runs
//! produce identical counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::StdDevConvention;
use crate::error::{Error, Result};
use crate::grounded::{resolve, statistic, SlotScores};
use crate::model::{
    EffectSize, Experiment, Granularity, GroundedBiasTest, PMethod, TestResult, DEFAULT_ALPHA,
};
use crate::parallel::{map_indexed, Execution};
use crate::store::EmbeddingStore;

pub const DEFAULT_EXACT_THRESHOLD: u64 = 200_000;
pub const DEFAULT_MC_SAMPLES: u64 = 99_999;

/// Relative slack when comparing a permuted statistic with the observed one,
/// so that rearranged sums of equal terms count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

const EXACT_BLOCK: u64 = 4096;
const MC_BLOCK: u64 = 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    /// Exact when the partition count is within `exact_threshold`, otherwise
    /// Monte Carlo.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub mode: PermutationMode,
    pub n_samples: u64,
    pub seed: Option<u64>,
    pub exact_threshold: u64,
    pub execution: Execution,
}

impl Default for PermutationPlan {
    fn default() -> Self {
        PermutationPlan {
            mode: PermutationMode::Auto,
            n_samples: DEFAULT_MC_SAMPLES,
            seed: None,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            execution: Execution::default(),
        }
    }
}

impl PermutationPlan {
    pub fn exact() -> Self {
        PermutationPlan {
            mode: PermutationMode::Exact,
            ..Default::default()
        }
    }

    pub fn monte_carlo(n_samples: u64, seed: u64) -> Self {
        PermutationPlan {
            mode: PermutationMode::MonteCarlo,
            n_samples,
            seed: Some(seed),
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidPlan("n_samples must be at least 1".into()));
        }
        if self.exact_threshold == 0 {
            return Err(Error::InvalidPlan("exact_threshold must be at least 1".into()));
        }
        Ok(())
    }

    /// The method this plan uses for `nx`/`ny` targets.
    pub fn method_for(&self, nx: usize, ny: usize) -> Result<PMethod> {
        self.validate()?;
        let count = count_partitions(nx as u64, ny as u64);
        match self.mode {
            PermutationMode::Exact => {
                let c = count?;
                if c > self.exact_threshold {
                    return Err(Error::InvalidPlan(format!(
                        "exact enumeration of {c} partitions exceeds threshold {}",
                        self.exact_threshold
                    )));
                }
                Ok(PMethod::Exact)
            }
            PermutationMode::MonteCarlo => Ok(PMethod::MonteCarlo),
            PermutationMode::Auto => match count {
                Ok(c) if c <= self.exact_threshold => Ok(PMethod::Exact),
                _ => Ok(PMethod::MonteCarlo),
            },
        }
    }
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc * (n - k + i) / i stays integral at every step.
        acc = acc.checked_mul(n as u128 - k as u128 + i)? / i;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Number of size-preserving partitions, `C(nx + ny, nx)`.
pub fn count_partitions(nx: u64, ny: u64) -> Result<u64> {
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyTargetSet);
    }
    let n = nx.checked_add(ny).ok_or(Error::Overflow { n: u64::MAX, k: nx })?;
    binomial(n, nx).ok_or(Error::Overflow { n, k: nx })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationOutcome {
    pub observed: f64,
    pub p_value: f64,
    pub method: PMethod,
    /// Partitions enumerated (exact) or samples drawn (Monte Carlo).
    pub n_permutations: u64,
    /// Partitions or samples with a statistic at least the observed one.
    pub hits: u64,
    pub seed: Option<u64>,
}

fn at_least(value: f64, observed: f64) -> bool {
    value >= observed - TIE_TOLERANCE * observed.abs().max(1.0)
}

/// The `rank`-th `k`-subset of `0..n` in lexicographic order.
fn unrank_combination(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0usize;
    for slot in 0..k {
        let mut c = next;
        loop {
            let remaining = binomial((n - c - 1) as u64, (k - slot - 1) as u64)
                .expect("bounded by the total partition count");
            if rank < remaining {
                break;
            }
            rank -= remaining;
            c += 1;
        }
        out.push(c);
        next = c + 1;
    }
    out
}

/// Advances `comb` to the next `k`-subset of `0..n`; false when exhausted.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn complement(comb: &[usize], n: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut it = comb.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
}

/// Visits partitions with lexicographic ranks `[start, end)`.
fn visit_block<F: FnMut(&[usize], &[usize])>(nx: usize, n: usize, start: u64, end: u64, mut f: F) {
    let mut comb = unrank_combination(n, nx, start);
    let mut rest = Vec::with_capacity(n - nx);
    for rank in start..end {
        complement(&comb, n, &mut rest);
        f(&comb, &rest);
        if rank + 1 < end {
            next_combination(&mut comb, n);
        }
    }
}

/// Statistic value of every partition, in lexicographic order of the X
/// index set.
pub fn exact_distribution<F>(nx: usize, ny: usize, execution: Execution, statistic: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize], &[usize]) -> f64 + Sync,
{
    let total = count_partitions(nx as u64, ny as u64)?;
    let n = nx + ny;
    let n_blocks = total.div_ceil(EXACT_BLOCK) as usize;
    let blocks = map_indexed(n_blocks, execution, |b| {
        let start = b as u64 * EXACT_BLOCK;
        let end = (start + EXACT_BLOCK).min(total);
        let mut values = Vec::with_capacity((end - start) as usize);
        visit_block(nx, n, start, end, |x, y| values.push(statistic(x, y)));
        values
    });
    Ok(blocks.into_iter().flatten().collect())
}

fn exact_hits<F>(nx: usize, ny: usize, observed: f64, execution: Execution, statistic: &F) -> Result<(u64, u64)>
where
    F: Fn(&[usize], &[usize]) -> f64 + Sync,
{
    let total = count_partitions(nx as u64, ny as u64)?;
    let n = nx + ny;
    let n_blocks = total.div_ceil(EXACT_BLOCK) as usize;
    let counts = map_indexed(n_blocks, execution, |b| {
        let start = b as u64 * EXACT_BLOCK;
        let end = (start + EXACT_BLOCK).min(total);
        let mut hits = 0u64;
        visit_block(nx, n, start, end, |x, y| {
            if at_least(statistic(x, y), observed) {
                hits += 1;
            }
        });
        hits
    });
    Ok((counts.iter().sum(), total))
}

fn monte_carlo_hits<F>(
    nx: usize,
    ny: usize,
    observed: f64,
    n_samples: u64,
    seed: u64,
    execution: Execution,
    statistic: &F,
) -> u64
where
    F: Fn(&[usize], &[usize]) -> f64 + Sync,
{
    let n = nx + ny;
    let n_blocks = n_samples.div_ceil(MC_BLOCK) as usize;
    let counts = map_indexed(n_blocks, execution, |b| {
        let start = b as u64 * MC_BLOCK;
        let end = (start + MC_BLOCK).min(n_samples);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut pool: Vec<usize> = (0..n).collect();
        let mut hits = 0u64;
        for _ in start..end {
            pool.shuffle(&mut rng);
            let (x, y) = pool.split_at(nx);
            if at_least(statistic(x, y), observed) {
                hits += 1;
            }
        }
        hits
    });
    counts.iter().sum()
}

/// One-sided permutation p-value of `statistic` over partitions of `nx + ny`
/// pooled elements. Elements `0..nx` form the observed X set.
pub fn permutation_pvalue<F>(nx: usize, ny: usize, plan: &PermutationPlan, statistic: F) -> Result<PermutationOutcome>
where
    F: Fn(&[usize], &[usize]) -> f64 + Sync,
{
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyTargetSet);
    }
    let method = plan.method_for(nx, ny)?;
    let x: Vec<usize> = (0..nx).collect();
    let y: Vec<usize> = (nx..nx + ny).collect();
    let observed = statistic(&x, &y);
    if !observed.is_finite() {
        return Err(Error::InternalConsistency(format!(
            "observed statistic is {observed}"
        )));
    }
    match method {
        PMethod::Exact => {
            let (hits, total) = exact_hits(nx, ny, observed, plan.execution, &statistic)?;
            if hits == 0 {
                return Err(Error::InternalConsistency(
                    "observed partition not counted in its own permutation distribution".into(),
                ));
            }
            Ok(PermutationOutcome {
                observed,
                p_value: hits as f64 / total as f64,
                method,
                n_permutations: total,
                hits,
                seed: None,
            })
        }
        PMethod::MonteCarlo => {
            let seed = plan.seed.ok_or_else(|| {
                Error::InvalidPlan("Monte-Carlo sampling requires a seed".into())
            })?;
            let hits = monte_carlo_hits(nx, ny, observed, plan.n_samples, seed, plan.execution, &statistic);
            Ok(PermutationOutcome {
                observed,
                p_value: (hits + 1) as f64 / (plan.n_samples + 1) as f64,
                method,
                n_permutations: plan.n_samples,
                hits,
                seed: Some(seed),
            })
        }
    }
}

/// Settings shared by every evaluated cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub stddev: StdDevConvention,
    pub alpha: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            stddev: StdDevConvention::Sample,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Evaluates one experiment of one test against one store: statistic,
/// effect size and permutation p-value.
///
/// Targets are permuted across the X/Y positions and scored as described
/// on [`SlotScores`].
pub fn grounded_permutation(
    test: &GroundedBiasTest,
    store: &EmbeddingStore,
    experiment: Experiment,
    granularity: Granularity,
    plan: &PermutationPlan,
    options: &EvalOptions,
) -> Result<TestResult> {
    let sets = resolve(test, store, experiment)?;
    let stat = statistic(&sets)?;
    let scores = SlotScores::compute(&sets)?;
    let effect_size = match scores.effect_size(options.stddev) {
        Ok(d) => EffectSize::Value(d),
        Err(Error::DegenerateVariance { .. }) => EffectSize::ZeroVariance,
        Err(e) => return Err(e),
    };
    let outcome = permutation_pvalue(scores.nx, scores.ny, plan, |x, y| scores.statistic(x, y))?;
    Ok(TestResult {
        test_name: test.name().to_string(),
        experiment,
        granularity,
        statistic: stat,
        effect_size,
        p_value: outcome.p_value,
        p_method: outcome.method,
        n_permutations: outcome.n_permutations,
        seed: outcome.seed,
        significant: outcome.p_value < options.alpha,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_counts() {
        assert_eq!(count_partitions(1, 1).unwrap(), 2);
        assert_eq!(count_partitions(2, 2).unwrap(), 6);
        assert_eq!(count_partitions(10, 10).unwrap(), 184_756);
        assert_eq!(count_partitions(6, 6).unwrap(), 924);
        assert_eq!(count_partitions(33, 33).unwrap(), 7_219_428_434_016_265_740);
        assert!(matches!(count_partitions(34, 34), Err(Error::Overflow { .. })));
        assert!(count_partitions(0, 3).is_err());
    }

    #[test]
    fn two_by_two_enumeration_matches_hand_list() {
        let parts = exact_distribution(2, 2, Execution::Sequential, |x, _| {
            (x[0] * 10 + x[1]) as f64
        })
        .unwrap();
        assert_eq!(parts, vec![1.0, 2.0, 3.0, 12.0, 13.0, 23.0]);
    }

    #[test]
    fn unranking_agrees_with_successor() {
        let (n, k) = (9, 4);
        let mut comb: Vec<usize> = (0..k).collect();
        let total = binomial(n as u64, k as u64).unwrap();
        for rank in 0..total {
            assert_eq!(unrank_combination(n, k, rank), comb);
            next_combination(&mut comb, n);
        }
    }

    #[test]
    fn singleton_sets() {
        let s = [1.0, 0.0];
        let out = permutation_pvalue(1, 1, &PermutationPlan::exact(), |x, y| s[x[0]] - s[y[0]]).unwrap();
        assert_eq!(out.p_value, 0.5);
        assert_eq!(out.n_permutations, 2);
        assert_eq!(out.method, PMethod::Exact);
    }

    #[test]
    fn constant_statistic_gives_one() {
        let out = permutation_pvalue(4, 3, &PermutationPlan::exact(), |_, _| 0.25).unwrap();
        assert_eq!(out.p_value, 1.0);
        assert_eq!(out.n_permutations, 35);
    }

    #[test]
    fn plan_validation_and_selection() {
        let bad = PermutationPlan {
            n_samples: 0,
            ..PermutationPlan::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidPlan(_))));
        let auto = PermutationPlan::default();
        assert_eq!(auto.method_for(10, 10).unwrap(), PMethod::Exact);
        assert_eq!(auto.method_for(11, 11).unwrap(), PMethod::MonteCarlo);
        assert_eq!(auto.method_for(40, 40).unwrap(), PMethod::MonteCarlo);
        assert!(PermutationPlan::exact().method_for(11, 11).is_err());
        // Monte Carlo without a seed is refused.
        let r = permutation_pvalue(11, 11, &auto, |x, _| x[0] as f64);
        assert!(matches!(r, Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn monte_carlo_sequential_equals_parallel() {
        let s: Vec<f64> = (0..14).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let f = |x: &[usize], y: &[usize]| {
            x.iter().map(|&i| s[i]).sum::<f64>() - y.iter().map(|&i| s[i]).sum::<f64>()
        };
        let plan = PermutationPlan::monte_carlo(5000, 7);
        let seq = permutation_pvalue(7, 7, &plan.with_execution(Execution::Sequential), f).unwrap();
        let par = permutation_pvalue(7, 7, &plan.with_execution(Execution::Parallel), f).unwrap();
        assert_eq!(seq, par);
        let again = permutation_pvalue(7, 7, &plan, f).unwrap();
        assert_eq!(again, par);
    }
}
