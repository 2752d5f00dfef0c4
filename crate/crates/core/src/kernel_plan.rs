//! Prime kernel-set selection, hierarchical per-stage plans and exhaustive
//! receptive-field coverage audits.
//!
//! A kernel set for a cover length `L` is `{1, 2}` plus every prime up to the
//! smallest prime `p_k` with `2 * p_k > L`. Stacking two such sets with a final
//! `{1, 2}` layer yields receptive fields `a + b + c - 2`; [`coverage_set`]
//! enumerates those sums directly so the reachable lengths can be checked
//! rather than assumed.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// Kernel lengths of the last layer in a three-layer coverage stack.
pub const TAIL_KERNELS: [usize; 2] = [1, 2];

/// Ascending list of every prime `<= n` (sieve of Eratosthenes).
pub fn primes_up_to(n: usize) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let mut composite = vec![false; n + 1];
    let mut i = 2;
    while i * i <= n {
        if !composite[i] {
            let mut j = i * i;
            while j <= n {
                composite[j] = true;
                j += i;
            }
        }
        i += 1;
    }
    (2..=n).filter(|&k| !composite[k]).collect()
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Smallest prime strictly greater than `n`.
pub fn next_prime(n: usize) -> usize {
    let mut p = n + 1;
    while !is_prime(p) {
        p += 1;
    }
    p
}

/// `{1, 2}` together with all primes up to a largest prime `p_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KernelSet {
    p_k: usize,
    kernels: Vec<usize>,
}

impl KernelSet {
    /// Builds the set capped at `p_k`, which must be prime.
    pub fn with_max_prime(p_k: usize) -> Result<Self> {
        if !is_prime(p_k) {
            return Err(Error::invalid("p_k", format!("{p_k} is not prime")));
        }
        let mut kernels = vec![1];
        kernels.extend(primes_up_to(p_k));
        Ok(KernelSet { p_k, kernels })
    }

    pub fn p_k(&self) -> usize {
        self.p_k
    }

    /// Strictly ascending kernel lengths, starting at 1 and ending at `p_k`.
    pub fn kernels(&self) -> &[usize] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Sum of all kernel lengths in the set.
    pub fn kernel_sum(&self) -> usize {
        self.kernels.iter().sum()
    }
}

impl fmt::Display for KernelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list: Vec<String> = self.kernels.iter().map(|k| k.to_string()).collect();
        write!(f, "{{{}}}", list.join(","))
    }
}

/// Kernel set whose largest prime is the least prime `p` with `2p > cover_length`.
///
/// A zero cover length is treated like 1.
pub fn select_kernel_set(cover_length: usize) -> KernelSet {
    let l = cover_length.max(1);
    // Bertrand guarantees a prime in (l/2, l + 1] once l >= 2.
    let p_k = primes_up_to(l + 2)
        .into_iter()
        .find(|&p| 2 * p > l)
        .expect("a prime p with 2p > L exists below L + 2");
    KernelSet::with_max_prime(p_k).expect("sieve output is prime")
}

/// Receptive-field lengths reachable by a three-layer stack and the lengths
/// in `1..=target_max` it misses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageSet {
    pub achievable: BTreeSet<usize>,
    pub target_max: usize,
    pub gaps: BTreeSet<usize>,
}

impl CoverageSet {
    /// Gaps no larger than `limit`.
    pub fn gaps_up_to(&self, limit: usize) -> BTreeSet<usize> {
        self.gaps.range(..=limit).copied().collect()
    }

    pub fn covers_up_to(&self, limit: usize) -> bool {
        (1..=limit).all(|s| self.achievable.contains(&s))
    }
}

/// Enumerates every `a + b + c - 2` with `a`, `b`, `c` drawn from the three
/// layers' kernel lengths. Gaps are measured against `2 * max(p_k)` of the
/// first two layers.
pub fn coverage_set(first: &KernelSet, second: &KernelSet, tail: &[usize]) -> CoverageSet {
    let mut achievable = BTreeSet::new();
    for &a in first.kernels() {
        for &b in second.kernels() {
            for &c in tail {
                // every kernel length is >= 1, so the sum is >= 1
                achievable.insert(a + b + c - 2);
            }
        }
    }
    let target_max = 2 * first.p_k().max(second.p_k());
    let gaps = (1..=target_max)
        .filter(|s| !achievable.contains(s))
        .collect();
    CoverageSet {
        achievable,
        target_max,
        gaps,
    }
}

/// Coverage of a stage whose first two layers share `set` and whose tail is `{1, 2}`.
pub fn stage_coverage(set: &KernelSet) -> CoverageSet {
    coverage_set(set, set, &TAIL_KERNELS)
}

/// Cumulative receptive field of a stride-1, undilated chain:
/// `sum(lengths) - (n - 1)`.
pub fn receptive_field(kernel_lengths: &[usize]) -> Result<usize> {
    if kernel_lengths.is_empty() {
        return Err(Error::invalid("kernel_lengths", "empty kernel chain"));
    }
    if kernel_lengths.contains(&0) {
        return Err(Error::invalid("kernel_lengths", "kernel length 0"));
    }
    let sum: usize = kernel_lengths.iter().sum();
    Ok(sum - (kernel_lengths.len() - 1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    /// Samples this stage must cover, `ceil(initial_cover / downsample)`.
    pub cover_length: usize,
    /// Cumulative downsampling relative to the first stage's input.
    pub downsample: usize,
    pub kernel_set: KernelSet,
    /// Prime chosen by the plain `2p > l` rule before any strict escalation.
    pub base_p_k: usize,
}

impl StagePlan {
    /// Builds the plan for one stage. With `strict_coverage` set, `p_k` is
    /// raised until the stage's coverage has no gaps in `1..=cover_length`.
    pub fn new(cover_length: usize, downsample: usize, strict_coverage: bool) -> StagePlan {
        let base = select_kernel_set(cover_length);
        let base_p_k = base.p_k();
        let mut kernel_set = base;
        if strict_coverage {
            while !stage_coverage(&kernel_set).covers_up_to(cover_length) {
                kernel_set = KernelSet::with_max_prime(next_prime(kernel_set.p_k()))
                    .expect("next_prime is prime");
            }
        }
        StagePlan {
            cover_length,
            downsample,
            kernel_set,
            base_p_k,
        }
    }

    pub fn p_k(&self) -> usize {
        self.kernel_set.p_k()
    }

    pub fn coverage(&self) -> CoverageSet {
        stage_coverage(&self.kernel_set)
    }

    pub fn escalated(&self) -> bool {
        self.kernel_set.p_k() != self.base_p_k
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelPlan {
    pub initial_cover: usize,
    pub strict_coverage: bool,
    pub stages: Vec<StagePlan>,
}

impl KernelPlan {
    pub fn p_k_sequence(&self) -> Vec<usize> {
        self.stages.iter().map(StagePlan::p_k).collect()
    }

    /// Per-stage table: stage, l_i, d_i, p_k, kernels, gaps within l_i.
    pub fn to_table(&self) -> String {
        let mut rows = vec![[
            "stage".to_string(),
            "l_i".to_string(),
            "d_i".to_string(),
            "p_k".to_string(),
            "kernels".to_string(),
            "gaps<=l_i".to_string(),
        ]];
        for (i, s) in self.stages.iter().enumerate() {
            rows.push([
                (i + 1).to_string(),
                s.cover_length.to_string(),
                s.downsample.to_string(),
                s.p_k().to_string(),
                join(s.kernel_set.kernels()),
                set_or_dash(&s.coverage().gaps_up_to(s.cover_length)),
            ]);
        }
        let mut widths = [0usize; 6];
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    /// Structured `key=value` lines, one block per stage.
    ///
    /// Besides the gaps inside `l_i`, each stage reports the gaps of the
    /// unescalated kernel set over its full `2 p_k` target.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "initial_cover={}", self.initial_cover);
        let _ = writeln!(out, "strict_coverage={}", self.strict_coverage);
        let _ = writeln!(out, "stages={}", self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            let base = KernelSet::with_max_prime(s.base_p_k).expect("prime");
            let base_cov = stage_coverage(&base);
            let _ = writeln!(out, "stage.{n}.cover_length={}", s.cover_length);
            let _ = writeln!(out, "stage.{n}.downsample={}", s.downsample);
            let _ = writeln!(out, "stage.{n}.base_p_k={}", s.base_p_k);
            let _ = writeln!(out, "stage.{n}.base_gaps={}", join_set(&base_cov.gaps));
            let _ = writeln!(out, "stage.{n}.p_k={}", s.p_k());
            let _ = writeln!(out, "stage.{n}.kernels={}", join(s.kernel_set.kernels()));
            let _ = writeln!(
                out,
                "stage.{n}.gaps={}",
                join_set(&s.coverage().gaps_up_to(s.cover_length))
            );
        }
        out
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_set(s: &BTreeSet<usize>) -> String {
    s.iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn set_or_dash(s: &BTreeSet<usize>) -> String {
    if s.is_empty() {
        "-".to_string()
    } else {
        join_set(s)
    }
}

/// Hierarchical plan: stage `i` covers `ceil(initial_cover / d_i)` samples.
///
/// `downsample_factors` are cumulative and must start at 1 and never decrease.
pub fn stage_plan(
    initial_cover: usize,
    downsample_factors: &[usize],
    strict_coverage: bool,
) -> Result<KernelPlan> {
    if initial_cover == 0 {
        return Err(Error::invalid("initial_cover", "must be at least 1"));
    }
    if downsample_factors.is_empty() {
        return Err(Error::invalid(
            "downsample_factors",
            "at least one stage required",
        ));
    }
    if downsample_factors[0] != 1 {
        return Err(Error::invalid(
            "downsample_factors",
            "first factor must be 1",
        ));
    }
    if downsample_factors.contains(&0) {
        return Err(Error::invalid(
            "downsample_factors",
            "factors must be positive",
        ));
    }
    if downsample_factors.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "downsample_factors",
            "factors must be non-decreasing",
        ));
    }
    let stages = downsample_factors
        .iter()
        .map(|&d| StagePlan::new(initial_cover.div_ceil(d), d, strict_coverage))
        .collect();
    Ok(KernelPlan {
        initial_cover,
        strict_coverage,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Trial-division oracle, independent of the sieve.
    fn primes_by_trial(n: usize) -> Vec<usize> {
        (2..=n)
            .filter(|&k| (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0))
            .collect()
    }

    #[test]
    fn primes_small() {
        assert!(primes_up_to(1).is_empty());
        assert_eq!(primes_up_to(11), vec![2, 3, 5, 7, 11]);
        assert_eq!(primes_up_to(30), vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
        for n in 0..300 {
            assert_eq!(primes_up_to(n), primes_by_trial(n), "n={n}");
        }
    }

    #[test]
    fn select_examples() {
        let s = select_kernel_set(1);
        assert_eq!((s.p_k(), s.kernels()), (2, &[1, 2][..]));
        let s = select_kernel_set(21);
        assert_eq!((s.p_k(), s.kernels()), (11, &[1, 2, 3, 5, 7, 11][..]));
        let s = select_kernel_set(22);
        assert_eq!((s.p_k(), s.kernels()), (13, &[1, 2, 3, 5, 7, 11, 13][..]));
        assert_eq!(select_kernel_set(3).p_k(), 2);
        assert_eq!(select_kernel_set(4).p_k(), 3);
    }

    #[test]
    fn coverage_examples() {
        let two = KernelSet::with_max_prime(2).unwrap();
        let c = coverage_set(&two, &two, &TAIL_KERNELS);
        assert_eq!(c.achievable, (1..=4).collect());
        assert!(c.gaps.is_empty());
        assert_eq!(c.target_max, 4);

        let eleven = KernelSet::with_max_prime(11).unwrap();
        let c = stage_coverage(&eleven);
        let expected: BTreeSet<usize> = (1..=18).chain([21, 22]).collect();
        assert_eq!(c.achievable, expected);
        assert_eq!(c.gaps, [19, 20].into_iter().collect());

        let thirteen = KernelSet::with_max_prime(13).unwrap();
        assert!(stage_coverage(&thirteen).gaps_up_to(22).is_empty());
    }

    #[test]
    fn receptive_field_examples() {
        assert_eq!(receptive_field(&[5]).unwrap(), 5);
        assert_eq!(receptive_field(&[7, 3, 3]).unwrap(), 11);
        assert_eq!(receptive_field(&[7, 1, 3]).unwrap(), 9);
        assert_eq!(receptive_field(&[7, 3]).unwrap(), 9);
        assert!(receptive_field(&[]).is_err());
    }

    #[test]
    fn plan_examples() {
        let plan = stage_plan(64, &[1, 2, 4, 8], false).unwrap();
        assert_eq!(plan.p_k_sequence(), vec![37, 17, 11, 5]);
        let l: Vec<usize> = plan.stages.iter().map(|s| s.cover_length).collect();
        assert_eq!(l, vec![64, 32, 16, 8]);

        let plan = stage_plan(1, &[1], false).unwrap();
        assert_eq!(plan.stages.len(), 1);
        assert_eq!(plan.stages[0].kernel_set.kernels(), &[1, 2]);

        let off = stage_plan(16, &[1, 2], false).unwrap();
        let on = stage_plan(16, &[1, 2], true).unwrap();
        assert_eq!(
            off,
            KernelPlan {
                strict_coverage: false,
                ..on.clone()
            }
        );
        assert_eq!(on.p_k_sequence(), vec![11, 5]);

        let strict = stage_plan(21, &[1], true).unwrap();
        assert_eq!(strict.stages[0].p_k(), 13);
        assert_eq!(strict.stages[0].base_p_k, 11);
        assert!(strict.stages[0].escalated());
    }

    #[test]
    fn plan_rejects_bad_factors() {
        assert!(stage_plan(64, &[], false).is_err());
        assert!(stage_plan(64, &[2, 4], false).is_err());
        assert!(stage_plan(64, &[1, 4, 2], false).is_err());
        assert!(stage_plan(0, &[1], false).is_err());
    }

    #[test]
    fn text_outputs() {
        let plan = stage_plan(21, &[1], true).unwrap();
        let kv = plan.to_key_values();
        assert!(kv.contains("stage.1.base_p_k=11"));
        assert!(kv.contains("stage.1.base_gaps=19,20"));
        assert!(kv.contains("stage.1.p_k=13"));
        assert!(kv.contains("stage.1.kernels=1,2,3,5,7,11,13"));
        let table = stage_plan(64, &[1, 2, 4, 8], false).unwrap().to_table();
        assert_eq!(table.lines().count(), 5);
        assert!(table.lines().nth(1).unwrap().contains("37"));
    }

    #[test]
    fn alg1_exhaustive_to_ten_thousand() {
        let primes = primes_up_to(10_010);
        for l in 1..=10_000usize {
            let p = select_kernel_set(l).p_k();
            assert!(2 * p > l);
            assert!(primes.iter().take_while(|&&q| q < p).all(|&q| 2 * q <= l));
        }
    }

    proptest! {
        #[test]
        fn kernel_set_invariants(l in 1usize..5000) {
            let s = select_kernel_set(l);
            let k = s.kernels();
            prop_assert!(k.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(k[0], 1);
            prop_assert_eq!(*k.last().unwrap(), s.p_k());
            prop_assert!(is_prime(s.p_k()));
            prop_assert!(k[1..].iter().all(|&x| is_prime(x)));
        }

        #[test]
        fn select_is_monotone(a in 1usize..5000, b in 1usize..5000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(select_kernel_set(lo).p_k() <= select_kernel_set(hi).p_k());
        }

        #[test]
        fn coverage_symmetric(a in 1usize..60, b in 1usize..60) {
            let x = select_kernel_set(a);
            let y = select_kernel_set(b);
            prop_assert_eq!(
                coverage_set(&x, &y, &TAIL_KERNELS),
                coverage_set(&y, &x, &TAIL_KERNELS)
            );
        }

        #[test]
        fn coverage_partition(a in 1usize..60, b in 1usize..60) {
            let c = coverage_set(&select_kernel_set(a), &select_kernel_set(b), &TAIL_KERNELS);
            for s in 1..=c.target_max {
                prop_assert!(c.achievable.contains(&s) ^ c.gaps.contains(&s));
            }
        }

        #[test]
        fn plan_p_k_non_increasing(
            cover in 1usize..2000,
            steps in proptest::collection::vec(1usize..4, 0..6),
            strict in any::<bool>(),
        ) {
            let mut factors = vec![1usize];
            for s in steps {
                let last = *factors.last().unwrap();
                factors.push(last * s);
            }
            let plan = stage_plan(cover, &factors, strict).unwrap();
            let seq = plan.p_k_sequence();
            prop_assert!(seq.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn rf_ignores_unit_kernels(
            chain in proptest::collection::vec(1usize..40, 1..8),
            at in 0usize..8,
        ) {
            let base = receptive_field(&chain).unwrap();
            let mut with_one = chain.clone();
            with_one.insert(at.min(chain.len()), 1);
            prop_assert_eq!(receptive_field(&with_one).unwrap(), base);
        }
    }
}
