//! Homogeneous Rademacher chaos `Z = sum a(j_1..j_k) eps_{j_1}..eps_{j_k}`,
//! its tail and moment bounds, and exhaustive enumeration over sign vectors.
//!
//! Enumeration symmetrizes the coefficients to subsets, `b(S) = sum over
//! orderings of S of a`, so that `Z(eps) = sum_S b(S) prod_{j in S} eps_j`
//! is the Walsh transform of `b`. All `2^n` values come out of one fast
//! Walsh-Hadamard pass.

use std::f64::consts::E;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::KernelFunction;
use crate::measure_space::Sample;

/// Largest variable count accepted by the exhaustive oracles.
pub const ENUMERATION_LIMIT: usize = 24;

/// Below this length the transform runs on one thread.
const PARALLEL_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosCoefficients {
    k: usize,
    n: usize,
    /// Sorted by tuple; one entry per tuple.
    entries: Vec<(Vec<usize>, f64)>,
}

impl ChaosCoefficients {
    /// Duplicate tuples are summed. Tuples must have length `k`, entries
    /// below `n` and pairwise-distinct entries.
    pub fn new(
        k: usize,
        n: usize,
        entries: impl IntoIterator<Item = (Vec<usize>, f64)>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "chaos order must be at least 1"));
        }
        let mut collected: Vec<(Vec<usize>, f64)> = Vec::new();
        for (tuple, value) in entries {
            if tuple.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "tuple {tuple:?} has length {}, expected {k}",
                    tuple.len()
                )));
            }
            if tuple.iter().any(|j| *j >= n) {
                return Err(invalid("entries", format!("tuple {tuple:?} exceeds n = {n}")));
            }
            if (0..k).any(|a| (a + 1..k).any(|b| tuple[a] == tuple[b])) {
                return Err(invalid("entries", format!("tuple {tuple:?} repeats an index")));
            }
            if !value.is_finite() {
                return Err(invalid("entries", "coefficients must be finite"));
            }
            collected.push((tuple, value));
        }
        collected.sort_by(|a, b| a.0.cmp(&b.0));
        let mut entries: Vec<(Vec<usize>, f64)> = Vec::with_capacity(collected.len());
        for (tuple, value) in collected {
            match entries.last_mut() {
                Some(last) if last.0 == tuple => last.1 += value,
                _ => entries.push((tuple, value)),
            }
        }
        Ok(Self { k, n, entries })
    }

    /// One coefficient per ordered distinct tuple, from `a(tuple)`.
    pub fn from_fn(k: usize, n: usize, mut a: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut entries = Vec::new();
        let mut tuple = vec![0; k];
        for flat in 0..n.pow(k as u32) {
            let mut rest = flat;
            for slot in tuple.iter_mut().rev() {
                *slot = rest % n;
                rest /= n;
            }
            if (0..k).all(|p| (p + 1..k).all(|q| tuple[p] != tuple[q])) {
                entries.push((tuple.clone(), a(&tuple)));
            }
        }
        Self::new(k, n, entries)
    }

    /// The sign-conditional chaos of a randomized statistic: coordinate `s`
    /// reads `copies[s]`, and `a(j) = f(copies[0][j_1], ..) / k!`.
    pub fn from_kernel(f: &KernelFunction, copies: &[&Sample]) -> Result<Self> {
        let k = f.arity();
        if copies.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "{} sample copies for a kernel of arity {k}",
                copies.len()
            )));
        }
        let n = copies.first().map_or(0, |c| c.len());
        if copies.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch("sample copies differ in length".into()));
        }
        let factorial: f64 = (1..=k).map(|i| i as f64).product();
        let mut args = vec![0; k];
        Self::from_fn(k, n, |tuple| {
            for (s, j) in tuple.iter().enumerate() {
                args[s] = copies[s].values()[*j];
            }
            f.value(&args) / factorial
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    /// `b(S) = sum of a over the orderings of S`, keyed by subset bitmask.
    pub fn symmetrized(&self) -> Vec<(u64, f64)> {
        let mut by_mask: Vec<(u64, f64)> = self
            .entries
            .iter()
            .map(|(tuple, value)| (tuple.iter().fold(0u64, |m, j| m | 1 << j), *value))
            .collect();
        by_mask.sort_by_key(|e| e.0);
        let mut out: Vec<(u64, f64)> = Vec::with_capacity(by_mask.len());
        for (mask, value) in by_mask {
            match out.last_mut() {
                Some(last) if last.0 == mask => last.1 += value,
                _ => out.push((mask, value)),
            }
        }
        out
    }

    /// `Sbar^2 = sum over subsets of b(S)^2`, which equals `E Z^2`.
    pub fn s_bar_squared(&self) -> f64 {
        self.symmetrized().iter().map(|(_, b)| b * b).sum()
    }
}

/// `Z` at a sign vector.
pub fn chaos_value(coeffs: &ChaosCoefficients, signs: &[f64]) -> Result<f64> {
    if signs.len() != coeffs.n {
        return Err(Error::ShapeMismatch(format!(
            "{} signs for a chaos in {} variables",
            signs.len(),
            coeffs.n
        )));
    }
    Ok(coeffs
        .entries
        .iter()
        .map(|(tuple, a)| a * tuple.iter().map(|j| signs[*j]).product::<f64>())
        .sum())
}

/// `S = sqrt(sum of a^2)` over ordered tuples.
pub fn chaos_s(coeffs: &ChaosCoefficients) -> f64 {
    coeffs.entries.iter().map(|(_, a)| a * a).sum::<f64>().sqrt()
}

/// `B = k / (2e (k!)^{1/k})`.
pub fn chaos_b(k: usize) -> f64 {
    k as f64 / (2.0 * E * factorial(k).powf(1.0 / k as f64))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn check_order(k: usize) -> Result<()> {
    if k == 0 {
        return Err(invalid("k", "chaos order must be at least 1"));
    }
    Ok(())
}

/// `min(1, e^k exp(-B (x/S)^{2/k}))`; with `S = 0` the chaos vanishes.
pub fn chaos_tail_bound(x: f64, s: f64, k: usize) -> Result<f64> {
    check_order(k)?;
    if !(x >= 0.0) {
        return Err(invalid("x", "must be nonnegative"));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(invalid("s", "must be finite and nonnegative"));
    }
    if s == 0.0 {
        return Ok(if x == 0.0 { 1.0 } else { 0.0 });
    }
    let bound = E.powi(k as i32) * (-chaos_b(k) * (x / s).powf(2.0 / k as f64)).exp();
    Ok(bound.min(1.0))
}

/// `((q-1)/(p-1))^{kq/2} (E|Z|^p)^{q/p}`.
pub fn chaos_moment_bound(p: f64, q: f64, k: usize, pth_moment: f64) -> Result<f64> {
    check_order(k)?;
    if !(p > 1.0) {
        return Err(invalid("p", "must exceed 1"));
    }
    if !(q >= p) {
        return Err(invalid("q", "must be at least p"));
    }
    if !(pth_moment >= 0.0) {
        return Err(invalid("pth_moment", "must be nonnegative"));
    }
    Ok(((q - 1.0) / (p - 1.0)).powf(k as f64 * q / 2.0) * pth_moment.powf(q / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalQ {
    pub q: f64,
    pub bound: f64,
    /// `q >= 2`, the regime where the moment argument applies.
    pub applicable: bool,
}

/// The moment order that optimizes the Markov bound, and the resulting tail
/// bound `exp(-B (x/S)^{2/k})` when `q >= 2`.
pub fn optimal_q_tail(x: f64, s: f64, k: usize) -> Result<OptimalQ> {
    check_order(k)?;
    if !(x > 0.0) || !(s > 0.0) {
        return Err(invalid("x", "x and s must be positive"));
    }
    let ratio = (x / s).powf(2.0 / k as f64);
    let q = ratio / (E * factorial(k).powf(1.0 / k as f64));
    if q >= 2.0 {
        Ok(OptimalQ {
            q,
            bound: (-chaos_b(k) * ratio).exp(),
            applicable: true,
        })
    } else {
        Ok(OptimalQ {
            q,
            bound: 1.0,
            applicable: false,
        })
    }
}

/// In-place Walsh-Hadamard transform: `out[t] = sum_s v[s] (-1)^{|s & t|}`.
fn walsh_hadamard(values: &mut [f64]) {
    let len = values.len();
    let mut half = 1;
    while half < len {
        let butterfly = |block: &mut [f64]| {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        };
        if len >= PARALLEL_THRESHOLD {
            values.par_chunks_mut(2 * half).for_each(butterfly);
        } else {
            values.chunks_mut(2 * half).for_each(butterfly);
        }
        half *= 2;
    }
}

/// Every value of `Z`, indexed by sign mask: bit `j` set means `eps_j = -1`.
pub fn enumerate_chaos(coeffs: &ChaosCoefficients) -> Result<Vec<f64>> {
    if coeffs.n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationRefused {
            n: coeffs.n,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut values = vec![0.0; 1 << coeffs.n];
    for (mask, b) in coeffs.symmetrized() {
        values[mask as usize] = b;
    }
    walsh_hadamard(&mut values);
    Ok(values)
}

/// The exact law of `|Z|` under uniform signs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosDistribution {
    /// `|Z|` over all sign vectors, ascending.
    sorted_abs: Vec<f64>,
}

impl ChaosDistribution {
    pub fn enumerate(coeffs: &ChaosCoefficients) -> Result<Self> {
        let mut sorted_abs: Vec<f64> = enumerate_chaos(coeffs)?.into_iter().map(f64::abs).collect();
        sorted_abs.par_sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted_abs })
    }

    /// `P(|Z| > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        let at_most = self.sorted_abs.partition_point(|z| *z <= x);
        (self.sorted_abs.len() - at_most) as f64 / self.sorted_abs.len() as f64
    }

    /// `E|Z|^q`, summed in fixed-size chunks so the result does not depend
    /// on the thread count.
    pub fn moment(&self, q: f64) -> f64 {
        let partial: Vec<f64> = self
            .sorted_abs
            .par_chunks(4096)
            .map(|chunk| chunk.iter().map(|z| z.powf(q)).sum::<f64>())
            .collect();
        partial.iter().sum::<f64>() / self.sorted_abs.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.sorted_abs.last().copied().unwrap_or(0.0)
    }
}

/// Exact `P(|Z| > x)` by enumeration of all `2^n` sign vectors.
pub fn exact_chaos_tail(coeffs: &ChaosCoefficients, x: f64) -> Result<f64> {
    Ok(ChaosDistribution::enumerate(coeffs)?.tail(x))
}

/// Exact `E|Z|^q` by enumeration.
pub fn exact_chaos_moment(coeffs: &ChaosCoefficients, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(invalid("q", "must be positive"));
    }
    Ok(ChaosDistribution::enumerate(coeffs)?.moment(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn signs_of(mask: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| if mask & (1 << j) != 0 { -1.0 } else { 1.0 }).collect()
    }

    fn random_coeffs(k: usize, n: usize, seed: u64) -> ChaosCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ChaosCoefficients::from_fn(k, n, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn value_examples() {
        let ones = ChaosCoefficients::from_fn(1, 5, |_| 1.0).unwrap();
        assert_eq!(chaos_value(&ones, &[1.0; 5]).unwrap(), 5.0);

        let pairs = ChaosCoefficients::from_fn(2, 3, |_| 1.0).unwrap();
        assert_eq!(pairs.entries().len(), 6);
        assert_eq!(chaos_value(&pairs, &[1.0, 1.0, -1.0]).unwrap(), -2.0);

        for k in 1..=3 {
            let c = random_coeffs(k, 5, k as u64);
            let s = signs_of(13, 5);
            let flipped: Vec<f64> = s.iter().map(|x| -x).collect();
            let z = chaos_value(&c, &s).unwrap();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((chaos_value(&c, &flipped).unwrap() - sign * z).abs() < 1e-12);
        }
        assert!(chaos_value(&pairs, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn construction_rejects_bad_tuples() {
        assert!(ChaosCoefficients::new(2, 3, vec![(vec![1, 1], 1.0)]).is_err());
        assert!(ChaosCoefficients::new(2, 3, vec![(vec![0, 3], 1.0)]).is_err());
        assert!(ChaosCoefficients::new(2, 3, vec![(vec![0], 1.0)]).is_err());
        let merged = ChaosCoefficients::new(1, 2, vec![(vec![0], 1.0), (vec![0], 2.0)]).unwrap();
        assert_eq!(merged.entries(), &[(vec![0], 3.0)]);
    }

    #[test]
    fn s_examples() {
        assert_eq!(chaos_s(&ChaosCoefficients::new(2, 4, vec![]).unwrap()), 0.0);
        assert_eq!(chaos_s(&ChaosCoefficients::new(3, 4, vec![(vec![0, 2, 3], 3.0)]).unwrap()), 3.0);
        let c = ChaosCoefficients::new(1, 2, vec![(vec![0], 3.0), (vec![1], 4.0)]).unwrap();
        assert_eq!(chaos_s(&c), 5.0);
    }

    #[test]
    fn tail_bound_examples() {
        assert_eq!(chaos_tail_bound(0.0, 1.0, 2).unwrap(), 1.0);
        assert!((chaos_b(1) - 0.183_939_720_585_721_2).abs() < 1e-15);
        let expected = E * (-18.393_972_058_572_12f64).exp();
        let got = chaos_tail_bound(10.0, 1.0, 1).unwrap();
        assert!((got / expected - 1.0).abs() < 1e-12);
        let mut last = 1.0;
        for i in 0..200 {
            let b = chaos_tail_bound(i as f64 * 0.25, 1.3, 3).unwrap();
            assert!(b <= last);
            last = b;
        }
        assert_eq!(chaos_tail_bound(1.0, 0.0, 2).unwrap(), 0.0);
        assert_eq!(chaos_tail_bound(0.0, 0.0, 2).unwrap(), 1.0);
    }

    #[test]
    fn moment_bound_examples() {
        assert!((chaos_moment_bound(2.0, 2.0, 3, 1.7).unwrap() - 1.7).abs() < 1e-15);
        assert!((chaos_moment_bound(2.0, 4.0, 1, 2.0).unwrap() - 36.0).abs() < 1e-12);
        let mut last = 0.0;
        for i in 0..20 {
            let b = chaos_moment_bound(2.0, 2.0 + i as f64 * 0.5, 2, 1.5).unwrap();
            assert!(b >= last);
            last = b;
        }
        assert!(chaos_moment_bound(1.0, 2.0, 1, 1.0).is_err());
    }

    #[test]
    fn enumeration_matches_direct_values() {
        for k in 1..=3 {
            let c = random_coeffs(k, 7, 20 + k as u64);
            let values = enumerate_chaos(&c).unwrap();
            for (mask, v) in values.iter().enumerate() {
                let direct = chaos_value(&c, &signs_of(mask, 7)).unwrap();
                assert!((v - direct).abs() < 1e-12, "k={k} mask={mask}");
            }
        }
    }

    #[test]
    fn exact_tail_examples() {
        let c = ChaosCoefficients::new(1, 2, vec![(vec![0], 1.0), (vec![1], 1.0)]).unwrap();
        assert_eq!(exact_chaos_tail(&c, 1.5).unwrap(), 0.5);
        assert_eq!(exact_chaos_tail(&c, -0.1).unwrap(), 1.0);
        assert_eq!(exact_chaos_tail(&c, 2.0).unwrap(), 0.0);
        let big = ChaosCoefficients::new(1, 30, vec![(vec![0], 1.0)]).unwrap();
        assert_eq!(
            exact_chaos_tail(&big, 0.0),
            Err(Error::EnumerationRefused { n: 30, limit: 24 })
        );
    }

    #[test]
    fn exact_moment_examples() {
        let c = ChaosCoefficients::new(1, 3, vec![(vec![0], 0.5), (vec![1], -2.0), (vec![2], 1.0)]).unwrap();
        assert!((exact_chaos_moment(&c, 2.0).unwrap() - 5.25).abs() < 1e-12);

        let sym = ChaosCoefficients::from_fn(2, 4, |t| 0.1 * (t[0] + t[1]) as f64 + 0.3).unwrap();
        let unordered: f64 = sym.symmetrized().iter().map(|(_, b)| b * b).sum();
        let second = exact_chaos_moment(&sym, 2.0).unwrap();
        assert!((second - unordered).abs() < 1e-12);
        // Symmetric coefficients: b = 2a, so E Z^2 = 2! * S^2.
        assert!((second - 2.0 * chaos_s(&sym).powi(2)).abs() < 1e-12);

        let lopsided = random_coeffs(3, 5, 8);
        let s_bar = exact_chaos_moment(&lopsided, 2.0).unwrap();
        assert!(s_bar <= 6.0 * chaos_s(&lopsided).powi(2) + 1e-12);
        assert!(exact_chaos_moment(&lopsided, 3.3).unwrap() >= 0.0);
    }

    #[test]
    fn mean_vanishes_and_second_moment_is_s_bar() {
        for k in 1..=3 {
            let c = random_coeffs(k, 9, 40 + k as u64);
            let values = enumerate_chaos(&c).unwrap();
            let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
            assert!(mean.abs() < 1e-12);
            let second: f64 = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
            assert!((second - c.s_bar_squared()).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_in_each_sign() {
        let c = random_coeffs(3, 6, 3);
        for j in 0..6 {
            let mut s = signs_of(22, 6);
            s[j] = 1.0;
            let plus = chaos_value(&c, &s).unwrap();
            s[j] = -1.0;
            let minus = chaos_value(&c, &s).unwrap();
            s[j] = 0.0;
            let middle = chaos_value(&c, &s).unwrap();
            assert!((middle - 0.5 * (plus + minus)).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_q_examples() {
        let big = optimal_q_tail(40.0, 1.0, 2).unwrap();
        assert!(big.applicable);
        let capped = chaos_tail_bound(40.0, 1.0, 2).unwrap();
        assert!((big.bound * E * E - capped).abs() < 1e-15);

        let small = optimal_q_tail(0.5, 1.0, 2).unwrap();
        assert!(!small.applicable);
        assert_eq!(small.bound, 1.0);

        // k = 1: q = (x/S)^2 / e equals 2 at x/S = sqrt(2e).
        let edge = (2.0 * E).sqrt();
        let at = optimal_q_tail(edge, 1.0, 1).unwrap();
        assert!((at.q - 2.0).abs() < 1e-12);
        assert!(at.applicable);
        let below = optimal_q_tail(edge * (1.0 - 1e-9), 1.0, 1).unwrap();
        assert!(!below.applicable);
        assert!((at.bound - (-1.0f64).exp()).abs() < 1e-12);
        let full = chaos_tail_bound(edge, 1.0, 1).unwrap();
        assert!((E * at.bound - full).abs() < 1e-12);
    }
}
