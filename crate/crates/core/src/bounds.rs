//! Bound calculators: the supremum tail bound and its single-function
//! corollary, good-tail levels, the chaining schedule and the induction
//! ladder. All probability outputs are capped at 1.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::DenseBudget;

/// The constants `C, alpha, M, gamma, K, A0` for one order `k`.
///
/// Only their existence is known; [`BoundConstants::exploratory`] gives
/// values for exploration, not certified ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConstants {
    pub c: f64,
    pub alpha: f64,
    pub m: f64,
    pub gamma: f64,
    pub k_threshold: f64,
    pub a0: f64,
}

impl BoundConstants {
    /// `C = e^k`, `alpha = k / (4e (k!)^{1/k})`, `M = 100`, `gamma = 0.01`,
    /// `K = 100`, `A0 = 8`.
    pub fn exploratory(k: usize) -> Self {
        let e = std::f64::consts::E;
        let factorial: f64 = (1..=k).map(|i| i as f64).product();
        Self {
            c: e.powi(k as i32),
            alpha: k as f64 / (4.0 * e * factorial.powf(1.0 / k.max(1) as f64)),
            m: 100.0,
            gamma: 0.01,
            k_threshold: 100.0,
            a0: 8.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("alpha", self.alpha),
            ("m", self.m),
            ("gamma", self.gamma),
            ("k_threshold", self.k_threshold),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(invalid(name, "must be finite and positive"));
            }
        }
        if !(self.a0 > 1.0) || !self.a0.is_finite() {
            return Err(invalid("a0", "must be finite and exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBound {
    pub bound: f64,
    /// `n sigma^2 >= (x/sigma)^{2/k} >= M (L + beta + 1)^{3/2} log(2/sigma)`.
    pub applicable: bool,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(invalid("sigma", "must lie in (0, 1]"));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    Ok(())
}

/// `min(1, C D exp(-alpha (x/sigma)^{2/k}))` with the region flag.
pub fn theorem_bound(
    x: f64,
    n: usize,
    k: usize,
    sigma: f64,
    budget: &DenseBudget,
    consts: &BoundConstants,
) -> Result<TheoremBound> {
    check_k(k)?;
    check_sigma(sigma)?;
    if !(x > 0.0) {
        return Err(invalid("x", "must be positive"));
    }
    let ratio = (x / sigma).powf(2.0 / k as f64);
    let bound = (consts.c * budget.parameter * (-consts.alpha * ratio).exp()).min(1.0);
    let floor = consts.m * (budget.exponent + budget.beta + 1.0).powf(1.5) * (2.0 / sigma).ln();
    let applicable = n as f64 * sigma * sigma >= ratio && ratio >= floor;
    Ok(TheoremBound { bound, applicable })
}

/// `min(1, C exp(-alpha x^{2/k}))`.
pub fn corollary2_bound(x: f64, k: usize, consts: &BoundConstants) -> Result<f64> {
    check_k(k)?;
    if !(x >= 0.0) {
        return Err(invalid("x", "must be nonnegative"));
    }
    Ok((consts.c * (-consts.alpha * x.powf(2.0 / k as f64)).exp()).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub threshold: f64,
    pub tail: f64,
}

/// Good-tail level for U-statistics: threshold `A n^{k/2} sigma^{k+1}` and
/// tail `exp(-A^{1/(2k)} n sigma^2)`.
pub fn proposition_level(n: usize, k: usize, sigma: f64, a: f64) -> Result<Level> {
    check_k(k)?;
    if !(a > 0.0) {
        return Err(invalid("a", "must be positive"));
    }
    let n = n as f64;
    let k = k as f64;
    Ok(Level {
        threshold: a * n.powf(k / 2.0) * sigma.powf(k + 1.0),
        tail: (-a.powf(1.0 / (2.0 * k)) * n * sigma * sigma).exp(),
    })
}

/// Good-tail level for the `H` integrals: threshold `A^2 n^k sigma^{2k+2}` and
/// tail `exp(-A^{1/(2k+1)} n sigma^2)`.
pub fn integral_level(n: usize, k: usize, sigma: f64, a: f64) -> Result<Level> {
    check_k(k)?;
    if !(a > 0.0) {
        return Err(invalid("a", "must be positive"));
    }
    let n = n as f64;
    let k = k as f64;
    Ok(Level {
        threshold: a * a * n.powf(k) * sigma.powf(2.0 * k + 2.0),
        tail: (-a.powf(1.0 / (2.0 * k + 1.0)) * n * sigma * sigma).exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainingSchedule {
    pub r: u32,
    pub sigma_bar: f64,
    /// `floor(D 4^{pL} sigma^{-L})` for `p = 0..=R`.
    pub net_sizes: Vec<f64>,
    pub a_bar: f64,
}

/// `(2^{(4+2/k)R}, 2^{(4+2/k)(R+1)})` scaled by `(x/(A sigma))^{2/k}`.
fn sandwich(r: u32, k: f64, base: f64) -> (f64, f64) {
    let step = 4.0 + 2.0 / k;
    (
        (step * r as f64).exp2() * base,
        (step * (r as f64 + 1.0)).exp2() * base,
    )
}

/// Picks `R >= 0` with
/// `2^{(4+2/k)(R+1)} u >= n sigma^2 / 2^{2-2/k} >= 2^{(4+2/k)R} u`,
/// `u = (x/(A sigma))^{2/k}`, and sets `sigma_bar = 4^{-R} sigma`.
pub fn chaining_schedule(
    n: usize,
    k: usize,
    sigma: f64,
    x: f64,
    a_bar: f64,
    d: f64,
    l: f64,
) -> Result<ChainingSchedule> {
    check_k(k)?;
    check_sigma(sigma)?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(invalid("x", "must be finite and positive"));
    }
    if !(a_bar >= (k as f64).exp2()) {
        return Err(invalid("a_bar", "must be at least 2^k"));
    }
    if !(d >= 1.0) || !(l >= 0.0) {
        return Err(invalid("d", "need D >= 1 and L >= 0"));
    }
    let kf = k as f64;
    let n_sigma2 = n as f64 * sigma * sigma;
    if n_sigma2 < (x / sigma).powf(2.0 / kf) {
        return Err(Error::NotApplicable);
    }
    let base = (x / (a_bar * sigma)).powf(2.0 / kf);
    let middle = n_sigma2 / (2.0 - 2.0 / kf).exp2();
    let step = 4.0 + 2.0 / kf;
    let mut r = ((middle / base).log2() / step).floor().max(0.0) as u32;
    loop {
        let (lo, hi) = sandwich(r, kf, base);
        if middle < lo && r > 0 {
            r -= 1;
        } else if middle > hi {
            r += 1;
        } else {
            break;
        }
    }
    let sigma_bar = sigma * (-2.0 * r as f64).exp2();
    let net_sizes = (0..=r)
        .map(|p| (d * (2.0 * p as f64 * l).exp2() * sigma.powf(-l)).floor())
        .collect();
    Ok(ChainingSchedule {
        r,
        sigma_bar,
        net_sizes,
        a_bar,
    })
}

impl ChainingSchedule {
    /// The three postconditions:
    /// `sigma_bar^2 = 16^{-R} sigma^2`, `m_p <= D 4^{pL} sigma^{-L}` and
    /// `64 (x/(A sigma_bar))^{2/k} >= n sigma_bar^2 >= (x/(A sigma))^{2/k}`.
    pub fn invariants(&self, n: usize, k: usize, sigma: f64, x: f64, d: f64, l: f64) -> [bool; 3] {
        let kf = k as f64;
        let exact = self.sigma_bar * self.sigma_bar == sigma * sigma * (-4.0 * self.r as f64).exp2();
        let sizes = self
            .net_sizes
            .iter()
            .enumerate()
            .all(|(p, m)| *m <= d * (2.0 * p as f64 * l).exp2() * sigma.powf(-l));
        let n_bar = n as f64 * self.sigma_bar * self.sigma_bar;
        let upper = 64.0 * (x / (self.a_bar * self.sigma_bar)).powf(2.0 / kf);
        let lower = (x / (self.a_bar * sigma)).powf(2.0 / kf);
        [exact, sizes, upper >= n_bar && n_bar >= lower]
    }
}

/// The descending ladder `T_0 = n^{k/2}`, `T_{i+1} = T_i^{3/4}`, through the
/// first level at or below `A0^{4/3}`. Empty when `T_0 <= A0^{4/3}`.
pub fn induction_levels(n: usize, k: usize, a0: f64) -> Result<Vec<f64>> {
    check_k(k)?;
    if !(a0 > 1.0) {
        return Err(invalid("a0", "must exceed 1"));
    }
    let stop = a0.powf(4.0 / 3.0);
    let mut level = (n as f64).powf(k as f64 / 2.0);
    if level <= stop {
        return Ok(Vec::new());
    }
    let mut levels = vec![level];
    while level > stop {
        level = level.powf(0.75);
        levels.push(level);
    }
    Ok(levels)
}
