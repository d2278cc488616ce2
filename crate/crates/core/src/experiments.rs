//! Monte Carlo and exhaustive experiments around the tail inequalities.
//!
//! Replication `r` draws its randomness from streams `16 r ..` of the run
//! seed, so results do not depend on the worker count or on scheduling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosCoefficients, ChaosDistribution};
use crate::decomposition::canonical_part;
use crate::error::{invalid, Error, Result};
use crate::kernels::{interval_family, FunctionFamily, KernelFunction};
use crate::measure_space::{stream_rng, Sample};
use crate::statistics::{randomized_decoupled, SampleDraw, StatisticKind};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Replications, seed and worker count of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McSettings {
    pub reps: usize,
    pub seed: u64,
    /// Zero runs on the ambient rayon pool.
    pub workers: usize,
}

impl McSettings {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            workers: 0,
        }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Self { workers, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Runs `task(r)` for `r in 0..reps` in parallel and returns the results in
/// replication order.
pub fn replicate<T, F>(settings: &McSettings, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    settings.validate()?;
    let run = || {
        (0..settings.reps as u64)
            .into_par_iter()
            .map(&task)
            .collect::<Result<Vec<T>>>()
    };
    if settings.workers == 0 {
        return run();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?
        .install(run)
}

/// Empirical exceedance curve `x -> P(M > x)` of a replicated maximum `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub x_grid: Vec<f64>,
    pub probs: Vec<f64>,
    pub replications: usize,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub wilson_halfwidths: Vec<f64>,
}

impl TailCurve {
    /// Strict exceedance frequencies of `maxima` on an increasing grid.
    pub fn from_maxima(maxima: &[f64], x_grid: &[f64]) -> Result<Self> {
        check_grid(x_grid)?;
        let mut sorted = maxima.to_vec();
        sorted.sort_by(f64::total_cmp);
        let reps = sorted.len();
        let mut curve = Self {
            x_grid: x_grid.to_vec(),
            probs: Vec::with_capacity(x_grid.len()),
            replications: reps,
            ci_lo: Vec::with_capacity(x_grid.len()),
            ci_hi: Vec::with_capacity(x_grid.len()),
            wilson_halfwidths: Vec::with_capacity(x_grid.len()),
        };
        for x in x_grid {
            let above = reps - sorted.partition_point(|m| m <= x);
            let (lo, hi) = wilson_interval(above, reps);
            curve.probs.push(above as f64 / reps.max(1) as f64);
            curve.ci_lo.push(lo);
            curve.ci_hi.push(hi);
            curve.wilson_halfwidths.push((hi - lo) / 2.0);
        }
        Ok(curve)
    }

    /// Curve of exact probabilities (no sampling error).
    pub fn exact(x_grid: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        check_grid(&x_grid)?;
        if probs.len() != x_grid.len() {
            return Err(Error::ShapeMismatch("one probability per grid point".into()));
        }
        let n = probs.len();
        Ok(Self {
            x_grid,
            ci_lo: probs.clone(),
            ci_hi: probs.clone(),
            probs,
            replications: 0,
            wilson_halfwidths: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }
}

fn check_grid(x_grid: &[f64]) -> Result<()> {
    if x_grid.iter().any(|x| !x.is_finite()) {
        return Err(invalid("x_grid", "must be finite"));
    }
    if x_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("x_grid", "must be strictly increasing"));
    }
    Ok(())
}

/// Occupation counts weighted by `weights` (all ones when `None`).
fn weighted_counts(sample: &Sample, points: usize, weights: Option<&[f64]>) -> Vec<f64> {
    let mut counts = vec![0.0; points];
    for (j, x) in sample.values().iter().enumerate() {
        counts[*x] += weights.map_or(1.0, |w| w[j]);
    }
    counts
}

fn dot(f: &KernelFunction, v: &[f64]) -> f64 {
    f.table().iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `sup over members of |statistic|` for one draw. Arity one reduces every
/// member to a dot product with a shared count vector.
pub fn family_sup(family: &FunctionFamily, kind: StatisticKind, draw: &SampleDraw) -> Result<f64> {
    let space = family.space();
    if family.arity() == 1 {
        let n = draw.n() as f64;
        let m = space.points();
        let (vector, scale) = match kind {
            StatisticKind::J => {
                let counts = weighted_counts(&draw.base, m, None);
                let centred: Vec<f64> = counts
                    .iter()
                    .zip(space.weights())
                    .map(|(c, w)| c - n * w)
                    .collect();
                (centred, n.powf(-0.5))
            }
            StatisticKind::I => (weighted_counts(&draw.base, m, None), n.powf(-0.5)),
            StatisticKind::DecoupledI => (weighted_counts(&draw.decoupled[0], m, None), n.powf(-0.5)),
        };
        return Ok(family
            .members()
            .iter()
            .map(|f| (scale * dot(f, &vector)).abs())
            .fold(0.0, f64::max));
    }
    let mut sup: f64 = 0.0;
    for f in family.members() {
        sup = sup.max(kind.evaluate(f, draw, space)?.abs());
    }
    Ok(sup)
}

/// `P(sup_f |statistic(f)| > x)` on a grid.
pub fn mc_sup_tail(
    family: &FunctionFamily,
    n: usize,
    kind: StatisticKind,
    x_grid: &[f64],
    settings: &McSettings,
) -> Result<TailCurve> {
    check_grid(x_grid)?;
    if n < family.arity() {
        return Err(Error::DegenerateSample {
            n,
            k: family.arity(),
        });
    }
    let k = family.arity();
    let maxima = replicate(settings, |r| {
        let draw = SampleDraw::generate(family.space(), n, k, settings.seed, r)?;
        family_sup(family, kind, &draw)
    })?;
    TailCurve::from_maxima(&maxima, x_grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationReport {
    pub x: f64,
    /// `P(sup |n^{-1/2} sum f(xi_j)| >= x)` over the canonical parts.
    pub lhs: f64,
    pub lhs_ci: (f64, f64),
    /// `P(sup |n^{-1/2} sum eps_j f(xi_j)| >= x/3)`.
    pub randomized: f64,
    pub randomized_ci: (f64, f64),
    /// `min(1, 4 * randomized)`.
    pub rhs: f64,
    pub rhs_ci: (f64, f64),
    /// The intervals separate with `lhs` above `rhs`.
    pub violated: bool,
}

/// Compares a centred empirical process with its sign-randomized version.
/// Members are replaced by their canonical parts.
pub fn symmetrization_experiment(
    family: &FunctionFamily,
    n: usize,
    x: f64,
    settings: &McSettings,
) -> Result<SymmetrizationReport> {
    if family.arity() != 1 {
        return Err(invalid("family", "symmetrization needs arity 1"));
    }
    if !(x >= 0.0) {
        return Err(invalid("x", "must be nonnegative"));
    }
    if n == 0 {
        return Err(Error::DegenerateSample { n, k: 1 });
    }
    let space = family.space();
    let centred: Vec<KernelFunction> = family
        .members()
        .iter()
        .map(|f| canonical_part(f, space))
        .collect::<Result<_>>()?;
    let scale = (n as f64).powf(-0.5);
    let pairs = replicate(settings, |r| {
        let draw = SampleDraw::generate(space, n, 1, settings.seed, r)?;
        let plain = weighted_counts(&draw.base, space.points(), None);
        let signed = weighted_counts(&draw.base, space.points(), Some(&draw.signs));
        let mut sup_plain: f64 = 0.0;
        let mut sup_signed: f64 = 0.0;
        for f in &centred {
            sup_plain = sup_plain.max((scale * dot(f, &plain)).abs());
            sup_signed = sup_signed.max((scale * dot(f, &signed)).abs());
        }
        Ok((sup_plain >= x, sup_signed >= x / 3.0))
    })?;
    let reps = pairs.len();
    let lhs_hits = pairs.iter().filter(|p| p.0).count();
    let rand_hits = pairs.iter().filter(|p| p.1).count();
    let lhs_ci = wilson_interval(lhs_hits, reps);
    let randomized_ci = wilson_interval(rand_hits, reps);
    let randomized = rand_hits as f64 / reps as f64;
    let rhs_ci = ((4.0 * randomized_ci.0).min(1.0), (4.0 * randomized_ci.1).min(1.0));
    Ok(SymmetrizationReport {
        x,
        lhs: lhs_hits as f64 / reps as f64,
        lhs_ci,
        randomized,
        randomized_ci,
        rhs: (4.0 * randomized).min(1.0),
        rhs_ci,
        violated: lhs_ci.0 > rhs_ci.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    /// Tail of `sup |n^{-k/2} I_{n,k}(f)|`.
    pub plain: TailCurve,
    /// Tail of `sup |n^{-k/2} Ibar_{n,k}(f)|` on the same draws.
    pub decoupled: TailCurve,
    /// `plain / decoupled` where the decoupled tail is positive.
    pub ratios: Vec<Option<f64>>,
}

/// Tails of the U-statistic and its decoupled version from shared draws.
pub fn decoupling_experiment(
    family: &FunctionFamily,
    n: usize,
    x_grid: &[f64],
    settings: &McSettings,
) -> Result<DecouplingReport> {
    let k = family.arity();
    if k < 2 {
        return Err(invalid("k", "decoupling needs arity at least 2"));
    }
    check_grid(x_grid)?;
    if n < k {
        return Err(Error::DegenerateSample { n, k });
    }
    let pairs = replicate(settings, |r| {
        let draw = SampleDraw::generate(family.space(), n, k, settings.seed, r)?;
        Ok((
            family_sup(family, StatisticKind::I, &draw)?,
            family_sup(family, StatisticKind::DecoupledI, &draw)?,
        ))
    })?;
    let plain_max: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let dec_max: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let plain = TailCurve::from_maxima(&plain_max, x_grid)?;
    let decoupled = TailCurve::from_maxima(&dec_max, x_grid)?;
    let ratios = plain
        .probs
        .iter()
        .zip(&decoupled.probs)
        .map(|(p, d)| (*d > 0.0).then(|| p / d))
        .collect();
    Ok(DecouplingReport {
        plain,
        decoupled,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub sigma: f64,
    pub grid: usize,
    pub members: usize,
    /// `sqrt(2 log(1/sigma)) sigma`.
    pub x_star: f64,
    pub x_low: f64,
    pub p_low: f64,
    pub p_low_ci: (f64, f64),
    pub x_high: f64,
    pub p_high: f64,
    pub p_high_ci: (f64, f64),
}

/// Grid used for the interval family at a given `sigma`: `2 ceil(1/sigma^2)`.
pub fn counterexample_grid(sigma: f64) -> usize {
    2 * (1.0 / (sigma * sigma) - 1e-9).ceil() as usize
}

/// Sup-tail of the interval family on either side of
/// `x* = sqrt(2 log(1/sigma)) sigma`.
pub fn counterexample_experiment(
    sigma: f64,
    n: usize,
    epsilon: f64,
    settings: &McSettings,
) -> Result<CounterexampleReport> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid("sigma", "must lie in (0, 1)"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", "must lie in (0, 1)"));
    }
    if n == 0 {
        return Err(Error::DegenerateSample { n, k: 1 });
    }
    let grid = counterexample_grid(sigma);
    let family = interval_family(sigma, grid)?;
    let x_star = (2.0 * (1.0 / sigma).ln()).sqrt() * sigma;
    let x_low = (1.0 - epsilon) * x_star;
    let x_high = (1.0 + epsilon) * x_star;
    let curve = mc_sup_tail(&family, n, StatisticKind::J, &[x_low, x_high], settings)?;
    Ok(CounterexampleReport {
        sigma,
        grid,
        members: family.len(),
        x_star,
        x_low,
        p_low: curve.probs[0],
        p_low_ci: (curve.ci_lo[0], curve.ci_hi[0]),
        x_high,
        p_high: curve.probs[1],
        p_high_ci: (curve.ci_lo[1], curve.ci_hi[1]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Probability window of the points used by [`exponent_fit`].
pub const FIT_WINDOW: (f64, f64) = (0.001, 0.5);
pub const FIT_MIN_POINTS: usize = 4;

/// Least-squares slope of `log(-log p)` on `log x` over points with
/// `p` in (0.001, 0.5).
pub fn exponent_fit(curve: &TailCurve) -> Result<ExponentFit> {
    let points: Vec<(f64, f64)> = curve
        .x_grid
        .iter()
        .zip(&curve.probs)
        .filter(|(x, p)| **x > 0.0 && **p > FIT_WINDOW.0 && **p < FIT_WINDOW.1)
        .map(|(x, p)| (x.ln(), (-p.ln()).ln()))
        .collect();
    if points.len() < FIT_MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: points.len(),
            needed: FIT_MIN_POINTS,
        });
    }
    let count = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (ssr / (count - 2.0) / sxx).sqrt();
    Ok(ExponentFit {
        slope,
        stderr,
        points: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTail {
    pub x: f64,
    /// Exact sign-conditional `P(|Z| > x)` from enumeration.
    pub exact: f64,
    pub mc: f64,
    pub mc_ci: (f64, f64),
}

/// With the decoupled copies of `draw` held fixed, the randomized decoupled
/// statistic is a chaos in the signs. Compares its exact conditional tail
/// with a Monte Carlo estimate over fresh signs.
pub fn conditional_chaos_tail(
    f: &KernelFunction,
    draw: &SampleDraw,
    x_grid: &[f64],
    settings: &McSettings,
) -> Result<Vec<ConditionalTail>> {
    check_grid(x_grid)?;
    let k = f.arity();
    if draw.decoupled.len() < k {
        return Err(Error::ShapeMismatch("draw lacks decoupled copies".into()));
    }
    let copies: Vec<&Sample> = draw.decoupled[..k].iter().collect();
    let law = ChaosDistribution::enumerate(&ChaosCoefficients::from_kernel(f, &copies)?)?;
    let n = draw.n();
    let values = replicate(settings, |r| {
        let mut rng = stream_rng(settings.seed, r);
        let mut resigned = draw.clone();
        resigned.signs = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(randomized_decoupled(f, &resigned)?.abs())
    })?;
    let curve = TailCurve::from_maxima(&values, x_grid)?;
    Ok(x_grid
        .iter()
        .enumerate()
        .map(|(i, x)| ConditionalTail {
            x: *x,
            exact: law.tail(*x),
            mc: curve.probs[i],
            mc_ci: (curve.ci_lo[i], curve.ci_hi[i]),
        })
        .collect())
}
