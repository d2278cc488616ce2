//! Random functionals of a sample: the multiple integral `J_{n,k}`, the
//! U-statistic `I_{n,k}`, its decoupled and sign-randomized versions, the
//! `H_{n,k}` integrals, and the expansion of `J` into degenerate U-statistics.
//!
//! Every sum over ordered tuples of pairwise-distinct sample indices is
//! evaluated by Möbius inversion over set partitions of the coordinates:
//!
//! ```text
//! sum_{distinct j} F(j) = sum_{pi} mu(pi) sum_{j constant on blocks of pi} F(j),
//! mu(pi) = prod_{blocks b} (-1)^{|b|-1} (|b|-1)!
//! ```
//!
//! Unrestricted sums factor through per-coordinate occupation counts, so a
//! statistic costs `O(m^k + n)` instead of `O(n^k)`.
//!
//! `J_{n,k}` treats the finite space as a stand-in for a non-atomic one: the
//! omitted diagonal is the one the empirical parts put mass on, i.e. repeated
//! sample indices. Coordinates integrated against `mu` are integrated in full.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{hoeffding_decompose, project_p, HoeffdingDecomposition};
use crate::error::{invalid, Error, Result};
use crate::kernels::{decode_into, KernelFunction};
use crate::measure_space::{stream_rng, ProbabilitySpace, Sample};

/// Stream ids reserved per replication of a [`SampleDraw`].
pub const STREAMS_PER_DRAW: u64 = 16;
const SIGN_STREAM: u64 = STREAMS_PER_DRAW - 1;

/// Relative residual accepted when fitting expansion coefficients.
pub const EXPANSION_TOLERANCE: f64 = 1e-8;

/// One Monte Carlo realization: the base sample, `k` decoupled copies, `k`
/// mirrored copies and a Rademacher sign per index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub base: Sample,
    pub decoupled: Vec<Sample>,
    pub mirrored: Vec<Sample>,
    pub signs: Vec<f64>,
    pub seed: u64,
    pub replica: u64,
}

impl SampleDraw {
    /// Streams `replica * 16 + c`: `c = 0` base, `1..=k` decoupled,
    /// `k+1..=2k` mirrored, `15` signs.
    pub fn generate(
        space: &ProbabilitySpace,
        n: usize,
        k: usize,
        seed: u64,
        replica: u64,
    ) -> Result<Self> {
        if 2 * k + 1 >= STREAMS_PER_DRAW as usize {
            return Err(invalid("k", "too many coordinates for one draw"));
        }
        let stream = |c: u64| replica * STREAMS_PER_DRAW + c;
        let base = space.draw_sample(n, seed, stream(0))?;
        let decoupled = (1..=k as u64)
            .map(|c| space.draw_sample(n, seed, stream(c)))
            .collect::<Result<_>>()?;
        let mirrored = (k as u64 + 1..=2 * k as u64)
            .map(|c| space.draw_sample(n, seed, stream(c)))
            .collect::<Result<_>>()?;
        let mut rng = stream_rng(seed, stream(SIGN_STREAM));
        let signs = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(Self {
            base,
            decoupled,
            mirrored,
            signs,
            seed,
            replica,
        })
    }

    /// A draw assembled from explicit parts (exhaustive enumerations).
    pub fn from_parts(
        base: Sample,
        decoupled: Vec<Sample>,
        mirrored: Vec<Sample>,
        signs: Vec<f64>,
    ) -> Self {
        Self {
            base,
            decoupled,
            mirrored,
            signs,
            seed: 0,
            replica: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }
}

/// Set partitions of `{0, .., k-1}` with their Möbius weights.
fn set_partitions(k: usize) -> Vec<(Vec<Vec<usize>>, f64)> {
    fn grow(i: usize, k: usize, blocks: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == k {
            out.push(blocks.clone());
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(i);
            grow(i + 1, k, blocks, out);
            blocks[b].pop();
        }
        blocks.push(vec![i]);
        grow(i + 1, k, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    grow(0, k, &mut Vec::new(), &mut out);
    out.into_iter()
        .map(|blocks| {
            let weight = blocks
                .iter()
                .map(|b| {
                    let factorial: f64 = (1..b.len()).map(|i| i as f64).product();
                    if b.len() % 2 == 1 { factorial } else { -factorial }
                })
                .product();
            (blocks, weight)
        })
        .collect()
}

/// Integrates coordinate `coord` against an arbitrary weight vector.
fn contract(f: &KernelFunction, coord: usize, weights: &[f64]) -> KernelFunction {
    let m = f.points();
    let arity = f.arity();
    let stride = m.pow((arity - 1 - coord) as u32);
    let outer = m.pow(coord as u32);
    let table = f.table();
    let mut out = vec![0.0; outer * stride];
    for o in 0..outer {
        let dst = &mut out[o * stride..(o + 1) * stride];
        for (z, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let src = &table[(o * m + z) * stride..(o * m + z + 1) * stride];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    KernelFunction::from_table(arity - 1, m, out).expect("contraction preserves shape")
}

/// `sum over ordered distinct (j_1..j_k) of prod_s w_{j_s} f(copies[s][j_s])`,
/// with `w = 1` when no weights are given.
fn distinct_index_sum(f: &KernelFunction, copies: &[&[usize]], weights: Option<&[f64]>) -> f64 {
    let k = f.arity();
    debug_assert_eq!(copies.len(), k);
    if k == 0 {
        return f.as_scalar();
    }
    let n = copies[0].len();
    let m = f.points();
    let weight = |j: usize, power: usize| -> f64 {
        match weights {
            Some(w) => w[j].powi(power as i32),
            None => 1.0,
        }
    };

    let mut total = 0.0;
    for (blocks, mobius) in set_partitions(k) {
        let singles: Vec<usize> = blocks
            .iter()
            .filter(|b| b.len() == 1)
            .map(|b| b[0])
            .collect();
        let multis: Vec<&Vec<usize>> = blocks.iter().filter(|b| b.len() > 1).collect();

        // Contract singleton coordinates against weighted occupation counts,
        // highest coordinate first so the remaining axes keep their order.
        let mut g = f.clone();
        for &s in singles.iter().rev() {
            let mut counts = vec![0.0; m];
            for (j, &x) in copies[s].iter().enumerate() {
                counts[x] += weight(j, 1);
            }
            g = contract(&g, s, &counts);
        }
        // Remaining axes are the multi-block coordinates in increasing order.
        let mut remaining: Vec<usize> = multis.iter().flat_map(|b| b.iter().copied()).collect();
        remaining.sort_unstable();

        let term = if multis.is_empty() {
            g.as_scalar()
        } else {
            let r = multis.len();
            let mut args = vec![0; remaining.len()];
            let mut choice = vec![0; r];
            let mut acc = 0.0;
            let tuples = n.pow(r as u32);
            for flat in 0..tuples {
                let mut rest = flat;
                for c in choice.iter_mut().rev() {
                    *c = rest % n;
                    rest /= n;
                }
                let mut w = 1.0;
                for (block, &j) in multis.iter().zip(&choice) {
                    w *= weight(j, block.len());
                    for &s in block.iter() {
                        let pos = remaining.binary_search(&s).unwrap();
                        args[pos] = copies[s][j];
                    }
                }
                acc += w * g.value(&args);
            }
            acc
        };
        total += mobius * term;
    }
    total
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn check_sample(f: &KernelFunction, n: usize) -> Result<()> {
    if n < f.arity() {
        return Err(Error::DegenerateSample { n, k: f.arity() });
    }
    Ok(())
}

fn check_values(f: &KernelFunction, sample: &Sample) -> Result<()> {
    match sample.values().iter().find(|v| **v >= f.points()) {
        Some(&value) => Err(Error::PointOutOfRange {
            value,
            points: f.points(),
        }),
        None => Ok(()),
    }
}

/// `I_{n,k}(f) = (1/k!) sum_{distinct j} f(xi_{j_1}, .., xi_{j_k})`.
pub fn u_statistic(f: &KernelFunction, sample: &Sample) -> Result<f64> {
    check_sample(f, sample.len())?;
    check_values(f, sample)?;
    let copies = vec![sample.values(); f.arity()];
    Ok(distinct_index_sum(f, &copies, None) / factorial(f.arity()))
}

/// `(1/k!) sum_{distinct j} eps_{j_1}..eps_{j_k} f(xi_{j_1}, .., xi_{j_k})`.
pub fn randomized_u_statistic(f: &KernelFunction, sample: &Sample, signs: &[f64]) -> Result<f64> {
    check_sample(f, sample.len())?;
    check_values(f, sample)?;
    if signs.len() != sample.len() {
        return Err(Error::ShapeMismatch("one sign per sample index".into()));
    }
    let copies = vec![sample.values(); f.arity()];
    Ok(distinct_index_sum(f, &copies, Some(signs)) / factorial(f.arity()))
}

fn decoupled_copies<'a>(f: &KernelFunction, draw: &'a SampleDraw) -> Result<Vec<&'a [usize]>> {
    check_sample(f, draw.n())?;
    if draw.decoupled.len() < f.arity() {
        return Err(Error::ShapeMismatch(format!(
            "draw has {} decoupled copies, kernel needs {}",
            draw.decoupled.len(),
            f.arity()
        )));
    }
    for copy in &draw.decoupled[..f.arity()] {
        check_values(f, copy)?;
    }
    Ok(draw.decoupled[..f.arity()].iter().map(Sample::values).collect())
}

/// The independent U-statistic: coordinate `s` reads decoupled copy `s`.
pub fn decoupled_u_statistic(f: &KernelFunction, draw: &SampleDraw) -> Result<f64> {
    let copies = decoupled_copies(f, draw)?;
    Ok(distinct_index_sum(f, &copies, None) / factorial(f.arity()))
}

/// The decoupled statistic with each term weighted by its row signs.
pub fn randomized_decoupled(f: &KernelFunction, draw: &SampleDraw) -> Result<f64> {
    let copies = decoupled_copies(f, draw)?;
    Ok(distinct_index_sum(f, &copies, Some(&draw.signs)) / factorial(f.arity()))
}

/// `sum_V (-1)^{|V|} Ibar^V(f)`, coordinate `s` reading the decoupled copy if
/// `s` is in `V` and the mirrored copy otherwise; with `signs`, the
/// sign-randomized version.
pub fn mirrored_difference(f: &KernelFunction, draw: &SampleDraw, randomized: bool) -> Result<f64> {
    let k = f.arity();
    check_sample(f, draw.n())?;
    if draw.decoupled.len() < k || draw.mirrored.len() < k {
        return Err(Error::ShapeMismatch("draw lacks decoupled or mirrored copies".into()));
    }
    let weights = randomized.then_some(draw.signs.as_slice());
    let mut total = 0.0;
    for mask in 0..1u32 << k {
        let copies: Vec<&[usize]> = (0..k)
            .map(|s| {
                if mask & (1 << s) != 0 {
                    draw.decoupled[s].values()
                } else {
                    draw.mirrored[s].values()
                }
            })
            .collect();
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * distinct_index_sum(f, &copies, weights);
    }
    Ok(total / factorial(k))
}

/// Integrates every coordinate not in `keep` against `mu`.
fn project_complement(
    f: &KernelFunction,
    keep: u32,
    mu: &ProbabilitySpace,
) -> Result<KernelFunction> {
    let mut g = f.clone();
    for t in (0..f.arity()).rev().filter(|t| keep & (1 << t) == 0) {
        g = project_p(&g, t, mu)?;
    }
    Ok(g)
}

/// `J_{n,k}(f)`: `(n^{k/2}/k!)` times the integral of `f` against the
/// k-fold product of `mu_n - mu` with the sample diagonals omitted.
///
/// Expanding the product, the coordinates in `A` take `mu_n` and the rest
/// take `-mu`:
///
/// ```text
/// J = n^{k/2}/k! sum_A (-1)^{k-|A|} n^{-|A|} sum_{distinct j} (P_{A^c} f)(xi_j)
/// ```
pub fn multiple_integral_j(
    f: &KernelFunction,
    sample: &Sample,
    space: &ProbabilitySpace,
) -> Result<f64> {
    f.check_space(space)?;
    space.ensure_points(sample.values())?;
    let k = f.arity();
    let n = sample.len() as f64;
    let mut total = 0.0;
    for keep in 0..1u32 << k {
        let size = keep.count_ones() as usize;
        if size > sample.len() {
            continue;
        }
        let g = project_complement(f, keep, space)?;
        let copies = vec![sample.values(); size];
        let sign = if (k - size).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * n.powi(-(size as i32)) * distinct_index_sum(&g, &copies, None);
    }
    Ok(n.powf(k as f64 / 2.0) / factorial(k) * total)
}

/// The integral of `f` against the k-fold product of the signed increment
/// `mu_n - mu` over point tuples with pairwise-distinct coordinates, scaled by
/// `n^{k/2}/k!`. On an atomic space this drops sample ties and the atoms of
/// `mu`, so it differs from [`multiple_integral_j`] on kernels with mass on
/// the point diagonal.
pub fn point_off_diagonal_integral(
    f: &KernelFunction,
    sample: &Sample,
    space: &ProbabilitySpace,
) -> Result<f64> {
    f.check_space(space)?;
    let nu = space.signed_increment(sample)?;
    let k = f.arity();
    let mut index = vec![0; k];
    let mut total = 0.0;
    for (cell, value) in f.table().iter().enumerate() {
        decode_into(cell, f.points(), &mut index);
        if (0..k).any(|a| (a + 1..k).any(|b| index[a] == index[b])) {
            continue;
        }
        total += value * index.iter().map(|x| nu.weights()[*x]).product::<f64>();
    }
    Ok((sample.len() as f64).powf(k as f64 / 2.0) / factorial(k) * total)
}

/// A kernel `f(x_1, .., x_k, y)` whose last argument lives on an auxiliary
/// space: one `k`-ary slice per auxiliary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryKernel {
    slices: Vec<KernelFunction>,
}

impl AuxiliaryKernel {
    pub fn new(slices: Vec<KernelFunction>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| invalid("slices", "need at least one auxiliary point"))?;
        if slices
            .iter()
            .any(|s| s.arity() != first.arity() || s.points() != first.points())
        {
            return Err(Error::ShapeMismatch("auxiliary slices differ in shape".into()));
        }
        Ok(Self { slices })
    }

    pub fn arity(&self) -> usize {
        self.slices[0].arity()
    }

    pub fn slices(&self) -> &[KernelFunction] {
        &self.slices
    }
}

/// `H_{n,k}(f) = integral of Ibar_{n,k}(f(., y))^2 rho(dy)`.
pub fn h_integral(f: &AuxiliaryKernel, draw: &SampleDraw, rho: &ProbabilitySpace) -> Result<f64> {
    if rho.points() != f.slices.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} auxiliary slices, rho has {} points",
            f.slices.len(),
            rho.points()
        )));
    }
    let mut total = 0.0;
    for (slice, w) in f.slices.iter().zip(rho.weights()) {
        if *w > 0.0 {
            total += w * decoupled_u_statistic(slice, draw)?.powi(2);
        }
    }
    Ok(total)
}

/// Which statistic a Monte Carlo run tracks. `I` and `DecoupledI` are
/// reported with the normalization `n^{-k/2}`, which puts them on the scale
/// of `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    J,
    I,
    DecoupledI,
}

impl StatisticKind {
    pub fn evaluate(
        self,
        f: &KernelFunction,
        draw: &SampleDraw,
        space: &ProbabilitySpace,
    ) -> Result<f64> {
        let scale = (draw.n() as f64).powf(-(f.arity() as f64) / 2.0);
        match self {
            StatisticKind::J => multiple_integral_j(f, &draw.base, space),
            StatisticKind::I => Ok(scale * u_statistic(f, &draw.base)?),
            StatisticKind::DecoupledI => Ok(scale * decoupled_u_statistic(f, draw)?),
        }
    }
}

/// `C(n, k, r)` for `r = 0..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    pub n: usize,
    pub k: usize,
    pub values: Vec<f64>,
    /// Relative least-squares residual of the fit.
    pub residual: f64,
}

/// `n^{-r/2} sum_{|V| = r} I_{n,r}(f_V)` for `r = 0..=k`; `r = 0` is `f_empty`.
pub fn expansion_features(decomposition: &HoeffdingDecomposition, sample: &Sample) -> Result<Vec<f64>> {
    let k = decomposition.arity();
    let n = sample.len() as f64;
    let mut features = vec![decomposition.constant()];
    for r in 1..=k {
        let mut sum = 0.0;
        for (_, component) in decomposition.components_of_size(r) {
            sum += u_statistic(component, sample)?;
        }
        features.push(n.powf(-(r as f64) / 2.0) * sum);
    }
    Ok(features)
}

/// Random kernel with entries uniform in [-1, 1), keyed by `(seed, stream)`.
pub fn random_kernel(k: usize, points: usize, seed: u64, stream: u64) -> KernelFunction {
    let mut rng = stream_rng(seed, stream);
    KernelFunction::from_fn(k, points, |_| rng.random_range(-1.0..1.0))
}

/// Stream offset separating expansion samples from expansion kernels.
const SAMPLE_STREAM_OFFSET: u64 = 1 << 32;

/// Kernel and sample of one expansion trial.
pub fn expansion_trial(
    n: usize,
    k: usize,
    space: &ProbabilitySpace,
    seed: u64,
    trial: u64,
) -> Result<(KernelFunction, Sample)> {
    let f = random_kernel(k, space.points(), seed, trial);
    let sample = space.draw_sample(n, seed, SAMPLE_STREAM_OFFSET + trial)?;
    Ok((f, sample))
}

/// Fits `J = sum_r C(n,k,r) n^{-r/2} sum_{|V|=r} I_{n,r}(f_V)` by least
/// squares over `trials` random kernel/sample pairs.
pub fn derive_expansion_coefficients(
    n: usize,
    k: usize,
    space: &ProbabilitySpace,
    trials: usize,
    seed: u64,
) -> Result<ExpansionCoefficients> {
    if n < k {
        return Err(Error::DegenerateSample { n, k });
    }
    if trials < 3 * (k + 1) {
        return Err(invalid("trials", format!("need at least {}", 3 * (k + 1))));
    }
    let mut design = DMatrix::zeros(trials, k + 1);
    let mut target = DVector::zeros(trials);
    for t in 0..trials {
        let (f, sample) = expansion_trial(n, k, space, seed, t as u64)?;
        let decomposition = hoeffding_decompose(&f, space)?;
        for (c, v) in expansion_features(&decomposition, &sample)?.into_iter().enumerate() {
            design[(t, c)] = v;
        }
        target[t] = multiple_integral_j(&f, &sample, space)?;
    }
    let svd = design.clone().svd(true, true);
    let solution = svd
        .solve(&target, 1e-14)
        .map_err(|e| invalid("trials", e.to_string()))?;
    let residual = (&design * &solution - &target).norm() / target.norm().max(f64::MIN_POSITIVE);
    if !(residual < EXPANSION_TOLERANCE) {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance: EXPANSION_TOLERANCE,
        });
    }
    Ok(ExpansionCoefficients {
        n,
        k,
        values: solution.iter().copied().collect(),
        residual,
    })
}

/// Right side of the expansion of `J` for one kernel and sample.
pub fn j_from_expansion(
    f: &KernelFunction,
    sample: &Sample,
    space: &ProbabilitySpace,
    coeffs: &ExpansionCoefficients,
) -> Result<f64> {
    if coeffs.k != f.arity() || coeffs.n != sample.len() {
        return Err(invalid(
            "coeffs",
            format!(
                "coefficients are for (n, k) = ({}, {}), got ({}, {})",
                coeffs.n,
                coeffs.k,
                sample.len(),
                f.arity()
            ),
        ));
    }
    let decomposition = hoeffding_decompose(f, space)?;
    let features = expansion_features(&decomposition, sample)?;
    Ok(features.iter().zip(&coeffs.values).map(|(x, c)| x * c).sum())
}
