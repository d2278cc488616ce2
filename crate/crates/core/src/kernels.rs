//! Tabulated kernel functions, L2-dense function families and epsilon-nets.
//!
//! A kernel of arity `k` over an `m`-point space is stored densely as `m^k`
//! values in row-major order (the first argument is the slowest axis). Arity
//! zero is allowed and holds a single scalar; it is what integrating out the
//! last coordinate of a one-variable kernel produces.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure_space::ProbabilitySpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFunction {
    arity: usize,
    points: usize,
    table: Vec<f64>,
}

impl KernelFunction {
    pub fn from_table(arity: usize, points: usize, table: Vec<f64>) -> Result<Self> {
        let expected = cells(arity, points);
        if table.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "arity {arity} over {points} points needs {expected} entries, got {}",
                table.len()
            )));
        }
        if points == 0 {
            return Err(invalid("points", "kernel needs at least one point"));
        }
        Ok(Self {
            arity,
            points,
            table,
        })
    }

    pub fn from_fn(arity: usize, points: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut index = vec![0; arity];
        let table = (0..cells(arity, points))
            .map(|cell| {
                decode_into(cell, points, &mut index);
                f(&index)
            })
            .collect();
        Self {
            arity,
            points,
            table,
        }
    }

    pub fn constant(arity: usize, points: usize, value: f64) -> Self {
        Self {
            arity,
            points,
            table: vec![value; cells(arity, points)],
        }
    }

    pub fn zero(arity: usize, points: usize) -> Self {
        Self::constant(arity, points, 0.0)
    }

    pub fn scalar(value: f64, points: usize) -> Self {
        Self::constant(0, points, value)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn cell_count(&self) -> usize {
        self.table.len()
    }

    /// Value at a point tuple of length `arity`.
    pub fn value(&self, args: &[usize]) -> f64 {
        debug_assert_eq!(args.len(), self.arity);
        self.table[encode(args, self.points)]
    }

    /// Value of an arity-0 kernel (the first entry otherwise).
    pub fn as_scalar(&self) -> f64 {
        self.table[0]
    }

    /// True when the table is invariant under every permutation of arguments.
    pub fn is_symmetric(&self) -> bool {
        if self.arity < 2 {
            return true;
        }
        let perms = permutations(self.arity);
        let mut index = vec![0; self.arity];
        let mut permuted = vec![0; self.arity];
        (0..self.table.len()).all(|cell| {
            decode_into(cell, self.points, &mut index);
            perms.iter().all(|perm| {
                for (slot, &src) in permuted.iter_mut().zip(perm) {
                    *slot = index[src];
                }
                self.table[encode(&permuted, self.points)] == self.table[cell]
            })
        })
    }

    /// Average over all argument permutations.
    pub fn symmetrized(&self) -> Self {
        let perms = permutations(self.arity);
        let scale = 1.0 / perms.len() as f64;
        let mut permuted = vec![0; self.arity];
        Self::from_fn(self.arity, self.points, |index| {
            perms
                .iter()
                .map(|perm| {
                    for (slot, &src) in permuted.iter_mut().zip(perm) {
                        *slot = index[src];
                    }
                    self.table[encode(&permuted, self.points)]
                })
                .sum::<f64>()
                * scale
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.table.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// L2 norm under the product measure `mu^k`.
    pub fn l2_norm(&self, mu: &ProbabilitySpace) -> Result<f64> {
        self.check_space(mu)?;
        Ok(self.l2_norm_under(&CellMeasure::product(mu, self.arity)))
    }

    /// L2 norm under an arbitrary probability measure on the cells.
    pub fn l2_norm_under(&self, nu: &CellMeasure) -> f64 {
        debug_assert_eq!(nu.weights.len(), self.table.len());
        self.table
            .iter()
            .zip(&nu.weights)
            .map(|(v, w)| v * v * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_distance_under(&self, other: &Self, nu: &CellMeasure) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .zip(&nu.weights)
            .map(|((a, b), w)| (a - b) * (a - b) * w)
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_space(&self, mu: &ProbabilitySpace) -> Result<()> {
        if mu.points() != self.points {
            return Err(Error::ShapeMismatch(format!(
                "kernel over {} points, space has {}",
                self.points,
                mu.points()
            )));
        }
        Ok(())
    }

    /// Restriction to the box `sides[0] x ... x sides[k-1]`; zero outside.
    pub fn restrict_to_box(&self, sides: &[Range<usize>]) -> Self {
        assert_eq!(sides.len(), self.arity, "one side per argument");
        Self::from_fn(self.arity, self.points, |index| {
            if index.iter().zip(sides).all(|(x, side)| side.contains(x)) {
                self.value(index)
            } else {
                0.0
            }
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            arity: self.arity,
            points: self.points,
            table: self.table.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Pointwise `self + factor * other`.
    pub fn add_scaled(&self, other: &Self, factor: f64) -> Self {
        assert_eq!(self.arity, other.arity);
        assert_eq!(self.points, other.points);
        Self {
            arity: self.arity,
            points: self.points,
            table: self
                .table
                .iter()
                .zip(&other.table)
                .map(|(a, b)| a + factor * b)
                .collect(),
        }
    }

    pub fn squared(&self) -> Self {
        self.map(|v| v * v)
    }
}

pub(crate) fn cells(arity: usize, points: usize) -> usize {
    points.pow(arity as u32)
}

pub(crate) fn encode(index: &[usize], points: usize) -> usize {
    index.iter().fold(0, |acc, x| acc * points + x)
}

pub(crate) fn decode_into(mut cell: usize, points: usize, index: &mut [usize]) {
    for slot in index.iter_mut().rev() {
        *slot = cell % points;
        cell /= points;
    }
}

/// All permutations of `0..k` in lexicographic order.
pub(crate) fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// A probability measure on the cells `X^k` of a kernel table; not
/// necessarily a product measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeasure {
    arity: usize,
    points: usize,
    weights: Vec<f64>,
}

impl CellMeasure {
    pub fn product(mu: &ProbabilitySpace, arity: usize) -> Self {
        let points = mu.points();
        let mut index = vec![0; arity];
        let weights = (0..cells(arity, points))
            .map(|cell| {
                decode_into(cell, points, &mut index);
                index.iter().map(|x| mu.weight(*x)).product()
            })
            .collect();
        Self {
            arity,
            points,
            weights,
        }
    }

    /// Normalizes nonnegative cell weights.
    pub fn from_weights(arity: usize, points: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != cells(arity, points) {
            return Err(Error::ShapeMismatch(format!(
                "cell measure needs {} weights, got {}",
                cells(arity, points),
                weights.len()
            )));
        }
        let normalized = ProbabilitySpace::finite(weights)?;
        Ok(Self {
            arity,
            points,
            weights: normalized.weights().to_vec(),
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Marginal on the remaining coordinates after dropping `coord`.
    pub fn marginal_without(&self, coord: usize) -> Self {
        assert!(coord < self.arity);
        let arity = self.arity - 1;
        let mut weights = vec![0.0; cells(arity, self.points)];
        let mut index = vec![0; self.arity];
        for (cell, w) in self.weights.iter().enumerate() {
            decode_into(cell, self.points, &mut index);
            index.remove(coord);
            weights[encode(&index, self.points)] += w;
            index.insert(coord, 0);
        }
        Self {
            arity,
            points: self.points,
            weights,
        }
    }

    /// `self x mu` with the new axis inserted at position `coord`.
    pub fn with_axis(&self, coord: usize, mu: &ProbabilitySpace) -> Self {
        assert!(coord <= self.arity);
        assert_eq!(mu.points(), self.points);
        let arity = self.arity + 1;
        let mut index = vec![0; arity];
        let weights = (0..cells(arity, self.points))
            .map(|cell| {
                decode_into(cell, self.points, &mut index);
                let z = index.remove(coord);
                let w = self.weights[encode(&index, self.points)] * mu.weight(z);
                index.insert(coord, z);
                w
            })
            .collect();
        Self {
            arity,
            points: self.points,
            weights,
        }
    }

    /// Pointwise average of two measures on the same cells.
    pub fn blend(&self, other: &Self) -> Self {
        assert_eq!(self.weights.len(), other.weights.len());
        Self {
            arity: self.arity,
            points: self.points,
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        }
    }
}

/// Covering budget of an L2-dense class: for every `eps` in (0, 1] and every
/// probability measure there is an `eps`-net of at most `D * eps^-L` members.
/// `beta` records the growth exponent with `D <= n^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseBudget {
    pub parameter: f64,
    pub exponent: f64,
    pub beta: f64,
}

impl DenseBudget {
    /// Budget with `beta = log2(D)`, which makes `D <= n^beta` hold for every
    /// `n >= 2`.
    pub fn new(parameter: f64, exponent: f64) -> Self {
        Self {
            parameter,
            exponent,
            beta: parameter.log2().max(0.0),
        }
    }

    pub fn allowed(&self, epsilon: f64) -> f64 {
        self.parameter * epsilon.powf(-self.exponent)
    }

    pub fn satisfies_growth(&self, n: usize) -> bool {
        self.parameter <= (n as f64).powf(self.beta)
    }

    /// Budget any subfamily is guaranteed: same exponent, parameter `2^L D`.
    pub fn for_subfamily(&self) -> Self {
        Self::new(2f64.powf(self.exponent) * self.parameter, self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionFamily {
    members: Vec<KernelFunction>,
    budget: DenseBudget,
    sigma: f64,
    space: ProbabilitySpace,
}

impl FunctionFamily {
    pub fn new(
        members: Vec<KernelFunction>,
        budget: DenseBudget,
        sigma: f64,
        space: ProbabilitySpace,
    ) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| invalid("members", "family must not be empty"))?;
        let (arity, points) = (first.arity(), first.points());
        if members
            .iter()
            .any(|f| f.arity() != arity || f.points() != points)
        {
            return Err(Error::ShapeMismatch(
                "family members differ in arity or point count".into(),
            ));
        }
        first.check_space(&space)?;
        if !(sigma > 0.0) {
            return Err(invalid("sigma", "must be positive"));
        }
        Ok(Self {
            members,
            budget,
            sigma,
            space,
        })
    }

    /// One kernel, budget `D = 1`, `L = 0`, sigma its own L2 norm (or 1 for
    /// the zero kernel).
    pub fn singleton(f: KernelFunction, space: ProbabilitySpace) -> Result<Self> {
        let norm = f.l2_norm(&space)?;
        let sigma = if norm > 0.0 { norm } else { 1.0 };
        Self::new(vec![f], DenseBudget::new(1.0, 0.0), sigma, space)
    }

    pub fn members(&self) -> &[KernelFunction] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.members[0].arity()
    }

    pub fn budget(&self) -> DenseBudget {
        self.budget
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn space(&self) -> &ProbabilitySpace {
        &self.space
    }

    /// Largest member L2 norm under the family's product measure.
    pub fn max_l2_norm(&self) -> f64 {
        let nu = CellMeasure::product(&self.space, self.arity());
        self.members
            .iter()
            .map(|f| f.l2_norm_under(&nu))
            .fold(0.0, f64::max)
    }

    pub fn max_sup_norm(&self) -> f64 {
        self.members
            .iter()
            .map(KernelFunction::sup_norm)
            .fold(0.0, f64::max)
    }

    /// Members with `|f| <= 1` and `||f||_2 <= sigma`.
    pub fn satisfies_norm_conditions(&self) -> bool {
        self.max_sup_norm() <= 1.0 && self.max_l2_norm() <= self.sigma * (1.0 + 1e-12)
    }

    /// Family with every member replaced by `map(member)`.
    pub fn map_members(&self, map: impl Fn(&KernelFunction) -> KernelFunction) -> Self {
        Self {
            members: self.members.iter().map(map).collect(),
            ..self.clone()
        }
    }

    pub fn subfamily(&self, indices: &[usize]) -> Result<Self> {
        let members = indices.iter().map(|i| self.members[*i].clone()).collect();
        Self::new(
            members,
            self.budget.for_subfamily(),
            self.sigma,
            self.space.clone(),
        )
    }

    pub fn epsilon_net(&self, nu: &CellMeasure, epsilon: f64) -> Result<EpsilonNet> {
        EpsilonNet::build(&self.members, nu, epsilon, Some(&self.budget))
    }
}

/// Indicator kernels of grid-aligned intervals with length at most `sigma^2`
/// on the uniform `grid`-point discretization of `[0, 1]`.
///
/// Cell `i` stands for `[i/grid, (i+1)/grid)`. Members are listed by
/// increasing length, then by left endpoint, so the disjoint intervals of
/// maximal length come last as one contiguous block.
pub fn interval_family(sigma: f64, grid: usize) -> Result<FunctionFamily> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(invalid("sigma", "must lie in (0, 1]"));
    }
    let max_cells = (sigma * sigma * grid as f64 + 1e-9).floor() as usize;
    if grid == 0 || max_cells == 0 {
        return Err(invalid(
            "grid",
            format!("{grid} cells cannot hold an interval of length sigma^2 = {}", sigma * sigma),
        ));
    }
    let space = ProbabilitySpace::uniform(grid)?;
    let mut members = Vec::new();
    for len in 1..=max_cells.min(grid) {
        for start in 0..=grid - len {
            members.push(KernelFunction::from_fn(1, grid, |x| {
                if (start..start + len).contains(&x[0]) {
                    1.0
                } else {
                    0.0
                }
            }));
        }
    }
    // Subfamily of the k = 1 box family, so it inherits (2^L D, L).
    let budget = box_budget(1, 1).for_subfamily();
    FunctionFamily::new(members, budget, sigma, space)
}

/// Budget of the box-restriction class in dimension `d`: exponent `2kd` and
/// parameter `2^(k(k+1)d^2)`.
pub fn box_budget(arity: usize, dim: usize) -> DenseBudget {
    let (k, d) = (arity as f64, dim as f64);
    DenseBudget::new(2f64.powf(k * (k + 1.0) * d * d), 2.0 * k * d)
}

/// Edges of `divisions` grid-aligned segments over `points` cells.
fn axis_edges(points: usize, divisions: usize) -> Vec<usize> {
    let mut edges: Vec<usize> = (0..=divisions)
        .map(|i| (i * points + divisions / 2) / divisions)
        .collect();
    edges.dedup();
    edges
}

/// Restrictions of `f` to boxes whose sides run between the `grid_per_axis`
/// division points of each axis (dimension `d = 1` per argument).
pub fn box_restriction_family(
    f: &KernelFunction,
    space: &ProbabilitySpace,
    grid_per_axis: usize,
) -> Result<FunctionFamily> {
    f.check_space(space)?;
    if f.sup_norm() > 1.0 {
        return Err(invalid("f", "box restriction requires |f| <= 1"));
    }
    if f.arity() == 0 {
        return Err(invalid("f", "box restriction needs arity at least 1"));
    }
    if grid_per_axis == 0 || grid_per_axis > f.points() {
        return Err(invalid("grid_per_axis", "must lie in 1..=points"));
    }
    let edges = axis_edges(f.points(), grid_per_axis);
    let sides: Vec<Range<usize>> = edges
        .iter()
        .enumerate()
        .flat_map(|(i, &lo)| edges[i + 1..].iter().map(move |&hi| lo..hi))
        .collect();
    let k = f.arity();
    let total = sides.len().pow(k as u32);
    let mut members = Vec::with_capacity(total);
    let mut choice = vec![0; k];
    for flat in 0..total {
        decode_into(flat, sides.len(), &mut choice);
        let boxed: Vec<Range<usize>> = choice.iter().map(|c| sides[*c].clone()).collect();
        members.push(f.restrict_to_box(&boxed));
    }
    let sigma = f.l2_norm(space)?.max(f64::MIN_POSITIVE);
    FunctionFamily::new(members, box_budget(k, 1), sigma, space.clone())
}

/// A finite `eps`-dense subset of a family in `L2(nu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonNet {
    /// Indices into the family, in selection order.
    pub members: Vec<usize>,
    pub epsilon: f64,
    /// Radius at which the cover was verified: `epsilon`, or `2 epsilon` if
    /// the strict cover failed and the packing bound was used instead.
    pub verified_radius: f64,
    pub fallback: bool,
}

impl EpsilonNet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Greedy packing in enumeration order: a member joins the net iff its
    /// distance to every current net member is at least `epsilon`. The strict
    /// cover `min_j ||g - g_j||^2 < epsilon^2` is then re-verified by a full
    /// scan, and the size is checked against `budget` when one is given.
    pub fn build(
        members: &[KernelFunction],
        nu: &CellMeasure,
        epsilon: f64,
        budget: Option<&DenseBudget>,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(invalid("epsilon", "must lie in (0, 1]"));
        }
        if let Some(f) = members.iter().find(|f| f.cell_count() != nu.weights.len()) {
            return Err(Error::ShapeMismatch(format!(
                "member has {} cells, measure has {}",
                f.cell_count(),
                nu.weights.len()
            )));
        }
        // Scaling by sqrt(nu) turns weighted distances into plain ones.
        let root: Vec<f64> = nu.weights.iter().map(|w| w.sqrt()).collect();
        let scaled: Vec<Vec<f64>> = members
            .iter()
            .map(|f| f.table().iter().zip(&root).map(|(v, r)| v * r).collect())
            .collect();
        let eps2 = epsilon * epsilon;

        let mut net: Vec<usize> = Vec::new();
        for (i, g) in scaled.iter().enumerate() {
            if net.iter().all(|&j| !closer_than(g, &scaled[j], eps2)) {
                net.push(i);
            }
        }

        let covered_within = |radius2: f64| {
            scaled
                .iter()
                .all(|g| net.iter().any(|&j| closer_than(g, &scaled[j], radius2)))
        };
        let (verified_radius, fallback) = if covered_within(eps2) {
            (epsilon, false)
        } else {
            debug_assert!(covered_within(4.0 * eps2));
            (2.0 * epsilon, true)
        };

        if let Some(budget) = budget {
            let allowed = budget.allowed(epsilon);
            if net.len() as f64 > allowed {
                return Err(Error::BudgetExceeded {
                    actual: net.len(),
                    allowed,
                });
            }
        }
        Ok(Self {
            members: net,
            epsilon,
            verified_radius,
            fallback,
        })
    }

    /// Smallest squared distance from `g` to the net.
    pub fn distance_squared_to(
        &self,
        g: &KernelFunction,
        family: &[KernelFunction],
        nu: &CellMeasure,
    ) -> f64 {
        self.members
            .iter()
            .map(|&j| g.l2_distance_under(&family[j], nu).powi(2))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `|a - b|^2 < limit`, stopping once a block of partial sums reaches it.
fn closer_than(a: &[f64], b: &[f64], limit: f64) -> bool {
    let mut total = 0.0;
    for (ca, cb) in a.chunks(64).zip(b.chunks(64)) {
        total += ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        if total >= limit {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn uniform(m: usize) -> ProbabilitySpace {
        ProbabilitySpace::uniform(m).unwrap()
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(KernelFunction::zero(2, 3).sup_norm(), 0.0);
        assert_eq!(KernelFunction::constant(2, 3, 0.25).sup_norm(), 0.25);
        let f = KernelFunction::from_table(1, 2, vec![-0.9, 0.3]).unwrap();
        assert_eq!(f.sup_norm(), 0.9);
    }

    #[test]
    fn l2_norm_examples() {
        let mu = ProbabilitySpace::finite(&[0.1, 0.2, 0.7]).unwrap();
        let c = KernelFunction::constant(2, 3, -0.4);
        assert!((c.l2_norm(&mu).unwrap() - 0.4).abs() < 1e-15);
        let f = KernelFunction::from_table(1, 2, vec![1.0, -1.0]).unwrap();
        assert_eq!(f.l2_norm(&uniform(2)).unwrap(), 1.0);
        // Brute force: four cells of weight 1/4, each value +-1.
        let g = KernelFunction::from_fn(2, 2, |x| {
            let s = |v: usize| if v == 0 { 1.0 } else { -1.0 };
            s(x[0]) * s(x[1])
        });
        let brute: f64 = g.table().iter().map(|v| v * v * 0.25).sum::<f64>().sqrt();
        assert_eq!(brute, 1.0);
        assert_eq!(g.l2_norm(&uniform(2)).unwrap(), brute);
        assert!(g.l2_norm(&uniform(3)).is_err());
    }

    #[test]
    fn table_shape_is_checked() {
        assert!(KernelFunction::from_table(2, 3, vec![0.0; 8]).is_err());
        assert!(KernelFunction::from_table(0, 3, vec![1.5]).is_ok());
    }

    #[test]
    fn symmetry_detection() {
        let sym = KernelFunction::from_fn(3, 3, |x| (x[0] + x[1] + x[2]) as f64);
        assert!(sym.is_symmetric());
        let asym = KernelFunction::from_fn(2, 3, |x| x[0] as f64 - x[1] as f64);
        assert!(!asym.is_symmetric());
        assert!(asym.symmetrized().is_symmetric());
        assert_eq!(asym.symmetrized().sup_norm(), 0.0);
    }

    #[test]
    fn interval_family_examples() {
        let full = interval_family(1.0, 4).unwrap();
        assert_eq!(full.len(), 10);
        assert!(full.members().iter().any(|f| f.table() == [1.0; 4]));

        let half = interval_family(0.5, 8).unwrap();
        assert_eq!(half.len(), 8 + 7);
        for f in half.members() {
            let len = f.table().iter().filter(|v| **v == 1.0).count();
            assert!(len <= 2);
        }

        let tenth = interval_family(0.1, 200).unwrap();
        let disjoint: Vec<_> = tenth
            .members()
            .iter()
            .filter(|f| f.table().iter().filter(|v| **v == 1.0).count() == 2)
            .collect();
        assert_eq!(disjoint.len(), 199);

        assert!(interval_family(0.1, 50).is_err());
        assert!(interval_family(1.5, 50).is_err());
    }

    #[test]
    fn interval_members_respect_sigma() {
        for (sigma, grid) in [(0.5, 8), (0.3, 40), (0.1, 100), (0.25, 64)] {
            let fam = interval_family(sigma, grid).unwrap();
            let mu = fam.space().clone();
            for f in fam.members() {
                assert!(f.l2_norm(&mu).unwrap() <= sigma + 1e-12);
            }
            assert!(fam.satisfies_norm_conditions());
        }
    }

    #[test]
    fn box_restriction_examples() {
        let mu = uniform(6);
        let f = KernelFunction::from_fn(2, 6, |x| ((x[0] * 7 + x[1] * 3) % 5) as f64 / 5.0 - 0.4);
        let full = f.restrict_to_box(&[0..6, 0..6]);
        assert_eq!(full, f);
        let empty = f.restrict_to_box(&[2..2, 0..6]);
        assert_eq!(empty.sup_norm(), 0.0);
        let inner = f.restrict_to_box(&[1..3, 2..4]);
        let outer = f.restrict_to_box(&[0..4, 1..6]);
        for (a, b) in inner.table().iter().zip(outer.table()) {
            assert!(a.abs() <= b.abs());
        }

        let fam = box_restriction_family(&f, &mu, 3).unwrap();
        assert_eq!(fam.len(), 6 * 6);
        assert!(fam.members().contains(&f));
        assert_eq!(fam.budget().exponent, 4.0);
        assert_eq!(fam.budget().parameter, 64.0);
        assert!(box_restriction_family(&f.scaled(3.0), &mu, 3).is_err());
    }

    #[test]
    fn net_examples() {
        let mu = uniform(8);
        let nu = CellMeasure::product(&mu, 1);
        let f = KernelFunction::from_fn(1, 8, |x| x[0] as f64 / 8.0);
        let single = FunctionFamily::singleton(f.clone(), mu.clone()).unwrap();
        for eps in [1.0, 0.3, 0.01] {
            assert_eq!(single.epsilon_net(&nu, eps).unwrap().len(), 1);
        }

        let fam = interval_family(0.5, 8).unwrap();
        // Diameter bound: every distance is at most 2 max|f| = 2 > 1, but
        // intervals of length <= 2 cells are within sqrt(4/8) < 1.
        let net = fam.epsilon_net(&nu, 1.0).unwrap();
        assert_eq!(net.len(), 1);

        let small = vec![f.scaled(0.2), f.scaled(-0.2), f.scaled(0.1)];
        let net = EpsilonNet::build(&small, &nu, 0.5, None).unwrap();
        assert_eq!(net.len(), 1);

        let mut doubled: Vec<_> = fam.members().to_vec();
        doubled.extend(fam.members().iter().cloned());
        let plain = EpsilonNet::build(fam.members(), &nu, 0.3, None).unwrap();
        let dup = EpsilonNet::build(&doubled, &nu, 0.3, None).unwrap();
        assert_eq!(plain.len(), dup.len());
    }

    #[test]
    fn net_reports_budget_overflow() {
        let mu = uniform(16);
        let fam = FunctionFamily::new(
            (0..16)
                .map(|i| KernelFunction::from_fn(1, 16, |x| if x[0] == i { 1.0 } else { 0.0 }))
                .collect(),
            DenseBudget::new(2.0, 1.0),
            1.0,
            mu.clone(),
        )
        .unwrap();
        let nu = CellMeasure::product(&mu, 1);
        match fam.epsilon_net(&nu, 0.2) {
            Err(Error::BudgetExceeded { actual, allowed }) => {
                assert_eq!(actual, 16);
                assert!((allowed - 10.0).abs() < 1e-9);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn cell_measure_algebra() {
        let mu = ProbabilitySpace::finite(&[1.0, 2.0, 3.0]).unwrap();
        let prod = CellMeasure::product(&mu, 2);
        let marg = prod.marginal_without(0);
        for (a, b) in marg.weights().iter().zip(mu.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
        let rebuilt = marg.with_axis(0, &mu);
        for (a, b) in rebuilt.weights().iter().zip(prod.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn net_soundness_and_subfamily_budget() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mu = uniform(12);
        let f = KernelFunction::from_fn(1, 12, |x| ((x[0] * 5) % 7) as f64 / 7.0);
        let fam = box_restriction_family(&f, &mu, 12).unwrap();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..12).map(|_| rng.random::<f64>() + 0.01).collect();
            let nu = CellMeasure::from_weights(1, 12, &raw).unwrap();
            let eps = [1.0, 0.5, 0.25][rng.random_range(0..3)];
            let net = fam.epsilon_net(&nu, eps).unwrap();
            assert!(!net.fallback);
            for g in fam.members() {
                assert!(net.distance_squared_to(g, fam.members(), &nu) < eps * eps);
            }
            let picks: Vec<usize> = (0..fam.len()).filter(|_| rng.random::<bool>()).collect();
            if !picks.is_empty() {
                let sub = fam.subfamily(&picks).unwrap();
                assert!(sub.epsilon_net(&nu, eps).is_ok());
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn l2_never_exceeds_sup(
            table in proptest::collection::vec(-3.0f64..3.0, 16),
            raw in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            proptest::prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let mu = ProbabilitySpace::finite(&raw).unwrap();
            let f = KernelFunction::from_table(2, 4, table).unwrap();
            proptest::prop_assert!(f.l2_norm(&mu).unwrap() <= f.sup_norm() + 1e-12);
        }
    }
}
