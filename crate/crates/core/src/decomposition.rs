//! Coordinate projections and the Hoeffding decomposition.
//!
//! For a kernel `f` of `k` variables and a coordinate `s`:
//!
//! ```text
//! P_s f   = integral of f over coordinate s against mu   (arity k - 1)
//! Pbar_s f = P_s f re-broadcast over coordinate s          (arity k)
//! Q_s f   = f - Pbar_s f                                   (arity k)
//! ```
//!
//! Operators on distinct coordinates commute, and expanding the identity
//! `f = prod_s (Pbar_s + Q_s) f` yields `f = sum_V f_V` with
//! `f_V = prod_{s in V} Q_s prod_{t not in V} P_t f`, each `f_V` canonical.
//! Coordinates are zero-based throughout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::{cells, KernelFunction};
use crate::measure_space::ProbabilitySpace;

/// Default absolute tolerance for canonicality checks.
pub const CANONICAL_TOLERANCE: f64 = 1e-10;

/// A subset of the coordinates `{0, .., k-1}` as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subset(pub u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn full(k: usize) -> Self {
        Subset((1u32 << k) - 1)
    }

    pub fn from_coords(coords: &[usize]) -> Self {
        Subset(coords.iter().fold(0, |acc, c| acc | (1 << c)))
    }

    pub fn contains(self, coord: usize) -> bool {
        self.0 & (1 << coord) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in increasing order.
    pub fn coords(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |c| self.contains(*c))
    }

    /// All subsets of `{0, .., k-1}`.
    pub fn all(k: usize) -> impl Iterator<Item = Subset> {
        (0..1u32 << k).map(Subset)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let coords: Vec<String> = self.coords().map(|c| (c + 1).to_string()).collect();
        write!(f, "{{{}}}", coords.join(","))
    }
}

fn check_coord(f: &KernelFunction, coord: usize) -> Result<()> {
    if f.arity() == 0 {
        return Err(invalid("coord", "cannot project an arity-0 kernel"));
    }
    if coord >= f.arity() {
        return Err(invalid(
            "coord",
            format!("coordinate {coord} out of range for arity {}", f.arity()),
        ));
    }
    Ok(())
}

/// Layout of one axis inside a row-major table: `outer` blocks, each holding
/// `points` slabs of `stride` contiguous values.
fn axis_layout(arity: usize, points: usize, coord: usize) -> (usize, usize) {
    let stride = cells(arity - 1 - coord, points);
    let outer = cells(coord, points);
    (outer, stride)
}

/// `P_mu` on coordinate `coord`.
pub fn project_p(f: &KernelFunction, coord: usize, mu: &ProbabilitySpace) -> Result<KernelFunction> {
    check_coord(f, coord)?;
    f.check_space(mu)?;
    let m = f.points();
    let (outer, stride) = axis_layout(f.arity(), m, coord);
    let table = f.table();
    let mut out = vec![0.0; outer * stride];
    for o in 0..outer {
        let dst = &mut out[o * stride..(o + 1) * stride];
        for (z, w) in mu.weights().iter().enumerate() {
            let src = &table[(o * m + z) * stride..(o * m + z + 1) * stride];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    KernelFunction::from_table(f.arity() - 1, m, out)
}

/// Inserts a dummy coordinate at `coord`: `g(x without x_coord)`.
pub fn broadcast(g: &KernelFunction, coord: usize) -> KernelFunction {
    let arity = g.arity() + 1;
    let m = g.points();
    assert!(coord < arity);
    let (outer, stride) = axis_layout(arity, m, coord);
    let mut out = Vec::with_capacity(cells(arity, m));
    for o in 0..outer {
        let src = &g.table()[o * stride..(o + 1) * stride];
        for _ in 0..m {
            out.extend_from_slice(src);
        }
    }
    KernelFunction::from_table(arity, m, out).expect("broadcast preserves shape")
}

/// `Pbar_mu`: the projection re-broadcast over the integrated coordinate.
pub fn project_p_bar(
    f: &KernelFunction,
    coord: usize,
    mu: &ProbabilitySpace,
) -> Result<KernelFunction> {
    Ok(broadcast(&project_p(f, coord, mu)?, coord))
}

/// `Q_mu = I - Pbar_mu` on coordinate `coord`.
pub fn project_q(f: &KernelFunction, coord: usize, mu: &ProbabilitySpace) -> Result<KernelFunction> {
    let bar = project_p_bar(f, coord, mu)?;
    Ok(f.add_scaled(&bar, -1.0))
}

/// True iff integrating out any single coordinate leaves `|.| <= tol`
/// everywhere. Arity-0 kernels have no coordinate and pass vacuously.
pub fn is_canonical(f: &KernelFunction, mu: &ProbabilitySpace, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    f.check_space(mu)?;
    for coord in 0..f.arity() {
        if project_p(f, coord, mu)?.sup_norm() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The components `f_V`, `V` a subset of `{0, .., k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingDecomposition {
    arity: usize,
    points: usize,
    base_space: ProbabilitySpace,
    /// `f_empty`, the full expectation of `f`.
    constant: f64,
    /// Indexed by subset mask; slot 0 is unused. Component `V` has arity `|V|`
    /// with its axes in increasing coordinate order.
    components: Vec<KernelFunction>,
}

impl HoeffdingDecomposition {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn base_space(&self) -> &ProbabilitySpace {
        &self.base_space
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `f_V` for nonempty `V`.
    pub fn component(&self, subset: Subset) -> &KernelFunction {
        assert!(!subset.is_empty(), "f_empty is the scalar `constant()`");
        &self.components[subset.0 as usize]
    }

    /// Nonempty components of a given size.
    pub fn components_of_size(&self, size: usize) -> impl Iterator<Item = (Subset, &KernelFunction)> {
        Subset::all(self.arity)
            .filter(move |v| !v.is_empty() && v.len() == size)
            .map(move |v| (v, self.component(v)))
    }

    /// Component `V` as a kernel of all `k` variables.
    pub fn lifted(&self, subset: Subset) -> KernelFunction {
        if subset.is_empty() {
            return KernelFunction::constant(self.arity, self.points, self.constant);
        }
        let component = self.component(subset);
        let coords: Vec<usize> = subset.coords().collect();
        let mut args = vec![0; coords.len()];
        KernelFunction::from_fn(self.arity, self.points, |x| {
            for (a, c) in args.iter_mut().zip(&coords) {
                *a = x[*c];
            }
            component.value(&args)
        })
    }

    /// `sum_V f_V` lifted back to arity `k`.
    pub fn reconstruct(&self) -> KernelFunction {
        Subset::all(self.arity)
            .skip(1)
            .fold(self.lifted(Subset::EMPTY), |acc, v| {
                acc.add_scaled(&self.lifted(v), 1.0)
            })
    }
}

/// Computes every `f_V = prod_{s in V} Q_s prod_{t not in V} P_t f`.
pub fn hoeffding_decompose(
    f: &KernelFunction,
    mu: &ProbabilitySpace,
) -> Result<HoeffdingDecomposition> {
    f.check_space(mu)?;
    let k = f.arity();
    if k > 16 {
        return Err(invalid("f", "arity too large to decompose"));
    }
    let mut constant = 0.0;
    let mut components = Vec::with_capacity(1 << k);
    for subset in Subset::all(k) {
        let mut g = f.clone();
        for s in subset.coords() {
            g = project_q(&g, s, mu)?;
        }
        // Integrate from the highest coordinate down so lower indices stay put.
        for t in (0..k).rev().filter(|t| !subset.contains(*t)) {
            g = project_p(&g, t, mu)?;
        }
        if subset.is_empty() {
            constant = g.as_scalar();
            components.push(KernelFunction::scalar(constant, f.points()));
        } else {
            components.push(g);
        }
    }
    Ok(HoeffdingDecomposition {
        arity: k,
        points: f.points(),
        base_space: mu.clone(),
        constant,
        components,
    })
}

/// The canonical part `f_{full}` of a kernel.
pub fn canonical_part(f: &KernelFunction, mu: &ProbabilitySpace) -> Result<KernelFunction> {
    let mut g = f.clone();
    for s in 0..f.arity() {
        g = project_q(&g, s, mu)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::CellMeasure;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng, k: usize, m: usize) -> KernelFunction {
        KernelFunction::from_fn(k, m, |_| rng.random_range(-1.0..1.0))
    }

    fn random_space(rng: &mut ChaCha8Rng, m: usize) -> ProbabilitySpace {
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
        ProbabilitySpace::finite(&raw).unwrap()
    }

    fn max_abs(f: &KernelFunction) -> f64 {
        f.sup_norm()
    }

    #[test]
    fn projection_examples() {
        let mu = ProbabilitySpace::finite(&[0.3, 0.7, 0.0, 1.0]).unwrap();
        let c = KernelFunction::constant(3, 4, 0.6);
        for s in 0..3 {
            let p = project_p(&c, s, &mu).unwrap();
            assert_eq!(p.arity(), 2);
            assert!(p.table().iter().all(|v| (v - 0.6).abs() < 1e-15));
            assert_eq!(max_abs(&project_q(&c, s, &mu).unwrap()), 0.0);
        }

        let u2 = ProbabilitySpace::uniform(2).unwrap();
        let f = KernelFunction::from_table(1, 2, vec![3.0, -1.0]).unwrap();
        let p = project_p(&f, 0, &u2).unwrap();
        assert_eq!(p.arity(), 0);
        assert_eq!(p.as_scalar(), 1.0);

        let scalar = KernelFunction::scalar(1.0, 2);
        assert!(project_p(&scalar, 0, &u2).is_err());
        assert!(project_p(&f, 1, &u2).is_err());
    }

    #[test]
    fn projection_follows_coordinate() {
        let mu = ProbabilitySpace::finite(&[0.25, 0.75]).unwrap();
        let f = KernelFunction::from_fn(2, 2, |x| (10 * x[0] + x[1]) as f64);
        // Integrate the first argument: 0.25*(0 + y) + 0.75*(10 + y) = 7.5 + y.
        let p0 = project_p(&f, 0, &mu).unwrap();
        assert_eq!(p0.table(), &[7.5, 8.5]);
        // Integrate the second: 10x + 0.75.
        let p1 = project_p(&f, 1, &mu).unwrap();
        assert_eq!(p1.table(), &[0.75, 10.75]);
        let bar = project_p_bar(&f, 1, &mu).unwrap();
        assert_eq!(bar.table(), &[0.75, 0.75, 10.75, 10.75]);
    }

    #[test]
    fn q_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = random_space(&mut rng, 4);
        let f = random_kernel(&mut rng, 3, 4);
        for s in 0..3 {
            let q = project_q(&f, s, &mu).unwrap();
            let qq = project_q(&q, s, &mu).unwrap();
            assert!(max_abs(&q.add_scaled(&qq, -1.0)) < 1e-14);
            assert!(max_abs(&project_p(&q, s, &mu).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn canonical_examples() {
        let u2 = ProbabilitySpace::uniform(2).unwrap();
        let mu = ProbabilitySpace::finite(&[1.0, 2.0, 3.0]).unwrap();
        assert!(is_canonical(&KernelFunction::zero(2, 3), &mu, 1e-10).unwrap());
        assert!(!is_canonical(&KernelFunction::constant(2, 3, 0.1), &mu, 1e-10).unwrap());
        let f = KernelFunction::from_table(1, 2, vec![1.0, -1.0]).unwrap();
        assert!(is_canonical(&f, &u2, 1e-10).unwrap());
        assert!(is_canonical(&f, &u2, 0.0).is_err());
        // A canonical kernel projects to zero on every coordinate.
        let g = canonical_part(&KernelFunction::from_fn(2, 3, |x| (x[0] * x[1]) as f64), &mu).unwrap();
        for s in 0..2 {
            assert!(max_abs(&project_p(&g, s, &mu).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn decomposition_examples() {
        let mu = ProbabilitySpace::finite(&[0.2, 0.5, 0.3]).unwrap();
        let c = KernelFunction::constant(2, 3, -0.7);
        let d = hoeffding_decompose(&c, &mu).unwrap();
        assert!((d.constant() + 0.7).abs() < 1e-15);
        for v in Subset::all(2).skip(1) {
            assert!(max_abs(d.component(v)) < 1e-15);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = canonical_part(&random_kernel(&mut rng, 2, 3), &mu).unwrap();
        let d = hoeffding_decompose(&g, &mu).unwrap();
        assert!(d.constant().abs() < 1e-14);
        assert!(max_abs(&d.component(Subset::full(2)).add_scaled(&g, -1.0)) < 1e-14);
        for v in [Subset(1), Subset(2)] {
            assert!(max_abs(d.component(v)) < 1e-14);
        }

        let f = random_kernel(&mut rng, 2, 3);
        let d = hoeffding_decompose(&f, &mu).unwrap();
        assert!(max_abs(&d.reconstruct().add_scaled(&f, -1.0)) < 1e-12);
        for v in Subset::all(2).skip(1) {
            assert_eq!(d.component(v).arity(), v.len());
            assert!(is_canonical(d.component(v), &mu, 1e-10).unwrap());
        }
    }

    #[test]
    fn component_axes_follow_subset_order() {
        let mu = ProbabilitySpace::uniform(3).unwrap();
        // f depends on the third argument only.
        let f = KernelFunction::from_fn(3, 3, |x| x[2] as f64 - 1.0);
        let d = hoeffding_decompose(&f, &mu).unwrap();
        let third = d.component(Subset::from_coords(&[2]));
        assert_eq!(third.table(), &[-1.0, 0.0, 1.0]);
        assert_eq!(format!("{}", Subset::from_coords(&[0, 2])), "{1,3}");
    }

    #[test]
    fn projections_are_l2_contractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let k = rng.random_range(1..=3);
            let m = rng.random_range(2..=4);
            let mu = random_space(&mut rng, m);
            let f = random_kernel(&mut rng, k, m);
            let coord = rng.random_range(0..k);
            // rho: an arbitrary (non-product) measure on the other coordinates.
            let rho_raw: Vec<f64> = (0..cells(k - 1, m)).map(|_| rng.random::<f64>()).collect();
            let rho = CellMeasure::from_weights(k - 1, m, &rho_raw).unwrap();
            let joint = rho.with_axis(coord, &mu);
            let norm = f.l2_norm_under(&joint);
            let p = project_p(&f, coord, &mu).unwrap();
            assert!(p.l2_norm_under(&rho) <= norm + 1e-12);
            let bar = project_p_bar(&f, coord, &mu).unwrap();
            assert!((bar.l2_norm_under(&joint) - p.l2_norm_under(&rho)).abs() < 1e-12);
            let q = project_q(&f, coord, &mu).unwrap();
            assert!(q.l2_norm_under(&joint) <= norm + 1e-12);
        }
    }

    #[test]
    fn sup_norm_budget_of_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let k = rng.random_range(1..=3);
            let m = rng.random_range(2..=5);
            let mu = random_space(&mut rng, m);
            let f = random_kernel(&mut rng, k, m);
            let coord = rng.random_range(0..k);
            let sup = f.sup_norm();
            assert!(project_p(&f, coord, &mu).unwrap().sup_norm() <= sup + 1e-14);
            assert!(project_q(&f, coord, &mu).unwrap().sup_norm() <= 2.0 * sup + 1e-14);
        }
    }

    #[test]
    fn squared_kernel_components_stay_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let k = rng.random_range(1..=3);
            let m = rng.random_range(2..=5);
            let mu = random_space(&mut rng, m);
            let bound = 2f64.powi(-(k as i32 + 1));
            let f = random_kernel(&mut rng, k, m).scaled(bound);
            let d = hoeffding_decompose(&f.squared(), &mu).unwrap();
            assert!(d.constant().abs() <= bound);
            for v in Subset::all(k).skip(1) {
                assert!(d.component(v).sup_norm() <= bound + 1e-15);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn reconstruction_is_exact(
            seed in proptest::prelude::any::<u64>(),
            k in 1usize..=3,
            m in 2usize..=5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = random_space(&mut rng, m);
            let f = random_kernel(&mut rng, k, m);
            let d = hoeffding_decompose(&f, &mu).unwrap();
            proptest::prop_assert!(max_abs(&d.reconstruct().add_scaled(&f, -1.0)) < 1e-10);
            for v in Subset::all(k).skip(1) {
                proptest::prop_assert!(is_canonical(d.component(v), &mu, CANONICAL_TOLERANCE).unwrap());
            }
        }
    }
}
