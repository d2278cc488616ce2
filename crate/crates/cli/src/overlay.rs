use serde::{Deserialize, Serialize};
use stochint::bounds::{corollary2_bound, theorem_bound, BoundConstants};
use stochint::experiments::TailCurve;
use stochint::kernels::DenseBudget;

pub const CURVE_HEADER: &str = "x,p,ci_lo,ci_hi,theorem_bound,corollary_bound,applicable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub n: usize,
    pub k: usize,
    pub sigma: f64,
    pub budget: DenseBudget,
    pub constants: BoundConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub x: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub theorem_bound: f64,
    pub corollary_bound: f64,
    pub applicable: bool,
}

/// Empirical curve with the supremum bound and the single-function bound
/// beside it. At `x <= 0` the supremum bound is `min(1, C D)` and never
/// applicable.
pub fn overlay_bounds(curve: &TailCurve, spec: &BoundSpec) -> stochint::Result<Vec<OverlayRow>> {
    let mut rows = Vec::with_capacity(curve.len());
    for i in 0..curve.len() {
        let x = curve.x_grid[i];
        let (theorem, applicable) = if x > 0.0 {
            let t = theorem_bound(x, spec.n, spec.k, spec.sigma, &spec.budget, &spec.constants)?;
            (t.bound, t.applicable)
        } else {
            ((spec.constants.c * spec.budget.parameter).min(1.0), false)
        };
        rows.push(OverlayRow {
            x,
            p: curve.probs[i],
            ci_lo: curve.ci_lo[i],
            ci_hi: curve.ci_hi[i],
            theorem_bound: theorem,
            corollary_bound: corollary2_bound(x.max(0.0), spec.k, &spec.constants)?,
            applicable,
        });
    }
    Ok(rows)
}

pub fn overlay_csv(rows: &[OverlayRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.x, r.p, r.ci_lo, r.ci_hi, r.theorem_bound, r.corollary_bound, r.applicable
        ));
    }
    out
}
