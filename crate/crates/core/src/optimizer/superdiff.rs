//! Superdifferential of the indirect utility and the marginal utility-based
//! price set derived from it.
//!
//! The superdifferential at `(x, q)` is the argmin set of
//! `φ(y, r) = v(y, r) + x·y + ⟨q, r⟩` over the open dual cone; it has the
//! product structure `{y} × R` with `R` compact convex.  The argmin point
//! itself comes from the primal solver's marginal data (strong duality); the
//! *extent* of the argmin face is then measured by support-function probes:
//! walk from the center along each probe direction until `φ` exceeds the
//! optimal value by a fixed slack, and classify the endpoint by second-order
//! behavior — flat directions (φ still at the optimum halfway out) witness a
//! genuine face, curved directions are measurement blur around a point and
//! collapse back to the center.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convex::UtilityFunction;
use crate::market::{
    EndowmentBundle, FiniteMarket, MartingaleMeasurePolytope, ProbabilityMeasure,
};

use super::{solve_dual_with, solve_primal_with, OptimizerError};

/// Optimal-value slack that delimits the traced face.
pub const FACE_TRACE_SLACK: f64 = 1e-7;

/// Number of random probe directions added to the axis probes.
pub const RANDOM_PROBES: usize = 16;

/// Seed for the probe-direction stream (fixed: traces are deterministic).
const PROBE_SEED: u64 = 0x5EED;

/// Minimal extent (relative to the `y` scale) for a flat stretch to count as
/// genuine face structure rather than numerical blur at the cone boundary.
const FACE_MIN_EXTENT: f64 = 1e-4;

/// Superdifferential `∂u(x, q) = {y} × R` of the indirect utility.
#[derive(Debug, Clone)]
pub struct Superdifferential {
    /// The common marginal value of capital across the set.
    pub y: f64,
    /// Vertex list of the compact convex set `R ⊂ R^N` of bundle marginals.
    /// Always contains the exact argmin marginal; additional points are
    /// traced face vertices.
    pub vertices: Vec<DVector<f64>>,
    /// The optimal value `u(x, q) = min φ` certified by strong duality.
    pub value: f64,
    /// Measurement resolution of the trace: the largest probe excursion that
    /// was classified as curvature blur and collapsed back to the center.
    pub trace_radius: f64,
}

/// The set of marginal utility-based prices `{r/y : (y, r) ∈ ∂u(x, q)}`.
#[derive(Debug, Clone)]
pub struct MarginalPriceSet {
    /// Price points in `R^N`, deduplicated.
    pub points: Vec<DVector<f64>>,
}

impl MarginalPriceSet {
    /// Largest pairwise sup-norm distance between reported prices.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.points {
            for b in &self.points {
                d = d.max((a - b).amax());
            }
        }
        d
    }
}

/// Probe directions: `±e_k` for every coordinate of `(y, r)`-space plus
/// [`RANDOM_PROBES`] seeded random unit vectors (omitted in the scalar case,
/// where they duplicate the axis probes).
fn probe_directions(dims: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::with_capacity(2 * dims + RANDOM_PROBES);
    for k in 0..dims {
        let mut plus = DVector::<f64>::zeros(dims);
        plus[k] = 1.0;
        dirs.push(plus.clone());
        dirs.push(-plus);
    }
    if dims > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        while dirs.len() < 2 * dims + RANDOM_PROBES {
            let v = DVector::<f64>::from_fn(dims, |_, _| rng.random_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 0.3 {
                dirs.push(v / norm);
            }
        }
    }
    dirs
}

/// Computes `∂u(x, q)` by solving the primal problem for the argmin center
/// and tracing the optimal face of `φ(y, r) = v(y, r) + x·y + ⟨q, r⟩`.
pub fn superdifferential_u(
    market: &FiniteMarket,
    measure: &ProbabilityMeasure,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    x: f64,
    q: &[f64],
) -> Result<Superdifferential, OptimizerError> {
    let polytope = MartingaleMeasurePolytope::compute(market)?;
    superdifferential_u_with(&polytope, measure, utility, bundle, x, q)
}

/// [`superdifferential_u`] against a precomputed martingale polytope.
pub fn superdifferential_u_with(
    polytope: &MartingaleMeasurePolytope,
    measure: &ProbabilityMeasure,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    x: f64,
    q: &[f64],
) -> Result<Superdifferential, OptimizerError> {
    let n = bundle.dim();
    let dims = n + 1;
    let primal = solve_primal_with(polytope, measure, utility, bundle, x, q)?;
    let y_hat = primal.marginal_value;
    let mut center = DVector::<f64>::zeros(dims);
    center[0] = y_hat;
    for j in 0..n {
        center[j + 1] = primal.marginal_bundle_value[j];
    }
    let cap = primal.value + FACE_TRACE_SLACK;

    // φ at a probe point; infeasible or failed solves count as +∞ (outside
    // the traced face).
    let phi = |point: &DVector<f64>| -> f64 {
        let y = point[0];
        if !(y > super::BOUNDARY_REJECTION) {
            return f64::INFINITY;
        }
        let r: Vec<f64> = (0..n).map(|j| point[j + 1]).collect();
        match solve_dual_with(polytope, measure, utility, bundle, y, &r) {
            Ok(dual) => {
                let inner: f64 = q.iter().zip(&r).map(|(qj, rj)| qj * rj).sum();
                dual.value + x * y + inner
            }
            Err(_) => f64::INFINITY,
        }
    };

    let scale = y_hat.max(1.0);
    let mut vertices: Vec<DVector<f64>> = vec![center.rows(1, n).into_owned()];
    let mut trace_radius: f64 = 0.0;

    for dir in probe_directions(dims) {
        // Bracket the slack crossing by doubling, then bisect.
        let mut t_lo = 0.0_f64;
        let mut t_hi = 1e-6 * scale;
        let mut crossed = phi(&(&center + &dir * t_hi)) > cap;
        if !crossed {
            for _ in 0..60 {
                t_lo = t_hi;
                t_hi *= 2.0;
                if phi(&(&center + &dir * t_hi)) > cap {
                    crossed = true;
                    break;
                }
            }
        }
        if !crossed {
            // Unbounded flat direction: report the far endpoint as traced.
            vertices.push((&center + &dir * t_hi).rows(1, n).into_owned());
            continue;
        }
        for _ in 0..40 {
            let mid = 0.5 * (t_lo + t_hi);
            if phi(&(&center + &dir * mid)) > cap {
                t_hi = mid;
            } else {
                t_lo = mid;
            }
        }

        // Classification: a genuinely flat stretch still sits at the optimal
        // value halfway out; curvature blur has climbed a quarter of the
        // slack there.
        let face_like = t_lo > FACE_MIN_EXTENT * scale
            && phi(&(&center + &dir * (0.5 * t_lo))) - primal.value < FACE_TRACE_SLACK / 8.0;
        if face_like {
            vertices.push((&center + &dir * t_lo).rows(1, n).into_owned());
        } else {
            trace_radius = trace_radius.max(t_lo);
        }
    }

    // Deduplicate traced vertices.
    let mut unique: Vec<DVector<f64>> = Vec::new();
    for v in vertices {
        if !unique.iter().any(|u| (u - &v).amax() < 1e-6) {
            unique.push(v);
        }
    }

    Ok(Superdifferential {
        y: y_hat,
        vertices: unique,
        value: primal.value,
        trace_radius,
    })
}

/// Maps a superdifferential to its marginal utility-based price set
/// `{r/y : r ∈ R}`.
pub fn marginal_price_set(superdifferential: &Superdifferential) -> MarginalPriceSet {
    let y = superdifferential.y;
    let mut points: Vec<DVector<f64>> = Vec::new();
    for r in &superdifferential.vertices {
        let p = r / y;
        if !points.iter().any(|existing| (existing - &p).amax() < 1e-6) {
            points.push(p);
        }
    }
    MarginalPriceSet { points }
}
