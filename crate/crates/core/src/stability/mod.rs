//! Stability harness: perturbation families over a fixed finite market and
//! the experimental machinery that checks how the optimizer's outputs move
//! when the reference measure and the utility are perturbed jointly.
//!
//! A perturbation family packages, per index `n`:
//!
//! * a density `Z_n > 0` with `E^P[Z_n] = 1`, defining `P_n = Z_n·P`;
//! * a normalized utility `U_n`;
//! * a primal evaluation point `(x_n, q_n)` and a dual one `(y_n, r_n)`;
//!
//! together with the limit data `(P, U, (x, q), (y, r))`.  The experiment
//! runner ([`experiment::run_stability_experiment`]) solves the primal and
//! dual problems along the sequence and records value functions, capital
//! marginals, Ky–Fan distances of the optimal wealths and densities to their
//! limits, and the one-sided Hausdorff distance of the marginal price sets —
//! one record per `n`, plus verdicts against explicit thresholds.
//!
//! The submodules hold the heavier pieces: [`experiment`] the sequence
//! runner, [`diagnostics`] the uniform-integrability sufficient-condition
//! checkers and the midpoint-convexity-gap diagnostic, [`counterexample`]
//! the refined-lattice experiment where joint refinement and perturbation
//! break convergence even though each fixed refinement level is stable.

pub mod counterexample;
pub mod diagnostics;
pub mod experiment;

pub use counterexample::{
    counterexample_experiment, lattice_market, spike_density, CounterexampleReport,
    CounterexampleRow, CounterexampleSetup,
};
pub use diagnostics::{
    beta_m, cm_diagnostic, ui_condition_report, CmDiagnostic, GrowthMomentCheck,
    UiConditionReport,
};
pub use experiment::{
    experiment_ladder, run_stability_experiment, ClauseVerdicts, ConvergenceReport, LimitRecord,
    SequenceRecord, StabilityThresholds,
};

use crate::convex::{ConvexError, UtilityFunction};
use crate::market::{MarketError, ProbabilityMeasure};
use crate::optimizer::{MarginalPriceSet, OptimizerError};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Tolerance for the unit-mass identity `E^P[Z_n] = 1` of family densities.
pub const DENSITY_MASS_TOL: f64 = 1e-9;

/// Slack allowed when checking that total-variation distances decrease
/// monotonically along the family (absorbs solver-grade rounding).
pub const TV_MONOTONE_SLACK: f64 = 1e-12;

/// Largest vertex count accepted by the exact convex-hull projection used in
/// the one-sided Hausdorff distance.
pub const HULL_PROJECTION_LIMIT: usize = 16;

#[derive(Debug, Error)]
pub enum StabilityError {
    /// A family invariant failed (positivity, unit mass, point dimensions).
    #[error("invalid perturbation family: {reason}")]
    InvalidFamily { reason: String },
    /// A set operation received an empty price set.
    #[error("price set is empty")]
    EmptySet,
    /// A solver call failed at a specific family index.
    #[error("solver failed at family index n = {n}: {source}")]
    SolverFailed {
        n: usize,
        source: OptimizerError,
    },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

/// Deterministic perturbation family: all per-`n` data are functions of the
/// index alone, so experiments are reproducible without any hidden state.
pub struct PerturbationFamily {
    density: Box<dyn Fn(usize) -> Vec<f64> + Send + Sync>,
    utility: Box<dyn Fn(usize) -> UtilityFunction + Send + Sync>,
    primal_point: Box<dyn Fn(usize) -> (f64, Vec<f64>) + Send + Sync>,
    dual_point: Box<dyn Fn(usize) -> (f64, Vec<f64>) + Send + Sync>,
    limit_utility: UtilityFunction,
    limit_primal: (f64, Vec<f64>),
    limit_dual: (f64, Vec<f64>),
}

impl PerturbationFamily {
    /// Assembles a family from per-index generators and explicit limits.
    ///
    /// The generators are expected (and [`Self::validate`] checks on sampled
    /// indices) to converge to the limits: `Z_n → 1`, `U_n → U` pointwise,
    /// `(x_n, q_n) → (x, q)`, `(y_n, r_n) → (y, r)`.
    pub fn new(
        density: impl Fn(usize) -> Vec<f64> + Send + Sync + 'static,
        utility: impl Fn(usize) -> UtilityFunction + Send + Sync + 'static,
        primal_point: impl Fn(usize) -> (f64, Vec<f64>) + Send + Sync + 'static,
        dual_point: impl Fn(usize) -> (f64, Vec<f64>) + Send + Sync + 'static,
        limit_utility: UtilityFunction,
        limit_primal: (f64, Vec<f64>),
        limit_dual: (f64, Vec<f64>),
    ) -> Self {
        Self {
            density: Box::new(density),
            utility: Box::new(utility),
            primal_point: Box::new(primal_point),
            dual_point: Box::new(dual_point),
            limit_utility,
            limit_primal,
            limit_dual,
        }
    }

    /// Family with no perturbation at all: `Z_n ≡ 1`, `U_n ≡ U`, constant
    /// evaluation points.  Every deviation the experiment records is then a
    /// direct reading of solver noise.
    pub fn constant(
        atoms: usize,
        utility: UtilityFunction,
        primal: (f64, Vec<f64>),
        dual: (f64, Vec<f64>),
    ) -> Self {
        let u = utility.clone();
        let p = primal.clone();
        let d = dual.clone();
        Self::new(
            move |_| vec![1.0; atoms],
            move |_| u.clone(),
            move |_| p.clone(),
            move |_| d.clone(),
            utility,
            primal,
            dual,
        )
    }

    /// Density `Z_n` of `P_n` relative to the reference measure.
    pub fn density_at(&self, n: usize) -> Vec<f64> {
        (self.density)(n)
    }

    /// Utility at index `n`.
    pub fn utility_at(&self, n: usize) -> UtilityFunction {
        (self.utility)(n)
    }

    /// Primal evaluation point `(x_n, q_n)`.
    pub fn primal_point_at(&self, n: usize) -> (f64, Vec<f64>) {
        (self.primal_point)(n)
    }

    /// Dual evaluation point `(y_n, r_n)`.
    pub fn dual_point_at(&self, n: usize) -> (f64, Vec<f64>) {
        (self.dual_point)(n)
    }

    /// Limit utility `U`.
    pub fn limit_utility(&self) -> &UtilityFunction {
        &self.limit_utility
    }

    /// Limit primal point `(x, q)`.
    pub fn limit_primal(&self) -> (f64, Vec<f64>) {
        self.limit_primal.clone()
    }

    /// Limit dual point `(y, r)`.
    pub fn limit_dual(&self) -> (f64, Vec<f64>) {
        self.limit_dual.clone()
    }

    /// Checks the family invariants on the sampled indices: strictly
    /// positive unit-mass densities, utility convergence at the probe
    /// wealths, and total-variation distances that decrease monotonically
    /// beyond some index (reported).  Hard violations (non-positive density,
    /// mass defect, dimension mismatches) are errors; the convergence
    /// readings are returned for the caller to judge.
    pub fn validate(
        &self,
        measure: &ProbabilityMeasure,
        indices: &[usize],
        probes: &[f64],
    ) -> Result<FamilyValidation, StabilityError> {
        assert!(!indices.is_empty(), "no family indices to validate");
        let atoms = measure.weights().len();
        let mut tvs = Vec::with_capacity(indices.len());
        for &n in indices {
            let z = self.density_at(n);
            if z.len() != atoms {
                return Err(StabilityError::InvalidFamily {
                    reason: format!(
                        "density at n = {n} has {} atoms, measure has {atoms}",
                        z.len()
                    ),
                });
            }
            if let Some(bad) = z.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(StabilityError::InvalidFamily {
                    reason: format!("density at n = {n} is not strictly positive at atom {bad}"),
                });
            }
            let mass = measure.expectation(&z);
            if (mass - 1.0).abs() > DENSITY_MASS_TOL {
                return Err(StabilityError::InvalidFamily {
                    reason: format!("density at n = {n} has mass {mass}, expected 1"),
                });
            }
            tvs.push(tv_distance(measure, &z));
        }

        // First sampled position beyond which TV never increases.
        let mut monotone_from = 0;
        for k in 1..tvs.len() {
            if tvs[k] > tvs[k - 1] + TV_MONOTONE_SLACK {
                monotone_from = k;
            }
        }

        let mut final_utility_gap: f64 = 0.0;
        let last = *indices.last().expect("nonempty");
        let u_last = self.utility_at(last);
        for &w in probes {
            let gap = (u_last.value(w) - self.limit_utility.value(w)).abs();
            final_utility_gap = final_utility_gap.max(gap);
        }

        Ok(FamilyValidation {
            sampled_indices: indices.to_vec(),
            tv_distances: tvs.clone(),
            monotone_from_position: monotone_from,
            final_tv: *tvs.last().expect("nonempty"),
            final_utility_gap,
        })
    }
}

impl std::fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationFamily")
            .field("limit_primal", &self.limit_primal)
            .field("limit_dual", &self.limit_dual)
            .finish_non_exhaustive()
    }
}

/// Validation readings for a [`PerturbationFamily`] on sampled indices.
#[derive(Debug, Clone)]
pub struct FamilyValidation {
    /// Indices that were sampled, in the order given.
    pub sampled_indices: Vec<usize>,
    /// Total-variation distance `TV(P_n, P)` per sampled index.
    pub tv_distances: Vec<f64>,
    /// Position in `sampled_indices` from which the TV readings never
    /// increase (0 when the whole sequence is already monotone).
    pub monotone_from_position: usize,
    /// TV distance at the last sampled index.
    pub final_tv: f64,
    /// Largest `|U_n(w) − U(w)|` over the probe wealths at the last index.
    pub final_utility_gap: f64,
}

/// Total-variation distance between `Z·P` and `P`: `½·Σ_i |Z_i − 1|·P_i`.
pub fn tv_distance(measure: &ProbabilityMeasure, density: &[f64]) -> f64 {
    assert_eq!(
        measure.weights().len(),
        density.len(),
        "density/measure atom mismatch"
    );
    0.5 * measure
        .weights()
        .iter()
        .zip(density)
        .map(|(&p, &z)| (z - 1.0).abs() * p)
        .sum::<f64>()
}

/// Ky–Fan distance `E^P[min(|ξ − η|, 1)]` between two random variables on
/// the same finite atom space; a metric for convergence in probability.
pub fn kyfan_distance(xi: &DVector<f64>, eta: &DVector<f64>, measure: &ProbabilityMeasure) -> f64 {
    assert_eq!(xi.len(), eta.len(), "random variables on different spaces");
    assert_eq!(
        xi.len(),
        measure.weights().len(),
        "random variables not on the measure's atom space"
    );
    measure
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &p)| p * (xi[i] - eta[i]).abs().min(1.0))
        .sum()
}

/// Euclidean distance from `point` to the convex hull of `vertices`,
/// computed exactly by enumerating support subsets (Carathéodory): the
/// projection onto a hull of affinely independent subsets is a linear solve,
/// and the admissible candidates are those with nonnegative barycentric
/// weights.
fn distance_to_hull(point: &DVector<f64>, vertices: &[DVector<f64>]) -> f64 {
    assert!(!vertices.is_empty(), "empty hull");
    assert!(
        vertices.len() <= HULL_PROJECTION_LIMIT,
        "hull projection limited to {HULL_PROJECTION_LIMIT} vertices, got {}",
        vertices.len()
    );
    let dim = point.len();
    let mut best = f64::INFINITY;
    let k = vertices.len();
    // Subsets of size 1..=dim+1 suffice: the projection's face has at most
    // dim+1 affinely independent vertices.
    let max_support = (dim + 1).min(k);
    let mut subset: Vec<usize> = Vec::new();
    enumerate_subsets(k, max_support, &mut subset, &mut |s| {
        if let Some(d) = projection_distance(point, vertices, s) {
            best = best.min(d);
        }
    });
    best
}

/// Runs `visit` on every nonempty subset of `{0..k}` of size at most `cap`.
fn enumerate_subsets(
    k: usize,
    cap: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    let start = current.last().map_or(0, |&v| v + 1);
    for next in start..k {
        current.push(next);
        visit(current);
        if current.len() < cap {
            enumerate_subsets(k, cap, current, visit);
        }
        current.pop();
    }
}

/// Distance from `point` to the convex hull of the chosen vertex subset, or
/// `None` when the projection onto the subset's affine hull leaves the
/// simplex (some barycentric weight negative) or is degenerate.
fn projection_distance(
    point: &DVector<f64>,
    vertices: &[DVector<f64>],
    subset: &[usize],
) -> Option<f64> {
    let s = subset.len();
    if s == 1 {
        return Some((point - &vertices[subset[0]]).norm());
    }
    // Affine coordinates relative to the first vertex: minimize
    // ‖p − v₀ − B·t‖ over t, then require the barycentric weights
    // (1 − Σt, t₁, …) to be nonnegative.
    let v0 = &vertices[subset[0]];
    let mut basis = DMatrix::<f64>::zeros(point.len(), s - 1);
    for (j, &idx) in subset.iter().skip(1).enumerate() {
        basis.column_mut(j).copy_from(&(&vertices[idx] - v0));
    }
    let rhs = point - v0;
    let gram = basis.transpose() * &basis;
    let proj = basis.transpose() * &rhs;
    let t = gram.lu().solve(&proj)?;
    let mut weight0 = 1.0;
    for j in 0..s - 1 {
        if t[j] < -1e-12 {
            return None;
        }
        weight0 -= t[j];
    }
    if weight0 < -1e-12 {
        return None;
    }
    Some((rhs - basis * t).norm())
}

/// One-sided Hausdorff distance `sup_{p ∈ P_n} dist(p, conv(P_∞))` between
/// marginal price sets (each represented by its extreme points).  Only this
/// direction is meaningful for the harness: the limit set may be strictly
/// larger than the limits of the perturbed sets, so the symmetric distance
/// need not vanish.
pub fn one_sided_hausdorff(
    moving: &MarginalPriceSet,
    limit: &MarginalPriceSet,
) -> Result<f64, StabilityError> {
    if moving.points.is_empty() || limit.points.is_empty() {
        return Err(StabilityError::EmptySet);
    }
    let dim = limit.points[0].len();
    let mut worst: f64 = 0.0;
    for p in moving.points.iter() {
        assert_eq!(p.len(), dim, "price sets of different dimension");
        worst = worst.max(distance_to_hull(p, &limit.points));
    }
    Ok(worst)
}

/// For each threshold `ε`, the smallest tested index from which every later
/// tested distance stays below `ε` (`None` when even the final one does
/// not).  `distances` must be sorted by index.
pub fn hausdorff_onset_indices(
    distances: &[(usize, f64)],
    epsilons: &[f64],
) -> Vec<(f64, Option<usize>)> {
    epsilons
        .iter()
        .map(|&eps| {
            let mut onset: Option<usize> = None;
            for &(n, d) in distances {
                if d < eps {
                    onset.get_or_insert(n);
                } else {
                    onset = None;
                }
            }
            (eps, onset)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::build_market;
    use crate::market::MarketSpec;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_measure(atoms: usize) -> ProbabilityMeasure {
        ProbabilityMeasure::new(vec![1.0 / atoms as f64; atoms]).unwrap()
    }

    fn price_set(points: Vec<Vec<f64>>) -> MarginalPriceSet {
        MarginalPriceSet {
            points: points.into_iter().map(DVector::from_vec).collect(),
        }
    }

    #[test]
    fn kyfan_of_equal_variables_is_zero() {
        let p = uniform_measure(3);
        let xi = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(kyfan_distance(&xi, &xi, &p), 0.0);
    }

    #[test]
    fn kyfan_clips_large_differences_at_one() {
        let p = uniform_measure(4);
        let xi = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        let eta = DVector::from_vec(vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(kyfan_distance(&xi, &eta, &p), 1.0);
    }

    #[test]
    fn kyfan_averages_small_differences() {
        let p = uniform_measure(2);
        let xi = DVector::from_vec(vec![0.5, 0.0]);
        let eta = DVector::from_vec(vec![0.0, 0.0]);
        assert_abs_diff_eq!(kyfan_distance(&xi, &eta, &p), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn kyfan_is_a_metric_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ProbabilityMeasure::new(vec![0.2, 0.3, 0.1, 0.4]).unwrap();
        for _ in 0..200 {
            let draw = |rng: &mut ChaCha8Rng| {
                DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0))
            };
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let dab = kyfan_distance(&a, &b, &p);
            let dba = kyfan_distance(&b, &a, &p);
            assert_abs_diff_eq!(dab, dba, epsilon = 1e-15);
            let dac = kyfan_distance(&a, &c, &p);
            let dcb = kyfan_distance(&c, &b, &p);
            assert!(dab <= dac + dcb + 1e-15, "triangle inequality failed");
            assert!((0.0..=1.0).contains(&dab));
        }
    }

    #[test]
    fn tv_distance_of_simple_reweighting() {
        // Z = (1.2, 0.8) under uniform P: TV = ½·(0.2 + 0.2)/2 = 0.1.
        let p = uniform_measure(2);
        assert_abs_diff_eq!(tv_distance(&p, &[1.2, 0.8]), 0.1, epsilon = 1e-15);
        assert_eq!(tv_distance(&p, &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn hausdorff_identical_sets_is_zero() {
        let a = price_set(vec![vec![0.25]]);
        assert_eq!(one_sided_hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_singleton_drift_is_the_gap() {
        for n in 1..=8 {
            let moving = price_set(vec![vec![0.3 + 1.0 / n as f64]]);
            let limit = price_set(vec![vec![0.3]]);
            assert_abs_diff_eq!(
                one_sided_hausdorff(&moving, &limit).unwrap(),
                1.0 / n as f64,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn hausdorff_singleton_into_interval_hits_zero_inside() {
        // Moving singleton 0.3 + 0.1/n against the segment [0.2, 0.35]:
        // distance max(0, 0.3 + 0.1/n − 0.35), zero from n = 2 on.
        let limit = price_set(vec![vec![0.2], vec![0.35]]);
        for n in 1..=6 {
            let p = 0.3 + 0.1 / n as f64;
            let moving = price_set(vec![vec![p]]);
            let expected = (p - 0.35).max(0.0);
            assert_abs_diff_eq!(
                one_sided_hausdorff(&moving, &limit).unwrap(),
                expected,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn hausdorff_is_one_sided() {
        // Small set inside a large one: zero in this direction, positive in
        // the reverse direction.
        let small = price_set(vec![vec![0.3]]);
        let large = price_set(vec![vec![0.2], vec![0.4]]);
        assert_eq!(one_sided_hausdorff(&small, &large).unwrap(), 0.0);
        assert_abs_diff_eq!(
            one_sided_hausdorff(&large, &small).unwrap(),
            0.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hausdorff_rejects_empty_sets() {
        let empty = price_set(vec![]);
        let full = price_set(vec![vec![0.2]]);
        assert!(matches!(
            one_sided_hausdorff(&empty, &full),
            Err(StabilityError::EmptySet)
        ));
        assert!(matches!(
            one_sided_hausdorff(&full, &empty),
            Err(StabilityError::EmptySet)
        ));
    }

    #[test]
    fn hull_distance_in_two_dimensions() {
        // Project onto a triangle: interior point at distance 0, outside
        // point at its orthogonal distance to the nearest edge.
        let hull = price_set(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let inside = price_set(vec![vec![0.25, 0.25]]);
        assert_abs_diff_eq!(
            one_sided_hausdorff(&inside, &hull).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let outside = price_set(vec![vec![1.0, 1.0]]);
        // Nearest hull point is the edge midpoint (0.5, 0.5).
        assert_abs_diff_eq!(
            one_sided_hausdorff(&outside, &hull).unwrap(),
            (0.5f64 * 0.5 * 2.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn onset_indices_track_the_threshold_ladder() {
        let distances: Vec<(usize, f64)> =
            (1..=100).map(|n| (n, 0.5 / n as f64)).collect();
        let onsets = hausdorff_onset_indices(&distances, &[1e-1, 1e-2, 1e-3]);
        assert_eq!(onsets[0], (1e-1, Some(6)));
        assert_eq!(onsets[1], (1e-2, Some(51)));
        assert_eq!(onsets[2], (1e-3, None));
    }

    #[test]
    fn constant_family_validates_with_zero_tv() {
        let market = build_market(&MarketSpec {
            atoms: vec![1.0 / 3.0; 3],
            tree: vec![None, Some(0), Some(0), Some(0)],
            prices: vec![vec![1.0], vec![0.5], vec![1.0], vec![2.0]],
            endowments: vec![],
        })
        .unwrap();
        let family = PerturbationFamily::constant(
            3,
            UtilityFunction::log(),
            (1.0, vec![]),
            (1.0, vec![]),
        );
        let report = family
            .validate(&market.reference_measure(), &[1, 10, 100], &[0.5, 1.0, 2.0])
            .unwrap();
        assert_eq!(report.final_tv, 0.0);
        assert_eq!(report.monotone_from_position, 0);
        assert_eq!(report.final_utility_gap, 0.0);
    }

    #[test]
    fn families_with_broken_densities_are_rejected() {
        let p = uniform_measure(2);
        let make = |z: Vec<f64>| {
            PerturbationFamily::new(
                move |_| z.clone(),
                |_| UtilityFunction::log(),
                |_| (1.0, vec![]),
                |_| (1.0, vec![]),
                UtilityFunction::log(),
                (1.0, vec![]),
                (1.0, vec![]),
            )
        };
        // Non-positive entry.
        let err = make(vec![2.0, 0.0]).validate(&p, &[1], &[1.0]).unwrap_err();
        assert!(matches!(err, StabilityError::InvalidFamily { .. }));
        // Mass defect.
        let err = make(vec![1.5, 1.5]).validate(&p, &[1], &[1.0]).unwrap_err();
        assert!(matches!(err, StabilityError::InvalidFamily { .. }));
        // Wrong atom count.
        let err = make(vec![1.0; 3]).validate(&p, &[1], &[1.0]).unwrap_err();
        assert!(matches!(err, StabilityError::InvalidFamily { .. }));
    }

    #[test]
    fn tv_monotonicity_report_flags_the_last_bump()
    {
        let p = uniform_measure(2);
        // TV(n) = |c_n|/2 with c = (…): choose a sequence that bumps at the
        // third sample and decreases afterwards.
        let cs = [0.4, 0.2, 0.3, 0.1, 0.05];
        let family = PerturbationFamily::new(
            move |n| vec![1.0 + cs[n - 1], 1.0 - cs[n - 1]],
            |_| UtilityFunction::log(),
            |_| (1.0, vec![]),
            |_| (1.0, vec![]),
            UtilityFunction::log(),
            (1.0, vec![]),
            (1.0, vec![]),
        );
        let report = family.validate(&p, &[1, 2, 3, 4, 5], &[1.0]).unwrap();
        assert_eq!(report.monotone_from_position, 2);
        assert_abs_diff_eq!(report.final_tv, 0.025, epsilon = 1e-15);
    }
}
