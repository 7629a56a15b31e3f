//! The stability experiment: solve the primal and dual problems along a
//! perturbation family and record every quantity whose convergence the
//! theory asserts — value functions, capital marginals, optimal wealths and
//! densities (in the Ky–Fan metric), and marginal price sets (one-sided
//! Hausdorff) — together with explicit pass/fail verdicts.

use super::{
    hausdorff_onset_indices, kyfan_distance, one_sided_hausdorff, tv_distance, FamilyValidation,
    PerturbationFamily, StabilityError,
};
use crate::market::{EndowmentBundle, FiniteMarket, MartingaleMeasurePolytope, ProbabilityMeasure};
use crate::optimizer::{
    marginal_price_set, solve_dual_with, solve_primal_with, superdifferential_u_with,
    MarginalPriceSet,
};
use nalgebra::DVector;
use rayon::prelude::*;

/// Explicit thresholds for the experiment verdicts.
#[derive(Debug, Clone)]
pub struct StabilityThresholds {
    /// Final-index tolerance for value and derivative deviations.
    pub value: f64,
    /// Final-index tolerance for the Ky–Fan distances.
    pub kyfan: f64,
    /// Hausdorff thresholds; the report carries the onset index for each.
    pub hausdorff_ladder: Vec<f64>,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        StabilityThresholds {
            value: 1e-4,
            kyfan: 1e-4,
            hausdorff_ladder: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

/// One experiment record at family index `n`.
#[derive(Debug, Clone)]
pub struct SequenceRecord {
    /// Family index.
    pub n: usize,
    /// Primal value `u_n(x_n, q_n)`.
    pub u: f64,
    /// Dual value `v_n(y_n, r_n)`.
    pub v: f64,
    /// Dual value at the *limit* dual point, `v_n(y, r)` — the object of the
    /// semicontinuity split (the `v` column tracks the moving points).
    pub v_at_limit_point: f64,
    /// Capital marginal `∂u_n/∂x` at `(x_n, q_n)`.
    pub du_dx: f64,
    /// Mass marginal `∂v_n/∂y` at `(y_n, r_n)`.
    pub dv_dy: f64,
    /// Ky–Fan distance of the optimal wealth `X̂_n` to the limit wealth,
    /// under the limit measure.
    pub kyfan_x: f64,
    /// Ky–Fan distance of the optimal dual density `Ŷ_n` to the limit.
    pub kyfan_y: f64,
    /// One-sided Hausdorff distance of the marginal price set to the limit
    /// set.
    pub hausdorff_p: f64,
    /// Total variation `TV(P_n, P)`.
    pub tv: f64,
}

/// The limit problem's solution data.
#[derive(Debug, Clone)]
pub struct LimitRecord {
    /// Limit primal value `u_∞(x, q)`.
    pub u: f64,
    /// Limit dual value `v_∞(y, r)`.
    pub v: f64,
    /// Limit capital marginal `∂u_∞/∂x`.
    pub du_dx: f64,
    /// Limit mass marginal `∂v_∞/∂y`.
    pub dv_dy: f64,
    /// Limit optimal terminal wealth `X̂_∞`.
    pub wealth: DVector<f64>,
    /// Limit optimal dual density `Ŷ_∞`.
    pub density: DVector<f64>,
    /// Limit marginal price set `P_∞`.
    pub prices: MarginalPriceSet,
}

/// Verdicts, one per asserted convergence clause.
#[derive(Debug, Clone)]
pub struct ClauseVerdicts {
    /// `max(|u_n − u_∞|, |v_n − v_∞|)` at the final index.
    pub value_gap: f64,
    /// `max(|∂_x u_n − ∂_x u_∞|, |∂_y v_n − ∂_y v_∞|)` at the final index.
    pub derivative_gap: f64,
    /// `max(kyfan_x, kyfan_y)` at the final index.
    pub kyfan_gap: f64,
    /// Onset index per Hausdorff threshold (`None`: never settled).
    pub hausdorff_onsets: Vec<(f64, Option<usize>)>,
    /// `max(0, v_∞ − v_n(y, r))` at the final index: empirical defect of the
    /// lower semicontinuity inequality (the moving values may not end up
    /// below the limit value at the fixed dual point).
    pub liminf_defect: f64,
    /// `max(0, v_n(y, r) − v_∞)` at the final index: upper counterpart.
    pub limsup_defect: f64,
    /// Clause (1): values and derivatives within tolerance at the end.
    pub values_pass: bool,
    /// Clause (2): Ky–Fan distances within tolerance at the end.
    pub kyfan_pass: bool,
    /// Clause (3): every Hausdorff threshold reached some onset index.
    pub hausdorff_pass: bool,
    /// Semicontinuity split within tolerance.
    pub semicontinuity_pass: bool,
}

impl ClauseVerdicts {
    /// All clauses pass.
    pub fn all_pass(&self) -> bool {
        self.values_pass && self.kyfan_pass && self.hausdorff_pass && self.semicontinuity_pass
    }
}

/// Full output of [`run_stability_experiment`].
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Per-index records, ascending in `n`.
    pub records: Vec<SequenceRecord>,
    /// The limit problem's solution.
    pub limit: LimitRecord,
    /// Verdicts per convergence clause.
    pub verdicts: ClauseVerdicts,
    /// The thresholds the verdicts were judged against.
    pub thresholds: StabilityThresholds,
    /// Family validation readings (TV monotonicity, utility convergence).
    pub validation: FamilyValidation,
}

/// Test ladder: every index up to 10, then geometric with ratio 5/4, ending
/// exactly at `n_max`.
pub fn experiment_ladder(n_max: usize) -> Vec<usize> {
    assert!(n_max >= 1, "empty experiment");
    let mut ladder = Vec::new();
    let mut n = 1usize;
    while n <= n_max {
        ladder.push(n);
        n = if n < 10 { n + 1 } else { (n * 5 + 3) / 4 };
    }
    if *ladder.last().expect("nonempty") != n_max {
        ladder.push(n_max);
    }
    ladder
}

/// Runs the full stability experiment for `family` on `market` with the
/// endowment `bundle`: solves the limit problem once, then the perturbed
/// problems along [`experiment_ladder`]`(n_max)` (in parallel; the report
/// assembly is order-deterministic), and grades every convergence clause
/// against `thresholds`.
///
/// Solver failures abort the experiment and carry the offending index; the
/// reported index is the smallest failing one on the ladder.
pub fn run_stability_experiment(
    market: &FiniteMarket,
    bundle: &EndowmentBundle,
    family: &PerturbationFamily,
    n_max: usize,
    thresholds: &StabilityThresholds,
) -> Result<ConvergenceReport, StabilityError> {
    let measure = market.reference_measure();
    let polytope = MartingaleMeasurePolytope::compute(market)?;
    let ladder = experiment_ladder(n_max);
    let probes = [0.25, 0.5, 1.0, 2.0, 4.0];
    let validation = family.validate(&measure, &ladder, &probes)?;

    // The limit problem.
    let (x_inf, q_inf) = family.limit_primal();
    let (y_inf, r_inf) = family.limit_dual();
    let u_limit = family.limit_utility();
    let primal_inf = solve_primal_with(&polytope, &measure, u_limit, bundle, x_inf, &q_inf)
        .map_err(|source| StabilityError::SolverFailed { n: 0, source })?;
    let dual_inf = solve_dual_with(&polytope, &measure, u_limit, bundle, y_inf, &r_inf)
        .map_err(|source| StabilityError::SolverFailed { n: 0, source })?;
    let superdiff_inf =
        superdifferential_u_with(&polytope, &measure, u_limit, bundle, x_inf, &q_inf)
            .map_err(|source| StabilityError::SolverFailed { n: 0, source })?;
    let limit = LimitRecord {
        u: primal_inf.value,
        v: dual_inf.value,
        du_dx: primal_inf.marginal_value,
        dv_dy: dual_inf.capital_marginal,
        wealth: primal_inf.terminal_wealth.clone(),
        density: dual_inf.density.clone(),
        prices: marginal_price_set(&superdiff_inf),
    };

    // Perturbed problems, one record per ladder index.  Errors are collected
    // positionally so the reported failure is the smallest failing index
    // regardless of scheduling.
    let outcomes: Vec<Result<SequenceRecord, StabilityError>> = ladder
        .par_iter()
        .map(|&n| solve_at_index(n, &polytope, &measure, bundle, family, &limit))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        records.push(outcome?);
    }

    let verdicts = grade(&records, &limit, thresholds);
    Ok(ConvergenceReport {
        records,
        limit,
        verdicts,
        thresholds: thresholds.clone(),
        validation,
    })
}

/// Solves the three per-index problems and assembles the record.
fn solve_at_index(
    n: usize,
    polytope: &MartingaleMeasurePolytope,
    measure: &ProbabilityMeasure,
    bundle: &EndowmentBundle,
    family: &PerturbationFamily,
    limit: &LimitRecord,
) -> Result<SequenceRecord, StabilityError> {
    let fail = |source| StabilityError::SolverFailed { n, source };
    let z = family.density_at(n);
    let perturbed = measure.reweighted(&z)?;
    let utility = family.utility_at(n);
    let (x_n, q_n) = family.primal_point_at(n);
    let (y_n, r_n) = family.dual_point_at(n);
    let (_, r_limit) = family.limit_dual();
    let y_limit = family.limit_dual().0;

    let primal =
        solve_primal_with(polytope, &perturbed, &utility, bundle, x_n, &q_n).map_err(fail)?;
    let dual = solve_dual_with(polytope, &perturbed, &utility, bundle, y_n, &r_n).map_err(fail)?;
    let dual_at_limit =
        solve_dual_with(polytope, &perturbed, &utility, bundle, y_limit, &r_limit)
            .map_err(fail)?;
    let superdiff =
        superdifferential_u_with(polytope, &perturbed, &utility, bundle, x_n, &q_n)
            .map_err(fail)?;
    let prices = marginal_price_set(&superdiff);

    Ok(SequenceRecord {
        n,
        u: primal.value,
        v: dual.value,
        v_at_limit_point: dual_at_limit.value,
        du_dx: primal.marginal_value,
        dv_dy: dual.capital_marginal,
        kyfan_x: kyfan_distance(&primal.terminal_wealth, &limit.wealth, measure),
        kyfan_y: kyfan_distance(&dual.density, &limit.density, measure),
        hausdorff_p: one_sided_hausdorff(&prices, &limit.prices)?,
        tv: tv_distance(measure, &z),
    })
}

/// Grades the records against the thresholds.
fn grade(
    records: &[SequenceRecord],
    limit: &LimitRecord,
    thresholds: &StabilityThresholds,
) -> ClauseVerdicts {
    let last = records.last().expect("nonempty ladder");
    let value_gap = (last.u - limit.u).abs().max((last.v - limit.v).abs());
    let derivative_gap = (last.du_dx - limit.du_dx)
        .abs()
        .max((last.dv_dy - limit.dv_dy).abs());
    let kyfan_gap = last.kyfan_x.max(last.kyfan_y);

    let distances: Vec<(usize, f64)> = records.iter().map(|r| (r.n, r.hausdorff_p)).collect();
    let hausdorff_onsets = hausdorff_onset_indices(&distances, &thresholds.hausdorff_ladder);
    let hausdorff_pass = hausdorff_onsets.iter().all(|(_, onset)| onset.is_some());

    // Semicontinuity split at the final index: the signed halves of the
    // fixed-point gap grade the lower and the upper inequality separately.
    let liminf_defect = (limit.v - last.v_at_limit_point).max(0.0);
    let limsup_defect = (last.v_at_limit_point - limit.v).max(0.0);

    ClauseVerdicts {
        value_gap,
        derivative_gap,
        kyfan_gap,
        hausdorff_onsets,
        liminf_defect,
        limsup_defect,
        values_pass: value_gap < thresholds.value && derivative_gap < thresholds.value,
        kyfan_pass: kyfan_gap < thresholds.kyfan,
        hausdorff_pass,
        semicontinuity_pass: liminf_defect < thresholds.value
            && limsup_defect < thresholds.value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::UtilityFunction;
    use crate::market::{build_market, MarketSpec};
    use approx::assert_abs_diff_eq;

    fn trinomial_market() -> FiniteMarket {
        build_market(&MarketSpec {
            atoms: vec![1.0 / 3.0; 3],
            tree: vec![None, Some(0), Some(0), Some(0)],
            prices: vec![vec![1.0], vec![0.5], vec![1.0], vec![2.0]],
            endowments: vec![],
        })
        .unwrap()
    }

    fn call_bundle(market: &FiniteMarket) -> EndowmentBundle {
        EndowmentBundle::new(market, vec![vec![0.0, 0.0, 1.0]]).unwrap()
    }

    /// The drifting family used throughout: `Z_n = 1 + ζ/n` with
    /// `ζ = (0.06, −0.03, −0.03)` (mean zero under the uniform reference),
    /// power utilities with exponent `0.5 + 0.02/n`, and evaluation points
    /// drifting at rate `1/n` toward interior limits.
    fn drifting_family() -> PerturbationFamily {
        let zeta = [0.06, -0.03, -0.03];
        PerturbationFamily::new(
            move |n| zeta.iter().map(|&c| 1.0 + c / n as f64).collect(),
            |n| UtilityFunction::power(0.5 + 0.02 / n as f64),
            |n| (1.0 + 0.02 / n as f64, vec![0.1 - 0.01 / n as f64]),
            |n| (1.0 + 0.02 / n as f64, vec![0.2 + 0.005 / n as f64]),
            UtilityFunction::power(0.5),
            (1.0, vec![0.1]),
            (1.0, vec![0.2]),
        )
    }

    #[test]
    fn ladder_is_sorted_unique_and_ends_at_n_max() {
        for &n_max in &[1usize, 7, 10, 11, 100, 1000] {
            let ladder = experiment_ladder(n_max);
            assert_eq!(*ladder.last().unwrap(), n_max);
            for w in ladder.windows(2) {
                assert!(w[0] < w[1], "ladder not strictly increasing");
            }
        }
        assert_eq!(experiment_ladder(3), vec![1, 2, 3]);
    }

    #[test]
    fn constant_family_reports_pure_solver_noise() {
        let market = trinomial_market();
        let bundle = call_bundle(&market);
        let family = PerturbationFamily::constant(
            3,
            UtilityFunction::log(),
            (1.0, vec![0.1]),
            (1.0, vec![0.2]),
        );
        let report = run_stability_experiment(
            &market,
            &bundle,
            &family,
            50,
            &StabilityThresholds::default(),
        )
        .unwrap();
        for r in &report.records {
            assert_abs_diff_eq!(r.u, report.limit.u, epsilon = 1e-9);
            assert_abs_diff_eq!(r.v, report.limit.v, epsilon = 1e-9);
            assert_abs_diff_eq!(r.du_dx, report.limit.du_dx, epsilon = 1e-8);
            assert_abs_diff_eq!(r.dv_dy, report.limit.dv_dy, epsilon = 1e-8);
            assert!(r.kyfan_x < 1e-9);
            assert!(r.kyfan_y < 1e-9);
            assert!(r.hausdorff_p < 1e-9);
            assert_eq!(r.tv, 0.0);
        }
        assert!(report.verdicts.all_pass());
        assert!(report.verdicts.liminf_defect < 1e-9);
        assert!(report.verdicts.limsup_defect < 1e-9);
    }

    #[test]
    fn drifting_family_satisfies_every_clause_at_n_1000() {
        let market = trinomial_market();
        let bundle = call_bundle(&market);
        let family = drifting_family();
        let report = run_stability_experiment(
            &market,
            &bundle,
            &family,
            1000,
            &StabilityThresholds::default(),
        )
        .unwrap();

        let v = &report.verdicts;
        assert!(
            v.value_gap < 1e-4,
            "value gap {} at n = 1000",
            v.value_gap
        );
        assert!(
            v.derivative_gap < 1e-4,
            "derivative gap {} at n = 1000",
            v.derivative_gap
        );
        assert!(v.kyfan_gap < 1e-4, "Ky-Fan gap {} at n = 1000", v.kyfan_gap);
        assert!(v.hausdorff_pass, "onsets: {:?}", v.hausdorff_onsets);
        // The finest threshold must settle by the end of the ladder.
        let finest = v.hausdorff_onsets.last().unwrap();
        assert!(finest.1.is_some() && finest.1.unwrap() <= 1000);
        assert!(v.semicontinuity_pass);
        assert!(v.all_pass());

        // Deviations shrink visibly from the first to the last record.
        let first = &report.records[0];
        let last = report.records.last().unwrap();
        assert!(last.kyfan_x < first.kyfan_x / 10.0);
        assert!((last.u - report.limit.u).abs() < (first.u - report.limit.u).abs() / 10.0);
        // TV decreases monotonically from the start.
        assert_eq!(report.validation.monotone_from_position, 0);
        assert!(report.validation.final_tv < 1e-4);
    }

    #[test]
    fn primal_values_match_brute_force_along_the_family() {
        // Independent oracle at n ∈ {1, 10, 1000}: coordinate grid search
        // over payoffs, refined around the incumbent, must agree with the
        // recorded u_n within 1e-5.
        let market = trinomial_market();
        let bundle = call_bundle(&market);
        let family = drifting_family();
        let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
        let measure = market.reference_measure();
        let vertices: Vec<Vec<f64>> = polytope
            .vertices()
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();

        for &n in &[1usize, 10, 1000] {
            let z = family.density_at(n);
            let perturbed = measure.reweighted(&z).unwrap();
            let utility = family.utility_at(n);
            let (x_n, q_n) = family.primal_point_at(n);
            let solved =
                solve_primal_with(&polytope, &perturbed, &utility, &bundle, x_n, &q_n)
                    .unwrap();

            let budgets: Vec<f64> = polytope
                .vertices()
                .iter()
                .map(|v| {
                    let mut b = x_n;
                    for i in 0..3 {
                        b += q_n[0] * bundle.payoff(0)[i] * v[i];
                    }
                    b
                })
                .collect();
            let brute = brute_force_value(perturbed.weights(), &vertices, &budgets, &utility);
            assert_abs_diff_eq!(solved.value, brute, epsilon = 1e-5);
        }
    }

    /// Multi-resolution coordinate search over total payoffs `g ≥ 0` subject
    /// to the vertex budget constraints `E^Q[g] ≤ budget_Q`.
    fn brute_force_value(
        p: &[f64],
        vertices: &[Vec<f64>],
        budgets: &[f64],
        utility: &UtilityFunction,
    ) -> f64 {
        let m = p.len();
        let feasible = |g: &[f64]| {
            vertices.iter().zip(budgets).all(|(v, &b)| {
                let price: f64 = (0..m).map(|i| v[i] * g[i]).sum();
                price <= b + 1e-12
            })
        };
        let objective = |g: &[f64]| -> f64 { (0..m).map(|i| p[i] * utility.value(g[i])).sum() };

        let mut center = vec![1.0f64; m];
        let mut radius = 4.0f64;
        let mut best = f64::NEG_INFINITY;
        let steps = 14usize;
        for _ in 0..14 {
            let mut local_best = best;
            let mut local_arg = center.clone();
            let mut idx = vec![0usize; m];
            loop {
                let g: Vec<f64> = (0..m)
                    .map(|i| {
                        let lo = (center[i] - radius).max(1e-9);
                        lo + (center[i] + radius - lo) * idx[i] as f64 / (steps - 1) as f64
                    })
                    .collect();
                if feasible(&g) {
                    let val = objective(&g);
                    if val > local_best {
                        local_best = val;
                        local_arg = g;
                    }
                }
                // Odometer increment.
                let mut k = 0;
                while k < m {
                    idx[k] += 1;
                    if idx[k] < steps {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == m {
                    break;
                }
            }
            best = local_best;
            center = local_arg;
            radius *= 0.35;
        }
        best
    }

    #[test]
    fn solver_failures_carry_the_smallest_offending_index() {
        let market = trinomial_market();
        let bundle = call_bundle(&market);
        // The primal point leaves the feasibility cone from n = 5 onward.
        let family = PerturbationFamily::new(
            |_| vec![1.0; 3],
            |_| UtilityFunction::log(),
            |n| {
                if n >= 5 {
                    (-1.0, vec![0.0])
                } else {
                    (1.0, vec![0.0])
                }
            },
            |_| (1.0, vec![0.2]),
            UtilityFunction::log(),
            (1.0, vec![0.0]),
            (1.0, vec![0.2]),
        );
        let err = run_stability_experiment(
            &market,
            &bundle,
            &family,
            20,
            &StabilityThresholds::default(),
        )
        .unwrap_err();
        match err {
            StabilityError::SolverFailed { n, .. } => assert_eq!(n, 5),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn hausdorff_onset_appears_in_the_verdicts() {
        let market = trinomial_market();
        let bundle = call_bundle(&market);
        let family = drifting_family();
        let report = run_stability_experiment(
            &market,
            &bundle,
            &family,
            200,
            &StabilityThresholds::default(),
        )
        .unwrap();
        // The coarse threshold settles immediately; onsets are ascending in
        // tightness.
        let onsets = &report.verdicts.hausdorff_onsets;
        assert_eq!(onsets.len(), 3);
        assert_eq!(onsets[0].1, Some(1));
        let coarse = onsets[0].1.unwrap();
        let fine = onsets[2].1.unwrap_or(usize::MAX);
        assert!(coarse <= fine);
    }
}
