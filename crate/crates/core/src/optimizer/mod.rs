//! Primal and dual solvers for expected-utility maximization with a random
//! endowment on a finite market.
//!
//! Both problems collapse to separable convex programs over the martingale
//! cone `{z ≥ 0 : Mz = 0}` (`M` = elementary-strategy gain rows):
//!
//! * primal: the Lagrangian dual over vertex multipliers `λ ≥ 0` depends on
//!   `λ` only through the atom measure `z = Σ_k λ_k Q_k`, giving
//!   `u(x, q) = min_z Σ_i [P_i·V(z_i/P_i) + (x + ⟨q, f_i⟩)·z_i]` over the
//!   cone; the optimal payoff is recovered atomwise through the inverse
//!   marginal, and the equality multipliers of the gain rows are the hedging
//!   strategy;
//! * dual: `v(y, r)` minimizes `Σ_i P_i·V(z_i/P_i)` over the same cone
//!   intersected with the mass and bundle-price slices `Σz = y`, `Σf·z = r`.
//!
//! Strict convexity of `V` makes both programs smooth interior problems,
//! solved by the equality-constrained damped Newton method from the numerics
//! layer.

pub mod conjugacy;
pub mod superdiff;

pub use conjugacy::{conjugacy_check, maximize_conjugate_gap, ConjugacyReport};
pub use superdiff::{
    marginal_price_set, superdifferential_u, superdifferential_u_with, MarginalPriceSet,
    Superdifferential,
};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::convex::{ConvexError, UtilityFunction};
use crate::market::{
    arbitrage_free_price_set, cone_slack_k, membership_l, EndowmentBundle, FiniteMarket,
    MarketError, MartingaleMeasurePolytope, ProbabilityMeasure,
};
use crate::numerics::newton::{
    minimize_on_affine_slice, NewtonError, NewtonOptions, SeparableObjective,
};
use crate::numerics::simplex::conic_decomposition;

/// Stationarity bound every accepted solve must meet.
pub const KKT_TOL: f64 = 1e-9;

/// Slack at which a vertex budget constraint counts as binding when checking
/// complementary slackness.
pub const COMPLEMENTARY_SLACKNESS_TOL: f64 = 1e-7;

/// Starting points within this distance of the cone boundary are rejected.
pub const BOUNDARY_REJECTION: f64 = 1e-9;

/// Agreement tolerance used when pairing a primal and a dual solution.
pub const PAIRING_TOL: f64 = 1e-6;

/// Errors produced by the optimization layer.
#[derive(Debug, Error)]
pub enum OptimizerError {
    /// The requested starting point lies outside (or on the boundary of) the
    /// admissible open cone.
    #[error("starting point outside the feasible cone (boundary slack {slack:.3e})")]
    InfeasibleStart { slack: f64 },
    /// The inner Newton solve failed to reach the stationarity target.
    #[error("solver diverged (best stationarity {residual:.3e})")]
    SolverDiverged { residual: f64 },
    /// A primal/dual pair was handed to a cross-check without matching
    /// first-order data.
    #[error("primal and dual solutions do not form a matched pair (y gap {y_gap:.3e}, price gap {r_gap:.3e})")]
    MismatchedPair { y_gap: f64, r_gap: f64 },
    /// Underlying market-layer failure.
    #[error(transparent)]
    Market(#[from] MarketError),
    /// Underlying convex-analysis failure.
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

/// Solution of the primal utility-maximization problem.
#[derive(Debug, Clone)]
pub struct PrimalSolution {
    /// Optimal terminal wealth `X̂_T` per atom (excludes the endowment).
    pub terminal_wealth: DVector<f64>,
    /// Optimal total payoff `ĝ = X̂_T + ⟨q, f⟩ ≥ 0` per atom.
    pub total_payoff: DVector<f64>,
    /// Optimal value `u(x, q)`.
    pub value: f64,
    /// Marginal value of capital `y = ∂u/∂x` (mass of the shadow measure).
    pub marginal_value: f64,
    /// Marginal value of the bundle positions, `r = E[f·ẑ]` (length N).
    pub marginal_bundle_value: DVector<f64>,
    /// Optimal shadow measure `ẑ` on atoms (`ẑ_i = P_i·U'(ĝ_i)`).
    pub shadow_density: DVector<f64>,
    /// Nonzero multipliers of the vertex budget constraints, as
    /// `(vertex index, λ_k)` with the decomposition `ẑ = Σ λ_k Q_k`.
    pub active_vertex_weights: Vec<(usize, f64)>,
    /// Whether more budget constraints bind than the reported support uses
    /// (tie among vertex supports; the first minimal-support solution found
    /// is returned for determinism).
    pub degenerate_weights: bool,
    /// Holdings `(node, asset) ↦ position` recovered from the equality
    /// multipliers of the gain rows; `X̂_T = x + (gains of this strategy)`.
    pub hedging_positions: Vec<((usize, usize), f64)>,
    /// Final stationarity of the inner Newton solve.
    pub kkt_residual: f64,
}

/// Solution of the dual problem.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Optimal state-price density `Ŷ_T` per atom (relative to `P`).
    pub density: DVector<f64>,
    /// Optimal value `v(y, r)`.
    pub value: f64,
    /// Mass coordinate `y` of the dual point.
    pub y: f64,
    /// Bundle coordinate `r` of the dual point (length N).
    pub r: DVector<f64>,
    /// Optimal shadow measure `ẑ_i = P_i·Ŷ_i` (sums to `y`).
    pub shadow_density: DVector<f64>,
    /// Vertices of the price-consistent slice of the martingale polytope.
    pub pricing_vertices: Vec<DVector<f64>>,
    /// Convex weights over `pricing_vertices` decomposing `ẑ/y`.
    pub pricing_weights: Vec<f64>,
    /// Marginal value of dual mass `∂v/∂y`, read off the equality multiplier
    /// of the total-mass constraint; equals `−x̂` at a conjugate-matched pair.
    pub capital_marginal: f64,
    /// Final stationarity of the inner Newton solve.
    pub kkt_residual: f64,
}

/// Validates the shared preconditions and assembles the per-atom weights.
fn check_inputs(
    market: &FiniteMarket,
    measure: &ProbabilityMeasure,
    bundle: &EndowmentBundle,
) -> Result<(), OptimizerError> {
    if measure.weights().len() != market.num_atoms() {
        return Err(MarketError::InvalidMeasure {
            reason: format!(
                "measure has {} atoms, market has {}",
                measure.weights().len(),
                market.num_atoms()
            ),
        }
        .into());
    }
    if !measure.is_equivalent() {
        return Err(MarketError::InvalidMeasure {
            reason: "reference measure must charge every atom".to_string(),
        }
        .into());
    }
    if bundle.num_atoms() != market.num_atoms() {
        return Err(MarketError::EndowmentDimensionMismatch {
            index: 0,
            found: bundle.num_atoms(),
            expected: market.num_atoms(),
        }
        .into());
    }
    Ok(())
}

/// Coarse one-dimensional pre-scan along a fixed interior ray `t ↦ t·base`,
/// so the Newton iteration starts at a sane scale.
fn scale_along_ray(objective: &dyn Fn(&DVector<f64>) -> f64, base: &DVector<f64>) -> f64 {
    let mut best_t = 1.0;
    let mut best_v = f64::INFINITY;
    for k in -28..=28 {
        let t = 10.0_f64.powf(k as f64 / 3.5);
        let v = objective(&(base * t));
        if v.is_finite() && v < best_v {
            best_v = v;
            best_t = t;
        }
    }
    best_t
}

/// Maps inner-solver failures onto the public error type, accepting stalls
/// that still meet the stationarity contract.
fn accept_newton(
    outcome: Result<crate::numerics::newton::NewtonSolution, NewtonError>,
) -> Result<crate::numerics::newton::NewtonSolution, OptimizerError> {
    match outcome {
        Ok(sol) => {
            if sol.stationarity < KKT_TOL {
                Ok(sol)
            } else {
                Err(OptimizerError::SolverDiverged {
                    residual: sol.stationarity,
                })
            }
        }
        Err(NewtonError::Stalled { stationarity, .. })
        | Err(NewtonError::IterationLimit { stationarity }) => {
            Err(OptimizerError::SolverDiverged {
                residual: stationarity,
            })
        }
        Err(NewtonError::BadStart) => Err(OptimizerError::SolverDiverged {
            residual: f64::INFINITY,
        }),
    }
}

/// Maximizes `E^P[U(g)]` over payoffs `g ≥ 0` whose price at every
/// martingale-polytope vertex stays within the budget `x + ⟨q, E^Q f⟩`.
pub fn solve_primal(
    market: &FiniteMarket,
    measure: &ProbabilityMeasure,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    x: f64,
    q: &[f64],
) -> Result<PrimalSolution, OptimizerError> {
    check_inputs(market, measure, bundle)?;
    assert_eq!(q.len(), bundle.dim(), "position dimension mismatch");
    let polytope = MartingaleMeasurePolytope::compute(market)?;
    solve_primal_with(&polytope, measure, utility, bundle, x, q)
}

/// [`solve_primal`] against a precomputed martingale polytope (the stability
/// harness re-solves the same market under many measures).
pub fn solve_primal_with(
    polytope: &MartingaleMeasurePolytope,
    measure: &ProbabilityMeasure,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    x: f64,
    q: &[f64],
) -> Result<PrimalSolution, OptimizerError> {
    let slack = cone_slack_k(polytope, bundle, x, q);
    if !(slack > BOUNDARY_REJECTION) {
        return Err(OptimizerError::InfeasibleStart { slack });
    }
    let dual = utility.conjugate()?;
    let m = polytope.num_atoms();
    let p = measure.weights();
    let position = bundle.position_payoff(q);
    let weights: Vec<f64> = (0..m).map(|i| x + position[i]).collect();

    let objective_value = |z: &DVector<f64>| -> f64 {
        let mut total = 0.0;
        for i in 0..m {
            if z[i] <= 0.0 {
                return f64::INFINITY;
            }
            total += p[i] * dual.value(z[i] / p[i]) + weights[i] * z[i];
        }
        total
    };
    let objective_gradient = |z: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(m, |i, _| dual.derivative(z[i] / p[i]) + weights[i])
    };
    let objective_hessian = |z: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(m, |i, _| dual.second_derivative(z[i] / p[i]) / p[i])
    };
    let objective = SeparableObjective {
        value: &objective_value,
        gradient: &objective_gradient,
        hessian_diag: &objective_hessian,
    };

    let base = polytope.barycenter();
    let z0 = &base * scale_along_ray(&objective_value, &base);
    let constraints = polytope.martingale_rows().clone();
    let sol = accept_newton(minimize_on_affine_slice(
        &objective,
        &constraints,
        &z0,
        &NewtonOptions::default(),
    ))?;

    let z = sol.z;
    let total_payoff = DVector::from_fn(m, |i, _| utility.inverse_marginal(z[i] / p[i]));
    let value = (0..m).map(|i| p[i] * utility.value(total_payoff[i])).sum();
    let terminal_wealth = DVector::from_fn(m, |i, _| total_payoff[i] - position[i]);
    let marginal_value = z.sum();
    let marginal_bundle_value = DVector::from_fn(bundle.dim(), |j, _| {
        (0..m).map(|i| bundle.payoff(j)[i] * z[i]).sum()
    });

    // Decompose the shadow measure over polytope vertices; the basic solution
    // from the LP gives a deterministic minimal support.
    let vertices = polytope.vertices();
    let mut generator_matrix = DMatrix::<f64>::zeros(m, vertices.len());
    for (k, v) in vertices.iter().enumerate() {
        generator_matrix.column_mut(k).copy_from(v);
    }
    let lambda = conic_decomposition(&generator_matrix, &z).ok_or(
        OptimizerError::SolverDiverged {
            residual: sol.stationarity,
        },
    )?;
    let active_vertex_weights: Vec<(usize, f64)> = lambda
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 1e-12)
        .map(|(k, w)| (k, *w))
        .collect();

    // Degeneracy: more binding budget constraints than the support uses.
    let scale = x.abs().max(1.0);
    let binding = vertices
        .iter()
        .enumerate()
        .filter(|(k, v)| {
            let price: f64 = (0..m).map(|i| v[i] * total_payoff[i]).sum();
            let budget = x + polytope.vertex_expectation(*k, &position);
            (budget - price).abs() <= COMPLEMENTARY_SLACKNESS_TOL * scale
        })
        .count();
    let degenerate_weights = binding > active_vertex_weights.len();

    let hedging_positions = polytope
        .row_labels()
        .iter()
        .zip(sol.multipliers.iter())
        .map(|(&label, &nu)| (label, nu))
        .collect();

    Ok(PrimalSolution {
        terminal_wealth,
        total_payoff,
        value,
        marginal_value,
        marginal_bundle_value,
        shadow_density: z,
        active_vertex_weights,
        degenerate_weights,
        hedging_positions,
        kkt_residual: sol.stationarity,
    })
}

/// Minimizes `E^P[V(Y)]` over state-price densities consistent with mass `y`
/// and bundle prices `r`.
pub fn solve_dual(
    market: &FiniteMarket,
    measure: &ProbabilityMeasure,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    y: f64,
    r: &[f64],
) -> Result<DualSolution, OptimizerError> {
    check_inputs(market, measure, bundle)?;
    assert_eq!(r.len(), bundle.dim(), "dual position dimension mismatch");
    let polytope = MartingaleMeasurePolytope::compute(market)?;
    solve_dual_with(&polytope, measure, utility, bundle, y, r)
}

/// [`solve_dual`] against a precomputed martingale polytope.
pub fn solve_dual_with(
    polytope: &MartingaleMeasurePolytope,
    measure: &ProbabilityMeasure,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    y: f64,
    r: &[f64],
) -> Result<DualSolution, OptimizerError> {
    if !(y > BOUNDARY_REJECTION) {
        return Err(OptimizerError::InfeasibleStart { slack: y });
    }
    let feasible = membership_l(polytope, bundle, y, r)?;
    if !feasible {
        let slack = if bundle.dim() == 0 {
            y
        } else {
            // Distance-to-boundary proxy: the smallest barycentric weight of
            // r/y over the price-set generators.
            let prices = arbitrage_free_price_set(polytope, bundle)?;
            let mut gens = DMatrix::<f64>::zeros(bundle.dim(), prices.points().len());
            for (k, pt) in prices.points().iter().enumerate() {
                gens.column_mut(k).copy_from(pt);
            }
            let target = DVector::from_fn(bundle.dim(), |j, _| r[j] / y);
            crate::numerics::simplex::hull_membership(&gens, &target, 0.0).min_weight
        };
        return Err(OptimizerError::InfeasibleStart { slack });
    }

    let dual = utility.conjugate()?;
    let m = polytope.num_atoms();
    let p = measure.weights();

    // Vertices of the slice {Q in polytope : E^Q f = r/y}; their average is a
    // strictly positive interior starting measure.
    let payoffs: Vec<&[f64]> = (0..bundle.dim()).map(|j| bundle.payoff(j)).collect();
    let targets: Vec<f64> = r.iter().map(|rj| rj / y).collect();
    let slice = polytope.slice_vertices(&payoffs, &targets)?;
    if slice.is_empty() {
        // Marginally feasible by the membership tolerance, but the sliced
        // polytope is empty at enumeration precision.
        return Err(OptimizerError::InfeasibleStart { slack: 0.0 });
    }
    let mut z0 = DVector::<f64>::zeros(m);
    for v in &slice {
        z0 += v;
    }
    z0 *= y / slice.len() as f64;

    // Constraint rows: martingale cone, total mass, and bundle prices.
    let base_rows = polytope.martingale_rows().nrows();
    let mut constraints = DMatrix::<f64>::zeros(base_rows + 1 + bundle.dim(), m);
    constraints
        .view_mut((0, 0), (base_rows, m))
        .copy_from(polytope.martingale_rows());
    for i in 0..m {
        constraints[(base_rows, i)] = 1.0;
    }
    for j in 0..bundle.dim() {
        for i in 0..m {
            constraints[(base_rows + 1 + j, i)] = bundle.payoff(j)[i];
        }
    }

    let objective_value = |z: &DVector<f64>| -> f64 {
        let mut total = 0.0;
        for i in 0..m {
            if z[i] <= 0.0 {
                return f64::INFINITY;
            }
            total += p[i] * dual.value(z[i] / p[i]);
        }
        total
    };
    let objective_gradient =
        |z: &DVector<f64>| -> DVector<f64> { DVector::from_fn(m, |i, _| dual.derivative(z[i] / p[i])) };
    let objective_hessian = |z: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(m, |i, _| dual.second_derivative(z[i] / p[i]) / p[i])
    };
    let objective = SeparableObjective {
        value: &objective_value,
        gradient: &objective_gradient,
        hessian_diag: &objective_hessian,
    };

    let sol = accept_newton(minimize_on_affine_slice(
        &objective,
        &constraints,
        &z0,
        &NewtonOptions::default(),
    ))?;
    // Sensitivity of the constrained minimum to the mass level: for
    // min f s.t. Az = b with stationarity ∇f + Aᵀν = 0, the value function
    // has ∂(min)/∂b = −ν, and the mass row's entry of b is y.  The mass row
    // is never dropped as dependent: every vector in the martingale-row
    // kernel that the feasible set contains has positive total mass.
    let capital_marginal = -sol.multipliers[base_rows];
    let z = sol.z;
    let density = DVector::from_fn(m, |i, _| z[i] / p[i]);
    let value = sol.value;

    // Convex decomposition of ẑ/y over the slice vertices (mass row appended
    // so the conic weights are automatically convex).
    let mut gens = DMatrix::<f64>::zeros(m + 1, slice.len());
    for (k, v) in slice.iter().enumerate() {
        for i in 0..m {
            gens[(i, k)] = v[i];
        }
        gens[(m, k)] = 1.0;
    }
    let mut target = DVector::<f64>::zeros(m + 1);
    for i in 0..m {
        target[i] = z[i] / y;
    }
    target[m] = 1.0;
    let pricing_weights = conic_decomposition(&gens, &target).ok_or(
        OptimizerError::SolverDiverged {
            residual: sol.stationarity,
        },
    )?;

    Ok(DualSolution {
        density,
        value,
        y,
        r: DVector::from_column_slice(r),
        shadow_density: z,
        pricing_vertices: slice,
        pricing_weights,
        capital_marginal,
        kkt_residual: sol.stationarity,
    })
}

/// Verifies the first-order link between a matched primal/dual pair: the
/// dual density must equal the marginal utility of the optimal total payoff
/// `X̂_T + ⟨q, f⟩` atomwise.  Returns the maximal atomwise gap.
///
/// The pair must actually be matched — the dual point has to lie in the
/// superdifferential of the primal value, which the marginal data of the
/// primal solution pins down; otherwise [`OptimizerError::MismatchedPair`].
pub fn first_order_link_check(
    primal: &PrimalSolution,
    dual: &DualSolution,
    utility: &UtilityFunction,
    bundle: &EndowmentBundle,
    q: &[f64],
) -> Result<f64, OptimizerError> {
    let position = bundle.position_payoff(q);
    for i in 0..primal.total_payoff.len() {
        debug_assert!(
            (primal.total_payoff[i] - primal.terminal_wealth[i] - position[i]).abs() < 1e-9,
            "payoff decomposition inconsistent with the stated position"
        );
    }
    let y_gap = (dual.y - primal.marginal_value).abs();
    let r_gap = (&dual.r - &primal.marginal_bundle_value)
        .iter()
        .fold(0.0_f64, |acc, d| acc.max(d.abs()));
    let scale = dual.y.abs().max(1.0);
    if y_gap > PAIRING_TOL * scale || r_gap > PAIRING_TOL * scale {
        return Err(OptimizerError::MismatchedPair { y_gap, r_gap });
    }
    let mut worst: f64 = 0.0;
    for i in 0..primal.total_payoff.len() {
        let marginal = utility.marginal(primal.total_payoff[i]);
        worst = worst.max((dual.density[i] - marginal).abs());
    }
    Ok(worst)
}
