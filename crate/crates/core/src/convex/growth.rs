//! Growth diagnostics for utility families: asymptotic-elasticity estimates
//! with a uniform family verdict, and fitted power-growth envelopes with
//! their dual counterparts.

use nalgebra::{DMatrix, DVector};

use super::{log_spaced, ConvexError, UtilityFamily, UtilityFunction};
use crate::numerics::simplex::{solve_standard_form, LpOutcome};

/// Right end of the geometric probe grid used by the growth diagnostics.
pub const GROWTH_GRID_END: f64 = 1e6;

/// A family passes the uniform-elasticity test only if its supremum stays
/// below one by at least this margin.
pub const ELASTICITY_PASS_MARGIN: f64 = 1e-9;

/// Estimated supremum of the elasticity ratio `x·U'(x)/U(x)`.
#[derive(Debug, Clone, Copy)]
pub struct ElasticityEstimate {
    /// Grid supremum of the ratio.
    pub sup: f64,
    /// Grid point attaining the supremum.
    pub argmax: f64,
}

/// Supremum of `x·U'(x)/U(x)` over a geometric grid from `x0` to 10⁶.
///
/// The ratio is the local power exponent of `U`; the diagnostic requires
/// `U > 0` on the probe range and reports [`ConvexError::NotApplicable`]
/// otherwise.
pub fn asymptotic_elasticity(
    u: &UtilityFunction,
    x0: f64,
) -> Result<ElasticityEstimate, ConvexError> {
    assert!(x0 > 0.0, "probe start must be positive, got {x0}");
    let hi = if x0 * 10.0 >= GROWTH_GRID_END {
        x0 * 100.0
    } else {
        GROWTH_GRID_END
    };
    let grid = log_spaced(x0, hi, 600);
    let mut sup = f64::NEG_INFINITY;
    let mut argmax = x0;
    for &x in &grid {
        let value = u.value(x);
        if value <= 0.0 {
            return Err(ConvexError::NotApplicable { x0 });
        }
        let ratio = x * u.marginal(x) / value;
        if ratio > sup {
            sup = ratio;
            argmax = x;
        }
    }
    Ok(ElasticityEstimate { sup, argmax })
}

/// Family-level uniform-elasticity verdict.
#[derive(Debug, Clone, Copy)]
pub struct ElasticityVerdict {
    /// Whether some `δ < 1` dominates every member's elasticity on the range.
    pub passes: bool,
    /// The smallest such `δ` found (the family supremum of the ratio).
    pub delta: f64,
    /// Index of the member attaining the supremum.
    pub worst_member: usize,
}

/// Uniform verdict across a family: the elasticity supremum of every member
/// from `x0` onward must sit strictly below one.
pub fn uniform_elasticity_verdict(
    members: &[UtilityFunction],
    x0: f64,
) -> Result<ElasticityVerdict, ConvexError> {
    assert!(!members.is_empty(), "empty utility family");
    let mut delta = f64::NEG_INFINITY;
    let mut worst = 0;
    for (i, u) in members.iter().enumerate() {
        let est = asymptotic_elasticity(u, x0)?;
        if est.sup > delta {
            delta = est.sup;
            worst = i;
        }
    }
    Ok(ElasticityVerdict {
        passes: delta <= 1.0 - ELASTICITY_PASS_MARGIN,
        delta,
        worst_member: worst,
    })
}

// ---------------------------------------------------------------------------
// Power growth envelopes
// ---------------------------------------------------------------------------

/// Power envelope `U_n(x) ≤ c·x^α + d` for a whole family, with the induced
/// dual envelope `V_n(y) ≤ C·y^(-α/(1-α)) + D`.
#[derive(Debug, Clone, Copy)]
pub struct PowerGrowthBound {
    /// Primal envelope coefficient.
    pub c: f64,
    /// Primal envelope offset.
    pub d: f64,
    /// Envelope exponent in `(0, 1)`.
    pub alpha: f64,
    /// Dual envelope coefficient `(cα)^(1/(1-α))·(1-α)/α`.
    pub dual_c: f64,
    /// Dual envelope offset (equals `d`, bumped if grid verification asks).
    pub dual_d: f64,
    /// Smallest primal slack `c·x^α + d - U_n(x)` on the verification grid.
    pub primal_slack: f64,
    /// Smallest dual slack on the verification grid.
    pub dual_slack: f64,
}

/// Exponent above which no power envelope with exponent below one is fitted.
const MAX_ENVELOPE_EXPONENT: f64 = 0.995;

/// Per-member candidate exponent: the family tag for closed forms, a tail
/// log-log fit for tabulated members.
fn member_exponent(u: &UtilityFunction) -> Result<f64, ConvexError> {
    match u.family() {
        UtilityFamily::Power { alpha } => Ok(*alpha),
        UtilityFamily::Log => Ok(0.01),
        UtilityFamily::Tabulated => {
            // Asymptotic growth rate of U, read off as log-log slopes over
            // the tail decades (levels like ln U / ln x would overestimate
            // bounded utilities whose cap exceeds one).
            let probes = [1e3, 1e4, 1e5, GROWTH_GRID_END];
            let mut estimate: f64 = 0.0;
            for pair in probes.windows(2) {
                let (u0, u1) = (u.value(pair[0]), u.value(pair[1]));
                if u0 > 1.0 && u1 > 1.0 {
                    estimate =
                        estimate.max((u1.ln() - u0.ln()) / (pair[1].ln() - pair[0].ln()));
                }
            }
            Ok((estimate + 0.005).max(0.01))
        }
    }
}

/// Fits the smallest grid envelope `(c, d)` for a fixed exponent by linear
/// programming: minimize the envelope at the reference points `x = 1` and
/// `x = 10⁶` subject to domination of the family's pointwise maximum.
fn fit_envelope(
    members: &[UtilityFunction],
    alpha: f64,
    grid: &[f64],
) -> Result<(f64, f64), ConvexError> {
    let m = grid.len();
    // Variables: c, d⁺, d⁻, then one surplus per grid constraint:
    //   c·x^α + d⁺ - d⁻ - s_i = max_n U_n(x_i).
    let mut a = DMatrix::zeros(m, 3 + m);
    let mut b = DVector::zeros(m);
    for (i, &x) in grid.iter().enumerate() {
        a[(i, 0)] = x.powf(alpha);
        a[(i, 1)] = 1.0;
        a[(i, 2)] = -1.0;
        a[(i, 3 + i)] = -1.0;
        b[i] = members
            .iter()
            .map(|u| u.value(x))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let t_ref = GROWTH_GRID_END.powf(alpha) + 1.0;
    let mut objective = DVector::zeros(3 + m);
    objective[0] = -t_ref;
    objective[1] = -2.0;
    objective[2] = 2.0;
    match solve_standard_form(&a, &b, &objective) {
        LpOutcome::Optimal { x, .. } => Ok((x[0], x[1] - x[2])),
        LpOutcome::Infeasible | LpOutcome::Unbounded => Err(ConvexError::NoPowerBound {
            reason: "envelope fit infeasible on the probe grid".to_string(),
        }),
    }
}

/// Fits a family-wide power envelope and its dual counterpart.
///
/// The exponent is the largest per-member candidate; the coefficients are the
/// smallest grid-fitted pair, re-verified (and the offset bumped if needed)
/// on a finer, wider grid; the dual envelope follows by conjugating the
/// primal envelope in closed form and is verified on a dual grid.
pub fn power_growth_bound(
    members: &[UtilityFunction],
) -> Result<PowerGrowthBound, ConvexError> {
    assert!(!members.is_empty(), "empty utility family");
    let mut alpha: f64 = 0.0;
    for u in members {
        alpha = alpha.max(member_exponent(u)?);
    }
    if alpha >= MAX_ENVELOPE_EXPONENT {
        return Err(ConvexError::NoPowerBound {
            reason: format!("family growth exponent estimate {alpha} is too close to one"),
        });
    }

    let fit_grid = log_spaced(1e-3, GROWTH_GRID_END, 100);
    let (c, mut d) = fit_envelope(members, alpha, &fit_grid)?;

    // Verify on a wider and finer grid; absorb any gap into the offset.
    let verify_grid = log_spaced(1e-6, GROWTH_GRID_END, 1200);
    let mut primal_slack = f64::INFINITY;
    for u in members {
        for &x in &verify_grid {
            primal_slack = primal_slack.min(c * x.powf(alpha) + d - u.value(x));
        }
    }
    if primal_slack < 0.0 {
        d += -primal_slack + 1e-12;
        primal_slack = 1e-12;
    }

    // Conjugating x ↦ c·x^α + d gives C·y^(-α/(1-α)) + d with
    // C = c·(1-α)·(cα)^(α/(1-α)); domination of U_n transfers to V_n.
    let dual_c = c * (1.0 - alpha) * (c * alpha).powf(alpha / (1.0 - alpha));
    let mut dual_d = d;
    let dual_exponent = -alpha / (1.0 - alpha);
    let mut dual_slack = f64::INFINITY;
    let dual_grid = log_spaced(1e-3, 1.0, 50);
    for u in members {
        let v = u.conjugate()?;
        for &y in &dual_grid {
            dual_slack = dual_slack.min(dual_c * y.powf(dual_exponent) + dual_d - v.value(y));
        }
    }
    if dual_slack < 0.0 {
        dual_d += -dual_slack + 1e-12;
        dual_slack = 1e-12;
    }

    Ok(PowerGrowthBound {
        c,
        d,
        alpha,
        dual_c,
        dual_d,
        primal_slack,
        dual_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::TabulatedConcave;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Raw power utility `x^α/α`, for which `x·U'(x)/U(x) = α` identically.
    fn raw_power(alpha: f64) -> UtilityFunction {
        UtilityFunction::power(alpha).affine(1.0, 1.0 / alpha)
    }

    #[test]
    fn power_elasticity_is_its_exponent() {
        for alpha in [0.25, 0.5, 0.75] {
            let est = asymptotic_elasticity(&raw_power(alpha), 2.0).unwrap();
            assert_relative_eq!(est.sup, alpha, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_elasticity_fails_at_e_and_passes_at_e_squared() {
        // x·U'(x)/U(x) = 1/ln x, so the grid supremum sits at the left end:
        // value 1 at x0 = e (no δ < 1 exists) and 1/2 at x0 = e².
        let u = UtilityFunction::log();
        let at_e = asymptotic_elasticity(&u, std::f64::consts::E).unwrap();
        assert_abs_diff_eq!(at_e.sup, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(at_e.argmax, std::f64::consts::E, epsilon = 1e-12);
        let verdict_e = uniform_elasticity_verdict(&[u.clone()], std::f64::consts::E).unwrap();
        assert!(!verdict_e.passes);

        let x0 = std::f64::consts::E * std::f64::consts::E;
        let verdict_e2 = uniform_elasticity_verdict(&[u], x0).unwrap();
        assert!(verdict_e2.passes);
        assert_abs_diff_eq!(verdict_e2.delta, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn elasticity_requires_positive_utility() {
        // Normalized log is zero at 1 and negative below, so probing from
        // x0 < 1 must report NotApplicable.
        let u = UtilityFunction::log();
        assert!(matches!(
            asymptotic_elasticity(&u, 0.5),
            Err(ConvexError::NotApplicable { .. })
        ));
    }

    #[test]
    fn power_family_has_uniform_elasticity_bound() {
        let members: Vec<_> = [0.2, 0.35, 0.5].iter().map(|&a| raw_power(a)).collect();
        let verdict = uniform_elasticity_verdict(&members, 1.5).unwrap();
        assert!(verdict.passes);
        assert_abs_diff_eq!(verdict.delta, 0.5, epsilon = 1e-12);
        assert_eq!(verdict.worst_member, 2);
    }

    #[test]
    fn single_power_envelope_recovers_closed_form_constants() {
        // For U(x) = (x^α - 1)/α the tight envelope is c = 1/α, d = -1/α,
        // and the dual constants collapse to C = (1-α)/α, D = -1/α.
        for alpha in [0.3, 0.5] {
            let bound = power_growth_bound(&[UtilityFunction::power(alpha)]).unwrap();
            assert_abs_diff_eq!(bound.alpha, alpha, epsilon = 1e-15);
            assert_relative_eq!(bound.c, 1.0 / alpha, max_relative = 1e-7);
            assert_relative_eq!(bound.d, -1.0 / alpha, max_relative = 1e-7);
            assert_relative_eq!(bound.dual_c, (1.0 - alpha) / alpha, max_relative = 1e-6);
            assert_relative_eq!(bound.dual_d, -1.0 / alpha, max_relative = 1e-6);
            assert!(bound.primal_slack >= -1e-12);
            assert!(bound.dual_slack >= -1e-12);
        }
    }

    #[test]
    fn log_family_fits_a_small_exponent_envelope() {
        let bound = power_growth_bound(&[UtilityFunction::log()]).unwrap();
        assert_abs_diff_eq!(bound.alpha, 0.01, epsilon = 1e-15);
        assert!(bound.c > 0.0);
        // Spot-check domination well beyond the fitting grid interior.
        for &x in &log_spaced(1e-5, 1e6, 500) {
            assert!(bound.c * x.powf(bound.alpha) + bound.d >= x.ln() - 1e-9);
        }
    }

    #[test]
    fn mixed_family_envelope_dominates_every_member() {
        let members = vec![
            UtilityFunction::log(),
            UtilityFunction::power(0.3),
            UtilityFunction::power(0.5),
        ];
        let bound = power_growth_bound(&members).unwrap();
        assert_abs_diff_eq!(bound.alpha, 0.5, epsilon = 1e-15);
        for u in &members {
            let v = u.conjugate().unwrap();
            for &x in &log_spaced(1e-5, 1e6, 400) {
                assert!(bound.c * x.powf(bound.alpha) + bound.d >= u.value(x) - 1e-9);
            }
            for &y in &log_spaced(1e-3, 1.0, 80) {
                let envelope =
                    bound.dual_c * y.powf(-bound.alpha / (1.0 - bound.alpha)) + bound.dual_d;
                assert!(envelope >= v.value(y) - 1e-9, "dual envelope fails at {y}");
            }
        }
    }

    #[test]
    fn near_linear_growth_reports_no_power_bound() {
        // Samples of x^0.999 produce a tabulated member whose tail exponent
        // estimate exceeds the admissible ceiling.
        let tab = TabulatedConcave::by_sampling(|x| x.powf(0.999), 1e-2, 1e6, 200).unwrap();
        let u = UtilityFunction::tabulated(tab).normalize();
        assert!(matches!(
            power_growth_bound(&[u]),
            Err(ConvexError::NoPowerBound { .. })
        ));
    }

    #[test]
    fn bounded_tabulated_member_gets_a_flat_envelope() {
        let cap = 2.0;
        let tab =
            TabulatedConcave::by_sampling(|x| cap - cap / (1.0 + x), 0.01, 1e4, 300).unwrap();
        let u = UtilityFunction::tabulated(tab);
        let bound = power_growth_bound(&[u.clone()]).unwrap();
        assert!(bound.alpha <= 0.02);
        for &x in &log_spaced(1e-5, 1e6, 300) {
            assert!(bound.c * x.powf(bound.alpha) + bound.d >= u.value(x) - 1e-9);
        }
    }
}
