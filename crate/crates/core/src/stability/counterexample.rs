//! The instability experiment: on a refining family of one-period lattice
//! markets, probability spikes of vanishing total-variation size placed on
//! the extreme price atom displace the optimal wealth by an amount that does
//! *not* vanish along a diagonal scheme coupling the spike index to the
//! refinement level — while on any fixed level the displacement dies out as
//! the spike fades, exactly as the finite-market convergence theory demands.
//!
//! The mechanism: the diagonal keeps pushing the spike onto atoms of ever
//! more extreme price, where the dual function's positive part along the
//! optimal dual sequence blows up, so the uniform-integrability hypothesis
//! fails in the limit even though every single level is harmless.

use super::{kyfan_distance, tv_distance, StabilityError};
use crate::convex::UtilityFunction;
use crate::market::{
    build_market, EndowmentBundle, MarketSpec, MartingaleMeasurePolytope, ProbabilityMeasure,
};
use crate::optimizer::solve_primal_with;
use crate::stability::experiment::experiment_ladder;

/// Parameters of the instability experiment.
#[derive(Debug, Clone)]
pub struct CounterexampleSetup {
    /// Exponent of the (unbounded) power utility.
    pub alpha: f64,
    /// Initial capital.
    pub capital: f64,
    /// Spike size at index `n` is `spike_scale / n`.
    pub spike_scale: f64,
    /// Number of extreme-price atoms carrying the spike.
    pub spike_width: usize,
    /// Level used for the fixed-level convergence run.
    pub fixed_level: usize,
    /// Largest spike index of the fixed-level run.
    pub fixed_n_max: usize,
    /// Levels of the diagonal run.
    pub diagonal_levels: Vec<usize>,
    /// Spike index on the diagonal is `level + diagonal_offset`.
    pub diagonal_offset: usize,
}

impl Default for CounterexampleSetup {
    fn default() -> Self {
        CounterexampleSetup {
            alpha: 0.75,
            capital: 1.0,
            spike_scale: 0.1,
            spike_width: 1,
            fixed_level: 6,
            fixed_n_max: 10_000,
            diagonal_levels: (3..=10).collect(),
            diagonal_offset: 1,
        }
    }
}

/// One solved instance of the experiment.
#[derive(Debug, Clone)]
pub struct CounterexampleRow {
    /// Lattice refinement level.
    pub level: usize,
    /// Spike index.
    pub n: usize,
    /// Total variation distance of the spiked measure to the reference.
    pub tv: f64,
    /// Ky–Fan distance of the spiked optimal wealth to the unspiked one,
    /// under the reference measure.
    pub kyfan: f64,
}

/// Output of [`counterexample_experiment`].
#[derive(Debug, Clone)]
pub struct CounterexampleReport {
    /// Fixed-level run: spike index sweeps a ladder, level constant.
    pub fixed_level: Vec<CounterexampleRow>,
    /// Diagonal run: one row per level, spike index coupled to it.
    pub diagonal: Vec<CounterexampleRow>,
}

/// One-period lattice market at refinement `level`: `level + 1` terminal
/// atoms with binomial weights `C(level, k)·2^(−level)` and prices
/// `exp((2k − level)/√level − 1/2)` — the discrete skeleton of a unit-drift-
/// free exponential random walk at unit horizon, normalized so the extreme
/// atoms straddle the initial price 1 at every level.
pub fn lattice_market(level: usize) -> MarketSpec {
    assert!(level >= 1, "lattice needs at least one step");
    let m = level as f64;
    let mut atoms = Vec::with_capacity(level + 1);
    let mut weight = 0.5f64.powi(level as i32);
    let mut tree = vec![None];
    let mut prices = vec![vec![1.0]];
    for k in 0..=level {
        atoms.push(weight);
        // C(level, k+1) = C(level, k)·(level − k)/(k + 1).
        weight *= (m - k as f64) / (k as f64 + 1.0);
        tree.push(Some(0));
        prices.push(vec![((2.0 * k as f64 - m) / m.sqrt() - 0.5).exp()]);
    }
    MarketSpec {
        atoms,
        tree,
        prices,
        endowments: vec![],
    }
}

/// Density of the spiked measure: `(1 − ε)` everywhere plus the mass `ε`
/// re-distributed onto the `width` highest-price atoms proportionally to
/// their reference weights.  Integrates to one; total variation distance to
/// the reference is `ε·(1 − P(spike))`.
pub fn spike_density(weights: &[f64], prices: &[f64], epsilon: f64, width: usize) -> Vec<f64> {
    assert_eq!(weights.len(), prices.len(), "atom count mismatch");
    assert!(
        (0.0..1.0).contains(&epsilon),
        "spike size must lie in [0, 1), got {epsilon}"
    );
    assert!(
        width >= 1 && width <= weights.len(),
        "spike width {width} out of range"
    );
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| prices[b].partial_cmp(&prices[a]).expect("finite prices"));
    let spiked = &order[..width];
    let spike_mass: f64 = spiked.iter().map(|&i| weights[i]).sum();
    let mut density = vec![1.0 - epsilon; weights.len()];
    for &i in spiked {
        density[i] += epsilon / spike_mass;
    }
    density
}

/// Runs both parts of the experiment.  Every instance solves the expected
/// power-utility maximization from `setup.capital` with no endowment, once
/// under the reference measure and once under the spiked one, and records
/// the wealth displacement against the spike's total-variation size.
pub fn counterexample_experiment(
    setup: &CounterexampleSetup,
) -> Result<CounterexampleReport, StabilityError> {
    let utility = UtilityFunction::power(setup.alpha);

    let fixed_ladder = experiment_ladder(setup.fixed_n_max);
    let fixed_level = run_level(
        setup,
        &utility,
        setup.fixed_level,
        &fixed_ladder
            .iter()
            .map(|&n| (n, setup.spike_scale / n as f64))
            .collect::<Vec<_>>(),
    )?;

    let mut diagonal = Vec::with_capacity(setup.diagonal_levels.len());
    for &level in &setup.diagonal_levels {
        let n = level + setup.diagonal_offset;
        let rows = run_level(setup, &utility, level, &[(n, setup.spike_scale / n as f64)])?;
        diagonal.extend(rows);
    }

    Ok(CounterexampleReport {
        fixed_level,
        diagonal,
    })
}

/// Solves one lattice level under a list of `(index, spike size)` pairs.
fn run_level(
    setup: &CounterexampleSetup,
    utility: &UtilityFunction,
    level: usize,
    spikes: &[(usize, f64)],
) -> Result<Vec<CounterexampleRow>, StabilityError> {
    let spec = lattice_market(level);
    let terminal_prices: Vec<f64> = spec.prices[1..].iter().map(|p| p[0]).collect();
    let market = build_market(&spec)?;
    let polytope = MartingaleMeasurePolytope::compute(&market)?;
    let measure = market.reference_measure();
    let bundle = EndowmentBundle::new(&market, vec![])?;

    let limit = solve_primal_with(&polytope, &measure, utility, &bundle, setup.capital, &[])
        .map_err(|source| StabilityError::SolverFailed { n: 0, source })?;

    let mut rows = Vec::with_capacity(spikes.len());
    for &(n, epsilon) in spikes {
        let density = spike_density(measure.weights(), &terminal_prices, epsilon, setup.spike_width);
        let spiked: ProbabilityMeasure = measure.reweighted(&density)?;
        let solved = solve_primal_with(&polytope, &spiked, utility, &bundle, setup.capital, &[])
            .map_err(|source| StabilityError::SolverFailed { n, source })?;
        rows.push(CounterexampleRow {
            level,
            n,
            tv: tv_distance(&measure, &density),
            kyfan: kyfan_distance(&solved.terminal_wealth, &limit.terminal_wealth, &measure),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lattice_levels_are_valid_markets_with_no_arbitrage() {
        for level in 1..=10 {
            let spec = lattice_market(level);
            assert_eq!(spec.atoms.len(), level + 1);
            assert_abs_diff_eq!(spec.atoms.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            // Binomial symmetry of the weights.
            for k in 0..=level {
                assert_abs_diff_eq!(spec.atoms[k], spec.atoms[level - k], epsilon = 1e-15);
            }
            // Prices strictly increasing and straddling the initial price.
            let prices: Vec<f64> = spec.prices[1..].iter().map(|p| p[0]).collect();
            for w in prices.windows(2) {
                assert!(w[0] < w[1]);
            }
            assert!(prices[0] < 1.0 && *prices.last().unwrap() > 1.0);
            let market = build_market(&spec).unwrap();
            let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
            assert!(!polytope.vertices().is_empty());
        }
    }

    #[test]
    fn lattice_weights_are_binomial() {
        let spec = lattice_market(4);
        let expected = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (a, e) in spec.atoms.iter().zip(expected) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn spike_density_integrates_to_one_with_the_stated_tv() {
        let spec = lattice_market(6);
        let prices: Vec<f64> = spec.prices[1..].iter().map(|p| p[0]).collect();
        let measure = ProbabilityMeasure::new(spec.atoms.clone()).unwrap();
        for &(epsilon, width) in &[(0.1, 1usize), (0.05, 2), (0.3, 3)] {
            let density = spike_density(measure.weights(), &prices, epsilon, width);
            assert!(density.iter().all(|z| *z > 0.0));
            assert_abs_diff_eq!(measure.expectation(&density), 1.0, epsilon = 1e-12);
            // The spiked atoms are the highest-price ones: the last `width`.
            let spike_mass: f64 = measure.weights()[7 - width..].iter().sum();
            for (i, z) in density.iter().enumerate() {
                let expected = if i >= 7 - width {
                    1.0 - epsilon + epsilon / spike_mass
                } else {
                    1.0 - epsilon
                };
                assert_abs_diff_eq!(*z, expected, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(
                tv_distance(&measure, &density),
                epsilon * (1.0 - spike_mass),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_spike_leaves_every_distance_at_zero() {
        let setup = CounterexampleSetup {
            spike_scale: 0.0,
            fixed_n_max: 20,
            diagonal_levels: vec![3, 5],
            ..CounterexampleSetup::default()
        };
        let report = counterexample_experiment(&setup).unwrap();
        for row in report.fixed_level.iter().chain(&report.diagonal) {
            assert_eq!(row.tv, 0.0);
            assert!(row.kyfan < 1e-9, "kyfan {} at n = {}", row.kyfan, row.n);
        }
    }

    #[test]
    fn fixed_level_displacement_vanishes_as_the_spike_fades() {
        let report = counterexample_experiment(&CounterexampleSetup::default()).unwrap();
        let rows = &report.fixed_level;
        let first = rows.first().unwrap();
        let last = rows.last().unwrap();
        assert_eq!(last.n, 10_000);
        assert!(
            last.kyfan < 1e-3,
            "kyfan {} at n = {} has not converged",
            last.kyfan,
            last.n
        );
        assert!(last.kyfan < first.kyfan / 100.0);
        assert!(last.tv < first.tv / 100.0);
    }

    #[test]
    fn diagonal_displacement_persists_while_tv_vanishes() {
        let report = counterexample_experiment(&CounterexampleSetup::default()).unwrap();
        let last = report.diagonal.last().unwrap();
        assert_eq!(last.level, 10);
        assert!(last.tv < 0.01, "tv {} at level {}", last.tv, last.level);
        assert!(
            last.kyfan > 0.05,
            "kyfan {} at level {} has collapsed",
            last.kyfan,
            last.level
        );
    }
}
