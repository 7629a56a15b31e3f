//! Arbitrage-free price sets for endowment bundles and the feasibility
//! cones for primal and dual starting points.
//!
//! The set of arbitrage-free prices of a bundle `f` is the image of the
//! equivalent martingale measures under `Q ↦ E^Q[f]`. On a finite market
//! the equivalent measures are exactly the relative interior of the
//! martingale polytope, so the price set is the relative interior of the
//! convex hull of the vertex images — we store the closed hull together
//! with relative-interior membership semantics.

use nalgebra::{DMatrix, DVector};

use super::{EndowmentBundle, MarketError, MartingaleMeasurePolytope};
use crate::numerics::simplex::hull_membership;

/// Margin used when testing strict/interior membership.
pub const BOUNDARY_MARGIN: f64 = 1e-9;

/// Closed convex hull of the vertex price images, with relative-interior
/// membership tests standing in for the (relatively open) price set itself.
#[derive(Debug, Clone)]
pub struct PriceSet {
    /// Price image of every polytope vertex (may contain duplicates of
    /// coordinates; deduplicated points).
    points: Vec<DVector<f64>>,
    dim: usize,
}

impl PriceSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vertex images spanning the closed hull.
    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    fn generator_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::<f64>::zeros(self.dim, self.points.len());
        for (j, p) in self.points.iter().enumerate() {
            g.set_column(j, p);
        }
        g
    }

    /// Membership in the closed hull.
    pub fn contains_closure(&self, p: &[f64]) -> bool {
        let point = DVector::from_column_slice(p);
        hull_membership(&self.generator_matrix(), &point, BOUNDARY_MARGIN).in_hull
    }

    /// Membership in the relative interior — the price set proper.
    pub fn contains(&self, p: &[f64]) -> bool {
        let point = DVector::from_column_slice(p);
        hull_membership(&self.generator_matrix(), &point, BOUNDARY_MARGIN).in_relative_interior
    }

    /// Coordinate-wise bounds of the closed hull (for N = 1 this is the
    /// closed price interval).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in &self.points {
            for j in 0..self.dim {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        (lo, hi)
    }

    /// Affine dimension of the hull (rank of the centered generators).
    pub fn affine_dim(&self) -> usize {
        if self.points.len() <= 1 {
            return 0;
        }
        let base = &self.points[0];
        let mut centered = DMatrix::<f64>::zeros(self.dim, self.points.len() - 1);
        for (j, p) in self.points.iter().skip(1).enumerate() {
            centered.set_column(j, &(p - base));
        }
        centered.rank(1e-9)
    }

    /// True when the hull has nonempty interior in R^N.
    pub fn has_full_dimension(&self) -> bool {
        self.affine_dim() == self.dim
    }
}

/// Image of the martingale polytope under `Q ↦ (E^Q[f^1], …, E^Q[f^N])`,
/// returned as a closed vertex list with open-interior membership semantics.
pub fn arbitrage_free_price_set(
    polytope: &MartingaleMeasurePolytope,
    f: &EndowmentBundle,
) -> Result<PriceSet, MarketError> {
    let n = f.dim();
    if n == 0 {
        return Err(MarketError::EmptyBundle);
    }
    let mut points: Vec<DVector<f64>> = Vec::new();
    for k in 0..polytope.num_vertices() {
        let mut p = DVector::<f64>::zeros(n);
        for j in 0..n {
            p[j] = polytope.vertex_expectation(k, f.payoff(j));
        }
        if !points.iter().any(|q| (q - &p).amax() < 1e-12) {
            points.push(p);
        }
    }
    Ok(PriceSet { points, dim: n })
}

/// (N-TRAD): true iff the price set has nonempty interior in R^N —
/// equivalently, no nonzero linear combination of the `f^j` is replicable.
/// Vacuously true when N = 0.
pub fn check_n_trad(
    polytope: &MartingaleMeasurePolytope,
    f: &EndowmentBundle,
) -> Result<bool, MarketError> {
    if f.dim() == 0 {
        return Ok(true);
    }
    Ok(arbitrage_free_price_set(polytope, f)?.has_full_dimension())
}

/// Superreplication cost of a payoff: max over the polytope (attained at a
/// vertex) of E^Q[payoff]. Always finite on a finite market.
pub fn superreplication_cost(polytope: &MartingaleMeasurePolytope, payoff: &[f64]) -> f64 {
    polytope
        .vertex_expectations(payoff)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The defining margin of the primal feasibility cone at `(x, q)`:
/// `x + min over vertices of ⟨q, E^Q f⟩`. Positive iff `(x, q)` is interior.
pub fn cone_slack_k(
    polytope: &MartingaleMeasurePolytope,
    f: &EndowmentBundle,
    x: f64,
    q: &[f64],
) -> f64 {
    let position = f.position_payoff(q);
    let min_price = polytope
        .vertex_expectations(&position)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    x + min_price
}

/// Membership in the open cone of feasible primal starting points: true iff
/// the initial capital `x` strictly superreplicates the worst-case value of
/// the endowment position `q`.
pub fn membership_k(
    polytope: &MartingaleMeasurePolytope,
    f: &EndowmentBundle,
    x: f64,
    q: &[f64],
) -> bool {
    cone_slack_k(polytope, f, x, q) > 0.0
}

/// Membership in the dual cone's relative interior: `y > 0` and `r/y` an
/// interior arbitrage-free price for the bundle. For N = 0 this degenerates
/// to `y > 0`.
pub fn membership_l(
    polytope: &MartingaleMeasurePolytope,
    f: &EndowmentBundle,
    y: f64,
    r: &[f64],
) -> Result<bool, MarketError> {
    assert_eq!(r.len(), f.dim(), "dual position dimension mismatch");
    if !(y > 0.0) {
        return Ok(false);
    }
    if f.dim() == 0 {
        return Ok(true);
    }
    let prices = arbitrage_free_price_set(polytope, f)?;
    let scaled: Vec<f64> = r.iter().map(|ri| ri / y).collect();
    Ok(prices.contains(&scaled))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use crate::market::EndowmentBundle;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn trinomial_setup() -> (MartingaleMeasurePolytope, EndowmentBundle) {
        let market = trinomial();
        let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
        let f = trinomial_call(&market);
        (polytope, f)
    }

    #[test]
    fn call_price_interval_is_zero_to_one_third() {
        let (polytope, f) = trinomial_setup();
        let prices = arbitrage_free_price_set(&polytope, &f).unwrap();
        let (lo, hi) = prices.bounding_box();
        assert_abs_diff_eq!(lo[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi[0], 1.0 / 3.0, epsilon = 1e-12);
        // open interval semantics
        assert!(prices.contains(&[0.2]));
        assert!(!prices.contains(&[0.0]));
        assert!(!prices.contains(&[1.0 / 3.0]));
        assert!(prices.contains_closure(&[1.0 / 3.0]));
        assert!(!prices.contains_closure(&[0.34]));
    }

    #[test]
    fn replicable_payoff_prices_uniquely() {
        let market = binomial();
        let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
        // f = S_1 itself
        let f = EndowmentBundle::new(&market, vec![vec![2.0, 0.5]]).unwrap();
        let prices = arbitrage_free_price_set(&polytope, &f).unwrap();
        let (lo, hi) = prices.bounding_box();
        assert_abs_diff_eq!(lo[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi[0], 1.0, epsilon = 1e-12);
        assert!(!check_n_trad(&polytope, &f).unwrap());
        // a singleton hull is its own relative interior
        assert!(prices.contains(&[1.0]));
    }

    #[test]
    fn constant_payoff_prices_at_itself() {
        let (polytope, _) = trinomial_setup();
        let market = trinomial();
        let f = EndowmentBundle::new(&market, vec![vec![0.7, 0.7, 0.7]]).unwrap();
        let prices = arbitrage_free_price_set(&polytope, &f).unwrap();
        let (lo, hi) = prices.bounding_box();
        assert_abs_diff_eq!(lo[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(hi[0], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn empty_bundle_rejected_for_prices() {
        let market = trinomial();
        let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
        let f = EndowmentBundle::empty(&market);
        assert!(matches!(
            arbitrage_free_price_set(&polytope, &f),
            Err(MarketError::EmptyBundle)
        ));
        // but N-TRAD is vacuously true
        assert!(check_n_trad(&polytope, &f).unwrap());
    }

    #[test]
    fn n_trad_trinomial_call() {
        let (polytope, f) = trinomial_setup();
        assert!(check_n_trad(&polytope, &f).unwrap());
    }

    #[test]
    fn superreplication_of_call_costs_one_third() {
        let (polytope, f) = trinomial_setup();
        assert_abs_diff_eq!(
            superreplication_cost(&polytope, f.payoff(0)),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn superreplication_trivia() {
        let market = binomial();
        let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
        // constant payoff
        assert_abs_diff_eq!(
            superreplication_cost(&polytope, &[0.3, 0.3]),
            0.3,
            epsilon = 1e-12
        );
        // the asset itself: martingale property gives its spot price
        assert_abs_diff_eq!(
            superreplication_cost(&polytope, &[2.0, 0.5]),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn superreplication_is_sublinear() {
        let (polytope, _) = trinomial_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ca = superreplication_cost(&polytope, &a);
            let cb = superreplication_cost(&polytope, &b);
            let cs = superreplication_cost(&polytope, &sum);
            assert!(cs <= ca + cb + 1e-12);
            let lambda = rng.random_range(0.0..3.0);
            let scaled: Vec<f64> = a.iter().map(|x| lambda * x).collect();
            assert_abs_diff_eq!(
                superreplication_cost(&polytope, &scaled),
                lambda * ca,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn membership_k_examples() {
        let (polytope, f) = trinomial_setup();
        // (x, 0) with x > 0 is interior
        assert!(membership_k(&polytope, &f, 1.0, &[0.0]));
        assert!(membership_k(&polytope, &f, 1e-6, &[0.0]));
        // short one call from 0.1 capital: 0.1 − 1/3 < 0
        assert!(!membership_k(&polytope, &f, 0.1, &[-1.0]));
        assert_abs_diff_eq!(
            cone_slack_k(&polytope, &f, 0.1, &[-1.0]),
            0.1 - 1.0 / 3.0,
            epsilon = 1e-12
        );
        // the origin sits on the boundary
        assert!(!membership_k(&polytope, &f, 0.0, &[0.0]));
    }

    #[test]
    fn membership_l_examples() {
        let (polytope, f) = trinomial_setup();
        assert!(membership_l(&polytope, &f, 1.0, &[0.2]).unwrap());
        assert!(!membership_l(&polytope, &f, 1.0, &[1.0 / 3.0]).unwrap());
        assert!(!membership_l(&polytope, &f, 0.0, &[0.1]).unwrap());
        assert!(!membership_l(&polytope, &f, -1.0, &[0.1]).unwrap());
        // scale invariance of the cone: (2, 0.4) ≡ (1, 0.2)
        assert!(membership_l(&polytope, &f, 2.0, &[0.4]).unwrap());
    }

    #[test]
    fn membership_l_degenerate_bundle() {
        let market = binomial();
        let polytope = MartingaleMeasurePolytope::compute(&market).unwrap();
        let f = EndowmentBundle::empty(&market);
        assert!(membership_l(&polytope, &f, 1.0, &[]).unwrap());
        assert!(!membership_l(&polytope, &f, 0.0, &[]).unwrap());
    }

    #[test]
    fn cone_duality_on_random_samples() {
        // for (x,q) in K and (y,r) in L: xy + ⟨q,r⟩ > 0
        let (polytope, f) = trinomial_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tested = 0;
        while tested < 200 {
            let x = rng.random_range(-1.0..3.0);
            let q = [rng.random_range(-3.0..3.0)];
            let y = rng.random_range(0.01..3.0);
            let r = [rng.random_range(-0.2..0.5)];
            if membership_k(&polytope, &f, x, &q)
                && membership_l(&polytope, &f, y, &r).unwrap()
            {
                let pairing = x * y + q[0] * r[0];
                assert!(
                    pairing > 0.0,
                    "cone duality violated: x={x} q={q:?} y={y} r={r:?} gives {pairing}"
                );
                tested += 1;
            }
        }
    }
}
