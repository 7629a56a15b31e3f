//! Grid-backed convex carriers: sampled functions, affine below-threshold
//! extensions of dual functions, convex minorants of families, average
//! functions, and the perspective construction.

use super::{ConvexError, DualFunction, RealFunction};

/// Declared shape of a [`GridFunction`], verified at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Chord slopes nondecreasing (second differences ≥ -1e-10).
    Convex,
    /// Chord slopes nonincreasing.
    Concave,
    /// No shape constraint (used for derived quantities like averages).
    Unrestricted,
}

/// Slack allowed when verifying a declared shape against grid data.
pub const SHAPE_TOL: f64 = 1e-10;

/// Piecewise-linear function on strictly increasing positive abscissae.
#[derive(Debug, Clone)]
pub struct GridFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
    shape: Shape,
}

impl GridFunction {
    /// Validates the grid and the declared shape.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, shape: Shape) -> Result<Self, ConvexError> {
        if xs.len() != ys.len() {
            return Err(ConvexError::InvalidGrid {
                reason: format!("{} abscissae vs {} ordinates", xs.len(), ys.len()),
            });
        }
        if xs.len() < 2 {
            return Err(ConvexError::InvalidGrid {
                reason: "need at least two grid points".to_string(),
            });
        }
        for (i, &x) in xs.iter().enumerate() {
            if !x.is_finite() || x <= 0.0 {
                return Err(ConvexError::InvalidGrid {
                    reason: format!("abscissa {x} at index {i} not positive and finite"),
                });
            }
            if i > 0 && x <= xs[i - 1] {
                return Err(ConvexError::InvalidGrid {
                    reason: format!("abscissae not strictly increasing at index {i}"),
                });
            }
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(ConvexError::InvalidGrid {
                reason: "non-finite ordinate".to_string(),
            });
        }
        let gf = Self { xs, ys, shape };
        gf.verify_shape()?;
        Ok(gf)
    }

    /// Samples an arbitrary function on the given grid.
    pub fn sample(
        f: &dyn RealFunction,
        grid: &[f64],
        shape: Shape,
    ) -> Result<Self, ConvexError> {
        let ys = grid.iter().map(|&x| f.value_at(x)).collect();
        Self::new(grid.to_vec(), ys, shape)
    }

    fn verify_shape(&self) -> Result<(), ConvexError> {
        if self.shape == Shape::Unrestricted {
            return Ok(());
        }
        let mut prev_slope = f64::NAN;
        for i in 0..self.xs.len() - 1 {
            let slope = (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i]);
            if i > 0 {
                let second_difference = slope - prev_slope;
                let violated = match self.shape {
                    Shape::Convex => second_difference < -SHAPE_TOL,
                    Shape::Concave => second_difference > SHAPE_TOL,
                    Shape::Unrestricted => false,
                };
                if violated {
                    return Err(ConvexError::GridShapeViolation {
                        shape: self.shape,
                        index: i,
                    });
                }
            }
            prev_slope = slope;
        }
        Ok(())
    }

    /// Grid abscissae.
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Grid ordinates.
    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Declared (verified) shape.
    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Linear interpolation; clamps to the end ordinates outside the range.
    pub fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|p| p.partial_cmp(&x).expect("finite abscissae"))
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }
}

impl RealFunction for GridFunction {
    fn value_at(&self, x: f64) -> f64 {
        self.value(x)
    }

    fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().expect("non-empty grid"))
    }
}

// ---------------------------------------------------------------------------
// Epsilon extension
// ---------------------------------------------------------------------------

/// Dual function extended below a threshold `ε` by its tangent at `ε`.
///
/// `V^ε(y) = V(y)` for `y ≥ ε`, and `V^ε(y) = V(ε) + V'(ε)·(y - ε)` below —
/// affine, so the extension is finite at `y = 0`, continuously differentiable
/// at `ε`, and still convex and decreasing.  Tangent-line domination gives
/// `V^ε ≤ V` everywhere and `V^ε ↑ V` pointwise as `ε ↓ 0`.
#[derive(Debug, Clone)]
pub struct EpsilonExtension {
    dual: DualFunction,
    eps: f64,
    value_at_eps: f64,
    slope_at_eps: f64,
}

impl EpsilonExtension {
    /// Builds the extension; requires `ε ∈ (0, 1)`.
    pub fn new(dual: &DualFunction, eps: f64) -> Self {
        assert!(
            eps > 0.0 && eps < 1.0,
            "extension threshold must lie in (0, 1), got {eps}"
        );
        Self {
            dual: dual.clone(),
            eps,
            value_at_eps: dual.value(eps),
            slope_at_eps: dual.derivative(eps),
        }
    }

    /// The threshold `ε`.
    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    /// Extension value; defined for every real `y` (affine below `ε`).
    pub fn value(&self, y: f64) -> f64 {
        if y >= self.eps {
            self.dual.value(y)
        } else {
            self.value_at_eps + self.slope_at_eps * (y - self.eps)
        }
    }

    /// First derivative; continuous across `ε` by construction.
    pub fn derivative(&self, y: f64) -> f64 {
        if y >= self.eps {
            self.dual.derivative(y)
        } else {
            self.slope_at_eps
        }
    }

    /// Second derivative (zero on the affine part, jump at `ε`).
    pub fn second_derivative(&self, y: f64) -> f64 {
        if y >= self.eps {
            self.dual.second_derivative(y)
        } else {
            0.0
        }
    }

    /// The underlying unextended dual function.
    pub fn underlying(&self) -> &DualFunction {
        &self.dual
    }

    /// Samples the extension onto a grid as a convex [`GridFunction`].
    pub fn to_grid(&self, grid: &[f64]) -> Result<GridFunction, ConvexError> {
        let ys = grid.iter().map(|&y| self.value(y)).collect();
        GridFunction::new(grid.to_vec(), ys, Shape::Convex)
    }
}

impl RealFunction for EpsilonExtension {
    fn value_at(&self, x: f64) -> f64 {
        self.value(x)
    }

    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Perspective value `z·V^ε(y/z)`, jointly convex and positively homogeneous
/// on `z, y > 0`.
pub fn perspective(extension: &EpsilonExtension, z: f64, y: f64) -> f64 {
    assert!(z > 0.0 && y > 0.0, "perspective needs z, y > 0, got ({z}, {y})");
    z * extension.value(y / z)
}

// ---------------------------------------------------------------------------
// Convex minorant and average function
// ---------------------------------------------------------------------------

/// Greatest convex function dominated by every member of the family,
/// computed on a grid: pointwise infimum followed by the convex lower hull.
pub fn convex_minorant(
    family: &[&DualFunction],
    grid: &[f64],
) -> Result<GridFunction, ConvexError> {
    if family.is_empty() {
        return Err(ConvexError::InvalidGrid {
            reason: "minorant of an empty family".to_string(),
        });
    }
    let pointwise_inf: Vec<f64> = grid
        .iter()
        .map(|&x| {
            family
                .iter()
                .map(|v| v.value(x))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    // Monotone-chain lower hull of the points (grid is x-sorted already).
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(grid.len());
    for (&x, &y) in grid.iter().zip(&pointwise_inf) {
        while hull.len() >= 2 {
            let (x0, y0) = hull[hull.len() - 2];
            let (x1, y1) = hull[hull.len() - 1];
            // Keep (x1, y1) only if it lies strictly below chord (x0,y0)-(x,y).
            let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((x, y));
    }

    // Evaluate the hull back on the full grid (single sweep, both sorted).
    let mut ys = Vec::with_capacity(grid.len());
    let mut seg = 0;
    for &x in grid {
        while seg + 1 < hull.len() && hull[seg + 1].0 < x {
            seg += 1;
        }
        if seg + 1 == hull.len() {
            ys.push(hull[seg].1);
        } else {
            let (x0, y0) = hull[seg];
            let (x1, y1) = hull[seg + 1];
            ys.push(y0 + (y1 - y0) * (x - x0) / (x1 - x0));
        }
    }
    GridFunction::new(grid.to_vec(), ys, Shape::Convex)
}

/// Average function `V̄(x) = Ṽ(x)/x` together with its summary diagnostics.
#[derive(Debug, Clone)]
pub struct AverageFunction {
    /// `Ṽ(x)/x` sampled on the same grid.
    pub grid: GridFunction,
    /// Interpolated value at `x = 1` (`NaN` if 1 lies outside the grid range).
    pub value_at_one: f64,
    /// Value at the largest grid point — the reported tail estimate.
    pub tail_value: f64,
    /// Whether the average is nondecreasing across grid nodes with `x ≥ 1`.
    pub increasing_on_tail: bool,
}

/// Divides a convex minorant by its argument and reports the monotonicity
/// and tail diagnostics of the resulting average.
pub fn average_function(minorant: &GridFunction) -> Result<AverageFunction, ConvexError> {
    let xs = minorant.xs().to_vec();
    let ys: Vec<f64> = minorant
        .xs()
        .iter()
        .zip(minorant.ys())
        .map(|(&x, &y)| y / x)
        .collect();

    let mut increasing = true;
    for i in 0..xs.len() - 1 {
        if xs[i] >= 1.0 - 1e-12 && ys[i + 1] < ys[i] - 1e-12 {
            increasing = false;
            break;
        }
    }
    let tail_value = *ys.last().expect("non-empty grid");
    let grid = GridFunction::new(xs, ys, Shape::Unrestricted)?;
    let (lo, hi) = grid.domain();
    let value_at_one = if (lo..=hi).contains(&1.0) {
        grid.value(1.0)
    } else {
        f64::NAN
    };
    Ok(AverageFunction {
        grid,
        value_at_one,
        tail_value,
        increasing_on_tail: increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{log_spaced, UtilityFunction};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_dual() -> DualFunction {
        UtilityFunction::log().conjugate().unwrap()
    }

    #[test]
    fn grid_function_interpolates_and_validates_shape() {
        let gf = GridFunction::new(
            vec![1.0, 2.0, 4.0],
            vec![1.0, 4.0, 16.0],
            Shape::Convex,
        )
        .unwrap();
        assert_abs_diff_eq!(gf.value(3.0), 10.0, epsilon = 1e-14);
        assert_abs_diff_eq!(gf.value(2.0), 4.0, epsilon = 1e-14);
        // Clamped outside the range.
        assert_abs_diff_eq!(gf.value(0.5), 1.0, epsilon = 1e-14);

        let bad = GridFunction::new(
            vec![1.0, 2.0, 4.0],
            vec![1.0, 4.0, 16.0],
            Shape::Concave,
        );
        assert!(matches!(bad, Err(ConvexError::GridShapeViolation { .. })));

        let unordered = GridFunction::new(vec![1.0, 1.0], vec![0.0, 0.0], Shape::Unrestricted);
        assert!(matches!(unordered, Err(ConvexError::InvalidGrid { .. })));
        let nonpositive =
            GridFunction::new(vec![0.0, 1.0], vec![0.0, 0.0], Shape::Unrestricted);
        assert!(matches!(nonpositive, Err(ConvexError::InvalidGrid { .. })));
    }

    #[test]
    fn extension_of_log_dual_at_half_hits_log_two_at_zero() {
        // V(y) = -ln y - 1: V(1/2) = ln 2 - 1, V'(1/2) = -2, so the affine
        // extension reaches V^{1/2}(0) = (ln 2 - 1) + (1/2)·2 = ln 2.
        let ext = EpsilonExtension::new(&log_dual(), 0.5);
        assert_abs_diff_eq!(ext.value(0.0), std::f64::consts::LN_2, epsilon = 1e-12);
        // Exact agreement with V above the threshold.
        for &y in &[0.5, 0.7, 1.0, 3.0] {
            assert_abs_diff_eq!(ext.value(y), -y.ln() - 1.0, epsilon = 1e-15);
        }
        // C¹ matching at the threshold.
        assert_abs_diff_eq!(ext.derivative(0.5), -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ext.derivative(0.49), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn extensions_increase_pointwise_as_threshold_shrinks() {
        // Tangent-line domination: for eps1 > eps2, V^{eps1} <= V^{eps2} <= V
        // below the larger threshold.
        let v = log_dual();
        let coarse = EpsilonExtension::new(&v, 0.5);
        let fine = EpsilonExtension::new(&v, 0.1);
        for &y in &[0.01, 0.05, 0.2, 0.4] {
            assert!(coarse.value(y) <= fine.value(y) + 1e-14);
            assert!(fine.value(y) <= v.value(y.max(1e-12)) + 1e-14);
        }
        // Sampled extension passes the convex shape check.
        let grid = log_spaced(0.01, 10.0, 300);
        let gf = coarse.to_grid(&grid).unwrap();
        assert_eq!(gf.shape(), Shape::Convex);
    }

    #[test]
    fn perspective_is_homogeneous_and_reduces_at_unit_scale() {
        let ext = EpsilonExtension::new(&log_dual(), 0.25);
        for &y in &[0.1, 0.8, 2.0] {
            assert_abs_diff_eq!(perspective(&ext, 1.0, y), ext.value(y), epsilon = 1e-15);
            for &lambda in &[0.5, 2.0, 7.0] {
                assert_abs_diff_eq!(
                    perspective(&ext, lambda * 1.3, lambda * y),
                    lambda * perspective(&ext, 1.3, y),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn perspective_midpoint_convexity_holds_on_random_pairs() {
        // Joint convexity: value at the midpoint of two points of (0,∞)² is
        // at most the average of the endpoint values, slack ≥ -1e-12.
        let ext = EpsilonExtension::new(&log_dual(), 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let z0 = rng.random_range(0.05..5.0);
            let y0 = rng.random_range(0.05..5.0);
            let z1 = rng.random_range(0.05..5.0);
            let y1 = rng.random_range(0.05..5.0);
            let mid = perspective(&ext, 0.5 * (z0 + z1), 0.5 * (y0 + y1));
            let avg = 0.5 * (perspective(&ext, z0, y0) + perspective(&ext, z1, y1));
            assert!(
                mid <= avg + 1e-12,
                "midpoint {mid} exceeds average {avg} at ({z0},{y0})-({z1},{y1})"
            );
        }
    }

    #[test]
    fn minorant_of_singleton_family_reproduces_member() {
        let v = log_dual();
        let grid = log_spaced(0.1, 10.0, 120);
        let m = convex_minorant(&[&v], &grid).unwrap();
        for (&x, &y) in grid.iter().zip(m.ys()) {
            assert_abs_diff_eq!(y, v.value(x), epsilon = 1e-12);
        }
        // Duplicated member changes nothing.
        let m2 = convex_minorant(&[&v, &v], &grid).unwrap();
        assert_eq!(m.ys(), m2.ys());
    }

    #[test]
    fn minorant_is_sandwiched_between_minus_identity_and_members() {
        let v1 = log_dual();
        let v2 = UtilityFunction::power(0.5).conjugate().unwrap();
        let grid = log_spaced(0.05, 20.0, 400);
        let m = convex_minorant(&[&v1, &v2], &grid).unwrap();
        for (&x, &y) in grid.iter().zip(m.ys()) {
            assert!(y <= v1.value(x) + 1e-12);
            assert!(y <= v2.value(x) + 1e-12);
            assert!(y >= -x - 1e-12, "minorant dips below -x at {x}");
        }
    }

    #[test]
    fn minorants_of_rising_exponent_family_converge_uniformly() {
        // Conjugates of power utilities with α_n ↑ 1/2 approach the α = 1/2
        // conjugate monotonically from below on [0.5, 2], uniformly to 1e-4.
        let alpha = 0.5;
        let target = UtilityFunction::power(alpha).conjugate().unwrap();
        let grid = log_spaced(0.5, 2.0, 200);
        let target_vals: Vec<f64> = grid.iter().map(|&y| target.value(y)).collect();

        let mut previous_gap = f64::INFINITY;
        for n in [10_u32, 100, 10_000] {
            let a_n = alpha * (1.0 - 1.0 / n as f64);
            let member = UtilityFunction::power(a_n).conjugate().unwrap();
            let m = convex_minorant(&[&member], &grid).unwrap();
            let gap = m
                .ys()
                .iter()
                .zip(&target_vals)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(gap < previous_gap + 1e-12, "gap not shrinking at n={n}");
            previous_gap = gap;
        }
        assert!(previous_gap < 1e-4, "final sup-gap {previous_gap}");
    }

    #[test]
    fn average_of_log_dual_matches_arithmetic() {
        // V̄(x) = (-ln x - 1)/x: V̄(1) = -1 and V̄(e) = -2/e.
        let v = log_dual();
        let mut grid = log_spaced(0.5, 1000.0, 2000);
        grid.push(1.0);
        grid.push(std::f64::consts::E);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let m = convex_minorant(&[&v], &grid).unwrap();
        let avg = average_function(&m).unwrap();
        assert_abs_diff_eq!(avg.value_at_one, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            avg.grid.value(std::f64::consts::E),
            -2.0 / std::f64::consts::E,
            epsilon = 1e-9
        );
        assert!(avg.increasing_on_tail, "average must increase on [1, ∞)");
        // Tail estimate: V̄ approaches zero from below.
        assert!(avg.tail_value < 0.0 && avg.tail_value > -0.01);
    }

    #[test]
    fn average_sup_distance_shrinks_along_rising_exponent_family() {
        let alpha = 0.5;
        let grid = log_spaced(1.0, 1000.0, 1500);
        let target = UtilityFunction::power(alpha).conjugate().unwrap();
        let target_avg =
            average_function(&convex_minorant(&[&target], &grid).unwrap()).unwrap();

        let mut previous = f64::INFINITY;
        for n in [4_u32, 16, 64, 256] {
            let member = UtilityFunction::power(alpha * (1.0 - 1.0 / n as f64))
                .conjugate()
                .unwrap();
            let avg = average_function(&convex_minorant(&[&member], &grid).unwrap()).unwrap();
            let sup = avg
                .grid
                .ys()
                .iter()
                .zip(target_avg.grid.ys())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(sup < previous + 1e-15, "sup distance not decreasing at n={n}");
            previous = sup;
        }
    }
}
