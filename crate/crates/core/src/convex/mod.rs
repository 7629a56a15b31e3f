//! Utility and dual-function families with exact conjugation.
//!
//! A utility function is stored as an affine transform `U = a·F + b` of a
//! normalized base `F` (log, power, or a tabulated concave interpolant), so
//! normalization and conjugation are algebraic operations on `(a, b)` rather
//! than numerical ones.  The convention throughout: a *normalized* utility
//! satisfies `U(1) = 0` and `U'(1) = 1`, and its conjugate then satisfies
//! `V(1) = V'(1) = -1`.
//!
//! The conjugate `V(y) = sup_x { U(x) - x·y }` is carried as a [`DualFunction`]
//! that exposes value, first and second derivatives — the curvature is what
//! the equality-constrained Newton solver in the optimizer consumes.

pub mod grid;
pub mod growth;
pub mod variational;

pub use grid::{
    average_function, convex_minorant, perspective, AverageFunction, EpsilonExtension,
    GridFunction, Shape,
};
pub use growth::{
    asymptotic_elasticity, power_growth_bound, uniform_elasticity_verdict, ElasticityEstimate,
    ElasticityVerdict, PowerGrowthBound,
};
pub use variational::{
    check_epi_convergence, check_graphical_convergence, subdifferential, EpiConvergenceReport,
    GraphicalConvergenceReport, Subdifferential,
};

use thiserror::Error;

/// Absolute tolerance for the normalization identities `U(1) = 0`, `U'(1) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Tolerance used by the marginal-decay probes in [`UtilityFunction::validate`].
pub const INADA_PROBE_TOL: f64 = 1e-6;

/// Errors raised by utility/dual-function construction and the variational checks.
#[derive(Debug, Error)]
pub enum ConvexError {
    /// Sample data does not describe a strictly increasing, strictly concave function.
    #[error("samples are not strictly increasing and strictly concave: {reason}")]
    NotConcave { reason: String },
    /// The marginal utility fails to blow up at zero or vanish at infinity.
    #[error("marginal utility violates the required decay at {probe}: U'={marginal}")]
    InadaViolation { probe: f64, marginal: f64 },
    /// The conjugate supremum is infinite for some positive argument.
    #[error("conjugate diverges: {reason}")]
    ConjugateDiverges { reason: String },
    /// A grid function's declared shape is contradicted by its data.
    #[error("grid data violates declared {shape:?} shape near index {index}")]
    GridShapeViolation { shape: Shape, index: usize },
    /// Grid abscissae must be finite, strictly increasing, and non-empty.
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },
    /// One-sided difference quotients would step outside the function's domain.
    #[error("point {point} is too close to the domain boundary for difference quotients")]
    BoundaryPoint { point: f64 },
    /// Subdifferentials along the sequence grow without bound.
    #[error("subdifferentials along the sequence are unbounded (|slope| > {threshold})")]
    UnboundedSubdifferentials { threshold: f64 },
    /// The elasticity diagnostic requires the utility to be positive on the probe range.
    #[error("utility is not positive on [{x0}, ∞), elasticity ratio undefined")]
    NotApplicable { x0: f64 },
    /// No power-growth envelope with exponent below one fits the family.
    #[error("no power growth bound with exponent below one: {reason}")]
    NoPowerBound { reason: String },
}

/// Anything that can be evaluated at a real argument.
///
/// The variational checks (difference-quotient subdifferentials, epigraphical
/// limits) only need point values, so they accept any implementor.
pub trait RealFunction {
    /// Function value at `x`.
    fn value_at(&self, x: f64) -> f64;
    /// Open interval on which `value_at` is defined; default `(0, ∞)`.
    fn domain(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

impl<F: Fn(f64) -> f64> RealFunction for F {
    fn value_at(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Which concave base a utility is built on.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityFamily {
    /// `F(x) = ln x`.
    Log,
    /// `F(x) = (x^α - 1)/α` with `α ∈ (0, 1)`; already normalized at 1.
    Power { alpha: f64 },
    /// Piecewise interpolant through data; see [`TabulatedConcave`].
    Tabulated,
}

// ---------------------------------------------------------------------------
// Tabulated concave interpolant
// ---------------------------------------------------------------------------

/// Strictly concave interpolant built from samples of an increasing function.
///
/// The *marginal* (derivative) is the primary object: secant slopes of the
/// samples are attached to interval midpoints and joined piecewise-linearly,
/// which keeps the marginal strictly decreasing and makes its inverse exact.
/// Beyond the outermost midpoints the marginal is extended by power laws
/// `m(x) = s·(x/μ)^(-β)` whose exponents are read off the end slopes in
/// log-log coordinates, so the interpolant satisfies the same blow-up/decay
/// conditions as the closed-form families.  The function value is recovered
/// by exact integration of this marginal, anchored at the first sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedConcave {
    /// Midpoint abscissae carrying the marginal nodes (strictly increasing).
    nodes: Vec<f64>,
    /// Marginal values at `nodes` (strictly decreasing, positive).
    slopes: Vec<f64>,
    /// Antiderivative values at `nodes`.
    values: Vec<f64>,
    /// Power-law exponent of the marginal below the first node.
    beta_left: f64,
    /// Power-law exponent of the marginal above the last node.
    beta_right: f64,
}

/// Minimum admissible tail exponent for the marginal's power-law extensions.
const MIN_TAIL_EXPONENT: f64 = 1e-6;

impl TabulatedConcave {
    /// Builds the interpolant from samples `(xs[i], us[i])` of an increasing,
    /// strictly concave function at strictly increasing positive abscissae.
    pub fn from_samples(xs: &[f64], us: &[f64]) -> Result<Self, ConvexError> {
        if xs.len() != us.len() {
            return Err(ConvexError::InvalidGrid {
                reason: format!("{} abscissae vs {} ordinates", xs.len(), us.len()),
            });
        }
        if xs.len() < 3 {
            return Err(ConvexError::InvalidGrid {
                reason: format!("need at least 3 samples, got {}", xs.len()),
            });
        }
        for (i, &x) in xs.iter().enumerate() {
            if !x.is_finite() || x <= 0.0 {
                return Err(ConvexError::InvalidGrid {
                    reason: format!("abscissa {x} at index {i} is not positive and finite"),
                });
            }
            if i > 0 && x <= xs[i - 1] {
                return Err(ConvexError::InvalidGrid {
                    reason: format!("abscissae not strictly increasing at index {i}"),
                });
            }
        }
        if us.iter().any(|u| !u.is_finite()) {
            return Err(ConvexError::InvalidGrid {
                reason: "non-finite ordinate".to_string(),
            });
        }

        let mut nodes = Vec::with_capacity(xs.len() - 1);
        let mut slopes = Vec::with_capacity(xs.len() - 1);
        for i in 0..xs.len() - 1 {
            let slope = (us[i + 1] - us[i]) / (xs[i + 1] - xs[i]);
            if slope <= 0.0 {
                return Err(ConvexError::NotConcave {
                    reason: format!("secant slope {slope} on interval {i} is not positive"),
                });
            }
            if let Some(&prev) = slopes.last() {
                if slope >= prev {
                    return Err(ConvexError::NotConcave {
                        reason: format!(
                            "secant slopes not strictly decreasing at interval {i} ({prev} -> {slope})"
                        ),
                    });
                }
            }
            nodes.push(0.5 * (xs[i] + xs[i + 1]));
            slopes.push(slope);
        }

        let k = nodes.len();
        let beta_left =
            -(slopes[1].ln() - slopes[0].ln()) / (nodes[1].ln() - nodes[0].ln());
        let beta_right =
            -(slopes[k - 1].ln() - slopes[k - 2].ln()) / (nodes[k - 1].ln() - nodes[k - 2].ln());
        if beta_left <= MIN_TAIL_EXPONENT || beta_right <= MIN_TAIL_EXPONENT {
            return Err(ConvexError::NotConcave {
                reason: format!(
                    "end slopes give non-decaying tail exponents ({beta_left}, {beta_right})"
                ),
            });
        }

        // Anchor the antiderivative at the first node by a first-order step
        // from the leftmost sample, then integrate the piecewise-linear
        // marginal across the nodes (trapezoid rule is exact here).
        let mut values = vec![0.0; k];
        values[0] = us[0] + slopes[0] * (nodes[0] - xs[0]);
        for i in 1..k {
            values[i] =
                values[i - 1] + 0.5 * (slopes[i - 1] + slopes[i]) * (nodes[i] - nodes[i - 1]);
        }

        Ok(Self {
            nodes,
            slopes,
            values,
            beta_left,
            beta_right,
        })
    }

    /// Builds the interpolant by sampling a closed-form function on a
    /// log-spaced grid of `n` points spanning `[lo, hi]`.
    pub fn by_sampling(
        f: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        n: usize,
    ) -> Result<Self, ConvexError> {
        let xs = log_spaced(lo, hi, n);
        let us: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        Self::from_samples(&xs, &us)
    }

    /// Integral of the left power-law tail from `x` up to the first node.
    fn left_tail_integral(&self, x: f64) -> f64 {
        let (mu, s, beta) = (self.nodes[0], self.slopes[0], self.beta_left);
        if (beta - 1.0).abs() < 1e-9 {
            s * mu * (mu / x).ln()
        } else {
            s * mu / (1.0 - beta) * (1.0 - (x / mu).powf(1.0 - beta))
        }
    }

    /// Integral of the right power-law tail from the last node up to `x`.
    fn right_tail_integral(&self, x: f64) -> f64 {
        let k = self.nodes.len();
        let (mu, s, beta) = (self.nodes[k - 1], self.slopes[k - 1], self.beta_right);
        if (beta - 1.0).abs() < 1e-9 {
            s * mu * (x / mu).ln()
        } else {
            s * mu / (1.0 - beta) * ((x / mu).powf(1.0 - beta) - 1.0)
        }
    }

    /// Function value at `x > 0`.
    pub fn value(&self, x: f64) -> f64 {
        let k = self.nodes.len();
        if x <= self.nodes[0] {
            return self.values[0] - self.left_tail_integral(x);
        }
        if x >= self.nodes[k - 1] {
            return self.values[k - 1] + self.right_tail_integral(x);
        }
        let i = self.segment_index(x);
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        let (s0, s1) = (self.slopes[i], self.slopes[i + 1]);
        let t = (x - x0) / (x1 - x0);
        let s_at = s0 + (s1 - s0) * t;
        self.values[i] + 0.5 * (s0 + s_at) * (x - x0)
    }

    /// Marginal (first derivative) at `x > 0`; strictly decreasing and positive.
    pub fn marginal(&self, x: f64) -> f64 {
        let k = self.nodes.len();
        if x <= self.nodes[0] {
            return self.slopes[0] * (x / self.nodes[0]).powf(-self.beta_left);
        }
        if x >= self.nodes[k - 1] {
            return self.slopes[k - 1] * (x / self.nodes[k - 1]).powf(-self.beta_right);
        }
        let i = self.segment_index(x);
        let t = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        self.slopes[i] + (self.slopes[i + 1] - self.slopes[i]) * t
    }

    /// Derivative of the marginal at `x > 0` (negative).
    pub fn curvature(&self, x: f64) -> f64 {
        let k = self.nodes.len();
        if x <= self.nodes[0] {
            return -self.beta_left * self.marginal(x) / x;
        }
        if x >= self.nodes[k - 1] {
            return -self.beta_right * self.marginal(x) / x;
        }
        let i = self.segment_index(x);
        (self.slopes[i + 1] - self.slopes[i]) / (self.nodes[i + 1] - self.nodes[i])
    }

    /// Exact inverse of the marginal: the unique `x` with `marginal(x) = y`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        let k = self.nodes.len();
        if y >= self.slopes[0] {
            return self.nodes[0] * (y / self.slopes[0]).powf(-1.0 / self.beta_left);
        }
        if y <= self.slopes[k - 1] {
            return self.nodes[k - 1] * (y / self.slopes[k - 1]).powf(-1.0 / self.beta_right);
        }
        // Slopes are strictly decreasing; find i with slopes[i] >= y >= slopes[i+1].
        let i = match self
            .slopes
            .binary_search_by(|s| y.partial_cmp(s).expect("finite slopes"))
        {
            Ok(i) => i.min(k - 2),
            Err(i) => (i - 1).min(k - 2),
        };
        let rate = (self.slopes[i + 1] - self.slopes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        self.nodes[i] + (y - self.slopes[i]) / rate
    }

    /// Supremum of the function, finite exactly when the right tail exponent
    /// exceeds one (then the remaining marginal mass integrates to a constant).
    pub fn supremum(&self) -> Option<f64> {
        let k = self.nodes.len();
        if self.beta_right > 1.0 + 1e-9 {
            Some(self.values[k - 1] + self.slopes[k - 1] * self.nodes[k - 1] / (self.beta_right - 1.0))
        } else {
            None
        }
    }

    /// Index of the node interval containing `x` (strictly interior callers).
    fn segment_index(&self, x: f64) -> usize {
        match self
            .nodes
            .binary_search_by(|n| n.partial_cmp(&x).expect("finite nodes"))
        {
            Ok(i) => i.min(self.nodes.len() - 2),
            Err(i) => (i - 1).min(self.nodes.len() - 2),
        }
    }

    /// Right-tail exponent of the marginal extension.
    pub fn right_tail_exponent(&self) -> f64 {
        self.beta_right
    }

    /// Left-tail exponent of the marginal extension.
    pub fn left_tail_exponent(&self) -> f64 {
        self.beta_left
    }
}

/// Log-spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2, "need 0 < lo < hi and n >= 2");
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Standard compact evaluation grid used by uniform-convergence style tests:
/// 2000 log-spaced points on `[0.05, 20]`.
pub fn standard_compact_grid() -> Vec<f64> {
    log_spaced(0.05, 20.0, 2000)
}

// ---------------------------------------------------------------------------
// UtilityFunction
// ---------------------------------------------------------------------------

/// Increasing, strictly concave utility `U = a·F + b` over a base family `F`.
///
/// The marginal blows up at zero and vanishes at infinity for every admissible
/// base, so the inverse marginal is globally defined on `(0, ∞)`.
#[derive(Debug, Clone)]
pub struct UtilityFunction {
    family: UtilityFamily,
    tabulated: Option<TabulatedConcave>,
    scale: f64,
    shift: f64,
}

impl UtilityFunction {
    /// Logarithmic utility `a·ln x + b`.
    pub fn log() -> Self {
        Self {
            family: UtilityFamily::Log,
            tabulated: None,
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Power utility built on the normalized base `(x^α - 1)/α`, `α ∈ (0, 1)`.
    pub fn power(alpha: f64) -> Self {
        assert!(
            alpha > 0.0 && alpha < 1.0,
            "power exponent must lie in (0, 1), got {alpha}"
        );
        Self {
            family: UtilityFamily::Power { alpha },
            tabulated: None,
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Utility carried by a tabulated concave interpolant.
    pub fn tabulated(data: TabulatedConcave) -> Self {
        Self {
            family: UtilityFamily::Tabulated,
            tabulated: Some(data),
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Tabulated utility built directly from samples.
    pub fn from_samples(xs: &[f64], us: &[f64]) -> Result<Self, ConvexError> {
        Ok(Self::tabulated(TabulatedConcave::from_samples(xs, us)?))
    }

    /// Returns `a·U + b` applied on top of the current transform.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        assert!(a > 0.0, "affine rescaling must be increasing, got a={a}");
        Self {
            family: self.family.clone(),
            tabulated: self.tabulated.clone(),
            scale: a * self.scale,
            shift: a * self.shift + b,
        }
    }

    /// The base family tag.
    pub fn family(&self) -> &UtilityFamily {
        &self.family
    }

    fn base_value(&self, x: f64) -> f64 {
        match &self.family {
            UtilityFamily::Log => x.ln(),
            UtilityFamily::Power { alpha } => (x.powf(*alpha) - 1.0) / alpha,
            UtilityFamily::Tabulated => self.tabulated.as_ref().expect("tabulated data").value(x),
        }
    }

    fn base_marginal(&self, x: f64) -> f64 {
        match &self.family {
            UtilityFamily::Log => 1.0 / x,
            UtilityFamily::Power { alpha } => x.powf(alpha - 1.0),
            UtilityFamily::Tabulated => {
                self.tabulated.as_ref().expect("tabulated data").marginal(x)
            }
        }
    }

    /// Utility value `U(x)` for `x > 0`.
    pub fn value(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0, "utility evaluated at non-positive wealth {x}");
        self.scale * self.base_value(x) + self.shift
    }

    /// Marginal utility `U'(x)` for `x > 0`.
    pub fn marginal(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        self.scale * self.base_marginal(x)
    }

    /// Second derivative `U''(x)` (negative for all admissible bases).
    pub fn second_derivative(&self, x: f64) -> f64 {
        let base = match &self.family {
            UtilityFamily::Log => -1.0 / (x * x),
            UtilityFamily::Power { alpha } => (alpha - 1.0) * x.powf(alpha - 2.0),
            UtilityFamily::Tabulated => {
                self.tabulated.as_ref().expect("tabulated data").curvature(x)
            }
        };
        self.scale * base
    }

    /// Inverse marginal `I(y) = (U')⁻¹(y)` for `y > 0`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        debug_assert!(y > 0.0, "inverse marginal needs y > 0, got {y}");
        let target = y / self.scale;
        match &self.family {
            UtilityFamily::Log => 1.0 / target,
            UtilityFamily::Power { alpha } => target.powf(1.0 / (alpha - 1.0)),
            UtilityFamily::Tabulated => self
                .tabulated
                .as_ref()
                .expect("tabulated data")
                .inverse_marginal(target),
        }
    }

    /// Supremum of `U` over `(0, ∞)`, when finite.
    pub fn upper_bound(&self) -> Option<f64> {
        match &self.family {
            UtilityFamily::Log | UtilityFamily::Power { .. } => None,
            UtilityFamily::Tabulated => self
                .tabulated
                .as_ref()
                .expect("tabulated data")
                .supremum()
                .map(|s| self.scale * s + self.shift),
        }
    }

    /// Rescales so that `U(1) = 0` and `U'(1) = 1`; idempotent and invariant
    /// under prior affine transforms of the same base.
    pub fn normalize(&self) -> Self {
        let f1 = self.base_value(1.0);
        let df1 = self.base_marginal(1.0);
        Self {
            family: self.family.clone(),
            tabulated: self.tabulated.clone(),
            scale: 1.0 / df1,
            shift: -f1 / df1,
        }
    }

    /// Whether the normalization identities hold to [`NORMALIZATION_TOL`].
    pub fn is_normalized(&self) -> bool {
        self.value(1.0).abs() <= NORMALIZATION_TOL
            && (self.marginal(1.0) - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Checks strict monotonicity, strict concavity, and the marginal-decay
    /// conditions (`U' → ∞` at zero, `U' → 0` at infinity) on probe points
    /// calibrated to the family.
    pub fn validate(&self) -> Result<(), ConvexError> {
        let tol = INADA_PROBE_TOL;
        // Family-calibrated probes: step one safety factor beyond the point
        // where the closed form (or the tabulated inverse marginal) crosses
        // the 1/tol and tol thresholds.  A degenerate tail can push these
        // probes to zero or overflow them, which is itself a violation.
        let probe_low = 0.5 * self.inverse_marginal(1.0 / tol);
        let probe_high = 2.0 * self.inverse_marginal(tol);
        if !(probe_low.is_finite() && probe_low > 0.0) {
            return Err(ConvexError::InadaViolation {
                probe: probe_low,
                marginal: f64::NAN,
            });
        }
        if !(probe_high.is_finite() && probe_high > 0.0) {
            return Err(ConvexError::InadaViolation {
                probe: probe_high,
                marginal: f64::NAN,
            });
        }
        let m_low = self.marginal(probe_low);
        if !(m_low > 1.0 / tol) {
            return Err(ConvexError::InadaViolation {
                probe: probe_low,
                marginal: m_low,
            });
        }
        let m_high = self.marginal(probe_high);
        if !(m_high < tol) {
            return Err(ConvexError::InadaViolation {
                probe: probe_high,
                marginal: m_high,
            });
        }
        // Monotonicity and concavity on a wide log-spaced audit grid.
        let grid = log_spaced(1e-3, 1e3, 400);
        for pair in grid.windows(2) {
            let (x0, x1) = (pair[0], pair[1]);
            if self.value(x1) <= self.value(x0) {
                return Err(ConvexError::NotConcave {
                    reason: format!("values not strictly increasing near x={x0}"),
                });
            }
            if self.marginal(x1) >= self.marginal(x0) {
                return Err(ConvexError::NotConcave {
                    reason: format!("marginal not strictly decreasing near x={x0}"),
                });
            }
        }
        Ok(())
    }

    /// Exact convex conjugate `V(y) = sup_x { U(x) - x·y }`.
    ///
    /// For the closed-form bases the conjugate is algebraic; for tabulated
    /// bases the supremum is attained at the exact inverse marginal, so the
    /// conjugate is evaluated through it.  Construction fails with
    /// [`ConvexError::ConjugateDiverges`] when the supremum is infinite for
    /// some `y > 0` (a tail whose marginal does not decay).
    pub fn conjugate(&self) -> Result<DualFunction, ConvexError> {
        let base = match &self.family {
            UtilityFamily::Log => DualBase::Log,
            UtilityFamily::Power { alpha } => DualBase::Power { alpha: *alpha },
            UtilityFamily::Tabulated => {
                let tab = self.tabulated.as_ref().expect("tabulated data").clone();
                if tab.right_tail_exponent() <= MIN_TAIL_EXPONENT {
                    return Err(ConvexError::ConjugateDiverges {
                        reason: "marginal does not vanish at infinity".to_string(),
                    });
                }
                DualBase::Tabulated(Box::new(tab))
            }
        };
        Ok(DualFunction {
            base,
            scale: self.scale,
            shift: self.shift,
        })
    }
}

impl RealFunction for UtilityFunction {
    fn value_at(&self, x: f64) -> f64 {
        self.value(x)
    }
}

// ---------------------------------------------------------------------------
// DualFunction
// ---------------------------------------------------------------------------

/// Base of a dual (conjugate) function.
#[derive(Debug, Clone)]
enum DualBase {
    /// Conjugate of `ln x`: `-ln y - 1`.
    Log,
    /// Conjugate of `(x^α - 1)/α`: `((1-α)/α)·y^(-α/(1-α)) - 1/α`.
    Power { alpha: f64 },
    /// Conjugate of a tabulated base, evaluated through its inverse marginal.
    Tabulated(Box<TabulatedConcave>),
}

/// Convex, decreasing conjugate `V` of a utility function.
///
/// If the utility is `U = a·F + b` then `V(y) = a·V_F(y/a) + b`, so the dual
/// carries the same affine data.  A normalized utility yields
/// `V(1) = V'(1) = -1` and `V(y) ≥ -y` everywhere.
#[derive(Debug, Clone)]
pub struct DualFunction {
    base: DualBase,
    scale: f64,
    shift: f64,
}

impl DualFunction {
    fn base_value(&self, y: f64) -> f64 {
        match &self.base {
            DualBase::Log => -y.ln() - 1.0,
            DualBase::Power { alpha } => {
                (1.0 - alpha) / alpha * y.powf(-alpha / (1.0 - alpha)) - 1.0 / alpha
            }
            DualBase::Tabulated(tab) => {
                let x = tab.inverse_marginal(y);
                tab.value(x) - y * x
            }
        }
    }

    /// Dual value `V(y)` for `y > 0`.
    pub fn value(&self, y: f64) -> f64 {
        debug_assert!(y > 0.0, "dual evaluated at non-positive argument {y}");
        self.scale * self.base_value(y / self.scale) + self.shift
    }

    /// Positive part `V⁺(y) = max(V(y), 0)`.
    pub fn positive_part(&self, y: f64) -> f64 {
        self.value(y).max(0.0)
    }

    /// First derivative `V'(y) = -I(y)` (increasing, negative).
    pub fn derivative(&self, y: f64) -> f64 {
        debug_assert!(y > 0.0);
        let t = y / self.scale;
        match &self.base {
            DualBase::Log => -1.0 / t,
            DualBase::Power { alpha } => -t.powf(-1.0 / (1.0 - alpha)),
            DualBase::Tabulated(tab) => -tab.inverse_marginal(t),
        }
    }

    /// Second derivative `V''(y) = -I'(y) > 0`; this is the curvature the
    /// separable Newton solver uses atom by atom.
    pub fn second_derivative(&self, y: f64) -> f64 {
        debug_assert!(y > 0.0);
        let t = y / self.scale;
        let base = match &self.base {
            DualBase::Log => 1.0 / (t * t),
            DualBase::Power { alpha } => {
                let p = -1.0 / (1.0 - alpha);
                -p * t.powf(p - 1.0)
            }
            DualBase::Tabulated(tab) => {
                let x = tab.inverse_marginal(t);
                -1.0 / tab.curvature(x)
            }
        };
        base / self.scale
    }

    /// Limit `V(0+) = sup U`, which is `+∞` unless the utility is bounded above.
    pub fn limit_at_zero(&self) -> f64 {
        match &self.base {
            DualBase::Log | DualBase::Power { .. } => f64::INFINITY,
            DualBase::Tabulated(tab) => match tab.supremum() {
                Some(s) => self.scale * s + self.shift,
                None => f64::INFINITY,
            },
        }
    }

    /// Whether `V(0+)` is finite.
    pub fn finite_at_zero(&self) -> bool {
        self.limit_at_zero().is_finite()
    }
}

impl RealFunction for DualFunction {
    fn value_at(&self, x: f64) -> f64 {
        self.value(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn log_utility_is_normalized_and_validates() {
        let u = UtilityFunction::log();
        assert!(u.is_normalized());
        assert!(u.validate().is_ok());
        assert_abs_diff_eq!(u.value(1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.marginal(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.inverse_marginal(2.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn power_base_is_normalized_and_validates() {
        for alpha in [0.2, 0.5, 0.8] {
            let u = UtilityFunction::power(alpha);
            assert!(u.is_normalized());
            assert!(u.validate().is_ok());
            // I(y) = y^(1/(alpha-1))
            assert_relative_eq!(
                u.inverse_marginal(2.0),
                2.0_f64.powf(1.0 / (alpha - 1.0)),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn normalize_undoes_affine_transforms() {
        // Scaling a power utility by 5 and shifting by -3 must give back the
        // identical normalized function.
        let u = UtilityFunction::power(0.5);
        let scaled = u.affine(5.0, -3.0);
        assert!(!scaled.is_normalized());
        let back = scaled.normalize();
        assert!(back.is_normalized());
        for &x in &log_spaced(0.05, 20.0, 100) {
            assert_abs_diff_eq!(back.value(x), u.value(x), epsilon = 1e-12);
            assert_abs_diff_eq!(back.marginal(x), u.marginal(x), epsilon = 1e-12);
        }
        // Normalization is idempotent.
        let twice = back.normalize();
        for &x in &[0.3, 1.0, 7.0] {
            assert_abs_diff_eq!(twice.value(x), back.value(x), epsilon = 1e-15);
        }
    }

    #[test]
    fn normalized_conjugates_hit_minus_one_at_one() {
        let cases: Vec<UtilityFunction> = vec![
            UtilityFunction::log(),
            UtilityFunction::power(0.3),
            UtilityFunction::power(0.5),
        ];
        for u in cases {
            let v = u.conjugate().unwrap();
            assert_abs_diff_eq!(v.value(1.0), -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v.derivative(1.0), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conjugate_dominates_minus_identity_when_normalized() {
        // V(y) >= -y for normalized utilities (take x = 1 in the supremum).
        for u in [UtilityFunction::log(), UtilityFunction::power(0.7)] {
            let v = u.conjugate().unwrap();
            for &y in &log_spaced(1e-3, 1e3, 200) {
                assert!(
                    v.value(y) >= -y - 1e-12,
                    "V({y}) = {} < -y for {:?}",
                    v.value(y),
                    u.family()
                );
            }
        }
    }

    #[test]
    fn conjugate_round_trip_recovers_utility() {
        // U(x) = inf_y { V(y) + x·y }, attained at y = U'(x); check the
        // attained value and that nearby y do not undercut it.
        let compacts = standard_compact_grid();
        for u in [
            UtilityFunction::log(),
            UtilityFunction::power(0.4),
            UtilityFunction::power(0.85),
        ] {
            let v = u.conjugate().unwrap();
            let mut worst: f64 = 0.0;
            for &x in &compacts {
                let y = u.marginal(x);
                let recovered = v.value(y) + x * y;
                worst = worst.max((recovered - u.value(x)).abs());
                for factor in [0.7, 1.3] {
                    let yp = y * factor;
                    assert!(v.value(yp) + x * yp >= u.value(x) - 1e-10);
                }
            }
            assert!(worst < 1e-7, "round-trip error {worst}");
        }
    }

    #[test]
    fn dual_second_derivative_matches_difference_quotient() {
        for u in [UtilityFunction::log(), UtilityFunction::power(0.5)] {
            let v = u.conjugate().unwrap();
            for &y in &[0.2, 1.0, 3.0] {
                let h = 1e-5 * y;
                let fd = (v.derivative(y + h) - v.derivative(y - h)) / (2.0 * h);
                assert_relative_eq!(fd, v.second_derivative(y), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn tabulated_from_log_samples_tracks_log() {
        let samples = log_spaced(0.01, 100.0, 160);
        let us: Vec<f64> = samples.iter().map(|&x| x.ln()).collect();
        let tab = UtilityFunction::from_samples(&samples, &us).unwrap().normalize();
        assert!(tab.is_normalized());
        assert!(tab.validate().is_ok());
        for &x in &log_spaced(0.1, 10.0, 100) {
            assert_abs_diff_eq!(tab.value(x), x.ln(), epsilon = 2e-3);
        }
    }

    #[test]
    fn tabulated_conjugate_matches_numeric_supremum() {
        // Tabulated carrier built from log samples: its conjugate (evaluated
        // through the exact inverse marginal) must agree with a brute-force
        // supremum over a fine grid to 1e-6 on y in [0.1, 10].
        let samples = log_spaced(1e-3, 1e3, 400);
        let us: Vec<f64> = samples.iter().map(|&x| x.ln()).collect();
        let u = UtilityFunction::from_samples(&samples, &us).unwrap().normalize();
        let v = u.conjugate().unwrap();

        let search = log_spaced(1e-4, 1e4, 400_000);
        for &y in &log_spaced(0.1, 10.0, 25) {
            let brute = search
                .iter()
                .map(|&x| u.value(x) - x * y)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                (v.value(y) - brute).abs() < 1e-6,
                "y={y}: conjugate {} vs brute {brute}",
                v.value(y)
            );
        }
    }

    #[test]
    fn tabulated_inverse_marginal_is_exact() {
        let samples = log_spaced(0.05, 50.0, 80);
        let us: Vec<f64> = samples.iter().map(|&x| 2.0 * x.sqrt()).collect();
        let u = UtilityFunction::from_samples(&samples, &us).unwrap();
        for &y in &log_spaced(0.01, 50.0, 200) {
            let x = u.inverse_marginal(y);
            assert_relative_eq!(u.marginal(x), y, max_relative = 1e-12);
        }
    }

    #[test]
    fn bounded_tabulated_utility_reports_supremum_and_finite_dual_limit() {
        // Capped-power data: marginal tail exponent > 1 makes sup U finite.
        let cap = 3.0;
        let f = |x: f64| cap - cap / (1.0 + x);
        let tab = TabulatedConcave::by_sampling(f, 0.01, 1e4, 300).unwrap();
        assert!(tab.right_tail_exponent() > 1.0);
        let u = UtilityFunction::tabulated(tab);
        let sup = u.upper_bound().expect("bounded above");
        assert!((sup - cap).abs() < 0.05, "sup estimate {sup} vs {cap}");
        let v = u.conjugate().unwrap();
        assert!(v.finite_at_zero());
        assert!((v.limit_at_zero() - sup).abs() < 1e-12);
        // V(0+) = sup U: small y values approach it from above.
        assert!(v.value(1e-9) <= sup + 1e-6);
        assert!(v.value(1e-9) > sup - 0.05);
    }

    #[test]
    fn unbounded_log_has_infinite_dual_limit() {
        let v = UtilityFunction::log().conjugate().unwrap();
        assert!(!v.finite_at_zero());
        assert!(v.limit_at_zero().is_infinite());
    }

    #[test]
    fn non_concave_samples_are_rejected() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let convex = [1.0, 2.0, 4.0, 8.0];
        assert!(matches!(
            UtilityFunction::from_samples(&xs, &convex),
            Err(ConvexError::NotConcave { .. })
        ));
        let decreasing = [4.0, 3.0, 2.0, 1.0];
        assert!(matches!(
            UtilityFunction::from_samples(&xs, &decreasing),
            Err(ConvexError::NotConcave { .. })
        ));
        let unordered = UtilityFunction::from_samples(&[1.0, 3.0, 2.0], &[0.0, 1.0, 2.0]);
        assert!(matches!(unordered, Err(ConvexError::InvalidGrid { .. })));
    }

    #[test]
    fn validate_rejects_flat_tails() {
        // A marginal that levels off at a positive constant violates decay at
        // infinity: build one from samples of x -> x (slope never vanishing
        // fails the concavity gate first), so instead use a gently bending
        // curve whose extrapolated tail exponent is tiny.
        let xs = log_spaced(1.0, 1e3, 40);
        let us: Vec<f64> = xs.iter().map(|&x| x - 1e-4 * x * x / 2.0).collect();
        match UtilityFunction::from_samples(&xs, &us) {
            Ok(u) => assert!(u.validate().is_err()),
            Err(_) => {} // rejected at construction is equally acceptable
        }
    }

    #[test]
    fn positive_part_clips_at_zero() {
        let v = UtilityFunction::log().conjugate().unwrap();
        // V(y) = -ln y - 1 is positive for y < 1/e and negative beyond.
        assert_abs_diff_eq!(v.positive_part(1.0), 0.0, epsilon = 1e-15);
        assert!(v.positive_part(0.01) > 0.0);
        assert_abs_diff_eq!(v.positive_part(0.01), v.value(0.01), epsilon = 1e-15);
    }
}
