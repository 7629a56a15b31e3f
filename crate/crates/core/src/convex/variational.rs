//! Variational convergence diagnostics: subdifferentials by one-sided
//! difference quotients, epigraphical limits, and graphical convergence of
//! subdifferential maps along point sequences.

use super::{ConvexError, RealFunction};

/// One-sided difference-quotient steps, refined by Richardson extrapolation.
pub const RICHARDSON_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// Slope magnitude beyond which a subdifferential is treated as unbounded.
pub const SLOPE_BOUND: f64 = 1e6;

/// A wrapper giving a closure an explicit evaluation domain.
pub struct FnWithDomain<F> {
    f: F,
    lo: f64,
    hi: f64,
}

impl<F: Fn(f64) -> f64> FnWithDomain<F> {
    /// Wraps `f` with the open domain `(lo, hi)`.
    pub fn new(f: F, lo: f64, hi: f64) -> Self {
        Self { f, lo, hi }
    }
}

impl<F: Fn(f64) -> f64> RealFunction for FnWithDomain<F> {
    fn value_at(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// Closed interval `[left, right]` of one-sided slopes at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subdifferential {
    /// Left (lower) slope.
    pub left: f64,
    /// Right (upper) slope.
    pub right: f64,
}

impl Subdifferential {
    /// Interval width.
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    /// Whether the interval collapses to a point (the function is
    /// differentiable there) up to `tol`.
    pub fn is_degenerate(&self, tol: f64) -> bool {
        self.width().abs() <= tol
    }

    /// Distance from a scalar slope to this interval.
    pub fn distance_to(&self, slope: f64) -> f64 {
        (self.left - slope).max(slope - self.right).max(0.0)
    }

    /// Whether this interval sits inside `other` fattened by `eps`.
    pub fn within(&self, other: &Subdifferential, eps: f64) -> bool {
        self.left >= other.left - eps && self.right <= other.right + eps
    }

    /// The larger of the endpoint magnitudes.
    pub fn magnitude(&self) -> f64 {
        self.left.abs().max(self.right.abs())
    }
}

/// Richardson refinement of one-sided quotients sampled at `h, h/2, h/4`:
/// two extrapolation levels cancel the first- and second-order error terms.
fn richardson(d: [f64; 3]) -> f64 {
    let first = 2.0 * d[1] - d[0];
    let second = 2.0 * d[2] - d[1];
    (4.0 * second - first) / 3.0
}

/// Subdifferential of a convex function at an interior point, as the interval
/// `[left slope, right slope]` of extrapolated one-sided difference quotients.
pub fn subdifferential(
    f: &dyn RealFunction,
    x: f64,
) -> Result<Subdifferential, ConvexError> {
    let (lo, hi) = f.domain();
    let h_max = RICHARDSON_STEPS[0];
    if !(x - h_max > lo && x + h_max < hi) {
        return Err(ConvexError::BoundaryPoint { point: x });
    }
    let fx = f.value_at(x);
    let mut right_q = [0.0; 3];
    let mut left_q = [0.0; 3];
    for (i, &h) in RICHARDSON_STEPS.iter().enumerate() {
        right_q[i] = (f.value_at(x + h) - fx) / h;
        left_q[i] = (fx - f.value_at(x - h)) / h;
    }
    let right = richardson(right_q);
    let left = richardson(left_q);
    // Guard against numerical inversion of two estimates of the same slope.
    Ok(Subdifferential {
        left: left.min(right),
        right: left.max(right),
    })
}

// ---------------------------------------------------------------------------
// Epigraphical convergence
// ---------------------------------------------------------------------------

/// Outcome of the epigraphical-limit test.
#[derive(Debug, Clone)]
pub struct EpiConvergenceReport {
    /// Whether both conditions hold at every probe within tolerance.
    pub epi_converges: bool,
    /// Worst violation of the lower-bound condition
    /// `liminf f_n(x_n) ≥ f(x)` over probes and candidate sequences.
    pub worst_liminf_gap: f64,
    /// Worst violation of the recovery condition `limsup f_n(x) ≤ f(x)`.
    pub worst_recovery_gap: f64,
}

/// Candidate offsets around a probe point: for each index `n` the sequence
/// takes one of `x`, `x ± 1/n`, `x·(1 ± 1/n)` (intersected with `(0, ∞)`).
fn candidate(shape: usize, x: f64, n: usize) -> Option<f64> {
    let s = 1.0 / n as f64;
    let value = match shape {
        0 => x,
        1 => x + s,
        2 => x - s,
        3 => x * (1.0 + s),
        _ => x * (1.0 - s),
    };
    (value > 0.0).then_some(value)
}

/// Two-level Richardson extrapolation in `1/n` of a tail sequence sampled at
/// indices `n_max/4, n_max/2, n_max`; cancels the `1/n` and `1/n²` error
/// terms of the finite-index values.
fn tail_limit(v_quarter: f64, v_half: f64, v_full: f64) -> f64 {
    let first = 2.0 * v_half - v_quarter;
    let second = 2.0 * v_full - v_half;
    (4.0 * second - first) / 3.0
}

/// Tests epigraphical convergence of `seq(n, ·)` to `limit` at the probe
/// points.  Tail behavior along each candidate sequence is estimated by
/// second-order extrapolation in `1/n` (values at `n_max/4`, `n_max/2`,
/// `n_max`), which removes the generic `O(1/n)` and `O(1/n²)` finite-index
/// errors, so the tolerance can be tight.
pub fn check_epi_convergence(
    seq: &dyn Fn(usize, f64) -> f64,
    limit: &dyn RealFunction,
    probes: &[f64],
    n_max: usize,
    tol: f64,
) -> EpiConvergenceReport {
    assert!(n_max >= 8, "need n_max >= 8 for tail extrapolation");
    let nodes = [n_max / 4, n_max / 2, n_max];
    let mut worst_liminf: f64 = 0.0;
    let mut worst_recovery: f64 = 0.0;

    for &x in probes {
        let fx = limit.value_at(x);

        // Lower bound: for each candidate sequence shape, extrapolate
        // lim f_n(x_n) and keep the most violating one.
        let mut liminf_estimate = f64::INFINITY;
        for shape in 0..5 {
            let samples: Vec<f64> = nodes
                .iter()
                .filter_map(|&n| candidate(shape, x, n).map(|xn| seq(n, xn)))
                .collect();
            if samples.len() == 3 {
                liminf_estimate =
                    liminf_estimate.min(tail_limit(samples[0], samples[1], samples[2]));
            }
        }
        worst_liminf = worst_liminf.max(fx - liminf_estimate);

        // Recovery: the constant sequence must attain the limit from above.
        let limsup_estimate =
            tail_limit(seq(nodes[0], x), seq(nodes[1], x), seq(nodes[2], x));
        worst_recovery = worst_recovery.max(limsup_estimate - fx);
    }

    EpiConvergenceReport {
        epi_converges: worst_liminf <= tol && worst_recovery <= tol,
        worst_liminf_gap: worst_liminf,
        worst_recovery_gap: worst_recovery,
    }
}

// ---------------------------------------------------------------------------
// Graphical convergence of subdifferentials
// ---------------------------------------------------------------------------

/// Index ladder `1, 2, …, 10` then geometric (ratio ≈ 1.3) up to `n_max`.
fn index_ladder(n_max: usize) -> Vec<usize> {
    let mut ladder: Vec<usize> = (1..=10.min(n_max)).collect();
    let mut n = 10_usize;
    while n < n_max {
        n = ((n as f64 * 1.3).ceil() as usize).min(n_max);
        ladder.push(n);
    }
    ladder.dedup();
    ladder
}

/// Outcome of the graphical-convergence test for subdifferential maps.
#[derive(Debug, Clone)]
pub struct GraphicalConvergenceReport {
    /// Part (a): tail subdifferential endpoints accumulate within 1e-6 of
    /// the limit interval.
    pub accumulation_ok: bool,
    /// Largest tail endpoint distance to the limit interval.
    pub worst_tail_distance: f64,
    /// Whether all sampled subdifferentials stayed below [`SLOPE_BOUND`];
    /// when `false`, the inclusion thresholds are skipped (the condition the
    /// [`ConvexError::UnboundedSubdifferentials`] variant names).
    pub bounded: bool,
    /// For each `ε` in `{1e-1, 1e-2, 1e-3}`: the smallest ladder index from
    /// which `∂f_n(x_n) ⊆ ∂f(x) + εB` holds onward, if any.
    pub inclusion_thresholds: Vec<(f64, Option<usize>)>,
}

/// Tolerance for the accumulation part of the graphical-convergence test.
pub const ACCUMULATION_TOL: f64 = 1e-6;

/// Checks that subdifferentials of `seq(n, ·)` evaluated along `points(n)`
/// converge graphically to the subdifferential of `limit` at `x_limit`.
pub fn check_graphical_convergence(
    seq: &dyn Fn(usize, f64) -> f64,
    limit: &dyn RealFunction,
    points: &dyn Fn(usize) -> f64,
    x_limit: f64,
    n_max: usize,
    domain: (f64, f64),
) -> Result<GraphicalConvergenceReport, ConvexError> {
    let limit_sub = subdifferential(limit, x_limit)?;
    let ladder = index_ladder(n_max);

    let mut member_subs = Vec::with_capacity(ladder.len());
    let mut bounded = true;
    for &n in &ladder {
        let member = FnWithDomain::new(|t: f64| seq(n, t), domain.0, domain.1);
        let sub = subdifferential(&member, points(n))?;
        if sub.magnitude() > SLOPE_BOUND {
            bounded = false;
        }
        member_subs.push((n, sub));
    }

    // Part (a): accumulation points of endpoint selections, estimated from
    // the tail third of the ladder.
    let tail_start = member_subs.len() - (member_subs.len() / 3).max(1);
    let mut worst_tail: f64 = 0.0;
    for (_, sub) in &member_subs[tail_start..] {
        worst_tail = worst_tail
            .max(limit_sub.distance_to(sub.left))
            .max(limit_sub.distance_to(sub.right));
    }
    let accumulation_ok = worst_tail <= ACCUMULATION_TOL;

    // Part (b): eps-ball inclusion indices, meaningful only under bounded
    // subdifferentials along the sequence.
    let mut inclusion = Vec::new();
    if bounded {
        for eps in [1e-1, 1e-2, 1e-3] {
            let slack = eps + 1e-9;
            let threshold = member_subs
                .iter()
                .position(|(_, sub)| sub.within(&limit_sub, slack))
                .filter(|&i| {
                    member_subs[i..]
                        .iter()
                        .all(|(_, sub)| sub.within(&limit_sub, slack))
                })
                .map(|i| member_subs[i].0);
            inclusion.push((eps, threshold));
        }
    }

    Ok(GraphicalConvergenceReport {
        accumulation_ok,
        worst_tail_distance: worst_tail,
        bounded,
        inclusion_thresholds: inclusion,
    })
}
