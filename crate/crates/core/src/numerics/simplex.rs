//! Dense two-phase simplex method for small standard-form linear programs
//!
//! ```text
//! maximize cᵀx   subject to   Ax = b,  x ≥ 0.
//! ```
//!
//! The problems solved here are tiny (tens of variables): feasibility of a
//! martingale polytope slice, membership of a point in the convex hull or
//! relative interior of a finite point set, extreme-point decompositions, and
//! arbitrage searches. A dense tableau with Bland's anti-cycling rule is
//! simple, deterministic, and fully adequate at this scale.

use nalgebra::{DMatrix, DVector};

/// Pivot tolerance: entries smaller than this in absolute value are treated
/// as zero when selecting pivots.
const PIVOT_TOL: f64 = 1e-9;
/// Tolerance used when reading optimality / feasibility off the tableau.
const VALUE_TOL: f64 = 1e-10;
/// Iteration cap; Bland's rule guarantees termination but we bound it anyway.
const MAX_ITER: usize = 50_000;

/// Outcome of a standard-form solve.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    /// Optimal basic solution found. The vector has one entry per column of
    /// `A`; `value` is the objective cᵀx at the optimum.
    Optimal { x: Vec<f64>, value: f64 },
    /// The constraint set `{Ax = b, x ≥ 0}` is empty.
    Infeasible,
    /// The objective is unbounded above on the feasible set.
    Unbounded,
}

/// Solve `max cᵀx s.t. Ax = b, x ≥ 0` with the two-phase simplex method.
///
/// Rows of `A` may be linearly dependent; redundant rows are handled by the
/// phase-one artificial variables (a leftover artificial basic variable at
/// zero level marks a redundant row, and the row is ignored thereafter).
pub fn solve_standard_form(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> LpOutcome {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(b.len(), m, "rhs dimension mismatch");
    assert_eq!(c.len(), n, "objective dimension mismatch");

    // Tableau layout: columns 0..n are the structural variables, columns
    // n..n+m the artificials, final column the rhs. Row `m` holds the
    // (phase-dependent) objective.
    let mut t = DMatrix::<f64>::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = flip * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase one: minimize the sum of artificials, i.e. maximize -Σ art.
    // With the artificial basis, the reduced-cost row is -Σ_i (row i) on the
    // structural columns and zero on the (basic) artificial columns; the
    // corner cell carries the phase-one objective value -Σ b̃_i.
    for j in 0..n + m + 1 {
        let mut s = 0.0;
        for i in 0..m {
            s += t[(i, j)];
        }
        t[(m, j)] = -s;
    }
    for j in n..n + m {
        t[(m, j)] = 0.0; // artificials are basic; their reduced cost is zero
    }
    if !run_simplex(&mut t, &mut basis, n + m) {
        // Phase-one objective is bounded above by zero.
        unreachable!("phase one cannot be unbounded");
    }
    if t[(m, n + m)] < -1e-7 {
        return LpOutcome::Infeasible;
    }

    // Drive any artificial still in the basis (at zero level) out of it, or
    // mark its row as redundant by leaving it; such a row has zero level and
    // can pivot on any nonzero structural entry.
    for i in 0..m {
        if basis[i] >= n {
            let mut pivoted = false;
            for j in 0..n {
                if t[(i, j)].abs() > PIVOT_TOL {
                    pivot(&mut t, &mut basis, i, j);
                    pivoted = true;
                    break;
                }
            }
            if !pivoted {
                // Redundant row: all structural coefficients are ~0. Leave
                // the artificial basic at level 0; it never pivots again.
            }
        }
    }

    // Phase two: install the real objective, priced out over the basis.
    for j in 0..n + m + 1 {
        t[(m, j)] = 0.0;
    }
    for j in 0..n {
        t[(m, j)] = -c[j];
    }
    // price out basic columns
    for i in 0..m {
        let bj = basis[i];
        if bj < n && t[(m, bj)].abs() > 0.0 {
            let factor = t[(m, bj)];
            for j in 0..n + m + 1 {
                t[(m, j)] -= factor * t[(i, j)];
            }
        }
    }
    if !run_simplex(&mut t, &mut basis, n) {
        return LpOutcome::Unbounded;
    }

    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[(i, n + m)];
        }
    }
    // clean tiny negatives produced by roundoff
    for xi in &mut x {
        if *xi < 0.0 && *xi > -1e-9 {
            *xi = 0.0;
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpOutcome::Optimal { x, value }
}

/// Run simplex iterations on the tableau until optimal (returns true) or
/// unbounded (returns false). Only columns `< ncols_active` are eligible to
/// enter the basis. Bland's rule: smallest eligible index enters, and on
/// ratio ties the row whose basic variable has the smallest index leaves.
fn run_simplex(t: &mut DMatrix<f64>, basis: &mut [usize], ncols_active: usize) -> bool {
    let m = t.nrows() - 1;
    let rhs_col = t.ncols() - 1;
    for _ in 0..MAX_ITER {
        // entering column: smallest index with negative reduced cost
        // (objective row stores reduced costs negated for a max problem:
        // we maximize, so improve while some reduced cost < -tol).
        let mut enter = None;
        for j in 0..ncols_active {
            if t[(m, j)] < -VALUE_TOL {
                enter = Some(j);
                break;
            }
        }
        let Some(enter) = enter else {
            return true; // optimal
        };
        // leaving row: minimum ratio rhs / coeff over positive coefficients
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let coeff = t[(i, enter)];
            if coeff > PIVOT_TOL {
                let ratio = t[(i, rhs_col)] / coeff;
                let better = ratio < best_ratio - 1e-12
                    || (ratio < best_ratio + 1e-12
                        && leave.is_some_and(|l| basis[i] < basis[l]));
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            return false; // unbounded direction
        };
        pivot(t, basis, leave, enter);
    }
    panic!("simplex iteration cap exceeded on a degenerate problem");
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let m = t.nrows();
    let n = t.ncols();
    let p = t[(row, col)];
    for j in 0..n {
        t[(row, j)] /= p;
    }
    for i in 0..m {
        if i != row {
            let factor = t[(i, col)];
            if factor != 0.0 {
                for j in 0..n {
                    t[(i, j)] -= factor * t[(row, j)];
                }
            }
        }
    }
    basis[row] = col;
}

/// Membership report for a point relative to the convex hull of a finite set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullMembership {
    /// Point lies in the closed convex hull (up to the solver's tolerance).
    pub in_hull: bool,
    /// Point admits a representation with *all* barycentric weights strictly
    /// positive — i.e. it lies in the relative interior of the hull.
    pub in_relative_interior: bool,
    /// The best lower bound achieved on the smallest barycentric weight.
    pub min_weight: f64,
}

/// Decide whether `point` lies in the convex hull / relative interior of
/// `generators` (each generator one column). Uses the exact characterization
/// that a point is in the relative interior of conv(S) for finite S iff it is
/// a strictly positive convex combination of *all* elements of S.
///
/// Solves `max t  s.t.  Σ λ_i g_i = p, Σ λ_i = 1, λ_i ≥ t ≥ 0` by the
/// substitution λ_i = t + s_i.
pub fn hull_membership(generators: &DMatrix<f64>, point: &DVector<f64>, margin: f64) -> HullMembership {
    let dim = generators.nrows();
    let k = generators.ncols();
    assert_eq!(point.len(), dim);
    assert!(k > 0, "hull of an empty set");

    // variables: t, s_1..s_k  (all ≥ 0)
    let mut a = DMatrix::<f64>::zeros(dim + 1, k + 1);
    let mut b = DVector::<f64>::zeros(dim + 1);
    for r in 0..dim {
        let mut row_sum = 0.0;
        for j in 0..k {
            a[(r, j + 1)] = generators[(r, j)];
            row_sum += generators[(r, j)];
        }
        a[(r, 0)] = row_sum;
        b[r] = point[r];
    }
    for j in 0..k {
        a[(dim, j + 1)] = 1.0;
    }
    a[(dim, 0)] = k as f64;
    b[dim] = 1.0;

    let mut c = DVector::<f64>::zeros(k + 1);
    c[0] = 1.0;

    match solve_standard_form(&a, &b, &c) {
        LpOutcome::Optimal { value, .. } => HullMembership {
            in_hull: true,
            in_relative_interior: value > margin,
            min_weight: value,
        },
        LpOutcome::Infeasible => HullMembership {
            in_hull: false,
            in_relative_interior: false,
            min_weight: f64::NEG_INFINITY,
        },
        LpOutcome::Unbounded => unreachable!("t is bounded above by 1/k"),
    }
}

/// Express `target` as a nonnegative combination `Σ λ_j cols_j` of the
/// columns of `generators`, returning the weight vector of a *basic* solution
/// (support size at most rank of the generator matrix). Returns `None` when
/// no such combination exists within tolerance.
pub fn conic_decomposition(generators: &DMatrix<f64>, target: &DVector<f64>) -> Option<Vec<f64>> {
    let k = generators.ncols();
    let c = DVector::<f64>::zeros(k);
    match solve_standard_form(generators, target, &c) {
        LpOutcome::Optimal { x, .. } => Some(x),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solves_textbook_lp() {
        // max 3x + 2y s.t. x + y ≤ 4, x + 3y ≤ 6, x,y ≥ 0
        // standard form via slacks: x + y + s1 = 4, x + 3y + s2 = 6
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 0.0, 1.0, 3.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![4.0, 6.0]);
        let c = DVector::from_vec(vec![3.0, 2.0, 0.0, 0.0]);
        match solve_standard_form(&a, &b, &c) {
            LpOutcome::Optimal { x, value } => {
                assert_abs_diff_eq!(value, 12.0, epsilon = 1e-9);
                assert_abs_diff_eq!(x[0], 4.0, epsilon = 1e-9);
                assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-9);
            }
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn detects_infeasible() {
        // x ≥ 0 with x = -1
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let b = DVector::from_vec(vec![-1.0]);
        let c = DVector::from_vec(vec![0.0]);
        assert_eq!(solve_standard_form(&a, &b, &c), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        // max x - y s.t. x - y = x - y (vacuous): use x - y + s = 1? That's bounded.
        // max x s.t. x - y = 0 (x = y free to grow)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.0]);
        let c = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(solve_standard_form(&a, &b, &c), LpOutcome::Unbounded);
    }

    #[test]
    fn handles_redundant_rows() {
        // duplicated constraint row
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 0.0]);
        match solve_standard_form(&a, &b, &c) {
            LpOutcome::Optimal { x, value } => {
                assert_abs_diff_eq!(value, 1.0, epsilon = 1e-9);
                assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-9);
            }
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn hull_membership_interval() {
        // hull of {0, 1} on the line
        let g = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let inside = hull_membership(&g, &DVector::from_vec(vec![0.5]), 1e-9);
        assert!(inside.in_hull && inside.in_relative_interior);
        let boundary = hull_membership(&g, &DVector::from_vec(vec![0.0]), 1e-9);
        assert!(boundary.in_hull && !boundary.in_relative_interior);
        let outside = hull_membership(&g, &DVector::from_vec(vec![1.5]), 1e-9);
        assert!(!outside.in_hull);
    }

    #[test]
    fn hull_membership_triangle() {
        let g = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let centroid = hull_membership(&g, &DVector::from_vec(vec![1.0 / 3.0, 1.0 / 3.0]), 1e-9);
        assert!(centroid.in_relative_interior);
        assert_abs_diff_eq!(centroid.min_weight, 1.0 / 3.0, epsilon = 1e-9);
        let edge = hull_membership(&g, &DVector::from_vec(vec![0.5, 0.0]), 1e-9);
        assert!(edge.in_hull && !edge.in_relative_interior);
    }

    #[test]
    fn hull_membership_degenerate_singleton() {
        let g = DMatrix::from_row_slice(2, 1, &[0.3, 0.7]);
        let hit = hull_membership(&g, &DVector::from_vec(vec![0.3, 0.7]), 1e-9);
        // a singleton is its own relative interior
        assert!(hit.in_hull && hit.in_relative_interior);
        let miss = hull_membership(&g, &DVector::from_vec(vec![0.3, 0.8]), 1e-9);
        assert!(!miss.in_hull);
    }

    #[test]
    fn conic_decomposition_basic() {
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let target = DVector::from_vec(vec![2.0, 3.0]);
        let w = conic_decomposition(&g, &target).expect("decomposable");
        let mut rec = [0.0, 0.0];
        for (j, wj) in w.iter().enumerate() {
            assert!(*wj >= 0.0);
            rec[0] += wj * g[(0, j)];
            rec[1] += wj * g[(1, j)];
        }
        assert_abs_diff_eq!(rec[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rec[1], 3.0, epsilon = 1e-9);
        // basic solution: at most rank(2) nonzero weights
        assert!(w.iter().filter(|v| **v > 1e-12).count() <= 2);
    }

    #[test]
    fn conic_decomposition_rejects_outside_cone() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let target = DVector::from_vec(vec![-1.0, 0.0]);
        assert!(conic_decomposition(&g, &target).is_none());
    }
}
