//! Damped Newton method for smooth strictly convex objectives minimized over
//! an affine slice of the strictly positive orthant:
//!
//! ```text
//! minimize φ(z)   subject to   M z = M z₀,   z > 0 (componentwise),
//! ```
//!
//! where φ is separable (diagonal Hessian) and blows up or has unbounded
//! gradient at the boundary, so the positivity constraint never becomes
//! active at the minimizer. Steps solve the equality-constrained Newton KKT
//! system via a Schur complement on the (small) constraint block; a
//! fraction-to-boundary rule keeps iterates strictly positive and an Armijo
//! backtracking line search (constant 1e-4) globalizes convergence.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Armijo sufficient-decrease constant used by the line search.
pub const ARMIJO_C1: f64 = 1e-4;
/// Fraction-to-boundary factor keeping iterates strictly positive.
const BOUNDARY_FRACTION: f64 = 0.995;

/// A separable smooth convex objective. `value` may return `f64::INFINITY`
/// outside the effective domain; `gradient`/`hessian_diag` are only invoked
/// at points where `value` is finite.
pub struct SeparableObjective<'a> {
    pub value: &'a dyn Fn(&DVector<f64>) -> f64,
    pub gradient: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
    /// Diagonal of the Hessian; entries must be strictly positive.
    pub hessian_diag: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stationarity target: sup-norm of the reduced gradient g + Mᵀν.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-11,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub z: DVector<f64>,
    pub value: f64,
    /// Multipliers for the rows of the *original* constraint matrix
    /// (zero on rows dropped as linearly dependent).
    pub multipliers: DVector<f64>,
    /// Achieved sup-norm of g + Mᵀν.
    pub stationarity: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("line search stalled at stationarity {stationarity:.3e} after {iterations} iterations")]
    Stalled { stationarity: f64, iterations: usize },
    #[error("iteration limit reached at stationarity {stationarity:.3e}")]
    IterationLimit { stationarity: f64 },
    #[error("starting point is not strictly positive or has non-finite objective")]
    BadStart,
}

/// Indices of a maximal linearly independent subset of the rows of `m`,
/// found by incremental row elimination with partial pivoting.
pub fn independent_rows(m: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let ncols = m.ncols();
    let mut pivots: Vec<(usize, DVector<f64>)> = Vec::new(); // (pivot col, reduced row)
    let mut selected = Vec::new();
    for i in 0..m.nrows() {
        let mut row: DVector<f64> = m.row(i).transpose().into_owned();
        let scale = row.amax().max(1.0);
        for (pc, pr) in &pivots {
            let factor = row[*pc];
            if factor != 0.0 {
                row -= pr * factor;
            }
        }
        // find the largest remaining entry
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for j in 0..ncols {
            if row[j].abs() > best_abs {
                best_abs = row[j].abs();
                best = j;
            }
        }
        if best_abs > tol * scale {
            let r = &row / row[best];
            pivots.push((best, r));
            selected.push(i);
        }
    }
    selected
}

/// Minimize `objective` over `{z : Mz = Mz₀, z > 0}` starting from the
/// strictly positive feasible point `z0`.
pub fn minimize_on_affine_slice(
    objective: &SeparableObjective,
    constraints: &DMatrix<f64>,
    z0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonSolution, NewtonError> {
    let n = z0.len();
    if z0.iter().any(|v| *v <= 0.0) {
        return Err(NewtonError::BadStart);
    }
    let mut z = z0.clone();
    let mut fz = (objective.value)(&z);
    if !fz.is_finite() {
        return Err(NewtonError::BadStart);
    }

    // Work with an independent subset of constraint rows so the Schur
    // complement stays positive definite.
    let rows = independent_rows(constraints, 1e-12);
    let r = rows.len();
    let mut m_red = DMatrix::<f64>::zeros(r, n);
    for (k, &i) in rows.iter().enumerate() {
        m_red.row_mut(k).copy_from(&constraints.row(i));
    }

    let mut nu_red = DVector::<f64>::zeros(r);
    let mut stationarity = f64::INFINITY;
    let mut flat_steps = 0usize;

    for iter in 0..opts.max_iter {
        let g = (objective.gradient)(&z);
        let h = (objective.hessian_diag)(&z);
        debug_assert!(h.iter().all(|v| *v > 0.0), "Hessian diagonal must be positive");

        // Solve  [H Mᵀ; M 0] [dz; ν] = [-g; 0]  via the Schur complement
        //   (M H⁻¹ Mᵀ) ν = -M H⁻¹ g,   dz = -H⁻¹ (g + Mᵀν).
        let hinv_g = DVector::from_iterator(n, g.iter().zip(h.iter()).map(|(gi, hi)| gi / hi));
        let dz;
        if r > 0 {
            let mut s = DMatrix::<f64>::zeros(r, r);
            for a in 0..r {
                for b in a..r {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += m_red[(a, j)] * m_red[(b, j)] / h[j];
                    }
                    s[(a, b)] = acc;
                    s[(b, a)] = acc;
                }
            }
            let rhs = -(&m_red * &hinv_g);
            nu_red = match s.clone().cholesky() {
                Some(chol) => {
                    let mut nu = chol.solve(&rhs);
                    // One pass of iterative refinement: the multiplier
                    // accuracy sets the floor of the achievable stationarity,
                    // and refinement wins back the condition number of S.
                    let res = &rhs - &s * &nu;
                    nu += chol.solve(&res);
                    nu
                }
                None => s
                    .lu()
                    .solve(&rhs)
                    .unwrap_or_else(|| DVector::zeros(r)),
            };
            let mt_nu = m_red.transpose() * &nu_red;
            dz = DVector::from_iterator(
                n,
                g.iter()
                    .zip(mt_nu.iter())
                    .zip(h.iter())
                    .map(|((gi, mi), hi)| -(gi + mi) / hi),
            );
            stationarity = (0..n).map(|j| (g[j] + mt_nu[j]).abs()).fold(0.0, f64::max);
        } else {
            dz = -&hinv_g;
            stationarity = g.amax();
        }

        if stationarity < opts.tol {
            return Ok(finish(z, fz, &rows, nu_red, constraints.nrows(), stationarity, iter));
        }

        // Directional derivative along dz. In exact arithmetic it equals
        // g·dz, but that inner product suffers catastrophic cancellation once
        // the iterate is near the optimum (large gradient entries against a
        // tiny step); the Newton-decrement form −dzᵀH dz is a sum of squares
        // and keeps its sign at every scale.
        let slope: f64 = -(0..n).map(|j| dz[j] * dz[j] * h[j]).sum::<f64>();

        // Once the predicted decrease falls below the f64 resolution of the
        // objective, the Armijo test can no longer certify progress even
        // though the Newton step itself keeps contracting the residual
        // quadratically — take the (boundary-capped) full step
        // unconditionally for a few iterations before giving up.
        if -slope <= 1e-13 * fz.abs().max(1.0) {
            flat_steps += 1;
            if flat_steps <= 8 {
                let mut t_cap = 1.0f64;
                for j in 0..n {
                    if dz[j] < 0.0 {
                        t_cap = t_cap.min(BOUNDARY_FRACTION * z[j] / (-dz[j]));
                    }
                }
                let cand = &z + &dz * t_cap.min(1.0);
                let fc = (objective.value)(&cand);
                if cand.iter().all(|v| *v > 0.0) && fc.is_finite() {
                    z = cand;
                    fz = fc;
                    continue;
                }
            }
            if stationarity < opts.tol.max(1e-9) {
                return Ok(finish(z, fz, &rows, nu_red, constraints.nrows(), stationarity, iter));
            }
            return Err(NewtonError::Stalled {
                stationarity,
                iterations: iter,
            });
        }
        flat_steps = 0;

        // fraction-to-boundary step cap
        let mut t_max = 1.0f64;
        for j in 0..n {
            if dz[j] < 0.0 {
                t_max = t_max.min(BOUNDARY_FRACTION * z[j] / (-dz[j]));
            }
        }
        let mut t = t_max.min(1.0);
        let mut accepted = false;
        for _ in 0..80 {
            let cand = &z + &dz * t;
            if cand.iter().all(|v| *v > 0.0) {
                let fc = (objective.value)(&cand);
                if fc.is_finite() && fc <= fz + ARMIJO_C1 * t * slope {
                    z = cand;
                    fz = fc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        if !accepted {
            // Endgame rescue: a tiny Newton step whose decrease drowns in
            // evaluation noise still contracts the residual — take it.
            let tiny = dz.amax() <= 1e-6 * (1.0 + z.amax());
            if tiny && flat_steps < 8 {
                flat_steps += 1;
                let mut t_cap = 1.0f64;
                for j in 0..n {
                    if dz[j] < 0.0 {
                        t_cap = t_cap.min(BOUNDARY_FRACTION * z[j] / (-dz[j]));
                    }
                }
                let cand = &z + &dz * t_cap.min(1.0);
                let fc = (objective.value)(&cand);
                if cand.iter().all(|v| *v > 0.0) && fc.is_finite() {
                    z = cand;
                    fz = fc;
                    continue;
                }
            }
            if stationarity < opts.tol.max(1e-9) {
                return Ok(finish(z, fz, &rows, nu_red, constraints.nrows(), stationarity, iter));
            }
            return Err(NewtonError::Stalled {
                stationarity,
                iterations: iter,
            });
        }
    }
    Err(NewtonError::IterationLimit { stationarity })
}

fn finish(
    z: DVector<f64>,
    value: f64,
    rows: &[usize],
    nu_red: DVector<f64>,
    total_rows: usize,
    stationarity: f64,
    iterations: usize,
) -> NewtonSolution {
    let mut multipliers = DVector::<f64>::zeros(total_rows);
    for (k, &i) in rows.iter().enumerate() {
        multipliers[i] = nu_red[k];
    }
    NewtonSolution {
        z,
        value,
        multipliers,
        stationarity,
        iterations,
    }
}
