//! Small dense numerical kernels shared across the crate: a simplex solver
//! for the tiny linear programs that show up in polytope geometry (feasibility,
//! hull membership, extreme-point decomposition) and an equality-constrained
//! damped Newton method for the smooth convex programs at the heart of the
//! primal/dual optimizers.

pub mod newton;
pub mod simplex;

pub use newton::independent_rows;

/// Relative-interior membership margin used when a strictly positive
/// barycentric weight is required (see `simplex::hull_membership`).
pub const RELATIVE_INTERIOR_MARGIN: f64 = 1e-9;

/// Greatest-integer-like combination iterator: all `k`-subsets of `0..n` in
/// lexicographic order. Used by the basis enumeration in the market module.
pub fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        // find the rightmost index that can still be incremented
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + n - k {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
