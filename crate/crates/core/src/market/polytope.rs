//! The polytope of martingale measures and the no-arbitrage certificate.
//!
//! With `m` atoms, a (not necessarily equivalent) martingale measure is a
//! vector `q ∈ R^m` with `q ≥ 0`, `Σ q_i = 1`, annihilating every one-step
//! martingale increment row. That is a standard-form polytope
//! `{q : A q = b, q ≥ 0}`, whose extreme points are basic feasible
//! solutions; we enumerate them exhaustively over column bases. At desk
//! scale (tens of atoms, low constraint rank) this is exact and fast.

use nalgebra::{DMatrix, DVector};

use super::{FiniteMarket, MarketError, ProbabilityMeasure};
use crate::numerics::newton::{
    minimize_on_affine_slice, NewtonOptions, SeparableObjective,
};
use crate::numerics::simplex::{solve_standard_form, LpOutcome};
use crate::numerics::{for_each_combination, independent_rows};

/// Vertices must satisfy every constraint of the H-representation to this
/// tolerance.
pub const VERTEX_TOL: f64 = 1e-10;
/// Two candidate vertices closer than this in sup-norm are considered equal.
const VERTEX_DEDUP_TOL: f64 = 1e-9;
/// Cap on the number of column bases the enumeration may visit.
const ENUMERATION_BUDGET: u128 = 10_000_000;

/// H-representation and enumerated extreme points of the set of martingale
/// measures. Constructed via [`MartingaleMeasurePolytope::compute`]; the
/// constructor guarantees that an *equivalent* martingale measure exists, so
/// every strictly positive convex combination of the vertices is one.
#[derive(Debug, Clone)]
pub struct MartingaleMeasurePolytope {
    /// Homogeneous one-step martingale rows over the atoms.
    martingale_rows: DMatrix<f64>,
    /// (node, asset) label per row.
    row_labels: Vec<(usize, usize)>,
    /// Enumerated extreme points (each a probability vector over atoms).
    vertices: Vec<DVector<f64>>,
}

impl MartingaleMeasurePolytope {
    /// Build the H-representation and enumerate the vertices.
    ///
    /// Errors with `NoMartingaleMeasure` when the polytope is empty or when
    /// it contains no strictly positive (equivalent) measure.
    pub fn compute(market: &FiniteMarket) -> Result<Self, MarketError> {
        let (martingale_rows, row_labels) = market.martingale_rows();
        let vertices = enumerate_vertices(&martingale_rows, market.num_atoms())?;
        if vertices.is_empty() {
            return Err(MarketError::NoMartingaleMeasure {
                reason: "the martingale constraints admit no probability measure".into(),
            });
        }
        let average = average_of(&vertices);
        if average.iter().any(|v| *v <= VERTEX_TOL) {
            return Err(MarketError::NoMartingaleMeasure {
                reason: "martingale measures exist but none is equivalent \
                         (some atom carries zero mass in all of them)"
                    .into(),
            });
        }
        Ok(MartingaleMeasurePolytope {
            martingale_rows,
            row_labels,
            vertices,
        })
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.martingale_rows.ncols()
    }

    /// The homogeneous martingale rows (gains of elementary strategies).
    pub fn martingale_rows(&self) -> &DMatrix<f64> {
        &self.martingale_rows
    }

    pub fn row_labels(&self) -> &[(usize, usize)] {
        &self.row_labels
    }

    /// E^Q[payoff] at a given vertex.
    pub fn vertex_expectation(&self, vertex: usize, payoff: &[f64]) -> f64 {
        self.vertices[vertex]
            .iter()
            .zip(payoff)
            .map(|(q, x)| q * x)
            .sum()
    }

    /// Expectations of `payoff` under every vertex.
    pub fn vertex_expectations(&self, payoff: &[f64]) -> Vec<f64> {
        (0..self.vertices.len())
            .map(|k| self.vertex_expectation(k, payoff))
            .collect()
    }

    /// Uniform average of the vertices — strictly positive by construction.
    pub fn barycenter(&self) -> DVector<f64> {
        average_of(&self.vertices)
    }

    /// The analytic center: argmax Σ log q_i over the polytope. A canonical
    /// equivalent martingale measure, useful as a certificate and as an
    /// interior starting point.
    pub fn analytic_center(&self) -> ProbabilityMeasure {
        let m = self.num_atoms();
        let value = |z: &DVector<f64>| -> f64 {
            let mut s = 0.0;
            for v in z.iter() {
                if *v <= 0.0 {
                    return f64::INFINITY;
                }
                s -= v.ln();
            }
            s
        };
        let gradient =
            |z: &DVector<f64>| DVector::from_iterator(m, z.iter().map(|v| -1.0 / v));
        let hessian =
            |z: &DVector<f64>| DVector::from_iterator(m, z.iter().map(|v| 1.0 / (v * v)));
        let objective = SeparableObjective {
            value: &value,
            gradient: &gradient,
            hessian_diag: &hessian,
        };
        // constraints: martingale rows plus the simplex row (Σ q = 1 is
        // preserved because the start satisfies it and steps stay in the
        // affine slice).
        let mut constraints = DMatrix::<f64>::zeros(self.martingale_rows.nrows() + 1, m);
        constraints
            .view_mut((0, 0), (self.martingale_rows.nrows(), m))
            .copy_from(&self.martingale_rows);
        for j in 0..m {
            constraints[(self.martingale_rows.nrows(), j)] = 1.0;
        }
        let start = self.barycenter();
        let center = minimize_on_affine_slice(
            &objective,
            &constraints,
            &start,
            &NewtonOptions::default(),
        )
        .map(|sol| sol.z)
        .unwrap_or(start);
        ProbabilityMeasure::new(center.iter().copied().collect())
            .expect("analytic center is a probability vector")
    }

    /// Decompose a measure in the polytope as a convex combination of
    /// vertices (a basic solution: support ≤ rank + 1). Returns weights per
    /// vertex, or `None` if `q` is not in the polytope.
    pub fn convex_decomposition(&self, q: &DVector<f64>) -> Option<Vec<f64>> {
        let k = self.vertices.len();
        let m = self.num_atoms();
        let mut gen = DMatrix::<f64>::zeros(m + 1, k);
        for (j, v) in self.vertices.iter().enumerate() {
            for i in 0..m {
                gen[(i, j)] = v[i];
            }
            gen[(m, j)] = 1.0;
        }
        let mut target = DVector::<f64>::zeros(m + 1);
        for i in 0..m {
            target[i] = q[i];
        }
        target[m] = 1.0;
        crate::numerics::simplex::conic_decomposition(&gen, &target)
    }

    /// Restrict to the slice `{q in polytope : E^Q[f^j] = p_j ∀j}` and
    /// enumerate its vertices. Returns an empty list when the slice is empty.
    pub fn slice_vertices(
        &self,
        payoffs: &[&[f64]],
        targets: &[f64],
    ) -> Result<Vec<DVector<f64>>, MarketError> {
        assert_eq!(payoffs.len(), targets.len());
        let m = self.num_atoms();
        let base_rows = self.martingale_rows.nrows();
        let mut rows = DMatrix::<f64>::zeros(base_rows + payoffs.len(), m);
        rows.view_mut((0, 0), (base_rows, m))
            .copy_from(&self.martingale_rows);
        for (e, payoff) in payoffs.iter().enumerate() {
            for i in 0..m {
                rows[(base_rows + e, i)] = payoff[i];
            }
        }
        // homogeneous part rhs: martingale rows are 0, payoff rows are p_j;
        // enumerate_vertices expects homogeneous rows + simplex, so shift the
        // payoff rows: E^Q f = p  ⟺  (f − p·1)·q = 0 given Σ q = 1.
        for (e, &t) in targets.iter().enumerate() {
            for i in 0..m {
                rows[(base_rows + e, i)] -= t;
            }
        }
        enumerate_vertices(&rows, m)
    }
}

fn average_of(vertices: &[DVector<f64>]) -> DVector<f64> {
    let m = vertices[0].len();
    let mut avg = DVector::<f64>::zeros(m);
    for v in vertices {
        avg += v;
    }
    avg / vertices.len() as f64
}

/// Enumerate the vertices of `{q ≥ 0 : Rq = 0, Σ q = 1}` by exhaustive
/// basis enumeration, where `R` holds homogeneous rows.
fn enumerate_vertices(
    homogeneous_rows: &DMatrix<f64>,
    m: usize,
) -> Result<Vec<DVector<f64>>, MarketError> {
    // full system: homogeneous rows, then the simplex row
    let nrows = homogeneous_rows.nrows() + 1;
    let mut a = DMatrix::<f64>::zeros(nrows, m);
    a.view_mut((0, 0), (homogeneous_rows.nrows(), m))
        .copy_from(homogeneous_rows);
    for j in 0..m {
        a[(nrows - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(nrows);
    b[nrows - 1] = 1.0;

    // independent rows only — the basis size is the row rank
    let keep = independent_rows(&a, 1e-12);
    let rank = keep.len();
    let mut a_red = DMatrix::<f64>::zeros(rank, m);
    let mut b_red = DVector::<f64>::zeros(rank);
    for (k, &i) in keep.iter().enumerate() {
        a_red.row_mut(k).copy_from(&a.row(i));
        b_red[k] = b[i];
    }

    if binomial_coefficient(m, rank) > ENUMERATION_BUDGET {
        return Err(MarketError::EnumerationBudgetExceeded { atoms: m, rank });
    }

    let mut vertices: Vec<DVector<f64>> = Vec::new();
    let mut basis_matrix = DMatrix::<f64>::zeros(rank, rank);
    for_each_combination(m, rank, |cols| {
        for (c, &j) in cols.iter().enumerate() {
            basis_matrix.set_column(c, &a_red.column(j));
        }
        let lu = basis_matrix.clone().lu();
        let Some(sol) = lu.solve(&b_red) else {
            return;
        };
        // numerical sanity: reject badly conditioned solves
        if sol.iter().any(|v| !v.is_finite()) {
            return;
        }
        if sol.iter().any(|v| *v < -VERTEX_TOL) {
            return;
        }
        let mut q = DVector::<f64>::zeros(m);
        for (c, &j) in cols.iter().enumerate() {
            q[j] = sol[c].max(0.0);
        }
        // verify against the full system
        let resid = (&a * &q - &b).amax();
        if resid > VERTEX_TOL {
            return;
        }
        if !vertices
            .iter()
            .any(|v| (v - &q).amax() < VERTEX_DEDUP_TOL)
        {
            vertices.push(q);
        }
    });
    Ok(vertices)
}

fn binomial_coefficient(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if result > ENUMERATION_BUDGET {
            return u128::MAX;
        }
    }
    result
}

/// An arbitrage: a self-financing strategy entered at zero cost whose
/// terminal gain is nonnegative and strictly positive on some atom.
#[derive(Debug, Clone)]
pub struct ArbitrageStrategy {
    /// Holding per (node, asset) elementary position.
    pub holdings: Vec<((usize, usize), f64)>,
    /// Terminal gain per atom, (H·S)_T.
    pub terminal_gain: Vec<f64>,
}

/// Certificate accompanying the no-free-lunch check.
#[derive(Debug, Clone)]
pub enum NflvrCertificate {
    /// An equivalent martingale measure (the polytope's analytic center).
    EquivalentMeasure(ProbabilityMeasure),
    /// An explicit arbitrage strategy.
    Arbitrage(ArbitrageStrategy),
}

#[derive(Debug, Clone)]
pub struct NflvrReport {
    pub holds: bool,
    pub certificate: NflvrCertificate,
}

/// Check (NFLVR): does an equivalent martingale measure exist? Returns the
/// analytic center as a certificate when it does, and an explicit arbitrage
/// strategy when it does not (the two cases are exhaustive on finite
/// markets: Stiemke's alternative).
pub fn check_nflvr(market: &FiniteMarket) -> NflvrReport {
    match MartingaleMeasurePolytope::compute(market) {
        Ok(polytope) => NflvrReport {
            holds: true,
            certificate: NflvrCertificate::EquivalentMeasure(polytope.analytic_center()),
        },
        Err(MarketError::NoMartingaleMeasure { .. }) => {
            let strategy =
                find_arbitrage(market).expect("Stiemke alternative: arbitrage must exist");
            NflvrReport {
                holds: false,
                certificate: NflvrCertificate::Arbitrage(strategy),
            }
        }
        Err(other) => panic!("vertex enumeration failed: {other}"),
    }
}

/// Search for a strategy whose terminal gain is ≥ 0 and > 0 somewhere, by
/// maximizing the total gain subject to a box cap. Returns `None` when the
/// market admits no arbitrage.
pub fn find_arbitrage(market: &FiniteMarket) -> Option<ArbitrageStrategy> {
    let (rows, labels) = market.martingale_rows();
    let r = rows.nrows();
    let m = rows.ncols();
    // variables: h⁺ (r), h⁻ (r), g (m), u (m)
    // constraints: Mᵀ(h⁺ − h⁻) − g = 0   (m rows)
    //              g + u = 1             (m rows)
    // objective:   max Σ g
    let nvars = 2 * r + 2 * m;
    let mut a = DMatrix::<f64>::zeros(2 * m, nvars);
    let mut b = DVector::<f64>::zeros(2 * m);
    for i in 0..m {
        for k in 0..r {
            a[(i, k)] = rows[(k, i)];
            a[(i, r + k)] = -rows[(k, i)];
        }
        a[(i, 2 * r + i)] = -1.0;
        b[i] = 0.0;
        a[(m + i, 2 * r + i)] = 1.0;
        a[(m + i, 2 * r + m + i)] = 1.0;
        b[m + i] = 1.0;
    }
    let mut c = DVector::<f64>::zeros(nvars);
    for i in 0..m {
        c[2 * r + i] = 1.0;
    }
    match solve_standard_form(&a, &b, &c) {
        LpOutcome::Optimal { x, value } if value > 1e-9 => {
            let mut holdings = Vec::new();
            let mut h = vec![0.0; r];
            for k in 0..r {
                h[k] = x[k] - x[r + k];
                if h[k].abs() > 1e-12 {
                    holdings.push((labels[k], h[k]));
                }
            }
            let mut terminal_gain = vec![0.0; m];
            for i in 0..m {
                for k in 0..r {
                    terminal_gain[i] += h[k] * rows[(k, i)];
                }
            }
            Some(ArbitrageStrategy {
                holdings,
                terminal_gain,
            })
        }
        _ => None,
    }
}
