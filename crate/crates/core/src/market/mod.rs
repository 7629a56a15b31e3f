//! Finite discrete-time markets on scenario trees.
//!
//! A market is a rooted tree of trading dates. Each node carries a price
//! vector for `d` risky assets (the numéraire is implicit and constantly 1);
//! terminal nodes are the atoms of the probability space and carry strictly
//! positive reference probabilities. All later analysis — martingale measure
//! polytopes, price sets for illiquid endowments, feasibility cones — reduces
//! to linear algebra over the atoms.

mod polytope;
mod prices;

pub use polytope::{
    check_nflvr, find_arbitrage, ArbitrageStrategy, MartingaleMeasurePolytope, NflvrCertificate,
    NflvrReport,
};
pub use prices::{
    arbitrage_free_price_set, check_n_trad, cone_slack_k, membership_k, membership_l,
    superreplication_cost, PriceSet, BOUNDARY_MARGIN,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for checking probability masses sum to one.
pub const PROBABILITY_MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("atom probability at index {index} is {value}; probabilities must be strictly positive")]
    NonPositiveProbability { index: usize, value: f64 },
    #[error("atom probabilities sum to {sum}, not 1")]
    ProbabilityMassMismatch { sum: f64 },
    #[error("tree is disconnected or malformed: {reason}")]
    DisconnectedTree { reason: String },
    #[error("node {node} has {children} child(ren); every non-terminal node needs at least 2")]
    DegenerateBranching { node: usize, children: usize },
    #[error("market has {terminals} terminal nodes but {atoms} atom probabilities")]
    AtomCountMismatch { terminals: usize, atoms: usize },
    #[error("node {node} has a price vector of length {found}, expected {expected}")]
    PriceDimensionMismatch {
        node: usize,
        found: usize,
        expected: usize,
    },
    #[error("price at node {node} is not finite")]
    NonFinitePrice { node: usize },
    #[error("no equivalent martingale measure: {reason}")]
    NoMartingaleMeasure { reason: String },
    #[error("endowment bundle is empty (N = 0) where a payoff is required")]
    EmptyBundle,
    #[error("endowment payoff {index} has {found} entries, expected one per atom ({expected})")]
    EndowmentDimensionMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("vertex enumeration budget exceeded: C({atoms}, {rank}) bases")]
    EnumerationBudgetExceeded { atoms: usize, rank: usize },
    #[error("probability measure invalid: {reason}")]
    InvalidMeasure { reason: String },
}

/// Plain-data description of a market, the shape ingested from JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    /// Reference probabilities of the terminal states, in terminal-node order.
    pub atoms: Vec<f64>,
    /// Parent index per node; exactly one entry is `null` (the root).
    pub tree: Vec<Option<usize>>,
    /// Per node, the price vector of the `d` risky assets.
    pub prices: Vec<Vec<f64>>,
    /// `N` endowment payoffs, each one value per atom. May be empty.
    #[serde(default)]
    pub endowments: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<usize>,
    children: Vec<usize>,
}

/// A validated finite market: scenario tree, prices, reference measure.
#[derive(Debug, Clone)]
pub struct FiniteMarket {
    nodes: Vec<Node>,
    prices: Vec<Vec<f64>>,
    /// Terminal node ids in increasing order; atom `i` lives at `terminals[i]`.
    terminals: Vec<usize>,
    atom_probabilities: Vec<f64>,
    assets: usize,
    horizon: usize,
}

impl FiniteMarket {
    /// Number of atoms (terminal states).
    pub fn num_atoms(&self) -> usize {
        self.terminals.len()
    }

    /// Number of risky assets.
    pub fn num_assets(&self) -> usize {
        self.assets
    }

    /// Number of periods (maximal depth of a terminal node).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        // validated: first node with no parent
        self.nodes.iter().position(|n| n.parent.is_none()).unwrap()
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.nodes[node].children
    }

    pub fn is_terminal(&self, node: usize) -> bool {
        self.nodes[node].children.is_empty()
    }

    pub fn price(&self, node: usize, asset: usize) -> f64 {
        self.prices[node][asset]
    }

    pub fn atom_probabilities(&self) -> &[f64] {
        &self.atom_probabilities
    }

    /// The reference measure as a `ProbabilityMeasure` (always equivalent).
    pub fn reference_measure(&self) -> ProbabilityMeasure {
        ProbabilityMeasure::new(self.atom_probabilities.clone())
            .expect("validated at construction")
    }

    /// Terminal node id of atom `i`.
    pub fn terminal_node(&self, atom: usize) -> usize {
        self.terminals[atom]
    }

    /// Atoms (indices) whose path passes through `node`, together with the
    /// child of `node` on that path. Empty for terminal nodes.
    fn atoms_through(&self, node: usize) -> Vec<(usize, usize)> {
        let mut result = Vec::new();
        for (atom, &t) in self.terminals.iter().enumerate() {
            let mut cur = t;
            while let Some(p) = self.nodes[cur].parent {
                if p == node {
                    result.push((atom, cur));
                    break;
                }
                cur = p;
            }
        }
        result
    }

    /// One-step martingale increment rows, one per (non-terminal node, asset):
    /// row · z = Σ_atoms z_i (S_j(child on path) − S_j(node)). A nonnegative
    /// measure vector `z` prices every asset as a martingale iff all rows
    /// vanish on it. The rows are simultaneously the terminal gains of the
    /// elementary strategies "hold one unit of asset j at node v".
    pub fn martingale_rows(&self) -> (nalgebra::DMatrix<f64>, Vec<(usize, usize)>) {
        let m = self.num_atoms();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for v in 0..self.nodes.len() {
            if self.is_terminal(v) {
                continue;
            }
            let through = self.atoms_through(v);
            for j in 0..self.assets {
                let mut row = vec![0.0; m];
                for &(atom, child) in &through {
                    row[atom] = self.prices[child][j] - self.prices[v][j];
                }
                rows.push(row);
                labels.push((v, j));
            }
        }
        let nrows = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        (nalgebra::DMatrix::from_row_slice(nrows, m, &flat), labels)
    }

    /// Terminal price of asset `j` at atom `i`.
    pub fn terminal_price(&self, atom: usize, asset: usize) -> f64 {
        self.prices[self.terminals[atom]][asset]
    }
}

/// Build and validate a market from its plain-data description.
pub fn build_market(spec: &MarketSpec) -> Result<FiniteMarket, MarketError> {
    let n = spec.tree.len();
    if n == 0 {
        return Err(MarketError::DisconnectedTree {
            reason: "empty tree".into(),
        });
    }
    if spec.prices.len() != n {
        return Err(MarketError::DisconnectedTree {
            reason: format!("{} nodes but {} price vectors", n, spec.prices.len()),
        });
    }

    // parents and children
    let mut roots = Vec::new();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, parent) in spec.tree.iter().enumerate() {
        match parent {
            None => roots.push(i),
            Some(p) => {
                if *p >= n {
                    return Err(MarketError::DisconnectedTree {
                        reason: format!("node {i} refers to nonexistent parent {p}"),
                    });
                }
                if *p == i {
                    return Err(MarketError::DisconnectedTree {
                        reason: format!("node {i} is its own parent"),
                    });
                }
                children[*p].push(i);
            }
        }
    }
    if roots.len() != 1 {
        return Err(MarketError::DisconnectedTree {
            reason: format!("{} roots found, expected exactly 1", roots.len()),
        });
    }
    let root = roots[0];

    // depths via BFS from the root; also detects unreachable nodes and cycles
    let mut depth = vec![usize::MAX; n];
    depth[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    let mut reached = 1usize;
    while let Some(v) = queue.pop_front() {
        for &c in &children[v] {
            if depth[c] != usize::MAX {
                return Err(MarketError::DisconnectedTree {
                    reason: format!("node {c} reached twice"),
                });
            }
            depth[c] = depth[v] + 1;
            reached += 1;
            queue.push_back(c);
        }
    }
    if reached != n {
        return Err(MarketError::DisconnectedTree {
            reason: format!("{} of {} nodes unreachable from the root", n - reached, n),
        });
    }

    // branching
    for (v, ch) in children.iter().enumerate() {
        if ch.len() == 1 {
            return Err(MarketError::DegenerateBranching {
                node: v,
                children: 1,
            });
        }
    }

    // prices
    let assets = spec.prices[root].len();
    for (v, pv) in spec.prices.iter().enumerate() {
        if pv.len() != assets {
            return Err(MarketError::PriceDimensionMismatch {
                node: v,
                found: pv.len(),
                expected: assets,
            });
        }
        if pv.iter().any(|p| !p.is_finite()) {
            return Err(MarketError::NonFinitePrice { node: v });
        }
    }

    // atoms
    let terminals: Vec<usize> = (0..n).filter(|&v| children[v].is_empty()).collect();
    if terminals.len() != spec.atoms.len() {
        return Err(MarketError::AtomCountMismatch {
            terminals: terminals.len(),
            atoms: spec.atoms.len(),
        });
    }
    for (i, &p) in spec.atoms.iter().enumerate() {
        if !(p > 0.0) || !p.is_finite() {
            return Err(MarketError::NonPositiveProbability { index: i, value: p });
        }
    }
    let mass: f64 = spec.atoms.iter().sum();
    if (mass - 1.0).abs() > PROBABILITY_MASS_TOL {
        return Err(MarketError::ProbabilityMassMismatch { sum: mass });
    }

    let horizon = terminals.iter().map(|&t| depth[t]).max().unwrap_or(0);
    if horizon == 0 {
        return Err(MarketError::DisconnectedTree {
            reason: "market needs at least one period".into(),
        });
    }

    let nodes = (0..n)
        .map(|i| Node {
            parent: spec.tree[i],
            children: children[i].clone(),
        })
        .collect();

    Ok(FiniteMarket {
        nodes,
        prices: spec.prices.clone(),
        terminals,
        atom_probabilities: spec.atoms.clone(),
        assets,
        horizon,
    })
}

/// A probability measure on the atoms of a market.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMeasure {
    weights: Vec<f64>,
    equivalent: bool,
}

impl ProbabilityMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self, MarketError> {
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(MarketError::InvalidMeasure {
                reason: "negative or non-finite weight".into(),
            });
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > PROBABILITY_MASS_TOL {
            return Err(MarketError::InvalidMeasure {
                reason: format!("weights sum to {mass}"),
            });
        }
        let equivalent = weights.iter().all(|w| *w > 0.0);
        Ok(ProbabilityMeasure {
            weights,
            equivalent,
        })
    }

    /// Reweight the measure by a density `z` (componentwise `w_i z_i`),
    /// renormalizing away the rounding in `E[z] = 1`.
    pub fn reweighted(&self, density: &[f64]) -> Result<Self, MarketError> {
        if density.len() != self.weights.len() {
            return Err(MarketError::InvalidMeasure {
                reason: "density dimension mismatch".into(),
            });
        }
        let mut w: Vec<f64> = self
            .weights
            .iter()
            .zip(density)
            .map(|(wi, zi)| wi * zi)
            .collect();
        let mass: f64 = w.iter().sum();
        if !(mass > 0.0) {
            return Err(MarketError::InvalidMeasure {
                reason: "density annihilates all mass".into(),
            });
        }
        for wi in &mut w {
            *wi /= mass;
        }
        Self::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_equivalent(&self) -> bool {
        self.equivalent
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expectation(&self, payoff: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(payoff)
            .map(|(w, x)| w * x)
            .sum()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_vec(self.weights.clone())
    }
}

/// A bundle of `N ≥ 0` illiquid endowment payoffs over the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct EndowmentBundle {
    payoffs: Vec<Vec<f64>>,
    atoms: usize,
}

impl EndowmentBundle {
    pub fn new(market: &FiniteMarket, payoffs: Vec<Vec<f64>>) -> Result<Self, MarketError> {
        let atoms = market.num_atoms();
        for (index, p) in payoffs.iter().enumerate() {
            if p.len() != atoms {
                return Err(MarketError::EndowmentDimensionMismatch {
                    index,
                    found: p.len(),
                    expected: atoms,
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(MarketError::EndowmentDimensionMismatch {
                    index,
                    found: p.len(),
                    expected: atoms,
                });
            }
        }
        Ok(EndowmentBundle { payoffs, atoms })
    }

    /// The empty bundle (N = 0); all price/position arguments degenerate.
    pub fn empty(market: &FiniteMarket) -> Self {
        EndowmentBundle {
            payoffs: Vec::new(),
            atoms: market.num_atoms(),
        }
    }

    pub fn dim(&self) -> usize {
        self.payoffs.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms
    }

    pub fn payoff(&self, j: usize) -> &[f64] {
        &self.payoffs[j]
    }

    /// ⟨q, f(ω_i)⟩ for each atom i: the scalar payoff of holding the
    /// position `q` in the bundle.
    pub fn position_payoff(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.dim(), "position dimension mismatch");
        let mut out = vec![0.0; self.atoms];
        for (j, qj) in q.iter().enumerate() {
            for (i, v) in self.payoffs[j].iter().enumerate() {
                out[i] += qj * v;
            }
        }
        out
    }

    /// Σ_j |f^j| atomwise — the payoff whose super/sub-replicability is the
    /// (always satisfied) finite-market replicability condition.
    pub fn absolute_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.atoms];
        for p in &self.payoffs {
            for (i, v) in p.iter().enumerate() {
                out[i] += v.abs();
            }
        }
        out
    }
}
