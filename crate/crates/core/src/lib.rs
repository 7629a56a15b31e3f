//! Convex-duality engine for expected-utility maximization on finite
//! scenario-tree markets.
//!
//! The library is organized around four layers:
//!
//! * [`market`] — finite scenario trees, the polytope of martingale measures,
//!   arbitrage-free price sets for illiquid endowments, and the feasibility
//!   cones for primal/dual starting points.
//! * [`convex`] — utility functions, their convex conjugates, and the
//!   variational toolkit (epsilon extensions, convex minorants, epi- and
//!   graphical convergence checks) used to reason about limits of utilities.
//! * [`optimizer`] — the primal/dual solvers for expected-utility
//!   maximization with a random endowment, superdifferential computation,
//!   and marginal utility-based price sets.
//! * [`stability`] — perturbation families, the stability experiment runner,
//!   uniform-integrability diagnostics, and the diagonal instability
//!   experiment on refined binomial discretizations.
//!
//! Everything is exactly finite-dimensional: a market with `m` atoms turns
//! the space of payoffs into `R^m`, the martingale measures into a polytope
//! `{q ≥ 0 : Aq = b}`, and the dual problem into a smooth convex program
//! over a polyhedral cone. The solvers exploit this structure rather than
//! approximating the continuous-time theory.

pub mod config;
pub mod convex;
pub mod market;
pub mod numerics;
pub mod optimizer;
pub mod report;
pub mod stability;
