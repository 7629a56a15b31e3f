//! JSON experiment configuration: strictly validated schema types and the
//! construction of runtime objects (market, endowment bundle, utility,
//! perturbation family, thresholds) from them.  Unknown keys are rejected
//! everywhere so that typos fail loudly before any computation starts.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::convex::{ConvexError, TabulatedConcave, UtilityFunction};
use crate::market::{build_market, EndowmentBundle, FiniteMarket, MarketError, MarketSpec};
use crate::stability::{CounterexampleSetup, PerturbationFamily, StabilityThresholds};

/// Configuration loading or validation failure.
#[derive(Debug, Error)]
pub enum ConfigError {
    /// The file could not be read.
    #[error("cannot read config {path}: {source}")]
    Io {
        /// Offending path.
        path: String,
        /// Underlying I/O error.
        #[source]
        source: std::io::Error,
    },
    /// The document is not valid JSON for the schema.
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    /// The document parsed but violates a semantic constraint.
    #[error("invalid config: {reason}")]
    Invalid {
        /// What was violated.
        reason: String,
    },
    /// Market construction from the configured spec failed.
    #[error(transparent)]
    Market(#[from] MarketError),
    /// Utility construction from the configured parameters failed.
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

fn invalid(reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        reason: reason.into(),
    }
}

/// Top-level experiment configuration document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The market to build.
    pub market: MarketConfig,
    /// Per-asset terminal payoffs of the nontraded endowment bundle.
    #[serde(default)]
    pub endowments: Vec<Vec<f64>>,
    /// Limit utility function.
    #[serde(default)]
    pub utility: Option<UtilityConfig>,
    /// Perturbation family for the stability experiment.
    #[serde(default)]
    pub family: Option<FamilyConfig>,
    /// Evaluation point(s) for single solves.
    #[serde(default)]
    pub solve: Option<SolveConfig>,
    /// Instability experiment parameters.
    #[serde(default)]
    pub counterexample: Option<CounterexampleConfig>,
    /// Largest family index of the stability ladder.
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Verdict thresholds.
    #[serde(default)]
    pub thresholds: Option<ThresholdConfig>,
    /// Seed recorded in summaries for reproducibility bookkeeping.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Market selection: a named catalog entry or an inline scenario-tree spec.
///
/// Serialized as `{"kind": "named", "name": …}` or `{"kind": "spec",
/// "atoms": …, "tree": …, "prices": …}`.  Deserialization is manual because
/// serde silently drops `deny_unknown_fields` on internally tagged enums,
/// and typos must fail loudly.
#[derive(Debug)]
pub enum MarketConfig {
    /// One of the built-in markets: `binomial`, `trinomial`,
    /// `two_period_binomial`.
    Named {
        /// Catalog name.
        name: String,
    },
    /// Inline scenario tree.
    Spec {
        /// Terminal atom probabilities.
        atoms: Vec<f64>,
        /// Parent index per node (`null` for the root).
        tree: Vec<Option<usize>>,
        /// Per-node asset price vectors.
        prices: Vec<Vec<f64>>,
    },
}

impl<'de> Deserialize<'de> for MarketConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let (kind, rest) = split_kind(deserializer)?;
        match kind.as_str() {
            "named" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Payload {
                    name: String,
                }
                let p: Payload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(MarketConfig::Named { name: p.name })
            }
            "spec" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Payload {
                    atoms: Vec<f64>,
                    tree: Vec<Option<usize>>,
                    prices: Vec<Vec<f64>>,
                }
                let p: Payload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(MarketConfig::Spec {
                    atoms: p.atoms,
                    tree: p.tree,
                    prices: p.prices,
                })
            }
            other => Err(D::Error::unknown_variant(other, &["named", "spec"])),
        }
    }
}

/// Utility function selection.
///
/// Serialized as `{"kind": "log"}`, `{"kind": "power", "alpha": …}`, or
/// `{"kind": "capped_power", "alpha": …, "cap": …}`; manual deserialization
/// for the same strictness reason as [`MarketConfig`].
#[derive(Debug, Clone)]
pub enum UtilityConfig {
    /// Logarithmic utility.
    Log,
    /// Power utility `(x^α − 1)/α` with `α ∈ (0, 1)`.
    Power {
        /// Exponent.
        alpha: f64,
    },
    /// Bounded-above power-type utility `cap·x^α/(1 + x^α)`, realized as a
    /// tabulated interpolant (strictly increasing, strictly concave, with
    /// infinite marginal at zero and supremum `cap`).
    CappedPower {
        /// Exponent.
        alpha: f64,
        /// Upper bound.
        cap: f64,
    },
}

impl<'de> Deserialize<'de> for UtilityConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let (kind, rest) = split_kind(deserializer)?;
        match kind.as_str() {
            "log" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Payload {}
                let _: Payload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(UtilityConfig::Log)
            }
            "power" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Payload {
                    alpha: f64,
                }
                let p: Payload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(UtilityConfig::Power { alpha: p.alpha })
            }
            "capped_power" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Payload {
                    alpha: f64,
                    cap: f64,
                }
                let p: Payload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(UtilityConfig::CappedPower {
                    alpha: p.alpha,
                    cap: p.cap,
                })
            }
            other => Err(D::Error::unknown_variant(
                other,
                &["log", "power", "capped_power"],
            )),
        }
    }
}

/// Pops the `kind` tag off a JSON object, returning it with the remaining
/// fields.  Routing through [`serde_json::Value`] is fine here: the
/// configuration format is JSON by contract.
fn split_kind<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> Result<(String, serde_json::Value), D::Error> {
    use serde::de::Error;
    let mut map = serde_json::Map::deserialize(deserializer)?;
    let kind = map
        .remove("kind")
        .ok_or_else(|| D::Error::missing_field("kind"))?;
    let kind = kind
        .as_str()
        .ok_or_else(|| D::Error::custom("`kind` must be a string"))?
        .to_owned();
    Ok((kind, serde_json::Value::Object(map)))
}


/// Primal evaluation point, optionally with drift rates for family use.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalPointConfig {
    /// Initial capital.
    pub x: f64,
    /// Endowment position.
    #[serde(default)]
    pub q: Vec<f64>,
}

/// Dual evaluation point.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualPointConfig {
    /// Dual mass.
    pub y: f64,
    /// Dual bundle coordinates.
    #[serde(default)]
    pub r: Vec<f64>,
}

/// Single-solve section: where to evaluate the primal and (optionally) the
/// dual problem.  When the dual point is omitted it is derived from the
/// primal marginals, producing a conjugate-matched pair.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// Initial capital.
    pub x: f64,
    /// Endowment position.
    #[serde(default)]
    pub q: Vec<f64>,
    /// Dual mass; defaults to the capital marginal of the primal solve.
    #[serde(default)]
    pub y: Option<f64>,
    /// Dual bundle coordinates; default derived alongside `y`.
    #[serde(default)]
    pub r: Option<Vec<f64>>,
}

/// Perturbation family: densities `Z_n = 1 + ζ/n`, utilities drifting in
/// the exponent at rate `alpha_drift/n` (power limit only), and evaluation
/// points drifting at rate `1/n` toward their limits.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    /// Density bump directions; must average to zero under the reference
    /// measure for the perturbed weights to remain probabilities.
    pub zeta: Vec<f64>,
    /// Exponent drift rate; requires the power utility.
    #[serde(default)]
    pub alpha_drift: Option<f64>,
    /// Limit primal point.
    pub primal_limit: PrimalPointConfig,
    /// Primal drift rates (added as `drift/n`).
    #[serde(default)]
    pub primal_drift: Option<PrimalPointConfig>,
    /// Limit dual point.
    pub dual_limit: DualPointConfig,
    /// Dual drift rates.
    #[serde(default)]
    pub dual_drift: Option<DualPointConfig>,
}

/// Verdict thresholds (defaults match [`StabilityThresholds::default`]).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Value/derivative gap tolerance.
    #[serde(default)]
    pub value: Option<f64>,
    /// Ky–Fan gap tolerance.
    #[serde(default)]
    pub kyfan: Option<f64>,
    /// Hausdorff onset ladder.
    #[serde(default)]
    pub hausdorff: Option<Vec<f64>>,
}

impl ThresholdConfig {
    /// Materializes thresholds, filling defaults.
    pub fn build(&self) -> StabilityThresholds {
        let defaults = StabilityThresholds::default();
        StabilityThresholds {
            value: self.value.unwrap_or(defaults.value),
            kyfan: self.kyfan.unwrap_or(defaults.kyfan),
            hausdorff_ladder: self
                .hausdorff
                .clone()
                .unwrap_or(defaults.hausdorff_ladder),
        }
    }
}

/// Instability experiment parameters (defaults match
/// [`CounterexampleSetup::default`]).
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    /// Power exponent.
    pub alpha: Option<f64>,
    /// Initial capital.
    pub capital: Option<f64>,
    /// Spike size scale (`ε_n = spike_scale/n`).
    pub spike_scale: Option<f64>,
    /// Number of spiked atoms.
    pub spike_width: Option<usize>,
    /// Level of the fixed-level run.
    pub fixed_level: Option<usize>,
    /// Largest spike index of the fixed-level run.
    pub fixed_n_max: Option<usize>,
    /// Diagonal levels.
    pub diagonal_levels: Option<Vec<usize>>,
    /// Diagonal spike-index offset.
    pub diagonal_offset: Option<usize>,
}

impl CounterexampleConfig {
    /// Materializes the setup, filling defaults.
    pub fn build(&self) -> Result<CounterexampleSetup, ConfigError> {
        let defaults = CounterexampleSetup::default();
        let setup = CounterexampleSetup {
            alpha: self.alpha.unwrap_or(defaults.alpha),
            capital: self.capital.unwrap_or(defaults.capital),
            spike_scale: self.spike_scale.unwrap_or(defaults.spike_scale),
            spike_width: self.spike_width.unwrap_or(defaults.spike_width),
            fixed_level: self.fixed_level.unwrap_or(defaults.fixed_level),
            fixed_n_max: self.fixed_n_max.unwrap_or(defaults.fixed_n_max),
            diagonal_levels: self
                .diagonal_levels
                .clone()
                .unwrap_or(defaults.diagonal_levels),
            diagonal_offset: self.diagonal_offset.unwrap_or(defaults.diagonal_offset),
        };
        if !(setup.alpha > 0.0 && setup.alpha < 1.0) {
            return Err(invalid(format!(
                "counterexample exponent must lie in (0, 1), got {}",
                setup.alpha
            )));
        }
        if !(setup.capital > 0.0) {
            return Err(invalid("counterexample capital must be positive"));
        }
        if !(0.0..1.0).contains(&setup.spike_scale) {
            return Err(invalid("spike scale must lie in [0, 1)"));
        }
        if setup.fixed_level < 1 || setup.fixed_n_max < 1 {
            return Err(invalid("fixed level and index must be at least 1"));
        }
        if setup.diagonal_levels.iter().any(|&m| m < 1) {
            return Err(invalid("diagonal levels must be at least 1"));
        }
        Ok(setup)
    }
}

/// The built-in market catalog.
pub fn named_market(name: &str) -> Result<MarketSpec, ConfigError> {
    match name {
        "binomial" => Ok(MarketSpec {
            atoms: vec![0.5, 0.5],
            tree: vec![None, Some(0), Some(0)],
            prices: vec![vec![1.0], vec![2.0], vec![0.5]],
            endowments: vec![],
        }),
        "trinomial" => Ok(MarketSpec {
            atoms: vec![1.0 / 3.0; 3],
            tree: vec![None, Some(0), Some(0), Some(0)],
            prices: vec![vec![1.0], vec![0.5], vec![1.0], vec![2.0]],
            endowments: vec![],
        }),
        "two_period_binomial" => Ok(MarketSpec {
            atoms: vec![0.25; 4],
            tree: vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)],
            prices: vec![
                vec![1.0],
                vec![2.0],
                vec![0.5],
                vec![4.0],
                vec![1.0],
                vec![1.0],
                vec![0.25],
            ],
            endowments: vec![],
        }),
        other => Err(invalid(format!(
            "unknown market name {other:?} (catalog: binomial, trinomial, two_period_binomial)"
        ))),
    }
}

impl ExperimentConfig {
    /// Loads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The configured market spec.
    pub fn market_spec(&self) -> Result<MarketSpec, ConfigError> {
        match &self.market {
            MarketConfig::Named { name } => named_market(name),
            MarketConfig::Spec {
                atoms,
                tree,
                prices,
            } => Ok(MarketSpec {
                atoms: atoms.clone(),
                tree: tree.clone(),
                prices: prices.clone(),
                endowments: vec![],
            }),
        }
    }

    /// Builds the market.
    pub fn build_market(&self) -> Result<FiniteMarket, ConfigError> {
        Ok(build_market(&self.market_spec()?)?)
    }

    /// Builds the endowment bundle on `market`.
    pub fn build_bundle(&self, market: &FiniteMarket) -> Result<EndowmentBundle, ConfigError> {
        Ok(EndowmentBundle::new(market, self.endowments.clone())?)
    }

    /// Builds the limit utility; errors when the section is missing.
    pub fn build_utility(&self) -> Result<UtilityFunction, ConfigError> {
        let section = self
            .utility
            .as_ref()
            .ok_or_else(|| invalid("this command needs a `utility` section"))?;
        build_utility(section)
    }

    /// Builds the perturbation family; errors when the section is missing or
    /// inconsistent with the utility kind.
    pub fn build_family(&self) -> Result<PerturbationFamily, ConfigError> {
        let section = self
            .family
            .as_ref()
            .ok_or_else(|| invalid("this command needs a `family` section"))?;
        let utility = self
            .utility
            .as_ref()
            .ok_or_else(|| invalid("a family needs a `utility` section"))?;

        let limit_utility = build_utility(utility)?;
        let utility_at: Box<dyn Fn(usize) -> UtilityFunction + Send + Sync> =
            match (utility.clone(), section.alpha_drift) {
                (_, None) => {
                    let u = limit_utility.clone();
                    Box::new(move |_| u.clone())
                }
                (UtilityConfig::Power { alpha }, Some(drift)) => {
                    for n in 1..=4 {
                        let a = alpha + drift / n as f64;
                        if !(a > 0.0 && a < 1.0) {
                            return Err(invalid(format!(
                                "drifting exponent leaves (0, 1) at n = {n}: {a}"
                            )));
                        }
                    }
                    Box::new(move |n| UtilityFunction::power(alpha + drift / n as f64))
                }
                _ => {
                    return Err(invalid(
                        "`alpha_drift` requires the power utility family",
                    ));
                }
            };

        let zeta = section.zeta.clone();
        let density = move |n: usize| -> Vec<f64> {
            zeta.iter().map(|&c| 1.0 + c / n as f64).collect()
        };

        let limit_primal = (
            section.primal_limit.x,
            section.primal_limit.q.clone(),
        );
        let primal_drift = section
            .primal_drift
            .clone()
            .unwrap_or(PrimalPointConfig {
                x: 0.0,
                q: vec![0.0; limit_primal.1.len()],
            });
        if primal_drift.q.len() != limit_primal.1.len() {
            return Err(invalid("primal drift dimension differs from the limit"));
        }
        let (px, pq) = (limit_primal.0, limit_primal.1.clone());
        let (dx, dq) = (primal_drift.x, primal_drift.q.clone());
        let primal_point = move |n: usize| -> (f64, Vec<f64>) {
            let t = 1.0 / n as f64;
            (
                px + dx * t,
                pq.iter().zip(&dq).map(|(a, b)| a + b * t).collect(),
            )
        };

        let limit_dual = (section.dual_limit.y, section.dual_limit.r.clone());
        let dual_drift = section.dual_drift.clone().unwrap_or(DualPointConfig {
            y: 0.0,
            r: vec![0.0; limit_dual.1.len()],
        });
        if dual_drift.r.len() != limit_dual.1.len() {
            return Err(invalid("dual drift dimension differs from the limit"));
        }
        let (py, pr) = (limit_dual.0, limit_dual.1.clone());
        let (dy, dr) = (dual_drift.y, dual_drift.r.clone());
        let dual_point = move |n: usize| -> (f64, Vec<f64>) {
            let t = 1.0 / n as f64;
            (
                py + dy * t,
                pr.iter().zip(&dr).map(|(a, b)| a + b * t).collect(),
            )
        };

        Ok(PerturbationFamily::new(
            density,
            move |n| utility_at(n),
            primal_point,
            dual_point,
            limit_utility,
            limit_primal,
            limit_dual,
        ))
    }

    /// Materialized thresholds (config section or defaults).
    pub fn thresholds(&self) -> StabilityThresholds {
        self.thresholds
            .as_ref()
            .map(ThresholdConfig::build)
            .unwrap_or_default()
    }
}

/// Builds a utility function from its configuration.
pub fn build_utility(config: &UtilityConfig) -> Result<UtilityFunction, ConfigError> {
    match config {
        UtilityConfig::Log => Ok(UtilityFunction::log()),
        UtilityConfig::Power { alpha } => {
            if !(*alpha > 0.0 && *alpha < 1.0) {
                return Err(invalid(format!(
                    "power exponent must lie in (0, 1), got {alpha}"
                )));
            }
            Ok(UtilityFunction::power(*alpha))
        }
        UtilityConfig::CappedPower { alpha, cap } => {
            if !(*alpha > 0.0 && *alpha < 1.0) {
                return Err(invalid(format!(
                    "capped-power exponent must lie in (0, 1), got {alpha}"
                )));
            }
            if !(*cap > 0.0) {
                return Err(invalid(format!("cap must be positive, got {cap}")));
            }
            let (a, c) = (*alpha, *cap);
            let data =
                TabulatedConcave::by_sampling(move |x| c * x.powf(a) / (1.0 + x.powf(a)), 0.01, 100.0, 96)?;
            Ok(UtilityFunction::tabulated(data))
        }
    }
}
