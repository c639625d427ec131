//! Backtest configuration: which models, regions, and origins to run, plus
//! the sampling budget. Configs are JSON files; every field except the cases
//! file has a default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{HORIZON, TRAIN_DAYS};
use crate::error::{Error, Result};
use crate::forecast::DEFAULT_DRAWS;
use crate::gp::GpConfig;
use crate::renewal::{CoriConfig, GiHyperprior, RPrior};
use crate::samplers::ChainSpec;
use crate::sarima::SarimaConfig;
use crate::trendcast::TrendcastConfig;

pub const FAMILIES: [&str; 5] = ["cori", "renewal-rw", "sarima", "trend", "gp"];

/// One model family with an optional grid over its tuning knob. Each grid
/// point becomes a separately identified variant.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Cori {
        #[serde(default = "default_tau")]
        tau: Vec<usize>,
    },
    RenewalRw {},
    Sarima {
        /// (p, d, q) orders; the seasonal part is fixed at (0, 1, 0) weekly.
        #[serde(default = "default_orders")]
        orders: Vec<(usize, usize, usize)>,
    },
    Trend {
        #[serde(default = "default_cp_scale")]
        changepoint_scale: Vec<f64>,
        #[serde(default = "default_n_changepoints")]
        n_changepoints: usize,
    },
    Gp {
        #[serde(default = "default_rho_short")]
        rho_short: Vec<f64>,
    },
}

fn default_tau() -> Vec<usize> {
    vec![7]
}

fn default_orders() -> Vec<(usize, usize, usize)> {
    vec![(1, 0, 1)]
}

fn default_cp_scale() -> Vec<f64> {
    vec![0.45]
}

fn default_n_changepoints() -> usize {
    10
}

fn default_rho_short() -> Vec<f64> {
    vec![7.0]
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Cori { .. } => "cori",
            ModelSpec::RenewalRw {} => "renewal-rw",
            ModelSpec::Sarima { .. } => "sarima",
            ModelSpec::Trend { .. } => "trend",
            ModelSpec::Gp { .. } => "gp",
        }
    }

    /// Expands the grid into concrete variants.
    pub fn expand(&self) -> Vec<ModelVariant> {
        match self {
            ModelSpec::Cori { tau } => tau
                .iter()
                .map(|&t| {
                    ModelVariant::Cori(CoriConfig {
                        tau: t,
                        prior: RPrior::default(),
                        gi: GiHyperprior::default(),
                    })
                })
                .collect(),
            ModelSpec::RenewalRw {} => vec![ModelVariant::RenewalRw {
                prior: RPrior::default(),
                gi: GiHyperprior::default(),
            }],
            ModelSpec::Sarima { orders } => orders
                .iter()
                .map(|&(p, d, q)| ModelVariant::Sarima(SarimaConfig { p, d, q }))
                .collect(),
            ModelSpec::Trend {
                changepoint_scale,
                n_changepoints,
            } => changepoint_scale
                .iter()
                .map(|&s| {
                    ModelVariant::Trend(TrendcastConfig {
                        n_changepoints: *n_changepoints,
                        changepoint_scale: s,
                    })
                })
                .collect(),
            ModelSpec::Gp { rho_short } => rho_short
                .iter()
                .map(|&r| {
                    ModelVariant::Gp(GpConfig {
                        rho_short: r,
                        ..GpConfig::default()
                    })
                })
                .collect(),
        }
    }
}

/// A concrete, runnable model configuration. The id doubles as the directory
/// name in the forecast store.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelVariant {
    Cori(CoriConfig),
    RenewalRw { prior: RPrior, gi: GiHyperprior },
    Sarima(SarimaConfig),
    Trend(TrendcastConfig),
    Gp(GpConfig),
}

/// Renders a float without a trailing ".0" so ids stay tidy.
fn num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl ModelVariant {
    pub fn family(&self) -> &'static str {
        match self {
            ModelVariant::Cori(_) => "cori",
            ModelVariant::RenewalRw { .. } => "renewal-rw",
            ModelVariant::Sarima(_) => "sarima",
            ModelVariant::Trend(_) => "trend",
            ModelVariant::Gp(_) => "gp",
        }
    }

    pub fn id(&self) -> String {
        match self {
            ModelVariant::Cori(c) => format!("cori-tau{}", c.tau),
            ModelVariant::RenewalRw { .. } => "renewal-rw".to_string(),
            ModelVariant::Sarima(c) => format!("sarima-p{}d{}q{}", c.p, c.d, c.q),
            ModelVariant::Trend(c) => format!("trend-tau{}", num(c.changepoint_scale)),
            ModelVariant::Gp(c) => format!("gp-rho{}", num(c.rho_short)),
        }
    }
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn default_log_offset() -> f64 {
    crate::corpus::DEFAULT_LOG_OFFSET
}

fn default_train_days() -> usize {
    TRAIN_DAYS
}

fn default_horizon() -> usize {
    HORIZON
}

fn default_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Cori { tau: default_tau() },
        ModelSpec::RenewalRw {},
        ModelSpec::Sarima {
            orders: default_orders(),
        },
        ModelSpec::Trend {
            changepoint_scale: default_cp_scale(),
            n_changepoints: default_n_changepoints(),
        },
        ModelSpec::Gp {
            rho_short: default_rho_short(),
        },
    ]
}

/// Full description of a backtest run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    /// Daily case CSV with date, region, cases, population columns.
    pub cases_file: PathBuf,
    /// Optional CSV of (region, start, end, phase) intervals.
    #[serde(default)]
    pub phases_file: Option<PathBuf>,
    /// Regions to run; all regions in the file when omitted.
    #[serde(default)]
    pub regions: Option<Vec<String>>,
    /// First and last allowed forecast origin (inclusive). Origins are also
    /// clamped to dates with a full training window and observed horizon.
    pub first_origin: chrono::NaiveDate,
    pub last_origin: chrono::NaiveDate,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_offset")]
    pub log_offset: f64,
    /// Worker threads; library default when omitted.
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Where the forecast store lives; the CLI --output flag overrides it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub chains: ChainSpec,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    /// Fixed pipeline shape; present so configs are self-describing. Any
    /// other value is rejected.
    #[serde(default = "default_train_days")]
    pub train_days: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

impl BacktestConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: BacktestConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws < 2 {
            return Err(Error::config("draws must be at least 2"));
        }
        if self.first_origin > self.last_origin {
            return Err(Error::config("first_origin is after last_origin"));
        }
        if !(self.log_offset > 0.0) {
            return Err(Error::config("log_offset must be positive"));
        }
        if self.train_days != TRAIN_DAYS {
            return Err(Error::config(format!(
                "train_days is fixed at {TRAIN_DAYS}"
            )));
        }
        if self.horizon != HORIZON {
            return Err(Error::config(format!("horizon is fixed at {HORIZON}")));
        }
        if self.models.is_empty() {
            return Err(Error::config("at least one model is required"));
        }
        self.chains.validate()?;
        let mut seen = BTreeSet::new();
        for v in self.variants() {
            if !seen.insert(v.id()) {
                return Err(Error::config(format!("duplicate model variant {}", v.id())));
            }
        }
        Ok(())
    }

    /// All grid points across the configured families.
    pub fn variants(&self) -> Vec<ModelVariant> {
        self.models.iter().flat_map(|m| m.expand()).collect()
    }

    /// Drops families not named in `keep` (family names, comma-splittable by
    /// the caller).
    pub fn retain_families(&mut self, keep: &[String]) -> Result<()> {
        for name in keep {
            if !FAMILIES.contains(&name.as_str()) {
                return Err(Error::config(format!(
                    "unknown model family {name:?}; expected one of {FAMILIES:?}"
                )));
            }
        }
        self.models.retain(|m| keep.iter().any(|k| k == m.family()));
        if self.models.is_empty() {
            return Err(Error::config("model filter removed every family"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> BacktestConfig {
        serde_json::from_str(
            r#"{
                "cases_file": "cases.csv",
                "first_origin": "2020-03-15",
                "last_origin": "2021-03-15"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = base_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.draws, 2000);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.log_offset, 0.01);
        assert_eq!(cfg.chains, ChainSpec::default());
        let ids: Vec<String> = cfg.variants().iter().map(|v| v.id()).collect();
        assert_eq!(
            ids,
            vec!["cori-tau7", "renewal-rw", "sarima-p1d0q1", "trend-tau0.45", "gp-rho7"]
        );
    }

    #[test]
    fn grids_expand_to_one_variant_per_point() {
        let cfg: BacktestConfig = serde_json::from_str(
            r#"{
                "cases_file": "cases.csv",
                "first_origin": "2020-03-15",
                "last_origin": "2021-03-15",
                "models": [
                    {"family": "cori", "tau": [1, 7, 14]},
                    {"family": "gp", "rho_short": [1, 7, 14]},
                    {"family": "sarima", "orders": [[1,0,1], [2,1,0]]}
                ]
            }"#,
        )
        .unwrap();
        let ids: Vec<String> = cfg.variants().iter().map(|v| v.id()).collect();
        assert_eq!(
            ids,
            vec![
                "cori-tau1",
                "cori-tau7",
                "cori-tau14",
                "gp-rho1",
                "gp-rho7",
                "gp-rho14",
                "sarima-p1d0q1",
                "sarima-p2d1q0"
            ]
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut cfg = base_config();
        cfg.draws = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.horizon = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.train_days = 28;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.first_origin = cfg.last_origin + chrono::Days::new(1);
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.models = vec![
            ModelSpec::Cori { tau: vec![7, 7] },
        ];
        assert!(cfg.validate().is_err(), "duplicate variants rejected");
    }

    #[test]
    fn family_filter_keeps_named_families() {
        let mut cfg = base_config();
        cfg.retain_families(&["cori".into(), "gp".into()]).unwrap();
        let ids: Vec<String> = cfg.variants().iter().map(|v| v.id()).collect();
        assert_eq!(ids, vec!["cori-tau7", "gp-rho7"]);
        let mut cfg = base_config();
        assert!(cfg.retain_families(&["prophet".into()]).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = base_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: BacktestConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: std::result::Result<BacktestConfig, _> = serde_json::from_str(
            r#"{
                "cases_file": "cases.csv",
                "first_origin": "2020-03-15",
                "last_origin": "2021-03-15",
                "horizont": 14
            }"#,
        );
        assert!(r.is_err());
    }
}
