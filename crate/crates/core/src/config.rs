//! TOML run configuration shared by the CLI subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::DensityConfig;
use crate::error::{Error, Result};
use crate::oracles::McConfig;
use crate::pde::{ModelKind, PdeModel, PiecewiseSchedule};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSettings {
    pub mesh_points: usize,
    /// Truncation width in standard deviations of the log-price.
    pub q: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            mesh_points: 51,
            q: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdHestonSettings {
    pub kappa: f64,
    pub schedule: PiecewiseSchedule,
}

impl Default for TdHestonSettings {
    fn default() -> Self {
        TdHestonSettings {
            kappa: 3.0,
            schedule: PiecewiseSchedule::benchmark(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub model: PathBuf,
    pub loss_log: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            model: PathBuf::from("model.kdgm"),
            loss_log: PathBuf::from("loss.csv"),
        }
    }
}

/// Everything a run needs. Only `model` lacks a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `gbm`, `heston` or `td_heston`.
    pub model: Option<String>,
    /// Per-coordinate `[lo, hi]` overrides of the model's default domain.
    pub domain: BTreeMap<String, [f64; 2]>,
    pub td_heston: TdHestonSettings,
    pub train: TrainConfig,
    pub density: DensityConfig,
    pub quad: QuadSettings,
    pub mc: McConfig,
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// The resolved configuration as `# `-prefixed lines.
    pub fn echo(&self) -> String {
        self.to_toml().lines().map(|l| format!("# {l}\n")).collect()
    }

    pub fn model_name(&self) -> Result<&str> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::MissingField("model".into()))
    }

    /// The model with its default domain, then any overrides applied.
    pub fn resolve_model(&self) -> Result<PdeModel> {
        let base = match self.model_name()? {
            "gbm" => PdeModel::gbm_default(),
            "heston" => PdeModel::heston_default(),
            "td_heston" => {
                let td = &self.td_heston;
                let kind = ModelKind::TdHeston {
                    kappa: td.kappa,
                    schedule: td.schedule.clone(),
                };
                PdeModel {
                    kind,
                    ..PdeModel::td_heston_default()
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown model `{other}` (expected gbm, heston or td_heston)"
                )))
            }
        };
        self.apply_domain(&base)
    }

    /// `base` with this config's domain overrides applied.
    pub fn apply_domain(&self, base: &PdeModel) -> Result<PdeModel> {
        let mut domain = base.domain.clone();
        for (name, [lo, hi]) in &self.domain {
            if domain.index(name).is_none() {
                return Err(Error::Config(format!(
                    "domain override `{name}` is not an input of the {} model",
                    base.name()
                )));
            }
            domain = domain.with(name, *lo, *hi)?;
        }
        PdeModel::new(base.kind.clone(), domain)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve_model()?;
        self.train.validate()?;
        self.mc.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig {
            model: Some("gbm".into()),
            ..Default::default()
        };
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.echo().lines().all(|l| l.starts_with('#')));
    }

    #[test]
    fn missing_model_is_named() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 3\n").unwrap();
        match cfg.resolve_model() {
            Err(Error::MissingField(f)) => assert_eq!(f, "model"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn domain_overrides_apply() {
        let cfg =
            RunConfig::from_toml("model = \"gbm\"\n[domain]\nx = [-1.5, 1.5]\nt = [0.0, 1.1]\n")
                .unwrap();
        let m = cfg.resolve_model().unwrap();
        assert_eq!(m.domain.interval(1).lo, -1.5);
        assert_eq!(m.terminal_time(), 1.1);
        let bad = RunConfig::from_toml("model = \"gbm\"\n[domain]\nv = [0.0, 1.0]\n").unwrap();
        assert!(bad.resolve_model().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml("model = \"gbm\"\nepochz = 3\n").is_err());
    }

    #[test]
    fn td_settings_feed_the_model() {
        let cfg =
            RunConfig::from_toml("model = \"td_heston\"\n[td_heston]\nkappa = 2.0\n").unwrap();
        match cfg.resolve_model().unwrap().kind {
            ModelKind::TdHeston { kappa, .. } => assert_eq!(kappa, 2.0),
            _ => unreachable!(),
        }
    }
}
