//! TOML run configuration.
//!
//! ```toml
//! [model]
//! composition_mode = "convex_blend"   # or "additive"
//! alpha_trainable = true
//! nnl_hidden = [20, 20, 20]
//! nnl_activation = "relu"
//! nnh2_hidden = [10, 10]
//! nnh2_activation = "tanh"
//!
//! [train]
//! epochs = 5000
//! learning_rate = 1e-3
//! lambda_l2 = 1e-4
//! seed = 0
//! w_lf = 1.0
//! w_hf = 1.0
//! hf_budget = 10
//! hf_updates_nnl = false
//!
//! [interp]
//! method = "idw"                      # or "nearest"
//! power = 2.0
//! k = 8
//!
//! [columns]
//! x = "x"
//! y = "y"
//! value = "value"
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use mfsurrogate::diffmath::{Activation, MlpSpec};
use mfsurrogate::fieldio::ColumnMap;
use mfsurrogate::gridalign::{DEFAULT_IDW_K, DEFAULT_IDW_POWER};
use mfsurrogate::train::LossWeights;
use mfsurrogate::{CompositionMode, Error, InterpMethod, MpinnConfig, Result, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub interp: InterpSection,
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub composition_mode: Option<CompositionMode>,
    pub alpha_trainable: Option<bool>,
    pub nnl_hidden: Option<Vec<usize>>,
    pub nnl_activation: Option<Activation>,
    pub nnh2_hidden: Option<Vec<usize>>,
    pub nnh2_activation: Option<Activation>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda_l2: Option<f64>,
    pub seed: Option<u64>,
    pub w_lf: Option<f64>,
    pub w_hf: Option<f64>,
    pub hf_budget: Option<usize>,
    pub hf_updates_nnl: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Nearest,
    Idw,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpSection {
    pub method: Option<MethodName>,
    pub power: Option<f64>,
    pub k: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Check every derived setting before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.mpinn_config()?.validate()?;
        self.train_config().validate()?;
        self.interp_method()?.validate()?;
        Ok(())
    }

    pub fn mpinn_config(&self) -> Result<MpinnConfig> {
        let d = MpinnConfig::default();
        let m = &self.model;
        let nnl = MlpSpec::new(
            2,
            m.nnl_hidden.clone().unwrap_or(d.nnl.hidden_widths),
            1,
            m.nnl_activation.unwrap_or(d.nnl.activation),
        )?;
        let nnh2 = MlpSpec::new(
            3,
            m.nnh2_hidden.clone().unwrap_or(d.nnh2.hidden_widths),
            1,
            m.nnh2_activation.unwrap_or(d.nnh2.activation),
        )?;
        Ok(MpinnConfig {
            nnl,
            nnh1: d.nnh1,
            nnh2,
            composition_mode: m.composition_mode.unwrap_or(d.composition_mode),
            alpha_trainable: m.alpha_trainable.unwrap_or(d.alpha_trainable),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs.unwrap_or(d.epochs),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            lambda_l2: t.lambda_l2.unwrap_or(d.lambda_l2),
            seed: t.seed.unwrap_or(d.seed),
            loss_weights: LossWeights {
                lf: t.w_lf.unwrap_or(d.loss_weights.lf),
                hf: t.w_hf.unwrap_or(d.loss_weights.hf),
            },
            composition_mode: self.model.composition_mode,
            hf_budget: t.hf_budget.or(d.hf_budget),
            hf_updates_nnl: t.hf_updates_nnl.unwrap_or(d.hf_updates_nnl),
        }
    }

    pub fn interp_method(&self) -> Result<InterpMethod> {
        let i = &self.interp;
        match i.method.unwrap_or(MethodName::Idw) {
            MethodName::Nearest => {
                if i.power.is_some() || i.k.is_some() {
                    return Err(Error::Config(
                        "interp.power and interp.k only apply to method \"idw\"".into(),
                    ));
                }
                Ok(InterpMethod::Nearest)
            }
            MethodName::Idw => Ok(InterpMethod::Idw {
                power: i.power.unwrap_or(DEFAULT_IDW_POWER),
                k: i.k.unwrap_or(DEFAULT_IDW_K),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_library_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.mpinn_config().unwrap(), MpinnConfig::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.interp_method().unwrap(), InterpMethod::default());
        assert_eq!(cfg.columns, ColumnMap::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            r#"
            [model]
            composition_mode = "additive"
            nnh2_hidden = [6]
            [train]
            epochs = 12
            seed = 7
            w_hf = 2.5
            hf_budget = 4
            [interp]
            method = "nearest"
            [columns]
            value = "pressure"
            "#,
        )
        .unwrap();
        let m = cfg.mpinn_config().unwrap();
        assert_eq!(m.composition_mode, CompositionMode::Additive);
        assert_eq!(m.nnh2.hidden_widths, vec![6]);
        let t = cfg.train_config();
        assert_eq!((t.epochs, t.seed, t.hf_budget), (12, 7, Some(4)));
        assert_eq!(t.loss_weights, LossWeights { lf: 1.0, hf: 2.5 });
        assert_eq!(t.composition_mode, Some(CompositionMode::Additive));
        assert_eq!(cfg.interp_method().unwrap(), InterpMethod::Nearest);
        assert_eq!(cfg.columns.value, "pressure");
        assert_eq!(cfg.columns.x, "x");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for text in [
            "[train]\nepochz = 3\n",
            "[surprise]\n",
            "top = 1\n",
            "[model]\nnnl_activation = \"sigmoid\"\n",
            "[train]\nlearning_rate = -1.0\n",
            "[interp]\nmethod = \"nearest\"\nk = 3\n",
            "[interp]\nk = 0\n",
            "[model]\nnnh2_hidden = [0]\n",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }
}
