//! On-disk model checkpoints shared by the forecaster and the ODE network.
//!
//! A checkpoint is a directory holding `config.json`,
//! `params.manifest.json`, `params.f64le` and `optimizer.f64le` (Adam first
//! and second moments in parameter order, empty when no optimizer state
//! was saved).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Stpcnn, StpcnnConfig};
use crate::error::{Error, Result};
use crate::ode::{OdeNet, OdeNetConfig};
use crate::tensor::{f64s_to_le, le_to_f64s, AdamConfig, AdamState, ParamSet};

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_MANIFEST: &str = "params.manifest.json";
pub const PARAMS_BLOB: &str = "params.f64le";
pub const OPTIMIZER_BLOB: &str = "optimizer.f64le";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Stpcnn,
    Ode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub adam: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub kind: ModelKind,
    /// Architecture, enough to rebuild the parameter layout.
    pub model: serde_json::Value,
    /// Training configuration that produced the parameters, if any.
    #[serde(default)]
    pub training: serde_json::Value,
    /// Physics backend the forecaster was trained with.
    #[serde(default)]
    pub physics: Option<String>,
    #[serde(default)]
    pub optimizer: Option<OptimizerInfo>,
    /// Free-form provenance (dataset, split, best epoch...).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: ParamSet,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn for_stpcnn(
        model: &Stpcnn,
        training: serde_json::Value,
        physics: String,
        optimizer: Option<AdamState>,
    ) -> Result<Self> {
        Ok(Self {
            config: CheckpointConfig {
                kind: ModelKind::Stpcnn,
                model: serde_json::to_value(model.config)?,
                training,
                physics: Some(physics),
                optimizer: optimizer.as_ref().map(|o| OptimizerInfo {
                    adam: o.config,
                    step: o.step_count(),
                }),
                meta: BTreeMap::new(),
            },
            params: model.params.clone(),
            optimizer,
        })
    }

    pub fn for_ode(net: &OdeNet, training: serde_json::Value) -> Result<Self> {
        Ok(Self {
            config: CheckpointConfig {
                kind: ModelKind::Ode,
                model: serde_json::to_value(net.config)?,
                training,
                physics: None,
                optimizer: None,
                meta: BTreeMap::new(),
            },
            params: net.params.clone(),
            optimizer: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(CONFIG_FILE),
            serde_json::to_string_pretty(&self.config)? + "\n",
        )?;
        self.params
            .write(&dir.join(PARAMS_MANIFEST), &dir.join(PARAMS_BLOB))?;
        let opt = self
            .optimizer
            .as_ref()
            .map(AdamState::to_flat)
            .unwrap_or_default();
        fs::write(dir.join(OPTIMIZER_BLOB), f64s_to_le(&opt))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        if !dir.join(CONFIG_FILE).is_file() {
            return Err(Error::config(format!(
                "{} is not a checkpoint directory",
                dir.display()
            )));
        }
        let config: CheckpointConfig =
            serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let params = ParamSet::read(&dir.join(PARAMS_MANIFEST), &dir.join(PARAMS_BLOB))?;
        let flat = le_to_f64s(&fs::read(dir.join(OPTIMIZER_BLOB))?)?;
        let optimizer = match (&config.optimizer, flat.is_empty()) {
            (Some(info), false) => {
                Some(AdamState::from_flat(info.adam, info.step, &params, &flat)?)
            }
            (None, true) | (Some(_), true) => None,
            (None, false) => {
                return Err(Error::format(
                    "optimizer blob present without optimizer settings",
                ))
            }
        };
        Ok(Self {
            config,
            params,
            optimizer,
        })
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.config.kind != kind {
            return Err(Error::config(format!(
                "checkpoint holds a {:?} model, expected {kind:?}",
                self.config.kind
            )));
        }
        Ok(())
    }

    pub fn stpcnn(&self) -> Result<Stpcnn> {
        self.expect(ModelKind::Stpcnn)?;
        let cfg: StpcnnConfig = serde_json::from_value(self.config.model.clone())?;
        Stpcnn::with_params(cfg, self.params.clone())
    }

    pub fn ode(&self) -> Result<OdeNet> {
        self.expect(ModelKind::Ode)?;
        let cfg: OdeNetConfig = serde_json::from_value(self.config.model.clone())?;
        OdeNet::with_params(cfg, self.params.clone())
    }
}

pub fn load_stpcnn(dir: &Path) -> Result<Stpcnn> {
    Checkpoint::read(dir)?.stpcnn()
}

pub fn load_ode(dir: &Path) -> Result<OdeNet> {
    Checkpoint::read(dir)?.ode()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn stpcnn_round_trip_with_optimizer() {
        let cfg = StpcnnConfig {
            hidden: 8,
            fusion_dim: 4,
            tn_hidden: 4,
            ..StpcnnConfig::default()
        };
        let model = Stpcnn::new(cfg, 9).unwrap();
        let mut opt = AdamState::new(AdamConfig::default(), &model.params);
        let mut params = model.params.clone();
        let grads: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::full(t.shape().to_vec(), 0.1))
            .collect();
        opt.step(&mut params, &grads).unwrap();
        let ck = Checkpoint::for_stpcnn(
            &model,
            serde_json::json!({"epochs": 3}),
            "none".into(),
            Some(opt),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ck.write(dir.path()).unwrap();
        let back = Checkpoint::read(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.stpcnn().unwrap(), model);
        assert!(back.ode().is_err());
    }

    #[test]
    fn ode_round_trip_and_layout_mismatch() {
        let net = OdeNet::new(OdeNetConfig::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::for_ode(&net, serde_json::Value::Null)
            .unwrap()
            .write(dir.path())
            .unwrap();
        assert_eq!(load_ode(dir.path()).unwrap(), net);
        let cfg = fs::read_to_string(dir.path().join(CONFIG_FILE))
            .unwrap()
            .replace("\"latent\": 50", "\"latent\": 40");
        fs::write(dir.path().join(CONFIG_FILE), cfg).unwrap();
        assert!(matches!(load_ode(dir.path()), Err(Error::Format(_))));
    }
}
