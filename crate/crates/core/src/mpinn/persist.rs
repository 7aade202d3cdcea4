//! JSON model files.
//!
//! A model file is one JSON object carrying `schema_version`, the network
//! configuration, normalization, the high-fidelity output scale, `raw_alpha`
//! and the three flat parameter
//! arrays. Floats are written in shortest round-trip form and parsed
//! exactly, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MpinnConfig, MpinnModel, Network, OutputScale};
use crate::diffmath::MlpParams;
use crate::error::{Error, Result};
use crate::fieldio::NormalizationMeta;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema_version: u64,
    config: MpinnConfig,
    normalization: NormalizationMeta,
    hf_scale: OutputScale,
    raw_alpha: f64,
    params: ParamsDocument,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    nnl: Vec<f64>,
    nnh1: Vec<f64>,
    nnh2: Vec<f64>,
}

impl MpinnModel {
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            normalization: self.norm,
            hf_scale: self.hf_scale,
            raw_alpha: self.raw_alpha,
            params: ParamsDocument {
                nnl: self.nnl.as_slice().to_vec(),
                nnh1: self.nnh1.as_slice().to_vec(),
                nnh2: self.nnh2.as_slice().to_vec(),
            },
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("model document serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let version = value
            .get("schema_version")
            .ok_or_else(|| Error::ModelFormat("missing schema_version".into()))?
            .as_u64()
            .ok_or_else(|| Error::ModelFormat("schema_version is not an integer".into()))?;
        if version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: SCHEMA_VERSION,
            });
        }
        let doc: ModelDocument =
            serde_json::from_value(value).map_err(|e| Error::ModelFormat(e.to_string()))?;

        let params = |network: Network, values: Vec<f64>| {
            MlpParams::from_vec(doc.config.spec(network), values)
                .map_err(|e| Error::ModelFormat(format!("{}: {e}", network.name())))
        };
        let nnl = params(Network::Low, doc.params.nnl)?;
        let nnh1 = params(Network::Linear, doc.params.nnh1)?;
        let nnh2 = params(Network::Nonlinear, doc.params.nnh2)?;
        MpinnModel::from_parts(
            doc.config,
            nnl,
            nnh1,
            nnh2,
            doc.raw_alpha,
            doc.normalization,
            doc.hf_scale,
        )
        .map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

pub fn save_model(model: &MpinnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| Error::file(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MpinnModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    MpinnModel::from_json(&text)
}
