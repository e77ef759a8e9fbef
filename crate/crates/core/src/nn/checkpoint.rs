//! JSON checkpoints for networks and optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, Mlp};
use super::optim::AdamWState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub dims: Vec<usize>,
    pub activations: Vec<String>,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamWState>,
}

impl NetCheckpoint {
    pub fn from_net(net: &Mlp, optimizer: Option<&AdamWState>) -> Self {
        NetCheckpoint {
            dims: net.dims(),
            activations: net.layers().iter().map(|l| l.activation.name().to_string()).collect(),
            params: net.flat_params(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn to_net(&self) -> Result<Mlp> {
        if self.dims.len() != self.activations.len() + 1 {
            return Err(Error::InvalidArgument("checkpoint dims and activations disagree".into()));
        }
        let layers = self
            .activations
            .iter()
            .enumerate()
            .map(|(l, name)| {
                let act = Activation::from_name(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown activation {name:?}")))?;
                Ok(Dense::zeros(self.dims[l], self.dims[l + 1], act))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::from_layers(layers)?;
        net.set_flat_params(&self.params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
