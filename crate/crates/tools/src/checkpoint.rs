//! JSON checkpoints of trained networks (auxiliary networks are dropped).

use std::path::Path;

use serde::{Deserialize, Serialize};
use snn_core::network::Network;
use snn_core::train::Regime;
use snn_core::{Scalar, Tensor};

use crate::error::{io_err, json_err, Result};
use crate::netfile::NetworkFile;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub network: NetworkFile,
    pub regime: Regime,
    pub seed: u64,
    pub epochs: usize,
    /// `params[layer][param]`
    pub params: Vec<Vec<StoredTensor>>,
}

impl Checkpoint {
    pub fn from_network<F: Scalar>(net: &Network<F>, regime: Regime, seed: u64, epochs: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            network: NetworkFile::from_spec(&net.spec),
            regime,
            seed,
            epochs,
            params: net
                .layers
                .iter()
                .map(|l| {
                    l.params
                        .iter()
                        .map(|p| StoredTensor {
                            shape: p.shape().to_vec(),
                            data: p.to_f64_vec(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn network<F: Scalar>(&self) -> snn_core::Result<Network<F>> {
        let spec = self.network.spec()?;
        let params = self
            .params
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| Tensor::from_f64(&p.shape, &p.data))
                    .collect::<snn_core::Result<Vec<_>>>()
            })
            .collect::<snn_core::Result<Vec<_>>>()?;
        Network::from_params(&spec, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoints always serialize");
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| json_err(path, &e))
    }
}
