//! TOML network descriptions.
//!
//! ```toml
//! input_shape = [1, 28, 28]
//! timesteps = 4
//!
//! [neuron]
//! lambda = 0.1
//!
//! [[layers]]
//! kind = "encode_conv"
//! channels = 16
//! kernel = 3
//! stride = 2
//! padding = 1
//!
//! [[layers]]
//! kind = "classifier"
//! classes = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use snn_core::network::{LayerKind, NetworkSpec};
use snn_core::neuron::NeuronConfig;

use crate::error::{io_err, toml_err, Result, ToolError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub input_shape: Vec<usize>,
    pub timesteps: usize,
    #[serde(default)]
    pub neuron: NeuronConfig,
    pub layers: Vec<LayerKind>,
}

impl NetworkFile {
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        Self {
            input_shape: spec.input_shape.clone(),
            timesteps: spec.timesteps,
            neuron: spec.neuron,
            layers: spec.kinds(),
        }
    }

    pub fn spec(&self) -> snn_core::Result<NetworkSpec> {
        NetworkSpec::new(&self.input_shape, &self.layers, self.timesteps, self.neuron)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_err(path, text, &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network files always serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| io_err(path, e))
    }
}

/// Loads and validates a network file.
pub fn load_spec(path: &Path) -> Result<NetworkSpec> {
    NetworkFile::load(path)?.spec().map_err(|e| match e {
        snn_core::Error::InvalidNetwork(m) => ToolError::Parse {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message: m,
        },
        other => other.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MNIST: &str = r#"
input_shape = [1, 28, 28]
timesteps = 4

[[layers]]
kind = "encode_conv"
channels = 16
kernel = 3
stride = 2
padding = 1

[[layers]]
kind = "avgpool"
kernel = 2
stride = 2

[[layers]]
kind = "classifier"
classes = 10
"#;

    #[test]
    fn parse_and_round_trip() {
        let f = NetworkFile::parse(MNIST, Path::new("n.toml")).unwrap();
        assert_eq!(f.neuron, NeuronConfig::default());
        let spec = f.spec().unwrap();
        assert_eq!(spec.layers[1].out_shape, vec![16, 7, 7]);
        let again = NetworkFile::parse(&f.to_toml(), Path::new("n.toml")).unwrap();
        assert_eq!(again, f);
        assert_eq!(NetworkFile::from_spec(&spec), f);
    }

    #[test]
    fn unknown_layer_kind_is_located() {
        let bad = MNIST.replace("\"avgpool\"", "\"maxpool\"");
        match NetworkFile::parse(&bad, Path::new("n.toml")) {
            Err(ToolError::Parse { line, .. }) => assert!(line.is_some()),
            other => panic!("{other:?}"),
        }
    }
}
