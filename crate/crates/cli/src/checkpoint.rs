//! JSON checkpoints of the feature extractor and the forest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use paced_forest_core::backbone::{Activation, BackboneParams, DenseLayer};
use paced_forest_core::forest::{Forest, LeafParams, Tree};

use crate::config::ActivationName;
use crate::error::{CliError, Result};

pub const BACKBONE_SCHEMA: &str = "paced-forest/backbone/v1";
pub const FOREST_SCHEMA: &str = "paced-forest/forest/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneCheckpoint {
    pub schema: String,
    pub activation: ActivationName,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCheckpoint {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestCheckpoint {
    pub schema: String,
    pub depth: usize,
    pub num_trees: usize,
    pub feature_dim: usize,
    pub sigma2_floor: f64,
    pub trees: Vec<TreeCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeCheckpoint {
    /// Feature index of every split node in heap order.
    pub phi: Vec<usize>,
    pub leaves: Vec<LeafCheckpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafCheckpoint {
    pub mu: f64,
    pub sigma2: f64,
}

impl BackboneCheckpoint {
    pub fn from_params(p: &BackboneParams) -> Self {
        BackboneCheckpoint {
            schema: BACKBONE_SCHEMA.into(),
            activation: match p.activation() {
                Activation::Relu => ActivationName::Relu,
                Activation::Logistic => ActivationName::Logistic,
            },
            layers: p
                .layers()
                .iter()
                .map(|l| LayerCheckpoint {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weights: l.weights().to_vec(),
                    bias: l.bias().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<BackboneParams> {
        check_schema(&self.schema, BACKBONE_SCHEMA)?;
        let layers = self
            .layers
            .iter()
            .map(|l| DenseLayer::new(l.inputs, l.outputs, l.weights.clone(), l.bias.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let act = match self.activation {
            ActivationName::Relu => Activation::Relu,
            ActivationName::Logistic => Activation::Logistic,
        };
        Ok(BackboneParams::new(layers, act)?)
    }
}

impl ForestCheckpoint {
    pub fn from_forest(f: &Forest) -> Self {
        ForestCheckpoint {
            schema: FOREST_SCHEMA.into(),
            depth: f.depth(),
            num_trees: f.num_trees(),
            feature_dim: f.feature_dim(),
            sigma2_floor: f.sigma2_floor(),
            trees: f
                .trees()
                .iter()
                .map(|t| TreeCheckpoint {
                    phi: t.split_features().to_vec(),
                    leaves: t.leaves().iter().map(|l| LeafCheckpoint { mu: l.mu, sigma2: l.sigma2 }).collect(),
                })
                .collect(),
        }
    }

    pub fn to_forest(&self) -> Result<Forest> {
        check_schema(&self.schema, FOREST_SCHEMA)?;
        if self.trees.len() != self.num_trees {
            return Err(CliError::Input(format!(
                "forest checkpoint lists {} trees but declares {}",
                self.trees.len(),
                self.num_trees
            )));
        }
        let trees = self
            .trees
            .iter()
            .map(|t| {
                let leaves = t.leaves.iter().map(|l| LeafParams { mu: l.mu, sigma2: l.sigma2 }).collect();
                Tree::new(self.depth, t.phi.clone(), leaves)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Forest::new(trees, self.feature_dim, self.sigma2_floor)?)
    }
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(CliError::Input(format!("unsupported checkpoint schema {found:?}, expected {expected:?}")));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("checkpoint serializes");
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn save_backbone(p: &BackboneParams, path: &Path) -> Result<()> {
    write_json(&BackboneCheckpoint::from_params(p), path)
}

pub fn load_backbone(path: &Path) -> Result<BackboneParams> {
    read_json::<BackboneCheckpoint>(path)?.to_params()
}

pub fn save_forest(f: &Forest, path: &Path) -> Result<()> {
    write_json(&ForestCheckpoint::from_forest(f), path)
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    read_json::<ForestCheckpoint>(path)?.to_forest()
}
