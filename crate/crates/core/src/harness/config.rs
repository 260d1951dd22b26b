use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::optim::{OptimizerConfig, OptimizerKind, TrainConfig};
use crate::pde_data::Equation;

/// One training experiment. Serialised as a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub equation: Equation,
    pub optimizer: OptimizerKind,
    pub eta: f64,
    /// Ignored by SGD and Adam.
    pub lambda: f64,
    /// Fraction of non-zero rows after sparse initialisation; forced to 1
    /// for SGD and Adam.
    pub init_density: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub c_tol: f64,
    /// Layer widths overriding the preset architecture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_enc: Option<usize>,
    /// Grid points per axis of the reaction-diffusion data.
    pub rd_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_path: Option<PathBuf>,
    /// Record elapsed seconds in the metrics (breaks byte reproducibility).
    #[serde(default)]
    pub wall_time: bool,
}

/// Learning rate and regularisation constant of the reference experiments.
pub fn reference_hyperparameters(equation: Equation, kind: OptimizerKind) -> (f64, f64) {
    use Equation::*;
    use OptimizerKind::*;
    match (equation, kind) {
        (Diffusion, Sgd) => (5e-5, 0.0),
        (Diffusion, Adam) => (1.5e-3, 0.0),
        (Diffusion, LinBreg) => (1e-3, 1.0),
        (Diffusion, AdaBreg) => (4e-3, 1.0),
        (Advection, Sgd) => (4.5e-5, 0.0),
        (Advection, Adam) => (1e-3, 0.0),
        (Advection, LinBreg) => (6e-5, 0.01),
        (Advection, AdaBreg) => (1.4e-3, 0.1),
        (ReactionDiffusion, Sgd) => (4e-8, 0.0),
        (ReactionDiffusion, Adam) => (1.5e-3, 0.0),
        (ReactionDiffusion, LinBreg) => (2e-6, 0.1),
        (ReactionDiffusion, AdaBreg) => (2e-3, 0.1),
    }
}

impl ExperimentConfig {
    pub fn reference(equation: Equation, optimizer: OptimizerKind) -> Self {
        let (eta, lambda) = reference_hyperparameters(equation, optimizer);
        let (epochs, batch_size) = match equation {
            Equation::Diffusion => (5000, 64),
            Equation::Advection | Equation::ReactionDiffusion => (1000, 32),
        };
        ExperimentConfig {
            equation,
            optimizer,
            eta,
            lambda,
            init_density: if optimizer.is_bregman() { 0.2 } else { 1.0 },
            epochs,
            batch_size,
            seed: 0,
            c_tol: 0.01,
            layer_sizes: None,
            l_enc: None,
            rd_grid: 32,
            data_dir: None,
            model_path: None,
            metrics_path: None,
            wall_time: false,
        }
    }

    /// Reference settings for the equation and optimizer named in the
    /// layers (or the defaults), overlaid first by `file` and then by
    /// `overrides`. Later layers win key by key.
    pub fn resolve(file: Option<&Map<String, Value>>, overrides: &Map<String, Value>) -> Result<Self> {
        let pick = |key: &str| overrides.get(key).or_else(|| file.and_then(|f| f.get(key)));
        let equation: Equation = match pick("equation") {
            Some(v) => from_value("equation", v.clone())?,
            None => Equation::Diffusion,
        };
        let optimizer: OptimizerKind = match pick("optimizer") {
            Some(v) => from_value("optimizer", v.clone())?,
            None => OptimizerKind::AdaBreg,
        };
        let mut merged = match serde_json::to_value(Self::reference(equation, optimizer)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serialises to an object"),
        };
        for layer in file.into_iter().chain(std::iter::once(overrides)) {
            for (k, v) in layer {
                merged.insert(k.clone(), v.clone());
            }
        }
        let mut cfg: ExperimentConfig = from_value("config", Value::Object(merged))?;
        if !cfg.optimizer.is_bregman() {
            cfg.init_density = 1.0;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.init_density > 0.0 && self.init_density <= 1.0) {
            return Err(Error::invalid(format!(
                "init_density must lie in (0, 1], got {}",
                self.init_density
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.c_tol > 0.0) {
            return Err(Error::invalid(format!("c_tol must be positive, got {}", self.c_tol)));
        }
        if self.layer_sizes.is_none() && self.l_enc.is_some() {
            return Err(Error::invalid("l_enc given without layer_sizes"));
        }
        Ok(())
    }

    /// Regularisation constant actually used by the optimizer.
    pub fn effective_lambda(&self) -> f64 {
        if self.optimizer.is_bregman() {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        match &self.layer_sizes {
            Some(sizes) => {
                let l_enc = self.l_enc.unwrap_or(sizes.len() / 2);
                Architecture::new(sizes.clone(), l_enc)
            }
            None => Ok(match self.equation {
                Equation::Diffusion => Architecture::diffusion(),
                Equation::Advection => Architecture::advection(),
                Equation::ReactionDiffusion => Architecture::reaction_diffusion(self.rd_grid * self.rd_grid),
            }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig::new(self.optimizer, self.eta),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            record_wall_time: self.wall_time,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// File stem shared by the model and metrics files of this run.
    pub fn run_name(&self) -> String {
        format!("{}_{}_seed{}", self.equation, self.optimizer, self.seed)
    }
}

fn from_value<T: serde::de::DeserializeOwned>(what: &'static str, v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Parse {
        what,
        location: "config".into(),
        message: e.to_string(),
    })
}

/// Parses a config file body: a flat JSON object.
pub fn parse_config_text(text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Parse {
            what: "config file",
            location: "top level".into(),
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::Parse {
            what: "config file",
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        }),
    }
}
