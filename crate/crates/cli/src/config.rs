//! Experiment configuration: one flat JSON object holding every training
//! hyperparameter and data-generator field by its exact name, plus the
//! evaluation-set sizes.

use std::path::Path;

use lwbc_core::trainer::streams;
use lwbc_core::{datagen, BiasedSpec, Dataset, RngStream, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Evaluation-set fields that belong to neither the trainer nor the
/// generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub n_val: usize,
    pub n_test: usize,
    /// Conflicting ratio of val/test. `None` means `1 - 1/C`, which makes
    /// every (y, a) cell equally likely.
    pub eval_rho: Option<f64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n_val: 1000,
            n_test: 1000,
            eval_rho: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: BiasedSpec,
    pub eval: EvalSpec,
}

fn field_names<T: Serialize + Default>() -> Vec<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn parse_part<T: for<'de> Deserialize<'de>>(part: Map<String, Value>, what: &str) -> CliResult<T> {
    serde_json::from_value(Value::Object(part)).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> CliResult<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let train_keys = field_names::<TrainConfig>();
        let data_keys = field_names::<BiasedSpec>();
        let eval_keys = field_names::<EvalSpec>();
        let (mut train, mut data, mut eval) = (Map::new(), Map::new(), Map::new());
        for (key, v) in map {
            if train_keys.contains(&key) {
                train.insert(key, v);
            } else if data_keys.contains(&key) {
                data.insert(key, v);
            } else if eval_keys.contains(&key) {
                eval.insert(key, v);
            } else {
                return Err(CliError::Config(format!("unknown config key {key:?}")));
            }
        }
        let config = Self {
            train: parse_part(train, "training fields")?,
            data: parse_part(data, "data fields")?,
            eval: parse_part(eval, "evaluation fields")?,
        };
        Ok(config)
    }

    /// Reads a config file. A missing or unreadable file is a configuration
    /// error, not an I/O one.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Flat JSON echo with every field spelled out.
    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        for part in [
            serde_json::to_value(&self.train),
            serde_json::to_value(&self.data),
            serde_json::to_value(&self.eval),
        ]
        .into_iter()
        .flatten()
        {
            if let Value::Object(m) = part {
                map.extend(m);
            }
        }
        Value::Object(map)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.data.validate()?;
        self.eval_spec(&self.data, self.eval.n_val)?.validate()?;
        if self.eval.n_val == 0 || self.eval.n_test == 0 {
            return Err(CliError::Config("n_val and n_test must be at least 1".into()));
        }
        Ok(())
    }

    /// Generator spec for an evaluation set of `n` samples drawn like
    /// `train_spec` except for the conflicting ratio.
    pub fn eval_spec(&self, train_spec: &BiasedSpec, n: usize) -> CliResult<BiasedSpec> {
        let c = train_spec.classes as f64;
        let rho = self.eval.eval_rho.unwrap_or(1.0 - 1.0 / c);
        Ok(BiasedSpec {
            n,
            rho,
            ..train_spec.clone()
        })
    }
}

/// Train, validation and test sets of one run.
pub struct RunData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Generates every split from `seed`, or loads the training set from `data`
/// and generates val/test from its sidecar spec.
pub fn build_data(config: &ExperimentConfig, seed: u64, data: Option<&Path>) -> CliResult<RunData> {
    let train = match data {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!("data file {} does not exist", path.display())));
            }
            Dataset::import_csv(path)?
        }
        None => datagen::generate(&config.data, &mut RngStream::new(seed, streams::DATA_TRAIN))?,
    };
    let spec = train.spec().clone();
    let val_spec = config.eval_spec(&spec, config.eval.n_val)?;
    let test_spec = config.eval_spec(&spec, config.eval.n_test)?;
    let val = datagen::generate(&val_spec, &mut RngStream::new(seed, streams::DATA_VAL))?;
    let test = datagen::generate(&test_spec, &mut RngStream::new(seed, streams::DATA_TEST))?;
    Ok(RunData { train, val, test })
}
