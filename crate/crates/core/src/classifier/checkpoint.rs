//! Versioned JSON checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! {
//!   "format": "lwbc-classifier",
//!   "version": 1,
//!   "d_in": .., "d_hidden": .., "classes": ..,
//!   "state": {
//!     "w1": {"rows": d_in, "cols": d_hidden, "data": [row-major]},
//!     "b1": [..], "w2": {..}, "b2": [..],
//!     "adam": {"first": {w1,b1,w2,b2}, "second": {..}, "step": n,
//!              "beta1": .., "beta2": .., "eps": ..}
//!   }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassifierState;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

pub const CHECKPOINT_FORMAT: &str = "lwbc-classifier";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
struct Checkpoint<T> {
    format: String,
    version: u32,
    d_in: usize,
    d_hidden: usize,
    classes: usize,
    state: ClassifierState<T>,
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> ClassifierState<T> {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            d_in: self.d_in(),
            d_hidden: self.d_hidden(),
            classes: self.classes(),
            state: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: Checkpoint<T> = serde_json::from_str(text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unexpected checkpoint format {:?}", doc.format)));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", doc.version)));
        }
        let state = doc.state;
        state.validate()?;
        if (state.d_in(), state.d_hidden(), state.classes()) != (doc.d_in, doc.d_hidden, doc.classes) {
            return Err(Error::Format("declared dimensions disagree with parameters".into()));
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(state)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
