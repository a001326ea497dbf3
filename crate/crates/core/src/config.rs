//! Run configuration shared by the command-line tools.
//!
//! A [`RunConfig`] records everything that can change an output: the
//! command, its parameters, the seed, numeric mode and model coefficients.
//! Output paths and the thread budget are recorded but left out of the
//! hash, since neither may change results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cost::EnergyModel;
use crate::error::{invalid_input, Result};
use crate::placement::{BoardModel, CoreBudget};
use crate::sim::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    /// Command-specific parameters.
    pub params: Value,
    pub seed: u64,
    pub mode: Mode,
    /// 0 uses every available core.
    pub threads: usize,
    /// Input files by role, e.g. `graph`, `raster`, `data`.
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub energy: EnergyModel,
    pub budget: CoreBudget,
    pub board: BoardModel,
}

impl RunConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            params: Value::Null,
            seed: 0,
            mode: Mode::default(),
            threads: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            energy: EnergyModel::default(),
            budget: CoreBudget::default(),
            board: BoardModel::default(),
        }
    }

    /// sha256 over the canonical JSON of every result-relevant field.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("outputs");
            m.remove("threads");
        }
        // serde_json maps are ordered (no preserve_order), so this is canonical
        let bytes = serde_json::to_vec(&v).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        self.budget.validate()?;
        if self.board.chips == 0 || self.board.cores_per_chip == 0 {
            return Err(invalid_input("board needs at least one chip and one core per chip"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let c: Self = serde_json::from_str(&text).map_err(|e| invalid_input(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }
}
