//! Dataset families and their learning-rate defaults.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Chromophore,
    Solvation,
    Ddi,
}

impl Task {
    pub fn pretrain_lr(self) -> f64 {
        match self {
            Task::Chromophore => 5e-4,
            Task::Solvation => 1e-4,
            Task::Ddi => 5e-4,
        }
    }

    pub fn finetune_lr(self) -> f64 {
        match self {
            Task::Chromophore => 5e-3,
            Task::Solvation => 1e-3,
            Task::Ddi => 5e-4,
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Task::Ddi => Objective::BinaryClassification,
            _ => Objective::Regression,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chromophore" => Ok(Task::Chromophore),
            "solvation" => Ok(Task::Solvation),
            "ddi" => Ok(Task::Ddi),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Regression,
    BinaryClassification,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Objective::Regression),
            "binary_classification" => Ok(Objective::BinaryClassification),
            other => Err(Error::config("task", format!("unknown objective `{other}`"))),
        }
    }
}
