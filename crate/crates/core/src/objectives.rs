//! Tasks and their fixed objective orderings.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    ObjectNav,
    FleeNav,
}

/// Canonical objective order for object-goal navigation.
pub const OBJECTNAV_OBJECTIVES: [&str; 5] =
    ["time_efficiency", "path_efficiency", "house_exploration", "object_exploration", "safety"];

/// Canonical objective order for flee navigation.
pub const FLEENAV_OBJECTIVES: [&str; 3] = ["time_efficiency", "house_exploration", "safety"];

/// Index of each objective inside a sub-reward vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    TimeEfficiency,
    PathEfficiency,
    HouseExploration,
    ObjectExploration,
    Safety,
}

impl TaskKind {
    pub fn k(self) -> usize {
        self.objectives().len()
    }

    pub fn objectives(self) -> &'static [&'static str] {
        match self {
            TaskKind::ObjectNav => &OBJECTNAV_OBJECTIVES,
            TaskKind::FleeNav => &FLEENAV_OBJECTIVES,
        }
    }

    pub fn index_of(self, objective: Objective) -> Option<usize> {
        use Objective::*;
        match (self, objective) {
            (_, TimeEfficiency) => Some(0),
            (TaskKind::ObjectNav, PathEfficiency) => Some(1),
            (TaskKind::ObjectNav, HouseExploration) => Some(2),
            (TaskKind::ObjectNav, ObjectExploration) => Some(3),
            (TaskKind::ObjectNav, Safety) => Some(4),
            (TaskKind::FleeNav, HouseExploration) => Some(1),
            (TaskKind::FleeNav, Safety) => Some(2),
            (TaskKind::FleeNav, _) => None,
        }
    }

    /// Default prioritization factor used for peaked evaluation sweeps.
    pub fn default_nu(self) -> f64 {
        match self {
            TaskKind::ObjectNav => 4.0,
            TaskKind::FleeNav => 3.0,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::ObjectNav => "objectnav",
            TaskKind::FleeNav => "fleenav",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "objectnav" => Ok(TaskKind::ObjectNav),
            "fleenav" => Ok(TaskKind::FleeNav),
            other => Err(Error::invalid(format!("unknown task '{other}'"))),
        }
    }
}
