//! A single decision interface over the baseline and solved policies.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::types::{
    epoch_coords, Action, EpochCoords, ParamError, Params, State, TabularPolicy, ThresholdPolicy,
};

/// Every policy the simulator and evaluators can run. All of them send a new
/// arrival immediately when the link is idle.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    /// Never preempt.
    Myopic,
    /// Preempt on every arrival.
    AlwaysSwitch,
    Threshold(ThresholdPolicy),
    Tabular(TabularPolicy),
}

impl PolicyKind {
    /// Decision from the MDP state alone. Threshold policies derive epoch
    /// coordinates from the state; busy states without coordinates (at or
    /// above the truncation boundary) are treated as past every threshold.
    pub fn decide(&self, s: &State) -> Action {
        let coords = match self {
            PolicyKind::Threshold(tp) => epoch_coords(s, &tp.params),
            _ => None,
        };
        self.decide_at(s, coords)
    }

    /// Decision when the caller already tracks the epoch position of the
    /// update in service (`None` when idle). Tabular policies ignore the
    /// coordinates and look up the state, clamping AoI to their boundary.
    pub fn decide_at(&self, s: &State, coords: Option<EpochCoords>) -> Action {
        if let PolicyKind::Tabular(tab) = self {
            return tab.action(s);
        }
        if !s.arrival {
            return Action::Skip;
        }
        if s.is_idle() {
            return Action::Switch;
        }
        let switch = match self {
            PolicyKind::Myopic => false,
            PolicyKind::AlwaysSwitch => true,
            PolicyKind::Threshold(tp) => coords.is_some_and(|c| tp.switches(c)),
            PolicyKind::Tabular(_) => unreachable!("handled above"),
        };
        if switch {
            Action::Switch
        } else {
            Action::Skip
        }
    }

    /// The table this policy induces on the state space of `params`.
    /// Epoch coordinates are taken relative to `params`, so a threshold
    /// policy can be laid over any truncation.
    pub fn tabulate(&self, params: Params) -> Result<TabularPolicy, ParamError> {
        TabularPolicy::from_fn(params, |s| self.decide_at(s, epoch_coords(s, &params)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Myopic => "myopic",
            PolicyKind::AlwaysSwitch => "always-switch",
            PolicyKind::Threshold(_) => "threshold",
            PolicyKind::Tabular(_) => "tabular",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PolicySpecError {
    #[error("unknown policy '{0}'; expected myopic | always-switch | threshold:<file.json> | tabular:<file.json>")]
    Unknown(String),
    #[error("policy '{0}' needs a file path after the colon")]
    MissingPath(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Command-line policy selector:
/// `myopic | always-switch | threshold:<file.json> | tabular:<file.json>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Myopic,
    AlwaysSwitch,
    Threshold(PathBuf),
    Tabular(PathBuf),
}

impl FromStr for PolicySpec {
    type Err = PolicySpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, path) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let file = |path: Option<&str>| match path {
            Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
            _ => Err(PolicySpecError::MissingPath(s.to_string())),
        };
        match kind {
            "myopic" if path.is_none() => Ok(PolicySpec::Myopic),
            "always-switch" if path.is_none() => Ok(PolicySpec::AlwaysSwitch),
            "threshold" => Ok(PolicySpec::Threshold(file(path)?)),
            "tabular" => Ok(PolicySpec::Tabular(file(path)?)),
            _ => Err(PolicySpecError::Unknown(s.to_string())),
        }
    }
}

impl PolicySpec {
    /// Reads any referenced policy file.
    pub fn load(&self) -> Result<PolicyKind, PolicySpecError> {
        fn read<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, PolicySpecError> {
            let text = std::fs::read_to_string(path).map_err(|source| PolicySpecError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|source| PolicySpecError::Json {
                path: path.clone(),
                source,
            })
        }
        Ok(match self {
            PolicySpec::Myopic => PolicyKind::Myopic,
            PolicySpec::AlwaysSwitch => PolicyKind::AlwaysSwitch,
            PolicySpec::Threshold(p) => PolicyKind::Threshold(read(p)?),
            PolicySpec::Tabular(p) => PolicyKind::Tabular(read(p)?),
        })
    }
}
