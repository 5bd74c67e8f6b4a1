//! The serialized result of one run.

use std::collections::BTreeMap;

use selfmap_core::integrator::Sample;
use selfmap_core::{ShootingControls, StructuralConstants};
use serde::Serialize;
use serde_json::Value;

use crate::config::{PairSpec, RunConfig};
use crate::error::CliError;
use crate::Command;

/// One trajectory sample: `x`, `r`, `r'` and the Lyapunov values `W`, `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajRow {
    pub x: f64,
    pub r: f64,
    pub rp: f64,
    pub w: Option<f64>,
    pub v: Option<f64>,
}

impl From<&Sample> for TrajRow {
    fn from(s: &Sample) -> Self {
        TrajRow { x: s.x, r: s.r, rp: s.r_prime, w: Some(s.w_val), v: Some(s.v_val) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultItem {
    pub pair: PairSpec,
    pub v: Option<f64>,
    pub fate: Option<String>,
    pub nodal: Option<u32>,
    pub ell: Option<i64>,
    pub degree: Option<i64>,
    pub constants: Option<StructuralConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajRow>>,
    /// Named property checks; `false` marks a violation.
    pub flags: BTreeMap<&'static str, bool>,
    /// Command-specific details.
    #[serde(skip_serializing_if = "Value::is_null")]
    pub data: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl ResultItem {
    pub fn new(pair: PairSpec) -> Self {
        ResultItem {
            pair,
            v: None,
            fate: None,
            nodal: None,
            ell: None,
            degree: None,
            constants: None,
            trajectory: None,
            flags: BTreeMap::new(),
            data: Value::Null,
            error: None,
        }
    }

    pub fn failed(pair: PairSpec, e: &CliError) -> Self {
        ResultItem { error: Some(ErrorInfo { kind: e.kind(), message: e.to_string() }), ..ResultItem::new(pair) }
    }

    /// Names of the flags that are `false`.
    pub fn violations(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.flags.iter().filter(|(_, ok)| !**ok).map(|(k, _)| *k)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub exit_code: i32,
    pub violations: Vec<String>,
    pub errors: usize,
    /// Set when a solution with `|degree| = 3` was returned.
    pub degree_three_watchdog: bool,
    pub parallel: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: Command,
    pub config: RunConfig,
    pub version: &'static str,
    pub timestamp: String,
    pub controls: ShootingControls,
    pub results: Vec<ResultItem>,
    pub diagnostics: Diagnostics,
}
