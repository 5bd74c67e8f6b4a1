//! Run configuration shared by the command line and config files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use selfmap_core::analysis::LIMIT_X_START;
use selfmap_core::shooting::v_grid;
use selfmap_core::{IntegratorControls, MultPair, ShootingControls};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// `m0,m1`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PairSpec {
    pub m0: u32,
    pub m1: u32,
}

impl PairSpec {
    pub fn pair(self) -> Result<MultPair, CliError> {
        MultPair::new(self.m0, self.m1).map_err(CliError::from)
    }
}

impl FromStr for PairSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected m0,m1, got {s:?}"))?;
        let num = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("bad multiplicity {t:?}: {e}"));
        Ok(PairSpec { m0: num(a)?, m1: num(b)? })
    }
}

impl fmt::Display for PairSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.m0, self.m1)
    }
}

impl TryFrom<String> for PairSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PairSpec> for String {
    fn from(p: PairSpec) -> String {
        p.to_string()
    }
}

/// A single nodal number `k` or an inclusive range `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodalRange {
    pub lo: u32,
    pub hi: u32,
}

impl NodalRange {
    pub fn values(self) -> impl Iterator<Item = u32> {
        self.lo..=self.hi
    }
}

impl FromStr for NodalRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("bad nodal number {t:?}: {e}"));
        let (lo, hi) = match s.split_once("..") {
            Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
            None => (num(s)?, num(s)?),
        };
        if hi < lo {
            return Err(format!("empty nodal range {s:?}"));
        }
        Ok(NodalRange { lo, hi })
    }
}

impl fmt::Display for NodalRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}..{}", self.lo, self.hi)
        }
    }
}

impl TryFrom<String> for NodalRange {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<NodalRange> for String {
    fn from(r: NodalRange) -> String {
        r.to_string()
    }
}

/// `lo:hi:n[:log]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub log: bool,
}

impl GridSpec {
    pub fn points(self) -> Result<Vec<f64>, CliError> {
        v_grid(self.lo, self.hi, self.n, self.log).map_err(CliError::from)
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let log = match parts.get(3).copied() {
            None => false,
            Some("log") => true,
            Some("lin") => false,
            Some(other) => return Err(format!("grid spacing must be log or lin, got {other:?}")),
        };
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected lo:hi:n[:log], got {s:?}"));
        }
        let f = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad grid bound {t:?}: {e}"));
        let n = parts[2].trim().parse::<usize>().map_err(|e| format!("bad grid size {:?}: {e}", parts[2]))?;
        if n == 0 {
            return Err("grid must have at least one point".into());
        }
        Ok(GridSpec { lo: f(parts[0])?, hi: f(parts[1])?, n, log })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}:{:e}:{}", self.lo, self.hi, self.n)?;
        if self.log {
            f.write_str(":log")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for GridSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

/// `t0,t1` in the original variable `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Interval {
    pub t0: f64,
    pub t1: f64,
}

impl FromStr for Interval {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected t0,t1, got {s:?}"))?;
        let f = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad interval end {t:?}: {e}"));
        Ok(Interval { t0: f(a)?, t1: f(b)? })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e},{:e}", self.t0, self.t1)
    }
}

impl TryFrom<String> for Interval {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Interval> for String {
    fn from(i: Interval) -> String {
        i.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Every option a run can take. Command-line flags and config files use
/// the same keys; flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Multiplicities `m0,m1`; repeat for several pairs.
    #[arg(long = "pair", value_name = "M0,M1", global = true)]
    pub pair: Vec<PairSpec>,
    /// Initial slope; repeat for several shots.
    #[arg(long, value_name = "V", global = true, allow_hyphen_values = true)]
    pub v: Vec<f64>,
    /// Nodal number `k` or inclusive range `a..b`.
    #[arg(long, value_name = "K|A..B", global = true)]
    pub nodal: Option<NodalRange>,
    /// Slope grid `lo:hi:n[:log]`.
    #[arg(long, value_name = "LO:HI:N[:log]", global = true)]
    pub grid: Option<GridSpec>,
    /// Interval `t0,t1` for the limiting-configuration check.
    #[arg(long, value_name = "T0,T1", global = true)]
    pub interval: Option<Interval>,
    /// Threshold for the limiting-configuration check.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Relative step tolerance of the integrator
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
    /// Absolute step tolerance of the integrator
    #[arg(long, global = true)]
    pub abs_tol: Option<f64>,
    /// Right end of the integration in x = log tan t
    #[arg(long, global = true)]
    pub x_max: Option<f64>,
    /// Start of the limit profile (negative).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x_start: Option<f64>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Write output here instead of stdout.
    #[arg(long, value_name = "PATH", global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps; defaults to the available parallelism.
    #[arg(long, value_name = "N", global = true)]
    pub threads: Option<usize>,
    /// Include trajectory samples in the output.
    #[arg(long, value_name = "BOOL", global = true)]
    pub trajectory: Option<bool>,
}

impl RunConfig {
    /// `self` with unset fields taken from `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        RunConfig {
            pair: if self.pair.is_empty() { base.pair } else { self.pair },
            v: if self.v.is_empty() { base.v } else { self.v },
            nodal: self.nodal.or(base.nodal),
            grid: self.grid.or(base.grid),
            interval: self.interval.or(base.interval),
            eps: self.eps.or(base.eps),
            rel_tol: self.rel_tol.or(base.rel_tol),
            abs_tol: self.abs_tol.or(base.abs_tol),
            x_max: self.x_max.or(base.x_max),
            x_start: self.x_start.or(base.x_start),
            format: self.format.or(base.format),
            out: self.out.or(base.out),
            threads: self.threads.or(base.threads),
            trajectory: self.trajectory.or(base.trajectory),
        }
    }

    /// Fill the numerical settings with their defaults so the echoed config
    /// reproduces the run on its own.
    pub fn resolved(mut self) -> RunConfig {
        let d = IntegratorControls::default();
        self.rel_tol.get_or_insert(d.rel_tol);
        self.abs_tol.get_or_insert(d.abs_tol);
        self.x_max.get_or_insert(d.x_max);
        self.format.get_or_insert(Format::Json);
        self
    }

    pub fn controls(&self) -> Result<ShootingControls, CliError> {
        let d = IntegratorControls::default();
        let ode = IntegratorControls {
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            x_max: self.x_max.unwrap_or(d.x_max),
            ..d
        };
        let c = ShootingControls { ode, ..ShootingControls::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn pairs(&self) -> Result<Vec<MultPair>, CliError> {
        if self.pair.is_empty() {
            return Err(CliError::Usage("at least one --pair is required".into()));
        }
        self.pair.iter().map(|p| p.pair()).collect()
    }

    pub fn slopes(&self) -> Result<&[f64], CliError> {
        if self.v.is_empty() {
            return Err(CliError::Usage("at least one --v is required".into()));
        }
        if let Some(v) = self.v.iter().find(|v| !v.is_finite()) {
            return Err(CliError::Usage(format!("slope must be finite, got {v}")));
        }
        Ok(&self.v)
    }

    pub fn x_start_or_default(&self) -> f64 {
        self.x_start.unwrap_or(LIMIT_X_START)
    }

    pub fn threads_checked(&self) -> Result<Option<usize>, CliError> {
        match self.threads {
            Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
            t => Ok(t),
        }
    }
}

/// Read a config file. JSON and TOML are accepted; a JSON run record is
/// accepted too and its `config` object is used.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let bad = |e: String| CliError::Usage(format!("bad config {}: {e}", path.display()));
    if is_toml {
        return toml::from_str(&text).map_err(|e| bad(e.to_string()));
    }
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if value.get("results").is_some() {
        value = value["config"].take();
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_values_parse() {
        assert_eq!("2,4".parse::<PairSpec>().unwrap(), PairSpec { m0: 2, m1: 4 });
        assert!("2;4".parse::<PairSpec>().is_err());
        assert_eq!("0..3".parse::<NodalRange>().unwrap().values().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!("2".parse::<NodalRange>().unwrap(), NodalRange { lo: 2, hi: 2 });
        assert!("3..1".parse::<NodalRange>().is_err());
        let g: GridSpec = "1:1e6:200:log".parse().unwrap();
        assert_eq!((g.lo, g.hi, g.n, g.log), (1.0, 1e6, 200, true));
        assert!("1:2".parse::<GridSpec>().is_err());
        assert!("1:2:0".parse::<GridSpec>().is_err());
        assert_eq!("0.3,1.2".parse::<Interval>().unwrap(), Interval { t0: 0.3, t1: 1.2 });
    }

    #[test]
    fn display_round_trips() {
        for s in ["1:1000000:200:log", "0.5:2:3"] {
            let g: GridSpec = s.parse().unwrap();
            assert_eq!(g.to_string().parse::<GridSpec>().unwrap(), g);
        }
        let i = Interval { t0: 0.1 + 0.2, t1: 1.2 };
        assert_eq!(i.to_string().parse::<Interval>().unwrap(), i);
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig { pair: vec!["2,2".parse().unwrap()], eps: Some(0.2), ..Default::default() };
        let flags = RunConfig { eps: Some(0.1), ..Default::default() };
        let c = flags.over(file);
        assert_eq!(c.pair.len(), 1);
        assert_eq!(c.eps, Some(0.1));
    }

    #[test]
    fn toml_and_json_use_the_same_keys() {
        let t: RunConfig = toml::from_str("pair = [\"3,3\"]\nnodal = \"0..2\"\nrel_tol = 1e-11\n").unwrap();
        let j: RunConfig = serde_json::from_str(r#"{"pair":["3,3"],"nodal":"0..2","rel_tol":1e-11}"#).unwrap();
        assert_eq!(t, j);
        assert!(serde_json::from_str::<RunConfig>(r#"{"colour":1}"#).is_err());
    }
}
