//! One function per subcommand. Each returns the result items; failures of
//! single items are recorded in the item rather than aborting the run.

use std::f64::consts::PI;

use selfmap_core::analysis::{
    limit_profile_from, limiting_convergence_check, linearized_comparison, nodal_upper_bound, winding_from_trajectory,
};
use selfmap_core::coefficients::stripe_entry_bound;
use selfmap_core::integrator::{derivative_bound_check, lyapunov_check};
use selfmap_core::shooting::shoot_trajectory;
use selfmap_core::{
    brouwer_degree, constants, m1_max, nodal_transition, shoot, solve_bvp, sweep, width_bounds, BvpSolution, Error,
    Execution, MultPair, ShootingControls, Trajectory,
};
use serde_json::{json, Map, Value};

use crate::config::{GridSpec, Interval, NodalRange, PairSpec, RunConfig};
use crate::error::CliError;
use crate::record::{ErrorInfo, ResultItem, TrajRow};
use crate::Command;

/// Published values of the largest admissible `m1` for `m0 = 2..5`.
pub const TABLE1: [(u32, u32); 4] = [(2, 4), (3, 27), (4, 60), (5, 106)];

pub const LYAPUNOV_TOL: f64 = 1e-9;
pub const SLOPE_SLACK: f64 = 1e-6;
pub const THETA_TOL: f64 = 1e-8;
pub const TAIL_TOL: f64 = 1e-4;
pub const START_TOL: f64 = 1e-8;

pub const DEFAULT_NODAL: NodalRange = NodalRange { lo: 0, hi: 3 };
pub const DEFAULT_GRID: GridSpec = GridSpec { lo: 1.0, hi: 1e6, n: 200, log: true };
pub const DEFAULT_INTERVAL: Interval = Interval { t0: 0.3, t1: 1.2 };
pub const DEFAULT_EPS: f64 = 0.1;

pub fn execute(cmd: Command, cfg: &RunConfig, c: &ShootingControls) -> Result<Vec<ResultItem>, CliError> {
    match cmd {
        Command::Table1 => table1(),
        Command::Constants => each_pair(cfg, |s, _| constants_item(s)),
        Command::Shoot => {
            let vs = cfg.slopes()?;
            each_pair(cfg, |s, p| Ok(vs.iter().map(|&v| item_or_error(s, || shoot_item(s, p, v, cfg, c))).collect()))
        }
        Command::Omega => {
            let vs = cfg.slopes()?;
            each_pair(cfg, |s, p| Ok(vs.iter().map(|&v| item_or_error(s, || omega_item(s, p, v, c))).collect()))
        }
        Command::Solve | Command::Verify => {
            let ks = cfg.nodal.unwrap_or(DEFAULT_NODAL);
            let verify = cmd == Command::Verify;
            each_pair(cfg, |s, p| {
                Ok(ks.values().map(|k| item_or_error(s, || solve_item(s, p, k, cfg, c, verify))).collect())
            })
        }
        Command::Sweep => {
            let grid = cfg.grid.unwrap_or(DEFAULT_GRID).points()?;
            each_pair(cfg, |s, p| sweep_items(s, p, &grid, c))
        }
        Command::Limit => each_pair(cfg, |s, p| Ok(vec![item_or_error(s, || limit_item(s, p, cfg, c))])),
    }
}

fn each_pair(
    cfg: &RunConfig,
    mut f: impl FnMut(PairSpec, MultPair) -> Result<Vec<ResultItem>, CliError>,
) -> Result<Vec<ResultItem>, CliError> {
    if cfg.pair.is_empty() {
        return Err(CliError::Usage("at least one --pair is required".into()));
    }
    let mut items = Vec::new();
    for &spec in &cfg.pair {
        match spec.pair().and_then(|p| f(spec, p)) {
            Ok(mut v) => items.append(&mut v),
            Err(e) => items.push(ResultItem::failed(spec, &e)),
        }
    }
    Ok(items)
}

fn item_or_error(spec: PairSpec, f: impl FnOnce() -> Result<ResultItem, CliError>) -> ResultItem {
    f().unwrap_or_else(|e| ResultItem::failed(spec, &e))
}

fn base_item(spec: PairSpec, p: MultPair) -> Result<ResultItem, CliError> {
    Ok(ResultItem { constants: Some(constants(p)?), ..ResultItem::new(spec) })
}

fn fill_from_trajectory(item: &mut ResultItem, t: &Trajectory) {
    item.v = Some(t.v);
    item.fate = Some(t.termination.to_string());
    item.nodal = Some(t.nodal());
    item.ell = t.termination.level();
    item.degree = item.ell.map(|l| brouwer_degree(l, t.pair));
}

fn rows(t: &Trajectory) -> Vec<TrajRow> {
    t.samples.iter().map(TrajRow::from).collect()
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

fn table1() -> Result<Vec<ResultItem>, CliError> {
    let mut items = Vec::new();
    for (m0, expected) in TABLE1 {
        let found = m1_max(m0)?;
        let spec = PairSpec { m0, m1: found };
        let mut item = base_item(spec, MultPair::new(m0, found)?)?;
        let bound_at = |m1| stripe_entry_bound(MultPair::new(m0, m1)?);
        let (inside, outside) = (bound_at(found)?, bound_at(found + 1)?);
        item.flags.insert("matches_table", found == expected);
        item.flags.insert("next_exceeds", outside > 1.5 * PI);
        item.data = json!({
            "m0": m0,
            "m1_max": found,
            "expected": expected,
            "entry_bound": inside,
            "entry_bound_next": outside,
            "three_half_pi": 1.5 * PI,
        });
        items.push(item);
    }
    Ok(items)
}

fn constants_item(spec: PairSpec) -> Result<Vec<ResultItem>, CliError> {
    let p = spec.pair()?;
    let mut item = base_item(spec, p)?;
    let mut data = Map::new();
    if p.m0 >= 2 {
        let wb = width_bounds(p)?;
        item.flags.insert("width_bounds", wb.all_hold());
        data.insert("width_bounds".into(), to_value(&wb));
    }
    data.insert("stripe_entry_bound".into(), to_value(&stripe_entry_bound(p).ok()));
    if (2..=5).contains(&p.m0) {
        let top = m1_max(p.m0)?;
        data.insert("table1".into(), json!({"m1_max": top, "within": p.m0 <= p.m1 && p.m1 <= top}));
    }
    if p.m0 >= 6 {
        data.insert("nodal_upper_bound".into(), to_value(&nodal_upper_bound(p).ok()));
    }
    item.data = Value::Object(data);
    Ok(vec![item])
}

fn shoot_item(spec: PairSpec, p: MultPair, v: f64, cfg: &RunConfig, c: &ShootingControls) -> Result<ResultItem, CliError> {
    let mut item = base_item(spec, p)?;
    let out = shoot(p, v, &c.ode)?;
    let t = &out.trajectory;
    fill_from_trajectory(&mut item, t);
    if cfg.trajectory.unwrap_or(true) {
        item.trajectory = Some(rows(t));
    }
    item.data = json!({"x_end": t.x_end, "matched": t.matched, "crossings": out.crossings});
    Ok(item)
}

fn omega_item(spec: PairSpec, p: MultPair, v: f64, c: &ShootingControls) -> Result<ResultItem, CliError> {
    let mut item = base_item(spec, p)?;
    let t = shoot_trajectory(p, v, &c.ode)?;
    fill_from_trajectory(&mut item, &t);
    let w = winding_from_trajectory(&t)?;
    if t.termination.is_classified() {
        item.flags.insert("winding_consistent", (w.floor_omega() - t.nodal() as i64).abs() <= 1);
    }
    let mut data = json!({"winding": w, "floor_omega": w.floor_omega()});
    if p.m0 >= 6 {
        let (lin, gap) = linearized_comparison(&w, &c.ode)?;
        item.flags.insert("theta_above_linearized", gap >= -THETA_TOL);
        data["linearized"] = json!({"theta": lin, "min_gap": gap});
    }
    item.data = data;
    Ok(item)
}

fn solve_item(
    spec: PairSpec,
    p: MultPair,
    k: u32,
    cfg: &RunConfig,
    c: &ShootingControls,
    verify: bool,
) -> Result<ResultItem, CliError> {
    let mut item = base_item(spec, p)?;
    let sol = solve_bvp(p, k, c)?;
    let t = sol.trajectory();
    fill_from_trajectory(&mut item, t);
    if cfg.trajectory.unwrap_or(!verify) {
        item.trajectory = Some(rows(t));
    }
    let mut data = json!({
        "k": k,
        "v_bracket": sol.v_bracket,
        "end_defect": selfmap_core::shooting::end_defect(&sol),
        "matched": t.matched,
        "degree_three": sol.degree_three,
    });
    if verify {
        data["checks"] = verify_checks(&sol, &mut item)?;
    }
    item.data = data;
    Ok(item)
}

/// Property suite on one solution. Flags go into `item`; details are returned.
fn verify_checks(sol: &BvpSolution, item: &mut ResultItem) -> Result<Value, CliError> {
    let t = sol.trajectory();
    let lyap = lyapunov_check(t);
    let slopes = derivative_bound_check(t);
    let w = winding_from_trajectory(t)?;
    item.flags.insert("lyapunov", lyap.passes(LYAPUNOV_TOL));
    item.flags.insert("derivative_bounds", slopes.passes(SLOPE_SLACK));
    item.flags.insert("ell_range", (-1..=1).contains(&sol.ell));
    item.flags.insert("degree_values", matches!(sol.degree.abs(), 1 | 3));
    item.flags.insert("winding_consistent", (w.floor_omega() - sol.nodal() as i64).abs() <= 1);
    Ok(json!({
        "lyapunov": lyap,
        "derivative_bounds": slopes,
        "omega": w.omega,
        "floor_omega": w.floor_omega(),
    }))
}

fn sweep_items(spec: PairSpec, p: MultPair, grid: &[f64], c: &ShootingControls) -> Result<Vec<ResultItem>, CliError> {
    let k = constants(p)?;
    let bound = (p.m0 >= 6).then(|| nodal_upper_bound(p)).transpose()?;
    let mut items = Vec::with_capacity(grid.len() + 1);
    let mut max_nodal = 0;
    for row in sweep(p, grid, &c.ode, Execution::Parallel) {
        let mut item = ResultItem { v: Some(row.v), constants: Some(k), ..ResultItem::new(spec) };
        item.fate = row.fate.map(|f| f.to_string());
        item.nodal = row.nodal;
        item.ell = row.ell;
        item.degree = row.ell.map(|l| brouwer_degree(l, p));
        if let Some(msg) = row.error {
            item.error = Some(ErrorInfo { kind: "numerical", message: msg });
        }
        if let (Some(n), Some(b)) = (row.nodal, bound) {
            item.flags.insert("within_nodal_bound", n as f64 <= b);
        }
        max_nodal = max_nodal.max(row.nodal.unwrap_or(0));
        items.push(item);
    }
    // Summary: the largest nodal count seen and, above it, whether any
    // further transition exists up to the slope ceiling.
    let mut summary = ResultItem { constants: Some(k), ..ResultItem::new(spec) };
    summary.nodal = Some(max_nodal);
    let seed = grid.iter().copied().fold(f64::NAN, f64::max);
    let plateau = match nodal_transition(p, max_nodal, seed, c) {
        Ok(bracket) => json!({"transition": bracket}),
        Err(Error::NoTransition { ceiling, .. }) => json!({"transition": null, "ceiling": ceiling}),
        Err(e) => {
            let e = CliError::from(e);
            summary.error = Some(ErrorInfo { kind: e.kind(), message: e.to_string() });
            json!({"transition": "unknown"})
        }
    };
    if bound.is_some() && summary.error.is_none() {
        summary.flags.insert("plateau", plateau["transition"].is_null());
    }
    summary.data = json!({"summary": true, "max_nodal": max_nodal, "nodal_upper_bound": bound, "above_max": plateau});
    items.push(summary);
    Ok(items)
}

fn limit_item(spec: PairSpec, p: MultPair, cfg: &RunConfig, c: &ShootingControls) -> Result<ResultItem, CliError> {
    let mut item = base_item(spec, p)?;
    let x_start = cfg.x_start_or_default();
    let prof = limit_profile_from(p.m0, x_start, &c.ode)?;
    let alt = limit_profile_from(p.m0, x_start - 5.0, &c.ode)?;
    let sensitivity = (prof.tail_value - alt.tail_value).abs();
    item.flags.insert("tail_vanishes", prof.tail_value.abs() < TAIL_TOL);
    item.flags.insert("start_insensitive", sensitivity < START_TOL);
    if cfg.trajectory.unwrap_or(true) {
        item.trajectory =
            Some(prof.samples.iter().map(|&(x, r, rp)| TrajRow { x, r, rp, w: None, v: None }).collect());
    }
    let mut data = json!({
        "m0": p.m0,
        "x_start": prof.x_start,
        "x_end": prof.x_end,
        "tail_value": prof.tail_value,
        "seed_defect": prof.seed_defect,
        "x_start_sensitivity": sensitivity,
    });
    if let Some(ks) = cfg.nodal {
        let sols = ks.values().map(|k| solve_bvp(p, k, c)).collect::<Result<Vec<_>, _>>();
        match sols {
            Ok(sols) => {
                let iv = cfg.interval.unwrap_or(DEFAULT_INTERVAL);
                let rep = limiting_convergence_check(&sols, (iv.t0, iv.t1), cfg.eps.unwrap_or(DEFAULT_EPS))?;
                item.flags.insert("rho_decreasing", rep.strictly_decreasing);
                item.flags.insert("rho_below_eps", rep.last_below_eps);
                data["rho"] = to_value(&rep);
            }
            Err(e) => {
                let e = CliError::from(e);
                item.error = Some(ErrorInfo { kind: e.kind(), message: e.to_string() });
            }
        }
    }
    item.data = data;
    Ok(item)
}
