//! Acceptance suite: one pass/fail line per criterion.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use selfmap_core::analysis::{
    limit_profile_from, limiting_convergence_check, linearized_comparison, nodal_upper_bound, reflect_mm,
    winding_from_trajectory, LIMIT_X_START,
};
use selfmap_core::integrator::{derivative_bound_check, lyapunov_check};
use selfmap_core::shooting::{shoot_trajectory, v_grid};
use selfmap_core::{
    nodal_transition, solve_bvp, sweep, BvpSolution, Error, Execution, MultPair, ShootingControls, TerminationCause,
};

const IDENTITY_TOL: f64 = 1e-6;
const LYAPUNOV_TOL: f64 = 1e-9;
const SLOPE_SLACK: f64 = 1e-6;
const SWEEP_POINTS: usize = 200;
const RHO_INTERVAL: (f64, f64) = (0.3, 1.2);
const RHO_EPS: f64 = 0.1;
const REFLECTION_TOL: f64 = 1e-8;
const THETA_TOL: f64 = 1e-8;
const TAIL_TOL: f64 = 1e-4;
const START_TOL: f64 = 1e-8;
const START_SHIFT: f64 = 5.0;
const ROBUST_FACTOR: f64 = 10.0;
const ROBUST_TOL: f64 = 1e-6;

const SOLVE_PAIRS: [(u32, u32); 4] = [(2, 2), (2, 3), (3, 3), (5, 7)];

fn pair(m0: u32, m1: u32) -> MultPair {
    MultPair::new(m0, m1).unwrap()
}

/// Outputs of one criterion, compared by criterion 11.
#[derive(Default)]
struct Outputs {
    ints: BTreeMap<String, i64>,
    reals: BTreeMap<String, f64>,
}

impl Outputs {
    fn int(&mut self, key: impl Into<String>, v: i64) {
        self.ints.insert(key.into(), v);
    }

    fn real(&mut self, key: impl Into<String>, v: f64) {
        self.reals.insert(key.into(), v);
    }
}

fn fate_code(f: TerminationCause) -> i64 {
    match f {
        TerminationCause::Converged(l) => 10 * l,
        TerminationCause::BlowUpPlus => 1,
        TerminationCause::BlowUpMinus => 2,
        TerminationCause::ReachedXMax => 3,
        TerminationCause::StepFailure => 4,
        TerminationCause::Constant => 5,
    }
}

struct Verdict {
    pass: bool,
    detail: String,
    elapsed: Duration,
}

struct Line {
    id: u32,
    title: &'static str,
    verdict: Verdict,
}

fn timed(f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t = Instant::now();
    let (pass, detail) = f();
    Verdict { pass, detail, elapsed: t.elapsed() }
}

/// State shared between criteria 3 to 10 for one set of tolerances.
struct Suite {
    c: ShootingControls,
    solutions: BTreeMap<(u32, u32), Vec<BvpSolution>>,
    sweep_v: Vec<f64>,
    out: BTreeMap<u32, Outputs>,
}

impl Suite {
    fn new(c: ShootingControls) -> Self {
        Suite { c, solutions: BTreeMap::new(), sweep_v: Vec::new(), out: BTreeMap::new() }
    }

    fn out(&mut self, id: u32) -> &mut Outputs {
        self.out.entry(id).or_default()
    }

    fn identity(&mut self) -> (bool, String) {
        let mut ok = true;
        let mut notes = Vec::new();
        for (m0, m1) in [(2, 2), (3, 5)] {
            let start = Instant::now();
            let t = match shoot_trajectory(pair(m0, m1), 1.0, &self.c.ode) {
                Ok(t) => t,
                Err(e) => return (false, format!("({m0},{m1}): {e}")),
            };
            let err = (0..=4000)
                .map(|i| -10.0 + 20.0 * i as f64 / 4000.0)
                .map(|x| t.state_at(x).map_or(f64::INFINITY, |s| (s.r - x.exp().atan()).abs()))
                .fold(0.0, f64::max);
            let dt = start.elapsed();
            let good = t.termination == TerminationCause::Converged(0)
                && t.nodal() == 0
                && err <= IDENTITY_TOL
                && dt < Duration::from_secs(1);
            ok &= good;
            notes.push(format!("({m0},{m1}) {} nodal {} max err {err:.1e} in {dt:.1?}", t.termination, t.nodal()));
            let o = self.out(2);
            o.int(format!("{m0},{m1} fate"), fate_code(t.termination));
            o.int(format!("{m0},{m1} nodal"), t.nodal() as i64);
            o.real(format!("{m0},{m1} max err"), err);
        }
        (ok, notes.join("; "))
    }

    fn solutions(&mut self) -> (bool, String) {
        let mut ok = true;
        let mut bad = Vec::new();
        let mut watchdog = 0;
        let mut count = 0;
        for (m0, m1) in SOLVE_PAIRS {
            let mut sols = Vec::new();
            for k in 0..=3 {
                match solve_bvp(pair(m0, m1), k, &self.c) {
                    Ok(s) => {
                        let good = s.nodal() == k && (-1..=1).contains(&s.ell) && matches!(s.degree.abs(), 1 | 3);
                        if !good {
                            bad.push(format!("({m0},{m1}) k={k}: nodal {} ell {} degree {}", s.nodal(), s.ell, s.degree));
                        }
                        ok &= good;
                        watchdog += s.degree_three as usize;
                        count += 1;
                        let o = self.out(3);
                        let key = format!("{m0},{m1} k={k}");
                        o.int(format!("{key} nodal"), s.nodal() as i64);
                        o.int(format!("{key} ell"), s.ell);
                        o.int(format!("{key} degree"), s.degree);
                        o.real(format!("{key} v"), s.v());
                        sols.push(s);
                    }
                    Err(e) => {
                        ok = false;
                        bad.push(format!("({m0},{m1}) k={k}: {e}"));
                    }
                }
            }
            self.solutions.insert((m0, m1), sols);
        }
        let mut detail = format!("{count}/16 solutions, |degree| = 3 watchdog: {watchdog}");
        if watchdog > 0 {
            detail += " (WATCHDOG: degree-3 solution returned)";
        }
        if !bad.is_empty() {
            detail += &format!("; {}", bad.join("; "));
        }
        (ok, detail)
    }

    fn all_solutions(&self) -> impl Iterator<Item = &BvpSolution> {
        self.solutions.values().flatten()
    }

    fn lyapunov(&mut self) -> (bool, String) {
        let (mut w, mut v) = (0.0f64, 0.0f64);
        let mut rows = Vec::new();
        for s in self.all_solutions() {
            let r = lyapunov_check(s.trajectory());
            w = w.max(r.max_w_violation);
            v = v.max(r.max_v_violation);
            rows.push((format!("{} k={}", s.pair(), s.nodal()), r.max_w_violation, r.max_v_violation));
        }
        let o = self.out(4);
        for (key, a, b) in rows {
            o.real(format!("{key} W viol"), a);
            o.real(format!("{key} V viol"), b);
        }
        let n = self.solutions.values().map(Vec::len).sum::<usize>();
        (n > 0 && w < LYAPUNOV_TOL && v < LYAPUNOV_TOL, format!("{n} trajectories, max W decrease {w:.1e}, max V increase {v:.1e}"))
    }

    fn slopes(&mut self) -> (bool, String) {
        let mut worst = f64::NEG_INFINITY;
        let mut n = 0;
        let mut ok = true;
        let mut rows = Vec::new();
        for s in self.all_solutions() {
            let r = derivative_bound_check(s.trajectory());
            if !r.applicable {
                continue;
            }
            n += 1;
            ok &= r.passes(SLOPE_SLACK);
            let e = r.excess_right.max(r.excess_middle).max(r.excess_left);
            worst = worst.max(e);
            rows.push((format!("{} k={}", s.pair(), s.nodal()), e));
        }
        let o = self.out(5);
        for (key, e) in rows {
            o.real(format!("{key} excess"), e);
        }
        (ok && n > 0, format!("{n} converged solutions, largest excess over the bounds {worst:.3e}"))
    }

    fn nodal_plateau(&mut self) -> (bool, String) {
        let p = pair(6, 6);
        let start = Instant::now();
        let grid = v_grid(1.0, 1e6, SWEEP_POINTS, true).unwrap();
        let rows = sweep(p, &grid, &self.c.ode, Execution::Parallel);
        let errors = rows.iter().filter(|r| r.error.is_some()).count();
        let max_nodal = rows.iter().filter_map(|r| r.nodal).max().unwrap_or(0);
        let bound = nodal_upper_bound(p).unwrap();
        let plateau = nodal_transition(p, max_nodal, 1e6, &self.c);
        let dt = start.elapsed();
        let plateau_ok = matches!(plateau, Err(Error::NoTransition { .. }));
        let o = self.out(6);
        for r in &rows {
            o.int(format!("v={:e} fate", r.v), r.fate.map_or(-1, fate_code));
            o.int(format!("v={:e} nodal", r.v), r.nodal.map_or(-1, i64::from));
        }
        o.int("max nodal", max_nodal as i64);
        self.sweep_v = rows.iter().map(|r| r.v).collect();
        let ok = errors == 0 && (max_nodal as f64) <= bound && plateau_ok && dt < Duration::from_secs(300);
        let transition = match plateau {
            Err(Error::NoTransition { ceiling, .. }) => format!("none above {max_nodal} up to v = {ceiling:e}"),
            Ok((a, b)) => format!("found in [{a:e}, {b:e}]"),
            Err(e) => e.to_string(),
        };
        (ok, format!("{} points, {errors} errors, max nodal {max_nodal} <= bound {bound:.3}; transition {transition}; {dt:.1?}", rows.len()))
    }

    fn limiting_configuration(&mut self) -> (bool, String) {
        let Some(sols) = self.solutions.get(&(2, 2)) else {
            return (false, "no (2,2) solutions".into());
        };
        let mut sols = sols.clone();
        sols.sort_by(|a, b| a.v().total_cmp(&b.v()));
        let rep = match limiting_convergence_check(&sols, RHO_INTERVAL, RHO_EPS) {
            Ok(r) => r,
            Err(e) => return (false, e.to_string()),
        };
        let o = self.out(7);
        for r in &rep.rows {
            o.real(format!("k={} sup rho", r.nodal), r.sup_rho);
        }
        let list: Vec<String> = rep.rows.iter().map(|r| format!("{:.4}", r.sup_rho)).collect();
        (
            rep.strictly_decreasing && rep.last_below_eps,
            format!("sup rho by increasing v: {}; decreasing {}, last < {RHO_EPS}: {}", list.join(", "), rep.strictly_decreasing, rep.last_below_eps),
        )
    }

    fn reflection(&mut self) -> (bool, String) {
        let mut ok = true;
        let mut notes = Vec::new();
        let mut rows = Vec::new();
        for m in [2, 3] {
            let Some(sols) = self.solutions.get(&(m, m)) else {
                return (false, format!("no ({m},{m}) solutions"));
            };
            let mut sols = sols.clone();
            sols.sort_by(|a, b| a.v().total_cmp(&b.v()));
            let mut worst = 0.0f64;
            let mut top_nodal = Vec::new();
            for (i, s) in sols.iter().enumerate() {
                match reflect_mm(s, 0, &self.c.ode) {
                    Ok(r) => {
                        worst = worst.max(r.interval_residual);
                        rows.push((format!("{m},{m} k={}", s.nodal()), r.solution.nodal(), r.interval_residual));
                        if i + 2 >= sols.len() {
                            top_nodal.push(r.solution.nodal());
                        }
                    }
                    Err(e) => {
                        ok = false;
                        notes.push(format!("({m},{m}) k={}: {e}", s.nodal()));
                    }
                }
            }
            ok &= worst < REFLECTION_TOL && top_nodal.len() == 2 && top_nodal.iter().all(|&n| n == 0);
            notes.push(format!("({m},{m}) residual {worst:.1e}, nodal of the two largest-v reflections {top_nodal:?}"));
        }
        let o = self.out(8);
        for (key, n, res) in rows {
            o.int(format!("{key} reflected nodal"), n as i64);
            o.real(format!("{key} residual"), res);
        }
        (ok, notes.join("; "))
    }

    fn winding(&mut self) -> (bool, String) {
        let mut checked = 0;
        let mut bad = Vec::new();
        let mut rows = Vec::new();
        for s in self.all_solutions() {
            match winding_from_trajectory(s.trajectory()) {
                Ok(w) => {
                    checked += 1;
                    if (w.floor_omega() - s.nodal() as i64).abs() > 1 {
                        bad.push(format!("{} k={}: omega {:.3}", s.pair(), s.nodal(), w.omega));
                    }
                    rows.push((format!("{} k={}", s.pair(), s.nodal()), w.floor_omega(), w.omega));
                }
                Err(e) => bad.push(format!("{} k={}: {e}", s.pair(), s.nodal())),
            }
        }
        let p = pair(6, 6);
        let mut worst_gap = f64::INFINITY;
        for &v in &self.sweep_v {
            let t = match shoot_trajectory(p, v, &self.c.ode) {
                Ok(t) => t,
                Err(e) => {
                    bad.push(format!("(6,6) v={v:e}: {e}"));
                    continue;
                }
            };
            if !t.termination.is_classified() {
                continue;
            }
            let w = match winding_from_trajectory(&t) {
                Ok(w) => w,
                Err(e) => {
                    bad.push(format!("(6,6) v={v:e}: {e}"));
                    continue;
                }
            };
            checked += 1;
            if (w.floor_omega() - t.nodal() as i64).abs() > 1 {
                bad.push(format!("(6,6) v={v:e}: omega {:.3} nodal {}", w.omega, t.nodal()));
            }
            match linearized_comparison(&w, &self.c.ode) {
                Ok((_, gap)) => worst_gap = worst_gap.min(gap),
                Err(e) => bad.push(format!("(6,6) v={v:e} linearized: {e}")),
            }
            rows.push((format!("6,6 v={v:e}"), w.floor_omega(), w.omega));
        }
        let o = self.out(9);
        for (key, f, w) in rows {
            o.int(format!("{key} floor omega"), f);
            o.real(format!("{key} omega"), w);
        }
        let ok = bad.is_empty() && checked > 0 && worst_gap >= -THETA_TOL;
        let mut detail = format!("{checked} classified shots, min theta_v - theta_L {worst_gap:.1e}");
        if !bad.is_empty() {
            detail += &format!("; {}", bad.join("; "));
        }
        (ok, detail)
    }

    fn limit(&mut self) -> (bool, String) {
        let mut ok = true;
        let mut notes = Vec::new();
        for m0 in 2..=5 {
            let a = limit_profile_from(m0, LIMIT_X_START, &self.c.ode);
            let b = limit_profile_from(m0, LIMIT_X_START - START_SHIFT, &self.c.ode);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    let shift = (a.tail_value - b.tail_value).abs();
                    ok &= a.tail_value.abs() < TAIL_TOL && shift < START_TOL;
                    notes.push(format!("m0={m0} |psi| {:.1e} shift {shift:.1e}", a.tail_value.abs()));
                    self.out(10).real(format!("m0={m0} tail"), a.tail_value);
                }
                (Err(e), _) | (_, Err(e)) => {
                    ok = false;
                    notes.push(format!("m0={m0}: {e}"));
                }
            }
        }
        (ok, notes.join("; "))
    }

    /// Criteria 2 to 10 in order.
    fn run(&mut self) -> Vec<Line> {
        let mut lines = Vec::new();
        let mut push = |id, title, verdict| lines.push(Line { id, title, verdict });
        push(2, "identity exactness", timed(|| self.identity()));
        let v = timed(|| self.solutions());
        let within = v.elapsed < Duration::from_secs(600);
        push(3, "solutions with k = 0..3", Verdict { pass: v.pass && within, ..v });
        push(4, "Lyapunov monotonicity", timed(|| self.lyapunov()));
        push(5, "derivative bounds", timed(|| self.slopes()));
        push(6, "nodal bound and plateau for (6,6)", timed(|| self.nodal_plateau()));
        push(7, "limiting configuration (2,2)", timed(|| self.limiting_configuration()));
        push(8, "reflection for m0 = m1", timed(|| self.reflection()));
        push(9, "winding consistency", timed(|| self.winding()));
        push(10, "limiting profile", timed(|| self.limit()));
        lines
    }
}

fn table1() -> (bool, String) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_selfmap")).arg("table1").output().expect("spawn selfmap");
    let dt = start.elapsed();
    let rec: serde_json::Value = match serde_json::from_slice(&out.stdout) {
        Ok(v) => v,
        Err(e) => return (false, format!("unreadable output: {e}")),
    };
    let got: Vec<(u64, u64)> = rec["results"]
        .as_array()
        .map(|a| a.iter().filter_map(|r| Some((r["data"]["m0"].as_u64()?, r["data"]["m1_max"].as_u64()?))).collect())
        .unwrap_or_default();
    let ok = out.status.success() && got == [(2, 4), (3, 27), (4, 60), (5, 106)] && dt < Duration::from_secs(1);
    let cells: Vec<String> = got.iter().map(|(a, b)| format!("{a}->{b}")).collect();
    (ok, format!("m1_max {}; exit {:?}; {dt:.1?}", cells.join(" "), out.status.code()))
}

/// Criterion 11: integer outputs equal, real outputs within the tolerance
/// relative to `max(1, |value|)`.
fn robustness(base: &Suite, tight: &Suite, tight_lines: &[Line]) -> (bool, String) {
    let mut int_diffs = Vec::new();
    let mut worst = (0.0f64, String::new());
    let mut compared = (0, 0);
    for (id, a) in &base.out {
        let b = tight.out.get(id);
        for (k, x) in &a.ints {
            compared.0 += 1;
            match b.and_then(|b| b.ints.get(k)) {
                Some(y) if y == x => {}
                other => int_diffs.push(format!("c{id} {k}: {x} vs {other:?}")),
            }
        }
        for (k, x) in &a.reals {
            compared.1 += 1;
            let d = match b.and_then(|b| b.reals.get(k)) {
                Some(y) => (x - y).abs() / x.abs().max(1.0),
                None => f64::INFINITY,
            };
            if d > worst.0 || d.is_nan() {
                worst = (d, format!("c{id} {k}"));
            }
        }
    }
    let failed: Vec<u32> = tight_lines.iter().filter(|l| !l.verdict.pass).map(|l| l.id).collect();
    let ok = int_diffs.is_empty() && worst.0 < ROBUST_TOL && failed.is_empty();
    let mut detail = format!(
        "{} integers, {} reals compared; integer changes {}; largest relative real change {:.1e} ({})",
        compared.0,
        compared.1,
        int_diffs.len(),
        worst.0,
        worst.1
    );
    if !failed.is_empty() {
        detail += &format!("; criteria failing at tight tolerances: {failed:?}");
    }
    for d in int_diffs.iter().take(5) {
        detail += &format!("; {d}");
    }
    (ok, detail)
}

fn main() {
    let base_c = ShootingControls::default();
    let mut lines = vec![Line { id: 1, title: "m1_max table", verdict: timed(table1) }];
    let mut base = Suite::new(base_c);
    lines.extend(base.run());
    let mut tight = Suite::new(base_c.tightened(ROBUST_FACTOR));
    let tight_lines = tight.run();
    lines.push(Line { id: 11, title: "robustness under 10x tighter tolerances", verdict: timed(|| robustness(&base, &tight, &tight_lines)) });

    let mut failures = 0;
    for l in &lines {
        let tag = if l.verdict.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!l.verdict.pass);
        println!("criterion {:>2} [{tag}] {} ({:.2?}): {}", l.id, l.title, l.verdict.elapsed, l.verdict.detail);
    }
    println!("acceptance: {} of {} criteria passed", lines.len() - failures, lines.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
