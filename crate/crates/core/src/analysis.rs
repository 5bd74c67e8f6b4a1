//! Winding numbers, the linearized angle equation, the limiting profile,
//! the distance to the level `pi/2`, and the reflection of solutions for
//! equal multiplicities.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::Serialize;

use crate::coefficients::{alpha, constants, MultPair};
use crate::error::{Error, Result};
use crate::integrator::dop853::{DenseStep, Settings, Stepper};
use crate::integrator::{
    make_event, rhs, EventKind, IntegratorControls, OdeStateX, Relabel, TerminationCause, Trajectory,
};
use crate::shooting::{shoot_trajectory, BvpSolution, ShotOutcome};
use crate::singular_ivp::{half_odd_level, nearest_level};

/// Rotation of `(phi, phi')` with `phi(x) = r(-x) - pi/2`.
#[derive(Debug, Clone, Serialize)]
pub struct WindingReport {
    pub pair: MultPair,
    pub v: f64,
    /// Left end of the angle range, `-d+` unless substituted.
    pub x_start: f64,
    pub x_end: f64,
    pub theta_start: f64,
    pub theta_end: f64,
    pub omega: f64,
    /// `|theta'|` at `x_end` was below the settle threshold.
    pub settled: bool,
    /// The trajectory does not reach `-d+` and its nearest point was used.
    pub substituted_start: bool,
    /// `(x, theta)` of the continuous lift.
    #[serde(skip)]
    pub lift: Vec<(f64, f64)>,
}

impl WindingReport {
    pub fn floor_omega(&self) -> i64 {
        self.omega.floor() as i64
    }

    /// Lifted angle at `x`, linearly interpolated.
    pub fn theta_at(&self, x: f64) -> Option<f64> {
        let i = self.lift.partition_point(|p| p.0 < x);
        if i == 0 {
            return (self.lift.first()?.0 == x).then(|| self.lift[0].1);
        }
        let (a, b) = (self.lift.get(i - 1)?, self.lift.get(i)?);
        let s = (x - a.0) / (b.0 - a.0);
        Some(a.1 + s * (b.1 - a.1))
    }
}

const SETTLE: f64 = 1e-10;
/// Below this `phi^2 + phi'^2` the angle is undefined.
const LIFT_FLOOR: f64 = 1e-28;

fn wrap(d: f64) -> f64 {
    d - 2.0 * PI * ((d + PI) / (2.0 * PI)).floor()
}

/// `(phi, phi')` of the reflected profile at `x`.
fn phi_at(t: &Trajectory, x: f64) -> Option<(f64, f64)> {
    t.deviation_at(-x, 0).map(|(d, rp)| (d, -rp))
}

pub fn winding(pair: MultPair, v: f64, c: &IntegratorControls) -> Result<WindingReport> {
    winding_from_trajectory(&shoot_trajectory(pair, v, c)?)
}

/// Continuous lift of `arctan(phi'/phi)` on `[-d+, x_end]`.
pub fn winding_from_trajectory(t: &Trajectory) -> Result<WindingReport> {
    let pair = t.pair;
    let d_plus = constants(pair)?.d_plus;
    // Range of the reflected variable.
    let (lo, hi) = (-t.x_end, -t.x_start());
    let substituted_start = -d_plus < lo || -d_plus > hi;
    let x_start = (-d_plus).clamp(lo, hi);
    let mut xs: Vec<f64> = t.samples.iter().rev().map(|s| -s.x).filter(|&x| x > x_start).collect();
    xs.insert(0, x_start);

    let angle = |x: f64| -> Result<f64> {
        let (p, dp) = phi_at(t, x).ok_or(Error::UndefinedLift { x })?;
        if p * p + dp * dp < LIFT_FLOOR {
            return Err(Error::UndefinedLift { x });
        }
        Ok(dp.atan2(p))
    };
    let (p0, dp0) = phi_at(t, x_start).ok_or(Error::UndefinedLift { x: x_start })?;
    if p0 * p0 + dp0 * dp0 < LIFT_FLOOR {
        return Err(Error::UndefinedLift { x: x_start });
    }
    let theta_start = if p0 == 0.0 { FRAC_PI_2.copysign(dp0) } else { (dp0 / p0).atan() };

    let mut lift = vec![(x_start, theta_start)];
    let mut prev_raw = angle(x_start)?;
    let mut theta = theta_start;
    for w in xs.windows(2) {
        // Subdivide until every increment is well below pi/2.
        let mut stack = vec![(w[0], w[1])];
        let mut depth = 0;
        while let Some((a, b)) = stack.pop() {
            let rb = angle(b)?;
            let d = wrap(rb - prev_raw);
            if d.abs() > FRAC_PI_4 && b - a > 1e-12 && depth < 10_000 {
                depth += 1;
                let m = 0.5 * (a + b);
                stack.push((m, b));
                stack.push((a, m));
                continue;
            }
            theta += d;
            prev_raw = rb;
            lift.push((b, theta));
        }
    }
    let (x_end, theta_end) = *lift.last().unwrap();
    let settled = {
        let s = t.state_at(-x_end).ok_or(Error::UndefinedLift { x: x_end })?;
        let (p, dp) = phi_at(t, x_end).ok_or(Error::UndefinedLift { x: x_end })?;
        let ddp = rhs(pair, s);
        ((p * ddp - dp * dp) / (p * p + dp * dp)).abs() < SETTLE
    };
    Ok(WindingReport {
        pair,
        v: t.v,
        x_start,
        x_end,
        theta_start,
        theta_end,
        omega: -(theta_end - theta_start) / PI,
        settled,
        substituted_start,
        lift,
    })
}

/// Solution of the linearized angle equation.
#[derive(Debug, Clone, Serialize)]
pub struct LinearizedTheta {
    pub pair: MultPair,
    pub x_init: f64,
    pub theta_init: f64,
    pub theta_limit: f64,
    /// Start of the window over which `|theta'|` stayed below the threshold.
    pub x_settle: f64,
    /// `-(theta_limit - theta_init) / pi`
    pub omega: f64,
    #[serde(skip)]
    steps: Vec<DenseStep<1>>,
}

impl LinearizedTheta {
    pub fn theta_at(&self, x: f64) -> Option<f64> {
        if x == self.x_init {
            return Some(self.theta_init);
        }
        let i = self.steps.partition_point(|d| d.end() < x);
        self.steps.get(i).filter(|d| d.contains(x)).map(|d| d.eval(x)[0])
    }
}

fn theta_l_rhs(pair: MultPair, x: f64, th: f64) -> f64 {
    let (s, c) = th.sin_cos();
    -s * s + 0.5 * alpha(pair.swapped(), x) * (2.0 * th).sin() - pair.m0 as f64 * c * c
}

/// Integrate `theta_L' = -sin^2 + alpha_{m1,m0} sin cos - m0 cos^2` until
/// `|theta_L'|` stays below `1e-10` for `x_window`.
pub fn linearized_theta(pair: MultPair, theta_init: f64, x_init: f64, c: &IntegratorControls) -> Result<LinearizedTheta> {
    c.validate()?;
    if !(theta_init.is_finite() && x_init.is_finite()) {
        return Err(Error::InvalidInput("initial angle and point must be finite".into()));
    }
    let f = move |x: f64, y: &[f64; 1]| [theta_l_rhs(pair, x, y[0])];
    let x_max = x_init + c.x_max;
    let set = Settings { rtol: c.rel_tol, atol: c.abs_tol, h_max: c.h_max };
    let mut st = Stepper::new(f, x_init, [theta_init], x_max, set);
    let mut steps = Vec::new();
    let mut window = (theta_l_rhs(pair, x_init, theta_init).abs() < SETTLE).then_some(x_init);
    loop {
        if let Some(ws) = window {
            if st.x() - ws >= c.x_window {
                let theta_limit = st.y()[0];
                return Ok(LinearizedTheta {
                    pair,
                    x_init,
                    theta_init,
                    theta_limit,
                    x_settle: ws,
                    omega: -(theta_limit - theta_init) / PI,
                    steps,
                });
            }
        }
        if st.done() {
            return Err(Error::NoSettle { x: x_max });
        }
        let d = st.step().map_err(|e| Error::StepFailure { x: e.x })?;
        let (x, th) = (d.end(), st.y()[0]);
        steps.push(d);
        if theta_l_rhs(pair, x, th).abs() < SETTLE {
            window.get_or_insert(x);
        } else {
            window = None;
        }
    }
}

/// Co-integrate `theta_L` from the angle of `w` at its left end over the
/// range of `w`; returns the solution and the smallest `theta_v - theta_L`.
pub fn linearized_comparison(w: &WindingReport, c: &IntegratorControls) -> Result<(LinearizedTheta, f64)> {
    let pair = w.pair;
    let f = move |x: f64, y: &[f64; 1]| [theta_l_rhs(pair, x, y[0])];
    let set = Settings { rtol: c.rel_tol, atol: c.abs_tol, h_max: c.h_max };
    let mut st = Stepper::new(f, w.x_start, [w.theta_start], w.x_end, set);
    let mut steps = Vec::new();
    while !st.done() {
        steps.push(st.step().map_err(|e| Error::StepFailure { x: e.x })?);
    }
    let theta_limit = st.y()[0];
    let lin = LinearizedTheta {
        pair,
        x_init: w.x_start,
        theta_init: w.theta_start,
        theta_limit,
        x_settle: f64::NAN,
        omega: -(theta_limit - w.theta_start) / PI,
        steps,
    };
    let gap = w
        .lift
        .iter()
        .filter_map(|&(x, th)| lin.theta_at(x).map(|tl| th - tl))
        .fold(f64::INFINITY, f64::min);
    Ok((lin, gap))
}

/// Upper bound on the nodal number for `m0 >= 6`.
///
/// `1 + sup Omega_L`, using the estimate with the `2 pi` slack.
pub fn nodal_upper_bound(pair: MultPair) -> Result<f64> {
    if pair.m0 < 6 {
        return Err(Error::Domain(format!("the nodal bound needs m0 >= 6, got {pair}")));
    }
    let (m0, m1) = (pair.m0 as f64, pair.m1 as f64);
    let arg = (4.0 * m0.sqrt() + m1 - m0) / (m0 + m1 - 2.0);
    if !(arg > -1.0 && arg < 1.0) {
        return Err(Error::Domain(format!("artanh argument {arg} outside (-1, 1) for {pair}")));
    }
    let x0 = arg.atanh();
    let l1 = -0.5 * (2.0 * m0 + m1 + 1.0);
    let d_plus = constants(pair)?.d_plus;
    let n0 = 2.0 - (x0 + d_plus) * l1 / PI;
    Ok(n0 + 1.0)
}

/// Solution of `psi'' + (m0 - 1) psi' + m0/2 sin 2 psi = 0` with
/// `psi ~ -pi/2 + e^x` at the left end.
#[derive(Debug, Clone, Serialize)]
pub struct LimitProfile {
    pub m0: u32,
    pub x_start: f64,
    pub x_end: f64,
    /// `(x, psi, psi')`
    pub samples: Vec<(f64, f64, f64)>,
    pub tail_value: f64,
    /// Distance of the start point from the asymptotic seed after one unit.
    pub seed_defect: f64,
}

pub const LIMIT_X_START: f64 = -20.0;

pub fn limit_profile(m0: u32, c: &IntegratorControls) -> Result<LimitProfile> {
    limit_profile_from(m0, LIMIT_X_START, c)
}

pub fn limit_profile_from(m0: u32, x_start: f64, c: &IntegratorControls) -> Result<LimitProfile> {
    c.validate()?;
    if m0 < 2 {
        return Err(Error::Domain(format!("limit profile needs m0 >= 2, got {m0}")));
    }
    if !(x_start < 0.0 && x_start.is_finite()) {
        return Err(Error::InvalidInput(format!("x_start must be negative, got {x_start}")));
    }
    let m = m0 as f64;
    let f = move |_x: f64, y: &[f64; 2]| [y[1], -(m - 1.0) * y[1] - 0.5 * m * (2.0 * y[0]).sin()];
    let e = x_start.exp();
    let x_end = c.x_max;
    let set = Settings { rtol: c.rel_tol, atol: c.abs_tol, h_max: c.h_max };
    let mut st = Stepper::new(f, x_start, [-FRAC_PI_2 + e, e], x_end, set);
    let mut samples = vec![(x_start, -FRAC_PI_2 + e, e)];
    let mut seed_defect = f64::NAN;
    while !st.done() {
        let d = st.step().map_err(|e| Error::StepFailure { x: e.x })?;
        let (x, y) = (d.end(), st.y());
        if y[0].abs() > PI {
            return Err(Error::Divergence { x });
        }
        if seed_defect.is_nan() && x >= x_start + 1.0 {
            let xs = x_start + 1.0;
            let yy = d.eval(xs);
            seed_defect = (yy[0] - (-FRAC_PI_2 + xs.exp())).abs();
        }
        samples.push((x, y[0], y[1]));
    }
    let tail_value = samples.last().unwrap().1;
    Ok(LimitProfile { m0, x_start, x_end, samples, tail_value, seed_defect })
}

/// `sqrt((r - pi/2)^2 + r'^2)` at `x`.
pub fn rho(t: &Trajectory, x: f64) -> Result<f64> {
    let (d, rp) = t
        .deviation_at(x, 0)
        .ok_or_else(|| Error::InvalidInput(format!("x = {x} outside [{}, {}]", t.x_start(), t.x_end)))?;
    Ok(d.hypot(rp))
}

/// `sup rho` over `[x0, x1]` on a uniform grid refined around the maximum.
pub fn sup_rho(t: &Trajectory, x0: f64, x1: f64) -> Result<f64> {
    const N: usize = 2000;
    let xs: Vec<f64> = (0..=N).map(|i| x0 + (x1 - x0) * i as f64 / N as f64).collect();
    let vals = xs.iter().map(|&x| rho(t, x)).collect::<Result<Vec<_>>>()?;
    let (i, &best) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    // Golden-section refinement around the grid maximum.
    let (mut a, mut b) = (xs[i.saturating_sub(1)], xs[(i + 1).min(N)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = best;
    for _ in 0..60 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        let (fc, fd) = (rho(t, c)?, rho(t, d)?);
        best = best.max(fc).max(fd);
        if fc > fd {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRow {
    pub v: f64,
    pub nodal: u32,
    pub sup_rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub t_interval: (f64, f64),
    pub eps: f64,
    pub rows: Vec<LimitRow>,
    pub strictly_decreasing: bool,
    /// The last (largest `v`) supremum is below `eps`.
    pub last_below_eps: bool,
}

/// Supremum of `rho` over the x-image of `t_interval` for each solution.
pub fn limiting_convergence_check(solutions: &[BvpSolution], t_interval: (f64, f64), eps: f64) -> Result<LimitReport> {
    let (t0, t1) = t_interval;
    if !(0.0 < t0 && t0 < t1 && t1 < FRAC_PI_2) {
        return Err(Error::InvalidInput(format!("interval ({t0}, {t1}) must lie in (0, pi/2)")));
    }
    let (x0, x1) = (t0.tan().ln(), t1.tan().ln());
    let mut rows = Vec::with_capacity(solutions.len());
    for s in solutions {
        rows.push(LimitRow { v: s.v(), nodal: s.nodal(), sup_rho: sup_rho(s.trajectory(), x0, x1)? });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].sup_rho < w[0].sup_rho);
    let last_below_eps = rows.last().map_or(false, |r| r.sup_rho < eps);
    Ok(LimitReport { t_interval, eps, rows, strictly_decreasing, last_below_eps })
}

/// Result of reflecting a solution for equal multiplicities.
#[derive(Debug, Clone, Serialize)]
pub struct Reflection {
    pub solution: BvpSolution,
    /// Largest state mismatch after re-integrating each sample interval.
    pub interval_residual: f64,
    /// Largest mismatch of the reflected equation at the samples.
    pub pointwise_residual: f64,
}

/// `s(x) = (2k+1) pi/2 - r(-x)` for `m0 = m1`.
pub fn reflect_mm(sol: &BvpSolution, k: i64, c: &IntegratorControls) -> Result<Reflection> {
    let pair = sol.pair();
    if pair.m0 != pair.m1 {
        return Err(Error::Domain(format!("reflection needs m0 = m1, got {pair}")));
    }
    let t = sol.trajectory();
    let map = Relabel { flip: true, sign: -1.0, offset: half_odd_level(k) };
    let mut s = t.relabeled(map);

    let pointwise_residual = s
        .samples
        .iter()
        .map(|smp| {
            // s'' from the equation of r at -x, mapped back.
            let orig = t.state_at(-smp.x).unwrap_or(OdeStateX { x: -smp.x, r: f64::NAN, r_prime: f64::NAN });
            let s_pp = -rhs(pair, orig);
            (s_pp - rhs(pair, smp.state())).abs()
        })
        .fold(0.0, f64::max);
    let interval_residual = interval_residual(&s, c)?;

    // s - (2k+1) pi/2 = -r(-x), evaluated without cancellation.
    s.events = scan_events(&s, k, |x| t.state_at(-x).map_or(f64::NAN, |o| -o.r), c.event_tol);
    let l_end = s.samples.last().map_or(f64::NAN, |p| p.r);
    let level = nearest_level(l_end);
    s.termination = if (l_end - half_odd_level(level)).abs() < c.eps_conv {
        TerminationCause::Converged(level)
    } else {
        TerminationCause::ReachedXMax
    };
    // dr/dt at t = 0 of s is -dr/du at u = 0 of r.
    s.v = match t.matched {
        Some(m) => -m.w,
        None => {
            let p = s.samples[0];
            p.r / p.x.exp().atan()
        }
    };
    let nodal = s.nodal();
    let outcome = ShotOutcome {
        pair,
        v: s.v,
        fate: s.termination,
        nodal,
        crossings: s.half_pi_crossings(),
        ell: s.termination.level(),
        trajectory: std::sync::Arc::new(s),
    };
    let v = outcome.v;
    Ok(Reflection { solution: BvpSolution::from_outcome(outcome, (v, v))?, interval_residual, pointwise_residual })
}

/// Largest mismatch between the stored state at each sample and the state
/// obtained by integrating from the previous sample.
pub fn interval_residual(t: &Trajectory, c: &IntegratorControls) -> Result<f64> {
    let tight = Settings { rtol: 1e-13, atol: 1e-14, h_max: c.h_max };
    let mut worst: f64 = 0.0;
    for w in t.samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut st = Stepper::new(crate::integrator::field(t.pair), a.x, [a.r, a.r_prime], b.x, tight);
        while !st.done() {
            st.step().map_err(|e| Error::StepFailure { x: e.x })?;
        }
        let y = st.y();
        worst = worst.max((y[0] - b.r).abs()).max((y[1] - b.r_prime).abs());
    }
    Ok(worst)
}

/// Crossings of half-odd levels, with the deviation from `base` supplied
/// separately so values rounding onto a level do not count.
fn scan_events(t: &Trajectory, base: i64, dev: impl Fn(f64) -> f64, tol: f64) -> Vec<crate::integrator::Event> {
    const SUB: usize = 8;
    let band = |x: f64| base + (dev(x) / PI).floor() as i64;
    let mut out = Vec::new();
    for w in t.samples.windows(2) {
        let (lo, hi) = (w[0].x, w[1].x);
        let mut xa = lo;
        let mut ba = band(lo);
        for j in 1..=SUB {
            let xb = if j == SUB { hi } else { lo + (hi - lo) * j as f64 / SUB as f64 };
            let bb = band(xb);
            if bb != ba {
                let (dir, levels): (i8, Vec<i64>) =
                    if bb > ba { (1, (ba + 1..=bb).collect()) } else { (-1, (bb + 1..=ba).rev().collect()) };
                for level in levels {
                    let target = (level - base) as f64 * PI;
                    let x = crate::roots::bisect(|x| dev(x) - target, xa, xb, tol).unwrap_or(0.5 * (xa + xb));
                    if let Some(s) = t.state_at(x) {
                        out.push(make_event(EventKind::HalfPiCross { level, direction: dir }, x, [s.r, s.r_prime]));
                    }
                }
            }
            xa = xb;
            ba = bb;
        }
    }
    out
}
