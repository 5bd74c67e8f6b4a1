//! Two-sided certificate of convergence to a level.
//!
//! The forward branch is fixed by the start state. The backward branch comes
//! from the series at `t = pi/2` with free slope `w` and is integrated toward
//! decreasing `x`, where the growing mode of the forward problem decays.
//! `w` is chosen so that both branches agree in `r` at the joint; the
//! remaining mismatch in `r'` decides whether the forward solution lies on
//! the stable manifold of the level.

use std::sync::Arc;

use super::dop853::{DenseStep, Stepper};
use super::trajectory::{Event, EventKind, MatchReport, Piece, Sample, Segment, TerminationCause, Trajectory};
use super::{crossings_in, field, grid, make_event, Forward, IntegratorControls, OdeStateX};
use crate::coefficients::{MultPair, StructuralConstants};
use crate::error::{Error, Result};
use crate::singular_ivp::{half_odd_level, nearest_level, series_at_pi_half_tol, SeriesStart};

/// Solution near `t = pi/2` continued back to `x_to`.
pub(crate) struct Backward {
    pub series: Arc<SeriesStart>,
    /// Dense steps in order of decreasing `x`.
    pub steps: Vec<DenseStep<2>>,
    pub at: OdeStateX,
}

pub(crate) fn backward_branch(
    pair: MultPair,
    level: i64,
    w: f64,
    x_to: f64,
    c: &IntegratorControls,
) -> Result<Backward> {
    let series = Arc::new(series_at_pi_half_tol(pair, level, w, c.series_order, c.series_tol)?);
    let x_s = series.x_limit();
    if x_to >= x_s {
        let at = series.state_at_x(x_to);
        return Ok(Backward { series, steps: Vec::new(), at });
    }
    let st = series.state_at_x(x_s);
    let mut stepper = Stepper::new(field(pair), x_s, [st.r, st.r_prime], x_to, c.settings());
    let mut steps = Vec::new();
    while !stepper.done() {
        match stepper.step() {
            Ok(d) => steps.push(d),
            Err(e) => return Err(Error::StepFailure { x: e.x }),
        }
    }
    let y = stepper.y();
    Ok(Backward { series, steps, at: OdeStateX { x: x_to, r: y[0], r_prime: y[1] } })
}

/// Amplitude of the decaying mode `e^{-x}` in the deviation from `level`.
fn decaying_amplitude(pair: MultPair, s: &OdeStateX, level: i64) -> f64 {
    let m1 = pair.m1 as f64;
    let phi = s.r - half_odd_level(level);
    s.x.exp() * (m1 * phi - s.r_prime) / (m1 + 1.0)
}

/// Newton on `w` for `r_back(x_m; w) = r_target`.
fn solve_slope(
    pair: MultPair,
    level: i64,
    w0: f64,
    x_m: f64,
    r_target: f64,
    c: &IntegratorControls,
) -> Option<(f64, Backward, usize)> {
    const MAX_ITER: usize = 40;
    let g = |w: f64| backward_branch(pair, level, w, x_m, c).ok().map(|b| (b.at.r - r_target, b));
    let mut w = w0;
    let (mut gw, mut b) = g(w)?;
    let tol = 10.0 * (c.abs_tol + c.rel_tol * r_target.abs());
    for it in 1..=MAX_ITER {
        if gw.abs() <= tol {
            return Some((w, b, it - 1));
        }
        let h = 1e-6 * w.abs().max(1e-3);
        let (gh, _) = g(w + h)?;
        let slope = (gh - gw) / h;
        if !(slope.is_finite() && slope != 0.0) {
            return None;
        }
        let mut step = -gw / slope;
        // Halve until the residual decreases.
        let mut accepted = None;
        for _ in 0..30 {
            if let Some((gn, bn)) = g(w + step) {
                if gn.abs() < gw.abs() {
                    accepted = Some((w + step, gn, bn));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((wn, gn, bn)) => {
                w = wn;
                gw = gn;
                b = bn;
            }
            None => return (gw.abs() <= 1e3 * tol).then_some((w, b, it)),
        }
    }
    (gw.abs() <= tol).then_some((w, b, MAX_ITER))
}

/// Candidate level and the point where the forward branch comes closest to it.
fn candidate(fwd: &Forward, x_m: f64) -> Option<(i64, f64)> {
    let mut best: Option<(f64, i64)> = None;
    for s in fwd.samples.iter().filter(|s| s.x >= x_m) {
        let l = nearest_level(s.r);
        let d = (s.r - half_odd_level(l)).powi(2) + s.r_prime.powi(2);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, l));
        }
    }
    // Runs that never come near a level are not worth matching.
    const NEAR: f64 = 0.25;
    best.filter(|b| b.0 < NEAR).map(|(d, l)| (l, d))
}

fn forward_state(fwd: &Forward, start: OdeStateX, x: f64) -> Option<OdeStateX> {
    if x <= start.x {
        return (x == start.x).then_some(start);
    }
    fwd.segments.iter().find(|s| s.lo <= x && x <= s.hi).map(|s| s.eval(x))
}

/// Crossings of half-odd levels by the series tail sampled on `xs`.
fn scan_crossings(series: &SeriesStart, level: i64, xs: &[f64], tol: f64) -> Vec<Event> {
    // Bands are measured from the anchor level so rounding of `r` near the
    // level cannot create spurious crossings.
    let dev = |x: f64| series.deviation(series.local_from_x(x));
    let band = |x: f64| level + (dev(x) / std::f64::consts::PI).floor() as i64;
    let f = |x: f64| series.state_at_x(x);
    let mut out = Vec::new();
    for w in xs.windows(2) {
        let (a, b) = (band(w[0]), band(w[1]));
        if a == b {
            continue;
        }
        let (dir, levels): (i8, Vec<i64>) = if b > a { (1, (a + 1..=b).collect()) } else { (-1, (b + 1..=a).rev().collect()) };
        for lv in levels {
            let offset = (level - lv) as f64 * std::f64::consts::PI;
            let x = crate::roots::bisect(|x| dev(x) - offset, w[0], w[1], tol).unwrap_or(0.5 * (w[0] + w[1]));
            let s = f(x);
            out.push(make_event(EventKind::HalfPiCross { level: lv, direction: dir }, x, [s.r, s.r_prime]));
        }
    }
    out
}

/// How the slope mismatch at the joint is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MatchMode {
    /// Mismatch relative to the distance `rho` from the level at the joint.
    /// A run that is already close to the level at the joint cannot be
    /// told apart from an escaping one, so it is not certified.
    Strict,
    /// Absolute mismatch. Used inside a fate bracket, where a converging
    /// solution is known to exist between the two ends.
    Bracketed,
}

/// Try to certify convergence of the forward branch; on success return the
/// joined trajectory.
pub(crate) fn certify(
    pair: MultPair,
    k: &StructuralConstants,
    start: OdeStateX,
    fwd: &Forward,
    c: &IntegratorControls,
    mode: MatchMode,
) -> Result<Option<Trajectory>> {
    if matches!(fwd.termination, TerminationCause::Constant) || fwd.segments.is_empty() {
        return Ok(None);
    }
    let settle = k.settle_x();
    let x_m = settle.max(start.x);
    let Some(fm) = forward_state(fwd, start, x_m) else { return Ok(None) };
    let Some((level, _)) = candidate(fwd, x_m) else { return Ok(None) };
    // Start from the sample closest to the level.
    let near = fwd
        .samples
        .iter()
        .filter(|s| s.x >= x_m)
        .min_by(|a, b| {
            let d = |s: &Sample| (s.r - half_odd_level(level)).powi(2) + s.r_prime.powi(2);
            d(a).total_cmp(&d(b))
        })
        .map(|s| s.state())
        .unwrap_or(fm);
    let w0 = decaying_amplitude(pair, &near, level);
    let Some((w, back, iterations)) = solve_slope(pair, level, w0, x_m, fm.r, c) else { return Ok(None) };
    let defect = (back.at.r_prime - fm.r_prime).abs();
    let allowed = match mode {
        MatchMode::Strict => c.match_tol * (fm.r - half_odd_level(level)).hypot(fm.r_prime),
        MatchMode::Bracketed => c.match_tol,
    };
    if !(defect <= allowed) {
        return Ok(None);
    }
    Ok(Some(join(pair, *k, fwd, fm, back, level, MatchReport { x_match: x_m, w, defect, iterations }, c)))
}

#[allow(clippy::too_many_arguments)]
fn join(
    pair: MultPair,
    k: StructuralConstants,
    fwd: &Forward,
    fm: OdeStateX,
    back: Backward,
    level: i64,
    report: MatchReport,
    c: &IntegratorControls,
) -> Trajectory {
    let x_m = report.x_match;
    let mut segments: Vec<Segment> = Vec::new();
    for s in fwd.segments.iter().filter(|s| s.lo < x_m) {
        let mut s = s.clone();
        s.hi = s.hi.min(x_m);
        segments.push(s);
    }
    let mut samples: Vec<Sample> = fwd.samples.iter().filter(|s| s.x < x_m).copied().collect();
    samples.push(Sample::new(pair, fm));
    let mut events: Vec<Event> = fwd
        .events
        .iter()
        .filter(|e| e.x <= x_m && matches!(e.kind, EventKind::HalfPiCross { .. }))
        .copied()
        .collect();

    for d in back.steps.iter().rev() {
        let (lo, hi) = (d.lo(), d.hi());
        events.extend(
            crossings_in(d, 0.0, d.start(), d.end(), c.event_tol)
                .into_iter()
                .rev()
                .map(|(x, l, dir)| make_event(EventKind::HalfPiCross { level: l, direction: -dir }, x, d.eval(x))),
        );
        segments.push(Segment::new(lo, hi, Piece::Dense(d.clone())));
        let y = d.eval(hi);
        samples.push(Sample::new(pair, OdeStateX { x: hi, r: y[0], r_prime: y[1] }));
    }
    // Directions above were taken along decreasing x; the event x order is
    // restored below.

    let series = back.series;
    let x_s = segments.last().map_or(x_m, |s| s.hi).max(x_m);
    let l = half_odd_level(level);
    let near = |s: &OdeStateX| (s.r - l).abs() < c.eps_conv && s.r_prime.abs() < c.eps_conv;
    let mut x_end = c.x_max.max(x_s + c.x_window);
    let series_xs = loop {
        let xs = grid(x_s, x_end, c.sample_spacing);
        let st: Vec<OdeStateX> = xs.iter().map(|&x| series.state_at_x(x)).collect();
        let first_ok = st.iter().rposition(|s| !near(s)).map_or(x_s, |i| xs[(i + 1).min(xs.len() - 1)]);
        if x_end - first_ok >= c.x_window {
            break xs;
        }
        x_end = first_ok + 2.0 * c.x_window;
    };
    let sf = |x: f64| series.state_at_x(x);
    events.extend(scan_crossings(&series, level, &series_xs, c.event_tol));
    for &x in series_xs.iter().skip(1) {
        samples.push(Sample::new(pair, sf(x)));
    }
    segments.push(Segment::new(x_s, x_end, Piece::Series(series.clone())));

    // Fix the direction of crossings found on backward steps.
    for e in events.iter_mut() {
        if let EventKind::HalfPiCross { level, .. } = e.kind {
            let dir = if e.state.r_prime >= 0.0 { 1 } else { -1 };
            e.kind = EventKind::HalfPiCross { level, direction: dir };
        }
    }
    events.sort_by(|a, b| a.x.total_cmp(&b.x));

    let window_start = samples
        .iter()
        .rposition(|s| !near(&s.state()))
        .map_or(samples[0].x, |i| samples[(i + 1).min(samples.len() - 1)].x)
        .max(k.settle_x().min(x_end));
    let ws = samples.iter().find(|s| s.x >= window_start).map_or(samples[samples.len() - 1], |s| *s);
    events.push(make_event(EventKind::ConvergenceWindow { level }, ws.x, [ws.r, ws.r_prime]));

    Trajectory {
        pair,
        v: f64::NAN,
        samples,
        events,
        termination: TerminationCause::Converged(level),
        x_end,
        matched: Some(report),
        constants: k,
        segments,
    }
}
