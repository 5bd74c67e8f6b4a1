//! Adaptive integration of the x-form equation with event location and
//! fate classification.
//!
//! Blow-up is decided by two sufficient criteria: a slope beyond the
//! threshold `B` right of `c`, or a crossing of a half-odd level right of
//! `d+`. Convergence to a level is a saddle in `x` (decay rate 1, growth rate
//! `m1`), so a forward integration drifts off even from an exact solution.
//! Convergence is therefore certified by joining the forward branch to a
//! backward branch started from the series at `t = pi/2`; see [`matching`].

pub mod dop853;
mod matching;
mod trajectory;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::coefficients::{alpha, beta, constants, q, ExtReal, MultPair, StructuralConstants};
use crate::error::{Error, Result};
use crate::singular_ivp::half_odd_level;
use dop853::{DenseStep, Settings, Stepper};

pub(crate) use matching::MatchMode;
pub(crate) use trajectory::{Piece, Relabel, Segment};
pub use trajectory::{
    derivative_bound_check, lyapunov_check, DerivativeBoundReport, Event, EventKind, LyapunovReport, MatchReport,
    Sample, TerminationCause, Trajectory,
};

/// Point of the x-form phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeStateX {
    pub x: f64,
    pub r: f64,
    pub r_prime: f64,
}

/// Tolerances and limits shared by the integration layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorControls {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Right end of the integration range; the series head starts at `-x_max`.
    pub x_max: f64,
    /// Width of the x-bracket of located crossings.
    pub event_tol: f64,
    pub eps_conv: f64,
    pub x_window: f64,
    pub h_max: f64,
    pub series_order: usize,
    pub series_tol: f64,
    /// Largest slope mismatch accepted when joining the two branches,
    /// relative to the distance from the level at the joint.
    pub match_tol: f64,
    /// Attempt the two-sided convergence certificate.
    pub certify: bool,
    /// Spacing of samples stored on series-covered ranges.
    pub sample_spacing: f64,
}

impl Default for IntegratorControls {
    fn default() -> Self {
        IntegratorControls {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            x_max: 60.0,
            event_tol: 1e-12,
            eps_conv: 1e-6,
            x_window: 5.0,
            h_max: 0.25,
            series_order: crate::singular_ivp::DEFAULT_ORDER,
            series_tol: 1e-10,
            match_tol: 1e-8,
            certify: true,
            sample_spacing: 0.25,
        }
    }
}

impl IntegratorControls {
    /// Copy with every numerical tolerance divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        IntegratorControls {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            event_tol: self.event_tol / factor,
            series_tol: self.series_tol / factor,
            match_tol: self.match_tol / factor,
            ..*self
        }
    }

    pub fn forward_only(&self) -> Self {
        IntegratorControls { certify: false, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("x_max", self.x_max),
            ("event_tol", self.event_tol),
            ("eps_conv", self.eps_conv),
            ("x_window", self.x_window),
            ("h_max", self.h_max),
            ("series_tol", self.series_tol),
            ("match_tol", self.match_tol),
            ("sample_spacing", self.sample_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub(crate) fn settings(&self) -> Settings {
        Settings { rtol: self.rel_tol, atol: self.abs_tol, h_max: self.h_max }
    }
}

/// `r'' = alpha r' - beta sin 2r`.
pub fn rhs(pair: MultPair, s: OdeStateX) -> f64 {
    alpha(pair, s.x) * s.r_prime - beta(pair, s.x) * (2.0 * s.r).sin()
}

pub(crate) fn field(pair: MultPair) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + Copy {
    shifted_field(pair, 0)
}

/// The field for `y = (r - j pi/2, r')`, using `sin(2r) = (-1)^j sin(2 y0)`.
fn shifted_field(pair: MultPair, j: i64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + Copy {
    let s = if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    move |x, y| [y[1], alpha(pair, x) * y[1] - s * beta(pair, x) * (2.0 * y[0]).sin()]
}

/// `j pi/2`; equals `half_odd_level` bit for bit when `j` is odd.
fn shift(j: i64) -> f64 {
    j as f64 * FRAC_PI_2
}

/// The forward run keeps `r - j pi/2` as its state and moves `j` once the
/// stored deviation exceeds this.
const RECENTER: f64 = 0.8;

/// Index `j` with `r` in `[(2j+1) pi/2, (2j+3) pi/2)`.
fn band(r: f64) -> i64 {
    ((r - FRAC_PI_2) / PI).floor() as i64
}

/// Blow-up thresholds of a pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Thresholds {
    /// Slope criterion applies for `x > c`.
    c: f64,
    pair: MultPair,
    big_b: f64,
    /// Level crossings right of this point decide the fate.
    stripe_from: f64,
}

impl Thresholds {
    pub fn new(k: &StructuralConstants) -> Result<Self> {
        let pair = k.pair;
        let stripe_from = if pair.m0 <= pair.m1 {
            k.d_plus
        } else {
            // Largest root of 2 beta = q^2 for the pair itself.
            constants(pair.swapped())?.cap_c.to_f64()
        };
        Ok(Thresholds { c: k.c, pair, big_b: k.big_b, stripe_from })
    }

    /// Slope beyond which the solution leaves every stripe, at `x`.
    fn slope(&self, x: f64) -> f64 {
        if self.pair.m0 <= self.pair.m1 {
            self.big_b
        } else {
            match q(self.pair, x) {
                ExtReal::Finite(v) if v > 0.0 => v,
                _ => f64::INFINITY,
            }
        }
    }
}

/// Located crossings of half-odd levels inside one dense step storing
/// `r - offset`, in order.
pub(crate) fn crossings_in(d: &DenseStep<2>, offset: f64, lo: f64, hi: f64, tol: f64) -> Vec<(f64, i64, i8)> {
    const SUB: usize = 8;
    let mut out = Vec::new();
    let at = |x: f64| d.eval(x);
    let mut xa = lo;
    let mut ba = band(offset + at(lo)[0]);
    for j in 1..=SUB {
        let xb = if j == SUB { hi } else { lo + (hi - lo) * j as f64 / SUB as f64 };
        let bb = band(offset + at(xb)[0]);
        if bb != ba {
            let (dir, levels): (i8, Vec<i64>) =
                if bb > ba { (1, (ba + 1..=bb).collect()) } else { (-1, (bb + 1..=ba).rev().collect()) };
            for level in levels {
                let target = half_odd_level(level);
                let g = |x: f64| (offset - target) + at(x)[0];
                let x = crate::roots::bisect(g, xa, xb, tol).unwrap_or(0.5 * (xa + xb));
                out.push((x, level, dir));
            }
        }
        xa = xb;
        ba = bb;
    }
    out
}

/// Forward integration with the termination rules.
pub(crate) struct Forward {
    pub samples: Vec<Sample>,
    pub segments: Vec<Segment>,
    pub events: Vec<Event>,
    pub termination: TerminationCause,
}

pub(crate) fn make_event(kind: EventKind, x: f64, y: [f64; 2]) -> Event {
    Event { kind, x, state: OdeStateX { x, r: y[0], r_prime: y[1] } }
}

fn is_equilibrium(s: &OdeStateX) -> bool {
    s.r_prime == 0.0 && (2.0 * s.r).sin().abs() < 1e-15 * (1.0 + s.r.abs())
}

/// Samples on `[lo, hi]` at the given spacing, both ends included.
pub(crate) fn grid(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
    (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
}

fn equilibrium(pair: MultPair, k: &StructuralConstants, start: OdeStateX, c: &IntegratorControls) -> Forward {
    let x_end = c.x_max.max(start.x);
    let samples: Vec<Sample> = grid(start.x, x_end, c.sample_spacing)
        .into_iter()
        .map(|x| Sample::new(pair, OdeStateX { x, ..start }))
        .collect();
    let segments = vec![Segment::new(start.x, x_end, Piece::Constant(start.r))];
    let level = ((start.r - FRAC_PI_2) / PI).round();
    let (termination, events) = if (half_odd_level(level as i64) - start.r).abs() < 1e-12 {
        let l = level as i64;
        let xw = start.x.max(k.settle_x()).min(x_end);
        (
            TerminationCause::Converged(l),
            vec![make_event(EventKind::ConvergenceWindow { level: l }, xw, [start.r, 0.0])],
        )
    } else {
        (TerminationCause::Constant, Vec::new())
    };
    Forward { samples, segments, events, termination }
}

pub(crate) fn run_forward(
    pair: MultPair,
    k: &StructuralConstants,
    start: OdeStateX,
    c: &IntegratorControls,
) -> Result<Forward> {
    if !(start.x.is_finite() && start.r.is_finite() && start.r_prime.is_finite()) {
        return Err(Error::InvalidInput(format!("start state must be finite, got {start:?}")));
    }
    if is_equilibrium(&start) {
        return Ok(equilibrium(pair, k, start, c));
    }
    let th = Thresholds::new(k)?;
    let x_max = c.x_max.max(start.x);
    let mut j = (start.r / FRAC_PI_2).round() as i64;
    let mut stepper =
        Stepper::new(shifted_field(pair, j), start.x, [start.r - shift(j), start.r_prime], x_max, c.settings());
    let mut samples = vec![Sample::new(pair, start)];
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut trigger: Option<(TerminationCause, f64)> = None;
    let mut window: Option<f64> = None;
    let settle = k.settle_x();
    // Continuation after a trigger is bounded so a misbehaving run still ends.
    const CONTINUATION: f64 = 40.0;

    let termination = loop {
        let y = stepper.y();
        if y[0].abs() > RECENTER {
            let jn = ((shift(j) + y[0]) / FRAC_PI_2).round() as i64;
            let y0 = (j - jn) as f64 * FRAC_PI_2 + y[0];
            stepper = Stepper::new(shifted_field(pair, jn), stepper.x(), [y0, y[1]], x_max, c.settings());
            j = jn;
        }
        let off = shift(j);
        let dense = match stepper.step() {
            Ok(d) => d,
            Err(_) => break TerminationCause::StepFailure,
        };
        let (xa, xb) = (dense.start(), dense.end());
        let y = stepper.y();
        let r = off + y[0];
        for (xc, level, dir) in crossings_in(&dense, off, xa, xb, c.event_tol) {
            let yc = dense.eval(xc);
            let yc = [off + yc[0], yc[1]];
            events.push(make_event(EventKind::HalfPiCross { level, direction: dir }, xc, yc));
            if trigger.is_none() && xc >= th.stripe_from {
                events.push(make_event(EventKind::StripeEscape { level, direction: dir }, xc, yc));
                let cause = if dir > 0 { TerminationCause::BlowUpPlus } else { TerminationCause::BlowUpMinus };
                trigger = Some((cause, xc));
            }
        }
        segments.push(Segment::shifted(xa, xb, Piece::Dense(dense), off));
        samples.push(Sample::new(pair, OdeStateX { x: xb, r, r_prime: y[1] }));

        if trigger.is_none() && xb > th.c && y[1].abs() > th.slope(xb) {
            events.push(make_event(EventKind::DerivBlowupTrigger, xb, [r, y[1]]));
            let cause = if y[1] > 0.0 { TerminationCause::BlowUpPlus } else { TerminationCause::BlowUpMinus };
            trigger = Some((cause, xb));
        }
        if let Some((cause, xt)) = trigger {
            // Run on until the escape has passed both pi/2 and -pi/2, so no
            // crossing of either level is left out and r -> -r is exact.
            let passed = match cause {
                TerminationCause::BlowUpPlus => r > FRAC_PI_2,
                _ => r < -FRAC_PI_2,
            };
            if passed || xb - xt > CONTINUATION || stepper.done() {
                break cause;
            }
            continue;
        }
        if xb >= settle {
            let l = crate::singular_ivp::nearest_level(r);
            let dev = (off - half_odd_level(l)) + y[0];
            if dev.abs() < c.eps_conv && y[1].abs() < c.eps_conv {
                let ws = *window.get_or_insert(xb);
                if xb - ws >= c.x_window {
                    let st = samples.iter().find(|s| s.x == ws).map_or([r, y[1]], |s| [s.r, s.r_prime]);
                    events.push(make_event(EventKind::ConvergenceWindow { level: l }, ws, st));
                    break TerminationCause::Converged(l);
                }
            } else {
                window = None;
            }
        }
        if stepper.done() {
            break TerminationCause::ReachedXMax;
        }
    };
    Ok(Forward { samples, segments, events, termination })
}

fn assemble(pair: MultPair, k: StructuralConstants, f: Forward) -> Trajectory {
    Trajectory {
        pair,
        v: f64::NAN,
        x_end: f.samples.last().map_or(f64::NAN, |s| s.x),
        samples: f.samples,
        events: f.events,
        termination: f.termination,
        matched: None,
        constants: k,
        segments: f.segments,
    }
}

/// Integrate from `start` toward `controls.x_max` and classify the fate.
///
/// With `controls.certify` set, a run that lingers near a level beyond
/// `max(d+, 0)` before escaping is tested against the backward branch from
/// `t = pi/2`; if the two join to within `match_tol`, the returned trajectory
/// is the joined one and the fate is `Converged`.
pub fn integrate(pair: MultPair, start: OdeStateX, controls: &IntegratorControls) -> Result<Trajectory> {
    integrate_with(pair, start, controls, MatchMode::Strict)
}

pub(crate) fn integrate_with(
    pair: MultPair,
    start: OdeStateX,
    controls: &IntegratorControls,
    mode: MatchMode,
) -> Result<Trajectory> {
    controls.validate()?;
    let k = constants(pair)?;
    let fwd = run_forward(pair, &k, start, controls)?;
    if controls.certify {
        if let Some(t) = matching::certify(pair, &k, start, &fwd, controls, mode)? {
            return Ok(t);
        }
    }
    Ok(assemble(pair, k, fwd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::singular_ivp::series_at_zero;
    use approx::assert_abs_diff_eq;

    fn p(m0: u32, m1: u32) -> MultPair {
        MultPair::new(m0, m1).unwrap()
    }

    fn identity_start(pair: MultPair) -> OdeStateX {
        let s = series_at_zero(pair, 1.0, 9).unwrap();
        s.state_at_local(s.handoff)
    }

    #[test]
    fn rhs_values() {
        let s = OdeStateX { x: 0.0, r: std::f64::consts::FRAC_PI_4, r_prime: 0.5 };
        assert_eq!(rhs(p(2, 2), s), 0.0);
        let s = OdeStateX { x: 0.0, r: FRAC_PI_2, r_prime: 0.0 };
        assert!(rhs(p(2, 4), s).abs() < 1e-15);
        // r = arctan(e^x) has r'' = -tanh(x) / (2 cosh x).
        for x in [-3.0, -0.4, 0.0, 1.1, 5.0] {
            let x: f64 = x;
            let s = OdeStateX { x, r: x.exp().atan(), r_prime: 0.5 / x.cosh() };
            assert_abs_diff_eq!(rhs(p(2, 2), s), -x.tanh() / (2.0 * x.cosh()), epsilon = 1e-15);
            assert_abs_diff_eq!(rhs(p(3, 5), s), -x.tanh() / (2.0 * x.cosh()), epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_converges_with_certificate() {
        for pair in [p(2, 2), p(3, 5)] {
            let t = integrate(pair, identity_start(pair), &IntegratorControls::default()).unwrap();
            assert_eq!(t.termination, TerminationCause::Converged(0), "{pair}");
            assert_eq!(t.nodal(), 0);
            let mut worst: f64 = 0.0;
            for i in 0..=2000 {
                let x = -10.0 + 20.0 * i as f64 / 2000.0;
                if let Some(st) = t.state_at(x) {
                    worst = worst.max((st.r - x.exp().atan()).abs());
                }
            }
            assert!(worst < 1e-6, "{pair}: {worst}");
            let m = t.matched.unwrap();
            assert!((m.w + 1.0).abs() < 1e-6, "{m:?}");
        }
    }

    #[test]
    fn identity_escapes_without_certificate() {
        let t = integrate(p(2, 2), identity_start(p(2, 2)), &IntegratorControls::default().forward_only()).unwrap();
        assert!(matches!(t.termination, TerminationCause::BlowUpPlus | TerminationCause::BlowUpMinus));
    }

    #[test]
    fn constant_level_is_converged() {
        let st = OdeStateX { x: -3.0, r: FRAC_PI_2, r_prime: 0.0 };
        let t = integrate(p(2, 2), st, &IntegratorControls::default()).unwrap();
        assert_eq!(t.termination, TerminationCause::Converged(0));
        for s in &t.samples {
            assert_abs_diff_eq!(s.w_val, beta(p(2, 2), s.x), epsilon = 1e-15);
        }
        let rep = lyapunov_check(&t);
        assert!(rep.passes(1e-12));
        let st = OdeStateX { x: -3.0, r: 0.0, r_prime: 0.0 };
        assert_eq!(integrate(p(2, 2), st, &IntegratorControls::default()).unwrap().termination, TerminationCause::Constant);
    }

    #[test]
    fn huge_slope_is_classified_stably() {
        let pair = p(2, 4);
        let s = series_at_zero(pair, 1e6, 9).unwrap();
        let st = s.state_at_local(s.handoff);
        let c = IntegratorControls::default();
        let a = integrate(pair, st, &c).unwrap();
        let b = integrate(pair, st, &c.tightened(10.0)).unwrap();
        assert!(a.termination.is_classified());
        assert_eq!(a.termination, b.termination);
        assert_eq!(a.nodal(), b.nodal());
    }

    #[test]
    fn events_lie_on_levels_and_between_samples() {
        let pair = p(2, 2);
        let s = series_at_zero(pair, 300.0, 9).unwrap();
        let t = integrate(pair, s.state_at_local(s.handoff), &IntegratorControls::default()).unwrap();
        assert!(t.nodal() >= 2);
        for e in &t.events {
            if let EventKind::HalfPiCross { level, .. } = e.kind {
                assert!((e.state.r - half_odd_level(level)).abs() < 1e-9);
                assert!(e.x >= t.x_start() && e.x <= t.x_end);
                assert!(e.state.r_prime.abs() > 1e-6);
            }
        }
        // Consecutive crossings of one level alternate in direction.
        let dirs: Vec<i8> = t
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::HalfPiCross { level: 0, direction } => Some(direction),
                _ => None,
            })
            .collect();
        for w in dirs.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        for w in t.samples.windows(2) {
            assert!(w[1].x > w[0].x);
        }
    }

    #[test]
    fn stored_lyapunov_values_match_recomputation() {
        let pair = p(3, 3);
        let s = series_at_zero(pair, 40.0, 9).unwrap();
        let t = integrate(pair, s.state_at_local(s.handoff), &IntegratorControls::default()).unwrap();
        for smp in &t.samples {
            let again = Sample::new(pair, smp.state());
            assert_abs_diff_eq!(again.w_val, smp.w_val, epsilon = 1e-12);
            assert_abs_diff_eq!(again.v_val, smp.v_val, epsilon = 1e-12);
        }
        assert!(lyapunov_check(&t).passes(1e-9));
    }

    #[test]
    fn bad_controls_rejected() {
        let c = IntegratorControls { rel_tol: -1.0, ..Default::default() };
        assert!(integrate(p(2, 2), identity_start(p(2, 2)), &c).unwrap_err().is_domain());
    }
}
