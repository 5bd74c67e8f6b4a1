use std::sync::Arc;

use serde::Serialize;

use super::dop853::DenseStep;
use super::OdeStateX;
use crate::coefficients::{beta, MultPair, StructuralConstants};
use crate::singular_ivp::{half_odd_level, SeriesStart};

/// One stored point of a trajectory with both Lyapunov values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub x: f64,
    pub r: f64,
    pub r_prime: f64,
    /// `r'^2 / 2 + beta sin^2 r`
    pub w_val: f64,
    /// `r'^2 / 2 - beta cos^2 r`
    pub v_val: f64,
}

impl Sample {
    pub fn new(pair: MultPair, s: OdeStateX) -> Self {
        let b = beta(pair, s.x);
        let kin = 0.5 * s.r_prime * s.r_prime;
        let (sn, cs) = s.r.sin_cos();
        Sample { x: s.x, r: s.r, r_prime: s.r_prime, w_val: kin + b * sn * sn, v_val: kin - b * cs * cs }
    }

    pub fn state(&self) -> OdeStateX {
        OdeStateX { x: self.x, r: self.r, r_prime: self.r_prime }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// `r` crosses `(2 level + 1) pi/2`; direction is the sign of `r'`.
    HalfPiCross { level: i64, direction: i8 },
    /// `|r'|` exceeded the blow-up slope threshold.
    DerivBlowupTrigger,
    /// A half-odd level was crossed right of the stripe start.
    StripeEscape { level: i64, direction: i8 },
    /// Start of the window over which convergence to the level held.
    ConvergenceWindow { level: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub x: f64,
    pub state: OdeStateX,
}

/// How an integration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "fate", content = "level", rename_all = "snake_case")]
pub enum TerminationCause {
    Converged(i64),
    BlowUpPlus,
    BlowUpMinus,
    ReachedXMax,
    StepFailure,
    /// Equilibrium at an integer multiple of `pi`.
    Constant,
}

impl TerminationCause {
    pub fn is_classified(self) -> bool {
        matches!(self, Self::Converged(_) | Self::BlowUpPlus | Self::BlowUpMinus)
    }

    pub fn level(self) -> Option<i64> {
        match self {
            Self::Converged(l) => Some(l),
            _ => None,
        }
    }

    /// The cause for the solution `-r`.
    pub fn mirrored(self) -> Self {
        match self {
            Self::Converged(l) => Self::Converged(-l - 1),
            Self::BlowUpPlus => Self::BlowUpMinus,
            Self::BlowUpMinus => Self::BlowUpPlus,
            other => other,
        }
    }
}

impl std::fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Converged(l) => write!(f, "Converged({l})"),
            Self::BlowUpPlus => f.write_str("BlowUpPlus"),
            Self::BlowUpMinus => f.write_str("BlowUpMinus"),
            Self::ReachedXMax => f.write_str("ReachedXMax"),
            Self::StepFailure => f.write_str("StepFailure"),
            Self::Constant => f.write_str("Constant"),
        }
    }
}

/// Source of continuous values on part of the x-axis.
#[derive(Debug, Clone)]
pub(crate) enum Piece {
    Dense(DenseStep<2>),
    Series(Arc<SeriesStart>),
    Constant(f64),
}

/// Affine relabeling `value(x) = offset + sign * r(flip(x))` with
/// `flip(x) = -x` when `flip` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Relabel {
    pub flip: bool,
    pub sign: f64,
    pub offset: f64,
}

impl Relabel {
    pub const IDENTITY: Relabel = Relabel { flip: false, sign: 1.0, offset: 0.0 };

    /// `self` applied after `inner`.
    fn then(self, inner: Relabel) -> Relabel {
        Relabel { flip: self.flip ^ inner.flip, sign: self.sign * inner.sign, offset: self.offset + self.sign * inner.offset }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub piece: Piece,
    pub map: Relabel,
}

impl Segment {
    pub fn new(lo: f64, hi: f64, piece: Piece) -> Self {
        Segment { lo, hi, piece, map: Relabel::IDENTITY }
    }

    /// A piece that stores `r - offset`.
    pub fn shifted(lo: f64, hi: f64, piece: Piece, offset: f64) -> Self {
        Segment { lo, hi, piece, map: Relabel { offset, ..Relabel::IDENTITY } }
    }

    /// `(r - target, r')` at `x`. Exact near `target` when the piece is
    /// stored relative to it.
    pub(crate) fn deviation(&self, x: f64, target: f64) -> (f64, f64) {
        let xi = if self.map.flip { -x } else { x };
        let (base, dev, rp) = match &self.piece {
            Piece::Dense(d) => {
                let y = d.eval(xi);
                (0.0, y[0], y[1])
            }
            Piece::Series(s) => {
                let sl = s.local_from_x(xi);
                (s.coeffs[0], s.deviation(sl), s.state_at_local(sl).r_prime)
            }
            Piece::Constant(c) => (*c, 0.0, 0.0),
        };
        let dsign = if self.map.flip { -self.map.sign } else { self.map.sign };
        ((self.map.offset + self.map.sign * base - target) + self.map.sign * dev, dsign * rp)
    }

    pub(crate) fn eval(&self, x: f64) -> OdeStateX {
        let xi = if self.map.flip { -x } else { x };
        let (r, rp) = match &self.piece {
            Piece::Dense(d) => {
                let y = d.eval(xi);
                (y[0], y[1])
            }
            Piece::Series(s) => {
                let st = s.state_at_x(xi);
                (st.r, st.r_prime)
            }
            Piece::Constant(c) => (*c, 0.0),
        };
        let dsign = if self.map.flip { -self.map.sign } else { self.map.sign };
        OdeStateX { x, r: self.map.offset + self.map.sign * r, r_prime: dsign * rp }
    }

    fn relabeled(&self, m: Relabel) -> Segment {
        let (lo, hi) = if m.flip { (-self.hi, -self.lo) } else { (self.lo, self.hi) };
        Segment { lo, hi, piece: self.piece.clone(), map: m.then(self.map) }
    }
}

/// Data from the two-sided convergence certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchReport {
    /// Point where the forward and backward branches were joined.
    pub x_match: f64,
    /// Slope `dr/du` at `u = pi/2 - t = 0` of the backward branch.
    pub w: f64,
    /// `|r'_forward - r'_backward|` at the joint after matching `r`.
    pub defect: f64,
    pub iterations: usize,
}

/// A sampled solution together with its continuous representation.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub pair: MultPair,
    pub v: f64,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub termination: TerminationCause,
    pub x_end: f64,
    pub matched: Option<MatchReport>,
    #[serde(skip)]
    pub constants: StructuralConstants,
    #[serde(skip)]
    pub(crate) segments: Vec<Segment>,
}

impl Trajectory {
    pub fn x_start(&self) -> f64 {
        self.samples.first().map_or(f64::NAN, |s| s.x)
    }

    /// Interpolated state at `x`, if `x` lies in the covered range.
    pub fn state_at(&self, x: f64) -> Option<OdeStateX> {
        if !(x >= self.x_start() && x <= self.x_end) {
            return None;
        }
        let i = self.segments.partition_point(|s| s.hi < x);
        let seg = self.segments.get(i).or_else(|| self.segments.last())?;
        Some(seg.eval(x))
    }

    /// `(r - (2 level + 1) pi/2, r')` at `x`, without the cancellation of
    /// subtracting the level from `r`.
    pub fn deviation_at(&self, x: f64, level: i64) -> Option<(f64, f64)> {
        if !(x >= self.x_start() && x <= self.x_end) {
            return None;
        }
        let i = self.segments.partition_point(|s| s.hi < x);
        let seg = self.segments.get(i).or_else(|| self.segments.last())?;
        Some(seg.deviation(x, half_odd_level(level)))
    }

    /// Number of crossings of `pi/2`.
    pub fn nodal(&self) -> u32 {
        self.crossings_of(0)
    }

    pub fn crossings_of(&self, level: i64) -> u32 {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::HalfPiCross { level: l, .. } if l == level))
            .count() as u32
    }

    pub fn half_pi_crossings(&self) -> Vec<Event> {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::HalfPiCross { .. })).copied().collect()
    }

    /// The trajectory of `offset + sign * r(flip(x))`, with samples
    /// recomputed and events dropped.
    pub(crate) fn relabeled(&self, m: Relabel) -> Trajectory {
        let mut segments: Vec<Segment> = self.segments.iter().map(|s| s.relabeled(m)).collect();
        if m.flip {
            segments.reverse();
        }
        let map_sample = |s: &Sample| {
            let x = if m.flip { -s.x } else { s.x };
            let dsign = if m.flip { -m.sign } else { m.sign };
            Sample::new(self.pair, OdeStateX { x, r: m.offset + m.sign * s.r, r_prime: dsign * s.r_prime })
        };
        let mut samples: Vec<Sample> = self.samples.iter().map(map_sample).collect();
        if m.flip {
            samples.reverse();
        }
        Trajectory {
            pair: self.pair,
            v: self.v,
            x_end: samples.last().map_or(f64::NAN, |s| s.x),
            samples,
            events: Vec::new(),
            termination: self.termination,
            matched: None,
            constants: self.constants,
            segments,
        }
    }
}

/// Largest monotonicity violations of the two Lyapunov functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Largest decrease of `W` between neighboring samples right of `Z^alpha`.
    pub max_w_violation: f64,
    /// Largest increase of `V` between neighboring samples left of `Z^alpha`.
    pub max_v_violation: f64,
    pub w_steps: usize,
    pub v_steps: usize,
}

impl LyapunovReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_w_violation < tol && self.max_v_violation < tol
    }
}

pub fn lyapunov_check(traj: &Trajectory) -> LyapunovReport {
    let za = traj.constants.z_alpha_f64();
    let mut rep = LyapunovReport { max_w_violation: 0.0, max_v_violation: 0.0, w_steps: 0, v_steps: 0 };
    for w in traj.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.x >= za {
            rep.w_steps += 1;
            rep.max_w_violation = rep.max_w_violation.max(a.w_val - b.w_val);
        }
        if b.x <= za {
            rep.v_steps += 1;
            rep.max_v_violation = rep.max_v_violation.max(b.v_val - a.v_val);
        }
    }
    rep
}

/// Largest excess of `|r'|` over the three slope bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeBoundReport {
    /// Bounds only apply to converged trajectories.
    pub applicable: bool,
    /// `max(|r'| - sqrt(m1))` over `x >= Z^beta`.
    pub excess_right: f64,
    /// `max(|r'| - sqrt(m1 + 1))` over `x >= Z^alpha`.
    pub excess_middle: f64,
    /// `max(|r'| - sqrt(m0))` over `x <= Z^alpha`.
    pub excess_left: f64,
}

impl DerivativeBoundReport {
    pub fn passes(&self, slack: f64) -> bool {
        !self.applicable || (self.excess_right <= slack && self.excess_middle <= slack && self.excess_left <= slack)
    }
}

/// Spacing of the scan used to locate the largest slopes.
const BOUND_GRID: f64 = 1.0 / 64.0;
/// Local maxima of the scan within this distance of the best are refined.
const PEAK_BAND: f64 = 1e-3;

/// `sup |r'|` over `[lo, hi]`: a uniform scan, then golden-section
/// refinement of every scan peak close to the best one.
fn sup_slope(traj: &Trajectory, lo: f64, hi: f64) -> f64 {
    let (lo, hi) = (lo.max(traj.x_start()), hi.min(traj.x_end));
    if !(lo <= hi) {
        return f64::NEG_INFINITY;
    }
    let slope = |x: f64| traj.state_at(x).map_or(f64::NEG_INFINITY, |s| s.r_prime.abs());
    let n = ((hi - lo) / BOUND_GRID).ceil().max(1.0) as usize;
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| slope(x)).collect();
    let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sup = best;
    for i in 0..=n {
        let left = if i > 0 { ys[i - 1] } else { f64::NEG_INFINITY };
        let right = if i < n { ys[i + 1] } else { f64::NEG_INFINITY };
        if ys[i] < best - PEAK_BAND || ys[i] < left || ys[i] < right {
            continue;
        }
        let (mut a, mut b) = (xs[i.saturating_sub(1)], xs[(i + 1).min(n)]);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            let (fc, fd) = (slope(c), slope(d));
            sup = sup.max(fc).max(fd);
            if fc > fd {
                b = d;
            } else {
                a = c;
            }
        }
    }
    sup
}

pub fn derivative_bound_check(traj: &Trajectory) -> DerivativeBoundReport {
    let k = &traj.constants;
    let (m0, m1) = (traj.pair.m0 as f64, traj.pair.m1 as f64);
    let za = k.z_alpha_f64();
    let (lo, hi) = (traj.x_start(), traj.x_end);
    DerivativeBoundReport {
        applicable: matches!(traj.termination, TerminationCause::Converged(_)),
        excess_right: sup_slope(traj, k.z_beta, hi) - m1.sqrt(),
        excess_middle: sup_slope(traj, za, hi) - (m1 + 1.0).sqrt(),
        excess_left: sup_slope(traj, lo, za) - m0.sqrt(),
    }
}
