//! Shooting from the singular endpoint, nodal transitions and BVP solutions.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::MultPair;
use crate::error::{Error, Result};
use crate::integrator::{
    integrate, integrate_with, Event, EventKind, IntegratorControls, MatchMode, OdeStateX, Piece, Sample, Segment, TerminationCause, Trajectory,
};
use crate::par::{map_ordered, Execution};
use crate::singular_ivp::{half_odd_level, series_at_zero_tol};

/// Integration controls plus the parameters of the search in `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootingControls {
    pub ode: IntegratorControls,
    /// Largest slope tried while looking for a transition.
    pub v_ceiling: f64,
    /// Relative width at which bisection in `v` stops.
    pub v_rel_tol: f64,
    /// Slope at which bracket searches start.
    pub v_seed: f64,
}

impl Default for ShootingControls {
    fn default() -> Self {
        ShootingControls { ode: IntegratorControls::default(), v_ceiling: 1e8, v_rel_tol: 1e-12, v_seed: 1.0 }
    }
}

impl ShootingControls {
    pub fn tightened(&self, factor: f64) -> Self {
        ShootingControls { ode: self.ode.tightened(factor), ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        self.ode.validate()?;
        if !(self.v_ceiling > 0.0 && self.v_ceiling.is_finite()) {
            return Err(Error::InvalidInput(format!("v_ceiling must be positive, got {}", self.v_ceiling)));
        }
        if !(self.v_rel_tol > 0.0 && self.v_rel_tol < 1.0) {
            return Err(Error::InvalidInput(format!("v_rel_tol must lie in (0, 1), got {}", self.v_rel_tol)));
        }
        if !(self.v_seed > 0.0 && self.v_seed.is_finite()) {
            return Err(Error::InvalidInput(format!("v_seed must be positive, got {}", self.v_seed)));
        }
        Ok(())
    }
}

/// Result of one shot.
#[derive(Debug, Clone, Serialize)]
pub struct ShotOutcome {
    pub pair: MultPair,
    pub v: f64,
    pub fate: TerminationCause,
    /// Number of crossings of `pi/2`.
    pub nodal: u32,
    pub crossings: Vec<Event>,
    pub ell: Option<i64>,
    #[serde(skip)]
    pub trajectory: Arc<Trajectory>,
}

impl ShotOutcome {
    fn from_trajectory(t: Trajectory) -> Self {
        ShotOutcome {
            pair: t.pair,
            v: t.v,
            fate: t.termination,
            nodal: t.nodal(),
            crossings: t.half_pi_crossings(),
            ell: t.termination.level(),
            trajectory: Arc::new(t),
        }
    }
}

/// A converged shot with prescribed nodal number.
#[derive(Debug, Clone, Serialize)]
pub struct BvpSolution {
    pub outcome: ShotOutcome,
    pub v_bracket: (f64, f64),
    pub ell: i64,
    pub degree: i64,
    /// Set when `|degree| = 3`, which has not been observed numerically.
    pub degree_three: bool,
}

impl BvpSolution {
    pub fn pair(&self) -> MultPair {
        self.outcome.pair
    }

    pub fn v(&self) -> f64 {
        self.outcome.v
    }

    pub fn nodal(&self) -> u32 {
        self.outcome.nodal
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.outcome.trajectory
    }

    pub(crate) fn from_outcome(outcome: ShotOutcome, v_bracket: (f64, f64)) -> Result<Self> {
        let Some(ell) = outcome.ell else {
            return Err(Error::NoConvergence {
                v_lo: v_bracket.0,
                v_hi: v_bracket.1,
                reason: format!("shot ended with {}", outcome.fate),
            });
        };
        let degree = brouwer_degree(ell, outcome.pair);
        Ok(BvpSolution { v_bracket, ell, degree, degree_three: degree.abs() == 3, outcome })
    }
}

/// Degree of the self-map with boundary level `ell`.
pub fn brouwer_degree(ell: i64, pair: MultPair) -> i64 {
    let even = |m: u32| m % 2 == 0;
    if even(pair.m0) && even(pair.m1) {
        2 * ell + 1
    } else if ell.rem_euclid(2) == 1 && !even(pair.m0) && even(pair.m1) {
        -1
    } else {
        1
    }
}

fn constant_zero(pair: MultPair, c: &IntegratorControls) -> Result<Trajectory> {
    let start = OdeStateX { x: -c.x_max, r: 0.0, r_prime: 0.0 };
    let mut t = integrate(pair, start, c)?;
    t.v = 0.0;
    Ok(t)
}

/// Prepend the part covered by the series to the integrated trajectory.
fn with_series_head(mut t: Trajectory, series: Arc<crate::singular_ivp::SeriesStart>, c: &IntegratorControls) -> Trajectory {
    let x0 = t.x_start();
    let lo = -c.x_max;
    if lo < x0 {
        let head: Vec<Sample> = crate::integrator::grid(lo, x0, c.sample_spacing)
            .into_iter()
            .filter(|&x| x < x0)
            .map(|x| Sample::new(t.pair, series.state_at_x(x)))
            .collect();
        t.samples.splice(0..0, head);
        t.segments.insert(0, Segment::new(lo, x0, Piece::Series(series)));
    }
    t
}

/// Integrate the solution with `r(0) = 0`, `dr/dt(0) = v`.
pub fn shoot_trajectory(pair: MultPair, v: f64, c: &IntegratorControls) -> Result<Trajectory> {
    shoot_with(pair, v, c, MatchMode::Strict)
}

fn shoot_with(pair: MultPair, v: f64, c: &IntegratorControls, mode: MatchMode) -> Result<Trajectory> {
    pair.require_m1_at_least_2()?;
    c.validate()?;
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("slope must be finite, got {v}")));
    }
    if v == 0.0 {
        return constant_zero(pair, c);
    }
    let series = Arc::new(series_at_zero_tol(pair, v, c.series_order, c.series_tol)?);
    let start = series.state_at_local(series.handoff);
    let mut t = integrate_with(pair, start, c, mode)?;
    if t.termination == TerminationCause::ReachedXMax {
        let wider = IntegratorControls { x_max: 2.0 * c.x_max, ..*c };
        t = integrate_with(pair, start, &wider, mode)?;
    }
    if t.termination == TerminationCause::StepFailure {
        return Err(Error::StepFailure { x: t.x_end });
    }
    t.v = v;
    Ok(with_series_head(t, series, c))
}

pub fn shoot(pair: MultPair, v: f64, c: &IntegratorControls) -> Result<ShotOutcome> {
    shoot_trajectory(pair, v, c).map(ShotOutcome::from_trajectory)
}

fn nodal_at(pair: MultPair, v: f64, c: &IntegratorControls) -> Result<u32> {
    Ok(shoot_trajectory(pair, v, &c.forward_only())?.nodal())
}

/// Bracket `[v_lo, v_hi]` with nodal numbers `k` and `k + 1`.
///
/// Doubles `v` from the seed until the nodal number exceeds `k`, then
/// bisects on the integer count.
pub fn nodal_transition(pair: MultPair, k: u32, v_seed: f64, c: &ShootingControls) -> Result<(f64, f64)> {
    pair.require_m1_at_least_2()?;
    c.validate()?;
    if !(v_seed > 0.0 && v_seed.is_finite()) {
        return Err(Error::InvalidInput(format!("seed must be positive, got {v_seed}")));
    }
    let ode = &c.ode;
    let (mut lo, mut hi);
    if nodal_at(pair, v_seed, ode)? > k {
        hi = v_seed;
        lo = v_seed;
        loop {
            lo *= 0.5;
            if lo < 1e-12 * v_seed {
                return Err(Error::NoTransition { k, ceiling: c.v_ceiling });
            }
            if nodal_at(pair, lo, ode)? <= k {
                break;
            }
            hi = lo;
        }
    } else {
        lo = v_seed;
        hi = v_seed;
        loop {
            hi *= 2.0;
            if hi > c.v_ceiling {
                return Err(Error::NoTransition { k, ceiling: c.v_ceiling });
            }
            if nodal_at(pair, hi, ode)? > k {
                break;
            }
            lo = hi;
        }
    }
    while hi - lo > c.v_rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if nodal_at(pair, mid, ode)? > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (n_lo, n_hi) = (nodal_at(pair, lo, ode)?, nodal_at(pair, hi, ode)?);
    if n_lo != k || n_hi != k + 1 {
        return Err(Error::NonUnitJump { lo: n_lo, hi: n_hi });
    }
    Ok((lo, hi))
}

/// Converged solution with nodal number `k` at the upper end of the
/// `k`-th nodal range.
///
/// The fates at the two ends of the transition bracket differ, so a
/// converging solution lies between them; the shot at the midpoint is
/// joined to the backward branch with an absolute slope tolerance.
pub fn solve_bvp(pair: MultPair, k: u32, c: &ShootingControls) -> Result<BvpSolution> {
    let (v_lo, v_hi) = nodal_transition(pair, k, c.v_seed, c)?;
    let mut reasons = Vec::new();
    for v in [0.5 * (v_lo + v_hi), v_lo, v_hi] {
        let out = ShotOutcome::from_trajectory(shoot_with(pair, v, &c.ode, MatchMode::Bracketed)?);
        match out.fate {
            TerminationCause::Converged(_) if out.nodal == k => {
                return BvpSolution::from_outcome(out, (v_lo, v_hi));
            }
            fate => reasons.push(format!("v = {v:e}: {fate}, nodal {}", out.nodal)),
        }
    }
    Err(Error::NoConvergence { v_lo, v_hi, reason: reasons.join("; ") })
}

/// One row of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub v: f64,
    pub fate: Option<TerminationCause>,
    pub nodal: Option<u32>,
    pub ell: Option<i64>,
    pub error: Option<String>,
}

/// Independent shots over a grid of slopes, ordered by `v`.
pub fn sweep(pair: MultPair, v_grid: &[f64], c: &IntegratorControls, exec: Execution) -> Vec<SweepRow> {
    let mut grid = v_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    map_ordered(&grid, exec, |&v| match shoot_trajectory(pair, v, c) {
        Ok(t) => SweepRow {
            v,
            fate: Some(t.termination),
            nodal: Some(t.nodal()),
            ell: t.termination.level(),
            error: None,
        },
        Err(e) => SweepRow { v, fate: None, nodal: None, ell: None, error: Some(e.to_string()) },
    })
}

/// `n` points from `lo` to `hi`, geometric if `log` is set.
pub fn v_grid(lo: f64, hi: f64, n: usize, log: bool) -> Result<Vec<f64>> {
    if n == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo || (log && lo <= 0.0) {
        return Err(Error::InvalidInput(format!("bad grid {lo}:{hi}:{n}")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            if i == n - 1 {
                hi
            } else if log {
                lo * (hi / lo).powf(s)
            } else {
                lo + (hi - lo) * s
            }
        })
        .collect())
}

/// `|r(x_end) - (2 ell + 1) pi/2|` of a converged solution.
pub fn end_defect(sol: &BvpSolution) -> f64 {
    let t = sol.trajectory();
    t.samples.last().map_or(f64::INFINITY, |s| (s.r - half_odd_level(sol.ell)).abs())
}

/// Whether the crossing events of `a` mirror those of `b` under `r -> -r`.
pub fn crossings_mirror(a: &Trajectory, b: &Trajectory) -> bool {
    let key = |t: &Trajectory, sign: i64| -> Vec<(i64, i8)> {
        t.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::HalfPiCross { level, direction } => {
                    Some(if sign > 0 { (level, direction) } else { (-level - 1, -direction) })
                }
                _ => None,
            })
            .collect()
    };
    key(a, 1) == key(b, -1)
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn is<T: Send + Sync>() {}
    is::<Trajectory>();
    is::<ShotOutcome>();
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn p(m0: u32, m1: u32) -> MultPair {
        MultPair::new(m0, m1).unwrap()
    }

    #[test]
    fn degree_formula() {
        assert_eq!(brouwer_degree(0, p(2, 2)), 1);
        assert_eq!(brouwer_degree(1, p(3, 4)), -1);
        assert_eq!(brouwer_degree(1, p(3, 3)), 1);
        assert_eq!(brouwer_degree(-1, p(2, 4)), -1);
        assert_eq!(brouwer_degree(1, p(2, 4)), 3);
        assert_eq!(brouwer_degree(-2, p(4, 6)), -3);
        assert_eq!(brouwer_degree(-1, p(5, 2)), -1);
        assert_eq!(brouwer_degree(0, p(5, 2)), 1);
        assert_eq!(brouwer_degree(1, p(2, 3)), 1);
    }

    #[test]
    fn identity_and_its_negative() {
        let c = IntegratorControls::default();
        let a = shoot(p(2, 2), 1.0, &c).unwrap();
        assert_eq!(a.fate, TerminationCause::Converged(0));
        assert_eq!((a.nodal, a.ell), (0, Some(0)));
        let b = shoot(p(2, 2), -1.0, &c).unwrap();
        assert_eq!(b.fate, TerminationCause::Converged(-1));
        assert_eq!(b.nodal, 0);
        for x in [-8.0, -1.0, 0.0, 2.0, 9.0] {
            let x: f64 = x;
            let sa = a.trajectory.state_at(x).unwrap();
            let sb = b.trajectory.state_at(x).unwrap();
            assert!((sa.r - x.exp().atan()).abs() < 1e-7);
            assert!((sa.r + sb.r).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_slope_is_constant() {
        let o = shoot(p(2, 2), 0.0, &IntegratorControls::default()).unwrap();
        assert_eq!(o.fate, TerminationCause::Constant);
        assert_eq!(o.nodal, 0);
        assert!(o.trajectory.samples.iter().all(|s| s.r == 0.0 && s.r_prime == 0.0));
    }

    #[test]
    fn shoot_rejects_small_m1() {
        assert!(shoot(p(2, 1), 1.0, &IntegratorControls::default()).unwrap_err().is_domain());
        assert!(shoot(p(2, 2), f64::NAN, &IntegratorControls::default()).unwrap_err().is_domain());
    }

    #[test]
    fn first_transition_matches_grid_scan() {
        let c = ShootingControls::default();
        let (lo, hi) = nodal_transition(p(2, 2), 0, 1.0, &c).unwrap();
        assert!(hi > lo && (hi - lo) <= 1e-12 * hi);
        // Independent scan on a uniform grid.
        let ode = c.ode.forward_only();
        let grid: Vec<f64> = (0..=400).map(|i| 1.0 + 39.0 * i as f64 / 400.0).collect();
        let counts: Vec<u32> = grid.iter().map(|&v| shoot(p(2, 2), v, &ode).unwrap().nodal).collect();
        let first = counts.iter().position(|&n| n > 0).unwrap();
        assert!(grid[first - 1] <= lo && hi <= grid[first], "{lo} {hi} {}", grid[first]);
        assert!(counts[..first].iter().all(|&n| n == 0));
    }

    #[test]
    fn transition_is_seed_independent_and_deterministic() {
        let c = ShootingControls::default();
        let a = nodal_transition(p(2, 2), 1, 1.0, &c).unwrap();
        let b = nodal_transition(p(2, 2), 1, 0.9 * a.0, &c).unwrap();
        assert!((a.0 - b.0).abs() <= 2e-12 * a.0);
        assert_eq!(a, nodal_transition(p(2, 2), 1, 1.0, &c).unwrap());
        // A seed above the transition searches downward.
        let d = nodal_transition(p(2, 2), 1, 5.0 * a.1, &c).unwrap();
        assert!((a.0 - d.0).abs() <= 2e-12 * a.0);
    }

    #[test]
    fn plateau_for_large_m0() {
        let e = nodal_transition(p(6, 6), 1, 1.0, &ShootingControls::default()).unwrap_err();
        assert!(matches!(e, Error::NoTransition { k: 1, .. }));
    }

    #[test]
    fn solve_small_cases() {
        let c = ShootingControls::default();
        let s = solve_bvp(p(3, 3), 1, &c).unwrap();
        assert_eq!(s.nodal(), 1);
        assert!((-1..=1).contains(&s.ell));
        assert!(end_defect(&s) < c.ode.eps_conv);
        // The solution sits where the forward nodal count steps from 1 to 2.
        let ode = c.ode.forward_only();
        assert_eq!(shoot(p(3, 3), s.v() * (1.0 - 1e-6), &ode).unwrap().nodal, 1);
        assert_eq!(shoot(p(3, 3), s.v() * (1.0 + 1e-6), &ode).unwrap().nodal, 2);
        assert!((s.v() - 16.570152121821).abs() < 1e-6);

        let s = solve_bvp(p(2, 4), 2, &c).unwrap();
        assert_eq!(s.nodal(), 2);
        assert!(s.degree.abs() == 1 || s.degree.abs() == 3);
        assert_eq!(s.degree_three, s.degree.abs() == 3);

        let s = solve_bvp(p(2, 2), 0, &c).unwrap();
        assert!((s.v() - 1.0).abs() < 1e-9);
        assert!(s.trajectory().matched.is_some());
    }

    #[test]
    fn sweep_rows() {
        let c = IntegratorControls::default();
        let rows = sweep(p(2, 2), &[1.0], &c, Execution::Sequential);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].fate, Some(TerminationCause::Converged(0)));
        assert_eq!(rows[0].nodal, Some(0));

        let grid = v_grid(1.0, 1e3, 60, true).unwrap();
        let seq = sweep(p(2, 2), &grid, &c, Execution::Sequential);
        let par = sweep(p(2, 2), &grid, &c, Execution::Parallel);
        let key = |r: &SweepRow| (r.v.to_bits(), r.fate, r.nodal);
        assert_eq!(seq.iter().map(key).collect::<Vec<_>>(), par.iter().map(key).collect::<Vec<_>>());
        let nodal: Vec<u32> = seq.iter().map(|r| r.nodal.unwrap()).collect();
        assert_eq!(*nodal.last().unwrap(), 3);
        // Transitions of the grid enclose the bisected ones.
        let sc = ShootingControls::default();
        for k in 0..3 {
            let (lo, _) = nodal_transition(p(2, 2), k, 1.5, &sc).unwrap();
            let i = nodal.iter().position(|&n| n > k).unwrap();
            assert!(grid[i - 1] <= lo && lo <= grid[i]);
        }

        let rows = sweep(p(2, 1), &[2.0, 1.0], &c, Execution::Parallel);
        assert_eq!(rows[0].v, 1.0);
        assert!(rows.iter().all(|r| r.error.is_some() && r.fate.is_none()));
    }

    #[test]
    fn grids() {
        assert_eq!(v_grid(1.0, 100.0, 3, true).unwrap(), vec![1.0, 10.0, 100.0]);
        assert_eq!(v_grid(0.0, 1.0, 3, false).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(v_grid(0.0, 1.0, 3, true).is_err());
        assert!(v_grid(1.0, 0.0, 3, false).is_err());
    }

    #[test]
    fn mirrored_shots() {
        let c = IntegratorControls::default().forward_only();
        for v in [3.0, 25.0, 400.0] {
            let a = shoot_trajectory(p(2, 3), v, &c).unwrap();
            let b = shoot_trajectory(p(2, 3), -v, &c).unwrap();
            assert_eq!(a.termination.mirrored(), b.termination);
            assert!(crossings_mirror(&a, &b));
        }
        let _ = FRAC_PI_2;
    }
}
