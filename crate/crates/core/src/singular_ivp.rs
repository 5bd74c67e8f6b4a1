//! Power-series starts at the singular endpoints.
//!
//! Near `t = 0` the t-form equation reads
//!
//! ```text
//! t^2 r'' = t p(t) r' + q(t) sin 2r,
//! p(t) = t ((m1 - m0) - (m0 + m1) cos 2t) / sin 2t,
//! q(t) = t^2 (m0 / (2 sin^2 t) - m1 / (2 cos^2 t)),
//! ```
//!
//! with `p`, `q` regular and even. Matching powers of `t` gives
//! `(n - 1)(n + m0) a_n = (terms in a_1 .. a_{n-1})`, so the slope `a_1 = v`
//! is free and every later coefficient is determined. The expansions of `p`
//! and `q` are built by exact power-series arithmetic on the Taylor series of
//! sine and cosine. Near `t = pi/2` the substitution `u = pi/2 - t` turns the
//! equation into the one for the swapped pair, shifted by an odd multiple of
//! `pi/2`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::Serialize;

use crate::coefficients::{alpha, beta, MultPair};
use crate::error::{Error, Result};
use crate::integrator::OdeStateX;

/// Default truncation order.
pub const DEFAULT_ORDER: usize = 9;
/// Target size of the last retained term at the handoff point.
const TRUNCATION_TARGET: f64 = 1e-12;
const HANDOFF_MIN: f64 = 1e-4;
const HANDOFF_MAX: f64 = 1e-2;
/// Above this slope the handoff window shrinks like `1 / |v|`.
const LARGE_SLOPE: f64 = 1e3;

/// Which singular endpoint a series is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Endpoint {
    AtZero,
    /// Anchored at `t = pi/2` with `r(pi/2) = (2k+1) pi/2`.
    AtPiHalf(i64),
}

/// Truncated series solution at a singular endpoint.
///
/// Coefficients are in the local variable `s`, which is `t` at the left end
/// and `u = pi/2 - t` at the right end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesStart {
    pub pair: MultPair,
    pub endpoint: Endpoint,
    pub v: f64,
    pub coeffs: Vec<f64>,
    pub order: usize,
    /// Largest local distance from the endpoint at which the x-form residual
    /// stays below the series tolerance.
    pub validity_radius: f64,
    /// Local distance at which the regular integrator takes over.
    pub handoff: f64,
    /// x-form residual at `validity_radius`.
    pub residual: f64,
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().min(b.len());
    (0..n).map(|k| (0..=k).map(|j| a[j] * b[k - j]).sum()).collect()
}

fn div(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().min(b.len());
    let mut c = vec![0.0; n];
    for k in 0..n {
        let s: f64 = (0..k).map(|j| c[j] * b[k - j]).sum();
        c[k] = (a[k] - s) / b[0];
    }
    c
}

/// Taylor coefficients of `sin(w t) / (w t)` and `cos(w t)`.
fn sinc_cos(w: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sinc = vec![0.0; n];
    let mut cos = vec![0.0; n];
    let mut fact = 1.0;
    for k in 0..n {
        if k > 0 {
            fact *= k as f64;
        }
        let term = w.powi(k as i32) / fact;
        if k % 2 == 0 {
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            cos[k] = sign * term;
            sinc[k] = sign * term / (k as f64 + 1.0);
        }
    }
    (sinc, cos)
}

/// Series of `sin u` for a power series `u` with `u[0] = 0`.
fn sin_of(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut s = vec![0.0; n];
    let mut c = vec![0.0; n];
    c[0] = 1.0;
    for k in 1..n {
        let mut sk = 0.0;
        let mut ck = 0.0;
        for j in 1..=k {
            let ju = j as f64 * u[j];
            sk += ju * c[k - j];
            ck -= ju * s[k - j];
        }
        s[k] = sk / k as f64;
        c[k] = ck / k as f64;
    }
    s
}

/// Expansions of the regular coefficient functions `p` and `q` about `t = 0`.
fn coefficient_series(pair: MultPair, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (m0, m1) = (pair.m0 as f64, pair.m1 as f64);
    let (sinc2, cos2) = sinc_cos(2.0, n);
    let sigma: Vec<f64> = sinc2.iter().map(|c| 2.0 * c).collect();
    let mut num: Vec<f64> = cos2.iter().map(|c| -(m0 + m1) * c).collect();
    num[0] += m1 - m0;
    let p = div(&num, &sigma);

    let (sinc1, cos1) = sinc_cos(1.0, n);
    let mut one = vec![0.0; n];
    one[0] = 1.0;
    let inv_sinc_sq = div(&one, &mul(&sinc1, &sinc1));
    let mut t2 = vec![0.0; n];
    if n > 2 {
        t2[2] = 1.0;
    }
    let t2_over_cos_sq = div(&t2, &mul(&cos1, &cos1));
    let q = inv_sinc_sq
        .iter()
        .zip(&t2_over_cos_sq)
        .map(|(a, b)| 0.5 * m0 * a - 0.5 * m1 * b)
        .collect();
    (p, q)
}

/// Coefficients `a_0 .. a_order` of the regular solution with slope `v`.
fn regular_coefficients(pair: MultPair, v: f64, order: usize) -> Result<Vec<f64>> {
    let n = order + 1;
    let (p, q) = coefficient_series(pair, n);
    let m0 = pair.m0 as f64;
    let mut a = vec![0.0; n];
    if n > 1 {
        a[1] = v;
    }
    for k in (3..n).step_by(2) {
        let two_r: Vec<f64> = a[..=k].iter().map(|c| 2.0 * c).collect();
        let s = sin_of(&two_r);
        let mut rest = 0.0;
        for i in 1..=k {
            rest += p[i] * (k - i) as f64 * a[k - i];
        }
        for i in 0..=k {
            rest += q[i] * s[k - i];
        }
        let pivot = (k as f64 - 1.0) * (k as f64 + m0);
        if pivot.abs() < 1e-12 {
            return Err(Error::Series(format!("singular matching equation at order {k}")));
        }
        a[k] = rest / pivot;
    }
    Ok(a)
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * s + a)
}

impl SeriesStart {
    fn sign(&self) -> f64 {
        match self.endpoint {
            Endpoint::AtZero => 1.0,
            Endpoint::AtPiHalf(_) => -1.0,
        }
    }

    /// `(r, dr/ds, d2r/ds2)` in the local variable.
    pub fn local(&self, s: f64) -> (f64, f64, f64) {
        let c = &self.coeffs;
        let d1: Vec<f64> = (1..c.len()).map(|j| j as f64 * c[j]).collect();
        let d2: Vec<f64> = (1..d1.len()).map(|j| j as f64 * d1[j]).collect();
        (horner(c, s), horner(&d1, s), horner(&d2, s))
    }

    /// `r - coeffs[0]` at local distance `s`, without cancellation.
    pub fn deviation(&self, s: f64) -> f64 {
        s * horner(&self.coeffs[1..], s)
    }

    /// Local variable belonging to a point `x`.
    pub fn local_from_x(&self, x: f64) -> f64 {
        (self.sign() * x).exp().atan()
    }

    /// x-form state at local distance `s` from the endpoint, without range
    /// checks.
    pub fn state_at_local(&self, s: f64) -> OdeStateX {
        let (r, rs, _) = self.local(s);
        let sc = s.sin() * s.cos();
        OdeStateX { x: self.sign() * s.tan().ln(), r, r_prime: self.sign() * rs * sc }
    }

    /// x-form state at `x`, without range checks.
    pub fn state_at_x(&self, x: f64) -> OdeStateX {
        let mut st = self.state_at_local(self.local_from_x(x));
        st.x = x;
        st
    }

    /// Residual `r'' - alpha r' + beta sin 2r` of the truncated series.
    pub fn residual_at_local(&self, s: f64) -> f64 {
        let (r, rs, rss) = self.local(s);
        let (sn, cs) = s.sin_cos();
        let sc = sn * cs;
        let x = self.sign() * (sn / cs).ln();
        let rp = self.sign() * rs * sc;
        let rpp = (rss * sc + rs * (cs * cs - sn * sn)) * sc;
        rpp - alpha(self.pair, x) * rp + beta(self.pair, x) * (2.0 * r).sin()
    }

    /// Largest x covered by the series toward the regular interior.
    pub fn x_limit(&self) -> f64 {
        self.sign() * self.validity_radius.tan().ln()
    }
}

/// Local distance at which the last retained term reaches the truncation
/// target, clamped to the handoff window.
fn handoff_point(coeffs: &[f64], slope: f64) -> f64 {
    let order = coeffs.len() - 1;
    let last = coeffs[order].abs();
    let natural = if last > 0.0 {
        (TRUNCATION_TARGET / last).powf(1.0 / order as f64)
    } else {
        f64::INFINITY
    };
    let scale = if slope.abs() > LARGE_SLOPE { LARGE_SLOPE / slope.abs() } else { 1.0 };
    natural.clamp(HANDOFF_MIN * scale, HANDOFF_MAX * scale)
}

fn build(pair: MultPair, endpoint: Endpoint, v: f64, order: usize, tol: f64) -> Result<SeriesStart> {
    if order < 5 {
        return Err(Error::InvalidInput(format!("series order must be at least 5, got {order}")));
    }
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("slope must be finite, got {v}")));
    }
    let eq_pair = match endpoint {
        Endpoint::AtZero => pair,
        Endpoint::AtPiHalf(_) => pair.swapped(),
    };
    let mut coeffs = regular_coefficients(eq_pair, v, order)?;
    if let Endpoint::AtPiHalf(k) = endpoint {
        coeffs[0] = (2 * k + 1) as f64 * FRAC_PI_2;
    }
    let mut series = SeriesStart {
        pair,
        endpoint,
        v,
        handoff: handoff_point(&coeffs, v),
        coeffs,
        order,
        validity_radius: 0.0,
        residual: 0.0,
    };
    let ok = |s: &SeriesStart, at: f64| s.residual_at_local(at).abs() <= tol;
    let mut halvings = 0;
    while !ok(&series, series.handoff) {
        series.handoff *= 0.5;
        halvings += 1;
        if halvings > 40 {
            return Err(Error::Residual { name: "series", residual: series.residual_at_local(series.handoff) });
        }
    }
    // Walk outward on a geometric grid until the residual first fails.
    let mut radius = series.handoff;
    let steps = 80;
    let ratio = (FRAC_PI_4 / series.handoff).powf(1.0 / steps as f64);
    for i in 1..=steps {
        let s = if i == steps { FRAC_PI_4 } else { series.handoff * ratio.powi(i) };
        if !ok(&series, s) {
            break;
        }
        radius = s;
    }
    series.validity_radius = radius;
    series.residual = series.residual_at_local(radius);
    Ok(series)
}

/// Series of the solution with `r(0) = 0`, `r'(0) = v` (t-derivative).
pub fn series_at_zero(pair: MultPair, v: f64, order: usize) -> Result<SeriesStart> {
    series_at_zero_tol(pair, v, order, crate::integrator::IntegratorControls::default().series_tol)
}

pub fn series_at_zero_tol(pair: MultPair, v: f64, order: usize, tol: f64) -> Result<SeriesStart> {
    build(pair, Endpoint::AtZero, v, order, tol)
}

/// Series of the solution with `r(pi/2) = (2k+1) pi/2` and `dr/du = w` at
/// `u = pi/2 - t = 0`.
pub fn series_at_pi_half(pair: MultPair, k: i64, w: f64, order: usize) -> Result<SeriesStart> {
    series_at_pi_half_tol(pair, k, w, order, crate::integrator::IntegratorControls::default().series_tol)
}

pub fn series_at_pi_half_tol(pair: MultPair, k: i64, w: f64, order: usize, tol: f64) -> Result<SeriesStart> {
    build(pair, Endpoint::AtPiHalf(k), w, order, tol)
}

/// Convert the series value at `t` into x-form state.
pub fn to_x_state(series: &SeriesStart, t: f64) -> Result<OdeStateX> {
    if !(t > 0.0 && t < FRAC_PI_2) {
        return Err(Error::Domain(format!("t must lie in (0, pi/2), got {t}")));
    }
    let s = match series.endpoint {
        Endpoint::AtZero => t,
        Endpoint::AtPiHalf(_) => FRAC_PI_2 - t,
    };
    if s > series.validity_radius {
        return Err(Error::Domain(format!(
            "t = {t} is beyond the validity radius {} of the series",
            series.validity_radius
        )));
    }
    let mut st = series.state_at_local(s);
    st.x = t.tan().ln();
    Ok(st)
}

/// The level `(2k+1) pi/2`.
pub fn half_odd_level(k: i64) -> f64 {
    (2 * k + 1) as f64 * FRAC_PI_2
}

/// Index `k` of the half-odd level nearest to `r`.
pub fn nearest_level(r: f64) -> i64 {
    ((r - FRAC_PI_2) / PI).round() as i64
}
