//! Coefficient functions of the x-form equation
//!
//! ```text
//! r''(x) = alpha(x) r'(x) - beta(x) sin 2r(x),   x = log tan t
//! ```
//!
//! and the structural constants that gate fate classification. Every
//! constant defined by an equation is computed in closed form and checked
//! against an independent bisection.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::roots::{bisect, roots_on_grid};

/// Largest closed-form/bisection disagreement accepted for a constant.
const CROSS_CHECK_TOL: f64 = 1e-10;
/// Largest residual of a defining equation accepted at a constant.
const RESIDUAL_TOL: f64 = 1e-12;
/// Width of the window scanned to the right of the swapped-pair zero of alpha.
const CAP_C_WINDOW: f64 = 50.0;
const CAP_C_GRID: usize = 1200;

/// The multiplicities `(m0, m1)` indexing the equation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MultPair {
    pub m0: u32,
    pub m1: u32,
}

impl MultPair {
    pub fn new(m0: u32, m1: u32) -> Result<Self> {
        if m0 == 0 || m1 == 0 {
            return Err(Error::Domain(format!("multiplicities must be positive, got ({m0},{m1})")));
        }
        Ok(Self { m0, m1 })
    }

    /// The pair with the roles of the two endpoints exchanged.
    pub fn swapped(self) -> Self {
        Self { m0: self.m1, m1: self.m0 }
    }

    pub(crate) fn require_m1_at_least_2(self) -> Result<()> {
        if self.m1 < 2 {
            return Err(Error::Domain(format!("m1 must be at least 2, got ({},{})", self.m0, self.m1)));
        }
        Ok(())
    }

    fn f(self) -> (f64, f64) {
        (self.m0 as f64, self.m1 as f64)
    }
}

impl std::fmt::Display for MultPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.m0, self.m1)
    }
}

impl std::str::FromStr for MultPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("expected `m0,m1`, got `{s}`"));
        let (a, b) = s.trim().trim_matches(|c| c == '(' || c == ')').split_once(',').ok_or_else(bad)?;
        let m0 = a.trim().parse().map_err(|_| bad())?;
        let m1 = b.trim().parse().map_err(|_| bad())?;
        MultPair::new(m0, m1)
    }
}

/// A real number or one of the two infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// Float view with the infinities mapped to IEEE infinities.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::PosInf
        } else if v == f64::NEG_INFINITY {
            ExtReal::NegInf
        } else {
            ExtReal::Finite(v)
        }
    }
}

impl std::fmt::Display for ExtReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtReal::NegInf => f.write_str("-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => s.serialize_f64(*v),
            ExtReal::NegInf => s.serialize_str("-inf"),
            ExtReal::PosInf => s.serialize_str("inf"),
        }
    }
}

pub fn alpha(pair: MultPair, x: f64) -> f64 {
    let (m0, m1) = pair.f();
    0.5 * ((m0 + m1 - 2.0) * x.tanh() + m1 - m0)
}

pub fn beta(pair: MultPair, x: f64) -> f64 {
    let (m0, m1) = pair.f();
    0.25 * ((m0 + m1) * x.tanh() + m1 - m0)
}

/// The constant `B = m1 / (2 (m1 - 1))`.
pub fn big_b(pair: MultPair) -> Result<f64> {
    pair.require_m1_at_least_2()?;
    let m1 = pair.m1 as f64;
    Ok(m1 / (2.0 * (m1 - 1.0)))
}

/// The quotient `beta / alpha`, infinite with the sign of `beta` where
/// `alpha` vanishes.
pub fn q(pair: MultPair, x: f64) -> ExtReal {
    if pair.m0 == pair.m1 && pair.m0 >= 2 {
        let m = pair.m0 as f64;
        return ExtReal::Finite(m / (2.0 * (m - 1.0)));
    }
    let a = alpha(pair, x);
    let b = beta(pair, x);
    if a == 0.0 {
        if b < 0.0 {
            ExtReal::NegInf
        } else {
            ExtReal::PosInf
        }
    } else {
        ExtReal::Finite(b / a)
    }
}

/// Structural constants of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructuralConstants {
    pub pair: MultPair,
    pub z_alpha: ExtReal,
    pub z_beta: f64,
    pub big_b: f64,
    pub c: f64,
    pub d_plus: f64,
    pub d_minus: ExtReal,
    pub cap_c: ExtReal,
    pub cap_l: ExtReal,
    pub cap_r: ExtReal,
    /// Number of roots found by the scan that defines `cap_c`.
    pub cap_c_roots: usize,
}

impl StructuralConstants {
    /// Left end of the region where the Lyapunov function `W` is monotone.
    pub fn z_alpha_f64(&self) -> f64 {
        self.z_alpha.to_f64()
    }

    /// Start of the linear-regime region used for convergence decisions.
    pub fn settle_x(&self) -> f64 {
        self.d_plus.max(0.0)
    }
}

/// `residual` must be written with coefficients of order one; callers divide
/// by the multiplicity scale so the tolerance means the same for every pair.
fn check_constant(
    name: &'static str,
    closed: f64,
    bracketed: Option<f64>,
    residual: impl Fn(f64) -> f64,
) -> Result<f64> {
    let bracketed = bracketed.ok_or(Error::CrossCheck { name, closed, bracketed: f64::NAN })?;
    if (closed - bracketed).abs() > CROSS_CHECK_TOL {
        return Err(Error::CrossCheck { name, closed, bracketed });
    }
    let res = residual(closed);
    if !(res.abs() < RESIDUAL_TOL) {
        return Err(Error::Residual { name, residual: res });
    }
    Ok(closed)
}

/// Zero of `alpha`, `-inf` when `m0 = 1 < m1`.
fn zero_of_alpha(pair: MultPair) -> Result<ExtReal> {
    let (m0, m1) = pair.f();
    if pair.m0 + pair.m1 == 2 {
        return Err(Error::Domain("alpha vanishes identically for (1,1)".into()));
    }
    if pair.m0 == 1 {
        return Ok(ExtReal::NegInf);
    }
    if pair.m1 == 1 {
        return Ok(ExtReal::PosInf);
    }
    let closed = ((m0 - m1) / (m0 + m1 - 2.0)).atanh();
    let x = check_constant(
        "z_alpha",
        closed,
        bisect(|x| alpha(pair, x), -60.0, 60.0, 1e-15),
        |x| alpha(pair, x) / (m0 + m1),
    )?;
    Ok(ExtReal::Finite(x))
}

fn zero_of_beta(pair: MultPair) -> Result<f64> {
    let (m0, m1) = pair.f();
    let closed = ((m0 - m1) / (m0 + m1)).atanh();
    check_constant("z_beta", closed, bisect(|x| beta(pair, x), -60.0, 60.0, 1e-15), |x| {
        beta(pair, x) / (m0 + m1)
    })
}

/// Solution of `q = -B` right of the zero of alpha (`m0 < m1`), zero for
/// `m0 = m1`, and the zero of alpha for `m0 > m1` where no solution exists.
fn blowup_threshold_x(pair: MultPair, z_alpha: ExtReal, b: f64) -> Result<f64> {
    let (m0, m1) = pair.f();
    if pair.m0 == pair.m1 {
        return Ok(0.0);
    }
    if pair.m0 > pair.m1 {
        return Ok(z_alpha.to_f64());
    }
    // beta + B alpha is affine in tanh x.
    let t = -(m1 - m0) * (0.25 + 0.5 * b) / (0.25 * (m0 + m1) + 0.5 * b * (m0 + m1 - 2.0));
    let closed = t.atanh();
    let lo = z_alpha.finite().unwrap_or(-60.0);
    // alpha > 0 right of its zero, so this is q + B with the pole cleared.
    let g = |x: f64| beta(pair, x) + b * alpha(pair, x);
    check_constant("c", closed, bisect(g, lo + 1e-14, 60.0, 1e-15), |x| g(x) / (m0 + m1))
}

fn stripe_top(pair: MultPair, b: f64) -> Result<f64> {
    let (m0, m1) = pair.f();
    let closed = ((2.0 * b * b - (m1 - m0)) / (m0 + m1)).atanh();
    let g = |x: f64| 2.0 * beta(pair, x) - b * b;
    check_constant("d_plus", closed, bisect(g, -60.0, 60.0, 1e-15), |x| g(x) / (m0 + m1))
}

/// Largest root of `2 beta_s = q_s^2` for the swapped pair `s`, right of the
/// zero of `alpha_s`. Returns the root and the number of roots seen by the
/// scan.
fn stripe_bottom(pair: MultPair) -> Result<(ExtReal, usize)> {
    let s = pair.swapped();
    if pair.m0 == 1 {
        return Ok((ExtReal::PosInf, 0));
    }
    let za = match zero_of_alpha(s)? {
        ExtReal::Finite(z) => z,
        _ => return Err(Error::Domain(format!("no finite zero of alpha for the swapped pair of {pair}"))),
    };
    let (m0, m1) = pair.f();
    // In T = tanh x: alpha_s = (aT + b)/2, beta_s = (cT + b)/4.
    let a = m0 + m1 - 2.0;
    let bb = m0 - m1;
    let c = m0 + m1;
    let t_za = -bb / a;
    let mut candidates = Vec::new();
    // beta_s = 0 is a root of 2 beta_s - q_s^2 when it lies in the window.
    let t_beta = -bb / c;
    if t_beta > t_za {
        candidates.push(t_beta);
    }
    // 2 alpha_s^2 = beta_s.
    let qa = 2.0 * a * a;
    let qb = 4.0 * a * bb - c;
    let qc = 2.0 * bb * bb - bb;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // Numerically stable pair of roots.
        let k = -0.5 * (qb + qb.signum() * sq);
        let mut roots = vec![k / qa];
        if k != 0.0 {
            roots.push(qc / k);
        }
        for t in roots {
            if t > t_za && t < 1.0 && c * t + bb > 0.0 {
                candidates.push(t);
            }
        }
    }
    let closed = candidates
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .atanh();

    let f = |x: f64| match q(s, x) {
        ExtReal::Finite(v) => 2.0 * beta(s, x) - v * v,
        _ => f64::NEG_INFINITY,
    };
    // alpha_s^2 (2 beta_s - q_s^2), free of the pole at the zero of alpha_s.
    let cleared = |x: f64| {
        let (a, b) = (alpha(s, x), beta(s, x));
        b * (2.0 * a * a - b) / (m0 + m1).powi(3)
    };
    let grid: Vec<f64> = (0..=CAP_C_GRID)
        .map(|i| {
            let e = -12.0 + (CAP_C_WINDOW.log10() + 12.0) * i as f64 / CAP_C_GRID as f64;
            za + 10f64.powf(e)
        })
        .collect();
    // Sign changes of f locate the roots; the final refinement uses the
    // cleared form, which keeps its slope where tanh saturates.
    let roots: Vec<f64> = roots_on_grid(f, &grid, 1e-6)
        .into_iter()
        .filter_map(|r| bisect(cleared, r - 2e-6, r + 2e-6, 1e-15))
        .collect();
    let scanned = roots.iter().copied().fold(f64::NAN, f64::max);
    let root = check_constant("cap_c", closed, (!scanned.is_nan()).then_some(scanned), cleared)?;
    Ok((ExtReal::Finite(root), roots.len()))
}

/// Compute and cross-check all structural constants of a pair.
pub fn constants(pair: MultPair) -> Result<StructuralConstants> {
    pair.require_m1_at_least_2()?;
    let b = big_b(pair)?;
    let z_alpha = zero_of_alpha(pair)?;
    let z_beta = zero_of_beta(pair)?;
    let c = blowup_threshold_x(pair, z_alpha, b)?;
    let d_plus = stripe_top(pair, b)?;
    let (cap_c, cap_c_roots) = stripe_bottom(pair)?;
    let d_minus = ExtReal::from_f64(-cap_c.to_f64());
    let cap_l = match (z_alpha, d_minus) {
        (ExtReal::Finite(z), ExtReal::Finite(d)) => ExtReal::Finite(z - d),
        _ => ExtReal::PosInf,
    };
    let cap_r = ExtReal::from_f64(d_plus - z_alpha.to_f64());
    Ok(StructuralConstants {
        pair,
        z_alpha,
        z_beta,
        big_b: b,
        c,
        d_plus,
        d_minus,
        cap_c,
        cap_l,
        cap_r,
        cap_c_roots,
    })
}

/// Closed-form bounds on the stripe widths `R` and `L`, with flags telling
/// whether each applicable inequality holds for the pair. A flag is `None`
/// when the pair lies outside the range where the inequality is claimed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WidthBounds {
    pub r_bound: f64,
    pub l_bound_pi: f64,
    pub l_lower: f64,
    pub r_holds: Option<bool>,
    pub l_pi_holds: Option<bool>,
    pub l_lower_holds: Option<bool>,
}

impl WidthBounds {
    pub fn all_hold(&self) -> bool {
        [self.r_holds, self.l_pi_holds, self.l_lower_holds].iter().all(|f| f.unwrap_or(true))
    }
}

pub fn width_bounds(pair: MultPair) -> Result<WidthBounds> {
    if pair.m0 < 2 {
        return Err(Error::Domain(format!("width bounds need m0 >= 2, got {pair}")));
    }
    let k = constants(pair)?;
    let m0 = pair.m0 as f64;
    let s17 = 17f64.sqrt();
    let r_bound = (5.0 / (8.0 * m0 - 3.0)).atanh();
    let l_bound_pi = m0.sqrt() * (1.0 / (3.0 * m0 - 4.0)).atanh();
    let l_lower = ((1.0 + s17) / (16.0 * m0 - (17.0 + s17))).atanh();
    let cap_r = k.cap_r.to_f64();
    let cap_l = k.cap_l.to_f64();
    let (m0, m1) = (pair.m0, pair.m1);
    Ok(WidthBounds {
        r_bound,
        l_bound_pi,
        l_lower,
        r_holds: (m1 >= m0.max(4)).then_some(cap_r <= r_bound),
        l_pi_holds: (m1 >= m0)
            .then_some((m0 as f64).sqrt() * cap_l <= l_bound_pi && l_bound_pi < std::f64::consts::FRAC_PI_2),
        l_lower_holds: (m1 + 4 >= 3 * m0).then_some(cap_l >= l_lower),
    })
}

/// Upper bound on `|r(d_plus)|` for a solution converging to `pi/2` whose
/// degree is three in absolute value.
pub fn stripe_entry_bound(pair: MultPair) -> Result<f64> {
    let k = constants(pair)?;
    let za = k
        .z_alpha
        .finite()
        .ok_or_else(|| Error::Domain(format!("entry bound needs a finite zero of alpha, pair {pair}")))?;
    let (m0, m1) = pair.f();
    Ok(std::f64::consts::PI
        + m0.sqrt() * k.cap_l.to_f64()
        + (m1 + 1.0).sqrt() * (k.z_beta - za)
        + m1.sqrt() * (k.d_plus - k.z_beta))
}

/// Largest `m1 >= m0` whose entry bound stays below `3 pi / 2`.
///
/// The bound grows like `sqrt(m1)` for large `m1`, so the scan stops once
/// it has failed for more consecutive values than the best `m1` so far.
pub fn m1_max(m0: u32) -> Result<u32> {
    if !(2..=5).contains(&m0) {
        return Err(Error::Domain(format!("m1_max is tabulated for 2 <= m0 <= 5, got {m0}")));
    }
    let limit = 1.5 * std::f64::consts::PI;
    let mut best = None;
    let mut m1 = m0;
    let mut misses = 0;
    loop {
        if stripe_entry_bound(MultPair::new(m0, m1)?)? <= limit {
            best = Some(m1);
            misses = 0;
        } else {
            misses += 1;
            if misses > best.unwrap_or(m0).max(32) {
                break;
            }
        }
        m1 += 1;
    }
    best.ok_or_else(|| Error::Domain(format!("no admissible m1 for m0 = {m0}")))
}
