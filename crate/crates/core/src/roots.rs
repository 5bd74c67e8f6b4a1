/// Bisection on a bracketing interval. Returns the midpoint of the final
/// bracket once it is narrower than `tol` or stops shrinking.
pub(crate) fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() && !fb.is_finite() {
        return None;
    }
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// All sign changes of `f` on the given increasing grid, each refined by
/// bisection.
pub(crate) fn roots_on_grid<F: FnMut(f64) -> f64>(mut f: F, grid: &[f64], tol: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &x in grid {
        let fx = f(x);
        if !fx.is_finite() {
            prev = None;
            continue;
        }
        if let Some((xp, fp)) = prev {
            if fx == 0.0 {
                roots.push(x);
            } else if fp != 0.0 && fp.signum() != fx.signum() {
                if let Some(r) = bisect(&mut f, xp, x, tol) {
                    roots.push(r);
                }
            }
        }
        prev = Some((x, fx));
    }
    roots
}
