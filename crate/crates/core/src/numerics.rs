//! Scalar root finding, quadrature and one-dimensional minimization.

use crate::error::{Error, Result};

/// Smallest and largest abscissa a bracket search may reach.
pub const BRACKET_MIN: f64 = 1e-30;
pub const BRACKET_MAX: f64 = 1e30;

/// Solves `f(x) = target` for a nondecreasing `f` on `(0, inf)`.
///
/// The bracket is grown geometrically from `x = 1` inside
/// `[BRACKET_MIN, BRACKET_MAX]` and then bisected in log space until the
/// bracket's relative width drops below `rel_tol`.
pub fn solve_increasing<F>(f: F, target: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !target.is_finite() {
        return Err(Error::BracketFailure { target });
    }
    let mut lo = 1.0;
    let mut hi = 1.0;
    if f(1.0) < target {
        while f(hi) < target {
            lo = hi;
            hi *= 16.0;
            if hi > BRACKET_MAX {
                return Err(Error::BracketFailure { target });
            }
        }
    } else {
        while f(lo) >= target {
            hi = lo;
            lo /= 16.0;
            if lo < BRACKET_MIN {
                return Err(Error::BracketFailure { target });
            }
        }
    }
    // f(lo) < target <= f(hi)
    for _ in 0..200 {
        if hi / lo - 1.0 <= rel_tol {
            break;
        }
        let mid = (lo * hi).sqrt();
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, started from `panels`
/// equal sub-intervals.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, panels: usize, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    (0..panels)
        .map(|k| {
            let x0 = a + k as f64 * width;
            let x1 = if k + 1 == panels { b } else { x0 + width };
            let xm = 0.5 * (x0 + x1);
            let (f0, fm, f1) = (f(x0), f(xm), f(x1));
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            simpson_rec(f, x0, x1, f0, fm, f1, whole, panel_tol, 48)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_section<F>(f: F, mut a: f64, mut b: f64, x_tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..300 {
        if (b - a).abs() <= x_tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let (mut x, mut fx) = if fc < fd { (c, fc) } else { (d, fd) };
    for (xe, fe) in [(a, f(a)), (b, f(b))] {
        if fe < fx {
            x = xe;
            fx = fe;
        }
    }
    (x, fx)
}

/// Numerical Legendre transform `sup_{t >= 0} { s t - f(t) }` of a convex
/// `f` with `f(0) = 0`, by golden section in `log t`.
pub fn legendre_transform<F>(f: F, s: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    if s <= 0.0 {
        return 0.0;
    }
    let g = |t: f64| s * t - f(t);
    // Walk up until the objective starts decreasing; concavity makes the
    // maximizer lie in the last two steps.
    let mut t = 1e-12;
    let mut best = g(t);
    loop {
        let next = t * 4.0;
        let val = g(next);
        if val < best || next > BRACKET_MAX {
            break;
        }
        best = val;
        t = next;
    }
    let lo = (t / 4.0).ln();
    let hi = (t * 4.0).ln();
    let (_, neg) = golden_section(|y| -g(y.exp()), lo, hi, 1e-14);
    (-neg).max(0.0)
}

/// Log-spaced samples `n` points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solve_increasing_recovers_cube_root() {
        let x = solve_increasing(|x| x * x * x, 27.0, 1e-14).unwrap();
        assert_relative_eq!(x, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn solve_increasing_reports_missing_bracket() {
        let err = solve_increasing(|x| x.min(5.0), 10.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::BracketFailure { .. }));
    }

    #[test]
    fn simpson_handles_sqrt_endpoint() {
        let v = adaptive_simpson(&|x: f64| x.sqrt(), 0.0, 1.0, 4, 1e-12);
        assert_relative_eq!(v, 2.0 / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2) + 1.0, -2.0, 5.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert_relative_eq!(fx, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn legendre_of_quadratic_is_quadratic() {
        let v = legendre_transform(|t| 0.5 * t * t, 3.0);
        assert_relative_eq!(v, 4.5, max_relative = 1e-10);
    }
}
