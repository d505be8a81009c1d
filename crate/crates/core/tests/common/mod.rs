//! Test-only oracles shared by the integration tests.

pub const RK4_STEP: f64 = 1e-4;

/// RK4 path of `u'' = -1/(u + eps)`, `u(0) = 0`, `u'(0) = slope`, sampled at
/// every step. `None` once the path comes within `eps/2` of the pole.
pub fn shoot(eps: f64, slope: f64) -> Option<Vec<f64>> {
    let steps = (1.0 / RK4_STEP).round() as usize;
    let h = RK4_STEP;
    let f = |y: [f64; 2]| [y[1], -1.0 / (y[0] + eps)];
    let mut y = [0.0, slope];
    let mut path = Vec::with_capacity(steps + 1);
    path.push(0.0);
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(y[0] + eps > 0.5 * eps) {
            return None;
        }
        path.push(y[0]);
    }
    Some(path)
}

/// Shooting solution of `-u'' = 1/(u + eps)` on (0, 1) with zero ends:
/// bracket and bisect the initial slope, then polish with secant steps.
pub fn shooting_oracle(eps: f64) -> Vec<f64> {
    let end = |s: f64| shoot(eps, s).map_or(-1.0, |p| p[p.len() - 1]);
    let (mut lo, mut hi) = (0.0, 1.0);
    while end(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if end(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (mut s0, mut s1) = (lo, hi);
    let (mut f0, mut f1) = (end(s0), end(s1));
    for _ in 0..20 {
        if f1 == f0 || f1.abs() < 1e-15 {
            break;
        }
        let s2 = s1 - f1 * (s1 - s0) / (f1 - f0);
        (s0, f0) = (s1, f1);
        s1 = s2;
        f1 = end(s1);
    }
    shoot(eps, s1).expect("converged slope stays off the pole")
}
