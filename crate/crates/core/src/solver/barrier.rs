//! Scalar barrier problems bounding the system's solutions from below.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::DiscreteField;
use crate::nfunction::NFunction;
use crate::numerics::{golden_section, log_space};
use crate::system::SystemSpec;

use super::newton::{solve_scalar, NewtonOptions, ScalarSource};
use super::default_eta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierCase {
    /// `-div(phi(|grad w|) grad w) = min(a_i, 1) / (w + 1)^alpha_i`
    SingularScalar,
    /// `-div(phi(|grad w|) grad w) = min(b_i, 1) w^gamma_i`, positive branch
    PowerScalar,
    /// `-div(phi(|grad w|) grad w) = min(a_i, b_i, 1) g_i`
    MixedScalar,
}

/// Upper end of the search interval of [`minimize_g`].
pub const G_SEARCH_MAX: f64 = 1e6;

/// `min_{t >= 0} 1 / (t^beta + 1) + t^sigma`, by a log-grid scan (plus
/// `t = 0`) followed by golden section and a quadratic fit around the best
/// sample. The objective can have several local minima.
pub fn minimize_g(beta: f64, sigma: f64) -> f64 {
    let g = |t: f64| 1.0 / (t.powf(beta) + 1.0) + t.powf(sigma);
    let grid = log_space(1e-12, G_SEARCH_MAX, 2001);
    let vals: Vec<f64> = grid.iter().map(|&t| g(t)).collect();
    let k = (0..grid.len())
        .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .expect("nonempty grid");
    let mut best = g(0.0).min(vals[k]);
    let lo = grid[k.saturating_sub(1)].ln();
    let hi = grid[(k + 1).min(grid.len() - 1)].ln();
    let h = |y: f64| g(y.exp());
    let (y, gy) = golden_section(h, lo, hi, 1e-12);
    best = best.min(gy);
    // parabola through three points around the golden-section minimizer
    let dy = 1e-4 * (hi - lo).max(1e-8);
    let (f0, f1, f2) = (h(y - dy), h(y), h(y + dy));
    let curv = f0 - 2.0 * f1 + f2;
    if curv > 0.0 {
        let vertex = y + 0.5 * dy * (f0 - f2) / curv;
        if vertex.is_finite() {
            best = best.min(h(vertex));
        }
    }
    best
}

/// Solves the barrier problem `case` for equation `which` (1 or 2).
pub fn solve_barrier(spec: &SystemSpec, case: BarrierCase, which: usize) -> Result<DiscreteField> {
    let eta = default_eta(spec.mesh.geometry().diameter());
    solve_barrier_with(spec, case, which, eta, &NewtonOptions::default())
}

pub fn solve_barrier_with(
    spec: &SystemSpec,
    case: BarrierCase,
    which: usize,
    eta: f64,
    opts: &NewtonOptions,
) -> Result<DiscreteField> {
    if !(1..=2).contains(&which) {
        return Err(Error::Config(format!("equation index must be 1 or 2, got {which}")));
    }
    let i = which - 1;
    let (alpha, beta, gamma, sigma) = spec.equation_exponents(i);
    let mesh = &spec.mesh;
    let zero = DiscreteField::zeros(mesh);
    let coef = match case {
        BarrierCase::SingularScalar => spec.a[i].map(|a| a.min(1.0)),
        BarrierCase::PowerScalar => spec.b[i].map(|b| b.min(1.0)),
        BarrierCase::MixedScalar => {
            let g = minimize_g(beta, sigma);
            spec.a[i].zip_with(&spec.b[i], |a, b| a.min(b).min(1.0) * g)
        }
    };
    if mesh.interior_nodes().all(|n| coef.values()[n] <= 0.0) {
        return Err(Error::ZeroBarrier);
    }
    let w = match case {
        BarrierCase::SingularScalar => {
            let term = move |c: f64, w: f64| {
                let base = w.abs() + 1.0;
                let val = c * base.powf(-alpha);
                (val, -alpha * val / base * w.signum())
            };
            let src = ScalarSource {
                coef: &coef,
                term: &term,
            };
            solve_scalar(mesh, &spec.nf, eta, &src, &zero, opts)?.0
        }
        BarrierCase::MixedScalar => {
            let term = |c: f64, _w: f64| (c, 0.0);
            let src = ScalarSource {
                coef: &coef,
                term: &term,
            };
            solve_scalar(mesh, &spec.nf, eta, &src, &zero, opts)?.0
        }
        BarrierCase::PowerScalar => {
            // Start above the positive branch: the solution with load c.
            let unit = |c: f64, _w: f64| (c, 0.0);
            let start_src = ScalarSource {
                coef: &coef,
                term: &unit,
            };
            let start = solve_scalar(mesh, &spec.nf, eta, &start_src, &zero, opts)?.0;
            let term = move |c: f64, w: f64| {
                if w <= 0.0 {
                    return (0.0, 0.0);
                }
                let deriv = if gamma == 0.0 {
                    0.0
                } else {
                    c * gamma * w.max(1e-12).powf(gamma - 1.0)
                };
                (c * w.powf(gamma), deriv)
            };
            let src = ScalarSource {
                coef: &coef,
                term: &term,
            };
            let scale = positive_branch_scale(&spec.nf, gamma, start.max_abs());
            solve_scalar(mesh, &spec.nf, eta, &src, &start.scaled(scale), opts)?.0
        }
    };
    if w.max_abs() <= 0.0 || mesh.interior_nodes().any(|n| w.values()[n] <= 0.0) {
        return Err(Error::ZeroBarrier);
    }
    Ok(w)
}

/// Rescaling that moves the unit-load solution `w1` (with max `m1`) near
/// the positive branch of the sublinear problem: for a power kernel with
/// exponent `ell`, `w = s w1` balances when `(s m1)^gamma = s^(ell-1)`.
fn positive_branch_scale(nf: &NFunction, gamma: f64, m1: f64) -> f64 {
    let ell = nf.ell();
    if !(m1 > 0.0) || ell - 1.0 <= gamma {
        return 1.0;
    }
    let s = m1.powf(gamma / (ell - 1.0 - gamma));
    // stay on the upper side of the branch
    2.0 * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mesh;
    use crate::system::{Exponents, Structure};

    #[test]
    fn g_examples() {
        assert!((minimize_g(1.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((minimize_g(0.0, 0.7) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn g_matches_brute_force_scan() {
        for (beta, sigma) in [(2.0, 0.5), (3.0, 2.0), (1.0, 0.3), (4.0, 1.5)] {
            let g = |t: f64| 1.0 / (t.powf(beta) + 1.0) + t.powf(sigma);
            let brute = (0..=1_000_000)
                .map(|k| g(10.0 * k as f64 / 1e6))
                .fold(f64::INFINITY, f64::min);
            let v = minimize_g(beta, sigma);
            assert!(v <= brute + 1e-12, "{beta} {sigma}: {v} vs {brute}");
            assert!((v - brute).abs() < 1e-8, "{beta} {sigma}: {v} vs {brute}");
        }
    }

    fn spec(p: f64, exps: Exponents, a: f64, b: f64) -> SystemSpec {
        SystemSpec::with_constants(
            NFunction::power(p).unwrap(),
            Mesh::interval(0.0, 1.0, 100).unwrap(),
            exps,
            [a; 2],
            [b; 2],
            Structure::General,
        )
    }

    #[test]
    fn linear_barriers_match_closed_form() {
        let mixed = spec(
            2.0,
            Exponents {
                beta: [1.0, 1.0],
                sigma: [1.0, 1.0],
                ..Default::default()
            },
            1.0,
            1.0,
        );
        let singular = spec(2.0, Exponents::default(), 1.0, 0.0);
        for w in [
            solve_barrier(&mixed, BarrierCase::MixedScalar, 1).unwrap(),
            solve_barrier(&singular, BarrierCase::SingularScalar, 2).unwrap(),
        ] {
            for (p, v) in w.mesh().nodes().iter().zip(w.values()) {
                assert!((v - p[0] * (1.0 - p[0]) / 2.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn vanishing_coefficient_is_zero_barrier() {
        let s = spec(2.0, Exponents::default(), 1.0, 0.0);
        assert!(matches!(
            solve_barrier(&s, BarrierCase::MixedScalar, 1),
            Err(Error::ZeroBarrier)
        ));
    }

    #[test]
    fn power_barrier_is_positive_fixed_point() {
        let s = spec(
            2.0,
            Exponents {
                gamma: [0.5, 0.5],
                ..Default::default()
            },
            0.0,
            1.0,
        );
        let w = solve_barrier(&s, BarrierCase::PowerScalar, 1).unwrap();
        let max = w.max_abs();
        // -w'' = w^(1/2) has a positive solution of size O(1e-2)
        assert!(max > 1e-3 && max < 1.0, "{max}");
    }
}
