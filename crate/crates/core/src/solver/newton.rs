//! Damped Newton with a frozen-coefficient fallback.

use std::sync::Arc;

use log::debug;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{luxemburg_norm, DiscreteField, Mesh};
use crate::linalg::{norm2, norm_inf};
use crate::nfunction::NFunction;
use crate::system::{Reaction, SystemSpec};

use super::assembly::{check_state, quad_values, Dofs, JacobianKind, Operator, SystemSource};
use super::{RegularizationParams, RegularizedSolution};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Stop once the l2 residual is at most this...
    pub tol: f64,
    /// ...and the last step's max norm is at most this.
    pub step_tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub picard_fallback: bool,
    /// Nodal values below `-negative_tol` are reported as an error.
    pub negative_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            step_tol: 1e-10,
            max_iters: 200,
            max_halvings: 40,
            picard_fallback: true,
            negative_tol: 1e-12,
        }
    }
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iters: usize,
    pub used_picard: bool,
}

pub(crate) fn run(op: &Operator, mut x: Vec<f64>, opts: &NewtonOptions) -> Result<Outcome> {
    let mut r = op.residual(&x)?;
    let mut rn = norm2(&r);
    let mut kind = JacobianKind::Newton;
    let mut used_picard = false;
    let done = |x, residual, iters, used_picard| {
        Ok(Outcome {
            x,
            residual,
            iters,
            used_picard,
        })
    };
    for iter in 0..opts.max_iters {
        if rn == 0.0 {
            return done(x, rn, iter, used_picard);
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = match op.jacobian(&x, kind).solve(&neg) {
            Ok(dx) if dx.iter().all(|v| v.is_finite()) => dx,
            Ok(_) | Err(Error::SingularMatrix(_)) if kind == JacobianKind::Newton && opts.picard_fallback => {
                kind = JacobianKind::Picard;
                used_picard = true;
                continue;
            }
            Ok(_) => return Err(Error::SingularMatrix(0)),
            Err(e) => return Err(e),
        };
        let step = norm_inf(&dx);
        if rn <= opts.tol && step <= opts.step_tol {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let rt = op.residual(&trial)?;
            let rtn = norm2(&rt);
            if rtn <= rn {
                return done(trial, rtn, iter + 1, used_picard);
            }
            return done(x, rn, iter, used_picard);
        }
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + lam * b).collect();
            if let Ok(rt) = op.residual(&trial) {
                let rtn = norm2(&rt);
                if rtn < rn {
                    accepted = Some((trial, rt, rtn));
                    break;
                }
            }
            lam *= 0.5;
        }
        match accepted {
            Some((xt, rt, rtn)) => {
                debug!("newton {iter}: residual {rn:.3e} -> {rtn:.3e}, step {:.3e}, lambda {lam}", step * lam);
                x = xt;
                r = rt;
                rn = rtn;
                kind = JacobianKind::Newton;
            }
            None if rn <= opts.tol => return done(x, rn, iter, used_picard),
            None if kind == JacobianKind::Newton && opts.picard_fallback => {
                debug!("newton {iter}: line search failed, trying frozen kernel");
                kind = JacobianKind::Picard;
                used_picard = true;
            }
            None => return Err(Error::LineSearchStall { iter, residual: rn }),
        }
    }
    Err(Error::NoConvergence {
        iters: opts.max_iters,
        residual: rn,
    })
}

fn check_negative(fields: &[DiscreteField], tol: f64) -> Result<()> {
    for f in fields {
        if let Some((node, &value)) = f
            .values()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            if value < -tol {
                return Err(Error::NegativeSolution { node, value });
            }
        }
    }
    Ok(())
}

/// Solves the regularized system from `initial` by damped Newton.
pub fn newton_solve(
    spec: &SystemSpec,
    params: &RegularizationParams,
    initial: (&DiscreteField, &DiscreteField),
    opts: &NewtonOptions,
) -> Result<RegularizedSolution> {
    params.check(spec.structure)?;
    check_state(spec, initial.0, initial.1)?;
    let src = SystemSource::new(spec, params);
    let source = |f: usize, e: usize, q: usize, vals: [f64; 2]| src.eval(f, e, q, vals);
    let op = Operator {
        mesh: &spec.mesh,
        nf: &spec.nf,
        eta: params.eta,
        dofs: Dofs::new(&spec.mesh, 2),
        source: &source,
    };
    let out = run(&op, op.dofs.gather(&[initial.0, initial.1]), opts)?;
    let mut fields = op.dofs.fields(&spec.mesh, &out.x);
    check_negative(&fields, opts.negative_tol)?;
    let v = fields.pop().expect("two fields");
    let u = fields.pop().expect("two fields");
    let norm_pair = (
        luxemburg_norm(&spec.nf, &u, true)?,
        luxemburg_norm(&spec.nf, &v, true)?,
    );
    Ok(RegularizedSolution {
        u,
        v,
        residual_norm: out.residual,
        newton_iters: out.iters,
        used_picard: out.used_picard,
        params: *params,
        norm_pair,
    })
}

/// Right-hand side `term(c(x), w)` of a scalar problem, where `c` is a
/// nodal coefficient and `term` returns the value and its `w` derivative.
pub struct ScalarSource<'a> {
    pub coef: &'a DiscreteField,
    pub term: &'a dyn Fn(f64, f64) -> (f64, f64),
}

/// Solves `-div(phi(|grad w|) grad w) = term(c, w)` with zero boundary data.
/// Returns the solution and the final residual.
pub fn solve_scalar(
    mesh: &Arc<Mesh>,
    nf: &NFunction,
    eta: f64,
    source: &ScalarSource,
    initial: &DiscreteField,
    opts: &NewtonOptions,
) -> Result<(DiscreteField, f64)> {
    let coef = quad_values(source.coef, f64::INFINITY);
    let nq = mesh.quad_rule().len();
    let src = |_f: usize, e: usize, q: usize, vals: [f64; 2]| {
        let (value, d_own) = (source.term)(coef[e * nq + q], vals[0]);
        Reaction {
            value,
            d_own,
            d_other: 0.0,
        }
    };
    let op = Operator {
        mesh,
        nf,
        eta,
        dofs: Dofs::new(mesh, 1),
        source: &src,
    };
    let out = run(&op, op.dofs.gather(&[initial]), opts)?;
    let w = op.dofs.fields(mesh, &out.x).pop().expect("one field");
    check_negative(std::slice::from_ref(&w), opts.negative_tol)?;
    Ok((w, out.residual))
}

/// Warm start from the linear problems `-lap w_i = a_i / eps^(alpha_i+beta_i)
/// + b_i delta^(gamma_i+sigma_i)` with truncated coefficients.
pub fn linear_warm_start(
    spec: &SystemSpec,
    params: &RegularizationParams,
) -> Result<(DiscreteField, DiscreteField)> {
    let lap = NFunction::power(2.0)?;
    let opts = NewtonOptions::default();
    let mut out = Vec::with_capacity(2);
    for i in 0..2 {
        let (p, q, r, s) = spec.equation_exponents(i);
        let (ka, kb) = (params.eps.powf(-p - q), params.delta.powf(r + s));
        let load = spec.a[i]
            .map(|a| a.min(params.n) * ka)
            .zip_with(&spec.b[i].map(|b| b.min(params.n) * kb), |x, y| x + y);
        let term = |c: f64, _w: f64| (c, 0.0);
        let src = ScalarSource {
            coef: &load,
            term: &term,
        };
        let zero = DiscreteField::zeros(&spec.mesh);
        let (w, _) = solve_scalar(&spec.mesh, &lap, 0.0, &src, &zero, &opts)?;
        out.push(w.map(|x| x.max(0.0)));
    }
    let v = out.pop().expect("two fields");
    Ok((out.pop().expect("two fields"), v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Exponents, Structure};

    fn p2(exps: Exponents, a: [f64; 2], b: [f64; 2], cells: usize) -> SystemSpec {
        SystemSpec::with_constants(
            NFunction::power(2.0).unwrap(),
            Mesh::interval(0.0, 1.0, cells).unwrap(),
            exps,
            a,
            b,
            Structure::General,
        )
    }

    #[test]
    fn linear_case_is_nodally_exact() {
        let s = p2(Exponents::default(), [0.0; 2], [1.0; 2], 100);
        let z = DiscreteField::zeros(&s.mesh);
        let sol = newton_solve(&s, &RegularizationParams::new(1.0, 0.0), (&z, &z), &NewtonOptions::default())
            .unwrap();
        for (p, (u, v)) in s.mesh.nodes().iter().zip(sol.u.values().iter().zip(sol.v.values())) {
            let exact = p[0] * (1.0 - p[0]) / 2.0;
            assert!((u - exact).abs() < 1e-12);
            assert!((v - exact).abs() < 1e-12);
        }
        assert!(sol.residual_norm <= 1e-9);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let s = p2(Exponents::default(), [0.0; 2], [0.0; 2], 20);
        let z = DiscreteField::zeros(&s.mesh);
        let sol = newton_solve(&s, &RegularizationParams::new(1.0, 0.0), (&z, &z), &NewtonOptions::default())
            .unwrap();
        assert_eq!(sol.u.max_abs(), 0.0);
        assert_eq!(sol.v.max_abs(), 0.0);
    }

    #[test]
    fn negative_solution_is_reported() {
        let m = Mesh::interval(0.0, 1.0, 10).unwrap();
        let nf = NFunction::power(2.0).unwrap();
        let coef = DiscreteField::from_fn(&m, |_| -1.0);
        let term = |c: f64, _w: f64| (c, 0.0);
        let src = ScalarSource {
            coef: &coef,
            term: &term,
        };
        let z = DiscreteField::zeros(&m);
        let err = solve_scalar(&m, &nf, 0.0, &src, &z, &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NegativeSolution { .. }));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let s = p2(
            Exponents {
                alpha: [1.0, 1.0],
                ..Default::default()
            },
            [1.0; 2],
            [0.0; 2],
            20,
        );
        let z = DiscreteField::zeros(&s.mesh);
        let opts = NewtonOptions {
            max_iters: 1,
            ..Default::default()
        };
        let err = newton_solve(&s, &RegularizationParams::new(0.01, 0.0), (&z, &z), &opts).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iters: 1, .. }));
        assert!(err.is_solver_failure());
    }
}
