//! A-priori radius of the ball containing every solution of a regularized
//! system, from the coercivity inequality
//!
//! ```text
//! (ell / 2^ell) r^ell - C1 r - C2 r^s1 - C3 r^s2 - C4 > 0,   s_i = gamma_i + sigma_i + 1
//! ```
//!
//! where `r = ||grad u||_Phi + ||grad v||_Phi`.

use crate::error::{Error, Result};
use crate::grid::{inner_product, DiscreteField};
use crate::system::SystemSpec;

use super::RegularizationParams;

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriConstants {
    pub ell: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub s1: f64,
    pub s2: f64,
    /// `||w||_1 <= c_l1 ||grad w||_Phi`
    pub c_l1: f64,
    /// `||w||_{s_i} <= k_s[i] ||grad w||_Phi`
    pub k_s: [f64; 2],
}

impl AprioriConstants {
    pub fn polynomial(&self, r: f64) -> f64 {
        coercivity(self.ell, [self.c1, self.c2, self.c3, self.c4], [self.s1, self.s2], r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriBound {
    pub r0: f64,
    pub constants: AprioriConstants,
    /// True when the singular terms were bounded without `eps`
    /// (`beta_i = 0` and `alpha_i <= 1`).
    pub eps_independent: bool,
}

fn coercivity(ell: f64, c: [f64; 4], s: [f64; 2], r: f64) -> f64 {
    ell / 2f64.powf(ell) * r.powf(ell) - c[0] * r - c[1] * r.powf(s[0]) - c[2] * r.powf(s[1]) - c[3]
}

/// Smallest `r >= 2` at which the coercivity polynomial is positive, up to
/// relative bisection tolerance `1e-12` (the returned end of the bracket
/// always satisfies the inequality).
pub fn r0_from_constants(ell: f64, c: [f64; 4], s: [f64; 2]) -> Result<f64> {
    for (i, &si) in s.iter().enumerate() {
        if si >= ell {
            return Err(Error::ExponentViolation {
                which: i + 1,
                sum: si - 1.0,
                limit: ell - 1.0,
            });
        }
    }
    if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config(format!("coercivity constants must be finite and >= 0: {c:?}")));
    }
    let p = |r: f64| coercivity(ell, c, s, r);
    if p(2.0) > 0.0 {
        return Ok(2.0);
    }
    let (mut lo, mut hi) = (2.0, 4.0);
    while p(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !p(hi).is_finite() {
            return Err(Error::BracketFailure { target: 0.0 });
        }
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Builds the coercivity constants of `spec` at regularization `params`
/// and returns the radius.
pub fn compute_r0(spec: &SystemSpec, params: &RegularizationParams) -> Result<AprioriBound> {
    let ell = spec.nf.ell();
    let e = &spec.exps;
    for i in 0..2 {
        let sum = e.gamma[i] + e.sigma[i];
        if sum >= ell - 1.0 {
            return Err(Error::ExponentViolation {
                which: i + 1,
                sum,
                limit: ell - 1.0,
            });
        }
    }
    let geo = spec.mesh.geometry();
    let (vol, diam) = (geo.measure(), geo.diameter());
    let c_l1 = 4.0 * diam / spec.nf.conjugate_inverse(1.0 / vol)?;
    let k_ell = (1.0 / spec.nf.eval(1.0) + vol).powf(1.0 / ell);
    let s = [e.power_degree(0), e.power_degree(1)];
    let k_s = s.map(|si| vol.powf(1.0 / si - 1.0 / ell) * k_ell * 2.0 * diam);

    let one = DiscreteField::from_fn(&spec.mesh, |_| 1.0);
    let cap = |f: &DiscreteField| f.map(|x| x.min(params.n));
    let a_inf = [cap(&spec.a[0]).max_abs(), cap(&spec.a[1]).max_abs()];
    let a_one = [inner_product(&cap(&spec.a[0]), &one), inner_product(&cap(&spec.a[1]), &one)];
    let b_inf = [cap(&spec.b[0]).max_abs(), cap(&spec.b[1]).max_abs()];

    let eps_independent = (0..2).all(|i| e.beta[i] == 0.0 && e.alpha[i] <= 1.0);
    let mut c4 = 0.0;
    let c1 = if eps_independent {
        // u / (u + eps)^alpha <= u^(1 - alpha) <= 1 + u
        c4 += a_one[0] + a_one[1];
        a_inf[0].max(a_inf[1]) * c_l1
    } else {
        (0..2)
            .map(|i| a_inf[i] * params.eps.powf(-e.alpha[i] - e.beta[i]))
            .fold(0.0, f64::max)
            * c_l1
    };
    let c_pow = |i: usize| b_inf[i] * 2f64.powf(s[i] - 1.0) * k_s[i].powf(s[i]);
    if params.delta > 0.0 {
        for i in 0..2 {
            c4 += b_inf[i] * 2f64.powf(s[i]) * params.delta.powf(s[i]) * vol;
        }
    }
    let constants = AprioriConstants {
        ell,
        c1,
        c2: c_pow(0),
        c3: c_pow(1),
        c4,
        s1: s[0],
        s2: s[1],
        c_l1,
        k_s,
    };
    let r0 = r0_from_constants(ell, [constants.c1, constants.c2, constants.c3, constants.c4], s)?;
    Ok(AprioriBound {
        r0,
        constants,
        eps_independent,
    })
}
