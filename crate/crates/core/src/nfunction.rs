//! N-functions generated by a kernel `phi`: `Phi(t) = int_0^t s phi(s) ds`.
//!
//! Besides evaluating `Phi`, this module computes the complementary function
//! `Phi~(t) = max_{s>=0} (t s - Phi(s))`, the Sobolev conjugate `Phi_*`, the
//! growth exponents `(ell, m)` bounding `(s phi(s))' / phi(s) + 1`, and
//! sampled audits of the inequalities those exponents imply.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, legendre_transform, log_space, solve_increasing};

/// Tolerances and sampling grids used by N-function routines.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NFunctionConfig {
    /// Number of log-spaced points used to sample the kernel.
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    /// Relative step of the central difference used for custom kernels.
    pub fd_rel_step: f64,
    /// Relative tolerance of every bisection (conjugate, inverse, ...).
    pub root_rel_tol: f64,
    /// Initial panel count of the adaptive quadrature for custom kernels.
    pub quad_points: usize,
    /// Relative tolerance of adaptive quadratures.
    pub quad_rel_tol: f64,
    /// Relative slack allowed by the inequality audits.
    pub bound_slack: f64,
}

impl Default for NFunctionConfig {
    fn default() -> Self {
        Self {
            grid_points: 400,
            grid_lo: 1e-6,
            grid_hi: 1e6,
            fd_rel_step: 1e-6,
            root_rel_tol: 1e-12,
            quad_points: 16,
            quad_rel_tol: 1e-13,
            bound_slack: 1e-9,
        }
    }
}

impl NFunctionConfig {
    pub fn grid(&self) -> Vec<f64> {
        log_space(self.grid_lo, self.grid_hi, self.grid_points)
    }
}

/// A user supplied kernel `phi: (0, inf) -> (0, inf)`.
#[derive(Clone)]
pub struct CustomKernel {
    name: String,
    phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl CustomKernel {
    pub fn new(name: impl Into<String>, phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            phi: Arc::new(phi),
        }
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel").field("name", &self.name).finish()
    }
}

/// The function `phi` defining the operator `div(phi(|grad u|) grad u)`.
#[derive(Debug, Clone)]
pub enum PhiKernel {
    /// `phi(s) = s^(p-2)`: the p-Laplacian.
    Power(f64),
    /// `phi(s) = sum_k s^(p_k - 2)`: (p,q)- and anisotropic sums.
    SumPowers(Vec<f64>),
    Custom(CustomKernel),
}

impl PhiKernel {
    /// Builds a builtin kernel from a family name as used in config files.
    pub fn from_family(family: &str, exponents: &[f64]) -> Result<Self> {
        match family {
            "power" => match exponents {
                [p] => Ok(PhiKernel::Power(*p)),
                _ => Err(Error::Config(
                    "family `power` takes exactly one exponent".into(),
                )),
            },
            "sum-powers" | "sum_powers" => {
                if exponents.is_empty() {
                    return Err(Error::Config(
                        "family `sum-powers` needs at least one exponent".into(),
                    ));
                }
                Ok(PhiKernel::SumPowers(exponents.to_vec()))
            }
            other => Err(Error::Config(format!("unknown kernel family `{other}`"))),
        }
    }

    pub fn label(&self) -> String {
        let join = |ps: &[f64]| {
            ps.iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        match self {
            PhiKernel::Power(p) => format!("power({p})"),
            PhiKernel::SumPowers(ps) => format!("sum-powers({})", join(ps)),
            PhiKernel::Custom(c) => format!("custom({})", c.name),
        }
    }

    fn builtin_exponents(&self) -> Option<Vec<f64>> {
        match self {
            PhiKernel::Power(p) => Some(vec![*p]),
            PhiKernel::SumPowers(ps) => Some(ps.clone()),
            PhiKernel::Custom(_) => None,
        }
    }

    pub fn phi(&self, s: f64) -> f64 {
        match self {
            PhiKernel::Power(p) => s.powf(p - 2.0),
            PhiKernel::SumPowers(ps) => ps.iter().map(|p| s.powf(p - 2.0)).sum(),
            PhiKernel::Custom(c) => (c.phi)(s),
        }
    }

    /// `s phi(s)`, continuous at `s = 0` with value 0.
    pub fn flux(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match self {
            PhiKernel::Power(p) => s.powf(p - 1.0),
            PhiKernel::SumPowers(ps) => ps.iter().map(|p| s.powf(p - 1.0)).sum(),
            PhiKernel::Custom(c) => s * (c.phi)(s),
        }
    }

    /// `(s phi(s))'`; analytic for builtin families, central difference with
    /// relative step `rel_step` otherwise.
    pub fn flux_derivative(&self, s: f64, rel_step: f64) -> f64 {
        match self {
            PhiKernel::Power(p) => (p - 1.0) * s.powf(p - 2.0),
            PhiKernel::SumPowers(ps) => ps.iter().map(|p| (p - 1.0) * s.powf(p - 2.0)).sum(),
            PhiKernel::Custom(_) => {
                let h = rel_step * s;
                (self.flux(s + h) - self.flux(s - h)) / (2.0 * h)
            }
        }
    }

    fn closed_form_phi(&self, t: f64) -> Option<f64> {
        match self {
            PhiKernel::Power(p) => Some(t.powf(*p) / p),
            PhiKernel::SumPowers(ps) => Some(ps.iter().map(|p| t.powf(*p) / p).sum()),
            PhiKernel::Custom(_) => None,
        }
    }

    /// Sampled checks of positivity and strict monotonicity of `s phi(s)`.
    pub fn check_sampled(&self, grid: &[f64]) -> Result<()> {
        let mut prev = 0.0;
        for &s in grid {
            let phi = self.phi(s);
            if !(phi > 0.0 && phi.is_finite()) {
                return Err(Error::NonMonotoneKernel { at: s });
            }
            let flux = self.flux(s);
            if flux <= prev {
                return Err(Error::NonMonotoneKernel { at: s });
            }
            prev = flux;
        }
        Ok(())
    }
}

/// Estimates `(ell, m)` with `ell - 1 <= (s phi)'/phi <= m - 1`.
///
/// For builtin families the ratio is a weighted mean of the `p_k - 1`, so its
/// infimum and supremum over `s > 0` are the extreme exponents; those are
/// returned after checking that every sampled ratio lies between them. For
/// custom kernels the bounds are the sampled extremes.
pub fn estimate_exponents(
    kernel: &PhiKernel,
    grid: &[f64],
    n_dim: Option<usize>,
    cfg: &NFunctionConfig,
) -> Result<(f64, f64)> {
    let ratios: Vec<f64> = grid
        .iter()
        .map(|&s| kernel.flux_derivative(s, cfg.fd_rel_step) / kernel.phi(s))
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::ExponentOutOfRange(
            "non-finite exponent ratio on the sample grid".into(),
        ));
    }
    let (ell, m) = match kernel.builtin_exponents() {
        Some(ps) => {
            let ell = ps.iter().copied().fold(f64::INFINITY, f64::min);
            let m = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-9 * (1.0 + m.abs());
            if lo < ell - 1.0 - slack || hi > m - 1.0 + slack {
                return Err(Error::ExponentOutOfRange(format!(
                    "sampled ratio range [{lo}, {hi}] escapes [{}, {}]",
                    ell - 1.0,
                    m - 1.0
                )));
            }
            (ell, m)
        }
        None => (1.0 + lo, 1.0 + hi),
    };
    if ell <= 1.0 {
        return Err(Error::ExponentOutOfRange(format!("ell = {ell} <= 1")));
    }
    if let Some(n) = n_dim {
        if m >= n as f64 {
            return Err(Error::ExponentOutOfRange(format!(
                "m = {m} >= N = {n}"
            )));
        }
    }
    Ok((ell, m))
}

/// An N-function with its growth exponents. Immutable once built.
#[derive(Debug, Clone)]
pub struct NFunction {
    kernel: PhiKernel,
    ell: f64,
    m: f64,
    cfg: NFunctionConfig,
}

/// Builds the N-function of `kernel`, with `quad_points` initial panels for
/// the quadrature used by custom kernels.
pub fn build_nfunction(kernel: PhiKernel, quad_points: usize) -> Result<NFunction> {
    let cfg = NFunctionConfig {
        quad_points,
        ..NFunctionConfig::default()
    };
    NFunction::with_config(kernel, cfg)
}

impl NFunction {
    pub fn new(kernel: PhiKernel) -> Result<Self> {
        Self::with_config(kernel, NFunctionConfig::default())
    }

    pub fn power(p: f64) -> Result<Self> {
        Self::new(PhiKernel::Power(p))
    }

    pub fn sum_powers(ps: &[f64]) -> Result<Self> {
        Self::new(PhiKernel::SumPowers(ps.to_vec()))
    }

    pub fn with_config(kernel: PhiKernel, cfg: NFunctionConfig) -> Result<Self> {
        if let Some(ps) = kernel.builtin_exponents() {
            if let Some(p) = ps.iter().find(|p| !(**p > 1.0 && p.is_finite())) {
                return Err(Error::ExponentOutOfRange(format!(
                    "kernel exponent {p} must exceed 1"
                )));
            }
        }
        let grid = cfg.grid();
        kernel.check_sampled(&grid)?;
        let (ell, m) = estimate_exponents(&kernel, &grid, None, &cfg)?;
        Ok(Self {
            kernel,
            ell,
            m,
            cfg,
        })
    }

    /// Attaches caller-declared exponents without estimating them. Used to
    /// probe what the audits report when the declared `ell` is wrong.
    pub fn with_declared_exponents(kernel: PhiKernel, ell: f64, m: f64) -> Self {
        Self {
            kernel,
            ell,
            m,
            cfg: NFunctionConfig::default(),
        }
    }

    pub fn kernel(&self) -> &PhiKernel {
        &self.kernel
    }

    pub fn config(&self) -> &NFunctionConfig {
        &self.cfg
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Exponents `(m/(m-1), ell/(ell-1))` governing the complementary function.
    pub fn conjugate_exponents(&self) -> (f64, f64) {
        (self.m / (self.m - 1.0), self.ell / (self.ell - 1.0))
    }

    pub fn phi(&self, s: f64) -> f64 {
        self.kernel.phi(s)
    }

    pub fn flux(&self, s: f64) -> f64 {
        self.kernel.flux(s)
    }

    pub fn flux_derivative(&self, s: f64) -> f64 {
        self.kernel.flux_derivative(s, self.cfg.fd_rel_step)
    }

    /// `Phi(t)`, extended evenly to negative `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        if t == 0.0 {
            return 0.0;
        }
        if let Some(v) = self.kernel.closed_form_phi(t) {
            return v;
        }
        let scale = t * self.flux(t);
        adaptive_simpson(
            &|s| self.flux(s),
            0.0,
            t,
            self.cfg.quad_points,
            self.cfg.quad_rel_tol * scale,
        )
    }

    /// `Phi^{-1}(y)` for `y >= 0`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        solve_increasing(|s| self.eval(s), y, self.cfg.root_rel_tol)
    }

    /// Maximizer `s*` of `t s - Phi(s)`, the root of `s phi(s) = t`.
    pub fn conjugate_argmax(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        solve_increasing(|s| self.flux(s), t, self.cfg.root_rel_tol)
    }

    /// Complementary N-function `Phi~(t)`.
    pub fn conjugate(&self, t: f64) -> Result<f64> {
        let t = t.abs();
        let s = self.conjugate_argmax(t)?;
        Ok((t * s - self.eval(s)).max(0.0))
    }

    /// `Phi~^{-1}(y)`.
    pub fn conjugate_inverse(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        solve_increasing(
            |t| self.conjugate(t).unwrap_or(f64::INFINITY),
            y,
            self.cfg.root_rel_tol,
        )
    }

    /// Legendre transform of `Phi~` evaluated numerically; recovers `Phi(s)`.
    pub fn biconjugate(&self, s: f64) -> f64 {
        legendre_transform(|t| self.conjugate(t).unwrap_or(f64::INFINITY), s.abs())
    }

    /// `H(X) = int_0^X sigma (sigma phi(sigma)) Phi(sigma)^{-1-1/N} d sigma`,
    /// which equals `int_0^{Phi(X)} Phi^{-1}(s) s^{-1-1/N} ds` after the
    /// substitution `s = Phi(sigma)`.
    fn sobolev_inner_at(&self, x: f64, n_dim: usize) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        let expo = 1.0 + 1.0 / n_dim as f64;
        // integrate in tau = ln sigma
        let k = |tau: f64| {
            let s = tau.exp();
            let big = self.eval(s);
            if big <= 0.0 {
                return 0.0;
            }
            s * s * self.flux(s) * big.powf(-expo)
        };
        let top = x.ln();
        let chunk = 8.0;
        let mut lo = top - chunk;
        let tol = |total: f64| self.cfg.quad_rel_tol * total.abs().max(1e-300);
        let mut total = adaptive_simpson(&k, lo, top, 8, 1e-14 * k(top).max(1e-300));
        for _ in 0..2000 {
            let k_lo = k(lo);
            let k_up = k(lo + 1.0);
            let rate = (k_up / k_lo).ln();
            if !(k_lo > 0.0 && k_lo.is_finite() && rate.is_finite()) {
                // underflow: the previous chunk already carried the tail
                return Ok(total);
            }
            if rate <= 1e-6 {
                return Err(Error::DivergentIntegral { rate });
            }
            let tail = k_lo / rate;
            if tail <= tol(total) {
                return Ok(total + tail);
            }
            let next = lo - chunk;
            let k_next = k(next);
            if !(k_next > 0.0 && k_next.is_finite()) {
                return Ok(total + tail);
            }
            total += adaptive_simpson(&k, next, lo, 8, 1e-3 * tol(total));
            lo = next;
        }
        Err(Error::DivergentIntegral { rate: 0.0 })
    }

    /// `int_0^y Phi^{-1}(s) / s^{(N+1)/N} ds`, the inverse of `Phi_*`.
    pub fn sobolev_inner(&self, y: f64, n_dim: usize) -> Result<f64> {
        let x = self.inverse(y)?;
        self.sobolev_inner_at(x, n_dim)
    }

    /// Sobolev conjugate `Phi_*(t)`.
    pub fn sobolev_conjugate(&self, t: f64, n_dim: usize) -> Result<f64> {
        let t = t.abs();
        if t == 0.0 {
            return Ok(0.0);
        }
        // surface divergence before bisecting
        self.sobolev_inner_at(1.0, n_dim)?;
        let x = solve_increasing(
            |x| self.sobolev_inner_at(x, n_dim).unwrap_or(f64::INFINITY),
            t,
            self.cfg.root_rel_tol,
        )?;
        Ok(self.eval(x))
    }

    /// `zeta_0(t) = min(t^ell, t^m)`.
    pub fn zeta0(&self, t: f64) -> f64 {
        t.powf(self.ell).min(t.powf(self.m))
    }

    /// `zeta_1(t) = max(t^ell, t^m)`.
    pub fn zeta1(&self, t: f64) -> f64 {
        t.powf(self.ell).max(t.powf(self.m))
    }

    pub fn zeta2(&self, t: f64) -> f64 {
        let (a, b) = self.conjugate_exponents();
        t.powf(a).min(t.powf(b))
    }

    pub fn zeta3(&self, t: f64) -> f64 {
        let (a, b) = self.conjugate_exponents();
        t.powf(a).max(t.powf(b))
    }
}

/// Anything usable as the Young function of an Orlicz modular.
pub trait YoungFunction {
    fn value(&self, t: f64) -> f64;
}

impl YoungFunction for NFunction {
    fn value(&self, t: f64) -> f64 {
        self.eval(t)
    }
}

/// The complementary function `Phi~` of a borrowed N-function.
#[derive(Debug, Clone, Copy)]
pub struct Complementary<'a>(pub &'a NFunction);

impl YoungFunction for Complementary<'_> {
    fn value(&self, t: f64) -> f64 {
        self.0.conjugate(t).unwrap_or(f64::INFINITY)
    }
}

/// Worst relative margins of the four zeta bounds over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaReport {
    pub samples: usize,
    /// `zeta0(t) Phi(rho) <= Phi(rho t)`
    pub phi_lower: f64,
    /// `Phi(rho t) <= zeta1(t) Phi(rho)`
    pub phi_upper: f64,
    /// `zeta2(t) Phi~(rho) <= Phi~(rho t)`
    pub conj_lower: f64,
    /// `Phi~(rho t) <= zeta3(t) Phi~(rho)`
    pub conj_upper: f64,
}

impl ZetaReport {
    pub fn worst(&self) -> f64 {
        self.phi_lower
            .min(self.phi_upper)
            .min(self.conj_lower)
            .min(self.conj_upper)
    }
}

fn rel_margin(small: f64, large: f64) -> f64 {
    let scale = small.abs().max(large.abs());
    if scale == 0.0 {
        0.0
    } else {
        (large - small) / scale
    }
}

/// Checks the zeta growth bounds of `Phi` and `Phi~` at every `(rho, t)`.
pub fn check_zeta_bounds(nf: &NFunction, samples: &[(f64, f64)]) -> Result<ZetaReport> {
    let slack = nf.cfg.bound_slack;
    let mut report = ZetaReport {
        samples: samples.len(),
        phi_lower: f64::INFINITY,
        phi_upper: f64::INFINITY,
        conj_lower: f64::INFINITY,
        conj_upper: f64::INFINITY,
    };
    for &(rho, t) in samples {
        let base = nf.eval(rho);
        let scaled = nf.eval(rho * t);
        let cbase = nf.conjugate(rho)?;
        let cscaled = nf.conjugate(rho * t)?;
        let margins = [
            ("zeta0 Phi(rho) <= Phi(rho t)", rel_margin(nf.zeta0(t) * base, scaled)),
            ("Phi(rho t) <= zeta1 Phi(rho)", rel_margin(scaled, nf.zeta1(t) * base)),
            ("zeta2 Phi~(rho) <= Phi~(rho t)", rel_margin(nf.zeta2(t) * cbase, cscaled)),
            ("Phi~(rho t) <= zeta3 Phi~(rho)", rel_margin(cscaled, nf.zeta3(t) * cbase)),
        ];
        for (slot, (name, margin)) in [
            &mut report.phi_lower,
            &mut report.phi_upper,
            &mut report.conj_lower,
            &mut report.conj_upper,
        ]
        .into_iter()
        .zip(margins)
        {
            if margin < -slack {
                return Err(Error::BoundViolation {
                    check: name.to_string(),
                    rho,
                    t,
                    margin,
                });
            }
            *slot = slot.min(margin);
        }
    }
    Ok(report)
}

/// One row of an audit: check name, worst relative margin, verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub worst_margin: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(check: impl Into<String>, worst_margin: f64, pass: bool) -> Self {
        Self {
            check: check.into(),
            worst_margin,
            pass,
        }
    }

    /// Passes when the margin is at least `-slack`.
    pub fn from_margin(check: impl Into<String>, worst_margin: f64, slack: f64) -> Self {
        Self::new(check, worst_margin, worst_margin >= -slack)
    }
}

/// Runs every sampled N-function check. `zeta_samples` random `(rho, t)`
/// pairs are drawn log-uniformly from `[1e-3, 1e3]^2`.
pub fn audit<R: Rng>(nf: &NFunction, zeta_samples: usize, rng: &mut R) -> Vec<CheckRow> {
    let cfg = &nf.cfg;
    let slack = cfg.bound_slack;
    let grid = cfg.grid();
    let mut rows = Vec::new();

    let min_phi = grid.iter().map(|&s| nf.phi(s)).fold(f64::INFINITY, f64::min);
    rows.push(CheckRow::new("phi_positive", min_phi, min_phi > 0.0));

    let mut mono = f64::INFINITY;
    for w in grid.windows(2) {
        let (a, b) = (nf.flux(w[0]), nf.flux(w[1]));
        mono = mono.min((b - a) / b.abs().max(1e-300));
    }
    rows.push(CheckRow::new("flux_strictly_increasing", mono, mono > 0.0));

    let (mut lower, mut upper, mut prime_lo, mut prime_hi) =
        (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for &s in &grid {
        let ratio = nf.flux_derivative(s) / nf.phi(s);
        lower = lower.min(ratio - (nf.ell - 1.0));
        upper = upper.min((nf.m - 1.0) - ratio);
        let q = nf.phi(s) * s * s / nf.eval(s);
        prime_lo = prime_lo.min(rel_margin(nf.ell, q));
        prime_hi = prime_hi.min(rel_margin(q, nf.m));
    }
    rows.push(CheckRow::from_margin("phi3_lower", lower, 1e-9));
    rows.push(CheckRow::from_margin("phi3_upper", upper, 1e-9));
    rows.push(CheckRow::from_margin("phi3_prime_lower", prime_lo, slack));
    rows.push(CheckRow::from_margin("phi3_prime_upper", prime_hi, slack));

    let coarse = log_space(1e-3, 1e3, 25);
    let mut young = f64::INFINITY;
    let mut young_eq = 0.0_f64;
    let mut flux_bound = f64::INFINITY;
    let mut delta2 = f64::INFINITY;
    for &t in &coarse {
        for &s in &coarse {
            let rhs = nf.eval(t) + nf.conjugate(s).unwrap_or(f64::NAN);
            young = young.min(rel_margin(t * s, rhs));
        }
        if let (Ok(sstar), Ok(ct)) = (nf.conjugate_argmax(t), nf.conjugate(t)) {
            let lhs = t * sstar;
            let err = (lhs - nf.eval(sstar) - ct).abs() / lhs.max(1e-300);
            young_eq = young_eq.max(err);
        } else {
            young_eq = f64::INFINITY;
        }
        let cf = nf.conjugate(nf.flux(t)).unwrap_or(f64::NAN);
        flux_bound = flux_bound.min(rel_margin(cf, nf.eval(2.0 * t)));
        delta2 = delta2.min(rel_margin(nf.eval(2.0 * t), 2f64.powf(nf.m) * nf.eval(t)));
    }
    rows.push(CheckRow::from_margin("young_inequality", young, slack));
    rows.push(CheckRow::new("young_equality", -young_eq, young_eq <= 1e-10));
    rows.push(CheckRow::from_margin("conjugate_of_flux", flux_bound, slack));
    rows.push(CheckRow::from_margin("delta2_growth", delta2, slack));

    let samples: Vec<(f64, f64)> = (0..zeta_samples)
        .map(|_| {
            let rho = 10f64.powf(rng.random_range(-3.0..=3.0));
            let t = 10f64.powf(rng.random_range(-3.0..=3.0));
            (rho, t)
        })
        .collect();
    rows.push(match check_zeta_bounds(nf, &samples) {
        Ok(r) => CheckRow::from_margin("zeta_bounds", r.worst(), slack),
        Err(Error::BoundViolation { margin, .. }) => CheckRow::new("zeta_bounds", margin, false),
        Err(_) => CheckRow::new("zeta_bounds", f64::NAN, false),
    });

    let bi = biconjugation_error(nf, &log_space(1e-2, 1e2, 50));
    rows.push(CheckRow::new("biconjugation", -bi, bi <= 1e-8));
    rows
}

/// Largest relative error between `Phi` and the numerical conjugate of
/// `Phi~` over `points`.
pub fn biconjugation_error(nf: &NFunction, points: &[f64]) -> f64 {
    points
        .iter()
        .map(|&s| {
            let exact = nf.eval(s);
            (nf.biconjugate(s) - exact).abs() / exact
        })
        .fold(0.0, f64::max)
}

/// Sampled evidence that `psi` grows essentially more slowly than `Phi_*`.
#[derive(Debug, Clone)]
pub struct SlowerGrowthReport {
    /// `(lambda, t, Psi(lambda t) / Phi_*(t))` rows.
    pub ratios: Vec<(f64, f64, f64)>,
    /// Every lambda's ratio sequence decreases over the upper half of the
    /// grid and ends below half its starting value.
    pub decaying: bool,
}

/// Samples `Psi(lambda t) / Phi_*(t)` on an increasing `t` grid. This is
/// evidence, not a proof, of `Psi << Phi_*`.
pub fn check_essentially_slower(
    psi: &NFunction,
    nf: &NFunction,
    n_dim: usize,
    lambdas: &[f64],
    t_grid: &[f64],
) -> Result<SlowerGrowthReport> {
    let stars = t_grid
        .iter()
        .map(|&t| nf.sobolev_conjugate(t, n_dim))
        .collect::<Result<Vec<_>>>()?;
    let mut ratios = Vec::new();
    let mut decaying = true;
    for &lambda in lambdas {
        let seq: Vec<f64> = t_grid
            .iter()
            .zip(&stars)
            .map(|(&t, &star)| psi.eval(lambda * t) / star)
            .collect();
        let n = seq.len();
        if n >= 2 {
            let tail_start = n / 2;
            let tail_down = seq[tail_start..].windows(2).all(|w| w[1] < w[0]);
            decaying &= tail_down && seq[n - 1] < 0.5 * seq[0];
        }
        ratios.extend(t_grid.iter().zip(seq).map(|(&t, r)| (lambda, t, r)));
    }
    Ok(SlowerGrowthReport { ratios, decaying })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_three_closed_form() {
        let nf = NFunction::power(3.0).unwrap();
        assert_relative_eq!(nf.eval(2.0), 8.0 / 3.0, max_relative = 1e-15);
        assert_eq!(nf.eval(0.0), 0.0);
        assert_eq!((nf.ell(), nf.m()), (3.0, 3.0));
    }

    #[test]
    fn sum_powers_value_matches_quadrature() {
        let nf = NFunction::sum_powers(&[2.0, 4.0]).unwrap();
        assert_relative_eq!(nf.eval(2.0), 6.0, max_relative = 1e-15);
        let quad = adaptive_simpson(&|s| nf.flux(s), 0.0, 2.0, 4, 1e-14);
        assert_relative_eq!(quad, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn custom_kernel_uses_quadrature() {
        let kernel = PhiKernel::Custom(CustomKernel::new("p3", |s: f64| s));
        let nf = build_nfunction(kernel, 8).unwrap();
        assert_relative_eq!(nf.eval(2.0), 8.0 / 3.0, max_relative = 1e-11);
        assert!((nf.ell() - 3.0).abs() < 1e-6 && (nf.m() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn exponents_of_builtin_families() {
        let cfg = NFunctionConfig::default();
        let grid = cfg.grid();
        let e = estimate_exponents(&PhiKernel::SumPowers(vec![2.0, 3.0]), &grid, None, &cfg);
        assert_eq!(e.unwrap(), (2.0, 3.0));
        let e = estimate_exponents(
            &PhiKernel::SumPowers(vec![1.5, 2.0, 2.5]),
            &grid,
            None,
            &cfg,
        );
        assert_eq!(e.unwrap(), (1.5, 2.5));
    }

    #[test]
    fn exponent_bounds_are_enforced() {
        let cfg = NFunctionConfig::default();
        let grid = cfg.grid();
        let err = estimate_exponents(&PhiKernel::Power(3.0), &grid, Some(3), &cfg).unwrap_err();
        assert!(matches!(err, Error::ExponentOutOfRange(_)));
        assert!(matches!(
            NFunction::power(1.0).unwrap_err(),
            Error::ExponentOutOfRange(_)
        ));
        // flux s*phi(s) = s^0 is constant: not strictly increasing
        let flat = PhiKernel::Custom(CustomKernel::new("flat", |s: f64| 1.0 / s));
        assert!(matches!(
            NFunction::new(flat).unwrap_err(),
            Error::NonMonotoneKernel { .. }
        ));
    }

    #[test]
    fn conjugates_of_powers() {
        let p2 = NFunction::power(2.0).unwrap();
        assert_relative_eq!(p2.conjugate(3.0).unwrap(), 4.5, max_relative = 1e-11);
        assert_eq!(p2.conjugate(0.0).unwrap(), 0.0);
        let p4 = NFunction::power(4.0).unwrap();
        assert_relative_eq!(p4.conjugate(1.0).unwrap(), 0.75, max_relative = 1e-11);
    }

    #[test]
    fn sobolev_conjugate_of_quadratic_in_four_dimensions() {
        // int_0^x sqrt(2s) s^{-5/4} ds = 4 sqrt(2) x^{1/4}, so Phi_*(t) = t^4 / 1024
        let nf = NFunction::power(2.0).unwrap();
        for t in [0.5, 2.0, 10.0] {
            let v = nf.sobolev_conjugate(t, 4).unwrap();
            assert_relative_eq!(v, t.powi(4) / 1024.0, max_relative = 1e-9);
        }
        assert_eq!(nf.sobolev_conjugate(0.0, 4).unwrap(), 0.0);
        let r = nf.sobolev_conjugate(200.0, 4).unwrap() / nf.sobolev_conjugate(100.0, 4).unwrap();
        assert_relative_eq!(r, 16.0, max_relative = 1e-8);
    }

    #[test]
    fn sobolev_conjugate_diverges_when_m_reaches_n() {
        let nf = NFunction::power(4.0).unwrap();
        assert!(matches!(
            nf.sobolev_conjugate(1.0, 4).unwrap_err(),
            Error::DivergentIntegral { .. }
        ));
    }

    #[test]
    fn sobolev_growth_exponent_power_one_and_half() {
        let nf = NFunction::power(1.5).unwrap();
        let (a, b) = (1e2, 1e3);
        let slope = (nf.sobolev_conjugate(b, 3).unwrap() / nf.sobolev_conjugate(a, 3).unwrap())
            .ln()
            / (b / a).ln();
        assert!((slope - 3.0).abs() < 1e-6, "slope {slope}");
    }

    #[test]
    fn zeta_bounds_hold_with_equality_cases() {
        let nf = NFunction::power(2.0).unwrap();
        let r = check_zeta_bounds(&nf, &[(0.7, 3.0), (5.0, 0.2)]).unwrap();
        assert!(r.phi_lower.abs() < 1e-12 && r.phi_upper.abs() < 1e-12);
        let nf = NFunction::sum_powers(&[2.0, 3.0]).unwrap();
        let r = check_zeta_bounds(&nf, &[(1.0, 1.0)]).unwrap();
        assert!(r.worst().abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..100)
            .map(|_| {
                (
                    10f64.powf(rng.random_range(-3.0..3.0)),
                    10f64.powf(rng.random_range(-3.0..3.0)),
                )
            })
            .collect();
        assert!(check_zeta_bounds(&nf, &samples).is_ok());
    }

    #[test]
    fn zeta_violation_names_the_sample() {
        // declare ell = m = 3 for a quadratic: Phi(2 rho) = 4 Phi(rho) < 8 Phi(rho)
        let nf = NFunction::with_declared_exponents(PhiKernel::Power(2.0), 3.0, 3.0);
        match check_zeta_bounds(&nf, &[(1.0, 2.0)]).unwrap_err() {
            Error::BoundViolation { rho, t, .. } => assert_eq!((rho, t), (1.0, 2.0)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn audit_passes_for_builtin_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for nf in [
            NFunction::power(1.5).unwrap(),
            NFunction::sum_powers(&[2.0, 3.0]).unwrap(),
        ] {
            for row in audit(&nf, 200, &mut rng) {
                assert!(row.pass, "{:?} failed: {row:?}", nf.kernel());
            }
        }
    }

    #[test]
    fn quadratic_grows_essentially_slower_than_its_sobolev_conjugate() {
        let nf = NFunction::power(2.0).unwrap();
        let psi = NFunction::power(3.0).unwrap();
        let grid = log_space(10.0, 1e4, 8);
        let r = check_essentially_slower(&psi, &nf, 4, &[1.0, 10.0], &grid).unwrap();
        assert!(r.decaying);
        // Phi_* itself does not: the ratio is constant
        let same = NFunction::with_declared_exponents(PhiKernel::Power(4.0), 4.0, 4.0);
        let r = check_essentially_slower(&same, &nf, 4, &[1.0], &grid).unwrap();
        assert!(!r.decaying);
    }
}
