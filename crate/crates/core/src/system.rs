//! Declaration and validation of a singular system instance.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::grid::{distance_function, read_field_csv, DiscreteField, Mesh};
use crate::nfunction::{check_essentially_slower, Complementary, NFunction, YoungFunction};
use crate::numerics::log_space;

/// Threshold used for every strict `> 0` check.
pub const STRICT_TOL: f64 = 1e-14;

/// Modular values above this are flagged as likely infinite.
pub const MODULAR_FLAG: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// `beta_i = 0`: each right-hand side is nondecreasing in the other unknown.
    Cooperative,
    /// `sigma_i = 0`.
    NonCooperative,
    /// `alpha_i = gamma_i = 0` with `min(a_i, b_i) > 0`.
    Mixed,
    General,
}

impl Structure {
    pub fn label(&self) -> &'static str {
        match self {
            Structure::Cooperative => "cooperative",
            Structure::NonCooperative => "non-cooperative",
            Structure::Mixed => "mixed",
            Structure::General => "general",
        }
    }
}

/// Exponents of both equations; index 0 is the first equation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exponents {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub sigma: [f64; 2],
}

impl Exponents {
    /// Growth exponent `gamma_i + sigma_i + 1` of the power term.
    pub fn power_degree(&self, which: usize) -> f64 {
        self.gamma[which] + self.sigma[which] + 1.0
    }
}

/// A coefficient given as an expression in `x`, `y`, `d` or as a nodal CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Expr(Expr),
    Csv(std::path::PathBuf),
}

impl Coefficient {
    pub fn constant(c: f64) -> Self {
        Coefficient::Expr(Expr::constant(c))
    }

    pub fn sample(&self, mesh: &Arc<Mesh>) -> Result<DiscreteField> {
        match self {
            Coefficient::Expr(e) => {
                let geo = *mesh.geometry();
                Ok(DiscreteField::from_fn(mesh, |p| {
                    e.eval(&Env {
                        x: p[0],
                        y: p[1],
                        d: geo.distance(p),
                        t: 0.0,
                    })
                }))
            }
            Coefficient::Csv(path) => read_field_csv(mesh, Path::new(path)),
        }
    }
}

/// Value and partial derivatives of one regularized right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reaction {
    pub value: f64,
    pub d_own: f64,
    pub d_other: f64,
}

/// Smallest base used when differentiating `(s + delta)^e` with `e < 1`.
const POWER_BASE_FLOOR: f64 = 1e-12;

/// Regularized right-hand side of one equation with `own`/`other` the
/// equation's unknown and the other unknown:
/// `a / ((|own|+eps)^p (|other|+eps)^q) + b (own+ + delta)^r (other+ + delta)^s`.
#[allow(clippy::too_many_arguments)]
pub fn reaction(
    a: f64,
    b: f64,
    p: f64,
    q: f64,
    r: f64,
    s: f64,
    own: f64,
    other: f64,
    eps: f64,
    delta: f64,
) -> Reaction {
    let (mut value, mut d_own, mut d_other) = (0.0, 0.0, 0.0);
    if a != 0.0 {
        let (bo, bt) = (own.abs() + eps, other.abs() + eps);
        let sing = a * bo.powf(-p) * bt.powf(-q);
        value += sing;
        d_own -= p * sing / bo * own.signum_or_zero();
        d_other -= q * sing / bt * other.signum_or_zero();
    }
    if b != 0.0 {
        let (bo, bt) = (own.max(0.0) + delta, other.max(0.0) + delta);
        let (po, pt) = (bo.powf(r), bt.powf(s));
        value += b * po * pt;
        if own > 0.0 && r != 0.0 {
            d_own += b * r * bo.max(POWER_BASE_FLOOR).powf(r - 1.0) * pt;
        }
        if other > 0.0 && s != 0.0 {
            d_other += b * s * bt.max(POWER_BASE_FLOOR).powf(s - 1.0) * po;
        }
    }
    Reaction {
        value,
        d_own,
        d_other,
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub nf: NFunction,
    pub mesh: Arc<Mesh>,
    pub exps: Exponents,
    pub a: [DiscreteField; 2],
    pub b: [DiscreteField; 2],
    /// Integrability exponents of `b_i`; infinite for bounded coefficients.
    pub q: [f64; 2],
    pub psi: Option<NFunction>,
    pub structure: Structure,
}

impl SystemSpec {
    pub fn new(
        nf: NFunction,
        mesh: Arc<Mesh>,
        exps: Exponents,
        a: [&Coefficient; 2],
        b: [&Coefficient; 2],
        structure: Structure,
    ) -> Result<Self> {
        Ok(Self {
            a: [a[0].sample(&mesh)?, a[1].sample(&mesh)?],
            b: [b[0].sample(&mesh)?, b[1].sample(&mesh)?],
            nf,
            mesh,
            exps,
            q: [f64::INFINITY; 2],
            psi: None,
            structure,
        })
    }

    /// Spec with constant coefficients.
    pub fn with_constants(
        nf: NFunction,
        mesh: Arc<Mesh>,
        exps: Exponents,
        a: [f64; 2],
        b: [f64; 2],
        structure: Structure,
    ) -> Self {
        let c = |v: f64| DiscreteField::from_fn(&mesh, |_| v);
        Self {
            a: [c(a[0]), c(a[1])],
            b: [c(b[0]), c(b[1])],
            nf,
            mesh: mesh.clone(),
            exps,
            q: [f64::INFINITY; 2],
            psi: None,
            structure,
        }
    }

    /// Exponents `(p, q, r, s)` of equation `which` in the order used by
    /// [`reaction`]: singular exponents of own/other, power exponents of
    /// own/other.
    pub fn equation_exponents(&self, which: usize) -> (f64, f64, f64, f64) {
        let e = &self.exps;
        (e.alpha[which], e.beta[which], e.gamma[which], e.sigma[which])
    }

    /// Regularized right-hand side of equation `which` (1 or 2) at `node`.
    pub fn rhs_eval(&self, u: f64, v: f64, eps: f64, delta: f64, node: usize, which: usize) -> f64 {
        let i = which - 1;
        let (p, q, r, s) = self.equation_exponents(i);
        let (own, other) = if i == 0 { (u, v) } else { (v, u) };
        reaction(
            self.a[i].values()[node],
            self.b[i].values()[node],
            p,
            q,
            r,
            s,
            own,
            other,
            eps,
            delta,
        )
        .value
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// Who is blocked by a failed finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    /// Needed by the regularized solver.
    Solver,
    /// Needed by the existence theorem and the continuation toward it.
    Theorem,
    /// Sampled diagnostic that cannot decide the hypothesis.
    Flag,
}

impl Level {
    pub fn label(&self) -> &'static str {
        match self {
            Level::Solver => "solver",
            Level::Theorem => "theorem",
            Level::Flag => "flag",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub name: String,
    pub level: Level,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Hypotheses that could not be checked at all.
    pub unverified: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, name: impl Into<String>, level: Level, passed: bool, detail: impl Into<String>) {
        self.findings.push(Finding {
            name: name.into(),
            level,
            passed,
            detail: detail.into(),
        });
    }

    pub fn violations(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| !f.passed)
    }

    pub fn has_violation(&self, name: &str) -> bool {
        self.violations().any(|f| f.name == name)
    }

    pub fn solver_ok(&self) -> bool {
        self.violations().all(|f| f.level != Level::Solver)
    }

    pub fn theorem_ok(&self) -> bool {
        self.violations().all(|f| f.level == Level::Flag)
    }

    /// Turns solver-level violations into an error.
    pub fn require_solver(&self) -> Result<()> {
        self.require(|f| f.level == Level::Solver)
    }

    /// Turns solver- or theorem-level violations into an error.
    pub fn require_theorem(&self) -> Result<()> {
        self.require(|f| f.level != Level::Flag)
    }

    fn require(&self, blocking: impl Fn(&Finding) -> bool) -> Result<()> {
        let bad: Vec<String> = self
            .violations()
            .filter(|f| blocking(f))
            .map(|f| format!("{} ({})", f.name, f.detail))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::HypothesisFailure {
                hypothesis: "system validation".into(),
                detail: bad.join("; "),
            })
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "level", "pass", "detail"])?;
        for f in &self.findings {
            w.write_record([
                f.name.as_str(),
                f.level.label(),
                if f.passed { "true" } else { "false" },
                f.detail.as_str(),
            ])?;
        }
        for u in &self.unverified {
            w.write_record([u.as_str(), "flag", "unverified", ""])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in &self.findings {
            let mark = if x.passed { "ok  " } else { "FAIL" };
            writeln!(f, "[{mark}] {:<8} {}: {}", x.level.label(), x.name, x.detail)?;
        }
        for u in &self.unverified {
            writeln!(f, "[----] unverified hypothesis: {u}")?;
        }
        Ok(())
    }
}

fn validate(spec: &SystemSpec) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let ell = spec.nf.ell();
    let e = &spec.exps;
    let interior: Vec<usize> = spec.mesh.interior_nodes().collect();

    let all_exps = [e.alpha, e.beta, e.gamma, e.sigma].concat();
    let finite_nonneg = all_exps.iter().all(|x| x.is_finite() && *x >= 0.0);
    rep.push(
        "exponents nonnegative",
        Level::Solver,
        finite_nonneg,
        format!("{e:?}"),
    );

    for i in 0..2 {
        let eq = i + 1;
        let (a, b) = (spec.a[i].values(), spec.b[i].values());
        let bad_a = a.iter().position(|v| !(v.is_finite() && *v >= 0.0));
        let bad_b = b.iter().position(|v| !(v.is_finite() && *v >= 0.0));
        rep.push(
            format!("a_{eq} >= 0"),
            Level::Solver,
            bad_a.is_none(),
            bad_a.map_or("all nodes".into(), |n| format!("node {n}: {}", a[n])),
        );
        rep.push(
            format!("b_{eq} >= 0"),
            Level::Solver,
            bad_b.is_none(),
            bad_b.map_or("all nodes".into(), |n| format!("node {n}: {}", b[n])),
        );
        let weak = interior.iter().find(|&&n| !(a[n] + b[n] > STRICT_TOL));
        rep.push(
            format!("a_{eq} + b_{eq} > 0"),
            Level::Theorem,
            weak.is_none(),
            weak.map_or("all interior nodes".into(), |&n| format!("node {n}")),
        );

        let sum = e.gamma[i] + e.sigma[i];
        rep.push(
            format!("gamma_{eq} + sigma_{eq} < ell - 1"),
            Level::Solver,
            sum < ell - 1.0,
            format!("{sum} vs {}", ell - 1.0),
        );
        rep.push(
            format!("gamma_{eq} + sigma_{eq} > 0"),
            Level::Theorem,
            sum > STRICT_TOL,
            format!("{sum}"),
        );

        let b_nonzero = b.iter().any(|v| *v != 0.0);
        if b_nonzero {
            let need = ell / (ell - sum - 1.0);
            let ok = need > 0.0 && spec.q[i] >= need;
            rep.push(
                format!("q_{eq} >= ell / (ell - sigma_{eq} - gamma_{eq} - 1)"),
                Level::Theorem,
                ok,
                format!("q = {} vs {need}", spec.q[i]),
            );
        }
        let a_nonzero = interior.iter().any(|&n| a[n] > STRICT_TOL);
        rep.push(format!("a_{eq} != 0"), Level::Theorem, a_nonzero, "");
        rep.push(format!("b_{eq} != 0"), Level::Theorem, b_nonzero, "");

        match spec.structure {
            Structure::Cooperative => rep.push(
                format!("cooperative: beta_{eq} = 0"),
                Level::Theorem,
                e.beta[i] == 0.0,
                format!("beta = {}", e.beta[i]),
            ),
            Structure::NonCooperative => rep.push(
                format!("non-cooperative: sigma_{eq} = 0"),
                Level::Theorem,
                e.sigma[i] == 0.0,
                format!("sigma = {}", e.sigma[i]),
            ),
            Structure::Mixed => {
                rep.push(
                    format!("mixed: alpha_{eq} = gamma_{eq} = 0"),
                    Level::Theorem,
                    e.alpha[i] == 0.0 && e.gamma[i] == 0.0,
                    format!("alpha = {}, gamma = {}", e.alpha[i], e.gamma[i]),
                );
                let bad = interior.iter().find(|&&n| !(a[n].min(b[n]) > STRICT_TOL));
                rep.push(
                    format!("min{{a_{eq}, b_{eq}}} > 0"),
                    Level::Theorem,
                    bad.is_none(),
                    bad.map_or("all interior nodes".into(), |&n| format!("fails at node {n}")),
                );
            }
            Structure::General => {}
        }
    }

    match &spec.psi {
        None => {
            rep.unverified
                .push("a_i d^(-alpha_i-beta_i) and a_i in the complementary Orlicz class of Psi".into());
            rep.unverified.push("Psi grows essentially more slowly than Phi_*".into());
        }
        Some(psi) => check_psi(spec, psi, &mut rep),
    }
    rep
}

fn check_psi(spec: &SystemSpec, psi: &NFunction, rep: &mut ValidationReport) {
    let mesh = &spec.mesh;
    let geo = *mesh.geometry();
    let comp = Complementary(psi);
    let rule = mesh.quad_rule();
    for i in 0..2 {
        let eq = i + 1;
        let w = spec.exps.alpha[i] + spec.exps.beta[i];
        let (mut weighted, mut plain) = (0.0, 0.0);
        for el in mesh.elements() {
            for q in rule {
                let a = spec.a[i].at(el, &q.bary);
                let d = geo.distance(mesh.point(el, &q.bary));
                weighted += q.weight * el.measure * comp.value((a * d.powf(-w)).abs());
                plain += q.weight * el.measure * comp.value(a.abs());
            }
        }
        for (name, val) in [
            (format!("a_{eq} d^(-alpha_{eq}-beta_{eq}) in complementary class of Psi"), weighted),
            (format!("a_{eq} in complementary class of Psi"), plain),
        ] {
            rep.push(
                name,
                Level::Flag,
                val.is_finite() && val <= MODULAR_FLAG,
                format!("modular = {val:e}"),
            );
        }
    }
    let t_grid = log_space(1e2, 1e8, 25);
    match check_essentially_slower(psi, &spec.nf, mesh.dim(), &[1.0, 10.0], &t_grid) {
        Ok(r) => rep.push(
            "Psi << Phi_*",
            Level::Flag,
            r.decaying,
            "sampled ratio Psi(lambda t)/Phi_*(t)",
        ),
        Err(err) => rep.push("Psi << Phi_*", Level::Flag, true, format!("not applicable: {err}")),
    }
}

/// Distance field of the spec's mesh.
pub fn distance(spec: &SystemSpec) -> DiscreteField {
    distance_function(&spec.mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh() -> Arc<Mesh> {
        Mesh::interval(0.0, 1.0, 20).unwrap()
    }

    fn spec(p: f64, exps: Exponents, a: [f64; 2], b: [f64; 2], s: Structure) -> SystemSpec {
        SystemSpec::with_constants(NFunction::power(p).unwrap(), mesh(), exps, a, b, s)
    }

    #[test]
    fn theorem_strictness_versus_solver_check() {
        let exps = Exponents {
            alpha: [0.5, 0.5],
            ..Default::default()
        };
        let r = spec(2.0, exps, [1.0; 2], [1.0; 2], Structure::General).validate();
        assert!(r.solver_ok());
        assert!(!r.theorem_ok());
        assert!(r.has_violation("gamma_1 + sigma_1 > 0"));
        assert!(!r.has_violation("gamma_1 + sigma_1 < ell - 1"));
    }

    #[test]
    fn mixed_needs_both_coefficients() {
        let exps = Exponents {
            beta: [1.0, 1.0],
            sigma: [0.5, 0.5],
            ..Default::default()
        };
        let r = spec(2.0, exps, [1.0, 1.0], [0.0, 1.0], Structure::Mixed).validate();
        assert!(r.has_violation("min{a_1, b_1} > 0"));
        assert!(!r.has_violation("min{a_2, b_2} > 0"));
    }

    #[test]
    fn integrability_exponent_threshold() {
        let exps = Exponents {
            gamma: [0.5, 0.5],
            sigma: [0.5, 0.5],
            ..Default::default()
        };
        let mut s = spec(3.0, exps, [1.0; 2], [1.0; 2], Structure::Cooperative);
        s.q = [3.0, 3.0];
        assert!(s.validate().theorem_ok());
        s.q = [2.0, 2.0];
        let r = s.validate();
        assert!(r.has_violation("q_1 >= ell / (ell - sigma_1 - gamma_1 - 1)"));
    }

    #[test]
    fn psi_absent_is_recorded_as_unverified() {
        let r = spec(2.0, Exponents::default(), [1.0; 2], [0.0; 2], Structure::General).validate();
        assert_eq!(r.unverified.len(), 2);
        assert!(r.to_string().contains("unverified hypothesis"));
    }

    #[test]
    fn psi_weighted_modular_flags_strong_singularity() {
        let exps = Exponents {
            alpha: [1.0, 1.0],
            beta: [1.0, 1.0],
            gamma: [0.25, 0.25],
            ..Default::default()
        };
        let mut s = spec(2.0, exps, [1.0; 2], [1.0; 2], Structure::General);
        s.psi = Some(NFunction::power(2.0).unwrap());
        let r = s.validate();
        let f = r
            .findings
            .iter()
            .find(|f| f.name.starts_with("a_1 d^"))
            .unwrap();
        // d^-2 near the boundary: large but finite at interior quadrature points
        assert!(f.detail.contains("modular"));
        let plain = r
            .findings
            .iter()
            .find(|f| f.name == "a_1 in complementary class of Psi")
            .unwrap();
        assert!(plain.passed);
    }

    #[test]
    fn validation_is_pure() {
        let exps = Exponents {
            alpha: [0.3, 0.7],
            gamma: [0.2, 0.1],
            ..Default::default()
        };
        let s = spec(2.5, exps, [1.0, 2.0], [0.5, 0.0], Structure::Cooperative);
        assert_eq!(s.validate(), s.validate());
    }

    #[test]
    fn rhs_examples() {
        let e1 = Exponents {
            alpha: [1.0, 0.0],
            ..Default::default()
        };
        let s = spec(2.0, e1, [1.0, 0.0], [0.0, 0.0], Structure::General);
        assert_eq!(s.rhs_eval(0.0, 0.0, 0.5, 0.0, 3, 1), 2.0);

        let e2 = Exponents {
            gamma: [0.5, 0.0],
            sigma: [0.5, 0.0],
            ..Default::default()
        };
        let s = spec(2.0, e2, [0.0, 0.0], [2.0, 0.0], Structure::General);
        assert!((s.rhs_eval(4.0, 9.0, 0.1, 0.0, 3, 1) - 12.0).abs() < 1e-14);

        let e3 = Exponents {
            alpha: [1.0, 1.0],
            beta: [1.0, 1.0],
            gamma: [0.25, 0.25],
            sigma: [0.25, 0.25],
        };
        let s = spec(2.0, e3, [1.0; 2], [1.0; 2], Structure::General);
        assert_eq!(s.rhs_eval(0.0, 0.0, 1.0, 1.0, 3, 1), 2.0);
    }

    #[test]
    fn second_equation_swaps_index_pattern() {
        let e = Exponents {
            alpha: [0.0, 2.0],
            beta: [0.0, 1.0],
            gamma: [0.0, 0.5],
            sigma: [0.0, 0.25],
        };
        let s = spec(3.0, e, [1.0; 2], [1.0; 2], Structure::General);
        let (u, v, eps, delta): (f64, f64, f64, f64) = (0.7, 1.9, 0.1, 0.2);
        let expect = 1.0 / ((u + eps).powf(1.0) * (v + eps).powf(2.0))
            + (u + delta).powf(0.25) * (v + delta).powf(0.5);
        assert!((s.rhs_eval(u, v, eps, delta, 4, 2) - expect).abs() < 1e-14);
    }

    fn fd_check(p: f64, q: f64, r: f64, s: f64, own: f64, other: f64) {
        let (eps, delta) = (0.3, 0.1);
        let f = |o: f64, t: f64| reaction(1.3, 0.7, p, q, r, s, o, t, eps, delta).value;
        let an = reaction(1.3, 0.7, p, q, r, s, own, other, eps, delta);
        let h = 1e-6;
        let d1 = (f(own + h, other) - f(own - h, other)) / (2.0 * h);
        let d2 = (f(own, other + h) - f(own, other - h)) / (2.0 * h);
        assert!((an.d_own - d1).abs() < 1e-6 * (1.0 + d1.abs()));
        assert!((an.d_other - d2).abs() < 1e-6 * (1.0 + d2.abs()));
    }

    #[test]
    fn reaction_derivatives_match_differences() {
        fd_check(1.0, 0.5, 0.3, 0.6, 0.4, 1.2);
        fd_check(0.0, 2.0, 0.0, 0.5, 2.0, 0.1);
    }

    proptest! {
        #[test]
        fn singular_term_nonincreasing_in_eps(
            u in 0.0f64..5.0, v in 0.0f64..5.0,
            al in 0.0f64..2.0, be in 0.0f64..2.0,
            e1 in 1e-4f64..1.0, e2 in 1e-4f64..1.0,
        ) {
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let f = |eps| reaction(1.0, 0.0, al, be, 0.0, 0.0, u, v, eps, 0.0).value;
            prop_assert!(f(hi) <= f(lo) * (1.0 + 1e-14));
        }

        #[test]
        fn cooperative_rhs_nondecreasing_in_other(
            u in 0.0f64..5.0, v1 in 0.0f64..5.0, dv in 0.0f64..5.0,
            al in 0.0f64..2.0, ga in 0.0f64..0.5, si in 0.0f64..0.5,
        ) {
            let e = Exponents { alpha: [al, al], gamma: [ga, ga], sigma: [si, si], ..Default::default() };
            let s = spec(2.5, e, [1.0; 2], [1.0; 2], Structure::Cooperative);
            let f = |v| s.rhs_eval(u, v, 0.1, 0.0, 5, 1);
            prop_assert!(f(v1 + dv) >= f(v1) * (1.0 - 1e-14));
        }
    }
}
