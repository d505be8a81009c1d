//! Weak comparison between a sub- and a supersolution of
//! `-div(phi(|grad u|) grad u) = f(x, u)`, and the convex functional
//! `J(w) = int Phi(|grad w^(1/ell)|)` behind it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::grid::{element_gradient, DiscreteField, Element};
use crate::nfunction::NFunction;
use crate::numerics::log_space;

/// Value of `J`, which is `+inf` outside its effective domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JValue {
    Finite(f64),
    Infinite,
}

impl JValue {
    pub fn value(&self) -> f64 {
        match self {
            JValue::Finite(v) => *v,
            JValue::Infinite => f64::INFINITY,
        }
    }
}

/// `J(w) = int Phi(|grad w^(1/ell)|)` with `w^(1/ell)` interpolated nodally.
/// Negative or non-finite nodes put `w` outside the domain.
pub fn j_functional(nf: &NFunction, w: &DiscreteField) -> JValue {
    if w.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return JValue::Infinite;
    }
    let root = w.map(|v| v.powf(1.0 / nf.ell()));
    let total: f64 = w
        .mesh()
        .elements()
        .iter()
        .map(|e| {
            let g = element_gradient(e, root.values());
            e.measure * nf.eval(g[0].hypot(g[1]))
        })
        .sum();
    if total.is_finite() {
        JValue::Finite(total)
    } else {
        JValue::Infinite
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub grid_points: usize,
    pub random_pairs: usize,
    /// Smallest relative second difference of `t -> Phi(t^(1/ell))`.
    pub min_defect: f64,
    /// Smallest relative midpoint gap over the random pairs.
    pub min_midpoint_gap: f64,
}

/// Relative tolerance of the convexity checks.
pub const CONVEXITY_TOL: f64 = 1e-9;

/// Checks convexity of `t -> Phi(t^(1/ell))` by second differences on
/// `grid` (sorted internally) and by the midpoint inequality on
/// `random_pairs` pairs drawn log-uniformly from the grid's range.
pub fn check_phi_power_convexity<R: Rng>(
    nf: &NFunction,
    grid: &[f64],
    random_pairs: usize,
    rng: &mut R,
) -> Result<ConvexityReport> {
    let mut t: Vec<f64> = grid.iter().copied().filter(|x| *x > 0.0).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    if t.len() < 3 {
        return Err(Error::Config("convexity grid needs three positive points".into()));
    }
    let inv = 1.0 / nf.ell();
    let f = |x: f64| nf.eval(x.powf(inv));
    let vals: Vec<f64> = t.iter().map(|&x| f(x)).collect();
    let mut worst = (f64::INFINITY, 0.0);
    for k in 1..t.len() - 1 {
        let left = (vals[k] - vals[k - 1]) / (t[k] - t[k - 1]);
        let right = (vals[k + 1] - vals[k]) / (t[k + 1] - t[k]);
        let scale = vals[k - 1].abs() + vals[k].abs() + vals[k + 1].abs();
        if scale == 0.0 {
            continue;
        }
        let defect = (right - left) * (t[k + 1] - t[k - 1]) / scale;
        if defect < worst.0 {
            worst = (defect, t[k]);
        }
    }
    if worst.0 < -CONVEXITY_TOL {
        return Err(Error::ConvexityViolation {
            at: worst.1,
            defect: worst.0,
        });
    }
    let (lo, hi) = (t[0].ln(), t[t.len() - 1].ln());
    let mut worst_mid = (f64::INFINITY, 0.0);
    for _ in 0..random_pairs {
        let a = rng.random_range(lo..=hi).exp();
        let b = rng.random_range(lo..=hi).exp();
        let avg = 0.5 * (f(a) + f(b));
        if avg == 0.0 {
            continue;
        }
        let gap = (avg - f(0.5 * (a + b))) / avg;
        if gap < worst_mid.0 {
            worst_mid = (gap, 0.5 * (a + b));
        }
    }
    if worst_mid.0 < -CONVEXITY_TOL {
        return Err(Error::ConvexityViolation {
            at: worst_mid.1,
            defect: worst_mid.0,
        });
    }
    Ok(ConvexityReport {
        grid_points: t.len(),
        random_pairs,
        min_defect: worst.0,
        min_midpoint_gap: worst_mid.0,
    })
}

/// A claimed subsolution `u1` and supersolution `u2` of
/// `-div(phi(|grad u|) grad u) = f(x, u)` on the same mesh.
#[derive(Debug, Clone)]
pub struct ComparisonInstance {
    pub nf: NFunction,
    /// Reaction in the variables `x`, `y`, `d` and `t` (the unknown).
    pub f: Expr,
    pub u1: DiscreteField,
    pub u2: DiscreteField,
    /// Tolerance on the signs of the weak residuals.
    pub residual_tol: f64,
}

impl ComparisonInstance {
    pub fn new(nf: NFunction, f: Expr, u1: DiscreteField, u2: DiscreteField) -> Self {
        Self {
            nf,
            f,
            u1,
            u2,
            residual_tol: 1e-8,
        }
    }
}

/// Nodes with `u < ORDER_TOL` are ordered.
pub const ORDER_TOL: f64 = 1e-10;
/// Quadrature points where either field is below this are left out of the
/// pairing.
pub const POSITIVITY_FLOOR: f64 = 1e-13;
/// Points of the `t` grid in the monotonicity check.
pub const MONOTONE_GRID: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// `max u1/u2` over interior nodes.
    pub ratio_bound: f64,
    /// Largest entry of the subsolution residual (expected `<= tol`).
    pub sub_residual_max: f64,
    /// Smallest entry of the supersolution residual (expected `>= -tol`).
    pub super_residual_min: f64,
    /// `min(u2 - u1)` over nodes, and where.
    pub ordering_margin: f64,
    pub worst_node: usize,
    /// Discrete Diaz-Saa pairing.
    pub pairing: f64,
    /// Quadrature points dropped by the positivity floor.
    pub excluded_points: usize,
}

impl Verdict {
    pub fn pairing_nonnegative(&self) -> bool {
        self.pairing >= -1e-8
    }
}

fn flux(nf: &NFunction, g: [f64; 2]) -> [f64; 2] {
    let r = g[0].hypot(g[1]);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let phi = nf.phi(r);
    [phi * g[0], phi * g[1]]
}

fn env_at(field: &DiscreteField, e: &Element, bary: &[f64; 3], t: f64) -> Env {
    let p = field.mesh().point(e, bary);
    Env {
        x: p[0],
        y: p[1],
        d: field.mesh().geometry().distance(p),
        t,
    }
}

/// `R[j] = int phi(|grad u|) grad u . grad psi_j - int f(x, u) psi_j` over
/// interior nodes `j`.
pub fn weak_residual(nf: &NFunction, f: &Expr, u: &DiscreteField) -> Vec<f64> {
    let mesh = u.mesh();
    let mut slot = vec![None; mesh.n_nodes()];
    for (k, n) in mesh.interior_nodes().enumerate() {
        slot[n] = Some(k);
    }
    let mut r = vec![0.0; mesh.interior_nodes().count()];
    let rule = mesh.quad_rule();
    for e in mesh.elements() {
        let fl = flux(nf, element_gradient(e, u.values()));
        for q in rule {
            let val = u.at(e, &q.bary);
            let src = f.eval(&env_at(u, e, &q.bary, val));
            for (a, &n) in e.local().iter().enumerate() {
                if let Some(k) = slot[n] {
                    r[k] -= q.weight * e.measure * src * q.bary[a];
                }
            }
        }
        for (a, &n) in e.local().iter().enumerate() {
            if let Some(k) = slot[n] {
                r[k] += e.measure * (fl[0] * e.grads[a][0] + fl[1] * e.grads[a][1]);
            }
        }
    }
    r
}

fn failure(hypothesis: &str, detail: String) -> Error {
    Error::HypothesisFailure {
        hypothesis: hypothesis.into(),
        detail,
    }
}

/// Checks that `t -> f(x, t) / t^(ell-1)` is strictly decreasing on a log
/// grid over `[1e-6, 10 max u2]` at every quadrature point.
pub fn check_monotone_quotient(nf: &NFunction, f: &Expr, u2: &DiscreteField) -> Result<()> {
    let top = (10.0 * u2.max_abs()).max(1e-5);
    let grid = log_space(1e-6, top, MONOTONE_GRID);
    let mesh = u2.mesh();
    let k = nf.ell() - 1.0;
    for e in mesh.elements() {
        for q in mesh.quad_rule() {
            let mut env = env_at(u2, e, &q.bary, 0.0);
            let mut prev = f64::INFINITY;
            for &t in &grid {
                env.t = t;
                let ratio = f.eval(&env) / t.powf(k);
                if !(ratio < prev) {
                    return Err(failure(
                        "f(x,t)/t^(ell-1) strictly decreasing",
                        format!("x = ({}, {}), t = {t:e}, ratio {ratio:e} after {prev:e}", env.x, env.y),
                    ));
                }
                prev = ratio;
            }
        }
    }
    Ok(())
}

/// Discrete Diaz-Saa pairing
/// `int phi(|grad u1|) grad u1 . grad psi1 - phi(|grad u2|) grad u2 . grad psi2`
/// with `psi_i = (u1^ell - u2^ell)+ / u_i^(ell-1)`, evaluated at the
/// quadrature points with exact gradients of the test functions. Returns
/// the pairing and the number of points under the positivity floor.
pub fn diaz_saa_pairing(nf: &NFunction, u1: &DiscreteField, u2: &DiscreteField) -> (f64, usize) {
    let ell = nf.ell();
    let mesh = u1.mesh();
    let mut total = 0.0;
    let mut excluded = 0;
    for e in mesh.elements() {
        let (g1, g2) = (element_gradient(e, u1.values()), element_gradient(e, u2.values()));
        let (f1, f2) = (flux(nf, g1), flux(nf, g2));
        for q in mesh.quad_rule() {
            let (a, b) = (u1.at(e, &q.bary), u2.at(e, &q.bary));
            if a < POSITIVITY_FLOOR || b < POSITIVITY_FLOOR {
                excluded += 1;
                continue;
            }
            let gap = a.powf(ell) - b.powf(ell);
            if gap <= 0.0 {
                continue;
            }
            // grad(u1^ell - u2^ell) = ell (a^(ell-1) g1 - b^(ell-1) g2)
            let dg = [
                ell * (a.powf(ell - 1.0) * g1[0] - b.powf(ell - 1.0) * g2[0]),
                ell * (a.powf(ell - 1.0) * g1[1] - b.powf(ell - 1.0) * g2[1]),
            ];
            let grad_psi = |c: f64, gc: [f64; 2]| {
                let inv = c.powf(1.0 - ell);
                let k = (ell - 1.0) * gap * c.powf(-ell);
                [dg[0] * inv - k * gc[0], dg[1] * inv - k * gc[1]]
            };
            let p1 = grad_psi(a, g1);
            let p2 = grad_psi(b, g2);
            let integrand = f1[0] * p1[0] + f1[1] * p1[1] - f2[0] * p2[0] - f2[1] * p2[1];
            total += q.weight * e.measure * integrand;
        }
    }
    (total, excluded)
}

/// Runs the comparison hypotheses in order, then the nodal ordering and the
/// pairing.
pub fn comparison_test(inst: &ComparisonInstance) -> Result<Verdict> {
    let (u1, u2) = (&inst.u1, &inst.u2);
    let mesh = u1.mesh();
    if u2.values().len() != mesh.n_nodes() {
        return Err(Error::Config("u1 and u2 live on different meshes".into()));
    }
    for n in (0..mesh.n_nodes()).filter(|&n| mesh.is_boundary(n)) {
        let excess = u1.values()[n] - u2.values()[n];
        if excess > ORDER_TOL {
            return Err(failure("u1 <= u2 on the boundary", format!("node {n}, excess {excess:e}")));
        }
    }
    let mut ratio_bound: f64 = 0.0;
    for n in mesh.interior_nodes() {
        let (a, b) = (u1.values()[n], u2.values()[n]);
        let ratio = if a <= 0.0 {
            0.0
        } else if b > 0.0 {
            a / b
        } else {
            f64::INFINITY
        };
        if !ratio.is_finite() {
            return Err(failure("u1/u2 bounded", format!("node {n}: u1 = {a:e}, u2 = {b:e}")));
        }
        ratio_bound = ratio_bound.max(ratio);
    }
    let tol = inst.residual_tol;
    let r1 = weak_residual(&inst.nf, &inst.f, u1);
    let interior: Vec<usize> = mesh.interior_nodes().collect();
    let (k1, sub_max) = r1
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |m, (k, v)| if v > m.1 { (k, v) } else { m });
    if sub_max > tol {
        return Err(failure(
            "u1 is a weak subsolution",
            format!("node {}: residual {sub_max:e}", interior[k1]),
        ));
    }
    let r2 = weak_residual(&inst.nf, &inst.f, u2);
    let (k2, super_min) = r2
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |m, (k, v)| if v < m.1 { (k, v) } else { m });
    if super_min < -tol {
        return Err(failure(
            "u2 is a weak supersolution",
            format!("node {}: residual {super_min:e}", interior[k2]),
        ));
    }
    check_monotone_quotient(&inst.nf, &inst.f, u2)?;

    let (worst_node, ordering_margin) = (0..mesh.n_nodes())
        .map(|n| (n, u2.values()[n] - u1.values()[n]))
        .fold((0, f64::INFINITY), |m, x| if x.1 < m.1 { x } else { m });
    if -ordering_margin > ORDER_TOL {
        return Err(Error::OrderingViolation {
            node: worst_node,
            excess: -ordering_margin,
        });
    }
    let (pairing, excluded_points) = diaz_saa_pairing(&inst.nf, u1, u2);
    Ok(Verdict {
        ratio_bound,
        sub_residual_max: sub_max,
        super_residual_min: super_min,
        ordering_margin,
        worst_node,
        pairing,
        excluded_points,
    })
}

/// Short outcome label of a comparison run.
pub fn verdict_label(outcome: &Result<Verdict>) -> &'static str {
    match outcome {
        Ok(_) => "pass",
        Err(Error::HypothesisFailure { .. }) => "hypothesis-failure",
        Err(Error::OrderingViolation { .. }) => "ordering-violation",
        Err(_) => "error",
    }
}

pub const VERDICT_CSV_HEADER: [&str; 7] = [
    "instance",
    "verdict",
    "failed_hypothesis",
    "ratio_bound",
    "ordering_margin",
    "pairing",
    "excluded_points",
];

/// CSV record matching [`VERDICT_CSV_HEADER`].
pub fn verdict_record(id: &str, outcome: &Result<Verdict>) -> Vec<String> {
    let mut row = vec![id.to_string(), verdict_label(outcome).to_string()];
    match outcome {
        Ok(v) => row.extend([
            String::new(),
            format!("{:e}", v.ratio_bound),
            format!("{:e}", v.ordering_margin),
            format!("{:e}", v.pairing),
            v.excluded_points.to_string(),
        ]),
        Err(e) => {
            let (what, margin) = match e {
                Error::HypothesisFailure { hypothesis, .. } => (hypothesis.clone(), String::new()),
                Error::OrderingViolation { excess, .. } => (String::new(), format!("{:e}", -excess)),
                other => (other.to_string(), String::new()),
            };
            row.extend([what, String::new(), margin, String::new(), String::new()]);
        }
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mesh;
    use crate::nfunction::{CustomKernel, PhiKernel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn j_closed_forms() {
        let nf = NFunction::power(2.0).unwrap();
        let m = Mesh::interval(0.0, 1.0, 400).unwrap();
        let w = DiscreteField::from_fn(&m, |p| (p[0] * (1.0 - p[0])).powi(2));
        assert!((j_functional(&nf, &w).value() - 1.0 / 6.0).abs() < 1e-5);
        assert_eq!(j_functional(&nf, &DiscreteField::zeros(&m)), JValue::Finite(0.0));
        let sq = DiscreteField::from_fn(&m, |p| p[0] * p[0]);
        assert!((j_functional(&nf, &sq).value() - 0.5).abs() < 1e-12);
        let neg = DiscreteField::from_fn(&m, |p| p[0] - 0.5);
        assert_eq!(j_functional(&nf, &neg), JValue::Infinite);
    }

    #[test]
    fn power_map_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nf = NFunction::power(3.0).unwrap();
        let rep = check_phi_power_convexity(&nf, &log_space(1e-3, 1e3, 500), 200, &mut rng).unwrap();
        assert!(rep.min_defect.abs() < 1e-9);
    }

    #[test]
    fn sum_powers_has_no_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nf = NFunction::sum_powers(&[2.0, 3.0]).unwrap();
        let rep = check_phi_power_convexity(&nf, &log_space(1e-6, 1e6, 10_000), 1000, &mut rng).unwrap();
        assert_eq!(rep.grid_points, 10_000);
    }

    #[test]
    fn misdeclared_kernel_is_caught() {
        // (s phi)' / phi dips to 1/2, so ell = 1.5, declared as 2
        let k = PhiKernel::Custom(CustomKernel::new("soft", |s: f64| (1.0 + s * s).powf(-0.25)));
        let nf = NFunction::with_declared_exponents(k, 2.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = check_phi_power_convexity(&nf, &log_space(1e-2, 1e3, 400), 100, &mut rng).unwrap_err();
        assert!(matches!(err, Error::ConvexityViolation { .. }));
    }

    fn inst(f: &str, u1: impl Fn(f64) -> f64, u2: impl Fn(f64) -> f64) -> ComparisonInstance {
        let m = Mesh::interval(0.0, 1.0, 100).unwrap();
        ComparisonInstance::new(
            NFunction::power(2.0).unwrap(),
            Expr::parse(f).unwrap(),
            DiscreteField::from_fn(&m, |p| u1(p[0])),
            DiscreteField::from_fn(&m, |p| u2(p[0])),
        )
    }

    #[test]
    fn solution_below_supersolution() {
        let v = comparison_test(&inst("1", |x| x * (1.0 - x) / 2.0, |x| x * (1.0 - x))).unwrap();
        assert!(v.ordering_margin >= 0.0);
        assert!((v.ratio_bound - 0.5).abs() < 1e-12);
        assert!(v.pairing_nonnegative());
    }

    #[test]
    fn identical_fields_pair_to_zero() {
        let v = comparison_test(&inst("1", |x| x * (1.0 - x) / 2.0, |x| x * (1.0 - x) / 2.0)).unwrap();
        assert_eq!(v.pairing, 0.0);
        assert_eq!(v.ordering_margin, 0.0);
    }

    #[test]
    fn linear_reaction_fails_strict_decrease() {
        let err = comparison_test(&inst("t", |x| 0.0 * x, |x| x * (1.0 - x))).unwrap_err();
        match err {
            Error::HypothesisFailure { hypothesis, .. } => assert!(hypothesis.contains("strictly decreasing")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn swapped_fields_fail_a_residual_sign() {
        let err = comparison_test(&inst("1", |x| x * (1.0 - x), |x| x * (1.0 - x) / 2.0)).unwrap_err();
        assert!(matches!(err, Error::HypothesisFailure { .. }));
    }

    fn positive_field(m: &std::sync::Arc<Mesh>, vals: &[f64]) -> DiscreteField {
        let values = (0..m.n_nodes()).map(|k| vals[k % vals.len()]).collect();
        DiscreteField::new(m.clone(), values).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pairing_nonnegative_for_positive_fields(
            p in prop_oneof![Just(1.5f64), Just(2.0), Just(3.0)],
            a in proptest::collection::vec(0.01f64..2.0, 30),
            b in proptest::collection::vec(0.01f64..2.0, 30),
            two_d in any::<bool>(),
        ) {
            let nf = NFunction::power(p).unwrap();
            let m = if two_d {
                Mesh::rectangle(0.0, 1.0, 0.0, 1.0, 4, 5).unwrap()
            } else {
                Mesh::interval(0.0, 1.0, 29).unwrap()
            };
            let (u1, u2) = (positive_field(&m, &a), positive_field(&m, &b));
            let (pairing, excluded) = diaz_saa_pairing(&nf, &u1, &u2);
            prop_assert_eq!(excluded, 0);
            prop_assert!(pairing >= -1e-8, "{}", pairing);
        }

        #[test]
        fn j_is_convex_in_the_field(
            p in prop_oneof![Just(1.5f64), Just(2.0), Just(3.0)],
            a in proptest::collection::vec(0.0f64..2.0, 30),
            b in proptest::collection::vec(0.0f64..2.0, 30),
            two_d in any::<bool>(),
        ) {
            let nf = NFunction::power(p).unwrap();
            let m = if two_d {
                Mesh::rectangle(0.0, 1.0, 0.0, 1.0, 4, 5).unwrap()
            } else {
                Mesh::interval(0.0, 1.0, 29).unwrap()
            };
            let (w1, w2) = (positive_field(&m, &a), positive_field(&m, &b));
            let (j1, j2) = (j_functional(&nf, &w1).value(), j_functional(&nf, &w2).value());
            for tau in [0.25, 0.5, 0.75] {
                let mix = w1.zip_with(&w2, |x, y| tau * x + (1.0 - tau) * y);
                let jm = j_functional(&nf, &mix).value();
                let rhs = tau * j1 + (1.0 - tau) * j2;
                prop_assert!(jm <= rhs + 1e-9 * (1.0 + rhs.abs()), "{} > {}", jm, rhs);
            }
        }
    }
}
