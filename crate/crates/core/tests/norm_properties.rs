//! Properties of the discrete Orlicz modular and Luxemburg norm.

use std::sync::Arc;

use proptest::prelude::*;

use philap::grid::{check_poincare, inner_product, luxemburg_norm, modular, DiscreteField, Mesh};
use philap::nfunction::{Complementary, NFunction};

fn field_on(mesh: &Arc<Mesh>, raw: &[f64], zero_trace: bool) -> DiscreteField {
    let vals = (0..mesh.n_nodes())
        .map(|n| if zero_trace && mesh.is_boundary(n) { 0.0 } else { raw[n % raw.len()] })
        .collect();
    DiscreteField::new(mesh.clone(), vals).unwrap()
}

fn kernel(k: usize) -> NFunction {
    match k {
        0 => NFunction::power(1.5).unwrap(),
        1 => NFunction::power(3.0).unwrap(),
        _ => NFunction::sum_powers(&[2.0, 3.0]).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modular_sits_between_zeta_bounds(
        raw in prop::collection::vec(-1.0f64..1.0, 8..30),
        amp in -2.0f64..2.0,
        k in 0usize..3,
    ) {
        let nf = kernel(k);
        let mesh = Mesh::interval(0.0, 1.0, 24).unwrap();
        let u = field_on(&mesh, &raw, false).scaled(10f64.powf(amp));
        prop_assume!(u.max_abs() > 1e-8);
        let norm = luxemburg_norm(&nf, &u, false).unwrap();
        let rho = modular(&nf, &u);
        let tol = 1e-8 * rho.max(1e-300);
        prop_assert!(nf.zeta0(norm) <= rho + tol, "{} > {}", nf.zeta0(norm), rho);
        prop_assert!(rho <= nf.zeta1(norm) + tol, "{} > {}", rho, nf.zeta1(norm));
    }

    #[test]
    fn holder_with_complementary_norm(
        a in prop::collection::vec(-1.0f64..1.0, 5..20),
        b in prop::collection::vec(-1.0f64..1.0, 5..20),
        k in 0usize..3,
    ) {
        let nf = kernel(k);
        let mesh = Mesh::interval(0.0, 1.0, 16).unwrap();
        let u = field_on(&mesh, &a, false);
        let v = field_on(&mesh, &b, false);
        let lhs = inner_product(&u, &v).abs();
        let rhs = 2.0 * luxemburg_norm(&nf, &u, false).unwrap()
            * luxemburg_norm(&Complementary(&nf), &v, false).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-8), "{} > {}", lhs, rhs);
    }
}

#[test]
fn poincare_on_random_rectangle_fields() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let nf = NFunction::sum_powers(&[2.0, 3.0]).unwrap();
    let mesh = Mesh::rectangle(0.0, 1.5, 0.0, 1.0, 9, 6).unwrap();
    for _ in 0..50 {
        let amp = 10f64.powf(rng.random_range(-2.0..2.0));
        let raw: Vec<f64> = (0..mesh.n_nodes()).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        let u = field_on(&mesh, &raw, true);
        let report = check_poincare(&nf, &u).unwrap();
        assert!(report.slack >= 0.0);
    }
}

#[test]
fn gradient_norm_converges_under_refinement() {
    // || pi cos(pi x) ||_Phi for Phi = t^3 / 3 is (4 pi^2 / 9)^(1/3)
    let nf = NFunction::power(3.0).unwrap();
    let exact = (4.0 * std::f64::consts::PI.powi(2) / 9.0).cbrt();
    let errs: Vec<f64> = [10, 20, 40, 80]
        .iter()
        .map(|&n| {
            let mesh = Mesh::interval(0.0, 1.0, n).unwrap();
            let u = DiscreteField::from_fn(&mesh, |p| (std::f64::consts::PI * p[0]).sin());
            (luxemburg_norm(&nf, &u, true).unwrap() - exact).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.0, "errors {errs:?}");
    }
}

#[test]
fn norm_of_constant_in_closed_form() {
    // int_0^1 (c / lambda)^2 / 2 = 1  gives  lambda = c / sqrt(2)
    let nf = NFunction::power(2.0).unwrap();
    let mesh = Mesh::interval(0.0, 1.0, 7).unwrap();
    let u = DiscreteField::from_fn(&mesh, |_| 3.0);
    let n = luxemburg_norm(&nf, &u, false).unwrap();
    assert!((n - 3.0 / 2f64.sqrt()).abs() < 1e-9);
}
