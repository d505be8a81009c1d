//! P1 Galerkin residual and Jacobian of `-div(phi(|grad w|) grad w) = F`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{element_gradient, DiscreteField, Mesh};
use crate::linalg::BandMatrix;
use crate::nfunction::NFunction;
use crate::system::{reaction, Reaction, SystemSpec};

use super::RegularizationParams;

/// Unknowns of a problem with `n_fields` fields: one per field and interior
/// node, interleaved by node.
#[derive(Debug, Clone)]
pub struct Dofs {
    n_fields: usize,
    node_slot: Vec<Option<usize>>,
    interior: Vec<usize>,
    band: usize,
}

impl Dofs {
    pub fn new(mesh: &Mesh, n_fields: usize) -> Self {
        let mut node_slot = vec![None; mesh.n_nodes()];
        let interior: Vec<usize> = mesh.interior_nodes().collect();
        for (k, &n) in interior.iter().enumerate() {
            node_slot[n] = Some(k);
        }
        let mut spread = 0;
        for e in mesh.elements() {
            for &a in e.local() {
                for &b in e.local() {
                    if let (Some(i), Some(j)) = (node_slot[a], node_slot[b]) {
                        spread = spread.max(i.abs_diff(j));
                    }
                }
            }
        }
        Self {
            n_fields,
            node_slot,
            interior,
            band: spread * n_fields + n_fields - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.interior.len() * self.n_fields
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    /// Half bandwidth of the Jacobian.
    pub fn band(&self) -> usize {
        self.band
    }

    pub fn index(&self, node: usize, field: usize) -> Option<usize> {
        self.node_slot[node].map(|k| k * self.n_fields + field)
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Interior values of `fields` as one unknown vector.
    pub fn gather(&self, fields: &[&DiscreteField]) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for (k, &n) in self.interior.iter().enumerate() {
            for (f, field) in fields.iter().enumerate() {
                x[k * self.n_fields + f] = field.values()[n];
            }
        }
        x
    }

    /// Nodal values per field, zero on the boundary.
    pub fn scatter(&self, x: &[f64], n_nodes: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; n_nodes]; self.n_fields];
        for (k, &n) in self.interior.iter().enumerate() {
            for (f, vals) in out.iter_mut().enumerate() {
                vals[n] = x[k * self.n_fields + f];
            }
        }
        out
    }

    pub fn fields(&self, mesh: &Arc<Mesh>, x: &[f64]) -> Vec<DiscreteField> {
        self.scatter(x, mesh.n_nodes())
            .into_iter()
            .map(|v| DiscreteField::new(mesh.clone(), v).expect("sized by mesh"))
            .collect()
    }
}

/// Right-hand side evaluated at quadrature point `q` of element `e` for
/// `field`, given the values of all fields there. `d_own` and `d_other`
/// refer to field `field` and the other field.
pub type SourceFn<'a> = dyn Fn(usize, usize, usize, [f64; 2]) -> Reaction + 'a;

/// Smallest gradient magnitude fed to the kernel when `eta = 0`.
const GRADIENT_FLOOR: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum JacobianKind {
    Newton,
    /// Kernel frozen at the current gradient and no reaction derivative.
    Picard,
}

pub(crate) struct Operator<'a> {
    pub mesh: &'a Arc<Mesh>,
    pub nf: &'a NFunction,
    pub eta: f64,
    pub dofs: Dofs,
    pub source: &'a SourceFn<'a>,
}

impl Operator<'_> {
    fn nodal(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.dofs.scatter(x, self.mesh.n_nodes())
    }

    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let nodal = self.nodal(x);
        let nfld = self.dofs.n_fields;
        let mut r = vec![0.0; self.dofs.len()];
        let rule = self.mesh.quad_rule();
        for (ei, e) in self.mesh.elements().iter().enumerate() {
            let loc = e.local();
            for f in 0..nfld {
                let g = element_gradient(e, &nodal[f]);
                let rr = (g[0] * g[0] + g[1] * g[1] + self.eta * self.eta).sqrt();
                let coef = self.nf.phi(rr.max(GRADIENT_FLOOR)) * e.measure;
                for (a, &na) in loc.iter().enumerate() {
                    if let Some(i) = self.dofs.index(na, f) {
                        r[i] += coef * (g[0] * e.grads[a][0] + g[1] * e.grads[a][1]);
                    }
                }
            }
            for (qi, q) in rule.iter().enumerate() {
                let mut vals = [0.0; 2];
                for (f, v) in vals.iter_mut().enumerate().take(nfld) {
                    *v = loc.iter().enumerate().map(|(k, &n)| q.bary[k] * nodal[f][n]).sum();
                }
                let w = q.weight * e.measure;
                for f in 0..nfld {
                    let src = (self.source)(f, ei, qi, vals).value;
                    for (a, &na) in loc.iter().enumerate() {
                        if let Some(i) = self.dofs.index(na, f) {
                            r[i] -= w * src * q.bary[a];
                        }
                    }
                }
            }
        }
        if let Some(index) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual { index });
        }
        Ok(r)
    }

    pub fn jacobian(&self, x: &[f64], kind: JacobianKind) -> BandMatrix {
        let nodal = self.nodal(x);
        let nfld = self.dofs.n_fields;
        let band = self.dofs.band;
        let mut jac = BandMatrix::zeros(self.dofs.len(), band, band);
        let rule = self.mesh.quad_rule();
        for (ei, e) in self.mesh.elements().iter().enumerate() {
            let loc = e.local();
            for f in 0..nfld {
                let g = element_gradient(e, &nodal[f]);
                let r2 = g[0] * g[0] + g[1] * g[1] + self.eta * self.eta;
                let rr = r2.sqrt().max(GRADIENT_FLOOR);
                let phi = self.nf.phi(rr);
                // d/dg [phi(r) g] = phi I + (flux'(r) - phi) / r^2 g g^T
                let flat = g[0] == 0.0 && g[1] == 0.0;
                let c = match kind {
                    JacobianKind::Newton if !flat => (self.nf.flux_derivative(rr) - phi) / (rr * rr),
                    _ => 0.0,
                };
                let m = [
                    [phi + c * g[0] * g[0], c * g[0] * g[1]],
                    [c * g[1] * g[0], phi + c * g[1] * g[1]],
                ];
                for (a, &na) in loc.iter().enumerate() {
                    let Some(i) = self.dofs.index(na, f) else { continue };
                    let ga = e.grads[a];
                    for (b, &nb) in loc.iter().enumerate() {
                        let Some(j) = self.dofs.index(nb, f) else { continue };
                        let gb = e.grads[b];
                        let val = ga[0] * (m[0][0] * gb[0] + m[0][1] * gb[1])
                            + ga[1] * (m[1][0] * gb[0] + m[1][1] * gb[1]);
                        jac.add(i, j, e.measure * val);
                    }
                }
            }
            if kind == JacobianKind::Picard {
                continue;
            }
            for (qi, q) in rule.iter().enumerate() {
                let mut vals = [0.0; 2];
                for (f, v) in vals.iter_mut().enumerate().take(nfld) {
                    *v = loc.iter().enumerate().map(|(k, &n)| q.bary[k] * nodal[f][n]).sum();
                }
                let w = q.weight * e.measure;
                for f in 0..nfld {
                    let src = (self.source)(f, ei, qi, vals);
                    let other = 1 - f;
                    for (a, &na) in loc.iter().enumerate() {
                        let Some(i) = self.dofs.index(na, f) else { continue };
                        for (b, &nb) in loc.iter().enumerate() {
                            let pp = w * q.bary[a] * q.bary[b];
                            if let Some(j) = self.dofs.index(nb, f) {
                                jac.add(i, j, -pp * src.d_own);
                            }
                            if nfld == 2 {
                                if let Some(j) = self.dofs.index(nb, other) {
                                    jac.add(i, j, -pp * src.d_other);
                                }
                            }
                        }
                    }
                }
            }
        }
        jac
    }
}

/// Truncated coefficients `min(a_i, n)`, `min(b_i, n)` at every quadrature
/// point, indexed `[field][element * n_quad + q]`.
pub(crate) struct SystemSource {
    a: [Vec<f64>; 2],
    b: [Vec<f64>; 2],
    exps: [(f64, f64, f64, f64); 2],
    eps: f64,
    delta: f64,
    nq: usize,
}

pub(crate) fn quad_values(field: &DiscreteField, cap: f64) -> Vec<f64> {
    let mesh = field.mesh();
    let rule = mesh.quad_rule();
    let capped = field.map(|v| v.min(cap));
    mesh.elements()
        .iter()
        .flat_map(|e| rule.iter().map(|q| capped.at(e, &q.bary)).collect::<Vec<_>>())
        .collect()
}

impl SystemSource {
    pub fn new(spec: &SystemSpec, params: &RegularizationParams) -> Self {
        Self {
            a: [quad_values(&spec.a[0], params.n), quad_values(&spec.a[1], params.n)],
            b: [quad_values(&spec.b[0], params.n), quad_values(&spec.b[1], params.n)],
            exps: [spec.equation_exponents(0), spec.equation_exponents(1)],
            eps: params.eps,
            delta: params.delta,
            nq: spec.mesh.quad_rule().len(),
        }
    }

    pub fn eval(&self, f: usize, e: usize, q: usize, vals: [f64; 2]) -> Reaction {
        let k = e * self.nq + q;
        let (p, qq, r, s) = self.exps[f];
        reaction(
            self.a[f][k],
            self.b[f][k],
            p,
            qq,
            r,
            s,
            vals[f],
            vals[1 - f],
            self.eps,
            self.delta,
        )
    }
}

pub(crate) fn check_state(spec: &SystemSpec, u: &DiscreteField, v: &DiscreteField) -> Result<()> {
    for f in [u, v] {
        if f.values().len() != spec.mesh.n_nodes() {
            return Err(Error::Config("field does not live on the spec's mesh".into()));
        }
        if !f.is_zero_trace() {
            return Err(Error::Config("fields must vanish on the boundary".into()));
        }
    }
    Ok(())
}

/// Galerkin residuals `(R1, R2)` at every interior node, in the order of
/// [`crate::grid::Mesh::interior_nodes`].
pub fn assemble_residual(
    spec: &SystemSpec,
    params: &RegularizationParams,
    u: &DiscreteField,
    v: &DiscreteField,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(spec, u, v)?;
    let src = SystemSource::new(spec, params);
    let source = |f: usize, e: usize, q: usize, vals: [f64; 2]| src.eval(f, e, q, vals);
    let op = Operator {
        mesh: &spec.mesh,
        nf: &spec.nf,
        eta: params.eta,
        dofs: Dofs::new(&spec.mesh, 2),
        source: &source,
    };
    let r = op.residual(&op.dofs.gather(&[u, v]))?;
    let r1 = r.iter().step_by(2).copied().collect();
    let r2 = r.iter().skip(1).step_by(2).copied().collect();
    Ok((r1, r2))
}

/// Newton Jacobian of the interleaved residual at `(u, v)`.
pub fn assemble_jacobian(
    spec: &SystemSpec,
    params: &RegularizationParams,
    u: &DiscreteField,
    v: &DiscreteField,
) -> Result<(Dofs, BandMatrix)> {
    check_state(spec, u, v)?;
    let src = SystemSource::new(spec, params);
    let source = |f: usize, e: usize, q: usize, vals: [f64; 2]| src.eval(f, e, q, vals);
    let op = Operator {
        mesh: &spec.mesh,
        nf: &spec.nf,
        eta: params.eta,
        dofs: Dofs::new(&spec.mesh, 2),
        source: &source,
    };
    let jac = op.jacobian(&op.dofs.gather(&[u, v]), JacobianKind::Newton);
    Ok((op.dofs, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Exponents, Structure};

    fn spec(exps: Exponents, a: [f64; 2], b: [f64; 2]) -> SystemSpec {
        SystemSpec::with_constants(
            NFunction::power(2.0).unwrap(),
            Mesh::interval(0.0, 1.0, 10).unwrap(),
            exps,
            a,
            b,
            Structure::General,
        )
    }

    #[test]
    fn constant_load_at_zero_state() {
        let s = spec(Exponents::default(), [0.0; 2], [1.0; 2]);
        let z = DiscreteField::zeros(&s.mesh);
        let (r1, r2) = assemble_residual(&s, &RegularizationParams::new(1.0, 0.0), &z, &z).unwrap();
        for r in r1.iter().chain(&r2) {
            assert!((r + 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_term_with_unit_eps_is_unit_load() {
        let e = Exponents {
            alpha: [1.0, 0.0],
            ..Default::default()
        };
        let s = spec(e, [1.0, 0.0], [0.0; 2]);
        let z = DiscreteField::zeros(&s.mesh);
        let (r1, r2) = assemble_residual(&s, &RegularizationParams::new(1.0, 0.0), &z, &z).unwrap();
        assert!(r1.iter().all(|r| (r + 0.1).abs() < 1e-15));
        assert!(r2.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn band_covers_rectangle_couplings() {
        let m = Mesh::rectangle(0.0, 1.0, 0.0, 1.0, 5, 4).unwrap();
        let d = Dofs::new(&m, 2);
        assert_eq!(d.len(), 2 * 4 * 3);
        // the split diagonal joins slots 4 + 1 apart
        assert_eq!(d.band(), 5 * 2 + 1);
    }

    #[test]
    fn gather_scatter_round_trip() {
        let m = Mesh::interval(0.0, 1.0, 6).unwrap();
        let u = DiscreteField::zero_trace_from_fn(&m, |p| p[0]);
        let v = DiscreteField::zero_trace_from_fn(&m, |p| 2.0 * p[0]);
        let d = Dofs::new(&m, 2);
        let back = d.fields(&m, &d.gather(&[&u, &v]));
        assert_eq!(back[0].values(), u.values());
        assert_eq!(back[1].values(), v.values());
    }
}
