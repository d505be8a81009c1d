//! Galerkin discretization of the regularized system, damped Newton,
//! a-priori radius, barrier subproblems, eps-continuation and the
//! distance-function lower bound.

mod apriori;
mod assembly;
mod barrier;
mod continuation;
mod newton;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::DiscreteField;
use crate::system::Structure;

pub use apriori::{compute_r0, r0_from_constants, AprioriBound, AprioriConstants};
pub use assembly::{assemble_jacobian, assemble_residual, Dofs};
pub use barrier::{minimize_g, solve_barrier, solve_barrier_with, BarrierCase};
pub use continuation::{
    barrier_case, check_schedule, continuation_solve, default_delta, geometric_schedule, ContinuationOptions, ContinuationReport,
    DeltaPolicy, StageRecord,
};
pub use newton::{linear_warm_start, newton_solve, solve_scalar, NewtonOptions, ScalarSource};

/// Regularization of one stage: `eps > 0` in the singular denominators,
/// `delta >= 0` in the power terms, truncation level `n` of the
/// coefficients and gradient smoothing `eta` inside the kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationParams {
    pub eps: f64,
    pub delta: f64,
    pub n: f64,
    pub eta: f64,
}

impl RegularizationParams {
    /// `n = round(1 / eps)` (at least 1) and no smoothing.
    pub fn new(eps: f64, delta: f64) -> Self {
        Self {
            eps,
            delta,
            n: (1.0 / eps).round().max(1.0),
            eta: 0.0,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_truncation(mut self, n: f64) -> Self {
        self.n = n;
        self
    }

    pub fn check(&self, structure: Structure) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.delta >= 0.0) || !(self.eta >= 0.0) || !(self.n > 0.0) {
            return Err(Error::Config(format!("invalid regularization {self:?}")));
        }
        if self.delta > 0.0
            && !matches!(structure, Structure::NonCooperative | Structure::Mixed)
        {
            return Err(Error::Config(format!(
                "delta > 0 is reserved for non-cooperative and mixed structures, got {}",
                structure.label()
            )));
        }
        Ok(())
    }
}

/// Default kernel smoothing `1e-8 / diam`.
pub fn default_eta(diameter: f64) -> f64 {
    1e-8 / diameter
}

#[derive(Debug, Clone)]
pub struct RegularizedSolution {
    pub u: DiscreteField,
    pub v: DiscreteField,
    pub residual_norm: f64,
    pub newton_iters: usize,
    /// Whether the frozen-coefficient fallback was needed.
    pub used_picard: bool,
    pub params: RegularizationParams,
    /// Luxemburg norms of the gradients of `u` and `v`.
    pub norm_pair: (f64, f64),
}

/// `min` over interior nodes of `u / d`. The certificate `u >= C d` holds
/// with the returned `C` and passes when it is positive.
pub fn fit_lower_bound(u: &DiscreteField, d: &DiscreteField) -> f64 {
    let mesh = u.mesh();
    mesh.interior_nodes()
        .filter(|&i| d.values()[i] > 0.0)
        .map(|i| u.values()[i] / d.values()[i])
        .fold(f64::INFINITY, f64::min)
}

/// Newton and continuation knobs of a run.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub newton: NewtonOptions,
    pub continuation: ContinuationOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            continuation: ContinuationOptions::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{distance_function, Mesh};

    #[test]
    fn lower_bound_examples() {
        let m = Mesh::interval(0.0, 1.0, 100).unwrap();
        let d = distance_function(&m);
        let u = DiscreteField::from_fn(&m, |p| p[0] * (1.0 - p[0]));
        assert!((fit_lower_bound(&u, &d) - 0.5).abs() < 1e-12);
        assert_eq!(fit_lower_bound(&d, &d), 1.0);
        let mut z = u.clone();
        z.values_mut()[40] = 0.0;
        assert_eq!(fit_lower_bound(&z, &d), 0.0);
    }

    #[test]
    fn params_policy() {
        let p = RegularizationParams::new(0.01, 0.0);
        assert_eq!(p.n, 100.0);
        assert!(p.check(Structure::Cooperative).is_ok());
        let q = RegularizationParams::new(0.1, 0.1);
        assert!(q.check(Structure::Cooperative).is_err());
        assert!(q.check(Structure::Mixed).is_ok());
        assert!(RegularizationParams::new(0.0, 0.0).check(Structure::General).is_err());
    }
}
