//! Continuation in `eps` toward the singular system.

use std::io::Write;

use log::info;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{distance_function, element_gradient, luxemburg_norm, DiscreteField};
use crate::system::{Structure, SystemSpec};

use super::apriori::compute_r0;
use super::barrier::{solve_barrier_with, BarrierCase};
use super::newton::{linear_warm_start, newton_solve};
use super::{default_eta, fit_lower_bound, RegularizationParams, RegularizedSolution, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaPolicy {
    /// Zero for cooperative systems, `eps` for the other structures.
    #[default]
    Auto,
    Zero,
    Eps,
}

impl DeltaPolicy {
    pub fn delta(&self, structure: Structure, eps: f64) -> f64 {
        match self {
            DeltaPolicy::Auto => default_delta(structure, eps),
            DeltaPolicy::Zero => 0.0,
            DeltaPolicy::Eps => eps,
        }
    }
}

pub fn default_delta(structure: Structure, eps: f64) -> f64 {
    match structure {
        Structure::NonCooperative | Structure::Mixed => eps,
        Structure::Cooperative | Structure::General => 0.0,
    }
}

/// `count` terms `start, start * ratio, ...`.
pub fn geometric_schedule(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * ratio.powi(k as i32)).collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    pub schedule: Vec<f64>,
    pub delta_policy: DeltaPolicy,
    /// Stop once both Luxemburg increments sum below this.
    pub increment_tol: f64,
    /// Kernel smoothing; `None` means `1e-8 / diam`.
    pub eta: Option<f64>,
    /// Solve the structure's barrier problems and compare every stage.
    pub barriers: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            schedule: geometric_schedule(0.5, 0.5, 8),
            delta_policy: DeltaPolicy::Auto,
            increment_tol: 1e-7,
            eta: None,
            barriers: true,
        }
    }
}

/// Diagnostics of one continuation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub eps: f64,
    pub delta: f64,
    pub n: f64,
    pub norm_u: f64,
    pub norm_v: f64,
    pub residual: f64,
    pub newton_iters: usize,
    pub used_picard: bool,
    /// `||u_k - u_{k-1}||_Phi + ||v_k - v_{k-1}||_Phi`
    pub increment: Option<f64>,
    /// Same with gradient norms.
    pub grad_increment: Option<f64>,
    /// `<-Delta_Phi u_{k-1}, u_{k-1} - u_k> + <-Delta_Phi v_{k-1}, v_{k-1} - v_k>`
    pub pairing: Option<f64>,
    /// `min(u/d, v/d)` over interior nodes.
    pub c_lower: f64,
    pub r0: f64,
    pub eps_independent: bool,
    /// Worst nodal `u_k + shift - w_1` and `v_k + shift - w_2`, where the
    /// shift is `eps` for the singular and power barriers and 0 for the
    /// mixed barrier.
    pub barrier_margin: Option<f64>,
}

impl StageRecord {
    pub fn within_r0(&self) -> bool {
        self.norm_u + self.norm_v <= self.r0
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub structure: Structure,
    pub stages: Vec<StageRecord>,
    pub solution: RegularizedSolution,
    pub barrier_case: Option<BarrierCase>,
    pub barriers: Option<[DiscreteField; 2]>,
    pub distance: DiscreteField,
    pub stopped_early: bool,
}

pub const STAGE_CSV_HEADER: [&str; 16] = [
    "stage",
    "eps",
    "delta",
    "norm_u",
    "norm_v",
    "residual",
    "increment",
    "c_lower",
    "r0",
    "newton_iters",
    "picard",
    "grad_increment",
    "pairing",
    "barrier_margin",
    "within_r0",
    "eps_independent",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl ContinuationReport {
    /// Increments after the first stage never increase.
    pub fn increments_monotone(&self) -> bool {
        let inc: Vec<f64> = self.stages.iter().filter_map(|s| s.increment).collect();
        inc.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn all_within_r0(&self) -> bool {
        self.stages.iter().all(StageRecord::within_r0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(STAGE_CSV_HEADER)?;
        for s in &self.stages {
            w.write_record([
                s.stage.to_string(),
                format!("{:e}", s.eps),
                format!("{:e}", s.delta),
                format!("{:e}", s.norm_u),
                format!("{:e}", s.norm_v),
                format!("{:e}", s.residual),
                opt(s.increment),
                format!("{:e}", s.c_lower),
                format!("{:e}", s.r0),
                s.newton_iters.to_string(),
                s.used_picard.to_string(),
                opt(s.grad_increment),
                opt(s.pairing),
                opt(s.barrier_margin),
                s.within_r0().to_string(),
                s.eps_independent.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Barrier problem of each structure.
pub fn barrier_case(structure: Structure) -> Option<BarrierCase> {
    match structure {
        Structure::Cooperative => Some(BarrierCase::SingularScalar),
        Structure::NonCooperative => Some(BarrierCase::PowerScalar),
        Structure::Mixed => Some(BarrierCase::MixedScalar),
        Structure::General => None,
    }
}

/// `<-Delta_Phi w, w - z>` with the smoothed kernel.
fn flux_pairing(spec: &SystemSpec, eta: f64, w: &DiscreteField, z: &DiscreteField) -> f64 {
    spec.mesh
        .elements()
        .iter()
        .map(|e| {
            let g = element_gradient(e, w.values());
            let h = element_gradient(e, z.values());
            let r = (g[0] * g[0] + g[1] * g[1] + eta * eta).sqrt();
            let phi = if r > 0.0 { spec.nf.phi(r) } else { 0.0 };
            e.measure * phi * (g[0] * (g[0] - h[0]) + g[1] * (g[1] - h[1]))
        })
        .sum()
}

pub fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::Config("continuation schedule is empty".into()));
    }
    if schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Config("schedule entries must be positive".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("schedule must be strictly decreasing".into()));
    }
    Ok(())
}

/// Solves the regularized systems along `opts.continuation.schedule`, each
/// stage warm-started from the previous one.
pub fn continuation_solve(spec: &SystemSpec, opts: &SolverOptions) -> Result<ContinuationReport> {
    let copts = &opts.continuation;
    check_schedule(&copts.schedule)?;
    let case = barrier_case(spec.structure).ok_or_else(|| {
        Error::Config("continuation needs a cooperative, non-cooperative or mixed structure".into())
    })?;
    let eta = copts
        .eta
        .unwrap_or_else(|| default_eta(spec.mesh.geometry().diameter()));
    let d = distance_function(&spec.mesh);
    let barriers = if copts.barriers {
        let w1 = solve_barrier_with(spec, case, 1, eta, &opts.newton).map_err(|e| stage_err(0, e))?;
        let w2 = solve_barrier_with(spec, case, 2, eta, &opts.newton).map_err(|e| stage_err(0, e))?;
        Some([w1, w2])
    } else {
        None
    };
    let shift_scale = if case == BarrierCase::MixedScalar { 0.0 } else { 1.0 };

    let mut stages: Vec<StageRecord> = Vec::new();
    let mut prev: Option<RegularizedSolution> = None;
    let mut stopped_early = false;
    for (k, &eps) in copts.schedule.iter().enumerate() {
        let stage = k + 1;
        let delta = copts.delta_policy.delta(spec.structure, eps);
        let params = RegularizationParams::new(eps, delta).with_eta(eta);
        let wrap = |e| stage_err(stage, e);
        let (u0, v0) = match (&prev, &barriers) {
            (Some(p), _) => (p.u.clone(), p.v.clone()),
            (None, Some([w1, w2])) => (w1.clone(), w2.clone()),
            (None, None) => linear_warm_start(spec, &params).map_err(wrap)?,
        };
        let sol = newton_solve(spec, &params, (&u0, &v0), &opts.newton).map_err(wrap)?;
        let bound = compute_r0(spec, &params).map_err(wrap)?;
        let (increment, grad_increment, pairing) = match &prev {
            Some(p) => {
                let (du, dv) = (sol.u.sub(&p.u), sol.v.sub(&p.v));
                let inc = luxemburg_norm(&spec.nf, &du, false)? + luxemburg_norm(&spec.nf, &dv, false)?;
                let ginc = luxemburg_norm(&spec.nf, &du, true)? + luxemburg_norm(&spec.nf, &dv, true)?;
                let pair = flux_pairing(spec, eta, &p.u, &sol.u) + flux_pairing(spec, eta, &p.v, &sol.v);
                (Some(inc), Some(ginc), Some(pair))
            }
            None => (None, None, None),
        };
        let barrier_margin = barriers.as_ref().map(|[w1, w2]| {
            let shift = shift_scale * eps;
            let worst = |f: &DiscreteField, w: &DiscreteField| {
                f.values()
                    .iter()
                    .zip(w.values())
                    .map(|(x, y)| x + shift - y)
                    .fold(f64::INFINITY, f64::min)
            };
            worst(&sol.u, w1).min(worst(&sol.v, w2))
        });
        let record = StageRecord {
            stage,
            eps,
            delta,
            n: params.n,
            norm_u: sol.norm_pair.0,
            norm_v: sol.norm_pair.1,
            residual: sol.residual_norm,
            newton_iters: sol.newton_iters,
            used_picard: sol.used_picard,
            increment,
            grad_increment,
            pairing,
            c_lower: fit_lower_bound(&sol.u, &d).min(fit_lower_bound(&sol.v, &d)),
            r0: bound.r0,
            eps_independent: bound.eps_independent,
            barrier_margin,
        };
        info!(
            "stage {stage}: eps {eps:e}, norms ({:.4e}, {:.4e}), increment {}, C {:.4e}",
            record.norm_u,
            record.norm_v,
            opt(increment),
            record.c_lower
        );
        let converged = increment.is_some_and(|i| i < copts.increment_tol);
        stages.push(record);
        prev = Some(sol);
        if converged {
            stopped_early = stage < copts.schedule.len();
            break;
        }
    }
    Ok(ContinuationReport {
        structure: spec.structure,
        stages,
        solution: prev.expect("schedule is nonempty"),
        barrier_case: Some(case),
        barriers,
        distance: d,
        stopped_early,
    })
}

fn stage_err(stage: usize, source: Error) -> Error {
    Error::Stage {
        stage,
        source: Box::new(source),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mesh;
    use crate::nfunction::NFunction;
    use crate::system::Exponents;

    #[test]
    fn schedule_validation() {
        assert!(check_schedule(&[0.5, 0.25]).is_ok());
        assert!(check_schedule(&[0.5, 0.5]).is_err());
        assert!(check_schedule(&[]).is_err());
        assert!(check_schedule(&[0.5, -0.1]).is_err());
        assert_eq!(geometric_schedule(0.5, 0.5, 3), vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn delta_policy_follows_structure() {
        assert_eq!(default_delta(Structure::Cooperative, 0.1), 0.0);
        assert_eq!(default_delta(Structure::NonCooperative, 0.1), 0.1);
        assert_eq!(default_delta(Structure::Mixed, 0.1), 0.1);
    }

    #[test]
    fn general_structure_is_rejected() {
        let s = SystemSpec::with_constants(
            NFunction::power(2.0).unwrap(),
            Mesh::interval(0.0, 1.0, 10).unwrap(),
            Exponents::default(),
            [1.0; 2],
            [1.0; 2],
            Structure::General,
        );
        assert!(matches!(
            continuation_solve(&s, &SolverOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn short_cooperative_run() {
        let s = SystemSpec::with_constants(
            NFunction::power(2.0).unwrap(),
            Mesh::interval(0.0, 1.0, 50).unwrap(),
            Exponents {
                alpha: [1.0, 1.0],
                ..Default::default()
            },
            [1.0; 2],
            [0.0; 2],
            Structure::Cooperative,
        );
        let mut opts = SolverOptions::default();
        opts.continuation.schedule = geometric_schedule(0.5, 0.5, 3);
        let rep = continuation_solve(&s, &opts).unwrap();
        assert_eq!(rep.stages.len(), 3);
        assert!(rep.all_within_r0());
        assert!(rep.stages.iter().all(|s| s.c_lower > 0.0));
        assert!(rep.stages.iter().all(|s| s.barrier_margin.unwrap() >= -1e-8));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
