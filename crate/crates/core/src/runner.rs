//! Batch execution of a [`RunConfig`].
//!
//! Artifacts go to a staging directory next to `output_dir` and are moved
//! into place only when every experiment finishes. A failed run leaves its
//! partial output in `<output_dir>.failed`.
//!
//! CSV files per experiment:
//!
//! | experiment        | files                                                   |
//! |-------------------|---------------------------------------------------------|
//! | (always)          | `validation.csv`: check, level, pass, detail            |
//! | `nfunction-audit` | `audit.csv`: kernel, check, value, pass                 |
//! | `solve`           | `solve.csv` (node fields u, v), `solve_stats.csv`       |
//! | `continuation`    | `continuation.csv` (per stage), `continuation_fields.csv` |
//! | `comparison`      | `comparison.csv`: verdict per instance                  |
//! | `barrier`         | `barrier.csv` (node fields w1, w2)                      |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comparison::{
    check_phi_power_convexity, comparison_test, verdict_label, verdict_record, ComparisonInstance,
    VERDICT_CSV_HEADER,
};
use crate::config::{Expectation, Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{distance_function, write_fields_csv};
use crate::nfunction::{audit, NFunction};
use crate::numerics::log_space;
use crate::solver::{
    barrier_case, compute_r0, continuation_solve, default_eta, fit_lower_bound, linear_warm_start,
    newton_solve, solve_barrier_with, RegularizationParams,
};
use crate::system::SystemSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Directory holding the artifacts: `output_dir` on success.
    pub artifacts: PathBuf,
    pub summary: String,
}

fn exit_code_of(e: &Error) -> i32 {
    if e.is_solver_failure() {
        EXIT_SOLVER
    } else {
        EXIT_VALIDATION
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let name = dir.file_name().map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    dir.with_file_name(format!("{name}{suffix}"))
}

fn replace_dir(from: &Path, to: &Path) -> Result<()> {
    if to.exists() {
        fs::remove_dir_all(to)?;
    }
    if let Some(parent) = to.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::rename(from, to)?;
    Ok(())
}

/// Summary lines plus a record of pass/fail checks.
#[derive(Default)]
struct Summary {
    body: String,
    checks: Vec<(String, bool)>,
}

impl Summary {
    fn line(&mut self, s: impl AsRef<str>) {
        self.body.push_str(s.as_ref());
        self.body.push('\n');
    }

    fn check(&mut self, name: impl Into<String>, pass: bool) {
        self.checks.push((name.into(), pass));
    }

    fn render(&self, cfg: &RunConfig, status: &str) -> String {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut out = String::new();
        let _ = writeln!(out, "# philap run summary (unix time {stamp})");
        let _ = writeln!(out, "seed: {}", cfg.seed);
        let labels: Vec<&str> = cfg.experiments.iter().map(|e| e.label()).collect();
        let _ = writeln!(out, "experiments: {}", labels.join(", "));
        let _ = writeln!(out, "status: {status}\n");
        out.push_str(&self.body);
        if !self.checks.is_empty() {
            out.push_str("\nchecks:\n");
            for (name, pass) in &self.checks {
                let _ = writeln!(out, "  [{}] {name}", if *pass { "PASS" } else { "FAIL" });
            }
        }
        out
    }
}

/// Runs the experiments of `cfg` in order. With `check_only` the config and
/// system are validated and nothing is solved.
pub fn run(cfg: &RunConfig, check_only: bool) -> RunOutcome {
    let staging = sibling(&cfg.output_dir, ".staging");
    let mut summary = Summary::default();
    let result = fs::create_dir_all(&staging)
        .map_err(Error::from)
        .and_then(|_| {
            if staging.read_dir()?.next().is_some() {
                fs::remove_dir_all(&staging)?;
                fs::create_dir_all(&staging)?;
            }
            execute(cfg, check_only, &staging, &mut summary)
        });
    let (code, status) = match &result {
        Ok(()) => (EXIT_OK, "ok".to_string()),
        Err(e) => {
            summary.line(format!("error: {e}"));
            (exit_code_of(e), format!("failed (exit {})", exit_code_of(e)))
        }
    };
    let text = summary.render(cfg, &status);
    let _ = fs::write(staging.join("summary.txt"), &text);
    let target = if code == EXIT_OK {
        cfg.output_dir.clone()
    } else {
        sibling(&cfg.output_dir, ".failed")
    };
    let artifacts = match replace_dir(&staging, &target) {
        Ok(()) => target,
        Err(e) => {
            warn!("could not move {} to {}: {e}", staging.display(), target.display());
            staging
        }
    };
    RunOutcome {
        exit_code: code,
        artifacts,
        summary: text,
    }
}

fn execute(cfg: &RunConfig, check_only: bool, dir: &Path, summary: &mut Summary) -> Result<()> {
    cfg.validate()?;
    let spec = match &cfg.system {
        Some(_) => {
            let spec = cfg.build_spec()?;
            let report = spec.validate();
            report.write_csv(fs::File::create(dir.join("validation.csv"))?)?;
            summary.line("hypothesis checks:");
            for line in report.to_string().lines() {
                summary.line(format!("  {line}"));
            }
            report.require_solver()?;
            Some(spec)
        }
        None => None,
    };
    if check_only {
        summary.line("check only: no experiments run");
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for exp in &cfg.experiments {
        info!("running {}", exp.label());
        summary.line(format!("\n[{}]", exp.label()));
        match exp {
            Experiment::NfunctionAudit => run_audit(cfg, &mut rng, dir, summary)?,
            Experiment::Solve => run_solve(cfg, spec.as_ref().expect("validated"), dir, summary)?,
            Experiment::Continuation => run_continuation(cfg, spec.as_ref().expect("validated"), dir, summary)?,
            Experiment::Comparison => run_comparison(cfg, &mut rng, dir, summary)?,
            Experiment::Barrier => run_barrier(cfg, spec.as_ref().expect("validated"), dir, summary)?,
        }
    }
    Ok(())
}

fn run_audit(cfg: &RunConfig, rng: &mut ChaCha8Rng, dir: &Path, summary: &mut Summary) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("audit.csv"))?;
    w.write_record(["kernel", "check", "value", "pass"])?;
    let blocks = std::iter::once(&cfg.kernel).chain(&cfg.audit.extra_kernels);
    for block in blocks {
        let nf = block.build()?;
        let label = nf.kernel().label();
        let mut rows = vec![
            ("ell".to_string(), nf.ell(), true),
            ("m".to_string(), nf.m(), true),
        ];
        for r in audit(&nf, cfg.audit.zeta_samples, rng) {
            rows.push((r.check, r.worst_margin, r.pass));
        }
        let grid = log_space(1e-6, 1e6, cfg.audit.convexity_grid.max(3));
        rows.push(match check_phi_power_convexity(&nf, &grid, cfg.audit.midpoint_pairs, rng) {
            Ok(rep) => ("power_convexity".into(), rep.min_defect.min(rep.min_midpoint_gap), true),
            Err(Error::ConvexityViolation { defect, .. }) => ("power_convexity".into(), defect, false),
            Err(e) => return Err(e),
        });
        let failed = rows.iter().filter(|r| !r.2).count();
        summary.line(format!("{label}: ell = {}, m = {}, {failed} failed checks", nf.ell(), nf.m()));
        summary.check(format!("audit {label}"), failed == 0);
        for (check, value, pass) in rows {
            w.write_record([label.clone(), check, format!("{value:e}"), pass.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eta_of(cfg: &RunConfig, spec: &SystemSpec) -> f64 {
    cfg.solver
        .continuation
        .eta
        .unwrap_or_else(|| default_eta(spec.mesh.geometry().diameter()))
}

fn run_solve(cfg: &RunConfig, spec: &SystemSpec, dir: &Path, summary: &mut Summary) -> Result<()> {
    let eps = cfg.solve.eps;
    let delta = cfg
        .solve
        .delta
        .unwrap_or_else(|| cfg.solver.continuation.delta_policy.delta(spec.structure, eps));
    let params = RegularizationParams::new(eps, delta).with_eta(eta_of(cfg, spec));
    let (u0, v0) = linear_warm_start(spec, &params)?;
    let sol = newton_solve(spec, &params, (&u0, &v0), &cfg.solver.newton)?;
    let bound = compute_r0(spec, &params)?;
    write_fields_csv(&dir.join("solve.csv"), &[("u", &sol.u), ("v", &sol.v)])?;
    let d = distance_function(&spec.mesh);
    let c = fit_lower_bound(&sol.u, &d).min(fit_lower_bound(&sol.v, &d));
    let norm = sol.norm_pair.0 + sol.norm_pair.1;
    let mut w = csv::Writer::from_path(dir.join("solve_stats.csv"))?;
    w.write_record(["eps", "delta", "norm_u", "norm_v", "residual", "newton_iters", "picard", "r0", "c_lower"])?;
    w.write_record([
        format!("{eps:e}"),
        format!("{delta:e}"),
        format!("{:e}", sol.norm_pair.0),
        format!("{:e}", sol.norm_pair.1),
        format!("{:e}", sol.residual_norm),
        sol.newton_iters.to_string(),
        sol.used_picard.to_string(),
        format!("{:e}", bound.r0),
        format!("{c:e}"),
    ])?;
    w.flush()?;
    summary.line(format!(
        "eps = {eps:e}: residual {:.3e} after {} iterations, norms ({:.6e}, {:.6e}), r0 = {:.6e}, C = {c:.6e}",
        sol.residual_norm, sol.newton_iters, sol.norm_pair.0, sol.norm_pair.1, bound.r0
    ));
    summary.check("solve: norms within r0", norm <= bound.r0);
    summary.check("solve: lower-bound constant C > 0", c > 0.0);
    Ok(())
}

fn run_continuation(cfg: &RunConfig, spec: &SystemSpec, dir: &Path, summary: &mut Summary) -> Result<()> {
    let report = continuation_solve(spec, &cfg.solver)?;
    report.write_csv(fs::File::create(dir.join("continuation.csv"))?)?;
    let sol = &report.solution;
    let mut fields = vec![("u", &sol.u), ("v", &sol.v), ("d", &report.distance)];
    if let Some([w1, w2]) = &report.barriers {
        fields.push(("w1", w1));
        fields.push(("w2", w2));
    }
    write_fields_csv(&dir.join("continuation_fields.csv"), &fields)?;
    let last = report.stages.last().expect("nonempty schedule");
    let c_min = report.stages.iter().map(|s| s.c_lower).fold(f64::INFINITY, f64::min);
    summary.line(format!(
        "{} stages ({}), final eps = {:e}: norms ({:.6e}, {:.6e}), r0 = {:.6e}, C = {:.6e}",
        report.stages.len(),
        if report.stopped_early { "stopped early" } else { "full schedule" },
        last.eps,
        last.norm_u,
        last.norm_v,
        last.r0,
        last.c_lower
    ));
    if let Some(inc) = last.increment {
        summary.line(format!("final increment {inc:.3e}"));
    }
    summary.check("continuation: increments monotone", report.increments_monotone());
    summary.check("continuation: every stage within r0", report.all_within_r0());
    summary.check("continuation: lower-bound constant C > 0 at every stage", c_min > 0.0);
    if report.barriers.is_some() {
        let margin = report
            .stages
            .iter()
            .filter_map(|s| s.barrier_margin)
            .fold(f64::INFINITY, f64::min);
        summary.line(format!("worst barrier margin {margin:.3e}"));
        summary.check("continuation: solution above barrier", margin >= -1e-8);
    }
    Ok(())
}

fn run_comparison(cfg: &RunConfig, rng: &mut ChaCha8Rng, dir: &Path, summary: &mut Summary) -> Result<()> {
    let mesh = cfg.build_mesh()?;
    let block = cfg.comparison.as_ref().expect("validated");
    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    let mut header: Vec<&str> = VERDICT_CSV_HEADER.to_vec();
    header.extend(["expected", "as_expected"]);
    w.write_record(&header)?;
    let grid = log_space(1e-6, 1e6, cfg.audit.convexity_grid.max(3));
    let mut convex_ok = true;
    let mut matched = 0;
    for inst in &block.instances {
        let nf: NFunction = match &inst.kernel {
            Some(k) => k.build()?,
            None => cfg.kernel.build()?,
        };
        convex_ok &= check_phi_power_convexity(&nf, &grid, cfg.audit.midpoint_pairs, rng).is_ok();
        let mut ci = ComparisonInstance::new(
            nf,
            Expr::parse(&inst.f)?,
            cfg.field(&mesh, &inst.u1)?,
            cfg.field(&mesh, &inst.u2)?,
        );
        if let Some(tol) = inst.residual_tol {
            ci.residual_tol = tol;
        }
        let outcome = comparison_test(&ci);
        let expected = match inst.expect {
            Expectation::Pass => "pass",
            Expectation::HypothesisFailure => "hypothesis-failure",
            Expectation::OrderingViolation => "ordering-violation",
        };
        let ok = verdict_label(&outcome) == expected;
        matched += usize::from(ok);
        let mut row = verdict_record(&inst.id, &outcome);
        row.extend([expected.to_string(), ok.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    let n = block.instances.len();
    summary.line(format!("{matched} of {n} verdicts as expected"));
    summary.check("comparison: verdicts as expected", matched == n);
    summary.check("comparison: Phi(t^(1/ell)) convex for every kernel", convex_ok);
    Ok(())
}

fn run_barrier(cfg: &RunConfig, spec: &SystemSpec, dir: &Path, summary: &mut Summary) -> Result<()> {
    let case = cfg
        .barrier
        .case
        .or_else(|| barrier_case(spec.structure))
        .ok_or_else(|| Error::Config("general structure needs barrier.case".into()))?;
    let eta = eta_of(cfg, spec);
    let w1 = solve_barrier_with(spec, case, 1, eta, &cfg.solver.newton)?;
    let w2 = solve_barrier_with(spec, case, 2, eta, &cfg.solver.newton)?;
    write_fields_csv(&dir.join("barrier.csv"), &[("w1", &w1), ("w2", &w2)])?;
    let d = distance_function(&spec.mesh);
    let c = fit_lower_bound(&w1, &d).min(fit_lower_bound(&w2, &d));
    summary.line(format!(
        "{case:?}: max w1 = {:.6e}, max w2 = {:.6e}, min w/d = {c:.6e}",
        w1.max_abs(),
        w2.max_abs()
    ));
    summary.check("barrier: positive in the interior", c > 0.0);
    Ok(())
}
