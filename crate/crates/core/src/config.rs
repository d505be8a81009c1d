//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! output_dir = "out/cooperative"
//! experiments = ["nfunction-audit", "continuation"]
//!
//! [kernel]
//! family = "power"
//! exponents = [2.0]
//!
//! [mesh]
//! shape = "interval"
//! x = [0.0, 1.0]
//! cells = [200]
//!
//! [system]
//! structure = "cooperative"
//! a = ["1", "1"]
//! b = ["1", "1"]
//! exponents = { alpha = [0.5, 0.5], gamma = [0.3, 0.3] }
//!
//! [solver.continuation]
//! schedule = [0.5, 0.25, 0.125]
//! ```
//!
//! Coefficients and comparison fields are expressions in `x`, `y`, `d`
//! (distance to the boundary), or `csv:<path>` for a nodal CSV relative to
//! the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{DiscreteField, Mesh};
use crate::nfunction::{NFunction, NFunctionConfig, PhiKernel};
use crate::solver::{check_schedule, BarrierCase, SolverOptions};
use crate::system::{Coefficient, Exponents, Structure, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    NfunctionAudit,
    Solve,
    Continuation,
    Comparison,
    Barrier,
}

impl Experiment {
    pub fn label(&self) -> &'static str {
        match self {
            Experiment::NfunctionAudit => "nfunction-audit",
            Experiment::Solve => "solve",
            Experiment::Continuation => "continuation",
            Experiment::Comparison => "comparison",
            Experiment::Barrier => "barrier",
        }
    }

    fn needs_system(&self) -> bool {
        matches!(self, Experiment::Solve | Experiment::Continuation | Experiment::Barrier)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub family: String,
    pub exponents: Vec<f64>,
    #[serde(default)]
    pub settings: NFunctionConfig,
}

impl KernelBlock {
    pub fn build(&self) -> Result<NFunction> {
        NFunction::with_config(PhiKernel::from_family(&self.family, &self.exponents)?, self.settings.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshShape {
    Interval,
    Rectangle,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub shape: MeshShape,
    pub x: [f64; 2],
    pub y: Option<[f64; 2]>,
    /// Cells per direction.
    pub cells: Vec<usize>,
}

impl MeshBlock {
    pub fn build(&self) -> Result<Arc<Mesh>> {
        match (self.shape, self.cells.as_slice()) {
            (MeshShape::Interval, [n]) => Mesh::interval(self.x[0], self.x[1], *n),
            (MeshShape::Rectangle, [nx, ny]) => {
                let y = self
                    .y
                    .ok_or_else(|| Error::Config("rectangle mesh needs `y`".into()))?;
                Mesh::rectangle(self.x[0], self.x[1], y[0], y[1], *nx, *ny)
            }
            (shape, cells) => Err(Error::Config(format!(
                "{shape:?} mesh cannot take cells = {cells:?}"
            ))),
        }
    }
}

fn unbounded() -> [f64; 2] {
    [f64::INFINITY; 2]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub structure: Structure,
    #[serde(default)]
    pub exponents: Exponents,
    pub a: [String; 2],
    pub b: [String; 2],
    #[serde(default = "unbounded")]
    pub q: [f64; 2],
    pub psi: Option<KernelBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveBlock {
    pub eps: f64,
    /// Defaults to the structure's policy.
    pub delta: Option<f64>,
}

impl Default for SolveBlock {
    fn default() -> Self {
        Self { eps: 0.01, delta: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditBlock {
    pub zeta_samples: usize,
    pub convexity_grid: usize,
    pub midpoint_pairs: usize,
    /// Kernels audited besides the main one.
    pub extra_kernels: Vec<KernelBlock>,
}

impl Default for AuditBlock {
    fn default() -> Self {
        Self {
            zeta_samples: 10_000,
            convexity_grid: 10_000,
            midpoint_pairs: 1000,
            extra_kernels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    #[default]
    Pass,
    HypothesisFailure,
    OrderingViolation,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceBlock {
    pub id: String,
    /// Reaction in `x`, `y`, `d` and `t`.
    pub f: String,
    pub u1: String,
    pub u2: String,
    pub kernel: Option<KernelBlock>,
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub expect: Expectation,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonBlock {
    pub instances: Vec<InstanceBlock>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierBlock {
    /// Defaults to the structure's barrier.
    pub case: Option<BarrierCase>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub experiments: Vec<Experiment>,
    pub kernel: KernelBlock,
    pub mesh: Option<MeshBlock>,
    pub system: Option<SystemBlock>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub solve: SolveBlock,
    #[serde(default)]
    pub audit: AuditBlock,
    pub comparison: Option<ComparisonBlock>,
    #[serde(default)]
    pub barrier: BarrierBlock,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.output_dir = cfg.resolve(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Structural checks that need no numerics.
    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(Error::Config("at least one experiment is required".into()));
        }
        for e in &self.experiments {
            if e.needs_system() && self.system.is_none() {
                return Err(Error::Config(format!("experiment `{}` needs a [system] block", e.label())));
            }
            if (e.needs_system() || *e == Experiment::Comparison) && self.mesh.is_none() {
                return Err(Error::Config(format!("experiment `{}` needs a [mesh] block", e.label())));
            }
            if *e == Experiment::Comparison && self.comparison.as_ref().is_none_or(|c| c.instances.is_empty()) {
                return Err(Error::Config("experiment `comparison` needs [[comparison.instances]]".into()));
            }
        }
        if self.experiments.contains(&Experiment::Continuation) {
            check_schedule(&self.solver.continuation.schedule)?;
        }
        if !(self.solve.eps > 0.0) {
            return Err(Error::Config("solve.eps must be positive".into()));
        }
        Ok(())
    }

    pub fn coefficient(&self, src: &str) -> Result<Coefficient> {
        match src.trim().strip_prefix("csv:") {
            Some(path) => Ok(Coefficient::Csv(self.resolve(Path::new(path.trim())))),
            None => Ok(Coefficient::Expr(Expr::parse(src)?)),
        }
    }

    pub fn field(&self, mesh: &Arc<Mesh>, src: &str) -> Result<DiscreteField> {
        self.coefficient(src)?.sample(mesh)
    }

    pub fn build_mesh(&self) -> Result<Arc<Mesh>> {
        self.mesh
            .as_ref()
            .ok_or_else(|| Error::Config("missing [mesh] block".into()))?
            .build()
    }

    pub fn build_spec(&self) -> Result<SystemSpec> {
        let sys = self
            .system
            .as_ref()
            .ok_or_else(|| Error::Config("missing [system] block".into()))?;
        let a = [self.coefficient(&sys.a[0])?, self.coefficient(&sys.a[1])?];
        let b = [self.coefficient(&sys.b[0])?, self.coefficient(&sys.b[1])?];
        let mut spec = SystemSpec::new(
            self.kernel.build()?,
            self.build_mesh()?,
            sys.exponents,
            [&a[0], &a[1]],
            [&b[0], &b[1]],
            sys.structure,
        )?;
        spec.q = sys.q;
        spec.psi = sys.psi.as_ref().map(KernelBlock::build).transpose()?;
        Ok(spec)
    }
}
