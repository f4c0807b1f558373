use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convex::SolverSettings;
use crate::error::{Error, Result};
use crate::functions::Function1d;
use crate::obbt::{ObbtSettings, SweepMode};
use crate::oracle::OracleCoupling;
use crate::upper_bounds::ContinuousSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mcc,
    McchSweep,
    Obbt,
    Certificates,
    UbContinuous,
    UbInteger,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObbtModeConfig {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObbtConfig {
    pub safeguard: f64,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub mode: ObbtModeConfig,
}

impl Default for ObbtConfig {
    fn default() -> Self {
        let d = ObbtSettings::default();
        Self {
            safeguard: d.safeguard,
            sweep_tol: d.sweep_tol,
            max_sweeps: d.max_sweeps,
            mode: ObbtModeConfig::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eps_prim: f64,
    pub eps_dual: f64,
    pub max_iter: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverSettings::default();
        Self { eps_prim: d.eps_prim, eps_dual: d.eps_dual, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpperBoundConfig {
    /// Number of control cells of the primal heuristics; 256 or `fem_n`
    /// when that is coarser.
    pub grid: Option<usize>,
    pub max_iter: usize,
    pub step_tol: f64,
    pub eps_huber: f64,
    pub start: Option<f64>,
}

impl Default for UpperBoundConfig {
    fn default() -> Self {
        let d = ContinuousSettings::default();
        Self { grid: None, max_iter: d.max_iter, step_tol: d.step_tol, eps_huber: d.eps_huber, start: d.start }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_cells: usize,
    pub value_lo: i64,
    pub value_hi: i64,
    pub fem_n: usize,
    pub instances: usize,
    pub seed: u64,
    pub coupling: OracleCoupling,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_cells: 4,
            value_lo: -4,
            value_hi: 4,
            fem_n: 64,
            instances: 10,
            seed: 1,
            coupling: OracleCoupling::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fem_n: usize,
    /// Coarse partitions on which the averaged relaxations are solved.
    #[serde(default)]
    pub coarse_levels: Vec<usize>,
    /// Additional columns of the validated-bound table. Levels that are not
    /// computed use the pointwise relaxation value in place of `m`.
    #[serde(default)]
    pub validated_levels: Vec<usize>,
    pub w_lo: f64,
    pub w_hi: f64,
    pub alpha: f64,
    pub f: Function1d,
    pub u_d: Function1d,
    pub modes: BTreeSet<Mode>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub obbt: ObbtConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub upper_bounds: UpperBoundConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn dyadic(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Config(format!("{what} = {n} must be a positive power of two")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("`modes` must name at least one mode".into()));
        }
        dyadic(self.fem_n, "fem_n")?;
        for &n in self.coarse_levels.iter().chain(&self.validated_levels) {
            dyadic(n, "coarse level")?;
            if n > self.fem_n {
                return Err(Error::Config(format!("coarse level {n} is finer than fem_n = {}", self.fem_n)));
            }
        }
        dyadic(self.ub_grid(), "upper_bounds.grid")?;
        if self.ub_grid() > self.fem_n {
            return Err(Error::Config("upper_bounds.grid is finer than fem_n".into()));
        }
        if !(self.w_lo < self.w_hi) || !self.w_lo.is_finite() || !self.w_hi.is_finite() {
            return Err(Error::Config(format!("need finite w_lo < w_hi, got [{}, {}]", self.w_lo, self.w_hi)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha = {} must be positive", self.alpha)));
        }
        let needs_levels = self.modes.contains(&Mode::McchSweep) || self.modes.contains(&Mode::Obbt);
        if needs_levels && self.coarse_levels.is_empty() {
            return Err(Error::Config("mcch_sweep and obbt need coarse_levels".into()));
        }
        self.f.validate()?;
        self.u_d.validate()?;
        self.obbt_settings().validate()?;
        if self.modes.contains(&Mode::Oracle) {
            let o = &self.oracle;
            if o.value_lo > o.value_hi || o.instances == 0 {
                return Err(Error::Config("oracle needs value_lo <= value_hi and at least one instance".into()));
            }
            dyadic(o.n_cells, "oracle.n_cells")?;
            dyadic(o.fem_n, "oracle.fem_n")?;
            if o.n_cells > o.fem_n {
                return Err(Error::Config("oracle.n_cells exceeds oracle.fem_n".into()));
            }
            self.enumeration().validate()?;
        }
        Ok(())
    }

    pub fn ub_grid(&self) -> usize {
        self.upper_bounds.grid.unwrap_or(256.min(self.fem_n))
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            eps_prim: self.solver.eps_prim,
            eps_dual: self.solver.eps_dual,
            max_iter: self.solver.max_iter,
            ..SolverSettings::default()
        }
    }

    pub fn obbt_settings(&self) -> ObbtSettings {
        ObbtSettings {
            safeguard: self.obbt.safeguard,
            sweep_tol: self.obbt.sweep_tol,
            max_sweeps: self.obbt.max_sweeps,
            mode: match self.obbt.mode {
                ObbtModeConfig::Sequential => SweepMode::Sequential,
                ObbtModeConfig::Parallel => SweepMode::Parallel,
            },
            solver: self.solver_settings(),
            ..ObbtSettings::default()
        }
    }

    pub fn continuous_settings(&self) -> ContinuousSettings {
        let u = &self.upper_bounds;
        ContinuousSettings {
            eps_huber: u.eps_huber,
            step_tol: u.step_tol,
            max_iter: u.max_iter,
            start: u.start,
            ..ContinuousSettings::default()
        }
    }

    pub fn enumeration(&self) -> crate::oracle::EnumerationSpec {
        let o = &self.oracle;
        crate::oracle::EnumerationSpec {
            n_cells: o.n_cells,
            value_set: (o.value_lo..=o.value_hi).collect(),
            fem_n: o.fem_n,
            coupling: o.coupling,
        }
    }

    /// `output_dir` from the file, else `out/<config stem>`.
    pub fn resolve_output_dir(&self, config_path: &Path) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from("out").join(stem)
        })
    }
}
