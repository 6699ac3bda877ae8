//! TOML experiment configuration. Every knob has a default; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    PsiScan,
    Conditions,
    Reduce,
    Rotation,
    Lyapunov,
    Counterexample,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::PsiScan => "psi-scan",
            Command::Conditions => "conditions",
            Command::Reduce => "reduce",
            Command::Rotation => "rotation",
            Command::Lyapunov => "lyapunov",
            Command::Counterexample => "counterexample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    Sequential,
}

impl ExecutionMode {
    pub fn to_exec(self) -> kamred::Execution {
        match self {
            ExecutionMode::Parallel => kamred::Execution::Parallel,
            ExecutionMode::Sequential => kamred::Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when both are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    /// `golden`, `cf:a1,a2,…` or explicit components.
    #[serde(default = "default_frequency")]
    pub frequency: String,
    /// `analytic`, `gevrey:<alpha>` or `table:<csv path>`.
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default)]
    pub execution: ExecutionMode,
    /// Seed for randomly generated perturbations.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub psi: PsiSection,
    #[serde(default)]
    pub cocycle: CocycleSection,
    #[serde(default)]
    pub conditions: ConditionsSection,
    #[serde(default)]
    pub reduce: ReduceSection,
    #[serde(default)]
    pub rotation: RotationSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub counterexample: CounterexampleSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_frequency() -> String {
    "golden".into()
}

fn default_weight() -> String {
    "analytic".into()
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsiSection {
    pub kmax: u32,
    /// Maximum number of lattice points enumerated.
    pub budget: u64,
    /// Closed-form `exp:<beta>` or `power:<tau>`; only `conditions` accepts it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

impl Default for PsiSection {
    fn default() -> Self {
        PsiSection { kmax: 500, budget: kamred::arithmetics::DEFAULT_LATTICE_BUDGET as u64, preset: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: Vec<i32>,
    /// Row-major coefficient of `cos(2πk·θ)`.
    #[serde(default)]
    pub cos: [f64; 4],
    /// Row-major coefficient of `sin(2πk·θ)`.
    #[serde(default)]
    pub sin: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPerturbation {
    pub modes: usize,
    #[serde(default = "default_random_l1")]
    pub max_l1: u32,
}

fn default_random_l1() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CocycleSection {
    /// Constant part, row-major.
    pub a: [f64; 4],
    pub r: f64,
    /// Series in the `.fourier` text format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomPerturbation>,
    /// Rescale `F` so that the normalised `|F|_r` equals this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
    /// Rescale `F` to this fraction of the largest admissible `ε`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_fraction: Option<f64>,
}

impl Default for CocycleSection {
    fn default() -> Self {
        CocycleSection {
            a: [0.0, 1.0, -1.0, 0.0],
            r: 0.2,
            f_file: None,
            modes: Vec::new(),
            random: None,
            norm: None,
            threshold_fraction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsSection {
    pub v0: f64,
    pub vmax: f64,
    pub panels_per_decade: usize,
    pub window: usize,
    pub converge_ratio: f64,
    pub diverge_share: f64,
    pub rel_tol: f64,
}

impl Default for ConditionsSection {
    fn default() -> Self {
        let d = kamred::weights::ClassifyOptions::default();
        ConditionsSection {
            v0: d.v0,
            vmax: d.vmax,
            panels_per_decade: d.panels_per_decade,
            window: d.window,
            converge_ratio: d.converge_ratio,
            diverge_share: d.diverge_share,
            rel_tol: d.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReduceSection {
    pub max_steps: usize,
    pub residual_tol: f64,
    /// `0` disables compression of intermediate products.
    pub compress_rel: f64,
    pub y_prune_rel: f64,
    pub stop_norm: f64,
    pub solve_mode: kamred::kam::SolveMode,
    pub guard: bool,
    pub rho_check: bool,
    pub rotation_horizon: f64,
}

impl Default for ReduceSection {
    fn default() -> Self {
        let d = kamred::kam::ReduceOptions::default();
        ReduceSection {
            max_steps: d.max_steps,
            residual_tol: d.residual_tol,
            compress_rel: d.compress_rel.unwrap_or(0.0),
            y_prune_rel: d.y_prune_rel,
            stop_norm: d.stop_norm,
            solve_mode: d.solve_mode,
            guard: d.guard,
            rho_check: d.rho_check,
            rotation_horizon: d.rotation_horizon,
        }
    }
}

impl ReduceSection {
    pub fn options(&self, exec: kamred::Execution) -> kamred::kam::ReduceOptions {
        kamred::kam::ReduceOptions {
            max_steps: self.max_steps,
            residual_tol: self.residual_tol,
            compress_rel: (self.compress_rel > 0.0).then_some(self.compress_rel),
            y_prune_rel: self.y_prune_rel,
            stop_norm: self.stop_norm,
            solve_mode: self.solve_mode,
            guard: self.guard,
            rho_check: self.rho_check,
            rotation_horizon: self.rotation_horizon,
            exec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationSection {
    pub horizons: Vec<f64>,
    /// Integration step; by default half the largest admissible one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for RotationSection {
    fn default() -> Self {
        RotationSection { horizons: vec![250.0, 500.0, 1000.0, 2000.0, 4000.0], step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub horizons: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        LyapunovSection { horizons: vec![1000.0, 2000.0, 4000.0], step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleSection {
    pub count: usize,
    pub rho: f64,
    pub eps: f64,
    /// Run the KAM driver on the built cocycle.
    pub run_reduce: bool,
    pub rotation_horizon: f64,
}

impl Default for CounterexampleSection {
    fn default() -> Self {
        CounterexampleSection { count: 3, rho: 1.0, eps: 0.01, run_reduce: true, rotation_horizon: 1e4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write `.fourier` files for the series involved.
    pub series: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), series: true }
    }
}

/// A batch file: configs run concurrently, each into its own subdirectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub configs: Vec<PathBuf>,
    /// Parallel experiments; defaults to the number of available threads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

pub fn load_batch(path: &Path) -> Result<BatchConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut b: BatchConfig = toml::from_str(&text).with_context(|| format!("in {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for c in &mut b.configs {
        if c.is_relative() {
            *c = base.join(&*c);
        }
    }
    if b.configs.is_empty() {
        bail!("batch file {} lists no configs", path.display());
    }
    Ok(b)
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        let c = &self.cocycle;
        if c.norm.is_some() && c.threshold_fraction.is_some() {
            bail!("cocycle.norm and cocycle.threshold_fraction are mutually exclusive");
        }
        let sources = c.f_file.is_some() as u8 + (!c.modes.is_empty()) as u8 + c.random.is_some() as u8;
        if sources > 1 {
            bail!("give at most one of cocycle.f_file, cocycle.modes and cocycle.random");
        }
        if self.rotation.horizons.is_empty() || self.lyapunov.horizons.is_empty() {
            bail!("horizon lists must not be empty");
        }
        Ok(())
    }

    /// Makes relative file paths relative to the config's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(f) = &mut self.cocycle.f_file {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if let Some(p) = self.weight.strip_prefix("table:") {
            let p = Path::new(p);
            if p.is_relative() {
                self.weight = format!("table:{}", base.join(p).display());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.frequency, "golden");
        assert_eq!(cfg.psi.kmax, 500);
        assert_eq!(cfg.cocycle.a, [0.0, 1.0, -1.0, 0.0]);
        assert_eq!(cfg.reduce.max_steps, 12);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = parse_config("[psi]\nkmax = 10\nkmaxx = 3\n").unwrap_err().to_string();
        assert!(err.contains("kmaxx"), "{err}");
        assert!(err.contains("line 3"), "{err}");
        assert!(parse_config("colour = 1").is_err());
    }

    #[test]
    fn exclusive_scalings() {
        assert!(parse_config("[cocycle]\nnorm = 1e-3\nthreshold_fraction = 0.5\n").is_err());
    }
}
