//! Run configuration: TOML file, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pepsvqe::hamiltonian::{default_g, Method};
use pepsvqe::lattice::{Lattice, LatticeKind};
use pepsvqe::optimize::{EvalConfig, InitPolicy, LbfgsConfig};
use pepsvqe::scaling::{ChiERule, Reference};
use pepsvqe::statevector::GROUND_STATE_CAP;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PEPSVQE_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `square:RxC` or `heavyhex:N`.
    pub lattice: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Worker threads; defaults to the number of cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub model: ModelConfig,
    pub circuit: CircuitConfig,
    pub tn: TnConfig,
    pub optimizer: OptimizerConfig,
    pub diagnostics: DiagnosticsConfig,
    pub scaling: ScalingConfig,
    pub ite: IteSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Transverse field; the lattice family's critical value when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitConfig {
    /// Total depth `D`.
    pub depth: usize,
    /// Warm-start depth `D*`.
    pub warm_depth: usize,
    /// When nonempty, `optimize` sweeps these depths (warm-chained).
    pub depth_list: Vec<usize>,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self { depth: 2, warm_depth: 2, depth_list: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    /// Boundary MPS on square grids, SU elsewhere.
    Auto,
    Su,
    BoundaryMps,
    Statevector,
}

impl std::str::FromStr for MethodChoice {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "su" => Ok(Self::Su),
            "boundary-mps" => Ok(Self::BoundaryMps),
            "statevector" => Ok(Self::Statevector),
            _ => Err(CliError::Config(format!("unknown method `{s}` (auto|su|boundary-mps|statevector)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TnConfig {
    pub chi: usize,
    /// `square` (`chi_E = chi^2`) or `fixed:K`.
    pub chi_e_rule: String,
    pub regauge: bool,
    pub method: MethodChoice,
}

impl Default for TnConfig {
    fn default() -> Self {
        Self { chi: 4, chi_e_rule: "square".into(), regauge: true, method: MethodChoice::Auto }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitChoice {
    Zeros,
    SmallRandom,
    UniformPi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when the gradient infinity-norm drops below this.
    pub gtol: f64,
    /// Stop when the relative energy decrease per iteration drops below this.
    pub ftol: f64,
    pub init: InitChoice,
    /// Warm-start checkpoint (overrides `init`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm: Option<String>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = LbfgsConfig::default();
        Self { max_iters: d.max_iters, gtol: d.gtol, ftol: d.ftol, init: InitChoice::SmallRandom, warm: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Log-spaced grid `[r_min, r_max]` with `r_points` points, unless
    /// `r_grid` lists the half-widths explicitly.
    pub r_min: f64,
    pub r_max: f64,
    pub r_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    pub n_samples: usize,
    pub evaluator: MethodChoice,
    /// Record mean squared gradient norms as a cross-check column.
    pub gradients: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            r_min: 1e-3,
            r_max: std::f64::consts::PI,
            r_points: 24,
            r_grid: None,
            n_samples: 1000,
            evaluator: MethodChoice::Auto,
            gradients: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub n_points: usize,
    pub chi_list: Vec<usize>,
    /// `statevector` or `converged-tn`.
    pub reference: String,
    /// Hypercube half-width; a variance scan finds it when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { n_points: 10, chi_list: vec![2, 3, 4, 5, 6], reference: "statevector".into(), r_max: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IteSection {
    pub dtau_schedule: Vec<f64>,
    pub max_sweeps: usize,
    pub energy_tol: f64,
}

impl Default for IteSection {
    fn default() -> Self {
        Self { dtau_schedule: vec![0.1, 0.05, 0.01, 0.005], max_sweeps: 2000, energy_tol: 1e-8 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lattice: "square:3x3".into(),
            seed: 0,
            output_dir: None,
            threads: None,
            model: ModelConfig::default(),
            circuit: CircuitConfig::default(),
            tn: TnConfig::default(),
            optimizer: OptimizerConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            scaling: ScalingConfig::default(),
            ite: IteSection::default(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| cfg_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| cfg_err(format!("cannot serialize config: {e}")))
    }

    pub fn lattice(&self) -> CliResult<Lattice> {
        let kind: LatticeKind = self.lattice.parse().map_err(|e| cfg_err(format!("{e}")))?;
        Lattice::from_kind(kind).map_err(|e| cfg_err(format!("{e}")))
    }

    pub fn g(&self) -> CliResult<f64> {
        Ok(match self.model.g {
            Some(g) => g,
            None => default_g(&self.lattice()?),
        })
    }

    pub fn chi_e_rule(&self) -> CliResult<ChiERule> {
        self.tn.chi_e_rule.parse().map_err(|e| cfg_err(format!("{e}")))
    }

    pub fn reference(&self) -> CliResult<Reference> {
        self.scaling.reference.parse().map_err(|e| cfg_err(format!("{e}")))
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            max_iters: self.optimizer.max_iters,
            gtol: self.optimizer.gtol,
            ftol: self.optimizer.ftol,
            ..LbfgsConfig::default()
        }
    }

    pub fn init_policy(&self) -> InitPolicy {
        match self.optimizer.init {
            InitChoice::Zeros => InitPolicy::Zeros,
            InitChoice::SmallRandom => InitPolicy::SmallRandom,
            InitChoice::UniformPi => InitPolicy::UniformPi,
        }
    }

    /// Evaluator for `choice` at the configured bond dimension.
    pub fn eval_config(&self, choice: MethodChoice) -> CliResult<EvalConfig> {
        let lat = self.lattice()?;
        let chi = self.tn.chi;
        let chi_e = self.chi_e_rule()?.chi_e(chi);
        let method = match choice {
            MethodChoice::Auto => match Method::default_for(&lat, chi) {
                Method::BoundaryMps { .. } => Method::BoundaryMps { chi_e },
                m => m,
            },
            MethodChoice::Su => Method::Su,
            MethodChoice::BoundaryMps => Method::BoundaryMps { chi_e },
            MethodChoice::Statevector => Method::Statevector,
        };
        Ok(EvalConfig { method, chi, regauge: self.tn.regauge })
    }

    /// Variance-scan evaluator: statevector when the system is small enough
    /// for exact diagonalization, otherwise the tensor-network default.
    pub fn diagnostics_eval(&self) -> CliResult<EvalConfig> {
        match self.diagnostics.evaluator {
            MethodChoice::Auto if self.lattice()?.n_sites() <= GROUND_STATE_CAP => {
                self.eval_config(MethodChoice::Statevector)
            }
            c => self.eval_config(c),
        }
    }

    pub fn r_grid(&self) -> CliResult<Vec<f64>> {
        match &self.diagnostics.r_grid {
            Some(g) => Ok(g.clone()),
            None => pepsvqe::landscape::log_grid(self.diagnostics.r_min, self.diagnostics.r_max, self.diagnostics.r_points)
                .map_err(|e| cfg_err(format!("{e}"))),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    }

    /// Output directory: explicit setting, else `$PEPSVQE_OUTPUT_ROOT/<name>`,
    /// else `runs/<name>`.
    pub fn output_dir(&self, subcommand: &str) -> PathBuf {
        match &self.output_dir {
            Some(d) => PathBuf::from(d),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
                root.join(subcommand)
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let lat = self.lattice()?;
        let g = self.g()?;
        if !g.is_finite() {
            return Err(cfg_err("g must be finite"));
        }
        if self.tn.chi == 0 {
            return Err(cfg_err("tn.chi must be >= 1"));
        }
        self.chi_e_rule()?;
        if self.chi_e_rule()?.chi_e(self.tn.chi) == 0 {
            return Err(cfg_err("chi_E must be >= 1"));
        }
        if matches!(self.tn.method, MethodChoice::BoundaryMps) && !lat.is_square() {
            return Err(cfg_err("boundary-mps expectations need a square lattice"));
        }
        if self.circuit.depth == 0 || self.circuit.depth_list.contains(&0) {
            return Err(cfg_err("circuit depths must be >= 1"));
        }
        if self.circuit.warm_depth == 0 {
            return Err(cfg_err("circuit.warm_depth must be >= 1"));
        }
        if !(self.optimizer.gtol > 0.0) || !(self.optimizer.ftol >= 0.0) {
            return Err(cfg_err("optimizer.gtol must be > 0 and ftol >= 0"));
        }
        if self.diagnostics.n_samples < 2 {
            return Err(cfg_err("diagnostics.n_samples must be >= 2"));
        }
        let grid = self.r_grid()?;
        if grid.iter().any(|r| !(*r >= 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("r grid must be nonnegative and strictly ascending"));
        }
        if self.scaling.n_points == 0 {
            return Err(cfg_err("scaling.n_points must be >= 1"));
        }
        let cl = &self.scaling.chi_list;
        if cl.is_empty() || cl[0] == 0 || cl.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("scaling.chi_list must be positive and strictly ascending"));
        }
        self.reference()?;
        if let Some(r) = self.scaling.r_max {
            if !(r >= 0.0) {
                return Err(cfg_err("scaling.r_max must be >= 0"));
            }
        }
        if self.ite.dtau_schedule.is_empty() || self.ite.dtau_schedule.iter().any(|d| !(*d > 0.0)) {
            return Err(cfg_err("ite.dtau_schedule must be nonempty and positive"));
        }
        if self.threads == Some(0) {
            return Err(cfg_err("threads must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("lattice = \"square:2x2\"\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[tn]\nchi = 2\nchie = 4\n").is_err());
        let c = RunConfig::from_toml("[tn]\nchi = 2\n").unwrap();
        assert_eq!(c.tn.chi, 2);
        assert_eq!(c.tn.chi_e_rule, "square");
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig { lattice: "heavyhex:28".into(), ..RunConfig::default() };
        c.validate().unwrap();
        assert_eq!(c.g().unwrap(), pepsvqe::hamiltonian::G_C_HEAVYHEX);
        c.tn.method = MethodChoice::BoundaryMps;
        assert!(c.validate().is_err());
        let c = RunConfig { lattice: "triangle:3".into(), ..RunConfig::default() };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.scaling.chi_list = vec![3, 2];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.tn.chi_e_rule = "cube".into();
        assert!(c.validate().is_err());
    }
}
