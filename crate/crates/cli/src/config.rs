//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ivpinn::mesh::DiscretizationConfig;
use ivpinn::problems::{case_by_name, TestCase};
use ivpinn::training::{SecondOrder, TrainingConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ivpinn,
    Vpinn,
    OracleInterp,
    Infsup,
    ZeroData,
    Parametric,
    HyperparamSweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    /// Explicit list of cells per side; overrides the doubling sequence.
    pub nx: Option<Vec<usize>>,
    pub initial_nx: Option<usize>,
    #[serde(default)]
    pub refinements: usize,
}

impl MeshSpec {
    pub fn sequence(&self) -> Result<Vec<usize>, String> {
        let seq = match (&self.nx, self.initial_nx) {
            (Some(list), _) => list.clone(),
            (None, Some(n0)) => (0..=self.refinements).map(|k| n0 << k).collect(),
            (None, None) => return Err("[mesh] needs `nx` or `initial_nx`".into()),
        };
        if seq.is_empty() || seq.contains(&0) {
            return Err("[mesh] sequence must be nonempty with positive entries".into());
        }
        Ok(seq)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_width")]
    pub width: usize,
}

fn default_hidden() -> usize {
    3
}

fn default_width() -> usize {
    20
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            width: default_width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondOrderSpec {
    Auto,
    Bfgs,
    Lbfgs,
    Off,
}

/// Optional overrides of the training defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub adam_epochs: Option<usize>,
    pub adam_lr0: Option<f64>,
    pub lr_half_life: Option<f64>,
    pub second_order: Option<SecondOrderSpec>,
    pub max_iterations: Option<usize>,
    pub lbfgs_memory: Option<usize>,
    pub grad_tol: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub monitor_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricSpec {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    /// Unseen parameter values; `n_test` midpoints of a uniform partition
    /// of the range when absent.
    pub test_values: Option<Vec<f64>>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
}

fn default_n_train() -> usize {
    13
}

fn default_n_test() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub case: Option<String>,
    #[serde(default = "default_k_test")]
    pub k_test: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Run the mesh rows on separate threads.
    #[serde(default)]
    pub parallel: bool,
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    pub parametric: Option<ParametricSpec>,
    pub sweep: Option<SweepSpec>,
}

fn default_k_test() -> usize {
    1
}

fn default_q() -> usize {
    3
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn case_name(&self) -> &str {
        match (&self.case, self.mode) {
            (Some(c), _) => c,
            (None, Mode::ZeroData) => "zero-1d",
            (None, Mode::Parametric) => "parametric",
            (None, _) => "smooth",
        }
    }

    pub fn test_case(&self) -> Result<TestCase, String> {
        case_by_name(self.case_name(), None).map_err(|e| e.to_string())
    }

    pub fn discretization(&self) -> Result<DiscretizationConfig, String> {
        DiscretizationConfig::new(self.k_test, self.q).map_err(|e| e.to_string())
    }

    /// Checks that every field the mode needs is present and consistent.
    pub fn validate(&self) -> Result<(), String> {
        self.discretization()?;
        let case = self.test_case()?;
        self.training_config().validate().map_err(|e| e.to_string())?;
        if self.network.hidden == 0 || self.network.width == 0 {
            return Err("[network] needs at least one hidden layer of positive width".into());
        }
        let n_meshes = match &self.mesh {
            Some(m) => m.sequence()?.len(),
            None => return Err("every mode needs a [mesh] section".into()),
        };
        match self.mode {
            Mode::ZeroData if !self.case_name().starts_with("zero") => {
                return Err("mode zero-data needs case zero-1d or zero-2d".into());
            }
            Mode::Parametric => {
                if self.case_name() != "parametric" {
                    return Err("mode parametric needs case parametric".into());
                }
                if let Some(p) = &self.parametric {
                    if p.n_train == 0 {
                        return Err("[parametric] n_train must be positive".into());
                    }
                }
            }
            Mode::HyperparamSweep => match &self.sweep {
                Some(s) if !s.layers.is_empty() && !s.widths.is_empty() && !s.layers.contains(&0) && !s.widths.contains(&0) => {}
                _ => return Err("mode hyperparam-sweep needs [sweep] with nonempty positive `layers` and `widths`".into()),
            },
            Mode::Vpinn | Mode::Ivpinn | Mode::OracleInterp | Mode::Infsup => {
                if case.problem.parameter.is_some() && self.mode != Mode::Infsup {
                    return Err(format!("mode {:?} does not take the parametric case", self.mode));
                }
            }
            Mode::ZeroData => {}
        }
        if matches!(self.mode, Mode::HyperparamSweep | Mode::Parametric) && n_meshes != 1 {
            return Err(format!("mode {:?} uses exactly one mesh", self.mode));
        }
        Ok(())
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        let d = TrainingConfig::default();
        TrainingConfig {
            adam_epochs: t.adam_epochs.unwrap_or(d.adam_epochs),
            adam_lr0: t.adam_lr0.unwrap_or(d.adam_lr0),
            lr_half_life: t.lr_half_life.unwrap_or(d.lr_half_life),
            second_order: match t.second_order {
                None | Some(SecondOrderSpec::Auto) => SecondOrder::Auto,
                Some(SecondOrderSpec::Bfgs) => SecondOrder::Bfgs,
                Some(SecondOrderSpec::Lbfgs) => SecondOrder::Lbfgs,
                Some(SecondOrderSpec::Off) => SecondOrder::Off,
            },
            max_iterations: t.max_iterations.unwrap_or(d.max_iterations),
            lbfgs_memory: t.lbfgs_memory.unwrap_or(d.lbfgs_memory),
            grad_tol: t.grad_tol.unwrap_or(d.grad_tol),
            c1: t.c1.unwrap_or(d.c1),
            c2: t.c2.unwrap_or(d.c2),
            checkpoint_every: t.checkpoint_every.unwrap_or(d.checkpoint_every),
            monitor_every: t.monitor_every.unwrap_or(d.monitor_every),
            seed: self.seed,
            ..d
        }
    }

    pub fn test_values(&self) -> Vec<f64> {
        let spec = self.parametric.clone().unwrap_or(ParametricSpec {
            n_train: default_n_train(),
            test_values: None,
            n_test: default_n_test(),
        });
        match spec.test_values {
            Some(v) => v,
            None => {
                let (a, b) = ivpinn::problems::PARAMETRIC_RANGE;
                let n = spec.n_test;
                (0..n).map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64).collect()
            }
        }
    }

    pub fn n_train(&self) -> usize {
        self.parametric.as_ref().map_or(default_n_train(), |p| p.n_train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_sequence_and_defaults() {
        let cfg = ExperimentConfig::parse(
            "mode = \"oracle-interp\"\ncase = \"smooth\"\n[mesh]\ninitial_nx = 4\nrefinements = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.mesh.unwrap().sequence().unwrap(), vec![4, 8, 16, 32]);
        assert_eq!((cfg.k_test, cfg.q), (1, 3));
    }

    #[test]
    fn mode_specific_fields_are_required() {
        assert!(ExperimentConfig::parse("mode = \"ivpinn\"\n").unwrap_err().contains("[mesh]"));
        assert!(ExperimentConfig::parse("mode = \"hyperparam-sweep\"\n[mesh]\nnx = [4]\n").unwrap_err().contains("[sweep]"));
        assert!(ExperimentConfig::parse("mode = \"zero-data\"\ncase = \"smooth\"\n[mesh]\nnx = [1]\n").is_err());
        assert!(ExperimentConfig::parse("mode = \"ivpinn\"\nk_test = 3\nq = 3\n[mesh]\nnx = [1]\n").is_err());
        assert!(ExperimentConfig::parse("mode = \"ivpinn\"\ntypo = 1\n[mesh]\nnx = [1]\n").is_err());
        assert!(ExperimentConfig::parse("mode = \"ivpinn\"\n[mesh]\nnx = [1]\n[training]\nc1 = 0.95\n").is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                n += 1;
            }
        }
        assert!(n >= 8);
    }
}
