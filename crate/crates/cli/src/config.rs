use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spurcl_core::error::{Error, Result};
use spurcl_core::eval::ProtocolConfig;
use spurcl_core::features::DEFAULT_TAU;
use spurcl_core::io::manifest::{parse_json, read_manifest_file};
use spurcl_core::scenario::{ScenarioSpec, SynthScenarioSpec};
use spurcl_core::train::{Method, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFiles {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Evaluate the clean test set after every epoch.
    pub per_epoch: bool,
    pub protocol: ProtocolConfig,
    /// Checkpoint whose trunk replaces the random projection in `localspur`.
    pub trunk: Option<PathBuf>,
    /// SPFV feature files used by `localspur` instead of the scenario.
    pub features: Option<FeatureFiles>,
    pub tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { per_epoch: false, protocol: ProtocolConfig::default(), trunk: None, features: None, tau: DEFAULT_TAU }
    }
}

/// Lists to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub method: Vec<Method>,
    pub correlation_p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lr: Vec<f64>,
    pub n_per_class: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    /// Scenario manifest, as an alternative to an inline `scenario`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid: GridConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("spurcl_out")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Some(ScenarioSpec::Synth(SynthScenarioSpec::new(0.5, 10, 0))),
            manifest: None,
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
            output_dir: default_output_dir(),
            seeds: default_seeds(),
            grid: GridConfig::default(),
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub correlation_p: Option<f64>,
    pub lambda: f64,
    pub lr: f64,
    pub n_per_class: usize,
}

impl Cell {
    pub fn apply(&self, base: &TrainerConfig, seed: u64) -> TrainerConfig {
        TrainerConfig {
            method: self.method,
            lambda_penalty: self.lambda,
            lr: self.lr,
            n_per_class: self.n_per_class,
            seed,
            ..base.clone()
        }
    }

    pub fn run_id(&self, seed: u64) -> String {
        let p = self.correlation_p.map_or_else(|| "na".to_owned(), |p| p.to_string());
        format!("{}_p{p}_lam{}_lr{}_n{}_s{seed}", self.method, self.lambda, self.lr, self.n_per_class)
    }
}

fn or_base<T: Clone>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = parse_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.manifest.as_mut().map(fix);
        cfg.trainer.pretrained_trunk.as_mut().map(fix);
        cfg.eval.trunk.as_mut().map(fix);
        if let Some(f) = cfg.eval.features.as_mut() {
            fix(&mut f.train);
            fix(&mut f.test);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        match (&self.scenario, &self.manifest) {
            (Some(_), Some(_)) => return Err(Error::config("manifest", "give either `scenario` or `manifest`, not both")),
            (None, None) if self.eval.features.is_none() => {
                return Err(Error::config("scenario", "a scenario or a manifest is required"))
            }
            _ => {}
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        self.trainer.validate()?;
        for (i, p) in self.grid.correlation_p.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::config(format!("grid.correlation_p[{i}]"), format!("{p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// The scenario spec, reading the manifest when one is configured.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        match (&self.scenario, &self.manifest) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(m)) => Ok(read_manifest_file(m)?.scenario),
            (None, None) => Err(Error::config("scenario", "a scenario or a manifest is required")),
        }
    }

    /// Base directory for relative CIFAR paths.
    pub fn data_base(&self) -> Option<PathBuf> {
        self.manifest.as_ref().and_then(|m| m.parent().map(Path::to_path_buf))
    }

    pub fn cells(&self, base_p: Option<f64>) -> Vec<Cell> {
        let t = &self.trainer;
        let ps: Vec<Option<f64>> = if self.grid.correlation_p.is_empty() {
            vec![base_p]
        } else {
            self.grid.correlation_p.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for method in or_base(&self.grid.method, t.method) {
            for &correlation_p in &ps {
                for lambda in or_base(&self.grid.lambda, t.lambda_penalty) {
                    for lr in or_base(&self.grid.lr, t.lr) {
                        for n_per_class in or_base(&self.grid.n_per_class, t.n_per_class) {
                            out.push(Cell { method, correlation_p, lambda, lr, n_per_class });
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cross_product() {
        let mut cfg = RunConfig::default();
        cfg.grid.method = vec![Method::Finetune, Method::Replay];
        cfg.grid.correlation_p = vec![0.25, 0.5, 1.0];
        cfg.grid.lr = vec![0.1, 0.01];
        let cells = cfg.cells(Some(0.5));
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].run_id(4), "finetune_p0.25_lam1_lr0.1_n100_s4");
    }

    #[test]
    fn unknown_method_lists_choices() {
        let err = parse_json::<RunConfig>(r#"{"trainer": {"method": "sgdx"}}"#).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("trainer.method"), "{text}");
        for m in Method::ALL {
            assert!(text.contains(m.name()), "{text}");
        }
    }
}
