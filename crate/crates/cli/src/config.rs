//! Project configuration file. Parsing is strict: unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pcecal::bpdn::{log_grid, BpdnConfig};
use pcecal::calibrate::{CalibrationConfig, HyperPrior, Tuning};
use pcecal::{ParameterSpace, ParameterSpec};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub parameters: Vec<ParameterBlock>,
    #[serde(default)]
    pub design: DesignBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub fit: FitBlock,
    #[serde(default)]
    pub calibration: CalibrationBlock,
    #[serde(default)]
    pub paths: PathsBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBlock {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Smolyak,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignBlock {
    pub kind: DesignKind,
    pub level: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DesignBlock {
    fn default() -> Self {
        DesignBlock {
            kind: DesignKind::Smolyak,
            level: 5,
            samples: 954,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Bundled smooth model, optionally with hashed noise.
    Smooth,
    /// A polynomial read from a coefficient file, optionally noisy.
    Planted,
    /// Any program driven through per-node input/output files.
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    /// Noise standard deviation; for `smooth` the default is 5% of its range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    pub noise_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_template: Option<PathBuf>,
    pub input_file: String,
    pub output_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_column: Option<usize>,
    pub timeout_secs: u64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            kind: ModelKind::Smooth,
            noise_sigma: None,
            noise_seed: 0,
            coefficients: None,
            command: None,
            input_template: None,
            input_file: "model.in".into(),
            output_file: "output.txt".into(),
            output_key: None,
            output_column: None,
            timeout_secs: 3600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nisp,
    Bpdn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitBlock {
    pub method: Method,
    pub order: usize,
    #[serde(default)]
    pub bpdn: BpdnBlock,
}

impl Default for FitBlock {
    fn default() -> Self {
        FitBlock {
            method: Method::Bpdn,
            order: 5,
            bpdn: BpdnBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpdnBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub cv_folds: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_count: usize,
    pub max_iters: usize,
    pub opt_tol: f64,
    pub seed: u64,
}

impl Default for BpdnBlock {
    fn default() -> Self {
        let d = BpdnConfig::default();
        BpdnBlock {
            delta: None,
            cv_folds: d.cv_folds,
            delta_min: d.delta_grid[0],
            delta_max: d.delta_grid[d.delta_grid.len() - 1],
            delta_count: d.delta_grid.len(),
            max_iters: d.max_iters,
            opt_tol: d.opt_tol,
            seed: d.seed,
        }
    }
}

impl BpdnBlock {
    pub fn to_config(&self) -> Result<BpdnConfig> {
        if self.delta_count == 0 || !(self.delta_min > 0.0 && self.delta_min < self.delta_max) {
            bail!("fit.bpdn: need 0 < delta_min < delta_max and delta_count >= 1");
        }
        let cfg = BpdnConfig {
            delta: self.delta,
            cv_folds: self.cv_folds,
            delta_grid: log_grid(self.delta_min, self.delta_max, self.delta_count),
            max_iters: self.max_iters,
            opt_tol: self.opt_tol,
            seed: self.seed,
        };
        cfg.validate().context("fit.bpdn")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationBlock {
    pub alpha: f64,
    pub beta: f64,
    pub ke: f64,
    pub iterations: usize,
    /// Defaults to 20% of `iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Canonical-unit random-walk scales; defaults to 0.1 per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_scales: Option<Vec<f64>>,
    pub seed: u64,
    pub tune: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_s: Option<f64>,
}

impl Default for CalibrationBlock {
    fn default() -> Self {
        let h = HyperPrior::default();
        CalibrationBlock {
            alpha: h.alpha,
            beta: h.beta,
            ke: 17.0,
            iterations: 1_000_000,
            burn_in: None,
            proposal_scales: None,
            seed: 0,
            tune: false,
            fixed_s: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsBlock {
    pub work_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsBlock {
    fn default() -> Self {
        PathsBlock {
            work_dir: "work".into(),
            output_dir: "out".into(),
        }
    }
}

impl ProjectConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ProjectConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.paths.work_dir);
        rebase(&mut cfg.paths.output_dir);
        if let Some(p) = cfg.model.coefficients.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.model.input_template.as_mut() {
            rebase(p);
        }
        for p in [&cfg.model.coefficients, &cfg.model.input_template].into_iter().flatten() {
            if !p.exists() {
                bail!("{}: referenced file {} does not exist", path.display(), p.display());
            }
        }
        Ok(cfg)
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        if self.parameters.is_empty() {
            bail!("config has no [[parameters]] entries");
        }
        let specs = self
            .parameters
            .iter()
            .map(|p| {
                let s = ParameterSpec::new(p.name.clone(), p.lower, p.upper);
                match p.default {
                    Some(d) => s.with_default(d),
                    None => s,
                }
            })
            .collect();
        Ok(ParameterSpace::new(specs)?)
    }

    pub fn calibration(&self) -> Result<CalibrationConfig> {
        let space = self.space()?;
        let c = &self.calibration;
        let mut cfg = CalibrationConfig::new(space);
        cfg.hyper = HyperPrior::new(c.alpha, c.beta)?;
        cfg.ke = c.ke;
        cfg.n_iters = c.iterations;
        cfg.burn_in = c.burn_in.unwrap_or(c.iterations / 5);
        if let Some(s) = &c.proposal_scales {
            cfg.proposal_scales = s.clone();
        }
        cfg.seed = c.seed;
        cfg.fixed_s = c.fixed_s;
        cfg.tuning = c.tune.then(Tuning::default);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_a_location() {
        let text = "[design]\nkind = \"smolyak\"\nlevel = 2\nsamples = 10\nseed = 0\nlevl = 3\n";
        let err = toml::from_str::<ProjectConfig>(text).unwrap_err().to_string();
        assert!(err.contains("levl"), "{err}");
        assert!(err.contains("line 6"), "{err}");
    }

    #[test]
    fn defaults_round_trip() {
        let cfg: ProjectConfig = toml::from_str("").unwrap();
        let back: ProjectConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back.fit.bpdn.delta_count, cfg.fit.bpdn.delta_count);
        assert!(cfg.space().is_err());
        assert!(cfg.fit.bpdn.to_config().is_ok());
    }
}
