//! Experiment configuration files (TOML).
//!
//! Every key is explicit and unknown keys are rejected. A single top-level
//! `seed` drives every random choice; the structure and optimizer sections
//! may not carry their own.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spngp::data::synth::{gen_heteroscedastic, gen_piecewise, gen_smooth};
use spngp::data::{load_csv, Dataset};
use spngp::hyperopt::OptimizerConfig;
use spngp::kernel::KernelFamily;
use spngp::math::fingerprint_bytes;
use spngp::structure::{KernelTemplate, Overlap, StructureConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const FULL_GP_CAP_ENV: &str = "SPNGP_FULL_GP_CAP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub structure: StructureConfig,
    /// Absent: hyperparameters stay at their initial (or fixed) values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Piecewise,
    Heteroscedastic,
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub generator: Generator,
    pub n: usize,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

/// Exactly one of `csv` and `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default = "comma")]
    pub delimiter: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

fn comma() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub runs: usize,
    pub train_fraction: f64,
    /// The full-GP baseline is skipped above this many training rows.
    pub full_gp_cap: usize,
    pub full_gp_kernel: KernelTemplate,
    /// Boundary sharing for the SPN-GP* variant.
    pub overlap: Overlap,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs: 5,
            train_fraction: 0.8,
            full_gp_cap: 2000,
            full_gp_kernel: KernelTemplate::new(KernelFamily::SquaredExponentialArd),
            overlap: Overlap::Count { count: 3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub min_points: Vec<usize>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    /// Fit the menu kernels once on this many training rows and hold them
    /// fixed for every expert size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate_subset: Option<usize>,
}

fn default_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl ExperimentConfig {
    /// Parse, apply the seed override and the full-GP cap from the
    /// environment, then validate. Relative paths resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path, seed_override: Option<u64>) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for (section, key) in [("structure", "seed"), ("optimizer", "seed")] {
            if raw.get(section).and_then(|s| s.get(key)).is_some() {
                bail!("[{section}] may not set `{key}`; use the top-level seed");
            }
        }
        let mut cfg: ExperimentConfig = toml::from_str(text).context("config does not match the expected keys")?;
        if cfg.version != CONFIG_VERSION {
            bail!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version);
        }
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        if let Ok(v) = std::env::var(FULL_GP_CAP_ENV) {
            cfg.eval.full_gp_cap = v
                .trim()
                .parse()
                .with_context(|| format!("{FULL_GP_CAP_ENV}={v:?} is not a row count"))?;
        }
        cfg.sync_seeds();
        if let Some(p) = &cfg.data.csv {
            cfg.data.csv = Some(base_dir.join(p));
        }
        cfg.output.dir = base_dir.join(&cfg.output.dir);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, seed_override).with_context(|| format!("in {}", path.display()))
    }

    /// Copy the experiment seed into the sections that consume one.
    pub fn sync_seeds(&mut self) {
        self.structure.seed = self.seed;
        if let Some(o) = &mut self.optimizer {
            o.seed = self.seed;
        }
    }

    pub fn check(&self) -> Result<()> {
        match (&self.data.csv, &self.data.synthetic) {
            (Some(_), None) => {
                if self.data.targets.is_empty() {
                    bail!("[data] csv needs at least one target column");
                }
                if !self.data.delimiter.is_ascii() {
                    bail!("[data] delimiter must be a single ASCII character");
                }
            }
            (None, Some(s)) => {
                if !self.data.targets.is_empty() {
                    bail!("[data] targets only apply to csv input");
                }
                if s.n < 10 || s.dim == 0 {
                    bail!("[data.synthetic] needs n >= 10 and dim >= 1");
                }
                if s.generator != Generator::Smooth && s.dim != 1 {
                    bail!("[data.synthetic] {:?} is one-dimensional", s.generator);
                }
            }
            _ => bail!("[data] needs exactly one of `csv` and `synthetic`"),
        }
        if let Some(o) = &self.optimizer {
            o.check()?;
        }
        let e = &self.eval;
        if e.runs == 0 || !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            bail!("[eval] needs runs >= 1 and 0 < train_fraction < 1");
        }
        if let Some(s) = &self.sweep {
            if s.min_points.is_empty() || s.min_points.contains(&0) {
                bail!("[sweep] min_points must list positive sizes");
            }
            if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
                bail!("[sweep] needs 0 < train_fraction < 1");
            }
            if s.calibrate_subset.is_some() && self.optimizer.is_none() {
                bail!("[sweep] calibrate_subset needs an [optimizer] section");
            }
        }
        Ok(())
    }

    /// Content hash of the effective configuration.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        fingerprint_bytes(text.as_bytes())
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.data.name {
            return n.clone();
        }
        match (&self.data.csv, &self.data.synthetic) {
            (Some(p), _) => p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            (_, Some(s)) => format!("{:?}", s.generator).to_lowercase(),
            _ => "data".into(),
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        if let Some(p) = &self.data.csv {
            let d = load_csv(p, &self.data.targets, self.data.delimiter as u8)
                .with_context(|| format!("loading {}", p.display()))?;
            return Ok(d);
        }
        let s = self.data.synthetic.as_ref().expect("checked");
        Ok(match s.generator {
            Generator::Piecewise => gen_piecewise(self.seed, s.n)?,
            Generator::Heteroscedastic => gen_heteroscedastic(self.seed, s.n)?.0,
            Generator::Smooth => gen_smooth(self.seed, s.n, s.dim)?,
        })
    }
}
