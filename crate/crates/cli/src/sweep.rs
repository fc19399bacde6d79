//! `sweep`: test RMSE against the number of training points per expert.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use serde::Serialize;
use spngp::data::{rmse, split, Dataset};
use spngp::hyperopt::optimize_leaf;
use spngp::kernel::{KernelFamily, KernelSpec};
use spngp::structure::{build, KernelTemplate, StructureConfig};

use crate::evaluate::predict_means;
use crate::train::fit_model;
use crate::{header_line, phase, ExperimentConfig, Timings};

pub const CSV_FILE: &str = "sweep.csv";
pub const TIMINGS_FILE: &str = "sweep_timings.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub min_points: usize,
    pub leaf_regions: usize,
    pub mean_points_per_expert: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config_fingerprint: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Menu actually used, after calibration.
    pub kernels: Vec<KernelTemplate>,
    pub noise: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = header_line(&self.config_fingerprint);
        s.push('\n');
        s.push_str("min_points,leaf_regions,mean_points_per_expert,rmse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.min_points, r.leaf_regions, r.mean_points_per_expert, r.rmse);
        }
        s
    }
}

/// Menu entry with every hyperparameter pinned to those of `k`.
fn pinned(t: &KernelTemplate, k: &KernelSpec) -> KernelTemplate {
    let p: Vec<f64> = k.log_params().iter().map(|v| v.exp()).collect();
    let mut out = t.clone();
    out.signal = Some(p[0]);
    match k.family() {
        KernelFamily::Linear => {}
        KernelFamily::SquaredExponentialArd | KernelFamily::Matern => out.lengthscales = Some(p[1..].to_vec()),
        KernelFamily::Periodic => {
            out.lengthscales = Some(vec![p[1]]);
            out.period = Some(p[2]);
        }
    }
    out
}

/// Fit each menu kernel as a single GP on the first `n` training rows and
/// pin the results. The noise of the first menu entry is shared by all.
fn calibrate(cfg: &ExperimentConfig, train: &Dataset, n: usize) -> Result<(Vec<KernelTemplate>, f64)> {
    let opt = cfg.optimizer.as_ref().expect("checked");
    let idx: Vec<usize> = (0..n.min(train.len())).collect();
    let sub = phase("calibrate", train.subset(&idx))?;
    let mut menu = Vec::new();
    let mut noise = None;
    for t in &cfg.structure.kernels {
        let mut s = StructureConfig::new(usize::MAX, vec![t.clone()]);
        s.noise = cfg.structure.noise;
        let mut m = phase("calibrate", build(&sub, &s))?;
        let id = m.leaf_ids()[0];
        let leaf = m.leaf_mut(id).expect("leaf");
        phase("calibrate", leaf.fit())?;
        phase("calibrate", optimize_leaf(leaf, opt, cfg.seed))?;
        menu.push(pinned(t, leaf.kernel()));
        noise.get_or_insert(leaf.noise_std());
    }
    Ok((menu, noise.expect("non-empty menu")))
}

pub fn run(cfg: &ExperimentConfig, verbose: bool) -> Result<(SweepResult, Timings)> {
    let Some(sw) = &cfg.sweep else {
        bail!("config has no [sweep] section");
    };
    let mut timings = Timings::default();
    let data = timings.time("load", || cfg.load_dataset())?;
    let (train, test) = phase("split", split(&data, sw.train_fraction, cfg.seed))?;
    let mut structure = cfg.structure.clone();
    let mut optimizer = cfg.optimizer.clone();
    if let Some(n) = sw.calibrate_subset {
        let (menu, noise) = timings.time("calibrate", || calibrate(cfg, &train, n))?;
        structure.kernels = menu;
        structure.noise = Some(noise);
        optimizer = None;
    }
    let mut rows = Vec::new();
    for &o in &sw.min_points {
        let mut s = structure.clone();
        s.min_points = o;
        let f = timings.time(format!("O={o}"), || fit_model(&train, &s, optimizer.as_ref(), verbose, &mut Timings::default()))?;
        let pred = predict_means(&f.model, &test.x)?;
        rows.push(SweepRow {
            min_points: o,
            leaf_regions: f.graph.leaf_regions,
            mean_points_per_expert: f.graph.mean_points_per_leaf,
            rmse: phase("rmse", rmse(&pred, &test.y))?.pooled,
        });
    }
    Ok((
        SweepResult {
            config_fingerprint: cfg.fingerprint(),
            n_train: train.len(),
            n_test: test.len(),
            kernels: structure.kernels,
            noise: structure.noise,
            rows,
        },
        timings,
    ))
}

pub fn write(cfg: &ExperimentConfig, res: &SweepResult, timings: &Timings) -> Result<()> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CSV_FILE), res.to_csv())?;
    std::fs::write(dir.join(TIMINGS_FILE), timings.to_json())?;
    Ok(())
}
