//! `eval`: RMSE of baselines, a full GP and SPN-GP with and without
//! boundary sharing over repeated seeded train/test splits.

use anyhow::Result;
use nalgebra::DMatrix;
use spngp::data::{baseline_predict, rmse, split, Baseline, Dataset, EvalReport, MethodResult};
use spngp::spn::PredictOptions;
use spngp::structure::{assign_overlap, Overlap, StructureConfig};
use spngp::SpnGp;

use crate::train::fit_model;
use crate::{phase, ExperimentConfig, Timings};

pub const FULL_GP: &str = "GP";
pub const SPN_GP: &str = "SPN-GP";
pub const SPN_GP_STAR: &str = "SPN-GP*";

pub fn predict_means(model: &SpnGp, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pm = phase("predict", model.predict(x, PredictOptions::default()))?;
    Ok(DMatrix::from_fn(x.nrows(), pm.len(), |i, j| pm[j].mean[i]))
}

/// Single-expert configuration: one region, one kernel.
pub fn full_gp_structure(cfg: &ExperimentConfig) -> StructureConfig {
    let mut s = StructureConfig::new(usize::MAX, vec![cfg.eval.full_gp_kernel.clone()]);
    s.noise = cfg.structure.noise;
    s.domain = cfg.structure.domain.clone();
    s.seed = cfg.seed;
    s
}

struct Run {
    seed: u64,
    results: Vec<(String, Result<(f64, Vec<f64>), String>)>,
}

fn score(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let r = phase("rmse", rmse(pred, truth))?;
    Ok((r.pooled, r.per_output))
}

fn one_run(cfg: &ExperimentConfig, data: &Dataset, r: usize, verbose: bool, timings: &mut Timings) -> Result<Run> {
    let seed = cfg.seed.wrapping_add(r as u64);
    let (train, test) = phase("split", split(data, cfg.eval.train_fraction, seed))?;
    let mut results = Vec::new();
    for b in Baseline::ALL {
        let p = timings.time(format!("run{r}/{}", b.name()), || phase(b.name(), baseline_predict(b, &train, &test.x)))?;
        results.push((b.name().to_string(), Ok(score(&p, &test.y)?)));
    }

    if train.len() <= cfg.eval.full_gp_cap {
        let mut s = full_gp_structure(cfg);
        s.seed = seed;
        let f = timings.time(format!("run{r}/{FULL_GP}"), || fit_model(&train, &s, cfg.optimizer.as_ref(), verbose, &mut Timings::default()))?;
        results.push((FULL_GP.into(), Ok(score(&predict_means(&f.model, &test.x)?, &test.y)?)));
    } else {
        results.push((
            FULL_GP.into(),
            Err(format!(
                "skipped: {} training rows exceed the feasibility cap of {}",
                train.len(),
                cfg.eval.full_gp_cap
            )),
        ));
    }

    let mut s = cfg.structure.clone();
    s.seed = seed;
    s.overlap = Overlap::None;
    let mut opt = cfg.optimizer.clone();
    if let Some(o) = &mut opt {
        o.seed = seed;
    }
    let plain = timings.time(format!("run{r}/{SPN_GP}"), || fit_model(&train, &s, opt.as_ref(), verbose, &mut Timings::default()))?;
    results.push((SPN_GP.into(), Ok(score(&predict_means(&plain.model, &test.x)?, &test.y)?)));

    // Shared boundary rows leave every leaf evidence, and so the posterior
    // weights, untouched; only the predictive conditioning changes.
    let star = timings.time(format!("run{r}/{SPN_GP_STAR}"), || -> Result<SpnGp> {
        let mut m = plain.model.clone();
        phase("assign_overlap", assign_overlap(&mut m, &cfg.eval.overlap))?;
        phase("fit_leaves", m.fit_leaves())?;
        Ok(m)
    })?;
    results.push((SPN_GP_STAR.into(), Ok(score(&predict_means(&star, &test.x)?, &test.y)?)));
    Ok(Run { seed, results })
}

/// Run the protocol and collect a report; timings are returned separately.
pub fn run(cfg: &ExperimentConfig, verbose: bool) -> Result<(EvalReport, Timings)> {
    let mut timings = Timings::default();
    let data = timings.time("load", || cfg.load_dataset())?;
    let mut runs = Vec::with_capacity(cfg.eval.runs);
    for r in 0..cfg.eval.runs {
        runs.push(one_run(cfg, &data, r, verbose, &mut timings)?);
    }
    let names: Vec<String> = runs[0].results.iter().map(|(n, _)| n.clone()).collect();
    let methods = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut m = MethodResult {
                method: name.clone(),
                runs: Vec::new(),
                per_output: Vec::new(),
                skipped: None,
            };
            for run in &runs {
                match &run.results[k].1 {
                    Ok((pooled, per)) => {
                        m.runs.push(*pooled);
                        m.per_output.push(per.clone());
                    }
                    Err(reason) => return MethodResult::skipped(name, reason.clone()),
                }
            }
            m
        })
        .collect();
    let report = EvalReport {
        dataset: cfg.dataset_name(),
        dataset_fingerprint: data.fingerprint.clone(),
        n_rows: data.len(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        train_fraction: cfg.eval.train_fraction,
        preprocessing: "targets centered on the training mean for GP methods; Ridge standardizes features \
                        internally; no other scaling"
            .into(),
        config_fingerprint: cfg.fingerprint(),
        library_version: spngp::VERSION.into(),
        methods,
    };
    Ok((report, timings))
}

pub const TABLE_FILE: &str = "eval_report.txt";
pub const CSV_FILE: &str = "eval_report.csv";
pub const TIMINGS_FILE: &str = "eval_timings.json";

pub fn write(cfg: &ExperimentConfig, report: &EvalReport, timings: &Timings) -> Result<()> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TABLE_FILE), report.to_table())?;
    std::fs::write(dir.join(CSV_FILE), report.to_csv())?;
    std::fs::write(dir.join(TIMINGS_FILE), timings.to_json())?;
    Ok(())
}
