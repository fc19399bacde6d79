//! `train`: structure, leaf fits, optional hyperparameter search, posterior
//! update and a persisted model.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use spngp::data::Dataset;
use spngp::hyperopt::{optimize_model, ModelOptReport, OptimizerConfig, StopReason};
use spngp::spn::NodeKind;
use spngp::structure::{assign_overlap, build_region_graph, build_spn, complexity_report, ComplexityReport, StructureConfig};
use spngp::SpnGp;

use crate::{phase, ExperimentConfig, Timings};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "train_report.json";
pub const TIMINGS_FILE: &str = "train_timings.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphSummary {
    pub regions: usize,
    pub partitions: usize,
    pub leaf_regions: usize,
    pub indivisible_regions: usize,
    pub mean_points_per_leaf: f64,
}

/// A trained model plus what happened on the way.
pub struct Fitted {
    pub model: SpnGp,
    pub graph: GraphSummary,
    pub optimizer: Option<ModelOptReport>,
    /// Network log evidence right before the posterior update.
    pub log_evidence: f64,
}

/// Region graph → SPN → overlap → leaf fits → optional optimization →
/// posterior update.
pub fn fit_model(
    data: &Dataset,
    structure: &StructureConfig,
    optimizer: Option<&OptimizerConfig>,
    verbose: bool,
    timings: &mut Timings,
) -> Result<Fitted> {
    let graph = timings.time("region_graph", || phase("build_region_graph", build_region_graph(&data.x, structure)))?;
    let summary = GraphSummary {
        regions: graph.regions.len(),
        partitions: graph.partitions.len(),
        leaf_regions: graph.leaf_regions().len(),
        indivisible_regions: graph.indivisible.iter().filter(|b| **b).count(),
        mean_points_per_leaf: graph.mean_points_per_leaf(),
    };
    let mut model = timings.time("build_spn", || phase("build_spn", build_spn(&graph, data, structure)))?;
    timings.time("overlap", || phase("assign_overlap", assign_overlap(&mut model, &structure.overlap)))?;
    timings.time("fit_leaves", || phase("fit_leaves", model.fit_leaves()))?;
    let opt = match optimizer {
        Some(o) => {
            let rep = timings.time("optimize", || phase("optimize_model", optimize_model(&mut model, o)))?;
            if verbose {
                eprintln!("label\titer\tobjective\tgrad_norm\tstep");
                for (label, r) in &rep.runs {
                    for t in &r.trace {
                        eprintln!("{label}\t{}\t{}\t{}\t{}", t.iter, t.objective, t.grad_norm, t.step);
                    }
                }
            }
            Some(rep)
        }
        None => None,
    };
    let log_evidence = timings.time("posterior_update", || phase("posterior_update", model.posterior_update()))?;
    Ok(Fitted {
        model,
        graph: summary,
        optimizer: opt,
        log_evidence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafSummary {
    pub node: usize,
    pub region: usize,
    pub output: usize,
    pub kernel: String,
    pub log_params: Vec<f64>,
    pub noise_std: f64,
    pub n_data: usize,
    pub n_overlap: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Posterior weight under each parent sum node.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerSummary {
    pub label: String,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub library_version: String,
    pub config_fingerprint: String,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub n_rows: usize,
    pub rejected_rows: usize,
    pub graph: GraphSummary,
    pub nodes: usize,
    /// Formatted, since the count can exceed the range of exact integers.
    pub induced_trees: String,
    pub log_evidence: f64,
    pub complexity: ComplexityReport,
    pub optimizer: Vec<OptimizerSummary>,
    pub leaves: Vec<LeafSummary>,
}

pub fn leaf_summaries(model: &SpnGp) -> Vec<LeafSummary> {
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); model.nodes().len()];
    for n in model.nodes() {
        if let NodeKind::Sum { children, log_weights } = &n.kind {
            for (c, w) in children.iter().zip(log_weights) {
                weights[c.0].push(w.exp());
            }
        }
    }
    model
        .leaf_ids()
        .into_iter()
        .map(|id| {
            let leaf = model.leaf(id).expect("leaf");
            let node = model.node(id);
            LeafSummary {
                node: id.0,
                region: leaf.region(),
                output: node.out_scope[0],
                kernel: leaf.kernel().label(),
                log_params: leaf.kernel().log_params().to_vec(),
                noise_std: leaf.noise_std(),
                n_data: leaf.n_data(),
                n_overlap: leaf.overlap_count(),
                lower: node.region.lower.clone(),
                upper: node.region.upper.clone(),
                weights: weights[id.0].clone(),
            }
        })
        .collect()
}

pub struct TrainOutcome {
    pub model: SpnGp,
    pub report: TrainReport,
    pub timings: Timings,
}

/// Train on the whole configured dataset.
pub fn run(cfg: &ExperimentConfig, verbose: bool) -> Result<TrainOutcome> {
    let mut timings = Timings::default();
    let data = timings.time("load", || cfg.load_dataset())?;
    let fitted = fit_model(&data, &cfg.structure, cfg.optimizer.as_ref(), verbose, &mut timings)?;
    let model = fitted.model;
    let trees = phase("count_induced_trees", model.count_induced_trees())?;
    let report = TrainReport {
        library_version: spngp::VERSION.into(),
        config_fingerprint: cfg.fingerprint(),
        dataset: cfg.dataset_name(),
        dataset_fingerprint: data.fingerprint.clone(),
        n_rows: data.len(),
        rejected_rows: data.rejected_rows,
        graph: fitted.graph,
        nodes: model.nodes().len(),
        induced_trees: format!("{trees:e}"),
        log_evidence: fitted.log_evidence,
        complexity: phase("complexity_report", complexity_report(&model))?,
        optimizer: fitted
            .optimizer
            .map(|r| {
                r.runs
                    .into_iter()
                    .map(|(label, o)| OptimizerSummary {
                        label,
                        initial_objective: o.initial_objective,
                        objective: o.objective,
                        iterations: o.trace.len(),
                        stop: o.stop,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        leaves: leaf_summaries(&model),
    };
    Ok(TrainOutcome { model, report, timings })
}

/// Files written by [`write`].
pub struct TrainFiles {
    pub model: PathBuf,
    pub report: PathBuf,
    pub timings: PathBuf,
}

pub fn write(cfg: &ExperimentConfig, out: &TrainOutcome) -> Result<TrainFiles> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = TrainFiles {
        model: dir.join(MODEL_FILE),
        report: dir.join(REPORT_FILE),
        timings: dir.join(TIMINGS_FILE),
    };
    phase("serialize", out.model.save(&files.model, &out.report.config_fingerprint))?;
    std::fs::write(&files.report, serde_json::to_string_pretty(&out.report)? + "\n")?;
    std::fs::write(&files.timings, out.timings.to_json())?;
    Ok(files)
}
