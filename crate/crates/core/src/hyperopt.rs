//! Marginal-likelihood maximization of leaf hyperparameters.
//!
//! The ascent is projected gradient ascent in log-parameter space with
//! Barzilai–Borwein trial steps and Armijo backtracking, so accepted steps
//! never decrease the objective.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{evidence_and_grad, GpLeaf};
use crate::kernel::KernelSpec;
use crate::math::{logsumexp, std_dev};
use crate::spn::{NodeId, NodeKind, SpnGp};

const LOG_PARAM_BOUND: f64 = 12.0;
const NOISE_FLOOR_REL: f64 = 1e-4;
const NOISE_FLOOR_ABS: f64 = 1e-9;
const ARMIJO_C1: f64 = 1e-4;
const RESTART_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    #[default]
    Independent,
    /// One shared parameter vector per kernel family, fitted on the evidence
    /// of the whole network.
    TiedPerKernelFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when ‖projected gradient‖ ≤ grad_tol·(1 + |objective|).
    pub grad_tol: f64,
    pub initial_step: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub restarts: usize,
    pub tie_mode: TieMode,
    pub optimize_noise: bool,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            initial_step: 0.1,
            backtrack: 0.5,
            min_step: 1e-12,
            restarts: 0,
            tie_mode: TieMode::Independent,
            optimize_noise: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.grad_tol) || !pos(self.initial_step) || !pos(self.min_step) {
            return Err(Error::arg("optimizer tolerances and steps must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::arg("backtrack ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    MaxIters,
    MinStep,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptResult {
    pub params: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub grad_norm: f64,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Gradient with the components that push against an active bound removed.
fn projected_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| {
            let blocked = (*xi <= lo[i] && *gi < 0.0) || (*xi >= hi[i] && *gi > 0.0);
            if blocked {
                0.0
            } else {
                gi * gi
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// Maximize `f` over the box `[lo, hi]` from `x0`. `f` returns the objective
/// and its gradient; a failed evaluation during a line search counts as a
/// rejected trial point.
pub fn maximize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &OptimizerConfig) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Numerical {
            region: 0,
            reason: format!("objective {fx} at the starting point"),
        });
    }
    let initial_objective = fx;
    let gnorm0 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut step = cfg.initial_step / gnorm0.max(1.0);
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut pg = projected_norm(&x, &g, lo, hi);
    for iter in 0..cfg.max_iters {
        if pg <= cfg.grad_tol * (1.0 + fx.abs()) {
            stop = StopReason::GradTol;
            break;
        }
        let mut t = step;
        let accepted = loop {
            let mut xn: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            project(&mut xn, lo, hi);
            let d: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if d.iter().all(|v| *v == 0.0) {
                break None;
            }
            if let Ok((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && gnew.iter().all(|v| v.is_finite()) && fnew >= fx + ARMIJO_C1 * gd {
                    break Some((xn, fnew, gnew, t));
                }
            }
            t *= cfg.backtrack;
            if t < cfg.min_step {
                break None;
            }
        };
        let Some((xn, fnew, gnew, t_used)) = accepted else {
            stop = StopReason::MinStep;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        // ascent: curvature of −f along s is −sᵀy
        step = if sy < 0.0 { ss / -sy } else { 2.0 * t_used };
        step = step.clamp(cfg.min_step, 1e6);
        x = xn;
        fx = fnew;
        g = gnew;
        pg = projected_norm(&x, &g, lo, hi);
        trace.push(TraceRow {
            iter,
            objective: fx,
            grad_norm: pg,
            step: t_used,
        });
    }
    Ok(OptResult {
        params: x,
        objective: fx,
        initial_objective,
        grad_norm: pg,
        stop,
        trace,
    })
}

/// [`maximize`] from `x0` and from `restarts` seeded perturbations of it;
/// the best end point wins (ties go to the earliest run).
pub fn maximize_with_restarts<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut best = maximize(&mut f, x0, lo, hi, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, RESTART_SCALE).expect("valid normal");
    for _ in 0..cfg.restarts {
        let start: Vec<f64> = x0.iter().map(|v| v + z.sample(&mut rng)).collect();
        if let Ok(r) = maximize(&mut f, &start, lo, hi, cfg) {
            if r.objective > best.objective {
                best = r;
            }
        }
    }
    Ok(best)
}

fn noise_floor(y: &[f64]) -> f64 {
    (NOISE_FLOOR_REL * std_dev(y)).max(NOISE_FLOOR_ABS).ln()
}

/// Bounds for `[kernel log-params…, log σ_ε]` (noise entry only if optimized).
fn bounds(n_kernel: usize, with_noise: bool, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![-LOG_PARAM_BOUND; n_kernel];
    let mut hi = vec![LOG_PARAM_BOUND; n_kernel];
    if with_noise {
        lo.push(noise_floor(y));
        hi.push(LOG_PARAM_BOUND);
    }
    (lo, hi)
}

fn split_params(kernel: &KernelSpec, theta: &[f64], fixed_noise: f64, with_noise: bool) -> Result<(KernelSpec, f64)> {
    let k = kernel.n_params();
    let spec = kernel.with_log_params(theta[..k].to_vec())?;
    Ok((spec, if with_noise { theta[k] } else { fixed_noise }))
}

fn block_objective(
    kernel: &KernelSpec,
    theta: &[f64],
    fixed_noise: f64,
    with_noise: bool,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    region: usize,
) -> Result<(f64, Vec<f64>)> {
    let (spec, ln) = split_params(kernel, theta, fixed_noise, with_noise)?;
    let (ev, mut g) = evidence_and_grad(&spec, ln, x, y, region)?;
    if !with_noise {
        g.pop();
    }
    Ok((ev, g))
}

/// Optimize one leaf on its own data rows and refit it. Leaves with fewer
/// than two data rows are left unchanged and `None` is returned.
pub fn optimize_leaf(leaf: &mut GpLeaf, cfg: &OptimizerConfig, seed: u64) -> Result<Option<OptResult>> {
    cfg.check()?;
    if leaf.n_data() < 2 {
        if !leaf.is_fitted() {
            leaf.fit()?;
        }
        return Ok(None);
    }
    let (x, y) = leaf.data_block();
    let kernel = leaf.kernel().clone();
    let fixed_noise = leaf.log_noise();
    let with_noise = cfg.optimize_noise;
    let region = leaf.region();
    let mut theta = kernel.log_params().to_vec();
    if with_noise {
        theta.push(fixed_noise);
    }
    let (lo, hi) = bounds(kernel.n_params(), with_noise, y.as_slice());
    let obj = |t: &[f64]| block_objective(&kernel, t, fixed_noise, with_noise, &x, &y, region);
    let res = maximize_with_restarts(obj, &theta, &lo, &hi, cfg, seed).map_err(|e| match e {
        Error::Numerical { reason, .. } => Error::Numerical { region, reason },
        other => other,
    })?;
    let (spec, ln) = split_params(&kernel, &res.params, fixed_noise, with_noise)?;
    leaf.set_hyperparameters(spec, ln)?;
    leaf.fit()?;
    Ok(Some(res))
}

/// Outcome of [`optimize_model`]: one optimizer result per leaf (independent
/// mode) or per kernel family (tied mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOptReport {
    pub mode: TieMode,
    pub runs: Vec<(String, OptResult)>,
    pub log_evidence: f64,
}

/// Optimize every leaf of `model` and refit. Must run before the posterior
/// update.
pub fn optimize_model(model: &mut SpnGp, cfg: &OptimizerConfig) -> Result<ModelOptReport> {
    cfg.check()?;
    if model.posterior_applied() {
        return Err(Error::state("hyperparameters must be optimized before the posterior update"));
    }
    let runs = match cfg.tie_mode {
        TieMode::Independent => {
            let results: Vec<Option<(String, OptResult)>> = model
                .nodes_mut()
                .par_iter_mut()
                .map(|n| match &mut n.kind {
                    NodeKind::Leaf(leaf) => {
                        let seed = cfg.seed.wrapping_add(n.id.0 as u64);
                        Ok(optimize_leaf(leaf, cfg, seed)?.map(|r| (n.id.to_string(), r)))
                    }
                    _ => Ok(None),
                })
                .collect::<Result<_>>()?;
            results.into_iter().flatten().collect()
        }
        TieMode::TiedPerKernelFamily => {
            let (label, res, plan) = {
                let problem = TiedProblem::new(model, cfg.optimize_noise)?;
                let theta0 = problem.initial();
                let (lo, hi) = problem.bounds();
                let res = maximize_with_restarts(|t| problem.eval(t), &theta0, &lo, &hi, cfg, cfg.seed)?;
                let plan = problem.assignments(&res.params)?;
                (problem.labels().join("+"), res, plan)
            };
            for (id, spec, ln) in plan {
                model.leaf_mut(id).expect("leaf").set_hyperparameters(spec, ln)?;
            }
            vec![(label, res)]
        }
    };
    model.fit_leaves()?;
    let log_evidence = model.log_evidence()?;
    Ok(ModelOptReport {
        mode: cfg.tie_mode,
        runs,
        log_evidence,
    })
}

struct Group {
    label: String,
    template: KernelSpec,
    fixed_noise: f64,
    offset: usize,
    leaves: Vec<NodeId>,
}

/// The whole-network log evidence as a function of one shared parameter
/// vector per kernel family.
pub struct TiedProblem<'a> {
    model: &'a SpnGp,
    groups: Vec<Group>,
    with_noise: bool,
    len: usize,
    order: Vec<NodeId>,
}

impl<'a> TiedProblem<'a> {
    pub fn new(model: &'a SpnGp, with_noise: bool) -> Result<Self> {
        let order = model.topo_order()?;
        let mut by_label: BTreeMap<String, usize> = BTreeMap::new();
        let mut groups: Vec<Group> = Vec::new();
        let mut len = 0;
        for id in model.leaf_ids() {
            let leaf = model.leaf(id).expect("leaf");
            let label = leaf.kernel().label();
            let gi = *by_label.entry(label.clone()).or_insert_with(|| {
                let k = leaf.kernel().n_params() + with_noise as usize;
                groups.push(Group {
                    label,
                    template: leaf.kernel().clone(),
                    fixed_noise: leaf.log_noise(),
                    offset: len,
                    leaves: Vec::new(),
                });
                len += k;
                groups.len() - 1
            });
            groups[gi].leaves.push(id);
        }
        Ok(Self {
            model,
            groups,
            with_noise,
            len,
            order,
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.label.clone()).collect()
    }

    fn width(&self, g: &Group) -> usize {
        g.template.n_params() + self.with_noise as usize
    }

    /// Parameters of the first leaf (by id) of every family.
    pub fn initial(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.len);
        for g in &self.groups {
            t.extend_from_slice(g.template.log_params());
            if self.with_noise {
                t.push(g.fixed_noise);
            }
        }
        t
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for g in &self.groups {
            let y: Vec<f64> = g
                .leaves
                .iter()
                .flat_map(|l| {
                    let leaf = self.model.leaf(*l).expect("leaf");
                    leaf.y().rows(0, leaf.n_data()).iter().copied().collect::<Vec<_>>()
                })
                .collect();
            let (l, h) = bounds(g.template.n_params(), self.with_noise, &y);
            lo.extend(l);
            hi.extend(h);
        }
        (lo, hi)
    }

    /// Network log evidence and its gradient with respect to `theta`.
    pub fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.len {
            return Err(Error::arg(format!("expected {} parameters, got {}", self.len, theta.len())));
        }
        let jobs: Vec<(usize, NodeId)> = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.leaves.iter().map(move |l| (gi, *l)))
            .collect();
        let leaf_vals: Vec<(usize, NodeId, f64, Vec<f64>)> = jobs
            .par_iter()
            .map(|(gi, id)| {
                let g = &self.groups[*gi];
                let leaf = self.model.leaf(*id).expect("leaf");
                let (x, y) = leaf.data_block();
                let t = &theta[g.offset..g.offset + self.width(g)];
                let (ev, grad) = block_objective(&g.template, t, g.fixed_noise, self.with_noise, &x, &y, leaf.region())?;
                Ok((*gi, *id, ev, grad))
            })
            .collect::<Result<_>>()?;

        let n = self.model.nodes().len();
        let mut val = vec![f64::NAN; n];
        for (_, id, ev, _) in &leaf_vals {
            val[id.0] = *ev;
        }
        for id in &self.order {
            match &self.model.node(*id).kind {
                NodeKind::Leaf(_) => {}
                NodeKind::Product { children } | NodeKind::Split { children, .. } => {
                    val[id.0] = children.iter().map(|c| val[c.0]).sum();
                }
                NodeKind::Sum { children, log_weights } => {
                    let terms: Vec<f64> = children.iter().zip(log_weights).map(|(c, w)| w + val[c.0]).collect();
                    val[id.0] = logsumexp(&terms);
                }
            }
        }
        // ∂ root / ∂ node, top-down
        let mut adj = vec![0.0; n];
        adj[self.model.root().0] = 1.0;
        for id in self.order.iter().rev() {
            let a = adj[id.0];
            if a == 0.0 {
                continue;
            }
            match &self.model.node(*id).kind {
                NodeKind::Leaf(_) => {}
                NodeKind::Product { children } | NodeKind::Split { children, .. } => {
                    for c in children {
                        adj[c.0] += a;
                    }
                }
                NodeKind::Sum { children, log_weights } => {
                    for (c, w) in children.iter().zip(log_weights) {
                        adj[c.0] += a * (w + val[c.0] - val[id.0]).exp();
                    }
                }
            }
        }
        let mut grad = vec![0.0; self.len];
        for (gi, id, _, g) in &leaf_vals {
            let off = self.groups[*gi].offset;
            for (k, v) in g.iter().enumerate() {
                grad[off + k] += adj[id.0] * v;
            }
        }
        Ok((val[self.model.root().0], grad))
    }

    /// Kernel and log noise each leaf receives under `theta`.
    pub fn assignments(&self, theta: &[f64]) -> Result<Vec<(NodeId, KernelSpec, f64)>> {
        let mut out = Vec::new();
        for g in &self.groups {
            let t = &theta[g.offset..g.offset + self.width(g)];
            let (spec, ln) = split_params(&g.template, t, g.fixed_noise, self.with_noise)?;
            out.extend(g.leaves.iter().map(|id| (*id, spec.clone(), ln)));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_a_concave_quadratic() {
        let f = |x: &[f64]| Ok((-(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2), vec![-2.0 * (x[0] - 1.0), -6.0 * (x[1] + 2.0)]));
        let cfg = OptimizerConfig::default();
        let r = maximize(f, &[0.0, 0.0], &[-10.0; 2], &[10.0; 2], &cfg).unwrap();
        assert!((r.params[0] - 1.0).abs() < 1e-5 && (r.params[1] + 2.0).abs() < 1e-5);
        assert!(r.trace.windows(2).all(|w| w[1].objective >= w[0].objective));
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Ok((x[0], vec![1.0]));
        let r = maximize(f, &[0.0], &[-1.0], &[2.0], &OptimizerConfig::default()).unwrap();
        assert_eq!(r.params, vec![2.0]);
        assert_eq!(r.stop, StopReason::GradTol);
    }

    #[test]
    fn tiny_leaves_are_untouched() {
        let k = KernelSpec::se_ard(1.0, &[1.0]).unwrap();
        let mut leaf = GpLeaf::new(k.clone(), 0.3, DMatrix::from_element(1, 1, 0.5), DVector::from_element(1, 2.0)).unwrap();
        assert!(optimize_leaf(&mut leaf, &OptimizerConfig::default(), 0).unwrap().is_none());
        assert_eq!(leaf.kernel(), &k);
        assert!(leaf.is_fitted());
    }
}
