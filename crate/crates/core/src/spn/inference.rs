//! Bottom-up evidence, the posterior weight update, and predictive moments.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{NodeId, NodeKind, SpnGp};
use crate::error::{Error, Result};
use crate::gp::PredictiveMoments;
use crate::math::logsumexp;

/// Which predictive variance a caller is after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    /// The latent function value f*.
    #[default]
    LatentF,
    /// A noisy observation y*.
    ObservedY,
}

impl Target {
    pub fn variance<'a>(&self, m: &'a PredictiveMoments) -> &'a [f64] {
        match self {
            Target::LatentF => &m.var_f,
            Target::ObservedY => &m.var_y,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PredictOptions {
    /// Refuse queries outside the root box instead of clamping their routing.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    mean: f64,
    var_f: f64,
    var_y: f64,
}

impl SpnGp {
    /// Fit (factorize) every leaf, in parallel.
    pub fn fit_leaves(&mut self) -> Result<()> {
        self.nodes_mut().par_iter_mut().try_for_each(|n| match &mut n.kind {
            NodeKind::Leaf(leaf) => leaf.fit(),
            _ => Ok(()),
        })
    }

    /// Bottom-up log value of every reachable node; unreachable entries are NaN.
    pub fn node_log_values(&self) -> Result<Vec<f64>> {
        let order = self.topo_order()?;
        let mut val = vec![f64::NAN; self.nodes().len()];
        for id in order {
            val[id.0] = match &self.node(id).kind {
                NodeKind::Leaf(leaf) => leaf.log_evidence()?,
                NodeKind::Product { children } | NodeKind::Split { children, .. } => {
                    children.iter().map(|c| val[c.0]).sum()
                }
                NodeKind::Sum { children, log_weights } => {
                    let terms: Vec<f64> = children
                        .iter()
                        .zip(log_weights)
                        .map(|(c, w)| w + val[c.0])
                        .collect();
                    logsumexp(&terms)
                }
            };
        }
        Ok(val)
    }

    /// Log marginal likelihood of the whole network.
    pub fn log_evidence(&self) -> Result<f64> {
        Ok(self.node_log_values()?[self.root().0])
    }

    /// Replace every sum weight by its posterior value. Returns the log
    /// evidence. Can be applied once.
    pub fn posterior_update(&mut self) -> Result<f64> {
        if self.posterior_applied {
            return Err(Error::state("posterior update already applied"));
        }
        let val = self.node_log_values()?;
        for node in self.nodes_mut() {
            if val[node.id.0].is_nan() {
                continue;
            }
            if let NodeKind::Sum { children, log_weights } = &mut node.kind {
                let z = val[node.id.0];
                for (w, c) in log_weights.iter_mut().zip(children.iter()) {
                    *w += val[c.0] - z;
                }
                // absorb round-off so the weights stay normalized
                let norm = logsumexp(log_weights);
                for w in log_weights.iter_mut() {
                    *w -= norm;
                }
            }
        }
        self.posterior_applied = true;
        Ok(val[self.root().0])
    }

    /// Mark the posterior as applied without touching weights; used when
    /// reloading a model whose stored weights already are posterior weights.
    pub(crate) fn set_posterior_applied(&mut self, applied: bool) {
        self.posterior_applied = applied;
    }

    fn check_queries(&self, xs: &DMatrix<f64>, opts: PredictOptions) -> Result<()> {
        let d = self.meta().input_dim;
        if xs.ncols() != d {
            return Err(Error::arg(format!("queries have {} columns, model expects {d}", xs.ncols())));
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite query input"));
        }
        if opts.strict {
            let root = &self.node(self.root()).region;
            for i in 0..xs.nrows() {
                let x: Vec<f64> = xs.row(i).iter().copied().collect();
                if !root.contains(&x) {
                    return Err(Error::Domain(format!("query row {i} {x:?} lies outside the root region")));
                }
            }
        }
        Ok(())
    }

    /// Leaves reachable from the root for query `x`, following every
    /// positive-weight sum edge and the routed child of every split.
    fn reachable_leaves(&self, x: &[f64]) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes().len()];
        let mut stack = vec![self.root()];
        let mut out = Vec::new();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id.0], true) {
                continue;
            }
            match &self.node(id).kind {
                NodeKind::Leaf(_) => out.push(id),
                NodeKind::Sum { children, log_weights } => stack.extend(
                    children
                        .iter()
                        .zip(log_weights)
                        .filter(|(_, w)| **w > f64::NEG_INFINITY)
                        .map(|(c, _)| *c),
                ),
                NodeKind::Product { children } => stack.extend(children.iter().copied()),
                NodeKind::Split {
                    axis,
                    thresholds,
                    children,
                } => stack.push(children[route_child(thresholds, x[*axis])]),
            }
        }
        out.sort_unstable();
        out
    }

    /// Predictive moments for every output variable, in output order.
    pub fn predict(&self, xs: &DMatrix<f64>, opts: PredictOptions) -> Result<Vec<PredictiveMoments>> {
        if !self.posterior_applied {
            return Err(Error::state("predict requires the posterior update"));
        }
        self.topo_order()?;
        self.check_queries(xs, opts)?;
        let m = xs.nrows();
        let rows: Vec<Vec<f64>> = (0..m).map(|i| xs.row(i).iter().copied().collect()).collect();

        let per_query: Vec<Vec<NodeId>> = rows.par_iter().map(|x| self.reachable_leaves(x)).collect();
        let mut per_leaf: Vec<Vec<usize>> = vec![Vec::new(); self.nodes().len()];
        for (q, leaves) in per_query.iter().enumerate() {
            for l in leaves {
                per_leaf[l.0].push(q);
            }
        }
        let jobs: Vec<(NodeId, &Vec<usize>)> = per_leaf
            .iter()
            .enumerate()
            .filter(|(_, qs)| !qs.is_empty())
            .map(|(i, qs)| (NodeId(i), qs))
            .collect();
        let leaf_results: Vec<(NodeId, PredictiveMoments)> = jobs
            .par_iter()
            .map(|(id, qs)| {
                let sub = xs.select_rows(qs.iter());
                let leaf = self.leaf(*id).expect("routed to a leaf");
                leaf.predict(&sub).map(|pm| (*id, pm))
            })
            .collect::<Result<_>>()?;

        // per query: (leaf id, position in that leaf's batch)
        let mut slot = vec![usize::MAX; self.nodes().len()];
        for (k, (id, _)) in leaf_results.iter().enumerate() {
            slot[id.0] = k;
        }
        let mut pos_in_leaf: Vec<Vec<(NodeId, usize)>> = vec![Vec::new(); m];
        for (id, qs) in &jobs {
            for (p, q) in qs.iter().enumerate() {
                pos_in_leaf[*q].push((*id, p));
            }
        }
        let clamped: usize = leaf_results.iter().map(|(_, pm)| pm.clamped).sum();
        let worst = leaf_results.iter().map(|(_, pm)| pm.worst_clamp).fold(0.0, f64::max);

        let out_dim = self.meta().output_dim;
        let combined: Vec<Vec<Moments>> = (0..m)
            .into_par_iter()
            .map(|q| {
                let lookup = |id: NodeId| -> Moments {
                    let (_, p) = pos_in_leaf[q].iter().find(|(l, _)| *l == id).copied().expect("leaf evaluated");
                    let pm = &leaf_results[slot[id.0]].1;
                    Moments {
                        mean: pm.mean[p],
                        var_f: pm.var_f[p],
                        var_y: pm.var_y[p],
                    }
                };
                (0..out_dim)
                    .map(|j| {
                        let mut memo = vec![None; self.nodes().len()];
                        self.combine(self.root(), j, &rows[q], &lookup, &mut memo)
                    })
                    .collect()
            })
            .collect();

        let mut outs: Vec<PredictiveMoments> = (0..out_dim).map(|_| PredictiveMoments::with_capacity(m)).collect();
        for per_out in combined {
            for (j, mo) in per_out.into_iter().enumerate() {
                outs[j].mean.push(mo.mean + self.meta().y_offset[j]);
                outs[j].var_f.push(mo.var_f);
                outs[j].var_y.push(mo.var_y);
            }
        }
        for o in &mut outs {
            o.clamped = clamped;
            o.worst_clamp = worst;
        }
        Ok(outs)
    }

    fn combine(
        &self,
        id: NodeId,
        output: usize,
        x: &[f64],
        leaf: &dyn Fn(NodeId) -> Moments,
        memo: &mut Vec<Option<Moments>>,
    ) -> Moments {
        if let Some(m) = memo[id.0] {
            return m;
        }
        let res = match &self.node(id).kind {
            NodeKind::Leaf(_) => leaf(id),
            NodeKind::Split {
                axis,
                thresholds,
                children,
            } => self.combine(children[route_child(thresholds, x[*axis])], output, x, leaf, memo),
            NodeKind::Product { children } => {
                let c = children
                    .iter()
                    .find(|c| self.node(**c).out_scope.contains(&output))
                    .copied()
                    .expect("product covers every output in its scope");
                self.combine(c, output, x, leaf, memo)
            }
            NodeKind::Sum { children, log_weights } => {
                let parts: Vec<(f64, Moments)> = children
                    .iter()
                    .zip(log_weights)
                    .filter(|(_, w)| **w > f64::NEG_INFINITY)
                    .map(|(c, w)| (w.exp(), self.combine(*c, output, x, leaf, memo)))
                    .collect();
                mix(&parts)
            }
        };
        memo[id.0] = Some(res);
        res
    }

    /// For each query and output, the leaf at the end of the highest-weight
    /// path through the network.
    pub fn map_leaves(&self, xs: &DMatrix<f64>) -> Result<Vec<Vec<NodeId>>> {
        self.topo_order()?;
        self.check_queries(xs, PredictOptions::default())?;
        let out_dim = self.meta().output_dim;
        Ok((0..xs.nrows())
            .map(|i| {
                let x: Vec<f64> = xs.row(i).iter().copied().collect();
                (0..out_dim)
                    .map(|j| {
                        let mut memo = vec![None; self.nodes().len()];
                        self.best_path(self.root(), j, &x, &mut memo).1
                    })
                    .collect()
            })
            .collect())
    }

    fn best_path(&self, id: NodeId, output: usize, x: &[f64], memo: &mut Vec<Option<(f64, NodeId)>>) -> (f64, NodeId) {
        if let Some(r) = memo[id.0] {
            return r;
        }
        let res = match &self.node(id).kind {
            NodeKind::Leaf(_) => (0.0, id),
            NodeKind::Split {
                axis,
                thresholds,
                children,
            } => self.best_path(children[route_child(thresholds, x[*axis])], output, x, memo),
            NodeKind::Product { children } => {
                let c = children
                    .iter()
                    .find(|c| self.node(**c).out_scope.contains(&output))
                    .copied()
                    .expect("product covers every output in its scope");
                self.best_path(c, output, x, memo)
            }
            NodeKind::Sum { children, log_weights } => {
                let mut best = (f64::NEG_INFINITY, children[0]);
                for (c, w) in children.iter().zip(log_weights) {
                    let (s, l) = self.best_path(*c, output, x, memo);
                    if w + s > best.0 {
                        best = (w + s, l);
                    }
                }
                best
            }
        };
        memo[id.0] = Some(res);
        res
    }
}

/// Index of the split child owning coordinate `v`. Values beyond the outer
/// thresholds land in the first or last child, which clamps routing.
pub(crate) fn route_child(thresholds: &[f64], v: f64) -> usize {
    thresholds.partition_point(|t| *t <= v)
}

/// Law of total variance over weighted components.
fn mix(parts: &[(f64, Moments)]) -> Moments {
    if let [(w, m)] = parts {
        if *w == 1.0 {
            return *m;
        }
    }
    let mean: f64 = parts.iter().map(|(w, m)| w * m.mean).sum();
    let spread = |v: f64, mu: f64| v + (mu - mean) * (mu - mean);
    Moments {
        mean,
        var_f: parts.iter().map(|(w, m)| w * spread(m.var_f, m.mean)).sum(),
        var_y: parts.iter().map(|(w, m)| w * spread(m.var_y, m.mean)).sum(),
    }
}
