//! Random valid SPN-GP structures and an explicit induced-tree oracle.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spngp::gp::GpLeaf;
use spngp::kernel::{KernelSpec, MaternNu};
use spngp::math::logsumexp;
use spngp::spn::{InducedTree, NodeId, NodeKind, Region, SpnBuilder, TrainMeta};
use spngp::SpnGp;

pub const TREE_CAP: usize = 100_000;

struct Gen {
    rng: ChaCha8Rng,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    b: SpnBuilder,
    dim: usize,
}

impl Gen {
    fn kernel(&mut self) -> KernelSpec {
        let d = self.dim;
        let sf = self.rng.random_range(0.5..2.0);
        let ls: Vec<f64> = (0..d).map(|_| self.rng.random_range(0.1..1.0)).collect();
        match self.rng.random_range(0..if d == 1 { 5 } else { 4 }) {
            0 => KernelSpec::se_ard(sf, &ls).unwrap(),
            1 => KernelSpec::matern(MaternNu::ThreeHalves, sf, &ls).unwrap(),
            2 => KernelSpec::matern(MaternNu::FiveHalves, sf, &ls).unwrap(),
            3 => KernelSpec::linear(sf, d).unwrap(),
            _ => KernelSpec::periodic(sf, ls[0], self.rng.random_range(0.3..1.5)).unwrap(),
        }
    }

    fn leaf(&mut self, region: &Region, output: usize) -> NodeId {
        let rows: Vec<usize> = (0..self.x.nrows())
            .filter(|i| region.contains(&self.x.row(*i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let xb = self.x.select_rows(rows.iter());
        let yb = DVector::from_iterator(rows.len(), rows.iter().map(|r| self.y[(*r, output)]));
        let k = self.kernel();
        let noise = self.rng.random_range(0.05..0.5);
        let leaf = GpLeaf::new(k, noise, xb, yb).unwrap().with_rows(rows.clone());
        let mut reg = region.clone();
        reg.data_idx = rows;
        self.b.leaf(leaf, output, reg)
    }

    fn weights(&mut self, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| self.rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    }

    fn node(&mut self, region: &Region, depth: usize, output: usize) -> NodeId {
        let roll: f64 = self.rng.random();
        if depth == 0 || roll < 0.25 {
            return self.leaf(region, output);
        }
        let fan = self.rng.random_range(1..=3);
        if roll < 0.6 {
            let children: Vec<NodeId> = (0..fan).map(|_| self.node(region, depth - 1, output)).collect();
            let w = self.weights(fan);
            self.b.sum(children, &w)
        } else {
            let axis = self.rng.random_range(0..self.dim);
            let fan = fan.max(2);
            let (lo, hi) = (region.lower[axis], region.upper[axis]);
            let mut t: Vec<f64> = (0..fan - 1).map(|_| self.rng.random_range(lo + 0.05 * (hi - lo)..hi - 0.05 * (hi - lo))).collect();
            t.sort_by(f64::total_cmp);
            t.dedup();
            let children: Vec<NodeId> = (0..=t.len())
                .map(|k| {
                    let slab = region.slab(axis, &t, k);
                    self.node(&slab, depth - 1, output)
                })
                .collect();
            self.b.split(axis, t, children)
        }
    }
}

/// A random valid model with fitted leaves (posterior not applied).
/// Depth ≤ 4, fan-outs ≤ 3, 1 or 2 inputs, 1 or 2 outputs.
pub fn random_model(seed: u64) -> SpnGp {
    let mut attempt = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(attempt));
        let dim = rng.random_range(1..=2);
        let outs = if rng.random_bool(0.25) { 2 } else { 1 };
        let n = rng.random_range(8..40);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>());
        let y = DMatrix::from_fn(n, outs, |i, j| (3.0 * x[(i, 0)] + j as f64).sin() + 0.1 * rng.random::<f64>());
        let mut g = Gen {
            rng,
            x: x.clone(),
            y: y.clone(),
            b: SpnBuilder::new(),
            dim,
        };
        let root_region = Region::closed(vec![0.0; dim], vec![1.0; dim]);
        let depth = g.rng.random_range(1..=4);
        let roots: Vec<NodeId> = (0..outs).map(|j| g.node(&root_region, depth, j)).collect();
        let root = if outs == 1 { roots[0] } else { g.b.product(roots) };
        let mut m = g.b.build(root, TrainMeta::uncentered(dim, outs)).with_training(spngp::spn::TrainingSet { x, y });
        assert!(m.validate().is_empty(), "generator produced {:?}", m.validate());
        let count = m.count_induced_trees().unwrap();
        if count <= 5_000.0 {
            m.fit_leaves().unwrap();
            return m;
        }
        attempt += 1;
    }
}

pub fn random_queries(seed: u64, dim: usize, m: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    DMatrix::from_fn(m, dim, |_, _| rng.random::<f64>())
}

/// Leaf evidences read straight off the leaves.
fn leaf_evidence(model: &SpnGp, t: &InducedTree) -> f64 {
    t.leaves.iter().map(|l| model.leaf(*l).unwrap().log_evidence().unwrap()).sum()
}

/// log Σ_t p(T_t) Π_L p(y_L | X_L).
pub fn oracle_log_evidence(model: &SpnGp, trees: &[InducedTree]) -> f64 {
    let terms: Vec<f64> = trees.iter().map(|t| t.log_prior + leaf_evidence(model, t)).collect();
    logsumexp(&terms)
}

/// Normalized log posterior weight of every tree.
pub fn oracle_tree_posterior(model: &SpnGp, trees: &[InducedTree]) -> Vec<f64> {
    let terms: Vec<f64> = trees.iter().map(|t| t.log_prior + leaf_evidence(model, t)).collect();
    let z = logsumexp(&terms);
    terms.into_iter().map(|v| v - z).collect()
}

/// Posterior log weight of each sum edge as the conditional probability of
/// choosing it among trees that visit the sum node.
pub fn oracle_edge_weights(model: &SpnGp, trees: &[InducedTree]) -> BTreeMap<(NodeId, NodeId), f64> {
    let post = oracle_tree_posterior(model, trees);
    let mut by_edge: BTreeMap<(NodeId, NodeId), Vec<f64>> = BTreeMap::new();
    let mut by_sum: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for (t, p) in trees.iter().zip(&post) {
        for e in &t.edges {
            by_edge.entry(*e).or_default().push(*p);
            by_sum.entry(e.0).or_default().push(*p);
        }
    }
    by_edge
        .into_iter()
        .map(|(e, v)| (e, logsumexp(&v) - logsumexp(&by_sum[&e.0])))
        .collect()
}

/// Moments (mean, var_f, var_y) per output at `x`, mixing the responsible
/// leaf of every tree with the Bayes-reweighted tree weights. Uses the
/// `Σ π (v + m²) − mean²` form.
pub fn oracle_moments(model: &SpnGp, trees: &[InducedTree], x: &[f64]) -> Vec<(f64, f64, f64)> {
    let post = oracle_tree_posterior(model, trees);
    let routes = model.route(trees, x).unwrap();
    let xs = DMatrix::from_row_slice(1, x.len(), x);
    (0..model.meta().output_dim)
        .map(|j| {
            let (mut m, mut s2f, mut s2y) = (0.0, 0.0, 0.0);
            for (p, r) in post.iter().zip(&routes) {
                let w = p.exp();
                let pm = model.leaf(r[j]).unwrap().predict(&xs).unwrap();
                m += w * pm.mean[0];
                s2f += w * (pm.var_f[0] + pm.mean[0] * pm.mean[0]);
                s2y += w * (pm.var_y[0] + pm.mean[0] * pm.mean[0]);
            }
            (m + model.meta().y_offset[j], s2f - m * m, s2y - m * m)
        })
        .collect()
}

/// Current log weights of every sum edge of `model`.
pub fn model_edge_weights(model: &SpnGp) -> BTreeMap<(NodeId, NodeId), f64> {
    let mut out = BTreeMap::new();
    for n in model.nodes() {
        if let NodeKind::Sum { children, log_weights } = &n.kind {
            for (c, w) in children.iter().zip(log_weights) {
                out.insert((n.id, *c), *w);
            }
        }
    }
    out
}

pub fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Outcome of comparing one model against the enumeration oracle.
#[derive(Debug, Default)]
pub struct OracleCheck {
    pub trees: usize,
    pub evidence_err: f64,
    pub weight_err: f64,
    pub moment_rel_err: f64,
}

/// Full oracle comparison on a fitted, not-yet-updated model: evidence,
/// posterior weights and predictive moments at `queries` rows.
pub fn check_against_oracle(model: &mut SpnGp, queries: &DMatrix<f64>) -> OracleCheck {
    let trees = model.enumerate_induced_trees(TREE_CAP).unwrap();
    let mut out = OracleCheck {
        trees: trees.len(),
        ..Default::default()
    };
    let ev = model.log_evidence().unwrap();
    out.evidence_err = (ev - oracle_log_evidence(model, &trees)).abs();
    let edges = oracle_edge_weights(model, &trees);
    let oracle_m: Vec<Vec<(f64, f64, f64)>> = (0..queries.nrows())
        .map(|i| oracle_moments(model, &trees, &queries.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    model.posterior_update().unwrap();
    let got = model_edge_weights(model);
    for (e, w) in &edges {
        out.weight_err = out.weight_err.max((got[e] - w).abs());
    }
    let pred = model.predict(queries, Default::default()).unwrap();
    for (i, per_out) in oracle_m.iter().enumerate() {
        for (j, (m, vf, vy)) in per_out.iter().enumerate() {
            for (a, b) in [(pred[j].mean[i], *m), (pred[j].var_f[i], *vf), (pred[j].var_y[i], *vy)] {
                let rel = (a - b).abs() / (b.abs().max(1e-12));
                let rel = if (a - b).abs() < 1e-13 { 0.0 } else { rel };
                out.moment_rel_err = out.moment_rel_err.max(rel);
            }
        }
    }
    out
}
