//! The SPN-GP graph: node store, validity rules, and the model type.
//!
//! Nodes live in a flat arena indexed by [`NodeId`]. Four node kinds exist:
//!
//! * **sum** mixes children that share both output scope and input region;
//! * **product** factorizes over disjoint output scopes on a shared region;
//! * **split** cuts its region along one axis at ascending thresholds, each
//!   child owning one half-open slab;
//! * **leaf** is a [`GpLeaf`] for one output variable.
//!
//! Inference lives in [`inference`], the brute-force induced-tree view in
//! [`oracle`], persistence in [`io`].

pub mod inference;
pub mod io;
pub mod oracle;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpLeaf;

pub use inference::{PredictOptions, Target};
pub use oracle::InducedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Axis-aligned box. Membership is half-open `lower <= x < upper` per axis,
/// except along axes flagged in `upper_closed` (the global maximum edge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(with = "io::ext_f64_vec")]
    pub lower: Vec<f64>,
    #[serde(with = "io::ext_f64_vec")]
    pub upper: Vec<f64>,
    pub upper_closed: Vec<bool>,
    #[serde(default)]
    pub data_idx: Vec<usize>,
    #[serde(default)]
    pub overlap_idx: Vec<usize>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let d = lower.len();
        Self {
            lower,
            upper,
            upper_closed: vec![false; d],
            data_idx: Vec::new(),
            overlap_idx: Vec::new(),
        }
    }

    /// Closed box, the form used for a root region.
    pub fn closed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let d = lower.len();
        Self {
            upper_closed: vec![true; d],
            ..Self::new(lower, upper)
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::closed(vec![f64::NEG_INFINITY; dim], vec![f64::INFINITY; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|d| {
                x[d] >= self.lower[d]
                    && (x[d] < self.upper[d] || (self.upper_closed[d] && x[d] == self.upper[d]))
            })
    }

    /// Same box (bounds and closedness), ignoring row assignments.
    pub fn same_box(&self, other: &Region) -> bool {
        self.lower.len() == other.lower.len()
            && self.upper_closed == other.upper_closed
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .chain(self.upper.iter().zip(&other.upper))
                .all(|(a, b)| a.to_bits() == b.to_bits() || a == b)
    }

    /// Clamp `x` onto the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| v.max(self.lower[d]).min(self.upper[d]))
            .collect()
    }

    /// The `k`-th slab of this box cut along `axis` at `thresholds`.
    pub fn slab(&self, axis: usize, thresholds: &[f64], k: usize) -> Region {
        let mut r = Region::new(self.lower.clone(), self.upper.clone());
        r.upper_closed = self.upper_closed.clone();
        if k > 0 {
            r.lower[axis] = thresholds[k - 1];
        }
        if k < thresholds.len() {
            r.upper[axis] = thresholds[k];
            r.upper_closed[axis] = false;
        }
        r
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Sum {
        children: Vec<NodeId>,
        log_weights: Vec<f64>,
    },
    Product {
        children: Vec<NodeId>,
    },
    Split {
        axis: usize,
        thresholds: Vec<f64>,
        children: Vec<NodeId>,
    },
    Leaf(Box<GpLeaf>),
}

impl NodeKind {
    pub fn children(&self) -> &[NodeId] {
        match self {
            NodeKind::Sum { children, .. }
            | NodeKind::Product { children }
            | NodeKind::Split { children, .. } => children,
            NodeKind::Leaf(_) => &[],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Sum { .. } => "sum",
            NodeKind::Product { .. } => "product",
            NodeKind::Split { .. } => "split",
            NodeKind::Leaf(_) => "leaf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Sorted output-variable indices.
    pub out_scope: Vec<usize>,
    pub region: Region,
}

impl Node {
    pub fn leaf(&self) -> Option<&GpLeaf> {
        match &self.kind {
            NodeKind::Leaf(l) => Some(l),
            _ => None,
        }
    }
}

/// Training-time metadata carried with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Per-output constant subtracted from targets before fitting.
    pub y_offset: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub dataset_fingerprint: String,
}

impl TrainMeta {
    /// Metadata for hand-assembled models with zero-mean targets.
    pub fn uncentered(input_dim: usize, output_dim: usize) -> Self {
        Self {
            y_offset: vec![0.0; output_dim],
            input_dim,
            output_dim,
            dataset_fingerprint: String::new(),
        }
    }
}

/// Raw (uncentered) training rows that leaf row indices point into.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

/// A sum-product network with GP leaves.
#[derive(Debug, Clone)]
pub struct SpnGp {
    nodes: Vec<Node>,
    root: NodeId,
    meta: TrainMeta,
    posterior_applied: bool,
    training: Option<TrainingSet>,
}

impl SpnGp {
    /// Assemble a model from raw parts without checking validity; call
    /// [`SpnGp::validate`] to inspect the result.
    pub fn from_parts(nodes: Vec<Node>, root: NodeId, meta: TrainMeta) -> Self {
        Self {
            nodes,
            root,
            meta,
            posterior_applied: false,
            training: None,
        }
    }

    pub fn with_training(mut self, training: TrainingSet) -> Self {
        self.training = Some(training);
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    pub fn training(&self) -> Option<&TrainingSet> {
        self.training.as_ref()
    }

    pub fn posterior_applied(&self) -> bool {
        self.posterior_applied
    }

    pub fn leaf_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf(_)))
            .map(|n| n.id)
            .collect()
    }

    pub fn leaf(&self, id: NodeId) -> Option<&GpLeaf> {
        self.nodes.get(id.0).and_then(Node::leaf)
    }

    pub fn leaf_mut(&mut self, id: NodeId) -> Option<&mut GpLeaf> {
        match self.nodes.get_mut(id.0).map(|n| &mut n.kind) {
            Some(NodeKind::Leaf(l)) => Some(l),
            _ => None,
        }
    }

    /// Sum-node weights in linear space, `None` for other node kinds.
    pub fn weights(&self, id: NodeId) -> Option<Vec<f64>> {
        match &self.nodes.get(id.0)?.kind {
            NodeKind::Sum { log_weights, .. } => Some(log_weights.iter().map(|w| w.exp()).collect()),
            _ => None,
        }
    }

    /// Overwrite a sum node's weights (given in linear space, normalized by
    /// the caller). Only allowed before the posterior update.
    pub fn set_weights(&mut self, id: NodeId, weights: &[f64]) -> Result<()> {
        if self.posterior_applied {
            return Err(Error::state("weights are frozen after the posterior update"));
        }
        match self.nodes.get_mut(id.0).map(|n| &mut n.kind) {
            Some(NodeKind::Sum { log_weights, children }) if children.len() == weights.len() => {
                *log_weights = weights.iter().map(|w| w.ln()).collect();
                Ok(())
            }
            _ => Err(Error::arg(format!("{id} is not a sum node with {} children", weights.len()))),
        }
    }

    /// Post-order (children first) listing of the nodes reachable from the
    /// root. Fails on dangling ids or cycles.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let n = self.nodes.len();
        if self.root.0 >= n {
            return Err(Error::state(format!("root {} does not exist", self.root)));
        }
        let mut mark = vec![Mark::New; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![(self.root, 0usize)];
        mark[self.root.0] = Mark::Open;
        while let Some((id, next)) = stack.pop() {
            let children = self.nodes[id.0].kind.children();
            if next < children.len() {
                stack.push((id, next + 1));
                let c = children[next];
                if c.0 >= n {
                    return Err(Error::state(format!("{id} references missing child {c}")));
                }
                match mark[c.0] {
                    Mark::New => {
                        mark[c.0] = Mark::Open;
                        stack.push((c, 0));
                    }
                    Mark::Open => return Err(Error::state(format!("cycle through {c}"))),
                    Mark::Done => {}
                }
            } else {
                mark[id.0] = Mark::Done;
                order.push(id);
            }
        }
        Ok(order)
    }

    /// Check every structural rule; an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

/// Incremental construction of an [`SpnGp`]. Regions and scopes of internal
/// nodes are derived from their children; nothing is checked until
/// [`SpnGp::validate`].
#[derive(Debug, Default)]
pub struct SpnBuilder {
    nodes: Vec<Node>,
}

impl SpnBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, kind: NodeKind, out_scope: Vec<usize>, region: Region) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            kind,
            out_scope,
            region,
        });
        id
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn leaf(&mut self, leaf: GpLeaf, output: usize, region: Region) -> NodeId {
        self.push(NodeKind::Leaf(Box::new(leaf)), vec![output], region)
    }

    /// Sum node with the given linear-space weights.
    pub fn sum(&mut self, children: Vec<NodeId>, weights: &[f64]) -> NodeId {
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        self.sum_log(children, log_weights)
    }

    pub fn sum_uniform(&mut self, children: Vec<NodeId>) -> NodeId {
        let w = -(children.len() as f64).ln();
        let n = children.len();
        self.sum_log(children, vec![w; n])
    }

    pub fn sum_log(&mut self, children: Vec<NodeId>, log_weights: Vec<f64>) -> NodeId {
        let first = &self.nodes[children[0].0];
        let (scope, region) = (first.out_scope.clone(), first.region.clone());
        self.push(NodeKind::Sum { children, log_weights }, scope, region)
    }

    /// Split node; its region is the union of the children's slabs.
    pub fn split(&mut self, axis: usize, thresholds: Vec<f64>, children: Vec<NodeId>) -> NodeId {
        let first = &self.nodes[children[0].0];
        let last = &self.nodes[children[children.len() - 1].0];
        let scope = first.out_scope.clone();
        let mut region = first.region.clone();
        region.upper[axis] = last.region.upper[axis];
        region.upper_closed[axis] = last.region.upper_closed[axis];
        region.data_idx = children
            .iter()
            .flat_map(|c| self.nodes[c.0].region.data_idx.iter().copied())
            .collect();
        region.data_idx.sort_unstable();
        region.overlap_idx.clear();
        self.push(NodeKind::Split { axis, thresholds, children }, scope, region)
    }

    pub fn product(&mut self, children: Vec<NodeId>) -> NodeId {
        let scope: BTreeSet<usize> = children
            .iter()
            .flat_map(|c| self.nodes[c.0].out_scope.iter().copied())
            .collect();
        let region = self.nodes[children[0].0].region.clone();
        self.push(NodeKind::Product { children }, scope.into_iter().collect(), region)
    }

    pub fn build(self, root: NodeId, meta: TrainMeta) -> SpnGp {
        SpnGp::from_parts(self.nodes, root, meta)
    }
}

/// One broken structural rule at one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodeId,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}", self.node, self.rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    IdMismatch,
    DanglingChild,
    Cycle,
    Unreachable,
    SumArity,
    SumWeightsNonFinite,
    SumWeightsNotNormalized,
    /// Completeness: sum children must share the output scope.
    SumScopeMismatch,
    /// Completeness over inputs: sum children must share the region.
    SumRegionMismatch,
    /// Decomposability: product children need disjoint output scopes.
    ProductScopeOverlap,
    ProductScopeUnion,
    ProductRegionMismatch,
    SplitAxisOutOfRange,
    SplitThresholds,
    SplitScopeMismatch,
    /// Split children boxes intersect.
    SplitOverlap,
    /// Split children do not tile the parent box at the thresholds.
    SplitNotTiling,
    LeafScope,
    LeafDimension,
    RegionDimension,
}

const WEIGHT_NORM_TOL: f64 = 1e-12;

fn validate(model: &SpnGp) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.nodes.len();
    let dim = model.meta.input_dim;
    let mut dangling = false;
    let mut bad = |node: NodeId, rule: Rule| out.push(Violation { node, rule });

    if model.root.0 >= n {
        bad(model.root, Rule::DanglingChild);
        return out;
    }

    for (i, node) in model.nodes.iter().enumerate() {
        let id = NodeId(i);
        if node.id != id {
            bad(id, Rule::IdMismatch);
        }
        if node.region.lower.len() != dim
            || node.region.upper.len() != dim
            || node.region.upper_closed.len() != dim
            || node.region.lower.iter().zip(&node.region.upper).any(|(l, u)| !(l <= u))
        {
            bad(id, Rule::RegionDimension);
            continue;
        }
        let children = node.kind.children();
        if children.iter().any(|c| c.0 >= n) {
            dangling = true;
            bad(id, Rule::DanglingChild);
            continue;
        }
        let child = |c: &NodeId| &model.nodes[c.0];
        match &node.kind {
            NodeKind::Sum { children, log_weights } => {
                if children.is_empty() || children.len() != log_weights.len() {
                    bad(id, Rule::SumArity);
                } else if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
                    bad(id, Rule::SumWeightsNonFinite);
                } else if crate::math::logsumexp(log_weights).abs() > WEIGHT_NORM_TOL {
                    bad(id, Rule::SumWeightsNotNormalized);
                }
                if children.iter().any(|c| child(c).out_scope != node.out_scope) {
                    bad(id, Rule::SumScopeMismatch);
                }
                if children.iter().any(|c| !child(c).region.same_box(&node.region)) {
                    bad(id, Rule::SumRegionMismatch);
                }
            }
            NodeKind::Product { children } => {
                let mut seen = BTreeSet::new();
                let mut overlap = false;
                for c in children {
                    for s in &child(c).out_scope {
                        overlap |= !seen.insert(*s);
                    }
                }
                if overlap {
                    bad(id, Rule::ProductScopeOverlap);
                }
                if children.is_empty() || seen.into_iter().collect::<Vec<_>>() != node.out_scope {
                    bad(id, Rule::ProductScopeUnion);
                }
                if children.iter().any(|c| !child(c).region.same_box(&node.region)) {
                    bad(id, Rule::ProductRegionMismatch);
                }
            }
            NodeKind::Split {
                axis,
                thresholds,
                children,
            } => {
                if children.iter().any(|c| child(c).out_scope != node.out_scope) {
                    bad(id, Rule::SplitScopeMismatch);
                }
                if *axis >= dim {
                    bad(id, Rule::SplitAxisOutOfRange);
                    continue;
                }
                let (lo, hi) = (node.region.lower[*axis], node.region.upper[*axis]);
                let thresholds_ok = children.len() >= 2
                    && thresholds.len() + 1 == children.len()
                    && thresholds.windows(2).all(|w| w[0] < w[1])
                    && thresholds.iter().all(|t| *t > lo && *t < hi);
                if !thresholds_ok {
                    bad(id, Rule::SplitThresholds);
                    continue;
                }
                let boxes: Vec<&Region> = children.iter().map(|c| &child(c).region).collect();
                if split_children_overlap(&boxes, *axis) {
                    bad(id, Rule::SplitOverlap);
                } else if boxes
                    .iter()
                    .enumerate()
                    .any(|(k, b)| !b.same_box(&node.region.slab(*axis, thresholds, k)))
                {
                    bad(id, Rule::SplitNotTiling);
                }
            }
            NodeKind::Leaf(leaf) => {
                if node.out_scope.len() != 1 || node.out_scope[0] >= model.meta.output_dim {
                    bad(id, Rule::LeafScope);
                }
                if leaf.kernel().input_dim() != dim {
                    bad(id, Rule::LeafDimension);
                }
            }
        }
    }

    match model.topo_order() {
        Ok(order) => {
            if order.len() != n {
                let mut reach = vec![false; n];
                for id in &order {
                    reach[id.0] = true;
                }
                for (i, r) in reach.into_iter().enumerate() {
                    if !r {
                        bad(NodeId(i), Rule::Unreachable);
                    }
                }
            }
        }
        Err(_) => {
            if !dangling {
                bad(model.root, Rule::Cycle);
            }
        }
    }
    out
}

/// True when two child boxes share interior volume along the split axis.
fn split_children_overlap(boxes: &[&Region], axis: usize) -> bool {
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let (a, b) = (boxes[i], boxes[j]);
            let overlap = a.lower[axis] < b.upper[axis] && b.lower[axis] < a.upper[axis];
            if overlap {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use nalgebra::DVector;

    fn leaf() -> GpLeaf {
        GpLeaf::empty(KernelSpec::se_ard(1.0, &[1.0]).unwrap(), 0.1).unwrap()
    }

    fn unit() -> Region {
        Region::closed(vec![0.0], vec![1.0])
    }

    #[test]
    fn region_membership_is_half_open_except_global_edge() {
        let r = Region::new(vec![0.0], vec![1.0]);
        assert!(r.contains(&[0.0]));
        assert!(!r.contains(&[1.0]));
        assert!(unit().contains(&[1.0]));
        assert!(!unit().contains(&[1.0000001]));
        let s = unit().slab(0, &[0.25, 0.5], 2);
        assert_eq!((s.lower[0], s.upper[0], s.upper_closed[0]), (0.5, 1.0, true));
        let s0 = unit().slab(0, &[0.25, 0.5], 0);
        assert_eq!((s0.lower[0], s0.upper[0], s0.upper_closed[0]), (0.0, 0.25, false));
    }

    #[test]
    fn single_leaf_is_valid() {
        let mut b = SpnBuilder::new();
        let l = b.leaf(leaf(), 0, unit());
        assert!(b.build(l, TrainMeta::uncentered(1, 1)).validate().is_empty());
    }

    #[test]
    fn sum_over_different_regions_is_incomplete() {
        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, unit());
        let c = b.leaf(leaf(), 0, Region::closed(vec![0.0], vec![2.0]));
        let s = b.sum_uniform(vec![a, c]);
        let v = b.build(s, TrainMeta::uncentered(1, 1)).validate();
        assert_eq!(v, vec![Violation { node: s, rule: Rule::SumRegionMismatch }]);
    }

    #[test]
    fn split_with_overlapping_children() {
        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, Region::new(vec![0.0], vec![0.6]));
        let c = b.leaf(leaf(), 0, unit().slab(0, &[0.5], 1));
        let s = b.split(0, vec![0.5], vec![a, c]);
        let v = b.build(s, TrainMeta::uncentered(1, 1)).validate();
        assert_eq!(v, vec![Violation { node: s, rule: Rule::SplitOverlap }]);
    }

    #[test]
    fn split_with_gap_is_not_tiling() {
        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, Region::new(vec![0.0], vec![0.4]));
        let c = b.leaf(leaf(), 0, unit().slab(0, &[0.5], 1));
        let s = b.split(0, vec![0.5], vec![a, c]);
        let v = b.build(s, TrainMeta::uncentered(1, 1)).validate();
        assert_eq!(v, vec![Violation { node: s, rule: Rule::SplitNotTiling }]);
    }

    #[test]
    fn product_scope_rules() {
        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, unit());
        let c = b.leaf(leaf(), 0, unit());
        let p = b.product(vec![a, c]);
        let v = b.build(p, TrainMeta::uncentered(1, 2)).validate();
        assert_eq!(v, vec![Violation { node: p, rule: Rule::ProductScopeOverlap }]);

        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, unit());
        let c = b.leaf(leaf(), 1, unit());
        let p = b.product(vec![a, c]);
        assert!(b.build(p, TrainMeta::uncentered(1, 2)).validate().is_empty());
    }

    #[test]
    fn unnormalized_weights_and_unreachable_nodes() {
        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, unit());
        let c = b.leaf(leaf(), 0, unit());
        let _orphan = b.leaf(leaf(), 0, unit());
        let s = b.sum(vec![a, c], &[0.5, 0.6]);
        let v = b.build(s, TrainMeta::uncentered(1, 1)).validate();
        assert!(v.contains(&Violation { node: s, rule: Rule::SumWeightsNotNormalized }));
        assert!(v.contains(&Violation { node: NodeId(2), rule: Rule::Unreachable }));
    }

    #[test]
    fn cycles_are_reported() {
        let mut b = SpnBuilder::new();
        let a = b.leaf(leaf(), 0, unit());
        let s = b.sum_uniform(vec![a]);
        let mut m = b.build(s, TrainMeta::uncentered(1, 1));
        if let NodeKind::Sum { children, log_weights } = &mut m.nodes_mut()[s.0].kind {
            children.push(s);
            *log_weights = vec![0.5f64.ln(); 2];
        }
        let v = m.validate();
        assert!(v.iter().any(|x| x.rule == Rule::Cycle), "{v:?}");
        assert!(m.topo_order().is_err());
    }

    #[test]
    fn builder_split_region_is_union() {
        let x = DMatrix::from_row_slice(2, 1, &[0.2, 0.8]);
        let k = KernelSpec::se_ard(1.0, &[1.0]).unwrap();
        let mut b = SpnBuilder::new();
        let mut left = unit().slab(0, &[0.5], 0);
        left.data_idx = vec![0];
        let mut right = unit().slab(0, &[0.5], 1);
        right.data_idx = vec![1];
        let l0 = GpLeaf::new(k.clone(), 0.1, x.rows(0, 1).into_owned(), DVector::from_vec(vec![1.0])).unwrap();
        let l1 = GpLeaf::new(k, 0.1, x.rows(1, 1).into_owned(), DVector::from_vec(vec![2.0])).unwrap();
        let a = b.leaf(l0, 0, left);
        let c = b.leaf(l1, 0, right);
        let s = b.split(0, vec![0.5], vec![a, c]);
        assert!(b.node(s).region.same_box(&unit()));
        assert_eq!(b.node(s).region.data_idx, vec![0, 1]);
    }
}
