//! The network viewed as an explicit mixture over induced trees.
//!
//! Exponential in the worst case; meant for checking the linear-time
//! routines on small models.

use std::collections::BTreeMap;

use super::{NodeId, NodeKind, SpnGp};
use crate::error::{Error, Result};

pub const DEFAULT_TREE_CAP: usize = 100_000;

/// One selection of a single child at every visited sum node.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedTree {
    /// (sum node, chosen child) pairs, sorted.
    pub edges: Vec<(NodeId, NodeId)>,
    /// Leaves of the tree, sorted.
    pub leaves: Vec<NodeId>,
    /// Sum of the chosen log-weights.
    pub log_prior: f64,
}

impl SpnGp {
    /// Number of induced trees, as a float so large counts saturate gracefully.
    pub fn count_induced_trees(&self) -> Result<f64> {
        let order = self.topo_order()?;
        let mut count = vec![0.0f64; self.nodes().len()];
        for id in order {
            count[id.0] = match &self.node(id).kind {
                NodeKind::Leaf(_) => 1.0,
                NodeKind::Sum { children, .. } => children.iter().map(|c| count[c.0]).sum(),
                NodeKind::Product { children } | NodeKind::Split { children, .. } => {
                    children.iter().map(|c| count[c.0]).product()
                }
            };
        }
        Ok(count[self.root().0])
    }

    /// Every induced tree, refusing when there are more than `cap`.
    pub fn enumerate_induced_trees(&self, cap: usize) -> Result<Vec<InducedTree>> {
        let count = self.count_induced_trees()?;
        if count > cap as f64 {
            return Err(Error::Capacity(format!("{count} induced trees exceed the cap of {cap}")));
        }
        let mut memo = BTreeMap::new();
        let mut trees = self.trees_below(self.root(), &mut memo);
        for t in &mut trees {
            t.edges.sort_unstable();
            t.edges.dedup();
            t.leaves.sort_unstable();
            t.leaves.dedup();
        }
        Ok(trees)
    }

    fn trees_below(&self, id: NodeId, memo: &mut BTreeMap<NodeId, Vec<InducedTree>>) -> Vec<InducedTree> {
        if let Some(t) = memo.get(&id) {
            return t.clone();
        }
        let out = match &self.node(id).kind {
            NodeKind::Leaf(_) => vec![InducedTree {
                edges: Vec::new(),
                leaves: vec![id],
                log_prior: 0.0,
            }],
            NodeKind::Sum { children, log_weights } => {
                let mut out = Vec::new();
                for (c, w) in children.iter().zip(log_weights) {
                    for mut t in self.trees_below(*c, memo) {
                        t.edges.push((id, *c));
                        t.log_prior += w;
                        out.push(t);
                    }
                }
                out
            }
            NodeKind::Product { children } | NodeKind::Split { children, .. } => {
                let mut acc = vec![InducedTree {
                    edges: Vec::new(),
                    leaves: Vec::new(),
                    log_prior: 0.0,
                }];
                for c in children {
                    let sub = self.trees_below(*c, memo);
                    let mut next = Vec::with_capacity(acc.len() * sub.len());
                    for a in &acc {
                        for s in &sub {
                            let mut t = a.clone();
                            t.edges.extend_from_slice(&s.edges);
                            t.leaves.extend_from_slice(&s.leaves);
                            t.log_prior += s.log_prior;
                            next.push(t);
                        }
                    }
                    acc = next;
                }
                acc
            }
        };
        memo.insert(id, out.clone());
        out
    }

    /// For each tree, the leaves whose boxes contain `x`, one per output
    /// variable in output order. Uses region boxes only, not split thresholds.
    pub fn route(&self, trees: &[InducedTree], x: &[f64]) -> Result<Vec<Vec<NodeId>>> {
        if !self.node(self.root()).region.contains(x) {
            return Err(Error::Domain(format!("{x:?} lies outside the root region")));
        }
        let out_dim = self.meta().output_dim;
        trees
            .iter()
            .map(|t| {
                (0..out_dim)
                    .map(|j| {
                        let hits: Vec<NodeId> = t
                            .leaves
                            .iter()
                            .copied()
                            .filter(|l| {
                                let n = self.node(*l);
                                n.out_scope.contains(&j) && n.region.contains(x)
                            })
                            .collect();
                        match hits.as_slice() {
                            [one] => Ok(*one),
                            _ => Err(Error::state(format!(
                                "{} leaves of an induced tree contain {x:?} for output {j}",
                                hits.len()
                            ))),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
