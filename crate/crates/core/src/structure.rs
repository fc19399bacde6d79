//! Structure learning: recursive random axis-aligned splitting of the input
//! space into a region graph, and assembly of an SPN-GP on top of it.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::GpLeaf;
use crate::kernel::{KernelFamily, KernelSpec, MaternNu};
use crate::math::{std_dev, Fingerprint};
use crate::spn::inference::route_child;
use crate::spn::{Node, NodeId, NodeKind, Region, SpnGp, TrainMeta, TrainingSet};

/// How a region is cut along its chosen axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitMode {
    /// `children` equally wide slabs.
    EqualWidth { children: usize },
    /// Slabs of a fixed width per axis starting at the lower edge; the last
    /// slab takes the remainder.
    MinWidth { widths: Vec<f64> },
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::EqualWidth { children: 2 }
    }
}

/// Boundary points borrowed across interior faces of leaf regions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Overlap {
    #[default]
    None,
    /// The `count` nearest points beyond each face.
    Count { count: usize },
    /// All points within `radius` beyond each face.
    Radius { radius: f64 },
}

/// A menu entry. Unset hyperparameters are initialized from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTemplate {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<MaternNu>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl KernelTemplate {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            nu: None,
            signal: None,
            lengthscales: None,
            period: None,
        }
    }

    pub fn fixed(mut self, signal: f64, lengthscales: &[f64]) -> Self {
        self.signal = Some(signal);
        self.lengthscales = Some(lengthscales.to_vec());
        self
    }

    /// Concrete kernel for a region of the given widths.
    pub fn instantiate(&self, dim: usize, y_std: f64, widths: &[f64], fallback: &[f64]) -> Result<KernelSpec> {
        let signal = self.signal.unwrap_or(y_std);
        let ls: Vec<f64> = match &self.lengthscales {
            Some(l) if l.len() == 1 && dim > 1 => vec![l[0]; dim],
            Some(l) => l.clone(),
            None => (0..dim)
                .map(|d| {
                    let w = widths[d];
                    if w.is_finite() && w > 0.0 {
                        w / 2.0
                    } else {
                        fallback[d]
                    }
                })
                .collect(),
        };
        match self.family {
            KernelFamily::Linear => KernelSpec::linear(signal, dim),
            KernelFamily::SquaredExponentialArd => KernelSpec::se_ard(signal, &ls),
            KernelFamily::Matern => KernelSpec::matern(self.nu.unwrap_or_default(), signal, &ls),
            KernelFamily::Periodic => {
                let period = self.period.unwrap_or(ls[0]);
                KernelSpec::periodic(signal, ls[0], period)
            }
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_split_cap() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    /// Regions with more than this many points are split further.
    pub min_points: usize,
    #[serde(default)]
    pub split: SplitMode,
    #[serde(default = "default_one")]
    pub sum_nodes_per_region: usize,
    /// Random axes tried per region, each giving one partition.
    #[serde(default = "default_one")]
    pub partition_schemes: usize,
    #[serde(default = "default_split_cap")]
    pub max_split_nodes_per_partition: usize,
    pub kernels: Vec<KernelTemplate>,
    #[serde(default)]
    pub overlap: Overlap,
    /// Fixed noise standard deviation for every leaf; otherwise 0.1·std(y).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Root box; defaults to the bounding box of the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default)]
    pub seed: u64,
}

impl StructureConfig {
    pub fn new(min_points: usize, kernels: Vec<KernelTemplate>) -> Self {
        Self {
            min_points,
            split: SplitMode::default(),
            sum_nodes_per_region: 1,
            partition_schemes: 1,
            max_split_nodes_per_partition: default_split_cap(),
            kernels,
            overlap: Overlap::None,
            noise: None,
            domain: None,
            seed: 0,
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.min_points == 0 {
            return Err(Error::arg("min_points must be at least 1"));
        }
        if self.kernels.is_empty() {
            return Err(Error::arg("kernel menu is empty"));
        }
        if self.sum_nodes_per_region == 0 || self.partition_schemes == 0 {
            return Err(Error::arg("sum_nodes_per_region and partition_schemes must be at least 1"));
        }
        if self.max_split_nodes_per_partition < self.sum_nodes_per_region {
            return Err(Error::arg("max_split_nodes_per_partition must be at least sum_nodes_per_region"));
        }
        match &self.split {
            SplitMode::EqualWidth { children } if *children < 2 => {
                return Err(Error::arg("equal-width splitting needs at least 2 children"))
            }
            SplitMode::MinWidth { widths } if widths.len() != dim && widths.len() != 1 => {
                return Err(Error::arg(format!("min_width needs 1 or {dim} widths")))
            }
            SplitMode::MinWidth { widths } if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) => {
                return Err(Error::arg("min_width widths must be positive"))
            }
            _ => {}
        }
        if let Some(n) = self.noise {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::arg("fixed noise must be positive"));
            }
        }
        match self.overlap {
            Overlap::Radius { radius } if !(radius >= 0.0) => Err(Error::arg("overlap radius must be non-negative")),
            _ => Ok(()),
        }
    }

    fn min_width(&self, axis: usize) -> f64 {
        match &self.split {
            SplitMode::MinWidth { widths } => widths[if widths.len() == 1 { 0 } else { axis }],
            SplitMode::EqualWidth { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub parent: usize,
    pub axis: usize,
    pub thresholds: Vec<f64>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RegionGraph {
    /// Region 0 is the root.
    pub regions: Vec<Region>,
    pub partitions: Vec<Partition>,
    /// Partitions of each region, empty for leaf regions.
    pub region_partitions: Vec<Vec<usize>>,
    /// Leaf regions that hold too many points but could not be cut.
    pub indivisible: Vec<bool>,
    pub n_points: usize,
    pub dim: usize,
}

impl RegionGraph {
    pub fn leaf_regions(&self) -> Vec<usize> {
        (0..self.regions.len())
            .filter(|r| self.region_partitions[*r].is_empty())
            .collect()
    }

    /// Mean number of training rows per leaf region.
    pub fn mean_points_per_leaf(&self) -> f64 {
        let leaves = self.leaf_regions();
        let total: usize = leaves.iter().map(|r| self.regions[*r].data_idx.len()).sum();
        total as f64 / leaves.len() as f64
    }
}

fn box_key(r: &Region) -> Vec<u64> {
    r.lower
        .iter()
        .chain(&r.upper)
        .map(|v| v.to_bits())
        .chain(r.upper_closed.iter().map(|c| *c as u64))
        .collect()
}

/// Per-region RNG derived from the seed and the box, so the decisions made
/// for a region do not depend on the order regions are visited in.
fn region_rng(seed: u64, tag: u64, key: &[u64]) -> ChaCha8Rng {
    let mut f = Fingerprint::new();
    f.u64(seed).u64(tag);
    for k in key {
        f.u64(*k);
    }
    ChaCha8Rng::seed_from_u64(f.finish_u64())
}

fn thresholds_for(cfg: &StructureConfig, region: &Region, axis: usize) -> Vec<f64> {
    let (lo, hi) = (region.lower[axis], region.upper[axis]);
    let mut t: Vec<f64> = match &cfg.split {
        SplitMode::EqualWidth { children } => {
            let w = hi - lo;
            (1..*children).map(|k| lo + k as f64 * w / *children as f64).collect()
        }
        SplitMode::MinWidth { .. } => {
            let delta = cfg.min_width(axis);
            (1..).map(|k| lo + k as f64 * delta).take_while(|t| *t < hi).collect()
        }
    };
    t.retain(|v| *v > lo && *v < hi);
    t.dedup();
    t
}

/// Recursively split the input space of `x`.
pub fn build_region_graph(x: &DMatrix<f64>, cfg: &StructureConfig) -> Result<RegionGraph> {
    let (n, dim) = (x.nrows(), x.ncols());
    if n == 0 || dim == 0 {
        return Err(Error::arg("cannot build a region graph over an empty dataset"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite inputs"));
    }
    cfg.check(dim)?;
    let (lower, upper) = match &cfg.domain {
        Some((l, u)) => {
            if l.len() != dim || u.len() != dim {
                return Err(Error::arg(format!("domain must have {dim} bounds per side")));
            }
            (l.clone(), u.clone())
        }
        None => (
            (0..dim).map(|d| x.column(d).min()).collect::<Vec<_>>(),
            (0..dim).map(|d| x.column(d).max()).collect::<Vec<_>>(),
        ),
    };
    let mut root = Region::closed(lower, upper);
    root.data_idx = (0..n).filter(|i| root.contains(&row(x, *i))).collect();
    if root.data_idx.len() != n {
        return Err(Error::arg("domain does not contain every training input"));
    }
    let resolution: Vec<f64> = (0..dim)
        .map(|d| cfg.min_width(d).max(1e-9 * root.width(d)))
        .collect();

    let mut g = RegionGraph {
        regions: vec![root],
        partitions: Vec::new(),
        region_partitions: vec![Vec::new()],
        indivisible: vec![false],
        n_points: n,
        dim,
    };
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    index.insert(box_key(&g.regions[0]), 0);
    let mut queue = VecDeque::from([0usize]);

    while let Some(r) = queue.pop_front() {
        if g.regions[r].data_idx.len() <= cfg.min_points {
            continue;
        }
        let region = g.regions[r].clone();
        let mut axes: Vec<usize> = (0..dim).filter(|d| region.width(*d) > resolution[*d]).collect();
        let mut rng = region_rng(cfg.seed, 0, &box_key(&region));
        axes.shuffle(&mut rng);
        let mut made = 0;
        for axis in axes {
            if made == cfg.partition_schemes {
                break;
            }
            let thresholds = thresholds_for(cfg, &region, axis);
            if thresholds.is_empty() {
                continue;
            }
            let mut kids: Vec<Region> = (0..=thresholds.len())
                .map(|k| region.slab(axis, &thresholds, k))
                .collect();
            for i in &region.data_idx {
                kids[route_child(&thresholds, x[(*i, axis)])].data_idx.push(*i);
            }
            if kids.iter().any(|k| k.data_idx.len() == region.data_idx.len()) {
                continue;
            }
            let mut children = Vec::with_capacity(kids.len());
            for kid in kids {
                let key = box_key(&kid);
                let id = *index.entry(key).or_insert_with(|| {
                    g.regions.push(kid);
                    g.region_partitions.push(Vec::new());
                    g.indivisible.push(false);
                    queue.push_back(g.regions.len() - 1);
                    g.regions.len() - 1
                });
                children.push(id);
            }
            g.partitions.push(Partition {
                parent: r,
                axis,
                thresholds,
                children,
            });
            g.region_partitions[r].push(g.partitions.len() - 1);
            made += 1;
        }
        if made == 0 {
            g.indivisible[r] = true;
        }
    }
    Ok(g)
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

struct Assembler<'a> {
    graph: &'a RegionGraph,
    cfg: &'a StructureConfig,
    data: &'a Dataset,
    nodes: Vec<Node>,
    /// Sum nodes of each region, per output.
    sums: Vec<Option<Vec<NodeId>>>,
    y_centered: DVector<f64>,
    y_std: f64,
    fallback_ls: Vec<f64>,
    output: usize,
}

impl Assembler<'_> {
    fn push(&mut self, kind: NodeKind, region: &Region) -> NodeId {
        let id = NodeId(self.nodes.len());
        let mut reg = Region::new(region.lower.clone(), region.upper.clone());
        reg.upper_closed = region.upper_closed.clone();
        reg.data_idx = region.data_idx.clone();
        self.nodes.push(Node {
            id,
            kind,
            out_scope: vec![self.output],
            region: reg,
        });
        id
    }

    fn leaves(&mut self, r: usize) -> Result<Vec<NodeId>> {
        let region = &self.graph.regions[r];
        let rows = &region.data_idx;
        let widths: Vec<f64> = (0..self.graph.dim).map(|d| region.width(d)).collect();
        let xb = self.data.x.select_rows(rows.iter());
        let yb = DVector::from_iterator(rows.len(), rows.iter().map(|i| self.y_centered[*i]));
        let noise = self.cfg.noise.unwrap_or(0.1 * self.y_std);
        let mut out = Vec::new();
        for t in &self.cfg.kernels {
            let k = t.instantiate(self.graph.dim, self.y_std, &widths, &self.fallback_ls)?;
            let leaf = GpLeaf::new(k, noise, xb.clone(), yb.clone())?
                .with_rows(rows.clone())
                .with_region(r);
            let region = region.clone();
            out.push(self.push(NodeKind::Leaf(Box::new(leaf)), &region));
        }
        Ok(out)
    }

    /// Sum nodes of region `r`, building everything below on first use.
    fn region_sums(&mut self, r: usize, count: usize) -> Result<Vec<NodeId>> {
        if let Some(s) = &self.sums[r] {
            return Ok(s.clone());
        }
        let region = self.graph.regions[r].clone();
        let children: Vec<NodeId> = if self.graph.region_partitions[r].is_empty() {
            self.leaves(r)?
        } else {
            let mut splits = Vec::new();
            for p in self.graph.region_partitions[r].clone() {
                splits.extend(self.partition_splits(p)?);
            }
            splits
        };
        let w = -(children.len() as f64).ln();
        let sums: Vec<NodeId> = (0..count)
            .map(|_| {
                self.push(
                    NodeKind::Sum {
                        children: children.clone(),
                        log_weights: vec![w; children.len()],
                    },
                    &region,
                )
            })
            .collect();
        self.sums[r] = Some(sums.clone());
        Ok(sums)
    }

    fn partition_splits(&mut self, p: usize) -> Result<Vec<NodeId>> {
        let part = self.graph.partitions[p].clone();
        let s = self.cfg.sum_nodes_per_region;
        let mut child_sums = Vec::with_capacity(part.children.len());
        for c in &part.children {
            child_sums.push(self.region_sums(*c, s)?);
        }
        let tuples = split_tuples(
            s,
            part.children.len(),
            self.cfg.max_split_nodes_per_partition,
            &mut region_rng(self.cfg.seed, 1, &box_key(&self.graph.regions[part.parent])),
        );
        let parent = self.graph.regions[part.parent].clone();
        Ok(tuples
            .into_iter()
            .map(|t| {
                let children = t.iter().enumerate().map(|(k, i)| child_sums[k][*i]).collect();
                self.push(
                    NodeKind::Split {
                        axis: part.axis,
                        thresholds: part.thresholds.clone(),
                        children,
                    },
                    &parent,
                )
            })
            .collect())
    }
}

/// Choices of one sum node per child region. All `s^v` combinations when
/// they fit under `cap`; otherwise the `s` diagonal tuples followed by
/// distinct random ones, so every child sum node stays reachable.
fn split_tuples(s: usize, v: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let total = (s as f64).powi(v as i32);
    if total <= cap as f64 {
        let mut out = vec![Vec::new()];
        for _ in 0..v {
            out = out
                .into_iter()
                .flat_map(|t: Vec<usize>| {
                    (0..s).map(move |i| {
                        let mut t = t.clone();
                        t.push(i);
                        t
                    })
                })
                .collect();
        }
        return out;
    }
    let mut out: Vec<Vec<usize>> = (0..s).map(|i| vec![i; v]).collect();
    while out.len() < cap {
        let t: Vec<usize> = (0..v).map(|_| rng.random_range(0..s)).collect();
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Equip a region graph with sum, split and GP leaf nodes. Targets are
/// centered by their training mean; each output gets its own sub-network
/// under a root product node when there is more than one.
pub fn build_spn(graph: &RegionGraph, data: &Dataset, cfg: &StructureConfig) -> Result<SpnGp> {
    if data.x.nrows() != graph.n_points || data.x.ncols() != graph.dim {
        return Err(Error::arg("region graph was built from a different input matrix"));
    }
    cfg.check(graph.dim)?;
    let out_dim = data.y.ncols();
    if out_dim == 0 {
        return Err(Error::arg("dataset has no targets"));
    }
    let root_region = &graph.regions[0];
    let fallback_ls: Vec<f64> = (0..graph.dim)
        .map(|d| {
            let w = root_region.width(d);
            if w.is_finite() && w > 0.0 {
                w / 2.0
            } else {
                1.0
            }
        })
        .collect();
    let mut nodes = Vec::new();
    let mut roots = Vec::new();
    let mut offsets = Vec::new();
    for j in 0..out_dim {
        let col: Vec<f64> = data.y.column(j).iter().copied().collect();
        let offset = crate::math::mean(&col);
        let centered: Vec<f64> = col.iter().map(|v| v - offset).collect();
        let sd = std_dev(&centered);
        let mut a = Assembler {
            graph,
            cfg,
            data,
            nodes: std::mem::take(&mut nodes),
            sums: vec![None; graph.regions.len()],
            y_centered: DVector::from_vec(centered),
            y_std: if sd > 0.0 { sd } else { 1.0 },
            fallback_ls: fallback_ls.clone(),
            output: j,
        };
        let root = a.region_sums(0, 1)?[0];
        nodes = a.nodes;
        roots.push(root);
        offsets.push(offset);
    }
    let root = if out_dim == 1 {
        roots[0]
    } else {
        let id = NodeId(nodes.len());
        let mut region = nodes[roots[0].0].region.clone();
        region.overlap_idx.clear();
        nodes.push(Node {
            id,
            kind: NodeKind::Product { children: roots },
            out_scope: (0..out_dim).collect(),
            region,
        });
        id
    };
    let meta = TrainMeta {
        y_offset: offsets,
        input_dim: graph.dim,
        output_dim: out_dim,
        dataset_fingerprint: data.fingerprint.clone(),
    };
    Ok(SpnGp::from_parts(nodes, root, meta).with_training(TrainingSet {
        x: data.x.clone(),
        y: data.y.clone(),
    }))
}

/// Convenience: region graph, SPN assembly and overlap in one call.
pub fn build(data: &Dataset, cfg: &StructureConfig) -> Result<SpnGp> {
    let g = build_region_graph(&data.x, cfg)?;
    let mut m = build_spn(&g, data, cfg)?;
    assign_overlap(&mut m, &cfg.overlap)?;
    Ok(m)
}

/// Rows beyond the interior faces of `region` that should flow into it.
fn borrowed_rows(region: &Region, root: &Region, x: &DMatrix<f64>, overlap: &Overlap) -> Vec<usize> {
    let dim = region.dim();
    let mut out = Vec::new();
    for d in 0..dim {
        for lower_face in [true, false] {
            let face = if lower_face { region.lower[d] } else { region.upper[d] };
            let interior = if lower_face { face > root.lower[d] } else { face < root.upper[d] };
            if !interior {
                continue;
            }
            let mut cand: Vec<(f64, usize)> = (0..x.nrows())
                .filter_map(|i| {
                    let v = x[(i, d)];
                    let beyond = if lower_face { v < face } else { v >= face };
                    let alongside = (0..dim)
                        .filter(|e| *e != d)
                        .all(|e| x[(i, e)] >= region.lower[e] && x[(i, e)] <= region.upper[e]);
                    (beyond && alongside).then(|| ((v - face).abs(), i))
                })
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match overlap {
                Overlap::None => {}
                Overlap::Count { count } => out.extend(cand.iter().take(*count).map(|c| c.1)),
                Overlap::Radius { radius } => out.extend(cand.iter().take_while(|c| c.0 <= *radius).map(|c| c.1)),
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Let boundary points flow across the interior faces of every leaf region.
/// Borrowed rows condition predictions only; leaf evidence ignores them.
pub fn assign_overlap(model: &mut SpnGp, overlap: &Overlap) -> Result<()> {
    if matches!(overlap, Overlap::None | Overlap::Count { count: 0 }) {
        return Ok(());
    }
    let training = model
        .training()
        .cloned()
        .ok_or_else(|| Error::state("overlap assignment needs the embedded training set"))?;
    let root = model.node(model.root()).region.clone();
    let offsets = model.meta().y_offset.clone();
    let mut cache: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for id in model.leaf_ids() {
        let node = model.node(id);
        let key = box_key(&node.region);
        let rows = cache
            .entry(key)
            .or_insert_with(|| borrowed_rows(&node.region, &root, &training.x, overlap))
            .clone();
        if rows.is_empty() {
            continue;
        }
        let output = node.out_scope[0];
        let ox = training.x.select_rows(rows.iter());
        let oy = DVector::from_iterator(rows.len(), rows.iter().map(|r| training.y[(*r, output)] - offsets[output]));
        model.leaf_mut(id).expect("leaf id").set_overlap(rows.clone(), &ox, &oy)?;
        model.nodes_mut()[id.0].region.overlap_idx = rows;
    }
    Ok(())
}

/// Block sizes and fit cost of a model against the idealized cost of
/// splitting `N` uniformly spread points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    /// Rows (data plus borrowed) of every leaf, in node order.
    pub leaf_sizes: Vec<usize>,
    pub n_points: usize,
    /// Σ N_L³ over all leaves.
    pub fit_cost: f64,
    /// Largest number of split children of any sum node.
    pub s: usize,
    /// Largest number of leaf children of any sum node.
    pub k: usize,
    /// Exponent of two; see `convention`.
    pub halving_exponent: f64,
    pub bound: f64,
    pub max_block: usize,
    pub max_block_is_n: bool,
    pub bound_met: bool,
    pub convention: String,
}

pub fn complexity_report(model: &SpnGp) -> Result<ComplexityReport> {
    let order = model.topo_order()?;
    let n_points = model.training().map_or_else(
        || model.leaf_ids().iter().filter_map(|l| model.leaf(*l)).map(|l| l.n_data()).sum(),
        |t| t.x.nrows(),
    );
    let mut leaf_sizes = Vec::new();
    let mut fit_cost = 0.0;
    let (mut s, mut k) = (1usize, 1usize);
    // smallest over root-to-leaf paths of Σ 2·log2(split arity)
    let mut expo = vec![f64::INFINITY; model.nodes().len()];
    for id in &order {
        let node = model.node(*id);
        expo[id.0] = match &node.kind {
            NodeKind::Leaf(l) => {
                let size = l.x().nrows();
                leaf_sizes.push(size);
                fit_cost += (size as f64).powi(3);
                0.0
            }
            NodeKind::Sum { children, .. } => {
                let leaves = children.iter().filter(|c| model.leaf(**c).is_some()).count();
                let splits = children
                    .iter()
                    .filter(|c| matches!(model.node(**c).kind, NodeKind::Split { .. }))
                    .count();
                k = k.max(leaves);
                s = s.max(splits);
                children.iter().map(|c| expo[c.0]).fold(f64::INFINITY, f64::min)
            }
            NodeKind::Product { children } => children.iter().map(|c| expo[c.0]).fold(f64::INFINITY, f64::min),
            NodeKind::Split { children, .. } => {
                2.0 * (children.len() as f64).log2()
                    + children.iter().map(|c| expo[c.0]).fold(f64::INFINITY, f64::min)
            }
        };
    }
    let halving_exponent = expo[model.root().0];
    let out_dim = model.meta().output_dim.max(1);
    let n3 = (n_points as f64).powi(3);
    let bound = out_dim as f64 * s as f64 * k as f64 * n3 / halving_exponent.exp2();
    let max_block = leaf_sizes.iter().copied().max().unwrap_or(0);
    Ok(ComplexityReport {
        leaf_sizes,
        n_points,
        fit_cost,
        s,
        k,
        halving_exponent,
        bound,
        max_block,
        max_block_is_n: n_points > 0 && max_block >= n_points,
        bound_met: fit_cost <= bound * (1.0 + 1e-9),
        convention: "bound = outputs * S * K * N^3 / 2^e; e is the smallest, over root-to-leaf paths, \
                     of the sum of 2*log2(arity) over split nodes on the path; S is the largest number of \
                     split children and K the largest number of leaf children of any sum node"
            .into(),
    })
}
