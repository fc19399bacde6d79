use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spngp::data::Dataset;
use spngp::gp::GpLeaf;
use spngp::kernel::{KernelFamily, KernelSpec};
use spngp::spn::{Region, SpnBuilder, TrainMeta};
use spngp::structure::{
    build, build_region_graph, build_spn, complexity_report, KernelTemplate, Overlap, RegionGraph, SplitMode,
    StructureConfig,
};

fn random_data(rng: &mut ChaCha8Rng, n: usize, dim: usize, outs: usize) -> Dataset {
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..3.0));
    let y = DMatrix::from_fn(n, outs, |i, j| (x[(i, 0)] * (j + 1) as f64).sin() + 0.1 * rng.random::<f64>());
    let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect();
    Dataset::new(x, y, names("x", dim), names("y", outs)).unwrap()
}

fn random_config(rng: &mut ChaCha8Rng, dim: usize, seed: u64) -> StructureConfig {
    let families = [
        KernelFamily::SquaredExponentialArd,
        KernelFamily::Linear,
        KernelFamily::Matern,
    ];
    let menu = (0..rng.random_range(1..=3))
        .map(|i| KernelTemplate::new(families[i]))
        .collect();
    let mut cfg = StructureConfig::new(rng.random_range(1..40), menu);
    cfg.split = if rng.random_bool(0.5) {
        SplitMode::EqualWidth {
            children: rng.random_range(2..=4),
        }
    } else {
        SplitMode::MinWidth {
            widths: (0..dim).map(|_| rng.random_range(0.2..2.0)).collect(),
        }
    };
    cfg.sum_nodes_per_region = rng.random_range(1..=2);
    cfg.partition_schemes = rng.random_range(1..=dim.min(2));
    cfg.overlap = match rng.random_range(0..3) {
        0 => Overlap::None,
        1 => Overlap::Count {
            count: rng.random_range(0..4),
        },
        _ => Overlap::Radius {
            radius: rng.random_range(0.0..0.3),
        },
    };
    cfg.seed = seed;
    cfg
}

fn random_case(seed: u64) -> (Dataset, StructureConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=3);
    let outs = rng.random_range(1..=2);
    let n = rng.random_range(1..200);
    let d = random_data(&mut rng, n, dim, outs);
    let cfg = random_config(&mut rng, dim, seed);
    (d, cfg)
}

#[test]
fn generated_structures_are_valid() {
    for seed in 0..100 {
        let (d, cfg) = random_case(seed);
        let m = build(&d, &cfg).unwrap();
        assert!(m.validate().is_empty(), "seed {seed}: {:?}", m.validate());
    }
}

fn assert_tiles(g: &RegionGraph) {
    for p in &g.partitions {
        let parent = &g.regions[p.parent];
        let kids: Vec<&Region> = p.children.iter().map(|c| &g.regions[*c]).collect();
        assert_eq!(kids.len(), p.thresholds.len() + 1);
        assert_eq!(kids[0].lower[p.axis], parent.lower[p.axis]);
        assert_eq!(kids.last().unwrap().upper[p.axis], parent.upper[p.axis]);
        assert_eq!(kids.last().unwrap().upper_closed, parent.upper_closed);
        for (k, pair) in kids.windows(2).enumerate() {
            assert_eq!(pair[0].upper[p.axis], p.thresholds[k]);
            assert_eq!(pair[1].lower[p.axis], p.thresholds[k]);
            assert!(!pair[0].upper_closed[p.axis], "interior faces are open");
        }
        for kid in &kids {
            for e in (0..g.dim).filter(|e| *e != p.axis) {
                assert_eq!((kid.lower[e], kid.upper[e]), (parent.lower[e], parent.upper[e]));
            }
        }
        // every parent row lands in exactly one child
        let mut rows: Vec<usize> = kids.iter().flat_map(|k| k.data_idx.iter().copied()).collect();
        rows.sort_unstable();
        let mut want = parent.data_idx.clone();
        want.sort_unstable();
        assert_eq!(rows, want);
    }
}

#[test]
fn partitions_tile_their_parent() {
    for seed in 0..100 {
        let (d, cfg) = random_case(seed);
        assert_tiles(&build_region_graph(&d.x, &cfg).unwrap());
    }
}

#[test]
fn leaf_regions_are_small_or_indivisible() {
    for seed in 0..100 {
        let (d, cfg) = random_case(seed);
        let g = build_region_graph(&d.x, &cfg).unwrap();
        for r in g.leaf_regions() {
            assert!(
                g.regions[r].data_idx.len() <= cfg.min_points || g.indivisible[r],
                "seed {seed} region {r}"
            );
        }
    }
}

#[test]
fn leaf_count_never_drops_as_min_points_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_data(&mut rng, 400, 2, 1);
    let mut prev = 0;
    for o in [400, 200, 100, 50, 25, 12, 6] {
        let mut cfg = StructureConfig::new(o, vec![KernelTemplate::new(KernelFamily::SquaredExponentialArd)]);
        cfg.seed = 3;
        let n = build_region_graph(&d.x, &cfg).unwrap().leaf_regions().len();
        assert!(n >= prev, "O={o}: {n} < {prev}");
        prev = n;
    }
}

#[test]
fn serialization_is_deterministic() {
    for seed in 0..20 {
        let (d, cfg) = random_case(seed);
        let a = build(&d, &cfg).unwrap().to_json("fp").unwrap();
        let b = build(&d, &cfg).unwrap().to_json("fp").unwrap();
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn zero_count_overlap_changes_nothing() {
    let (d, mut cfg) = random_case(4);
    cfg.overlap = Overlap::None;
    let a = build(&d, &cfg).unwrap().to_json("fp").unwrap();
    cfg.overlap = Overlap::Count { count: 0 };
    assert_eq!(build(&d, &cfg).unwrap().to_json("fp").unwrap(), a);
}

#[test]
fn overlap_leaves_evidence_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = random_data(&mut rng, 300, 2, 1);
    let mut cfg = StructureConfig::new(40, vec![KernelTemplate::new(KernelFamily::SquaredExponentialArd)]);
    cfg.seed = 2;
    let mut plain = build(&d, &cfg).unwrap();
    cfg.overlap = Overlap::Count { count: 3 };
    let mut shared = build(&d, &cfg).unwrap();
    assert!(shared.leaf_ids().iter().any(|l| shared.leaf(*l).unwrap().overlap_count() > 0));
    plain.fit_leaves().unwrap();
    shared.fit_leaves().unwrap();
    assert_eq!(plain.log_evidence().unwrap(), shared.log_evidence().unwrap());
}

#[test]
fn overlap_rows_come_from_outside_the_leaf() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let d = random_data(&mut rng, 200, 2, 1);
    let mut cfg = StructureConfig::new(30, vec![KernelTemplate::new(KernelFamily::SquaredExponentialArd)]);
    cfg.overlap = Overlap::Radius { radius: 0.2 };
    let m = build(&d, &cfg).unwrap();
    for id in m.leaf_ids() {
        let leaf = m.leaf(id).unwrap();
        let region = &m.node(id).region;
        for r in leaf.overlap_rows() {
            let x: Vec<f64> = d.x.row(*r).iter().copied().collect();
            assert!(!region.contains(&x));
            assert!(!leaf.data_rows().contains(r));
        }
    }
}

#[test]
fn multi_output_root_is_a_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = random_data(&mut rng, 60, 1, 2);
    let cfg = StructureConfig::new(20, vec![KernelTemplate::new(KernelFamily::SquaredExponentialArd)]);
    let m = build(&d, &cfg).unwrap();
    assert_eq!(m.node(m.root()).kind.name(), "product");
    assert_eq!(m.meta().output_dim, 2);
    for (j, off) in m.meta().y_offset.iter().enumerate() {
        let col: Vec<f64> = d.y.column(j).iter().copied().collect();
        assert!((off - col.iter().sum::<f64>() / col.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn graph_from_other_data_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_data(&mut rng, 30, 1, 1);
    let b = random_data(&mut rng, 31, 1, 1);
    let cfg = StructureConfig::new(5, vec![KernelTemplate::new(KernelFamily::Linear)]);
    let g = build_region_graph(&a.x, &cfg).unwrap();
    assert!(build_spn(&g, &b, &cfg).is_err());
}

#[test]
fn clustered_data_cannot_meet_the_bound() {
    // hand-built: one split whose right child received nothing
    let n = 20;
    let x = DMatrix::from_fn(n, 1, |i, _| 0.01 * i as f64);
    let y = DVector::from_fn(n, |i, _| i as f64);
    let k = KernelSpec::se_ard(1.0, &[0.1]).unwrap();
    let mut b = SpnBuilder::new();
    let left = b.leaf(GpLeaf::new(k.clone(), 0.1, x, y).unwrap(), 0, Region::new(vec![0.0], vec![0.5]));
    let right = b.leaf(GpLeaf::empty(k, 0.1).unwrap(), 0, Region::closed(vec![0.5], vec![1.0]));
    let root = b.split(0, vec![0.5], vec![left, right]);
    let m = b.build(root, TrainMeta::uncentered(1, 1));
    let r = complexity_report(&m).unwrap();
    assert_eq!(r.max_block, n);
    assert!(r.max_block_is_n && !r.bound_met);

    // built: a tight cluster inside a wide domain cannot be cut at all
    let xs = DMatrix::from_fn(n, 1, |i, _| 0.001 * i as f64);
    let ys = DMatrix::from_fn(n, 1, |i, _| i as f64);
    let d = Dataset::new(xs, ys, vec!["x".into()], vec!["y".into()]).unwrap();
    let mut cfg = StructureConfig::new(2, vec![KernelTemplate::new(KernelFamily::Linear)]);
    cfg.split = SplitMode::MinWidth { widths: vec![0.5] };
    cfg.domain = Some((vec![0.0], vec![1.0]));
    let r = complexity_report(&build(&d, &cfg).unwrap()).unwrap();
    assert!(r.max_block_is_n);
}
