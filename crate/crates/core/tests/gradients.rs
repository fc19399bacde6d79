use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spngp::data::Dataset;
use spngp::gp::GpLeaf;
use spngp::hyperopt::TiedProblem;
use spngp::kernel::{KernelFamily, KernelSpec, MaternNu};
use spngp::structure::{build, KernelTemplate, StructureConfig};
use spngp::SpnGp;

const STEP: f64 = 1e-5;

fn all_kernels(dim: usize, rng: &mut ChaCha8Rng) -> Vec<KernelSpec> {
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..1.5)).collect();
    let sf = rng.random_range(0.5..2.0);
    let mut ks = vec![
        KernelSpec::linear(sf, dim).unwrap(),
        KernelSpec::se_ard(sf, &ls).unwrap(),
        KernelSpec::matern(MaternNu::Half, sf, &ls).unwrap(),
        KernelSpec::matern(MaternNu::ThreeHalves, sf, &ls).unwrap(),
        KernelSpec::matern(MaternNu::FiveHalves, sf, &ls).unwrap(),
    ];
    if dim == 1 {
        ks.push(KernelSpec::periodic(sf, ls[0], 0.8).unwrap());
    }
    ks
}

fn problem(seed: u64, n: usize, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: DMatrix<f64> = DMatrix::from_fn(n, dim, |_, _| rng.random_range(0.0..2.0));
    let y = DVector::from_fn(n, |i, _| (2.0 * x[(i, 0)]).sin() + 0.2 * rng.random::<f64>());
    (x, y)
}

/// Largest element-wise relative error of `got` against `want`, skipping
/// entries of negligible magnitude.
fn max_rel(got: &[f64], want: &[f64], floor: f64) -> f64 {
    got.iter()
        .zip(want)
        .filter(|(_, w)| w.abs() > floor)
        .map(|(g, w)| (g - w).abs() / w.abs())
        .fold(0.0, f64::max)
}

#[test]
fn kernel_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in [1, 2] {
        let (x, _) = problem(5 + dim as u64, 20, dim);
        for k in all_kernels(dim, &mut rng) {
            let grads = k.grad(&x).unwrap();
            assert_eq!(grads.len(), k.n_params());
            for p in 0..k.n_params() {
                let mut up = k.log_params().to_vec();
                let mut dn = up.clone();
                up[p] += STEP;
                dn[p] -= STEP;
                let kp = k.with_log_params(up).unwrap().matrix(&x, &x).unwrap();
                let km = k.with_log_params(dn).unwrap().matrix(&x, &x).unwrap();
                let fd = (kp - km) / (2.0 * STEP);
                let err = max_rel(grads[p].as_slice(), fd.as_slice(), 1e-12);
                // the |r| kink of the exponential Matérn on the diagonal is excluded by construction
                assert!(err < 1e-5, "{} param {p}: {err}", k.label());
            }
        }
    }
}

fn evidence_at(leaf: &GpLeaf, kernel_params: &[f64], log_noise: f64) -> f64 {
    let mut l = leaf.clone();
    l.set_hyperparameters(leaf.kernel().with_log_params(kernel_params.to_vec()).unwrap(), log_noise)
        .unwrap();
    l.fit().unwrap();
    l.log_evidence().unwrap()
}

fn leaf_fd(leaf: &GpLeaf) -> Vec<f64> {
    let base = leaf.kernel().log_params().to_vec();
    let ln = leaf.log_noise();
    let mut out = Vec::new();
    for p in 0..base.len() {
        let (mut up, mut dn) = (base.clone(), base.clone());
        up[p] += STEP;
        dn[p] -= STEP;
        out.push((evidence_at(leaf, &up, ln) - evidence_at(leaf, &dn, ln)) / (2.0 * STEP));
    }
    out.push((evidence_at(leaf, &base, ln + STEP) - evidence_at(leaf, &base, ln - STEP)) / (2.0 * STEP));
    out
}

#[test]
fn leaf_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dim in [1, 2] {
        for seed in 0..3 {
            let (x, y) = problem(seed * 10 + dim as u64, 20, dim);
            for k in all_kernels(dim, &mut rng) {
                let label = k.label();
                let mut leaf = GpLeaf::new(k, 0.3, x.clone(), y.clone()).unwrap();
                leaf.fit().unwrap();
                let g = leaf.log_marginal_likelihood_grad().unwrap();
                let fd = leaf_fd(&leaf);
                let err = max_rel(&g, &fd, 1e-6);
                assert!(err < 1e-4, "{label} dim {dim}: {g:?} vs {fd:?}");
            }
        }
    }
}

#[test]
fn gradient_ignores_overlap_rows() {
    let (x, y) = problem(1, 20, 1);
    let mut leaf = GpLeaf::new(KernelSpec::se_ard(1.0, &[0.5]).unwrap(), 0.3, x.clone(), y.clone()).unwrap();
    leaf.fit().unwrap();
    let plain = leaf.log_marginal_likelihood_grad().unwrap();
    let ox = DMatrix::from_column_slice(2, 1, &[2.1, 2.2]);
    let oy = DVector::from_vec(vec![0.3, -0.4]);
    leaf.set_overlap(vec![20, 21], &ox, &oy).unwrap();
    leaf.fit().unwrap();
    assert_eq!(leaf.log_marginal_likelihood_grad().unwrap(), plain);
}

#[test]
fn signal_gradient_is_positive_when_underfitting() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x: DMatrix<f64> = DMatrix::from_fn(20, 1, |_, _| rng.random_range(0.0..5.0));
    let y = DVector::from_fn(20, |_, _| 10.0 * (rng.random::<f64>() - 0.5) * 3.0);
    let mut leaf = GpLeaf::new(KernelSpec::se_ard(1.0, &[1.0]).unwrap(), 1.0, x, y).unwrap();
    leaf.fit().unwrap();
    let g = leaf.log_marginal_likelihood_grad().unwrap();
    assert!(g[0] > 0.0, "{g:?}");
}

fn small_tied_model(seed: u64) -> SpnGp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let x: DMatrix<f64> = DMatrix::from_fn(n, 1, |i, _| (i as f64 + rng.random::<f64>()) / n as f64);
    let y = DMatrix::from_fn(n, 1, |i, _| (6.0 * x[(i, 0)]).sin() + 0.1 * rng.random::<f64>());
    let d = Dataset::new(x, y, vec!["x".into()], vec!["y".into()]).unwrap();
    let menu = vec![
        KernelTemplate::new(KernelFamily::SquaredExponentialArd),
        KernelTemplate::new(KernelFamily::Linear),
    ];
    let mut cfg = StructureConfig::new(20, menu);
    cfg.seed = seed;
    let mut m = build(&d, &cfg).unwrap();
    m.fit_leaves().unwrap();
    m
}

#[test]
fn tied_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let m = small_tied_model(seed);
        assert!(m.count_induced_trees().unwrap() <= 8.0);
        for with_noise in [true, false] {
            let p = TiedProblem::new(&m, with_noise).unwrap();
            let theta = p.initial();
            let (f, g) = p.eval(&theta).unwrap();
            let eval_model = |t: &[f64]| {
                let mut c = m.clone();
                for (id, k, ln) in p.assignments(t).unwrap() {
                    c.leaf_mut(id).unwrap().set_hyperparameters(k, ln).unwrap();
                }
                c.fit_leaves().unwrap();
                c.log_evidence().unwrap()
            };
            assert!((f - eval_model(&theta)).abs() < 1e-9 * (1.0 + f.abs()));
            let fd: Vec<f64> = (0..theta.len())
                .map(|i| {
                    let (mut up, mut dn) = (theta.clone(), theta.clone());
                    up[i] += STEP;
                    dn[i] -= STEP;
                    (eval_model(&up) - eval_model(&dn)) / (2.0 * STEP)
                })
                .collect();
            let err = max_rel(&g, &fd, 1e-6);
            assert!(err < 1e-4, "seed {seed}: {g:?} vs {fd:?}");
        }
    }
}
