//! A single exact GP expert.
//!
//! A leaf owns the block of training rows assigned to its region plus,
//! optionally, a trailing block of borrowed boundary rows ("overlap" rows).
//! Overlap rows condition the predictive distribution but never enter the
//! leaf's log evidence, so sum-node weight updates stay exact.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Jitter schedule relative to σ_f²: first attempt is plain, then these.
const JITTER_LEVELS: [f64; 4] = [1e-8, 1e-7, 1e-6, 1e-5];

/// Predictive moments at a batch of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMoments {
    pub mean: Vec<f64>,
    /// Variance of the latent function value.
    pub var_f: Vec<f64>,
    /// Variance of a noisy observation.
    pub var_y: Vec<f64>,
    /// Number of latent variances that came out negative and were clamped.
    pub clamped: usize,
    /// Largest clamped magnitude relative to the prior variance k(x*, x*).
    pub worst_clamp: f64,
}

impl PredictiveMoments {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub(crate) fn with_capacity(m: usize) -> Self {
        Self {
            mean: Vec::with_capacity(m),
            var_f: Vec::with_capacity(m),
            var_y: Vec::with_capacity(m),
            clamped: 0,
            worst_clamp: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct LeafCache {
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

/// One GP expert. See the module docs for the overlap convention.
#[derive(Debug, Clone)]
pub struct GpLeaf {
    kernel: KernelSpec,
    log_noise: f64,
    x: DMatrix<f64>,
    y: DVector<f64>,
    overlap_count: usize,
    data_rows: Vec<usize>,
    overlap_rows: Vec<usize>,
    region: usize,
    cache: Option<LeafCache>,
    log_evidence: Option<f64>,
}

impl GpLeaf {
    /// A leaf conditioned on `(x, y)` with noise standard deviation `noise_std`.
    pub fn new(kernel: KernelSpec, noise_std: f64, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::arg(format!("noise std must be positive, got {noise_std}")));
        }
        if x.nrows() != y.len() {
            return Err(Error::arg(format!("{} input rows but {} targets", x.nrows(), y.len())));
        }
        if x.ncols() != kernel.input_dim() {
            return Err(Error::arg(format!(
                "leaf inputs have {} columns, kernel expects {}",
                x.ncols(),
                kernel.input_dim()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite leaf data"));
        }
        Ok(Self {
            kernel,
            log_noise: noise_std.ln(),
            x,
            y,
            overlap_count: 0,
            data_rows: Vec::new(),
            overlap_rows: Vec::new(),
            region: 0,
            cache: None,
            log_evidence: None,
        })
    }

    /// A leaf with no data: its predictive distribution is the prior.
    pub fn empty(kernel: KernelSpec, noise_std: f64) -> Result<Self> {
        let d = kernel.input_dim();
        Self::new(kernel, noise_std, DMatrix::zeros(0, d), DVector::zeros(0))
    }

    /// Record which training-set rows this leaf holds (used for persistence).
    pub fn with_rows(mut self, data_rows: Vec<usize>) -> Self {
        self.data_rows = data_rows;
        self
    }

    pub fn with_region(mut self, region: usize) -> Self {
        self.region = region;
        self
    }

    /// Replace the borrowed boundary rows. Invalidates any fit.
    pub fn set_overlap(&mut self, rows: Vec<usize>, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
        if x.nrows() != y.len() || x.ncols() != self.x.ncols() || rows.len() != y.len() {
            return Err(Error::arg("overlap block shape mismatch"));
        }
        let n = self.n_data();
        let d = self.x.ncols();
        let mut nx = DMatrix::zeros(n + x.nrows(), d);
        nx.rows_mut(0, n).copy_from(&self.x.rows(0, n));
        nx.rows_mut(n, x.nrows()).copy_from(x);
        let mut ny = DVector::zeros(n + y.len());
        ny.rows_mut(0, n).copy_from(&self.y.rows(0, n));
        ny.rows_mut(n, y.len()).copy_from(y);
        self.x = nx;
        self.y = ny;
        self.overlap_count = rows.len();
        self.overlap_rows = rows;
        self.invalidate();
        Ok(())
    }

    /// Swap in new hyperparameters. Invalidates any fit.
    pub fn set_hyperparameters(&mut self, kernel: KernelSpec, log_noise: f64) -> Result<()> {
        if kernel.input_dim() != self.x.ncols() {
            return Err(Error::arg("kernel dimension does not match leaf inputs"));
        }
        if !log_noise.is_finite() || !log_noise.exp().is_finite() || log_noise.exp() <= 0.0 {
            return Err(Error::arg(format!("invalid log noise {log_noise}")));
        }
        self.kernel = kernel;
        self.log_noise = log_noise;
        self.invalidate();
        Ok(())
    }

    fn invalidate(&mut self) {
        self.cache = None;
        self.log_evidence = None;
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn log_noise(&self) -> f64 {
        self.log_noise
    }

    pub fn noise_std(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn noise_var(&self) -> f64 {
        (2.0 * self.log_noise).exp()
    }

    /// All conditioning inputs: data rows followed by overlap rows.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_data(&self) -> usize {
        self.x.nrows() - self.overlap_count
    }

    pub fn overlap_count(&self) -> usize {
        self.overlap_count
    }

    pub fn data_rows(&self) -> &[usize] {
        &self.data_rows
    }

    pub fn overlap_rows(&self) -> &[usize] {
        &self.overlap_rows
    }

    pub fn region(&self) -> usize {
        self.region
    }

    pub fn is_fitted(&self) -> bool {
        self.cache.is_some()
    }

    /// log p(y | X) over the non-overlap rows.
    pub fn log_evidence(&self) -> Result<f64> {
        self.log_evidence
            .ok_or_else(|| Error::state(format!("leaf in region {} is not fitted", self.region)))
    }

    /// Data rows only, without the borrowed overlap block.
    pub fn data_block(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_data();
        (self.x.rows(0, n).into_owned(), self.y.rows(0, n).into_owned())
    }

    /// Factorize `C = K + σ_ε² I` over all rows and compute the evidence over
    /// the data rows.
    pub fn fit(&mut self) -> Result<()> {
        let n_all = self.x.nrows();
        if n_all == 0 {
            self.cache = Some(LeafCache {
                chol: None,
                alpha: DVector::zeros(0),
            });
            self.log_evidence = Some(0.0);
            return Ok(());
        }
        let chol = factor_covariance(&self.kernel, self.log_noise, &self.x, self.region)?;
        let alpha = chol.solve(&self.y);
        let n = self.n_data();
        let log_evidence = if self.overlap_count == 0 {
            evidence_from_factor(&chol, &self.y, &alpha)
        } else if n == 0 {
            0.0
        } else {
            let (xd, yd) = self.data_block();
            let chol_d = factor_covariance(&self.kernel, self.log_noise, &xd, self.region)?;
            let alpha_d = chol_d.solve(&yd);
            evidence_from_factor(&chol_d, &yd, &alpha_d)
        };
        if !log_evidence.is_finite() || alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                region: self.region,
                reason: format!("non-finite evidence {log_evidence}"),
            });
        }
        self.cache = Some(LeafCache {
            chol: Some(chol),
            alpha,
        });
        self.log_evidence = Some(log_evidence);
        Ok(())
    }

    /// Posterior predictive moments at the rows of `xs`.
    pub fn predict(&self, xs: &DMatrix<f64>) -> Result<PredictiveMoments> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state(format!("leaf in region {} is not fitted", self.region)))?;
        let prior = self.kernel.diag(xs)?;
        let noise = self.noise_var();
        let m = xs.nrows();
        let mut out = PredictiveMoments::with_capacity(m);
        let Some(chol) = cache.chol.as_ref() else {
            for kss in prior {
                out.mean.push(0.0);
                out.var_f.push(kss);
                out.var_y.push(kss + noise);
            }
            return Ok(out);
        };
        let kstar = self.kernel.matrix(&self.x, xs)?;
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::Numerical {
                region: self.region,
                reason: "singular triangular factor".into(),
            })?;
        for j in 0..m {
            let mean = kstar.column(j).dot(&cache.alpha);
            let raw = prior[j] - v.column(j).norm_squared();
            let var = if raw < 0.0 {
                out.clamped += 1;
                if prior[j] > 0.0 {
                    out.worst_clamp = out.worst_clamp.max(-raw / prior[j]);
                }
                0.0
            } else {
                raw
            };
            out.mean.push(mean);
            out.var_f.push(var);
            out.var_y.push(var + noise);
        }
        Ok(out)
    }

    /// Gradient of the log evidence with respect to the kernel
    /// log-parameters followed by log σ_ε.
    pub fn log_marginal_likelihood_grad(&self) -> Result<Vec<f64>> {
        if !self.is_fitted() {
            return Err(Error::state(format!("leaf in region {} is not fitted", self.region)));
        }
        if self.n_data() == 0 {
            return Err(Error::state("gradient of an empty leaf is undefined"));
        }
        let (xd, yd) = self.data_block();
        let (_, grad) = evidence_and_grad(&self.kernel, self.log_noise, &xd, &yd, self.region)?;
        Ok(grad)
    }
}

/// Cholesky factor of `K + σ_ε² I` with the escalating-jitter policy.
pub(crate) fn factor_covariance(
    kernel: &KernelSpec,
    log_noise: f64,
    x: &DMatrix<f64>,
    region: usize,
) -> Result<Cholesky<f64, Dyn>> {
    let mut c = kernel.matrix_sym(x)?;
    let noise = (2.0 * log_noise).exp();
    for i in 0..c.nrows() {
        c[(i, i)] += noise;
    }
    if let Some(ch) = Cholesky::new(c.clone()) {
        if factor_is_finite(&ch) {
            return Ok(ch);
        }
    }
    let scale = kernel.signal_variance();
    let mut added = 0.0;
    for level in JITTER_LEVELS {
        let jitter = level * scale;
        for i in 0..c.nrows() {
            c[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(ch) = Cholesky::new(c.clone()) {
            if factor_is_finite(&ch) {
                return Ok(ch);
            }
        }
    }
    Err(Error::Numerical {
        region,
        reason: format!(
            "covariance of {} rows is not positive definite after jitter {:e}",
            x.nrows(),
            added
        ),
    })
}

fn factor_is_finite(ch: &Cholesky<f64, Dyn>) -> bool {
    let l = ch.l_dirty();
    (0..l.nrows()).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0)
}

fn evidence_from_factor(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let half_log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
    -0.5 * y.dot(alpha) - half_log_det - 0.5 * y.len() as f64 * (2.0 * PI).ln()
}

/// Log evidence and its gradient (kernel log-params, then log σ_ε) for one
/// block of data. The empty block has evidence 0 and a zero gradient.
/// `C⁻¹ = L⁻ᵀ L⁻¹` from the lower factor; column j of `L⁻¹` is zero above j.
fn inverse_from_factor(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ls = l.as_slice();
    let mut linv = DMatrix::zeros(n, n);
    let out = linv.as_mut_slice();
    for j in 0..n {
        // forward substitution for column j, column-major axpy form
        let x = &mut out[j * n..(j + 1) * n];
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / ls[k * n + k];
            x[k] = xk;
            for (xi, lik) in x[k + 1..].iter_mut().zip(&ls[k * n + k + 1..(k + 1) * n]) {
                *xi -= xk * lik;
            }
        }
    }
    linv.transpose() * &linv
}

pub(crate) fn evidence_and_grad(
    kernel: &KernelSpec,
    log_noise: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    region: usize,
) -> Result<(f64, Vec<f64>)> {
    let np = kernel.n_params() + 1;
    if x.nrows() == 0 {
        return Ok((0.0, vec![0.0; np]));
    }
    let chol = factor_covariance(kernel, log_noise, x, region)?;
    let alpha = chol.solve(y);
    let ev = evidence_from_factor(&chol, y, &alpha);
    // W = ααᵀ − C⁻¹; ∂ev/∂θ = ½ tr(W ∂C/∂θ)
    let mut w = inverse_from_factor(chol.l_dirty());
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad: Vec<f64> = kernel.grad_contract(x, &w)?.into_iter().map(|g| 0.5 * g).collect();
    let noise = (2.0 * log_noise).exp();
    grad.push(noise * w.trace());
    if !ev.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            region,
            reason: format!("non-finite evidence {ev} or gradient"),
        });
    }
    Ok((ev, grad))
}
