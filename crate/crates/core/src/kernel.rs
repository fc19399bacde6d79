//! Covariance functions with log-space hyperparameters.
//!
//! Every family stores its positive hyperparameters as natural logarithms so
//! that optimizers work in an unconstrained space. The observation noise is
//! not part of a kernel; it lives on the GP leaf.
//!
//! | family   | parameters (in order)        | k(x, x')                                   |
//! |----------|------------------------------|--------------------------------------------|
//! | linear   | σ_f                          | σ_f² · xᵀx'                                 |
//! | se_ard   | σ_f, l_1..l_D                | σ_f² · exp(−½ r²), r² = Σ ((x_d−x'_d)/l_d)² |
//! | matern   | σ_f, l_1..l_D                | σ_f² · m_ν(r), ν ∈ {½, 3/2, 5/2}            |
//! | periodic | σ_f, l, p (1-D only)         | σ_f² · exp(−2 sin²(π·abs(x−x')/p) / l²)    |

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "se_ard")]
    SquaredExponentialArd,
    #[serde(rename = "matern")]
    Matern,
    #[serde(rename = "periodic")]
    Periodic,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Linear => "linear",
            KernelFamily::SquaredExponentialArd => "se_ard",
            KernelFamily::Matern => "matern",
            KernelFamily::Periodic => "periodic",
        }
    }

    /// Number of hyperparameters for inputs of dimension `input_dim`.
    pub fn param_count(self, input_dim: usize) -> usize {
        match self {
            KernelFamily::Linear => 1,
            KernelFamily::SquaredExponentialArd | KernelFamily::Matern => 1 + input_dim,
            KernelFamily::Periodic => 3,
        }
    }
}

/// Smoothness of a Matérn kernel. Serialized as the number 0.5, 1.5 or 2.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum MaternNu {
    Half,
    #[default]
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 0.5 {
            Ok(MaternNu::Half)
        } else if v == 1.5 {
            Ok(MaternNu::ThreeHalves)
        } else if v == 2.5 {
            Ok(MaternNu::FiveHalves)
        } else {
            Err(Error::arg(format!("unsupported Matérn nu {v}; expected 0.5, 1.5 or 2.5")))
        }
    }
}

impl Serialize for MaternNu {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for MaternNu {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        MaternNu::from_value(v).map_err(serde::de::Error::custom)
    }
}

/// A covariance family plus its log-hyperparameters. Immutable once built;
/// use [`KernelSpec::with_log_params`] to derive a re-parameterized copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRepr")]
pub struct KernelSpec {
    family: KernelFamily,
    log_params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<MaternNu>,
    input_dim: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpecRepr {
    family: KernelFamily,
    log_params: Vec<f64>,
    #[serde(default)]
    nu: Option<MaternNu>,
    input_dim: usize,
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = Error;

    fn try_from(r: KernelSpecRepr) -> Result<Self> {
        Self::from_log_params(r.family, r.nu, r.input_dim, r.log_params)
    }
}

impl KernelSpec {
    /// Build from log-parameters, checking arity and positivity/finiteness.
    pub fn from_log_params(
        family: KernelFamily,
        nu: Option<MaternNu>,
        input_dim: usize,
        log_params: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::arg("kernel input dimension must be positive"));
        }
        if family == KernelFamily::Periodic && input_dim != 1 {
            return Err(Error::arg("periodic kernel supports 1-D inputs only"));
        }
        let nu = match (family, nu) {
            (KernelFamily::Matern, nu) => Some(nu.unwrap_or_default()),
            (_, None) => None,
            (f, Some(_)) => {
                return Err(Error::arg(format!("nu is only valid for Matérn kernels, not {}", f.name())))
            }
        };
        let expected = family.param_count(input_dim);
        if log_params.len() != expected {
            return Err(Error::arg(format!(
                "{} kernel over {input_dim} inputs needs {expected} parameters, got {}",
                family.name(),
                log_params.len()
            )));
        }
        for (i, p) in log_params.iter().enumerate() {
            let v = p.exp();
            if !p.is_finite() || !v.is_finite() || v <= 0.0 {
                return Err(Error::arg(format!("kernel parameter {i} has log-value {p}, not a positive finite number")));
            }
        }
        Ok(Self {
            family,
            log_params,
            nu,
            input_dim,
        })
    }

    pub fn linear(sigma_f: f64, input_dim: usize) -> Result<Self> {
        Self::from_log_params(KernelFamily::Linear, None, input_dim, vec![sigma_f.ln()])
    }

    pub fn se_ard(sigma_f: f64, lengthscales: &[f64]) -> Result<Self> {
        let mut p = vec![sigma_f.ln()];
        p.extend(lengthscales.iter().map(|l| l.ln()));
        Self::from_log_params(KernelFamily::SquaredExponentialArd, None, lengthscales.len(), p)
    }

    pub fn matern(nu: MaternNu, sigma_f: f64, lengthscales: &[f64]) -> Result<Self> {
        let mut p = vec![sigma_f.ln()];
        p.extend(lengthscales.iter().map(|l| l.ln()));
        Self::from_log_params(KernelFamily::Matern, Some(nu), lengthscales.len(), p)
    }

    pub fn periodic(sigma_f: f64, lengthscale: f64, period: f64) -> Result<Self> {
        Self::from_log_params(
            KernelFamily::Periodic,
            None,
            1,
            vec![sigma_f.ln(), lengthscale.ln(), period.ln()],
        )
    }

    pub fn with_log_params(&self, log_params: Vec<f64>) -> Result<Self> {
        Self::from_log_params(self.family, self.nu, self.input_dim, log_params)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn nu(&self) -> Option<MaternNu> {
        self.nu
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn log_params(&self) -> &[f64] {
        &self.log_params
    }

    pub fn n_params(&self) -> usize {
        self.log_params.len()
    }

    /// σ_f², the scale used for diagonal jitter.
    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_params[0]).exp()
    }

    /// Short human-readable label such as `matern(1.5)`.
    pub fn label(&self) -> String {
        match self.nu {
            Some(nu) => format!("{}({})", self.family.name(), nu.value()),
            None => self.family.name().to_string(),
        }
    }

    /// `k(x1, x2)` with argument validation.
    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_point(x1)?;
        self.check_point(x2)?;
        Ok(self.eval_unchecked(x1, x2))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::arg(format!(
                "input has {} dimensions, kernel expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite kernel input"));
        }
        Ok(())
    }

    fn check_matrix(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::arg(format!(
                "input matrix has {} columns, kernel expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite kernel input"));
        }
        Ok(())
    }

    /// Scaled squared distance Σ ((a_d − b_d)/l_d)²; argument order never
    /// changes the result since (a−b)² and (b−a)² are bitwise equal.
    #[inline]
    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for d in 0..self.input_dim {
            let t = (a[d] - b[d]) / self.log_params[1 + d].exp();
            r2 += t * t;
        }
        r2
    }

    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let s2 = self.signal_variance();
        match self.family {
            KernelFamily::Linear => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                s2 * dot
            }
            KernelFamily::SquaredExponentialArd => s2 * (-0.5 * self.scaled_sq_dist(a, b)).exp(),
            KernelFamily::Matern => {
                let r = self.scaled_sq_dist(a, b).sqrt();
                s2 * matern_shape(self.nu.unwrap_or_default(), r)
            }
            KernelFamily::Periodic => {
                let l = self.log_params[1].exp();
                let p = self.log_params[2].exp();
                let s = (PI * (a[0] - b[0]).abs() / p).sin();
                s2 * (-2.0 * s * s / (l * l)).exp()
            }
        }
    }

    /// `K(X1, X2)`, rows of the inputs are points.
    pub fn matrix(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_matrix(x1)?;
        self.check_matrix(x2)?;
        let r1 = rows_of(x1);
        let r2 = rows_of(x2);
        Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
            self.eval_unchecked(&r1[i], &r2[j])
        }))
    }

    /// `K(X, X)`, exactly symmetric.
    pub fn matrix_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_matrix(x)?;
        let rows = rows_of(x);
        let n = rows.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.eval_unchecked(&rows[i], &rows[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// `k(x, x)` for each row.
    pub fn diag(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_matrix(x)?;
        Ok(rows_of(x).iter().map(|r| self.eval_unchecked(r, r)).collect())
    }

    /// `∂K(X, X)/∂ log θ_p` for every hyperparameter p, in parameter order.
    pub fn grad(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_matrix(x)?;
        let rows = rows_of(x);
        let n = rows.len();
        let np = self.n_params();
        let mut out = vec![DMatrix::zeros(n, n); np];
        let mut buf = vec![0.0; np];
        for j in 0..n {
            for i in 0..=j {
                self.grad_entry(&rows[i], &rows[j], &mut buf);
                for (p, g) in buf.iter().enumerate() {
                    out[p][(i, j)] = *g;
                    out[p][(j, i)] = *g;
                }
            }
        }
        Ok(out)
    }

    /// `Σ_ij W_ij ∂K_ij/∂ log θ_p` for symmetric `w`, without forming the
    /// derivative matrices.
    pub fn grad_contract(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_matrix(x)?;
        let rows = rows_of(x);
        let n = rows.len();
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::arg(format!("weight matrix is {}x{}, expected {n}x{n}", w.nrows(), w.ncols())));
        }
        let np = self.n_params();
        let mut acc = vec![0.0; np];
        let mut buf = vec![0.0; np];
        for j in 0..n {
            for i in 0..=j {
                self.grad_entry(&rows[i], &rows[j], &mut buf);
                let c = if i == j { w[(i, j)] } else { w[(i, j)] + w[(j, i)] };
                for (a, g) in acc.iter_mut().zip(&buf) {
                    *a += c * g;
                }
            }
        }
        Ok(acc)
    }

    fn grad_entry(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let k = self.eval_unchecked(a, b);
        // every family scales with σ_f²
        out[0] = 2.0 * k;
        match self.family {
            KernelFamily::Linear => {}
            KernelFamily::SquaredExponentialArd => {
                for d in 0..self.input_dim {
                    let t = (a[d] - b[d]) / self.log_params[1 + d].exp();
                    out[1 + d] = k * t * t;
                }
            }
            KernelFamily::Matern => {
                let s2 = self.signal_variance();
                let r = self.scaled_sq_dist(a, b).sqrt();
                // ∂k/∂log l_d = −(dk/dr)·s_d/r with s_d = ((a_d−b_d)/l_d)²
                let factor = match self.nu.unwrap_or_default() {
                    MaternNu::Half => {
                        if r > 0.0 {
                            s2 * (-r).exp() / r
                        } else {
                            0.0
                        }
                    }
                    MaternNu::ThreeHalves => {
                        let sr = 3f64.sqrt() * r;
                        3.0 * s2 * (-sr).exp()
                    }
                    MaternNu::FiveHalves => {
                        let sr = 5f64.sqrt() * r;
                        5.0 / 3.0 * s2 * (1.0 + sr) * (-sr).exp()
                    }
                };
                for d in 0..self.input_dim {
                    let t = (a[d] - b[d]) / self.log_params[1 + d].exp();
                    out[1 + d] = factor * t * t;
                }
            }
            KernelFamily::Periodic => {
                let l = self.log_params[1].exp();
                let p = self.log_params[2].exp();
                let u = PI * (a[0] - b[0]).abs() / p;
                let s = u.sin();
                out[1] = k * 4.0 * s * s / (l * l);
                out[2] = k * 2.0 * u * (2.0 * u).sin() / (l * l);
            }
        }
    }
}

/// Unit-variance Matérn correlation at scaled distance `r`.
fn matern_shape(nu: MaternNu, r: f64) -> f64 {
    match nu {
        MaternNu::Half => (-r).exp(),
        MaternNu::ThreeHalves => {
            let sr = 3f64.sqrt() * r;
            (1.0 + sr) * (-sr).exp()
        }
        MaternNu::FiveHalves => {
            let sr = 5f64.sqrt() * r;
            (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
        }
    }
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn se_ard_at_zero_distance_is_signal_variance() {
        let k = KernelSpec::se_ard(1.0, &[1.0, 1.0]).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn linear_is_scaled_dot_product() {
        let k = KernelSpec::linear(1.0, 1).unwrap();
        assert_eq!(k.eval(&[2.0], &[3.0]).unwrap(), 6.0);
        let m = k.matrix_sym(&col(&[1.0, 2.0])).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn se_ard_hand_evaluation() {
        let k = KernelSpec::se_ard(2.0, &[1.0, 2.0]).unwrap();
        let v = k.eval(&[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((v - 4.0 * (-1f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn se_matrix_two_points() {
        let k = KernelSpec::se_ard(1.0, &[1.0]).unwrap();
        let m = k.matrix_sym(&col(&[0.0, 1.0])).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(m[(0, 0)], 1.0);
        assert!((m[(0, 1)] - e).abs() < 1e-15);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        let single = k.matrix(&col(&[0.3]), &col(&[0.3])).unwrap();
        assert_eq!(single[(0, 0)], k.eval(&[0.3], &[0.3]).unwrap());
    }

    #[test]
    fn signal_gradient_is_twice_the_kernel() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.5, -0.2, 2.0, 0.3]);
        for spec in [
            KernelSpec::se_ard(1.3, &[0.7, 2.0]).unwrap(),
            KernelSpec::linear(0.8, 2).unwrap(),
            KernelSpec::matern(MaternNu::FiveHalves, 1.1, &[0.5, 1.5]).unwrap(),
        ] {
            let k = spec.matrix_sym(&x).unwrap();
            let g = spec.grad(&x).unwrap();
            assert_eq!(g.len(), spec.n_params());
            assert!((&g[0] - 2.0 * &k).abs().max() < 1e-14);
        }
    }

    #[test]
    fn se_lengthscale_gradient_hand_value() {
        let k = KernelSpec::se_ard(1.0, &[1.0]).unwrap();
        let g = k.grad(&col(&[0.0, 1.0])).unwrap();
        assert!((g[1][(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(g[1][(0, 0)], 0.0);
    }

    #[test]
    fn argument_errors() {
        let k = KernelSpec::se_ard(1.0, &[1.0, 1.0]).unwrap();
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::Argument(_))));
        assert!(matches!(k.eval(&[f64::NAN, 0.0], &[0.0, 1.0]), Err(Error::Argument(_))));
        assert!(KernelSpec::periodic(1.0, 1.0, 1.0).unwrap().matrix_sym(&DMatrix::zeros(2, 2)).is_err());
        assert!(KernelSpec::from_log_params(KernelFamily::Linear, None, 1, vec![0.0, 1.0]).is_err());
        assert!(KernelSpec::from_log_params(KernelFamily::Linear, Some(MaternNu::Half), 1, vec![0.0]).is_err());
        assert!(KernelSpec::se_ard(-1.0, &[1.0]).is_err());
        assert!(KernelSpec::from_log_params(KernelFamily::Linear, None, 1, vec![800.0]).is_err());
    }

    #[test]
    fn matern_defaults_to_three_halves_and_serializes_nu_as_number() {
        let k = KernelSpec::from_log_params(KernelFamily::Matern, None, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(k.nu(), Some(MaternNu::ThreeHalves));
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains("\"nu\":1.5"), "{s}");
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
    }
}
