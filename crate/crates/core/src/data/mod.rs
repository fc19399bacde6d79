//! Datasets, CSV ingestion, train/test splits, baseline regressors and RMSE.

pub mod report;
pub mod synth;

use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Fingerprint;

pub use report::{EvalReport, MethodResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// SHA-256 over the shapes and the bit patterns of every value.
    pub fingerprint: String,
    /// Rows dropped during ingestion because of missing values.
    pub rejected_rows: usize,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, feature_names: Vec<String>, target_names: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::arg("dataset is empty"));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::arg(format!("{} input rows but {} target rows", x.nrows(), y.nrows())));
        }
        if feature_names.len() != x.ncols() || target_names.len() != y.ncols() {
            return Err(Error::arg("column names do not match the data shape"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("dataset contains non-finite values"));
        }
        let fingerprint = fingerprint_of(&x, &y);
        Ok(Self {
            x,
            y,
            feature_names,
            target_names,
            fingerprint,
            rejected_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// The rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.x.select_rows(idx.iter()),
            self.y.select_rows(idx.iter()),
            self.feature_names.clone(),
            self.target_names.clone(),
        )
    }
}

fn fingerprint_of(x: &DMatrix<f64>, y: &DMatrix<f64>) -> String {
    let mut f = Fingerprint::new();
    f.u64(x.nrows() as u64).u64(x.ncols() as u64).u64(y.ncols() as u64);
    for i in 0..x.nrows() {
        for v in x.row(i).iter().chain(y.row(i).iter()) {
            f.f64(*v);
        }
    }
    f.finish()
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "?")
}

/// Read a headed CSV. Target columns are selected by name; every other
/// column becomes a feature, in file order. Rows with missing or
/// non-finite cells are dropped and counted.
pub fn load_csv(path: &Path, targets: &[String], delimiter: u8) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::arg(format!("{} has no header", path.display())));
    }
    let mut target_cols = Vec::new();
    for t in targets {
        let c = header
            .iter()
            .position(|h| h == t)
            .ok_or_else(|| Error::arg(format!("target column {t:?} not found in {}", path.display())))?;
        target_cols.push(c);
    }
    if target_cols.is_empty() {
        return Err(Error::arg("no target columns given"));
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|c| !target_cols.contains(c)).collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rejected = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = r + 1;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: row_no,
                column: String::new(),
                message: format!("{} fields, header has {}", rec.len(), header.len()),
            });
        }
        let mut vals = Vec::with_capacity(rec.len());
        let mut missing = false;
        for (c, cell) in rec.iter().enumerate() {
            if is_missing(cell) {
                missing = true;
                vals.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: header[c].clone(),
                message: format!("{cell:?} is not a number"),
            })?;
            missing |= !v.is_finite();
            vals.push(v);
        }
        if missing {
            rejected += 1;
            continue;
        }
        xs.extend(feature_cols.iter().map(|c| vals[*c]));
        ys.extend(target_cols.iter().map(|c| vals[*c]));
    }
    let n = ys.len() / target_cols.len();
    if n == 0 {
        return Err(Error::arg(format!("{} has no complete data rows", path.display())));
    }
    let x = DMatrix::from_row_slice(n, feature_cols.len(), &xs);
    let y = DMatrix::from_row_slice(n, target_cols.len(), &ys);
    let mut ds = Dataset::new(
        x,
        y,
        feature_cols.iter().map(|c| header[*c].clone()).collect(),
        targets.to_vec(),
    )?;
    ds.rejected_rows = rejected;
    Ok(ds)
}

/// Read query inputs: every column of a headed CSV, possibly with no rows.
/// Unlike [`load_csv`], incomplete rows are errors, since every query
/// needs an answer.
pub fn load_inputs_csv(path: &Path, delimiter: u8) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut vals = Vec::new();
    let mut n = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: r + 1,
                column: String::new(),
                message: format!("{} fields, header has {}", rec.len(), header.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                row: r + 1,
                column: header[c].clone(),
                message: format!("{cell:?} is not a finite number"),
            })?;
            vals.push(v);
        }
        n += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(n, header.len(), &vals)))
}

/// Seeded shuffle, then the first `round(fraction·N)` rows train.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::arg("need at least two rows to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((data.subset(&idx[..n_train])?, data.subset(&idx[n_train..])?))
}

/// Root mean squared error per output and pooled over all outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rmse {
    pub per_output: Vec<f64>,
    pub pooled: f64,
}

pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Rmse> {
    if pred.shape() != truth.shape() || pred.nrows() == 0 {
        return Err(Error::arg(format!("shape mismatch {:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let n = pred.nrows() as f64;
    let per_output = (0..pred.ncols())
        .map(|j| ((pred.column(j) - truth.column(j)).norm_squared() / n).sqrt())
        .collect();
    let pooled = ((pred - truth).norm_squared() / (n * pred.ncols() as f64)).sqrt();
    Ok(Rmse { per_output, pooled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Mean,
    Lls,
    Ridge,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Mean, Baseline::Lls, Baseline::Ridge];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Mean => "Mean",
            Baseline::Lls => "LLS",
            Baseline::Ridge => "Ridge",
        }
    }
}

pub const RIDGE_ALPHA: f64 = 0.01;

/// Train-target means repeated for every test row.
pub fn mean_predict(train: &Dataset, test_x: &DMatrix<f64>) -> DMatrix<f64> {
    let means: Vec<f64> = (0..train.output_dim()).map(|j| train.y.column(j).mean()).collect();
    DMatrix::from_fn(test_x.nrows(), means.len(), |_, j| means[j])
}

/// Least squares with an intercept; the minimum-norm solution when the
/// design is rank deficient.
pub fn lls_predict(train: &Dataset, test_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let coef = lls_fit(&train.x, &train.y)?;
    Ok(with_intercept(test_x) * coef)
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    a.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
    a
}

/// Coefficients `[intercept; slopes]` per output column.
pub fn lls_fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = with_intercept(x);
    let svd = SVD::new(a, true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (x.nrows().max(x.ncols() + 1) as f64) * f64::EPSILON;
    svd.solve(y, eps).map_err(|e| Error::arg(format!("least squares failed: {e}")))
}

/// Ridge regression on standardized features with an unpenalized intercept.
pub fn ridge_predict(train: &Dataset, test_x: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let (n, d) = train.x.shape();
    let mu: Vec<f64> = (0..d).map(|c| train.x.column(c).mean()).collect();
    let sd: Vec<f64> = (0..d)
        .map(|c| {
            let s = (train.x.column(c).map(|v| (v - mu[c]).powi(2)).sum() / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let z = DMatrix::from_fn(n, d, |i, c| (train.x[(i, c)] - mu[c]) / sd[c]);
    let ybar: Vec<f64> = (0..train.output_dim()).map(|j| train.y.column(j).mean()).collect();
    let yc = DMatrix::from_fn(n, ybar.len(), |i, j| train.y[(i, j)] - ybar[j]);
    let mut gram = z.transpose() * &z;
    for i in 0..d {
        gram[(i, i)] += alpha;
    }
    let rhs = z.transpose() * yc;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => SVD::new(gram, true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::arg(format!("ridge solve failed: {e}")))?,
    };
    let zt = DMatrix::from_fn(test_x.nrows(), d, |i, c| (test_x[(i, c)] - mu[c]) / sd[c]);
    let mut out = zt * beta;
    for j in 0..ybar.len() {
        out.column_mut(j).add_scalar_mut(ybar[j]);
    }
    Ok(out)
}

pub fn baseline_predict(method: Baseline, train: &Dataset, test_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match method {
        Baseline::Mean => Ok(mean_predict(train, test_x)),
        Baseline::Lls => lls_predict(train, test_x),
        Baseline::Ridge => ridge_predict(train, test_x, RIDGE_ALPHA),
    }
}

/// Column `j` of `y` as an owned vector.
pub fn column(y: &DMatrix<f64>, j: usize) -> DVector<f64> {
    y.column(j).into_owned()
}
