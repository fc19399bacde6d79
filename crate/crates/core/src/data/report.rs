//! Evaluation reports: RMSE over repeated runs per method.

use std::fmt::Write;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: String,
    /// Pooled RMSE of each run.
    pub runs: Vec<f64>,
    /// RMSE of each run per output.
    pub per_output: Vec<Vec<f64>>,
    /// Why the method was not run, if it was skipped.
    pub skipped: Option<String>,
}

impl MethodResult {
    pub fn skipped(method: &str, reason: String) -> Self {
        Self {
            method: method.into(),
            runs: Vec::new(),
            per_output: Vec::new(),
            skipped: Some(reason),
        }
    }

    pub fn mean(&self) -> f64 {
        crate::math::mean(&self.runs)
    }

    /// Sample standard deviation over runs divided by √R; 0 for one run.
    pub fn std_err(&self) -> f64 {
        let r = self.runs.len();
        if r < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.runs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r - 1) as f64;
        (var / r as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub n_rows: usize,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub preprocessing: String,
    pub config_fingerprint: String,
    pub library_version: String,
    pub methods: Vec<MethodResult>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# spngp {} config {}", self.library_version, self.config_fingerprint);
        let _ = writeln!(
            s,
            "dataset {} (N={}, fingerprint {}), {} runs, train fraction {}",
            self.dataset,
            self.n_rows,
            &self.dataset_fingerprint[..12.min(self.dataset_fingerprint.len())],
            self.seeds.len(),
            self.train_fraction
        );
        let _ = writeln!(s, "preprocessing: {}", self.preprocessing);
        let _ = writeln!(s, "{:<10} {:>10} {:>10}  per-output mean", "method", "RMSE", "std err");
        for m in &self.methods {
            match &m.skipped {
                Some(reason) => {
                    let _ = writeln!(s, "{:<10} {:>10} {:>10}  {reason}", m.method, "-", "-");
                }
                None => {
                    let outs = m.per_output.first().map_or(0, Vec::len);
                    let per: Vec<String> = (0..outs)
                        .map(|j| {
                            let v: Vec<f64> = m.per_output.iter().map(|r| r[j]).collect();
                            format!("{:.4}", crate::math::mean(&v))
                        })
                        .collect();
                    let _ = writeln!(
                        s,
                        "{:<10} {:>10.4} {:>10.4}  {}",
                        m.method,
                        m.mean(),
                        m.std_err(),
                        per.join(" ")
                    );
                }
            }
        }
        s
    }

    /// One line per method and run, comma separated.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# spngp {} config {}", self.library_version, self.config_fingerprint);
        let _ = writeln!(s, "method,run,seed,rmse_pooled,rmse_per_output,skipped");
        for m in &self.methods {
            if let Some(reason) = &m.skipped {
                let _ = writeln!(s, "{},,,,,\"{}\"", m.method, reason.replace('"', "'"));
                continue;
            }
            for (r, v) in m.runs.iter().enumerate() {
                let per: Vec<String> = m.per_output[r].iter().map(|x| format!("{x:.17e}")).collect();
                let _ = writeln!(s, "{},{},{},{:.17e},{},", m.method, r, self.seeds[r], v, per.join(";"));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_error_over_runs() {
        let m = MethodResult {
            method: "x".into(),
            runs: vec![1.0, 2.0, 3.0],
            per_output: vec![vec![1.0], vec![2.0], vec![3.0]],
            skipped: None,
        };
        assert_eq!(m.mean(), 2.0);
        assert!((m.std_err() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
