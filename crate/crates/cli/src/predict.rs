//! `predict`: moments of a saved model at the rows of a query CSV.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use nalgebra::DMatrix;
use spngp::data::load_inputs_csv;
use spngp::spn::PredictOptions;
use spngp::SpnGp;

use crate::{header_line, phase};

/// z-value of a central 95% normal interval.
const Z95: f64 = 1.959963984540054;

/// Prediction CSV for `xs`: inputs, then per output the mean, latent and
/// observation variance and a 95% band on y, then the node and region ids
/// of the highest-weight leaf per output.
pub fn render(model: &SpnGp, config_fingerprint: &str, names: &[String], xs: &DMatrix<f64>, opts: PredictOptions) -> Result<String> {
    let d = model.meta().input_dim;
    if xs.ncols() != d {
        bail!("query has {} columns, model expects {d} inputs", xs.ncols());
    }
    let outs = model.meta().output_dim;
    let mut s = header_line(config_fingerprint);
    s.push('\n');
    let mut cols: Vec<String> = names.to_vec();
    for j in 0..outs {
        for c in ["mean", "var_f", "var_y", "lo95", "hi95"] {
            cols.push(format!("{c}_{j}"));
        }
    }
    cols.push("map_leaf".into());
    cols.push("map_region".into());
    s.push_str(&cols.join(","));
    s.push('\n');
    if xs.nrows() == 0 {
        return Ok(s);
    }
    let pm = phase("predict", model.predict(xs, opts))?;
    let map = phase("map_leaves", model.map_leaves(xs))?;
    for i in 0..xs.nrows() {
        let mut row: Vec<String> = xs.row(i).iter().map(|v| v.to_string()).collect();
        for m in &pm {
            let sd = m.var_y[i].sqrt();
            for v in [m.mean[i], m.var_f[i], m.var_y[i], m.mean[i] - Z95 * sd, m.mean[i] + Z95 * sd] {
                row.push(v.to_string());
            }
        }
        let leaves: Vec<String> = map[i].iter().map(|l| l.0.to_string()).collect();
        let regions: Vec<String> = map[i]
            .iter()
            .map(|l| model.leaf(*l).map_or(String::new(), |x| x.region().to_string()))
            .collect();
        row.push(leaves.join(";"));
        row.push(regions.join(";"));
        let _ = writeln!(s, "{}", row.join(","));
    }
    Ok(s)
}

/// Load `model_path`, read `query_path` and return the prediction CSV.
pub fn run(model_path: &Path, query_path: &Path, delimiter: u8, strict: bool) -> Result<String> {
    let (model, fp) = phase("load_model", SpnGp::load(model_path))?;
    let (names, xs) = phase("load_query", load_inputs_csv(query_path, delimiter))?;
    render(&model, &fp, &names, &xs, PredictOptions { strict })
}
