//! JSON model files.
//!
//! Leaves store row indices into the embedded training set instead of data
//! blocks; factorizations are rebuilt on load.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Node, NodeId, NodeKind, Region, SpnGp, TrainMeta, TrainingSet};
use crate::error::{Error, Result};
use crate::gp::GpLeaf;
use crate::kernel::KernelSpec;

pub const FORMAT: &str = "spngp-model";
pub const FORMAT_VERSION: u32 = 1;

/// Serde adapter for float vectors that may hold infinities, which plain
/// JSON numbers cannot carry. Infinities become the strings "inf"/"-inf".
pub(crate) mod ext_f64_vec {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Ext {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| match *x {
                f64::INFINITY => Ext::Text("inf".into()),
                f64::NEG_INFINITY => Ext::Text("-inf".into()),
                x => Ext::Num(x),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Ext>::deserialize(d)?
            .into_iter()
            .map(|e| match e {
                Ext::Num(x) => Ok(x),
                Ext::Text(t) if t == "inf" => Ok(f64::INFINITY),
                Ext::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
                Ext::Text(t) => Err(D::Error::custom(format!("not a number: {t:?}"))),
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    library_version: String,
    config_fingerprint: String,
    train_meta: TrainMeta,
    posterior_applied: bool,
    root: NodeId,
    nodes: Vec<NodeDoc>,
    training: TrainingDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingDoc {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: NodeId,
    out_scope: Vec<usize>,
    region: Region,
    kind: KindDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum KindDoc {
    Sum {
        children: Vec<NodeId>,
        #[serde(with = "ext_f64_vec")]
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
    Leaf {
        kernel: KernelSpec,
        log_noise: f64,
        output: usize,
        region_id: usize,
        data_rows: Vec<usize>,
        overlap_rows: Vec<usize>,
    },
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what} rows must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl SpnGp {
    /// Serialize to a JSON document. Requires the embedded training set.
    pub fn to_json(&self, config_fingerprint: &str) -> Result<String> {
        let training = self
            .training()
            .ok_or_else(|| Error::state("model has no embedded training set to persist"))?;
        let nodes = self
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id,
                out_scope: n.out_scope.clone(),
                region: n.region.clone(),
                kind: match &n.kind {
                    NodeKind::Sum { children, log_weights } => KindDoc::Sum {
                        children: children.clone(),
                        log_weights: log_weights.clone(),
                    },
                    NodeKind::Product { children } => KindDoc::Product {
                        children: children.clone(),
                    },
                    NodeKind::Split {
                        axis,
                        thresholds,
                        children,
                    } => KindDoc::Split {
                        axis: *axis,
                        thresholds: thresholds.clone(),
                        children: children.clone(),
                    },
                    NodeKind::Leaf(l) => KindDoc::Leaf {
                        kernel: l.kernel().clone(),
                        log_noise: l.log_noise(),
                        output: n.out_scope.first().copied().unwrap_or(0),
                        region_id: l.region(),
                        data_rows: l.data_rows().to_vec(),
                        overlap_rows: l.overlap_rows().to_vec(),
                    },
                },
            })
            .collect();
        let doc = ModelDoc {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            library_version: crate::VERSION.into(),
            config_fingerprint: config_fingerprint.into(),
            train_meta: self.meta().clone(),
            posterior_applied: self.posterior_applied(),
            root: self.root(),
            nodes,
            training: TrainingDoc {
                x: matrix_rows(&training.x),
                y: matrix_rows(&training.y),
            },
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    /// Parse a JSON document, rebuild leaf data blocks and refit the leaves.
    /// Returns the model and the config fingerprint it was written with.
    pub fn from_json(text: &str) -> Result<(SpnGp, String)> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        if probe.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(Error::Format("not an spngp model file".into()));
        }
        match probe.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::Format(format!(
                    "model file version {} is not supported by this build (reads version {FORMAT_VERSION})",
                    other.map_or("?".into(), |v| v.to_string())
                )))
            }
        }
        let doc: ModelDoc = serde_json::from_value(probe)?;
        let meta = doc.train_meta;
        let tx = rows_matrix(&doc.training.x, meta.input_dim, "training x")?;
        let ty = rows_matrix(&doc.training.y, meta.output_dim, "training y")?;
        if tx.nrows() != ty.nrows() || meta.y_offset.len() != meta.output_dim {
            return Err(Error::Format("training set shape does not match metadata".into()));
        }
        let n_train = tx.nrows();
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for nd in doc.nodes {
            let kind = match nd.kind {
                KindDoc::Sum { children, log_weights } => NodeKind::Sum { children, log_weights },
                KindDoc::Product { children } => NodeKind::Product { children },
                KindDoc::Split {
                    axis,
                    thresholds,
                    children,
                } => NodeKind::Split {
                    axis,
                    thresholds,
                    children,
                },
                KindDoc::Leaf {
                    kernel,
                    log_noise,
                    output,
                    region_id,
                    data_rows,
                    overlap_rows,
                } => {
                    if output >= meta.output_dim
                        || data_rows.iter().chain(&overlap_rows).any(|r| *r >= n_train)
                        || kernel.input_dim() != meta.input_dim
                    {
                        return Err(Error::Format(format!("leaf {} references missing data", nd.id)));
                    }
                    let block = |rows: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
                        let x = tx.select_rows(rows.iter());
                        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| ty[(*r, output)] - meta.y_offset[output]));
                        (x, y)
                    };
                    let (x, y) = block(&data_rows);
                    let mut leaf = GpLeaf::new(kernel, log_noise.exp(), x, y)?
                        .with_rows(data_rows)
                        .with_region(region_id);
                    if !overlap_rows.is_empty() {
                        let (ox, oy) = block(&overlap_rows);
                        leaf.set_overlap(overlap_rows, &ox, &oy)?;
                    }
                    // keep the stored value exactly rather than its exp/ln round trip
                    let k = leaf.kernel().clone();
                    leaf.set_hyperparameters(k, log_noise)?;
                    NodeKind::Leaf(Box::new(leaf))
                }
            };
            nodes.push(Node {
                id: nd.id,
                kind,
                out_scope: nd.out_scope,
                region: nd.region,
            });
        }
        let mut model = SpnGp::from_parts(nodes, doc.root, meta).with_training(TrainingSet { x: tx, y: ty });
        let violations = model.validate();
        if let Some(v) = violations.first() {
            return Err(Error::Format(format!("model fails validation ({} violations, first {v})", violations.len())));
        }
        model.fit_leaves()?;
        model.set_posterior_applied(doc.posterior_applied);
        Ok((model, doc.config_fingerprint))
    }

    pub fn save(&self, path: &Path, config_fingerprint: &str) -> Result<()> {
        std::fs::write(path, self.to_json(config_fingerprint)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(SpnGp, String)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
