//! `.rbmodel` serialisation.
//!
//! Layout: the magic bytes `RBMODEL\0`, a little-endian `u32` version, a
//! `u64` header length, a UTF-8 JSON header describing the family, schema and
//! parameter shapes, a `u64` value count and finally every floating-point
//! parameter as little-endian `f64`. Keeping floats out of the JSON makes the
//! round trip bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gbt::{Ensemble, GbtLoss, GbtModel, Node, Tree};
use super::linear::{LinearHead, LinearModel};
use super::mlp::{Dense, MlpModel, Network};
use super::naive::NaiveModel;
use super::{GlobalModel, ModelError, ModelFamily, ModelParams, QuantileLevels};
use crate::features::TargetTransform;

const MAGIC: &[u8; 8] = b"RBMODEL\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    family: ModelFamily,
    fitted_at: usize,
    feature_schema: Vec<String>,
    n_quantiles: usize,
    target_transform: TargetTransform,
    rng_seed: Option<u64>,
    structure: Structure,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Structure {
    PooledLinear {
        n_features: usize,
        n_quantile_heads: usize,
    },
    Gbt {
        ensembles: Vec<EnsembleShape>,
    },
    Mlp {
        layers: Vec<(usize, usize)>,
        n_inputs: usize,
        n_quantiles: usize,
    },
    SeasonalNaive {
        season: usize,
        n_series: usize,
        n_quantiles: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleShape {
    pinball: bool,
    loss_trace_len: usize,
    /// Per tree, per node: `None` for a leaf, `(feature, left, right)` for a split.
    trees: Vec<Vec<Option<(usize, usize, usize)>>>,
}

fn fmt_err(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

fn push_linear(head: &LinearHead, out: &mut Vec<f64>) {
    out.extend_from_slice(&head.weights);
    out.push(head.intercept);
}

fn shape_ensemble(e: &Ensemble, out: &mut Vec<f64>) -> EnsembleShape {
    let pinball = match e.loss {
        GbtLoss::Squared => false,
        GbtLoss::Pinball(q) => {
            out.push(q);
            true
        }
    };
    out.push(e.base_score);
    out.push(e.learning_rate);
    out.extend_from_slice(&e.loss_trace);
    let trees = e
        .trees
        .iter()
        .map(|t| {
            t.nodes
                .iter()
                .map(|n| match *n {
                    Node::Leaf(v) => {
                        out.push(v);
                        None
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        out.push(threshold);
                        Some((feature, left, right))
                    }
                })
                .collect()
        })
        .collect();
    EnsembleShape {
        pinball,
        loss_trace_len: e.loss_trace.len(),
        trees,
    }
}

fn encode(model: &GlobalModel) -> (Header, Vec<f64>) {
    let mut values: Vec<f64> = model.quantile_levels.as_slice().to_vec();
    let structure = match &model.params {
        ModelParams::PooledLinear(m) => {
            push_linear(&m.point, &mut values);
            m.quantile_heads.iter().for_each(|h| push_linear(h, &mut values));
            Structure::PooledLinear {
                n_features: m.point.weights.len(),
                n_quantile_heads: m.quantile_heads.len(),
            }
        }
        ModelParams::Gbt(m) => {
            let ensembles = std::iter::once(&m.point)
                .chain(&m.quantile_heads)
                .map(|e| shape_ensemble(e, &mut values))
                .collect();
            Structure::Gbt { ensembles }
        }
        ModelParams::Mlp(m) => {
            values.extend_from_slice(&m.network.quantiles);
            for l in &m.network.layers {
                values.extend_from_slice(&l.weights);
                values.extend_from_slice(&l.bias);
            }
            values.extend_from_slice(&m.x_mean);
            values.extend_from_slice(&m.x_scale);
            values.push(m.y_mean);
            values.push(m.y_scale);
            Structure::Mlp {
                layers: m.network.layers.iter().map(|l| (l.n_in, l.n_out)).collect(),
                n_inputs: m.x_mean.len(),
                n_quantiles: m.network.quantiles.len(),
            }
        }
        ModelParams::SeasonalNaive(m) => {
            m.residual_quantiles.iter().for_each(|r| values.extend_from_slice(r));
            Structure::SeasonalNaive {
                season: m.season,
                n_series: m.residual_quantiles.len(),
                n_quantiles: m.residual_quantiles.first().map_or(0, Vec::len),
            }
        }
    };
    let header = Header {
        family: model.family,
        fitted_at: model.fitted_at,
        feature_schema: model.feature_schema.clone(),
        n_quantiles: model.quantile_levels.len(),
        target_transform: model.target_transform,
        rng_seed: model.rng_seed,
        structure,
    };
    (header, values)
}

struct Cursor<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.values.len());
        let end = end.ok_or_else(|| fmt_err("parameter block is shorter than the header declares"))?;
        let s = &self.values[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn one(&mut self) -> Result<f64, ModelError> {
        Ok(self.take(1)?[0])
    }
}

fn read_linear(c: &mut Cursor, d: usize) -> Result<LinearHead, ModelError> {
    Ok(LinearHead {
        weights: c.take(d)?.to_vec(),
        intercept: c.one()?,
    })
}

fn read_ensemble(c: &mut Cursor, shape: &EnsembleShape) -> Result<Ensemble, ModelError> {
    let loss = if shape.pinball {
        GbtLoss::Pinball(c.one()?)
    } else {
        GbtLoss::Squared
    };
    let base_score = c.one()?;
    let learning_rate = c.one()?;
    let loss_trace = c.take(shape.loss_trace_len)?.to_vec();
    let mut trees = Vec::with_capacity(shape.trees.len());
    for t in &shape.trees {
        let mut nodes = Vec::with_capacity(t.len());
        for n in t {
            let v = c.one()?;
            nodes.push(match *n {
                None => Node::Leaf(v),
                Some((feature, left, right)) => {
                    if left >= t.len() || right >= t.len() {
                        return Err(fmt_err("tree child index out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold: v,
                        left,
                        right,
                    }
                }
            });
        }
        trees.push(Tree { nodes });
    }
    Ok(Ensemble {
        loss,
        base_score,
        learning_rate,
        trees,
        loss_trace,
    })
}

fn decode(header: Header, values: &[f64]) -> Result<GlobalModel, ModelError> {
    let mut c = Cursor { values, pos: 0 };
    let quantile_levels = QuantileLevels::new(c.take(header.n_quantiles)?.to_vec())?;
    let params = match (&header.structure, header.family) {
        (
            Structure::PooledLinear {
                n_features,
                n_quantile_heads,
            },
            ModelFamily::PooledLinear,
        ) => {
            let point = read_linear(&mut c, *n_features)?;
            let quantile_heads = (0..*n_quantile_heads)
                .map(|_| read_linear(&mut c, *n_features))
                .collect::<Result<_, _>>()?;
            ModelParams::PooledLinear(LinearModel { point, quantile_heads })
        }
        (Structure::Gbt { ensembles }, ModelFamily::Gbt) => {
            let (first, rest) = ensembles
                .split_first()
                .ok_or_else(|| fmt_err("gbt model without ensembles"))?;
            let point = read_ensemble(&mut c, first)?;
            let quantile_heads = rest
                .iter()
                .map(|s| read_ensemble(&mut c, s))
                .collect::<Result<_, _>>()?;
            ModelParams::Gbt(GbtModel { point, quantile_heads })
        }
        (
            Structure::Mlp {
                layers,
                n_inputs,
                n_quantiles,
            },
            ModelFamily::Mlp,
        ) => {
            let quantiles = c.take(*n_quantiles)?.to_vec();
            let mut dense = Vec::with_capacity(layers.len());
            for &(n_in, n_out) in layers {
                let weights = c.take(n_in * n_out)?.to_vec();
                let bias = c.take(n_out)?.to_vec();
                dense.push(Dense {
                    n_in,
                    n_out,
                    weights,
                    bias,
                });
            }
            let x_mean = c.take(*n_inputs)?.to_vec();
            let x_scale = c.take(*n_inputs)?.to_vec();
            let y_mean = c.one()?;
            let y_scale = c.one()?;
            ModelParams::Mlp(MlpModel {
                network: Network {
                    layers: dense,
                    quantiles,
                },
                x_mean,
                x_scale,
                y_mean,
                y_scale,
            })
        }
        (
            Structure::SeasonalNaive {
                season,
                n_series,
                n_quantiles,
            },
            ModelFamily::SeasonalNaive,
        ) => {
            let residual_quantiles = (0..*n_series)
                .map(|_| c.take(*n_quantiles).map(<[f64]>::to_vec))
                .collect::<Result<_, _>>()?;
            ModelParams::SeasonalNaive(NaiveModel {
                season: *season,
                residual_quantiles,
            })
        }
        _ => return Err(fmt_err("header family does not match its parameter layout")),
    };
    if c.pos != values.len() {
        return Err(fmt_err("parameter block is longer than the header declares"));
    }
    Ok(GlobalModel {
        family: header.family,
        quantile_levels,
        fitted_at: header.fitted_at,
        feature_schema: header.feature_schema,
        target_transform: header.target_transform,
        rng_seed: header.rng_seed,
        params,
    })
}

pub fn write_model<W: Write>(model: &GlobalModel, mut w: W) -> Result<(), ModelError> {
    let (header, values) = encode(model);
    let json = serde_json::to_vec(&header).map_err(|e| fmt_err(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    values.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    w.write_all(&buf)?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_model<R: Read>(mut r: R) -> Result<GlobalModel, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt_err("not an .rbmodel file"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| fmt_err(e.to_string()))?;
    let n = read_u64(&mut r)? as usize;
    let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| fmt_err("value count overflow"))?];
    r.read_exact(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    decode(header, &values)
}

pub fn save(model: &GlobalModel, path: &Path) -> Result<(), ModelError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GlobalModel, ModelError> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}
