//! JSON model files.
//!
//! ```text
//! { "dim": D,
//!   "layers": [ { "kind": "upper" | "lower" | "shear", "s": int?, "i": int?,
//!                 "shift": { "type": "mlp", "dims": [...], "activation": "...",
//!                            "weights": [[row-major]...], "biases": [[...]...] }
//!                        | { "type": "fixed", "id": "...", "params": [...] } } ] }
//! ```
//!
//! `s` and `i` are 1-based. Floats are written with 17 significant digits,
//! so serialization round trips are bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp};
use crate::numfmt;

use super::layer::{Layer, LayerKind};
use super::net::MPNet;
use super::shift::{ShiftFn, ShiftRegistry};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub dim: usize,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    pub shift: ShiftDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShiftDoc {
    Mlp {
        dims: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    },
    Fixed {
        id: String,
        params: Vec<f64>,
    },
}

impl ModelDoc {
    pub fn from_net(net: &MPNet) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.len());
        for (l, layer) in net.layers().iter().enumerate() {
            let (s, i) = match layer.kind() {
                LayerKind::Upper { s } | LayerKind::Lower { s } => (Some(s), None),
                LayerKind::Shear { i } => (None, Some(i)),
            };
            let shift = match layer.shift() {
                ShiftFn::Mlp(m) => {
                    if m.params().iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "layer {l} has non-finite parameters"
                        )));
                    }
                    ShiftDoc::Mlp {
                        dims: m.dims().to_vec(),
                        activation: m.activation(),
                        weights: m.weights().to_vec(),
                        biases: m.biases().to_vec(),
                    }
                }
                ShiftFn::Fixed(f) => ShiftDoc::Fixed {
                    id: f.id().to_string(),
                    params: f.params().to_vec(),
                },
            };
            layers.push(LayerDoc {
                kind: layer.kind().name().to_string(),
                s,
                i,
                shift,
            });
        }
        Ok(Self {
            dim: net.dim(),
            layers,
        })
    }

    pub fn into_net(self, registry: &ShiftRegistry) -> Result<MPNet> {
        let dim = self.dim;
        if dim < 2 {
            return Err(Error::parse(
                "dim",
                format!("must be at least 2, got {dim}"),
            ));
        }
        let mut net = MPNet::identity(dim)?;
        for (l, doc) in self.layers.into_iter().enumerate() {
            let at = |field: &str| format!("layers[{l}].{field}");
            let kind = match (doc.kind.as_str(), doc.s, doc.i) {
                ("upper", Some(s), None) => LayerKind::Upper { s },
                ("lower", Some(s), None) => LayerKind::Lower { s },
                ("shear", None, Some(i)) => LayerKind::Shear { i },
                ("upper" | "lower", _, _) => {
                    return Err(Error::parse(
                        at("s"),
                        "upper/lower layers need `s` and no `i`",
                    ))
                }
                ("shear", _, _) => {
                    return Err(Error::parse(at("i"), "shear layers need `i` and no `s`"))
                }
                (other, _, _) => {
                    return Err(Error::parse(
                        at("kind"),
                        format!("unknown layer kind `{other}`"),
                    ))
                }
            };
            match kind {
                LayerKind::Upper { s } | LayerKind::Lower { s } if !(2..=dim).contains(&s) => {
                    return Err(Error::parse(at("s"), format!("{s} outside 2..={dim}")));
                }
                LayerKind::Shear { i } if !(1..=dim).contains(&i) => {
                    return Err(Error::parse(at("i"), format!("{i} outside 1..={dim}")));
                }
                _ => {}
            }
            let (n_in, n_out) = kind.shift_dims(dim);
            let shift = match doc.shift {
                ShiftDoc::Mlp {
                    dims,
                    activation,
                    weights,
                    biases,
                } => {
                    if dims.first() != Some(&n_in) || dims.last() != Some(&n_out) {
                        return Err(Error::parse(
                            at("shift.dims"),
                            format!(
                                "{} layer needs a shift R^{n_in} -> R^{n_out}, got {dims:?}",
                                kind.name()
                            ),
                        ));
                    }
                    let m = Mlp::from_parts(dims, activation, weights, biases).map_err(
                        |e| match e {
                            Error::Parse { field, message } => {
                                Error::parse(at(&format!("shift.{field}")), message)
                            }
                            Error::Config(message) => Error::parse(at("shift.dims"), message),
                            Error::Numeric(message) => {
                                Error::Numeric(format!("{}: {message}", at("shift")))
                            }
                            other => other,
                        },
                    )?;
                    ShiftFn::Mlp(m)
                }
                ShiftDoc::Fixed { id, params } => {
                    ShiftFn::Fixed(registry.resolve(&id, params, n_in, n_out).map_err(
                        |e| match e {
                            Error::Parse { field, message } => Error::parse(at(&field), message),
                            other => other,
                        },
                    )?)
                }
            };
            net.push(Layer::new(dim, kind, shift)?)?;
        }
        Ok(net)
    }
}

pub fn serialize(net: &MPNet) -> Result<Vec<u8>> {
    let doc = ModelDoc::from_net(net)?;
    numfmt::to_json_bytes(&doc).map_err(|e| Error::Numeric(e.to_string()))
}

pub fn deserialize(bytes: &[u8], registry: &ShiftRegistry) -> Result<MPNet> {
    let doc: ModelDoc =
        serde_json::from_slice(bytes).map_err(|e| Error::parse("document", e.to_string()))?;
    doc.into_net(registry)
}
