//! JSON formats for measures, token sequences, parameters and transport plans.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! every value round-trips bit-exactly.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::attention::{Activation, AttentionHead, AttentionParams, DenseLayer, MlpParams};
use crate::error::{Error, Result};
use crate::measure::{BoundingBox, DiscreteMeasure, TokenSequence};
use crate::stack::{Layer, LayerStack, LayerStep};
use crate::transport::TransportPlan;

#[derive(Debug, Serialize, Deserialize)]
struct BoxJson {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasureJson {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bounds: Option<BoxJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokensJson {
    dim: usize,
    tokens: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadJson {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AttentionJson {
    heads: usize,
    key_dim: usize,
    per_head: Vec<HeadJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DenseJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpJson {
    skip: f64,
    #[serde(default)]
    layers: Vec<DenseJson>,
    #[serde(default = "default_activation")]
    activation: String,
}

fn default_activation() -> String {
    "tanh".into()
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerJson {
    attention: AttentionJson,
    mlp: MlpJson,
    /// Present for scaled-velocity layers `x + s·𝒱`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StackJson {
    dim: usize,
    layers: Vec<LayerJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanJson {
    cost: f64,
    /// `[source, target, mass]`
    flows: Vec<(usize, usize, f64)>,
}

/// Writes every float as `{:.16e}`.
struct PreciseFormatter;

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    value.serialize(&mut ser).map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what}: ragged matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn points(raw: Vec<Vec<f64>>, dim: usize) -> Result<Vec<Array1<f64>>> {
    raw.into_iter()
        .map(|p| {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            Ok(Array1::from(p))
        })
        .collect()
}

pub fn measure_from_json(text: &str) -> Result<DiscreteMeasure> {
    let raw: MeasureJson = from_json(text)?;
    let dim = raw.dim;
    let pts = points(raw.points, dim)?;
    match raw.bounds {
        Some(b) => {
            let bounds = BoundingBox::new(Array1::from(b.lo), Array1::from(b.hi))?;
            if bounds.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: bounds.dim() });
            }
            DiscreteMeasure::new(pts, raw.weights, bounds)
        }
        None => DiscreteMeasure::new(pts, raw.weights, BoundingBox::default_for(dim)),
    }
}

pub fn measure_to_json(mu: &DiscreteMeasure) -> Result<String> {
    to_json(&MeasureJson {
        dim: mu.dim(),
        points: mu.points().iter().map(|p| p.to_vec()).collect(),
        weights: mu.weights().to_vec(),
        bounds: Some(BoxJson { lo: mu.bounds().lo().to_vec(), hi: mu.bounds().hi().to_vec() }),
    })
}

pub fn tokens_from_json(text: &str) -> Result<TokenSequence> {
    let raw: TokensJson = from_json(text)?;
    let pts = points(raw.tokens, raw.dim)?;
    TokenSequence::new(pts, BoundingBox::default_for(raw.dim))
}

pub fn tokens_to_json(seq: &TokenSequence) -> Result<String> {
    to_json(&TokensJson { dim: seq.dim(), tokens: seq.tokens().iter().map(|p| p.to_vec()).collect() })
}

fn attention_from_raw(raw: AttentionJson) -> Result<AttentionParams> {
    if raw.heads != raw.per_head.len() {
        return Err(Error::Format(format!("declared {} heads but found {}", raw.heads, raw.per_head.len())));
    }
    let heads = raw
        .per_head
        .iter()
        .map(|h| {
            Ok(AttentionHead {
                query: matrix(&h.q, "Q")?,
                key: matrix(&h.k, "K")?,
                value: matrix(&h.v, "V")?,
                output: matrix(&h.w, "W")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AttentionParams::new(heads, raw.key_dim)
}

fn attention_to_raw(p: &AttentionParams) -> AttentionJson {
    AttentionJson {
        heads: p.heads().len(),
        key_dim: p.key_dim(),
        per_head: p
            .heads()
            .iter()
            .map(|h| HeadJson { q: rows(&h.query), k: rows(&h.key), v: rows(&h.value), w: rows(&h.output) })
            .collect(),
    }
}

fn mlp_from_raw(raw: MlpJson, dim: usize) -> Result<MlpParams> {
    let layers = raw
        .layers
        .iter()
        .map(|l| Ok(DenseLayer { weight: matrix(&l.a, "A")?, bias: Array1::from(l.b.clone()) }))
        .collect::<Result<Vec<_>>>()?;
    MlpParams::new(dim, raw.skip, layers, Activation::from_name(&raw.activation)?)
}

fn mlp_to_raw(p: &MlpParams) -> MlpJson {
    MlpJson {
        skip: p.skip(),
        layers: p.layers().iter().map(|l| DenseJson { a: rows(&l.weight), b: l.bias.to_vec() }).collect(),
        activation: p.activation().name().into(),
    }
}

pub fn attention_from_json(text: &str) -> Result<AttentionParams> {
    attention_from_raw(from_json(text)?)
}

pub fn attention_to_json(p: &AttentionParams) -> Result<String> {
    to_json(&attention_to_raw(p))
}

pub fn mlp_from_json(text: &str, dim: usize) -> Result<MlpParams> {
    mlp_from_raw(from_json(text)?, dim)
}

pub fn mlp_to_json(p: &MlpParams) -> Result<String> {
    to_json(&mlp_to_raw(p))
}

fn layer_from_raw(raw: LayerJson, dim: usize) -> Result<Layer> {
    let attention = attention_from_raw(raw.attention)?;
    let mlp = mlp_from_raw(raw.mlp, dim)?;
    match raw.scale {
        Some(s) => Layer::scaled_velocity(attention, mlp, s),
        None => Layer::new(attention, mlp),
    }
}

pub fn stack_from_json(text: &str) -> Result<LayerStack> {
    let raw: StackJson = from_json(text)?;
    let dim = raw.dim;
    let layers = raw.layers.into_iter().map(|l| layer_from_raw(l, dim)).collect::<Result<Vec<_>>>()?;
    LayerStack::new(dim, layers)
}

pub fn stack_to_json(stack: &LayerStack) -> Result<String> {
    to_json(&StackJson {
        dim: stack.dim(),
        layers: stack
            .layers()
            .iter()
            .map(|l| LayerJson {
                attention: attention_to_raw(&l.attention),
                mlp: mlp_to_raw(&l.mlp),
                scale: match l.step {
                    LayerStep::Full => None,
                    LayerStep::ScaledVelocity(s) => Some(s),
                },
            })
            .collect(),
    })
}

/// A single layer stored alone, in the same shape as an entry of a stack's
/// `layers` array.
pub fn layer_from_json(text: &str, dim: usize) -> Result<Layer> {
    layer_from_raw(from_json(text)?, dim)
}

pub fn plan_to_json(plan: &TransportPlan) -> Result<String> {
    to_json(&PlanJson { cost: plan.cost, flows: plan.flows.iter().map(|f| (f.source, f.target, f.mass)).collect() })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn measure_round_trip_is_exact() {
        let mu = DiscreteMeasure::on_line(&[0.1, -2.0 / 3.0, 1e-300], &[0.2, 0.3, 0.5]).unwrap();
        let text = measure_to_json(&mu).unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
        assert_eq!(measure_from_json(&text).unwrap(), mu);
    }

    #[test]
    fn missing_box_uses_default() {
        let mu = measure_from_json(r#"{"dim":1,"points":[[0.5]],"weights":[1]}"#).unwrap();
        assert_eq!(mu.bounds(), &BoundingBox::default_for(1));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(measure_from_json("{"), Err(Error::Format(_))));
        assert!(matches!(
            measure_from_json(r#"{"dim":2,"points":[[0.5]],"weights":[1]}"#),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            measure_from_json(r#"{"dim":1,"points":[[0.5]],"weights":[-1]}"#),
            Err(Error::NonpositiveWeight { .. })
        ));
    }

    #[test]
    fn stack_round_trip() {
        let head = AttentionHead {
            query: array![[0.3, -0.1]],
            key: array![[0.2, 0.4]],
            value: array![[1.0, 0.5]],
            output: array![[0.25], [-0.5]],
        };
        let att = AttentionParams::new(vec![head], 1).unwrap();
        let body = MlpParams::new(
            2,
            1.0,
            vec![DenseLayer { weight: array![[0.1, 0.2], [0.3, 0.4]], bias: array![0.0, -0.1] }],
            Activation::Sigmoid,
        )
        .unwrap();
        let stack = LayerStack::new(
            2,
            vec![Layer::new(att.clone(), body.clone()).unwrap(), Layer::scaled_velocity(att, body, 0.125).unwrap()],
        )
        .unwrap();
        let back = stack_from_json(&stack_to_json(&stack).unwrap()).unwrap();
        assert_eq!(back, stack);
    }

    #[test]
    fn tokens_round_trip() {
        let seq = TokenSequence::on_line(&[0.0, 0.7, 0.7]).unwrap();
        assert_eq!(tokens_from_json(&tokens_to_json(&seq).unwrap()).unwrap(), seq);
    }
}
