//! Multi-head self-attention acting on a context measure, MLPs with skip
//! connections, the per-layer velocity field, and diamond composition of
//! in-context maps.

use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::measure::{push_forward, DiscreteMeasure, Point};

/// Query/key/value/output matrices of a single head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// `k × d`
    pub query: Array2<f64>,
    /// `k × d`
    pub key: Array2<f64>,
    /// `d_head × d`
    pub value: Array2<f64>,
    /// `d × d_head`
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    heads: Vec<AttentionHead>,
    key_dim: usize,
    dim: usize,
}

fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

impl AttentionParams {
    pub fn new(heads: Vec<AttentionHead>, key_dim: usize) -> Result<Self> {
        let first =
            heads.first().ok_or_else(|| Error::InvalidParameters("attention needs at least one head".into()))?;
        let dim = first.query.ncols();
        if key_dim == 0 || dim == 0 {
            return Err(Error::InvalidParameters("key and model dimensions must be positive".into()));
        }
        for (h, head) in heads.iter().enumerate() {
            let d_head = head.value.nrows();
            let ok = head.query.dim() == (key_dim, dim)
                && head.key.dim() == (key_dim, dim)
                && head.value.ncols() == dim
                && head.output.dim() == (dim, d_head)
                && d_head > 0;
            if !ok {
                return Err(Error::InvalidParameters(format!("inconsistent matrix shapes in head {h}")));
            }
            if ![&head.query, &head.key, &head.value, &head.output].into_iter().all(all_finite) {
                return Err(Error::InvalidParameters(format!("non-finite entry in head {h}")));
            }
        }
        Ok(Self { heads, key_dim, dim })
    }

    /// All-zero parameters: `Att ≡ 0`, so `Γ` is the identity.
    pub fn zeros(dim: usize, heads: usize, key_dim: usize, head_dim: usize) -> Self {
        let head = AttentionHead {
            query: Array2::zeros((key_dim, dim)),
            key: Array2::zeros((key_dim, dim)),
            value: Array2::zeros((head_dim, dim)),
            output: Array2::zeros((dim, head_dim)),
        };
        Self { heads: vec![head; heads], key_dim, dim }
    }

    pub fn heads(&self) -> &[AttentionHead] {
        &self.heads
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Projects the context once so that many queries can share it.
    pub fn prepare(&self, mu: &DiscreteMeasure) -> Result<PreparedAttention<'_>> {
        if mu.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if mu.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: mu.dim() });
        }
        let heads = self
            .heads
            .iter()
            .map(|head| {
                let keys = mu.points().iter().map(|y| head.key.dot(y)).collect();
                let values = mu.points().iter().map(|y| head.value.dot(y)).collect();
                HeadContext { keys, values }
            })
            .collect();
        Ok(PreparedAttention { params: self, weights: mu.weights().to_vec(), heads })
    }
}

struct HeadContext {
    keys: Vec<Array1<f64>>,
    values: Vec<Array1<f64>>,
}

/// Attention parameters bound to one context measure.
pub struct PreparedAttention<'a> {
    params: &'a AttentionParams,
    weights: Vec<f64>,
    heads: Vec<HeadContext>,
}

impl PreparedAttention<'_> {
    /// Measure-weighted softmax `a_ℓ e^{s_ℓ} / Σ_j a_j e^{s_j}` for head `h`.
    pub fn softmax(&self, h: usize, x: ArrayView1<f64>) -> Vec<f64> {
        let head = &self.params.heads[h];
        let scale = 1.0 / (self.params.key_dim as f64).sqrt();
        let q = head.query.dot(&x);
        let logits: Vec<f64> = self.heads[h].keys.iter().map(|k| q.dot(k) * scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().zip(self.weights.iter()).map(|(s, a)| a * (s - max).exp()).collect();
        let norm: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= norm;
        }
        probs
    }

    pub fn attention(&self, x: ArrayView1<f64>) -> Result<Point> {
        if x.len() != self.params.dim {
            return Err(Error::DimensionMismatch { expected: self.params.dim, found: x.len() });
        }
        let mut out = Array1::zeros(self.params.dim);
        for (h, head) in self.params.heads.iter().enumerate() {
            let probs = self.softmax(h, x);
            let mut mixed = Array1::zeros(head.value.nrows());
            for (p, v) in probs.iter().zip(self.heads[h].values.iter()) {
                mixed.scaled_add(*p, v);
            }
            out += &head.output.dot(&mixed);
        }
        Ok(out)
    }

    pub fn gamma(&self, x: ArrayView1<f64>) -> Result<Point> {
        Ok(&x + &self.attention(x)?)
    }
}

/// `Att(μ, x) = Σ_h W^h Σ_ℓ softmax_ℓ V^h x_ℓ`.
pub fn attention(params: &AttentionParams, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
    params.prepare(mu)?.attention(x)
}

/// `Γ(μ, x) = x + Att(μ, x)`.
pub fn gamma(params: &AttentionParams, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
    params.prepare(mu)?.gamma(x)
}

/// C¹ activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// `ln(1 + eˣ)`
    SmoothRelu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::SmoothRelu => {
                if v > 0.0 {
                    v + (-v).exp().ln_1p()
                } else {
                    v.exp().ln_1p()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::SmoothRelu => "relu-smooth",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu-smooth" | "softplus" => Ok(Activation::SmoothRelu),
            other => Err(Error::InvalidParameters(format!("unknown activation {other:?}"))),
        }
    }
}

/// One affine stage `y ↦ A y + b` of an MLP body.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// `F(x) = c·x + σ(A^L(…σ(A¹x + b¹)…) + b^L)`. An empty layer list means the
/// body contributes nothing, so `F(x) = c·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    skip: f64,
    layers: Vec<DenseLayer>,
    activation: Activation,
    dim: usize,
}

impl MlpParams {
    pub fn new(dim: usize, skip: f64, layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if !skip.is_finite() {
            return Err(Error::InvalidParameters("skip coefficient must be finite".into()));
        }
        let mut width = dim;
        for (j, layer) in layers.iter().enumerate() {
            if layer.weight.ncols() != width || layer.bias.len() != layer.weight.nrows() {
                return Err(Error::InvalidParameters(format!("layer {j} has inconsistent shape")));
            }
            if !all_finite(&layer.weight) || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameters(format!("non-finite entry in layer {j}")));
            }
            width = layer.weight.nrows();
        }
        if width != dim {
            return Err(Error::InvalidParameters(format!("MLP output width {width} differs from {dim}")));
        }
        Ok(Self { skip, layers, activation, dim })
    }

    /// `F = Id`, i.e. `H ≡ 0`.
    pub fn identity(dim: usize) -> Self {
        Self { skip: 1.0, layers: Vec::new(), activation: Activation::Tanh, dim }
    }

    pub fn skip(&self) -> f64 {
        self.skip
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn body(&self, x: ArrayView1<f64>) -> Point {
        if self.layers.is_empty() {
            return Array1::zeros(self.dim);
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = (layer.weight.dot(&h) + &layer.bias).mapv(|v| self.activation.apply(v));
        }
        h
    }

    /// `H(x) = F(x) − x`, evaluated without the cancellation when `c = 1`.
    pub fn residual(&self, x: ArrayView1<f64>) -> Point {
        if self.skip == 1.0 {
            self.body(x)
        } else {
            self.body(x) + &x * (self.skip - 1.0)
        }
    }
}

pub fn mlp(params: &MlpParams, x: ArrayView1<f64>) -> Result<Point> {
    if x.len() != params.dim {
        return Err(Error::DimensionMismatch { expected: params.dim, found: x.len() });
    }
    Ok(&x * params.skip + &params.body(x))
}

/// `𝒱(μ, x) = Att(μ, x) + H(x + Att(μ, x))`, so that `x + 𝒱 = F(Γ(μ, x))`.
pub fn velocity(att: &AttentionParams, mlp_p: &MlpParams, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
    velocity_prepared(&att.prepare(mu)?, mlp_p, x)
}

pub fn velocity_prepared(prepared: &PreparedAttention<'_>, mlp_p: &MlpParams, x: ArrayView1<f64>) -> Result<Point> {
    if mlp_p.skip != 1.0 {
        return Err(Error::SkipNotUnit(mlp_p.skip));
    }
    let att = prepared.attention(x)?;
    let moved = &x + &att;
    Ok(att + mlp_p.residual(moved.view()))
}

/// A map `(μ, x) ↦ G(μ, x)`.
pub trait InContextMap: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point>;

    /// Evaluates at every listed point against the same context.
    fn eval_many(&self, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        xs.iter().map(|x| self.eval(mu, x.view())).collect()
    }

    /// `G(μ)_# μ`.
    fn push(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        let images = self.eval_many(mu, mu.points())?;
        let mut it = images.into_iter();
        push_forward(mu, |_| Ok(it.next().expect("one image per atom")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityMap {
    pub dim: usize,
}

impl InContextMap for IdentityMap {
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        Ok(x.to_owned())
    }
}

/// `Γ` as an in-context map.
#[derive(Debug, Clone)]
pub struct GammaMap(pub AttentionParams);

impl InContextMap for GammaMap {
    fn in_dim(&self) -> usize {
        self.0.dim()
    }
    fn out_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        gamma(&self.0, mu, x)
    }
    fn eval_many(&self, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        let prepared = self.0.prepare(mu)?;
        xs.iter().map(|x| prepared.gamma(x.view())).collect()
    }
}

/// A context-free MLP `F(μ, x) = F(x)`.
#[derive(Debug, Clone)]
pub struct MlpMap(pub MlpParams);

impl InContextMap for MlpMap {
    fn in_dim(&self) -> usize {
        self.0.dim()
    }
    fn out_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, _mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        mlp(&self.0, x)
    }
}

/// Wraps a closure as an in-context map.
pub struct FnMap<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub f: F,
}

impl<F> InContextMap for FnMap<F>
where
    F: Fn(&DiscreteMeasure, ArrayView1<f64>) -> Result<Point> + Send + Sync,
{
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn eval(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        (self.f)(mu, x)
    }
}

/// `(g₂ ⋄ g₁)(μ, x) = g₂(ν, g₁(μ, x))` with `ν = g₁(μ)_# μ`.
///
/// The pushed-forward context of the most recent `μ` is cached.
pub struct Diamond {
    first: Arc<dyn InContextMap>,
    second: Arc<dyn InContextMap>,
    cache: Mutex<Option<(DiscreteMeasure, DiscreteMeasure)>>,
}

impl Diamond {
    fn context(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((key, nu)) = cache.as_ref() {
            if key == mu {
                return Ok(nu.clone());
            }
        }
        let nu = self.first.push(mu)?;
        *cache = Some((mu.clone(), nu.clone()));
        Ok(nu)
    }
}

impl InContextMap for Diamond {
    fn in_dim(&self) -> usize {
        self.first.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.second.out_dim()
    }
    fn eval(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        let nu = self.context(mu)?;
        let y = self.first.eval(mu, x)?;
        self.second.eval(&nu, y.view())
    }
    fn eval_many(&self, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        let nu = self.context(mu)?;
        let ys = self.first.eval_many(mu, xs)?;
        self.second.eval_many(&nu, &ys)
    }
}

/// `g2 ⋄ g1`.
pub fn compose_diamond(g1: Arc<dyn InContextMap>, g2: Arc<dyn InContextMap>) -> Result<Diamond> {
    if g1.out_dim() != g2.in_dim() {
        return Err(Error::DimensionMismatch { expected: g2.in_dim(), found: g1.out_dim() });
    }
    Ok(Diamond { first: g1, second: g2, cache: Mutex::new(None) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_head(q: f64, k: f64, v: f64, w: f64) -> AttentionHead {
        AttentionHead { query: array![[q]], key: array![[k]], value: array![[v]], output: array![[w]] }
    }

    fn pair() -> DiscreteMeasure {
        DiscreteMeasure::on_line(&[0.0, 2.0], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn attention_examples() {
        let zero_w = AttentionParams::new(vec![scalar_head(1.0, 2.0, 3.0, 0.0)], 1).unwrap();
        assert_eq!(attention(&zero_w, &pair(), array![0.3].view()).unwrap(), array![0.0]);

        let p =
            AttentionParams::new(vec![scalar_head(0.7, -1.3, 2.0, 0.5), scalar_head(1.0, 1.0, 1.0, -1.0)], 1).unwrap();
        let single = DiscreteMeasure::on_line(&[1.5], &[0.2]).unwrap();
        let out = attention(&p, &single, array![-0.4].view()).unwrap();
        assert!((out[0] - (0.5 * 2.0 * 1.5 - 1.5)).abs() < 1e-15);

        let mean = AttentionParams::new(vec![scalar_head(0.0, 0.0, 1.0, 1.0)], 1).unwrap();
        assert_eq!(attention(&mean, &pair(), array![0.9].view()).unwrap(), array![1.0]);
        assert_eq!(gamma(&mean, &pair(), array![0.9].view()).unwrap(), array![1.9]);
        assert_eq!(gamma(&zero_w, &pair(), array![0.9].view()).unwrap(), array![0.9]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = AttentionParams::new(vec![scalar_head(400.0, 400.0, 1.0, 1.0)], 1).unwrap();
        let out = attention(&p, &pair(), array![1.0].view()).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mlp_examples() {
        let zero =
            MlpParams::new(1, 1.0, vec![DenseLayer { weight: array![[0.0]], bias: array![0.0] }], Activation::Tanh)
                .unwrap();
        assert_eq!(mlp(&zero, array![0.42].view()).unwrap(), array![0.42]);

        let pure = MlpParams::new(
            2,
            0.0,
            vec![DenseLayer { weight: Array2::eye(2), bias: Array1::zeros(2) }],
            Activation::Tanh,
        )
        .unwrap();
        let y = mlp(&pure, array![0.5, -1.0].view()).unwrap();
        assert_eq!(y, array![0.5f64.tanh(), (-1.0f64).tanh()]);

        let shifted =
            MlpParams::new(1, 1.0, vec![DenseLayer { weight: array![[2.0]], bias: array![1.0] }], Activation::Tanh)
                .unwrap();
        assert!((mlp(&shifted, array![0.0].view()).unwrap()[0] - 0.7615941559557649).abs() < 1e-15);
    }

    #[test]
    fn mlp_rejects_bad_shapes() {
        let err =
            MlpParams::new(2, 1.0, vec![DenseLayer { weight: array![[1.0]], bias: array![0.0] }], Activation::Tanh);
        assert!(err.is_err());
    }

    #[test]
    fn velocity_examples() {
        let att = AttentionParams::new(vec![scalar_head(0.3, -0.8, 0.6, 0.9)], 1).unwrap();
        let x = array![0.4];
        let v = velocity(&att, &MlpParams::identity(1), &pair(), x.view()).unwrap();
        assert_eq!(v, attention(&att, &pair(), x.view()).unwrap());

        let body =
            MlpParams::new(1, 1.0, vec![DenseLayer { weight: array![[0.7]], bias: array![-0.2] }], Activation::Sigmoid)
                .unwrap();
        let zero_att = AttentionParams::zeros(1, 1, 1, 1);
        let v = velocity(&zero_att, &body, &pair(), x.view()).unwrap();
        assert_eq!(v, body.residual(x.view()));

        let full = velocity(&att, &body, &pair(), x.view()).unwrap();
        let composed = mlp(&body, gamma(&att, &pair(), x.view()).unwrap().view()).unwrap();
        assert!(((&x + &full)[0] - composed[0]).abs() < 1e-14);

        let bad_skip = MlpParams::new(1, 0.5, Vec::new(), Activation::Tanh).unwrap();
        assert_eq!(velocity(&att, &bad_skip, &pair(), x.view()).unwrap_err(), Error::SkipNotUnit(0.5));
    }

    #[test]
    fn diamond_examples() {
        let att = AttentionParams::new(vec![scalar_head(0.3, -0.8, 0.6, 0.9)], 1).unwrap();
        let g: Arc<dyn InContextMap> = Arc::new(GammaMap(att.clone()));
        let id: Arc<dyn InContextMap> = Arc::new(IdentityMap { dim: 1 });
        let x = array![0.4];

        let left = compose_diamond(id.clone(), g.clone()).unwrap();
        assert_eq!(left.eval(&pair(), x.view()).unwrap(), g.eval(&pair(), x.view()).unwrap());

        let both = compose_diamond(id.clone(), id.clone()).unwrap();
        assert_eq!(both.eval(&pair(), x.view()).unwrap(), x);

        let trivial: Arc<dyn InContextMap> = Arc::new(GammaMap(AttentionParams::zeros(1, 1, 1, 1)));
        let d = compose_diamond(trivial, g.clone()).unwrap();
        assert_eq!(d.eval(&pair(), x.view()).unwrap(), gamma(&att, &pair(), x.view()).unwrap());

        let plane: Arc<dyn InContextMap> = Arc::new(IdentityMap { dim: 2 });
        assert!(matches!(compose_diamond(g, plane), Err(Error::DimensionMismatch { .. })));
    }
}
