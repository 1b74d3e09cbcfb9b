//! Deep stacks of attention + MLP layers as a single in-context map.

use ndarray::ArrayView1;

use crate::attention::{mlp, velocity_prepared, AttentionParams, InContextMap, MlpParams};
use crate::error::{Error, Result};
use crate::measure::{iota, push_forward, DiscreteMeasure, Point, TokenSequence};

/// How a layer turns its parameters into a map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerStep {
    /// `x ↦ F(Γ(μ, x))`.
    Full,
    /// `x ↦ x + s·𝒱(μ, x)`; an explicit Euler step of the layer velocity.
    ScaledVelocity(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub attention: AttentionParams,
    pub mlp: MlpParams,
    pub step: LayerStep,
}

impl Layer {
    pub fn new(attention: AttentionParams, mlp: MlpParams) -> Result<Self> {
        if attention.dim() != mlp.dim() {
            return Err(Error::DimensionMismatch { expected: attention.dim(), found: mlp.dim() });
        }
        Ok(Self { attention, mlp, step: LayerStep::Full })
    }

    pub fn scaled_velocity(attention: AttentionParams, mlp: MlpParams, scale: f64) -> Result<Self> {
        if mlp.skip() != 1.0 {
            return Err(Error::SkipNotUnit(mlp.skip()));
        }
        let mut layer = Self::new(attention, mlp)?;
        layer.step = LayerStep::ScaledVelocity(scale);
        Ok(layer)
    }

    pub fn dim(&self) -> usize {
        self.attention.dim()
    }

    /// Applies the layer at every point in `xs` against context `mu`.
    pub fn apply_many(&self, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        let prepared = self.attention.prepare(mu)?;
        xs.iter()
            .map(|x| match self.step {
                LayerStep::Full => mlp(&self.mlp, prepared.gamma(x.view())?.view()),
                LayerStep::ScaledVelocity(s) => {
                    let v = velocity_prepared(&prepared, &self.mlp, x.view())?;
                    Ok(&x.view() + &(v * s))
                }
            })
            .collect()
    }

    pub fn apply(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        Ok(self.apply_many(mu, &[x.to_owned()])?.remove(0))
    }
}

/// An ordered list of layers; an empty stack is the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    dim: usize,
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        for layer in &layers {
            if layer.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: layer.dim() });
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, layers: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Context seen by each layer: `ν₀ = canon(μ)`, `ν_{τ+1} = (layer_τ(ν_τ))_# ν_τ`.
    /// Returns `depth + 1` measures; the last one is `f_tran(μ)`.
    pub fn contexts(&self, mu: &DiscreteMeasure) -> Result<Vec<DiscreteMeasure>> {
        if mu.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if mu.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: mu.dim() });
        }
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        out.push(mu.canonicalize());
        for layer in &self.layers {
            let nu = out.last().expect("seeded with the input");
            let images = layer.apply_many(nu, nu.points())?;
            let mut it = images.into_iter();
            let next = push_forward(nu, |_| Ok(it.next().expect("one image per atom")))?;
            out.push(next);
        }
        Ok(out)
    }

    fn map_with_contexts(&self, contexts: &[DiscreteMeasure], xs: &[Point]) -> Result<Vec<Point>> {
        let mut ys = xs.to_vec();
        for (layer, nu) in self.layers.iter().zip(contexts) {
            ys = layer.apply_many(nu, &ys)?;
        }
        Ok(ys)
    }
}

/// `G_tran(μ, x)`.
pub fn forward_map(stack: &LayerStack, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
    if x.len() != stack.dim {
        return Err(Error::DimensionMismatch { expected: stack.dim, found: x.len() });
    }
    let contexts = stack.contexts(mu)?;
    Ok(stack.map_with_contexts(&contexts, &[x.to_owned()])?.remove(0))
}

/// `f_tran(μ) = G_tran(μ)_# μ`.
pub fn forward_measure(stack: &LayerStack, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let contexts = stack.contexts(mu)?;
    let images = stack.map_with_contexts(&contexts, mu.points())?;
    let mut it = images.into_iter();
    push_forward(mu, |_| Ok(it.next().expect("one image per atom")))
}

/// `yᵢ = G_tran(ι(seq), xᵢ)`, keeping the input order.
pub fn forward_tokens(stack: &LayerStack, seq: &TokenSequence) -> Result<TokenSequence> {
    if seq.dim() != stack.dim {
        return Err(Error::DimensionMismatch { expected: stack.dim, found: seq.dim() });
    }
    let mu = iota(seq)?;
    let contexts = stack.contexts(&mu)?;
    let ys = stack.map_with_contexts(&contexts, seq.tokens())?;
    let mut bounds = seq.bounds().clone();
    for y in &ys {
        bounds = bounds.including(y.view());
    }
    TokenSequence::new(ys, bounds)
}

impl InContextMap for LayerStack {
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        forward_map(self, mu, x)
    }
    fn eval_many(&self, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        let contexts = self.contexts(mu)?;
        self.map_with_contexts(&contexts, xs)
    }
}

/// A single layer as an in-context map.
impl InContextMap for Layer {
    fn in_dim(&self) -> usize {
        self.dim()
    }
    fn out_dim(&self) -> usize {
        self.dim()
    }
    fn eval(&self, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        self.apply(mu, x)
    }
    fn eval_many(&self, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        self.apply_many(mu, xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{Activation, AttentionHead, DenseLayer};
    use ndarray::array;

    fn small_layer(a: f64, b: f64) -> Layer {
        let head =
            AttentionHead { query: array![[a]], key: array![[b]], value: array![[0.5 * a - b]], output: array![[0.4]] };
        let att = AttentionParams::new(vec![head], 1).unwrap();
        let body = MlpParams::new(1, 1.0, vec![DenseLayer { weight: array![[b]], bias: array![a] }], Activation::Tanh)
            .unwrap();
        Layer::new(att, body).unwrap()
    }

    #[test]
    fn empty_and_trivial_stacks_are_identity() {
        let mu = DiscreteMeasure::on_line(&[-1.0, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(forward_map(&LayerStack::identity(1), &mu, array![0.3].view()).unwrap(), array![0.3]);
        let trivial = Layer::new(AttentionParams::zeros(1, 2, 1, 1), MlpParams::identity(1)).unwrap();
        let stack = LayerStack::new(1, vec![trivial]).unwrap();
        assert_eq!(forward_map(&stack, &mu, array![0.3].view()).unwrap(), array![0.3]);
        assert_eq!(forward_measure(&stack, &mu).unwrap(), mu.canonicalize());
    }

    #[test]
    fn two_layers_match_manual_composition() {
        let (l1, l2) = (small_layer(0.3, -0.2), small_layer(-0.45, 0.25));
        let stack = LayerStack::new(1, vec![l1.clone(), l2.clone()]).unwrap();
        let mu = DiscreteMeasure::on_line(&[-0.7, 1.1], &[0.5, 0.5]).unwrap();
        let x = array![0.2];

        let nu = l1.push(&mu).unwrap();
        let manual = l2.apply(&nu, l1.apply(&mu, x.view()).unwrap().view()).unwrap();
        assert_eq!(forward_map(&stack, &mu, x.view()).unwrap(), manual);
    }

    #[test]
    fn forward_tokens_examples() {
        let seq = TokenSequence::on_line(&[0.0, 1.0]).unwrap();
        assert_eq!(forward_tokens(&LayerStack::identity(1), &seq).unwrap(), seq);

        let stack = LayerStack::new(1, vec![small_layer(0.3, -0.2)]).unwrap();
        let seq = TokenSequence::on_line(&[0.0, 0.0, 1.0]).unwrap();
        let out = forward_tokens(&stack, &seq).unwrap();
        assert_eq!(out.tokens()[0], out.tokens()[1]);
        assert_ne!(out.tokens()[0], out.tokens()[2]);
    }

    #[test]
    fn dimension_errors() {
        let stack = LayerStack::new(1, vec![small_layer(0.3, -0.2)]).unwrap();
        let plane = DiscreteMeasure::in_default_box(vec![array![0.0, 0.0]], vec![1.0]).unwrap();
        assert!(matches!(forward_measure(&stack, &plane), Err(Error::DimensionMismatch { .. })));
    }
}
