//! C¹ test functions with a Lipschitz bound, optionally patched to be locally
//! constant around a finite set of anchor points.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::measure::{euclidean_distance, BoundingBox, Point};

/// Smallest patch radius before [`TestFunction::patched`] gives up.
pub const MIN_PATCH_RADIUS: f64 = 1e-8;

/// A scalar C¹ function with its gradient.
pub trait ScalarField: Send + Sync {
    fn value(&self, y: ArrayView1<f64>) -> f64;
    fn gradient(&self, y: ArrayView1<f64>) -> Point;
}

/// `π_ℓ(y) = y_ℓ`.
#[derive(Debug, Clone, Copy)]
pub struct Coordinate {
    index: usize,
}

impl Coordinate {
    pub fn new(index: usize) -> Self {
        Self { index }
    }
}

impl ScalarField for Coordinate {
    fn value(&self, y: ArrayView1<f64>) -> f64 {
        y[self.index]
    }
    fn gradient(&self, y: ArrayView1<f64>) -> Point {
        let mut g = Array1::zeros(y.len());
        g[self.index] = 1.0;
        g
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _y: ArrayView1<f64>) -> f64 {
        self.0
    }
    fn gradient(&self, y: ArrayView1<f64>) -> Point {
        Array1::zeros(y.len())
    }
}

/// Quintic smoothstep `6u⁵ − 15u⁴ + 10u³` on `[0, 1]`, and its derivative.
fn quintic(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        let s = u * u * u * (u * (6.0 * u - 15.0) + 10.0);
        let ds = 30.0 * u * u * (u - 1.0) * (u - 1.0);
        (s, ds)
    }
}

/// `α(y) π_ℓ(y)` with `α ≡ 1` on `bounds`, decaying to 0 at distance 1 outside
/// through a quintic ramp in the Euclidean distance to the box.
#[derive(Debug, Clone)]
pub struct CutoffCoordinate {
    index: usize,
    bounds: BoundingBox,
}

impl CutoffCoordinate {
    pub fn new(index: usize, bounds: BoundingBox) -> Self {
        Self { index, bounds }
    }

    fn cutoff(&self, y: ArrayView1<f64>) -> (f64, Point) {
        let excess = self.bounds.excess(y);
        let dist = excess.iter().map(|e| e * e).sum::<f64>().sqrt();
        if dist == 0.0 {
            return (1.0, Array1::zeros(y.len()));
        }
        let (s, ds) = quintic(dist);
        (1.0 - s, excess * (-ds / dist))
    }
}

impl ScalarField for CutoffCoordinate {
    fn value(&self, y: ArrayView1<f64>) -> f64 {
        self.cutoff(y).0 * y[self.index]
    }
    fn gradient(&self, y: ArrayView1<f64>) -> Point {
        let (alpha, dalpha) = self.cutoff(y);
        let mut g = dalpha * y[self.index];
        g[self.index] += alpha;
        g
    }
}

/// `Σ cᵢ ψᵢ`.
pub struct LinearCombination {
    terms: Vec<(f64, Arc<dyn ScalarField>)>,
}

impl LinearCombination {
    pub fn new(terms: Vec<(f64, Arc<dyn ScalarField>)>) -> Self {
        Self { terms }
    }
}

impl ScalarField for LinearCombination {
    fn value(&self, y: ArrayView1<f64>) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.value(y)).sum()
    }
    fn gradient(&self, y: ArrayView1<f64>) -> Point {
        let mut g = Array1::zeros(y.len());
        for (c, f) in &self.terms {
            g.scaled_add(*c, &f.gradient(y));
        }
        g
    }
}

/// Wraps closures for value and gradient.
pub struct FnScalar<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> ScalarField for FnScalar<F, G>
where
    F: Fn(ArrayView1<f64>) -> f64 + Send + Sync,
    G: Fn(ArrayView1<f64>) -> Point + Send + Sync,
{
    fn value(&self, y: ArrayView1<f64>) -> f64 {
        (self.value)(y)
    }
    fn gradient(&self, y: ArrayView1<f64>) -> Point {
        (self.gradient)(y)
    }
}

/// Blend data that flattens a test function to its anchor value on the ball
/// of radius `r/2` around each anchor.
#[derive(Debug, Clone)]
pub struct Patch {
    anchors: Vec<Point>,
    anchor_values: Vec<f64>,
    radius: f64,
}

impl Patch {
    pub fn anchors(&self) -> &[Point] {
        &self.anchors
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// C¹ ramp in `ρ = |y − anchor|`: 0 on `[0, r/2]`, 1 on `[r, ∞)`, cubic smoothstep between.
fn ramp(rho: f64, r: f64) -> (f64, f64) {
    let u = (rho - 0.5 * r) / (0.5 * r);
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u) / (0.5 * r))
    }
}

/// A C¹ test function `ψ` with Lipschitz bound `η` and an optional patch.
#[derive(Clone)]
pub struct TestFunction {
    base: Arc<dyn ScalarField>,
    lipschitz: f64,
    patch: Option<Patch>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("lipschitz", &self.lipschitz).field("patch", &self.patch).finish()
    }
}

impl TestFunction {
    pub fn new<S: ScalarField + 'static>(base: S, lipschitz: f64) -> Self {
        Self { base: Arc::new(base), lipschitz, patch: None }
    }

    pub fn from_arc(base: Arc<dyn ScalarField>, lipschitz: f64) -> Self {
        Self { base, lipschitz, patch: None }
    }

    pub fn constant(_dim: usize, value: f64) -> Self {
        Self::new(Constant(value), 0.0)
    }

    /// The cutoff coordinate `α π_ℓ` for a box. Its Lipschitz bound is
    /// `1 + sup|∇α|·sup|y_ℓ|` over the support.
    pub fn cutoff_coordinate(index: usize, bounds: BoundingBox) -> Self {
        let reach = bounds.lo().iter().chain(bounds.hi().iter()).fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
        let lipschitz = 1.0 + 1.875 * reach;
        Self::new(CutoffCoordinate::new(index, bounds), lipschitz)
    }

    /// `a ψ₁ + b ψ₂` (patches of the inputs are dropped).
    pub fn combine(a: f64, first: &TestFunction, b: f64, second: &TestFunction) -> Self {
        let sum = LinearCombination::new(vec![(a, first.base.clone()), (b, second.base.clone())]);
        Self::new(sum, a.abs() * first.lipschitz + b.abs() * second.lipschitz)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn patch(&self) -> Option<&Patch> {
        self.patch.as_ref()
    }

    pub fn base_value(&self, y: ArrayView1<f64>) -> f64 {
        self.base.value(y)
    }

    pub fn value(&self, y: ArrayView1<f64>) -> f64 {
        let raw = self.base.value(y);
        let Some(patch) = &self.patch else { return raw };
        for (anchor, &anchor_value) in patch.anchors.iter().zip(&patch.anchor_values) {
            let rho = euclidean_distance(y, anchor.view());
            if rho < patch.radius {
                let (s, _) = ramp(rho, patch.radius);
                return anchor_value + s * (raw - anchor_value);
            }
        }
        raw
    }

    pub fn gradient(&self, y: ArrayView1<f64>) -> Point {
        let raw_grad = self.base.gradient(y);
        let Some(patch) = &self.patch else { return raw_grad };
        for (anchor, &anchor_value) in patch.anchors.iter().zip(&patch.anchor_values) {
            let rho = euclidean_distance(y, anchor.view());
            if rho < patch.radius {
                let (s, ds) = ramp(rho, patch.radius);
                let mut g = raw_grad * s;
                if ds != 0.0 {
                    let dir = (&y - &anchor.view()) / rho;
                    g.scaled_add(ds * (self.base.value(y) - anchor_value), &dir);
                }
                return g;
            }
        }
        raw_grad
    }

    /// `ψ_k`: constant `ψ(yⱼ)` on `B(yⱼ, r/2)`, equal to `ψ` outside `B(yⱼ, r)`.
    ///
    /// The radius is halved until it is below half the smallest distance
    /// between distinct anchors; anchors closer than the merge tolerance are
    /// treated as one.
    pub fn patched(&self, anchors: &[Point], r: f64) -> Result<Self> {
        if anchors.is_empty() {
            return Ok(self.clone());
        }
        let mut distinct: Vec<Point> = Vec::new();
        for a in anchors {
            if !distinct
                .iter()
                .any(|b| crate::measure::max_norm_distance(a.view(), b.view()) <= crate::measure::MERGE_TOLERANCE)
            {
                distinct.push(a.clone());
            }
        }
        let mut min_dist = f64::INFINITY;
        for i in 0..distinct.len() {
            for j in (i + 1)..distinct.len() {
                min_dist = min_dist.min(euclidean_distance(distinct[i].view(), distinct[j].view()));
            }
        }
        let mut radius = r;
        while radius >= 0.5 * min_dist {
            radius *= 0.5;
            if radius < MIN_PATCH_RADIUS {
                return Err(Error::AnchorsTooClose { r_min: MIN_PATCH_RADIUS });
            }
        }
        if radius < MIN_PATCH_RADIUS {
            return Err(Error::AnchorsTooClose { r_min: MIN_PATCH_RADIUS });
        }
        let anchor_values = distinct.iter().map(|a| self.base.value(a.view())).collect();
        Ok(Self {
            base: self.base.clone(),
            lipschitz: self.lipschitz,
            patch: Some(Patch { anchors: distinct, anchor_values, radius }),
        })
    }

    /// Largest sampled difference quotient `|ψ(a) − ψ(b)| / |a − b|`.
    pub fn sampled_lipschitz(&self, samples: &[Point]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                let d = euclidean_distance(samples[i].view(), samples[j].view());
                if d > 0.0 {
                    worst = worst.max((self.value(samples[i].view()) - self.value(samples[j].view())).abs() / d);
                }
            }
        }
        worst
    }
}

/// `build_patched_test`: patch `base` at `anchors` with radius `r`.
pub fn build_patched_test(base: &TestFunction, anchors: &[Point], r: f64) -> Result<TestFunction> {
    base.patched(anchors, r)
}
