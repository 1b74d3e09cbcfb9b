//! The regular part of the derivative of a measure-to-measure map, and
//! recovery of the in-context map from a black-box `f`.
//!
//! For `f = G(μ)_# μ` and a test function that is constant near every atom of
//! `f(μ)`, the quotient `⟨ψ, f(μ + ε δ_x) − f(μ)⟩ / ε` only sees the new atom,
//! which sits at `G(μ + ε δ_x, x) → G(μ, x)`. The existing images move by
//! `O(ε)` and stay inside the flat patches, so their contribution cancels.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1};

use crate::attention::InContextMap;
use crate::error::{Error, Result};
use crate::measure::{euclidean_distance, push_forward, BoundingBox, DiscreteMeasure, Point, MERGE_TOLERANCE};
use crate::test_function::{TestFunction, MIN_PATCH_RADIUS};

/// Default finite-difference mass.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Upper bound on the patch radius.
pub const MAX_PATCH_RADIUS: f64 = 0.05;

/// Number of times `eps` may be halved while the displacement check fails.
pub const MAX_HALVINGS: usize = 12;

/// A map from discrete measures to discrete measures.
pub trait MeasureMap: Send + Sync {
    fn out_dim(&self) -> usize;
    fn apply(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure>;
}

/// `μ ↦ μ`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMeasureMap {
    pub dim: usize,
}

impl MeasureMap for IdentityMeasureMap {
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        Ok(mu.canonicalize())
    }
}

/// `μ ↦ g_# μ` for a context-free point map `g`.
pub struct PointPushForward<F> {
    pub out_dim: usize,
    pub map: F,
}

impl<F> MeasureMap for PointPushForward<F>
where
    F: Fn(ArrayView1<f64>) -> Point + Send + Sync,
{
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn apply(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        push_forward(mu, |x| Ok((self.map)(x)))
    }
}

/// `f_G(μ) = G(μ)_# μ` for an in-context map `G`.
pub struct InducedMeasureMap(pub Arc<dyn InContextMap>);

impl MeasureMap for InducedMeasureMap {
    fn out_dim(&self) -> usize {
        self.0.out_dim()
    }
    fn apply(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        self.0.push(mu)
    }
}

/// Tunables for the difference-quotient estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub eps: f64,
    pub max_halvings: usize,
    /// Overrides the automatic radius (still capped by the separation rules).
    pub patch_radius: Option<f64>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, max_halvings: MAX_HALVINGS, patch_radius: None }
    }
}

impl ProbeOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }
}

/// `f(μ)` and `f(μ + ε δ_x)` at a verified `ε`, with the patch geometry.
#[derive(Debug, Clone)]
pub struct Probe {
    pub base: DiscreteMeasure,
    pub perturbed: DiscreteMeasure,
    pub eps: f64,
    pub radius: f64,
    /// Largest distance an existing image moved.
    pub displacement: f64,
}

/// Splits the atoms of `f(μ + ε δ_x)` into carried-over images and the new
/// image(s) by mass: an atom with mass at most `1.5 ε` can only come from
/// the added point. Returns (displacement of carried atoms, distance of the
/// new images to `supp f(μ)` ignoring coincident ones).
fn classify(base: &DiscreteMeasure, perturbed: &DiscreteMeasure, eps: f64) -> (f64, f64) {
    let mut displacement: f64 = 0.0;
    let mut new_separation = f64::INFINITY;
    for (z, m) in perturbed.atoms() {
        let nearest =
            base.points().iter().map(|y| euclidean_distance(z.view(), y.view())).fold(f64::INFINITY, f64::min);
        if m <= 1.5 * eps {
            if nearest > MERGE_TOLERANCE {
                new_separation = new_separation.min(nearest);
            }
        } else {
            displacement = displacement.max(nearest);
        }
    }
    // every base atom must still be represented
    for y in base.points() {
        let nearest = perturbed
            .atoms()
            .filter(|(_, m)| *m > 1.5 * eps)
            .map(|(z, _)| euclidean_distance(z.view(), y.view()))
            .fold(f64::INFINITY, f64::min);
        displacement = displacement.max(nearest);
    }
    (displacement, new_separation)
}

fn min_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(euclidean_distance(points[i].view(), points[j].view()));
        }
    }
    best
}

/// Evaluates `f` at `μ` and `μ + ε δ_x`, halving `ε` until the existing
/// images move less than a quarter of the patch radius.
///
/// The patch radius is `min(¼ · separation of supp f(μ), 0.05)`, further
/// limited to half the distance from the new image to `supp f(μ)` so the
/// new atom is never inside a patch.
pub fn probe(f: &dyn MeasureMap, mu: &DiscreteMeasure, x: ArrayView1<f64>, opts: ProbeOptions) -> Result<Probe> {
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::InvalidParameters(format!("eps must be positive, got {}", opts.eps)));
    }
    let base = f.apply(mu)?;
    let separation = min_pairwise_distance(base.points());
    let mut radius_cap = (0.25 * separation).min(MAX_PATCH_RADIUS);
    if let Some(r) = opts.patch_radius {
        radius_cap = radius_cap.min(r);
    }

    let mut eps = opts.eps;
    let mut last = (f64::INFINITY, 0.0);
    for _ in 0..=opts.max_halvings {
        let perturbed = f.apply(&mu.with_added_atom(x, eps)?)?;
        let (displacement, new_separation) = classify(&base, &perturbed, eps);
        let radius = radius_cap.min(0.5 * new_separation);
        if radius < MIN_PATCH_RADIUS {
            return Err(Error::AnchorsTooClose { r_min: MIN_PATCH_RADIUS });
        }
        if displacement < 0.25 * radius {
            return Ok(Probe { base, perturbed, eps, radius, displacement });
        }
        last = (displacement, 0.25 * radius);
        eps *= 0.5;
    }
    Err(Error::DisplacementTooLarge { displacement: last.0, limit: last.1, eps: eps * 2.0 })
}

impl Probe {
    /// `⟨ψ, f(μ + ε δ_x) − f(μ)⟩ / ε` with `ψ` patched at `supp f(μ)`.
    pub fn quotient(&self, psi: &TestFunction) -> Result<f64> {
        let patched = psi.patched(self.base.points(), self.radius)?;
        let after = self.perturbed.integrate(|y| patched.value(y));
        let before = self.base.integrate(|y| patched.value(y));
        Ok((after - before) / self.eps)
    }
}

/// Result of [`regular_derivative`], with the `eps` that passed verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularEstimate {
    pub value: f64,
    pub eps: f64,
    pub radius: f64,
}

pub fn regular_derivative(
    f: &dyn MeasureMap,
    mu: &DiscreteMeasure,
    x: ArrayView1<f64>,
    psi: &TestFunction,
    eps: f64,
) -> Result<RegularEstimate> {
    regular_derivative_with(f, mu, x, psi, ProbeOptions::with_eps(eps))
}

pub fn regular_derivative_with(
    f: &dyn MeasureMap,
    mu: &DiscreteMeasure,
    x: ArrayView1<f64>,
    psi: &TestFunction,
    opts: ProbeOptions,
) -> Result<RegularEstimate> {
    let p = probe(f, mu, x, opts)?;
    Ok(RegularEstimate { value: p.quotient(psi)?, eps: p.eps, radius: p.radius })
}

/// Recovered `G(μ, x)` and the verified `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub value: Point,
    pub eps: f64,
}

/// Component `ℓ` is the regular derivative against the cutoff coordinate
/// `α π_ℓ`, where `α ≡ 1` on a box (padded by 1) covering both `f(μ)` and
/// `f(μ + ε δ_x)`.
pub fn extract_g(f: &dyn MeasureMap, mu: &DiscreteMeasure, x: ArrayView1<f64>, eps: f64) -> Result<Extracted> {
    let p = probe(f, mu, x, ProbeOptions::with_eps(eps))?;
    let cover: BoundingBox = p.base.bounds().union(p.perturbed.bounds()).padded(1.0);
    let value = (0..f.out_dim())
        .map(|l| p.quotient(&TestFunction::cutoff_coordinate(l, cover.clone())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Extracted { value: Array1::from(value), eps: p.eps })
}

/// `(ψ(g(μ_ε, x)), ⟨ψ∘g(μ_ε,·) − ψ∘g(μ,·), μ⟩ / ε)` with `μ_ε = μ + ε δ_x`.
pub fn split_reg_irreg(
    g: &dyn InContextMap,
    mu: &DiscreteMeasure,
    x: ArrayView1<f64>,
    psi: &TestFunction,
    eps: f64,
) -> Result<(f64, f64)> {
    let mu_eps = mu.with_added_atom(x, eps)?;
    let regular = psi.value(g.eval(&mu_eps, x)?.view());
    let after = g.eval_many(&mu_eps, mu.points())?;
    let before = g.eval_many(mu, mu.points())?;
    let irregular = mu
        .weights()
        .iter()
        .zip(after.iter().zip(before.iter()))
        .map(|(a, (ya, yb))| a * (psi.value(ya.view()) - psi.value(yb.view())))
        .sum::<f64>()
        / eps;
    Ok((regular, irregular))
}

/// `⟨ψ, f_g(μ + ε δ_x) − f_g(μ)⟩ / ε` with no patching.
pub fn raw_quotient(
    g: &dyn InContextMap,
    mu: &DiscreteMeasure,
    x: ArrayView1<f64>,
    psi: &TestFunction,
    eps: f64,
) -> Result<f64> {
    let after = g.push(&mu.with_added_atom(x, eps)?)?;
    let before = g.push(mu)?;
    Ok((after.integrate(|y| psi.value(y)) - before.integrate(|y| psi.value(y))) / eps)
}
