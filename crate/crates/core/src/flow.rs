//! Interacting-particle flows `ẋᵢ = v(t, μ_t, xᵢ)` on `[0, 1]`, the
//! characteristic map of the flow, the weak-form transport residual, and the
//! comparison between finite-depth stacks and their continuum limit.

use ndarray::ArrayView1;

use crate::attention::{velocity_prepared, AttentionParams, MlpParams};
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Point};
use crate::stack::{forward_measure, Layer, LayerStack};
use crate::test_function::TestFunction;
use crate::transport::w1_matching;

/// Steps per unit time used by [`characteristic_map`].
pub const CHARACTERISTIC_STEPS: usize = 256;

/// A velocity field `v(t, μ, x)`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point>;

    /// Evaluates at several points against one context.
    fn eval_many(&self, t: f64, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        xs.iter().map(|x| self.eval(t, mu, x.view())).collect()
    }
}

impl<V: VelocityField + ?Sized> VelocityField for &V {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        (**self).eval(t, mu, x)
    }
    fn eval_many(&self, t: f64, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        (**self).eval_many(t, mu, xs)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl VelocityField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, _mu: &DiscreteMeasure, _x: ArrayView1<f64>) -> Result<Point> {
        Ok(Point::zeros(self.dim))
    }
}

/// A velocity field given by a closure.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(f64, &DiscreteMeasure, ArrayView1<f64>) -> Point + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        Ok((self.f)(t, mu, x))
    }
}

/// The time-independent field `𝒱(μ, x) = Att(μ, x) + H(x + Att(μ, x))`.
#[derive(Debug, Clone)]
pub struct AttentionVelocity {
    pub attention: AttentionParams,
    pub mlp: MlpParams,
}

impl AttentionVelocity {
    pub fn new(attention: AttentionParams, mlp: MlpParams) -> Result<Self> {
        if mlp.skip() != 1.0 {
            return Err(Error::SkipNotUnit(mlp.skip()));
        }
        if attention.dim() != mlp.dim() {
            return Err(Error::DimensionMismatch { expected: attention.dim(), found: mlp.dim() });
        }
        Ok(Self { attention, mlp })
    }
}

impl VelocityField for AttentionVelocity {
    fn dim(&self) -> usize {
        self.attention.dim()
    }
    fn eval(&self, t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        Ok(self.eval_many(t, mu, &[x.to_owned()])?.remove(0))
    }
    fn eval_many(&self, _t: f64, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        let prepared = self.attention.prepare(mu)?;
        xs.iter().map(|x| velocity_prepared(&prepared, &self.mlp, x.view())).collect()
    }
}

/// Piecewise-constant-in-time field built from a stack: on `[τ/L, (τ+1)/L)`
/// the velocity of layer `τ` is used.
pub struct StackVelocity {
    fields: Vec<AttentionVelocity>,
    dim: usize,
}

impl StackVelocity {
    pub fn new(stack: &LayerStack) -> Result<Self> {
        let fields = stack
            .layers()
            .iter()
            .map(|l| AttentionVelocity::new(l.attention.clone(), l.mlp.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fields, dim: stack.dim() })
    }
}

impl VelocityField for StackVelocity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        Ok(self.eval_many(t, mu, &[x.to_owned()])?.remove(0))
    }
    fn eval_many(&self, t: f64, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        if self.fields.is_empty() {
            return Ok(vec![Point::zeros(self.dim); xs.len()]);
        }
        let l = self.fields.len();
        let idx = ((t * l as f64).floor().max(0.0) as usize).min(l - 1);
        self.fields[idx].eval_many(t, mu, xs)
    }
}

/// `s · v`.
pub struct ScaledField<V> {
    pub inner: V,
    pub scale: f64,
}

impl<V: VelocityField> VelocityField for ScaledField<V> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>) -> Result<Point> {
        Ok(self.inner.eval(t, mu, x)? * self.scale)
    }
    fn eval_many(&self, t: f64, mu: &DiscreteMeasure, xs: &[Point]) -> Result<Vec<Point>> {
        Ok(self.inner.eval_many(t, mu, xs)?.into_iter().map(|v| v * self.scale).collect())
    }
}

/// Particle positions on a time grid; weights never change.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DiscreteMeasure>,
}

impl Trajectory {
    pub fn last(&self) -> &DiscreteMeasure {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

fn axpy(xs: &[Point], h: f64, ks: &[Point]) -> Vec<Point> {
    xs.iter().zip(ks).map(|(x, k)| x + &(k * h)).collect()
}

/// Velocity at all particles and tracers, with the context built from the
/// particle positions only.
fn stage(
    v: &dyn VelocityField,
    t: f64,
    template: &DiscreteMeasure,
    particles: &[Point],
    tracers: &[Point],
    step: usize,
) -> Result<(Vec<Point>, Vec<Point>)> {
    let mu = template.relocated(particles.to_vec()).map_err(|_| Error::NonFiniteState { step })?;
    let mut all = particles.to_vec();
    all.extend_from_slice(tracers);
    let mut ks = v.eval_many(t, &mu, &all)?;
    let tail = ks.split_off(particles.len());
    Ok((ks, tail))
}

/// Integrates the coupled particle system on `[0, t_end]` with `steps` uniform
/// steps, carrying passive tracer points that feel the particle measure but do
/// not contribute to it.
fn integrate(
    v: &dyn VelocityField,
    mu0: &DiscreteMeasure,
    tracers: &[Point],
    t_end: f64,
    steps: usize,
    scheme: Integrator,
) -> Result<(Trajectory, Vec<Point>)> {
    if steps == 0 {
        return Err(Error::InvalidParameters("step count must be at least 1".into()));
    }
    if v.dim() != mu0.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: mu0.dim() });
    }
    let h = t_end / steps as f64;
    let mut xs: Vec<Point> = mu0.points().to_vec();
    let mut ys: Vec<Point> = tracers.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![mu0.clone()];

    for step in 0..steps {
        let t = step as f64 * h;
        match scheme {
            Integrator::Euler => {
                let (kx, ky) = stage(v, t, mu0, &xs, &ys, step)?;
                xs = axpy(&xs, h, &kx);
                ys = axpy(&ys, h, &ky);
            }
            Integrator::Rk4 => {
                let (k1x, k1y) = stage(v, t, mu0, &xs, &ys, step)?;
                let (k2x, k2y) =
                    stage(v, t + 0.5 * h, mu0, &axpy(&xs, 0.5 * h, &k1x), &axpy(&ys, 0.5 * h, &k1y), step)?;
                let (k3x, k3y) =
                    stage(v, t + 0.5 * h, mu0, &axpy(&xs, 0.5 * h, &k2x), &axpy(&ys, 0.5 * h, &k2y), step)?;
                let (k4x, k4y) = stage(v, t + h, mu0, &axpy(&xs, h, &k3x), &axpy(&ys, h, &k3y), step)?;
                let combine = |x: &Point, a: &Point, b: &Point, c: &Point, d: &Point| {
                    x + &((a + &(b * 2.0) + &(c * 2.0) + d) * (h / 6.0))
                };
                xs = (0..xs.len()).map(|i| combine(&xs[i], &k1x[i], &k2x[i], &k3x[i], &k4x[i])).collect();
                ys = (0..ys.len()).map(|i| combine(&ys[i], &k1y[i], &k2y[i], &k3y[i], &k4y[i])).collect();
            }
        }
        if xs.iter().chain(ys.iter()).any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFiniteState { step: step + 1 });
        }
        times.push(if step + 1 == steps { t_end } else { (step + 1) as f64 * h });
        states.push(mu0.relocated(xs.clone())?);
    }
    Ok((Trajectory { times, states }, ys))
}

/// `t_steps` explicit Euler steps of size `1/t_steps` on `[0, 1]`.
pub fn euler_flow(v: &dyn VelocityField, mu0: &DiscreteMeasure, t_steps: usize) -> Result<Trajectory> {
    Ok(integrate(v, mu0, &[], 1.0, t_steps, Integrator::Euler)?.0)
}

/// Classical RK4 on `[0, 1]`; every stage rebuilds the empirical measure.
pub fn rk4_flow(v: &dyn VelocityField, mu0: &DiscreteMeasure, steps: usize) -> Result<Trajectory> {
    Ok(integrate(v, mu0, &[], 1.0, steps, Integrator::Rk4)?.0)
}

/// `G_t(μ₀, x)` with the default resolution of [`CHARACTERISTIC_STEPS`] per unit time.
pub fn characteristic_map(v: &dyn VelocityField, mu0: &DiscreteMeasure, x: ArrayView1<f64>, t: f64) -> Result<Point> {
    let steps = ((t * CHARACTERISTIC_STEPS as f64).ceil() as usize).max(1);
    characteristic_map_with_steps(v, mu0, x, t, steps)
}

/// `G_t(μ₀, x)`: RK4 for the tracer `x` driven by the particle flow of `μ₀`,
/// both advanced together on the same grid.
pub fn characteristic_map_with_steps(
    v: &dyn VelocityField,
    mu0: &DiscreteMeasure,
    x: ArrayView1<f64>,
    t: f64,
    steps: usize,
) -> Result<Point> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameters(format!("time {t} outside [0, 1]")));
    }
    if x.len() != mu0.dim() {
        return Err(Error::DimensionMismatch { expected: mu0.dim(), found: x.len() });
    }
    if t == 0.0 {
        return Ok(x.to_owned());
    }
    let (_, mut tracers) = integrate(v, mu0, &[x.to_owned()], t, steps, Integrator::Rk4)?;
    Ok(tracers.remove(0))
}

/// `max_k | D_t⟨φ, μ_t⟩ − ⟨∇φ · v(t, μ_t, ·), μ_t⟩ |` over interior grid
/// times, with a central difference in time.
pub fn weak_residual(traj: &Trajectory, v: &dyn VelocityField, phi: &TestFunction) -> Result<f64> {
    let n = traj.times.len();
    if n < 3 || traj.states.len() != n {
        return Err(Error::TooFewTimePoints(n));
    }
    let pairing: Vec<f64> = traj.states.iter().map(|mu| mu.integrate(|y| phi.value(y))).collect();
    let mut worst: f64 = 0.0;
    for k in 1..n - 1 {
        let mu = &traj.states[k];
        let dt = traj.times[k + 1] - traj.times[k - 1];
        let lhs = (pairing[k + 1] - pairing[k - 1]) / dt;
        let vs = v.eval_many(traj.times[k], mu, mu.points())?;
        let rhs: f64 = mu.atoms().zip(vs.iter()).map(|((p, a), vel)| a * phi.gradient(p.view()).dot(vel)).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// A fixed attention + MLP velocity `𝒱` together with its `T`-layer
/// discretizations `x ↦ x + 𝒱(μ, x)/T`.
#[derive(Debug, Clone)]
pub struct DepthFamily {
    base: AttentionVelocity,
}

impl DepthFamily {
    pub fn new(attention: AttentionParams, mlp: MlpParams) -> Result<Self> {
        Ok(Self { base: AttentionVelocity::new(attention, mlp)? })
    }

    pub fn velocity(&self) -> &AttentionVelocity {
        &self.base
    }

    pub fn stack(&self, depth: usize) -> Result<LayerStack> {
        let scale = 1.0 / depth as f64;
        let layer = Layer::scaled_velocity(self.base.attention.clone(), self.base.mlp.clone(), scale)?;
        LayerStack::new(self.base.attention.dim(), vec![layer; depth])
    }
}

/// W1 between the output of the `T`-layer stack and an RK4 reference with `4T` steps.
pub fn depth_limit_error(family: &DepthFamily, mu0: &DiscreteMeasure, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::InvalidParameters("depth must be at least 1".into()));
    }
    let discrete = forward_measure(&family.stack(depth)?, mu0)?;
    let reference = rk4_flow(family.velocity(), mu0, 4 * depth)?;
    Ok(w1_matching(&discrete, reference.last())?.cost)
}
