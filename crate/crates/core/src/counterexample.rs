//! A W1-continuous, support-preserving map on `P([-3, 3])` whose in-context
//! representation cannot be continuous, plus a scanner that exhibits the jump.
//!
//! `f(μ) = (R_{a(μ)})_# μ` with `a(μ) = 1/κ(μ)` (or 0 when `κ(μ) = 0`) and
//! `R_a(x) = x + cos²(πx/2) cos(ax) / 10` on `(-1, 1)`, identity elsewhere.

use std::f64::consts::PI;

use ndarray::{Array1, ArrayView1};

use crate::derivative::{extract_g, MeasureMap};
use crate::error::{Error, Result};
use crate::measure::{push_forward, DiscreteMeasure};
use crate::transport::{w1_1d, MASS_TOLERANCE};

pub const HALF_WIDTH: f64 = 3.0;
pub const AMPLITUDE: f64 = 0.1;

/// `κ(μ) > KAPPA_FLOOR` selects the `1/κ` branch.
pub const KAPPA_FLOOR: f64 = 1e-14;

/// Atom of the reference measure `δ₂`.
pub const ANCHOR: f64 = 2.0;

fn check_point(x: f64) -> Result<()> {
    if !(-HALF_WIDTH..=HALF_WIDTH).contains(&x) {
        return Err(Error::OutOfDomain(format!("{x} outside [-3, 3]")));
    }
    Ok(())
}

fn check_line(mu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != 1 {
        return Err(Error::DimensionNotOne(mu.dim()));
    }
    mu.points().iter().try_for_each(|p| check_point(p[0]))
}

/// `R_a(x)`.
pub fn r_map(a: f64, x: f64) -> Result<f64> {
    check_point(x)?;
    if !a.is_finite() || a < 0.0 {
        return Err(Error::OutOfDomain(format!("frequency {a} must be finite and nonnegative")));
    }
    if x.abs() >= 1.0 {
        return Ok(x);
    }
    let c = (0.5 * PI * x).cos();
    Ok(x + AMPLITUDE * c * c * (a * x).cos())
}

/// Weight profile of `κ`: 1 on `|x| < 1`, `2 − |x|` on `1 ≤ |x| ≤ 2`, 0 beyond.
fn kappa_weight(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 1.0 {
        1.0
    } else if ax <= 2.0 {
        2.0 - ax
    } else {
        0.0
    }
}

/// `κ(μ) = ∫ w dμ`.
pub fn kappa(mu: &DiscreteMeasure) -> Result<f64> {
    check_line(mu)?;
    Ok(mu.atoms().map(|(p, a)| a * kappa_weight(p[0])).sum())
}

/// `a(μ)`.
pub fn frequency(mu: &DiscreteMeasure) -> Result<f64> {
    let k = kappa(mu)?;
    Ok(if k > KAPPA_FLOOR { 1.0 / k } else { 0.0 })
}

fn apply_unchecked_mass(mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let a = frequency(mu)?;
    push_forward(mu, |x| Ok(Array1::from_elem(1, r_map(a, x[0])?)))
}

/// `f(μ)` on probability measures.
pub fn f_counter(mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    check_line(mu)?;
    let mass = mu.total_mass();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::NotProbability(mass));
    }
    apply_unchecked_mass(mu)
}

/// The same formula on all finite positive measures, with `κ` taken as the
/// linear functional on the unnormalized measure. This is the extension used
/// when probing `f(μ + ε δ_x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CounterexampleMap;

impl MeasureMap for CounterexampleMap {
    fn out_dim(&self) -> usize {
        1
    }
    fn apply(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        apply_unchecked_mass(mu)
    }
}

/// `μ_ε = (1 − ε) δ₂ + ε δ_{√ε}`.
pub fn mu_eps(eps: f64) -> Result<DiscreteMeasure> {
    DiscreteMeasure::on_line(&[ANCHOR, eps.sqrt()], &[1.0 - eps, eps])
}

/// `R_{1/ε}(√ε) = √ε + cos²(π√ε/2) cos(1/√ε) / 10`.
pub fn closed_form_value(eps: f64) -> f64 {
    let s = eps.sqrt();
    let c = (0.5 * PI * s).cos();
    s + AMPLITUDE * c * c * (1.0 / s).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `ε_m = 1/(2πm)²`, where `cos(1/√ε) = +1`.
    Limsup,
    /// `ε'_m = 1/((2m+1)π)²`, where `cos(1/√ε) = −1`.
    Liminf,
}

impl Family {
    pub fn eps(self, m: usize) -> f64 {
        let denom = match self {
            Family::Limsup => 2.0 * PI * m as f64,
            Family::Liminf => (2 * m + 1) as f64 * PI,
        };
        1.0 / (denom * denom)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Limsup => "limsup",
            Family::Liminf => "liminf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub family: Family,
    pub m: usize,
    pub eps: f64,
    pub w1_to_delta2: f64,
    pub closed_form: f64,
    pub extracted: f64,
    /// Finite-difference mass that passed the displacement check.
    pub probe_eps: f64,
}

/// Rows for `m = 2..=m_max` in both families (limsup rows first).
pub fn discontinuity_scan(m_max: usize, probe_eps: f64) -> Result<Vec<ScanRow>> {
    if m_max < 2 {
        return Err(Error::InvalidParameters(format!("m_max must be at least 2, got {m_max}")));
    }
    let delta2 = DiscreteMeasure::on_line(&[ANCHOR], &[1.0])?;
    let mut rows = Vec::with_capacity(2 * (m_max - 1));
    for family in [Family::Limsup, Family::Liminf] {
        for m in 2..=m_max {
            let eps = family.eps(m);
            let mu = mu_eps(eps)?;
            let x = Array1::from_elem(1, eps.sqrt());
            let extracted = extract_g(&CounterexampleMap, &mu, x.view(), probe_eps)?;
            rows.push(ScanRow {
                family,
                m,
                eps,
                w1_to_delta2: w1_1d(&mu, &delta2)?,
                closed_form: closed_form_value(eps),
                extracted: extracted.value[0],
                probe_eps: extracted.eps,
            });
        }
    }
    Ok(rows)
}

/// `μ([-3/2, 3/2])`.
pub fn central_mass(mu: &DiscreteMeasure) -> f64 {
    mu.atoms().filter(|(p, _)| p[0].abs() <= 1.5).map(|(_, a)| a).sum()
}

/// Right-hand side of the continuity estimate
/// `W1(f(μ₁), f(μ₂)) ≤ 3 (μ₁(B) + μ₂(B)) + W1(μ₁, μ₂)`, `B = [-3/2, 3/2]`.
pub fn continuity_bound(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<f64> {
    Ok(3.0 * (central_mass(mu1) + central_mass(mu2)) + w1_1d(mu1, mu2)?)
}

/// Derivative `R'_a(x)`.
pub fn r_map_derivative(a: f64, x: ArrayView1<f64>) -> f64 {
    let x = x[0];
    if x.abs() >= 1.0 {
        return 1.0;
    }
    let (s, c) = (0.5 * PI * x).sin_cos();
    1.0 - AMPLITUDE * PI * c * s * (a * x).cos() - AMPLITUDE * a * c * c * (a * x).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_map_examples() {
        for a in [0.0, 1.0, 37.5] {
            assert_eq!(r_map(a, 2.0).unwrap(), 2.0);
            assert_eq!(r_map(a, 1.0).unwrap(), 1.0);
            assert_eq!(r_map(a, -1.0).unwrap(), -1.0);
        }
        let eps: f64 = 0.003;
        let s = eps.sqrt();
        let expected = s + 0.1 * (PI * s / 2.0).cos().powi(2) * (1.0 / s).cos();
        assert!((r_map(1.0 / eps, s).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(r_map(0.0, 3.5), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn r_map_derivative_matches_differences() {
        let a = 7.0;
        let h = 1e-6;
        for i in 0..40 {
            let x = -0.95 + i as f64 * 0.05;
            let fd = (r_map(a, x + h).unwrap() - r_map(a, x - h).unwrap()) / (2.0 * h);
            let exact = r_map_derivative(a, ndarray::array![x].view());
            assert!((fd - exact).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(&DiscreteMeasure::on_line(&[2.0], &[1.0]).unwrap()).unwrap(), 0.0);
        assert_eq!(kappa(&DiscreteMeasure::on_line(&[0.0], &[1.0]).unwrap()).unwrap(), 1.0);
        let eps = 0.01;
        assert!((kappa(&mu_eps(eps).unwrap()).unwrap() - eps).abs() < 1e-15);
        assert!((kappa(&DiscreteMeasure::on_line(&[-1.5], &[1.0]).unwrap()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f_counter_examples() {
        let d2 = DiscreteMeasure::on_line(&[2.0], &[1.0]).unwrap();
        assert_eq!(f_counter(&d2).unwrap(), d2);

        let eps = 0.004;
        let out = f_counter(&mu_eps(eps).unwrap()).unwrap();
        let img = r_map(1.0 / eps, eps.sqrt()).unwrap();
        assert_eq!(out.points().len(), 2);
        assert!((out.points()[0][0] - img).abs() < 1e-15);
        assert!((out.weights()[0] - eps).abs() < 1e-15);
        assert_eq!(out.points()[1][0], 2.0);

        let d0 = DiscreteMeasure::on_line(&[0.0], &[1.0]).unwrap();
        assert!((f_counter(&d0).unwrap().points()[0][0] - 0.1).abs() < 1e-15);

        let heavy = DiscreteMeasure::on_line(&[0.0], &[2.0]).unwrap();
        assert_eq!(f_counter(&heavy).unwrap_err(), Error::NotProbability(2.0));
    }

    #[test]
    fn scan_shape_and_values() {
        let rows = discontinuity_scan(10, 1e-6).unwrap();
        assert_eq!(rows.len(), 18);
        for row in &rows {
            assert!((row.extracted - row.closed_form).abs() < 1e-8, "{row:?}");
            assert!(row.w1_to_delta2 < 0.05);
        }
        // m = 5: √ε = 1/(10π), so the value is 1/(10π) + 0.1·cos²(1/20)
        let m5 = rows.iter().find(|r| r.family == Family::Limsup && r.m == 5).unwrap();
        let s = 1.0 / (10.0 * PI);
        assert!((m5.closed_form - (s + 0.1 * (0.05f64).cos().powi(2))).abs() < 1e-12);
        assert!(discontinuity_scan(1, 1e-6).is_err());
    }
}
