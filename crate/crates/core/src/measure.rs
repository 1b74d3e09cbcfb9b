//! Finite positive measures `Σ aᵢ δ_{xᵢ}` on a compact box, push-forwards, and
//! the identification of token sequences with uniform empirical measures.

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Max-norm distance under which two atoms are treated as the same point.
pub const MERGE_TOLERANCE: f64 = 1e-9;

/// Half-width of the default ambient box `[-3, 3]^d`.
pub const DEFAULT_HALF_WIDTH: f64 = 3.0;

pub type Point = Array1<f64>;

/// Axis-aligned box `[lo, hi]` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    lo: Point,
    hi: Point,
}

impl BoundingBox {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !l.is_finite() || l > h || !h.is_finite()) {
            return Err(Error::InvalidParameters("box corners must be finite with lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Self {
        Self { lo: Array1::from_elem(dim, -half), hi: Array1::from_elem(dim, half) }
    }

    pub fn default_for(dim: usize) -> Self {
        Self::cube(dim, DEFAULT_HALF_WIDTH)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn contains(&self, p: ArrayView1<f64>) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lo.iter().zip(self.hi.iter())).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Smallest box containing `self` and `p`.
    pub fn including(&self, p: ArrayView1<f64>) -> Self {
        let mut out = self.clone();
        for (k, &x) in p.iter().enumerate() {
            if x < out.lo[k] {
                out.lo[k] = x;
            }
            if x > out.hi[k] {
                out.hi[k] = x;
            }
        }
        out
    }

    pub fn union(&self, other: &BoundingBox) -> Self {
        self.including(other.lo.view()).including(other.hi.view())
    }

    pub fn padded(&self, margin: f64) -> Self {
        Self { lo: &self.lo - margin, hi: &self.hi + margin }
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance(&self, p: ArrayView1<f64>) -> f64 {
        self.excess(p).iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Signed per-coordinate excess `p - proj(p)`.
    pub fn excess(&self, p: ArrayView1<f64>) -> Point {
        Array1::from_iter(p.iter().enumerate().map(|(k, &x)| {
            if x < self.lo[k] {
                x - self.lo[k]
            } else if x > self.hi[k] {
                x - self.hi[k]
            } else {
                0.0
            }
        }))
    }

    /// Longest diagonal.
    pub fn diameter(&self) -> f64 {
        (&self.hi - &self.lo).iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

/// Lexicographic order on points; NaN compares equal so sorting never panics.
pub fn lex_cmp(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(ord) => return ord,
        }
    }
    a.len().cmp(&b.len())
}

pub fn max_norm_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn euclidean_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A finite positive measure `Σ aᵢ δ_{xᵢ}` with a declared ambient box.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<Point>,
    weights: Vec<f64>,
    bounds: BoundingBox,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>, bounds: BoundingBox) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch { points: points.len(), weights: weights.len() });
        }
        if points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::NonpositiveWeight { index, value });
            }
        }
        let dim = bounds.dim();
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            if !bounds.contains(p.view()) {
                return Err(Error::PointOutsideBox { index });
            }
        }
        Ok(Self { points, weights, bounds })
    }

    /// Builds a measure inside the default box `[-3,3]^d`.
    pub fn in_default_box(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).ok_or(Error::EmptyMeasure)?;
        Self::new(points, weights, BoundingBox::default_for(dim))
    }

    /// One-dimensional convenience constructor in the default box.
    pub fn on_line(xs: &[f64], weights: &[f64]) -> Result<Self> {
        Self::in_default_box(xs.iter().map(|&x| Array1::from_elem(1, x)).collect(), weights.to_vec())
    }

    pub fn dirac(point: Point, mass: f64) -> Result<Self> {
        Self::in_default_box(vec![point], vec![mass])
    }

    /// Same weights, atoms moved to `points`; the box grows to cover them.
    pub fn relocated(&self, points: Vec<Point>) -> Result<Self> {
        if points.len() != self.weights.len() {
            return Err(Error::LengthMismatch { points: points.len(), weights: self.weights.len() });
        }
        let mut bounds = self.bounds.clone();
        for (index, p) in points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::MapUndefinedAtAtom { index });
            }
            if p.len() != bounds.dim() {
                return Err(Error::DimensionMismatch { expected: bounds.dim(), found: p.len() });
            }
            bounds = bounds.including(p.view());
        }
        Ok(Self { points, weights: self.weights.clone(), bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bounds(&self) -> &BoundingBox {
        &self.bounds
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `∫ φ dμ`.
    pub fn integrate<F: Fn(ArrayView1<f64>) -> f64>(&self, phi: F) -> f64 {
        self.atoms().map(|(p, a)| a * phi(p.view())).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.points.clone(), self.weights.iter().map(|a| a * factor).collect(), self.bounds.clone())
    }

    /// The probability measure `μ / μ(Ω)`.
    pub fn normalized(&self) -> Self {
        let s = self.total_mass();
        Self {
            points: self.points.clone(),
            weights: self.weights.iter().map(|a| a / s).collect(),
            bounds: self.bounds.clone(),
        }
    }

    /// `μ + mass·δ_x`, canonicalized so that `x` merges with a coinciding atom.
    pub fn with_added_atom(&self, x: ArrayView1<f64>, mass: f64) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        let mut points = self.points.clone();
        points.push(x.to_owned());
        let mut weights = self.weights.clone();
        weights.push(mass);
        let bounds = self.bounds.including(x);
        Ok(Self::new(points, weights, bounds)?.canonicalize())
    }

    pub fn with_bounds(&self, bounds: BoundingBox) -> Result<Self> {
        Self::new(self.points.clone(), self.weights.clone(), bounds)
    }

    /// Merges atoms closer than [`MERGE_TOLERANCE`] (max norm) and sorts them
    /// lexicographically. A merged cluster sits at its lexicographically
    /// smallest member; its weight is summed in sorted order.
    pub fn canonicalize(&self) -> Self {
        let n = self.points.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            lex_cmp(self.points[i].view(), self.points[j].view())
                .then(self.weights[i].partial_cmp(&self.weights[j]).unwrap_or(Ordering::Equal))
        });

        // union-find over the sorted positions; clusters need not be contiguous in d > 1
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let (pa, pb) = (&self.points[order[a]], &self.points[order[b]]);
                if (pb[0] - pa[0]) > MERGE_TOLERANCE {
                    break;
                }
                if max_norm_distance(pa.view(), pb.view()) <= MERGE_TOLERANCE {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }

        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for a in 0..n {
            let root = find(&mut parent, a);
            if slot[root] == usize::MAX {
                slot[root] = points.len();
                points.push(self.points[order[root]].clone());
                weights.push(self.weights[order[a]]);
            } else {
                weights[slot[root]] += self.weights[order[a]];
            }
        }
        Self { points, weights, bounds: self.bounds.clone() }
    }

    pub fn is_canonical(&self) -> bool {
        self.canonicalize() == *self
    }

    /// Number of distinct atoms after merging.
    pub fn support_size(&self) -> usize {
        self.canonicalize().len()
    }
}

/// `Σ aᵢ δ_{map(xᵢ)}`, canonicalized. The output box is the input box grown to
/// cover the images (or just the images' hull when the dimension changes).
pub fn push_forward<F>(mu: &DiscreteMeasure, mut map: F) -> Result<DiscreteMeasure>
where
    F: FnMut(ArrayView1<f64>) -> Result<Point>,
{
    let mut images = Vec::with_capacity(mu.len());
    for (index, p) in mu.points().iter().enumerate() {
        let y = map(p.view())?;
        if y.is_empty() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::MapUndefinedAtAtom { index });
        }
        if let Some(first) = images.first() {
            let first: &Point = first;
            if first.len() != y.len() {
                return Err(Error::MapUndefinedAtAtom { index });
            }
        }
        images.push(y);
    }
    let out_dim = images[0].len();
    let mut bounds =
        if out_dim == mu.dim() { mu.bounds().clone() } else { BoundingBox::new(images[0].clone(), images[0].clone())? };
    for y in &images {
        bounds = bounds.including(y.view());
    }
    Ok(DiscreteMeasure::new(images, mu.weights().to_vec(), bounds)?.canonicalize())
}

/// An ordered token sequence `(x₁, …, xₙ)`; repeats allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: Vec<Point>,
    bounds: BoundingBox,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Point>, bounds: BoundingBox) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        for (index, t) in tokens.iter().enumerate() {
            if t.len() != bounds.dim() {
                return Err(Error::DimensionMismatch { expected: bounds.dim(), found: t.len() });
            }
            if !bounds.contains(t.view()) {
                return Err(Error::PointOutsideBox { index });
            }
        }
        Ok(Self { tokens, bounds })
    }

    pub fn in_default_box(tokens: Vec<Point>) -> Result<Self> {
        let dim = tokens.first().map(|p| p.len()).ok_or(Error::EmptySequence)?;
        Self::new(tokens, BoundingBox::default_for(dim))
    }

    pub fn on_line(xs: &[f64]) -> Result<Self> {
        Self::in_default_box(xs.iter().map(|&x| Array1::from_elem(1, x)).collect())
    }

    pub fn tokens(&self) -> &[Point] {
        &self.tokens
    }

    pub fn bounds(&self) -> &BoundingBox {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Same positions re-ordered by `perm` (`out[i] = self[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { tokens: perm.iter().map(|&i| self.tokens[i].clone()).collect(), bounds: self.bounds.clone() }
    }

    pub fn sorted(&self) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.sort_by(|a, b| lex_cmp(a.view(), b.view()));
        Self { tokens, bounds: self.bounds.clone() }
    }
}

/// `ι(x₁,…,xₙ) = Σ (1/n) δ_{xᵢ}`, canonicalized.
pub fn iota(seq: &TokenSequence) -> Result<DiscreteMeasure> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let w = 1.0 / seq.len() as f64;
    Ok(DiscreteMeasure::new(seq.tokens.clone(), vec![w; seq.len()], seq.bounds.clone())?.canonicalize())
}

/// Inverse of [`iota`] on measures whose weights are multiples of `1/n`.
/// Output tokens are in lexicographic order.
pub fn iota_inv(mu: &DiscreteMeasure, n: usize) -> Result<TokenSequence> {
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let mu = mu.canonicalize();
    let mut tokens = Vec::with_capacity(n);
    let mut total = 0usize;
    for (p, a) in mu.atoms() {
        let scaled = a * n as f64;
        let k = scaled.round();
        if k < 1.0 || (scaled - k).abs() > 1e-9 * n as f64 {
            return Err(Error::NotRationalGrid { weight: a, n });
        }
        let k = k as usize;
        total += k;
        tokens.extend(std::iter::repeat_n(p.clone(), k));
    }
    if total != n {
        return Err(Error::NotRationalGrid { weight: mu.total_mass(), n });
    }
    TokenSequence::new(tokens, mu.bounds().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(xs: &[f64], ws: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::on_line(xs, ws).unwrap()
    }

    #[test]
    fn constructs_single_atom_and_pair() {
        let d = line(&[0.0], &[1.0]);
        assert_eq!(d.total_mass(), 1.0);
        let pair = line(&[0.0, 2.0], &[0.5, 0.5]);
        assert_eq!(pair.len(), 2);
        assert_eq!(pair.total_mass(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(DiscreteMeasure::on_line(&[1.0], &[-1.0]), Err(Error::NonpositiveWeight { .. })));
        assert!(matches!(DiscreteMeasure::on_line(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(DiscreteMeasure::on_line(&[4.0], &[1.0]), Err(Error::PointOutsideBox { index: 0 })));
    }

    #[test]
    fn canonicalize_merges_and_sorts() {
        let m = line(&[0.0, 0.0], &[0.5, 0.5]).canonicalize();
        assert_eq!(m.points(), &[array![0.0]]);
        assert_eq!(m.weights(), &[1.0]);

        let m = line(&[2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0]).canonicalize();
        assert_eq!(m.points(), &[array![1.0], array![2.0]]);
        assert_eq!(m.weights(), &[2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(m.canonicalize(), m);
    }

    #[test]
    fn canonicalize_merges_within_tolerance_only() {
        let m = line(&[0.0, 5e-10, 2e-9], &[1.0, 1.0, 1.0]).canonicalize();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weights(), &[2.0, 1.0]);
    }

    #[test]
    fn canonicalize_finds_clusters_split_by_lex_order() {
        // (0, 2.5) sorts between the two nearly equal points in lexicographic order
        let pts = vec![array![0.0, 0.0], array![0.0, 2.5], array![1e-10, 0.0]];
        let m = DiscreteMeasure::in_default_box(pts, vec![1.0, 1.0, 1.0]).unwrap().canonicalize();
        assert_eq!(m.len(), 2);
        assert_eq!(m.points()[0], array![0.0, 0.0]);
        assert_eq!(m.weights(), &[2.0, 1.0]);
    }

    #[test]
    fn push_forward_examples() {
        let mu = line(&[-1.0, 0.5, 2.0], &[0.2, 0.3, 0.5]);
        assert_eq!(push_forward(&mu, |x| Ok(x.to_owned())).unwrap(), mu.canonicalize());

        let shifted = push_forward(&line(&[0.0], &[1.0]), |x| Ok(&x + 1.0)).unwrap();
        assert_eq!(shifted.points(), &[array![1.0]]);

        let squared = push_forward(&line(&[-1.0, 1.0], &[0.5, 0.5]), |x| Ok(x.mapv(|v| v * v))).unwrap();
        assert_eq!(squared.points(), &[array![1.0]]);
        assert_eq!(squared.weights(), &[1.0]);
    }

    #[test]
    fn push_forward_reports_undefined_atoms() {
        let mu = line(&[0.0, 1.0], &[0.5, 0.5]);
        let err = push_forward(&mu, |x| Ok(x.mapv(|v| 1.0 / v))).unwrap_err();
        assert_eq!(err, Error::MapUndefinedAtAtom { index: 0 });
    }

    #[test]
    fn push_forward_grows_box() {
        let mu = line(&[2.5], &[1.0]);
        let out = push_forward(&mu, |x| Ok(&x * 2.0)).unwrap();
        assert_eq!(out.points(), &[array![5.0]]);
        assert!(out.bounds().contains(array![5.0].view()));
    }

    #[test]
    fn iota_examples() {
        let m = iota(&TokenSequence::on_line(&[0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let m = iota(&TokenSequence::on_line(&[0.0, 0.0]).unwrap()).unwrap();
        assert_eq!((m.len(), m.weights()[0]), (1, 1.0));
        let m = iota(&TokenSequence::on_line(&[2.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(m.points(), &[array![0.0], array![1.0], array![2.0]]);
        assert_eq!(m.weights(), &[0.25, 0.5, 0.25]);
        assert_eq!(TokenSequence::on_line(&[]).unwrap_err(), Error::EmptySequence);
    }

    #[test]
    fn iota_inv_examples() {
        let s = iota_inv(&line(&[0.0], &[1.0]), 2).unwrap();
        assert_eq!(s.tokens(), &[array![0.0], array![0.0]]);
        let s = iota_inv(&line(&[1.0, 0.0], &[0.5, 0.5]), 2).unwrap();
        assert_eq!(s.tokens(), &[array![0.0], array![1.0]]);
        let err = iota_inv(&line(&[0.0, 1.0], &[0.25, 0.75]), 3).unwrap_err();
        assert!(matches!(err, Error::NotRationalGrid { .. }));
    }
}
