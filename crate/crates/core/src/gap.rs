//! The minimal subset-sum gap of a discrete measure and the dense perturbation
//! that moves a measure into the class with pairwise-distinct subset sums.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::transport::w1_extended;

/// Largest atom count accepted by [`gap`].
pub const GAP_ATOM_CAP: usize = 20;

/// Draw budget for [`make_dif`].
pub const MAKE_DIF_RETRIES: usize = 1000;

/// A subset-sum difference at or below `DIF_THRESHOLD · μ(Ω)` is treated as a tie.
pub const DIF_THRESHOLD: f64 = 1e-12;

/// Both readings of the subset-sum gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// `min |Σ_J a − Σ_K a|` over disjoint `J ≠ ∅`, `K` possibly empty.
    pub value: f64,
    /// Same minimum restricted to `K ≠ ∅`; `+∞` for a single atom, where no
    /// such pair exists.
    pub distinct: f64,
}

impl GapReport {
    /// Membership in the class of measures whose disjoint subset sums never tie.
    pub fn is_dif(&self, total_mass: f64) -> bool {
        self.distinct > DIF_THRESHOLD * total_mass
    }
}

/// Signed subset sums `Σ sᵢ aᵢ`, `sᵢ ∈ {-1,0,1}`, bucketed by whether any
/// `+1` (bit 0) or `-1` (bit 1) was used.
fn signed_sums(weights: &[f64]) -> [Vec<f64>; 4] {
    let mut buckets: [Vec<f64>; 4] = Default::default();
    buckets[0].push(0.0);
    for &a in weights {
        let prev = buckets.clone();
        for (class, sums) in prev.iter().enumerate() {
            for &s in sums {
                buckets[class | 1].push(s + a);
                buckets[class | 2].push(s - a);
            }
        }
    }
    buckets
}

/// `min |x + y|` over `x ∈ left`, `y ∈ right_sorted`.
fn closest_pair(left: &[f64], right_sorted: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    if right_sorted.is_empty() {
        return best;
    }
    for &x in left {
        let target = -x;
        let idx = right_sorted.partition_point(|&y| y < target);
        if idx < right_sorted.len() {
            best = best.min((x + right_sorted[idx]).abs());
        }
        if idx > 0 {
            best = best.min((x + right_sorted[idx - 1]).abs());
        }
    }
    best
}

/// Computes both gap readings by meet-in-the-middle over the two halves of
/// the atom list.
pub fn gap(mu: &DiscreteMeasure) -> Result<GapReport> {
    gap_of_weights(mu.weights())
}

pub fn gap_of_weights(weights: &[f64]) -> Result<GapReport> {
    let n = weights.len();
    if n > GAP_ATOM_CAP {
        return Err(Error::SupportTooLarge { n, cap: GAP_ATOM_CAP });
    }
    let (lw, rw) = weights.split_at(n / 2);
    let left = signed_sums(lw);
    let mut right = signed_sums(rw);
    for bucket in right.iter_mut() {
        bucket.sort_by(|a, b| a.total_cmp(b));
    }

    let mut value = f64::INFINITY;
    let mut distinct = f64::INFINITY;
    for (lc, lsums) in left.iter().enumerate() {
        for (rc, rsums) in right.iter().enumerate() {
            let class = lc | rc;
            if class == 0 {
                continue;
            }
            let best = closest_pair(lsums, rsums);
            value = value.min(best);
            if class == 3 {
                distinct = distinct.min(best);
            }
        }
    }
    Ok(GapReport { value, distinct })
}

/// Perturbs the weights of `mu` so that no two disjoint subset sums tie, keeping
/// the atoms fixed and the extended W1 change below `eps`.
///
/// Perturbations are drawn uniformly from `(-δ, δ)` with
/// `δ = eps / (n (1 + diam/s))`, which bounds both the mass change and the
/// normalized transport cost by `eps`. Measures already in the class are
/// returned unchanged.
pub fn make_dif(mu: &DiscreteMeasure, eps: f64, seed: u64) -> Result<DiscreteMeasure> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameters(format!("eps must be positive, got {eps}")));
    }
    let mu = mu.canonicalize();
    let n = mu.len();
    let mass = mu.total_mass();
    if gap(&mu)?.is_dif(mass) {
        return Ok(mu);
    }
    let diameter = mu.bounds().diameter();
    let min_weight = mu.weights().iter().copied().fold(f64::INFINITY, f64::min);
    let half_width = (eps / (n as f64 * (1.0 + diameter / mass))).min(0.5 * min_weight);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAKE_DIF_RETRIES {
        let weights: Vec<f64> = mu.weights().iter().map(|&a| a + rng.gen_range(-half_width..half_width)).collect();
        let candidate = DiscreteMeasure::new(mu.points().to_vec(), weights, mu.bounds().clone())?;
        if !gap(&candidate)?.is_dif(candidate.total_mass()) {
            continue;
        }
        if w1_extended(&mu, &candidate)? < eps {
            return Ok(candidate);
        }
    }
    Err(Error::ExhaustedRetries { attempts: MAKE_DIF_RETRIES })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct enumeration over all `3ⁿ` sign patterns.
    fn brute_gap(weights: &[f64]) -> (f64, f64) {
        let n = weights.len();
        let mut value = f64::INFINITY;
        let mut distinct = f64::INFINITY;
        let total = 3usize.pow(n as u32);
        for code in 1..total {
            let (mut c, mut sum, mut pos, mut neg) = (code, 0.0, false, false);
            for &a in weights {
                match c % 3 {
                    1 => {
                        sum += a;
                        pos = true;
                    }
                    2 => {
                        sum -= a;
                        neg = true;
                    }
                    _ => {}
                }
                c /= 3;
            }
            value = value.min(sum.abs());
            if pos && neg {
                distinct = distinct.min(sum.abs());
            }
        }
        (value, distinct)
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap_of_weights(&[1.0]).unwrap().value, 1.0);
        assert_eq!(gap_of_weights(&[1.0]).unwrap().distinct, f64::INFINITY);
        assert_eq!(gap_of_weights(&[1.0, 1.0]).unwrap().value, 0.0);
        let g = gap_of_weights(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!((g.value, g.distinct), brute_gap(&[1.0, 2.0, 4.0]));
        assert_eq!(g.value, 1.0);
    }

    #[test]
    fn gap_cap() {
        let w = vec![1.0; 21];
        assert_eq!(gap_of_weights(&w).unwrap_err(), Error::SupportTooLarge { n: 21, cap: 20 });
    }

    #[test]
    fn gap_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=12 {
            for _ in 0..6 {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                let fast = gap_of_weights(&w).unwrap();
                let (value, distinct) = brute_gap(&w);
                assert!((fast.value - value).abs() <= 1e-15, "n={n}");
                assert!(fast.distinct == distinct || (fast.distinct - distinct).abs() <= 1e-15, "n={n}");
            }
        }
    }

    #[test]
    fn make_dif_examples() {
        let mu = DiscreteMeasure::on_line(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let out = make_dif(&mu, 0.01, 3).unwrap();
        assert!(gap(&out).unwrap().distinct > 0.0);
        for &w in out.weights() {
            assert!((w - 0.5).abs() < 0.005);
        }
        assert!(w1_extended(&mu, &out).unwrap() < 0.01);

        let good = DiscreteMeasure::on_line(&[-1.0, 0.0, 1.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(make_dif(&good, 0.01, 0).unwrap(), good);

        let single = DiscreteMeasure::on_line(&[0.3], &[0.7]).unwrap();
        assert_eq!(make_dif(&single, 1e-3, 9).unwrap(), single);
    }

    #[test]
    fn make_dif_is_deterministic() {
        let mu = DiscreteMeasure::on_line(&[-2.0, 0.0, 1.0, 2.0], &[0.25; 4]).unwrap();
        assert_eq!(make_dif(&mu, 0.05, 42).unwrap(), make_dif(&mu, 0.05, 42).unwrap());
    }
}
