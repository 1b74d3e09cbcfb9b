//! Exact 1-Wasserstein distances between discrete measures.
//!
//! Three routes are provided: the cumulative-distribution integral on the
//! line, an exact transportation simplex in any dimension, and the
//! mass-extended distance `W1(μ/s₁, ν/s₂) + |s₁ − s₂|` on positive measures.

use crate::error::{Error, Result};
use crate::measure::{euclidean_distance, DiscreteMeasure};

/// Absolute tolerance for "equal total mass".
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Atom-count cap for the transportation solver (per side).
pub const MATCHING_ATOM_CAP: usize = 200;

/// Reduced-cost tolerance for declaring a basis optimal.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// One entry of a coupling: `mass` moves from source atom `source` to target atom `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// An optimal coupling between the atoms of two measures, indexed by atom
/// position in the measures as passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flows: Vec<Flow>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self, n: usize) -> Vec<f64> {
        let mut rows = vec![0.0; n];
        for f in &self.flows {
            rows[f.source] += f.mass;
        }
        rows
    }

    pub fn column_sums(&self, m: usize) -> Vec<f64> {
        let mut cols = vec![0.0; m];
        for f in &self.flows {
            cols[f.target] += f.mass;
        }
        cols
    }
}

fn check_masses(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, f64)> {
    let (s1, s2) = (mu.total_mass(), nu.total_mass());
    if (s1 - s2).abs() > MASS_TOLERANCE {
        return Err(Error::MassMismatch { left: s1, right: s2 });
    }
    Ok((s1, s2))
}

/// `∫ |F_μ(t) − F_ν(t)| dt` for measures on the line.
pub fn w1_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(Error::DimensionNotOne(m.dim()));
        }
    }
    check_masses(mu, nu)?;

    // (position, signed mass); stable sort keeps equal breakpoints adjacent
    let mut events: Vec<(f64, f64)> =
        mu.atoms().map(|(p, a)| (p[0], a)).chain(nu.atoms().map(|(p, b)| (p[0], -b))).collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

/// Exact optimal coupling with Euclidean ground cost.
///
/// The target weights are rescaled by `s_μ / s_ν` (a relative change of at
/// most [`MASS_TOLERANCE`]) so the transportation problem is balanced.
pub fn w1_matching(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    let (s1, s2) = check_masses(mu, nu)?;
    for m in [mu, nu] {
        if m.len() > MATCHING_ATOM_CAP {
            return Err(Error::ProblemTooLarge { n: m.len(), cap: MATCHING_ATOM_CAP });
        }
    }
    let supply = mu.weights().to_vec();
    let demand: Vec<f64> = nu.weights().iter().map(|b| b * (s1 / s2)).collect();
    let (n, m) = (mu.len(), nu.len());
    let mut cost = vec![0.0; n * m];
    for (i, p) in mu.points().iter().enumerate() {
        for (j, q) in nu.points().iter().enumerate() {
            cost[i * m + j] = euclidean_distance(p.view(), q.view());
        }
    }
    let flows = TransportationSimplex::new(supply, demand, cost.clone()).solve();
    let plan_cost = flows.iter().map(|f| f.mass * cost[f.source * m + f.target]).sum();
    Ok(TransportPlan { flows, cost: plan_cost })
}

/// Normalized W1 (by the CDF formula on the line, by the simplex otherwise).
pub fn w1_normalized(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let (a, b) = (mu.normalized(), nu.normalized());
    if a.dim() == 1 && b.dim() == 1 {
        w1_1d(&a, &b)
    } else {
        Ok(w1_matching(&a, &b)?.cost)
    }
}

/// `W1(μ/s₁, ν/s₂) + |s₁ − s₂|`.
pub fn w1_extended(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(w1_normalized(mu, nu)? + (mu.total_mass() - nu.total_mass()).abs())
}

/// Balanced transportation problem solved by the primal network simplex on
/// the bipartite graph. The basis is a spanning tree of `n + m - 1` cells.
struct TransportationSimplex {
    n: usize,
    m: usize,
    cost: Vec<f64>,
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    in_basis: Vec<Option<usize>>,
    supply: Vec<f64>,
    demand: Vec<f64>,
}

/// Degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

impl TransportationSimplex {
    fn new(supply: Vec<f64>, demand: Vec<f64>, cost: Vec<f64>) -> Self {
        let (n, m) = (supply.len(), demand.len());
        Self {
            n,
            m,
            cost,
            basis: Vec::with_capacity(n + m - 1),
            flow: Vec::with_capacity(n + m - 1),
            in_basis: vec![None; n * m],
            supply,
            demand,
        }
    }

    /// North-west corner start; always yields exactly `n + m - 1` basic cells.
    fn initial_basis(&mut self) {
        let (mut s, mut d) = (self.supply.clone(), self.demand.clone());
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]);
            let q = if i == self.n - 1 && j == self.m - 1 { s[i].max(d[j]) } else { q };
            self.in_basis[i * self.m + j] = Some(self.basis.len());
            self.basis.push((i, j));
            self.flow.push(q.max(0.0));
            s[i] -= q;
            d[j] -= q;
            if i == self.n - 1 && j == self.m - 1 {
                break;
            }
            if j == self.m - 1 || (i < self.n - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    /// Tree adjacency over nodes `0..n` (rows) and `n..n+m` (columns); each
    /// entry is `(neighbour, basic cell index)`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push((self.n + j, k));
            adj[self.n + j].push((i, k));
        }
        adj
    }

    /// Dual potentials with `u_i + v_j = c_ij` on the basis and `u_0 = 0`.
    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> Vec<f64> {
        let mut pot = vec![f64::NAN; self.n + self.m];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = self.basis[k];
                    pot[next] = self.cost[i * self.m + j] - pot[node];
                    stack.push(next);
                }
            }
        }
        pot
    }

    /// Basic cells on the tree path from column node of `j` to row node `i`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let start = self.n + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.n + self.m];
        let mut seen = vec![false; self.n + self.m];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = i;
        while let Some((prev, k)) = parent[node] {
            cells.push(k);
            node = prev;
        }
        cells.reverse();
        cells
    }

    fn solve(mut self) -> Vec<Flow> {
        self.initial_basis();
        let max_cost = self.cost.iter().copied().fold(0.0, f64::max);
        let tol = PIVOT_TOLERANCE * max_cost.max(1.0);
        let mut degenerate = 0usize;
        let iteration_cap = 50 * (self.n + self.m) * (self.n + self.m) + 1000;

        for _ in 0..iteration_cap {
            let adj = self.adjacency();
            let pot = self.potentials(&adj);
            let bland = degenerate >= DEGENERATE_STREAK;

            let mut entering = None;
            let mut best = -tol;
            'scan: for i in 0..self.n {
                for j in 0..self.m {
                    if self.in_basis[i * self.m + j].is_some() {
                        continue;
                    }
                    let reduced = self.cost[i * self.m + j] - pot[i] - pot[self.n + j];
                    if reduced < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = reduced;
                    }
                }
            }
            let Some((i, j)) = entering else { break };

            // cycle: entering cell (+), then path cells from column j alternate (-, +, ...)
            let path = self.tree_path(&adj, i, j);
            let mut leaving: Option<usize> = None;
            let mut theta = f64::INFINITY;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let f = self.flow[k];
                    let better = f < theta || (f == theta && leaving.is_none_or(|l| self.basis[k] < self.basis[l]));
                    if better {
                        theta = f;
                        leaving = Some(k);
                    }
                }
            }
            let leaving = leaving.expect("cycle has a decreasing cell");
            degenerate = if theta <= 0.0 { degenerate + 1 } else { 0 };

            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[k] -= theta;
                } else {
                    self.flow[k] += theta;
                }
            }
            let (li, lj) = self.basis[leaving];
            self.in_basis[li * self.m + lj] = None;
            self.basis[leaving] = (i, j);
            self.flow[leaving] = theta;
            self.in_basis[i * self.m + j] = Some(leaving);
        }

        let mut flows: Vec<Flow> = self
            .basis
            .iter()
            .zip(self.flow.iter())
            .filter(|(_, &f)| f > 0.0)
            .map(|(&(source, target), &mass)| Flow { source, target, mass })
            .collect();
        flows.sort_by_key(|f| (f.source, f.target));
        flows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(xs: &[f64], ws: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::on_line(xs, ws).unwrap()
    }

    #[test]
    fn w1_1d_examples() {
        assert_eq!(w1_1d(&line(&[0.0], &[1.0]), &line(&[1.0], &[1.0])).unwrap(), 1.0);
        let mu = line(&[-1.0, 0.5, 2.0], &[0.2, 0.3, 0.5]);
        assert_eq!(w1_1d(&mu, &mu).unwrap(), 0.0);
        assert_eq!(w1_1d(&line(&[0.0, 2.0], &[0.5, 0.5]), &line(&[1.0], &[1.0])).unwrap(), 1.0);
    }

    #[test]
    fn w1_1d_errors() {
        let plane = DiscreteMeasure::in_default_box(vec![array![0.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(w1_1d(&plane, &plane).unwrap_err(), Error::DimensionNotOne(2));
        let err = w1_1d(&line(&[0.0], &[1.0]), &line(&[0.0], &[2.0])).unwrap_err();
        assert!(matches!(err, Error::MassMismatch { .. }));
    }

    #[test]
    fn w1_matching_examples() {
        let plan = w1_matching(&line(&[0.0, 2.0], &[0.5, 0.5]), &line(&[1.0, 3.0], &[0.5, 0.5])).unwrap();
        assert!((plan.cost - 1.0).abs() < 1e-15);
        assert_eq!(plan.flows.len(), 2);
        assert!(plan.flows.iter().all(|f| f.source == f.target));

        let mu = line(&[-1.0, 0.5, 2.0], &[0.2, 0.3, 0.5]);
        let plan = w1_matching(&mu, &mu).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert!(plan.flows.iter().all(|f| f.source == f.target));

        let plan = w1_matching(&line(&[0.0], &[1.0]), &line(&[1.0, -1.0], &[0.5, 0.5])).unwrap();
        assert!((plan.cost - 1.0).abs() < 1e-15);
        assert_eq!(plan.flows.len(), 2);
    }

    #[test]
    fn w1_matching_marginals() {
        let mu = line(&[-2.0, -0.5, 0.1, 1.5], &[0.1, 0.4, 0.3, 0.2]);
        let nu = line(&[-1.0, 0.0, 2.5], &[0.5, 0.25, 0.25]);
        let plan = w1_matching(&mu, &nu).unwrap();
        for (r, a) in plan.row_sums(4).iter().zip(mu.weights()) {
            assert!((r - a).abs() < 1e-10);
        }
        for (c, b) in plan.column_sums(3).iter().zip(nu.weights()) {
            assert!((c - b).abs() < 1e-10);
        }
        assert!((plan.cost - w1_1d(&mu, &nu).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn w1_matching_cap() {
        let xs: Vec<f64> = (0..201).map(|i| -2.0 + i as f64 * 0.01).collect();
        let mu = line(&xs, &vec![1.0 / 201.0; 201]);
        assert!(matches!(w1_matching(&mu, &mu), Err(Error::ProblemTooLarge { .. })));
    }

    #[test]
    fn w1_extended_examples() {
        let two = line(&[0.0], &[2.0]);
        assert_eq!(w1_extended(&two, &line(&[0.0], &[1.0])).unwrap(), 1.0);
        assert_eq!(w1_extended(&two, &two).unwrap(), 0.0);
        assert_eq!(w1_extended(&two, &line(&[1.0], &[1.0])).unwrap(), 2.0);
    }
}
