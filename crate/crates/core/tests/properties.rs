use std::sync::Arc;

use approx::assert_abs_diff_eq;
use incontext::attention::{
    attention, compose_diamond, Activation, AttentionHead, AttentionParams, DenseLayer, GammaMap, InContextMap, MlpMap,
    MlpParams,
};
use incontext::flow::{rk4_flow, FnField};
use incontext::gap::gap_of_weights;
use incontext::transport::{w1_1d, w1_matching};
use incontext::{iota, iota_inv, push_forward, DiscreteMeasure, Point, TokenSequence};
use ndarray::{Array1, Array2, ArrayView1};
use proptest::prelude::*;

fn coords(dim: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.5f64..2.5, dim), 1..=max_len)
}

fn measure(dim: usize, max_len: usize) -> impl Strategy<Value = DiscreteMeasure> {
    coords(dim, max_len).prop_flat_map(move |pts| {
        let n = pts.len();
        prop::collection::vec(0.05f64..1.0, n).prop_map(move |w| {
            let points = pts.iter().map(|p| Array1::from(p.clone())).collect();
            DiscreteMeasure::in_default_box(points, w).unwrap()
        })
    })
}

fn with_mass(mu: &DiscreteMeasure, mass: f64) -> DiscreteMeasure {
    mu.scaled(mass / mu.total_mass()).unwrap()
}

fn matrix(rows: usize, cols: usize, seed: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| (seed + 1.3 * i as f64 + 0.7 * j as f64).sin() * 0.6)
}

fn attention_params(seed: f64) -> AttentionParams {
    let head = |s: f64| AttentionHead {
        query: matrix(2, 2, s),
        key: matrix(2, 2, s + 1.0),
        value: matrix(2, 2, s + 2.0),
        output: matrix(2, 2, s + 3.0),
    };
    AttentionParams::new(vec![head(seed), head(seed + 10.0)], 2).unwrap()
}

fn mlp_params(seed: f64) -> MlpParams {
    let layer = DenseLayer { weight: matrix(2, 2, seed), bias: Array1::from(vec![0.1, -0.2]) };
    MlpParams::new(2, 1.0, vec![layer], Activation::Sigmoid).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonicalize_is_idempotent_and_keeps_mass(mu in measure(2, 8)) {
        let c = mu.canonicalize();
        prop_assert!(c.is_canonical());
        prop_assert_eq!(c.canonicalize(), c.clone());
        assert_abs_diff_eq!(c.total_mass(), mu.total_mass(), epsilon = 1e-12);
    }

    #[test]
    fn push_forward_keeps_mass(mu in measure(2, 8), shift in -1.0f64..1.0) {
        let image = push_forward(&mu, |x| Ok(x.mapv(|v| (v * shift).sin()))).unwrap();
        assert_abs_diff_eq!(image.total_mass(), mu.total_mass(), epsilon = 1e-12);
        prop_assert!(image.support_size() <= mu.support_size());
    }

    #[test]
    fn iota_round_trip(pts in coords(2, 6)) {
        let seq = TokenSequence::in_default_box(pts.into_iter().map(Array1::from).collect()).unwrap();
        let back = iota_inv(&iota(&seq).unwrap(), seq.len()).unwrap();
        let sorted = seq.sorted();
        prop_assert_eq!(back.tokens(), sorted.tokens());
    }

    #[test]
    fn w1_is_a_metric(a in measure(2, 5), b in measure(2, 5), c in measure(2, 5)) {
        let (a, b, c) = (with_mass(&a, 1.0), with_mass(&b, 1.0), with_mass(&c, 1.0));
        let ab = w1_matching(&a, &b).unwrap().cost;
        let ba = w1_matching(&b, &a).unwrap().cost;
        let bc = w1_matching(&b, &c).unwrap().cost;
        let ac = w1_matching(&a, &c).unwrap().cost;
        prop_assert!(ab >= 0.0);
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-10);
        prop_assert!(ac <= ab + bc + 1e-10);
        assert_abs_diff_eq!(w1_matching(&a, &a).unwrap().cost, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matching_plan_has_the_right_marginals(a in measure(2, 6), b in measure(2, 6)) {
        let (a, b) = (with_mass(&a, 2.0), with_mass(&b, 2.0));
        let plan = w1_matching(&a, &b).unwrap();
        for (s, w) in plan.row_sums(a.len()).iter().zip(a.weights()) {
            assert_abs_diff_eq!(*s, *w, epsilon = 1e-10);
        }
        for (s, w) in plan.column_sums(b.len()).iter().zip(b.weights()) {
            assert_abs_diff_eq!(*s, *w, epsilon = 1e-10);
        }
        prop_assert!(plan.flows.iter().all(|f| f.mass >= 0.0));
    }

    #[test]
    fn one_dimensional_w1_agrees_with_matching(a in measure(1, 8), b in measure(1, 8)) {
        let (a, b) = (with_mass(&a, 1.0), with_mass(&b, 1.0));
        assert_abs_diff_eq!(w1_1d(&a, &b).unwrap(), w1_matching(&a, &b).unwrap().cost, epsilon = 1e-10);
    }

    #[test]
    fn attention_ignores_atom_order_and_total_mass(mu in measure(2, 6), scale in 0.1f64..10.0, x in prop::collection::vec(-2.0f64..2.0, 2)) {
        let params = attention_params(0.3);
        let x = Array1::from(x);
        let base = attention(&params, &mu, x.view()).unwrap();

        let mut pts: Vec<Point> = mu.points().to_vec();
        let mut ws: Vec<f64> = mu.weights().to_vec();
        pts.reverse();
        ws.reverse();
        let reversed = DiscreteMeasure::new(pts, ws, mu.bounds().clone()).unwrap();
        let rescaled = mu.scaled(scale).unwrap();
        for other in [reversed, rescaled] {
            let out = attention(&params, &other, x.view()).unwrap();
            for (p, q) in out.iter().zip(base.iter()) {
                assert_abs_diff_eq!(*p, *q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn diamond_is_associative(mu in measure(2, 5), x in prop::collection::vec(-1.0f64..1.0, 2)) {
        let g1: Arc<dyn InContextMap> = Arc::new(GammaMap(attention_params(0.1)));
        let g2: Arc<dyn InContextMap> = Arc::new(MlpMap(mlp_params(0.5)));
        let g3: Arc<dyn InContextMap> = Arc::new(GammaMap(attention_params(2.0)));
        let left = compose_diamond(Arc::new(compose_diamond(g1.clone(), g2.clone()).unwrap()), g3.clone()).unwrap();
        let right = compose_diamond(g1, Arc::new(compose_diamond(g2, g3).unwrap())).unwrap();
        let x = Array1::from(x);
        let (l, r) = (left.eval(&mu, x.view()).unwrap(), right.eval(&mu, x.view()).unwrap());
        for (p, q) in l.iter().zip(r.iter()) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-12);
        }
    }

    #[test]
    fn gap_matches_subset_enumeration(ws in prop::collection::vec(0.01f64..1.0, 1..=8)) {
        let report = gap_of_weights(&ws).unwrap();
        let n = ws.len();
        let mut best = f64::INFINITY;
        let mut best_distinct = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let (mut c, mut s, mut has_pos, mut has_neg) = (code, 0.0, false, false);
            for w in &ws {
                match c % 3 {
                    1 => { s += w; has_pos = true; }
                    2 => { s -= w; has_neg = true; }
                    _ => {}
                }
                c /= 3;
            }
            if has_pos {
                best = best.min(s.abs());
                if has_neg {
                    best_distinct = best_distinct.min(s.abs());
                }
            }
        }
        assert_abs_diff_eq!(report.value, best, epsilon = 1e-12);
        if best_distinct.is_finite() {
            assert_abs_diff_eq!(report.distinct, best_distinct, epsilon = 1e-12);
        }
    }

    #[test]
    fn flow_is_translation_equivariant(mu in measure(2, 5), c in prop::collection::vec(-0.3f64..0.3, 2)) {
        // v(μ, x) = w(x − mean(μ)) commutes with translations.
        let field = FnField {
            dim: 2,
            f: |_t: f64, mu: &DiscreteMeasure, x: ArrayView1<f64>| {
                let mass = mu.total_mass();
                let mean = mu.atoms().fold(Point::zeros(2), |acc, (p, a)| acc + &(p * a)) / mass;
                (&x - &mean).mapv(|v| -v.sin())
            },
        };
        let c = Array1::from(c);
        let shifted = mu.relocated(mu.points().iter().map(|p| p + &c).collect()).unwrap();
        let a = rk4_flow(&field, &mu, 16).unwrap();
        let b = rk4_flow(&field, &shifted, 16).unwrap();
        for (p, q) in a.last().points().iter().zip(b.last().points()) {
            for (u, v) in (p + &c).iter().zip(q.iter()) {
                assert_abs_diff_eq!(*u, *v, epsilon = 1e-10);
            }
        }
    }
}
