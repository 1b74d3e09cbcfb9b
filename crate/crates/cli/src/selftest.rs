//! Reduced-size invariant suite. Each property prints one line; the suite
//! fails if any property fails or errors.

use std::sync::Arc;

use incontext::attention::{attention, Activation, AttentionHead, AttentionParams, DenseLayer, MlpParams};
use incontext::counterexample::discontinuity_scan;
use incontext::derivative::{extract_g, InducedMeasureMap};
use incontext::flow::{depth_limit_error, rk4_flow, DepthFamily, FnField};
use incontext::gap::{gap, gap_of_weights, make_dif};
use incontext::io;
use incontext::stack::{forward_map, forward_tokens, Layer, LayerStack};
use incontext::transport::{w1_1d, w1_extended, w1_matching};
use incontext::{iota, iota_inv, DiscreteMeasure, Point, Result, TokenSequence};
use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Ctx {
    rng: ChaCha8Rng,
    mutate_w1_sign: bool,
}

impl Ctx {
    fn point(&mut self, dim: usize, half: f64) -> Point {
        Array1::from_shape_fn(dim, |_| self.rng.gen_range(-half..half))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(-0.5..0.5))
    }

    fn measure(&mut self, dim: usize, n: usize, half: f64) -> DiscreteMeasure {
        let pts = (0..n).map(|_| self.point(dim, half)).collect();
        let raw: Vec<f64> = (0..n).map(|_| self.rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        DiscreteMeasure::in_default_box(pts, raw.iter().map(|w| w / total).collect()).expect("valid measure")
    }

    fn attention(&mut self, dim: usize, heads: usize) -> AttentionParams {
        let heads = (0..heads)
            .map(|_| AttentionHead {
                query: self.matrix(dim, dim),
                key: self.matrix(dim, dim),
                value: self.matrix(dim, dim),
                output: self.matrix(dim, dim),
            })
            .collect();
        AttentionParams::new(heads, dim).expect("valid attention")
    }

    fn mlp(&mut self, dim: usize) -> MlpParams {
        let layer = DenseLayer { weight: self.matrix(dim, dim), bias: self.point(dim, 0.5) };
        MlpParams::new(dim, 1.0, vec![layer], Activation::Tanh).expect("valid mlp")
    }

    fn stack(&mut self, dim: usize) -> LayerStack {
        let depth = self.rng.gen_range(1..=2);
        let layers = (0..depth)
            .map(|_| {
                let heads = self.rng.gen_range(1..=2);
                Layer::new(self.attention(dim, heads), self.mlp(dim)).expect("valid layer")
            })
            .collect();
        LayerStack::new(dim, layers).expect("valid stack")
    }

    fn w1_1d(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
        let v = w1_1d(a, b)?;
        Ok(if self.mutate_w1_sign { -v } else { v })
    }
}

type Property = fn(&mut Ctx) -> Result<bool>;

fn w1_oracle(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..20 {
        let (n, m) = (ctx.rng.gen_range(1..=6), ctx.rng.gen_range(1..=6));
        let (a, b) = (ctx.measure(1, n, 3.0), ctx.measure(1, m, 3.0));
        if (ctx.w1_1d(&a, &b)? - w1_matching(&a, &b)?.cost).abs() > 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn w1_metric(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..20 {
        let (a, b, c) = (ctx.measure(2, 4, 2.0), ctx.measure(2, 3, 2.0), ctx.measure(2, 5, 2.0));
        let (ab, ba) = (w1_matching(&a, &b)?.cost, w1_matching(&b, &a)?.cost);
        let (bc, ac) = (w1_matching(&b, &c)?.cost, w1_matching(&a, &c)?.cost);
        if ab < 0.0 || (ab - ba).abs() > 1e-10 || ac > ab + bc + 1e-10 || w1_matching(&a, &a)?.cost > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn canonicalize(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..20 {
        let n = ctx.rng.gen_range(1..=6);
        let mut mu = ctx.measure(2, n, 2.0);
        let p = mu.points()[0].clone();
        mu = DiscreteMeasure::in_default_box(
            mu.points().iter().cloned().chain([&p + 1e-11]).collect(),
            mu.weights().iter().copied().chain([0.5]).collect(),
        )?;
        let c = mu.canonicalize();
        if !c.is_canonical() || c.canonicalize() != c || (c.total_mass() - mu.total_mass()).abs() > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn iota_round_trip(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..20 {
        let n = ctx.rng.gen_range(1..=6);
        let mut tokens: Vec<Point> = (0..n).map(|_| ctx.point(2, 2.0)).collect();
        tokens.push(tokens[0].clone());
        let seq = TokenSequence::in_default_box(tokens)?;
        if iota_inv(&iota(&seq)?, seq.len())? != seq.sorted() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn gap_oracle(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..20 {
        let n = ctx.rng.gen_range(1..=7);
        let ws: Vec<f64> = (0..n).map(|_| ctx.rng.gen_range(1..=4) as f64 / 10.0).collect();
        let mut best = f64::INFINITY;
        for code in 1..3usize.pow(n as u32) {
            let (mut c, mut s, mut pos) = (code, 0.0, false);
            for w in &ws {
                match c % 3 {
                    1 => {
                        s += w;
                        pos = true;
                    }
                    2 => s -= w,
                    _ => {}
                }
                c /= 3;
            }
            if pos {
                best = best.min(s.abs());
            }
        }
        if (gap_of_weights(&ws)?.value - best).abs() > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn make_dif_property(ctx: &mut Ctx) -> Result<bool> {
    for k in 0..20 {
        let n = ctx.rng.gen_range(1..=8);
        let pts = (0..n).map(|_| ctx.point(2, 2.0)).collect();
        let mu = DiscreteMeasure::in_default_box(pts, vec![1.0 / n as f64; n])?;
        let dif = make_dif(&mu, 1e-2, ctx.rng.gen::<u64>() ^ k)?;
        if gap(&dif)?.value <= 0.0 || w1_extended(&mu, &dif)? >= 1e-2 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn attention_invariance(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..20 {
        let params = ctx.attention(2, 2);
        let mu = ctx.measure(2, 5, 2.0);
        let x = ctx.point(2, 2.0);
        let base = attention(&params, &mu, x.view())?;
        let mut order: Vec<usize> = (0..mu.len()).collect();
        order.shuffle(&mut ctx.rng);
        let shuffled = DiscreteMeasure::new(
            order.iter().map(|&i| mu.points()[i].clone()).collect(),
            order.iter().map(|&i| mu.weights()[i] * 3.0).collect(),
            mu.bounds().clone(),
        )?;
        let other = attention(&params, &shuffled, x.view())?;
        if base.iter().zip(other.iter()).any(|(p, q)| (p - q).abs() > 1e-12) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn token_equivariance(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..10 {
        let stack = ctx.stack(2);
        let n = ctx.rng.gen_range(2..=5);
        let mut tokens: Vec<Point> = (0..n).map(|_| ctx.point(2, 1.0)).collect();
        tokens.push(tokens[1].clone());
        let seq = TokenSequence::in_default_box(tokens)?;
        let out = forward_tokens(&stack, &seq)?;
        let mut perm: Vec<usize> = (0..seq.len()).collect();
        perm.shuffle(&mut ctx.rng);
        let out_perm = forward_tokens(&stack, &seq.permuted(&perm))?;
        if out_perm.tokens() != out.permuted(&perm).tokens() || out.tokens()[1] != out.tokens()[n] {
            return Ok(false);
        }
    }
    Ok(true)
}

fn extraction(ctx: &mut Ctx) -> Result<bool> {
    for _ in 0..5 {
        let stack = ctx.stack(2);
        let n = ctx.rng.gen_range(1..=4);
        let mu = ctx.measure(2, n, 1.0);
        let x = ctx.point(2, 1.0);
        let f = InducedMeasureMap(Arc::new(stack.clone()));
        let got = extract_g(&f, &mu, x.view(), 1e-6)?;
        let want = forward_map(&stack, &mu, x.view())?;
        if got.value.iter().zip(want.iter()).any(|(p, q)| (p - q).abs() > 1e-4) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn rk4_decay(_ctx: &mut Ctx) -> Result<bool> {
    let decay = FnField { dim: 1, f: |_t: f64, _mu: &DiscreteMeasure, x: ArrayView1<f64>| x.mapv(|v| -v) };
    let mu = DiscreteMeasure::on_line(&[1.0], &[1.0])?;
    let end = rk4_flow(&decay, &mu, 64)?;
    Ok((end.last().points()[0][0] - (-1.0f64).exp()).abs() <= 1e-6)
}

fn depth_limit(ctx: &mut Ctx) -> Result<bool> {
    let family = DepthFamily::new(ctx.attention(2, 1), ctx.mlp(2))?;
    let mu = ctx.measure(2, 4, 1.0);
    let (e16, e32) = (depth_limit_error(&family, &mu, 16)?, depth_limit_error(&family, &mu, 32)?);
    Ok(e32 < e16 && (0.3..=0.7).contains(&(e32 / e16)))
}

fn counterexample(_ctx: &mut Ctx) -> Result<bool> {
    let rows = discontinuity_scan(6, 1e-6)?;
    Ok(rows.len() == 10 && rows.iter().all(|r| (r.extracted - r.closed_form).abs() < 1e-8 && r.w1_to_delta2 <= 0.05))
}

fn json_round_trip(ctx: &mut Ctx) -> Result<bool> {
    let mu = ctx.measure(3, 5, 2.5);
    let stack = ctx.stack(2);
    Ok(io::measure_from_json(&io::measure_to_json(&mu)?)? == mu
        && io::stack_from_json(&io::stack_to_json(&stack)?)? == stack)
}

const PROPERTIES: &[(&str, Property)] = &[
    ("w1 1d closed form agrees with matching", w1_oracle),
    ("w1 metric axioms", w1_metric),
    ("canonicalize idempotent and mass preserving", canonicalize),
    ("token embedding round trip", iota_round_trip),
    ("gap agrees with exhaustive enumeration", gap_oracle),
    ("dense perturbation is small and gapped", make_dif_property),
    ("attention ignores atom order and total mass", attention_invariance),
    ("token permutation equivariance", token_equivariance),
    ("extracted map matches the stack", extraction),
    ("rk4 on linear decay", rk4_decay),
    ("depth limit first-order convergence", depth_limit),
    ("counterexample extraction matches closed form", counterexample),
    ("json round trip", json_round_trip),
];

/// Runs every property and returns whether all passed.
pub fn run(seed: u64, mutate_w1_sign: bool) -> bool {
    let mut ctx = Ctx { rng: ChaCha8Rng::seed_from_u64(seed), mutate_w1_sign };
    let mut all = true;
    for (name, prop) in PROPERTIES {
        let line = match prop(&mut ctx) {
            Ok(true) => format!("PASS {name}"),
            Ok(false) => {
                all = false;
                format!("FAIL {name}")
            }
            Err(e) => {
                all = false;
                format!("FAIL {name}: {e}")
            }
        };
        println!("{line}");
    }
    all
}
