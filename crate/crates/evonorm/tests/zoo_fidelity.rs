//! Zoo layers against independently hand-coded closed forms, canonical
//! expression strings, codec round trips, and batch-independence behavior.
//!
//! The oracles below re-derive every statistic with naive nested loops and
//! compose the published formulas directly; they never call the graph
//! interpreter or the shared moment kernels.

use evonorm::codec;
use evonorm::graph::{forward, EmaStore, EvalMode, LayerParams};
use evonorm::render::render_expression;
use evonorm::tensor::{Shape, Tensor};
use evonorm::zoo;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

// ---------------------------------------------------------------------
// Oracle scaffolding: independent cell geometry and naive statistics.
// ---------------------------------------------------------------------

#[derive(Clone, Copy)]
enum OSet {
    Bwh,
    Whc,
    Wh,
    Whcg(usize),
}

fn o_cell(set: OSet, shape: Shape, b: usize, c: usize) -> usize {
    match set {
        OSet::Bwh => c,
        OSet::Whc => b,
        OSet::Wh => b * shape.c + c,
        OSet::Whcg(g) => b * g + c / (shape.c / g),
    }
}

fn o_cells(set: OSet, shape: Shape) -> usize {
    match set {
        OSet::Bwh => shape.c,
        OSet::Whc => shape.n,
        OSet::Wh => shape.n * shape.c,
        OSet::Whcg(g) => shape.n * g,
    }
}

/// Mean per element by brute-force bucketing.
fn o_mean(x: &Tensor, set: OSet) -> Tensor {
    let s = x.shape();
    let mut sum = vec![0.0; o_cells(set, s)];
    let mut count = vec![0usize; sum.len()];
    for b in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                for c in 0..s.c {
                    let cell = o_cell(set, s, b, c);
                    sum[cell] += x.at(b, y, xx, c);
                    count[cell] += 1;
                }
            }
        }
    }
    Tensor::from_fn(s, |b, _, _, c| {
        let cell = o_cell(set, s, b, c);
        sum[cell] / count[cell] as f64
    })
}

fn o_std(x: &Tensor, set: OSet) -> Tensor {
    let s = x.shape();
    let mean = o_mean(x, set);
    let mut acc = vec![0.0; o_cells(set, s)];
    let mut count = vec![0usize; acc.len()];
    for b in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                for c in 0..s.c {
                    let cell = o_cell(set, s, b, c);
                    let d = x.at(b, y, xx, c) - mean.at(b, y, xx, c);
                    acc[cell] += d * d;
                    count[cell] += 1;
                }
            }
        }
    }
    Tensor::from_fn(s, |b, _, _, c| {
        let cell = o_cell(set, s, b, c);
        (acc[cell] / count[cell] as f64 + EPS).sqrt()
    })
}

fn o_rms(x: &Tensor, set: OSet) -> Tensor {
    let s = x.shape();
    let mut acc = vec![0.0; o_cells(set, s)];
    let mut count = vec![0usize; acc.len()];
    for b in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                for c in 0..s.c {
                    let cell = o_cell(set, s, b, c);
                    let v = x.at(b, y, xx, c);
                    acc[cell] += v * v;
                    count[cell] += 1;
                }
            }
        }
    }
    Tensor::from_fn(s, |b, _, _, c| {
        let cell = o_cell(set, s, b, c);
        (acc[cell] / count[cell] as f64 + EPS).sqrt()
    })
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(a.shape(), |bb, y, x, c| f(a.at(bb, y, x, c), b.at(bb, y, x, c)))
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_fn(a.shape(), |b, y, x, c| f(a.at(b, y, x, c)))
}

/// Broadcast a per-channel vector over `like`'s shape.
fn bc(vec: &[f64], like: &Tensor) -> Tensor {
    Tensor::from_fn(like.shape(), |_, _, _, c| vec[c])
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct P {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    v0: Vec<f64>,
    v1: Vec<f64>,
}

impl P {
    fn affine(&self, z: &Tensor) -> Tensor {
        Tensor::from_fn(z.shape(), |b, y, x, c| {
            z.at(b, y, x, c) * self.gamma[c] + self.beta[c]
        })
    }

    fn v1_mul(&self, z: &Tensor) -> Tensor {
        Tensor::from_fn(z.shape(), |b, y, x, c| self.v1[c] * z.at(b, y, x, c))
    }
}

/// Batch statistics source: computed from the batch (training) or supplied
/// per-channel vectors in graph-node order (inference reading the EMA).
enum BatchStats<'a> {
    FromBatch,
    Stored(&'a [Vec<f64>]),
}

impl BatchStats<'_> {
    fn stat(&self, slot: usize, x: &Tensor, compute: impl Fn() -> Tensor) -> Tensor {
        match self {
            BatchStats::FromBatch => compute(),
            BatchStats::Stored(vecs) => bc(&vecs[slot], x),
        }
    }
}

/// Published formula for each distinct zoo structure.
fn oracle(name: &str, x: &Tensor, p: &P, groups: usize, stats: &BatchStats) -> Tensor {
    let g = OSet::Whcg(groups);
    match name {
        "bn_relu" | "gn_relu" | "ln_relu" => {
            let set = match name {
                "bn_relu" => OSet::Bwh,
                "gn_relu" => g,
                _ => OSet::Whc,
            };
            let (mean, std) = if matches!(set, OSet::Bwh) {
                (
                    stats.stat(0, x, || o_mean(x, set)),
                    stats.stat(1, x, || o_std(x, set)),
                )
            } else {
                (o_mean(x, set), o_std(x, set))
            };
            let z = p.affine(&zip(&zip(x, &mean, |a, m| a - m), &std, |a, s| a / s));
            map(&z, |v| v.max(0.0))
        }
        "bn_silu" | "gn_silu" => {
            let set = if name == "bn_silu" { OSet::Bwh } else { g };
            let (mean, std) = if matches!(set, OSet::Bwh) {
                (
                    stats.stat(0, x, || o_mean(x, set)),
                    stats.stat(1, x, || o_std(x, set)),
                )
            } else {
                (o_mean(x, set), o_std(x, set))
            };
            let z = p.affine(&zip(&zip(x, &mean, |a, m| a - m), &std, |a, s| a / s));
            zip(&z, &map(&p.v1_mul(&z), sig), |a, b| a * b)
        }
        "frn" => {
            let z = p.affine(&zip(x, &o_rms(x, OSet::Wh), |a, r| a / r));
            Tensor::from_fn(z.shape(), |b, y, xx, c| z.at(b, y, xx, c).max(p.v0[c]))
        }
        "random_table3" => {
            let z = o_std(&map(&map(x, f64::abs), sig), OSet::Wh);
            p.affine(&map(&z, |v| v.signum() * v.abs().sqrt()))
        }
        "rs_rej_table3" => {
            let rms = stats.stat(0, x, || o_rms(x, OSet::Bwh));
            p.affine(&zip(&map(x, |v| v.max(0.0)), &rms, |a, r| a / r))
        }
        "evonorm_b0" | "b_cand_06" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let local = zip(&p.v1_mul(x), &o_std(x, OSet::Wh), |a, b| a + b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "evonorm_b1" | "b_cand_01" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let xp1 = Tensor::from_fn(x.shape(), |b, y, xx, c| x.at(b, y, xx, c) + p.v1[c]);
            let local = zip(&xp1, &o_rms(x, OSet::Wh), |a, b| a * b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "evonorm_b2" | "b_cand_07" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let local = zip(&o_rms(x, OSet::Wh), x, |a, b| a - b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "evonorm_s0" | "s_cand_06" => {
            let num = zip(x, &map(&p.v1_mul(x), sig), |a, b| a * b);
            p.affine(&zip(&num, &o_std(x, g), |a, s| a / s))
        }
        "evonorm_s1" | "s_cand_05" | "s_cand_07" | "s_cand_09" => {
            let num = zip(x, &map(x, sig), |a, b| a * b);
            p.affine(&zip(&num, &o_std(x, g), |a, s| a / s))
        }
        "evonorm_s2" | "s_cand_02" | "s_cand_03" | "s_cand_04" | "s_cand_08" => {
            let num = zip(x, &map(x, sig), |a, b| a * b);
            p.affine(&zip(&num, &o_rms(x, g), |a, s| a / s))
        }
        "b0_ablation_no_v1x" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let den = zip(&global, &o_std(x, OSet::Wh), f64::max);
            p.affine(&zip(x, &den, |a, d| a / d))
        }
        "b0_ablation_no_local" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            p.affine(&zip(x, &global, |a, d| a / d))
        }
        "b0_ablation_no_global" => {
            let den = zip(&p.v1_mul(x), &o_std(x, OSet::Wh), |a, b| a + b);
            p.affine(&zip(x, &den, |a, d| a / d))
        }
        "b0_ablation_add" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let den = zip(
                &zip(&global, &p.v1_mul(x), |a, b| a + b),
                &o_std(x, OSet::Wh),
                |a, b| a + b,
            );
            p.affine(&zip(x, &den, |a, d| a / d))
        }
        "b_cand_02" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let local = zip(x, &o_rms(x, OSet::Whc), |a, b| a + b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "b_cand_03" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let num = zip(x, &map(x, sig), |a, b| a * b);
            p.affine(&map(&zip(&num, &global, |a, s| a / s), |v| -v))
        }
        "b_cand_04" | "b_cand_08" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let local = zip(x, &o_rms(x, OSet::Wh), |a, b| a * b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "b_cand_05" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let local = zip(&o_rms(x, OSet::Whc), x, |a, b| a - b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "b_cand_09" | "b_cand_10" => {
            let global = stats.stat(0, x, || o_std(x, OSet::Bwh));
            let local = zip(x, &o_std(x, OSet::Wh), |a, b| a + b);
            p.affine(&zip(x, &zip(&global, &local, f64::max), |a, d| a / d))
        }
        "s_cand_01" => {
            let num = zip(x, &map(&map(x, sig), f64::tanh), |a, b| a * b);
            p.affine(&zip(&num, &o_rms(x, g), |a, s| a / s))
        }
        "s_cand_10" => {
            let z = zip(x, &o_rms(x, g), |a, r| a / r);
            let gate = map(&zip(x, &z, f64::max), sig);
            p.affine(&zip(&z, &gate, |a, b| a * b))
        }
        other => panic!("no oracle for {other}"),
    }
}

fn random_input(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let mag = rng.random_range(0.5..2.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn random_params(channels: usize, seed: u64) -> (LayerParams, P) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |center: f64| -> Vec<f64> {
        (0..channels)
            .map(|_| center + rng.random_range(-0.4..0.4))
            .collect()
    };
    let (gamma, beta, v0, v1) = (draw(1.0), draw(0.0), draw(0.0), draw(1.0));
    let lp = LayerParams {
        gamma: Tensor::channel_vector(gamma.clone()),
        beta: Tensor::channel_vector(beta.clone()),
        v0: Tensor::channel_vector(v0.clone()),
        v1: Tensor::channel_vector(v1.clone()),
    };
    (
        lp,
        P {
            gamma,
            beta,
            v0,
            v1,
        },
    )
}

#[test]
fn zoo_matches_closed_forms_in_training_and_inference() {
    let groups = 2;
    let channels = 4;
    let shape = Shape::new(2, 3, 3, channels);
    for (i, name) in zoo::names().into_iter().enumerate() {
        let entry = zoo::get_with_groups(name, groups).unwrap();
        let (lp, p) = random_params(channels, 500 + i as u64);
        let x = random_input(shape, 9000 + i as u64);
        let mut ema = EmaStore::for_graph(&entry.graph, channels, EmaStore::DEFAULT_RHO);

        let got = forward(&entry.graph, &x, &lp, &mut ema, EvalMode::Training).unwrap();
        let want = oracle(name, &x, &p, groups, &BatchStats::FromBatch);
        let diff = got.max_abs_diff(&want);
        assert!(diff <= 1e-12, "{name} training diverged by {diff}");

        // Warm the EMA on a second batch, then compare inference against the
        // oracle fed the stored per-channel statistics.
        let x2 = random_input(shape, 12000 + i as u64);
        forward(&entry.graph, &x2, &lp, &mut ema, EvalMode::Training).unwrap();
        let stored: Vec<Vec<f64>> = ema
            .node_indices()
            .map(|n| ema.get(n).unwrap().to_vec())
            .collect();
        let got = forward(&entry.graph, &x, &lp, &mut ema, EvalMode::Inference).unwrap();
        let want = oracle(name, &x, &p, groups, &BatchStats::Stored(&stored));
        let diff = got.max_abs_diff(&want);
        assert!(diff <= 1e-12, "{name} inference diverged by {diff}");
    }
}

#[test]
fn canonical_expression_strings() {
    let bn_z = "(x - mu_bwh(x)) / s_bwh(x) * gamma + beta";
    let gn_z = "(x - mu_whcg(x)) / s_whcg(x) * gamma + beta";
    let expected: Vec<(&str, String)> = vec![
        ("bn_relu", format!("max({bn_z}, 0)")),
        ("bn_silu", format!("({bn_z}) * sigmoid(v1*({bn_z}))")),
        ("gn_relu", format!("max({gn_z}, 0)")),
        ("gn_silu", format!("({gn_z}) * sigmoid(v1*({gn_z}))")),
        (
            "ln_relu",
            "max((x - mu_whc(x)) / s_whc(x) * gamma + beta, 0)".into(),
        ),
        ("frn", "max(x / rms_wh(x) * gamma + beta, v0)".into()),
        (
            "random_table3",
            "sqrt(s_wh(sigmoid(abs(x)))) * gamma + beta".into(),
        ),
        (
            "rs_rej_table3",
            "max(x, 0) / rms_bwh(x) * gamma + beta".into(),
        ),
        (
            "evonorm_b0",
            "x / max(s_bwh(x), v1*x + s_wh(x)) * gamma + beta".into(),
        ),
        (
            "evonorm_b1",
            "x / max(s_bwh(x), (x + v1) * rms_wh(x)) * gamma + beta".into(),
        ),
        (
            "evonorm_b2",
            "x / max(s_bwh(x), rms_wh(x) - x) * gamma + beta".into(),
        ),
        (
            "evonorm_s0",
            "x * sigmoid(v1*x) / s_whcg(x) * gamma + beta".into(),
        ),
        (
            "evonorm_s1",
            "x * sigmoid(x) / s_whcg(x) * gamma + beta".into(),
        ),
        (
            "evonorm_s2",
            "x * sigmoid(x) / rms_whcg(x) * gamma + beta".into(),
        ),
        (
            "b0_ablation_no_v1x",
            "x / max(s_bwh(x), s_wh(x)) * gamma + beta".into(),
        ),
        ("b0_ablation_no_local", "x / s_bwh(x) * gamma + beta".into()),
        (
            "b0_ablation_no_global",
            "x / (v1*x + s_wh(x)) * gamma + beta".into(),
        ),
        (
            "b0_ablation_add",
            "x / (s_bwh(x) + v1*x + s_wh(x)) * gamma + beta".into(),
        ),
    ];
    for (name, want) in expected {
        let entry = zoo::get(name).unwrap();
        assert_eq!(render_expression(&entry.graph), want, "layer {name}");
    }
    // The spec examples for the candidate lists.
    assert_eq!(
        render_expression(&zoo::get("s_cand_01").unwrap().graph),
        "x * tanh(sigmoid(x)) / rms_whcg(x) * gamma + beta"
    );
    assert_eq!(
        render_expression(&zoo::get("s_cand_10").unwrap().graph),
        "x / rms_whcg(x) * sigmoid(max(x, x / rms_whcg(x))) * gamma + beta"
    );
    assert_eq!(
        render_expression(&zoo::get("b_cand_02").unwrap().graph),
        "x / max(s_bwh(x), x + rms_whc(x)) * gamma + beta"
    );
    assert_eq!(
        render_expression(&zoo::get("b_cand_03").unwrap().graph),
        "-(x * sigmoid(x) / s_bwh(x)) * gamma + beta"
    );
}

#[test]
fn render_distinct_over_canonical_layers() {
    // The candidate lists repeat entries verbatim; distinctness is a
    // property of the named canonical structures.
    let mut seen = std::collections::BTreeMap::new();
    for name in zoo::canonical_names() {
        let s = render_expression(&zoo::get(name).unwrap().graph);
        if let Some(prev) = seen.insert(s.clone(), name) {
            panic!("{prev} and {name} render identically: {s}");
        }
    }
}

#[test]
fn codec_round_trips_zoo() {
    for name in zoo::names() {
        let g = zoo::get(name).unwrap().graph;
        let back = codec::deserialize(&codec::serialize(&g)).unwrap();
        assert_eq!(g, back, "round trip failed for {name}");
    }
}

#[test]
fn s0_worked_example() {
    // One group covering both channels; x = [1, -1], defaults elsewhere.
    let entry = zoo::get_with_groups("evonorm_s0", 1).unwrap();
    let params = LayerParams::init(2);
    let mut ema = EmaStore::for_graph(&entry.graph, 2, EmaStore::DEFAULT_RHO);
    let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, -1.0]).unwrap();
    let y = forward(&entry.graph, &x, &params, &mut ema, EvalMode::Training).unwrap();
    assert!((y.data()[0] - 0.73105).abs() < 1e-4, "got {:?}", y.data());
    assert!((y.data()[1] + 0.26894).abs() < 1e-4, "got {:?}", y.data());
}

#[test]
fn bn_relu_reduces_to_relu_on_standardized_input() {
    // Per-channel batch mean 0 and variance 1 make BN-ReLU a plain ReLU up
    // to the epsilon inside the square root.
    let entry = zoo::get("bn_relu").unwrap();
    let params = LayerParams::init(2);
    let mut ema = EmaStore::for_graph(&entry.graph, 2, EmaStore::DEFAULT_RHO);
    let x = Tensor::from_fn(Shape::new(4, 1, 1, 2), |b, _, _, _| {
        if b % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    });
    let y = forward(&entry.graph, &x, &params, &mut ema, EvalMode::Training).unwrap();
    let relu = Tensor::from_fn(x.shape(), |b, yy, xx, c| x.at(b, yy, xx, c).max(0.0));
    assert!(y.max_abs_diff(&relu) < 1e-4);
}

#[test]
fn s_series_forward_commutes_with_batch_split() {
    let shape = Shape::new(4, 2, 2, 4);
    for name in ["evonorm_s0", "evonorm_s1", "evonorm_s2", "frn", "gn_relu"] {
        let entry = zoo::get_with_groups(name, 2).unwrap();
        assert!(!entry.graph.is_batch_dependent());
        let (lp, _) = random_params(4, 77);
        let x = random_input(shape, 4242);
        let mut ema = EmaStore::for_graph(&entry.graph, 4, EmaStore::DEFAULT_RHO);
        let whole = forward(&entry.graph, &x, &lp, &mut ema, EvalMode::Training).unwrap();
        let per_sample: Vec<Tensor> = (0..shape.n)
            .map(|b| {
                let mut e = EmaStore::for_graph(&entry.graph, 4, EmaStore::DEFAULT_RHO);
                forward(&entry.graph, &x.sample(b), &lp, &mut e, EvalMode::Training).unwrap()
            })
            .collect();
        let stacked = Tensor::stack(&per_sample).unwrap();
        assert!(
            whole.max_abs_diff(&stacked) <= 1e-12,
            "{name} not batch independent"
        );
    }
}

#[test]
fn ablations_differ_from_b0() {
    let shape = Shape::new(2, 3, 3, 4);
    let x = random_input(shape, 31337);
    let (lp, _) = random_params(4, 31338);
    let b0 = zoo::get("evonorm_b0").unwrap();
    let mut ema = EmaStore::for_graph(&b0.graph, 4, EmaStore::DEFAULT_RHO);
    let y0 = forward(&b0.graph, &x, &lp, &mut ema, EvalMode::Training).unwrap();
    for name in [
        "b0_ablation_no_v1x",
        "b0_ablation_no_local",
        "b0_ablation_no_global",
        "b0_ablation_add",
    ] {
        let entry = zoo::get(name).unwrap();
        let mut ema = EmaStore::for_graph(&entry.graph, 4, EmaStore::DEFAULT_RHO);
        let y = forward(&entry.graph, &x, &lp, &mut ema, EvalMode::Training).unwrap();
        assert!(
            y.max_abs_diff(&y0) > 1e-3,
            "{name} did not change B0's output"
        );
    }
}
