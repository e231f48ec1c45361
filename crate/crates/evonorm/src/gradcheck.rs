//! Central finite-difference verification of the reverse-mode gradients.
//!
//! Layer checks probe test points bounded away from Max ties and
//! Abs/Sqrt/Log kinks and from vanishing Div denominators, where the
//! subgradient conventions would poison the comparison.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{
    forward_values_on_tape, EmaStore, EvalMode, GraphNode, LayerGraph, LayerParams, SiteParamIds,
};
use crate::ops::{broadcast_kind, Broadcast, OpKind};
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Default relative-error bound away from kinks.
pub const REL_TOL: f64 = 1e-6;
/// Minimum distance from kinks/ties a layer test point must keep.
pub const KINK_CLEARANCE: f64 = 1e-3;

/// Worst relative error between an analytic and a finite-difference
/// gradient: |a−b| / max(|a|, |b|, 1). The unit floor makes the metric
/// absolute for sub-unit entries, where the finite-difference evaluation
/// itself carries ~1e-9 noise and a pure ratio would be meaningless.
pub fn max_rel_err(analytic: &Tensor, fd: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(fd.data())
        .fold(0.0f64, |worst, (&a, &b)| {
            let denom = a.abs().max(b.abs()).max(1.0);
            worst.max((a - b).abs() / denom)
        })
}

/// Central finite differences of a scalar function over one tensor.
pub fn fd_gradient(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += step;
        let fp = f(&xp);
        let mut xm = x.clone();
        xm.data_mut()[i] -= step;
        let fm = f(&xm);
        g.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Fixed pseudo-random weights so test losses have O(1) gradient entries.
pub fn probe_weights(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.25..1.0))
}

/// Smallest distance to a gradient kink across the graph's node values:
/// |a−b| at Max nodes, |v| at Abs/Sqrt/Log inputs and Div denominators.
pub fn kink_clearance(
    g: &LayerGraph,
    x: &Tensor,
    params: &LayerParams,
    ema: &EmaStore,
    mode: EvalMode,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xid = tape.constant(x.clone());
    let site = SiteParamIds {
        gamma: tape.constant(params.gamma.clone()),
        beta: tape.constant(params.beta.clone()),
        v0: tape.constant(params.v0.clone()),
        v1: tape.constant(params.v1.clone()),
    };
    let mut scratch = ema.clone();
    let values = forward_values_on_tape(&mut tape, g, xid, &site, &mut scratch, mode)?;
    let mut clearance = f64::INFINITY;
    for node in g.nodes().iter() {
        let GraphNode::Op { kind, inputs } = node else {
            continue;
        };
        match kind {
            OpKind::Max => {
                let a = tape.value(values[inputs[0]]);
                let b = tape.value(values[inputs[1]]);
                clearance = clearance.min(min_abs_gap(a, b)?);
            }
            OpKind::Abs | OpKind::Sqrt | OpKind::Log => {
                let v = tape.value(values[inputs[0]]);
                clearance = clearance.min(min_abs(v));
            }
            OpKind::Div => {
                let d = tape.value(values[inputs[1]]);
                clearance = clearance.min(min_abs(d));
            }
            _ => {}
        }
    }
    Ok(clearance)
}

fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn min_abs_gap(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (shape, bc) = broadcast_kind(a, b, "kink_gap")?;
    let c = shape.c;
    let (ad, bd) = (a.data(), b.data());
    let len = shape.len();
    let mut m = f64::INFINITY;
    for i in 0..len {
        let av = if bc == Broadcast::Lhs { ad[i % c] } else { ad[i] };
        let bv = if bc == Broadcast::Rhs { bd[i % c] } else { bd[i] };
        m = m.min((av - bv).abs());
    }
    Ok(m)
}

/// Outcome of one finite-difference check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub clearance: f64,
    pub seed: u64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }
}

/// Verify a whole layer graph: gradients w.r.t. the input and all four
/// per-channel parameter vectors against central differences, at a probe
/// point kept at least [`KINK_CLEARANCE`] away from kinks (seeds advance
/// until the draw is clean).
pub fn check_layer(name: &str, g: &LayerGraph, channels: usize, base_seed: u64) -> Result<CheckReport> {
    let shape = Shape::new(2, 3, 3, channels);
    let params = base_params(channels, base_seed);
    let ema = EmaStore::for_graph(g, channels, EmaStore::DEFAULT_RHO);
    let weights = probe_weights(shape, base_seed ^ 0x5eed);

    let (x, seed, clearance) = {
        let mut found = None;
        for attempt in 0..64u64 {
            let seed = base_seed.wrapping_add(attempt);
            let x = probe_input(shape, seed);
            let c = kink_clearance(g, &x, &params, &ema, EvalMode::Training)?;
            if c >= KINK_CLEARANCE {
                found = Some((x, seed, c));
                break;
            }
        }
        found.ok_or_else(|| {
            crate::error::Error::Config(format!("no clean probe point found for {name}"))
        })?
    };

    let loss = |x: &Tensor, p: &LayerParams| -> Result<f64> {
        let mut tape = Tape::new();
        let xid = tape.constant(x.clone());
        let site = SiteParamIds {
            gamma: tape.constant(p.gamma.clone()),
            beta: tape.constant(p.beta.clone()),
            v0: tape.constant(p.v0.clone()),
            v1: tape.constant(p.v1.clone()),
        };
        let mut scratch = ema.clone();
        let out = crate::graph::forward_on_tape(
            &mut tape,
            g,
            xid,
            &site,
            &mut scratch,
            EvalMode::Training,
        )?;
        let wid = tape.constant(weights.clone());
        let prod = tape.binary(OpKind::Mul, out, wid)?;
        let total = tape.sum_all(prod);
        Ok(tape.value(total).scalar_value())
    };

    // Analytic gradients in one pass.
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let site = SiteParamIds {
        gamma: tape.leaf(params.gamma.clone()),
        beta: tape.leaf(params.beta.clone()),
        v0: tape.leaf(params.v0.clone()),
        v1: tape.leaf(params.v1.clone()),
    };
    let mut scratch = ema.clone();
    let out = forward_values_on_tape(&mut tape, g, xid, &site, &mut scratch, EvalMode::Training)?
        [g.output()];
    let wid = tape.constant(weights.clone());
    let prod = tape.binary(OpKind::Mul, out, wid)?;
    let total = tape.sum_all(prod);
    let grads = tape.backward(total)?;

    let mut worst = 0.0f64;
    {
        let mut f = |t: &Tensor| loss(t, &params).expect("forward in fd");
        let fd = fd_gradient(&mut f, &x, FD_STEP);
        worst = worst.max(max_rel_err(&grads.of(xid, shape), &fd));
    }
    let param_slots: [(&str, &Tensor, crate::tape::ValueId); 4] = [
        ("gamma", &params.gamma, site.gamma),
        ("beta", &params.beta, site.beta),
        ("v0", &params.v0, site.v0),
        ("v1", &params.v1, site.v1),
    ];
    for (slot, value, id) in param_slots {
        let mut f = |t: &Tensor| {
            let mut p = params.clone();
            match slot {
                "gamma" => p.gamma = t.clone(),
                "beta" => p.beta = t.clone(),
                "v0" => p.v0 = t.clone(),
                _ => p.v1 = t.clone(),
            }
            loss(&x, &p).expect("forward in fd")
        };
        let fd = fd_gradient(&mut f, value, FD_STEP);
        worst = worst.max(max_rel_err(&grads.of(id, value.shape()), &fd));
    }

    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: worst,
        clearance,
        seed,
    })
}

/// Random probe point with magnitudes in [0.5, 2.5] and mixed signs, away
/// from the origin kinks by construction.
fn probe_input(shape: Shape, seed: u64) -> Tensor {
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

/// Parameter vectors jittered off their init so its gradients are generic.
fn base_params(channels: usize, seed: u64) -> LayerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut params = LayerParams::init(channels);
    let jitter = |t: &mut Tensor, rng: &mut ChaCha8Rng| {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    };
    jitter(&mut params.gamma, &mut rng);
    jitter(&mut params.beta, &mut rng);
    jitter(&mut params.v0, &mut rng);
    // v1 stays >= 0.5 so sigmoid(v1*x) keeps useful curvature.
    for v in params.v1.data_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    params
}

/// Run the layer check over every zoo entry; grouped moments use 2 groups
/// over 4 channels so every group holds more than one channel.
pub fn check_all_zoo_layers() -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (i, name) in crate::zoo::names().into_iter().enumerate() {
        let entry = crate::zoo::get_with_groups(name, 2)?;
        reports.push(check_layer(name, &entry.graph, 4, 1000 + i as u64 * 97)?);
    }
    Ok(reports)
}
