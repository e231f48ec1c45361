//! Canonical layer zoo: the handcrafted baselines, the EvoNorm B and S
//! series, the B0 structural ablations, and the two top-10 candidate lists
//! (duplicates kept verbatim so the lists map one-to-one).
//!
//! Literal `+1` terms are expressed through the ones-initialized trainable
//! vector v1, the only unit-valued node the search space provides.

use crate::error::{Error, Result};
use crate::graph::{GraphNode, Initial, LayerGraph};
use crate::ops::OpKind;
use crate::tensor::IndexSet;

/// Group count used when a zoo graph needs grouped aggregation and the
/// caller does not override it. Desk-scale channel widths are multiples
/// of eight.
pub const DEFAULT_GROUPS: usize = 8;

/// A named zoo layer plus the group count its grouped moments were built
/// with (meaningless for ungrouped layers, kept for uniformity).
#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub name: &'static str,
    pub graph: LayerGraph,
    pub recommended_groups: usize,
}

struct Builder {
    nodes: Vec<GraphNode>,
    affine_at: Option<usize>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            nodes: vec![
                GraphNode::Initial(Initial::X),
                GraphNode::Initial(Initial::Zero),
                GraphNode::Initial(Initial::V0),
                GraphNode::Initial(Initial::V1),
            ],
            affine_at: None,
        }
    }

    fn op(&mut self, kind: OpKind, inputs: &[usize]) -> usize {
        self.nodes.push(GraphNode::Op {
            kind,
            inputs: inputs.to_vec(),
        });
        self.nodes.len() - 1
    }

    /// Anchor the affine transform at `node` instead of the output.
    fn affine(&mut self, node: usize) {
        self.affine_at = Some(node);
    }

    fn build(self) -> LayerGraph {
        let affine = self.affine_at.unwrap_or(self.nodes.len() - 1);
        LayerGraph::with_affine_at(self.nodes, affine).expect("zoo graphs are valid")
    }
}

const X: usize = 0;
const ZERO: usize = 1;
const V0: usize = 2;
const V1: usize = 3;

fn centered_norm_relu(idx: IndexSet) -> LayerGraph {
    // max(z, 0), z = (x - mu(x)) / s(x) * gamma + beta
    let mut b = Builder::new();
    let mu = b.op(OpKind::Mean(idx), &[X]);
    let neg = b.op(OpKind::Neg, &[mu]);
    let centered = b.op(OpKind::Add, &[X, neg]);
    let std = b.op(OpKind::Std(idx), &[X]);
    let z = b.op(OpKind::Div, &[centered, std]);
    b.affine(z);
    b.op(OpKind::Max, &[z, ZERO]);
    b.build()
}

fn centered_norm_silu(idx: IndexSet) -> LayerGraph {
    // z * sigmoid(v1*z), z = (x - mu(x)) / s(x) * gamma + beta
    let mut b = Builder::new();
    let mu = b.op(OpKind::Mean(idx), &[X]);
    let neg = b.op(OpKind::Neg, &[mu]);
    let centered = b.op(OpKind::Add, &[X, neg]);
    let std = b.op(OpKind::Std(idx), &[X]);
    let z = b.op(OpKind::Div, &[centered, std]);
    b.affine(z);
    let vz = b.op(OpKind::Mul, &[V1, z]);
    let sig = b.op(OpKind::Sigmoid, &[vz]);
    b.op(OpKind::Mul, &[z, sig]);
    b.build()
}

fn frn() -> LayerGraph {
    // max(z, v0), z = x / rms_wh(x) * gamma + beta
    let mut b = Builder::new();
    let rms = b.op(OpKind::Rms(IndexSet::Wh), &[X]);
    let z = b.op(OpKind::Div, &[X, rms]);
    b.affine(z);
    b.op(OpKind::Max, &[z, V0]);
    b.build()
}

fn random_table_layer() -> LayerGraph {
    // sqrt(s_wh(sigmoid(abs(x)))) * gamma + beta
    let mut b = Builder::new();
    let a = b.op(OpKind::Abs, &[X]);
    let s = b.op(OpKind::Sigmoid, &[a]);
    let std = b.op(OpKind::Std(IndexSet::Wh), &[s]);
    b.op(OpKind::Sqrt, &[std]);
    b.build()
}

fn rs_rej_layer() -> LayerGraph {
    // max(x, 0) / rms_bwh(x) * gamma + beta
    let mut b = Builder::new();
    let relu = b.op(OpKind::Max, &[X, ZERO]);
    let rms = b.op(OpKind::Rms(IndexSet::Bwh), &[X]);
    b.op(OpKind::Div, &[relu, rms]);
    b.build()
}

/// B-family denominator template: x / max(s_bwh(x), local_term).
fn b_family(local: impl FnOnce(&mut Builder) -> usize) -> LayerGraph {
    let mut b = Builder::new();
    let global = b.op(OpKind::Std(IndexSet::Bwh), &[X]);
    let local = local(&mut b);
    let den = b.op(OpKind::Max, &[global, local]);
    b.op(OpKind::Div, &[X, den]);
    b.build()
}

fn evonorm_b0() -> LayerGraph {
    b_family(|b| {
        let vx = b.op(OpKind::Mul, &[V1, X]);
        let inst = b.op(OpKind::Std(IndexSet::Wh), &[X]);
        b.op(OpKind::Add, &[vx, inst])
    })
}

fn evonorm_b1() -> LayerGraph {
    b_family(|b| {
        let xp1 = b.op(OpKind::Add, &[X, V1]);
        let rms = b.op(OpKind::Rms(IndexSet::Wh), &[X]);
        b.op(OpKind::Mul, &[xp1, rms])
    })
}

fn evonorm_b2() -> LayerGraph {
    b_family(|b| {
        let rms = b.op(OpKind::Rms(IndexSet::Wh), &[X]);
        let neg = b.op(OpKind::Neg, &[X]);
        b.op(OpKind::Add, &[rms, neg])
    })
}

fn evonorm_s0(groups: usize) -> LayerGraph {
    // x * sigmoid(v1*x) / s_whcg(x) * gamma + beta
    let mut b = Builder::new();
    let vx = b.op(OpKind::Mul, &[V1, X]);
    let sig = b.op(OpKind::Sigmoid, &[vx]);
    let num = b.op(OpKind::Mul, &[X, sig]);
    let std = b.op(OpKind::Std(IndexSet::Whcg { groups }), &[X]);
    b.op(OpKind::Div, &[num, std]);
    b.build()
}

fn swish_over_moment(kind: OpKind) -> LayerGraph {
    // x * sigmoid(x) / <moment>(x) * gamma + beta
    let mut b = Builder::new();
    let sig = b.op(OpKind::Sigmoid, &[X]);
    let num = b.op(OpKind::Mul, &[X, sig]);
    let m = b.op(kind, &[X]);
    b.op(OpKind::Div, &[num, m]);
    b.build()
}

fn b0_ablation_no_v1x() -> LayerGraph {
    b_family(|b| b.op(OpKind::Std(IndexSet::Wh), &[X]))
}

fn b0_ablation_no_local() -> LayerGraph {
    // x / s_bwh(x) * gamma + beta
    let mut b = Builder::new();
    let global = b.op(OpKind::Std(IndexSet::Bwh), &[X]);
    b.op(OpKind::Div, &[X, global]);
    b.build()
}

fn b0_ablation_no_global() -> LayerGraph {
    // x / (v1*x + s_wh(x)) * gamma + beta
    let mut b = Builder::new();
    let vx = b.op(OpKind::Mul, &[V1, X]);
    let inst = b.op(OpKind::Std(IndexSet::Wh), &[X]);
    let den = b.op(OpKind::Add, &[vx, inst]);
    b.op(OpKind::Div, &[X, den]);
    b.build()
}

fn b0_ablation_add() -> LayerGraph {
    // x / (s_bwh(x) + v1*x + s_wh(x)) * gamma + beta
    let mut b = Builder::new();
    let global = b.op(OpKind::Std(IndexSet::Bwh), &[X]);
    let vx = b.op(OpKind::Mul, &[V1, X]);
    let partial = b.op(OpKind::Add, &[global, vx]);
    let inst = b.op(OpKind::Std(IndexSet::Wh), &[X]);
    let den = b.op(OpKind::Add, &[partial, inst]);
    b.op(OpKind::Div, &[X, den]);
    b.build()
}

fn b_cand_02() -> LayerGraph {
    b_family(|b| {
        let rms = b.op(OpKind::Rms(IndexSet::Whc), &[X]);
        b.op(OpKind::Add, &[X, rms])
    })
}

fn b_cand_03() -> LayerGraph {
    // -(x * sigmoid(x) / s_bwh(x)) * gamma + beta
    let mut b = Builder::new();
    let sig = b.op(OpKind::Sigmoid, &[X]);
    let num = b.op(OpKind::Mul, &[X, sig]);
    let std = b.op(OpKind::Std(IndexSet::Bwh), &[X]);
    let div = b.op(OpKind::Div, &[num, std]);
    b.op(OpKind::Neg, &[div]);
    b.build()
}

fn b_cand_04() -> LayerGraph {
    b_family(|b| {
        let rms = b.op(OpKind::Rms(IndexSet::Wh), &[X]);
        b.op(OpKind::Mul, &[X, rms])
    })
}

fn b_cand_05() -> LayerGraph {
    b_family(|b| {
        let rms = b.op(OpKind::Rms(IndexSet::Whc), &[X]);
        let neg = b.op(OpKind::Neg, &[X]);
        b.op(OpKind::Add, &[rms, neg])
    })
}

fn b_cand_09() -> LayerGraph {
    b_family(|b| {
        let inst = b.op(OpKind::Std(IndexSet::Wh), &[X]);
        b.op(OpKind::Add, &[X, inst])
    })
}

fn s_cand_01(groups: usize) -> LayerGraph {
    // x * tanh(sigmoid(x)) / rms_whcg(x) * gamma + beta
    let mut b = Builder::new();
    let sig = b.op(OpKind::Sigmoid, &[X]);
    let t = b.op(OpKind::Tanh, &[sig]);
    let num = b.op(OpKind::Mul, &[X, t]);
    let rms = b.op(OpKind::Rms(IndexSet::Whcg { groups }), &[X]);
    b.op(OpKind::Div, &[num, rms]);
    b.build()
}

fn s_cand_10(groups: usize) -> LayerGraph {
    // z * sigmoid(max(x, z)) * gamma + beta, z = x / rms_whcg(x)
    let mut b = Builder::new();
    let rms = b.op(OpKind::Rms(IndexSet::Whcg { groups }), &[X]);
    let z = b.op(OpKind::Div, &[X, rms]);
    let mx = b.op(OpKind::Max, &[X, z]);
    let sig = b.op(OpKind::Sigmoid, &[mx]);
    b.op(OpKind::Mul, &[z, sig]);
    b.build()
}

/// The named layers with distinct structure (tables of baselines, the two
/// EvoNorm series, and the B0 ablations). Candidate-list entries alias
/// into these where they coincide.
pub fn canonical_names() -> Vec<&'static str> {
    vec![
        "bn_relu",
        "bn_silu",
        "gn_relu",
        "gn_silu",
        "ln_relu",
        "frn",
        "random_table3",
        "rs_rej_table3",
        "evonorm_b0",
        "evonorm_b1",
        "evonorm_b2",
        "evonorm_s0",
        "evonorm_s1",
        "evonorm_s2",
        "b0_ablation_no_v1x",
        "b0_ablation_no_local",
        "b0_ablation_no_global",
        "b0_ablation_add",
    ]
}

/// Every zoo name, including the verbatim top-10 candidate lists.
pub fn names() -> Vec<&'static str> {
    let mut all = canonical_names();
    all.extend([
        "b_cand_01",
        "b_cand_02",
        "b_cand_03",
        "b_cand_04",
        "b_cand_05",
        "b_cand_06",
        "b_cand_07",
        "b_cand_08",
        "b_cand_09",
        "b_cand_10",
        "s_cand_01",
        "s_cand_02",
        "s_cand_03",
        "s_cand_04",
        "s_cand_05",
        "s_cand_06",
        "s_cand_07",
        "s_cand_08",
        "s_cand_09",
        "s_cand_10",
    ]);
    all
}

/// Fetch a zoo layer with an explicit group count for grouped moments.
pub fn get_with_groups(name: &str, groups: usize) -> Result<ZooEntry> {
    let gn = IndexSet::Whcg { groups };
    let graph = match name {
        "bn_relu" => centered_norm_relu(IndexSet::Bwh),
        "bn_silu" => centered_norm_silu(IndexSet::Bwh),
        "gn_relu" => centered_norm_relu(gn),
        "gn_silu" => centered_norm_silu(gn),
        "ln_relu" => centered_norm_relu(IndexSet::Whc),
        "frn" => frn(),
        "random_table3" => random_table_layer(),
        "rs_rej_table3" => rs_rej_layer(),
        "evonorm_b0" | "b_cand_06" => evonorm_b0(),
        "evonorm_b1" | "b_cand_01" => evonorm_b1(),
        "evonorm_b2" | "b_cand_07" => evonorm_b2(),
        "evonorm_s0" | "s_cand_06" => evonorm_s0(groups),
        "evonorm_s1" | "s_cand_05" | "s_cand_07" | "s_cand_09" => {
            swish_over_moment(OpKind::Std(gn))
        }
        "evonorm_s2" | "s_cand_02" | "s_cand_03" | "s_cand_04" | "s_cand_08" => {
            swish_over_moment(OpKind::Rms(gn))
        }
        "b0_ablation_no_v1x" => b0_ablation_no_v1x(),
        "b0_ablation_no_local" => b0_ablation_no_local(),
        "b0_ablation_no_global" => b0_ablation_no_global(),
        "b0_ablation_add" => b0_ablation_add(),
        "b_cand_02" => b_cand_02(),
        "b_cand_03" => b_cand_03(),
        "b_cand_04" | "b_cand_08" => b_cand_04(),
        "b_cand_05" => b_cand_05(),
        "b_cand_09" | "b_cand_10" => b_cand_09(),
        "s_cand_01" => s_cand_01(groups),
        "s_cand_10" => s_cand_10(groups),
        other => {
            return Err(Error::UnknownZoo {
                name: other.to_string(),
                valid: names().join(", "),
            })
        }
    };
    let name = names()
        .into_iter()
        .find(|n| *n == name)
        .expect("name matched above");
    Ok(ZooEntry {
        name,
        graph,
        recommended_groups: groups,
    })
}

/// Fetch a zoo layer with the desk-scale default group count.
pub fn get(name: &str) -> Result<ZooEntry> {
    get_with_groups(name, DEFAULT_GROUPS)
}
