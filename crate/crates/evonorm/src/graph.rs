//! The genotype: a DAG over search-space primitives that maps one feature
//! tensor to another.
//!
//! Four fixed initial nodes — the input x, a constant zero tensor and the
//! trainable per-channel vectors v0 (init 0) and v1 (init 1) — are followed
//! by up to ten intermediate op nodes whose inputs always reference earlier
//! nodes. The last node is the output. A channel-wise affine transform
//! (gamma, beta) is applied outside the DAG; by default to the output node,
//! though handcrafted baselines may anchor it at an interior node so their
//! published forms (activation after affine) are reproduced exactly.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::OpKind;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

/// Hard cap on graph size: 4 initial + 10 intermediate nodes.
pub const MAX_NODES: usize = 14;
pub const INITIAL_NODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initial {
    X,
    Zero,
    V0,
    V1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphNode {
    Initial(Initial),
    Op { kind: OpKind, inputs: Vec<usize> },
}

/// DAG of primitive ops; the unit the search mutates and evaluates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    nodes: Vec<GraphNode>,
    affine_at: usize,
}

impl LayerGraph {
    /// Build and validate a graph whose affine anchors at the output.
    pub fn new(nodes: Vec<GraphNode>) -> Result<Self> {
        let affine_at = nodes.len().saturating_sub(1);
        Self::with_affine_at(nodes, affine_at)
    }

    /// Build and validate a graph with an explicit affine anchor.
    pub fn with_affine_at(nodes: Vec<GraphNode>, affine_at: usize) -> Result<Self> {
        let g = Self::from_parts_unchecked(nodes, affine_at);
        let report = validate(&g);
        if !report.ok {
            return Err(Error::InvalidGraph(report.reasons.join("; ")));
        }
        Ok(g)
    }

    /// Assemble without validation; `validate` reports problems afterwards.
    pub fn from_parts_unchecked(nodes: Vec<GraphNode>, affine_at: usize) -> Self {
        LayerGraph { nodes, affine_at }
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Output is always the final node.
    pub fn output(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Node index the channel-wise affine transform wraps.
    pub fn affine_at(&self) -> usize {
        self.affine_at
    }

    pub fn intermediate_count(&self) -> usize {
        self.nodes.len().saturating_sub(INITIAL_NODES)
    }

    /// True when any node aggregates across the batch dimension.
    pub fn is_batch_dependent(&self) -> bool {
        self.nodes.iter().any(|n| match n {
            GraphNode::Op { kind, .. } => kind.is_batch_aggregating(),
            GraphNode::Initial(_) => false,
        })
    }

    /// True when the output transitively reads the input tensor.
    pub fn depends_on_x(&self) -> bool {
        let mut reach = vec![false; self.nodes.len()];
        reach[self.output()] = true;
        for i in (0..self.nodes.len()).rev() {
            if !reach[i] {
                continue;
            }
            if let GraphNode::Op { inputs, .. } = &self.nodes[i] {
                for &j in inputs {
                    if j < reach.len() {
                        reach[j] = true;
                    }
                }
            }
        }
        reach[0]
    }
}

fn initial_prefix() -> Vec<GraphNode> {
    vec![
        GraphNode::Initial(Initial::X),
        GraphNode::Initial(Initial::Zero),
        GraphNode::Initial(Initial::V0),
        GraphNode::Initial(Initial::V1),
    ]
}

/// Structural check result; carries derived flags either way.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub ok: bool,
    pub reasons: Vec<String>,
    pub batch_dependent: bool,
    pub depends_on_x: bool,
}

pub fn validate(g: &LayerGraph) -> ValidationReport {
    let mut reasons = Vec::new();
    let expected = initial_prefix();
    if g.nodes.len() < INITIAL_NODES {
        reasons.push(format!(
            "graph has {} nodes; the {INITIAL_NODES} initial nodes are mandatory",
            g.nodes.len()
        ));
    } else {
        for (i, want) in expected.iter().enumerate() {
            if &g.nodes[i] != want {
                reasons.push(format!("node {i} must be the fixed initial node {want:?}"));
            }
        }
    }
    if g.nodes.len() > MAX_NODES {
        reasons.push(format!(
            "graph has {} nodes; the budget is {MAX_NODES}",
            g.nodes.len()
        ));
    }
    for (i, node) in g.nodes.iter().enumerate() {
        match node {
            GraphNode::Initial(_) if i >= INITIAL_NODES => {
                reasons.push(format!("initial node at intermediate position {i}"));
            }
            GraphNode::Op { kind, inputs } => {
                if i < INITIAL_NODES {
                    reasons.push(format!("op node in initial position {i}"));
                }
                if inputs.len() != kind.arity() {
                    reasons.push(format!(
                        "node {i}: {kind:?} expects {} inputs, has {}",
                        kind.arity(),
                        inputs.len()
                    ));
                }
                for &j in inputs {
                    if j >= i {
                        reasons.push(format!("node {i}: input {j} is not strictly earlier"));
                    }
                }
                if let Some(crate::tensor::IndexSet::Whcg { groups }) = kind.index_set() {
                    if groups == 0 {
                        reasons.push(format!("node {i}: grouped moment with zero groups"));
                    }
                }
            }
            GraphNode::Initial(_) => {}
        }
    }
    if g.affine_at >= g.nodes.len() {
        reasons.push(format!(
            "affine anchor {} out of range for {} nodes",
            g.affine_at,
            g.nodes.len()
        ));
    }
    ValidationReport {
        ok: reasons.is_empty(),
        reasons,
        batch_dependent: g.is_batch_dependent(),
        depends_on_x: g.depends_on_x(),
    }
}

/// Knobs for random generation and mutation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GraphGenConfig {
    /// Group count baked into sampled grouped moments.
    pub groups: usize,
    /// Exclude batch-aggregating ops entirely.
    pub batch_independent: bool,
    /// Number of intermediate nodes for fresh graphs.
    pub intermediate_count: usize,
}

impl Default for GraphGenConfig {
    fn default() -> Self {
        GraphGenConfig {
            groups: 8,
            batch_independent: false,
            intermediate_count: 10,
        }
    }
}

/// Sequentially generate a random graph: each new node samples an op kind
/// uniformly (index-set variants count as distinct kinds) and then samples
/// each input uniformly from the nodes that already exist.
pub fn generate_random(rng: &mut impl Rng, cfg: &GraphGenConfig) -> LayerGraph {
    let kinds = crate::ops::all_op_kinds(cfg.groups, cfg.batch_independent);
    let mut nodes = initial_prefix();
    for _ in 0..cfg.intermediate_count.max(1) {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let inputs = (0..kind.arity())
            .map(|_| rng.random_range(0..nodes.len()))
            .collect();
        nodes.push(GraphNode::Op { kind, inputs });
    }
    let affine_at = nodes.len() - 1;
    LayerGraph::from_parts_unchecked(nodes, affine_at)
}

/// Mutate one intermediate node: pick it uniformly, replace its op kind
/// uniformly, then re-sample its inputs from strictly earlier nodes.
/// Node count and output index never change.
pub fn mutate(g: &LayerGraph, rng: &mut impl Rng, cfg: &GraphGenConfig) -> LayerGraph {
    let kinds = crate::ops::all_op_kinds(cfg.groups, cfg.batch_independent);
    let mut nodes = g.nodes.clone();
    if g.intermediate_count() == 0 {
        return g.clone();
    }
    let target = INITIAL_NODES + rng.random_range(0..g.intermediate_count());
    let kind = kinds[rng.random_range(0..kinds.len())];
    let inputs = (0..kind.arity())
        .map(|_| rng.random_range(0..target))
        .collect();
    nodes[target] = GraphNode::Op { kind, inputs };
    LayerGraph::from_parts_unchecked(nodes, g.affine_at)
}

/// Per-channel trainable state of one layer instance.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub v0: Tensor,
    pub v1: Tensor,
}

impl LayerParams {
    /// Defaults: gamma 1, beta 0, v0 0, v1 1.
    pub fn init(channels: usize) -> Self {
        LayerParams {
            gamma: Tensor::channel_vector(vec![1.0; channels]),
            beta: Tensor::channel_vector(vec![0.0; channels]),
            v0: Tensor::channel_vector(vec![0.0; channels]),
            v1: Tensor::channel_vector(vec![1.0; channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Training,
    Inference,
}

/// Moving-average statistics for batch-aggregating nodes, keyed by node
/// index. Mean-type entries start at 0, std/rms-type at 1, so early
/// inference stays finite.
#[derive(Debug, Clone)]
pub struct EmaStore {
    rho: f64,
    entries: BTreeMap<usize, Vec<f64>>,
}

impl EmaStore {
    pub const DEFAULT_RHO: f64 = 0.99;

    /// One entry per batch-aggregating node, none otherwise.
    pub fn for_graph(g: &LayerGraph, channels: usize, rho: f64) -> Self {
        let mut entries = BTreeMap::new();
        for (i, node) in g.nodes().iter().enumerate() {
            if let GraphNode::Op { kind, .. } = node {
                if kind.is_batch_aggregating() {
                    let init = match kind {
                        OpKind::Mean(_) => 0.0,
                        _ => 1.0,
                    };
                    entries.insert(i, vec![init; channels]);
                }
            }
        }
        EmaStore { rho, entries }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn get(&self, node: usize) -> Option<&[f64]> {
        self.entries.get(&node).map(|v| v.as_slice())
    }

    pub fn node_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    /// m ← ρ·m + (1−ρ)·stat
    pub fn update(&mut self, node: usize, stats: &[f64]) {
        if let Some(m) = self.entries.get_mut(&node) {
            for (mi, &s) in m.iter_mut().zip(stats) {
                *mi = self.rho * *mi + (1.0 - self.rho) * s;
            }
        }
    }
}

/// Tape ids of one layer site's parameters.
#[derive(Debug, Clone, Copy)]
pub struct SiteParamIds {
    pub gamma: ValueId,
    pub beta: ValueId,
    pub v0: ValueId,
    pub v1: ValueId,
}

/// Evaluate the graph on a tape so gradients flow through it.
///
/// Every node is evaluated in order. Batch-aggregating nodes compute the
/// batch statistic and fold it into the EMA in Training mode; in Inference
/// mode they emit the stored EMA as a constant instead. The affine wrap
/// (value·gamma + beta) replaces the anchored node's value for downstream
/// consumers; with the default anchor that is simply the graph output.
pub fn forward_on_tape(
    tape: &mut Tape,
    g: &LayerGraph,
    x: ValueId,
    site: &SiteParamIds,
    ema: &mut EmaStore,
    mode: EvalMode,
) -> Result<ValueId> {
    Ok(*forward_values_on_tape(tape, g, x, site, ema, mode)?
        .last()
        .expect("graph has nodes"))
}

/// Like [`forward_on_tape`] but returns every node's value id (with the
/// affine wrap already substituted at its anchor).
pub fn forward_values_on_tape(
    tape: &mut Tape,
    g: &LayerGraph,
    x: ValueId,
    site: &SiteParamIds,
    ema: &mut EmaStore,
    mode: EvalMode,
) -> Result<Vec<ValueId>> {
    let x_shape = tape.value(x).shape();
    let channels = tape.value(site.gamma).shape().c;
    if x_shape.c != channels {
        return Err(Error::ShapeMismatch {
            op: "layer_forward",
            lhs: x_shape.as_tuple(),
            rhs: tape.value(site.gamma).shape().as_tuple(),
        });
    }
    let mut values: Vec<ValueId> = Vec::with_capacity(g.len());
    for (i, node) in g.nodes().iter().enumerate() {
        let vid = match node {
            GraphNode::Initial(Initial::X) => x,
            GraphNode::Initial(Initial::Zero) => tape.constant(Tensor::zeros(x_shape)),
            GraphNode::Initial(Initial::V0) => site.v0,
            GraphNode::Initial(Initial::V1) => site.v1,
            GraphNode::Op { kind, inputs } => {
                let ins: Vec<ValueId> = inputs.iter().map(|&j| values[j]).collect();
                if kind.is_batch_aggregating() && mode == EvalMode::Inference {
                    let stored = ema
                        .get(i)
                        .ok_or_else(|| Error::InvalidGraph(format!("no EMA entry for node {i}")))?;
                    let in_shape = tape.value(ins[0]).shape();
                    tape.constant(broadcast_channel_stats(in_shape, stored))
                } else {
                    let out = tape.apply(*kind, &ins)?;
                    if kind.is_batch_aggregating() && mode == EvalMode::Training {
                        let stats = per_channel_stats(tape.value(out));
                        ema.update(i, &stats);
                    }
                    out
                }
            }
        };
        let vid = if i == g.affine_at() {
            let scaled = tape.binary(OpKind::Mul, vid, site.gamma)?;
            tape.binary(OpKind::Add, scaled, site.beta)?
        } else {
            vid
        };
        values.push(vid);
    }
    // A graph whose output never touches x leaves a bare channel vector;
    // the layer contract is shape-preserving, so broadcast it out. Interior
    // vector values need no expansion: moments and elementwise ops give
    // identical results on the compact form.
    let out = values[g.output()];
    if tape.value(out).shape() != x_shape {
        let zeros = tape.constant(Tensor::zeros(x_shape));
        values[g.output()] = tape.binary(OpKind::Add, zeros, out)?;
    }
    Ok(values)
}

/// A batch-aggregated value is constant per channel; read one row.
fn per_channel_stats(value: &Tensor) -> Vec<f64> {
    value.data()[..value.shape().c].to_vec()
}

fn broadcast_channel_stats(shape: Shape, stats: &[f64]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let c = shape.c;
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = stats[i % c];
    }
    t
}

/// Standalone forward pass: builds a throwaway tape internally.
pub fn forward(
    g: &LayerGraph,
    x: &Tensor,
    params: &LayerParams,
    ema: &mut EmaStore,
    mode: EvalMode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.constant(x.clone());
    let site = SiteParamIds {
        gamma: tape.constant(params.gamma.clone()),
        beta: tape.constant(params.beta.clone()),
        v0: tape.constant(params.v0.clone()),
        v1: tape.constant(params.v1.clone()),
    };
    let out = forward_on_tape(&mut tape, g, xid, &site, ema, mode)?;
    Ok(tape.value(out).clone())
}
