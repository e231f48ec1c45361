//! JSON persistence for layer graphs.
//!
//! A graph is `{"nodes": [{"op", "inputs", "index_set"?, "groups"?}, ...]}`
//! with an optional top-level `"affine"` anchor when it differs from the
//! output node. This format is the exchange format for candidates, search
//! logs and the zoo.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate, GraphNode, Initial, LayerGraph};
use crate::ops::OpKind;
use crate::tensor::IndexSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDoc {
    pub op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_set: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<usize>,
}

fn op_name(kind: &OpKind) -> (&'static str, Option<IndexSet>) {
    match kind {
        OpKind::Add => ("add", None),
        OpKind::Mul => ("mul", None),
        OpKind::Div => ("div", None),
        OpKind::Max => ("max", None),
        OpKind::Neg => ("neg", None),
        OpKind::Sigmoid => ("sigmoid", None),
        OpKind::Tanh => ("tanh", None),
        OpKind::Exp => ("exp", None),
        OpKind::Log => ("log", None),
        OpKind::Abs => ("abs", None),
        OpKind::Square => ("square", None),
        OpKind::Sqrt => ("sqrt", None),
        OpKind::Mean(i) => ("mean", Some(*i)),
        OpKind::Rms(i) => ("rms", Some(*i)),
        OpKind::Std(i) => ("std", Some(*i)),
    }
}

pub fn to_doc(g: &LayerGraph) -> GraphDoc {
    let nodes = g
        .nodes()
        .iter()
        .map(|node| match node {
            GraphNode::Initial(init) => NodeDoc {
                op: match init {
                    Initial::X => "x",
                    Initial::Zero => "zero",
                    Initial::V0 => "v0",
                    Initial::V1 => "v1",
                }
                .to_string(),
                inputs: Vec::new(),
                index_set: None,
                groups: None,
            },
            GraphNode::Op { kind, inputs } => {
                let (name, idx) = op_name(kind);
                NodeDoc {
                    op: name.to_string(),
                    inputs: inputs.clone(),
                    index_set: idx.map(|i| i.token().to_string()),
                    groups: match idx {
                        Some(IndexSet::Whcg { groups }) => Some(groups),
                        _ => None,
                    },
                }
            }
        })
        .collect();
    GraphDoc {
        nodes,
        affine: (g.affine_at() != g.output()).then_some(g.affine_at()),
    }
}

fn parse_index_set(doc: &NodeDoc) -> Result<IndexSet> {
    let name = doc.index_set.as_deref().ok_or_else(|| {
        Error::Parse(format!("op `{}` requires an `index_set` field", doc.op))
    })?;
    match name {
        "bwh" => Ok(IndexSet::Bwh),
        "whc" => Ok(IndexSet::Whc),
        "wh" => Ok(IndexSet::Wh),
        "whcg" => {
            let groups = doc.groups.ok_or_else(|| {
                Error::Parse("index_set `whcg` requires a `groups` field".to_string())
            })?;
            Ok(IndexSet::Whcg { groups })
        }
        other => Err(Error::Parse(format!("unknown index_set `{other}`"))),
    }
}

pub fn from_doc(doc: &GraphDoc) -> Result<LayerGraph> {
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for nd in &doc.nodes {
        let node = match nd.op.as_str() {
            "x" => GraphNode::Initial(Initial::X),
            "zero" => GraphNode::Initial(Initial::Zero),
            "v0" => GraphNode::Initial(Initial::V0),
            "v1" => GraphNode::Initial(Initial::V1),
            "add" => op(OpKind::Add, nd),
            "mul" => op(OpKind::Mul, nd),
            "div" => op(OpKind::Div, nd),
            "max" => op(OpKind::Max, nd),
            "neg" => op(OpKind::Neg, nd),
            "sigmoid" => op(OpKind::Sigmoid, nd),
            "tanh" => op(OpKind::Tanh, nd),
            "exp" => op(OpKind::Exp, nd),
            "log" => op(OpKind::Log, nd),
            "abs" => op(OpKind::Abs, nd),
            "square" => op(OpKind::Square, nd),
            "sqrt" => op(OpKind::Sqrt, nd),
            "mean" => op(OpKind::Mean(parse_index_set(nd)?), nd),
            "rms" => op(OpKind::Rms(parse_index_set(nd)?), nd),
            "std" => op(OpKind::Std(parse_index_set(nd)?), nd),
            other => return Err(Error::Parse(format!("unknown op name `{other}`"))),
        };
        nodes.push(node);
    }
    let affine = doc.affine.unwrap_or(nodes.len().saturating_sub(1));
    let g = LayerGraph::from_parts_unchecked(nodes, affine);
    let report = validate(&g);
    if !report.ok {
        return Err(Error::Parse(report.reasons.join("; ")));
    }
    Ok(g)
}

fn op(kind: OpKind, nd: &NodeDoc) -> GraphNode {
    GraphNode::Op {
        kind,
        inputs: nd.inputs.clone(),
    }
}

/// Graph to single-line JSON.
pub fn serialize(g: &LayerGraph) -> String {
    serde_json::to_string(&to_doc(g)).expect("graph doc serializes")
}

/// JSON back to a validated graph; parse failures carry diagnostics.
pub fn deserialize(text: &str) -> Result<LayerGraph> {
    let doc: GraphDoc =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("invalid graph JSON: {e}")))?;
    from_doc(&doc)
}
