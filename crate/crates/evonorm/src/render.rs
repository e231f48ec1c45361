//! Human-readable infix rendering of layer graphs.
//!
//! Moments print as mu_/rms_/s_ with their index-set suffix, the affine
//! wrap prints at its anchor node, and multiplications by the trainable
//! vectors keep the tight coefficient form (`v1*x`). `a + (-b)` collapses
//! to `a - b`. Rendering is deterministic.

use crate::graph::{GraphNode, Initial, LayerGraph};
use crate::ops::OpKind;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Add,
    Mul,
    Unary,
    Atom,
}

fn parens_if(s: &str, cond: bool) -> String {
    if cond {
        format!("({s})")
    } else {
        s.to_string()
    }
}

fn moment_name(kind: &OpKind) -> String {
    let (prefix, idx) = match kind {
        OpKind::Mean(i) => ("mu", i),
        OpKind::Rms(i) => ("rms", i),
        OpKind::Std(i) => ("s", i),
        _ => unreachable!("moment_name on non-moment"),
    };
    format!("{prefix}_{}", idx.token())
}

pub fn render_expression(g: &LayerGraph) -> String {
    let mut rendered: Vec<(String, Prec)> = Vec::with_capacity(g.len());
    for (i, node) in g.nodes().iter().enumerate() {
        let (text, prec) = match node {
            GraphNode::Initial(Initial::X) => ("x".to_string(), Prec::Atom),
            GraphNode::Initial(Initial::Zero) => ("0".to_string(), Prec::Atom),
            GraphNode::Initial(Initial::V0) => ("v0".to_string(), Prec::Atom),
            GraphNode::Initial(Initial::V1) => ("v1".to_string(), Prec::Atom),
            GraphNode::Op { kind, inputs } => render_op(g, &rendered, *kind, inputs),
        };
        let entry = if i == g.affine_at() {
            let base = parens_if(&text, prec < Prec::Mul);
            (format!("{base} * gamma + beta"), Prec::Add)
        } else {
            (text, prec)
        };
        rendered.push(entry);
    }
    rendered[g.output()].0.clone()
}

fn render_op(
    g: &LayerGraph,
    rendered: &[(String, Prec)],
    kind: OpKind,
    inputs: &[usize],
) -> (String, Prec) {
    let sub = |i: usize| -> (&str, Prec) {
        let (s, p) = &rendered[inputs[i]];
        (s.as_str(), *p)
    };
    match kind {
        OpKind::Add => {
            let (a, pa) = sub(0);
            // a + (-b) prints as subtraction.
            if let GraphNode::Op {
                kind: OpKind::Neg,
                inputs: neg_in,
            } = &g.nodes()[inputs[1]]
            {
                let (b, pb) = &rendered[neg_in[0]];
                let lhs = parens_if(a, pa < Prec::Add);
                let rhs = parens_if(b, *pb <= Prec::Add);
                return (format!("{lhs} - {rhs}"), Prec::Add);
            }
            let (b, pb) = sub(1);
            let lhs = parens_if(a, pa < Prec::Add);
            let rhs = parens_if(b, pb < Prec::Add);
            (format!("{lhs} + {rhs}"), Prec::Add)
        }
        OpKind::Mul => {
            // Trainable-vector coefficients keep the tight published form.
            if let GraphNode::Initial(v @ (Initial::V0 | Initial::V1)) = &g.nodes()[inputs[0]] {
                let name = if *v == Initial::V0 { "v0" } else { "v1" };
                let (b, pb) = sub(1);
                let rhs = parens_if(b, pb < Prec::Mul);
                return (format!("{name}*{rhs}"), Prec::Mul);
            }
            let (a, pa) = sub(0);
            let (b, pb) = sub(1);
            let lhs = parens_if(a, pa < Prec::Mul);
            let rhs = parens_if(b, pb <= Prec::Mul);
            (format!("{lhs} * {rhs}"), Prec::Mul)
        }
        OpKind::Div => {
            let (a, pa) = sub(0);
            let (b, pb) = sub(1);
            let lhs = parens_if(a, pa < Prec::Mul);
            let rhs = parens_if(b, pb <= Prec::Mul);
            (format!("{lhs} / {rhs}"), Prec::Mul)
        }
        OpKind::Max => {
            let (a, _) = sub(0);
            let (b, _) = sub(1);
            (format!("max({a}, {b})"), Prec::Atom)
        }
        OpKind::Neg => {
            let (a, pa) = sub(0);
            (
                format!("-{}", parens_if(a, pa < Prec::Unary)),
                Prec::Unary,
            )
        }
        OpKind::Sigmoid => (format!("sigmoid({})", sub(0).0), Prec::Atom),
        OpKind::Tanh => (format!("tanh({})", sub(0).0), Prec::Atom),
        OpKind::Exp => (format!("exp({})", sub(0).0), Prec::Atom),
        OpKind::Log => (format!("log({})", sub(0).0), Prec::Atom),
        OpKind::Abs => (format!("abs({})", sub(0).0), Prec::Atom),
        OpKind::Square => (format!("square({})", sub(0).0), Prec::Atom),
        OpKind::Sqrt => (format!("sqrt({})", sub(0).0), Prec::Atom),
        OpKind::Mean(_) | OpKind::Rms(_) | OpKind::Std(_) => {
            (format!("{}({})", moment_name(&kind), sub(0).0), Prec::Atom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphNode, Initial, LayerGraph};
    use crate::tensor::IndexSet;

    #[test]
    fn subtraction_collapses_and_precedence_holds() {
        // (x - mu_wh(x)) / s_wh(x) with affine at the output.
        let g = LayerGraph::new(vec![
            GraphNode::Initial(Initial::X),
            GraphNode::Initial(Initial::Zero),
            GraphNode::Initial(Initial::V0),
            GraphNode::Initial(Initial::V1),
            GraphNode::Op {
                kind: OpKind::Mean(IndexSet::Wh),
                inputs: vec![0],
            },
            GraphNode::Op {
                kind: OpKind::Neg,
                inputs: vec![4],
            },
            GraphNode::Op {
                kind: OpKind::Add,
                inputs: vec![0, 5],
            },
            GraphNode::Op {
                kind: OpKind::Std(IndexSet::Wh),
                inputs: vec![0],
            },
            GraphNode::Op {
                kind: OpKind::Div,
                inputs: vec![6, 7],
            },
        ])
        .unwrap();
        assert_eq!(
            render_expression(&g),
            "(x - mu_wh(x)) / s_wh(x) * gamma + beta"
        );
    }

    #[test]
    fn coefficient_multiplication_is_tight() {
        let g = LayerGraph::new(vec![
            GraphNode::Initial(Initial::X),
            GraphNode::Initial(Initial::Zero),
            GraphNode::Initial(Initial::V0),
            GraphNode::Initial(Initial::V1),
            GraphNode::Op {
                kind: OpKind::Mul,
                inputs: vec![3, 0],
            },
        ])
        .unwrap();
        assert_eq!(render_expression(&g), "v1*x * gamma + beta");
    }
}
