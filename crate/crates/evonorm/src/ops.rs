//! Primitive tensor operations of the layer search space.
//!
//! Element-wise unary/binary ops plus the three statistical moments, each
//! shape-preserving. `Log` is sign(x)·ln(|x| + ε) and `Sqrt` is sign(x)·√|x|;
//! the moments fold ε inside the square root. Division is raw: non-finite
//! values propagate and are caught by the rejection protocols, not here.

use crate::error::{Error, Result};
use crate::tensor::{IndexSet, Shape, Tensor};

/// Numerical-stability constant folded into Std/Rms moments and Log.
pub const EPS: f64 = 1e-5;

/// One operation of the search space; moment variants carry their index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    Div,
    Max,
    Neg,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Abs,
    Square,
    Sqrt,
    Mean(IndexSet),
    Rms(IndexSet),
    Std(IndexSet),
}

impl OpKind {
    pub fn arity(&self) -> usize {
        match self {
            OpKind::Add | OpKind::Mul | OpKind::Div | OpKind::Max => 2,
            _ => 1,
        }
    }

    pub fn is_moment(&self) -> bool {
        matches!(self, OpKind::Mean(_) | OpKind::Rms(_) | OpKind::Std(_))
    }

    pub fn index_set(&self) -> Option<IndexSet> {
        match self {
            OpKind::Mean(i) | OpKind::Rms(i) | OpKind::Std(i) => Some(*i),
            _ => None,
        }
    }

    /// True when evaluation mixes values across the batch dimension.
    pub fn is_batch_aggregating(&self) -> bool {
        self.index_set().is_some_and(|i| i.is_batch_aggregating())
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Element-wise unary evaluation. Non-finite results propagate untrapped.
pub fn eval_unary(kind: OpKind, x: &Tensor) -> Tensor {
    match kind {
        OpKind::Neg => x.map(|v| -v),
        OpKind::Sigmoid => x.map(sigmoid),
        OpKind::Tanh => x.map(f64::tanh),
        OpKind::Exp => x.map(f64::exp),
        OpKind::Log => x.map(|v| v.signum() * (v.abs() + EPS).ln()),
        OpKind::Abs => x.map(f64::abs),
        OpKind::Square => x.map(|v| v * v),
        OpKind::Sqrt => x.map(|v| v.signum() * v.abs().sqrt()),
        other => panic!("eval_unary called with non-unary op {other:?}"),
    }
}

/// d(unary)/dx times upstream gradient. `y` is the forward output.
pub fn unary_backward(kind: OpKind, x: &Tensor, y: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data();
    let gd = grad.data();
    let od = out.data_mut();
    match kind {
        OpKind::Neg => {
            for i in 0..od.len() {
                od[i] = -gd[i];
            }
        }
        OpKind::Sigmoid => {
            for i in 0..od.len() {
                od[i] = gd[i] * yd[i] * (1.0 - yd[i]);
            }
        }
        OpKind::Tanh => {
            for i in 0..od.len() {
                od[i] = gd[i] * (1.0 - yd[i] * yd[i]);
            }
        }
        OpKind::Exp => {
            for i in 0..od.len() {
                od[i] = gd[i] * yd[i];
            }
        }
        OpKind::Log => {
            // d/dx sign(x)·ln(|x|+eps) = 1/(|x|+eps) for either sign.
            for i in 0..od.len() {
                od[i] = gd[i] / (xd[i].abs() + EPS);
            }
        }
        OpKind::Abs => {
            // Subgradient 0 at exactly 0.
            for i in 0..od.len() {
                od[i] = gd[i]
                    * if xd[i] > 0.0 {
                        1.0
                    } else if xd[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
            }
        }
        OpKind::Square => {
            for i in 0..od.len() {
                od[i] = gd[i] * 2.0 * xd[i];
            }
        }
        OpKind::Sqrt => {
            // d/dx sign(x)·√|x| = 1/(2√|x|); clamped near 0 to stay finite.
            for i in 0..od.len() {
                od[i] = gd[i] / (2.0 * xd[i].abs().sqrt().max(EPS));
            }
        }
        other => panic!("unary_backward called with non-unary op {other:?}"),
    }
    out
}

/// Broadcast relation between two operand shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    None,
    /// Left operand is a (1,1,1,c) vector expanded against the right.
    Lhs,
    /// Right operand is a (1,1,1,c) vector expanded against the left.
    Rhs,
}

/// Decide how `a` and `b` combine: equal shapes, or one side is a
/// per-channel vector matching the other's channel count.
pub fn broadcast_kind(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(Shape, Broadcast)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok((sa, Broadcast::None));
    }
    if b.is_channel_vector() && sb.c == sa.c {
        return Ok((sa, Broadcast::Rhs));
    }
    if a.is_channel_vector() && sa.c == sb.c {
        return Ok((sb, Broadcast::Lhs));
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: sa.as_tuple(),
        rhs: sb.as_tuple(),
    })
}

/// Element-wise binary evaluation with per-channel-vector broadcast.
/// Max ties route to the first operand; that matters only for gradients.
pub fn eval_binary(kind: OpKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (shape, bc) = broadcast_kind(a, b, "eval_binary")?;
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    let ad = a.data();
    let bd = b.data();
    let c = shape.c;
    // One dispatch per call, channel-chunked loops per combination.
    macro_rules! run {
        ($f:expr) => {
            match bc {
                Broadcast::None => {
                    for ((o, &x), &y) in od.iter_mut().zip(ad).zip(bd) {
                        *o = $f(x, y);
                    }
                }
                Broadcast::Rhs => {
                    for (ochunk, achunk) in od.chunks_exact_mut(c).zip(ad.chunks_exact(c)) {
                        for ((o, &x), &y) in ochunk.iter_mut().zip(achunk).zip(bd) {
                            *o = $f(x, y);
                        }
                    }
                }
                Broadcast::Lhs => {
                    for (ochunk, bchunk) in od.chunks_exact_mut(c).zip(bd.chunks_exact(c)) {
                        for ((o, &x), &y) in ochunk.iter_mut().zip(ad).zip(bchunk) {
                            *o = $f(x, y);
                        }
                    }
                }
            }
        };
    }
    match kind {
        OpKind::Add => run!(|x: f64, y: f64| x + y),
        OpKind::Mul => run!(|x: f64, y: f64| x * y),
        OpKind::Div => run!(|x: f64, y: f64| x / y),
        OpKind::Max => run!(|x: f64, y: f64| if x >= y { x } else { y }),
        other => panic!("eval_binary called with non-binary op {other:?}"),
    }
    Ok(out)
}

/// Sum a full-shaped gradient down to a (1,1,1,c) channel vector.
fn reduce_to_channel_vector(grad: &[f64], c: usize) -> Tensor {
    let mut acc = vec![0.0; c];
    for chunk in grad.chunks_exact(c) {
        for (a, &g) in acc.iter_mut().zip(chunk) {
            *a += g;
        }
    }
    Tensor::channel_vector(acc)
}

/// Gradients of a binary op w.r.t. both operands, reduced to their shapes.
pub fn binary_backward(
    kind: OpKind,
    a: &Tensor,
    b: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (shape, bc) = broadcast_kind(a, b, "binary_backward")?;
    let c = shape.c;
    let ad = a.data();
    let bd = b.data();
    let gd = grad.data();
    let mut ga = vec![0.0; gd.len()];
    let mut gb = vec![0.0; gd.len()];
    // Both elementwise gradients in one chunked pass per combination.
    macro_rules! run {
        ($f:expr) => {
            match bc {
                Broadcast::None => {
                    for i in 0..gd.len() {
                        let (x, y) = $f(ad[i], bd[i], gd[i]);
                        ga[i] = x;
                        gb[i] = y;
                    }
                }
                Broadcast::Rhs => {
                    for (ci, chunk) in gd.chunks_exact(c).enumerate() {
                        let base = ci * c;
                        for (j, &g) in chunk.iter().enumerate() {
                            let (x, y) = $f(ad[base + j], bd[j], g);
                            ga[base + j] = x;
                            gb[base + j] = y;
                        }
                    }
                }
                Broadcast::Lhs => {
                    for (ci, chunk) in gd.chunks_exact(c).enumerate() {
                        let base = ci * c;
                        for (j, &g) in chunk.iter().enumerate() {
                            let (x, y) = $f(ad[j], bd[base + j], g);
                            ga[base + j] = x;
                            gb[base + j] = y;
                        }
                    }
                }
            }
        };
    }
    match kind {
        OpKind::Add => run!(|_x: f64, _y: f64, g: f64| (g, g)),
        OpKind::Mul => run!(|x: f64, y: f64, g: f64| (g * y, g * x)),
        OpKind::Div => run!(|x: f64, y: f64, g: f64| (g / y, -g * x / (y * y))),
        OpKind::Max => {
            run!(|x: f64, y: f64, g: f64| if x >= y { (g, 0.0) } else { (0.0, g) })
        }
        other => panic!("binary_backward called with non-binary op {other:?}"),
    }
    let grad_a = if bc == Broadcast::Lhs {
        reduce_to_channel_vector(&ga, c)
    } else {
        Tensor::new(shape, ga)?
    };
    let grad_b = if bc == Broadcast::Rhs {
        reduce_to_channel_vector(&gb, c)
    } else {
        Tensor::new(shape, gb)?
    };
    Ok((grad_a, grad_b))
}

/// Per-cell statistics cached by the moment forward pass for reuse in the
/// backward pass and for exponential moving averages.
#[derive(Debug, Clone)]
pub struct MomentCache {
    /// The statistic itself: mean, rms or std per cell.
    pub stats: Vec<f64>,
    /// Cell means; populated for Std only.
    pub means: Vec<f64>,
}

/// Per-cell reduction Σ f(v, aux[cell]) over the tensor, walking channel
/// chunks contiguously so the inner loops vectorize. `aux` supplies an
/// optional per-cell reference value (the mean, for variance passes).
fn cell_reduce(
    data: &[f64],
    shape: Shape,
    idx: IndexSet,
    aux: Option<&[f64]>,
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let (n, h, w, c) = shape.as_tuple();
    let hw = h * w;
    let zeros;
    let aux = match aux {
        Some(a) => a,
        None => {
            zeros = vec![0.0; idx.cell_count(shape).unwrap_or(0)];
            &zeros
        }
    };
    match idx {
        IndexSet::Bwh => {
            let mut sums = vec![0.0; c];
            for chunk in data.chunks_exact(c) {
                for ((s, &v), &a) in sums.iter_mut().zip(chunk).zip(aux) {
                    *s += f(v, a);
                }
            }
            sums
        }
        IndexSet::Whc => {
            let mut sums = vec![0.0; n];
            for (b, block) in data.chunks_exact(hw * c).enumerate() {
                let a = aux[b];
                sums[b] = block.iter().map(|&v| f(v, a)).sum();
            }
            sums
        }
        IndexSet::Wh => {
            let mut sums = vec![0.0; n * c];
            for (b, block) in data.chunks_exact(hw * c).enumerate() {
                let srow = &mut sums[b * c..(b + 1) * c];
                let arow = &aux[b * c..(b + 1) * c];
                for chunk in block.chunks_exact(c) {
                    for ((s, &v), &a) in srow.iter_mut().zip(chunk).zip(arow) {
                        *s += f(v, a);
                    }
                }
            }
            sums
        }
        IndexSet::Whcg { groups } => {
            let gsz = c / groups;
            let mut sums = vec![0.0; n * groups];
            for (b, block) in data.chunks_exact(hw * c).enumerate() {
                let srow = &mut sums[b * groups..(b + 1) * groups];
                let arow = &aux[b * groups..(b + 1) * groups];
                for chunk in block.chunks_exact(c) {
                    for (g, sub) in chunk.chunks_exact(gsz).enumerate() {
                        let a = arow[g];
                        srow[g] += sub.iter().map(|&v| f(v, a)).sum::<f64>();
                    }
                }
            }
            sums
        }
    }
}

/// Elementwise map out[i] = f(x[i], p[cell], q[cell]) with two per-cell
/// parameter arrays, same chunked traversal as [`cell_reduce`].
fn cell_apply(
    x: &[f64],
    out: &mut [f64],
    shape: Shape,
    idx: IndexSet,
    p: &[f64],
    q: &[f64],
    f: impl Fn(f64, f64, f64) -> f64,
) {
    let (_, h, w, c) = shape.as_tuple();
    let hw = h * w;
    match idx {
        IndexSet::Bwh => {
            for (ochunk, xchunk) in out.chunks_exact_mut(c).zip(x.chunks_exact(c)) {
                for (i, o) in ochunk.iter_mut().enumerate() {
                    *o = f(xchunk[i], p[i], q[i]);
                }
            }
        }
        IndexSet::Whc => {
            for (b, (oblock, xblock)) in out
                .chunks_exact_mut(hw * c)
                .zip(x.chunks_exact(hw * c))
                .enumerate()
            {
                let (pp, qq) = (p[b], q[b]);
                for (o, &v) in oblock.iter_mut().zip(xblock) {
                    *o = f(v, pp, qq);
                }
            }
        }
        IndexSet::Wh => {
            for (b, (oblock, xblock)) in out
                .chunks_exact_mut(hw * c)
                .zip(x.chunks_exact(hw * c))
                .enumerate()
            {
                let prow = &p[b * c..(b + 1) * c];
                let qrow = &q[b * c..(b + 1) * c];
                for (ochunk, xchunk) in oblock.chunks_exact_mut(c).zip(xblock.chunks_exact(c)) {
                    for (i, o) in ochunk.iter_mut().enumerate() {
                        *o = f(xchunk[i], prow[i], qrow[i]);
                    }
                }
            }
        }
        IndexSet::Whcg { groups } => {
            let gsz = c / groups;
            for (b, (oblock, xblock)) in out
                .chunks_exact_mut(hw * c)
                .zip(x.chunks_exact(hw * c))
                .enumerate()
            {
                let prow = &p[b * groups..(b + 1) * groups];
                let qrow = &q[b * groups..(b + 1) * groups];
                for (ochunk, xchunk) in oblock.chunks_exact_mut(c).zip(xblock.chunks_exact(c)) {
                    for (g, (osub, xsub)) in ochunk
                        .chunks_exact_mut(gsz)
                        .zip(xchunk.chunks_exact(gsz))
                        .enumerate()
                    {
                        let (pp, qq) = (prow[g], qrow[g]);
                        for (o, &v) in osub.iter_mut().zip(xsub) {
                            *o = f(v, pp, qq);
                        }
                    }
                }
            }
        }
    }
}

fn cell_sums(x: &Tensor, idx: IndexSet) -> Result<Vec<f64>> {
    idx.cell_count(x.shape())?;
    Ok(cell_reduce(x.data(), x.shape(), idx, None, |v, _| v))
}

/// Moment forward pass: replaces each element with its cell statistic.
///
/// Mean is ε-free; Std returns √(population variance + ε); Rms returns
/// √(mean of squares + ε).
pub fn moment_forward(kind: OpKind, x: &Tensor) -> Result<(Tensor, MomentCache)> {
    let idx = kind
        .index_set()
        .unwrap_or_else(|| panic!("moment_forward called with non-moment op {kind:?}"));
    let shape = x.shape();
    let cells = idx.cell_count(shape)?;
    let m = idx.cell_size(shape) as f64;
    let _ = cells;
    let sums = cell_sums(x, idx)?;
    let means: Vec<f64> = sums.iter().map(|s| s / m).collect();
    let (stats, keep_means) = match kind {
        OpKind::Mean(_) => (means.clone(), false),
        OpKind::Rms(_) => {
            let sq = cell_reduce(x.data(), shape, idx, None, |v, _| v * v);
            (
                sq.iter().map(|s| (s / m + EPS).sqrt()).collect::<Vec<_>>(),
                false,
            )
        }
        OpKind::Std(_) => {
            // Two-pass variance for accuracy at large offsets.
            let var = cell_reduce(x.data(), shape, idx, Some(&means), |v, mu| {
                let d = v - mu;
                d * d
            });
            (
                var.iter().map(|s| (s / m + EPS).sqrt()).collect::<Vec<_>>(),
                true,
            )
        }
        other => panic!("moment_forward called with non-moment op {other:?}"),
    };
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    cell_apply(x.data(), od, shape, idx, &stats, &stats, |_, s, _| s);
    Ok((
        out,
        MomentCache {
            stats,
            means: if keep_means { means } else { Vec::new() },
        },
    ))
}

/// Moment backward pass.
///
/// With G = Σ upstream gradient over a cell of size m:
/// Mean: dx = G/m; Rms: dx = G·x/(m·r); Std: dx = G·(x−μ)/(m·s).
pub fn moment_backward(
    kind: OpKind,
    x: &Tensor,
    grad: &Tensor,
    cache: &MomentCache,
) -> Result<Tensor> {
    let idx = kind.index_set().expect("moment op");
    let shape = x.shape();
    let m = idx.cell_size(shape) as f64;
    let gsums = cell_sums(grad, idx)?;
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    let xd = x.data();
    match kind {
        OpKind::Mean(_) => {
            let per: Vec<f64> = gsums.iter().map(|g| g / m).collect();
            cell_apply(xd, od, shape, idx, &per, &per, |_, p, _| p);
        }
        OpKind::Rms(_) => {
            let coef: Vec<f64> = gsums
                .iter()
                .zip(&cache.stats)
                .map(|(g, r)| g / (m * r))
                .collect();
            cell_apply(xd, od, shape, idx, &coef, &coef, |v, p, _| p * v);
        }
        OpKind::Std(_) => {
            let coef: Vec<f64> = gsums
                .iter()
                .zip(&cache.stats)
                .map(|(g, s)| g / (m * s))
                .collect();
            cell_apply(xd, od, shape, idx, &coef, &cache.means, |v, p, mu| {
                p * (v - mu)
            });
        }
        other => panic!("moment_backward called with non-moment op {other:?}"),
    }
    Ok(out)
}

/// Moment evaluation without gradient bookkeeping.
pub fn eval_moment(kind: OpKind, x: &Tensor) -> Result<Tensor> {
    Ok(moment_forward(kind, x)?.0)
}

/// All op kinds, enumerating each index set as a distinct kind; grouped
/// moments use `groups`. `batch_independent` drops batch-aggregating kinds.
pub fn all_op_kinds(groups: usize, batch_independent: bool) -> Vec<OpKind> {
    let mut kinds = vec![
        OpKind::Add,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Max,
        OpKind::Neg,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Sqrt,
    ];
    let sets = [
        IndexSet::Bwh,
        IndexSet::Whc,
        IndexSet::Wh,
        IndexSet::Whcg { groups },
    ];
    for idx in sets {
        if batch_independent && idx.is_batch_aggregating() {
            continue;
        }
        kinds.push(OpKind::Mean(idx));
        kinds.push(OpKind::Rms(idx));
        kinds.push(OpKind::Std(idx));
    }
    kinds
}
