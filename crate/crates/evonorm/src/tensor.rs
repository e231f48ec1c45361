//! Dense rank-4 tensors in (batch, height, width, channel) layout.
//!
//! All values are 64-bit floats and tensors are immutable once built; the
//! autodiff tape and the NN kernels share this one value type.

use crate::error::{Error, Result};

/// Tensor extent along (batch, height, width, channel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }
}

/// Dense row-major rank-4 tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.len() != data.len() || shape.len() == 0 {
            return Err(Error::DataLength {
                shape: shape.as_tuple(),
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Scalar tensor of shape (1,1,1,1).
    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::new(1, 1, 1, 1), value)
    }

    /// Per-channel vector of shape (1,1,1,c).
    pub fn channel_vector(values: Vec<f64>) -> Self {
        let c = values.len();
        Tensor {
            shape: Shape::new(1, 1, 1, c),
            data: values,
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.n {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(b, y, x, c));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.shape.h + y) * self.shape.w + x) * self.shape.c + c
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(b, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(b, y, x, c);
        self.data[i] = v;
    }

    /// True when this tensor is a (1,1,1,c) per-channel vector.
    pub fn is_channel_vector(&self) -> bool {
        self.shape.n == 1 && self.shape.h == 1 && self.shape.w == 1
    }

    /// Scalar value of a (1,1,1,1) tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|v| a * v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sq_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.as_tuple(),
                rhs: other.shape.as_tuple(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Stack sample tensors (each batch 1, identical h/w/c) into one batch.
    pub fn stack(samples: &[Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("cannot stack zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.h * s.w * s.c * samples.len());
        for t in samples {
            if t.shape != s || t.shape.n != 1 {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: s.as_tuple(),
                    rhs: t.shape.as_tuple(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::new(Shape::new(samples.len(), s.h, s.w, s.c), data)
    }

    /// Batch row `b` as a standalone (1,h,w,c) tensor.
    pub fn sample(&self, b: usize) -> Tensor {
        let per = self.shape.h * self.shape.w * self.shape.c;
        Tensor {
            shape: Shape::new(1, self.shape.h, self.shape.w, self.shape.c),
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }
}

/// Aggregation axes for statistical moments.
///
/// The grouped variant partitions channels into `groups` equal slices and
/// aggregates each (sample, group) cell over height, width and the channels
/// inside the slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexSet {
    /// Aggregate over batch, width, height: one cell per channel.
    Bwh,
    /// Aggregate over width, height, channel: one cell per sample.
    Whc,
    /// Aggregate over width, height: one cell per (sample, channel).
    Wh,
    /// Grouped aggregation over width, height and c/groups channels.
    Whcg { groups: usize },
}

impl IndexSet {
    /// Number of aggregation cells this index set produces on `shape`.
    pub fn cell_count(&self, shape: Shape) -> Result<usize> {
        Ok(match *self {
            IndexSet::Bwh => shape.c,
            IndexSet::Whc => shape.n,
            IndexSet::Wh => shape.n * shape.c,
            IndexSet::Whcg { groups } => {
                self.check_groups(shape.c)?;
                shape.n * groups
            }
        })
    }

    /// Number of elements inside one aggregation cell.
    pub fn cell_size(&self, shape: Shape) -> usize {
        match *self {
            IndexSet::Bwh => shape.n * shape.h * shape.w,
            IndexSet::Whc => shape.h * shape.w * shape.c,
            IndexSet::Wh => shape.h * shape.w,
            IndexSet::Whcg { groups } => shape.h * shape.w * (shape.c / groups),
        }
    }

    pub fn check_groups(&self, channels: usize) -> Result<()> {
        if let IndexSet::Whcg { groups } = *self {
            if groups == 0 || channels % groups != 0 {
                return Err(Error::GroupDivisibility { groups, channels });
            }
        }
        Ok(())
    }

    /// True when the moment mixes information across the batch dimension.
    pub fn is_batch_aggregating(&self) -> bool {
        matches!(self, IndexSet::Bwh)
    }

    /// Cell index of element (b, c); spatial position never matters.
    #[inline]
    pub fn cell_of(&self, shape: Shape, b: usize, c: usize) -> usize {
        match *self {
            IndexSet::Bwh => c,
            IndexSet::Whc => b,
            IndexSet::Wh => b * shape.c + c,
            IndexSet::Whcg { groups } => b * groups + c / (shape.c / groups),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            IndexSet::Bwh => "bwh",
            IndexSet::Whc => "whc",
            IndexSet::Wh => "wh",
            IndexSet::Whcg { .. } => "whcg",
        }
    }
}
