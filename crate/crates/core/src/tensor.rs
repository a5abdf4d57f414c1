//! Dense 4-D tensors in batch/channel/row/column order.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar type for all network math.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type for all network math.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "all dimensions must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        Ok(Shape { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one sample (all channels).
    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

impl From<Shape> for (usize, usize, usize, usize) {
    fn from(s: Shape) -> Self {
        (s.n, s.c, s.h, s.w)
    }
}

/// Operator for [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(Real),
}

/// A dense `(n, c, h, w)` array stored contiguously, `n`-major then `c`, `h`,
/// `w`. Clones share storage until one side is written.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<Real>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: (usize, usize, usize, usize), fill: Real) -> Result<Self> {
        let shape = Shape::new(shape.0, shape.1, shape.2, shape.3)?;
        Ok(Self::filled(shape, fill))
    }

    pub fn filled(shape: Shape, fill: Real) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![fill; shape.len()]),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape)
    }

    pub fn from_vec(shape: Shape, data: Vec<Real>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
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

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<Real> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> Result<usize> {
        let s = self.shape;
        if n >= s.n || c >= s.c || h >= s.h || w >= s.w {
            return Err(Error::shape(format!(
                "index ({n},{c},{h},{w}) out of bounds for shape {s}"
            )));
        }
        Ok(((n * s.c + c) * s.h + h) * s.w + w)
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> Result<Real> {
        self.offset(n, c, h, w).map(|i| self.data[i])
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: Real) -> Result<()> {
        let i = self.offset(n, c, h, w)?;
        Arc::make_mut(&mut self.data)[i] = v;
        Ok(())
    }

    /// Contiguous slice of sample `n`.
    pub fn sample(&self, n: usize) -> &[Real] {
        let len = self.shape.sample();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [Real] {
        let len = self.shape.sample();
        &mut Arc::make_mut(&mut self.data)[n * len..(n + 1) * len]
    }

    /// Contiguous slice of plane `(n, c)`.
    pub fn plane(&self, n: usize, c: usize) -> &[Real] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Tensor> {
        let mut out = self.clone();
        out.elementwise_in_place(op, rhs)?;
        Ok(out)
    }

    /// Single-owner in-place variant of [`Tensor::elementwise`].
    pub fn elementwise_in_place(&mut self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<()> {
        match rhs {
            Operand::Tensor(b) => {
                if b.shape != self.shape {
                    return Err(Error::shape(format!(
                        "elementwise shape mismatch {} vs {}",
                        self.shape, b.shape
                    )));
                }
                let f: fn(Real, Real) -> Real = match op {
                    ElementwiseOp::Add => |a, b| a + b,
                    ElementwiseOp::Sub => |a, b| a - b,
                    ElementwiseOp::Mul | ElementwiseOp::Scale => |a, b| a * b,
                };
                for (a, &b) in Arc::make_mut(&mut self.data).iter_mut().zip(b.data.iter()) {
                    *a = f(*a, b);
                }
            }
            Operand::Scalar(s) => {
                let f: fn(Real, Real) -> Real = match op {
                    ElementwiseOp::Add => |a, b| a + b,
                    ElementwiseOp::Sub => |a, b| a - b,
                    ElementwiseOp::Mul | ElementwiseOp::Scale => |a, b| a * b,
                };
                for a in Arc::make_mut(&mut self.data).iter_mut() {
                    *a = f(*a, s);
                }
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, s: Real) -> Tensor {
        let mut out = self.clone();
        out.data_mut().iter_mut().for_each(|a| *a *= s);
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.elementwise_in_place(ElementwiseOp::Add, Operand::Tensor(other))
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        for t in items {
            if t.shape != s {
                return Err(Error::shape(format!(
                    "stack shape mismatch {} vs {}",
                    s, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(
            Shape {
                n: s.n * items.len(),
                ..s
            },
            data,
        )
    }
}
