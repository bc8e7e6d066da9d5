use serde::{Deserialize, Serialize};

/// Dimensions of a 4-d activation tensor, stored channel-major: `[c, n, h, w]`.
///
/// Keeping channels outermost lets a convolution write its gemm output
/// directly into the activation layout, and makes channel concatenation a
/// plain buffer append.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.c * self.n * self.h * self.w
    }

    /// Elements in one channel plane (all batch items).
    pub const fn plane(&self) -> usize {
        self.n * self.h * self.w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(shape.numel(), data.len(), "tensor data does not match shape {shape:?}");
        Self { shape, data }
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_vec(Shape::scalar(), vec![value])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First element; used for scalar losses.
    pub fn item(&self) -> f32 {
        self.data[0]
    }

    #[inline]
    pub fn index(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.shape.n + n) * self.shape.h + y) * self.shape.w + x
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Extracts batch items `[start, start + len)` as a new tensor.
    pub fn slice_batch(&self, start: usize, len: usize) -> Tensor {
        let s = self.shape;
        assert!(start + len <= s.n);
        let hw = s.h * s.w;
        let mut out = Vec::with_capacity(s.c * len * hw);
        for c in 0..s.c {
            let base = (c * s.n + start) * hw;
            out.extend_from_slice(&self.data[base..base + len * hw]);
        }
        Tensor::from_vec(Shape::new(s.c, len, s.h, s.w), out)
    }
}
