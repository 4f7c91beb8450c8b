use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense 4-D extent `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of `(n, c, y, x)`.
    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major f32 tensor. Values are immutable once constructed;
/// clones share the underlying buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.count() {
            return Err(Error::shape(format!(
                "tensor data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.count()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![0.0; shape.count()]),
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.count()]),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: Arc::new(vec![value]),
        }
    }

    /// Uniform values in `[lo, hi)` drawn from `rng`.
    pub fn rand_uniform<R: Rng>(shape: Shape, lo: f32, hi: f32, rng: &mut R) -> Self {
        let data = (0..shape.count())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One `(n, c)` spatial plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape.h * self.shape.w;
        let start = (n * self.shape.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.count() == 1
    }

    pub fn scalar_value(&self) -> Result<f32> {
        if !self.is_scalar() {
            return Err(Error::contract(format!(
                "expected a scalar tensor, got shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same shape and bitwise-equal values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// 2-D integer class-label grid: a pseudo-mask or a ground-truth mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(h: usize, w: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != h * w {
            return Err(Error::shape(format!(
                "mask label count {} does not match {}x{}",
                labels.len(),
                h,
                w
            )));
        }
        Ok(LabelMask { h, w, labels })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        LabelMask {
            h,
            w,
            labels: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.w + x]
    }

    pub fn count_nonzero(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }

    /// Pixelwise subset relation over foreground (nonzero) labels.
    pub fn is_subset_of(&self, other: &LabelMask) -> bool {
        self.h == other.h
            && self.w == other.w
            && self
                .labels
                .iter()
                .zip(other.labels.iter())
                .all(|(&a, &b)| a == 0 || b != 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length() {
        let err = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn plane_indexing() {
        let t = Tensor::from_vec(
            Shape::new(1, 2, 2, 2),
            vec![0., 1., 2., 3., 4., 5., 6., 7.],
        )
        .unwrap();
        assert_eq!(t.plane(0, 1), &[4., 5., 6., 7.]);
        assert_eq!(t.shape().at(0, 1, 1, 0), 6);
    }

    #[test]
    fn scalar_contract() {
        assert!(Tensor::scalar(3.0).scalar_value().is_ok());
        let t = Tensor::zeros(Shape::new(1, 1, 1, 2));
        assert!(matches!(t.scalar_value(), Err(Error::Contract(_))));
    }

    #[test]
    fn mask_subset() {
        let a = LabelMask::new(1, 3, vec![0, 1, 0]).unwrap();
        let b = LabelMask::new(1, 3, vec![1, 1, 0]).unwrap();
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
    }
}
