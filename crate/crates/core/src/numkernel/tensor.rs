//! Dense row-major parameter tensors.
//!
//! Parameters are held as f64 for exact arithmetic, but every production
//! write path quantizes through f32 so that the in-memory value always
//! equals its checkpoint representation: save → load never changes a
//! parameter, and metrics computed before a save are reproduced after the
//! load. Raw (non-quantizing) writes exist only for the finite-difference
//! harness, which needs to perturb parameters below f32 resolution.

use crate::error::{RaddError, Result};

#[inline]
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Row-major parameter matrix. Values are f32-representable unless written
/// through one of the `*_raw` methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(quantize(f(r, c)));
            }
        }
        Tensor { rows, cols, data }
    }

    /// Builds from f32 storage values (checkpoint load path).
    pub fn from_f32_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RaddError::DimMismatch(format!(
                "tensor data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            data: data.into_iter().map(|v| v as f64).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    /// Quantizing write (production path).
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = quantize(v);
    }

    /// Non-quantizing write. Only the finite-difference harness should use
    /// this; it breaks the f32-representability invariant.
    #[inline]
    pub fn set_raw(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Quantizing elementwise update over the backing slice.
    pub fn update_all(&mut self, mut f: impl FnMut(usize, f64) -> f64) {
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = quantize(f(i, *v));
        }
    }

    /// Raw overwrite of the backing slice (finite-difference harness only).
    pub fn copy_raw(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.data.len());
        self.data.copy_from_slice(values);
    }

    /// f32 storage image (checkpoint save path).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// f64 gradient accumulator mirroring a `Tensor` shape.
#[derive(Debug, Clone)]
pub struct GradBuf {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradBuf {
    pub fn zeros_like(t: &Tensor) -> Self {
        GradBuf {
            rows: t.rows,
            cols: t.cols,
            data: vec![0.0; t.rows * t.cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        GradBuf {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] += v;
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Elementwise sum with another buffer of the same shape.
    pub fn merge(&mut self, other: &GradBuf) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(RaddError::DimMismatch(format!(
                "gradient merge {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

/// FNV-1a hash over the f32 storage bytes of a set of tensors.
///
/// Used by the freeze contract: the hash is constant iff no parameter bit
/// changed.
pub fn content_hash<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for t in tensors {
        for v in &t.data {
            for b in (*v as f32).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}
