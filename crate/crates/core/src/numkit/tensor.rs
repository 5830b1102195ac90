//! Dense row-major 2-D tensors.

use std::fmt;

use rand::Rng;

use super::{NumError, Scalar};

/// A dense `rows x cols` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn shape_error(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NumError {
    NumError::Shape { op, left: a, right: b }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Contract(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_error("from_rows", (i, r.len()), (rows.len(), cols)));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(value: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::cast_from(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self, NumError> {
        if self.shape() != other.shape() {
            return Err(shape_error(op, self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self, NumError> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(shape_error("add_row", self.shape(), bias.shape()));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o = *o + b;
            }
        }
        Ok(out)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), NumError> {
        if self.shape() != other.shape() {
            return Err(shape_error("add_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumError> {
        if self.cols != other.rows {
            return Err(shape_error("matmul", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        matmul_acc(self, other, &mut out);
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self, NumError> {
        if self.cols != other.cols {
            return Err(shape_error("matmul_nt", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        matmul_nt_acc(self, other, &mut out);
        Ok(out)
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self, NumError> {
        if self.rows != other.rows {
            return Err(shape_error("matmul_tn", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        matmul_tn_acc(self, other, &mut out);
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|v| v.tanh())
    }

    /// Natural logarithm; every element must be strictly positive.
    pub fn log(&self) -> Result<Self, NumError> {
        if let Some(pos) = self.data.iter().position(|&v| !(v > T::zero())) {
            return Err(NumError::Domain {
                op: "log",
                detail: format!("non-positive value {} at flat index {}", self.data[pos], pos),
            });
        }
        Ok(self.map(|v| v.ln()))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        out
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        out
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self, NumError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        for p in parts {
            if p.rows != rows {
                return Err(shape_error("concat_cols", (rows, 0), p.shape()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self, NumError> {
        if start > end || end > self.cols {
            return Err(NumError::Contract(format!(
                "slice_cols {}..{} out of range for {}x{}",
                start, end, self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Ok(Self { rows: self.rows, cols: end - start, data })
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self, NumError> {
        if start > end || end > self.rows {
            return Err(NumError::Contract(format!(
                "slice_rows {}..{} out of range for {}x{}",
                start, end, self.rows, self.cols
            )));
        }
        Ok(Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    /// Inverted-dropout mask: each element is 0 with probability `p`, otherwise `1/(1-p)`.
    pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Result<Self, NumError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::Domain { op: "dropout_mask", detail: format!("p={p} outside [0, 1)") });
        }
        let keep = T::cast_from(1.0 / (1.0 - p));
        let data = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        Ok(Self { rows, cols, data })
    }

    /// Applies inverted dropout in training mode; identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R, training: bool) -> Result<Self, NumError> {
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let mask = Self::dropout_mask(self.rows, self.cols, p, rng)?;
        self.mul(&mask)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `out += a * b`; shapes are assumed checked.
pub(crate) fn matmul_acc<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b.data[k * n..(k + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a * b^T`.
pub(crate) fn matmul_nt_acc<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let dot = ar.iter().zip(b.row(j)).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            let o = &mut out.data[i * b.rows + j];
            *o = *o + dot;
        }
    }
}

/// `out += a^T * b`.
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    let n = b.cols;
    for r in 0..a.rows {
        let br = b.row(r);
        for (i, &av) in a.row(r).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out.data[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o = *o + av * bv;
            }
        }
    }
}
