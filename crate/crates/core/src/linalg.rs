//! Dense row-major matrices and vectors, elementwise nonlinearities, a
//! max-shifted softmax, and the two weight initializers used by the tagger.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("{op}: expected length {expected}, found {found}")]
    Length {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: data length {len} does not match {rows}x{cols}")]
    Data {
        op: &'static str,
        rows: usize,
        cols: usize,
        len: usize,
    },
}

/// Dense vector.
#[derive(Clone, PartialEq, Default)]
pub struct Vector<T> {
    pub data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn new(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn dot(&self, other: &Self) -> Result<T, ShapeError> {
        check_len("dot", self.len(), other.len())?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn add(&self, other: &Self) -> Result<Self, ShapeError> {
        check_len("add", self.len(), other.len())?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self, ShapeError> {
        check_len("hadamard", self.len(), other.len())?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|a| a * k)
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.data)
    }
}

impl<T: fmt::Debug> fmt::Debug for Vector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.data).finish()
    }
}

impl<T> From<Vec<T>> for Vector<T> {
    fn from(data: Vec<T>) -> Self {
        Self { data }
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Default)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::Data {
                op: "from_vec",
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, ShapeError> {
        check_len("matmul", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Copies `block` into this matrix with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix<T>) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            let dst = &mut self.data[(r0 + r) * self.cols + c0..(r0 + r) * self.cols + c0 + block.cols];
            dst.copy_from_slice(block.row(r));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

fn check_len(op: &'static str, expected: usize, found: usize) -> Result<(), ShapeError> {
    if expected == found {
        Ok(())
    } else {
        Err(ShapeError::Length {
            op,
            expected,
            found,
        })
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Raw-slice matrix-vector product used by the tape; `w` is row-major
/// `out.len() x x.len()`.
pub(crate) fn matvec_into<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

pub fn matvec<T: Scalar>(w: &Matrix<T>, x: &Vector<T>) -> Result<Vector<T>, ShapeError> {
    check_len("matvec", w.cols, x.len())?;
    let mut out = vec![T::zero(); w.rows];
    if w.cols > 0 {
        matvec_into(&w.data, &x.data, &mut out);
    }
    Ok(Vector::new(out))
}

/// Logistic function, evaluated so that neither branch overflows.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Vector<T>) -> Vector<T> {
    x.map(sigmoid_scalar)
}

pub fn tanh<T: Scalar>(x: &Vector<T>) -> Vector<T> {
    x.map(T::tanh)
}

pub(crate) fn softmax_slice<T: Scalar>(h: &[T]) -> Vec<T> {
    let max = h.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = h.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax<T: Scalar>(h: &Vector<T>) -> Vector<T> {
    Vector::new(softmax_slice(&h.data))
}

/// Scale applied on top of the `N(0, 1/sqrt(fan_in))` draw.
pub const GAUSSIAN_INIT_SCALE: f64 = 0.1;

/// Standard deviation of [`gaussian_init`] entries: the variance is
/// `1/sqrt(fan_in)`, so the std is `fan_in^(-1/4)`, then scaled by 0.1.
pub fn gaussian_init_std(fan_in: usize) -> f64 {
    GAUSSIAN_INIT_SCALE * (fan_in as f64).powf(-0.25)
}

/// Matrix of i.i.d. draws from `N(0, 1/sqrt(fan_in))`, scaled by 0.1.
pub fn gaussian_init<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Matrix<T> {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    let std = gaussian_init_std(fan_in);
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
        .collect();
    Matrix { rows, cols, data }
}

/// Random orthogonal `n x n` matrix: the Q factor of a Householder QR of a
/// standard Gaussian matrix, with column signs fixed so that `R` has a
/// positive diagonal.
pub fn orthogonal_init<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix<T> {
    assert!(n >= 1, "orthogonal_init needs n >= 1");
    let mut a: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    let q = householder_q(&mut a, n);
    Matrix {
        rows: n,
        cols: n,
        data: q.into_iter().map(T::lit).collect(),
    }
}

/// Overwrites `a` with R and returns the sign-normalized Q.
fn householder_q(a: &mut [f64], n: usize) -> Vec<f64> {
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<f64> = (k..n).map(|i| a[i * n + k]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(vec![0.0; n - k]);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            v.iter_mut().for_each(|x| *x /= vnorm);
        }
        for j in k..n {
            let proj: f64 = (k..n).map(|i| v[i - k] * a[i * n + j]).sum();
            for i in k..n {
                a[i * n + j] -= 2.0 * v[i - k] * proj;
            }
        }
        reflectors.push(v);
    }

    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        for j in 0..n {
            let proj: f64 = (k..n).map(|i| v[i - k] * q[i * n + j]).sum();
            for i in k..n {
                q[i * n + j] -= 2.0 * v[i - k] * proj;
            }
        }
    }
    for j in 0..n {
        if a[j * n + j] < 0.0 {
            for i in 0..n {
                q[i * n + j] = -q[i * n + j];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector<f64> {
        Vector::new(xs.to_vec())
    }

    #[test]
    fn matvec_identity_and_zero() {
        let x = v(&[3.0, 4.0]);
        assert_eq!(matvec(&Matrix::identity(2), &x).unwrap(), x);
        assert_eq!(matvec(&Matrix::zeros(3, 2), &x).unwrap(), v(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn matvec_hand_computed() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&w, &v(&[1.0, 1.0])).unwrap(), v(&[3.0, 7.0]));
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let w = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(
            matvec(&w, &v(&[1.0, 2.0])),
            Err(ShapeError::Length { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn sigmoid_tanh_reference_points() {
        assert_eq!(sigmoid(&v(&[0.0])).data[0], 0.5);
        assert_eq!(tanh(&v(&[0.0])).data[0], 0.0);
        let s = sigmoid(&v(&[500.0, -500.0]));
        assert!((s.data[0] - 1.0).abs() <= 1e-12);
        assert!(s.data[1].abs() <= 1e-12 && s.data[1] >= 0.0);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_reference_points() {
        assert_eq!(softmax(&v(&[0.0; 4])).data, vec![0.25; 4]);
        let big = softmax(&v(&[1000.0, 0.0]));
        assert!(big.is_finite());
        assert!((big.data[0] - 1.0).abs() < 1e-12 && big.data[1] < 1e-300);
        // exp(k-3)/sum, evaluated at 50 digits
        let expected = [0.090030573170380458, 0.24472847105479765, 0.66524095577482189];
        for (a, b) in softmax(&v(&[1.0, 2.0, 3.0])).data.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gaussian_init_moments() {
        let mut rng = seeded_rng(7);
        for fan_in in [100usize, 1] {
            let m: Matrix<f64> = gaussian_init(1000, 1000, fan_in, &mut rng);
            let n = m.len() as f64;
            let mean = m.as_slice().iter().sum::<f64>() / n;
            let var = m.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let target = 0.1 * (fan_in as f64).powf(-0.25);
            assert!((var.sqrt() - target).abs() / target < 0.02);
            assert!(mean.abs() < 3.0 * target / n.sqrt());
        }
        assert!((gaussian_init_std(100) - 0.0316227766).abs() < 1e-9);
    }

    fn max_gram_error(q: &Matrix<f64>) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        let id = Matrix::<f64>::identity(q.rows());
        g.as_slice()
            .iter()
            .zip(id.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn orthogonal_init_properties() {
        let mut rng = seeded_rng(3);
        let q1: Matrix<f64> = orthogonal_init(1, &mut rng);
        assert_eq!(q1.get(0, 0).abs(), 1.0);
        let q8: Matrix<f64> = orthogonal_init(8, &mut rng);
        assert!(max_gram_error(&q8) <= 1e-8);
        let x = Vector::new((0..8).map(|i| (i as f64 * 0.7).sin()).collect());
        let qx = matvec(&q8, &x).unwrap();
        assert!((qx.norm() - x.norm()).abs() <= 1e-8);
    }

    #[test]
    fn orthogonal_init_f32() {
        let mut rng = seeded_rng(11);
        let q: Matrix<f32> = orthogonal_init(6, &mut rng);
        let g = q.transpose().matmul(&q).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }

    proptest! {
        #[test]
        fn matvec_is_additive(
            w in proptest::collection::vec(-10.0f64..10.0, 12),
            x in proptest::collection::vec(-10.0f64..10.0, 4),
            y in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let (x, y) = (Vector::new(x), Vector::new(y));
            let lhs = matvec(&w, &x.add(&y).unwrap()).unwrap();
            let rhs = matvec(&w, &x).unwrap().add(&matvec(&w, &y).unwrap()).unwrap();
            for (a, b) in lhs.data.iter().zip(&rhs.data) {
                let scale = a.abs().max(b.abs()).max(1.0);
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(
            h in proptest::collection::vec(-50.0f64..50.0, 1..12),
            c in -100.0f64..100.0,
        ) {
            let h = Vector::new(h);
            let p = softmax(&h);
            let total: f64 = p.data.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.data.iter().all(|&x| x > 0.0));
            let shifted = softmax(&h.map(|x| x + c));
            for (a, b) in p.data.iter().zip(&shifted.data) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
