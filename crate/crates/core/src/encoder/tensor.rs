//! Dense row-major storage and the handful of kernels the encoder needs.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of a parameter tree.
///
/// Models are stored and run in `f32`. The `f64` instantiation exists so that
/// gradient checks can use finite differences without drowning in rounding
/// noise.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` over strided views.
    ///
    /// # Safety
    /// Every index reachable through the given shapes and strides must lie
    /// inside the allocation behind the matching pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided 2-D window into a flat slice.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl View {
    /// Plain row-major `rows x cols` block starting at `offset`.
    pub fn dense(offset: usize, rows: usize, cols: usize) -> Self {
        Self {
            offset,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Column block `[col0, col0 + cols)` of a row-major matrix `ld` wide.
    pub fn block(offset: usize, rows: usize, cols: usize, ld: usize) -> Self {
        Self {
            offset,
            rows,
            cols,
            row_stride: ld,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            offset: self.offset,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c = alpha * a * b + beta * c`, bounds-checked.
pub fn gemm<T: Real>(alpha: T, a: &[T], av: View, b: &[T], bv: View, beta: T, c: &mut [T], cv: View) {
    assert_eq!(av.cols, bv.rows, "inner dimensions differ");
    assert_eq!(av.rows, cv.rows, "output rows differ");
    assert_eq!(bv.cols, cv.cols, "output cols differ");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                let idx = cv.offset + i * cv.row_stride + j * cv.col_stride;
                c[idx] = if beta == T::zero() { T::zero() } else { c[idx] * beta };
            }
        }
        return;
    }
    assert!(av.last_index() < a.len(), "lhs view out of bounds");
    assert!(bv.last_index() < b.len(), "rhs view out of bounds");
    assert!(cv.last_index() < c.len(), "output view out of bounds");
    // SAFETY: the three views were checked against their slices above.
    unsafe {
        T::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}

/// Row-major matrix. Vectors are stored as a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn view(&self) -> View {
        View::dense(0, self.rows, self.cols)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from(*x).expect("cast")).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `x * w + bias` for a batch of rows: `x` is `n x in`, `w` is `in x out`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(&bias.data);
    }
    let cv = out.view();
    gemm(T::one(), &x.data, x.view(), &w.data, w.view(), T::one(), &mut out.data, cv);
    out
}

/// Gradients of `y = x * w + b` given `dy`: accumulates into `dw`, `db` and
/// returns `dx`.
pub fn linear_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>, dw: &mut Tensor<T>, db: &mut Tensor<T>) -> Tensor<T> {
    let cv = dw.view();
    gemm(T::one(), &x.data, x.view().t(), &dy.data, dy.view(), T::one(), &mut dw.data, cv);
    for r in 0..dy.rows {
        for (acc, g) in db.data.iter_mut().zip(dy.row(r)) {
            *acc += *g;
        }
    }
    let mut dx = Tensor::zeros(dy.rows, w.rows);
    let cv = dx.view();
    gemm(T::one(), &dy.data, dy.view(), &w.data, w.view().t(), T::zero(), &mut dx.data, cv);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            &a,
            View::dense(0, m, k),
            &b,
            View::dense(0, k, n),
            0.0,
            &mut c,
            View::dense(0, m, n),
        );
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_views() {
        // a^T b where a is stored k x m
        let (m, k, n) = (2, 3, 2);
        let a_t = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2
        let b = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            &a_t,
            View::dense(0, k, m).t(),
            &b,
            View::dense(0, k, n),
            0.0,
            &mut c,
            View::dense(0, m, n),
        );
        assert_eq!(c, vec![1.0 + 5.0, 3.0 + 5.0, 2.0 + 6.0, 4.0 + 6.0]);
    }

    #[test]
    fn linear_backward_shapes() {
        let x = Tensor::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Tensor::from_vec(3, 1, vec![1.0, 1.0, 1.0]);
        let b = Tensor::from_vec(1, 1, vec![0.5]);
        let y = linear(&x, &w, &b);
        assert_eq!(y.data, vec![6.5, 15.5]);
        let dy = Tensor::from_vec(2, 1, vec![1.0, 1.0]);
        let mut dw = Tensor::zeros(3, 1);
        let mut db = Tensor::zeros(1, 1);
        let dx = linear_backward(&x, &w, &dy, &mut dw, &mut db);
        assert_eq!(dw.data, vec![5.0, 7.0, 9.0]);
        assert_eq!(db.data, vec![2.0]);
        assert_eq!(dx.data, vec![1.0; 6]);
    }
}
