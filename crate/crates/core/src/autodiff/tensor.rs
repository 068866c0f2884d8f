use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            Dimension,
            "shape {:?} holds {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of trailing-dimension slices.
    pub fn rows(&self) -> usize {
        self.numel().checked_div(self.last_dim()).unwrap_or(0)
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> Result<T> {
        ensure!(self.is_scalar(), Contract, "item() on tensor of shape {:?}", self.shape);
        Ok(self.data[0])
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == self.data.len(),
            Dimension,
            "cannot reshape {:?} to {:?}",
            self.shape,
            shape
        );
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Casts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        ensure!(self.rank() == 2, Dimension, "expected a matrix, got shape {:?}", self.shape);
        Ok((self.shape[0], self.shape[1]))
    }

    /// Plain matrix product without graph recording.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.matrix_dims()?;
        let (k2, n) = other.matrix_dims()?;
        ensure!(k == k2, Dimension, "matmul inner dims {} vs {}", k, k2);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }
}

impl<T: Scalar> TryFrom<Vec<Vec<f64>>> for Tensor<T> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == n), Dimension, "ragged rows");
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Tensor::from_f64(vec![m, n], &flat)
    }
}

/// Loop kernels on flat row-major buffers. All reductions run in a fixed
/// order so results are reproducible bit for bit.
pub(crate) mod kernels {
    use crate::scalar::Scalar;

    /// out[m×n] = a[m×k] · b[k×n]
    pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    }

    /// out[m×k] += g[m×n] · b[k×n]ᵀ
    pub fn matmul_bt_acc<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                out[i * k + p] = out[i * k + p] + dot(grow, &b[p * n..(p + 1) * n]);
            }
        }
    }

    /// Dot product with eight independent accumulators so the loop
    /// vectorizes; the summation order is fixed, so results are
    /// deterministic.
    pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
        const LANES: usize = 8;
        let mut acc = [T::zero(); LANES];
        let split = x.len().min(y.len()) / LANES * LANES;
        for (xc, yc) in x[..split].chunks_exact(LANES).zip(y[..split].chunks_exact(LANES)) {
            for l in 0..LANES {
                acc[l] = acc[l] + xc[l] * yc[l];
            }
        }
        let mut tail = T::zero();
        for (&a, &b) in x[split..].iter().zip(&y[split..]) {
            tail = tail + a * b;
        }
        acc.iter().fold(T::zero(), |s, &a| s + a) + tail
    }

    /// out[k×n] += a[m×k]ᵀ · g[m×n]
    pub fn matmul_at_acc<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o = *o + av * gv;
                }
            }
        }
    }

    /// Numerically stable softmax of one slice into `out`.
    pub fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
        let max = x.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &v) in out.iter_mut().zip(x) {
            *o = (v - max).exp();
            total = total + *o;
        }
        for o in out.iter_mut() {
            *o = *o / total;
        }
    }

    /// log Σ exp(x), stable.
    pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
        let max = x.iter().copied().fold(T::neg_infinity(), T::max);
        let total: T = x.iter().map(|&v| (v - max).exp()).sum();
        max + total.ln()
    }
}
