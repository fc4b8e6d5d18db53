//! Differentiable layers: fully connected, batch normalization, and the
//! leaky rectifier.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::matrix::{matmul_nt, Matrix};
use super::{NeuralError, Real};

/// Fully connected layer. Weights are stored one row per output unit
/// (`out_dim x in_dim`), which makes the forward pass a transposed-B
/// matmul with no copying.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub w: Matrix<F>,
    pub b: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad<F> {
    pub dw: Matrix<F>,
    pub db: Vec<F>,
}

impl<F: Real> Dense<F> {
    /// Xavier-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero
    /// biases. Sampling order is row-major, so one seed gives one
    /// network regardless of scalar type.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let data: Vec<F> = (0..in_dim * out_dim)
            .map(|_| F::from_f64(dist.sample(rng)))
            .collect();
        Self {
            w: Matrix::from_vec(out_dim, in_dim, data),
            b: vec![F::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len()
    }

    /// `y = x w^T + b` for a batch of rows.
    pub fn forward(&self, x: &Matrix<F>) -> Matrix<F> {
        let mut y = matmul_nt(x, &self.w);
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    /// Gradients given the forward input and the upstream gradient.
    /// Returns `(dx, grads)`.
    pub fn backward(&self, x: &Matrix<F>, dy: &Matrix<F>) -> (Matrix<F>, DenseGrad<F>) {
        debug_assert_eq!(dy.cols(), self.out_dim());
        debug_assert_eq!(x.cols(), self.in_dim());
        let wt = self.w.transpose();
        let dx = matmul_nt(dy, &wt);
        let dw = matmul_nt(&dy.transpose(), &x.transpose());
        let mut db = vec![F::zero(); self.out_dim()];
        for i in 0..dy.rows() {
            for (dbj, &g) in db.iter_mut().zip(dy.row(i)) {
                *dbj += g;
            }
        }
        (dx, DenseGrad { dw, db })
    }
}

/// Batch normalization over feature columns.
///
/// Training mode normalizes by the batch mean and biased batch variance
/// and advances the running statistics (`running_var` with the unbiased
/// estimate); evaluation mode uses the running statistics only, so a
/// row's output never depends on its batch-mates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: F,
    pub eps: F,
}

#[derive(Debug, Clone)]
pub struct BnCache<F> {
    /// Normalized pre-affine activations.
    xhat: Matrix<F>,
    inv_std: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct BnGrad<F> {
    pub dgamma: Vec<F>,
    pub dbeta: Vec<F>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<F: Real> BatchNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![F::one(); dim],
            beta: vec![F::zero(); dim],
            running_mean: vec![F::zero(); dim],
            running_var: vec![F::one(); dim],
            momentum: F::from_f64(BN_MOMENTUM),
            eps: F::from_f64(BN_EPS),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn forward_train(&mut self, x: &Matrix<F>) -> Result<(Matrix<F>, BnCache<F>), NeuralError> {
        let n = x.rows();
        if n < 2 {
            return Err(NeuralError::BatchTooSmallForTrainMode { rows: n });
        }
        let d = self.dim();
        debug_assert_eq!(x.cols(), d);
        let nf = F::from_f64(n as f64);

        let mut mean = vec![F::zero(); d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= nf;
        }

        let mut var = vec![F::zero(); d];
        for i in 0..n {
            for ((v, &xv), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                let c = xv - m;
                *v += c * c;
            }
        }
        for v in &mut var {
            *v /= nf; // biased variance normalizes the batch
        }

        let inv_std: Vec<F> = var.iter().map(|&v| (v + self.eps).sqrt().recip()).collect();

        let mut xhat = Matrix::zeros(n, d);
        let mut y = Matrix::zeros(n, d);
        for i in 0..n {
            let xr = x.row(i);
            let hr = xhat.row_mut(i);
            for (j, h) in hr.iter_mut().enumerate() {
                *h = (xr[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(i);
            for (j, out) in yr.iter_mut().enumerate() {
                *out = self.gamma[j] * xhat.get(i, j) + self.beta[j];
            }
        }

        // Unbiased variance feeds the running estimate.
        let unbias = nf / F::from_f64((n - 1) as f64);
        let one = F::one();
        for j in 0..d {
            self.running_mean[j] =
                (one - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (one - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
        }

        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Matrix<F>) -> Matrix<F> {
        let d = self.dim();
        debug_assert_eq!(x.cols(), d);
        let inv_std: Vec<F> = self
            .running_var
            .iter()
            .map(|&v| (v + self.eps).sqrt().recip())
            .collect();
        let mut y = Matrix::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let xr = x.row(i);
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = self.gamma[j] * (xr[j] - self.running_mean[j]) * inv_std[j] + self.beta[j];
            }
        }
        y
    }

    /// Backprop through the batch statistics. Returns `(dx, grads)`.
    pub fn backward(&self, cache: &BnCache<F>, dy: &Matrix<F>) -> (Matrix<F>, BnGrad<F>) {
        let n = dy.rows();
        let d = self.dim();
        let nf = F::from_f64(n as f64);

        let mut dgamma = vec![F::zero(); d];
        let mut dbeta = vec![F::zero(); d];
        // Column sums of dxhat and dxhat*xhat, where dxhat = dy * gamma.
        let mut sum_dxhat = vec![F::zero(); d];
        let mut sum_dxhat_xhat = vec![F::zero(); d];
        for i in 0..n {
            let dyr = dy.row(i);
            let xhr = cache.xhat.row(i);
            for j in 0..d {
                dgamma[j] += dyr[j] * xhr[j];
                dbeta[j] += dyr[j];
                let dxhat = dyr[j] * self.gamma[j];
                sum_dxhat[j] += dxhat;
                sum_dxhat_xhat[j] += dxhat * xhr[j];
            }
        }

        let mut dx = Matrix::zeros(n, d);
        for i in 0..n {
            let dyr = dy.row(i);
            let xhr = cache.xhat.row(i);
            let dxr = dx.row_mut(i);
            for j in 0..d {
                let dxhat = dyr[j] * self.gamma[j];
                dxr[j] = cache.inv_std[j] / nf
                    * (nf * dxhat - sum_dxhat[j] - xhr[j] * sum_dxhat_xhat[j]);
            }
        }
        (dx, BnGrad { dgamma, dbeta })
    }
}

/// Leaky rectifier applied elementwise.
pub fn leaky_relu<F: Real>(x: &Matrix<F>, slope: F) -> Matrix<F> {
    x.map(|v| if v > F::zero() { v } else { slope * v })
}

/// Gradient of [`leaky_relu`] given the pre-activation input. The kink
/// at exactly zero takes the negative-side slope.
pub fn leaky_relu_backward<F: Real>(x: &Matrix<F>, dy: &Matrix<F>, slope: F) -> Matrix<F> {
    debug_assert_eq!(x.rows(), dy.rows());
    debug_assert_eq!(x.cols(), dy.cols());
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let xr = x.row(i);
        let dyr = dy.row(i);
        let dxr = dx.row_mut(i);
        for j in 0..x.cols() {
            dxr[j] = if xr[j] > F::zero() { dyr[j] } else { slope * dyr[j] };
        }
    }
    dx
}
