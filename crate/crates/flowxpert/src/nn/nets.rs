//! The three networks of the detector and their composition.
//!
//! * [`EmbeddingNet`]: 15 -> 128 (batch-norm, leaky ReLU) -> 16. Trained
//!   contrastively on pseudo-labeled data, then frozen.
//! * [`EncoderNet`]: 31 -> 512 -> 256 -> 128, leaky ReLU between layers.
//!   Consumes the raw input concatenated with its frozen embedding.
//! * [`ClassifierHead`]: 128 -> 2 logits.
//!
//! With the default dimensions the parameter counts are 4,368 + 180,608
//! + 258 = 185,234 trainable scalars.

use rand::Rng;

use super::layers::{
    leaky_relu, leaky_relu_backward, BatchNorm, BnCache, BnGrad, Dense, DenseGrad,
};
use super::matrix::Matrix;
use super::{NeuralError, Real};

pub const INPUT_DIM: usize = 15;
pub const EMBED_HIDDEN: usize = 128;
pub const EMBED_DIM: usize = 16;
pub const ENCODER_INPUT: usize = INPUT_DIM + EMBED_DIM;
pub const ENCODER_DIMS: [usize; 3] = [512, 256, 128];
pub const NUM_CLASSES: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Shape-and-role description of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

fn spec(name: &str, shape: &[usize], trainable: bool) -> TensorSpec {
    TensorSpec {
        name: name.to_string(),
        shape: shape.to_vec(),
        trainable,
    }
}

/// Dense -> BatchNorm -> LeakyReLU -> Dense.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet<F> {
    pub l1: Dense<F>,
    pub bn: BatchNorm<F>,
    pub l2: Dense<F>,
    pub slope: F,
}

pub struct EmbedCache<F> {
    x: Matrix<F>,
    bn_cache: BnCache<F>,
    /// Batch-norm output (leaky ReLU input).
    pre_act: Matrix<F>,
    /// Leaky ReLU output (second dense input).
    hidden: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct EmbedGrads<F> {
    pub l1: DenseGrad<F>,
    pub bn: BnGrad<F>,
    pub l2: DenseGrad<F>,
}

impl<F: Real> EmbeddingNet<F> {
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            l1: Dense::init(in_dim, hidden, rng),
            bn: BatchNorm::new(hidden),
            l2: Dense::init(hidden, out_dim, rng),
            slope: F::from_f64(LEAKY_SLOPE),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.bn.dim()
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.bn.param_count() + self.l2.param_count()
    }

    pub fn forward_eval(&self, x: &Matrix<F>) -> Matrix<F> {
        let z1 = self.l1.forward(x);
        let a = self.bn.forward_eval(&z1);
        let h = leaky_relu(&a, self.slope);
        self.l2.forward(&h)
    }

    pub fn forward_train(&mut self, x: &Matrix<F>) -> Result<(Matrix<F>, EmbedCache<F>), NeuralError> {
        let z1 = self.l1.forward(x);
        let (pre_act, bn_cache) = self.bn.forward_train(&z1)?;
        let hidden = leaky_relu(&pre_act, self.slope);
        let out = self.l2.forward(&hidden);
        Ok((
            out,
            EmbedCache {
                x: x.clone(),
                bn_cache,
                pre_act,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &EmbedCache<F>, d_out: &Matrix<F>) -> EmbedGrads<F> {
        let (d_hidden, g_l2) = self.l2.backward(&cache.hidden, d_out);
        let d_pre = leaky_relu_backward(&cache.pre_act, &d_hidden, self.slope);
        let (d_z1, g_bn) = self.bn.backward(&cache.bn_cache, &d_pre);
        let (_, g_l1) = self.l1.backward(&cache.x, &d_z1);
        EmbedGrads {
            l1: g_l1,
            bn: g_bn,
            l2: g_l2,
        }
    }

    pub fn tensors(&self) -> Vec<(TensorSpec, &[F])> {
        vec![
            (
                spec("embedding.l1.w", &[self.l1.out_dim(), self.l1.in_dim()], true),
                self.l1.w.data(),
            ),
            (spec("embedding.l1.b", &[self.l1.out_dim()], true), &self.l1.b),
            (spec("embedding.bn.gamma", &[self.bn.dim()], true), &self.bn.gamma),
            (spec("embedding.bn.beta", &[self.bn.dim()], true), &self.bn.beta),
            (
                spec("embedding.l2.w", &[self.l2.out_dim(), self.l2.in_dim()], true),
                self.l2.w.data(),
            ),
            (spec("embedding.l2.b", &[self.l2.out_dim()], true), &self.l2.b),
            (
                spec("embedding.bn.running_mean", &[self.bn.dim()], false),
                &self.bn.running_mean,
            ),
            (
                spec("embedding.bn.running_var", &[self.bn.dim()], false),
                &self.bn.running_var,
            ),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorSpec, &mut [F])> {
        vec![
            (
                spec("embedding.l1.w", &[self.l1.out_dim(), self.l1.in_dim()], true),
                self.l1.w.data_mut(),
            ),
            (
                spec("embedding.l1.b", &[self.l1.b.len()], true),
                self.l1.b.as_mut_slice(),
            ),
            (
                spec("embedding.bn.gamma", &[self.bn.gamma.len()], true),
                self.bn.gamma.as_mut_slice(),
            ),
            (
                spec("embedding.bn.beta", &[self.bn.beta.len()], true),
                self.bn.beta.as_mut_slice(),
            ),
            (
                spec("embedding.l2.w", &[self.l2.out_dim(), self.l2.in_dim()], true),
                self.l2.w.data_mut(),
            ),
            (
                spec("embedding.l2.b", &[self.l2.b.len()], true),
                self.l2.b.as_mut_slice(),
            ),
            (
                spec("embedding.bn.running_mean", &[self.bn.running_mean.len()], false),
                self.bn.running_mean.as_mut_slice(),
            ),
            (
                spec("embedding.bn.running_var", &[self.bn.running_var.len()], false),
                self.bn.running_var.as_mut_slice(),
            ),
        ]
    }

    /// Mutable views of the trainable tensors, in [`Self::tensors`] order.
    pub fn trainable_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.l1.w.data_mut(),
            self.l1.b.as_mut_slice(),
            self.bn.gamma.as_mut_slice(),
            self.bn.beta.as_mut_slice(),
            self.l2.w.data_mut(),
            self.l2.b.as_mut_slice(),
        ]
    }
}

impl<F: Real> EmbedGrads<F> {
    /// Gradient slices aligned with [`EmbeddingNet::trainable_mut`].
    pub fn slices(&self) -> Vec<&[F]> {
        vec![
            self.l1.dw.data(),
            &self.l1.db,
            &self.bn.dgamma,
            &self.bn.dbeta,
            self.l2.dw.data(),
            &self.l2.db,
        ]
    }
}

/// Three dense layers with leaky ReLU between them, no normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet<F> {
    pub l1: Dense<F>,
    pub l2: Dense<F>,
    pub l3: Dense<F>,
    pub slope: F,
}

pub struct EncoderCache<F> {
    x: Matrix<F>,
    z1: Matrix<F>,
    h1: Matrix<F>,
    z2: Matrix<F>,
    h2: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads<F> {
    pub l1: DenseGrad<F>,
    pub l2: DenseGrad<F>,
    pub l3: DenseGrad<F>,
}

impl<F: Real> EncoderNet<F> {
    pub fn init<R: Rng>(in_dim: usize, dims: [usize; 3], rng: &mut R) -> Self {
        Self {
            l1: Dense::init(in_dim, dims[0], rng),
            l2: Dense::init(dims[0], dims[1], rng),
            l3: Dense::init(dims[1], dims[2], rng),
            slope: F::from_f64(LEAKY_SLOPE),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.l1.out_dim(), self.l2.out_dim(), self.l3.out_dim()]
    }

    pub fn out_dim(&self) -> usize {
        self.l3.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count() + self.l3.param_count()
    }

    pub fn forward_eval(&self, x: &Matrix<F>) -> Matrix<F> {
        let h1 = leaky_relu(&self.l1.forward(x), self.slope);
        let h2 = leaky_relu(&self.l2.forward(&h1), self.slope);
        self.l3.forward(&h2)
    }

    /// Forward pass that keeps activations for [`Self::backward`]. The
    /// encoder has no batch-coupled layers, so this computes exactly what
    /// [`Self::forward_eval`] computes.
    pub fn forward_train(&self, x: &Matrix<F>) -> (Matrix<F>, EncoderCache<F>) {
        let z1 = self.l1.forward(x);
        let h1 = leaky_relu(&z1, self.slope);
        let z2 = self.l2.forward(&h1);
        let h2 = leaky_relu(&z2, self.slope);
        let out = self.l3.forward(&h2);
        (
            out,
            EncoderCache {
                x: x.clone(),
                z1,
                h1,
                z2,
                h2,
            },
        )
    }

    pub fn backward(&self, cache: &EncoderCache<F>, d_out: &Matrix<F>) -> EncoderGrads<F> {
        let (d_h2, g_l3) = self.l3.backward(&cache.h2, d_out);
        let d_z2 = leaky_relu_backward(&cache.z2, &d_h2, self.slope);
        let (d_h1, g_l2) = self.l2.backward(&cache.h1, &d_z2);
        let d_z1 = leaky_relu_backward(&cache.z1, &d_h1, self.slope);
        let (_, g_l1) = self.l1.backward(&cache.x, &d_z1);
        EncoderGrads {
            l1: g_l1,
            l2: g_l2,
            l3: g_l3,
        }
    }

    pub fn tensors(&self) -> Vec<(TensorSpec, &[F])> {
        [("encoder.l1", &self.l1), ("encoder.l2", &self.l2), ("encoder.l3", &self.l3)]
            .into_iter()
            .flat_map(|(name, layer)| {
                [
                    (
                        spec(&format!("{name}.w"), &[layer.out_dim(), layer.in_dim()], true),
                        layer.w.data(),
                    ),
                    (
                        spec(&format!("{name}.b"), &[layer.out_dim()], true),
                        layer.b.as_slice(),
                    ),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorSpec, &mut [F])> {
        let mut out = Vec::new();
        for (name, layer) in [
            ("encoder.l1", &mut self.l1),
            ("encoder.l2", &mut self.l2),
            ("encoder.l3", &mut self.l3),
        ] {
            let (rows, cols) = (layer.out_dim(), layer.in_dim());
            out.push((spec(&format!("{name}.w"), &[rows, cols], true), layer.w.data_mut()));
            out.push((spec(&format!("{name}.b"), &[rows], true), layer.b.as_mut_slice()));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.l1.w.data_mut(),
            self.l1.b.as_mut_slice(),
            self.l2.w.data_mut(),
            self.l2.b.as_mut_slice(),
            self.l3.w.data_mut(),
            self.l3.b.as_mut_slice(),
        ]
    }
}

impl<F: Real> EncoderGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        vec![
            self.l1.dw.data(),
            &self.l1.db,
            self.l2.dw.data(),
            &self.l2.db,
            self.l3.dw.data(),
            &self.l3.db,
        ]
    }
}

/// Single dense layer producing class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<F> {
    pub l: Dense<F>,
}

impl<F: Real> ClassifierHead<F> {
    pub fn init<R: Rng>(in_dim: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            l: Dense::init(in_dim, classes, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.l.param_count()
    }

    pub fn forward(&self, x: &Matrix<F>) -> Matrix<F> {
        self.l.forward(x)
    }

    pub fn backward(&self, x: &Matrix<F>, dy: &Matrix<F>) -> (Matrix<F>, DenseGrad<F>) {
        self.l.backward(x, dy)
    }

    pub fn tensors(&self) -> Vec<(TensorSpec, &[F])> {
        vec![
            (
                spec("head.w", &[self.l.out_dim(), self.l.in_dim()], true),
                self.l.w.data(),
            ),
            (spec("head.b", &[self.l.out_dim()], true), self.l.b.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorSpec, &mut [F])> {
        let (rows, cols) = (self.l.out_dim(), self.l.in_dim());
        vec![
            (spec("head.w", &[rows, cols], true), self.l.w.data_mut()),
            (spec("head.b", &[rows], true), self.l.b.as_mut_slice()),
        ]
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.l.w.data_mut(), self.l.b.as_mut_slice()]
    }
}

/// Full detector forward pass in evaluation mode: embed, concatenate the
/// raw input with its embedding, encode, classify.
pub fn detector_logits<F: Real>(
    x: &Matrix<F>,
    embedding: &EmbeddingNet<F>,
    encoder: &EncoderNet<F>,
    head: &ClassifierHead<F>,
) -> Matrix<F> {
    let emb = embedding.forward_eval(x);
    let joint = Matrix::hconcat(x, &emb);
    head.forward(&encoder.forward_eval(&joint))
}
