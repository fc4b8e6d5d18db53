//! Parameter update rules. Both optimizers operate on parallel lists of
//! parameter and gradient slices (one entry per tensor).

use serde::{Deserialize, Serialize};

use super::{NeuralError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(format!("unknown optimizer {other:?} (expected adam or sgd)")),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step to match the tensor list it is used with.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    beta1: F,
    beta2: F,
    eps: F,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new() -> Self {
        Self {
            beta1: F::from_f64(ADAM_BETA1),
            beta2: F::from_f64(ADAM_BETA2),
            eps: F::from_f64(ADAM_EPS),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut [F]],
        grads: &[&[F]],
        lr: F,
    ) -> Result<(), NeuralError> {
        check_shapes(params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(NeuralError::ShapeMismatch(
                "optimizer state does not match parameter tensors".to_string(),
            ));
        }

        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (one - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (one - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

impl<F: Real> Default for Adam<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Plain gradient descent: `p -= lr * g`.
#[derive(Debug, Clone, Default)]
pub struct Sgd;

impl Sgd {
    pub fn step<F: Real>(
        &mut self,
        params: &mut [&mut [F]],
        grads: &[&[F]],
        lr: F,
    ) -> Result<(), NeuralError> {
        check_shapes(params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pk, &gk) in p.iter_mut().zip(*g) {
                *pk -= lr * gk;
            }
        }
        Ok(())
    }
}

/// Either update rule behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer<F> {
    Adam(Adam<F>),
    Sgd(Sgd),
}

impl<F: Real> Optimizer<F> {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new()),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut [F]],
        grads: &[&[F]],
        lr: F,
    ) -> Result<(), NeuralError> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads, lr),
            Optimizer::Sgd(s) => s.step(params, grads, lr),
        }
    }
}

fn check_shapes<F: Real>(params: &[&mut [F]], grads: &[&[F]]) -> Result<(), NeuralError> {
    if params.len() != grads.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{} parameter tensors vs {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "tensor {i}: {} parameters vs {} gradients",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}
