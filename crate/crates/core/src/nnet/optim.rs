use super::Real;
use crate::error::{Error, Result};

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &[Vec<T>]) -> Self {
        let z: Vec<Vec<T>> = params.iter().map(|p| vec![T::ZERO; p.len()]).collect();
        Self { m: z.clone(), v: z }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) -> Result<()> {
    if t < 1 {
        return Err(Error::Parameter("Adam step counter starts at 1".into()));
    }
    let shapes_match = |bufs: &[Vec<T>]| {
        bufs.len() == params.len() && bufs.iter().zip(params.iter()).all(|(b, p)| b.len() == p.len())
    };
    if !shapes_match(grads) || !shapes_match(&state.m) || !shapes_match(&state.v) {
        return Err(Error::Shape("Adam state, gradients and weights disagree".into()));
    }
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (ob1, ob2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + ob1 * g[j];
            v[j] = b2 * v[j] + ob2 * g[j] * g[j];
            let m_hat = m[j].to_f64() / c1;
            let v_hat = v[j].to_f64() / c2;
            p[j] -= T::from_f64(lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

/// Adam with its hyper-parameters and step counter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Vec<T>], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: AdamState::zeros_like(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn state(&self) -> &AdamState<T> {
        &self.state
    }

    pub fn step(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>]) -> Result<()> {
        self.t += 1;
        adam_step(params, grads, &mut self.state, self.lr, self.beta1, self.beta2, self.eps, self.t)
    }
}
