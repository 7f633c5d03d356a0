use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::params::{Gradients, ModelParams};
use super::real::Real;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
        }
    }
}

/// One AdamW update: `θ ← θ(1 - η·wd)` followed by the bias-corrected Adam
/// step.
pub fn adam_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
    hyper: &AdamHyper,
) -> Result<()> {
    let n = params.len();
    if grads.data.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(domain("parameter, gradient and moment shapes differ"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let decay = F::c(1.0 - hyper.learning_rate * hyper.weight_decay);
    let (b1, b2) = (F::c(hyper.beta1), F::c(hyper.beta2));
    let (ob1, ob2) = (F::c(1.0 - hyper.beta1), F::c(1.0 - hyper.beta2));
    let step_size = F::c(hyper.learning_rate / bc1);
    let inv_bc2_sqrt = F::c(1.0 / bc2.sqrt());
    let eps = F::c(hyper.eps);
    for (((p, &g), m), v) in params
        .data
        .iter_mut()
        .zip(&grads.data)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + ob1 * g;
        *v = b2 * *v + ob2 * g * g;
        let denom = v.sqrt() * inv_bc2_sqrt + eps;
        *p = *p * decay - step_size * *m / denom;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    fn tiny() -> ModelParams<f64> {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers: 1,
            ..ModelConfig::standard(5, 3)
        };
        ModelParams::init(&cfg).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_keeps_parameters() {
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let zero = Gradients::zeros(p.len());
        adam_step(&mut p, &zero, &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_against_the_gradient_sign() {
        let mut p = tiny();
        let before = p.clone();
        let grads = Gradients {
            data: (0..p.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect(),
        };
        let mut st = AdamState::new(p.len());
        adam_step(&mut p, &grads, &mut st, &AdamHyper::default()).unwrap();
        for ((a, b), g) in p.data().iter().zip(before.data()).zip(&grads.data) {
            let delta = a - b;
            if *g == 0.0 {
                assert_eq!(delta, 0.0);
            } else {
                assert_eq!(delta.signum(), -g.signum());
                // first Adam step has magnitude close to the learning rate
                assert!((delta.abs() - 1e-3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decay_shrinks_parameters_multiplicatively() {
        let mut p = tiny();
        let before = p.clone();
        let hyper = AdamHyper {
            weight_decay: 1.0,
            ..AdamHyper::default()
        };
        let mut st = AdamState::new(p.len());
        let zero = Gradients::zeros(p.len());
        adam_step(&mut p, &zero, &mut st, &hyper).unwrap();
        for (a, b) in p.data().iter().zip(before.data()) {
            assert!((a - b * (1.0 - 1e-3)).abs() < 1e-15);
        }
    }
}
