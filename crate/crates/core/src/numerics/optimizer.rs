//! Adaptive-moment (Adam) updates over [`MlpParams`].

use super::mlp::{MlpGradients, MlpParams};
use crate::error::{shape_err, Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {learning_rate}")));
        }
        let n = params.param_count();
        Ok(Self {
            learning_rate,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {learning_rate}")));
        }
        self.learning_rate = learning_rate;
        Ok(())
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam step. Parameters are left untouched if the update
/// would produce a non-finite value.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut MlpParams,
    gradients: &MlpGradients,
) -> Result<()> {
    if !gradients.matches(params) || state.first_moment.len() != params.param_count() {
        return Err(shape_err("gradient/optimizer shapes do not match parameters"));
    }
    let t = state.step + 1;
    let bias1 = 1.0 - BETA1.powf(t as f64);
    let bias2 = 1.0 - BETA2.powf(t as f64);
    let mut first = state.first_moment.clone();
    let mut second = state.second_moment.clone();
    let mut deltas = Vec::with_capacity(first.len());
    for ((g, m), v) in gradients.flat_iter().zip(&mut first).zip(&mut second) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        deltas.push(-state.learning_rate * m_hat / (v_hat.sqrt() + EPSILON));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite optimizer update".into()));
    }
    params.for_each_param_mut(|p, i| *p += deltas[i]);
    state.first_moment = first;
    state.second_moment = second;
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::mlp::Activation;

    fn net(seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams::init(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], false, &mut rng)
            .unwrap()
    }

    #[test]
    fn zero_gradient_only_advances_step() {
        let mut p = net(1);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 0.01).unwrap();
        let g = MlpGradients::zeros(&p);
        optimizer_step(&mut st, &mut p, &g).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        // From zero moments: m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps).
        let mut p = net(2);
        let before = p.to_flat();
        let lr = 0.05;
        let mut grads = MlpGradients::zeros(&p);
        let n = p.param_count();
        let mut flat_g: Vec<f64> = Vec::with_capacity(n);
        for (k, layer) in grads.layers.iter_mut().enumerate() {
            for (j, w) in layer.weights.iter_mut().enumerate() {
                *w = if (j + k) % 2 == 0 { 0.3 + j as f64 } else { -2.0 };
            }
            for b in layer.bias.iter_mut() {
                *b = 1e-3;
            }
        }
        for l in &grads.layers {
            flat_g.extend(l.weights.iter().chain(&l.bias));
        }
        let mut st = OptimizerState::new(&p, lr).unwrap();
        optimizer_step(&mut st, &mut p, &grads).unwrap();
        for ((a, b), g) in p.to_flat().iter().zip(&before).zip(&flat_g) {
            let expected = -lr * g / (g.abs() + EPSILON);
            assert!((a - b - expected).abs() < 1e-12);
            assert!(((a - b) + lr * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = net(3);
            let mut st = OptimizerState::new(&p, 0.01).unwrap();
            let mut g = MlpGradients::zeros(&p);
            for (i, l) in g.layers.iter_mut().enumerate() {
                l.weights.iter_mut().for_each(|w| *w = 0.1 * (i as f64 + 1.0));
            }
            for _ in 0..5 {
                optimizer_step(&mut st, &mut p, &g).unwrap();
            }
            (p.to_flat(), st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = net(4);
        let other = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            MlpParams::init(&[3, 5, 2], &[Activation::Tanh, Activation::Identity], false, &mut rng)
                .unwrap()
        };
        let mut st = OptimizerState::new(&p, 0.01).unwrap();
        let err = optimizer_step(&mut st, &mut p, &MlpGradients::zeros(&other));
        assert!(matches!(err, Err(Error::Shape(_))));
        assert_eq!(st.step(), 0);
    }
}
