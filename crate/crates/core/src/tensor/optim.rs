use super::network::{Gradients, LayerParams};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Adam moment estimates for every parameter, plus hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub first_moment: Vec<LayerParams<T>>,
    pub second_moment: Vec<LayerParams<T>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zeroed accumulators shaped like `params`, default betas and epsilon.
    pub fn new(params: &[LayerParams<T>], learning_rate: f64) -> Self {
        let zeros: Vec<LayerParams<T>> = params
            .iter()
            .map(|p| LayerParams::zeros(p.weights.len(), p.bias.len()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

fn same_layout<T, U>(a: &[LayerParams<T>], b: &[LayerParams<U>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.weights.len() == y.weights.len() && x.bias.len() == y.bias.len())
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [LayerParams<T>],
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if !same_layout(params, &grads.0)
        || !same_layout(params, &state.first_moment)
        || !same_layout(params, &state.second_moment)
    {
        return shape_err("optimizer state, gradients and parameters disagree in shape");
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let one = T::one();
    let lr = T::from_f64_lossy(state.learning_rate);
    let eps = T::from_f64_lossy(state.epsilon);
    let c1 = T::from_f64_lossy(1.0 - state.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - state.beta2.powi(t));
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads.0)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for (((p, &g), m), v) in p
            .iter_mut()
            .zip(g.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
