use crate::error::{Error, Result};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub step_count: u64,
    pub first_moment: Vec<Vec<F>>,
    pub second_moment: Vec<Vec<F>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &[Tensor<F>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
        AdamState {
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }
}

/// One bias-corrected Adam update. Gradients are read, never cleared.
pub fn adam_step<F: Real>(params: &mut [Tensor<F>], state: &mut AdamState<F>) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} parameters, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::Contract(format!("parameter {i} has no gradient")));
        }
        if state.first_moment[i].len() != p.numel() {
            return Err(Error::shape("adam_step", p.shape(), &[state.first_moment[i].len()]));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (F::lit(state.beta1), F::lit(state.beta2));
    let (one_b1, one_b2) = (F::lit(1.0 - state.beta1), F::lit(1.0 - state.beta2));
    let correction1 = F::lit(1.0 - state.beta1.powi(t));
    let correction2 = F::lit(1.0 - state.beta2.powi(t));
    let lr = F::lit(state.learning_rate);
    let eps = F::lit(state.epsilon);

    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().expect("checked above").to_vec();
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(params: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = F::lit(max_norm / total);
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32, g: f32) -> Tensor<f32> {
        let mut p = Tensor::new(&[1], vec![v]).unwrap();
        p.accumulate_grad(&[g]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![scalar_param(1.5, 0.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut params, &mut state).unwrap();
        }
        assert_eq!(params[0].data(), &[1.5]);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![scalar_param(0.0, 1.0)];
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        adam_step(&mut params, &mut state).unwrap();
        assert_eq!(params[0].data(), &[-0.01]);
        assert_eq!(params[0].grad().unwrap(), &[1.0], "grads untouched");
    }

    #[test]
    fn converges_on_quadratic() {
        // independent scalar recursion of the same update rule
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (p - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }

        let mut params = vec![Tensor::new(&[1], vec![0.0f64]).unwrap()];
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        for _ in 0..100 {
            let g = 2.0 * (params[0].data()[0] - 3.0);
            params[0].clear_grad();
            params[0].accumulate_grad(&[g]).unwrap();
            adam_step(&mut params, &mut state).unwrap();
        }
        let got = params[0].data()[0];
        assert!((got - 3.0).abs() < 0.05, "got {got}");
        assert!((got - p).abs() < 1e-12, "engine {got} vs recursion {p}");
    }

    #[test]
    fn missing_grad_is_contract_violation() {
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        assert!(matches!(
            adam_step(&mut params, &mut state),
            Err(Error::Contract(_))
        ));
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut params = vec![scalar_param(0.0, 3.0), scalar_param(0.0, 4.0)];
        let before = clip_grad_norm(&mut params, 1.0);
        assert!((before - 5.0).abs() < 1e-6);
        assert!((params[0].grad().unwrap()[0] - 0.6).abs() < 1e-6);
        assert!((params[1].grad().unwrap()[0] - 0.8).abs() < 1e-6);
    }
}
