use super::tensor::DiffTensor;
use crate::error::{shape_err, Result, VictrError};

/// `lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi step / total_steps))`, no warmup.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(VictrError::Range(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: usize) -> Self {
        Self {
            lr_max,
            lr_min,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW moments and schedule position.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Whether decoupled weight decay applies to each parameter.
    pub decay: Vec<bool>,
    pub step_count: usize,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[DiffTensor]) -> Self {
        Self {
            config,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            decay: vec![true; params.len()],
            step_count: 0,
        }
    }

    pub fn with_decay_mask(mut self, decay: Vec<bool>) -> Self {
        self.decay = decay;
        self
    }

    pub fn current_lr(&self) -> Result<f64> {
        let c = &self.config;
        cosine_lr(self.step_count, c.total_steps, c.lr_max, c.lr_min)
    }
}

/// One AdamW update of every parameter from its accumulated `grad`
/// (missing gradients count as zero). Returns the learning rate used.
pub fn adam_step(params: &mut [DiffTensor], state: &mut OptimizerState) -> Result<f64> {
    if params.len() != state.first_moment.len() || params.len() != state.decay.len() {
        return shape_err(format!(
            "{} parameters but optimizer tracks {}",
            params.len(),
            state.first_moment.len()
        ));
    }
    if state.step_count >= state.config.total_steps {
        return Err(VictrError::Range(format!(
            "optimizer already took all {} steps",
            state.config.total_steps
        )));
    }
    let lr = state.current_lr()?;
    let c = state.config.clone();
    let t = (state.step_count + 1) as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.first_moment[i], &mut state.second_moment[i]);
        if m.len() != p.numel() {
            return shape_err(format!("moment {i} has {} entries for {} values", m.len(), p.numel()));
        }
        if let Some(g) = &p.grad {
            if g.len() != p.numel() {
                return shape_err(format!("gradient {i} has wrong length"));
            }
        }
        let decay = if state.decay[i] { c.weight_decay } else { 0.0 };
        for j in 0..p.values.len() {
            let g = p.grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.values[j] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + decay * p.values[j]);
        }
    }
    state.step_count += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5).unwrap(), 1e-3);
        assert_abs_diff_eq!(cosine_lr(100, 100, 1e-3, 1e-5).unwrap(), 1e-5, epsilon = 1e-18);
        assert_abs_diff_eq!(cosine_lr(50, 100, 1e-3, 1e-5).unwrap(), (1e-3 + 1e-5) / 2.0, epsilon = 1e-18);
        assert!(matches!(cosine_lr(101, 100, 1e-3, 1e-5), Err(VictrError::Range(_))));
    }

    fn one_param(v: f64, g: f64) -> Vec<DiffTensor> {
        let mut p = DiffTensor::new(vec![1], vec![v]).unwrap();
        p.grad = Some(vec![g]);
        vec![p]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = one_param(0.7, 0.0);
        let mut cfg = AdamWConfig::new(0.1, 0.01, 10);
        cfg.weight_decay = 0.0;
        let mut st = OptimizerState::new(cfg, &params);
        adam_step(&mut params, &mut st).unwrap();
        assert_eq!(params[0].values[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3, -2.0, 1e-3] {
            let mut params = one_param(1.0, g);
            let mut cfg = AdamWConfig::new(0.05, 0.0, 10);
            cfg.weight_decay = 0.0;
            let mut st = OptimizerState::new(cfg, &params);
            adam_step(&mut params, &mut st).unwrap();
            assert_abs_diff_eq!(params[0].values[0], 1.0 - 0.05 * g.signum(), epsilon = 1e-6);
        }
    }

    #[test]
    fn exhausted_schedule_is_an_error() {
        let mut params = one_param(1.0, 1.0);
        let mut st = OptimizerState::new(AdamWConfig::new(0.1, 0.0, 1), &params);
        adam_step(&mut params, &mut st).unwrap();
        assert!(adam_step(&mut params, &mut st).is_err());
    }
}
