use super::{AutodiffError, Tensor};

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

impl AdamState {
    pub fn new(params: &[&Tensor], cfg: AdamConfig) -> Result<Self, AutodiffError> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(cfg.beta1) || !in_unit(cfg.beta2) || cfg.epsilon <= 0.0 || cfg.learning_rate < 0.0 {
            return Err(AutodiffError::InvalidHyperparameter(format!("{cfg:?}")));
        }
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(AdamState {
            step_count: 0,
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            first_moment: zeros(),
            second_moment: zeros(),
        })
    }

    /// One Adam update over `params`, which must all carry gradients.
    /// Gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), AutodiffError> {
        if params.len() != self.first_moment.len() {
            return Err(AutodiffError::StateMismatch {
                expected: self.first_moment.len(),
                got: params.len(),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first_moment[i].len() {
                return Err(AutodiffError::StateMismatch {
                    expected: self.first_moment[i].len(),
                    got: p.numel(),
                });
            }
            if p.grad().is_none() {
                return Err(AutodiffError::MissingGrad(i));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<(), AutodiffError> {
    state.step(params)
}
