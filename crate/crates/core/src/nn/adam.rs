use super::ParamVector;
use crate::{CoreError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam first/second moment accumulators for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn for_params(params: &ParamVector) -> Self {
        Self::new(params.len())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update in place. A non-finite gradient leaves both the
/// parameters and the optimizer state untouched.
pub fn adam_step(
    params: &mut ParamVector,
    grad: &ParamVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grad.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(CoreError::Shape {
            expected: params.len(),
            got: grad.len(),
            context: "adam_step",
        });
    }
    if lr <= 0.0 {
        return Err(CoreError::Argument(format!("lr must be positive, got {lr}")));
    }
    if !grad.is_finite() {
        return Err(CoreError::NonFinite("adam_step gradient"));
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    let pv = params.values_mut();
    for (i, &g) in grad.values().iter().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        pv[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}
