//! AdamW with decoupled weight decay, and the linear warmup/decay
//! learning-rate schedule.

use super::TrainConfig;

/// First/second moment buffers for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update in place. `t` is the 1-based step count used for
/// bias correction; `lr_t` is the already-scheduled learning rate.
///
/// Weight decay is decoupled: it multiplies the parameters directly and
/// never enters the moment estimates, so a zero-gradient step shrinks
/// parameters by exactly `1 - lr_t * weight_decay`.
pub fn adamw_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    t: u64,
    lr_t: f64,
    cfg: &TrainConfig,
) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), state.m.len());
    debug_assert!(t >= 1);
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..param.len() {
        if cfg.weight_decay > 0.0 {
            param[i] *= 1.0 - lr_t * cfg.weight_decay;
        }
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr_t * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Linear warmup then linear decay: ramps 0 -> `base_lr` over
/// `floor(warmup_ratio * total)` steps, then decays to 0 at
/// `step == total`.
pub fn linear_schedule(step: u64, total: u64, warmup_ratio: f64, base_lr: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warmup = (warmup_ratio * total as f64).floor() as u64;
    if warmup > 0 && step <= warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        base_lr * (total - step) as f64 / (total - warmup) as f64
    }
}
