use super::ParamSet;
use crate::error::{Error, Result};
use crate::pruning::Mask;

/// Learning-rate step: from `epoch` on, the rate is multiplied by `factor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Milestone {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Clone, Debug)]
pub enum OptimState {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        velocity: Vec<f64>,
        momentum: f64,
        weight_decay: f64,
        milestones: Vec<Milestone>,
        epoch: usize,
    },
}

impl OptimState {
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(params: &ParamSet) -> Self {
        let n = params.values().count();
        OptimState::Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(params: &ParamSet, momentum: f64, weight_decay: f64, milestones: Vec<Milestone>) -> Self {
        OptimState::Sgd {
            velocity: vec![0.0; params.values().count()],
            momentum,
            weight_decay,
            milestones,
            epoch: 0,
        }
    }

    /// Tells the schedule which epoch the following steps belong to.
    pub fn set_epoch(&mut self, e: usize) {
        if let OptimState::Sgd { epoch, .. } = self {
            *epoch = e;
        }
    }

    /// Rate actually applied for a base rate `lr` at the current epoch.
    pub fn scheduled_lr(&self, lr: f64) -> f64 {
        match self {
            OptimState::Adam { .. } => lr,
            OptimState::Sgd { milestones, epoch, .. } => milestones
                .iter()
                .filter(|m| *epoch >= m.epoch)
                .fold(lr, |acc, m| acc * m.factor),
        }
    }

    fn len(&self) -> usize {
        match self {
            OptimState::Adam { m, .. } => m.len(),
            OptimState::Sgd { velocity, .. } => velocity.len(),
        }
    }
}

/// Applies one update in place and re-applies the mask so pruned weights
/// stay exactly zero.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimState,
    lr: f64,
    mask: &Mask,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::config(format!("learning rate {lr} must be positive")));
    }
    mask.check_matches(params)?;
    mask.check_matches(grads)?;
    let n = params.values().count();
    if grads.values().count() != n || state.len() != n {
        return Err(Error::dim("optimizer state does not match parameters"));
    }
    let lr = state.scheduled_lr(lr);
    match state {
        OptimState::Adam {
            m,
            v,
            t,
            beta1,
            beta2,
            eps,
        } => {
            *t += 1;
            let bc1 = 1.0 - beta1.powi(*t as i32);
            let bc2 = 1.0 - beta2.powi(*t as i32);
            for (((p, g), mi), vi) in params.values_mut().zip(grads.values()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + *eps);
            }
        }
        OptimState::Sgd {
            velocity,
            momentum,
            weight_decay,
            ..
        } => {
            for ((p, g), buf) in params.values_mut().zip(grads.values()).zip(velocity.iter_mut()) {
                let g = g + *weight_decay * *p;
                *buf = *momentum * *buf + g;
                *p -= lr * *buf;
            }
        }
    }
    mask.apply(params)?;
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(())
}
