//! SGD with momentum and coupled weight decay, and bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{config, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn default_momentum() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_decay")]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd {
            lr,
            momentum: default_momentum(),
            weight_decay: default_decay(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, rate: f64) -> Self {
        match &mut self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr = rate,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted: it freezes parameters, which tests rely on
        if !(self.lr() >= 0.0) || !self.lr().is_finite() {
            return Err(config(format!("optimizer.lr must be ≥ 0, got {}", self.lr())));
        }
        match *self {
            OptimizerConfig::Sgd {
                momentum, weight_decay, ..
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(config(format!("optimizer.momentum must be in [0, 1), got {momentum}")));
                }
                if !(weight_decay >= 0.0) {
                    return Err(config(format!(
                        "optimizer.weight_decay must be ≥ 0, got {weight_decay}"
                    )));
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(b > 0.0 && b < 1.0) {
                        return Err(config(format!("optimizer.{name} must be in (0, 1), got {b}")));
                    }
                }
                if !(eps > 0.0) {
                    return Err(config(format!("optimizer.eps must be > 0, got {eps}")));
                }
            }
        }
        Ok(())
    }
}

/// `v ← μv + g + λθ; θ ← θ − lr·v`.
pub fn sgd_step<T: Scalar>(theta: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) {
    for ((p, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) {
    let one = T::one();
    let c1 = one - beta1.powi(t as i32);
    let c2 = one - beta2.powi(t as i32);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (one - beta1) * g;
        *v = beta2 * *v + (one - beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Optimizer with per-parameter state shaped like the parameters.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    lr: f64,
    step: u64,
    /// First moment / velocity, then second moment (Adam only), per store entry.
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        let second = match config {
            OptimizerConfig::Adam { .. } => zeros.clone(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Ok(Self {
            config,
            lr: config.lr(),
            step: 0,
            first: zeros,
            second,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply the accumulated gradients of every trainable parameter. No
    /// parameter changes when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let lr = T::of(self.lr);
        let ids = store.trainable_ids();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            match self.config {
                OptimizerConfig::Sgd {
                    momentum, weight_decay, ..
                } => sgd_step(
                    p.value.data_mut(),
                    p.grad.data(),
                    self.first[i].data_mut(),
                    lr,
                    T::of(momentum),
                    T::of(weight_decay),
                ),
                OptimizerConfig::Adam { beta1, beta2, eps, .. } => adam_step(
                    p.value.data_mut(),
                    p.grad.data(),
                    self.first[i].data_mut(),
                    self.second[i].data_mut(),
                    self.step,
                    lr,
                    T::of(beta1),
                    T::of(beta2),
                    T::of(eps),
                ),
            }
        }
        Ok(())
    }

    /// State tensors named after their parameters, for checkpoints.
    pub fn state(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            "opt.step".to_string(),
            Tensor::new(&[2], vec![T::of(self.step as f64), T::of(self.lr)]).unwrap(),
        )];
        for (id, p) in store.iter() {
            out.push((format!("opt.m.{}", p.name), self.first[id.index()].clone()));
            if let Some(v) = self.second.get(id.index()) {
                out.push((format!("opt.v.{}", p.name), v.clone()));
            }
        }
        out
    }

    pub fn load_state(&mut self, store: &ParamStore<T>, state: &[(String, Tensor<T>)]) -> Result<()> {
        let find = |name: &str| state.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let head = find("opt.step").ok_or_else(|| Error::MissingParameter("opt.step".into()))?;
        self.step = head.data()[0].to_f64().unwrap_or(0.0) as u64;
        self.lr = head.data()[1].to_f64().unwrap_or(self.lr);
        for (id, p) in store.iter() {
            let i = id.index();
            let m_name = format!("opt.m.{}", p.name);
            let m = find(&m_name).ok_or(Error::MissingParameter(m_name))?;
            m.expect_shape(p.value.shape())?;
            self.first[i] = m.clone();
            if !self.second.is_empty() {
                let v_name = format!("opt.v.{}", p.name);
                let v = find(&v_name).ok_or(Error::MissingParameter(v_name))?;
                v.expect_shape(p.value.shape())?;
                self.second[i] = v.clone();
            }
        }
        Ok(())
    }

    /// Every state tensor matches its parameter's shape.
    pub fn is_congruent(&self, store: &ParamStore<T>) -> bool {
        store.iter().all(|(id, p)| {
            self.first[id.index()].shape() == p.value.shape()
                && self.second.get(id.index()).is_none_or(|v| v.shape() == p.value.shape())
        })
    }
}
