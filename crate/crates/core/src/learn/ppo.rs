//! Generalized advantage estimation, the clipped PPO objective and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::NetScalar;
use super::policy::PolicyNet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("sequence lengths differ: {0}")]
    Length(String),
    #[error("invalid PPO configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Steps per environment per update.
    pub rollout_len: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.005,
            epochs: 5,
            minibatches: 4,
            rollout_len: 24,
            gamma: 0.99,
            lambda: 0.95,
            max_grad_norm: Some(1.0),
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let pos = [
            ("learning_rate", self.learning_rate),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(LearnError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(LearnError::Config("clip must lie in (0, 1)".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.rollout_len == 0 {
            return Err(LearnError::Config("epochs, minibatches and rollout_len must be positive".into()));
        }
        if self.gamma > 1.0 || self.lambda > 1.0 {
            return Err(LearnError::Config("gamma and lambda must not exceed 1".into()));
        }
        Ok(())
    }
}

/// Advantages and returns of one trajectory segment.
///
/// `values[t]` estimates the state before step `t`; `last_value` the state
/// after the final step. `dones[t]` cuts the bootstrap after step `t`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(LearnError::Length(format!(
            "rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shift to zero mean and scale to unit standard deviation in place.
pub fn normalize(x: &mut [f64]) {
    if x.len() < 2 {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for v in x {
        *v = (*v - mean) / std;
    }
}

/// Samples of one PPO update, one row per transition.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub obs: Array2<T>,
    pub actions: Array2<T>,
    pub old_log_prob: Array1<T>,
    pub advantages: Array1<T>,
    pub returns: Array1<T>,
}

impl<T: NetScalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch<T> {
        Batch {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            old_log_prob: self.old_log_prob.select(Axis(0), idx),
            advantages: self.advantages.select(Axis(0), idx),
            returns: self.returns.select(Axis(0), idx),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Per-sample clipped surrogate `−min(r·A, clip(r)·A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    -(ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// PPO loss on a minibatch and its gradient in [`PolicyNet::flat_params`] order.
pub fn ppo_loss<T: NetScalar>(net: &PolicyNet<T>, batch: &Batch<T>, cfg: &PpoConfig) -> (LossStats, Vec<T>) {
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let fwd = net.forward_cached(batch.obs.view());
    let act_dim = net.act_dim();
    let std: Vec<f64> = net.log_std.iter().map(|l| l.as_f64().exp()).collect();
    let mut d_means = Array2::<T>::zeros((n, act_dim));
    let mut d_values = Array2::<T>::zeros((n, 1));
    let mut d_log_std = vec![0.0f64; act_dim];
    let mut stats = LossStats::default();
    for i in 0..n {
        let mean = fwd.means.row(i);
        let act = batch.actions.row(i);
        let logp = net
            .log_prob(mean.as_slice().unwrap(), act.as_slice().unwrap())
            .as_f64();
        let old = batch.old_log_prob[i].as_f64();
        let adv = batch.advantages[i].as_f64();
        let ratio = (logp - old).exp();
        stats.policy += clipped_surrogate(ratio, adv, cfg.clip) * inv_n;
        stats.approx_kl += ((ratio - 1.0) - (logp - old)) * inv_n;
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clip_fraction += inv_n;
        }
        let clipped = (adv > 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip);
        // dL/dlogp = dL/dr · r
        let g = if clipped { 0.0 } else { -adv * ratio * inv_n };
        if g != 0.0 {
            for j in 0..act_dim {
                let z = (act[j].as_f64() - mean[j].as_f64()) / std[j];
                d_means[(i, j)] = T::lit(g * z / std[j]);
                d_log_std[j] += g * (z * z - 1.0);
            }
        }
        let err = fwd.values[i].as_f64() - batch.returns[i].as_f64();
        stats.value += err * err * inv_n;
        d_values[(i, 0)] = T::lit(cfg.value_coef * 2.0 * err * inv_n);
    }
    stats.entropy = net.entropy().as_f64();
    stats.total = stats.policy + cfg.value_coef * stats.value - cfg.entropy_coef * stats.entropy;
    for g in &mut d_log_std {
        *g -= cfg.entropy_coef;
    }
    let mut grad = vec![T::ZERO; net.num_params()];
    let na = net.actor.num_params();
    let nc = net.critic.num_params();
    net.actor.backward(&fwd.actor, d_means.view(), &mut grad[..na]);
    net.critic.backward(&fwd.critic, d_values.view(), &mut grad[na..na + nc]);
    for (g, d) in grad[na + nc..].iter_mut().zip(&d_log_std) {
        *g = T::lit(*d);
    }
    (stats, grad)
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<T: NetScalar>(&mut self, net: &mut PolicyNet<T>, grad: &[T]) {
        self.t += 1;
        let b1 = 1.0 - self.beta1.powi(self.t as i32);
        let b2 = 1.0 - self.beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let (beta1, beta2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        net.for_each_param(|i, p| {
            let g = grad[i].as_f64();
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let step = lr * (m[i] / b1) / ((v[i] / b2).sqrt() + eps);
            *p -= T::lit(step);
        });
    }
}

/// Aggregate statistics of one [`ppo_update`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossStats,
    pub grad_norm: f64,
    /// The update hit a non-finite loss or gradient and was rolled back.
    pub aborted: bool,
}

/// `epochs × minibatches` Adam steps on shuffled minibatches of `batch`.
///
/// A non-finite loss or gradient restores the parameters and optimizer
/// state from before the update.
pub fn ppo_update<T: NetScalar, R: Rng + ?Sized>(
    net: &mut PolicyNet<T>,
    adam: &mut Adam,
    batch: &Batch<T>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> UpdateStats {
    let backup = (net.clone(), adam.clone());
    let n = batch.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mb = n.div_ceil(cfg.minibatches).max(1);
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let sub = batch.select(chunk);
            let (loss, mut grad) = ppo_loss(net, &sub, cfg);
            let norm = grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
            if !loss.total.is_finite() || !norm.is_finite() {
                *net = backup.0;
                *adam = backup.1;
                return UpdateStats {
                    aborted: true,
                    ..stats
                };
            }
            if let Some(max) = cfg.max_grad_norm {
                if norm > max {
                    let s = T::lit(max / norm);
                    for g in &mut grad {
                        *g *= s;
                    }
                }
            }
            adam.step(net, &grad);
            count += 1.0;
            let w = 1.0 / count;
            let l = &mut stats.loss;
            l.total += (loss.total - l.total) * w;
            l.policy += (loss.policy - l.policy) * w;
            l.value += (loss.value - l.value) * w;
            l.entropy += (loss.entropy - l.entropy) * w;
            l.approx_kl += (loss.approx_kl - l.approx_kl) * w;
            l.clip_fraction += (loss.clip_fraction - l.clip_fraction) * w;
            stats.grad_norm += (norm - stats.grad_norm) * w;
        }
    }
    stats
}

/// Row-major `(rows, cols)` matrix from a flat buffer.
pub fn to_matrix<T: NetScalar>(data: &[f64], cols: usize) -> Array2<T> {
    Array2::from_shape_fn((data.len() / cols, cols), |(i, j)| T::lit(data[i * cols + j]))
}

/// Rows of `m` as `f64` vectors.
pub fn rows_f64<T: NetScalar>(m: ArrayView2<T>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}
