//! Rollout collection and the PPO training loop.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{dtype_name, CheckpointHeader};
use super::mlp::NetScalar;
use super::policy::PolicyNet;
use super::ppo::{gae, normalize, ppo_update, to_matrix, Adam, Batch, LearnError, PpoConfig, UpdateStats};
use crate::arm::{JointVector, NUM_JOINTS};
use crate::env::reward::Termination;
use crate::env::{EnvError, Shared, VecEnv};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub num_envs: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub init_std: f64,
    pub leaky_slope: f64,
    /// Save a checkpoint every this many iterations; 0 only saves the last.
    pub checkpoint_every: usize,
    /// Stop once the full rolling window exceeds this success rate.
    pub stop_at_success: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            num_envs: 256,
            iterations: 500,
            seed: 0,
            hidden: vec![256, 256],
            init_std: 0.4,
            leaky_slope: 0.01,
            checkpoint_every: 50,
            stop_at_success: None,
        }
    }
}

impl TrainConfig {
    /// Scale of the original long training run.
    pub fn full_scale() -> Self {
        Self {
            num_envs: 4096,
            iterations: 9000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        self.ppo.validate()?;
        if self.num_envs == 0 {
            return Err(LearnError::Config("num_envs must be positive".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(LearnError::Config("init_std must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(LearnError::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub level: u8,
    pub env_steps: u64,
    pub episodes: u64,
    pub successes: u64,
    /// Success rate over the curriculum window.
    pub rolling_success: f64,
    pub window: usize,
    /// Mean return of episodes finished this iteration (NaN if none).
    pub mean_return: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
    pub update: UpdateStats,
    pub terminations: [u64; 8],
}

pub const METRICS_HEADER: &str = "iteration,level,env_steps,episodes,successes,rolling_success,window,mean_return,mean_length,mean_reward,loss,policy_loss,value_loss,entropy,approx_kl,clip_fraction,grad_norm,aborted,T1,T2,T3,T4,T5,T6,T7,fault";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.update.loss;
        let mut f: Vec<String> = vec![
            self.iteration.to_string(),
            self.level.to_string(),
            self.env_steps.to_string(),
            self.episodes.to_string(),
            self.successes.to_string(),
            self.rolling_success.to_string(),
            self.window.to_string(),
            self.mean_return.to_string(),
            self.mean_length.to_string(),
            self.mean_reward.to_string(),
            l.total.to_string(),
            l.policy.to_string(),
            l.value.to_string(),
            l.entropy.to_string(),
            l.approx_kl.to_string(),
            l.clip_fraction.to_string(),
            self.update.grad_norm.to_string(),
            (self.update.aborted as u8).to_string(),
        ];
        f.extend(self.terminations.iter().map(|c| c.to_string()));
        f.join(",")
    }
}

fn term_index(t: Termination) -> usize {
    Termination::ALL.iter().position(|&x| x == t).unwrap()
}

/// PPO learner driving a [`VecEnv`].
pub struct Trainer<T: NetScalar> {
    pub config: TrainConfig,
    pub net: PolicyNet<T>,
    pub adam: Adam,
    pub venv: VecEnv,
    /// Physical joint rate of one action unit.
    pub action_scale: [f64; NUM_JOINTS],
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    iteration: u64,
    env_steps: u64,
}

impl<T: NetScalar> Trainer<T> {
    pub fn new(config: TrainConfig, shared: Arc<Shared>) -> Result<Self, EnvError> {
        config.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let obs_len = shared.obs_len();
        let net = PolicyNet::new(obs_len, NUM_JOINTS, &config.hidden, config.init_std, config.leaky_slope, &mut rng);
        let action_scale = shared.config.arm.vel_max().to_array();
        let mut venv = VecEnv::new(shared, config.num_envs, config.seed.wrapping_add(1))?;
        let obs = venv.reset_all()?;
        Ok(Self {
            adam: Adam::new(net.num_params(), config.ppo.learning_rate),
            config,
            net,
            venv,
            action_scale,
            rng,
            obs,
            iteration: 0,
            env_steps: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            layout_hash: self.venv.shared().layout.hash(),
            obs_len: self.venv.obs_len(),
            act_dim: NUM_JOINTS,
            hidden: self.config.hidden.clone(),
            leaky_slope: self.config.leaky_slope,
            dtype: dtype_name::<T>().into(),
            action_scale: self.action_scale.to_vec(),
            ppo: self.config.ppo.clone(),
            iteration: self.iteration,
            seed: self.config.seed,
        }
    }

    /// Collect one rollout, update the policy and report metrics.
    pub fn iterate(&mut self) -> Result<IterationMetrics, EnvError> {
        let cfg = self.config.ppo.clone();
        let n_env = self.venv.num_envs();
        let obs_len = self.venv.obs_len();
        let steps = cfg.rollout_len;
        let mut obs_buf = Vec::with_capacity(steps * n_env * obs_len);
        let mut act_buf: Vec<T> = Vec::with_capacity(steps * n_env * NUM_JOINTS);
        let mut logp_buf = Vec::with_capacity(steps * n_env);
        let mut values = vec![0.0; steps * n_env];
        let mut rewards = vec![0.0; steps * n_env];
        let mut dones = vec![false; steps * n_env];
        let mut m = IterationMetrics {
            iteration: self.iteration + 1,
            level: self.venv.curriculum.level(),
            env_steps: 0,
            episodes: 0,
            successes: 0,
            rolling_success: 0.0,
            window: 0,
            mean_return: f64::NAN,
            mean_length: f64::NAN,
            mean_reward: 0.0,
            update: UpdateStats::default(),
            terminations: [0; 8],
        };
        let (mut ret_sum, mut len_sum) = (0.0, 0.0);
        for t in 0..steps {
            let obs_m: Array2<T> = to_matrix(&self.obs, obs_len);
            let (actions, logp, v) = self.net.sample(obs_m.view(), &mut self.rng);
            let cmds: Vec<JointVector<f64>> = actions
                .rows()
                .into_iter()
                .map(|r| JointVector::from_array(std::array::from_fn(|j| r[j].as_f64() * self.action_scale[j])))
                .collect();
            let out = self.venv.step_batch(&cmds)?;
            obs_buf.extend_from_slice(&self.obs);
            act_buf.extend(actions.iter().copied());
            logp_buf.extend(logp.iter().copied());
            for e in 0..n_env {
                let k = t * n_env + e;
                values[k] = v[e].as_f64();
                rewards[k] = out.rewards[e];
                dones[k] = out.dones[e];
                let info = &out.infos[e];
                if let Some(term) = info.termination {
                    m.terminations[term_index(term)] += 1;
                    m.successes += term.is_success() as u64;
                }
                if let Some((ret, len)) = info.episode {
                    m.episodes += 1;
                    ret_sum += ret;
                    len_sum += len as f64;
                }
            }
            self.obs = out.obs;
        }
        let last_obs: Array2<T> = to_matrix(&self.obs, obs_len);
        let last_v = self.net.values(last_obs.view());
        let mut adv = vec![0.0; steps * n_env];
        let mut ret = vec![0.0; steps * n_env];
        let column = |buf: &[f64], e: usize| (0..steps).map(|t| buf[t * n_env + e]).collect::<Vec<_>>();
        for e in 0..n_env {
            let d: Vec<bool> = (0..steps).map(|t| dones[t * n_env + e]).collect();
            let (a, r) = gae(
                &column(&rewards, e),
                &column(&values, e),
                &d,
                last_v[e].as_f64(),
                cfg.gamma,
                cfg.lambda,
            )
            .map_err(|err| EnvError::Config(err.to_string()))?;
            for t in 0..steps {
                adv[t * n_env + e] = a[t];
                ret[t * n_env + e] = r[t];
            }
        }
        if cfg.normalize_advantages {
            normalize(&mut adv);
        }
        let rows = steps * n_env;
        let batch = Batch {
            obs: to_matrix(&obs_buf, obs_len),
            actions: Array2::from_shape_vec((rows, NUM_JOINTS), act_buf).expect("action rows"),
            old_log_prob: Array1::from_vec(logp_buf),
            advantages: adv.iter().map(|&a| T::lit(a)).collect(),
            returns: ret.iter().map(|&r| T::lit(r)).collect(),
        };
        m.update = ppo_update(&mut self.net, &mut self.adam, &batch, &cfg, &mut self.rng);
        self.iteration += 1;
        self.env_steps += rows as u64;
        m.env_steps = self.env_steps;
        m.mean_reward = rewards.iter().sum::<f64>() / rows as f64;
        if m.episodes > 0 {
            m.mean_return = ret_sum / m.episodes as f64;
            m.mean_length = len_sum / m.episodes as f64;
        }
        m.rolling_success = self.venv.curriculum.success_rate();
        m.window = self.venv.curriculum.window_len();
        Ok(m)
    }

    /// True once the full rolling window exceeds the configured target.
    pub fn reached_target(&self) -> bool {
        let c = &self.venv.curriculum;
        self.config
            .stop_at_success
            .is_some_and(|s| c.window_len() == c.capacity() && c.success_rate() > s)
    }

    /// Run until the iteration budget or the success target is reached.
    pub fn run(
        &mut self,
        mut on_iteration: impl FnMut(&Self, &IterationMetrics) -> Result<(), EnvError>,
    ) -> Result<Vec<IterationMetrics>, EnvError> {
        let mut all = Vec::new();
        while (self.iteration as usize) < self.config.iterations {
            let m = self.iterate()?;
            on_iteration(self, &m)?;
            all.push(m);
            if self.reached_target() {
                break;
            }
        }
        Ok(all)
    }
}
