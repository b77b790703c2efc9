//! Episode rollouts for evaluation and the size × soil success grid.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::NetScalar;
use super::oracle::{OracleConfig, OracleInput, ScriptedOracle};
use super::policy::PolicyNet;
use crate::arm::{JointVector, NUM_JOINTS};
use crate::env::cache::ResetCache;
use crate::env::log::{Trajectory, TrajectoryRecorder};
use crate::env::reward::Termination;
use crate::env::{Env, EnvConfig, EnvError, EpisodeParams, RockLibrary, RockPool, Shared, SoilMode};
use crate::rockgen::{SizeClass, Split};

/// Anything that maps the environment state to a joint-rate command.
pub trait Controller {
    fn reset(&mut self);
    fn act(&mut self, env: &Env) -> JointVector<f64>;
}

impl Controller for ScriptedOracle {
    fn reset(&mut self) {
        ScriptedOracle::reset(self);
    }

    fn act(&mut self, env: &Env) -> JointVector<f64> {
        ScriptedOracle::act(self, &OracleInput::from_env(env))
    }
}

/// Deterministic policy: the action mean, scaled to joint rates.
#[derive(Clone, Debug)]
pub struct PolicyController<T> {
    pub net: PolicyNet<T>,
    pub action_scale: [f64; NUM_JOINTS],
}

impl<T: NetScalar> Controller for PolicyController<T> {
    fn reset(&mut self) {}

    fn act(&mut self, env: &Env) -> JointVector<f64> {
        let obs = env.observation();
        let x = Array2::from_shape_fn((1, obs.len()), |(_, j)| T::lit(obs[j]));
        let mean = self.net.means(x.view());
        JointVector::from_array(std::array::from_fn(|j| mean[(0, j)].as_f64() * self.action_scale[j]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub termination: Termination,
    pub episode_return: f64,
    pub steps: u32,
    pub params: EpisodeParams,
}

/// Play one episode from `params` to termination.
pub fn run_episode(env: &mut Env, ctrl: &mut dyn Controller, params: &EpisodeParams) -> Result<EpisodeResult, EnvError> {
    env.reset_with(params)?;
    ctrl.reset();
    loop {
        let a = ctrl.act(env);
        let out = env.step(&a)?;
        if let Some(t) = out.termination {
            return Ok(EpisodeResult {
                termination: t,
                episode_return: env.episode_return(),
                steps: env.steps(),
                params: params.clone(),
            });
        }
    }
}

/// Play one episode and keep its trajectory log.
pub fn record_episode(
    env: &mut Env,
    ctrl: &mut dyn Controller,
    params: &EpisodeParams,
) -> Result<(EpisodeResult, Trajectory), EnvError> {
    env.set_recorder(Some(TrajectoryRecorder::new()));
    let res = run_episode(env, ctrl, params);
    let mut rec = env.take_recorder().unwrap_or_default();
    rec.finish();
    let res = res?;
    let traj = rec
        .finished
        .pop()
        .ok_or_else(|| EnvError::Config("episode produced no trajectory".into()))?;
    Ok((res, traj))
}

/// Episode parameters for `episodes` evaluation runs, deterministic in `seed`.
pub fn sample_episodes(shared: &Arc<Shared>, level: u8, episodes: usize, seed: u64) -> Result<Vec<EpisodeParams>, EnvError> {
    let mut env = Env::new(Arc::clone(shared), seed)?;
    (0..episodes).map(|_| env.sample_params(level)).collect()
}

/// Run `params` in parallel with a fresh controller per episode.
pub fn evaluate<C: Controller + Send>(
    shared: &Arc<Shared>,
    params: &[EpisodeParams],
    make: impl Fn() -> C + Sync,
) -> Result<Vec<EpisodeResult>, EnvError> {
    params
        .par_iter()
        .map(|p| {
            let mut env = Env::new(Arc::clone(shared), 0)?;
            let mut c = make();
            run_episode(&mut env, &mut c, p)
        })
        .collect()
}

pub fn success_rate(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.termination.is_success()).count() as f64 / results.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub size: SizeClass,
    pub soil: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub average: f64,
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,soil,episodes,successes,success_rate\n");
        for c in &self.cells {
            s += &format!("{},{},{},{},{}\n", c.size.name(), c.soil, c.episodes, c.successes, c.success_rate);
        }
        s += &format!("average,,,,{}\n", self.average);
        s
    }

    /// Console table with the same numbers as [`GridReport::to_csv`].
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8}{:<8}{:>10}{:>11}{:>14}\n", "size", "soil", "episodes", "successes", "success_rate");
        for c in &self.cells {
            s += &format!(
                "{:<8}{:<8}{:>10}{:>11}{:>14}\n",
                c.size.name(),
                c.soil,
                c.episodes,
                c.successes,
                c.success_rate
            );
        }
        s += &format!("{:<8}{:<8}{:>10}{:>11}{:>14}\n", "average", "", "", "", self.average);
        s
    }
}

/// Which controller the grid evaluates.
pub enum GridPolicy<'a, T> {
    Oracle(OracleConfig),
    Policy(&'a PolicyController<T>),
}

/// Success rates over {small, large} × {soft, hard}.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_grid<T: NetScalar>(
    base: &EnvConfig,
    library: &RockLibrary,
    caches: &[ResetCache],
    split: Option<Split>,
    level: u8,
    episodes: usize,
    seed: u64,
    policy: &GridPolicy<T>,
) -> Result<GridReport, EnvError> {
    let mut cells = Vec::new();
    for size in [SizeClass::Small, SizeClass::Large] {
        for (soil, mode) in [("soft", SoilMode::Soft), ("hard", SoilMode::Hard)] {
            let mut config = base.clone();
            config.soil = mode;
            config.level = Some(level);
            config.pool = RockPool {
                split,
                class: Some(size),
            };
            let shared = Arc::new(Shared::new(config.clone(), library.clone(), caches.to_vec())?);
            let params = sample_episodes(&shared, level, episodes, seed)?;
            let results = match policy {
                GridPolicy::Oracle(oc) => {
                    evaluate(&shared, &params, || ScriptedOracle::new(config.arm.clone(), oc.clone()))?
                }
                GridPolicy::Policy(p) => evaluate(&shared, &params, || (*p).clone())?,
            };
            let successes = results.iter().filter(|r| r.termination.is_success()).count();
            cells.push(GridCell {
                size,
                soil: soil.into(),
                episodes,
                successes,
                success_rate: successes as f64 / episodes.max(1) as f64,
            });
        }
    }
    let average = cells.iter().map(|c| c.success_rate).sum::<f64>() / cells.len() as f64;
    Ok(GridReport { cells, average })
}
