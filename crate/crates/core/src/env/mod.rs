//! Boulder-scooping environment: one [`Env`] per episode stream, batched by [`VecEnv`].
//!
//! A control step runs the command pipeline (deadband, delay), then
//! `physics.substeps` rigid-body substeps during which the arm follows the
//! delayed command, slowed wherever the soil resists more than the arm can
//! push. The virtual LiDAR, the reward engine and the termination engine run
//! once per control step.

pub mod cache;
pub mod curriculum;
pub mod log;
pub mod obs;
pub mod reward;

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{Matrix2, Point3, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    bucket_twist_rotbase, forward_chain, integrate_joints, inverse_statics, rotbase_rotation, ActionPipeline, ArmError,
    ArmModel, BucketPose, ChainFrames, JointVector, PLANAR_JOINTS,
};
use crate::physics::{
    detect_contacts, rock_in_shovel, step_dynamics, BucketCollider, BucketMotion, ContactPair, ContactSet, PhysicsParams,
    RockBody, StepReport, Wrench,
};
use crate::rockgen::{generate_rock, Dataset, RockGenError, RockSpec, SizeClass, Split, FRICTION, MASS_SCALE};
use crate::sensor::{extract_rock_points, rock_hits, Hit, RockCloud, Scene, SensorConfig, SensorError, SensorModel};
use crate::soil::{apply_soil_force, excavation_slice, resistance_magnitudes, SoilError, SoilParams};

use cache::{ResetCache, ResetEntry};
use curriculum::{CurriculumState, NUM_LEVELS};
use log::{EpisodeMeta, TrajectoryRecorder};
use obs::{assemble_observation, ObsInput, ObsLayout, ObsRanges};
use reward::{check_termination, compute_rewards, RewardTerms, RewardWeights, StepState, Termination, TerminationLimits, Toggles};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Soil(#[from] SoilError),
    #[error(transparent)]
    Rock(#[from] RockGenError),
    #[error("no reset cache for level {0}; generate one with `boulder cache`")]
    MissingCache(u8),
    #[error("reset cache for level {level} has no entry for the selected rocks")]
    EmptyPool { level: u8 },
    #[error("reset cache acceptance rate {rate:.2e} below 1e-3 after {attempts} attempts at level {level}")]
    LowAcceptance { level: u8, attempts: usize, rate: f64 },
    #[error("reset cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("action batch has {got} rows, expected {expected}")]
    BatchShape { got: usize, expected: usize },
    #[error("episode finished; call reset before stepping")]
    EpisodeDone,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Parse { what: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoilMode {
    /// Soft until the level enables randomization.
    Curriculum,
    Soft,
    Hard,
    Randomized,
}

/// Finite rock support surface; the soil surface lies in the same plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Platform {
    pub height: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for Platform {
    fn default() -> Self {
        Self {
            height: 0.0,
            x: [-9.0, 9.0],
            y: [-9.0, 9.0],
        }
    }
}

impl Platform {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }
}

/// Initial-state sampling and switches for one curriculum level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    /// Rock placement box in front of the cutting edge: radial, lateral, vertical extent, m.
    pub region: [f64; 3],
    /// Cutting-edge radial distance from the cabin axis, m.
    pub edge_x: [f64; 2],
    /// Cutting-edge height above the soil, m.
    pub edge_height: [f64; 2],
    pub curl: [f64; 2],
    pub turn: [f64; 2],
    pub randomize_soil: bool,
    pub angle_of_attack: bool,
    pub misaligned_scoop: bool,
}

pub fn default_levels() -> Vec<LevelSpec> {
    let base = LevelSpec {
        region: [2.5, 0.6, 0.4],
        edge_x: [4.5, 6.0],
        edge_height: [0.05, 0.45],
        curl: [-0.35, 0.0],
        turn: [-0.3, 0.3],
        randomize_soil: false,
        angle_of_attack: false,
        misaligned_scoop: false,
    };
    let l1 = LevelSpec {
        angle_of_attack: true,
        ..base.clone()
    };
    let l2 = LevelSpec {
        randomize_soil: true,
        ..l1.clone()
    };
    let l3 = LevelSpec {
        region: [4.5, 3.0, 0.4],
        edge_x: [5.0, 6.5],
        ..l2.clone()
    };
    let l4 = LevelSpec {
        misaligned_scoop: true,
        edge_x: [4.0, 7.0],
        ..l3.clone()
    };
    vec![base, l1, l2, l3, l4]
}

/// Which dataset rocks an environment draws from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RockPool {
    pub split: Option<Split>,
    pub class: Option<SizeClass>,
}

impl RockPool {
    pub fn accepts(&self, spec: &RockSpec) -> bool {
        self.split.map_or(true, |s| s == spec.split) && self.class.map_or(true, |c| c == spec.class)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub seed: u64,
    pub arm: ArmModel<f64>,
    pub physics: PhysicsParams,
    pub sensor: SensorConfig,
    pub rewards: RewardWeights,
    pub limits: TerminationLimits,
    pub obs: ObsRanges,
    pub dt_control: f64,
    pub deadband: f64,
    pub history_len: usize,
    pub max_delay: f64,
    pub soil: SoilMode,
    pub cutting_resistance: [f64; 2],
    /// Fixed curriculum level; `None` lets the curriculum advance.
    pub level: Option<u8>,
    pub curriculum_window: usize,
    pub curriculum_threshold: f64,
    pub platform: Platform,
    pub machine_mass: f64,
    /// Viscous resistance of the support bases once they slip, N·s/m.
    pub slip_damping: f64,
    pub pool: RockPool,
    pub levels: Vec<LevelSpec>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let arm = ArmModel::default_excavator();
        let m = arm.sensor_mount;
        Self {
            seed: 0,
            sensor: SensorConfig {
                mount: [m.x, m.y, m.z],
                ..SensorConfig::default()
            },
            arm,
            physics: PhysicsParams::default(),
            rewards: RewardWeights::default(),
            limits: TerminationLimits::default(),
            obs: ObsRanges::default(),
            dt_control: 1.0 / 6.0,
            deadband: 0.05,
            history_len: 8,
            max_delay: 1.2,
            soil: SoilMode::Curriculum,
            cutting_resistance: [1.0, 1.0],
            level: None,
            curriculum_window: 1000,
            curriculum_threshold: 0.8,
            platform: Platform::default(),
            machine_mass: 12_000.0,
            slip_damping: 2.0e4,
            pool: RockPool {
                split: Some(Split::Train),
                class: None,
            },
            levels: default_levels(),
        }
    }
}

impl EnvConfig {
    /// Named presets: `default`, `soft`, `hard`.
    pub fn preset(name: &str) -> Result<Self, EnvError> {
        let mut c = Self::default();
        match name {
            "default" => {}
            "soft" => c.soil = SoilMode::Soft,
            "hard" => c.soil = SoilMode::Hard,
            other => return Err(EnvError::Config(format!("unknown preset `{other}`"))),
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.arm.validate()?;
        let p = &self.physics;
        if !(p.dt > 0.0) || p.substeps == 0 {
            return Err(EnvError::Config("physics dt and substeps must be positive".into()));
        }
        if p.dt > self.dt_control + 1e-12 {
            return Err(EnvError::Config("physics dt exceeds the control period".into()));
        }
        if ((p.dt * p.substeps as f64) - self.dt_control).abs() > 1e-9 {
            return Err(EnvError::Config(format!(
                "substeps × dt = {} must equal the control period {}",
                p.dt * p.substeps as f64,
                self.dt_control
            )));
        }
        if self.levels.len() != NUM_LEVELS {
            return Err(EnvError::Config(format!("expected {NUM_LEVELS} level specs")));
        }
        if self.level.is_some_and(|l| l as usize >= NUM_LEVELS) {
            return Err(EnvError::Config("level out of range".into()));
        }
        if !(self.deadband >= 0.0) {
            return Err(EnvError::Config("deadband must be non-negative".into()));
        }
        Ok(())
    }

    pub fn toggles(&self, level: u8) -> Toggles {
        let l = &self.levels[level as usize];
        Toggles {
            angle_of_attack: l.angle_of_attack,
            misaligned_scoop: l.misaligned_scoop,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let c: Self = toml::from_str(text).map_err(|e| EnvError::Parse {
            what: "config".into(),
            msg: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }
}

/// Generated rock bodies for every spec of a dataset, in `Dataset::all` order.
#[derive(Clone, Debug)]
pub struct RockLibrary {
    pub specs: Vec<RockSpec>,
    pub bodies: Vec<RockBody>,
    pub dataset_hash: String,
}

impl RockLibrary {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, EnvError> {
        let specs: Vec<RockSpec> = ds.all().cloned().collect();
        let bodies = specs
            .par_iter()
            .map(generate_rock)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            specs,
            bodies,
            dataset_hash: ds.hash(),
        })
    }

    pub fn from_specs(specs: Vec<RockSpec>, dataset_hash: String) -> Result<Self, EnvError> {
        let bodies = specs.iter().map(generate_rock).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            specs,
            bodies,
            dataset_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Immutable data shared by every environment of a batch.
#[derive(Debug)]
pub struct Shared {
    pub config: EnvConfig,
    pub collider: BucketCollider,
    pub sensor: SensorModel,
    pub layout: ObsLayout,
    pub library: RockLibrary,
    caches: Vec<Option<ResetCache>>,
    /// Cache entries per level whose rock is in the pool.
    eligible: Vec<Vec<usize>>,
}

impl Shared {
    pub fn new(config: EnvConfig, library: RockLibrary, caches: Vec<ResetCache>) -> Result<Self, EnvError> {
        config.validate()?;
        let sensor = SensorModel::new(config.sensor.clone())?;
        let collider = BucketCollider::new(&config.arm.bucket, config.physics.edge_spacing);
        let layout = ObsLayout::new(&config.arm, &config.obs, config.history_len);
        let mut slots: Vec<Option<ResetCache>> = vec![None; NUM_LEVELS];
        for c in caches {
            if c.dataset_hash != library.dataset_hash {
                return Err(EnvError::CacheMismatch(format!(
                    "cache for level {} was built for dataset {}, library is {}",
                    c.level, c.dataset_hash, library.dataset_hash
                )));
            }
            if c.entries.iter().any(|e| e.rock >= library.len()) {
                return Err(EnvError::CacheMismatch("rock index outside the library".into()));
            }
            let l = c.level as usize;
            if l >= NUM_LEVELS {
                return Err(EnvError::CacheMismatch(format!("level {l}")));
            }
            slots[l] = Some(c);
        }
        let eligible = slots
            .iter()
            .map(|c| {
                c.as_ref().map_or_else(Vec::new, |c| {
                    c.entries
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| config.pool.accepts(&library.specs[e.rock]))
                        .map(|(i, _)| i)
                        .collect()
                })
            })
            .collect();
        Ok(Self {
            config,
            collider,
            sensor,
            layout,
            library,
            caches: slots,
            eligible,
        })
    }

    pub fn cache(&self, level: u8) -> Option<&ResetCache> {
        self.caches.get(level as usize).and_then(Option::as_ref)
    }

    pub fn obs_len(&self) -> usize {
        self.layout.len()
    }
}

/// Everything drawn at reset; replaying it reproduces the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub level: u8,
    pub entry: ResetEntry,
    pub delay: f64,
    pub mass_scale: f64,
    pub friction: f64,
    pub soil: SoilParams<f64>,
    pub noise_seed: u64,
}

/// Per-step result of [`Env::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terms: RewardTerms,
    pub termination: Option<Termination>,
    pub state: StepState,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.termination.is_some()
    }
}

/// Diagnostics of the arm and soil during the last control step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Mean soil force on the bucket, N.
    pub soil_force: Vector3<f64>,
    /// Mean rock contact force on the bucket, N.
    pub rock_force: Vector3<f64>,
    /// Smallest speed factor applied by the soil stall model.
    pub stall: f64,
    /// Cutting edge in the base frame.
    pub edge: Point3<f64>,
}

/// One simulated excavator, rock and soil patch.
#[derive(Clone, Debug)]
pub struct Env {
    shared: Arc<Shared>,
    rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    params: Option<EpisodeParams>,
    q: JointVector<f64>,
    qdot: JointVector<f64>,
    tau: JointVector<f64>,
    pipeline: ActionPipeline<f64>,
    turn_rates: VecDeque<f64>,
    prev_action: JointVector<f64>,
    rock: RockBody,
    soil: SoilParams<f64>,
    toggles: Toggles,
    time: f64,
    steps: u32,
    cloud: RockCloud,
    boulder_reset_z: f64,
    base_speed: f64,
    done: bool,
    episode_return: f64,
    diag: Diagnostics,
    contacts: ContactSet,
    report: StepReport,
    hits: Vec<Hit>,
    obs: Vec<f64>,
    scratch: Vec<f64>,
    recorder: Option<TrajectoryRecorder>,
}

impl Env {
    pub fn new(shared: Arc<Shared>, seed: u64) -> Result<Self, EnvError> {
        let c = &shared.config;
        let pipeline = ActionPipeline::new(c.dt_control, c.deadband, c.history_len, c.max_delay)?;
        let rock = shared
            .library
            .bodies
            .first()
            .cloned()
            .ok_or_else(|| EnvError::Config("empty rock library".into()))?;
        let history = c.history_len;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise_rng: ChaCha8Rng::seed_from_u64(0),
            params: None,
            q: JointVector::zeros(),
            qdot: JointVector::zeros(),
            tau: JointVector::zeros(),
            pipeline,
            turn_rates: VecDeque::from(vec![0.0; history]),
            prev_action: JointVector::zeros(),
            rock,
            soil: SoilParams::soft(),
            toggles: c.toggles(0),
            time: 0.0,
            steps: 0,
            cloud: RockCloud::default(),
            boulder_reset_z: 0.0,
            base_speed: 0.0,
            done: true,
            episode_return: 0.0,
            diag: Diagnostics::default(),
            contacts: ContactSet::new(),
            report: StepReport::default(),
            hits: Vec::new(),
            obs: Vec::new(),
            scratch: Vec::new(),
            recorder: None,
            shared,
        })
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Draw the next episode's parameters for `level`.
    pub fn sample_params(&mut self, level: u8) -> Result<EpisodeParams, EnvError> {
        let shared = &self.shared;
        let cache = shared.cache(level).ok_or(EnvError::MissingCache(level))?;
        let eligible = &shared.eligible[level as usize];
        if eligible.is_empty() {
            return Err(EnvError::EmptyPool { level });
        }
        let rng = &mut self.rng;
        let entry = cache.entries[eligible[rng.gen_range(0..eligible.len())]].clone();
        let c = &shared.config;
        let delay = rng.gen_range(0.0..=c.max_delay);
        let mass_scale = rng.gen_range(MASS_SCALE.0..=MASS_SCALE.1);
        let friction = rng.gen_range(FRICTION.0..=FRICTION.1);
        let randomized = || c.levels[level as usize].randomize_soil;
        let mut soil = match c.soil {
            SoilMode::Soft => SoilParams::soft(),
            SoilMode::Hard => SoilParams::hard(),
            SoilMode::Randomized => SoilParams::randomized(rng, (c.cutting_resistance[0], c.cutting_resistance[1])),
            SoilMode::Curriculum if randomized() => {
                SoilParams::randomized(rng, (c.cutting_resistance[0], c.cutting_resistance[1]))
            }
            SoilMode::Curriculum => SoilParams::soft(),
        };
        soil.surface_height = c.platform.height;
        Ok(EpisodeParams {
            level,
            entry,
            delay,
            mass_scale,
            friction,
            soil,
            noise_seed: rng.gen(),
        })
    }

    /// Start a new episode at `level` and return its first observation.
    pub fn reset(&mut self, level: u8) -> Result<&[f64], EnvError> {
        let p = self.sample_params(level)?;
        self.reset_with(&p)
    }

    /// Start the episode described by `p`.
    pub fn reset_with(&mut self, p: &EpisodeParams) -> Result<&[f64], EnvError> {
        let shared = Arc::clone(&self.shared);
        let c = &shared.config;
        let template = shared
            .library
            .bodies
            .get(p.entry.rock)
            .ok_or_else(|| EnvError::CacheMismatch(format!("rock {} not in library", p.entry.rock)))?;
        let spec = &shared.library.specs[p.entry.rock];
        let mut rock = template.clone();
        // the episode draw replaces the dataset's nominal scale
        rock.set_mass(template.mass / spec.mass_scale * p.mass_scale);
        rock.friction = p.friction;
        rock.position = Point3::from(p.entry.position);
        let [w, x, y, z] = p.entry.orientation;
        rock.orientation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        rock.linear_velocity = Vector3::zeros();
        rock.angular_velocity = Vector3::zeros();
        self.rock = rock;
        self.report = StepReport::default();
        self.q = JointVector::from_array(p.entry.q);
        c.arm.check_limits(&self.q)?;
        self.qdot = JointVector::zeros();
        self.pipeline.reset(p.delay);
        self.turn_rates.clear();
        self.turn_rates.extend(std::iter::repeat(0.0).take(c.history_len));
        self.prev_action = JointVector::zeros();
        self.soil = p.soil;
        self.toggles = c.toggles(p.level);
        self.time = 0.0;
        self.steps = 0;
        self.boulder_reset_z = self.rock.position.z;
        self.base_speed = 0.0;
        self.done = false;
        self.episode_return = 0.0;
        self.noise_rng = ChaCha8Rng::seed_from_u64(p.noise_seed);
        self.params = Some(p.clone());
        let (pose, frames) = forward_chain(&c.arm, &self.q);
        self.diag = Diagnostics {
            stall: 1.0,
            edge: pose.base * c.arm.bucket.edge_point(),
            ..Default::default()
        };
        self.tau = inverse_statics(
            &c.arm,
            &frames,
            &Point3::origin(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            c.physics.gravity,
        );
        self.cloud = RockCloud::default();
        self.scan(&pose);
        self.observe(&pose, &frames);
        if let Some(rec) = self.recorder.as_mut() {
            let spec = shared.library.specs[p.entry.rock].clone();
            rec.begin(EpisodeMeta {
                config: c.clone(),
                rock: spec,
                dataset_hash: shared.library.dataset_hash.clone(),
                params: p.clone(),
            });
        }
        Ok(&self.obs)
    }

    pub fn observation(&self) -> &[f64] {
        &self.obs
    }

    pub fn params(&self) -> Option<&EpisodeParams> {
        self.params.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn q(&self) -> JointVector<f64> {
        self.q
    }

    pub fn qdot(&self) -> JointVector<f64> {
        self.qdot
    }

    pub fn tau(&self) -> JointVector<f64> {
        self.tau
    }

    pub fn rock(&self) -> &RockBody {
        &self.rock
    }

    pub fn cloud(&self) -> &RockCloud {
        &self.cloud
    }

    pub fn soil(&self) -> &SoilParams<f64> {
        &self.soil
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn pipeline(&self) -> &ActionPipeline<f64> {
        &self.pipeline
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn bucket_pose(&self) -> BucketPose<f64> {
        forward_chain(&self.shared.config.arm, &self.q).0
    }

    /// Rock hits of the most recent scan.
    pub fn last_hits(&self) -> &[Hit] {
        &self.hits
    }

    /// Contacts of the most recent physics substep.
    pub fn contacts(&self) -> &ContactSet {
        &self.contacts
    }

    /// Record every following episode into `recorder`.
    pub fn set_recorder(&mut self, recorder: Option<TrajectoryRecorder>) {
        self.recorder = recorder;
    }

    pub fn recorder_mut(&mut self) -> Option<&mut TrajectoryRecorder> {
        self.recorder.as_mut()
    }

    pub fn take_recorder(&mut self) -> Option<TrajectoryRecorder> {
        self.recorder.take()
    }

    /// Advance one control period with joint-rate command `action` (rad/s, m/s).
    pub fn step(&mut self, action: &JointVector<f64>) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let shared = Arc::clone(&self.shared);
        let c = &shared.config;
        let arm = &c.arm;
        let mut fault = !action.is_finite();
        let a = if fault { JointVector::zeros() } else { *action };
        let cmd = self.pipeline.push_command(self.pipeline.shape(a));
        let cmd = JointVector::from_array(std::array::from_fn(|i| {
            let m = arm.joints[i].vel_max;
            cmd.get(i).clamp(-m, m)
        }));

        let n = c.physics.substeps;
        let dt = c.physics.dt;
        let mut soil_force = Vector3::zeros();
        let mut soil_moment = Vector3::zeros();
        let mut rock_force = Vector3::zeros();
        let mut rock_moment = Vector3::zeros();
        let mut stall_min: f64 = 1.0;
        let mut base_speed: f64 = 0.0;
        for _ in 0..n {
            let (pose, frames) = forward_chain(arm, &self.q);
            let edge = pose.base * arm.bucket.edge_point();
            let (rates, stall, cap) = self.stall(&pose, &frames, &edge, cmd);
            stall_min = stall_min.min(stall);
            let (q_next, realized) = integrate_joints(arm, &self.q, &rates, dt);
            let origin = Point3::from(pose.base.translation.vector);
            let motion = BucketMotion {
                pose: pose.base,
                linear_velocity: frames.point_velocity(&origin, &realized),
                angular_velocity: frames.angular_velocity(&realized),
            };
            detect_contacts(
                &self.rock,
                c.platform.height,
                Some((&shared.collider, &motion)),
                &c.physics,
                &mut self.contacts,
            );
            let platform = &c.platform;
            self.contacts
                .contacts
                .retain(|k| k.pair != ContactPair::Ground || platform.contains(&k.point));
            step_dynamics(&mut self.rock, &self.contacts, &Wrench::default(), &c.physics, dt, &mut self.report);
            fault |= self.report.fault;
            rock_force += self.report.bucket_force;
            rock_moment += self.report.bucket_moment;

            let v_edge = frames.point_velocity(&edge, &realized);
            let cut = excavation_slice(self.q.turn, &pose.base, &v_edge, &arm.bucket, self.soil.surface_height);
            let mut f = apply_soil_force(&cut, &self.soil);
            // a stalled arm pushes with its rated force, not the full resistance
            let radial = cut.radial;
            let fr = f.dot(&radial).clamp(-cap.x, cap.x);
            let fz = f.z.clamp(-cap.y, cap.y);
            f = radial * fr + Vector3::z() * fz;
            soil_force += f;
            soil_moment += edge.coords.cross(&f);
            base_speed = base_speed.max(self.slip_speed(&(f + self.report.bucket_force)));

            self.q = q_next;
            self.qdot = realized;
        }
        let inv_n = 1.0 / n as f64;
        self.time = (self.steps + 1) as f64 * c.dt_control;
        self.steps += 1;
        self.base_speed = base_speed;
        let (pose, frames) = forward_chain(arm, &self.q);
        let edge = pose.base * arm.bucket.edge_point();
        self.diag = Diagnostics {
            soil_force: soil_force * inv_n,
            rock_force: rock_force * inv_n,
            stall: stall_min,
            edge,
        };
        self.tau = inverse_statics(
            arm,
            &frames,
            &Point3::origin(),
            &((soil_force + rock_force) * inv_n),
            &((soil_moment + rock_moment) * inv_n),
            c.physics.gravity,
        );
        self.turn_rates.pop_front();
        self.turn_rates.push_back(self.qdot.turn);

        self.scan(&pose);
        let mut state = self.step_state(&pose, &frames, &a);
        fault |= !self.q.is_finite() || !self.rock.is_finite();
        state.fault = fault;
        let termination = check_termination(&state, &c.limits, &c.rewards, self.toggles);
        let terms = compute_rewards(&state, &c.rewards, &c.limits, self.toggles, termination);
        let reward = terms.total();
        self.prev_action = a;
        self.observe(&pose, &frames);
        self.episode_return += reward;
        self.done = termination.is_some();
        if let Some(rec) = self.recorder.as_mut() {
            rec.record(self.time, &self.q, &self.qdot, &self.tau, &pose, &edge, &self.rock, action, &terms, termination);
            if self.done {
                rec.finish();
            }
        }
        Ok(StepOutcome {
            reward,
            terms,
            termination,
            state,
        })
    }

    /// Slow the arm where the soil resists more than it can push.
    ///
    /// Returns the adjusted rates, the applied speed factor and the force
    /// capacity `(radial, vertical)` used to cap the transmitted soil force.
    fn stall(
        &self,
        pose: &BucketPose<f64>,
        frames: &ChainFrames<f64>,
        edge: &Point3<f64>,
        cmd: JointVector<f64>,
    ) -> (JointVector<f64>, f64, Vector2<f64>) {
        let arm = &self.shared.config.arm;
        let cap = Vector2::new(arm.dig_force_max, arm.penetration_force_max);
        let v_edge = frames.point_velocity(edge, &cmd);
        let cut = excavation_slice(self.q.turn, &pose.base, &v_edge, &arm.bucket, self.soil.surface_height);
        if cut.depth <= 0.0 {
            return (cmd, 1.0, Vector2::repeat(f64::INFINITY));
        }
        let (cutting, penetration) = resistance_magnitudes(&cut, &self.soil);
        let v = cut.edge_velocity;
        let mut target = v;
        let mut factor: f64 = 1.0;
        if v.x != 0.0 && cutting > cap.x {
            let s = cap.x / cutting;
            target.x *= s;
            factor = factor.min(s);
        }
        if v.y < 0.0 && penetration > cap.y {
            let s = cap.y / penetration;
            target.y *= s;
            factor = factor.min(s);
        }
        if factor >= 1.0 {
            return (cmd, 1.0, Vector2::repeat(f64::INFINITY));
        }
        // minimum-norm joint correction in the excavation plane
        let r = rotbase_rotation(self.q.turn);
        let cols = frames.point_jacobian(edge);
        let mut j = nalgebra::Matrix2x4::zeros();
        for (k, &i) in PLANAR_JOINTS.iter().enumerate() {
            let col = r * cols[i];
            j[(0, k)] = col.x;
            j[(1, k)] = col.z;
        }
        let jjt = j * j.transpose() + Matrix2::identity() * 1e-6;
        let dv = target - v;
        let dq: Vector4<f64> = j.transpose() * jjt.try_inverse().unwrap_or_else(Matrix2::zeros) * dv;
        let mut out = cmd;
        for (k, &i) in PLANAR_JOINTS.iter().enumerate() {
            out.set(i, cmd.get(i) + dq[k]);
        }
        (out, factor, cap)
    }

    fn slip_speed(&self, force: &Vector3<f64>) -> f64 {
        let c = &self.shared.config;
        let normal = (c.machine_mass * c.physics.gravity - force.z).max(0.0);
        let excess = force.xy().norm() - c.arm.base_friction * normal;
        (excess / c.slip_damping).max(0.0)
    }

    fn scan(&mut self, pose: &BucketPose<f64>) {
        let shared = Arc::clone(&self.shared);
        let c = &shared.config;
        let plates = shared.collider.world_plates(&pose.base);
        let scene = Scene {
            rock: Some(&self.rock),
            plates: &plates,
            ground_height: Some(c.platform.height),
        };
        let rng = (c.sensor.range_noise > 0.0).then_some(&mut self.noise_rng);
        rock_hits(&scene, &shared.sensor, self.q.turn, rng, &mut self.hits);
        self.cloud = extract_rock_points(&self.hits, self.q.turn, &shared.sensor.origin(self.q.turn), &self.cloud);
    }

    fn observe(&mut self, pose: &BucketPose<f64>, frames: &ChainFrames<f64>) {
        let shared = Arc::clone(&self.shared);
        let (v, w) = bucket_twist_rotbase(frames, pose, self.q.turn, &self.qdot);
        let turn_rates: Vec<f64> = self.turn_rates.iter().copied().collect();
        let turn_actions: Vec<f64> = self.pipeline.turn_history().collect();
        let input = ObsInput {
            q: self.q,
            qdot: self.qdot,
            tau: self.tau,
            turn_rate_history: &turn_rates,
            bucket_position: Point3::from(pose.rotbase.translation.vector),
            bucket_orientation: pose.rotbase.rotation,
            bucket_linear_velocity: v,
            bucket_angular_velocity: w,
            cloud: &self.cloud,
            prev_action: self.prev_action,
            turn_action_history: &turn_actions,
        };
        assemble_observation(&shared.layout, &input, &mut self.scratch, &mut self.obs);
        for x in &mut self.obs {
            if !x.is_finite() {
                *x = 0.0;
            }
        }
    }

    fn step_state(&self, pose: &BucketPose<f64>, frames: &ChainFrames<f64>, action: &JointVector<f64>) -> StepState {
        let c = &self.shared.config;
        let arm = &c.arm;
        let r = rotbase_rotation(self.q.turn);
        let (v, _) = bucket_twist_rotbase(frames, pose, self.q.turn, &self.qdot);
        let mut rel = self.qdot;
        rel.turn = 0.0;
        let edge = pose.base * arm.bucket.edge_point();
        let v_edge = r * frames.point_velocity(&edge, &rel);
        let plate_dir = pose.rotbase.rotation * -Vector3::x();
        let normal = pose.rotbase.rotation * Vector3::z();
        let v2 = Vector2::new(v_edge.x, v_edge.z);
        let d2 = Vector2::new(plate_dir.x, plate_dir.z);
        let n2 = Vector2::new(normal.x, normal.z);
        StepState {
            time: self.time,
            qdot: self.qdot,
            qdot_max: arm.vel_max(),
            action: *action,
            prev_action: self.prev_action,
            bucket_rotbase: Point3::from(pose.rotbase.translation.vector),
            bucket_velocity: v,
            bottom_plate_z: pose.base.translation.vector.z,
            curl: pose.curl_angle(),
            boulder_rotbase: r * self.rock.position,
            boulder_dz: self.rock.position.z - self.boulder_reset_z,
            in_shovel: rock_in_shovel(&self.rock.position, &arm.bucket, &pose.base),
            edge_depth: self.soil.surface_height - edge.z,
            edge_speed: v2.norm(),
            alpha: (-v2.dot(&n2)).atan2(v2.dot(&d2)),
            base_speed: self.base_speed,
            soil_height: self.soil.surface_height,
            deadband: c.deadband,
            fault: false,
        }
    }
}

/// Per-environment result of a batch step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub terms: RewardTerms,
    pub termination: Option<Termination>,
    /// Return and length of the episode that just ended.
    pub episode: Option<(f64, u32)>,
    pub level: u8,
}

/// Results of one batch step, rows in environment order.
#[derive(Clone, Debug, Default)]
pub struct BatchStep {
    /// Row-major `(num_envs, obs_len)` observations after auto-reset.
    pub obs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub infos: Vec<StepInfo>,
}

/// Environments stepped together, with a shared curriculum.
pub struct VecEnv {
    pub envs: Vec<Env>,
    pub curriculum: CurriculumState,
    shared: Arc<Shared>,
}

impl VecEnv {
    pub fn new(shared: Arc<Shared>, num_envs: usize, seed: u64) -> Result<Self, EnvError> {
        let c = &shared.config;
        let curriculum = match c.level {
            Some(l) => CurriculumState::pinned(l, c.curriculum_window, c.curriculum_threshold),
            None => CurriculumState::new(0, c.curriculum_window, c.curriculum_threshold),
        };
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let mut envs = Vec::with_capacity(num_envs);
        for _ in 0..num_envs {
            envs.push(Env::new(Arc::clone(&shared), seeder.gen())?);
        }
        Ok(Self {
            envs,
            curriculum,
            shared,
        })
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn obs_len(&self) -> usize {
        self.shared.obs_len()
    }

    /// Reset every environment at the current level; returns row-major observations.
    pub fn reset_all(&mut self) -> Result<Vec<f64>, EnvError> {
        let level = self.curriculum.level();
        self.envs
            .par_iter_mut()
            .map(|e| e.reset(level).map(|o| o.to_vec()))
            .collect::<Result<Vec<_>, _>>()
            .map(|rows| rows.concat())
    }

    /// Step every environment; finished ones are reset at the current level.
    pub fn step_batch(&mut self, actions: &[JointVector<f64>]) -> Result<BatchStep, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::BatchShape {
                got: actions.len(),
                expected: self.envs.len(),
            });
        }
        let level = self.curriculum.level();
        let results = self
            .envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| -> Result<(Vec<f64>, f64, StepInfo), EnvError> {
                let played = env.params().map_or(level, |p| p.level);
                let out = env.step(a)?;
                let mut info = StepInfo {
                    terms: out.terms,
                    termination: out.termination,
                    episode: None,
                    level: played,
                };
                if out.done() {
                    info.episode = Some((env.episode_return(), env.steps()));
                    env.reset(level)?;
                }
                Ok((env.observation().to_vec(), out.reward, info))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut batch = BatchStep {
            obs: Vec::with_capacity(self.envs.len() * self.obs_len()),
            ..Default::default()
        };
        for (obs, r, info) in results {
            batch.obs.extend(obs);
            batch.rewards.push(r);
            batch.dones.push(info.termination.is_some());
            if let Some(t) = info.termination {
                self.curriculum.update(t.is_success());
            }
            batch.infos.push(info);
        }
        Ok(batch)
    }
}
