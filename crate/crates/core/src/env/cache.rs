//! Reset-state cache: collision-free arm/rock configurations sampled per level.

use std::path::{Path, PathBuf};

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvError, RockLibrary};
use crate::arm::{forward_chain, rotbase_rotation, solve_edge_ik, JointVector};
use crate::physics::{detect_contacts, step_dynamics, BucketCollider, BucketMotion, ContactSet, StepReport, Wrench};

/// Seconds the rock is left to settle on the platform before acceptance.
pub const SETTLE_TIME: f64 = 2.0;
/// Per-step velocity decay while settling, so rounded rocks stop rocking.
const SETTLE_DAMPING: f64 = 0.97;
/// Undamped hold after settling, s.
pub const REST_CHECK_TIME: f64 = 0.5;
/// Largest movement during the hold for the rock to count as resting, m.
pub const REST_TOLERANCE: f64 = 1e-5;
/// Attempts below which the acceptance-rate check is not applied.
const MIN_ATTEMPTS: usize = 2000;
const MIN_ACCEPTANCE: f64 = 1e-3;
const BATCH: usize = 64;

/// One accepted initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetEntry {
    pub q: [f64; 5],
    /// Index into `Dataset::all` order.
    pub rock: usize,
    /// Settled rock center of mass, world frame.
    pub position: [f64; 3],
    /// Settled rock orientation `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetCache {
    pub level: u8,
    pub dataset_hash: String,
    pub seed: u64,
    pub attempts: usize,
    pub entries: Vec<ResetEntry>,
}

impl ResetCache {
    pub fn acceptance_rate(&self) -> f64 {
        self.entries.len() as f64 / self.attempts.max(1) as f64
    }

    /// File name keyed by level, dataset and seed.
    pub fn file_name(level: u8, dataset_hash: &str, seed: u64) -> String {
        format!("reset_l{level}_{}_s{seed}.json", &dataset_hash[..dataset_hash.len().min(12)])
    }

    pub fn path_in(dir: &Path, level: u8, dataset_hash: &str, seed: u64) -> PathBuf {
        dir.join(Self::file_name(level, dataset_hash, seed))
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let io = |source| EnvError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let text = serde_json::to_string(self).expect("cache serializes");
        std::fs::write(path, text).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EnvError::Parse {
            what: format!("reset cache {}", path.display()),
            msg: e.to_string(),
        })
    }
}

/// Load the caches of `levels` for a dataset from `dir`.
pub fn load_caches(dir: &Path, levels: &[u8], dataset_hash: &str, seed: u64) -> Result<Vec<ResetCache>, EnvError> {
    levels
        .iter()
        .map(|&l| {
            let path = ResetCache::path_in(dir, l, dataset_hash, seed);
            if !path.exists() {
                return Err(EnvError::MissingCache(l));
            }
            let c = ResetCache::load(&path)?;
            if c.level != l || c.dataset_hash != dataset_hash {
                return Err(EnvError::CacheMismatch(format!("{} does not hold level {l}", path.display())));
            }
            Ok(c)
        })
        .collect()
}

/// Sample `count` accepted reset states for `level`.
///
/// Attempt `i` draws from its own random stream, so the result does not
/// depend on the thread count.
pub fn generate_cache(
    config: &EnvConfig,
    library: &RockLibrary,
    level: u8,
    count: usize,
    seed: u64,
) -> Result<ResetCache, EnvError> {
    config.validate()?;
    if library.is_empty() {
        return Err(EnvError::Config("empty rock library".into()));
    }
    let collider = BucketCollider::new(&config.arm.bucket, config.physics.edge_spacing);
    let mut entries = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while entries.len() < count {
        let batch: Vec<Option<ResetEntry>> = (attempts..attempts + BATCH)
            .into_par_iter()
            .map(|i| attempt(config, library, &collider, level, seed, i as u64))
            .collect();
        for e in batch {
            attempts += 1;
            if let Some(e) = e {
                entries.push(e);
                if entries.len() == count {
                    break;
                }
            }
        }
        let rate = entries.len() as f64 / attempts as f64;
        if attempts >= MIN_ATTEMPTS && rate < MIN_ACCEPTANCE {
            return Err(EnvError::LowAcceptance { level, attempts, rate });
        }
    }
    Ok(ResetCache {
        level,
        dataset_hash: library.dataset_hash.clone(),
        seed,
        attempts,
        entries,
    })
}

/// Rotation that puts the shortest principal extent vertical.
fn resting_tilt(extents: &[f64; 3]) -> UnitQuaternion<f64> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let k = (0..3).min_by(|&a, &b| extents[a].total_cmp(&extents[b])).unwrap_or(2);
    match k {
        0 => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), half_pi),
        1 => UnitQuaternion::from_axis_angle(&Vector3::x_axis(), half_pi),
        _ => UnitQuaternion::identity(),
    }
}

/// Arm configuration seed for the edge inverse kinematics.
fn ik_seed() -> JointVector<f64> {
    JointVector::from_array([0.0, -0.3, 1.2, 0.6, -1.0])
}

fn attempt(
    config: &EnvConfig,
    library: &RockLibrary,
    collider: &BucketCollider,
    level: u8,
    seed: u64,
    index: u64,
) -> Option<ResetEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((level as u64) << 56));
    rng.set_stream(index);
    let spec = &config.levels[level as usize];
    let arm = &config.arm;
    let platform = &config.platform;

    let turn = rng.gen_range(spec.turn[0]..=spec.turn[1]);
    let edge_x = rng.gen_range(spec.edge_x[0]..=spec.edge_x[1]);
    let edge_z = platform.height + rng.gen_range(spec.edge_height[0]..=spec.edge_height[1]);
    let curl = rng.gen_range(spec.curl[0]..=spec.curl[1]);
    let mut q = solve_edge_ik(arm, &ik_seed(), edge_x, edge_z, curl)?;
    q.turn = turn;
    arm.check_limits(&q).ok()?;

    let rock_index = rng.gen_range(0..library.len());
    let mut rock = library.bodies[rock_index].clone();
    let rx = rng.gen_range(edge_x - spec.region[0]..=edge_x);
    let ry = rng.gen_range(-0.5 * spec.region[1]..=0.5 * spec.region[1]);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let world = rotbase_rotation(turn).inverse() * Vector3::new(rx, ry, 0.0);
    rock.orientation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * resting_tilt(&library.specs[rock_index].extents);
    rock.position = Point3::new(world.x, world.y, 0.0);
    rock.linear_velocity = Vector3::zeros();
    rock.angular_velocity = Vector3::zeros();
    let lift = platform.height + 1e-3 - rock.lowest_point();
    rock.position.z += lift;
    if !platform.contains(&rock.position) {
        return None;
    }

    let (pose, _) = forward_chain(arm, &q);
    let motion = BucketMotion::at_rest(pose.base);
    let mut contacts = ContactSet::new();
    let mut report = StepReport::default();
    let dt = config.physics.dt;
    let steps = (SETTLE_TIME / dt).round() as usize;
    for _ in 0..steps {
        detect_contacts(&rock, platform.height, Some((collider, &motion)), &config.physics, &mut contacts);
        if contacts.contacts.iter().any(|c| c.pair.is_bucket()) {
            return None;
        }
        step_dynamics(&mut rock, &contacts, &Wrench::default(), &config.physics, dt, &mut report);
        if report.fault || !rock.is_finite() {
            return None;
        }
        rock.linear_velocity *= SETTLE_DAMPING;
        rock.angular_velocity *= SETTLE_DAMPING;
    }
    // undamped hold: the rock must stay put under the plain dynamics
    let held_at = rock.position;
    for _ in 0..(REST_CHECK_TIME / dt).round() as usize {
        detect_contacts(&rock, platform.height, Some((collider, &motion)), &config.physics, &mut contacts);
        if contacts.contacts.iter().any(|c| c.pair.is_bucket()) {
            return None;
        }
        step_dynamics(&mut rock, &contacts, &Wrench::default(), &config.physics, dt, &mut report);
        if report.fault || !rock.is_finite() {
            return None;
        }
    }
    let settled = (rock.position - held_at).norm() < REST_TOLERANCE
        && rock.linear_velocity.norm() < 1e-3
        && rock.angular_velocity.norm() < 1e-2;
    let z = rock.position.z - platform.height;
    if !settled || z < 0.0 || z > spec.region[2] || !platform.contains(&rock.position) {
        return None;
    }
    let qv = rock.orientation.into_inner().coords;
    Some(ResetEntry {
        q: q.to_array(),
        rock: rock_index,
        position: rock.position.coords.into(),
        orientation: [qv.w, qv.x, qv.y, qv.z],
    })
}
