//! Per-step trajectory logs and bitwise replay.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::cache::ResetCache;
use super::reward::{RewardTerms, Termination, TERM_NAMES};
use super::{EnvConfig, EnvError, EpisodeParams, RockLibrary, Shared};
use crate::arm::{BucketPose, JointVector, JOINT_NAMES};
use crate::physics::RockBody;
use crate::rockgen::RockSpec;

/// Header of a trajectory file: enough to rebuild the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub config: EnvConfig,
    pub rock: RockSpec,
    pub dataset_hash: String,
    pub params: EpisodeParams,
}

/// One logged control step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q: [f64; 5],
    pub qdot: [f64; 5],
    pub tau: [f64; 5],
    /// Bucket reference point, base frame.
    pub bucket: [f64; 3],
    /// Bucket roll, pitch, yaw in the base frame.
    pub bucket_rpy: [f64; 3],
    pub rock: [f64; 3],
    pub edge: [f64; 3],
    /// Raw policy action.
    pub action: [f64; 5],
    pub terms: [f64; 13],
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub meta: EpisodeMeta,
    pub rows: Vec<TrajectoryRow>,
}

fn columns() -> Vec<String> {
    let mut c = vec!["t".to_string()];
    for prefix in ["q", "qdot", "tau"] {
        c.extend(JOINT_NAMES.iter().map(|j| format!("{prefix}_{j}")));
    }
    for prefix in ["bucket", "bucket_rpy", "rock", "edge"] {
        let axes: [&str; 3] = if prefix == "bucket_rpy" {
            ["roll", "pitch", "yaw"]
        } else {
            ["x", "y", "z"]
        };
        c.extend(axes.iter().map(|a| format!("{prefix}_{a}")));
    }
    c.extend(JOINT_NAMES.iter().map(|j| format!("action_{j}")));
    c.extend(TERM_NAMES.iter().map(|s| s.to_string()));
    c.push("termination".into());
    c
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let meta = serde_json::to_string(&self.meta).expect("meta serializes");
        writeln!(s, "# {meta}").unwrap();
        writeln!(s, "{}", columns().join(",")).unwrap();
        for r in &self.rows {
            let mut fields: Vec<String> = vec![r.t.to_string()];
            for block in [&r.q[..], &r.qdot, &r.tau, &r.bucket, &r.bucket_rpy, &r.rock, &r.edge, &r.action, &r.terms] {
                fields.extend(block.iter().map(|x| x.to_string()));
            }
            fields.push(r.termination.map_or(String::new(), |t| t.code().to_string()));
            writeln!(s, "{}", fields.join(",")).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EnvError> {
        let err = |msg: String| EnvError::Parse {
            what: "trajectory".into(),
            msg,
        };
        let mut lines = text.lines();
        let meta_line = lines.next().ok_or_else(|| err("empty file".into()))?;
        let meta_json = meta_line
            .strip_prefix("# ")
            .ok_or_else(|| err("line 1: missing metadata line".into()))?;
        let meta: EpisodeMeta = serde_json::from_str(meta_json).map_err(|e| err(format!("line 1: {e}")))?;
        let header = lines.next().ok_or_else(|| err("line 2: missing header".into()))?;
        let cols = columns();
        if header.split(',').ne(cols.iter().map(String::as_str)) {
            return Err(err("line 2: unexpected columns".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let n = i + 3;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(err(format!("line {n}: {} fields, expected {}", f.len(), cols.len())));
            }
            let nums = f[..f.len() - 1]
                .iter()
                .map(|x| x.parse::<f64>().map_err(|e| err(format!("line {n}: `{x}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let take = |i: usize, out: &mut [f64]| out.copy_from_slice(&nums[i..i + out.len()]);
            let mut r = TrajectoryRow {
                t: nums[0],
                q: [0.0; 5],
                qdot: [0.0; 5],
                tau: [0.0; 5],
                bucket: [0.0; 3],
                bucket_rpy: [0.0; 3],
                rock: [0.0; 3],
                edge: [0.0; 3],
                action: [0.0; 5],
                terms: [0.0; 13],
                termination: None,
            };
            take(1, &mut r.q);
            take(6, &mut r.qdot);
            take(11, &mut r.tau);
            take(16, &mut r.bucket);
            take(19, &mut r.bucket_rpy);
            take(22, &mut r.rock);
            take(25, &mut r.edge);
            take(28, &mut r.action);
            take(33, &mut r.terms);
            let last = f[f.len() - 1];
            if !last.is_empty() {
                r.termination = Some(last.parse().map_err(|e| err(format!("line {n}: {e}")))?);
            }
            rows.push(r);
        }
        Ok(Self { meta, rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let io = |source| EnvError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(path, self.to_csv()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text)
    }

    /// Total logged reward.
    pub fn episode_return(&self) -> f64 {
        self.rows.iter().map(|r| r.terms.iter().sum::<f64>()).sum()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.rows.last().and_then(|r| r.termination)
    }

    /// Bucket-edge path as (radial distance, height above soil) pairs.
    pub fn edge_path(&self) -> Vec<[f64; 2]> {
        let soil = self.meta.config.platform.height;
        self.rows
            .iter()
            .map(|r| [r.edge[0].hypot(r.edge[1]), r.edge[2] - soil])
            .collect()
    }
}

/// Edge heights up to this far above the surface count as in soil, m.
pub const SOIL_CONTACT_BAND: f64 = 0.02;

/// Horizontal distance travelled while both ends of a segment are in soil.
pub fn in_soil_horizontal_length(path: &[[f64; 2]], band: f64) -> f64 {
    path.windows(2)
        .filter(|w| w[0][1] <= band && w[1][1] <= band)
        .map(|w| (w[1][0] - w[0][0]).abs())
        .sum()
}

/// Collects trajectories of the episodes an environment plays.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryRecorder {
    current: Option<Trajectory>,
    pub finished: Vec<Trajectory>,
}

impl TrajectoryRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin(&mut self, meta: EpisodeMeta) {
        self.finish();
        self.current = Some(Trajectory { meta, rows: Vec::new() });
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        t: f64,
        q: &JointVector<f64>,
        qdot: &JointVector<f64>,
        tau: &JointVector<f64>,
        pose: &BucketPose<f64>,
        edge: &Point3<f64>,
        rock: &RockBody,
        action: &JointVector<f64>,
        terms: &RewardTerms,
        termination: Option<Termination>,
    ) {
        let Some(cur) = self.current.as_mut() else {
            return;
        };
        let (r, p, y) = pose.base.rotation.euler_angles();
        cur.rows.push(TrajectoryRow {
            t,
            q: q.to_array(),
            qdot: qdot.to_array(),
            tau: tau.to_array(),
            bucket: pose.base.translation.vector.into(),
            bucket_rpy: [r, p, y],
            rock: rock.position.coords.into(),
            edge: edge.coords.into(),
            action: action.to_array(),
            terms: terms.0,
            termination,
        });
    }

    /// Close the running episode, if any.
    pub fn finish(&mut self) {
        if let Some(t) = self.current.take() {
            self.finished.push(t);
        }
    }
}

/// Outcome of re-simulating a logged trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    /// First step whose reward terms or termination differ.
    pub first_mismatch: Option<usize>,
    pub max_abs_diff: f64,
    pub replayed: Trajectory,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Re-run the logged actions from the logged initial state and compare
/// reward terms bit for bit.
pub fn replay(traj: &Trajectory) -> Result<ReplayReport, EnvError> {
    let meta = &traj.meta;
    let library = RockLibrary::from_specs(vec![meta.rock.clone()], meta.dataset_hash.clone())?;
    let mut params = meta.params.clone();
    params.entry.rock = 0;
    let cache = ResetCache {
        level: params.level,
        dataset_hash: meta.dataset_hash.clone(),
        seed: 0,
        attempts: 1,
        entries: vec![params.entry.clone()],
    };
    let mut config = meta.config.clone();
    config.pool = Default::default();
    let shared = Arc::new(Shared::new(config, library, vec![cache])?);
    let mut env = super::Env::new(shared, 0)?;
    env.set_recorder(Some(TrajectoryRecorder::new()));
    env.reset_with(&params)?;
    let mut first_mismatch = None;
    let mut max_abs_diff: f64 = 0.0;
    for (i, row) in traj.rows.iter().enumerate() {
        let out = env.step(&JointVector::from_array(row.action))?;
        let same = out.terms.0.iter().zip(&row.terms).all(|(a, b)| a.to_bits() == b.to_bits())
            && out.termination == row.termination;
        for (a, b) in out.terms.0.iter().zip(&row.terms) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
        if !same && first_mismatch.is_none() {
            first_mismatch = Some(i);
        }
        if out.done() {
            break;
        }
    }
    let mut rec = env.take_recorder().unwrap_or_default();
    rec.finish();
    let mut replayed = rec.finished.pop().unwrap_or(Trajectory {
        meta: meta.clone(),
        rows: Vec::new(),
    });
    replayed.meta = meta.clone();
    if replayed.rows.len() != traj.rows.len() && first_mismatch.is_none() {
        first_mismatch = Some(replayed.rows.len().min(traj.rows.len()));
    }
    Ok(ReplayReport {
        steps: replayed.rows.len(),
        first_mismatch,
        max_abs_diff,
        replayed,
    })
}
