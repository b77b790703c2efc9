//! Observation layout, normalization ranges and assembly.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arm::{ArmModel, JointVector, JOINT_NAMES, NUM_JOINTS};
use crate::rockgen::hex;
use crate::sensor::{RockCloud, CLOUD_POINTS};

/// Workspace box used to normalize positions in the rotating base frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsRanges {
    pub position_min: [f64; 3],
    pub position_max: [f64; 3],
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    /// Torque range as a multiple of the actuator rating.
    pub torque_scale: f64,
}

impl Default for ObsRanges {
    fn default() -> Self {
        Self {
            position_min: [-2.0, -6.0, -2.0],
            position_max: [10.0, 6.0, 6.0],
            linear_velocity: 2.0,
            angular_velocity: 2.0,
            torque_scale: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// Named contiguous block of the observation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Index map of the observation vector with the physical range of every entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub channels: Vec<Channel>,
    pub blocks: Vec<Block>,
    pub history_len: usize,
}

impl ObsLayout {
    pub fn new(arm: &ArmModel<f64>, ranges: &ObsRanges, history_len: usize) -> Self {
        let mut l = Self {
            channels: Vec::new(),
            blocks: Vec::new(),
            history_len,
        };
        let joint = |i: usize| &arm.joints[i];
        l.block("q", (0..NUM_JOINTS).map(|i| (format!("q.{}", JOINT_NAMES[i]), joint(i).min, joint(i).max)));
        l.block(
            "qdot",
            (0..NUM_JOINTS).map(|i| (format!("qdot.{}", JOINT_NAMES[i]), -joint(i).vel_max, joint(i).vel_max)),
        );
        l.block(
            "tau",
            (0..NUM_JOINTS).map(|i| {
                let t = ranges.torque_scale * joint(i).effort_max;
                (format!("tau.{}", JOINT_NAMES[i]), -t, t)
            }),
        );
        let turn = joint(0);
        l.block("turn", [("turn.q".to_string(), turn.min, turn.max)]);
        l.block(
            "turn_rate_history",
            (0..history_len).map(|k| (format!("turn_rate.h{k}"), -turn.vel_max, turn.vel_max)),
        );
        let axes = ["x", "y", "z"];
        l.block(
            "bucket_position",
            (0..3).map(|k| (format!("bucket.p{}", axes[k]), ranges.position_min[k], ranges.position_max[k])),
        );
        l.block(
            "bucket_orientation",
            ["w", "x", "y", "z"].iter().map(|c| (format!("bucket.q{c}"), -1.0, 1.0)),
        );
        l.block(
            "bucket_linear_velocity",
            (0..3).map(|k| (format!("bucket.v{}", axes[k]), -ranges.linear_velocity, ranges.linear_velocity)),
        );
        l.block(
            "bucket_angular_velocity",
            (0..3).map(|k| (format!("bucket.w{}", axes[k]), -ranges.angular_velocity, ranges.angular_velocity)),
        );
        l.block(
            "rock_cloud",
            (0..CLOUD_POINTS).flat_map(|p| {
                (0..3).map(move |k| (format!("cloud.{p}.{}", axes[k]), ranges.position_min[k], ranges.position_max[k]))
            }),
        );
        l.block(
            "prev_action",
            (0..NUM_JOINTS).map(|i| (format!("action.{}", JOINT_NAMES[i]), -joint(i).vel_max, joint(i).vel_max)),
        );
        l.block(
            "turn_action_history",
            (0..history_len).map(|k| (format!("turn_action.h{k}"), -turn.vel_max, turn.vel_max)),
        );
        l
    }

    fn block(&mut self, name: &str, chans: impl IntoIterator<Item = (String, f64, f64)>) {
        let start = self.channels.len();
        self.channels
            .extend(chans.into_iter().map(|(name, lo, hi)| Channel { name, lo, hi }));
        self.blocks.push(Block {
            name: name.to_string(),
            start,
            len: self.channels.len() - start,
        });
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.start..b.start + b.len)
    }

    /// SHA-256 over channel names and ranges; changes whenever the layout does.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.channels {
            h.update(format!("{}:{:?}:{:?}\n", c.name, c.lo, c.hi).as_bytes());
        }
        hex(&h.finalize())
    }

    pub fn normalize(&self, i: usize, x: f64) -> f64 {
        let c = &self.channels[i];
        (2.0 * (x - c.lo) / (c.hi - c.lo) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, i: usize, y: f64) -> f64 {
        let c = &self.channels[i];
        c.lo + (y + 1.0) * 0.5 * (c.hi - c.lo)
    }

    pub fn normalize_all(&self, raw: &[f64], out: &mut [f64]) {
        for (i, (o, &x)) in out.iter_mut().zip(raw).enumerate() {
            *o = self.normalize(i, x);
        }
    }
}

/// Physical quantities entering one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsInput<'a> {
    pub q: JointVector<f64>,
    pub qdot: JointVector<f64>,
    pub tau: JointVector<f64>,
    /// Realized turn rates, oldest first.
    pub turn_rate_history: &'a [f64],
    pub bucket_position: Point3<f64>,
    pub bucket_orientation: UnitQuaternion<f64>,
    pub bucket_linear_velocity: Vector3<f64>,
    pub bucket_angular_velocity: Vector3<f64>,
    pub cloud: &'a RockCloud,
    pub prev_action: JointVector<f64>,
    /// Commanded turn rates, oldest first.
    pub turn_action_history: &'a [f64],
}

/// Raw (unnormalized) observation in layout order.
pub fn raw_observation(layout: &ObsLayout, input: &ObsInput, out: &mut Vec<f64>) {
    out.clear();
    out.extend(input.q.to_array());
    out.extend(input.qdot.to_array());
    out.extend(input.tau.to_array());
    out.push(input.q.turn);
    pad_history(out, input.turn_rate_history, layout.history_len);
    out.extend(input.bucket_position.coords.iter());
    // canonical hemisphere keeps the encoding continuous and unique
    let mut qv = input.bucket_orientation.into_inner().coords;
    if qv.w < 0.0 {
        qv = -qv;
    }
    out.extend([qv.w, qv.x, qv.y, qv.z]);
    out.extend(input.bucket_linear_velocity.iter());
    out.extend(input.bucket_angular_velocity.iter());
    for p in &input.cloud.points {
        out.extend(p.coords.iter());
    }
    out.extend(input.prev_action.to_array());
    pad_history(out, input.turn_action_history, layout.history_len);
    debug_assert_eq!(out.len(), layout.len());
}

fn pad_history(out: &mut Vec<f64>, h: &[f64], len: usize) {
    let take = h.len().min(len);
    out.extend(std::iter::repeat(0.0).take(len - take));
    out.extend(&h[h.len() - take..]);
}

/// Normalized observation in `[-1, 1]`.
pub fn assemble_observation(layout: &ObsLayout, input: &ObsInput, scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
    raw_observation(layout, input, scratch);
    out.clear();
    out.resize(layout.len(), 0.0);
    layout.normalize_all(scratch, out);
}
