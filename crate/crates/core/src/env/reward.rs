//! Reward terms and termination conditions as pure functions of a step snapshot.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::JointVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub r1_alignment: f64,
    pub r2_proximity: f64,
    pub r3_beneath: f64,
    pub r4_in_shovel: f64,
    pub r5_secured: f64,
    pub r6_lifted: f64,
    pub r7_success: f64,
    pub p1_smoothness: f64,
    pub p2_bucket_speed: f64,
    pub p3_turn: f64,
    pub p4_turn_digging: f64,
    pub p5_misaligned_scoop: f64,
    pub p6_failure: f64,
    /// Curl beyond which a rock counts as secured, rad.
    pub theta_target: f64,
    /// Target boulder height above the soil, m.
    pub h_desired: f64,
    /// Bucket speed above which P2 applies, m/s.
    pub v_max: f64,
    /// Squared lateral distance bound for R2, m².
    pub proximity: f64,
    pub d_soft: f64,
    pub d_hard: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            r1_alignment: 0.005,
            r2_proximity: 0.01,
            r3_beneath: 0.01,
            r4_in_shovel: 0.075,
            r5_secured: 0.05,
            r6_lifted: 0.05,
            r7_success: 20.0,
            p1_smoothness: -0.005,
            p2_bucket_speed: -0.1,
            p3_turn: -0.005,
            p4_turn_digging: -0.025,
            p5_misaligned_scoop: -0.0125,
            p6_failure: -0.5,
            theta_target: 0.5,
            h_desired: 0.5,
            v_max: 0.6,
            proximity: 1.5,
            d_soft: 0.05,
            d_hard: 0.30,
            y_min: 0.2,
            y_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationLimits {
    pub time_limit: f64,
    pub v_max_base: f64,
    /// Per-joint rate limits; `None` uses the arm's velocity limits.
    pub qdot_max: Option<[f64; 5]>,
    pub v_max_term: f64,
    /// Boulder height below which it counts as dropped, m.
    pub h_min: f64,
    pub alpha_threshold: f64,
    /// Edge depth below the surface that counts as "in soil", m.
    pub in_soil_depth: f64,
    /// Edge speed below which the angle of attack is not evaluated, m/s.
    pub alpha_min_speed: f64,
}

impl Default for TerminationLimits {
    fn default() -> Self {
        Self {
            time_limit: 29.0,
            v_max_base: 0.1,
            qdot_max: None,
            v_max_term: 1.2,
            h_min: -0.05,
            alpha_threshold: 0.0,
            in_soil_depth: 0.01,
            alpha_min_speed: 0.01,
        }
    }
}

/// Everything the reward and termination engines read for one control step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepState {
    /// Episode time after the step, s.
    pub time: f64,
    /// Realized joint rates.
    pub qdot: JointVector<f64>,
    pub qdot_max: JointVector<f64>,
    pub action: JointVector<f64>,
    pub prev_action: JointVector<f64>,
    /// Bucket reference point in the rotating base frame.
    pub bucket_rotbase: Point3<f64>,
    /// Bucket velocity relative to the rotating base frame.
    pub bucket_velocity: Vector3<f64>,
    /// Bottom plate height in the base frame.
    pub bottom_plate_z: f64,
    pub curl: f64,
    /// Boulder center of mass in the rotating base frame.
    pub boulder_rotbase: Point3<f64>,
    /// Boulder height gain since reset, m.
    pub boulder_dz: f64,
    pub in_shovel: bool,
    /// Edge depth below the soil surface (negative above), m.
    pub edge_depth: f64,
    pub edge_speed: f64,
    /// Angle of attack of the bottom plate, rad.
    pub alpha: f64,
    pub base_speed: f64,
    pub soil_height: f64,
    pub deadband: f64,
    /// Non-finite state or action.
    pub fault: bool,
}

impl StepState {
    pub fn in_soil(&self, limits: &TerminationLimits) -> bool {
        self.edge_depth > limits.in_soil_depth
    }

    pub fn turning(&self) -> bool {
        self.qdot.turn.abs() >= self.deadband
    }

    /// Boulder height above the soil surface.
    pub fn boulder_height(&self) -> f64 {
        self.boulder_rotbase.z - self.soil_height
    }

    pub fn curled(&self, weights: &RewardWeights) -> bool {
        self.curl > weights.theta_target
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    T1Timeout,
    T2BaseVelocity,
    T3JointVelocity,
    T4BucketSpeed,
    T5Dropped,
    T6AngleOfAttack,
    T7Success,
    /// Non-finite numbers anywhere in the step; counted as a failure.
    Fault,
}

impl Termination {
    pub const ALL: [Termination; 8] = [
        Termination::T1Timeout,
        Termination::T2BaseVelocity,
        Termination::T3JointVelocity,
        Termination::T4BucketSpeed,
        Termination::T5Dropped,
        Termination::T6AngleOfAttack,
        Termination::T7Success,
        Termination::Fault,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Termination::T1Timeout => "T1",
            Termination::T2BaseVelocity => "T2",
            Termination::T3JointVelocity => "T3",
            Termination::T4BucketSpeed => "T4",
            Termination::T5Dropped => "T5",
            Termination::T6AngleOfAttack => "T6",
            Termination::T7Success => "T7",
            Termination::Fault => "fault",
        }
    }

    pub fn is_success(self) -> bool {
        self == Termination::T7Success
    }

    pub fn is_failure(self) -> bool {
        !matches!(self, Termination::T1Timeout | Termination::T7Success)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Termination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Termination::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| format!("unknown termination `{s}`"))
    }
}

/// Level-dependent switches of the termination and reward engines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub angle_of_attack: bool,
    pub misaligned_scoop: bool,
}

/// First condition that fires, in the order T7, T2, T3, T4, T5, T6, T1.
pub fn check_termination(
    s: &StepState,
    limits: &TerminationLimits,
    weights: &RewardWeights,
    toggles: Toggles,
) -> Option<Termination> {
    if s.fault {
        return Some(Termination::Fault);
    }
    if s.in_shovel && s.curled(weights) && s.boulder_height() > weights.h_desired {
        return Some(Termination::T7Success);
    }
    if s.base_speed > limits.v_max_base {
        return Some(Termination::T2BaseVelocity);
    }
    let qdot_max = limits.qdot_max.map_or(s.qdot_max, JointVector::from_array);
    if (0..5).any(|i| s.qdot.get(i).abs() > qdot_max.get(i)) {
        return Some(Termination::T3JointVelocity);
    }
    if s.bucket_velocity.norm() > limits.v_max_term {
        return Some(Termination::T4BucketSpeed);
    }
    if s.boulder_height() < limits.h_min {
        return Some(Termination::T5Dropped);
    }
    if toggles.angle_of_attack
        && s.in_soil(limits)
        && s.edge_speed > limits.alpha_min_speed
        && s.alpha > limits.alpha_threshold
    {
        return Some(Termination::T6AngleOfAttack);
    }
    if s.time >= limits.time_limit {
        return Some(Termination::T1Timeout);
    }
    None
}

pub const TERM_NAMES: [&str; 13] = [
    "R1", "R2", "R3", "R4", "R5", "R6", "R7", "P1", "P2", "P3", "P4", "P5", "P6",
];

/// Weighted reward terms, R1..R7 then P1..P6.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms(pub [f64; 13]);

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

/// P2 shape: `e · 10^e` with `e = max(0, speed − v_max)`.
pub fn overspeed_penalty(speed: f64, v_max: f64) -> f64 {
    let e = (speed - v_max).max(0.0);
    e * 10f64.powf(e)
}

/// P5 shape: normalized depth times normalized lateral misalignment, each clamped to `[0, 1]`.
pub fn misaligned_scoop(depth: f64, lateral: f64, w: &RewardWeights) -> f64 {
    let d = ((depth - w.d_soft) / (w.d_hard - w.d_soft)).clamp(0.0, 1.0);
    let y = ((lateral.abs() - w.y_min) / (w.y_max - w.y_min)).clamp(0.0, 1.0);
    d * y
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Weighted reward terms for one step; `outcome` is the termination that fired, if any.
pub fn compute_rewards(
    s: &StepState,
    w: &RewardWeights,
    limits: &TerminationLimits,
    toggles: Toggles,
    outcome: Option<Termination>,
) -> RewardTerms {
    let by = s.boulder_rotbase.y;
    let r1 = (-by * by).exp();
    let dy = by - s.bucket_rotbase.y;
    let r2 = ind(dy * dy < w.proximity);
    let r3 = ind(r2 != 0.0 && s.bottom_plate_z < s.boulder_rotbase.z);
    let r4 = ind(s.in_shovel);
    let r5 = ind(s.in_shovel && s.curled(w));
    let lift = s.bucket_rotbase.z - s.soil_height - w.h_desired;
    let r6 = ind(s.boulder_dz > 0.0) * ind(s.in_shovel) * (-lift * lift).exp();
    let r7 = ind(outcome.is_some_and(Termination::is_success));
    let da = s.action.zip_map(s.prev_action, |a, b| a - b);
    let p1 = (0..5).map(|i| da.get(i).powi(2)).sum::<f64>();
    let p2 = overspeed_penalty(s.bucket_velocity.norm(), w.v_max);
    let p3 = ind(s.turning());
    let p4 = ind(s.in_soil(limits) && s.turning());
    let p5 = if toggles.misaligned_scoop {
        misaligned_scoop(s.edge_depth, dy, w)
    } else {
        0.0
    };
    let p6 = ind(outcome.is_some_and(Termination::is_failure));
    RewardTerms([
        w.r1_alignment * r1,
        w.r2_proximity * r2,
        w.r3_beneath * r3,
        w.r4_in_shovel * r4,
        w.r5_secured * r5,
        w.r6_lifted * r6,
        w.r7_success * r7,
        w.p1_smoothness * p1,
        w.p2_bucket_speed * p2,
        w.p3_turn * p3,
        w.p4_turn_digging * p4,
        w.p5_misaligned_scoop * p5,
        w.p6_failure * p6,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    const ON: Toggles = Toggles {
        angle_of_attack: true,
        misaligned_scoop: true,
    };

    fn resting() -> StepState {
        StepState {
            time: 1.0,
            qdot_max: JointVector::from_array([0.3, 0.2, 0.3, 0.3, 0.5]),
            bucket_rotbase: Point3::new(5.0, 0.0, 0.3),
            bottom_plate_z: 0.3,
            boulder_rotbase: Point3::new(4.0, 0.0, 0.2),
            edge_depth: -0.3,
            deadband: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn overspeed_examples() {
        assert_eq!(overspeed_penalty(0.6, 0.6), 0.0);
        let p = overspeed_penalty(0.8, 0.6);
        let e: f64 = 0.8 - 0.6;
        assert!((p - e * 10f64.powf(e)).abs() < 1e-15);
        assert!((p - 0.316978).abs() < 1e-5);
    }

    #[test]
    fn resting_state_has_only_shaping() {
        let s = resting();
        let w = RewardWeights::default();
        let l = TerminationLimits::default();
        assert_eq!(check_termination(&s, &l, &w, ON), None);
        let r = compute_rewards(&s, &w, &l, ON, None);
        assert_eq!(r.get("R1"), Some(0.005));
        assert!(r.0[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fault_is_a_failure() {
        let mut s = resting();
        s.fault = true;
        let w = RewardWeights::default();
        let l = TerminationLimits::default();
        let t = check_termination(&s, &l, &w, ON);
        assert_eq!(t, Some(Termination::Fault));
        assert_eq!(compute_rewards(&s, &w, &l, ON, t).get("P6"), Some(-0.5));
    }

    #[test]
    fn termination_codes_round_trip() {
        for t in Termination::ALL {
            assert_eq!(t.code().parse::<Termination>().unwrap(), t);
        }
    }
}
