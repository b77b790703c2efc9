//! Scripted align, scoop and lift controller used as a solvability baseline.
//!
//! The controller sees the same rock cloud as a policy plus the commands still
//! queued in the delay line, which it uses to predict where the arm will be
//! when the next command takes effect.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::arm::{edge_task, rotbase_rotation, saturate_rates, task_rates, ArmModel, JointVector};
use crate::env::Env;
use crate::sensor::RockCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Align,
    Descend,
    Drag,
    Curl,
    Lift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Target cutting-edge depth below the soil surface, m.
    pub depth: f64,
    /// Bucket pitch while cutting (negative: edge leading downward), rad.
    pub attack_curl: f64,
    /// Descent slope below horizontal, rad; kept below the plate rake.
    pub descent_slope: f64,
    /// Clearance beyond the rock's far side before descending, m.
    pub clearance: f64,
    /// Edge height above the soil while positioning, m.
    pub hover: f64,
    /// Edge travel past the rock's near side before curling, m.
    pub overshoot: f64,
    pub drag_speed: f64,
    pub move_speed: f64,
    pub lift_speed: f64,
    pub curl_rate: f64,
    /// Curl at which lifting starts, rad.
    pub final_curl: f64,
    /// Lateral alignment tolerance, m.
    pub align_tolerance: f64,
    pub turn_gain: f64,
    /// Smallest turn command issued while misaligned; must clear the deadband.
    pub turn_min: f64,
    pub turn_max: f64,
    /// Proportional gain on edge position error, 1/s.
    pub position_gain: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            depth: 0.15,
            attack_curl: -0.4,
            descent_slope: 0.3,
            clearance: 0.35,
            hover: 0.15,
            overshoot: 0.15,
            drag_speed: 0.3,
            move_speed: 0.4,
            lift_speed: 0.3,
            curl_rate: 0.4,
            final_curl: 0.95,
            align_tolerance: 0.1,
            turn_gain: 1.0,
            turn_min: 0.08,
            turn_max: 0.3,
            position_gain: 1.5,
        }
    }
}

/// Rock footprint estimate in the rotating base frame of the reset turn angle.
#[derive(Clone, Copy, Debug, PartialEq)]
struct RockEstimate {
    /// Center in the base frame.
    center: Point3<f64>,
    /// Radial extent `(near, far)` measured from the cabin axis.
    near: f64,
    far: f64,
}

fn estimate(cloud: &RockCloud, q_turn: f64) -> Option<RockEstimate> {
    if !cloud.valid {
        return None;
    }
    let to_base = rotbase_rotation(q_turn).inverse();
    let c = cloud.centroid();
    let (mut near, mut far) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &cloud.points {
        let r = p.coords.xy().norm();
        near = near.min(r);
        far = far.max(r);
    }
    Some(RockEstimate {
        center: to_base * c,
        near,
        far,
    })
}

/// Inputs the oracle reads each step.
#[derive(Clone, Debug)]
pub struct OracleInput<'a> {
    pub q: JointVector<f64>,
    /// Commands queued but not yet executed, oldest first.
    pub pending: Vec<JointVector<f64>>,
    pub dt_control: f64,
    pub cloud: &'a RockCloud,
    pub soil_height: f64,
}

impl<'a> OracleInput<'a> {
    pub fn from_env(env: &'a Env) -> Self {
        Self {
            q: env.q(),
            pending: env.pipeline().pending().copied().collect(),
            dt_control: env.pipeline().dt_control(),
            cloud: env.cloud(),
            soil_height: env.soil().surface_height,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScriptedOracle {
    pub config: OracleConfig,
    arm: ArmModel<f64>,
    phase: Phase,
    rock: Option<RockEstimate>,
    drag_stop: f64,
}

impl ScriptedOracle {
    pub fn new(arm: ArmModel<f64>, config: OracleConfig) -> Self {
        Self {
            config,
            arm,
            phase: Phase::Align,
            rock: None,
            drag_stop: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.phase = Phase::Align;
        self.rock = None;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Joint configuration once every queued command has executed.
    fn predict(&self, input: &OracleInput) -> JointVector<f64> {
        let mut q = input.q;
        for cmd in &input.pending {
            for (i, j) in self.arm.joints.iter().enumerate() {
                let r = cmd.get(i).clamp(-j.vel_max, j.vel_max);
                q.set(i, (q.get(i) + r * input.dt_control).clamp(j.min, j.max));
            }
        }
        q
    }

    pub fn act(&mut self, input: &OracleInput) -> JointVector<f64> {
        let c = self.config.clone();
        let q = self.predict(input);
        if matches!(self.phase, Phase::Align) {
            if let Some(e) = estimate(input.cloud, input.q.turn) {
                self.rock = Some(e);
            }
        }
        let Some(rock) = self.rock else {
            return JointVector::zeros();
        };
        let (edge, curl) = edge_task(&self.arm, &q);
        let soil = input.soil_height;
        let rock_rot = rotbase_rotation(q.turn) * rock.center;
        let lateral = rock_rot.y;
        let mut turn = 0.0;
        let (mut vx, mut vz, mut wc);
        let track = |target: f64, now: f64, limit: f64| (c.position_gain * (target - now)).clamp(-limit, limit);
        let curl_track = |target: f64, now: f64| (2.0 * (target - now)).clamp(-c.curl_rate, c.curl_rate);
        loop {
            match self.phase {
                Phase::Align => {
                    if lateral.abs() >= c.align_tolerance * 0.5 {
                        let t = (c.turn_gain * lateral).clamp(-c.turn_max, c.turn_max);
                        turn = if t.abs() < c.turn_min { c.turn_min.copysign(lateral) } else { t };
                    }
                    let x0 = rock.far + c.clearance;
                    let z0 = soil + c.hover;
                    vx = track(x0, edge.x, c.move_speed);
                    vz = track(z0, edge.z, c.move_speed);
                    wc = curl_track(c.attack_curl, curl);
                    let placed = (edge.x - x0).abs() < 0.08 && (edge.z - z0).abs() < 0.08 && (curl - c.attack_curl).abs() < 0.08;
                    if lateral.abs() < c.align_tolerance && placed {
                        self.phase = Phase::Descend;
                        self.drag_stop = rock.near - c.overshoot;
                        continue;
                    }
                }
                Phase::Descend => {
                    let target = soil - c.depth;
                    if edge.z <= target + 0.01 {
                        self.phase = Phase::Drag;
                        continue;
                    }
                    vx = -c.drag_speed;
                    vz = -(c.drag_speed * c.descent_slope.tan()).min(track(edge.z, target, c.move_speed).abs().max(0.02));
                    wc = curl_track(c.attack_curl, curl);
                }
                Phase::Drag => {
                    if edge.x <= self.drag_stop {
                        self.phase = Phase::Curl;
                        continue;
                    }
                    vx = -c.drag_speed;
                    vz = track(soil - c.depth, edge.z, c.move_speed);
                    wc = curl_track(c.attack_curl, curl);
                }
                Phase::Curl => {
                    if curl >= c.final_curl - 0.02 {
                        self.phase = Phase::Lift;
                        continue;
                    }
                    vx = 0.0;
                    vz = 0.1;
                    wc = c.curl_rate;
                }
                Phase::Lift => {
                    vx = 0.0;
                    vz = c.lift_speed;
                    wc = curl_track(c.final_curl + 0.1, curl);
                }
            }
            break;
        }
        let rates = task_rates(&self.arm, &q, vx, vz, wc);
        let mut a = saturate_rates(&self.arm, &rates);
        a.turn = turn;
        a
    }
}
