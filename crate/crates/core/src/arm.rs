//! Kinematics and actuation of the simplified five-joint excavator arm.
//!
//! The chain is `turn -> boom -> stick -> tele -> pitch -> bucket`. Every joint
//! has a fixed origin offset from its parent frame followed by its own motion
//! (rotation about, or translation along, a fixed local axis). The bucket
//! reference frame sits at the center of the bottom plate: `x` points away from
//! the cabin when the bucket is flat, `y` across the bucket, `z` up out of the
//! bottom plate. The opening faces `-x`, so dragging toward the cabin scoops.

use std::collections::VecDeque;

use nalgebra::{Isometry3, Matrix3, Matrix3x4, Matrix4, Point3, Translation3, Unit, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{clamp, Real};

pub const NUM_JOINTS: usize = 5;
pub const JOINT_NAMES: [&str; NUM_JOINTS] = ["turn", "boom", "stick", "tele", "pitch"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("joint `{joint}` value {value} outside [{min}, {max}]")]
    OutOfLimits {
        joint: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("history length {len} x {dt} s cannot cover a {max_delay} s delay")]
    HistoryTooShort { len: usize, dt: f64, max_delay: f64 },
}

/// One value per actuated joint, ordered `[turn, boom, stick, tele, pitch]`.
///
/// Angles are radians, the telescopic joint is meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct JointVector<T> {
    pub turn: T,
    pub boom: T,
    pub stick: T,
    pub tele: T,
    pub pitch: T,
}

impl<T: Real> JointVector<T> {
    pub fn zeros() -> Self {
        Self::splat(T::ZERO)
    }

    pub fn splat(v: T) -> Self {
        Self::from_array([v; NUM_JOINTS])
    }

    pub fn from_array(a: [T; NUM_JOINTS]) -> Self {
        Self {
            turn: a[0],
            boom: a[1],
            stick: a[2],
            tele: a[3],
            pitch: a[4],
        }
    }

    pub fn to_array(self) -> [T; NUM_JOINTS] {
        [self.turn, self.boom, self.stick, self.tele, self.pitch]
    }

    pub fn get(&self, i: usize) -> T {
        self.to_array()[i]
    }

    pub fn set(&mut self, i: usize, v: T) {
        match i {
            0 => self.turn = v,
            1 => self.boom = v,
            2 => self.stick = v,
            3 => self.tele = v,
            4 => self.pitch = v,
            _ => panic!("joint index {i} out of range"),
        }
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::from_array(self.to_array().map(f))
    }

    pub fn zip_map(self, other: Self, f: impl Fn(T, T) -> T) -> Self {
        let a = self.to_array();
        let b = other.to_array();
        Self::from_array(std::array::from_fn(|i| f(a[i], b[i])))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite_val())
    }

    pub fn cast<U: Real>(self) -> JointVector<U> {
        JointVector::from_array(self.to_array().map(|v| U::lit(v.to_f64())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// Geometry, limits and load data for one joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct JointSpec<T: Real> {
    pub kind: JointKind,
    /// Motion axis in the joint's own frame.
    pub axis: Vector3<T>,
    /// Offset of this joint from the parent frame.
    pub origin: Vector3<T>,
    pub min: T,
    pub max: T,
    pub vel_max: T,
    /// Actuator rating, N·m or N. Used for torque normalization.
    pub effort_max: T,
    /// Mass of the link driven by this joint (kg) and its center in the joint frame.
    pub link_mass: T,
    pub link_com: Vector3<T>,
}

/// Open-box bucket: bottom plate, back plate and two side plates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BucketGeometry<T: Real> {
    /// Bottom plate extent along bucket `x` (cutting edge to back plate).
    pub length: T,
    pub width: T,
    /// Back and side plate height.
    pub height: T,
    /// Plate thickness; also the cutting-edge thickness seen by the soil.
    pub edge_thickness: T,
}

impl<T: Real> BucketGeometry<T> {
    /// Cutting-edge midpoint in the bucket frame.
    pub fn edge_point(&self) -> Point3<T> {
        Point3::new(-self.length * T::HALF, T::ZERO, T::ZERO)
    }

    /// Heel (bottom of the back plate) in the bucket frame.
    pub fn heel_point(&self) -> Point3<T> {
        Point3::new(self.length * T::HALF, T::ZERO, T::ZERO)
    }

    /// Geometric center of the open-box volume in the bucket frame.
    pub fn centroid(&self) -> Point3<T> {
        Point3::new(T::ZERO, T::ZERO, self.height * T::HALF)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ArmModel<T: Real> {
    pub joints: [JointSpec<T>; NUM_JOINTS],
    /// Bucket reference frame relative to the pitch joint frame.
    pub bucket_offset: Vector3<T>,
    pub bucket: BucketGeometry<T>,
    /// LiDAR position in the rotating base frame.
    pub sensor_mount: Vector3<T>,
    /// Friction of the support bases against the ground.
    pub base_friction: T,
    /// Largest horizontal tool force the arm can develop at the edge (N).
    pub dig_force_max: T,
    /// Largest downward tool force the arm can develop at the edge (N).
    pub penetration_force_max: T,
}

impl<T: Real> ArmModel<T> {
    /// Dimensions roughly matching a 12 t walking excavator with ~7 m reach.
    pub fn default_excavator() -> Self {
        let l = T::lit;
        let v = |x: f64, y: f64, z: f64| Vector3::new(l(x), l(y), l(z));
        let rev = |axis: Vector3<T>,
                   origin: Vector3<T>,
                   min: f64,
                   max: f64,
                   vel: f64,
                   effort: f64,
                   mass: f64,
                   com: Vector3<T>| JointSpec {
            kind: JointKind::Revolute,
            axis,
            origin,
            min: l(min),
            max: l(max),
            vel_max: l(vel),
            effort_max: l(effort),
            link_mass: l(mass),
            link_com: com,
        };
        let mut tele = rev(
            v(1.0, 0.0, 0.0),
            v(1.6, 0.0, 0.0),
            0.0,
            1.2,
            0.3,
            8.0e4,
            300.0,
            v(0.2, 0.0, 0.0),
        );
        tele.kind = JointKind::Prismatic;
        Self {
            joints: [
                rev(
                    v(0.0, 0.0, 1.0),
                    v(0.0, 0.0, 0.0),
                    -1.5,
                    1.5,
                    0.3,
                    6.0e4,
                    0.0,
                    v(0.0, 0.0, 0.0),
                ),
                rev(
                    v(0.0, 1.0, 0.0),
                    v(0.6, 0.0, 1.6),
                    -1.1,
                    0.4,
                    0.2,
                    3.0e5,
                    900.0,
                    v(1.8, 0.0, 0.0),
                ),
                rev(
                    v(0.0, 1.0, 0.0),
                    v(3.6, 0.0, 0.0),
                    0.0,
                    2.8,
                    0.3,
                    1.5e5,
                    500.0,
                    v(0.8, 0.0, 0.0),
                ),
                tele,
                rev(
                    v(0.0, 1.0, 0.0),
                    v(0.4, 0.0, 0.0),
                    -3.3,
                    1.0,
                    0.5,
                    8.0e4,
                    400.0,
                    v(-0.5, 0.0, -0.5),
                ),
            ],
            bucket_offset: v(-0.5, 0.0, -0.9),
            bucket: BucketGeometry {
                length: l(1.0),
                width: l(1.2),
                height: l(0.9),
                edge_thickness: l(0.03),
            },
            sensor_mount: v(0.5, 0.0, 3.0),
            base_friction: l(0.8),
            dig_force_max: l(6.0e4),
            penetration_force_max: l(4.0e4),
        }
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        for (spec, name) in self.joints.iter().zip(JOINT_NAMES) {
            if !(spec.min < spec.max) {
                return Err(ArmError::InvalidModel(format!("{name}: empty position interval")));
            }
            if !(spec.vel_max > T::ZERO) {
                return Err(ArmError::InvalidModel(format!("{name}: velocity limit must be > 0")));
            }
            if spec.axis.norm() < T::lit(1e-9) {
                return Err(ArmError::InvalidModel(format!("{name}: zero axis")));
            }
        }
        let b = &self.bucket;
        if !(b.length > T::ZERO && b.width > T::ZERO && b.height > T::ZERO) {
            return Err(ArmError::InvalidModel("bucket plates must have positive extent".into()));
        }
        Ok(())
    }

    pub fn lower(&self) -> JointVector<T> {
        JointVector::from_array(std::array::from_fn(|i| self.joints[i].min))
    }

    pub fn upper(&self) -> JointVector<T> {
        JointVector::from_array(std::array::from_fn(|i| self.joints[i].max))
    }

    pub fn vel_max(&self) -> JointVector<T> {
        JointVector::from_array(std::array::from_fn(|i| self.joints[i].vel_max))
    }

    pub fn effort_max(&self) -> JointVector<T> {
        JointVector::from_array(std::array::from_fn(|i| self.joints[i].effort_max))
    }

    pub fn check_limits(&self, q: &JointVector<T>) -> Result<(), ArmError> {
        for (i, spec) in self.joints.iter().enumerate() {
            let value = q.get(i);
            if !(value >= spec.min && value <= spec.max) {
                return Err(ArmError::OutOfLimits {
                    joint: JOINT_NAMES[i],
                    value: value.to_f64(),
                    min: spec.min.to_f64(),
                    max: spec.max.to_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn clamp_to_limits(&self, q: &JointVector<T>) -> JointVector<T> {
        JointVector::from_array(std::array::from_fn(|i| {
            clamp(q.get(i), self.joints[i].min, self.joints[i].max)
        }))
    }

    pub fn cast<U: Real>(&self) -> ArmModel<U> {
        let c = |x: T| U::lit(x.to_f64());
        let cv = |x: &Vector3<T>| Vector3::new(c(x.x), c(x.y), c(x.z));
        ArmModel {
            joints: std::array::from_fn(|i| {
                let j = &self.joints[i];
                JointSpec {
                    kind: j.kind,
                    axis: cv(&j.axis),
                    origin: cv(&j.origin),
                    min: c(j.min),
                    max: c(j.max),
                    vel_max: c(j.vel_max),
                    effort_max: c(j.effort_max),
                    link_mass: c(j.link_mass),
                    link_com: cv(&j.link_com),
                }
            }),
            bucket_offset: cv(&self.bucket_offset),
            bucket: BucketGeometry {
                length: c(self.bucket.length),
                width: c(self.bucket.width),
                height: c(self.bucket.height),
                edge_thickness: c(self.bucket.edge_thickness),
            },
            sensor_mount: cv(&self.sensor_mount),
            base_friction: c(self.base_friction),
            dig_force_max: c(self.dig_force_max),
            penetration_force_max: c(self.penetration_force_max),
        }
    }
}

/// Bucket reference pose in the base frame and in the rotating base frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucketPose<T: Real> {
    pub base: Isometry3<T>,
    pub rotbase: Isometry3<T>,
}

impl<T: Real> BucketPose<T> {
    /// Bucket pitch in the excavation plane; positive closes the opening upward.
    pub fn curl_angle(&self) -> T {
        let x_axis = self.rotbase.rotation * Vector3::x();
        (-x_axis.z).atan2(x_axis.x)
    }
}

/// World placement of every link frame, kept for Jacobians and statics.
#[derive(Clone, Debug)]
pub struct ChainFrames<T: Real> {
    /// Frame of each link after its joint motion, in the base frame.
    pub links: [Isometry3<T>; NUM_JOINTS],
    pub kinds: [JointKind; NUM_JOINTS],
    /// Joint axes expressed in the base frame.
    pub axes: [Unit<Vector3<T>>; NUM_JOINTS],
}

impl<T: Real> ChainFrames<T> {
    pub fn origin(&self, i: usize) -> Point3<T> {
        Point3::from(self.links[i].translation.vector)
    }

    /// Base-frame velocity of `p` rigidly attached past every joint.
    pub fn point_velocity(&self, p: &Point3<T>, qdot: &JointVector<T>) -> Vector3<T> {
        let cols = self.point_jacobian(p);
        let mut v = Vector3::zeros();
        for (i, col) in cols.iter().enumerate() {
            v += col * qdot.get(i);
        }
        v
    }

    /// Columns of the linear velocity Jacobian of `p`.
    pub fn point_jacobian(&self, p: &Point3<T>) -> [Vector3<T>; NUM_JOINTS] {
        std::array::from_fn(|i| match self.kinds[i] {
            JointKind::Revolute => self.axes[i].cross(&(p - self.origin(i))),
            JointKind::Prismatic => self.axes[i].into_inner(),
        })
    }

    /// Base-frame angular velocity of the bucket.
    pub fn angular_velocity(&self, qdot: &JointVector<T>) -> Vector3<T> {
        let mut w = Vector3::zeros();
        for i in 0..NUM_JOINTS {
            if self.kinds[i] == JointKind::Revolute {
                w += self.axes[i].into_inner() * qdot.get(i);
            }
        }
        w
    }
}

fn joint_motion<T: Real>(spec: &JointSpec<T>, value: T) -> Isometry3<T> {
    match spec.kind {
        JointKind::Revolute => {
            let axis = Unit::new_normalize(spec.axis);
            Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&axis, value),
            )
        }
        JointKind::Prismatic => {
            let axis = spec.axis.normalize();
            Isometry3::from_parts(Translation3::from(axis * value), UnitQuaternion::identity())
        }
    }
}

/// Rotation taking base-frame vectors into the rotating base frame.
pub fn rotbase_rotation<T: Real>(q_turn: T) -> UnitQuaternion<T> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -q_turn)
}

/// Forward kinematics without the limit check.
pub fn forward_chain<T: Real>(model: &ArmModel<T>, q: &JointVector<T>) -> (BucketPose<T>, ChainFrames<T>) {
    let mut frame = Isometry3::identity();
    let mut links = [Isometry3::identity(); NUM_JOINTS];
    let mut axes = [Vector3::z_axis(); NUM_JOINTS];
    let mut kinds = [JointKind::Revolute; NUM_JOINTS];
    for (i, spec) in model.joints.iter().enumerate() {
        frame *= Translation3::from(spec.origin);
        axes[i] = Unit::new_normalize(frame.rotation * spec.axis);
        frame *= joint_motion(spec, q.get(i));
        links[i] = frame;
        kinds[i] = spec.kind;
    }
    let base = frame * Translation3::from(model.bucket_offset);
    let rotbase = rotbase_rotation(q.turn) * base;
    (BucketPose { base, rotbase }, ChainFrames { links, kinds, axes })
}

/// Bucket reference pose for joint configuration `q`.
pub fn forward_kinematics<T: Real>(model: &ArmModel<T>, q: &JointVector<T>) -> Result<BucketPose<T>, ArmError> {
    model.check_limits(q)?;
    Ok(forward_chain(model, q).0)
}

/// Linear velocity of the bucket origin and bucket angular velocity, both
/// relative to the rotating base frame and expressed in it.
pub fn bucket_twist_rotbase<T: Real>(
    frames: &ChainFrames<T>,
    pose: &BucketPose<T>,
    q_turn: T,
    qdot: &JointVector<T>,
) -> (Vector3<T>, Vector3<T>) {
    let mut rel = *qdot;
    rel.turn = T::ZERO;
    let p = Point3::from(pose.base.translation.vector);
    let r = rotbase_rotation(q_turn);
    (r * frames.point_velocity(&p, &rel), r * frames.angular_velocity(&rel))
}

/// Joint loads balancing a force/moment applied at `point` plus link gravity.
pub fn inverse_statics<T: Real>(
    model: &ArmModel<T>,
    frames: &ChainFrames<T>,
    point: &Point3<T>,
    force: &Vector3<T>,
    moment: &Vector3<T>,
    gravity: T,
) -> JointVector<T> {
    let mut tau = JointVector::zeros();
    let g = Vector3::new(T::ZERO, T::ZERO, -gravity);
    for i in 0..NUM_JOINTS {
        let axis = frames.axes[i].into_inner();
        let origin = frames.origin(i);
        let mut load = match frames.kinds[i] {
            JointKind::Revolute => axis.dot(&(point - origin).cross(force)) + axis.dot(moment),
            JointKind::Prismatic => axis.dot(force),
        };
        // gravity of this link and everything distal to it
        for (j, spec) in model.joints.iter().enumerate().skip(i) {
            if spec.link_mass <= T::ZERO {
                continue;
            }
            let com = frames.links[j] * Point3::from(spec.link_com);
            let w = g * spec.link_mass;
            load += match frames.kinds[i] {
                JointKind::Revolute => axis.dot(&(com - origin).cross(&w)),
                JointKind::Prismatic => axis.dot(&w),
            };
        }
        // actuator holds the load
        tau.set(i, -load);
    }
    tau
}

/// Zero the turn command inside the dead zone `|a| < eps`.
#[inline]
pub fn apply_deadband<T: Real>(a_turn: T, eps: T) -> T {
    if a_turn.abs() < eps {
        T::ZERO
    } else {
        a_turn
    }
}

/// Number of whole control periods covering `delay`.
pub fn delay_steps(delay: f64, dt_control: f64) -> usize {
    // tolerance absorbs 0.5 / (1/6) landing a hair above 3
    ((delay / dt_control) - 1e-9).ceil().max(0.0) as usize
}

/// Deadband, command delay and turn-command history for one environment.
#[derive(Clone, Debug)]
pub struct ActionPipeline<T: Real> {
    dt_control: f64,
    deadband: T,
    max_delay: f64,
    delay: f64,
    pending: VecDeque<JointVector<T>>,
    turn_history: VecDeque<T>,
    history_len: usize,
}

impl<T: Real> ActionPipeline<T> {
    pub fn new(dt_control: f64, deadband: T, history_len: usize, max_delay: f64) -> Result<Self, ArmError> {
        if (history_len as f64) * dt_control + 1e-12 < max_delay {
            return Err(ArmError::HistoryTooShort {
                len: history_len,
                dt: dt_control,
                max_delay,
            });
        }
        let mut p = Self {
            dt_control,
            deadband,
            max_delay,
            delay: 0.0,
            pending: VecDeque::with_capacity(delay_steps(max_delay, dt_control) + 1),
            turn_history: VecDeque::with_capacity(history_len),
            history_len,
        };
        p.reset(0.0);
        Ok(p)
    }

    /// Start an episode with a fixed command delay (seconds, clamped to the maximum).
    pub fn reset(&mut self, delay: f64) {
        self.delay = delay.clamp(0.0, self.max_delay);
        let n = delay_steps(self.delay, self.dt_control);
        self.pending.clear();
        self.pending.extend(std::iter::repeat(JointVector::zeros()).take(n));
        self.turn_history.clear();
        self.turn_history
            .extend(std::iter::repeat(T::ZERO).take(self.history_len));
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn delay_steps(&self) -> usize {
        self.pending.len()
    }

    pub fn deadband(&self) -> T {
        self.deadband
    }

    pub fn dt_control(&self) -> f64 {
        self.dt_control
    }

    /// Deadband the turn rate of a raw command.
    pub fn shape(&self, mut a: JointVector<T>) -> JointVector<T> {
        a.turn = apply_deadband(a.turn, self.deadband);
        a
    }

    /// Queue `a` and return the command issued `delay_steps` periods ago.
    pub fn push_command(&mut self, a: JointVector<T>) -> JointVector<T> {
        self.turn_history.pop_front();
        self.turn_history.push_back(a.turn);
        self.pending.push_back(a);
        self.pending.pop_front().unwrap_or_else(JointVector::zeros)
    }

    /// Turn commands, oldest first.
    pub fn turn_history(&self) -> impl Iterator<Item = T> + '_ {
        self.turn_history.iter().copied()
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    /// Raw pipeline contents for logging and replay checks.
    pub fn pending(&self) -> impl Iterator<Item = &JointVector<T>> {
        self.pending.iter()
    }
}

/// Advance joint positions under velocity commands with saturation and limits.
///
/// Returns the new positions and the realized rates (zero where a position
/// limit engaged).
pub fn integrate_joints<T: Real>(
    model: &ArmModel<T>,
    q: &JointVector<T>,
    qdot_cmd: &JointVector<T>,
    dt: T,
) -> (JointVector<T>, JointVector<T>) {
    let mut q_next = *q;
    let mut realized = JointVector::zeros();
    for (i, spec) in model.joints.iter().enumerate() {
        let rate = clamp(qdot_cmd.get(i), -spec.vel_max, spec.vel_max);
        let target = q.get(i) + rate * dt;
        let (pos, r) = if target > spec.max {
            (spec.max, T::ZERO)
        } else if target < spec.min {
            (spec.min, T::ZERO)
        } else {
            (target, rate)
        };
        q_next.set(i, pos);
        realized.set(i, r);
    }
    (q_next, realized)
}

/// Arm joints used for planar edge motion: boom, stick, tele, pitch.
pub const PLANAR_JOINTS: [usize; 4] = [1, 2, 3, 4];

/// Cutting-edge position in the rotating base frame and bucket curl angle.
pub fn edge_task<T: Real>(model: &ArmModel<T>, q: &JointVector<T>) -> (Point3<T>, T) {
    let (pose, _) = forward_chain(model, q);
    (pose.rotbase * model.bucket.edge_point(), pose.curl_angle())
}

/// Jacobian of `(edge x, edge z, curl)` in the rotating base frame with
/// respect to [`PLANAR_JOINTS`].
pub fn edge_task_jacobian<T: Real>(model: &ArmModel<T>, q: &JointVector<T>) -> Matrix3x4<T> {
    let (pose, frames) = forward_chain(model, q);
    let edge = pose.base * model.bucket.edge_point();
    let r = rotbase_rotation(q.turn);
    let cols = frames.point_jacobian(&edge);
    let mut j = Matrix3x4::zeros();
    for (c, &i) in PLANAR_JOINTS.iter().enumerate() {
        let v = r * cols[i];
        j[(0, c)] = v.x;
        j[(1, c)] = v.z;
        if frames.kinds[i] == JointKind::Revolute {
            j[(2, c)] = (r * frames.axes[i].into_inner()).y;
        }
    }
    j
}

fn damped_pinv<T: Real>(j: &Matrix3x4<T>, damping: T) -> nalgebra::Matrix4x3<T> {
    let jjt = j * j.transpose() + Matrix3::identity() * (damping * damping);
    let inv = jjt.try_inverse().unwrap_or_else(Matrix3::zeros);
    j.transpose() * inv
}

/// Joint rates realizing an edge velocity `(v_x, v_z)` and curl rate in the
/// rotating base frame. The turn rate is zero; spare freedom pulls the
/// telescope toward mid-stroke.
pub fn task_rates<T: Real>(model: &ArmModel<T>, q: &JointVector<T>, v_x: T, v_z: T, curl_rate: T) -> JointVector<T> {
    let j = edge_task_jacobian(model, q);
    let pinv = damped_pinv(&j, T::lit(1e-3));
    let task = Vector3::new(v_x, v_z, curl_rate);
    let mut rates: Vector4<T> = pinv * task;
    let tele = &model.joints[3];
    let mid = (tele.min + tele.max) * T::HALF;
    let mut pull = Vector4::zeros();
    pull[2] = (mid - q.tele) * T::lit(0.5);
    rates += (Matrix4::identity() - pinv * j) * pull;
    let mut out = JointVector::zeros();
    for (c, &i) in PLANAR_JOINTS.iter().enumerate() {
        out.set(i, rates[c]);
    }
    out
}

/// Scale `rates` uniformly so no joint exceeds its velocity limit.
pub fn saturate_rates<T: Real>(model: &ArmModel<T>, rates: &JointVector<T>) -> JointVector<T> {
    let mut scale = T::ONE;
    for (i, spec) in model.joints.iter().enumerate() {
        let r = rates.get(i).abs();
        if r > spec.vel_max {
            scale = scale.min(spec.vel_max / r);
        }
    }
    rates.map(|r| r * scale)
}

/// Planar inverse kinematics for the cutting edge and curl, starting at `seed`.
/// Returns `None` when the target is not reached within limits.
pub fn solve_edge_ik<T: Real>(
    model: &ArmModel<T>,
    seed: &JointVector<T>,
    edge_x: T,
    edge_z: T,
    curl: T,
) -> Option<JointVector<T>> {
    let mut q = model.clamp_to_limits(seed);
    for _ in 0..200 {
        let (edge, c) = edge_task(model, &q);
        let err = Vector3::new(edge_x - edge.x, edge_z - edge.z, curl - c);
        if err.norm() < T::lit(1e-6) {
            return Some(q);
        }
        let j = edge_task_jacobian(model, &q);
        let step: Vector4<T> = damped_pinv(&j, T::lit(0.05)) * err;
        for (c, &i) in PLANAR_JOINTS.iter().enumerate() {
            q.set(i, q.get(i) + step[c]);
        }
        q = model.clamp_to_limits(&q);
    }
    let (edge, c) = edge_task(model, &q);
    let err = Vector3::new(edge_x - edge.x, edge_z - edge.z, curl - c);
    (err.norm() < T::lit(1e-4)).then_some(q)
}
