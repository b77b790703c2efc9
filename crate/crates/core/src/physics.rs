//! Rigid rock dynamics against the ground plane and the kinematic bucket.
//!
//! Contacts are soft constraints: each contact behaves like an implicit
//! spring-damper (stiffness `k`, critical damping for its share of the
//! effective mass) solved with projected Gauss-Seidel iterations on impulses.
//! Normal impulses are clamped non-negative and friction impulses are clamped
//! to the Coulomb disc `μ λ_n`.

use std::sync::Arc;

use nalgebra::{Isometry3, Matrix3, Point3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::BucketGeometry;
use crate::geometry::ConvexMesh;

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Contact spring stiffness per contact, N/m.
    pub stiffness: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub iterations: usize,
    /// Deepest plate penetration still reported as contact, m.
    pub contact_zone: f64,
    /// Separation below which a speculative contact is reported, m.
    pub margin: f64,
    /// Spacing of collision samples along the bucket edges, m.
    pub edge_spacing: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            stiffness: 1e5,
            gravity: GRAVITY,
            dt: 1.0 / 120.0,
            substeps: 20,
            iterations: 8,
            contact_zone: 0.15,
            margin: 0.05,
            edge_spacing: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RockBody {
    pub mesh: Arc<ConvexMesh>,
    pub mass: f64,
    /// Inertia about the center of mass in the body frame.
    pub inertia_body: Matrix3<f64>,
    inv_inertia_body: Matrix3<f64>,
    pub friction: f64,
    pub position: Point3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl RockBody {
    /// Body at the origin, at rest, with uniform `density`.
    pub fn new(mesh: Arc<ConvexMesh>, density: f64, friction: f64) -> Self {
        let mass = density * mesh.volume;
        let inertia_body = mesh.unit_inertia * density;
        let inv_inertia_body = inertia_body.try_inverse().unwrap_or_else(Matrix3::zeros);
        Self {
            mesh,
            mass,
            inertia_body,
            inv_inertia_body,
            friction,
            position: Point3::origin(),
            orientation: UnitQuaternion::identity(),
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    /// Rescale density so the body has `mass`.
    pub fn set_mass(&mut self, mass: f64) {
        let s = mass / self.mass;
        self.mass = mass;
        self.inertia_body *= s;
        self.inv_inertia_body /= s;
    }

    pub fn pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(self.position.coords.into(), self.orientation)
    }

    pub fn inv_inertia_world(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        r.matrix() * self.inv_inertia_body * r.matrix().transpose()
    }

    pub fn inertia_world(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        r.matrix() * self.inertia_body * r.matrix().transpose()
    }

    pub fn point_velocity(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.linear_velocity + self.angular_velocity.cross(&(p - self.position))
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.linear_velocity.norm_squared()
            + 0.5 * self.angular_velocity.dot(&(self.inertia_world() * self.angular_velocity))
    }

    pub fn potential_energy(&self, gravity: f64) -> f64 {
        self.mass * gravity * self.position.z
    }

    pub fn world_vertices(&self, out: &mut Vec<Point3<f64>>) {
        let pose = self.pose();
        out.clear();
        out.extend(self.mesh.vertices.iter().map(|v| pose * v));
    }

    pub fn lowest_point(&self) -> f64 {
        let pose = self.pose();
        self.mesh
            .vertices
            .iter()
            .map(|v| (pose * v).z)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.position.coords.iter().all(|x| x.is_finite())
            && self.orientation.coords.iter().all(|x| x.is_finite())
            && self.linear_velocity.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
    }
}

/// Thin rectangular plate; `normal` points into the bucket volume and the
/// plate material occupies `[-thickness, 0]` along it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plate {
    pub center: Point3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub half: Vector2<f64>,
    pub thickness: f64,
}

impl Plate {
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Plate {
        Plate {
            center: iso * self.center,
            u: iso.rotation * self.u,
            v: iso.rotation * self.v,
            normal: iso.rotation * self.normal,
            ..*self
        }
    }

    /// Ray hit distance against the plate's inner face rectangle (either side).
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.center - origin).dot(&self.normal) / denom;
        if !(t > 0.0 && t < t_max) {
            return None;
        }
        let p = origin + dir * t - self.center;
        (p.dot(&self.u).abs() <= self.half.x && p.dot(&self.v).abs() <= self.half.y).then_some(t)
    }
}

pub const PLATE_BOTTOM: usize = 0;
pub const PLATE_BACK: usize = 1;
pub const PLATE_LEFT: usize = 2;
pub const PLATE_RIGHT: usize = 3;

/// Static collision description of the open-box bucket in its own frame.
#[derive(Clone, Debug)]
pub struct BucketCollider {
    pub geometry: BucketGeometry<f64>,
    pub plates: [Plate; 4],
    /// Points along the box edges used for edge-into-rock contacts.
    pub edge_samples: Vec<Point3<f64>>,
    pub bound_center: Point3<f64>,
    pub bound_radius: f64,
}

impl BucketCollider {
    pub fn new(geometry: &BucketGeometry<f64>, edge_spacing: f64) -> Self {
        let (d, w, h, t) = (
            geometry.length,
            geometry.width,
            geometry.height,
            geometry.edge_thickness,
        );
        let x = Vector3::x();
        let y = Vector3::y();
        let z = Vector3::z();
        let plates = [
            Plate {
                center: Point3::origin(),
                u: x,
                v: y,
                normal: z,
                half: Vector2::new(d / 2.0, w / 2.0),
                thickness: t,
            },
            Plate {
                center: Point3::new(d / 2.0, 0.0, h / 2.0),
                u: z,
                v: y,
                normal: -x,
                half: Vector2::new(h / 2.0, w / 2.0),
                thickness: t,
            },
            Plate {
                center: Point3::new(0.0, w / 2.0, h / 2.0),
                u: x,
                v: z,
                normal: -y,
                half: Vector2::new(d / 2.0, h / 2.0),
                thickness: t,
            },
            Plate {
                center: Point3::new(0.0, -w / 2.0, h / 2.0),
                u: x,
                v: z,
                normal: y,
                half: Vector2::new(d / 2.0, h / 2.0),
                thickness: t,
            },
        ];
        let corners = |x: f64, y: f64, z: f64| Point3::new(x, y, z);
        let (x0, x1, y0, y1) = (-d / 2.0, d / 2.0, -w / 2.0, w / 2.0);
        let segments = [
            (corners(x0, y0, 0.0), corners(x0, y1, 0.0)), // cutting edge
            (corners(x1, y0, 0.0), corners(x1, y1, 0.0)), // heel
            (corners(x1, y0, h), corners(x1, y1, h)),     // back top
            (corners(x0, y0, 0.0), corners(x1, y0, 0.0)),
            (corners(x0, y1, 0.0), corners(x1, y1, 0.0)),
            (corners(x0, y0, 0.0), corners(x0, y0, h)),
            (corners(x0, y1, 0.0), corners(x0, y1, h)),
            (corners(x0, y0, h), corners(x1, y0, h)),
            (corners(x0, y1, h), corners(x1, y1, h)),
            (corners(x1, y0, 0.0), corners(x1, y0, h)),
            (corners(x1, y1, 0.0), corners(x1, y1, h)),
        ];
        let mut edge_samples = Vec::new();
        for (a, b) in segments {
            let n = ((b - a).norm() / edge_spacing).ceil().max(1.0) as usize;
            for i in 0..=n {
                let p = a + (b - a) * (i as f64 / n as f64);
                if !edge_samples.iter().any(|q: &Point3<f64>| (q - p).norm() < 1e-9) {
                    edge_samples.push(p);
                }
            }
        }
        let bound_center = Point3::new(0.0, 0.0, h / 2.0);
        let bound_radius = (d * d + w * w + h * h).sqrt() / 2.0 + t;
        Self {
            geometry: geometry.clone(),
            plates,
            edge_samples,
            bound_center,
            bound_radius,
        }
    }

    pub fn world_plates(&self, pose: &Isometry3<f64>) -> [Plate; 4] {
        std::array::from_fn(|i| self.plates[i].transformed(pose))
    }
}

/// Kinematic bucket state: reference-frame pose and rigid velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucketMotion {
    pub pose: Isometry3<f64>,
    /// Velocity of the bucket frame origin.
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl BucketMotion {
    pub fn at_rest(pose: Isometry3<f64>) -> Self {
        Self {
            pose,
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn point_velocity(&self, p: &Point3<f64>) -> Vector3<f64> {
        let o = Point3::from(self.pose.translation.vector);
        self.linear_velocity + self.angular_velocity.cross(&(p - o))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContactPair {
    Ground,
    Plate(usize),
    /// A bucket edge sample inside the rock.
    BucketEdge,
}

impl ContactPair {
    pub fn is_bucket(self) -> bool {
        !matches!(self, ContactPair::Ground)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub point: Point3<f64>,
    /// Unit direction of the contact force on the rock.
    pub normal: Vector3<f64>,
    pub depth: f64,
    /// Distance still separating a speculative contact (zero when touching).
    pub gap: f64,
    pub pair: ContactPair,
    /// Velocity of the other surface at `point`.
    pub surface_velocity: Vector3<f64>,
    /// Identifies the same contact across steps; ascending within a set.
    pub feature: u32,
}

const FEATURE_STRIDE: u32 = 1 << 20;

fn feature(pair: ContactPair, index: usize) -> u32 {
    let group = match pair {
        ContactPair::Ground => 0,
        ContactPair::Plate(k) => 1 + k as u32,
        ContactPair::BucketEdge => 5,
    };
    group * FEATURE_STRIDE + index as u32
}

#[derive(Clone, Debug, Default)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
    scratch: Vec<Point3<f64>>,
}

impl ContactSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn count(&self, f: impl Fn(ContactPair) -> bool) -> usize {
        self.contacts.iter().filter(|c| f(c.pair)).count()
    }
}

/// Fill `out` with the rock's contacts against the ground plane and the bucket.
///
/// Points closer than `params.margin` to a surface are reported as
/// speculative contacts (`depth = 0`, `gap > 0`).
pub fn detect_contacts(
    rock: &RockBody,
    ground_height: f64,
    bucket: Option<(&BucketCollider, &BucketMotion)>,
    params: &PhysicsParams,
    out: &mut ContactSet,
) {
    out.contacts.clear();
    let mut verts = std::mem::take(&mut out.scratch);
    rock.world_vertices(&mut verts);
    let margin = params.margin;
    let push = |out: &mut Vec<Contact>, point, normal, signed: f64, pair, index, surface_velocity| {
        out.push(Contact {
            point,
            normal,
            depth: signed.max(0.0),
            gap: (-signed).max(0.0),
            pair,
            surface_velocity,
            feature: feature(pair, index),
        })
    };
    if rock.position.z - rock.mesh.radius < ground_height + margin {
        for (i, p) in verts.iter().enumerate() {
            let signed = ground_height - p.z;
            if signed > -margin {
                push(&mut out.contacts, *p, Vector3::z(), signed, ContactPair::Ground, i, Vector3::zeros());
            }
        }
    }
    if let Some((collider, motion)) = bucket {
        let inv = motion.pose.inverse();
        let com_local = inv * rock.position;
        let near = (com_local - collider.bound_center).norm()
            <= collider.bound_radius + rock.mesh.radius + params.contact_zone + margin;
        if near {
            let rot = motion.pose.rotation;
            for (k, plate) in collider.plates.iter().enumerate() {
                let s_com = (com_local - plate.center).dot(&plate.normal);
                let inner = s_com >= 0.0;
                for (i, p) in verts.iter().enumerate() {
                    let local = inv * p;
                    let rel = local - plate.center;
                    if rel.dot(&plate.u).abs() > plate.half.x || rel.dot(&plate.v).abs() > plate.half.y {
                        continue;
                    }
                    let s = rel.dot(&plate.normal);
                    let (signed, normal) = if inner {
                        (-s, plate.normal)
                    } else {
                        (s + plate.thickness, -plate.normal)
                    };
                    if signed > -margin && signed < params.contact_zone {
                        let v = motion.point_velocity(p);
                        push(&mut out.contacts, *p, rot * normal, signed, ContactPair::Plate(k), i, v);
                    }
                }
            }
            let rock_inv = rock.pose().inverse();
            let reach = rock.mesh.radius;
            for (i, s) in collider.edge_samples.iter().enumerate() {
                if (s - com_local).norm() > reach {
                    continue;
                }
                let world = motion.pose * s;
                let body = rock_inv * world;
                let (dist, face) = rock.mesh.plane_distance(&body);
                let signed = -dist;
                if signed > -margin && signed < params.contact_zone {
                    let n_body = rock.mesh.planes[face].0;
                    let v = motion.point_velocity(&world);
                    let n = -(rock.orientation * n_body);
                    push(&mut out.contacts, world, n, signed, ContactPair::BucketEdge, i, v);
                }
            }
        }
    }
    out.scratch = verts;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Wrench {
    pub force: Vector3<f64>,
    /// Torque about the rock's center of mass.
    pub torque: Vector3<f64>,
}

/// Accumulated impulses of the last step, aligned with the contact list.
///
/// Reusing a report across steps warm-starts persistent contacts from their
/// previous impulses; use a fresh report for an unrelated body or episode.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub normal_impulse: Vec<f64>,
    pub friction_impulse: Vec<Vector3<f64>>,
    /// Contact features the impulses belong to.
    pub features: Vec<u32>,
    /// Total force exerted by the rock on the bucket, N.
    pub bucket_force: Vector3<f64>,
    /// Moment of that force about the world origin, N·m.
    pub bucket_moment: Vector3<f64>,
    pub fault: bool,
}

struct Prepared {
    r: Vector3<f64>,
    soft_mass: f64,
    gamma: f64,
    bias: f64,
}

/// Advance the rock by `dt` under gravity, `external` and the given contacts.
///
/// Positions advance with the mean of the start and end velocities, which is
/// exact for ballistic flight. Each penetrating contact applies the impulse of
/// a spring evaluated at the end-of-step depth plus a damper on the end
/// velocity; speculative contacts only stop the approach at the surface.
pub fn step_dynamics(
    rock: &mut RockBody,
    contacts: &ContactSet,
    external: &Wrench,
    params: &PhysicsParams,
    dt: f64,
    report: &mut StepReport,
) {
    let warm = warm_start(contacts, report);
    report.bucket_force = Vector3::zeros();
    report.bucket_moment = Vector3::zeros();
    report.fault = false;

    let inv_m = 1.0 / rock.mass;
    let inv_i = rock.inv_inertia_world();
    let v0 = rock.linear_velocity;
    let w0 = rock.angular_velocity;
    let gravity = Vector3::new(0.0, 0.0, -params.gravity);
    let mut v = v0 + (gravity + external.force * inv_m) * dt;
    let mut w = w0 + inv_i * external.torque * dt;
    let mu = rock.friction;
    if warm {
        for (i, c) in contacts.contacts.iter().enumerate() {
            let ln = report.normal_impulse[i];
            let mut lt = report.friction_impulse[i];
            lt -= c.normal * lt.dot(&c.normal);
            let mag = lt.norm();
            if mag > mu * ln {
                lt *= mu * ln / mag;
            }
            report.friction_impulse[i] = lt;
            let j = c.normal * ln + lt;
            let r = c.point - rock.position;
            v += j * inv_m;
            w += inv_i * r.cross(&j);
        }
    }

    let touching = |pred: &dyn Fn(ContactPair) -> bool| {
        contacts
            .contacts
            .iter()
            .filter(|c| c.gap == 0.0 && pred(c.pair))
            .count()
            .max(1) as f64
    };
    let ground = touching(&|p| p == ContactPair::Ground);
    let bucket = touching(&ContactPair::is_bucket);
    let k = params.stiffness;
    let prepared: Vec<Prepared> = contacts
        .contacts
        .iter()
        .map(|c| {
            let r = c.point - rock.position;
            let rn = r.cross(&c.normal);
            let k_n = inv_m + rn.dot(&(inv_i * rn));
            let vn0 = (v0 + w0.cross(&r) - c.surface_velocity).dot(&c.normal);
            // second-order displacement of a point on a spinning body
            let spin = w0 * dt;
            let arc = 0.5 * spin.cross(&spin.cross(&r)).dot(&c.normal);
            if c.gap > 0.0 {
                // close at most half the gap so rotation cannot carry the point through
                let target = (-(c.gap + arc) / dt - vn0).min(0.0);
                return Prepared {
                    r,
                    soft_mass: 1.0 / k_n,
                    gamma: 0.0,
                    bias: -target,
                };
            }
            let share = if c.pair == ContactPair::Ground { ground } else { bucket };
            let m_c = 1.0 / (k_n * share);
            let damping = 2.0 * (k * m_c).sqrt();
            let denom = damping + 0.5 * dt * k;
            let gamma = 1.0 / (dt * denom);
            Prepared {
                r,
                soft_mass: 1.0 / (k_n + gamma),
                gamma,
                bias: -(k * (c.depth - arc) - 0.5 * dt * k * vn0) / denom,
            }
        })
        .collect();

    for _ in 0..params.iterations {
        for (i, (c, pc)) in contacts.contacts.iter().zip(&prepared).enumerate() {
            let vrel = v + w.cross(&pc.r) - c.surface_velocity;
            let vn = vrel.dot(&c.normal);
            let old = report.normal_impulse[i];
            let new = (old - pc.soft_mass * (vn + pc.bias + pc.gamma * old)).max(0.0);
            let dl = new - old;
            report.normal_impulse[i] = new;
            v += c.normal * (dl * inv_m);
            w += inv_i * pc.r.cross(&(c.normal * dl));

            let vrel = v + w.cross(&pc.r) - c.surface_velocity;
            let vt = vrel - c.normal * vrel.dot(&c.normal);
            let speed = vt.norm();
            let old_t = report.friction_impulse[i];
            let mut new_t = old_t;
            if speed > 1e-12 {
                let t = vt / speed;
                let rt = pc.r.cross(&t);
                let k_t = inv_m + rt.dot(&(inv_i * rt));
                new_t -= t * (speed / k_t);
            }
            new_t -= c.normal * new_t.dot(&c.normal);
            let limit = mu * new;
            let mag = new_t.norm();
            if mag > limit {
                new_t *= if mag > 0.0 { limit / mag } else { 0.0 };
            }
            let d = new_t - old_t;
            report.friction_impulse[i] = new_t;
            v += d * inv_m;
            w += inv_i * pc.r.cross(&d);
        }
    }

    for (i, c) in contacts.contacts.iter().enumerate() {
        if c.pair.is_bucket() {
            let f = -(c.normal * report.normal_impulse[i] + report.friction_impulse[i]) / dt;
            report.bucket_force += f;
            report.bucket_moment += c.point.coords.cross(&f);
        }
    }

    let passive = external.force == Vector3::zeros()
        && external.torque == Vector3::zeros()
        && contacts.contacts.iter().all(|c| c.surface_velocity == Vector3::zeros());
    let before = if passive {
        let e = mechanical_energy(rock, contacts, params);
        Some((e, rock.pose()))
    } else {
        None
    };

    rock.position += (v0 + v) * (0.5 * dt);
    let momentum = rock.inertia_world() * w;
    let energy = 0.5 * w.dot(&momentum);
    rock.orientation = UnitQuaternion::from_scaled_axis((w0 + w) * (0.5 * dt)) * rock.orientation;
    rock.orientation.renormalize();
    let mut w_new = rock.inv_inertia_world() * momentum;
    let e_new = 0.5 * w_new.dot(&momentum);
    if e_new > energy && e_new > 0.0 {
        w_new *= (energy / e_new).sqrt();
    }
    rock.linear_velocity = v;
    rock.angular_velocity = w_new;
    if let Some((e0, pose0)) = before {
        limit_energy(rock, contacts, params, e0, &pose0);
    }
    report.fault = !rock.is_finite();
}

/// Size the impulse buffers for `contacts`, carrying over the impulses of
/// touching contacts that were also touching last step. Returns whether any
/// impulse was carried over.
fn warm_start(contacts: &ContactSet, report: &mut StepReport) -> bool {
    let n = contacts.contacts.len();
    let prev_features = std::mem::take(&mut report.features);
    let prev_normal = std::mem::take(&mut report.normal_impulse);
    let prev_friction = std::mem::take(&mut report.friction_impulse);
    report.normal_impulse.resize(n, 0.0);
    report.friction_impulse.resize(n, Vector3::zeros());
    report.features.extend(contacts.contacts.iter().map(|c| c.feature));
    let mut any = false;
    let mut j = 0;
    for (i, c) in contacts.contacts.iter().enumerate() {
        while j < prev_features.len() && prev_features[j] < c.feature {
            j += 1;
        }
        if j < prev_features.len() && prev_features[j] == c.feature && prev_normal[j] > 0.0 {
            report.normal_impulse[i] = prev_normal[j];
            report.friction_impulse[i] = prev_friction[j];
            any = true;
        }
    }
    any
}

// Passive contacts cannot add energy; bleed any discretisation surplus from the kinetic term.
fn limit_energy(rock: &mut RockBody, contacts: &ContactSet, params: &PhysicsParams, e0: f64, pose0: &Isometry3<f64>) {
    let pose1 = rock.pose();
    let springs: f64 = contacts
        .contacts
        .iter()
        .map(|c| {
            let moved = pose1 * (pose0.inverse() * c.point);
            let d = c.depth - c.gap - (moved - c.point).dot(&c.normal);
            if d > 0.0 {
                0.5 * params.stiffness * d * d
            } else {
                0.0
            }
        })
        .sum();
    let ke = rock.kinetic_energy();
    let excess = ke + rock.potential_energy(params.gravity) + springs - e0;
    if excess > 0.0 && ke > 0.0 {
        let scale = ((ke - excess).max(0.0) / ke).sqrt();
        rock.linear_velocity *= scale;
        rock.angular_velocity *= scale;
    }
}

/// Mechanical energy including the stored contact springs.
pub fn mechanical_energy(rock: &RockBody, contacts: &ContactSet, params: &PhysicsParams) -> f64 {
    let springs: f64 = contacts
        .contacts
        .iter()
        .map(|c| 0.5 * params.stiffness * c.depth * c.depth)
        .sum();
    rock.kinetic_energy() + rock.potential_energy(params.gravity) + springs
}

/// Center-of-mass test against the bucket's inward halfspaces; the boundary counts as inside.
pub fn rock_in_shovel(com: &Point3<f64>, geometry: &BucketGeometry<f64>, bucket_pose: &Isometry3<f64>) -> bool {
    let p = bucket_pose.inverse() * com;
    let (d, w, h) = (geometry.length / 2.0, geometry.width / 2.0, geometry.height);
    p.z >= 0.0 && p.z <= h && p.x <= d && p.x >= -d && p.y.abs() <= w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rockgen::{generate_rock, rock_from_points, RockSpec, SizeClass, Split};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(side: f64) -> RockBody {
        let h = side / 2.0;
        let mut pts = Vec::new();
        for i in 0..8 {
            let s = |b: usize| if i >> b & 1 == 1 { h } else { -h };
            pts.push(Point3::new(s(0), s(1), s(2)));
        }
        rock_from_points(&pts, 2500.0, 1.0, 0.5).unwrap()
    }

    fn bucket_geom() -> BucketGeometry<f64> {
        BucketGeometry {
            length: 1.0,
            width: 1.2,
            height: 0.9,
            edge_thickness: 0.03,
        }
    }

    fn run(rock: &mut RockBody, steps: usize, bucket: Option<(&BucketCollider, &BucketMotion)>) {
        let p = PhysicsParams::default();
        let mut cs = ContactSet::new();
        let mut rep = StepReport::default();
        for _ in 0..steps {
            detect_contacts(rock, 0.0, bucket, &p, &mut cs);
            step_dynamics(rock, &cs, &Wrench::default(), &p, p.dt, &mut rep);
            assert!(!rep.fault);
        }
    }

    #[test]
    fn far_rock_has_no_contacts() {
        let mut r = cube(1.0);
        r.position = Point3::new(0.0, 0.0, 3.0);
        let col = BucketCollider::new(&bucket_geom(), 0.1);
        let m = BucketMotion::at_rest(Isometry3::translation(10.0, 0.0, 0.0));
        let mut cs = ContactSet::new();
        detect_contacts(&r, 0.0, Some((&col, &m)), &PhysicsParams::default(), &mut cs);
        assert!(cs.is_empty());
    }

    #[test]
    fn sunken_cube_gives_four_ground_contacts() {
        let mut r = cube(1.0);
        r.position = Point3::new(0.0, 0.0, 0.4);
        let mut cs = ContactSet::new();
        detect_contacts(&r, 0.0, None, &PhysicsParams::default(), &mut cs);
        assert_eq!(cs.len(), 4);
        for c in &cs.contacts {
            assert_eq!(c.gap, 0.0);
            assert!((c.depth - 0.1).abs() < 1e-12);
            assert_eq!(c.normal, Vector3::z());
            assert_eq!(c.pair, ContactPair::Ground);
        }
    }

    #[test]
    fn rock_in_lifted_bucket_touches_only_bucket() {
        let geom = bucket_geom();
        let col = BucketCollider::new(&geom, 0.1);
        let pose = Isometry3::translation(5.0, 0.0, 1.5);
        let m = BucketMotion::at_rest(pose);
        let mut r = cube(0.4);
        r.position = Point3::new(5.0, 0.0, 1.5 + 0.19);
        let mut cs = ContactSet::new();
        detect_contacts(&r, 0.0, Some((&col, &m)), &PhysicsParams::default(), &mut cs);
        let touching = cs.contacts.iter().filter(|c| c.pair.is_bucket() && c.depth > 0.0).count();
        assert!(touching >= 3);
        assert_eq!(cs.count(|p| p == ContactPair::Ground), 0);
        // halfspace oracle: penetrating points lie below the bottom plate surface, speculative ones above
        for c in &cs.contacts {
            let local = pose.inverse() * c.point;
            if c.depth > 0.0 {
                assert!(local.z < 0.0);
            } else {
                assert!(local.z >= 0.0 && local.z < 0.05);
            }
        }
        // the rock settles in the bucket and stays there
        run(&mut r, 240, Some((&col, &m)));
        assert!(rock_in_shovel(&r.position, &geom, &pose));
        assert!(r.linear_velocity.norm() < 1e-3);
    }

    #[test]
    fn resting_rock_stays_put() {
        let mut r = cube(0.5);
        r.position = Point3::new(0.0, 0.0, 0.25);
        run(&mut r, 600, None);
        let start = r.position;
        run(&mut r, 2000, None);
        assert!((r.position - start).norm() < 1e-4, "{}", (r.position - start).norm());
    }

    #[test]
    fn free_fall_matches_closed_form() {
        let mut r = cube(0.5);
        r.position = Point3::new(0.0, 0.0, 5.0);
        let p = PhysicsParams::default();
        let mut t = 0.0;
        let mut cs = ContactSet::new();
        let mut rep = StepReport::default();
        for _ in 0..60 {
            detect_contacts(&r, 0.0, None, &p, &mut cs);
            assert!(cs.is_empty());
            step_dynamics(&mut r, &cs, &Wrench::default(), &p, p.dt, &mut rep);
            t += p.dt;
            let expected = 5.0 - 0.5 * p.gravity * t * t;
            let fallen = 5.0 - expected;
            assert!((r.position.z - expected).abs() <= 0.01 * fallen);
        }
    }

    #[test]
    fn sliding_decelerates_at_mu_g() {
        let mut r = cube(0.5);
        r.friction = 0.5;
        r.position = Point3::new(0.0, 0.0, 0.25);
        run(&mut r, 240, None);
        r.linear_velocity = Vector3::new(1.0, 0.0, 0.0);
        let p = PhysicsParams::default();
        let mut cs = ContactSet::new();
        let mut rep = StepReport::default();
        let steps = 12;
        for _ in 0..steps {
            detect_contacts(&r, 0.0, None, &p, &mut cs);
            step_dynamics(&mut r, &cs, &Wrench::default(), &p, p.dt, &mut rep);
        }
        let decel = (1.0 - r.linear_velocity.x) / (steps as f64 * p.dt);
        assert!((decel - 0.5 * 9.81).abs() <= 0.05 * 0.5 * 9.81, "{decel}");
    }

    #[test]
    fn impulses_respect_cone_and_never_pull() {
        let geom = bucket_geom();
        let col = BucketCollider::new(&geom, 0.1);
        let p = PhysicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = RockSpec::sample(&mut rng, 5, SizeClass::Small, Split::Train);
        let base = generate_rock(&spec).unwrap();
        let mut cs = ContactSet::new();
        let mut rep = StepReport::default();
        let mut seen = 0;
        for _ in 0..2000 {
            let mut r = base.clone();
            r.friction = rng.gen_range(0.35..0.6);
            r.position = Point3::new(rng.gen_range(4.3..5.7), rng.gen_range(-0.5..0.5), rng.gen_range(0.0..0.4));
            r.orientation = UnitQuaternion::from_euler_angles(rng.gen(), rng.gen(), rng.gen());
            r.linear_velocity = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            r.angular_velocity = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let m = BucketMotion {
                pose: Isometry3::new(Vector3::new(5.0, 0.0, rng.gen_range(-0.2..0.3)), Vector3::y() * rng.gen_range(-0.5..0.5)),
                linear_velocity: Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5)),
                angular_velocity: Vector3::y() * rng.gen_range(-0.3..0.3),
            };
            detect_contacts(&r, 0.0, Some((&col, &m)), &p, &mut cs);
            step_dynamics(&mut r, &cs, &Wrench::default(), &p, p.dt, &mut rep);
            for i in 0..cs.len() {
                let ln = rep.normal_impulse[i];
                assert!(ln >= 0.0);
                assert!(rep.friction_impulse[i].norm() <= r.friction * ln + 1e-9);
                seen += 1;
            }
            for c in &cs.contacts {
                assert!(c.depth >= 0.0 && c.gap >= 0.0 && (c.normal.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(seen > 1000);
    }

    #[test]
    fn energy_never_increases_without_driving() {
        let p = PhysicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let col = BucketCollider::new(&bucket_geom(), p.edge_spacing);
        for trial in 0..60 {
            let class = if trial % 2 == 0 { SizeClass::Large } else { SizeClass::Small };
            let spec = RockSpec::sample(&mut rng, trial, class, Split::Train);
            let mut r = generate_rock(&spec).unwrap();
            // every third drop lands in a resting bucket
            let bucket = (trial % 3 == 0).then(|| BucketMotion::at_rest(Isometry3::translation(0.0, 0.0, 0.05)));
            let b = bucket.as_ref().map(|m| (&col, m));
            r.position = Point3::new(0.0, 0.0, rng.gen_range(0.4..1.2));
            r.orientation = UnitQuaternion::from_euler_angles(rng.gen(), rng.gen(), rng.gen());
            r.angular_velocity = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let mut cs = ContactSet::new();
            let mut rep = StepReport::default();
            detect_contacts(&r, 0.0, b, &p, &mut cs);
            let mut e = mechanical_energy(&r, &cs, &p);
            for _ in 0..400 {
                step_dynamics(&mut r, &cs, &Wrench::default(), &p, p.dt, &mut rep);
                detect_contacts(&r, 0.0, b, &p, &mut cs);
                let e_new = mechanical_energy(&r, &cs, &p);
                assert!(e_new <= e + 1e-6 * e.abs().max(1.0), "trial {trial}: {e} -> {e_new}");
                e = e_new;
            }
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RockSpec::sample(&mut rng, 3, SizeClass::Small, Split::Train);
        let mut a = generate_rock(&spec).unwrap();
        a.position = Point3::new(0.0, 0.0, 0.8);
        a.angular_velocity = Vector3::new(0.3, -0.2, 0.5);
        let mut b = a.clone();
        run(&mut a, 300, None);
        run(&mut b, 300, None);
        assert_eq!(a.position.coords.map(f64::to_bits), b.position.coords.map(f64::to_bits));
        assert_eq!(a.orientation.coords.map(f64::to_bits), b.orientation.coords.map(f64::to_bits));
    }

    #[test]
    fn shovel_halfspace_test() {
        let g = bucket_geom();
        let pose = Isometry3::new(Vector3::new(5.0, 1.0, 0.5), Vector3::new(0.0, 0.3, 0.4));
        assert!(rock_in_shovel(&(pose * g.centroid()), &g, &pose));
        assert!(!rock_in_shovel(&(pose * Point3::new(0.0, 0.0, 2.9)), &g, &pose));
        // on the bottom plate plane
        let on_plane = Isometry3::translation(5.0, 0.0, 0.5);
        assert!(rock_in_shovel(&Point3::new(5.0, 0.0, 0.5), &g, &on_plane));
        assert!(!rock_in_shovel(&Point3::new(5.0, 0.0, 0.5 - 1e-9), &g, &on_plane));
    }

    #[test]
    fn edge_samples_push_out_of_rock() {
        let geom = bucket_geom();
        let col = BucketCollider::new(&geom, 0.1);
        let mut r = cube(0.6);
        // cutting edge line (x = -0.5 in bucket frame) sits 5 cm inside the cube's +x face
        r.position = Point3::new(4.5 - 0.3 + 0.05, 0.0, 0.3);
        let m = BucketMotion::at_rest(Isometry3::translation(5.0, 0.0, 0.1));
        let mut cs = ContactSet::new();
        detect_contacts(&r, 0.0, Some((&col, &m)), &PhysicsParams::default(), &mut cs);
        let edges: Vec<_> = cs
            .contacts
            .iter()
            .filter(|c| c.pair == ContactPair::BucketEdge && c.depth > 1e-6)
            .collect();
        assert!(!edges.is_empty());
        for c in edges {
            assert!((c.normal - (-Vector3::x())).norm() < 1e-9);
            assert!((c.depth - 0.05).abs() < 1e-9);
        }
    }

    #[test]
    fn plate_raycast() {
        let col = BucketCollider::new(&bucket_geom(), 0.1);
        let bottom = col.plates[PLATE_BOTTOM];
        let t = bottom.raycast(&Point3::new(0.1, 0.2, 3.0), &-Vector3::z(), 10.0);
        assert_eq!(t, Some(3.0));
        assert!(bottom.raycast(&Point3::new(0.9, 0.0, 3.0), &-Vector3::z(), 10.0).is_none());
    }
}
