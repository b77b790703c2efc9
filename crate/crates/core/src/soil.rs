//! Quasi-static soil cutting resistance on the bucket edge.
//!
//! Resistance is computed in the vertical plane containing the cabin's radial
//! direction. The horizontal part is the passive-wedge cutting force
//! `w (γ d² N_γ + c d N_c + c_a d N_a)`, where the failure-plane angle is picked
//! by trial over a fixed grid of candidates. The vertical part resists
//! downward edge motion with a cavity-expansion pressure `CP (c + γ d)` acting
//! on the edge cross-section.

use nalgebra::{Isometry3, Point3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::BucketGeometry;
use crate::num::Real;

/// Number of candidate failure-plane angles in `(0, π/2)`.
pub const WEDGE_CANDIDATES: usize = 201;
/// Edge speeds below this produce no force.
pub const QUASI_STATIC_SPEED: f64 = 1e-4;
/// Rake angles are clamped into this band before the wedge solve (radians).
pub const RAKE_MIN: f64 = 0.3490658503988659; // 20°
pub const RAKE_MAX: f64 = 1.5707963267948966;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoilError {
    #[error("invalid soil parameter `{name}` = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("unknown soil preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SoilParams<T: Real> {
    /// Cohesion `c`, Pa.
    pub cohesion: T,
    /// Internal friction angle `φ`, rad.
    pub friction_angle: T,
    /// Unit weight `γ`, N/m³.
    pub unit_weight: T,
    /// Soil–metal friction angle `δ`, rad.
    pub metal_friction_angle: T,
    /// Cavity expansion factor `CP`.
    pub cavity_expansion: T,
    /// Adhesion factor `c_a / c`.
    pub adhesion_factor: T,
    /// Multiplier on the edge cross-section used for penetration resistance.
    #[serde(default = "one")]
    pub cutting_resistance: T,
    /// Height of the free soil surface (coincides with the rock platform), m.
    #[serde(default)]
    pub surface_height: T,
}

fn one<T: Real>() -> T {
    T::ONE
}

impl<T: Real> SoilParams<T> {
    pub fn soft() -> Self {
        Self {
            cohesion: T::ZERO,
            friction_angle: T::lit(31.5f64.to_radians()),
            unit_weight: T::lit(19_500.0),
            metal_friction_angle: T::lit(23.0f64.to_radians()),
            cavity_expansion: T::ONE,
            adhesion_factor: T::ZERO,
            cutting_resistance: T::ONE,
            surface_height: T::ZERO,
        }
    }

    pub fn hard() -> Self {
        Self {
            cohesion: T::lit(105_000.0),
            friction_angle: T::lit(32.0f64.to_radians()),
            unit_weight: T::lit(21_000.0),
            metal_friction_angle: T::lit(23.0f64.to_radians()),
            cavity_expansion: T::lit(300.0),
            adhesion_factor: T::lit(0.5),
            cutting_resistance: T::ONE,
            surface_height: T::ZERO,
        }
    }

    pub fn preset(name: &str) -> Result<Self, SoilError> {
        match name {
            "soft" => Ok(Self::soft()),
            "hard" => Ok(Self::hard()),
            other => Err(SoilError::UnknownPreset(other.to_string())),
        }
    }

    pub fn adhesion(&self) -> T {
        self.adhesion_factor * self.cohesion
    }

    pub fn validate(&self) -> Result<(), SoilError> {
        let half_pi = T::frac_pi_2();
        let checks: [(&'static str, T, bool); 7] = [
            ("cohesion", self.cohesion, self.cohesion >= T::ZERO),
            (
                "friction_angle",
                self.friction_angle,
                self.friction_angle > T::ZERO && self.friction_angle < half_pi,
            ),
            ("unit_weight", self.unit_weight, self.unit_weight > T::ZERO),
            (
                "metal_friction_angle",
                self.metal_friction_angle,
                self.metal_friction_angle >= T::ZERO && self.metal_friction_angle < half_pi,
            ),
            ("cavity_expansion", self.cavity_expansion, self.cavity_expansion >= T::ONE),
            (
                "adhesion_factor",
                self.adhesion_factor,
                self.adhesion_factor >= T::ZERO && self.adhesion_factor <= T::ONE,
            ),
            ("cutting_resistance", self.cutting_resistance, self.cutting_resistance > T::ZERO),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(SoilError::InvalidParam {
                    name,
                    value: value.to_f64(),
                });
            }
        }
        Ok(())
    }

    /// Draw each parameter independently between the soft and hard presets.
    /// `cutting_resistance` is drawn from `resistance_range`.
    pub fn randomized<R: Rng + ?Sized>(rng: &mut R, resistance_range: (f64, f64)) -> Self {
        let soft = Self::soft();
        let hard = Self::hard();
        let mut lerp = |a: T, b: T| {
            let t = T::lit(rng.gen::<f64>());
            a + (b - a) * t
        };
        let mut out = Self {
            cohesion: lerp(soft.cohesion, hard.cohesion),
            friction_angle: lerp(soft.friction_angle, hard.friction_angle),
            unit_weight: lerp(soft.unit_weight, hard.unit_weight),
            metal_friction_angle: lerp(soft.metal_friction_angle, hard.metal_friction_angle),
            cavity_expansion: lerp(soft.cavity_expansion, hard.cavity_expansion),
            adhesion_factor: lerp(soft.adhesion_factor, hard.adhesion_factor),
            cutting_resistance: T::ONE,
            surface_height: soft.surface_height,
        };
        let (lo, hi) = resistance_range;
        out.cutting_resistance = T::lit(if hi > lo { rng.gen_range(lo..=hi) } else { lo });
        out
    }
}

/// Bucket edge state projected into the excavation plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutState<T: Real> {
    /// Edge depth below the soil surface (≥ 0), m.
    pub depth: T,
    /// Angle of the bottom plate below horizontal, edge leading, rad.
    pub rake: T,
    /// Tool width, m.
    pub width: T,
    /// Edge thickness, m.
    pub edge_thickness: T,
    /// Edge position `(radial, height)` in the plane.
    pub edge: Vector2<T>,
    /// Edge velocity `(radial, vertical)` in the plane.
    pub edge_velocity: Vector2<T>,
    /// Radial unit vector of the plane in the base frame.
    pub radial: Vector3<T>,
}

/// Project the cutting edge into the vertical plane through the cabin axis.
pub fn excavation_slice<T: Real>(
    q_turn: T,
    bucket_base: &Isometry3<T>,
    edge_velocity_base: &Vector3<T>,
    bucket: &BucketGeometry<T>,
    soil_height: T,
) -> CutState<T> {
    let radial = Vector3::new(q_turn.cos(), q_turn.sin(), T::ZERO);
    let edge = bucket_base * bucket.edge_point();
    let plate_dir = bucket_base.rotation * -Vector3::x();
    let u_r = plate_dir.dot(&radial);
    let u_z = plate_dir.z;
    let rake = (-u_z).atan2(-u_r);
    let depth = (soil_height - edge.z).max(T::ZERO);
    CutState {
        depth,
        rake,
        width: bucket.width,
        edge_thickness: bucket.edge_thickness,
        edge: Vector2::new(edge.coords.dot(&radial), edge.z),
        edge_velocity: Vector2::new(edge_velocity_base.dot(&radial), edge_velocity_base.z),
        radial,
    }
}

/// Wedge solution for one depth/rake.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WedgeSolution<T: Real> {
    pub failure_angle: T,
    pub n_gamma: T,
    pub n_c: T,
    pub n_a: T,
    /// Cutting force magnitude `w (γ d² N_γ + c d N_c + c_a d N_a)`, ≥ 0.
    pub force: T,
}

/// Candidate failure-plane angles, evenly spaced strictly inside `(0, π/2)`.
pub fn failure_angle(k: usize) -> f64 {
    (k as f64 + 1.0) * std::f64::consts::FRAC_PI_2 / (WEDGE_CANDIDATES as f64 + 1.0)
}

/// Passive-wedge N-factors for one failure angle; `None` when the wedge is inadmissible.
pub fn n_factors<T: Real>(rake: T, phi: T, delta: T, beta: T) -> Option<(T, T, T)> {
    let cot = |x: T| x.cos() / x.sin();
    let denom = (rake + delta).cos() + (rake + delta).sin() * cot(beta + phi);
    if !(denom > T::lit(1e-12)) || !((rake + delta + beta + phi) < T::pi()) {
        return None;
    }
    let n_gamma = (cot(rake) + cot(beta)) / (T::TWO * denom);
    let n_c = (T::ONE + cot(beta) * cot(beta + phi)) / denom;
    let n_a = (T::ONE - cot(rake) * cot(beta + phi)) / denom;
    Some((n_gamma, n_c, n_a))
}

/// Trial-wedge minimum of the cutting force over the candidate failure angles.
pub fn solve_wedge<T: Real>(depth: T, rake: T, width: T, soil: &SoilParams<T>) -> WedgeSolution<T> {
    let rake = rake.clamp(T::lit(RAKE_MIN), T::lit(RAKE_MAX));
    let mut best: Option<WedgeSolution<T>> = None;
    for k in 0..WEDGE_CANDIDATES {
        let beta = T::lit(failure_angle(k));
        let Some((n_gamma, n_c, n_a)) =
            n_factors(rake, soil.friction_angle, soil.metal_friction_angle, beta)
        else {
            continue;
        };
        let force = width
            * (soil.unit_weight * depth * depth * n_gamma
                + soil.cohesion * depth * n_c
                + soil.adhesion() * depth * n_a);
        if best.map_or(true, |b| force < b.force) {
            best = Some(WedgeSolution {
                failure_angle: beta,
                n_gamma,
                n_c,
                n_a,
                force,
            });
        }
    }
    let mut sol = best.unwrap_or(WedgeSolution {
        failure_angle: T::ZERO,
        n_gamma: T::ZERO,
        n_c: T::ZERO,
        n_a: T::ZERO,
        force: T::ZERO,
    });
    sol.force = sol.force.max(T::ZERO);
    sol
}

/// Unsigned resistance magnitudes `(cutting, penetration)` at the current depth.
pub fn resistance_magnitudes<T: Real>(cut: &CutState<T>, soil: &SoilParams<T>) -> (T, T) {
    if cut.depth <= T::ZERO {
        return (T::ZERO, T::ZERO);
    }
    let cutting = solve_wedge(cut.depth, cut.rake, cut.width, soil).force;
    let area = cut.width * cut.edge_thickness * soil.cutting_resistance;
    let penetration =
        soil.cavity_expansion * (soil.cohesion + soil.unit_weight * cut.depth) * area;
    (cutting, penetration)
}

/// Resistance in the excavation plane plus its application point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoilForce<T: Real> {
    /// `(radial, vertical)` force on the edge, N.
    pub force: Vector2<T>,
    pub point: Vector2<T>,
}

/// Resistance opposing the edge motion component by component.
pub fn fee_resistance<T: Real>(cut: &CutState<T>, soil: &SoilParams<T>) -> SoilForce<T> {
    let (cutting, penetration) = resistance_magnitudes(cut, soil);
    let v = cut.edge_velocity;
    let fr = if v.x > T::ZERO {
        -cutting
    } else if v.x < T::ZERO {
        cutting
    } else {
        T::ZERO
    };
    let fz = if v.y < T::ZERO { penetration } else { T::ZERO };
    SoilForce {
        force: Vector2::new(fr, fz),
        point: cut.edge,
    }
}

/// 3D force on the bucket edge; zero above the surface or below the speed gate.
pub fn apply_soil_force<T: Real>(cut: &CutState<T>, soil: &SoilParams<T>) -> Vector3<T> {
    if cut.depth <= T::ZERO || cut.edge_velocity.norm() < T::lit(QUASI_STATIC_SPEED) {
        return Vector3::zeros();
    }
    let f = fee_resistance(cut, soil).force;
    cut.radial * f.x + Vector3::z() * f.y
}

/// Edge point in the base frame for a bucket pose.
pub fn edge_point_base<T: Real>(bucket_base: &Isometry3<T>, bucket: &BucketGeometry<T>) -> Point3<T> {
    bucket_base * bucket.edge_point()
}
