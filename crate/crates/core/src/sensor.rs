//! Cabin-mounted virtual LiDAR and rock point extraction.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arm::rotbase_rotation;
use crate::physics::{Plate, RockBody};

/// Points handed to the policy per step.
pub const CLOUD_POINTS: usize = 20;

/// Largest `C(n, k)` for which downsampling searches subsets exhaustively.
pub const EXACT_SUBSET_BUDGET: u64 = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitTag {
    Rock,
    Bucket,
    Ground,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub ray: u32,
    pub distance: f64,
    /// Base-frame hit location.
    pub point: Point3<f64>,
    pub tag: HitTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Mount position in the rotating base frame, m.
    pub mount: [f64; 3],
    pub azimuth_rays: usize,
    pub elevation_rays: usize,
    /// Horizontal field of view, rad, symmetric about the boom direction.
    pub azimuth_fov: f64,
    /// Elevation interval, rad (negative looks down).
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
    /// Standard deviation of additive range noise, m.
    pub range_noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            mount: [0.5, 0.0, 3.0],
            azimuth_rays: 128,
            elevation_rays: 32,
            azimuth_fov: 80f64.to_radians(),
            elevation_min: -65f64.to_radians(),
            elevation_max: -10f64.to_radians(),
            max_range: 12.0,
            range_noise: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SensorError {
    #[error("sensor grid must have at least one ray")]
    EmptyGrid,
    #[error("invalid sensor parameter: {0}")]
    Invalid(&'static str),
}

/// Ray grid with precomputed unit directions in the rotating base frame.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub config: SensorConfig,
    directions: Vec<Vector3<f64>>,
}

impl SensorModel {
    pub fn new(config: SensorConfig) -> Result<Self, SensorError> {
        if config.azimuth_rays == 0 || config.elevation_rays == 0 {
            return Err(SensorError::EmptyGrid);
        }
        if !(config.max_range > 0.0) {
            return Err(SensorError::Invalid("max_range must be positive"));
        }
        if !(config.elevation_max >= config.elevation_min) || !(config.azimuth_fov >= 0.0) {
            return Err(SensorError::Invalid("field of view"));
        }
        if !(config.range_noise >= 0.0) {
            return Err(SensorError::Invalid("range_noise must be non-negative"));
        }
        let lerp = |lo: f64, hi: f64, i: usize, n: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let half = config.azimuth_fov / 2.0;
        let mut directions = Vec::with_capacity(config.azimuth_rays * config.elevation_rays);
        for e in 0..config.elevation_rays {
            let el = lerp(config.elevation_min, config.elevation_max, e, config.elevation_rays);
            for a in 0..config.azimuth_rays {
                let az = lerp(-half, half, a, config.azimuth_rays);
                directions.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        Ok(Self { config, directions })
    }

    pub fn num_rays(&self) -> usize {
        self.directions.len()
    }

    /// Ray directions in the rotating base frame.
    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    /// Sensor origin in the base frame for cabin angle `q_turn`.
    pub fn origin(&self, q_turn: f64) -> Point3<f64> {
        let m = self.config.mount;
        rotbase_rotation(q_turn).inverse() * Point3::new(m[0], m[1], m[2])
    }
}

/// Geometry visible to the sensor, all in the base frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct Scene<'a> {
    pub rock: Option<&'a RockBody>,
    pub plates: &'a [Plate],
    pub ground_height: Option<f64>,
}

impl Scene<'_> {
    /// Nearest hit along a ray, if any lies within `t_max`.
    pub fn nearest(&self, origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<(f64, HitTag)> {
        let mut best: Option<(f64, HitTag)> = None;
        let mut limit = t_max;
        if let Some(h) = self.ground_height {
            if dir.z < 0.0 {
                let t = (h - origin.z) / dir.z;
                if t > 0.0 && t < limit {
                    limit = t;
                    best = Some((t, HitTag::Ground));
                }
            }
        }
        for plate in self.plates {
            if let Some(t) = plate.raycast(origin, dir, limit) {
                limit = t;
                best = Some((t, HitTag::Bucket));
            }
        }
        if let Some(rock) = self.rock {
            if let Some(t) = raycast_rock(rock, origin, dir, limit) {
                best = Some((t, HitTag::Rock));
            }
        }
        best
    }
}

fn raycast_rock(rock: &RockBody, origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
    // bounding sphere rejection before touching the hierarchy
    let oc = rock.position - origin;
    let along = oc.dot(dir);
    let r = rock.mesh.radius;
    if oc.norm_squared() - along * along > r * r || along + r < 0.0 {
        return None;
    }
    let inv = rock.orientation.inverse();
    let o = Point3::from(inv * (origin - rock.position));
    let d = inv * dir;
    rock.mesh.raycast(&o, &d, t_max).map(|(t, _)| t)
}

/// Cast every ray of the grid and return the nearest hit of each, in ray order.
pub fn raycast<R: Rng + ?Sized>(
    scene: &Scene,
    sensor: &SensorModel,
    q_turn: f64,
    rng: Option<&mut R>,
) -> Vec<Hit> {
    let origin = sensor.origin(q_turn);
    let rot = rotbase_rotation(q_turn).inverse();
    let mut hits = Vec::new();
    for (i, d) in sensor.directions.iter().enumerate() {
        let dir = rot * d;
        if let Some((t, tag)) = scene.nearest(&origin, &dir, sensor.config.max_range) {
            hits.push(Hit {
                ray: i as u32,
                distance: t,
                point: origin + dir * t,
                tag,
            });
        }
    }
    add_range_noise(&mut hits, &origin, sensor.config.range_noise, rng);
    hits
}

/// Rock-tagged hits only; rays that cannot reach the rock are skipped.
///
/// Produces exactly the rock subset of [`raycast`].
pub fn rock_hits<R: Rng + ?Sized>(
    scene: &Scene,
    sensor: &SensorModel,
    q_turn: f64,
    rng: Option<&mut R>,
    out: &mut Vec<Hit>,
) {
    out.clear();
    let Some(rock) = scene.rock else {
        return;
    };
    let origin = sensor.origin(q_turn);
    let rot = rotbase_rotation(q_turn).inverse();
    let oc = rock.position - origin;
    let dist = oc.norm();
    let r = rock.mesh.radius;
    if dist > sensor.config.max_range + r {
        return;
    }
    // cosine of the cone that contains the bounding sphere
    let cos_cone = if dist <= r {
        -1.0
    } else {
        (1.0 - (r / dist).powi(2)).sqrt()
    };
    let axis = oc / dist.max(1e-12);
    for (i, d) in sensor.directions.iter().enumerate() {
        let dir = rot * d;
        if dir.dot(&axis) < cos_cone - 1e-12 {
            continue;
        }
        if let Some((t, HitTag::Rock)) = scene.nearest(&origin, &dir, sensor.config.max_range) {
            out.push(Hit {
                ray: i as u32,
                distance: t,
                point: origin + dir * t,
                tag: HitTag::Rock,
            });
        }
    }
    add_range_noise(out, &origin, sensor.config.range_noise, rng);
}

fn add_range_noise<R: Rng + ?Sized>(hits: &mut [Hit], origin: &Point3<f64>, sigma: f64, rng: Option<&mut R>) {
    let Some(rng) = rng else {
        return;
    };
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated at construction");
    for h in hits {
        let dir = (h.point - origin) / h.distance;
        h.distance = (h.distance + normal.sample(rng)).max(0.0);
        h.point = origin + dir * h.distance;
    }
}

/// Fixed-size rock cloud in the rotating base frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RockCloud {
    pub points: [Point3<f64>; CLOUD_POINTS],
    /// False when the last scan produced no rock hits and the points are held over.
    pub valid: bool,
}

impl Default for RockCloud {
    fn default() -> Self {
        Self {
            points: [Point3::origin(); CLOUD_POINTS],
            valid: false,
        }
    }
}

impl RockCloud {
    pub fn centroid(&self) -> Point3<f64> {
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / CLOUD_POINTS as f64)
    }
}

/// Build the policy cloud from tagged hits.
///
/// Rock hits are moved into the rotating base frame, downsampled to
/// [`CLOUD_POINTS`] or padded by cycling; with no rock hits the previous
/// cloud is returned with `valid = false`.
pub fn extract_rock_points(hits: &[Hit], q_turn: f64, sensor_origin: &Point3<f64>, previous: &RockCloud) -> RockCloud {
    let rot = rotbase_rotation(q_turn);
    let origin_rb = rot * sensor_origin;
    let pts: Vec<Point3<f64>> = hits
        .iter()
        .filter(|h| h.tag == HitTag::Rock)
        .map(|h| rot * h.point)
        .collect();
    if pts.is_empty() {
        return RockCloud {
            points: previous.points,
            valid: false,
        };
    }
    let start = pts
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - origin_rb)
                .norm_squared()
                .total_cmp(&(b.1 - origin_rb).norm_squared())
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let k = CLOUD_POINTS.min(pts.len());
    let idx = downsample(&pts, k, start);
    RockCloud {
        points: std::array::from_fn(|i| pts[idx[i % idx.len()]]),
        valid: true,
    }
}

/// Choose `k` indices maximizing the minimum pairwise distance.
///
/// Small problems are solved exactly; larger ones use greedy farthest-point
/// sampling from `start`. The result is ordered greedily from the point
/// nearest `start`.
pub fn downsample(points: &[Point3<f64>], k: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    if k == 0 || n == 0 {
        return Vec::new();
    }
    if k >= n {
        return farthest_point_sample(points, n, start);
    }
    if binomial(n as u64, k as u64) <= EXACT_SUBSET_BUDGET {
        let subset = best_subset(points, k);
        let sub: Vec<Point3<f64>> = subset.iter().map(|&i| points[i]).collect();
        let local_start = subset
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (points[*a.1] - points[start])
                    .norm_squared()
                    .total_cmp(&(points[*b.1] - points[start]).norm_squared())
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        return farthest_point_sample(&sub, k, local_start)
            .into_iter()
            .map(|i| subset[i])
            .collect();
    }
    farthest_point_sample(points, k, start)
}

/// Greedy farthest-point sampling; ties go to the lower index.
pub fn farthest_point_sample(points: &[Point3<f64>], k: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = start.min(n - 1);
    for _ in 0..k {
        chosen.push(current);
        dist[current] = f64::NEG_INFINITY;
        let mut next = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if dist[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = (p - points[current]).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best {
                best = dist[i];
                next = i;
            }
        }
        current = next;
    }
    chosen
}

/// Smallest pairwise distance within `idx`.
pub fn min_pairwise(points: &[Point3<f64>], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            best = best.min((points[i] - points[j]).norm());
        }
    }
    best
}

fn best_subset(points: &[Point3<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut comb: Vec<usize> = (0..k).collect();
    let mut best = comb.clone();
    let mut best_val = f64::NEG_INFINITY;
    loop {
        let v = min_pairwise(points, &comb);
        if v > best_val {
            best_val = v;
            best.clone_from(&comb);
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if comb[i] != i + n - k {
                break;
            }
            if i == 0 {
                return best;
            }
        }
        comb[i] += 1;
        for j in i + 1..k {
            comb[j] = comb[j - 1] + 1;
        }
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
        if acc > EXACT_SUBSET_BUDGET {
            return u64::MAX;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexMesh;
    use nalgebra::{UnitQuaternion, Vector2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn sphere_rock(center: Point3<f64>, radius: f64) -> RockBody {
        let mut pts = Vec::new();
        let n = 40;
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            for j in 0..24 {
                let a = j as f64 * std::f64::consts::TAU / 24.0 + i as f64 * 0.37;
                pts.push(Point3::new(r * a.cos(), r * a.sin(), z) * radius);
            }
        }
        pts.push(Point3::new(0.0, 0.0, radius));
        pts.push(Point3::new(radius, 0.0, 0.0));
        // central symmetry keeps the center of mass at the sphere center
        let mirrored: Vec<Point3<f64>> = pts.iter().map(|p| Point3::from(-p.coords)).collect();
        pts.extend(mirrored);
        let mesh = Arc::new(ConvexMesh::from_points(&pts).unwrap());
        let mut rock = RockBody::new(mesh, 2500.0, 0.5);
        rock.position = center;
        rock
    }

    fn boresight_sensor() -> SensorModel {
        SensorModel::new(SensorConfig {
            mount: [0.0, 0.0, 0.0],
            azimuth_rays: 1,
            elevation_rays: 1,
            azimuth_fov: 0.0,
            elevation_min: 0.0,
            elevation_max: 0.0,
            max_range: 20.0,
            range_noise: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn grid_is_unit_and_sized() {
        let s = SensorModel::new(SensorConfig::default()).unwrap();
        assert_eq!(s.num_rays(), 128 * 32);
        assert!(s.directions().iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
        let mut c = SensorConfig::default();
        c.azimuth_rays = 0;
        assert!(SensorModel::new(c).is_err());
    }

    #[test]
    fn unit_sphere_ahead_is_hit_at_four_meters() {
        let rock = sphere_rock(Point3::new(5.0, 0.0, 0.0), 1.0);
        let scene = Scene {
            rock: Some(&rock),
            ..Default::default()
        };
        let hits = raycast::<ChaCha8Rng>(&scene, &boresight_sensor(), 0.0, None);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].tag, HitTag::Rock);
        assert!((hits[0].distance - 4.0).abs() < 1e-9, "{}", hits[0].distance);
    }

    #[test]
    fn plate_in_front_occludes_rock() {
        let rock = sphere_rock(Point3::new(5.0, 0.0, 0.0), 1.0);
        let plate = Plate {
            center: Point3::new(2.0, 0.0, 0.0),
            u: Vector3::y(),
            v: Vector3::z(),
            normal: Vector3::x(),
            half: Vector2::new(0.5, 0.5),
            thickness: 0.03,
        };
        let plates = [plate];
        let scene = Scene {
            rock: Some(&rock),
            plates: &plates,
            ground_height: None,
        };
        let hits = raycast::<ChaCha8Rng>(&scene, &boresight_sensor(), 0.0, None);
        assert_eq!(hits[0].tag, HitTag::Bucket);
        assert!((hits[0].distance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_into_the_sky_misses() {
        let mut c = boresight_sensor().config;
        c.elevation_min = 0.5;
        c.elevation_max = 0.5;
        let s = SensorModel::new(c).unwrap();
        let scene = Scene {
            ground_height: Some(0.0),
            ..Default::default()
        };
        assert!(raycast::<ChaCha8Rng>(&scene, &s, 0.0, None).is_empty());
    }

    #[test]
    fn rock_hits_match_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SensorModel::new(SensorConfig::default()).unwrap();
        for _ in 0..20 {
            let mut rock = sphere_rock(
                Point3::new(rng.gen_range(2.0..8.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..0.6)),
                rng.gen_range(0.15..0.5),
            );
            rock.orientation = UnitQuaternion::from_euler_angles(rng.gen(), rng.gen(), rng.gen());
            let q = rng.gen_range(-1.0..1.0);
            let scene = Scene {
                rock: Some(&rock),
                plates: &[],
                ground_height: Some(0.0),
            };
            let full: Vec<Hit> = raycast::<ChaCha8Rng>(&scene, &s, q, None)
                .into_iter()
                .filter(|h| h.tag == HitTag::Rock)
                .collect();
            let mut fast = Vec::new();
            rock_hits::<ChaCha8Rng>(&scene, &s, q, None, &mut fast);
            assert_eq!(full, fast);
        }
    }

    #[test]
    fn collinear_downsample_keeps_extremes() {
        let pts: Vec<Point3<f64>> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        for start in 0..4 {
            let mut idx = downsample(&pts, 2, start);
            idx.sort();
            assert_eq!(idx, vec![0, 3]);
        }
    }

    #[test]
    fn twenty_hits_are_kept_as_a_set() {
        let hits: Vec<Hit> = (0..20)
            .map(|i| Hit {
                ray: i,
                distance: 1.0 + i as f64,
                point: Point3::new(1.0 + i as f64, (i % 3) as f64, 0.0),
                tag: HitTag::Rock,
            })
            .collect();
        let cloud = extract_rock_points(&hits, 0.0, &Point3::origin(), &RockCloud::default());
        assert!(cloud.valid);
        let mut got: Vec<[u64; 3]> = cloud.points.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        let mut want: Vec<[u64; 3]> = hits.iter().map(|h| [h.point.x.to_bits(), h.point.y.to_bits(), h.point.z.to_bits()]).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert_eq!(cloud.points[0], hits[0].point);
    }

    #[test]
    fn few_hits_are_padded_by_cycling() {
        let hits: Vec<Hit> = (0..3)
            .map(|i| Hit {
                ray: i,
                distance: 1.0,
                point: Point3::new(i as f64, 0.0, 0.0),
                tag: HitTag::Rock,
            })
            .collect();
        let cloud = extract_rock_points(&hits, 0.0, &Point3::origin(), &RockCloud::default());
        for i in 3..CLOUD_POINTS {
            assert_eq!(cloud.points[i], cloud.points[i % 3]);
        }
    }

    #[test]
    fn zero_hits_hold_previous_cloud() {
        let mut prev = RockCloud::default();
        prev.points[4] = Point3::new(1.0, 2.0, 3.0);
        prev.valid = true;
        let ground = [Hit {
            ray: 0,
            distance: 1.0,
            point: Point3::origin(),
            tag: HitTag::Ground,
        }];
        let cloud = extract_rock_points(&ground, 0.3, &Point3::origin(), &prev);
        assert!(!cloud.valid);
        assert_eq!(cloud.points, prev.points);
    }

    #[test]
    fn range_noise_moves_hits_along_rays() {
        let rock = sphere_rock(Point3::new(5.0, 0.0, 0.0), 1.0);
        let scene = Scene {
            rock: Some(&rock),
            ..Default::default()
        };
        let mut c = boresight_sensor().config;
        c.range_noise = 0.05;
        let s = SensorModel::new(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = raycast(&scene, &s, 0.0, Some(&mut rng));
        assert!((h[0].distance - 4.0).abs() > 0.0);
        assert!(h[0].point.y.abs() < 1e-12 && h[0].point.z.abs() < 1e-12);
    }
}
