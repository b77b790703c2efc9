//! Procedural convex rocks and train/held-out datasets.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{ConvexMesh, GeometryError};
use crate::physics::RockBody;

pub const DENSITY: f64 = 2500.0;
pub const EXTENT_X: (f64, f64) = (0.3, 1.0);
pub const EXTENT_Y: (f64, f64) = (0.1, 0.5);
pub const EXTENT_Z: (f64, f64) = (0.2, 0.7);
pub const SMALL_X: (f64, f64) = (0.3, 0.5);
pub const LARGE_X: (f64, f64) = (0.8, 1.0);
pub const FRICTION: (f64, f64) = (0.35, 0.6);
pub const MASS_SCALE: (f64, f64) = (0.9, 1.1);
const MAX_ATTEMPTS: u64 = 16;

#[derive(Debug, Error)]
pub enum RockGenError {
    #[error("rock spec invalid: {0}")]
    InvalidSpec(String),
    #[error("could not build a rock hull for seed {seed}: {source}")]
    Hull { seed: u64, source: GeometryError },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed dataset file {path}: {msg}")]
    Parse { path: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Large,
}

impl SizeClass {
    pub fn x_range(self) -> (f64, f64) {
        match self {
            SizeClass::Small => SMALL_X,
            SizeClass::Large => LARGE_X,
        }
    }

    /// Class of an x-extent, if it falls in one of the two bands.
    pub fn of_extent(x: f64) -> Option<Self> {
        if (SMALL_X.0..=SMALL_X.1).contains(&x) {
            Some(SizeClass::Small)
        } else if (LARGE_X.0..=LARGE_X.1).contains(&x) {
            Some(SizeClass::Large)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RockSpec {
    pub seed: u64,
    /// Principal-axis extents `[x, y, z]`, m.
    pub extents: [f64; 3],
    pub density: f64,
    pub mass_scale: f64,
    pub friction: f64,
    pub class: SizeClass,
    pub split: Split,
    /// Radial noise amplitude (fraction of the radius).
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.25
}

impl RockSpec {
    /// Draw a spec of the given class from `rng`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, seed: u64, class: SizeClass, split: Split) -> Self {
        let (lo, hi) = class.x_range();
        Self {
            seed,
            extents: [
                rng.gen_range(lo..=hi),
                rng.gen_range(EXTENT_Y.0..=EXTENT_Y.1),
                rng.gen_range(EXTENT_Z.0..=EXTENT_Z.1),
            ],
            density: DENSITY,
            mass_scale: 1.0,
            friction: rng.gen_range(FRICTION.0..=FRICTION.1),
            class,
            split,
            noise: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<(), RockGenError> {
        let [x, y, z] = self.extents;
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo - 1e-12 && v <= hi + 1e-12;
        if !within(x, self.class.x_range()) || !within(y, EXTENT_Y) || !within(z, EXTENT_Z) {
            return Err(RockGenError::InvalidSpec(format!("extents {:?} out of range", self.extents)));
        }
        if !within(self.mass_scale, MASS_SCALE) {
            return Err(RockGenError::InvalidSpec(format!("mass scale {}", self.mass_scale)));
        }
        if !within(self.friction, FRICTION) {
            return Err(RockGenError::InvalidSpec(format!("friction {}", self.friction)));
        }
        if !(self.density > 0.0) || !(0.0..0.9).contains(&self.noise) {
            return Err(RockGenError::InvalidSpec("density/noise".into()));
        }
        Ok(())
    }
}

/// Seeded smooth function on the sphere with values in `[-1, 1]`.
struct SphereNoise {
    waves: Vec<(Vector3<f64>, f64, f64, f64)>,
}

impl SphereNoise {
    fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let n = 4;
        let mut waves = Vec::with_capacity(n);
        let mut total = 0.0;
        for _ in 0..n {
            let dir = unit_vector(rng);
            let freq = rng.gen_range(1.0..3.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.2..1.0);
            total += amp;
            waves.push((dir, freq, phase, amp));
        }
        for w in &mut waves {
            w.3 /= total;
        }
        Self { waves }
    }

    fn eval(&self, p: &Vector3<f64>) -> f64 {
        self.waves
            .iter()
            .map(|(d, f, ph, a)| a * (f * d.dot(p) + ph).sin())
            .sum()
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn sub_seed(seed: u64, attempt: u64) -> u64 {
    seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Perturbed sphere samples scaled so the hull's bounding box equals `extents`.
pub fn rock_points(seed: u64, extents: [f64; 3], noise: f64) -> Vec<Point3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(40..=80);
    let field = SphereNoise::new(&mut rng);
    let raw: Vec<Vector3<f64>> = (0..count)
        .map(|_| {
            let d = unit_vector(&mut rng);
            d * (1.0 + noise * field.eval(&d))
        })
        .collect();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &raw {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = hi - lo;
    let mid = (hi + lo) * 0.5;
    raw.iter()
        .map(|p| {
            Point3::new(
                (p.x - mid.x) / span.x * extents[0],
                (p.y - mid.y) / span.y * extents[1],
                (p.z - mid.z) / span.z * extents[2],
            )
        })
        .collect()
}

/// Rock body for `spec`, resting at the origin.
pub fn generate_rock(spec: &RockSpec) -> Result<RockBody, RockGenError> {
    spec.validate()?;
    let mut last = GeometryError::Degenerate;
    for attempt in 0..MAX_ATTEMPTS {
        let pts = rock_points(sub_seed(spec.seed, attempt), spec.extents, spec.noise);
        match ConvexMesh::from_points(&pts) {
            Ok(mesh) => {
                return Ok(RockBody::new(
                    Arc::new(mesh),
                    spec.density * spec.mass_scale,
                    spec.friction,
                ))
            }
            Err(e) => last = e,
        }
    }
    Err(RockGenError::Hull {
        seed: spec.seed,
        source: last,
    })
}

/// Rock from an explicit point set (hull taken, no rescaling).
pub fn rock_from_points(
    points: &[Point3<f64>],
    density: f64,
    mass_scale: f64,
    friction: f64,
) -> Result<RockBody, GeometryError> {
    let mesh = ConvexMesh::from_points(points)?;
    Ok(RockBody::new(Arc::new(mesh), density * mass_scale, friction))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_holdout: usize,
    /// Fraction of training rocks in the small class.
    pub small_fraction: f64,
    pub holdout_class: SizeClass,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 50,
            n_holdout: 25,
            small_fraction: 0.5,
            holdout_class: SizeClass::Large,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub seed: u64,
    pub train: Vec<RockSpec>,
    pub holdout: Vec<RockSpec>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &RockSpec> {
        self.train.iter().chain(self.holdout.iter())
    }

    /// SHA-256 over the canonical JSON of every spec.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in self.all() {
            h.update(serde_json::to_vec(s).expect("spec serializes"));
        }
        hex(&h.finalize())
    }

    pub fn train_of_class(&self, class: SizeClass) -> Vec<&RockSpec> {
        self.train.iter().filter(|s| s.class == class).collect()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Deterministic split into training and held-out specs with disjoint seeds.
pub fn sample_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset, RockGenError> {
    if cfg.n_train + cfg.n_holdout < 2 {
        return Err(RockGenError::InvalidSpec("dataset needs at least two rocks".into()));
    }
    if !(0.0..=1.0).contains(&cfg.small_fraction) {
        return Err(RockGenError::InvalidSpec("small_fraction outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let s = rng.gen::<u64>();
        if used.insert(s) {
            return s;
        }
    };
    let n_small = (cfg.n_train as f64 * cfg.small_fraction).round() as usize;
    let mut train = Vec::with_capacity(cfg.n_train);
    for i in 0..cfg.n_train {
        let class = if i < n_small { SizeClass::Small } else { SizeClass::Large };
        let s = fresh(&mut rng);
        train.push(RockSpec::sample(&mut rng, s, class, Split::Train));
    }
    let mut holdout = Vec::with_capacity(cfg.n_holdout);
    for _ in 0..cfg.n_holdout {
        let s = fresh(&mut rng);
        holdout.push(RockSpec::sample(&mut rng, s, cfg.holdout_class, Split::Holdout));
    }
    Ok(Dataset { seed, train, holdout })
}

/// Indexed triangle mesh as OBJ text (`v` and `f` records only).
pub fn mesh_to_obj(mesh: &ConvexMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Parse the OBJ subset written by [`mesh_to_obj`].
pub fn parse_obj(text: &str) -> Result<(Vec<Point3<f64>>, Vec<[u32; 3]>), String> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|e| format!("line {}: {e}", ln + 1)))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", ln + 1));
                }
                verts.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let c: Vec<u32> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<u32>()
                            .map_err(|e| format!("line {}: {e}", ln + 1))
                    })
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 || c.iter().any(|&i| i == 0 || i as usize > verts.len()) {
                    return Err(format!("line {}: bad triangle", ln + 1));
                }
                faces.push([c[0] - 1, c[1] - 1, c[2] - 1]);
            }
            Some(t) if t.starts_with('#') => {}
            None => {}
            Some(other) => return Err(format!("line {}: unsupported record `{other}`", ln + 1)),
        }
    }
    Ok((verts, faces))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RockRecord {
    pub name: String,
    pub spec: RockSpec,
    pub mass: f64,
    pub volume: f64,
    pub bbox: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub hash: String,
    pub rocks: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RockGenError + '_ {
    move |source| RockGenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write one OBJ + JSON record per rock and a `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<Manifest, RockGenError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut names = Vec::new();
    for (i, spec) in ds.all().enumerate() {
        let rock = generate_rock(spec)?;
        let name = format!("rock_{i:03}_{}", spec.class.name());
        let obj = dir.join(format!("{name}.obj"));
        std::fs::write(&obj, mesh_to_obj(&rock.mesh)).map_err(io_err(&obj))?;
        let rec = RockRecord {
            name: name.clone(),
            spec: spec.clone(),
            mass: rock.mass,
            volume: rock.mesh.volume,
            bbox: rock.mesh.aabb.extents().into(),
        };
        let json = dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(&rec).expect("record serializes");
        std::fs::write(&json, text).map_err(io_err(&json))?;
        names.push(name);
    }
    let manifest = Manifest {
        seed: ds.seed,
        hash: ds.hash(),
        rocks: names,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Load the specs back from a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset, RockGenError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RockGenError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut ds = Dataset {
        seed: manifest.seed,
        train: Vec::new(),
        holdout: Vec::new(),
    };
    for name in &manifest.rocks {
        let p = dir.join(format!("{name}.json"));
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        let rec: RockRecord = serde_json::from_str(&text).map_err(|e| RockGenError::Parse {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        match rec.spec.split {
            Split::Train => ds.train.push(rec.spec),
            Split::Holdout => ds.holdout.push(rec.spec),
        }
    }
    if ds.hash() != manifest.hash {
        return Err(RockGenError::Parse {
            path: path.display().to_string(),
            msg: "dataset hash mismatch".into(),
        });
    }
    Ok(ds)
}
