//! Subcommand implementations.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use boulder::env::cache::{generate_cache, load_caches, ResetCache};
use boulder::env::log::{in_soil_horizontal_length, replay as replay_log, Trajectory, SOIL_CONTACT_BAND};
use boulder::env::obs::ObsLayout;
use boulder::env::curriculum::NUM_LEVELS;
use boulder::env::{RockLibrary, RockPool, SoilMode};
use boulder::learn::checkpoint::{check_layout, load_checkpoint, save_checkpoint, CheckpointError, CheckpointHeader};
use boulder::learn::eval::{evaluate_grid, record_episode, sample_episodes, GridPolicy, PolicyController};
use boulder::learn::mlp::NetScalar;
use boulder::learn::oracle::{OracleConfig, ScriptedOracle};
use boulder::learn::policy::PolicyNet;
use boulder::learn::train::{TrainConfig, Trainer, METRICS_HEADER};
use boulder::rockgen::{read_dataset, sample_dataset, write_dataset, Dataset, DatasetConfig, SizeClass, Split};
use boulder::{EnvConfig, Shared};

use crate::fault::{io_at, Fault};
use crate::plot::{render_svg, Curve};
use crate::snapshot::{load_env_config, Snapshot};
use crate::{
    CacheArgs, DataArgs, DtypeArg, EvalArgs, Global, PlotArgs, ReplayArgs, RocksArgs, SizeArg, SoilArg, SplitArg,
    TrainArgs,
};

fn rocks_dir(g: &Global, dir: &Option<PathBuf>) -> PathBuf {
    dir.clone().unwrap_or_else(|| g.root().join("rocks"))
}

fn cache_dir(g: &Global, dir: &Option<PathBuf>) -> PathBuf {
    dir.clone().unwrap_or_else(|| g.root().join("cache"))
}

fn load_library(dir: &Path) -> Result<(Dataset, RockLibrary), Fault> {
    if !dir.join("manifest.json").exists() {
        return Err(Fault::Data(format!(
            "no rock dataset in {}; run `boulder rocks` first",
            dir.display()
        )));
    }
    let ds = read_dataset(dir)?;
    let lib = RockLibrary::from_dataset(&ds)?;
    Ok((ds, lib))
}

fn load_data(g: &Global, data: &DataArgs, levels: &[u8]) -> Result<(RockLibrary, Vec<ResetCache>), Fault> {
    let (_, lib) = load_library(&rocks_dir(g, &data.rocks))?;
    let caches = load_caches(&cache_dir(g, &data.cache), levels, &lib.dataset_hash, data.cache_seed)?;
    Ok((lib, caches))
}

fn soil_mode(s: SoilArg) -> SoilMode {
    match s {
        SoilArg::Curriculum => SoilMode::Curriculum,
        SoilArg::Soft => SoilMode::Soft,
        SoilArg::Hard => SoilMode::Hard,
        SoilArg::Randomized => SoilMode::Randomized,
    }
}

fn size_class(s: SizeArg) -> Option<SizeClass> {
    match s {
        SizeArg::Small => Some(SizeClass::Small),
        SizeArg::Large => Some(SizeClass::Large),
        SizeArg::Any => None,
    }
}

fn split(s: SplitArg) -> Option<Split> {
    match s {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Holdout => Some(Split::Holdout),
        SplitArg::All => None,
    }
}

pub fn rocks(g: &Global, a: &RocksArgs) -> Result<(), Fault> {
    if !(0.0..=1.0).contains(&a.small_fraction) {
        return Err(Fault::Usage("--small-fraction must lie in [0, 1]".into()));
    }
    let cfg = DatasetConfig {
        n_train: a.n as usize,
        n_holdout: a.holdout as usize,
        small_fraction: a.small_fraction,
        ..DatasetConfig::default()
    };
    let dir = rocks_dir(g, &a.dir);
    let ds = sample_dataset(&cfg, a.seed)?;
    let manifest = write_dataset(&dir, &ds)?;
    Snapshot::new("rocks", a, &load_env_config(g.config.as_deref())?)?.write(&dir)?;
    println!(
        "wrote {} rocks ({} train, {} held out) to {}",
        manifest.rocks.len(),
        ds.train.len(),
        ds.holdout.len(),
        dir.display()
    );
    println!("dataset hash {}", manifest.hash);
    Ok(())
}

pub fn cache(g: &Global, a: &CacheArgs) -> Result<(), Fault> {
    let config = load_env_config(g.config.as_deref())?;
    let (_, lib) = load_library(&rocks_dir(g, &a.rocks))?;
    let dir = cache_dir(g, &a.dir);
    let levels: Vec<u8> = match a.level {
        Some(l) => vec![l],
        None => (0..NUM_LEVELS as u8).collect(),
    };
    for l in levels {
        let t = Instant::now();
        let c = generate_cache(&config, &lib, l, a.count as usize, a.seed)?;
        let path = ResetCache::path_in(&dir, l, &lib.dataset_hash, a.seed);
        c.save(&path)?;
        println!(
            "level {l}: {} states from {} attempts ({:.1}% accepted) in {:.1}s -> {}",
            c.entries.len(),
            c.attempts,
            100.0 * c.acceptance_rate(),
            t.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Snapshot::new("cache", a, &config)?.write(&dir)
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<(), Fault> {
    let mut config = load_env_config(g.config.as_deref())?;
    if let Some(s) = a.soil {
        config.soil = soil_mode(s);
    }
    config.level = a.level;
    config.pool = RockPool {
        split: Some(Split::Train),
        class: size_class(a.size),
    };
    let levels: Vec<u8> = match a.level {
        Some(l) => vec![l],
        None => (0..NUM_LEVELS as u8).collect(),
    };
    let (lib, caches) = load_data(g, &a.data, &levels)?;
    if let Some(s) = a.stop_at {
        if !(0.0..=1.0).contains(&s) {
            return Err(Fault::Usage("--stop-at must lie in [0, 1]".into()));
        }
    }
    let tc = TrainConfig {
        num_envs: a.envs as usize,
        iterations: a.iters,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        stop_at_success: a.stop_at,
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| Fault::Usage(e.to_string()))?;
    let dir = g.root().join("train").join(&a.name);
    let mut snap = Snapshot::new("train", a, &config)?;
    snap.train = Some(tc.clone());
    snap.write(&dir)?;
    let shared = Arc::new(Shared::new(config, lib, caches)?);
    match a.dtype {
        DtypeArg::F32 => run_training::<f32>(tc, shared, &dir),
        DtypeArg::F64 => run_training::<f64>(tc, shared, &dir),
    }
}

fn all_finite<T: NetScalar>(net: &PolicyNet<T>) -> bool {
    net.flat_params().iter().all(|p| p.as_f64().is_finite())
}

fn run_training<T: NetScalar>(tc: TrainConfig, shared: Arc<Shared>, dir: &Path) -> Result<(), Fault> {
    let every = tc.checkpoint_every;
    let mut trainer = Trainer::<T>::new(tc, shared)?;
    save_checkpoint(&dir.join("checkpoint_init.bin"), &trainer.header(), &trainer.net)?;
    let metrics_path = dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path).map_err(io_at(&metrics_path))?);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_at(&metrics_path))?;
    let start = Instant::now();
    let mut failure: Option<Fault> = None;
    trainer.run(|tr, m| {
        let res = (|| -> Result<(), Fault> {
            writeln!(metrics, "{}", m.csv_row()).map_err(io_at(&metrics_path))?;
            metrics.flush().map_err(io_at(&metrics_path))?;
            println!(
                "iter {:>5}  level {}  episodes {:>4}  success {:.3} (window {})  return {:>8.3}  kl {:.4}  {:.0}s",
                m.iteration,
                m.level,
                m.episodes,
                m.rolling_success,
                m.window,
                m.mean_return,
                m.update.loss.approx_kl,
                start.elapsed().as_secs_f64()
            );
            if !all_finite(&tr.net) {
                return Err(Fault::Numeric(format!("non-finite parameters at iteration {}", m.iteration)));
            }
            if every > 0 && m.iteration % every as u64 == 0 {
                let p = dir.join(format!("checkpoint_{:05}.bin", m.iteration));
                save_checkpoint(&p, &tr.header(), &tr.net)?;
            }
            Ok(())
        })();
        res.map_err(|f| {
            let msg = f.to_string();
            failure = Some(f);
            boulder::EnvError::Config(msg)
        })
    })
    .map_err(|e| failure.take().unwrap_or_else(|| Fault::from(e)))?;
    let final_path = dir.join("checkpoint_final.bin");
    save_checkpoint(&final_path, &trainer.header(), &trainer.net)?;
    println!(
        "trained {} iterations, rolling success {:.3}; checkpoint {}",
        trainer.iteration(),
        trainer.venv.curriculum.success_rate(),
        final_path.display()
    );
    Ok(())
}

/// Checkpoint of either precision.
enum Loaded {
    F32(CheckpointHeader, PolicyNet<f32>),
    F64(CheckpointHeader, PolicyNet<f64>),
}

impl Loaded {
    fn header(&self) -> &CheckpointHeader {
        match self {
            Loaded::F32(h, _) | Loaded::F64(h, _) => h,
        }
    }
}

fn load_any(path: &Path) -> Result<Loaded, Fault> {
    if !path.exists() {
        return Err(Fault::Data(format!("checkpoint not found: {}", path.display())));
    }
    match load_checkpoint::<f32>(path) {
        Ok((h, n)) => Ok(Loaded::F32(h, n)),
        Err(CheckpointError::Dtype { .. }) => {
            let (h, n) = load_checkpoint::<f64>(path)?;
            Ok(Loaded::F64(h, n))
        }
        Err(e) => Err(Fault::Data(format!("{}: {e}", path.display()))),
    }
}

fn action_scale(h: &CheckpointHeader) -> Result<[f64; 5], Fault> {
    h.action_scale
        .as_slice()
        .try_into()
        .map_err(|_| Fault::Data("checkpoint action scale must have 5 entries".into()))
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<(), Fault> {
    let config = load_env_config(g.config.as_deref())?;
    let loaded = match &a.checkpoint {
        Some(p) => {
            let l = load_any(p)?;
            let layout = ObsLayout::new(&config.arm, &config.obs, config.history_len);
            check_layout(l.header(), &layout.hash())?;
            Some(l)
        }
        None => None,
    };
    let (lib, caches) = load_data(g, &a.data, &[a.level])?;
    let dir = g.root().join("eval").join(&a.name);
    Snapshot::new("eval", a, &config)?.write(&dir)?;
    let episodes = a.episodes as usize;
    let sp = split(a.split);
    let report = match &loaded {
        None => evaluate_grid::<f32>(
            &config,
            &lib,
            &caches,
            sp,
            a.level,
            episodes,
            a.seed,
            &GridPolicy::Oracle(OracleConfig::default()),
        )?,
        Some(Loaded::F32(h, net)) => {
            let c = PolicyController {
                net: net.clone(),
                action_scale: action_scale(h)?,
            };
            evaluate_grid(&config, &lib, &caches, sp, a.level, episodes, a.seed, &GridPolicy::Policy(&c))?
        }
        Some(Loaded::F64(h, net)) => {
            let c = PolicyController {
                net: net.clone(),
                action_scale: action_scale(h)?,
            };
            evaluate_grid(&config, &lib, &caches, sp, a.level, episodes, a.seed, &GridPolicy::Policy(&c))?
        }
    };
    let csv = dir.join("grid.csv");
    std::fs::write(&csv, report.to_csv()).map_err(io_at(&csv))?;
    print!("{}", report.to_table());
    println!("wrote {}", csv.display());
    if a.record {
        record_cells(&config, &lib, &caches, sp, a, loaded.as_ref(), &dir.join("logs"))?;
    }
    Ok(())
}

/// Log the first evaluation episode of every grid cell.
fn record_cells(
    base: &EnvConfig,
    lib: &RockLibrary,
    caches: &[ResetCache],
    sp: Option<Split>,
    a: &EvalArgs,
    loaded: Option<&Loaded>,
    dir: &Path,
) -> Result<(), Fault> {
    for size in [SizeClass::Small, SizeClass::Large] {
        for (name, mode) in [("soft", SoilMode::Soft), ("hard", SoilMode::Hard)] {
            let mut config = base.clone();
            config.soil = mode;
            config.level = Some(a.level);
            config.pool = RockPool {
                split: sp,
                class: Some(size),
            };
            let shared = Arc::new(Shared::new(config.clone(), lib.clone(), caches.to_vec())?);
            let params = sample_episodes(&shared, a.level, 1, a.seed)?;
            let mut env = boulder::Env::new(Arc::clone(&shared), 0)?;
            let (res, traj) = match loaded {
                None => {
                    let mut c = ScriptedOracle::new(config.arm.clone(), OracleConfig::default());
                    record_episode(&mut env, &mut c, &params[0])?
                }
                Some(Loaded::F32(h, net)) => {
                    let mut c = PolicyController {
                        net: net.clone(),
                        action_scale: action_scale(h)?,
                    };
                    record_episode(&mut env, &mut c, &params[0])?
                }
                Some(Loaded::F64(h, net)) => {
                    let mut c = PolicyController {
                        net: net.clone(),
                        action_scale: action_scale(h)?,
                    };
                    record_episode(&mut env, &mut c, &params[0])?
                }
            };
            let path = dir.join(format!("{}_{name}.csv", size.name()));
            traj.save(&path)?;
            println!("logged {} {name}: {} after {} steps -> {}", size.name(), res.termination, res.steps, path.display());
        }
    }
    Ok(())
}

pub fn replay(g: &Global, a: &ReplayArgs) -> Result<(), Fault> {
    let traj = Trajectory::load(&a.log)?;
    if traj.rows.is_empty() {
        return Err(Fault::Data(format!("{}: log has no steps", a.log.display())));
    }
    let report = replay_log(&traj)?;
    let stem = a.log.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    let dir = g.root().join("replay").join(stem);
    Snapshot::new("replay", a, &traj.meta.config)?.write(&dir)?;
    report.replayed.save(&dir.join("replayed.csv"))?;
    if let Some(i) = report.first_mismatch {
        return Err(Fault::Numeric(format!(
            "replay diverged at step {i} of {} (max reward difference {:e})",
            traj.rows.len(),
            report.max_abs_diff
        )));
    }
    println!(
        "replayed {} steps: rewards bitwise identical, return {}",
        report.steps,
        report.replayed.episode_return()
    );
    Ok(())
}

fn load_path(path: &Path) -> Result<Vec<[f64; 2]>, Fault> {
    let traj = Trajectory::load(path).map_err(|e| Fault::Data(format!("{}: {e}", path.display())))?;
    if traj.rows.is_empty() {
        return Err(Fault::Data(format!("{}: log has no steps", path.display())));
    }
    let path_pts = traj.edge_path();
    if path_pts.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Fault::Numeric(format!("{}: non-finite edge position", path.display())));
    }
    Ok(path_pts)
}

pub fn plot(g: &Global, a: &PlotArgs) -> Result<(), Fault> {
    let hard = load_path(&a.hard)?;
    let soft = load_path(&a.soft)?;
    let lh = in_soil_horizontal_length(&hard, SOIL_CONTACT_BAND);
    let ls = in_soil_horizontal_length(&soft, SOIL_CONTACT_BAND);
    if !(ls > 0.0) {
        return Err(Fault::Numeric("soft-soil log has no in-soil horizontal travel; ratio undefined".into()));
    }
    let ratio = lh / ls;
    let svg_path = a.svg.clone().unwrap_or_else(|| g.root().join("plots").join("edge_paths.svg"));
    let dir = svg_path.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let svg = render_svg(
        &[
            Curve {
                label: &format!("hard soil (in-soil horizontal {lh:.3} m)"),
                color: "#c0392b",
                points: &hard,
            },
            Curve {
                label: &format!("soft soil (in-soil horizontal {ls:.3} m)"),
                color: "#2471a3",
                points: &soft,
            },
        ],
        &format!("Bucket edge paths, hard/soft horizontal ratio {ratio:.3}"),
    );
    std::fs::write(&svg_path, svg).map_err(io_at(&svg_path))?;
    Snapshot::new("plot", a, &load_env_config(g.config.as_deref())?)?.write(&dir)?;
    println!("in-soil horizontal path: hard {lh:.6} m, soft {ls:.6} m");
    println!("hard/soft ratio: {ratio:.6}");
    println!("wrote {}", svg_path.display());
    Ok(())
}
