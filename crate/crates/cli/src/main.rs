use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use lhmaploc_core::eval::{
    benchmark_timing, emit_plots, evaluate, pose_errors, Overlay, RunConfig,
};
use lhmaploc_core::geometry::NoiseRange;
use lhmaploc_core::mapstore::{query_local, LHMap};
use lhmaploc_core::model::Model;
use lhmaploc_core::nets::NetConfig;
use lhmaploc_core::offline::{export_lhmap, train_offline, OfflineConfig};
use lhmaploc_core::online::{localize_iterative, train_online, OnlineConfig, TraceEntry};
use lhmaploc_core::synth::{
    desk_camera, gen_scene, load_scene, make_dataset, save_scene, OfflineSample, SyntheticScene,
};
use lhmaploc_core::{EvalError, GeometryError, MapError, PipelineError, SynthError};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser)]
#[command(
    name = "lhmaploc",
    version,
    about = "LHMap construction and camera localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value settings file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_level: Option<u8>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60_000)]
        points: usize,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        /// Street layout size in meters.
        #[arg(long, default_value_t = 40.0)]
        extent: f64,
    },
    /// Train the offline network on a scene and export its LHMap.
    BuildMap {
        #[arg(long)]
        scene: PathBuf,
        /// Output LHMap path.
        #[arg(long)]
        out: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        topn: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a localization model for one noise level.
    TrainOnline {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        ckpt: PathBuf,
        /// Checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Localize one frame, or every frame when --frame is omitted.
    Localize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// One checkpoint per refinement iteration.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
        iters: u8,
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate on a scene; writes report.json and plots.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
        iters: u8,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of frames that get a registration overlay.
        #[arg(long, default_value_t = 3)]
        overlays: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Print record, point and byte counts of an LHMap.
    MapStat {
        #[arg(long)]
        map: PathBuf,
    },
    /// Time map rendering and inference at batch size 1.
    Bench {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Number of scene frames timed per repetition.
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct LocalizeOutput {
    frame_id: u64,
    pose_q: [f64; 4],
    pose_t: [f64; 3],
    transl_err_m: f64,
    rot_err_deg: f64,
    pre_ms: f64,
    infer_ms: f64,
    trace: Vec<TraceEntry>,
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn noise_level(common: &Common, cfg: &RunConfig) -> u8 {
    common.noise_level.or(cfg.noise_level()).unwrap_or(1)
}

/// Samples with the level's noise drawn from `seed`.
fn dataset(
    scene: &SyntheticScene,
    common: &Common,
    cfg: &RunConfig,
) -> Result<Vec<OfflineSample>, CliError> {
    let range = NoiseRange::level(noise_level(common, cfg))?;
    Ok(make_dataset(scene, &range, common.seed.unwrap_or(0)))
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<Model>, CliError> {
    paths
        .iter()
        .map(|p| Model::load(p, NetConfig::default()).map_err(CliError::from))
        .collect()
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthGen {
            out,
            seed,
            points,
            frames,
            extent,
        } => {
            let scene = gen_scene(seed, points, extent, frames, desk_camera())?;
            save_scene(&scene, &out)?;
            info!(
                "wrote {} points, {} frames to {}",
                points,
                frames,
                out.display()
            );
        }
        Command::BuildMap {
            scene,
            out,
            ckpt,
            topn,
            common,
        } => {
            let cfg = load_config(&common)?;
            let scene = load_scene(&scene)?;
            let mut ocfg = OfflineConfig::default();
            cfg.apply_offline(&mut ocfg);
            if let Some(n) = topn {
                ocfg.topn = n;
            }
            if let Some(s) = common.seed {
                ocfg.seed = s;
            }
            if let Some(l) = common.noise_level {
                ocfg.noise_level = l;
            }
            let range = NoiseRange::level(ocfg.noise_level)?;
            let data = make_dataset(&scene, &range, ocfg.seed);
            let mut model = Model::new(NetConfig::default(), ocfg.seed);
            let report = train_offline(&mut model, &data, &scene.cam, &ocfg)?;
            info!("offline losses {:?}", report.epoch_losses);
            let map = export_lhmap(&model, &data, &scene.cam, ocfg.topn)?;
            map.save(&out)?;
            model.save(&ckpt)?;
            write_json(&map.stat(), None)?;
        }
        Command::TrainOnline {
            scene,
            map,
            ckpt,
            init,
            common,
        } => {
            let cfg = load_config(&common)?;
            let scene = load_scene(&scene)?;
            let map = LHMap::load(&map)?;
            let mut ocfg = OnlineConfig::default();
            cfg.apply_online(&mut ocfg);
            if let Some(s) = common.seed {
                ocfg.seed = s;
            }
            let level = noise_level(&common, &cfg);
            let mut model = match init {
                Some(p) => Model::load(&p, NetConfig::default())?,
                None => Model::new(NetConfig::default(), ocfg.seed),
            };
            let data = make_dataset(&scene, &NoiseRange::ZERO, ocfg.seed);
            let range = NoiseRange::level(level)?;
            let report = train_online(&mut model, &map, &data, &scene.cam, &range, &ocfg)?;
            model.save(&ckpt)?;
            write_json(&report, None)?;
        }
        Command::Localize {
            scene,
            map,
            ckpt,
            iters,
            frame,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            let scene = load_scene(&scene)?;
            let map = LHMap::load(&map)?;
            let models = load_models(&ckpt)?;
            let refs: Vec<&Model> = models.iter().collect();
            let data = dataset(&scene, &common, &cfg)?;
            let selected: Vec<&OfflineSample> = match frame {
                Some(f) => vec![data.get(f).ok_or_else(|| {
                    CliError::Usage(format!("frame {f} out of range (scene has {})", data.len()))
                })?],
                None => data.iter().collect(),
            };
            let mut outputs = Vec::with_capacity(selected.len());
            for s in selected {
                let r = localize_iterative(
                    &refs,
                    &map,
                    &s.image,
                    &s.t_init,
                    &scene.cam,
                    iters as usize,
                    Some(&s.t_gt),
                    1,
                )?;
                let (te, re) = pose_errors(&r.pose_est, &s.t_gt);
                let t = r.pose_est.translation();
                outputs.push(LocalizeOutput {
                    frame_id: s.frame_id,
                    pose_q: r.pose_est.quat(),
                    pose_t: [t.x, t.y, t.z],
                    transl_err_m: te,
                    rot_err_deg: re,
                    pre_ms: r.pre_ms,
                    infer_ms: r.infer_ms,
                    trace: r.trace,
                });
            }
            write_json(&outputs, out.as_deref())?;
        }
        Command::Eval {
            scene,
            map,
            ckpt,
            iters,
            out,
            overlays,
            common,
        } => {
            let cfg = load_config(&common)?;
            let scene = load_scene(&scene)?;
            let map = LHMap::load(&map)?;
            let models = load_models(&ckpt)?;
            let refs: Vec<&Model> = models.iter().collect();
            let data = dataset(&scene, &common, &cfg)?;
            let (report, results) = evaluate(&refs, &map, &data, &scene.cam, iters as usize, 1)?;
            std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
                path: out.clone(),
                source,
            })?;
            report.save(&out.join("report.json"))?;
            let mut shown = Vec::new();
            for (s, r) in data.iter().zip(&results).take(overlays) {
                shown.push(Overlay {
                    frame_id: s.frame_id,
                    image: s.image.clone(),
                    points: query_local(&map, &s.t_gt, 1)?,
                    est: r.pose_est,
                    gt: s.t_gt,
                    cam: scene.cam,
                });
            }
            emit_plots(&report, &shown, &out, NetConfig::default().max_depth)?;
            write_json(&report, None)?;
        }
        Command::MapStat { map } => {
            let map = LHMap::load(&map)?;
            write_json(&map.stat(), None)?;
        }
        Command::Bench {
            scene,
            map,
            ckpt,
            reps,
            frames,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            let scene = load_scene(&scene)?;
            let map = LHMap::load(&map)?;
            let model = Model::load(&ckpt, NetConfig::default())?;
            let data = dataset(&scene, &common, &cfg)?;
            let n = frames.clamp(1, data.len());
            let timing = benchmark_timing(&model, &map, &data[..n], &scene.cam, reps, 1)?;
            write_json(&timing, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
