use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use sogmnav::annotate::{build_sogm, label_session, project_frame_2d, refine_map, SemanticLabel};
use sogmnav::config::ExperimentConfig;
use sogmnav::geom::{LidarFrame, Point2, Point3, Pose};
use sogmnav::io::{load_frame_ply, load_poses_csv, save_frame_ply, save_poses_csv, PlyFormat};
use sogmnav::morpho::{composite_mask, primitive_mask, Composite, Primitive};
use sogmnav::pointmap::{run_slam, MapCloud};
use sogmnav::predict::PredictorKind;
use sogmnav::sim::{compute_metrics, run_session_from, spawn_actors, Metrics, SessionLog, World};
use sogmnav::{Error, Result};

#[derive(Parser)]
#[command(name = "sogmnav", version, about = "Lidar annotation, occupancy and risk maps, risk-aware navigation")]
struct Cli {
    /// Experiment configuration (TOML); defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and refine a point map from a recorded session.
    Map {
        /// Directory of PLY frames, with an optional poses.csv.
        session: PathBuf,
    },
    /// Label a session against a refined map and build occupancy grids.
    Annotate {
        session: PathBuf,
        /// Output directory of `map`.
        #[arg(long)]
        map: PathBuf,
        /// Frames between two grids.
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Run navigation sessions over the configured seeds and predictors.
    Simulate {
        /// Restrict to these predictors.
        #[arg(long, value_delimiter = ',')]
        predictor: Vec<String>,
        /// Restrict to this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write lidar frames and poses for every session.
        #[arg(long)]
        record_frames: bool,
        /// Also export every log as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Metrics per session and mean/std per predictor.
    Eval {
        /// Directory of session logs.
        logs: PathBuf,
    },
    /// Apply a morphology operator to one label of a PLY cloud.
    Morpho {
        input: PathBuf,
        #[arg(long, value_enum)]
        op: MorphoOp,
        #[arg(long)]
        radius: f64,
        #[arg(long, value_enum)]
        positive: LabelArg,
        /// Label given to points leaving the positive set.
        #[arg(long, value_enum, default_value = "uncertain")]
        negative: LabelArg,
    },
    /// Print the default configuration.
    Defaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum MorphoOp {
    Dilation,
    Erosion,
    Opening,
    Closing,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Ground,
    Permanent,
    Movable,
    Dynamic,
    Uncertain,
}

impl From<LabelArg> for SemanticLabel {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Ground => SemanticLabel::Ground,
            LabelArg::Permanent => SemanticLabel::Permanent,
            LabelArg::Movable => SemanticLabel::Movable,
            LabelArg::Dynamic => SemanticLabel::Dynamic,
            LabelArg::Uncertain => SemanticLabel::Uncertain,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: String,
    code_version: &'a str,
    config_hash: String,
    seeds: Vec<u64>,
    config: &'a ExperimentConfig,
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

fn write_manifest(cfg: &ExperimentConfig, seeds: Vec<u64>) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    let m = Manifest {
        command: std::env::args().collect::<Vec<_>>().join(" "),
        code_version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seeds,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&m).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_file(&cfg.output_dir.join("manifest.json"), json)?;
    write_file(&cfg.output_dir.join("config.toml"), cfg.to_toml())
}

fn load_world(cfg: &ExperimentConfig) -> Result<World> {
    match &cfg.world {
        Some(p) => World::load(p),
        None => Ok(World::atrium()),
    }
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn load_frames(dir: &Path) -> Result<Vec<LidarFrame>> {
    let files = files_with_ext(dir, "ply")?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no PLY frames in {}", dir.display())));
    }
    files.iter().map(|f| load_frame_ply(f).map(|p| p.frame)).collect()
}

fn initial_pose(session: &Path) -> Result<Pose> {
    let p = session.join("poses.csv");
    if p.exists() {
        if let Some(first) = load_poses_csv(&p)?.first() {
            return Ok(*first);
        }
    }
    Ok(Pose::identity(0.0))
}

fn save_labels(path: &Path, labels: &[SemanticLabel]) -> Result<()> {
    write_file(path, labels.iter().map(|&l| l as u8).collect::<Vec<u8>>())
}

fn load_labels(path: &Path) -> Result<Vec<SemanticLabel>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| SemanticLabel::from_u8(b).ok_or_else(|| Error::format(i as u64, format!("bad label {b}"))))
        .collect()
}

fn cmd_map(cfg: &ExperimentConfig, session: &Path) -> Result<()> {
    let frames = load_frames(session)?;
    let slam = run_slam(&frames, &cfg.slam_config(), &initial_pose(session)?, None)?;
    let poses: Vec<(Pose, Pose)> = slam.poses.iter().map(|r| (r.pose0, r.pose1)).collect();
    let (map, labels) = refine_map(&slam.map, &frames, &poses, &cfg.annotation_config())?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    map.save(&out.join("map.pmap"))?;
    save_labels(&out.join("map_labels.bin"), &labels)?;
    save_poses_csv(&out.join("slam_poses.csv"), &slam.poses.iter().map(|r| r.pose1).collect::<Vec<_>>())?;
    println!("{} frames, {} raw map points, {} kept", frames.len(), slam.map.len(), map.len());
    write_manifest(cfg, Vec::new())
}

fn cmd_annotate(cfg: &ExperimentConfig, session: &Path, map_dir: &Path, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let frames = load_frames(session)?;
    let map = MapCloud::load(&map_dir.join("map.pmap"))?;
    let map_labels = load_labels(&map_dir.join("map_labels.bin"))?;
    let slam = run_slam(&frames, &cfg.slam_config(), &initial_pose(session)?, Some(map.clone()))?;
    let poses: Vec<(Pose, Pose)> = slam.poses.iter().map(|r| (r.pose0, r.pose1)).collect();
    let acfg = cfg.annotation_config();
    let annotation = label_session(&map, &map_labels, &frames, &poses, &acfg)?;

    let out = &cfg.output_dir;
    let labeled = out.join("annotated");
    let grids = out.join("sogm");
    create_dir(&labeled)?;
    create_dir(&grids)?;
    for af in &annotation.frames {
        let path = labeled.join(format!("{:06}.ply", af.frame.frame_id));
        save_frame_ply(&path, &af.frame, Some(&af.labels), PlyFormat::BinaryLittleEndian)?;
    }
    let flat: Vec<_> = annotation.frames.iter().map(|af| project_frame_2d(af, &acfg)).collect();
    let n_t = cfg.sogm.n_layers();
    let mut written = 0;
    for k in (0..flat.len()).step_by(stride) {
        let end = (k + n_t).min(flat.len());
        let center = poses[k].1.translation;
        let sogm = build_sogm(&flat[k..end], flat[k].stamp, 0.0, Point2::new(center.x, center.y), &cfg.sogm)?;
        sogm.save(&grids.join(format!("{:06}.sogm", frames[k].frame_id)), None)?;
        written += 1;
    }
    println!("{} frames labelled, {written} grids", annotation.frames.len());
    write_manifest(cfg, Vec::new())
}

fn recorder(dir: PathBuf) -> impl FnMut(&LidarFrame, &[SemanticLabel], &Pose) -> Result<()> {
    let mut poses = Vec::new();
    move |frame, labels, pose| {
        save_frame_ply(&dir.join(format!("{:06}.ply", frame.frame_id)), frame, Some(labels), PlyFormat::BinaryLittleEndian)?;
        poses.push(*pose);
        save_poses_csv(&dir.join("poses.csv"), &poses)
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, predictors: &[String], seed: Option<u64>, record: bool, csv: bool) -> Result<()> {
    let world = load_world(cfg)?;
    let scenario = cfg.scenario();
    let kinds: Vec<PredictorKind> = if predictors.is_empty() {
        cfg.predictor.kinds.clone()
    } else {
        predictors
            .iter()
            .map(|p| PredictorKind::from_name(p).ok_or_else(|| Error::Config(format!("unknown predictor {p:?}"))))
            .collect::<Result<_>>()?
    };
    let seeds: Vec<u64> = match seed {
        Some(s) => vec![s],
        None => cfg.seeds.seeds().collect(),
    };
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    let jobs: Vec<(PredictorKind, u64)> = kinds.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<(PredictorKind, u64, Metrics)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, seed)| {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                let actors = spawn_actors(&world, &scenario.sim, &mut rng)?;
                let name = format!("{}_{seed:04}", kind.name());
                let log = if record {
                    let dir = out.join("frames").join(&name);
                    create_dir(&dir)?;
                    let mut sink = recorder(dir);
                    run_session_from(&world, &scenario, kind, seed, actors, Some(&mut sink))?
                } else {
                    run_session_from(&world, &scenario, kind, seed, actors, None)?
                };
                log.save(&out.join(format!("{name}.log")))?;
                if csv {
                    let p = out.join(format!("{name}.csv"));
                    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    log.write_csv(std::io::BufWriter::new(f))?;
                }
                Ok((kind, seed, compute_metrics(&log)?))
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.push(r?);
    }
    print_table(&rows);
    write_manifest(cfg, seeds)
}

#[derive(Serialize)]
struct Summary {
    predictor: String,
    sessions: usize,
    mean: BTreeMap<&'static str, f64>,
    std: BTreeMap<&'static str, f64>,
}

fn metric_fields(m: &Metrics) -> [(&'static str, f64); 8] {
    [
        ("t_f", m.t_f),
        ("complete", f64::from(u8::from(m.complete))),
        ("collision_pct", m.collision_pct),
        ("risk_pct", m.risk_pct),
        ("aas", m.aas),
        ("slow_pct", m.slow_pct),
        ("als", m.als),
        ("backward_pct", m.backward_pct),
    ]
}

fn summarize(rows: &[(PredictorKind, u64, Metrics)]) -> Vec<Summary> {
    let mut out = Vec::new();
    for kind in PredictorKind::ALL {
        let ms: Vec<&Metrics> = rows.iter().filter(|r| r.0 == kind).map(|r| &r.2).collect();
        if ms.is_empty() {
            continue;
        }
        let n = ms.len() as f64;
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for (i, (name, _)) in metric_fields(ms[0]).iter().enumerate() {
            let vals: Vec<f64> = ms.iter().map(|m| metric_fields(m)[i].1).collect();
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean.insert(*name, mu);
            std.insert(*name, var.sqrt());
        }
        out.push(Summary {
            predictor: kind.name().to_string(),
            sessions: ms.len(),
            mean,
            std,
        });
    }
    out
}

fn print_table(rows: &[(PredictorKind, u64, Metrics)]) {
    println!(
        "{:<11} {:>4} {:>14} {:>12} {:>12} {:>11} {:>11}",
        "predictor", "n", "T_f (s)", "%C", "%R", "AAS", "%S"
    );
    for s in summarize(rows) {
        let f = |k: &str| format!("{:.2}±{:.2}", s.mean[k], s.std[k]);
        println!(
            "{:<11} {:>4} {:>14} {:>12} {:>12} {:>11} {:>11}",
            s.predictor,
            s.sessions,
            f("t_f"),
            f("collision_pct"),
            f("risk_pct"),
            f("aas"),
            f("slow_pct")
        );
    }
}

fn cmd_eval(cfg: &ExperimentConfig, logs: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for p in files_with_ext(logs, "log")? {
        let log = SessionLog::load(&p)?;
        rows.push((log.predictor, log.seed, compute_metrics(&log)?));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("no session logs in {}", logs.display())));
    }
    print_table(&rows);
    create_dir(&cfg.output_dir)?;
    let per_session: Vec<_> = rows
        .iter()
        .map(|(k, s, m)| serde_json::json!({"predictor": k.name(), "seed": s, "metrics": m}))
        .collect();
    let doc = serde_json::json!({"sessions": per_session, "summary": summarize(&rows)});
    write_file(
        &cfg.output_dir.join("metrics.json"),
        serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidInput(e.to_string()))?,
    )?;
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.1).collect();
    seeds.sort_unstable();
    seeds.dedup();
    write_manifest(cfg, seeds)
}

fn cmd_morpho(cfg: &ExperimentConfig, input: &Path, op: MorphoOp, radius: f64, positive: SemanticLabel, negative: SemanticLabel) -> Result<()> {
    if !(radius >= 0.0) {
        return Err(Error::Config("radius must be non-negative".into()));
    }
    let ply = load_frame_ply(input)?;
    let labels = ply
        .labels
        .ok_or_else(|| Error::InvalidInput(format!("{} has no label property", input.display())))?;
    let points: Vec<Point3> = ply.frame.points.iter().map(|p| p.position).collect();
    let mut mask: Vec<bool> = labels.iter().map(|&l| l == positive).collect();
    let before = mask.clone();
    match op {
        MorphoOp::Dilation => primitive_mask(Primitive::Dilation, &points, &mut mask, radius),
        MorphoOp::Erosion => primitive_mask(Primitive::Erosion, &points, &mut mask, radius),
        MorphoOp::Opening => composite_mask(Composite::Opening, &points, &mut mask, radius),
        MorphoOp::Closing => composite_mask(Composite::Closing, &points, &mut mask, radius),
    }
    let out_labels: Vec<SemanticLabel> = labels
        .iter()
        .zip(mask.iter().zip(&before))
        .map(|(&l, (&now, &was))| match (was, now) {
            (_, true) => positive,
            (true, false) => negative,
            (false, false) => l,
        })
        .collect();
    create_dir(&cfg.output_dir)?;
    let name = input.file_name().map_or_else(|| "cloud.ply".into(), |n| n.to_owned());
    save_frame_ply(&cfg.output_dir.join(name), &ply.frame, Some(&out_labels), PlyFormat::BinaryLittleEndian)?;
    let flipped = mask.iter().zip(&before).filter(|(a, b)| a != b).count();
    println!("{flipped} of {} points changed", points.len());
    write_manifest(cfg, Vec::new())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    match cli.command {
        Command::Map { session } => cmd_map(&cfg, &session),
        Command::Annotate { session, map, stride } => cmd_annotate(&cfg, &session, &map, stride),
        Command::Simulate {
            predictor,
            seed,
            record_frames,
            csv,
        } => cmd_simulate(&cfg, &predictor, seed, record_frames, csv),
        Command::Eval { logs } => cmd_eval(&cfg, &logs),
        Command::Morpho {
            input,
            op,
            radius,
            positive,
            negative,
        } => cmd_morpho(&cfg, &input, op, radius, positive.into(), negative.into()),
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
