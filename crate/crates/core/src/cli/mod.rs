//! Command-line front end: every command is a function of (config, seed,
//! input files) to files under the output directory.

mod config;

pub use config::*;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::analysis::build_curve;
use crate::eval::{self, evaluate_parallel, generalization_gap, Evaluation, NetworkPolicy, RandomPolicy};
use crate::gridhouse::{generate_house, label_color, parse_layout, render, HouseLayout, HouseParams, Pose, RenderOutput};
use crate::perception::{self, build_dataset, mean_iou, perception_forward, PerceptionParams};
use crate::policynet::PolicyParams;
use crate::trainer::{train_with, ObservationModel, TaskPair, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "gaple", version, about = "Grid-house object approaching: simulate, train, evaluate, analyze")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Generalization protocol preset.
    #[arg(long, global = true, value_enum)]
    pub setting: Option<Setting>,
    /// Worker threads; overrides GAPLE_THREADS and the config.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured houses as layout files.
    GenHouses,
    /// Train the segmentation/depth network on rendered frames.
    TrainPerception,
    /// Train the navigation policy on the training pairs.
    TrainPolicy,
    /// Evaluate a policy checkpoint on training and held-out pairs.
    Eval {
        /// Policy checkpoint; defaults to the config value, then `<out-dir>/policy.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Physical versus feature distance curves.
    Analyze,
    /// Render one view as PGM/PPM images.
    Render {
        #[arg(long)]
        layout: PathBuf,
        /// `x,y,H` with H one of N, E, S, W.
        #[arg(long)]
        pose: Pose,
    },
}

/// Resolves config file, setting, seed and worker overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(s) = cli.setting.or(cfg.setting) {
        cfg.apply_setting(s);
    }
    let env_threads = match std::env::var("GAPLE_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().with_context(|| format!("GAPLE_THREADS=`{v}` is not a worker count"))?),
        Err(_) => None,
    };
    if let Some(w) = cli.workers.or(env_threads) {
        cfg.policy.n_workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = resolve_config(cli)?;
    let out = &cli.out_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    match &cli.command {
        Command::GenHouses => cmd_gen_houses(&cfg, out),
        Command::TrainPerception => cmd_train_perception(&cfg, out),
        Command::TrainPolicy => cmd_train_policy(&cfg, out),
        Command::Eval { checkpoint } => cmd_eval(&cfg, out, checkpoint.as_deref()),
        Command::Analyze => cmd_analyze(&cfg, out),
        Command::Render { layout, pose } => cmd_render(&cfg, out, layout, *pose),
    }
}

const HOUSE_STREAM: usize = 0x4853;
const ATTEMPTS: usize = 64;

/// Generates house `index` of a run; a seed whose rooms do not fit is
/// replaced by the next derived seed, up to a fixed number of attempts.
pub fn generate_indexed(seed: u64, index: usize, params: &HouseParams) -> Result<HouseLayout> {
    let mut last = None;
    for attempt in 0..ATTEMPTS {
        let s = eval::episode_seed(seed, HOUSE_STREAM + index, attempt);
        match generate_house(s, params) {
            Ok(h) => return Ok(h),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt")).with_context(|| format!("house {index}: generation failed after {ATTEMPTS} seeds"))
}

pub fn load_houses(section: &HousesSection, seed: u64) -> Result<Vec<HouseLayout>> {
    if !section.files.is_empty() {
        return section
            .files
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read layout {}", p.display()))?;
                parse_layout(&text).with_context(|| format!("layout {}", p.display()))
            })
            .collect();
    }
    let params = section.params();
    (0..section.count).map(|i| generate_indexed(seed, i, &params)).collect()
}

#[derive(Debug, Default)]
pub struct PairSet {
    pub train: Vec<TaskPair>,
    pub test: Vec<TaskPair>,
    /// One line per (house, target) that could not be used.
    pub skipped: Vec<String>,
}

fn feasible_pairs(houses: &[Arc<HouseLayout>], house_ids: &[usize], cfg: &RunConfig, obs: &ObservationModel, skipped: &mut Vec<String>) -> Vec<(usize, u16)> {
    let mut ok = Vec::new();
    for &h in house_ids {
        for label in houses[h].target_labels() {
            let name = houses[h].label_name(label).unwrap_or("?").to_string();
            match TaskPair::new(0, h, houses[h].clone(), label, cfg.render.config(), obs.clone()) {
                Ok(p) if !p.start_poses().is_empty() => ok.push((h, label)),
                Ok(_) => skipped.push(format!("house {h} target {name}: no start pose sees the target without being a goal")),
                Err(e) => skipped.push(format!("house {h} target {name}: {e}")),
            }
        }
    }
    ok
}

/// Builds the train and held-out pairs for the configured setting.
pub fn build_pairs(cfg: &RunConfig, houses: &[HouseLayout], obs: &ObservationModel) -> Result<PairSet> {
    let houses: Vec<Arc<HouseLayout>> = houses.iter().cloned().map(Arc::new).collect();
    let mut set = PairSet::default();
    let all: Vec<usize> = (0..houses.len()).collect();
    let (train, test) = match cfg.setting {
        None => (feasible_pairs(&houses, &all, cfg, obs, &mut set.skipped), Vec::new()),
        Some(Setting::Objects) => {
            let mut p = feasible_pairs(&houses, &all[..1], cfg, obs, &mut set.skipped);
            let n_train = cfg.split.train_targets.min(p.len());
            let rest = p.split_off(n_train);
            (p, rest.into_iter().take(cfg.split.test_targets).collect())
        }
        Some(Setting::Environments) => {
            let n_train = cfg.split.train_houses.min(houses.len());
            let n_test = cfg.split.test_houses.min(houses.len() - n_train);
            (
                feasible_pairs(&houses, &all[..n_train], cfg, obs, &mut set.skipped),
                feasible_pairs(&houses, &all[n_train..n_train + n_test], cfg, obs, &mut set.skipped),
            )
        }
    };
    if train.is_empty() {
        bail!("no feasible training pair:\n  {}", set.skipped.join("\n  "));
    }
    let mut id = 0;
    for (list, out) in [(train, &mut set.train), (test, &mut set.test)] {
        for (h, label) in list {
            out.push(TaskPair::new(id, h, houses[h].clone(), label, cfg.render.config(), obs.clone())?);
            id += 1;
        }
    }
    Ok(set)
}

pub fn observation_model(cfg: &RunConfig, out: &Path) -> Result<ObservationModel> {
    let p = &cfg.policy;
    Ok(match p.observation {
        ObservationKind::GroundTruth => ObservationModel::GroundTruth {
            channel: p.second_channel.into(),
        },
        ObservationKind::Noisy => ObservationModel::Noisy {
            channel: p.second_channel.into(),
            flip_p: p.flip_p,
            depth_sigma: p.depth_sigma,
        },
        ObservationKind::Predicted => {
            let path = p.perception_checkpoint.clone().unwrap_or_else(|| out.join("perception.ckpt"));
            let file = fs::File::open(&path).with_context(|| format!("perception checkpoint {}: file not found", path.display()))?;
            let params = PerceptionParams::read_checkpoint(std::io::BufReader::new(file)).with_context(|| format!("perception checkpoint {}", path.display()))?;
            ObservationModel::Predicted {
                channel: p.second_channel.into(),
                params: Arc::new(params),
                cfg: cfg.perception.render_config(&cfg.render),
            }
        }
    })
}

fn write_file(path: &Path, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn report_skipped(skipped: &[String]) {
    for s in skipped {
        eprintln!("skipped: {s}");
    }
}

pub fn cmd_gen_houses(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (i, h) in load_houses(&cfg.houses, cfg.seed)?.iter().enumerate() {
        write_file(&out.join("houses").join(format!("house_{i:02}.txt")), h.to_text().as_bytes(), &mut written)?;
    }
    Ok(written)
}

pub fn cmd_train_perception(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let pc = &cfg.perception;
    let houses = load_houses(&cfg.houses, cfg.seed)?;
    let classes = houses.iter().map(HouseLayout::num_labels).max().unwrap_or(1);
    let frames = build_dataset(&houses, &pc.render_config(&cfg.render), pc.background_cap, pc.sample_cap, cfg.seed)?;
    let n_hold = ((frames.len() as f64) * pc.holdout_fraction).floor() as usize;
    let (holdout, train) = frames.split_at(n_hold);
    if train.is_empty() {
        bail!("perception dataset has no training frames after the hold-out split");
    }
    let (params, curve) = perception::train_perception(train, classes, &pc.train_config(cfg.seed))?;
    let mut written = Vec::new();
    let mut ckpt = Vec::new();
    params.write_checkpoint(&mut ckpt)?;
    write_file(&out.join("perception.ckpt"), &ckpt, &mut written)?;
    let mut loss = String::from("epoch,mean_loss\n");
    for (e, l) in curve.iter().enumerate() {
        let _ = writeln!(loss, "{},{}", e + 1, l);
    }
    write_file(&out.join("perception_loss.csv"), loss.as_bytes(), &mut written)?;

    let mut metrics = String::from("metric,value\n");
    let _ = writeln!(metrics, "classes,{classes}\ntrain_frames,{}\nholdout_frames,{}", train.len(), holdout.len());
    if !holdout.is_empty() {
        let (mut pred, mut gt, mut dp, mut dg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in holdout {
            let p = perception_forward(&params, &s.rgb, s.width, s.height)?;
            pred.extend(p.labels());
            gt.extend_from_slice(&s.gt_semantic);
            dp.extend(p.depth);
            dg.extend_from_slice(&s.gt_depth);
        }
        let _ = writeln!(metrics, "pixel_accuracy,{}", perception::pixel_accuracy(&pred, &gt));
        let _ = writeln!(metrics, "majority_frequency,{}", perception::majority_frequency(holdout, classes));
        let _ = writeln!(metrics, "mean_iou,{}", mean_iou(&pred, &gt, classes));
        let _ = writeln!(metrics, "depth_rmse,{}", perception::depth_rmse(&dp, &dg));
    }
    write_file(&out.join("perception_metrics.csv"), metrics.as_bytes(), &mut written)?;
    Ok(written)
}

fn pair_table(pairs: &PairSet) -> String {
    let mut s = String::from("pair,split,house,target\n");
    for (split, list) in [("train", &pairs.train), ("test", &pairs.test)] {
        for p in list {
            let _ = writeln!(s, "{},{split},{},{}", p.id, p.house_id, p.house.label_name(p.target_label).unwrap_or("?"));
        }
    }
    s
}

pub fn train_policy(cfg: &RunConfig, pairs: &PairSet, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    let tc = cfg.policy.train_config(cfg.seed);
    let save = |step: u64, p: &PolicyParams| -> std::io::Result<()> {
        let Some(dir) = checkpoint_dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let f = fs::File::create(dir.join(format!("policy_{step:09}.ckpt")))?;
        p.write_checkpoint(BufWriter::new(f))
    };
    Ok(train_with(&tc, &pairs.train, crate::policynet::init_params(cfg.seed), &save)?)
}

pub fn cmd_train_policy(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let houses = load_houses(&cfg.houses, cfg.seed)?;
    let pairs = build_pairs(cfg, &houses, &observation_model(cfg, out)?)?;
    report_skipped(&pairs.skipped);
    let outcome = train_policy(cfg, &pairs, (cfg.policy.checkpoint_every > 0).then(|| out.join("checkpoints")).as_deref())?;
    let mut written = Vec::new();
    let mut ckpt = Vec::new();
    outcome.params.write_checkpoint(&mut ckpt)?;
    write_file(&out.join("policy.ckpt"), &ckpt, &mut written)?;
    write_file(&out.join("train_log.csv"), outcome.log.to_csv().as_bytes(), &mut written)?;
    write_file(&out.join("train_summary.csv"), outcome.log.summaries_csv().as_bytes(), &mut written)?;
    write_file(&out.join("pairs.csv"), pair_table(&pairs).as_bytes(), &mut written)?;
    Ok(written)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let file = fs::File::open(path).with_context(|| format!("policy checkpoint {}: file not found", path.display()))?;
    PolicyParams::read_checkpoint(std::io::BufReader::new(file)).with_context(|| format!("policy checkpoint {}", path.display()))
}

fn gap_csv(policy: &[f64; eval::K], random: Option<&[f64; eval::K]>) -> String {
    let mut s = String::from("k,policy_gap,random_gap\n");
    for k in 0..eval::K {
        let r = random.map(|r| format!("{:.4}", r[k])).unwrap_or_else(|| "NA".into());
        let _ = writeln!(s, "{},{:.4},{r}", k + 1, policy[k]);
    }
    s
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.checkpoint.clone())
        .unwrap_or_else(|| out.join("policy.ckpt"));
    let params = load_policy(&path)?;
    let houses = load_houses(&cfg.houses, cfg.seed)?;
    let pairs = build_pairs(cfg, &houses, &observation_model(cfg, out)?)?;
    report_skipped(&pairs.skipped);
    let policy = NetworkPolicy {
        params,
        mode: cfg.eval.mode.into(),
    };
    let ec = &cfg.eval;
    let workers = cfg.policy.n_workers;
    let run = |p: &dyn eval::ActionSource, set: &[TaskPair]| -> Result<Evaluation> { Ok(evaluate_parallel(p, set, ec.n_starts, ec.cap, cfg.seed, workers)?) };
    let mut written = Vec::new();
    let trained = run(&policy, &pairs.train)?;
    write_file(&out.join("eval_train.csv"), trained.to_csv().as_bytes(), &mut written)?;
    let random_train = if ec.random_baseline {
        let r = run(&RandomPolicy, &pairs.train)?;
        write_file(&out.join("eval_random_train.csv"), r.to_csv().as_bytes(), &mut written)?;
        Some(r)
    } else {
        None
    };
    if !pairs.test.is_empty() {
        let held = run(&policy, &pairs.test)?;
        write_file(&out.join("eval_test.csv"), held.to_csv().as_bytes(), &mut written)?;
        let random_gap = match &random_train {
            Some(rt) => {
                let r = run(&RandomPolicy, &pairs.test)?;
                write_file(&out.join("eval_random_test.csv"), r.to_csv().as_bytes(), &mut written)?;
                Some(generalization_gap(&rt.aggregate, &r.aggregate))
            }
            None => None,
        };
        let gap = generalization_gap(&trained.aggregate, &held.aggregate);
        write_file(&out.join("gap.csv"), gap_csv(&gap, random_gap.as_ref()).as_bytes(), &mut written)?;
    }
    Ok(written)
}

pub fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let ac = &cfg.analysis;
    let houses = load_houses(&ac.houses, cfg.seed)?;
    let mut written = Vec::new();
    let mut summary = String::from("house,extractor,spearman\n");
    for ex in &ac.extractors {
        let name = match ex {
            Extractor::Depth10 => "depth10",
            Extractor::Gray10 => "gray10",
        };
        let mut total = 0.0;
        for (i, h) in houses.iter().enumerate() {
            let curve = build_curve(h, (*ex).into(), &cfg.render.config(), ac.max_steps, ac.sample_cap, cfg.seed.wrapping_add(i as u64))?;
            write_file(&out.join(format!("curve_{name}_house{i:02}.csv")), curve.to_csv().as_bytes(), &mut written)?;
            let _ = writeln!(summary, "{i},{name},{:.6}", curve.trend());
            total += curve.trend();
        }
        let _ = writeln!(summary, "mean,{name},{:.6}", total / houses.len().max(1) as f64);
    }
    write_file(&out.join("analysis_summary.csv"), summary.as_bytes(), &mut written)?;
    Ok(written)
}

fn pnm(magic: &str, w: usize, h: usize, max: u32, body: &[u8]) -> Vec<u8> {
    let mut v = format!("{magic}\n{w} {h}\n{max}\n").into_bytes();
    v.extend_from_slice(body);
    v
}

/// Label ids as 8-bit gray levels.
pub fn semantic_pgm(f: &RenderOutput) -> Vec<u8> {
    let body: Vec<u8> = f.semantic.iter().map(|&l| l.min(255) as u8).collect();
    pnm("P5", f.width, f.height, 255, &body)
}

/// Depth in millimetres, 16-bit big-endian.
pub fn depth_pgm(f: &RenderOutput) -> Vec<u8> {
    let body: Vec<u8> = f
        .depth
        .iter()
        .flat_map(|d| ((d * 1000.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes())
        .collect();
    pnm("P5", f.width, f.height, 65535, &body)
}

pub fn rgb_ppm(f: &RenderOutput) -> Vec<u8> {
    let body: Vec<u8> = f.rgb.iter().flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
    pnm("P6", f.width, f.height, 255, &body)
}

pub fn cmd_render(cfg: &RunConfig, out: &Path, layout: &Path, pose: Pose) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(layout).with_context(|| format!("cannot read layout {}", layout.display()))?;
    let house = parse_layout(&text).with_context(|| format!("layout {}", layout.display()))?;
    if !house.is_valid_pose(pose) {
        bail!("pose {pose} is not on a floor cell of {}", layout.display());
    }
    let frame = render(&house, pose, &cfg.render.config());
    let mut written = Vec::new();
    write_file(&out.join("semantic.pgm"), &semantic_pgm(&frame), &mut written)?;
    write_file(&out.join("depth.pgm"), &depth_pgm(&frame), &mut written)?;
    write_file(&out.join("rgb.ppm"), &rgb_ppm(&frame), &mut written)?;
    let mut legend = String::from("id,label,r,g,b\n");
    for (id, name) in house.labels().iter().enumerate() {
        let c = label_color(id as u16).map(|v| (v * 255.0).round() as u8);
        let _ = writeln!(legend, "{id},{name},{},{},{}", c[0], c[1], c[2]);
    }
    write_file(&out.join("labels.csv"), legend.as_bytes(), &mut written)?;
    Ok(written)
}

/// Process entry: prints written paths, returns the exit code.
pub fn main_with(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(paths) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for p in paths {
                let _ = writeln!(lock, "wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
