//! Command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{self, CheckpointInfo};
use crate::config::{RunConfig, TrainConfig};
use crate::data::{load_sequences, preprocess, save_sequences, synthesize, SynthParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, infer_video, write_report, EvalReport};
use crate::graph::SkeletonGraph;
use crate::model::Model;
use crate::oamb::{extract_instances, DetectionInstance};
use crate::plot;
use crate::trainer::{prepare, EpochMetrics, Trainer};

pub const SEED_ENV: &str = "WOGMA_SEED";

#[derive(Parser, Debug)]
#[command(name = "wogma", version, about = "Weakly supervised online action detection on skeleton sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic JSONL dataset.
    GenData(GenDataArgs),
    /// Train a model; writes model.ckpt and metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes report.json and CSV tables.
    Eval(EvalArgs),
    /// Score a dataset or a clip stream from standard input.
    Detect(DetectArgs),
    /// Render SVG charts from an evaluation report.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long)]
    pub id_prefix: Option<String>,
    /// JSON file with generator parameters; flags take precedence.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the desk-scale preset (600 frames, 128 hidden units)
    /// instead of the full-scale defaults when no config file is given.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub ablate_pseudo: bool,
    #[arg(long)]
    pub ablate_local: bool,
    #[arg(long)]
    pub ablate_longrange: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL dataset to score. Without it, clips are read from standard
    /// input, one JSON array of τ already-normalised frames per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where to write the detected instances as JSON.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Timeline charts are drawn for at most this many videos.
    #[arg(long, default_value_t = 8)]
    pub max_videos: usize,
}

/// Seed from the flag, then the config file, then the environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(0),
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn load_run_config(path: Option<&Path>, desk: bool) -> Result<(RunConfig, bool)> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            if desk {
                cfg.train = TrainConfig::desk();
            }
            Ok((cfg, false))
        }
    }
}

fn load_graph(cfg: &RunConfig) -> Result<SkeletonGraph> {
    match &cfg.edges {
        Some(p) => SkeletonGraph::from_edge_file(p)
            .map_err(|e| Error::config(format!("{}: {e}", p.display()))),
        None => Ok(SkeletonGraph::default_skeleton()),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::config(format!("no {what} given (flag or config file)")))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut params = match &a.params {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => SynthParams::default(),
    };
    params.seed = resolve_seed(a.seed, a.params.as_ref().map(|_| params.seed), env_seed().as_deref())?;
    if let Some(n) = a.n_videos {
        params.n_videos = n;
    }
    if let Some(t) = a.frames {
        params.frames = t;
    }
    if let Some(f) = a.positive_fraction {
        params.positive_fraction = f;
    }
    if let Some(p) = a.id_prefix {
        params.id_prefix = p;
    }
    let data = synthesize(&params)?;
    save_sequences(&a.out, &data)
}

fn write_metrics_header(path: &Path) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", EpochMetrics::CSV_HEADER)?;
    w.flush()?;
    Ok(w)
}

fn train(a: TrainArgs, err: &mut dyn Write) -> Result<()> {
    let (mut cfg, seed_given) = load_run_config(a.config.as_deref(), a.desk)?;
    let file_seed = seed_given.then_some(cfg.train.seed);
    cfg.train.seed = resolve_seed(a.seed, file_seed, env_seed().as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(t) = a.threads {
        cfg.train.threads = t;
    }
    cfg.train.ablate_pseudo |= a.ablate_pseudo;
    cfg.train.ablate_local |= a.ablate_local;
    cfg.train.ablate_longrange |= a.ablate_longrange;
    if a.train_data.is_some() {
        cfg.train_data = a.train_data;
    }
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    cfg.validate()?;

    let graph = load_graph(&cfg)?;
    let data = load_sequences(require(&cfg.train_data, "training data")?, graph.num_joints())?;
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let seed = cfg.train.seed;
    let model = Model::new(cfg.train.clone(), graph, seed)?;
    let videos = prepare(&model, &data)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = cfg.out_dir.join("model.ckpt");
    let mut metrics = write_metrics_header(&cfg.out_dir.join("metrics.csv"))?;
    let mut trainer = Trainer::new(model, seed);
    trainer.fit(&videos, cfg.train.epochs, |t, m| {
        writeln!(metrics, "{}", m.csv_row())?;
        metrics.flush()?;
        writeln!(
            err,
            "epoch {:>3}  mil_p {:.4}  fml {:.4}  mil_o {:.4}  acc {:.3}",
            m.epoch, m.l_mil_p, m.l_fml, m.l_mil_o, m.train_acc
        )?;
        checkpoint::save(&ckpt, &t.model, CheckpointInfo { epoch: t.epoch, seed })
    })?;
    if cfg.train.epochs == 0 {
        checkpoint::save(&ckpt, &trainer.model, CheckpointInfo { epoch: 0, seed })?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (mut cfg, _) = load_run_config(a.config.as_deref(), false)?;
    if a.test_data.is_some() {
        cfg.test_data = a.test_data;
    }
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    if let Some(t) = a.threshold {
        cfg.instance_threshold = t;
    }
    cfg.validate()?;
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let data = load_sequences(require(&cfg.test_data, "test data")?, model.graph().num_joints())?;
    let report = evaluate(&model, &data, &cfg.eval_fractions, cfg.instance_threshold)?;
    write_report(&report, &cfg.out_dir)
}

#[derive(Serialize)]
struct ClipLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    video_id: Option<&'a str>,
    clip: usize,
    start_frame: usize,
    end_frame: usize,
    probs: &'a [f64],
}

#[derive(Serialize)]
struct VideoInstances {
    video_id: String,
    instances: Vec<DetectionInstance>,
}

fn detect(a: DetectArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::config("threshold must lie in (0, 1)"));
    }
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let window = model.windowing();
    let mut all = Vec::new();
    match &a.input {
        Some(path) => {
            let data = load_sequences(path, model.graph().num_joints())?;
            for seq in &data {
                let processed = preprocess(seq, model.config().max_frames)?;
                let clips = model.clips(&processed.frames)?;
                let mut state = model.start_stream();
                for (i, clip) in clips.data().chunks(model.clip_len()).enumerate() {
                    let probs = model.push_clip(&mut state, clip)?;
                    let (s, e) = window.frame_range(i);
                    let line = ClipLine {
                        video_id: Some(&seq.video_id),
                        clip: i,
                        start_frame: s,
                        end_frame: e,
                        probs: &probs,
                    };
                    serde_json::to_writer(&mut *out, &line)?;
                    out.write_all(b"\n")?;
                }
                out.flush()?;
                let result = infer_video(&model, seq, a.threshold)?;
                all.push(VideoInstances {
                    video_id: seq.video_id.clone(),
                    instances: result.instances,
                });
            }
        }
        None => {
            let n = model.graph().num_joints();
            let tau = model.config().tau;
            let mut state = model.start_stream();
            let mut history: Vec<Vec<f64>> = Vec::new();
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                if input.read_line(&mut line)? == 0 {
                    break;
                }
                lineno += 1;
                if line.trim().is_empty() {
                    continue;
                }
                let frames: Vec<Vec<[f64; 3]>> = serde_json::from_str(&line).map_err(|e| Error::Line {
                    line: lineno,
                    msg: e.to_string(),
                })?;
                if frames.len() != tau || frames.iter().any(|f| f.len() != n) {
                    return Err(Error::Line {
                        line: lineno,
                        msg: format!("clip must hold {tau} frames of {n} joints"),
                    });
                }
                let flat: Vec<f64> = frames.iter().flatten().flatten().copied().collect();
                let probs = model.push_clip(&mut state, &flat)?;
                let i = state.clips_seen - 1;
                let (s, e) = window.frame_range(i);
                let rec = ClipLine {
                    video_id: None,
                    clip: i,
                    start_frame: s,
                    end_frame: e,
                    probs: &probs,
                };
                serde_json::to_writer(&mut *out, &rec)?;
                out.write_all(b"\n")?;
                out.flush()?;
                history.push(probs);
            }
            let mut instances = Vec::new();
            for c in 1..=model.config().n_c {
                let col: Vec<f64> = history.iter().map(|p| p[c]).collect();
                instances.extend(extract_instances(&col, c, a.threshold, window));
            }
            all.push(VideoInstances {
                video_id: "stdin".into(),
                instances,
            });
        }
    }
    if let Some(p) = &a.instances {
        fs::write(p, serde_json::to_string_pretty(&all)?)?;
    }
    Ok(())
}

fn plot_cmd(a: PlotArgs, err: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.report)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", a.report.display())))?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", a.report.display())))?;
    fs::create_dir_all(&a.out_dir)?;
    if report.early_curve.is_empty() {
        writeln!(err, "warning: report has no early-observation curve; skipping")?;
    } else {
        fs::write(a.out_dir.join("auc_curve.svg"), plot::auc_curve_svg(&report.early_curve))?;
    }
    if report.videos.is_empty() {
        writeln!(err, "warning: report has no timelines; skipping")?;
    }
    for v in report.videos.iter().take(a.max_videos) {
        let name: String = v
            .video_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        fs::write(a.out_dir.join(format!("timeline_{name}.svg")), plot::timeline_svg(v, 1))?;
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, err),
        Command::Eval(a) => eval(a),
        Command::Detect(a) => detect(a, input, out),
        Command::Plot(a) => plot_cmd(a, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut err = io::stderr();
    run(std::env::args_os(), &mut input, &mut out, &mut err)
}
