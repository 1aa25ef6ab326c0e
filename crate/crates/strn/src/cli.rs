use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use strn_core::metrics::evaluate;
use strn_core::model::{Ablation, ModelDims, StrnModel};
use strn_core::synth::{generate, SynthConfig};
use strn_core::tracker::{run_sequence, run_sequence_until, TrackerConfig};
use strn_core::training::{build_pairs, evaluate_pairs, prepare_sequence, train, PairConfig, TrainSchedule};

use crate::error::{Error, Result};
use crate::seqdir::{self, read_text, write_text};
use crate::{dataio, weights};

/// Seed used when neither a flag nor the config sets one.
pub const SEED_ENV: &str = "STRN_SEED";

#[derive(Debug, Parser)]
#[command(name = "strn", version, about = "Spatial-temporal relation tracker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence directory.
    Gen {
        /// Flat key=value generator config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on one or more sequence directories.
    Train {
        #[arg(long, value_delimiter = ',', required = true)]
        seq: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "A+L+S+T", value_parser = parse_ablation)]
        ablation: Ablation,
        /// Write the loss curve as `iter,loss` CSV.
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Track a sequence and write a MOTChallenge results file.
    Track {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a results file against a sequence's ground truth.
    Eval {
        /// Sequence directory, or a ground-truth file.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
    },
    /// Dump spatial and temporal attention weights at one frame.
    AttnDump {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        frame: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Feature file replacing the sequence's `feat/feat.txt`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Defaults to the ablation recorded in the weights file.
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    #[arg(long, default_value_t = 0.5)]
    pub match_threshold: f64,
    #[arg(long, default_value_t = 10)]
    pub tau1: usize,
    #[arg(long, default_value_t = 10)]
    pub tau2: u32,
    #[arg(long, default_value_t = 0.0)]
    pub min_confidence: f64,
    #[arg(long, default_value_t = 0.0)]
    pub min_birth_confidence: f64,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: strn_core::Error| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(summary.as_bytes());
            let _ = out.flush();
            0
        }
        Err(e) => {
            eprintln!("strn: error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

/// Runs one command and returns what it prints on success.
pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Gen { config, out } => gen(config.as_deref(), &out),
        Command::Train { seq, out, iters, seed, ablation, loss } => {
            cmd_train(&seq, &out, iters, resolve_seed(seed)?, ablation, loss.as_deref())
        }
        Command::Track { run, out } => cmd_track(&run, &out),
        Command::Eval { gt, results, iou_threshold } => cmd_eval(&gt, &results, iou_threshold),
        Command::AttnDump { run, frame, out } => cmd_attn_dump(&run, frame, &out),
    }
}

fn gen(config: Option<&Path>, out: &Path) -> Result<String> {
    let base = SynthConfig { seed: resolve_seed(None)?, ..SynthConfig::default() };
    let cfg = match config {
        Some(p) => seqdir::parse_gen_config(&read_text(p)?, base).map_err(|e| e.in_file(p))?,
        None => base,
    };
    let seq = generate(&cfg)?;
    seqdir::write_sequence(out, &seq)?;
    let gt: usize = seq.gt.values().map(Vec::len).sum();
    let det: usize = seq.detections.iter().map(|(_, d)| d.len()).sum();
    Ok(format!("wrote {}: {} frames, {gt} gt boxes, {det} detections\n", out.display(), seq.meta.length))
}

fn cmd_train(dirs: &[PathBuf], out: &Path, iters: usize, seed: u64, ablation: Ablation, loss: Option<&Path>) -> Result<String> {
    let mut seqs = Vec::with_capacity(dirs.len());
    let mut dim = None;
    for dir in dirs {
        let data = seqdir::read_sequence(dir, None)?;
        let gt = seqdir::read_gt(&seqdir::gt_path(dir))?;
        if *dim.get_or_insert(data.features.dim()) != data.features.dim() {
            return Err(strn_core::Error::Validation(format!("{}: feature dim differs from earlier sequences", dir.display())).into());
        }
        seqs.push(prepare_sequence(data.meta, &gt, &data.detections, &data.features, 0.5)?);
    }
    let pairs = build_pairs(&seqs, &PairConfig::default())?;
    let dims = ModelDims { app: dim.unwrap_or(ModelDims::default().app), ..ModelDims::default() };
    let model = StrnModel::init(&dims, ablation, seed)?;
    let schedule = TrainSchedule { iterations: iters, ..TrainSchedule::default() };
    let outcome = train(model, &seqs, &pairs, &schedule, seed)?;
    let (acc, auc) = evaluate_pairs(&outcome.model, &seqs, &pairs.sample(2000, seed))?;
    let mut store = outcome.model.into_store();
    store.set_meta("ablation", &ablation.to_string());
    store.set_meta("iterations", &iters.to_string());
    write_text(out, &weights::write_weights(&store))?;
    if let Some(path) = loss {
        let mut csv = String::from("iter,loss\n");
        for (i, l) in outcome.losses.iter().enumerate() {
            let _ = writeln!(csv, "{},{l}", i + 1);
        }
        write_text(path, &csv)?;
    }
    let last = outcome.losses.last().map_or(String::from("n/a"), |l| format!("{l:.6}"));
    Ok(format!(
        "trained {ablation} for {iters} iterations on {} positive / {} negative pairs; final loss {last}; pair accuracy {acc:.4}, AUC {auc:.4}\n",
        pairs.positives(),
        pairs.negatives()
    ))
}

fn load_model(run: &RunArgs) -> Result<StrnModel> {
    let store = weights::parse_weights(&read_text(&run.weights)?).map_err(|e| e.in_file(&run.weights))?;
    let ablation = match (run.ablation, store.meta_value("ablation")) {
        (Some(a), _) => a,
        (None, Some(a)) => a.parse().map_err(|e: strn_core::Error| Error::from(e).in_file(&run.weights))?,
        (None, None) => Ablation::default(),
    };
    StrnModel::new(store, ablation).map_err(|e| Error::from(e).in_file(&run.weights))
}

fn tracker_config(run: &RunArgs) -> TrackerConfig {
    TrackerConfig {
        tau1: run.tau1,
        tau2: run.tau2,
        match_threshold: run.match_threshold,
        min_confidence: run.min_confidence,
        min_birth_confidence: run.min_birth_confidence,
    }
}

fn load_run(run: &RunArgs) -> Result<(StrnModel, seqdir::SequenceData, TrackerConfig)> {
    let config = tracker_config(run);
    config.validate()?;
    let model = load_model(run)?;
    let data = seqdir::read_sequence(&run.seq, run.features.as_deref())?;
    if model.dims().app != data.features.dim() {
        return Err(strn_core::Error::Validation(format!(
            "weights expect {}-d features, sequence has {}-d",
            model.dims().app,
            data.features.dim()
        ))
        .into());
    }
    Ok((model, data, config))
}

fn cmd_track(run: &RunArgs, out: &Path) -> Result<String> {
    let (model, data, config) = load_run(run)?;
    let result = run_sequence(&data.detections, &data.features, &model, &data.meta, &config)?;
    write_text(out, &dataio::write_results(&result))?;
    let ids: std::collections::BTreeSet<u64> = result.boxes.iter().map(|b| b.id).collect();
    let mut summary = format!(
        "tracked {} with {}: {} boxes, {} tracks, {} pruned\n",
        data.meta.name,
        model.ablation(),
        result.boxes.len(),
        ids.len(),
        result.pruned_ids.len()
    );
    if data.skipped > 0 {
        let _ = writeln!(summary, "warning: skipped {} detection rows with non-positive size", data.skipped);
    }
    Ok(summary)
}

fn cmd_eval(gt: &Path, results: &Path, iou_threshold: f64) -> Result<String> {
    let gt_file = if gt.is_dir() { seqdir::gt_path(gt) } else { gt.to_path_buf() };
    let truth = seqdir::read_gt(&gt_file)?;
    let hyp = seqdir::read_gt(results)?;
    let report = evaluate(&truth, &hyp, iou_threshold)?;
    Ok(format!("{}\n{}", report.to_key_values(), report.to_table()))
}

fn cmd_attn_dump(run: &RunArgs, frame: u32, out: &Path) -> Result<String> {
    let (model, data, config) = load_run(run)?;
    if frame == 0 || frame > data.meta.length.max(data.detections.last().map_or(0, |f| f.0)) {
        return Err(strn_core::Error::InvalidArgument(format!("frame {frame} is outside the sequence")).into());
    }
    let (state, diag) = run_sequence_until(&data.detections, &data.features, &model, &data.meta, &config, Some(frame))?;
    let mut text = format!("STRN-ATTN v1 frame={frame} ablation={}\n", model.ablation());
    let dets = data.detections.iter().find(|(f, _)| *f == frame).map_or(&[][..], |(_, d)| d.as_slice());
    if let Some(diag) = diag.filter(|d| d.frame == frame) {
        for (k, &index) in diag.kept.iter().enumerate() {
            let b = dets[index].bbox;
            let _ = writeln!(text, "object,{k},{index},{},{},{},{}", b.x, b.y, b.w, b.h);
        }
        if let Some(sp) = &diag.spatial {
            for (h, att) in sp.attention.iter().enumerate() {
                for r in 0..att.rows() {
                    let _ = writeln!(text, "attn,{h},{r},{}", join(att.row(r)));
                }
            }
            for r in 0..sp.gates.rows() {
                let _ = writeln!(text, "gate,{r},{}", join(sp.gates.row(r)));
            }
        }
        let scores = &diag.scores;
        for r in 0..scores.rows() {
            let row: Vec<f64> = (0..scores.cols()).map(|c| scores.get(r, c)).collect();
            let _ = writeln!(text, "score,{},{}", scores.tracklet_ids[r], join(&row));
        }
    }
    for t in state.tracklets().iter().filter(|t| t.is_active()) {
        let weights = model.temporal_weights(t.window())?;
        for (f, w) in t.window().frames().zip(weights) {
            let _ = writeln!(text, "temporal,{},{f},{w}", t.id());
        }
    }
    write_text(out, &text)?;
    Ok(format!("wrote attention at frame {frame} to {}\n", out.display()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}
