use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddl_vad::checkpoint::Checkpoint;
use ddl_vad::clipio::{load_labels, DatasetManifest, Split};
use ddl_vad::config::RunConfigFile;
use ddl_vad::model::Variant;
use ddl_vad::scoring::{self, EvalReport, SceneMap, ScoringConfig};
use ddl_vad::training::{self, Mode, TrainConfig, TrainState};
use ddl_vad::{par, report, synth, Error, Result};

#[derive(Parser)]
#[command(name = "ddl-vad", version, about = "Video anomaly detection with dynamic distinction learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score the test split with a trained checkpoint.
    Score(ScoreArgs),
    /// Compute frame-level AUCs from scores.
    Eval(EvalArgs),
    /// Train and evaluate every mode for both architectures.
    Ablate(AblateArgs),
    /// Render panels, the sigma plot and a summary for a run.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ddl,
    Sdl,
    None,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ddl => Mode::Ddl,
            ModeArg::Sdl => Mode::Sdl,
            ModeArg::None => Mode::None,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run config, or a `run_config.json` echo from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, default_value_t = 17)]
    median: usize,
    #[arg(long, value_enum, default_value = "on")]
    normalize: OnOff,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON object mapping scene names to lists of video ids.
    #[arg(long)]
    scene_map: Option<PathBuf>,
    /// Defaults to `<scores>/eval.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::load(p),
        None => Ok(RunConfigFile::default()),
    }
}

fn threads() -> Result<Option<usize>> {
    match std::env::var("DDL_VAD_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("DDL_VAD_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.seed());
    let manifest = synth::synth_dataset(&cfg.synth, seed, &a.out)?;
    println!("{}", manifest.root.join(ddl_vad::clipio::MANIFEST_FILE).display());
    Ok(())
}

/// A `run_config.json` echo from an earlier run, with data and output paths replaced.
fn load_echo(path: &Path, data: PathBuf, out: PathBuf) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(TrainConfig { data, out, ..cfg })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) if p.extension().is_some_and(|e| e == "json") => load_echo(p, a.data, a.out)?,
        other => load_config(other.as_deref())?.train_config(a.data, a.out),
    };
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    let state = match &a.resume {
        Some(p) => TrainState::from_checkpoint(Checkpoint::load(p)?)?,
        None => TrainState::new(&cfg)?,
    };
    let result = par::with_threads(threads()?, || training::fit_from(&cfg, state))?;
    println!("trained {} steps ({:?})", result.state.step, cfg.mode);
    if let Some(s) = result.state.sigma() {
        println!("final sigma {s:.6}");
    }
    println!("{}", training::final_checkpoint(&cfg.out).display());
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let cfg = ScoringConfig { patch: a.patch, median: a.median, normalize: matches!(a.normalize, OnOff::On) };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let threads = threads()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let videos = manifest.load_split(Split::Test)?;
    let scores = par::with_threads(threads, || scoring::score_videos(&ck.model, &videos, &cfg))?;
    scoring::write_scores(&a.out, &scores, &cfg)?;
    println!("scored {} videos into {}", scores.len(), a.out.display());
    Ok(())
}

fn evaluate_dir(scores_dir: &Path, data: &Path, scene_map: Option<&Path>) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(data)?;
    let cfg_path = scores_dir.join(scoring::SCORING_FILE);
    let normalize = match std::fs::read_to_string(&cfg_path) {
        Ok(text) => serde_json::from_str::<ScoringConfig>(&text)
            .map_err(|e| Error::Ingest(format!("{}: {e}", cfg_path.display())))?
            .normalize,
        Err(_) => true,
    };
    let mut scores = Vec::new();
    let mut labels = BTreeMap::new();
    for entry in manifest.videos(Split::Test) {
        labels.insert(entry.id.clone(), load_labels(&manifest.root.join(&entry.labels), entry.frames)?.labels);
        scores.push(scoring::read_scores(scores_dir, &entry.id)?);
    }
    let scenes: Option<SceneMap> = scene_map
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })
        .transpose()?;
    let report = scoring::evaluate(&scores, &labels, normalize, scenes.as_ref())?;
    for id in &report.skipped {
        eprintln!("warning: video {id} has a single label class; left out of per-video AUC");
    }
    Ok(report)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let report = evaluate_dir(&a.scores, &a.data, a.scene_map.as_deref())?;
    let out = a.out.unwrap_or_else(|| a.scores.join("eval.json"));
    write_json(&out, &report)?;
    println!("dataset AUC {:.4}", report.dataset_auc);
    if let Some(m) = report.scene_median_auc {
        println!("scene-median AUC {m:.4}");
    }
    Ok(())
}

const ABLATION_FILE: &str = "ablation_table.csv";

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let manifest = DatasetManifest::load(&a.data)?;
    let threads = threads()?;
    let modes = [Mode::None, Mode::Sdl, Mode::Ddl];
    let mut table = format!("variant,{}\n", modes.map(|m| m.label()).join(","));
    for variant in [Variant::UnetBaseline, Variant::C3dsu] {
        let vname = serde_json::to_value(variant).expect("variant name");
        let vname = vname.as_str().expect("string variant");
        let mut row = vec![vname.to_string()];
        for mode in modes {
            let run_dir = a.out.join(vname).join(format!("{mode:?}").to_lowercase());
            let mut cfg = file.train_config(a.data.clone(), run_dir.join("run"));
            cfg.mode = mode;
            cfg.model.variant = variant;
            let result = training::fit(&cfg)?;
            let scores = par::with_threads(threads, || {
                let videos = manifest.load_split(Split::Test)?;
                scoring::score_videos(&result.state.model, &videos, &file.scoring)
            })?;
            let scores_dir = run_dir.join("scores");
            scoring::write_scores(&scores_dir, &scores, &file.scoring)?;
            let report = evaluate_dir(&scores_dir, &a.data, None)?;
            write_json(&scores_dir.join("eval.json"), &report)?;
            println!("{vname} {}: AUC {:.4}", mode.label(), report.dataset_auc);
            row.push(report.dataset_auc.to_string());
        }
        table.push_str(&row.join(","));
        table.push('\n');
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join(ABLATION_FILE);
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let out = report::report(&a.run, &a.out)?;
    println!("{} panels", out.panels.len());
    if let Some(p) = &out.sigma_plot {
        println!("{}", p.display());
    }
    println!("{}", out.summary.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
