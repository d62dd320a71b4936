use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use trajcast::data::{load_dataset, save_csv, save_jsonl, CsvOptions, Manifest, ModeMix, MotionMode, SyntheticSpec};
use trajcast::ensemble::{read_predictions, write_predictions, EnsembleBank, PredictionRecord};
use trajcast::harness::{
    evaluate, jitter, pseudo_targets, run_grid, train, write_grid_csv, write_report, GridAxis, TrainConfig, TrainInputs, SEED_ENV,
};
use trajcast::predictor::{Checkpoint, Predictor};
use trajcast::scenario::Scenario;
use trajcast::{Error, Result};

#[derive(Parser)]
#[command(name = "trajcast", version, about = "Multi-modal trajectory forecasting with consistency training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Manifest (.json), scenario file (.jsonl, .csv) or directory of CSV files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: Split,
    /// Skip unreadable CSV files instead of failing.
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 200)]
        val_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mode weights such as `junction=1` or `straight=0.5,junction=0.5`.
        #[arg(long)]
        modes: Option<String>,
        #[arg(long, default_value_t = 5.0)]
        speed_min: f64,
        #[arg(long, default_value_t = 12.0)]
        speed_max: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training data; a manifest's val split is used for the jitter probe.
        #[arg(long)]
        data: PathBuf,
        /// Pseudo-target file, required when `use_mpt = true`.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compute the metric report of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-scenario predictions as JSON lines.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Temporal jitter of a checkpoint between windows `shift` frames apart.
    Jitter {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1)]
        shift: usize,
    },
    /// Dump predictions of several checkpoints for clustering.
    EnsembleDump {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster ensemble predictions into a pseudo-target file.
    Cluster {
        #[arg(long = "dump", required = true)]
        dumps: Vec<PathBuf>,
        #[arg(short = 'j', long, default_value_t = 6)]
        targets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = trajcast::ensemble::DEFAULT_MAX_ITER)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one ablation grid, writing a CSV table.
    Grid {
        #[arg(long)]
        axis: GridAxis,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Manifest with train and val splits.
        #[arg(long)]
        data: PathBuf,
        /// Prediction dumps to cluster for pseudo-target rows; members are trained when absent.
        #[arg(long = "dump")]
        dumps: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render loss and jitter curves from a training log as SVG.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_modes(text: &str) -> Result<ModeMix> {
    let mut mix = ModeMix::only(MotionMode::Straight);
    mix.straight = 0.0;
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, w) = part.split_once('=').unwrap_or((part, "1"));
        let mode: MotionMode = serde_json::from_value(serde_json::Value::String(name.trim().to_string()))
            .map_err(|_| Error::Config(format!("unknown motion mode {name:?}")))?;
        *mix.weight_mut(mode) = w.trim().parse().map_err(|_| Error::Config(format!("bad weight in {part:?}")))?;
    }
    let total: f64 = MotionMode::ALL.iter().map(|m| mix.weight(*m)).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Config("mode weights must have a positive sum".into()));
    }
    for m in MotionMode::ALL {
        *mix.weight_mut(m) /= total;
    }
    Ok(mix)
}

fn load_split(args: &DataArgs, predictor: &Predictor) -> Result<Vec<Scenario>> {
    let cfg = predictor.config();
    let opts = CsvOptions { history_len: cfg.history_len, future_len: cfg.future_len, skip_invalid: args.skip_invalid };
    let ds = load_dataset(&args.data, &opts)?;
    let scenarios = match args.split {
        Split::Train => ds.train,
        Split::Val if args.data.extension().is_some_and(|e| e == "json") => ds.val,
        Split::Val => ds.train,
    };
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(scenarios)
}

fn load_predictor(path: &Path) -> Result<Predictor> {
    Checkpoint::load(path)?.predictor()
}

fn write_split(dir: &Path, name: &str, scenarios: &[Scenario], format: Format) -> Result<PathBuf> {
    match format {
        Format::Jsonl => {
            let file = PathBuf::from(format!("{name}.jsonl"));
            save_jsonl(dir.join(&file), scenarios)?;
            Ok(file)
        }
        Format::Csv => {
            let sub = dir.join(name);
            std::fs::create_dir_all(&sub)?;
            for s in scenarios {
                save_csv(sub.join(format!("{}.csv", s.scenario_id)), s)?;
            }
            Ok(PathBuf::from(name))
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, count, val_count, seed, modes, speed_min, speed_max, noise, format } => {
            let seed = env_seed()?.unwrap_or(seed);
            let mode_mix = modes.as_deref().map(parse_modes).transpose()?.unwrap_or_default();
            let spec = SyntheticSpec { scenario_count: count, mode_mix, speed_min, speed_max, noise_sigma: noise, seed, ..Default::default() };
            let train_set = trajcast::data::generate(&spec)?;
            let val_set = trajcast::data::generate(&SyntheticSpec { scenario_count: val_count, seed: seed.wrapping_add(1 << 32), ..spec })?;
            std::fs::create_dir_all(&out)?;
            let manifest = Manifest {
                train: vec![write_split(&out, "train", &train_set, format)?],
                val: if val_count > 0 { vec![write_split(&out, "val", &val_set, format)?] } else { vec![] },
            };
            manifest.save(out.join("manifest.json"))?;
            log::info!("wrote {} train and {} val scenarios to {}", train_set.len(), val_set.len(), out.display());
        }
        Command::Train { cfg, data, pseudo, out, log } => {
            let cfg = load_config(&cfg)?;
            let opts = CsvOptions { history_len: cfg.history_len, future_len: cfg.future_len, skip_invalid: false };
            let ds = load_dataset(&data, &opts)?;
            let pseudo = match (&pseudo, cfg.use_mpt) {
                (Some(p), _) => Some(trajcast::ensemble::read_pseudo_targets(p)?),
                (None, true) => return Err(Error::Config("use_mpt = true needs --pseudo".into())),
                (None, false) => None,
            };
            let mut log_file = log.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
            let outcome = train(
                &cfg,
                TrainInputs {
                    scenarios: &ds.train,
                    pseudo: pseudo.as_ref(),
                    probe: &ds.val,
                    log: log_file.as_mut().map(|w| w as &mut dyn Write),
                },
            )?;
            if let Some(w) = log_file.as_mut() {
                w.flush()?;
            }
            outcome.checkpoint(cfg.seed).save(&out)?;
        }
        Command::Evaluate { checkpoint, data, report, dump } => {
            let predictor = load_predictor(&checkpoint)?;
            let scenarios = load_split(&data, &predictor)?;
            let tag = checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            let ev = evaluate(&predictor, &scenarios, &tag)?;
            if let Some(p) = dump {
                write_predictions(p, &ev.predictions)?;
            }
            match report {
                Some(p) => std::fs::write(p, serde_json::to_string_pretty(&ev.report)? + "\n")?,
                None => print_json(&ev.report)?,
            }
        }
        Command::Jitter { checkpoint, data, shift } => {
            let predictor = load_predictor(&checkpoint)?;
            let scenarios = load_split(&data, &predictor)?;
            let value = jitter(&predictor, &scenarios, shift)?;
            print_json(&serde_json::json!({ "shift": shift, "jitter": value, "n_scenarios": scenarios.len() }))?;
        }
        Command::EnsembleDump { checkpoints, data, out } => {
            let mut records: Vec<PredictionRecord> = Vec::new();
            for (i, path) in checkpoints.iter().enumerate() {
                let predictor = load_predictor(path)?;
                let scenarios = load_split(&data, &predictor)?;
                let tag = format!("{i}:{}", path.display());
                records.extend(trajcast::harness::predict_all(&predictor, &scenarios, &tag)?);
            }
            write_predictions(out, &records)?;
        }
        Command::Cluster { dumps, targets, seed, max_iter, out } => {
            let seed = env_seed()?.unwrap_or(seed);
            let mut bank = EnsembleBank::new();
            for d in &dumps {
                for r in read_predictions(d)? {
                    bank.add_record(r)?;
                }
            }
            let pseudo = pseudo_targets(&bank, targets, seed, max_iter)?;
            trajcast::ensemble::write_pseudo_targets(out, &pseudo.into_values().collect::<Vec<_>>())?;
        }
        Command::Grid { axis, cfg, data, dumps, out } => {
            let cfg = load_config(&cfg)?;
            let opts = CsvOptions { history_len: cfg.history_len, future_len: cfg.future_len, skip_invalid: false };
            let ds = load_dataset(&data, &opts)?;
            let eval_set = if ds.val.is_empty() { &ds.train } else { &ds.val };
            let bank = if dumps.is_empty() {
                None
            } else {
                let mut bank = EnsembleBank::new();
                for d in &dumps {
                    for r in read_predictions(d)? {
                        bank.add_record(r)?;
                    }
                }
                Some(bank)
            };
            let results = run_grid(axis, &cfg, &ds.train, eval_set, bank.as_ref())?;
            write_grid_csv(File::create(out)?, &results)?;
        }
        Command::Report { log, out } => write_report(log, out)?,
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
