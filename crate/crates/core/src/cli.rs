//! Command-line entry point. Every command writes `run_manifest.json` into its
//! output directory; `replay` reruns a command from such a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dsp::wav::WavEncoding;
use crate::error::{Error, Result};
use crate::eval::{
    aggregated_metrics, format_table, write_predictions_csv, MetricsReport, ReportRow,
};
use crate::gate::Scheme;
use crate::pipeline::{
    cross_validate, dp_sweep, eval_noise, extract_features, score, write_sweep_csv, Dataset,
    EncoderChoice, Estimator, FeatureTable, HeldOut, PlanSource, WavSource,
};
use crate::store;
use crate::synth::{load_scenario_dir, write_scenario_dir, ScenarioPlan};

pub const FEATURES_FILE: &str = "features.bin";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ocpf";

#[derive(Debug, Parser)]
#[command(
    name = "occusense",
    version,
    about = "Occupancy estimation from non-speech audio"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// TOML file of flat dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Threads for cross-validation folds.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Configuration override `key=value`; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic scenario directory.
    Synth {
        /// Skip the multichannel WAVE file.
        #[arg(long)]
        no_audio: bool,
    },
    /// Train an estimator on a scenario.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a checkpoint on the held-out folds of a scenario.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Aggregation windows in seconds, comma separated.
        #[arg(long, value_delimiter = ',')]
        windows: Vec<u64>,
        /// Seed inference noise. Voids the privacy guarantee.
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Utility across privacy budgets.
    DpSweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Evaluate this clipped checkpoint under inference noise instead of
        /// training one model per budget.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Leave-one-fold-out cross-validation.
    Crossval {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Envelope-encrypt every file of a directory.
    Seal {
        #[arg(long)]
        input: PathBuf,
        /// Recipient public key (PEM).
        #[arg(long)]
        public_key: PathBuf,
    },
    /// Decrypt a directory of sealed records.
    Unseal {
        #[arg(long)]
        input: PathBuf,
        /// Private key (PEM).
        #[arg(long)]
        private_key: PathBuf,
    },
    /// Create an RSA key pair for sealing.
    Keygen {
        #[arg(long, default_value_t = store::DEFAULT_KEY_BITS)]
        bits: usize,
    },
    /// Rerun the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

/// Shortcuts for common model settings; each maps onto a configuration key.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub scheme: Option<u8>,
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.scheme {
            cfg.model.windows.scheme = Scheme::from_number(s)?;
        }
        if let Some(e) = &self.encoder {
            cfg.model.encoder = e.parse::<EncoderChoice>()?;
        }
        if self.clip.is_some() {
            cfg.model.clip = self.clip;
        }
        if self.epsilon.is_some() {
            cfg.model.epsilon = self.epsilon;
        }
        if let Some(e) = self.epochs {
            cfg.model.epochs = e;
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub global: GlobalArgs,
    pub command: Command,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.global, cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(global: GlobalArgs, command: Command) -> Result<()> {
    if let Command::Replay { manifest } = &command {
        let m: RunManifest = serde_json::from_slice(&fs::read(manifest)?)?;
        let mut g = m.global;
        g.out = global.out;
        g.workers = global.workers;
        return execute(&g, &m.command, m.config);
    }
    let mut cfg = RunConfig::resolve(global.config.as_deref(), &global.set)?;
    if let Some(s) = global.seed {
        cfg.apply_seed(s);
    }
    match &command {
        Command::Train { model, .. }
        | Command::DpSweep { model, .. }
        | Command::Crossval { model, .. } => model.apply(&mut cfg)?,
        _ => {}
    }
    execute(&global, &command, cfg)
}

fn execute(global: &GlobalArgs, command: &Command, cfg: RunConfig) -> Result<()> {
    let out = &global.out;
    fs::create_dir_all(out)?;
    let (inputs, outputs) = match command {
        Command::Synth { no_audio } => cmd_synth(out, &cfg, *no_audio)?,
        Command::Train { scenario, .. } => cmd_train(out, &cfg, scenario)?,
        Command::Eval {
            checkpoint,
            scenario,
            windows,
            noise_seed,
        } => cmd_eval(
            out,
            &cfg,
            checkpoint,
            scenario,
            windows,
            noise_seed.or(cfg.eval.noise_seed),
        )?,
        Command::DpSweep {
            scenario,
            checkpoint,
            epsilons,
            ..
        } => cmd_dp_sweep(out, &cfg, scenario, checkpoint.as_deref(), epsilons)?,
        Command::Crossval {
            scenario, folds, ..
        } => cmd_crossval(out, &cfg, scenario, *folds, global.workers)?,
        Command::Seal { input, public_key } => cmd_seal(out, input, public_key)?,
        Command::Unseal { input, private_key } => cmd_unseal(out, input, private_key)?,
        Command::Keygen { bits } => cmd_keygen(out, *bits)?,
        Command::Replay { .. } => {
            return Err(Error::config("a manifest cannot replay another replay"))
        }
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        global: global.clone(),
        command: command.clone(),
        seed: cfg.model.seed,
        config: cfg,
        inputs,
        outputs,
    };
    fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

type Io = (Vec<InputHash>, Vec<String>);

fn cmd_synth(out: &Path, cfg: &RunConfig, no_audio: bool) -> Result<Io> {
    let plan = ScenarioPlan::new(cfg.synth.clone())?;
    write_scenario_dir(out, &plan, (!no_audio).then_some(WavEncoding::Int16))?;
    let feats = extract_features(&mut PlanSource::new(&plan), &cfg.frontend)?;
    feats.save(out.join(FEATURES_FILE))?;
    let mut outputs = vec!["events.csv", "truth.csv", "labels.csv", FEATURES_FILE];
    if !no_audio {
        outputs.push(crate::synth::AUDIO_FILE);
    }
    Ok((Vec::new(), outputs.into_iter().map(String::from).collect()))
}

/// Features from the cached table, the recorded audio, or a re-render, in
/// that order of preference.
fn load_dataset(
    scenario: &Path,
    cfg: &RunConfig,
    folds: usize,
) -> Result<(Dataset, Vec<InputHash>)> {
    let dir = load_scenario_dir(scenario)?;
    let cached = scenario.join(FEATURES_FILE);
    let feats = if cached.exists() {
        FeatureTable::load(&cached)?
    } else if let Some(audio) = dir.audio_path() {
        extract_features(&mut WavSource::open(audio)?, &cfg.frontend)?
    } else {
        extract_features(&mut PlanSource::new(&dir.plan()?), &cfg.frontend)?
    };
    let hashes = hash_tree(scenario)?;
    Ok((Dataset::new(feats, &dir.truth, folds)?, hashes))
}

fn cmd_train(out: &Path, cfg: &RunConfig, scenario: &Path) -> Result<Io> {
    let (ds, inputs) = load_dataset(scenario, cfg, cfg.data.folds)?;
    let (train, _) = cfg.data.split()?;
    let (est, report) = Estimator::fit(&ds, &train, &cfg.model)?;
    est.save(out.join(CHECKPOINT_FILE))?;
    crate::model::write_loss_history(
        fs::File::create(out.join("loss.csv"))?,
        &report.loss_history,
    )?;
    fs::write(
        out.join("train_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok((
        inputs,
        vec![
            CHECKPOINT_FILE.into(),
            "loss.csv".into(),
            "train_report.json".into(),
        ],
    ))
}

#[derive(Serialize)]
struct AggregatedRow {
    window_s: u64,
    model: MetricsReport,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    held_out: &'a HeldOut,
    aggregated: Vec<AggregatedRow>,
    privacy_ledger: Option<serde_json::Value>,
}

fn cmd_eval(
    out: &Path,
    cfg: &RunConfig,
    checkpoint: &Path,
    scenario: &Path,
    windows: &[u64],
    noise_seed: Option<u64>,
) -> Result<Io> {
    let est = Estimator::load(checkpoint)?;
    let (ds, mut inputs) = load_dataset(scenario, cfg, cfg.data.folds)?;
    inputs.push(hash_file(checkpoint)?);
    let (train, test) = cfg.data.split()?;
    let mut noise = eval_noise(noise_seed);
    let pred = est.predict(&ds, &test, Some(&mut noise))?;
    let held = score(&ds, &train, &test, &pred.points)?;
    let end = ds.features().times.last().map_or(0, |t| t + 1);
    let windows = if windows.is_empty() {
        &cfg.eval.windows_s[..]
    } else {
        windows
    };
    let aggregated = windows
        .iter()
        .map(|&w| {
            Ok(AggregatedRow {
                window_s: w,
                model: aggregated_metrics(&pred.points, w, end)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ledger = pred
        .ledger
        .map(|l| l.to_json())
        .transpose()?
        .map(|s| serde_json::from_str(&s))
        .transpose()?;
    let report = EvalReport {
        held_out: &held,
        aggregated,
        privacy_ledger: ledger,
    };
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let modality = format!("audio, scheme {}", est.config().windows.scheme.number());
    let encoder = match est.config().encoder {
        EncoderChoice::Frozen => "Frozen encoder + Transformer",
        EncoderChoice::Trainable => "CNN + Transformer",
    };
    let mut rows = vec![
        ReportRow {
            model: "Predict mean".into(),
            modality: "-".into(),
            metrics: held.baseline,
        },
        ReportRow {
            model: encoder.into(),
            modality: modality.clone(),
            metrics: held.model,
        },
    ];
    for a in &report.aggregated {
        rows.push(ReportRow {
            model: format!("{encoder} ({} s mean)", a.window_s),
            modality: modality.clone(),
            metrics: a.model,
        });
    }
    fs::write(out.join("report.txt"), format_table(&rows))?;
    write_predictions_csv(fs::File::create(out.join("predictions.csv"))?, &pred.points)?;
    Ok((
        inputs,
        vec![
            "metrics.json".into(),
            "report.txt".into(),
            "predictions.csv".into(),
        ],
    ))
}

fn cmd_dp_sweep(
    out: &Path,
    cfg: &RunConfig,
    scenario: &Path,
    checkpoint: Option<&Path>,
    epsilons: &[f64],
) -> Result<Io> {
    let (ds, mut inputs) = load_dataset(scenario, cfg, cfg.data.folds)?;
    let (train, test) = cfg.data.split()?;
    let eps = if epsilons.is_empty() {
        &cfg.sweep.epsilons[..]
    } else {
        epsilons
    };
    let rows = match checkpoint {
        Some(path) => {
            inputs.push(hash_file(path)?);
            let base = Estimator::load(path)?;
            crate::pipeline::inference_sweep(&ds, &train, &test, &base, eps, &cfg.sweep.settings)?
        }
        None => dp_sweep(&ds, &train, &test, &cfg.model, eps, &cfg.sweep.settings)?,
    };
    write_sweep_csv(fs::File::create(out.join("sweep.csv"))?, &rows)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok((inputs, vec!["sweep.csv".into(), "sweep.json".into()]))
}

fn cmd_crossval(
    out: &Path,
    cfg: &RunConfig,
    scenario: &Path,
    folds: Option<usize>,
    workers: usize,
) -> Result<Io> {
    let (ds, inputs) = load_dataset(scenario, cfg, folds.unwrap_or(cfg.data.folds))?;
    let report = cross_validate(&ds, &cfg.model, workers)?;
    fs::write(
        out.join("crossval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut w = csv::Writer::from_path(out.join("crossval.csv"))?;
    w.write_record([
        "fold",
        "mae",
        "rmse",
        "rho",
        "baseline_mae",
        "baseline_rmse",
    ])?;
    for f in &report.folds {
        let (m, b) = (&f.result.model, &f.result.baseline);
        w.write_record([
            f.fold.to_string(),
            format!("{:.6}", m.mae),
            format!("{:.6}", m.rmse),
            format!("{:.6}", m.rho),
            format!("{:.6}", b.mae),
            format!("{:.6}", b.rmse),
        ])?;
    }
    w.flush()?;
    Ok((inputs, vec!["crossval.json".into(), "crossval.csv".into()]))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn cmd_seal(out: &Path, input: &Path, public_key: &Path) -> Result<Io> {
    let pk = store::read_public_key_pem(public_key)?;
    let written = store::seal_dir(input, out, &pk, now(), &mut OsRng)?;
    Ok((vec![hash_file(public_key)?], relative(out, &written)))
}

fn cmd_unseal(out: &Path, input: &Path, private_key: &Path) -> Result<Io> {
    let sk = store::read_private_key_pem(private_key)?;
    let written = store::unseal_dir(input, out, &sk)?;
    Ok((hash_tree(input)?, relative(out, &written)))
}

fn cmd_keygen(out: &Path, bits: usize) -> Result<Io> {
    let sk = store::generate_keypair(bits, &mut OsRng)?;
    store::write_private_key_pem(out.join("key.pem"), &sk)?;
    store::write_public_key_pem(out.join("key.pub.pem"), &sk.to_public_key())?;
    Ok((Vec::new(), vec!["key.pem".into(), "key.pub.pem".into()]))
}

fn relative(root: &Path, paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| p.strip_prefix(root).unwrap_or(p).display().to_string())
        .collect()
}

fn hash_file(path: &Path) -> Result<InputHash> {
    let mut h = Sha256::new();
    std::io::copy(&mut fs::File::open(path)?, &mut h)?;
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: hex::encode(h.finalize()),
    })
}

/// Hashes every file below `root` except run manifests.
fn hash_tree(root: &Path) -> Result<Vec<InputHash>> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().and_then(|n| n.to_str()) != Some(MANIFEST_FILE) {
                files.push(p);
            }
        }
    }
    files.sort();
    files.iter().map(|p| hash_file(p)).collect()
}
