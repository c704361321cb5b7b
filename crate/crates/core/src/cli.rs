//! Command-line front end.
//!
//! Settings resolve in the order: built-in defaults, then `--preset`, then the
//! `--config` file, then explicit flags.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, I/O or
//! checkpoint error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config_file::ConfigFile;
use crate::curriculum::{difficulties, rank_report};
use crate::dag::{build_dag, export_dot};
use crate::data::{load_dataset, save_dataset, synth_generate, Dataset, Dims, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{forward, init_params, ModalitySet, Mode, ModelConfig, ModelParams};
use crate::nn::grad_check;
use crate::trainer::{bucket_sweep, evaluate, format_sweep, train, Preset, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "multidag",
    version,
    about = "Speaker-aware DAG networks for conversational emotion recognition with curriculum training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic JSONL corpus
    GenData(GenDataArgs),
    /// Rank conversations by emotional-shift difficulty
    Difficulty(DifficultyArgs),
    /// Print the conversation graph of one conversation in DOT format
    InspectDag(InspectDagArgs),
    /// Train a model and write checkpoint, history and metrics
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print metrics as JSON
    Eval(EvalArgs),
    /// Finite-difference gradient check on a tiny random model
    Gradcheck(GradcheckArgs),
    /// Train once per bucket count and print the best validation w-F1 of each
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
    /// Config file ([data] section)
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of conversations [default: 100]
    #[arg(long)]
    conversations: Option<usize>,
    /// Shortest conversation [default: 8]
    #[arg(long)]
    min_utterances: Option<usize>,
    /// Longest conversation [default: 16]
    #[arg(long)]
    max_utterances: Option<usize>,
    /// Speakers per conversation [default: 2]
    #[arg(long)]
    speakers: Option<usize>,
    /// Probability that a speaker changes emotion between turns [default: 0.3]
    #[arg(long)]
    p_shift: Option<f64>,
    /// Number of emotion labels [default: 4]
    #[arg(long)]
    labels: Option<usize>,
    /// Text feature width [default: 12]
    #[arg(long)]
    text_dim: Option<usize>,
    /// Audio feature width [default: 8]
    #[arg(long)]
    audio_dim: Option<usize>,
    /// Visual feature width [default: 6]
    #[arg(long)]
    visual_dim: Option<usize>,
    /// Label signal strength in text features [default: 2]
    #[arg(long)]
    text_signal: Option<f64>,
    /// Label signal strength in audio features [default: 1]
    #[arg(long)]
    audio_signal: Option<f64>,
    /// Label signal strength in visual features [default: 0.5]
    #[arg(long)]
    visual_signal: Option<f64>,
    /// Standard deviation of the Gaussian feature noise [default: 1]
    #[arg(long)]
    noise: Option<f64>,
    /// Split tag written to the header and conversation ids (train, valid, test)
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Args)]
struct DifficultyArgs {
    /// Labeled JSONL dataset
    #[arg(long)]
    data: PathBuf,
    /// Config file ([curriculum] section)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of buckets shown in the last column [default: 5]
    #[arg(long)]
    buckets: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectDagArgs {
    /// JSONL dataset
    #[arg(long)]
    data: PathBuf,
    /// Conversation to render
    #[arg(long)]
    conv_id: String,
    /// Config file ([model] section)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Same-speaker utterances to look back over [default: 1]
    #[arg(long)]
    omega: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelFlags {
    /// Config file ([model], [train] and [curriculum] sections)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyperparameter bundle: iemocap or meld
    #[arg(long)]
    preset: Option<String>,
    /// RNG seed for initialization, dropout and shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of DAG layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Node state width [default: 16]
    #[arg(long)]
    hidden: Option<usize>,
    /// Adam learning rate [default: 0.005]
    #[arg(long)]
    lr: Option<f64>,
    /// Dropout rate [default: 0]
    #[arg(long)]
    dropout: Option<f64>,
    /// Training epochs [default: 40]
    #[arg(long)]
    epochs: Option<usize>,
    /// Same-speaker utterances to look back over [default: 1]
    #[arg(long)]
    omega: Option<usize>,
    /// Train on the full set every epoch
    #[arg(long)]
    no_curriculum: bool,
    /// Comma-separated subset of t,a,v
    #[arg(long)]
    modalities: Option<String>,
    /// Worker threads for evaluation [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Clip the global gradient norm to this value
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training JSONL dataset
    #[arg(long)]
    data: PathBuf,
    /// Validation JSONL dataset used for model selection
    #[arg(long)]
    valid: PathBuf,
    /// Output directory for model.ckpt, history.csv and metrics.json
    #[arg(long)]
    out: PathBuf,
    /// Number of curriculum buckets [default: 5]
    #[arg(long)]
    buckets: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Labeled JSONL dataset
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the metrics JSON to this path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Config file ([model] and [gradcheck] sections)
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed for data and initialization [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Node state width [default: 8]
    #[arg(long)]
    hidden: Option<usize>,
    /// Number of DAG layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Same-speaker utterances to look back over [default: 1]
    #[arg(long)]
    omega: Option<usize>,
    /// Comma-separated subset of t,a,v
    #[arg(long)]
    modalities: Option<String>,
    /// Conversation length [default: 4]
    #[arg(long)]
    utterances: Option<usize>,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    eps: Option<f64>,
    /// Relative error tolerance [default: 1e-4]
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Training JSONL dataset
    #[arg(long)]
    data: PathBuf,
    /// Validation JSONL dataset used for model selection
    #[arg(long)]
    valid: PathBuf,
    /// Also write the sweep table to this path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated bucket counts [default: 4,5,7,10,15]
    #[arg(long)]
    buckets: Option<String>,
    #[command(flatten)]
    model: ModelFlags,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        Error::Shape(_) | Error::Io(_) | Error::Parse { .. } | Error::Data(_) | Error::Checkpoint(_) => 2,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Difficulty(a) => difficulty(a),
        Command::InspectDag(a) => inspect_dag(a),
        Command::Train(a) => train_command(a),
        Command::Eval(a) => eval_command(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn config_file(path: &Option<PathBuf>) -> Result<ConfigFile> {
    path.as_ref().map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

// Flag value if given, else config-file value, else keep `slot`.
fn layer<T: std::str::FromStr>(
    slot: &mut T,
    flag: Option<T>,
    file: &ConfigFile,
    section: &str,
    key: &str,
) -> Result<()> {
    if let Some(v) = flag.map_or_else(|| file.get(section, key), |v| Ok(Some(v)))? {
        *slot = v;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let file = config_file(&a.config)?;
    let mut c = SynthConfig::default();
    let s = "data";
    layer(&mut c.seed, a.seed, &file, s, "seed")?;
    layer(&mut c.conversations, a.conversations, &file, s, "conversations")?;
    layer(&mut c.min_utterances, a.min_utterances, &file, s, "min_utterances")?;
    layer(&mut c.max_utterances, a.max_utterances, &file, s, "max_utterances")?;
    layer(&mut c.speakers, a.speakers, &file, s, "speakers")?;
    layer(&mut c.p_shift, a.p_shift, &file, s, "p_shift")?;
    layer(&mut c.num_labels, a.labels, &file, s, "labels")?;
    layer(&mut c.dims.text, a.text_dim, &file, s, "text_dim")?;
    layer(&mut c.dims.audio, a.audio_dim, &file, s, "audio_dim")?;
    layer(&mut c.dims.visual, a.visual_dim, &file, s, "visual_dim")?;
    layer(&mut c.text_signal, a.text_signal, &file, s, "text_signal")?;
    layer(&mut c.audio_signal, a.audio_signal, &file, s, "audio_signal")?;
    layer(&mut c.visual_signal, a.visual_signal, &file, s, "visual_signal")?;
    layer(&mut c.noise_std, a.noise, &file, s, "noise")?;
    let split = a.split.or_else(|| file.raw(s, "split").map(str::to_string));
    c.split = split.map(|v| v.parse()).transpose()?;

    let dataset = synth_generate(&c)?;
    save_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} conversations ({} utterances) to {}",
        dataset.conversations.len(),
        dataset.num_utterances(),
        a.out.display()
    );
    Ok(())
}

fn difficulty(a: DifficultyArgs) -> Result<()> {
    let file = config_file(&a.config)?;
    let mut buckets = 5usize;
    layer(&mut buckets, a.buckets, &file, "curriculum", "buckets")?;
    let dataset = load_dataset(&a.data)?;
    let scores = difficulties(&dataset.conversations)?;
    print!("{}", rank_report(&scores, buckets));
    Ok(())
}

fn inspect_dag(a: InspectDagArgs) -> Result<()> {
    let file = config_file(&a.config)?;
    let mut omega = 1usize;
    layer(&mut omega, a.omega, &file, "model", "omega")?;
    if omega < 1 {
        return Err(Error::config("omega must be >= 1"));
    }
    let dataset = load_dataset(&a.data)?;
    let conv = dataset
        .conversation(&a.conv_id)
        .ok_or_else(|| Error::data(format!("no conversation `{}` in {}", a.conv_id, a.data.display())))?;
    println!("{}", export_dot(&build_dag(conv, omega)));
    Ok(())
}

fn resolve_train_config(m: &ModelFlags, buckets: Option<usize>) -> Result<TrainConfig> {
    let file = config_file(&m.config)?;
    let mut c = TrainConfig::default();
    let preset = m.preset.clone().or_else(|| file.raw("train", "preset").map(str::to_string));
    if let Some(p) = preset {
        Preset::parse(&p)?.apply(&mut c);
    }
    layer(&mut c.hidden, m.hidden, &file, "model", "hidden")?;
    layer(&mut c.layers, m.layers, &file, "model", "layers")?;
    layer(&mut c.dropout, m.dropout, &file, "model", "dropout")?;
    layer(&mut c.window, m.omega, &file, "model", "omega")?;
    layer(&mut c.lr, m.lr, &file, "train", "lr")?;
    layer(&mut c.epochs, m.epochs, &file, "train", "epochs")?;
    layer(&mut c.seed, m.seed, &file, "train", "seed")?;
    layer(&mut c.jobs, m.jobs, &file, "train", "jobs")?;
    layer(&mut c.buckets, buckets, &file, "curriculum", "buckets")?;
    layer(&mut c.curriculum, m.no_curriculum.then_some(false), &file, "curriculum", "enabled")?;
    if let Some(v) = m.clip_norm.map_or_else(|| file.get("train", "clip_norm"), |v| Ok(Some(v)))? {
        c.clip_norm = Some(v);
    }
    let modalities = m.modalities.clone().or_else(|| file.raw("model", "modalities").map(str::to_string));
    c.modalities = modalities.map(|s| ModalitySet::parse(&s)).transpose()?;
    if !(0.0..1.0).contains(&c.dropout) {
        return Err(Error::config(format!("dropout {} not in [0, 1)", c.dropout)));
    }
    if c.layers < 1 || c.hidden < 1 || c.window < 1 {
        return Err(Error::config("layers, hidden and omega must be >= 1"));
    }
    c.validate()?;
    Ok(c)
}

fn load_pair(train_path: &Path, valid_path: &Path) -> Result<(Dataset, Dataset)> {
    Ok((load_dataset(train_path)?, load_dataset(valid_path)?))
}

fn train_command(a: TrainArgs) -> Result<()> {
    let config = resolve_train_config(&a.model, a.buckets)?;
    let (train_set, valid) = load_pair(&a.data, &a.valid)?;
    let outcome = train(&train_set, &valid, &config)?;
    let metrics = evaluate(&outcome.params, &valid, config.jobs)?;

    fs::create_dir_all(&a.out)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", a.out.display())))?;
    let checkpoint = a.out.join("model.ckpt");
    save_checkpoint(&checkpoint, &outcome.params, &outcome.rng)?;
    write_file(&a.out.join("history.csv"), &outcome.history.to_csv())?;
    let json = serde_json::to_string_pretty(&metrics.to_json(&valid.labels)).expect("metrics serialize");
    write_file(&a.out.join("metrics.json"), &(json + "\n"))?;

    let best = outcome.history.best().expect("history is non-empty");
    println!(
        "best epoch {}/{}: valid acc {:.4}, w-F1 {:.4}",
        best.epoch, config.epochs, best.valid_acc, best.valid_wf1
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval_command(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&a.data)?;
    let cfg = &ckpt.params.config;
    if cfg.dims != dataset.dims {
        return Err(Error::data(format!(
            "checkpoint expects dims {:?}, data has {:?}",
            cfg.dims, dataset.dims
        )));
    }
    if cfg.num_labels != dataset.num_labels() {
        return Err(Error::data(format!(
            "checkpoint expects {} labels, data has {}",
            cfg.num_labels,
            dataset.num_labels()
        )));
    }
    if a.jobs < 1 {
        return Err(Error::config("jobs must be >= 1"));
    }
    let metrics = evaluate(&ckpt.params, &dataset, a.jobs)?;
    let json = serde_json::to_string_pretty(&metrics.to_json(&dataset.labels)).expect("metrics serialize");
    if let Some(out) = &a.out {
        write_file(out, &format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let file = config_file(&a.config)?;
    let (mut seed, mut hidden, mut layers, mut omega, mut utterances) = (0u64, 8usize, 2usize, 1usize, 4usize);
    let (mut eps, mut tol) = (1e-5, 1e-4);
    layer(&mut seed, a.seed, &file, "train", "seed")?;
    layer(&mut hidden, a.hidden, &file, "model", "hidden")?;
    layer(&mut layers, a.layers, &file, "model", "layers")?;
    layer(&mut omega, a.omega, &file, "model", "omega")?;
    layer(&mut utterances, a.utterances, &file, "gradcheck", "utterances")?;
    layer(&mut eps, a.eps, &file, "gradcheck", "eps")?;
    layer(&mut tol, a.tol, &file, "gradcheck", "tol")?;
    if !(eps > 0.0 && tol > 0.0) {
        return Err(Error::config("eps and tol must be positive"));
    }

    let synth = SynthConfig {
        conversations: 1,
        min_utterances: utterances,
        max_utterances: utterances,
        num_labels: 3,
        dims: Dims::new(6, 5, 4),
        seed,
        ..SynthConfig::default()
    };
    let mut conv = synth_generate(&synth)?.conversations.remove(0);
    for (i, u) in conv.utterances.iter_mut().enumerate() {
        u.speaker = if i % 2 == 0 { "A" } else { "B" }.to_string();
    }
    let mut config = ModelConfig::new(synth.dims, synth.num_labels, hidden, layers);
    config.window = omega;
    let modalities = a.modalities.or_else(|| file.raw("model", "modalities").map(str::to_string));
    if let Some(m) = modalities {
        config.modalities = ModalitySet::parse(&m)?;
    }
    let mut params = init_params(&config, seed)?;
    let report = grad_check(
        |store| {
            let p = ModelParams {
                config: config.clone(),
                store: store.clone(),
            };
            let out = forward(&conv, &p, Mode::Eval)?;
            let loss = out.loss.expect("labeled conversation has a loss");
            Ok((out.tape, loss))
        },
        &mut params.store,
        eps,
        tol,
    )?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numeric(report.summary()))
    }
}

fn parse_bucket_list(text: &str) -> Result<Vec<usize>> {
    let ks = text
        .split(',')
        .map(|k| {
            k.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad bucket count `{k}` in `{text}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() {
        return Err(Error::config("empty bucket list"));
    }
    Ok(ks)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let file = config_file(&a.model.config)?;
    let list = a
        .buckets
        .clone()
        .or_else(|| file.raw("sweep", "buckets").map(str::to_string))
        .unwrap_or_else(|| "4,5,7,10,15".to_string());
    let ks = parse_bucket_list(&list)?;
    let config = resolve_train_config(&a.model, Some(1))?;
    for &k in &ks {
        TrainConfig {
            buckets: k,
            curriculum: true,
            ..config.clone()
        }
        .validate()?;
    }
    let (train_set, valid) = load_pair(&a.data, &a.valid)?;
    let table = format_sweep(&bucket_sweep(&train_set, &valid, &config, &ks)?);
    if let Some(out) = &a.out {
        write_file(out, &table)?;
    }
    print!("{table}");
    Ok(())
}
