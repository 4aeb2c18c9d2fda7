//! The `after` command line.
//!
//! Exit codes: 0 when every requested artifact was written, 2 for usage errors
//! (bad flags, missing inputs, inconsistent options; always detected before
//! any training), 1 for runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use after_core::analysis::{domain_probe, jsd_matrix, mlm_probe, overlap_matrix, Matrix, OVERLAP_TOP_K, TERM_TOP_K};
use after_core::data::{build_vocab, SynthSpec};
use after_core::metrics::Metric;
use after_core::model::{init_model, EncoderConfig};
use after_core::training::{aggregate_runs, lr_at, pretrain_mlm, Mode, PretrainConfig, RunResult, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::experiment::{finetune_seeds, parallel_sweep, resolve_jobs, MainData, MainFiles};
use crate::fsio::{atomic_write, read_to_string, stem, write_json, write_jsonl};
use crate::jsonl::{load_jsonl, read_texts, Kind};
use crate::manifest::RunManifest;
use crate::report::{best_lambda_table, csv_field, matrix_csv, sweep_table_text, SweepReport};
use crate::synth_io::{is_non_empty_dir, write_synthetic};
use crate::vocab_io::{load_vocab, save_vocab};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "after", version, about = "Domain-adversarial fine-tuning on a desk-scale encoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic two-domain benchmark
    GenSynth(GenSynthArgs),
    /// Build a word-level vocabulary file from corpora
    BuildVocab(BuildVocabArgs),
    /// Masked-LM pretraining; writes a checkpoint and a JSON-lines loss log
    Pretrain(PretrainArgs),
    /// Fine-tune one mode over several seeds
    Finetune(FinetuneArgs),
    /// Run the λ × seed grid and pick the best λ
    Sweep(SweepArgs),
    /// Merge sweep reports into one best-λ table
    Table(TableArgs),
    /// Corpus and representation analytics
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of Main-train class-A sentences given shortcut tokens [default: 0.9]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Sentence length in words [default: 20]
    #[arg(long)]
    pub len: Option<usize>,
    /// Fraction of each sentence drawn from class cue words [default: 0.3]
    #[arg(long)]
    pub cue_frac: Option<f64>,
    /// JSON generator spec; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overwrite a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Corpus files: .jsonl (the "text" fields) or plain text, one sentence per line
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    /// Vocabulary size including the five special tokens
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    /// Output vocabulary file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// JSON config {"model": {...}, "pretrain": {...}}; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pretraining corpus (.jsonl or plain text)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file from build-vocab
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    pub out: PathBuf,
    /// Training steps [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sequences per step [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization, masking, dropout and corpus order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss log path [default: <out>.log.jsonl]
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sft,
    After,
    Multitask,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sft => Mode::Sft,
            ModeArg::After => Mode::After,
            ModeArg::Multitask => Mode::Multitask,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Accuracy,
    F1,
    Mcc,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Accuracy => Metric::Accuracy,
            MetricArg::F1 => Metric::F1,
            MetricArg::Mcc => Metric::Mcc,
        }
    }
}

/// Training flags shared by finetune and sweep. Each overrides the matching
/// field of the `--config` file.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// JSON training config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pretrained checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory with main_train.jsonl, main_val.jsonl and optionally main_test.jsonl
    #[arg(long)]
    pub main: PathBuf,
    /// Seeds, comma separated [default: 1,2,3,4,5]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Epochs [default: 4]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Peak learning rate [default: 0.0003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size, even; half Main and half Auxiliary when mixing [default: 28]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel runs [default: available cores]
    #[arg(long, env = "AFTER_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Auxiliary corpus (.jsonl); required by after and multitask, rejected by sft
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Fine-tuning regime [default: sft]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Domain-loss weight λ for after and multitask [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Also save the selected model of every seed as model_seed<N>.ckpt
    #[arg(long)]
    pub save_models: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Auxiliary corpus (.jsonl)
    #[arg(long)]
    pub aux: PathBuf,
    /// λ grid, comma separated [default: 0.1,0.01,0.001,0.0001]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
    /// after or multitask [default: after]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Validation metric that picks the best λ [default: accuracy]
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// sweep.json files or the sweep output directories holding them
    #[arg(long, required = true, num_args = 1..)]
    pub sweep: Vec<PathBuf>,
    /// Write the table here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Jensen-Shannon divergence matrix over a joint top-k vocabulary
    Jsd {
        /// Corpus files (.jsonl or plain text)
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Most frequent words per corpus entering the joint vocabulary
        #[arg(long, default_value_t = TERM_TOP_K)]
        top_k: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Directional vocabulary overlap (%) of every row corpus with every column corpus
    Overlap {
        /// Row corpora
        #[arg(long, required = true, num_args = 1..)]
        rows: Vec<PathBuf>,
        /// Column corpora [default: the row corpora]
        #[arg(long, num_args = 1..)]
        cols: Vec<PathBuf>,
        /// Most frequent words per corpus
        #[arg(long, default_value_t = OVERLAP_TOP_K)]
        top_k: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Average masked-LM loss of a checkpoint on each dataset
    Mlm {
        /// Checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Datasets (.jsonl or plain text)
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Mask seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mask draws per sequence
        #[arg(long, default_value_t = 5)]
        passes: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear domain-probe accuracy of each checkpoint's [CLS] vectors
    Probe {
        /// Checkpoints to compare
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
        /// Main-domain texts (.jsonl or plain text)
        #[arg(long)]
        main: PathBuf,
        /// Auxiliary-domain texts (.jsonl or plain text)
        #[arg(long)]
        aux: PathBuf,
        /// Sampling seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses the process arguments, runs the command and maps the outcome to an
/// exit code.
pub fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    ExitCode::from(run_args(&args))
}

/// Runs `after` with `args` (including the program name) and returns the
/// exit code.
pub fn run_args(args: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    let command = args.to_vec();
    match cli.command {
        Command::GenSynth(a) => gen_synth(a, command),
        Command::BuildVocab(a) => cmd_build_vocab(a, command),
        Command::Pretrain(a) => pretrain(a, command),
        Command::Finetune(a) => cmd_finetune(a, command),
        Command::Sweep(a) => sweep(a, command),
        Command::Table(a) => table(a),
        Command::Analyze(a) => analyze(a, command),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Deserializes `T` from the JSON object in `file` (or `{}`) after replacing
/// the keys given in `overrides`.
fn merged<T: DeserializeOwned>(file: Option<&Path>, overrides: Vec<(&str, Option<Value>)>) -> Result<T> {
    let mut obj = match file {
        Some(p) => {
            require_file(p, "config")?;
            match serde_json::from_str::<Value>(&read_to_string(p)?) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Error::usage(format!("{}: config must be a JSON object", p.display()))),
                Err(e) => return Err(Error::usage(format!("{}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    for (k, v) in overrides {
        if let Some(v) = v {
            obj.insert(k.to_string(), v);
        }
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::usage(format!("invalid config: {e}")))
}

fn usage_on_config(e: after_core::Error) -> Error {
    Error::usage(e.to_string())
}

fn gen_synth(a: GenSynthArgs, command: Vec<String>) -> Result<()> {
    let spec: SynthSpec = merged(
        a.config.as_deref(),
        vec![
            ("seed", a.seed.map(Value::from)),
            ("rho", a.rho.map(Value::from)),
            ("sentence_len", a.len.map(Value::from)),
            ("cue_frac", a.cue_frac.map(Value::from)),
        ],
    )?;
    spec.validate().map_err(usage_on_config)?;
    if !a.force && is_non_empty_dir(&a.out)? {
        return Err(Error::usage(format!("{} is not empty; pass --force to overwrite", a.out.display())));
    }
    let manifest_path = a.out.join("manifest.json");
    let mut manifest = RunManifest::new(command, serde_json::to_value(&spec)?, vec![spec.seed], &[])?;
    let files = write_synthetic(&a.out, &spec)?;
    for f in &files {
        manifest.inputs.insert(f.display().to_string(), crate::fsio::sha256_file(f)?);
    }
    manifest.finish(&manifest_path)?;
    eprintln!("wrote {} files to {}", files.len() + 1, a.out.display());
    Ok(())
}

fn cmd_build_vocab(a: BuildVocabArgs, command: Vec<String>) -> Result<()> {
    for c in &a.corpus {
        require_file(c, "corpus")?;
    }
    if a.size <= after_core::data::special::COUNT {
        return Err(Error::usage(format!("--size must exceed {}", after_core::data::special::COUNT)));
    }
    let mut texts = Vec::new();
    for c in &a.corpus {
        texts.extend(read_texts(c)?);
    }
    let vocab = match build_vocab(&texts, a.size) {
        Ok(v) => v,
        Err(after_core::Error::Empty(_)) => return Err(Error::usage("the corpus has no words")),
        Err(e) => return Err(e.into()),
    };
    let inputs: Vec<&Path> = a.corpus.iter().map(PathBuf::as_path).collect();
    let mut manifest = RunManifest::new(command, json!({ "size": a.size }), vec![], &inputs)?;
    save_vocab(&a.out, &vocab)?;
    manifest.finish(&sidecar(&a.out, "manifest.json"))?;
    eprintln!("{} tokens -> {}", vocab.len(), a.out.display());
    Ok(())
}

/// `<path>.<suffix>` next to `path`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainFile {
    /// `vocab_size` is taken from the vocabulary and `seed` from the
    /// pretraining seed.
    pub model: EncoderConfig,
    pub pretrain: PretrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLogLine {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

fn pretrain(a: PretrainArgs, command: Vec<String>) -> Result<()> {
    require_file(&a.vocab, "vocabulary")?;
    require_file(&a.corpus, "corpus")?;
    let mut file: PretrainFile = merged(a.config.as_deref(), vec![])?;
    let p = &mut file.pretrain;
    p.steps = a.steps.unwrap_or(p.steps);
    p.batch_size = a.batch_size.unwrap_or(p.batch_size);
    p.lr_peak = a.lr.unwrap_or(p.lr_peak);
    p.seed = a.seed.unwrap_or(p.seed);
    p.validate().map_err(usage_on_config)?;
    let vocab = load_vocab(&a.vocab)?;
    file.model.vocab_size = vocab.len();
    file.model.seed = file.pretrain.seed;
    file.model.validate().map_err(usage_on_config)?;

    let log_path = a.log.clone().unwrap_or_else(|| sidecar(&a.out, "log.jsonl"));
    let manifest_path = sidecar(&a.out, "manifest.json");
    let mut manifest = RunManifest::new(
        command,
        serde_json::to_value(&file)?,
        vec![file.pretrain.seed],
        &[a.corpus.as_path(), a.vocab.as_path()],
    )?;
    manifest.write(&manifest_path)?;

    let corpus: Vec<Vec<usize>> = read_texts(&a.corpus)?
        .iter()
        .map(|t| vocab.encode_text(t, file.model.max_len))
        .collect();
    let mut model = init_model(&file.model)?;
    let losses = pretrain_mlm(&mut model, &corpus, &file.pretrain)?;
    let p = &file.pretrain;
    let log = losses
        .iter()
        .enumerate()
        .map(|(step, &loss)| {
            Ok(PretrainLogLine { step, lr: lr_at(step + 1, p.steps, p.warmup_proportion, p.lr_peak)?, loss })
        })
        .collect::<after_core::Result<Vec<_>>>()?;
    write_jsonl(&log_path, &log)?;
    save_checkpoint(&a.out, &model, &vocab)?;
    manifest.finish(&manifest_path)?;
    eprintln!(
        "pretrained {} steps: loss {:.4} -> {:.4}; checkpoint {}",
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn train_overrides(t: &TrainFlags) -> Vec<(&'static str, Option<Value>)> {
    vec![
        ("seeds", t.seeds.clone().map(Value::from)),
        ("epochs", t.epochs.map(Value::from)),
        ("lr_peak", t.lr.map(Value::from)),
        ("batch_size", t.batch_size.map(Value::from)),
    ]
}

fn mode_value(m: Option<ModeArg>) -> Option<Value> {
    m.map(|m| serde_json::to_value(Mode::from(m)).expect("mode serializes"))
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    load_checkpoint(path)
}

fn cmd_finetune(a: FinetuneArgs, command: Vec<String>) -> Result<()> {
    let t = &a.train;
    let mut overrides = train_overrides(t);
    overrides.push(("mode", mode_value(a.mode)));
    let mut config: TrainConfig = merged(t.config.as_deref(), overrides)?;
    if config.mode == Mode::Sft {
        if a.lambda.is_some() {
            eprintln!("warning: --lambda is ignored in sft mode");
        }
    } else if let Some(l) = a.lambda {
        config.lambda = l;
    }
    config.validate().map_err(usage_on_config)?;
    if config.seeds.is_empty() {
        return Err(Error::usage("no seeds given"));
    }
    match (config.mode, &a.aux) {
        (Mode::Sft, Some(_)) => return Err(Error::usage("sft mode does not use --aux")),
        (Mode::After | Mode::Multitask, None) => {
            return Err(Error::usage(format!("{:?} mode needs --aux", config.mode).to_lowercase()))
        }
        (_, Some(p)) => require_file(p, "auxiliary corpus")?,
        _ => {}
    }
    let files = MainFiles::in_dir(&t.main)?;
    let ck = load_model(&t.ckpt)?;

    let mut inputs = vec![t.ckpt.as_path()];
    inputs.extend(files.paths());
    inputs.extend(a.aux.as_deref());
    let manifest_path = t.out.join("manifest.json");
    let mut manifest = RunManifest::new(command, serde_json::to_value(&config)?, config.seeds.clone(), &inputs)?;
    manifest.write(&manifest_path)?;

    let max_len = ck.model.config.max_len;
    let main = MainData::load(&files, &ck.vocab, max_len)?;
    let aux = a
        .aux
        .as_deref()
        .map(|p| load_jsonl(p, Kind::Auxiliary, &ck.vocab, max_len, after_core::data::Split::Train))
        .transpose()?;
    if let Some(x) = &aux {
        warn_small_aux(x, &main.train);
    }
    let outputs = finetune_seeds(&ck.model, &main, aux.as_ref(), &config, resolve_jobs(t.jobs))?;
    let mut results = Vec::new();
    for out in outputs {
        let r = out.result;
        write_json(&t.out.join(format!("run_seed{}.json", r.seed)), &r)?;
        write_jsonl(&t.out.join(format!("log_seed{}.jsonl", r.seed)), &r.evals)?;
        if a.save_models {
            save_checkpoint(&t.out.join(format!("model_seed{}.ckpt", r.seed)), &out.best, &ck.vocab)?;
        }
        eprintln!(
            "seed {}: selected step {} val loss {:.4} val acc {:.4}",
            r.seed, r.selected_step, r.selected_val_loss, r.selected_val.accuracy
        );
        results.push(r);
    }
    write_json(&t.out.join("aggregate.json"), &aggregate_runs(&results)?)?;
    manifest.finish(&manifest_path)
}

fn warn_small_aux(aux: &after_core::data::Dataset, train: &after_core::data::Dataset) {
    if aux.len() < train.len() {
        eprintln!(
            "warning: auxiliary corpus has {} examples, fewer than the {} Main training examples; sampling with replacement",
            aux.len(),
            train.len()
        );
    }
}

/// File name of one sweep cell's result.
pub fn cell_file_name(lambda: f64, seed: u64) -> String {
    format!("lambda{lambda}_seed{seed}.json")
}

fn sweep(a: SweepArgs, command: Vec<String>) -> Result<()> {
    let t = &a.train;
    let mut overrides = train_overrides(t);
    overrides.push(("mode", mode_value(a.mode).or(Some(json!("after")))));
    overrides.push(("lambda_grid", a.grid.clone().map(Value::from)));
    overrides.push(("selection_metric", a.metric.map(|m| serde_json::to_value(Metric::from(m)).expect("metric serializes"))));
    let config: TrainConfig = merged(t.config.as_deref(), overrides)?;
    config.validate().map_err(usage_on_config)?;
    if config.mode == Mode::Sft {
        return Err(Error::usage("a sweep needs --mode after or multitask"));
    }
    if config.seeds.is_empty() {
        return Err(Error::usage("no seeds given"));
    }
    require_file(&a.aux, "auxiliary corpus")?;
    let files = MainFiles::in_dir(&t.main)?;
    let ck = load_model(&t.ckpt)?;

    let mut inputs = vec![t.ckpt.as_path(), a.aux.as_path()];
    inputs.extend(files.paths());
    let manifest_path = t.out.join("manifest.json");
    let mut manifest = RunManifest::new(command, serde_json::to_value(&config)?, config.seeds.clone(), &inputs)?;
    manifest.write(&manifest_path)?;

    let max_len = ck.model.config.max_len;
    let main = MainData::load(&files, &ck.vocab, max_len)?;
    let aux = load_jsonl(&a.aux, Kind::Auxiliary, &ck.vocab, max_len, after_core::data::Split::Train)?;
    warn_small_aux(&aux, &main.train);
    let result = parallel_sweep(&ck.model, &main, &aux, &config, resolve_jobs(t.jobs))?;
    for cell in &result.cells {
        let path = t.out.join("runs").join(cell_file_name(cell.lambda, cell.seed));
        match &cell.result {
            Some(r) => write_json(&path, r)?,
            None => write_json(&path, cell)?,
        }
    }
    let report = SweepReport { main: stem(&t.main), aux: stem(&a.aux), sweep: result };
    write_json(&t.out.join("sweep.json"), &report)?;
    atomic_write(&t.out.join("table.txt"), sweep_table_text(&report).as_bytes())?;
    let failed: usize = report.sweep.per_lambda.iter().map(|s| s.failed).sum();
    eprintln!(
        "{} runs ({failed} failed); best lambda {}",
        report.sweep.cells.len(),
        report.sweep.best_lambda.map_or("-".into(), |l| l.to_string())
    );
    manifest.finish(&manifest_path)
}

fn table(a: TableArgs) -> Result<()> {
    let mut reports = Vec::new();
    for p in &a.sweep {
        let file = if p.is_dir() { p.join("sweep.json") } else { p.clone() };
        require_file(&file, "sweep report")?;
        let report: SweepReport = serde_json::from_str(&read_to_string(&file)?)
            .map_err(|e| Error::invalid(&file, e.to_string()))?;
        reports.push(report);
    }
    let text = best_lambda_table(&reports);
    match &a.out {
        Some(out) => atomic_write(out, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_matrix(out: &Path, name: &str, m: &Matrix) -> Result<()> {
    atomic_write(&out.join(format!("{name}.csv")), matrix_csv(m).as_bytes())?;
    write_json(&out.join(format!("{name}.json")), m)
}

/// `name,value` rows plus the same pairs as a JSON object list.
fn write_scores(out: &Path, name: &str, column: &str, rows: &[(String, f64)]) -> Result<()> {
    let mut csv = format!("name,{column}\n");
    for (n, v) in rows {
        csv.push_str(&format!("{},{v}\n", csv_field(n)));
    }
    atomic_write(&out.join(format!("{name}.csv")), csv.as_bytes())?;
    let json: Vec<Value> = rows.iter().map(|(n, v)| json!({ "name": n, column: v })).collect();
    write_json(&out.join(format!("{name}.json")), &json)
}

fn read_named(paths: &[PathBuf]) -> Result<Vec<(String, Vec<String>)>> {
    paths
        .iter()
        .map(|p| {
            require_file(p, "corpus")?;
            Ok((stem(p), read_texts(p)?))
        })
        .collect()
}

fn analyze(a: AnalyzeCommand, command: Vec<String>) -> Result<()> {
    match a {
        AnalyzeCommand::Jsd { corpus, top_k, out } => {
            let named = read_named(&corpus)?;
            let inputs: Vec<&Path> = corpus.iter().map(PathBuf::as_path).collect();
            let mut manifest = RunManifest::new(command, json!({ "top_k": top_k }), vec![], &inputs)?;
            let refs: Vec<(String, &[String])> = named.iter().map(|(n, t)| (n.clone(), t.as_slice())).collect();
            let m = jsd_matrix(&refs, top_k)?;
            write_matrix(&out, "jsd", &m)?;
            manifest.finish(&out.join("manifest.json"))
        }
        AnalyzeCommand::Overlap { rows, cols, top_k, out } => {
            let cols = if cols.is_empty() { rows.clone() } else { cols };
            let r = read_named(&rows)?;
            let c = read_named(&cols)?;
            let inputs: Vec<&Path> = rows.iter().chain(&cols).map(PathBuf::as_path).collect();
            let mut manifest = RunManifest::new(command, json!({ "top_k": top_k }), vec![], &inputs)?;
            let rr: Vec<(String, &[String])> = r.iter().map(|(n, t)| (n.clone(), t.as_slice())).collect();
            let cc: Vec<(String, &[String])> = c.iter().map(|(n, t)| (n.clone(), t.as_slice())).collect();
            let m = overlap_matrix(&rr, &cc, top_k)?;
            write_matrix(&out, "overlap", &m)?;
            manifest.finish(&out.join("manifest.json"))
        }
        AnalyzeCommand::Mlm { ckpt, data, seed, passes, out } => {
            if passes == 0 {
                return Err(Error::usage("--passes must be >= 1"));
            }
            let named = read_named(&data)?;
            let ck = load_model(&ckpt)?;
            let mut inputs = vec![ckpt.as_path()];
            inputs.extend(data.iter().map(PathBuf::as_path));
            let mut manifest = RunManifest::new(command, json!({ "passes": passes }), vec![seed], &inputs)?;
            let max_len = ck.model.config.max_len;
            let mut rows = Vec::new();
            for (name, texts) in &named {
                let seqs: Vec<Vec<usize>> = texts.iter().map(|t| ck.vocab.encode_text(t, max_len)).collect();
                rows.push((name.clone(), mlm_probe(&ck.model, &seqs, seed, passes)?));
            }
            write_scores(&out, "mlm", "loss", &rows)?;
            manifest.finish(&out.join("manifest.json"))
        }
        AnalyzeCommand::Probe { ckpt, main, aux, seed, out } => {
            require_file(&main, "main corpus")?;
            require_file(&aux, "auxiliary corpus")?;
            for c in &ckpt {
                require_file(c, "checkpoint")?;
            }
            let mut inputs: Vec<&Path> = ckpt.iter().map(PathBuf::as_path).collect();
            inputs.extend([main.as_path(), aux.as_path()]);
            let mut manifest = RunManifest::new(command, json!({}), vec![seed], &inputs)?;
            let (main_texts, aux_texts) = (read_texts(&main)?, read_texts(&aux)?);
            let mut rows = Vec::new();
            for c in &ckpt {
                let ck = load_checkpoint(c)?;
                let max_len = ck.model.config.max_len;
                let m = ck.vocab.main_dataset("main", after_core::data::Split::Test, main_texts.iter().map(|t| (t.as_str(), 0)), max_len)?;
                let x = ck.vocab.aux_dataset("aux", aux_texts.iter().map(String::as_str), max_len)?;
                rows.push((c.display().to_string(), domain_probe(&ck.model, &m, &x, seed)?));
            }
            write_scores(&out, "probe", "accuracy", &rows)?;
            manifest.finish(&out.join("manifest.json"))
        }
    }
}

/// Reads every `RunResult` of a finetune output directory, in seed order.
pub fn read_finetune_runs(dir: &Path, seeds: &[u64]) -> Result<Vec<RunResult>> {
    seeds
        .iter()
        .map(|s| {
            let p = dir.join(format!("run_seed{s}.json"));
            serde_json::from_str(&read_to_string(&p)?).map_err(|e| Error::invalid(&p, e.to_string()))
        })
        .collect()
}
