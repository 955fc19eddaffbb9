//! Command-line driver: prepare a corpus, train a model variant, evaluate a
//! checkpoint with beam search and corpus metrics, dump generations, and
//! inspect the copy switch step by step.
//!
//! Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
//! data problems (unreadable files, malformed corpora, corrupt checkpoints).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use deepcopy::baselines::Variant;
use deepcopy::checkpoint;
use deepcopy::corpus::{
    make_examples, parse_dialogues, read_examples_jsonl, write_examples_jsonl, DialogueExample,
    TfIdfModel, Vocab,
};
use deepcopy::error::{Error, Result};
use deepcopy::eval::{evaluate_model, generate_all, inspect_example, report_csv, report_table,
    DecodeConfig};
use deepcopy::model::Model;
use deepcopy::training::{loss_csv, train, TrainConfig, CONFIG_KEYS};

/// Environment variable consulted when `--data-dir` is not given.
const DATA_DIR_ENV: &str = "DEEPCOPY_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "deepcopy",
    version,
    about = "Knowledge-grounded dialogue generation with a hierarchical pointer-generator",
    after_help = "Config precedence: defaults, then --config file, then named flags, then \
                  trailing KEY=VALUE overrides."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw dialogue files into a vocabulary and tokenized JSONL splits.
    Prepare(PrepareArgs),
    /// Train a variant on a prepared corpus and write the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a split: perplexity, BLEU, ROUGE-L, CIDEr, distinct-n.
    Evaluate(DecodeArgs),
    /// Decode a split with beam search and write one JSON record per example.
    Generate(DecodeArgs),
    /// Replay decoded hypotheses and dump per-step switch and attention values.
    Inspect(InspectArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines (`#` comments).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model variant label (S2S-1..3, S2SC-1..3, M-1..4, M-S2S, DeepCopy).
    #[arg(long)]
    variant: Option<String>,
    /// Seed for initialization and batch shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batched forward/backward and decoding.
    #[arg(long)]
    jobs: Option<usize>,
    /// Beam width for decoding.
    #[arg(long)]
    width: Option<usize>,
    /// Allow variants that select facts using the reference response.
    #[arg(long)]
    oracle: bool,
    /// Directory read by the command; falls back to $DEEPCOPY_DATA_DIR.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Directory the command writes into.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Overrides of any config key, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint file to load.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Which prepared split to read.
    #[arg(long, value_enum, default_value_t = Split::Valid)]
    split: Split,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    decode: DecodeArgs,
    /// Example indices to inspect.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    ids: Vec<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a.common),
        Command::Train(a) => cmd_train(&a.common),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

// ---- configuration plumbing ------------------------------------------------

/// Resolve the effective config: defaults, then the config file, then named
/// flags, then trailing `key=value` overrides.
fn resolve_config(c: &Common) -> Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &c.variant {
        cfg.set("variant", v)?;
    }
    if let Some(s) = c.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(j) = c.jobs {
        cfg.set("jobs", &j.to_string())?;
    }
    if let Some(w) = c.width {
        cfg.set("beam_width", &w.to_string())?;
    }
    for ov in &c.overrides {
        let Some((key, value)) = ov.split_once('=') else {
            return Err(Error::Config(format!(
                "override `{ov}` is not of the form key=value; valid keys: {}",
                CONFIG_KEYS.join(", ")
            )));
        };
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

/// The canonical rendering of a resolved config, hashed into the manifest.
fn config_text(cfg: &TrainConfig) -> String {
    format!(
        "variant = {}\nd_emb = {}\nd_hidden = {}\nvocab_max = {}\nbatch_size = {}\n\
         lr = {}\nclip_norm = {}\nmax_epochs = {}\nmax_steps = {}\neval_every = {}\n\
         seed = {}\nbeam_width = {}\nmax_len = {}\njobs = {}\n",
        cfg.variant,
        cfg.d_emb,
        cfg.d_hidden,
        cfg.vocab_max,
        cfg.batch_size,
        cfg.lr,
        cfg.clip_norm,
        cfg.max_epochs,
        cfg.max_steps,
        cfg.eval_every,
        cfg.seed,
        cfg.beam_width,
        cfg.max_len,
        cfg.jobs
    )
}

fn data_dir(c: &Common) -> Result<PathBuf> {
    if let Some(dir) = &c.data_dir {
        return Ok(dir.clone());
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(Error::Config(format!(
            "no --data-dir given and {DATA_DIR_ENV} is unset"
        ))),
    }
}

/// Refuse variants that peek at the reference response unless the caller
/// opted in explicitly.
fn guard_oracle(variant: Variant, allowed: bool) -> Result<()> {
    if variant.is_oracle() && !allowed {
        return Err(Error::OracleRequired {
            variant: variant.label().to_string(),
        });
    }
    Ok(())
}

// ---- run manifest ----------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Record what a run consumed and produced: the resolved config and its
/// hash, the seed, and a content hash of every input file.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &TrainConfig,
    inputs: &[PathBuf],
    outputs: &[&str],
) -> Result<()> {
    let mut input_hashes = BTreeMap::new();
    for path in inputs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        input_hashes.insert(name, hash_file(path)?);
    }
    let text = config_text(cfg);
    let manifest = serde_json::json!({
        "command": command,
        "seed": cfg.seed,
        "config": text,
        "config_sha256": sha256_hex(text.as_bytes()),
        "inputs": input_hashes,
        "outputs": outputs,
    });
    let path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---- subcommands -----------------------------------------------------------

/// Raw `<split>.txt` dialogue files in the data directory become
/// `vocab.txt` plus tokenized `<split>.jsonl` files in the output directory.
/// The vocabulary and tf-idf statistics come from the training split alone.
fn cmd_prepare(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let data = data_dir(common)?;
    ensure_out_dir(&common.out_dir)?;

    let train_path = data.join("train.txt");
    let train_dialogues = parse_dialogues(&train_path)?;
    let vocab = Vocab::build(&train_dialogues, cfg.vocab_max)?;
    let tfidf = TfIdfModel::build(&train_dialogues);
    vocab.write(&common.out_dir.join("vocab.txt"))?;

    let mut inputs = vec![train_path];
    let mut outputs: Vec<String> = vec!["vocab.txt".into()];
    for split in [Split::Train, Split::Valid, Split::Test] {
        let raw = data.join(format!("{}.txt", split.stem()));
        if !raw.is_file() {
            continue;
        }
        let dialogues = if matches!(split, Split::Train) {
            train_dialogues.clone()
        } else {
            parse_dialogues(&raw)?
        };
        let mut examples = Vec::new();
        for d in &dialogues {
            examples.extend(make_examples(d, &vocab, &tfidf)?);
        }
        let out_name = format!("{}.jsonl", split.stem());
        write_examples_jsonl(&common.out_dir.join(&out_name), &examples)?;
        println!(
            "prepared {}: {} dialogues, {} examples",
            split.stem(),
            dialogues.len(),
            examples.len()
        );
        if !matches!(split, Split::Train) {
            inputs.push(raw);
        }
        outputs.push(out_name);
    }
    println!("vocabulary: {} entries", vocab.size());
    let output_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
    write_manifest(&common.out_dir, "prepare", &cfg, &inputs, &output_refs)
}

/// Train on a prepared directory (`vocab.txt`, `train.jsonl`, and optionally
/// `valid.jsonl`), then write `loss.csv` and `model.dckp`. When validation
/// perplexity was measured, the checkpoint holds the best-scoring parameters;
/// otherwise the final ones.
fn cmd_train(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    guard_oracle(cfg.variant, common.oracle)?;
    let data = data_dir(common)?;
    ensure_out_dir(&common.out_dir)?;

    let vocab = Vocab::read(&data.join("vocab.txt"))?;
    let train_path = data.join("train.jsonl");
    let train_ex = read_examples_jsonl(&train_path, &vocab)?;
    let valid_path = data.join("valid.jsonl");
    let mut inputs = vec![data.join("vocab.txt"), train_path];
    let valid_ex = if valid_path.is_file() {
        inputs.push(valid_path.clone());
        read_examples_jsonl(&valid_path, &vocab)?
    } else {
        Vec::new()
    };

    let mut model = Model::new(cfg.variant, cfg.d_emb, cfg.d_hidden, vocab.size(), cfg.seed)?;
    let outcome = train(&cfg, &mut model, &train_ex, &valid_ex)?;

    let csv_path = common.out_dir.join("loss.csv");
    std::fs::write(&csv_path, loss_csv(&outcome.history)).map_err(|e| Error::io(&csv_path, e))?;
    if let Some(best) = &outcome.best {
        best.apply(&mut model)?;
        println!(
            "best validation perplexity {:.4} at step {}",
            best.val_ppl, best.step
        );
    }
    checkpoint::save(&common.out_dir.join("model.dckp"), &model)?;
    let last = outcome.history.last().expect("at least one step ran");
    println!(
        "trained {} for {} steps; final batch loss {:.6}",
        cfg.variant, outcome.steps_run, last.train_loss
    );
    write_manifest(&common.out_dir, "train", &cfg, &inputs, &["loss.csv", "model.dckp"])
}

fn load_split(
    common: &Common,
    checkpoint_path: &Path,
    split: Split,
) -> Result<(Model, Vocab, Vec<DialogueExample>, Vec<PathBuf>)> {
    let data = data_dir(common)?;
    let model = checkpoint::load(checkpoint_path)?;
    guard_oracle(model.variant, common.oracle)?;
    let vocab_path = data.join("vocab.txt");
    let vocab = Vocab::read(&vocab_path)?;
    if vocab.size() != model.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the checkpoint was trained with {}",
            vocab.size(),
            model.vocab_size
        )));
    }
    let split_path = data.join(format!("{}.jsonl", split.stem()));
    let examples = read_examples_jsonl(&split_path, &vocab)?;
    let inputs = vec![checkpoint_path.to_path_buf(), vocab_path, split_path];
    Ok((model, vocab, examples, inputs))
}

fn decode_config(cfg: &TrainConfig) -> DecodeConfig {
    DecodeConfig {
        width: cfg.beam_width,
        max_len: cfg.max_len,
        jobs: cfg.jobs,
    }
}

/// Decode and score one split; writes `metrics.csv` and prints the table.
fn cmd_evaluate(args: &DecodeArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (model, vocab, examples, inputs) = load_split(&args.common, &args.checkpoint, args.split)?;
    ensure_out_dir(&args.common.out_dir)?;
    let (report, _records) = evaluate_model(&model, &examples, &vocab, decode_config(&cfg))?;
    let csv = report_csv(std::slice::from_ref(&report));
    let csv_path = args.common.out_dir.join("metrics.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    print!("{}", report_table(std::slice::from_ref(&report)));
    write_manifest(&args.common.out_dir, "evaluate", &cfg, &inputs, &["metrics.csv"])
}

/// Decode one split and write a JSON record per example to
/// `generations.jsonl`.
fn cmd_generate(args: &DecodeArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (model, vocab, examples, inputs) = load_split(&args.common, &args.checkpoint, args.split)?;
    ensure_out_dir(&args.common.out_dir)?;
    let (records, _cands) = generate_all(&model, &examples, &vocab, decode_config(&cfg))?;
    let mut body = String::new();
    for rec in &records {
        body.push_str(&serde_json::to_string(rec).expect("record serialization cannot fail"));
        body.push('\n');
    }
    let out_path = args.common.out_dir.join("generations.jsonl");
    std::fs::write(&out_path, body).map_err(|e| Error::io(&out_path, e))?;
    println!("wrote {} generations to {}", records.len(), out_path.display());
    write_manifest(&args.common.out_dir, "generate", &cfg, &inputs, &["generations.jsonl"])
}

/// Decode chosen examples and dump per-step switch probabilities and
/// fact-attention weights to `inspect.jsonl`.
fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let cfg = resolve_config(&args.decode.common)?;
    let (model, vocab, examples, inputs) =
        load_split(&args.decode.common, &args.decode.checkpoint, args.decode.split)?;
    ensure_out_dir(&args.decode.common.out_dir)?;
    let mut body = String::new();
    for &id in &args.ids {
        let ex = examples.get(id).ok_or(Error::IndexOutOfRange {
            op: "inspect",
            index: id,
            len: examples.len(),
        })?;
        let record = inspect_example(&model, ex, &vocab, id, cfg.beam_width, cfg.max_len)?;
        body.push_str(&serde_json::to_string(&record).expect("record serialization cannot fail"));
        body.push('\n');
    }
    let out_path = args.decode.common.out_dir.join("inspect.jsonl");
    std::fs::write(&out_path, body).map_err(|e| Error::io(&out_path, e))?;
    println!(
        "wrote {} inspection records to {}",
        args.ids.len(),
        out_path.display()
    );
    write_manifest(
        &args.decode.common.out_dir,
        "inspect",
        &cfg,
        &inputs,
        &["inspect.jsonl"],
    )
}
