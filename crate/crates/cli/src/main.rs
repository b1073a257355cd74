//! `sgcap`: build sentence banks, train, caption and evaluate.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sgcap::bank::{self, SentenceBank};
use sgcap::inference::{self, FrameSet, GenerateConfig};
use sgcap::model::checkpoint;
use sgcap::noise::NoiseMode;
use sgcap::supervision::LossMode;
use sgcap::training::{self, TrainConfig};
use sgcap::{metrics, synth, Error};

#[derive(Parser)]
#[command(
    name = "sgcap",
    version,
    about = "Zero-shot video captioning trained on text alone"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Build an SGCB sentence bank from a tab-separated corpus.
    BuildBank(BuildBankArgs),
    /// Write a synthetic corpus, its references and frame files.
    SynthCorpus(SynthArgs),
    /// Train a captioning model on a sentence bank.
    Train(TrainArgs),
    /// Caption videos from SGCF frame files.
    Infer(InferArgs),
    /// Score candidate captions against references.
    Eval(EvalArgs),
    /// Print per-dimension variance and the effective dimension of a bank.
    AnalyzeVariance(VarianceArgs),
    /// Check that an SGCB, SGCF or SGCM file parses.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct BuildBankArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Accept `text<TAB>embedding` lines and derive token sets by stopword removal.
    #[arg(long)]
    heuristic_tags: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = synth::MAX_TEMPLATES)]
    templates: usize,
    #[arg(long, default_value_t = 500)]
    size: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, env = "SGCAP_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    output: PathBuf,
    /// Training log path; printed to stdout when absent.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "SGCAP_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// none | standard | scalar | element-wise
    #[arg(long)]
    noise: Option<NoiseMode>,
    /// mixture | sampled
    #[arg(long)]
    loss: Option<LossMode>,
    /// Supervise with the training caption only.
    #[arg(long)]
    no_pss: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    heldout_fraction: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Keep one noise draw per caption for the whole run.
    #[arg(long)]
    fixed_noise: bool,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    fusion_positions: bool,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// SGCF files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    frames: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    /// Captions path; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: PathBuf,
}

#[derive(Args)]
struct VarianceArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

#[derive(Args)]
struct ValidateArgs {
    path: PathBuf,
}

fn echo(out: &mut impl Write, command: &str, entries: &[(&str, String)]) -> Result<()> {
    let parts: Vec<String> = entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "# {command} {}", parts.join(" "))?;
    Ok(())
}

fn build_bank(args: &BuildBankArgs, out: &mut impl Write) -> Result<()> {
    echo(
        out,
        "build-bank",
        &[
            ("input", args.input.display().to_string()),
            ("output", args.output.display().to_string()),
            ("heuristic-tags", args.heuristic_tags.to_string()),
        ],
    )?;
    let file =
        fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let records = bank::read_corpus(BufReader::new(file), args.heuristic_tags)?;
    let bank = SentenceBank::build(records)?;
    bank.save(&args.output)?;
    writeln!(out, "sentences\t{}\ndim\t{}", bank.len(), bank.dim())?;
    Ok(())
}

fn synth_corpus(args: &SynthArgs, out: &mut impl Write) -> Result<()> {
    echo(
        out,
        "synth-corpus",
        &[
            ("templates", args.templates.to_string()),
            ("size", args.size.to_string()),
            ("dim", args.dim.to_string()),
            ("seed", args.seed.to_string()),
            ("output", args.output.display().to_string()),
        ],
    )?;
    let corpus = synth::generate(&synth::SynthConfig {
        size: args.size,
        dim: args.dim,
        templates: args.templates,
        seed: args.seed,
        ..synth::SynthConfig::default()
    })?;
    let frames_dir = args.output.join("frames");
    fs::create_dir_all(&frames_dir)?;
    fs::write(
        args.output.join("corpus.tsv"),
        bank::write_corpus(&corpus.records),
    )?;
    fs::write(args.output.join("references.tsv"), corpus.references())?;
    for v in &corpus.videos {
        v.save(frames_dir.join(format!("{}.sgcf", v.video_id)))?;
    }
    writeln!(
        out,
        "records\t{}\nvideos\t{}",
        corpus.records.len(),
        corpus.videos.len()
    )?;
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c.apply_kv(&text)?;
    }
    macro_rules! flag {
        ($($field:ident => $target:ident),*) => {
            $(if let Some(v) = args.$field { c.$target = v; })*
        };
    }
    flag!(
        seed => seed, sigma => sigma, lambda => lambda, k => k, noise => noise, loss => loss,
        lr => learning_rate, batch_size => batch_size, epochs => max_epochs, patience => patience,
        heldout_fraction => heldout_fraction, weight_decay => weight_decay, model_dim => model_dim,
        layers => layers, heads => heads, ffn_dim => ffn_dim, max_tokens => max_tokens,
        min_count => min_count
    );
    if let Some(g) = args.grad_clip {
        c.grad_clip = Some(g);
    }
    if args.no_pss {
        c.pss = false;
    }
    if args.fixed_noise {
        c.redraw_noise = false;
    }
    if args.fusion_positions {
        c.fusion_positions = true;
    }
    c.validate()?;
    Ok(c)
}

fn train(args: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let config = train_config(args)?;
    let mut entries = vec![("bank", args.bank.display().to_string())];
    entries.extend(config.entries());
    echo(out, "train", &entries)?;
    let bank = SentenceBank::load(&args.bank)?;
    let result = training::train(&bank, &config)?;
    checkpoint::save(&args.output, &result.params, &result.vocab)?;
    let tsv = result.log.to_tsv();
    match &args.log {
        Some(p) => fs::write(p, tsv)?,
        None => out.write_all(tsv.as_bytes())?,
    }
    writeln!(
        out,
        "# initial_loss={:.6} final_loss={:.6} best_epoch={}",
        result.log.initial_loss().unwrap_or(f64::NAN),
        result.log.final_loss().unwrap_or(f64::NAN),
        result.best_epoch
    )?;
    Ok(())
}

fn frame_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            inner.retain(|f| f.extension().is_some_and(|e| e == "sgcf"));
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!(Error::Empty("frame file list"));
    }
    Ok(files)
}

fn infer(args: &InferArgs, out: &mut impl Write) -> Result<()> {
    echo(
        out,
        "infer",
        &[
            ("bank", args.bank.display().to_string()),
            ("model", args.model.display().to_string()),
            ("k", args.k.to_string()),
            ("tau", args.tau.to_string()),
            ("beam", args.beam.to_string()),
            ("max-len", args.max_len.to_string()),
        ],
    )?;
    let bank = SentenceBank::load(&args.bank)?;
    let (params, vocab) = checkpoint::load(&args.model)?;
    let cfg = GenerateConfig {
        k: args.k,
        tau: args.tau,
        beam_size: args.beam,
        max_len: args.max_len,
    };
    let mut lines = String::new();
    for f in frame_files(&args.frames)? {
        let frames = FrameSet::load(&f).with_context(|| format!("reading {}", f.display()))?;
        let hyps = inference::generate(&frames, &bank, &params, &cfg)?;
        lines.push_str(&inference::format_caption(
            &frames.video_id,
            &hyps[0],
            &vocab,
        ));
        lines.push('\n');
    }
    match &args.output {
        Some(p) => fs::write(p, lines)?,
        None => out.write_all(lines.as_bytes())?,
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(metrics::read_records(BufReader::new(file))?)
}

fn eval(args: &EvalArgs, out: &mut impl Write) -> Result<()> {
    echo(
        out,
        "eval",
        &[
            ("candidates", args.candidates.display().to_string()),
            ("references", args.references.display().to_string()),
        ],
    )?;
    let pairs = metrics::pair_records(
        &read_records(&args.candidates)?,
        &read_records(&args.references)?,
    )?;
    let s = metrics::evaluate(&pairs)?;
    for (n, b) in s.bleu.iter().enumerate() {
        writeln!(out, "BLEU-{}\t{b:.6}", n + 1)?;
    }
    writeln!(out, "ROUGE-L\t{:.6}", s.rouge_l)?;
    match s.cider_d {
        Some(c) => writeln!(out, "CIDEr-D\t{c:.6}")?,
        None => writeln!(out, "CIDEr-D\t-")?,
    }
    Ok(())
}

fn analyze_variance(args: &VarianceArgs, out: &mut impl Write) -> Result<()> {
    echo(
        out,
        "analyze-variance",
        &[
            ("bank", args.bank.display().to_string()),
            ("gamma", args.gamma.to_string()),
        ],
    )?;
    let bank = SentenceBank::load(&args.bank)?;
    let stats = bank::compute_stats(&bank);
    let de = bank::effective_dimension(&stats.covariance_eigenvalues, args.gamma)?;
    writeln!(out, "effective_dimension\t{de}")?;
    writeln!(out, "mean_std\t{:.6}", stats.mean_std())?;
    writeln!(out, "dim\tvariance\tstd\teigenvalue")?;
    for (j, (v, e)) in stats
        .variance
        .iter()
        .zip(&stats.covariance_eigenvalues)
        .enumerate()
    {
        writeln!(out, "{j}\t{v:.6e}\t{:.6e}\t{e:.6e}", v.sqrt())?;
    }
    Ok(())
}

fn validate(args: &ValidateArgs, out: &mut impl Write) -> Result<()> {
    echo(
        out,
        "validate",
        &[("path", args.path.display().to_string())],
    )?;
    let bytes = fs::read(&args.path).with_context(|| format!("reading {}", args.path.display()))?;
    match bytes.get(..4) {
        Some(b"SGCB") => {
            let b = SentenceBank::from_bytes(&bytes)?;
            writeln!(out, "ok\tSGCB\tsentences={}\tdim={}", b.len(), b.dim())?;
        }
        Some(b"SGCF") => {
            let f = FrameSet::from_bytes(&bytes)?;
            writeln!(
                out,
                "ok\tSGCF\tvideo={}\tframes={}\tdim={}",
                f.video_id,
                f.len(),
                f.dim()
            )?;
        }
        Some(b"SGCM") => {
            let (p, v) = checkpoint::from_bytes(&bytes)?;
            writeln!(
                out,
                "ok\tSGCM\tparameters={}\tvocabulary={}",
                p.weights.param_count(),
                v.len()
            )?;
        }
        _ => bail!(Error::Format("unrecognized magic bytes".into())),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::BuildBank(a) => build_bank(a, &mut out),
        Command::SynthCorpus(a) => synth_corpus(a, &mut out),
        Command::Train(a) => train(a, &mut out),
        Command::Infer(a) => infer(a, &mut out),
        Command::Eval(a) => eval(a, &mut out),
        Command::AnalyzeVariance(a) => analyze_variance(a, &mut out),
        Command::Validate(a) => validate(a, &mut out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Numerical(_)) => 3,
        Some(e) if e.is_data_error() => 2,
        Some(_) => 1,
        None if err.chain().any(|e| e.is::<io::Error>()) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
