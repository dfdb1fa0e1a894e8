//! Command-line interface: dataset generation, adapter fine-tuning,
//! experiment runs, and report summarization.
//!
//! Exit codes: 0 success, 1 invalid arguments, 2 I/O or file-format errors,
//! 3 runtime domain errors. Success paths write nothing to stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataset::{generate_gaussian_blobs, inject_label_noise, load_dataset, save_dataset};
use crate::embeddings::{load_embeddings, save_embeddings, synthesize_embeddings};
use crate::error::{Error, Result};
use crate::harness::{read_jsonl, run_experiment, write_jsonl, Strategy, TrainConfig};
use crate::xmodal::{load_adapters, save_adapters, train_adapters, AdapterPair};

#[derive(Parser, Debug)]
#[command(
    name = "dualprune",
    version,
    about = "Dynamic dataset pruning with dual supervision (task loss + cross-modality consistency)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset plus matching embedding tables.
    Gen(GenArgs),
    /// Fine-tune linear adapters on an embedding table.
    Adapt(AdaptArgs),
    /// Run a pruning experiment and stream per-epoch metrics to JSONL.
    Run(RunArgs),
    /// Summarize one or more metrics streams.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Samples per class
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    /// Number of classes
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Feature dimension (must be >= classes)
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Distance scale between class means
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    /// Within-class feature standard deviation
    #[arg(long, default_value_t = 1.0)]
    pub noise_std: f64,
    /// Fraction of labels to flip, in [0, 1]
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    /// Embedding dimension (must be >= classes)
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    /// Gaussian jitter added to each synthetic image embedding
    #[arg(long, default_value_t = 0.1)]
    pub embed_jitter: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output prefix; writes <prefix>.dpds, <prefix>.dpem, <prefix>.dpte
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Dataset file (DPDS or CSV)
    #[arg(long)]
    pub data: PathBuf,
    /// Image embedding file (DPEM)
    #[arg(long)]
    pub image_emb: PathBuf,
    /// Text embedding file (DPTE)
    #[arg(long)]
    pub text_emb: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output adapter file (DPAD)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Dataset file (DPDS or CSV)
    #[arg(long)]
    pub data: PathBuf,
    /// Image embedding file (DPEM)
    #[arg(long)]
    pub image_emb: PathBuf,
    /// Text embedding file (DPTE)
    #[arg(long)]
    pub text_emb: PathBuf,
    /// Adapter file (DPAD); identity adapters when absent
    #[arg(long)]
    pub adapters: Option<PathBuf>,
    /// dual | loss_only | random_dynamic | full_data
    #[arg(long, default_value = "dual")]
    pub strategy: String,
    /// Fraction of the dataset trained on per epoch, in (0, 1]
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay
    #[arg(long, default_value_t = 0.98)]
    pub lr_decay: f64,
    /// Weight of the consistency signal in the score loss
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub score_lr: f64,
    /// Score descent steps per epoch
    #[arg(long, default_value_t = 1)]
    pub score_steps: usize,
    /// Full loss-cache refresh period in epochs (0 disables)
    #[arg(long, default_value_t = 10)]
    pub refresh_every: usize,
    /// Initial full-dataset epochs that populate the loss cache
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Hidden-layer width; softmax regression when absent
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output metrics stream (.jsonl)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics stream to summarize; repeatable
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    /// table | csv
    #[arg(long, default_value = "table")]
    pub format: String,
}

impl Command {
    pub fn execute(&self) -> Result<()> {
        match self {
            Command::Gen(args) => cmd_gen(args),
            Command::Adapt(args) => cmd_adapt(args),
            Command::Run(args) => cmd_run(args),
            Command::Report(args) => cmd_report(args),
        }
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let clean = generate_gaussian_blobs(
        args.n_per_class,
        args.classes,
        args.dim,
        args.separation,
        args.noise_std,
        args.seed,
    )?;
    let ds = inject_label_noise(&clean, args.label_noise, args.seed.wrapping_add(1))
        .map_err(|e| e.with_context("--label-noise"))?;
    let table = synthesize_embeddings(
        &ds,
        args.embed_dim,
        1.0,
        args.embed_jitter,
        args.seed.wrapping_add(2),
    )
    .map_err(|e| e.with_context("--embed-dim/--embed-jitter"))?;

    let with_ext = |ext: &str| {
        let mut p = args.out_prefix.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let ds_path = with_ext(".dpds");
    let img_path = with_ext(".dpem");
    let txt_path = with_ext(".dpte");
    save_dataset(&ds, &ds_path)?;
    save_embeddings(&table, &img_path, &txt_path)?;
    println!("wrote {}", ds_path.display());
    println!("wrote {}", img_path.display());
    println!("wrote {}", txt_path.display());
    Ok(())
}

fn cmd_adapt(args: &AdaptArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let table = load_embeddings(&args.image_emb, &args.text_emb, ds.len(), ds.num_classes())?;
    let adapters = train_adapters(
        &table,
        &ds.observed_labels(),
        args.epochs,
        args.batch_size,
        args.lr,
        args.seed,
    )?;
    save_adapters(&adapters, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let strategy: Strategy = args.strategy.parse()?;
    let ds = load_dataset(&args.data)?;
    let table = load_embeddings(&args.image_emb, &args.text_emb, ds.len(), ds.num_classes())?;
    let adapters = match &args.adapters {
        Some(path) => load_adapters(path)?,
        None => AdapterPair::identity(table.embed_dim()),
    };
    let config = TrainConfig {
        selection_ratio: args.ratio,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learn_rate: args.lr,
        lr_decay: args.lr_decay,
        lambda: args.lambda,
        score_learn_rate: args.score_lr,
        steps_per_epoch: args.score_steps,
        refresh_every: args.refresh_every,
        warmup_epochs: args.warmup,
        strategy,
        hidden: args.hidden,
        init_scale: 0.1,
        rng_seed: args.seed,
    };
    let report = run_experiment(&config, &ds, &table, &adapters)?;
    write_jsonl(&report, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

struct ReportRow {
    name: String,
    final_accuracy: f64,
    forward: u64,
    backward: u64,
    noisy_fraction: f64,
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    if args.format != "table" && args.format != "csv" {
        return Err(Error::validation(format!(
            "unknown format {:?}; expected table or csv",
            args.format
        )));
    }
    let mut inputs = args.inputs.clone();
    inputs.sort();
    let mut rows = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let report = read_jsonl(path)?;
        rows.push(ReportRow {
            name: path.display().to_string(),
            final_accuracy: report.summary.final_accuracy,
            forward: report.summary.total_forward_passes,
            backward: report.summary.total_backward_updates,
            noisy_fraction: report.mean_post_warmup_noisy_fraction(),
        });
    }

    if args.format == "csv" {
        println!("run,final_accuracy,forward_passes,backward_updates,post_warmup_noisy_fraction");
        for r in &rows {
            println!(
                "{},{:.6},{},{},{:.6}",
                r.name, r.final_accuracy, r.forward, r.backward, r.noisy_fraction
            );
        }
    } else {
        let name_width = rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(3)
            .max(3);
        println!(
            "{:<name_width$}  {:>10}  {:>12}  {:>10}  {:>12}",
            "run", "final_acc", "forward", "backward", "noisy_frac"
        );
        for r in &rows {
            println!(
                "{:<name_width$}  {:>10.4}  {:>12}  {:>10}  {:>12.4}",
                r.name, r.final_accuracy, r.forward, r.backward, r.noisy_fraction
            );
        }
    }
    Ok(())
}
