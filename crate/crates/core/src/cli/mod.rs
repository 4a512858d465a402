//! Command-line operations: train, separate, evaluate, bench, ablate.

pub mod config;
pub mod experiments;
pub mod separate;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_wav, save_wav, WavFormat};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, D2Net};

pub use config::{Preset, RunConfig};
pub use experiments::{
    ablate, ablation_table, bench, bench_table, evaluate_mixture_baseline, evaluate_model, AblationRow, BenchRow,
};
pub use separate::{separate_audio, separate_channels};
pub use train::{evaluation_corpus, mean_loss, train, training_corpus, EpochLog, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "d2net", version, about = "Dilated GRU / dilated grouped convolution source separation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a corpus and write the best-validation checkpoint.
    Train(ConfigArgs),
    /// Split a mixture WAV into one WAV per source.
    Separate(SeparateArgs),
    /// Score a checkpoint on a corpus.
    Evaluate(EvaluateArgs),
    /// Time forward passes across GRU dilations and worker counts.
    Bench(BenchArgs),
    /// Score truncated copies of a trained model.
    Ablate(AblateArgs),
}

#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// key=value config file, applied after the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Same GRU dilation for every block.
    #[arg(long)]
    pub gru_dilation: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gru_dilations: Option<Vec<usize>>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub block_variant: Option<String>,
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Use the generated desk corpus.
    #[arg(long)]
    pub synth: bool,
    /// Directory of `<track>/<source>.wav`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(self.preset.unwrap_or(Preset::Desk));
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
            if let Some(p) = self.preset {
                // explicit flag wins over a preset line in the file
                if cfg.preset != p {
                    cfg = RunConfig::preset(p);
                    cfg.apply_text(&text.lines().filter(|l| !l.trim_start().starts_with("preset")).collect::<Vec<_>>().join("\n"))?;
                }
            }
        }
        if let Some(n) = self.blocks {
            cfg.set_blocks(n);
        }
        if let Some(k) = self.gru_dilation {
            cfg.model.gru_dilations = vec![k; cfg.model.num_blocks];
        }
        if let Some(list) = &self.gru_dilations {
            cfg.model.gru_dilations = list.clone();
        }
        if let Some(v) = &self.block_variant {
            cfg.set("block_variant", v)?;
        }
        if let Some(c) = self.clip_seconds {
            cfg.set("clip_seconds", &c.to_string())?;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.synth {
            cfg.synth = true;
        }
        if let Some(c) = &self.corpus {
            cfg.corpus = Some(c.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory, one `<source>.wav` per source.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write 16-bit PCM instead of 32-bit float.
    #[arg(long)]
    pub pcm16: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also score the mixture-as-estimate baseline.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub dilations: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub worker_counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8192")]
    pub frames: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Block counts to keep; defaults to every count from 0 to all.
    #[arg(long, value_delimiter = ',')]
    pub keep: Option<Vec<usize>>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log");
    out.with_file_name(name)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Output directory for report-style commands: `--out` if given, else `reports`.
fn report_dir(args: &ConfigArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from("reports"))
}

fn describe(cfg: &RunConfig) -> Result<()> {
    println!("unit\tkind\tinput\toutput\tgroups");
    for row in cfg.model.layer_table() {
        println!("{}\t{}\t{}\t{}\t{}", row.unit, row.kind, row.input, row.output, row.groups);
    }
    println!("parameters\t{}", cfg.model.param_count());
    Ok(())
}

pub fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if cfg.preset == Preset::Paper {
        println!("paper-scale architecture (constructed, not trained):");
        return describe(&cfg);
    }
    let corpus = training_corpus(&cfg)?;
    let log = log_path(&cfg.out);
    let outcome = train(&cfg, &corpus, Some(&log), |e| {
        println!(
            "epoch {}\ttrain {:.5}\tval {:.5}\tgrad {:.3}\t{:.1}s",
            e.epoch, e.train_loss, e.val_loss, e.grad_norm, e.seconds
        );
    })?;
    println!(
        "checkpoint {} (epoch {}, val loss {:.5}); train loss {:.5} -> {:.5}; log {}",
        cfg.out.display(),
        outcome.checkpoint.meta.epoch,
        outcome.checkpoint.meta.val_loss,
        outcome.initial_loss(),
        outcome.final_loss(),
        log.display()
    );
    Ok(())
}

pub fn cmd_separate(args: &SeparateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = ckpt.network()?;
    let mix = load_wav(&args.input)?;
    let outputs = separate_audio(&net, &ckpt.stft, &mix, args.workers.max(1))?;
    create_dir(&args.out)?;
    let format = if args.pcm16 { WavFormat::Pcm16 } else { WavFormat::Float32 };
    for (name, audio) in ckpt.model.sources.iter().zip(&outputs) {
        let path = args.out.join(format!("{name}.wav"));
        save_wav(&path, audio, format)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn eval_corpus_for(ckpt: &Checkpoint, args: &ConfigArgs) -> Result<Vec<crate::data::SourceSet>> {
    let mut cfg = args.resolve()?;
    cfg.stft = ckpt.stft;
    evaluation_corpus(&cfg)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = ckpt.network()?;
    let corpus = eval_corpus_for(&ckpt, &args.config)?;
    let workers = args.config.resolve()?.workers;
    let report = evaluate_model(&net, &ckpt.stft, &corpus, workers)?;
    let dir = report_dir(&args.config);
    create_dir(&dir)?;
    write(&dir.join("scores.tsv"), &report.to_tsv())?;
    write(&dir.join("summary.json"), &report.to_json())?;
    write(&dir.join("heatmap.tsv"), &report.heatmap_tsv())?;
    let baseline = if args.baseline {
        let b = evaluate_mixture_baseline(&corpus)?;
        write(&dir.join("baseline.json"), &b.to_json())?;
        Some(b)
    } else {
        None
    };
    println!("source\tmedian_sdr\tsir\tsar\tisr{}", if baseline.is_some() { "\tmixture_sdr" } else { "" });
    for (i, m) in report.medians.iter().enumerate() {
        let extra = baseline.as_ref().map_or(String::new(), |b| format!("\t{:.3}", b.medians[i].sdr));
        println!("{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}{extra}", m.source, m.sdr, m.sir, m.sar, m.isr);
    }
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let rows = bench(&cfg.model, &args.dilations, &args.worker_counts, &args.frames, args.runs, cfg.train.seed)?;
    let table = bench_table(&rows);
    print!("{table}");
    if let Some(out) = &args.config.out {
        write(out, &table)?;
    }
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let corpus = eval_corpus_for(&ckpt, &args.config)?;
    let keeps = args.keep.clone().unwrap_or_else(|| (0..=ckpt.model.num_blocks).collect());
    let workers = args.config.resolve()?.workers;
    let rows = ablate(&ckpt, &corpus, &keeps, workers)?;
    let table = ablation_table(&rows);
    print!("{table}");
    let dir = report_dir(&args.config);
    create_dir(&dir)?;
    write(&dir.join("ablation.tsv"), &table)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Separate(a) => cmd_separate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Network from a checkpoint file, for library users.
pub fn load_network(path: &Path) -> Result<(D2Net<f32>, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((ckpt.network()?, ckpt))
}
