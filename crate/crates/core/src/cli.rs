//! Command-line surface: `simulate`, `run`, `ablate`, `eval`.
//!
//! Run settings are layered: built-in defaults, then the dataset's
//! `run.json` if present, then `--config`, then explicit flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ablation::run_ablation;
use crate::error::{Error, Result};
use crate::eval::span_f1;
use crate::io::{self, round_sig9};
use crate::local::BENCHMARK_K;
use crate::pipeline::{run, RunConfig};
use crate::synth::{generate, SynthConfig};
use crate::types::Split;

#[derive(Debug, Parser)]
#[command(
    name = "glode",
    version,
    about = "Global-local pseudo-label denoising lab"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark dataset.
    Simulate {
        /// JSON file with generator settings (missing keys use defaults).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory.
        out: PathBuf,
    },
    /// Train, assign pseudo labels and refine them; writes refined records
    /// and the per-epoch metrics stream.
    Run {
        /// Dataset directory (labels.json, embeddings.bin, records.jsonl).
        data: PathBuf,
        /// Output directory.
        out: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run every denoising strategy and write a comparison table.
    Ablate {
        /// Dataset directory (labels.json, embeddings.bin, records.jsonl).
        data: PathBuf,
        /// Output directory.
        out: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score the pseudo labels of a records file against gold labels.
    Eval {
        /// Records file whose pseudo labels are scored.
        records: PathBuf,
        /// JSON object with a `gold` array in record-id order (e.g. truth.json).
        gold: PathBuf,
        /// Label space file [default: labels.json next to the gold file].
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Split to score.
        #[arg(long, default_value = "target")]
        split: Split,
    },
}

/// Run settings. Every field is optional so the same shape serves as a
/// config file layer and as the flag layer.
#[derive(Debug, Default, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFlags {
    /// JSON file with run settings (same keys as these flags, snake_case).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Target-training epochs [default: 8].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Neighbors per local decision [default: 300; synthetic datasets ship 50].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Prototype EMA coefficient [default: 0.99].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Retention weight at the first epoch [default: 0.95].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_start: Option<f64>,
    /// Retention weight at the last epoch [default: 0.80].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_end: Option<f64>,
    /// Disable the prototype-based decision.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_global: Option<bool>,
    /// Disable the neighbor-based decision.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_local: Option<bool>,
    /// Keep only each level's most similar class as a direction.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_direction: Option<bool>,
    /// Force the O direction when O dominates a span's neighborhood.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_o_override: Option<bool>,
    /// Per-epoch drift of target embeddings toward their prototype [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    /// Fraction of target pseudo labels replaced by a wrong class [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flip_rate: Option<f64>,
    /// Dimension of the denoising space; larger inputs are projected [default: 128].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoise_dim: Option<usize>,
    /// Seed for batching, projection and flips [default: 42].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Probe learning rate [default: 0.1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Source-training epochs [default: 20].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_source: Option<usize>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl RunFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src {
                    cfg.$($dst)+ = v;
                }
            };
        }
        set!(epochs => epochs);
        set!(k => k);
        set!(alpha => alpha);
        set!(beta_start => beta_start);
        set!(beta_end => beta_end);
        set!(drift => drift_eta);
        set!(flip_rate => flip_rate);
        set!(denoise_dim => denoise_dim);
        set!(seed => train.seed);
        set!(learning_rate => train.learning_rate);
        set!(epochs_source => train.epochs_source);
        set!(batch_size => train.batch_size);
        if let Some(v) = self.no_global {
            cfg.flags.global = !v;
        }
        if let Some(v) = self.no_local {
            cfg.flags.local = !v;
        }
        set!(single_direction => flags.single_direction);
        set!(local_o_override => flags.local_o_override);
    }
}

/// Resolves the layered run configuration for a dataset directory.
pub fn resolve_run_config(data: &Path, flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let dataset_cfg = data.join(io::RUN_CONFIG_FILE);
    if dataset_cfg.exists() {
        io::read_json::<RunFlags>(&dataset_cfg)?.apply(&mut cfg);
    }
    if let Some(path) = &flags.config {
        io::read_json::<RunFlags>(path)?.apply(&mut cfg);
    }
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<String> {
    let mut cfg: SynthConfig = match config {
        Some(p) => io::read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let synth = generate(&cfg)?;
    ensure_dir(out)?;
    io::write_dataset(out, &synth.dataset)?;
    io::write_json(&out.join(io::TRUTH_FILE), &synth.truth)?;
    let recommended = RunFlags {
        k: Some(BENCHMARK_K),
        drift: Some(cfg.drift_eta),
        flip_rate: Some(cfg.flip_rate),
        seed: Some(cfg.seed),
        ..RunFlags::default()
    };
    io::write_json(&out.join(io::RUN_CONFIG_FILE), &recommended)?;

    let ds = &synth.dataset;
    let o = ds.labels.o_index();
    let o_count = ds.records.iter().filter(|r| r.gold == Some(o)).count();
    Ok(format!(
        "wrote {}: {} records (source {}, target {}, target_test {}), dim {}, {} classes, {} non-entity",
        out.display(),
        ds.records.len(),
        ds.count(Split::Source),
        ds.count(Split::Target),
        ds.count(Split::TargetTest),
        ds.dim(),
        ds.n_classes(),
        o_count,
    ))
}

pub fn cmd_run(data: &Path, out: &Path, flags: &RunFlags) -> Result<String> {
    let cfg = resolve_run_config(data, flags)?;
    let dataset = io::read_dataset(data)?;
    let output = run(dataset, &cfg)?;
    ensure_dir(out)?;
    io::write_atomic(
        &out.join(io::RECORDS_FILE),
        &io::encode_records(&output.dataset.records)?,
    )?;
    io::write_atomic(
        &out.join(io::METRICS_FILE),
        &io::encode_metrics(&output.metrics),
    )?;
    let summary = json!({
        "config": cfg,
        "initial_pseudo_f1": round_sig9(output.initial_pseudo_f1),
        "final_pseudo_f1": round_sig9(output.final_pseudo_f1()),
        "final_test_f1": round_sig9(output.final_test_f1()),
        "source_losses": output.source_losses.iter().copied().map(round_sig9).collect::<Vec<_>>(),
        "target_losses": output.target_losses.iter().copied().map(round_sig9).collect::<Vec<_>>(),
        "flipped": output.flipped.len(),
    });
    io::write_json(&out.join(io::SUMMARY_FILE), &summary)?;
    let mut report = format!("initial pseudo F1 {:.4}\n", output.initial_pseudo_f1);
    for m in &output.metrics {
        report.push_str(&format!(
            "epoch {} beta {:.4} pseudo F1 {:.4} probe test F1 {:.4} (skip {}, single {}, multi {})\n",
            m.epoch,
            m.beta,
            m.pseudo_f1,
            m.probe_test_f1,
            m.direction_stats.skip,
            m.direction_stats.single,
            m.direction_stats.multi
        ));
    }
    Ok(report.trim_end().to_string())
}

pub fn cmd_ablate(data: &Path, out: &Path, flags: &RunFlags) -> Result<String> {
    let cfg = resolve_run_config(data, flags)?;
    let dataset = io::read_dataset(data)?;
    let table = run_ablation(&cfg, &dataset)?;
    ensure_dir(out)?;
    let mut csv = String::from("strategy,final_pseudo_f1,final_test_f1,delta_vs_no_denoise\n");
    for row in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.strategy.name(),
            round_sig9(row.final_pseudo_f1),
            round_sig9(row.final_test_f1),
            round_sig9(row.delta_vs_no_denoise)
        ));
        let path = out.join(format!("{}.{}", row.strategy.name(), io::METRICS_FILE));
        io::write_atomic(&path, &io::encode_metrics(&row.metrics))?;
    }
    io::write_atomic(&out.join(io::ABLATION_FILE), csv.as_bytes())?;
    Ok(csv.trim_end().to_string())
}

#[derive(Deserialize)]
struct GoldSidecar {
    gold: Vec<Option<usize>>,
}

pub struct EvalOutput {
    pub report: crate::eval::EvalReport,
    pub warning: Option<String>,
}

pub fn cmd_eval(
    records: &Path,
    gold: &Path,
    labels: Option<&Path>,
    split: Split,
) -> Result<EvalOutput> {
    let labels_path = match labels {
        Some(p) => p.to_path_buf(),
        None => gold
            .parent()
            .unwrap_or(Path::new("."))
            .join(io::LABELS_FILE),
    };
    let labels = io::read_labels(&labels_path)?;
    let sidecar: GoldSidecar = io::read_json(gold)?;
    let lines = io::decode_records(records, &io::read_bytes(records)?, labels.len())?;
    if lines.len() != sidecar.gold.len() {
        return Err(Error::LengthMismatch {
            left: lines.len(),
            right: sidecar.gold.len(),
        });
    }
    let mut pred = Vec::new();
    let mut gold_labels = Vec::new();
    for (line, g) in lines.iter().zip(&sidecar.gold) {
        if line.split != split {
            continue;
        }
        if let (Some(p), Some(g)) = (&line.pseudo, *g) {
            if g >= labels.len() {
                return Err(Error::ConfigInvalid(format!("gold {g} out of range")));
            }
            pred.push(crate::vecmath::hard_label(p));
            gold_labels.push(g);
        }
    }
    let o = labels.o_index();
    let report = span_f1(&pred, &gold_labels, labels.len(), o)?;
    let warning = gold_labels
        .iter()
        .all(|g| *g == o)
        .then(|| "gold labels contain no entities; F1 is 0".to_string());
    Ok(EvalOutput { report, warning })
}

/// Parses `args`, runs the command and returns the process exit code.
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
    let result = match &cli.command {
        Command::Simulate { config, seed, out } => cmd_simulate(config.as_deref(), *seed, out),
        Command::Run { data, out, flags } => cmd_run(data, out, flags),
        Command::Ablate { data, out, flags } => cmd_ablate(data, out, flags),
        Command::Eval {
            records,
            gold,
            labels,
            split,
        } => cmd_eval(records, gold, labels.as_deref(), *split).map(|o| {
            if let Some(w) = o.warning {
                eprintln!("warning: {w}");
            }
            serde_json::to_string(&o.report).expect("report serializes")
        }),
    };
    match result {
        Ok(text) => {
            println!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
