//! Operator CLI: dataset generation, training, evaluation, ablation,
//! gradient checking, and model inspection.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use phoenix_core::config::{RunConfigFile, SynthConfig, TrainConfig, Variant};
use phoenix_core::data::{load_split, write_synthetic, Label, Manifest, Split, Utterance};
use phoenix_core::error::{Error, Result};
use phoenix_core::gradcheck::finite_difference_check;
use phoenix_core::inspect::{mode_purity, prototype_report};
use phoenix_core::metrics::{accuracy_f1, eer, ScoreRecord};
use phoenix_core::trainer::{evaluate, train, EpochRecord, TrainedModel};

#[derive(Parser)]
#[command(
    name = "phoenix",
    version,
    about = "Geometry-aware codec-fake detector over feature sequences",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the deterministic synthetic multi-mode dataset.
    Gen(GenArgs),
    /// Train a detector on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Train and evaluate all four variants with a shared seed.
    Ablate(AblateArgs),
    /// Verify analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Report prototype geometry and (optionally) mode purity.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Config file providing the [synth] table (defaults used if absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory (created; must be absent or empty).
    #[arg(long)]
    out: PathBuf,
    /// Generation seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty destination.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (train and dev splits are used).
    #[arg(long)]
    manifest: PathBuf,
    /// Config file providing the [train] table (defaults used if absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant: full | euclidean | m1 | meanpool [default: full]
    #[arg(long)]
    variant: Option<String>,
    /// Training seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch count [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for checkpoint.phnx and train_log.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `phoenix train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Split to evaluate: train | dev | test [default: test]
    #[arg(long, default_value = "test")]
    split: String,
    /// Raw score dump destination (id, label, p_fake per line).
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset manifest (train/dev for training, test for the table).
    #[arg(long)]
    manifest: PathBuf,
    /// Config file providing the [train] table (defaults used if absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shared training seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// File to write the comparison table to (also printed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Config file; its [train] dims are the checked model [default: tiny probe config].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model-init and probe-data seed [default: 7]
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Variant to check [default: full]
    #[arg(long, default_value = "full")]
    variant: String,
    /// Input feature dimension D of the probe model [default: 8]
    #[arg(long)]
    feat_dim: Option<usize>,
    /// Backbone width d [default: 8]
    #[arg(long)]
    model_dim: Option<usize>,
    /// Ball dimension h [default: 4]
    #[arg(long)]
    ball_dim: Option<usize>,
    /// Evidence count M [default: 2]
    #[arg(long)]
    evidence: Option<usize>,
    /// Positive prototype count K [default: 2]
    #[arg(long)]
    modes: Option<usize>,
    /// Backbone layer count [default: 2]
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint to inspect.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest for mode-purity measurement (optional).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split used for purity [default: test]
    #[arg(long, default_value = "test")]
    split: String,
    /// Dump per-utterance responsibilities (id, slot, q row) to this file.
    #[arg(long)]
    dump_resp: Option<PathBuf>,
    /// Dump per-utterance attention rows (id, slot, weights) to this file.
    #[arg(long)]
    dump_attn: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::GradCheck(a) => cmd_grad_check(a),
        Cmd::Inspect(a) => cmd_inspect(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::load(p),
        None => Ok(RunConfigFile::default()),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_config(args.config.as_deref())?.synth;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.out.exists() {
        let occupied = fs::read_dir(&args.out)?.next().is_some();
        if occupied && !args.force {
            return Err(Error::config(format!(
                "destination {} is not empty (use --force to overwrite)",
                args.out.display()
            )));
        }
    }
    let summary = write_synthetic(&cfg, &args.out)?;
    println!("wrote dataset to {}", args.out.display());
    print!("{summary}");
    Ok(())
}

fn resolve_train_config(
    config: Option<&Path>,
    variant: Option<&str>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<TrainConfig> {
    let mut cfg = load_config(config)?.train;
    if let Some(v) = variant {
        cfg.variant = Variant::parse(v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_train_dev(manifest: &Path) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let manifest = Manifest::load(manifest)?;
    let train_data = load_split(&manifest, Split::Train)?;
    let dev_data = load_split(&manifest, Split::Dev)?;
    Ok((train_data, dev_data))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(
        args.config.as_deref(),
        args.variant.as_deref(),
        args.seed,
        args.epochs,
    )?;
    let (train_data, dev_data) = load_train_dev(&args.manifest)?;

    fs::create_dir_all(&args.out)?;
    let log_path = args.out.join("train_log.tsv");
    let mut log_file = BufWriter::new(File::create(&log_path)?);
    writeln!(log_file, "{}", EpochRecord::HEADER)?;
    log_file.flush()?;

    let trained = train(&cfg, &train_data, &dev_data, |rec| {
        // Lines land on disk as each epoch completes so an abort keeps a
        // partial log.
        let _ = writeln!(log_file, "{}", rec.render());
        let _ = log_file.flush();
        eprintln!("epoch {}/{}: total {:.6}", rec.epoch, cfg.epochs, rec.total);
    })?;

    let ckpt_path = args.out.join("checkpoint.phnx");
    trained.save(&ckpt_path)?;
    println!("checkpoint: {}", ckpt_path.display());
    println!("training log: {}", log_path.display());
    println!("selected threshold: {:.17e}", trained.threshold);
    Ok(())
}

/// Per-group metric rows: accuracy always; F1/EER only when the group has
/// both classes.
fn group_table(records: &[ScoreRecord], threshold: f64) -> Result<String> {
    let mut groups: Vec<String> = records.iter().map(|r| r.group.clone()).collect();
    groups.sort();
    groups.dedup();
    let mut out = String::from("group\tcount\tacc\tmacro_f1\teer\n");
    for g in groups {
        let subset: Vec<ScoreRecord> =
            records.iter().filter(|r| r.group == g).cloned().collect();
        let (acc, _) = accuracy_f1(&subset, threshold)?;
        let both = subset.iter().any(|r| r.label == Label::Fake)
            && subset.iter().any(|r| r.label == Label::Real);
        if both {
            let (_, f1) = accuracy_f1(&subset, threshold)?;
            let e = eer(&subset)?;
            out.push_str(&format!("{g}\t{}\t{acc:.4}\t{f1:.4}\t{e:.4}\n", subset.len()));
        } else {
            out.push_str(&format!("{g}\t{}\t{acc:.4}\t-\t-\n", subset.len()));
        }
    }
    Ok(out)
}

fn write_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        // 17 significant digits round-trip f64 exactly.
        writeln!(w, "{}\t{}\t{:.16e}", r.id, r.label, r.p_fake)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let trained = TrainedModel::load(&args.checkpoint)?;
    let manifest = Manifest::load(&args.manifest)?;
    let split = Split::parse(&args.split)?;
    let data = load_split(&manifest, split)?;
    let records = evaluate(&trained.model, &data)?;

    let (acc, f1) = accuracy_f1(&records, trained.threshold)?;
    let e = eer(&records)?;
    println!("split: {split}  utterances: {}", records.len());
    println!("threshold (validation-selected): {:.17e}", trained.threshold);
    println!("accuracy: {acc:.4}");
    println!("macro_f1: {f1:.4}");
    println!("eer: {e:.4}");
    print!("{}", group_table(&records, trained.threshold)?);

    if let Some(path) = &args.scores_out {
        write_scores(&records, path)?;
        println!("scores written to {}", path.display());
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let base = resolve_train_config(args.config.as_deref(), None, args.seed, None)?;
    let (train_data, dev_data) = load_train_dev(&args.manifest)?;
    let manifest = Manifest::load(&args.manifest)?;
    let test_data = load_split(&manifest, Split::Test)?;

    let mut table = String::from("variant\tacc\tmacro_f1\teer\tthreshold\n");
    for variant in Variant::ALL {
        let cfg = TrainConfig { variant, ..base.clone() };
        eprintln!("training variant {} (seed {})", variant.as_str(), cfg.seed);
        let trained = train(&cfg, &train_data, &dev_data, |rec| {
            eprintln!("  epoch {}/{}: total {:.6}", rec.epoch, cfg.epochs, rec.total);
        })?;
        let records = evaluate(&trained.model, &test_data)?;
        let (acc, f1) = accuracy_f1(&records, trained.threshold)?;
        let e = eer(&records)?;
        table.push_str(&format!(
            "{}\t{acc:.4}\t{f1:.4}\t{e:.4}\t{:.6}\n",
            variant.as_str(),
            trained.threshold
        ));
    }
    print!("{table}");
    if let Some(path) = &args.out {
        fs::write(path, &table)?;
        println!("table written to {}", path.display());
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfigFile::load(p)?.train,
        None => TrainConfig {
            feat_dim: 8,
            model_dim: 8,
            ball_dim: 4,
            evidence: 2,
            modes: 2,
            layers: 2,
            ..TrainConfig::default()
        },
    };
    cfg.variant = Variant::parse(&args.variant)?;
    if let Some(v) = args.feat_dim {
        cfg.feat_dim = v;
    }
    if let Some(v) = args.model_dim {
        cfg.model_dim = v;
    }
    if let Some(v) = args.ball_dim {
        cfg.ball_dim = v;
    }
    if let Some(v) = args.evidence {
        cfg.evidence = v;
    }
    if let Some(v) = args.modes {
        cfg.modes = v;
    }
    if let Some(v) = args.layers {
        cfg.layers = v;
    }
    cfg.validate()?;

    let report = finite_difference_check(&cfg, args.seed)?;
    print!("{}", report.render());
    if !report.passed() {
        return Err(Error::numeric(format!(
            "gradient check failed: max relative error {:.3e} ≥ {:.1e}",
            report.max_rel, report.threshold
        )));
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let trained = TrainedModel::load(&args.checkpoint)?;
    let report = prototype_report(&trained.model)?;
    print!("{}", report.render());

    if let Some(manifest_path) = &args.manifest {
        let manifest = Manifest::load(manifest_path)?;
        let split = Split::parse(&args.split)?;
        let data = load_split(&manifest, split)?;
        let purity = mode_purity(&trained.model, &data)?;
        print!("{}", purity.render());

        if args.dump_resp.is_some() || args.dump_attn.is_some() {
            let mut resp_w = match &args.dump_resp {
                Some(p) => Some(BufWriter::new(File::create(p)?)),
                None => None,
            };
            let mut attn_w = match &args.dump_attn {
                Some(p) => Some(BufWriter::new(File::create(p)?)),
                None => None,
            };
            for u in &data {
                let s = trained.model.score(&u.feats, u.t);
                let (m, k) = (s.evidence, s.modes);
                if let Some(w) = resp_w.as_mut() {
                    for mi in 0..m {
                        let row: Vec<String> =
                            (0..k).map(|ki| format!("{:.16e}", s.resp[mi * k + ki])).collect();
                        writeln!(w, "{}\t{}\t{}", u.id, mi, row.join("\t"))?;
                    }
                }
                if let Some(w) = attn_w.as_mut() {
                    for mi in 0..m {
                        let row: Vec<String> =
                            (0..u.t).map(|t| format!("{:.16e}", s.attn[mi * u.t + t])).collect();
                        writeln!(w, "{}\t{}\t{}", u.id, mi, row.join("\t"))?;
                    }
                }
            }
            if let Some(mut w) = resp_w {
                w.flush()?;
            }
            if let Some(mut w) = attn_w {
                w.flush()?;
            }
        }
    }
    Ok(())
}
