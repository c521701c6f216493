use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tagcausal::backbone::BackboneKind;
use tagcausal::checkpoint::{load_checkpoint, save_checkpoint};
use tagcausal::data::{load_dataset, save_dataset};
use tagcausal::estimator::{Strategy, UploaderPool};
use tagcausal::metrics::{evaluate, EvalSpec, RunMeta};
use tagcausal::synth::{generate, intervened_split, GenConfig, InterventionSpec};
use tagcausal::sweep::{run_sweep, SweepConfig};
use tagcausal::train::{fit, TrainConfig};

/// Deconfounded tag recommendation lab: generate, split, train, eval, sweep.
#[derive(Parser)]
#[command(name = "tagcausal", version)]
struct Cli {
    /// Default output root when `--out` is omitted.
    #[arg(long, env = "TAGCAUSAL_OUT", default_value = "runs", global = true)]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a generator config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Intervened train/valid/test split of a two-topic dataset.
    Split {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        x: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Burn-in plus adjustment training.
    Train(TrainArgs),
    /// Score a checkpoint on a test split.
    Eval(EvalArgs),
    /// Run a factorial sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Training config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    backbone: Option<BackboneKind>,
    #[arg(long)]
    ns: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Training split whose uploaders form the sampling pool.
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    ns: usize,
    /// Comma-separated cutoffs.
    #[arg(long, default_value = "10,20", value_delimiter = ',')]
    k: Vec<usize>,
    /// Defaults to the strategy recorded in the checkpoint.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| tagcausal::Error::Io { path: path.into(), source: e })?;
    let value = serde_json::from_str(&text).map_err(tagcausal::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cli_root: &Path, out: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cli_root.join(name));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_generate(root: &Path, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg: GenConfig = read_json(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = generate(&cfg)?;
    let dir = out_dir(root, out, "dataset")?;
    save_dataset(&ds, &dir)?;
    log::info!("wrote {} UGCs, {} triplets to {}", ds.ugcs.len(), ds.triplets.len(), dir.display());
    Ok(())
}

fn cmd_split(root: &Path, data: PathBuf, x: u32, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let spec = InterventionSpec::new(x, seed);
    spec.validate()?;
    let ds = load_dataset(&data)?;
    let sp = intervened_split(&ds, &spec)?;
    let dir = out_dir(root, out, "split")?;
    save_dataset(&sp.train, &dir.join("train"))?;
    save_dataset(&sp.valid, &dir.join("valid"))?;
    save_dataset(&sp.test, &dir.join("test"))?;
    write_json(&dir.join("split.json"), &sp.manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
}

fn cmd_train(root: &Path, a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.strategy {
        cfg.strategy = s;
    }
    if let Some(b) = a.backbone {
        cfg.backbone = b;
    }
    if let Some(n) = a.ns {
        cfg.n_samples = n;
    }
    cfg.validate()?;
    let train = load_dataset(&a.train)?;
    let valid = a.valid.as_deref().map(load_dataset).transpose()?;
    let started = Instant::now();
    let out = fit(&train, valid.as_ref(), &cfg)?;
    let dir = out_dir(root, a.out, "train")?;
    save_checkpoint(&dir.join("checkpoint_best.json"), &out.model, &out.model_config, &out.best, Some(cfg.strategy))?;
    save_checkpoint(&dir.join("checkpoint_final.json"), &out.model, &out.model_config, &out.last, Some(cfg.strategy))?;
    write_json(&dir.join("run.json"), &out.manifest)?;
    write_json(&dir.join("timing.json"), &Timing { wall_seconds: started.elapsed().as_secs_f64() })?;
    log::info!("trained {} epochs; best adjustment epoch {}", out.manifest.epochs.len(), out.manifest.best_epoch);
    Ok(())
}

fn cmd_eval(root: &Path, a: EvalArgs) -> Result<()> {
    if a.ns == 0 {
        return Err(tagcausal::Error::Config { field: "ns".into(), msg: "must be >= 1".into() }.into());
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let test = load_dataset(&a.test)?;
    let pool_ds = load_dataset(&a.pool)?;
    let pool = UploaderPool::from_dataset(&pool_ds)?;
    let strategy = a.strategy.or(ck.strategy).unwrap_or(Strategy::DectagMc);
    let spec = EvalSpec { strategy, n_samples: a.ns, cutoffs: a.k.clone(), seed: a.seed };
    let mut m = evaluate(&ck.model, &ck.store, &test, &pool, &spec)?;
    let x = test
        .provenance
        .as_ref()
        .and_then(|p| p.pointer("/intervention/x"))
        .and_then(|v| v.as_u64())
        .map(|v| v as u32);
    m.meta = Some(RunMeta { strategy, backbone: ck.config.backbone, x, n_samples: a.ns, seed: a.seed });
    let dir = out_dir(root, a.out, "eval")?;
    write_json(&dir.join("metrics.json"), &m)?;
    for (k, v) in &m.recall_at {
        println!("R@{k}\t{v:.4}");
    }
    for (k, v) in &m.ndcg_at {
        println!("N@{k}\t{v:.4}");
    }
    Ok(())
}

fn cmd_sweep(root: &Path, config: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let cfg: SweepConfig = read_json(&config)?;
    let dir = out_dir(root, out, "sweep")?;
    let report = run_sweep(&cfg, &dir)?;
    for r in &report.summary {
        println!("{}\t{}\tX={}\tns={}\t{}\t{:.4} ± {:.4}", r.backbone, r.strategy, r.x, r.n_samples, r.metric, r.mean, r.std);
    }
    if !report.failed.is_empty() {
        bail!("{} sweep cells failed: {}", report.failed.len(), report.failed.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(&root, config, out, seed),
        Command::Split { data, x, seed, out } => cmd_split(&root, data, x, seed, out),
        Command::Train(a) => cmd_train(&root, a),
        Command::Eval(a) => cmd_eval(&root, a),
        Command::Sweep { config, out } => cmd_sweep(&root, config, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .find_map(|e| e.downcast_ref::<tagcausal::Error>())
                .is_some_and(tagcausal::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
