//! Factorial sweeps over intervention strength or sample count.
//!
//! Each (backbone, strategy, X, Nˢ, seed) cell trains and evaluates one
//! model and writes its own result directory. A ledger of finished cells
//! makes a sweep resumable; the CSV reports are rebuilt from the cell files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneKind;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::Strategy;
use crate::metrics::{evaluate, EvalSpec, Metrics, RunMeta};
use crate::stats;
use crate::synth::{generate, intervened_split, GenConfig, InterventionSpec};
use crate::train::{fit, TrainConfig};

pub const SWEEP_SCHEMA: u32 = 1;
pub const DEFAULT_X: [u32; 3] = [1, 3, 5];
pub const DEFAULT_NS: [usize; 6] = [2, 5, 10, 25, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Vary X with the configured strategies.
    Intervention,
    /// Vary Nˢ for the Monte-Carlo strategy at a fixed X.
    Ns,
}

fn d_mode() -> SweepMode {
    SweepMode::Intervention
}
fn d_x_values() -> Vec<u32> {
    DEFAULT_X.to_vec()
}
fn d_ns_values() -> Vec<usize> {
    DEFAULT_NS.to_vec()
}
fn d_ns_x() -> u32 {
    3
}
fn d_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn d_backbones() -> Vec<BackboneKind> {
    vec![BackboneKind::Nfm]
}
fn d_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn d_fractions() -> [f64; 3] {
    [0.5, 0.1, 0.4]
}
fn d_cutoffs() -> Vec<usize> {
    vec![10, 20]
}
fn d_eval_ns() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub generator: GenConfig,
    #[serde(default = "d_mode")]
    pub mode: SweepMode,
    #[serde(default = "d_x_values")]
    pub x_values: Vec<u32>,
    #[serde(default = "d_ns_values")]
    pub ns_values: Vec<usize>,
    /// X used by the Nˢ sweep.
    #[serde(default = "d_ns_x")]
    pub ns_x: u32,
    #[serde(default = "d_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "d_backbones")]
    pub backbones: Vec<BackboneKind>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_fractions")]
    pub split_fractions: [f64; 3],
    #[serde(default = "d_cutoffs")]
    pub cutoffs: Vec<usize>,
    /// Nˢ at prediction time in the intervention sweep.
    #[serde(default = "d_eval_ns")]
    pub eval_ns: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed required"));
        }
        if self.backbones.is_empty() {
            return Err(Error::config("backbones", "at least one backbone required"));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::config("cutoffs", "cutoffs must be non-empty and >= 1"));
        }
        if self.eval_ns == 0 {
            return Err(Error::config("eval_ns", "must be >= 1"));
        }
        match self.mode {
            SweepMode::Intervention => {
                if self.x_values.is_empty() {
                    return Err(Error::config("x_values", "at least one X required"));
                }
                if self.strategies.is_empty() {
                    return Err(Error::config("strategies", "at least one strategy required"));
                }
                for (i, &x) in self.x_values.iter().enumerate() {
                    InterventionSpec { x, split_fractions: self.split_fractions, seed: 0, total: None }
                        .validate()
                        .map_err(|_| Error::config(format!("x_values[{i}]"), format!("{x} not in [1, 9]")))?;
                }
            }
            SweepMode::Ns => {
                if self.ns_values.is_empty() || self.ns_values.contains(&0) {
                    return Err(Error::config("ns_values", "values must be non-empty and >= 1"));
                }
                InterventionSpec { x: self.ns_x, split_fractions: self.split_fractions, seed: 0, total: None }.validate()?;
            }
        }
        Ok(())
    }

    /// Cells in canonical order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &backbone in &self.backbones {
            match self.mode {
                SweepMode::Intervention => {
                    for &strategy in &self.strategies {
                        for &x in &self.x_values {
                            for &seed in &self.seeds {
                                out.push(Cell { backbone, strategy, x, n_samples: self.train.n_samples, seed });
                            }
                        }
                    }
                }
                SweepMode::Ns => {
                    for &n_samples in &self.ns_values {
                        for &seed in &self.seeds {
                            out.push(Cell { backbone, strategy: Strategy::DectagMc, x: self.ns_x, n_samples, seed });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub backbone: BackboneKind,
    pub strategy: Strategy,
    pub x: u32,
    pub n_samples: usize,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("{}-{}-x{}-ns{}-s{}", self.backbone, self.strategy, self.x, self.n_samples, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CellStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LedgerEntry {
    cell: String,
    status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub backbone: BackboneKind,
    pub strategy: Strategy,
    #[serde(rename = "X")]
    pub x: u32,
    pub n_samples: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Mean and standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub schema_version: u32,
    pub backbone: BackboneKind,
    pub strategy: Strategy,
    #[serde(rename = "X")]
    pub x: u32,
    pub n_samples: usize,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub failed: Vec<String>,
    /// Cells run by this invocation (the rest came from the ledger).
    pub ran: Vec<String>,
}

impl SweepReport {
    pub fn mean(&self, backbone: BackboneKind, strategy: Strategy, x: u32, n_samples: usize, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.backbone == backbone && r.strategy == strategy && r.x == x && r.n_samples == n_samples && r.metric == metric)
            .map(|r| r.mean)
    }
}

fn metric_names(cutoffs: &[usize]) -> Vec<(String, bool, usize)> {
    let mut v = Vec::new();
    for &k in cutoffs {
        v.push((format!("R@{k}"), true, k));
    }
    for &k in cutoffs {
        v.push((format!("N@{k}"), false, k));
    }
    v
}

fn read_ledger(path: &Path) -> Result<BTreeMap<String, CellStatus>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        // A torn final line from an interrupted write is ignored.
        if let Ok(e) = serde_json::from_str::<LedgerEntry>(line) {
            out.insert(e.cell, e.status);
        }
    }
    Ok(out)
}

fn append_ledger(path: &Path, entry: &LedgerEntry) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Train and evaluate one cell on a prepared split.
pub fn run_cell(cfg: &SweepConfig, cell: &Cell, train: &Dataset, valid: &Dataset, test: &Dataset) -> Result<(Metrics, crate::train::RunManifest)> {
    let tc = TrainConfig {
        backbone: cell.backbone,
        strategy: cell.strategy,
        n_samples: cell.n_samples,
        seed: cell.seed,
        ..cfg.train.clone()
    };
    let out = fit(train, Some(valid), &tc)?;
    let eval_ns = match cfg.mode {
        SweepMode::Intervention => cfg.eval_ns,
        SweepMode::Ns => cell.n_samples,
    };
    let spec = EvalSpec {
        strategy: cell.strategy,
        n_samples: eval_ns,
        cutoffs: cfg.cutoffs.clone(),
        seed: crate::seed::derive(cell.seed, "test", &[]),
    };
    let mut m = evaluate(&out.model, &out.best, test, &out.pool, &spec)?;
    m.meta = Some(RunMeta {
        strategy: cell.strategy,
        backbone: cell.backbone,
        x: Some(cell.x),
        n_samples: eval_ns,
        seed: cell.seed,
    });
    Ok((m, out.manifest))
}

/// Run (or resume) every cell of `cfg` on `dataset`, writing under `out`.
pub fn run_cells(dataset: &Dataset, cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    cfg.validate()?;
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let ledger_path = out.join("ledger.jsonl");
    let ledger = read_ledger(&ledger_path)?;
    let mut report = SweepReport::default();
    let mut splits: BTreeMap<(u32, u64), crate::synth::Splits> = BTreeMap::new();
    for cell in cfg.cells() {
        let key = cell.key();
        let dir = cells_dir.join(&key);
        if ledger.get(&key) == Some(&CellStatus::Done) && dir.join("metrics.json").exists() {
            continue;
        }
        if let std::collections::btree_map::Entry::Vacant(e) = splits.entry((cell.x, cell.seed)) {
            let spec = InterventionSpec { x: cell.x, split_fractions: cfg.split_fractions, seed: cell.seed, total: None };
            e.insert(intervened_split(dataset, &spec)?);
        }
        let sp = &splits[&(cell.x, cell.seed)];
        log::info!("sweep cell {key}");
        let result = run_cell(cfg, &cell, &sp.train, &sp.valid, &sp.test).and_then(|(m, run)| {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_json(&dir.join("run.json"), &run)?;
            write_json(&dir.join("metrics.json"), &m)
        });
        match result {
            Ok(()) => append_ledger(&ledger_path, &LedgerEntry { cell: key.clone(), status: CellStatus::Done, error: None })?,
            Err(err) => {
                log::warn!("sweep cell {key} failed: {err}");
                append_ledger(
                    &ledger_path,
                    &LedgerEntry { cell: key.clone(), status: CellStatus::Failed, error: Some(err.to_string()) },
                )?;
                report.failed.push(key.clone());
            }
        }
        report.ran.push(key);
    }
    collect(cfg, out, &mut report)?;
    Ok(report)
}

fn collect(cfg: &SweepConfig, out: &Path, report: &mut SweepReport) -> Result<()> {
    let names = metric_names(&cfg.cutoffs);
    let mut seen = BTreeSet::new();
    for cell in cfg.cells() {
        if !seen.insert(cell) {
            continue;
        }
        let path = out.join("cells").join(cell.key()).join("metrics.json");
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Metrics = serde_json::from_str(&text)?;
        for (name, is_recall, k) in &names {
            let value = if *is_recall { m.recall(*k) } else { m.ndcg(*k) };
            if let Some(value) = value {
                report.rows.push(SweepRow {
                    schema_version: SWEEP_SCHEMA,
                    backbone: cell.backbone,
                    strategy: cell.strategy,
                    x: cell.x,
                    n_samples: cell.n_samples,
                    seed: cell.seed,
                    metric: name.clone(),
                    value,
                });
            }
        }
    }
    let mut groups: BTreeMap<(BackboneKind, Strategy, u32, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &report.rows {
        let mi = names.iter().position(|(n, _, _)| *n == r.metric).unwrap();
        groups.entry((r.backbone, r.strategy, r.x, r.n_samples, mi)).or_default().push(r.value);
    }
    report.summary = groups
        .into_iter()
        .map(|((backbone, strategy, x, n_samples, mi), v)| SummaryRow {
            schema_version: SWEEP_SCHEMA,
            backbone,
            strategy,
            x,
            n_samples,
            metric: names[mi].0.clone(),
            n: v.len(),
            mean: stats::mean(&v),
            std: stats::std_dev(&v),
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &report.rows)?;
    write_csv(&out.join("summary.csv"), &report.summary)
}

fn write_csv<T: Serialize>(path: &PathBuf, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Intervention-strength sweep on an existing dataset.
pub fn sweep_intervention(dataset: &Dataset, cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    let cfg = SweepConfig { mode: SweepMode::Intervention, ..cfg.clone() };
    run_cells(dataset, &cfg, out)
}

/// Nˢ sweep of the Monte-Carlo strategy on an existing dataset.
pub fn sweep_ns(dataset: &Dataset, cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    let cfg = SweepConfig { mode: SweepMode::Ns, ..cfg.clone() };
    run_cells(dataset, &cfg, out)
}

/// Generate the configured dataset and run the sweep.
pub fn run_sweep(cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("sweep_config.json"), cfg)?;
    let ds = generate(&cfg.generator)?;
    run_cells(&ds, cfg, out)
}
