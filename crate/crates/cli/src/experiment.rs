//! Dataset preparation, single runs, latent sweeps, and their artifacts.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use latentfuse::metrics::EvalReport;
use latentfuse::synth::{generate_dataset, read_dataset, split_dataset, TRAIN_VAL_TEST};
use latentfuse::training::{evaluate_samples, fit, history_json, EpochRecord};
use latentfuse::{AnyModel, BuildingSample, Error, InputSpec, ModelKind, Result};

use crate::config::ExperimentConfig;

/// Environment variable capping worker threads of a parallel sweep.
pub const THREADS_ENV: &str = "LATENTFUSE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<BuildingSample>,
    pub val: Vec<BuildingSample>,
    pub test: Vec<BuildingSample>,
}

/// Loads or generates the dataset and splits it by segment.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let samples = match &cfg.dataset_dir {
        Some(dir) => read_dataset(dir)?,
        None => generate_dataset(&cfg.dataset())?,
    };
    let (train, val, test) = split_dataset(&samples, TRAIN_VAL_TEST, cfg.seed)?;
    Ok(Splits { train, val, test })
}

/// The street branch only consumes segments with street imagery; samples
/// without street views are dropped for it unless `keep_zero_views` asks
/// for them to reach the model.
pub fn splits_for(kind: ModelKind, splits: &Splits, keep_zero_views: bool) -> (Splits, usize) {
    if kind != ModelKind::Street || keep_zero_views {
        return (splits.clone(), 0);
    }
    let keep = |s: &[BuildingSample]| s.iter().filter(|x| !x.street.is_empty()).cloned().collect::<Vec<_>>();
    let out = Splits { train: keep(&splits.train), val: keep(&splits.val), test: keep(&splits.test) };
    let dropped = splits.train.len() + splits.val.len() + splits.test.len()
        - (out.train.len() + out.val.len() + out.test.len());
    (out, dropped)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: EvalReport,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub checkpoint: Vec<u8>,
    /// Samples withheld from the model, see [`splits_for`].
    pub dropped: usize,
}

pub fn input_spec(cfg: &ExperimentConfig) -> InputSpec {
    InputSpec { mask_sat: cfg.mask_sat, mask_street: cfg.mask_street, patch_size: cfg.patch_size }
}

/// Trains the configured model on `splits` and evaluates it on the test
/// split. `model_seed` seeds initialization and batching.
pub fn train_and_evaluate(cfg: &ExperimentConfig, splits: &Splits, model_seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let (data, dropped) = splits_for(cfg.model, splits, cfg.zero_views);
    let input = input_spec(cfg);
    let mut model = AnyModel::<f32>::build(&cfg.model_spec(), model_seed)?;
    let mut train_cfg = cfg.train();
    train_cfg.seed = model_seed;
    let out = fit(&mut model, &data.train, &data.val, &input, &train_cfg)?;
    if data.test.is_empty() {
        return Err(Error::Contract("test split is empty".into()));
    }
    let report = evaluate_samples(&model, &data.test, &input)?;
    Ok(RunResult { report, history: out.history, best_epoch: out.best_epoch, checkpoint: out.best.to_bytes(), dropped })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    train_and_evaluate(cfg, &splits, cfg.seed)
}

/// Refuses to touch a non-empty directory unless `overwrite` is set.
pub fn prepare_out_dir(out: &Path, overwrite: bool) -> Result<()> {
    if out.exists() {
        if !out.is_dir() {
            return Err(Error::Config(format!("{} exists and is not a directory", out.display())));
        }
        if fs::read_dir(out)?.next().is_some() && !overwrite {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --overwrite to replace its contents",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Writes `model.ckpt`, `history.json`, `report.json`, `report.csv` and
/// the resolved `config.txt`.
pub fn write_run(out: &Path, cfg: &ExperimentConfig, result: &RunResult) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CHECKPOINT_FILE), &result.checkpoint)?;
    fs::write(out.join("history.json"), history_json(&result.history))?;
    fs::write(out.join("report.json"), result.report.to_json_string())?;
    fs::write(out.join("report.csv"), result.report.to_csv(cfg.model.as_str()))?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(())
}

/// Cartesian grid over configuration keys, written
/// `key=v1,v2;key2=w1,w2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, vs) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sweep axis `{part}` must read `key=v1,v2,...`")))?;
            let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(Error::Config(format!("sweep axis `{k}` has no values")));
            }
            axes.push((crate::config::normalize_key(k), values));
        }
        if axes.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        Ok(Self { axes })
    }

    /// Cells in row-major order (last axis fastest).
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells = vec![Vec::new()];
        for (k, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((k.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub index: usize,
    pub assignment: Vec<(String, String)>,
    pub config: ExperimentConfig,
    pub result: RunResult,
}

/// Worker count for parallel sweeps.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every grid cell on one shared dataset. Cell `i` seeds its model
/// with `seed ^ i`, so results do not depend on `threads`.
pub fn run_sweep(base: &ExperimentConfig, grid: &Grid, threads: usize) -> Result<Vec<CellResult>> {
    let cells = grid.cells();
    let configs: Vec<ExperimentConfig> = cells
        .iter()
        .map(|assign| {
            let mut c = base.clone();
            c.sweep = None;
            for (k, v) in assign {
                c.set(k, v)?;
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let splits = load_splits(base)?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= configs.len() {
            break;
        }
        let r = train_and_evaluate(&configs[i], &splits, base.seed ^ i as u64);
        slots.lock().expect("no worker panicked")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..threads.clamp(1, configs.len().max(1)) {
            s.spawn(work);
        }
        work();
    });

    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(CellResult {
                index: i,
                assignment: cells[i].clone(),
                config: configs[i].clone(),
                result: r.expect("every cell ran")?,
            })
        })
        .collect()
}

pub fn cell_dir_name(cell: &CellResult) -> String {
    let mut name = format!("cell_{:02}", cell.index);
    for (k, v) in &cell.assignment {
        name.push_str(&format!("_{k}-{v}"));
    }
    name
}

/// One row per cell: the swept values followed by the test mAPs.
pub fn heatmap_csv(grid: &Grid, cells: &[CellResult]) -> String {
    let mut s: String = grid.axes.iter().map(|(k, _)| format!("{k},")).collect();
    s.push_str("map_elements,map_materials,mean_map\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for c in cells {
        for (_, v) in &c.assignment {
            s.push_str(v);
            s.push(',');
        }
        let r = &c.result.report;
        s.push_str(&format!("{},{},{:.6}\n", fmt(r.map_elements), fmt(r.map_materials), r.mean_map()));
    }
    s
}

/// Per-cell artifacts under `out/<cell>/` plus `heatmap.csv` and a merged
/// `report.csv`.
pub fn write_sweep(out: &Path, grid: &Grid, cells: &[CellResult]) -> Result<()> {
    let mut merged = EvalReport::csv_header();
    merged.push('\n');
    for c in cells {
        let name = cell_dir_name(c);
        write_run(&out.join(&name), &c.config, &c.result)?;
        merged.push_str(&c.result.report.csv_row(&name));
        merged.push('\n');
    }
    fs::write(out.join("report.csv"), merged)?;
    fs::write(out.join("heatmap.csv"), heatmap_csv(grid, cells))?;
    Ok(())
}

/// Reads a `report.json`.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    EvalReport::from_json(&value)
}
