//! Command implementations behind the `relkd` binary.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::eval::{verify_embeddings, EvalError, PairSet};
use crate::gradcheck::{self, CheckRow};
use crate::harness::{
    generate_dataset, prepare, run_ablation, summarize, train_prepared, EpochReport, HarnessError,
    InstanceMode, Variant,
};
use crate::io::{self, IoError};
use crate::math::Mat64;
use crate::occlusion::{baseline_inpaint, OcclusionError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_)
            | HarnessError::EmptyIdentity(_)
            | HarnessError::Occlusion(OcclusionError::InfeasibleSpec(_)) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Reads a dataset directory; a missing or malformed one is a validation error.
fn load_dataset(dir: &Path) -> Result<crate::harness::SyntheticIdentityDataset, CliError> {
    io::load_dataset(dir).map_err(|e| CliError::Validation(format!("cannot load dataset: {e}")))
}

fn echo_config(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    io::create_dir(out)?;
    io::write_key_values(&out.join("config.txt"), &cfg.to_entries())?;
    Ok(())
}

fn inpainted_inputs(ds: &crate::harness::SyntheticIdentityDataset) -> Result<Mat64, CliError> {
    let px = ds.config.raster_side * ds.config.raster_side;
    let mut m = Mat64::zeros(ds.samples.len(), px);
    for (i, s) in ds.samples.iter().enumerate() {
        let filled = baseline_inpaint(&s.masked.masked, &s.masked.mask)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        for (dst, &p) in m.row_mut(i).iter_mut().zip(filled.pixels()) {
            *dst = p as f64;
        }
    }
    Ok(m)
}

fn write_pairs(path: &Path, pairs: &PairSet) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = pairs
        .pairs()
        .iter()
        .map(|&(a, b, same)| vec![a.to_string(), b.to_string(), u8::from(same).to_string()])
        .collect();
    io::write_csv(path, &["a", "b", "same"], &rows)?;
    Ok(())
}

fn read_pairs(path: &Path, n: usize) -> Result<PairSet, CliError> {
    let (_, rows) = io::read_csv(path).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let field = |k: usize| -> Result<usize, CliError> {
            row.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| {
                CliError::Validation(format!("{}: bad row {}", path.display(), r + 1))
            })
        };
        let (a, b, same) = (field(0)?, field(1)?, field(2)?);
        if a >= n || b >= n {
            return Err(EvalError::IndexRange(a.max(b), n).into());
        }
        pairs.push((a, b, same != 0));
    }
    Ok(PairSet::new(pairs)?)
}

/// Generates the dataset into `out` with its manifest and evaluation pairs.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let ds = generate_dataset(&cfg.dataset)?;
    io::save_dataset(out, &ds)?;
    let labels: Vec<u32> = ds.samples.iter().map(|s| s.label).collect();
    let pairs = PairSet::sample(&ds.eval, &labels, cfg.train.eval_pairs, cfg.seed)?;
    write_pairs(&out.join("pairs.csv"), &pairs)?;
    echo_config(out, cfg)?;
    Ok(format!(
        "dataset: {} samples ({} train / {} eval), {} eval pairs -> {}",
        ds.samples.len(),
        ds.train.len(),
        ds.eval.len(),
        pairs.len(),
        out.display()
    ))
}

fn write_metrics(path: &Path, history: &[EpochReport]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.lr.to_string(),
                e.ce.to_string(),
                e.instance.to_string(),
                e.pair.to_string(),
                e.triplet.to_string(),
                e.total.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        path,
        &["epoch", "lr", "ce", "instance", "pair", "triplet", "total"],
        &rows,
    )?;
    Ok(())
}

/// Trains on the dataset in `data_dir`; writes checkpoint, metrics and config echo to `out`.
pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<String, CliError> {
    cfg.train.validate()?;
    let ds = load_dataset(data_dir)?;
    let mut prepared = prepare(&ds, &cfg.train)?;
    if cfg.train.mode == InstanceMode::Soft {
        match io::load_centroids(data_dir)? {
            Some(cached) => prepared.centroids = cached,
            None => io::save_centroids(data_dir, &prepared.centroids)?,
        }
    }
    echo_config(out, cfg)?;
    let metrics = out.join("metrics.csv");
    let outcome = match train_prepared(&cfg.train, &prepared) {
        Ok(o) => o,
        Err(HarnessError::Diverged {
            epoch,
            step,
            what,
            history,
        }) => {
            write_metrics(&metrics, &history)?;
            return Err(CliError::Runtime(format!(
                "training diverged at epoch {epoch}, step {step}: {what}; {} epochs kept in {}",
                history.len(),
                metrics.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_metrics(&metrics, &outcome.history)?;
    io::save_checkpoint(&out.join("checkpoint"), &outcome.model)?;
    let last = outcome
        .history
        .last()
        .map_or("no epochs run".to_owned(), |e| {
            format!("final total loss {:.6}", e.total)
        });
    Ok(format!(
        "trained {} epochs ({}); checkpoint -> {}",
        outcome.history.len(),
        last,
        out.join("checkpoint").display()
    ))
}

/// Verification accuracy of a checkpoint on a pairs file.
pub fn eval(
    checkpoint: &Path,
    pairs_path: &Path,
    data_dir: &Path,
    out: &Path,
) -> Result<String, CliError> {
    let model = io::load_checkpoint(checkpoint)
        .map_err(|e| CliError::Validation(format!("cannot load checkpoint: {e}")))?;
    let ds = load_dataset(data_dir)?;
    let inputs = inpainted_inputs(&ds)?;
    let shape = model.shape();
    if shape.input != inputs.cols {
        return Err(CliError::Validation(format!(
            "dim mismatch: checkpoint expects {} inputs, dataset rasters have {}",
            shape.input, inputs.cols
        )));
    }
    let pairs = read_pairs(pairs_path, ds.samples.len())?;
    let embed = model.forward(&inputs).embed;
    let report = verify_embeddings(&embed, &pairs)?;
    io::create_dir(out)?;
    io::write_csv(
        &out.join("eval.csv"),
        &["accuracy", "threshold", "pairs"],
        &[vec![
            report.accuracy.to_string(),
            report.threshold.to_string(),
            pairs.len().to_string(),
        ]],
    )?;
    let roc: Vec<Vec<String>> = report
        .roc_points
        .iter()
        .map(|(f, t)| vec![f.to_string(), t.to_string()])
        .collect();
    io::write_csv(&out.join("roc.csv"), &["fpr", "tpr"], &roc)?;
    Ok(format!(
        "accuracy {:.4} at threshold {:.6} over {} pairs",
        report.accuracy,
        report.threshold,
        pairs.len()
    ))
}

pub fn format_gradcheck(rows: &[CheckRow]) -> String {
    let mut s = format!(
        "{:<20} {:>6} {:>8} {:>12} {:>6}\n",
        "op", "points", "failures", "worst_rel", "status"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:>6} {:>8} {:>12.3e} {:>6}\n",
            r.op.name(),
            r.points,
            r.failures,
            r.worst_error,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    s
}

/// Runs the gradient battery; fails if any op exceeds the tolerance.
pub fn gradcheck(points: usize, seed: u64) -> Result<String, CliError> {
    let rows =
        gradcheck::run_battery(points, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let table = format_gradcheck(&rows);
    let worst = rows
        .iter()
        .filter(|r| !r.passed())
        .max_by(|a, b| a.worst_error.total_cmp(&b.worst_error));
    match worst {
        None => Ok(table),
        Some(r) => Err(CliError::Runtime(format!(
            "{table}worst offender: {} at point {} with relative error {:.3e} (tolerance {:.0e})",
            r.op.name(),
            r.worst_point,
            r.worst_error,
            gradcheck::TOLERANCE
        ))),
    }
}

/// Trains the five loss variants over the configured seeds.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    if cfg.ablation_seeds.is_empty() {
        return Err(CliError::Validation("ablation_seeds is empty".into()));
    }
    cfg.dataset.validate()?;
    let rows = run_ablation(&cfg.dataset, &cfg.train, &cfg.ablation_seeds)?;
    echo_config(out, cfg)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.name().to_owned(),
                r.seed.to_string(),
                r.accuracy.to_string(),
                r.eval_loss.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &out.join("ablation.csv"),
        &["variant", "seed", "accuracy", "eval_loss"],
        &table,
    )?;
    let summary = summarize(&rows);
    let srows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.variant.name().to_owned(),
                s.runs.to_string(),
                s.mean_accuracy.to_string(),
                s.sd_accuracy.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &out.join("summary.csv"),
        &["variant", "runs", "mean_accuracy", "sd_accuracy"],
        &srows,
    )?;

    let mut text = format!("{:<16} {:>5} {:>18}\n", "variant", "runs", "accuracy");
    for s in &summary {
        text.push_str(&format!(
            "{:<16} {:>5} {:>9.4} ± {:.4}\n",
            s.variant.name(),
            s.runs,
            s.mean_accuracy,
            s.sd_accuracy
        ));
    }
    let loss_of = |v: Variant, seed: u64| {
        rows.iter()
            .find(|r| r.variant == v && r.seed == seed)
            .map(|r| r.eval_loss)
    };
    let soft_wins = cfg
        .ablation_seeds
        .iter()
        .filter(|&&s| {
            loss_of(Variant::CePairTripletSoft, s) <= loss_of(Variant::CePairTripletHard, s)
        })
        .count();
    text.push_str(&format!(
        "soft-instance eval loss <= hard-instance in {soft_wins}/{} seeds\n",
        cfg.ablation_seeds.len()
    ));
    Ok(text)
}

/// Output directory: explicit flag first, then the config.
pub fn resolve_out(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.unwrap_or_else(|| cfg.out_dir.clone())
}
