//! The CLI commands as library functions.

use std::path::{Path, PathBuf};

use relocl_core::clcore::buffer_size_forecast;
use relocl_core::experiment::{evaluate, run_session, SessionState, Strategy};
use relocl_core::routinesim::{simulate_suite, TaskDataset};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ExperimentConfig, ReportFormat};
use crate::dataset_io;
use crate::error::{CliError, Result};
use crate::fsutil;
use crate::report::{self, MetricsFile, MetricsRow};

/// Precision used for training and checkpoints.
pub type Scalar = f32;

pub fn dataset_file_name(i: usize) -> String {
    format!("household-{i}.jsonl")
}

/// Simulates the configured households into `out`, one JSON-lines file per
/// household, and checks that every file reads back unchanged.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let s = &cfg.simulator;
    let datasets = simulate_suite(s.households, s.days, s.train_days, s.interval, s.seed)?;
    let mut paths = Vec::with_capacity(datasets.len());
    for (i, ds) in datasets.iter().enumerate() {
        let path = out.join(dataset_file_name(i));
        dataset_io::write(&path, ds)?;
        if dataset_io::read(&path)? != *ds {
            return Err(CliError::Runtime(format!(
                "{} did not read back unchanged",
                path.display()
            )));
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Reads datasets in session order, assigning task indices by position.
pub fn load_datasets(paths: &[PathBuf]) -> Result<Vec<TaskDataset>> {
    if paths.is_empty() {
        return Err(CliError::Config("no datasets given".into()));
    }
    let datasets = paths
        .iter()
        .enumerate()
        .map(|(k, p)| Ok(dataset_io::read(p)?.with_task(k)))
        .collect::<Result<Vec<_>>>()?;
    for (ds, p) in datasets.iter().zip(paths).skip(1) {
        if *ds.catalog != *datasets[0].catalog {
            return Err(CliError::Data(format!(
                "{}: catalog differs from the first dataset",
                p.display()
            )));
        }
    }
    Ok(datasets)
}

fn check_dataset_delta(datasets: &[TaskDataset], paths: &[PathBuf], delta: u64) -> Result<()> {
    for (ds, p) in datasets.iter().zip(paths) {
        if !delta.is_multiple_of(ds.sample_interval) {
            return Err(CliError::Config(format!(
                "delta {delta} is not a multiple of the {} minute interval of {}",
                ds.sample_interval,
                p.display()
            )));
        }
        if ds.train_days == 0 || ds.train_days >= ds.days {
            return Err(CliError::Data(format!(
                "{}: needs both training and test days",
                p.display()
            )));
        }
    }
    Ok(())
}

pub fn run_dir(out: &Path, strategy: Strategy, seed: u64) -> PathBuf {
    out.join(format!("{strategy}-seed{seed}"))
}

pub struct TrainRequest<'a> {
    pub config: &'a ExperimentConfig,
    pub datasets: &'a [PathBuf],
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub out: &'a Path,
    pub resume: Option<&'a Path>,
}

/// Runs the remaining sessions for every seed, writing a checkpoint and the
/// ledger after each session. Returns the run directories.
pub fn train(req: &TrainRequest) -> Result<Vec<PathBuf>> {
    let datasets = load_datasets(req.datasets)?;
    let cfg = req.config;
    check_dataset_delta(&datasets, req.datasets, cfg.model.delta)?;

    let starts: Vec<(u64, Option<Checkpoint<Scalar>>)> = match req.resume {
        Some(path) => {
            let ckpt: Checkpoint<Scalar> = checkpoint::load(path)?;
            let seed = ckpt.training.seed;
            let expected = cfg.training_config(ckpt.state.strategy, seed);
            if ckpt.training != expected {
                return Err(CliError::Config(format!(
                    "{} was trained with a different configuration",
                    path.display()
                )));
            }
            if ckpt.state.strategy != req.strategy {
                return Err(CliError::Config(format!(
                    "{} holds a {} run, not {}",
                    path.display(),
                    ckpt.state.strategy,
                    req.strategy
                )));
            }
            if ckpt.state.model.config != cfg.model_config() {
                return Err(CliError::Config(format!(
                    "{} has a different model configuration",
                    path.display()
                )));
            }
            if ckpt.state.k > datasets.len() {
                return Err(CliError::Data(format!(
                    "{} has finished {} sessions but only {} datasets were given",
                    path.display(),
                    ckpt.state.k,
                    datasets.len()
                )));
            }
            vec![(seed, Some(ckpt))]
        }
        None => req.seeds.iter().map(|&s| (s, None)).collect(),
    };

    let mut dirs = Vec::new();
    for (seed, resume) in starts {
        let training = cfg.training_config(req.strategy, seed);
        training.validate()?;
        let mut state = match resume {
            Some(c) => c.state,
            None => SessionState::<Scalar>::new(
                cfg.model_config(),
                datasets[0].catalog.clone(),
                &training,
            )?,
        };
        let dir = run_dir(req.out, req.strategy, seed);
        for ds in &datasets[state.k..] {
            let (train_split, _) = ds.partition();
            state = run_session(state, &train_split, &training)?;
            let k = state.k - 1;
            let last = &state.ledger[k];
            eprintln!(
                "{} seed {seed}: session {k} done ({} samples/epoch, {:.1} s)",
                req.strategy, last.training_samples, last.cpu_seconds
            );
            let ckpt = Checkpoint {
                training: training.clone(),
                state,
            };
            checkpoint::save(&dir.join(checkpoint::session_file_name(k)), &ckpt)?;
            fsutil::write_atomic(
                &dir.join("ledger.csv"),
                report::ledger_csv(&ckpt.state.ledger)?.as_bytes(),
            )?;
            state = ckpt.state;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Expands directories into their session checkpoints in session order.
pub fn checkpoint_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter_map(|f| {
                    let name = f.file_name()?.to_str()?;
                    let k = name
                        .strip_prefix("session-")?
                        .strip_suffix(".ckpt")?
                        .parse()
                        .ok()?;
                    Some((k, f))
                })
                .collect();
            if found.is_empty() {
                return Err(CliError::Data(format!(
                    "{}: no checkpoints found",
                    p.display()
                )));
            }
            found.sort();
            out.extend(found.into_iter().map(|(_, f)| f));
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::Data(format!(
                "{}: checkpoint not found",
                p.display()
            )));
        }
    }
    Ok(out)
}

/// Scores each checkpoint on the test partition of every dataset it has
/// been trained through.
pub fn evaluate_checkpoints(
    checkpoints: &[PathBuf],
    dataset_paths: &[PathBuf],
    delta: Option<u64>,
) -> Result<MetricsFile> {
    let datasets = load_datasets(dataset_paths)?;
    let tests: Vec<TaskDataset> = datasets.iter().map(|d| d.partition().1).collect();
    let files = checkpoint_files(checkpoints)?;
    let mut file_delta = delta;
    let mut rows = Vec::new();
    for f in files {
        let ckpt: Checkpoint<Scalar> = checkpoint::load(&f)?;
        let d = match (delta, file_delta) {
            (Some(d), _) => d,
            (None, None) => ckpt.training.delta,
            (None, Some(d)) if d == ckpt.training.delta => d,
            (None, Some(_)) => {
                return Err(CliError::Config(
                    "checkpoints use different horizons; pass --delta".into(),
                ))
            }
        };
        file_delta = Some(d);
        check_dataset_delta(&datasets, dataset_paths, d)?;
        let sessions = ckpt.state.k;
        if sessions == 0 || sessions > tests.len() {
            return Err(CliError::Data(format!(
                "{}: trained through {sessions} sessions but {} datasets were given",
                f.display(),
                tests.len()
            )));
        }
        for (j, test) in tests[..sessions].iter().enumerate() {
            let r = evaluate(&ckpt.state.model, test, d, ckpt.training.threshold)?;
            rows.push(MetricsRow::from_report(
                ckpt.state.strategy,
                ckpt.training.seed,
                sessions - 1,
                j,
                &r,
            ));
        }
    }
    Ok(MetricsFile {
        delta: file_delta.unwrap_or_default(),
        rows,
    })
}

/// Writes the metrics in every requested format; returns the files written.
pub fn write_metrics(
    metrics: &MetricsFile,
    out: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("metrics.csv", report::metrics_csv(&metrics.rows)?),
            ReportFormat::Json => ("metrics.json", report::metrics_json(metrics)?),
            ReportFormat::Table => ("retention.txt", report::summary_text(&metrics.rows)),
        };
        let path = out.join(name);
        fsutil::write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Text report from a metrics JSON file and any number of ledgers.
pub fn report_text(metrics: Option<&Path>, ledgers: &[PathBuf]) -> Result<String> {
    let mut s = String::new();
    if let Some(m) = metrics {
        let text =
            String::from_utf8(fsutil::read(m)?).map_err(|e| CliError::Data(e.to_string()))?;
        s.push_str(&report::summary_text(
            &report::parse_metrics_json(&text)?.rows,
        ));
    }
    for l in ledgers {
        let text =
            String::from_utf8(fsutil::read(l)?).map_err(|e| CliError::Data(e.to_string()))?;
        let rows = report::parse_ledger_csv(&text)?;
        if !s.is_empty() {
            s.push('\n');
        }
        s.push_str(&report::efficiency_text(&l.display().to_string(), &rows));
    }
    if s.is_empty() {
        return Err(CliError::Config(
            "nothing to report: pass --metrics and/or --ledger".into(),
        ));
    }
    Ok(s)
}

/// Plot data of the projected buffer size per session, with the measured
/// sizes of a ledger alongside when one is given.
pub fn project_buffer(
    mean_size: f64,
    beta: f64,
    sessions: usize,
    ledger: Option<&Path>,
) -> Result<String> {
    if sessions == 0 {
        return Err(CliError::Config("sessions must be at least 1".into()));
    }
    if !(mean_size >= 0.0 && mean_size.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Config(
            "mean size must be >= 0 and beta > 0".into(),
        ));
    }
    let measured = match ledger {
        Some(p) => {
            let text =
                String::from_utf8(fsutil::read(p)?).map_err(|e| CliError::Data(e.to_string()))?;
            Some(report::parse_ledger_csv(&text)?)
        }
        None => None,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["session", "projected_size"];
    if measured.is_some() {
        header.push("measured_size");
    }
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(&header).map_err(err)?;
    for (k, size) in buffer_size_forecast(mean_size, beta, sessions)
        .into_iter()
        .enumerate()
    {
        let mut rec = vec![k.to_string(), format!("{size:.6}")];
        if let Some(rows) = &measured {
            rec.push(
                rows.iter()
                    .find(|r| r.session == k)
                    .map(|r| r.buffer_size.to_string())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}
