//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit status
//! when any criterion fails. The desk-scale experiment behind the
//! forgetting, ordering, efficiency and first-session criteria is run once
//! and shared between them.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relocl::checkpoint::{self, Checkpoint};
use relocl::commands::{self, Scalar, TrainRequest};
use relocl::config::ExperimentConfig;
use relocl_core::clcore::{
    buffer_size_forecast, consolidation_gradient, consolidation_loss, consolidation_on_tape,
    ConsolidationAnchor, DecayedQuota, FisherDiagonal, MemoryBuffer, QuotaRule,
};
use relocl_core::experiment::{
    retention_experiment, score_transition, ExperimentRun, OutcomeCounts, Strategy, TrainingConfig,
};
use relocl_core::graphdomain::{EntityCatalog, IndexedGraph, Timestamp, TransitionPair};
use relocl_core::numcore::{Tape, Tensor};
use relocl_core::relocnet::{EmbeddingBundle, ModelConfig, RelocModel};
use relocl_core::routinesim::{simulate_suite, TaskDataset};
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- gradients

fn small_catalog() -> Arc<EntityCatalog> {
    Arc::new(
        EntityCatalog::from_names(
            &["mug", "plate", "spoon", "book", "keys"],
            &["house", "table", "sink", "cabinet", "shelf", "desk"],
        )
        .unwrap(),
    )
}

fn random_pair(rng: &mut ChaCha8Rng, moved: usize) -> TransitionPair {
    let (n_obj, n_loc) = (5, 6);
    let parent: Vec<usize> = (0..n_obj).map(|_| rng.gen_range(1..n_loc)).collect();
    let mut target = parent.clone();
    for (i, t) in target.iter_mut().enumerate().take(moved) {
        *t = loop {
            let l = rng.gen_range(1..n_loc);
            if l != parent[i] {
                break l;
            }
        };
    }
    let t = Timestamp(rng.gen_range(0..7 * 1440));
    TransitionPair {
        input: IndexedGraph { t, parent },
        target: IndexedGraph {
            t: t.plus(10),
            parent: target,
        },
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        embed_dim: 4,
        rounds: 2,
        hidden: 6,
        ..ModelConfig::default()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut tape = Tape::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = RelocModel::<f64>::init(cfg, small_catalog(), &mut rng).unwrap();
        for t in model.params.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.6..0.6);
            }
        }
        let pair = random_pair(&mut rng, 1 + seed as usize % 3);
        let (_, grads) = model.loss_and_gradient(&mut tape, &pair).unwrap();
        for (ti, g) in grads.iter().enumerate() {
            for j in 0..g.len() {
                let mut at = |offset: f64| {
                    let mut shifted = model.clone();
                    shifted.params.tensors_mut()[ti].data_mut()[j] += offset;
                    shifted.loss_and_gradient(&mut tape, &pair).unwrap().0.total
                };
                let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                let analytic = g.data()[j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over 20 models in {secs:.1} s"),
    )
}

// ------------------------------------------------------------ consolidation

fn consolidation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..60);
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let prev: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let fisher: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let lambda = rng.gen_range(0.0..500.0);
        let anchor =
            ConsolidationAnchor::new(prev.clone(), FisherDiagonal { values: fisher }).unwrap();
        let closed = consolidation_gradient(&theta, &anchor, lambda).unwrap();
        let mut tape = Tape::<f64>::new();
        let var = tape.param(Tensor::vector(theta.clone())).unwrap();
        let loss = consolidation_on_tape(&mut tape, &[var], &anchor, lambda).unwrap();
        let auto = tape.gradient(loss, &[var]).unwrap().remove(0);
        for (c, a) in closed.iter().zip(auto.data()) {
            worst = worst.max((c - a).abs());
        }
        zero_ok &= consolidation_loss(&prev, &anchor, lambda).unwrap() == 0.0;
    }
    check(
        worst < 1e-10 && zero_ok,
        format!(
            "max |closed form - reverse mode| {worst:.1e}, loss at anchor exactly 0: {zero_ok}"
        ),
    )
}

// ------------------------------------------------------------------- buffer

fn brute_sizes(sizes: &[usize], beta: usize, k: usize) -> Vec<usize> {
    (0..=k)
        .map(|j| {
            if j == k {
                sizes[k]
            } else {
                let den = beta * (k - j);
                ((2 * sizes[j] + den) / (2 * den)).min(sizes[j])
            }
        })
        .collect()
}

fn buffer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut mismatches = 0;
    for _ in 0..100 {
        let sessions = rng.gen_range(1..6);
        let sizes: Vec<usize> = (0..sessions).map(|_| rng.gen_range(1..120)).collect();
        let beta = rng.gen_range(1..15usize);
        let rule = DecayedQuota { beta: beta as f64 };
        let mut buf = MemoryBuffer::default();
        for (k, &n) in sizes.iter().enumerate() {
            let bundles: Vec<EmbeddingBundle<f64>> = (0..n)
                .map(|_| {
                    let mut t = |rows: usize| {
                        Tensor::matrix(
                            rows,
                            3,
                            (0..rows * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        )
                        .unwrap()
                    };
                    EmbeddingBundle {
                        nodes: t(3),
                        edges: t(2),
                        time: t(1),
                    }
                })
                .collect();
            buf = buf
                .update((0..n).collect::<Vec<usize>>(), &bundles, &rule, k)
                .unwrap();
            let got: Vec<usize> = buf.sessions.iter().map(|s| s.entries.len()).collect();
            if got != brute_sizes(&sizes, beta, k) {
                mismatches += 1;
            }
        }
    }
    let after_two = 5175 + DecayedQuota { beta: 10.0 }.quota(5175, 1, 0);
    let h10 = 7381.0 / 2520.0;
    let forecast = buffer_size_forecast(1000.0, 10.0, 10)[10];
    let forecast_err = (forecast - 1000.0 * (1.0 + h10 / 10.0)).abs();
    check(
        mismatches == 0 && after_two.abs_diff(5693) <= 1 && forecast_err < 1e-9,
        format!(
            "100 random tuples, {mismatches} mismatches; 5175+quota = {after_two}; forecast error {forecast_err:.1e}"
        ),
    )
}

// ------------------------------------------------------------------ metrics

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = 0;
    for _ in 0..1000 {
        let objects = rng.gen_range(1..30);
        let locations = rng.gen_range(2..9);
        let current: Vec<usize> = (0..objects).map(|_| rng.gen_range(0..locations)).collect();
        let target: Vec<usize> = current
            .iter()
            .map(|&c| {
                if rng.gen_bool(0.4) {
                    rng.gen_range(0..locations)
                } else {
                    c
                }
            })
            .collect();
        let predicted: Vec<Option<usize>> = (0..objects)
            .map(|_| rng.gen_bool(0.5).then(|| rng.gen_range(0..locations)))
            .collect();
        let c = score_transition(&current, &target, &predicted);
        let moved = current.iter().zip(&target).filter(|(a, b)| a != b).count() as u64;
        if c.used() + c.unused() != objects as u64 || c.used() != moved {
            bad += 1;
        }
    }
    let mut oracle = OutcomeCounts::default();
    for ds in simulate_suite(3, 3, 2, 10, 5).unwrap() {
        for p in ds.partition().1.pairs(10).unwrap() {
            let pred: Vec<Option<usize>> = p
                .input
                .parent
                .iter()
                .zip(&p.target.parent)
                .map(|(a, b)| (a != b).then_some(*b))
                .collect();
            oracle.merge(&score_transition(&p.input.parent, &p.target.parent, &pred));
        }
    }
    let pct = oracle.percentages();
    check(
        bad == 0 && pct.moved_correct == 100.0 && pct.unmoved_correct == 100.0 && oracle.used() > 0,
        format!(
            "{bad} of 1000 cases not partitioned; oracle Moved Correct {:.1}%, Unmoved Correct {:.1}%",
            pct.moved_correct, pct.unmoved_correct
        ),
    )
}

// ------------------------------------------------------- desk-scale run

const SEEDS: [u64; 3] = [1, 2, 3];

struct StrategyRuns {
    runs: Vec<ExperimentRun<Scalar>>,
    /// Parameters after session 0, per seed.
    first_session: Vec<Vec<Scalar>>,
}

struct DeskRun {
    streak: StrategyRuns,
    finetuned: StrategyRuns,
    joint: StrategyRuns,
    seconds: f64,
}

fn desk_training(strategy: Strategy, seed: u64) -> TrainingConfig {
    let mut cfg = TrainingConfig {
        epochs: 50,
        delta: 10,
        strategy,
        seed,
        ..TrainingConfig::default()
    };
    cfg.hyper.lambda = 200.0;
    cfg.hyper.beta = 10.0;
    cfg
}

fn desk_run() -> Result<DeskRun, String> {
    let start = Instant::now();
    let model = ModelConfig::default();
    let suites: Vec<Vec<TaskDataset>> = SEEDS
        .iter()
        .map(|&s| simulate_suite(3, 25, 20, 10, s).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let run = |strategy: Strategy| -> Result<StrategyRuns, String> {
        let mut out = StrategyRuns {
            runs: Vec::new(),
            first_session: Vec::new(),
        };
        for (&seed, datasets) in SEEDS.iter().zip(&suites) {
            let t = Instant::now();
            let mut first = None;
            let r = retention_experiment::<Scalar>(
                datasets,
                &model,
                &desk_training(strategy, seed),
                |s| {
                    if s.k == 1 {
                        first = Some(s.model.params.flatten());
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string())?;
            eprintln!(
                "  {strategy} seed {seed}: retention {:.2}% in {:.0} s",
                r.matrix.retention().unwrap_or(f64::NAN),
                t.elapsed().as_secs_f64()
            );
            out.runs.push(r);
            out.first_session.push(first.ok_or("no first session")?);
        }
        Ok(out)
    };
    Ok(DeskRun {
        streak: run(Strategy::Streak)?,
        finetuned: run(Strategy::Finetuned)?,
        joint: run(Strategy::Joint)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn forgetting(d: &DeskRun) -> Outcome {
    let m = |k| {
        mean(
            d.finetuned
                .runs
                .iter()
                .map(|r| r.matrix.cell(k, 0).unwrap()),
        )
    };
    let (before, after) = (m(0), m(2));
    let drop = (before - after) / before;
    check(
        drop >= 0.30 && d.seconds < 1800.0,
        format!(
            "finetuned Moved Correct on D0 {before:.2}% -> {after:.2}% (drop {:.1}%), desk run {:.0} s",
            100.0 * drop,
            d.seconds
        ),
    )
}

fn retention(r: &StrategyRuns) -> f64 {
    mean(r.runs.iter().map(|r| r.matrix.retention().unwrap()))
}

fn ordering(d: &DeskRun) -> Outcome {
    let (j, s, f) = (
        retention(&d.joint),
        retention(&d.streak),
        retention(&d.finetuned),
    );
    check(
        j >= s && s >= f && s - f >= 3.0 && j - s <= j - f,
        format!("retention joint {j:.2}%, streak {s:.2}%, finetuned {f:.2}% (streak - finetuned {:.2}pp)", s - f),
    )
}

fn efficiency(d: &DeskRun) -> Outcome {
    let samples = |r: &StrategyRuns| -> usize {
        r.runs
            .iter()
            .flat_map(|r| &r.state.ledger)
            .map(|l| l.training_samples)
            .sum()
    };
    let session_time =
        |r: &StrategyRuns, k: usize| mean(r.runs.iter().map(|r| r.state.ledger[k].cpu_seconds));
    let (ss, js) = (samples(&d.streak), samples(&d.joint));
    let sessions = d.streak.runs[0].state.ledger.len();
    let s0 = session_time(&d.streak, 0);
    let streak_ratio = (1..sessions)
        .map(|k| session_time(&d.streak, k) / s0)
        .fold(0.0, f64::max);
    let joint_ratio = session_time(&d.joint, sessions - 1) / session_time(&d.joint, 0);
    check(
        (ss as f64) < 0.6 * js as f64 && streak_ratio <= 1.3 && joint_ratio > 2.5,
        format!(
            "samples streak {ss} vs joint {js} ({:.2}x); streak session time <= {streak_ratio:.2}x session 0; joint last session {joint_ratio:.2}x session 0",
            ss as f64 / js as f64
        ),
    )
}

fn first_session(d: &DeskRun) -> Outcome {
    let same = d
        .streak
        .first_session
        .iter()
        .zip(&d.finetuned.first_session)
        .all(|(a, b)| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    check(same, format!("streak and finetuned parameters after session 0 bitwise equal for seeds {SEEDS:?}: {same}"))
}

// -------------------------------------------------------------- determinism

const SMALL: &str = r#"
[simulator]
households = 3
days = 3
train_days = 2
interval = 30
seed = 11

[model]
embed_dim = 8
hidden = 12
delta = 30

[training]
epochs = 3
seeds = [3]
"#;

/// Metrics JSON and final parameter bytes of one strategy.
type PipelineOutput = (Strategy, Vec<u8>, Vec<u8>);

fn pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PipelineOutput>, String> {
    let data = commands::simulate(cfg, &dir.join("data")).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for strategy in [Strategy::Streak, Strategy::Finetuned, Strategy::Joint] {
        let train = |datasets: &[std::path::PathBuf], out: &Path, resume: Option<&Path>| {
            commands::train(&TrainRequest {
                config: cfg,
                datasets,
                strategy,
                seeds: cfg.training.seeds.clone(),
                out,
                resume,
            })
            .map_err(|e| e.to_string())
        };
        let full = train(&data, &dir.join("full"), None)?.remove(0);
        let metrics = commands::evaluate_checkpoints(std::slice::from_ref(&full), &data, None)
            .map_err(|e| e.to_string())?;
        let json = relocl::report::metrics_json(&metrics).map_err(|e| e.to_string())?;

        let resumed = train(&data[..1], &dir.join("resumed"), None)?.remove(0);
        train(
            &data,
            &dir.join("resumed"),
            Some(&resumed.join(checkpoint::session_file_name(0))),
        )?;
        let last = checkpoint::session_file_name(2);
        let a: Checkpoint<Scalar> =
            checkpoint::load(&full.join(&last)).map_err(|e| e.to_string())?;
        let b: Checkpoint<Scalar> =
            checkpoint::load(&resumed.join(&last)).map_err(|e| e.to_string())?;
        let bits = |c: &Checkpoint<Scalar>| -> Vec<u8> {
            c.state
                .model
                .params
                .flatten()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect()
        };
        if bits(&a) != bits(&b)
            || a.state.optimizer != b.state.optimizer
            || a.state.buffer != b.state.buffer
        {
            return Err(format!(
                "{strategy}: resumed run differs from the uninterrupted run"
            ));
        }
        out.push((strategy, json.into_bytes(), bits(&a)));
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::from_toml_with_env(SMALL, std::iter::empty::<(String, String)>())
        .map_err(|e| e.to_string())?;
    let (a, b) = (
        TempDir::new().map_err(|e| e.to_string())?,
        TempDir::new().map_err(|e| e.to_string())?,
    );
    let first = pipeline(&cfg, a.path())?;
    let second = pipeline(&cfg, b.path())?;
    check(
        first == second,
        format!(
            "two runs with equal seeds produce identical metrics and parameters: {}; resume matches for all strategies",
            first == second
        ),
    )
}

// --------------------------------------------------------------------- main

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id}] {name}: {detail}");
    };
    report(1, "gradient check", gradient_check());
    report(2, "consolidation gradient", consolidation());
    report(3, "rehearsal buffer", buffer());
    report(4, "outcome metrics", metrics());
    let determinism = determinism();

    eprintln!("desk-scale run: 3 strategies x {} seeds", SEEDS.len());
    let desk = desk_run();
    let shared = |f: fn(&DeskRun) -> Outcome| match &desk {
        Ok(d) => f(d),
        Err(e) => Err(format!("desk run failed: {e}")),
    };
    report(5, "forgetting", shared(forgetting));
    report(6, "ordering", shared(ordering));
    report(7, "efficiency", shared(efficiency));
    report(8, "determinism", determinism);
    report(9, "first-session equivalence", shared(first_session));

    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
