//! Session orchestration for the three training strategies and the
//! evaluation artifacts built on top of them.
//!
//! * `Finetuned` trains on each new dataset alone, carrying parameters and
//!   optimizer state forward.
//! * `Streak` adds rehearsal of the most informative past samples and a
//!   consolidation penalty anchored at the previous session's parameters.
//! * `Joint` restarts from the same initialization every session and trains
//!   on the shuffled union of all datasets seen so far.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clcore::{
    add_consolidation_gradient, fisher_diagonal, ClError, ClHyperparams, ConsolidationAnchor,
    DecayedQuota, MemoryBuffer,
};
use crate::graphdomain::TransitionPair;
use crate::numcore::{Adam, AdamConfig, AdamState, FlushDenormals, Real, Tape, Tensor};
use crate::relocnet::{ModelConfig, ModelError, RelocModel};
use crate::routinesim::{SimError, TaskDataset};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("dataset {0} has no training pairs")]
    EmptyDataset(String),
    #[error("dataset {name} has no pairs at horizon {delta}")]
    NoPairs { name: String, delta: u64 },
    #[error("expected session {expected}, got dataset for task {got}")]
    SessionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("state does not match strategy {0}")]
    StrategyState(Strategy),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cl(#[from] ClError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<crate::numcore::NumError> for ExperimentError {
    fn from(e: crate::numcore::NumError) -> Self {
        Self::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Streak,
    Finetuned,
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Streak, Strategy::Finetuned, Strategy::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Streak => "streak",
            Strategy::Finetuned => "finetuned",
            Strategy::Joint => "joint",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "streak" => Ok(Strategy::Streak),
            "finetuned" => Ok(Strategy::Finetuned),
            "joint" => Ok(Strategy::Joint),
            other => Err(format!(
                "unknown strategy {other:?} (expected streak, finetuned or joint)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Prediction horizon in minutes.
    pub delta: u64,
    /// Move-probability threshold used when decoding predictions.
    pub threshold: f64,
    pub hyper: ClHyperparams,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 1,
            optimizer: AdamConfig::default(),
            delta: 10,
            threshold: 0.5,
            hyper: ClHyperparams::default(),
            seed: 0,
            strategy: Strategy::Streak,
        }
    }
}

/// Horizons the lab supports, in minutes.
pub const SUPPORTED_DELTAS: [u64; 6] = [10, 20, 30, 60, 120, 180];

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ExperimentError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ExperimentError::Config("batch_size must be >= 1".into()));
        }
        if !SUPPORTED_DELTAS.contains(&self.delta) {
            return Err(ExperimentError::Config(format!(
                "delta {} not in {:?}",
                self.delta, SUPPORTED_DELTAS
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ExperimentError::Config(
                "threshold must lie in (0, 1)".into(),
            ));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0
            && o.eps > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2))
        {
            return Err(ExperimentError::Config("invalid optimizer settings".into()));
        }
        self.hyper.validate()?;
        Ok(())
    }
}

/// Cost accounting for one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub session: usize,
    /// Samples visited per epoch.
    pub training_samples: usize,
    pub steps: u64,
    /// CPU time of the training thread, including end-of-session work.
    pub cpu_seconds: f64,
    /// Retained samples after the session (streak only, 0 otherwise).
    pub buffer_size: usize,
}

/// Serializable position of the shuffling stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything carried from one session to the next.
#[derive(Clone, Debug)]
pub struct SessionState<T> {
    pub strategy: Strategy,
    /// Index of the next session to run.
    pub k: usize,
    pub model: RelocModel<T>,
    pub optimizer: AdamState<T>,
    /// Streak only, present from session 1 onwards.
    pub anchor: Option<ConsolidationAnchor<T>>,
    /// Streak only.
    pub buffer: Option<MemoryBuffer<TransitionPair>>,
    /// Joint only: training pairs of every finished session.
    pub joint_data: Option<Vec<Vec<TransitionPair>>>,
    pub ledger: Vec<LedgerRow>,
    pub rng: RngState,
}

impl<T: Real> SessionState<T> {
    /// State before session 0. The model's horizon is taken from `cfg.delta`.
    pub fn new(
        model_config: ModelConfig,
        catalog: std::sync::Arc<crate::graphdomain::EntityCatalog>,
        cfg: &TrainingConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let model = initial_model(model_config, catalog, cfg)?;
        Ok(Self {
            strategy: cfg.strategy,
            k: 0,
            model,
            optimizer: AdamState::default(),
            anchor: None,
            buffer: (cfg.strategy == Strategy::Streak).then(MemoryBuffer::default),
            joint_data: (cfg.strategy == Strategy::Joint).then(Vec::new),
            ledger: Vec::new(),
            rng: RngState::capture(&stream_rng(cfg.seed, SHUFFLE_STREAM)),
        })
    }

    /// Checks that exactly the strategy's fields are populated.
    pub fn check_fields(&self) -> Result<()> {
        let ok = match self.strategy {
            Strategy::Finetuned => {
                self.anchor.is_none() && self.buffer.is_none() && self.joint_data.is_none()
            }
            Strategy::Streak => {
                self.buffer.is_some()
                    && self.joint_data.is_none()
                    && (self.anchor.is_some() == (self.k > 0))
            }
            Strategy::Joint => {
                self.anchor.is_none() && self.buffer.is_none() && self.joint_data.is_some()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ExperimentError::StrategyState(self.strategy))
        }
    }
}

fn initial_model<T: Real>(
    mut model_config: ModelConfig,
    catalog: std::sync::Arc<crate::graphdomain::EntityCatalog>,
    cfg: &TrainingConfig,
) -> Result<RelocModel<T>> {
    model_config.horizon = cfg.delta;
    model_config.threshold = cfg.threshold;
    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    Ok(RelocModel::init(model_config, catalog, &mut rng)?)
}

/// Training pairs of a dataset at the configured horizon.
pub fn training_pairs(ds: &TaskDataset, delta: u64) -> Result<Vec<TransitionPair>> {
    let pairs = ds.pairs(delta)?;
    if pairs.is_empty() {
        return Err(ExperimentError::EmptyDataset(ds.name.clone()));
    }
    Ok(pairs)
}

/// Runs `cfg.epochs` of Adam over `samples`, visiting them in a fresh seeded
/// shuffle every epoch. With an anchor the consolidation gradient is added to
/// every step.
fn train<T: Real>(
    model: &mut RelocModel<T>,
    adam: &mut Adam<T>,
    samples: &[&TransitionPair],
    anchor: Option<&ConsolidationAnchor<T>>,
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = accumulate_batch(model, &mut tape, samples, batch)?;
            if let Some(anchor) = anchor {
                add_consolidation_gradient(
                    model.params.tensors(),
                    &mut grads,
                    anchor,
                    cfg.hyper.lambda,
                )?;
            }
            adam.step(model.params.tensors_mut(), &grads)?;
            steps += 1;
        }
    }
    Ok(steps)
}

fn accumulate_batch<T: Real>(
    model: &RelocModel<T>,
    tape: &mut Tape<T>,
    samples: &[&TransitionPair],
    batch: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let (_, mut grads) = model.loss_and_gradient(tape, samples[batch[0]])?;
    if batch.len() > 1 {
        for &i in &batch[1..] {
            let (_, g) = model.loss_and_gradient(tape, samples[i])?;
            for (a, b) in grads.iter_mut().zip(&g) {
                for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
        }
        let inv = T::one() / T::lit(batch.len() as f64);
        for g in &mut grads {
            for x in g.data_mut() {
                *x *= inv;
            }
        }
    }
    Ok(grads)
}

fn flat_gradient<T: Real>(
    model: &RelocModel<T>,
    tape: &mut Tape<T>,
    pair: &TransitionPair,
) -> Result<Vec<T>> {
    let (_, grads) = model.loss_and_gradient(tape, pair)?;
    Ok(grads.into_iter().flat_map(Tensor::into_data).collect())
}

/// One learning session on the training partition `dataset`, whose task
/// index must equal `state.k`.
pub fn run_session<T: Real>(
    mut state: SessionState<T>,
    dataset: &TaskDataset,
    cfg: &TrainingConfig,
) -> Result<SessionState<T>> {
    cfg.validate()?;
    if cfg.strategy != state.strategy {
        return Err(ExperimentError::StrategyState(cfg.strategy));
    }
    state.check_fields()?;
    if dataset.task != state.k {
        return Err(ExperimentError::SessionMismatch {
            expected: state.k,
            got: dataset.task,
        });
    }
    if *dataset.catalog != *state.model.catalog {
        return Err(ModelError::CatalogMismatch.into());
    }
    let pairs = training_pairs(dataset, cfg.delta)?;
    let k = state.k;
    let _ftz = FlushDenormals::new();
    let timer = CpuTimer::start();
    let mut rng = state.rng.restore();

    let (training_samples, steps, buffer_size) = match state.strategy {
        Strategy::Finetuned => {
            let samples: Vec<&TransitionPair> = pairs.iter().collect();
            let mut adam = Adam::with_state(cfg.optimizer, std::mem::take(&mut state.optimizer));
            let steps = train(&mut state.model, &mut adam, &samples, None, cfg, &mut rng)?;
            state.optimizer = adam.state;
            (samples.len(), steps, 0)
        }
        Strategy::Streak => {
            let rule = DecayedQuota {
                beta: cfg.hyper.beta,
            };
            let prev = state.buffer.take().unwrap_or_default();
            let mut samples: Vec<&TransitionPair> = pairs.iter().collect();
            samples.extend(prev.rehearsal(k, &rule).into_iter().map(|e| &e.sample));
            let mut adam = Adam::with_state(cfg.optimizer, std::mem::take(&mut state.optimizer));
            let steps = train(
                &mut state.model,
                &mut adam,
                &samples,
                state.anchor.as_ref(),
                cfg,
                &mut rng,
            )?;
            state.optimizer = adam.state;
            let n = samples.len();
            drop(samples);

            let bundles = pairs
                .iter()
                .map(|p| state.model.encode_indexed(&p.input))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let buffer = prev.update(pairs.clone(), &bundles, &rule, k)?;
            let mut tape = Tape::new();
            let retained: Vec<&TransitionPair> = buffer
                .sessions
                .iter()
                .flat_map(|s| s.entries.iter().map(|e| &e.sample))
                .collect();
            let fisher = fisher_diagonal(&retained, |p| flat_gradient(&state.model, &mut tape, p))?;
            state.anchor = Some(ConsolidationAnchor::new(
                state.model.params.flatten(),
                fisher,
            )?);
            let size = buffer.len();
            state.buffer = Some(buffer);
            (n, steps, size)
        }
        Strategy::Joint => {
            let mut data = state.joint_data.take().unwrap_or_default();
            data.push(pairs);
            let samples: Vec<&TransitionPair> = data.iter().flatten().collect();
            let mut model =
                initial_model::<T>(state.model.config, state.model.catalog.clone(), cfg)?;
            let mut adam = Adam::new(cfg.optimizer);
            let steps = train(&mut model, &mut adam, &samples, None, cfg, &mut rng)?;
            let n = samples.len();
            state.model = model;
            state.optimizer = adam.state;
            state.joint_data = Some(data);
            (n, steps, 0)
        }
    };

    state.ledger.push(LedgerRow {
        session: k,
        training_samples,
        steps,
        cpu_seconds: timer.elapsed(),
        buffer_size,
    });
    state.rng = RngState::capture(&rng);
    state.k += 1;
    Ok(state)
}

/// Outcome counts of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub moved_correct: u64,
    pub moved_wrong: u64,
    pub moved_missed: u64,
    pub unmoved_correct: u64,
    pub unmoved_wrong: u64,
}

/// Outcome shares in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomePercentages {
    pub moved_correct: f64,
    pub moved_wrong: f64,
    pub moved_missed: f64,
    pub unmoved_correct: f64,
    pub unmoved_wrong: f64,
}

fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl OutcomeCounts {
    pub fn used(&self) -> u64 {
        self.moved_correct + self.moved_wrong + self.moved_missed
    }

    pub fn unused(&self) -> u64 {
        self.unmoved_correct + self.unmoved_wrong
    }

    /// Shares over used objects (moved) and unused objects (unmoved); 0 when
    /// a group is empty.
    pub fn percentages(&self) -> OutcomePercentages {
        let (u, n) = (self.used(), self.unused());
        OutcomePercentages {
            moved_correct: percent(self.moved_correct, u),
            moved_wrong: percent(self.moved_wrong, u),
            moved_missed: percent(self.moved_missed, u),
            unmoved_correct: percent(self.unmoved_correct, n),
            unmoved_wrong: percent(self.unmoved_wrong, n),
        }
    }

    pub fn merge(&mut self, other: &OutcomeCounts) {
        self.moved_correct += other.moved_correct;
        self.moved_wrong += other.moved_wrong;
        self.moved_missed += other.moved_missed;
        self.unmoved_correct += other.unmoved_correct;
        self.unmoved_wrong += other.unmoved_wrong;
    }
}

/// Scores one predicted transition. `predicted[i]` is the predicted new
/// location of object `i`, `None` meaning "stays".
pub fn score_transition(
    current: &[usize],
    target: &[usize],
    predicted: &[Option<usize>],
) -> OutcomeCounts {
    let mut c = OutcomeCounts::default();
    for ((&from, &to), &pred) in current.iter().zip(target).zip(predicted) {
        match (from != to, pred) {
            (true, Some(p)) if p == to => c.moved_correct += 1,
            (true, Some(_)) => c.moved_wrong += 1,
            (true, None) => c.moved_missed += 1,
            (false, None) => c.unmoved_correct += 1,
            (false, Some(_)) => c.unmoved_wrong += 1,
        }
    }
    c
}

/// Per-dataset evaluation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub pairs: usize,
    pub counts: OutcomeCounts,
    pub percentages: OutcomePercentages,
}

impl MetricsReport {
    pub fn new(dataset: String, pairs: usize, counts: OutcomeCounts) -> Self {
        Self {
            dataset,
            pairs,
            percentages: counts.percentages(),
            counts,
        }
    }

    /// Pools several reports into one.
    pub fn aggregate(name: &str, reports: &[MetricsReport]) -> Self {
        let mut counts = OutcomeCounts::default();
        for r in reports {
            counts.merge(&r.counts);
        }
        Self::new(name.into(), reports.iter().map(|r| r.pairs).sum(), counts)
    }
}

/// Scores `model` on every `(t, t + delta)` pair of `test`.
pub fn evaluate<T: Real>(
    model: &RelocModel<T>,
    test: &TaskDataset,
    delta: u64,
    threshold: f64,
) -> Result<MetricsReport> {
    if *test.catalog != *model.catalog {
        return Err(ModelError::CatalogMismatch.into());
    }
    let pairs = test.pairs(delta)?;
    if pairs.is_empty() {
        return Err(ExperimentError::NoPairs {
            name: test.name.clone(),
            delta,
        });
    }
    let _ftz = FlushDenormals::new();
    let mut counts = OutcomeCounts::default();
    for p in &pairs {
        let pred = model.predict_indexed(&p.input, delta)?;
        let decoded = pred.decode_indexed(&p.input.parent, threshold);
        counts.merge(&score_transition(
            &p.input.parent,
            &p.target.parent,
            &decoded,
        ));
    }
    Ok(MetricsReport::new(test.name.clone(), pairs.len(), counts))
}

/// Row `k` holds the evaluation on test sets `0..=k` after training through
/// session `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionMatrix {
    pub strategy: Strategy,
    pub rows: Vec<Vec<MetricsReport>>,
}

impl RetentionMatrix {
    /// Moved Correct percentage, defined iff `test <= trained_through`.
    pub fn cell(&self, trained_through: usize, test: usize) -> Option<f64> {
        self.rows
            .get(trained_through)?
            .get(test)
            .map(|r| r.percentages.moved_correct)
    }

    /// Mean Moved Correct over every test set seen, after the last session.
    pub fn retention(&self) -> Option<f64> {
        let last = self.rows.last()?;
        Some(
            last.iter()
                .map(|r| r.percentages.moved_correct)
                .sum::<f64>()
                / last.len() as f64,
        )
    }

    /// Moved Correct on the newest dataset after each session.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.len())
            .filter_map(|k| self.cell(k, k))
            .collect()
    }
}

/// Outcome of one strategy over a sequence of datasets.
#[derive(Clone, Debug)]
pub struct ExperimentRun<T> {
    pub matrix: RetentionMatrix,
    pub state: SessionState<T>,
}

/// Trains session by session on the training partitions of `datasets` and
/// after each session evaluates on the test partitions seen so far.
/// `after_session` observes the state after every session (e.g. to write
/// checkpoints).
pub fn retention_experiment<T: Real>(
    datasets: &[TaskDataset],
    model_config: &ModelConfig,
    cfg: &TrainingConfig,
    mut after_session: impl FnMut(&SessionState<T>) -> Result<()>,
) -> Result<ExperimentRun<T>> {
    if datasets.len() < 2 {
        return Err(ExperimentError::Config(
            "a retention experiment needs at least two datasets".into(),
        ));
    }
    let splits: Vec<(TaskDataset, TaskDataset)> = datasets
        .iter()
        .enumerate()
        .map(|(k, d)| d.clone().with_task(k).partition())
        .collect();
    let mut state = SessionState::new(*model_config, datasets[0].catalog.clone(), cfg)?;
    let mut rows = Vec::with_capacity(datasets.len());
    for (train_split, _) in &splits {
        state = run_session(state, train_split, cfg)?;
        after_session(&state)?;
        let row = splits[..state.k]
            .iter()
            .map(|(_, test)| evaluate(&state.model, test, cfg.delta, cfg.threshold))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(ExperimentRun {
        matrix: RetentionMatrix {
            strategy: cfg.strategy,
            rows,
        },
        state,
    })
}

/// Moved Correct on the newest dataset per session, per strategy.
pub fn new_task_report(matrices: &[RetentionMatrix]) -> Vec<(Strategy, Vec<f64>)> {
    matrices
        .iter()
        .map(|m| (m.strategy, m.diagonal()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub rows: Vec<LedgerRow>,
    pub total_samples: usize,
    pub total_cpu_seconds: f64,
}

pub fn efficiency_report(ledger: &[LedgerRow]) -> EfficiencyReport {
    EfficiencyReport {
        rows: ledger.to_vec(),
        total_samples: ledger.iter().map(|r| r.training_samples).sum(),
        total_cpu_seconds: ledger.iter().map(|r| r.cpu_seconds).sum(),
    }
}

/// Upper bound on the streak training set of session `k` given the dataset
/// sizes of sessions `0..=k`.
pub fn streak_sample_bound(sizes: &[usize], beta: f64) -> f64 {
    let k = sizes.len() - 1;
    sizes[k] as f64
        + sizes[..k]
            .iter()
            .enumerate()
            .map(|(j, &s)| s as f64 / (beta * (k - j) as f64))
            .sum::<f64>()
        + k as f64
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[derive(Clone, Copy, Debug)]
pub struct CpuTimer(f64);

impl CpuTimer {
    pub fn start() -> Self {
        Self(thread_cpu_seconds())
    }

    pub fn elapsed(&self) -> f64 {
        thread_cpu_seconds() - self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("complete".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainingConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainingConfig {
                epochs: 0,
                ..ok.clone()
            },
            TrainingConfig {
                batch_size: 0,
                ..ok.clone()
            },
            TrainingConfig {
                delta: 15,
                ..ok.clone()
            },
            TrainingConfig {
                threshold: 1.0,
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(ExperimentError::Config(_))));
        }
    }

    #[test]
    fn hand_scored_transition() {
        // objects 0 and 1 move; 0 predicted right, 1 predicted wrong, 2 falsely moved
        let current = [0, 0, 1, 2, 3];
        let target = [1, 2, 1, 2, 3];
        let predicted = [Some(1), Some(3), Some(0), None, None];
        let c = score_transition(&current, &target, &predicted);
        assert_eq!(
            c,
            OutcomeCounts {
                moved_correct: 1,
                moved_wrong: 1,
                moved_missed: 0,
                unmoved_correct: 2,
                unmoved_wrong: 1,
            }
        );
        let p = c.percentages();
        assert_eq!(
            (p.moved_correct, p.moved_wrong, p.moved_missed),
            (50.0, 50.0, 0.0)
        );
        assert!((p.unmoved_correct - 66.6667).abs() < 1e-3);
        assert!((p.unmoved_wrong - 33.3333).abs() < 1e-3);
    }

    #[test]
    fn predict_nothing_misses_everything() {
        let c = score_transition(&[0, 1, 2], &[1, 1, 0], &[None, None, None]);
        let p = c.percentages();
        assert_eq!((p.moved_missed, p.unmoved_correct), (100.0, 100.0));
    }

    #[test]
    fn retention_matrix_accessors() {
        let r = |mc: u64| {
            MetricsReport::new(
                "d".into(),
                1,
                OutcomeCounts {
                    moved_correct: mc,
                    moved_missed: 4 - mc,
                    ..Default::default()
                },
            )
        };
        let m = RetentionMatrix {
            strategy: Strategy::Finetuned,
            rows: vec![vec![r(4)], vec![r(1), r(3)]],
        };
        assert_eq!(m.cell(0, 0), Some(100.0));
        assert_eq!(m.cell(0, 1), None);
        assert_eq!(m.diagonal(), vec![100.0, 75.0]);
        assert_eq!(m.retention(), Some(50.0));
    }

    #[test]
    fn rng_state_round_trip() {
        use rand::RngCore;
        let mut rng = stream_rng(7, SHUFFLE_STREAM);
        rng.next_u64();
        let saved = RngState::capture(&rng);
        let a = rng.next_u64();
        assert_eq!(saved.restore().next_u64(), a);
    }

    #[test]
    fn joint_sample_counts_are_cumulative() {
        let sizes = [5175usize; 5];
        let joint: Vec<usize> = (1..=5).map(|k| sizes[..k].iter().sum()).collect();
        assert_eq!(joint, vec![5175, 10350, 15525, 20700, 25875]);
        assert!((streak_sample_bound(&sizes[..2], 10.0) - (5175.0 + 517.5 + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn cpu_timer_advances() {
        let t = CpuTimer::start();
        let mut x = 0u64;
        for i in 0..2_000_000u64 {
            x = x.wrapping_add(i * i);
        }
        std::hint::black_box(x);
        assert!(t.elapsed() > 0.0);
    }
}
