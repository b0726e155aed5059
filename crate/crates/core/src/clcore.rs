//! Continual-learning machinery.
//!
//! * Consolidation: `(lambda / 2) * sum_i F_i (theta_i - theta_prev_i)^2`,
//!   anchored at the parameters that ended the previous session.
//! * Fisher diagonal: mean squared gradient of the model loss per parameter.
//! * Mean feature vector: average of every node, edge and time embedding seen
//!   in a session. Samples whose own mean embedding lies closest to it are
//!   the most informative.
//! * Memory buffer: the current session is kept whole while each past session
//!   `j` keeps `round(|D_j| / (beta * (k - j)))` of its most informative
//!   samples at session `k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{NumError, Real, Tape, Tensor, Var};
use crate::relocnet::EmbeddingBundle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClError {
    #[error("length mismatch: {what} has {got} values, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{0} requires at least one sample")]
    Empty(&'static str),
    #[error("embedding dimension mismatch: {got} vs {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("session {k} does not follow the buffered sessions")]
    SessionOrder { k: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, ClError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClHyperparams {
    /// Consolidation weight.
    pub lambda: f64,
    /// Buffer decay factor.
    pub beta: f64,
}

impl Default for ClHyperparams {
    fn default() -> Self {
        Self {
            lambda: 200.0,
            beta: 10.0,
        }
    }
}

impl ClHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ClError::Hyperparams(
                "lambda must be finite and >= 0".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ClError::Hyperparams("beta must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Per-parameter importance, aligned with the flattened parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal<T> {
    pub values: Vec<T>,
}

/// Parameters and Fisher diagonal frozen at the end of the previous session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationAnchor<T> {
    pub theta: Vec<T>,
    pub fisher: FisherDiagonal<T>,
}

impl<T: Real> ConsolidationAnchor<T> {
    pub fn new(theta: Vec<T>, fisher: FisherDiagonal<T>) -> Result<Self> {
        if theta.len() != fisher.values.len() {
            return Err(ClError::Length {
                what: "fisher",
                got: fisher.values.len(),
                expected: theta.len(),
            });
        }
        Ok(Self { theta, fisher })
    }

    fn check(&self, theta: &[T]) -> Result<()> {
        self.check_len(theta.len())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.theta.len() {
            return Err(ClError::Length {
                what: "theta",
                got: len,
                expected: self.theta.len(),
            });
        }
        Ok(())
    }
}

/// Value of the consolidation penalty.
pub fn consolidation_loss<T: Real>(
    theta: &[T],
    anchor: &ConsolidationAnchor<T>,
    lambda: f64,
) -> Result<T> {
    anchor.check(theta)?;
    let s: f64 = theta
        .iter()
        .zip(&anchor.theta)
        .zip(&anchor.fisher.values)
        .map(|((&t, &p), &f)| {
            let d = (t - p).as_f64();
            f.as_f64() * d * d
        })
        .sum();
    Ok(T::lit(0.5 * lambda * s))
}

/// Closed-form gradient `lambda * F * (theta - theta_prev)`.
pub fn consolidation_gradient<T: Real>(
    theta: &[T],
    anchor: &ConsolidationAnchor<T>,
    lambda: f64,
) -> Result<Vec<T>> {
    anchor.check(theta)?;
    let l = T::lit(lambda);
    Ok(theta
        .iter()
        .zip(&anchor.theta)
        .zip(&anchor.fisher.values)
        .map(|((&t, &p), &f)| l * f * (t - p))
        .collect())
}

/// Adds the closed-form consolidation gradient to per-tensor gradients in
/// place. Equivalent to [`consolidation_gradient`] on the flattened tensors.
pub fn add_consolidation_gradient<T: Real>(
    params: &[Tensor<T>],
    grads: &mut [Tensor<T>],
    anchor: &ConsolidationAnchor<T>,
    lambda: f64,
) -> Result<()> {
    let total: usize = params.iter().map(Tensor::len).sum();
    anchor.check_len(total)?;
    let l = T::lit(lambda);
    let mut offset = 0;
    for (p, g) in params.iter().zip(grads.iter_mut()) {
        let n = p.len();
        if g.len() != n {
            return Err(ClError::Length {
                what: "gradient",
                got: g.len(),
                expected: n,
            });
        }
        let prev = &anchor.theta[offset..offset + n];
        let fisher = &anchor.fisher.values[offset..offset + n];
        for (((x, &t), &tp), &f) in g.data_mut().iter_mut().zip(p.data()).zip(prev).zip(fisher) {
            *x += l * f * (t - tp);
        }
        offset += n;
    }
    Ok(())
}

/// Records the consolidation penalty on a tape over parameter leaves whose
/// concatenation matches the anchor.
pub fn consolidation_on_tape<T: Real>(
    tape: &mut Tape<T>,
    params: &[Var],
    anchor: &ConsolidationAnchor<T>,
    lambda: f64,
) -> Result<Var> {
    let total_len: usize = params.iter().map(|&v| tape.value(v).len()).sum();
    if total_len != anchor.theta.len() {
        return Err(ClError::Length {
            what: "theta",
            got: total_len,
            expected: anchor.theta.len(),
        });
    }
    let half = T::lit(0.5 * lambda);
    let mut offset = 0;
    let mut acc: Option<Var> = None;
    for &v in params {
        let shape = tape.value(v).shape().to_vec();
        let n = tape.value(v).len();
        let prev = Tensor::new(shape.clone(), anchor.theta[offset..offset + n].to_vec())?;
        let weight = anchor.fisher.values[offset..offset + n]
            .iter()
            .map(|&f| half * f)
            .collect();
        let weight = Tensor::new(shape, weight)?;
        offset += n;
        let prev = tape.constant(prev)?;
        let weight = tape.constant(weight)?;
        let diff = tape.sub(v, prev)?;
        let sq = tape.mul(diff, diff)?;
        let weighted = tape.mul(weight, sq)?;
        let s = tape.sum(weighted)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(tape.constant(Tensor::scalar(T::zero()))?),
    }
}

/// Empirical Fisher diagonal: mean over samples of the squared flat gradient.
pub fn fisher_diagonal<T: Real, S, E: From<ClError>>(
    samples: &[S],
    mut gradient: impl FnMut(&S) -> std::result::Result<Vec<T>, E>,
) -> std::result::Result<FisherDiagonal<T>, E> {
    let (first, rest) = samples
        .split_first()
        .ok_or(ClError::Empty("fisher_diagonal"))?;
    let g = gradient(first)?;
    let mut acc: Vec<f64> = g.iter().map(|&x| x.as_f64() * x.as_f64()).collect();
    for s in rest {
        let g = gradient(s)?;
        if g.len() != acc.len() {
            return Err(ClError::Length {
                what: "gradient",
                got: g.len(),
                expected: acc.len(),
            }
            .into());
        }
        for (a, &x) in acc.iter_mut().zip(&g) {
            let x = x.as_f64();
            *a += x * x;
        }
    }
    let n = samples.len() as f64;
    Ok(FisherDiagonal {
        values: acc.into_iter().map(|a| T::lit(a / n)).collect(),
    })
}

/// Average of all node, edge and time embeddings of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFeatureVector {
    pub values: Vec<f64>,
    pub nodes: usize,
    pub edges: usize,
    pub times: usize,
}

pub fn mean_feature_vector<T: Real>(bundles: &[EmbeddingBundle<T>]) -> Result<MeanFeatureVector> {
    let dim = bundles
        .first()
        .ok_or(ClError::Empty("mean_feature_vector"))?
        .dim();
    let mut sum = vec![0.0f64; dim];
    let (mut nodes, mut edges, mut times) = (0, 0, 0);
    for b in bundles {
        for t in [&b.nodes, &b.edges, &b.time] {
            if t.rows() > 0 && t.cols() != dim {
                return Err(ClError::Dimension {
                    got: t.cols(),
                    expected: dim,
                });
            }
        }
        for v in b.vectors() {
            for (s, &x) in sum.iter_mut().zip(v) {
                *s += x.as_f64();
            }
        }
        nodes += b.nodes.rows();
        edges += b.edges.rows();
        times += b.time.rows();
    }
    let count = (nodes + edges + times) as f64;
    Ok(MeanFeatureVector {
        values: sum.into_iter().map(|s| s / count).collect(),
        nodes,
        edges,
        times,
    })
}

/// Mean of one sample's embedding vectors.
pub fn sample_aggregate<T: Real>(bundle: &EmbeddingBundle<T>) -> Vec<f64> {
    let mut sum = vec![0.0f64; bundle.dim()];
    let mut count = 0usize;
    for v in bundle.vectors() {
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += x.as_f64();
        }
        count += 1;
    }
    sum.into_iter().map(|s| s / count.max(1) as f64).collect()
}

/// Euclidean distance between a sample's aggregate embedding and `c_l`.
/// Smaller means more informative.
pub fn sample_informativeness<T: Real>(
    bundle: &EmbeddingBundle<T>,
    mean: &MeanFeatureVector,
) -> Result<f64> {
    let agg = sample_aggregate(bundle);
    if agg.len() != mean.values.len() {
        return Err(ClError::Dimension {
            got: agg.len(),
            expected: mean.values.len(),
        });
    }
    Ok(euclidean(&agg, &mean.values))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Number of samples session `j` keeps in the buffer of session `k`.
pub trait QuotaRule {
    fn quota(&self, dataset_size: usize, k: usize, j: usize) -> usize;
}

/// Current session whole, past session `j` decayed by `1 / (beta * (k - j))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayedQuota {
    pub beta: f64,
}

impl QuotaRule for DecayedQuota {
    fn quota(&self, dataset_size: usize, k: usize, j: usize) -> usize {
        if j >= k {
            dataset_size
        } else {
            round_half_up(dataset_size as f64 / (self.beta * (k - j) as f64))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry<S> {
    pub sample: S,
    /// Position of the sample within its session's dataset.
    pub index: usize,
    pub distance: f64,
}

/// Retained samples of one past (or the current) session, most informative first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMemory<S> {
    pub session: usize,
    pub dataset_size: usize,
    pub mean_feature: MeanFeatureVector,
    pub entries: Vec<BufferEntry<S>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer<S> {
    pub sessions: Vec<SessionMemory<S>>,
}

impl<S> Default for MemoryBuffer<S> {
    fn default() -> Self {
        Self {
            sessions: Vec::new(),
        }
    }
}

impl<S: Clone> MemoryBuffer<S> {
    pub fn len(&self) -> usize {
        self.sessions.iter().map(|s| s.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(session, retained count)` pairs.
    pub fn session_counts(&self) -> Vec<(usize, usize)> {
        self.sessions
            .iter()
            .map(|s| (s.session, s.entries.len()))
            .collect()
    }

    /// Past samples rehearsed during session `k`.
    pub fn rehearsal(&self, k: usize, rule: &dyn QuotaRule) -> Vec<&BufferEntry<S>> {
        self.sessions
            .iter()
            .filter(|s| s.session < k)
            .flat_map(|s| {
                let q = rule
                    .quota(s.dataset_size, k, s.session)
                    .min(s.entries.len());
                s.entries[..q].iter()
            })
            .collect()
    }

    /// Builds the buffer of session `k` from the previous buffer and the
    /// session's dataset with its end-of-session embeddings.
    pub fn update<T: Real>(
        &self,
        samples: Vec<S>,
        bundles: &[EmbeddingBundle<T>],
        rule: &dyn QuotaRule,
        k: usize,
    ) -> Result<Self> {
        if samples.len() != bundles.len() {
            return Err(ClError::Length {
                what: "bundles",
                got: bundles.len(),
                expected: samples.len(),
            });
        }
        if self.sessions.iter().any(|s| s.session >= k) {
            return Err(ClError::SessionOrder { k });
        }
        let mean = mean_feature_vector(bundles)?;
        let mut entries = samples
            .into_iter()
            .zip(bundles)
            .enumerate()
            .map(|(index, (sample, b))| {
                Ok(BufferEntry {
                    sample,
                    index,
                    distance: sample_informativeness(b, &mean)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.index.cmp(&b.index))
        });

        let mut sessions: Vec<SessionMemory<S>> = self
            .sessions
            .iter()
            .map(|s| {
                let q = rule
                    .quota(s.dataset_size, k, s.session)
                    .min(s.entries.len());
                SessionMemory {
                    session: s.session,
                    dataset_size: s.dataset_size,
                    mean_feature: s.mean_feature.clone(),
                    entries: s.entries[..q].to_vec(),
                }
            })
            .collect();
        sessions.push(SessionMemory {
            session: k,
            dataset_size: entries.len(),
            mean_feature: mean,
            entries,
        });
        Ok(Self { sessions })
    }
}

/// Buffer of session `k` under the adopted decayed weighting.
pub fn buffer_update<S: Clone, T: Real>(
    prev: &MemoryBuffer<S>,
    samples: Vec<S>,
    bundles: &[EmbeddingBundle<T>],
    hyper: &ClHyperparams,
    k: usize,
) -> Result<MemoryBuffer<S>> {
    hyper.validate()?;
    prev.update(samples, bundles, &DecayedQuota { beta: hyper.beta }, k)
}

/// Projected buffer size `mean * (1 + H_k / beta)` for `k = 0..=sessions`,
/// assuming equal dataset sizes.
pub fn buffer_size_forecast(mean_size: f64, beta: f64, sessions: usize) -> Vec<f64> {
    let mut harmonic = 0.0;
    (0..=sessions)
        .map(|k| {
            if k > 0 {
                harmonic += 1.0 / k as f64;
            }
            mean_size * (1.0 + harmonic / beta)
        })
        .collect()
}
