//! Message-passing model that forecasts the environment graph one horizon ahead.
//!
//! Objects and locations carry learned embeddings. `rounds` rounds of message
//! passing run along the "is-in" edges in both directions (scatter-add
//! aggregation, ReLU). Three heads read the final embeddings:
//!
//! * move head: 2-class logits per object from its node and edge embeddings
//!   and the time embedding,
//! * location head: bilinear score for every (object, location) pair,
//! * context head: linear map of the mean node embedding.
//!
//! The output layers of the move and location heads start at zero, so an
//! untrained model predicts move probability 0.5 and a uniform location
//! distribution.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdomain::{
    time_encoding, EntityCatalog, GraphError, GraphSnapshot, IndexedGraph, RelocationEvent,
    Timestamp, TransitionPair, TIME_ENCODING_DIM,
};
use crate::numcore::{CosineTarget, NumError, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("snapshot does not match the model catalog")]
    CatalogMismatch,
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("flat parameter vector has length {got}, expected {expected}")]
    FlatLength { got: usize, expected: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub rounds: usize,
    pub hidden: usize,
    /// Move probability above which an object is predicted to move.
    pub threshold: f64,
    /// Prediction horizon in minutes.
    pub horizon: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            rounds: 2,
            hidden: 64,
            threshold: 0.5,
            horizon: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(m.into()));
        if self.embed_dim < 2 {
            return fail("embed_dim must be at least 2");
        }
        if self.rounds < 1 {
            return fail("rounds must be at least 1");
        }
        if self.hidden < 1 {
            return fail("hidden must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must lie in (0, 1)");
        }
        if self.horizon == 0 {
            return fail("horizon must be positive");
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParameterSet<T> {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation of all tensors in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(ModelError::FlatLength {
                got: flat.len(),
                expected: self.len(),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

enum Init {
    Embedding,
    Weight,
    Zero,
}

/// Positions of every parameter inside a [`ParameterSet`].
#[derive(Clone, Debug)]
struct Layout {
    object_embed: usize,
    location_embed: usize,
    rounds: Vec<[usize; 4]>,
    edge: [usize; 3],
    time: [usize; 2],
    move_head: [usize; 6],
    location_head: [usize; 2],
    context: [usize; 2],
}

fn parameter_specs(
    cfg: &ModelConfig,
    objects: usize,
    locations: usize,
) -> (Vec<(String, Vec<usize>, Init)>, Layout) {
    let (d, h) = (cfg.embed_dim, cfg.hidden);
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push((name, shape, init));
        specs.len() - 1
    };
    let object_embed = push("embed.object".into(), vec![objects, d], Init::Embedding);
    let location_embed = push("embed.location".into(), vec![locations, d], Init::Embedding);
    let rounds = (0..cfg.rounds)
        .map(|r| {
            [
                push(format!("round{r}.self"), vec![d, d], Init::Weight),
                push(format!("round{r}.from_location"), vec![d, d], Init::Weight),
                push(format!("round{r}.from_objects"), vec![d, d], Init::Weight),
                push(format!("round{r}.bias"), vec![1, d], Init::Zero),
            ]
        })
        .collect();
    let edge = [
        push("edge.object".into(), vec![d, d], Init::Weight),
        push("edge.location".into(), vec![d, d], Init::Weight),
        push("edge.bias".into(), vec![1, d], Init::Zero),
    ];
    let time = [
        push(
            "time.weight".into(),
            vec![TIME_ENCODING_DIM, d],
            Init::Weight,
        ),
        push("time.bias".into(), vec![1, d], Init::Zero),
    ];
    let move_head = [
        push("move.node".into(), vec![d, h], Init::Weight),
        push("move.edge".into(), vec![d, h], Init::Weight),
        push("move.time".into(), vec![d, h], Init::Weight),
        push("move.bias".into(), vec![1, h], Init::Zero),
        push("move.out".into(), vec![h, 2], Init::Zero),
        push("move.out_bias".into(), vec![1, 2], Init::Zero),
    ];
    let location_head = [
        push("location.query_time".into(), vec![d, d], Init::Weight),
        push("location.bilinear".into(), vec![d, d], Init::Zero),
    ];
    let context = [
        push("context.weight".into(), vec![d, d], Init::Weight),
        push("context.bias".into(), vec![1, d], Init::Zero),
    ];
    let layout = Layout {
        object_embed,
        location_embed,
        rounds,
        edge,
        time,
        move_head,
        location_head,
        context,
    };
    (specs, layout)
}

/// Per-snapshot embeddings: nodes (objects then locations), one edge per
/// object, and the time embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle<T> {
    pub nodes: Tensor<T>,
    pub edges: Tensor<T>,
    pub time: Tensor<T>,
}

impl<T: Real> EmbeddingBundle<T> {
    pub fn dim(&self) -> usize {
        self.nodes.cols()
    }

    /// Every embedding vector of the bundle: nodes, edges, then time.
    pub fn vectors(&self) -> impl Iterator<Item = &[T]> {
        [&self.nodes, &self.edges, &self.time]
            .into_iter()
            .flat_map(|t| (0..t.rows()).map(move |r| t.row(r)))
    }
}

/// Forecast of the graph one horizon ahead.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedGraph<T> {
    pub catalog: Arc<EntityCatalog>,
    pub t: Timestamp,
    pub horizon: u64,
    /// Probability that each object changes location.
    pub move_prob: Vec<T>,
    /// Row `i` is object `i`'s distribution over locations.
    pub location_probs: Tensor<T>,
    pub context: Vec<T>,
    /// Time embedding of `t + horizon`, the target of the context head.
    pub target_time_embedding: Vec<T>,
}

impl<T: Real> PredictedGraph<T> {
    /// Most likely location per object, ties to the lowest index.
    pub fn argmax_locations(&self) -> Vec<usize> {
        (0..self.location_probs.rows())
            .map(|r| {
                let row = self.location_probs.row(r);
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Predicted destination per object, or `None` when predicted to stay.
    pub fn decode_indexed(&self, current: &[usize], threshold: f64) -> Vec<Option<usize>> {
        let dest = self.argmax_locations();
        self.move_prob
            .iter()
            .zip(dest)
            .zip(current)
            .map(|((&p, to), &from)| (p.as_f64() > threshold && to != from).then_some(to))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub class: T,
    pub location: T,
    pub context: T,
    pub total: T,
}

/// Handles of one forward pass on a tape.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub object_nodes: Var,
    pub location_nodes: Var,
    pub edges: Var,
    pub time: Var,
    pub move_logits: Var,
    pub location_scores: Var,
    pub context: Var,
    pub target_time: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub class: Var,
    pub location: Var,
    pub context: Var,
    pub total: Var,
}

/// The relocation model: configuration, catalog and parameters.
#[derive(Clone, Debug)]
pub struct RelocModel<T> {
    pub config: ModelConfig,
    pub catalog: Arc<EntityCatalog>,
    pub params: ParameterSet<T>,
    layout: Layout,
}

impl<T: Real> RelocModel<T> {
    /// Fresh model: embeddings uniform in `±1/sqrt(d)`, hidden weights uniform
    /// in `±1/sqrt(fan_in)`, biases and head outputs zero.
    pub fn init<R: Rng>(
        config: ModelConfig,
        catalog: Arc<EntityCatalog>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (specs, layout) =
            parameter_specs(&config, catalog.objects().len(), catalog.locations().len());
        let emb = 1.0 / (config.embed_dim as f64).sqrt();
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let bound = match init {
                Init::Embedding => emb,
                Init::Weight => 1.0 / (shape[0] as f64).sqrt(),
                Init::Zero => 0.0,
            };
            let data = (0..n)
                .map(|_| {
                    if bound > 0.0 {
                        T::lit(rng.gen_range(-bound..bound))
                    } else {
                        T::zero()
                    }
                })
                .collect();
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            catalog,
            params: ParameterSet::new(names, tensors),
            layout,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(
        config: ModelConfig,
        catalog: Arc<EntityCatalog>,
        params: ParameterSet<T>,
    ) -> Result<Self> {
        config.validate()?;
        let (specs, layout) =
            parameter_specs(&config, catalog.objects().len(), catalog.locations().len());
        if specs.len() != params.names().len() {
            return Err(ModelError::Config("parameter count mismatch".into()));
        }
        for ((name, shape, _), (have, t)) in specs
            .iter()
            .zip(params.names().iter().zip(params.tensors()))
        {
            if name != have {
                return Err(ModelError::UnknownParameter(have.clone()));
            }
            if shape.as_slice() != t.shape() {
                return Err(ModelError::Config(format!(
                    "shape of {name} is {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            catalog,
            params,
            layout,
        })
    }

    pub fn with_params(&self, params: ParameterSet<T>) -> Result<Self> {
        Self::from_params(self.config, self.catalog.clone(), params)
    }

    /// Cast to another precision.
    pub fn cast<U: Real>(&self) -> RelocModel<U> {
        RelocModel {
            config: self.config,
            catalog: self.catalog.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn indexed(&self, snapshot: &GraphSnapshot) -> Result<IndexedGraph> {
        if *snapshot.catalog != *self.catalog {
            return Err(ModelError::CatalogMismatch);
        }
        Ok(snapshot.to_indexed()?)
    }

    fn check_indexed(&self, g: &IndexedGraph) -> Result<()> {
        let n_loc = self.catalog.locations().len();
        if g.parent.len() != self.catalog.objects().len() || g.parent.iter().any(|&p| p >= n_loc) {
            return Err(ModelError::CatalogMismatch);
        }
        Ok(())
    }

    /// Records every parameter as a differentiable leaf.
    pub fn param_vars(&self, tape: &mut Tape<T>) -> Result<Vec<Var>> {
        self.params
            .tensors()
            .iter()
            .map(|t| tape.param(t.clone()).map_err(ModelError::from))
            .collect()
    }

    fn time_embedding(&self, tape: &mut Tape<T>, p: &[Var], t: Timestamp) -> Result<Var> {
        let enc = time_encoding(t).into_iter().map(T::lit).collect();
        let enc = tape.constant(Tensor::matrix(1, TIME_ENCODING_DIM, enc)?)?;
        let [w, b] = self.layout.time;
        let x = tape.matmul(enc, p[w])?;
        Ok(tape.add(x, p[b])?)
    }

    /// Records a full forward pass for `input`, predicting the graph at `target_t`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        input: &IndexedGraph,
        target_t: Timestamp,
    ) -> Result<ForwardVars> {
        self.check_indexed(input)?;
        let l = &self.layout;
        let parent = &input.parent;
        let (n_obj, n_loc) = (parent.len(), self.catalog.locations().len());

        let mut ho = p[l.object_embed];
        let mut hl = p[l.location_embed];
        for &r in &l.rounds {
            let [w_self, w_from_loc, w_from_obj, bias] = r.map(|i| p[i]);
            let so = tape.matmul(ho, w_self)?;
            let sl = tape.matmul(hl, w_self)?;
            let lo = tape.matmul(hl, w_from_loc)?;
            let to_objects = tape.gather_rows(lo, parent)?;
            let ol = tape.matmul(ho, w_from_obj)?;
            let to_locations = tape.scatter_add_rows(ol, parent, n_loc)?;
            let o = tape.add(so, to_objects)?;
            let o = tape.add(o, bias)?;
            let lz = tape.add(sl, to_locations)?;
            let lz = tape.add(lz, bias)?;
            ho = tape.relu(o)?;
            hl = tape.relu(lz)?;
        }

        let [we_o, we_l, be] = l.edge.map(|i| p[i]);
        let eo = tape.matmul(ho, we_o)?;
        let el = tape.matmul(hl, we_l)?;
        let el = tape.gather_rows(el, parent)?;
        let e = tape.add(eo, el)?;
        let e = tape.add(e, be)?;
        let edges = tape.relu(e)?;

        let time = self.time_embedding(tape, p, input.t)?;
        let target_time = self.time_embedding(tape, p, target_t)?;

        let [m_node, m_edge, m_time, m_bias, m_out, m_out_bias] = l.move_head.map(|i| p[i]);
        let a = tape.matmul(ho, m_node)?;
        let b = tape.matmul(edges, m_edge)?;
        let c = tape.matmul(time, m_time)?;
        let c = tape.add(c, m_bias)?;
        let hidden = tape.add(a, b)?;
        let hidden = tape.add(hidden, c)?;
        let hidden = tape.relu(hidden)?;
        let logits = tape.matmul(hidden, m_out)?;
        let move_logits = tape.add(logits, m_out_bias)?;

        let [q_time, bilinear] = l.location_head.map(|i| p[i]);
        let qt = tape.matmul(time, q_time)?;
        let query = tape.add(ho, qt)?;
        let query = tape.matmul(query, bilinear)?;
        let location_scores = tape.matmul_nt(query, hl)?;

        let [c_w, c_b] = l.context.map(|i| p[i]);
        let so = tape.scatter_add_rows(ho, &vec![0; n_obj], 1)?;
        let sl = tape.scatter_add_rows(hl, &vec![0; n_loc], 1)?;
        let s = tape.add(so, sl)?;
        let mean = tape.scale(s, T::one() / T::lit((n_obj + n_loc) as f64))?;
        let ctx = tape.matmul(mean, c_w)?;
        let context = tape.add(ctx, c_b)?;

        Ok(ForwardVars {
            object_nodes: ho,
            location_nodes: hl,
            edges,
            time,
            move_logits,
            location_scores,
            context,
            target_time,
        })
    }

    /// Records the three-part model loss for one transition.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        f: &ForwardVars,
        current: &IndexedGraph,
        target: &IndexedGraph,
    ) -> Result<LossVars> {
        self.check_indexed(target)?;
        let moved: Vec<usize> = current
            .parent
            .iter()
            .zip(&target.parent)
            .map(|(a, b)| usize::from(a != b))
            .collect();
        let class = tape.softmax_cross_entropy(f.move_logits, &moved)?;
        let moved_idx: Vec<usize> = (0..moved.len()).filter(|&i| moved[i] == 1).collect();
        let location = if moved_idx.is_empty() {
            tape.constant(Tensor::scalar(T::zero()))?
        } else {
            let rows = tape.gather_rows(f.location_scores, &moved_idx)?;
            let targets: Vec<usize> = moved_idx.iter().map(|&i| target.parent[i]).collect();
            tape.softmax_cross_entropy(rows, &targets)?
        };
        let context =
            tape.cosine_embedding_loss(f.context, f.target_time, CosineTarget::Similar)?;
        let total = tape.add(class, location)?;
        let total = tape.add(total, context)?;
        Ok(LossVars {
            class,
            location,
            context,
            total,
        })
    }

    /// Loss and parameter gradients for one transition pair.
    pub fn loss_and_gradient(
        &self,
        tape: &mut Tape<T>,
        pair: &TransitionPair,
    ) -> Result<(LossBreakdown<T>, Vec<Tensor<T>>)> {
        tape.clear();
        let p = self.param_vars(tape)?;
        let f = self.forward(tape, &p, &pair.input, pair.target.t)?;
        let l = self.loss_on_tape(tape, &f, &pair.input, &pair.target)?;
        let grads = tape.gradient(l.total, &p)?;
        let v = |x: Var| tape.value(x).item();
        Ok((
            LossBreakdown {
                class: v(l.class),
                location: v(l.location),
                context: v(l.context),
                total: v(l.total),
            },
            grads,
        ))
    }

    pub fn encode_indexed(&self, input: &IndexedGraph) -> Result<EmbeddingBundle<T>> {
        let mut tape = Tape::new();
        let p = self.param_vars(&mut tape)?;
        let f = self.forward(&mut tape, &p, input, input.t)?;
        let (o, l) = (tape.value(f.object_nodes), tape.value(f.location_nodes));
        let mut nodes = o.data().to_vec();
        nodes.extend_from_slice(l.data());
        Ok(EmbeddingBundle {
            nodes: Tensor::matrix(o.rows() + l.rows(), o.cols(), nodes)?,
            edges: tape.value(f.edges).clone(),
            time: tape.value(f.time).clone(),
        })
    }

    pub fn encode(&self, snapshot: &GraphSnapshot) -> Result<EmbeddingBundle<T>> {
        let g = self.indexed(snapshot)?;
        self.encode_indexed(&g)
    }

    pub fn predict_indexed(&self, input: &IndexedGraph, horizon: u64) -> Result<PredictedGraph<T>> {
        let mut tape = Tape::new();
        let p = self.param_vars(&mut tape)?;
        let target_t = input.t.plus(horizon);
        let f = self.forward(&mut tape, &p, input, target_t)?;
        let logits = tape.value(f.move_logits);
        let move_prob = (0..logits.rows())
            .map(|r| softmax(logits.row(r))[1])
            .collect();
        let scores = tape.value(f.location_scores);
        let mut probs = Vec::with_capacity(scores.len());
        for r in 0..scores.rows() {
            probs.extend(softmax(scores.row(r)));
        }
        Ok(PredictedGraph {
            catalog: self.catalog.clone(),
            t: input.t,
            horizon,
            move_prob,
            location_probs: Tensor::matrix(scores.rows(), scores.cols(), probs)?,
            context: tape.value(f.context).data().to_vec(),
            target_time_embedding: tape.value(f.target_time).data().to_vec(),
        })
    }

    pub fn predict(&self, snapshot: &GraphSnapshot, horizon: u64) -> Result<PredictedGraph<T>> {
        let g = self.indexed(snapshot)?;
        self.predict_indexed(&g, horizon)
    }
}

fn softmax<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn neg_ln<T: Real>(p: T) -> T {
    -(p.max(T::min_positive_value())).ln()
}

/// Model loss evaluated on a finished prediction.
///
/// Matches [`RelocModel::loss_on_tape`] up to floating point rounding.
pub fn model_loss<T: Real>(
    pred: &PredictedGraph<T>,
    target: &GraphSnapshot,
    current: &GraphSnapshot,
) -> Result<LossBreakdown<T>> {
    if *target.catalog != *pred.catalog || *current.catalog != *pred.catalog {
        return Err(ModelError::CatalogMismatch);
    }
    let (cur, tgt) = (current.to_indexed()?, target.to_indexed()?);
    let n = cur.parent.len();
    let mut class = T::zero();
    let mut location = T::zero();
    let mut moved = 0usize;
    for i in 0..n {
        let p = pred.move_prob[i];
        if cur.parent[i] != tgt.parent[i] {
            class += neg_ln(p);
            location += neg_ln(pred.location_probs.row(i)[tgt.parent[i]]);
            moved += 1;
        } else {
            class += neg_ln(T::one() - p);
        }
    }
    class /= T::lit(n as f64);
    if moved > 0 {
        location /= T::lit(moved as f64);
    }
    let (a, b) = (&pred.context, &pred.target_time_embedding);
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(NumError::ZeroVector.into());
    }
    let context = T::one() - dot / (na * nb);
    Ok(LossBreakdown {
        class,
        location,
        context,
        total: class + location + context,
    })
}

/// Relocations implied by a prediction: an object moves when its move
/// probability exceeds `threshold` and its most likely location differs from
/// where it is now.
pub fn decode_relocations<T: Real>(
    pred: &PredictedGraph<T>,
    current: &GraphSnapshot,
    threshold: f64,
) -> Result<Vec<RelocationEvent>> {
    if *current.catalog != *pred.catalog {
        return Err(ModelError::CatalogMismatch);
    }
    let cur = current.to_indexed()?;
    let window = (pred.t, pred.t.plus(pred.horizon));
    let (objects, locations) = (pred.catalog.objects(), pred.catalog.locations());
    Ok(pred
        .decode_indexed(&cur.parent, threshold)
        .into_iter()
        .enumerate()
        .filter_map(|(i, to)| {
            to.map(|to| RelocationEvent {
                object: objects[i].id,
                from: locations[cur.parent[i]].id,
                to: locations[to].id,
                window,
            })
        })
        .collect())
}
