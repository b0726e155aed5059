//! Versioned binary checkpoints: magic, format version, a JSON manifest and
//! a little-endian payload holding every floating-point tensor.

use std::path::Path;
use std::sync::Arc;

use relocl_core::clcore::{ConsolidationAnchor, FisherDiagonal, MemoryBuffer};
use relocl_core::experiment::{LedgerRow, RngState, SessionState, Strategy, TrainingConfig};
use relocl_core::graphdomain::{EntityCatalog, TransitionPair};
use relocl_core::numcore::{AdamState, Real, Tensor};
use relocl_core::relocnet::{ModelConfig, ParameterSet, RelocModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RELOCLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Scalar types a checkpoint payload can hold.
pub trait PayloadScalar: Real {
    const PRECISION: &'static str;
    const WIDTH: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl PayloadScalar for f32 {
    const PRECISION: &'static str = "f32";
    const WIDTH: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("width checked"))
    }
}

impl PayloadScalar for f64 {
    const PRECISION: &'static str = "f64";
    const WIDTH: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("width checked"))
    }
}

/// A session state together with the training configuration that produced
/// it; resuming requires the same configuration.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub training: TrainingConfig,
    pub state: SessionState<T>,
}

/// Where a block of payload values belongs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: String,
    shape: Vec<usize>,
    /// Offset in values (not bytes) into the payload.
    offset: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    precision: String,
    strategy: Strategy,
    /// Sessions completed.
    session: usize,
    training: TrainingConfig,
    model_config: ModelConfig,
    catalog: EntityCatalog,
    params: Vec<Block>,
    optimizer_step: u64,
    first_moment: Vec<Block>,
    second_moment: Vec<Block>,
    anchor: Option<AnchorBlocks>,
    buffer: Option<MemoryBuffer<TransitionPair>>,
    joint_data: Option<Vec<Vec<TransitionPair>>>,
    ledger: Vec<LedgerRow>,
    rng: RngState,
    payload_values: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorBlocks {
    theta: Block,
    fisher: Block,
}

struct PayloadWriter<T> {
    bytes: Vec<u8>,
    values: usize,
    _t: std::marker::PhantomData<T>,
}

impl<T: PayloadScalar> PayloadWriter<T> {
    fn push(&mut self, name: &str, shape: Vec<usize>, data: &[T]) -> Block {
        let block = Block {
            name: name.to_string(),
            shape,
            offset: self.values,
        };
        debug_assert_eq!(block.len(), data.len());
        for &v in data {
            v.put(&mut self.bytes);
        }
        self.values += data.len();
        block
    }
}

pub fn encode<T: PayloadScalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let s = &ckpt.state;
    let mut w = PayloadWriter::<T> {
        bytes: Vec::new(),
        values: 0,
        _t: std::marker::PhantomData,
    };
    let params = s
        .model
        .params
        .names()
        .iter()
        .zip(s.model.params.tensors())
        .map(|(n, t)| w.push(n, t.shape().to_vec(), t.data()))
        .collect();
    let moments = |w: &mut PayloadWriter<T>, m: &[Vec<T>]| -> Vec<Block> {
        m.iter()
            .enumerate()
            .map(|(i, v)| w.push(&i.to_string(), vec![v.len()], v))
            .collect()
    };
    let first_moment = moments(&mut w, &s.optimizer.first_moment);
    let second_moment = moments(&mut w, &s.optimizer.second_moment);
    let anchor = s.anchor.as_ref().map(|a| AnchorBlocks {
        theta: w.push("theta", vec![a.theta.len()], &a.theta),
        fisher: w.push("fisher", vec![a.fisher.values.len()], &a.fisher.values),
    });
    let manifest = Manifest {
        precision: T::PRECISION.into(),
        strategy: s.strategy,
        session: s.k,
        training: ckpt.training.clone(),
        model_config: s.model.config,
        catalog: (*s.model.catalog).clone(),
        params,
        optimizer_step: s.optimizer.step,
        first_moment,
        second_moment,
        anchor,
        buffer: s.buffer.clone(),
        joint_data: s.joint_data.clone(),
        ledger: s.ledger.clone(),
        rng: s.rng,
        payload_values: w.values,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut out = Vec::with_capacity(24 + json.len() + w.bytes.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(w.bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&w.bytes);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Data("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode<T: PayloadScalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(CliError::Data("not a relocl checkpoint".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CliError::Data(format!(
            "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let manifest_len = r.u64()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(manifest_len)?)
        .map_err(|e| CliError::Data(format!("checkpoint manifest: {e}")))?;
    if manifest.precision != T::PRECISION {
        return Err(CliError::Data(format!(
            "checkpoint holds {} values, expected {}",
            manifest.precision,
            T::PRECISION
        )));
    }
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(CliError::Data(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    if payload_len != manifest.payload_values * T::WIDTH {
        return Err(CliError::Data("checkpoint payload size mismatch".into()));
    }
    let values: Vec<T> = payload.chunks_exact(T::WIDTH).map(T::get).collect();
    let slice = |b: &Block| -> Result<Vec<T>> {
        values
            .get(b.offset..b.offset + b.len())
            .map(<[T]>::to_vec)
            .ok_or_else(|| CliError::Data(format!("block {} lies outside the payload", b.name)))
    };

    let mut names = Vec::with_capacity(manifest.params.len());
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for b in &manifest.params {
        names.push(b.name.clone());
        tensors.push(
            Tensor::new(b.shape.clone(), slice(b)?).map_err(|e| CliError::Data(e.to_string()))?,
        );
    }
    let model = RelocModel::from_params(
        manifest.model_config,
        Arc::new(manifest.catalog),
        ParameterSet::new(names, tensors),
    )
    .map_err(|e| CliError::Data(format!("checkpoint parameters: {e}")))?;
    let moments = |blocks: &[Block]| blocks.iter().map(&slice).collect::<Result<Vec<_>>>();
    let optimizer = AdamState {
        step: manifest.optimizer_step,
        first_moment: moments(&manifest.first_moment)?,
        second_moment: moments(&manifest.second_moment)?,
    };
    let anchor = match &manifest.anchor {
        Some(a) => Some(
            ConsolidationAnchor::new(
                slice(&a.theta)?,
                FisherDiagonal {
                    values: slice(&a.fisher)?,
                },
            )
            .map_err(|e| CliError::Data(format!("checkpoint anchor: {e}")))?,
        ),
        None => None,
    };
    let state = SessionState {
        strategy: manifest.strategy,
        k: manifest.session,
        model,
        optimizer,
        anchor,
        buffer: manifest.buffer,
        joint_data: manifest.joint_data,
        ledger: manifest.ledger,
        rng: manifest.rng,
    };
    state
        .check_fields()
        .map_err(|e| CliError::Data(format!("checkpoint: {e}")))?;
    if manifest.training.strategy != state.strategy {
        return Err(CliError::Data(
            "checkpoint strategy disagrees with its config".into(),
        ));
    }
    Ok(Checkpoint {
        training: manifest.training,
        state,
    })
}

pub fn save<T: PayloadScalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    fsutil::write_atomic(path, &encode(ckpt)?)
}

pub fn load<T: PayloadScalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&fsutil::read(path)?).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// File name of the checkpoint written after session `k` (0-based).
pub fn session_file_name(k: usize) -> String {
    format!("session-{k}.ckpt")
}
