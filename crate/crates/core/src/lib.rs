//! Continual learning of object relocation routines from streams of household
//! graph snapshots.
//!
//! The crate is layered bottom-up:
//!
//! * [`numcore`]: dense tensors, a reverse-mode tape and the Adam optimizer.
//! * [`graphdomain`]: entity catalogs, in-tree snapshots, deltas and relocations.
//! * [`routinesim`]: a seeded generator of household routine streams.
//! * [`relocnet`]: the message-passing relocation model and its three-part loss.
//! * [`clcore`]: Fisher-weighted consolidation, mean-feature sample selection
//!   and the decaying rehearsal buffer.
//! * [`experiment`]: learning sessions for the three training strategies,
//!   outcome metrics, retention matrices and efficiency accounting.

pub mod clcore;
pub mod experiment;
pub mod graphdomain;
pub mod numcore;
pub mod relocnet;
pub mod routinesim;
