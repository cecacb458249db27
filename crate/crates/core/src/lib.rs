//! Multimodal spiking neural networks trained with surrogate-gradient
//! backpropagation through time.
//!
//! The crate covers the whole pipeline: event decoding and binning
//! ([`data`]), discrete-time LIF dynamics ([`lif`]), a small reverse-mode
//! engine specialised to spiking layers ([`tape`]), unimodal and fusion
//! topologies ([`topology`]), the cumulative-softmax readout ([`readout`]),
//! training and checkpoints ([`train`]) and paired model comparison
//! ([`stats`]).

// Negated float comparisons such as `!(x > 0.0)` are used on purpose so
// that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod frames;
pub mod lif;
pub mod params;
pub mod readout;
pub mod stats;
pub mod tape;
pub mod topology;
pub mod train;

pub use data::{PairedInstance, Sample};
pub use error::{Error, ErrorKind, Result};
pub use frames::{Sequence, SpikeFrameSequence, DEFAULT_NUM_BINS};
pub use params::{GradientSet, ParameterStore, Precision};
pub use readout::{ClassScores, LossReadout};
pub use tape::{BufId, LifOptions, Tape};
pub use topology::{build, build_with, relaxed_forward, ArchitectureSpec, InitOptions, Mode, Network};
pub use train::{evaluate, train, Checkpoint, Evaluation, TrainConfig};
