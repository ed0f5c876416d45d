//! Bi-level poisoning attacks on appliance-energy regression models, and the
//! two-stage defense against them.
//!
//! The first attack level corrupts sensor readings in transit with a sparse
//! additive matrix ([`fdi`]). The second level optimizes a small set of
//! training points to maximize the loss of a linear regressor on clean data
//! ([`poison`]). The matching defenses are robust PCA solved by accelerated
//! proximal gradient ([`rpca`]) and trimmed regression ([`trim`]).
//! [`bench`] wires everything into a reproducible experiment grid.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dataset;
pub mod error;
pub mod fdi;
pub mod linalg;
pub mod poison;
pub mod regress;
pub mod rpca;
pub mod synth;
pub mod trim;

pub use bench::{emit_report, run_experiment, ExperimentReport, ExperimentSpec, ReportRecord, Stage};
pub use dataset::{DataFrameNorm, Dataset, MinMax, RawFrame, Split, SplitMode, SplitSpec};
pub use error::{Error, Result};
pub use fdi::{AttackVector, FdiConfig, SelectionMode, SensorAccessSet};
pub use poison::{AttackerKnowledge, KnowledgeMode, ObservedDataset, PoisonConfig, PoisonSet};
pub use regress::{Learner, LinearModel, Regularizer, TrainConfig};
pub use rpca::{ApgConfig, RpcaResult};
pub use trim::{TrimConfig, TrimResult};
