//! Recurrent deraining, the dehazing network and stage sequences such as
//! derain → dehaze → derain.
//!
//! A recurrence predicts the residue `ε_t = O_t − B̂_t`, sets
//! `B_t = O_t − ε_t` and feeds `B_t` to the next iteration, so after `τ`
//! iterations `B_τ = O_0 − Σ ε_t`. Images between stages and iterations
//! stay in unclipped floating point; quantization happens only on export.

mod config;
mod dehaze;
mod recurrent;
mod sequence;

pub use config::{format_sequence, parse_sequence, PipelineConfig, Stage, PIPELINE_SCHEMA_VERSION};
pub use dehaze::{dehaze, mix_clean, DehazeNet, DehazeTrainer};
pub use recurrent::{
    derain_once, derain_recurrent, remaining_rain, DerainModel, DerainOutput, RecurrenceStep, RecurrenceTrace,
    RecurrentLoss,
    RecurrentTrainer,
};
pub use sequence::{Pipeline, SequenceOutput, StageRecord};
