//! Contextualized dilated network with detection, streak and background
//! heads, its joint loss, single-step training and checkpoint files.
//!
//! The extractor applies a 3×3 input transform and then `intra_recurrences`
//! refinement rounds. Each round runs one path per dilation factor (two
//! dilated 3×3 convolutions with ReLU) and adds the path outputs to the
//! round's input. With the default factors `[1, 2, 3]` the paths see 5×5,
//! 9×9 and 13×13 windows.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod model;
mod train;

pub use checkpoint::{Checkpoint, ModelKind, StageState, CHECKPOINT_SCHEMA_VERSION};
pub use gradcheck::{check_gradients, relative_error, GradientCheck, GradientSample};
pub use config::{HeadOrdering, LossWeights, NetworkConfig};
pub use loss::{joint_loss, LossBreakdown, TermWeights};
pub use model::{perturbation_footprint, Extractor, Footprint, Heads, JorderNet, OutputNodes, Prediction};
pub use train::{accumulate_gradients, example_gradients, example_loss, sample_crops, train_step, Trainer};
pub(crate) use train::guard;
