//! Sine networks with forward-mode jets and reverse-mode parameter gradients.

mod checkpoint;
mod jet;
mod mlp;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use jet::{Jet2, JetBatch, JetLayout};
pub use mlp::{Activation, MlpContext, MlpSpec, ParamGrad, SineMlp};
