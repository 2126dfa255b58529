//! Force-based self-supervised pretraining.
//!
//! Two pretext tasks share one graph-attention encoder:
//!
//! * **local force prediction**: a fraction of nodes have their force hidden
//!   and flagged; a graph decoder reconstructs them, scored by MSE on the
//!   masked entries only;
//! * **net force prediction**: the reconstructed forces are written back into
//!   the unmasked graph, the same encoder runs again, and a pooled MLP head
//!   regresses the net force in the hand-base frame.
//!
//! The training loss is `w_local * L_local + lambda * L_net` averaged over a
//! batch; gradients flow through both encoder passes and through the
//! substituted predictions.

mod checkpoint;
pub mod checks;
mod config;
mod eval;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ParamRecord, RngState, CHECKPOINT_VERSION};
pub use config::{LrSchedule, PretextTasks, TrainConfig};
pub use eval::{embed, evaluate, Baseline, EvalReport, FrameErrors};
pub use model::{local_force_forward, net_force_forward, Architecture, LocalPass, MaskedAutoencoder, NetPass};
pub use train::{
    frame_loss, pretrain_step, train, FrameLoss, PreparedData, Sample, StepMetrics, EpochMetrics, Trainer,
};
