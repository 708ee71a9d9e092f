//! Sequence VAE over piano-roll fragments with tension prediction heads.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
mod gru;
pub mod model;
pub mod params;
pub mod train;

pub use checkpoint::{checkpoint_id, Checkpoint, ScheduleState};
pub use config::{beta_schedule, ModelConfig};
pub use model::{
    batch_loss, batch_loss_and_grad, decode, decode_batch, encode, encode_batch, kl_divergence, loss, reparameterize,
    DecoderOutput, Example, Grads, LossBreakdown, Posterior, Term, TermWeights,
};
pub use params::{Head, ModelParams};
pub use train::{ledger_csv, sample_latent, train, train_with, LedgerRow, StopReason, TrainOutcome};
