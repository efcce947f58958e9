//! The global LSTM: one parameter set shared by every depth, with depth and
//! season among the inputs.

mod checkpoint;
mod loss;
mod lstm;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{rmse_loss, rmse_tape, rmse_values};
pub use lstm::{forward_batch, forward_sequence, forward_tape, lstm_cell_step, predict, window_plan, TapeParams};
pub use params::{ModelParams, OutputScale, CANDIDATE, DEFAULT_HIDDEN, FORGET, GATES, INPUT, OUTPUT};
