//! Differentiable building blocks for the fixed architectures in this crate.

pub mod activation;
pub mod adam;
pub mod dropout;
pub mod gradcheck;
pub mod lstm;
pub mod matrix;
pub mod params;

pub use activation::{cross_entropy, relu, sigmoid, softmax_row, tanh_act};
pub use adam::{adam_step, AdamState};
pub use dropout::{dropout_mask, mix_seed};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, CellCache, LayerState, LstmCellParams, LstmStack, StackTrace};
pub use matrix::Matrix;
pub use params::{uniform_init, Gradients, ParamId, ParamStore};

/// Whether a forward pass runs with dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active; masks are derived from `seed`.
    Training { seed: u64 },
}
