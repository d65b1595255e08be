//! Dense numeric core: tensors, layers with hand-written backward passes,
//! SGD, initialization and parameter files.

pub mod dropout;
pub mod init;
pub mod linear;
pub mod lookup;
pub mod lstm;
pub mod params;
pub mod rng;
pub mod serialize;
pub mod sgd;
pub mod tensor;

pub use dropout::{dropout_apply, dropout_backward, Mode};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use lookup::{lookup_backward, lookup_forward};
pub use lstm::{lstm_step, lstm_step_backward, LstmCellParams, LstmGrads, LstmStep, LstmView};
pub use params::{GradBuffer, Param, ParamId, ParameterSet};
pub use rng::RngState;
pub use serialize::{load_parameters, save_parameters};
pub use sgd::sgd_update;
pub use tensor::Tensor;

pub(crate) use dropout::{check_probability, dropout_in_place};
pub(crate) use lookup::check_index;
pub(crate) use tensor::{axpy, gemv_acc, gemv_t_acc, outer_acc};
