//! Parameter registry, gradient buffers, Adam and the finite-difference
//! oracle every gradient test goes through.

mod adam;
mod fd;
mod params;

pub use adam::{AdamState, AdamStepReport, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use fd::{finite_difference_check, FdConfig, FdReport, FdSample, FdStatus, Parameterized};
pub use params::{Gradients, ParamGroup, ParamId, ParamStore, Tensor};
