//! Gradients: the analytic backward pass of the rasterizer, a central
//! finite-difference checker, and the AdamW update rule.
//!
//! Network layers carry their own backward functions next to their forward
//! code (`posenet`, `featdec`, `losses`); this module holds the pieces shared
//! by all of them.

mod adam;
mod backward;
mod fd;

pub use adam::{adam_step, AdamConfig, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use backward::{adjoint_inner, backward_render, GradientBundle};
pub use fd::{finite_diff_check, finite_diff_check_with, relative_error, FdOptions, GradCheckReport};
