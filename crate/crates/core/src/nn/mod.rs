//! Minimal differentiable core: parameter storage, MLPs with exact
//! gradients, Adam, EMA and a finite-difference checker.

pub mod adam;
pub mod checkpoint;
pub mod ema;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod param;

pub use adam::{AdamConfig, AdamState};
pub use ema::{ema_group, ema_update};
pub use gradcheck::{finite_diff_check, FdOptions, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, Activation, Mlp, MlpCache, MlpSpec};
pub use param::{Layout, ParamVector, Segment};
