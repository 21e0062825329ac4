//! A small laboratory for the DPO family of preference losses.
//!
//! - [`losses`]: DPO, DPO+NLL, DPOP and BDPO with closed-form gradients.
//! - [`policy`]: softmax tables and a two-layer MLP policy with backprop.
//! - [`experiments`]: the toy preference task, training loops, traces and
//!   numerical checks of the BDPO optimality and lower-bound results.
//! - [`contour`]: loss landscapes over `(p_w, p_l)`.

pub mod contour;
pub mod experiments;
pub mod fmt;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod policy;

pub use losses::{LossGradient, LossKind, LossSpec, PairPoint};
pub use policy::{CategoricalPolicy, MlpPolicy, ParamGradient, PreferencePair};
