//! Minimal CPU layers with hand-written backward passes.
//!
//! Parameters live in one flat vector described by a [`Layout`]; layers hold
//! only [`Slot`]s into it, so the same layer graph runs against `f32`
//! training weights or `f64` copies used for gradient checks.

mod block;
mod layers;
mod layout;

pub use block::{ResBlock, ResBlockCache};
pub use layers::{
    group_count, sigmoid, upsample2x, upsample2x_backward, Activation, Conv2d, GroupNorm, GroupNormCache,
    Linear,
};
pub use layout::{Init, Layout, ParamSpec, Slot};
