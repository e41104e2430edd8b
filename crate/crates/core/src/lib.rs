//! Insert interpolated transformer blocks into decoder-only checkpoints.
//!
//! A new block is built from two adjacent blocks `l` and `l + 1` by
//! interpolating every parameter tensor (spherically by default) with a
//! ratio that grows with depth, then placed between them. The crate covers
//! the whole pipeline:
//!
//! - [`interp`]: slerp / lerp / quadratic Bezier kernels on `f64` vectors
//! - [`schedule`]: the depth-to-ratio logistic schedule
//! - [`checkpoint`]: safetensors container, config sidecar, block naming
//! - [`splice`]: plans and the insertion itself
//! - [`toy`]: a small deterministic LLaMA-style engine to run the result
//! - [`diagnostics`]: per-block Gaussian fits and consecutive-block KL
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod checkpoint;
pub mod diagnostics;
mod error;
pub mod interp;
pub mod schedule;
pub mod splice;
pub mod toy;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, Dtype, LayerNameTemplate};
pub use error::{Error, Result};
pub use interp::InterpolationMethod;
pub use schedule::ScheduleParams;
pub use splice::{build_plan, splice_checkpoint, MethodChoice, Scope, SplicePlan};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/interpolation.md")]
    mod interpolation {}
    #[doc = include_str!("../../../book/src/schedule.md")]
    mod schedule {}
    #[doc = include_str!("../../../book/src/checkpoints.md")]
    mod checkpoints {}
    #[doc = include_str!("../../../book/src/splicing.md")]
    mod splicing {}
    #[doc = include_str!("../../../book/src/toy-engine.md")]
    mod toy_engine {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
