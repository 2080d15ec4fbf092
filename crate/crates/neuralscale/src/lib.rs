//! NeuralScale-style width search: prune a trainable network iteratively to
//! harvest efficient width configurations, fit per-layer power laws of width
//! versus total parameter count, and descend on a scalar budget variable to
//! emit integer configurations meeting arbitrary parameter constraints.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`arch`]: pure parameter-count model of the architecture families
//! - [`dataset`] / [`network`] / [`train`]: desk-scale training substrate
//! - [`prune`]: gated iterative pruning and trajectory recording
//! - [`powerlaw`]: log-log least-squares fit of the per-layer growth rule
//! - [`scaler`]: budget descent and integer configuration emission
//! - [`descent`]: the outer refinement loop
//! - [`harness`]: baseline comparisons at matched budgets
//! - [`io`]: text artifact formats and run manifests

pub mod arch;
pub mod dataset;
pub mod descent;
pub mod harness;
pub mod network;
pub mod powerlaw;
pub mod prune;
pub mod scaler;
pub mod train;
pub mod error;
pub mod exec;
pub mod io;
pub mod rng;

pub use arch::{
    count_params, count_params_real, param_count_gradient, preset, preset_with, resolve_shortcuts,
    uniform_widths, validate_widths, ArchSpec, Family, InputShape, LayerKind, LayerSpec,
    ShortcutKind, WidthConfig, WidthRule,
};
pub use error::{Error, ErrorClass, Result};
