//! Reverse-mode differentiation: parameter storage, the tape, and the
//! finite-difference oracle used to verify it.

pub mod gradcheck;
pub mod params;
pub mod tape;

pub use gradcheck::{finite_diff_check, relative_error, FdOptions, GradCheckReport, ParamCheck};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
