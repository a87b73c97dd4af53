//! Differentiation engine.
//!
//! Two complementary mechanisms:
//! - [`jet::Jet2`]: forward propagation of first and second directional
//!   derivatives through closed-form scalar programs (level sets, coefficient
//!   fields, exact solutions).
//! - [`tape::Tape`]: a reverse-mode record of primitive operations over
//!   buffers of tracked scalars, yielding exact parameter gradients of scalar
//!   losses. Input-derivative recurrences of the networks are recorded on the
//!   tape, so gradients flow through second input derivatives exactly.

pub mod jet;
pub mod tape;

pub use jet::{fd_check, jet_eval, jet_eval_all, rel_dev, FdReport, Jet2, Scalar, ScalarProgram};
pub use tape::{BufId, GradVector, ParamEntry, ParamLayout, Tape, TapeError};
