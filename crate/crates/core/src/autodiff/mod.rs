//! Reverse-mode differentiation: parameters, the recording tape with the
//! forward/backward rules of every layer, and finite-difference checking.

pub mod gradcheck;
pub mod kernels;
mod param;
pub mod suite;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use param::{ParamId, ParamStore, Parameter};
pub use suite::{check_op, check_ops};
pub use tape::{BnMode, BnStats, Gradients, Mode, OpKind, Tape, Var};
