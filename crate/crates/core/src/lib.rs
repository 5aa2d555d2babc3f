//! Cooperation policies for a slotted cognitive-radio channel shared by one
//! primary user (PU) and a set of secondary users (SUs).
//!
//! SUs either spend power helping the PU deliver its packets when the PU
//! queue is busy, or transmit their own traffic when it is idle. Policies
//! that only look at the busy/idle state are computed by linear or concave
//! programs ([`optimizer`]), by a distributed ADMM scheme ([`admm`]), or by a
//! one-dimensional search under imperfect sensing ([`sensing`]), and every
//! analytic quantity can be checked against the slot-level simulator
//! ([`sim`]).

pub mod admm;
pub mod error;
pub mod exec;
pub mod io;
pub mod linprog;
pub mod model;
pub mod optimizer;
pub mod reference;
pub mod regions;
pub mod sensing;
pub mod sim;

pub use error::{CoopError, Result};
pub use exec::Parallelism;
pub use model::{C2Policy, ConditionalPolicy, JointPolicy, SystemParams};
pub use optimizer::{Objective, SolveReport, SolveStatus};
