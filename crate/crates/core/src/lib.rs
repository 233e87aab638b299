//! Static analysis toolkit for fairly terminating multiparty sessions.
//!
//! A session map assigns a regular session type to each role of a session;
//! its labeled transition system decides *coherence* (the session can always
//! still terminate) and the *rank* (shortest terminating run). Processes are
//! checked against session types with a fair subtyping relation carrying a
//! rank weight, a generalized inference system with corules, and per-process
//! rank inference; well-typed closed programs fairly terminate, which the
//! simulator demonstrates by following a strictly decreasing measure.

pub mod parser;
pub mod redsys;
pub mod runtime;
pub mod subtyping;
pub mod syntax;
pub mod typecheck;
pub mod typelts;

pub use syntax::{Cost, Polarity, Program, SessionMap, TypeId, TypeStore};
