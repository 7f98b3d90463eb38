//! MiniLisp: a small lexically scoped Lisp with a bytecode baseline, an SSA
//! optimizer, a register VM and a C-emitting native backend.

pub mod backend;
pub mod bench;
pub mod bytecomp;
pub mod limple;
pub mod loader;
pub mod native;
pub mod object;
pub mod passes;

pub use object::{Datum, ErrorKind, GlobalEnv, LispError, LispResult, Symbol, Value};
