//! Runtime object model shared by every executor.

pub mod datum;
pub mod env;
pub mod error;
pub mod prims;
pub mod printer;
pub mod reader;
pub mod symbol;
pub mod value;

pub use datum::Datum;
pub use env::{CompiledFunction, Function, FunctionKind, GlobalEnv};
pub use error::{ErrorKind, LispError, LispResult};
pub use prims::LispType;
pub use printer::{print, print_datum};
pub use reader::{read, read_all, read_datum, ReadError};
pub use symbol::Symbol;
pub use value::Value;
