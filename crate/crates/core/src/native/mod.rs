//! Native backend: C emission, toolchain driver and shared-object loading.

mod emit;
mod runtime;
pub mod shim;
mod toolchain;

pub use emit::{emit_native_source, EmitError, HEADER_FILE, TOP_LEVEL_SYMBOL};
pub use runtime::{entry_table, BindError, NativeFunction, NativeUnit};
pub use toolchain::{compile_flags, native_compile, BuiltObject, NativeError, Toolchain, CC_ENV};

use crate::loader::LoadedUnit;
use crate::object::{ErrorKind, GlobalEnv, LispError, LispResult, Symbol, Value};

/// Calls `fname` as defined by a loaded unit, whatever currently occupies
/// its function cell.
pub fn native_exec(unit: &LoadedUnit, fname: Symbol, args: &[Value], env: &mut GlobalEnv) -> LispResult<Value> {
    let f = unit
        .function(fname)
        .cloned()
        .ok_or_else(|| LispError::new(ErrorKind::VoidFunction, fname.name()))?;
    env.apply(&f, args)
}
