//! Host side of the native boundary: the primitive entry table handed to
//! loaded objects, symbol binding, and calls into native code.

use std::collections::HashMap;
use std::ffi::{c_char, c_void, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::rc::Rc;
use std::sync::OnceLock;

use libloading::Library;

use super::emit::TOP_LEVEL_SYMBOL;
use super::shim::{function_symbol, MlCtx, STATUS_NESTING, STATUS_OK, STATUS_SIGNAL};
use crate::limple::{abi_hash, CompUnit};
use crate::object::env::{CompiledFunction, Function, FunctionKind};
use crate::object::prims::{self, CallStyle, PrimId};
use crate::object::{ErrorKind, GlobalEnv, LispError, LispResult, Symbol, Value};

/// Per-invocation state reachable from `ml_ctx.host`.
struct Host {
    env: *mut GlobalEnv,
    error: Option<LispError>,
}

/// Runs primitive `id` for native code and reports failure through the
/// status word. Panics are caught so they never unwind into C frames.
unsafe fn dispatch(ctx: *mut MlCtx, id: PrimId, args: &[Value]) -> u64 {
    let ctx = &mut *ctx;
    let host = &mut *(ctx.host as *mut Host);
    let env = &mut *host.env;
    let saved = env.depth;
    env.depth = ctx.depth.max(0) as usize;
    env.peak_depth = env.peak_depth.max(env.depth);
    let r = catch_unwind(AssertUnwindSafe(|| env.call_subr(id, args)));
    env.depth = saved;
    match r {
        Ok(Ok(v)) => v.bits(),
        Ok(Err(e)) => {
            host.error = Some(e);
            ctx.status = STATUS_SIGNAL;
            0
        }
        Err(_) => {
            host.error = Some(LispError::new(ErrorKind::User, "panic in primitive"));
            ctx.status = STATUS_SIGNAL;
            0
        }
    }
}

macro_rules! fixed_entry {
    ($name:ident $(, $a:ident)*) => {
        unsafe extern "C" fn $name<const ID: usize>(ctx: *mut MlCtx $(, $a: u64)*) -> u64 {
            dispatch(ctx, ID, &[$(Value::from_bits($a)),*])
        }
    };
}

fixed_entry!(fixed0);
fixed_entry!(fixed1, a0);
fixed_entry!(fixed2, a0, a1);
fixed_entry!(fixed3, a0, a1, a2);
fixed_entry!(fixed4, a0, a1, a2, a3);
fixed_entry!(fixed5, a0, a1, a2, a3, a4);
fixed_entry!(fixed6, a0, a1, a2, a3, a4, a5);
fixed_entry!(fixed7, a0, a1, a2, a3, a4, a5, a6);
fixed_entry!(fixed8, a0, a1, a2, a3, a4, a5, a6, a7);

unsafe extern "C" fn spread<const ID: usize>(ctx: *mut MlCtx, n: isize, argv: *const u64) -> u64 {
    let args: &[Value] = if n <= 0 || argv.is_null() {
        &[]
    } else {
        // Value is a transparent wrapper around the word.
        std::slice::from_raw_parts(argv as *const Value, n as usize)
    };
    dispatch(ctx, ID, args)
}

fn entry_for<const ID: usize>() -> usize {
    let s = prims::subr(ID);
    match (s.style(), s.max_args) {
        (CallStyle::Spread, _) => spread::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(0)) => fixed0::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(1)) => fixed1::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(2)) => fixed2::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(3)) => fixed3::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(4)) => fixed4::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(5)) => fixed5::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(6)) => fixed6::<ID> as *const () as usize,
        (CallStyle::Fixed, Some(7)) => fixed7::<ID> as *const () as usize,
        (CallStyle::Fixed, _) => fixed8::<ID> as *const () as usize,
    }
}

macro_rules! entries {
    ($($id:literal)*) => {
        vec![$(entry_for::<$id>()),*]
    };
}

/// The primitive entry table, one address per registry entry in order.
pub fn entry_table() -> &'static [usize] {
    static TABLE: OnceLock<Vec<usize>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t: Vec<usize> = entries!(0 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21 22 23 24 25 26 27 28 29);
        assert_eq!(t.len(), prims::registry().len(), "entry table out of sync with the registry");
        t
    })
}

type F0 = unsafe extern "C" fn(*mut MlCtx) -> u64;
type F1 = unsafe extern "C" fn(*mut MlCtx, u64) -> u64;
type F2 = unsafe extern "C" fn(*mut MlCtx, u64, u64) -> u64;
type F3 = unsafe extern "C" fn(*mut MlCtx, u64, u64, u64) -> u64;
type F4 = unsafe extern "C" fn(*mut MlCtx, u64, u64, u64, u64) -> u64;
type F5 = unsafe extern "C" fn(*mut MlCtx, u64, u64, u64, u64, u64) -> u64;
type F6 = unsafe extern "C" fn(*mut MlCtx, u64, u64, u64, u64, u64, u64) -> u64;
type F7 = unsafe extern "C" fn(*mut MlCtx, u64, u64, u64, u64, u64, u64, u64) -> u64;
type F8 = unsafe extern "C" fn(*mut MlCtx, u64, u64, u64, u64, u64, u64, u64, u64) -> u64;

/// Calls native function `addr`. `base_depth` is the executor depth the
/// callee's own frame accounting starts from.
///
/// # Safety
/// `addr` must be a function emitted for `args.len()` arguments, from an
/// object whose entry table and constants are bound.
unsafe fn call_native(addr: usize, args: &[Value], base_depth: usize, env: &mut GlobalEnv) -> LispResult<Value> {
    let max_depth = env.max_depth;
    let mut host = Host { env: env as *mut GlobalEnv, error: None };
    let mut ctx = MlCtx {
        status: STATUS_OK,
        reserved: 0,
        depth: base_depth as i64,
        max_depth: max_depth as i64,
        host: &mut host as *mut Host as *mut c_void,
    };
    let c = &mut ctx as *mut MlCtx;
    let a = |i: usize| args[i].bits();
    use std::mem::transmute as cast;
    let r = match args.len() {
        0 => cast::<usize, F0>(addr)(c),
        1 => cast::<usize, F1>(addr)(c, a(0)),
        2 => cast::<usize, F2>(addr)(c, a(0), a(1)),
        3 => cast::<usize, F3>(addr)(c, a(0), a(1), a(2)),
        4 => cast::<usize, F4>(addr)(c, a(0), a(1), a(2), a(3)),
        5 => cast::<usize, F5>(addr)(c, a(0), a(1), a(2), a(3), a(4)),
        6 => cast::<usize, F6>(addr)(c, a(0), a(1), a(2), a(3), a(4), a(5)),
        7 => cast::<usize, F7>(addr)(c, a(0), a(1), a(2), a(3), a(4), a(5), a(6)),
        8 => cast::<usize, F8>(addr)(c, a(0), a(1), a(2), a(3), a(4), a(5), a(6), a(7)),
        n => return Err(LispError::wrong_args("native function", n)),
    };
    match ctx.status {
        STATUS_OK => Ok(Value::from_bits(r)),
        STATUS_NESTING => {
            Err(LispError::new(ErrorKind::ExcessiveNesting, format!("call depth exceeds {max_depth}")))
        }
        _ => Err(host.error.take().unwrap_or_else(|| LispError::new(ErrorKind::User, "native code failed"))),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BindError {
    #[error("cannot open shared object: {0}")]
    Open(String),
    #[error("missing symbol {0}")]
    MissingSymbol(String),
    #[error("object was built against a different runtime")]
    AbiMismatch,
    #[error("unreadable constants: {0}")]
    Constants(String),
}

struct NativeEntry {
    name: Symbol,
    arity: usize,
    addr: usize,
}

/// A shared object with its entry table and constants bound.
pub struct NativeUnit {
    pub path: String,
    functions: Vec<NativeEntry>,
    top_level: usize,
    consts: Vec<Value>,
    constants_text: String,
    _lib: Library,
}

impl std::fmt::Debug for NativeUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#<native-unit {}>", self.path)
    }
}

unsafe fn symbol_addr(lib: &Library, name: &str) -> Result<usize, BindError> {
    let sym = lib.get::<*mut c_void>(name).map_err(|_| BindError::MissingSymbol(name.to_string()))?;
    let addr = *sym as usize;
    if addr == 0 {
        return Err(BindError::MissingSymbol(name.to_string()));
    }
    Ok(addr)
}

impl NativeUnit {
    /// Opens `object` and performs the load-time binding steps: check the
    /// embedded signature, install the entry table, read the constants
    /// text and fill `d_reloc`, and resolve every function in `manifest`.
    pub fn bind(object: &Path, origin: &str, manifest: &[(String, usize)]) -> Result<NativeUnit, BindError> {
        // SAFETY: the object is one of ours, checked by signature below
        // before any of its code runs; it has no initializers.
        unsafe {
            let lib = Library::new(object).map_err(|e| BindError::Open(e.to_string()))?;
            let hash = CStr::from_ptr(symbol_addr(&lib, "ml_abi_hash")? as *const c_char);
            if hash.to_bytes() != abi_hash().as_bytes() {
                return Err(BindError::AbiMismatch);
            }
            let table = symbol_addr(&lib, "freloc_link_table")? as *mut *const usize;
            *table = entry_table().as_ptr();

            let text_fn: unsafe extern "C" fn() -> *const c_char =
                std::mem::transmute(symbol_addr(&lib, "text_data_reloc")?);
            let text = CStr::from_ptr(text_fn())
                .to_str()
                .map_err(|e| BindError::Constants(e.to_string()))?
                .to_string();
            let data = CompUnit::parse_constants(&text).map_err(BindError::Constants)?;
            let consts: Vec<Value> = data.iter().map(|d| d.to_value()).collect();
            let d_reloc = symbol_addr(&lib, "d_reloc")? as *mut u64;
            for (i, v) in consts.iter().enumerate() {
                *d_reloc.add(i) = v.bits();
            }

            let mut functions = Vec::new();
            for (name, arity) in manifest {
                let addr = symbol_addr(&lib, &function_symbol(name))?;
                functions.push(NativeEntry { name: Symbol::intern(name), arity: *arity, addr });
            }
            let top_level = symbol_addr(&lib, TOP_LEVEL_SYMBOL)?;
            Ok(NativeUnit { path: origin.to_string(), functions, top_level, consts, constants_text: text, _lib: lib })
        }
    }

    pub fn constants(&self) -> &[Value] {
        &self.consts
    }

    pub fn constants_text(&self) -> &str {
        &self.constants_text
    }

    pub fn functions(self: &Rc<Self>) -> HashMap<Symbol, Function> {
        (0..self.functions.len())
            .map(|index| {
                let f: Rc<dyn CompiledFunction> = Rc::new(NativeFunction { unit: self.clone(), index });
                (self.functions[index].name, Function::Compiled(f))
            })
            .collect()
    }

    pub fn run_top_level(self: &Rc<Self>, env: &mut GlobalEnv) -> LispResult<Value> {
        let depth = env.depth;
        // SAFETY: bound in `bind`; top_level_run takes no arguments.
        unsafe { call_native(self.top_level, &[], depth, env) }
    }
}

pub struct NativeFunction {
    unit: Rc<NativeUnit>,
    index: usize,
}

impl CompiledFunction for NativeFunction {
    fn name(&self) -> Symbol {
        self.unit.functions[self.index].name
    }

    fn arity(&self) -> usize {
        self.unit.functions[self.index].arity
    }

    fn kind(&self) -> FunctionKind {
        FunctionKind::Native
    }

    fn is_native(&self) -> bool {
        true
    }

    fn invoke(&self, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value> {
        let e = &self.unit.functions[self.index];
        if args.len() != e.arity {
            return Err(LispError::wrong_args(e.name, args.len()));
        }
        // The caller already entered this frame; native code counts it
        // again in its prologue.
        let base = env.depth.saturating_sub(1);
        // SAFETY: address and arity come from the unit manifest.
        unsafe { call_native(e.addr, args, base, env) }
    }
}
