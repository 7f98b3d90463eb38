//! Compilation-unit files and their load/unload lifecycle.

mod mln;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::rc::Rc;

use thiserror::Error;

pub use mln::{signature, MlnFile, NativePayload, UnitKind, MAGIC, MLN_VERSION};

use crate::backend::VmUnit;
use crate::bytecomp::{byte_compile_str, CompileError};
use crate::limple::{abi_hash, deserialize_unit, CompUnit};
use crate::native::{emit_native_source, native_compile, BindError, NativeError, NativeUnit, Toolchain};
use crate::object::env::{Function, UnitRecord};
use crate::object::{GlobalEnv, LispError, Symbol, Value};
use crate::passes::{run_pipeline, PipelineError, SpeedConfig};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a unit file (bad magic)")]
    BadMagic,
    #[error("unsupported unit file version {0}")]
    Version(u32),
    #[error("truncated unit file")]
    Truncated,
    #[error("corrupt unit file: {0}")]
    Corrupt(String),
    #[error("signature mismatch: file altered or built by a different compiler")]
    HashMismatch,
    #[error("unreadable constants: {0}")]
    Constants(String),
    #[error("missing symbol {0}")]
    MissingSymbol(String),
    #[error("cannot open native object: {0}")]
    Object(String),
    #[error("top-level code failed: {0}")]
    TopLevel(LispError),
}

impl From<BindError> for LoadError {
    fn from(e: BindError) -> Self {
        match e {
            BindError::Open(m) => LoadError::Object(m),
            BindError::MissingSymbol(s) => LoadError::MissingSymbol(s),
            BindError::AbiMismatch => LoadError::HashMismatch,
            BindError::Constants(m) => LoadError::Constants(m),
        }
    }
}

enum Backing {
    Vm(#[allow(dead_code)] Rc<VmUnit>),
    Native(#[allow(dead_code)] Rc<NativeUnit>),
}

/// A unit installed in an environment.
pub struct LoadedUnit {
    pub id: u64,
    pub path: String,
    pub kind: UnitKind,
    functions: HashMap<Symbol, Function>,
    constants: Vec<Value>,
    _backing: Backing,
}

impl fmt::Debug for LoadedUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#<unit {} {} {:?}>", self.id, self.path, self.kind)
    }
}

impl LoadedUnit {
    /// The unit's own definition of `name`.
    pub fn function(&self, name: Symbol) -> Option<&Function> {
        self.functions.get(&name)
    }

    pub fn function_names(&self) -> Vec<Symbol> {
        let mut v: Vec<Symbol> = self.functions.keys().copied().collect();
        v.sort_by_key(|s| s.name());
        v
    }

    /// The materialized constant vector.
    pub fn constants(&self) -> &[Value] {
        &self.constants
    }
}

fn check_constants(text: &str, unit: Option<&CompUnit>) -> Result<Vec<Value>, LoadError> {
    let data = CompUnit::parse_constants(text).map_err(LoadError::Constants)?;
    if let Some(u) = unit {
        if data != u.data_relocs {
            return Err(LoadError::Constants("constants text disagrees with the unit".into()));
        }
    }
    Ok(data.iter().map(|d| d.to_value()).collect())
}

/// Reads, verifies and installs a unit file.
pub fn load_unit(path: &Path, env: &mut GlobalEnv) -> Result<LoadedUnit, LoadError> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes, &path.display().to_string(), env)
}

/// Installs a unit from its file image. On any error `env` is left as it
/// was.
pub fn load_bytes(bytes: &[u8], origin: &str, env: &mut GlobalEnv) -> Result<LoadedUnit, LoadError> {
    let file = MlnFile::parse(bytes)?;
    file.verify_signature()?;
    let (functions, constants, backing, run): (_, _, _, Box<dyn Fn(&mut GlobalEnv) -> _>) = match file.kind {
        UnitKind::Limple => {
            let unit = deserialize_unit(&file.payload).map_err(|e| LoadError::Corrupt(e.to_string()))?;
            if unit.abi_hash != abi_hash() {
                return Err(LoadError::HashMismatch);
            }
            let constants = check_constants(&file.constants_text, Some(&unit))?;
            let mut vm = VmUnit::with_constants(&unit, constants.clone())
                .map_err(|e| LoadError::Corrupt(e.to_string()))?;
            vm.loaded = true;
            vm.path = origin.to_string();
            let vm = Rc::new(vm);
            let run_vm = vm.clone();
            (vm.functions(), constants, Backing::Vm(vm), Box::new(move |env: &mut GlobalEnv| run_vm.run_top_level(env)))
        }
        UnitKind::Native => {
            let payload: NativePayload =
                bincode::deserialize(&file.payload).map_err(|e| LoadError::Corrupt(e.to_string()))?;
            let mut tmp = tempfile::Builder::new().prefix("minilisp-unit").suffix(".so").tempfile()?;
            std::io::Write::write_all(&mut tmp, &payload.object)?;
            let tmp = tmp.into_temp_path();
            let native = NativeUnit::bind(&tmp, origin, &payload.functions)?;
            drop(tmp);
            if native.constants_text() != file.constants_text {
                return Err(LoadError::Constants("object constants disagree with the unit file".into()));
            }
            check_constants(&file.constants_text, None)?;
            let constants = native.constants().to_vec();
            let native = Rc::new(native);
            let run_native = native.clone();
            (
                native.functions(),
                constants,
                Backing::Native(native),
                Box::new(move |env: &mut GlobalEnv| run_native.run_top_level(env)),
            )
        }
    };

    let snap = env.snapshot();
    env.begin_loading(functions.clone());
    let result = run(env);
    let frame = env.end_loading();
    if let Err(e) = result {
        env.restore(snap);
        return Err(LoadError::TopLevel(e));
    }
    let installed = frame.map(|f| f.installed).unwrap_or_default();
    let id = env.add_unit(UnitRecord { path: origin.to_string(), functions: installed });
    Ok(LoadedUnit { id, path: origin.to_string(), kind: file.kind, functions, constants, _backing: backing })
}

/// Refusal to unload because definitions are still referenced.
pub struct UnloadRefused {
    pub live: Vec<Symbol>,
    /// The unit, still loaded.
    pub unit: LoadedUnit,
}

impl fmt::Debug for UnloadRefused {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for UnloadRefused {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.live.iter().map(|s| s.name()).collect();
        write!(f, "unit {} still referenced: {}", self.unit.path, names.join(" "))
    }
}

impl std::error::Error for UnloadRefused {}

fn strong_count(f: &Function) -> usize {
    match f {
        Function::Compiled(c) => Rc::strong_count(c),
        Function::Subr(_) => 0,
    }
}

/// Definitions of `u` referenced from anywhere other than the unit's own
/// bookkeeping and the function cell of their own name.
pub fn live_references(u: &LoadedUnit, env: &GlobalEnv) -> Vec<Symbol> {
    let record = env.unit(u.id).map(|r| r.functions.as_slice()).unwrap_or_default();
    let mut live = Vec::new();
    for name in u.function_names() {
        let f = &u.functions[&name];
        let mut expected = 1 + record.iter().filter(|(_, g)| g.same(f)).count();
        if env.function(name).is_some_and(|g| g.same(f)) {
            expected += 1;
        }
        if strong_count(f) > expected {
            live.push(name);
        }
    }
    live
}

/// Removes the unit's definitions and releases it, unless one of them is
/// still referenced elsewhere; then nothing changes.
pub fn unload_unit(u: LoadedUnit, env: &mut GlobalEnv) -> Result<(), UnloadRefused> {
    let live = live_references(&u, env);
    if !live.is_empty() {
        return Err(UnloadRefused { live, unit: u });
    }
    for (name, f) in &u.functions {
        if env.function(*name).is_some_and(|g| g.same(f)) {
            env.fmakunbound(*name);
        }
    }
    env.remove_unit(u.id);
    Ok(())
}

/// True for function objects installed by loading a unit.
pub fn is_native_function(v: Value) -> bool {
    v.as_function().is_some_and(|f| f.is_native())
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{0}")]
    Compile(#[from] CompileError),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Native(#[from] NativeError),
}

/// Source text to an optimized, laid-out unit.
pub fn compile_source(path: &str, text: &str, cfg: &SpeedConfig) -> Result<CompUnit, BuildError> {
    let source = byte_compile_str(path, text)?;
    Ok(run_pipeline(&source, cfg)?)
}

/// Source text to a `.mln` image for the chosen backend.
pub fn build_mln(
    path: &str,
    text: &str,
    cfg: &SpeedConfig,
    kind: UnitKind,
    tc: &Toolchain,
) -> Result<Vec<u8>, BuildError> {
    let unit = compile_source(path, text, cfg)?;
    let file = match kind {
        UnitKind::Limple => MlnFile::limple(&unit),
        UnitKind::Native => {
            let src = emit_native_source(&unit, cfg).map_err(NativeError::from)?;
            let obj = native_compile(&src, cfg, tc)?;
            MlnFile::native(&unit, obj.bytes().map_err(NativeError::from)?)
        }
    };
    Ok(file.to_bytes())
}
