//! Global environment: function and value cells, call dispatch and the
//! executor depth counter.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write};
use std::rc::Rc;

use super::error::{ErrorKind, LispError, LispResult};
use super::prims::{self, PrimId};
use super::symbol::Symbol;
use super::value::Value;

pub const DEFAULT_MAX_DEPTH: usize = 1600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionKind {
    /// Interpreted LAP.
    Lap,
    /// Register VM over LIMPLE.
    Vm,
    /// Native code from a shared object.
    Native,
}

/// A compiled Lisp function callable through a function cell.
pub trait CompiledFunction {
    fn name(&self) -> Symbol;
    fn arity(&self) -> usize;
    fn kind(&self) -> FunctionKind;
    /// True for definitions installed by loading a compilation unit.
    fn is_native(&self) -> bool;
    /// Runs the body. Arity and depth are checked by the caller.
    fn invoke(&self, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value>;
}

#[derive(Clone)]
pub enum Function {
    Subr(PrimId),
    Compiled(Rc<dyn CompiledFunction>),
}

impl Function {
    pub fn is_native(&self) -> bool {
        matches!(self, Function::Compiled(f) if f.is_native())
    }

    /// Identity comparison (same primitive or same compiled object).
    pub fn same(&self, other: &Function) -> bool {
        match (self, other) {
            (Function::Subr(a), Function::Subr(b)) => a == b,
            (Function::Compiled(a), Function::Compiled(b)) => {
                std::ptr::addr_eq(Rc::as_ptr(a), Rc::as_ptr(b))
            }
            _ => false,
        }
    }

    fn identity(&self) -> String {
        match self {
            Function::Subr(id) => format!("subr:{}", prims::subr(*id).name),
            Function::Compiled(f) => {
                format!("{:?}:{}:{:p}", f.kind(), f.name(), Rc::as_ptr(f) as *const ())
            }
        }
    }
}

impl fmt::Debug for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Function::Subr(id) => write!(f, "#<subr {}>", prims::subr(*id).name),
            Function::Compiled(c) => write!(f, "#<{:?} {}>", c.kind(), c.name()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    /// Type checks skipped on certified inline fast paths.
    pub elided_checks: u64,
}

/// Bookkeeping for one loaded compilation unit.
#[derive(Clone)]
pub struct UnitRecord {
    pub path: String,
    /// Definitions the unit installed, in installation order.
    pub functions: Vec<(Symbol, Function)>,
}

/// Functions offered by a unit whose top-level code is currently running.
#[derive(Default)]
pub struct LoadFrame {
    pub functions: HashMap<Symbol, Function>,
    pub installed: Vec<(Symbol, Function)>,
}

#[derive(Clone)]
pub struct EnvSnapshot {
    functions: HashMap<Symbol, Function>,
    values: HashMap<Symbol, Value>,
    units: BTreeMap<u64, UnitRecord>,
    next_unit: u64,
}

pub struct GlobalEnv {
    functions: HashMap<Symbol, Function>,
    values: HashMap<Symbol, Value>,
    pub depth: usize,
    pub max_depth: usize,
    pub peak_depth: usize,
    pub stats: Stats,
    loading: Vec<LoadFrame>,
    units: BTreeMap<u64, UnitRecord>,
    next_unit: u64,
}

impl Default for GlobalEnv {
    fn default() -> Self {
        GlobalEnv::new()
    }
}

impl GlobalEnv {
    /// An environment with no bindings at all.
    pub fn empty() -> Self {
        GlobalEnv {
            functions: HashMap::new(),
            values: HashMap::new(),
            depth: 0,
            max_depth: DEFAULT_MAX_DEPTH,
            peak_depth: 0,
            stats: Stats::default(),
            loading: Vec::new(),
            units: BTreeMap::new(),
            next_unit: 0,
        }
    }

    /// An environment with the primitive set installed.
    pub fn new() -> Self {
        let mut env = GlobalEnv::empty();
        prims::register_primitives(&mut env);
        env
    }

    pub fn function(&self, sym: Symbol) -> Option<&Function> {
        self.functions.get(&sym)
    }

    pub fn fset(&mut self, sym: Symbol, f: Function) {
        self.functions.insert(sym, f);
    }

    pub fn fmakunbound(&mut self, sym: Symbol) -> Option<Function> {
        self.functions.remove(&sym)
    }

    pub fn function_bindings(&self) -> impl Iterator<Item = (Symbol, &Function)> {
        self.functions.iter().map(|(s, f)| (*s, f))
    }

    pub fn value_bindings(&self) -> impl Iterator<Item = (Symbol, Value)> + '_ {
        self.values.iter().map(|(s, v)| (*s, *v))
    }

    pub fn symbol_value(&self, sym: Symbol) -> LispResult<Value> {
        if sym == Symbol::NIL || sym == Symbol::T {
            return Ok(Value::symbol(sym));
        }
        self.values
            .get(&sym)
            .copied()
            .ok_or_else(|| LispError::new(ErrorKind::VoidVariable, sym.name()))
    }

    pub fn set_value(&mut self, sym: Symbol, v: Value) -> LispResult<()> {
        if sym == Symbol::NIL || sym == Symbol::T {
            return Err(LispError::new(ErrorKind::SettingConstant, sym.name()));
        }
        self.values.insert(sym, v);
        Ok(())
    }

    pub fn makunbound(&mut self, sym: Symbol) {
        self.values.remove(&sym);
    }

    /// Resolves a callable value: a symbol goes through its function cell.
    pub fn resolve(&self, f: Value) -> LispResult<Function> {
        if let Some(sym) = f.as_symbol() {
            return self
                .functions
                .get(&sym)
                .cloned()
                .ok_or_else(|| LispError::new(ErrorKind::VoidFunction, sym.name()));
        }
        f.as_function()
            .ok_or_else(|| LispError::new(ErrorKind::InvalidFunction, format!("{f:?}")))
    }

    /// Calls `f` (symbol or function object) the way `funcall` does.
    pub fn funcall(&mut self, f: Value, args: &[Value]) -> LispResult<Value> {
        let func = self.resolve(f)?;
        self.apply(&func, args)
    }

    pub fn call_symbol(&mut self, sym: Symbol, args: &[Value]) -> LispResult<Value> {
        self.funcall(Value::symbol(sym), args)
    }

    pub fn apply(&mut self, f: &Function, args: &[Value]) -> LispResult<Value> {
        match f {
            Function::Subr(id) => self.call_subr(*id, args),
            Function::Compiled(c) => {
                if args.len() != c.arity() {
                    return Err(LispError::wrong_args(c.name(), args.len()));
                }
                self.enter_frame()?;
                let result = c.invoke(self, args);
                self.leave_frame();
                result
            }
        }
    }

    pub fn call_subr(&mut self, id: PrimId, args: &[Value]) -> LispResult<Value> {
        let s = prims::subr(id);
        if !s.accepts(args.len()) {
            return Err(LispError::wrong_args(s.name, args.len()));
        }
        (s.func)(self, args)
    }

    /// Accounts for one Lisp-level call frame.
    pub fn enter_frame(&mut self) -> LispResult<()> {
        if self.depth >= self.max_depth {
            return Err(LispError::new(
                ErrorKind::ExcessiveNesting,
                format!("call depth exceeds {}", self.max_depth),
            ));
        }
        self.depth += 1;
        self.peak_depth = self.peak_depth.max(self.depth);
        Ok(())
    }

    pub fn leave_frame(&mut self) {
        self.depth -= 1;
    }

    pub fn begin_loading(&mut self, functions: HashMap<Symbol, Function>) {
        self.loading.push(LoadFrame { functions, installed: Vec::new() });
    }

    pub fn end_loading(&mut self) -> Option<LoadFrame> {
        self.loading.pop()
    }

    /// Installs the definition of `name` offered by the unit being loaded.
    pub fn register_loading_function(&mut self, name: Symbol) -> LispResult<()> {
        let frame = self.loading.last_mut().ok_or_else(|| {
            LispError::new(ErrorKind::User, "%register-function called outside unit loading")
        })?;
        let f = frame.functions.get(&name).cloned().ok_or_else(|| {
            LispError::new(ErrorKind::VoidFunction, format!("unit provides no {name}"))
        })?;
        frame.installed.push((name, f.clone()));
        self.functions.insert(name, f);
        Ok(())
    }

    pub fn add_unit(&mut self, record: UnitRecord) -> u64 {
        let id = self.next_unit;
        self.next_unit += 1;
        self.units.insert(id, record);
        id
    }

    pub fn unit(&self, id: u64) -> Option<&UnitRecord> {
        self.units.get(&id)
    }

    pub fn remove_unit(&mut self, id: u64) -> Option<UnitRecord> {
        self.units.remove(&id)
    }

    pub fn units(&self) -> impl Iterator<Item = (u64, &UnitRecord)> {
        self.units.iter().map(|(id, r)| (*id, r))
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            functions: self.functions.clone(),
            values: self.values.clone(),
            units: self.units.clone(),
            next_unit: self.next_unit,
        }
    }

    pub fn restore(&mut self, snap: EnvSnapshot) {
        self.functions = snap.functions;
        self.values = snap.values;
        self.units = snap.units;
        self.next_unit = snap.next_unit;
        self.loading.clear();
    }

    /// A canonical text rendering of all bindings, for comparing states.
    pub fn fingerprint(&self) -> String {
        let mut out = String::new();
        let mut functions: Vec<_> = self.functions.iter().collect();
        functions.sort_by_key(|(s, _)| **s);
        for (s, f) in functions {
            let _ = writeln!(out, "f {s} {}", f.identity());
        }
        let mut values: Vec<_> = self.values.iter().collect();
        values.sort_by_key(|(s, _)| **s);
        for (s, v) in values {
            let _ = writeln!(out, "v {s} {:#x}", v.bits());
        }
        for (id, unit) in &self.units {
            let _ = write!(out, "u {id} {}", unit.path);
            for (s, f) in &unit.functions {
                let _ = write!(out, " {s}={}", f.identity());
            }
            out.push('\n');
        }
        let _ = writeln!(out, "next {}", self.next_unit);
        out
    }
}
