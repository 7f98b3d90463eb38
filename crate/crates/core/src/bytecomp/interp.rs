//! Baseline LAP interpreter: a fetch/decode/dispatch loop over an operand
//! stack.

use std::collections::HashMap;
use std::rc::Rc;

use super::depth::{label_table, stack_depth_analysis};
use super::{LapInsn, LapProgram, SourceUnit};
use crate::object::env::{CompiledFunction, Function, FunctionKind};
use crate::object::prims;
use crate::object::{ErrorKind, GlobalEnv, LispError, LispResult, Symbol, Value};

struct LapCode {
    name: Symbol,
    arg_count: usize,
    max_depth: usize,
    insns: Vec<LapInsn>,
    /// Jump destination per instruction (unused for non-jumps).
    targets: Vec<usize>,
    constants: Vec<Value>,
}

/// A LAP program bound to materialized constants.
pub struct LapFunction {
    code: Rc<LapCode>,
}

impl LapFunction {
    pub fn new(program: &LapProgram) -> LispResult<LapFunction> {
        let internal = |e: String| LispError::new(ErrorKind::InvalidFunction, format!("{}: {e}", program.name));
        stack_depth_analysis(program).map_err(|e| internal(e.to_string()))?;
        let labels = label_table(program).map_err(|e| internal(e.to_string()))?;
        let targets = program
            .insns
            .iter()
            .map(|i| i.jump_target().map_or(0, |l| labels[&l]))
            .collect();
        Ok(LapFunction {
            code: Rc::new(LapCode {
                name: program.name,
                arg_count: program.arg_count,
                max_depth: program.max_depth,
                insns: program.insns.clone(),
                targets,
                constants: program.constants.iter().map(|d| d.to_value()).collect(),
            }),
        })
    }

    pub fn run(&self, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value> {
        run(&self.code, env, args)
    }
}

impl CompiledFunction for LapFunction {
    fn name(&self) -> Symbol {
        self.code.name
    }

    fn arity(&self) -> usize {
        self.code.arg_count
    }

    fn kind(&self) -> FunctionKind {
        FunctionKind::Lap
    }

    fn is_native(&self) -> bool {
        false
    }

    fn invoke(&self, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value> {
        run(&self.code, env, args)
    }
}

fn symbol_operand(v: Value) -> LispResult<Symbol> {
    v.as_symbol().ok_or_else(|| LispError::wrong_type("symbolp", format!("{v:?}")))
}

fn fixnum_pair(a: Value, b: Value) -> Option<(i64, i64)> {
    Some((a.as_fixnum()?, b.as_fixnum()?))
}

fn call_named(env: &mut GlobalEnv, name: &str, args: &[Value]) -> LispResult<Value> {
    let id = prims::lookup_name(name).expect("registered primitive");
    env.call_subr(id, args)
}

fn run(code: &LapCode, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value> {
    use LapInsn::*;
    let mut stack: Vec<Value> = Vec::with_capacity(code.max_depth + 1);
    stack.extend_from_slice(args);
    let mut pc = 0;
    macro_rules! pop {
        () => {
            stack.pop().expect("verified stack depth")
        };
    }
    macro_rules! binary {
        ($fast:expr, $name:expr) => {{
            let b = pop!();
            let a = pop!();
            let fast: Option<Value> = fixnum_pair(a, b).and_then($fast);
            let r = match fast {
                Some(v) => v,
                None => call_named(env, $name, &[a, b])?,
            };
            stack.push(r);
        }};
    }
    loop {
        let insn = code.insns[pc];
        pc += 1;
        match insn {
            VarRef(c) => {
                let sym = symbol_operand(code.constants[c as usize])?;
                stack.push(env.symbol_value(sym)?);
            }
            VarSet(c) => {
                let sym = symbol_operand(code.constants[c as usize])?;
                let v = pop!();
                env.set_value(sym, v)?;
            }
            Constant(c) => stack.push(code.constants[c as usize]),
            StackRef(n) => stack.push(stack[n as usize]),
            StackSet(n) => {
                let v = pop!();
                stack[n as usize] = v;
            }
            Dup => stack.push(*stack.last().expect("verified stack depth")),
            Discard => {
                pop!();
            }
            Goto(_) => pc = code.targets[pc - 1],
            GotoIfNil(_) => {
                if pop!().is_nil() {
                    pc = code.targets[pc - 1];
                }
            }
            GotoIfNotNil(_) => {
                if !pop!().is_nil() {
                    pc = code.targets[pc - 1];
                }
            }
            Return => return Ok(pop!()),
            Plus => binary!(|(x, y): (i64, i64)| x.checked_add(y).and_then(|r| Value::fixnum(r).ok()), "+"),
            Minus => binary!(|(x, y): (i64, i64)| x.checked_sub(y).and_then(|r| Value::fixnum(r).ok()), "-"),
            Mult => binary!(|(x, y): (i64, i64)| x.checked_mul(y).and_then(|r| Value::fixnum(r).ok()), "*"),
            Quo => binary!(|_| None, "/"),
            Add1 => {
                let v = pop!();
                stack.push(prims::add1(v)?);
            }
            Sub1 => {
                let v = pop!();
                stack.push(prims::sub1(v)?);
            }
            Car => {
                let v = pop!();
                stack.push(prims::car(v)?);
            }
            Cdr => {
                let v = pop!();
                stack.push(prims::cdr(v)?);
            }
            Cons => {
                let b = pop!();
                let a = pop!();
                stack.push(Value::cons(a, b));
            }
            Setcar => {
                let b = pop!();
                let a = pop!();
                stack.push(prims::setcar(a, b)?);
            }
            Setcdr => {
                let b = pop!();
                let a = pop!();
                stack.push(prims::setcdr(a, b)?);
            }
            Eq => {
                let b = pop!();
                let a = pop!();
                stack.push(Value::bool(a == b));
            }
            Not => {
                let v = pop!();
                stack.push(Value::bool(v.is_nil()));
            }
            Eqlsign => binary!(|(x, y): (i64, i64)| Some(Value::bool(x == y)), "="),
            Lss => binary!(|(x, y): (i64, i64)| Some(Value::bool(x < y)), "<"),
            Gtr => binary!(|(x, y): (i64, i64)| Some(Value::bool(x > y)), ">"),
            Call(n) => {
                let base = stack.len() - n as usize - 1;
                let r = env.funcall(stack[base], &stack[base + 1..])?;
                stack.truncate(base);
                stack.push(r);
            }
            Tag(_) => {}
        }
    }
}

fn materialize(unit: &SourceUnit) -> LispResult<HashMap<Symbol, Function>> {
    unit.functions
        .iter()
        .map(|p| Ok((p.name, Function::Compiled(Rc::new(LapFunction::new(p)?)))))
        .collect()
}

/// Runs a unit's top-level effects, installing its functions.
pub fn install(unit: &SourceUnit, env: &mut GlobalEnv) -> LispResult<()> {
    let functions = materialize(unit)?;
    let top = LapFunction::new(&unit.top_level)?;
    env.begin_loading(functions);
    let result = top.run(env, &[]);
    env.end_loading();
    result.map(|_| ())
}

/// Calls `fname` from `unit` under the interpreter. Every function of the
/// unit is bound in `env` first so trampoline calls between them resolve;
/// top-level effects are not run.
pub fn lap_exec(unit: &SourceUnit, fname: Symbol, args: &[Value], env: &mut GlobalEnv) -> LispResult<Value> {
    let functions = materialize(unit)?;
    let target = functions
        .get(&fname)
        .cloned()
        .ok_or_else(|| LispError::new(ErrorKind::VoidFunction, fname.name()))?;
    for p in &unit.functions {
        env.fset(p.name, functions[&p.name].clone());
    }
    env.apply(&target, args)
}
