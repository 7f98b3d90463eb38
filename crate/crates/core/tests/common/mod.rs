//! Shared test support: a random program generator and an independent
//! tree-walking evaluator used as the semantic oracle.
#![allow(dead_code)]

pub mod cfg;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write;
use std::rc::Rc;

use minilisp::backend::vm_exec;
use minilisp::bytecomp::{byte_compile_str, lap_exec};
use minilisp::loader::compile_source;
use minilisp::object::print;
use minilisp::passes::SpeedConfig;
use minilisp::{ErrorKind, GlobalEnv, LispResult, Symbol, Value};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const MOST_POSITIVE_FIXNUM: i64 = (1 << 60) - 1;
pub const MOST_NEGATIVE_FIXNUM: i64 = -(1 << 60);

/// Result of running a program: printed value or error class.
pub type Outcome = Result<String, ErrorKind>;

pub fn outcome(r: LispResult<Value>) -> Outcome {
    match r {
        Ok(v) => Ok(print(v).expect("printable result")),
        Err(e) => Err(e.kind),
    }
}

pub fn run_lap(src: &str, f: &str, args: &str) -> Outcome {
    let unit = byte_compile_str("t.mel", src).expect("compiles");
    let mut env = GlobalEnv::new();
    let argv = read_args(args);
    outcome(lap_exec(&unit, Symbol::intern(f), &argv, &mut env))
}

pub fn run_vm_cfg(src: &str, f: &str, args: &str, cfg: &SpeedConfig) -> Outcome {
    let unit = compile_source("t.mel", src, cfg).expect("compiles");
    let mut env = GlobalEnv::new();
    let argv = read_args(args);
    outcome(vm_exec(&unit, Symbol::intern(f), &argv, &mut env))
}

pub fn run_vm(src: &str, f: &str, args: &str, speed: u8) -> Outcome {
    run_vm_cfg(src, f, args, &SpeedConfig::new(speed, 0))
}

/// Runs `f` on a thread with room for the deepest recursion the executors
/// allow; unoptimized interpreter frames are several kilobytes each.
pub fn big_stack<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    std::thread::Builder::new().stack_size(256 << 20).spawn(f).unwrap().join().unwrap_or_else(|e| std::panic::resume_unwind(e))
}

/// Reads a whitespace-separated argument list, e.g. `"1 (2 3) nil"`.
pub fn read_args(text: &str) -> Vec<Value> {
    let v = minilisp::object::read(&format!("({text})")).expect("readable arguments");
    let mut out = Vec::new();
    let mut rest = v;
    while let Some(a) = rest.car() {
        out.push(a);
        rest = rest.cdr().unwrap();
    }
    out
}

// ---------------------------------------------------------------------------
// Program representation

#[derive(Debug, Clone)]
pub enum Expr {
    Int(i64),
    Nil,
    T,
    Sym(&'static str),
    Var(String),
    Call(&'static str, Vec<Expr>),
    User(String, Vec<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Let(Vec<(String, Expr)>, Vec<Expr>),
    Setq(String, Box<Expr>),
    /// `(let ((i 0) (acc init)) (while (< i n) (setq acc body) (setq i (1+ i))) acc)`
    Loop { i: String, acc: String, n: i64, init: Box<Expr>, body: Box<Expr> },
    Error(&'static str),
}

#[derive(Debug, Clone)]
pub struct Defun {
    pub name: String,
    pub params: Vec<String>,
    pub body: Expr,
    /// Self tail call guarded by a bounded counter in the first parameter.
    pub tail_recursive: bool,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub defuns: Vec<Defun>,
    pub entry: String,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone)]
pub enum Arg {
    Int(i64),
    Nil,
    List(Vec<i64>),
}

impl Arg {
    fn source(&self) -> String {
        match self {
            Arg::Int(n) => n.to_string(),
            Arg::Nil => "nil".into(),
            Arg::List(v) => format!("({})", v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")),
        }
    }
}

impl Expr {
    pub fn write(&self, out: &mut String) {
        match self {
            Expr::Int(n) => {
                let _ = write!(out, "{n}");
            }
            Expr::Nil => out.push_str("nil"),
            Expr::T => out.push('t'),
            Expr::Sym(s) => {
                let _ = write!(out, "'{s}");
            }
            Expr::Var(v) => out.push_str(v),
            Expr::Call(f, args) => {
                let _ = write!(out, "({f}");
                for a in args {
                    out.push(' ');
                    a.write(out);
                }
                out.push(')');
            }
            Expr::User(f, args) => {
                let _ = write!(out, "({f}");
                for a in args {
                    out.push(' ');
                    a.write(out);
                }
                out.push(')');
            }
            Expr::If(c, a, b) => {
                out.push_str("(if ");
                c.write(out);
                out.push(' ');
                a.write(out);
                out.push(' ');
                b.write(out);
                out.push(')');
            }
            Expr::Let(binds, body) => {
                out.push_str("(let (");
                for (i, (v, e)) in binds.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "({v} ");
                    e.write(out);
                    out.push(')');
                }
                out.push(')');
                for e in body {
                    out.push(' ');
                    e.write(out);
                }
                out.push(')');
            }
            Expr::Setq(v, e) => {
                let _ = write!(out, "(setq {v} ");
                e.write(out);
                out.push(')');
            }
            Expr::Loop { i, acc, n, init, body } => {
                let _ = write!(out, "(let (({i} 0) ({acc} ");
                init.write(out);
                let _ = write!(out, ")) (while (< {i} {n}) (setq {acc} ");
                body.write(out);
                let _ = write!(out, ") (setq {i} (1+ {i}))) {acc})");
            }
            Expr::Error(msg) => {
                let _ = write!(out, "(error \"{msg}\")");
            }
        }
    }
}

impl Program {
    pub fn source(&self) -> String {
        let mut out = String::new();
        for d in &self.defuns {
            let _ = write!(out, "(defun {} ({})\n  ", d.name, d.params.join(" "));
            if d.tail_recursive {
                let n = &d.params[0];
                let _ = write!(
                    out,
                    "(if (or (not (fixnump {n})) (<= {n} 0) (> {n} 12)) "
                );
                d.body.write(&mut out);
                let _ = write!(out, " ({} (1- {n})", d.name);
                for p in &d.params[1..] {
                    let _ = write!(out, " ");
                    // Carry the other parameters through unchanged except the
                    // last, which accumulates the body.
                    if p == d.params.last().unwrap() {
                        d.body.write(&mut out);
                    } else {
                        out.push_str(p);
                    }
                }
                out.push_str("))");
            } else {
                d.body.write(&mut out);
            }
            out.push_str(")\n");
        }
        out
    }

    pub fn args_source(&self) -> String {
        self.args.iter().map(Arg::source).collect::<Vec<_>>().join(" ")
    }
}

// ---------------------------------------------------------------------------
// Generator

pub struct Gen {
    rng: StdRng,
    counter: usize,
}

const LEAF_SYMS: [&str; 3] = ["a", "b", "foo"];

impl Gen {
    pub fn new(seed: u64) -> Gen {
        Gen { rng: StdRng::seed_from_u64(seed), counter: 0 }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.counter += 1;
        format!("{base}{}", self.counter)
    }

    fn int(&mut self) -> i64 {
        match self.rng.gen_range(0..20) {
            0 => MOST_POSITIVE_FIXNUM - self.rng.gen_range(0..3),
            1 => MOST_NEGATIVE_FIXNUM + self.rng.gen_range(0..3),
            2 => 1 << self.rng.gen_range(30..40),
            _ => self.rng.gen_range(-5..20),
        }
    }

    fn leaf(&mut self, vars: &[String]) -> Expr {
        match self.rng.gen_range(0..10) {
            0..=4 if !vars.is_empty() => Expr::Var(vars[self.rng.gen_range(0..vars.len())].clone()),
            0..=5 => Expr::Int(self.int()),
            6 => Expr::Nil,
            7 => Expr::T,
            8 => Expr::Sym(LEAF_SYMS[self.rng.gen_range(0..LEAF_SYMS.len())]),
            _ => Expr::Int(self.rng.gen_range(0..4)),
        }
    }

    fn expr(&mut self, depth: u32, vars: &[String], callees: &[(String, usize)]) -> Expr {
        if depth == 0 || self.rng.gen_range(0..10) < 2 {
            return self.leaf(vars);
        }
        let d = depth - 1;
        match self.rng.gen_range(0..30) {
            0..=2 => {
                let op = ["+", "-", "*"][self.rng.gen_range(0..3)];
                Expr::Call(op, vec![self.expr(d, vars, callees), self.expr(d, vars, callees)])
            }
            3 => {
                let op = ["1+", "1-", "-"][self.rng.gen_range(0..3)];
                Expr::Call(op, vec![self.expr(d, vars, callees)])
            }
            4..=5 => {
                let op = ["<", ">", "<=", ">=", "="][self.rng.gen_range(0..5)];
                Expr::Call(op, vec![self.expr(d, vars, callees), self.expr(d, vars, callees)])
            }
            6..=7 => {
                let op = ["car", "cdr", "null", "not", "consp", "fixnump", "length"][self.rng.gen_range(0..7)];
                Expr::Call(op, vec![self.expr(d, vars, callees)])
            }
            8 => Expr::Call("cons", vec![self.expr(d, vars, callees), self.expr(d, vars, callees)]),
            9 => {
                let n = self.rng.gen_range(0..4);
                Expr::Call("list", (0..n).map(|_| self.expr(d, vars, callees)).collect())
            }
            10 => Expr::Call("eq", vec![self.expr(d, vars, callees), self.expr(d, vars, callees)]),
            11..=14 => Expr::If(
                Box::new(self.expr(d, vars, callees)),
                Box::new(self.expr(d, vars, callees)),
                Box::new(self.expr(d, vars, callees)),
            ),
            15..=17 => {
                let n = self.rng.gen_range(1..3);
                let binds: Vec<(String, Expr)> =
                    (0..n).map(|_| (self.fresh("v"), self.expr(d, vars, callees))).collect();
                let mut inner = vars.to_vec();
                inner.extend(binds.iter().map(|(v, _)| v.clone()));
                let m = self.rng.gen_range(1..3);
                let body = (0..m).map(|_| self.expr(d, &inner, callees)).collect();
                Expr::Let(binds, body)
            }
            18..=19 if !vars.is_empty() => {
                let v = vars[self.rng.gen_range(0..vars.len())].clone();
                Expr::Setq(v, Box::new(self.expr(d, vars, callees)))
            }
            20..=22 => {
                let (i, acc) = (self.fresh("i"), self.fresh("acc"));
                let init = self.expr(d, vars, callees);
                let mut inner = vars.to_vec();
                inner.push(i.clone());
                inner.push(acc.clone());
                let body = self.expr(d, &inner, callees);
                Expr::Loop { i, acc, n: self.rng.gen_range(0..5), init: Box::new(init), body: Box::new(body) }
            }
            23..=26 if !callees.is_empty() => {
                let (f, arity) = callees[self.rng.gen_range(0..callees.len())].clone();
                Expr::User(f, (0..arity).map(|_| self.expr(d, vars, callees)).collect())
            }
            27 if self.rng.gen_range(0..4) == 0 => Expr::Error("boom"),
            _ => self.leaf(vars),
        }
    }

    fn arg(&mut self) -> Arg {
        match self.rng.gen_range(0..6) {
            0 => Arg::Nil,
            1 | 2 => {
                let n = self.rng.gen_range(0..5);
                Arg::List((0..n).map(|_| self.rng.gen_range(-3..10)).collect())
            }
            _ => Arg::Int(self.int()),
        }
    }

    pub fn program(&mut self) -> Program {
        self.counter = 0;
        let nfuns = self.rng.gen_range(1..4);
        let mut defuns: Vec<Defun> = Vec::new();
        let mut callees: Vec<(String, usize)> = Vec::new();
        for k in 0..nfuns {
            let name = format!("f{k}");
            let tail_recursive = self.rng.gen_range(0..4) == 0;
            let arity = if tail_recursive { self.rng.gen_range(2..4) } else { self.rng.gen_range(0..4) };
            let params: Vec<String> = (0..arity).map(|i| format!("p{i}")).collect();
            let body = self.expr(4, &params, &callees);
            defuns.push(Defun { name: name.clone(), params, body, tail_recursive });
            callees.push((name, arity));
        }
        let (entry, arity) = callees.last().unwrap().clone();
        let args = (0..arity).map(|_| self.arg()).collect();
        Program { defuns, entry, args }
    }
}

// ---------------------------------------------------------------------------
// Oracle: direct evaluation of the program representation.

#[derive(Debug, Clone)]
pub enum OVal {
    Int(i64),
    Sym(String),
    Cons(Rc<RefCell<(OVal, OVal)>>),
}

impl OVal {
    fn nil() -> OVal {
        OVal::Sym("nil".into())
    }

    fn t() -> OVal {
        OVal::Sym("t".into())
    }

    fn is_nil(&self) -> bool {
        matches!(self, OVal::Sym(s) if s == "nil")
    }

    fn truth(b: bool) -> OVal {
        if b {
            OVal::t()
        } else {
            OVal::nil()
        }
    }

    fn eq(&self, other: &OVal) -> bool {
        match (self, other) {
            (OVal::Int(a), OVal::Int(b)) => a == b,
            (OVal::Sym(a), OVal::Sym(b)) => a == b,
            (OVal::Cons(a), OVal::Cons(b)) => Rc::ptr_eq(a, b),
            _ => false,
        }
    }

    pub fn print(&self) -> String {
        let mut out = String::new();
        self.write(&mut out);
        out
    }

    fn write(&self, out: &mut String) {
        match self {
            OVal::Int(n) => {
                let _ = write!(out, "{n}");
            }
            OVal::Sym(s) => out.push_str(s),
            OVal::Cons(_) => {
                out.push('(');
                let mut cur = self.clone();
                let mut first = true;
                loop {
                    match cur {
                        OVal::Cons(c) => {
                            if !first {
                                out.push(' ');
                            }
                            first = false;
                            let (car, cdr) = c.borrow().clone();
                            car.write(out);
                            cur = cdr;
                        }
                        ref other if other.is_nil() => break,
                        other => {
                            out.push_str(" . ");
                            other.write(out);
                            break;
                        }
                    }
                }
                out.push(')');
            }
        }
    }

    fn from_arg(a: &Arg) -> OVal {
        match a {
            Arg::Int(n) => OVal::Int(*n),
            Arg::Nil => OVal::nil(),
            Arg::List(v) => {
                v.iter().rev().fold(OVal::nil(), |tail, n| OVal::Cons(Rc::new(RefCell::new((OVal::Int(*n), tail)))))
            }
        }
    }
}

type OResult = Result<OVal, ErrorKind>;

fn fixnum(n: i64) -> OResult {
    if (MOST_NEGATIVE_FIXNUM..=MOST_POSITIVE_FIXNUM).contains(&n) {
        Ok(OVal::Int(n))
    } else {
        Err(ErrorKind::OverflowError)
    }
}

fn int(v: &OVal) -> Result<i64, ErrorKind> {
    match v {
        OVal::Int(n) => Ok(*n),
        _ => Err(ErrorKind::WrongTypeArgument),
    }
}

fn list_part(v: &OVal, car: bool) -> OResult {
    match v {
        OVal::Cons(c) => Ok(if car { c.borrow().0.clone() } else { c.borrow().1.clone() }),
        v if v.is_nil() => Ok(OVal::nil()),
        _ => Err(ErrorKind::WrongTypeArgument),
    }
}

pub struct Oracle<'p> {
    defuns: HashMap<&'p str, &'p Defun>,
    steps: std::cell::Cell<u64>,
}

/// Evaluation steps after which the oracle gives up on a program.
pub const STEP_BUDGET: u64 = 200_000;

impl<'p> Oracle<'p> {
    pub fn new(p: &'p Program) -> Oracle<'p> {
        Oracle { defuns: p.defuns.iter().map(|d| (d.name.as_str(), d)).collect(), steps: Default::default() }
    }

    /// The expected outcome, or `None` if evaluation exceeds the budget.
    pub fn run(p: &Program) -> Option<Outcome> {
        let o = Oracle::new(p);
        let args: Vec<OVal> = p.args.iter().map(OVal::from_arg).collect();
        let r = o.call(&p.entry, args).map(|v| v.print());
        (o.steps.get() <= STEP_BUDGET).then_some(r)
    }

    fn call(&self, name: &str, mut args: Vec<OVal>) -> OResult {
        let d = self.defuns[name];
        loop {
            let mut env: Vec<(String, OVal)> = d.params.iter().cloned().zip(args.iter().cloned()).collect();
            if !d.tail_recursive {
                return self.eval(&d.body, &mut env);
            }
            let stop = match &env[0].1 {
                OVal::Int(n) => *n <= 0 || *n > 12,
                _ => true,
            };
            if stop {
                return self.eval(&d.body, &mut env);
            }
            let n = int(&env[0].1)? - 1;
            let mut next = vec![OVal::Int(n)];
            let last = d.params.len() - 1;
            for (i, p) in d.params.iter().enumerate().skip(1) {
                if i == last {
                    next.push(self.eval(&d.body, &mut env)?);
                } else {
                    next.push(lookup(&env, p));
                }
            }
            args = next;
        }
    }

    fn eval(&self, e: &Expr, env: &mut Vec<(String, OVal)>) -> OResult {
        self.steps.set(self.steps.get() + 1);
        if self.steps.get() > STEP_BUDGET {
            return Err(ErrorKind::ExcessiveNesting);
        }
        Ok(match e {
            Expr::Int(n) => OVal::Int(*n),
            Expr::Nil => OVal::nil(),
            Expr::T => OVal::t(),
            Expr::Sym(s) => OVal::Sym(s.to_string()),
            Expr::Var(v) => lookup(env, v),
            Expr::If(c, a, b) => {
                if self.eval(c, env)?.is_nil() {
                    self.eval(b, env)?
                } else {
                    self.eval(a, env)?
                }
            }
            Expr::Let(binds, body) => {
                let vals = binds.iter().map(|(_, e)| self.eval(e, env)).collect::<Result<Vec<_>, _>>()?;
                let mark = env.len();
                for ((v, _), val) in binds.iter().zip(vals) {
                    env.push((v.clone(), val));
                }
                let mut r = OVal::nil();
                for b in body {
                    match self.eval(b, env) {
                        Ok(v) => r = v,
                        Err(k) => {
                            env.truncate(mark);
                            return Err(k);
                        }
                    }
                }
                env.truncate(mark);
                r
            }
            Expr::Setq(v, e) => {
                let val = self.eval(e, env)?;
                let slot = env.iter_mut().rev().find(|(n, _)| n == v).expect("bound variable");
                slot.1 = val.clone();
                val
            }
            Expr::Loop { i, acc, n, init, body } => {
                let init = self.eval(init, env)?;
                let mark = env.len();
                env.push((i.clone(), OVal::Int(0)));
                env.push((acc.clone(), init));
                let r = (|| {
                    while int(&lookup(env, i))? < *n {
                        let v = self.eval(body, env)?;
                        set(env, acc, v);
                        let next = fixnum(int(&lookup(env, i))? + 1)?;
                        set(env, i, next);
                    }
                    Ok(lookup(env, acc))
                })();
                env.truncate(mark);
                r?
            }
            Expr::Error(_) => return Err(ErrorKind::User),
            Expr::User(f, args) => {
                let vals = args.iter().map(|a| self.eval(a, env)).collect::<Result<Vec<_>, _>>()?;
                self.call(f, vals)?
            }
            Expr::Call(f, args) => {
                let vals = args.iter().map(|a| self.eval(a, env)).collect::<Result<Vec<_>, _>>()?;
                prim(f, &vals)?
            }
        })
    }
}

fn lookup(env: &[(String, OVal)], v: &str) -> OVal {
    env.iter().rev().find(|(n, _)| n == v).expect("bound variable").1.clone()
}

fn set(env: &mut [(String, OVal)], v: &str, val: OVal) {
    env.iter_mut().rev().find(|(n, _)| n == v).expect("bound variable").1 = val;
}

fn prim(f: &str, a: &[OVal]) -> OResult {
    let cmp = |ok: fn(i64, i64) -> bool| -> OResult { Ok(OVal::truth(ok(int(&a[0])?, int(&a[1])?))) };
    match f {
        "+" => fixnum(int(&a[0])?.checked_add(int(&a[1])?).ok_or(ErrorKind::OverflowError)?),
        "-" if a.len() == 1 => fixnum(-int(&a[0])?),
        "-" => fixnum(int(&a[0])?.checked_sub(int(&a[1])?).ok_or(ErrorKind::OverflowError)?),
        "*" => fixnum(int(&a[0])?.checked_mul(int(&a[1])?).ok_or(ErrorKind::OverflowError)?),
        "1+" => fixnum(int(&a[0])? + 1),
        "1-" => fixnum(int(&a[0])? - 1),
        "<" => cmp(|x, y| x < y),
        ">" => cmp(|x, y| x > y),
        "<=" => cmp(|x, y| x <= y),
        ">=" => cmp(|x, y| x >= y),
        "=" => cmp(|x, y| x == y),
        "car" => list_part(&a[0], true),
        "cdr" => list_part(&a[0], false),
        "null" | "not" => Ok(OVal::truth(a[0].is_nil())),
        "consp" => Ok(OVal::truth(matches!(a[0], OVal::Cons(_)))),
        "fixnump" => Ok(OVal::truth(matches!(a[0], OVal::Int(_)))),
        "eq" => Ok(OVal::truth(a[0].eq(&a[1]))),
        "cons" => Ok(OVal::Cons(Rc::new(RefCell::new((a[0].clone(), a[1].clone()))))),
        "list" => Ok(a.iter().rev().fold(OVal::nil(), |t, v| OVal::Cons(Rc::new(RefCell::new((v.clone(), t)))))),
        "length" => {
            let mut n = 0;
            let mut cur = a[0].clone();
            loop {
                match cur {
                    OVal::Cons(c) => {
                        n += 1;
                        let next = c.borrow().1.clone();
                        cur = next;
                    }
                    ref v if v.is_nil() => return Ok(OVal::Int(n)),
                    _ => return Err(ErrorKind::WrongTypeArgument),
                }
            }
        }
        other => panic!("oracle has no primitive {other}"),
    }
}
