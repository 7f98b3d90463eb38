//! Primitive function registry.
//!
//! The registry order is part of the native ABI: it fixes the layout of the
//! primitive-entry table and feeds the unit signature hash.

use std::cmp::Ordering;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::env::GlobalEnv;
use super::error::{ErrorKind, LispError, LispResult};
use super::printer::print;
use super::symbol::Symbol;
use super::value::{Tag, Value};

pub type PrimId = usize;
pub type PrimFn = fn(&mut GlobalEnv, &[Value]) -> LispResult<Value>;

/// Fixed-style entries take at most this many arguments.
pub const MAX_FIXED_ARGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LispType {
    Fixnum,
    Float,
    Number,
    Cons,
    Symbol,
    String,
    Boolean,
    T,
}

impl LispType {
    pub fn name(self) -> &'static str {
        match self {
            LispType::Fixnum => "fixnum",
            LispType::Float => "float",
            LispType::Number => "number",
            LispType::Cons => "cons",
            LispType::Symbol => "symbol",
            LispType::String => "string",
            LispType::Boolean => "boolean",
            LispType::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CallStyle {
    /// Arguments passed individually (up to [`MAX_FIXED_ARGS`]).
    Fixed,
    /// Argument count plus a pointer to an argument vector.
    Spread,
}

pub struct Subr {
    pub name: &'static str,
    pub min_args: usize,
    /// `None` means any number of arguments.
    pub max_args: Option<usize>,
    pub pure: bool,
    pub ret_type: Option<LispType>,
    pub func: PrimFn,
}

impl Subr {
    pub fn style(&self) -> CallStyle {
        match self.max_args {
            Some(n) if n <= MAX_FIXED_ARGS => CallStyle::Fixed,
            _ => CallStyle::Spread,
        }
    }

    pub fn symbol(&self) -> Symbol {
        Symbol::intern(self.name)
    }

    pub fn accepts(&self, n: usize) -> bool {
        n >= self.min_args && self.max_args.is_none_or(|max| n <= max)
    }
}

impl std::fmt::Debug for Subr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#<subr {}>", self.name)
    }
}

macro_rules! subr {
    ($name:expr, $min:expr, $max:expr, $pure:expr, $ret:expr, $func:expr) => {
        Subr { name: $name, min_args: $min, max_args: $max, pure: $pure, ret_type: $ret, func: $func }
    };
}

use LispType as Ty;

static REGISTRY: [Subr; 30] = [
    subr!("car", 1, Some(1), false, None, p_car),
    subr!("cdr", 1, Some(1), false, None, p_cdr),
    subr!("cons", 2, Some(2), false, Some(Ty::Cons), p_cons),
    subr!("setcar", 2, Some(2), false, None, p_setcar),
    subr!("setcdr", 2, Some(2), false, None, p_setcdr),
    subr!("eq", 2, Some(2), true, Some(Ty::Boolean), p_eq),
    subr!("not", 1, Some(1), true, Some(Ty::Boolean), p_not),
    subr!("null", 1, Some(1), true, Some(Ty::Boolean), p_not),
    subr!("consp", 1, Some(1), true, Some(Ty::Boolean), p_consp),
    subr!("fixnump", 1, Some(1), true, Some(Ty::Boolean), p_fixnump),
    subr!("+", 0, None, true, Some(Ty::Number), p_plus),
    subr!("-", 0, None, true, Some(Ty::Number), p_minus),
    subr!("*", 0, None, true, Some(Ty::Number), p_times),
    subr!("/", 1, None, true, Some(Ty::Number), p_quo),
    subr!("1+", 1, Some(1), true, Some(Ty::Number), p_add1),
    subr!("1-", 1, Some(1), true, Some(Ty::Number), p_sub1),
    subr!("<", 1, None, true, Some(Ty::Boolean), p_lss),
    subr!(">", 1, None, true, Some(Ty::Boolean), p_gtr),
    subr!("<=", 1, None, true, Some(Ty::Boolean), p_leq),
    subr!(">=", 1, None, true, Some(Ty::Boolean), p_geq),
    subr!("=", 1, None, true, Some(Ty::Boolean), p_eqlsign),
    subr!("list", 0, None, false, None, p_list),
    subr!("length", 1, Some(1), false, Some(Ty::Fixnum), p_length),
    subr!("funcall", 1, None, false, None, p_funcall),
    subr!("symbol-value", 1, Some(1), false, None, p_symbol_value),
    subr!("set", 2, Some(2), false, None, p_set),
    subr!("error", 1, None, false, None, p_error),
    subr!("comp-hint-fixnum", 1, Some(1), true, Some(Ty::Fixnum), p_hint_fixnum),
    subr!("comp-hint-cons", 1, Some(1), true, Some(Ty::Cons), p_hint_cons),
    subr!("%register-function", 1, Some(1), false, Some(Ty::Symbol), p_register_function),
];

/// All primitives in registry order.
pub fn registry() -> &'static [Subr] {
    &REGISTRY
}

pub fn subr(id: PrimId) -> &'static Subr {
    &REGISTRY[id]
}

/// Looks up a primitive by symbol.
pub fn lookup(sym: Symbol) -> Option<PrimId> {
    static BY_SYMBOL: OnceLock<Vec<Symbol>> = OnceLock::new();
    let symbols = BY_SYMBOL.get_or_init(|| REGISTRY.iter().map(Subr::symbol).collect());
    symbols.iter().position(|&s| s == sym)
}

pub fn lookup_name(name: &str) -> Option<PrimId> {
    REGISTRY.iter().position(|s| s.name == name)
}

/// Installs every primitive in the function cell of its name.
pub fn register_primitives(env: &mut GlobalEnv) {
    for (id, s) in REGISTRY.iter().enumerate() {
        env.fset(s.symbol(), super::env::Function::Subr(id));
    }
}

fn display(v: Value) -> String {
    print(v).unwrap_or_else(|_| format!("{v:?}"))
}

fn wrong_type(pred: &str, v: Value) -> LispError {
    LispError::wrong_type(pred, display(v))
}

fn p_car(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    car(a[0])
}

pub fn car(v: Value) -> LispResult<Value> {
    if v.is_nil() {
        return Ok(Value::NIL);
    }
    v.car().ok_or_else(|| wrong_type("listp", v))
}

fn p_cdr(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    cdr(a[0])
}

pub fn cdr(v: Value) -> LispResult<Value> {
    if v.is_nil() {
        return Ok(Value::NIL);
    }
    v.cdr().ok_or_else(|| wrong_type("listp", v))
}

fn p_cons(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    Ok(Value::cons(a[0], a[1]))
}

pub fn setcar(cell: Value, v: Value) -> LispResult<Value> {
    if cell.set_car(v) {
        Ok(v)
    } else {
        Err(wrong_type("consp", cell))
    }
}

pub fn setcdr(cell: Value, v: Value) -> LispResult<Value> {
    if cell.set_cdr(v) {
        Ok(v)
    } else {
        Err(wrong_type("consp", cell))
    }
}

fn p_setcar(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    setcar(a[0], a[1])
}

fn p_setcdr(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    setcdr(a[0], a[1])
}

fn p_eq(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    Ok(Value::bool(a[0] == a[1]))
}

fn p_not(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    Ok(Value::bool(a[0].is_nil()))
}

fn p_consp(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    Ok(Value::bool(a[0].is_cons()))
}

fn p_fixnump(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    Ok(Value::bool(a[0].is_fixnum()))
}

#[derive(Clone, Copy)]
enum Num {
    Int(i64),
    Float(f64),
}

impl Num {
    fn of(v: Value) -> LispResult<Num> {
        match v.tag() {
            Tag::Fixnum => Ok(Num::Int(v.as_fixnum().unwrap())),
            Tag::Float => Ok(Num::Float(v.as_float().unwrap())),
            _ => Err(wrong_type("number-or-marker-p", v)),
        }
    }

    fn to_f64(self) -> f64 {
        match self {
            Num::Int(n) => n as f64,
            Num::Float(x) => x,
        }
    }
}

fn overflow() -> LispError {
    LispError::new(ErrorKind::OverflowError, "fixnum overflow")
}

/// Folds an arithmetic operation left to right. If any argument is a float
/// the whole computation is carried out in floating point.
fn arith(
    args: &[Value],
    int_op: fn(i64, i64) -> LispResult<i64>,
    float_op: fn(f64, f64) -> f64,
) -> LispResult<Value> {
    let nums = args.iter().map(|&v| Num::of(v)).collect::<LispResult<Vec<_>>>()?;
    if nums.iter().any(|n| matches!(n, Num::Float(_))) {
        let mut acc = nums[0].to_f64();
        for n in &nums[1..] {
            acc = float_op(acc, n.to_f64());
        }
        return Ok(Value::float(acc));
    }
    let mut acc = match nums[0] {
        Num::Int(n) => n,
        Num::Float(_) => unreachable!(),
    };
    for n in &nums[1..] {
        if let Num::Int(n) = n {
            acc = int_op(acc, *n)?;
        }
    }
    Value::fixnum(acc)
}

fn checked(r: Option<i64>) -> LispResult<i64> {
    r.ok_or_else(overflow)
}

fn p_plus(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    if a.is_empty() {
        return Value::fixnum(0);
    }
    arith(a, |x, y| checked(x.checked_add(y)), |x, y| x + y)
}

fn p_minus(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    match a.len() {
        0 => Value::fixnum(0),
        1 => negate(a[0]),
        _ => arith(a, |x, y| checked(x.checked_sub(y)), |x, y| x - y),
    }
}

pub fn negate(v: Value) -> LispResult<Value> {
    match Num::of(v)? {
        Num::Int(n) => Value::fixnum(-n),
        Num::Float(x) => Ok(Value::float(-x)),
    }
}

fn p_times(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    if a.is_empty() {
        return Value::fixnum(1);
    }
    arith(a, |x, y| checked(x.checked_mul(y)), |x, y| x * y)
}

fn p_quo(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    let one = [Value::fixnum(1)?, a[0]];
    let args = if a.len() == 1 { &one[..] } else { a };
    arith(
        args,
        |x, y| {
            if y == 0 {
                Err(LispError::new(ErrorKind::ArithError, "division by zero"))
            } else {
                checked(x.checked_div(y))
            }
        },
        |x, y| x / y,
    )
}

pub fn add1(v: Value) -> LispResult<Value> {
    match Num::of(v)? {
        Num::Int(n) => Value::fixnum(n + 1),
        Num::Float(x) => Ok(Value::float(x + 1.0)),
    }
}

pub fn sub1(v: Value) -> LispResult<Value> {
    match Num::of(v)? {
        Num::Int(n) => Value::fixnum(n - 1),
        Num::Float(x) => Ok(Value::float(x - 1.0)),
    }
}

fn p_add1(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    add1(a[0])
}

fn p_sub1(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    sub1(a[0])
}

/// Exact numeric comparison; `None` when unordered (NaN).
fn num_cmp(a: Num, b: Num) -> Option<Ordering> {
    match (a, b) {
        (Num::Int(x), Num::Int(y)) => Some(x.cmp(&y)),
        (Num::Float(x), Num::Float(y)) => x.partial_cmp(&y),
        (Num::Int(x), Num::Float(y)) => int_float_cmp(x, y),
        (Num::Float(x), Num::Int(y)) => int_float_cmp(y, x).map(Ordering::reverse),
    }
}

fn int_float_cmp(i: i64, f: f64) -> Option<Ordering> {
    if f.is_nan() {
        return None;
    }
    // Fixnums are below 2^60, so any float outside that range decides alone.
    if f >= 2f64.powi(61) {
        return Some(Ordering::Less);
    }
    if f <= -(2f64.powi(61)) {
        return Some(Ordering::Greater);
    }
    let fl = f.floor();
    match i.cmp(&(fl as i64)) {
        Ordering::Equal if f > fl => Some(Ordering::Less),
        o => Some(o),
    }
}

fn compare_chain(a: &[Value], ok: fn(Ordering) -> bool) -> LispResult<Value> {
    let nums = a.iter().map(|&v| Num::of(v)).collect::<LispResult<Vec<_>>>()?;
    let holds = nums.windows(2).all(|w| num_cmp(w[0], w[1]).is_some_and(ok));
    Ok(Value::bool(holds))
}

pub fn lss(x: Value, y: Value) -> LispResult<Value> {
    compare_chain(&[x, y], |o| o == Ordering::Less)
}

pub fn gtr(x: Value, y: Value) -> LispResult<Value> {
    compare_chain(&[x, y], |o| o == Ordering::Greater)
}

pub fn eqlsign(x: Value, y: Value) -> LispResult<Value> {
    compare_chain(&[x, y], |o| o == Ordering::Equal)
}

fn p_lss(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    compare_chain(a, |o| o == Ordering::Less)
}

fn p_gtr(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    compare_chain(a, |o| o == Ordering::Greater)
}

fn p_leq(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    compare_chain(a, |o| o != Ordering::Greater)
}

fn p_geq(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    compare_chain(a, |o| o != Ordering::Less)
}

fn p_eqlsign(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    compare_chain(a, |o| o == Ordering::Equal)
}

fn p_list(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    Ok(Value::list(a))
}

fn p_length(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    let v = a[0];
    if let Some(s) = v.as_string() {
        return Value::fixnum(s.chars().count() as i64);
    }
    // Brent-style cycle check keeps circular lists from hanging.
    let mut n: i64 = 0;
    let mut rest = v;
    let mut mark = v;
    let mut power = 1;
    while let Some(next) = rest.cdr() {
        n += 1;
        rest = next;
        if rest == mark && rest.is_cons() {
            return Err(LispError::wrong_type("listp", "circular list"));
        }
        if n == power {
            mark = rest;
            power *= 2;
        }
    }
    if !rest.is_nil() {
        return Err(wrong_type("listp", v));
    }
    Value::fixnum(n)
}

fn p_funcall(env: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    env.funcall(a[0], &a[1..])
}

fn symbol_arg(v: Value) -> LispResult<Symbol> {
    v.as_symbol().ok_or_else(|| wrong_type("symbolp", v))
}

fn p_symbol_value(env: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    env.symbol_value(symbol_arg(a[0])?)
}

fn p_set(env: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    env.set_value(symbol_arg(a[0])?, a[1])?;
    Ok(a[1])
}

fn p_error(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    let mut message = match a[0].as_string() {
        Some(s) => s.to_string(),
        None => display(a[0]),
    };
    for &v in &a[1..] {
        message.push(' ');
        message.push_str(&display(v));
    }
    Err(LispError::new(ErrorKind::User, message))
}

fn p_hint_fixnum(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    if a[0].is_fixnum() {
        Ok(a[0])
    } else {
        Err(wrong_type("fixnump", a[0]))
    }
}

fn p_hint_cons(_: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    if a[0].is_cons() {
        Ok(a[0])
    } else {
        Err(wrong_type("consp", a[0]))
    }
}

fn p_register_function(env: &mut GlobalEnv, a: &[Value]) -> LispResult<Value> {
    env.register_loading_function(symbol_arg(a[0])?)?;
    Ok(a[0])
}
