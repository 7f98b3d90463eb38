//! Tagged machine-word values and the thread-local object heap.
//!
//! A [`Value`] is one 64-bit word. The low three bits are the tag; the rest
//! is either an immediate payload (fixnum, symbol index, function index) or
//! the address of a heap object. `nil` is the all-zero word.
//!
//! Heap objects live in a per-thread arena that is released when the thread
//! exits. `Value` is neither `Send` nor `Sync`, so a value can never be
//! observed outside the thread whose heap backs it. There is no collector:
//! long-running workloads should run on a dedicated thread.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::marker::PhantomData;
use std::rc::Rc;

use super::env::Function;
use super::error::{ErrorKind, LispError, LispResult};
use super::symbol::Symbol;

pub const TAG_BITS: u32 = 3;
pub const TAG_MASK: u64 = (1 << TAG_BITS) - 1;
pub const TAG_SYMBOL: u64 = 0;
pub const TAG_FIXNUM: u64 = 1;
pub const TAG_CONS: u64 = 2;
pub const TAG_FLOAT: u64 = 3;
pub const TAG_STRING: u64 = 4;
pub const TAG_SUBR: u64 = 5;

pub const MOST_POSITIVE_FIXNUM: i64 = (1 << 60) - 1;
pub const MOST_NEGATIVE_FIXNUM: i64 = -(1 << 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Symbol,
    Fixnum,
    Cons,
    Float,
    String,
    Subr,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Value {
    bits: u64,
    _thread_bound: PhantomData<*const ()>,
}

/// A cons cell. The layout is shared with emitted native code.
#[repr(C)]
pub struct ConsCell {
    car: Cell<Value>,
    cdr: Cell<Value>,
}

struct StrObj {
    text: Rc<str>,
}

const CHUNK: usize = 4096;

#[derive(Default)]
struct Heap {
    conses: Vec<Box<[ConsCell]>>,
    cons_fill: usize,
    floats: Vec<Box<[Cell<f64>]>>,
    float_fill: usize,
    strings: Vec<Box<StrObj>>,
    functions: Vec<Function>,
}

thread_local! {
    static HEAP: RefCell<Heap> = RefCell::new(Heap::default());
}

impl Heap {
    fn alloc_cons(&mut self, car: Value, cdr: Value) -> u64 {
        if self.conses.is_empty() || self.cons_fill == CHUNK {
            let chunk: Vec<ConsCell> = (0..CHUNK)
                .map(|_| ConsCell { car: Cell::new(Value::NIL), cdr: Cell::new(Value::NIL) })
                .collect();
            self.conses.push(chunk.into_boxed_slice());
            self.cons_fill = 0;
        }
        let cell = &self.conses.last().unwrap()[self.cons_fill];
        self.cons_fill += 1;
        cell.car.set(car);
        cell.cdr.set(cdr);
        cell as *const ConsCell as u64
    }

    fn alloc_float(&mut self, x: f64) -> u64 {
        if self.floats.is_empty() || self.float_fill == CHUNK {
            let chunk: Vec<Cell<f64>> = (0..CHUNK).map(|_| Cell::new(0.0)).collect();
            self.floats.push(chunk.into_boxed_slice());
            self.float_fill = 0;
        }
        let cell = &self.floats.last().unwrap()[self.float_fill];
        self.float_fill += 1;
        cell.set(x);
        cell as *const Cell<f64> as u64
    }
}

impl Value {
    pub const NIL: Value = Value::from_raw(0);
    pub const T: Value = Value::from_raw((1 << TAG_BITS) | TAG_SYMBOL);

    const fn from_raw(bits: u64) -> Value {
        Value { bits, _thread_bound: PhantomData }
    }

    /// Reconstructs a value from its word.
    ///
    /// # Safety
    /// `bits` must have been produced by [`Value::bits`] on this thread.
    pub unsafe fn from_bits(bits: u64) -> Value {
        Value::from_raw(bits)
    }

    pub fn bits(self) -> u64 {
        self.bits
    }

    pub fn tag(self) -> Tag {
        match self.bits & TAG_MASK {
            TAG_SYMBOL => Tag::Symbol,
            TAG_FIXNUM => Tag::Fixnum,
            TAG_CONS => Tag::Cons,
            TAG_FLOAT => Tag::Float,
            TAG_STRING => Tag::String,
            TAG_SUBR => Tag::Subr,
            other => unreachable!("invalid tag {other}"),
        }
    }

    pub fn bool(b: bool) -> Value {
        if b {
            Value::T
        } else {
            Value::NIL
        }
    }

    pub fn symbol(sym: Symbol) -> Value {
        Value::from_raw(((sym.index() as u64) << TAG_BITS) | TAG_SYMBOL)
    }

    /// Like [`Value::fixnum`] without building an error.
    #[inline]
    pub fn fixnum_checked(n: i64) -> Option<Value> {
        (MOST_NEGATIVE_FIXNUM..=MOST_POSITIVE_FIXNUM)
            .contains(&n)
            .then(|| Value::from_raw(((n as u64) << TAG_BITS) | TAG_FIXNUM))
    }

    pub fn fixnum(n: i64) -> LispResult<Value> {
        if (MOST_NEGATIVE_FIXNUM..=MOST_POSITIVE_FIXNUM).contains(&n) {
            Ok(Value::from_raw(((n as u64) << TAG_BITS) | TAG_FIXNUM))
        } else {
            Err(LispError::new(ErrorKind::OverflowError, n.to_string()))
        }
    }

    pub fn float(x: f64) -> Value {
        Value::from_raw(HEAP.with(|h| h.borrow_mut().alloc_float(x)) | TAG_FLOAT)
    }

    pub fn cons(car: Value, cdr: Value) -> Value {
        Value::from_raw(HEAP.with(|h| h.borrow_mut().alloc_cons(car, cdr)) | TAG_CONS)
    }

    pub fn string(text: &str) -> Value {
        let obj = Box::new(StrObj { text: Rc::from(text) });
        let addr = &*obj as *const StrObj as u64;
        HEAP.with(|h| h.borrow_mut().strings.push(obj));
        Value::from_raw(addr | TAG_STRING)
    }

    /// Wraps a function object as a first-class value.
    pub fn function(f: Function) -> Value {
        let index = HEAP.with(|h| {
            let mut heap = h.borrow_mut();
            heap.functions.push(f);
            heap.functions.len() as u64 - 1
        });
        Value::from_raw((index << TAG_BITS) | TAG_SUBR)
    }

    pub fn list(items: &[Value]) -> Value {
        items.iter().rev().fold(Value::NIL, |tail, &v| Value::cons(v, tail))
    }

    pub fn is_nil(self) -> bool {
        self.bits == 0
    }

    pub fn is_cons(self) -> bool {
        self.bits & TAG_MASK == TAG_CONS
    }

    pub fn is_fixnum(self) -> bool {
        self.bits & TAG_MASK == TAG_FIXNUM
    }

    pub fn as_fixnum(self) -> Option<i64> {
        self.is_fixnum().then(|| (self.bits as i64) >> TAG_BITS)
    }

    pub fn as_symbol(self) -> Option<Symbol> {
        if self.bits & TAG_MASK == TAG_SYMBOL {
            Some(Symbol::from_index((self.bits >> TAG_BITS) as u32))
        } else {
            None
        }
    }

    pub fn as_float(self) -> Option<f64> {
        if self.bits & TAG_MASK == TAG_FLOAT {
            // SAFETY: float words always point at a live arena cell of this thread.
            Some(unsafe { &*((self.bits & !TAG_MASK) as *const Cell<f64>) }.get())
        } else {
            None
        }
    }

    pub fn as_string(self) -> Option<Rc<str>> {
        if self.bits & TAG_MASK == TAG_STRING {
            // SAFETY: string words point at a boxed StrObj owned by this thread's heap.
            Some(unsafe { &*((self.bits & !TAG_MASK) as *const StrObj) }.text.clone())
        } else {
            None
        }
    }

    pub fn as_function(self) -> Option<Function> {
        if self.bits & TAG_MASK == TAG_SUBR {
            let index = (self.bits >> TAG_BITS) as usize;
            HEAP.with(|h| h.borrow().functions.get(index).cloned())
        } else {
            None
        }
    }

    fn cell(self) -> Option<&'static ConsCell> {
        if self.is_cons() {
            // SAFETY: cons words point into an arena chunk that lives until this
            // thread exits, and values cannot leave the thread.
            Some(unsafe { &*((self.bits & !TAG_MASK) as *const ConsCell) })
        } else {
            None
        }
    }

    /// `car` of a cons; `None` for anything else (including nil).
    pub fn car(self) -> Option<Value> {
        self.cell().map(|c| c.car.get())
    }

    pub fn cdr(self) -> Option<Value> {
        self.cell().map(|c| c.cdr.get())
    }

    pub fn set_car(self, v: Value) -> bool {
        self.cell().map(|c| c.car.set(v)).is_some()
    }

    pub fn set_cdr(self, v: Value) -> bool {
        self.cell().map(|c| c.cdr.set(v)).is_some()
    }

    /// Iterates the elements of a list, stopping at the first non-cons tail.
    pub fn iter(self) -> ListIter {
        ListIter { rest: self }
    }
}

pub struct ListIter {
    rest: Value,
}

impl ListIter {
    /// The tail left after iteration stopped (nil for proper lists).
    pub fn tail(&self) -> Value {
        self.rest
    }
}

impl Iterator for ListIter {
    type Item = Value;

    fn next(&mut self) -> Option<Value> {
        let cell = self.rest.cell()?;
        self.rest = cell.cdr.get();
        Some(cell.car.get())
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match super::printer::print(*self) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "#<{:?} {:#x}>", self.tag(), self.bits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nil_is_zero_word() {
        assert_eq!(Value::NIL.bits(), 0);
        assert_eq!(Value::symbol(Symbol::NIL), Value::NIL);
        assert_eq!(Value::symbol(Symbol::T), Value::T);
    }

    #[test]
    fn fixnum_range_is_61_bits() {
        assert_eq!(Value::fixnum(MOST_POSITIVE_FIXNUM).unwrap().as_fixnum(), Some(MOST_POSITIVE_FIXNUM));
        assert_eq!(Value::fixnum(MOST_NEGATIVE_FIXNUM).unwrap().as_fixnum(), Some(MOST_NEGATIVE_FIXNUM));
        assert_eq!(Value::fixnum(MOST_POSITIVE_FIXNUM + 1).unwrap_err().kind, ErrorKind::OverflowError);
        assert_eq!(Value::fixnum(MOST_NEGATIVE_FIXNUM - 1).unwrap_err().kind, ErrorKind::OverflowError);
        assert_eq!(Value::fixnum(-7).unwrap().as_fixnum(), Some(-7));
    }

    #[test]
    fn cons_cells_are_mutable_and_identity_compared() {
        let a = Value::cons(Value::fixnum(1).unwrap(), Value::NIL);
        let b = Value::cons(Value::fixnum(1).unwrap(), Value::NIL);
        assert_ne!(a, b);
        assert!(a.set_car(Value::T));
        assert_eq!(a.car(), Some(Value::T));
        assert_eq!(Value::NIL.car(), None);
    }

    #[test]
    fn floats_and_strings_box() {
        let x = Value::float(2.5);
        assert_eq!(x.tag(), Tag::Float);
        assert_eq!(x.as_float(), Some(2.5));
        let s = Value::string("hi");
        assert_eq!(&*s.as_string().unwrap(), "hi");
    }
}
