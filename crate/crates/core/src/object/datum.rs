//! Owned, thread-independent Lisp data.
//!
//! The compiler works with `Datum` constants so that IR and compilation
//! units can move between threads and be serialized. Runtime [`Value`]s are
//! produced from them on load.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::error::{ErrorKind, LispError, LispResult};
use super::symbol::Symbol;
use super::value::{Tag, Value, MOST_NEGATIVE_FIXNUM, MOST_POSITIVE_FIXNUM};

/// A reader-serializable datum. Lists are flattened: `List(items, tail)` is
/// `(items... . tail)`, with `items` non-empty and `tail` absent for proper
/// lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Datum {
    Symbol(Symbol),
    Fixnum(i64),
    Float(f64),
    Str(String),
    List(Vec<Datum>, Option<Box<Datum>>),
}

impl Datum {
    pub const NIL: Datum = Datum::Symbol(Symbol::NIL);
    pub const T: Datum = Datum::Symbol(Symbol::T);

    pub fn sym(name: &str) -> Datum {
        Datum::Symbol(Symbol::intern(name))
    }

    pub fn list(items: Vec<Datum>) -> Datum {
        Datum::dotted(items, Datum::NIL)
    }

    /// Builds `(items... . tail)` in normal form.
    pub fn dotted(mut items: Vec<Datum>, tail: Datum) -> Datum {
        match tail {
            Datum::Symbol(s) if s.is_nil() => {
                if items.is_empty() {
                    Datum::NIL
                } else {
                    Datum::List(items, None)
                }
            }
            Datum::List(more, rest) => {
                items.extend(more);
                match rest {
                    Some(rest) => Datum::dotted(items, *rest),
                    None => Datum::List(items, None),
                }
            }
            atom if items.is_empty() => atom,
            atom => Datum::List(items, Some(Box::new(atom))),
        }
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Datum::Symbol(s) if s.is_nil())
    }

    pub fn as_symbol(&self) -> Option<Symbol> {
        match self {
            Datum::Symbol(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_fixnum(&self) -> Option<i64> {
        match self {
            Datum::Fixnum(n) => Some(*n),
            _ => None,
        }
    }

    /// Elements of a proper list (nil is the empty list).
    pub fn as_list(&self) -> Option<&[Datum]> {
        match self {
            Datum::List(items, None) => Some(items),
            d if d.is_nil() => Some(&[]),
            _ => None,
        }
    }

    /// True for data represented as an immediate word (no heap identity).
    pub fn is_immediate(&self) -> bool {
        matches!(self, Datum::Symbol(_) | Datum::Fixnum(_))
    }

    pub fn fixnum(n: i64) -> LispResult<Datum> {
        if (MOST_NEGATIVE_FIXNUM..=MOST_POSITIVE_FIXNUM).contains(&n) {
            Ok(Datum::Fixnum(n))
        } else {
            Err(LispError::new(ErrorKind::OverflowError, n.to_string()))
        }
    }

    /// Materializes this datum on the current thread's heap.
    pub fn to_value(&self) -> Value {
        match self {
            Datum::Symbol(s) => Value::symbol(*s),
            // Datum fixnums are range-checked on construction.
            Datum::Fixnum(n) => Value::fixnum(*n).unwrap_or(Value::NIL),
            Datum::Float(x) => Value::float(*x),
            Datum::Str(s) => Value::string(s),
            Datum::List(items, tail) => {
                let tail = tail.as_ref().map_or(Value::NIL, |t| t.to_value());
                items.iter().rev().fold(tail, |acc, d| Value::cons(d.to_value(), acc))
            }
        }
    }

    /// Converts a runtime value back to an owned datum. Function objects and
    /// circular structure are not representable.
    pub fn from_value(v: Value) -> LispResult<Datum> {
        Datum::from_value_depth(v, 0)
    }

    fn from_value_depth(v: Value, depth: usize) -> LispResult<Datum> {
        const MAX_DEPTH: usize = 10_000;
        const MAX_LEN: usize = 1 << 26;
        if depth > MAX_DEPTH {
            return Err(LispError::new(ErrorKind::User, "structure too deep to print"));
        }
        Ok(match v.tag() {
            Tag::Symbol => Datum::Symbol(v.as_symbol().unwrap()),
            Tag::Fixnum => Datum::Fixnum(v.as_fixnum().unwrap()),
            Tag::Float => Datum::Float(v.as_float().unwrap()),
            Tag::String => Datum::Str(v.as_string().unwrap().to_string()),
            Tag::Subr => return Err(LispError::new(ErrorKind::User, "unprintable function object")),
            Tag::Cons => {
                let mut items = Vec::new();
                let mut rest = v;
                while let (Some(car), Some(cdr)) = (rest.car(), rest.cdr()) {
                    if items.len() >= MAX_LEN {
                        return Err(LispError::new(ErrorKind::User, "list too long to print"));
                    }
                    items.push(Datum::from_value_depth(car, depth + 1)?);
                    rest = cdr;
                }
                let tail = Datum::from_value_depth(rest, depth + 1)?;
                Datum::dotted(items, tail)
            }
        })
    }
}

impl PartialEq for Datum {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Datum::Symbol(a), Datum::Symbol(b)) => a == b,
            (Datum::Fixnum(a), Datum::Fixnum(b)) => a == b,
            (Datum::Float(a), Datum::Float(b)) => a.to_bits() == b.to_bits(),
            (Datum::Str(a), Datum::Str(b)) => a == b,
            (Datum::List(a, ta), Datum::List(b, tb)) => a == b && ta == tb,
            _ => false,
        }
    }
}

impl Eq for Datum {}

impl Hash for Datum {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Datum::Symbol(s) => s.hash(state),
            Datum::Fixnum(n) => n.hash(state),
            Datum::Float(x) => x.to_bits().hash(state),
            Datum::Str(s) => s.hash(state),
            Datum::List(items, tail) => {
                items.hash(state);
                tail.hash(state);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_normalizes_nested_tails() {
        let d = Datum::dotted(
            vec![Datum::Fixnum(1)],
            Datum::dotted(vec![Datum::Fixnum(2)], Datum::Fixnum(3)),
        );
        assert_eq!(
            d,
            Datum::List(vec![Datum::Fixnum(1), Datum::Fixnum(2)], Some(Box::new(Datum::Fixnum(3))))
        );
        assert_eq!(Datum::list(vec![]), Datum::NIL);
    }

    #[test]
    fn float_and_fixnum_are_distinct() {
        assert_ne!(Datum::Fixnum(1), Datum::Float(1.0));
    }

    #[test]
    fn value_round_trip() {
        let d = Datum::dotted(vec![Datum::sym("a"), Datum::Float(0.5)], Datum::Str("x".into()));
        assert_eq!(Datum::from_value(d.to_value()).unwrap(), d);
    }

    #[test]
    fn long_lists_do_not_recurse() {
        let items: Vec<Datum> = (0..200_000).map(Datum::Fixnum).collect();
        let d = Datum::list(items);
        let v = d.to_value();
        assert_eq!(Datum::from_value(v).unwrap(), d);
    }
}
