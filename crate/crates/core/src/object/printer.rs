//! Readable printer (prin1 style).

use std::fmt::{self, Write};

use super::datum::Datum;
use super::error::LispResult;
use super::reader::parse_number;
use super::symbol::Symbol;
use super::value::Value;

/// Prints a runtime value. Function objects are not readable and signal.
pub fn print(v: Value) -> LispResult<String> {
    Ok(print_datum(&Datum::from_value(v)?))
}

pub fn print_datum(d: &Datum) -> String {
    let mut out = String::new();
    write_datum(&mut out, d).expect("writing to a String cannot fail");
    out
}

pub fn write_symbol(out: &mut impl Write, sym: Symbol) -> fmt::Result {
    let name = sym.name();
    if name.is_empty() {
        return out.write_str("##");
    }
    let looks_numeric = parse_number(name).is_some() || name == ".";
    for (i, c) in name.chars().enumerate() {
        let special = c.is_whitespace()
            || "()'\";\\".contains(c)
            || (i == 0 && (c == '#' || looks_numeric));
        if special {
            out.write_char('\\')?;
        }
        out.write_char(c)?;
    }
    Ok(())
}

fn write_float(out: &mut impl Write, x: f64) -> fmt::Result {
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_nan() {
        write!(out, "{sign}0.0e+NaN")
    } else if x.is_infinite() {
        write!(out, "{sign}1.0e+INF")
    } else {
        // Debug output always contains '.' or 'e', so it re-reads as a float.
        write!(out, "{x:?}")
    }
}

fn write_string(out: &mut impl Write, s: &str) -> fmt::Result {
    out.write_char('"')?;
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.write_char('\\')?;
        }
        out.write_char(c)?;
    }
    out.write_char('"')
}

pub fn write_datum(out: &mut impl Write, d: &Datum) -> fmt::Result {
    match d {
        Datum::Symbol(s) => write_symbol(out, *s),
        Datum::Fixnum(n) => write!(out, "{n}"),
        Datum::Float(x) => write_float(out, *x),
        Datum::Str(s) => write_string(out, s),
        Datum::List(items, None) if items.len() == 2 && items[0] == Datum::sym("quote") => {
            out.write_char('\'')?;
            write_datum(out, &items[1])
        }
        Datum::List(items, None) if items.len() == 2 && items[0] == Datum::sym("function") => {
            out.write_str("#'")?;
            write_datum(out, &items[1])
        }
        Datum::List(items, tail) => {
            out.write_char('(')?;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.write_char(' ')?;
                }
                write_datum(out, item)?;
            }
            if let Some(tail) = tail {
                out.write_str(" . ")?;
                write_datum(out, tail)?;
            }
            out.write_char(')')
        }
    }
}

impl fmt::Display for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_datum(f, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object::reader::{read, read_datum};

    #[test]
    fn atoms() {
        assert_eq!(print(Value::fixnum(2).unwrap()).unwrap(), "2");
        assert_eq!(print(read("foo").unwrap()).unwrap(), "foo");
        assert_eq!(print(Value::NIL).unwrap(), "nil");
        assert_eq!(print_datum(&Datum::Float(1.0)), "1.0");
        assert_eq!(print_datum(&Datum::Str("a\"b".into())), "\"a\\\"b\"");
    }

    #[test]
    fn lists() {
        assert_eq!(print(read("(foo 2 (3 . nil))").unwrap()).unwrap(), "(foo 2 (3))");
        assert_eq!(print(read("(1 . 2)").unwrap()).unwrap(), "(1 . 2)");
        assert_eq!(print(read("'x").unwrap()).unwrap(), "'x");
    }

    #[test]
    fn awkward_symbols_round_trip() {
        for name in ["12", "1.5", "a b", "", "#'x", ".", "-", "1+", "x\\y", "(", "-1"] {
            let d = Datum::sym(name);
            let text = print_datum(&d);
            assert_eq!(read_datum(&text).unwrap(), d, "{name:?} printed as {text}");
        }
    }

    #[test]
    fn special_floats_round_trip() {
        for x in [f64::INFINITY, f64::NEG_INFINITY, -0.0, 1e300, 5e-324, 0.1] {
            let d = Datum::Float(x);
            assert_eq!(read_datum(&print_datum(&d)).unwrap(), d);
        }
        let nan = read_datum(&print_datum(&Datum::Float(f64::NAN))).unwrap();
        assert!(matches!(nan, Datum::Float(x) if x.is_nan()));
    }

    #[test]
    fn functions_are_unprintable() {
        let f = Value::function(crate::object::env::Function::Subr(0));
        assert!(print(f).is_err());
    }
}
