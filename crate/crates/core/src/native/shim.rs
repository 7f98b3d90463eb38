//! The C runtime interface that emitted units compile against.
//!
//! The header is generated from the object model constants and the
//! primitive registry, so the tag layout and entry table cannot drift from
//! the host. Its bytes feed the unit signature hash.

use std::fmt::Write;
use std::sync::OnceLock;

use crate::object::prims::{registry, CallStyle, Subr};
use crate::object::value::{
    MOST_NEGATIVE_FIXNUM, MOST_POSITIVE_FIXNUM, TAG_BITS, TAG_CONS, TAG_FIXNUM, TAG_FLOAT,
    TAG_STRING, TAG_SUBR, TAG_SYMBOL,
};

pub const STATUS_OK: i32 = 0;
/// A primitive signalled; the error is held by the host.
pub const STATUS_SIGNAL: i32 = 1;
/// Native code exceeded the call depth limit.
pub const STATUS_NESTING: i32 = 2;

/// Mirror of `ml_ctx`.
#[repr(C)]
pub struct MlCtx {
    pub status: i32,
    pub reserved: i32,
    pub depth: i64,
    pub max_depth: i64,
    pub host: *mut std::ffi::c_void,
}

fn hex(name: &str) -> String {
    name.bytes().map(|b| format!("{b:x}")).collect()
}

/// Keeps C identifier characters, mapping `-` to `_`.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .filter_map(|c| match c {
            '-' => Some('_'),
            c if c.is_ascii_alphanumeric() || c == '_' => Some(c),
            _ => None,
        })
        .collect()
}

/// Name of a primitive's slot in the entry table.
pub fn entry_name(name: &str) -> String {
    format!("R{}_{}", hex(name), sanitize(name))
}

/// Exported symbol of a compiled Lisp function.
pub fn function_symbol(name: &str) -> String {
    format!("F{}_{}", hex(name), sanitize(name))
}

pub fn entry_type(s: &Subr, field: &str) -> String {
    match s.style() {
        CallStyle::Spread => format!("ml_value (*{field}) (ml_ctx *, ptrdiff_t, ml_value *)"),
        CallStyle::Fixed => {
            let n = s.max_args.unwrap_or(0);
            let args: String = (0..n).map(|_| ", ml_value").collect();
            format!("ml_value (*{field}) (ml_ctx *{args})")
        }
    }
}

fn build_header() -> String {
    let mut h = String::new();
    let w = &mut h;
    let _ = writeln!(w, "#ifndef MINILISP_SHIM_H\n#define MINILISP_SHIM_H\n");
    let _ = writeln!(w, "#include <stddef.h>\n#include <stdint.h>\n");
    let _ = writeln!(w, "typedef uint64_t ml_value;\n");
    let _ = writeln!(w, "#define ML_TAG_BITS {TAG_BITS}");
    let _ = writeln!(w, "#define ML_TAG_MASK ((ml_value) {})", (1u64 << TAG_BITS) - 1);
    for (name, tag) in [
        ("SYMBOL", TAG_SYMBOL),
        ("FIXNUM", TAG_FIXNUM),
        ("CONS", TAG_CONS),
        ("FLOAT", TAG_FLOAT),
        ("STRING", TAG_STRING),
        ("SUBR", TAG_SUBR),
    ] {
        let _ = writeln!(w, "#define ML_TAG_{name} {tag}");
    }
    let _ = writeln!(w, "\n#define ML_NIL ((ml_value) 0)");
    let _ = writeln!(w, "#define ML_T ((ml_value) {})", 1u64 << TAG_BITS);
    let _ = writeln!(w, "#define ML_MOST_POSITIVE_FIXNUM ((int64_t) {MOST_POSITIVE_FIXNUM}LL)");
    let _ = writeln!(w, "#define ML_MOST_NEGATIVE_FIXNUM ((int64_t) ({}LL - 1))", MOST_NEGATIVE_FIXNUM + 1);
    let _ = writeln!(w, "\n#define ML_STATUS_OK {STATUS_OK}");
    let _ = writeln!(w, "#define ML_STATUS_SIGNAL {STATUS_SIGNAL}");
    let _ = writeln!(w, "#define ML_STATUS_NESTING {STATUS_NESTING}\n");
    let _ = writeln!(w, "typedef struct ml_cons {{ ml_value car; ml_value cdr; }} ml_cons;\n");
    let _ = writeln!(
        w,
        "typedef struct ml_ctx {{\n  int32_t status;\n  int32_t reserved;\n  int64_t depth;\n  int64_t max_depth;\n  void *host;\n}} ml_ctx;\n"
    );
    let _ = writeln!(w, "#define ML_TAG(v) ((v) & ML_TAG_MASK)");
    let _ = writeln!(w, "#define ML_CONSP(v) (ML_TAG (v) == ML_TAG_CONS)");
    let _ = writeln!(w, "#define ML_FIXNUMP(v) (ML_TAG (v) == ML_TAG_FIXNUM)");
    let _ = writeln!(w, "#define ML_XCONS(v) ((ml_cons *) (uintptr_t) ((v) & ~ML_TAG_MASK))");
    let _ = writeln!(w, "#define ML_XFIXNUM(v) ((int64_t) (v) >> ML_TAG_BITS)");
    let _ = writeln!(w, "#define ML_MAKE_FIXNUM(n) ((((ml_value) (n)) << ML_TAG_BITS) | ML_TAG_FIXNUM)\n");
    let _ = writeln!(
        w,
        "#define ML_ENTER(ctx) do {{ if ((ctx)->depth >= (ctx)->max_depth) {{ (ctx)->status = ML_STATUS_NESTING; return ML_NIL; }} (ctx)->depth++; }} while (0)"
    );
    let _ = writeln!(w, "#define ML_RETURN(ctx, x) do {{ ml_value ml_r_ = (x); (ctx)->depth--; return ml_r_; }} while (0)");
    let _ = writeln!(w, "#define ML_CHECK(ctx) do {{ if (__builtin_expect ((ctx)->status != 0, 0)) goto ml_fail; }} while (0)\n");
    let _ = writeln!(w, "struct ml_freloc {{");
    for s in registry() {
        let _ = writeln!(w, "  {};", entry_type(s, &entry_name(s.name)));
    }
    let _ = writeln!(w, "}};\n");
    let _ = writeln!(w, "#endif");
    h
}

pub fn header() -> &'static str {
    static HEADER: OnceLock<String> = OnceLock::new();
    HEADER.get_or_init(build_header)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_reference_spelling() {
        assert_eq!(entry_name("symbol-value"), "R73796d626f6c2d76616c7565_symbol_value");
        assert_eq!(entry_name("+"), "R2b_");
        assert_eq!(function_symbol("foo"), "F666f6f_foo");
    }

    #[test]
    fn header_lists_every_primitive_in_order() {
        let h = header();
        let mut last = 0;
        for s in registry() {
            let pos = h.find(&format!("(*{})", entry_name(s.name))).unwrap();
            assert!(pos > last);
            last = pos;
        }
        assert!(h.contains("ml_value (*R2b_) (ml_ctx *, ptrdiff_t, ml_value *)"));
        assert!(h.contains("ml_value (*R636172_car) (ml_ctx *, ml_value)"));
    }

    #[test]
    fn fixed_primitives_have_exact_arity() {
        for s in registry() {
            if s.style() == CallStyle::Fixed {
                assert_eq!(Some(s.min_args), s.max_args, "{}", s.name);
            }
        }
    }
}
