//! LIMPLE to C.
//!
//! Every block becomes a label and every m-var a C lvalue picked by frame
//! layout. Primitive calls go through `freloc_link_table`; constants other
//! than `nil` are read from `d_reloc`.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write;

use super::shim::{entry_name, function_symbol};
use crate::backend::{certain, inline_for, InlineOp};
use crate::limple::{Alloc, CompUnit, Insn, LFunc, Layout, Var};
use crate::object::prims::{self, CallStyle};
use crate::object::{print_datum, Datum, Symbol};
use crate::passes::SpeedConfig;

pub const HEADER_FILE: &str = "minilisp.h";
pub const TOP_LEVEL_SYMBOL: &str = "top_level_run";

#[derive(Debug, thiserror::Error)]
#[error("cannot emit {function}: {message}")]
pub struct EmitError {
    pub function: String,
    pub message: String,
}

const PRELUDE: &str = r#"static inline int
ml_fast_arith (ml_value *dst, int op, ml_value a, ml_value b)
{
  int64_t r;
  if (!ML_FIXNUMP (a) || !ML_FIXNUMP (b))
    return 0;
  switch (op)
    {
    case 0: r = ML_XFIXNUM (a) + ML_XFIXNUM (b); break;
    case 1: r = ML_XFIXNUM (a) - ML_XFIXNUM (b); break;
    case 2:
      if (__builtin_mul_overflow (ML_XFIXNUM (a), ML_XFIXNUM (b), &r))
        return 0;
      break;
    case 3: *dst = ML_XFIXNUM (a) < ML_XFIXNUM (b) ? ML_T : ML_NIL; return 1;
    case 4: *dst = ML_XFIXNUM (a) > ML_XFIXNUM (b) ? ML_T : ML_NIL; return 1;
    case 5: *dst = ML_XFIXNUM (a) <= ML_XFIXNUM (b) ? ML_T : ML_NIL; return 1;
    case 6: *dst = ML_XFIXNUM (a) >= ML_XFIXNUM (b) ? ML_T : ML_NIL; return 1;
    default: *dst = ML_XFIXNUM (a) == ML_XFIXNUM (b) ? ML_T : ML_NIL; return 1;
    }
  if (r > ML_MOST_POSITIVE_FIXNUM || r < ML_MOST_NEGATIVE_FIXNUM)
    return 0;
  *dst = ML_MAKE_FIXNUM (r);
  return 1;
}
"#;

fn inline_helpers() -> String {
    let car = entry_name("car");
    let cdr = entry_name("cdr");
    let setcar = entry_name("setcar");
    let setcdr = entry_name("setcdr");
    let add1 = entry_name("1+");
    let sub1 = entry_name("1-");
    let minus = entry_name("-");
    format!(
        r#"static inline ml_value
ml_car (ml_ctx *ctx, ml_value x, int cert)
{{
  if (cert || ML_CONSP (x))
    return ML_XCONS (x)->car;
  if (x == ML_NIL)
    return ML_NIL;
  return freloc_link_table->{car} (ctx, x);
}}

static inline ml_value
ml_cdr (ml_ctx *ctx, ml_value x, int cert)
{{
  if (cert || ML_CONSP (x))
    return ML_XCONS (x)->cdr;
  if (x == ML_NIL)
    return ML_NIL;
  return freloc_link_table->{cdr} (ctx, x);
}}

static inline ml_value
ml_setcar (ml_ctx *ctx, ml_value x, ml_value v, int cert)
{{
  if (cert || ML_CONSP (x))
    {{
      ML_XCONS (x)->car = v;
      return v;
    }}
  return freloc_link_table->{setcar} (ctx, x, v);
}}

static inline ml_value
ml_setcdr (ml_ctx *ctx, ml_value x, ml_value v, int cert)
{{
  if (cert || ML_CONSP (x))
    {{
      ML_XCONS (x)->cdr = v;
      return v;
    }}
  return freloc_link_table->{setcdr} (ctx, x, v);
}}

static inline ml_value
ml_add1 (ml_ctx *ctx, ml_value x, int cert)
{{
  if ((cert || ML_FIXNUMP (x)) && ML_XFIXNUM (x) < ML_MOST_POSITIVE_FIXNUM)
    return ML_MAKE_FIXNUM (ML_XFIXNUM (x) + 1);
  return freloc_link_table->{add1} (ctx, x);
}}

static inline ml_value
ml_sub1 (ml_ctx *ctx, ml_value x, int cert)
{{
  if ((cert || ML_FIXNUMP (x)) && ML_XFIXNUM (x) > ML_MOST_NEGATIVE_FIXNUM)
    return ML_MAKE_FIXNUM (ML_XFIXNUM (x) - 1);
  return freloc_link_table->{sub1} (ctx, x);
}}

static inline ml_value
ml_negate (ml_ctx *ctx, ml_value x, int cert)
{{
  if ((cert || ML_FIXNUMP (x)) && ML_XFIXNUM (x) > ML_MOST_NEGATIVE_FIXNUM)
    return ML_MAKE_FIXNUM (-ML_XFIXNUM (x));
  return freloc_link_table->{minus} (ctx, 1, &x);
}}
"#
    )
}

fn fast_op(name: &str) -> Option<u8> {
    Some(match name {
        "+" => 0,
        "-" => 1,
        "*" => 2,
        "<" => 3,
        ">" => 4,
        "<=" => 5,
        ">=" => 6,
        "=" => 7,
        _ => return None,
    })
}

/// Text safe inside a C block comment.
fn comment_text(s: &str) -> String {
    s.replace("*/", "* /").replace('\n', " ")
}

/// A C string literal with everything outside printable ASCII escaped.
fn c_string(s: &str) -> String {
    let mut out = String::from("\"");
    for b in s.bytes() {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'?' => out.push_str("\\?"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\{b:03o}");
            }
        }
    }
    out.push('"');
    out
}

struct FnEmitter<'a> {
    unit: &'a CompUnit,
    f: &'a LFunc,
    unit_fns: &'a HashSet<Symbol>,
    debug: bool,
    out: String,
}

impl FnEmitter<'_> {
    fn err(&self, message: impl Into<String>) -> EmitError {
        EmitError { function: self.f.name.name().to_string(), message: message.into() }
    }

    fn lvalue(&self, v: Var) -> Result<String, EmitError> {
        Ok(match self.f.var(v).alloc {
            Alloc::FrameSlot(s) => format!("local[{s}]"),
            Alloc::Auto(s) => format!("local{s}"),
            Alloc::CallArray { site, pos } => format!("arr_{}[{pos}]", site + 1),
            Alloc::Unassigned => return Err(self.err(format!("operand {v:?} has no storage"))),
        })
    }

    fn constant(&self, d: &Datum) -> Result<String, EmitError> {
        if d.is_nil() {
            return Ok("ML_NIL".into());
        }
        let i = self.unit.reloc_index(d).ok_or_else(|| self.err("constant missing from relocs"))?;
        Ok(format!("d_reloc[{i}]"))
    }

    fn rvalue(&mut self, v: Var) -> Result<String, EmitError> {
        let m = self.f.var(v);
        if m.is_immediate() {
            let d = m.constant.clone();
            self.note_const(&d);
            self.constant(&d)
        } else {
            self.lvalue(v)
        }
    }

    fn note_const(&mut self, d: &Datum) {
        if self.debug {
            let _ = writeln!(self.out, "  /* const lisp obj: {} */", comment_text(&print_datum(d)));
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push_str("  ");
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn assign(&self, dst: Option<Var>, expr: String) -> Result<String, EmitError> {
        Ok(match dst {
            Some(d) => format!("{} = {expr};", self.lvalue(d)?),
            None => format!("(void) {expr};"),
        })
    }

    fn call(&mut self, dst: Option<Var>, callee: Symbol, args: &[Var], site: Option<u32>) -> Result<(), EmitError> {
        if site.is_none() && self.unit_fns.contains(&callee) {
            let mut parts = vec!["ctx".to_string()];
            for a in args {
                parts.push(self.rvalue(*a)?);
            }
            if self.debug {
                let _ = writeln!(self.out, "  /* direct call: {} */", comment_text(callee.name()));
            }
            let s = self.assign(dst, format!("{} ({})", function_symbol(callee.name()), parts.join(", ")))?;
            self.line(s);
            self.line("ML_CHECK (ctx);");
            return Ok(());
        }
        let prim = prims::lookup(callee).ok_or_else(|| self.err(format!("unknown callee {callee}")))?;
        let s = prims::subr(prim);
        if let Some(p) = inline_for(callee, args.len()) {
            let cert = i32::from(certain(self.f, p, args));
            let a = self.rvalue(args[0])?;
            let (helper, rest) = match p.op {
                InlineOp::Car => ("ml_car", String::new()),
                InlineOp::Cdr => ("ml_cdr", String::new()),
                InlineOp::Setcar => ("ml_setcar", format!(", {}", self.rvalue(args[1])?)),
                InlineOp::Setcdr => ("ml_setcdr", format!(", {}", self.rvalue(args[1])?)),
                InlineOp::Add1 => ("ml_add1", String::new()),
                InlineOp::Sub1 => ("ml_sub1", String::new()),
                InlineOp::Negate => ("ml_negate", String::new()),
            };
            if self.debug {
                let _ = writeln!(self.out, "  /* inlined subr: {} */", comment_text(callee.name()));
            }
            let text = self.assign(dst, format!("{helper} (ctx, {a}{rest}, {cert})"))?;
            self.line(text);
            self.line("ML_CHECK (ctx);");
            return Ok(());
        }
        if callee.name() == "eq" {
            let a = self.rvalue(args[0])?;
            let b = self.rvalue(args[1])?;
            if self.debug {
                self.line("/* EQ */");
            }
            if dst.is_some() {
                let text = self.assign(dst, format!("{a} == {b} ? ML_T : ML_NIL"))?;
                self.line(text);
            }
            return Ok(());
        }
        let entry = format!("freloc_link_table->{}", entry_name(s.name));
        if s.style() == CallStyle::Fixed {
            let mut parts = vec!["ctx".to_string()];
            for a in args {
                parts.push(self.rvalue(*a)?);
            }
            if self.debug {
                let _ = writeln!(self.out, "  /* calling subr: {} */", comment_text(s.name));
            }
            let text = self.assign(dst, format!("{entry} ({})", parts.join(", ")))?;
            self.line(text);
            self.line("ML_CHECK (ctx);");
            return Ok(());
        }
        let site = site.ok_or_else(|| self.err(format!("spread call to {callee} without a call site")))?;
        let arr = format!("arr_{}", site + 1);
        for (pos, a) in args.iter().enumerate() {
            let target = format!("{arr}[{pos}]");
            let m = self.f.var(*a);
            if !m.is_immediate() && self.lvalue(*a)? == target {
                continue;
            }
            let src = self.rvalue(*a)?;
            self.line(format!("{target} = {src};"));
        }
        if self.debug {
            let _ = writeln!(self.out, "  /* calling subr: {} */", comment_text(s.name));
        }
        let call = format!("{entry} (ctx, {}, (&{arr}[0]))", args.len());
        let fast = fast_op(s.name).filter(|_| args.len() == 2 && self.f.speed >= 2);
        match (fast, dst) {
            (Some(op), Some(d)) => {
                let lv = self.lvalue(d)?;
                self.line(format!("if (!ml_fast_arith (&{lv}, {op}, {arr}[0], {arr}[1]))"));
                self.line("  {");
                self.line(format!("    {lv} = {call};"));
                self.line("    ML_CHECK (ctx);");
                self.line("  }");
            }
            _ => {
                let text = self.assign(dst, call)?;
                self.line(text);
                self.line("ML_CHECK (ctx);");
            }
        }
        Ok(())
    }

    fn insn(&mut self, insn: &Insn) -> Result<(), EmitError> {
        match insn {
            Insn::Comment(s) => {
                if self.debug {
                    self.line(format!("/* {} */", comment_text(s)));
                }
            }
            Insn::Assume { .. } => {}
            Insn::Phi { dst, srcs } => {
                let d = self.lvalue(*dst)?;
                for (_, s) in srcs {
                    if self.f.var(*s).is_immediate() || self.lvalue(*s)? != d {
                        return Err(self.err("phi operands do not share storage"));
                    }
                }
            }
            Insn::Set { dst, src } => {
                let d = self.lvalue(*dst)?;
                let s = self.rvalue(*src)?;
                if d != s {
                    self.line(format!("{d} = {s};"));
                }
            }
            Insn::SetImm { dst, imm } => {
                self.note_const(imm);
                let d = self.lvalue(*dst)?;
                let c = self.constant(imm)?;
                self.line(format!("{d} = {c};"));
            }
            Insn::Jump(b) => self.line(format!("goto {b};")),
            Insn::CondJump { a, b, then_bb, else_bb } => {
                let a = self.rvalue(*a)?;
                let b = self.rvalue(*b)?;
                if self.debug {
                    self.line("/* EQ */");
                }
                self.line(format!("if ({a} == {b}) goto {then_bb}; else goto {else_bb};"));
            }
            Insn::Return(v) => {
                let v = self.rvalue(*v)?;
                self.line(format!("ML_RETURN (ctx, {v});"));
            }
            Insn::Call { dst, callee, args } | Insn::DirectCall { dst, callee, args } => {
                self.call(*dst, *callee, args, None)?
            }
            Insn::CallRef { dst, callee, args, site } => self.call(*dst, *callee, args, Some(*site))?,
        }
        Ok(())
    }

    fn function(&mut self, symbol: &str, exported: bool) -> Result<(), EmitError> {
        let f = self.f;
        let frame = f.frame.as_ref().ok_or_else(|| self.err("no frame layout"))?;
        let params: Vec<String> = (0..f.arg_count).map(|i| format!(", ml_value par{i}")).collect();
        let _ = writeln!(
            self.out,
            "{}ml_value\n{symbol} (ml_ctx *ctx{})\n{{",
            if exported { "" } else { "static " },
            params.concat()
        );
        for (site, len) in frame.call_arrays.iter().enumerate() {
            let _ = writeln!(self.out, "  ml_value arr_{}[{}];", site + 1, (*len).max(1));
        }
        match frame.layout {
            Layout::Basic => {
                let _ = writeln!(self.out, "  ml_value local[{}];", frame.frame_slots.max(1));
            }
            Layout::Advanced => {
                let autos: BTreeSet<u32> = f
                    .vars
                    .iter()
                    .filter_map(|m| match m.alloc {
                        Alloc::Auto(s) => Some(s),
                        _ => None,
                    })
                    .collect();
                for s in autos {
                    let _ = writeln!(self.out, "  ml_value local{s};");
                }
            }
        }
        self.out.push_str("entry:\n");
        if self.debug && !f.comments_kept {
            self.line(format!("/* Lisp function: {} */", comment_text(f.name.name())));
        }
        self.line("ML_ENTER (ctx);");
        for (i, p) in f.params.iter().enumerate() {
            let lv = self.lvalue(*p)?;
            self.line(format!("{lv} = par{i};"));
        }
        self.line(format!("goto {};", f.entry));
        for b in f.rpo() {
            let _ = writeln!(self.out, "{b}:");
            for insn in &f.block(b).insns {
                self.insn(insn)?;
            }
        }
        self.out.push_str("ml_fail: __attribute__ ((unused));\n  ctx->depth--;\n  return ML_NIL;\n}\n\n");
        Ok(())
    }
}

fn signature(name: &str, arity: usize) -> String {
    let params: String = (0..arity).map(|_| ", ml_value").collect();
    format!("ml_value {name} (ml_ctx *{params});")
}

/// Renders a laid-out unit as a C translation unit. The output depends
/// only on the unit and `cfg.debug`.
pub fn emit_native_source(u: &CompUnit, cfg: &SpeedConfig) -> Result<String, EmitError> {
    let mut out = String::new();
    let _ = writeln!(out, "/* compilation unit: {} */", comment_text(&u.path));
    let _ = writeln!(out, "#include \"{HEADER_FILE}\"\n");
    let _ = writeln!(out, "const char ml_abi_hash[] = {};", c_string(&u.abi_hash));
    let _ = writeln!(out, "struct ml_freloc *freloc_link_table;");
    let _ = writeln!(out, "ml_value d_reloc[{}];", u.data_relocs.len().max(1));
    let _ = writeln!(out, "static const char data_reloc_text[] = {};\n", c_string(&u.constants_text()));
    let _ = writeln!(out, "const char *\ntext_data_reloc (void)\n{{\n  return data_reloc_text;\n}}\n");
    out.push_str(PRELUDE);
    out.push('\n');
    out.push_str(&inline_helpers());
    out.push('\n');
    for f in &u.functions {
        out.push_str(&signature(&function_symbol(f.name.name()), f.arg_count));
        out.push('\n');
    }
    out.push_str(&signature(TOP_LEVEL_SYMBOL, 0));
    out.push_str("\n\n");

    let unit_fns: HashSet<Symbol> = u.functions.iter().map(|f| f.name).collect();
    let debug = cfg.debug >= 1;
    for f in &u.functions {
        let mut e = FnEmitter { unit: u, f, unit_fns: &unit_fns, debug, out: String::new() };
        e.function(&function_symbol(f.name.name()), true)?;
        out.push_str(&e.out);
    }
    let mut e = FnEmitter { unit: u, f: &u.top_level, unit_fns: &unit_fns, debug, out: String::new() };
    e.function(TOP_LEVEL_SYMBOL, true)?;
    out.push_str(&e.out);
    Ok(out)
}
