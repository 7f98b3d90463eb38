use std::fmt::Write;

use super::{Alloc, Insn, LFunc, Layout, Var};
use crate::object::printer::{write_datum, write_symbol};

pub fn print_mvar(f: &LFunc, v: Var) -> String {
    let m = f.var(v);
    let mut out = String::from("#s(mvar ");
    let opt = |x: Option<u32>| x.map_or("nil".to_string(), |n| n.to_string());
    let _ = write!(out, "{} {}", opt(m.id), opt(m.slot));
    if m.const_vld {
        out.push_str(" :const ");
        let _ = write_datum(&mut out, &m.constant);
    }
    if let Some(ty) = m.ty {
        let _ = write!(out, " :type {}", ty.name());
    }
    match m.alloc {
        Alloc::Unassigned => {}
        Alloc::FrameSlot(n) => {
            let _ = write!(out, " :alloc (frame {n})");
        }
        Alloc::Auto(n) => {
            let _ = write!(out, " :alloc (auto {n})");
        }
        Alloc::CallArray { site, pos } => {
            let _ = write!(out, " :alloc (call-array {site} {pos})");
        }
    }
    out.push(')');
    out
}

fn call_text(f: &LFunc, op: &str, dst: &Option<Var>, callee: crate::object::Symbol, args: &[Var]) -> String {
    let mut out = format!("({op} ");
    match dst {
        Some(d) => out.push_str(&print_mvar(f, *d)),
        None => out.push_str("nil"),
    }
    out.push(' ');
    let _ = write_symbol(&mut out, callee);
    for a in args {
        out.push(' ');
        out.push_str(&print_mvar(f, *a));
    }
    out.push(')');
    out
}

pub fn print_insn(f: &LFunc, insn: &Insn) -> String {
    let mv = |v: &Var| print_mvar(f, *v);
    match insn {
        Insn::Set { dst, src } => format!("(set {} {})", mv(dst), mv(src)),
        Insn::SetImm { dst, imm } => {
            let mut out = format!("(setimm {} ", mv(dst));
            let _ = write_datum(&mut out, imm);
            out.push(')');
            out
        }
        Insn::Jump(b) => format!("(jump {b})"),
        Insn::CondJump { a, b, then_bb, else_bb } => {
            format!("(cond-jump {} {} {then_bb} {else_bb})", mv(a), mv(b))
        }
        Insn::Call { dst, callee, args } => call_text(f, "call", dst, *callee, args),
        Insn::CallRef { dst, callee, args, .. } => call_text(f, "callref", dst, *callee, args),
        Insn::DirectCall { dst, callee, args } => call_text(f, "direct-call", dst, *callee, args),
        Insn::Comment(s) => {
            let mut out = String::from("(comment ");
            let _ = write_datum(&mut out, &crate::object::Datum::Str(s.clone()));
            out.push(')');
            out
        }
        Insn::Return(v) => format!("(return {})", mv(v)),
        Insn::Phi { dst, srcs } => {
            let mut out = format!("(phi {}", mv(dst));
            for (b, v) in srcs {
                let _ = write!(out, " ({b} {})", mv(v));
            }
            out.push(')');
            out
        }
        Insn::Assume { var, ty } => format!("(assume {} {})", mv(var), ty.name()),
    }
}

/// Renders a function as one sexp per instruction under block headers,
/// blocks in reverse postorder.
pub fn print_limple(f: &LFunc) -> String {
    let mut out = String::new();
    let _ = write!(out, ";; function ");
    let _ = write_symbol(&mut out, f.name);
    let _ = writeln!(
        out,
        " (args {}) (frame-size {}) (speed {}) (ssa {})",
        f.arg_count,
        f.frame_size,
        f.speed,
        if f.ssa_form { "t" } else { "nil" }
    );
    if let Some(frame) = &f.frame {
        let layout = match frame.layout {
            Layout::Basic => "basic",
            Layout::Advanced => "advanced",
        };
        let _ = writeln!(
            out,
            ";; layout {layout} (frame {}) (autos {}) (call-arrays {:?})",
            frame.frame_slots, frame.autos, frame.call_arrays
        );
    }
    let mut order = f.rpo();
    for b in f.blocks.keys() {
        if !order.contains(b) {
            order.push(*b);
        }
    }
    for b in order {
        let _ = writeln!(out, "{b}:");
        for insn in &f.block(b).insns {
            if matches!(insn, Insn::Comment(_)) && !f.comments_kept {
                continue;
            }
            let _ = writeln!(out, "  {}", print_insn(f, insn));
        }
    }
    out
}
