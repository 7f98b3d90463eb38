//! Forward data-flow propagation of constants and types over a flat
//! lattice (known value or unknown; known type or unknown).

use std::collections::HashMap;

use crate::limple::{type_of, Insn, LFunc, Var};
use crate::object::prims::{self, LispType};
use crate::object::{Datum, GlobalEnv, Symbol};

fn hint_type(sym: Symbol) -> Option<LispType> {
    match sym.name() {
        "comp-hint-fixnum" => Some(LispType::Fixnum),
        "comp-hint-cons" => Some(LispType::Cons),
        _ => None,
    }
}

/// The hinted operand and type if `insn` is a type-hint call.
fn as_hint(f: &LFunc, insn: &Insn) -> Option<(Option<Var>, Var, LispType)> {
    let (dst, callee, args) = match insn {
        Insn::Call { dst, callee, args } | Insn::DirectCall { dst, callee, args } => (*dst, *callee, args),
        _ => return None,
    };
    if let Some(ty) = hint_type(callee) {
        return (args.len() == 1).then(|| (dst, args[0], ty));
    }
    if callee.name() == "funcall" && args.len() == 2 {
        let ty = f.var(args[0]).known().and_then(Datum::as_symbol).and_then(hint_type)?;
        return Some((dst, args[1], ty));
    }
    None
}

/// Rewrites hint calls into a copy plus an `assume`. Only valid when hints
/// are trusted.
pub fn lower_hints(f: &mut LFunc) -> usize {
    let mut count = 0;
    let ids: Vec<_> = f.blocks.keys().copied().collect();
    for b in ids {
        let old = std::mem::take(&mut f.block_mut(b).insns);
        let mut out = Vec::with_capacity(old.len());
        for insn in old {
            match as_hint(f, &insn) {
                Some((dst, x, ty)) => {
                    count += 1;
                    if let Some(d) = dst {
                        out.push(Insn::Set { dst: d, src: x });
                        out.push(Insn::Assume { var: d, ty });
                    }
                }
                None => out.push(insn),
            }
        }
        f.block_mut(b).insns = out;
    }
    count
}

fn arithmetic(name: &str) -> bool {
    matches!(name, "+" | "-" | "*" | "/" | "1+" | "1-")
}

/// Evaluates a pure primitive on constant arguments. `None` when the call
/// signals or the operands make folding unsound.
fn fold(scratch: &mut GlobalEnv, callee: Symbol, args: &[Datum]) -> Option<Datum> {
    let id = prims::lookup(callee)?;
    let s = prims::subr(id);
    if !s.pure || !s.accepts(args.len()) || hint_type(callee).is_some() && args.len() != 1 {
        return None;
    }
    // Identity of boxed constants is not stable across executors.
    if s.name == "eq" && !args.iter().all(Datum::is_immediate) {
        return None;
    }
    let values: Vec<_> = args.iter().map(Datum::to_value).collect();
    let r = (s.func)(scratch, &values).ok()?;
    Datum::from_value(r).ok()
}

/// Statistics of one propagation run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PropagateStats {
    pub folded: usize,
    pub hints_lowered: usize,
    pub sweeps: usize,
}

/// Runs propagation to a fixpoint. At speed 3 hints are trusted: they
/// become `assume` instructions whose type is installed on the value.
pub fn forward_propagate(f: &mut LFunc, speed: u8) -> PropagateStats {
    let mut stats = PropagateStats::default();
    let trusted = speed >= 3;
    sweep(f, trusted, &mut stats);
    // Hint callees are often only known once constants have propagated.
    if trusted && lower_hints(f) > 0 {
        stats.hints_lowered = f.insns().filter(|(_, i)| matches!(i, Insn::Assume { .. })).count();
        sweep(f, trusted, &mut stats);
    }
    stats
}

fn sweep(f: &mut LFunc, trusted: bool, stats: &mut PropagateStats) {
    let mut assumes: HashMap<Var, LispType> = HashMap::new();
    if trusted {
        for (_, insn) in f.insns() {
            if let Insn::Assume { var, ty } = insn {
                assumes.insert(*var, *ty);
            }
        }
    }
    for m in f.vars.iter_mut().filter(|m| !m.is_immediate()) {
        m.const_vld = false;
        m.constant = Datum::NIL;
        m.ty = None;
    }
    let mut scratch = GlobalEnv::new();
    let order = f.rpo();
    let limit = f.vars.len() * 3 + 4;

    let mut sweeps = 0;
    loop {
        sweeps += 1;
        stats.sweeps += 1;
        let mut changed = false;
        for b in &order {
            for i in 0..f.block(*b).insns.len() {
                let insn = &f.block(*b).insns[i];
                let (dst, value, mut ty): (Var, Option<Datum>, Option<LispType>) = match insn {
                    Insn::SetImm { dst, imm } => (*dst, Some(imm.clone()), Some(type_of(imm))),
                    Insn::Set { dst, src } => {
                        let m = f.var(*src);
                        (*dst, m.known().cloned(), m.ty)
                    }
                    Insn::Phi { dst, srcs } => {
                        let first = srcs.first().map(|(_, v)| f.var(*v));
                        let value = first.and_then(|m| m.known()).filter(|c| {
                            srcs.iter().all(|(_, v)| f.var(*v).known() == Some(*c))
                        });
                        let ty = first.and_then(|m| m.ty).filter(|t| srcs.iter().all(|(_, v)| f.var(*v).ty == Some(*t)));
                        (*dst, value.cloned(), ty)
                    }
                    Insn::Call { dst: Some(dst), callee, args }
                    | Insn::DirectCall { dst: Some(dst), callee, args }
                    | Insn::CallRef { dst: Some(dst), callee, args, .. } => {
                        let Some(id) = prims::lookup(*callee) else { continue };
                        let s = prims::subr(id);
                        let known: Option<Vec<Datum>> = args.iter().map(|a| f.var(*a).known().cloned()).collect();
                        if let Some(known) = known.filter(|_| s.pure) {
                            if let Some(r) = fold(&mut scratch, *callee, &known) {
                                let dst = *dst;
                                f.block_mut(*b).insns[i] = Insn::SetImm { dst, imm: r };
                                stats.folded += 1;
                                changed = true;
                                continue;
                            }
                        }
                        let mut ty = s.ret_type;
                        if arithmetic(s.name) && args.iter().all(|a| f.var(*a).ty == Some(LispType::Fixnum)) {
                            ty = Some(LispType::Fixnum);
                        }
                        (*dst, None, ty)
                    }
                    _ => continue,
                };
                if let Some(t) = assumes.get(&dst) {
                    ty = Some(*t);
                }
                let m = f.var_mut(dst);
                let new_vld = value.is_some();
                if m.const_vld != new_vld || (new_vld && value.as_ref() != Some(&m.constant)) || m.ty != ty {
                    m.const_vld = new_vld;
                    m.constant = value.unwrap_or(Datum::NIL);
                    m.ty = ty;
                    changed = true;
                }
            }
        }
        if !changed || sweeps > limit {
            break;
        }
    }
}
