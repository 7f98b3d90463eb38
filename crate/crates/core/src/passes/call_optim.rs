//! Replaces trampoline calls with direct calls.

use std::collections::HashMap;

use crate::limple::{Insn, LFunc};
use crate::object::prims;
use crate::object::{Datum, Symbol};

/// Rewrites `funcall` of a constant callee into `direct-call`. Primitives
/// are always eligible; functions of the unit (`unit`, name to arity) only
/// when `intra` is set. Returns the number of rewritten calls.
pub fn call_optim(f: &mut LFunc, unit: &HashMap<Symbol, usize>, intra: bool) -> usize {
    let funcall = Symbol::intern("funcall");
    let mut count = 0;
    let ids: Vec<_> = f.blocks.keys().copied().collect();
    for b in ids {
        for i in 0..f.block(b).insns.len() {
            let Insn::Call { dst, callee, args } = &f.block(b).insns[i] else { continue };
            if *callee != funcall || args.is_empty() {
                continue;
            }
            let Some(target) = f.var(args[0]).known().and_then(Datum::as_symbol) else { continue };
            let n = args.len() - 1;
            let eligible = match unit.get(&target) {
                Some(arity) => intra && *arity == n,
                None => prims::lookup(target).is_some_and(|id| prims::subr(id).accepts(n)),
            };
            if eligible {
                let insn = Insn::DirectCall { dst: *dst, callee: target, args: args[1..].to_vec() };
                f.block_mut(b).insns[i] = insn;
                count += 1;
            }
        }
    }
    count
}
