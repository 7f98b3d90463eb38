//! Tail recursion elimination: a self call whose result is returned at
//! once becomes argument rebinding and a jump back to the function head.

use crate::limple::{Insn, LFunc, MVar, Var};

use super::ssa::{ssa_convert, strip_ssa};

fn next_real(insns: &[Insn], from: usize) -> Option<&Insn> {
    insns[from..].iter().find(|i| !matches!(i, Insn::Comment(_)))
}

/// Returns the rewritten function in SSA form, or `None` when `f` has no
/// self tail call.
pub fn tre(f: &LFunc) -> Option<LFunc> {
    let mut g = strip_ssa(f);
    let mut sites = Vec::new();
    for (b, block) in &g.blocks {
        for (i, insn) in block.insns.iter().enumerate() {
            let Insn::DirectCall { dst: Some(d), callee, args } = insn else { continue };
            if *callee != g.name || args.len() != g.arg_count {
                continue;
            }
            if matches!(next_real(&block.insns, i + 1), Some(Insn::Return(r)) if r == d) {
                sites.push((*b, i));
            }
        }
    }
    if sites.is_empty() {
        return None;
    }

    let header = g.entry;
    let params = g.params.clone();
    for (b, i) in sites {
        let Insn::DirectCall { args, .. } = g.block(b).insns[i].clone() else { unreachable!() };
        let mut moves = Vec::new();
        let mut sources: Vec<Var> = args.clone();
        // Arguments read from a parameter slot that is itself reassigned
        // go through a temporary first.
        for (k, a) in args.iter().enumerate() {
            let slot = g.var(*a).slot;
            let clobbered = params.iter().enumerate().any(|(j, p)| j != k && g.var(*p).slot == slot && slot.is_some());
            if clobbered {
                let tmp_slot = g.frame_size as u32;
                g.frame_size += 1;
                let tmp = g.add_var(MVar::slot(tmp_slot));
                moves.push(Insn::Set { dst: tmp, src: *a });
                sources[k] = tmp;
            }
        }
        for (p, src) in params.iter().zip(&sources) {
            if p != src {
                moves.push(Insn::Set { dst: *p, src: *src });
            }
        }
        moves.push(Insn::Jump(header));
        let block = g.block_mut(b);
        block.insns.truncate(i);
        block.insns.extend(moves);
    }

    let entry = g.fresh_block();
    g.block_mut(entry).insns.push(Insn::Jump(header));
    g.entry = entry;
    Some(ssa_convert(&g))
}
