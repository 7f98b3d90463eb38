//! Removes assignments whose destination is never read.

use crate::limple::{Insn, LFunc};

/// Deletes consumed `assume`s, then unused `set`/`setimm`/`phi` to a
/// fixpoint. Calls are kept; an unused call result is dropped. Returns the
/// number of removed instructions.
pub fn dead_code(f: &mut LFunc) -> usize {
    let mut removed = 0;
    for block in f.blocks.values_mut() {
        let before = block.insns.len();
        block.insns.retain(|i| !matches!(i, Insn::Assume { .. }));
        removed += before - block.insns.len();
    }
    loop {
        let mut counts = vec![0usize; f.vars.len()];
        for (_, insn) in f.insns() {
            let def = insn.def();
            for v in insn.uses() {
                // A phi reading its own result does not keep it alive.
                if matches!(insn, Insn::Phi { .. }) && Some(v) == def {
                    continue;
                }
                counts[v.index()] += 1;
            }
        }
        let params = f.params.clone();
        let mut changed = false;
        for block in f.blocks.values_mut() {
            let before = block.insns.len();
            block.insns.retain(|insn| match insn {
                Insn::Set { dst, .. } | Insn::SetImm { dst, .. } | Insn::Phi { dst, .. } => {
                    counts[dst.index()] > 0 || params.contains(dst)
                }
                _ => true,
            });
            if block.insns.len() != before {
                removed += before - block.insns.len();
                changed = true;
            }
            for insn in &mut block.insns {
                if let Insn::Call { dst, .. } | Insn::CallRef { dst, .. } | Insn::DirectCall { dst, .. } = insn {
                    if dst.is_some_and(|d| counts[d.index()] == 0) {
                        *dst = None;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return removed;
        }
    }
}
