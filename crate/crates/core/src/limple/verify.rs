use std::collections::{BTreeSet, HashMap, HashSet};

use super::{Insn, LFunc};

/// Checks the structural rules of a function. Returns every violation
/// found; an empty list means the function is well formed.
pub fn verify(f: &LFunc) -> Vec<String> {
    let mut out = Vec::new();
    if !f.blocks.contains_key(&f.entry) {
        out.push(format!("entry block {} missing", f.entry));
        return out;
    }
    let nvars = f.vars.len();
    let preds = f.predecessors();

    for (b, block) in &f.blocks {
        let terminators = block.insns.iter().filter(|i| i.is_terminator()).count();
        match terminators {
            0 => out.push(format!("{b}: missing terminator")),
            1 if !block.insns.last().is_some_and(Insn::is_terminator) => {
                out.push(format!("{b}: terminator is not the last instruction"))
            }
            1 => {}
            _ => out.push(format!("{b}: multiple terminators")),
        }
        for s in block.successors() {
            if !f.blocks.contains_key(&s) {
                out.push(format!("{b}: jump to unknown block {s}"));
            }
        }
        if let Some(Insn::CondJump { then_bb, else_bb, .. }) = block.terminator() {
            if then_bb == else_bb {
                out.push(format!("{b}: cond-jump with identical targets"));
            }
        }
        let mut seen_non_phi = false;
        for insn in &block.insns {
            if let Insn::Phi { srcs, .. } = insn {
                if !f.ssa_form {
                    out.push(format!("{b}: phi outside SSA form"));
                }
                if seen_non_phi {
                    out.push(format!("{b}: phi after non-phi instruction"));
                }
                let from: BTreeSet<_> = srcs.iter().map(|(p, _)| *p).collect();
                let expected: BTreeSet<_> = preds[b].iter().copied().collect();
                if srcs.len() != preds[b].len() || from != expected {
                    out.push(format!(
                        "{b}: phi has {} sources for {} in-edges",
                        srcs.len(),
                        preds[b].len()
                    ));
                }
            } else if !matches!(insn, Insn::Comment(_)) {
                seen_non_phi = true;
            }
            for v in insn.uses().into_iter().chain(insn.def()) {
                if v.index() >= nvars {
                    out.push(format!("{b}: operand {v:?} out of range"));
                }
            }
            if let Some(d) = insn.def() {
                if d.index() < nvars && f.var(d).is_immediate() {
                    out.push(format!("{b}: assignment to immediate operand {d:?}"));
                }
            }
        }
    }

    if !preds[&f.entry].is_empty() {
        out.push(format!("entry block {} has in-edges", f.entry));
    }
    let reachable: HashSet<_> = f.rpo().into_iter().collect();
    for b in f.blocks.keys() {
        if !reachable.contains(b) {
            out.push(format!("{b}: unreachable"));
        }
    }

    if f.ssa_form && out.is_empty() {
        check_ssa(f, &mut out);
    }
    out
}

fn check_ssa(f: &LFunc, out: &mut Vec<String>) {
    let mut defined: HashMap<usize, String> = HashMap::new();
    for p in &f.params {
        defined.insert(p.index(), "parameter".into());
    }
    let mut ids = HashMap::new();
    for (b, insn) in f.insns() {
        let Some(d) = insn.def() else { continue };
        if let Some(prev) = defined.insert(d.index(), b.to_string()) {
            out.push(format!("{b}: {d:?} assigned more than once (also in {prev})"));
        }
    }
    for (index, _) in defined.iter() {
        let m = &f.vars[*index];
        match m.id {
            None => out.push(format!("Var({index}) assigned without an SSA id")),
            Some(id) => {
                if let Some(other) = ids.insert(id, *index) {
                    out.push(format!("SSA id {id} shared by Var({other}) and Var({index})"));
                }
            }
        }
    }
    for (b, insn) in f.insns() {
        for v in insn.uses() {
            if !f.var(v).is_immediate() && !defined.contains_key(&v.index()) {
                out.push(format!("{b}: {v:?} used but never assigned"));
            }
        }
    }
}
