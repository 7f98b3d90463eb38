//! Minimal SSA construction: phis at iterated dominance frontiers, then
//! renaming along the dominator tree with one stack per stack slot.
//!
//! Every version of a slot keeps that slot number, so a function stays
//! executable with one storage location per slot and phis as no-ops. The
//! passes that follow never move a definition past a use, which keeps
//! that property.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::dom::{compute_dominators, prune_unreachable, DomInfo};
use crate::limple::{BlockId, Insn, LFunc, MVar, Var};
use crate::object::Datum;

struct Renamer<'a> {
    old: &'a LFunc,
    vars: Vec<MVar>,
    imm_map: HashMap<Var, Var>,
    stacks: BTreeMap<u32, Vec<Var>>,
    lazy_nil: BTreeMap<u32, Var>,
    next_id: u32,
    /// Slots needing a phi, per block, in phi order.
    phi_slots: BTreeMap<BlockId, Vec<u32>>,
}

impl Renamer<'_> {
    fn new_def(&mut self, slot: u32) -> Var {
        let mut m = MVar::slot(slot);
        m.id = Some(self.next_id);
        self.next_id += 1;
        self.vars.push(m);
        let v = Var(self.vars.len() as u32 - 1);
        self.stacks.entry(slot).or_default().push(v);
        v
    }

    fn use_of(&mut self, v: Var) -> Var {
        let m = self.old.var(v);
        match m.slot {
            None => *self.imm_map.entry(v).or_insert_with(|| {
                self.vars.push(m.clone());
                Var(self.vars.len() as u32 - 1)
            }),
            Some(slot) => {
                if let Some(top) = self.stacks.get(&slot).and_then(|s| s.last()) {
                    return *top;
                }
                lazy_for(self, slot)
            }
        }
    }
}

/// Slots defined in each block (parameters count as entry definitions).
fn def_sites(f: &LFunc) -> BTreeMap<u32, BTreeSet<BlockId>> {
    let mut sites: BTreeMap<u32, BTreeSet<BlockId>> = BTreeMap::new();
    for p in &f.params {
        if let Some(s) = f.var(*p).slot {
            sites.entry(s).or_default().insert(f.entry);
        }
    }
    for (b, insn) in f.insns() {
        if let Some(d) = insn.def() {
            if let Some(s) = f.var(d).slot {
                sites.entry(s).or_default().insert(b);
            }
        }
    }
    sites
}

/// Iterated dominance frontier of a set of blocks.
pub fn iterated_frontier(dom: &DomInfo, blocks: &BTreeSet<BlockId>) -> BTreeSet<BlockId> {
    let mut out = BTreeSet::new();
    let mut work: Vec<BlockId> = blocks.iter().copied().collect();
    let mut queued: BTreeSet<BlockId> = blocks.clone();
    while let Some(b) = work.pop() {
        for y in dom.frontier.get(&b).into_iter().flatten() {
            if out.insert(*y) && queued.insert(*y) {
                work.push(*y);
            }
        }
    }
    out
}

/// Returns `f` in SSA form. Input must not be in SSA form; operands are
/// identified by their slot.
pub fn ssa_convert(f: &LFunc) -> LFunc {
    let mut f = f.clone();
    prune_unreachable(&mut f);
    let dom = compute_dominators(&f);

    // Phi placement.
    let mut phi_slots: BTreeMap<BlockId, Vec<u32>> = BTreeMap::new();
    for (slot, sites) in def_sites(&f) {
        for b in iterated_frontier(&dom, &sites) {
            phi_slots.entry(b).or_default().push(slot);
        }
    }

    let mut r = Renamer {
        old: &f,
        vars: Vec::new(),
        imm_map: HashMap::new(),
        stacks: BTreeMap::new(),
        lazy_nil: BTreeMap::new(),
        next_id: 0,
        phi_slots,
    };
    let params: Vec<Var> = f.params.iter().map(|p| r.new_def(f.var(*p).slot.expect("parameter slot"))).collect();

    let mut new_blocks: BTreeMap<BlockId, Vec<Insn>> = BTreeMap::new();
    let mut phi_srcs: BTreeMap<BlockId, Vec<Vec<(BlockId, Var)>>> = BTreeMap::new();
    let children = dom.children();
    rename(&mut r, &f, f.entry, &children, &mut new_blocks, &mut phi_srcs);

    let lazy: Vec<(u32, Var)> = r.lazy_nil.iter().map(|(s, v)| (*s, *v)).collect();
    let vars = r.vars;

    let mut out = f.clone();
    out.vars = vars;
    out.params = params;
    out.ssa_form = true;
    for (b, insns) in new_blocks {
        out.block_mut(b).insns = insns;
    }
    // Fill phi sources collected while renaming predecessors.
    for (b, lists) in phi_srcs {
        let block = out.block_mut(b);
        for (i, srcs) in lists.into_iter().enumerate() {
            if let Insn::Phi { srcs: slot_srcs, .. } = &mut block.insns[i] {
                *slot_srcs = srcs;
                slot_srcs.sort_by_key(|(p, _)| *p);
            }
        }
    }
    if !lazy.is_empty() {
        let entry = out.entry;
        let at = out.block(entry).insns.iter().take_while(|i| matches!(i, Insn::Comment(_))).count();
        let block = out.block_mut(entry);
        for (k, (_, v)) in lazy.into_iter().enumerate() {
            block.insns.insert(at + k, Insn::SetImm { dst: v, imm: Datum::NIL });
        }
    }
    out
}

fn rename(
    r: &mut Renamer,
    f: &LFunc,
    b: BlockId,
    children: &BTreeMap<BlockId, Vec<BlockId>>,
    new_blocks: &mut BTreeMap<BlockId, Vec<Insn>>,
    phi_srcs: &mut BTreeMap<BlockId, Vec<Vec<(BlockId, Var)>>>,
) {
    let mut pushed: Vec<u32> = Vec::new();
    let mut insns = Vec::new();
    let slots = r.phi_slots.get(&b).cloned().unwrap_or_default();
    for slot in &slots {
        let dst = r.new_def(*slot);
        pushed.push(*slot);
        insns.push(Insn::Phi { dst, srcs: Vec::new() });
    }
    for insn in &f.block(b).insns {
        if matches!(insn, Insn::Phi { .. }) {
            continue;
        }
        let mut insn = insn.clone();
        insn.for_each_use_mut(|v| *v = r.use_of(*v));
        if let Some(d) = insn.def_mut() {
            let slot = f.var(*d).slot.expect("assignment to a slot");
            *d = r.new_def(slot);
            pushed.push(slot);
        }
        insns.push(insn);
    }
    new_blocks.insert(b, insns);

    for s in f.successors(b) {
        let Some(slots) = r.phi_slots.get(&s).cloned() else { continue };
        let entry = phi_srcs.entry(s).or_insert_with(|| vec![Vec::new(); slots.len()]);
        for (i, slot) in slots.iter().enumerate() {
            let v = match r.stacks.get(slot).and_then(|st| st.last()) {
                Some(v) => *v,
                None => lazy_for(r, *slot),
            };
            entry[i].push((b, v));
        }
    }

    for c in &children[&b] {
        rename(r, f, *c, children, new_blocks, phi_srcs);
    }
    for slot in pushed {
        r.stacks.get_mut(&slot).unwrap().pop();
    }
}

fn lazy_for(r: &mut Renamer, slot: u32) -> Var {
    if let Some(v) = r.lazy_nil.get(&slot) {
        return *v;
    }
    let mut m = MVar::slot(slot);
    m.id = Some(r.next_id);
    r.next_id += 1;
    r.vars.push(m);
    let v = Var(r.vars.len() as u32 - 1);
    r.lazy_nil.insert(slot, v);
    v
}

/// Leaves SSA form: every operand goes back to its slot's canonical m-var
/// and phis are dropped.
pub fn strip_ssa(f: &LFunc) -> LFunc {
    let max_slot = f.vars.iter().filter_map(|m| m.slot).max().map_or(0, |s| s + 1);
    let mut vars: Vec<MVar> = (0..max_slot).map(MVar::slot).collect();
    let mut imm_map: HashMap<Var, Var> = HashMap::new();
    let mut map = |v: Var, vars: &mut Vec<MVar>| -> Var {
        let m = f.var(v);
        match m.slot {
            Some(s) => Var(s),
            None => *imm_map.entry(v).or_insert_with(|| {
                vars.push(m.clone());
                Var(vars.len() as u32 - 1)
            }),
        }
    };
    let mut out = f.clone();
    for block in out.blocks.values_mut() {
        block.insns.retain(|i| !matches!(i, Insn::Phi { .. }));
        for insn in &mut block.insns {
            insn.for_each_use_mut(|v| *v = map(*v, &mut vars));
            if let Some(d) = insn.def_mut() {
                *d = map(*d, &mut vars);
            }
        }
    }
    out.params = f.params.iter().map(|p| map(*p, &mut vars)).collect();
    out.vars = vars;
    out.ssa_form = false;
    out
}
