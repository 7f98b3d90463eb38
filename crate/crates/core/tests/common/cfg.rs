//! Random control-flow graphs and a brute-force dominance oracle.

use std::collections::{BTreeMap, BTreeSet};

use minilisp::limple::{BlockId, Insn, LFunc, MVar, Var};
use minilisp::{Datum, Symbol};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const SLOTS: u32 = 4;

/// A function over `SLOTS` stack slots with 1 to 10 blocks. Slot 0 is the
/// parameter. Blocks may be unreachable; the entry has no in-edges.
pub fn random_cfg(seed: u64) -> LFunc {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut f = LFunc::new(Symbol::intern("g"), 1, SLOTS as usize);
    let slots: Vec<Var> = (0..SLOTS).map(|s| f.add_var(MVar::slot(s))).collect();
    f.params = vec![slots[0]];
    let nil = f.immediate(Datum::NIL);
    let n = rng.gen_range(1..=10u32);
    let ids: Vec<BlockId> = (0..n).map(|_| f.fresh_block()).collect();
    for b in &ids {
        let mut insns = Vec::new();
        for _ in 0..rng.gen_range(0..3) {
            let dst = slots[rng.gen_range(0..SLOTS as usize)];
            insns.push(Insn::SetImm { dst, imm: Datum::Fixnum(rng.gen_range(0..5)) });
        }
        let pick = |rng: &mut StdRng| BlockId(rng.gen_range(1..n));
        let roll = rng.gen_range(0..100);
        let v = slots[rng.gen_range(0..SLOTS as usize)];
        let term = if n > 2 && roll < 45 {
            let then_bb = pick(&mut rng);
            let mut else_bb = pick(&mut rng);
            while else_bb == then_bb {
                else_bb = pick(&mut rng);
            }
            Insn::CondJump { a: v, b: nil, then_bb, else_bb }
        } else if n > 1 && roll < 80 {
            Insn::Jump(pick(&mut rng))
        } else {
            Insn::Return(v)
        };
        insns.push(term);
        f.block_mut(*b).insns = insns;
    }
    f
}

/// Dominance computed from the definition: `d` dominates `n` when `n`
/// cannot be reached from the entry once `d` is deleted.
pub struct BruteDom {
    pub entry: BlockId,
    pub reachable: BTreeSet<BlockId>,
    pub preds: BTreeMap<BlockId, Vec<BlockId>>,
    /// `without[d]`: blocks reachable when `d` is deleted.
    without: BTreeMap<BlockId, BTreeSet<BlockId>>,
}

fn reach(f: &LFunc, deleted: Option<BlockId>) -> BTreeSet<BlockId> {
    let mut seen = BTreeSet::new();
    if Some(f.entry) == deleted {
        return seen;
    }
    let mut work = vec![f.entry];
    seen.insert(f.entry);
    while let Some(b) = work.pop() {
        for s in f.block(b).successors() {
            if Some(s) != deleted && seen.insert(s) {
                work.push(s);
            }
        }
    }
    seen
}

impl BruteDom {
    pub fn new(f: &LFunc) -> BruteDom {
        let reachable = reach(f, None);
        let mut preds: BTreeMap<BlockId, Vec<BlockId>> = reachable.iter().map(|b| (*b, vec![])).collect();
        for b in &reachable {
            for s in f.block(*b).successors() {
                preds.get_mut(&s).unwrap().push(*b);
            }
        }
        let without = reachable.iter().map(|d| (*d, reach(f, Some(*d)))).collect();
        BruteDom { entry: f.entry, reachable, preds, without }
    }

    pub fn dominates(&self, d: BlockId, n: BlockId) -> bool {
        d == n || (self.reachable.contains(&n) && !self.without[&d].contains(&n))
    }

    pub fn idom(&self) -> BTreeMap<BlockId, BlockId> {
        let mut out = BTreeMap::new();
        for n in &self.reachable {
            if *n == self.entry {
                continue;
            }
            let strict: Vec<BlockId> =
                self.reachable.iter().copied().filter(|d| d != n && self.dominates(*d, *n)).collect();
            // The closest strict dominator is dominated by all the others.
            let i = strict.iter().copied().find(|c| strict.iter().all(|d| self.dominates(*d, *c))).unwrap();
            out.insert(*n, i);
        }
        out
    }

    /// Dominance frontier straight from its definition.
    pub fn frontier(&self, x: BlockId) -> BTreeSet<BlockId> {
        self.reachable
            .iter()
            .copied()
            .filter(|y| {
                let strictly = x != *y && self.dominates(x, *y);
                !strictly && self.preds[y].iter().any(|p| self.dominates(x, *p))
            })
            .collect()
    }

    pub fn iterated_frontier(&self, set: &BTreeSet<BlockId>) -> BTreeSet<BlockId> {
        let mut out: BTreeSet<BlockId> = BTreeSet::new();
        loop {
            let mut next = out.clone();
            for x in set.iter().chain(out.iter()) {
                next.extend(self.frontier(*x));
            }
            if next == out {
                return out;
            }
            out = next;
        }
    }

    /// Expected phi count per block for minimal SSA over the slots of `f`.
    pub fn phi_counts(&self, f: &LFunc) -> BTreeMap<BlockId, usize> {
        let mut sites: BTreeMap<u32, BTreeSet<BlockId>> = BTreeMap::new();
        for p in &f.params {
            sites.entry(f.var(*p).slot.unwrap()).or_default().insert(f.entry);
        }
        for b in &self.reachable {
            for i in &f.block(*b).insns {
                if let Some(d) = i.def() {
                    sites.entry(f.var(d).slot.unwrap()).or_default().insert(*b);
                }
            }
        }
        let mut counts: BTreeMap<BlockId, usize> = self.reachable.iter().map(|b| (*b, 0)).collect();
        for s in sites.values() {
            for b in self.iterated_frontier(s) {
                *counts.get_mut(&b).unwrap() += 1;
            }
        }
        counts
    }
}
