//! Dominators (Cooper, Harvey and Kennedy's iterative scheme) and
//! dominance frontiers. Does not assume a reducible graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::limple::{BlockId, LFunc};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomInfo {
    pub entry: BlockId,
    /// Reachable blocks in reverse postorder.
    pub rpo: Vec<BlockId>,
    pub rpo_index: HashMap<BlockId, usize>,
    /// Immediate dominator of every reachable block except the entry.
    pub idom: BTreeMap<BlockId, BlockId>,
    pub frontier: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Blocks present in the function but not reachable from the entry.
    pub unreachable: Vec<BlockId>,
}

impl DomInfo {
    pub fn dominates(&self, a: BlockId, mut b: BlockId) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.idom.get(&b) {
                Some(p) => b = *p,
                None => return false,
            }
        }
    }

    /// Children in the dominator tree, each list in reverse postorder.
    pub fn children(&self) -> BTreeMap<BlockId, Vec<BlockId>> {
        let mut out: BTreeMap<BlockId, Vec<BlockId>> = self.rpo.iter().map(|b| (*b, Vec::new())).collect();
        for b in &self.rpo {
            if let Some(p) = self.idom.get(b) {
                out.get_mut(p).unwrap().push(*b);
            }
        }
        out
    }
}

pub fn compute_dominators(f: &LFunc) -> DomInfo {
    let rpo = f.rpo();
    let rpo_index: HashMap<BlockId, usize> = rpo.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let preds = f.predecessors();
    let entry = f.entry;

    let mut doms: Vec<Option<usize>> = vec![None; rpo.len()];
    if !rpo.is_empty() {
        doms[0] = Some(0);
    }
    let intersect = |doms: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while a > b {
                a = doms[a].unwrap();
            }
            while b > a {
                b = doms[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for i in 1..rpo.len() {
            let mut new_idom: Option<usize> = None;
            for p in &preds[&rpo[i]] {
                let Some(&pi) = rpo_index.get(p) else { continue };
                if doms[pi].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => pi,
                    Some(cur) => intersect(&doms, pi, cur),
                });
            }
            if new_idom.is_some() && doms[i] != new_idom {
                doms[i] = new_idom;
                changed = true;
            }
        }
    }

    let idom: BTreeMap<BlockId, BlockId> =
        (1..rpo.len()).map(|i| (rpo[i], rpo[doms[i].unwrap()])).collect();

    let mut frontier: BTreeMap<BlockId, BTreeSet<BlockId>> = rpo.iter().map(|b| (*b, BTreeSet::new())).collect();
    for b in &rpo {
        let ps: Vec<BlockId> = preds[b].iter().copied().filter(|p| rpo_index.contains_key(p)).collect();
        if ps.len() < 2 && !(b == &entry && !ps.is_empty()) {
            continue;
        }
        for p in ps {
            let mut runner = p;
            while Some(&runner) != idom.get(b) {
                frontier.get_mut(&runner).unwrap().insert(*b);
                match idom.get(&runner) {
                    Some(up) => runner = *up,
                    None => break,
                }
            }
        }
    }

    let unreachable = f.blocks.keys().copied().filter(|b| !rpo_index.contains_key(b)).collect();
    DomInfo { entry, rpo, rpo_index, idom, frontier, unreachable }
}

/// Deletes blocks unreachable from the entry, dropping phi sources that
/// came from them.
pub fn prune_unreachable(f: &mut LFunc) -> Vec<BlockId> {
    let reachable: BTreeSet<BlockId> = f.rpo().into_iter().collect();
    let dead: Vec<BlockId> = f.blocks.keys().copied().filter(|b| !reachable.contains(b)).collect();
    for b in &dead {
        f.blocks.remove(b);
    }
    if !dead.is_empty() {
        for block in f.blocks.values_mut() {
            for insn in &mut block.insns {
                if let crate::limple::Insn::Phi { srcs, .. } = insn {
                    srcs.retain(|(p, _)| reachable.contains(p));
                }
            }
        }
    }
    dead
}
