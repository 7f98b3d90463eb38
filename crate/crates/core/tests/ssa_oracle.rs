mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::cfg::{random_cfg, BruteDom};
use minilisp::limple::{verify, BlockId, Insn, LFunc, Var};
use minilisp::passes::{compute_dominators, iterated_frontier, ssa_convert};

const GRAPHS: u64 = 200;

#[test]
fn dominators_match_deletion_oracle() {
    for seed in 0..GRAPHS {
        let f = random_cfg(seed);
        let brute = BruteDom::new(&f);
        let dom = compute_dominators(&f);
        assert_eq!(dom.idom, brute.idom(), "seed {seed}");
        let reachable: BTreeSet<_> = dom.rpo.iter().copied().collect();
        assert_eq!(reachable, brute.reachable, "seed {seed}");
        for b in &brute.reachable {
            let got = dom.frontier.get(b).cloned().unwrap_or_default();
            assert_eq!(got, brute.frontier(*b), "seed {seed} frontier of {b}");
            for n in &brute.reachable {
                assert_eq!(dom.dominates(*b, *n), brute.dominates(*b, *n), "seed {seed}");
            }
        }
    }
}

#[test]
fn iterated_frontier_matches_fixpoint() {
    for seed in 0..GRAPHS {
        let f = random_cfg(seed);
        let brute = BruteDom::new(&f);
        let dom = compute_dominators(&f);
        let blocks: Vec<BlockId> = brute.reachable.iter().copied().collect();
        for mask in 1u32..(1 << blocks.len().min(5)) {
            let set: BTreeSet<BlockId> =
                blocks.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, b)| *b).collect();
            assert_eq!(iterated_frontier(&dom, &set), brute.iterated_frontier(&set), "seed {seed}");
        }
    }
}

fn def_sites(g: &LFunc) -> BTreeMap<Var, (BlockId, usize)> {
    let mut defs = BTreeMap::new();
    for p in &g.params {
        defs.insert(*p, (g.entry, 0));
    }
    for (b, block) in &g.blocks {
        for (i, insn) in block.insns.iter().enumerate() {
            if let Some(d) = insn.def() {
                assert!(defs.insert(d, (*b, i)).is_none(), "{d:?} assigned twice");
            }
        }
    }
    defs
}

#[test]
fn ssa_convert_is_minimal_and_strict() {
    let mut total_phis = 0;
    for seed in 0..GRAPHS {
        let f = random_cfg(seed);
        let brute = BruteDom::new(&f);
        let g = ssa_convert(&f);
        assert!(verify(&g).is_empty(), "seed {seed}: {:?}", verify(&g));
        let keys: BTreeSet<_> = g.blocks.keys().copied().collect();
        assert_eq!(keys, brute.reachable, "seed {seed}");

        let got: BTreeMap<BlockId, usize> = g
            .blocks
            .iter()
            .map(|(b, block)| (*b, block.insns.iter().filter(|i| matches!(i, Insn::Phi { .. })).count()))
            .collect();
        assert_eq!(got, brute.phi_counts(&f), "seed {seed}");
        total_phis += got.values().sum::<usize>();

        // Every use is dominated by its single definition.
        let defs = def_sites(&g);
        for (b, block) in &g.blocks {
            for (i, insn) in block.insns.iter().enumerate() {
                let reads: Vec<(BlockId, usize, Var)> = match insn {
                    Insn::Phi { srcs, .. } => srcs.iter().map(|(p, v)| (*p, usize::MAX, *v)).collect(),
                    _ => insn.uses().into_iter().map(|v| (*b, i, v)).collect(),
                };
                for (at, pos, v) in reads {
                    if g.var(v).is_immediate() {
                        continue;
                    }
                    let (db, di) = defs[&v];
                    let ok = if db == at { di < pos || g.params.contains(&v) } else { brute.dominates(db, at) };
                    assert!(ok, "seed {seed}: use of {v:?} in {at} not dominated by its definition");
                }
            }
        }
    }
    assert!(total_phis > 100, "generator produced only {total_phis} phis");
}

fn graph(edges: &[&[u32]]) -> LFunc {
    let mut f = LFunc::new(minilisp::Symbol::intern("g"), 0, 1);
    let v = f.add_var(minilisp::limple::MVar::slot(0));
    let nil = f.immediate(minilisp::Datum::NIL);
    for _ in edges {
        f.fresh_block();
    }
    for (b, succ) in edges.iter().enumerate() {
        let term = match succ {
            [] => Insn::Return(v),
            [s] => Insn::Jump(BlockId(*s)),
            [t, e] => Insn::CondJump { a: v, b: nil, then_bb: BlockId(*t), else_bb: BlockId(*e) },
            _ => unreachable!(),
        };
        f.block_mut(BlockId(b as u32)).insns = vec![Insn::SetImm { dst: v, imm: minilisp::Datum::Fixnum(b as i64) }, term];
    }
    f
}

fn idoms(f: &LFunc) -> Vec<(u32, u32)> {
    compute_dominators(f).idom.iter().map(|(b, d)| (b.0, d.0)).collect()
}

fn frontier(f: &LFunc, b: u32) -> Vec<u32> {
    compute_dominators(f).frontier.get(&BlockId(b)).into_iter().flatten().map(|b| b.0).collect()
}

#[test]
fn chain() {
    let f = graph(&[&[1], &[2], &[]]);
    assert_eq!(idoms(&f), [(1, 0), (2, 1)]);
    assert!((0..3).all(|b| frontier(&f, b).is_empty()));
}

#[test]
fn diamond() {
    let f = graph(&[&[1, 2], &[3], &[3], &[]]);
    assert_eq!(idoms(&f), [(1, 0), (2, 0), (3, 0)]);
    assert_eq!(frontier(&f, 1), [3]);
    assert_eq!(frontier(&f, 2), [3]);
    assert!(frontier(&f, 0).is_empty() && frontier(&f, 3).is_empty());
    // Both arms define slot 0, so the join gets one phi.
    let g = ssa_convert(&f);
    let phis = g.block(BlockId(3)).insns.iter().filter(|i| matches!(i, Insn::Phi { .. })).count();
    assert_eq!(phis, 1);
}

#[test]
fn reference_function_cfg() {
    let f = graph(&[&[2, 1], &[], &[]]);
    assert_eq!(idoms(&f), [(1, 0), (2, 0)]);
    assert!((0..3).all(|b| frontier(&f, b).is_empty()));
}

#[test]
fn loop_header_is_its_own_frontier() {
    let f = graph(&[&[1], &[2, 3], &[1], &[]]);
    assert_eq!(idoms(&f), [(1, 0), (2, 1), (3, 1)]);
    assert_eq!(frontier(&f, 2), [1]);
    assert_eq!(frontier(&f, 1), [1]);
}

#[test]
fn unreachable_blocks_are_reported_and_pruned() {
    let mut f = graph(&[&[2], &[2], &[]]);
    assert_eq!(compute_dominators(&f).unreachable, [BlockId(1)]);
    assert_eq!(minilisp::passes::prune_unreachable(&mut f), [BlockId(1)]);
    assert!(verify(&f).is_empty());
}
