//! Storage assignment for m-vars.

use crate::limple::{Alloc, Frame, Insn, LFunc, Layout, Var};
use crate::object::prims::{self, CallStyle};
use crate::object::Symbol;
use crate::passes::SpeedConfig;

fn is_spread(callee: Symbol) -> bool {
    prims::lookup(callee).is_some_and(|id| prims::subr(id).style() == CallStyle::Spread)
}

/// Turns spread-style primitive calls into `callref`s and decides where
/// every m-var lives. Basic layout keeps one array indexed by slot;
/// advanced layout gives each spread call site its own argument array and
/// everything else an automatic variable per slot.
pub fn frame_layout(f: &mut LFunc, cfg: &SpeedConfig) {
    let mut sites: Vec<u32> = Vec::new();
    for b in f.rpo() {
        for insn in &mut f.block_mut(b).insns {
            let (dst, callee, args) = match insn {
                Insn::Call { dst, callee, args } | Insn::DirectCall { dst, callee, args } if is_spread(*callee) => {
                    (*dst, *callee, std::mem::take(args))
                }
                _ => continue,
            };
            let site = sites.len() as u32;
            sites.push(args.len() as u32);
            *insn = Insn::CallRef { dst, callee, args, site };
        }
    }

    let slots = f.vars.iter().filter_map(|m| m.slot).max().map_or(0, |s| s + 1).max(f.frame_size as u32);
    let layout = if cfg.advanced_frame_layout { Layout::Advanced } else { Layout::Basic };
    for m in f.vars.iter_mut() {
        m.alloc = match (m.slot, layout) {
            (None, _) => Alloc::Unassigned,
            (Some(s), Layout::Basic) => Alloc::FrameSlot(s),
            (Some(s), Layout::Advanced) => Alloc::Auto(s),
        };
    }

    if layout == Layout::Advanced {
        let counts = f.use_counts();
        let mut phi_defs = vec![false; f.vars.len()];
        for (_, insn) in f.insns() {
            if let Insn::Phi { dst, .. } = insn {
                phi_defs[dst.index()] = true;
            }
        }
        let mut placed: Vec<(Var, u32, u32)> = Vec::new();
        for (_, insn) in f.insns() {
            if let Insn::CallRef { args, site, .. } = insn {
                for (pos, a) in args.iter().enumerate() {
                    let m = f.var(*a);
                    if m.is_immediate() || counts[a.index()] != 1 || phi_defs[a.index()] || f.params.contains(a) {
                        continue;
                    }
                    placed.push((*a, *site, pos as u32));
                }
            }
        }
        for (v, site, pos) in placed {
            f.var_mut(v).alloc = Alloc::CallArray { site, pos };
        }
    }

    f.frame = Some(Frame {
        layout,
        frame_slots: if layout == Layout::Basic { slots } else { 0 },
        autos: if layout == Layout::Advanced { slots } else { 0 },
        call_arrays: sites,
    });
}
