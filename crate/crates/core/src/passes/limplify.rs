//! LAP to LIMPLE: every stack effect becomes an m-var assignment.
//!
//! Slot `n` of the operand stack maps to one m-var; the arguments are
//! slots `0..arg_count` on entry. Blocks are numbered breadth first from
//! the entry, fallthrough successor before jump target.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::bytecomp::{stack_depth_analysis, DepthError, Label, LapInsn, LapProgram};
use crate::limple::{BlockId, Insn, LFunc, MVar, Var};
use crate::object::{Datum, Symbol};

struct Builder<'a> {
    p: &'a LapProgram,
    f: LFunc,
    immediates: HashMap<Datum, Var>,
}

impl Builder<'_> {
    fn slot(&self, n: usize) -> Var {
        Var(n as u32)
    }

    fn imm(&mut self, d: Datum) -> Var {
        if let Some(v) = self.immediates.get(&d) {
            return *v;
        }
        let v = self.f.immediate(d.clone());
        self.immediates.insert(d, v);
        v
    }

    fn constant(&self, i: u32) -> Datum {
        self.p.constants[i as usize].clone()
    }
}

fn ends_block(insn: &LapInsn) -> bool {
    matches!(insn, LapInsn::Goto(_) | LapInsn::GotoIfNil(_) | LapInsn::GotoIfNotNil(_) | LapInsn::Return)
}

/// Lowers one LAP program. `debug` above zero keeps LAP text as comments.
pub fn limplify(p: &LapProgram, debug: u8) -> Result<LFunc, DepthError> {
    let depths = stack_depth_analysis(p)?;
    let n = p.insns.len();

    let mut labels: HashMap<Label, usize> = HashMap::new();
    for (i, insn) in p.insns.iter().enumerate() {
        if let LapInsn::Tag(l) = insn {
            labels.insert(*l, i);
        }
    }

    // Leaders: first instruction, tags not preceded by a tag, instructions
    // following a jump or return.
    let mut is_leader = vec![false; n];
    if n > 0 {
        is_leader[0] = true;
    }
    for i in 0..n {
        let prev_tag = i > 0 && matches!(p.insns[i - 1], LapInsn::Tag(_));
        if matches!(p.insns[i], LapInsn::Tag(_)) && !prev_tag {
            is_leader[i] = true;
        }
        if ends_block(&p.insns[i]) && i + 1 < n {
            is_leader[i + 1] = true;
        }
    }
    let leader_of = |mut i: usize| {
        while !is_leader[i] {
            i -= 1;
        }
        i
    };
    let block_end = |start: usize| {
        let mut i = start + 1;
        while i < n && !is_leader[i] {
            i += 1;
        }
        i
    };
    let successors = |start: usize| -> Vec<usize> {
        let end = block_end(start);
        let last = &p.insns[end - 1];
        let target = last.jump_target().map(|l| leader_of(labels[&l]));
        match last {
            LapInsn::Return => vec![],
            LapInsn::Goto(_) => vec![target.unwrap()],
            LapInsn::GotoIfNil(_) | LapInsn::GotoIfNotNil(_) => vec![end, target.unwrap()],
            _ => vec![end],
        }
    };

    let mut f = LFunc::new(p.name, p.arg_count, p.max_depth);
    for s in 0..p.max_depth {
        f.add_var(MVar::slot(s as u32));
    }
    f.params = (0..p.arg_count).map(|s| Var(s as u32)).collect();
    f.comments_kept = debug > 0;

    // A loop starting at instruction 0 needs a separate entry block.
    let entry_is_target = p.insns.iter().any(|i| i.jump_target().is_some_and(|l| leader_of(labels[&l]) == 0));
    let mut numbering: BTreeMap<usize, BlockId> = BTreeMap::new();
    let mut next = 0u32;
    if entry_is_target {
        next = 1;
    }
    let mut queue = VecDeque::new();
    if n > 0 {
        numbering.insert(0, BlockId(next));
        next += 1;
        queue.push_back(0);
    }
    while let Some(start) = queue.pop_front() {
        for s in successors(start) {
            if let std::collections::btree_map::Entry::Vacant(e) = numbering.entry(s) {
                e.insert(BlockId(next));
                next += 1;
                queue.push_back(s);
            }
        }
    }

    let mut b = Builder { p, f, immediates: HashMap::new() };
    if entry_is_target {
        b.f.blocks.insert(BlockId(0), Default::default());
        b.f.block_mut(BlockId(0)).insns.push(Insn::Jump(numbering[&0]));
    }
    if debug > 0 {
        let entry = BlockId(0);
        b.f.blocks.entry(entry).or_default();
        b.f.block_mut(entry).insns.insert(0, Insn::Comment(format!("Lisp function: {}", p.name)));
    }

    for (&start, &id) in &numbering {
        let end = block_end(start);
        let mut d = depths[start];
        let mut out = Vec::new();
        let mut terminated = false;
        for i in start..end {
            let insn = p.insns[i];
            if debug > 0 && !matches!(insn, LapInsn::Tag(_)) {
                let mut text = String::new();
                let one = LapProgram { insns: vec![insn], ..p.clone() };
                text.push_str(one.dump().trim_end());
                out.push(Insn::Comment(format!("LAP: {text}")));
            }
            lower(&mut b, insn, &mut d, &numbering, &labels, &leader_of, end, &mut out);
            terminated = out.last().is_some_and(Insn::is_terminator);
        }
        if !terminated {
            out.push(Insn::Jump(numbering[&end]));
        }
        b.f.blocks.entry(id).or_default().insns.extend(out);
    }
    if n == 0 {
        // Falling off an empty program is rejected by depth analysis, so
        // this only guards hand-built input.
        let nil = b.imm(Datum::NIL);
        b.f.blocks.entry(BlockId(0)).or_default().insns.push(Insn::Return(nil));
    }
    Ok(b.f)
}

#[allow(clippy::too_many_arguments)]
fn lower(
    b: &mut Builder,
    insn: LapInsn,
    d: &mut usize,
    numbering: &BTreeMap<usize, BlockId>,
    labels: &HashMap<Label, usize>,
    leader_of: &dyn Fn(usize) -> usize,
    end: usize,
    out: &mut Vec<Insn>,
) {
    use LapInsn::*;
    let target = |l: Label| numbering[&leader_of(labels[&l])];
    match insn {
        VarRef(c) => {
            let sym = b.imm(b.constant(c));
            out.push(Insn::Call { dst: Some(b.slot(*d)), callee: Symbol::intern("symbol-value"), args: vec![sym] });
            *d += 1;
        }
        VarSet(c) => {
            let sym = b.imm(b.constant(c));
            out.push(Insn::Call { dst: None, callee: Symbol::intern("set"), args: vec![sym, b.slot(*d - 1)] });
            *d -= 1;
        }
        Constant(c) => {
            out.push(Insn::SetImm { dst: b.slot(*d), imm: b.constant(c) });
            *d += 1;
        }
        StackRef(n) => {
            out.push(Insn::Set { dst: b.slot(*d), src: b.slot(n as usize) });
            *d += 1;
        }
        StackSet(n) => {
            if n as usize != *d - 1 {
                out.push(Insn::Set { dst: b.slot(n as usize), src: b.slot(*d - 1) });
            }
            *d -= 1;
        }
        Dup => {
            out.push(Insn::Set { dst: b.slot(*d), src: b.slot(*d - 1) });
            *d += 1;
        }
        Discard => *d -= 1,
        Goto(l) => out.push(Insn::Jump(target(l))),
        GotoIfNil(l) | GotoIfNotNil(l) => {
            *d -= 1;
            let (jump, fall) = (target(l), numbering[&end]);
            if jump == fall {
                out.push(Insn::Jump(fall));
            } else {
                let nil = b.imm(Datum::NIL);
                let (then_bb, else_bb) = if matches!(insn, GotoIfNil(_)) { (jump, fall) } else { (fall, jump) };
                out.push(Insn::CondJump { a: b.slot(*d), b: nil, then_bb, else_bb });
            }
        }
        Return => out.push(Insn::Return(b.slot(*d - 1))),
        Call(n) => {
            let base = *d - n as usize - 1;
            let args = (base..*d).map(|s| b.slot(s)).collect();
            out.push(Insn::Call { dst: Some(b.slot(base)), callee: Symbol::intern("funcall"), args });
            *d = base + 1;
        }
        Tag(_) => {}
        op => {
            let (name, nargs) = op.primitive().expect("primitive opcode");
            let base = *d - nargs;
            let args = (base..*d).map(|s| b.slot(s)).collect();
            out.push(Insn::Call { dst: Some(b.slot(base)), callee: Symbol::intern(name), args });
            *d = base + 1;
        }
    }
}
