//! Register-machine executor over laid-out LIMPLE.
//!
//! Each m-var maps to a register according to its allocation; constants
//! are read from the unit's materialized relocation vector.

use std::collections::HashMap;
use std::rc::Rc;

use super::inline::{certain, inline_for, InlineOp};
use crate::limple::{Alloc, BlockId, CompUnit, Insn, LFunc, Layout, Var};
use crate::object::env::{CompiledFunction, Function, FunctionKind};
use crate::object::prims::{self, CallStyle, PrimId, MAX_FIXED_ARGS};
use crate::object::{ErrorKind, GlobalEnv, LispError, LispResult, Symbol, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Opnd {
    Reg(u32),
    Const(u32),
}

/// Fixnum fast paths for two-argument arithmetic and comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fast {
    Add,
    Sub,
    Mul,
    Lt,
    Gt,
    Le,
    Ge,
    NumEq,
}

impl Fast {
    fn of(name: &str) -> Option<Fast> {
        Some(match name {
            "+" => Fast::Add,
            "-" => Fast::Sub,
            "*" => Fast::Mul,
            "<" => Fast::Lt,
            ">" => Fast::Gt,
            "<=" => Fast::Le,
            ">=" => Fast::Ge,
            "=" => Fast::NumEq,
            _ => return None,
        })
    }

    fn apply(self, a: Value, b: Value) -> Option<Value> {
        let (x, y) = (a.as_fixnum()?, b.as_fixnum()?);
        let arith = |r: Option<i64>| r.and_then(Value::fixnum_checked);
        match self {
            Fast::Add => arith(x.checked_add(y)),
            Fast::Sub => arith(x.checked_sub(y)),
            Fast::Mul => arith(x.checked_mul(y)),
            Fast::Lt => Some(Value::bool(x < y)),
            Fast::Gt => Some(Value::bool(x > y)),
            Fast::Le => Some(Value::bool(x <= y)),
            Fast::Ge => Some(Value::bool(x >= y)),
            Fast::NumEq => Some(Value::bool(x == y)),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Move { dst: u32, src: Opnd },
    Jump(u32),
    CondJump { a: Opnd, b: Opnd, then_pc: u32, else_pc: u32 },
    Return(Opnd),
    Eq { dst: Option<u32>, a: Opnd, b: Opnd },
    Prim { dst: Option<u32>, prim: PrimId, args: Box<[Opnd]> },
    Arith { dst: Option<u32>, fast: Fast, prim: PrimId, a: Opnd, b: Opnd },
    Spread { dst: Option<u32>, prim: PrimId, base: u32, n: u32, copies: Box<[(u32, Opnd)]> },
    Unit { dst: Option<u32>, func: u32, args: Box<[Opnd]> },
    Inline { dst: Option<u32>, op: InlineOp, a: Opnd, b: Opnd, cert: bool },
}

/// Executable form: every operand is a register. Constants are loaded
/// into their registers on entry and discarded results go to a scratch
/// register.
#[derive(Debug, Clone)]
enum ROp {
    Move { dst: u32, src: u32 },
    Jump(u32),
    IfEq { a: u32, b: u32, then_pc: u32, else_pc: u32 },
    Return(u32),
    Eq { dst: u32, a: u32, b: u32 },
    Arith { dst: u32, fast: Fast, prim: PrimId, a: u32, b: u32 },
    Prim { dst: u32, prim: PrimId, args: Box<[u32]> },
    Spread { dst: u32, prim: PrimId, base: u32, n: u32, copies: Box<[(u32, u32)]> },
    Unit { dst: u32, func: u32, args: Box<[u32]> },
    Car { dst: u32, a: u32, cert: bool },
    Cdr { dst: u32, a: u32, cert: bool },
    Setcar { dst: u32, a: u32, b: u32, cert: bool },
    Setcdr { dst: u32, a: u32, b: u32, cert: bool },
    Add1 { dst: u32, a: u32, cert: bool },
    Sub1 { dst: u32, a: u32, cert: bool },
    Negate { dst: u32, a: u32, cert: bool },
}

struct VmCode {
    name: Symbol,
    arity: usize,
    nregs: usize,
    params: Vec<u32>,
    /// (register, constant index) pairs loaded on entry.
    const_loads: Box<[(u32, u32)]>,
    ops: Vec<ROp>,
}

fn finalize(ops: Vec<Op>, nregs: usize) -> (Vec<ROp>, Vec<(u32, u32)>, usize) {
    let scratch = nregs as u32;
    let mut loads: Vec<(u32, u32)> = Vec::new();
    let mut reg = |o: Opnd| match o {
        Opnd::Reg(r) => r,
        Opnd::Const(c) => match loads.iter().find(|(_, k)| *k == c) {
            Some((r, _)) => *r,
            None => {
                let r = scratch + 1 + loads.len() as u32;
                loads.push((r, c));
                r
            }
        },
    };
    let out = |d: Option<u32>| d.unwrap_or(scratch);
    let mut rops = Vec::with_capacity(ops.len());
    for op in ops {
        rops.push(match op {
            Op::Move { dst, src } => ROp::Move { dst, src: reg(src) },
            Op::Jump(t) => ROp::Jump(t),
            Op::CondJump { a, b, then_pc, else_pc } => ROp::IfEq { a: reg(a), b: reg(b), then_pc, else_pc },
            Op::Return(v) => ROp::Return(reg(v)),
            Op::Eq { dst, a, b } => ROp::Eq { dst: out(dst), a: reg(a), b: reg(b) },
            Op::Arith { dst, fast, prim, a, b } => ROp::Arith { dst: out(dst), fast, prim, a: reg(a), b: reg(b) },
            Op::Prim { dst, prim, args } => {
                ROp::Prim { dst: out(dst), prim, args: args.iter().map(|a| reg(*a)).collect() }
            }
            Op::Spread { dst, prim, base, n, copies } => ROp::Spread {
                dst: out(dst),
                prim,
                base,
                n,
                copies: copies.iter().map(|(t, s)| (*t, reg(*s))).collect(),
            },
            Op::Unit { dst, func, args } => {
                ROp::Unit { dst: out(dst), func, args: args.iter().map(|a| reg(*a)).collect() }
            }
            Op::Inline { dst, op, a, b, cert } => {
                let (dst, a, b) = (out(dst), reg(a), reg(b));
                match op {
                    InlineOp::Car => ROp::Car { dst, a, cert },
                    InlineOp::Cdr => ROp::Cdr { dst, a, cert },
                    InlineOp::Setcar => ROp::Setcar { dst, a, b, cert },
                    InlineOp::Setcdr => ROp::Setcdr { dst, a, b, cert },
                    InlineOp::Add1 => ROp::Add1 { dst, a, cert },
                    InlineOp::Sub1 => ROp::Sub1 { dst, a, cert },
                    InlineOp::Negate => ROp::Negate { dst, a, cert },
                }
            }
        });
    }
    let total = nregs + 1 + loads.len();
    (rops, loads, total)
}

/// A compilation unit prepared for the register machine.
pub struct VmUnit {
    pub path: String,
    codes: Vec<VmCode>,
    consts: Vec<Value>,
    /// Set for units installed through the unit loader.
    pub loaded: bool,
}

fn bad(f: &LFunc, msg: impl std::fmt::Display) -> LispError {
    LispError::new(ErrorKind::InvalidFunction, format!("{}: {msg}", f.name))
}

struct Lowering<'a> {
    unit: &'a CompUnit,
    f: &'a LFunc,
    funcs: &'a HashMap<Symbol, u32>,
    /// First register of each call site's argument array.
    site_base: Vec<u32>,
}

impl Lowering<'_> {
    fn reg(&self, v: Var) -> LispResult<u32> {
        let frame = self.f.frame.as_ref().ok_or_else(|| bad(self.f, "no frame layout"))?;
        Ok(match self.f.var(v).alloc {
            Alloc::FrameSlot(s) | Alloc::Auto(s) => s,
            Alloc::CallArray { site, pos } => self.site_base[site as usize] + pos,
            Alloc::Unassigned => {
                return Err(bad(self.f, format!("operand {v:?} has no storage ({})", frame.frame_slots)))
            }
        })
    }

    fn opnd(&self, v: Var) -> LispResult<Opnd> {
        let m = self.f.var(v);
        if m.is_immediate() {
            let i = self.unit.reloc_index(&m.constant).ok_or_else(|| bad(self.f, "constant missing from relocs"))?;
            Ok(Opnd::Const(i as u32))
        } else {
            self.reg(v).map(Opnd::Reg)
        }
    }

    fn dst(&self, d: Option<Var>) -> LispResult<Option<u32>> {
        d.map(|v| self.reg(v)).transpose()
    }

    fn opnds(&self, args: &[Var]) -> LispResult<Box<[Opnd]>> {
        args.iter().map(|a| self.opnd(*a)).collect()
    }

    fn call(&self, dst: Option<Var>, callee: Symbol, args: &[Var], site: Option<u32>) -> LispResult<Op> {
        let d = self.dst(dst)?;
        if let Some(func) = self.funcs.get(&callee).filter(|_| site.is_none()) {
            return Ok(Op::Unit { dst: d, func: *func, args: self.opnds(args)? });
        }
        let prim = prims::lookup(callee).ok_or_else(|| bad(self.f, format!("unknown callee {callee}")))?;
        if let Some(p) = inline_for(callee, args.len()) {
            let a = self.opnd(args[0])?;
            let b = if args.len() > 1 { self.opnd(args[1])? } else { a };
            return Ok(Op::Inline { dst: d, op: p.op, a, b, cert: certain(self.f, p, args) });
        }
        if callee.name() == "eq" {
            return Ok(Op::Eq { dst: d, a: self.opnd(args[0])?, b: self.opnd(args[1])? });
        }
        if let Some(fast) = Fast::of(callee.name()).filter(|_| args.len() == 2) {
            return Ok(Op::Arith { dst: d, fast, prim, a: self.opnd(args[0])?, b: self.opnd(args[1])? });
        }
        let s = prims::subr(prim);
        if s.style() == CallStyle::Fixed || site.is_none() {
            if args.len() > MAX_FIXED_ARGS {
                return Err(bad(self.f, "too many arguments for a fixed call"));
            }
            return Ok(Op::Prim { dst: d, prim, args: self.opnds(args)? });
        }
        let site = site.unwrap();
        let region = self.site_base[site as usize];
        let regs: Vec<Option<u32>> = args
            .iter()
            .map(|a| if self.f.var(*a).is_immediate() { Ok(None) } else { self.reg(*a).map(Some) })
            .collect::<LispResult<_>>()?;
        // Arguments already laid out contiguously need no copying.
        let contiguous = regs.first().copied().flatten().filter(|r0| {
            regs.iter().enumerate().all(|(i, r)| *r == Some(r0 + i as u32))
        });
        let (base, copies) = match contiguous {
            Some(r0) => (r0, Vec::new()),
            None => {
                let mut copies = Vec::new();
                for (pos, a) in args.iter().enumerate() {
                    let target = region + pos as u32;
                    let src = self.opnd(*a)?;
                    if src != Opnd::Reg(target) {
                        copies.push((target, src));
                    }
                }
                (region, copies)
            }
        };
        Ok(Op::Spread { dst: d, prim, base, n: args.len() as u32, copies: copies.into() })
    }
}

fn lower_function(unit: &CompUnit, f: &LFunc, funcs: &HashMap<Symbol, u32>) -> LispResult<VmCode> {
    let frame = f.frame.as_ref().ok_or_else(|| bad(f, "no frame layout"))?;
    let fixed = match frame.layout {
        Layout::Basic => frame.frame_slots,
        Layout::Advanced => frame.autos,
    };
    let mut site_base = Vec::new();
    let mut nregs = fixed;
    for len in &frame.call_arrays {
        site_base.push(nregs);
        nregs += len;
    }
    let lw = Lowering { unit, f, funcs, site_base };

    let order = f.rpo();
    let mut block_pc: HashMap<BlockId, u32> = HashMap::new();
    let mut ops: Vec<Op> = Vec::new();
    let mut fixups: Vec<(usize, BlockId, Option<BlockId>)> = Vec::new();
    for b in &order {
        block_pc.insert(*b, ops.len() as u32);
        for insn in &f.block(*b).insns {
            match insn {
                Insn::Comment(_) | Insn::Assume { .. } => {}
                Insn::Phi { dst, srcs } => {
                    let d = lw.reg(*dst)?;
                    for (_, s) in srcs {
                        if lw.opnd(*s)? != Opnd::Reg(d) {
                            return Err(bad(f, "phi operands do not share storage"));
                        }
                    }
                }
                Insn::Set { dst, src } => {
                    let d = lw.reg(*dst)?;
                    let s = lw.opnd(*src)?;
                    if s != Opnd::Reg(d) {
                        ops.push(Op::Move { dst: d, src: s });
                    }
                }
                Insn::SetImm { dst, imm } => {
                    let i = unit.reloc_index(imm).ok_or_else(|| bad(f, "constant missing from relocs"))?;
                    ops.push(Op::Move { dst: lw.reg(*dst)?, src: Opnd::Const(i as u32) });
                }
                Insn::Jump(t) => {
                    fixups.push((ops.len(), *t, None));
                    ops.push(Op::Jump(0));
                }
                Insn::CondJump { a, b: bv, then_bb, else_bb } => {
                    fixups.push((ops.len(), *then_bb, Some(*else_bb)));
                    ops.push(Op::CondJump { a: lw.opnd(*a)?, b: lw.opnd(*bv)?, then_pc: 0, else_pc: 0 });
                }
                Insn::Return(v) => ops.push(Op::Return(lw.opnd(*v)?)),
                Insn::Call { dst, callee, args } => ops.push(lw.call(*dst, *callee, args, None)?),
                Insn::DirectCall { dst, callee, args } => ops.push(lw.call(*dst, *callee, args, None)?),
                Insn::CallRef { dst, callee, args, site } => ops.push(lw.call(*dst, *callee, args, Some(*site))?),
            }
        }
    }
    for (at, t, e) in fixups {
        let tp = block_pc[&t];
        match &mut ops[at] {
            Op::Jump(pc) => *pc = tp,
            Op::CondJump { then_pc, else_pc, .. } => {
                *then_pc = tp;
                *else_pc = block_pc[&e.unwrap()];
            }
            _ => unreachable!(),
        }
    }
    let (ops, loads, nregs) = finalize(copy_forward(ops, nregs as usize), nregs as usize);
    let params = f.params.iter().map(|p| lw.reg(*p)).collect::<LispResult<_>>()?;
    Ok(VmCode { name: f.name, arity: f.arg_count, nregs, params, const_loads: loads.into(), ops })
}

impl Op {
    fn is_branch(&self) -> bool {
        matches!(self, Op::Jump(_) | Op::CondJump { .. } | Op::Return(_))
    }

    fn targets(&self) -> Vec<u32> {
        match self {
            Op::Jump(t) => vec![*t],
            Op::CondJump { then_pc, else_pc, .. } => vec![*then_pc, *else_pc],
            _ => Vec::new(),
        }
    }

    fn dst(&self) -> Option<u32> {
        match self {
            Op::Move { dst, .. } => Some(*dst),
            Op::Eq { dst, .. }
            | Op::Prim { dst, .. }
            | Op::Spread { dst, .. }
            | Op::Arith { dst, .. }
            | Op::Unit { dst, .. }
            | Op::Inline { dst, .. } => *dst,
            _ => None,
        }
    }

    /// Rewrites every operand read before the op's own writes.
    fn map_reads(&mut self, mut f: impl FnMut(Opnd) -> Opnd) {
        match self {
            Op::Move { src, .. } | Op::Return(src) => *src = f(*src),
            Op::CondJump { a, b, .. } | Op::Eq { a, b, .. } | Op::Inline { a, b, .. } | Op::Arith { a, b, .. } => {
                *a = f(*a);
                *b = f(*b);
            }
            Op::Prim { args, .. } | Op::Unit { args, .. } => args.iter_mut().for_each(|a| *a = f(*a)),
            Op::Jump(_) | Op::Spread { .. } => {}
        }
    }

    /// Applies the op's register effects to `live`, going backwards.
    fn transfer(&self, live: &mut [bool]) {
        let use_opnd = |live: &mut [bool], o: Opnd| {
            if let Opnd::Reg(r) = o {
                live[r as usize] = true;
            }
        };
        if let Some(d) = self.dst() {
            live[d as usize] = false;
        }
        match self {
            Op::Move { src, .. } | Op::Return(src) => use_opnd(live, *src),
            Op::CondJump { a, b, .. } | Op::Eq { a, b, .. } | Op::Inline { a, b, .. } | Op::Arith { a, b, .. } => {
                use_opnd(live, *a);
                use_opnd(live, *b);
            }
            Op::Prim { args, .. } | Op::Unit { args, .. } => args.iter().for_each(|a| use_opnd(live, *a)),
            Op::Spread { base, n, copies, .. } => {
                live[*base as usize..(*base + *n) as usize].iter_mut().for_each(|l| *l = true);
                for (t, src) in copies.iter().rev() {
                    live[*t as usize] = false;
                    use_opnd(live, *src);
                }
            }
            Op::Jump(_) => {}
        }
    }
}

/// Forwards register copies within blocks, then drops moves whose target
/// is dead.
fn copy_forward(mut ops: Vec<Op>, nregs: usize) -> Vec<Op> {
    let mut leader = vec![false; ops.len() + 1];
    leader[0] = true;
    for (pc, op) in ops.iter().enumerate() {
        for t in op.targets() {
            leader[t as usize] = true;
        }
        if op.is_branch() {
            leader[pc + 1] = true;
        }
    }

    let mut alias: Vec<Option<Opnd>> = vec![None; nregs];
    let kill = |alias: &mut Vec<Option<Opnd>>, r: u32| {
        alias[r as usize] = None;
        for a in alias.iter_mut() {
            if *a == Some(Opnd::Reg(r)) {
                *a = None;
            }
        }
    };
    for pc in 0..ops.len() {
        if leader[pc] {
            alias.iter_mut().for_each(|a| *a = None);
        }
        let fwd = |o: Opnd, alias: &[Option<Opnd>]| match o {
            Opnd::Reg(r) => alias[r as usize].unwrap_or(o),
            c => c,
        };
        if let Op::Spread { copies, base, n, .. } = &mut ops[pc] {
            let mut copies = copies.to_vec();
            for (t, src) in copies.iter_mut() {
                *src = fwd(*src, &alias);
                kill(&mut alias, *t);
            }
            for r in *base..*base + *n {
                kill(&mut alias, r);
            }
            if let Op::Spread { copies: c, .. } = &mut ops[pc] {
                *c = copies.into();
            }
        } else {
            ops[pc].map_reads(|o| fwd(o, &alias));
        }
        if let Some(d) = ops[pc].dst() {
            kill(&mut alias, d);
        }
        if let Op::Move { dst, src } = ops[pc] {
            if src != Opnd::Reg(dst) {
                alias[dst as usize] = Some(src);
            }
        }
    }

    loop {
        let dead = dead_moves(&ops, &leader, nregs);
        if dead.iter().all(|d| !d) {
            break;
        }
        let mut new_pc = Vec::with_capacity(ops.len() + 1);
        let mut kept = 0u32;
        for d in &dead {
            new_pc.push(kept);
            kept += u32::from(!d);
        }
        new_pc.push(kept);
        let mut new_leader = vec![false; kept as usize + 1];
        for (pc, l) in leader.iter().enumerate() {
            if *l {
                new_leader[new_pc[pc] as usize] = true;
            }
        }
        leader = new_leader;
        ops = ops
            .into_iter()
            .zip(&dead)
            .filter(|(_, d)| !**d)
            .map(|(mut op, _)| {
                match &mut op {
                    Op::Jump(t) => *t = new_pc[*t as usize],
                    Op::CondJump { then_pc, else_pc, .. } => {
                        *then_pc = new_pc[*then_pc as usize];
                        *else_pc = new_pc[*else_pc as usize];
                    }
                    _ => {}
                }
                op
            })
            .collect();
    }
    ops
}

fn dead_moves(ops: &[Op], leader: &[bool], nregs: usize) -> Vec<bool> {
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    for pc in 0..ops.len() {
        if leader[pc] {
            blocks.push((pc, pc + 1));
        } else {
            blocks.last_mut().unwrap().1 = pc + 1;
        }
    }
    let block_of = |pc: u32| blocks.partition_point(|b| b.0 <= pc as usize) - 1;
    let succs: Vec<Vec<usize>> = blocks
        .iter()
        .map(|&(_, end)| {
            let last = &ops[end - 1];
            let mut s: Vec<usize> = last.targets().into_iter().map(block_of).collect();
            if !last.is_branch() && end < ops.len() {
                s.push(block_of(end as u32));
            }
            s
        })
        .collect();
    let mut live_in = vec![vec![false; nregs]; blocks.len()];
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..blocks.len()).rev() {
            let mut live = vec![false; nregs];
            for s in &succs[b] {
                live.iter_mut().zip(&live_in[*s]).for_each(|(l, i)| *l |= *i);
            }
            for op in ops[blocks[b].0..blocks[b].1].iter().rev() {
                op.transfer(&mut live);
            }
            if live != live_in[b] {
                live_in[b] = live;
                changed = true;
            }
        }
    }
    let mut dead = vec![false; ops.len()];
    for (b, &(start, end)) in blocks.iter().enumerate() {
        let mut live = vec![false; nregs];
        for s in &succs[b] {
            live.iter_mut().zip(&live_in[*s]).for_each(|(l, i)| *l |= *i);
        }
        for pc in (start..end).rev() {
            if let Op::Move { dst, src } = ops[pc] {
                if !live[dst as usize] || src == Opnd::Reg(dst) {
                    dead[pc] = true;
                    continue;
                }
            }
            ops[pc].transfer(&mut live);
        }
    }
    dead
}

impl VmUnit {
    pub fn new(unit: &CompUnit) -> LispResult<VmUnit> {
        let funcs: HashMap<Symbol, u32> =
            unit.functions.iter().enumerate().map(|(i, f)| (f.name, i as u32)).collect();
        let mut codes = Vec::new();
        for f in unit.functions.iter().chain(std::iter::once(&unit.top_level)) {
            codes.push(lower_function(unit, f, &funcs)?);
        }
        let consts = unit.data_relocs.iter().map(|d| d.to_value()).collect();
        Ok(VmUnit { path: unit.path.clone(), codes, consts, loaded: false })
    }

    /// Builds from already materialized constants (the loader's path).
    pub fn with_constants(unit: &CompUnit, consts: Vec<Value>) -> LispResult<VmUnit> {
        let mut u = VmUnit::new(unit)?;
        if consts.len() != u.consts.len() {
            return Err(LispError::new(ErrorKind::InvalidFunction, "constant vector length mismatch"));
        }
        u.consts = consts;
        Ok(u)
    }

    /// Function objects for every unit function, by name.
    pub fn functions(self: &Rc<Self>) -> HashMap<Symbol, Function> {
        (0..self.codes.len() - 1)
            .map(|i| {
                let f: Rc<dyn CompiledFunction> = Rc::new(VmFunction { unit: self.clone(), index: i });
                (self.codes[i].name, Function::Compiled(f))
            })
            .collect()
    }

    /// Register-machine code of every function, one op per line.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for c in &self.codes {
            out.push_str(&format!(";; {} (regs {})\n", c.name, c.nregs));
            for (pc, op) in c.ops.iter().enumerate() {
                out.push_str(&format!("{pc:4} {op:?}\n"));
            }
        }
        out
    }

    /// Runs the unit's top-level program.
    pub fn run_top_level(self: &Rc<Self>, env: &mut GlobalEnv) -> LispResult<Value> {
        run(self, self.codes.len() - 1, env, &[])
    }
}

pub struct VmFunction {
    unit: Rc<VmUnit>,
    index: usize,
}

impl CompiledFunction for VmFunction {
    fn name(&self) -> Symbol {
        self.unit.codes[self.index].name
    }

    fn arity(&self) -> usize {
        self.unit.codes[self.index].arity
    }

    fn kind(&self) -> FunctionKind {
        FunctionKind::Vm
    }

    fn is_native(&self) -> bool {
        self.unit.loaded
    }

    fn invoke(&self, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value> {
        run(&self.unit, self.index, env, args)
    }
}

#[cold]
fn inline_slow(op: InlineOp, a: Value, b: Value) -> LispResult<Value> {
    match op {
        InlineOp::Car => prims::car(a),
        InlineOp::Cdr => prims::cdr(a),
        InlineOp::Setcar => prims::setcar(a, b),
        InlineOp::Setcdr => prims::setcdr(a, b),
        InlineOp::Add1 => prims::add1(a),
        InlineOp::Sub1 => prims::sub1(a),
        InlineOp::Negate => prims::negate(a),
    }
}

#[cold]
fn arith_slow(env: &mut GlobalEnv, prim: PrimId, a: Value, b: Value) -> LispResult<Value> {
    env.call_subr(prim, &[a, b])
}

const STACK_REGS: usize = 32;

fn run(unit: &Rc<VmUnit>, index: usize, env: &mut GlobalEnv, args: &[Value]) -> LispResult<Value> {
    let code = &unit.codes[index];
    let mut stack = [Value::NIL; STACK_REGS];
    let mut heap = Vec::new();
    let regs: &mut [Value] = if code.nregs <= STACK_REGS {
        &mut stack[..code.nregs]
    } else {
        heap.resize(code.nregs, Value::NIL);
        &mut heap
    };
    for (r, c) in code.const_loads.iter() {
        regs[*r as usize] = unit.consts[*c as usize];
    }
    for (r, a) in code.params.iter().zip(args) {
        regs[*r as usize] = *a;
    }
    macro_rules! r {
        ($i:expr) => {
            regs[$i as usize]
        };
    }
    macro_rules! open_coded {
        ($dst:expr, $cert:expr, $op:expr, $a:expr, $b:expr, $fast:expr) => {{
            if $cert {
                env.stats.elided_checks += 1;
            }
            let (a, b) = (r!($a), r!($b));
            let fast: Option<Value> = $fast(a, b);
            r!($dst) = match fast {
                Some(v) => v,
                None => inline_slow($op, a, b)?,
            };
        }};
    }
    let mut pc = 0usize;
    loop {
        let op = &code.ops[pc];
        pc += 1;
        match *op {
            ROp::Move { dst, src } => r!(dst) = r!(src),
            ROp::Jump(t) => pc = t as usize,
            ROp::IfEq { a, b, then_pc, else_pc } => {
                pc = if r!(a) == r!(b) { then_pc } else { else_pc } as usize;
            }
            ROp::Return(v) => return Ok(r!(v)),
            ROp::Eq { dst, a, b } => r!(dst) = Value::bool(r!(a) == r!(b)),
            ROp::Arith { dst, fast, prim, a, b } => {
                let (x, y) = (r!(a), r!(b));
                r!(dst) = match fast.apply(x, y) {
                    Some(v) => v,
                    None => arith_slow(env, prim, x, y)?,
                };
            }
            ROp::Prim { dst, prim, ref args } => {
                let mut buf = [Value::NIL; MAX_FIXED_ARGS];
                for (slot, a) in buf.iter_mut().zip(args.iter()) {
                    *slot = r!(*a);
                }
                let s = prims::subr(prim);
                r!(dst) = (s.func)(env, &buf[..args.len()])?;
            }
            ROp::Spread { dst, prim, base, n, ref copies } => {
                for (t, src) in copies.iter() {
                    r!(*t) = r!(*src);
                }
                let argv: Vec<Value> = regs[base as usize..(base + n) as usize].to_vec();
                r!(dst) = env.call_subr(prim, &argv)?;
            }
            ROp::Unit { dst, func, ref args } => {
                let mut buf = [Value::NIL; MAX_FIXED_ARGS];
                for (slot, a) in buf.iter_mut().zip(args.iter()) {
                    *slot = r!(*a);
                }
                env.enter_frame()?;
                let v = run(unit, func as usize, env, &buf[..args.len()]);
                env.leave_frame();
                r!(dst) = v?;
            }
            ROp::Car { dst, a, cert } => open_coded!(dst, cert, InlineOp::Car, a, a, |a: Value, _| a.car()),
            ROp::Cdr { dst, a, cert } => open_coded!(dst, cert, InlineOp::Cdr, a, a, |a: Value, _| a.cdr()),
            ROp::Setcar { dst, a, b, cert } => {
                open_coded!(dst, cert, InlineOp::Setcar, a, b, |a: Value, b| a.set_car(b).then_some(b))
            }
            ROp::Setcdr { dst, a, b, cert } => {
                open_coded!(dst, cert, InlineOp::Setcdr, a, b, |a: Value, b| a.set_cdr(b).then_some(b))
            }
            ROp::Add1 { dst, a, cert } => open_coded!(dst, cert, InlineOp::Add1, a, a, |a: Value, _| a
                .as_fixnum()
                .and_then(|n| Value::fixnum_checked(n + 1))),
            ROp::Sub1 { dst, a, cert } => open_coded!(dst, cert, InlineOp::Sub1, a, a, |a: Value, _| a
                .as_fixnum()
                .and_then(|n| Value::fixnum_checked(n - 1))),
            ROp::Negate { dst, a, cert } => open_coded!(dst, cert, InlineOp::Negate, a, a, |a: Value, _| a
                .as_fixnum()
                .and_then(|n| Value::fixnum_checked(-n))),
        }
    }
}

/// Installs a unit the way loading does: runs its top-level program with
/// the unit's functions offered for registration.
pub fn vm_install(unit: &CompUnit, env: &mut GlobalEnv) -> LispResult<Rc<VmUnit>> {
    let vm = Rc::new(VmUnit::new(unit)?);
    env.begin_loading(vm.functions());
    let r = vm.run_top_level(env);
    env.end_loading();
    r.map(|_| vm)
}

/// Calls `fname` of `unit` on the register machine after binding every
/// unit function in `env`. Top-level effects are not run.
pub fn vm_exec(unit: &CompUnit, fname: Symbol, args: &[Value], env: &mut GlobalEnv) -> LispResult<Value> {
    let vm = Rc::new(VmUnit::new(unit)?);
    let functions = vm.functions();
    let target = functions
        .get(&fname)
        .cloned()
        .ok_or_else(|| LispError::new(ErrorKind::VoidFunction, fname.name()))?;
    for f in &unit.functions {
        env.fset(f.name, functions[&f.name].clone());
    }
    env.apply(&target, args)
}
