//! LIMPLE: the SSA intermediate representation.
//!
//! Operands are indices into the owning function's m-var table. An m-var
//! with no slot is an immediate constant operand.

mod print;
mod serial;
mod unit;
mod verify;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::object::{Datum, LispType, Symbol};

pub use print::{print_insn, print_limple, print_mvar};
pub use serial::{deserialize_unit, serialize_unit, SerialError, FORMAT_VERSION};
pub use unit::{abi_hash, CompUnit, COMPILER_VERSION};
pub use verify::verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "bb_{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Storage class of an m-var, decided by frame layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alloc {
    Unassigned,
    /// Element of the single frame array (basic layout).
    FrameSlot(u32),
    /// Automatic variable (advanced layout).
    Auto(u32),
    /// Element of the argument array dedicated to one spread call.
    CallArray { site: u32, pos: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MVar {
    pub id: Option<u32>,
    pub slot: Option<u32>,
    pub const_vld: bool,
    pub constant: Datum,
    pub ty: Option<LispType>,
    pub alloc: Alloc,
}

impl MVar {
    pub fn slot(slot: u32) -> MVar {
        MVar { id: None, slot: Some(slot), const_vld: false, constant: Datum::NIL, ty: None, alloc: Alloc::Unassigned }
    }

    pub fn immediate(d: Datum) -> MVar {
        let ty = type_of(&d);
        MVar { id: None, slot: None, const_vld: true, constant: d, ty: Some(ty), alloc: Alloc::Unassigned }
    }

    pub fn is_immediate(&self) -> bool {
        self.slot.is_none()
    }

    pub fn known(&self) -> Option<&Datum> {
        self.const_vld.then_some(&self.constant)
    }
}

/// The type of a constant, as tracked by propagation.
pub fn type_of(d: &Datum) -> LispType {
    match d {
        Datum::Symbol(s) if *s == Symbol::NIL || *s == Symbol::T => LispType::Boolean,
        Datum::Symbol(_) => LispType::Symbol,
        Datum::Fixnum(_) => LispType::Fixnum,
        Datum::Float(_) => LispType::Float,
        Datum::Str(_) => LispType::String,
        Datum::List(..) => LispType::Cons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Insn {
    Set { dst: Var, src: Var },
    SetImm { dst: Var, imm: Datum },
    Jump(BlockId),
    /// Jump to `then_bb` if `a` and `b` are `eq`, else to `else_bb`.
    CondJump { a: Var, b: Var, then_bb: BlockId, else_bb: BlockId },
    /// Call to a primitive through the entry table.
    Call { dst: Option<Var>, callee: Symbol, args: Vec<Var> },
    /// Spread-style call passing a count and an argument array.
    CallRef { dst: Option<Var>, callee: Symbol, args: Vec<Var>, site: u32 },
    /// Call resolved at compile time: a unit function if the unit defines
    /// `callee`, otherwise a primitive.
    DirectCall { dst: Option<Var>, callee: Symbol, args: Vec<Var> },
    Comment(String),
    Return(Var),
    Phi { dst: Var, srcs: Vec<(BlockId, Var)> },
    /// Type hint on an existing value; trusted only at speed 3.
    Assume { var: Var, ty: LispType },
}

impl Insn {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Insn::Jump(_) | Insn::CondJump { .. } | Insn::Return(_))
    }

    pub fn def(&self) -> Option<Var> {
        match self {
            Insn::Set { dst, .. } | Insn::SetImm { dst, .. } | Insn::Phi { dst, .. } => Some(*dst),
            Insn::Call { dst, .. } | Insn::CallRef { dst, .. } | Insn::DirectCall { dst, .. } => *dst,
            _ => None,
        }
    }

    pub fn def_mut(&mut self) -> Option<&mut Var> {
        match self {
            Insn::Set { dst, .. } | Insn::SetImm { dst, .. } | Insn::Phi { dst, .. } => Some(dst),
            Insn::Call { dst, .. } | Insn::CallRef { dst, .. } | Insn::DirectCall { dst, .. } => {
                dst.as_mut()
            }
            _ => None,
        }
    }

    /// Operands read by the instruction (phi sources included).
    pub fn uses(&self) -> Vec<Var> {
        match self {
            Insn::Set { src, .. } => vec![*src],
            Insn::CondJump { a, b, .. } => vec![*a, *b],
            Insn::Call { args, .. } | Insn::CallRef { args, .. } | Insn::DirectCall { args, .. } => {
                args.clone()
            }
            Insn::Return(v) => vec![*v],
            Insn::Phi { srcs, .. } => srcs.iter().map(|(_, v)| *v).collect(),
            Insn::Assume { var, .. } => vec![*var],
            Insn::SetImm { .. } | Insn::Jump(_) | Insn::Comment(_) => vec![],
        }
    }

    /// Applies `f` to every non-phi operand.
    pub fn for_each_use_mut(&mut self, mut f: impl FnMut(&mut Var)) {
        match self {
            Insn::Set { src, .. } => f(src),
            Insn::CondJump { a, b, .. } => {
                f(a);
                f(b);
            }
            Insn::Call { args, .. } | Insn::CallRef { args, .. } | Insn::DirectCall { args, .. } => {
                args.iter_mut().for_each(f)
            }
            Insn::Return(v) => f(v),
            Insn::Assume { var, .. } => f(var),
            Insn::Phi { .. } | Insn::SetImm { .. } | Insn::Jump(_) | Insn::Comment(_) => {}
        }
    }

    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Insn::Jump(b) => vec![*b],
            Insn::CondJump { then_bb, else_bb, .. } => vec![*then_bb, *else_bb],
            _ => vec![],
        }
    }

    pub fn successors_mut(&mut self) -> Vec<&mut BlockId> {
        match self {
            Insn::Jump(b) => vec![b],
            Insn::CondJump { then_bb, else_bb, .. } => vec![then_bb, else_bb],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BasicBlock {
    pub insns: Vec<Insn>,
}

impl BasicBlock {
    pub fn terminator(&self) -> Option<&Insn> {
        self.insns.last().filter(|i| i.is_terminator())
    }

    pub fn successors(&self) -> Vec<BlockId> {
        self.terminator().map(Insn::successors).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Basic,
    Advanced,
}

/// Storage plan produced by frame layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub layout: Layout,
    pub frame_slots: u32,
    pub autos: u32,
    /// Length of each call site's argument array, indexed by site.
    pub call_arrays: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LFunc {
    pub name: Symbol,
    pub arg_count: usize,
    /// Maximum LAP stack depth.
    pub frame_size: usize,
    pub entry: BlockId,
    pub blocks: BTreeMap<BlockId, BasicBlock>,
    pub vars: Vec<MVar>,
    /// Incoming argument m-vars, in order.
    pub params: Vec<Var>,
    pub ssa_form: bool,
    pub speed: u8,
    pub comments_kept: bool,
    pub frame: Option<Frame>,
}

impl LFunc {
    pub fn new(name: Symbol, arg_count: usize, frame_size: usize) -> LFunc {
        LFunc {
            name,
            arg_count,
            frame_size,
            entry: BlockId(0),
            blocks: BTreeMap::new(),
            vars: Vec::new(),
            params: Vec::new(),
            ssa_form: false,
            speed: 0,
            comments_kept: false,
            frame: None,
        }
    }

    pub fn var(&self, v: Var) -> &MVar {
        &self.vars[v.index()]
    }

    pub fn var_mut(&mut self, v: Var) -> &mut MVar {
        &mut self.vars[v.index()]
    }

    pub fn add_var(&mut self, m: MVar) -> Var {
        self.vars.push(m);
        Var(self.vars.len() as u32 - 1)
    }

    pub fn immediate(&mut self, d: Datum) -> Var {
        self.add_var(MVar::immediate(d))
    }

    pub fn fresh_block(&mut self) -> BlockId {
        let id = self.blocks.keys().next_back().map_or(0, |b| b.0 + 1);
        let id = BlockId(id);
        self.blocks.insert(id, BasicBlock::default());
        id
    }

    pub fn block(&self, b: BlockId) -> &BasicBlock {
        &self.blocks[&b]
    }

    pub fn block_mut(&mut self, b: BlockId) -> &mut BasicBlock {
        self.blocks.get_mut(&b).expect("block exists")
    }

    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        self.blocks.get(&b).map(BasicBlock::successors).unwrap_or_default()
    }

    /// Predecessor lists, each in ascending block order.
    pub fn predecessors(&self) -> BTreeMap<BlockId, Vec<BlockId>> {
        let mut preds: BTreeMap<BlockId, Vec<BlockId>> =
            self.blocks.keys().map(|b| (*b, Vec::new())).collect();
        for (b, block) in &self.blocks {
            for s in block.successors() {
                if let Some(p) = preds.get_mut(&s) {
                    p.push(*b);
                }
            }
        }
        preds
    }

    /// Reachable blocks in reverse postorder. Successors are explored last
    /// first, so a conditional's else branch precedes its then branch.
    pub fn rpo(&self) -> Vec<BlockId> {
        let mut post = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(BlockId, Vec<BlockId>)> = Vec::new();
        if self.blocks.contains_key(&self.entry) {
            seen.insert(self.entry);
            stack.push((self.entry, self.successors(self.entry)));
        }
        while let Some((b, pending)) = stack.last_mut() {
            match pending.pop() {
                Some(s) => {
                    if self.blocks.contains_key(&s) && seen.insert(s) {
                        let succ = self.successors(s);
                        stack.push((s, succ));
                    }
                }
                None => {
                    post.push(*b);
                    stack.pop();
                }
            }
        }
        post.reverse();
        post
    }

    /// All instructions in block order, with their block.
    pub fn insns(&self) -> impl Iterator<Item = (BlockId, &Insn)> {
        self.blocks.iter().flat_map(|(b, block)| block.insns.iter().map(move |i| (*b, i)))
    }

    /// Number of uses of each var (phi sources included).
    pub fn use_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vars.len()];
        for (_, insn) in self.insns() {
            for v in insn.uses() {
                counts[v.index()] += 1;
            }
        }
        counts
    }
}
