//! Primitives the backends open-code, each with a certainty flag that lets
//! the type check be skipped when propagation proved the operand type.

use crate::limple::{LFunc, Var};
use crate::object::prims::LispType;
use crate::object::Symbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InlineOp {
    Car,
    Cdr,
    Setcar,
    Setcdr,
    Add1,
    Sub1,
    Negate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InlinePrim {
    pub name: &'static str,
    pub op: InlineOp,
    pub arity: usize,
    /// Operand type that makes the check unnecessary.
    pub certain_type: LispType,
}

const TABLE: [InlinePrim; 7] = [
    InlinePrim { name: "car", op: InlineOp::Car, arity: 1, certain_type: LispType::Cons },
    InlinePrim { name: "cdr", op: InlineOp::Cdr, arity: 1, certain_type: LispType::Cons },
    InlinePrim { name: "setcar", op: InlineOp::Setcar, arity: 2, certain_type: LispType::Cons },
    InlinePrim { name: "setcdr", op: InlineOp::Setcdr, arity: 2, certain_type: LispType::Cons },
    InlinePrim { name: "1+", op: InlineOp::Add1, arity: 1, certain_type: LispType::Fixnum },
    InlinePrim { name: "1-", op: InlineOp::Sub1, arity: 1, certain_type: LispType::Fixnum },
    InlinePrim { name: "-", op: InlineOp::Negate, arity: 1, certain_type: LispType::Fixnum },
];

pub fn inline_primitive_table() -> &'static [InlinePrim] {
    &TABLE
}

/// The open-coded form of calling `callee` with `nargs` arguments.
pub fn inline_for(callee: Symbol, nargs: usize) -> Option<&'static InlinePrim> {
    TABLE.iter().find(|p| p.name == callee.name() && p.arity == nargs)
}

/// Whether the first operand is proved to have the type `p` checks for.
pub fn certain(f: &LFunc, p: &InlinePrim, args: &[Var]) -> bool {
    args.first().is_some_and(|a| f.var(*a).ty == Some(p.certain_type))
}
