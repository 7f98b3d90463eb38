//! Front end: MiniLisp forms to LAP, plus the baseline stack interpreter.
//!
//! Stack slots are addressed absolutely: slot 0 is the bottom of the
//! function's operand stack, and the arguments occupy slots `0..arg_count`
//! on entry.

mod compiler;
mod depth;
mod interp;

use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::object::printer::write_datum;
use crate::object::{Datum, Symbol};

pub use compiler::{byte_compile, byte_compile_str, CompileError, TOP_LEVEL_NAME};
pub use depth::{stack_depth_analysis, DepthError};
pub use interp::{install, lap_exec, LapFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LapInsn {
    /// Push the global value of the symbol at constant index.
    VarRef(u32),
    /// Pop into the global value of the symbol at constant index.
    VarSet(u32),
    Constant(u32),
    /// Push a copy of the absolute stack slot.
    StackRef(u32),
    /// Pop into the absolute stack slot.
    StackSet(u32),
    Dup,
    Discard,
    Goto(Label),
    GotoIfNil(Label),
    GotoIfNotNil(Label),
    Return,
    Plus,
    Minus,
    Mult,
    Quo,
    Add1,
    Sub1,
    Car,
    Cdr,
    Cons,
    Setcar,
    Setcdr,
    Eq,
    Not,
    Eqlsign,
    Lss,
    Gtr,
    /// Call the function below `n` arguments through the trampoline.
    Call(u32),
    Tag(Label),
}

impl LapInsn {
    pub fn opcode_name(&self) -> &'static str {
        use LapInsn::*;
        match self {
            VarRef(_) => "byte-varref",
            VarSet(_) => "byte-varset",
            Constant(_) => "byte-constant",
            StackRef(_) => "byte-stack-ref",
            StackSet(_) => "byte-stack-set",
            Dup => "byte-dup",
            Discard => "byte-discard",
            Goto(_) => "byte-goto",
            GotoIfNil(_) => "byte-goto-if-nil",
            GotoIfNotNil(_) => "byte-goto-if-not-nil",
            Return => "byte-return",
            Plus => "byte-plus",
            Minus => "byte-minus",
            Mult => "byte-mult",
            Quo => "byte-quo",
            Add1 => "byte-add1",
            Sub1 => "byte-sub1",
            Car => "byte-car",
            Cdr => "byte-cdr",
            Cons => "byte-cons",
            Setcar => "byte-setcar",
            Setcdr => "byte-setcdr",
            Eq => "byte-eq",
            Not => "byte-not",
            Eqlsign => "byte-eqlsign",
            Lss => "byte-lss",
            Gtr => "byte-gtr",
            Call(_) => "byte-call",
            Tag(_) => "TAG",
        }
    }

    /// The primitive a fixed opcode stands for, with its operand count.
    pub fn primitive(&self) -> Option<(&'static str, usize)> {
        use LapInsn::*;
        Some(match self {
            Plus => ("+", 2),
            Minus => ("-", 2),
            Mult => ("*", 2),
            Quo => ("/", 2),
            Add1 => ("1+", 1),
            Sub1 => ("1-", 1),
            Car => ("car", 1),
            Cdr => ("cdr", 1),
            Cons => ("cons", 2),
            Setcar => ("setcar", 2),
            Setcdr => ("setcdr", 2),
            Eq => ("eq", 2),
            Not => ("not", 1),
            Eqlsign => ("=", 2),
            Lss => ("<", 2),
            Gtr => (">", 2),
            _ => return None,
        })
    }

    /// The dedicated opcode for calling primitive `name` with `nargs` arguments.
    pub fn for_primitive(name: &str, nargs: usize) -> Option<LapInsn> {
        use LapInsn::*;
        let op = match name {
            "+" => Plus,
            "-" => Minus,
            "*" => Mult,
            "/" => Quo,
            "1+" => Add1,
            "1-" => Sub1,
            "car" => Car,
            "cdr" => Cdr,
            "cons" => Cons,
            "setcar" => Setcar,
            "setcdr" => Setcdr,
            "eq" => Eq,
            "not" | "null" => Not,
            "=" => Eqlsign,
            "<" => Lss,
            ">" => Gtr,
            _ => return None,
        };
        (op.primitive().map(|(_, n)| n) == Some(nargs)).then_some(op)
    }

    pub fn jump_target(&self) -> Option<Label> {
        match self {
            LapInsn::Goto(l) | LapInsn::GotoIfNil(l) | LapInsn::GotoIfNotNil(l) => Some(*l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LapProgram {
    pub name: Symbol,
    pub arg_count: usize,
    pub constants: Vec<Datum>,
    pub insns: Vec<LapInsn>,
    /// Maximum operand-stack depth, argument slots included.
    pub max_depth: usize,
}

impl LapProgram {
    fn write_insn(&self, out: &mut String, insn: &LapInsn) -> fmt::Result {
        use LapInsn::*;
        match insn {
            Tag(l) => return write!(out, "(TAG {})", l.0),
            Goto(l) | GotoIfNil(l) | GotoIfNotNil(l) => {
                return write!(out, "({} TAG {})", insn.opcode_name(), l.0)
            }
            _ => {}
        }
        write!(out, "({}", insn.opcode_name())?;
        match insn {
            VarRef(i) | VarSet(i) | Constant(i) => {
                out.push(' ');
                write_datum(out, &self.constants[*i as usize])?;
            }
            StackRef(n) | StackSet(n) | Call(n) => write!(out, " {n}")?,
            _ => {}
        }
        out.push(')');
        Ok(())
    }

    /// One instruction per line, as printed sexps.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for insn in &self.insns {
            self.write_insn(&mut out, insn).expect("string write");
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub path: String,
    pub forms: Vec<Datum>,
    /// Compiled functions in definition order (lifted lambdas included).
    pub functions: Vec<LapProgram>,
    /// Runs the unit's top-level effects in source order.
    pub top_level: LapProgram,
}

impl SourceUnit {
    pub fn function(&self, name: Symbol) -> Option<&LapProgram> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Full LAP listing of the unit.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for f in self.functions.iter().chain(std::iter::once(&self.top_level)) {
            let _ = writeln!(out, ";; {} (args {}, max-depth {})", f.name, f.arg_count, f.max_depth);
            out.push_str(&f.dump());
        }
        out
    }
}
