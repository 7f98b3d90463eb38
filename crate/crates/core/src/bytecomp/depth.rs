use std::collections::HashMap;

use thiserror::Error;

use super::{Label, LapInsn, LapProgram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DepthError {
    #[error("label {0:?} is defined {1} times")]
    BadLabel(Label, usize),
    #[error("instruction {index} reached with depths {first} and {second}")]
    Mismatch { index: usize, first: usize, second: usize },
    #[error("stack underflow at instruction {0}")]
    Underflow(usize),
    #[error("slot {slot} out of range at instruction {index} (depth {depth})")]
    BadSlot { index: usize, slot: u32, depth: usize },
    #[error("constant index {1} out of range at instruction {0}")]
    BadConstant(usize, u32),
    #[error("control falls off the end of the program")]
    FallsOff,
    #[error("instruction {0} is unreachable")]
    Unreachable(usize),
}

/// Net stack effect (pops, pushes) of an instruction.
pub(crate) fn effect(insn: &LapInsn) -> (usize, usize) {
    use LapInsn::*;
    match insn {
        VarRef(_) | Constant(_) | StackRef(_) => (0, 1),
        Dup => (1, 2),
        VarSet(_) | StackSet(_) | Discard | GotoIfNil(_) | GotoIfNotNil(_) | Return => (1, 0),
        Goto(_) | Tag(_) => (0, 0),
        Add1 | Sub1 | Car | Cdr | Not => (1, 1),
        Plus | Minus | Mult | Quo | Cons | Setcar | Setcdr | Eq | Eqlsign | Lss | Gtr => (2, 1),
        Call(n) => (*n as usize + 1, 1),
    }
}

/// Resolves every label to the index of its `Tag`.
pub(crate) fn label_table(p: &LapProgram) -> Result<HashMap<Label, usize>, DepthError> {
    let mut table = HashMap::new();
    let mut counts: HashMap<Label, usize> = HashMap::new();
    for (i, insn) in p.insns.iter().enumerate() {
        if let LapInsn::Tag(l) = insn {
            table.insert(*l, i);
            *counts.entry(*l).or_default() += 1;
        }
    }
    for insn in &p.insns {
        if let Some(l) = insn.jump_target() {
            counts.entry(l).or_default();
        }
    }
    let mut bad: Vec<_> = counts.into_iter().filter(|(_, n)| *n != 1).collect();
    bad.sort();
    if let Some((l, n)) = bad.first() {
        return Err(DepthError::BadLabel(*l, *n));
    }
    Ok(table)
}

/// Computes the operand-stack depth on entry to every instruction.
pub fn stack_depth_analysis(p: &LapProgram) -> Result<Vec<usize>, DepthError> {
    let labels = label_table(p)?;
    let n = p.insns.len();
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let mut work = Vec::new();
    let visit = |index: usize, d: usize, depth: &mut Vec<Option<usize>>, work: &mut Vec<usize>| {
        if index >= n {
            return Err(DepthError::FallsOff);
        }
        match depth[index] {
            Some(first) if first != d => Err(DepthError::Mismatch { index, first, second: d }),
            Some(_) => Ok(()),
            None => {
                depth[index] = Some(d);
                work.push(index);
                Ok(())
            }
        }
    };
    visit(0, p.arg_count, &mut depth, &mut work)?;
    while let Some(i) = work.pop() {
        let insn = &p.insns[i];
        let d = depth[i].unwrap();
        let (pops, pushes) = effect(insn);
        if d < pops {
            return Err(DepthError::Underflow(i));
        }
        match insn {
            LapInsn::StackRef(slot) | LapInsn::StackSet(slot) => {
                let limit = if matches!(insn, LapInsn::StackSet(_)) { d - 1 } else { d };
                if *slot as usize >= limit {
                    return Err(DepthError::BadSlot { index: i, slot: *slot, depth: d });
                }
            }
            LapInsn::VarRef(c) | LapInsn::VarSet(c) | LapInsn::Constant(c) => {
                if *c as usize >= p.constants.len() {
                    return Err(DepthError::BadConstant(i, *c));
                }
            }
            _ => {}
        }
        let after = d - pops + pushes;
        match insn {
            LapInsn::Return => {}
            LapInsn::Goto(l) => visit(labels[l], after, &mut depth, &mut work)?,
            LapInsn::GotoIfNil(l) | LapInsn::GotoIfNotNil(l) => {
                visit(labels[l], after, &mut depth, &mut work)?;
                visit(i + 1, after, &mut depth, &mut work)?;
            }
            _ => visit(i + 1, after, &mut depth, &mut work)?,
        }
    }
    depth
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or(DepthError::Unreachable(i)))
        .collect()
}
