//! Golden dumps and targeted assertions for the middle-end passes.

use std::collections::HashMap;

use minilisp::bytecomp::{byte_compile_str, SourceUnit};
use minilisp::limple::{print_limple, verify, Insn, LFunc};
use minilisp::object::LispType;
use minilisp::passes::{
    call_optim, dead_code, forward_propagate, limplify, run_to_stage, ssa_convert, tre, SpeedConfig, Stage,
};
use minilisp::Symbol;

const FOO: &str = "(defun foo () (if *bar* (+ *bar* 2) 'foo))";

fn unit(src: &str) -> SourceUnit {
    byte_compile_str("t.mel", src).expect("compiles")
}

fn stage(src: &str, name: &str, speed: u8, st: Stage) -> LFunc {
    let sym = Symbol::intern(name);
    run_to_stage(&unit(src), &SpeedConfig::new(speed, 0), st)
        .unwrap()
        .into_iter()
        .find(|f| f.name == sym)
        .expect("function present")
}

fn final_dump(src: &str, name: &str, speed: u8) -> String {
    print_limple(&stage(src, name, speed, Stage::Final))
}

/// Lowered and converted to SSA, then propagated at `speed`.
fn propagated(src: &str, name: &str, speed: u8) -> LFunc {
    let u = unit(src);
    let lap = u.function(Symbol::intern(name)).unwrap();
    let mut f = ssa_convert(&limplify(lap, 0).unwrap());
    forward_propagate(&mut f, speed);
    assert!(verify(&f).is_empty(), "{:?}", verify(&f));
    f
}

fn is_call(i: &Insn) -> bool {
    matches!(i, Insn::Call { .. } | Insn::CallRef { .. } | Insn::DirectCall { .. })
}

const FOO_LIMPLE: &str = "\
;; function foo (args 0) (frame-size 2) (speed 0) (ssa nil)
bb_0:
  (call #s(mvar nil 0) symbol-value #s(mvar nil nil :const *bar* :type symbol))
  (cond-jump #s(mvar nil 0) #s(mvar nil nil :const nil :type boolean) bb_2 bb_1)
bb_2:
  (setimm #s(mvar nil 0) foo)
  (return #s(mvar nil 0))
bb_1:
  (call #s(mvar nil 0) symbol-value #s(mvar nil nil :const *bar* :type symbol))
  (setimm #s(mvar nil 1) 2)
  (call #s(mvar nil 0) + #s(mvar nil 0) #s(mvar nil 1))
  (return #s(mvar nil 0))
";

#[test]
fn limplify_foo_golden() {
    let f = stage(FOO, "foo", 0, Stage::Limple);
    assert_eq!(print_limple(&f), FOO_LIMPLE);
}

#[test]
fn limplify_foo_block_shapes() {
    let f = stage(FOO, "foo", 0, Stage::Limple);
    assert_eq!(f.blocks.len(), 3);
    let shape = |b: &minilisp::limple::BasicBlock| -> Vec<&'static str> {
        b.insns
            .iter()
            .map(|i| match i {
                Insn::Call { .. } => "call",
                Insn::SetImm { .. } => "setimm",
                Insn::CondJump { .. } => "cond-jump",
                Insn::Return(_) => "return",
                _ => "other",
            })
            .collect()
    };
    let entry = f.block(f.entry);
    assert_eq!(shape(entry), ["call", "cond-jump"]);
    let Some(Insn::CondJump { then_bb, else_bb, .. }) = entry.terminator() else { panic!() };
    // `then` is taken when the value is nil.
    assert_eq!(shape(f.block(*else_bb)), ["call", "setimm", "call", "return"]);
    assert_eq!(shape(f.block(*then_bb)), ["setimm", "return"]);
}

#[test]
fn debug_keeps_lap_comments() {
    let u = unit(FOO);
    let f = limplify(u.function(Symbol::intern("foo")).unwrap(), 1).unwrap();
    let text = print_limple(&f);
    assert!(text.contains("(comment \"LAP: (byte-varref *bar*)\")"), "{text}");
}

#[test]
fn ssa_gives_each_var_one_definition() {
    let src = "(defun len (l n) (if l (len (cdr l) (1+ n)) n))\n(defun w (n) (let ((a 0)) (while (> n 0) (setq a (+ a n)) (setq n (1- n))) a))";
    for name in ["len", "w"] {
        let f = stage(src, name, 2, Stage::Ssa);
        assert!(f.ssa_form);
        assert!(verify(&f).is_empty(), "{:?}", verify(&f));
        let mut defs = HashMap::new();
        for (_, i) in f.insns() {
            if let Some(d) = i.def() {
                *defs.entry(d).or_insert(0) += 1;
            }
        }
        assert!(defs.values().all(|n| *n == 1), "{name}");
    }
    let w = print_limple(&stage(src, "w", 2, Stage::Ssa));
    assert!(w.contains("(phi "), "{w}");
}

#[test]
fn constant_expression_folds_to_setimm_return() {
    for speed in [2, 3] {
        let f = stage("(defun k () (+ 1 2))", "k", speed, Stage::Final);
        let kinds: Vec<_> = f.insns().map(|(_, i)| i.clone()).collect();
        assert!(kinds.iter().all(|i| matches!(i, Insn::SetImm { .. } | Insn::Return(_))), "{kinds:?}");
        assert!(!kinds.iter().any(is_call));
        let dump = print_limple(&f);
        assert!(dump.contains("(setimm #s(mvar 2 0 :const 3 :type fixnum :alloc (auto 0)) 3)"), "{dump}");
    }
    // Below speed 2 the call stays.
    let f = stage("(defun k () (+ 1 2))", "k", 1, Stage::Final);
    assert!(f.insns().any(|(_, i)| is_call(i)));
}

fn phis(f: &LFunc) -> Vec<String> {
    f.insns()
        .filter(|(_, i)| matches!(i, Insn::Phi { .. }))
        .map(|(_, i)| minilisp::limple::print_insn(f, i))
        .collect()
}

#[test]
fn phi_with_agreeing_sources_becomes_constant() {
    let f = propagated("(defun sel (x) (let ((y (if x 3 3))) (+ y 1)))", "sel", 2);
    let p = phis(&f);
    assert_eq!(p.len(), 1, "{p:?}");
    assert_eq!(
        p[0],
        "(phi #s(mvar 4 1 :const 3 :type fixnum) (bb_1 #s(mvar 3 1 :const 3 :type fixnum)) (bb_2 #s(mvar 2 1 :const 3 :type fixnum)))"
    );
    assert!(print_limple(&f).contains(":const 4 :type fixnum"));
}

#[test]
fn phi_with_disagreeing_sources_keeps_only_the_type() {
    let f = propagated("(defun sel (x) (let ((y (if x 3 4))) (+ y 1)))", "sel", 2);
    let p = phis(&f);
    assert_eq!(p.len(), 1, "{p:?}");
    assert_eq!(
        p[0],
        "(phi #s(mvar 4 1 :type fixnum) (bb_1 #s(mvar 3 1 :const 3 :type fixnum)) (bb_2 #s(mvar 2 1 :const 4 :type fixnum)))"
    );
}

fn return_types(f: &LFunc) -> Vec<Option<LispType>> {
    f.insns()
        .filter_map(|(_, i)| match i {
            Insn::Return(v) => Some(f.var(*v).ty),
            _ => None,
        })
        .collect()
}

#[test]
fn return_type_propagates() {
    let f = propagated("(defun ty (x) (cons x x))", "ty", 2);
    assert_eq!(return_types(&f), [Some(LispType::Cons)]);
    let dump = print_limple(&f);
    assert!(dump.contains("(return #s(mvar 3 1 :type cons))"), "{dump}");
    let f = propagated("(defun un (x) (car x))", "un", 2);
    assert_eq!(return_types(&f), [None]);
}

#[test]
fn propagation_is_off_below_speed_two() {
    let f = stage("(defun ty (x) (cons x x))", "ty", 1, Stage::Final);
    assert_eq!(return_types(&f), [None]);
}

const CALLS: &str = "(defun p (x) (consp x))\n(defun q (x) (p x))";

#[test]
fn call_optim_speed_two_redirects_primitives_only() {
    let p = final_dump(CALLS, "p", 2);
    assert!(p.contains("(direct-call #s(mvar 3 1 :alloc (auto 1)) consp"), "{p}");
    assert!(!p.contains("funcall"));
    let q = final_dump(CALLS, "q", 2);
    assert!(q.contains(" funcall #s(mvar 1 1 :const p "), "{q}");
    assert!(!q.contains("direct-call"), "{q}");
}

#[test]
fn call_optim_speed_three_redirects_unit_functions() {
    let p = final_dump(CALLS, "p", 3);
    assert!(p.contains("(direct-call #s(mvar 3 1 :alloc (auto 1)) consp"), "{p}");
    let q = final_dump(CALLS, "q", 3);
    assert!(q.contains("(direct-call #s(mvar 3 1 :alloc (auto 1)) p #s(mvar 2 2"), "{q}");
    assert!(!q.contains("funcall"), "{q}");
}

#[test]
fn call_optim_respects_arity_and_unknown_callees() {
    let mut f = propagated("(defun q (x) (p x) (zork x))", "q", 2);
    let mut unit = HashMap::new();
    unit.insert(Symbol::intern("p"), 2);
    assert_eq!(call_optim(&mut f, &unit, true), 0);
    unit.insert(Symbol::intern("p"), 1);
    assert_eq!(call_optim(&mut f, &unit, true), 1);
}

#[test]
fn dead_code_drops_unused_assignments() {
    let mut f = propagated("(defun sel (x) (let ((y (if x 3 3))) (+ y 1)))", "sel", 2);
    let before = f.insns().count();
    let removed = dead_code(&mut f);
    assert!(removed > 0);
    assert_eq!(f.insns().count(), before - removed);
    assert!(phis(&f).is_empty());
    assert!(verify(&f).is_empty());
    // Calls survive even with an unused result.
    let mut g = propagated("(defun s (x) (symbol-value x) nil)", "s", 2);
    dead_code(&mut g);
    assert!(g.insns().any(|(_, i)| is_call(i)));
}

const LEN: &str = "(defun len (l n) (if l (len (cdr l) (1+ n)) n))";

#[test]
fn tre_turns_self_tail_call_into_loop() {
    let f = stage(LEN, "len", 3, Stage::Final);
    let dump = print_limple(&f);
    assert!(!dump.contains("funcall") && !dump.contains("direct-call"), "{dump}");
    assert!(dump.contains("(jump bb_0)"), "{dump}");
    // Only speed 3 enables it.
    let f2 = final_dump(LEN, "len", 2);
    assert!(f2.contains("funcall #s(mvar 4 2 :const len"), "{f2}");
}

#[test]
fn tre_ignores_non_tail_calls() {
    let mut f = propagated("(defun d (l) (if l (1+ (d (cdr l))) 0))", "d", 3);
    let mut unit = HashMap::new();
    unit.insert(Symbol::intern("d"), 1);
    assert_eq!(call_optim(&mut f, &unit, true), 1);
    assert!(tre(&f).is_none());
    let mut g = propagated(LEN, "len", 3);
    unit.insert(Symbol::intern("len"), 2);
    call_optim(&mut g, &unit, true);
    let t = tre(&g).expect("tail call");
    assert!(verify(&t).is_empty());
}

#[test]
fn hints_are_assertions_below_speed_three() {
    let src = "(defun h (x) (comp-hint-fixnum x))";
    let h2 = final_dump(src, "h", 2);
    assert!(h2.contains("direct-call #s(mvar 3 1 :alloc (auto 1)) comp-hint-fixnum"), "{h2}");
    let h3 = final_dump(src, "h", 3);
    assert!(!h3.contains("comp-hint-fixnum"), "{h3}");
    assert!(h3.contains("(return #s(mvar 3 1 :type fixnum"), "{h3}");
}

#[test]
fn straight_line_ssa_has_no_phis_and_unique_ids() {
    let f = stage(FOO, "foo", 2, Stage::Ssa);
    assert!(phis(&f).is_empty());
    let mut seen = std::collections::HashSet::new();
    for (_, i) in f.insns() {
        if let Some(d) = i.def() {
            let id = f.var(d).id.expect("ssa vars are numbered");
            assert!(seen.insert(id), "id {id} defined twice");
        }
    }
}

#[test]
fn counting_loop_gets_one_phi_for_the_counter() {
    let src = "(defun cnt (n) (let ((i 0)) (while (< i n) (setq i (1+ i))) i))";
    let f = stage(src, "cnt", 2, Stage::Ssa);
    // The loop head is the block with a back edge into it.
    let rpo = f.rpo();
    let pos = |b| rpo.iter().position(|x| *x == b).unwrap();
    let head = rpo
        .iter()
        .copied()
        .find(|h| f.predecessors()[h].iter().any(|p| pos(*p) >= pos(*h)))
        .expect("loop head");
    let ret_slot = f
        .insns()
        .find_map(|(_, i)| if let Insn::Return(v) = i { f.var(*v).slot } else { None })
        .unwrap();
    let counter_phis = f.block(head)
        .insns
        .iter()
        .filter(|i| matches!(i, Insn::Phi { dst, .. } if f.var(*dst).slot == Some(ret_slot)))
        .count();
    assert_eq!(counter_phis, 1, "{}", print_limple(&f));
}

#[test]
fn dead_assignment_chain_is_removed() {
    let mut f = propagated("(defun ch (x) (let ((a 5)) (let ((b a)) x)))", "ch", 2);
    assert!(f.insns().any(|(_, i)| matches!(i, Insn::Set { .. })));
    dead_code(&mut f);
    let left: Vec<_> = f.insns().map(|(_, i)| i.clone()).collect();
    // Only the copy of x into the result remains.
    assert!(!left.iter().any(|i| matches!(i, Insn::SetImm { .. })), "{left:?}");
    let sets: Vec<_> = left.iter().filter(|i| matches!(i, Insn::Set { .. })).collect();
    assert_eq!(sets.len(), 1, "{left:?}");
    assert!(matches!(sets[0], Insn::Set { src, .. } if *src == f.params[0]), "{left:?}");
}

#[test]
fn unused_call_result_loses_its_destination() {
    let mut g = propagated("(defun s (x) (symbol-value x) nil)", "s", 2);
    dead_code(&mut g);
    let call = g.insns().find(|(_, i)| is_call(i)).unwrap().1.clone();
    assert_eq!(call.def(), None, "{call:?}");
}

#[test]
fn tre_leaves_non_tail_recursion_alone() {
    let src = "(defun fibn (n) (if (< n 2) n (+ (fibn (- n 1)) (fibn (- n 2)))))";
    let mut f = propagated(src, "fibn", 3);
    let mut unit = HashMap::new();
    unit.insert(Symbol::intern("fibn"), 1);
    call_optim(&mut f, &unit, true);
    assert!(tre(&f).is_none());
    assert_eq!(final_dump(src, "fibn", 3).matches("direct-call").count(), 2);
}

#[test]
fn frame_layout_by_speed() {
    use minilisp::limple::{Alloc, Layout};
    let f = stage(FOO, "foo", 0, Stage::Final);
    let fr = f.frame.clone().unwrap();
    assert_eq!((fr.layout, fr.frame_slots), (Layout::Basic, 2));
    for speed in 1..=3 {
        let f = stage(FOO, "foo", speed, Stage::Final);
        let fr = f.frame.clone().unwrap();
        assert_eq!(fr.layout, Layout::Advanced);
        assert_eq!(fr.call_arrays, [2]);
        let plus = f
            .insns()
            .find_map(|(_, i)| match i {
                Insn::CallRef { args, .. } => Some(args.clone()),
                _ => None,
            })
            .unwrap();
        for (pos, a) in plus.iter().enumerate() {
            assert_eq!(f.var(*a).alloc, Alloc::CallArray { site: 0, pos: pos as u32 });
        }
        assert!(f.vars.iter().all(|v| !matches!(v.alloc, Alloc::FrameSlot(_))));
    }
}

fn vm_elided(src: &str, name: &str, speed: u8) -> (String, u64) {
    let unit = minilisp::loader::compile_source("e.mel", src, &SpeedConfig::new(speed, 0)).unwrap();
    let mut env = minilisp::GlobalEnv::new();
    let v = minilisp::backend::vm_exec(&unit, Symbol::intern(name), &[], &mut env).unwrap();
    (minilisp::object::print(v).unwrap(), env.stats.elided_checks)
}

#[test]
fn car_of_a_proved_cons_skips_the_check() {
    let src = "(defun c () (let ((x (cons 1 2))) (car x)))\n(defun n () (car nil))";
    assert_eq!(vm_elided(src, "c", 2), ("1".into(), 1));
    assert_eq!(vm_elided(src, "c", 1).1, 0);
    for speed in 0..=3 {
        assert_eq!(vm_elided(src, "n", speed).0, "nil");
    }
}
