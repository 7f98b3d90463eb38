use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::depth::{effect, stack_depth_analysis};
use super::{Label, LapInsn, LapProgram, SourceUnit};
use crate::object::prims::{self, MAX_FIXED_ARGS};
use crate::object::{read_all, Datum, Symbol};

/// Name of the program that performs a unit's top-level effects.
pub const TOP_LEVEL_NAME: &str = "%top-level-run";

const REGISTER: &str = "%register-function";
const OR_TEMP: &str = " or-value";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{message}", .function.as_ref().map(|f| format!("in {f}: ")).unwrap_or_default())]
pub struct CompileError {
    pub function: Option<String>,
    pub message: String,
}

impl CompileError {
    fn new(message: impl Into<String>) -> Self {
        CompileError { function: None, message: message.into() }
    }
}

type CResult<T> = Result<T, CompileError>;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Value,
    Tail,
}

#[derive(Default)]
struct UnitState {
    functions: Vec<LapProgram>,
    defined: HashSet<Symbol>,
    lifted: Vec<Symbol>,
    lambda_counter: usize,
}

struct FnCompiler<'u> {
    unit: &'u mut UnitState,
    name: Symbol,
    arg_count: usize,
    insns: Vec<LapInsn>,
    constants: Vec<Datum>,
    const_index: HashMap<Datum, u32>,
    depth: usize,
    scope: Vec<(Symbol, u32)>,
    /// Lexicals of enclosing functions; referencing one is an error.
    outer: Vec<Symbol>,
    next_label: u32,
}

fn sym_name(d: &Datum) -> Option<&'static str> {
    d.as_symbol().map(Symbol::name)
}

fn parse_params(params: &Datum) -> CResult<Vec<Symbol>> {
    let items = params
        .as_list()
        .ok_or_else(|| CompileError::new(format!("malformed parameter list {params}")))?;
    let mut out = Vec::new();
    for p in items {
        let s = p
            .as_symbol()
            .ok_or_else(|| CompileError::new(format!("parameter {p} is not a symbol")))?;
        if s == Symbol::NIL || s == Symbol::T {
            return Err(CompileError::new(format!("cannot bind constant {s}")));
        }
        if s.name().starts_with('&') {
            return Err(CompileError::new(format!("unsupported lambda-list keyword {s}")));
        }
        if out.contains(&s) {
            return Err(CompileError::new(format!("duplicate parameter {s}")));
        }
        out.push(s);
    }
    if out.len() > MAX_FIXED_ARGS {
        return Err(CompileError::new(format!(
            "functions take at most {MAX_FIXED_ARGS} arguments, got {}",
            out.len()
        )));
    }
    Ok(out)
}

/// Strips a leading docstring and `declare` forms.
fn strip_body(body: &[Datum]) -> &[Datum] {
    let mut body = body;
    if body.len() > 1 && matches!(body[0], Datum::Str(_)) {
        body = &body[1..];
    }
    while let Some(first) = body.first() {
        let is_declare = first
            .as_list()
            .and_then(|l| l.first())
            .is_some_and(|h| sym_name(h) == Some("declare"));
        if !is_declare {
            break;
        }
        body = &body[1..];
    }
    body
}

impl<'u> FnCompiler<'u> {
    fn new(unit: &'u mut UnitState, name: Symbol, params: &[Symbol], outer: Vec<Symbol>) -> Self {
        FnCompiler {
            unit,
            name,
            arg_count: params.len(),
            insns: Vec::new(),
            constants: Vec::new(),
            const_index: HashMap::new(),
            depth: params.len(),
            scope: params.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect(),
            outer,
            next_label: 1,
        }
    }

    fn finish(self) -> CResult<LapProgram> {
        let mut program = LapProgram {
            name: self.name,
            arg_count: self.arg_count,
            constants: self.constants,
            insns: self.insns,
            max_depth: 0,
        };
        let depths = stack_depth_analysis(&program).map_err(|e| CompileError {
            function: Some(self.name.name().to_string()),
            message: format!("internal error: {e}"),
        })?;
        program.max_depth = depths.into_iter().max().unwrap_or(0).max(program.arg_count);
        Ok(program)
    }

    fn constant_index(&mut self, d: Datum) -> u32 {
        if let Some(&i) = self.const_index.get(&d) {
            return i;
        }
        let i = self.constants.len() as u32;
        self.constants.push(d.clone());
        self.const_index.insert(d, i);
        i
    }

    fn label(&mut self) -> Label {
        let l = Label(self.next_label);
        self.next_label += 1;
        l
    }

    fn emit(&mut self, insn: LapInsn) {
        let (pops, pushes) = effect(&insn);
        self.depth = self.depth - pops + pushes;
        self.insns.push(insn);
    }

    fn place(&mut self, label: Label, depth: usize) {
        self.depth = depth;
        self.emit(LapInsn::Tag(label));
    }

    fn push_constant(&mut self, d: Datum) {
        let i = self.constant_index(d);
        self.emit(LapInsn::Constant(i));
    }

    fn done(&mut self, ctx: Ctx) {
        if ctx == Ctx::Tail {
            self.emit(LapInsn::Return);
        }
    }

    fn lookup(&self, s: Symbol) -> Option<u32> {
        self.scope.iter().rev().find(|(n, _)| *n == s).map(|(_, slot)| *slot)
    }

    fn check_not_captured(&self, s: Symbol) -> CResult<()> {
        if self.lookup(s).is_none() && self.outer.contains(&s) {
            return Err(CompileError::new(format!("free lexical variable {s} in lambda")));
        }
        Ok(())
    }

    fn compile(&mut self, form: &Datum, ctx: Ctx) -> CResult<()> {
        match form {
            Datum::Symbol(s) if *s == Symbol::NIL || *s == Symbol::T => {
                self.push_constant(form.clone())
            }
            Datum::Symbol(s) => {
                self.check_not_captured(*s)?;
                match self.lookup(*s) {
                    Some(slot) => self.emit(LapInsn::StackRef(slot)),
                    None => {
                        let i = self.constant_index(form.clone());
                        self.emit(LapInsn::VarRef(i));
                    }
                }
            }
            Datum::Fixnum(_) | Datum::Float(_) | Datum::Str(_) => self.push_constant(form.clone()),
            Datum::List(_, Some(_)) => {
                return Err(CompileError::new(format!("dotted list {form} cannot be evaluated")))
            }
            Datum::List(items, None) => return self.compile_list(items, ctx),
        }
        self.done(ctx);
        Ok(())
    }

    fn compile_list(&mut self, items: &[Datum], ctx: Ctx) -> CResult<()> {
        let head = match items[0].as_symbol() {
            Some(s) => s,
            None => {
                return Err(CompileError::new(format!("invalid function {}", items[0])))
            }
        };
        let args = &items[1..];
        match head.name() {
            "quote" => {
                let [d] = args else {
                    return Err(CompileError::new("quote takes exactly one argument"));
                };
                self.push_constant(d.clone());
                self.done(ctx);
                Ok(())
            }
            "function" => {
                let [d] = args else {
                    return Err(CompileError::new("function takes exactly one argument"));
                };
                self.compile_function_ref(d, ctx)
            }
            "lambda" => self.compile_function_ref(&Datum::list(items.to_vec()), ctx),
            "progn" => self.compile_progn(args, ctx),
            "if" => {
                if args.len() < 2 {
                    return Err(CompileError::new("if needs a condition and a then-form"));
                }
                self.compile_if(&args[0], &args[1], &args[2..], ctx)
            }
            "when" | "unless" => {
                let Some((test, body)) = args.split_first() else {
                    return Err(CompileError::new(format!("{head} needs a condition")));
                };
                let body = Datum::list(
                    std::iter::once(Datum::sym("progn")).chain(body.iter().cloned()).collect(),
                );
                if head.name() == "when" {
                    self.compile_if(test, &body, &[], ctx)
                } else {
                    self.compile_if(test, &Datum::NIL, &[body], ctx)
                }
            }
            "cond" => self.compile_cond(args, ctx),
            "and" => match args {
                [] => self.compile(&Datum::T, ctx),
                [only] => self.compile(only, ctx),
                [first, rest @ ..] => {
                    let rest = Datum::list(
                        std::iter::once(Datum::sym("and")).chain(rest.iter().cloned()).collect(),
                    );
                    self.compile_if(first, &rest, &[Datum::NIL], ctx)
                }
            },
            "or" => match args {
                [] => self.compile(&Datum::NIL, ctx),
                [only] => self.compile(only, ctx),
                [first, rest @ ..] => {
                    let tmp = Datum::sym(OR_TEMP);
                    let rest = Datum::list(
                        std::iter::once(Datum::sym("or")).chain(rest.iter().cloned()).collect(),
                    );
                    let form = Datum::list(vec![
                        Datum::sym("let"),
                        Datum::list(vec![Datum::list(vec![tmp.clone(), first.clone()])]),
                        Datum::list(vec![Datum::sym("if"), tmp.clone(), tmp, rest]),
                    ]);
                    self.compile(&form, ctx)
                }
            },
            "let" | "let*" => {
                let Some((bindings, body)) = args.split_first() else {
                    return Err(CompileError::new(format!("{head} needs a binding list")));
                };
                self.compile_let(bindings, body, head.name() == "let*", ctx)
            }
            "setq" => self.compile_setq(args, ctx),
            "while" => {
                let Some((test, body)) = args.split_first() else {
                    return Err(CompileError::new("while needs a condition"));
                };
                self.compile_while(test, body, ctx)
            }
            "defvar" | "defconst" => {
                let [name, value, ..] = args else {
                    return Err(CompileError::new(format!("{head} needs a name and a value")));
                };
                let form = Datum::list(vec![Datum::sym("setq"), name.clone(), value.clone()]);
                self.compile(&form, ctx)
            }
            "defun" => Err(CompileError::new("defun is only allowed at top level")),
            "let-alist" | "catch" | "unwind-protect" | "condition-case" | "defmacro"
            | "save-excursion" | "interactive" | "throw" | "prog1" | "prog2" => {
                Err(CompileError::new(format!("unsupported special form {head}")))
            }
            _ => self.compile_call(head, args, ctx),
        }
    }

    fn compile_function_ref(&mut self, d: &Datum, ctx: Ctx) -> CResult<()> {
        if let Some(s) = d.as_symbol() {
            self.push_constant(Datum::Symbol(s));
            self.done(ctx);
            return Ok(());
        }
        let items = d.as_list().unwrap_or(&[]);
        if items.len() < 2 || sym_name(&items[0]) != Some("lambda") {
            return Err(CompileError::new(format!("invalid function {d}")));
        }
        let name = self.lift_lambda(&items[1], &items[2..])?;
        self.push_constant(Datum::Symbol(name));
        self.done(ctx);
        Ok(())
    }

    fn lift_lambda(&mut self, params: &Datum, body: &[Datum]) -> CResult<Symbol> {
        let name = loop {
            self.unit.lambda_counter += 1;
            let candidate =
                Symbol::intern(&format!("{}--lambda-{}", self.name, self.unit.lambda_counter));
            if !self.unit.defined.contains(&candidate) && prims::lookup(candidate).is_none() {
                break candidate;
            }
        };
        let params = parse_params(params)?;
        let mut outer = self.outer.clone();
        outer.extend(self.scope.iter().map(|(s, _)| *s));
        outer.retain(|s| !params.contains(s));
        let program = compile_function(self.unit, name, &params, body, outer)?;
        self.unit.defined.insert(name);
        self.unit.lifted.push(name);
        self.unit.functions.push(program);
        Ok(name)
    }

    fn compile_progn(&mut self, forms: &[Datum], ctx: Ctx) -> CResult<()> {
        let Some((last, init)) = forms.split_last() else {
            return self.compile(&Datum::NIL, ctx);
        };
        for form in init {
            self.compile(form, Ctx::Value)?;
            self.emit(LapInsn::Discard);
        }
        self.compile(last, ctx)
    }

    fn compile_if(&mut self, test: &Datum, then: &Datum, els: &[Datum], ctx: Ctx) -> CResult<()> {
        let base = self.depth;
        let else_label = self.label();
        let negated = test
            .as_list()
            .filter(|l| l.len() == 2 && matches!(sym_name(&l[0]), Some("not" | "null")));
        match negated {
            Some(l) => {
                self.compile(&l[1], Ctx::Value)?;
                self.emit(LapInsn::GotoIfNotNil(else_label));
            }
            None => {
                self.compile(test, Ctx::Value)?;
                self.emit(LapInsn::GotoIfNil(else_label));
            }
        }
        match ctx {
            Ctx::Tail => {
                self.compile(then, Ctx::Tail)?;
                self.place(else_label, base);
                self.compile_progn(els, Ctx::Tail)
            }
            Ctx::Value => {
                let end = self.label();
                self.compile(then, Ctx::Value)?;
                self.emit(LapInsn::Goto(end));
                self.place(else_label, base);
                self.compile_progn(els, Ctx::Value)?;
                self.place(end, base + 1);
                Ok(())
            }
        }
    }

    fn compile_cond(&mut self, clauses: &[Datum], ctx: Ctx) -> CResult<()> {
        let Some((first, rest)) = clauses.split_first() else {
            return self.compile(&Datum::NIL, ctx);
        };
        let clause = first
            .as_list()
            .filter(|c| !c.is_empty())
            .ok_or_else(|| CompileError::new(format!("malformed cond clause {first}")))?;
        let rest = Datum::list(std::iter::once(Datum::sym("cond")).chain(rest.iter().cloned()).collect());
        if clause.len() == 1 {
            let form = Datum::list(vec![Datum::sym("or"), clause[0].clone(), rest]);
            return self.compile(&form, ctx);
        }
        let body = Datum::list(
            std::iter::once(Datum::sym("progn")).chain(clause[1..].iter().cloned()).collect(),
        );
        self.compile_if(&clause[0], &body, &[rest], ctx)
    }

    fn compile_let(&mut self, bindings: &Datum, body: &[Datum], sequential: bool, ctx: Ctx) -> CResult<()> {
        let bindings = bindings
            .as_list()
            .ok_or_else(|| CompileError::new(format!("malformed let bindings {bindings}")))?;
        let base = self.depth;
        let scope_len = self.scope.len();
        let mut pending = Vec::new();
        for b in bindings {
            let (name, init) = match b {
                Datum::Symbol(s) => (*s, Datum::NIL),
                _ => match b.as_list() {
                    Some([name]) => (name.as_symbol().unwrap_or(Symbol::NIL), Datum::NIL),
                    Some([name, init]) => (name.as_symbol().unwrap_or(Symbol::NIL), init.clone()),
                    _ => return Err(CompileError::new(format!("malformed let binding {b}"))),
                },
            };
            if name == Symbol::NIL || name == Symbol::T {
                return Err(CompileError::new(format!("cannot bind {b}")));
            }
            let slot = self.depth as u32;
            self.compile(&init, Ctx::Value)?;
            if sequential {
                self.scope.push((name, slot));
            } else {
                pending.push((name, slot));
            }
        }
        self.scope.extend(pending);
        let n = bindings.len();
        let result = self.compile_progn(body, ctx);
        self.scope.truncate(scope_len);
        result?;
        if ctx == Ctx::Value && n > 0 {
            self.emit(LapInsn::StackSet(base as u32));
            for _ in 1..n {
                self.emit(LapInsn::Discard);
            }
        }
        Ok(())
    }

    fn compile_setq(&mut self, args: &[Datum], ctx: Ctx) -> CResult<()> {
        if args.len() % 2 != 0 {
            return Err(CompileError::new("setq needs an even number of arguments"));
        }
        if args.is_empty() {
            return self.compile(&Datum::NIL, ctx);
        }
        for (i, pair) in args.chunks(2).enumerate() {
            if i > 0 {
                self.emit(LapInsn::Discard);
            }
            let name = pair[0]
                .as_symbol()
                .ok_or_else(|| CompileError::new(format!("cannot setq {}", pair[0])))?;
            self.check_not_captured(name)?;
            self.compile(&pair[1], Ctx::Value)?;
            self.emit(LapInsn::Dup);
            match self.lookup(name) {
                Some(slot) => self.emit(LapInsn::StackSet(slot)),
                None => {
                    let i = self.constant_index(Datum::Symbol(name));
                    self.emit(LapInsn::VarSet(i));
                }
            }
        }
        self.done(ctx);
        Ok(())
    }

    fn compile_while(&mut self, test: &Datum, body: &[Datum], ctx: Ctx) -> CResult<()> {
        let base = self.depth;
        let top = self.label();
        let end = self.label();
        self.place(top, base);
        self.compile(test, Ctx::Value)?;
        self.emit(LapInsn::GotoIfNil(end));
        self.compile_progn(body, Ctx::Value)?;
        self.emit(LapInsn::Discard);
        self.emit(LapInsn::Goto(top));
        self.place(end, base);
        self.compile(&Datum::NIL, ctx)
    }

    fn compile_call(&mut self, f: Symbol, args: &[Datum], ctx: Ctx) -> CResult<()> {
        if let Some(id) = prims::lookup(f) {
            let s = prims::subr(id);
            if !s.accepts(args.len()) {
                return Err(CompileError::new(format!(
                    "wrong number of arguments to {f}: {}",
                    args.len()
                )));
            }
            if let Some(op) = LapInsn::for_primitive(s.name, args.len()) {
                for a in args {
                    self.compile(a, Ctx::Value)?;
                }
                self.emit(op);
                self.done(ctx);
                return Ok(());
            }
        }
        self.push_constant(Datum::Symbol(f));
        for a in args {
            self.compile(a, Ctx::Value)?;
        }
        self.emit(LapInsn::Call(args.len() as u32));
        self.done(ctx);
        Ok(())
    }
}

fn compile_function(
    unit: &mut UnitState,
    name: Symbol,
    params: &[Symbol],
    body: &[Datum],
    outer: Vec<Symbol>,
) -> CResult<LapProgram> {
    let mut c = FnCompiler::new(unit, name, params, outer);
    let attach = |mut e: CompileError| {
        e.function.get_or_insert_with(|| name.name().to_string());
        e
    };
    c.compile_progn(strip_body(body), Ctx::Tail).map_err(attach)?;
    c.finish().map_err(attach)
}

/// Compiles a unit's top-level forms.
pub fn byte_compile(path: &str, forms: Vec<Datum>) -> Result<SourceUnit, CompileError> {
    let mut unit = UnitState::default();
    let register_sym = Datum::sym(REGISTER);
    let top_name = Symbol::intern(TOP_LEVEL_NAME);
    let mut registrations = Vec::new();
    let mut top_body = Vec::new();

    // First pass: collect names so that lambda lifting avoids them.
    for form in &forms {
        if let Some([head, name, ..]) = form.as_list() {
            if sym_name(head) == Some("defun") {
                if let Some(s) = name.as_symbol() {
                    unit.defined.insert(s);
                }
            }
        }
    }
    let mut seen = HashSet::new();
    for form in &forms {
        let items = form.as_list().unwrap_or(&[]);
        if items.first().and_then(sym_name) != Some("defun") {
            top_body.push(form.clone());
            continue;
        }
        let [_, name, params, body @ ..] = items else {
            return Err(CompileError::new(format!("malformed defun {form}")));
        };
        let name = name
            .as_symbol()
            .ok_or_else(|| CompileError::new(format!("defun name {name} is not a symbol")))?;
        if prims::lookup(name).is_some() || name == Symbol::NIL || name == Symbol::T {
            return Err(CompileError::new(format!("cannot redefine primitive {name}")));
        }
        if !seen.insert(name) {
            return Err(CompileError::new(format!("duplicate definition of {name}")));
        }
        let params = parse_params(params).map_err(|mut e| {
            e.function = Some(name.name().to_string());
            e
        })?;
        let program = compile_function(&mut unit, name, &params, body, Vec::new())?;
        unit.functions.push(program);
        registrations.push(name);
        top_body.push(Datum::list(vec![
            register_sym.clone(),
            Datum::list(vec![Datum::sym("quote"), Datum::Symbol(name)]),
        ]));
    }

    let mut top = FnCompiler::new(&mut unit, top_name, &[], Vec::new());
    for form in &top_body {
        top.compile(form, Ctx::Value)?;
        top.emit(LapInsn::Discard);
    }
    top.compile(&Datum::NIL, Ctx::Tail)?;
    let lifted = top.unit.lifted.clone();
    if !lifted.is_empty() {
        let reg = top.constant_index(register_sym);
        let mut prologue = Vec::new();
        for name in lifted {
            let i = top.constant_index(Datum::Symbol(name));
            prologue.extend([LapInsn::Constant(reg), LapInsn::Constant(i), LapInsn::Call(1), LapInsn::Discard]);
        }
        prologue.append(&mut top.insns);
        top.insns = prologue;
    }
    let top_level = top.finish()?;
    Ok(SourceUnit { path: path.to_string(), forms, functions: unit.functions, top_level })
}

/// Reads and compiles source text.
pub fn byte_compile_str(path: &str, text: &str) -> Result<SourceUnit, CompileError> {
    let forms = read_all(text).map_err(|e| CompileError::new(format!("{path}:{e}")))?;
    byte_compile(path, forms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(src: &str) -> SourceUnit {
        byte_compile_str("test.mel", src).unwrap()
    }

    #[test]
    fn foo_matches_reference_listing() {
        let u = unit("(defun foo () (if *bar* (+ *bar* 2) 'foo))");
        let f = u.function(Symbol::intern("foo")).unwrap();
        assert_eq!(
            f.dump(),
            "(byte-varref *bar*)\n(byte-goto-if-nil TAG 1)\n(byte-varref *bar*)\n\
             (byte-constant 2)\n(byte-plus)\n(byte-return)\n(TAG 1)\n\
             (byte-constant foo)\n(byte-return)\n"
        );
        assert_eq!(f.max_depth, 2);
    }

    #[test]
    fn identity_function() {
        let u = unit("(defun id (x) x)");
        let f = &u.functions[0];
        assert_eq!(f.insns, vec![LapInsn::StackRef(0), LapInsn::Return]);
        assert_eq!(f.max_depth, 2);
    }

    #[test]
    fn generic_calls_use_the_trampoline() {
        let u = unit("(defun f () (g 1 2))");
        assert_eq!(
            u.functions[0].dump(),
            "(byte-constant g)\n(byte-constant 1)\n(byte-constant 2)\n(byte-call 2)\n(byte-return)\n"
        );
    }

    #[test]
    fn top_level_registers_defuns() {
        let u = unit("(defvar x 1) (defun f () x)");
        assert_eq!(
            u.top_level.dump(),
            "(byte-constant 1)\n(byte-dup)\n(byte-varset x)\n(byte-discard)\n\
             (byte-constant %register-function)\n(byte-constant f)\n(byte-call 1)\n\
             (byte-discard)\n(byte-constant nil)\n(byte-return)\n"
        );
    }

    #[test]
    fn let_unwinds_to_one_value() {
        let u = unit("(defun f (a) (+ (let ((x 1) (y 2)) (+ x y)) a))");
        let f = &u.functions[0];
        assert!(f.insns.contains(&LapInsn::StackSet(1)));
        assert_eq!(f.max_depth, 5);
    }

    #[test]
    fn errors() {
        let bad = |src: &str| byte_compile_str("t", src).unwrap_err().message;
        assert!(bad("(defun f () (car 1 2))").contains("wrong number of arguments"));
        assert!(bad("(defun f (x) (function (lambda () x)))").contains("free lexical variable x"));
        assert!(bad("(defun f () (catch 'a 1))").contains("unsupported special form"));
        assert!(bad("(defun car (x) x)").contains("primitive"));
        assert!(bad("(defun f (&rest x) x)").contains("lambda-list keyword"));
    }

    #[test]
    fn lambdas_are_lifted_and_registered_first() {
        let u = unit("(defun f (y) (funcall (lambda (x) (+ x 1)) y))");
        assert_eq!(u.functions.len(), 2);
        assert_eq!(u.functions[0].name.name(), "f--lambda-1");
        assert!(u.top_level.dump().starts_with("(byte-constant %register-function)\n(byte-constant f--lambda-1)"));
    }
}
