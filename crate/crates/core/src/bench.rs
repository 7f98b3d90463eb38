//! Benchmark corpus and timing harness.

use std::fmt::Write;
use std::time::Instant;

use crate::bytecomp::{byte_compile_str, install};
use crate::loader::{build_mln, load_bytes, LoadedUnit, UnitKind};
use crate::native::Toolchain;
use crate::object::{print, GlobalEnv, LispResult, Symbol, Value};
use crate::passes::SpeedConfig;

pub const REPETITIONS: usize = 5;

const LIST_HELPERS: &str = "
(defun make-range (n)
  (let ((l nil))
    (while (> n 0)
      (setq l (cons n l))
      (setq n (1- n)))
    l))

(defun make-descending (n)
  (let ((l nil) (i 1))
    (while (<= i n)
      (setq l (cons i l))
      (setq i (1+ i)))
    l))

(defun refill-descending (l n)
  (while l
    (setcar l n)
    (setq n (1- n))
    (setq l (cdr l))))
";

const INCLIST: &str = "
(defun inclist (l)
  (let ((h l))
    (while l
      (setcar l (1+ (car l)))
      (setq l (cdr l)))
    h))

(defun inclist-bench (iters size)
  (let ((l (make-range size)) (i 0))
    (while (< i iters)
      (inclist l)
      (setq i (1+ i)))
    (car l)))
";

const INCLIST_TYPE_HINTS: &str = "
(defun inclist-th (l)
  (let ((h l))
    (while l
      (let ((c (comp-hint-cons l)))
        (setcar c (1+ (comp-hint-fixnum (car c))))
        (setq l (cdr c))))
    h))

(defun inclist-th-bench (iters size)
  (let ((l (make-range size)) (i 0))
    (while (< i iters)
      (inclist-th l)
      (setq i (1+ i)))
    (car l)))
";

const LISTLEN_TC: &str = "
(defun listlen-tc (l n)
  (if (null l)
      n
    (listlen-tc (cdr l) (1+ n))))

(defun listlen-tc-bench (iters size)
  (let ((l (make-range size)) (i 0) (r 0))
    (while (< i iters)
      (setq r (listlen-tc l 0))
      (setq i (1+ i)))
    r))
";

const BUBBLE_CORE: &str = "
(defun bubble (l)
  (let ((i (length l)))
    (while (> i 1)
      (let ((b l))
        (while (cdr b)
          (let ((x (car b)) (y (car (cdr b))))
            (when (< y x)
              (setcar b y)
              (setcar (cdr b) x)))
          (setq b (cdr b))))
      (setq i (1- i)))
    l))
";

const BUBBLE: &str = "
(defun bubble-bench (iters size)
  (let ((i 0) (r nil))
    (while (< i iters)
      (setq r (bubble (make-descending size)))
      (setq i (1+ i)))
    r))
";

const BUBBLE_NO_CONS: &str = "
(defun bubble-no-cons-bench (iters size)
  (let ((l (make-descending size)) (i 0))
    (while (< i iters)
      (refill-descending l size)
      (bubble l)
      (setq i (1+ i)))
    l))
";

const FIBN: &str = "
(defun fibn (n)
  (let ((a 0) (b 1) (i 0))
    (while (< i n)
      (let ((c (+ a b)))
        (setq a b)
        (setq b c))
      (setq i (1+ i)))
    a))

(defun fibn-bench (iters n)
  (let ((i 0) (r 0))
    (while (< i iters)
      (setq r (fibn n))
      (setq i (1+ i)))
    r))
";

const FIBN_REC: &str = "
(defun fibn-rec (n)
  (if (< n 2)
      n
    (+ (fibn-rec (- n 1)) (fibn-rec (- n 2)))))

(defun fibn-rec-bench (iters n)
  (let ((i 0) (r 0))
    (while (< i iters)
      (setq r (fibn-rec n))
      (setq i (1+ i)))
    r))
";

const FIBN_TC: &str = "
(defun fibn-tc (a b count)
  (if (= count 0)
      b
    (fibn-tc (+ a b) a (- count 1))))

(defun fibn-tc-bench (iters n)
  (let ((i 0) (r 0))
    (while (< i iters)
      (setq r (fibn-tc 1 0 n))
      (setq i (1+ i)))
    r))
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchProgram {
    pub name: &'static str,
    pub source: String,
    /// Entry point, called as `(entry iterations size)`.
    pub entry: &'static str,
    pub iterations: i64,
    pub size: i64,
}

impl BenchProgram {
    pub fn entry_symbol(&self) -> Symbol {
        Symbol::intern(self.entry)
    }

    /// Same program with the iteration count scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> BenchProgram {
        let mut p = self.clone();
        p.iterations = ((self.iterations as f64 * factor).round() as i64).max(1);
        p
    }
}

fn program(name: &'static str, parts: &[&str], entry: &'static str, iterations: i64, size: i64) -> BenchProgram {
    BenchProgram { name, source: parts.concat(), entry, iterations, size }
}

/// The benchmark programs with iteration counts sized for roughly one
/// second each under the LAP interpreter.
pub fn benchmark_corpus() -> Vec<BenchProgram> {
    vec![
        program("inclist", &[LIST_HELPERS, INCLIST], "inclist-bench", 20000, 1000),
        program("inclist-type-hints", &[LIST_HELPERS, INCLIST_TYPE_HINTS], "inclist-th-bench", 20000, 1000),
        program("listlen-tc", &[LIST_HELPERS, LISTLEN_TC], "listlen-tc-bench", 9000, 1000),
        program("bubble", &[LIST_HELPERS, BUBBLE_CORE, BUBBLE], "bubble-bench", 390, 200),
        program("bubble-no-cons", &[LIST_HELPERS, BUBBLE_CORE, BUBBLE_NO_CONS], "bubble-no-cons-bench", 400, 200),
        program("fibn", &[FIBN], "fibn-bench", 250000, 80),
        program("fibn-rec", &[FIBN_REC], "fibn-rec-bench", 570, 20),
        program("fibn-tc", &[FIBN_TC], "fibn-tc-bench", 104000, 80),
    ]
}

/// What runs a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subject {
    /// The LAP interpreter.
    Baseline,
    Vm(u8),
    Native(u8),
}

impl Subject {
    pub fn label(self) -> String {
        match self {
            Subject::Baseline => "baseline".into(),
            Subject::Vm(s) => format!("vm-{s}"),
            Subject::Native(s) => format!("native-{s}"),
        }
    }
}

impl std::fmt::Display for Subject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0}")]
    Build(#[from] crate::loader::BuildError),
    #[error("{0}")]
    Load(#[from] crate::loader::LoadError),
    #[error("{0}")]
    Compile(#[from] crate::bytecomp::CompileError),
    #[error("{0}")]
    Lisp(#[from] crate::object::LispError),
}

/// A program installed in its own environment, ready to run.
pub struct Prepared {
    pub env: GlobalEnv,
    entry: Symbol,
    args: Vec<Value>,
    _unit: Option<LoadedUnit>,
}

impl Prepared {
    pub fn run(&mut self) -> LispResult<Value> {
        self.env.call_symbol(self.entry, &self.args)
    }
}

pub fn prepare(p: &BenchProgram, subject: Subject, tc: &Toolchain) -> Result<Prepared, BenchError> {
    let mut env = GlobalEnv::new();
    let path = format!("{}.mel", p.name);
    let unit = match subject {
        Subject::Baseline => {
            let u = byte_compile_str(&path, &p.source)?;
            install(&u, &mut env)?;
            None
        }
        Subject::Vm(s) | Subject::Native(s) => {
            let kind = if matches!(subject, Subject::Vm(_)) { UnitKind::Limple } else { UnitKind::Native };
            let bytes = build_mln(&path, &p.source, &SpeedConfig::new(s, 0), kind, tc)?;
            Some(load_bytes(&bytes, &path, &mut env)?)
        }
    };
    let args = vec![Value::fixnum(p.iterations)?, Value::fixnum(p.size)?];
    Ok(Prepared { env, entry: p.entry_symbol(), args, _unit: unit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub name: String,
    pub subject: Subject,
    pub iterations: i64,
    pub times: Vec<f64>,
    pub mean: f64,
    /// Printed result of the last run.
    pub result: String,
    /// Baseline mean over this mean, when a baseline was measured.
    pub speedup: Option<f64>,
}

/// One warm-up run followed by [`REPETITIONS`] timed runs.
pub fn measure(p: &BenchProgram, subject: Subject, tc: &Toolchain) -> Result<BenchResult, BenchError> {
    let mut prepared = prepare(p, subject, tc)?;
    prepared.run()?;
    let mut times = Vec::with_capacity(REPETITIONS);
    let mut last = Value::NIL;
    for _ in 0..REPETITIONS {
        let t = Instant::now();
        last = prepared.run()?;
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    Ok(BenchResult {
        name: p.name.to_string(),
        subject,
        iterations: p.iterations,
        times,
        mean,
        result: print(last)?,
        speedup: None,
    })
}

/// Measures every program under the baseline and each subject, filling
/// in speedups relative to the baseline.
pub fn run_suite(
    programs: &[BenchProgram],
    subjects: &[Subject],
    tc: &Toolchain,
    mut progress: impl FnMut(&BenchResult),
) -> Result<Vec<BenchResult>, BenchError> {
    let mut out = Vec::new();
    for p in programs {
        let base = measure(p, Subject::Baseline, tc)?;
        progress(&base);
        let base_mean = base.mean;
        out.push(base);
        for s in subjects.iter().filter(|s| **s != Subject::Baseline) {
            let mut r = measure(p, *s, tc)?;
            r.speedup = Some(base_mean / r.mean);
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

fn rows(results: &[BenchResult]) -> Vec<[String; 5]> {
    let mut rows = Vec::new();
    for r in results.iter().filter(|r| r.subject != Subject::Baseline) {
        let base = results.iter().find(|b| b.name == r.name && b.subject == Subject::Baseline);
        rows.push([
            r.name.clone(),
            r.subject.label(),
            base.map_or("-".into(), |b| format!("{:.3}", b.mean)),
            format!("{:.3}", r.mean),
            r.speedup.map_or("-".into(), |s| format!("{s:.1}x")),
        ]);
    }
    rows
}

const HEADERS: [&str; 5] = ["benchmark", "subject", "baseline s", "subject s", "speedup"];

pub fn format_table(results: &[BenchResult]) -> String {
    let rows = rows(results);
    let mut width: Vec<usize> = HEADERS.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, c) in cells.iter().enumerate() {
            if i == 0 || i == 1 {
                let _ = write!(out, "{c:<w$}  ", w = width[i]);
            } else {
                let _ = write!(out, "{c:>w$}  ", w = width[i]);
            }
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    };
    line(&mut out, &HEADERS);
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

pub fn format_csv(results: &[BenchResult]) -> String {
    let mut out = HEADERS.join(",");
    out.push('\n');
    for r in rows(results) {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Parses a subject name as printed by [`Subject::label`].
pub fn parse_subject(s: &str) -> Option<Subject> {
    if s == "baseline" {
        return Some(Subject::Baseline);
    }
    let (kind, speed) = s.split_once('-')?;
    let speed: u8 = speed.parse().ok().filter(|n| *n <= 3)?;
    match kind {
        "vm" => Some(Subject::Vm(speed)),
        "native" => Some(Subject::Native(speed)),
        _ => None,
    }
}
