//! The benchmark corpus against closed-form results, and the harness
//! plumbing around it.

mod common;

use common::big_stack;
use minilisp::bench::{
    benchmark_corpus, format_csv, format_table, parse_subject, prepare, BenchProgram, BenchResult, Subject,
};
use minilisp::native::Toolchain;
use minilisp::object::print;
use minilisp::ErrorKind;

fn fib(n: i64) -> i64 {
    let (mut a, mut b) = (0i64, 1i64);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}

fn range(lo: i64, hi: i64) -> String {
    format!("({})", (lo..=hi).map(|i| i.to_string()).collect::<Vec<_>>().join(" "))
}

/// What each entry point returns for `(entry iterations size)`.
fn expected(p: &BenchProgram) -> String {
    let (iters, size) = (p.iterations, p.size);
    match p.name {
        "inclist" | "inclist-type-hints" => (1 + iters).to_string(),
        "listlen-tc" => size.to_string(),
        "bubble" | "bubble-no-cons" => range(1, size),
        "fibn" | "fibn-rec" | "fibn-tc" => fib(size).to_string(),
        other => panic!("no oracle for {other}"),
    }
}

fn small(p: BenchProgram) -> BenchProgram {
    let mut p = p;
    p.iterations = 3;
    if p.name == "fibn-rec" {
        p.size = 15;
    }
    p
}

#[test]
fn corpus_matches_closed_forms() {
    big_stack(|| {
        let tc = Toolchain::new("cc");
        for p in benchmark_corpus().into_iter().map(small) {
            let want = expected(&p);
            let mut subjects = vec![Subject::Baseline];
            subjects.extend((0..=3).map(Subject::Vm));
            for s in subjects {
                let mut run = prepare(&p, s, &tc).unwrap();
                assert_eq!(print(run.run().unwrap()).unwrap(), want, "{} {s}", p.name);
            }
        }
    });
}

#[test]
fn reference_sizes() {
    assert_eq!(fib(20), 6765);
    let corpus = benchmark_corpus();
    let names: Vec<_> = corpus.iter().map(|p| p.name).collect();
    assert_eq!(
        names,
        ["inclist", "inclist-type-hints", "listlen-tc", "bubble", "bubble-no-cons", "fibn", "fibn-rec", "fibn-tc"]
    );
    let rec = corpus.iter().find(|p| p.name == "fibn-rec").unwrap();
    let mut p = rec.clone();
    p.iterations = 1;
    let mut run = prepare(&p, Subject::Vm(2), &Toolchain::new("cc")).unwrap();
    assert_eq!(run.run().unwrap().as_fixnum(), Some(6765));
}

#[test]
fn scaling_never_reaches_zero() {
    for p in benchmark_corpus() {
        assert_eq!(p.scaled(0.0).iterations, 1);
        assert_eq!(p.scaled(2.0).iterations, p.iterations * 2);
    }
}

const HINTED: &str = "(defun th (l) (let ((h l)) (while l (let ((c (comp-hint-cons l))) (setcar c (1+ (comp-hint-fixnum (car c)))) (setq l (cdr c)))) h))";

#[test]
fn wrong_hint_is_an_assertion_below_speed_three() {
    for speed in 0..=2 {
        let bad = common::run_vm(HINTED, "th", "(1 2 foo 4)", speed);
        assert_eq!(bad, Err(ErrorKind::WrongTypeArgument), "speed {speed}");
        let good = common::run_vm(HINTED, "th", "(1 2 3)", speed);
        assert_eq!(good.as_deref(), Ok("(2 3 4)"));
    }
    assert_eq!(common::run_lap(HINTED, "th", "(1 foo)"), Err(ErrorKind::WrongTypeArgument));
}

fn elided(p: &BenchProgram, speed: u8) -> u64 {
    let mut run = prepare(p, Subject::Vm(speed), &Toolchain::new("cc")).unwrap();
    run.run().unwrap();
    run.env.stats.elided_checks
}

#[test]
fn hints_only_elide_checks_at_speed_three() {
    let corpus: Vec<_> = benchmark_corpus().into_iter().map(small).collect();
    let plain = corpus.iter().find(|p| p.name == "inclist").unwrap();
    let hinted = corpus.iter().find(|p| p.name == "inclist-type-hints").unwrap();
    let counts: Vec<(u64, u64)> = (0..=3).map(|s| (elided(plain, s), elided(hinted, s))).collect();
    for s in 0..=2 {
        assert_eq!(counts[s].1, counts[s].0, "speed {s}: {counts:?}");
    }
    assert!(counts[3].1 > counts[3].0, "{counts:?}");
    let hinted_counts: Vec<u64> = counts.iter().map(|c| c.1).collect();
    assert!(hinted_counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
}

fn result(name: &str, subject: Subject, mean: f64, speedup: Option<f64>) -> BenchResult {
    BenchResult {
        name: name.into(),
        subject,
        iterations: 1,
        times: vec![mean],
        mean,
        result: "1".into(),
        speedup,
    }
}

#[test]
fn tables_have_one_row_per_subject() {
    let rs = vec![
        result("fibn", Subject::Baseline, 1.0, None),
        result("fibn", Subject::Vm(3), 0.25, Some(4.0)),
        result("fibn", Subject::Native(3), 0.05, Some(20.0)),
    ];
    let csv = format_csv(&rs);
    assert_eq!(
        csv,
        "benchmark,subject,baseline s,subject s,speedup\nfibn,vm-3,1.000,0.250,4.0x\nfibn,native-3,1.000,0.050,20.0x\n"
    );
    let table = format_table(&rs);
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("benchmark  subject"));
    assert!(lines[2].ends_with("20.0x"));
}

#[test]
fn subject_labels_parse_back() {
    let mut all = vec![Subject::Baseline];
    for s in 0..=3 {
        all.push(Subject::Vm(s));
        all.push(Subject::Native(s));
    }
    for s in all {
        assert_eq!(parse_subject(&s.label()), Some(s));
    }
    assert_eq!(parse_subject("vm-4"), None);
    assert_eq!(parse_subject("jit-1"), None);
}
