use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use minilisp::bench::{benchmark_corpus, format_csv, format_table, run_suite, Subject};
use minilisp::bytecomp::{byte_compile_str, install};
use minilisp::limple::print_limple;
use minilisp::loader::{build_mln, compile_source, load_bytes, load_unit, UnitKind};
use minilisp::native::{emit_native_source, Toolchain};
use minilisp::object::{print, read};
use minilisp::passes::{run_to_stage, SpeedConfig, Stage};
use minilisp::{GlobalEnv, Symbol, Value};

#[derive(Parser)]
#[command(name = "minilisp", version, about = "MiniLisp compiler, loader and benchmark driver")]
struct Cli {
    /// C compiler command for the native backend (default: $MINILISP_CC or cc).
    #[arg(long, global = true, value_name = "CMD")]
    cc: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a source file to a unit or dump an intermediate form.
    Compile {
        file: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=3))]
        speed: u8,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
        debug: u8,
        #[arg(long, value_enum, default_value_t = Backend::Vm)]
        backend: Backend,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Load a unit (or source file) and call a function.
    Run {
        file: PathBuf,
        #[arg(long, value_name = "FUNCTION")]
        call: Option<String>,
        /// Arguments, each read as a MiniLisp datum.
        #[arg(requires = "call", allow_hyphen_values = true)]
        args: Vec<String>,
        /// How to run a source file; ignored for units.
        #[arg(long, value_enum, default_value_t = RunBackend::Lap)]
        backend: RunBackend,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=3))]
        speed: u8,
        /// Bind a global before the call, e.g. `--set '*bar*=10'`.
        #[arg(long = "set", value_name = "SYM=DATUM")]
        bindings: Vec<String>,
    },
    /// Run the benchmark suite against the baseline interpreter.
    Bench {
        /// Only benchmarks whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Backend::Vm, Backend::Native])]
        backends: Vec<Backend>,
        #[arg(long, value_delimiter = ',', default_values_t = [3u8], value_parser = clap::value_parser!(u8).range(0..=3))]
        speeds: Vec<u8>,
        /// Multiply every iteration count.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Vm,
    Native,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RunBackend {
    Lap,
    Vm,
    Native,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Lap,
    Limple,
    Ssa,
    C,
    Unit,
}

type Failure = Box<dyn std::error::Error>;

fn read_source(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn kind_of(b: Backend) -> UnitKind {
    match b {
        Backend::Vm => UnitKind::Limple,
        Backend::Native => UnitKind::Native,
    }
}

fn compile(
    file: &Path,
    cfg: &SpeedConfig,
    backend: Backend,
    emit: Option<Emit>,
    output: Option<PathBuf>,
    tc: &Toolchain,
) -> Result<(), Failure> {
    let text = read_source(file)?;
    let path = file.display().to_string();
    let dump = match emit {
        Some(Emit::Lap) => Some(byte_compile_str(&path, &text)?.dump()),
        Some(Emit::Ssa) => {
            let funcs = run_to_stage(&byte_compile_str(&path, &text)?, cfg, Stage::Ssa)?;
            Some(funcs.iter().map(print_limple).collect::<Vec<_>>().join("\n"))
        }
        Some(Emit::Limple) => {
            let unit = compile_source(&path, &text, cfg)?;
            Some(unit.functions.iter().chain([&unit.top_level]).map(print_limple).collect::<Vec<_>>().join("\n"))
        }
        Some(Emit::C) => Some(emit_native_source(&compile_source(&path, &text, cfg)?, cfg)?),
        Some(Emit::Unit) | None => None,
    };
    if let Some(d) = dump {
        match output {
            Some(o) => std::fs::write(o, d)?,
            None => print!("{d}"),
        }
        return Ok(());
    }
    let bytes = build_mln(&path, &text, cfg, kind_of(backend), tc)?;
    let out = output.unwrap_or_else(|| file.with_extension("mln"));
    std::fs::write(&out, bytes)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn run(
    file: &Path,
    call: Option<String>,
    args: &[String],
    backend: RunBackend,
    speed: u8,
    bindings: &[String],
    tc: &Toolchain,
) -> Result<(), Failure> {
    let mut env = GlobalEnv::new();
    let _unit = if file.extension().is_some_and(|e| e == "mln") {
        Some(load_unit(file, &mut env)?)
    } else {
        let text = read_source(file)?;
        let path = file.display().to_string();
        let cfg = SpeedConfig::new(speed, 0);
        match backend {
            RunBackend::Lap => {
                install(&byte_compile_str(&path, &text)?, &mut env)?;
                None
            }
            RunBackend::Vm | RunBackend::Native => {
                let kind = if backend == RunBackend::Vm { UnitKind::Limple } else { UnitKind::Native };
                let bytes = build_mln(&path, &text, &cfg, kind, tc)?;
                Some(load_bytes(&bytes, &path, &mut env)?)
            }
        }
    };
    for b in bindings {
        let (sym, datum) = b.split_once('=').ok_or_else(|| format!("--set {b}: expected SYM=DATUM"))?;
        let v = read(datum).map_err(|e| format!("--set {b}: {e}"))?;
        env.set_value(Symbol::intern(sym), v)?;
    }
    if let Some(name) = call {
        let argv = args
            .iter()
            .map(|a| read(a).map_err(|e| format!("argument {a}: {e}")))
            .collect::<Result<Vec<Value>, _>>()?;
        let v = env.call_symbol(Symbol::intern(&name), &argv)?;
        println!("{}", print(v)?);
    }
    Ok(())
}

fn bench(
    filter: Option<String>,
    backends: &[Backend],
    speeds: &[u8],
    scale: f64,
    csv: bool,
    tc: &Toolchain,
) -> Result<(), Failure> {
    let programs: Vec<_> = benchmark_corpus()
        .into_iter()
        .filter(|p| filter.as_deref().is_none_or(|f| p.name.contains(f)))
        .map(|p| p.scaled(scale))
        .collect();
    if programs.is_empty() {
        return Err("no benchmark matches the filter".into());
    }
    let mut subjects = Vec::new();
    for b in backends {
        if *b == Backend::Native && !tc.available() {
            eprintln!("skipping native backend: C toolchain `{}` not available", tc.command.join(" "));
            continue;
        }
        for s in speeds {
            subjects.push(match b {
                Backend::Vm => Subject::Vm(*s),
                Backend::Native => Subject::Native(*s),
            });
        }
    }
    let results = run_suite(&programs, &subjects, tc, |r| {
        eprintln!("{:<20} {:<10} {:.3}s  {}", r.name, r.subject, r.mean, r.result.chars().take(40).collect::<String>())
    })?;
    if csv {
        print!("{}", format_csv(&results));
    } else {
        print!("{}", format_table(&results));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tc = cli.cc.as_deref().map(Toolchain::new).unwrap_or_else(Toolchain::from_env);
    let result = match cli.command {
        Command::Compile { file, speed, debug, backend, emit, output } => {
            compile(&file, &SpeedConfig::new(speed, debug), backend, emit, output, &tc)
        }
        Command::Run { file, call, args, backend, speed, bindings } => {
            run(&file, call, &args, backend, speed, &bindings, &tc)
        }
        Command::Bench { filter, backends, speeds, scale, csv } => bench(filter, &backends, &speeds, scale, csv, &tc),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("minilisp: {e}");
            ExitCode::FAILURE
        }
    }
}
