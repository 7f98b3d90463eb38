use std::path::{Path, PathBuf};
use std::process::Command;

use super::emit::HEADER_FILE;
use super::shim;
use crate::passes::SpeedConfig;

pub const CC_ENV: &str = "MINILISP_CC";

#[derive(Debug, thiserror::Error)]
pub enum NativeError {
    #[error("C toolchain `{0}` not found (set {CC_ENV} or use the vm backend)")]
    ToolchainMissing(String),
    #[error("C compilation failed:\n{0}")]
    CompileFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Emit(#[from] super::emit::EmitError),
}

/// The C compiler command line prefix, e.g. `cc` or `gcc -march=native`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Toolchain {
    pub command: Vec<String>,
}

impl Default for Toolchain {
    fn default() -> Self {
        Toolchain::from_env()
    }
}

impl Toolchain {
    pub fn new(command: &str) -> Toolchain {
        Toolchain { command: command.split_whitespace().map(str::to_string).collect() }
    }

    /// `$MINILISP_CC`, falling back to `cc`.
    pub fn from_env() -> Toolchain {
        match std::env::var(CC_ENV) {
            Ok(c) if !c.trim().is_empty() => Toolchain::new(&c),
            _ => Toolchain::new("cc"),
        }
    }

    pub fn available(&self) -> bool {
        self.command.first().is_some_and(|cc| {
            Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success())
        })
    }
}

/// A shared object built in its own temporary directory.
#[derive(Debug)]
pub struct BuiltObject {
    dir: tempfile::TempDir,
    pub path: PathBuf,
    pub opt_level: u8,
}

impl BuiltObject {
    pub fn dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn bytes(&self) -> std::io::Result<Vec<u8>> {
        std::fs::read(&self.path)
    }
}

/// The flags used for `cfg`; the optimization level follows the speed.
pub fn compile_flags(cfg: &SpeedConfig) -> Vec<String> {
    vec![format!("-O{}", cfg.backend_opt_level), "-shared".into(), "-fPIC".into(), "-w".into()]
}

/// Builds `source` into a shared object next to a copy of the shim
/// header. Fixed file names keep the output reproducible.
pub fn native_compile(source: &str, cfg: &SpeedConfig, tc: &Toolchain) -> Result<BuiltObject, NativeError> {
    let cc = tc.command.first().ok_or_else(|| NativeError::ToolchainMissing(String::new()))?;
    let dir = tempfile::Builder::new().prefix("minilisp-cc").tempdir()?;
    std::fs::write(dir.path().join(HEADER_FILE), shim::header())?;
    std::fs::write(dir.path().join("unit.c"), source)?;
    let out = dir.path().join("unit.so");
    let result = Command::new(cc)
        .args(&tc.command[1..])
        .args(compile_flags(cfg))
        .arg("-o")
        .arg("unit.so")
        .arg("unit.c")
        .current_dir(dir.path())
        .output();
    let output = match result {
        Ok(o) => o,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(NativeError::ToolchainMissing(cc.clone()))
        }
        Err(e) => return Err(e.into()),
    };
    if !output.status.success() {
        let mut diag = String::from_utf8_lossy(&output.stderr).into_owned();
        diag.push_str(&String::from_utf8_lossy(&output.stdout));
        return Err(NativeError::CompileFailed(diag));
    }
    Ok(BuiltObject { dir, path: out, opt_level: cfg.backend_opt_level })
}
