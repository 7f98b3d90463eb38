//! Pass sequencing driven by the speed level.

use std::collections::HashMap;

use thiserror::Error;

use super::{call_optim, dead_code, forward_propagate, limplify, ssa_convert, tre};
use crate::backend::frame_layout;
use crate::bytecomp::{LapProgram, SourceUnit};
use crate::limple::{verify, CompUnit, LFunc};
use crate::object::Symbol;

/// Optimization level and the pass switches it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeedConfig {
    pub speed: u8,
    pub debug: u8,
    pub propagate: bool,
    pub call_optim: bool,
    pub call_optim_intra: bool,
    pub dead_code: bool,
    pub tre: bool,
    pub advanced_frame_layout: bool,
    pub backend_opt_level: u8,
}

impl SpeedConfig {
    pub fn new(speed: u8, debug: u8) -> SpeedConfig {
        let speed = speed.min(3);
        SpeedConfig {
            speed,
            debug: debug.min(2),
            propagate: speed >= 2,
            call_optim: speed >= 2,
            call_optim_intra: speed >= 3,
            dead_code: speed >= 2,
            tre: speed >= 3,
            advanced_frame_layout: speed >= 1,
            backend_opt_level: speed,
        }
    }
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig::new(2, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{function}: {message}")]
pub struct PipelineError {
    pub function: String,
    pub message: String,
}

/// How far to run the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Straight after limplify.
    Limple,
    /// Straight after SSA conversion.
    Ssa,
    /// All passes, frame layout included.
    Final,
}

fn check(f: &LFunc, after: &str) -> Result<(), PipelineError> {
    if !cfg!(debug_assertions) {
        return Ok(());
    }
    let errs = verify(f);
    if errs.is_empty() {
        Ok(())
    } else {
        Err(PipelineError { function: f.name.to_string(), message: format!("after {after}: {}", errs.join("; ")) })
    }
}

/// Compiles one LAP program. `unit` maps every function of the enclosing
/// unit to its arity.
pub fn compile_function(
    p: &LapProgram,
    unit: &HashMap<Symbol, usize>,
    cfg: &SpeedConfig,
    stage: Stage,
) -> Result<LFunc, PipelineError> {
    let err = |m: String| PipelineError { function: p.name.to_string(), message: m };
    let mut f = limplify(p, cfg.debug).map_err(|e| err(e.to_string()))?;
    f.speed = cfg.speed;
    check(&f, "limplify")?;
    if stage == Stage::Limple {
        return Ok(f);
    }
    f = ssa_convert(&f);
    check(&f, "ssa")?;
    if stage == Stage::Ssa {
        return Ok(f);
    }
    if cfg.propagate {
        forward_propagate(&mut f, cfg.speed);
        check(&f, "propagate")?;
    }
    if cfg.call_optim {
        call_optim(&mut f, unit, cfg.call_optim_intra);
        check(&f, "call-optim")?;
    }
    if cfg.tre {
        if let Some(g) = tre(&f) {
            f = g;
            check(&f, "tre")?;
            // Rebuilding SSA discarded the propagated facts.
            forward_propagate(&mut f, cfg.speed);
        }
    }
    if cfg.dead_code {
        dead_code(&mut f);
        check(&f, "dead-code")?;
    }
    frame_layout(&mut f, cfg);
    check(&f, "frame-layout")?;
    Ok(f)
}

fn arities(unit: &SourceUnit) -> HashMap<Symbol, usize> {
    unit.functions.iter().map(|p| (p.name, p.arg_count)).collect()
}

/// Compiles every function and the top-level program of `unit`.
pub fn run_pipeline(unit: &SourceUnit, cfg: &SpeedConfig) -> Result<CompUnit, PipelineError> {
    let defs = arities(unit);
    let functions = unit
        .functions
        .iter()
        .map(|p| compile_function(p, &defs, cfg, Stage::Final))
        .collect::<Result<Vec<_>, _>>()?;
    let top = compile_function(&unit.top_level, &defs, cfg, Stage::Final)?;
    Ok(CompUnit::new(&unit.path, functions, top))
}

/// Runs the pipeline up to `stage`, returning functions then the
/// top-level program.
pub fn run_to_stage(unit: &SourceUnit, cfg: &SpeedConfig, stage: Stage) -> Result<Vec<LFunc>, PipelineError> {
    let defs = arities(unit);
    unit.functions
        .iter()
        .chain(std::iter::once(&unit.top_level))
        .map(|p| compile_function(p, &defs, cfg, stage))
        .collect()
}
