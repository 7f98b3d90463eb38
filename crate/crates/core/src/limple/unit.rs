use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Insn, LFunc};
use crate::native::shim;
use crate::object::prims::{registry, CallStyle};
use crate::object::{print_datum, read_datum, Datum, Symbol};

pub const COMPILER_VERSION: &str = concat!("minilisp ", env!("CARGO_PKG_VERSION"));

/// Digest of everything compiled code depends on at the boundary: the
/// compiler version, the primitive registry and the runtime header.
pub fn abi_hash() -> String {
    let mut h = Sha256::new();
    h.update(COMPILER_VERSION.as_bytes());
    h.update([0]);
    for s in registry() {
        h.update(s.name.as_bytes());
        h.update(match s.style() {
            CallStyle::Fixed => format!(":fixed:{}", s.max_args.unwrap_or(0)),
            CallStyle::Spread => ":spread".to_string(),
        });
        h.update([b'\n']);
    }
    h.update(shim::header().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompUnit {
    pub path: String,
    pub functions: Vec<LFunc>,
    pub top_level: LFunc,
    /// Deduplicated constants referenced by the unit's code.
    pub data_relocs: Vec<Datum>,
    pub abi_hash: String,
}

impl CompUnit {
    pub fn new(path: &str, functions: Vec<LFunc>, top_level: LFunc) -> CompUnit {
        let mut unit = CompUnit {
            path: path.to_string(),
            functions,
            top_level,
            data_relocs: Vec::new(),
            abi_hash: abi_hash(),
        };
        unit.data_relocs = unit.gather_relocs();
        unit
    }

    /// Collects constants in first-use order: functions first, then the
    /// top-level code, each walked in reverse postorder.
    fn gather_relocs(&self) -> Vec<Datum> {
        let mut out = Vec::new();
        let mut seen = HashMap::new();
        let mut add = |d: &Datum| {
            if !seen.contains_key(d) {
                seen.insert(d.clone(), out.len());
                out.push(d.clone());
            }
        };
        for f in self.functions.iter().chain(std::iter::once(&self.top_level)) {
            for b in f.rpo() {
                for insn in &f.block(b).insns {
                    if let Insn::SetImm { imm, .. } = insn {
                        add(imm);
                    }
                    for v in insn.uses() {
                        let m = f.var(v);
                        if m.is_immediate() {
                            add(&m.constant);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn reloc_index(&self, d: &Datum) -> Option<usize> {
        self.data_relocs.iter().position(|r| r == d)
    }

    pub fn function(&self, name: Symbol) -> Option<&LFunc> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn defines(&self, name: Symbol) -> bool {
        self.function(name).is_some()
    }

    /// The reader-serializable text of the constant vector.
    pub fn constants_text(&self) -> String {
        print_datum(&Datum::list(self.data_relocs.clone()))
    }

    pub fn parse_constants(text: &str) -> Result<Vec<Datum>, String> {
        let d = read_datum(text).map_err(|e| e.to_string())?;
        d.as_list().map(<[Datum]>::to_vec).ok_or_else(|| "constants text is not a list".to_string())
    }
}
