//! Process-wide symbol interning.
//!
//! Symbols are small indices into a global, append-only name table. Index 0
//! is `nil` and index 1 is `t`, so both have fixed tagged encodings.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol(u32);

struct Interner {
    names: Vec<&'static str>,
    index: HashMap<&'static str, u32>,
}

fn interner() -> &'static RwLock<Interner> {
    static INTERNER: OnceLock<RwLock<Interner>> = OnceLock::new();
    INTERNER.get_or_init(|| {
        let mut interner = Interner { names: Vec::new(), index: HashMap::new() };
        for name in ["nil", "t"] {
            let id = interner.names.len() as u32;
            interner.names.push(name);
            interner.index.insert(name, id);
        }
        RwLock::new(interner)
    })
}

impl Symbol {
    pub const NIL: Symbol = Symbol(0);
    pub const T: Symbol = Symbol(1);

    pub fn intern(name: &str) -> Symbol {
        if let Some(&id) = interner().read().unwrap().index.get(name) {
            return Symbol(id);
        }
        let mut table = interner().write().unwrap();
        if let Some(&id) = table.index.get(name) {
            return Symbol(id);
        }
        let id = table.names.len() as u32;
        let name: &'static str = Box::leak(name.to_owned().into_boxed_str());
        table.names.push(name);
        table.index.insert(name, id);
        Symbol(id)
    }

    pub fn name(self) -> &'static str {
        interner().read().unwrap().names[self.0 as usize]
    }

    pub fn index(self) -> u32 {
        self.0
    }

    /// Rebuilds a symbol from an index previously returned by [`Symbol::index`].
    pub(crate) fn from_index(index: u32) -> Symbol {
        Symbol(index)
    }

    pub fn is_nil(self) -> bool {
        self == Symbol::NIL
    }
}

// Ordering is by name so that anything sorted by symbol is stable across
// processes (indices depend on interning order).
impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.0 == other.0 {
            Ordering::Equal
        } else {
            self.name().cmp(other.name())
        }
    }
}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(Symbol::intern(&name))
    }
}
