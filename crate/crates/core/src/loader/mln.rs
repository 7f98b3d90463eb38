//! The `.mln` container.
//!
//! Layout, integers little-endian: magic | version u32 | hash-len u32 |
//! hash | kind u8 | constants-len u64 | constants text | payload-len u64 |
//! payload. The hash signs the runtime signature together with every
//! byte after it, so any edit to the body is caught.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LoadError;
use crate::limple::{abi_hash, serialize_unit, CompUnit};

pub const MAGIC: &[u8; 4] = b"MLN1";
pub const MLN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    /// Serialized LIMPLE, run by the register VM.
    Limple,
    /// A shared object built from emitted C.
    Native,
}

impl UnitKind {
    fn byte(self) -> u8 {
        match self {
            UnitKind::Limple => 0,
            UnitKind::Native => 1,
        }
    }

    fn from_byte(b: u8) -> Option<UnitKind> {
        match b {
            0 => Some(UnitKind::Limple),
            1 => Some(UnitKind::Native),
            _ => None,
        }
    }
}

/// Payload of a native unit: the functions it exports and the object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NativePayload {
    pub functions: Vec<(String, usize)>,
    pub object: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlnFile {
    pub version: u32,
    pub hash: String,
    pub kind: UnitKind,
    pub constants_text: String,
    pub payload: Vec<u8>,
}

/// Signature of a unit body under the current runtime.
pub fn signature(kind: UnitKind, constants_text: &str, payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(abi_hash().as_bytes());
    h.update([kind.byte()]);
    h.update((constants_text.len() as u64).to_le_bytes());
    h.update(constants_text.as_bytes());
    h.update((payload.len() as u64).to_le_bytes());
    h.update(payload);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl MlnFile {
    fn signed(kind: UnitKind, constants_text: String, payload: Vec<u8>) -> MlnFile {
        let hash = signature(kind, &constants_text, &payload);
        MlnFile { version: MLN_VERSION, hash, kind, constants_text, payload }
    }

    pub fn limple(unit: &CompUnit) -> MlnFile {
        MlnFile::signed(UnitKind::Limple, unit.constants_text(), serialize_unit(unit))
    }

    pub fn native(unit: &CompUnit, object: Vec<u8>) -> MlnFile {
        let functions = unit.functions.iter().map(|f| (f.name.name().to_string(), f.arg_count)).collect();
        let payload = NativePayload { functions, object };
        let bytes = bincode::serialize(&payload).expect("payload is serializable");
        MlnFile::signed(UnitKind::Native, unit.constants_text(), bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.constants_text.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.hash.as_bytes());
        out.push(self.kind.byte());
        out.extend_from_slice(&(self.constants_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.constants_text.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses the container framing. The signature is not checked here.
    pub fn parse(bytes: &[u8]) -> Result<MlnFile, LoadError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(LoadError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != MLN_VERSION {
            return Err(LoadError::Version(version));
        }
        let hash_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let hash = std::str::from_utf8(r.take(hash_len)?).map_err(|_| LoadError::HashMismatch)?.to_string();
        let kind = UnitKind::from_byte(r.take(1)?[0]).ok_or(LoadError::Corrupt("unknown unit kind".into()))?;
        let clen = r.len()?;
        let constants_text = std::str::from_utf8(r.take(clen)?)
            .map_err(|_| LoadError::Constants("constants text is not UTF-8".into()))?
            .to_string();
        let plen = r.len()?;
        let payload = r.take(plen)?.to_vec();
        if r.pos != bytes.len() {
            return Err(LoadError::Corrupt("trailing bytes".into()));
        }
        Ok(MlnFile { version, hash, kind, constants_text, payload })
    }

    pub fn verify_signature(&self) -> Result<(), LoadError> {
        if signature(self.kind, &self.constants_text, &self.payload) == self.hash {
            Ok(())
        } else {
            Err(LoadError::HashMismatch)
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LoadError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(LoadError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self) -> Result<usize, LoadError> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(n).map_err(|_| LoadError::Truncated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MlnFile {
        MlnFile::signed(UnitKind::Limple, "(1 2)".into(), vec![1, 2, 3])
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let back = MlnFile::parse(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        back.verify_signature().unwrap();
    }

    #[test]
    fn framing_errors() {
        let bytes = sample().to_bytes();
        assert!(matches!(MlnFile::parse(&bytes[..bytes.len() - 1]), Err(LoadError::Truncated)));
        assert!(matches!(MlnFile::parse(b"ELF\x7f"), Err(LoadError::BadMagic)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(MlnFile::parse(&extra), Err(LoadError::Corrupt(_))));
    }

    #[test]
    fn payload_edit_breaks_signature() {
        let mut m = sample();
        m.payload[0] ^= 1;
        assert!(matches!(m.verify_signature(), Err(LoadError::HashMismatch)));
    }
}
