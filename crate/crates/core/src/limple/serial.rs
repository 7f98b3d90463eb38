use thiserror::Error;

use super::CompUnit;

const MAGIC: &[u8; 4] = b"LIMP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SerialError {
    #[error("not a serialized unit (bad magic)")]
    BadMagic,
    #[error("unsupported unit format version {0}")]
    Version(u32),
    #[error("truncated unit payload")]
    Truncated,
    #[error("corrupt unit payload: {0}")]
    Corrupt(String),
}

pub fn serialize_unit(u: &CompUnit) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend(bincode::serialize(u).expect("units are always serializable"));
    out
}

pub fn deserialize_unit(bytes: &[u8]) -> Result<CompUnit, SerialError> {
    if bytes.len() < 8 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            SerialError::BadMagic
        } else {
            SerialError::Truncated
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(SerialError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(SerialError::Version(version));
    }
    let payload = &bytes[8..];
    let unit: CompUnit = bincode::deserialize(payload).map_err(|e| match *e {
        bincode::ErrorKind::Io(ref io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            SerialError::Truncated
        }
        other => SerialError::Corrupt(other.to_string()),
    })?;
    if bincode::serialized_size(&unit).ok() != Some(payload.len() as u64) {
        return Err(SerialError::Corrupt("trailing bytes".into()));
    }
    Ok(unit)
}
