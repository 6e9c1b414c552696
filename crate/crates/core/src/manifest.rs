//! Text header shared by the dataset and checkpoint files: a magic line,
//! `key=value` lines in sorted key order, then a line `end`, then raw bytes.

use std::collections::BTreeMap;

pub type Manifest = BTreeMap<String, String>;

const END: &str = "end";

pub fn encode_header(magic: &str, manifest: &Manifest) -> Vec<u8> {
    let mut s = String::new();
    s.push_str(magic);
    s.push('\n');
    for (k, v) in manifest {
        debug_assert!(!k.contains(['=', '\n']) && !v.contains('\n'));
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s.push_str(END);
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HeaderError {
    #[error("missing magic line `{0}`")]
    BadMagic(String),
    #[error("header is not terminated by `end`")]
    Unterminated,
    #[error("malformed header line `{0}`")]
    BadLine(String),
    #[error("header is not valid UTF-8")]
    Encoding,
}

/// Split `bytes` into its manifest and payload.
pub fn decode_header<'a>(magic: &str, bytes: &'a [u8]) -> Result<(Manifest, &'a [u8]), HeaderError> {
    let mut pos = 0;
    let mut manifest = Manifest::new();
    let mut first = true;
    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(if first { HeaderError::BadMagic(magic.into()) } else { HeaderError::Unterminated });
        };
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| HeaderError::Encoding)?;
        pos += nl + 1;
        if first {
            if line != magic {
                return Err(HeaderError::BadMagic(magic.into()));
            }
            first = false;
            continue;
        }
        if line == END {
            return Ok((manifest, &bytes[pos..]));
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HeaderError::BadLine(line.into()))?;
        manifest.insert(k.to_string(), v.to_string());
    }
}

pub fn f64s_to_le(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode little-endian float64s; `bytes.len()` must be a multiple of 8.
pub fn le_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let mut m = Manifest::new();
        m.insert("b".into(), "2".into());
        m.insert("a".into(), "x=y".into());
        let mut bytes = encode_header("magic 1", &m);
        bytes.extend_from_slice(&[1, 2, 3]);
        let (back, rest) = decode_header("magic 1", &bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(rest, &[1, 2, 3]);
        assert!(std::str::from_utf8(&bytes[..13]).unwrap().starts_with("magic 1\na=x=y"));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_header("m", b"x\nend\n"), Err(HeaderError::BadMagic(_))));
        assert_eq!(decode_header("m", b"m\na=1\n"), Err(HeaderError::Unterminated));
        assert!(matches!(decode_header("m", b"m\nnoeq\nend\n"), Err(HeaderError::BadLine(_))));
    }
}
