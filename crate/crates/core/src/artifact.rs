//! Line-delimited artifact files.
//!
//! Every on-disk artifact is UTF-8 JSON lines: a header object carrying
//! `format` and `version` (plus format-specific metadata), followed by one
//! record per line. Floats are written in shortest round-trip form, so equal
//! inputs produce byte-identical files.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header<M> {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: M,
}

/// Writes a header line followed by one JSON record per line.
pub fn write_jsonl<'a, W, M, R, I>(mut out: W, format: &str, meta: &M, records: I) -> Result<()>
where
    W: Write,
    M: Serialize,
    R: Serialize + 'a,
    I: IntoIterator<Item = &'a R>,
{
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
        meta,
    };
    serde_json::to_writer(&mut out, &header).map_err(io_err)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(io_err)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Serializes an artifact into memory.
pub fn to_jsonl_bytes<'a, M, R, I>(format: &str, meta: &M, records: I) -> Result<Vec<u8>>
where
    M: Serialize,
    R: Serialize + 'a,
    I: IntoIterator<Item = &'a R>,
{
    let mut buf = Vec::new();
    write_jsonl(&mut buf, format, meta, records)?;
    Ok(buf)
}

/// Parses an artifact, checking the header's format tag and version.
///
/// Blank lines are ignored. Never panics on malformed input.
pub fn read_jsonl<M, R>(bytes: &[u8], format: &'static str) -> Result<(M, Vec<R>)>
where
    M: DeserializeOwned,
    R: DeserializeOwned,
{
    let mut lines = bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace));
    let (_, first) = lines.next().ok_or(Error::Format {
        what: format,
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: Header<M> = serde_json::from_slice(first).map_err(|e| Error::Format {
        what: format,
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.format != format {
        return Err(Error::Incompatible(format!(
            "expected a {format} file, found {}",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "{format} version {} is not supported (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let rec = serde_json::from_slice(line).map_err(|e| Error::Format {
            what: format,
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok((header.meta, records))
}

pub(crate) fn format_err(what: &'static str, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what,
        line,
        msg: msg.into(),
    }
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Meta {
        n: usize,
    }

    #[test]
    fn header_and_records_round_trip() {
        let recs = vec![vec![0.1f64, 1.0 / 3.0], vec![-2.5e-300]];
        let bytes = to_jsonl_bytes("demo", &Meta { n: 2 }, &recs).unwrap();
        let (meta, back): (Meta, Vec<Vec<f64>>) = read_jsonl(&bytes, "demo").unwrap();
        assert_eq!(meta, Meta { n: 2 });
        assert_eq!(back, recs);
    }

    #[test]
    fn wrong_format_or_version_is_rejected() {
        let bytes = to_jsonl_bytes::<_, u8, _>("demo", &Meta { n: 0 }, &[]).unwrap();
        let err = read_jsonl::<Meta, u8>(&bytes, "other").unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
        let bumped = br#"{"format":"demo","version":99,"n":0}"#;
        let err = read_jsonl::<Meta, u8>(bumped, "demo").unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
    }

    #[test]
    fn empty_and_garbage_inputs_error() {
        assert!(read_jsonl::<Meta, u8>(b"", "demo").is_err());
        assert!(read_jsonl::<Meta, u8>(b"\xff\xfe", "demo").is_err());
        let bad = b"{\"format\":\"demo\",\"version\":1,\"n\":1}\n[1,2\n";
        let err = read_jsonl::<Meta, Vec<u8>>(bad, "demo").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }
}
