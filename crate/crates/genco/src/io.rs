//! Shared file plumbing: atomic writes and the header+payload blob format
//! used by dataset files and checkpoints (one JSON header line, then raw
//! little-endian f64 values).

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

/// Writes via a sibling temp file and renames into place, so readers never
/// observe a partial file. The temp file is removed on failure.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp-partial");
    let write = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    })();
    if let Err(e) = write {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path)
}

pub fn write_blob(path: &Path, header: &serde_json::Value, payload: &[f64]) -> io::Result<()> {
    let mut bytes = serde_json::to_string(header)?.into_bytes();
    bytes.push(b'\n');
    bytes.reserve(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_blob(path: &Path) -> io::Result<(serde_json::Value, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing header line"))?;
    let header: serde_json::Value = serde_json::from_slice(&bytes[..split])?;
    let body = &bytes[split + 1..];
    if body.len() % 8 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("payload length {} is not a multiple of 8", body.len()),
        ));
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn blob_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let header = json!({"kind": "test", "shape": [2, 2]});
        let payload = vec![1.5, -0.25, f64::MIN_POSITIVE, 1e300];
        write_blob(&path, &header, &payload).unwrap();
        let (h, p) = read_blob(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            payload.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let mut bytes = b"{}\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_blob(&path).is_err());
    }
}
