//! Dataset files and atomic writes.
//!
//! IQ datasets are CSV with header `label,i,q`. Raw datasets are a binary
//! stream of records `label: u8, n: u32 LE, samples: i16 LE x n`, with each
//! sample rounded to the nearest ADC code.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::iqsim::{IQShot, Label, RawShot};

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn iq_csv_bytes(shots: &[IQShot]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in shots {
        w.serialize(s)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn write_iq_csv(path: &Path, shots: &[IQShot]) -> Result<()> {
    write_atomic(path, &iq_csv_bytes(shots)?)
}

pub fn read_iq_csv<R: Read>(input: R) -> Result<Vec<IQShot>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn load_iq_csv(path: &Path) -> Result<Vec<IQShot>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_iq_csv(f)
}

pub fn raw_bytes(shots: &[RawShot]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in shots {
        out.push(s.label.as_u8());
        out.extend_from_slice(&(s.samples.len() as u32).to_le_bytes());
        for &x in &s.samples {
            out.extend_from_slice(&(x.round().clamp(-32768.0, 32767.0) as i16).to_le_bytes());
        }
    }
    out
}

pub fn write_raw(path: &Path, shots: &[RawShot]) -> Result<()> {
    write_atomic(path, &raw_bytes(shots))
}

/// Reads raw records; `relaxed_at` is not stored and comes back as `None`.
pub fn read_raw(bytes: &[u8]) -> Result<Vec<RawShot>> {
    let mut shots = Vec::new();
    let mut pos = 0usize;
    let bad = |pos: usize, msg: &str| Error::Parse { line: 0, offset: pos, msg: msg.into() };
    while pos < bytes.len() {
        let label = match bytes[pos] {
            0 => Label::Ground,
            1 => Label::Excited,
            _ => return Err(bad(pos, "label byte must be 0 or 1")),
        };
        let len_bytes = bytes.get(pos + 1..pos + 5).ok_or_else(|| bad(pos, "truncated record header"))?;
        let n = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(pos + 5..pos + 5 + 2 * n)
            .ok_or_else(|| bad(pos, "truncated sample block"))?;
        let samples = body
            .chunks_exact(2)
            .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])))
            .collect();
        shots.push(RawShot { samples, label, relaxed_at: None });
        pos += 5 + 2 * n;
    }
    Ok(shots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iq_csv_roundtrip() {
        let shots = vec![
            IQShot { label: Label::Ground, i: -1.5, q: 2.25 },
            IQShot { label: Label::Excited, i: 1e6, q: -3.0e-3 },
        ];
        let bytes = iq_csv_bytes(&shots).unwrap();
        assert!(bytes.starts_with(b"label,i,q\n0,"));
        assert_eq!(read_iq_csv(&bytes[..]).unwrap(), shots);
    }

    #[test]
    fn raw_roundtrip_rounds_samples() {
        let shots = vec![
            RawShot { samples: vec![0.4, -0.6, 8191.0, -8191.0], label: Label::Excited, relaxed_at: Some(3) },
            RawShot { samples: vec![], label: Label::Ground, relaxed_at: None },
        ];
        let back = read_raw(&raw_bytes(&shots)).unwrap();
        assert_eq!(back[0].samples, vec![0.0, -1.0, 8191.0, -8191.0]);
        assert_eq!(back[0].label, Label::Excited);
        assert!(back[1].samples.is_empty());
        assert!(read_raw(&raw_bytes(&shots)[..7]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
