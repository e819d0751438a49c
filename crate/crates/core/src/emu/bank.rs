//! Per-qubit parameter bank stored as a line-oriented text file.
//!
//! Grammar (one item per line, `\n` terminated):
//!
//! ```text
//! rtdisc-bank 1 <count>
//! index <id> <offset:010> <len:010> <line:08>      (count lines)
//! qubit <id> arch <s0,s1,...>                      (entry start)
//! format <act_int> <act_frac> <weight_int> <weight_frac>
//! <weight word hex>                                (layer-major, row-major)
//! <bias word hex>                                  (layer-major)
//! scaler <mu_i> <n_i> <mu_q> <n_q>
//! lut <size> <lo hex> <hi hex>
//! <entry hex>                                      (size lines)
//! <threshold hex>                                  (size - 1 lines)
//! checksum <first 16 hex digits of sha256>         (entry end)
//! ```
//!
//! Hex words are two's complement, zero-padded to the width of their format.
//! `offset`/`len` locate an entry in bytes, `line` is its 1-based first line,
//! so a single entry can be loaded by seeking. The checksum covers the entry
//! from its `qubit` line up to, not including, the `checksum` line.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{FixedScaler, Formats, QuantizedModel, MAX_QUBITS};
use crate::error::{Error, Result};
use crate::fnn::Architecture;
use crate::fxp::{QFormat, SigmoidLut};

const MAGIC: &str = "rtdisc-bank";
const VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn render_entry(m: &QuantizedModel) -> String {
    let mut body = String::new();
    let sizes: Vec<String> = m.arch.layer_sizes.iter().map(|s| s.to_string()).collect();
    body.push_str(&format!("qubit {} arch {}\n", m.qubit_id, sizes.join(",")));
    let (a, w) = (m.formats.act, m.formats.weight);
    body.push_str(&format!("format {} {} {} {}\n", a.int_bits, a.frac_bits, w.int_bits, w.frac_bits));
    for word in m.weights.iter().flatten() {
        body.push_str(&w.to_hex(*word));
        body.push('\n');
    }
    for word in m.biases.iter().flatten() {
        body.push_str(&a.to_hex(*word));
        body.push('\n');
    }
    let s = &m.scaler;
    body.push_str(&format!("scaler {} {} {} {}\n", s.mu_i, s.n_i, s.mu_q, s.n_q));
    let lf = m.lut.format;
    body.push_str(&format!(
        "lut {} {} {}\n",
        m.lut.len(),
        lf.to_hex(m.lut.input_lo),
        lf.to_hex(m.lut.input_hi)
    ));
    for word in m.lut.entries.iter().chain(&m.lut.thresholds) {
        body.push_str(&lf.to_hex(*word));
        body.push('\n');
    }
    let sum = checksum(body.as_bytes());
    body.push_str(&format!("checksum {sum}\n"));
    body
}

/// Serializes up to eight models with distinct qubit ids.
pub fn bank_to_string(models: &[QuantizedModel]) -> Result<String> {
    if models.len() > usize::from(MAX_QUBITS) {
        return Err(Error::BankFull(models.len()));
    }
    if models.is_empty() {
        return Err(Error::Empty("model bank"));
    }
    let mut seen = [false; MAX_QUBITS as usize];
    for m in models {
        m.validate()?;
        let slot = &mut seen[usize::from(m.qubit_id)];
        if *slot {
            return Err(Error::DuplicateQubit(m.qubit_id));
        }
        *slot = true;
    }
    let entries: Vec<String> = models.iter().map(render_entry).collect();
    let header = format!("{MAGIC} {VERSION} {}\n", models.len());
    let index_line_len = "index 0 0000000000 0000000000 00000000\n".len();
    let mut offset = header.len() + models.len() * index_line_len;
    let mut line = 2 + models.len();
    let mut out = header;
    for (m, e) in models.iter().zip(&entries) {
        out.push_str(&format!("index {} {:010} {:010} {:08}\n", m.qubit_id, offset, e.len(), line));
        offset += e.len();
        line += e.lines().count();
    }
    for e in &entries {
        out.push_str(e);
    }
    Ok(out)
}

pub fn bank_store(models: &[QuantizedModel], path: &Path) -> Result<()> {
    let text = bank_to_string(models)?;
    crate::io::write_atomic(path, text.as_bytes())
}

struct IndexEntry {
    qubit: u8,
    offset: usize,
    len: usize,
    line: usize,
}

/// Line cursor reporting absolute line numbers and byte offsets.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    base_offset: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, base_offset: usize, first_line: usize) -> Self {
        Cursor { text, pos: 0, base_offset, line: first_line - 1 }
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, offset: self.base_offset + at, msg: msg.into() }
    }

    /// Next line and its start position within `text`.
    fn next(&mut self) -> Result<(&'a str, usize)> {
        if self.pos >= self.text.len() {
            self.line += 1;
            return Err(self.err(self.pos, "unexpected end of entry"));
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let end = rest.find('\n').ok_or_else(|| self.err(start, "missing line terminator"))?;
        self.pos = start + end + 1;
        self.line += 1;
        Ok((&rest[..end], start))
    }

    /// Next line split into a keyword check and its fields.
    fn keyed(&mut self, key: &str, n_fields: usize) -> Result<(Vec<&'a str>, usize)> {
        let (line, start) = self.next()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(self.err(start, format!("expected `{key}` line")));
        }
        let fields: Vec<&str> = parts.collect();
        if fields.len() != n_fields {
            return Err(self.err(start, format!("`{key}` takes {n_fields} fields, found {}", fields.len())));
        }
        Ok((fields, start))
    }

    fn field<T: std::str::FromStr>(&self, line_start: usize, line: &str, field: &str, what: &str) -> Result<T> {
        let at = line_start + (field.as_ptr() as usize - line.as_ptr() as usize);
        field.parse().map_err(|_| self.err(at, format!("invalid {what} `{field}`")))
    }

    fn hex(&mut self, fmt: QFormat) -> Result<i64> {
        let (line, start) = self.next()?;
        self.hex_field(start, line, fmt)
    }

    fn hex_field(&self, start: usize, field: &str, fmt: QFormat) -> Result<i64> {
        match fmt.from_hex(field) {
            Ok(v) => Ok(v),
            Err(msg) => {
                let bad = field
                    .char_indices()
                    .find(|(_, c)| !c.is_ascii_hexdigit() || c.is_ascii_uppercase())
                    .map_or(0, |(i, _)| i);
                Err(self.err(start + bad, msg))
            }
        }
    }
}

fn field_at<T: std::str::FromStr>(c: &Cursor, start: usize, line_fields: &[&str], k: usize, what: &str) -> Result<T> {
    let field = line_fields[k];
    let at = start + (field.as_ptr() as usize - c.text[start..].as_ptr() as usize);
    field.parse().map_err(|_| c.err(at, format!("invalid {what} `{field}`")))
}

fn parse_format(c: &Cursor, start: usize, f: &[&str], k: usize) -> Result<QFormat> {
    let int_bits: u32 = field_at(c, start, f, k, "integer bit count")?;
    let frac_bits: u32 = field_at(c, start, f, k + 1, "fraction bit count")?;
    if int_bits == 0 || int_bits + frac_bits > 32 {
        return Err(c.err(start, format!("unsupported word format Q{int_bits}.{frac_bits}")));
    }
    Ok(QFormat::new(int_bits, frac_bits))
}

fn parse_entry(text: &str, base_offset: usize, first_line: usize) -> Result<QuantizedModel> {
    let mut c = Cursor::new(text, base_offset, first_line);

    let (f, start) = c.keyed("qubit", 3)?;
    let qubit_id: u8 = field_at(&c, start, &f, 0, "qubit id")?;
    if qubit_id >= MAX_QUBITS {
        return Err(c.err(start, format!("qubit id {qubit_id} must be below {MAX_QUBITS}")));
    }
    if f[1] != "arch" {
        return Err(c.err(start, "expected `arch` after qubit id"));
    }
    let sizes = f[2]
        .split(',')
        .map(|s| c.field::<usize>(start, &text[start..], s, "layer size"))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(sizes).map_err(|e| c.err(start, e.to_string()))?;

    let (f, start) = c.keyed("format", 4)?;
    let formats = Formats {
        act: parse_format(&c, start, &f, 0)?,
        weight: parse_format(&c, start, &f, 2)?,
    };

    let layers: Vec<(usize, usize)> = arch.layers().collect();
    let mut weights = Vec::with_capacity(layers.len());
    for &(fi, fo) in &layers {
        weights.push((0..fi * fo).map(|_| c.hex(formats.weight)).collect::<Result<Vec<_>>>()?);
    }
    let mut biases = Vec::with_capacity(layers.len());
    for &(_, fo) in &layers {
        biases.push((0..fo).map(|_| c.hex(formats.act)).collect::<Result<Vec<_>>>()?);
    }

    let (f, start) = c.keyed("scaler", 4)?;
    let scaler = FixedScaler {
        mu_i: field_at(&c, start, &f, 0, "mu_i")?,
        n_i: field_at(&c, start, &f, 1, "n_i")?,
        mu_q: field_at(&c, start, &f, 2, "mu_q")?,
        n_q: field_at(&c, start, &f, 3, "n_q")?,
    };

    let (f, start) = c.keyed("lut", 3)?;
    let size: usize = field_at(&c, start, &f, 0, "table size")?;
    if !(2..=1 << 16).contains(&size) {
        return Err(c.err(start, format!("table size {size} out of range")));
    }
    let lf = QFormat::Q10_17;
    let at = |k: usize| start + (f[k].as_ptr() as usize - text[start..].as_ptr() as usize);
    let input_lo = c.hex_field(at(1), f[1], lf)?;
    let input_hi = c.hex_field(at(2), f[2], lf)?;
    let entries = (0..size).map(|_| c.hex(lf)).collect::<Result<Vec<_>>>()?;
    let thresholds = (1..size).map(|_| c.hex(lf)).collect::<Result<Vec<_>>>()?;
    let body_end = c.pos;

    let (f, start) = c.keyed("checksum", 1)?;
    let expected = checksum(&text.as_bytes()[..body_end]);
    if f[0] != expected {
        return Err(Error::Checksum {
            qubit: qubit_id,
            start: base_offset,
            end: base_offset + text.len(),
        });
    }
    if c.pos != text.len() {
        return Err(c.err(c.pos.max(start), "trailing data after checksum"));
    }

    let model = QuantizedModel {
        qubit_id,
        arch,
        formats,
        weights,
        biases,
        scaler,
        lut: SigmoidLut { format: lf, input_lo, input_hi, entries, thresholds },
    };
    model.validate().map_err(|e| Error::Parse { line: first_line, offset: base_offset, msg: e.to_string() })?;
    Ok(model)
}

fn read_index<R: BufRead>(r: &mut R) -> Result<Vec<IndexEntry>> {
    let mut offset = 0usize;
    let mut read_line = |r: &mut R, line_no: usize| -> Result<(String, usize)> {
        let mut s = String::new();
        let n = r.read_line(&mut s).map_err(|e| Error::Parse {
            line: line_no,
            offset,
            msg: e.to_string(),
        })?;
        let start = offset;
        offset += n;
        if !s.ends_with('\n') {
            return Err(Error::Parse { line: line_no, offset: start, msg: "truncated header".into() });
        }
        s.pop();
        Ok((s, start))
    };

    let (header, _) = read_line(r, 1)?;
    let mut f = header.split(' ');
    let bad = |msg: &str| Error::Parse { line: 1, offset: 0, msg: msg.into() };
    if f.next() != Some(MAGIC) {
        return Err(bad("not a model bank file"));
    }
    if f.next() != Some("1") {
        return Err(bad("unsupported bank version"));
    }
    let count: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("invalid model count"))?;
    if count == 0 || count > usize::from(MAX_QUBITS) {
        return Err(bad("model count must be 1..=8"));
    }

    let mut index = Vec::with_capacity(count);
    for k in 0..count {
        let line_no = k + 2;
        let (line, start) = read_line(r, line_no)?;
        let f: Vec<&str> = line.split(' ').collect();
        let parse = |i: usize| -> Result<usize> {
            f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line: line_no,
                offset: start,
                msg: format!("malformed index line `{line}`"),
            })
        };
        if f.len() != 5 || f[0] != "index" {
            return Err(Error::Parse { line: line_no, offset: start, msg: format!("malformed index line `{line}`") });
        }
        let qubit = parse(1)?;
        let entry = IndexEntry {
            qubit: u8::try_from(qubit).ok().filter(|&q| q < MAX_QUBITS).ok_or_else(|| Error::Parse {
                line: line_no,
                offset: start,
                msg: format!("qubit id {qubit} out of range"),
            })?,
            offset: parse(2)?,
            len: parse(3)?,
            line: parse(4)?,
        };
        if index.iter().any(|e: &IndexEntry| e.qubit == entry.qubit) {
            return Err(Error::DuplicateQubit(entry.qubit));
        }
        index.push(entry);
    }
    Ok(index)
}

fn load_entry<R: Read + Seek>(r: &mut R, e: &IndexEntry) -> Result<QuantizedModel> {
    let bad_len = |msg: String| Error::Parse { line: e.line, offset: e.offset, msg };
    r.seek(SeekFrom::Start(e.offset as u64)).map_err(|err| bad_len(err.to_string()))?;
    let mut buf = vec![0u8; e.len];
    r.read_exact(&mut buf)
        .map_err(|_| bad_len(format!("entry for qubit {} extends past end of file", e.qubit)))?;
    let text = match std::str::from_utf8(&buf) {
        Ok(t) => t,
        Err(u) => {
            return Err(Error::Parse {
                line: e.line,
                offset: e.offset + u.valid_up_to(),
                msg: "invalid utf-8".into(),
            })
        }
    };
    let m = parse_entry(text, e.offset, e.line)?;
    if m.qubit_id != e.qubit {
        return Err(bad_len(format!("index names qubit {} but entry holds {}", e.qubit, m.qubit_id)));
    }
    Ok(m)
}

/// Loads one model by qubit id, reading only the header and that entry.
pub fn bank_load(path: &Path, qubit_id: u8) -> Result<QuantizedModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let index = read_index(&mut r)?;
    let e = index.iter().find(|e| e.qubit == qubit_id).ok_or(Error::MissingQubit(qubit_id))?;
    load_entry(&mut r, e)
}

/// Loads every model in index order.
pub fn bank_load_all(path: &Path) -> Result<Vec<QuantizedModel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let index = read_index(&mut r)?;
    index.iter().map(|e| load_entry(&mut r, e)).collect()
}

/// Parses a bank held in memory.
pub fn bank_from_str(text: &str, qubit_id: u8) -> Result<QuantizedModel> {
    let mut r = std::io::Cursor::new(text.as_bytes());
    let index = read_index(&mut r)?;
    let e = index.iter().find(|e| e.qubit == qubit_id).ok_or(Error::MissingQubit(qubit_id))?;
    load_entry(&mut r, e)
}
