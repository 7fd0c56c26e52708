//! On-disk formats shared by datasets and the command line.
//!
//! Grid files (`MFLD1`, little-endian):
//!
//! ```text
//! "MFLD1" | u32 version | u64 rows | u64 cols | f64 × rows·cols | u32 CRC32 of the payload
//! ```
//!
//! Manifests are plain `key=value` lines; blank lines and `#` comments are
//! skipped.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;

const GRID_MAGIC: &[u8; 5] = b"MFLD1";
const GRID_VERSION: u32 = 1;
const GRID_HEADER: usize = 5 + 4 + 8 + 8;

pub fn write_grid(field: &ScalarField, w: &mut impl Write) -> Result<()> {
    let payload: Vec<u8> = field.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(GRID_MAGIC)?;
    w.write_all(&GRID_VERSION.to_le_bytes())?;
    w.write_all(&(field.rows() as u64).to_le_bytes())?;
    w.write_all(&(field.cols() as u64).to_le_bytes())?;
    w.write_all(&payload)?;
    w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_grid(r: &mut impl Read) -> Result<ScalarField> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < GRID_HEADER + 4 {
        return Err(Error::Corrupt("grid file is truncated".into()));
    }
    if &buf[..5] != GRID_MAGIC {
        return Err(Error::Corrupt("bad grid magic".into()));
    }
    let version = u32::from_le_bytes(buf[5..9].try_into().expect("4 bytes"));
    if version != GRID_VERSION {
        return Err(Error::Corrupt(format!("unsupported grid version {version}")));
    }
    let rows = u64::from_le_bytes(buf[9..17].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(buf[17..25].try_into().expect("8 bytes"));
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Corrupt("implausible grid size".into()))?;
    if buf.len() != GRID_HEADER + n + 4 {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header says {rows}x{cols}",
            buf.len().saturating_sub(GRID_HEADER + 4)
        )));
    }
    let payload = &buf[GRID_HEADER..GRID_HEADER + n];
    let crc = u32::from_le_bytes(buf[GRID_HEADER + n..].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != crc {
        return Err(Error::Corrupt("grid checksum mismatch".into()));
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    ScalarField::from_vec(rows as usize, cols as usize, data)
}

pub fn save_grid(field: &ScalarField, path: &Path) -> Result<()> {
    write_grid(field, &mut BufWriter::new(File::create(path)?))
}

pub fn load_grid(path: &Path) -> Result<ScalarField> {
    read_grid(&mut BufReader::new(File::open(path)?))
}

/// Ordered `key=value` record. Keys are unique; setting an existing key
/// replaces its value in place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parsed value of a required key.
    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("manifest is missing `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if m.get(k).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            m.set(k, v.trim());
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes(f: &ScalarField) -> Vec<u8> {
        let mut out = Vec::new();
        write_grid(f, &mut out).unwrap();
        out
    }

    #[test]
    fn grid_layout() {
        let f = ScalarField::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = bytes(&f);
        assert_eq!(b.len(), 25 + 48 + 4);
        assert_eq!(&b[..5], b"MFLD1");
        assert_eq!(&b[9..17], &2u64.to_le_bytes());
        assert_eq!(&b[17..25], &3u64.to_le_bytes());
        assert_eq!(&b[25..33], &1.0f64.to_le_bytes());
    }

    #[test]
    fn corrupt_grids_are_rejected() {
        let f = ScalarField::filled(3, 3, 0.5);
        let b = bytes(&f);
        assert!(matches!(read_grid(&mut &b[..b.len() - 1]), Err(Error::Corrupt(_))));
        let mut flipped = b.clone();
        flipped[30] ^= 1;
        assert!(matches!(read_grid(&mut flipped.as_slice()), Err(Error::Corrupt(_))));
        let mut magic = b;
        magic[4] = b'2';
        assert!(matches!(read_grid(&mut magic.as_slice()), Err(Error::Corrupt(_))));
    }

    #[test]
    fn manifest_parse_and_render() {
        let m = Manifest::parse("# run\nproblem = l_beam\n\nsize=128x128\n").unwrap();
        assert_eq!(m.get("problem"), Some("l_beam"));
        assert_eq!(m.render(), "problem=l_beam\nsize=128x128\n");
        assert!(Manifest::parse("a=1\na=2").is_err());
        assert!(Manifest::parse("novalue").is_err());
        let n: usize = Manifest::parse("n=60").unwrap().require("n").unwrap();
        assert_eq!(n, 60);
    }

    proptest! {
        #[test]
        fn grid_roundtrip_is_bit_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let v = f64::from_bits(s);
                    if v.is_finite() { v } else { 0.0 }
                })
                .collect();
            let f = ScalarField::from_vec(rows, cols, data).unwrap();
            let back = read_grid(&mut bytes(&f).as_slice()).unwrap();
            let a: Vec<u64> = f.as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.shape(), (rows, cols));
        }
    }
}
