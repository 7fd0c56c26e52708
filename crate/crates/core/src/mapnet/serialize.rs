//! `MNET1` model files, little-endian throughout.
//!
//! ```text
//! "MNET1" | u32 version | u32 layer count
//! per layer: u8 kind | u32 in | u32 out | u8 stride | u8 activation
//!            | u8 source tag | u32 source index
//! u32 crop_scale | u32 coarse_patch | u32 fine_patch | u8 overlap | u32 stride
//! f64 coarse factor | f64 fine factor
//! u64 parameter count | f64 × count | u32 CRC32 of the parameter bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{parameter_count, Activation, Injection, LayerKind, LayerSpec, MapNetModel};
use crate::error::{Error, Result};
use crate::fragmap::{FragmentSpec, NormalizationFactors};

const MAGIC: &[u8; 5] = b"MNET1";
const VERSION: u32 = 1;

pub fn write_model(model: &MapNetModel, w: &mut impl Write) -> Result<()> {
    let mut head = Vec::new();
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&VERSION.to_le_bytes());
    head.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        let kind: u8 = match l.kind {
            LayerKind::Conv => 0,
            LayerKind::TransposedConv => 1,
            LayerKind::ConcatInjection => 2,
        };
        let act: u8 = match l.activation {
            Activation::Relu => 0,
            Activation::Linear => 1,
        };
        let (tag, idx): (u8, u32) = match l.source {
            None => (0, 0),
            Some(Injection::Density) => (1, 0),
            Some(Injection::Skip(j)) => (2, j as u32),
        };
        head.push(kind);
        head.extend_from_slice(&(l.in_channels as u32).to_le_bytes());
        head.extend_from_slice(&(l.out_channels as u32).to_le_bytes());
        head.push(l.stride as u8);
        head.push(act);
        head.push(tag);
        head.extend_from_slice(&idx.to_le_bytes());
    }
    let f = &model.fspec;
    for v in [f.crop_scale, f.coarse_patch, f.fine_patch] {
        head.extend_from_slice(&(v as u32).to_le_bytes());
    }
    head.push(f.overlap as u8);
    head.extend_from_slice(&(f.stride_coarse as u32).to_le_bytes());
    head.extend_from_slice(&model.norm.coarse.to_le_bytes());
    head.extend_from_slice(&model.norm.fine.to_le_bytes());
    head.extend_from_slice(&(model.params.len() as u64).to_le_bytes());

    let body: Vec<u8> = model.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    w.write_all(&head)?;
    w.write_all(&body)?;
    w.write_all(&crc32fast::hash(&body).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt("model file is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn corrupt<T>(msg: &str) -> Result<T> {
    Err(Error::Corrupt(msg.to_string()))
}

/// Reads a model and, when `expected` is given, checks that its fragment
/// geometry matches.
pub fn read_model(r: &mut impl Read, expected: Option<&FragmentSpec>) -> Result<MapNetModel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return corrupt("bad magic");
    }
    let version = c.u32()?;
    if version != VERSION {
        return corrupt(&format!("unsupported version {version}"));
    }
    let n_layers = c.u32()? as usize;
    if n_layers > 4096 {
        return corrupt("implausible layer count");
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = match c.u8()? {
            0 => LayerKind::Conv,
            1 => LayerKind::TransposedConv,
            2 => LayerKind::ConcatInjection,
            _ => return corrupt("unknown layer kind"),
        };
        let in_channels = c.u32()? as usize;
        let out_channels = c.u32()? as usize;
        let stride = c.u8()? as usize;
        let activation = match c.u8()? {
            0 => Activation::Relu,
            1 => Activation::Linear,
            _ => return corrupt("unknown activation"),
        };
        let tag = c.u8()?;
        let idx = c.u32()? as usize;
        let source = match tag {
            0 => None,
            1 => Some(Injection::Density),
            2 => Some(Injection::Skip(idx)),
            _ => return corrupt("unknown injection source"),
        };
        layers.push(LayerSpec {
            kind,
            in_channels,
            out_channels,
            stride,
            activation,
            source,
        });
    }
    let crop_scale = c.u32()? as usize;
    let coarse_patch = c.u32()? as usize;
    let fine_patch = c.u32()? as usize;
    let overlap = match c.u8()? {
        0 => false,
        1 => true,
        _ => return corrupt("bad overlap flag"),
    };
    let stride_coarse = c.u32()? as usize;
    let fspec = FragmentSpec {
        crop_scale,
        coarse_patch,
        fine_patch,
        overlap,
        stride_coarse,
    };
    let norm = NormalizationFactors::new(c.f64()?, c.f64()?)
        .map_err(|_| Error::Corrupt("bad normalization factors".into()))?;
    let n_params = c.u64()? as usize;
    if n_params != parameter_count(&layers) {
        return corrupt(&format!(
            "parameter count {n_params} does not match the layer table ({})",
            parameter_count(&layers)
        ));
    }
    let body = c.take(
        n_params
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt("overflow".into()))?,
    )?;
    let crc = c.u32()?;
    if c.pos != buf.len() {
        return corrupt("trailing bytes");
    }
    if crc32fast::hash(body) != crc {
        return corrupt("checksum mismatch");
    }
    if let Some(want) = expected {
        if want.coarse_patch != fspec.coarse_patch
            || want.fine_patch != fspec.fine_patch
            || want.overlap != fspec.overlap
        {
            return Err(Error::FingerprintMismatch {
                model: fspec.fingerprint(),
                requested: want.fingerprint(),
            });
        }
    }
    let params = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let mut model = MapNetModel::with_zero_params(layers, fspec, norm)
        .map_err(|e| Error::Corrupt(format!("invalid layer table: {e}")))?;
    model.set_params(params)?;
    Ok(model)
}

pub fn save_model(model: &MapNetModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)
}

pub fn load_model(path: &Path, expected: Option<&FragmentSpec>) -> Result<MapNetModel> {
    read_model(&mut BufReader::new(File::open(path)?), expected)
}
