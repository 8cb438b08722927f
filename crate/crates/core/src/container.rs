//! Binary containers: 32-bit weight files ("WF32") and packed models
//! ("SHRY"). All multi-byte integers are little-endian; writes go through
//! a temp file and atomic rename.
//!
//! WF32 layout: magic, version u32, tensor_count u32, then per tensor
//! name_len u32 + UTF-8 name, rows u32, cols u32, rows*cols f32 values
//! row-major.
//!
//! SHRY layout: magic, version u32, tensor_count u32, then per tensor
//! name, rows u32, cols u32, logical_d_in u32 (pre-padding input length,
//! meaningful for tl2ref), scheme u8, granularity u8, group_size u32,
//! scale_count u32 + f32 scales, then either index/sign planes (sherry125)
//! or one payload (dense2bit, tl2ref), each as length u64 + bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Granularity};
use crate::pack::{PackScheme, PackedTensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"WF32";
pub const MODEL_MAGIC: &[u8; 4] = b"SHRY";
pub const FORMAT_VERSION: u32 = 1;

/// Guard against absurd counts in corrupted headers.
const MAX_REASONABLE: u64 = 1 << 31;

#[derive(Debug, Clone)]
pub struct NamedMatrix {
    pub name: String,
    pub matrix: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct NamedPacked {
    pub name: String,
    pub tensor: PackedTensor,
}

/// Write bytes via a temp file in the target directory plus rename, so
/// readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        reason: reason.into(),
    }
}

/// Little-endian cursor over a fully loaded file.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(malformed(format!(
                "truncated: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len as u64 > MAX_REASONABLE {
            return Err(malformed("name length out of range"));
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| malformed("tensor name is not UTF-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(malformed(format!(
                "{} trailing bytes after last tensor",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn checked_dims(rows: u32, cols: u32) -> Result<(usize, usize)> {
    let product = rows as u64 * cols as u64;
    if rows == 0 || cols == 0 || product > MAX_REASONABLE {
        return Err(malformed(format!("tensor dimensions {rows}x{cols} out of range")));
    }
    Ok((rows as usize, cols as usize))
}

pub fn write_weight_file(path: &Path, tensors: &[NamedMatrix]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        push_name(&mut out, &t.name);
        out.extend_from_slice(&(t.matrix.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.matrix.cols() as u32).to_le_bytes());
        for v in t.matrix.to_f32_vec() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

pub fn read_weight_file(path: &Path) -> Result<Vec<NamedMatrix>> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(malformed("bad magic, expected WF32"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.name()?;
        let (rows, cols) = checked_dims(r.u32()?, r.u32()?)?;
        let values = r.f32s(rows * cols)?;
        let matrix = DenseMatrix::from_f32(rows, cols, &values)
            .map_err(|e| malformed(format!("tensor {name}: {e}")))?;
        tensors.push(NamedMatrix { name, matrix });
    }
    r.finish()?;
    Ok(tensors)
}

fn scheme_code(s: PackScheme) -> u8 {
    match s {
        PackScheme::Sherry125 => 0,
        PackScheme::Dense2Bit => 1,
        PackScheme::Tl2Ref => 2,
    }
}

fn scheme_from_code(c: u8) -> Result<PackScheme> {
    match c {
        0 => Ok(PackScheme::Sherry125),
        1 => Ok(PackScheme::Dense2Bit),
        2 => Ok(PackScheme::Tl2Ref),
        other => Err(malformed(format!("unknown scheme code {other}"))),
    }
}

fn granularity_code(g: Granularity) -> (u8, u32) {
    match g {
        Granularity::PerTensor => (0, 0),
        Granularity::PerChannel => (1, 0),
        Granularity::PerGroup { group_size } => (2, group_size as u32),
    }
}

fn granularity_from_code(code: u8, group_size: u32) -> Result<Granularity> {
    match code {
        0 => Ok(Granularity::PerTensor),
        1 => Ok(Granularity::PerChannel),
        2 => Granularity::per_group(group_size as usize)
            .map_err(|e| malformed(format!("bad group size: {e}"))),
        other => Err(malformed(format!("unknown granularity code {other}"))),
    }
}

pub fn write_packed_model(path: &Path, tensors: &[NamedPacked]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let p = &t.tensor;
        push_name(&mut out, &t.name);
        out.extend_from_slice(&(p.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols() as u32).to_le_bytes());
        // Logical (pre-padding) input length; rows never include padding.
        out.extend_from_slice(&(p.rows() as u32).to_le_bytes());
        out.push(scheme_code(p.scheme()));
        let (gcode, gsize) = granularity_code(p.granularity());
        out.push(gcode);
        out.extend_from_slice(&gsize.to_le_bytes());
        out.extend_from_slice(&(p.scales().len() as u32).to_le_bytes());
        for s in p.scales() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        match p.scheme() {
            PackScheme::Sherry125 => {
                out.extend_from_slice(&(p.index_plane().len() as u64).to_le_bytes());
                out.extend_from_slice(p.index_plane());
                out.extend_from_slice(&(p.sign_plane().len() as u64).to_le_bytes());
                out.extend_from_slice(p.sign_plane());
            }
            _ => {
                out.extend_from_slice(&(p.payload().len() as u64).to_le_bytes());
                out.extend_from_slice(p.payload());
            }
        }
    }
    atomic_write(path, &out)
}

pub fn read_packed_model(path: &Path) -> Result<Vec<NamedPacked>> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != MODEL_MAGIC {
        return Err(malformed("bad magic, expected SHRY"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.name()?;
        let (rows, cols) = checked_dims(r.u32()?, r.u32()?)?;
        let logical_d_in = r.u32()? as usize;
        if logical_d_in != rows {
            return Err(malformed(format!(
                "tensor {name}: logical_d_in {logical_d_in} disagrees with rows {rows}"
            )));
        }
        let scheme = scheme_from_code(r.u8()?)?;
        let gcode = r.u8()?;
        let gsize = r.u32()?;
        let granularity = granularity_from_code(gcode, gsize)?;
        let scale_count = r.u32()? as usize;
        if scale_count as u64 > MAX_REASONABLE {
            return Err(malformed("scale count out of range"));
        }
        let scales = r.f32s(scale_count)?;
        let (index_plane, sign_plane, payload) = match scheme {
            PackScheme::Sherry125 => {
                let ilen = r.u64()? as usize;
                let index = r.take(ilen)?.to_vec();
                let slen = r.u64()? as usize;
                let sign = r.take(slen)?.to_vec();
                (index, sign, Vec::new())
            }
            _ => {
                let plen = r.u64()? as usize;
                (Vec::new(), Vec::new(), r.take(plen)?.to_vec())
            }
        };
        let tensor = PackedTensor::from_parts(
            rows,
            cols,
            scheme,
            index_plane,
            sign_plane,
            payload,
            scales,
            granularity,
        )
        .map_err(|e| malformed(format!("tensor {name}: {e}")))?;
        tensors.push(NamedPacked { name, tensor });
    }
    r.finish()?;
    Ok(tensors)
}
