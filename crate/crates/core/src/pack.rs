//! Bit-exact packing of ternary tensors.
//!
//! Three layouts are supported, all column-major over blocks (every plane
//! holds column 0's blocks first, then column 1's, each column byte-aligned
//! independently):
//!
//! - `sherry125` - 1.25 bits/weight. Each 3:4 block becomes a 4-bit index
//!   nibble (zero position and relative signs) plus one lead-sign bit. The
//!   index plane stores two blocks per byte, low nibble first; the sign
//!   plane stores one bit per block, LSB-first.
//! - `dense2bit` - 2 bits/weight. Code map {-1 -> 0b11, 0 -> 0b00,
//!   +1 -> 0b01}, four weights per byte LSB-first.
//! - `tl2ref` - 1.67 bits/weight reference. Each 3-weight group maps to a
//!   base-3 unit c = sum (t_k + 1) * 3^k in 0..=26 stored in 5 bits, packed
//!   LSB-first into a contiguous per-column bitstream; columns whose length
//!   is not a multiple of 3 are padded with zero codes and the logical
//!   length is kept alongside.

use crate::error::{Error, Result};
use crate::matrix::Granularity;
use crate::quantize::{QuantScheme, TernaryTensor};

/// Storage format of a [`PackedTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackScheme {
    Sherry125,
    Dense2Bit,
    Tl2Ref,
}

impl PackScheme {
    pub fn name(&self) -> &'static str {
        match self {
            PackScheme::Sherry125 => "sherry125",
            PackScheme::Dense2Bit => "dense2bit",
            PackScheme::Tl2Ref => "tl2ref",
        }
    }
}

/// One 3:4 block expressed as the five packed quantities.
///
/// `(zero_pos, lead_sign, rel2, rel3)` is a bijection with the 32 valid
/// ternary 4-blocks: `lead_sign` is the sign of the first non-zero position
/// and `rel2`/`rel3` say whether the second and third non-zero positions
/// agree with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sparse34Block {
    pub zero_pos: u8,
    pub lead_sign: i8,
    pub rel2_opposite: bool,
    pub rel3_opposite: bool,
}

impl Sparse34Block {
    pub fn from_codes(codes: &[i8; 4]) -> Result<Self> {
        let (sign_bit, index) = encode_block(codes)?;
        Ok(Self {
            zero_pos: index >> 2,
            lead_sign: if sign_bit { -1 } else { 1 },
            rel2_opposite: (index >> 1) & 1 == 1,
            rel3_opposite: index & 1 == 1,
        })
    }

    pub fn to_codes(self) -> Result<[i8; 4]> {
        let index = (self.zero_pos << 2)
            | ((self.rel2_opposite as u8) << 1)
            | self.rel3_opposite as u8;
        decode_block(self.lead_sign < 0, index)
    }
}

/// Encode one 3:4 block into (sign bit, 4-bit index).
///
/// With p1 < p2 < p3 the non-zero positions: the sign bit is set when the
/// code at p1 is -1, and index = zero_pos * 4 + rel2 * 2 + rel3 where
/// rel_k is set when the code at p_k differs from the one at p1.
pub fn encode_block(codes: &[i8; 4]) -> Result<(bool, u8)> {
    let nonzero: Vec<usize> = (0..4).filter(|&k| codes[k] != 0).collect();
    if nonzero.len() != 3 {
        return Err(Error::InvalidBlock {
            nonzeros: nonzero.len(),
        });
    }
    let zero_pos = (0..4).find(|&k| codes[k] == 0).unwrap() as u8;
    let lead = codes[nonzero[0]];
    let rel2 = (codes[nonzero[1]] != lead) as u8;
    let rel3 = (codes[nonzero[2]] != lead) as u8;
    Ok((lead < 0, zero_pos * 4 + rel2 * 2 + rel3))
}

/// Inverse of [`encode_block`]; defined for every index in 0..=15.
pub fn decode_block(sign_bit: bool, index: u8) -> Result<[i8; 4]> {
    if index > 15 {
        return Err(Error::InvalidIndex { index });
    }
    let zero_pos = (index >> 2) as usize;
    let lead: i8 = if sign_bit { -1 } else { 1 };
    let mut codes = [0i8; 4];
    let mut slot = 0;
    for (k, code) in codes.iter_mut().enumerate() {
        if k == zero_pos {
            continue;
        }
        let opposite = match slot {
            0 => false,
            1 => (index >> 1) & 1 == 1,
            _ => index & 1 == 1,
        };
        *code = if opposite { -lead } else { lead };
        slot += 1;
    }
    Ok(codes)
}

/// Packed planes plus scales; the in-memory form of the on-disk model.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    rows: usize,
    cols: usize,
    scheme: PackScheme,
    /// sherry125 only: one 4-bit index per block, two blocks per byte.
    index_plane: Vec<u8>,
    /// sherry125 only: one bit per block, LSB-first.
    sign_plane: Vec<u8>,
    /// dense2bit / tl2ref: contiguous per-column bitstream.
    payload: Vec<u8>,
    scales: Vec<f32>,
    granularity: Granularity,
}

/// sherry125 index-plane bytes for one column.
pub fn sherry_index_bytes_per_col(d_in: usize) -> usize {
    (d_in / 4).div_ceil(2)
}

/// sherry125 sign-plane bytes for one column.
pub fn sherry_sign_bytes_per_col(d_in: usize) -> usize {
    (d_in / 4).div_ceil(8)
}

/// dense2bit payload bytes for one column.
pub fn dense2bit_bytes_per_col(d_in: usize) -> usize {
    d_in.div_ceil(4)
}

/// tl2ref payload bytes for one column (5 bits per 3-weight unit).
pub fn tl2ref_bytes_per_col(d_in: usize) -> usize {
    (d_in.div_ceil(3) * 5).div_ceil(8)
}

impl PackedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scheme(&self) -> PackScheme {
        self.scheme
    }

    pub fn index_plane(&self) -> &[u8] {
        &self.index_plane
    }

    pub fn sign_plane(&self) -> &[u8] {
        &self.sign_plane
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// Assemble from raw parts, validating plane lengths against the exact
    /// layout formulas. Used by the model-file reader.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rows: usize,
        cols: usize,
        scheme: PackScheme,
        index_plane: Vec<u8>,
        sign_plane: Vec<u8>,
        payload: Vec<u8>,
        scales: Vec<f32>,
        granularity: Granularity,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::MalformedFile {
                reason: "packed tensor with zero dimension".to_string(),
            });
        }
        granularity
            .validate_for(rows)
            .map_err(|e| Error::MalformedFile {
                reason: e.to_string(),
            })?;
        if scales.len() != granularity.scale_count(rows, cols) {
            return Err(Error::MalformedFile {
                reason: format!("scale count {} does not match granularity", scales.len()),
            });
        }
        if !scales.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(Error::MalformedFile {
                reason: "non-finite or negative scale".to_string(),
            });
        }
        let plane_err = |what: &str| Error::MalformedFile {
            reason: format!("{what} length does not match layout formula"),
        };
        match scheme {
            PackScheme::Sherry125 => {
                if !rows.is_multiple_of(4) {
                    return Err(Error::MalformedFile {
                        reason: format!("sherry125 rows {rows} not divisible by 4"),
                    });
                }
                if index_plane.len() != cols * sherry_index_bytes_per_col(rows) {
                    return Err(plane_err("index plane"));
                }
                if sign_plane.len() != cols * sherry_sign_bytes_per_col(rows) {
                    return Err(plane_err("sign plane"));
                }
                if !payload.is_empty() {
                    return Err(plane_err("payload"));
                }
            }
            PackScheme::Dense2Bit => {
                if payload.len() != cols * dense2bit_bytes_per_col(rows) {
                    return Err(plane_err("payload"));
                }
                if !index_plane.is_empty() || !sign_plane.is_empty() {
                    return Err(plane_err("plane"));
                }
            }
            PackScheme::Tl2Ref => {
                if payload.len() != cols * tl2ref_bytes_per_col(rows) {
                    return Err(plane_err("payload"));
                }
                if !index_plane.is_empty() || !sign_plane.is_empty() {
                    return Err(plane_err("plane"));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            scheme,
            index_plane,
            sign_plane,
            payload,
            scales,
            granularity,
        })
    }
}

/// Pack a ternary tensor. `sherry125` requires a valid 3:4 tensor;
/// `dense2bit` accepts any ternary tensor; `tl2ref` pads columns with zero
/// codes up to a multiple of 3.
pub fn pack(t: &TernaryTensor, scheme: PackScheme) -> Result<PackedTensor> {
    let (rows, cols) = (t.rows(), t.cols());
    let (index_plane, sign_plane, payload) = match scheme {
        PackScheme::Sherry125 => {
            if rows % 4 != 0 {
                return Err(Error::NotDivisible {
                    context: "sherry125 input dimension",
                    len: rows,
                    divisor: 4,
                });
            }
            let blocks = rows / 4;
            let ipc = sherry_index_bytes_per_col(rows);
            let spc = sherry_sign_bytes_per_col(rows);
            let mut index_plane = vec![0u8; cols * ipc];
            let mut sign_plane = vec![0u8; cols * spc];
            for col in 0..cols {
                for block in 0..blocks {
                    let codes = [
                        t.code(block * 4, col),
                        t.code(block * 4 + 1, col),
                        t.code(block * 4 + 2, col),
                        t.code(block * 4 + 3, col),
                    ];
                    let (sign, index) = encode_block(&codes)?;
                    index_plane[col * ipc + block / 2] |= index << (4 * (block % 2));
                    if sign {
                        sign_plane[col * spc + block / 8] |= 1 << (block % 8);
                    }
                }
            }
            (index_plane, sign_plane, Vec::new())
        }
        PackScheme::Dense2Bit => {
            let bpc = dense2bit_bytes_per_col(rows);
            let mut payload = vec![0u8; cols * bpc];
            for col in 0..cols {
                for row in 0..rows {
                    let bits: u8 = match t.code(row, col) {
                        -1 => 0b11,
                        0 => 0b00,
                        _ => 0b01,
                    };
                    payload[col * bpc + row / 4] |= bits << (2 * (row % 4));
                }
            }
            (Vec::new(), Vec::new(), payload)
        }
        PackScheme::Tl2Ref => {
            let units = rows.div_ceil(3);
            let bpc = tl2ref_bytes_per_col(rows);
            let mut payload = vec![0u8; cols * bpc];
            for col in 0..cols {
                let column = &mut payload[col * bpc..(col + 1) * bpc];
                for unit in 0..units {
                    let mut code = 0u32;
                    for k in 0..3 {
                        let row = unit * 3 + k;
                        let trit = if row < rows { t.code(row, col) } else { 0 };
                        code += (trit + 1) as u32 * 3u32.pow(k as u32);
                    }
                    write_bits5(column, unit * 5, code as u8);
                }
            }
            (Vec::new(), Vec::new(), payload)
        }
    };
    Ok(PackedTensor {
        rows,
        cols,
        scheme,
        index_plane,
        sign_plane,
        payload,
        scales: t.scales().to_vec(),
        granularity: t.granularity(),
    })
}

fn write_bits5(buf: &mut [u8], bit_offset: usize, value: u8) {
    for k in 0..5 {
        if (value >> k) & 1 == 1 {
            let bit = bit_offset + k;
            buf[bit / 8] |= 1 << (bit % 8);
        }
    }
}

/// Read the 5-bit unit at `bit_offset`, possibly straddling a byte boundary.
pub(crate) fn read_bits5(buf: &[u8], bit_offset: usize) -> u8 {
    let byte = bit_offset / 8;
    let shift = bit_offset % 8;
    let mut raw = (buf[byte] as u16) >> shift;
    if shift > 3 {
        raw |= (buf[byte + 1] as u16) << (8 - shift);
    }
    (raw & 0x1f) as u8
}

/// Exact inverse of [`pack`] for codes and scales.
///
/// The quantization-scheme tag of the result is a convention, not stored
/// data: sherry125 payloads are tagged `sparse34` (the structure guarantees
/// validity), everything else `absmean`.
pub fn unpack(p: &PackedTensor) -> Result<TernaryTensor> {
    let (rows, cols) = (p.rows, p.cols);
    let mut codes = vec![0i8; rows * cols];
    let scheme = match p.scheme {
        PackScheme::Sherry125 => {
            let blocks = rows / 4;
            let ipc = sherry_index_bytes_per_col(rows);
            let spc = sherry_sign_bytes_per_col(rows);
            for col in 0..cols {
                for block in 0..blocks {
                    let nibble =
                        (p.index_plane[col * ipc + block / 2] >> (4 * (block % 2))) & 0x0f;
                    let sign = (p.sign_plane[col * spc + block / 8] >> (block % 8)) & 1 == 1;
                    let decoded = decode_block(sign, nibble)?;
                    for (k, &c) in decoded.iter().enumerate() {
                        codes[(block * 4 + k) * cols + col] = c;
                    }
                }
            }
            QuantScheme::Sparse34
        }
        PackScheme::Dense2Bit => {
            let bpc = dense2bit_bytes_per_col(rows);
            for col in 0..cols {
                for row in 0..rows {
                    let bits = (p.payload[col * bpc + row / 4] >> (2 * (row % 4))) & 0b11;
                    codes[row * cols + col] = match bits {
                        0b00 => 0,
                        0b01 => 1,
                        0b11 => -1,
                        other => return Err(Error::InvalidCodeUnit { value: other as u32 }),
                    };
                }
            }
            QuantScheme::AbsMean
        }
        PackScheme::Tl2Ref => {
            let units = rows.div_ceil(3);
            let bpc = tl2ref_bytes_per_col(rows);
            for col in 0..cols {
                let column = &p.payload[col * bpc..(col + 1) * bpc];
                for unit in 0..units {
                    let code = read_bits5(column, unit * 5);
                    if code > 26 {
                        return Err(Error::InvalidCodeUnit { value: code as u32 });
                    }
                    let mut rest = code;
                    for k in 0..3 {
                        let row = unit * 3 + k;
                        let trit = (rest % 3) as i8 - 1;
                        rest /= 3;
                        if row < rows {
                            codes[row * cols + col] = trit;
                        }
                        // Trailing pad codes beyond the logical length are
                        // dropped here.
                    }
                }
            }
            QuantScheme::AbsMean
        }
    };
    TernaryTensor::new(
        rows,
        cols,
        codes,
        p.scales.clone(),
        None,
        scheme,
        p.granularity,
    )
}

/// Size accounting for one packed tensor.
///
/// `payload_bits` counts the logical bitstream (5 bits per sherry block or
/// tl2ref unit, 2 bits per dense2bit weight) before per-column byte
/// padding; `payload_bytes` is the physically stored size.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub scheme: PackScheme,
    pub payload_bits: u64,
    pub payload_bytes: u64,
    pub scale_bits: u64,
    pub bits_per_weight: f64,
}

pub fn density(p: &PackedTensor) -> DensityReport {
    let (rows, cols) = (p.rows as u64, p.cols as u64);
    let payload_bits = match p.scheme {
        PackScheme::Sherry125 => (rows / 4) * cols * 5,
        PackScheme::Dense2Bit => rows * cols * 2,
        PackScheme::Tl2Ref => rows.div_ceil(3) * cols * 5,
    };
    let payload_bytes =
        (p.index_plane.len() + p.sign_plane.len() + p.payload.len()) as u64;
    let scale_bits = 32 * p.scales.len() as u64;
    DensityReport {
        scheme: p.scheme,
        payload_bits,
        payload_bytes,
        scale_bits,
        bits_per_weight: (payload_bits + scale_bits) as f64 / (rows * cols) as f64,
    }
}
