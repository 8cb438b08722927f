//! Multiplication-free matrix-vector products over packed tensors.
//!
//! For sherry125 payloads each 4-long activation segment is preprocessed
//! into a 16-entry lookup table keyed by the block index; the inner loop
//! then performs only lookups, sign selection and additions. The only
//! multiplications on the hot path are the final per-scope scale
//! applications, which the instrumented entry points count.
//!
//! Accumulation order is fixed for every path: blocks ascending within a
//! scale group, groups ascending within a column. The dense reference uses
//! the same order so the two paths can be compared bit-for-bit in double
//! precision.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Precision};
use crate::pack::{
    dense2bit_bytes_per_col, read_bits5, sherry_index_bytes_per_col, sherry_sign_bytes_per_col,
    tl2ref_bytes_per_col, PackScheme, PackedTensor,
};
use crate::quantize::TernaryTensor;

/// Engine settings. `parallel_width` is an advisory hint recorded by
/// callers; this implementation is scalar.
#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub precision: Precision,
    pub parallel_width: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            precision: Precision::Single,
            parallel_width: 1,
        }
    }
}

impl EngineConfig {
    pub fn with_precision(precision: Precision) -> Self {
        Self {
            precision,
            ..Self::default()
        }
    }
}

/// Arithmetic used by the kernels; instantiated for f32 and f64 so single
/// and double accumulation share one implementation.
trait Scalar: Copy {
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
}

macro_rules! impl_scalar {
    ($ty:ty) => {
        impl Scalar for $ty {
            const ZERO: Self = 0.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            #[inline]
            fn from_f32(v: f32) -> Self {
                v as $ty
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn add(self, rhs: Self) -> Self {
                self + rhs
            }
            #[inline]
            fn sub(self, rhs: Self) -> Self {
                self - rhs
            }
            #[inline]
            fn mul(self, rhs: Self) -> Self {
                self * rhs
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Lookup table for one 4-long activation segment: entry i is the signed
/// sum of the three selected activations under lead sign +1 for block
/// index i, so it is independent of the sign bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLut {
    pub entries: [f32; 16],
}

/// Build the 16-entry table for one activation segment.
pub fn build_lut(segment: &[f32; 4]) -> SegmentLut {
    SegmentLut {
        entries: build_lut_generic(segment),
    }
}

fn build_lut_generic<T: Scalar>(segment: &[T; 4]) -> [T; 16] {
    let mut entries = [T::ZERO; 16];
    for zero_pos in 0..4usize {
        let mut kept = [0usize; 3];
        let mut slot = 0;
        for k in 0..4 {
            if k != zero_pos {
                kept[slot] = k;
                slot += 1;
            }
        }
        for rel2 in 0..2usize {
            for rel3 in 0..2usize {
                let mut v = segment[kept[0]];
                v = if rel2 == 1 {
                    v.sub(segment[kept[1]])
                } else {
                    v.add(segment[kept[1]])
                };
                v = if rel3 == 1 {
                    v.sub(segment[kept[2]])
                } else {
                    v.add(segment[kept[2]])
                };
                entries[zero_pos * 4 + rel2 * 2 + rel3] = v;
            }
        }
    }
    entries
}

/// Counts of the multiplications performed per output channel. In the LUT
/// paths only the per-scope scale applications multiply, so each entry
/// must equal the number of scales covering that channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MatvecStats {
    pub alpha_multiplies_per_channel: Vec<u64>,
}

fn check_activations(len: usize, expected: usize, x: &[f64]) -> Result<()> {
    if len != expected {
        return Err(Error::ShapeMismatch {
            context: format!("activation length {len}, tensor expects {expected}"),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "activations".to_string(),
        });
    }
    Ok(())
}

/// LUT matrix-vector product over a sherry125 payload.
pub fn lut_matvec(p: &PackedTensor, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    lut_matvec_with_stats(p, x, cfg).map(|(y, _)| y)
}

/// As [`lut_matvec`] but also returns the multiplication counts.
pub fn lut_matvec_with_stats(
    p: &PackedTensor,
    x: &[f64],
    cfg: &EngineConfig,
) -> Result<(Vec<f64>, MatvecStats)> {
    if p.scheme() != PackScheme::Sherry125 {
        return Err(Error::SchemeMismatch {
            expected: "sherry125",
            found: p.scheme().name(),
        });
    }
    check_activations(x.len(), p.rows(), x)?;
    match cfg.precision {
        Precision::Single => {
            let xs: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            Ok(sherry_kernel::<f32>(p, &xs))
        }
        Precision::Double => Ok(sherry_kernel::<f64>(p, x)),
    }
}

fn sherry_kernel<T: Scalar>(p: &PackedTensor, x: &[T]) -> (Vec<f64>, MatvecStats) {
    let rows = p.rows();
    let cols = p.cols();
    let blocks = rows / 4;
    let granularity = p.granularity();
    let groups = granularity.groups_per_column(rows);
    let blocks_per_group = blocks / groups;
    let ipc = sherry_index_bytes_per_col(rows);
    let spc = sherry_sign_bytes_per_col(rows);

    // One table per segment, built once and reused across all channels.
    let luts: Vec<[T; 16]> = (0..blocks)
        .map(|b| {
            let seg = [x[b * 4], x[b * 4 + 1], x[b * 4 + 2], x[b * 4 + 3]];
            build_lut_generic(&seg)
        })
        .collect();

    let scales = p.scales();
    let index_plane = p.index_plane();
    let sign_plane = p.sign_plane();
    let mut y = vec![0.0f64; cols];
    let mut mults = vec![0u64; cols];
    for col in 0..cols {
        let idx_base = col * ipc;
        let sign_base = col * spc;
        let mut channel = T::ZERO;
        for group in 0..groups {
            let mut acc = T::ZERO;
            for block in group * blocks_per_group..(group + 1) * blocks_per_group {
                let nibble = (index_plane[idx_base + block / 2] >> (4 * (block % 2))) & 0x0f;
                let entry = luts[block][nibble as usize];
                let negate = (sign_plane[sign_base + block / 8] >> (block % 8)) & 1 == 1;
                acc = if negate { acc.sub(entry) } else { acc.add(entry) };
            }
            let alpha = T::from_f32(
                scales[granularity.scale_index(group * blocks_per_group * 4, col, rows)],
            );
            channel = channel.add(acc.mul(alpha));
            mults[col] += 1;
        }
        y[col] = channel.to_f64();
    }
    (
        y,
        MatvecStats {
            alpha_multiplies_per_channel: mults,
        },
    )
}

/// Decode-and-add matrix-vector product over a dense2bit payload.
pub fn dense2bit_matvec(p: &PackedTensor, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    if p.scheme() != PackScheme::Dense2Bit {
        return Err(Error::SchemeMismatch {
            expected: "dense2bit",
            found: p.scheme().name(),
        });
    }
    check_activations(x.len(), p.rows(), x)?;
    match cfg.precision {
        Precision::Single => {
            let xs: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            dense2bit_kernel::<f32>(p, &xs)
        }
        Precision::Double => dense2bit_kernel::<f64>(p, x),
    }
}

fn dense2bit_kernel<T: Scalar>(p: &PackedTensor, x: &[T]) -> Result<Vec<f64>> {
    let rows = p.rows();
    let cols = p.cols();
    let granularity = p.granularity();
    let groups = granularity.groups_per_column(rows);
    let rows_per_group = rows / groups;
    let bpc = dense2bit_bytes_per_col(rows);
    let payload = p.payload();
    let scales = p.scales();
    let mut y = vec![0.0f64; cols];
    for col in 0..cols {
        let column = &payload[col * bpc..(col + 1) * bpc];
        let mut channel = T::ZERO;
        for group in 0..groups {
            let start = group * rows_per_group;
            let mut acc = T::ZERO;
            // 4-chunked accumulation, matching the reference order.
            for chunk_start in (start..start + rows_per_group).step_by(4) {
                let chunk_end = (chunk_start + 4).min(start + rows_per_group);
                let mut block = T::ZERO;
                for row in chunk_start..chunk_end {
                    let bits = (column[row / 4] >> (2 * (row % 4))) & 0b11;
                    block = match bits {
                        0b00 => block,
                        0b01 => block.add(x[row]),
                        0b11 => block.sub(x[row]),
                        other => return Err(Error::InvalidCodeUnit { value: other as u32 }),
                    };
                }
                acc = acc.add(block);
            }
            let alpha = T::from_f32(scales[granularity.scale_index(start, col, rows)]);
            channel = channel.add(acc.mul(alpha));
        }
        y[col] = channel.to_f64();
    }
    Ok(y)
}

/// Matrix-vector product over a tl2ref payload using 27-entry tables per
/// 3-long activation segment and unaligned 5-bit unit extraction. Units
/// that straddle a scale-group boundary fall back to per-element adds.
pub fn tl2ref_matvec(p: &PackedTensor, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    if p.scheme() != PackScheme::Tl2Ref {
        return Err(Error::SchemeMismatch {
            expected: "tl2ref",
            found: p.scheme().name(),
        });
    }
    check_activations(x.len(), p.rows(), x)?;
    match cfg.precision {
        Precision::Single => {
            let xs: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            tl2ref_kernel::<f32>(p, &xs)
        }
        Precision::Double => tl2ref_kernel::<f64>(p, x),
    }
}

#[allow(clippy::needless_range_loop)] // index order mirrors the bit layout
fn tl2ref_kernel<T: Scalar>(p: &PackedTensor, x: &[T]) -> Result<Vec<f64>> {
    let rows = p.rows();
    let cols = p.cols();
    let units = rows.div_ceil(3);
    let granularity = p.granularity();
    let groups = granularity.groups_per_column(rows);
    let rows_per_group = rows / groups;
    let bpc = tl2ref_bytes_per_col(rows);

    // 27-entry table per segment; the tail segment is padded with zeros.
    let mut luts = vec![[T::ZERO; 27]; units];
    for (unit, lut) in luts.iter_mut().enumerate() {
        let seg = [
            x.get(unit * 3).copied().unwrap_or(T::ZERO),
            x.get(unit * 3 + 1).copied().unwrap_or(T::ZERO),
            x.get(unit * 3 + 2).copied().unwrap_or(T::ZERO),
        ];
        for (code, entry) in lut.iter_mut().enumerate() {
            let mut v = T::ZERO;
            let mut rest = code;
            for s in seg {
                match rest % 3 {
                    0 => v = v.sub(s),
                    2 => v = v.add(s),
                    _ => {}
                }
                rest /= 3;
            }
            *entry = v;
        }
    }

    let payload = p.payload();
    let scales = p.scales();
    let mut y = vec![0.0f64; cols];
    let mut group_acc = vec![T::ZERO; groups];
    for col in 0..cols {
        let column = &payload[col * bpc..(col + 1) * bpc];
        group_acc.iter_mut().for_each(|a| *a = T::ZERO);
        for unit in 0..units {
            let code = read_bits5(column, unit * 5);
            if code > 26 {
                return Err(Error::InvalidCodeUnit { value: code as u32 });
            }
            let first_row = unit * 3;
            let last_row = (unit * 3 + 2).min(rows - 1);
            let group = first_row / rows_per_group;
            if last_row / rows_per_group == group {
                group_acc[group] = group_acc[group].add(luts[unit][code as usize]);
            } else {
                // 3-way segment straddles the group boundary.
                let mut rest = code;
                for k in 0..3 {
                    let row = first_row + k;
                    let trit = rest % 3;
                    rest /= 3;
                    if row >= rows {
                        break;
                    }
                    let g = row / rows_per_group;
                    group_acc[g] = match trit {
                        0 => group_acc[g].sub(x[row]),
                        2 => group_acc[g].add(x[row]),
                        _ => group_acc[g],
                    };
                }
            }
        }
        let mut channel = T::ZERO;
        for (group, acc) in group_acc.iter().enumerate() {
            let alpha =
                T::from_f32(scales[granularity.scale_index(group * rows_per_group, col, rows)]);
            channel = channel.add(acc.mul(alpha));
        }
        y[col] = channel.to_f64();
    }
    Ok(y)
}

/// Dispatch on the packed scheme.
pub fn packed_matvec(p: &PackedTensor, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    match p.scheme() {
        PackScheme::Sherry125 => lut_matvec(p, x, cfg),
        PackScheme::Dense2Bit => dense2bit_matvec(p, x, cfg),
        PackScheme::Tl2Ref => tl2ref_matvec(p, x, cfg),
    }
}

/// Reference matrix-vector product over ternary codes, with the same
/// block/group accumulation order as the LUT path.
pub fn ref_matvec(t: &TernaryTensor, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    check_activations(x.len(), t.rows(), x)?;
    match cfg.precision {
        Precision::Single => {
            let xs: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            Ok(ref_kernel::<f32>(t, &xs))
        }
        Precision::Double => Ok(ref_kernel::<f64>(t, x)),
    }
}

#[allow(clippy::needless_range_loop)] // fixed accumulation order
fn ref_kernel<T: Scalar>(t: &TernaryTensor, x: &[T]) -> Vec<f64> {
    let rows = t.rows();
    let cols = t.cols();
    let granularity = t.granularity();
    let groups = granularity.groups_per_column(rows);
    let rows_per_group = rows / groups;
    let scales = t.scales();
    let mut y = vec![0.0f64; cols];
    for col in 0..cols {
        let mut channel = T::ZERO;
        for group in 0..groups {
            let start = group * rows_per_group;
            let mut acc = T::ZERO;
            for chunk_start in (start..start + rows_per_group).step_by(4) {
                let chunk_end = (chunk_start + 4).min(start + rows_per_group);
                let mut block = T::ZERO;
                for row in chunk_start..chunk_end {
                    let c = T::from_f32(t.code(row, col) as f32);
                    block = block.add(c.mul(x[row]));
                }
                acc = acc.add(block);
            }
            let alpha = T::from_f32(scales[granularity.scale_index(start, col, rows)]);
            channel = channel.add(acc.mul(alpha));
        }
        y[col] = channel.to_f64();
    }
    y
}

/// Reference product against a dense matrix (weights already scaled),
/// using the same 4-chunked accumulation order.
pub fn ref_matvec_dense(w: &DenseMatrix, x: &[f64], cfg: &EngineConfig) -> Result<Vec<f64>> {
    check_activations(x.len(), w.rows(), x)?;
    match cfg.precision {
        Precision::Single => {
            let xs: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            Ok(dense_kernel::<f32>(w, &xs))
        }
        Precision::Double => Ok(dense_kernel::<f64>(w, x)),
    }
}

#[allow(clippy::needless_range_loop)] // fixed accumulation order
fn dense_kernel<T: Scalar>(w: &DenseMatrix, x: &[T]) -> Vec<f64> {
    let rows = w.rows();
    let cols = w.cols();
    let mut y = vec![0.0f64; cols];
    for col in 0..cols {
        let mut acc = T::ZERO;
        for chunk_start in (0..rows).step_by(4) {
            let chunk_end = (chunk_start + 4).min(rows);
            let mut block = T::ZERO;
            for row in chunk_start..chunk_end {
                block = block.add(T::from_f64(w.get(row, col)).mul(x[row]));
            }
            acc = acc.add(block);
        }
        y[col] = acc.to_f64();
    }
    y
}

/// Row-wise LUT product: `x` is d_t x d_in, the result d_t x d_out.
/// Segment tables are rebuilt per row since the activations change.
pub fn lut_matmul(p: &PackedTensor, x: &DenseMatrix, cfg: &EngineConfig) -> Result<DenseMatrix> {
    if x.cols() != p.rows() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "matmul {}x{} against packed {}x{}",
                x.rows(),
                x.cols(),
                p.rows(),
                p.cols()
            ),
        });
    }
    let mut out = Vec::with_capacity(x.rows() * p.cols());
    for row in 0..x.rows() {
        out.extend(packed_matvec(p, x.row(row), cfg)?);
    }
    DenseMatrix::from_f64(x.rows(), p.cols(), out)
}
