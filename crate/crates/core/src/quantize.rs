//! Ternary quantization schemes over configurable granularities.
//!
//! Three schemes are provided:
//!   - `absmean`: dense ternary, alpha = mean |W| per scope, threshold alpha/2
//!   - `twn`: dense ternary with the Gaussian-motivated threshold
//!     0.7 * mean |W| and alpha = mean |W| over the super-threshold set
//!   - `sparse34`: 3:4 structured sparse ternary; every aligned block of four
//!     weights along the input dimension keeps exactly three non-zeros
//!
//! Statistics are accumulated in f64 with a fixed two-level reduction order
//! (rows ascending within a column, columns ascending within a scope) so
//! results are reproducible regardless of how callers parallelize over
//! columns. Scales and thresholds are stored as f32.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Granularity};

/// Quantization scheme tag carried by a [`TernaryTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantScheme {
    AbsMean,
    Twn,
    Sparse34,
}

impl QuantScheme {
    pub fn name(&self) -> &'static str {
        match self {
            QuantScheme::AbsMean => "absmean",
            QuantScheme::Twn => "twn",
            QuantScheme::Sparse34 => "sparse34",
        }
    }
}

/// Ternary codes plus per-scope scales (and thresholds for dense schemes).
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryTensor {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    scales: Vec<f32>,
    thresholds: Option<Vec<f32>>,
    scheme: QuantScheme,
    granularity: Granularity,
}

impl TernaryTensor {
    /// Validating constructor. For `sparse34` every aligned 4-block along
    /// the input dimension must contain exactly three non-zero codes.
    pub fn new(
        rows: usize,
        cols: usize,
        codes: Vec<i8>,
        scales: Vec<f32>,
        thresholds: Option<Vec<f32>>,
        scheme: QuantScheme,
        granularity: Granularity,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || codes.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: format!("{} codes for {rows}x{cols} ternary tensor", codes.len()),
            });
        }
        if !codes.iter().all(|&c| (-1..=1).contains(&c)) {
            return Err(Error::InvalidCodeUnit { value: 2 });
        }
        granularity.validate_for(rows)?;
        let expected_scales = granularity.scale_count(rows, cols);
        if scales.len() != expected_scales {
            return Err(Error::Granularity {
                reason: format!(
                    "{} scales but granularity {granularity} needs {expected_scales}",
                    scales.len()
                ),
            });
        }
        if !scales.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(Error::NonFinite {
                context: "scales".to_string(),
            });
        }
        if let Some(t) = &thresholds {
            if t.len() != expected_scales {
                return Err(Error::Granularity {
                    reason: format!("{} thresholds but {expected_scales} scopes", t.len()),
                });
            }
            if !t.iter().all(|d| d.is_finite()) {
                return Err(Error::NonFinite {
                    context: "thresholds".to_string(),
                });
            }
        }
        if scheme == QuantScheme::Sparse34 {
            if !rows.is_multiple_of(4) {
                return Err(Error::NotDivisible {
                    context: "sparse34 input dimension",
                    len: rows,
                    divisor: 4,
                });
            }
            for col in 0..cols {
                for block in 0..rows / 4 {
                    let nonzeros = (0..4)
                        .filter(|k| codes[(block * 4 + k) * cols + col] != 0)
                        .count();
                    if nonzeros != 3 {
                        return Err(Error::InvalidBlock { nonzeros });
                    }
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            codes,
            scales,
            thresholds,
            scheme,
            granularity,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn thresholds(&self) -> Option<&[f32]> {
        self.thresholds.as_deref()
    }

    pub fn scheme(&self) -> QuantScheme {
        self.scheme
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> i8 {
        self.codes[row * self.cols + col]
    }

    #[inline]
    pub fn scale_for(&self, row: usize, col: usize) -> f32 {
        self.scales[self.granularity.scale_index(row, col, self.rows)]
    }
}

/// Number of weights in one scale scope.
fn scope_len(g: &Granularity, rows: usize, cols: usize) -> usize {
    match g {
        Granularity::PerTensor => rows * cols,
        Granularity::PerChannel => rows,
        Granularity::PerGroup { group_size } => {
            let _ = cols;
            *group_size
        }
    }
}

/// Per-scope sums of |W| using the fixed two-level reduction order.
fn scope_abs_sums(w: &DenseMatrix, g: &Granularity) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    let mut sums = vec![0.0f64; g.scale_count(rows, cols)];
    for col in 0..cols {
        match g {
            Granularity::PerTensor => {
                let mut partial = 0.0;
                for row in 0..rows {
                    partial += w.get(row, col).abs();
                }
                sums[0] += partial;
            }
            Granularity::PerChannel => {
                let mut partial = 0.0;
                for row in 0..rows {
                    partial += w.get(row, col).abs();
                }
                sums[col] = partial;
            }
            Granularity::PerGroup { group_size } => {
                let gpc = rows / group_size;
                for group in 0..gpc {
                    let mut partial = 0.0;
                    for row in group * group_size..(group + 1) * group_size {
                        partial += w.get(row, col).abs();
                    }
                    sums[col * gpc + group] = partial;
                }
            }
        }
    }
    sums
}

fn check_granularity(w: &DenseMatrix, g: &Granularity) -> Result<()> {
    g.validate_for(w.rows())
}

/// Dense ternary quantization with alpha = mean |W| and threshold alpha / 2.
pub fn absmean_quantize(w: &DenseMatrix, g: &Granularity) -> Result<TernaryTensor> {
    check_granularity(w, g)?;
    let (rows, cols) = (w.rows(), w.cols());
    let n = scope_len(g, rows, cols) as f64;
    let alphas: Vec<f64> = scope_abs_sums(w, g).iter().map(|s| s / n).collect();
    let deltas: Vec<f64> = alphas.iter().map(|a| a / 2.0).collect();
    let codes = threshold_codes(w, g, &deltas);
    TernaryTensor::new(
        rows,
        cols,
        codes,
        alphas.iter().map(|&a| a as f32).collect(),
        Some(deltas.iter().map(|&d| d as f32).collect()),
        QuantScheme::AbsMean,
        *g,
    )
}

/// Dense ternary quantization with threshold 0.7 * mean |W| and alpha equal
/// to the mean |W| over the super-threshold set (0 when that set is empty).
pub fn twn_quantize(w: &DenseMatrix, g: &Granularity) -> Result<TernaryTensor> {
    check_granularity(w, g)?;
    let (rows, cols) = (w.rows(), w.cols());
    let n = scope_len(g, rows, cols) as f64;
    let deltas: Vec<f64> = scope_abs_sums(w, g)
        .iter()
        .map(|s| 0.7 * (s / n))
        .collect();

    // Mean |W| over each scope's super-threshold set, same reduction order.
    let mut kept_sums = vec![0.0f64; deltas.len()];
    let mut kept_counts = vec![0usize; deltas.len()];
    for col in 0..cols {
        let mut partials = vec![0.0f64; g.groups_per_column(rows)];
        let mut counts = vec![0usize; partials.len()];
        for row in 0..rows {
            let v = w.get(row, col).abs();
            let scope = g.scale_index(row, col, rows);
            if v > deltas[scope] {
                let local = match g {
                    Granularity::PerGroup { group_size } => row / group_size,
                    _ => 0,
                };
                partials[local] += v;
                counts[local] += 1;
            }
        }
        for (local, (p, c)) in partials.iter().zip(&counts).enumerate() {
            let scope = g.scale_index(local * local_stride(g), col, rows);
            kept_sums[scope] += p;
            kept_counts[scope] += c;
        }
    }
    let alphas: Vec<f64> = kept_sums
        .iter()
        .zip(&kept_counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let codes = threshold_codes(w, g, &deltas);
    TernaryTensor::new(
        rows,
        cols,
        codes,
        alphas.iter().map(|&a| a as f32).collect(),
        Some(deltas.iter().map(|&d| d as f32).collect()),
        QuantScheme::Twn,
        *g,
    )
}

fn local_stride(g: &Granularity) -> usize {
    match g {
        Granularity::PerGroup { group_size } => *group_size,
        _ => 1,
    }
}

/// Eq.-style thresholding: +1 above delta, -1 below -delta, 0 when
/// |W| <= delta (ties at the boundary map to zero).
fn threshold_codes(w: &DenseMatrix, g: &Granularity, deltas: &[f64]) -> Vec<i8> {
    let (rows, cols) = (w.rows(), w.cols());
    let mut codes = vec![0i8; rows * cols];
    for row in 0..rows {
        for col in 0..cols {
            let v = w.get(row, col);
            let d = deltas[g.scale_index(row, col, rows)];
            codes[row * cols + col] = if v > d {
                1
            } else if v < -d {
                -1
            } else {
                0
            };
        }
    }
    codes
}

/// Greedy 3:4 sparse ternary quantization.
///
/// Per aligned 4-block along the input dimension the smallest-magnitude
/// weight is pruned to zero (lowest index wins ties) and the rest keep
/// their sign, with sign(0) = +1. Per scope, alpha is the mean |W| over
/// the kept set.
pub fn sparse34_quantize(w: &DenseMatrix, g: &Granularity) -> Result<TernaryTensor> {
    let (rows, cols) = (w.rows(), w.cols());
    if rows % 4 != 0 {
        return Err(Error::NotDivisible {
            context: "sparse34 input dimension",
            len: rows,
            divisor: 4,
        });
    }
    check_granularity(w, g)?;

    let mut codes = vec![0i8; rows * cols];
    let scopes = g.scale_count(rows, cols);
    let mut kept_sums = vec![0.0f64; scopes];
    for col in 0..cols {
        let gpc = g.groups_per_column(rows);
        let mut partials = vec![0.0f64; gpc];
        for block in 0..rows / 4 {
            let base = block * 4;
            let mut zero_at = 0usize;
            let mut best = f64::INFINITY;
            for k in 0..4 {
                let mag = w.get(base + k, col).abs();
                if mag < best {
                    best = mag;
                    zero_at = k;
                }
            }
            for k in 0..4 {
                let row = base + k;
                if k == zero_at {
                    continue;
                }
                let v = w.get(row, col);
                codes[row * cols + col] = if v < 0.0 { -1 } else { 1 };
                let local = match g {
                    Granularity::PerGroup { group_size } => row / group_size,
                    _ => 0,
                };
                partials[local] += v.abs();
            }
        }
        for (local, p) in partials.iter().enumerate() {
            let scope = g.scale_index(local * local_stride(g), col, rows);
            kept_sums[scope] += p;
        }
    }

    // Exactly three of every four weights are kept in any scope.
    let kept_per_scope = scope_len(g, rows, cols) / 4 * 3;
    let scales: Vec<f32> = kept_sums
        .iter()
        .map(|&s| (s / kept_per_scope as f64) as f32)
        .collect();
    TernaryTensor::new(rows, cols, codes, scales, None, QuantScheme::Sparse34, *g)
}

/// Result of the exhaustive 3:4 search over one column.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub min_error: f64,
    pub codes: Vec<i8>,
    /// Optimal clamped alpha per scale scope of the column.
    pub alphas: Vec<f64>,
}

/// Maximum column length accepted by [`sparse34_oracle`] (3 blocks, 32^3
/// joint assignments).
pub const ORACLE_MAX_LEN: usize = 12;

/// Exhaustive minimizer of the 3:4 L2 reconstruction objective.
///
/// Enumerates every valid 3:4 assignment jointly across the column's
/// blocks; for each assignment the per-scope optimal alpha
/// (sum W*T / sum T^2, clamped at >= 0) is applied and the global minimum
/// is returned. Entirely independent of the greedy quantizer; used to
/// check its optimality.
pub fn sparse34_oracle(column: &[f64], g: &Granularity) -> Result<OracleResult> {
    let len = column.len();
    if len == 0 || !len.is_multiple_of(4) {
        return Err(Error::NotDivisible {
            context: "oracle column length",
            len,
            divisor: 4,
        });
    }
    if len > ORACLE_MAX_LEN {
        return Err(Error::OracleTooLong {
            len,
            max: ORACLE_MAX_LEN,
        });
    }
    if !column.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "oracle column".to_string(),
        });
    }
    g.validate_for(len)?;

    // All 32 valid ternary 4-blocks: zero position (4) x kept signs (8).
    let mut patterns = [[0i8; 4]; 32];
    for (p, pat) in patterns.iter_mut().enumerate() {
        let zero_pos = p >> 3;
        let mut bit = 0;
        for (k, code) in pat.iter_mut().enumerate() {
            if k == zero_pos {
                continue;
            }
            *code = if (p >> bit) & 1 == 0 { 1 } else { -1 };
            bit += 1;
        }
    }

    let blocks = len / 4;
    // Correlation sum W*T per (block, pattern).
    let mut swt = vec![[0.0f64; 32]; blocks];
    for (b, row) in swt.iter_mut().enumerate() {
        for (p, pat) in patterns.iter().enumerate() {
            row[p] = (0..4).map(|k| column[b * 4 + k] * pat[k] as f64).sum();
        }
    }

    // Scope boundaries in block units.
    let blocks_per_scope = match g {
        Granularity::PerGroup { group_size } => group_size / 4,
        _ => blocks,
    };
    let scopes = blocks / blocks_per_scope;
    let mut sw2 = vec![0.0f64; scopes];
    for (i, v) in column.iter().enumerate() {
        sw2[(i / 4) / blocks_per_scope] += v * v;
    }

    let total = 32usize.pow(blocks as u32);
    let mut best_err = f64::INFINITY;
    let mut best_combo = vec![0usize; blocks];
    let mut best_alphas = vec![0.0f64; scopes];
    let mut combo = vec![0usize; blocks];
    let mut alphas = vec![0.0f64; scopes];
    for mut id in 0..total {
        for slot in combo.iter_mut() {
            *slot = id % 32;
            id /= 32;
        }
        let mut err = 0.0;
        for s in 0..scopes {
            let mut corr = 0.0;
            for b in s * blocks_per_scope..(s + 1) * blocks_per_scope {
                corr += swt[b][combo[b]];
            }
            let k = (3 * blocks_per_scope) as f64;
            let alpha = (corr / k).max(0.0);
            alphas[s] = alpha;
            err += sw2[s] - 2.0 * alpha * corr + alpha * alpha * k;
        }
        if err < best_err {
            best_err = err;
            best_combo.copy_from_slice(&combo);
            best_alphas.copy_from_slice(&alphas);
        }
    }

    let mut codes = vec![0i8; len];
    for (b, &p) in best_combo.iter().enumerate() {
        codes[b * 4..b * 4 + 4].copy_from_slice(&patterns[p]);
    }
    Ok(OracleResult {
        min_error: best_err,
        codes,
        alphas: best_alphas,
    })
}

/// Reconstruct the dense matrix T * alpha (element-wise column scaling).
pub fn dequantize(t: &TernaryTensor) -> DenseMatrix {
    let (rows, cols) = (t.rows(), t.cols());
    let mut values = vec![0.0f64; rows * cols];
    for row in 0..rows {
        for col in 0..cols {
            values[row * cols + col] = t.code(row, col) as f64 * t.scale_for(row, col) as f64;
        }
    }
    DenseMatrix::from_f64(rows, cols, values).expect("dequantized values are finite")
}

/// L2 reconstruction error between W and T * alpha, accumulated per column.
pub fn reconstruction_error(w: &DenseMatrix, t: &TernaryTensor) -> Result<f64> {
    if w.rows() != t.rows() || w.cols() != t.cols() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "reconstruction {}x{} vs {}x{}",
                w.rows(),
                w.cols(),
                t.rows(),
                t.cols()
            ),
        });
    }
    let mut total = 0.0f64;
    for col in 0..w.cols() {
        let mut partial = 0.0f64;
        for row in 0..w.rows() {
            let diff = w.get(row, col) - t.code(row, col) as f64 * t.scale_for(row, col) as f64;
            partial += diff * diff;
        }
        total += partial;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> DenseMatrix {
        DenseMatrix::from_f64(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn absmean_single_column() {
        let w = column(&[0.5, -1.0, 0.25, 0.25]);
        let t = absmean_quantize(&w, &Granularity::PerChannel).unwrap();
        assert_eq!(t.scales(), &[0.5]);
        assert_eq!(t.thresholds().unwrap(), &[0.25]);
        assert_eq!(t.codes(), &[1, -1, 0, 0]);
    }

    #[test]
    fn absmean_zero_column_is_degenerate() {
        let w = column(&[0.0; 4]);
        let t = absmean_quantize(&w, &Granularity::PerChannel).unwrap();
        assert_eq!(t.scales(), &[0.0]);
        assert_eq!(t.codes(), &[0, 0, 0, 0]);
    }

    #[test]
    fn absmean_constant_column_saturates() {
        let c = 0.3;
        let w = column(&[c; 4]);
        let t = absmean_quantize(&w, &Granularity::PerChannel).unwrap();
        assert!((t.scales()[0] as f64 - c).abs() < 1e-7);
        assert!((t.thresholds().unwrap()[0] as f64 - c / 2.0).abs() < 1e-7);
        assert_eq!(t.codes(), &[1, 1, 1, 1]);
    }

    #[test]
    fn twn_all_ones() {
        let w = column(&[1.0; 4]);
        let t = twn_quantize(&w, &Granularity::PerChannel).unwrap();
        assert!((t.thresholds().unwrap()[0] - 0.7).abs() < 1e-7);
        assert_eq!(t.codes(), &[1, 1, 1, 1]);
        assert_eq!(t.scales(), &[1.0]);
    }

    #[test]
    fn twn_single_survivor() {
        let w = column(&[1.0, 0.1, 0.1, 0.1]);
        let t = twn_quantize(&w, &Granularity::PerChannel).unwrap();
        assert!((t.thresholds().unwrap()[0] - 0.2275).abs() < 1e-6);
        assert_eq!(t.codes(), &[1, 0, 0, 0]);
        assert_eq!(t.scales(), &[1.0]);
    }

    #[test]
    fn twn_empty_super_threshold_set() {
        let w = column(&[0.0; 4]);
        let t = twn_quantize(&w, &Granularity::PerChannel).unwrap();
        assert_eq!(t.scales(), &[0.0]);
        assert_eq!(t.codes(), &[0, 0, 0, 0]);
    }

    #[test]
    fn sparse34_block_example() {
        let w = column(&[0.9, -0.2, 0.5, -0.7]);
        let t = sparse34_quantize(&w, &Granularity::PerChannel).unwrap();
        assert_eq!(t.codes(), &[1, 0, 1, -1]);
        assert!((t.scales()[0] as f64 - 0.7).abs() < 1e-7);
    }

    #[test]
    fn sparse34_tie_breaks_to_lowest_index() {
        let w = column(&[0.3, 0.3, 0.3, 0.3]);
        let t = sparse34_quantize(&w, &Granularity::PerChannel).unwrap();
        assert_eq!(t.codes(), &[0, 1, 1, 1]);
        assert!((t.scales()[0] as f64 - 0.3).abs() < 1e-7);
    }

    #[test]
    fn sparse34_zero_block() {
        let w = column(&[0.0; 4]);
        let t = sparse34_quantize(&w, &Granularity::PerChannel).unwrap();
        assert_eq!(t.codes(), &[0, 1, 1, 1]);
        assert_eq!(t.scales(), &[0.0]);
    }

    #[test]
    fn sparse34_rejects_bad_dimension() {
        let w = DenseMatrix::from_f64(6, 1, vec![1.0; 6]).unwrap();
        let err = sparse34_quantize(&w, &Granularity::PerChannel).unwrap_err();
        assert!(matches!(err, Error::NotDivisible { .. }));
    }

    #[test]
    fn oracle_matches_hand_computation() {
        let col = [0.9, -0.2, 0.5, -0.7];
        let r = sparse34_oracle(&col, &Granularity::PerChannel).unwrap();
        assert!((r.min_error - 0.12).abs() < 1e-12);
        assert_eq!(r.codes, vec![1, 0, 1, -1]);
        assert!((r.alphas[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn oracle_zero_column() {
        let r = sparse34_oracle(&[0.0; 8], &Granularity::PerChannel).unwrap();
        assert_eq!(r.min_error, 0.0);
        assert_eq!(r.alphas, vec![0.0]);
    }

    #[test]
    fn oracle_rejects_long_or_ragged_input() {
        assert!(matches!(
            sparse34_oracle(&[0.0; 16], &Granularity::PerChannel).unwrap_err(),
            Error::OracleTooLong { .. }
        ));
        assert!(matches!(
            sparse34_oracle(&[0.0; 6], &Granularity::PerChannel).unwrap_err(),
            Error::NotDivisible { .. }
        ));
    }

    #[test]
    fn oracle_agrees_with_quantizer_on_example() {
        let vals = [0.9, -0.2, 0.5, -0.7, 1.1, 0.05, -0.6, 0.3];
        let w = column(&vals);
        let t = sparse34_quantize(&w, &Granularity::PerChannel).unwrap();
        let err = reconstruction_error(&w, &t).unwrap();
        let oracle = sparse34_oracle(&vals, &Granularity::PerChannel).unwrap();
        assert!(err <= oracle.min_error + 1e-9, "{err} vs {}", oracle.min_error);
    }

    #[test]
    fn dequantize_example() {
        let t = TernaryTensor::new(
            4,
            1,
            vec![1, 0, 1, -1],
            vec![0.7],
            None,
            QuantScheme::Sparse34,
            Granularity::PerChannel,
        )
        .unwrap();
        let d = dequantize(&t);
        let a = 0.7f32 as f64;
        assert_eq!(d.values(), &[a, 0.0, a, -a]);
    }

    #[test]
    fn dequantize_is_idempotent_under_requantization() {
        let w = column(&[0.9, -0.2, 0.5, -0.7, 1.1, 0.05, -0.6, 0.3]);
        let t = sparse34_quantize(&w, &Granularity::PerChannel).unwrap();
        let d = dequantize(&t);
        let t2 = sparse34_quantize(&d, &Granularity::PerChannel).unwrap();
        assert_eq!(dequantize(&t2).values(), d.values());
    }

    #[test]
    fn reconstruction_error_examples() {
        let w = column(&[0.9, -0.2, 0.5, -0.7]);
        let t = sparse34_quantize(&w, &Granularity::PerChannel).unwrap();
        let err = reconstruction_error(&w, &t).unwrap();
        assert!((err - 0.12).abs() < 1e-6);

        let exact = dequantize(&t);
        assert!(reconstruction_error(&exact, &t).unwrap() == 0.0);
    }

    #[test]
    fn per_group_equals_per_channel_when_group_spans_column() {
        let vals = [0.9, -0.2, 0.5, -0.7, 1.1, 0.05, -0.6, 0.3];
        let w = column(&vals);
        let g = Granularity::per_group(8).unwrap();
        for quant in [absmean_quantize, twn_quantize, sparse34_quantize] {
            let a = quant(&w, &Granularity::PerChannel).unwrap();
            let b = quant(&w, &g).unwrap();
            assert_eq!(a.codes(), b.codes());
            assert_eq!(a.scales(), b.scales());
        }
    }
}
