//! Instruments for training analysis: effective rank of gradient matrices,
//! normalized weight histograms, and trap detection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Granularity};

/// Effective rank of a matrix: the exponential of the Shannon entropy of
/// the normalized singular-value distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveRank {
    pub er: f64,
    /// Singular values in descending order (before the relative floor).
    pub singular_values: Vec<f64>,
    /// Entropy in nats; negative infinity for the all-zero matrix, keeping
    /// er == exp(entropy).
    pub entropy: f64,
}

impl EffectiveRank {
    /// True when the input carried no signal (all-zero matrix).
    pub fn is_degenerate(&self) -> bool {
        self.er == 0.0
    }
}

/// Relative floor below which singular values are treated as zero.
const SV_RELATIVE_FLOOR: f64 = 1e-12;

/// Compute the effective rank of `g`.
///
/// Singular values below `1e-12 * sigma_max` are excluded from the
/// distribution. The all-zero matrix has no distribution; by convention it
/// reports er = 0 with entropy = -inf.
pub fn effective_rank(g: &DenseMatrix) -> Result<EffectiveRank> {
    let m = DMatrix::from_row_slice(g.rows(), g.cols(), g.values());
    let svd = m.svd(false, false);
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));

    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    if sigma_max <= 0.0 {
        return Ok(EffectiveRank {
            er: 0.0,
            singular_values: sigma,
            entropy: f64::NEG_INFINITY,
        });
    }
    let floor = SV_RELATIVE_FLOOR * sigma_max;
    let retained: Vec<f64> = sigma.iter().copied().filter(|&s| s > floor).collect();
    let total: f64 = retained.iter().sum();
    let entropy: f64 = retained
        .iter()
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(EffectiveRank {
        er: entropy.exp(),
        singular_values: sigma,
        entropy,
    })
}

/// Number of histogram bins.
pub const HIST_BINS: usize = 64;
/// Fixed range of the normalized weight histogram.
pub const HIST_RANGE: (f64, f64) = (-3.0, 3.0);

/// Histogram of normalized weights W / alpha over [-3, 3]; out-of-range
/// mass is clipped into the edge bins so counts always sum to the
/// parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    pub counts: Vec<u64>,
    pub lo: f64,
    pub hi: f64,
    /// Number of scopes whose scale was zero; their weights were
    /// normalized by 1 instead.
    pub zero_scale_scopes: usize,
}

impl WeightHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[inline]
fn bin_of(value: f64) -> usize {
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    let raw = ((value - lo) / width).floor();
    raw.clamp(0.0, (HIST_BINS - 1) as f64) as usize
}

/// Histogram of W normalized by its per-scope scales.
pub fn weight_histogram(
    w: &DenseMatrix,
    scales: &[f32],
    granularity: &Granularity,
) -> Result<WeightHistogram> {
    let (rows, cols) = (w.rows(), w.cols());
    granularity.validate_for(rows)?;
    if scales.len() != granularity.scale_count(rows, cols) {
        return Err(Error::Granularity {
            reason: format!(
                "{} scales but granularity {granularity} needs {}",
                scales.len(),
                granularity.scale_count(rows, cols)
            ),
        });
    }
    let mut counts = vec![0u64; HIST_BINS];
    let mut zero_scopes = vec![false; scales.len()];
    for row in 0..rows {
        for col in 0..cols {
            let scope = granularity.scale_index(row, col, rows);
            let alpha = scales[scope] as f64;
            let norm = if alpha == 0.0 {
                zero_scopes[scope] = true;
                w.get(row, col)
            } else {
                w.get(row, col) / alpha
            };
            counts[bin_of(norm)] += 1;
        }
    }
    Ok(WeightHistogram {
        counts,
        lo: HIST_RANGE.0,
        hi: HIST_RANGE.1,
        zero_scale_scopes: zero_scopes.iter().filter(|&&z| z).count(),
    })
}

/// Mass concentration in the two dominant non-zero modes.
///
/// A healthy ternary layer spreads normalized mass over three modes
/// (-1, 0, +1); a trapped layer concentrates it in the two non-zero ones,
/// driving the fraction toward 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSummary {
    /// Combined mass fraction of the two dominant modes outside the zero bin.
    pub fraction: f64,
    /// Bin centers of those modes, ordered by descending mass.
    pub modes: [f64; 2],
}

pub fn trap_score(hist: &WeightHistogram) -> TrapSummary {
    let zero_bin = bin_of(0.0);
    let width = (hist.hi - hist.lo) / hist.counts.len() as f64;
    let center = |bin: usize| hist.lo + (bin as f64 + 0.5) * width;

    let mut best: [(u64, usize); 2] = [(0, 0), (0, 0)];
    for (bin, &count) in hist.counts.iter().enumerate() {
        if bin == zero_bin {
            continue;
        }
        if count > best[0].0 {
            best[1] = best[0];
            best[0] = (count, bin);
        } else if count > best[1].0 {
            best[1] = (count, bin);
        }
    }
    let total = hist.total();
    let fraction = if total == 0 {
        0.0
    } else {
        (best[0].0 + best[1].0) as f64 / total as f64
    };
    TrapSummary {
        fraction,
        modes: [center(best[0].1), center(best[1].1)],
    }
}
