//! Matrix-vector microbenchmark across the packed formats.
//!
//! Each (scheme, size) cell quantizes one random square tensor with the
//! 3:4 scheme, packs it into the requested format and times the matching
//! matvec kernel. The harness is single-threaded; the configured thread
//! count is recorded in every report row.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{packed_matvec, EngineConfig};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Granularity};
use crate::pack::{density, pack, PackScheme};
use crate::quantize::sparse34_quantize;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub schemes: Vec<PackScheme>,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    pub granularity: Granularity,
    pub engine: EngineConfig,
    pub seed: u64,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            schemes: vec![PackScheme::Sherry125, PackScheme::Dense2Bit, PackScheme::Tl2Ref],
            sizes: vec![512, 1024, 4096],
            repeats: 25,
            warmup: 3,
            granularity: Granularity::PerChannel,
            engine: EngineConfig::default(),
            seed: 42,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub scheme: PackScheme,
    pub rows: usize,
    pub cols: usize,
    pub granularity: Granularity,
    pub repeats: usize,
    pub median_ns: u128,
    pub p10_ns: u128,
    pub p90_ns: u128,
    pub payload_bytes: u64,
    pub scale_bytes: u64,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "scheme,rows,cols,granularity,repeats,median_ns,p10_ns,p90_ns,payload_bytes,scale_bytes,threads";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scheme.name(),
                r.rows,
                r.cols,
                r.granularity,
                r.repeats,
                r.median_ns,
                r.p10_ns,
                r.p90_ns,
                r.payload_bytes,
                r.scale_bytes,
                r.threads
            ));
        }
        out
    }
}

/// Nearest-rank percentile over a sorted slice.
fn percentile(sorted: &[u128], q: f64) -> u128 {
    let idx = (q / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.repeats == 0 || config.sizes.is_empty() || config.schemes.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "bench needs schemes, sizes and at least one repeat".to_string(),
        });
    }
    if config.threads != 1 {
        return Err(Error::InvalidConfig {
            reason: "this build runs the bench on a single thread".to_string(),
        });
    }
    let mut rows = Vec::new();
    for &size in &config.sizes {
        config.granularity.validate_for(size)?;
        if size % 4 != 0 {
            return Err(Error::NotDivisible {
                context: "bench size",
                len: size,
                divisor: 4,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ size as u64);
        let values: Vec<f64> = (0..size * size)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let w = DenseMatrix::from_f64(size, size, values)?;
        let ternary = sparse34_quantize(&w, &config.granularity)?;
        let x: Vec<f64> = (0..size).map(|_| StandardNormal.sample(&mut rng)).collect();

        for &scheme in &config.schemes {
            let packed = pack(&ternary, scheme)?;
            let report = density(&packed);

            for _ in 0..config.warmup {
                black_box(packed_matvec(&packed, &x, &config.engine)?);
            }
            let mut times: Vec<u128> = Vec::with_capacity(config.repeats);
            for _ in 0..config.repeats {
                let start = Instant::now();
                black_box(packed_matvec(&packed, &x, &config.engine)?);
                times.push(start.elapsed().as_nanos());
            }
            times.sort_unstable();

            rows.push(BenchRow {
                scheme,
                rows: size,
                cols: size,
                granularity: config.granularity,
                repeats: config.repeats,
                median_ns: percentile(&times, 50.0),
                p10_ns: percentile(&times, 10.0),
                p90_ns: percentile(&times, 90.0),
                payload_bytes: report.payload_bytes,
                scale_bytes: report.scale_bits / 8,
                threads: config.threads,
            });
        }
    }
    Ok(BenchReport { rows })
}
