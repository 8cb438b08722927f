//! Linear layer with dynamically quantized weights and an annealed
//! full-precision residual path.
//!
//! Forward: Y = X * (T alpha) + lambda * X * W, with the latent weights W
//! requantized on every call. Backward combines the straight-through
//! estimate with the exact residual gradient:
//!
//!   dL/dX = dL/dY * (T alpha + lambda W)^T
//!   dL/dW = (1 + lambda) * X^T * dL/dY

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Granularity};
use crate::quantize::{absmean_quantize, sparse34_quantize, QuantScheme, TernaryTensor};

/// Quantization applied by a [`QuantLinearLayer`]. `Binary` is the 1-bit
/// ablation arm: sign(W) * mean|W| per scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerScheme {
    AbsMean,
    Sparse34,
    Binary,
}

impl LayerScheme {
    pub fn name(&self) -> &'static str {
        match self {
            LayerScheme::AbsMean => "absmean",
            LayerScheme::Sparse34 => "sparse34",
            LayerScheme::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuantLinearLayer {
    /// Latent full-precision weights, d_in x d_out.
    pub weights: DenseMatrix,
    pub scheme: LayerScheme,
    pub granularity: Granularity,
    pub arenas_enabled: bool,
}

impl QuantLinearLayer {
    pub fn new(
        weights: DenseMatrix,
        scheme: LayerScheme,
        granularity: Granularity,
        arenas_enabled: bool,
    ) -> Result<Self> {
        granularity.validate_for(weights.rows())?;
        if scheme == LayerScheme::Sparse34 && !weights.rows().is_multiple_of(4) {
            return Err(Error::NotDivisible {
                context: "sparse34 layer input dimension",
                len: weights.rows(),
                divisor: 4,
            });
        }
        Ok(Self {
            weights,
            scheme,
            granularity,
            arenas_enabled,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.cols()
    }

    /// Quantize the current latent weights. Binary codes live in a dense
    /// ternary container tagged `absmean`.
    pub fn quantize(&self) -> Result<TernaryTensor> {
        match self.scheme {
            LayerScheme::AbsMean => absmean_quantize(&self.weights, &self.granularity),
            LayerScheme::Sparse34 => sparse34_quantize(&self.weights, &self.granularity),
            LayerScheme::Binary => self.binary_quantize(),
        }
    }

    fn binary_quantize(&self) -> Result<TernaryTensor> {
        let (rows, cols) = (self.weights.rows(), self.weights.cols());
        let codes: Vec<i8> = self
            .weights
            .values()
            .iter()
            .map(|&v| if v < 0.0 { -1 } else { 1 })
            .collect();

        let scopes = self.granularity.scale_count(rows, cols);
        let mut sums = vec![0.0f64; scopes];
        for col in 0..cols {
            match self.granularity {
                Granularity::PerGroup { group_size } => {
                    let gpc = rows / group_size;
                    for group in 0..gpc {
                        let mut partial = 0.0;
                        for row in group * group_size..(group + 1) * group_size {
                            partial += self.weights.get(row, col).abs();
                        }
                        sums[col * gpc + group] = partial;
                    }
                }
                _ => {
                    let mut partial = 0.0;
                    for row in 0..rows {
                        partial += self.weights.get(row, col).abs();
                    }
                    match self.granularity {
                        Granularity::PerTensor => sums[0] += partial,
                        _ => sums[col] = partial,
                    }
                }
            }
        }
        let scope_len = match self.granularity {
            Granularity::PerTensor => rows * cols,
            Granularity::PerChannel => rows,
            Granularity::PerGroup { group_size } => group_size,
        } as f64;
        let scales: Vec<f32> = sums.iter().map(|&s| (s / scope_len) as f32).collect();
        TernaryTensor::new(
            rows,
            cols,
            codes,
            scales,
            None,
            QuantScheme::AbsMean,
            self.granularity,
        )
    }

    fn check_forward(&self, x: &DenseMatrix, lambda: f64) -> Result<f64> {
        if x.cols() != self.d_in() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "layer forward: input {}x{} against weights {}x{}",
                    x.rows(),
                    x.cols(),
                    self.d_in(),
                    self.d_out()
                ),
            });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig {
                reason: format!("lambda {lambda} must lie in [0, 1]"),
            });
        }
        Ok(if self.arenas_enabled { lambda } else { 0.0 })
    }

    /// Combined forward matrix T alpha + lambda W for the current weights.
    fn effective_matrix(&self, lambda: f64) -> Result<DenseMatrix> {
        let quantized = crate::quantize::dequantize(&self.quantize()?);
        if lambda == 0.0 {
            return Ok(quantized);
        }
        let mut values = quantized.values().to_vec();
        for (v, &w) in values.iter_mut().zip(self.weights.values()) {
            *v += lambda * w;
        }
        DenseMatrix::from_f64(self.d_in(), self.d_out(), values)
    }

    /// Y = X * (T alpha) + lambda * X * W. The gate is forced to zero when
    /// the residual synapse is disabled.
    pub fn forward(&self, x: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
        let lambda = self.check_forward(x, lambda)?;
        x.matmul(&self.effective_matrix(lambda)?)
    }

    /// The residual term lambda * X * W alone (test hook for gradient
    /// checks against the residual path).
    pub fn residual_forward(&self, x: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
        let lambda = self.check_forward(x, lambda)?;
        let mut y = x.matmul(&self.weights)?;
        for v in y.values_mut() {
            *v *= lambda;
        }
        Ok(y)
    }

    /// Returns (dL/dX, dL/dW).
    pub fn backward(
        &self,
        x: &DenseMatrix,
        lambda: f64,
        dl_dy: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let lambda_eff = if self.arenas_enabled { lambda } else { 0.0 };
        let (dl_dx, mut dl_dw, _) = self.backward_parts(x, lambda, dl_dy)?;
        for v in dl_dw.values_mut() {
            *v *= 1.0 + lambda_eff;
        }
        Ok((dl_dx, dl_dw))
    }

    /// Split latent-weight gradient: the straight-through path X^T dL/dY
    /// and the residual path lambda X^T dL/dY, plus dL/dX.
    pub fn backward_parts(
        &self,
        x: &DenseMatrix,
        lambda: f64,
        dl_dy: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
        let lambda = self.check_forward(x, lambda)?;
        if dl_dy.rows() != x.rows() || dl_dy.cols() != self.d_out() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "layer backward: upstream {}x{} against output {}x{}",
                    dl_dy.rows(),
                    dl_dy.cols(),
                    x.rows(),
                    self.d_out()
                ),
            });
        }
        let effective = self.effective_matrix(lambda)?;
        let dl_dx = dl_dy.matmul_transpose(&effective)?;
        let ste = x.transposed_matmul(dl_dy)?;
        let mut residual = ste.clone();
        for v in residual.values_mut() {
            *v *= lambda;
        }
        Ok((dl_dx, ste, residual))
    }
}
