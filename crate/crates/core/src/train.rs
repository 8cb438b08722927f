//! Teacher-student training harness for quantized MLPs.
//!
//! A fixed random full-precision teacher generates regression targets for
//! standard-normal inputs; a student with the same architecture but
//! quantized linear layers trains against it with plain SGD. Everything is
//! drawn from one seeded stream (teacher, student init, evaluation set,
//! then per-step batches), so a seed fixes the entire run and two runs
//! differing only in the annealing gate consume identical data.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container::{write_packed_model, NamedPacked};
use crate::diagnostics::{effective_rank, weight_histogram};
use crate::error::{Error, Result};
use crate::layer::{LayerScheme, QuantLinearLayer};
use crate::matrix::{DenseMatrix, Granularity};
use crate::pack::{pack, PackScheme};
use crate::schedule::{Schedule, ScheduleFamily};
use crate::trace::TraceRecord;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Layer widths, input first: [d0, d1, ..., dL].
    pub dims: Vec<usize>,
    pub steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub scheme: LayerScheme,
    pub granularity: Granularity,
    pub arenas: bool,
    pub schedule: Schedule,
    /// Record a trace entry every `cadence` steps (plus the final step).
    pub cadence: u64,
    /// Size of the fixed evaluation set used for the recorded loss.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: vec![64, 256, 64],
            steps: 2000,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 1,
            scheme: LayerScheme::Sparse34,
            granularity: Granularity::PerChannel,
            arenas: true,
            schedule: Schedule::new(ScheduleFamily::Cosine, 0.1, 2000)
                .expect("default schedule is valid"),
            cadence: 50,
            eval_samples: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::InvalidConfig {
                reason: format!("dims {:?} must list at least two positive widths", self.dims),
            });
        }
        if self.steps == 0 || self.batch_size == 0 || self.cadence == 0 || self.eval_samples == 0
        {
            return Err(Error::InvalidConfig {
                reason: "steps, batch_size, cadence and eval_samples must be positive"
                    .to_string(),
            });
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("learning rate {} must be finite and >= 0", self.learning_rate),
            });
        }
        if self.schedule.total_steps() != self.steps {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "schedule covers {} steps but training runs {}",
                    self.schedule.total_steps(),
                    self.steps
                ),
            });
        }
        for &d_in in &self.dims[..self.dims.len() - 1] {
            self.granularity.validate_for(d_in)?;
            if self.scheme == LayerScheme::Sparse34 && d_in % 4 != 0 {
                return Err(Error::NotDivisible {
                    context: "sparse34 layer input dimension",
                    len: d_in,
                    divisor: 4,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRecord>,
    pub layers: Vec<QuantLinearLayer>,
    /// Gate value at the end of the schedule (0 unless the family never
    /// reaches zero, e.g. exponential).
    pub final_lambda: f64,
    /// Evaluation loss of the pure ternary student (gate at zero).
    pub final_eval_loss: f64,
}

fn sample_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * scale
        })
        .collect();
    DenseMatrix::from_f64(rows, cols, values).expect("sampled values are finite")
}

fn relu(z: &DenseMatrix) -> DenseMatrix {
    let values: Vec<f64> = z.values().iter().map(|&v| v.max(0.0)).collect();
    DenseMatrix::from_f64(z.rows(), z.cols(), values).expect("relu preserves finiteness")
}

/// Decay rate of the teacher's per-input-row scale profile.
const TEACHER_PROFILE_DECAY: f64 = 3.0;

/// Teacher weights are drawn larger than the student's initialization, so
/// the student must grow its latent weights substantially to fit the
/// targets. That sustained pressure is what drives quantized weights into
/// the trapped regime this harness is built to study; with unit-scale
/// teachers the latent weights barely move and neither trapping nor
/// gradient homogenization is observable.
const TEACHER_SCALE: f64 = 3.0;

fn apply_input_profile(w: &mut DenseMatrix) {
    let (rows, cols) = (w.rows(), w.cols());
    let profile: Vec<f64> = (0..rows)
        .map(|i| (-TEACHER_PROFILE_DECAY * i as f64 / rows as f64).exp())
        .collect();
    let mean_sq = profile.iter().map(|s| s * s).sum::<f64>() / rows as f64;
    let norm = mean_sq.sqrt();
    let values = w.values_mut();
    for (i, &s) in profile.iter().enumerate() {
        for v in &mut values[i * cols..(i + 1) * cols] {
            *v *= s / norm;
        }
    }
}

/// Mean-squared error over every output element.
fn sq_loss(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let n = a.values().len() as f64;
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

fn teacher_forward(weights: &[DenseMatrix], x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut h = x.matmul(&weights[0])?;
    for w in &weights[1..] {
        h = relu(&h).matmul(w)?;
    }
    Ok(h)
}

struct PassResult {
    loss: f64,
    /// Gradient of the loss w.r.t. each layer's input.
    dl_dx: Vec<DenseMatrix>,
    /// Gradient of the loss w.r.t. each layer's latent weights.
    dl_dw: Vec<DenseMatrix>,
}

/// One forward/backward pass of the mean-squared error against `targets`.
fn forward_backward(
    layers: &[QuantLinearLayer],
    x: &DenseMatrix,
    targets: &DenseMatrix,
    lambda: f64,
) -> Result<PassResult> {
    let layer_count = layers.len();
    let mut inputs: Vec<DenseMatrix> = vec![x.clone()];
    let mut pre: Vec<DenseMatrix> = Vec::with_capacity(layer_count);
    for (i, layer) in layers.iter().enumerate() {
        let z = layer.forward(&inputs[i], lambda)?;
        if i + 1 < layer_count {
            inputs.push(relu(&z));
        }
        pre.push(z);
    }
    let prediction = pre.last().expect("at least one layer");
    let loss = sq_loss(prediction, targets);

    let n = prediction.values().len() as f64;
    let mut grad = DenseMatrix::from_f64(
        prediction.rows(),
        prediction.cols(),
        prediction
            .values()
            .iter()
            .zip(targets.values())
            .map(|(&p, &t)| 2.0 * (p - t) / n)
            .collect(),
    )?;

    let mut dl_dx: Vec<Option<DenseMatrix>> = vec![None; layer_count];
    let mut dl_dw: Vec<Option<DenseMatrix>> = vec![None; layer_count];
    for i in (0..layer_count).rev() {
        let (dx, dw) = layers[i].backward(&inputs[i], lambda, &grad)?;
        dl_dw[i] = Some(dw);
        if i > 0 {
            // Gate through the preceding ReLU.
            let masked: Vec<f64> = dx
                .values()
                .iter()
                .zip(pre[i - 1].values())
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
            grad = DenseMatrix::from_f64(dx.rows(), dx.cols(), masked)?;
        }
        dl_dx[i] = Some(dx);
    }
    Ok(PassResult {
        loss,
        dl_dx: dl_dx.into_iter().map(|g| g.expect("backward ran")).collect(),
        dl_dw: dl_dw.into_iter().map(|g| g.expect("backward ran")).collect(),
    })
}

/// Forward through the student at a given gate value.
pub fn student_forward(
    layers: &[QuantLinearLayer],
    x: &DenseMatrix,
    lambda: f64,
) -> Result<DenseMatrix> {
    let mut h = layers[0].forward(x, lambda)?;
    for layer in &layers[1..] {
        h = layer.forward(&relu(&h), lambda)?;
    }
    Ok(h)
}

/// Run the teacher-student loop. Deterministic given the seed.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layer_count = config.dims.len() - 1;

    // The teacher carries a decaying per-input-row scale profile, so its
    // targets have heterogeneous spectral content. A single per-scope alpha
    // flattens that structure in the quantized path; the residual synapse
    // preserves it, which is exactly what the gradient-diversity
    // diagnostics are meant to pick up. Profiles are normalized to unit
    // mean square so the overall signal scale is unchanged.
    let teacher: Vec<DenseMatrix> = (0..layer_count)
        .map(|i| {
            let (d_in, d_out) = (config.dims[i], config.dims[i + 1]);
            let mut w =
                sample_matrix(&mut rng, d_in, d_out, TEACHER_SCALE / (d_in as f64).sqrt());
            apply_input_profile(&mut w);
            w
        })
        .collect();

    let mut layers: Vec<QuantLinearLayer> = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let (d_in, d_out) = (config.dims[i], config.dims[i + 1]);
        let init = sample_matrix(&mut rng, d_in, d_out, 1.0 / (d_in as f64).sqrt());
        layers.push(QuantLinearLayer::new(
            init,
            config.scheme,
            config.granularity,
            config.arenas,
        )?);
    }

    let eval_x = sample_matrix(&mut rng, config.eval_samples, config.dims[0], 1.0);
    let eval_y = teacher_forward(&teacher, &eval_x)?;

    let mut trace = Vec::new();
    for t in 0..config.steps {
        let lambda = if config.arenas {
            config.schedule.lambda_at(t)?
        } else {
            0.0
        };

        let x = sample_matrix(&mut rng, config.batch_size, config.dims[0], 1.0);
        let y = teacher_forward(&teacher, &x)?;
        let step_pass = forward_backward(&layers, &x, &y, lambda)?;

        if t % config.cadence == 0 || t == config.steps - 1 {
            // Diagnostics come from a pass over the fixed evaluation set,
            // so the recorded loss and gradient ranks depend only on the
            // weights and the gate. The evaluation rows outnumber the
            // layer widths, keeping the rank ceiling at d_in rather than
            // at the minibatch size.
            let eval_pass = forward_backward(&layers, &eval_x, &eval_y, lambda)?;
            let mut er_per_layer = Vec::with_capacity(layer_count);
            let mut hist_per_layer = Vec::with_capacity(layer_count);
            for (i, layer) in layers.iter().enumerate() {
                er_per_layer.push(effective_rank(&eval_pass.dl_dx[i])?.er);
                let scales = layer.quantize()?.scales().to_vec();
                hist_per_layer.push(weight_histogram(
                    &layer.weights,
                    &scales,
                    &config.granularity,
                )?);
            }
            trace.push(TraceRecord {
                step: t,
                loss: eval_pass.loss,
                lambda,
                er_per_layer,
                hist_per_layer,
            });
        }

        for (layer, dl_dw) in layers.iter_mut().zip(&step_pass.dl_dw) {
            for (w, &g) in layer.weights.values_mut().iter_mut().zip(dl_dw.values()) {
                *w -= config.learning_rate * g;
            }
        }
    }

    let final_lambda = if config.arenas {
        config.schedule.lambda_at(config.steps)?
    } else {
        0.0
    };
    let final_pred = student_forward(&layers, &eval_x, 0.0)?;
    let final_eval_loss = sq_loss(&final_pred, &eval_y);

    Ok(TrainOutcome {
        trace,
        layers,
        final_lambda,
        final_eval_loss,
    })
}

/// Quantize the trained layers and write them as a packed model.
///
/// Refused while the gate is non-zero: the artifact must be pure ternary.
/// Sparse34 layers pack as sherry125; dense schemes pack as dense2bit.
pub fn export_student(
    layers: &[QuantLinearLayer],
    final_lambda: f64,
    path: &Path,
) -> Result<()> {
    if final_lambda != 0.0 {
        return Err(Error::NonzeroLambda {
            lambda: final_lambda,
        });
    }
    if layers.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "cannot export an empty model".to_string(),
        });
    }
    let mut tensors = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let t = layer.quantize()?;
        let scheme = match layer.scheme {
            LayerScheme::Sparse34 => PackScheme::Sherry125,
            _ => PackScheme::Dense2Bit,
        };
        tensors.push(NamedPacked {
            name: format!("layer{i}"),
            tensor: pack(&t, scheme)?,
        });
    }
    write_packed_model(path, &tensors)
}
