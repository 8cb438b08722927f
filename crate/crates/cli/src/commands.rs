//! Subcommand bodies. Every behavior here is a thin shell over library
//! calls; the only CLI-side logic is argument translation and diagnostics.

use std::fs;

use sherry_core::bench::{run_bench, BenchConfig};
use sherry_core::container::{atomic_write, read_packed_model, read_weight_file, NamedPacked};
use sherry_core::engine::{packed_matvec, ref_matvec, EngineConfig};
use sherry_core::error::ErrorCategory;
use sherry_core::matrix::Precision;
use sherry_core::pack::{density, pack, unpack};
use sherry_core::quantize::{absmean_quantize, sparse34_quantize, twn_quantize};
use sherry_core::schedule::Schedule;
use sherry_core::trace::{read_trace, to_er_csv, to_hist_csv, to_trap_csv, write_trace};
use sherry_core::train::{export_student, train, TrainConfig};
use sherry_core::Error;

use crate::{
    granularity_from, AnalyzeArgs, BenchArgs, EmitArg, EngineArg, InferArgs, PrecisionArg,
    QuantSchemeArg, QuantizeArgs, SwitchArg, TrainToyArgs,
};

/// Library error plus optional per-tensor context for diagnostics.
pub struct CommandError {
    pub category: ErrorCategory,
    pub message: String,
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        Self {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

fn tensor_context(name: &str, e: Error) -> CommandError {
    CommandError {
        category: e.category(),
        message: format!("tensor {name}: {e}"),
    }
}

pub type CommandResult = Result<(), CommandError>;

pub fn quantize(args: QuantizeArgs) -> CommandResult {
    let granularity = granularity_from(args.granularity, args.group_size)?;
    let tensors = read_weight_file(&args.input)?;
    let mut packed = Vec::with_capacity(tensors.len());
    for t in &tensors {
        let ternary = match args.scheme {
            QuantSchemeArg::Sparse34 => sparse34_quantize(&t.matrix, &granularity),
            QuantSchemeArg::Absmean => absmean_quantize(&t.matrix, &granularity),
            QuantSchemeArg::Twn => twn_quantize(&t.matrix, &granularity),
        }
        .map_err(|e| tensor_context(&t.name, e))?;
        let p = pack(&ternary, args.pack.resolve(args.scheme))
            .map_err(|e| tensor_context(&t.name, e))?;
        let d = density(&p);
        println!(
            "{}: {} {}x{} payload_bits={} payload_bytes={} scale_bits={} bits_per_weight={:.4}",
            t.name,
            d.scheme.name(),
            p.rows(),
            p.cols(),
            d.payload_bits,
            d.payload_bytes,
            d.scale_bits,
            d.bits_per_weight
        );
        packed.push(NamedPacked {
            name: t.name.clone(),
            tensor: p,
        });
    }
    sherry_core::container::write_packed_model(&args.output, &packed)?;
    Ok(())
}

fn parse_vector(path: &std::path::Path) -> Result<Vec<f64>, CommandError> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    let mut values = Vec::new();
    for token in text.split_whitespace() {
        let v: f64 = token.parse().map_err(|_| {
            CommandError::from(Error::MalformedFile {
                reason: format!("activation file: cannot parse {token:?} as a float"),
            })
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::MalformedFile {
            reason: "activation file contains no values".to_string(),
        }
        .into());
    }
    Ok(values)
}

pub fn infer(args: InferArgs) -> CommandResult {
    let model = read_packed_model(&args.model)?;
    let entry = match &args.tensor {
        Some(name) => model
            .iter()
            .find(|t| &t.name == name)
            .ok_or_else(|| Error::InvalidConfig {
                reason: format!("model has no tensor named {name}"),
            })?,
        None => model.first().ok_or_else(|| Error::MalformedFile {
            reason: "model contains no tensors".to_string(),
        })?,
    };
    let x = parse_vector(&args.input)?;
    let cfg = EngineConfig::with_precision(match args.precision {
        PrecisionArg::Single => Precision::Single,
        PrecisionArg::Double => Precision::Double,
    });
    let y = match args.engine {
        EngineArg::Lut => packed_matvec(&entry.tensor, &x, &cfg)
            .map_err(|e| tensor_context(&entry.name, e))?,
        EngineArg::Ref => {
            let ternary = unpack(&entry.tensor).map_err(|e| tensor_context(&entry.name, e))?;
            ref_matvec(&ternary, &x, &cfg).map_err(|e| tensor_context(&entry.name, e))?
        }
    };
    let mut out = String::with_capacity(y.len() * 16);
    for v in y {
        out.push_str(&format!("{v}\n"));
    }
    print!("{out}");
    Ok(())
}

pub fn bench(args: BenchArgs) -> CommandResult {
    let config = BenchConfig {
        schemes: args
            .schemes
            .iter()
            .map(|&s| s.resolve(QuantSchemeArg::Sparse34))
            .collect(),
        sizes: args.sizes.clone(),
        repeats: args.repeats,
        granularity: granularity_from(args.granularity, args.group_size)?,
        seed: args.seed,
        threads: args.threads,
        ..BenchConfig::default()
    };
    let report = run_bench(&config)?;
    atomic_write(&args.out, report.to_csv().as_bytes())?;
    println!("wrote {} rows to {}", report.rows.len(), args.out.display());
    Ok(())
}

pub fn train_toy(args: TrainToyArgs) -> CommandResult {
    let schedule = Schedule::new(args.schedule.into(), args.warmup, args.steps)?;
    let config = TrainConfig {
        steps: args.steps,
        learning_rate: args.lr,
        batch_size: args.batch,
        seed: args.seed,
        scheme: args.scheme.into(),
        granularity: granularity_from(args.granularity, args.group_size)?,
        arenas: matches!(args.arenas, SwitchArg::On),
        schedule,
        cadence: args.cadence,
        ..TrainConfig::default()
    };
    let outcome = train(&config)?;
    write_trace(&args.trace, &outcome.trace)?;
    println!(
        "trained {} steps: final_lambda={} eval_loss={:.6} ({} trace records)",
        config.steps,
        outcome.final_lambda,
        outcome.final_eval_loss,
        outcome.trace.len()
    );
    if let Some(export) = &args.export {
        export_student(&outcome.layers, outcome.final_lambda, export)?;
        println!("exported packed model to {}", export.display());
    }
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> CommandResult {
    let records = read_trace(&args.trace)?;
    let out = match args.emit {
        EmitArg::ErCsv => to_er_csv(&records),
        EmitArg::HistCsv => to_hist_csv(&records),
        EmitArg::TrapSummary => to_trap_csv(&records),
    };
    atomic_write(&args.out, out.as_bytes())?;
    Ok(())
}
