//! `sherry` - quantize weight files into packed ternary models, run them
//! through the LUT or reference engine, benchmark the packed formats, and
//! drive the toy annealed-QAT harness.
//!
//! Exit codes: 1 malformed input, 2 constraint violation, 3 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sherry_core::error::ErrorCategory;
use sherry_core::layer::LayerScheme;
use sherry_core::matrix::Granularity;
use sherry_core::pack::PackScheme;
use sherry_core::schedule::ScheduleFamily;

mod commands;

#[derive(Parser)]
#[command(name = "sherry", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a WF32 weight file into a packed SHRY model.
    Quantize(QuantizeArgs),
    /// Run a packed model on an activation vector.
    Infer(InferArgs),
    /// Benchmark matvec throughput across packed formats.
    Bench(BenchArgs),
    /// Train the toy teacher-student MLP with annealed quantization.
    TrainToy(TrainToyArgs),
    /// Export analysis tables from a training trace.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantSchemeArg {
    Sparse34,
    Absmean,
    Twn,
}

#[derive(Clone, Copy, ValueEnum)]
enum PackSchemeArg {
    /// Choose from the quantization scheme (sparse34 -> sherry125,
    /// dense schemes -> dense2bit).
    Auto,
    Sherry125,
    Dense2bit,
    Tl2ref,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Tensor,
    Channel,
    Group,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Lut,
    Ref,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerSchemeArg {
    Sparse34,
    Absmean,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Cosine,
    Linear,
    Exponential,
    ConstantZero,
    ConstantOne,
}

#[derive(Clone, Copy, ValueEnum)]
enum SwitchArg {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitArg {
    ErCsv,
    HistCsv,
    TrapSummary,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Input WF32 weight file.
    input: PathBuf,
    /// Output SHRY model file.
    output: PathBuf,
    #[arg(long, value_enum, default_value = "sparse34")]
    scheme: QuantSchemeArg,
    #[arg(long, value_enum, default_value = "group")]
    granularity: GranularityArg,
    /// Group size when --granularity group.
    #[arg(long, default_value_t = 128)]
    group_size: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pack: PackSchemeArg,
}

#[derive(Args)]
struct InferArgs {
    /// Packed SHRY model.
    model: PathBuf,
    /// Text file of whitespace-separated activation values.
    #[arg(long)]
    input: PathBuf,
    /// Tensor name; defaults to the first tensor in the model.
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long, value_enum, default_value = "lut")]
    engine: EngineArg,
    #[arg(long, value_enum, default_value = "single")]
    precision: PrecisionArg,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated packed schemes.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [PackSchemeArg::Sherry125, PackSchemeArg::Dense2bit, PackSchemeArg::Tl2ref])]
    schemes: Vec<PackSchemeArg>,
    /// Comma-separated square sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [512usize, 1024, 4096])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "channel")]
    granularity: GranularityArg,
    #[arg(long, default_value_t = 128)]
    group_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads (this build is single-threaded).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long, value_enum, default_value = "sparse34")]
    scheme: LayerSchemeArg,
    #[arg(long, value_enum, default_value = "on")]
    arenas: SwitchArg,
    #[arg(long, value_enum, default_value = "cosine")]
    schedule: ScheduleArg,
    /// Warmup fraction of total steps, in [0, 1).
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    cadence: u64,
    #[arg(long, value_enum, default_value = "channel")]
    granularity: GranularityArg,
    #[arg(long, default_value_t = 128)]
    group_size: usize,
    /// Trace output path (JSON lines).
    #[arg(long)]
    trace: PathBuf,
    /// Optionally export the trained ternary model.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum)]
    emit: EmitArg,
    #[arg(long)]
    out: PathBuf,
}

impl QuantSchemeArg {
    fn pack_default(self) -> PackScheme {
        match self {
            QuantSchemeArg::Sparse34 => PackScheme::Sherry125,
            _ => PackScheme::Dense2Bit,
        }
    }
}

impl PackSchemeArg {
    fn resolve(self, quant: QuantSchemeArg) -> PackScheme {
        match self {
            PackSchemeArg::Auto => quant.pack_default(),
            PackSchemeArg::Sherry125 => PackScheme::Sherry125,
            PackSchemeArg::Dense2bit => PackScheme::Dense2Bit,
            PackSchemeArg::Tl2ref => PackScheme::Tl2Ref,
        }
    }
}

fn granularity_from(arg: GranularityArg, group_size: usize) -> sherry_core::Result<Granularity> {
    match arg {
        GranularityArg::Tensor => Ok(Granularity::PerTensor),
        GranularityArg::Channel => Ok(Granularity::PerChannel),
        GranularityArg::Group => Granularity::per_group(group_size),
    }
}

impl From<LayerSchemeArg> for LayerScheme {
    fn from(arg: LayerSchemeArg) -> Self {
        match arg {
            LayerSchemeArg::Sparse34 => LayerScheme::Sparse34,
            LayerSchemeArg::Absmean => LayerScheme::AbsMean,
            LayerSchemeArg::Binary => LayerScheme::Binary,
        }
    }
}

impl From<ScheduleArg> for ScheduleFamily {
    fn from(arg: ScheduleArg) -> Self {
        match arg {
            ScheduleArg::Cosine => ScheduleFamily::Cosine,
            ScheduleArg::Linear => ScheduleFamily::Linear,
            ScheduleArg::Exponential => ScheduleFamily::Exponential,
            ScheduleArg::ConstantZero => ScheduleFamily::ConstantZero,
            ScheduleArg::ConstantOne => ScheduleFamily::ConstantOne,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Quantize(args) => commands::quantize(args),
        Command::Infer(args) => commands::infer(args),
        Command::Bench(args) => commands::bench(args),
        Command::TrainToy(args) => commands::train_toy(args),
        Command::Analyze(args) => commands::analyze(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            let code = match e.category {
                ErrorCategory::Parse => 1,
                ErrorCategory::Constraint => 2,
                ErrorCategory::Io => 3,
            };
            ExitCode::from(code)
        }
    }
}
