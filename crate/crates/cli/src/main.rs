//! `nvfp4`: quantize tensor files, inspect quantization error and benchmark the
//! emulated linear layer.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 data format, 4 invalid configuration.

mod bench;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nvfp4_emu::io::{read_quantized, read_tensor, write_quantized, write_tensor_as, Dtype};
use nvfp4_emu::{
    dequantize_tensor, quantize_tensor_detailed, Error, Format, QuantConfig, Rounding, ScaleMode,
    SelectionRule,
};

#[derive(Parser)]
#[command(name = "nvfp4", version, about = "Block-scaled FP4 quantization emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize an FQT1 tensor file into an NVF4 container and print a summary.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        quant: QuantArgs,
    },
    /// Expand an NVF4 container back into an FQT1 tensor file.
    Dequantize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
        dtype: DtypeArg,
    },
    /// Error analyses of a tensor (the curve needs no input).
    #[command(after_help = report::CSV_HELP)]
    Analyze(report::AnalyzeArgs),
    /// Time quantization and the emulated linear layer on random data.
    Bench(bench::BenchArgs),
}

#[derive(Args, Clone)]
struct QuantArgs {
    #[arg(long, value_enum, default_value_t = FormatArg::Nvfp4)]
    format: FormatArg,
    /// Block-maximum target: 6, 4, or adaptive per block.
    #[arg(long, value_enum, default_value_t = ModeArg::Six)]
    mode: ModeArg,
    /// Error measure for adaptive selection.
    #[arg(long, value_enum, default_value_t = RuleArg::Mse)]
    rule: RuleArg,
    #[arg(long, value_enum, default_value_t = RoundArg::Rne)]
    round: RoundArg,
    /// Seed for stochastic rounding.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this tensor scale instead of the computed one (NVFP4 only).
    #[arg(long)]
    tensor_scale: Option<f32>,
}

#[derive(Clone, Copy, ValueEnum)]
pub(crate) enum FormatArg {
    Nvfp4,
    Mxfp4,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum ModeArg {
    #[value(name = "6")]
    Six,
    #[value(name = "4")]
    Four,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Mse,
    L1,
    Absmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundArg {
    Rne,
    Sr,
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    Bf16,
}

impl ModeArg {
    pub(crate) fn scale_mode(self) -> ScaleMode {
        match self {
            ModeArg::Six => ScaleMode::Fixed6,
            ModeArg::Four => ScaleMode::Fixed4,
            ModeArg::Adaptive => ScaleMode::Adaptive46,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModeArg::Six => "6",
            ModeArg::Four => "4",
            ModeArg::Adaptive => "adaptive",
        }
    }
}

/// NVFP4 config for a scale mode. The 4 and adaptive modes use the 256 cap.
pub(crate) fn nvfp4_config(mode: ModeArg) -> QuantConfig {
    let cfg = QuantConfig::nvfp4().with_scale_mode(mode.scale_mode());
    if mode == ModeArg::Four {
        cfg.with_fp8_cap(nvfp4_emu::config::FP8_CAP_ADAPTIVE)
    } else {
        cfg
    }
}

impl QuantArgs {
    fn config(&self) -> QuantConfig {
        let mut cfg = match self.format {
            FormatArg::Nvfp4 => nvfp4_config(self.mode),
            // Leave the mode in place so validation reports bad combinations.
            FormatArg::Mxfp4 => QuantConfig {
                scale_mode: self.mode.scale_mode(),
                ..QuantConfig::mxfp4()
            },
        };
        cfg.selection_rule = match self.rule {
            RuleArg::Mse => SelectionRule::Mse,
            RuleArg::L1 => SelectionRule::L1,
            RuleArg::Absmax => SelectionRule::AbsMax,
        };
        cfg.rounding = match self.round {
            RoundArg::Rne => Rounding::NearestEven,
            RoundArg::Sr => Rounding::Stochastic { seed: self.seed },
        };
        cfg.tensor_scale = self.tensor_scale;
        cfg
    }
}

/// Error carrying the process exit code.
pub(crate) enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(Error::Io(_)) => 2,
            CliError::Lib(Error::InvalidConfig(_)) => 4,
            CliError::Lib(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

fn cmd_quantize(input: PathBuf, output: PathBuf, args: QuantArgs) -> Result<(), CliError> {
    let cfg = args.config();
    cfg.validate()?;
    let x = read_tensor(&input)?;
    let (q, records) = quantize_tensor_detailed(&x, &cfg)?;
    write_quantized(&output, &q)?;

    let blocks = records.len();
    let chose4 = records.iter().filter(|r| r.chosen_m == 4).count();
    let sum_sq: f64 = records.iter().map(|r| r.metrics.sum_sq).sum();
    let format = match q.format() {
        Format::Nvfp4 => "nvfp4",
        Format::Mxfp4 => "mxfp4",
    };
    println!("format      {format}");
    println!("mode        {}", args.mode.name());
    if args.mode == ModeArg::Adaptive {
        println!("rule        {}", cfg.selection_rule.name());
    }
    println!("shape       {:?}", q.shape());
    println!("alpha       {}", q.tensor_scale());
    println!("blocks      {blocks}");
    println!("fraction_4  {}", if blocks == 0 { 0.0 } else { chose4 as f64 / blocks as f64 });
    println!("mse         {}", if x.numel() == 0 { 0.0 } else { sum_sq / x.numel() as f64 });
    Ok(())
}

fn cmd_dequantize(input: PathBuf, output: PathBuf, dtype: DtypeArg) -> Result<(), CliError> {
    let q = read_quantized(&input)?;
    let x = dequantize_tensor(&q)?;
    let dtype = match dtype {
        DtypeArg::F32 => Dtype::F32,
        DtypeArg::Bf16 => Dtype::Bf16,
    };
    write_tensor_as(&output, &x, dtype)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Quantize { input, output, quant } => cmd_quantize(input, output, quant),
        Command::Dequantize { input, output, dtype } => cmd_dequantize(input, output, dtype),
        Command::Analyze(args) => report::cmd_analyze(args),
        Command::Bench(args) => bench::cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
