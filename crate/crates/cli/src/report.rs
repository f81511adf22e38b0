use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nvfp4_emu::analysis::{
    ablation_report, compare_formats, default_thresholds, error_curve, threshold_sweep,
    AblationReport, CurvePoint, FormatComparison, SweepPoint,
};
use nvfp4_emu::io::read_tensor;
use nvfp4_emu::QuantConfig;
use serde::Serialize;
use serde_json::json;

use crate::CliError;

pub const CSV_HELP: &str = "\
CSV output: one section per report, each with its own header row, separated by a blank line.
  --curve            m,v,relative_error     (rows for m = 6, then m = 4)
  --ablation         mean_square,mse_full,mse_hp_scales,mse_hp_values
  --threshold-sweep  x,mse                  (x = 0, 0.5, ..., 6; the first row is 0,0)
  --compare          mxfp4,nvfp4_fixed6,nvfp4_fixed6_cap256,nvfp4_fixed4,nvfp4_adaptive_mse,adaptive_fraction_4
JSON output: one object with \"schema\": 1 and a key per requested report.
With no report flags, every report the inputs allow is produced.";

#[derive(Args)]
pub struct AnalyzeArgs {
    /// FQT1 tensor file; required by every report except --curve.
    input: Option<PathBuf>,
    /// Relative rounding error over [0, M] for M = 6 and 4.
    #[arg(long)]
    curve: bool,
    /// MSE with rounded scales, exact scales, and exact values.
    #[arg(long)]
    ablation: bool,
    /// MSE when only scaled values up to x are cast.
    #[arg(long)]
    threshold_sweep: bool,
    /// MSE under MXFP4 and each NVFP4 scale mode.
    #[arg(long)]
    compare: bool,
    #[arg(long, default_value_t = 121)]
    curve_points: usize,
    /// NVFP4 tensor scale override for --ablation and --compare.
    #[arg(long)]
    tensor_scale: Option<f32>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    out_format: OutFormat,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

#[derive(Default)]
struct Reports {
    curve: Option<Vec<CurvePoint>>,
    ablation: Option<AblationReport>,
    sweep: Option<Vec<SweepPoint>>,
    compare: Option<FormatComparison>,
}

fn csv_section<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl Reports {
    fn to_csv(&self) -> Result<String, CliError> {
        let mut sections = Vec::new();
        if let Some(c) = &self.curve {
            sections.push(csv_section(c)?);
        }
        if let Some(a) = &self.ablation {
            sections.push(csv_section(&[a])?);
        }
        if let Some(s) = &self.sweep {
            sections.push(csv_section(s)?);
        }
        if let Some(c) = &self.compare {
            sections.push(csv_section(&[c])?);
        }
        Ok(sections.join("\n"))
    }

    fn to_json(&self) -> String {
        let mut v = json!({ "schema": 1 });
        if let Some(c) = &self.curve {
            v["curve"] = json!(c);
        }
        if let Some(a) = &self.ablation {
            v["ablation"] = json!(a);
        }
        if let Some(s) = &self.sweep {
            v["threshold_sweep"] = json!(s);
        }
        if let Some(c) = &self.compare {
            v["compare"] = json!(c);
        }
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let none = !(args.curve || args.ablation || args.threshold_sweep || args.compare);
    let needs_input = args.ablation || args.threshold_sweep || args.compare;
    if needs_input && args.input.is_none() {
        return Err(CliError::Usage(
            "--ablation, --threshold-sweep and --compare need an input tensor".into(),
        ));
    }
    let mut cfg = QuantConfig::nvfp4();
    cfg.tensor_scale = args.tensor_scale;
    cfg.validate()?;

    let x = args.input.as_ref().map(read_tensor).transpose()?;
    let mut reports = Reports::default();
    if args.curve || none {
        let mut pts = error_curve(6.0, args.curve_points)?;
        pts.extend(error_curve(4.0, args.curve_points)?);
        reports.curve = Some(pts);
    }
    if let Some(x) = &x {
        if args.ablation || none {
            reports.ablation = Some(ablation_report(x, &cfg)?);
        }
        if args.threshold_sweep || none {
            reports.sweep = Some(threshold_sweep(x, &default_thresholds())?);
        }
        if args.compare || none {
            reports.compare = Some(compare_formats(x, args.tensor_scale)?);
        }
    }

    let text = match args.out_format {
        OutFormat::Csv => reports.to_csv()?,
        OutFormat::Json => reports.to_json(),
    };
    match &args.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
