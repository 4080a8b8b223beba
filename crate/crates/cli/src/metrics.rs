use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tmav_core::bayes::{DEFAULT_DEGENERACY_EPSILON, DEFAULT_HORIZON_CAP, DEFAULT_MAX_WINDOW};
use tmav_core::energy::DOUBLING_INTERVALS;
use tmav_core::formats::{read_power_csv, read_run_meta, read_thermal_samples};
use tmav_core::{
    average_power, compute_ecti, degeneracy_horizon, lifespan_reduction, select_model, thermal_summary, Ecti, Horizon,
    ModelCandidate, ThermalSummary, ThermalTrace,
};

use crate::error::CliError;
use crate::{open_file, open_output, write_json, ReportFormat};

#[derive(Debug, Args)]
pub struct EctiArgs {
    /// Run metadata JSON; pair each with a `--power` trace in the same order.
    #[arg(long = "meta", required = true)]
    meta: Vec<PathBuf>,
    /// Power trace CSV (`timestamp_s,watts`).
    #[arg(long = "power", required = true)]
    power: Vec<PathBuf>,
    /// Threshold used for model selection.
    #[arg(long, env = "TMAV_Q", default_value_t = 0.7)]
    q: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    #[arg(long, env = "TMAV_OUTPUT", default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Serialize)]
struct ModelRow {
    model: String,
    duration_s: f64,
    image_count: u64,
    accuracy: f64,
    q: f64,
    average_power_w: f64,
    ecti: Ecti,
}

#[derive(Debug, Serialize)]
struct EctiReport {
    models: Vec<ModelRow>,
    selected: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selection_error: Option<String>,
}

pub fn run_ecti(args: EctiArgs) -> Result<(), CliError> {
    if args.meta.len() != args.power.len() {
        return Err(CliError::Usage(format!(
            "{} --meta files but {} --power traces",
            args.meta.len(),
            args.power.len()
        )));
    }
    let mut models = Vec::new();
    for (meta_path, power_path) in args.meta.iter().zip(&args.power) {
        let meta = read_run_meta(open_file(meta_path)?)
            .map_err(|e| CliError::Schema(format!("{}: {e}", meta_path.display())))?;
        let trace = read_power_csv(open_file(power_path)?)
            .map_err(|e| CliError::Schema(format!("{}: {e}", power_path.display())))?;
        let e = average_power(&trace).map_err(|e| CliError::Schema(format!("{}: {e}", power_path.display())))?;
        let ecti = compute_ecti(&meta, e).map_err(|e| CliError::Schema(e.to_string()))?;
        models.push(ModelRow {
            model: meta.model_name,
            duration_s: meta.duration_s,
            image_count: meta.image_count,
            accuracy: meta.accuracy,
            q: meta.q,
            average_power_w: e.watts(),
            ecti,
        });
    }

    // undefined metrics cannot compete
    let candidates: Vec<ModelCandidate> = models
        .iter()
        .filter_map(|m| m.ecti.value().map(|v| ModelCandidate::new(&m.model, v.0, m.accuracy)))
        .collect();
    let (selected, selection_error) = match select_model(&candidates, args.q) {
        Ok(name) => (Some(name.to_string()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = EctiReport {
        models,
        selected,
        selection_error,
    };

    match args.format {
        ReportFormat::Json => write_json(&args.output, &report),
        ReportFormat::Table => {
            let mut out = open_output(&args.output)?;
            writeln!(
                out,
                "{:<12} {:>10} {:>8} {:>9} {:>10} {:>18}",
                "model", "time_s", "images", "accuracy", "power_w", "ecti_kwh"
            )?;
            for m in &report.models {
                let ecti = match m.ecti {
                    Ecti::Defined { kwh_per_image } => format!("{:.3e}", kwh_per_image.0),
                    Ecti::Undefined { raw_kwh_per_image, .. } => format!("undefined ({:.3e})", raw_kwh_per_image.0),
                };
                writeln!(
                    out,
                    "{:<12} {:>10.0} {:>8} {:>9.4} {:>10.2} {:>18}",
                    m.model, m.duration_s, m.image_count, m.accuracy, m.average_power_w, ecti
                )?;
            }
            match (&report.selected, &report.selection_error) {
                (Some(name), _) => writeln!(out, "selected: {name}")?,
                (None, Some(err)) => writeln!(out, "selected: none ({err})")?,
                (None, None) => {}
            }
            out.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct ThermalArgs {
    /// Thermal trace CSV (`timestamp_s,celsius`); repeat once per sensor.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    /// Idle baseline temperature in degrees C.
    #[arg(long, conflicts_with = "baseline_trace", required_unless_present = "baseline_trace")]
    baseline: Option<f64>,
    /// Idle trace whose maximum is taken as the baseline.
    #[arg(long = "baseline-trace")]
    baseline_trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    #[arg(long, env = "TMAV_OUTPUT", default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Serialize)]
struct SensorRow {
    trace: String,
    #[serde(flatten)]
    summary: ThermalSummary,
}

#[derive(Debug, Serialize)]
struct LifespanFactor {
    doubling_interval_c: f64,
    reduction: f64,
}

#[derive(Debug, Serialize)]
struct ThermalReport {
    baseline_c: f64,
    sensors: Vec<SensorRow>,
    /// Mean of per-sensor peaks.
    peak_c: f64,
    deviation_c: f64,
    lifespan: Vec<LifespanFactor>,
}

fn schema_at(path: &std::path::Path) -> impl Fn(tmav_core::formats::FormatError) -> CliError + '_ {
    move |e| CliError::Schema(format!("{}: {e}", path.display()))
}

pub fn run_thermal(args: ThermalArgs) -> Result<(), CliError> {
    let baseline = match (&args.baseline, &args.baseline_trace) {
        (Some(b), _) => *b,
        (None, Some(path)) => {
            let samples = read_thermal_samples(open_file(path)?).map_err(schema_at(path))?;
            samples
                .iter()
                .map(|s| s.1)
                .reduce(f64::max)
                .ok_or_else(|| CliError::Schema(format!("{}: empty baseline trace", path.display())))?
        }
        (None, None) => unreachable!("clap requires one baseline source"),
    };

    let mut sensors = Vec::new();
    for path in &args.traces {
        let samples = read_thermal_samples(open_file(path)?).map_err(schema_at(path))?;
        let trace =
            ThermalTrace::new(samples, baseline).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let summary = thermal_summary(&trace).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        sensors.push(SensorRow {
            trace: path.display().to_string(),
            summary,
        });
    }
    let peak = sensors.iter().map(|s| s.summary.peak).sum::<f64>() / sensors.len() as f64;
    let lifespan = DOUBLING_INTERVALS
        .iter()
        .map(|&interval| {
            lifespan_reduction(peak, baseline, interval).map(|reduction| LifespanFactor {
                doubling_interval_c: interval,
                reduction,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let report = ThermalReport {
        baseline_c: baseline,
        sensors,
        peak_c: peak,
        deviation_c: peak - baseline,
        lifespan,
    };

    match args.format {
        ReportFormat::Json => write_json(&args.output, &report),
        ReportFormat::Table => {
            let mut out = open_output(&args.output)?;
            writeln!(out, "baseline: {:.2} C", report.baseline_c)?;
            for s in &report.sensors {
                writeln!(
                    out,
                    "{}: peak {:.2} C, mean {:.2} C, deviation {:.2} C",
                    s.trace, s.summary.peak, s.summary.mean, s.summary.deviation_from_baseline
                )?;
            }
            writeln!(
                out,
                "peak {:.2} C, deviation {:.2} C",
                report.peak_c, report.deviation_c
            )?;
            for f in &report.lifespan {
                writeln!(
                    out,
                    "lifespan reduction (2x per {} C): {:.3}x",
                    f.doubling_interval_c, f.reduction
                )?;
            }
            out.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct HorizonArgs {
    /// Per-frame score repeated along the chain.
    #[arg(long)]
    score: f64,
    #[arg(long = "p-cnn", env = "TMAV_P_CNN")]
    p_cnn: f64,
    #[arg(long, default_value_t = DEFAULT_DEGENERACY_EPSILON)]
    epsilon: f64,
    #[arg(long = "max-steps", default_value_t = DEFAULT_HORIZON_CAP)]
    max_steps: usize,
    /// Seconds between frames; reports the video span a full window covers.
    #[arg(long = "frame-interval", env = "TMAV_FRAME_INTERVAL")]
    frame_interval: Option<f64>,
    #[arg(long, env = "TMAV_OUTPUT", default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Serialize)]
struct HorizonReport {
    score: f64,
    p_cnn: f64,
    epsilon: f64,
    horizon: Horizon,
    max_window: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    snippet_seconds: Option<f64>,
}

pub fn run_horizon(args: HorizonArgs) -> Result<(), CliError> {
    let horizon = degeneracy_horizon(args.score, args.p_cnn, args.epsilon, args.max_steps)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write_json(
        &args.output,
        &HorizonReport {
            score: args.score,
            p_cnn: args.p_cnn,
            epsilon: args.epsilon,
            horizon,
            max_window: DEFAULT_MAX_WINDOW,
            snippet_seconds: args.frame_interval.map(|t| t * DEFAULT_MAX_WINDOW as f64),
        },
    )
}
