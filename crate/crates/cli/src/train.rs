use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tmav_core::formats::read_manifest;
use tmav_core::training::protocol::{connect_tcp, ChildBackend};
use tmav_core::training::{MemorizingBackend, ScriptedBackend};
use tmav_core::{ClassifierBackend, LabeledImage, Outcome, TrainingReport, TrainingSession};

use crate::error::CliError;
use crate::{open_file, write_json};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Offline training manifest (`path,label`).
    #[arg(long)]
    offline: PathBuf,
    /// Cross-validation manifest (`path,label`) from the live feed.
    #[arg(long)]
    crossval: PathBuf,
    /// `synthetic` (memorizing), `synthetic:scripted:<acc>,<acc>...`,
    /// `synthetic:stuck:<acc>`, `external:<host:port>` or
    /// `external:stdio:<command> [args...]`.
    #[arg(long, env = "TMAV_BACKEND", default_value = "synthetic")]
    backend: String,
    #[arg(long, env = "TMAV_Q", default_value_t = 0.7)]
    q: f64,
    #[arg(long = "max-retrain-rounds", default_value_t = 1)]
    max_retrain_rounds: usize,
    #[arg(long, env = "TMAV_OUTPUT", default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Memorizing,
    Scripted(Vec<f64>),
    Tcp(String),
    Stdio(Vec<String>),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let schedule = |list: &str| -> Result<Vec<f64>, String> {
            let values = list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad accuracy {v:?}: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err("scripted accuracies must lie in [0, 1]".into());
            }
            Ok(values)
        };
        if s == "synthetic" || s == "synthetic:memorize" {
            return Ok(BackendSpec::Memorizing);
        }
        if let Some(list) = s.strip_prefix("synthetic:scripted:") {
            return schedule(list).map(BackendSpec::Scripted);
        }
        if let Some(acc) = s.strip_prefix("synthetic:stuck:") {
            return schedule(acc).and_then(|v| match v.as_slice() {
                [a] => Ok(BackendSpec::Scripted(vec![*a])),
                _ => Err("stuck takes a single accuracy".into()),
            });
        }
        if let Some(cmd) = s.strip_prefix("external:stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err("external:stdio: needs a command".into());
            }
            return Ok(BackendSpec::Stdio(argv));
        }
        if let Some(addr) = s.strip_prefix("external:") {
            if addr.is_empty() {
                return Err("external: needs an address".into());
            }
            return Ok(BackendSpec::Tcp(addr.to_string()));
        }
        Err(format!("unknown backend {s:?}"))
    }
}

impl BackendSpec {
    fn build(&self, labels: Vec<String>, crossval: &[LabeledImage]) -> Result<Box<dyn ClassifierBackend>, CliError> {
        Ok(match self {
            BackendSpec::Memorizing => Box::new(MemorizingBackend::new(labels)),
            BackendSpec::Scripted(schedule) => {
                if labels.len() < 2 {
                    return Err(CliError::Usage("scripted backend needs at least two labels".into()));
                }
                Box::new(ScriptedBackend::new(labels, crossval, schedule.clone()))
            }
            BackendSpec::Tcp(addr) => Box::new(connect_tcp(addr)?),
            BackendSpec::Stdio(argv) => Box::new(ChildBackend::spawn(&argv[0], &argv[1..])?),
        })
    }
}

#[derive(Debug, Serialize)]
struct TrainOutput<'a> {
    backend: &'a str,
    offline_items: usize,
    crossval_items: usize,
    #[serde(flatten)]
    report: &'a TrainingReport,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let spec: BackendSpec = args.backend.parse().map_err(CliError::Usage)?;
    let offline = read_manifest(open_file(&args.offline)?)?;
    let crossval = read_manifest(open_file(&args.crossval)?)?;
    let labels: Vec<String> = offline
        .iter()
        .chain(&crossval)
        .map(|i| i.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut backend = spec.build(labels, &crossval)?;
    let (offline_items, crossval_items) = (offline.len(), crossval.len());
    let mut session = TrainingSession::new(offline, crossval)
        .with_q_threshold(args.q)?
        .with_max_retrain_rounds(args.max_retrain_rounds);
    let report = session.run(&mut backend)?;

    write_json(
        &args.output,
        &TrainOutput {
            backend: &args.backend,
            offline_items,
            crossval_items,
            report: &report,
        },
    )?;
    match report.outcome {
        Some(Outcome::QualityNotMet { best, .. }) => Err(CliError::QualityNotMet { best, q: args.q }),
        _ => Ok(()),
    }
}
