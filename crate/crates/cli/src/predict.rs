use std::io::Write;

use clap::{Args, ValueEnum};
use tmav_core::formats::{write_event_jsonl, EventCsvWriter, FrameReader};
use tmav_core::pipeline::{DEFAULT_SUM_TOLERANCE, DEFAULT_WINDOW};
use tmav_core::{ClassifierProfile, MultiStream, StreamConfig};

use crate::error::CliError;
use crate::{open_input, open_output, IoArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EventFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Frames per window (N).
    #[arg(long, env = "TMAV_WINDOW", default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Classifier overall accuracy used as the update's normalizing term.
    #[arg(long = "p-cnn", env = "TMAV_P_CNN")]
    p_cnn: f64,
    /// Quality-of-experience threshold carried in the classifier profile.
    #[arg(long, env = "TMAV_Q", default_value_t = 0.7)]
    q: f64,
    /// Tumbling windows with a reset after degenerate frames; `false` runs one
    /// continuous chain.
    #[arg(long = "auto-reset", env = "TMAV_AUTO_RESET", default_value_t = true, action = clap::ArgAction::Set)]
    auto_reset: bool,
    /// Seconds between frames, used for event wall times.
    #[arg(long = "frame-interval", env = "TMAV_FRAME_INTERVAL")]
    frame_interval: Option<f64>,
    #[arg(long, env = "TMAV_FORMAT", value_enum, default_value_t = EventFormat::Jsonl)]
    format: EventFormat,
    /// Degeneracy threshold on the largest chained posterior.
    #[arg(long, default_value_t = tmav_core::bayes::DEFAULT_DEGENERACY_EPSILON)]
    epsilon: f64,
    /// Allowed drift of raw scores from summing to one.
    #[arg(long = "sum-tolerance", default_value_t = DEFAULT_SUM_TOLERANCE)]
    sum_tolerance: f64,
    #[arg(long = "model-name", default_value = "classifier")]
    model_name: String,
}

enum Sink {
    Jsonl(Box<dyn Write>),
    Csv(Box<EventCsvWriter<Box<dyn Write>>>, bool),
}

pub fn run(args: PredictArgs) -> Result<(), CliError> {
    let profile =
        ClassifierProfile::new(&args.model_name, args.p_cnn, args.q).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut config = StreamConfig::new(profile)
        .window(args.window)
        .auto_reset(args.auto_reset)
        .frame_interval(args.frame_interval);
    config.epsilon = args.epsilon;

    let input = open_input(&args.io.input)?;
    let output = open_output(&args.io.output)?;
    let mut sink = match args.format {
        EventFormat::Jsonl => Sink::Jsonl(output),
        EventFormat::Csv => Sink::Csv(Box::new(EventCsvWriter::new(output)), false),
    };

    let mut streams = MultiStream::new(&config);
    let mut reader = FrameReader::new(input, args.sum_tolerance);
    let result = (|| {
        while let Some(record) = reader.next() {
            let (stream_id, frame) = record?;
            let event = streams
                .push(&stream_id, frame)
                .map_err(|e| CliError::Schema(format!("line {}: {e}", reader.line())))?;
            match &mut sink {
                Sink::Jsonl(out) => write_event_jsonl(out, &event)?,
                Sink::Csv(w, wrote) => {
                    w.write(&event)?;
                    *wrote = true;
                }
            }
        }
        Ok::<(), CliError>(())
    })();

    // flush what was produced before any error
    match sink {
        Sink::Jsonl(mut out) => out.flush()?,
        Sink::Csv(w, wrote) => {
            w.finish(wrote)?.flush()?;
        }
    }
    result
}
