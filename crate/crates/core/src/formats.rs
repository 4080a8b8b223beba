//! On-disk and on-wire formats: frame JSON lines, event JSON lines and CSV
//! summaries, power/thermal trace CSVs, dataset manifests and run metadata.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::bayes::CategoryDistribution;
use crate::energy::{EnergyError, PowerTrace, ThermalTrace, TrainingRunMeta};
use crate::pipeline::StreamEvent;
use crate::training::LabeledImage;

pub const DEFAULT_STREAM_ID: &str = "default";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// One input frame: `{"stream_id":..,"frame_id":..,"scores":{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    #[serde(default = "default_stream")]
    pub stream_id: String,
    pub frame_id: u64,
    pub scores: BTreeMap<String, f64>,
}

fn default_stream() -> String {
    DEFAULT_STREAM_ID.to_string()
}

impl FrameRecord {
    pub fn into_distribution(self) -> Result<(String, CategoryDistribution), crate::bayes::BayesError> {
        let dist = CategoryDistribution::new(self.frame_id, self.scores)?;
        Ok((self.stream_id, dist))
    }
}

/// Reads frame records one per line; blank lines are skipped and errors carry
/// 1-based line numbers. Scores must lie in `[0, 1]` and sum to one within
/// `sum_tolerance`.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    sum_tolerance: f64,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R, sum_tolerance: f64) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            sum_tolerance,
        }
    }

    /// 1-based number of the last line read.
    pub fn line(&self) -> usize {
        self.line
    }

    fn parse(&self, text: &str) -> Result<(String, CategoryDistribution), FormatError> {
        let schema = |message: String| FormatError::Schema {
            line: self.line,
            message,
        };
        let record: FrameRecord = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        let (stream, dist) = record.into_distribution().map_err(|e| schema(e.to_string()))?;
        dist.check_normalized(self.sum_tolerance)
            .map_err(|e| schema(e.to_string()))?;
        Ok((stream, dist))
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<(String, CategoryDistribution), FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

pub fn write_event_jsonl<W: Write>(out: &mut W, event: &StreamEvent) -> Result<(), FormatError> {
    serde_json::to_writer(&mut *out, event)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_events_jsonl<R: BufRead>(reader: R) -> Result<Vec<StreamEvent>, FormatError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| FormatError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(events)
}

#[derive(Debug, Serialize, Deserialize)]
struct EventCsvRow<'a> {
    frame_id: u64,
    raw_label: &'a str,
    tmav_label: &'a str,
    degenerate: bool,
}

/// CSV summary writer: `frame_id,raw_label,tmav_label,degenerate`.
pub struct EventCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> EventCsvWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn write(&mut self, event: &StreamEvent) -> Result<(), FormatError> {
        self.inner.serialize(EventCsvRow {
            frame_id: event.frame_id,
            raw_label: &event.raw_label,
            tmav_label: &event.tmav_label,
            degenerate: event.degenerate,
        })?;
        Ok(())
    }

    /// Writes the header even when no event was written.
    pub fn finish(mut self, wrote_any: bool) -> Result<W, FormatError> {
        if !wrote_any {
            self.inner
                .write_record(["frame_id", "raw_label", "tmav_label", "degenerate"])?;
        }
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| FormatError::Io(e.into_error()))
    }
}

fn read_pairs<R: Read>(reader: R, value_column: &str) -> Result<Vec<(f64, f64)>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let want = ["timestamp_s", value_column];
    if headers.len() != 2 || headers.iter().zip(want).any(|(h, w)| h != w) {
        return Err(FormatError::Schema {
            line: 1,
            message: format!(
                "expected header `timestamp_s,{value_column}`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<(f64, f64)>().enumerate() {
        out.push(row.map_err(|e| FormatError::Schema {
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// `timestamp_s,watts`
pub fn read_power_csv<R: Read>(reader: R) -> Result<PowerTrace, FormatError> {
    Ok(PowerTrace::new(read_pairs(reader, "watts")?)?)
}

/// `timestamp_s,celsius`
pub fn read_thermal_samples<R: Read>(reader: R) -> Result<Vec<(f64, f64)>, FormatError> {
    read_pairs(reader, "celsius")
}

pub fn read_thermal_csv<R: Read>(reader: R, baseline_temp: f64) -> Result<ThermalTrace, FormatError> {
    Ok(ThermalTrace::new(read_thermal_samples(reader)?, baseline_temp)?)
}

/// Dataset manifest with header `path,label`.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<LabeledImage>, FormatError> {
    #[derive(Deserialize)]
    struct Row {
        path: String,
        label: String,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(FormatError::Schema {
            line: 1,
            message: "expected header `path,label`".into(),
        });
    }
    rdr.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| FormatError::Schema {
                line: i + 2,
                message: e.to_string(),
            })?;
            if row.path.is_empty() || row.label.is_empty() {
                return Err(FormatError::Schema {
                    line: i + 2,
                    message: "empty path or label".into(),
                });
            }
            Ok(LabeledImage::new(row.path, row.label))
        })
        .collect()
}

/// Run metadata JSON: `{model, duration_s, image_count, accuracy, q}`.
pub fn read_run_meta<R: Read>(reader: R) -> Result<TrainingRunMeta, FormatError> {
    let meta: TrainingRunMeta = serde_json::from_reader(reader)?;
    meta.validate()?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_reader_reports_line_numbers() {
        let input = "{\"stream_id\":\"s\",\"frame_id\":1,\"scores\":{\"A\":0.5,\"B\":0.5}}\n\n{\"frame_id\":2,\"scores\":{\"A\":0.5,\"B\":0.6}}\n{bad\n";
        let got: Vec<_> = FrameReader::new(input.as_bytes(), 1e-3).collect();
        assert_eq!(got.len(), 3);
        let (stream, dist) = got[0].as_ref().unwrap();
        assert_eq!(stream, "s");
        assert_eq!(dist.frame_id, 1);
        assert!(matches!(got[1], Err(FormatError::Schema { line: 3, .. })));
        assert!(matches!(got[2], Err(FormatError::Schema { line: 4, .. })));
    }

    #[test]
    fn frame_reader_defaults_stream_and_rejects_range() {
        let ok = "{\"frame_id\":1,\"scores\":{\"A\":1.0}}";
        let (stream, _) = FrameReader::new(ok.as_bytes(), 1e-3).next().unwrap().unwrap();
        assert_eq!(stream, DEFAULT_STREAM_ID);
        let bad = "{\"frame_id\":1,\"scores\":{\"A\":1.5,\"B\":-0.5}}";
        assert!(FrameReader::new(bad.as_bytes(), 1e-3).next().unwrap().is_err());
        let extra = "{\"frame_id\":1,\"scores\":{\"A\":1.0},\"junk\":1}";
        assert!(FrameReader::new(extra.as_bytes(), 1e-3).next().unwrap().is_err());
    }

    #[test]
    fn trace_csvs() {
        let power = read_power_csv("timestamp_s,watts\n0,2\n1,2\n".as_bytes()).unwrap();
        assert_eq!(power.samples(), [(0.0, 2.0), (1.0, 2.0)]);
        assert!(matches!(
            read_power_csv("time,watts\n0,2\n".as_bytes()),
            Err(FormatError::Schema { line: 1, .. })
        ));
        assert!(matches!(
            read_power_csv("timestamp_s,watts\n0,2\n1,x\n".as_bytes()),
            Err(FormatError::Schema { line: 3, .. })
        ));
        let thermal = read_thermal_csv("timestamp_s,celsius\n0,70\n5,93.6\n".as_bytes(), 69.24).unwrap();
        assert_eq!(thermal.peak(), Some(93.6));
    }

    #[test]
    fn manifest_and_meta() {
        let m = read_manifest("path,label\na.png,Jam\nb.png,Fluid\n".as_bytes()).unwrap();
        assert_eq!(
            m,
            [LabeledImage::new("a.png", "Jam"), LabeledImage::new("b.png", "Fluid")]
        );
        assert!(read_manifest("file,label\na,b\n".as_bytes()).is_err());
        assert!(matches!(
            read_manifest("path,label\na.png,\n".as_bytes()),
            Err(FormatError::Schema { line: 2, .. })
        ));
        let meta = read_run_meta(
            r#"{"model":"VGG16","duration_s":5864,"image_count":360,"accuracy":0.9893,"q":0.7}"#.as_bytes(),
        )
        .unwrap();
        assert_eq!(meta.model_name, "VGG16");
        assert!(read_run_meta(r#"{"model":"x","duration_s":-1,"image_count":1,"accuracy":0.9}"#.as_bytes()).is_err());
    }

    #[test]
    fn csv_summary_header_when_empty() {
        let out = EventCsvWriter::new(Vec::new()).finish(false).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "frame_id,raw_label,tmav_label,degenerate\n"
        );
    }
}
