//! JSON-lines wire protocol for out-of-process classifier backends.
//!
//! One JSON object per line in each direction, strictly request/response:
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"ok":true,"version":1,"labels":["Empty","Fluid","Heavy","Jam"]}
//! -> {"op":"predict","id":1,"image":"frames/0001.png"}
//! <- {"id":1,"scores":{"Empty":0.01,"Fluid":0.79,"Heavy":0.17,"Jam":0.03}}
//! -> {"op":"train","id":2,"items":[{"image":"a.png","label":"Jam"}]}
//! <- {"id":2,"ok":true}
//! <- {"id":3,"ok":false,"error":"cannot open image"}
//! ```
//!
//! `labels` in the hello reply is optional; when present every prediction
//! must cover exactly that set.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, ClassifierBackend, ImageRef, LabeledImage, TrainAck};
use crate::bayes::CategoryDistribution;

pub const PROTOCOL_VERSION: u32 = 1;

/// Raw classifier outputs must sum to one this tightly.
pub const PREDICT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello {
        version: u32,
    },
    Predict {
        id: u64,
        image: ImageRef,
    },
    Train {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        items: Vec<LabeledImage>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn io_err(e: std::io::Error) -> BackendError {
    BackendError::Io(e.to_string())
}

/// Client side of the protocol over any line-oriented byte stream.
#[derive(Debug)]
pub struct ProtocolBackend<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
    labels: Option<Vec<String>>,
}

impl<R: BufRead, W: Write> ProtocolBackend<R, W> {
    /// Performs the hello exchange and checks the protocol version.
    pub fn connect(reader: R, writer: W) -> Result<Self, BackendError> {
        let mut backend = Self {
            reader,
            writer,
            next_id: 1,
            labels: None,
        };
        let reply = backend
            .roundtrip(&Request::Hello {
                version: PROTOCOL_VERSION,
            })
            .map_err(|e| BackendError::Handshake(e.to_string()))?;
        if let Some(error) = reply.error {
            return Err(BackendError::Handshake(error));
        }
        match reply.version {
            Some(PROTOCOL_VERSION) => {}
            Some(v) => {
                return Err(BackendError::Handshake(format!(
                    "adapter speaks version {v}, expected {PROTOCOL_VERSION}"
                )))
            }
            None => return Err(BackendError::Handshake("hello reply has no version".into())),
        }
        if reply.ok == Some(false) {
            return Err(BackendError::Handshake("adapter refused hello".into()));
        }
        backend.labels = reply.labels.map(|mut l| {
            l.sort();
            l
        });
        Ok(backend)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn roundtrip(&mut self, request: &Request) -> Result<Response, BackendError> {
        let mut line = serde_json::to_string(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;

        let mut buf = String::new();
        let n = self.reader.read_line(&mut buf).map_err(io_err)?;
        if n == 0 {
            return Err(BackendError::Io("adapter closed the stream".into()));
        }
        serde_json::from_str(buf.trim_end()).map_err(|e| BackendError::Protocol(format!("bad reply {buf:?}: {e}")))
    }

    fn expect_id(reply: &Response, id: u64) -> Result<(), BackendError> {
        match reply.id {
            Some(got) if got != id => Err(BackendError::Protocol(format!(
                "reply id {got} does not match request id {id}"
            ))),
            _ => Ok(()),
        }
    }
}

impl<R: BufRead, W: Write> ClassifierBackend for ProtocolBackend<R, W> {
    fn train(&mut self, items: &[LabeledImage]) -> Result<TrainAck, BackendError> {
        let id = self.take_id();
        let reply = self.roundtrip(&Request::Train {
            id: Some(id),
            items: items.to_vec(),
        })?;
        Self::expect_id(&reply, id)?;
        if let Some(error) = reply.error {
            return Err(BackendError::Remote(error));
        }
        match reply.ok {
            Some(true) => Ok(TrainAck { trained: items.len() }),
            _ => Err(BackendError::Protocol("train reply lacks \"ok\":true".into())),
        }
    }

    fn predict(&mut self, image: &ImageRef) -> Result<CategoryDistribution, BackendError> {
        let id = self.take_id();
        let reply = self.roundtrip(&Request::Predict {
            id,
            image: image.clone(),
        })?;
        Self::expect_id(&reply, id)?;
        if let Some(error) = reply.error {
            return Err(BackendError::Remote(error));
        }
        let scores = reply
            .scores
            .ok_or_else(|| BackendError::Protocol("predict reply lacks scores".into()))?;
        if let Some(labels) = &self.labels {
            if !scores.keys().eq(labels.iter()) {
                return Err(BackendError::InvalidPrediction(format!(
                    "labels {:?} differ from announced {:?}",
                    scores.keys().collect::<Vec<_>>(),
                    labels
                )));
            }
        }
        let dist = CategoryDistribution::new(0, scores).map_err(|e| BackendError::InvalidPrediction(e.to_string()))?;
        dist.check_normalized(PREDICT_SUM_TOLERANCE)
            .map_err(|e| BackendError::InvalidPrediction(e.to_string()))?;
        Ok(dist)
    }
}

pub type TcpBackend = ProtocolBackend<BufReader<TcpStream>, TcpStream>;

/// Connects to an adapter listening on `addr` (`host:port`).
pub fn connect_tcp(addr: &str) -> Result<TcpBackend, BackendError> {
    let stream = TcpStream::connect(addr).map_err(|e| BackendError::Handshake(format!("{addr}: {e}")))?;
    let reader = BufReader::new(stream.try_clone().map_err(io_err)?);
    ProtocolBackend::connect(reader, stream)
}

/// An adapter running as a child process, spoken to over its stdio.
#[derive(Debug)]
pub struct ChildBackend {
    inner: ProtocolBackend<BufReader<ChildStdout>, ChildStdin>,
    child: Child,
}

impl ChildBackend {
    /// Spawns `program args...` with piped stdin/stdout and says hello.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Handshake(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match ProtocolBackend::connect(BufReader::new(stdout), stdin) {
            Ok(inner) => Ok(Self { inner, child }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.inner.labels()
    }
}

impl ClassifierBackend for ChildBackend {
    fn train(&mut self, items: &[LabeledImage]) -> Result<TrainAck, BackendError> {
        self.inner.train(items)
    }

    fn predict(&mut self, image: &ImageRef) -> Result<CategoryDistribution, BackendError> {
        self.inner.predict(image)
    }
}

impl Drop for ChildBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn replies(lines: &[&str]) -> Cursor<Vec<u8>> {
        Cursor::new(lines.iter().map(|l| format!("{l}\n")).collect::<String>().into_bytes())
    }

    #[test]
    fn request_wire_shape() {
        let hello = serde_json::to_string(&Request::Hello { version: 1 }).unwrap();
        assert_eq!(hello, r#"{"op":"hello","version":1}"#);
        let predict = serde_json::to_string(&Request::Predict {
            id: 4,
            image: "a.png".into(),
        })
        .unwrap();
        assert_eq!(predict, r#"{"op":"predict","id":4,"image":"a.png"}"#);
        let train = serde_json::to_string(&Request::Train {
            id: None,
            items: vec![LabeledImage::new("a.png", "Jam")],
        })
        .unwrap();
        assert_eq!(train, r#"{"op":"train","items":[{"image":"a.png","label":"Jam"}]}"#);
    }

    #[test]
    fn scripted_session() {
        let input = replies(&[
            r#"{"ok":true,"version":1,"labels":["B","A"]}"#,
            r#"{"id":1,"scores":{"A":0.25,"B":0.75}}"#,
            r#"{"id":2,"ok":true}"#,
            r#"{"id":3,"ok":false,"error":"no such file"}"#,
        ]);
        let mut out = Vec::new();
        {
            let mut b = ProtocolBackend::connect(input, &mut out).unwrap();
            assert_eq!(b.labels().unwrap(), ["A", "B"]);
            assert_eq!(b.predict(&"x.png".into()).unwrap().argmax(), ("B", 0.75));
            assert_eq!(b.train(&[LabeledImage::new("x.png", "A")]).unwrap().trained, 1);
            assert_eq!(
                b.predict(&"y.png".into()),
                Err(BackendError::Remote("no such file".into()))
            );
        }
        let sent: Vec<Request> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(sent[0], Request::Hello { version: 1 });
        assert_eq!(
            sent[1],
            Request::Predict {
                id: 1,
                image: "x.png".into()
            }
        );
        assert!(matches!(sent[2], Request::Train { id: Some(2), .. }));
    }

    #[test]
    fn handshake_requires_matching_version() {
        let err = ProtocolBackend::connect(replies(&[r#"{"ok":true,"version":9}"#]), Vec::new()).unwrap_err();
        assert!(matches!(err, BackendError::Handshake(_)));
        let err = ProtocolBackend::connect(replies(&[r#"{"ok":true}"#]), Vec::new()).unwrap_err();
        assert!(matches!(err, BackendError::Handshake(_)));
        let err = ProtocolBackend::connect(replies(&[]), Vec::new()).unwrap_err();
        assert!(matches!(err, BackendError::Handshake(_)));
    }

    #[test]
    fn rejects_unnormalized_or_mislabeled_scores() {
        let input = replies(&[
            r#"{"ok":true,"version":1,"labels":["A","B"]}"#,
            r#"{"id":1,"scores":{"A":0.3,"B":0.3}}"#,
            r#"{"id":2,"scores":{"A":0.5,"C":0.5}}"#,
            r#"{"id":7,"scores":{"A":0.5,"B":0.5}}"#,
            r#"not json"#,
        ]);
        let mut b = ProtocolBackend::connect(input, Vec::new()).unwrap();
        assert!(matches!(
            b.predict(&"x".into()),
            Err(BackendError::InvalidPrediction(_))
        ));
        assert!(matches!(
            b.predict(&"x".into()),
            Err(BackendError::InvalidPrediction(_))
        ));
        assert!(matches!(b.predict(&"x".into()), Err(BackendError::Protocol(_))));
        assert!(matches!(b.predict(&"x".into()), Err(BackendError::Protocol(_))));
        assert!(matches!(b.predict(&"x".into()), Err(BackendError::Io(_))));
    }
}
