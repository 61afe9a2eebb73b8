//! Deterministic captioners speaking the oracle protocol on stdin/stdout.
//!
//! - `echo`: `"An image stored at <path>."`; mentions no objects for any
//!   sensible synonym table.
//! - `energy`: loads the image and computes the mean squared intensity. Above
//!   the threshold it names the true objects (from `--ground-truth` by id, or
//!   the fixed `--objects` list); at or below it names the fixed
//!   hallucinated list.
//! - `truth`: always names the ground-truth objects for the request id.
//! - `fixed`: always answers with the same caption.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::harness::image_io::{load_image, mean_energy};
use crate::harness::oracle::{RequestLine, ResponseLine};

pub const DEFAULT_HALLUCINATED: &[&str] = &["giraffe", "surfboard"];

#[derive(Debug, Clone)]
pub enum MockMode {
    Echo,
    Energy { threshold: f64 },
    Truth,
    Fixed { caption: String },
}

#[derive(Debug, Clone)]
pub struct MockOracle {
    pub mode: MockMode,
    /// Objects named when no ground truth is loaded.
    pub objects: Vec<String>,
    pub hallucinated: Vec<String>,
    pub ground_truth: Option<BTreeMap<String, Vec<String>>>,
    /// Buffer every request until EOF and answer in reverse order.
    pub reverse: bool,
}

impl MockOracle {
    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            objects: Vec::new(),
            hallucinated: DEFAULT_HALLUCINATED.iter().map(|s| s.to_string()).collect(),
            ground_truth: None,
            reverse: false,
        }
    }

    fn truth_for(&self, id: &str) -> Result<&[String]> {
        match &self.ground_truth {
            Some(gt) => gt
                .get(id)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for id {id:?}"))),
            None => Ok(&self.objects),
        }
    }

    pub fn caption(&self, request: &RequestLine) -> Result<String> {
        match &self.mode {
            MockMode::Echo => Ok(format!("An image stored at {}.", request.image)),
            MockMode::Fixed { caption } => Ok(caption.clone()),
            MockMode::Truth => Ok(describe(self.truth_for(&request.id)?)),
            MockMode::Energy { threshold } => {
                let image = load_image::<f64>(&request.image)?;
                if mean_energy(&image) > *threshold {
                    Ok(describe(self.truth_for(&request.id)?))
                } else {
                    Ok(describe(&self.hallucinated))
                }
            }
        }
    }

    /// Serves requests until EOF on `input`.
    pub fn serve(&self, input: impl BufRead, mut output: impl Write) -> Result<()> {
        let io = |e| Error::io("<oracle stdio>", e);
        let mut buffered = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let req: RequestLine = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidArgument(format!("request line {}: {e}", i + 1)))?;
            let resp = ResponseLine {
                caption: self.caption(&req)?,
                id: req.id,
            };
            if self.reverse {
                buffered.push(resp);
            } else {
                write_response(&mut output, &resp).map_err(io)?;
            }
        }
        for resp in buffered.iter().rev() {
            write_response(&mut output, resp).map_err(io)?;
        }
        Ok(())
    }
}

fn write_response(out: &mut impl Write, resp: &ResponseLine) -> std::io::Result<()> {
    let text = serde_json::to_string(resp).expect("response serializes");
    writeln!(out, "{text}")?;
    out.flush()
}

/// Caption naming each object once, e.g. `"There is a dog. There is a hot dog."`.
pub fn describe(objects: &[String]) -> String {
    if objects.is_empty() {
        return "Nothing recognizable.".to_owned();
    }
    objects
        .iter()
        .map(|o| format!("There is a {}.", o.replace('_', " ")))
        .collect::<Vec<_>>()
        .join(" ")
}
