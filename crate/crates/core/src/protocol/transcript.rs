//! Auditable per-session record and its line-delimited CSV form.
//!
//! Column order is fixed:
//!
//! ```text
//! session_id,bit_index,stage,consumed,forwarded,expected,alarm,decision
//! ```
//!
//! `bit_index` and `expected` are empty for session-level events. No field
//! carries a polarization angle or a secret rotation.

use std::io;

use serde::{Deserialize, Serialize};

use crate::channel::{IntensityReading, Stage};
use crate::message::BitString;

use super::auth::HashCheck;
use super::DecodeError;

pub const CSV_HEADER: &str =
    "session_id,bit_index,stage,consumed,forwarded,expected,alarm,decision";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Pass,
    Alarm,
    Abort,
    Decoded0,
    Decoded1,
    DecodeError,
    EveCapture,
    EveRelay,
    ContinueLowPower,
    HashPublished,
    HashMatch,
    HashMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub session_id: u64,
    pub bit_index: Option<usize>,
    pub stage: Stage,
    pub consumed: u64,
    pub forwarded: u64,
    pub expected: Option<f64>,
    pub alarm: bool,
    pub decision: Decision,
}

impl TranscriptEvent {
    pub fn session(session_id: u64, stage: Stage, decision: Decision) -> Self {
        Self {
            session_id,
            bit_index: None,
            stage,
            consumed: 0,
            forwarded: 0,
            expected: None,
            alarm: false,
            decision,
        }
    }

    pub fn reading(session_id: u64, bit: usize, r: &IntensityReading, alarm: bool) -> Self {
        Self {
            session_id,
            bit_index: Some(bit),
            stage: r.stage,
            consumed: r.photons_consumed,
            forwarded: r.forwarded,
            expected: Some(r.expected),
            alarm,
            decision: if alarm {
                Decision::Alarm
            } else {
                Decision::Pass
            },
        }
    }
}

/// Exit-level classification of a finished session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Aborted,
    HashMismatch,
    DecodeFailed,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Clean => 0,
            Verdict::Aborted => 2,
            Verdict::HashMismatch => 3,
            Verdict::DecodeFailed => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTranscript {
    pub session_id: u64,
    pub events: Vec<TranscriptEvent>,
    pub decoded_bits: Option<BitString>,
    pub aborted: Option<Stage>,
    pub decode_error: Option<DecodeError>,
    pub hash_check: HashCheck,
}

impl SessionTranscript {
    pub fn new(session_id: u64) -> Self {
        Self {
            session_id,
            events: Vec::new(),
            decoded_bits: None,
            aborted: None,
            decode_error: None,
            hash_check: HashCheck::NotRun,
        }
    }

    pub fn push(&mut self, event: TranscriptEvent) {
        self.events.push(event);
    }

    pub fn alarm_count(&self) -> usize {
        self.events.iter().filter(|e| e.alarm).count()
    }

    /// Monitoring readings taken by the legitimate parties.
    pub fn readings(&self) -> impl Iterator<Item = &TranscriptEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.decision, Decision::Pass | Decision::Alarm))
    }

    pub fn verdict(&self) -> Verdict {
        if self.aborted.is_some() {
            Verdict::Aborted
        } else if self.decode_error.is_some() || self.decoded_bits.is_none() {
            Verdict::DecodeFailed
        } else if self.hash_check == HashCheck::Mismatch {
            Verdict::HashMismatch
        } else {
            Verdict::Clean
        }
    }

    pub fn write_csv_rows<W: io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for e in &self.events {
            w.serialize(e)?;
        }
        Ok(())
    }
}

/// Writes the header and every event of every transcript, in order.
pub fn write_csv<W: io::Write>(out: W, transcripts: &[SessionTranscript]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for t in transcripts {
        t.write_csv_rows(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(transcripts: &[SessionTranscript]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, transcripts).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_csv<R: io::Read>(input: R) -> csv::Result<Vec<TranscriptEvent>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_field_order() {
        let mut t = SessionTranscript::new(4);
        let r = IntensityReading {
            stage: Stage::S2,
            photons_consumed: 250,
            forwarded: 750,
            expected: 1000.0,
        };
        t.push(TranscriptEvent::reading(4, 3, &r, false));
        t.push(TranscriptEvent::session(4, Stage::S2, Decision::Abort));
        let csv = to_csv_string(&[t]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "4,3,S2,250,750,1000.0,false,pass");
        assert_eq!(lines[2], "4,,S2,0,0,,false,abort");
        let back = read_csv(csv.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].expected, Some(1000.0));
        assert_eq!(back[1].bit_index, None);
    }

    #[test]
    fn verdict_precedence() {
        let mut t = SessionTranscript::new(0);
        assert_eq!(t.verdict(), Verdict::DecodeFailed);
        t.decoded_bits = Some("1".parse().unwrap());
        assert_eq!(t.verdict().exit_code(), 0);
        t.hash_check = HashCheck::Mismatch;
        assert_eq!(t.verdict().exit_code(), 3);
        t.aborted = Some(Stage::S3);
        assert_eq!(t.verdict().exit_code(), 2);
    }
}
