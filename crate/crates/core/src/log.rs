//! JSON-lines episode logs. One `header` record, one `step` record per
//! simulation step, and a closing `summary` record.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::{RewardComponents, Side, TerminationEvent};
use crate::error::Result;
use crate::plant::SampledParams;
use crate::trajectory::Segment;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub schema: u32,
    pub seed: u64,
    pub side: Side,
    pub params: SampledParams,
    pub trajectory: Vec<[f64; 3]>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub p_tcp: [f64; 3],
    pub p_ref: [f64; 3],
    pub m: usize,
    pub segment: Segment,
    pub tube_delta: f64,
    pub tracking_error: f64,
    pub swing_angle: f64,
    pub p_container: [f64; 3],
    pub reward: RewardComponents,
    pub u_nor: [f64; 7],
    pub u_res: [f64; 7],
    pub event: TerminationEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub side: Side,
    pub success: bool,
    pub steps: u64,
    pub event: TerminationEvent,
    pub attached: bool,
    pub lift_step: Option<u64>,
    pub lift_error: Option<f64>,
    pub lift_swing: Option<f64>,
    pub container_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(EpisodeHeader),
    Step(StepRecord),
    Summary(EpisodeSummary),
}

/// Append-only record of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<LogRecord>,
}

impl EpisodeLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&EpisodeSummary> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Summary(s) => Some(s),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut log = Self::default();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                log.push(serde_json::from_str(&line)?);
            }
        }
        Ok(log)
    }
}
