//! JSON Lines persistence for [`SessionLog`].
//!
//! Layout, one JSON object per line:
//!
//! 1. `{"kind":"header","format_version":1,"trace_id":..,"duration_ms":..,
//!    "clamped_actions":..,"config":{..},"config_digest":".."}`
//! 2. one `{"kind":"tick", ..}` line per decision interval, carrying every
//!    [`TickRecord`] field (times in integer ms, bitrates in kbps)
//! 3. a closing `{"kind":"frames","frames":[..]}` block
//!
//! Files ending in `.gz` are gzip-compressed transparently.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{FrameRecord, SessionLog, SimConfig, TickRecord};
use crate::{config_digest, Error};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        format_version: u32,
        trace_id: String,
        duration_ms: u64,
        clamped_actions: u32,
        config: SimConfig,
        config_digest: String,
    },
    Tick(TickRecord),
    Frames {
        frames: Vec<FrameRecord>,
    },
}

pub fn write_session_log<W: Write>(log: &SessionLog, mut out: W) -> Result<(), Error> {
    let header = Line::Header {
        format_version: LOG_FORMAT_VERSION,
        trace_id: log.trace_id.clone(),
        duration_ms: log.duration_ms,
        clamped_actions: log.clamped_actions,
        config: log.config.clone(),
        config_digest: config_digest(&log.config),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &log.ticks {
        serde_json::to_writer(&mut out, &Line::Tick(*t))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut out,
        &Line::Frames {
            frames: log.frames.clone(),
        },
    )?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_session_log<R: BufRead>(input: R) -> Result<SessionLog, Error> {
    let mut log: Option<SessionLog> = None;
    let mut saw_frames = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("session log line {}: {e}", i + 1)))?;
        match (parsed, log.as_mut()) {
            (
                Line::Header {
                    format_version,
                    trace_id,
                    duration_ms,
                    clamped_actions,
                    config,
                    ..
                },
                None,
            ) => {
                if format_version != LOG_FORMAT_VERSION {
                    return Err(Error::Version {
                        found: format_version,
                        expected: LOG_FORMAT_VERSION,
                    });
                }
                log = Some(SessionLog {
                    config,
                    trace_id,
                    duration_ms,
                    ticks: Vec::new(),
                    frames: Vec::new(),
                    clamped_actions,
                });
            }
            (Line::Tick(t), Some(l)) if !saw_frames => l.ticks.push(t),
            (Line::Frames { frames }, Some(l)) if !saw_frames => {
                l.frames = frames;
                saw_frames = true;
            }
            _ => return Err(Error::Format(format!("session log line {}: unexpected record", i + 1))),
        }
    }
    match log {
        Some(l) if saw_frames => Ok(l),
        _ => Err(Error::Format("session log is missing its header or frames block".into())),
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn write_session_log_file(log: &SessionLog, path: &Path) -> Result<(), Error> {
    let file = BufWriter::new(File::create(path)?);
    if is_gz(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        write_session_log(log, &mut enc)?;
        enc.finish()?.flush()?;
        Ok(())
    } else {
        write_session_log(log, file)
    }
}

pub fn read_session_log_file(path: &Path) -> Result<SessionLog, Error> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    read_session_log(BufReader::new(reader))
}
