//! Dataset container.
//!
//! One JSON header line followed by `count` fixed-width records of
//! little-endian `f32`: state (`STATE_LEN`), action in kbps, reward,
//! next state (`STATE_LEN`), done flag (0.0 or 1.0).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Normalizers, RewardParams, StateVector, Transition, N_FEATURES, STATE_LEN, WINDOW};
use crate::Error;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const RECORD_FLOATS: usize = 2 * STATE_LEN + 3;

/// Source session of a contiguous run of transitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub trace_id: String,
    pub config_digest: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub provenance: Vec<Provenance>,
    pub normalizers: Normalizers,
    pub reward: RewardParams,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Appends one session's transitions and records where they came from.
    pub fn push_session(&mut self, trace_id: &str, config_digest: &str, transitions: Vec<Transition>) {
        self.provenance.push(Provenance {
            trace_id: trace_id.to_string(),
            config_digest: config_digest.to_string(),
            count: transitions.len(),
        });
        self.transitions.extend(transitions);
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    window: usize,
    features: usize,
    record_floats: usize,
    count: usize,
    normalizers: Normalizers,
    reward: RewardParams,
    provenance: Vec<Provenance>,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<(), Error> {
    let header = Header {
        format_version: DATASET_FORMAT_VERSION,
        window: WINDOW,
        features: N_FEATURES,
        record_floats: RECORD_FLOATS,
        count: ds.transitions.len(),
        normalizers: ds.normalizers,
        reward: ds.reward,
        provenance: ds.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(RECORD_FLOATS * 4);
    for t in &ds.transitions {
        buf.clear();
        for v in t
            .state
            .0
            .iter()
            .chain([t.action_kbps, t.reward].iter())
            .chain(t.next_state.0.iter())
            .chain([if t.done { 1.0f32 } else { 0.0 }].iter())
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(mut input: R) -> Result<Dataset, Error> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("dataset header: {e}")))?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    if header.window != WINDOW || header.features != N_FEATURES || header.record_floats != RECORD_FLOATS {
        return Err(Error::Format(format!(
            "dataset shape {}x{} ({} floats/record) does not match {WINDOW}x{N_FEATURES}",
            header.window, header.features, header.record_floats
        )));
    }
    let mut transitions = Vec::with_capacity(header.count);
    let mut raw = vec![0u8; RECORD_FLOATS * 4];
    let mut vals = vec![0f32; RECORD_FLOATS];
    for i in 0..header.count {
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("dataset truncated at record {i} of {}", header.count)))?;
        for (v, b) in vals.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        transitions.push(Transition {
            state: StateVector(vals[..STATE_LEN].to_vec()),
            action_kbps: vals[STATE_LEN],
            reward: vals[STATE_LEN + 1],
            next_state: StateVector(vals[STATE_LEN + 2..2 * STATE_LEN + 2].to_vec()),
            done: vals[RECORD_FLOATS - 1] != 0.0,
        });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the last dataset record".into()));
    }
    Ok(Dataset {
        transitions,
        provenance: header.provenance,
        normalizers: header.normalizers,
        reward: header.reward,
    })
}

pub fn write_dataset_file(ds: &Dataset, path: &Path) -> Result<(), Error> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset, Error> {
    read_dataset(BufReader::new(File::open(path)?))
}
