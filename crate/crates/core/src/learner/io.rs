//! Model container: one JSON header line describing every tensor (name,
//! shape), the hyperparameters and normalizers, followed by each tensor's
//! values as little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::{Gru, Mlp};
use super::{ModelBundle, TrainHyper};
use crate::telemetry::{Normalizers, N_FEATURES};
use crate::{config_digest, Error};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    hyper: TrainHyper,
    hyper_digest: String,
    normalizers: Normalizers,
    n_critics: usize,
    param_count: usize,
    tensors: Vec<TensorInfo>,
}

fn gru_tensors(g: &Gru) -> Vec<(String, Vec<usize>, &[f64])> {
    let (i, h) = (g.input, g.hidden);
    let sizes = [(3 * h, i), (3 * h, h), (3 * h, 0), (3 * h, 0)];
    let names = ["weight_ih", "weight_hh", "bias_ih", "bias_hh"];
    let mut off = 0;
    names
        .iter()
        .zip(sizes)
        .map(|(n, (r, c))| {
            let len = r * c.max(1);
            let shape = if c == 0 { vec![r] } else { vec![r, c] };
            let t = (format!("gru.{n}"), shape, &g.params[off..off + len]);
            off += len;
            t
        })
        .collect()
}

fn mlp_tensors<'a>(prefix: &str, m: &'a Mlp) -> Vec<(String, Vec<usize>, &'a [f64])> {
    let mut out = Vec::new();
    for l in 0..m.layers() {
        let (w, b) = m.layer_range(l);
        out.push((format!("{prefix}.{l}.weight"), vec![m.sizes[l + 1], m.sizes[l]], &m.params[w]));
        out.push((format!("{prefix}.{l}.bias"), vec![m.sizes[l + 1]], &m.params[b]));
    }
    out
}

fn bundle_tensors(m: &ModelBundle, include_critic: bool) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut t = gru_tensors(&m.gru);
    t.extend(mlp_tensors("actor", &m.actor));
    if include_critic {
        for (i, c) in m.critics.iter().enumerate() {
            t.extend(mlp_tensors(&format!("critic{i}"), c));
        }
        for (i, c) in m.target_critics.iter().enumerate() {
            t.extend(mlp_tensors(&format!("target_critic{i}"), c));
        }
    }
    t
}

/// Writes the encoder and actor, plus critics when `include_critic`.
pub fn save_model<W: Write>(m: &ModelBundle, include_critic: bool, mut out: W) -> Result<(), Error> {
    let tensors = bundle_tensors(m, include_critic);
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        hyper: m.hyper.clone(),
        hyper_digest: config_digest(&m.hyper),
        normalizers: m.normalizers,
        n_critics: if include_critic { m.critics.len() } else { 0 },
        param_count: tensors.iter().map(|t| t.2.len()).sum(),
        tensors: tensors
            .iter()
            .map(|(n, s, _)| TensorInfo {
                name: n.clone(),
                shape: s.clone(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, _, data) in &tensors {
        let mut buf = Vec::with_capacity(data.len() * 4);
        for &v in *data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_model<R: BufRead>(mut input: R) -> Result<ModelBundle, Error> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("model header: {e}")))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let h = header.hyper;
    if h.n_quantiles == 0 || h.gru_hidden == 0 || header.n_critics > 2 {
        return Err(Error::Format("model header has impossible shapes".into()));
    }
    let mut m = ModelBundle {
        gru: Gru::zeros(N_FEATURES, h.gru_hidden),
        actor: Mlp::zeros(&h.actor_sizes()),
        critics: (0..header.n_critics).map(|_| Mlp::zeros(&h.critic_sizes())).collect(),
        target_critics: (0..header.n_critics).map(|_| Mlp::zeros(&h.critic_sizes())).collect(),
        normalizers: header.normalizers,
        hyper: h,
    };
    let expected: Vec<(String, Vec<usize>)> =
        bundle_tensors(&m, true).into_iter().map(|(n, s, _)| (n, s)).collect();
    let got: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
    if expected != got {
        return Err(Error::Format("model tensor list does not match its hyperparameters".into()));
    }
    let mut read_into = |name: &str, dst: &mut [f64]| -> Result<(), Error> {
        let mut raw = vec![0u8; dst.len() * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("model truncated in tensor {name}")))?;
        for (d, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        Ok(())
    };
    read_into("gru", &mut m.gru.params)?;
    read_into("actor", &mut m.actor.params)?;
    for c in m.critics.iter_mut().chain(m.target_critics.iter_mut()) {
        read_into("critic", &mut c.params)?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the last model tensor".into()));
    }
    if header.param_count != m.total_param_count() {
        return Err(Error::Format("model parameter count mismatch".into()));
    }
    Ok(m)
}

pub fn save_model_file(m: &ModelBundle, include_critic: bool, path: &Path) -> Result<(), Error> {
    save_model(m, include_critic, BufWriter::new(File::create(path)?))
}

pub fn load_model_file(path: &Path) -> Result<ModelBundle, Error> {
    load_model(BufReader::new(File::open(path)?))
}
