//! Versioned JSON artifacts and CSV exports.

use std::fs;
use std::io::Write;
use std::path::Path;

use fefet_core::crossbar::CrossbarTile;
use fefet_core::network::EpochLog;
use fefet_core::programming::TranscriptRow;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, SimError, SimResult};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    payload: T,
}

fn ensure_parent(path: &Path) -> SimResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

pub fn save_json<T: Serialize>(path: &Path, kind: &str, payload: &T) -> SimResult<()> {
    ensure_parent(path)?;
    let env = Envelope { kind: kind.to_string(), version: ARTIFACT_VERSION, payload };
    let bytes = serde_json::to_vec(&env)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_json<T: DeserializeOwned>(path: &Path, kind: &str) -> SimResult<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)?;
    if env.kind != kind {
        return Err(SimError::Artifact(format!("expected a {kind} artifact, found {}", env.kind)));
    }
    if env.version != ARTIFACT_VERSION {
        return Err(SimError::Artifact(format!("unsupported artifact version {}", env.version)));
    }
    Ok(env.payload)
}

pub fn write_text(path: &Path, text: &str) -> SimResult<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> SimResult<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    Ok(csv::Writer::from_path(path)?)
}

/// Noiseless conductance of every device of a tile: `row,col,g_pos,g_neg`.
pub fn write_conductance_csv(path: &Path, tile: &CrossbarTile) -> SimResult<()> {
    let g = tile.read_conductance_matrix(true, &fefet_core::crossbar::ReadNoise::NONE, 0)?;
    let mut w = csv_writer(path)?;
    w.write_record(["row", "col", "g_pos", "g_neg"])?;
    for r in 0..tile.rows {
        for c in 0..tile.cols {
            let (gp, gn) = g[r * tile.cols + c];
            let neg = if tile.neg.is_empty() { String::new() } else { gn.to_string() };
            w.write_record([r.to_string(), c.to_string(), gp.to_string(), neg])?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn write_transcript_csv(path: &Path, rows: &[TranscriptRow]) -> SimResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["device", "iteration", "pulse_v", "vg_read", "g_read", "in_band"])?;
    for r in rows {
        w.write_record([
            r.device.to_string(),
            r.iteration.to_string(),
            r.pulse_v.to_string(),
            r.vg_read.to_string(),
            r.g_read.to_string(),
            r.in_band.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trace_csv(path: &Path, trace: &[f64], sample_rate_hz: f64) -> SimResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t_s", "delta_i_rel"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([(i as f64 / sample_rate_hz).to_string(), v.to_string()])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_epoch_log_csv(path: &Path, log: &[EpochLog]) -> SimResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "lr", "train_loss", "val_accuracy"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.train_loss.to_string(),
            e.val_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}
