//! Bit-exact persistence for representation snapshots.
//!
//! File format: one JSON header line
//! `{"magic":"RBLAB1","dtype":"f32le","rows":R,"cols":C,...}`
//! terminated by `\n`, followed by exactly R*C little-endian IEEE-754
//! 32-bit floats in row-major order. Files are self-describing; reading
//! requires no out-of-band configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const SNAPSHOT_MAGIC: &str = "RBLAB1";
const SNAPSHOT_DTYPE: &str = "f32le";

/// A (stimuli x units) activation matrix captured at a training step for a
/// named layer and split.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSnapshot {
    pub run_id: String,
    pub step: u64,
    pub layer: String,
    pub split: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major f32 payload.
    pub data: Vec<f32>,
    /// Strictly increasing ids aligning rows with dataset rows.
    pub stimulus_ids: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    magic: String,
    dtype: String,
    rows: usize,
    cols: usize,
    run_id: String,
    step: u64,
    layer: String,
    split: String,
    stimulus_ids: Vec<u64>,
}

impl RepresentationSnapshot {
    /// Builds a snapshot from a 64-bit matrix, rounding to storage
    /// precision, with ids 0..rows.
    pub fn from_matrix(
        run_id: impl Into<String>,
        step: u64,
        layer: impl Into<String>,
        split: impl Into<String>,
        matrix: &Matrix,
    ) -> RepresentationSnapshot {
        RepresentationSnapshot {
            run_id: run_id.into(),
            step,
            layer: layer.into(),
            split: split.into(),
            rows: matrix.rows(),
            cols: matrix.cols(),
            data: matrix.as_slice().iter().map(|&v| v as f32).collect(),
            stimulus_ids: (0..matrix.rows() as u64).collect(),
        }
    }

    /// Widens the payload back to the 64-bit analysis precision.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("snapshot invariants guarantee a well-formed matrix")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::contract(format!(
                "snapshot payload {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if self.stimulus_ids.len() != self.rows {
            return Err(Error::contract(
                "stimulus id count must equal snapshot row count",
            ));
        }
        if self.stimulus_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("stimulus ids must be strictly increasing"));
        }
        Ok(())
    }
}

pub fn write_snapshot_to(snapshot: &RepresentationSnapshot, w: &mut impl Write) -> Result<()> {
    snapshot.validate()?;
    let header = SnapshotHeader {
        magic: SNAPSHOT_MAGIC.into(),
        dtype: SNAPSHOT_DTYPE.into(),
        rows: snapshot.rows,
        cols: snapshot.cols,
        run_id: snapshot.run_id.clone(),
        step: snapshot.step,
        layer: snapshot.layer.clone(),
        split: snapshot.split.clone(),
        stimulus_ids: snapshot.stimulus_ids.clone(),
    };
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for &v in &snapshot.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot_from(r: &mut impl Read) -> Result<RepresentationSnapshot> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::corrupt("snapshot has no header line"))?;
    let header: SnapshotHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::corrupt(format!("snapshot header is not valid json: {e}")))?;
    if header.magic != SNAPSHOT_MAGIC {
        return Err(Error::corrupt(format!(
            "snapshot magic '{}' is not '{SNAPSHOT_MAGIC}'",
            header.magic
        )));
    }
    if header.dtype != SNAPSHOT_DTYPE {
        return Err(Error::corrupt(format!(
            "unsupported snapshot dtype '{}'",
            header.dtype
        )));
    }
    let payload = &bytes[newline + 1..];
    let expected = header.rows * header.cols * 4;
    if payload.len() != expected {
        return Err(Error::corrupt(format!(
            "snapshot payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let snapshot = RepresentationSnapshot {
        run_id: header.run_id,
        step: header.step,
        layer: header.layer,
        split: header.split,
        rows: header.rows,
        cols: header.cols,
        data,
        stimulus_ids: header.stimulus_ids,
    };
    snapshot
        .validate()
        .map_err(|e| Error::corrupt(format!("snapshot header inconsistent: {e}")))?;
    Ok(snapshot)
}

pub fn write_snapshot(snapshot: &RepresentationSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot_to(snapshot, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<RepresentationSnapshot> {
    read_snapshot_from(&mut BufReader::new(File::open(path)?))
}

/// Wide CSV export: `stimulus_id,unit_0,...,unit_{C-1}`.
pub fn write_snapshot_csv(snapshot: &RepresentationSnapshot, w: &mut impl Write) -> Result<()> {
    snapshot.validate()?;
    write!(w, "stimulus_id")?;
    for c in 0..snapshot.cols {
        write!(w, ",unit_{c}")?;
    }
    writeln!(w)?;
    for r in 0..snapshot.rows {
        write!(w, "{}", snapshot.stimulus_ids[r])?;
        for c in 0..snapshot.cols {
            write!(w, ",{}", snapshot.data[r * snapshot.cols + c])?;
        }
        writeln!(w)?;
    }
    Ok(())
}
