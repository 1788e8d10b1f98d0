//! File formats: CSV matrices and masks, JSON reports, and dictionary checkpoints.
//!
//! Matrices are written one row per line with the shortest representation that
//! parses back to the same `f64`, so files are exact and reproducible.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KfmcError, Result};
use crate::kernel::KernelSpec;
use crate::masked::Mask;
use crate::online::{OnlineHyperparams, OnlineModel};

fn parse_err(what: impl Into<String>) -> KfmcError {
    KfmcError::Parse(what.into())
}

fn read_rows<R: Read>(reader: R) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(format!("line {}: {e}", line + 1)))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    let width = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(parse_err(format!(
            "row {} has {} fields, expected {width}",
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok(rows)
}

fn to_matrix(
    rows: &[Vec<String>],
    cell: impl Fn(&str, usize, usize) -> Result<f64>,
) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let mut out = DMatrix::zeros(m, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            out[(i, j)] = cell(s, i, j)?;
        }
    }
    Ok(out)
}

/// Parses a CSV matrix; `NaN` (any case) or an empty field marks a missing entry.
/// Missing entries come back as NaN and unobserved in the mask.
pub fn parse_matrix_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, Mask)> {
    let rows = read_rows(reader)?;
    let x = to_matrix(&rows, |s, i, j| {
        if s.is_empty() || s.eq_ignore_ascii_case("nan") {
            return Ok(f64::NAN);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| parse_err(format!("entry ({i}, {j}) = {s:?} is not a number")))?;
        if !v.is_finite() {
            return Err(parse_err(format!("entry ({i}, {j}) is not finite")));
        }
        Ok(v)
    })?;
    let mask = Mask::from_finite(&x);
    Ok((x, mask))
}

/// Parses a 0/1 CSV mask (1 = observed).
pub fn parse_mask_csv<R: Read>(reader: R) -> Result<Mask> {
    let rows = read_rows(reader)?;
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let mut mask = Mask::full(m, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            match s.as_str() {
                "1" => {}
                "0" => mask.set(i, j, false),
                other => {
                    return Err(parse_err(format!(
                        "mask entry ({i}, {j}) = {other:?} is not 0 or 1"
                    )))
                }
            }
        }
    }
    Ok(mask)
}

pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, Mask)> {
    parse_matrix_csv(fs::File::open(path)?)
}

pub fn read_mask_csv(path: &Path) -> Result<Mask> {
    parse_mask_csv(fs::File::open(path)?)
}

/// Reads data and, when given, a separate mask; entries missing in either are missing.
pub fn read_masked(data: &Path, mask: Option<&Path>) -> Result<(DMatrix<f64>, Mask)> {
    let (x, mut found) = read_matrix_csv(data)?;
    if let Some(p) = mask {
        let extra = read_mask_csv(p)?;
        if extra.nrows() != found.nrows() || extra.ncols() != found.ncols() {
            return Err(parse_err(format!(
                "mask is {}x{} but data is {}x{}",
                extra.nrows(),
                extra.ncols(),
                found.nrows(),
                found.ncols()
            )));
        }
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !extra.is_observed(i, j) {
                    found.set(i, j, false);
                }
            }
        }
    }
    Ok((x, found))
}

/// CSV text of `x`; entries unobserved in `mask` are written as `NaN`.
pub fn matrix_csv_string(x: &DMatrix<f64>, mask: Option<&Mask>) -> String {
    let mut out = String::new();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if j > 0 {
                out.push(',');
            }
            let hidden = mask.is_some_and(|m| !m.is_observed(i, j));
            if hidden || x[(i, j)].is_nan() {
                out.push_str("NaN");
            } else {
                out.push_str(&format!("{:?}", x[(i, j)]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, x: &DMatrix<f64>, mask: Option<&Mask>) -> Result<()> {
    fs::write(path, matrix_csv_string(x, mask))?;
    Ok(())
}

pub fn write_mask_csv(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = String::new();
    for i in 0..mask.nrows() {
        let row: Vec<&str> = (0..mask.ncols())
            .map(|j| if mask.is_observed(i, j) { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

const MAGIC: &[u8; 8] = b"KFMCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kernel: KernelSpec,
    pub m: usize,
    pub r: usize,
    pub hyperparams: OnlineHyperparams,
    pub samples_seen: u64,
}

/// A dictionary and the settings it was trained with.
///
/// Layout: `KFMCCKPT`, format version (u32 LE), header length (u32 LE), JSON
/// header, then `D` row-major as f64 LE.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub d: DMatrix<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &OnlineModel) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                kernel: model.spec,
                m: model.d.nrows(),
                r: model.d.ncols(),
                hyperparams: model.hp,
                samples_seen: model.samples_seen as u64,
            },
            d: model.d.clone(),
        }
    }

    /// Restores an online model; the momentum buffer starts at zero.
    pub fn into_model(self) -> OnlineModel {
        let mut model =
            OnlineModel::from_dictionary(self.d, &self.header.kernel, &self.header.hyperparams);
        model.samples_seen = self.header.samples_seen as usize;
        model
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| parse_err(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.d.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for i in 0..self.d.nrows() {
            for j in 0..self.d.ncols() {
                out.extend_from_slice(&self.d[(i, j)].to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take_u32 = |at: usize| -> Result<u32> {
            let b = bytes
                .get(at..at + 4)
                .ok_or_else(|| parse_err("checkpoint truncated"))?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        if bytes.get(..8) != Some(MAGIC.as_slice()) {
            return Err(parse_err("not a checkpoint file"));
        }
        let version = take_u32(8)?;
        if version != CHECKPOINT_VERSION {
            return Err(parse_err(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = take_u32(12)? as usize;
        let raw = bytes
            .get(16..16 + len)
            .ok_or_else(|| parse_err("checkpoint header truncated"))?;
        let header: CheckpointHeader = serde_json::from_slice(raw)
            .map_err(|e| parse_err(format!("checkpoint header: {e}")))?;
        header.kernel.validate()?;
        let body = &bytes[16 + len..];
        if body.len() != 8 * header.m * header.r {
            return Err(parse_err(format!(
                "checkpoint body has {} bytes, expected {} for a {}x{} dictionary",
                body.len(),
                8 * header.m * header.r,
                header.m,
                header.r
            )));
        }
        let mut d = DMatrix::zeros(header.m, header.r);
        for (k, chunk) in body.chunks_exact(8).enumerate() {
            d[(k / header.r, k % header.r)] =
                f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(Checkpoint { header, d })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
