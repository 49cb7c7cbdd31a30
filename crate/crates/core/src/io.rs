//! File formats.
//!
//! * Rig: JSON with a mandatory `version`, the neutral mesh, one record per
//!   blendshape (`{"dense": [...]}` or `{"positions": [...], "values": [...]}`),
//!   corrective arrays `pairs`, `triples` and `quads`, and optional names.
//! * Weights: CSV with a header of blendshape names and one row per frame.
//! * Targets: CSV with one row per coordinate and one column per frame, or a
//!   binary file (`.bin`) holding the magic `RIGSEQ01`, row and column counts
//!   as little-endian `u64`, then the values as little-endian `f64` in
//!   column-major order.
//! * Cluster assignment: JSON with `version`, `k`, `vertex_cluster` and
//!   `blendshape_cluster`.
//!
//! Floats are written in shortest round-trip form, so saving a loaded file
//! reproduces it byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{check_len, Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};
use crate::metrics::MetricsReport;
use crate::rig::{Corrective, RigModel, SparseDelta};

pub const FORMAT_VERSION: u32 = 1;
const SEQUENCE_MAGIC: &[u8; 8] = b"RIGSEQ01";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigDoc {
    version: u32,
    n: usize,
    m: usize,
    neutral: Vec<f64>,
    base: Vec<BaseRecord>,
    correctives: CorrectiveDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BaseRecord {
    Dense {
        dense: Vec<f64>,
    },
    Sparse {
        positions: Vec<usize>,
        values: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CorrectiveDoc {
    pairs: Vec<CorrectiveRecord>,
    triples: Vec<CorrectiveRecord>,
    quads: Vec<CorrectiveRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectiveRecord {
    indices: Vec<usize>,
    positions: Vec<usize>,
    values: Vec<f64>,
}

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

fn check_version(version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn corrective_record(c: &Corrective) -> CorrectiveRecord {
    CorrectiveRecord {
        indices: c.indices().to_vec(),
        positions: c.delta().positions().to_vec(),
        values: c.delta().values().to_vec(),
    }
}

pub fn rig_to_json(rig: &RigModel) -> String {
    let dim = rig.dim();
    let base = (0..rig.num_controllers())
        .map(|e| {
            let col = rig.base_column(e);
            let nnz = col.iter().filter(|&&v| v != 0.0).count();
            if 2 * nnz < dim {
                let (positions, values) = col
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(p, &v)| (p, v))
                    .unzip();
                BaseRecord::Sparse { positions, values }
            } else {
                BaseRecord::Dense { dense: col.to_vec() }
            }
        })
        .collect();
    let doc = RigDoc {
        version: FORMAT_VERSION,
        n: rig.num_vertices(),
        m: rig.num_controllers(),
        neutral: rig.neutral().to_vec(),
        base,
        correctives: CorrectiveDoc {
            pairs: rig.pairs().iter().map(corrective_record).collect(),
            triples: rig.triples().iter().map(corrective_record).collect(),
            quads: rig.quads().iter().map(corrective_record).collect(),
        },
        names: rig.names().map(<[String]>::to_vec),
    };
    let mut out = serde_json::to_string(&doc).expect("finite rig data serializes");
    out.push('\n');
    out
}

pub fn rig_from_json(text: &str) -> Result<RigModel> {
    let doc: RigDoc = serde_json::from_str(text).map_err(format_err)?;
    check_version(doc.version)?;
    let dim = 3 * doc.n;
    check_len("neutral coordinates", dim, doc.neutral.len())?;
    check_len("blendshape records", doc.m, doc.base.len())?;
    let mut base = Array2::zeros((dim, doc.m));
    for (e, record) in doc.base.into_iter().enumerate() {
        match record {
            BaseRecord::Dense { dense } => {
                check_len("dense blendshape record", dim, dense.len())?;
                for (p, v) in dense.into_iter().enumerate() {
                    base[[p, e]] = v;
                }
            }
            BaseRecord::Sparse { positions, values } => {
                let delta = SparseDelta::new(positions, values)?;
                if let Some(&p) = delta.positions().last() {
                    if p >= dim {
                        return Err(Error::IndexOutOfRange {
                            what: "blendshape record position",
                            index: p,
                            size: dim,
                        });
                    }
                }
                for (&p, &v) in delta.positions().iter().zip(delta.values()) {
                    base[[p, e]] = v;
                }
            }
        }
    }
    let mut correctives = Vec::new();
    for (order, tier) in [
        (2, doc.correctives.pairs),
        (3, doc.correctives.triples),
        (4, doc.correctives.quads),
    ] {
        for record in tier {
            if record.indices.len() != order {
                return Err(Error::Format(format!(
                    "corrective {:?} listed in the tier of order {order}",
                    record.indices
                )));
            }
            let delta = SparseDelta::new(record.positions, record.values)?;
            correctives.push(Corrective::new(record.indices, delta)?);
        }
    }
    let rig = RigModel::new(doc.neutral, base, correctives)?;
    match doc.names {
        Some(names) => rig.with_names(names),
        None => Ok(rig),
    }
}

pub fn save_rig(path: impl AsRef<Path>, rig: &RigModel) -> Result<()> {
    Ok(fs::write(path, rig_to_json(rig))?)
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<RigModel> {
    rig_from_json(&fs::read_to_string(path)?)
}

/// CSV with `names` as header and one row per frame.
pub fn weights_to_csv(weights: &WeightMatrix, names: &[String]) -> Result<String> {
    check_len("weight column names", weights.num_controllers(), names.len())?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(names).map_err(format_err)?;
    for t in 0..weights.num_frames() {
        writer
            .write_record(weights.frame(t).iter().map(|v| v.to_string()))
            .map_err(format_err)?;
    }
    let bytes = writer.into_inner().map_err(format_err)?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

/// Parses a weights CSV; returns the header and the `m × T` matrix. Values
/// must lie in `[0, 1]`.
pub fn weights_from_csv(text: &str) -> Result<(Vec<String>, WeightMatrix)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let names: Vec<String> = reader.headers().map_err(format_err)?.iter().map(str::to_owned).collect();
    let mut frames = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(format_err)?;
        let frame = record
            .iter()
            .map(|field| {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("frame {row}: bad weight {field:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Format(format!("frame {row}: weight {v} outside [0, 1]")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        frames.push(frame);
    }
    let weights = WeightMatrix::from_frames(names.len(), &frames)?;
    Ok((names, weights))
}

pub fn save_weights(path: impl AsRef<Path>, rig: &RigModel, weights: &WeightMatrix) -> Result<()> {
    let names: Vec<String> = (0..rig.num_controllers()).map(|e| rig.controller_name(e)).collect();
    Ok(fs::write(path, weights_to_csv(weights, &names)?)?)
}

/// Loads weights for `rig`, checking the column count.
pub fn load_weights(path: impl AsRef<Path>, rig: &RigModel) -> Result<WeightMatrix> {
    let (names, weights) = weights_from_csv(&fs::read_to_string(path)?)?;
    check_len("weight columns", rig.num_controllers(), names.len())?;
    Ok(weights)
}

pub fn targets_to_text(targets: &MeshSequence) -> String {
    let mut out = String::new();
    let view = targets.view();
    for row in view.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn targets_from_text(text: &str) -> Result<MeshSequence> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad value {f:?}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            check_len("target columns", first.len(), row.len())?;
        }
        rows.push(row);
    }
    if !rows.len().is_multiple_of(3) {
        return Err(Error::Format(format!(
            "target row count {} is not a multiple of 3",
            rows.len()
        )));
    }
    let frames = rows.first().map_or(0, Vec::len);
    MeshSequence::from_array(Array2::from_shape_fn((rows.len(), frames), |(r, c)| rows[r][c]))
}

pub fn targets_to_binary(targets: &MeshSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * targets.num_coords() * targets.num_frames());
    out.extend_from_slice(SEQUENCE_MAGIC);
    out.extend_from_slice(&(targets.num_coords() as u64).to_le_bytes());
    out.extend_from_slice(&(targets.num_frames() as u64).to_le_bytes());
    for t in 0..targets.num_frames() {
        for v in targets.frame(t) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn targets_from_binary(bytes: &[u8]) -> Result<MeshSequence> {
    if bytes.len() < 24 || &bytes[..8] != SEQUENCE_MAGIC {
        return Err(Error::Format("missing RIGSEQ01 header".into()));
    }
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (read_u64(8), read_u64(16));
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(24))
        .ok_or_else(|| Error::Format("sequence size overflows".into()))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "sequence of {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if !rows.is_multiple_of(3) {
        return Err(Error::Format(format!("row count {rows} is not a multiple of 3")));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let frames: Vec<Vec<f64>> = bytes[24..]
        .chunks_exact(8 * rows.max(1))
        .take(cols)
        .map(|col| {
            col.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    if rows == 0 {
        return Ok(MeshSequence::zeros(0, cols));
    }
    MeshSequence::from_frames(rows, &frames)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bin"))
}

/// Writes binary for a `.bin` extension and CSV otherwise.
pub fn save_targets(path: impl AsRef<Path>, targets: &MeshSequence) -> Result<()> {
    let path = path.as_ref();
    if is_binary(path) {
        fs::write(path, targets_to_binary(targets))?;
    } else {
        fs::write(path, targets_to_text(targets))?;
    }
    Ok(())
}

pub fn load_targets(path: impl AsRef<Path>) -> Result<MeshSequence> {
    let path = path.as_ref();
    if is_binary(path) {
        targets_from_binary(&fs::read(path)?)
    } else {
        targets_from_text(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentDoc {
    version: u32,
    k: usize,
    vertex_cluster: Vec<usize>,
    blendshape_cluster: Vec<usize>,
}

pub fn assignment_to_json(assignment: &ClusterAssignment) -> String {
    let doc = AssignmentDoc {
        version: FORMAT_VERSION,
        k: assignment.k(),
        vertex_cluster: assignment.vertex_cluster().to_vec(),
        blendshape_cluster: assignment.blendshape_cluster().to_vec(),
    };
    let mut out = serde_json::to_string(&doc).expect("integers serialize");
    out.push('\n');
    out
}

pub fn assignment_from_json(text: &str) -> Result<ClusterAssignment> {
    let doc: AssignmentDoc = serde_json::from_str(text).map_err(format_err)?;
    check_version(doc.version)?;
    ClusterAssignment::new(doc.k, doc.vertex_cluster, doc.blendshape_cluster)
}

pub fn save_assignment(path: impl AsRef<Path>, assignment: &ClusterAssignment) -> Result<()> {
    Ok(fs::write(path, assignment_to_json(assignment))?)
}

pub fn load_assignment(path: impl AsRef<Path>) -> Result<ClusterAssignment> {
    assignment_from_json(&fs::read_to_string(path)?)
}

/// Writes the `key=value` record, or a header plus one row for a `.csv` path.
pub fn save_metrics(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        format!("{}\n{}\n", MetricsReport::csv_header(), report.to_csv_row())
    } else {
        report.to_record()
    };
    Ok(fs::write(path, text)?)
}
