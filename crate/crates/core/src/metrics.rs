//! Evaluation metrics for solved weight matrices.

use std::fmt::Write as _;

use crate::error::{check_len, Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};
use crate::rig::RigModel;
use crate::roughness::roughness;

/// Weights above this count as active.
pub const DEFAULT_CARDINALITY_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshError {
    /// Largest per-vertex distance over all vertices and frames.
    pub max: f64,
    /// Mean per-vertex distance over all vertices and frames.
    pub mean: f64,
    /// Mean over frames of the largest per-vertex distance in each frame.
    pub per_frame_max_mean: f64,
}

/// Per-vertex Euclidean distances between reconstruction and target.
pub fn vertex_errors(rig: &RigModel, weights: &WeightMatrix, targets: &MeshSequence) -> Result<Vec<Vec<f64>>> {
    check_len("target coordinates", rig.dim(), targets.num_coords())?;
    check_len("weight matrix frames", targets.num_frames(), weights.num_frames())?;
    let recon = rig.eval_sequence(weights)?;
    Ok((0..targets.num_frames())
        .map(|t| {
            recon
                .frame(t)
                .chunks_exact(3)
                .zip(targets.frame(t).chunks_exact(3))
                .map(|(a, b)| {
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                })
                .collect()
        })
        .collect())
}

pub fn mesh_error(rig: &RigModel, weights: &WeightMatrix, targets: &MeshSequence) -> Result<MeshError> {
    let errors = vertex_errors(rig, weights, targets)?;
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut frame_max_sum = 0.0;
    for frame in &errors {
        let fmax = frame.iter().copied().fold(0.0, f64::max);
        frame_max_sum += fmax;
        max = max.max(fmax);
        sum += frame.iter().sum::<f64>();
        count += frame.len();
    }
    Ok(MeshError {
        max,
        mean: if count > 0 { sum / count as f64 } else { 0.0 },
        per_frame_max_mean: if errors.is_empty() {
            0.0
        } else {
            frame_max_sum / errors.len() as f64
        },
    })
}

/// Mean over frames of the number of weights above `eps`.
pub fn cardinality(weights: &WeightMatrix, eps: f64) -> f64 {
    let frames = weights.num_frames();
    if frames == 0 {
        return 0.0;
    }
    let active = weights.view().iter().filter(|&&v| v > eps).count();
    active as f64 / frames as f64
}

/// Mean over frames of the per-frame weight sum.
pub fn l1_metric(weights: &WeightMatrix) -> f64 {
    let frames = weights.num_frames();
    if frames == 0 {
        return 0.0;
    }
    weights.view().iter().sum::<f64>() / frames as f64
}

/// Squared second differences averaged over controllers and the `T − 2`
/// interior frames; zero for fewer than three frames.
pub fn roughness_metric(weights: &WeightMatrix) -> f64 {
    let frames = weights.num_frames();
    let m = weights.num_controllers();
    if frames < 3 || m == 0 {
        return 0.0;
    }
    let total: f64 = (0..m).map(|e| roughness(&weights.row(e).to_vec())).sum();
    total / (m * (frames - 2)) as f64
}

/// Flat metrics record emitted by the solve and evaluate commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub max_mesh_error: f64,
    pub mean_mesh_error: f64,
    pub per_frame_max_mesh_error_mean: f64,
    pub cardinality: f64,
    pub l1_norm: f64,
    pub roughness: f64,
    pub wall_time_s: f64,
    /// Scale reference for the mesh errors, in the same units.
    pub target_bbox_diagonal: f64,
}

const FIELDS: [&str; 8] = [
    "max_mesh_error",
    "mean_mesh_error",
    "per_frame_max_mesh_error_mean",
    "cardinality",
    "l1_norm",
    "roughness",
    "wall_time_s",
    "target_bbox_diagonal",
];

impl MetricsReport {
    pub fn compute(
        rig: &RigModel,
        weights: &WeightMatrix,
        targets: &MeshSequence,
        eps: f64,
        wall_time_s: f64,
    ) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cardinality threshold must be finite and non-negative, got {eps}"
            )));
        }
        let err = mesh_error(rig, weights, targets)?;
        Ok(Self {
            max_mesh_error: err.max,
            mean_mesh_error: err.mean,
            per_frame_max_mesh_error_mean: err.per_frame_max_mean,
            cardinality: cardinality(weights, eps),
            l1_norm: l1_metric(weights),
            roughness: roughness_metric(weights),
            wall_time_s,
            target_bbox_diagonal: targets.bounding_box_diagonal(),
        })
    }

    fn values(&self) -> [f64; 8] {
        [
            self.max_mesh_error,
            self.mean_mesh_error,
            self.per_frame_max_mesh_error_mean,
            self.cardinality,
            self.l1_norm,
            self.roughness,
            self.wall_time_s,
            self.target_bbox_diagonal,
        ]
    }

    /// `key=value` lines in a fixed order.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        for (k, v) in FIELDS.iter().zip(self.values()) {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut values = [None; 8];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metrics line without '=': {line}")))?;
            let slot = FIELDS
                .iter()
                .position(|f| *f == key.trim())
                .ok_or_else(|| Error::Format(format!("unknown metrics field {key}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {key}: {value}")))?;
            values[slot] = Some(v);
        }
        let get = |i: usize| values[i].ok_or_else(|| Error::Format(format!("missing field {}", FIELDS[i])));
        Ok(Self {
            max_mesh_error: get(0)?,
            mean_mesh_error: get(1)?,
            per_frame_max_mesh_error_mean: get(2)?,
            cardinality: get(3)?,
            l1_norm: get(4)?,
            roughness: get(5)?,
            wall_time_s: get(6)?,
            target_bbox_diagonal: get(7)?,
        })
    }

    pub fn csv_header() -> String {
        FIELDS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}
