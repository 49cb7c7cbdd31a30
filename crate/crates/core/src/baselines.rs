//! Reference methods: per-frame quartic coordinate descent and the
//! sequential linear solve with a previous-frame penalty.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};
use crate::qp::{solve_box_qp, BoxQp, Hessian, QpOptions};
use crate::rig::RigModel;
use crate::solver::{solve_scaled, Scale, SolveConfig};

#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub weights: WeightMatrix,
    /// Seconds.
    pub wall_time: f64,
    /// False if any frame stopped on an iteration cap.
    pub converged: bool,
}

/// Solves every frame on its own with the joint solver at `T = 1`, where the
/// roughness term vanishes. `config.beta` is ignored. Frames run in parallel.
pub fn solve_quartic_per_frame(
    rig: &RigModel,
    targets: &MeshSequence,
    config: &SolveConfig,
) -> Result<BaselineReport> {
    let clock = Instant::now();
    check_len("target coordinates", rig.dim(), targets.num_coords())?;
    let frames = targets.num_frames();
    if let Some(init) = &config.initial {
        check_len("initial weight frames", frames, init.num_frames())?;
    }
    let scale = Scale::of(rig);
    let results: Vec<Result<(Vec<f64>, bool)>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let frame_config = SolveConfig {
                beta: 0.0,
                initial: config.initial.as_ref().map(|w| w.frames(t..t + 1)),
                ..config.clone()
            };
            let report = solve_scaled(rig, &targets.frames(t..t + 1), &frame_config, scale)?;
            Ok((report.weights.frame(0), report.converged))
        })
        .collect();
    let mut columns = Vec::with_capacity(frames);
    let mut converged = true;
    for r in results {
        let (w, ok) = r?;
        converged &= ok;
        columns.push(w);
    }
    Ok(BaselineReport {
        weights: WeightMatrix::from_frames(rig.num_controllers(), &columns)?,
        wall_time: clock.elapsed().as_secs_f64(),
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSmoothConfig {
    /// Ridge weight on `‖w‖²`.
    pub alpha: f64,
    /// Weight on `‖w − v‖²`, `v` being the previous frame's solution.
    pub beta: f64,
    pub qp: QpOptions,
}

impl Default for LinearSmoothConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.0,
            qp: QpOptions::default(),
        }
    }
}

impl LinearSmoothConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-frame box QP of the linear method. Frame `t` minimizes
/// `‖B w − (y_t − b₀)‖² + α‖w‖² + β‖w − v‖²`; pass `previous = None` for the
/// first frame, which has no `β` term.
pub fn linear_smooth_frame_qp(
    gram: &Array2<f64>,
    rig: &RigModel,
    target: &[f64],
    previous: Option<&[f64]>,
    config: &LinearSmoothConfig,
) -> Result<BoxQp> {
    check_len("target coordinates", rig.dim(), target.len())?;
    let m = rig.num_controllers();
    let beta = if previous.is_some() { config.beta } else { 0.0 };
    let mut hessian = gram.clone();
    for i in 0..m {
        hessian[[i, i]] += config.alpha + beta;
    }
    let offset: Vec<f64> = target.iter().zip(rig.neutral()).map(|(y, b0)| y - b0).collect();
    let mut linear: Vec<f64> = (0..m)
        .map(|e| -rig.base_column(e).iter().zip(&offset).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    if let Some(v) = previous {
        check_len("previous frame", m, v.len())?;
        for (l, vi) in linear.iter_mut().zip(v) {
            *l -= beta * vi;
        }
    }
    BoxQp::unit_box(Hessian::Dense(hessian), linear)
}

/// Sequential solve over frames with the linear rig; correctives are never read.
pub fn solve_linear_smooth(
    rig: &RigModel,
    targets: &MeshSequence,
    config: &LinearSmoothConfig,
) -> Result<BaselineReport> {
    let clock = Instant::now();
    config.validate()?;
    check_len("target coordinates", rig.dim(), targets.num_coords())?;
    let m = rig.num_controllers();
    let base = rig.base();
    let gram = base.t().dot(base);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(targets.num_frames());
    let mut converged = true;
    for t in 0..targets.num_frames() {
        let previous = columns.last().map(Vec::as_slice);
        let qp = linear_smooth_frame_qp(&gram, rig, targets.frame(t), previous, config)?;
        let solution = solve_box_qp(&qp, &config.qp, previous)?;
        converged &= solution.converged;
        columns.push(solution.point);
    }
    Ok(BaselineReport {
        weights: WeightMatrix::from_frames(m, &columns)?,
        wall_time: clock.elapsed().as_secs_f64(),
        converged,
    })
}
