//! Joint-sequence coordinate descent over blendshape controllers.
//!
//! The objective over all `T` frames is
//!
//! ```text
//! E(W) = Σ_t (1/n)‖f(w_t) − target_t‖² + (α/m)‖w_t‖₁  +  β Σ_i W_iᵀ F W_i
//! ```
//!
//! subject to `0 ≤ W ≤ 1`. Fixing every controller except `e`, the rig is
//! affine in `W_e` frame by frame, so `E` restricted to row `e` is the box QP
//!
//! ```text
//! W_eᵀ ((1/n) Φ + β F) W_e + 2 W_eᵀ ((1/n) Θ + α/(2m) 1)
//! ```
//!
//! with `Φ_t = φ_tᵀφ_t` and `Θ_t = φ_tᵀψ_t` from
//! [`RigModel::directional_coefficients`]. Each step solves that QP
//! warm-started at the current row, so the objective never increases.

use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};
use crate::qp::{solve_box_qp, BandedSymmetric, BoxQp, Hessian, QpOptions};
use crate::rig::RigModel;
use crate::roughness::{roughness, scaled_banded};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Sparsity weight `α`.
    pub alpha: f64,
    /// Smoothness weight `β`.
    pub beta: f64,
    pub max_sweeps: usize,
    /// A sweep whose relative objective decrease is at most this ends the solve.
    pub objective_tol: f64,
    pub qp: QpOptions,
    /// Starting weights; all-zero when absent.
    pub initial: Option<WeightMatrix>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0078,
            beta: 1.0,
            max_sweeps: 20,
            objective_tol: 1e-6,
            qp: QpOptions::default(),
            initial: None,
        }
    }
}

impl SolveConfig {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.objective_tol.is_finite() && self.objective_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "objective tolerance must be finite and non-negative, got {}",
                self.objective_tol
            )));
        }
        Ok(())
    }
}

/// Diagonal of `Φ` and the vector `Θ` for one controller over all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemMatrices {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub weights: WeightMatrix,
    /// Objective at the initial weights, then after every controller update.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    /// Seconds.
    pub wall_time: f64,
    /// Whether the sweep-level stopping rule was met before `max_sweeps`.
    pub converged: bool,
    /// Controller updates whose QP stopped short of the KKT tolerance.
    pub qp_failures: usize,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Normalizers of the data and sparsity terms. Normally the rig's own `n`
/// and `m`; clustered solves may substitute the full model's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scale {
    pub vertices: f64,
    pub controllers: f64,
}

impl Scale {
    pub fn of(rig: &RigModel) -> Self {
        Self {
            vertices: rig.num_vertices().max(1) as f64,
            controllers: rig.num_controllers().max(1) as f64,
        }
    }
}

fn check_targets(rig: &RigModel, targets: &MeshSequence) -> Result<()> {
    check_len("target coordinates", rig.dim(), targets.num_coords())
}

fn check_weights(rig: &RigModel, weights: &WeightMatrix, targets: &MeshSequence) -> Result<()> {
    check_len(
        "weight matrix rows",
        rig.num_controllers(),
        weights.num_controllers(),
    )?;
    check_len(
        "weight matrix frames",
        targets.num_frames(),
        weights.num_frames(),
    )
}

/// Controllers sorted by descending norm of their base blendshape; ties keep
/// ascending index.
pub fn controller_order(rig: &RigModel) -> Vec<usize> {
    let norms: Vec<f64> = (0..rig.num_controllers())
        .map(|e| rig.base_column(e).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order
}

/// Value of the joint objective at `weights`.
pub fn objective_value(
    rig: &RigModel,
    weights: &WeightMatrix,
    targets: &MeshSequence,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    objective_scaled(rig, weights, targets, alpha, beta, Scale::of(rig))
}

pub(crate) fn objective_scaled(
    rig: &RigModel,
    weights: &WeightMatrix,
    targets: &MeshSequence,
    alpha: f64,
    beta: f64,
    scale: Scale,
) -> Result<f64> {
    check_targets(rig, targets)?;
    check_weights(rig, weights, targets)?;
    let recon = rig.eval_sequence(weights)?;
    let mut data = 0.0;
    for t in 0..targets.num_frames() {
        data += recon
            .frame(t)
            .iter()
            .zip(targets.frame(t))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let l1: f64 = weights.view().iter().map(|v| v.abs()).sum();
    let rough: f64 = (0..weights.num_controllers())
        .map(|e| roughness(&weights.row(e).to_vec()))
        .sum();
    Ok(data / scale.vertices + alpha / scale.controllers * l1 + beta * rough)
}

/// `Φ` and `Θ` for controller `e`, computed from scratch at `weights`.
pub fn subproblem_matrices(
    rig: &RigModel,
    weights: &WeightMatrix,
    e: usize,
    targets: &MeshSequence,
) -> Result<SubproblemMatrices> {
    check_targets(rig, targets)?;
    check_weights(rig, weights, targets)?;
    let frames = targets.num_frames();
    let mut phi_diag = Vec::with_capacity(frames);
    let mut theta = Vec::with_capacity(frames);
    for t in 0..frames {
        let (phi, psi) = rig.directional_coefficients(&weights.frame(t), e, targets.frame(t))?;
        phi_diag.push(phi.iter().map(|v| v * v).sum());
        theta.push(phi.iter().zip(&psi).map(|(a, b)| a * b).sum());
    }
    Ok(SubproblemMatrices {
        phi: phi_diag,
        theta,
    })
}

fn build_qp(
    matrices: &SubproblemMatrices,
    roughness_band: &BandedSymmetric,
    alpha: f64,
    scale: Scale,
) -> Result<BoxQp> {
    let mut hessian = roughness_band.clone();
    let diag: Vec<f64> = matrices.phi.iter().map(|p| p / scale.vertices).collect();
    hessian.add_diagonal(&diag);
    let shift = alpha / (2.0 * scale.controllers);
    let linear = matrices
        .theta
        .iter()
        .map(|th| th / scale.vertices + shift)
        .collect();
    BoxQp::unit_box(Hessian::Banded(hessian), linear)
}

/// The box QP over row `e` of `weights` with every other row held fixed.
pub fn assemble_subproblem(
    rig: &RigModel,
    weights: &WeightMatrix,
    e: usize,
    targets: &MeshSequence,
    config: &SolveConfig,
) -> Result<BoxQp> {
    config.validate()?;
    let matrices = subproblem_matrices(rig, weights, e, targets)?;
    let band = scaled_banded(targets.num_frames(), config.beta);
    build_qp(&matrices, &band, config.alpha, Scale::of(rig))
}

/// Smallest `α` for which the all-zero matrix is a fixed point of the solver
/// started from zero: at `W = 0` the gradient of every subproblem is
/// non-negative exactly when `α ≥ max_{e,t} −(2m/n) Θ_t`.
pub fn sparsity_shutoff(rig: &RigModel, targets: &MeshSequence) -> Result<f64> {
    check_targets(rig, targets)?;
    let scale = Scale::of(rig);
    let mut worst = 0.0f64;
    for t in 0..targets.num_frames() {
        let offset: Vec<f64> = rig
            .neutral()
            .iter()
            .zip(targets.frame(t))
            .map(|(b0, y)| b0 - y)
            .collect();
        for e in 0..rig.num_controllers() {
            let theta: f64 = rig.base_column(e).iter().zip(&offset).map(|(a, b)| a * b).sum();
            worst = worst.max(-2.0 * scale.controllers / scale.vertices * theta);
        }
    }
    Ok(worst)
}

/// Coordinate descent over controllers for the joint objective.
pub fn solve(rig: &RigModel, targets: &MeshSequence, config: &SolveConfig) -> Result<SolveReport> {
    solve_scaled(rig, targets, config, Scale::of(rig))
}

pub(crate) fn solve_scaled(
    rig: &RigModel,
    targets: &MeshSequence,
    config: &SolveConfig,
    scale: Scale,
) -> Result<SolveReport> {
    let clock = Instant::now();
    config.validate()?;
    check_targets(rig, targets)?;
    let m = rig.num_controllers();
    let frames = targets.num_frames();
    let dim = rig.dim();

    let mut weights: Vec<Vec<f64>> = match &config.initial {
        Some(init) => {
            check_weights(rig, init, targets)?;
            if !init.is_feasible() {
                return Err(Error::InvalidParameter(
                    "initial weights must lie in [0, 1]".into(),
                ));
            }
            (0..frames).map(|t| init.frame(t)).collect()
        }
        None => vec![vec![0.0; m]; frames],
    };
    let offset_targets: Vec<Vec<f64>> = (0..frames)
        .map(|t| {
            targets
                .frame(t)
                .iter()
                .zip(rig.neutral())
                .map(|(y, b0)| y - b0)
                .collect()
        })
        .collect();

    let mut residual = vec![vec![0.0; dim]; frames];
    let refresh = |residual: &mut Vec<Vec<f64>>, weights: &[Vec<f64>]| {
        for t in 0..frames {
            let r = &mut residual[t];
            for (ri, yi) in r.iter_mut().zip(&offset_targets[t]) {
                *ri = -yi;
            }
            rig.add_quartic_offset(&weights[t], r);
        }
    };
    let objective_of = |residual: &[Vec<f64>], weights: &[Vec<f64>]| {
        let data: f64 = residual.iter().flatten().map(|r| r * r).sum();
        let l1: f64 = weights.iter().flatten().map(|v| v.abs()).sum();
        let mut rough = 0.0;
        if config.beta != 0.0 {
            let mut row = vec![0.0; frames];
            for e in 0..m {
                for t in 0..frames {
                    row[t] = weights[t][e];
                }
                rough += roughness(&row);
            }
        }
        data / scale.vertices + config.alpha / scale.controllers * l1 + config.beta * rough
    };

    refresh(&mut residual, &weights);
    let mut objective = objective_of(&residual, &weights);
    let mut trace = vec![objective];
    let order = controller_order(rig);
    let band = scaled_banded(frames, config.beta);
    let mut phis = vec![vec![0.0; dim]; frames];
    let mut row = vec![0.0; frames];
    let mut sweeps = 0;
    let mut converged = false;
    let mut qp_failures = 0;

    while sweeps < config.max_sweeps {
        if sweeps > 0 {
            // drop rounding accumulated by the incremental residual updates
            refresh(&mut residual, &weights);
            objective = objective_of(&residual, &weights);
        }
        let start = objective;
        for &e in &order {
            let mut matrices = SubproblemMatrices {
                phi: vec![0.0; frames],
                theta: vec![0.0; frames],
            };
            for t in 0..frames {
                let phi = &mut phis[t];
                rig.phi_into(&weights[t], e, phi);
                let pp: f64 = phi.iter().map(|v| v * v).sum();
                let pr: f64 = phi.iter().zip(&residual[t]).map(|(a, b)| a * b).sum();
                matrices.phi[t] = pp;
                // ψ = r − w_e φ
                matrices.theta[t] = pr - weights[t][e] * pp;
                row[t] = weights[t][e];
            }
            let qp = build_qp(&matrices, &band, config.alpha, scale)?;
            let solution = solve_box_qp(&qp, &config.qp, Some(&row))?;
            if !solution.converged {
                qp_failures += 1;
            }
            if solution.objective > qp.objective(&row) {
                trace.push(objective);
                continue;
            }
            for t in 0..frames {
                let delta = solution.point[t] - row[t];
                if delta != 0.0 {
                    for (r, p) in residual[t].iter_mut().zip(&phis[t]) {
                        *r += delta * p;
                    }
                    weights[t][e] = solution.point[t];
                }
            }
            objective = objective_of(&residual, &weights);
            trace.push(objective);
        }
        sweeps += 1;
        if start - objective <= config.objective_tol * start.abs() {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        weights: WeightMatrix::from_frames(m, &weights)?,
        objective_trace: trace,
        sweeps,
        wall_time: clock.elapsed().as_secs_f64(),
        converged,
        qp_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{Corrective, SparseDelta};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rig(seed: u64, n: usize, m: usize, correctives: bool) -> RigModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 3 * n;
        let neutral = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = Array2::from_shape_fn((dim, m), |_| rng.random_range(-1.0..1.0));
        let mut corr = Vec::new();
        if correctives {
            for set in [vec![0, 1], vec![1, 2, 3], vec![0, 2, 3, 4]] {
                let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
                corr.push(Corrective::new(set, SparseDelta::from_dense(&d).unwrap()).unwrap());
            }
        }
        RigModel::new(neutral, base, corr).unwrap()
    }

    fn random_weights(rng: &mut impl Rng, m: usize, t: usize) -> WeightMatrix {
        WeightMatrix::from_array(Array2::from_shape_fn((m, t), |_| rng.random_range(0.0..1.0))).unwrap()
    }

    fn targets_from(rig: &RigModel, w: &WeightMatrix) -> MeshSequence {
        rig.eval_sequence(w).unwrap()
    }

    #[test]
    fn order_by_norm_then_index() {
        let mut base = Array2::zeros((3, 3));
        base[[0, 0]] = 3.0;
        base[[1, 1]] = 1.0;
        base[[2, 2]] = 2.0;
        let rig = RigModel::new(vec![0.0; 3], base, []).unwrap();
        assert_eq!(controller_order(&rig), vec![0, 2, 1]);
        let equal = RigModel::new(vec![0.0; 3], Array2::from_elem((3, 4), 1.0), []).unwrap();
        assert_eq!(controller_order(&equal), vec![0, 1, 2, 3]);
    }

    #[test]
    fn order_matches_sort_of_norms() {
        let rig = random_rig(4, 6, 9, false);
        let mut norms: Vec<(f64, usize)> = (0..9)
            .map(|e| {
                let s: f64 = (0..rig.dim()).map(|p| rig.base()[[p, e]].powi(2)).sum();
                (s.sqrt(), e)
            })
            .collect();
        norms.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = norms.into_iter().map(|(_, e)| e).collect();
        assert_eq!(controller_order(&rig), want);
    }

    #[test]
    fn decoupled_when_unregularized() {
        let rig = random_rig(1, 4, 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_weights(&mut rng, 5, 6);
        let targets = targets_from(&rig, &random_weights(&mut rng, 5, 6));
        let qp = assemble_subproblem(&rig, &w, 2, &targets, &SolveConfig::new(0.0, 0.0)).unwrap();
        assert!(qp.hessian().is_diagonal());
        let sol = solve_box_qp(&qp, &QpOptions::default(), None).unwrap();
        let mats = subproblem_matrices(&rig, &w, 2, &targets).unwrap();
        for t in 0..6 {
            let want = (-mats.theta[t] / mats.phi[t]).clamp(0.0, 1.0);
            assert!((sol.point[t] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_rig_at_zero() {
        let rig = random_rig(2, 4, 3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let targets = targets_from(&rig, &random_weights(&mut rng, 3, 4));
        let mats = subproblem_matrices(&rig, &WeightMatrix::zeros(3, 4), 1, &targets).unwrap();
        let b = rig.base_column(1);
        for t in 0..4 {
            let norm: f64 = b.iter().map(|v| v * v).sum();
            let theta: f64 = (0..rig.dim())
                .map(|p| b[p] * (rig.neutral()[p] - targets.frame(t)[p]))
                .sum();
            assert!((mats.phi[t] - norm).abs() < 1e-12);
            assert!((mats.theta[t] - theta).abs() < 1e-12);
        }
    }

    /// Full objective written out term by term.
    fn naive_objective(rig: &RigModel, w: &WeightMatrix, targets: &MeshSequence, alpha: f64, beta: f64) -> f64 {
        let n = rig.num_vertices() as f64;
        let m = rig.num_controllers() as f64;
        let mut total = 0.0;
        for t in 0..w.num_frames() {
            let f = rig.eval_quartic(&w.frame(t)).unwrap();
            let d: f64 = f.iter().zip(targets.frame(t)).map(|(a, b)| (a - b).powi(2)).sum();
            total += d / n + alpha / m * w.frame(t).iter().sum::<f64>();
        }
        for t in 1..w.num_frames().saturating_sub(1) {
            for e in 0..w.num_controllers() {
                total += beta * (w.get(e, t + 1) - 2.0 * w.get(e, t) + w.get(e, t - 1)).powi(2);
            }
        }
        total
    }

    #[test]
    fn objective_matches_naive() {
        let rig = random_rig(3, 5, 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let targets = targets_from(&rig, &random_weights(&mut rng, 5, 7));
        let w = random_weights(&mut rng, 5, 7);
        let got = objective_value(&rig, &w, &targets, 0.3, 0.7).unwrap();
        let want = naive_objective(&rig, &w, &targets, 0.3, 0.7);
        assert!((got - want).abs() <= 1e-12 * want);

        let zero = WeightMatrix::zeros(5, 3);
        let neutral_targets = rig.eval_sequence(&zero).unwrap();
        assert_eq!(objective_value(&rig, &zero, &neutral_targets, 1.0, 1.0).unwrap(), 0.0);
        // constant rows carry no roughness
        let constant = WeightMatrix::from_array(Array2::from_elem((5, 7), 0.4)).unwrap();
        let a = objective_value(&rig, &constant, &targets, 0.3, 0.0).unwrap();
        let b = objective_value(&rig, &constant, &targets, 0.3, 5.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subproblem_matches_restricted_objective() {
        let rig = random_rig(5, 5, 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let targets = targets_from(&rig, &random_weights(&mut rng, 5, 8));
        let w = random_weights(&mut rng, 5, 8);
        let (alpha, beta) = (0.2, 0.6);
        let cfg = SolveConfig::new(alpha, beta);
        let e = 3;
        let qp = assemble_subproblem(&rig, &w, e, &targets, &cfg).unwrap();
        let mut diffs = Vec::new();
        for _ in 0..10 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut wx = w.clone();
            wx.set_row(e, &x);
            diffs.push(naive_objective(&rig, &wx, &targets, alpha, beta) - qp.objective(&x));
        }
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-10, "{diffs:?}");
        }
    }

    #[test]
    fn zero_is_optimal_for_neutral_targets() {
        let rig = random_rig(6, 4, 5, true);
        let targets = rig.eval_sequence(&WeightMatrix::zeros(5, 5)).unwrap();
        let report = solve(&rig, &targets, &SolveConfig::new(0.1, 1.0)).unwrap();
        assert_eq!(report.weights, WeightMatrix::zeros(5, 5));
        assert_eq!(report.final_objective(), 0.0);
        assert_eq!(report.sweeps, 1);
        assert!(report.converged);
    }

    #[test]
    fn single_controller_linear_closed_form() {
        let rig = random_rig(7, 6, 1, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..rig.dim()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let targets = MeshSequence::from_frames(rig.dim(), &frames).unwrap();
        let report = solve(&rig, &targets, &SolveConfig::new(0.0, 0.0)).unwrap();
        let b = rig.base_column(0);
        let bb: f64 = b.iter().map(|v| v * v).sum();
        for t in 0..6 {
            let proj: f64 = (0..rig.dim())
                .map(|p| b[p] * (frames[t][p] - rig.neutral()[p]))
                .sum();
            let want = (proj / bb).clamp(0.0, 1.0);
            assert!((report.weights.get(0, t) - want).abs() < 1e-8);
        }
    }

    #[test]
    fn monotone_feasible_and_consistent() {
        let rig = random_rig(8, 6, 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let targets = targets_from(&rig, &random_weights(&mut rng, 5, 12));
        let cfg = SolveConfig {
            max_sweeps: 30,
            ..SolveConfig::new(0.01, 0.5)
        };
        let report = solve(&rig, &targets, &cfg).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(report.weights.is_feasible());
        let recomputed = objective_value(&rig, &report.weights, &targets, 0.01, 0.5).unwrap();
        let last = report.final_objective();
        assert!((recomputed - last).abs() <= 1e-9 * last.abs().max(1e-300));
    }

    #[test]
    fn shutoff_threshold() {
        let rig = random_rig(9, 5, 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let targets = targets_from(&rig, &random_weights(&mut rng, 5, 6));
        let alpha0 = sparsity_shutoff(&rig, &targets).unwrap();
        assert!(alpha0 > 0.0);
        let off = solve(&rig, &targets, &SolveConfig::new(alpha0 * 1.01, 0.3)).unwrap();
        assert_eq!(off.weights, WeightMatrix::zeros(5, 6));
        let on = solve(&rig, &targets, &SolveConfig::new(0.0, 0.3)).unwrap();
        assert!(on.weights.view().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        let rig = random_rig(10, 3, 2, false);
        let targets = rig.eval_sequence(&WeightMatrix::zeros(2, 3)).unwrap();
        assert!(solve(&rig, &targets, &SolveConfig::new(-1.0, 0.0)).is_err());
        assert!(solve(&rig, &targets, &SolveConfig::new(0.0, f64::NAN)).is_err());
        let bad_init = SolveConfig {
            initial: Some(WeightMatrix::from_array(Array2::from_elem((2, 3), 2.0)).unwrap()),
            ..SolveConfig::default()
        };
        assert!(solve(&rig, &targets, &bad_init).is_err());
        let wrong = MeshSequence::zeros(3, 2);
        assert!(solve(&rig, &wrong, &SolveConfig::default()).is_err());
    }
}
