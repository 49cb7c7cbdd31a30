//! Vertex/blendshape partitions and the partitioned solve.
//!
//! A [`ClusterAssignment`] puts every vertex and every blendshape in exactly
//! one of `K` clusters. Each cluster becomes a standalone sub-rig; correctives
//! that span clusters are dropped from the sub-rigs. The sub-problems are
//! solved independently, sequentially or on a worker pool, and their rows
//! merged back into one weight matrix.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};
use crate::rig::{Corrective, RigModel, SparseDelta};
use crate::solver::{objective_value, solve_scaled, Scale, SolveConfig, SolveReport};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    k: usize,
    vertex_cluster: Vec<usize>,
    blendshape_cluster: Vec<usize>,
}

impl ClusterAssignment {
    pub fn new(k: usize, vertex_cluster: Vec<usize>, blendshape_cluster: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("cluster count must be positive".into()));
        }
        for (what, ids) in [("vertex cluster id", &vertex_cluster), ("blendshape cluster id", &blendshape_cluster)] {
            if let Some(&bad) = ids.iter().find(|&&c| c >= k) {
                return Err(Error::IndexOutOfRange {
                    what,
                    index: bad,
                    size: k,
                });
            }
        }
        Ok(Self {
            k,
            vertex_cluster,
            blendshape_cluster,
        })
    }

    /// Everything in cluster 0.
    pub fn single(rig: &RigModel) -> Self {
        Self {
            k: 1,
            vertex_cluster: vec![0; rig.num_vertices()],
            blendshape_cluster: vec![0; rig.num_controllers()],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vertex_cluster(&self) -> &[usize] {
        &self.vertex_cluster
    }

    pub fn blendshape_cluster(&self) -> &[usize] {
        &self.blendshape_cluster
    }

    pub fn check_rig(&self, rig: &RigModel) -> Result<()> {
        check_len("vertex assignment", rig.num_vertices(), self.vertex_cluster.len())?;
        check_len("blendshape assignment", rig.num_controllers(), self.blendshape_cluster.len())
    }

    /// Vertices of cluster `k`, ascending.
    pub fn vertices_of(&self, k: usize) -> Vec<usize> {
        members(&self.vertex_cluster, k)
    }

    /// Blendshapes of cluster `k`, ascending.
    pub fn blendshapes_of(&self, k: usize) -> Vec<usize> {
        members(&self.blendshape_cluster, k)
    }

    /// Correctives whose controllers do not all share one cluster.
    pub fn cross_cluster_correctives(&self, rig: &RigModel) -> usize {
        rig.correctives()
            .iter()
            .filter(|c| {
                let first = self.blendshape_cluster[c.indices()[0]];
                c.indices().iter().any(|&i| self.blendshape_cluster[i] != first)
            })
            .count()
    }
}

fn members(ids: &[usize], k: usize) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &c)| c == k)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SubRig {
    pub rig: RigModel,
    /// Original index of each sub-rig vertex.
    pub vertex_map: Vec<usize>,
    /// Original index of each sub-rig blendshape.
    pub blendshape_map: Vec<usize>,
    /// Set when the cluster has no vertices or no blendshapes.
    pub inert: bool,
}

impl SubRig {
    /// Coordinate rows of `targets` belonging to this cluster's vertices.
    pub fn slice_targets(&self, targets: &MeshSequence) -> MeshSequence {
        targets.select_vertices(&self.vertex_map)
    }
}

pub fn extract_subrig(rig: &RigModel, assignment: &ClusterAssignment, k: usize) -> Result<SubRig> {
    assignment.check_rig(rig)?;
    if k >= assignment.k {
        return Err(Error::IndexOutOfRange {
            what: "cluster",
            index: k,
            size: assignment.k,
        });
    }
    let vertex_map = assignment.vertices_of(k);
    let blendshape_map = assignment.blendshapes_of(k);
    let dim = 3 * vertex_map.len();

    let mut coord_local = vec![usize::MAX; rig.dim()];
    let mut neutral = Vec::with_capacity(dim);
    for (local, &v) in vertex_map.iter().enumerate() {
        for c in 0..3 {
            coord_local[3 * v + c] = 3 * local + c;
            neutral.push(rig.neutral()[3 * v + c]);
        }
    }
    let mut controller_local = vec![usize::MAX; rig.num_controllers()];
    for (local, &e) in blendshape_map.iter().enumerate() {
        controller_local[e] = local;
    }
    let mut base = Array2::zeros((dim, blendshape_map.len()));
    for (local_e, &e) in blendshape_map.iter().enumerate() {
        let col = rig.base_column(e);
        for (local_v, &v) in vertex_map.iter().enumerate() {
            for c in 0..3 {
                base[[3 * local_v + c, local_e]] = col[3 * v + c];
            }
        }
    }
    let mut correctives = Vec::new();
    for corr in rig.correctives() {
        if corr.indices().iter().any(|&i| controller_local[i] == usize::MAX) {
            continue;
        }
        let (positions, values): (Vec<usize>, Vec<f64>) = corr
            .delta()
            .positions()
            .iter()
            .zip(corr.delta().values())
            .filter(|(&p, _)| coord_local[p] != usize::MAX)
            .map(|(&p, &v)| (coord_local[p], v))
            .unzip();
        let indices = corr.indices().iter().map(|&i| controller_local[i]).collect();
        correctives.push(Corrective::new(indices, SparseDelta::new(positions, values)?)?);
    }
    let mut sub = RigModel::new(neutral, base, correctives)?;
    if let Some(names) = rig.names() {
        sub = sub.with_names(blendshape_map.iter().map(|&e| names[e].clone()).collect())?;
    }
    Ok(SubRig {
        rig: sub,
        inert: vertex_map.is_empty() || blendshape_map.is_empty(),
        vertex_map,
        blendshape_map,
    })
}

const RESTARTS: usize = 20;
const LLOYD_ITERS: usize = 100;

/// Per-vertex deformation magnitude of each blendshape, `n × m`.
pub fn deformation_magnitudes(rig: &RigModel) -> Array2<f64> {
    let mut d = Array2::zeros((rig.num_vertices(), rig.num_controllers()));
    for e in 0..rig.num_controllers() {
        for (v, xyz) in rig.base_column(e).chunks_exact(3).enumerate() {
            d[[v, e]] = (xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]).sqrt();
        }
    }
    d
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means++ seeded Lloyd run; returns labels and inertia.
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let dims = points[0].len();
    let mut labels = vec![0usize; n];
    for iter in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if iter > 0 && !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// k-means partition of vertices by their row-normalized deformation
/// profiles, with each blendshape placed in the cluster holding most of its
/// deformation. Vertices no blendshape moves join the cluster of the nearest
/// moved vertex in the neutral pose.
pub fn heuristic_cluster(rig: &RigModel, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let m = rig.num_controllers();
    if k == 0 || k > m {
        return Err(Error::InvalidParameter(format!(
            "cluster count {k} must be in 1..={m}"
        )));
    }
    let n = rig.num_vertices();
    let d = deformation_magnitudes(rig);
    let mut moved = Vec::new();
    let mut points = Vec::new();
    for v in 0..n {
        let row = d.row(v);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            moved.push(v);
            points.push(row.iter().map(|x| x / norm).collect::<Vec<f64>>());
        }
    }

    let mut vertex_cluster = vec![0usize; n];
    if k > 1 && !points.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(Vec<usize>, f64)> = None;
        for _ in 0..RESTARTS {
            let (labels, inertia) = kmeans_once(&points, k, &mut rng);
            if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
                best = Some((labels, inertia));
            }
        }
        let (labels, _) = best.expect("at least one restart");
        for (&v, &l) in moved.iter().zip(&labels) {
            vertex_cluster[v] = l;
        }
        let neutral = rig.neutral();
        let mut is_moved = vec![false; n];
        for &v in &moved {
            is_moved[v] = true;
        }
        for v in (0..n).filter(|&v| !is_moved[v]) {
            let p = &neutral[3 * v..3 * v + 3];
            let nearest = moved
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    sq_dist(p, &neutral[3 * a..3 * a + 3]).total_cmp(&sq_dist(p, &neutral[3 * b..3 * b + 3]))
                })
                .expect("moved is not empty");
            vertex_cluster[v] = vertex_cluster[nearest];
        }
    }

    let mut blendshape_cluster = vec![0usize; m];
    for (e, slot) in blendshape_cluster.iter_mut().enumerate() {
        let mut mass = vec![0.0; k];
        for v in 0..n {
            mass[vertex_cluster[v]] += d[[v, e]];
        }
        let mut best = 0;
        for c in 1..k {
            if mass[c] > mass[best] {
                best = c;
            }
        }
        *slot = best;
    }
    ClusterAssignment::new(k, vertex_cluster, blendshape_cluster)
}

/// How the data and sparsity terms of each sub-problem are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterScaling {
    /// Each cluster uses its own vertex and blendshape counts.
    #[default]
    Local,
    /// Every cluster uses the full rig's counts, so the sub-problems sum to
    /// the full objective when no corrective crosses clusters.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Worker pool of the given size; `None` uses the global pool.
    #[default]
    Parallel,
    ParallelWith(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClusterOptions {
    pub scaling: ClusterScaling,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub cluster: usize,
    pub vertices: usize,
    pub blendshapes: usize,
    /// Seconds spent in this cluster's solve.
    pub wall_time: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub inert: bool,
    /// Set when this cluster failed; its rows keep their starting values.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ClusteredReport {
    pub weights: WeightMatrix,
    pub clusters: Vec<ClusterOutcome>,
    /// Slowest cluster, in seconds.
    pub parallel_cost: f64,
    /// Sum over clusters, in seconds.
    pub sequential_cost: f64,
    /// Elapsed seconds for the whole call.
    pub wall_time: f64,
    /// Full-rig objective at the merged weights, including any corrective
    /// dropped from the sub-problems.
    pub objective: f64,
    pub converged: bool,
}

impl ClusteredReport {
    pub fn failures(&self) -> impl Iterator<Item = &ClusterOutcome> {
        self.clusters.iter().filter(|c| c.error.is_some())
    }
}

struct ClusterResult {
    outcome: ClusterOutcome,
    rows: Option<(Vec<usize>, WeightMatrix)>,
}

fn solve_one(
    rig: &RigModel,
    targets: &MeshSequence,
    config: &SolveConfig,
    assignment: &ClusterAssignment,
    k: usize,
    scaling: ClusterScaling,
) -> ClusterResult {
    let mut outcome = ClusterOutcome {
        cluster: k,
        vertices: 0,
        blendshapes: 0,
        wall_time: 0.0,
        sweeps: 0,
        converged: true,
        inert: false,
        error: None,
    };
    let run = || -> Result<Option<(Vec<usize>, SolveReport)>> {
        let sub = extract_subrig(rig, assignment, k)?;
        if sub.inert {
            return Ok(None);
        }
        let scale = match scaling {
            ClusterScaling::Local => Scale::of(&sub.rig),
            ClusterScaling::Global => Scale::of(rig),
        };
        let sub_config = SolveConfig {
            initial: config.initial.as_ref().map(|w| {
                let rows: Vec<Vec<f64>> = sub.blendshape_map.iter().map(|&e| w.row(e).to_vec()).collect();
                WeightMatrix::from_array(Array2::from_shape_fn((rows.len(), w.num_frames()), |(i, t)| rows[i][t]))
                    .expect("rows come from a valid matrix")
            }),
            ..config.clone()
        };
        let report = solve_scaled(&sub.rig, &sub.slice_targets(targets), &sub_config, scale)?;
        Ok(Some((sub.blendshape_map, report)))
    };
    outcome.vertices = assignment.vertex_cluster.iter().filter(|&&c| c == k).count();
    outcome.blendshapes = assignment.blendshape_cluster.iter().filter(|&&c| c == k).count();
    match run() {
        Ok(None) => {
            outcome.inert = true;
            ClusterResult { outcome, rows: None }
        }
        Ok(Some((map, report))) => {
            outcome.sweeps = report.sweeps;
            outcome.converged = report.converged;
            outcome.wall_time = report.wall_time;
            ClusterResult {
                outcome,
                rows: Some((map, report.weights)),
            }
        }
        Err(e) => {
            outcome.converged = false;
            outcome.error = Some(e.to_string());
            ClusterResult { outcome, rows: None }
        }
    }
}

/// Solves every cluster's sub-problem and merges the rows. Blendshapes of
/// inert or failed clusters keep their starting weights.
pub fn solve_clustered(
    rig: &RigModel,
    targets: &MeshSequence,
    config: &SolveConfig,
    assignment: &ClusterAssignment,
    options: &ClusterOptions,
) -> Result<ClusteredReport> {
    let clock = Instant::now();
    assignment.check_rig(rig)?;
    check_len("target coordinates", rig.dim(), targets.num_coords())?;
    let frames = targets.num_frames();
    let m = rig.num_controllers();
    let mut weights = match &config.initial {
        Some(w) => {
            check_len("initial weight rows", m, w.num_controllers())?;
            check_len("initial weight frames", frames, w.num_frames())?;
            w.clone()
        }
        None => WeightMatrix::zeros(m, frames),
    };

    let ids: Vec<usize> = (0..assignment.k).collect();
    let task = |&k: &usize| solve_one(rig, targets, config, assignment, k, options.scaling);
    let results: Vec<ClusterResult> = match options.execution {
        Execution::Sequential => ids.iter().map(task).collect(),
        Execution::Parallel => ids.par_iter().map(task).collect(),
        Execution::ParallelWith(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
            pool.install(|| ids.par_iter().map(task).collect())
        }
    };

    let mut clusters = Vec::with_capacity(results.len());
    let mut written: BTreeMap<usize, usize> = BTreeMap::new();
    for result in results {
        if let Some((map, sub_weights)) = result.rows {
            for (local, &e) in map.iter().enumerate() {
                weights.set_row(e, &sub_weights.row(local).to_vec());
                *written.entry(e).or_default() += 1;
            }
        }
        clusters.push(result.outcome);
    }
    debug_assert!(written.values().all(|&c| c == 1));

    let parallel_cost = clusters.iter().map(|c| c.wall_time).fold(0.0, f64::max);
    let sequential_cost = clusters.iter().map(|c| c.wall_time).sum();
    let objective = objective_value(rig, &weights, targets, config.alpha, config.beta)?;
    let converged = clusters.iter().all(|c| c.converged);
    Ok(ClusteredReport {
        weights,
        clusters,
        parallel_cost,
        sequential_cost,
        wall_time: clock.elapsed().as_secs_f64(),
        objective,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve;
    use crate::synth::{generate, SynthSpec};

    fn two_patch_rig() -> RigModel {
        // vertices 0..3 moved by blendshape 0, 3..6 by blendshape 1
        let neutral: Vec<f64> = (0..6).flat_map(|v| [v as f64, 0.0, 0.0]).collect();
        let base = Array2::from_shape_fn((18, 2), |(p, e)| {
            let v = p / 3;
            if (v < 3) == (e == 0) {
                0.1 * (p % 3 + 1) as f64
            } else {
                0.0
            }
        });
        RigModel::new(neutral, base, []).unwrap()
    }

    fn planted(data: &crate::synth::SyntheticData, blocks: usize) -> ClusterAssignment {
        ClusterAssignment::new(blocks, data.vertex_block.clone(), data.controller_block.clone()).unwrap()
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let mut map = BTreeMap::new();
        let mut back = BTreeMap::new();
        a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
    }

    #[test]
    fn assignment_validation() {
        assert!(ClusterAssignment::new(2, vec![0, 2], vec![0]).is_err());
        assert!(ClusterAssignment::new(0, vec![], vec![]).is_err());
        let rig = two_patch_rig();
        assert!(ClusterAssignment::new(2, vec![0; 5], vec![0, 1]).unwrap().check_rig(&rig).is_err());
    }

    #[test]
    fn single_cluster_is_relabeled_original() {
        let data = generate(&SynthSpec {
            vertices: 40,
            controllers: 5,
            pairs: 3,
            triples: 2,
            quads: 1,
            ..SynthSpec::default()
        })
        .unwrap();
        let sub = extract_subrig(&data.rig, &ClusterAssignment::single(&data.rig), 0).unwrap();
        assert_eq!(sub.rig, data.rig);
        assert_eq!(sub.vertex_map, (0..40).collect::<Vec<_>>());
        assert!(!sub.inert);
    }

    #[test]
    fn cross_cluster_correctives_are_dropped() {
        let rig = two_patch_rig();
        let d = SparseDelta::new(vec![0, 10], vec![1.0, 2.0]).unwrap();
        let rig = RigModel::new(rig.neutral().to_vec(), rig.base().clone(), [Corrective::new(vec![0, 1], d).unwrap()]).unwrap();
        let a = ClusterAssignment::new(2, vec![0, 0, 0, 1, 1, 1], vec![0, 1]).unwrap();
        assert_eq!(a.cross_cluster_correctives(&rig), 1);
        for k in 0..2 {
            assert!(!extract_subrig(&rig, &a, k).unwrap().rig.has_correctives());
        }
        let all = ClusterAssignment::single(&rig);
        assert_eq!(extract_subrig(&rig, &all, 0).unwrap().rig.pairs().len(), 1);
    }

    #[test]
    fn empty_cluster_is_inert() {
        let rig = two_patch_rig();
        let a = ClusterAssignment::new(3, vec![0, 0, 0, 1, 1, 1], vec![0, 1]).unwrap();
        let sub = extract_subrig(&rig, &a, 2).unwrap();
        assert!(sub.inert);
        assert_eq!(sub.rig.num_vertices(), 0);
        assert!(extract_subrig(&rig, &a, 3).is_err());
    }

    #[test]
    fn block_subrigs_reassemble_exactly() {
        let data = generate(&SynthSpec {
            vertices: 60,
            controllers: 6,
            blocks: 2,
            pairs: 4,
            triples: 2,
            quads: 0,
            ..SynthSpec::default()
        })
        .unwrap();
        let a = planted(&data, 2);
        let subs: Vec<SubRig> = (0..2).map(|k| extract_subrig(&data.rig, &a, k).unwrap()).collect();
        for t in [0, 7, 19] {
            let w = data.weights.frame(t);
            let full = data.rig.eval_quartic(&w).unwrap();
            let mut merged = vec![f64::NAN; full.len()];
            for sub in &subs {
                let local_w: Vec<f64> = sub.blendshape_map.iter().map(|&e| w[e]).collect();
                let local = sub.rig.eval_quartic(&local_w).unwrap();
                for (lv, &v) in sub.vertex_map.iter().enumerate() {
                    merged[3 * v..3 * v + 3].copy_from_slice(&local[3 * lv..3 * lv + 3]);
                }
            }
            assert_eq!(merged, full);
        }
    }

    #[test]
    fn disjoint_patches_split_cleanly() {
        let rig = two_patch_rig();
        let a = heuristic_cluster(&rig, 2, 0).unwrap();
        assert!(same_partition(a.vertex_cluster(), &[0, 0, 0, 1, 1, 1]));
        assert_ne!(a.blendshape_cluster()[0], a.blendshape_cluster()[1]);
        assert_eq!(a.blendshape_cluster()[0], a.vertex_cluster()[0]);
        let one = heuristic_cluster(&rig, 1, 0).unwrap();
        assert!(one.vertex_cluster().iter().chain(one.blendshape_cluster()).all(|&c| c == 0));
        assert!(heuristic_cluster(&rig, 3, 0).is_err());
    }

    #[test]
    fn planted_blocks_recovered_deterministically() {
        let data = generate(&SynthSpec {
            vertices: 150,
            controllers: 12,
            blocks: 3,
            pairs: 6,
            triples: 3,
            quads: 0,
            // overlapping patches make each block's deformation profile coherent
            patch_radius: (0.6, 1.0),
            seed: 4,
            ..SynthSpec::default()
        })
        .unwrap();
        let a = heuristic_cluster(&data.rig, 3, 17).unwrap();
        assert!(same_partition(a.blendshape_cluster(), &data.controller_block));
        // vertices outside every patch are placed by proximity, which stays within the block
        assert!(same_partition(a.vertex_cluster(), &data.vertex_block));
        assert_eq!(a, heuristic_cluster(&data.rig, 3, 17).unwrap());
    }

    #[test]
    fn single_cluster_matches_holistic() {
        let data = generate(&SynthSpec {
            vertices: 50,
            controllers: 5,
            frames: 12,
            pairs: 3,
            triples: 1,
            quads: 0,
            ..SynthSpec::default()
        })
        .unwrap();
        let config = SolveConfig::new(0.001, 0.1);
        let holistic = solve(&data.rig, &data.targets, &config).unwrap();
        let clustered = solve_clustered(
            &data.rig,
            &data.targets,
            &config,
            &ClusterAssignment::single(&data.rig),
            &ClusterOptions::default(),
        )
        .unwrap();
        assert_eq!(clustered.weights, holistic.weights);
        assert_eq!(clustered.parallel_cost, clustered.sequential_cost);
    }

    #[test]
    fn global_scaling_matches_holistic_on_blocks() {
        let data = generate(&SynthSpec {
            vertices: 90,
            controllers: 9,
            frames: 15,
            blocks: 3,
            pairs: 3,
            triples: 3,
            quads: 0,
            seed: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let config = SolveConfig {
            objective_tol: 0.0,
            max_sweeps: 8,
            ..SolveConfig::new(0.001, 0.1)
        };
        let holistic = solve(&data.rig, &data.targets, &config).unwrap();
        for execution in [Execution::Sequential, Execution::ParallelWith(2)] {
            let clustered = solve_clustered(
                &data.rig,
                &data.targets,
                &config,
                &planted(&data, 3),
                &ClusterOptions {
                    scaling: ClusterScaling::Global,
                    execution,
                },
            )
            .unwrap();
            assert!(clustered.weights.max_abs_diff(&holistic.weights) <= 1e-9);
            let max = clustered.clusters.iter().map(|c| c.wall_time).fold(0.0, f64::max);
            assert_eq!(clustered.parallel_cost, max);
            assert!(clustered.parallel_cost <= clustered.sequential_cost);
            assert!((clustered.objective - holistic.final_objective()).abs() <= 1e-9 * holistic.final_objective());
        }
    }

    #[test]
    fn failures_are_isolated() {
        let data = generate(&SynthSpec {
            vertices: 60,
            controllers: 6,
            frames: 6,
            blocks: 2,
            pairs: 2,
            triples: 0,
            quads: 0,
            ..SynthSpec::default()
        })
        .unwrap();
        // a NaN target coordinate in block 1 only
        let mut targets = data.targets.clone();
        let v = data.vertex_block.iter().position(|&b| b == 1).unwrap();
        targets.frame_mut(0)[3 * v] = f64::NAN;
        let report = solve_clustered(
            &data.rig,
            &targets,
            &SolveConfig::new(0.001, 0.1),
            &planted(&data, 2),
            &ClusterOptions::default(),
        )
        .unwrap();
        assert!(report.clusters[0].error.is_none());
        assert!(report.clusters[1].error.is_some());
        assert!(!report.converged);
        assert_eq!(report.failures().count(), 1);
        for e in 0..6 {
            let row = report.weights.row(e);
            if data.controller_block[e] == 1 {
                assert!(row.iter().all(|&w| w == 0.0));
            }
        }
        assert!(report.weights.view().iter().any(|&w| w > 0.0));
    }
}
