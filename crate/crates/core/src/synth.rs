//! Seeded synthetic rigs and animations.
//!
//! Vertices sit on a regular grid bent into a shallow dome. Each blendshape
//! moves a random circular patch with a smooth radial falloff; each corrective
//! moves a smaller patch around the centroid of its parents with 10–30% of
//! their mean amplitude. Ground-truth trajectories are low-pass filtered noise
//! shaped by a per-controller activity window, so every trajectory is smooth
//! and has a fixed support. Targets are the rig evaluated at the ground truth.
//!
//! With `blocks > 1` the vertices and controllers are split into disjoint
//! groups laid out side by side, and correctives never span two groups. Such
//! rigs decompose exactly along the planted partition.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};
use crate::rig::{Corrective, RigModel, SparseDelta};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub vertices: usize,
    pub controllers: usize,
    pub frames: usize,
    pub pairs: usize,
    pub triples: usize,
    pub quads: usize,
    /// Expected number of active controllers per frame.
    pub active: usize,
    pub blocks: usize,
    /// Range of blendshape patch radii; each block spans a unit square.
    pub patch_radius: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vertices: 300,
            controllers: 12,
            frames: 40,
            pairs: 12,
            triples: 6,
            quads: 3,
            active: 6,
            blocks: 1,
            patch_radius: (0.25, 0.45),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub rig: RigModel,
    pub weights: WeightMatrix,
    pub targets: MeshSequence,
    /// Block of each vertex.
    pub vertex_block: Vec<usize>,
    /// Block of each controller.
    pub controller_block: Vec<usize>,
}

struct Patch {
    center: [f64; 3],
    radius: f64,
    amplitude: f64,
}

/// Splits `total` into `parts` near-equal contiguous ranges.
fn split(total: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = total / parts;
    let extra = total % parts;
    let mut start = 0;
    (0..parts)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = k;
        while i > 0 && idx[i - 1] == items.len() - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Draws `count` distinct `k`-subsets of `items`.
fn draw_sets(rng: &mut ChaCha8Rng, items: &[usize], k: usize, count: usize) -> Result<Vec<Vec<usize>>> {
    let available = binomial(items.len(), k);
    if count as u128 > available {
        return Err(Error::InvalidParameter(format!(
            "cannot draw {count} distinct sets of {k} from {} controllers",
            items.len()
        )));
    }
    if available <= 100_000 {
        let mut all = combinations(items, k);
        let (chosen, _) = all.partial_shuffle(rng, count);
        return Ok(chosen.to_vec());
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut set: Vec<usize> = items.choose_multiple(rng, k).copied().collect();
        set.sort_unstable();
        if seen.insert(set.clone()) {
            out.push(set);
        }
    }
    Ok(out)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Writes the patch offset into `out` (length `3n`); returns nothing outside
/// the patch radius. The offset mixes a fixed direction with a radial bulge.
fn patch_offset(
    neutral: &[f64],
    vertices: std::ops::Range<usize>,
    patch: &Patch,
    direction: [f64; 3],
    out: &mut [f64],
) {
    for v in vertices {
        let p = &neutral[3 * v..3 * v + 3];
        let rel = [
            p[0] - patch.center[0],
            p[1] - patch.center[1],
            p[2] - patch.center[2],
        ];
        let s2 = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]) / (patch.radius * patch.radius);
        if s2 >= 1.0 {
            continue;
        }
        let falloff = (1.0 - s2) * (1.0 - s2);
        for k in 0..3 {
            out[3 * v + k] =
                patch.amplitude * falloff * (direction[k] + 0.5 * rel[k] / patch.radius);
        }
    }
}

fn low_pass_noise(rng: &mut ChaCha8Rng, frames: usize) -> Vec<f64> {
    let sigma = (frames as f64 / 10.0).max(2.0);
    let half = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..frames + 2 * half).map(|_| rng.sample(StandardNormal)).collect();
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let out: Vec<f64> = (0..frames)
        .map(|t| kernel.iter().enumerate().map(|(i, k)| k * raw[t + i]).sum())
        .collect();
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    out.iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.5 })
        .collect()
}

fn trajectory(rng: &mut ChaCha8Rng, frames: usize, activity: f64) -> Vec<f64> {
    let level = low_pass_noise(rng, frames);
    let envelope: Vec<f64> = if activity >= 1.0 {
        vec![1.0; frames]
    } else {
        let len = ((activity * frames as f64).round() as usize).clamp(1, frames);
        let start = rng.random_range(0..=frames - len);
        (0..frames)
            .map(|t| {
                if t < start || t >= start + len {
                    0.0
                } else {
                    let x = (t - start + 1) as f64 / (len + 1) as f64;
                    (std::f64::consts::PI * x).sin().powi(2)
                }
            })
            .collect()
    };
    level
        .iter()
        .zip(&envelope)
        .map(|(l, e)| ((0.2 + 0.7 * l) * e).clamp(0.0, 1.0))
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticData> {
    if spec.vertices == 0 || spec.controllers == 0 || spec.frames == 0 {
        return Err(Error::InvalidParameter(
            "vertices, controllers and frames must be positive".into(),
        ));
    }
    let (r_lo, r_hi) = spec.patch_radius;
    if !(r_lo > 0.0 && r_lo < r_hi && r_hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "patch radius range {r_lo}..{r_hi} must be positive and non-empty"
        )));
    }
    if spec.blocks == 0 || spec.blocks > spec.vertices || spec.blocks > spec.controllers {
        return Err(Error::InvalidParameter(format!(
            "block count {} must be in 1..=min(vertices, controllers)",
            spec.blocks
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.vertices;
    let m = spec.controllers;
    let dim = 3 * n;
    let vertex_ranges = split(n, spec.blocks);
    let controller_ranges = split(m, spec.blocks);

    let mut neutral = vec![0.0; dim];
    let mut vertex_block = vec![0; n];
    for (b, range) in vertex_ranges.iter().enumerate() {
        let count = range.len();
        let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
        let rows = count.div_ceil(cols);
        for (local, v) in range.clone().enumerate() {
            let u = (local % cols) as f64 / (cols.max(2) - 1) as f64;
            let w = (local / cols) as f64 / (rows.max(2) - 1) as f64;
            neutral[3 * v] = 1.5 * b as f64 + u;
            neutral[3 * v + 1] = w;
            neutral[3 * v + 2] = 0.3 * (1.0 - (2.0 * u - 1.0).powi(2)) * (1.0 - (2.0 * w - 1.0).powi(2));
            vertex_block[v] = b;
        }
    }

    let mut base = Array2::zeros((dim, m));
    let mut patches = Vec::with_capacity(m);
    let mut controller_block = vec![0; m];
    for (b, range) in controller_ranges.iter().enumerate() {
        let verts = vertex_ranges[b].clone();
        for e in range.clone() {
            controller_block[e] = b;
            let anchor = rng.random_range(verts.clone());
            let patch = Patch {
                center: [neutral[3 * anchor], neutral[3 * anchor + 1], neutral[3 * anchor + 2]],
                radius: rng.random_range(r_lo..r_hi),
                amplitude: rng.random_range(0.05..0.15),
            };
            let direction = unit_vector(&mut rng);
            let mut col = vec![0.0; dim];
            patch_offset(&neutral, verts.clone(), &patch, direction, &mut col);
            for (p, v) in col.into_iter().enumerate() {
                base[[p, e]] = v;
            }
            patches.push(patch);
        }
    }

    let mut correctives = Vec::new();
    for (k, total) in [(2, spec.pairs), (3, spec.triples), (4, spec.quads)] {
        let per_block = split(total, spec.blocks);
        for (b, count) in per_block.iter().enumerate() {
            let items: Vec<usize> = controller_ranges[b].clone().collect();
            let verts = vertex_ranges[b].clone();
            for set in draw_sets(&mut rng, &items, k, count.len())? {
                let parents: Vec<&Patch> = set.iter().map(|&i| &patches[i]).collect();
                let kf = parents.len() as f64;
                let mut center = [0.0; 3];
                for p in &parents {
                    for c in 0..3 {
                        center[c] += p.center[c] / kf;
                    }
                }
                let patch = Patch {
                    center,
                    radius: 0.8 * parents.iter().map(|p| p.radius).sum::<f64>() / kf,
                    amplitude: rng.random_range(0.1..0.3)
                        * parents.iter().map(|p| p.amplitude).sum::<f64>()
                        / kf,
                };
                let direction = unit_vector(&mut rng);
                let mut delta = vec![0.0; dim];
                patch_offset(&neutral, verts.clone(), &patch, direction, &mut delta);
                correctives.push(Corrective::new(set, SparseDelta::from_dense(&delta)?)?);
            }
        }
    }
    let rig = RigModel::new(neutral, base, correctives)?;

    let activity = (spec.active as f64 / m as f64).min(1.0);
    let mut weights = WeightMatrix::zeros(m, spec.frames);
    for e in 0..m {
        let row = trajectory(&mut rng, spec.frames, activity);
        weights.set_row(e, &row);
    }
    let targets = rig.eval_sequence(&weights)?;
    Ok(SyntheticData {
        rig,
        weights,
        targets,
        vertex_block,
        controller_block,
    })
}

/// Share of the ground-truth deformation produced by corrective terms:
/// `‖f_Q(W) − f_L(W)‖_F / ‖f_Q(W) − neutral‖_F`.
pub fn corrective_share(data: &SyntheticData) -> Result<f64> {
    let linear = data.rig.without_correctives().eval_sequence(&data.weights)?;
    let mut corr = 0.0;
    let mut total = 0.0;
    for t in 0..data.targets.num_frames() {
        for ((q, l), b0) in data
            .targets
            .frame(t)
            .iter()
            .zip(linear.frame(t))
            .zip(data.rig.neutral())
        {
            corr += (q - l) * (q - l);
            total += (q - b0) * (q - b0);
        }
    }
    Ok(if total > 0.0 { (corr / total).sqrt() } else { 0.0 })
}
