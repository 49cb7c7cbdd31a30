//! Blendshape rig model with up to three tiers of corrective terms.
//!
//! A rig maps a weight vector `w ∈ [0,1]^m` to a mesh of `n` vertices,
//! stored as `3n` stacked coordinates:
//!
//! ```text
//! f(w) = neutral + B w + Σ_pairs w_i w_j d_ij + Σ_triples w_i w_j w_k d_ijk
//!                      + Σ_quads w_i w_j w_k w_l d_ijkl
//! ```
//!
//! The neutral mesh is always included, so the linear rig is the special case
//! with no corrective terms. Solvers work in neutral-offset space, where the
//! rig has zero intercept and targets are `target − neutral`.
//!
//! Because every index set holds distinct controllers, `f` is affine in any
//! single weight `w_e`: `f(w)|_{w_e = s} − target = s·φ + ψ`. The pair
//! `(φ, ψ)` is what [`RigModel::directional_coefficients`] returns and what
//! the coordinate-descent solver is built on.

use ndarray::{Array2, ShapeBuilder};

use crate::error::{check_len, Error, Result};
use crate::matrix::{MeshSequence, WeightMatrix};

/// Explicit `(position, value)` entries of a `3n`-dimensional offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDelta {
    positions: Vec<usize>,
    values: Vec<f64>,
}

impl SparseDelta {
    /// Entries are sorted by position; repeated positions are rejected.
    pub fn new(positions: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len("sparse delta values", positions.len(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse delta"));
        }
        let mut entries: Vec<(usize, f64)> = positions.into_iter().zip(values).collect();
        entries.sort_by_key(|&(p, _)| p);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidRig("repeated position in sparse delta".into()));
        }
        let (positions, values) = entries.into_iter().unzip();
        Ok(Self { positions, values })
    }

    /// Keeps the nonzero entries of a dense vector.
    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        if dense.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense delta"));
        }
        let (positions, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(p, &v)| (p, v))
            .unzip();
        Ok(Self { positions, values })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.positions.len()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.add_scaled_into(1.0, &mut out);
        out
    }

    /// `out += scale · self`
    #[inline]
    pub fn add_scaled_into(&self, scale: f64, out: &mut [f64]) {
        for (&p, &v) in self.positions.iter().zip(&self.values) {
            out[p] += scale * v;
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.positions
            .iter()
            .zip(&self.values)
            .map(|(&p, &v)| v * dense[p])
            .sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Number of controllers participating in a corrective term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Pair,
    Triple,
    Quad,
}

impl Tier {
    pub fn order(self) -> usize {
        match self {
            Tier::Pair => 2,
            Tier::Triple => 3,
            Tier::Quad => 4,
        }
    }

    fn of_len(len: usize) -> Option<Tier> {
        match len {
            2 => Some(Tier::Pair),
            3 => Some(Tier::Triple),
            4 => Some(Tier::Quad),
            _ => None,
        }
    }
}

/// An offset activated by the product of two to four base weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrective {
    indices: Vec<usize>,
    delta: SparseDelta,
}

impl Corrective {
    pub fn new(indices: Vec<usize>, delta: SparseDelta) -> Result<Self> {
        if Tier::of_len(indices.len()).is_none() {
            return Err(Error::InvalidRig(format!(
                "corrective index set must have 2 to 4 members, got {}",
                indices.len()
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRig(format!(
                "corrective index set {indices:?} repeats a controller"
            )));
        }
        Ok(Self { indices, delta })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn delta(&self) -> &SparseDelta {
        &self.delta
    }

    pub fn tier(&self) -> Tier {
        Tier::of_len(self.indices.len()).expect("validated on construction")
    }

    /// Product of the weights of every member.
    #[inline]
    pub fn activation(&self, w: &[f64]) -> f64 {
        self.indices.iter().map(|&i| w[i]).product()
    }

    /// Product of the weights of every member other than `skip`.
    #[inline]
    pub fn activation_without(&self, w: &[f64], skip: usize) -> f64 {
        self.indices
            .iter()
            .filter(|&&i| i != skip)
            .map(|&i| w[i])
            .product()
    }

    fn sorted_key(&self) -> Vec<usize> {
        let mut k = self.indices.clone();
        k.sort_unstable();
        k
    }
}

/// Neutral mesh, base blendshapes and corrective terms. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RigModel {
    neutral: Vec<f64>,
    /// `3n × m`, column-major so each blendshape is contiguous.
    base: Array2<f64>,
    /// Ordered pairs, then triples, then quads.
    correctives: Vec<Corrective>,
    tier_ends: [usize; 3],
    /// For each controller, the correctives it participates in.
    touching: Vec<Vec<usize>>,
    names: Option<Vec<String>>,
}

impl RigModel {
    /// Validates and assembles a rig. `base` is `3n × m`. Correctives may be
    /// given in any order; relative order within a tier is preserved.
    pub fn new(
        neutral: Vec<f64>,
        base: Array2<f64>,
        correctives: impl IntoIterator<Item = Corrective>,
    ) -> Result<Self> {
        if !neutral.len().is_multiple_of(3) {
            return Err(Error::InvalidRig(format!(
                "neutral length {} is not a multiple of 3",
                neutral.len()
            )));
        }
        check_len("blendshape matrix rows", neutral.len(), base.nrows())?;
        if neutral.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("neutral mesh"));
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("blendshape matrix"));
        }
        let dim = neutral.len();
        let m = base.ncols();

        let mut tiers: [Vec<Corrective>; 3] = Default::default();
        for c in correctives {
            if let Some(&bad) = c.indices.iter().find(|&&i| i >= m) {
                return Err(Error::IndexOutOfRange {
                    what: "corrective controller",
                    index: bad,
                    size: m,
                });
            }
            if let Some(&p) = c.delta.positions.last() {
                if p >= dim {
                    return Err(Error::IndexOutOfRange {
                        what: "corrective delta position",
                        index: p,
                        size: dim,
                    });
                }
            }
            tiers[c.tier() as usize].push(c);
        }
        for tier in &tiers {
            let mut keys: Vec<Vec<usize>> = tier.iter().map(Corrective::sorted_key).collect();
            keys.sort();
            if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidRig(format!(
                    "duplicate corrective index set {:?}",
                    w[0]
                )));
            }
        }
        let tier_ends = [
            tiers[0].len(),
            tiers[0].len() + tiers[1].len(),
            tiers[0].len() + tiers[1].len() + tiers[2].len(),
        ];
        let correctives: Vec<Corrective> = tiers.into_iter().flatten().collect();
        let mut touching = vec![Vec::new(); m];
        for (idx, c) in correctives.iter().enumerate() {
            for &i in &c.indices {
                touching[i].push(idx);
            }
        }

        let mut col_major = Array2::zeros((dim, m).f());
        col_major.assign(&base);
        Ok(Self {
            neutral,
            base: col_major,
            correctives,
            tier_ends,
            touching,
            names: None,
        })
    }

    /// Attaches blendshape names; there must be exactly one per controller.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        check_len("blendshape names", self.num_controllers(), names.len())?;
        self.names = Some(names);
        Ok(self)
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Display name of a controller, falling back to `w<index>`.
    pub fn controller_name(&self, e: usize) -> String {
        match &self.names {
            Some(n) => n[e].clone(),
            None => format!("w{e}"),
        }
    }

    /// Number of vertices `n`.
    pub fn num_vertices(&self) -> usize {
        self.neutral.len() / 3
    }

    /// Number of base blendshapes `m`.
    pub fn num_controllers(&self) -> usize {
        self.base.ncols()
    }

    pub fn dim(&self) -> usize {
        self.neutral.len()
    }

    pub fn neutral(&self) -> &[f64] {
        &self.neutral
    }

    pub fn base(&self) -> &Array2<f64> {
        &self.base
    }

    pub fn base_column(&self, e: usize) -> &[f64] {
        let dim = self.dim();
        &self.base.as_slice_memory_order().expect("column-major storage")[e * dim..(e + 1) * dim]
    }

    pub fn correctives(&self) -> &[Corrective] {
        &self.correctives
    }

    pub fn pairs(&self) -> &[Corrective] {
        &self.correctives[..self.tier_ends[0]]
    }

    pub fn triples(&self) -> &[Corrective] {
        &self.correctives[self.tier_ends[0]..self.tier_ends[1]]
    }

    pub fn quads(&self) -> &[Corrective] {
        &self.correctives[self.tier_ends[1]..self.tier_ends[2]]
    }

    pub fn has_correctives(&self) -> bool {
        !self.correctives.is_empty()
    }

    /// Indices into [`correctives`](Self::correctives) of the terms containing `e`.
    pub fn correctives_touching(&self, e: usize) -> &[usize] {
        &self.touching[e]
    }

    /// Same base and neutral, no corrective terms.
    pub fn without_correctives(&self) -> RigModel {
        RigModel {
            neutral: self.neutral.clone(),
            base: self.base.clone(),
            correctives: Vec::new(),
            tier_ends: [0; 3],
            touching: vec![Vec::new(); self.num_controllers()],
            names: self.names.clone(),
        }
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        check_len("weight vector", self.num_controllers(), w.len())
    }

    fn check_mesh(&self, what: &'static str, mesh: &[f64]) -> Result<()> {
        check_len(what, self.dim(), mesh.len())
    }

    /// `B w` accumulated into `out`.
    pub(crate) fn add_linear_offset(&self, w: &[f64], out: &mut [f64]) {
        for (e, &we) in w.iter().enumerate() {
            if we != 0.0 {
                for (o, &b) in out.iter_mut().zip(self.base_column(e)) {
                    *o += we * b;
                }
            }
        }
    }

    /// Full rig offset from the neutral mesh, accumulated into `out`.
    pub(crate) fn add_quartic_offset(&self, w: &[f64], out: &mut [f64]) {
        self.add_linear_offset(w, out);
        for c in &self.correctives {
            let a = c.activation(w);
            if a != 0.0 {
                c.delta.add_scaled_into(a, out);
            }
        }
    }

    /// Linear blendshape model `neutral + B w`; correctives are ignored.
    pub fn eval_linear(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_weights(w)?;
        let mut out = self.neutral.clone();
        self.add_linear_offset(w, &mut out);
        Ok(out)
    }

    /// Rig function with every corrective tier.
    pub fn eval_quartic(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_weights(w)?;
        let mut out = self.neutral.clone();
        self.add_quartic_offset(w, &mut out);
        Ok(out)
    }

    /// Evaluates every frame of `weights` independently.
    pub fn eval_sequence(&self, weights: &WeightMatrix) -> Result<MeshSequence> {
        check_len(
            "weight matrix rows",
            self.num_controllers(),
            weights.num_controllers(),
        )?;
        let mut out = MeshSequence::zeros(self.dim(), weights.num_frames());
        for t in 0..weights.num_frames() {
            let w = weights.frame(t);
            let col = out.frame_mut(t);
            col.copy_from_slice(&self.neutral);
            self.add_quartic_offset(&w, col);
        }
        Ok(out)
    }

    /// Coefficient of `w_e` in the rig: base column `e` plus every corrective
    /// containing `e` scaled by the product of its other weights.
    pub(crate) fn phi_into(&self, w: &[f64], e: usize, out: &mut [f64]) {
        out.copy_from_slice(self.base_column(e));
        for &idx in &self.touching[e] {
            let c = &self.correctives[idx];
            let a = c.activation_without(w, e);
            if a != 0.0 {
                c.delta.add_scaled_into(a, out);
            }
        }
    }

    /// Splits the residual `f(w) − target` into `s·φ + ψ` with `s = w_e`.
    ///
    /// The value of `w[e]` is ignored. `ψ` is the residual with `w_e = 0`,
    /// i.e. all terms not containing `e`, minus the offset target.
    pub fn directional_coefficients(
        &self,
        w: &[f64],
        e: usize,
        target: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_weights(w)?;
        self.check_mesh("target mesh", target)?;
        if e >= self.num_controllers() {
            return Err(Error::IndexOutOfRange {
                what: "controller",
                index: e,
                size: self.num_controllers(),
            });
        }
        let mut phi = vec![0.0; self.dim()];
        self.phi_into(w, e, &mut phi);

        let mut without = w.to_vec();
        without[e] = 0.0;
        let mut psi: Vec<f64> = self
            .neutral
            .iter()
            .zip(target)
            .map(|(b0, t)| b0 - t)
            .collect();
        self.add_quartic_offset(&without, &mut psi);
        Ok((phi, psi))
    }
}
