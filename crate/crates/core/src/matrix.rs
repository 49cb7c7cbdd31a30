//! Frame-indexed matrices: blendshape weights and mesh sequences.
//!
//! Both types store one column per animation frame. Mesh sequences are kept
//! in column-major layout so that a frame is a contiguous slice of `3n`
//! coordinates.

use ndarray::{Array2, ArrayView1, ArrayView2, ShapeBuilder};

use crate::error::{check_len, Error, Result};

/// An `m × T` matrix of blendshape activations, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn zeros(controllers: usize, frames: usize) -> Self {
        Self(Array2::zeros((controllers, frames)))
    }

    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight matrix"));
        }
        Ok(Self(values))
    }

    /// Builds a matrix from per-frame weight vectors.
    pub fn from_frames(controllers: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let mut out = Array2::zeros((controllers, frames.len()));
        for (t, frame) in frames.iter().enumerate() {
            check_len("weight frame", controllers, frame.len())?;
            for (e, &v) in frame.iter().enumerate() {
                out[[e, t]] = v;
            }
        }
        Self::from_array(out)
    }

    pub fn num_controllers(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, controller: usize, frame: usize) -> f64 {
        self.0[[controller, frame]]
    }

    pub fn set(&mut self, controller: usize, frame: usize, value: f64) {
        self.0[[controller, frame]] = value;
    }

    /// Weights of every controller at one frame.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.0.column(t).to_vec()
    }

    /// Trajectory of one controller over all frames.
    pub fn row(&self, e: usize) -> ArrayView1<'_, f64> {
        self.0.row(e)
    }

    pub fn set_row(&mut self, e: usize, values: &[f64]) {
        for (dst, &v) in self.0.row_mut(e).iter_mut().zip(values) {
            *dst = v;
        }
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// True when every entry lies in `[0, 1]`.
    pub fn is_feasible(&self) -> bool {
        self.0.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Largest absolute entrywise difference to another matrix of equal shape.
    pub fn max_abs_diff(&self, other: &WeightMatrix) -> f64 {
        assert_eq!(self.0.dim(), other.0.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Frames `range` as a new matrix.
    pub fn frames(&self, range: std::ops::Range<usize>) -> WeightMatrix {
        WeightMatrix(self.0.slice(ndarray::s![.., range]).to_owned())
    }
}

/// A `3n × T` matrix of stacked vertex coordinates, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSequence(Array2<f64>);

impl MeshSequence {
    pub fn zeros(coords: usize, frames: usize) -> Self {
        Self(Array2::zeros((coords, frames).f()))
    }

    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mesh sequence"));
        }
        let mut out = Array2::zeros(values.raw_dim().f());
        out.assign(&values);
        Ok(Self(out))
    }

    pub fn from_frames(coords: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let mut out = Self::zeros(coords, frames.len());
        for (t, frame) in frames.iter().enumerate() {
            check_len("mesh frame", coords, frame.len())?;
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mesh sequence"));
            }
            out.frame_mut(t).copy_from_slice(frame);
        }
        Ok(out)
    }

    /// Number of stacked coordinates (`3n`).
    pub fn num_coords(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_vertices(&self) -> usize {
        self.0.nrows() / 3
    }

    pub fn num_frames(&self) -> usize {
        self.0.ncols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.0.nrows();
        &self.0.as_slice_memory_order().expect("column-major storage")[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.0.nrows();
        &mut self
            .0
            .as_slice_memory_order_mut()
            .expect("column-major storage")[t * n..(t + 1) * n]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Restricts every frame to the given vertices, in the given order.
    pub fn select_vertices(&self, vertices: &[usize]) -> MeshSequence {
        let mut out = MeshSequence::zeros(3 * vertices.len(), self.num_frames());
        for t in 0..self.num_frames() {
            let src = self.frame(t);
            let dst = out.frame_mut(t);
            for (local, &v) in vertices.iter().enumerate() {
                dst[3 * local..3 * local + 3].copy_from_slice(&src[3 * v..3 * v + 3]);
            }
        }
        out
    }

    /// Frames `range` as a new sequence.
    pub fn frames(&self, range: std::ops::Range<usize>) -> MeshSequence {
        let mut out = MeshSequence::zeros(self.num_coords(), range.len());
        for (local, t) in range.enumerate() {
            out.frame_mut(local).copy_from_slice(self.frame(t));
        }
        out
    }

    /// Length of the diagonal of the axis-aligned box enclosing every vertex
    /// of every frame.
    pub fn bounding_box_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for t in 0..self.num_frames() {
            for p in self.frame(t).chunks_exact(3) {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        if lo[0] > hi[0] {
            return 0.0;
        }
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }
}
