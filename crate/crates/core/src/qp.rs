//! Box-constrained convex quadratic programs.
//!
//! Problems have the form
//!
//! ```text
//! minimize   q(x) = xᵀ H x + 2 xᵀ c
//! subject to lower ≤ x ≤ upper
//! ```
//!
//! with `H` symmetric positive semidefinite. The solver alternates a
//! projected search along the steepest-descent path `P(x − s∇q)`, minimized
//! exactly over its piecewise-linear breakpoints, with conjugate gradient on
//! the coordinates that are strictly inside their bounds. Every step is a
//! descent step, so objective values never increase from the (projected)
//! starting point. Separable problems (diagonal `H`) are solved in closed form.

use ndarray::Array2;

use crate::error::{check_len, Error, Result};

/// Symmetric matrix stored by diagonals: `bands[k][i] = H[i][i + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymmetric {
    bands: Vec<Vec<f64>>,
}

impl BandedSymmetric {
    pub fn diagonal(diag: Vec<f64>) -> Self {
        Self { bands: vec![diag] }
    }

    pub fn from_bands(bands: Vec<Vec<f64>>) -> Result<Self> {
        let n = bands.first().map_or(0, Vec::len);
        for (k, band) in bands.iter().enumerate() {
            check_len("matrix band", n.saturating_sub(k), band.len())?;
        }
        if bands.is_empty() {
            return Ok(Self::diagonal(Vec::new()));
        }
        Ok(Self { bands })
    }

    pub fn dim(&self) -> usize {
        self.bands[0].len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    pub fn bands(&self) -> &[Vec<f64>] {
        &self.bands
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.bands.get(hi - lo).map_or(0.0, |b| b[lo])
    }

    /// Adds `d` to the main diagonal.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (a, b) in self.bands[0].iter_mut().zip(d) {
            *a += b;
        }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &h), &xi) in out.iter_mut().zip(&self.bands[0]).zip(x) {
            *o = h * xi;
        }
        for (k, band) in self.bands.iter().enumerate().skip(1) {
            for (i, &h) in band.iter().enumerate() {
                out[i] += h * x[i + k];
                out[i + k] += h * x[i];
            }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.bands[1..].iter().all(|b| b.iter().all(|&v| v == 0.0))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        Array2::from_shape_fn((n, n), |(i, j)| self.get(i, j))
    }
}

/// Quadratic term of a [`BoxQp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Dense(Array2<f64>),
    Banded(BandedSymmetric),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(h) => h.nrows(),
            Hessian::Banded(b) => b.dim(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Hessian::Dense(h) => h[[i, j]],
            Hessian::Banded(b) => b.get(i, j),
        }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Dense(h) => {
                for (o, row) in out.iter_mut().zip(h.rows()) {
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Hessian::Banded(b) => b.mul_vec(x, out),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        match self {
            Hessian::Dense(h) => h
                .indexed_iter()
                .all(|((i, j), &v)| i == j || v == 0.0),
            Hessian::Banded(b) => b.is_diagonal(),
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            Hessian::Dense(h) => Box::new(h.iter().copied()),
            Hessian::Banded(b) => Box::new(b.bands.iter().flatten().copied()),
        }
    }
}

/// `minimize xᵀ H x + 2 xᵀ c` over the box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    hessian: Hessian,
    linear: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxQp {
    pub fn new(hessian: Hessian, linear: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = hessian.dim();
        if let Hessian::Dense(h) = &hessian {
            check_len("hessian columns", n, h.ncols())?;
        }
        check_len("linear term", n, linear.len())?;
        check_len("lower bounds", n, lower.len())?;
        check_len("upper bounds", n, upper.len())?;
        if hessian.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hessian"));
        }
        if linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear term"));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bounds"));
        }
        if let Some(i) = (0..n).find(|&i| lower[i] > upper[i]) {
            return Err(Error::InvalidParameter(format!(
                "lower bound {} exceeds upper bound {} at {i}",
                lower[i], upper[i]
            )));
        }
        if let Hessian::Dense(h) = &hessian {
            let scale = h.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..n {
                for j in 0..i {
                    if (h[[i, j]] - h[[j, i]]).abs() > 1e-12 * scale {
                        return Err(Error::InvalidParameter(format!(
                            "hessian is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            hessian,
            linear,
            lower,
            upper,
        })
    }

    /// Problem over the unit box `[0, 1]^n`.
    pub fn unit_box(hessian: Hessian, linear: Vec<f64>) -> Result<Self> {
        let n = linear.len();
        Self::new(hessian, linear, vec![0.0; n], vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &Hessian {
        &self.hessian
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; self.dim()];
        self.hessian.mul_vec(x, &mut hx);
        self.objective_with(x, &hx)
    }

    fn objective_with(&self, x: &[f64], hx: &[f64]) -> f64 {
        x.iter()
            .zip(hx)
            .zip(&self.linear)
            .map(|((xi, hi), ci)| xi * (hi + 2.0 * ci))
            .sum()
    }

    /// `∇q(x) = 2 (H x + c)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut hx = vec![0.0; self.dim()];
        self.hessian.mul_vec(x, &mut hx);
        hx.iter().zip(&self.linear).map(|(h, c)| 2.0 * (h + c)).collect()
    }

    /// Largest violation of the first-order optimality conditions at `x`.
    pub fn kkt_residual(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; self.dim()];
        self.hessian.mul_vec(x, &mut hx);
        self.kkt_residual_with(x, &hx)
    }

    fn kkt_residual_with(&self, x: &[f64], hx: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            let g = 2.0 * (hx[i] + self.linear[i]);
            let v = if self.lower[i] == self.upper[i] {
                0.0
            } else if x[i] <= self.lower[i] {
                (-g).max(0.0)
            } else if x[i] >= self.upper[i] {
                g.max(0.0)
            } else {
                g.abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Target for the projected-gradient KKT residual.
    pub tol: f64,
    /// Outer iteration cap; `None` means `10 × dim`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub point: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit or progress stalled before the
    /// residual reached the tolerance. `point` is still the best iterate.
    pub converged: bool,
    /// Objective at the start point and after each outer iteration.
    pub objective_trace: Vec<f64>,
}

/// Solves a box QP, starting from `warm_start` projected onto the box (or
/// from the projection of the origin).
pub fn solve_box_qp(
    problem: &BoxQp,
    options: &QpOptions,
    warm_start: Option<&[f64]>,
) -> Result<QpSolution> {
    let n = problem.dim();
    if !(options.tol.is_finite() && options.tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "qp tolerance must be finite and non-negative, got {}",
            options.tol
        )));
    }
    let mut x = match warm_start {
        Some(w) => {
            check_len("warm start", n, w.len())?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("warm start"));
            }
            problem.project(w)
        }
        None => problem.project(&vec![0.0; n]),
    };

    if problem.hessian.is_diagonal() {
        return Ok(solve_separable(problem, x));
    }

    let max_iter = options.max_iter.unwrap_or(10 * n).max(1);
    let mut hx = vec![0.0; n];
    problem.hessian.mul_vec(&x, &mut hx);
    let mut objective = problem.objective_with(&x, &hx);
    let mut trace = vec![objective];
    let mut iterations = 0;
    let mut converged = false;
    let mut work = Workspace::new(n);

    loop {
        if problem.kkt_residual_with(&x, &hx) <= options.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        let previous = x.clone();

        projected_search(problem, &mut x, &mut hx, &mut work);
        subspace_cg(problem, &mut x, &mut hx, options.tol, &mut work);

        problem.hessian.mul_vec(&x, &mut hx);
        let next = problem.objective_with(&x, &hx);
        if next > objective {
            // rounding-level increase: keep the better point and stop
            x = previous;
            problem.hessian.mul_vec(&x, &mut hx);
            converged = problem.kkt_residual_with(&x, &hx) <= options.tol;
            break;
        }
        objective = next;
        trace.push(objective);
        if x == previous {
            converged = problem.kkt_residual_with(&x, &hx) <= options.tol;
            break;
        }
    }

    Ok(QpSolution {
        kkt_residual: problem.kkt_residual_with(&x, &hx),
        objective: problem.objective_with(&x, &hx),
        point: x,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Exact minimizer when `H` is diagonal: each coordinate is independent.
fn solve_separable(problem: &BoxQp, mut x: Vec<f64>) -> QpSolution {
    let start = problem.objective(&x);
    for i in 0..problem.dim() {
        let h = problem.hessian.get(i, i);
        let c = problem.linear[i];
        let (l, u) = (problem.lower[i], problem.upper[i]);
        x[i] = if h > 0.0 {
            (-c / h).clamp(l, u)
        } else if c > 0.0 {
            l
        } else if c < 0.0 {
            u
        } else {
            x[i]
        };
    }
    let objective = problem.objective(&x);
    QpSolution {
        kkt_residual: problem.kkt_residual(&x),
        objective,
        point: x,
        iterations: 1,
        converged: true,
        objective_trace: vec![start, objective],
    }
}

struct Workspace {
    dir: Vec<f64>,
    hdir: Vec<f64>,
    resid: Vec<f64>,
    breaks: Vec<(f64, usize)>,
    free: Vec<usize>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            dir: vec![0.0; n],
            hdir: vec![0.0; n],
            resid: vec![0.0; n],
            breaks: Vec::with_capacity(n),
            free: Vec::with_capacity(n),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact minimization of `q` along the projected steepest-descent path,
/// walking its breakpoints in order.
fn projected_search(problem: &BoxQp, x: &mut [f64], hx: &mut [f64], work: &mut Workspace) {
    let (lower, upper, c) = (&problem.lower, &problem.upper, &problem.linear);
    let n = x.len();
    let Workspace {
        dir, hdir, breaks, ..
    } = work;
    breaks.clear();
    for i in 0..n {
        let d = -(hx[i] + c[i]);
        let blocked = lower[i] == upper[i]
            || (x[i] <= lower[i] && d <= 0.0)
            || (x[i] >= upper[i] && d >= 0.0);
        if blocked || d == 0.0 {
            dir[i] = 0.0;
            continue;
        }
        dir[i] = d;
        let t = if d > 0.0 {
            (upper[i] - x[i]) / d
        } else {
            (lower[i] - x[i]) / d
        };
        breaks.push((t.max(0.0), i));
    }
    breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut t_prev = 0.0;
    let mut k = 0;
    while k < breaks.len() {
        problem.hessian.mul_vec(dir, hdir);
        let slope: f64 = (0..n).map(|i| (hx[i] + c[i]) * dir[i]).sum();
        if slope >= 0.0 {
            return;
        }
        let curvature = dot(dir, hdir);
        let t_next = breaks[k].0;
        let segment = t_next - t_prev;
        if curvature > 0.0 {
            let s = -slope / curvature;
            if s < segment {
                step(problem, x, hx, dir, hdir, s);
                return;
            }
        }
        step(problem, x, hx, dir, hdir, segment);
        while k < breaks.len() && breaks[k].0 <= t_next {
            let i = breaks[k].1;
            x[i] = if dir[i] > 0.0 { upper[i] } else { lower[i] };
            dir[i] = 0.0;
            k += 1;
        }
        t_prev = t_next;
    }
}

fn step(problem: &BoxQp, x: &mut [f64], hx: &mut [f64], dir: &[f64], hdir: &[f64], s: f64) {
    if s == 0.0 {
        return;
    }
    for i in 0..x.len() {
        if dir[i] != 0.0 {
            x[i] = (x[i] + s * dir[i]).clamp(problem.lower[i], problem.upper[i]);
        }
        hx[i] += s * hdir[i];
    }
}

/// Conjugate gradient restricted to the coordinates strictly inside their
/// bounds. Stops at the first bound hit, at a direction without curvature, or
/// when the free gradient is below a fraction of `tol`.
fn subspace_cg(problem: &BoxQp, x: &mut [f64], hx: &mut [f64], tol: f64, work: &mut Workspace) {
    let (lower, upper, c) = (&problem.lower, &problem.upper, &problem.linear);
    let n = x.len();
    let Workspace {
        dir: p,
        hdir: hp,
        resid: r,
        free,
        ..
    } = work;
    free.clear();
    free.extend((0..n).filter(|&i| lower[i] < x[i] && x[i] < upper[i]));
    if free.is_empty() {
        return;
    }
    p.iter_mut().for_each(|v| *v = 0.0);
    r.iter_mut().for_each(|v| *v = 0.0);
    for &i in free.iter() {
        r[i] = -(hx[i] + c[i]);
        p[i] = r[i];
    }
    let mut rr = dot(r, r);
    let scale = free
        .iter()
        .map(|&i| problem.hessian.get(i, i).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    // ∇q = 2(Hx + c), so |r| ≤ tol/4 leaves a margin of two
    let r_tol = 0.25 * tol;

    for _ in 0..2 * free.len() + 2 {
        if free.iter().all(|&i| r[i].abs() <= r_tol) {
            return;
        }
        problem.hessian.mul_vec(p, hp);
        let curvature = dot(p, hp);
        let mut max_step = f64::INFINITY;
        let mut blocking = usize::MAX;
        for &i in free.iter() {
            let limit = if p[i] > 0.0 {
                (upper[i] - x[i]) / p[i]
            } else if p[i] < 0.0 {
                (lower[i] - x[i]) / p[i]
            } else {
                continue;
            };
            if limit < max_step {
                max_step = limit;
                blocking = i;
            }
        }
        let flat = curvature <= 64.0 * f64::EPSILON * scale * dot(p, p);
        let alpha = if flat { f64::INFINITY } else { rr / curvature };
        if alpha >= max_step {
            if blocking == usize::MAX {
                return;
            }
            step(problem, x, hx, p, hp, max_step);
            x[blocking] = if p[blocking] > 0.0 {
                upper[blocking]
            } else {
                lower[blocking]
            };
            return;
        }
        step(problem, x, hx, p, hp, alpha);
        for &i in free.iter() {
            r[i] -= alpha * hp[i];
        }
        let rr_next = dot(r, r);
        let beta = rr_next / rr;
        rr = rr_next;
        for &i in free.iter() {
            p[i] = r[i] + beta * p[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Hessian {
        Hessian::Dense(Array2::eye(n))
    }

    #[test]
    fn interior_optimum() {
        let qp = BoxQp::unit_box(identity(4), vec![-0.5; 4]).unwrap();
        let sol = solve_box_qp(&qp, &QpOptions::default(), None).unwrap();
        assert!(sol.converged);
        for x in &sol.point {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_gradient_pins_to_lower() {
        let qp = BoxQp::unit_box(identity(3), vec![1.0; 3]).unwrap();
        let sol = solve_box_qp(&qp, &QpOptions::default(), Some(&[0.7, 0.2, 1.0])).unwrap();
        assert_eq!(sol.point, vec![0.0; 3]);
        assert_eq!(sol.kkt_residual, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(BoxQp::unit_box(identity(2), vec![f64::NAN, 0.0]).is_err());
        assert!(BoxQp::new(identity(2), vec![0.0; 2], vec![1.0, 0.0], vec![0.0, 1.0]).is_err());
        let asym = Array2::from_shape_vec((2, 2), vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(BoxQp::unit_box(Hessian::Dense(asym), vec![0.0; 2]).is_err());
        let qp = BoxQp::unit_box(identity(2), vec![0.0; 2]).unwrap();
        assert!(solve_box_qp(&qp, &QpOptions::default(), Some(&[f64::INFINITY, 0.0])).is_err());
        assert!(solve_box_qp(&qp, &QpOptions::default(), Some(&[0.0])).is_err());
    }

    #[test]
    fn banded_product_matches_dense() {
        let b = BandedSymmetric::from_bands(vec![
            vec![4.0, 5.0, 6.0, 7.0],
            vec![1.0, -1.0, 2.0],
            vec![0.5, 0.25],
        ])
        .unwrap();
        let dense = b.to_dense();
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut out = [0.0; 4];
        b.mul_vec(&x, &mut out);
        let want = dense.dot(&ndarray::arr1(&x));
        for i in 0..4 {
            assert!((out[i] - want[i]).abs() < 1e-14);
        }
        assert!(BandedSymmetric::from_bands(vec![vec![1.0; 3], vec![1.0; 3]]).is_err());
    }

    #[test]
    fn singular_hessian_with_flat_direction() {
        // H = [[1,1],[1,1]] has a null direction (1,-1); c pushes along it
        let h = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let qp = BoxQp::unit_box(Hessian::Dense(h), vec![-0.5, -0.4]).unwrap();
        let sol = solve_box_qp(&qp, &QpOptions::default(), None).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!(sol.kkt_residual <= 1e-8);
    }

    fn random_psd(rng: &mut impl Rng, n: usize, rank: usize) -> Array2<f64> {
        let a = Array2::from_shape_fn((rank, n), |_| rng.random_range(-1.0..1.0));
        let h = a.t().dot(&a);
        // symmetrize exactly
        Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (h[[i, j]] + h[[j, i]]))
    }

    #[test]
    fn monotone_trace_and_warm_start_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = 2 + trial % 9;
            let h = random_psd(&mut rng, n, 1 + trial % n);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let qp = BoxQp::unit_box(Hessian::Dense(h), c).unwrap();
            let start: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let sol = solve_box_qp(&qp, &QpOptions::default(), Some(&start)).unwrap();
            assert!(sol.converged, "trial {trial}: {sol:?}");
            assert!(sol.kkt_residual <= 1e-8);
            assert!(sol.objective <= qp.objective(&start) + 1e-12);
            for w in sol.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
            }
            assert!(sol.point.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let h = random_psd(&mut rng, n, n);
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let qp = BoxQp::unit_box(Hessian::Dense(h), c).unwrap();
        let opts = QpOptions {
            tol: 1e-14,
            max_iter: Some(1),
        };
        let sol = solve_box_qp(&qp, &opts, None).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(!sol.converged);
        assert!(sol.kkt_residual > 0.0);
        assert!(sol.objective <= qp.objective(&vec![0.0; n]));
    }

    #[test]
    fn separable_closed_form() {
        let b = BandedSymmetric::diagonal(vec![2.0, 0.0, 0.0, 1.0]);
        let qp = BoxQp::unit_box(Hessian::Banded(b), vec![-1.0, 3.0, -3.0, -5.0]).unwrap();
        let sol = solve_box_qp(&qp, &QpOptions::default(), None).unwrap();
        assert_eq!(sol.point, vec![0.5, 0.0, 1.0, 1.0]);
        assert_eq!(sol.kkt_residual, 0.0);
    }
}
