//! Uniform grids, trapezoid quadrature, nodal kernels and the elementary
//! operators built on them: Nyström assembly of `I + K`, time reversal `Y`
//! and the delay embedding `Θ` with its adjoint.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{expect_header, read_table, write_table};
use crate::linalg::Matrix;

/// Uniform grid `t_i = i·h` on `[0, T]` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    nodes: usize,
    step: f64,
}

/// Space grids share the layout of time grids (unit wave speed).
pub type SpaceGrid = TimeGrid;

impl TimeGrid {
    pub fn new(horizon: f64, nodes: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Validation(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if nodes < 3 {
            return Err(Error::Validation(format!(
                "a grid needs at least 3 nodes, got {nodes}"
            )));
        }
        Ok(Self {
            horizon,
            nodes,
            step: horizon / (nodes - 1) as f64,
        })
    }

    /// Grid with `nodes` nodes and the given step, starting at 0.
    pub fn with_step(step: f64, nodes: usize) -> Result<Self> {
        let g = Self::new(step * nodes.saturating_sub(1) as f64, nodes)?;
        Ok(Self { step, ..g })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.horizon
        } else {
            i as f64 * self.step
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.node(i)).collect()
    }

    /// Grid on `[0, 2T]` with the same step.
    pub fn doubled(&self) -> TimeGrid {
        Self {
            horizon: 2.0 * self.horizon,
            nodes: 2 * self.nodes - 1,
            step: self.step,
        }
    }

    /// Grid on `[0, T + extra·h]` with the same step.
    pub fn extended(&self, extra: usize) -> TimeGrid {
        Self {
            horizon: self.step * (self.nodes - 1 + extra) as f64,
            nodes: self.nodes + extra,
            step: self.step,
        }
    }

    /// The leading `m` nodes as a grid on `[0, t_{m-1}]`.
    pub fn prefix(&self, m: usize) -> Result<TimeGrid> {
        if m > self.nodes {
            return Err(Error::Validation(format!(
                "prefix of {m} nodes from a grid of {}",
                self.nodes
            )));
        }
        TimeGrid::new(self.node(m - 1), m).map(|g| TimeGrid {
            step: self.step,
            ..g
        })
    }

    /// Same step and node count (up to rounding of the step).
    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.nodes == other.nodes && self.same_step(other)
    }

    pub fn same_step(&self, other: &TimeGrid) -> bool {
        (self.step - other.step).abs() <= 1e-12 * self.step.max(other.step)
    }

    /// Number of whole steps in `T - ξ`; rejects ξ outside `(0, T]` or off
    /// the grid.
    pub fn offset_steps(&self, xi: f64) -> Result<usize> {
        if !(xi > 0.0) || xi > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "sub-horizon {xi} outside (0, {}]",
                self.horizon
            )));
        }
        let k = (self.horizon - xi) / self.step;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-9 {
            return Err(Error::Incommensurate {
                xi,
                horizon: self.horizon,
                step: self.step,
            });
        }
        Ok(rounded as usize)
    }

    /// Index of the node equal to `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = t / self.step;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-9 || rounded < 0.0 || rounded as usize >= self.nodes {
            return Err(Error::Incommensurate {
                xi: t,
                horizon: self.horizon,
                step: self.step,
            });
        }
        Ok(rounded as usize)
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.nodes).map(|i| f(self.node(i))).collect()
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.nodes {
            return Err(Error::GridMismatch(format!(
                "{what} has {len} samples, grid has {}",
                self.nodes
            )));
        }
        Ok(())
    }
}

/// Trapezoid weights on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    grid: TimeGrid,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn trapezoid(grid: &TimeGrid) -> Self {
        let h = grid.step();
        let mut weights = vec![h; grid.len()];
        weights[0] = 0.5 * h;
        *weights.last_mut().unwrap() = 0.5 * h;
        Self {
            grid: *grid,
            weights,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.weights.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.weights.len());
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }
}

/// Running trapezoid integral `F_i = ∫_0^{t_i} f`.
pub fn cumulative_trapezoid(f: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * step * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(f.len());
    out
}

/// Which part of the square a kernel may be nonzero on. `Upper` means
/// `j ≥ i` (`s ≥ t`), `Lower` means `j ≤ i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Full,
    Upper,
    Lower,
}

impl Support {
    #[inline]
    pub fn contains(self, i: usize, j: usize) -> bool {
        match self {
            Support::Full => true,
            Support::Upper => j >= i,
            Support::Lower => j <= i,
        }
    }
}

/// Nodal values `k(t_i, t_j)` of a kernel on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    grid: TimeGrid,
    values: Matrix,
    support: Support,
    hermitian: bool,
}

impl Kernel2D {
    pub fn zeros(grid: &TimeGrid, support: Support) -> Self {
        Self {
            grid: *grid,
            values: Matrix::zeros(grid.len(), grid.len()),
            support,
            hermitian: support == Support::Full,
        }
    }

    /// Kernel with entries `f(i, j)` on `support`, exact zeros elsewhere.
    pub fn from_fn(grid: &TimeGrid, support: Support, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = grid.len();
        let values = Matrix::from_fn(n, n, |i, j| if support.contains(i, j) { f(i, j) } else { 0.0 });
        Self {
            grid: *grid,
            values,
            support,
            hermitian: false,
        }
    }

    /// Symmetric kernel: `f` is evaluated on `j ≤ i` and mirrored.
    pub fn hermitian_from_fn(grid: &TimeGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = grid.len();
        let mut values = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Self {
            grid: *grid,
            values,
            support: Support::Full,
            hermitian: true,
        }
    }

    /// Wraps a matrix of nodal values. Entries outside `support` are zeroed;
    /// a full matrix is checked for symmetry to decide the hermitian flag.
    pub fn from_matrix(grid: &TimeGrid, support: Support, values: Matrix) -> Result<Self> {
        if values.rows() != grid.len() || values.cols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{}x{} values on a grid of {} nodes",
                values.rows(),
                values.cols(),
                grid.len()
            )));
        }
        let mut k = Self::from_fn(grid, support, |i, j| values[(i, j)]);
        k.hermitian = support == Support::Full && k.symmetry_defect() == 0.0;
        Ok(k)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.max_abs()
    }

    pub fn max_abs_diff(&self, other: &Kernel2D) -> f64 {
        self.values.max_abs_diff(&other.values)
    }

    /// `max |k(t_i,t_j) − k(t_j,t_i)|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.len();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// `k(s, t)`: swaps the support orientation.
    pub fn transpose(&self) -> Kernel2D {
        let support = match self.support {
            Support::Full => Support::Full,
            Support::Upper => Support::Lower,
            Support::Lower => Support::Upper,
        };
        Kernel2D {
            grid: self.grid,
            values: self.values.transpose(),
            support,
            hermitian: self.hermitian,
        }
    }

    /// `k(T − t, T − s)`.
    pub fn reflect(&self) -> Kernel2D {
        let n = self.grid.len();
        let support = match self.support {
            Support::Full => Support::Full,
            Support::Upper => Support::Lower,
            Support::Lower => Support::Upper,
        };
        Kernel2D {
            grid: self.grid,
            values: Matrix::from_fn(n, n, |i, j| self.get(n - 1 - i, n - 1 - j)),
            support,
            hermitian: self.hermitian,
        }
    }

    /// Leading `m × m` block as a kernel on the prefix grid.
    pub fn leading_block(&self, m: usize) -> Result<Kernel2D> {
        let grid = self.grid.prefix(m)?;
        Ok(Kernel2D {
            grid,
            values: Matrix::from_fn(m, m, |i, j| self.get(i, j)),
            support: self.support,
            hermitian: self.hermitian,
        })
    }

    /// Trailing `m × m` block (nodes `n−m..n`) as a kernel on `[0, t_{m−1}]`.
    pub fn trailing_block(&self, m: usize) -> Result<Kernel2D> {
        let grid = self.grid.prefix(m)?;
        let off = self.grid.len() - m;
        Ok(Kernel2D {
            grid,
            values: Matrix::from_fn(m, m, |i, j| self.get(i + off, j + off)),
            support: self.support,
            hermitian: self.hermitian,
        })
    }

    /// CSV `t,s,value`, row-major, restricted to the support triangle.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let n = self.grid.len();
        let rows = (0..n).flat_map(move |i| {
            (0..n)
                .filter(move |&j| self.support.contains(i, j))
                .map(move |j| vec![self.grid.node(i), self.grid.node(j), self.get(i, j)])
        });
        write_table(out, comments, &["t", "s", "value"], rows)
    }

    /// Reads `t,s,value` rows. The grid is inferred from the distinct `t`
    /// values; entries not listed are zero.
    pub fn read_csv<R: Read>(input: R, support: Support) -> Result<Kernel2D> {
        let (header, rows) = read_table(input)?;
        expect_header(&header, &["t", "s", "value"])?;
        let t_max = rows.iter().map(|r| r[0].max(r[1])).fold(0.0, f64::max);
        let mut ts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_max.max(1.0));
        let grid = TimeGrid::new(t_max, ts.len())?;
        let mut values = Matrix::zeros(grid.len(), grid.len());
        for r in &rows {
            let i = grid.index_of(r[0])?;
            let j = grid.index_of(r[1])?;
            values[(i, j)] = r[2];
        }
        Kernel2D::from_matrix(&grid, support, values)
    }
}

/// Nyström matrix of `I + K`: `M_ij = δ_ij + w_j k(t_i, t_j)`.
pub fn assemble_matrix(k: &Kernel2D, q: &Quadrature) -> Result<Matrix> {
    if !k.grid().same_as(q.grid()) {
        return Err(Error::GridMismatch(
            "kernel and quadrature live on different grids".into(),
        ));
    }
    let w = q.weights();
    let n = w.len();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let d = if i == j { 1.0 } else { 0.0 };
        d + w[j] * k.get(i, j)
    }))
}

/// `(Yf)(t) = f(T − t)`.
pub fn reverse_time(f: &[f64]) -> Vec<f64> {
    f.iter().rev().copied().collect()
}

/// `Θ^{ξ,T}`: zero on `[0, T−ξ)`, then `f` shifted right by `T − ξ`.
pub fn theta_embed(f: &[f64], source: &TimeGrid, target: &TimeGrid) -> Result<Vec<f64>> {
    source.check_len("control", f.len())?;
    let shift = delay_steps(source, target)?;
    let mut out = vec![0.0; target.len()];
    out[shift..].copy_from_slice(f);
    Ok(out)
}

/// `(Θ^{ξ,T})* g (t) = g(t + (T − ξ))` on `[0, ξ]`.
///
/// This is the exact quadrature adjoint of [`theta_embed`] on controls that
/// vanish at `t = 0`.
pub fn theta_adjoint(g: &[f64], source: &TimeGrid, target: &TimeGrid) -> Result<Vec<f64>> {
    target.check_len("function", g.len())?;
    let shift = delay_steps(source, target)?;
    Ok(g[shift..].to_vec())
}

fn delay_steps(source: &TimeGrid, target: &TimeGrid) -> Result<usize> {
    if !source.same_step(target) {
        return Err(Error::GridMismatch(format!(
            "steps differ: {} vs {}",
            source.step(),
            target.step()
        )));
    }
    if source.len() > target.len() {
        return Err(Error::Validation(format!(
            "sub-horizon {} exceeds horizon {}",
            source.horizon(),
            target.horizon()
        )));
    }
    target.offset_steps(source.horizon())
}
