//! Triangular factorization `(Ĉ)^{-1} = (I + B)*(I + B)` with `I + B` a
//! Volterra operator, and its inverse `I + A = (I + B)^{-1}`.
//!
//! Kernels of left factors live on `s ≥ t` and act as
//! `((I + B)f)(t) = f(t) + ∫_t^T b(t,s) f(s) ds`. Their adjoints are right
//! factors on `s ≤ t`.
//!
//! Two independent discretizations produce `b`:
//! - [`factorize_krein_rows`] solves, for every prefix `[0, ξ_m]`, the
//!   second-kind system `γ + ∫_0^{ξ_m} γ(p) k̂(p,·) dp = −k̂(ξ_m, ·)`.
//!   Then `b(t, ξ_m) = γ(t)`.
//! - [`factorize_cholesky`] factors the inverse of the symmetrized Nyström
//!   matrix as `U D Uᵀ` and reads both kernels off the triangular factors.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connect::symmetrized;
use crate::error::{Error, Result};
use crate::grid::{Kernel2D, Quadrature, Support, TimeGrid};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// kernel on `s ≥ t`
    Left,
    /// kernel on `s ≤ t`
    Right,
}

impl Direction {
    fn support(self) -> Support {
        match self {
            Direction::Left => Support::Upper,
            Direction::Right => Support::Lower,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// The kernel of `V` in a Volterra operator `I + V`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraFactor {
    direction: Direction,
    kernel: Kernel2D,
}

impl VolterraFactor {
    pub fn new(direction: Direction, kernel: Kernel2D) -> Result<Self> {
        if kernel.support() != direction.support() {
            return Err(Error::Validation(format!(
                "{} factor needs a {:?} kernel, got {:?}",
                direction.tag(),
                direction.support(),
                kernel.support()
            )));
        }
        Ok(Self { direction, kernel })
    }

    pub fn zeros(grid: &TimeGrid, direction: Direction) -> Self {
        Self {
            direction,
            kernel: Kernel2D::zeros(grid, direction.support()),
        }
    }

    fn from_fn(grid: &TimeGrid, direction: Direction, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            direction,
            kernel: Kernel2D::from_fn(grid, direction.support(), f),
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn kernel(&self) -> &Kernel2D {
        &self.kernel
    }

    pub fn grid(&self) -> &TimeGrid {
        self.kernel.grid()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.kernel.get(i, j)
    }

    /// `β(t_i) = kernel(t_i, t_i)`.
    pub fn diagonal(&self) -> Vec<f64> {
        self.kernel.diagonal()
    }

    /// The kernel of `V*`, which has the opposite direction.
    pub fn adjoint(&self) -> Self {
        let direction = match self.direction {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        };
        Self {
            direction,
            kernel: self.kernel.transpose(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.kernel.max_abs()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.kernel.max_abs_diff(&other.kernel)
    }

    /// Triangle CSV `t,s,value` with a `direction=` comment line.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut all = comments.to_vec();
        all.push(format!("direction={}", self.direction.tag()));
        self.kernel.write_csv(out, &all)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(input)
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<factor>", e))?;
        let mut direction = None;
        for line in text.as_bytes().lines() {
            let line = line.map_err(|e| Error::io("<factor>", e))?;
            let Some(c) = line.strip_prefix('#') else { break };
            match c.trim() {
                "direction=left" => direction = Some(Direction::Left),
                "direction=right" => direction = Some(Direction::Right),
                _ => {}
            }
        }
        let direction =
            direction.ok_or_else(|| Error::Parse("factor file lacks a direction= comment".into()))?;
        let kernel = Kernel2D::read_csv(text.as_bytes(), direction.support())?;
        Self::new(direction, kernel)
    }
}

/// Pivot diagnostics of [`factorize_cholesky`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CholeskyReport {
    /// `max_i |D_ii − 1|`; `O(h)`.
    pub max_pivot_deviation: f64,
    pub min_pivot: f64,
}

fn check_hat(khat: &Kernel2D) -> Result<()> {
    if khat.support() != Support::Full || khat.symmetry_defect() > 0.0 {
        return Err(Error::Validation("k̂ must be a hermitian kernel".into()));
    }
    Ok(())
}

fn condition_violated(e: Error, what: &str) -> Error {
    match e {
        Error::NotPositiveDefinite { index, pivot, .. } => Error::NotPositiveDefinite {
            what: what.into(),
            index,
            pivot,
        },
        other => other,
    }
}

/// Reads a left kernel `v` off the Nyström matrix `X` of `I + V`
/// (columns) or of its inverse (rows), accounting for the half weight that
/// the trapezoid rule gives the diagonal of a Volterra integral.
///
/// With `w` the full-interval weights and `ω` the effective weight on the
/// diagonal, `X_jj² = 1 + w_j v_jj (1 + ω_j v_jj)` and the off-diagonal
/// entries carry a factor `X_jj / (1 + ω_j v_jj)`.
fn diagonal_root(x_jj: f64, w: f64, omega: f64) -> f64 {
    let c = (x_jj * x_jj - 1.0) / w;
    2.0 * c / (1.0 + (1.0 + 4.0 * omega * c).sqrt())
}

/// Factors `(Ĉ)^{-1}` through a Cholesky factorization and returns the
/// left kernels `b` of `I + B` and `a` of `(I + B)^{-1} − I`.
pub fn factorize_cholesky(khat: &Kernel2D) -> Result<(VolterraFactor, VolterraFactor, CholeskyReport)> {
    check_hat(khat)?;
    let grid = *khat.grid();
    let n = grid.len();
    let h = grid.step();
    let quad = Quadrature::trapezoid(&grid);
    let w = quad.weights();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();

    let s = symmetrized(khat, &quad);
    let s_inv = s
        .cholesky()
        .map_err(|e| condition_violated(e, "reflected connecting operator"))?
        .inverse();
    let (u, d) = s_inv
        .udu()
        .map_err(|e| condition_violated(e, "inverse of the reflected connecting operator"))?;

    // P = W^{-1/2} U D^{1/2} W^{1/2}: Nyström matrix of I + B
    let sd: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let p = Matrix::from_fn(n, n, |i, j| {
        if j < i {
            0.0
        } else {
            u[(i, j)] * sd[j] * sw[j] / sw[i]
        }
    });
    let pinv = p.upper_triangular_inverse();

    let omega_b = |j: usize| if j + 1 < n { 0.5 * h } else { 0.0 };
    let b_diag: Vec<f64> = (0..n).map(|j| diagonal_root(p[(j, j)], w[j], omega_b(j))).collect();
    let b = VolterraFactor::from_fn(&grid, Direction::Left, |i, j| {
        if i == j {
            b_diag[j]
        } else {
            p[(i, j)] * p[(j, j)] / (w[j] * (1.0 + omega_b(j) * b_diag[j]))
        }
    });

    let omega_a = |i: usize| if i > 0 { 0.5 * h } else { 0.0 };
    let a_diag: Vec<f64> = (0..n).map(|i| diagonal_root(pinv[(i, i)], w[i], omega_a(i))).collect();
    let a = VolterraFactor::from_fn(&grid, Direction::Left, |i, j| {
        if i == j {
            a_diag[i]
        } else {
            pinv[(i, j)] * pinv[(i, i)] / (w[j] * (1.0 + omega_a(i) * a_diag[i]))
        }
    });

    let report = CholeskyReport {
        max_pivot_deviation: d.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
        min_pivot: d.iter().copied().fold(f64::INFINITY, f64::min),
    };
    Ok((b, a, report))
}

/// Solves the prefix system for `ξ_m`; returns `γ(t_0..=t_m)`.
fn krein_row(khat: &Kernel2D, m: usize, h: f64) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(vec![-khat.get(0, 0)]);
    }
    let len = m + 1;
    let sw: Vec<f64> = (0..len)
        .map(|i| if i == 0 || i == m { 0.5 * h } else { h }.sqrt())
        .collect();
    let s = Matrix::from_fn(len, len, |i, j| {
        let d = if i == j { 1.0 } else { 0.0 };
        d + sw[i] * khat.get(i, j) * sw[j]
    });
    let chol = s.cholesky().map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot, .. } => Error::NotPositiveDefinite {
            what: format!("prefix system on [0, {}]", m as f64 * h),
            index,
            pivot,
        },
        other => other,
    })?;
    let rhs: Vec<f64> = (0..len).map(|i| -sw[i] * khat.get(m, i)).collect();
    Ok(chol.solve(&rhs).iter().zip(&sw).map(|(y, s)| y / s).collect())
}

/// The left kernel `b(t, ξ_m) = γ_m(t)`, `t ≤ ξ_m`, one prefix system per
/// node. Rows are independent and solved in parallel.
pub fn factorize_krein_rows(khat: &Kernel2D) -> Result<VolterraFactor> {
    check_hat(khat)?;
    let grid = *khat.grid();
    let h = grid.step();
    let cols: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|m| krein_row(khat, m, h))
        .collect::<Result<_>>()?;
    Ok(VolterraFactor::from_fn(&grid, Direction::Left, |i, j| cols[j][i]))
}

/// `(a ⋆ b)(t_i, t_j) = ∫_{t_i}^{t_j} a(t_i,p) b(p,t_j) dp` for left
/// kernels, by the trapezoid rule on the nodes between `i` and `j`.
pub fn compose(a: &VolterraFactor, b: &VolterraFactor) -> Result<VolterraFactor> {
    if a.direction() != Direction::Left || b.direction() != Direction::Left {
        return Err(Error::Validation("compose expects left factors".into()));
    }
    if !a.grid().same_as(b.grid()) {
        return Err(Error::GridMismatch("factors live on different grids".into()));
    }
    let grid = *a.grid();
    let h = grid.step();
    let n = grid.len();
    let bt = b.kernel().values().transpose();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ar = &a.kernel().values().row(i)[i..];
            (i..n)
                .map(|j| {
                    if j == i {
                        return 0.0;
                    }
                    let bc = &bt.row(j)[i..=j];
                    let inner: f64 = ar[1..j - i].iter().zip(&bc[1..j - i]).map(|(x, y)| x * y).sum();
                    h * (inner + 0.5 * (ar[0] * bc[0] + ar[j - i] * bc[j - i]))
                })
                .collect()
        })
        .collect();
    Ok(VolterraFactor::from_fn(&grid, Direction::Left, |i, j| rows[i][j - i]))
}

/// Partial sum `−B + B² − ⋯ ± B^m` of the inverse series, as
/// `a_1 = −b`, `a_{k+1} = −b − a_k ⋆ b`.
pub fn neumann_series(b: &VolterraFactor, m: usize) -> Result<VolterraFactor> {
    if m == 0 {
        return Err(Error::Validation("series order must be at least 1".into()));
    }
    let neg_b = VolterraFactor::from_fn(b.grid(), b.direction(), |i, j| -b.get(i, j));
    let mut a = neg_b.clone();
    for _ in 1..m {
        let ab = compose(&a, b)?;
        a = VolterraFactor::from_fn(b.grid(), b.direction(), |i, j| neg_b.get(i, j) - ab.get(i, j));
    }
    Ok(a)
}

/// The exact discrete solution of `a + b + a ⋆ b = 0`, solved along each
/// row of the triangle. The limit of [`neumann_series`].
pub fn resolvent(b: &VolterraFactor) -> Result<VolterraFactor> {
    if b.direction() != Direction::Left {
        return Err(Error::Validation("resolvent expects a left factor".into()));
    }
    let grid = *b.grid();
    let n = grid.len();
    let h = grid.step();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![-b.get(i, i)];
            for j in i + 1..n {
                let mut s = 0.5 * row[0] * b.get(i, j);
                for p in i + 1..j {
                    s += row[p - i] * b.get(p, j);
                }
                row.push(-(b.get(i, j) + h * s) / (1.0 + 0.5 * h * b.get(j, j)));
            }
            row
        })
        .collect();
    Ok(VolterraFactor::from_fn(&grid, Direction::Left, |i, j| rows[i][j - i]))
}

/// `max |a + b + a ⋆ b|` over the triangle: the kernel of
/// `(I + A)(I + B) − I`.
pub fn product_identity_residual(a: &VolterraFactor, b: &VolterraFactor) -> Result<f64> {
    let ab = compose(a, b)?;
    let n = a.grid().len();
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            m = m.max((a.get(i, j) + b.get(i, j) + ab.get(i, j)).abs());
        }
    }
    Ok(m)
}

/// `max |a(t,t) + b(t,t)|`.
pub fn diagonal_identity_residual(a: &VolterraFactor, b: &VolterraFactor) -> f64 {
    a.diagonal()
        .iter()
        .zip(b.diagonal())
        .map(|(x, y)| (x + y).abs())
        .fold(0.0, f64::max)
}

/// Kernel of `(I + A)*(I + A) − I`:
/// `a(t,s) + ∫_0^t a(p,t) a(p,s) dp` for `t ≤ s`, mirrored.
pub fn reconstruct_hat(a: &VolterraFactor) -> Result<Kernel2D> {
    if a.direction() != Direction::Left {
        return Err(Error::Validation("reconstruction expects a left factor".into()));
    }
    let grid = *a.grid();
    let n = grid.len();
    let h = grid.step();
    let at = a.kernel().values().transpose();
    Ok(Kernel2D::hermitian_from_fn(&grid, |j, i| {
        // i ≤ j
        let (ci, cj) = (&at.row(i)[..=i], &at.row(j)[..=i]);
        let integral = if i == 0 {
            0.0
        } else {
            let inner: f64 = ci[1..i].iter().zip(&cj[1..i]).map(|(x, y)| x * y).sum();
            h * (inner + 0.5 * (ci[0] * cj[0] + ci[i] * cj[i]))
        };
        debug_assert!(j < n);
        a.get(i, j) + integral
    }))
}

/// `max |(I + A)*(I + A) − I − K̂|` in kernel form.
pub fn reconstruction_residual(a: &VolterraFactor, khat: &Kernel2D) -> Result<f64> {
    if !a.grid().same_as(khat.grid()) {
        return Err(Error::GridMismatch("factor and k̂ live on different grids".into()));
    }
    Ok(reconstruct_hat(a)?.max_abs_diff(khat))
}
