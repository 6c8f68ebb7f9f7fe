//! The scalarized connecting operator `C^T = I + K^T` on `L₂(0, T)`.
//!
//! Two independent routes: the response route assembles the kernel
//! `k^T(t,s) = p(2T − t − s) − p(|t − s|)`, `p = ½∫r`; the Gram route
//! evaluates `(C^T f, g) = (u^f(·,T), u^g(·,T))` from wave solutions.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{solve_wave, ResponseFunction};
use crate::grid::{assemble_matrix, cumulative_trapezoid, Kernel2D, Quadrature, Support, TimeGrid};
use crate::linalg::Matrix;
use crate::potential::{Control, Potential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gram,
    Response,
    /// Read from an external kernel file.
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectingOperator {
    grid: TimeGrid,
    kernel: Kernel2D,
    matrix: Matrix,
    provenance: Provenance,
}

impl ConnectingOperator {
    /// Wraps a hermitian kernel. Fails unless the Nyström matrix of `I + K`
    /// is positive definite in the quadrature inner product.
    pub fn new(kernel: Kernel2D, provenance: Provenance) -> Result<Self> {
        if kernel.support() != Support::Full || kernel.symmetry_defect() > 0.0 {
            return Err(Error::Validation(
                "connecting operator kernel must be hermitian".into(),
            ));
        }
        let grid = *kernel.grid();
        let quad = Quadrature::trapezoid(&grid);
        let matrix = assemble_matrix(&kernel, &quad)?;
        symmetrized(&kernel, &quad)
            .cholesky()
            .map_err(|e| match e {
                Error::NotPositiveDefinite { index, pivot, .. } => Error::NotPositiveDefinite {
                    what: "connecting operator I + K".into(),
                    index,
                    pivot,
                },
                other => other,
            })?;
        Ok(Self {
            grid,
            kernel,
            matrix,
            provenance,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn kernel(&self) -> &Kernel2D {
        &self.kernel
    }

    /// Nyström matrix of `I + K^T`.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `⟨(I + K)f, g⟩` in the trapezoid inner product.
    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        if f.len() != self.grid.len() || g.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "bilinear form on {} nodes applied to {} and {} samples",
                self.grid.len(),
                f.len(),
                g.len()
            )));
        }
        let mf = self.matrix.matvec(f);
        Ok(Quadrature::trapezoid(&self.grid).inner(&mf, g))
    }

    /// Estimate of the jump of `∂_t k` across the diagonal: the largest
    /// difference between second-order one-sided derivatives taken from
    /// either side of `t = s`. `O(h²)` for a smooth kernel, `O(1)` when
    /// `r(0) ≠ 0`.
    pub fn diagonal_jump(&self) -> f64 {
        let k = &self.kernel;
        let n = self.grid.len();
        let h = self.grid.step();
        (2..n - 2)
            .map(|i| {
                let above = (-3.0 * k.get(i, i) + 4.0 * k.get(i + 1, i) - k.get(i + 2, i)) / (2.0 * h);
                let below = (3.0 * k.get(i, i) - 4.0 * k.get(i - 1, i) + k.get(i - 2, i)) / (2.0 * h);
                (above - below).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_document(&self, comments: &[String]) -> Result<ConnectingOperatorDocument> {
        let mut csv = Vec::new();
        self.kernel.write_csv(&mut csv, comments)?;
        Ok(ConnectingOperatorDocument {
            horizon: self.grid.horizon(),
            nodes: self.grid.len(),
            provenance: self.provenance,
            kernel_csv: String::from_utf8(csv).expect("csv is utf-8"),
        })
    }

    pub fn write_json<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.to_document(comments)?)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let doc: ConnectingOperatorDocument = serde_json::from_reader(input)?;
        doc.into_operator()
    }
}

/// JSON form: metadata plus the kernel as embedded `t,s,value` CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectingOperatorDocument {
    pub horizon: f64,
    pub nodes: usize,
    pub provenance: Provenance,
    pub kernel_csv: String,
}

impl ConnectingOperatorDocument {
    pub fn into_operator(self) -> Result<ConnectingOperator> {
        let kernel = Kernel2D::read_csv(self.kernel_csv.as_bytes(), Support::Full)?;
        let g = kernel.grid();
        if g.len() != self.nodes || (g.horizon() - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Parse(format!(
                "metadata (T={}, n={}) disagrees with kernel grid (T={}, n={})",
                self.horizon,
                self.nodes,
                g.horizon(),
                g.len()
            )));
        }
        ConnectingOperator::new(kernel, self.provenance)
    }
}

/// `W^{1/2}(I + K)W^{-1/2} = I + W^{1/2} K W^{1/2}`: symmetric form of the
/// Nyström matrix.
pub(crate) fn symmetrized(kernel: &Kernel2D, quad: &Quadrature) -> Matrix {
    let sw: Vec<f64> = quad.weights().iter().map(|w| w.sqrt()).collect();
    let n = sw.len();
    Matrix::from_fn(n, n, |i, j| {
        let d = if i == j { 1.0 } else { 0.0 };
        d + sw[i] * kernel.get(i, j) * sw[j]
    })
}

/// Connecting operator on `grid = [0, T]` from the response on `[0, ≥2T]`.
pub fn assemble_from_response(r: &ResponseFunction, grid: &TimeGrid) -> Result<ConnectingOperator> {
    if !r.grid().same_step(grid) {
        return Err(Error::GridMismatch(format!(
            "response step {} differs from grid step {}",
            r.grid().step(),
            grid.step()
        )));
    }
    let n = grid.len();
    let needed = 2 * n - 1;
    if r.grid().len() < needed {
        return Err(Error::Validation(format!(
            "response known on [0, {}], connecting operator on [0, {}] needs [0, {}]",
            r.grid().horizon(),
            grid.horizon(),
            2.0 * grid.horizon()
        )));
    }
    let p: Vec<f64> = cumulative_trapezoid(&r.samples()[..needed], grid.step())
        .into_iter()
        .map(|v| 0.5 * v)
        .collect();
    let top = 2 * (n - 1);
    let kernel = Kernel2D::hermitian_from_fn(grid, |i, j| p[top - i - j] - p[i - j]);
    ConnectingOperator::new(kernel, Provenance::Response)
}

/// `(u^f(·,T), u^g(·,T))` over `[0, T]` by the trapezoid rule.
pub fn gram_form(q: &Potential, f: &Control, g: &Control) -> Result<f64> {
    let uf = wave_at_horizon(q, f)?;
    let ug = wave_at_horizon(q, g)?;
    Ok(Quadrature::trapezoid(f.grid()).inner(&uf, &ug))
}

/// `u^f(x_i, T)` for `x_i ∈ [0, T]`.
pub fn wave_at_horizon(q: &Potential, f: &Control) -> Result<Vec<f64>> {
    let u = solve_wave(q, f)?;
    let mut state = u.final_state();
    state.truncate(f.grid().len());
    Ok(state)
}

/// `k̂^T(t, s) = k^T(T − t, T − s)`, the kernel of `Y C^T Y`.
pub fn hat_kernel(c: &ConnectingOperator) -> Kernel2D {
    c.kernel().reflect()
}

/// `C^ξ = Θ* C^T Θ`: kernel `k^ξ(t,s) = k^T(t + T − ξ, s + T − ξ)`.
pub fn restrict(c: &ConnectingOperator, xi: f64) -> Result<ConnectingOperator> {
    let shift = c.grid().offset_steps(xi)?;
    let m = c.grid().len() - shift;
    let kernel = c.kernel().trailing_block(m)?;
    ConnectingOperator::new(kernel, c.provenance())
}

/// Gram-route vs response-route bilinear forms on a panel of control pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteAgreement {
    pub pairs: Vec<PairAgreement>,
    /// max over pairs of `|G − R| / sqrt(G(f,f)·G(g,g))`
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub first: usize,
    pub second: usize,
    pub gram: f64,
    pub response: f64,
    pub relative_error: f64,
}

/// Compares both routes on pairs `(controls[2k], controls[2k+1])`.
pub fn route_agreement(q: &Potential, c: &ConnectingOperator, controls: &[Control]) -> Result<RouteAgreement> {
    let quad = Quadrature::trapezoid(c.grid());
    let waves: Vec<Vec<f64>> = controls
        .par_iter()
        .map(|f| wave_at_horizon(q, f))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for k in 0..controls.len() / 2 {
        let (a, b) = (2 * k, 2 * k + 1);
        let gram = quad.inner(&waves[a], &waves[b]);
        let scale = (quad.inner(&waves[a], &waves[a]) * quad.inner(&waves[b], &waves[b])).sqrt();
        let response = c.bilinear(controls[a].samples(), controls[b].samples())?;
        pairs.push(PairAgreement {
            first: a,
            second: b,
            gram,
            response,
            relative_error: (gram - response).abs() / scale,
        });
    }
    let max_relative_error = pairs.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(RouteAgreement {
        pairs,
        max_relative_error,
    })
}
