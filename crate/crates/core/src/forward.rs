//! Forward problem: the boundary-controlled wave equation
//! `u_tt − u_xx + q(x)u = 0`, `u(·,0) = u_t(·,0) = 0`, `u(0,t) = f(t)`,
//! its progressing-wave kernel and the response function.
//!
//! With unit wave speed the solution is
//! `u(x,t) = f(t − x) + ∫_x^t w(x,s) f(t − s) ds`, where the Goursat kernel
//! `w` solves the same equation in `0 ≤ x ≤ t` with `w(0,t) = 0` and
//! `w(x,x) = −½∫_0^x q`. The response function is `r(t) = w_x(0,t)`, so that
//! `u_x(0,t) = −f'(t) + (r ∗ f)(t)`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Kernel2D, SpaceGrid, Support, TimeGrid};
use crate::io::{expect_header, read_table, write_table};
use crate::linalg::Matrix;
use crate::potential::{Control, Potential};

/// Extra space nodes beyond `x = T`. Nothing reaches them by `t = T`.
pub const SPACE_PADDING: usize = 10;

/// `u(x_i, t_j)` on a space grid × time grid with equal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    space: SpaceGrid,
    time: TimeGrid,
    /// rows: space index, columns: time index
    values: Matrix,
}

impl WaveField {
    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// `u(·, t_j)` over the whole space grid.
    pub fn state(&self, j: usize) -> Vec<f64> {
        (0..self.space.len()).map(|i| self.at(i, j)).collect()
    }

    /// `u(·, T)`.
    pub fn final_state(&self) -> Vec<f64> {
        self.state(self.time.len() - 1)
    }

    /// `u_x(0, t_j)` by the one-sided second-order stencil.
    pub fn boundary_flux(&self) -> Vec<f64> {
        let h = self.space.step();
        (0..self.time.len())
            .map(|j| (-3.0 * self.at(0, j) + 4.0 * self.at(1, j) - self.at(2, j)) / (2.0 * h))
            .collect()
    }

    /// `max |u(x_i, T)|` over `x_i > T`.
    pub fn energy_beyond_horizon(&self) -> f64 {
        let last = self.time.len() - 1;
        (self.time.len()..self.space.len())
            .map(|i| self.at(i, last).abs())
            .fold(0.0, f64::max)
    }

    /// CSV `x,t,u`, space-major.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let (nx, nt) = (self.space.len(), self.time.len());
        let rows = (0..nx).flat_map(move |i| {
            (0..nt).map(move |j| vec![self.space.node(i), self.time.node(j), self.at(i, j)])
        });
        write_table(out, comments, &["x", "t", "u"], rows)
    }
}

/// Solves the wave system on the default padded space grid.
pub fn solve_wave(q: &Potential, f: &Control) -> Result<WaveField> {
    let space = f.grid().extended(SPACE_PADDING);
    solve_wave_on(q, f, &space)
}

/// Explicit three-level scheme with unit Courant number:
/// `u_i^{j+1} = u_{i+1}^j + u_{i−1}^j − u_i^{j−1} − h² q_i u_i^j`.
/// Exact for `q = 0`; the potential term is second order.
pub fn solve_wave_on(q: &Potential, f: &Control, space: &SpaceGrid) -> Result<WaveField> {
    let time = *f.grid();
    if !space.same_step(&time) {
        return Err(Error::GridMismatch(format!(
            "space step {} differs from time step {}",
            space.step(),
            time.step()
        )));
    }
    if space.len() < time.len() + SPACE_PADDING {
        return Err(Error::Validation(format!(
            "space grid of {} nodes is shorter than the required {}",
            space.len(),
            time.len() + SPACE_PADDING
        )));
    }
    let (nx, nt) = (space.len(), time.len());
    let h2 = time.step() * time.step();
    let qs = q.samples(space);
    let fs = f.samples();

    let mut values = Matrix::zeros(nx, nt);
    let mut prev = vec![0.0; nx];
    let mut cur = vec![0.0; nx];
    cur[0] = fs[0];
    values[(0, 0)] = fs[0];
    let mut next = vec![0.0; nx];
    for j in 0..nt - 1 {
        if j == 0 {
            // u(x, h) = 0 for x ≥ h: zero initial data and f(0) = 0
            next.iter_mut().for_each(|v| *v = 0.0);
        } else {
            for i in 1..nx - 1 {
                next[i] = cur[i + 1] + cur[i - 1] - prev[i] - h2 * qs[i] * cur[i];
            }
            next[nx - 1] = 0.0;
        }
        next[0] = fs[j + 1];
        for (i, v) in next.iter().enumerate() {
            values[(i, j + 1)] = *v;
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(WaveField {
        space: *space,
        time,
        values,
    })
}

/// The Goursat kernel on the characteristic lattice `ξ = t − x`,
/// `η = t + x`, both with step `h`. The `(x, t)` grid nodes are the lattice
/// points with `ξ + η` an even multiple of `h`.
struct GoursatLattice {
    step: f64,
    /// `rows[a][b − a]` holds `w` at `ξ = a·h`, `η = b·h`
    rows: Vec<Vec<f64>>,
}

impl GoursatLattice {
    /// Marches the triangle `0 ≤ x ≤ t ≤ m·h`.
    fn march(q: &Potential, step: f64, m: usize) -> Self {
        let top = 2 * m;
        let half = 0.5 * step;

        // diagonal ξ = 0: w(x, x) = −½∫_0^x q, trapezoid at step h/2
        let mut diag = Vec::with_capacity(top + 1);
        let mut acc = 0.0;
        let mut q_prev = q.eval(0.0);
        diag.push(0.0);
        for k in 1..=top {
            let q_k = q.eval(k as f64 * half);
            acc += 0.5 * half * (q_prev + q_k);
            q_prev = q_k;
            diag.push(-0.5 * acc);
        }

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        rows.push(diag);
        let c = 0.25 * step * step;
        for a in 0..m {
            let below = &rows[a];
            // row a + 1 covers b ∈ [a + 1, top − a − 1]
            let len = top - 2 * a - 1;
            let mut row = Vec::with_capacity(len);
            row.push(0.0); // x = 0
            for b in a + 1..top - a - 1 {
                let west = row[b - a - 1]; // (a + 1, b)
                let east = below[b + 1 - a]; // (a, b + 1)
                let south = below[b - a]; // (a, b)
                let x_c = (b - a) as f64 * half;
                let w_c = 0.5 * (west + east);
                row.push(west + east - south - c * q.eval(x_c) * w_c);
            }
            debug_assert_eq!(row.len(), len);
            rows.push(row);
        }
        Self { step, rows }
    }

    /// `w(x_i, t_j)` for `i ≤ j`.
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        let a = j - i;
        self.rows[a][j + i - a]
    }
}

/// Goursat kernel `w(x_i, t_j)` on `0 ≤ x_i ≤ t_j ≤ T`, stored with
/// [`Support::Upper`] (`x` is the row index).
pub fn goursat_kernel(q: &Potential, grid: &TimeGrid) -> Result<Kernel2D> {
    if grid.len() < 5 {
        return Err(Error::Validation(format!(
            "Goursat kernel needs at least 5 nodes, got {}",
            grid.len()
        )));
    }
    let lattice = GoursatLattice::march(q, grid.step(), grid.len() - 1);
    Ok(Kernel2D::from_fn(grid, Support::Upper, |i, j| lattice.at(i, j)))
}

/// Response function `r(t_j)` sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFunction {
    grid: TimeGrid,
    samples: Vec<f64>,
}

impl ResponseFunction {
    pub fn new(grid: &TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "response has {} samples, grid has {}",
                samples.len(),
                grid.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite response sample {bad}")));
        }
        Ok(Self {
            grid: *grid,
            samples,
        })
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        Self {
            grid: *grid,
            samples: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Forward divided differences `Δ^k r(0)/h^k` for `k = 0..=order`.
    pub fn derivatives_at_zero(&self, order: usize) -> Vec<f64> {
        let h = self.grid.step();
        let mut diff: Vec<f64> = self.samples[..=order.min(self.samples.len() - 1)].to_vec();
        let mut out = Vec::with_capacity(order + 1);
        for k in 0..=order {
            out.push(diff[0] / h.powi(k as i32));
            diff = diff.windows(2).map(|w| w[1] - w[0]).collect();
            if diff.is_empty() {
                break;
            }
        }
        out
    }

    /// `(r ∗ f)(t_j) = ∫_0^{t_j} r(s) f(t_j − s) ds` by the trapezoid rule,
    /// on the grid of `f` (which must share the step and not be longer).
    pub fn convolve(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() > self.samples.len() {
            return Err(Error::Validation(format!(
                "convolution over {} nodes needs the response on as many, have {}",
                f.len(),
                self.samples.len()
            )));
        }
        let h = self.grid.step();
        let r = &self.samples;
        Ok((0..f.len())
            .map(|j| {
                if j == 0 {
                    return 0.0;
                }
                let mut s = 0.5 * (r[0] * f[j] + r[j] * f[0]);
                for k in 1..j {
                    s += r[k] * f[j - k];
                }
                h * s
            })
            .collect())
    }

    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let rows = (0..self.grid.len()).map(|j| vec![self.grid.node(j), self.samples[j]]);
        write_table(out, comments, &["t", "r"], rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let (header, rows) = read_table(input)?;
        expect_header(&header, &["t", "r"])?;
        let t_max = rows.last().map(|r| r[0]).unwrap_or(0.0);
        let grid = TimeGrid::new(t_max, rows.len())?;
        for (j, r) in rows.iter().enumerate() {
            if (r[0] - grid.node(j)).abs() > 1e-9 * t_max.max(1.0) {
                return Err(Error::Parse(format!(
                    "response row {j} at t = {} is off the uniform grid",
                    r[0]
                )));
            }
        }
        Self::new(&grid, rows.into_iter().map(|r| r[1]).collect())
    }
}

/// `r(t_j) = w_x(0, t_j)` on `grid` (typically `[0, 2T]`).
///
/// Uses `w(0,t) = 0` and `w_xx(0,t) = 0` (the equation at `x = 0`): the
/// three-point one-sided stencil where `2h ≤ t`, `w(h,h)/h` at `t = h`, and
/// the limit `−q(0)/2` at `t = 0`.
pub fn response_function(q: &Potential, grid: &TimeGrid) -> Result<ResponseFunction> {
    if grid.len() < 5 {
        return Err(Error::Validation(format!(
            "response needs at least 5 nodes, got {}",
            grid.len()
        )));
    }
    let h = grid.step();
    let lattice = GoursatLattice::march(q, h, grid.len() - 1);
    debug_assert_eq!(lattice.step, h);
    let samples = (0..grid.len())
        .map(|j| match j {
            0 => -0.5 * q.eval(0.0),
            1 => lattice.at(1, 1) / h,
            _ => (4.0 * lattice.at(1, j) - lattice.at(2, j)) / (2.0 * h),
        })
        .collect();
    ResponseFunction::new(grid, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::control_panel;

    fn plateau() -> Potential {
        Potential::plateau(1.0, 0.8, 0.2).unwrap()
    }

    #[test]
    fn zero_potential_translates_exactly() {
        let g = TimeGrid::new(2.0, 101).unwrap();
        let f = Control::bump(&g, 0.9, 0.5, 3.0).unwrap();
        let u = solve_wave(&Potential::zero(), &f).unwrap();
        for j in 0..g.len() {
            for i in 0..u.space().len() {
                // exact up to rounding in the three-term update
                let expected = if i <= j { f.samples()[j - i] } else { 0.0 };
                assert!((u.at(i, j) - expected).abs() <= 1e-14, "i={i} j={j}");
                if i > j {
                    assert_eq!(u.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn finite_propagation() {
        let g = TimeGrid::new(2.0, 121).unwrap();
        for q in [plateau(), Potential::flatexp(0.5).unwrap(), Potential::constant(4.0).unwrap()] {
            for f in control_panel(&g, 5) {
                let u = solve_wave(&q, &f).unwrap();
                for j in 0..g.len() {
                    for i in j + 1..u.space().len() {
                        assert_eq!(u.at(i, j), 0.0);
                    }
                }
                assert!(u.energy_beyond_horizon() <= 1e-12);
            }
        }
    }

    #[test]
    fn delayed_control_delays_wave() {
        let g = TimeGrid::new(2.0, 101).unwrap();
        let f = Control::bump(&g, 0.7, 0.4, 1.0).unwrap();
        let q = plateau();
        let u = solve_wave(&q, &f).unwrap();
        for s in [1, 7, 30] {
            let ud = solve_wave(&q, &f.delayed(s)).unwrap();
            for j in s..g.len() {
                for i in 0..u.space().len() {
                    assert_eq!(ud.at(i, j), u.at(i, j - s));
                }
            }
        }
    }

    #[test]
    fn linearity() {
        let g = TimeGrid::new(2.0, 81).unwrap();
        let panel = control_panel(&g, 2);
        let (f, h) = (&panel[0], &panel[1]);
        let q = plateau();
        let combo = f.combine(2.5, h, -0.75).unwrap();
        let (uf, uh, uc) = (
            solve_wave(&q, f).unwrap(),
            solve_wave(&q, h).unwrap(),
            solve_wave(&q, &combo).unwrap(),
        );
        for j in 0..g.len() {
            for i in 0..uf.space().len() {
                let lin = 2.5 * uf.at(i, j) - 0.75 * uh.at(i, j);
                assert!((uc.at(i, j) - lin).abs() <= 1e-13 * (1.0 + lin.abs()));
            }
        }
    }

    #[test]
    fn solve_wave_rejects_bad_grids() {
        let g = TimeGrid::new(1.0, 11).unwrap();
        let f = Control::bump(&g, 0.5, 0.3, 0.0).unwrap();
        let short = g.extended(3);
        assert!(matches!(solve_wave_on(&plateau(), &f, &short), Err(Error::Validation(_))));
        let other = TimeGrid::new(3.0, 40).unwrap();
        assert!(matches!(solve_wave_on(&plateau(), &f, &other), Err(Error::GridMismatch(_))));
    }

    /// max |u_{n} − u_{ref}| at the shared nodes, where `ref` is 4× finer.
    fn wave_error(n: usize) -> f64 {
        let q = plateau();
        let fine_n = 4 * (n - 1) + 1;
        let coarse = TimeGrid::new(2.0, n).unwrap();
        let fine = TimeGrid::new(2.0, fine_n).unwrap();
        let bump = |g: &TimeGrid| Control::bump(g, 0.9, 0.6, 2.0).unwrap();
        let uc = solve_wave(&q, &bump(&coarse)).unwrap();
        let uf = solve_wave(&q, &bump(&fine)).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                err = err.max((uc.at(i, j) - uf.at(4 * i, 4 * j)).abs());
            }
        }
        err
    }

    #[test]
    fn wave_solver_second_order() {
        let (e1, e2) = (wave_error(51), wave_error(101));
        let ratio = e1 / e2;
        assert!(ratio > 3.2 && ratio < 5.0, "ratio {ratio} ({e1:e}, {e2:e})");
    }

    #[test]
    fn goursat_zero_potential() {
        let g = TimeGrid::new(1.0, 21).unwrap();
        let w = goursat_kernel(&Potential::zero(), &g).unwrap();
        assert_eq!(w.max_abs(), 0.0);
        assert!(goursat_kernel(&Potential::zero(), &TimeGrid::new(1.0, 4).unwrap()).is_err());
    }

    #[test]
    fn goursat_boundary_data() {
        let q = Potential::flatexp(0.5).unwrap();
        let g = TimeGrid::new(2.0, 101).unwrap();
        let w = goursat_kernel(&q, &g).unwrap();
        // trapezoid at step h/2, as imposed
        let half = 0.5 * g.step();
        let mut acc = 0.0;
        for i in 0..g.len() {
            if i > 0 {
                for k in [2 * i - 2, 2 * i - 1] {
                    acc += 0.5 * half * (q.eval(k as f64 * half) + q.eval((k + 1) as f64 * half));
                }
            }
            assert!((w.get(i, i) + 0.5 * acc).abs() < 1e-12);
            assert_eq!(w.get(0, i), 0.0);
        }
        for i in 0..g.len() {
            for j in 0..i {
                assert_eq!(w.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn goursat_representation_matches_wave_solver() {
        let q = plateau();
        let errs: Vec<f64> = [101usize, 201]
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(2.0, n).unwrap();
                let f = Control::bump(&g, 1.0, 0.6, 2.0).unwrap();
                let u = solve_wave(&q, &f).unwrap();
                let w = goursat_kernel(&q, &g).unwrap();
                let fs = f.samples();
                let h = g.step();
                let mut err: f64 = 0.0;
                for j in 0..n {
                    for i in 0..=j {
                        // f(t − x) + ∫_x^t w(x, s) f(t − s) ds
                        let mut integral = 0.0;
                        if j > i {
                            integral = 0.5 * (w.get(i, i) * fs[j - i] + w.get(i, j) * fs[0]);
                            for k in i + 1..j {
                                integral += w.get(i, k) * fs[j - k];
                            }
                            integral *= h;
                        }
                        err = err.max((fs[j - i] + integral - u.at(i, j)).abs());
                    }
                }
                err
            })
            .collect();
        assert!(errs[0] < 5e-4, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn response_zero_potential() {
        let g = TimeGrid::new(4.0, 401).unwrap();
        let r = response_function(&Potential::zero(), &g).unwrap();
        assert!(r.max_abs() <= 1e-10);
    }

    #[test]
    fn response_flat_for_class_q() {
        for q in [plateau(), Potential::flatexp(0.5).unwrap()] {
            let g = TimeGrid::new(4.0, 401).unwrap();
            let r = response_function(&q, &g).unwrap();
            let scale = 1e-4 * r.max_abs().max(1.0);
            for d in r.derivatives_at_zero(2) {
                assert!(d.abs() <= scale, "{} {d}", q.name());
            }
        }
    }

    #[test]
    fn response_born_limit() {
        // weak potential: r(t) ≈ −q(t/2)/2
        let q = Potential::plateau(1e-4, 0.3, 0.4).unwrap();
        let g = TimeGrid::new(3.0, 301).unwrap();
        let r = response_function(&q, &g).unwrap();
        let scale = 0.5e-4;
        for j in 0..g.len() {
            let born = -0.5 * q.eval(0.5 * g.node(j));
            assert!((r.samples()[j] - born).abs() < 1e-3 * scale);
        }
    }

    /// u_x(0,·) against −f' + r ∗ f, with u from the FD solver and r from
    /// the Goursat kernel. The flux of the q = 0 solution stands in for −f'
    /// so that the stencil error in the flux cancels.
    fn flux_residual(n: usize) -> f64 {
        let q = Potential::flatexp(1.0).unwrap();
        let g = TimeGrid::new(3.0, n).unwrap();
        let f = Control::bump(&g, 1.0, 0.95, 0.0).unwrap();
        let flux = solve_wave(&q, &f).unwrap().boundary_flux();
        let free = solve_wave(&Potential::zero(), &f).unwrap().boundary_flux();
        let conv = response_function(&q, &g).unwrap().convolve(f.samples()).unwrap();
        (0..n)
            .map(|j| (flux[j] - free[j] - conv[j]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn response_convolution_oracle() {
        let (e1, e2) = (flux_residual(101), flux_residual(201));
        assert!(e1 < 1e-4, "{e1}");
        assert!(e1 / e2 > 3.0, "{e1:e} {e2:e}");
    }

    #[test]
    fn response_self_convergence() {
        let q = plateau();
        let sample = |n: usize| {
            let g = TimeGrid::new(4.0, n).unwrap();
            response_function(&q, &g).unwrap()
        };
        let (r1, r2, r4) = (sample(201), sample(401), sample(801));
        let e1 = (0..201).map(|j| (r1.samples()[j] - r2.samples()[2 * j]).abs()).fold(0.0, f64::max);
        let e2 = (0..401).map(|j| (r2.samples()[j] - r4.samples()[2 * j]).abs()).fold(0.0, f64::max);
        assert!(e1 / e2 > 3.0, "{e1:e} {e2:e}");
    }

    #[test]
    fn response_csv_round_trip() {
        let g = TimeGrid::new(1.0, 11).unwrap();
        let r = ResponseFunction::new(&g, g.sample(|t| (3.0 * t).sin() / 7.0)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf, &[]).unwrap();
        assert_eq!(ResponseFunction::read_csv(buf.as_slice()).unwrap(), r);
    }
}
