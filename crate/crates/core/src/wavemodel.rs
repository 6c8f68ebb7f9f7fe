//! The defect element `ε` (the decaying solution of `−ε'' + qε = 0`), the
//! eikonal `E` (multiplication by `x`), the transform `U_E y = y/ε` onto
//! `L₂(|ε|² dx)`, and the wave model `(1/ε)(−D² + q)ε`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Quadrature, SpaceGrid};
use crate::io::write_table;
use crate::potential::Potential;

/// `ε` normalized to unit `L₂(0, X)` norm, with `ε'` and the measure
/// weights `μ_i = ε_i² w_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectElement {
    grid: SpaceGrid,
    eps: Vec<f64>,
    deps: Vec<f64>,
    mu: Vec<f64>,
}

/// One RK4 step of `(ε, ε')' = (ε', qε)` with step `dx` (negative when
/// marching backward).
fn rk4_step(q: &Potential, x: f64, y: [f64; 2], dx: f64) -> [f64; 2] {
    let f = |x: f64, y: [f64; 2]| [y[1], q.eval(x) * y[0]];
    let k1 = f(x, y);
    let k2 = f(x + 0.5 * dx, [y[0] + 0.5 * dx * k1[0], y[1] + 0.5 * dx * k1[1]]);
    let k3 = f(x + 0.5 * dx, [y[0] + 0.5 * dx * k2[0], y[1] + 0.5 * dx * k2[1]]);
    let k4 = f(x + dx, [y[0] + dx * k3[0], y[1] + dx * k3[1]]);
    [
        y[0] + dx / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + dx / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates backward from `X = grid.horizon()` with the WKB seed
/// `ε(X) = e^{−√q(X) X}`, `ε'(X) = −√q(X) ε(X)`.
pub fn defect_element(q: &Potential, grid: &SpaceGrid) -> Result<DefectElement> {
    let n = grid.len();
    let x_end = grid.horizon();
    let tail = grid.nodes().into_iter().filter(|&x| x >= 0.9 * x_end);
    let q_min = tail.map(|x| q.eval(x)).fold(f64::INFINITY, f64::min);
    if !(q_min > 0.0) {
        return Err(Error::NoDecayingSolution(format!(
            "cannot select decaying solution: q is not positive near X = {x_end} (min {q_min})"
        )));
    }
    let k = q.eval(x_end).sqrt();
    let seed = (-k * x_end).exp();
    if seed == 0.0 {
        return Err(Error::Validation(format!(
            "seed e^(-{k}·{x_end}) underflows; shorten the interval"
        )));
    }

    let h = grid.step();
    let mut eps = vec![0.0; n];
    let mut deps = vec![0.0; n];
    let mut y = [seed, -k * seed];
    eps[n - 1] = y[0];
    deps[n - 1] = y[1];
    for i in (0..n - 1).rev() {
        y = rk4_step(q, grid.node(i + 1), y, -h);
        eps[i] = y[0];
        deps[i] = y[1];
    }

    let quad = Quadrature::trapezoid(grid);
    let norm = quad.norm(&eps);
    eps.iter_mut().for_each(|v| *v /= norm);
    deps.iter_mut().for_each(|v| *v /= norm);

    let peak = eps.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if eps[n - 1].abs() > 1e-6 * peak {
        return Err(Error::NoDecayingSolution(format!(
            "ε(X) = {:e} has not decayed below 1e-6 of its peak {peak:e}; enlarge X",
            eps[n - 1]
        )));
    }
    let mu = eps.iter().zip(quad.weights()).map(|(e, w)| e * e * w).collect();
    Ok(DefectElement {
        grid: *grid,
        eps,
        deps,
        mu,
    })
}

impl DefectElement {
    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn deps(&self) -> &[f64] {
        &self.deps
    }

    /// `μ_i = ε_i² w_i`.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Errors at the first node where `ε` vanishes.
    pub fn check_nonvanishing(&self) -> Result<()> {
        match self.eps.iter().position(|e| e.abs() < f64::MIN_POSITIVE) {
            Some(index) => Err(Error::VanishingDefect {
                index,
                x: self.grid.node(index),
            }),
            None => Ok(()),
        }
    }

    /// `max_i |−D²ε + qε|_i / max |ε|` over interior nodes.
    pub fn residual(&self, q: &Potential) -> f64 {
        let h2 = self.grid.step().powi(2);
        let e = &self.eps;
        let peak = e.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (1..e.len() - 1)
            .map(|i| (-(e[i + 1] - 2.0 * e[i] + e[i - 1]) / h2 + q.eval(self.grid.node(i)) * e[i]).abs())
            .fold(0.0, f64::max)
            / peak
    }

    /// `⟨y, z⟩` in `L₂(dμ)`.
    pub fn inner_mu(&self, y: &[f64], z: &[f64]) -> f64 {
        self.mu.iter().zip(y).zip(z).map(|((m, a), b)| m * a * b).sum()
    }

    /// CSV `x,eps,deps,mu_weight`.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let rows = (0..self.grid.len()).map(|i| vec![self.grid.node(i), self.eps[i], self.deps[i], self.mu[i]]);
        write_table(out, comments, &["x", "eps", "deps", "mu_weight"], rows)
    }
}

/// `(E y)(x) = x y(x)`.
pub fn eikonal_apply(y: &[f64], grid: &SpaceGrid) -> Result<Vec<f64>> {
    check_len(y, grid)?;
    Ok(y.iter().enumerate().map(|(i, v)| grid.node(i) * v).collect())
}

/// `P^t y = χ_{[0,t]} y`.
pub fn cut(y: &[f64], grid: &SpaceGrid, t: f64) -> Result<Vec<f64>> {
    check_len(y, grid)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, v)| if grid.node(i) <= t { *v } else { 0.0 })
        .collect())
}

/// `U_E y = y / ε`.
pub fn u_transform(y: &[f64], eps: &DefectElement) -> Result<Vec<f64>> {
    check_len(y, eps.grid())?;
    eps.check_nonvanishing()?;
    Ok(y.iter().zip(&eps.eps).map(|(a, e)| a / e).collect())
}

/// `U_E* ỹ = ε ỹ`.
pub fn u_transform_inverse(y: &[f64], eps: &DefectElement) -> Result<Vec<f64>> {
    check_len(y, eps.grid())?;
    Ok(y.iter().zip(&eps.eps).map(|(a, e)| a * e).collect())
}

/// `S₀ʷφ` on the interior nodes `1..n−1`, by two routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveModelImage {
    /// `(1/ε)(−D² + q)(εφ)`
    pub conjugated: Vec<f64>,
    /// `−φ'' − 2(ε'/ε)φ'`
    pub reduced: Vec<f64>,
}

impl WaveModelImage {
    pub fn max_discrepancy(&self) -> f64 {
        self.conjugated
            .iter()
            .zip(&self.reduced)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn wave_model_apply(phi: &[f64], q: &Potential, eps: &DefectElement) -> Result<WaveModelImage> {
    let grid = eps.grid();
    check_len(phi, grid)?;
    eps.check_nonvanishing()?;
    let n = grid.len();
    let h = grid.step();
    let h2 = h * h;
    let e = &eps.eps;
    let ep: Vec<f64> = e.iter().zip(phi).map(|(a, b)| a * b).collect();
    let mut conjugated = Vec::with_capacity(n - 2);
    let mut reduced = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let lap = (ep[i + 1] - 2.0 * ep[i] + ep[i - 1]) / h2;
        conjugated.push((-lap + q.eval(grid.node(i)) * ep[i]) / e[i]);
        let d2 = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / h2;
        let d1 = (phi[i + 1] - phi[i - 1]) / (2.0 * h);
        reduced.push(-d2 - 2.0 * eps.deps[i] / e[i] * d1);
    }
    Ok(WaveModelImage { conjugated, reduced })
}

fn check_len(y: &[f64], grid: &SpaceGrid) -> Result<()> {
    if y.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} samples on a grid of {} nodes",
            y.len(),
            grid.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use rand::{Rng, SeedableRng};

    fn plateau() -> Potential {
        Potential::plateau(1.0, 0.8, 0.2).unwrap()
    }

    #[test]
    fn constant_potential_is_exponential() {
        let c = 1.0;
        let g = TimeGrid::new(20.0, 2001).unwrap();
        let d = defect_element(&Potential::constant(c).unwrap(), &g).unwrap();
        let k = c.sqrt();
        for i in (0..2001).step_by(50) {
            let exact = (-k * g.node(i)).exp() * d.eps()[0];
            assert!((d.eps()[i] - exact).abs() <= 1e-8 * exact.abs(), "{i}");
            assert!((d.deps()[i] + k * d.eps()[i]).abs() <= 1e-8 * exact.abs() * k);
        }
        let norm: f64 = Quadrature::trapezoid(&g).norm(d.eps());
        assert!((norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_potential_rejected() {
        let g = TimeGrid::new(20.0, 201).unwrap();
        let e = defect_element(&Potential::zero(), &g).unwrap_err();
        assert!(matches!(e, Error::NoDecayingSolution(_)) && e.is_numerical());
    }

    #[test]
    fn short_interval_fails_decay_check() {
        let g = TimeGrid::new(3.0, 301).unwrap();
        assert!(matches!(
            defect_element(&plateau(), &g),
            Err(Error::NoDecayingSolution(_))
        ));
    }

    /// Forward shooting: bisection on `s = ε'(0)/ε(0)`; the decaying
    /// solution separates those that blow up positive from those that
    /// change sign.
    fn shooting(q: &Potential, x_probe: f64, h: f64) -> Vec<f64> {
        let steps = (x_probe / h).round() as usize;
        let run = |s: f64, keep: bool| {
            let mut y = [1.0, s];
            let mut out = vec![1.0];
            for i in 0..steps {
                y = rk4_step(q, i as f64 * h, y, h);
                if keep {
                    out.push(y[0]);
                }
                if y[0] < 0.0 {
                    return (false, out);
                }
                if y[0] > 1e6 {
                    return (true, out);
                }
            }
            (y[1] > 0.0, out)
        };
        let (mut lo, mut hi) = (-10.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if run(mid, false).0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        run(0.5 * (lo + hi), true).1
    }

    #[test]
    fn matches_shooting_oracle() {
        let q = plateau();
        let g = TimeGrid::new(24.0, 4801).unwrap();
        let d = defect_element(&q, &g).unwrap();
        let shot = shooting(&q, 14.0, g.step());
        for i in 0..=1000 {
            let ours = d.eps()[i] / d.eps()[0];
            assert!((ours - shot[i]).abs() <= 1e-6 * ours.abs(), "x={} {ours} {}", g.node(i), shot[i]);
        }
    }

    #[test]
    fn plateau_defect_certificates() {
        let q = plateau();
        let res: Vec<f64> = [1001, 2001]
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(20.0, n).unwrap();
                let d = defect_element(&q, &g).unwrap();
                assert!(d.eps().iter().all(|e| *e > 0.0));
                assert!(d.eps()[n - 1] <= 1e-6 * d.eps()[0]);
                d.residual(&q)
            })
            .collect();
        assert!(res[0] < 1e-2 && res[0] / res[1] > 3.5, "{res:?}");
    }

    #[test]
    fn eikonal_examples() {
        let g = TimeGrid::new(2.0, 21).unwrap();
        assert_eq!(eikonal_apply(&[1.0; 21], &g).unwrap(), g.nodes());
        let y: Vec<f64> = (0..21).map(|i| if i <= 8 { (i as f64).sin() } else { 0.0 }).collect();
        let ey = eikonal_apply(&y, &g).unwrap();
        assert!(ey[9..].iter().all(|v| *v == 0.0));
        for t in [0.0, 0.55, 1.0, 2.0] {
            let a = eikonal_apply(&cut(&y, &g, t).unwrap(), &g).unwrap();
            let b = cut(&eikonal_apply(&y, &g).unwrap(), &g, t).unwrap();
            assert_eq!(a, b);
        }
        assert!(eikonal_apply(&[1.0; 3], &g).is_err());
    }

    #[test]
    fn transform_isometry_and_intertwining() {
        let g = TimeGrid::new(20.0, 2001).unwrap();
        let d = defect_element(&plateau(), &g).unwrap();
        let ones = u_transform(d.eps(), &d).unwrap();
        assert!(ones.iter().all(|v| (*v - 1.0).abs() < 1e-15));
        assert!((d.inner_mu(&ones, &ones).sqrt() - 1.0).abs() < 1e-14);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let quad = Quadrature::trapezoid(&g);
        for _ in 0..5 {
            let y: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (ty, tz) = (u_transform(&y, &d).unwrap(), u_transform(&z, &d).unwrap());
            let plain = quad.inner(&y, &z);
            assert!((plain - d.inner_mu(&ty, &tz)).abs() <= 1e-12 * quad.norm(&y) * quad.norm(&z));
            let lhs = u_transform(&eikonal_apply(&y, &g).unwrap(), &d).unwrap();
            let rhs = eikonal_apply(&ty, &g).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0) * 4.0);
            }
            let back = u_transform_inverse(&ty, &d).unwrap();
            for (a, b) in back.iter().zip(&y) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn vanishing_defect_rejected() {
        let g = TimeGrid::new(20.0, 201).unwrap();
        let mut d = defect_element(&plateau(), &g).unwrap();
        d.eps[17] = 0.0;
        assert!(matches!(
            u_transform(&[1.0; 201], &d),
            Err(Error::VanishingDefect { index: 17, .. })
        ));
    }

    #[test]
    fn wave_model_closed_forms() {
        let g = TimeGrid::new(20.0, 2001).unwrap();
        let q = Potential::constant(1.0).unwrap();
        let d = defect_element(&q, &g).unwrap();
        let m = wave_model_apply(&g.nodes(), &q, &d).unwrap();
        assert!(m.reduced.iter().all(|v| (v - 2.0).abs() < 1e-3));
        assert!(m.conjugated.iter().all(|v| (v - 2.0).abs() < 1e-3));
        let one = wave_model_apply(&[1.0; 2001], &q, &d).unwrap();
        assert!(one.reduced.iter().all(|v| *v == 0.0));
        assert!(one.conjugated.iter().all(|v| v.abs() < 1e-4));
    }

    fn smooth_phi(g: &SpaceGrid, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.sample(|x| {
            let u = x / g.horizon();
            c.iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * u).sin())
                .sum()
        })
    }

    #[test]
    fn wave_model_routes_agree_at_second_order() {
        let q = plateau();
        for seed in 0..3 {
            let errs: Vec<f64> = [801, 1601]
                .iter()
                .map(|&n| {
                    let g = TimeGrid::new(16.0, n).unwrap();
                    let d = defect_element(&q, &g).unwrap();
                    wave_model_apply(&smooth_phi(&g, seed), &q, &d).unwrap().max_discrepancy()
                })
                .collect();
            let ratio = errs[0] / errs[1];
            assert!(ratio > 3.5 && ratio < 4.5, "{errs:?}");
        }
    }

    #[test]
    fn wave_model_symmetric_in_mu() {
        let q = plateau();
        let bump = |c: f64, g: &SpaceGrid| {
            g.sample(|x| crate::potential::smooth_bump((x - c) / 1.5))
        };
        let errs: Vec<f64> = [641, 1281]
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(16.0, n).unwrap();
                let d = defect_element(&q, &g).unwrap();
                let (phi, psi) = (bump(2.0, &g), bump(3.0, &g));
                let sphi = wave_model_apply(&phi, &q, &d).unwrap().reduced;
                let spsi = wave_model_apply(&psi, &q, &d).unwrap().reduced;
                let interior = |v: &[f64]| -> Vec<f64> {
                    let mut out = vec![0.0];
                    out.extend_from_slice(v);
                    out.push(0.0);
                    out
                };
                let a = d.inner_mu(&interior(&sphi), &psi);
                let b = d.inner_mu(&phi, &interior(&spsi));
                (a - b).abs()
            })
            .collect();
        assert!(errs[0] < 1e-3 && errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn csv_header() {
        let g = TimeGrid::new(20.0, 201).unwrap();
        let d = defect_element(&plateau(), &g).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,eps,deps,mu_weight\n"));
        assert_eq!(text.lines().count(), 202);
    }
}
