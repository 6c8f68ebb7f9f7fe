//! Recovery of `q` from the diagonal of the triangular factor, and the
//! forward-then-inverse round trip used to validate it.
//!
//! The default reads `q = 2 dβ/dt` off `β(t) = b(t,t)`. The variant
//! `q = 2(β' + β²)` is kept for comparison; it is not consistent with the
//! factors this crate produces (see the round-trip tests).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connect::{assemble_from_response, hat_kernel, restrict, ConnectingOperator};
use crate::error::{Error, Result};
use crate::factor::{factorize_krein_rows, VolterraFactor};
use crate::forward::{response_function, ResponseFunction};
use crate::grid::TimeGrid;
use crate::io::write_table;
use crate::potential::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalFormula {
    /// `q = 2β'`
    #[default]
    TwiceDerivative,
    /// `q = 2(β' + β²)`
    WithQuadraticTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub formula: DiagonalFormula,
    /// Half-width of a local least-squares line used for `β'` instead of
    /// plain differences. `None` (the default) means plain differences.
    pub smoothing: Option<usize>,
}

/// Second-order differences: central inside, one-sided at both ends.
pub fn differentiate(values: &[f64], step: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 5 {
        return Err(Error::Validation(format!(
            "differentiation needs at least 5 nodes, got {n}"
        )));
    }
    let mut d = Vec::with_capacity(n);
    d.push((-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step));
    for i in 1..n - 1 {
        d.push((values[i + 1] - values[i - 1]) / (2.0 * step));
    }
    d.push((3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * step));
    Ok(d)
}

/// Slope of the least-squares line through `2k + 1` points centred on each
/// node (equal to the slope of the centred quadratic fit). The half-width
/// shrinks towards the ends, where plain differences take over.
pub fn smoothed_derivative(values: &[f64], step: f64, half_width: usize) -> Result<Vec<f64>> {
    let mut d = differentiate(values, step)?;
    let n = values.len();
    for (i, di) in d.iter_mut().enumerate().take(n - 1).skip(1) {
        let k = half_width.min(i).min(n - 1 - i);
        if k < 2 {
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for j in 1..=k {
            let jf = j as f64;
            num += jf * (values[i + j] - values[i - j]);
            den += 2.0 * jf * jf;
        }
        *di = num / (den * step);
    }
    Ok(d)
}

/// `q̂(t_i)` from the diagonal of the left factor `b`.
pub fn potential_from_factor(b: &VolterraFactor, options: &RecoveryOptions) -> Result<Vec<f64>> {
    let beta = b.diagonal();
    let h = b.grid().step();
    let d = match options.smoothing {
        Some(k) => smoothed_derivative(&beta, h, k)?,
        None => differentiate(&beta, h)?,
    };
    Ok(match options.formula {
        DiagonalFormula::TwiceDerivative => d.iter().map(|v| 2.0 * v).collect(),
        DiagonalFormula::WithQuadraticTerm => {
            d.iter().zip(&beta).map(|(v, b)| 2.0 * (v + b * b)).collect()
        }
    })
}

#[derive(Debug, Clone)]
pub enum InverseData {
    Response(ResponseFunction),
    Operator(ConnectingOperator),
}

/// `q̂` on `grid = [0, T]`. A response must be known on `[0, 2T]`; an
/// operator with a longer horizon is restricted to `T`.
pub fn invert(data: &InverseData, grid: &TimeGrid, options: &RecoveryOptions) -> Result<Vec<f64>> {
    let c = match data {
        InverseData::Response(r) => assemble_from_response(r, grid)?,
        InverseData::Operator(c) => {
            if !c.grid().same_step(grid) || c.horizon() < grid.horizon() - 0.5 * grid.step() {
                return Err(Error::GridMismatch(format!(
                    "operator on [0, {}] with step {} cannot serve [0, {}] with step {}",
                    c.horizon(),
                    c.grid().step(),
                    grid.horizon(),
                    grid.step()
                )));
            }
            restrict(c, grid.horizon())?
        }
    };
    let b = factorize_krein_rows(&hat_kernel(&c))?;
    potential_from_factor(&b, options)
}

/// Error of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub nodes: usize,
    pub step: f64,
    pub max_relative_error: f64,
}

/// Round-trip summary. Curves belong to the finest ladder grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub potential: String,
    pub grid: TimeGrid,
    pub window: [f64; 2],
    /// `max |q̂ − q| / max |q|` on the window (absolute when `q ≡ 0` there)
    pub max_relative_error: f64,
    pub ladder: Vec<LadderEntry>,
    /// observed orders between consecutive ladder entries
    pub orders: Vec<f64>,
    pub monotone: bool,
    pub routes: Vec<String>,
    #[serde(skip)]
    pub q_true: Vec<f64>,
    #[serde(skip)]
    pub q_hat: Vec<f64>,
}

impl RecoveryReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// CSV `t,q_true,q_hat` on the finest grid.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let rows = (0..self.grid.len()).map(|i| vec![self.grid.node(i), self.q_true[i], self.q_hat[i]]);
        write_table(out, comments, &["t", "q_true", "q_hat"], rows)
    }
}

/// Default trusted window `[0.05 T, 0.95 T]`.
pub fn default_window(horizon: f64) -> [f64; 2] {
    [0.05 * horizon, 0.95 * horizon]
}

/// Relative max-norm error of `q_hat` against `q_true` on `window`.
pub fn window_error(grid: &TimeGrid, q_true: &[f64], q_hat: &[f64], window: [f64; 2]) -> f64 {
    let tol = 1e-9 * grid.step();
    let inside = |i: &usize| {
        let t = grid.node(*i);
        t >= window[0] - tol && t <= window[1] + tol
    };
    let err = (0..grid.len())
        .filter(inside)
        .map(|i| (q_hat[i] - q_true[i]).abs())
        .fold(0.0, f64::max);
    let scale = (0..grid.len())
        .filter(inside)
        .map(|i| q_true[i].abs())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Forward response of `q`, inversion, and comparison, for every `n` in
/// `ladder`. Runs in parallel across the ladder.
pub fn roundtrip(
    q: &Potential,
    horizon: f64,
    ladder: &[usize],
    window: Option<[f64; 2]>,
    options: &RecoveryOptions,
) -> Result<RecoveryReport> {
    if ladder.is_empty() {
        return Err(Error::Validation("empty grid ladder".into()));
    }
    if !q.is_class_q() {
        return Err(Error::Validation(format!(
            "{} is not flat at x = 0; the round trip needs a class-Q potential",
            q.name()
        )));
    }
    let window = window.unwrap_or_else(|| default_window(horizon));
    if !(window[0] > 0.0 && window[0] < window[1] && window[1] < horizon) {
        return Err(Error::Validation(format!(
            "window [{}, {}] must lie inside (0, {horizon})",
            window[0], window[1]
        )));
    }
    let mut sorted = ladder.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let runs: Vec<(TimeGrid, Vec<f64>, Vec<f64>)> = sorted
        .par_iter()
        .map(|&n| {
            let grid = TimeGrid::new(horizon, n)?;
            let r = response_function(q, &grid.doubled())?;
            let q_hat = invert(&InverseData::Response(r), &grid, options)?;
            Ok((grid, q.samples(&grid), q_hat))
        })
        .collect::<Result<_>>()?;

    let ladder: Vec<LadderEntry> = runs
        .iter()
        .map(|(g, qt, qh)| LadderEntry {
            nodes: g.len(),
            step: g.step(),
            max_relative_error: window_error(g, qt, qh, window),
        })
        .collect();
    let orders = ladder
        .windows(2)
        .map(|w| (w[0].max_relative_error / w[1].max_relative_error).ln() / (w[0].step / w[1].step).ln())
        .collect();
    let monotone = ladder
        .windows(2)
        .all(|w| w[1].max_relative_error <= w[0].max_relative_error);
    let (grid, q_true, q_hat) = runs.into_iter().last().expect("nonempty ladder");
    Ok(RecoveryReport {
        potential: q.name().to_owned(),
        grid,
        window,
        max_relative_error: ladder.last().expect("nonempty ladder").max_relative_error,
        ladder,
        orders,
        monotone,
        routes: vec![
            "response".into(),
            "krein_rows".into(),
            match options.formula {
                DiagonalFormula::TwiceDerivative => "twice_derivative".into(),
                DiagonalFormula::WithQuadraticTerm => "with_quadratic_term".into(),
            },
        ],
        q_true,
        q_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::Direction;
    use crate::grid::Kernel2D;
    use rand::{Rng, SeedableRng};

    fn defaults() -> RecoveryOptions {
        RecoveryOptions::default()
    }

    #[test]
    fn zero_factor_gives_zero() {
        let g = TimeGrid::new(2.0, 21).unwrap();
        let b = VolterraFactor::zeros(&g, Direction::Left);
        for formula in [DiagonalFormula::TwiceDerivative, DiagonalFormula::WithQuadraticTerm] {
            let q = potential_from_factor(&b, &RecoveryOptions { formula, smoothing: None }).unwrap();
            assert!(q.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn linear_diagonal_closed_form() {
        let alpha = 0.7;
        let g = TimeGrid::new(2.0, 21).unwrap();
        let k = Kernel2D::from_fn(&g, crate::grid::Support::Upper, |i, j| {
            if i == j {
                alpha * g.node(i)
            } else {
                0.3
            }
        });
        let b = VolterraFactor::new(Direction::Left, k).unwrap();
        let literal = RecoveryOptions {
            formula: DiagonalFormula::WithQuadraticTerm,
            smoothing: None,
        };
        let q = potential_from_factor(&b, &literal).unwrap();
        for (i, v) in q.iter().enumerate() {
            let t = g.node(i);
            assert!((v - 2.0 * (alpha + alpha * alpha * t * t)).abs() < 1e-12);
        }
        let q = potential_from_factor(&b, &defaults()).unwrap();
        assert!(q.iter().all(|v| (v - 2.0 * alpha).abs() < 1e-12));
    }

    #[test]
    fn short_grid_rejected() {
        assert!(differentiate(&[0.0; 4], 0.1).is_err());
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert!(potential_from_factor(&VolterraFactor::zeros(&g, Direction::Left), &defaults()).is_err());
    }

    #[test]
    fn differences_exact_on_quadratics() {
        let g = TimeGrid::new(1.0, 11).unwrap();
        let f = g.sample(|t| 3.0 * t * t - t + 2.0);
        for d in [differentiate(&f, g.step()).unwrap(), smoothed_derivative(&f, g.step(), 3).unwrap()] {
            for (i, v) in d.iter().enumerate() {
                assert!((v - (6.0 * g.node(i) - 1.0)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn zero_response_gives_zero_potential() {
        let g = TimeGrid::new(2.0, 101).unwrap();
        let r = ResponseFunction::zero(&g.doubled());
        let q = invert(&InverseData::Response(r), &g, &defaults()).unwrap();
        assert!(q.iter().all(|v| v.abs() <= 1e-6));
        let rep = roundtrip(&Potential::zero(), 2.0, &[51], None, &defaults()).unwrap();
        assert_eq!(rep.max_relative_error, 0.0);
    }

    #[test]
    fn inverts_operator_input() {
        let q = Potential::flatexp(0.5).unwrap();
        let g = TimeGrid::new(2.0, 81).unwrap();
        let r = response_function(&q, &g.doubled()).unwrap();
        let c = assemble_from_response(&r, &g).unwrap();
        let from_r = invert(&InverseData::Response(r), &g, &defaults()).unwrap();
        let from_c = invert(&InverseData::Operator(c), &g, &defaults()).unwrap();
        assert_eq!(from_r, from_c);
    }

    #[test]
    fn flatexp_self_convergence() {
        let q = Potential::flatexp(0.5).unwrap();
        let rep = roundtrip(&q, 2.0, &[51, 101], None, &defaults()).unwrap();
        let e = &rep.ladder;
        assert!(e[0].max_relative_error / e[1].max_relative_error >= 2.0, "{e:?}");
        assert!(rep.monotone);
    }

    #[test]
    fn literal_formula_is_inconsistent() {
        let q = Potential::plateau(1.0, 0.8, 0.2).unwrap();
        let literal = RecoveryOptions {
            formula: DiagonalFormula::WithQuadraticTerm,
            smoothing: None,
        };
        let good = roundtrip(&q, 2.0, &[101], Some([0.1, 1.8]), &defaults()).unwrap();
        let bad = roundtrip(&q, 2.0, &[101], Some([0.1, 1.8]), &literal).unwrap();
        assert!(good.max_relative_error < 0.05);
        assert!(bad.max_relative_error > 0.2, "{}", bad.max_relative_error);
    }

    #[test]
    fn recovery_is_local() {
        let q = Potential::plateau(1.0, 0.8, 0.2).unwrap();
        let full = TimeGrid::new(2.0, 81).unwrap();
        let short = full.prefix(41).unwrap();
        let r = response_function(&q, &full.doubled()).unwrap();
        let data = InverseData::Response(r);
        let q_full = invert(&data, &full, &defaults()).unwrap();
        let q_short = invert(&data, &short, &defaults()).unwrap();
        // identical prefix systems; only the end stencil differs
        for i in 0..40 {
            assert!((q_full[i] - q_short[i]).abs() < 1e-12);
        }
        assert!((q_full[40] - q_short[40]).abs() < 0.05);
    }

    #[test]
    fn noise_probe() {
        let q = Potential::flatexp(0.5).unwrap();
        let g = TimeGrid::new(2.0, 101).unwrap();
        let r = response_function(&q, &g.doubled()).unwrap();
        let clean = invert(&InverseData::Response(r.clone()), &g, &defaults()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let noisy: Vec<f64> = r.samples().iter().map(|v| v + 1e-8 * rng.gen_range(-1.0..1.0)).collect();
        let noisy = ResponseFunction::new(r.grid(), noisy).unwrap();
        let q_noisy = invert(&InverseData::Response(noisy), &g, &defaults()).unwrap();
        let change = clean.iter().zip(&q_noisy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // differentiation amplifies by about 1/h
        assert!(change.is_finite() && change < 1e-5, "{change}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = Potential::constant(1.0).unwrap();
        assert!(matches!(roundtrip(&q, 2.0, &[51], None, &defaults()), Err(Error::Validation(_))));
        let z = Potential::zero();
        assert!(roundtrip(&z, 2.0, &[], None, &defaults()).is_err());
        assert!(roundtrip(&z, 2.0, &[51], Some([0.0, 1.0]), &defaults()).is_err());
        let g = TimeGrid::new(2.0, 21).unwrap();
        let short = ResponseFunction::zero(&g);
        assert!(invert(&InverseData::Response(short), &g, &defaults()).is_err());
    }

    #[test]
    fn report_serializes() {
        let rep = roundtrip(&Potential::flatexp(0.5).unwrap(), 1.0, &[21, 41], None, &defaults()).unwrap();
        let mut json = Vec::new();
        rep.write_json(&mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["ladder"].as_array().unwrap().len(), 2);
        let mut csv = Vec::new();
        rep.write_csv(&mut csv, &[]).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 42);
    }
}
