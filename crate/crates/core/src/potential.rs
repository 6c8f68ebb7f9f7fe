//! Test potentials and boundary controls.
//!
//! Every shipped potential except [`PotentialShape::Constant`] is flat at
//! `x = 0` (all derivatives vanish), i.e. extends by zero to a smooth
//! function on the line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};

/// `e^{-1/x}` for `x > 0`, zero otherwise.
pub fn flat_exp(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, `C^∞` in between.
pub fn smooth_step(x: f64) -> f64 {
    let a = flat_exp(x);
    let b = flat_exp(1.0 - x);
    a / (a + b)
}

/// Bump `e^{1 - 1/(1-u²)}` on `|u| < 1`, zero outside; peak value 1.
pub fn smooth_bump(u: f64) -> f64 {
    let s = 1.0 - u * u;
    if s > 0.0 {
        (1.0 - 1.0 / s).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialShape {
    Zero,
    /// `c·e^{-1/x}`
    FlatExp { c: f64 },
    /// `c·s((x − x0)/σ)` with `s` the smooth step.
    Plateau { c: f64, x0: f64, sigma: f64 },
    /// `q ≡ c`. Not flat at 0; used by the wave-model checks only.
    Constant { c: f64 },
}

impl PotentialShape {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PotentialShape::Zero => 0.0,
            PotentialShape::FlatExp { c } => c * flat_exp(x),
            PotentialShape::Plateau { c, x0, sigma } => c * smooth_step((x - x0) / sigma),
            PotentialShape::Constant { c } => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("potential parameter {what} = {v}")))
            }
        };
        match *self {
            PotentialShape::Zero => Ok(()),
            PotentialShape::FlatExp { c } | PotentialShape::Constant { c } => finite(c, "c"),
            PotentialShape::Plateau { c, x0, sigma } => {
                finite(c, "c")?;
                finite(x0, "x0")?;
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::Validation(format!("plateau width must be positive, got {sigma}")));
                }
                if x0 < 0.0 {
                    return Err(Error::Validation(format!("plateau onset must be ≥ 0, got {x0}")));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for PotentialShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialShape::Zero => write!(f, "zero"),
            PotentialShape::FlatExp { c } => write!(f, "flatexp({c})"),
            PotentialShape::Plateau { c, x0, sigma } => write!(f, "plateau({c},{x0},{sigma})"),
            PotentialShape::Constant { c } => write!(f, "constant({c})"),
        }
    }
}

impl FromStr for PotentialShape {
    type Err = Error;

    /// Parses `zero`, `flatexp(c)`, `plateau(c,x0,sigma)`, `constant(c)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .rfind(')')
                    .filter(|&c| c == s.len() - 1)
                    .ok_or_else(|| Error::Parse(format!("unbalanced parentheses in {s:?}")))?;
                let args = s[open + 1..close]
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad number {a:?} in {s:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (&s[..open], args)
            }
            None => (s, Vec::new()),
        };
        let shape = match (name.trim().to_ascii_lowercase().as_str(), args.as_slice()) {
            ("zero", []) => PotentialShape::Zero,
            ("flatexp", [c]) => PotentialShape::FlatExp { c: *c },
            ("plateau", [c, x0, sigma]) => PotentialShape::Plateau {
                c: *c,
                x0: *x0,
                sigma: *sigma,
            },
            ("constant", [c]) => PotentialShape::Constant { c: *c },
            _ => return Err(Error::Parse(format!("unknown potential {s:?}"))),
        };
        shape.validate()?;
        Ok(shape)
    }
}

/// A smooth real potential on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    shape: PotentialShape,
    name: String,
}

/// Step of the divided differences used by the class-Q certificate.
const CLASS_Q_STEP: f64 = 1e-3;
/// Bound on the divided-difference derivatives at 0, orders 0 through 4.
const CLASS_Q_TOL: f64 = 1e-6;

impl Potential {
    pub fn new(shape: PotentialShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            name: shape.to_string(),
            shape,
        })
    }

    pub fn zero() -> Self {
        Self::new(PotentialShape::Zero).unwrap()
    }

    pub fn flatexp(c: f64) -> Result<Self> {
        Self::new(PotentialShape::FlatExp { c })
    }

    pub fn plateau(c: f64, x0: f64, sigma: f64) -> Result<Self> {
        Self::new(PotentialShape::Plateau { c, x0, sigma })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(PotentialShape::Constant { c })
    }

    pub fn shape(&self) -> &PotentialShape {
        &self.shape
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.shape.eval(x)
    }

    pub fn samples(&self, grid: &SpaceGrid) -> Vec<f64> {
        grid.sample(|x| self.eval(x))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, PotentialShape::Zero)
    }

    /// Forward divided differences `Δ^k q(0)/δ^k`, `k = 0..=4`.
    pub fn derivatives_at_zero(&self) -> [f64; 5] {
        let d = CLASS_Q_STEP;
        let v: Vec<f64> = (0..5).map(|k| self.eval(k as f64 * d)).collect();
        let mut out = [0.0; 5];
        let mut diff = v.clone();
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = diff[0] / d.powi(k as i32);
            diff = diff.windows(2).map(|w| w[1] - w[0]).collect();
        }
        out
    }

    /// Numeric class-Q certificate: flatness at 0 to order 4.
    pub fn is_class_q(&self) -> bool {
        self.derivatives_at_zero().iter().all(|d| d.abs() < CLASS_Q_TOL)
    }

    /// Largest `|q|` on `[0, x_max]`, sampled at 1000 points.
    pub fn sup_on(&self, x_max: f64) -> f64 {
        (0..=1000)
            .map(|k| self.eval(x_max * k as f64 / 1000.0).abs())
            .fold(0.0, f64::max)
    }
}

/// A Dirichlet boundary control `f(t)` sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    grid: TimeGrid,
    samples: Vec<f64>,
    smooth: bool,
}

impl Control {
    /// Samples `f` on `grid`. Requires `f(0) = 0`.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_samples(grid, grid.sample(f))
    }

    pub fn from_samples(grid: &TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "control has {} samples, grid has {}",
                samples.len(),
                grid.len()
            )));
        }
        if samples[0] != 0.0 {
            return Err(Error::Validation(format!(
                "controls must vanish at t = 0, got f(0) = {}",
                samples[0]
            )));
        }
        Ok(Self {
            grid: *grid,
            samples,
            smooth: false,
        })
    }

    /// `C^∞` bump centred at `center` with half-width `radius`, optionally
    /// modulated by `cos(ω(t − center))`. The support must lie in `(0, T]`.
    pub fn bump(grid: &TimeGrid, center: f64, radius: f64, omega: f64) -> Result<Self> {
        if !(radius > 0.0) || center - radius < 0.0 {
            return Err(Error::Validation(format!(
                "bump support [{}, {}] must lie in (0, T]",
                center - radius,
                center + radius
            )));
        }
        let f = move |t: f64| smooth_bump((t - center) / radius) * (omega * (t - center)).cos();
        let mut c = Self::from_fn(grid, f)?;
        c.smooth = true;
        Ok(c)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_smooth(&self) -> bool {
        self.smooth
    }

    /// Linear combination `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &Control, beta: f64) -> Result<Control> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("controls on different grids".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Control {
            grid: self.grid,
            samples,
            smooth: self.smooth && other.smooth,
        })
    }

    /// Delay by `steps` grid steps: `f(t − s)`, zero-filled, same grid.
    pub fn delayed(&self, steps: usize) -> Control {
        let n = self.samples.len();
        let mut samples = vec![0.0; n];
        if steps < n {
            samples[steps..].copy_from_slice(&self.samples[..n - steps]);
        }
        Control {
            grid: self.grid,
            samples,
            smooth: self.smooth,
        }
    }
}

/// Deterministic panel of smooth controls on `grid`: bumps with varied
/// centres, widths and modulation, all supported in `(0, T]`.
pub fn control_panel(grid: &TimeGrid, count: usize) -> Vec<Control> {
    let t = grid.horizon();
    (0..count)
        .map(|k| {
            // golden-ratio sequence for well-spread centres
            let u = (0.5 + k as f64 * 0.618_033_988_749_895).fract();
            let radius = t * (0.12 + 0.25 * ((k * 7 % 5) as f64) / 4.0);
            let lo = radius + 0.02 * t;
            let hi = t - 0.02 * t;
            let center = lo + u * (hi - lo).max(0.0);
            let omega = (k % 4) as f64 * 2.0 / t;
            Control::bump(grid, center.min(t), radius, omega).expect("panel bump fits the horizon")
        })
        .collect()
}
