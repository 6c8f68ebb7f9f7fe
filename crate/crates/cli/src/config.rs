//! Run configuration: one JSON document, individual fields overridable
//! from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use bcm::recover::DiagonalFormula;
use bcm::{Error, PotentialShape, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_VAR: &str = "BCM_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub center: f64,
    pub radius: f64,
    #[serde(default)]
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialShape,
    pub horizon: f64,
    pub nodes: usize,
    /// grid sizes for `roundtrip`
    pub ladder: Vec<usize>,
    /// control for `simulate`; defaults to a bump centred at `T/2`
    pub control: Option<ControlSpec>,
    /// size of the control panel used by route-agreement checks
    pub controls: usize,
    pub formula: DiagonalFormula,
    pub smoothing: Option<usize>,
    /// trusted recovery window; defaults to `[0.05 T, 0.95 T]`
    pub window: Option<[f64; 2]>,
    /// right end `X` of the space interval for `wavemodel`
    pub space_extent: f64,
    pub space_nodes: usize,
    /// response CSV, kernel CSV or operator JSON for `factorize`/`recover`
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            potential: PotentialShape::Plateau {
                c: 1.0,
                x0: 0.8,
                sigma: 0.2,
            },
            horizon: 2.0,
            nodes: 201,
            ladder: vec![101, 201, 401],
            control: None,
            controls: 40,
            formula: DiagonalFormula::default(),
            smoothing: None,
            window: None,
            space_extent: 20.0,
            space_nodes: 2001,
            input: None,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Checks every numeric field against the preconditions of the
    /// operations that use it.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        self.potential.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.nodes < 5 {
            return fail(format!("nodes must be at least 5, got {}", self.nodes));
        }
        if self.ladder.is_empty() || self.ladder.iter().any(|&n| n < 5) {
            return fail(format!("ladder entries must be at least 5, got {:?}", self.ladder));
        }
        if self.controls < 2 {
            return fail(format!("need at least 2 controls, got {}", self.controls));
        }
        if let Some(c) = self.control {
            if !(c.radius > 0.0) || c.center - c.radius < 0.0 || c.center > self.horizon || !c.omega.is_finite() {
                return fail(format!("control {c:?} must have positive radius and lie in (0, T]"));
            }
        }
        if let Some(k) = self.smoothing {
            if k < 2 {
                return fail(format!("smoothing half-width must be at least 2, got {k}"));
            }
        }
        if let Some([lo, hi]) = self.window {
            if !(lo > 0.0 && lo < hi && hi < self.horizon) {
                return fail(format!("window [{lo}, {hi}] must lie inside (0, {})", self.horizon));
            }
        }
        if !(self.space_extent > 0.0 && self.space_extent.is_finite()) {
            return fail(format!("space extent must be positive, got {}", self.space_extent));
        }
        if self.space_nodes < 5 {
            return fail(format!("space nodes must be at least 5, got {}", self.space_nodes));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// `--out`/config value, then the environment, then `bcm-out`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("bcm-out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_documents() {
        let c: RunConfig = serde_json::from_str(r#"{"horizon": 1.5, "potential": {"kind": "flatexp", "c": 0.5}}"#).unwrap();
        assert_eq!(c.horizon, 1.5);
        assert_eq!(c.potential, PotentialShape::FlatExp { c: 0.5 });
        assert_eq!(c.nodes, 201);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"horizn": 1}"#).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        for bad in [
            RunConfig { horizon: -1.0, ..Default::default() },
            RunConfig { nodes: 3, ..Default::default() },
            RunConfig { ladder: vec![], ..Default::default() },
            RunConfig { window: Some([0.5, 3.0]), ..Default::default() },
            RunConfig { smoothing: Some(1), ..Default::default() },
            RunConfig {
                control: Some(ControlSpec { center: 0.1, radius: 0.5, omega: 0.0 }),
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Validation(_))), "{bad:?}");
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: Some("elsewhere".into()), ..Default::default() };
        let c = RunConfig { nodes: 101, ..Default::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
