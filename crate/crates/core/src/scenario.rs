//! Scenario configuration: generators, scales, depths and tolerances.
//!
//! Scenarios are JSON files. Every optional field has a default, and the
//! fully resolved scenario is echoed into the run report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ball::{FingerprintSpec, DEFAULT_MAX_BALL_SIZE};
use crate::circle::{MapKind, PrimitiveMap, DEFAULT_VARIATION_SAMPLES};
use crate::error::{Error, Result};
use crate::group::{GeneratingSystem, GeneratorSpec};
use crate::quasimorphism::DEFAULT_MAX_ITER;
use crate::separation::DEFAULT_EXACT_CAP;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub name: String,
    /// Omit for an involution.
    #[serde(default)]
    pub inverse_name: Option<String>,
    pub map: MapKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub fingerprint_seed: u64,
    pub fingerprint_k: usize,
    pub fingerprint_tolerance: f64,
    pub max_ball_size: usize,
    pub variation_samples: usize,
    pub max_iter: usize,
    pub slope_tolerance: f64,
    pub exact_cap: usize,
    /// Gap endpoints match within `tau_fix_factor · δ`.
    pub tau_fix_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let fp = FingerprintSpec::default();
        Tolerances {
            fingerprint_seed: fp.seed,
            fingerprint_k: fp.k,
            fingerprint_tolerance: fp.tolerance,
            max_ball_size: DEFAULT_MAX_BALL_SIZE,
            variation_samples: DEFAULT_VARIATION_SAMPLES,
            max_iter: DEFAULT_MAX_ITER,
            slope_tolerance: 0.1,
            exact_cap: DEFAULT_EXACT_CAP,
            tau_fix_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaDepths {
    pub quasi_subadditivity: usize,
    pub inverse_bound: usize,
    pub distortion_box: usize,
    pub orbit_ceiling: usize,
}

impl Default for LemmaDepths {
    fn default() -> Self {
        LemmaDepths {
            quasi_subadditivity: 4,
            inverse_bound: 6,
            distortion_box: 5,
            orbit_ceiling: 3,
        }
    }
}

/// Source of the staircase `q̂` for the distortion-driven bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionConfig {
    /// `q̂(m) = m`.
    Linear,
    /// Profile the stabilizers of the `ε`-large type-2 gaps.
    Profile { r_max: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub generators: Vec<GeneratorConfig>,
    pub epsilon_list: Vec<f64>,
    pub n_max: usize,
    pub delta: f64,
    pub n_omega: usize,
    pub classification_depth: usize,
    #[serde(default = "default_grid_factor")]
    pub grid_spacing_factor: f64,
    /// Depth of the in-gap counting checks; defaults to `min(6, n_max)`.
    #[serde(default)]
    pub counting_n: Option<usize>,
    /// Last row of the fundamental-inequality check; defaults to `min(10, n_max)`.
    #[serde(default)]
    pub fundamental_n_max: Option<usize>,
    /// Depth of the orbit enumeration for `ℓ_ε`; defaults to `n_max`.
    #[serde(default)]
    pub orbit_depth: Option<usize>,
    #[serde(default)]
    pub lemma_depths: LemmaDepths,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub distortion: Option<DistortionConfig>,
}

fn default_grid_factor() -> f64 {
    0.25
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn system(&self) -> Result<GeneratingSystem> {
        let specs = self
            .generators
            .iter()
            .map(|g| {
                Ok(GeneratorSpec {
                    name: g.name.clone(),
                    map: PrimitiveMap::from_kind(g.map.clone())?,
                    inverse_name: g.inverse_name.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GeneratingSystem::new(specs)
    }

    pub fn fingerprint(&self) -> FingerprintSpec {
        FingerprintSpec {
            seed: self.tolerances.fingerprint_seed,
            k: self.tolerances.fingerprint_k,
            tolerance: self.tolerances.fingerprint_tolerance,
        }
    }

    pub fn grid_spacing(&self, epsilon: f64) -> f64 {
        self.grid_spacing_factor * epsilon
    }

    pub fn tau_fix(&self) -> f64 {
        self.tolerances.tau_fix_factor * self.delta
    }

    pub fn counting_n(&self) -> usize {
        self.counting_n.unwrap_or(6.min(self.n_max))
    }

    pub fn fundamental_n_max(&self) -> usize {
        self.fundamental_n_max.unwrap_or(10.min(self.n_max))
    }

    pub fn orbit_depth(&self) -> usize {
        self.orbit_depth.unwrap_or(self.n_max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.name)));
        let system = self.system()?;
        let lip = system.lipschitz();
        if self.epsilon_list.is_empty() {
            return bad("epsilon_list is empty".into());
        }
        for &e in &self.epsilon_list {
            if !(e > 0.0 && e < 1.0 / (2.0 * lip)) {
                return bad(format!("ε = {e} outside (0, 1/(2L)) with L = {lip}"));
            }
        }
        if !(self.grid_spacing_factor > 0.0 && self.grid_spacing_factor <= 0.25) {
            return bad(format!(
                "grid_spacing_factor {} must lie in (0, 1/4]",
                self.grid_spacing_factor
            ));
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            return bad(format!("delta {} must lie in (0, 1/4)", self.delta));
        }
        if self.n_max == 0 {
            return bad("n_max must be positive".into());
        }
        for (what, d) in [
            ("n_omega", self.n_omega),
            ("classification_depth", self.classification_depth),
            ("counting_n", self.counting_n()),
            ("fundamental_n_max", self.fundamental_n_max()),
            ("orbit_depth", self.orbit_depth()),
        ] {
            if d == 0 || d > self.n_max {
                return bad(format!("{what} = {d} must lie in 1..=n_max ({})", self.n_max));
            }
        }
        let t = &self.tolerances;
        if t.fingerprint_k == 0
            || t.max_ball_size == 0
            || t.variation_samples < 2
            || t.max_iter == 0
            || t.exact_cap == 0
            || !(t.fingerprint_tolerance > 0.0)
            || !(t.slope_tolerance > 0.0)
            || !(t.tau_fix_factor > 0.0)
        {
            return bad("tolerances must be positive".into());
        }
        if let Some(DistortionConfig::Profile { r_max: 0 }) = self.distortion {
            return bad("distortion r_max must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "tiny",
        "generators": [{"name": "a", "inverse_name": "A", "map": {"kind": "rotation", "alpha": 0.1}}],
        "epsilon_list": [0.1],
        "n_max": 4,
        "delta": 0.01,
        "n_omega": 2,
        "classification_depth": 2
    }"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.grid_spacing_factor, 0.25);
        assert_eq!(s.tolerances.fingerprint_seed, 1729);
        assert_eq!(s.lemma_depths.inverse_bound, 6);
        assert_eq!(s.orbit_depth(), 4);
        assert_eq!((s.counting_n(), s.fundamental_n_max()), (4, 4));
        assert_eq!(s.system().unwrap().len(), 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let coarse = MINIMAL.replace("\"n_max\": 4", "\"n_max\": 4, \"grid_spacing_factor\": 0.5");
        assert!(Scenario::from_json(&coarse).is_err());
        let big_eps = MINIMAL.replace("[0.1]", "[0.6]");
        assert!(Scenario::from_json(&big_eps).is_err());
        let deep = MINIMAL.replace("\"n_omega\": 2", "\"n_omega\": 9");
        assert!(Scenario::from_json(&deep).is_err());
        let unknown = MINIMAL.replace("\"n_max\": 4", "\"n_max\": 4, \"bogus\": 1");
        assert!(Scenario::from_json(&unknown).is_err());
        let singular = MINIMAL.replace(
            r#"{"kind": "rotation", "alpha": 0.1}"#,
            r#"{"kind": "mobius", "a": 1, "b": 1, "c": 1, "d": 1}"#,
        );
        assert!(Scenario::from_json(&singular).is_err());
    }
}
