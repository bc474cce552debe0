//! Experiment configuration read from TOML. Unknown keys are rejected at
//! every level.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rigidlab::heatflow::DEFAULT_T1;
use rigidlab::killing::MinimizeOptions;
use rigidlab::maps::check_exponent;
use rigidlab::mesh::default_resolution;
use rigidlab::rigidity::{log_ladder, PipelineConfig};
use rigidlab::Manifold;

use crate::error::{CliError, CliResult};

pub const MAX_LEVEL: usize = 6;
pub const GRID_RANGE: (usize, usize) = (3, 256);
pub const MAX_MEMBERS: usize = 10_000;
pub const MAX_EIGENPAIRS: usize = 64;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: Manifold,
    /// Icosphere subdivision level (sphere only).
    #[serde(default)]
    pub level: Option<usize>,
    /// Grid size N of the N×N parameter grid (torus only).
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub nullspace: NullspaceSection,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Identity,
    Constant,
    /// Random orientation-preserving isometries.
    Isometry,
    /// `exp(εX) ∘ R` for random non-Killing X.
    ExpField,
    /// Torus map (θ, φ) ↦ (2θ, φ).
    TorusDoubling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseIsometry {
    Identity,
    Random,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    /// Number of random fields or isometries.
    pub count: usize,
    pub epsilons: Vec<f64>,
    /// Log-spaced ε values; replaces `epsilons` when present.
    pub ladder: Option<Ladder>,
    pub base: BaseIsometry,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { kind: FamilyKind::Identity, count: 1, epsilons: vec![1e-2], ladder: None, base: BaseIsometry::Identity }
    }
}

impl FamilyConfig {
    pub fn epsilon_values(&self) -> Vec<f64> {
        match &self.ladder {
            Some(l) => log_ladder(l.min, l.max, l.points),
            None => self.epsilons.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub lambda: f64,
    pub t1: f64,
    pub dt: Option<f64>,
    pub delta1: f64,
    pub delta0: f64,
    pub clamp_sweeps: usize,
    pub refine: bool,
    pub minimize: MinimizeOptions,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Self {
            lambda: d.lambda,
            t1: DEFAULT_T1,
            dt: d.dt,
            delta1: d.delta1,
            delta0: d.delta0,
            clamp_sweeps: d.clamp_sweeps,
            refine: d.refine,
            minimize: d.minimize,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NullspaceSection {
    /// Number of eigenpairs reported.
    pub count: usize,
}

impl Default for NullspaceSection {
    fn default() -> Self {
        Self { count: 6 }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolution(&self) -> usize {
        match self.manifold {
            Manifold::Sphere => self.level.unwrap_or_else(|| default_resolution(self.manifold)),
            Manifold::FlatTorus => self.grid.unwrap_or_else(|| default_resolution(self.manifold)),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let s = &self.pipeline;
        PipelineConfig {
            p: self.p,
            lambda: s.lambda,
            clamp_sweeps: s.clamp_sweeps,
            t1: s.t1,
            dt: s.dt,
            delta1: s.delta1,
            delta0: s.delta0,
            minimize: s.minimize.clone(),
            refine: s.refine,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        check_exponent(self.p).map_err(|e| invalid(e.to_string()))?;
        match self.manifold {
            Manifold::Sphere => {
                if self.grid.is_some() {
                    return Err(invalid("`grid` applies to the torus; use `level` for the sphere"));
                }
                if self.resolution() > MAX_LEVEL {
                    return Err(invalid(format!("level {} outside [0, {MAX_LEVEL}]", self.resolution())));
                }
            }
            Manifold::FlatTorus => {
                if self.level.is_some() {
                    return Err(invalid("`level` applies to the sphere; use `grid` for the torus"));
                }
                let n = self.resolution();
                if n < GRID_RANGE.0 || n > GRID_RANGE.1 {
                    return Err(invalid(format!("grid {n} outside [{}, {}]", GRID_RANGE.0, GRID_RANGE.1)));
                }
            }
        }

        let fam = &self.family;
        if fam.count == 0 || fam.count > MAX_MEMBERS {
            return Err(invalid(format!("family count {} outside [1, {MAX_MEMBERS}]", fam.count)));
        }
        if let Some(l) = &fam.ladder {
            if l.points == 0 || !(l.min <= l.max) {
                return Err(invalid("ladder needs points >= 1 and min <= max"));
            }
        }
        let eps = fam.epsilon_values();
        if fam.kind == FamilyKind::ExpField && eps.is_empty() {
            return Err(invalid("exp_field family needs at least one epsilon"));
        }
        if fam.kind == FamilyKind::ExpField && eps.len() * fam.count > MAX_MEMBERS {
            return Err(invalid(format!("family has more than {MAX_MEMBERS} members")));
        }
        let inj = self.manifold.inj_radius();
        for e in &eps {
            if !(*e > 0.0 && *e < inj / 4.0) {
                return Err(invalid(format!("epsilon {e} outside (0, inj/4) = (0, {})", inj / 4.0)));
            }
        }
        if fam.kind == FamilyKind::TorusDoubling && self.manifold != Manifold::FlatTorus {
            return Err(invalid("torus_doubling needs manifold = \"flat_torus\""));
        }

        let s = &self.pipeline;
        if !(s.lambda > 0.0 && s.lambda.is_finite()) {
            return Err(invalid(format!("lambda {} must be positive", s.lambda)));
        }
        if !(s.t1 >= 0.0 && s.t1.is_finite()) {
            return Err(invalid(format!("t1 {} must be non-negative", s.t1)));
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid(format!("dt {dt} must be positive")));
            }
        }
        if !(s.delta1 > 0.0 && s.delta0 > 0.0) {
            return Err(invalid("delta0 and delta1 must be positive"));
        }
        if s.clamp_sweeps == 0 {
            return Err(invalid("clamp_sweeps must be at least 1"));
        }
        if self.nullspace.count == 0 || self.nullspace.count > MAX_EIGENPAIRS {
            return Err(invalid(format!("nullspace count {} outside [1, {MAX_EIGENPAIRS}]", self.nullspace.count)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("manifold = \"sphere\"").unwrap();
        assert_eq!(cfg.resolution(), 3);
        assert_eq!(cfg.p, 2.0);
        assert_eq!(cfg.family.kind, FamilyKind::Identity);
        assert_eq!(cfg.pipeline_config().lambda, 10.0 * 2f64.sqrt());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "manifold = \"sphere\"\ncolour = 1",
            "manifold = \"sphere\"\n[family]\nkind = \"identity\"\nsize = 3",
            "manifold = \"sphere\"\n[pipeline]\nlambada = 3.0",
            "manifold = \"sphere\"\n[pipeline.minimize]\nmax_iter = 3",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(CliError::Validation(_))), "{text}");
        }
    }

    #[test]
    fn ranges_are_enforced() {
        let bad = [
            "manifold = \"sphere\"\np = 1.1",
            "manifold = \"sphere\"\np = 10.0",
            "manifold = \"sphere\"\nlevel = 7",
            "manifold = \"flat_torus\"\nlevel = 2",
            "manifold = \"flat_torus\"\ngrid = 2",
            "manifold = \"sphere\"\n[family]\nkind = \"exp_field\"\nepsilons = [0.8]",
            "manifold = \"sphere\"\n[family]\nkind = \"exp_field\"\nepsilons = [0.0]",
            "manifold = \"sphere\"\n[family]\nkind = \"torus_doubling\"",
            "manifold = \"sphere\"\n[family]\ncount = 0",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(CliError::Validation(_))), "{text}");
        }
        let ok = "manifold = \"sphere\"\nlevel = 6\np = 1.2\n[family]\nkind = \"exp_field\"\nepsilons = [0.78]";
        assert!(ExperimentConfig::from_toml(ok).is_ok());
    }

    #[test]
    fn ladder_replaces_epsilons() {
        let text = "manifold = \"sphere\"\n[family]\nkind = \"exp_field\"\nladder = { min = 1e-3, max = 1e-1, points = 3 }";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let e = cfg.family.epsilon_values();
        assert_eq!(e.len(), 3);
        assert!((e[1] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + "```toml\n".len();
        let end = start + readme[start..].find("```").unwrap();
        let cfg = ExperimentConfig::from_toml(&readme[start..end]).unwrap();
        assert_eq!(cfg.family.epsilon_values().len(), 7);
        assert_eq!(cfg.pipeline_config().minimize.radius_factor, 5.0);
    }
}
