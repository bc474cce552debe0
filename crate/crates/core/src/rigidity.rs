//! End-to-end recovery of the nearest orientation-preserving isometry and the
//! distance-versus-energy scaling study.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::SmoothField;
use crate::heatflow::{default_dt, smooth, SmoothReport, DEFAULT_T1};
use crate::killing::{log_field, minimize_killing, MinimizeOptions};
use crate::manifold::{IsometryElement, KillingElement, Manifold};
use crate::maps::{check_exponent, DiscreteMap};
use crate::mesh::SurfaceMesh;

pub const REPORT_FORMAT: &str = "rigidlab-report-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub p: f64,
    /// Lipschitz bound enforced by the clamp; defaults to 10√n.
    pub lambda: f64,
    pub clamp_sweeps: usize,
    /// Heat-flow time; zero skips smoothing.
    pub t1: f64,
    /// Heat-flow step; `None` uses `1e-3·h²`.
    pub dt: Option<f64>,
    /// C⁰ threshold on the field fed to the Killing minimization.
    pub delta1: f64,
    /// Closeness threshold reported for the smoothed map.
    pub delta0: f64,
    pub minimize: MinimizeOptions,
    /// Polish the final isometry by a direct W^{1,p} search seeded at it.
    pub refine: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let inj = std::f64::consts::PI;
        Self {
            p: 2.0,
            lambda: 10.0 * 2f64.sqrt(),
            clamp_sweeps: 50,
            t1: DEFAULT_T1,
            dt: None,
            delta1: inj / 8.0,
            delta0: inj / 16.0,
            minimize: MinimizeOptions::default(),
            refine: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClampDiagnostics {
    pub modified_vertices: usize,
    pub sweeps: usize,
    pub capped: bool,
    pub max_face_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KillingDiagnostics {
    /// ‖X‖_{C⁰} of the field of `φ₀⁻¹ ∘ f̃`.
    pub x_c0: f64,
    pub x_l2: f64,
    /// Set when ‖X‖_{C⁰} exceeded δ₁.
    pub above_delta1: bool,
    pub k_bar: KillingElement,
    /// ‖X̄‖_{L²}.
    pub x_bar_l2: f64,
    pub iterations: usize,
    pub fallback: bool,
    pub orthogonality_constant: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidityReport {
    pub format: String,
    pub manifold: Manifold,
    pub mesh_resolution: usize,
    pub p: f64,
    /// `E_p(f)`.
    pub energy: f64,
    /// `e = E_p^{1/p}`.
    pub e: f64,
    /// `d_{1,p}(f, φ)`.
    pub distance: f64,
    /// `distance / e`; `None` when `e < 1e-12`.
    pub ratio: Option<f64>,
    pub phi: IsometryElement,
    /// Isometry produced by the Killing correction before refinement.
    pub phi_pipeline: Option<IsometryElement>,
    pub seed: IsometryElement,
    /// Set when the best-fit seed was degenerate and the identity was used.
    pub seed_degenerate: bool,
    pub clamp: Option<ClampDiagnostics>,
    pub heatflow: Option<SmoothReport>,
    /// Largest displacement of `φ₀⁻¹ ∘ f̃`, compared against δ₀.
    pub seed_residual: Option<f64>,
    pub killing: Option<KillingDiagnostics>,
    pub failure: Option<StageFailure>,
}

impl RigidityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fail(stage: &str, err: &Error) -> StageFailure {
    StageFailure { stage: stage.to_string(), message: err.to_string() }
}

/// Clamp, smooth, seed, Killing correction and (optionally) refinement.
/// Stage errors are recorded in the report, which still carries the energy
/// and the distance to the best isometry found so far.
pub fn nearest_isometry(f: &DiscreteMap, cfg: &PipelineConfig) -> Result<RigidityReport> {
    check_exponent(cfg.p)?;
    let m = f.manifold();
    let mesh = f.mesh.clone();
    let energy = f.energy(cfg.p)?;
    let mut report = RigidityReport {
        format: REPORT_FORMAT.to_string(),
        manifold: m,
        mesh_resolution: mesh.resolution,
        p: cfg.p,
        energy: energy.integral,
        e: energy.e,
        distance: f64::NAN,
        ratio: None,
        phi: IsometryElement::identity(m),
        phi_pipeline: None,
        seed: IsometryElement::identity(m),
        seed_degenerate: false,
        clamp: None,
        heatflow: None,
        seed_residual: None,
        killing: None,
        failure: None,
    };

    let outcome = run_stages(f, cfg, &mut report);
    if let Err((stage, err)) = outcome {
        report.failure = Some(fail(stage, &err));
    }
    let start = report.phi_pipeline.clone().unwrap_or_else(|| report.seed.clone());
    let (distance, phi) = if cfg.refine {
        let direct = f.sobolev_distance(&DiscreteMap::isometry(&mesh, &start), cfg.p)?;
        let (refined, phi) = f.dist_to_isom_from(cfg.p, &start)?;
        if refined < direct {
            (refined, phi)
        } else {
            (direct, start)
        }
    } else {
        (f.sobolev_distance(&DiscreteMap::isometry(&mesh, &start), cfg.p)?, start)
    };
    report.distance = distance;
    report.phi = phi;
    report.ratio = if report.e < 1e-12 { None } else { Some(distance / report.e) };
    Ok(report)
}

fn run_stages(
    f: &DiscreteMap,
    cfg: &PipelineConfig,
    report: &mut RigidityReport,
) -> std::result::Result<(), (&'static str, Error)> {
    let m = f.manifold();
    let mesh = f.mesh.clone();
    let clamp = f.clamp_gradient(cfg.lambda, cfg.clamp_sweeps).map_err(|e| ("clamp", e))?;
    report.clamp = Some(ClampDiagnostics {
        modified_vertices: clamp.modified.len(),
        sweeps: clamp.sweeps,
        capped: clamp.capped,
        max_face_norm: clamp.max_face_norm,
    });
    let mut smoothed = clamp.map;
    if cfg.t1 > 0.0 {
        let dt = cfg.dt.unwrap_or_else(|| default_dt(&mesh));
        let bound = cfg.lambda.max(clamp.max_face_norm);
        let (g, rep) = smooth(&smoothed, cfg.t1, dt, cfg.p, bound).map_err(|e| ("heatflow", e))?;
        smoothed = g;
        report.heatflow = Some(rep);
    }
    let seed = match m.isometry_fit(&mesh.vertices, &smoothed.images, &mesh.vertex_weights) {
        Ok(phi) => phi,
        Err(Error::DegenerateFit) => {
            report.seed_degenerate = true;
            IsometryElement::identity(m)
        }
        Err(e) => return Err(("seed", e)),
    };
    report.seed = seed.clone();
    let h = smoothed.post_compose(&seed.inverse());
    report.seed_residual = Some(h.max_displacement());
    let x = log_field(&h).map_err(|e| ("log_field", e))?;
    let x_c0 = x.c0_norm();
    // the composition map with Killing flows is only controlled up to inj/4
    let limit = m.inj_radius() / 4.0;
    if x_c0 > limit {
        return Err(("log_field", Error::OutsideInjectivityRadius { distance: x_c0, inj_radius: limit }));
    }
    let min = minimize_killing(&mesh, &x, &cfg.minimize).map_err(|e| ("minimize_killing", e))?;
    report.killing = Some(KillingDiagnostics {
        x_c0,
        x_l2: x.l2_norm(&mesh),
        above_delta1: x_c0 > cfg.delta1,
        k_bar: min.k_bar.clone(),
        x_bar_l2: min.value,
        iterations: min.iterations,
        fallback: min.fallback,
        orthogonality_constant: min.orthogonality_constant,
    });
    report.phi_pipeline = Some(seed.compose(&m.flow(&min.k_bar, 1.0).inverse()));
    Ok(())
}

/// Uniformly random element of the identity component.
pub fn random_isometry(m: Manifold, rng: &mut impl Rng) -> IsometryElement {
    match m {
        Manifold::Sphere => {
            // uniform unit quaternion
            let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let tau = std::f64::consts::TAU;
            let q = nalgebra::Quaternion::new(
                u1.sqrt() * (tau * u3).cos(),
                (1.0 - u1).sqrt() * (tau * u2).sin(),
                (1.0 - u1).sqrt() * (tau * u2).cos(),
                u1.sqrt() * (tau * u3).sin(),
            );
            let r = nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix();
            IsometryElement::from_rotation(r.matrix())
        }
        Manifold::FlatTorus => {
            let tau = std::f64::consts::TAU;
            IsometryElement::Translation([
                crate::manifold::wrap_angle(rng.random_range(0.0..tau)),
                crate::manifold::wrap_angle(rng.random_range(0.0..tau)),
            ])
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub energy_e: f64,
    pub dist_w1p: f64,
    pub ratio: f64,
}

pub const SCALING_HEADER: &str = "epsilon,energy_e,dist_w1p,ratio";

impl ScalingRow {
    pub fn csv_line(&self) -> String {
        format!("{:.17e},{:.17e},{:.17e},{:.17e}", self.epsilon, self.energy_e, self.dist_w1p, self.ratio)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of log dist against log e.
    pub slope: f64,
    pub max_ratio: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `f_ε = exp(εX) ∘ φ` for each ε, run through [`nearest_isometry`].
pub fn scaling_study(
    mesh: &Arc<SurfaceMesh>,
    field: &SmoothField,
    phi: &IsometryElement,
    epsilons: &[f64],
    cfg: &PipelineConfig,
) -> Result<ScalingStudy> {
    let inj = mesh.manifold.inj_radius();
    for &eps in epsilons {
        if !(eps > 0.0 && eps < inj / 4.0) {
            return Err(Error::InvalidArgument(format!("epsilon {eps} outside (0, inj/4)")));
        }
    }
    let rows = epsilons
        .par_iter()
        .map(|&eps| {
            let f = DiscreteMap::exp_of_field(mesh, field, eps, phi);
            let report = nearest_isometry(&f, cfg)?;
            Ok(ScalingRow {
                epsilon: eps,
                energy_e: report.e,
                dist_w1p: report.distance,
                ratio: report.distance / report.e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.energy_e > 0.0 && r.dist_w1p > 0.0)
        .map(|r| (r.energy_e.ln(), r.dist_w1p.ln()))
        .collect();
    let slope = if logs.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
        fit_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(ScalingStudy { rows, slope, max_ratio })
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}
