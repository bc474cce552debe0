//! Cofactor field, weak extrinsic Piola residual, almost-harmonicity
//! decomposition, tension field and degree of discrete maps.
//!
//! Ambient quantities use `F = ι∘f`: per-face `dF` is a d×2 matrix acting on
//! source face-frame coordinates, per-vertex fields are vectors in R^d.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{check_exponent, DiscreteMap};
use crate::mesh::{compensated_sum, SurfaceMesh};

/// Per-face `Cof dF`, expressed in ambient coordinates through the image frame.
pub fn cof_field(f: &DiscreteMap) -> Result<Vec<DMatrix<f64>>> {
    Ok(f.differentials()?.iter().map(|d| d.image_frame.matrix() * d.df.cof().matrix).collect())
}

/// Differential of a per-vertex ambient field on face `face`.
fn face_gradient(mesh: &SurfaceMesh, face: usize, values: &[DVector<f64>]) -> DMatrix<f64> {
    let [a, b, c] = mesh.faces[face];
    let d = DMatrix::from_columns(&[&values[b] - &values[a], &values[c] - &values[a]]);
    d * &mesh.face_geometry[face].edge_coords_inv
}

fn face_mean(mesh: &SurfaceMesh, face: usize, values: &[DVector<f64>]) -> DVector<f64> {
    let [a, b, c] = mesh.faces[face];
    (&values[a] + &values[b] + &values[c]) / 3.0
}

/// Quadrature of `∫ <Cof dF, dξ> − <(𝔸∘F)(Cof dF, dF), ξ>` for a test field
/// `ξ` given at the vertices.
pub fn piola_residual(f: &DiscreteMap, xi: &[DVector<f64>]) -> Result<f64> {
    let mesh = &f.mesh;
    if xi.len() != mesh.num_vertices() {
        return Err(Error::MeshMismatch);
    }
    let m = f.manifold();
    let diffs = f.differentials()?;
    let terms: Vec<f64> = diffs
        .iter()
        .enumerate()
        .map(|(face, d)| {
            let cof = d.image_frame.matrix() * d.df.cof().matrix;
            let dxi = face_gradient(mesh, face, xi);
            let xi_bar = face_mean(mesh, face, xi);
            let curvature = m.trace_form(&d.image_point, &cof, &d.ambient);
            cof.dot(&dxi) - curvature.dot(&xi_bar)
        })
        .collect();
    Ok(mesh.integrate_faces(|face| terms[face]))
}

/// Same quadrature for the harmonic-map weak form
/// `∫ <dF, dξ> − <(𝔸∘F)(dF, dF), ξ>`.
pub fn harmonic_residual(f: &DiscreteMap, xi: &[DVector<f64>]) -> Result<f64> {
    let mesh = &f.mesh;
    if xi.len() != mesh.num_vertices() {
        return Err(Error::MeshMismatch);
    }
    let m = f.manifold();
    let diffs = f.differentials()?;
    let terms: Vec<f64> = diffs
        .iter()
        .enumerate()
        .map(|(face, d)| {
            let dxi = face_gradient(mesh, face, xi);
            let xi_bar = face_mean(mesh, face, xi);
            d.ambient.dot(&dxi) - m.trace_form(&d.image_point, &d.ambient, &d.ambient).dot(&xi_bar)
        })
        .collect();
    Ok(mesh.integrate_faces(|face| terms[face]))
}

#[derive(Clone, Debug)]
pub struct AlmostHarmonicParts {
    /// `h = dF − Cof dF` per face.
    pub h: Vec<DMatrix<f64>>,
    /// `h' = −(𝔸∘F)(h, dF)` per face.
    pub h_prime: Vec<DVector<f64>>,
    /// `(|h| + |h'|) / dist(df, SO)` per face; `None` where the distance vanishes.
    pub ratios: Vec<Option<f64>>,
    pub ratio_max: f64,
}

impl AlmostHarmonicParts {
    pub fn h_norm(&self, mesh: &SurfaceMesh, p: f64) -> f64 {
        mesh.integrate_faces(|f| self.h[f].norm().powf(p)).powf(1.0 / p)
    }

    pub fn h_prime_norm(&self, mesh: &SurfaceMesh, p: f64) -> f64 {
        mesh.integrate_faces(|f| self.h_prime[f].norm().powf(p)).powf(1.0 / p)
    }
}

/// Splits the deviation from harmonicity into `h` and `h'`. Requires
/// `max_face |df| ≤ bound`.
pub fn almost_harmonic_parts(f: &DiscreteMap, bound: f64) -> Result<AlmostHarmonicParts> {
    let m = f.manifold();
    let diffs = f.differentials()?;
    for (face, d) in diffs.iter().enumerate() {
        let norm = d.df.norm();
        if norm > bound {
            return Err(Error::LipschitzBoundViolated { face, norm, bound });
        }
    }
    let mut h = Vec::with_capacity(diffs.len());
    let mut h_prime = Vec::with_capacity(diffs.len());
    let mut ratios = Vec::with_capacity(diffs.len());
    let mut ratio_max: f64 = 0.0;
    for d in &diffs {
        let frame = d.image_frame.matrix();
        let hf = &d.ambient - &frame * d.df.cof().matrix;
        let hp = -m.trace_form(&d.image_point, &hf, &d.ambient);
        let dist = d.df.dist_to_so_value();
        let ratio = if dist > 1e-12 { Some((hf.norm() + hp.norm()) / dist) } else { None };
        if let Some(r) = ratio {
            ratio_max = ratio_max.max(r);
        }
        h.push(hf);
        h_prime.push(hp);
        ratios.push(ratio);
    }
    Ok(AlmostHarmonicParts { h, h_prime, ratios, ratio_max })
}

/// Tension field and its normal component.
#[derive(Clone, Debug)]
pub struct TensionReport {
    /// `−Δ_h F − (𝔸∘F)(dF, dF)` per vertex.
    pub tension: Vec<DVector<f64>>,
    pub max_norm: f64,
    /// Largest normal component at the image points.
    pub max_normal: f64,
    /// ‖normal part‖_{L²} / ‖tension‖_{L²}.
    pub normal_ratio: f64,
}

/// Discrete tension with the cotangent Laplace-Beltrami operator (lumped
/// mass) applied componentwise, and `𝔸(dF, dF)` averaged over vertex stars
/// by area.
pub fn tension_field(f: &DiscreteMap) -> Result<TensionReport> {
    let mesh = &f.mesh;
    let m = f.manifold();
    let d = m.ambient_dim();
    let n = mesh.num_vertices();
    let diffs = f.differentials()?;
    let stiffness = mesh.cotan_stiffness();
    let mut k_f = vec![DVector::<f64>::zeros(d); n];
    for (row, col, val) in stiffness.triplet_iter() {
        k_f[row] += &f.images[col].ambient * *val;
    }
    let tension: Vec<DVector<f64>> = (0..n)
        .map(|v| {
            let y = &f.images[v];
            let mut curv = DVector::zeros(d);
            let mut weight = 0.0;
            for &face in &mesh.vertex_faces[v] {
                let a = mesh.face_areas[face];
                curv += m.trace_form(y, &diffs[face].ambient, &diffs[face].ambient) * a;
                weight += a;
            }
            &k_f[v] / mesh.vertex_weights[v] - curv / weight
        })
        .collect();
    Ok(summarize_tension(f, tension))
}

fn summarize_tension(f: &DiscreteMap, tension: Vec<DVector<f64>>) -> TensionReport {
    let m = f.manifold();
    let mesh = &f.mesh;
    let normals: Vec<f64> = tension.iter().zip(&f.images).map(|(t, y)| m.normal_part(y, t).norm()).collect();
    let max_norm = tension.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let max_normal = normals.iter().copied().fold(0.0, f64::max);
    let total = mesh.integrate_vertices(|v| tension[v].norm_squared()).sqrt();
    let normal = mesh.integrate_vertices(|v| normals[v].powi(2)).sqrt();
    let normal_ratio = if total > 0.0 { normal / total } else { 0.0 };
    TensionReport { tension, max_norm, max_normal, normal_ratio }
}

/// Σ area · Det(df) / vol(M).
pub fn degree(f: &DiscreteMap) -> Result<f64> {
    let diffs = f.differentials()?;
    Ok(f.mesh.integrate_faces(|face| diffs[face].df.det()) / f.manifold().volume())
}

/// One line of the Piola residual report.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PiolaRecord {
    pub mesh_level: usize,
    pub map_id: String,
    pub residual: f64,
    pub h_norm: f64,
    pub ratio_max: f64,
}

/// Residual for `ξ`, `‖h‖_{L^p}` and the largest pointwise ratio.
pub fn piola_record(
    f: &DiscreteMap,
    map_id: &str,
    xi: &[DVector<f64>],
    bound: f64,
    p: f64,
) -> Result<PiolaRecord> {
    check_exponent(p)?;
    let parts = almost_harmonic_parts(f, bound)?;
    Ok(PiolaRecord {
        mesh_level: f.mesh.resolution,
        map_id: map_id.to_string(),
        residual: piola_residual(f, xi)?,
        h_norm: parts.h_norm(&f.mesh, p),
        ratio_max: parts.ratio_max,
    })
}

/// Σ_faces area · |A|² for per-face matrices, used for ‖·‖_{L²} of dF-like fields.
pub fn face_l2_norm(mesh: &SurfaceMesh, values: &[DMatrix<f64>]) -> f64 {
    compensated_sum(values.iter().zip(&mesh.face_areas).map(|(v, a)| a * v.norm_squared())).sqrt()
}
