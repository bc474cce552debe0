//! Vector fields: discrete per-vertex tangent fields and the closed-form
//! smooth families used to generate test maps.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{KillingElement, Manifold, SurfacePoint};
use crate::mesh::SurfaceMesh;

/// Tangent vector per mesh vertex, stored as ambient vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    pub vectors: Vec<DVector<f64>>,
}

impl TangentField {
    pub fn zeros(mesh: &SurfaceMesh) -> Self {
        Self { vectors: vec![DVector::zeros(mesh.manifold.ambient_dim()); mesh.num_vertices()] }
    }

    pub fn from_fn(mesh: &SurfaceMesh, f: impl Fn(usize, &SurfacePoint) -> DVector<f64>) -> Self {
        let m = mesh.manifold;
        Self {
            vectors: mesh
                .vertices
                .iter()
                .enumerate()
                .map(|(i, p)| m.tangent_project(p, &f(i, p)))
                .collect(),
        }
    }

    pub fn killing(mesh: &SurfaceMesh, k: &KillingElement) -> Self {
        let m = mesh.manifold;
        Self::from_fn(mesh, |_, p| m.killing_field_at(k, p))
    }

    /// Field from frame coordinates at each vertex.
    pub fn from_frame_coords(mesh: &SurfaceMesh, coords: &[f64]) -> Self {
        let m = mesh.manifold;
        Self {
            vectors: mesh
                .vertices
                .iter()
                .enumerate()
                .map(|(i, p)| m.frame(p).vector([coords[2 * i], coords[2 * i + 1]]))
                .collect(),
        }
    }

    pub fn frame_coords(&self, mesh: &SurfaceMesh) -> Vec<f64> {
        let m = mesh.manifold;
        let mut out = Vec::with_capacity(2 * self.vectors.len());
        for (p, v) in mesh.vertices.iter().zip(&self.vectors) {
            out.extend_from_slice(&m.frame(p).coords(v));
        }
        out
    }

    pub fn check_mesh(&self, mesh: &SurfaceMesh) -> Result<()> {
        if self.vectors.len() == mesh.num_vertices() {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { vectors: self.vectors.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &TangentField) -> Self {
        Self { vectors: self.vectors.iter().zip(&other.vectors).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &TangentField) -> Self {
        Self { vectors: self.vectors.iter().zip(&other.vectors).map(|(a, b)| a - b).collect() }
    }

    /// Lumped-mass L² inner product.
    pub fn inner(&self, other: &TangentField, mesh: &SurfaceMesh) -> f64 {
        mesh.integrate_vertices(|v| self.vectors[v].dot(&other.vectors[v]))
    }

    pub fn l2_norm(&self, mesh: &SurfaceMesh) -> f64 {
        self.inner(self, mesh).sqrt()
    }

    pub fn c0_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest normal component relative to the base points.
    pub fn tangency_residual(&self, mesh: &SurfaceMesh) -> f64 {
        let m = mesh.manifold;
        mesh.vertices.iter().zip(&self.vectors).map(|(p, v)| m.normal_part(p, v).norm()).fold(0.0, f64::max)
    }
}

/// Closed-form smooth tangent field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothField {
    /// `X(x) = P_x(b + M x + s ⊙ x ⊙ x)` on the sphere, `P_x` the tangent projection.
    Sphere { constant: [f64; 3], linear: [[f64; 3]; 3], quadratic: [f64; 3] },
    /// `X = Σ_k a_k cos(m_k θ + n_k φ + c_k)` in (e_θ, e_φ) coordinates.
    Torus { modes: Vec<TorusMode> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusMode {
    pub freq: [i32; 2],
    pub phase: f64,
    pub amplitude: [f64; 2],
}

impl SmoothField {
    /// The field `a − <a, x> x`, gradient of a linear function.
    pub fn sphere_conformal(a: [f64; 3]) -> Self {
        SmoothField::Sphere { constant: a, linear: [[0.0; 3]; 3], quadratic: [0.0; 3] }
    }

    pub fn sphere_rotation(omega: [f64; 3]) -> Self {
        let [a, b, c] = omega;
        SmoothField::Sphere { constant: [0.0; 3], linear: [[0.0, -c, b], [c, 0.0, -a], [-b, a, 0.0]], quadratic: [0.0; 3] }
    }

    /// Random field with a non-trivial non-Killing part, normalized so
    /// that its C⁰ norm over a fine sample is one.
    pub fn random_non_killing(manifold: Manifold, rng: &mut impl Rng) -> Self {
        let raw = match manifold {
            Manifold::Sphere => {
                let mut u = || rng.random_range(-1.0..1.0);
                SmoothField::Sphere {
                    constant: [u(), u(), u()],
                    linear: [[u(), u(), u()], [u(), u(), u()], [u(), u(), u()]],
                    quadratic: [u(), u(), u()],
                }
            }
            Manifold::FlatTorus => {
                let mut modes = Vec::new();
                for freq in [[1, 0], [0, 1], [1, 1], [1, -1], [2, 0]] {
                    modes.push(TorusMode {
                        freq,
                        phase: rng.random_range(0.0..TAU),
                        amplitude: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    });
                }
                SmoothField::Torus { modes }
            }
        };
        let scale = raw.sampled_sup_norm(manifold);
        raw.scaled(1.0 / scale)
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            SmoothField::Sphere { constant, linear, quadratic } => SmoothField::Sphere {
                constant: constant.map(|c| c * s),
                linear: linear.map(|row| row.map(|c| c * s)),
                quadratic: quadratic.map(|c| c * s),
            },
            SmoothField::Torus { modes } => SmoothField::Torus {
                modes: modes
                    .iter()
                    .map(|m| TorusMode { freq: m.freq, phase: m.phase, amplitude: m.amplitude.map(|a| a * s) })
                    .collect(),
            },
        }
    }

    pub fn manifold(&self) -> Manifold {
        match self {
            SmoothField::Sphere { .. } => Manifold::Sphere,
            SmoothField::Torus { .. } => Manifold::FlatTorus,
        }
    }

    fn sphere_parts(&self) -> (Vector3<f64>, Matrix3<f64>, Vector3<f64>) {
        match self {
            SmoothField::Sphere { constant, linear, quadratic } => (
                Vector3::from(*constant),
                Matrix3::from_fn(|i, j| linear[i][j]),
                Vector3::from(*quadratic),
            ),
            SmoothField::Torus { .. } => unreachable!(),
        }
    }

    /// Value at `p` as an ambient tangent vector.
    pub fn eval(&self, p: &SurfacePoint) -> DVector<f64> {
        match self {
            SmoothField::Sphere { .. } => {
                let (b, m, s) = self.sphere_parts();
                let x = Vector3::new(p.ambient[0], p.ambient[1], p.ambient[2]);
                let v = b + m * x + s.component_mul(&x).component_mul(&x);
                let t = v - x * x.dot(&v);
                DVector::from_column_slice(t.as_slice())
            }
            SmoothField::Torus { modes } => {
                let (th, ph) = (p.params[0], p.params[1]);
                let (mut a, mut b) = (0.0, 0.0);
                for m in modes {
                    let c = (m.freq[0] as f64 * th + m.freq[1] as f64 * ph + m.phase).cos();
                    a += m.amplitude[0] * c;
                    b += m.amplitude[1] * c;
                }
                Manifold::FlatTorus.frame(p).vector([a, b])
            }
        }
    }

    /// Covariant derivative `∇X(p)` in the frame at `p`:
    /// `(∇X)_{ij} = <e_i, ∇_{e_j} X>`.
    pub fn covariant_derivative(&self, p: &SurfacePoint) -> Matrix2<f64> {
        match self {
            SmoothField::Sphere { .. } => {
                let m = Manifold::Sphere;
                let frame = m.frame(p);
                let (b, lin, s) = self.sphere_parts();
                let x = Vector3::new(p.ambient[0], p.ambient[1], p.ambient[2]);
                let v = b + lin * x + s.component_mul(&x).component_mul(&x);
                let e = [frame.e1.clone(), frame.e2.clone()].map(|e| Vector3::new(e[0], e[1], e[2]));
                // ∇_u X = P(dV u) − <V, x> u
                Matrix2::from_fn(|i, j| {
                    let u = e[j];
                    let dv = lin * u + (s.component_mul(&x).component_mul(&u)) * 2.0;
                    let cov = dv - x * x.dot(&dv) - u * x.dot(&v);
                    e[i].dot(&cov)
                })
            }
            SmoothField::Torus { modes } => {
                let (th, ph) = (p.params[0], p.params[1]);
                let mut g = Matrix2::zeros();
                for m in modes {
                    let s = -(m.freq[0] as f64 * th + m.freq[1] as f64 * ph + m.phase).sin();
                    for i in 0..2 {
                        for j in 0..2 {
                            g[(i, j)] += m.amplitude[i] * s * m.freq[j] as f64;
                        }
                    }
                }
                g
            }
        }
    }

    pub fn sample(&self, mesh: &SurfaceMesh) -> TangentField {
        TangentField::from_fn(mesh, |_, p| self.eval(p))
    }

    fn sampled_sup_norm(&self, manifold: Manifold) -> f64 {
        let mesh = SurfaceMesh::build(manifold, if manifold == Manifold::Sphere { 3 } else { 32 })
            .expect("fixed sampling mesh");
        let s = self.sample(&mesh).c0_norm();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

/// Smooth ambient-valued test field `ξ(x) = b + M x + s ⊙ x ⊙ x` on M.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientPolyField {
    pub constant: DVector<f64>,
    pub linear: DMatrix<f64>,
    pub quadratic: DVector<f64>,
}

impl AmbientPolyField {
    pub fn constant(v: DVector<f64>) -> Self {
        let d = v.len();
        Self { constant: v, linear: DMatrix::zeros(d, d), quadratic: DVector::zeros(d) }
    }

    pub fn random(manifold: Manifold, rng: &mut impl Rng) -> Self {
        let d = manifold.ambient_dim();
        Self {
            constant: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            linear: DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)),
            quadratic: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.constant + &self.linear * x + self.quadratic.component_mul(x).component_mul(x)
    }

    /// Values at the mesh vertices.
    pub fn sample(&self, mesh: &SurfaceMesh) -> Vec<DVector<f64>> {
        mesh.vertices.iter().map(|p| self.eval(&p.ambient)).collect()
    }
}
