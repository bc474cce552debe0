//! Discrete self-maps of a meshed surface: per-vertex images, per-face
//! differentials, the distance-to-rotations energy, W^{1,p} distances and
//! the metric deficit.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::SmoothField;
use crate::linalg::{FrameId, TangentMap};
use crate::manifold::{IsometryElement, KillingElement, Manifold, SurfacePoint, TangentFrame};
use crate::mesh::{unwrap_params, SurfaceMesh};
use crate::optim::nelder_mead;

pub const MAP_FORMAT: &str = "rigidlab-map-v1";

/// Exponents accepted by every integral quantity.
pub fn check_exponent(p: f64) -> Result<()> {
    if p > 1.1 && p < 10.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteMap {
    pub mesh: Arc<SurfaceMesh>,
    pub images: Vec<SurfacePoint>,
}

/// Differential of a discrete map on one face.
#[derive(Clone, Debug)]
pub struct FaceDifferential {
    /// `df` in (source face frame, image frame).
    pub df: TangentMap,
    pub image_point: SurfacePoint,
    pub image_frame: TangentFrame,
    /// `dF = d(ι∘f)` as a d×2 matrix acting on source face-frame coordinates.
    pub ambient: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Σ_faces area · dist^p(df, SO).
    pub integral: f64,
    /// `integral^{1/p}`.
    pub e: f64,
    pub p: f64,
}

/// Per-face metric deficit `f*g − g` in the face frames.
#[derive(Clone, Debug)]
pub struct DeficitTensor {
    pub per_face: Vec<Matrix2<f64>>,
}

impl DeficitTensor {
    pub fn max_norm(&self) -> f64 {
        self.per_face.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct ClampOutcome {
    pub map: DiscreteMap,
    /// Vertices whose image was moved.
    pub modified: Vec<usize>,
    pub sweeps: usize,
    /// Set when the sweep cap was reached before every face satisfied the bound.
    pub capped: bool,
    pub max_face_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    format: String,
    manifold: Manifold,
    resolution: usize,
    mesh_hash: String,
    images: Vec<Vec<f64>>,
}

impl DiscreteMap {
    pub fn new(mesh: Arc<SurfaceMesh>, images: Vec<SurfacePoint>) -> Result<Self> {
        if images.len() != mesh.num_vertices() {
            return Err(Error::MeshMismatch);
        }
        Ok(Self { mesh, images })
    }

    pub fn identity(mesh: &Arc<SurfaceMesh>) -> Self {
        Self { mesh: mesh.clone(), images: mesh.vertices.clone() }
    }

    pub fn constant(mesh: &Arc<SurfaceMesh>, point: &SurfacePoint) -> Self {
        Self { mesh: mesh.clone(), images: vec![point.clone(); mesh.num_vertices()] }
    }

    pub fn from_fn(mesh: &Arc<SurfaceMesh>, f: impl Fn(&SurfacePoint) -> SurfacePoint) -> Self {
        Self { mesh: mesh.clone(), images: mesh.vertices.iter().map(f).collect() }
    }

    /// The map given by an isometry.
    pub fn isometry(mesh: &Arc<SurfaceMesh>, phi: &IsometryElement) -> Self {
        let m = mesh.manifold;
        Self::from_fn(mesh, |p| m.isometry_apply(phi, p))
    }

    /// `f(p) = exp_{φ(p)}(ε X(φ(p)))`, i.e. `exp(εX) ∘ φ`.
    pub fn exp_of_field(mesh: &Arc<SurfaceMesh>, field: &SmoothField, eps: f64, pre: &IsometryElement) -> Self {
        let m = mesh.manifold;
        Self::from_fn(mesh, |p| {
            let q = m.isometry_apply(pre, p);
            m.exp(&q, &(field.eval(&q) * eps))
        })
    }

    /// The torus map (θ, φ) ↦ (2θ, φ).
    pub fn torus_doubling(mesh: &Arc<SurfaceMesh>) -> Result<Self> {
        if mesh.manifold != Manifold::FlatTorus {
            return Err(Error::InvalidArgument("the doubling map lives on the torus".into()));
        }
        Ok(Self::from_fn(mesh, |p| Manifold::torus_point(2.0 * p.params[0], p.params[1])))
    }

    pub fn manifold(&self) -> Manifold {
        self.mesh.manifold
    }

    /// `φ ∘ self`.
    pub fn post_compose(&self, phi: &IsometryElement) -> Self {
        let m = self.manifold();
        Self { mesh: self.mesh.clone(), images: self.images.iter().map(|y| m.isometry_apply(phi, y)).collect() }
    }

    pub fn same_mesh(&self, other: &DiscreteMap) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.hash() == other.mesh.hash()
    }

    pub fn max_constraint_residual(&self) -> f64 {
        let m = self.manifold();
        self.images.iter().map(|y| m.constraint_residual(&y.ambient)).fold(0.0, f64::max)
    }

    /// Largest geodesic displacement max_v d(v, f(v)).
    pub fn max_displacement(&self) -> f64 {
        let m = self.manifold();
        self.mesh.vertices.iter().zip(&self.images).map(|(p, q)| m.distance(p, q)).fold(0.0, f64::max)
    }

    /// Per-face differential: the affine interpolant of the images in the
    /// image chart, composed with the tangent projection at the image point.
    pub fn differential(&self, face: usize) -> Result<FaceDifferential> {
        let m = self.manifold();
        let tri = self.mesh.faces[face];
        let ys = tri.map(|v| &self.images[v]);
        let inj = m.inj_radius();
        let mut diameter: f64 = 0.0;
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            diameter = diameter.max(m.distance(ys[a], ys[b]));
        }
        if diameter >= inj - 1e-9 {
            return Err(Error::FaceImageTooSpread { face, diameter });
        }
        let geom = &self.mesh.face_geometry[face];
        let (df, image_point, image_frame) = match m {
            Manifold::Sphere => {
                let c = (&ys[0].ambient + &ys[1].ambient + &ys[2].ambient) / 3.0;
                let q = m.project(&c).map_err(|_| Error::FaceImageTooSpread { face, diameter })?;
                let frame = m.frame(&q);
                let d = DMatrix::from_columns(&[&ys[1].ambient - &ys[0].ambient, &ys[2].ambient - &ys[0].ambient]);
                let df = frame.matrix().transpose() * d * &geom.edge_coords_inv;
                (df, q, frame)
            }
            Manifold::FlatTorus => {
                let lifted = unwrap_params(ys.map(|y| &y.params));
                let c = (&lifted[0] + &lifted[1] + &lifted[2]) / 3.0;
                let q = Manifold::torus_point(c[0], c[1]);
                let frame = m.frame(&q);
                let d = DMatrix::from_columns(&[&lifted[1] - &lifted[0], &lifted[2] - &lifted[0]]);
                let df = d * &geom.edge_coords_inv;
                (df, q, frame)
            }
        };
        let ambient = image_frame.matrix() * &df;
        Ok(FaceDifferential {
            df: TangentMap::new(df, FrameId::Face(face), FrameId::FaceImage(face)),
            image_point,
            image_frame,
            ambient,
        })
    }

    pub fn differentials(&self) -> Result<Vec<FaceDifferential>> {
        (0..self.mesh.num_faces()).map(|f| self.differential(f)).collect()
    }

    /// Largest Hilbert-Schmidt norm of `df` over the faces.
    pub fn max_face_gradient(&self) -> Result<f64> {
        Ok(self.differentials()?.iter().map(|d| d.df.norm()).fold(0.0, f64::max))
    }

    /// `E_p(f) = Σ_faces area · dist^p(df, SO)`.
    pub fn energy(&self, p: f64) -> Result<EnergyReport> {
        check_exponent(p)?;
        let dists: Vec<f64> = self.differentials()?.iter().map(|d| d.df.dist_to_so_value()).collect();
        let integral = self.mesh.integrate_faces(|f| dists[f].powf(p));
        Ok(EnergyReport { integral, e: integral.powf(1.0 / p), p })
    }

    /// Discrete W^{1,p} distance of ι∘f and ι∘g: lumped vertex quadrature of
    /// the values plus face quadrature of the differentials.
    pub fn sobolev_distance(&self, other: &DiscreteMap, p: f64) -> Result<f64> {
        check_exponent(p)?;
        if !self.same_mesh(other) {
            return Err(Error::MeshMismatch);
        }
        let da = self.differentials()?;
        let db = other.differentials()?;
        let values = self
            .mesh
            .integrate_vertices(|v| (&self.images[v].ambient - &other.images[v].ambient).norm().powf(p));
        let grads = self.mesh.integrate_faces(|f| (&da[f].ambient - &db[f].ambient).norm().powf(p));
        Ok((values + grads).powf(1.0 / p))
    }

    /// Distance to the identity component of Isom₊(M), with a minimizer.
    ///
    /// Seeded by the weighted best-fit isometry of the vertex pairs (the
    /// identity when that fit is degenerate), then refined by a simplex
    /// search over the Lie algebra.
    pub fn dist_to_isom(&self, p: f64) -> Result<(f64, IsometryElement)> {
        let m = self.manifold();
        let seed = m
            .isometry_fit(&self.mesh.vertices, &self.images, &self.mesh.vertex_weights)
            .unwrap_or_else(|_| IsometryElement::identity(m));
        self.dist_to_isom_from(p, &seed)
    }

    pub fn dist_to_isom_from(&self, p: f64, seed: &IsometryElement) -> Result<(f64, IsometryElement)> {
        check_exponent(p)?;
        let m = self.manifold();
        let candidate = |c: &[f64]| seed.compose(&m.flow(&KillingElement { coeffs: c.to_vec() }, 1.0));
        let objective = |c: &[f64]| {
            let phi = candidate(c);
            self.sobolev_distance(&DiscreteMap::isometry(&self.mesh, &phi), p).unwrap_or(f64::INFINITY)
        };
        let start = vec![0.0; m.killing_dim()];
        let best = nelder_mead(objective, &start, 0.05, 1e-14, 2000);
        let phi = candidate(&best.x);
        let d0 = objective(&start);
        if d0 <= best.value {
            return Ok((d0, seed.clone()));
        }
        Ok((best.value, phi))
    }

    /// `(df)ᵀ df − Id` per face.
    pub fn metric_deficit(&self) -> Result<DeficitTensor> {
        let per_face = self
            .differentials()?
            .iter()
            .map(|d| {
                let a = &d.df.matrix;
                let g = a.transpose() * a;
                Matrix2::new(g[(0, 0)] - 1.0, g[(0, 1)], g[(1, 0)], g[(1, 1)] - 1.0)
            })
            .collect();
        Ok(DeficitTensor { per_face })
    }

    /// Contracts vertex images onto the intrinsic mean of their neighbours'
    /// images until every face has `|df| ≤ bound`.
    ///
    /// On each offending face the vertex farthest from its neighbourhood mean
    /// is moved, so modifications stay inside the stars of offending faces.
    pub fn clamp_gradient(&self, bound: f64, max_sweeps: usize) -> Result<ClampOutcome> {
        let n = self.mesh.manifold.intrinsic_dim() as f64;
        if !(bound > n.sqrt()) {
            return Err(Error::InvalidArgument(format!("clamp bound {bound} must exceed sqrt(n)")));
        }
        let mut map = self.clone();
        let mut modified = Vec::new();
        let mut sweeps = 0;
        let face_norm = |map: &DiscreteMap, f: usize| map.differential(f).map(|d| d.df.norm()).unwrap_or(f64::INFINITY);
        loop {
            let offending: Vec<usize> =
                (0..map.mesh.num_faces()).filter(|&f| face_norm(&map, f) > bound).collect();
            if offending.is_empty() {
                break;
            }
            if sweeps == max_sweeps {
                let max_face_norm = (0..map.mesh.num_faces()).map(|f| face_norm(&map, f)).fold(0.0, f64::max);
                modified.sort_unstable();
                modified.dedup();
                return Ok(ClampOutcome { map, modified, sweeps, capped: true, max_face_norm });
            }
            sweeps += 1;
            for f in offending {
                if face_norm(&map, f) <= bound {
                    continue;
                }
                let mut worst = None;
                let mut worst_gap = -1.0;
                for &v in &map.mesh.faces[f] {
                    let mean = map.neighbour_mean(v);
                    let gap = map.manifold().distance(&map.images[v], &mean);
                    if gap > worst_gap {
                        worst_gap = gap;
                        worst = Some((v, mean));
                    }
                }
                if let Some((v, mean)) = worst {
                    map.images[v] = mean;
                    modified.push(v);
                }
            }
        }
        modified.sort_unstable();
        modified.dedup();
        let max_face_norm = map.max_face_gradient().unwrap_or(f64::INFINITY);
        Ok(ClampOutcome { map, modified, sweeps, capped: false, max_face_norm })
    }

    /// Intrinsic (Karcher) mean of the images of the neighbours of `v`.
    fn neighbour_mean(&self, v: usize) -> SurfacePoint {
        let m = self.manifold();
        let nbrs: Vec<&SurfacePoint> = self.mesh.vertex_neighbors[v].iter().map(|&u| &self.images[u]).collect();
        let start = match m {
            Manifold::Sphere => {
                let s = nbrs.iter().fold(DVector::zeros(3), |acc, y| acc + &y.ambient);
                m.project(&s).unwrap_or_else(|_| nbrs[0].clone())
            }
            Manifold::FlatTorus => nbrs[0].clone(),
        };
        karcher_mean(m, &nbrs, start)
    }

    pub fn to_json(&self) -> String {
        let file = MapFile {
            format: MAP_FORMAT.to_string(),
            manifold: self.manifold(),
            resolution: self.mesh.resolution,
            mesh_hash: self.mesh.hash(),
            images: self.images.iter().map(|y| y.params.iter().copied().collect()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("map serialization cannot fail")
    }

    pub fn from_json(mesh: &Arc<SurfaceMesh>, text: &str) -> Result<Self> {
        let file: MapFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if file.format != MAP_FORMAT {
            return Err(Error::Format(format!("unknown map format tag {:?}", file.format)));
        }
        if file.manifold != mesh.manifold || file.mesh_hash != mesh.hash() {
            return Err(Error::MeshMismatch);
        }
        let images = file
            .images
            .iter()
            .map(|params| mesh.manifold.point(params))
            .collect::<Result<Vec<_>>>()?;
        Self::new(mesh.clone(), images)
    }
}

/// Intrinsic mean of `points` by fixed-point iteration from `start`.
pub fn karcher_mean(m: Manifold, points: &[&SurfacePoint], start: SurfacePoint) -> SurfacePoint {
    let mut mean = start;
    for _ in 0..50 {
        let mut step = DVector::zeros(m.ambient_dim());
        let mut count = 0.0;
        for q in points {
            if let Ok(v) = m.log(&mean, q) {
                step += v;
                count += 1.0;
            }
        }
        if count == 0.0 {
            break;
        }
        step /= count;
        mean = m.exp(&mean, &step);
        if step.norm() < 1e-14 {
            break;
        }
    }
    mean
}
