//! Triangulations of the shipped surfaces and their first-order FEM data:
//! face frames, quadrature weights, the cotangent stiffness matrix.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector3};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifold::{wrap_angle, Manifold, SurfacePoint, TangentFrame};

/// Local geometry of one source face.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    /// Base point: the projected centroid (sphere) or the parameter centroid (torus).
    pub point: SurfacePoint,
    pub frame: TangentFrame,
    /// Coordinates of `v1 − v0` and `v2 − v0` in `frame`, as columns.
    pub edge_coords: DMatrix<f64>,
    pub edge_coords_inv: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct SurfaceMesh {
    pub manifold: Manifold,
    /// Icosphere subdivision level (sphere) or grid size N (torus).
    pub resolution: usize,
    pub vertices: Vec<SurfacePoint>,
    pub faces: Vec<[usize; 3]>,
    pub face_areas: Vec<f64>,
    /// Lumped masses: a third of the adjacent face areas.
    pub vertex_weights: Vec<f64>,
    /// Sorted vertex pairs.
    pub edges: Vec<[usize; 2]>,
    pub edge_faces: Vec<[usize; 2]>,
    pub vertex_neighbors: Vec<Vec<usize>>,
    pub vertex_faces: Vec<Vec<usize>>,
    pub face_geometry: Vec<FaceGeometry>,
    /// Longest edge in the source chart.
    pub mesh_size: f64,
}

pub const DEFAULT_SPHERE_LEVEL: usize = 3;
pub const DEFAULT_TORUS_N: usize = 24;

/// Default icosphere level or torus grid size.
pub fn default_resolution(m: Manifold) -> usize {
    match m {
        Manifold::Sphere => DEFAULT_SPHERE_LEVEL,
        Manifold::FlatTorus => DEFAULT_TORUS_N,
    }
}

/// Compensated (Neumaier) summation; deterministic for a fixed order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl SurfaceMesh {
    /// Sphere: icosphere at the given subdivision level. Torus: N×N grid of
    /// the parameter square, each cell split along its diagonal.
    pub fn build(manifold: Manifold, resolution: usize) -> Result<Self> {
        let (vertices, faces) = match manifold {
            Manifold::Sphere => {
                if resolution > 8 {
                    return Err(Error::InvalidArgument(format!("icosphere level {resolution} is too large")));
                }
                icosphere(resolution)
            }
            Manifold::FlatTorus => {
                if resolution < 3 {
                    return Err(Error::ResolutionTooSmall(resolution));
                }
                torus_grid(resolution)
            }
        };
        Self::from_parts(manifold, resolution, vertices, faces)
    }

    pub fn from_parts(
        manifold: Manifold,
        resolution: usize,
        vertices: Vec<SurfacePoint>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let nv = vertices.len();
        let mut edge_map: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        for (f, tri) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a >= nv || b >= nv {
                    return Err(Error::InvalidArgument(format!("face {f} references a missing vertex")));
                }
                edge_map.entry([a.min(b), a.max(b)]).or_default().push(f);
            }
        }
        let mut edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        edges.sort_unstable();
        let mut edge_faces = Vec::with_capacity(edges.len());
        for e in &edges {
            let adj = &edge_map[e];
            if adj.len() != 2 {
                return Err(Error::InvalidArgument(format!("edge {e:?} is not shared by exactly two faces")));
            }
            edge_faces.push([adj[0], adj[1]]);
        }
        let mut vertex_neighbors = vec![Vec::new(); nv];
        for e in &edges {
            vertex_neighbors[e[0]].push(e[1]);
            vertex_neighbors[e[1]].push(e[0]);
        }
        let mut vertex_faces = vec![Vec::new(); nv];
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                vertex_faces[v].push(f);
            }
        }

        let mut mesh = SurfaceMesh {
            manifold,
            resolution,
            vertices,
            faces,
            face_areas: Vec::new(),
            vertex_weights: vec![0.0; nv],
            edges,
            edge_faces,
            vertex_neighbors,
            vertex_faces,
            face_geometry: Vec::new(),
            mesh_size: 0.0,
        };
        let mut geometry = Vec::with_capacity(mesh.faces.len());
        let mut areas = Vec::with_capacity(mesh.faces.len());
        for f in 0..mesh.faces.len() {
            let chart = mesh.source_chart(f);
            let (g, area) = mesh.face_geometry_from_chart(&chart);
            if g.edge_coords.determinant() <= 0.0 {
                return Err(Error::InvalidArgument(format!("face {f} is not positively oriented")));
            }
            geometry.push(g);
            areas.push(area);
        }
        mesh.face_geometry = geometry;
        for (f, tri) in mesh.faces.iter().enumerate() {
            for &v in tri {
                mesh.vertex_weights[v] += areas[f] / 3.0;
            }
        }
        mesh.face_areas = areas;
        mesh.mesh_size = mesh
            .faces
            .iter()
            .enumerate()
            .flat_map(|(f, _)| {
                let c = mesh.source_chart(f);
                [(&c[1] - &c[0]).norm(), (&c[2] - &c[1]).norm(), (&c[0] - &c[2]).norm()]
            })
            .fold(0.0, f64::max);
        Ok(mesh)
    }

    /// Positions of the face's vertices in the flat source chart: ambient
    /// coordinates on the sphere, unwrapped parameters on the torus.
    pub fn source_chart(&self, f: usize) -> [DVector<f64>; 3] {
        let tri = self.faces[f];
        match self.manifold {
            Manifold::Sphere => tri.map(|v| self.vertices[v].ambient.clone()),
            Manifold::FlatTorus => unwrap_params(tri.map(|v| &self.vertices[v].params)),
        }
    }

    fn face_geometry_from_chart(&self, chart: &[DVector<f64>; 3]) -> (FaceGeometry, f64) {
        match self.manifold {
            Manifold::Sphere => {
                let centroid = (&chart[0] + &chart[1] + &chart[2]) / 3.0;
                let point = Manifold::sphere_point(&Vector3::new(centroid[0], centroid[1], centroid[2]));
                let frame = self.manifold.frame(&point);
                let d1 = &chart[1] - &chart[0];
                let d2 = &chart[2] - &chart[0];
                let edge_coords = DMatrix::from_row_slice(
                    2,
                    2,
                    &[frame.e1.dot(&d1), frame.e1.dot(&d2), frame.e2.dot(&d1), frame.e2.dot(&d2)],
                );
                let a = Vector3::new(d1[0], d1[1], d1[2]);
                let b = Vector3::new(d2[0], d2[1], d2[2]);
                let area = 0.5 * a.cross(&b).norm();
                let inv = edge_coords.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(2, 2));
                (FaceGeometry { point, frame, edge_coords, edge_coords_inv: inv }, area)
            }
            Manifold::FlatTorus => {
                let centroid = (&chart[0] + &chart[1] + &chart[2]) / 3.0;
                let point = Manifold::torus_point(centroid[0], centroid[1]);
                let frame = self.manifold.frame(&point);
                let d1 = &chart[1] - &chart[0];
                let d2 = &chart[2] - &chart[0];
                let edge_coords = DMatrix::from_row_slice(2, 2, &[d1[0], d2[0], d1[1], d2[1]]);
                let area = 0.5 * edge_coords.determinant().abs();
                let inv = edge_coords.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(2, 2));
                (FaceGeometry { point, frame, edge_coords, edge_coords_inv: inv }, area)
            }
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    pub fn total_area(&self) -> f64 {
        compensated_sum(self.face_areas.iter().copied())
    }

    /// Σ_f area_f · g(f).
    pub fn integrate_faces(&self, g: impl Fn(usize) -> f64) -> f64 {
        compensated_sum((0..self.num_faces()).map(|f| self.face_areas[f] * g(f)))
    }

    /// Σ_v m_v · g(v).
    pub fn integrate_vertices(&self, g: impl Fn(usize) -> f64) -> f64 {
        compensated_sum((0..self.num_vertices()).map(|v| self.vertex_weights[v] * g(v)))
    }

    /// Cotangent stiffness matrix `K` (positive semidefinite):
    /// `K_ij = −(cot α_ij + cot β_ij)/2` for edges, rows summing to zero.
    pub fn cotan_stiffness(&self) -> CsrMatrix<f64> {
        let n = self.num_vertices();
        let mut coo = CooMatrix::new(n, n);
        for f in 0..self.num_faces() {
            let chart = self.source_chart(f);
            let tri = self.faces[f];
            for k in 0..3 {
                let (i, j, o) = (k, (k + 1) % 3, (k + 2) % 3);
                let a = &chart[i] - &chart[o];
                let b = &chart[j] - &chart[o];
                let cross = (a.norm_squared() * b.norm_squared() - a.dot(&b).powi(2)).max(0.0).sqrt();
                let cot = a.dot(&b) / cross;
                let w = 0.5 * cot;
                let (vi, vj) = (tri[i], tri[j]);
                coo.push(vi, vj, -w);
                coo.push(vj, vi, -w);
                coo.push(vi, vi, w);
                coo.push(vj, vj, w);
            }
        }
        CsrMatrix::from(&coo)
    }

    /// Deterministic fingerprint of the mesh topology and vertex parameters.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.manifold.name().as_bytes());
        hasher.update((self.resolution as u64).to_le_bytes());
        for v in &self.vertices {
            for x in v.params.iter() {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        for f in &self.faces {
            for &i in f {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    /// ASCII OFF. Torus vertices are written in R⁴ under the `4OFF` header.
    pub fn to_off(&self) -> String {
        let mut s = String::new();
        if self.manifold.ambient_dim() == 4 {
            s.push_str("4OFF\n");
        } else {
            s.push_str("OFF\n");
        }
        let _ = writeln!(s, "{} {} {}", self.num_vertices(), self.num_faces(), self.edges.len());
        for v in &self.vertices {
            let coords: Vec<String> = v.ambient.iter().map(|x| format!("{x:.17e}")).collect();
            let _ = writeln!(s, "{}", coords.join(" "));
        }
        for f in &self.faces {
            let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
        }
        s
    }

    /// ASCII OBJ. The torus is drawn as the torus of revolution with radii
    /// (2, 1) since OBJ vertices are three-dimensional.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} resolution {}", self.manifold.name(), self.resolution);
        for v in &self.vertices {
            let p = match self.manifold {
                Manifold::Sphere => [v.ambient[0], v.ambient[1], v.ambient[2]],
                Manifold::FlatTorus => {
                    let (t, p) = (v.params[0], v.params[1]);
                    [(2.0 + p.cos()) * t.cos(), (2.0 + p.cos()) * t.sin(), p.sin()]
                }
            };
            let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }
}

/// Lifts three torus parameter pairs onto the branch nearest the first one.
pub(crate) fn unwrap_params(params: [&DVector<f64>; 3]) -> [DVector<f64>; 3] {
    let base = params[0].clone();
    let lift = |q: &DVector<f64>| {
        DVector::from_vec(vec![
            base[0] + wrap_angle(q[0] - base[0]),
            base[1] + wrap_angle(q[1] - base[1]),
        ])
    };
    [base.clone(), lift(params[1]), lift(params[2])]
}

fn icosphere(level: usize) -> (Vec<SurfacePoint>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pos: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, pos: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                pos.push(((pos[a] + pos[b]) * 0.5).normalize());
                pos.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut pos);
            let bc = mid(b, c, &mut pos);
            let ca = mid(c, a, &mut pos);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    // outward orientation
    for f in faces.iter_mut() {
        let (a, b, c) = (pos[f[0]], pos[f[1]], pos[f[2]]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    (pos.iter().map(Manifold::sphere_point).collect(), faces)
}

fn torus_grid(n: usize) -> (Vec<SurfacePoint>, Vec<[usize; 3]>) {
    let h = TAU / n as f64;
    let idx = |i: usize, j: usize| (i % n) * n + (j % n);
    let mut vertices = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            vertices.push(Manifold::torus_point(i as f64 * h, j as f64 * h));
        }
    }
    let mut faces = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    (vertices, faces)
}
