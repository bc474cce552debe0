//! Discrete covariant gradients, the Korn-type operator `X ↦ ∇X + (∇X)ᵀ`
//! and its nullspace, the map/field correspondence `f = exp X`, the
//! composition map with Killing flows and the minimization over Killing
//! corrections.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::TangentField;
use crate::manifold::{IsometryElement, KillingElement, Manifold, SurfacePoint};
use crate::maps::DiscreteMap;
use crate::mesh::SurfaceMesh;

/// Frame coordinates at `to` of the transport of frame vectors at `from`:
/// the 2×2 matrix taking coordinates at `from` to coordinates at `to`.
fn transport_matrix(m: Manifold, from: &SurfacePoint, to: &SurfacePoint) -> Result<Matrix2<f64>> {
    let src = m.frame(from);
    let dst = m.frame(to);
    let a = m.parallel_transport(from, to, &src.e1)?;
    let b = m.parallel_transport(from, to, &src.e2)?;
    let [a0, a1] = dst.coords(&a);
    let [b0, b1] = dst.coords(&b);
    Ok(Matrix2::new(a0, b0, a1, b1))
}

fn frame_coords(m: Manifold, p: &SurfacePoint, v: &DVector<f64>) -> nalgebra::Vector2<f64> {
    let [a, b] = m.frame(p).coords(v);
    nalgebra::Vector2::new(a, b)
}

/// Per-vertex `∇X` in the vertex frame, fitted by least squares over the
/// vertex star: `P_{q→p} X(q) − X(p) ≈ ∇X(p) · log_p q`.
pub fn covariant_gradient(mesh: &SurfaceMesh, x: &TangentField) -> Result<Vec<Matrix2<f64>>> {
    x.check_mesh(mesh)?;
    let m = mesh.manifold;
    (0..mesh.num_vertices())
        .map(|v| {
            let p = &mesh.vertices[v];
            let xp = frame_coords(m, p, &x.vectors[v]);
            let mut uu = Matrix2::zeros();
            let mut wu = Matrix2::zeros();
            for &q in &mesh.vertex_neighbors[v] {
                let u = frame_coords(m, p, &m.log(p, &mesh.vertices[q])?);
                let moved = m.parallel_transport(&mesh.vertices[q], p, &x.vectors[q])?;
                let w = frame_coords(m, p, &moved) - xp;
                uu += u * u.transpose();
                wu += w * u.transpose();
            }
            let eig = uu.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            if !(lo > 1e-12 * hi) {
                return Err(Error::DegenerateStar(v));
            }
            Ok(wu * uu.try_inverse().ok_or(Error::DegenerateStar(v))?)
        })
        .collect()
}

/// Linear map from the six frame coordinates of a face's vertex values to
/// the face gradient (column-major 2×2, four rows).
fn face_gradient_operator(mesh: &SurfaceMesh, face: usize) -> Result<DMatrix<f64>> {
    let m = mesh.manifold;
    let geom = &mesh.face_geometry[face];
    let tri = mesh.faces[face];
    let t: Vec<Matrix2<f64>> =
        tri.iter().map(|&v| transport_matrix(m, &mesh.vertices[v], &geom.point)).collect::<Result<_>>()?;
    let einv = Matrix2::new(
        geom.edge_coords_inv[(0, 0)],
        geom.edge_coords_inv[(0, 1)],
        geom.edge_coords_inv[(1, 0)],
        geom.edge_coords_inv[(1, 1)],
    );
    // G = [T1 x1 − T0 x0, T2 x2 − T0 x0] E⁻¹, so G[:, j] = Σ_k D[:, k] E⁻¹[k, j]
    let mut op = DMatrix::zeros(4, 6);
    for j in 0..2 {
        for k in 0..2 {
            let c = einv[(k, j)];
            for r in 0..2 {
                for s in 0..2 {
                    op[(2 * j + r, 2 * (k + 1) + s)] += c * t[k + 1][(r, s)];
                    op[(2 * j + r, s)] -= c * t[0][(r, s)];
                }
            }
        }
    }
    Ok(op)
}

/// Per-face `∇X` of the piecewise linear interpolant, in the face frames.
pub fn face_gradients(mesh: &SurfaceMesh, x: &TangentField) -> Result<Vec<Matrix2<f64>>> {
    x.check_mesh(mesh)?;
    let coords = x.frame_coords(mesh);
    (0..mesh.num_faces())
        .map(|f| {
            let op = face_gradient_operator(mesh, f)?;
            let tri = mesh.faces[f];
            let local = DVector::from_fn(6, |i, _| coords[2 * tri[i / 2] + i % 2]);
            let g = op * local;
            Ok(Matrix2::new(g[0], g[2], g[1], g[3]))
        })
        .collect()
}

/// `‖∇X + (∇X)ᵀ‖_{L²}` from the face gradients.
pub fn korn_norm(mesh: &SurfaceMesh, x: &TangentField) -> Result<f64> {
    let g = face_gradients(mesh, x)?;
    Ok(mesh.integrate_faces(|f| (g[f] + g[f].transpose()).norm_squared()).sqrt())
}

/// `‖∇X‖_{L²}` from the face gradients.
pub fn gradient_norm(mesh: &SurfaceMesh, x: &TangentField) -> Result<f64> {
    let g = face_gradients(mesh, x)?;
    Ok(mesh.integrate_faces(|f| g[f].norm_squared()).sqrt())
}

/// Low end of the spectrum of `∫|∇X + (∇X)ᵀ|²` against the lumped L² mass.
#[derive(Clone, Debug)]
pub struct KornSpectrum {
    /// Smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues below the widest gap; see [`spectral_gap_index`].
    pub nullity: usize,
    /// Discrete nullspace projected onto the closed-form Killing fields.
    pub basis: Vec<TangentField>,
    /// Largest principal angle in degrees between the lowest `killing_dim`
    /// eigenvectors and the closed-form Killing basis.
    pub subspace_angle_deg: f64,
}

pub const KORN_GAP: f64 = 0.01;

/// Dense `2n × 2n` stiffness of the Korn-type form in vertex frame coordinates.
pub fn korn_matrix(mesh: &SurfaceMesh) -> Result<DMatrix<f64>> {
    let n = mesh.num_vertices();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for f in 0..mesh.num_faces() {
        let g = face_gradient_operator(mesh, f)?;
        // rows of G + Gᵀ, column-major
        let mut sym = DMatrix::zeros(4, 6);
        for c in 0..6 {
            sym[(0, c)] = 2.0 * g[(0, c)];
            sym[(1, c)] = g[(1, c)] + g[(2, c)];
            sym[(2, c)] = g[(1, c)] + g[(2, c)];
            sym[(3, c)] = 2.0 * g[(3, c)];
        }
        let local = sym.transpose() * &sym * mesh.face_areas[f];
        let tri = mesh.faces[f];
        for a in 0..6 {
            for b in 0..6 {
                q[(2 * tri[a / 2] + a % 2, 2 * tri[b / 2] + b % 2)] += local[(a, b)];
            }
        }
    }
    Ok(q)
}

pub fn korn_nullspace(mesh: &SurfaceMesh, count: usize) -> Result<KornSpectrum> {
    let n = mesh.num_vertices();
    let q = korn_matrix(mesh)?;
    let inv_sqrt: Vec<f64> = (0..2 * n).map(|i| 1.0 / mesh.vertex_weights[i / 2].sqrt()).collect();
    let a = DMatrix::from_fn(2 * n, 2 * n, |i, j| q[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::try_new(a, 1e-14, 0)
        .ok_or_else(|| Error::SolverFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let count = count.min(2 * n);
    let eigenvalues: Vec<f64> = order[..count].iter().map(|&i| eig.eigenvalues[i]).collect();
    let nullity = spectral_gap_index(&eigenvalues);

    let k = mesh.manifold.killing_dim();
    // both subspaces in mass-weighted coordinates y = M^{1/2} x
    let discrete = DMatrix::from_fn(2 * n, k, |i, j| eig.eigenvectors[(i, order[j])]);
    let closed = closed_form_basis(mesh);
    let closed_y = DMatrix::from_fn(2 * n, k, |i, j| closed[j][i] / inv_sqrt[i]);
    let q1 = discrete.qr().q();
    let q2 = closed_y.clone().qr().q();
    let cosines = (q1.transpose() * &q2).singular_values();
    let min_cos = cosines.iter().copied().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    let subspace_angle_deg = min_cos.acos().to_degrees();

    // project each closed-form field onto the discrete subspace
    let coeffs = q1.transpose() * &closed_y;
    let projected = &q1 * coeffs;
    let basis = (0..k)
        .map(|j| {
            let x: Vec<f64> = (0..2 * n).map(|i| projected[(i, j)] * inv_sqrt[i]).collect();
            TangentField::from_frame_coords(mesh, &x)
        })
        .collect();
    Ok(KornSpectrum { eigenvalues, nullity, basis, subspace_angle_deg })
}

/// Position `k` of the widest relative gap `λ_k / λ_{k−1}` in an ascending
/// list, provided `λ_{k−1} < KORN_GAP·λ_k`; zero otherwise. Eigenvalues at
/// roundoff level are floored so that noise inside the nullspace does not
/// register as a gap.
pub fn spectral_gap_index(eigenvalues: &[f64]) -> usize {
    let top = eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * top;
    let mut best = (0, 1.0 / KORN_GAP);
    for k in 1..eigenvalues.len() {
        let ratio = eigenvalues[k] / eigenvalues[k - 1].max(floor);
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    best.0
}

/// Frame coordinates of the closed-form Killing basis fields.
fn closed_form_basis(mesh: &SurfaceMesh) -> Vec<Vec<f64>> {
    let m = mesh.manifold;
    (0..m.killing_dim())
        .map(|i| {
            let mut coeffs = vec![0.0; m.killing_dim()];
            coeffs[i] = 1.0;
            TangentField::killing(mesh, &KillingElement { coeffs }).frame_coords(mesh)
        })
        .collect()
}

/// `X(p) = log_p f(p)`.
pub fn log_field(f: &DiscreteMap) -> Result<TangentField> {
    let m = f.manifold();
    let vectors = f
        .mesh
        .vertices
        .iter()
        .zip(&f.images)
        .map(|(p, q)| m.log(p, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentField { vectors })
}

/// `f(p) = exp_p X(p)`.
pub fn exp_field(mesh: &Arc<SurfaceMesh>, x: &TangentField) -> Result<DiscreteMap> {
    x.check_mesh(mesh)?;
    let m = mesh.manifold;
    let images = mesh.vertices.iter().zip(&x.vectors).map(|(p, v)| m.exp(p, v)).collect();
    DiscreteMap::new(mesh.clone(), images)
}

/// Sup norm of a Killing field over the surface: |ω| for ω × x, |c| for
/// translations.
pub fn killing_c0_norm(k: &KillingElement) -> f64 {
    k.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `Y(p) = log_p φ_K(exp_p X(p))`, so that `exp Y = φ_K ∘ exp X`.
pub fn psi_k(mesh: &SurfaceMesh, x: &TangentField, k: &KillingElement) -> Result<TangentField> {
    x.check_mesh(mesh)?;
    let m = mesh.manifold;
    let limit = m.inj_radius() / 4.0;
    let xc = x.c0_norm();
    if xc > limit {
        return Err(Error::OutsideInjectivityRadius { distance: xc, inj_radius: m.inj_radius() });
    }
    let kc = killing_c0_norm(k);
    if kc > limit {
        return Err(Error::OutsideInjectivityRadius { distance: kc, inj_radius: m.inj_radius() });
    }
    psi_k_unchecked(mesh, x, &m.flow(k, 1.0))
}

fn psi_k_unchecked(mesh: &SurfaceMesh, x: &TangentField, phi: &IsometryElement) -> Result<TangentField> {
    let m = mesh.manifold;
    let vectors = mesh
        .vertices
        .iter()
        .zip(&x.vectors)
        .map(|(p, v)| m.log(p, &m.isometry_apply(phi, &m.exp(p, v))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentField { vectors })
}

/// Sampled Killing basis with its lumped L² Gram matrix.
#[derive(Clone, Debug)]
pub struct KillingBasis {
    pub fields: Vec<TangentField>,
    pub gram: DMatrix<f64>,
}

impl KillingBasis {
    pub fn new(mesh: &SurfaceMesh) -> Self {
        let m = mesh.manifold;
        let k = m.killing_dim();
        let fields: Vec<TangentField> = (0..k)
            .map(|i| {
                let mut coeffs = vec![0.0; k];
                coeffs[i] = 1.0;
                TangentField::killing(mesh, &KillingElement { coeffs })
            })
            .collect();
        let gram = DMatrix::from_fn(k, k, |i, j| fields[i].inner(&fields[j], mesh));
        Self { fields, gram }
    }

    /// Lumped L² norm of the field with coefficients `c`.
    pub fn l2_norm(&self, c: &[f64]) -> f64 {
        let c = DVector::from_column_slice(c);
        c.dot(&(&self.gram * &c)).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub max_iterations: usize,
    pub step_tol: f64,
    /// Radius of the admissible ball as a multiple of ‖X‖_{L²}.
    pub radius_factor: f64,
    /// Restart from ± each basis direction as well as from zero.
    pub multi_start: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { max_iterations: 50, step_tol: 1e-10, radius_factor: 5.0, multi_start: false }
    }
}

#[derive(Clone, Debug)]
pub struct KillingMinimum {
    pub k_bar: KillingElement,
    pub x_bar: TangentField,
    /// `‖X̄‖_{L²}`.
    pub value: f64,
    pub iterations: usize,
    /// Set when the line search failed from the start; `K = 0` is returned.
    pub fallback: bool,
    /// max_i |(X̄, K_i)| / (‖X̄‖² ‖K_i‖) over the basis fields.
    pub orthogonality_constant: Option<f64>,
}

/// Minimizes `K ↦ ‖Ψ_K X‖_{L²}` over Killing coefficients in the ball
/// `‖K‖_{L²} ≤ radius_factor·‖X‖_{L²}` by projected Gauss-Newton from `K = 0`.
pub fn minimize_killing(mesh: &SurfaceMesh, x: &TangentField, opts: &MinimizeOptions) -> Result<KillingMinimum> {
    x.check_mesh(mesh)?;
    let m = mesh.manifold;
    let basis = KillingBasis::new(mesh);
    let x_norm = x.l2_norm(mesh);
    let radius = opts.radius_factor * x_norm;
    let k = m.killing_dim();
    let zero = vec![0.0; k];
    if x_norm == 0.0 {
        return Ok(KillingMinimum {
            k_bar: KillingElement { coeffs: zero },
            x_bar: x.clone(),
            value: 0.0,
            iterations: 0,
            fallback: false,
            orthogonality_constant: None,
        });
    }
    let sqrt_w: Vec<f64> = mesh.vertex_weights.iter().map(|w| w.sqrt()).collect();
    let residual = |c: &[f64]| -> Result<DVector<f64>> {
        let y = psi_k_unchecked(mesh, x, &m.flow(&KillingElement { coeffs: c.to_vec() }, 1.0))?;
        let d = m.ambient_dim();
        Ok(DVector::from_fn(d * y.vectors.len(), |i, _| y.vectors[i / d][i % d] * sqrt_w[i / d]))
    };
    let project = |c: Vec<f64>| -> Vec<f64> {
        let norm = basis.l2_norm(&c);
        if norm > radius {
            c.iter().map(|v| v * radius / norm).collect()
        } else {
            c
        }
    };

    let run = |start: Vec<f64>| -> Result<(Vec<f64>, f64, usize, bool)> {
        let mut c = project(start);
        let mut r = residual(&c)?;
        let mut value = r.norm_squared();
        let mut iterations = 0;
        let mut failed = false;
        while iterations < opts.max_iterations {
            iterations += 1;
            let h = 1e-7;
            let mut jac = DMatrix::zeros(r.len(), k);
            for j in 0..k {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[j] += h;
                cm[j] -= h;
                let col = (residual(&cp)? - residual(&cm)?) / (2.0 * h);
                jac.set_column(j, &col);
            }
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &r;
            let Some(step) = jtj.clone().cholesky().map(|ch| -ch.solve(&grad)) else {
                return Err(Error::SolverFailure("singular Gauss-Newton system".into()));
            };
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial = project(c.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect());
                let rt = residual(&trial)?;
                let vt = rt.norm_squared();
                if vt < value {
                    accepted = Some((trial, rt, vt));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((trial, rt, vt)) = accepted else {
                // no descent: stationary up to roundoff unless nothing was gained yet
                let stationary = grad.norm() <= 1e-10 * (1.0 + value.sqrt()) * (1.0 + jtj.norm().sqrt());
                failed = iterations == 1 && !stationary && value > 1e-28;
                break;
            };
            let moved = c.iter().zip(&trial).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            c = trial;
            r = rt;
            value = vt;
            if moved < opts.step_tol {
                break;
            }
        }
        Ok((c, value, iterations, failed))
    };

    let mut starts = vec![zero.clone()];
    if opts.multi_start {
        for j in 0..k {
            for sign in [-1.0, 1.0] {
                let mut s = zero.clone();
                s[j] = sign * radius / basis.gram[(j, j)].sqrt() / 2.0;
                starts.push(s);
            }
        }
    }
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for s in starts {
        let outcome = run(s)?;
        if best.as_ref().is_none_or(|b| outcome.1 < b.1) {
            best = Some(outcome);
        }
    }
    let (mut c, _, iterations, fallback) = best.unwrap();
    if fallback {
        c = zero;
    }
    let k_bar = KillingElement { coeffs: c };
    let x_bar = psi_k_unchecked(mesh, x, &m.flow(&k_bar, 1.0))?;
    let value = x_bar.l2_norm(mesh);
    let orthogonality_constant = if value > 1e-14 {
        Some(
            basis
                .fields
                .iter()
                .map(|kf| x_bar.inner(kf, mesh).abs() / (value * value * kf.l2_norm(mesh)))
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(KillingMinimum { k_bar, x_bar, value, iterations, fallback, orthogonality_constant })
}

/// Remainders of the first-order metric deficit expansion at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeficitLinearization {
    pub epsilons: Vec<f64>,
    /// `R(ε) = |H(ε) − ε(A + Aᵀ)|`.
    pub remainders: Vec<f64>,
    /// `R(ε_{i+1}) / R(ε_i)`.
    pub ratios: Vec<f64>,
}

/// Finite-difference step for the pointwise differential.
const DEFICIT_FD_STEP: f64 = 1e-5;

/// Pullback-minus-identity metric at `p` of `q ↦ exp_q(ε X(q))` with
/// `X(q) = P_{p→q}(v + A log_p q)`, `v` and `A` in the frame at `p`.
pub fn pointwise_deficit(m: Manifold, p: &SurfacePoint, v: [f64; 2], a: &Matrix2<f64>, eps: f64) -> Result<Matrix2<f64>> {
    let frame = m.frame(p);
    let field = |q: &SurfacePoint| -> Result<DVector<f64>> {
        let l = frame_coords(m, p, &m.log(p, q)?);
        let w = nalgebra::Vector2::new(v[0], v[1]) + a * l;
        m.parallel_transport(p, q, &frame.vector([w[0], w[1]]))
    };
    let image = |q: &SurfacePoint| -> Result<DVector<f64>> { Ok(m.exp(q, &(field(q)? * eps)).ambient) };
    let s = DEFICIT_FD_STEP;
    let mut cols = Vec::with_capacity(2);
    for e in [&frame.e1, &frame.e2] {
        let plus = image(&m.exp(p, &(e * s)))?;
        let minus = image(&m.exp(p, &(e * -s)))?;
        cols.push((plus - minus) / (2.0 * s));
    }
    Ok(Matrix2::from_fn(|i, j| cols[i].dot(&cols[j]) - if i == j { 1.0 } else { 0.0 }))
}

pub fn deficit_linearization_check(
    m: Manifold,
    p: &SurfacePoint,
    v: [f64; 2],
    a: &Matrix2<f64>,
    epsilons: &[f64],
) -> Result<DeficitLinearization> {
    for &eps in epsilons {
        if !(eps > 0.0 && eps < m.inj_radius() / 4.0) {
            return Err(Error::InvalidArgument(format!("scale {eps} outside (0, inj/4)")));
        }
    }
    let first = a + a.transpose();
    let remainders = epsilons
        .iter()
        .map(|&eps| Ok((pointwise_deficit(m, p, v, a, eps)? - first * eps).norm()))
        .collect::<Result<Vec<f64>>>()?;
    let ratios = remainders.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(DeficitLinearization { epsilons: epsilons.to_vec(), remainders, ratios })
}
