//! Closed-form calculus on the two shipped embedded surfaces: the unit
//! sphere S² ⊂ R³ and the flat Clifford torus T² ⊂ R⁴ with
//! ι(θ, φ) = (cos θ, sin θ, cos φ, sin φ).
//!
//! Orientation: the sphere is oriented by its outward normal, the torus by
//! the frame (e_θ, e_φ). Both injectivity radii are π.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sorted_svd;

/// Tolerance below the injectivity radius at which logarithms are refused.
const INJ_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    Sphere,
    FlatTorus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePoint {
    /// Sphere: unit vector in R³. Torus: (θ, φ) ∈ [0, 2π)².
    pub params: DVector<f64>,
    pub ambient: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec {
    pub base: SurfacePoint,
    pub ambient_vec: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentFrame {
    pub base: SurfacePoint,
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
}

impl TangentFrame {
    /// d×2 matrix with the frame vectors as columns.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&[self.e1.clone(), self.e2.clone()])
    }

    pub fn coords(&self, v: &DVector<f64>) -> [f64; 2] {
        [self.e1.dot(v), self.e2.dot(v)]
    }

    pub fn vector(&self, c: [f64; 2]) -> DVector<f64> {
        &self.e1 * c[0] + &self.e2 * c[1]
    }
}

/// Element of the Lie algebra of Isom₊(M), as coefficients over
/// [`Manifold::killing_basis`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KillingElement {
    pub coeffs: Vec<f64>,
}

impl KillingElement {
    pub fn zero(manifold: Manifold) -> Self {
        Self { coeffs: vec![0.0; manifold.killing_dim()] }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }
}

/// Element of the identity component of Isom₊(M).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometryElement {
    /// Row-major 3×3 rotation of the sphere.
    Rotation([[f64; 3]; 3]),
    /// Translation (Δθ, Δφ) of the torus.
    Translation([f64; 2]),
}

impl IsometryElement {
    pub fn identity(manifold: Manifold) -> Self {
        match manifold {
            Manifold::Sphere => Self::from_rotation(&Matrix3::identity()),
            Manifold::FlatTorus => Self::Translation([0.0, 0.0]),
        }
    }

    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        Self::Rotation([
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ])
    }

    pub fn rotation(&self) -> Option<Matrix3<f64>> {
        match self {
            Self::Rotation(r) => Some(Matrix3::from_fn(|i, j| r[i][j])),
            Self::Translation(_) => None,
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &IsometryElement) -> Self {
        match (self, other) {
            (Self::Rotation(_), Self::Rotation(_)) => {
                let a = self.rotation().unwrap();
                let b = other.rotation().unwrap();
                Self::from_rotation(&(a * b))
            }
            (Self::Translation(a), Self::Translation(b)) => {
                Self::Translation([wrap_angle(a[0] + b[0]), wrap_angle(a[1] + b[1])])
            }
            _ => panic!("cannot compose isometries of different manifolds"),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            Self::Rotation(_) => Self::from_rotation(&self.rotation().unwrap().transpose()),
            Self::Translation(t) => Self::Translation([wrap_angle(-t[0]), wrap_angle(-t[1])]),
        }
    }

    /// Bi-invariant distance: rotation angle of `selfᵀ other` on the sphere,
    /// flat quotient distance of the translations on the torus.
    pub fn group_distance(&self, other: &IsometryElement) -> f64 {
        match (self, other) {
            (Self::Rotation(_), Self::Rotation(_)) => {
                let rel = self.rotation().unwrap().transpose() * other.rotation().unwrap();
                let skew = Vector3::new(
                    rel[(2, 1)] - rel[(1, 2)],
                    rel[(0, 2)] - rel[(2, 0)],
                    rel[(1, 0)] - rel[(0, 1)],
                );
                let trace = rel.trace();
                skew.norm().atan2(trace - 1.0)
            }
            (Self::Translation(a), Self::Translation(b)) => {
                let d0 = wrap_angle(a[0] - b[0]);
                let d1 = wrap_angle(a[1] - b[1]);
                d0.hypot(d1)
            }
            _ => f64::INFINITY,
        }
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

fn dvec3(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn vec3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

impl Manifold {
    pub fn ambient_dim(self) -> usize {
        match self {
            Manifold::Sphere => 3,
            Manifold::FlatTorus => 4,
        }
    }

    pub fn intrinsic_dim(self) -> usize {
        2
    }

    pub fn inj_radius(self) -> f64 {
        PI
    }

    pub fn volume(self) -> f64 {
        match self {
            Manifold::Sphere => 4.0 * PI,
            Manifold::FlatTorus => 4.0 * PI * PI,
        }
    }

    pub fn killing_dim(self) -> usize {
        match self {
            Manifold::Sphere => 3,
            Manifold::FlatTorus => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Manifold::Sphere => "sphere",
            Manifold::FlatTorus => "flat_torus",
        }
    }

    pub fn sphere_point(v: &Vector3<f64>) -> SurfacePoint {
        let u = v.normalize();
        SurfacePoint { params: dvec3(&u), ambient: dvec3(&u) }
    }

    pub fn torus_point(theta: f64, phi: f64) -> SurfacePoint {
        let theta = theta.rem_euclid(TAU);
        let phi = phi.rem_euclid(TAU);
        SurfacePoint {
            params: DVector::from_vec(vec![theta, phi]),
            ambient: DVector::from_vec(vec![theta.cos(), theta.sin(), phi.cos(), phi.sin()]),
        }
    }

    /// Point with the given intrinsic parameters.
    pub fn point(self, params: &[f64]) -> Result<SurfacePoint> {
        match self {
            Manifold::Sphere => {
                if params.len() != 3 {
                    return Err(Error::InvalidArgument("sphere points have 3 parameters".into()));
                }
                let v = Vector3::new(params[0], params[1], params[2]);
                if !(v.norm() > 0.0) {
                    return Err(Error::DegenerateProjection(params.to_vec()));
                }
                Ok(Self::sphere_point(&v))
            }
            Manifold::FlatTorus => {
                if params.len() != 2 {
                    return Err(Error::InvalidArgument("torus points have 2 parameters".into()));
                }
                Ok(Self::torus_point(params[0], params[1]))
            }
        }
    }

    /// Closest-point projection onto ι(M).
    pub fn project(self, x: &DVector<f64>) -> Result<SurfacePoint> {
        if x.len() != self.ambient_dim() || x.iter().any(|c| !c.is_finite()) {
            return Err(Error::DegenerateProjection(x.iter().copied().collect()));
        }
        match self {
            Manifold::Sphere => {
                let v = vec3(x);
                if v.norm() == 0.0 {
                    return Err(Error::DegenerateProjection(x.iter().copied().collect()));
                }
                Ok(Self::sphere_point(&v))
            }
            Manifold::FlatTorus => {
                if x[0] == 0.0 && x[1] == 0.0 || x[2] == 0.0 && x[3] == 0.0 {
                    return Err(Error::DegenerateProjection(x.iter().copied().collect()));
                }
                Ok(Self::torus_point(x[1].atan2(x[0]), x[3].atan2(x[2])))
            }
        }
    }

    /// Largest deviation of an ambient point from the constraint defining ι(M).
    pub fn constraint_residual(self, x: &DVector<f64>) -> f64 {
        match self {
            Manifold::Sphere => (x.norm() - 1.0).abs(),
            Manifold::FlatTorus => {
                let a = (x[0].hypot(x[1]) - 1.0).abs();
                let b = (x[2].hypot(x[3]) - 1.0).abs();
                a.max(b)
            }
        }
    }

    /// Orthonormal frame of the normal space at `p`.
    pub fn normals(self, p: &SurfacePoint) -> Vec<DVector<f64>> {
        match self {
            Manifold::Sphere => vec![p.ambient.clone()],
            Manifold::FlatTorus => {
                let x = &p.ambient;
                vec![
                    DVector::from_vec(vec![x[0], x[1], 0.0, 0.0]),
                    DVector::from_vec(vec![0.0, 0.0, x[2], x[3]]),
                ]
            }
        }
    }

    /// Orthogonal projection of an ambient vector onto T_pι(M).
    pub fn tangent_project(self, p: &SurfacePoint, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for n in self.normals(p) {
            out -= &n * n.dot(v);
        }
        out
    }

    pub fn normal_part(self, p: &SurfacePoint, v: &DVector<f64>) -> DVector<f64> {
        v - self.tangent_project(p, v)
    }

    pub fn tangent_vec(self, p: &SurfacePoint, v: &DVector<f64>) -> TangentVec {
        TangentVec { base: p.clone(), ambient_vec: self.tangent_project(p, v) }
    }

    /// Deterministic positively oriented orthonormal frame of T_pι(M).
    ///
    /// Sphere: normalized ∂_θ, ∂_φ of the polar chart; at the poles the chart
    /// degenerates and the frame falls back to (±e_x, e_y).
    pub fn frame(self, p: &SurfacePoint) -> TangentFrame {
        match self {
            Manifold::Sphere => {
                let x = vec3(&p.ambient);
                let rho = x.x.hypot(x.y);
                let e1 = if rho < 1e-12 {
                    Vector3::new(x.z.signum(), 0.0, 0.0)
                } else {
                    let (cos_phi, sin_phi) = (x.x / rho, x.y / rho);
                    Vector3::new(x.z * cos_phi, x.z * sin_phi, -rho)
                };
                let e1 = (e1 - x * x.dot(&e1)).normalize();
                let e2 = x.cross(&e1);
                TangentFrame { base: p.clone(), e1: dvec3(&e1), e2: dvec3(&e2) }
            }
            Manifold::FlatTorus => {
                let x = &p.ambient;
                TangentFrame {
                    base: p.clone(),
                    e1: DVector::from_vec(vec![-x[1], x[0], 0.0, 0.0]),
                    e2: DVector::from_vec(vec![0.0, 0.0, -x[3], x[2]]),
                }
            }
        }
    }

    /// Second fundamental form `A(v, w) = Σ_i <w, d_v ν_i> ν_i` on ambient
    /// tangent vectors at `p`.
    pub fn sff(self, p: &SurfacePoint, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match self {
            Manifold::Sphere => &p.ambient * v.dot(w),
            Manifold::FlatTorus => {
                let x = &p.ambient;
                let a = v[0] * w[0] + v[1] * w[1];
                let b = v[2] * w[2] + v[3] * w[3];
                DVector::from_vec(vec![a * x[0], a * x[1], b * x[2], b * x[3]])
            }
        }
    }

    pub fn second_fundamental_form(
        self,
        p: &SurfacePoint,
        v: &TangentVec,
        w: &TangentVec,
    ) -> Result<DVector<f64>> {
        let same = |a: &SurfacePoint| (&a.ambient - &p.ambient).norm() <= 1e-12;
        if !same(&v.base) || !same(&w.base) {
            return Err(Error::FrameMismatch);
        }
        Ok(self.sff(p, &v.ambient_vec, &w.ambient_vec))
    }

    /// Trace extension `𝔸(X, Y) = Σ_α A(X e_α, Y e_α)` for d×n maps `X`, `Y`
    /// whose columns are images of an orthonormal source frame. Columns are
    /// tangent-projected at `p` first.
    pub fn trace_form(self, p: &SurfacePoint, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ambient_dim());
        for a in 0..x.ncols() {
            let xa = self.tangent_project(p, &x.column(a).into_owned());
            let ya = self.tangent_project(p, &y.column(a).into_owned());
            out += self.sff(p, &xa, &ya);
        }
        out
    }

    /// Geodesic distance.
    pub fn distance(self, p: &SurfacePoint, q: &SurfacePoint) -> f64 {
        match self {
            Manifold::Sphere => {
                let (a, b) = (vec3(&p.ambient), vec3(&q.ambient));
                a.cross(&b).norm().atan2(a.dot(&b))
            }
            Manifold::FlatTorus => {
                let d0 = wrap_angle(q.params[0] - p.params[0]);
                let d1 = wrap_angle(q.params[1] - p.params[1]);
                d0.hypot(d1)
            }
        }
    }

    pub fn exp(self, p: &SurfacePoint, v: &DVector<f64>) -> SurfacePoint {
        match self {
            Manifold::Sphere => {
                let x = vec3(&p.ambient);
                let v = vec3(v);
                let t = v.norm();
                if t == 0.0 {
                    return p.clone();
                }
                let y = x * t.cos() + v * (t.sin() / t);
                Self::sphere_point(&y)
            }
            Manifold::FlatTorus => {
                let f = self.frame(p);
                let [a, b] = f.coords(v);
                Self::torus_point(p.params[0] + a, p.params[1] + b)
            }
        }
    }

    /// Inverse of `exp_p` on the injectivity ball.
    pub fn log(self, p: &SurfacePoint, q: &SurfacePoint) -> Result<DVector<f64>> {
        let inj = self.inj_radius();
        match self {
            Manifold::Sphere => {
                let (x, y) = (vec3(&p.ambient), vec3(&q.ambient));
                let c = x.dot(&y);
                let perp = y - x * c;
                let s = perp.norm();
                let angle = s.atan2(c);
                if angle >= inj - INJ_MARGIN {
                    return Err(Error::OutsideInjectivityRadius { distance: angle, inj_radius: inj });
                }
                if s == 0.0 {
                    return Ok(DVector::zeros(3));
                }
                Ok(dvec3(&(perp * (angle / s))))
            }
            Manifold::FlatTorus => {
                let d0 = wrap_angle(q.params[0] - p.params[0]);
                let d1 = wrap_angle(q.params[1] - p.params[1]);
                let dist = d0.hypot(d1);
                if dist >= inj - INJ_MARGIN {
                    return Err(Error::OutsideInjectivityRadius { distance: dist, inj_radius: inj });
                }
                Ok(self.frame(p).vector([d0, d1]))
            }
        }
    }

    /// Parallel transport of `v ∈ T_pM` to `q` along the minimizing geodesic.
    pub fn parallel_transport(
        self,
        p: &SurfacePoint,
        q: &SurfacePoint,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let inj = self.inj_radius();
        let d = self.distance(p, q);
        if d >= inj - INJ_MARGIN {
            return Err(Error::OutsideInjectivityRadius { distance: d, inj_radius: inj });
        }
        match self {
            Manifold::Sphere => {
                let (x, y) = (&p.ambient, &q.ambient);
                let coef = y.dot(v) / (1.0 + x.dot(y));
                Ok(v - (x + y) * coef)
            }
            Manifold::FlatTorus => {
                let c = self.frame(p).coords(v);
                Ok(self.frame(q).vector(c))
            }
        }
    }

    /// Killing basis fields evaluated at `p`: ω_i × ι(p) on the sphere
    /// (ω_i the coordinate axes), e_θ and e_φ on the torus.
    pub fn killing_basis_at(self, p: &SurfacePoint) -> Vec<DVector<f64>> {
        match self {
            Manifold::Sphere => {
                let x = vec3(&p.ambient);
                (0..3)
                    .map(|i| {
                        let mut w = Vector3::zeros();
                        w[i] = 1.0;
                        dvec3(&w.cross(&x))
                    })
                    .collect()
            }
            Manifold::FlatTorus => {
                let f = self.frame(p);
                vec![f.e1, f.e2]
            }
        }
    }

    pub fn killing_field_at(self, k: &KillingElement, p: &SurfacePoint) -> DVector<f64> {
        let mut out = DVector::zeros(self.ambient_dim());
        for (c, b) in k.coeffs.iter().zip(self.killing_basis_at(p)) {
            out += b * *c;
        }
        out
    }

    /// Time-`t` flow of the Killing field `k`.
    pub fn flow(self, k: &KillingElement, t: f64) -> IsometryElement {
        match self {
            Manifold::Sphere => {
                let w = Vector3::new(k.coeffs[0], k.coeffs[1], k.coeffs[2]) * t;
                IsometryElement::from_rotation(Rotation3::from_scaled_axis(w).matrix())
            }
            Manifold::FlatTorus => {
                IsometryElement::Translation([wrap_angle(t * k.coeffs[0]), wrap_angle(t * k.coeffs[1])])
            }
        }
    }

    /// Killing element whose time-1 flow is `phi` (principal branch).
    pub fn flow_log(self, phi: &IsometryElement) -> KillingElement {
        match phi {
            IsometryElement::Rotation(_) => {
                let r = Rotation3::from_matrix_unchecked(phi.rotation().unwrap());
                let w = r.scaled_axis();
                KillingElement { coeffs: vec![w.x, w.y, w.z] }
            }
            IsometryElement::Translation(t) => KillingElement { coeffs: vec![t[0], t[1]] },
        }
    }

    pub fn isometry_apply(self, phi: &IsometryElement, p: &SurfacePoint) -> SurfacePoint {
        match (self, phi) {
            (Manifold::Sphere, IsometryElement::Rotation(_)) => {
                Self::sphere_point(&(phi.rotation().unwrap() * vec3(&p.ambient)))
            }
            (Manifold::FlatTorus, IsometryElement::Translation(t)) => {
                Self::torus_point(p.params[0] + t[0], p.params[1] + t[1])
            }
            _ => panic!("isometry does not act on {}", self.name()),
        }
    }

    /// Differential of an isometry acting on an ambient tangent vector.
    pub fn isometry_push(self, phi: &IsometryElement, p: &SurfacePoint, v: &DVector<f64>) -> DVector<f64> {
        match phi {
            IsometryElement::Rotation(_) => dvec3(&(phi.rotation().unwrap() * vec3(v))),
            IsometryElement::Translation(_) => {
                let c = self.frame(p).coords(v);
                self.frame(&self.isometry_apply(phi, p)).vector(c)
            }
        }
    }

    /// Weighted best fit of an isometry in the identity component mapping
    /// `sources[i]` to `targets[i]`.
    ///
    /// Sphere: SVD solution of argmin_R Σ w_i |y_i − R x_i|² over SO(3).
    /// Torus: weighted circular mean of the coordinate offsets.
    pub fn isometry_fit(
        self,
        sources: &[SurfacePoint],
        targets: &[SurfacePoint],
        weights: &[f64],
    ) -> Result<IsometryElement> {
        if sources.len() != targets.len() || sources.len() != weights.len() {
            return Err(Error::InvalidArgument("fit needs equally many sources, targets and weights".into()));
        }
        match self {
            Manifold::Sphere => {
                if sources.len() < 3 {
                    return Err(Error::DegenerateFit);
                }
                let mut h = DMatrix::<f64>::zeros(3, 3);
                for ((x, y), w) in sources.iter().zip(targets).zip(weights) {
                    h += &y.ambient * x.ambient.transpose() * *w;
                }
                let (u, sigma, v_t) = sorted_svd(&h);
                let total: f64 = weights.iter().map(|w| w.abs()).sum();
                if !(sigma[0] > 1e-300) || sigma[1] <= 1e-9 * sigma[0].max(total) {
                    return Err(Error::DegenerateFit);
                }
                let mut d = DMatrix::<f64>::identity(3, 3);
                if (&u * &v_t).determinant() < 0.0 {
                    d[(2, 2)] = -1.0;
                }
                let r = u * d * v_t;
                Ok(IsometryElement::from_rotation(&Matrix3::from_fn(|i, j| r[(i, j)])))
            }
            Manifold::FlatTorus => {
                if sources.is_empty() {
                    return Err(Error::DegenerateFit);
                }
                let mut shift = [0.0; 2];
                for (k, s) in shift.iter_mut().enumerate() {
                    let (mut sn, mut cs) = (0.0, 0.0);
                    for ((x, y), w) in sources.iter().zip(targets).zip(weights) {
                        let d = y.params[k] - x.params[k];
                        sn += w * d.sin();
                        cs += w * d.cos();
                    }
                    let total: f64 = weights.iter().map(|w| w.abs()).sum();
                    if sn.hypot(cs) <= 1e-9 * total {
                        return Err(Error::DegenerateFit);
                    }
                    *s = sn.atan2(cs);
                }
                Ok(IsometryElement::Translation(shift))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(m: Manifold, rng: &mut ChaCha8Rng) -> SurfacePoint {
        match m {
            Manifold::Sphere => loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm() > 0.1 && v.norm() < 1.0 {
                    break Manifold::sphere_point(&v);
                }
            },
            Manifold::FlatTorus => Manifold::torus_point(rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)),
        }
    }

    fn random_tangent(m: Manifold, p: &SurfacePoint, rng: &mut ChaCha8Rng, max_len: f64) -> DVector<f64> {
        let f = m.frame(p);
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let v = f.vector([a, b]);
        let len = rng.random_range(0.0..max_len);
        if v.norm() == 0.0 {
            v
        } else {
            &v * (len / v.norm())
        }
    }

    #[test]
    fn projection_examples() {
        let s = Manifold::Sphere.project(&DVector::from_vec(vec![2.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.ambient, DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let t = Manifold::FlatTorus.project(&DVector::from_vec(vec![2.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((t.ambient - DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0])).norm() < 1e-15);
        assert!(matches!(
            Manifold::Sphere.project(&DVector::zeros(3)),
            Err(Error::DegenerateProjection(_))
        ));
        assert!(matches!(
            Manifold::FlatTorus.project(&DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0])),
            Err(Error::DegenerateProjection(_))
        ));
    }

    #[test]
    fn projection_is_idempotent_and_its_differential_is_tangent_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            for _ in 0..20 {
                let p = random_point(m, &mut rng);
                let q = m.project(&p.ambient).unwrap();
                assert!((&q.ambient - &p.ambient).norm() < 1e-14);
                assert!(m.constraint_residual(&p.ambient) < 1e-14);
                let z = DVector::from_fn(m.ambient_dim(), |_, _| rng.random_range(-1.0..1.0));
                let h = 1e-5;
                let plus = m.project(&(&p.ambient + &z * h)).unwrap().ambient;
                let minus = m.project(&(&p.ambient - &z * h)).unwrap().ambient;
                let fd = (plus - minus) / (2.0 * h);
                assert!((fd - m.tangent_project(&p, &z)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn frames_are_orthonormal_and_oriented() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut points: Vec<SurfacePoint> = (0..50).map(|_| random_point(Manifold::Sphere, &mut rng)).collect();
        points.push(Manifold::sphere_point(&Vector3::z()));
        points.push(Manifold::sphere_point(&-Vector3::z()));
        for p in &points {
            let f = Manifold::Sphere.frame(p);
            assert!((f.e1.norm() - 1.0).abs() < 1e-12);
            assert!((f.e2.norm() - 1.0).abs() < 1e-12);
            assert!(f.e1.dot(&f.e2).abs() < 1e-12);
            assert!(f.e1.dot(&p.ambient).abs() < 1e-12);
            let n = vec3(&f.e1).cross(&vec3(&f.e2));
            assert!((n - vec3(&p.ambient)).norm() < 1e-12);
        }
        let p = random_point(Manifold::FlatTorus, &mut rng);
        let f = Manifold::FlatTorus.frame(&p);
        assert!(f.e1.dot(&f.e2).abs() < 1e-15);
        for n in Manifold::FlatTorus.normals(&p) {
            assert!(n.dot(&f.e1).abs() < 1e-15 && n.dot(&f.e2).abs() < 1e-15);
        }
    }

    #[test]
    fn second_fundamental_form_closed_forms() {
        let m = Manifold::Sphere;
        let p = Manifold::sphere_point(&Vector3::new(0.3, -0.5, 0.8));
        let f = m.frame(&p);
        let a = m.sff(&p, &f.e1, &f.e1);
        assert!((a - &p.ambient).norm() < 1e-14);

        let t = Manifold::FlatTorus;
        let (theta, phi) = (0.7, 2.1);
        let q = Manifold::torus_point(theta, phi);
        let ft = t.frame(&q);
        let a = t.sff(&q, &ft.e1, &ft.e1);
        let expected = DVector::from_vec(vec![theta.cos(), theta.sin(), 0.0, 0.0]);
        assert!((a - expected).norm() < 1e-14);
    }

    /// Finite-difference Hessian of the closest-point projection:
    /// <d²π(v, z), w> = −<z, A(v, w)>.
    #[test]
    fn second_fundamental_form_matches_projection_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            for _ in 0..10 {
                let p = random_point(m, &mut rng);
                let v = random_tangent(m, &p, &mut rng, 1.0);
                let w = random_tangent(m, &p, &mut rng, 1.0);
                let z = DVector::from_fn(m.ambient_dim(), |_, _| rng.random_range(-1.0..1.0));
                let h = 1e-4;
                let pi = |x: DVector<f64>| m.project(&x).unwrap().ambient;
                let x = &p.ambient;
                let d2 = (pi(x + &v * h + &z * h) - pi(x + &v * h - &z * h) - pi(x - &v * h + &z * h)
                    + pi(x - &v * h - &z * h))
                    / (4.0 * h * h);
                let lhs = d2.dot(&w);
                let rhs = -z.dot(&m.sff(&p, &v, &w));
                assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
                let sym = m.sff(&p, &v, &w) - m.sff(&p, &w, &v);
                assert!(sym.norm() < 1e-10);
                let a = m.sff(&p, &v, &w);
                assert!(m.tangent_project(&p, &a).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sff_rejects_mismatched_bases() {
        let m = Manifold::Sphere;
        let p = Manifold::sphere_point(&Vector3::x());
        let q = Manifold::sphere_point(&Vector3::y());
        let v = m.tangent_vec(&p, &DVector::from_vec(vec![0.0, 1.0, 0.0]));
        let w = m.tangent_vec(&q, &DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(m.second_fundamental_form(&p, &v, &w), Err(Error::FrameMismatch));
        assert!(m.second_fundamental_form(&p, &v, &v).is_ok());
    }

    #[test]
    fn trace_form_examples() {
        let m = Manifold::Sphere;
        let p = Manifold::sphere_point(&Vector3::new(1.0, 2.0, -0.5));
        let id = m.frame(&p).matrix();
        assert!((m.trace_form(&p, &id, &id) - &p.ambient * 2.0).norm() < 1e-14);
        let zero = DMatrix::zeros(3, 2);
        assert!(m.trace_form(&p, &zero, &zero).norm() == 0.0);

        let t = Manifold::FlatTorus;
        let (theta, phi) = (1.2, 4.0);
        let q = Manifold::torus_point(theta, phi);
        let id = t.frame(&q).matrix();
        let expected = DVector::from_vec(vec![theta.cos(), theta.sin(), phi.cos(), phi.sin()]);
        assert!((t.trace_form(&q, &id, &id) - expected).norm() < 1e-14);
    }

    #[test]
    fn trace_form_is_frame_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            let p = random_point(m, &mut rng);
            let x = m.frame(&p).matrix() * DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let y = m.frame(&p).matrix() * DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let q = crate::linalg::rotation2(0.83);
            let a = m.trace_form(&p, &x, &y);
            let b = m.trace_form(&p, &(&x * &q), &(&y * &q));
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn exp_log_examples() {
        let m = Manifold::Sphere;
        let north = Manifold::sphere_point(&Vector3::z());
        assert_eq!(m.exp(&north, &DVector::zeros(3)), north);
        let v = DVector::from_vec(vec![PI / 2.0, 0.0, 0.0]);
        let q = m.exp(&north, &v);
        assert!((q.ambient - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-15);
        let south = Manifold::sphere_point(&-Vector3::z());
        assert!(matches!(m.log(&north, &south), Err(Error::OutsideInjectivityRadius { .. })));
        let t = Manifold::FlatTorus;
        assert!(matches!(
            t.log(&Manifold::torus_point(0.0, 0.0), &Manifold::torus_point(PI, 0.0)),
            Err(Error::OutsideInjectivityRadius { .. })
        ));
    }

    #[test]
    fn exp_log_round_trip_and_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            for _ in 0..100 {
                let p = random_point(m, &mut rng);
                let v = random_tangent(m, &p, &mut rng, PI / 2.0);
                let q = m.exp(&p, &v);
                let back = m.log(&p, &q).unwrap();
                assert!((&back - &v).norm() < 1e-12);
                assert!((m.distance(&p, &q) - v.norm()).abs() < 1e-12);
                let w = random_tangent(m, &p, &mut rng, 3.0);
                assert!((m.distance(&p, &m.exp(&p, &w)) - w.norm()).abs() < 1e-12);
            }
        }
    }

    /// Integrate the sphere geodesic equation x'' = −|x'|² x with RK4 and
    /// compare with the closed-form exponential.
    #[test]
    fn sphere_exp_matches_geodesic_ode() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = Manifold::Sphere;
        for _ in 0..5 {
            let p = random_point(m, &mut rng);
            let v = random_tangent(m, &p, &mut rng, 1.5);
            let (mut x, mut u) = (vec3(&p.ambient), vec3(&v));
            let steps = 2000;
            let h = 1.0 / steps as f64;
            let rhs = |x: Vector3<f64>, u: Vector3<f64>| (u, -x * u.norm_squared());
            for _ in 0..steps {
                let (k1x, k1u) = rhs(x, u);
                let (k2x, k2u) = rhs(x + k1x * (h / 2.0), u + k1u * (h / 2.0));
                let (k3x, k3u) = rhs(x + k2x * (h / 2.0), u + k2u * (h / 2.0));
                let (k4x, k4u) = rhs(x + k3x * h, u + k3u * h);
                x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
                u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
            }
            assert!((x - vec3(&m.exp(&p, &v).ambient)).norm() < 1e-10);
        }
    }

    #[test]
    fn parallel_transport_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            for _ in 0..100 {
                let p = random_point(m, &mut rng);
                let v = random_tangent(m, &p, &mut rng, 2.0);
                let q = m.exp(&p, &random_tangent(m, &p, &mut rng, 2.5));
                let w = m.parallel_transport(&p, &q, &v).unwrap();
                assert!((w.norm() - v.norm()).abs() < 1e-12);
                assert!(m.normal_part(&q, &w).norm() < 1e-12);
                let same = m.parallel_transport(&p, &p, &v).unwrap();
                assert!((same - &v).norm() < 1e-14);
            }
        }
        // geodesic velocity is transported to geodesic velocity
        let m = Manifold::Sphere;
        let p = random_point(m, &mut rng);
        let u = random_tangent(m, &p, &mut rng, 1.0);
        let q = m.exp(&p, &u);
        let moved = m.parallel_transport(&p, &q, &u).unwrap();
        let velocity = -m.log(&q, &p).unwrap();
        assert!((moved - velocity).norm() < 1e-12);
    }

    #[test]
    fn killing_flows_are_isometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        assert_eq!(Manifold::Sphere.killing_dim(), 3);
        assert_eq!(Manifold::FlatTorus.killing_dim(), 2);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            let k = KillingElement { coeffs: (0..m.killing_dim()).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let phi = m.flow(&k, 1.0);
            for _ in 0..100 {
                let p = random_point(m, &mut rng);
                let q = random_point(m, &mut rng);
                let (a, b) = (m.isometry_apply(&phi, &p), m.isometry_apply(&phi, &q));
                assert!((m.distance(&a, &b) - m.distance(&p, &q)).abs() < 1e-12);
            }
            // the generator is the time derivative of the flow
            let p = random_point(m, &mut rng);
            let h = 1e-6;
            let plus = m.isometry_apply(&m.flow(&k, h), &p).ambient;
            let minus = m.isometry_apply(&m.flow(&k, -h), &p).ambient;
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - m.killing_field_at(&k, &p)).norm() < 1e-8);
            let back = m.flow_log(&phi);
            assert!(m.flow(&back, 1.0).group_distance(&phi) < 1e-12);
        }
    }

    #[test]
    fn isometry_fit_recovers_exact_isometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            let k = KillingElement { coeffs: (0..m.killing_dim()).map(|_| rng.random_range(-2.0..2.0)).collect() };
            let phi = m.flow(&k, 1.0);
            let xs: Vec<SurfacePoint> = (0..20).map(|_| random_point(m, &mut rng)).collect();
            let ys: Vec<SurfacePoint> = xs.iter().map(|x| m.isometry_apply(&phi, x)).collect();
            let w: Vec<f64> = (0..20).map(|_| rng.random_range(0.5..1.5)).collect();
            let fit = m.isometry_fit(&xs, &ys, &w).unwrap();
            assert!(fit.group_distance(&phi) < 1e-10);
            let id = m.isometry_fit(&xs, &xs, &w).unwrap();
            assert!(id.group_distance(&IsometryElement::identity(m)) < 1e-12);
        }
    }

    #[test]
    fn isometry_fit_degenerate_inputs() {
        let m = Manifold::Sphere;
        let p = Manifold::sphere_point(&Vector3::x());
        let pts = vec![p.clone(), p.clone(), p.clone()];
        assert_eq!(m.isometry_fit(&pts, &pts, &[1.0, 1.0, 1.0]), Err(Error::DegenerateFit));
        assert_eq!(m.isometry_fit(&pts[..2], &pts[..2], &[1.0, 1.0]), Err(Error::DegenerateFit));
    }

    /// Monte Carlo: noisy pairs give recovery error proportional to the noise.
    #[test]
    fn isometry_fit_error_scales_with_noise() {
        let m = Manifold::Sphere;
        let mut mean_err = Vec::new();
        for eta in [1e-3, 1e-2] {
            let mut rng = ChaCha8Rng::seed_from_u64(20);
            let mut total = 0.0;
            let trials = 200;
            for _ in 0..trials {
                let k = KillingElement { coeffs: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect() };
                let phi = m.flow(&k, 1.0);
                let xs: Vec<SurfacePoint> = (0..30).map(|_| random_point(m, &mut rng)).collect();
                let ys: Vec<SurfacePoint> = xs
                    .iter()
                    .map(|x| {
                        let y = m.isometry_apply(&phi, x);
                        let noise = random_tangent(m, &y, &mut rng, 1.0).normalize() * eta;
                        m.exp(&y, &noise)
                    })
                    .collect();
                let fit = m.isometry_fit(&xs, &ys, &vec![1.0; 30]).unwrap();
                total += fit.group_distance(&phi);
            }
            mean_err.push(total / trials as f64);
        }
        let ratio = mean_err[1] / mean_err[0];
        assert!((ratio - 10.0).abs() <= 3.0, "ratio {ratio}");
    }

    /// chord ≤ arc ≤ (π/2)·chord.
    #[test]
    fn chord_and_geodesic_distance_are_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in [Manifold::Sphere, Manifold::FlatTorus] {
            let mut worst: f64 = 1.0;
            for _ in 0..2000 {
                let p = random_point(m, &mut rng);
                let q = random_point(m, &mut rng);
                let chord = (&p.ambient - &q.ambient).norm();
                let arc = m.distance(&p, &q);
                assert!(chord <= arc + 1e-12);
                assert!(arc <= (PI / 2.0 + 1e-9) * chord);
                if chord > 0.0 {
                    worst = worst.max(arc / chord);
                }
            }
            assert!(worst > 1.0 && worst <= PI / 2.0 + 1e-9);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-16);
    }
}
