//! Linear maps between oriented inner-product spaces of equal dimension.
//!
//! A [`TangentMap`] is stored as the matrix of the map in a pair of positively
//! oriented orthonormal frames. Every quantity exposed here (determinant,
//! cofactor, Hilbert-Schmidt norm, distance to the orientation-preserving
//! isometries) is invariant under a change of either frame by a rotation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Identifies the orthonormal frame a matrix is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameId {
    /// Coordinate frame of R^n.
    Standard,
    /// Tangent frame at a mesh vertex.
    Vertex(usize),
    /// Frame of a source face.
    Face(usize),
    /// Tangent frame at the image point of a face.
    FaceImage(usize),
    /// Frame at an arbitrary surface point.
    Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentMap {
    pub matrix: DMatrix<f64>,
    pub frame_src: FrameId,
    pub frame_dst: FrameId,
}

impl TangentMap {
    pub fn new(matrix: DMatrix<f64>, frame_src: FrameId, frame_dst: FrameId) -> Self {
        assert!(matrix.is_square(), "tangent maps act between spaces of equal dimension");
        Self { matrix, frame_src, frame_dst }
    }

    /// Map expressed in the standard frames on both sides.
    pub fn standard(matrix: DMatrix<f64>) -> Self {
        Self::new(matrix, FrameId::Standard, FrameId::Standard)
    }

    pub fn from_row_slice(n: usize, entries: &[f64]) -> Self {
        Self::standard(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn identity(n: usize) -> Self {
        Self::standard(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self::standard(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|x| x.is_finite())
    }

    /// Adjoint map; the frames swap roles.
    pub fn transpose(&self) -> Self {
        Self::new(self.matrix.transpose(), self.frame_dst, self.frame_src)
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &TangentMap) -> Self {
        Self::new(&self.matrix * &other.matrix, other.frame_src, self.frame_dst)
    }

    pub fn det(&self) -> f64 {
        match self.dim() {
            0 => 1.0,
            1 => self.matrix[(0, 0)],
            2 => {
                let m = &self.matrix;
                m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
            }
            _ => self.matrix.determinant(),
        }
    }

    /// Cofactor map, the gradient of the determinant: `<Cof A, B> = d/dt Det(A + tB)`.
    pub fn cof(&self) -> Self {
        let n = self.dim();
        let m = &self.matrix;
        let cof = match n {
            0 => DMatrix::zeros(0, 0),
            1 => DMatrix::from_element(1, 1, 1.0),
            2 => DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(1, 0)], -m[(0, 1)], m[(0, 0)]]),
            _ => DMatrix::from_fn(n, n, |i, j| {
                let minor = m.clone().remove_row(i).remove_column(j).determinant();
                if (i + j) % 2 == 0 {
                    minor
                } else {
                    -minor
                }
            }),
        };
        Self::new(cof, self.frame_src, self.frame_dst)
    }

    pub fn det_and_cof(&self) -> (f64, Self) {
        (self.det(), self.cof())
    }

    /// Hilbert-Schmidt inner product.
    pub fn inner(&self, other: &TangentMap) -> f64 {
        self.matrix.dot(&other.matrix)
    }

    /// Hilbert-Schmidt norm.
    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Singular values in non-increasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.matrix.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub fn is_rotation(&self, tol: f64) -> bool {
        let n = self.dim();
        let gram = self.matrix.transpose() * &self.matrix;
        (gram - DMatrix::identity(n, n)).norm() <= tol && self.det() > 0.0
    }

    /// Distance to the orientation-preserving isometries together with a
    /// nearest one.
    ///
    /// When `det < 0` and the two smallest singular values coincide the
    /// minimizer is not unique; the SVD sign-flip construction picks one.
    pub fn dist_to_so(&self) -> (f64, TangentMap) {
        let n = self.dim();
        let (u, sigma, v_t) = sorted_svd(&self.matrix);
        let det = self.det();
        let mut dist2 = 0.0;
        for (i, s) in sigma.iter().enumerate() {
            let target = if det < 0.0 && i + 1 == n { -1.0 } else { 1.0 };
            dist2 += (s - target).powi(2);
        }
        let mut d = DMatrix::<f64>::identity(n, n);
        if n > 0 && (&u * &v_t).determinant() < 0.0 {
            d[(n - 1, n - 1)] = -1.0;
        }
        let nearest = u * d * v_t;
        (dist2.sqrt(), Self::new(nearest, self.frame_src, self.frame_dst))
    }

    pub fn dist_to_so_value(&self) -> f64 {
        let n = self.dim();
        let sigma = self.singular_values();
        let det = self.det();
        sigma
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let target = if det < 0.0 && i + 1 == n { -1.0 } else { 1.0 };
                (s - target).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// SVD `m = U diag(σ) Vᵀ` with σ sorted non-increasing.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), n, |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(n, v_t.ncols(), |r, c| v_t[(order[r], c)]);
    (u_sorted, sigma, vt_sorted)
}

/// Rotation of R^2 by `angle`.
pub fn rotation2(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}
