//! Numerical toolkit for distance-to-isometry energies of self-maps of
//! compact embedded surfaces.
//!
//! The crate ships two closed-form manifolds (the unit sphere and the flat
//! Clifford torus), first-order triangle-mesh discretizations of maps
//! between them, the harmonic-map heat flow, discrete Killing fields and an
//! end-to-end pipeline recovering the nearest orientation-preserving
//! isometry of a map.

// negated comparisons are how NaN fails range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fields;
pub mod heatflow;
pub mod killing;
pub mod linalg;
pub mod manifold;
pub mod maps;
pub mod mesh;
pub mod optim;
pub mod piola;
pub mod rigidity;

pub use error::{Error, Result};
pub use fields::{SmoothField, TangentField};
pub use linalg::{FrameId, TangentMap};
pub use manifold::{IsometryElement, KillingElement, Manifold, SurfacePoint, TangentFrame, TangentVec};
pub use maps::DiscreteMap;
pub use mesh::SurfaceMesh;
