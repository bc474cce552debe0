//! Projected semi-implicit harmonic map heat flow.
//!
//! Each step solves `(M + dt K) U⁺ = M U` componentwise (lumped mass `M`,
//! cotangent stiffness `K`) and then moves every vertex to its closest point
//! on the surface.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{check_exponent, DiscreteMap};
use crate::mesh::{compensated_sum, SurfaceMesh};
use crate::piola::almost_harmonic_parts;

/// Accepted energy increase per step.
pub const ENERGY_SLACK: f64 = 1e-10;
pub const MAX_HALVINGS: usize = 10;

/// One row of the monitor series.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    pub dirichlet_energy: f64,
    pub w1p_dist_to_initial: f64,
    pub max_face_grad: f64,
    pub constraint_residual: f64,
}

pub const MONITOR_HEADER: &str = "step,t,dirichlet_energy,w1p_dist_to_initial,max_face_grad,constraint_residual";

impl MonitorRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.step, self.t, self.dirichlet_energy, self.w1p_dist_to_initial, self.max_face_grad, self.constraint_residual
        )
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub steps: usize,
    pub map: DiscreteMap,
    pub dirichlet_energy: f64,
    pub history: Vec<MonitorRow>,
}

/// Default time step `1e-3·h²` for a mesh of size `h`.
pub fn default_dt(mesh: &SurfaceMesh) -> f64 {
    1e-3 * mesh.mesh_size * mesh.mesh_size
}

pub const DEFAULT_T1: f64 = 0.05;

/// Approximate number of monitor rows kept by [`smooth`].
pub const MONITOR_ROWS: usize = 200;

/// Stepper for one mesh; caches the factorization for the last time step used.
pub struct HeatFlow {
    mesh: Arc<SurfaceMesh>,
    stiffness: CsrMatrix<f64>,
    /// Exponent of the W^{1,p} monitor.
    p: f64,
    factor: Option<(f64, CscCholesky<f64>)>,
    reference: Option<DiscreteMap>,
    /// Record a monitor row every this many steps.
    pub monitor_every: usize,
}

impl HeatFlow {
    pub fn new(mesh: &Arc<SurfaceMesh>, p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self { mesh: mesh.clone(), stiffness: mesh.cotan_stiffness(), p, factor: None, reference: None, monitor_every: 1 })
    }

    fn positions(map: &DiscreteMap) -> DMatrix<f64> {
        let d = map.manifold().ambient_dim();
        DMatrix::from_fn(map.images.len(), d, |i, k| map.images[i].ambient[k])
    }

    /// `K U` row by row.
    fn apply_stiffness(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(u.nrows(), u.ncols());
        for (i, j, v) in self.stiffness.triplet_iter() {
            for k in 0..u.ncols() {
                out[(i, k)] += v * u[(j, k)];
            }
        }
        out
    }

    /// Discrete Dirichlet energy `½ tr(Uᵀ K U)` of the piecewise linear
    /// interpolant of the ambient positions.
    pub fn dirichlet_energy(&self, map: &DiscreteMap) -> f64 {
        let u = Self::positions(map);
        let ku = self.apply_stiffness(&u);
        0.5 * compensated_sum((0..u.nrows()).map(|i| u.row(i).dot(&ku.row(i))))
    }

    /// Explicit rate: the tangential part of `−M⁻¹ K U` at each vertex, the
    /// discrete counterpart of `Δ U + 𝔸(dU, dU)`.
    pub fn explicit_rate(&self, map: &DiscreteMap) -> Vec<DVector<f64>> {
        let m = map.manifold();
        let u = Self::positions(map);
        let ku = self.apply_stiffness(&u);
        (0..u.nrows())
            .map(|i| {
                let lap = -ku.row(i).transpose() / self.mesh.vertex_weights[i];
                m.tangent_project(&map.images[i], &lap)
            })
            .collect()
    }

    fn factorization(&mut self, dt: f64) -> Result<&CscCholesky<f64>> {
        let stale = !matches!(&self.factor, Some((cached, _)) if *cached == dt);
        if stale {
            let n = self.mesh.num_vertices();
            let mut coo = CooMatrix::new(n, n);
            for (i, w) in self.mesh.vertex_weights.iter().enumerate() {
                coo.push(i, i, *w);
            }
            for (i, j, v) in self.stiffness.triplet_iter() {
                coo.push(i, j, dt * v);
            }
            let chol = CscCholesky::factor(&CscMatrix::from(&coo)).map_err(|e| Error::SolverFailure(format!("{e:?}")))?;
            self.factor = Some((dt, chol));
        }
        Ok(&self.factor.as_ref().unwrap().1)
    }

    /// One heat step followed by reprojection, without the energy check.
    pub fn raw_step(&mut self, map: &DiscreteMap, dt: f64) -> Result<DiscreteMap> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let m = map.manifold();
        let u = Self::positions(map);
        let mu = DMatrix::from_fn(u.nrows(), u.ncols(), |i, k| self.mesh.vertex_weights[i] * u[(i, k)]);
        let next = self.factorization(dt)?.solve(&mu);
        let images = (0..next.nrows())
            .map(|i| m.project(&next.row(i).transpose()))
            .collect::<Result<Vec<_>>>()?;
        DiscreteMap::new(map.mesh.clone(), images)
    }

    pub fn start(&mut self, map: &DiscreteMap) -> Result<FlowState> {
        if !map.same_mesh(&DiscreteMap::identity(&self.mesh)) {
            return Err(Error::MeshMismatch);
        }
        self.reference = Some(map.clone());
        let energy = self.dirichlet_energy(map);
        let mut state = FlowState { t: 0.0, steps: 0, map: map.clone(), dirichlet_energy: energy, history: Vec::new() };
        let row = self.monitor(&state)?;
        state.history.push(row);
        Ok(state)
    }

    fn monitor(&self, state: &FlowState) -> Result<MonitorRow> {
        let reference = self.reference.as_ref().unwrap_or(&state.map);
        Ok(MonitorRow {
            step: state.steps,
            t: state.t,
            dirichlet_energy: state.dirichlet_energy,
            w1p_dist_to_initial: state.map.sobolev_distance(reference, self.p)?,
            max_face_grad: state.map.max_face_gradient()?,
            constraint_residual: state.map.max_constraint_residual(),
        })
    }

    /// Advances by `dt`, halving on energy increase; returns the step taken.
    pub fn step(&mut self, state: &mut FlowState, dt: f64) -> Result<f64> {
        let mut dt = dt;
        for _ in 0..=MAX_HALVINGS {
            let next = self.raw_step(&state.map, dt)?;
            let energy = self.dirichlet_energy(&next);
            if energy <= state.dirichlet_energy + ENERGY_SLACK {
                state.map = next;
                state.dirichlet_energy = energy;
                state.t += dt;
                state.steps += 1;
                if state.steps.is_multiple_of(self.monitor_every.max(1)) {
                    let row = self.monitor(state)?;
                    state.history.push(row);
                }
                return Ok(dt);
            }
            dt *= 0.5;
        }
        Err(Error::StepRejected { halvings: MAX_HALVINGS })
    }
}

/// Outcome of [`smooth`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothReport {
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    pub p: f64,
    /// ‖smoothed − f‖ in W^{1,p}.
    pub w1p_dist: f64,
    pub h_norm: f64,
    pub h_prime_norm: f64,
    /// `w1p_dist / (‖h‖ + ‖h'‖)`; `None` when the denominator is below 1e-10.
    pub ratio: Option<f64>,
    /// Max face |df| of the smoothed map.
    pub max_face_grad: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    #[serde(skip)]
    pub history: Vec<MonitorRow>,
}

/// Runs the flow from `f` up to time `t_end`. `bound` is the Lipschitz bound
/// used for the almost-harmonicity norms of `f`.
pub fn smooth(f: &DiscreteMap, t_end: f64, dt: f64, p: f64, bound: f64) -> Result<(DiscreteMap, SmoothReport)> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("flow time {t_end} must be positive")));
    }
    let mesh = f.mesh.clone();
    let parts = almost_harmonic_parts(f, bound)?;
    let h_norm = parts.h_norm(&mesh, p);
    let h_prime_norm = parts.h_prime_norm(&mesh, p);
    let mut flow = HeatFlow::new(&mesh, p)?;
    flow.monitor_every = ((t_end / dt).ceil() as usize / MONITOR_ROWS).max(1);
    let mut state = flow.start(f)?;
    let initial_energy = state.dirichlet_energy;
    while state.t < t_end * (1.0 - 1e-12) {
        let remaining = t_end - state.t;
        flow.step(&mut state, dt.min(remaining))?;
    }
    if state.history.last().is_some_and(|r| r.step != state.steps) {
        let row = flow.monitor(&state)?;
        state.history.push(row);
    }
    let w1p_dist = state.map.sobolev_distance(f, p)?;
    let denom = h_norm + h_prime_norm;
    let report = SmoothReport {
        t_end,
        dt,
        steps: state.steps,
        p,
        w1p_dist,
        h_norm,
        h_prime_norm,
        ratio: if denom < 1e-10 { None } else { Some(w1p_dist / denom) },
        max_face_grad: state.map.max_face_gradient()?,
        initial_energy,
        final_energy: state.dirichlet_energy,
        history: state.history,
    };
    Ok((state.map, report))
}

/// One-step defect `‖U(dt) − U − dt·rate(U)‖_{L²}` of the projected scheme
/// against the explicit rate.
pub fn one_step_defect(flow: &mut HeatFlow, map: &DiscreteMap, dt: f64) -> Result<f64> {
    let next = flow.raw_step(map, dt)?;
    let rate = flow.explicit_rate(map);
    let mesh = map.mesh.clone();
    let defect: Vec<f64> = (0..mesh.num_vertices())
        .map(|i| (&next.images[i].ambient - &map.images[i].ambient - &rate[i] * dt).norm_squared())
        .collect();
    Ok(mesh.integrate_vertices(|i| defect[i]).sqrt())
}
