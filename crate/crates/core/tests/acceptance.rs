//! Acceptance suite: one line per criterion with the measured quantities,
//! the runtime and the verdict. Exits non-zero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix2, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigidlab::fields::{AmbientPolyField, SmoothField};
use rigidlab::heatflow::{default_dt, one_step_defect, smooth, HeatFlow, DEFAULT_T1, ENERGY_SLACK};
use rigidlab::killing::{deficit_linearization_check, korn_nullspace, minimize_killing, MinimizeOptions};
use rigidlab::linalg::{rotation2, TangentMap};
use rigidlab::mesh::default_resolution;
use rigidlab::piola::{degree, piola_residual};
use rigidlab::rigidity::{log_ladder, nearest_isometry, random_isometry, scaling_study, PipelineConfig};
use rigidlab::{DiscreteMap, IsometryElement, KillingElement, Manifold, SurfaceMesh, TangentField};

struct Verdict {
    pass: bool,
    detail: String,
}

fn mesh(m: Manifold, res: usize) -> Arc<SurfaceMesh> {
    Arc::new(SurfaceMesh::build(m, res).unwrap())
}

fn default_mesh(m: Manifold) -> Arc<SurfaceMesh> {
    mesh(m, default_resolution(m))
}

fn random_rotation3(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let r = random_isometry(Manifold::Sphere, rng).rotation().unwrap();
    DMatrix::from_fn(3, 3, |i, j| r[(i, j)])
}

/// min over sampled rotations of |F − R|: a uniform pass, then a local pass
/// around the best uniform sample.
fn brute_force_dist(f: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let n = f.nrows();
    let samples = 100_000;
    let sample = |rng: &mut ChaCha8Rng| -> DMatrix<f64> {
        if n == 2 {
            rotation2(rng.random_range(0.0..2.0 * PI))
        } else {
            random_rotation3(rng)
        }
    };
    let mut best = sample(rng);
    let mut best_d = (f - &best).norm();
    for _ in 0..samples {
        let r = sample(rng);
        let d = (f - &r).norm();
        if d < best_d {
            best_d = d;
            best = r;
        }
    }
    let mut scale = 0.05;
    for round in 0..samples {
        let r = if n == 2 {
            rotation2(rng.random_range(-scale..scale)) * &best
        } else {
            let w = Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale));
            let q = Rotation3::from_scaled_axis(w);
            DMatrix::from_fn(3, 3, |i, j| q[(i, j)]) * &best
        };
        let d = (f - &r).norm();
        if d < best_d {
            best_d = d;
            best = r;
        }
        if round % 10_000 == 9_999 {
            scale *= 0.5;
        }
    }
    best_d
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst_oracle: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for n in [2usize, 3] {
        for _ in 0..20 {
            let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            let formula = TangentMap::standard(f.clone()).dist_to_so_value();
            let brute = brute_force_dist(&f, &mut rng);
            // the sampled minimum can only be larger than the true one
            worst_oracle = worst_oracle.max((brute - formula).max(formula - brute - 1e-12));

            let a = TangentMap::standard(f.clone());
            let (det, cof) = (a.det(), a.cof());
            let id = DMatrix::<f64>::identity(n, n) * det;
            worst_identity = worst_identity.max((f.transpose() * &cof.matrix - id).norm());
            let (q1, q2) = if n == 2 {
                (rotation2(rng.random_range(0.0..6.0)), rotation2(rng.random_range(0.0..6.0)))
            } else {
                (random_rotation3(&mut rng), random_rotation3(&mut rng))
            };
            let moved = TangentMap::standard(&q1 * &f * &q2).dist_to_so_value();
            worst_identity = worst_identity.max((moved - formula).abs());
            let rot = TangentMap::standard(q1.clone());
            worst_identity = worst_identity.max((rot.cof().matrix - &q1).norm());
        }
    }
    Verdict {
        pass: worst_oracle <= 1e-2 && worst_identity <= 1e-12,
        detail: format!("max |svd - brute force| = {worst_oracle:.2e} (tol 1e-2), max identity defect = {worst_identity:.2e} (tol 1e-12)"),
    }
}

fn criterion_2() -> Verdict {
    let errors: Vec<f64> = (2..=4).map(|l| (mesh(Manifold::Sphere, l).total_area() - 4.0 * PI).abs()).collect();
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let torus_err = [8, 13, 24, 40]
        .iter()
        .map(|&n| (mesh(Manifold::FlatTorus, n).total_area() - 4.0 * PI * PI).abs())
        .fold(0.0, f64::max);
    let ok = ratios.iter().all(|r| (r - 4.0).abs() <= 1.0) && torus_err <= 1e-10;
    Verdict {
        pass: ok,
        detail: format!(
            "sphere area error ratios L2/L3 = {:.3}, L3/L4 = {:.3} (4 ± 25%), torus area error = {torus_err:.1e} (tol 1e-10)",
            ratios[0], ratios[1]
        ),
    }
}

fn criterion_3() -> Verdict {
    let meshes: Vec<_> = (2..=4).map(|l| mesh(Manifold::Sphere, l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let id = IsometryElement::identity(Manifold::Sphere);
    let fields: Vec<SmoothField> = (0..5).map(|_| SmoothField::random_non_killing(Manifold::Sphere, &mut rng)).collect();
    let tests: Vec<AmbientPolyField> = (0..5).map(|_| AmbientPolyField::random(Manifold::Sphere, &mut rng)).collect();
    // per map, the residual is the largest |r(ξ)| over the test fields
    let mut min_factor = f64::INFINITY;
    let mut min_pair_factor = f64::INFINITY;
    for x in &fields {
        let maps: Vec<DiscreteMap> = meshes.iter().map(|s| DiscreteMap::exp_of_field(s, x, 0.3, &id)).collect();
        let mut worst = [0.0f64; 3];
        for xi in &tests {
            let res: Vec<f64> =
                maps.iter().zip(&meshes).map(|(f, s)| piola_residual(f, &xi.sample(s)).unwrap().abs()).collect();
            for (w, r) in worst.iter_mut().zip(&res) {
                *w = w.max(*r);
            }
            min_pair_factor = min_pair_factor.min(res[0] / res[1]).min(res[1] / res[2]);
        }
        min_factor = min_factor.min(worst[0] / worst[1]).min(worst[1] / worst[2]);
    }
    Verdict {
        pass: min_factor >= 1.7,
        detail: format!(
            "smallest reduction per subdivision of max_ξ |residual| over 5 maps = {min_factor:.3} (need >= 1.7); smallest single-pair reduction = {min_pair_factor:.3}"
        ),
    }
}

fn criterion_4() -> Verdict {
    let s = default_mesh(Manifold::Sphere);
    let t = default_mesh(Manifold::FlatTorus);
    let d_id = degree(&DiscreteMap::identity(&s)).unwrap();
    let d_const = degree(&DiscreteMap::constant(&s, &s.vertices[5])).unwrap();
    let d_double = degree(&DiscreteMap::torus_doubling(&t).unwrap()).unwrap();
    Verdict {
        pass: (d_id - 1.0).abs() <= 0.02 && d_const.abs() <= 1e-10 && (d_double - 2.0).abs() <= 0.04,
        detail: format!("identity {d_id:.5}, constant {d_const:.1e}, torus doubling {d_double:.5}"),
    }
}

fn criterion_5() -> Verdict {
    let s = korn_nullspace(&default_mesh(Manifold::Sphere), 6).unwrap();
    let t = korn_nullspace(&default_mesh(Manifold::FlatTorus), 6).unwrap();
    let below = |ev: &[f64], k: usize| ev.iter().filter(|&&l| l < 0.01 * ev[k]).count();
    let s_count = below(&s.eigenvalues, 3);
    let t_count = below(&t.eigenvalues, 2);
    Verdict {
        pass: s_count == 3 && t_count == 2 && s.subspace_angle_deg < 5.0 && t.subspace_angle_deg < 5.0,
        detail: format!(
            "sphere: {s_count} eigenvalues < 0.01·λ4 (λ3 = {:.2e}, λ4 = {:.3}), angle {:.3}°; torus: {t_count} eigenvalues < 0.01·λ3 (λ3 = {:.3}), angle {:.1e}°",
            s.eigenvalues[2], s.eigenvalues[3], s.subspace_angle_deg, t.eigenvalues[2], t.subspace_angle_deg
        ),
    }
}

fn perturbed_identity(mesh: &Arc<SurfaceMesh>, amp: f64, rng: &mut ChaCha8Rng) -> DiscreteMap {
    let m = mesh.manifold;
    let images = mesh
        .vertices
        .iter()
        .map(|p| {
            let v = DVector::from_fn(m.ambient_dim(), |_, _| rng.random_range(-amp..amp));
            m.exp(p, &m.tangent_project(p, &v))
        })
        .collect();
    DiscreteMap::new(mesh.clone(), images).unwrap()
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let mut max_residual: f64 = 0.0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut richardson = Vec::new();
    let mut moved = Vec::new();
    for m in [Manifold::Sphere, Manifold::FlatTorus] {
        let msh = default_mesh(m);
        // monotonicity and constraint on a C⁰-small perturbation of the identity
        let f = perturbed_identity(&msh, 0.05, &mut rng);
        let mut flow = HeatFlow::new(&msh, 2.0).unwrap();
        let mut state = flow.start(&f).unwrap();
        for _ in 0..200 {
            let before = state.dirichlet_energy;
            flow.step(&mut state, default_dt(&msh)).unwrap();
            max_increase = max_increase.max(state.dirichlet_energy - before);
            max_residual = max_residual.max(state.map.max_constraint_residual());
        }
        // one-step consistency from smooth data
        let x = SmoothField::random_non_killing(m, &mut rng);
        let g = DiscreteMap::exp_of_field(&msh, &x, 0.3, &IsometryElement::identity(m));
        let dt = default_dt(&msh);
        let d1 = one_step_defect(&mut flow, &g, dt).unwrap();
        let d2 = one_step_defect(&mut flow, &g, dt / 2.0).unwrap();
        richardson.push(d1 / d2);
        // isometric initial data
        let phi = random_isometry(m, &mut rng);
        let (_, report) = smooth(&DiscreteMap::isometry(&msh, &phi), DEFAULT_T1, dt, 2.0, 10.0 * 2f64.sqrt()).unwrap();
        moved.push((report.w1p_dist, msh.mesh_size));
    }
    let ok = max_residual < 1e-12
        && max_increase <= ENERGY_SLACK
        && richardson.iter().all(|r| (r - 4.0).abs() <= 1.0)
        && moved.iter().all(|(d, h)| d < h);
    Verdict {
        pass: ok,
        detail: format!(
            "max constraint residual {max_residual:.1e}, max energy change per step {max_increase:.2e}, Richardson factors sphere {:.3} torus {:.3}, isometry motion over T1 sphere {:.2e} (h = {:.3}) torus {:.2e} (h = {:.3})",
            richardson[0], richardson[1], moved[0].0, moved[0].1, moved[1].0, moved[1].1
        ),
    }
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let eps = [4e-2, 2e-2, 1e-2];
    let mut worst: f64 = 0.0;
    let mut ratios = Vec::new();
    for m in [Manifold::Sphere, Manifold::FlatTorus] {
        for _ in 0..5 {
            let p = match m {
                Manifold::Sphere => m
                    .project(&DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
                    .unwrap(),
                Manifold::FlatTorus => Manifold::torus_point(rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)),
            };
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let r = deficit_linearization_check(m, &p, v, &a, &eps).unwrap();
            for q in r.ratios {
                worst = worst.max((q - 0.25).abs() / 0.25);
                ratios.push(q);
            }
        }
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    Verdict {
        pass: worst <= 0.2,
        detail: format!("R(ε/2)/R(ε) in [{lo:.4}, {hi:.4}] over 20 ladders on both surfaces (0.25 ± 20%)"),
    }
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let mut worst_removal: f64 = 0.0;
    let mut consts = Vec::new();
    for m in [Manifold::Sphere, Manifold::FlatTorus] {
        let msh = default_mesh(m);
        for _ in 0..3 {
            let coeffs: Vec<f64> = (0..m.killing_dim()).map(|_| rng.random_range(-0.03..0.03)).collect();
            let x = TangentField::killing(&msh, &KillingElement { coeffs });
            let min = minimize_killing(&msh, &x, &MinimizeOptions::default()).unwrap();
            worst_removal = worst_removal.max(min.value / x.l2_norm(&msh));
        }
        for _ in 0..10 {
            let x = SmoothField::random_non_killing(m, &mut rng).sample(&msh).scaled(0.05);
            let min = minimize_killing(&msh, &x, &MinimizeOptions::default()).unwrap();
            consts.push(min.orthogonality_constant.unwrap_or(0.0));
        }
    }
    let c_max = consts.iter().copied().fold(0.0, f64::max);
    const BOUND: f64 = 10.0;
    Verdict {
        pass: worst_removal <= 0.05 && consts.iter().all(|c| c.is_finite()) && c_max <= BOUND,
        detail: format!(
            "max ‖X̄‖/‖X‖ for small Killing X = {worst_removal:.2e} (tol 0.05); near-orthogonality constant over 20 fields max {c_max:.3e} (bound {BOUND})"
        ),
    }
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let cfg = PipelineConfig::default();
    let eps = log_ladder(1e-3, 1e-1, 7);
    let mut ok = true;
    let mut parts = Vec::new();
    const RATIO_CAP: f64 = 10.0;
    for m in [Manifold::Sphere, Manifold::FlatTorus] {
        let msh = default_mesh(m);
        let mut slopes = Vec::new();
        let mut c_level: f64 = 0.0;
        for _ in 0..3 {
            let x = SmoothField::random_non_killing(m, &mut rng);
            let r = random_isometry(m, &mut rng);
            let study = scaling_study(&msh, &x, &r, &eps, &cfg).unwrap();
            ok &= (0.9..=1.1).contains(&study.slope);
            c_level = c_level.max(study.max_ratio);
            slopes.push(study.slope);
        }
        ok &= c_level.is_finite() && c_level <= RATIO_CAP;
        parts.push(format!(
            "{} (resolution {}): slopes {:.4}/{:.4}/{:.4}, ratio constant {c_level:.3}",
            m.name(),
            msh.resolution,
            slopes[0],
            slopes[1],
            slopes[2]
        ));
    }
    Verdict { pass: ok, detail: format!("{} (slope in [0.9, 1.1], ratio <= {RATIO_CAP})", parts.join("; ")) }
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let cfg = PipelineConfig::default();
    let mut exact_worst: f64 = 0.0;
    let mut rel_worst: f64 = 0.0;
    for m in [Manifold::Sphere, Manifold::FlatTorus] {
        let msh = default_mesh(m);
        for _ in 0..2 {
            let r = random_isometry(m, &mut rng);
            let report = nearest_isometry(&DiscreteMap::isometry(&msh, &r), &cfg).unwrap();
            exact_worst = exact_worst.max(report.phi.group_distance(&r));
            let x = SmoothField::random_non_killing(m, &mut rng);
            let f = DiscreteMap::exp_of_field(&msh, &x, 1e-2, &r);
            let report = nearest_isometry(&f, &cfg).unwrap();
            rel_worst = rel_worst.max(report.phi.group_distance(&r) / report.distance);
        }
    }
    Verdict {
        pass: exact_worst <= 1e-6 && rel_worst <= 10.0,
        detail: format!(
            "exact isometry group distance max {exact_worst:.1e} (tol 1e-6); perturbed: group distance / d_(1,2) max {rel_worst:.3} (tol 10)"
        ),
    }
}

fn main() {
    type Criterion = (usize, &'static str, u64, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "dist-to-SO oracle equivalence", 30, criterion_1),
        (2, "mesh and quadrature convergence", 10, criterion_2),
        (3, "weak Piola residual", 120, criterion_3),
        (4, "degree quantization", 10, criterion_4),
        (5, "Killing nullspace", 60, criterion_5),
        (6, "heat flow", 120, criterion_6),
        (7, "metric-deficit linearization", 60, criterion_7),
        (8, "Killing minimization", 120, criterion_8),
        (9, "headline rigidity scaling", 600, criterion_9),
        (10, "exact-isometry recovery", 120, criterion_10),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = verdict.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} [{}] {name}: {}; runtime {:.1}s (limit {limit}s)",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
