//! The five experiment commands. Each writes its files through [`OutDir`]
//! and returns the list of written paths. Member-level work runs on the
//! rayon pool; results are collected in member order before anything is
//! written.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use rigidlab::heatflow::{default_dt, smooth, SmoothReport, MONITOR_HEADER};
use rigidlab::killing::korn_nullspace;
use rigidlab::piola::{degree, piola_residual};
use rigidlab::rigidity::{fit_slope, nearest_isometry, scaling_study, RigidityReport, ScalingStudy};
use rigidlab::DiscreteMap;

use crate::config::{ExperimentConfig, FamilyKind};
use crate::error::{CliError, CliResult};
use crate::family::{build_family, build_mesh, Family, Member};
use crate::output::{face_map_svg, loglog_svg, num, opt_num, OutDir, Series, Table};

pub const RUN_FORMAT: &str = "rigidlab-run-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Energy,
    Recover,
    Scaling,
    Nullspace,
    Heatflow,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Energy => "energy",
            Command::Recover => "recover",
            Command::Scaling => "scaling",
            Command::Nullspace => "nullspace",
            Command::Heatflow => "heatflow",
        }
    }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &mut OutDir) -> CliResult<()> {
    cfg.validate()?;
    let run = json!({ "format": RUN_FORMAT, "command": cmd, "config": cfg });
    out.write("run.json", pretty(&run).as_bytes())?;
    match cmd {
        Command::Energy => energy(cfg, out),
        Command::Recover => recover(cfg, out),
        Command::Scaling => scaling(cfg, out),
        Command::Nullspace => nullspace(cfg, out),
        Command::Heatflow => heatflow(cfg, out),
    }
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn member_cells(m: &Member) -> [String; 3] {
    [m.index.to_string(), m.field.map(|f| f.to_string()).unwrap_or_default(), opt_num(m.epsilon)]
}

/// Per-member energy, degree and weak Piola residual against the family's
/// test field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub energy_integral: f64,
    pub energy_e: f64,
    pub degree: f64,
    pub piola_residual: f64,
}

pub fn energy_row(map: &DiscreteMap, p: f64, family: &Family) -> rigidlab::Result<EnergyRow> {
    let e = map.energy(p)?;
    let xi = family.test_field.sample(&map.mesh);
    Ok(EnergyRow {
        energy_integral: e.integral,
        energy_e: e.e,
        degree: degree(map)?,
        piola_residual: piola_residual(map, &xi)?,
    })
}

fn energy(cfg: &ExperimentConfig, out: &mut OutDir) -> CliResult<()> {
    let family = build_family(cfg)?;
    let rows = family
        .members
        .par_iter()
        .map(|m| energy_row(&m.map, cfg.p, &family).map_err(|e| CliError::stage("energy", format!("member {}: {e}", m.index))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut table = Table::new(&["member", "field", "epsilon", "energy_integral", "energy_e", "degree", "piola_residual"]);
    for (m, r) in family.members.iter().zip(&rows) {
        let [a, b, c] = member_cells(m);
        table.row([a, b, c, num(r.energy_integral), num(r.energy_e), num(r.degree), num(r.piola_residual)]);
    }
    out.write("energy.csv", &table.into_bytes())
}

fn recover(cfg: &ExperimentConfig, out: &mut OutDir) -> CliResult<()> {
    let family = build_family(cfg)?;
    let pcfg = cfg.pipeline_config();
    let results: Vec<Result<RigidityReport, String>> =
        family.members.par_iter().map(|m| nearest_isometry(&m.map, &pcfg).map_err(|e| e.to_string())).collect();
    let deficits: Vec<Option<Vec<f64>>> = family
        .members
        .par_iter()
        .map(|m| m.map.metric_deficit().ok().map(|d| d.per_face.iter().map(|t| t.norm()).collect()))
        .collect();

    let mut table = Table::new(&[
        "member",
        "field",
        "epsilon",
        "energy_e",
        "distance",
        "ratio",
        "base_group_distance",
        "failure_stage",
    ]);
    let mut first_failure: Option<CliError> = None;
    for ((m, result), deficit) in family.members.iter().zip(&results).zip(&deficits) {
        let [a, b, c] = member_cells(m);
        match result {
            Ok(report) => {
                out.write(&format!("recover_{:03}.json", m.index), report.to_json().as_bytes())?;
                let stage = report.failure.as_ref().map(|f| f.stage.clone()).unwrap_or_default();
                table.row([
                    a,
                    b,
                    c,
                    num(report.e),
                    num(report.distance),
                    opt_num(report.ratio),
                    num(report.phi.group_distance(&m.base)),
                    stage,
                ]);
                if let (Some(f), None) = (&report.failure, &first_failure) {
                    first_failure =
                        Some(CliError::Stage { stage: f.stage.clone(), message: format!("member {}: {}", m.index, f.message) });
                }
            }
            Err(msg) => {
                table.row([a, b, c, String::new(), String::new(), String::new(), String::new(), "pipeline".to_string()]);
                if first_failure.is_none() {
                    first_failure = Some(CliError::stage("pipeline", format!("member {}: {msg}", m.index)));
                }
            }
        }
        if let Some(values) = deficit {
            let title = format!("|f*g - g| per face, member {}", m.index);
            out.write(&format!("deficit_{:03}.svg", m.index), face_map_svg(&family.mesh, values, &title).as_bytes())?;
        }
    }
    out.write("recover.csv", &table.into_bytes())?;
    match first_failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Slope and intercept of `log10 dist` against `log10 e` over every row.
pub fn pooled_fit(studies: &[ScalingStudy]) -> Option<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = studies
        .iter()
        .flat_map(|s| s.rows.iter())
        .filter(|r| r.energy_e > 0.0 && r.dist_w1p > 0.0)
        .map(|r| (r.energy_e.log10(), r.dist_w1p.log10()))
        .unzip();
    if xs.len() < 2 {
        return None;
    }
    let slope = fit_slope(&xs, &ys);
    let n = xs.len() as f64;
    Some((slope, ys.iter().sum::<f64>() / n - slope * xs.iter().sum::<f64>() / n))
}

fn scaling(cfg: &ExperimentConfig, out: &mut OutDir) -> CliResult<()> {
    if cfg.family.kind != FamilyKind::ExpField {
        return Err(CliError::Validation("scaling needs family.kind = \"exp_field\"".into()));
    }
    let family = build_family(cfg)?;
    let pcfg = cfg.pipeline_config();
    let eps = cfg.family.epsilon_values();
    let studies = family
        .fields
        .iter()
        .zip(&family.bases)
        .enumerate()
        .map(|(i, (x, base))| {
            scaling_study(&family.mesh, x, base, &eps, &pcfg).map_err(|e| CliError::stage("scaling", format!("field {i}: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut table = Table::new(&["field", "epsilon", "energy_e", "dist_w1p", "ratio"]);
    for (i, s) in studies.iter().enumerate() {
        for r in &s.rows {
            table.row([i.to_string(), num(r.epsilon), num(r.energy_e), num(r.dist_w1p), num(r.ratio)]);
        }
    }
    out.write("scaling.csv", &table.into_bytes())?;

    let fit = pooled_fit(&studies);
    let max_ratio = studies.iter().map(|s| s.max_ratio).fold(0.0, f64::max);
    let summary = json!({
        "format": RUN_FORMAT,
        "manifold": cfg.manifold,
        "mesh_resolution": cfg.resolution(),
        "p": cfg.p,
        "fields": studies.iter().enumerate().map(|(i, s)| json!({ "field": i, "slope": s.slope, "max_ratio": s.max_ratio })).collect::<Vec<_>>(),
        "pooled_slope": fit.map(|f| f.0),
        "max_ratio": max_ratio,
    });
    out.write("scaling.json", pretty(&summary).as_bytes())?;

    let series: Vec<Series> = studies
        .iter()
        .enumerate()
        .map(|(i, s)| Series { label: format!("field {i}"), points: s.rows.iter().map(|r| (r.energy_e, r.dist_w1p)).collect() })
        .collect();
    let title = format!("{} resolution {}: distance to isometries vs energy", cfg.manifold.name(), cfg.resolution());
    out.write("scaling.svg", loglog_svg(&series, fit, &title, "e(f)", "dist_{1,p}(f, Isom)").as_bytes())
}

fn nullspace(cfg: &ExperimentConfig, out: &mut OutDir) -> CliResult<()> {
    let mesh = build_mesh(cfg)?;
    let spec = korn_nullspace(&mesh, cfg.nullspace.count).map_err(|e| CliError::stage("nullspace", e))?;
    let mut table = Table::new(&["index", "eigenvalue"]);
    for (i, l) in spec.eigenvalues.iter().enumerate() {
        table.row([i.to_string(), num(*l)]);
    }
    out.write("nullspace_eigenvalues.csv", &table.into_bytes())?;

    let d = cfg.manifold.ambient_dim();
    let mut header = vec!["basis".to_string(), "vertex".to_string()];
    header.extend((0..d).map(|k| format!("x{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header);
    for (b, field) in spec.basis.iter().enumerate() {
        for (v, x) in field.vectors.iter().enumerate() {
            let mut row = vec![b.to_string(), v.to_string()];
            row.extend(x.iter().map(|c| num(*c)));
            table.row(row);
        }
    }
    out.write("nullspace_basis.csv", &table.into_bytes())?;

    let summary = json!({
        "format": RUN_FORMAT,
        "manifold": cfg.manifold,
        "mesh_resolution": cfg.resolution(),
        "killing_dim": cfg.manifold.killing_dim(),
        "nullity": spec.nullity,
        "subspace_angle_deg": spec.subspace_angle_deg,
        "eigenvalues": spec.eigenvalues,
    });
    out.write("nullspace.json", pretty(&summary).as_bytes())?;
    out.write("mesh.off", mesh.to_off().as_bytes())?;
    out.write("mesh.obj", mesh.to_obj().as_bytes())
}

pub fn heatflow_run(map: &DiscreteMap, cfg: &ExperimentConfig) -> rigidlab::Result<SmoothReport> {
    let s = &cfg.pipeline;
    let dt = s.dt.unwrap_or_else(|| default_dt(&map.mesh));
    smooth(map, s.t1, dt, cfg.p, s.lambda).map(|(_, report)| report)
}

fn heatflow(cfg: &ExperimentConfig, out: &mut OutDir) -> CliResult<()> {
    if !(cfg.pipeline.t1 > 0.0) {
        return Err(CliError::Validation("heatflow needs pipeline.t1 > 0".into()));
    }
    let family = build_family(cfg)?;
    let reports = family
        .members
        .par_iter()
        .map(|m| heatflow_run(&m.map, cfg).map_err(|e| CliError::stage("heatflow", format!("member {}: {e}", m.index))))
        .collect::<CliResult<Vec<_>>>()?;
    for (m, report) in family.members.iter().zip(&reports) {
        let header: Vec<&str> = MONITOR_HEADER.split(',').collect();
        let mut table = Table::new(&header);
        for r in &report.history {
            table.row([
                r.step.to_string(),
                num(r.t),
                num(r.dirichlet_energy),
                num(r.w1p_dist_to_initial),
                num(r.max_face_grad),
                num(r.constraint_residual),
            ]);
        }
        out.write(&format!("heatflow_{:03}.csv", m.index), &table.into_bytes())?;
        out.write(&format!("heatflow_{:03}.json", m.index), pretty(report).as_bytes())?;
    }
    Ok(())
}
