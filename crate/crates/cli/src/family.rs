//! Seeded generation of the maps a command runs on.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rigidlab::fields::AmbientPolyField;
use rigidlab::rigidity::random_isometry;
use rigidlab::{DiscreteMap, IsometryElement, SmoothField, SurfaceMesh};

use crate::config::{BaseIsometry, ExperimentConfig, FamilyKind};
use crate::error::{CliError, CliResult};

/// One map of the family with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct Member {
    pub index: usize,
    /// Index of the generating field for `exp_field` families.
    pub field: Option<usize>,
    pub epsilon: Option<f64>,
    pub base: IsometryElement,
    pub map: DiscreteMap,
}

#[derive(Clone, Debug)]
pub struct Family {
    pub mesh: Arc<SurfaceMesh>,
    pub fields: Vec<SmoothField>,
    /// Base isometry per field (`exp_field`) or per member (`isometry`).
    pub bases: Vec<IsometryElement>,
    pub members: Vec<Member>,
    /// Test field for the weak Piola residual.
    pub test_field: AmbientPolyField,
}

pub fn build_mesh(cfg: &ExperimentConfig) -> CliResult<Arc<SurfaceMesh>> {
    SurfaceMesh::build(cfg.manifold, cfg.resolution()).map(Arc::new).map_err(|e| CliError::stage("mesh", e))
}

/// Everything random is drawn from one ChaCha8 stream seeded by `cfg.seed`,
/// in a fixed order, so the family depends on the config alone.
pub fn build_family(cfg: &ExperimentConfig) -> CliResult<Family> {
    let mesh = build_mesh(cfg)?;
    let m = cfg.manifold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fam = &cfg.family;
    let mut fields = Vec::new();
    let mut bases = Vec::new();
    let mut members = Vec::new();
    let mut push = |field: Option<usize>, epsilon: Option<f64>, base: IsometryElement, map: DiscreteMap| {
        members.push(Member { index: members.len(), field, epsilon, base, map });
    };
    match fam.kind {
        FamilyKind::Identity => push(None, None, IsometryElement::identity(m), DiscreteMap::identity(&mesh)),
        FamilyKind::Constant => {
            let point = mesh.vertices[0].clone();
            push(None, None, IsometryElement::identity(m), DiscreteMap::constant(&mesh, &point));
        }
        FamilyKind::TorusDoubling => {
            let map = DiscreteMap::torus_doubling(&mesh).map_err(|e| CliError::stage("family", e))?;
            push(None, None, IsometryElement::identity(m), map);
        }
        FamilyKind::Isometry => {
            for _ in 0..fam.count {
                let phi = random_isometry(m, &mut rng);
                bases.push(phi.clone());
                push(None, None, phi.clone(), DiscreteMap::isometry(&mesh, &phi));
            }
        }
        FamilyKind::ExpField => {
            for _ in 0..fam.count {
                fields.push(SmoothField::random_non_killing(m, &mut rng));
                bases.push(match fam.base {
                    BaseIsometry::Identity => IsometryElement::identity(m),
                    BaseIsometry::Random => random_isometry(m, &mut rng),
                });
            }
            let eps = fam.epsilon_values();
            for (i, (x, base)) in fields.iter().zip(&bases).enumerate() {
                for &e in &eps {
                    push(Some(i), Some(e), base.clone(), DiscreteMap::exp_of_field(&mesh, x, e, base));
                }
            }
        }
    }
    let test_field = AmbientPolyField::random(m, &mut rng);
    Ok(Family { mesh, fields, bases, members, test_field })
}
