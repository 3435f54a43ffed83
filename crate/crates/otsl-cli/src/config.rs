//! JSON configuration surface. Every struct rejects unknown fields so a
//! typo in a config file is reported by name instead of being ignored.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use otsl_core::density::DensityModel;
use otsl_core::geometry::{AlignedBox, DomainModel};
use otsl_core::transport::CostKind;

use crate::CliError;

fn config_err(msg: String) -> CliError {
    CliError::Config(msg)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSpec {
    UnitBox(UnitBoxSpec),
    Box(RegionSpec),
    Ball(BallSpec),
    LShape(LShapeSpec),
    Dumbbell(DumbbellSpec),
    RoomAndPassage(RoomAndPassageSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitBoxSpec {
    pub dim: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RegionSpec {
    pub fn build(&self) -> Result<AlignedBox, CliError> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(config_err(
                "region: lo and hi need equal nonzero lengths".into(),
            ));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| a >= b) {
            return Err(config_err("region: lo must be strictly below hi".into()));
        }
        Ok(AlignedBox::new(self.lo.clone(), self.hi.clone()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LShapeSpec {
    pub side: f64,
    pub notch: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumbbellSpec {
    pub bell: f64,
    pub tube_length: f64,
    pub tube_radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomAndPassageSpec {
    pub n_rooms: usize,
}

impl DomainSpec {
    pub fn build(&self) -> Result<DomainModel, CliError> {
        match self {
            DomainSpec::UnitBox(s) => {
                if !(1..=4).contains(&s.dim) {
                    return Err(config_err("unit_box: dim must be 1..=4".into()));
                }
                Ok(DomainModel::unit_box(s.dim))
            }
            DomainSpec::Box(s) => {
                let b = s.build()?;
                Ok(DomainModel::box_domain(b.lo, b.hi))
            }
            DomainSpec::Ball(s) => {
                if s.radius <= 0.0 || s.center.is_empty() {
                    return Err(config_err("ball: need a positive radius".into()));
                }
                Ok(DomainModel::ball(s.center.clone(), s.radius))
            }
            DomainSpec::LShape(s) => {
                if !(s.notch > 0.0 && s.notch < s.side) {
                    return Err(config_err("l_shape: need 0 < notch < side".into()));
                }
                Ok(DomainModel::lshape(s.side, s.notch))
            }
            DomainSpec::Dumbbell(s) => {
                if s.bell <= 0.0 || s.tube_length <= 0.0 || s.tube_radius <= 0.0 {
                    return Err(config_err("dumbbell: all sizes must be positive".into()));
                }
                if s.tube_radius >= s.bell {
                    return Err(config_err(
                        "dumbbell: tube_radius must be below bell".into(),
                    ));
                }
                Ok(DomainModel::dumbbell(s.bell, s.tube_length, s.tube_radius))
            }
            DomainSpec::RoomAndPassage(s) => {
                if s.n_rooms < 2 {
                    return Err(config_err("room_and_passage: need n_rooms >= 2".into()));
                }
                Ok(DomainModel::room_and_passage(s.n_rooms))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySpec {
    Uniform(UniformSpec),
    Gaussian(GaussianSpec),
    GaussianDiagonal(GaussianDiagonalSpec),
    BoundaryPower(BoundaryPowerSpec),
    SphericalUniform(SphericalUniformSpec),
    GeneralizedCauchy(GeneralizedCauchySpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformSpec {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub dim: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianDiagonalSpec {
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPowerSpec {
    pub delta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphericalUniformSpec {
    pub dim: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizedCauchySpec {
    pub dim: usize,
    pub beta: f64,
}

impl DensitySpec {
    /// Domain-bound densities (uniform, boundary-power) need `domain`.
    pub fn build(&self, domain: Option<&DomainModel>) -> Result<DensityModel, CliError> {
        let need_domain = |name: &str| {
            config_err(format!(
                "density {name}: this kind needs a domain in the same config"
            ))
        };
        match self {
            DensitySpec::Uniform(_) => {
                let dom = domain.ok_or_else(|| need_domain("uniform"))?;
                DensityModel::uniform(dom.clone())
                    .map_err(|e| config_err(format!("density uniform: {e}")))
            }
            DensitySpec::Gaussian(s) => {
                if s.kappa <= 0.0 || !(1..=4).contains(&s.dim) {
                    return Err(config_err(
                        "gaussian: need dim in 1..=4 and kappa > 0".into(),
                    ));
                }
                Ok(DensityModel::gaussian(s.dim, s.kappa))
            }
            DensitySpec::GaussianDiagonal(s) => {
                if s.kappa.is_empty() || s.kappa.iter().any(|&k| k <= 0.0) {
                    return Err(config_err(
                        "gaussian_diagonal: every kappa must be positive".into(),
                    ));
                }
                Ok(DensityModel::gaussian_diagonal(s.kappa.clone(), s.shift))
            }
            DensitySpec::BoundaryPower(s) => {
                let dom = domain.ok_or_else(|| need_domain("boundary_power"))?;
                DensityModel::boundary_power(dom.clone(), s.delta)
                    .map_err(|e| config_err(format!("density boundary_power: {e}")))
            }
            DensitySpec::SphericalUniform(s) => {
                if !(1..=4).contains(&s.dim) {
                    return Err(config_err("spherical_uniform: dim must be 1..=4".into()));
                }
                Ok(DensityModel::spherical_uniform(s.dim))
            }
            DensitySpec::GeneralizedCauchy(s) => {
                DensityModel::generalized_cauchy(s.dim, s.beta)
                    .map_err(|e| config_err(format!("density generalized_cauchy: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub domain: DomainSpec,
    pub max_level: i32,
    /// Density for the chain audit; defaults to uniform on the domain.
    #[serde(default)]
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphAuditConfig {
    pub graph: GraphSource,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    CauchyFamily(CauchyFamilySpec),
    WhitneyCover(WhitneyCoverSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchyFamilySpec {
    pub dim: usize,
    pub beta: f64,
    pub n: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhitneyCoverSpec {
    pub domain: DomainSpec,
    pub max_level: i32,
    #[serde(default)]
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtSolveConfig {
    pub source_csv: PathBuf,
    pub target_csv: PathBuf,
    pub cost: CostSpec,
    #[serde(default = "default_gap_tol")]
    pub gap_tolerance: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSpec {
    Quadratic,
    Euclidean,
}

impl CostSpec {
    pub fn kind(self) -> CostKind {
        match self {
            CostSpec::Quadratic => CostKind::Quadratic,
            CostSpec::Euclidean => CostKind::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlueAuditConfig {
    pub target: GlueTarget,
    pub function: FunctionSpec,
    pub grid: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlueTarget {
    Chain(ChainTargetSpec),
    CauchyGraph(CauchyGraphTargetSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainTargetSpec {
    pub domain: DomainSpec,
    pub max_level: i32,
    #[serde(default)]
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchyGraphTargetSpec {
    pub dim: usize,
    pub beta: f64,
    pub n: u32,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSpec {
    Coordinate(CoordinateSpec),
    NormClamp(NormClampSpec),
    MaxAffine(MaxAffineSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateSpec {
    pub axis: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormClampSpec {
    pub cap: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxAffineSpec {
    pub pieces: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityExponentConfig {
    pub tag: String,
    pub density: DensitySpec,
    /// Needed by domain-bound density kinds.
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    pub region: RegionSpec,
    pub grid: usize,
    pub target_atoms: usize,
    #[serde(default)]
    pub split_mass: bool,
    pub scales: Vec<f64>,
    pub trials: usize,
    pub theory_potential: f64,
    #[serde(default)]
    pub theory_map: Option<f64>,
    /// Gate: fitted potential slope must reach this value.
    #[serde(default)]
    pub min_potential_slope: Option<f64>,
    /// Gate: every potential gap must stay below factor * sqrt(W1).
    #[serde(default)]
    pub max_gap_factor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessConfig {
    pub family: SharpnessFamilySpec,
    pub radii: Vec<f64>,
    #[serde(default = "default_band_factor")]
    pub band_factor: f64,
    /// Gate on the log-log slope of the potential gap against W1.
    #[serde(default)]
    pub slope_range: Option<(f64, f64)>,
    #[serde(default)]
    pub solver_check: Option<SolverCheckSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessFamilySpec {
    Cauchy(GeneralizedCauchySpec),
    Gaussian(GaussianSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCheckSpec {
    pub grid: usize,
    /// Truncation window halfwidth as a multiple of the larger radius.
    #[serde(default = "default_region_factor")]
    pub region_factor: f64,
    #[serde(default = "default_solver_tol")]
    pub rel_tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    #[serde(default = "default_n_rooms")]
    pub n_rooms: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_pairs")]
    pub pairs: Vec<(u32, u32)>,
    #[serde(default = "default_identity_tol")]
    pub identity_tolerance: f64,
    /// First row of the monotonicity window (1-based passage index).
    #[serde(default = "default_monotone_from")]
    pub monotone_from: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            n_rooms: default_n_rooms(),
            n_max: default_n_max(),
            pairs: default_pairs(),
            identity_tolerance: default_identity_tol(),
            monotone_from: default_monotone_from(),
        }
    }
}

fn default_rel_tol() -> f64 {
    1e-6
}

fn default_gap_tol() -> f64 {
    1e-8
}

fn default_band_factor() -> f64 {
    3.0
}

fn default_region_factor() -> f64 {
    8.0
}

fn default_solver_tol() -> f64 {
    0.02
}

fn default_n_rooms() -> usize {
    8
}

fn default_n_max() -> usize {
    6
}

fn default_pairs() -> Vec<(u32, u32)> {
    vec![(1, 1), (2, 1), (1, 2)]
}

fn default_identity_tol() -> f64 {
    1e-8
}

fn default_monotone_from() -> usize {
    2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected_by_name() {
        let text = r#"{"domain": {"unit_box": {"dim": 2, "extra": 1}}, "max_level": 4}"#;
        let err = serde_json::from_str::<DecomposeConfig>(text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn decompose_config_round_trip() {
        let text = r#"{
            "domain": {"l_shape": {"side": 2.0, "notch": 0.5}},
            "max_level": 6,
            "density": {"uniform": {}}
        }"#;
        let cfg: DecomposeConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.max_level, 6);
        let dom = cfg.domain.build().unwrap();
        assert_eq!(dom.dim(), 2);
        cfg.density.unwrap().build(Some(&dom)).unwrap();
    }

    #[test]
    fn bad_geometry_is_a_config_error() {
        let lshape = DomainSpec::LShape(LShapeSpec {
            side: 1.0,
            notch: 1.0,
        });
        assert!(lshape.build().is_err());
        let region = RegionSpec {
            lo: vec![0.0, 1.0],
            hi: vec![1.0, 1.0],
        };
        assert!(region.build().is_err());
        let dumbbell = DomainSpec::Dumbbell(DumbbellSpec {
            bell: 0.2,
            tube_length: 0.5,
            tube_radius: 0.3,
        });
        assert!(dumbbell.build().is_err());
    }

    #[test]
    fn domain_bound_densities_need_a_domain() {
        let spec = DensitySpec::Uniform(UniformSpec {});
        let err = spec.build(None).unwrap_err();
        let CliError::Config(msg) = err else {
            panic!("expected a config error");
        };
        assert!(msg.contains("domain"));
    }

    #[test]
    fn counterexample_defaults_match_the_documented_values() {
        let cfg = CounterexampleConfig::default();
        assert_eq!(cfg.n_rooms, 8);
        assert_eq!(cfg.n_max, 6);
        assert_eq!(cfg.pairs, vec![(1, 1), (2, 1), (1, 2)]);
        assert_eq!(cfg.monotone_from, 2);
        let empty: CounterexampleConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(empty.n_max, cfg.n_max);
    }
}
