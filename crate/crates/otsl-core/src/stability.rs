//! Variance computations and the numerical audits built on them: gluing
//! bounds over chain families and weighted covers, the convex variance
//! lower bound, stability-exponent experiments, sharpness tables, and the
//! room-and-passage ratio run.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decomposition::{BomanFamily, ChainAudit};
use crate::density::{DensityError, DensityFamily, DensityModel};
use crate::geometry::{AlignedBox, ConvexCell, DomainModel, Shape};
use crate::overlap_graph::{SpectralReport, WeightedGraph};
use crate::transport::{
    brenier_potential, legendre_with_argmax, map_l2_distance, pushforward, solve_ot, wasserstein,
    CostKind, DiscreteMeasure, TransportError,
};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("cell {0} contains no atoms; refine the discretization")]
    CellWithoutAtoms(usize),
    #[error("spectral gap is zero; the cover graph is disconnected")]
    ZeroSpectralGap,
    #[error("need at least 3 scales, got {0}")]
    InsufficientScales(usize),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("density: {0}")]
    Density(#[from] DensityError),
}

// ---------------------------------------------------------------------------
// Variance
// ---------------------------------------------------------------------------

/// Variance of the values `f` under the atom masses, treated as a
/// probability measure (masses are normalized by their total).
pub fn variance(atoms: &DiscreteMeasure, f: &[f64]) -> f64 {
    assert_eq!(atoms.len(), f.len());
    assert!(f.iter().all(|v| v.is_finite()), "values must be finite");
    weighted_variance(&atoms.masses, f)
}

fn weighted_variance(masses: &[f64], f: &[f64]) -> f64 {
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mean = masses.iter().zip(f).map(|(m, v)| m * v).sum::<f64>() / total;
    let second = masses
        .iter()
        .zip(f)
        .map(|(m, v)| m * (v - mean) * (v - mean))
        .sum::<f64>()
        / total;
    second.max(0.0)
}

// ---------------------------------------------------------------------------
// Gluing audits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CellVariance {
    pub cell: u32,
    /// Weight of the cell in the right-hand sum: atom mass fraction for the
    /// chain audit, quadrature cell mass for the cover-graph audit.
    pub mass: f64,
    /// Variance of `f` under the atoms of the cell, normalized within it.
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GluingConstants {
    Chain {
        overlap: usize,
        inclusion: f64,
        comparability: f64,
        growth: f64,
        density_ratio: f64,
    },
    Graph {
        overlap: usize,
        lambda2: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    /// Global variance of `f` over the atoms covered by at least one cell.
    pub lhs: f64,
    /// Constant times the weighted sum of per-cell variances.
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    /// Atom mass outside every cell (excluded from both sides).
    pub excluded_mass: f64,
    pub per_cell: Vec<CellVariance>,
    pub constants: GluingConstants,
}

fn cell_atom_lists<F>(
    n_cells: usize,
    contains: F,
    atoms: &DiscreteMeasure,
) -> (Vec<Vec<usize>>, Vec<u32>)
where
    F: Fn(usize, &[f64]) -> bool + Sync,
{
    let lists: Vec<Vec<usize>> = (0..n_cells)
        .into_par_iter()
        .map(|i| {
            atoms
                .points
                .iter()
                .enumerate()
                .filter(|(_, x)| contains(i, x))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let mut counts = vec![0u32; atoms.len()];
    for list in &lists {
        for &k in list {
            counts[k] += 1;
        }
    }
    (lists, counts)
}

fn covered_side(atoms: &DiscreteMeasure, f: &[f64], counts: &[u32]) -> (f64, f64, f64) {
    let mut masses = Vec::new();
    let mut values = Vec::new();
    let mut excluded = 0.0;
    for k in 0..atoms.len() {
        if counts[k] > 0 {
            masses.push(atoms.masses[k]);
            values.push(f[k]);
        } else {
            excluded += atoms.masses[k];
        }
    }
    let covered: f64 = masses.iter().sum();
    (weighted_variance(&masses, &values), excluded, covered)
}

/// Audits the chain-family gluing bound: the global variance against the
/// measured-constant multiple of the mass-weighted per-cell variances.
pub fn audit_gluing_boman(
    fam: &BomanFamily,
    audit: &ChainAudit,
    atoms: &DiscreteMeasure,
    f: &[f64],
) -> Result<VarianceReport, StabilityError> {
    assert_eq!(atoms.len(), f.len());
    assert!(f.iter().all(|v| v.is_finite()), "values must be finite");
    let boxes: Vec<AlignedBox> = fam.cells.iter().map(|c| c.to_box()).collect();
    let (lists, counts) = cell_atom_lists(boxes.len(), |i, x| boxes[i].contains(x), atoms);
    let (lhs, excluded_mass, covered) = covered_side(atoms, f, &counts);
    let mut per_cell = Vec::with_capacity(lists.len());
    for (i, list) in lists.iter().enumerate() {
        if list.is_empty() {
            return Err(StabilityError::CellWithoutAtoms(i));
        }
        let ms: Vec<f64> = list.iter().map(|&k| atoms.masses[k]).collect();
        let vs: Vec<f64> = list.iter().map(|&k| f[k]).collect();
        per_cell.push(CellVariance {
            cell: i as u32,
            mass: ms.iter().sum::<f64>() / covered,
            variance: weighted_variance(&ms, &vs),
        });
    }
    let a = audit.a_meas as f64;
    let factor = 200.0 * a * a * audit.c_meas * audit.d_meas.powi(3);
    let sum: f64 = per_cell.iter().map(|c| c.mass * c.variance).sum();
    let rhs = factor * sum;
    Ok(VarianceReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        pass: lhs <= rhs,
        excluded_mass,
        per_cell,
        constants: GluingConstants::Chain {
            overlap: audit.a_meas,
            inclusion: audit.b_meas,
            comparability: audit.c_meas,
            growth: audit.d_meas,
            density_ratio: audit.e_meas,
        },
    })
}

/// Audits the cover-graph gluing bound: the global variance against
/// `A (1 + 2A / lambda2)` times the cell-mass-weighted per-cell variances,
/// where `A` is the largest number of cells sharing an atom.
pub fn audit_gluing_graph(
    cells: &[ConvexCell],
    graph: &WeightedGraph,
    spectral: &SpectralReport,
    atoms: &DiscreteMeasure,
    f: &[f64],
) -> Result<VarianceReport, StabilityError> {
    assert_eq!(cells.len(), graph.n());
    assert_eq!(atoms.len(), f.len());
    assert!(f.iter().all(|v| v.is_finite()), "values must be finite");
    if !spectral.connected || spectral.lambda2 <= 0.0 {
        return Err(StabilityError::ZeroSpectralGap);
    }
    let (lists, counts) = cell_atom_lists(cells.len(), |i, x| cells[i].contains(x), atoms);
    let (lhs, excluded_mass, _) = covered_side(atoms, f, &counts);
    let overlap = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut per_cell = Vec::with_capacity(lists.len());
    for (i, list) in lists.iter().enumerate() {
        if list.is_empty() {
            return Err(StabilityError::CellWithoutAtoms(i));
        }
        let ms: Vec<f64> = list.iter().map(|&k| atoms.masses[k]).collect();
        let vs: Vec<f64> = list.iter().map(|&k| f[k]).collect();
        per_cell.push(CellVariance {
            cell: i as u32,
            mass: graph.vertex_weights[i],
            variance: weighted_variance(&ms, &vs),
        });
    }
    let a = overlap as f64;
    let sum: f64 = per_cell.iter().map(|c| c.mass * c.variance).sum();
    let rhs = a * (1.0 + 2.0 * a / spectral.lambda2) * sum;
    Ok(VarianceReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        pass: lhs <= rhs,
        excluded_mass,
        per_cell,
        constants: GluingConstants::Graph {
            overlap,
            lambda2: spectral.lambda2,
        },
    })
}

// ---------------------------------------------------------------------------
// Convex variance lower bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConvexAudit {
    /// Discrete pairing of the potential difference with the difference of
    /// the two pushforwards.
    pub pairing: f64,
    /// Variance of the conjugate difference under the restricted measure.
    pub variance: f64,
    /// `e^{-1} (m/M) / (R_Y diam(Q))`; zero when the target set or the box
    /// is a single point.
    pub constant: f64,
    pub rhs: f64,
    /// Resolution-calibrated tolerance subtracted from the right side.
    pub tolerance: f64,
    /// Absolute change of the two sides between the two grids.
    pub drift: f64,
    pub grids: (usize, usize),
    pub pass: bool,
}

fn convex_sides(
    q: &AlignedBox,
    rho: &DensityModel,
    y_points: &[Vec<f64>],
    psi0: &[f64],
    psi1: &[f64],
    grid: usize,
) -> Result<(f64, f64), StabilityError> {
    let atoms = rho.discretize(q, grid)?;
    let (g0, a0) = legendre_with_argmax(y_points, psi0, &atoms.points);
    let (g1, a1) = legendre_with_argmax(y_points, psi1, &atoms.points);
    let mut p0 = vec![0.0; y_points.len()];
    let mut p1 = vec![0.0; y_points.len()];
    for k in 0..atoms.len() {
        p0[a0[k]] += atoms.masses[k];
        p1[a1[k]] += atoms.masses[k];
    }
    let pairing = (0..y_points.len())
        .map(|j| (psi1[j] - psi0[j]) * (p0[j] - p1[j]))
        .sum();
    let diff: Vec<f64> = g1.iter().zip(&g0).map(|(b, a)| b - a).collect();
    Ok((pairing, weighted_variance(&atoms.masses, &diff)))
}

fn density_min_max_ratio(rho: &DensityModel, q: &AlignedBox) -> f64 {
    if let Some((lo, hi)) = rho.density_bounds_on(q) {
        if lo > 0.0 && hi.is_finite() {
            return (lo / hi).min(1.0);
        }
    }
    let d = q.dim();
    let per_axis = 5usize;
    let mut inf = f64::INFINITY;
    let mut sup = 0.0f64;
    let mut idx = vec![0usize; d];
    loop {
        let x: Vec<f64> = (0..d)
            .map(|j| q.lo[j] + q.side(j) * idx[j] as f64 / (per_axis - 1) as f64)
            .collect();
        let v = rho.evaluate(&x);
        inf = inf.min(v);
        sup = sup.max(v);
        let mut j = 0;
        loop {
            if j == d {
                break;
            }
            idx[j] += 1;
            if idx[j] < per_axis {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == d {
            break;
        }
    }
    if sup <= 0.0 || inf <= 0.0 {
        return 0.0;
    }
    (inf / sup).min(1.0)
}

/// Audits the variance lower bound for conjugate potentials of two value
/// vectors on a finite target set: the pairing of the value difference with
/// the pushforward difference must dominate a constant multiple of the
/// variance of the conjugate difference, up to a resolution-calibrated
/// tolerance. Values are computed at `grid` points per axis; the tolerance
/// is calibrated against a rerun at twice the resolution.
pub fn audit_variance_inequality_convex(
    q: &AlignedBox,
    rho: &DensityModel,
    y_points: &[Vec<f64>],
    psi0: &[f64],
    psi1: &[f64],
    grid: usize,
) -> Result<ConvexAudit, StabilityError> {
    assert!(!y_points.is_empty());
    assert_eq!(y_points.len(), psi0.len());
    assert_eq!(y_points.len(), psi1.len());
    assert!(grid >= 2);
    let (pairing, var) = convex_sides(q, rho, y_points, psi0, psi1, grid)?;
    let (pairing_fine, var_fine) = convex_sides(q, rho, y_points, psi0, psi1, 2 * grid)?;
    let ratio = density_min_max_ratio(rho, q);
    let r_y = y_points
        .iter()
        .map(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scale = r_y * q.diameter();
    let constant = if scale > 0.0 {
        (-1.0f64).exp() * ratio / scale
    } else {
        0.0
    };
    let drift = (pairing_fine - pairing).abs() + constant * (var_fine - var).abs();
    let tolerance = 4.0 * drift + 1e-9 * (1.0 + pairing.abs() + constant * var);
    let rhs = constant * var;
    Ok(ConvexAudit {
        pairing,
        variance: var,
        constant,
        rhs,
        tolerance,
        drift,
        grids: (grid, 2 * grid),
        pass: pairing >= rhs - tolerance,
    })
}

// ---------------------------------------------------------------------------
// Stability-exponent experiments
// ---------------------------------------------------------------------------

/// Potential-gap exponent for the heavy-tailed radial family.
pub fn cauchy_potential_exponent(d: usize, beta: f64) -> f64 {
    0.5 * (1.0 - 2.0 / (beta - d as f64))
}

/// Map-gap reference exponent for the heavy-tailed radial family.
pub fn cauchy_map_exponent(d: usize, beta: f64) -> f64 {
    (beta - d as f64 - 2.0) / (8.0 * beta - 2.0 * d as f64 - 4.0)
}

/// Exponent offset for boundary-degenerate densities.
pub fn boundary_power_offset(delta: f64) -> f64 {
    delta / (12.0 * (1.0 + delta))
}

/// Map-gap exponent for boundary-degenerate densities.
pub fn boundary_power_map_exponent(delta: f64) -> f64 {
    1.0 / 6.0 - boundary_power_offset(delta)
}

/// Map-gap reference exponent for the isotropic gaussian family.
pub const GAUSSIAN_MAP_REFERENCE_EXPONENT: f64 = 1.0 / 9.0;

#[derive(Debug, Clone)]
pub struct ExponentConfig {
    pub tag: String,
    pub rho: DensityModel,
    /// Window discretized to represent the source measure.
    pub region: AlignedBox,
    /// Base atoms per axis; gaps are recomputed at twice this resolution.
    pub grid: usize,
    /// Atoms per random target measure.
    pub target_atoms: usize,
    /// Split each atom's mass between two displaced copies instead of
    /// displacing the atom itself.
    pub split_mass: bool,
    pub theory_potential: f64,
    pub theory_map: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentPair {
    pub scale: f64,
    pub trial: u32,
    pub w1: f64,
    pub w2: f64,
    pub potential_gap: f64,
    pub map_gap: f64,
    /// Relative change of the gaps between the two finest resolutions used.
    pub drift: f64,
    /// True when the 5% rule forced one extra refinement.
    pub refined: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentFit {
    pub family: String,
    /// All sampled pairs, sorted by increasing transport distance.
    pub pairs: Vec<ExponentPair>,
    pub potential_slope: f64,
    pub potential_intercept: f64,
    pub potential_residual: f64,
    pub map_slope: f64,
    pub map_intercept: f64,
    pub map_residual: f64,
    pub theory_potential: f64,
    pub theory_map: Option<f64>,
    pub grids: (usize, usize),
    pub max_drift: f64,
}

fn unit_ball_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return x;
        }
    }
}

fn equal_mass_measure(points: Vec<Vec<f64>>) -> DiscreteMeasure {
    let k = points.len();
    let mut masses = vec![1.0 / k as f64; k];
    let partial: f64 = masses[1..].iter().sum();
    masses[0] = 1.0 - partial;
    DiscreteMeasure::new(points, masses).expect("equal-mass atoms are valid")
}

fn gaps_at(
    source: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<(f64, f64), StabilityError> {
    let sol_mu = solve_ot(source, mu, CostKind::Quadratic)?;
    let sol_nu = solve_ot(source, nu, CostKind::Quadratic)?;
    let field_mu = brenier_potential(&sol_mu, source, mu);
    let field_nu = brenier_potential(&sol_nu, source, nu);
    let potential_gap = source
        .masses
        .iter()
        .zip(field_mu.values.iter().zip(&field_nu.values))
        .map(|(m, (a, b))| m * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let map_gap = map_l2_distance(&source.masses, &field_mu.map, &field_nu.map);
    Ok((potential_gap, map_gap))
}

fn rel_change(coarse: f64, fine: f64) -> f64 {
    (fine - coarse).abs() / fine.abs().max(1e-300)
}

/// Samples random target pairs at each displacement scale, solves the two
/// transports against the discretized source at two resolutions, and fits
/// log-log slopes of the potential and map gaps against the transport
/// distance. Scales must be strictly decreasing.
pub fn fit_exponent(
    config: &ExponentConfig,
    scales: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ExponentFit, StabilityError> {
    if scales.len() < 3 {
        return Err(StabilityError::InsufficientScales(scales.len()));
    }
    assert!(scales.windows(2).all(|w| w[0] > w[1]), "scales must decrease");
    assert!(scales.iter().all(|&s| s > 0.0));
    assert!(trials >= 1);
    assert!(config.target_atoms >= 2);
    let d = config.region.dim();
    let atoms_base = config.rho.discretize(&config.region, config.grid)?;
    let atoms_fine = config.rho.discretize(&config.region, 2 * config.grid)?;
    let atoms_finest: Option<DiscreteMeasure> =
        config.rho.discretize(&config.region, 4 * config.grid).ok();

    let tasks: Vec<(usize, usize)> = (0..scales.len())
        .flat_map(|si| (0..trials).map(move |t| (si, t)))
        .collect();
    let results: Result<Vec<ExponentPair>, StabilityError> = tasks
        .par_iter()
        .map(|&(si, t)| {
            let s = scales[si];
            let stamp = (si * trials + t + 1) as u64;
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_add(stamp.wrapping_mul(0x9E3779B97F4A7C15)));
            let mu_points: Vec<Vec<f64>> = (0..config.target_atoms)
                .map(|_| unit_ball_point(&mut rng, d))
                .collect();
            let mu = equal_mass_measure(mu_points.clone());
            let nu = if config.split_mass {
                let mut points = Vec::with_capacity(2 * mu_points.len());
                let mut masses = Vec::with_capacity(2 * mu_points.len());
                for (p, m) in mu_points.iter().zip(&mu.masses) {
                    for _ in 0..2 {
                        let u = unit_ball_point(&mut rng, d);
                        points.push(p.iter().zip(&u).map(|(a, b)| a + s * b).collect());
                        masses.push(0.5 * m);
                    }
                }
                DiscreteMeasure::new(points, masses).expect("split atoms are valid")
            } else {
                let points: Vec<Vec<f64>> = mu_points
                    .iter()
                    .map(|p| {
                        let u = unit_ball_point(&mut rng, d);
                        p.iter().zip(&u).map(|(a, b)| a + s * b).collect()
                    })
                    .collect();
                DiscreteMeasure::new(points, mu.masses.clone()).expect("shifted atoms are valid")
            };
            let w1 = wasserstein(1, &mu, &nu)?;
            let w2 = wasserstein(2, &mu, &nu)?;
            let (pot_base, map_base) = gaps_at(&atoms_base, &mu, &nu)?;
            let (pot_fine, map_fine) = gaps_at(&atoms_fine, &mu, &nu)?;
            let mut drift = rel_change(pot_base, pot_fine).max(rel_change(map_base, map_fine));
            let mut potential_gap = pot_fine;
            let mut map_gap = map_fine;
            let mut refined = false;
            if drift >= 0.05 {
                if let Some(finest) = &atoms_finest {
                    let (pot_xf, map_xf) = gaps_at(finest, &mu, &nu)?;
                    drift = rel_change(pot_fine, pot_xf).max(rel_change(map_fine, map_xf));
                    potential_gap = pot_xf;
                    map_gap = map_xf;
                    refined = true;
                }
            }
            Ok(ExponentPair {
                scale: s,
                trial: t as u32,
                w1,
                w2,
                potential_gap,
                map_gap,
                drift,
                refined,
            })
        })
        .collect();
    let mut pairs = results?;
    pairs.retain(|p| p.w1 > 0.0);
    pairs.sort_by(|a, b| a.w1.total_cmp(&b.w1));
    let pot_points: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|p| p.potential_gap > 0.0)
        .map(|p| (p.w1, p.potential_gap))
        .collect();
    let map_points: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|p| p.map_gap > 0.0)
        .map(|p| (p.w1, p.map_gap))
        .collect();
    let (potential_slope, potential_intercept, potential_residual) = log_log_fit(&pot_points);
    let (map_slope, map_intercept, map_residual) = log_log_fit(&map_points);
    let max_drift = pairs.iter().map(|p| p.drift).fold(0.0, f64::max);
    Ok(ExponentFit {
        family: config.tag.clone(),
        pairs,
        potential_slope,
        potential_intercept,
        potential_residual,
        map_slope,
        map_intercept,
        map_residual,
        theory_potential: config.theory_potential,
        theory_map: config.theory_map,
        grids: (config.grid, 2 * config.grid),
        max_drift,
    })
}

/// Least-squares slope, intercept, and rms residual of log y against
/// log x. NaN for fewer than two points or a degenerate abscissa.
pub fn log_log_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    if points.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let rss: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y.ln() - slope * x.ln() - intercept;
            r * r
        })
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

// ---------------------------------------------------------------------------
// Sharpness families
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessKind {
    Cauchy,
    Gaussian,
}

#[derive(Debug, Clone, Serialize)]
pub struct SharpnessRow {
    pub r: f64,
    pub r_prime: f64,
    /// Centering constants making the truncated-cone test functions
    /// mean-zero.
    pub c_r: f64,
    pub c_r_prime: f64,
    pub ball_mass: f64,
    /// Transport distance between the two pushforwards, in closed form:
    /// the mass of the annulus between the radii.
    pub w1: f64,
    pub potential_gap: f64,
    pub rate: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SharpnessTable {
    pub kind: SharpnessKind,
    /// Exponent in the rate: the family exponent for the heavy-tailed kind,
    /// one half (log-corrected) for the gaussian kind.
    pub theta: f64,
    pub rows: Vec<SharpnessRow>,
    /// Set when some ball mass is below one half; the asymptotic regime is
    /// then not yet reached, and the run proceeds.
    pub small_radius: bool,
    pub ratio_spread: f64,
}

/// Potential gaps and transport distances for the radial test-function
/// family, with the paired radius `2r` for the heavy-tailed kind and
/// `r + 1/r` for the gaussian kind.
pub fn sharpness_family(
    kind: SharpnessKind,
    rho: &DensityModel,
    radii: &[f64],
) -> Result<SharpnessTable, StabilityError> {
    assert!(!radii.is_empty());
    assert!(radii.iter().all(|&r| r > 0.0));
    let d = rho.dim();
    let theta = match (kind, &rho.family) {
        (SharpnessKind::Cauchy, DensityFamily::GeneralizedCauchy { beta }) => {
            cauchy_potential_exponent(d, *beta)
        }
        (SharpnessKind::Gaussian, DensityFamily::LogConcave { .. }) => 0.5,
        _ => panic!("density family does not match the sharpness kind"),
    };
    let mut rows = Vec::with_capacity(radii.len());
    let mut small_radius = false;
    for &r in radii {
        let rp = match kind {
            SharpnessKind::Cauchy => 2.0 * r,
            SharpnessKind::Gaussian => r + 1.0 / r,
        };
        let m0r = rho.tail_moment(0, r)?;
        let m1r = rho.tail_moment(1, r)?;
        let m2r = rho.tail_moment(2, r)?;
        let m0p = rho.tail_moment(0, rp)?;
        let m1p = rho.tail_moment(1, rp)?;
        let m2p = rho.tail_moment(2, rp)?;
        let b0 = m0r - m0p;
        let b1 = m1r - m1p;
        let b2 = m2r - m2p;
        let width = rp - r;
        let mean = b1 - r * b0 + width * m0p;
        let second = b2 - 2.0 * r * b1 + r * r * b0 + width * width * m0p;
        let var = (second - mean * mean).max(0.0);
        let gap = var.sqrt();
        let w1 = b0;
        let ball_mass = 1.0 - m0r;
        if ball_mass < 0.5 {
            small_radius = true;
        }
        let rate = match kind {
            SharpnessKind::Cauchy => w1.powf(theta),
            SharpnessKind::Gaussian => w1.sqrt() / w1.ln().abs(),
        };
        rows.push(SharpnessRow {
            r,
            r_prime: rp,
            c_r: m1r - r * m0r,
            c_r_prime: m1p - rp * m0p,
            ball_mass,
            w1,
            potential_gap: gap,
            rate,
            ratio: if rate > 0.0 { gap / rate } else { f64::NAN },
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for row in &rows {
        if row.ratio.is_finite() {
            lo = lo.min(row.ratio);
            hi = hi.max(row.ratio);
        }
    }
    Ok(SharpnessTable {
        kind,
        theta,
        rows,
        small_radius,
        ratio_spread: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

/// Transport distance between the two pushforwards of a discretized source
/// under the radial threshold maps at `r` and `r_prime`, for cross-checking
/// the closed form.
pub fn sharpness_solver_w1(
    rho: &DensityModel,
    r: f64,
    r_prime: f64,
    region: &AlignedBox,
    grid: usize,
) -> Result<f64, StabilityError> {
    let atoms = rho.discretize(region, grid)?;
    let project = |thresh: f64| -> Vec<Vec<f64>> {
        atoms
            .points
            .iter()
            .map(|x| {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n <= thresh {
                    vec![0.0; x.len()]
                } else {
                    x.iter().map(|v| v / n).collect()
                }
            })
            .collect()
    };
    let a = pushforward(&project(r), &atoms)?;
    let b = pushforward(&project(r_prime), &atoms)?;
    Ok(wasserstein(1, &a, &b)?)
}

// ---------------------------------------------------------------------------
// Room-and-passage ratio run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PassageRow {
    /// One-based passage index.
    pub n: usize,
    pub t: f64,
    pub t_prime: f64,
    pub left_mass: f64,
    pub right_mass: f64,
    pub passage_mass: f64,
    /// Variance of the potential difference, by quadrature.
    pub variance: f64,
    /// `(t' - t)^2` times the mass excess of the next room over the passage.
    pub variance_lower_bound: f64,
    pub mass_identity_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioCurve {
    pub p: u32,
    pub q: u32,
    /// One ratio per row, aligned with the row order.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleTable {
    pub rows: Vec<PassageRow>,
    pub curves: Vec<RatioCurve>,
    /// Steps where a smallness ratio of the schedule fails to decrease.
    pub smallness_warnings: Vec<String>,
}

struct XPiece {
    lo: f64,
    hi: f64,
    height: f64,
}

fn two_point_gauss(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let off = h / 3.0f64.sqrt();
    h * (f(mid - off) + f(mid + off))
}

fn integrate_pieces(pieces: &[XPiece], breaks: &[f64], f: impl Fn(f64) -> f64 + Copy) -> f64 {
    let mut total = 0.0;
    for piece in pieces {
        let mut cuts = vec![piece.lo];
        for &b in breaks {
            if b > piece.lo && b < piece.hi {
                cuts.push(b);
            }
        }
        cuts.push(piece.hi);
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let span = w[1] - w[0];
            if span <= 0.0 {
                continue;
            }
            let sub = 4;
            for k in 0..sub {
                let a = w[0] + span * k as f64 / sub as f64;
                let b = w[0] + span * (k + 1) as f64 / sub as f64;
                total += piece.height * two_point_gauss(a, b, f);
            }
        }
    }
    total
}

/// Runs the shrinking room-and-passage chain: per passage, the masses on
/// both sides, the variance of the exact potential difference by
/// quadrature, the closed-form transport distances, and the ratio curves
/// for each `(p, q)` pair. Ratios driven to zero by the schedule witness
/// that no inequality of this shape can hold with a uniform constant.
pub fn counterexample_run(
    domain: &DomainModel,
    n_max: usize,
    pq_list: &[(u32, u32)],
) -> Result<CounterexampleTable, StabilityError> {
    let Shape::RoomAndPassage {
        rooms,
        passages,
        t,
        t_prime,
        heights,
    } = &domain.shape
    else {
        panic!("counterexample_run needs a room-and-passage domain");
    };
    assert!(n_max >= 1 && n_max < rooms.len() && n_max <= passages.len());
    assert!(pq_list.iter().all(|&(p, _)| p == 1 || p == 2));
    let total: f64 = rooms.iter().map(AlignedBox::volume).sum::<f64>()
        + passages.iter().map(AlignedBox::volume).sum::<f64>();
    let c = 1.0 / total;
    let mut pieces: Vec<XPiece> = Vec::with_capacity(rooms.len() + passages.len());
    for (k, room) in rooms.iter().enumerate() {
        pieces.push(XPiece {
            lo: room.lo[0],
            hi: room.hi[0],
            height: room.side(1),
        });
        if k < passages.len() {
            pieces.push(XPiece {
                lo: passages[k].lo[0],
                hi: passages[k].hi[0],
                height: passages[k].side(1),
            });
        }
    }

    let mut rows = Vec::with_capacity(n_max);
    for i in 0..n_max {
        let (tn, tp) = (t[i], t_prime[i]);
        let delta = tp - tn;
        let left: f64 = (0..=i).map(|k| rooms[k].volume()).sum::<f64>()
            + (0..i).map(|k| passages[k].volume()).sum::<f64>();
        let right: f64 = (i + 1..rooms.len()).map(|k| rooms[k].volume()).sum::<f64>()
            + (i + 1..passages.len()).map(|k| passages[k].volume()).sum::<f64>();
        let v = c * left;
        let w = c * right;
        let pm = c * passages[i].volume();
        let g = |x: f64| {
            if x <= tn {
                -delta
            } else if x >= tp {
                delta
            } else {
                2.0 * (x - tn) - delta
            }
        };
        let breaks = [tn, tp];
        let mean = c * integrate_pieces(&pieces, &breaks, g);
        let variance = c * integrate_pieces(&pieces, &breaks, |x| {
            let dev = g(x) - mean;
            dev * dev
        });
        rows.push(PassageRow {
            n: i + 1,
            t: tn,
            t_prime: tp,
            left_mass: v,
            right_mass: w,
            passage_mass: pm,
            variance,
            variance_lower_bound: delta * delta * (c * rooms[i + 1].volume() - pm),
            mass_identity_error: (v + w + pm - 1.0).abs(),
        });
    }

    let curves = pq_list
        .iter()
        .map(|&(p, q)| RatioCurve {
            p,
            q,
            ratios: rows
                .iter()
                .map(|row| {
                    let wp = 2.0 * row.passage_mass.powf(1.0 / p as f64);
                    wp.powi(q as i32) / row.variance
                })
                .collect(),
        })
        .collect();

    let mut smallness_warnings = Vec::new();
    for &expo in &[1.0, 0.1, 0.01] {
        let series: Vec<f64> = (0..n_max)
            .map(|i| {
                let delta = t_prime[i] - t[i];
                heights[i].powf(expo) / (delta * delta * rooms[i + 1].volume())
            })
            .collect();
        for i in 1..series.len() {
            if series[i] >= series[i - 1] {
                smallness_warnings.push(format!(
                    "smallness ratio (height^{expo}) fails to decrease at n = {} -> {}: {:.6e} -> {:.6e}",
                    i,
                    i + 1,
                    series[i - 1],
                    series[i],
                ));
            }
        }
    }

    Ok(CounterexampleTable {
        rows,
        curves,
        smallness_warnings,
    })
}

// ---------------------------------------------------------------------------
