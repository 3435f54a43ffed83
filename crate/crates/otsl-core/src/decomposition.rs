//! Whitney cube families over bounded open domains, dilated chain covers,
//! and measured overlap/chain/doubling/density constants.

use std::collections::HashMap;

use rand::prelude::*;
use rayon::prelude::*;
use thiserror::Error;

use crate::density::{DensityError, DensityModel, MassRegion};
use crate::geometry::{AlignedBox, DomainModel, DyadicCube, ScaledCube, Shape};

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("domain has no interior at this truncation depth")]
    EmptyDomain,
    #[error("domain is unbounded or carries no certified bounding box")]
    UnboundedDomain,
    #[error("cell cover is disconnected: reached {reached} of {total} cells from the center")]
    DisconnectedCover { reached: usize, total: usize },
    #[error("mass quadrature failed during the audit")]
    QuadratureFailure(#[from] DensityError),
}

/// Hash key for a dyadic cube, fixed-width so probing allocates nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CubeKey {
    level: i32,
    idx: [i64; 4],
}

impl CubeKey {
    fn of(level: i32, index: &[i64]) -> Self {
        let mut idx = [0i64; 4];
        idx[..index.len()].copy_from_slice(index);
        Self { level, idx }
    }
}

/// Dyadic cubes inside an open domain whose sidelength is pinned to their
/// distance from the complement, truncated at a finest level.
#[derive(Debug, Clone)]
pub struct WhitneyDecomposition {
    pub domain: DomainModel,
    pub cubes: Vec<DyadicCube>,
    /// Pairs of cube ids whose closed boxes share at least one point.
    pub adjacency: Vec<(u32, u32)>,
    pub max_level: i32,
    /// Total volume of the emitted cubes (disjoint interiors, exact sum).
    pub covered_volume: f64,
    /// Domain volume not covered by any emitted cube, when the domain has a
    /// closed-form volume.
    pub uncovered_volume: Option<f64>,
    index: HashMap<CubeKey, u32>,
}

impl WhitneyDecomposition {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Id of the cube with the given dyadic coordinates, if it was emitted.
    pub fn cube_at(&self, level: i32, index: &[i64]) -> Option<u32> {
        self.index.get(&CubeKey::of(level, index)).copied()
    }

    /// Number of touching neighbors per cube.
    pub fn neighbor_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.cubes.len()];
        for &(a, b) in &self.adjacency {
            counts[a as usize] += 1;
            counts[b as usize] += 1;
        }
        counts
    }

    /// Distance from an emitted cube to the domain complement.
    pub fn boundary_distance(&self, id: u32) -> f64 {
        self.domain
            .box_exterior_distance(&self.cubes[id as usize].to_box())
    }

    fn levels(&self) -> Vec<i32> {
        let mut ls: Vec<i32> = self.cubes.iter().map(|c| c.level).collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    }
}

/// True when the closed box provably misses the domain, so refinement below
/// it cannot produce any cube.
fn certainly_outside(dom: &DomainModel, bx: &AlignedBox) -> bool {
    let d = dom.dim();
    match &dom.shape {
        Shape::Box { lo, hi } => (0..d).any(|j| bx.hi[j] <= lo[j] || bx.lo[j] >= hi[j]),
        Shape::Ball { center, radius } => {
            let m: f64 = (0..d)
                .map(|j| {
                    let v = (center[j] - bx.hi[j]).max(bx.lo[j] - center[j]).max(0.0);
                    v * v
                })
                .sum();
            m >= radius * radius
        }
        Shape::PuncturedBall { radius } => bx.min_norm2() >= radius * radius,
        Shape::HalfspaceIntersection { halfspaces } => halfspaces.iter().any(|h| {
            let mn: f64 = (0..d)
                .map(|j| (h.normal[j] * bx.lo[j]).min(h.normal[j] * bx.hi[j]))
                .sum();
            mn >= h.offset
        }),
        _ => dom
            .rect_pieces()
            .expect("composite domains are rectilinear")
            .iter()
            .all(|p| p.intersect(bx).map_or(true, |i| i.volume() <= 0.0)),
    }
}

/// Top-down refinement: a cube is kept once it sits inside the domain with
/// clearance at least its diameter, and is split otherwise. Cubes that would
/// need refinement past `max_level` are dropped and the missing volume is
/// reported.
pub fn whitney_decompose(
    dom: &DomainModel,
    max_level: i32,
) -> Result<WhitneyDecomposition, DecompositionError> {
    let d = dom.dim();
    assert!(
        (1..=4).contains(&d),
        "cube families are keyed for dimensions 1 through 4"
    );
    let bb = dom
        .bounding_box()
        .map_err(|_| DecompositionError::UnboundedDomain)?;
    let max_side = (0..d).map(|j| bb.side(j)).fold(0.0f64, f64::max);
    if !(max_side > 0.0) {
        return Err(DecompositionError::EmptyDomain);
    }
    let root_level = (-(max_side.log2())).floor() as i32;
    let sqd = (d as f64).sqrt();

    let mut stack: Vec<DyadicCube> = Vec::new();
    if root_level <= max_level {
        let side0 = 2.0f64.powi(-root_level);
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|j| {
                (
                    (bb.lo[j] / side0).floor() as i64,
                    (bb.hi[j] / side0).floor() as i64,
                )
            })
            .collect();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'roots: loop {
            stack.push(DyadicCube::new(root_level, idx.clone()));
            for j in 0..d {
                if idx[j] < ranges[j].1 {
                    idx[j] += 1;
                    continue 'roots;
                }
                idx[j] = ranges[j].0;
            }
            break;
        }
    }

    let mut cubes: Vec<DyadicCube> = Vec::new();
    while let Some(p) = stack.pop() {
        let pb = p.to_box();
        if certainly_outside(dom, &pb) {
            continue;
        }
        if dom.contains_box(&pb) {
            let dist = dom.box_exterior_distance(&pb);
            if dist >= sqd * p.sidelength() {
                debug_assert!(dist <= 4.0 * sqd * p.sidelength() * (1.0 + 1e-12));
                cubes.push(p);
                continue;
            }
        }
        if p.level < max_level {
            stack.extend(p.children());
        }
    }
    if cubes.is_empty() {
        return Err(DecompositionError::EmptyDomain);
    }
    cubes.sort_unstable_by(|a, b| (a.level, &a.index).cmp(&(b.level, &b.index)));

    let mut index = HashMap::with_capacity(cubes.len() * 2);
    for (i, c) in cubes.iter().enumerate() {
        index.insert(CubeKey::of(c.level, &c.index), i as u32);
    }

    // Touching cubes differ by at most two levels, so probing the equal and
    // two coarser grids around each cube finds every pair.
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut off = vec![0i64; d];
    for (i, c) in cubes.iter().enumerate() {
        let i = i as u32;
        off.fill(-1);
        'offsets: loop {
            if off.iter().any(|&o| o != 0) {
                let probe: Vec<i64> = (0..d).map(|j| c.index[j] + off[j]).collect();
                for shift in 0..3i32 {
                    let key = CubeKey::of(
                        c.level - shift,
                        &probe
                            .iter()
                            .map(|&v| v.div_euclid(1i64 << shift))
                            .collect::<Vec<i64>>(),
                    );
                    if let Some(&n) = index.get(&key) {
                        if n != i {
                            edges.push((i.min(n), i.max(n)));
                        }
                        break;
                    }
                }
            }
            for j in 0..d {
                if off[j] < 1 {
                    off[j] += 1;
                    continue 'offsets;
                }
                off[j] = -1;
            }
            break;
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let covered_volume: f64 = cubes.iter().map(|c| c.sidelength().powi(d as i32)).sum();
    let uncovered_volume = dom.volume().map(|v| (v - covered_volume).max(0.0));

    Ok(WhitneyDecomposition {
        domain: dom.clone(),
        cubes,
        adjacency: edges,
        max_level,
        covered_volume,
        uncovered_volume,
        index,
    })
}

/// Dilated cube cover with a designated central cell and, for every cell, a
/// shortest chain of overlapping cells leading back to the center.
#[derive(Debug, Clone)]
pub struct BomanFamily {
    pub whitney: WhitneyDecomposition,
    pub sigma: f64,
    pub cells: Vec<ScaledCube>,
    pub central_index: u32,
    chain_parent: Vec<u32>,
    chain_depth: Vec<u32>,
}

impl BomanFamily {
    /// Chain of cell ids from the central cell to cell `i`, inclusive.
    pub fn chain(&self, i: u32) -> Vec<u32> {
        let mut rev = vec![i];
        let mut cur = i;
        while cur != self.central_index {
            cur = self.chain_parent[cur as usize];
            rev.push(cur);
        }
        rev.reverse();
        rev
    }

    pub fn chain_length(&self, i: u32) -> usize {
        self.chain_depth[i as usize] as usize + 1
    }

    /// Consecutive chain pairs, each listed once as (closer to center, cell).
    pub fn chain_links(&self) -> Vec<(u32, u32)> {
        (0..self.cells.len() as u32)
            .filter(|&i| i != self.central_index)
            .map(|i| (self.chain_parent[i as usize], i))
            .collect()
    }

    /// Largest number of cells covering any of `n_points` domain samples.
    pub fn max_sampled_overlap(&self, n_points: usize, seed: u64) -> usize {
        let dom = &self.whitney.domain;
        let d = dom.dim();
        let bb = dom.bounding_box().expect("family domains are bounded");
        let levels = self.whitney.levels();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0usize;
        let mut drawn = 0usize;
        let mut attempts = 0usize;
        while drawn < n_points {
            attempts += 1;
            assert!(
                attempts < 1000 * n_points.max(64),
                "domain volume fraction too small to sample"
            );
            let x: Vec<f64> = (0..d).map(|j| rng.gen_range(bb.lo[j]..bb.hi[j])).collect();
            if !dom.contains(&x) {
                continue;
            }
            drawn += 1;
            let mut count = 0usize;
            for &l in &levels {
                let base = DyadicCube::containing(l, &x);
                let mut off = vec![0i64; d];
                off.fill(-1);
                'offsets: loop {
                    let probe: Vec<i64> = (0..d).map(|j| base.index[j] + off[j]).collect();
                    if let Some(id) = self.whitney.cube_at(l, &probe) {
                        if self.cells[id as usize].contains(&x) {
                            count += 1;
                        }
                    }
                    for j in 0..d {
                        if off[j] < 1 {
                            off[j] += 1;
                            continue 'offsets;
                        }
                        off[j] = -1;
                    }
                    break;
                }
            }
            worst = worst.max(count);
        }
        worst
    }
}

/// Dilates each cube by sigma = min(10/9, (d+1)/d), picks the central cell,
/// and computes shortest chains by breadth-first search over the cell
/// overlap graph, parents tie-broken toward smaller cell ids.
pub fn boman_family(w: WhitneyDecomposition) -> Result<BomanFamily, DecompositionError> {
    let d = w.domain.dim();
    let n = w.cubes.len();
    let sigma = (10.0f64 / 9.0).min((d as f64 + 1.0) / d as f64);
    let cells: Vec<ScaledCube> = w
        .cubes
        .iter()
        .map(|c| ScaledCube::new(c.clone(), sigma))
        .collect();

    // Cubes are sorted coarsest first, so the first hit has maximal side and
    // the smallest lexicographic coordinates among the candidates.
    let central_index = w
        .domain
        .john_center
        .as_ref()
        .and_then(|x0| {
            w.cubes
                .iter()
                .position(|c| c.to_box().contains(x0))
                .map(|i| i as u32)
        })
        .unwrap_or(0);

    let mut deg = vec![0u32; n];
    for &(a, b) in &w.adjacency {
        deg[a as usize] += 1;
        deg[b as usize] += 1;
    }
    let mut offsets = vec![0usize; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + deg[i] as usize;
    }
    let mut targets = vec![0u32; offsets[n]];
    let mut fill = offsets.clone();
    for &(a, b) in &w.adjacency {
        targets[fill[a as usize]] = b;
        fill[a as usize] += 1;
        targets[fill[b as usize]] = a;
        fill[b as usize] += 1;
    }

    const UNSEEN: u32 = u32::MAX;
    let mut dist = vec![UNSEEN; n];
    dist[central_index as usize] = 0;
    let mut queue = std::collections::VecDeque::from([central_index]);
    let mut reached = 1usize;
    while let Some(u) = queue.pop_front() {
        for &v in &targets[offsets[u as usize]..offsets[u as usize + 1]] {
            if dist[v as usize] == UNSEEN {
                dist[v as usize] = dist[u as usize] + 1;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    if reached < n {
        return Err(DecompositionError::DisconnectedCover { reached, total: n });
    }

    let mut parent = vec![central_index; n];
    for v in 0..n {
        if v as u32 == central_index {
            continue;
        }
        let want = dist[v] - 1;
        parent[v] = targets[offsets[v]..offsets[v + 1]]
            .iter()
            .copied()
            .filter(|&u| dist[u as usize] == want)
            .min()
            .expect("finite distance implies a neighbor one step closer");
    }

    Ok(BomanFamily {
        whitney: w,
        sigma,
        cells,
        central_index,
        chain_parent: parent,
        chain_depth: dist,
    })
}

/// Measured constants of a chain cover under a reference density.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainAudit {
    /// Largest sampled pointwise overlap count of the dilated cells.
    pub a_meas: usize,
    /// Smallest dilation that swallows each chain's target from every link.
    pub b_meas: f64,
    /// Worst link-mass ratio between consecutive cells and their overlap.
    pub c_meas: f64,
    /// Worst doubling ratio at dilation 5 * b_meas * sqrt(d).
    pub d_meas: f64,
    /// Worst per-cell ratio of density supremum to infimum.
    pub e_meas: f64,
    pub overlap_within_bound: bool,
    pub constants_finite: bool,
}

const AUDIT_SAMPLES: usize = 100_000;
const AUDIT_SEED: u64 = 0xA11D17;
const AUDIT_MASS_TOL: f64 = 1e-6;

/// Smallest factor by which `frame` must be dilated about its own center to
/// contain `target`.
fn containment_dilation(frame: &ScaledCube, target: &AlignedBox) -> f64 {
    let c = frame.center();
    let h = 0.5 * frame.sidelength();
    let mut b = 0.0f64;
    for j in 0..target.dim() {
        b = b.max((c[j] - target.lo[j]).max(target.hi[j] - c[j]) / h);
    }
    b
}

fn density_ratio_on(rho: &DensityModel, bx: &AlignedBox) -> f64 {
    if let Some((lo, hi)) = rho.density_bounds_on(bx) {
        if lo > 0.0 {
            return hi / lo;
        }
        return f64::INFINITY;
    }
    // lattice fallback, corners included
    let d = bx.dim();
    let m = 4usize;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut idx = vec![0usize; d];
    'grid: loop {
        let x: Vec<f64> = (0..d)
            .map(|j| bx.lo[j] + bx.side(j) * idx[j] as f64 / (m - 1) as f64)
            .collect();
        let v = rho.evaluate(&x);
        lo = lo.min(v);
        hi = hi.max(v);
        for j in 0..d {
            if idx[j] + 1 < m {
                idx[j] += 1;
                continue 'grid;
            }
            idx[j] = 0;
        }
        break;
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Measures the cover constants for a family under a density: sampled
/// overlap, chain containment dilation, link-mass comparability, doubling at
/// the induced dilation, and per-cell density oscillation. Masses come from
/// the density module at a fixed relative tolerance.
pub fn audit_chain_condition(
    f: &BomanFamily,
    rho: &DensityModel,
) -> Result<ChainAudit, DecompositionError> {
    let d = f.whitney.domain.dim();
    let n = f.cells.len();

    let a_meas = f.max_sampled_overlap(AUDIT_SAMPLES, AUDIT_SEED);

    let b_meas = (0..n as u32)
        .into_par_iter()
        .map(|i| {
            let target = f.cells[i as usize].to_box();
            f.chain(i)
                .iter()
                .map(|&j| containment_dilation(&f.cells[j as usize], &target))
                .fold(1.0f64, f64::max)
        })
        .reduce(|| 1.0, f64::max);

    let cell_masses: Vec<f64> = f
        .cells
        .par_iter()
        .map(|q| rho.mass(&MassRegion::Box(q.to_box()), AUDIT_MASS_TOL))
        .collect::<Result<_, _>>()?;

    let links = f.chain_links();
    let c_meas = links
        .par_iter()
        .map(|&(u, v)| {
            let qa = f.cells[u as usize].to_box();
            let qb = f.cells[v as usize].to_box();
            let cap = qa
                .intersect(&qb)
                .expect("consecutive chain cells overlap");
            let mcap = rho.mass(&MassRegion::Box(cap), AUDIT_MASS_TOL)?;
            let (ma, mb) = (cell_masses[u as usize], cell_masses[v as usize]);
            Ok((ma / mb).max(mb / ma).max(ma.max(mb) / mcap))
        })
        .try_reduce(|| 1.0f64, |a, b| Ok(a.max(b)))
        .map_err(DecompositionError::QuadratureFailure)?;

    let blow = 5.0 * b_meas * (d as f64).sqrt();
    let d_meas = f
        .cells
        .par_iter()
        .zip(&cell_masses)
        .map(|(q, &m)| {
            let big = rho.mass(&MassRegion::Box(q.dilate(blow).to_box()), AUDIT_MASS_TOL)?;
            Ok(big / m)
        })
        .try_reduce(|| 1.0f64, |a, b| Ok(a.max(b)))
        .map_err(DecompositionError::QuadratureFailure)?;

    let e_meas = f
        .cells
        .par_iter()
        .map(|q| density_ratio_on(rho, &q.to_box()))
        .reduce(|| 1.0, f64::max);

    let constants_finite = [b_meas, c_meas, d_meas, e_meas]
        .iter()
        .all(|v| v.is_finite() && *v >= 1.0);
    Ok(ChainAudit {
        a_meas,
        b_meas,
        c_meas,
        d_meas,
        e_meas,
        overlap_within_bound: a_meas <= 12usize.pow(d as u32),
        constants_finite,
    })
}
