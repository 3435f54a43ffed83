//! Weighted graphs built from overlapping convex covers: vertex weights are
//! cell masses, edge weights are intersection masses. Provides the spectral
//! gap of the mass-normalized Laplacian, the isoperimetric constant by exact
//! enumeration or sweep cuts, the gap-versus-cut audit, and the orthant ring
//! family for heavy-tailed densities.

use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::density::{DensityError, DensityModel, MassRegion};
use crate::geometry::{AlignedBox, BoxClass, ConvexCell};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("mass quadrature failed during graph construction")]
    QuadratureFailure(#[from] DensityError),
    #[error("cell {0} has zero mass")]
    ZeroMassCell(usize),
    #[error("cell {0} overlaps no other cell")]
    IsolatedVertex(usize),
    #[error("{0} vertices exceed the exact-enumeration limit of 22")]
    TooLargeForExact(usize),
    #[error("{0} vertices exceed the dense eigensolver limit")]
    TooLargeForDense(usize),
    #[error("symmetric eigensolver did not converge")]
    EigenFailure,
}

const DENSE_LIMIT: usize = 4096;
const EXACT_CUT_LIMIT: usize = 22;
const EDGE_NOISE_FACTOR: f64 = 10.0;

/// Undirected graph with positive vertex masses and positive symmetric edge
/// weights; no self-loops, each edge stored once as (i, j) with i < j.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub vertex_weights: Vec<f64>,
    pub edges: Vec<(u32, u32, f64)>,
}

impl WeightedGraph {
    pub fn new(vertex_weights: Vec<f64>, mut edges: Vec<(u32, u32, f64)>) -> Self {
        let n = vertex_weights.len();
        assert!(vertex_weights.iter().all(|&d| d > 0.0));
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0, e.2);
            }
            assert!(e.0 < e.1 && (e.1 as usize) < n && e.2 > 0.0);
        }
        edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        edges.windows(2).for_each(|p| {
            assert!(
                (p[0].0, p[0].1) != (p[1].0, p[1].1),
                "duplicate edge ({}, {})",
                p[0].0,
                p[0].1
            )
        });
        Self {
            vertex_weights,
            edges,
        }
    }

    pub fn n(&self) -> usize {
        self.vertex_weights.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.vertex_weights.iter().sum()
    }

    /// Sum of incident edge weights per vertex.
    pub fn weighted_degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n()];
        for &(i, j, w) in &self.edges {
            deg[i as usize] += w;
            deg[j as usize] += w;
        }
        deg
    }

    /// Smallest C with sum_j w_ij <= C * delta_i for all i.
    pub fn degree_bound(&self) -> f64 {
        self.weighted_degrees()
            .iter()
            .zip(&self.vertex_weights)
            .map(|(wd, d)| wd / d)
            .fold(0.0, f64::max)
    }

    /// Energy sum_{edges} w_ij (u_i - u_j)^2; each unordered pair once.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j, w)| {
                let t = u[i as usize] - u[j as usize];
                w * t * t
            })
            .sum()
    }

    pub fn delta_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.vertex_weights
            .iter()
            .zip(u)
            .zip(v)
            .map(|((d, a), b)| d * a * b)
            .sum()
    }

    /// Mass-normalized Laplacian action (Lu)(i) = sum_j w_ij (u_i - u_j) / delta_i.
    pub fn laplacian_apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for &(i, j, w) in &self.edges {
            let (i, j) = (i as usize, j as usize);
            out[i] += w * (u[i] - u[j]);
            out[j] += w * (u[j] - u[i]);
        }
        for (o, d) in out.iter_mut().zip(&self.vertex_weights) {
            *o /= d;
        }
        out
    }

    fn adjacency_lists(&self) -> Vec<Vec<(u32, f64)>> {
        let mut adj = vec![Vec::new(); self.n()];
        for &(i, j, w) in &self.edges {
            adj[i as usize].push((j, w));
            adj[j as usize].push((i, w));
        }
        adj
    }

    /// Vertices reachable from vertex 0, ascending.
    pub fn component_of_zero(&self) -> Vec<u32> {
        let adj = self.adjacency_lists();
        let mut seen = vec![false; self.n()];
        seen[0] = true;
        let mut queue = std::collections::VecDeque::from([0u32]);
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &adj[v as usize] {
                if !seen[u as usize] {
                    seen[u as usize] = true;
                    queue.push_back(u);
                }
            }
        }
        (0..self.n() as u32)
            .filter(|&v| seen[v as usize])
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.component_of_zero().len() == self.n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheegerMethod {
    ExactEnumeration,
    SweepCut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheegerMode {
    Exact,
    Sweep,
}

/// Spectral gap report with an isoperimetric bracket.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectralReport {
    pub lambda2: f64,
    /// Second eigenvector in the mass inner product: unit delta-norm,
    /// delta-orthogonal to constants.
    pub fiedler_vector: Vec<f64>,
    pub connected: bool,
    /// Vertices of the component of vertex 0 when the graph is disconnected.
    pub witness_component: Option<Vec<u32>>,
    /// lambda2 / 2, a certified lower bound on the isoperimetric constant.
    pub cheeger_lower: f64,
    /// Exact constant for small graphs, sweep-cut upper bound otherwise.
    pub cheeger_value: f64,
    pub cheeger_method: CheegerMethod,
}

/// Gap-versus-cut audit: the spectral gap must dominate h^2 / (2 C_deg).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CheegerAudit {
    pub lambda2: f64,
    pub cheeger: f64,
    pub degree_bound: f64,
    pub lower_bound: f64,
    pub pass: bool,
}

fn spectral_core(g: &WeightedGraph) -> Result<(f64, Vec<f64>, Option<Vec<u32>>), GraphError> {
    let n = g.n();
    assert!(n >= 2, "spectral gap needs at least two vertices");
    if n > DENSE_LIMIT {
        return Err(GraphError::TooLargeForDense(n));
    }
    let delta = &g.vertex_weights;
    let total = g.total_volume();

    let comp = g.component_of_zero();
    if comp.len() < n {
        let vol_in: f64 = comp.iter().map(|&i| delta[i as usize]).sum();
        let vol_out = total - vol_in;
        let mut u = vec![-vol_in; n];
        for &i in &comp {
            u[i as usize] = vol_out;
        }
        let norm = g.delta_inner(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        return Ok((0.0, u, Some(comp)));
    }

    let deg = g.weighted_degrees();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = deg[i] / delta[i];
    }
    for &(i, j, w) in &g.edges {
        let (i, j) = (i as usize, j as usize);
        let v = w / (delta[i] * delta[j]).sqrt();
        m[(i, j)] = -v;
        m[(j, i)] = -v;
    }
    let se = SymmetricEigen::try_new(m, 1e-13, 100_000).ok_or(GraphError::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let lambda2 = se.eigenvalues[order[1]].max(0.0);

    let col = se.eigenvectors.column(order[1]);
    let mut u: Vec<f64> = (0..n).map(|i| col[i] / delta[i].sqrt()).collect();
    let ones = vec![1.0; n];
    let mean = g.delta_inner(&u, &ones) / total;
    u.iter_mut().for_each(|x| *x -= mean);
    let norm = g.delta_inner(&u, &u).sqrt();
    u.iter_mut().for_each(|x| *x /= norm);
    if let Some(lead) = u.iter().find(|x| x.abs() > 1e-12) {
        if *lead < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok((lambda2, u, None))
}

fn cheeger_exact_inner(g: &WeightedGraph) -> f64 {
    let n = g.n();
    let delta = &g.vertex_weights;
    let total = g.total_volume();
    let mut best = f64::INFINITY;
    // vertex 0 stays outside U, so each unordered cut appears exactly once
    for mask in 1u32..1u32 << (n - 1) {
        let mut vol_u = 0.0;
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                vol_u += delta[i];
            }
        }
        let mut cut = 0.0;
        for &(i, j, w) in &g.edges {
            let a = i != 0 && mask >> (i - 1) & 1 == 1;
            let b = j != 0 && mask >> (j - 1) & 1 == 1;
            if a != b {
                cut += w;
            }
        }
        best = best.min(cut / vol_u.min(total - vol_u));
    }
    best
}

fn cheeger_sweep_inner(g: &WeightedGraph, score: &[f64]) -> f64 {
    let n = g.n();
    let delta = &g.vertex_weights;
    let total = g.total_volume();
    let adj = g.adjacency_lists();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let mut inside = vec![false; n];
    let mut vol_u = 0.0;
    let mut cut = 0.0;
    let mut best = f64::INFINITY;
    for &v in order.iter().take(n - 1) {
        inside[v] = true;
        vol_u += delta[v];
        for &(u, w) in &adj[v] {
            if inside[u as usize] {
                cut -= w;
            } else {
                cut += w;
            }
        }
        best = best.min(cut / vol_u.min(total - vol_u));
    }
    best
}

/// Isoperimetric constant h = min over proper cuts U of the cut weight over
/// min(vol U, vol complement). Exact mode enumerates every cut; sweep mode
/// scans prefix cuts of the second eigenvector and upper-bounds h.
pub fn cheeger_constant(g: &WeightedGraph, mode: CheegerMode) -> Result<f64, GraphError> {
    match mode {
        CheegerMode::Exact => {
            if g.n() > EXACT_CUT_LIMIT {
                return Err(GraphError::TooLargeForExact(g.n()));
            }
            Ok(cheeger_exact_inner(g))
        }
        CheegerMode::Sweep => {
            let (_, fiedler, _) = spectral_core(g)?;
            Ok(cheeger_sweep_inner(g, &fiedler))
        }
    }
}

/// Second-smallest eigenvalue of the mass-normalized Laplacian, through the
/// symmetric form D^{1/2} L D^{-1/2}, with the matching eigenvector and an
/// isoperimetric bracket. Disconnected graphs report a zero gap and the
/// component of vertex 0 instead of failing.
pub fn lambda2(g: &WeightedGraph) -> Result<SpectralReport, GraphError> {
    let (lambda2, fiedler, witness) = spectral_core(g)?;
    let (cheeger_value, cheeger_method) = if g.n() <= EXACT_CUT_LIMIT {
        (cheeger_exact_inner(g), CheegerMethod::ExactEnumeration)
    } else {
        (
            cheeger_sweep_inner(g, &fiedler),
            CheegerMethod::SweepCut,
        )
    };
    Ok(SpectralReport {
        lambda2,
        cheeger_lower: 0.5 * lambda2,
        connected: witness.is_none(),
        witness_component: witness,
        fiedler_vector: fiedler,
        cheeger_value,
        cheeger_method,
    })
}

/// Checks lambda2 >= h^2 / (2 C_deg) with h by exact enumeration.
pub fn cheeger_audit(g: &WeightedGraph) -> Result<CheegerAudit, GraphError> {
    if g.n() > EXACT_CUT_LIMIT {
        return Err(GraphError::TooLargeForExact(g.n()));
    }
    let (lambda2, _, _) = spectral_core(g)?;
    let cheeger = cheeger_exact_inner(g);
    let degree_bound = g.degree_bound();
    let lower_bound = cheeger * cheeger / (2.0 * degree_bound);
    Ok(CheegerAudit {
        lambda2,
        cheeger,
        degree_bound,
        lower_bound,
        pass: lambda2 >= lower_bound - 1e-12,
    })
}

enum PairOverlap {
    Exact(MassRegion),
    Null,
    Numeric,
}

/// Closed-form intersection of two cells where one exists: boxes intersect
/// boxes, sectors with compatible orthant data merge into a sector (smaller
/// radius, larger chord), opposite orthants meet in a null set. Everything
/// else falls through to the adaptive estimator.
fn cell_intersection(a: &ConvexCell, b: &ConvexCell) -> PairOverlap {
    match (a, b) {
        (ConvexCell::Cube { cube: ca }, ConvexCell::Cube { cube: cb }) => {
            match ca.to_box().intersect(&cb.to_box()) {
                Some(bx) if bx.volume() > 0.0 => PairOverlap::Exact(MassRegion::Box(bx)),
                _ => PairOverlap::Null,
            }
        }
        (
            ConvexCell::BallSector {
                radius: r1,
                sign: s1,
                chord: c1,
            },
            ConvexCell::BallSector {
                radius: r2,
                sign: s2,
                chord: c2,
            },
        ) => {
            let z1 = s1.iter().all(|&s| s == 0);
            let z2 = s2.iter().all(|&s| s == 0);
            let (sign, chord) = if z1 {
                (s2.clone(), if z2 { c1.max(*c2) } else { *c2 })
            } else if z2 {
                (s1.clone(), *c1)
            } else if s1 == s2 {
                (s1.clone(), c1.max(*c2))
            } else if s1
                .iter()
                .zip(s2)
                .any(|(&p, &q)| p != 0 && q != 0 && p != q)
            {
                return PairOverlap::Null;
            } else {
                return PairOverlap::Numeric;
            };
            let radius = r1.min(*r2);
            let k = sign.iter().filter(|&&s| s != 0).count() as f64;
            let empty = if k == 0.0 {
                radius <= 0.0 || chord > 0.0
            } else {
                chord >= k.sqrt() * radius
            };
            if empty {
                PairOverlap::Null
            } else {
                PairOverlap::Exact(MassRegion::Cell(ConvexCell::BallSector {
                    radius,
                    sign,
                    chord,
                }))
            }
        }
        (ConvexCell::Cube { cube }, bs @ ConvexCell::BallSector { .. })
        | (bs @ ConvexCell::BallSector { .. }, ConvexCell::Cube { cube }) => {
            let cb = cube.to_box();
            match bs.classify_box(&cb) {
                BoxClass::Inside => PairOverlap::Exact(MassRegion::Box(cb)),
                BoxClass::Outside => PairOverlap::Null,
                BoxClass::Straddle => PairOverlap::Numeric,
            }
        }
    }
}

struct StraddleBox {
    bound: f64,
    bx: AlignedBox,
}

impl PartialEq for StraddleBox {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for StraddleBox {}
impl PartialOrd for StraddleBox {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for StraddleBox {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| {
            for (a, b) in self.bx.lo.iter().zip(&other.bx.lo) {
                let c = a.total_cmp(b);
                if c != std::cmp::Ordering::Equal {
                    return c;
                }
            }
            std::cmp::Ordering::Equal
        })
    }
}

/// Mass of the intersection of two cells lacking a closed form, by bisecting
/// the frontier of straddling boxes. The returned value differs from the
/// truth by at most half the straddle mass left when refinement stops, which
/// is driven below rel_tol of the estimate unless the split budget runs out.
fn numeric_intersection_mass(
    rho: &DensityModel,
    a: &ConvexCell,
    b: &ConvexCell,
    rel_tol: f64,
) -> Result<f64, DensityError> {
    let bb = match a.bounding_box().intersect(&b.bounding_box()) {
        Some(bx) if bx.volume() > 0.0 => bx,
        _ => return Ok(0.0),
    };
    let coarse = rel_tol.max(1e-4);
    let mut inside = 0.0f64;
    let mut slack = 0.0f64;
    let mut frontier: BinaryHeap<StraddleBox> = BinaryHeap::new();

    let account = |bx: AlignedBox,
                       inside: &mut f64,
                       slack: &mut f64,
                       frontier: &mut BinaryHeap<StraddleBox>|
     -> Result<(), DensityError> {
        if bx.volume() <= 0.0 {
            return Ok(());
        }
        match (a.classify_box(&bx), b.classify_box(&bx)) {
            (BoxClass::Outside, _) | (_, BoxClass::Outside) => {}
            (BoxClass::Inside, BoxClass::Inside) => {
                *inside += rho.mass(&MassRegion::Box(bx), rel_tol)?;
            }
            _ => {
                let bound = rho.mass(&MassRegion::Box(bx.clone()), coarse)?;
                if bound > 0.0 {
                    *slack += bound;
                    frontier.push(StraddleBox { bound, bx });
                }
            }
        }
        Ok(())
    };

    account(bb, &mut inside, &mut slack, &mut frontier)?;
    let mut splits = 0usize;
    while !frontier.is_empty() {
        let est = inside + 0.5 * slack;
        if 0.5 * slack <= rel_tol * est.max(1e-300) || splits >= 40_000 {
            break;
        }
        let top = frontier.pop().unwrap();
        slack -= top.bound;
        let bx = top.bx;
        let j = (0..bx.dim())
            .max_by(|&p, &q| bx.side(p).total_cmp(&bx.side(q)))
            .unwrap();
        let mid = 0.5 * (bx.lo[j] + bx.hi[j]);
        let mut left = bx.clone();
        left.hi[j] = mid;
        let mut right = bx;
        right.lo[j] = mid;
        account(left, &mut inside, &mut slack, &mut frontier)?;
        account(right, &mut inside, &mut slack, &mut frontier)?;
        splits += 1;
    }
    Ok(inside + 0.5 * slack)
}

fn pair_mass(
    rho: &DensityModel,
    a: &ConvexCell,
    b: &ConvexCell,
    rel_tol: f64,
) -> Result<f64, DensityError> {
    match cell_intersection(a, b) {
        PairOverlap::Null => Ok(0.0),
        PairOverlap::Exact(region) => rho.mass(&region, rel_tol),
        PairOverlap::Numeric => numeric_intersection_mass(rho, a, b, rel_tol),
    }
}

/// Vertex masses and pairwise intersection masses of a cover under rho.
/// Intersections whose mass cannot be told from quadrature noise, below
/// 10 * rel_tol * min(delta_i, delta_j), are dropped rather than kept as
/// spurious edges.
pub fn build_graph(
    cells: &[ConvexCell],
    rho: &DensityModel,
    rel_tol: f64,
) -> Result<WeightedGraph, GraphError> {
    let n = cells.len();
    let vertex_weights: Vec<f64> = cells
        .par_iter()
        .map(|c| rho.mass(&MassRegion::Cell(c.clone()), rel_tol))
        .collect::<Result<_, _>>()?;
    if let Some(i) = vertex_weights.iter().position(|&d| !(d > 0.0)) {
        return Err(GraphError::ZeroMassCell(i));
    }

    let pairs: Vec<(u32, u32)> = (0..n as u32)
        .flat_map(|i| (i + 1..n as u32).map(move |j| (i, j)))
        .collect();
    let masses: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pair_mass(rho, &cells[i as usize], &cells[j as usize], rel_tol))
        .collect::<Result<_, _>>()?;

    let mut edges = Vec::new();
    for (&(i, j), &w) in pairs.iter().zip(&masses) {
        let floor =
            EDGE_NOISE_FACTOR * rel_tol * vertex_weights[i as usize].min(vertex_weights[j as usize]);
        if w > floor {
            edges.push((i, j, w));
        }
    }
    let g = WeightedGraph::new(vertex_weights, edges);
    let deg = g.weighted_degrees();
    if let Some(i) = deg.iter().position(|&d| d == 0.0) {
        return Err(GraphError::IsolatedVertex(i));
    }
    Ok(g)
}

/// Cells of the orthant ring family truncated at radius 2^n: a central ball
/// of radius 2, then for each ring index J in 1..n and each orthant the
/// sector { |x| <= 2^{J+1}, orthant, <sign, x> >= 2^{J-1} }.
pub fn cauchy_family_cells(dimension: usize, n: u32) -> Vec<ConvexCell> {
    assert!((1..=3).contains(&dimension));
    assert!(n >= 2, "truncation radius is 2^n with n >= 2");
    let mut cells = vec![ConvexCell::BallSector {
        radius: 2.0,
        sign: vec![0; dimension],
        chord: 0.0,
    }];
    for j in 1..n as i32 {
        for mask in 0..1u32 << dimension {
            let sign: Vec<i8> = (0..dimension)
                .map(|k| if mask >> k & 1 == 1 { 1 } else { -1 })
                .collect();
            cells.push(ConvexCell::BallSector {
                radius: 2.0f64.powi(j + 1),
                sign,
                chord: 2.0f64.powi(j - 1),
            });
        }
    }
    cells
}

/// Overlap graph of the orthant ring family under the heavy-tailed density
/// (1 + |x|^2)^{-beta/2}, truncated at radius 2^n.
pub fn cauchy_family_graph(
    dimension: usize,
    beta: f64,
    n: u32,
    rel_tol: f64,
) -> Result<WeightedGraph, GraphError> {
    let rho = DensityModel::generalized_cauchy(dimension, beta)?;
    build_graph(&cauchy_family_cells(dimension, n), &rho, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{boman_family, whitney_decompose};
    use crate::geometry::{DomainModel, DyadicCube, ScaledCube};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_vertex(w: f64) -> WeightedGraph {
        WeightedGraph::new(vec![1.0, 1.0], vec![(0, 1, w)])
    }

    fn random_connected_graph(rng: &mut ChaCha8Rng, max_n: usize) -> WeightedGraph {
        let n = rng.gen_range(2..=max_n);
        let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let mut edges: Vec<(u32, u32, f64)> = Vec::new();
        for v in 1..n as u32 {
            let u = rng.gen_range(0..v);
            edges.push((u, v, rng.gen_range(0.05..1.0)));
        }
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                if edges.iter().any(|e| (e.0, e.1) == (i, j)) {
                    continue;
                }
                if rng.gen_bool(0.3) {
                    edges.push((i, j, rng.gen_range(0.05..1.0)));
                }
            }
        }
        WeightedGraph::new(delta, edges)
    }

    #[test]
    fn two_vertex_closed_forms() {
        let g = two_vertex(0.3);
        let rep = lambda2(&g).unwrap();
        assert!((rep.lambda2 - 0.6).abs() < 1e-12);
        assert!(rep.connected);
        assert_eq!(rep.cheeger_method, CheegerMethod::ExactEnumeration);
        assert!((rep.cheeger_value - 0.3).abs() < 1e-12);
        assert!((rep.cheeger_lower - 0.3).abs() < 1e-12);

        let audit = cheeger_audit(&g).unwrap();
        assert!((audit.degree_bound - 0.3).abs() < 1e-12);
        assert!((audit.lower_bound - 0.15).abs() < 1e-12);
        assert!(audit.pass);
    }

    #[test]
    fn path_of_three_has_unit_gap() {
        let g = WeightedGraph::new(vec![1.0; 3], vec![(0, 1, 1.0), (1, 2, 1.0)]);
        let rep = lambda2(&g).unwrap();
        assert!((rep.lambda2 - 1.0).abs() < 1e-10, "{}", rep.lambda2);

        let u = &rep.fiedler_vector;
        let ones = vec![1.0; 3];
        assert!(g.delta_inner(u, &ones).abs() < 1e-9);
        assert!((g.delta_inner(u, u) - 1.0).abs() < 1e-12);
        let rayleigh = g.quadratic_form(u) / g.delta_inner(u, u);
        assert!((rayleigh - rep.lambda2).abs() < 1e-9);
    }

    #[test]
    fn complete_graph_cheeger_by_enumeration() {
        let mut edges = Vec::new();
        for i in 0..4u32 {
            for j in i + 1..4 {
                edges.push((i, j, 1.0));
            }
        }
        let g = WeightedGraph::new(vec![1.0; 4], edges);
        let h = cheeger_constant(&g, CheegerMode::Exact).unwrap();
        assert!((h - 2.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_reports_zero_gap() {
        let g = WeightedGraph::new(
            vec![1.0; 4],
            vec![(0, 1, 1.0), (2, 3, 1.0)],
        );
        let rep = lambda2(&g).unwrap();
        assert_eq!(rep.lambda2, 0.0);
        assert!(!rep.connected);
        assert_eq!(rep.witness_component, Some(vec![0, 1]));
        assert_eq!(rep.cheeger_value, 0.0);
        let ones = vec![1.0; 4];
        assert!(g.delta_inner(&rep.fiedler_vector, &ones).abs() < 1e-12);
    }

    #[test]
    fn quadratic_form_matches_laplacian_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = random_connected_graph(&mut rng, 10);
            let u: Vec<f64> = (0..g.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lu = g.laplacian_apply(&u);
            let pairing = g.delta_inner(&u, &lu);
            let q = g.quadratic_form(&u);
            assert!((pairing - q).abs() <= 1e-10 * q.max(1.0));
        }
    }

    #[test]
    fn random_rayleigh_quotients_upper_bound_lambda2() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = random_connected_graph(&mut rng, 9);
        let rep = lambda2(&g).unwrap();
        let ones = vec![1.0; g.n()];
        let total = g.total_volume();
        for _ in 0..1000 {
            let mut u: Vec<f64> = (0..g.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean = g.delta_inner(&u, &ones) / total;
            u.iter_mut().for_each(|x| *x -= mean);
            let nn = g.delta_inner(&u, &u);
            if nn < 1e-12 {
                continue;
            }
            assert!(rep.lambda2 <= g.quadratic_form(&u) / nn + 1e-9);
        }
    }

    #[test]
    fn cheeger_audit_holds_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..100 {
            let g = random_connected_graph(&mut rng, 12);
            let audit = cheeger_audit(&g).unwrap();
            assert!(
                audit.pass,
                "lambda2 {} below {}",
                audit.lambda2, audit.lower_bound
            );
            let sweep = cheeger_constant(&g, CheegerMode::Sweep).unwrap();
            assert!(sweep >= audit.cheeger - 1e-12);
            assert!(0.5 * audit.lambda2 <= audit.cheeger + 1e-12);
        }
    }

    #[test]
    fn build_graph_two_overlapping_cubes() {
        let dom = DomainModel::box_domain(vec![-0.25], vec![2.25]);
        let rho = DensityModel::uniform(dom).unwrap();
        let cells = vec![
            ConvexCell::Cube {
                cube: ScaledCube::new(DyadicCube::new(0, vec![0]), 1.5),
            },
            ConvexCell::Cube {
                cube: ScaledCube::new(DyadicCube::new(0, vec![1]), 1.5),
            },
        ];
        let g = build_graph(&cells, &rho, 1e-6).unwrap();
        assert!((g.vertex_weights[0] - 0.6).abs() < 1e-12);
        assert!((g.vertex_weights[1] - 0.6).abs() < 1e-12);
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].2 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn isolated_cell_is_an_error() {
        let dom = DomainModel::box_domain(vec![0.0], vec![8.0]);
        let rho = DensityModel::uniform(dom).unwrap();
        let cells = vec![
            ConvexCell::Cube {
                cube: ScaledCube::new(DyadicCube::new(0, vec![0]), 1.0),
            },
            ConvexCell::Cube {
                cube: ScaledCube::new(DyadicCube::new(0, vec![5]), 1.0),
            },
        ];
        assert!(matches!(
            build_graph(&cells, &rho, 1e-6),
            Err(GraphError::IsolatedVertex(_))
        ));
    }

    #[test]
    fn cauchy_line_family_is_a_path() {
        let g = cauchy_family_graph(1, 5.0, 3, 1e-6).unwrap();
        assert_eq!(g.n(), 5);
        let structure: Vec<(u32, u32)> = g.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(structure, vec![(0, 1), (0, 2), (1, 3), (2, 4)]);
        assert!(g.is_connected());
        // mirror symmetry of the density
        assert!((g.vertex_weights[1] - g.vertex_weights[2]).abs() < 1e-8);
        assert!((g.edges[0].2 - g.edges[1].2).abs() < 1e-8);
    }

    #[test]
    fn cauchy_plane_family_degrees_within_bound() {
        let g = cauchy_family_graph(2, 6.0, 3, 1e-5).unwrap();
        assert_eq!(g.n(), 9);
        let counts: Vec<usize> = {
            let mut c = vec![0usize; g.n()];
            for &(i, j, _) in &g.edges {
                c[i as usize] += 1;
                c[j as usize] += 1;
            }
            c
        };
        assert_eq!(counts[0], 8, "hub reaches both rings in the plane");
        assert!(counts.iter().skip(1).all(|&c| c == 2));
        assert!(counts.iter().all(|&c| c <= 24));
    }

    fn mc_intersection_mass(
        rho: &DensityModel,
        a: &ConvexCell,
        b: &ConvexCell,
        samples: usize,
        seed: u64,
    ) -> (f64, f64) {
        let bb = a.bounding_box().intersect(&b.bounding_box()).unwrap();
        let d = bb.dim();
        let vol = bb.volume();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = (0..d).map(|j| rng.gen_range(bb.lo[j]..bb.hi[j])).collect();
            let v = if a.contains(&x) && b.contains(&x) {
                rho.evaluate(&x)
            } else {
                0.0
            };
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / samples as f64;
        let var = (sumsq / samples as f64 - mean * mean).max(0.0);
        (vol * mean, vol * (var / samples as f64).sqrt())
    }

    #[test]
    fn merged_sector_mass_matches_sampling() {
        let rho = DensityModel::generalized_cauchy(2, 6.0).unwrap();
        let a = ConvexCell::BallSector {
            radius: 4.0,
            sign: vec![1, 1],
            chord: 1.0,
        };
        let b = ConvexCell::BallSector {
            radius: 8.0,
            sign: vec![1, 1],
            chord: 2.0,
        };
        let exact = pair_mass(&rho, &a, &b, 1e-6).unwrap();
        let (mc, se) = mc_intersection_mass(&rho, &a, &b, 2_000_000, 5);
        assert!(
            (exact - mc).abs() < 4.0 * se + 0.01 * exact,
            "exact {exact} mc {mc} se {se}"
        );
    }

    #[test]
    fn cube_sector_numeric_mass_matches_sampling() {
        let rho = DensityModel::generalized_cauchy(2, 6.0).unwrap();
        let cube = ConvexCell::Cube {
            cube: ScaledCube::new(DyadicCube::new(0, vec![0, 0]), 2.0),
        };
        let hub = ConvexCell::BallSector {
            radius: 2.0,
            sign: vec![0, 0],
            chord: 0.0,
        };
        assert!(matches!(
            cell_intersection(&cube, &hub),
            PairOverlap::Numeric
        ));
        let est = pair_mass(&rho, &cube, &hub, 1e-5).unwrap();
        let (mc, se) = mc_intersection_mass(&rho, &cube, &hub, 2_000_000, 9);
        assert!(
            (est - mc).abs() < 4.0 * se + 0.01 * est,
            "est {est} mc {mc} se {se}"
        );
    }

    #[test]
    fn dumbbell_cover_gap_shrinks_with_neck() {
        let gap = |eps: f64| {
            let dom = DomainModel::dumbbell(0.5, 0.5, eps);
            let w = whitney_decompose(&dom, 6).unwrap();
            let f = boman_family(w).unwrap();
            let cells: Vec<ConvexCell> = f
                .cells
                .iter()
                .map(|q| ConvexCell::Cube { cube: q.clone() })
                .collect();
            let rho = DensityModel::uniform(dom).unwrap();
            let g = build_graph(&cells, &rho, 1e-6).unwrap();
            lambda2(&g).unwrap().lambda2
        };
        let g20 = gap(0.2);
        let g10 = gap(0.1);
        let g05 = gap(0.05);
        assert!(
            g20 > g10 && g10 > g05,
            "gaps not monotone: {g20} {g10} {g05}"
        );
    }

    #[test]
    fn family_gap_stays_bounded_quick() {
        let l3 = lambda2(&cauchy_family_graph(1, 5.0, 3, 1e-6).unwrap())
            .unwrap()
            .lambda2;
        let l4 = lambda2(&cauchy_family_graph(1, 5.0, 4, 1e-6).unwrap())
            .unwrap()
            .lambda2;
        assert!(l3 > 0.0);
        assert!(l4 >= 0.5 * l3, "l3 {l3} l4 {l4}");
    }
}
