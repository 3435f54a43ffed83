//! Exact discrete optimal transport.
//!
//! The solver is a network simplex on the dense bipartite transportation
//! problem. Quadratic-cost problems are solved internally with cost
//! 0.5*|x-y|^2 so the dual directly yields Brenier potentials
//! phi(x) = 0.5*|x|^2 - f(x); reported costs and potentials are converted to
//! the |x-y|^2 convention. One-dimensional distances use the exact sorted
//! quantile coupling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{dist2, dot, norm2};

const MAX_COST_ENTRIES: usize = 40_000_000;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("masses are unbalanced: source total {source_total:.17e}, target total {target_total:.17e}")]
    UnbalancedMasses { source_total: f64, target_total: f64 },
    #[error("instance too large: {ns} x {nt} cost entries exceed {cap}")]
    SizeExceeded { ns: usize, nt: usize, cap: usize },
    #[error("degenerate basis persisted after perturbation retry")]
    DegenerateBasis,
    #[error("atom {index}: {problem}")]
    BadAtom { index: usize, problem: String },
    #[error("map undefined at source atom {index}")]
    UndefinedAtAtom { index: usize },
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// Finitely supported probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub points: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates atom count, finite coordinates, positive masses, and total
    /// mass 1 within 1e-12.
    pub fn new(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self, TransportError> {
        if points.is_empty() || points.len() != masses.len() {
            return Err(TransportError::BadAtom {
                index: 0,
                problem: "empty measure or point/mass length mismatch".into(),
            });
        }
        let d = points[0].len();
        for (i, (p, m)) in points.iter().zip(&masses).enumerate() {
            if p.len() != d {
                return Err(TransportError::BadAtom {
                    index: i,
                    problem: format!("dimension {} != {d}", p.len()),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(TransportError::BadAtom {
                    index: i,
                    problem: "non-finite coordinate".into(),
                });
            }
            if !(*m > 0.0) || !m.is_finite() {
                return Err(TransportError::BadAtom {
                    index: i,
                    problem: format!("non-positive mass {m}"),
                });
            }
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(TransportError::UnbalancedMasses {
                source_total: total,
                target_total: 1.0,
            });
        }
        Ok(Self { points, masses })
    }

    /// Rescales masses to sum exactly to 1 and validates.
    pub fn normalized(
        points: Vec<Vec<f64>>,
        masses: Vec<f64>,
    ) -> Result<Self, TransportError> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(TransportError::BadAtom {
                index: 0,
                problem: format!("total mass {total}"),
            });
        }
        Self::new(points, masses.iter().map(|m| m / total).collect())
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        Self {
            points: vec![point],
            masses: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Largest euclidean norm over the support.
    pub fn radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| norm2(p).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (p, w) in self.points.iter().zip(&self.masses) {
            for j in 0..d {
                m[j] += w * p[j];
            }
        }
        m
    }

    /// Merges atoms whose coordinates agree within `tol` per axis.
    /// Deterministic: atoms are sorted lexicographically first.
    pub fn merged(&self, tol: f64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let pa = &self.points[a];
            let pb = &self.points[b];
            pa.iter()
                .zip(pb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|c| c.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        for &i in &order {
            let close = points.last().is_some_and(|q: &Vec<f64>| {
                q.iter()
                    .zip(&self.points[i])
                    .all(|(a, b)| (a - b).abs() <= tol)
            });
            if close {
                *masses.last_mut().unwrap() += self.masses[i];
            } else {
                points.push(self.points[i].clone());
                masses.push(self.masses[i]);
            }
        }
        Self { points, masses }
    }
}

// ---------------------------------------------------------------------------
// Transport solutions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// |x - y|^2
    Quadratic,
    /// |x - y|
    Euclidean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportSolution {
    pub cost_kind: CostKind,
    /// (source index, target index, mass), positive masses only.
    pub plan: Vec<(u32, u32, f64)>,
    /// Optimal cost in the stated cost convention.
    pub primal_cost: f64,
    /// Dual potential per source atom, stated cost convention.
    pub source_potential: Vec<f64>,
    /// Dual potential per target atom, stated cost convention.
    pub target_potential: Vec<f64>,
    pub duality_gap: f64,
}

/// Brenier potential sampled at source atoms, with the induced map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialField {
    pub points: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    /// phi(x_i), normalized to zero rho-mean.
    pub values: Vec<f64>,
    /// Barycentric image of each atom under the plan.
    pub map: Vec<Vec<f64>>,
    /// Fraction of source mass sitting on atoms whose plan row splits.
    pub split_mass_fraction: f64,
}

// ---------------------------------------------------------------------------
// Network simplex
// ---------------------------------------------------------------------------

struct Simplex<'a> {
    ns: usize,
    nt: usize,
    src: &'a [Vec<f64>],
    tgt: &'a [Vec<f64>],
    half_cost: bool,
    // tree state; node ids: 0..ns sources, ns..ns+nt targets
    parent: Vec<u32>,
    // flow on the arc between node and its parent
    pflow: Vec<f64>,
    depth: Vec<u32>,
    children: Vec<Vec<u32>>,
    pot: Vec<f64>,
}

const NO_NODE: u32 = u32::MAX;

impl<'a> Simplex<'a> {
    fn cost(&self, i: usize, j: usize) -> f64 {
        let d2 = dist2(&self.src[i], &self.tgt[j]);
        if self.half_cost {
            0.5 * d2
        } else {
            d2.sqrt()
        }
    }

    fn node_is_source(&self, v: u32) -> bool {
        (v as usize) < self.ns
    }

    /// Arc between a node and its parent as (source idx, target idx).
    fn pred_arc(&self, v: u32) -> (usize, usize) {
        let p = self.parent[v as usize];
        if self.node_is_source(v) {
            (v as usize, p as usize - self.ns)
        } else {
            (p as usize, v as usize - self.ns)
        }
    }

    fn arc_id(&self, i: usize, j: usize) -> u64 {
        (i as u64) * (self.nt as u64) + j as u64
    }

    /// Northwest-corner initial spanning tree.
    fn init(&mut self, a: &[f64], b: &[f64]) {
        let n = self.ns + self.nt;
        self.parent = vec![NO_NODE; n];
        self.pflow = vec![0.0; n];
        self.depth = vec![0; n];
        self.children = vec![Vec::new(); n];
        self.pot = vec![0.0; n];

        let mut i = 0usize;
        let mut j = 0usize;
        let mut ares = a[0];
        let mut bres = b[0];
        // First basic arc (0,0): hang target 0 under source 0.
        self.attach(self.ns as u32, 0, 0.0);
        loop {
            let take = ares.min(bres);
            // record flow on the arc between src i and tgt j: that arc is the
            // pred arc of whichever node was attached later.
            let (si, tj) = (i as u32, (self.ns + j) as u32);
            let arc_node = if self.parent[tj as usize] == si {
                tj
            } else {
                si
            };
            self.pflow[arc_node as usize] += take;
            ares -= take;
            bres -= take;
            if i + 1 == self.ns && j + 1 == self.nt {
                break;
            }
            if ares <= bres && i + 1 < self.ns {
                // next source enters, hooked under current target
                i += 1;
                ares = a[i];
                self.attach(i as u32, tj, 0.0);
            } else {
                j += 1;
                bres = b[j];
                self.attach((self.ns + j) as u32, i as u32, 0.0);
            }
        }
        self.recompute_potentials();
    }

    fn attach(&mut self, node: u32, parent: u32, flow: f64) {
        self.parent[node as usize] = parent;
        self.pflow[node as usize] = flow;
        self.depth[node as usize] = self.depth[parent as usize] + 1;
        self.children[parent as usize].push(node);
    }

    fn recompute_potentials(&mut self) {
        // BFS from the root (node 0).
        self.pot[0] = 0.0;
        let mut stack = vec![0u32];
        while let Some(u) = stack.pop() {
            for k in 0..self.children[u as usize].len() {
                let v = self.children[u as usize][k];
                let (i, j) = self.pred_arc(v);
                self.pot[v as usize] = self.cost(i, j) - self.pot[u as usize];
                stack.push(v);
            }
        }
    }

    fn reduced_cost(&self, i: usize, j: usize) -> f64 {
        self.cost(i, j) - self.pot[i] - self.pot[self.ns + j]
    }

    /// Most negative reduced-cost arc found by cyclic block search.
    fn price(&self, next_arc: &mut u64, block: u64) -> Option<(usize, usize)> {
        let n_arcs = (self.ns as u64) * (self.nt as u64);
        let mut scanned = 0u64;
        while scanned < n_arcs {
            let mut best: Option<(usize, usize)> = None;
            let mut best_r = -1e-12;
            let count = block.min(n_arcs - scanned);
            for k in 0..count {
                let id = (*next_arc + k) % n_arcs;
                let i = (id / self.nt as u64) as usize;
                let j = (id % self.nt as u64) as usize;
                let r = self.reduced_cost(i, j);
                if r < best_r {
                    best_r = r;
                    best = Some((i, j));
                }
            }
            *next_arc = (*next_arc + count) % n_arcs;
            scanned += count;
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// One pivot on entering arc (i, j). Returns false on a structural
    /// failure (never expected).
    fn pivot(&mut self, i: usize, j: usize) {
        let enter_r = self.reduced_cost(i, j);
        let (mut u, mut v) = (i as u32, (self.ns + j) as u32);
        // Collect paths to the apex.
        let mut path_u: Vec<u32> = Vec::new(); // nodes on i-side, arcs = pred arcs
        let mut path_v: Vec<u32> = Vec::new();
        while self.depth[u as usize] > self.depth[v as usize] {
            path_u.push(u);
            u = self.parent[u as usize];
        }
        while self.depth[v as usize] > self.depth[u as usize] {
            path_v.push(v);
            v = self.parent[v as usize];
        }
        while u != v {
            path_u.push(u);
            path_v.push(v);
            u = self.parent[u as usize];
            v = self.parent[v as usize];
        }
        // Arcs at even positions (0-based) along each path lose theta.
        let mut theta = f64::INFINITY;
        let mut leave: Option<(bool, usize)> = None; // (on i-side, position)
        let mut leave_arc_id = u64::MAX;
        for (pos, &w) in path_u.iter().enumerate() {
            if pos % 2 == 0 {
                let fl = self.pflow[w as usize];
                let (ai, aj) = self.pred_arc(w);
                let id = self.arc_id(ai, aj);
                if fl < theta - 1e-15 || (fl < theta + 1e-15 && id < leave_arc_id) {
                    theta = fl;
                    leave = Some((true, pos));
                    leave_arc_id = id;
                }
            }
        }
        for (pos, &w) in path_v.iter().enumerate() {
            if pos % 2 == 0 {
                let fl = self.pflow[w as usize];
                let (ai, aj) = self.pred_arc(w);
                let id = self.arc_id(ai, aj);
                if fl < theta - 1e-15 || (fl < theta + 1e-15 && id < leave_arc_id) {
                    theta = fl;
                    leave = Some((false, pos));
                    leave_arc_id = id;
                }
            }
        }
        let (on_i_side, leave_pos) =
            leave.expect("transportation cycles always contain a decreasing arc");
        let theta = theta.max(0.0);
        // Apply flow update along both paths.
        for (pos, &w) in path_u.iter().enumerate() {
            if pos % 2 == 0 {
                self.pflow[w as usize] -= theta;
            } else {
                self.pflow[w as usize] += theta;
            }
        }
        for (pos, &w) in path_v.iter().enumerate() {
            if pos % 2 == 0 {
                self.pflow[w as usize] -= theta;
            } else {
                self.pflow[w as usize] += theta;
            }
        }
        // Re-hang the cut component. The leaving arc is the pred arc of node
        // `cut`; the component below `cut` contains the entering endpoint on
        // the same side.
        let (path, endpoint, other) = if on_i_side {
            (&path_u, i as u32, (self.ns + j) as u32)
        } else {
            (&path_v, (self.ns + j) as u32, i as u32)
        };
        let cut = path[leave_pos];
        // Reverse parent pointers from endpoint up to cut.
        let mut chain: Vec<u32> = Vec::with_capacity(leave_pos + 1);
        let mut w = endpoint;
        loop {
            chain.push(w);
            if w == cut {
                break;
            }
            w = self.parent[w as usize];
        }
        // Flows on the chain arcs stay with their arcs; each arc
        // (chain[k] -> chain[k+1]) becomes (chain[k+1] -> chain[k]).
        let mut flows: Vec<f64> = chain.iter().map(|&c| self.pflow[c as usize]).collect();
        for k in (0..chain.len() - 1).rev() {
            let child = chain[k + 1];
            let new_parent = chain[k];
            self.detach(child);
            self.parent[child as usize] = new_parent;
            self.children[new_parent as usize].push(child);
            self.pflow[child as usize] = flows[k];
        }
        flows.clear();
        self.detach(endpoint);
        self.parent[endpoint as usize] = other;
        self.children[other as usize].push(endpoint);
        self.pflow[endpoint as usize] = theta;
        // Update depth and potentials throughout the moved subtree. Sources
        // and targets shift oppositely so internal basic arcs stay tight.
        let (src_shift, tgt_shift) = if on_i_side {
            (enter_r, -enter_r)
        } else {
            (-enter_r, enter_r)
        };
        let mut stack = vec![endpoint];
        while let Some(x) = stack.pop() {
            self.depth[x as usize] = self.depth[self.parent[x as usize] as usize] + 1;
            if self.node_is_source(x) {
                self.pot[x as usize] += src_shift;
            } else {
                self.pot[x as usize] += tgt_shift;
            }
            for k in 0..self.children[x as usize].len() {
                stack.push(self.children[x as usize][k]);
            }
        }
    }

    fn detach(&mut self, node: u32) {
        let p = self.parent[node as usize];
        if p != NO_NODE {
            let list = &mut self.children[p as usize];
            if let Some(pos) = list.iter().position(|&c| c == node) {
                list.swap_remove(pos);
            }
        }
    }

    /// Recompute all tree flows bottom-up from exact masses.
    fn flows_from_masses(&mut self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.ns + self.nt;
        // net supply of the subtree rooted at each node
        let mut net: Vec<f64> = (0..n)
            .map(|v| {
                if v < self.ns {
                    a[v]
                } else {
                    -b[v - self.ns]
                }
            })
            .collect();
        // process nodes by decreasing depth
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(self.depth[v as usize]));
        let mut worst = 0.0f64;
        for &v in &order {
            if v == 0 {
                continue;
            }
            // flow on pred arc: oriented source -> target
            let flow = if self.node_is_source(v) {
                net[v as usize]
            } else {
                -net[v as usize]
            };
            worst = worst.min(flow);
            self.pflow[v as usize] = flow.max(0.0);
            net[self.parent[v as usize] as usize] += net[v as usize];
        }
        worst
    }

    fn run(&mut self, a: &[f64], b: &[f64], max_pivots: usize) -> bool {
        self.init(a, b);
        let n_arcs = (self.ns as u64) * (self.nt as u64);
        let block = ((n_arcs as f64).sqrt() as u64).clamp(64, 65_536);
        let mut next_arc = 0u64;
        for _ in 0..max_pivots {
            match self.price(&mut next_arc, block) {
                None => return true,
                Some((i, j)) => self.pivot(i, j),
            }
        }
        false
    }
}

/// Exact optimal transport between discrete measures.
pub fn solve_ot(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost_kind: CostKind,
) -> Result<TransportSolution, TransportError> {
    let ns = source.len();
    let nt = target.len();
    if ns.saturating_mul(nt) > MAX_COST_ENTRIES {
        return Err(TransportError::SizeExceeded {
            ns,
            nt,
            cap: MAX_COST_ENTRIES,
        });
    }
    let sa = source.total_mass();
    let sb = target.total_mass();
    if (sa - sb).abs() > 1e-12 * sa.abs().max(1.0) {
        return Err(TransportError::UnbalancedMasses {
            source_total: sa,
            target_total: sb,
        });
    }
    let half_cost = cost_kind == CostKind::Quadratic;
    let mut sx = Simplex {
        ns,
        nt,
        src: &source.points,
        tgt: &target.points,
        half_cost,
        parent: Vec::new(),
        pflow: Vec::new(),
        depth: Vec::new(),
        children: Vec::new(),
        pot: Vec::new(),
    };
    let max_pivots = 80 * (ns + nt) + 2000;
    let converged = sx.run(&source.masses, &target.masses, max_pivots);
    if !converged {
        // Perturbation retry: break degeneracy, then reuse the final basis
        // with the original masses (dual feasibility does not depend on
        // masses, so the basis stays optimal if primal-feasible).
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0751);
        let min_mass = source
            .masses
            .iter()
            .chain(&target.masses)
            .fold(f64::INFINITY, |acc, &m| acc.min(m));
        let eps = 1e-13 * min_mass;
        let mut a2 = source.masses.clone();
        let mut b2 = target.masses.clone();
        for m in a2.iter_mut() {
            *m += eps * rng.gen::<f64>();
        }
        for m in b2.iter_mut() {
            *m += eps * rng.gen::<f64>();
        }
        let (ta, tb): (f64, f64) = (a2.iter().sum(), b2.iter().sum());
        b2[0] += ta - tb; // rebalance exactly
        if !sx.run(&a2, &b2, 4 * max_pivots) {
            return Err(TransportError::DegenerateBasis);
        }
    }
    let worst = sx.flows_from_masses(&source.masses, &target.masses);
    if worst < -1e-9 {
        return Err(TransportError::DegenerateBasis);
    }

    // Final full optimality audit over every arc.
    let mut min_reduced = 0.0f64;
    for i in 0..ns {
        for j in 0..nt {
            min_reduced = min_reduced.min(sx.reduced_cost(i, j));
        }
    }
    let scale_pot = sx
        .pot
        .iter()
        .fold(0.0f64, |acc, p| acc.max(p.abs()))
        .max(1.0);
    assert!(
        min_reduced > -1e-8 * scale_pot,
        "simplex ended with a violated dual constraint: {min_reduced}"
    );

    let out_scale = if half_cost { 2.0 } else { 1.0 };
    let mut plan = Vec::new();
    let mut primal_half = 0.0;
    for v in 1..(ns + nt) as u32 {
        let fl = sx.pflow[v as usize];
        let (i, j) = sx.pred_arc(v);
        if fl > 0.0 {
            plan.push((i as u32, j as u32, fl));
            primal_half += fl * sx.cost(i, j);
        }
    }
    plan.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let source_potential: Vec<f64> = (0..ns).map(|i| sx.pot[i] * out_scale).collect();
    let target_potential: Vec<f64> = (0..nt).map(|j| sx.pot[ns + j] * out_scale).collect();
    let dual: f64 = source_potential
        .iter()
        .zip(&source.masses)
        .map(|(p, m)| p * m)
        .sum::<f64>()
        + target_potential
            .iter()
            .zip(&target.masses)
            .map(|(p, m)| p * m)
            .sum::<f64>();
    let primal_cost = primal_half * out_scale;
    Ok(TransportSolution {
        cost_kind,
        plan,
        primal_cost,
        source_potential,
        target_potential,
        duality_gap: primal_cost - dual,
    })
}

/// Brenier potential phi(x_i) = 0.5|x_i|^2 - f(x_i) from a quadratic-cost
/// solution, shifted to zero rho-mean, together with the barycentric map.
pub fn brenier_potential(
    sol: &TransportSolution,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
) -> PotentialField {
    assert_eq!(sol.cost_kind, CostKind::Quadratic);
    let ns = source.len();
    let d = source.dim();
    let mut values: Vec<f64> = (0..ns)
        .map(|i| 0.5 * norm2(&source.points[i]) - 0.5 * sol.source_potential[i])
        .collect();
    let mean: f64 = values
        .iter()
        .zip(&source.masses)
        .map(|(v, m)| v * m)
        .sum();
    for v in values.iter_mut() {
        *v -= mean;
    }
    let mut map = vec![vec![0.0; d]; ns];
    let mut row_mass = vec![0.0; ns];
    let mut row_targets = vec![0u32; ns];
    for &(i, j, m) in &sol.plan {
        let (i, j) = (i as usize, j as usize);
        for k in 0..d {
            map[i][k] += m * target.points[j][k];
        }
        row_mass[i] += m;
        row_targets[i] += 1;
    }
    let mut split_mass = 0.0;
    for i in 0..ns {
        for k in 0..d {
            map[i][k] /= row_mass[i].max(1e-300);
        }
        if row_targets[i] > 1 {
            split_mass += source.masses[i];
        }
    }
    PotentialField {
        points: source.points.clone(),
        masses: source.masses.clone(),
        values,
        map,
        split_mass_fraction: split_mass,
    }
}

/// Target-side potential psi(y_j) = 0.5|y_j|^2 - g(y_j), shifted so that its
/// Legendre transform reproduces the zero-mean source potential on the source
/// atoms.
pub fn conjugate_potential(
    sol: &TransportSolution,
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
) -> Vec<f64> {
    assert_eq!(sol.cost_kind, CostKind::Quadratic);
    let raw_phi_mean: f64 = source
        .points
        .iter()
        .zip(&sol.source_potential)
        .zip(&source.masses)
        .map(|((p, f), m)| m * (0.5 * norm2(p) - 0.5 * f))
        .sum();
    target
        .points
        .iter()
        .zip(&sol.target_potential)
        .map(|(q, g)| 0.5 * norm2(q) - 0.5 * g + raw_phi_mean)
        .collect()
}

/// Discrete Legendre transform: psi*(x) = max_j <x, y_j> - psi_j.
/// Ties resolve to the smallest index.
pub fn legendre(points: &[Vec<f64>], values: &[f64], queries: &[Vec<f64>]) -> Vec<f64> {
    legendre_with_argmax(points, values, queries).0
}

pub fn legendre_with_argmax(
    points: &[Vec<f64>],
    values: &[f64],
    queries: &[Vec<f64>],
) -> (Vec<f64>, Vec<usize>) {
    assert!(!points.is_empty());
    assert_eq!(points.len(), values.len());
    let mut out = Vec::with_capacity(queries.len());
    let mut arg = Vec::with_capacity(queries.len());
    for q in queries {
        let mut best = dot(q, &points[0]) - values[0];
        let mut best_j = 0usize;
        for (j, (p, v)) in points.iter().zip(values).enumerate().skip(1) {
            let s = dot(q, p) - v;
            if s > best {
                best = s;
                best_j = j;
            }
        }
        out.push(best);
        arg.push(best_j);
    }
    (out, arg)
}

/// Exact 1-d W_p^p transport cost by the sorted quantile coupling.
fn quantile_cost_1d(a: &DiscreteMeasure, b: &DiscreteMeasure, p: u32) -> f64 {
    let mut ia: Vec<usize> = (0..a.len()).collect();
    let mut ib: Vec<usize> = (0..b.len()).collect();
    ia.sort_by(|&x, &y| a.points[x][0].total_cmp(&a.points[y][0]));
    ib.sort_by(|&x, &y| b.points[x][0].total_cmp(&b.points[y][0]));
    let mut cost = 0.0;
    let (mut ka, mut kb) = (0usize, 0usize);
    let mut ra = a.masses[ia[0]];
    let mut rb = b.masses[ib[0]];
    loop {
        let take = ra.min(rb);
        let dx = (a.points[ia[ka]][0] - b.points[ib[kb]][0]).abs();
        cost += take * dx.powi(p as i32);
        ra -= take;
        rb -= take;
        if ra <= 1e-18 {
            ka += 1;
            if ka >= ia.len() {
                break;
            }
            ra = a.masses[ia[ka]];
        }
        if rb <= 1e-18 {
            kb += 1;
            if kb >= ib.len() {
                break;
            }
            rb = b.masses[ib[kb]];
        }
    }
    cost
}

/// W_p distance, p in {1, 2}. Exact quantile coupling in one dimension,
/// network simplex otherwise.
pub fn wasserstein(
    p: u32,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
) -> Result<f64, TransportError> {
    assert!(p == 1 || p == 2, "only W1 and W2 are supported");
    let sa = a.total_mass();
    let sb = b.total_mass();
    if (sa - sb).abs() > 1e-12 * sa.abs().max(1.0) {
        return Err(TransportError::UnbalancedMasses {
            source_total: sa,
            target_total: sb,
        });
    }
    if a.dim() == 1 {
        let c = quantile_cost_1d(a, b, p);
        return Ok(if p == 1 { c } else { c.sqrt() });
    }
    let kind = if p == 1 {
        CostKind::Euclidean
    } else {
        CostKind::Quadratic
    };
    let sol = solve_ot(a, b, kind)?;
    Ok(if p == 1 {
        sol.primal_cost
    } else {
        sol.primal_cost.sqrt()
    })
}

/// Pushforward of a measure under a map given by the image of each atom.
/// Coincident images (within 1e-12 per axis) merge.
pub fn pushforward(
    images: &[Vec<f64>],
    source: &DiscreteMeasure,
) -> Result<DiscreteMeasure, TransportError> {
    if images.len() != source.len() {
        return Err(TransportError::UndefinedAtAtom {
            index: images.len().min(source.len()),
        });
    }
    for (i, im) in images.iter().enumerate() {
        if im.iter().any(|v| !v.is_finite()) {
            return Err(TransportError::UndefinedAtAtom { index: i });
        }
    }
    let m = DiscreteMeasure {
        points: images.to_vec(),
        masses: source.masses.clone(),
    };
    Ok(m.merged(1e-12))
}

/// Atom-weighted L2 distance between two maps defined on the same atoms.
pub fn map_l2_distance(masses: &[f64], map_a: &[Vec<f64>], map_b: &[Vec<f64>]) -> f64 {
    masses
        .iter()
        .zip(map_a.iter().zip(map_b))
        .map(|(m, (u, v))| m * dist2(u, v))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        DiscreteMeasure::normalized(points, raw).unwrap()
    }

    #[test]
    fn identity_instance_has_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_measure(&mut rng, 5, 2);
        let sol = solve_ot(&a, &a, CostKind::Quadratic).unwrap();
        assert!(sol.primal_cost.abs() < 1e-14, "{}", sol.primal_cost);
        assert!(sol.duality_gap.abs() < 1e-12);
    }

    #[test]
    fn monotone_pair_on_the_line() {
        let a = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let b = DiscreteMeasure::new(vec![vec![2.0], vec![3.0]], vec![0.5, 0.5]).unwrap();
        let sol = solve_ot(&a, &b, CostKind::Quadratic).unwrap();
        assert!((sol.primal_cost - 4.0).abs() < 1e-12, "{}", sol.primal_cost);
        assert_eq!(sol.plan, vec![(0, 0, 0.5), (1, 1, 0.5)]);
        assert!((wasserstein(2, &a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_permutation_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = 6;
            let pts_a: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let pts_b: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let w = vec![1.0 / n as f64; n];
            let a = DiscreteMeasure::new(pts_a.clone(), w.clone()).unwrap();
            let b = DiscreteMeasure::new(pts_b.clone(), w.clone()).unwrap();
            let sol = solve_ot(&a, &b, CostKind::Quadratic).unwrap();

            // Enumerate all 720 permutation couplings.
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut perm, 0, &mut |p| {
                let c: f64 = (0..n)
                    .map(|i| dist2(&pts_a[i], &pts_b[p[i]]) / n as f64)
                    .sum();
                if c < best {
                    best = c;
                }
            });
            assert!(
                (sol.primal_cost - best).abs() < 1e-10,
                "simplex {} vs enumeration {best}",
                sol.primal_cost
            );
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn translation_is_the_optimal_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_measure(&mut rng, 30, 2);
        let v = [0.3, -0.2];
        let shifted: Vec<Vec<f64>> = a
            .points
            .iter()
            .map(|p| vec![p[0] + v[0], p[1] + v[1]])
            .collect();
        let b = DiscreteMeasure::new(shifted, a.masses.clone()).unwrap();
        let sol = solve_ot(&a, &b, CostKind::Quadratic).unwrap();
        let field = brenier_potential(&sol, &a, &b);
        assert_eq!(field.split_mass_fraction, 0.0);
        for (p, t) in a.points.iter().zip(&field.map) {
            assert!((t[0] - p[0] - v[0]).abs() < 1e-12);
            assert!((t[1] - p[1] - v[1]).abs() < 1e-12);
        }
        // Monotonicity of the induced map.
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let dx: Vec<f64> = (0..2).map(|k| a.points[i][k] - a.points[j][k]).collect();
                let dt: Vec<f64> = (0..2).map(|k| field.map[i][k] - field.map[j][k]).collect();
                assert!(dot(&dx, &dt) > -1e-9);
            }
        }
    }

    #[test]
    fn transport_to_a_point_gives_linear_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_measure(&mut rng, 12, 2);
        let y = vec![0.7, -0.4];
        let b = DiscreteMeasure::dirac(y.clone());
        let sol = solve_ot(&a, &b, CostKind::Quadratic).unwrap();
        let field = brenier_potential(&sol, &a, &b);
        // phi(x_i) - phi(x_j) = <x_i - x_j, y> exactly.
        for i in 0..a.len() {
            for j in 0..a.len() {
                let expect = dot(&a.points[i], &y) - dot(&a.points[j], &y);
                let got = field.values[i] - field.values[j];
                assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
            }
        }
        // Zero mean.
        let mean: f64 = field
            .values
            .iter()
            .zip(&field.masses)
            .map(|(v, m)| v * m)
            .sum();
        assert!(mean.abs() < 1e-14);
    }

    #[test]
    fn complementary_slackness_and_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_measure(&mut rng, 17, 2);
        let b = random_measure(&mut rng, 11, 2);
        let sol = solve_ot(&a, &b, CostKind::Quadratic).unwrap();
        let mut row = vec![0.0; a.len()];
        let mut col = vec![0.0; b.len()];
        for &(i, j, m) in &sol.plan {
            row[i as usize] += m;
            col[j as usize] += m;
            let c = dist2(&a.points[i as usize], &b.points[j as usize]);
            let slack = c - sol.source_potential[i as usize] - sol.target_potential[j as usize];
            assert!(slack.abs() < 1e-8 * (1.0 + c.abs()), "slack {slack}");
        }
        for i in 0..a.len() {
            assert!((row[i] - a.masses[i]).abs() < 1e-10);
        }
        for j in 0..b.len() {
            assert!((col[j] - b.masses[j]).abs() < 1e-10);
        }
        assert!(sol.duality_gap.abs() <= 1e-8 * (1.0 + sol.primal_cost.abs()));
    }

    #[test]
    fn quantile_coupling_agrees_with_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..50 {
            let n = 3 + (trial % 5);
            let m = 3 + (trial % 4);
            let a = random_measure(&mut rng, n, 1);
            let b = random_measure(&mut rng, m, 1);
            for p in [1u32, 2] {
                let wq = wasserstein(p, &a, &b).unwrap();
                let kind = if p == 1 {
                    CostKind::Euclidean
                } else {
                    CostKind::Quadratic
                };
                let sol = solve_ot(&a, &b, kind).unwrap();
                let ws = if p == 1 {
                    sol.primal_cost
                } else {
                    sol.primal_cost.sqrt()
                };
                assert!((wq - ws).abs() < 1e-10, "p={p}: {wq} vs {ws}");
            }
        }
    }

    #[test]
    fn w1_between_diracs_is_the_distance() {
        let a = DiscreteMeasure::dirac(vec![0.25, 1.0]);
        let b = DiscreteMeasure::dirac(vec![0.25, -1.5]);
        assert!((wasserstein(1, &a, &b).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn kantorovich_rubinstein_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_measure(&mut rng, 14, 2);
        let b = random_measure(&mut rng, 9, 2);
        let w1 = wasserstein(1, &a, &b).unwrap();
        for _ in 0..100 {
            // 1-Lipschitz piecewise-affine test function: minimum of three
            // affine functions with gradient norm <= 1.
            let mut gs: Vec<(Vec<f64>, f64)> = Vec::new();
            for _ in 0..3 {
                let mut g: Vec<f64> = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let n = (g[0] * g[0] + g[1] * g[1]).sqrt().max(1.0);
                g[0] /= n;
                g[1] /= n;
                gs.push((g, rng.gen_range(-0.5..0.5)));
            }
            let eval = |x: &[f64]| {
                gs.iter()
                    .map(|(g, c)| dot(g, x) + c)
                    .fold(f64::INFINITY, f64::min)
            };
            let pairing: f64 = a
                .points
                .iter()
                .zip(&a.masses)
                .map(|(p, m)| m * eval(p))
                .sum::<f64>()
                - b.points
                    .iter()
                    .zip(&b.masses)
                    .map(|(p, m)| m * eval(p))
                    .sum::<f64>();
            assert!(pairing <= w1 + 1e-9, "pairing {pairing} exceeds W1 {w1}");
        }
    }

    #[test]
    fn legendre_examples() {
        // Single point: psi* is linear.
        let vals = legendre(&[vec![2.0, -1.0]], &[0.0], &[vec![1.0, 1.0], vec![0.5, 2.0]]);
        assert_eq!(vals, vec![1.0, -1.0]);
        // Three points on the line: max(|x| - 1, 0).
        let s: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let psi = vec![1.0, 0.0, 1.0];
        let qs: Vec<Vec<f64>> = (-20..=20).map(|k| vec![k as f64 * 0.25]).collect();
        let got = legendre(&s, &psi, &qs);
        for (q, g) in qs.iter().zip(&got) {
            let expect = (q[0].abs() - 1.0).max(0.0);
            assert!((g - expect).abs() < 1e-15, "at {}: {g} vs {expect}", q[0]);
        }
        // Ties pick the smallest index.
        let (_, arg) = legendre_with_argmax(
            &[vec![-1.0], vec![1.0]],
            &[0.0, 0.0],
            &[vec![0.0]],
        );
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn fenchel_double_transform_dominated() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let psi: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // (psi*)* computed back on S via a dense probe grid of slopes: the
        // double transform over the same finite set S.
        let star = legendre(&s, &psi, &s); // psi* evaluated at the points of S
        let double = legendre(&s, &star, &s);
        for (d, p) in double.iter().zip(&psi) {
            assert!(*d <= *p + 1e-12, "double transform must not exceed data");
        }
    }

    #[test]
    fn conjugating_the_target_potential_recovers_the_source_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_measure(&mut rng, 20, 2);
        let b = random_measure(&mut rng, 13, 2);
        let sol = solve_ot(&a, &b, CostKind::Quadratic).unwrap();
        let field = brenier_potential(&sol, &a, &b);
        let psi = conjugate_potential(&sol, &a, &b);
        let back = legendre(&b.points, &psi, &a.points);
        for (i, (got, expect)) in back.iter().zip(&field.values).enumerate() {
            assert!(
                (got - expect).abs() < 1e-9 * (1.0 + expect.abs()),
                "atom {i}: {got} vs {expect}"
            );
        }
        // And the reverse direction on the target atoms.
        let raw_phi: Vec<f64> = a
            .points
            .iter()
            .zip(&sol.source_potential)
            .map(|(p, f)| 0.5 * norm2(p) - 0.5 * f)
            .collect();
        let forward = legendre(&a.points, &raw_phi, &b.points);
        for (j, got) in forward.iter().enumerate() {
            let expect = 0.5 * norm2(&b.points[j]) - 0.5 * sol.target_potential[j];
            assert!((got - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn pushforward_merges_coincident_images() {
        let a = DiscreteMeasure::new(
            vec![vec![0.0], vec![0.5], vec![1.0]],
            vec![0.25, 0.5, 0.25],
        )
        .unwrap();
        let images = vec![vec![2.0], vec![2.0], vec![3.0]];
        let out = pushforward(&images, &a).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.points[0], vec![2.0]);
        assert!((out.masses[0] - 0.75).abs() < 1e-15);
        assert!((out.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_masses_rejected() {
        let a = DiscreteMeasure::dirac(vec![0.0]);
        let b = DiscreteMeasure {
            points: vec![vec![1.0]],
            masses: vec![0.5],
        };
        assert!(matches!(
            solve_ot(&a, &b, CostKind::Quadratic),
            Err(TransportError::UnbalancedMasses { .. })
        ));
    }

    #[test]
    fn oversized_instances_rejected() {
        let n = 7000;
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let w = vec![1.0 / n as f64; n];
        let a = DiscreteMeasure::new(pts.clone(), w.clone()).unwrap();
        let b = DiscreteMeasure::new(pts, w).unwrap();
        assert!(matches!(
            solve_ot(&a, &b, CostKind::Quadratic),
            Err(TransportError::SizeExceeded { .. })
        ));
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0]], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0]], vec![0.9]).is_err());
        let m = DiscreteMeasure::normalized(vec![vec![0.0], vec![1.0]], vec![2.0, 6.0]).unwrap();
        assert!((m.masses[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn larger_random_instances_satisfy_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_measure(&mut rng, 120, 2);
        let b = random_measure(&mut rng, 75, 2);
        for kind in [CostKind::Quadratic, CostKind::Euclidean] {
            let sol = solve_ot(&a, &b, kind).unwrap();
            assert!(
                sol.duality_gap.abs() <= 1e-9 * (1.0 + sol.primal_cost.abs()),
                "gap {}",
                sol.duality_gap
            );
            let total: f64 = sol.plan.iter().map(|&(_, _, m)| m).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn map_l2_distance_on_translations() {
        let masses = vec![0.5, 0.5];
        let u = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let v = vec![vec![3.0, 4.0], vec![4.0, 4.0]];
        assert!((map_l2_distance(&masses, &u, &v) - 5.0).abs() < 1e-15);
    }
}
