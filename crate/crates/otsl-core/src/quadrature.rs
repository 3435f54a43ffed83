//! Adaptive tensorized quadrature over boxes and convex regions.
//!
//! The engine subdivides a box dyadically (all axes at once), uses the
//! midpoint rule with a Richardson correction on cells interior to the
//! region, and indicator sampling with a conservative error bound on cells
//! straddling the region boundary. Refinement is driven by a priority queue
//! on per-cell error bounds; ties break by insertion order, so results are
//! deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::geometry::{AlignedBox, BoxClass, ConvexCell, DomainModel, Shape};

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Maximum subdivision depth below the root box.
    pub max_level: u32,
    /// Cap on simultaneously live cells.
    pub max_cells: usize,
    /// Forced uniform refinement floor: every cell is split until it sits at
    /// least this deep, so narrow features cannot be missed by coarse
    /// sampling. Zero by default.
    pub min_level: u32,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-14,
            max_level: 22,
            min_level: 0,
            max_cells: 1_000_000,
        }
    }
}

impl QuadratureOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error(
        "quadrature did not converge: error bound {achieved:.3e} above tolerance {requested:.3e} \
         after {cells} cells (partial value {value:.17e})"
    )]
    NonConvergent {
        requested: f64,
        achieved: f64,
        cells: usize,
        value: f64,
    },
    #[error("integrand returned a non-finite value at {point:?}")]
    NonFinite { point: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error_bound: f64,
    pub cells: usize,
}

/// A measurable region an integral can be restricted to.
pub trait Region {
    fn dim(&self) -> usize;
    fn bounding_box(&self) -> AlignedBox;
    fn contains(&self, x: &[f64]) -> bool;
    /// `Inside`/`Outside` verdicts must be exact up to sets of measure zero;
    /// `Straddle` is always safe.
    fn classify(&self, b: &AlignedBox) -> BoxClass;
}

impl Region for AlignedBox {
    fn dim(&self) -> usize {
        self.lo.len()
    }
    fn bounding_box(&self) -> AlignedBox {
        self.clone()
    }
    fn contains(&self, x: &[f64]) -> bool {
        AlignedBox::contains(self, x)
    }
    fn classify(&self, b: &AlignedBox) -> BoxClass {
        if self.contains_box(b) {
            BoxClass::Inside
        } else {
            match self.intersect(b) {
                None => BoxClass::Outside,
                Some(i) if i.volume() == 0.0 => BoxClass::Outside,
                Some(_) => BoxClass::Straddle,
            }
        }
    }
}

impl Region for ConvexCell {
    fn dim(&self) -> usize {
        ConvexCell::dim(self)
    }
    fn bounding_box(&self) -> AlignedBox {
        ConvexCell::bounding_box(self)
    }
    fn contains(&self, x: &[f64]) -> bool {
        ConvexCell::contains(self, x)
    }
    fn classify(&self, b: &AlignedBox) -> BoxClass {
        ConvexCell::classify_box(self, b)
    }
}

impl Region for DomainModel {
    fn dim(&self) -> usize {
        self.dimension
    }
    fn bounding_box(&self) -> AlignedBox {
        DomainModel::bounding_box(self).expect("bounded domain required for integration")
    }
    fn contains(&self, x: &[f64]) -> bool {
        DomainModel::contains(self, x)
    }
    fn classify(&self, b: &AlignedBox) -> BoxClass {
        match &self.shape {
            Shape::Box { lo, hi } => {
                AlignedBox::new(lo.clone(), hi.clone()).classify(b)
            }
            Shape::Ball { .. } | Shape::PuncturedBall { .. } => {
                let (c, radius) = match &self.shape {
                    Shape::Ball { center, radius } => (center.clone(), *radius),
                    Shape::PuncturedBall { radius } => (vec![0.0; self.dimension], *radius),
                    _ => unreachable!(),
                };
                let r2 = radius * radius;
                let far2: f64 = (0..self.dimension)
                    .map(|j| {
                        (b.lo[j] - c[j]).abs().max((b.hi[j] - c[j]).abs()).powi(2)
                    })
                    .sum();
                if far2 <= r2 {
                    return BoxClass::Inside;
                }
                let near2: f64 = (0..self.dimension)
                    .map(|j| {
                        let v = c[j].clamp(b.lo[j], b.hi[j]) - c[j];
                        v * v
                    })
                    .sum();
                if near2 >= r2 {
                    BoxClass::Outside
                } else {
                    BoxClass::Straddle
                }
            }
            Shape::HalfspaceIntersection { halfspaces } => {
                let mut all_in = true;
                for h in halfspaces {
                    let mut maxv = 0.0;
                    let mut minv = 0.0;
                    for j in 0..self.dimension {
                        let a = h.normal[j] * b.lo[j];
                        let c2 = h.normal[j] * b.hi[j];
                        maxv += a.max(c2);
                        minv += a.min(c2);
                    }
                    if minv > h.offset {
                        return BoxClass::Outside;
                    }
                    if maxv > h.offset {
                        all_in = false;
                    }
                }
                if all_in {
                    BoxClass::Inside
                } else {
                    BoxClass::Straddle
                }
            }
            _ => {
                let pieces = self.rect_pieces().expect("rectilinear composite");
                let vol = b.volume();
                let covered: f64 = pieces
                    .iter()
                    .filter_map(|p| p.intersect(b).map(|i| i.volume()))
                    .sum();
                if vol == 0.0 {
                    return BoxClass::Outside;
                }
                if covered >= vol * (1.0 - 1e-12) {
                    BoxClass::Inside
                } else if covered <= vol * 1e-12 {
                    BoxClass::Outside
                } else {
                    BoxClass::Straddle
                }
            }
        }
    }
}

/// Intersection of two regions.
pub struct RegionIntersection<'a, A: Region + ?Sized, B: Region + ?Sized>(pub &'a A, pub &'a B);

impl<A: Region + ?Sized, B: Region + ?Sized> Region for RegionIntersection<'_, A, B> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn bounding_box(&self) -> AlignedBox {
        let a = self.0.bounding_box();
        let b = self.1.bounding_box();
        a.intersect(&b)
            .unwrap_or_else(|| AlignedBox::new(vec![0.0; a.dim()], vec![0.0; a.dim()]))
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.0.contains(x) && self.1.contains(x)
    }
    fn classify(&self, b: &AlignedBox) -> BoxClass {
        match (self.0.classify(b), self.1.classify(b)) {
            (BoxClass::Outside, _) | (_, BoxClass::Outside) => BoxClass::Outside,
            (BoxClass::Inside, BoxClass::Inside) => BoxClass::Inside,
            _ => BoxClass::Straddle,
        }
    }
}

const MAX_DIM: usize = 3;

struct Cell {
    lo: [f64; MAX_DIM],
    hi: [f64; MAX_DIM],
    /// Richardson-corrected value (interior cells) or indicator-sampled
    /// midpoint sum (straddling cells).
    value: f64,
    err: f64,
    /// Largest |f| seen on this cell or inherited from ancestors; scales the
    /// error bound of straddling cells.
    scale: f64,
    level: u32,
    class: BoxClass,
    seq: u64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .total_cmp(&other.err)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Engine<'a, F> {
    f: F,
    region: &'a dyn DynRegion,
    dim: usize,
    seq: u64,
}

/// Object-safe shim so the engine does not need a second type parameter.
trait DynRegion {
    fn contains(&self, x: &[f64]) -> bool;
    fn classify(&self, b: &AlignedBox) -> BoxClass;
}

impl<R: Region + ?Sized> DynRegion for &R {
    fn contains(&self, x: &[f64]) -> bool {
        (**self).contains(x)
    }
    fn classify(&self, b: &AlignedBox) -> BoxClass {
        (**self).classify(b)
    }
}

impl<F: FnMut(&[f64]) -> f64> Engine<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64, QuadratureError> {
        let v = (self.f)(x);
        if !v.is_finite() {
            return Err(QuadratureError::NonFinite { point: x.to_vec() });
        }
        Ok(v)
    }

    /// Midpoint sum over the uniform k-per-axis grid of the cell, restricted
    /// to the region when `check_region` is set. Also updates `scale` with
    /// the largest |f| seen.
    fn midpoint_grid(
        &mut self,
        lo: &[f64; MAX_DIM],
        hi: &[f64; MAX_DIM],
        k: usize,
        vol: f64,
        check_region: bool,
        scale: &mut f64,
    ) -> Result<f64, QuadratureError> {
        let d = self.dim;
        let cells = k.pow(d as u32);
        let w = vol / cells as f64;
        let mut sum = 0.0;
        let mut point = [0.0; MAX_DIM];
        for idx in 0..cells {
            let mut rest = idx;
            for j in 0..d {
                let i = rest % k;
                rest /= k;
                let t = (2 * i + 1) as f64 / (2 * k) as f64;
                point[j] = lo[j] + t * (hi[j] - lo[j]);
            }
            if check_region && !self.region.contains(&point[..d]) {
                continue;
            }
            let v = self.eval(&point[..d])?;
            sum += v * w;
            *scale = scale.max(v.abs());
        }
        Ok(sum)
    }

    /// Build a cell: classify, sample midpoint grids at three scales, and
    /// form a doubly Richardson-extrapolated value with a fourth-order error
    /// bound (interior cells) or an indicator-sampled value with a volume
    /// bound (straddling cells).
    fn make_cell(
        &mut self,
        lo: [f64; MAX_DIM],
        hi: [f64; MAX_DIM],
        level: u32,
        inherited_scale: f64,
        known_class: Option<BoxClass>,
    ) -> Result<Cell, QuadratureError> {
        let d = self.dim;
        let bx = AlignedBox::new(lo[..d].to_vec(), hi[..d].to_vec());
        let class = known_class.unwrap_or_else(|| self.region.classify(&bx));
        let vol = bx.volume();
        self.seq += 1;
        let seq = self.seq;
        if class == BoxClass::Outside || vol == 0.0 {
            return Ok(Cell {
                lo,
                hi,
                value: 0.0,
                err: 0.0,
                scale: inherited_scale,
                level,
                class: BoxClass::Outside,
                seq,
            });
        }
        let mut scale = inherited_scale;
        let (value, err) = match class {
            BoxClass::Inside => {
                let coarse = self.midpoint_grid(&lo, &hi, 1, vol, false, &mut scale)?;
                let fine = self.midpoint_grid(&lo, &hi, 2, vol, false, &mut scale)?;
                let finer = self.midpoint_grid(&lo, &hi, 4, vol, false, &mut scale)?;
                let c1 = fine + (fine - coarse) / 3.0;
                let c2 = finer + (finer - fine) / 3.0;
                let value = c2 + (c2 - c1) / 15.0;
                let err = (c2 - c1).abs() / 15.0 + 1e-16 * value.abs();
                (value, err)
            }
            BoxClass::Straddle => {
                // No Richardson trust across an indicator; sample the finest
                // grid and bound the cell's contribution by its volume times
                // the local scale of f.
                let finer = self.midpoint_grid(&lo, &hi, 4, vol, true, &mut scale)?;
                (finer, vol * scale.max(1e-300))
            }
            BoxClass::Outside => unreachable!(),
        };
        Ok(Cell {
            lo,
            hi,
            value,
            err,
            scale,
            level,
            class,
            seq,
        })
    }

    fn split(
        &mut self,
        cell: &Cell,
        out: &mut Vec<Cell>,
    ) -> Result<(), QuadratureError> {
        let d = self.dim;
        let mut mid = [0.0; MAX_DIM];
        for j in 0..d {
            mid[j] = 0.5 * (cell.lo[j] + cell.hi[j]);
        }
        for mask in 0..1usize << d {
            let mut lo = cell.lo;
            let mut hi = cell.hi;
            for j in 0..d {
                if mask >> j & 1 == 1 {
                    lo[j] = mid[j];
                } else {
                    hi[j] = mid[j];
                }
            }
            // A child of an interior cell is interior; straddling parents
            // reclassify children.
            let known = if cell.class == BoxClass::Inside {
                Some(BoxClass::Inside)
            } else {
                None
            };
            out.push(self.make_cell(lo, hi, cell.level + 1, cell.scale, known)?);
        }
        Ok(())
    }
}

fn run_engine<F: FnMut(&[f64]) -> f64>(
    f: F,
    region: &dyn DynRegion,
    root: &AlignedBox,
    opts: &QuadratureOptions,
) -> Result<Integral, QuadratureError> {
    let d = root.dim();
    assert!(
        (1..=MAX_DIM).contains(&d),
        "quadrature supports dimensions 1..={MAX_DIM}"
    );
    let mut engine = Engine {
        f,
        region,
        dim: d,
        seq: 0,
    };
    let mut lo = [0.0; MAX_DIM];
    let mut hi = [0.0; MAX_DIM];
    lo[..d].copy_from_slice(&root.lo);
    hi[..d].copy_from_slice(&root.hi);

    let mut heap: BinaryHeap<Cell> = BinaryHeap::new();
    // Cells at max depth (or fully resolved) whose value and error are final.
    let mut frozen_value = 0.0;
    let mut frozen_err = 0.0;
    let mut frozen_count = 0usize;

    let first = engine.make_cell(lo, hi, 0, 0.0, None)?;
    let mut live_value = 0.0;
    let mut live_err = 0.0;

    let mut children = Vec::with_capacity(1 << d);
    // Forced refinement down to min_level, including cells whose coarse
    // samples all came back zero.
    let floor = opts.min_level.min(opts.max_level);
    let mut stack = vec![first];
    while let Some(c) = stack.pop() {
        if c.level < floor && c.class != BoxClass::Outside {
            children.clear();
            engine.split(&c, &mut children)?;
            stack.append(&mut children);
        } else {
            if c.class == BoxClass::Outside && c.level > 0 {
                continue;
            }
            live_value += c.value;
            live_err += c.err;
            heap.push(c);
        }
    }
    loop {
        let total_value = frozen_value + live_value;
        let total_err = frozen_err + live_err;
        let tol = opts.abs_tol.max(opts.rel_tol * total_value.abs());
        if total_err <= tol {
            // Recompute the sums exactly before accepting; incremental
            // updates drift.
            let exact_value =
                frozen_value + heap.iter().map(|c| c.value).sum::<f64>();
            let exact_err = frozen_err + heap.iter().map(|c| c.err).sum::<f64>();
            let tol2 = opts.abs_tol.max(opts.rel_tol * exact_value.abs());
            if exact_err <= tol2 * (1.0 + 1e-9) {
                return Ok(Integral {
                    value: exact_value,
                    error_bound: exact_err,
                    cells: heap.len() + frozen_count,
                });
            }
            live_value = exact_value - frozen_value;
            live_err = exact_err - frozen_err;
        }
        let cells = heap.len() + frozen_count;
        if cells > opts.max_cells {
            return Err(QuadratureError::NonConvergent {
                requested: tol,
                achieved: total_err,
                cells,
                value: total_value,
            });
        }
        let Some(worst) = heap.pop() else {
            return Err(QuadratureError::NonConvergent {
                requested: tol,
                achieved: total_err,
                cells,
                value: total_value,
            });
        };
        if worst.level >= opts.max_level {
            // Cannot refine further; freeze it.
            live_value -= worst.value;
            live_err -= worst.err;
            frozen_value += worst.value;
            frozen_err += worst.err;
            frozen_count += 1;
            if heap.is_empty() {
                let total_value = frozen_value + live_value;
                let total_err = frozen_err + live_err;
                let tol = opts.abs_tol.max(opts.rel_tol * total_value.abs());
                if total_err <= tol {
                    return Ok(Integral {
                        value: total_value,
                        error_bound: total_err,
                        cells: frozen_count,
                    });
                }
                return Err(QuadratureError::NonConvergent {
                    requested: tol,
                    achieved: total_err,
                    cells: frozen_count,
                    value: total_value,
                });
            }
            continue;
        }
        live_value -= worst.value;
        live_err -= worst.err;
        children.clear();
        engine.split(&worst, &mut children)?;
        for c in children.drain(..) {
            if c.class == BoxClass::Outside {
                continue;
            }
            live_value += c.value;
            live_err += c.err;
            heap.push(c);
        }
    }
}

/// Integral of a smooth integrand over a box.
pub fn integrate_box<F: FnMut(&[f64]) -> f64>(
    f: F,
    domain: &AlignedBox,
    opts: &QuadratureOptions,
) -> Result<Integral, QuadratureError> {
    struct All;
    impl DynRegion for All {
        fn contains(&self, _: &[f64]) -> bool {
            true
        }
        fn classify(&self, _: &AlignedBox) -> BoxClass {
            BoxClass::Inside
        }
    }
    run_engine(f, &All, domain, opts)
}

/// Integral of `f` restricted to `region`, over the region's bounding box.
pub fn integrate_region<F: FnMut(&[f64]) -> f64, R: Region + ?Sized>(
    f: F,
    region: &R,
    opts: &QuadratureOptions,
) -> Result<Integral, QuadratureError> {
    let root = region.bounding_box();
    if root.volume() == 0.0 {
        return Ok(Integral {
            value: 0.0,
            error_bound: 0.0,
            cells: 0,
        });
    }
    let shim: &R = region;
    run_engine(f, &&*shim, &root, opts)
}
