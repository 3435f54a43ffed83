//! Dyadic cubes, bounded domains, and convex cells.
//!
//! Everything here is immutable value types. Boundary distances are exact
//! closed forms: boxes and balls per axis, halfspace intersections through
//! hyperplane margins, rectilinear composites (L-shape, dumbbell,
//! room-and-passage) through their boundary segment complex.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{dot, norm, norm2, solve_linear};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("coordinate {index} is NaN")]
    NanCoordinate { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

fn check_point(x: &[f64], dim: usize) -> Result<(), GeometryError> {
    if x.len() != dim {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    for (i, v) in x.iter().enumerate() {
        if v.is_nan() {
            return Err(GeometryError::NanCoordinate { index: i });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Axis-aligned boxes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AlignedBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        debug_assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b));
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn side(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn contains_box(&self, o: &AlignedBox) -> bool {
        self.lo
            .iter()
            .zip(&o.lo)
            .all(|(a, b)| a <= b)
            && self.hi.iter().zip(&o.hi).all(|(a, b)| a >= b)
    }

    /// Closed intersection; `None` when the boxes are disjoint. A degenerate
    /// (zero-thickness) intersection is still returned.
    pub fn intersect(&self, o: &AlignedBox) -> Option<AlignedBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let a = self.lo[j].max(o.lo[j]);
            let b = self.hi[j].min(o.hi[j]);
            if a > b {
                return None;
            }
            lo.push(a);
            hi.push(b);
        }
        Some(AlignedBox::new(lo, hi))
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|j| {
                        if mask >> j & 1 == 1 {
                            self.hi[j]
                        } else {
                            self.lo[j]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Squared norm of the point of the box closest to the origin.
    pub fn min_norm2(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let v = 0.0f64.clamp(*a, *b);
                v * v
            })
            .sum()
    }

    /// Squared norm of the farthest corner from the origin.
    pub fn max_norm2(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum()
    }

    pub fn split_longest_axis(&self) -> (AlignedBox, AlignedBox) {
        let mut j = 0;
        for k in 1..self.dim() {
            if self.side(k) > self.side(j) {
                j = k;
            }
        }
        let mid = 0.5 * (self.lo[j] + self.hi[j]);
        let mut hi_left = self.hi.clone();
        hi_left[j] = mid;
        let mut lo_right = self.lo.clone();
        lo_right[j] = mid;
        (
            AlignedBox::new(self.lo.clone(), hi_left),
            AlignedBox::new(lo_right, self.hi.clone()),
        )
    }
}

// ---------------------------------------------------------------------------
// Dyadic cubes
// ---------------------------------------------------------------------------

/// Closed dyadic cube `{ x : m_j 2^-l <= x_j <= (m_j + 1) 2^-l }`.
/// Negative levels give cubes of sidelength larger than one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: i32, index: Vec<i64>) -> Self {
        assert!(!index.is_empty());
        Self { level, index }
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn sidelength(&self) -> f64 {
        2.0f64.powi(-self.level)
    }

    pub fn lo(&self, j: usize) -> f64 {
        self.index[j] as f64 * self.sidelength()
    }

    pub fn hi(&self, j: usize) -> f64 {
        (self.index[j] + 1) as f64 * self.sidelength()
    }

    pub fn to_box(&self) -> AlignedBox {
        let d = self.dim();
        AlignedBox::new(
            (0..d).map(|j| self.lo(j)).collect(),
            (0..d).map(|j| self.hi(j)).collect(),
        )
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.sidelength();
        self.index.iter().map(|m| (*m as f64 + 0.5) * s).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.sidelength() * (self.dim() as f64).sqrt()
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        self.to_box().corners()
    }

    /// The unique dyadic cube one level coarser containing this one.
    pub fn parent(&self) -> DyadicCube {
        DyadicCube::new(
            self.level - 1,
            self.index.iter().map(|m| m.div_euclid(2)).collect(),
        )
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                DyadicCube::new(
                    self.level + 1,
                    (0..d)
                        .map(|j| 2 * self.index[j] + (mask >> j & 1) as i64)
                        .collect(),
                )
            })
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.to_box().contains(x)
    }

    /// Closed cubes sharing at least one point. Exact integer arithmetic.
    pub fn touches(&self, other: &DyadicCube) -> bool {
        assert_eq!(self.dim(), other.dim());
        let lf = self.level.max(other.level);
        let sa = (lf - self.level) as u32;
        let sb = (lf - other.level) as u32;
        assert!(sa < 100 && sb < 100);
        for j in 0..self.dim() {
            let alo = (self.index[j] as i128) << sa;
            let ahi = ((self.index[j] + 1) as i128) << sa;
            let blo = (other.index[j] as i128) << sb;
            let bhi = ((other.index[j] + 1) as i128) << sb;
            if alo > bhi || blo > ahi {
                return false;
            }
        }
        true
    }

    /// Smallest dyadic cube at `level` containing the point (ties broken
    /// toward the cube whose closed lower face contains the point).
    pub fn containing(level: i32, x: &[f64]) -> DyadicCube {
        let s = 2.0f64.powi(level);
        DyadicCube::new(level, x.iter().map(|v| (v * s).floor() as i64).collect())
    }
}

/// A cube dilated about its center by a factor `dilation >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledCube {
    pub base: DyadicCube,
    pub dilation: f64,
}

impl ScaledCube {
    pub fn new(base: DyadicCube, dilation: f64) -> Self {
        assert!(dilation >= 1.0);
        Self { base, dilation }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn center(&self) -> Vec<f64> {
        self.base.center()
    }

    pub fn sidelength(&self) -> f64 {
        self.dilation * self.base.sidelength()
    }

    pub fn to_box(&self) -> AlignedBox {
        let c = self.center();
        let h = 0.5 * self.sidelength();
        AlignedBox::new(
            c.iter().map(|v| v - h).collect(),
            c.iter().map(|v| v + h).collect(),
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.to_box().contains(x)
    }

    /// The same cube dilated further (relative to the base cube).
    pub fn dilate(&self, extra: f64) -> ScaledCube {
        ScaledCube::new(self.base.clone(), self.dilation * extra)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeGeometry {
    pub center: Vec<f64>,
    pub sidelength: f64,
    pub diameter: f64,
    pub vertices: Vec<Vec<f64>>,
}

pub fn cube_geometry(cube: &DyadicCube) -> CubeGeometry {
    CubeGeometry {
        center: cube.center(),
        sidelength: cube.sidelength(),
        diameter: cube.diameter(),
        vertices: cube.vertices(),
    }
}

// ---------------------------------------------------------------------------
// Rectilinear boundary complexes (2-D composites)
// ---------------------------------------------------------------------------

/// Axis-aligned segment in the plane. `axis` is the axis the segment runs
/// along; `fixed` is its coordinate on the other axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSegment {
    pub axis: usize,
    pub fixed: f64,
    pub lo: f64,
    pub hi: f64,
}

fn interval_gap(alo: f64, ahi: f64, blo: f64, bhi: f64) -> f64 {
    (blo - ahi).max(alo - bhi).max(0.0)
}

impl AxisSegment {
    pub fn point_dist(&self, x: &[f64]) -> f64 {
        let along = x[self.axis];
        let across = x[1 - self.axis];
        let da = interval_gap(along, along, self.lo, self.hi);
        let dc = (across - self.fixed).abs();
        da.hypot(dc)
    }

    pub fn box_dist(&self, b: &AlignedBox) -> f64 {
        let da = interval_gap(b.lo[self.axis], b.hi[self.axis], self.lo, self.hi);
        let dc = interval_gap(
            b.lo[1 - self.axis],
            b.hi[1 - self.axis],
            self.fixed,
            self.fixed,
        );
        da.hypot(dc)
    }
}

/// Boundary segments of a union of axis-aligned rectangles with pairwise
/// disjoint interiors. Slab decomposition: a fragment of a rectangle edge is
/// boundary exactly when one of its two adjacent slab cells lies inside the
/// union and the other does not.
pub fn rectilinear_boundary(rects: &[AlignedBox]) -> Vec<AxisSegment> {
    assert!(rects.iter().all(|r| r.dim() == 2));
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.lo[0], r.hi[0]]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.lo[1], r.hi[1]]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let inside = |p: &[f64]| rects.iter().any(|r| r.contains(p));
    let cell_inside = |i: isize, j: isize| -> bool {
        if i < 0 || j < 0 || i as usize + 1 >= xs.len() || j as usize + 1 >= ys.len() {
            return false;
        }
        let (i, j) = (i as usize, j as usize);
        inside(&[0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])])
    };
    let mut out = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        for j in 0..ys.len().saturating_sub(1) {
            if cell_inside(i as isize - 1, j as isize) != cell_inside(i as isize, j as isize) {
                out.push(AxisSegment {
                    axis: 1,
                    fixed: x,
                    lo: ys[j],
                    hi: ys[j + 1],
                });
            }
        }
    }
    for (j, &y) in ys.iter().enumerate() {
        for i in 0..xs.len().saturating_sub(1) {
            if cell_inside(i as isize, j as isize - 1) != cell_inside(i as isize, j as isize) {
                out.push(AxisSegment {
                    axis: 0,
                    fixed: y,
                    lo: xs[i],
                    hi: xs[i + 1],
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

/// Halfspace `{ x : <normal, x> <= offset }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "params", rename_all = "snake_case")]
pub enum Shape {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    HalfspaceIntersection {
        halfspaces: Vec<Halfspace>,
    },
    LShape {
        side: f64,
        notch: f64,
    },
    Dumbbell {
        bell: f64,
        tube_length: f64,
        tube_radius: f64,
    },
    RoomAndPassage {
        rooms: Vec<AlignedBox>,
        passages: Vec<AlignedBox>,
        t: Vec<f64>,
        t_prime: Vec<f64>,
        heights: Vec<f64>,
    },
    PuncturedBall {
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainModel {
    pub dimension: usize,
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub john_center: Option<Vec<f64>>,
}

impl DomainModel {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0);
        Self {
            dimension: center.len(),
            shape: Shape::Ball { center, radius },
            john_center: None,
        }
    }

    pub fn box_domain(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        Self {
            dimension: lo.len(),
            shape: Shape::Box { lo, hi },
            john_center: None,
        }
    }

    pub fn unit_box(d: usize) -> Self {
        Self::box_domain(vec![0.0; d], vec![1.0; d])
    }

    pub fn halfspace_intersection(dimension: usize, halfspaces: Vec<Halfspace>) -> Self {
        assert!(halfspaces.iter().all(|h| h.normal.len() == dimension));
        Self {
            dimension,
            shape: Shape::HalfspaceIntersection { halfspaces },
            john_center: None,
        }
    }

    /// L-shaped domain: the square `[0, side]^2` with the closed top-right
    /// `notch x notch` corner removed.
    pub fn lshape(side: f64, notch: f64) -> Self {
        assert!(side > 0.0 && notch > 0.0 && notch < side);
        Self {
            dimension: 2,
            shape: Shape::LShape { side, notch },
            john_center: None,
        }
    }

    pub fn unit_lshape() -> Self {
        Self::lshape(1.0, 0.5)
    }

    /// Two square bells of side `2 * bell` joined by a horizontal tube of
    /// length `tube_length` and half-height `tube_radius`, centered at the
    /// origin.
    pub fn dumbbell(bell: f64, tube_length: f64, tube_radius: f64) -> Self {
        assert!(bell > 0.0 && tube_length > 0.0);
        assert!(tube_radius > 0.0 && tube_radius < bell);
        Self {
            dimension: 2,
            shape: Shape::Dumbbell {
                bell,
                tube_length,
                tube_radius,
            },
            john_center: None,
        }
    }

    /// Room-and-passage chain built from explicit schedules. Room `n` is a
    /// square of side `room_sides[n]` centered on the horizontal axis;
    /// passage `n` joins rooms `n` and `n+1` with length
    /// `passage_lengths[n]` and height `heights[n]`. The chain starts at
    /// x = 0 and extends rightward.
    pub fn room_and_passage_from_schedules(
        room_sides: &[f64],
        passage_lengths: &[f64],
        heights: &[f64],
    ) -> Self {
        let k = room_sides.len();
        assert!(k >= 2);
        assert_eq!(passage_lengths.len(), k - 1);
        assert_eq!(heights.len(), k - 1);
        for n in 0..k - 1 {
            assert!(heights[n] > 0.0);
            assert!(
                heights[n] <= room_sides[n] && heights[n] <= room_sides[n + 1],
                "passage {n} taller than an adjacent room"
            );
        }
        let mut rooms = Vec::with_capacity(k);
        let mut passages = Vec::with_capacity(k - 1);
        let mut t = Vec::with_capacity(k - 1);
        let mut t_prime = Vec::with_capacity(k - 1);
        let mut x = 0.0;
        for n in 0..k {
            let s = room_sides[n];
            rooms.push(AlignedBox::new(vec![x, -0.5 * s], vec![x + s, 0.5 * s]));
            x += s;
            if n + 1 < k {
                let l = passage_lengths[n];
                let h = heights[n];
                passages.push(AlignedBox::new(
                    vec![x, -0.5 * h],
                    vec![x + l, 0.5 * h],
                ));
                t.push(x);
                t_prime.push(x + l);
                x += l;
            }
        }
        Self {
            dimension: 2,
            shape: Shape::RoomAndPassage {
                rooms,
                passages,
                t,
                t_prime,
                heights: heights.to_vec(),
            },
            john_center: None,
        }
    }

    /// Default room-and-passage chain: room sides 4^{-n+1}, passage lengths
    /// 4^{-n}, passage heights exp(-2^n), truncated after `n_rooms` rooms.
    pub fn room_and_passage(n_rooms: usize) -> Self {
        assert!(n_rooms >= 2);
        let sides: Vec<f64> = (1..=n_rooms).map(|n| 4.0f64.powi(1 - n as i32)).collect();
        let lengths: Vec<f64> = (1..n_rooms).map(|n| 4.0f64.powi(-(n as i32))).collect();
        let heights: Vec<f64> = (1..n_rooms)
            .map(|n| (-(2.0f64.powi(n as i32))).exp())
            .collect();
        Self::room_and_passage_from_schedules(&sides, &lengths, &heights)
    }

    pub fn punctured_ball(dimension: usize, radius: f64) -> Self {
        assert!(radius > 0.0);
        Self {
            dimension,
            shape: Shape::PuncturedBall { radius },
            john_center: None,
        }
    }

    pub fn with_john_center(mut self, c: Vec<f64>) -> Self {
        assert_eq!(c.len(), self.dimension);
        self.john_center = Some(c);
        self
    }

    pub fn dim(&self) -> usize {
        self.dimension
    }

    /// Rectangle pieces with pairwise disjoint interiors whose union is the
    /// domain, for the rectilinear composites (and plain boxes).
    pub fn rect_pieces(&self) -> Option<Vec<AlignedBox>> {
        match &self.shape {
            Shape::Box { lo, hi } => Some(vec![AlignedBox::new(lo.clone(), hi.clone())]),
            Shape::LShape { side, notch } => {
                let s = *side;
                let cut = s - notch;
                Some(vec![
                    AlignedBox::new(vec![0.0, 0.0], vec![s, cut]),
                    AlignedBox::new(vec![0.0, cut], vec![cut, s]),
                ])
            }
            Shape::Dumbbell {
                bell,
                tube_length,
                tube_radius,
            } => {
                let r = *bell;
                let hl = 0.5 * tube_length;
                Some(vec![
                    AlignedBox::new(vec![-hl - 2.0 * r, -r], vec![-hl, r]),
                    AlignedBox::new(vec![-hl, -tube_radius], vec![hl, *tube_radius]),
                    AlignedBox::new(vec![hl, -r], vec![hl + 2.0 * r, r]),
                ])
            }
            Shape::RoomAndPassage {
                rooms, passages, ..
            } => {
                let mut v = rooms.clone();
                v.extend(passages.iter().cloned());
                Some(v)
            }
            _ => None,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dimension {
            return false;
        }
        match &self.shape {
            Shape::Ball { center, radius } => {
                crate::util::dist2(x, center) <= radius * radius
            }
            Shape::Box { lo, hi } => AlignedBox::new(lo.clone(), hi.clone()).contains(x),
            Shape::HalfspaceIntersection { halfspaces } => halfspaces
                .iter()
                .all(|h| dot(&h.normal, x) <= h.offset),
            Shape::PuncturedBall { radius } => {
                let n2 = norm2(x);
                n2 <= radius * radius && n2 > 0.0
            }
            _ => self
                .rect_pieces()
                .expect("composite domains are rectilinear")
                .iter()
                .any(|r| r.contains(x)),
        }
    }

    /// Euclidean distance from `x` to the domain boundary. Exact for interior
    /// points of every supported shape; for exterior points of a halfspace
    /// intersection the largest hyperplane violation is returned.
    pub fn boundary_distance(&self, x: &[f64]) -> Result<f64, GeometryError> {
        check_point(x, self.dimension)?;
        Ok(match &self.shape {
            Shape::Ball { center, radius } => {
                (radius - crate::util::dist(x, center)).abs()
            }
            Shape::Box { lo, hi } => {
                if self.contains(x) {
                    (0..self.dimension)
                        .map(|j| (x[j] - lo[j]).min(hi[j] - x[j]))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    (0..self.dimension)
                        .map(|j| interval_gap(x[j], x[j], lo[j], hi[j]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                }
            }
            Shape::HalfspaceIntersection { halfspaces } => {
                let margins = halfspaces
                    .iter()
                    .map(|h| (h.offset - dot(&h.normal, x)) / norm(&h.normal));
                if self.contains(x) {
                    margins.fold(f64::INFINITY, f64::min)
                } else {
                    margins.fold(f64::INFINITY, |acc, m| if m < 0.0 { acc.min(-m) } else { acc })
                        .max(0.0)
                }
            }
            Shape::PuncturedBall { radius } => {
                let n = norm(x);
                (radius - n).abs().min(n)
            }
            _ => {
                let segs = self.boundary_complex();
                segs.iter()
                    .map(|s| s.point_dist(x))
                    .fold(f64::INFINITY, f64::min)
            }
        })
    }

    /// Boundary segments for the rectilinear composites (2-D only).
    pub fn boundary_complex(&self) -> Vec<AxisSegment> {
        let pieces = self
            .rect_pieces()
            .expect("boundary complex needs a rectilinear domain");
        assert_eq!(self.dimension, 2);
        rectilinear_boundary(&pieces)
    }

    /// Whether the closed box lies inside the closed domain.
    pub fn contains_box(&self, b: &AlignedBox) -> bool {
        if b.dim() != self.dimension {
            return false;
        }
        match &self.shape {
            Shape::Ball { .. } | Shape::HalfspaceIntersection { .. } => {
                b.corners().iter().all(|c| self.contains(c))
            }
            Shape::Box { lo, hi } => AlignedBox::new(lo.clone(), hi.clone()).contains_box(b),
            Shape::PuncturedBall { radius } => {
                b.max_norm2() <= radius * radius && !b.contains(&vec![0.0; self.dimension])
            }
            _ => {
                let pieces = self.rect_pieces().unwrap();
                let vol = b.volume();
                if vol == 0.0 {
                    return b.corners().iter().all(|c| self.contains(c));
                }
                let covered: f64 = pieces
                    .iter()
                    .filter_map(|p| p.intersect(b).map(|i| i.volume()))
                    .sum();
                covered >= vol * (1.0 - 1e-12)
            }
        }
    }

    /// Distance from a box contained in the domain to the domain complement.
    /// Returns a non-positive value when the box is not strictly inside.
    pub fn box_exterior_distance(&self, b: &AlignedBox) -> f64 {
        match &self.shape {
            Shape::Box { lo, hi } => (0..self.dimension)
                .map(|j| (b.lo[j] - lo[j]).min(hi[j] - b.hi[j]))
                .fold(f64::INFINITY, f64::min),
            Shape::Ball { center, radius } => {
                let far2: f64 = (0..self.dimension)
                    .map(|j| {
                        (b.lo[j] - center[j])
                            .abs()
                            .max((b.hi[j] - center[j]).abs())
                            .powi(2)
                    })
                    .sum();
                radius - far2.sqrt()
            }
            Shape::HalfspaceIntersection { halfspaces } => halfspaces
                .iter()
                .map(|h| {
                    let m: f64 = (0..self.dimension)
                        .map(|j| (h.normal[j] * b.lo[j]).max(h.normal[j] * b.hi[j]))
                        .sum();
                    (h.offset - m) / norm(&h.normal)
                })
                .fold(f64::INFINITY, f64::min),
            Shape::PuncturedBall { radius } => {
                let far2 = {
                    let far: f64 = (0..self.dimension)
                        .map(|j| b.lo[j].abs().max(b.hi[j].abs()).powi(2))
                        .sum();
                    far
                };
                let ball_margin = radius - far2.sqrt();
                ball_margin.min(b.min_norm2().sqrt())
            }
            _ => {
                if !self.contains_box(b) {
                    return 0.0;
                }
                self.boundary_complex()
                    .iter()
                    .map(|s| s.box_dist(b))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Lebesgue volume, when available in closed form.
    pub fn volume(&self) -> Option<f64> {
        match &self.shape {
            Shape::Box { lo, hi } => Some(AlignedBox::new(lo.clone(), hi.clone()).volume()),
            Shape::Ball { radius, .. } | Shape::PuncturedBall { radius } => {
                Some(ball_volume(self.dimension, *radius))
            }
            Shape::HalfspaceIntersection { .. } => None,
            _ => Some(
                self.rect_pieces()
                    .unwrap()
                    .iter()
                    .map(AlignedBox::volume)
                    .sum(),
            ),
        }
    }

    pub fn bounding_box(&self) -> Result<AlignedBox, GeometryError> {
        match &self.shape {
            Shape::Box { lo, hi } => Ok(AlignedBox::new(lo.clone(), hi.clone())),
            Shape::Ball { center, radius } => Ok(AlignedBox::new(
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Shape::PuncturedBall { radius } => Ok(AlignedBox::new(
                vec![-radius; self.dimension],
                vec![*radius; self.dimension],
            )),
            Shape::HalfspaceIntersection { halfspaces } => {
                let verts = polytope_vertices(self.dimension, halfspaces);
                if verts.is_empty() {
                    return Err(GeometryError::Unsupported(
                        "halfspace intersection has no vertices (empty or unbounded)".into(),
                    ));
                }
                let mut lo = vec![f64::INFINITY; self.dimension];
                let mut hi = vec![f64::NEG_INFINITY; self.dimension];
                for v in &verts {
                    for j in 0..self.dimension {
                        lo[j] = lo[j].min(v[j]);
                        hi[j] = hi[j].max(v[j]);
                    }
                }
                let bb = AlignedBox::new(lo, hi);
                let c = bb.center();
                let scale = bb.diameter().max(1.0) * 16.0;
                for mask in 0..3usize.pow(self.dimension as u32) {
                    let mut dir = vec![0.0; self.dimension];
                    let mut m = mask;
                    let mut zero = true;
                    for item in dir.iter_mut() {
                        let t = m % 3;
                        m /= 3;
                        *item = t as f64 - 1.0;
                        zero &= *item == 0.0;
                    }
                    if zero {
                        continue;
                    }
                    let probe: Vec<f64> =
                        c.iter().zip(&dir).map(|(a, d)| a + d * scale).collect();
                    if self.contains(&probe) {
                        return Err(GeometryError::Unsupported(
                            "halfspace intersection appears unbounded".into(),
                        ));
                    }
                }
                Ok(bb)
            }
            _ => {
                let pieces = self.rect_pieces().unwrap();
                let mut lo = vec![f64::INFINITY; 2];
                let mut hi = vec![f64::NEG_INFINITY; 2];
                for p in &pieces {
                    for j in 0..2 {
                        lo[j] = lo[j].min(p.lo[j]);
                        hi[j] = hi[j].max(p.hi[j]);
                    }
                }
                Ok(AlignedBox::new(lo, hi))
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } | Shape::PuncturedBall { radius } => 2.0 * radius,
            _ => self
                .bounding_box()
                .map(|b| b.diameter())
                .unwrap_or(f64::NAN),
        }
    }
}

pub fn ball_volume(d: usize, r: f64) -> f64 {
    match d {
        1 => 2.0 * r,
        2 => std::f64::consts::PI * r * r,
        3 => 4.0 / 3.0 * std::f64::consts::PI * r * r * r,
        _ => {
            let half = d as f64 / 2.0;
            std::f64::consts::PI.powf(half) / gamma_half_integer(d) * r.powi(d as i32)
        }
    }
}

/// Gamma(d/2 + 1) for integer d, by the recurrence Gamma(x + 1) = x Gamma(x)
/// down to Gamma(1) = 1 or Gamma(1/2) = sqrt(pi).
fn gamma_half_integer(d: usize) -> f64 {
    let mut acc = if d % 2 == 0 {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut k = if d % 2 == 0 { 1.0 } else { 0.5 };
    let target = d as f64 / 2.0 + 1.0;
    while (k - target).abs() > 1e-9 {
        acc *= k;
        k += 1.0;
    }
    acc
}

/// Candidate vertices of a halfspace intersection: solutions of all
/// d-subsets of boundary hyperplanes that satisfy every constraint.
fn polytope_vertices(d: usize, halfspaces: &[Halfspace]) -> Vec<Vec<f64>> {
    let m = halfspaces.len();
    if m < d {
        return Vec::new();
    }
    let mut verts: Vec<Vec<f64>> = Vec::new();
    let mut combo = (0..d).collect::<Vec<usize>>();
    loop {
        let mut a = Vec::with_capacity(d * d);
        let mut b = Vec::with_capacity(d);
        for &i in &combo {
            a.extend_from_slice(&halfspaces[i].normal);
            b.push(halfspaces[i].offset);
        }
        if let Some(x) = solve_linear(d, &a, &b) {
            let feasible = halfspaces
                .iter()
                .all(|h| dot(&h.normal, &x) <= h.offset + 1e-9 * (1.0 + h.offset.abs()));
            if feasible && !verts.iter().any(|v| crate::util::dist(v, &x) < 1e-9) {
                verts.push(x);
            }
        }
        // next combination
        let mut i = d;
        loop {
            if i == 0 {
                return verts;
            }
            i -= 1;
            if combo[i] + (d - i) < m {
                combo[i] += 1;
                for j in i + 1..d {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convex cells
// ---------------------------------------------------------------------------

/// Closed convex cell: either a dilated dyadic cube or a chord-cut ball
/// sector `{ |x| <= radius, sign_i x_i >= 0, <sign, x> >= chord }`.
/// A zero sign vector with `chord <= 0` describes a full centered ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cell", rename_all = "snake_case")]
pub enum ConvexCell {
    Cube { cube: ScaledCube },
    BallSector {
        radius: f64,
        sign: Vec<i8>,
        chord: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxClass {
    Inside,
    Outside,
    Straddle,
}

impl ConvexCell {
    pub fn dim(&self) -> usize {
        match self {
            ConvexCell::Cube { cube } => cube.dim(),
            ConvexCell::BallSector { sign, .. } => sign.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ConvexCell::Cube { cube } => cube.contains(x),
            ConvexCell::BallSector {
                radius,
                sign,
                chord,
            } => {
                if x.len() != sign.len() || norm2(x) > radius * radius {
                    return false;
                }
                let mut s = 0.0;
                for (v, sg) in x.iter().zip(sign) {
                    let sg = *sg as f64;
                    if sg * v < 0.0 {
                        return false;
                    }
                    s += sg * v;
                }
                s >= *chord
            }
        }
    }

    pub fn bounding_box(&self) -> AlignedBox {
        match self {
            ConvexCell::Cube { cube } => cube.to_box(),
            ConvexCell::BallSector { radius, sign, .. } => {
                let lo = sign
                    .iter()
                    .map(|s| if *s > 0 { 0.0 } else { -radius })
                    .collect();
                let hi = sign
                    .iter()
                    .map(|s| if *s < 0 { 0.0 } else { *radius })
                    .collect();
                AlignedBox::new(lo, hi)
            }
        }
    }

    /// Conservative classification of an axis-aligned box against the cell.
    /// `Inside` and `Outside` verdicts are exact; `Straddle` may be returned
    /// for boxes that merely come close.
    pub fn classify_box(&self, b: &AlignedBox) -> BoxClass {
        match self {
            ConvexCell::Cube { cube } => {
                let cb = cube.to_box();
                if cb.contains_box(b) {
                    BoxClass::Inside
                } else if cb.intersect(b).is_none() {
                    BoxClass::Outside
                } else {
                    BoxClass::Straddle
                }
            }
            ConvexCell::BallSector {
                radius,
                sign,
                chord,
            } => {
                let r2 = radius * radius;
                if b.min_norm2() > r2 {
                    return BoxClass::Outside;
                }
                // Linear constraints: evaluate on corners via per-axis extremes.
                let mut chord_max = 0.0;
                let mut chord_min = 0.0;
                let mut any_axis_out = false;
                let mut all_axis_in = true;
                for j in 0..sign.len() {
                    let sg = sign[j] as f64;
                    let lo = sg * b.lo[j];
                    let hi = sg * b.hi[j];
                    chord_max += lo.max(hi);
                    chord_min += lo.min(hi);
                    if lo.max(hi) < 0.0 {
                        any_axis_out = true;
                    }
                    if lo.min(hi) < 0.0 {
                        all_axis_in = false;
                    }
                }
                if any_axis_out || chord_max < *chord {
                    return BoxClass::Outside;
                }
                if all_axis_in && chord_min >= *chord && b.max_norm2() <= r2 {
                    return BoxClass::Inside;
                }
                BoxClass::Straddle
            }
        }
    }
}

pub fn cell_membership(cell: &ConvexCell, x: &[f64]) -> bool {
    cell.contains(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_interval_cube() {
        let c = DyadicCube::new(0, vec![0]);
        let g = cube_geometry(&c);
        assert_eq!(g.center, vec![0.5]);
        assert_eq!(g.sidelength, 1.0);
        assert_eq!(g.diameter, 1.0);
    }

    #[test]
    fn quarter_square_cube() {
        let c = DyadicCube::new(1, vec![0, 0]);
        let g = cube_geometry(&c);
        assert_eq!(g.center, vec![0.25, 0.25]);
        assert_eq!(g.sidelength, 0.5);
    }

    #[test]
    fn negative_index_vertices() {
        let c = DyadicCube::new(0, vec![3, -1]);
        let mut vs = c.vertices();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            vs,
            vec![
                vec![3.0, -1.0],
                vec![3.0, 0.0],
                vec![4.0, -1.0],
                vec![4.0, 0.0]
            ]
        );
    }

    #[test]
    fn parent_contains_children() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = rng.gen_range(1..=3);
            let level = rng.gen_range(-3..=6);
            let index = (0..d).map(|_| rng.gen_range(-40i64..40)).collect();
            let c = DyadicCube::new(level, index);
            for ch in c.children() {
                assert_eq!(ch.parent(), c);
                let pb = c.to_box();
                let cb = ch.to_box();
                assert!(pb.contains_box(&cb));
            }
            let pb = c.parent().to_box();
            assert!(pb.contains_box(&c.to_box()));
        }
    }

    #[test]
    fn ball_center_distance() {
        let dom = DomainModel::ball(vec![0.0, 0.0], 1.0);
        assert_eq!(dom.boundary_distance(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn box_interior_distance() {
        let dom = DomainModel::box_domain(vec![0.0, 0.0], vec![1.0, 1.0]);
        let d = dom.boundary_distance(&[0.5, 0.1]).unwrap();
        assert!((d - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nan_rejected() {
        let dom = DomainModel::unit_box(2);
        assert!(matches!(
            dom.boundary_distance(&[f64::NAN, 0.5]),
            Err(GeometryError::NanCoordinate { index: 0 })
        ));
    }

    #[test]
    fn dumbbell_tube_midpoint() {
        let dom = DomainModel::dumbbell(1.0, 1.0, 0.1);
        let d = dom.boundary_distance(&[0.0, 0.0]).unwrap();
        assert!((d - 0.1).abs() < 1e-15);

        // Independent check: dense sampling of the boundary segments.
        let mut best = f64::INFINITY;
        for seg in dom.boundary_complex() {
            let n = 20_000;
            for i in 0..=n {
                let t = seg.lo + (seg.hi - seg.lo) * i as f64 / n as f64;
                let p = if seg.axis == 0 {
                    [t, seg.fixed]
                } else {
                    [seg.fixed, t]
                };
                let dd = (p[0] * p[0] + p[1] * p[1]).sqrt();
                best = best.min(dd);
            }
        }
        assert!((best - d).abs() < 1e-9);
    }

    #[test]
    fn ball_and_box_boundary_points_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ball = DomainModel::ball(vec![0.3, -0.2], 1.7);
        for _ in 0..1000 {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = [0.3 + 1.7 * theta.cos(), -0.2 + 1.7 * theta.sin()];
            assert!(ball.boundary_distance(&p).unwrap() < 1e-12);
        }
        let bx = DomainModel::box_domain(vec![-1.0, 0.0], vec![2.0, 1.0]);
        for _ in 0..1000 {
            let side = rng.gen_range(0..4);
            let t: f64 = rng.gen();
            let p = match side {
                0 => [-1.0 + 3.0 * t, 0.0],
                1 => [-1.0 + 3.0 * t, 1.0],
                2 => [-1.0, t],
                _ => [2.0, t],
            };
            assert!(bx.boundary_distance(&p).unwrap() < 1e-12);
        }
    }

    #[test]
    fn lshape_reentrant_corner() {
        let dom = DomainModel::unit_lshape();
        assert!(dom.contains(&[0.25, 0.75]));
        assert!(!dom.contains(&[0.75, 0.75]));
        // Point near the reentrant corner (0.5, 0.5): nearest boundary is the
        // corner itself, not the continuation of either face.
        let d = dom.boundary_distance(&[0.4, 0.4]).unwrap();
        assert!((d - (0.02f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn halfspace_triangle() {
        let dom = DomainModel::halfspace_intersection(
            2,
            vec![
                Halfspace {
                    normal: vec![-1.0, 0.0],
                    offset: 0.0,
                },
                Halfspace {
                    normal: vec![0.0, -1.0],
                    offset: 0.0,
                },
                Halfspace {
                    normal: vec![1.0, 1.0],
                    offset: 1.0,
                },
            ],
        );
        assert!(dom.contains(&[0.2, 0.2]));
        assert!(!dom.contains(&[0.8, 0.8]));
        let d = dom.boundary_distance(&[0.1, 0.1]).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        let bb = dom.bounding_box().unwrap();
        assert!((bb.lo[0]).abs() < 1e-9 && (bb.hi[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_halfspace_detected() {
        let dom = DomainModel::halfspace_intersection(
            2,
            vec![
                Halfspace {
                    normal: vec![-1.0, 0.0],
                    offset: 0.0,
                },
                Halfspace {
                    normal: vec![0.0, -1.0],
                    offset: 0.0,
                },
            ],
        );
        assert!(dom.bounding_box().is_err());
    }

    #[test]
    fn sector_membership_examples() {
        // Outer radius 2^{J+1} = 4, chord 2^{J-1} = 1 at J = 1, d = 2.
        let cell = ConvexCell::BallSector {
            radius: 4.0,
            sign: vec![1, 1],
            chord: 1.0,
        };
        assert!(cell.contains(&[2.0, 2.0]));
        assert!(!cell.contains(&[0.4, 0.4]));
        // Merged central ball: zero sign vector, chord 0.
        let ball = ConvexCell::BallSector {
            radius: 2.0,
            sign: vec![0, 0],
            chord: 0.0,
        };
        assert!(ball.contains(&[0.0, 0.0]));
        assert!(ball.contains(&[-1.0, 1.0]));
        assert!(!ball.contains(&[2.0, 1.0]));
    }

    #[test]
    fn sector_midpoint_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for d in 1..=3usize {
            for jj in 1..=3i32 {
                let radius = 2.0f64.powi(jj + 1);
                let chord = 2.0f64.powi(jj - 1);
                let cell = ConvexCell::BallSector {
                    radius,
                    sign: vec![1; d],
                    chord,
                };
                let bb = cell.bounding_box();
                let mut pairs = 0;
                while pairs < 10_000 {
                    let p: Vec<f64> = (0..d)
                        .map(|j| rng.gen_range(bb.lo[j]..=bb.hi[j]))
                        .collect();
                    let q: Vec<f64> = (0..d)
                        .map(|j| rng.gen_range(bb.lo[j]..=bb.hi[j]))
                        .collect();
                    if !cell.contains(&p) || !cell.contains(&q) {
                        continue;
                    }
                    let mid: Vec<f64> =
                        p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
                    assert!(cell.contains(&mid));
                    pairs += 1;
                }
            }
        }
    }

    /// Phase-1 simplex feasibility test for `x in conv(points)`.
    /// Minimizes the sum of artificial variables for the system
    /// `sum_k l_k p_k = x, sum_k l_k = 1, l >= 0`; feasible iff the optimum
    /// is below `tol`. Bland's rule, so finite termination.
    fn hull_contains(points: &[Vec<f64>], x: &[f64], tol: f64) -> bool {
        let d = x.len();
        let rows = d + 1;
        let n = points.len();
        let m = n + rows;
        let mut t = vec![0.0f64; rows * m];
        let mut b: Vec<f64> = x.iter().cloned().chain([1.0]).collect();
        for i in 0..rows {
            let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
            b[i] *= s;
            for k in 0..n {
                let a = if i < d { points[k][i] } else { 1.0 };
                t[i * m + k] = s * a;
            }
            t[i * m + n + i] = 1.0;
        }
        let mut basis: Vec<usize> = (n..n + rows).collect();
        loop {
            // Reduced costs for cost vector: 1 on artificials, 0 on lambdas.
            let mut enter = None;
            for j in 0..m {
                let cj = if j >= n { 1.0 } else { 0.0 };
                let mut r = cj;
                for i in 0..rows {
                    let cb = if basis[i] >= n { 1.0 } else { 0.0 };
                    r -= cb * t[i * m + j];
                }
                if r < -1e-12 {
                    enter = Some(j);
                    break;
                }
            }
            let Some(j) = enter else { break };
            let mut leave = None;
            let mut best = f64::INFINITY;
            for i in 0..rows {
                let a = t[i * m + j];
                if a > 1e-12 {
                    let ratio = b[i] / a;
                    if ratio < best - 1e-15
                        || (ratio < best + 1e-15
                            && leave.is_some_and(|l: usize| basis[i] < basis[l]))
                    {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else { return false }; // unbounded: cannot happen
            let piv = t[r * m + j];
            for jj in 0..m {
                t[r * m + jj] /= piv;
            }
            b[r] /= piv;
            for i in 0..rows {
                if i != r {
                    let f = t[i * m + j];
                    if f != 0.0 {
                        for jj in 0..m {
                            t[i * m + jj] -= f * t[r * m + jj];
                        }
                        b[i] -= f * b[r];
                    }
                }
            }
            basis[r] = j;
        }
        let obj: f64 = (0..rows).filter(|&i| basis[i] >= n).map(|i| b[i]).sum();
        obj < tol
    }

    /// Signed depth of x inside the sector: positive inside, negative
    /// outside, measured as the worst constraint margin in euclidean units.
    fn sector_margin(radius: f64, sign: &[i8], chord: f64, x: &[f64]) -> f64 {
        let rd = radius - norm(x);
        let mut worst = rd;
        let mut s = 0.0;
        let mut nrm2 = 0.0f64;
        for (v, sg) in x.iter().zip(sign) {
            let sg = *sg as f64;
            if sg != 0.0 {
                worst = worst.min(sg * v);
                s += sg * v;
                nrm2 += 1.0;
            }
        }
        if nrm2 > 0.0 {
            worst = worst.min((s - chord) / nrm2.sqrt());
        }
        worst
    }

    #[test]
    fn sector_membership_matches_hull_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for d in 1..=3usize {
            for jj in 1..=3i32 {
                let radius = 2.0f64.powi(jj + 1);
                let inner = 2.0f64.powi(jj - 1);
                let sign = vec![1i8; d];
                let cell = ConvexCell::BallSector {
                    radius,
                    sign: sign.clone(),
                    chord: inner,
                };
                // Sample the generating set: annulus radii, nonnegative
                // directions.
                let mut pts = Vec::with_capacity(10_000);
                while pts.len() < 10_000 {
                    let dir: Vec<f64> = (0..d)
                        .map(|_| {
                            let g: f64 = rng.sample(rand_distr_standard_normal());
                            g.abs()
                        })
                        .collect();
                    let n = norm(&dir);
                    if n < 1e-9 {
                        continue;
                    }
                    let r = rng.gen_range(inner..=radius);
                    let p: Vec<f64> = dir.iter().map(|v| v * r / n).collect();
                    assert!(cell.contains(&p), "sampled point must lie in the cell");
                    pts.push(p);
                }
                // Queries over a dilated bounding box; near-boundary queries
                // are only checked in the safe direction, since the sampled
                // hull sits strictly inside the cell.
                let band = match d {
                    1 => 1e-6,
                    2 => 0.02 * radius,
                    _ => 0.05 * radius,
                };
                let bb = cell.bounding_box();
                let c = bb.center();
                for _ in 0..1_000 {
                    let q: Vec<f64> = (0..d)
                        .map(|j| {
                            let half = 0.65 * (bb.hi[j] - bb.lo[j]);
                            c[j] + rng.gen_range(-half..=half)
                        })
                        .collect();
                    let in_hull = hull_contains(&pts, &q, 1e-9 * (1.0 + norm(&q)));
                    let member = cell.contains(&q);
                    if in_hull {
                        assert!(member, "hull point rejected by membership: {q:?}");
                    }
                    let margin = sector_margin(radius, &sign, inner, &q);
                    if margin > band {
                        assert!(in_hull, "deep interior point missed by hull: {q:?}");
                    }
                    if margin < -band {
                        assert!(!in_hull, "exterior point claimed by hull: {q:?}");
                    }
                }
            }
        }
    }

    // rand's StandardNormal lives in rand_distr, which is not a dependency;
    // a Box-Muller draw is enough here.
    fn rand_distr_standard_normal() -> impl rand::distributions::Distribution<f64> {
        struct BoxMuller;
        impl rand::distributions::Distribution<f64> for BoxMuller {
            fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                (-2.0 * u.ln()).sqrt() * v.cos()
            }
        }
        BoxMuller
    }

    #[test]
    fn room_and_passage_layout() {
        let dom = DomainModel::room_and_passage(4);
        if let Shape::RoomAndPassage {
            rooms,
            passages,
            t,
            t_prime,
            ..
        } = &dom.shape
        {
            assert_eq!(rooms.len(), 4);
            assert_eq!(passages.len(), 3);
            assert_eq!(rooms[0].side(0), 1.0);
            assert_eq!(rooms[1].side(0), 0.25);
            assert!((t[0] - 1.0).abs() < 1e-15);
            assert!((t_prime[0] - 1.25).abs() < 1e-15);
            assert!((t[1] - 1.5).abs() < 1e-15);
            assert!((t_prime[1] - 1.5625).abs() < 1e-15);
            assert!((passages[0].side(1) - (-2.0f64).exp()).abs() < 1e-18);
        } else {
            panic!("wrong shape");
        }
        // Interior membership across a passage mouth.
        assert!(dom.contains(&[1.1, 0.0]));
        assert!(!dom.contains(&[1.1, 0.4]));
    }

    #[test]
    fn punctured_ball_distances() {
        let dom = DomainModel::punctured_ball(2, 1.0);
        assert!(!dom.contains(&[0.0, 0.0]));
        assert!(dom.contains(&[0.5, 0.0]));
        let d = dom.boundary_distance(&[0.5, 0.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        // For this box the puncture is the nearest complement point.
        let b = AlignedBox::new(vec![0.1, 0.1], vec![0.2, 0.2]);
        let m = dom.box_exterior_distance(&b);
        assert!((m - (2.0f64 * 0.1 * 0.1).sqrt()).abs() < 1e-15);
        // For this one the sphere is nearer than the puncture.
        let b2 = AlignedBox::new(vec![0.25, 0.25], vec![0.5, 0.5]);
        let m2 = dom.box_exterior_distance(&b2);
        assert!((m2 - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn domain_json_roundtrip() {
        let dom = DomainModel::dumbbell(1.0, 2.0, 0.1);
        let s = serde_json::to_string(&dom).unwrap();
        assert!(s.contains("\"shape\":\"dumbbell\""));
        assert!(s.contains("\"dimension\":2"));
        assert!(s.contains("\"params\""));
        let back: DomainModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, dom);
    }

    #[test]
    fn scaled_cube_dilation() {
        let c = ScaledCube::new(DyadicCube::new(1, vec![0, 0]), 1.5);
        assert_eq!(c.center(), vec![0.25, 0.25]);
        assert_eq!(c.sidelength(), 0.75);
        let b = c.to_box();
        assert!((b.lo[0] + 0.125).abs() < 1e-15);
        assert!((b.hi[0] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn touching_is_exact() {
        let a = DyadicCube::new(2, vec![0, 0]);
        let b = DyadicCube::new(2, vec![1, 1]);
        assert!(a.touches(&b)); // corner contact
        let c = DyadicCube::new(2, vec![2, 0]);
        assert!(!a.touches(&c));
        let coarse = DyadicCube::new(1, vec![0, -1]);
        assert!(a.touches(&coarse)); // edge contact across levels
        assert!(a.touches(&a.parent()));
        assert!(!DyadicCube::new(1, vec![1, 0]).touches(&a));
    }

    #[test]
    fn ball_volumes() {
        assert!((ball_volume(1, 2.0) - 4.0).abs() < 1e-15);
        assert!((ball_volume(2, 1.0) - std::f64::consts::PI).abs() < 1e-12);
        assert!((ball_volume(3, 1.0) - 4.18879020478639).abs() < 1e-10);
    }
}
