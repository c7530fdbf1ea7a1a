//! Points, cubes, balls, cones and annuli in R^n (n ≤ 3), dyadic grids, and
//! the constructive geometry used by the necessity arguments: separated cube
//! pairs, chains of adjacent cubes, annulus covers and shrinking cone families.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 3;

/// Relative tolerance accepted on chain adjacency for off-axis directions.
pub const ADJACENCY_TOL: f64 = 1e-9;

/// Volume of the Euclidean unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => panic!("dimension {n} not supported"),
    }
}

/// Surface measure of the unit sphere S^{n-1}.
pub fn unit_sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("dimension {n} not supported"),
    }
}

fn check_dim(n: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::invalid(format!("dimension must be 1..=3, got {n}")))
    }
}

/// A point (or vector) in R^n, n ≤ 3. Unused trailing coordinates are zero.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        check_dim(coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { coords: c, dim: coords.len() })
    }

    /// Panicking constructor for literals in code and tests.
    pub fn from_slice(coords: &[f64]) -> Self {
        Self::new(coords).expect("valid point")
    }

    pub fn zero(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        Self { coords: [0.0; MAX_DIM], dim }
    }

    pub fn splat(dim: usize, v: f64) -> Self {
        let mut p = Self::zero(dim);
        for i in 0..dim {
            p.coords[i] = v;
        }
        p
    }

    /// The `axis`-th standard basis vector.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim);
        let mut p = Self::zero(dim);
        p.coords[axis] = 1.0;
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn with_coord(mut self, axis: usize, value: f64) -> Self {
        self.coords[axis] = value;
        self
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        (0..self.dim).map(|i| self.coords[i] * other.coords[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.coords().iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    fn zip(self, other: Point, f: impl Fn(f64, f64) -> f64) -> Point {
        debug_assert_eq!(self.dim, other.dim);
        let mut p = self;
        for i in 0..self.dim {
            p.coords[i] = f(self.coords[i], other.coords[i]);
        }
        p
    }

    pub fn min(self, other: Point) -> Point {
        self.zip(other, f64::min)
    }

    pub fn max(self, other: Point) -> Point {
        self.zip(other, f64::max)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.coords().to_vec()
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(&v)
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        assert!(i < self.dim, "axis {i} out of range for dimension {}", self.dim);
        &self.coords[i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(mut self, s: f64) -> Point {
        for i in 0..self.dim {
            self.coords[i] *= s;
        }
        self
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self * -1.0
    }
}

/// Unit vector giving the direction of non-degeneracy of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Point", into = "Point")]
pub struct Direction(Point);

impl Direction {
    /// Accepts `v` only if `|v| = 1` within 1e-12.
    pub fn new(v: Point) -> Result<Self> {
        if (v.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("direction {v} is not a unit vector")));
        }
        Ok(Self(v))
    }

    pub fn normalized(v: Point) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::invalid("zero vector has no direction"));
        }
        Ok(Self(v * (1.0 / n)))
    }

    pub fn axis(dim: usize, axis: usize) -> Self {
        Self(Point::basis(dim, axis))
    }

    pub fn vector(&self) -> Point {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn reversed(&self) -> Self {
        Self(-self.0)
    }

    /// True when the direction is ± a coordinate axis.
    pub fn is_axis_aligned(&self) -> bool {
        self.0.coords().iter().filter(|c| **c != 0.0).count() == 1
    }
}

impl TryFrom<Point> for Direction {
    type Error = Error;
    fn try_from(p: Point) -> Result<Self> {
        Direction::new(p)
    }
}

impl From<Direction> for Point {
    fn from(d: Direction) -> Point {
        d.0
    }
}

/// Axis-aligned box `[lo, hi)`; internal workhorse for subdivision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub fn new(lo: Point, hi: Point) -> Self {
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim()).any(|i| self.hi[i] <= self.lo[i])
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.dim()).map(|i| self.hi[i] - self.lo[i]).product()
    }

    pub fn center(&self) -> Point {
        (self.lo + self.hi) * 0.5
    }

    pub fn half_diagonal(&self) -> f64 {
        (self.hi - self.lo).norm() * 0.5
    }

    pub fn intersect(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= p[i] && p[i] < self.hi[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    pub fn is_finite(&self) -> bool {
        (0..self.dim()).all(|i| self.lo[i].is_finite() && self.hi[i].is_finite())
    }

    pub fn corners(&self) -> impl Iterator<Item = Point> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            let mut p = self.lo;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    p = p.with_coord(i, self.hi[i]);
                }
            }
            p
        })
    }

    /// The 2^n congruent children.
    pub fn split(&self) -> impl Iterator<Item = Aabb> + '_ {
        let n = self.dim();
        let mid = self.center();
        (0..1usize << n).map(move |mask| {
            let mut lo = self.lo;
            let mut hi = self.hi;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    lo = lo.with_coord(i, mid[i]);
                } else {
                    hi = hi.with_coord(i, mid[i]);
                }
            }
            Aabb::new(lo, hi)
        })
    }

    /// Distance from `p` to the nearest point of the box.
    pub fn nearest_distance(&self, p: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let d = if p[i] < self.lo[i] {
                self.lo[i] - p[i]
            } else if p[i] > self.hi[i] {
                p[i] - self.hi[i]
            } else {
                0.0
            };
            s += d * d;
        }
        s.sqrt()
    }

    /// Distance from `p` to the farthest corner of the box.
    pub fn farthest_distance(&self, p: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let d = (p[i] - self.lo[i]).abs().max((p[i] - self.hi[i]).abs());
            s += d * d;
        }
        s.sqrt()
    }
}

/// The cube `Q(center, halfside)`: sidelength `2·halfside`, half-open per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Point,
    pub halfside: f64,
}

impl Cube {
    pub fn new(center: Point, halfside: f64) -> Result<Self> {
        if !(halfside > 0.0 && halfside.is_finite()) {
            return Err(Error::invalid(format!("cube halfside must be positive, got {halfside}")));
        }
        Ok(Self { center, halfside })
    }

    /// Cube with the given lower corner and sidelength.
    pub fn from_corner(lo: Point, side: f64) -> Result<Self> {
        Self::new(lo + Point::splat(lo.dim(), side / 2.0), side / 2.0)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn side(&self) -> f64 {
        2.0 * self.halfside
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim() as i32)
    }

    pub fn lo(&self) -> Point {
        self.center - Point::splat(self.dim(), self.halfside)
    }

    pub fn hi(&self) -> Point {
        self.center + Point::splat(self.dim(), self.halfside)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.lo(), self.hi())
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|i| {
            let lo = self.center[i] - self.halfside;
            let hi = self.center[i] + self.halfside;
            lo <= p[i] && p[i] < hi
        })
    }

    /// `λQ`: same center, sidelength scaled by `factor`.
    pub fn dilate(&self, factor: f64) -> Cube {
        Cube { center: self.center, halfside: self.halfside * factor }
    }

    pub fn translate(&self, v: Point) -> Cube {
        Cube { center: self.center + v, halfside: self.halfside }
    }

    /// Closed cubes of equal size touch or overlap.
    pub fn is_adjacent(&self, other: &Cube) -> bool {
        let d = (self.center - other.center).norm_inf();
        d <= (self.halfside + other.halfside) * (1.0 + ADJACENCY_TOL)
    }

    pub fn scaled_about_origin(&self, lambda: f64) -> Cube {
        Cube { center: self.center * lambda, halfside: self.halfside * lambda }
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({}, {})", self.center, self.halfside)
    }
}

/// Open Euclidean ball `B(center, radius)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.center.dist(p) < self.radius
    }

    pub fn volume(&self) -> f64 {
        unit_ball_volume(self.dim()) * self.radius.powi(self.dim() as i32)
    }

    pub fn aabb(&self) -> Aabb {
        let r = Point::splat(self.dim(), self.radius);
        Aabb::new(self.center - r, self.center + r)
    }
}

/// `{ inner ≤ |x − center| < outer }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Point,
    pub inner: f64,
    pub outer: f64,
}

impl Annulus {
    pub fn new(center: Point, inner: f64, outer: f64) -> Result<Self> {
        if !(inner >= 0.0 && inner < outer && outer.is_finite()) {
            return Err(Error::invalid(format!("annulus radii must satisfy 0 ≤ inner < outer, got {inner}, {outer}")));
        }
        Ok(Self { center, inner, outer })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, p: &Point) -> bool {
        let d = self.center.dist(p);
        self.inner <= d && d < self.outer
    }

    pub fn volume(&self) -> f64 {
        let n = self.dim() as i32;
        unit_ball_volume(self.dim()) * (self.outer.powi(n) - self.inner.powi(n))
    }

    pub fn aabb(&self) -> Aabb {
        let r = Point::splat(self.dim(), self.outer);
        Aabb::new(self.center - r, self.center + r)
    }
}

/// Union of the balls `B(apex + t·s·√n·u0, s·√n)` over `rmin ≤ s ≤ rmax`.
///
/// With `rmax = None` the outer end is open. Membership is decided in closed
/// form: for fixed `x` the ball condition is a convex quadratic in `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub apex: Point,
    pub direction: Direction,
    pub t: f64,
    pub rmin: f64,
    pub rmax: Option<f64>,
}

impl Cone {
    pub fn new(apex: Point, direction: Direction, t: f64, rmin: f64, rmax: Option<f64>) -> Result<Self> {
        if apex.dim() != direction.dim() {
            return Err(Error::DimensionMismatch { expected: apex.dim(), found: direction.dim() });
        }
        if !(t > 1.0 && t.is_finite()) {
            return Err(Error::invalid(format!("cone separation must exceed 1, got {t}")));
        }
        if !(rmin >= 0.0 && rmin.is_finite()) {
            return Err(Error::invalid(format!("cone inner scale must be ≥ 0, got {rmin}")));
        }
        if let Some(s) = rmax {
            if !(s >= rmin && s.is_finite()) {
                return Err(Error::invalid(format!("cone outer scale {s} below inner scale {rmin}")));
            }
        }
        Ok(Self { apex, direction, t, rmin, rmax })
    }

    pub fn dim(&self) -> usize {
        self.apex.dim()
    }

    fn tau(&self) -> f64 {
        self.t * (self.dim() as f64).sqrt()
    }

    /// Center of the generating ball at scale `s`.
    pub fn ball_center(&self, s: f64) -> Point {
        self.apex + self.direction.vector() * (self.tau() * s)
    }

    pub fn ball_at(&self, s: f64) -> Result<Ball> {
        Ball::new(self.ball_center(s), s * (self.dim() as f64).sqrt())
    }

    /// min over admissible `s` of `|x − c(s)|² − (√n·s + grow)²`.
    fn min_gap(&self, x: &Point, grow: f64) -> f64 {
        let n = self.dim() as f64;
        let rn = n.sqrt();
        let tau = self.tau();
        let w = *x - self.apex;
        let a = w.dot(&self.direction.vector());
        let ww = w.dot(&w);
        let lead = tau * tau - n;
        let lin = tau * a + rn * grow;
        let mut s = lin / lead;
        s = s.max(self.rmin);
        if let Some(smax) = self.rmax {
            s = s.min(smax);
        }
        lead * s * s - 2.0 * lin * s + ww - grow * grow
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.min_gap(x, 0.0) < 0.0
    }

    /// True when the closed ball `B̄(x, rho)` misses the cone.
    pub fn misses_ball(&self, x: &Point, rho: f64) -> bool {
        self.min_gap(x, rho) >= 0.0
    }

    pub fn aabb(&self) -> Option<Aabb> {
        let smax = self.rmax?;
        let n = self.dim();
        let rn = (n as f64).sqrt();
        let c0 = self.ball_center(self.rmin);
        let c1 = self.ball_center(smax);
        let r0 = Point::splat(n, self.rmin * rn);
        let r1 = Point::splat(n, smax * rn);
        Some(Aabb::new((c0 - r0).min(c1 - r1), (c0 + r0).max(c1 + r1)))
    }

    /// Half-angle of the limiting cone `C_0`.
    pub fn half_angle(&self) -> f64 {
        (1.0 / self.t).asin()
    }
}

/// A finite union of cells of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSet {
    pub grid: Grid,
    pub cells: BTreeSet<usize>,
}

impl GridSet {
    pub fn new(grid: Grid, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let cells: BTreeSet<usize> = cells.into_iter().collect();
        if let Some(&c) = cells.iter().next_back() {
            if c >= grid.len() {
                return Err(Error::invalid(format!("cell {c} outside grid of {} cells", grid.len())));
            }
        }
        Ok(Self { grid, cells })
    }

    /// Union of boxes; every box face must lie on a grid line.
    pub fn from_boxes(grid: Grid, boxes: &[Aabb]) -> Result<Self> {
        let mut cells = BTreeSet::new();
        for b in boxes {
            let mut ranges = Vec::with_capacity(grid.dim());
            for axis in 0..grid.dim() {
                let lo = (b.lo[axis] - grid.origin[axis]) / grid.step;
                let hi = (b.hi[axis] - grid.origin[axis]) / grid.step;
                if lo.fract() != 0.0 || hi.fract() != 0.0 {
                    return Err(Error::NotGridAligned(format!("box {:?}..{:?} is not aligned with step {}", b.lo, b.hi, grid.step)));
                }
                if lo < 0.0 || hi > grid.shape[axis] as f64 {
                    return Err(Error::NotGridAligned(format!("box {:?}..{:?} leaves the grid window", b.lo, b.hi)));
                }
                ranges.push((lo as usize, hi as usize));
            }
            grid.for_each_in_ranges(&ranges, |idx| {
                cells.insert(idx);
            });
        }
        Ok(Self { grid, cells })
    }

    pub fn volume(&self) -> f64 {
        self.cells.len() as f64 * self.grid.cell_volume()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.grid.locate(p).is_some_and(|c| self.cells.contains(&c))
    }

    pub fn aabb(&self) -> Option<Aabb> {
        let mut it = self.cells.iter().map(|&c| self.grid.cell_aabb(c));
        let first = it.next()?;
        Some(it.fold(first, |acc, b| Aabb::new(acc.lo.min(b.lo), acc.hi.max(b.hi))))
    }
}

/// Uniform grid of `shape[0] × … × shape[n−1]` cubic cells of side `step`,
/// lower corner `origin`. Cells are indexed row-major (first axis slowest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: Point,
    pub step: f64,
    #[serde(rename = "extent")]
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn new(origin: Point, step: f64, shape: Vec<usize>) -> Result<Self> {
        if shape.len() != origin.dim() {
            return Err(Error::DimensionMismatch { expected: origin.dim(), found: shape.len() });
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("grid step must be positive, got {step}")));
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::invalid("grid extent must be positive along every axis"));
        }
        Ok(Self { origin, step, shape })
    }

    /// Grid covering the cube `window` with `cells_per_axis` cells per axis.
    pub fn over_cube(window: &Cube, cells_per_axis: usize) -> Result<Self> {
        Self::new(window.lo(), window.side() / cells_per_axis as f64, vec![cells_per_axis; window.dim()])
    }

    pub fn dim(&self) -> usize {
        self.origin.dim()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.step.powi(self.dim() as i32)
    }

    pub fn window(&self) -> Aabb {
        let mut hi = self.origin;
        for i in 0..self.dim() {
            hi = hi.with_coord(i, self.origin[i] + self.step * self.shape[i] as f64);
        }
        Aabb::new(self.origin, hi)
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn multi(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for axis in (0..self.dim()).rev() {
            m[axis] = flat % self.shape[axis];
            flat /= self.shape[axis];
        }
        m
    }

    pub fn cell_lo(&self, flat: usize) -> Point {
        let m = self.multi(flat);
        let mut p = self.origin;
        for i in 0..self.dim() {
            p = p.with_coord(i, self.origin[i] + self.step * m[i] as f64);
        }
        p
    }

    pub fn cell_aabb(&self, flat: usize) -> Aabb {
        let lo = self.cell_lo(flat);
        Aabb::new(lo, lo + Point::splat(self.dim(), self.step))
    }

    pub fn cell_cube(&self, flat: usize) -> Cube {
        Cube { center: self.cell_center(flat), halfside: self.step / 2.0 }
    }

    pub fn cell_center(&self, flat: usize) -> Point {
        self.cell_lo(flat) + Point::splat(self.dim(), self.step / 2.0)
    }

    /// Index of the cell containing `p`, if inside the window.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let mut m = [0usize; MAX_DIM];
        for i in 0..self.dim() {
            let k = ((p[i] - self.origin[i]) / self.step).floor();
            if k < 0.0 || k >= self.shape[i] as f64 {
                return None;
            }
            m[i] = k as usize;
        }
        Some(self.flat(&m[..self.dim()]))
    }

    /// True if `p` lies on a face shared by two cells (or on the window boundary).
    pub fn on_cell_boundary(&self, p: &Point) -> bool {
        (0..self.dim()).any(|i| ((p[i] - self.origin[i]) / self.step).fract() == 0.0)
    }

    /// Cells overlapping `[lo, hi)` along `axis`, clipped to the window, as a
    /// half-open index range.
    pub fn axis_range(&self, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
        let a = ((lo - self.origin[axis]) / self.step).floor().max(0.0);
        let b = ((hi - self.origin[axis]) / self.step).ceil().min(self.shape[axis] as f64);
        if b <= a {
            (0, 0)
        } else {
            (a as usize, b as usize)
        }
    }

    pub fn for_each_in_ranges(&self, ranges: &[(usize, usize)], mut f: impl FnMut(usize)) {
        let n = self.dim();
        if ranges.iter().any(|(a, b)| b <= a) {
            return;
        }
        let mut m = [0usize; MAX_DIM];
        for i in 0..n {
            m[i] = ranges[i].0;
        }
        loop {
            f(self.flat(&m[..n]));
            let mut axis = n;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                m[axis] += 1;
                if m[axis] < ranges[axis].1 {
                    break;
                }
                m[axis] = ranges[axis].0;
            }
        }
    }

    /// Cells overlapping the box (clipped to the window).
    pub fn cells_in(&self, b: &Aabb) -> Vec<usize> {
        let ranges: Vec<_> = (0..self.dim()).map(|i| self.axis_range(i, b.lo[i], b.hi[i])).collect();
        let mut out = Vec::new();
        self.for_each_in_ranges(&ranges, |c| out.push(c));
        out
    }

    /// Dyadic alignment: power-of-two step and origin a multiple of the step.
    pub fn is_dyadic_aligned(&self) -> bool {
        let (m, _e) = frexp(self.step);
        m == 0.5 && (0..self.dim()).all(|i| (self.origin[i] / self.step).fract() == 0.0)
    }
}

fn frexp(x: f64) -> (f64, i32) {
    if x == 0.0 {
        return (0.0, 0);
    }
    let e = x.abs().log2().floor() as i32 + 1;
    let mut m = x / 2f64.powi(e);
    let mut e = e;
    // log2 rounding can be off by one near powers of two
    if m.abs() >= 1.0 {
        m /= 2.0;
        e += 1;
    } else if m.abs() < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

/// `[k·side, (k+1)·side)` per axis with `side = 2^level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DyadicCube {
    pub level: i32,
    pub index: [i64; MAX_DIM],
    pub dim: usize,
}

impl DyadicCube {
    pub fn side(&self) -> f64 {
        2f64.powi(self.level)
    }

    pub fn cube(&self) -> Cube {
        let side = self.side();
        let lo: Vec<f64> = self.index[..self.dim].iter().map(|&k| k as f64 * side).collect();
        Cube::from_corner(Point::from_slice(&lo), side).expect("positive side")
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim as i32)
    }

    fn parent(&self) -> DyadicCube {
        let mut index = self.index;
        for k in index.iter_mut().take(self.dim) {
            *k = k.div_euclid(2);
        }
        DyadicCube { level: self.level + 1, index, dim: self.dim }
    }
}

/// Splits a finite union of grid cells into maximal disjoint dyadic cubes.
pub fn dyadic_decompose(set: &GridSet) -> Result<Vec<DyadicCube>> {
    let grid = &set.grid;
    if !grid.is_dyadic_aligned() {
        return Err(Error::NotGridAligned(format!(
            "grid with origin {} and step {} is not dyadic",
            grid.origin, grid.step
        )));
    }
    let n = grid.dim();
    let (_, e) = frexp(grid.step);
    let level0 = e - 1;
    let mut current: BTreeSet<DyadicCube> = set
        .cells
        .iter()
        .map(|&c| {
            let m = grid.multi(c);
            let mut index = [0i64; MAX_DIM];
            for i in 0..n {
                index[i] = (grid.origin[i] / grid.step) as i64 + m[i] as i64;
            }
            DyadicCube { level: level0, index, dim: n }
        })
        .collect();
    let mut done = Vec::new();
    let children = 1usize << n;
    while !current.is_empty() {
        let mut by_parent: std::collections::BTreeMap<DyadicCube, Vec<DyadicCube>> = Default::default();
        for c in &current {
            by_parent.entry(c.parent()).or_default().push(*c);
        }
        let mut next = BTreeSet::new();
        for (parent, kids) in by_parent {
            if kids.len() == children {
                next.insert(parent);
            } else {
                done.extend(kids);
            }
        }
        current = next;
    }
    done.sort();
    Ok(done)
}

/// Any of the geometric regions appearing in the arguments.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    All(usize),
    Box(Aabb),
    Cube(Cube),
    Ball(Ball),
    Cone(Cone),
    Annulus(Annulus),
    Grid(GridSet),
    Intersection(Box<Region>, Box<Region>),
}

/// Outcome of testing a box against a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxClass {
    Inside,
    Outside,
    Partial,
}

impl Region {
    pub fn intersect(self, other: Region) -> Region {
        Region::Intersection(Box::new(self), Box::new(other))
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::All(n) => *n,
            Region::Box(b) => b.dim(),
            Region::Cube(c) => c.dim(),
            Region::Ball(b) => b.dim(),
            Region::Cone(c) => c.dim(),
            Region::Annulus(a) => a.dim(),
            Region::Grid(g) => g.grid.dim(),
            Region::Intersection(a, _) => a.dim(),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::All(_) => true,
            Region::Box(b) => b.contains(p),
            Region::Cube(c) => c.contains(p),
            Region::Ball(b) => b.contains(p),
            Region::Cone(c) => c.contains(p),
            Region::Annulus(a) => a.contains(p),
            Region::Grid(g) => g.contains(p),
            Region::Intersection(a, b) => a.contains(p) && b.contains(p),
        }
    }

    /// Bounding box, `None` when unbounded.
    pub fn aabb(&self) -> Option<Aabb> {
        match self {
            Region::All(_) => None,
            Region::Box(b) => Some(*b),
            Region::Cube(c) => Some(c.aabb()),
            Region::Ball(b) => Some(b.aabb()),
            Region::Cone(c) => c.aabb(),
            Region::Annulus(a) => Some(a.aabb()),
            Region::Grid(g) => g.aabb(),
            Region::Intersection(a, b) => match (a.aabb(), b.aabb()) {
                (Some(x), Some(y)) => Some(x.intersect(&y)),
                (Some(x), None) | (None, Some(x)) => Some(x),
                (None, None) => None,
            },
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.aabb().is_some()
    }

    /// Conservative classification of a box; `Partial` is always safe.
    pub fn classify(&self, b: &Aabb) -> BoxClass {
        match self {
            Region::All(_) => BoxClass::Inside,
            Region::Box(r) => classify_box_in_box(r, b),
            Region::Cube(c) => classify_box_in_box(&c.aabb(), b),
            Region::Ball(ball) => {
                if b.nearest_distance(&ball.center) >= ball.radius {
                    BoxClass::Outside
                } else if b.farthest_distance(&ball.center) <= ball.radius {
                    BoxClass::Inside
                } else {
                    BoxClass::Partial
                }
            }
            Region::Annulus(a) => {
                let near = b.nearest_distance(&a.center);
                let far = b.farthest_distance(&a.center);
                if near >= a.outer || far < a.inner {
                    BoxClass::Outside
                } else if far <= a.outer && near >= a.inner {
                    BoxClass::Inside
                } else {
                    BoxClass::Partial
                }
            }
            Region::Cone(c) => {
                if c.misses_ball(&b.center(), b.half_diagonal()) {
                    BoxClass::Outside
                } else if b.corners().all(|p| c.min_gap(&p, 0.0) <= 0.0) {
                    BoxClass::Inside
                } else {
                    BoxClass::Partial
                }
            }
            Region::Grid(g) => {
                let cells = g.grid.cells_in(b);
                let inside = cells.iter().filter(|c| g.cells.contains(c)).count();
                if inside == 0 {
                    BoxClass::Outside
                } else if inside == cells.len() && g.grid.window().contains_box(b) {
                    BoxClass::Inside
                } else {
                    BoxClass::Partial
                }
            }
            Region::Intersection(x, y) => match (x.classify(b), y.classify(b)) {
                (BoxClass::Outside, _) | (_, BoxClass::Outside) => BoxClass::Outside,
                (BoxClass::Inside, BoxClass::Inside) => BoxClass::Inside,
                _ => BoxClass::Partial,
            },
        }
    }

    /// Exact decomposition of a one-dimensional region into disjoint
    /// intervals `[lo, hi)` (endpoint openness is ignored; it does not affect
    /// Lebesgue measure). Ends may be infinite.
    pub fn intervals_1d(&self) -> Vec<(f64, f64)> {
        assert_eq!(self.dim(), 1, "intervals_1d requires a one-dimensional region");
        let mut out = match self {
            Region::All(_) => vec![(f64::NEG_INFINITY, f64::INFINITY)],
            Region::Box(b) => vec![(b.lo[0], b.hi[0])],
            Region::Cube(c) => vec![(c.lo()[0], c.hi()[0])],
            Region::Ball(b) => vec![(b.center[0] - b.radius, b.center[0] + b.radius)],
            Region::Annulus(a) => {
                let c = a.center[0];
                if a.inner == 0.0 {
                    vec![(c - a.outer, c + a.outer)]
                } else {
                    vec![(c - a.outer, c - a.inner), (c + a.inner, c + a.outer)]
                }
            }
            Region::Cone(cone) => {
                let y = cone.apex[0];
                let u = cone.direction.vector()[0];
                let near = (cone.t - 1.0) * cone.rmin;
                let far = cone.rmax.map_or(f64::INFINITY, |s| (cone.t + 1.0) * s);
                if u > 0.0 {
                    vec![(y + near, y + far)]
                } else {
                    vec![(y - far, y - near)]
                }
            }
            Region::Grid(g) => {
                let mut v: Vec<(f64, f64)> = g
                    .cells
                    .iter()
                    .map(|&c| {
                        let b = g.grid.cell_aabb(c);
                        (b.lo[0], b.hi[0])
                    })
                    .collect();
                merge_intervals(&mut v);
                v
            }
            Region::Intersection(a, b) => intersect_intervals(&a.intervals_1d(), &b.intervals_1d()),
        };
        out.retain(|(a, b)| b > a);
        out
    }
}

fn classify_box_in_box(region: &Aabb, b: &Aabb) -> BoxClass {
    let inter = region.intersect(b);
    if inter.is_empty() {
        BoxClass::Outside
    } else if region.contains_box(b) {
        BoxClass::Inside
    } else {
        BoxClass::Partial
    }
}

fn merge_intervals(v: &mut Vec<(f64, f64)>) {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for &(a, b) in v.iter() {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    *v = out;
}

fn intersect_intervals(x: &[(f64, f64)], y: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a0, a1) in x {
        for &(b0, b1) in y {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    merge_intervals(&mut out);
    out
}

/// The separation parameter of the necessity argument together with its
/// representation `t = N·C2/√n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub t: f64,
    pub c2: f64,
    /// The integer `N` of the representation `t = N·C2/√n`.
    pub multiplier: u64,
    pub dim: usize,
}

impl SeparationConfig {
    /// Left-hand side of `2·C0·(1 + 2^{n+δ})·t^{−δ} ≤ a`.
    pub fn perturbation_budget(c0: f64, delta: f64, n: usize, t: f64) -> f64 {
        2.0 * c0 * (1.0 + 2f64.powf(n as f64 + delta)) * t.powf(-delta)
    }

    pub fn separation_length(&self, r: f64) -> f64 {
        self.t * r * (self.dim as f64).sqrt()
    }
}

/// Smallest `t ≥ 4` with `2·C0·(1+2^{n+δ})·t^{−δ} ≤ a` that admits a
/// representation `t = N·C2/√n`, `C2 ∈ [1/√n, 1]`, `N` integer (smallest `N`).
pub fn choose_separation(c0: f64, delta: f64, a: f64, n: usize) -> Result<SeparationConfig> {
    check_dim(n)?;
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::invalid(format!("C0 must be positive, got {c0}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("δ must lie in (0, 1], got {delta}")));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("a must be positive, got {a}")));
    }
    let rn = (n as f64).sqrt();
    let required = (2.0 * c0 * (1.0 + 2f64.powf(n as f64 + delta)) / a).powf(1.0 / delta);
    let holds = |t: f64| SeparationConfig::perturbation_budget(c0, delta, n, t) <= a * (1.0 + 1e-12);
    let mut t = required.max(4.0);
    if n == 1 {
        // C2 is forced to 1, so t must be an integer.
        let mut k = t.round();
        if k < t || !holds(k) {
            k = t.ceil();
        }
        while !holds(k) {
            k += 1.0;
        }
        t = k;
        return Ok(SeparationConfig { t, c2: 1.0, multiplier: t as u64, dim: n });
    }
    while !holds(t) {
        t = t * (1.0 + 1e-15) + f64::MIN_POSITIVE;
    }
    // N ∈ [t√n, t·n]; this interval has length > 1 for t ≥ 4, n ≥ 2.
    let mut multiplier = (t * rn).ceil();
    if multiplier / (t * rn) - 1.0 > 0.0 && (multiplier - 1.0) >= t * rn * (1.0 - 1e-15) {
        multiplier -= 1.0;
    }
    let c2 = (t * rn / multiplier).min(1.0);
    Ok(SeparationConfig { t, c2, multiplier: multiplier as u64, dim: n })
}

/// The cube `Q(y0 + t·r·√n·u0, r)` separated from `base = Q(y0, r)`.
pub fn separated_pair(base: &Cube, direction: &Direction, config: &SeparationConfig) -> Result<Cube> {
    if base.dim() != direction.dim() || base.dim() != config.dim {
        return Err(Error::DimensionMismatch { expected: base.dim(), found: direction.dim() });
    }
    let shift = direction.vector() * config.separation_length(base.halfside);
    Ok(base.translate(shift))
}

/// Chain of congruent adjacent cubes from `start` to `end`, centers equally
/// spaced on the segment joining them.
///
/// The number of steps is the least integer making each step no longer than
/// the adjacency limit `2r/|û|_∞`, where `û` is the unit step direction.
pub fn cube_chain(start: &Cube, end: &Cube, direction: &Direction) -> Result<Vec<Cube>> {
    if (start.halfside - end.halfside).abs() > ADJACENCY_TOL * start.halfside {
        return Err(Error::invalid("chain endpoints must be congruent cubes"));
    }
    let d = end.center - start.center;
    let len = d.norm();
    if len == 0.0 {
        return Ok(vec![*start]);
    }
    let u = direction.vector();
    let along = d.dot(&u);
    let off_axis = (d - u * along).norm();
    if off_axis > ADJACENCY_TOL * len {
        return Err(Error::InconsistentConfig(format!(
            "centers differ by {d:?}, which is not parallel to {u:?}"
        )));
    }
    let unit = d * (1.0 / len);
    let max_step = 2.0 * start.halfside / unit.norm_inf();
    let steps = ((len / max_step) * (1.0 - ADJACENCY_TOL)).ceil().max(1.0) as usize;
    let chain: Vec<Cube> = (0..=steps)
        .map(|k| {
            let c = if k == steps { end.center } else { start.center + d * (k as f64 / steps as f64) };
            Cube { center: c, halfside: start.halfside }
        })
        .collect();
    if let Some(w) = chain.windows(2).find(|w| !w[0].is_adjacent(&w[1])) {
        return Err(Error::InconsistentConfig(format!("cubes {} and {} are not adjacent", w[0], w[1])));
    }
    Ok(chain)
}

/// `A_k`, the ball covering it, and the generating ball of `C_r` used in the
/// doubling transfer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusCover {
    pub k: u32,
    pub annulus: Annulus,
    pub center: Point,
    pub cover: Ball,
    pub inner: Ball,
}

pub fn annulus_cover(y0: Point, direction: &Direction, t: f64, r: f64, k: u32) -> Result<AnnulusCover> {
    let n = y0.dim();
    let rn = (n as f64).sqrt();
    let base = 2f64.powi(k as i32) * t * r * rn;
    let annulus = Annulus::new(y0, base, 2.0 * base)?;
    let scale = 2f64.powi(k as i32 + 2);
    let center = y0 + direction.vector() * (0.375 * scale * t * r * rn);
    let cover = Ball::new(center, scale * t * r * rn)?;
    let inner = Ball::new(center, 0.375 * scale * r * rn)?;
    Ok(AnnulusCover { k, annulus, center, cover, inner })
}

/// The sets `A_j = (C_0 ∩ B_j) ∖ B_{j+1}`, `B_j = B(y0, 2^{−j})`, shrinking
/// nicely to the apex with constant ratio `|A_j| = α·|B_j|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShrinkingFamily {
    pub anchor: Point,
    pub cone: Cone,
    pub alpha: f64,
}

impl ShrinkingFamily {
    pub fn radius(&self, j: i32) -> f64 {
        2f64.powi(-j)
    }

    pub fn ball(&self, j: i32) -> Ball {
        Ball { center: self.anchor, radius: self.radius(j) }
    }

    pub fn set(&self, j: i32) -> Region {
        let shell = Annulus { center: self.anchor, inner: self.radius(j + 1), outer: self.radius(j) };
        Region::Cone(self.cone).intersect(Region::Annulus(shell))
    }

    pub fn set_volume(&self, j: i32) -> f64 {
        self.alpha * self.ball(j).volume()
    }
}

pub fn shrinking_cone_family(y0: Point, direction: &Direction, t: f64) -> Result<ShrinkingFamily> {
    let cone = Cone::new(y0, *direction, t, 0.0, None)?;
    let n = y0.dim();
    let theta = cone.half_angle();
    let sphere_fraction = match n {
        1 => 0.5,
        2 => theta / std::f64::consts::PI,
        3 => (1.0 - theta.cos()) / 2.0,
        _ => unreachable!(),
    };
    let alpha = sphere_fraction * (1.0 - 2f64.powi(-(n as i32)));
    Ok(ShrinkingFamily { anchor: y0, cone, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(c: &[f64]) -> Point {
        Point::from_slice(c)
    }

    #[test]
    fn separation_hilbert_constants() {
        let cfg = choose_separation(2.0, 1.0, 1.0, 1).unwrap();
        assert_eq!(cfg.t, 20.0);
        assert_eq!(cfg.multiplier, 20);
        assert_eq!(cfg.c2, 1.0);
    }

    #[test]
    fn separation_floor_binds_for_tiny_c0() {
        let cfg = choose_separation(1e-9, 1.0, 1.0, 1).unwrap();
        assert_eq!(cfg.t, 4.0);
        assert_eq!(cfg.multiplier, 4);
    }

    #[test]
    fn separation_in_two_dimensions_matches_brute_force() {
        let cfg = choose_separation(2.0, 1.0, 1.0, 2).unwrap();
        // brute force: first N whose admissible t-range reaches the requirement
        let rn = 2f64.sqrt();
        let required = 36.0;
        let mut n_star = 0u64;
        for n in 1u64.. {
            let t_hi = n as f64 / rn; // C2 = 1
            if t_hi >= required {
                n_star = n;
                break;
            }
        }
        assert_eq!(cfg.multiplier, n_star);
        assert!((cfg.t - required).abs() < 1e-12);
        let c2 = cfg.t * rn / cfg.multiplier as f64;
        assert!((cfg.c2 - c2).abs() < 1e-15);
        assert!(cfg.c2 >= 1.0 / rn && cfg.c2 <= 1.0);
        assert!((cfg.multiplier as f64 * cfg.c2 / rn - cfg.t).abs() < 1e-9);
    }

    #[test]
    fn separation_rejects_bad_inputs() {
        assert!(choose_separation(0.0, 1.0, 1.0, 1).is_err());
        assert!(choose_separation(1.0, 1.5, 1.0, 1).is_err());
        assert!(choose_separation(1.0, 1.0, 1.0, 4).is_err());
    }

    #[test]
    fn separated_pairs() {
        let cfg = choose_separation(2.0, 1.0, 1.0, 1).unwrap();
        let q = Cube::new(p(&[0.0]), 1.0).unwrap();
        let right = separated_pair(&q, &Direction::axis(1, 0), &cfg).unwrap();
        assert_eq!(right.center, p(&[20.0]));
        let left = separated_pair(&q, &Direction::axis(1, 0).reversed(), &cfg).unwrap();
        assert_eq!(left.center, p(&[-20.0]));

        let cfg2 = choose_separation(2.0, 1.0, 1.0, 2).unwrap();
        let q2 = Cube::new(p(&[0.0, 0.0]), 1.0).unwrap();
        let up = separated_pair(&q2, &Direction::axis(2, 1), &cfg2).unwrap();
        assert_eq!(up.center[0], 0.0);
        assert!((up.center[1] - 36.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn separated_distances_lie_in_expected_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, c0) in [(1usize, 2.0), (2, 6.6), (3, 15.4)] {
            let cfg = choose_separation(c0, 1.0, 1.0, n).unwrap();
            let r = 0.3;
            let base = Cube::new(Point::zero(n), r).unwrap();
            let far = separated_pair(&base, &Direction::axis(n, n - 1), &cfg).unwrap();
            let scale = cfg.separation_length(r);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..n).map(|i| far.center[i] + rng.gen_range(-r..r)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-r..r)).collect();
                let d = p(&x).dist(&p(&y));
                assert!(d > scale / 2.0 && d < 2.0 * scale);
            }
        }
    }

    #[test]
    fn chain_in_one_dimension() {
        let a = Cube::new(p(&[0.0]), 1.0).unwrap();
        let b = Cube::new(p(&[20.0]), 1.0).unwrap();
        let chain = cube_chain(&a, &b, &Direction::axis(1, 0)).unwrap();
        let centers: Vec<f64> = chain.iter().map(|c| c.center[0]).collect();
        let expected: Vec<f64> = (0..=10).map(|k| 2.0 * k as f64).collect();
        assert_eq!(centers, expected);
        assert_eq!(cube_chain(&a, &a, &Direction::axis(1, 0)).unwrap(), vec![a]);
    }

    /// Adjacency oracle: closed congruent cubes share a boundary point iff
    /// their sup-norm center distance is at most one sidelength.
    fn adjacent_oracle(a: &Cube, b: &Cube) -> bool {
        (a.center - b.center).norm_inf() <= 2.0 * a.halfside * (1.0 + 1e-9)
    }

    #[test]
    fn chain_in_two_dimensions() {
        let a = Cube::new(p(&[0.0, 0.0]), 1.0).unwrap();
        let b = Cube::new(p(&[0.0, 36.0 * 2f64.sqrt()]), 1.0).unwrap();
        let chain = cube_chain(&a, &b, &Direction::axis(2, 1)).unwrap();
        assert_eq!(chain.first().unwrap(), &a);
        assert_eq!(chain.last().unwrap(), &b);
        let step = chain[1].center.dist(&chain[0].center);
        for w in chain.windows(2) {
            assert!(adjacent_oracle(&w[0], &w[1]));
            assert!((w[1].center.dist(&w[0].center) - step).abs() < 1e-9);
            assert_eq!(w[1].center[0], 0.0);
        }
        // 36√2 / 2 = 25.46 → 26 steps
        assert_eq!(chain.len(), 27);
    }

    #[test]
    fn chain_along_diagonal_direction() {
        let u = Direction::normalized(p(&[1.0, 1.0])).unwrap();
        let a = Cube::new(p(&[0.0, 0.0]), 0.5).unwrap();
        let b = a.translate(u.vector() * 10.0);
        let chain = cube_chain(&a, &b, &u).unwrap();
        for w in chain.windows(2) {
            assert!(adjacent_oracle(&w[0], &w[1]));
        }
        let bad = a.translate(p(&[3.0, 0.0]));
        assert!(matches!(cube_chain(&a, &bad, &u), Err(Error::InconsistentConfig(_))));
    }

    #[test]
    fn annulus_cover_example() {
        let c = annulus_cover(p(&[0.0]), &Direction::axis(1, 0), 20.0, 1.0, 0).unwrap();
        assert_eq!(c.annulus.inner, 20.0);
        assert_eq!(c.annulus.outer, 40.0);
        assert_eq!(c.center, p(&[30.0]));
        assert_eq!(c.cover.radius, 80.0);
        assert_eq!(c.inner.radius, 1.5);
        assert_eq!(Region::Annulus(c.annulus).intervals_1d(), vec![(-40.0, -20.0), (20.0, 40.0)]);
        let c1 = annulus_cover(p(&[0.0]), &Direction::axis(1, 0), 20.0, 1.0, 1).unwrap();
        assert_eq!(c1.annulus.inner, 2.0 * c.annulus.inner);
        assert_eq!(c1.cover.radius, 2.0 * c.cover.radius);
        assert_eq!(c1.inner.radius, 2.0 * c.inner.radius);
    }

    fn sample_annulus(rng: &mut ChaCha8Rng, a: &Annulus) -> Point {
        let n = a.dim();
        loop {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-a.outer..a.outer)).collect();
            let q = a.center + p(&v);
            if a.contains(&q) {
                return q;
            }
        }
    }

    fn sample_ball(rng: &mut ChaCha8Rng, b: &Ball) -> Point {
        let n = b.dim();
        loop {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-b.radius..b.radius)).collect();
            let q = b.center + p(&v);
            if b.contains(&q) {
                return q;
            }
        }
    }

    #[test]
    fn annulus_cover_inclusions_by_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=3 {
            let u = Direction::axis(n, 0);
            let y0 = Point::splat(n, 0.25);
            let t = 20.0;
            let r = 0.5;
            let cone = Cone::new(y0, u, t, r, None).unwrap();
            for k in 0..=6 {
                let c = annulus_cover(y0, &u, t, r, k).unwrap();
                for _ in 0..10_000 {
                    let x = sample_annulus(&mut rng, &c.annulus);
                    assert!(x.dist(&c.center) <= c.cover.radius);
                    let z = sample_ball(&mut rng, &c.inner);
                    assert!(cone.contains(&z), "inner ball point {z:?} not in cone");
                }
            }
        }
    }

    /// Union-of-balls oracle for cone membership.
    fn cone_oracle(c: &Cone, x: &Point, samples: usize) -> bool {
        let smax = c.rmax.unwrap_or(c.rmin + 1e3);
        (0..=samples).any(|i| {
            let s = c.rmin + (smax - c.rmin) * i as f64 / samples as f64;
            s > 0.0 && c.ball_at(s).unwrap().contains(x)
        })
    }

    #[test]
    fn cone_membership_matches_ball_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=3 {
            let u = Direction::normalized(Point::splat(n, 1.0)).unwrap();
            let cone = Cone::new(Point::zero(n), u, 4.0, 0.5, Some(2.0)).unwrap();
            let bb = cone.aabb().unwrap();
            let mut disagreements = 0;
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..n).map(|i| rng.gen_range(bb.lo[i]..bb.hi[i])).collect();
                let x = p(&x);
                if cone.contains(&x) != cone_oracle(&cone, &x, 4000) {
                    disagreements += 1;
                }
            }
            // the sampled oracle can only miss points within one sampling step of the boundary
            assert!(disagreements <= 5, "n={n}: {disagreements} disagreements");
        }
    }

    #[test]
    fn cone_in_one_dimension_is_interval() {
        let c = Cone::new(p(&[0.0]), Direction::axis(1, 0), 20.0, 1.0, None).unwrap();
        assert_eq!(Region::Cone(c).intervals_1d(), vec![(19.0, f64::INFINITY)]);
        assert!(c.contains(&p(&[19.5])));
        assert!(!c.contains(&p(&[18.5])));
        let c0 = Cone::new(p(&[1.0]), Direction::axis(1, 0).reversed(), 20.0, 0.0, None).unwrap();
        assert!(c0.contains(&p(&[0.999])));
        assert!(!c0.contains(&p(&[1.001])));
    }

    #[test]
    fn dyadic_decomposition_examples() {
        let grid = Grid::new(p(&[0.0]), 0.25, vec![8]).unwrap();
        let unit = GridSet::new(grid.clone(), 0..4).unwrap();
        let d = dyadic_decompose(&unit).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].cube(), Cube::new(p(&[0.5]), 0.5).unwrap());

        let three_quarters = GridSet::new(grid.clone(), 0..3).unwrap();
        let d = dyadic_decompose(&three_quarters).unwrap();
        let cubes: Vec<(f64, f64)> = d.iter().map(|c| (c.cube().lo()[0], c.cube().hi()[0])).collect();
        assert_eq!(cubes, vec![(0.5, 0.75), (0.0, 0.5)]);

        let empty = GridSet::new(grid, []).unwrap();
        assert!(dyadic_decompose(&empty).unwrap().is_empty());

        let skew = Grid::new(p(&[0.1]), 0.25, vec![4]).unwrap();
        assert!(matches!(dyadic_decompose(&GridSet::new(skew, 0..2).unwrap()), Err(Error::NotGridAligned(_))));
        let grid = Grid::new(p(&[0.0]), 0.25, vec![8]).unwrap();
        let off = Aabb::new(p(&[0.0]), p(&[0.3]));
        assert!(GridSet::from_boxes(grid, &[off]).is_err());
    }

    #[test]
    fn dyadic_decomposition_in_two_dimensions_is_a_partition() {
        let grid = Grid::new(p(&[-1.0, -1.0]), 0.125, vec![16, 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let cells: Vec<usize> = (0..grid.len()).filter(|_| rng.gen_bool(0.6)).collect();
            let set = GridSet::new(grid.clone(), cells.clone()).unwrap();
            let d = dyadic_decompose(&set).unwrap();
            let total: f64 = d.iter().map(|c| c.volume()).sum();
            assert_eq!(total, set.volume());
            for &cell in &cells {
                let center = grid.cell_center(cell);
                assert_eq!(d.iter().filter(|c| c.cube().contains(&center)).count(), 1);
            }
        }
    }

    #[test]
    fn shrinking_family_in_one_dimension() {
        let fam = shrinking_cone_family(p(&[0.0]), &Direction::axis(1, 0), 20.0).unwrap();
        assert_eq!(fam.alpha, 0.25);
        for j in 0..5 {
            let iv = fam.set(j).intervals_1d();
            let len: f64 = iv.iter().map(|(a, b)| b - a).sum();
            assert_eq!(len / (2.0 * fam.radius(j)), 0.25);
            let next = fam.set(j + 1).intervals_1d();
            assert!(next.iter().all(|(_, b)| *b <= iv[0].0));
        }
    }

    #[test]
    fn grid_indexing_round_trips() {
        let grid = Grid::new(p(&[-1.0, 0.0, 2.0]), 0.5, vec![3, 4, 5]).unwrap();
        for c in 0..grid.len() {
            let m = grid.multi(c);
            assert_eq!(grid.flat(&m[..3]), c);
            assert_eq!(grid.locate(&grid.cell_center(c)), Some(c));
        }
        assert_eq!(grid.locate(&p(&[-1.01, 0.0, 2.0])), None);
    }
}
