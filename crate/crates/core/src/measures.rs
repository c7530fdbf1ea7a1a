//! Discrete positive measures: finitely many atoms plus a piecewise-constant
//! density on a grid window and a constant tail outside it.
//!
//! Density cells may carry the value `+∞` to model `∞·χ_E dx`; such cells
//! belong to the singular part and obey `∞·0 = 0`.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, BoxClass, Cube, Direction, Grid, Point, Region, ShrinkingFamily, MAX_DIM};

/// A point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Point, f64)", into = "(Point, f64)")]
pub struct Atom {
    pub point: Point,
    pub mass: f64,
}

impl From<(Point, f64)> for Atom {
    fn from((point, mass): (Point, f64)) -> Self {
        Atom { point, mass }
    }
}

impl From<Atom> for (Point, f64) {
    fn from(a: Atom) -> Self {
        (a.point, a.mass)
    }
}

/// Piecewise-constant density on a grid, with summed-area tables for O(1)
/// box sums.
#[derive(Clone)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
    prefix: Vec<f64>,
    inf_prefix: Vec<u32>,
    pshape: [usize; MAX_DIM],
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density").field("grid", &self.grid).field("cells", &self.values.len()).finish()
    }
}

impl PartialEq for Density {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl Density {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!("grid has {} cells but {} values were given", grid.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v < 0.0 || **v == f64::NEG_INFINITY) {
            return Err(Error::invalid(format!("density values must be nonnegative, got {v}")));
        }
        let n = grid.dim();
        let mut pshape = [1usize; MAX_DIM];
        for i in 0..n {
            pshape[i] = grid.shape[i] + 1;
        }
        let plen: usize = pshape[..n].iter().product();
        let mut prefix = vec![0.0; plen];
        let mut inf_prefix = vec![0u32; plen];
        let pflat = |m: &[usize]| -> usize { (0..n).fold(0, |acc, i| acc * pshape[i] + m[i]) };
        for c in 0..grid.len() {
            let m = grid.multi(c);
            let mut pm = [0usize; MAX_DIM];
            for i in 0..n {
                pm[i] = m[i] + 1;
            }
            let v = values[c];
            let idx = pflat(&pm[..n]);
            if v.is_infinite() {
                inf_prefix[idx] = 1;
            } else {
                prefix[idx] = v;
            }
        }
        // cumulative sums along each axis in turn
        for axis in 0..n {
            let stride: usize = pshape[axis + 1..n].iter().product();
            for idx in 0..plen {
                let k = (idx / stride) % pshape[axis];
                if k > 0 {
                    prefix[idx] += prefix[idx - stride];
                    inf_prefix[idx] += inf_prefix[idx - stride];
                }
            }
        }
        Ok(Self { grid, values, prefix, inf_prefix, pshape })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|c| f(&grid.cell_center(c))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    fn pflat(&self, m: &[usize]) -> usize {
        (0..self.grid.dim()).fold(0, |acc, i| acc * self.pshape[i] + m[i])
    }

    /// Sum of finite values and count of infinite cells over the half-open
    /// index box `ranges`.
    pub fn box_sum(&self, ranges: &[(usize, usize)]) -> (f64, u32) {
        let n = self.grid.dim();
        if ranges.iter().any(|(a, b)| b <= a) {
            return (0.0, 0);
        }
        let mut s = 0.0;
        let mut c: i64 = 0;
        for mask in 0..1usize << n {
            let mut m = [0usize; MAX_DIM];
            let mut sign = 1.0;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    m[i] = ranges[i].0;
                    sign = -sign;
                } else {
                    m[i] = ranges[i].1;
                }
            }
            let idx = self.pflat(&m[..n]);
            s += sign * self.prefix[idx];
            c += sign as i64 * self.inf_prefix[idx] as i64;
        }
        (s.max(0.0), c as u32)
    }

    /// Per-axis decomposition of `[a, b)` into (cell range, overlap fraction).
    fn axis_segments(&self, axis: usize, a: f64, b: f64) -> Vec<((usize, usize), f64)> {
        let g = &self.grid;
        let xa = ((a - g.origin[axis]) / g.step).max(0.0);
        let xb = ((b - g.origin[axis]) / g.step).min(g.shape[axis] as f64);
        if xb <= xa {
            return Vec::new();
        }
        let i0 = xa.floor() as usize;
        let i1 = (xb.ceil() as usize).min(g.shape[axis]);
        if i1 <= i0 + 1 {
            return vec![((i0, i0 + 1), xb - xa)];
        }
        let mut out = Vec::with_capacity(3);
        let first = (i0 + 1) as f64 - xa;
        if first > 0.0 {
            out.push(((i0, i0 + 1), first));
        }
        if i1 - 1 > i0 + 1 {
            out.push(((i0 + 1, i1 - 1), 1.0));
        }
        let last = xb - (i1 - 1) as f64;
        if last > 0.0 {
            out.push(((i1 - 1, i1), last));
        }
        out
    }

    /// `∫_B density dx` over the part of `B` inside the window.
    pub fn box_integral(&self, b: &Aabb) -> f64 {
        let n = self.grid.dim();
        let segs: Vec<_> = (0..n).map(|i| self.axis_segments(i, b.lo[i], b.hi[i])).collect();
        if segs.iter().any(|s| s.is_empty()) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut pick = [0usize; MAX_DIM];
        loop {
            let mut ranges = [(0usize, 0usize); MAX_DIM];
            let mut w = 1.0;
            for i in 0..n {
                let (r, f) = segs[i][pick[i]];
                ranges[i] = r;
                w *= f;
            }
            let (s, inf) = self.box_sum(&ranges[..n]);
            if inf > 0 && w > 0.0 {
                return f64::INFINITY;
            }
            total += w * s;
            let mut axis = n;
            loop {
                if axis == 0 {
                    return total * self.grid.cell_volume();
                }
                axis -= 1;
                pick[axis] += 1;
                if pick[axis] < segs[axis].len() {
                    break;
                }
                pick[axis] = 0;
            }
        }
    }

    /// Minimum cell value over the cells that overlap `b` with positive volume.
    pub fn min_on(&self, b: &Aabb) -> Option<f64> {
        let n = self.grid.dim();
        let ranges: Vec<_> = (0..n)
            .map(|i| {
                let s = self.axis_segments(i, b.lo[i], b.hi[i]);
                match (s.first(), s.last()) {
                    (Some(f), Some(l)) => (f.0 .0, l.0 .1),
                    _ => (0, 0),
                }
            })
            .collect();
        let mut best: Option<f64> = None;
        self.grid.for_each_in_ranges(&ranges, |c| {
            let v = self.values[c];
            best = Some(best.map_or(v, |m| m.min(v)));
        });
        best
    }

    pub fn dilate(&self, lambda: f64) -> Result<Density> {
        let grid = Grid::new(self.grid.origin * lambda, self.grid.step * lambda, self.grid.shape.clone())?;
        Density::new(grid, self.values.clone())
    }
}

/// Accuracy controls for measuring curved regions in dimension ≥ 2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionOptions {
    /// Stop once the mass of undecided boxes is below `rel_tol · value`.
    pub rel_tol: f64,
    pub max_depth: u32,
    /// Budget on undecided boxes carried to the next level.
    pub max_boxes: usize,
}

impl Default for RegionOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-9, max_depth: 40, max_boxes: 1 << 17 }
    }
}

/// A measured value with an upper bound on its absolute error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub value: f64,
    pub error: f64,
}

impl MeasureValue {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }
}

/// Atoms plus density plus tail.
#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    dim: usize,
    atoms: Vec<Atom>,
    density: Option<Density>,
    tail: f64,
    /// Marks the atomic part as the stand-in for a singular measure.
    pub singular_tag: bool,
}

impl Measure {
    pub fn new(dim: usize, atoms: Vec<Atom>, density: Option<Density>, tail: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(format!("dimension must be 1..=3, got {dim}")));
        }
        for a in &atoms {
            if a.point.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: a.point.dim() });
            }
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::invalid(format!("atom masses must be positive and finite, got {}", a.mass)));
            }
        }
        if let Some(d) = &density {
            if d.grid.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d.grid.dim() });
            }
        }
        if !(tail >= 0.0 && tail.is_finite()) {
            return Err(Error::invalid(format!("tail value must be finite and nonnegative, got {tail}")));
        }
        Ok(Self { dim, atoms, density, tail, singular_tag: true })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, Vec::new(), None, 0.0).expect("valid")
    }

    /// Lebesgue measure on all of R^n.
    pub fn lebesgue(dim: usize) -> Self {
        Self::new(dim, Vec::new(), None, 1.0).expect("valid")
    }

    /// Lebesgue measure restricted to the window of `grid`.
    pub fn lebesgue_on(grid: Grid) -> Result<Self> {
        let n = grid.len();
        Self::from_density(Density::new(grid, vec![1.0; n])?)
    }

    pub fn from_density(d: Density) -> Result<Self> {
        Self::new(d.grid.dim(), Vec::new(), Some(d), 0.0)
    }

    /// Density sampled at cell midpoints.
    pub fn sampled(grid: Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        Self::from_density(Density::from_fn(grid, f)?)
    }

    pub fn from_atoms(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        Self::new(dim, atoms, None, 0.0)
    }

    pub fn dirac(p: Point) -> Self {
        Self::from_atoms(p.dim(), vec![Atom { point: p, mass: 1.0 }]).expect("valid")
    }

    pub fn with_atoms(mut self, atoms: impl IntoIterator<Item = Atom>) -> Result<Self> {
        self.atoms.extend(atoms);
        Self::new(self.dim, self.atoms, self.density, self.tail)
    }

    pub fn with_tail(self, tail: f64) -> Result<Self> {
        Self::new(self.dim, self.atoms, self.density, tail)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.tail == 0.0 && self.density.as_ref().map_or(true, |d| d.values.iter().all(|v| *v == 0.0))
    }

    pub fn has_infinite_cells(&self) -> bool {
        self.density.as_ref().is_some_and(|d| d.values.iter().any(|v| v.is_infinite()))
    }

    /// Density value at `p`: the cell value inside the window, the tail outside.
    pub fn density_at(&self, p: &Point) -> f64 {
        match &self.density {
            Some(d) => match d.grid.locate(p) {
                Some(c) => d.values[c],
                None => self.tail,
            },
            None => self.tail,
        }
    }

    fn window(&self) -> Option<Aabb> {
        self.density.as_ref().map(|d| d.grid.window())
    }

    /// Absolutely continuous plus singular-cell mass of a bounded box.
    pub fn continuous_box_mass(&self, b: &Aabb) -> f64 {
        if b.is_empty() {
            return 0.0;
        }
        let inner = self.density.as_ref().map_or(0.0, |d| d.box_integral(b));
        if self.tail == 0.0 {
            return inner;
        }
        let inside = self.window().map_or(0.0, |w| w.intersect(b).volume());
        inner + self.tail * (b.volume() - inside).max(0.0)
    }

    fn atom_mass(&self, region: &Region) -> f64 {
        self.atoms.iter().filter(|a| region.contains(&a.point)).map(|a| a.mass).sum()
    }

    pub fn measure(&self, region: &Region) -> Result<f64> {
        Ok(self.measure_with_error(region, &RegionOptions::default())?.value)
    }

    pub fn measure_cube(&self, q: &Cube) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| q.contains(&a.point)).map(|a| a.mass).sum();
        atoms + self.continuous_box_mass(&q.aabb())
    }

    /// Measure of `region` with an error bound. Boxes, grid sets and all
    /// one-dimensional regions are exact; curved regions in higher dimension
    /// use conservative box subdivision.
    pub fn measure_with_error(&self, region: &Region, opts: &RegionOptions) -> Result<MeasureValue> {
        if region.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: region.dim() });
        }
        let atoms = self.atom_mass(region);
        let has_continuous = self.tail != 0.0 || self.density.is_some();
        if !has_continuous {
            return Ok(MeasureValue::exact(atoms));
        }
        let bbox = region.aabb().filter(|b| b.is_finite());
        if bbox.is_none() && self.tail != 0.0 {
            return Err(Error::Divergent(format!(
                "region is unbounded and the measure has tail density {} outside its window",
                self.tail
            )));
        }
        let start = match (bbox, self.window()) {
            (Some(b), Some(w)) if self.tail == 0.0 => b.intersect(&w),
            (Some(b), _) => b,
            (None, Some(w)) => w,
            (None, None) => unreachable!("no continuous part"),
        };
        if start.is_empty() {
            return Ok(MeasureValue::exact(atoms));
        }
        let cont = if self.dim == 1 {
            let mut s = 0.0;
            for (a, b) in region.intervals_1d() {
                let iv = Aabb::new(Point::from_slice(&[a.max(start.lo[0])]), Point::from_slice(&[b.min(start.hi[0])]));
                s += self.continuous_box_mass(&iv);
            }
            MeasureValue::exact(s)
        } else {
            match region {
                Region::Cube(q) => MeasureValue::exact(self.continuous_box_mass(&q.aabb())),
                Region::Box(b) => MeasureValue::exact(self.continuous_box_mass(b)),
                Region::Grid(g) => MeasureValue::exact(
                    g.cells.iter().map(|&c| self.continuous_box_mass(&g.grid.cell_aabb(c))).sum(),
                ),
                _ => subdivide(region, start, &|b| self.continuous_box_mass(b), opts),
            }
        };
        Ok(MeasureValue { value: atoms + cont.value, error: cont.error })
    }

    /// Lebesgue measure of `region ∩ window` (or of `region` when the tail is
    /// nonzero), computed with the same subdivision as [`Self::measure_with_error`].
    pub fn lebesgue_volume(region: &Region, opts: &RegionOptions) -> Result<MeasureValue> {
        Measure::lebesgue(region.dim()).measure_with_error(region, opts)
    }

    /// Exact measure in rational arithmetic (`None` = +∞) of a cube or grid
    /// set whose faces lie on the density grid.
    pub fn exact_measure(&self, region: &Region) -> Result<Option<BigRational>> {
        let boxes: Vec<Aabb> = match region {
            Region::Cube(q) => vec![q.aabb()],
            Region::Box(b) => vec![*b],
            Region::Grid(g) => g.cells.iter().map(|&c| g.grid.cell_aabb(c)).collect(),
            _ => return Err(Error::invalid("exact measures are available for cubes and grid sets only")),
        };
        let mut total = BigRational::zero();
        for a in &self.atoms {
            if region.contains(&a.point) {
                total += rational(a.mass);
            }
        }
        for b in &boxes {
            match self.exact_box_mass(b)? {
                Some(v) => total += v,
                None => return Ok(None),
            }
        }
        Ok(Some(total))
    }

    fn exact_box_mass(&self, b: &Aabb) -> Result<Option<BigRational>> {
        let mut total = BigRational::zero();
        let mut inside_vol = BigRational::zero();
        if let Some(d) = &self.density {
            let g = &d.grid;
            let n = g.dim();
            let clipped = b.intersect(&g.window());
            if !clipped.is_empty() {
                let mut ranges = Vec::with_capacity(n);
                for i in 0..n {
                    let lo = (clipped.lo[i] - g.origin[i]) / g.step;
                    let hi = (clipped.hi[i] - g.origin[i]) / g.step;
                    if lo.fract() != 0.0 || hi.fract() != 0.0 {
                        return Err(Error::NotGridAligned(format!("box {:?}..{:?} is not aligned to the density grid", b.lo, b.hi)));
                    }
                    ranges.push((lo as usize, hi as usize));
                }
                let cell_vol = rational(g.step).pow(n as i32);
                let mut sum = BigRational::zero();
                let mut infinite = false;
                let mut count = 0usize;
                g.for_each_in_ranges(&ranges, |c| {
                    let v = d.values[c];
                    if v.is_infinite() {
                        infinite = true;
                    } else if v != 0.0 {
                        sum += rational(v);
                    }
                    count += 1;
                });
                if infinite {
                    return Ok(None);
                }
                total += sum * &cell_vol;
                inside_vol = cell_vol * BigRational::from_integer(BigInt::from(count));
            }
        }
        if self.tail != 0.0 {
            let mut vol = BigRational::from_integer(BigInt::from(1));
            for i in 0..b.dim() {
                vol *= rational(b.hi[i]) - rational(b.lo[i]);
            }
            total += rational(self.tail) * (vol - inside_vol);
        }
        Ok(Some(total))
    }

    /// `x ↦ λx` push-forward, rescaled so that densities keep their values.
    pub fn dilate(&self, lambda: f64) -> Result<Measure> {
        let scale = lambda.powi(self.dim as i32);
        let atoms = self.atoms.iter().map(|a| Atom { point: a.point * lambda, mass: a.mass * scale }).collect();
        let density = self.density.as_ref().map(|d| d.dilate(lambda)).transpose()?;
        Measure::new(self.dim, atoms, density, self.tail)
    }

    /// Sum of two measures sharing a density grid (or with at most one density).
    pub fn add(&self, other: &Measure) -> Result<Measure> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let density = match (&self.density, &other.density) {
            (Some(a), Some(b)) => {
                if a.grid != b.grid {
                    return Err(Error::invalid("measures with different density grids cannot be added"));
                }
                Some(Density::new(a.grid.clone(), a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect())?)
            }
            (Some(a), None) => Some(a.clone()),
            (None, b) => b.clone(),
        };
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Measure::new(self.dim, atoms, density, self.tail + other.tail)
    }
}

/// Exact rational value of a finite float.
pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

pub fn rational_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Breadth-first box subdivision. Undecided leaves contribute their full
/// mass when their centre lies in the region; the error bound is the total
/// mass of undecided leaves.
pub(crate) fn subdivide(region: &Region, start: Aabb, mass: &(dyn Fn(&Aabb) -> f64 + Sync), opts: &RegionOptions) -> MeasureValue {
    let mut value = 0.0;
    let mut frontier = vec![start];
    let mut depth = 0;
    loop {
        let classified: Vec<(BoxClass, f64)> = if frontier.len() > 2048 {
            frontier
                .par_iter()
                .map(|b| {
                    let c = region.classify(b);
                    (c, if c == BoxClass::Outside { 0.0 } else { mass(b) })
                })
                .collect()
        } else {
            frontier
                .iter()
                .map(|b| {
                    let c = region.classify(b);
                    (c, if c == BoxClass::Outside { 0.0 } else { mass(b) })
                })
                .collect()
        };
        let mut partial = Vec::new();
        let mut partial_mass = 0.0;
        for (b, (c, m)) in frontier.iter().zip(classified) {
            match c {
                BoxClass::Inside => value += m,
                BoxClass::Outside => {}
                BoxClass::Partial => {
                    if m > 0.0 {
                        partial.push((*b, m));
                        partial_mass += m;
                    }
                }
            }
        }
        let children = 1usize << start.dim();
        let done = partial.is_empty()
            || partial_mass <= opts.rel_tol * value
            || depth >= opts.max_depth
            || partial.len() * children > opts.max_boxes;
        if done {
            for (b, m) in &partial {
                if region.contains(&b.center()) {
                    value += m;
                }
            }
            return MeasureValue { value, error: partial_mass };
        }
        frontier = partial.iter().flat_map(|(b, _)| b.split().collect::<Vec<_>>()).collect();
        depth += 1;
    }
}

/// Measure of a region; see [`Measure::measure_with_error`].
pub fn region_measure(m: &Measure, region: &Region) -> Result<f64> {
    m.measure(region)
}

/// Splits `m` into its singular part (atoms and infinite cells) and its
/// absolutely continuous part (finite density and tail).
pub fn lebesgue_decompose(m: &Measure) -> (Measure, Measure) {
    let singular_density = m.density.as_ref().and_then(|d| {
        if d.values.iter().any(|v| v.is_infinite()) {
            let vals = d.values.iter().map(|v| if v.is_infinite() { *v } else { 0.0 }).collect();
            Some(Density::new(d.grid.clone(), vals).expect("valid"))
        } else {
            None
        }
    });
    let ac_density = m.density.as_ref().map(|d| {
        let vals = d.values.iter().map(|v| if v.is_infinite() { 0.0 } else { *v }).collect();
        Density::new(d.grid.clone(), vals).expect("valid")
    });
    let mut singular = Measure::new(m.dim, m.atoms.clone(), singular_density, 0.0).expect("valid");
    singular.singular_tag = m.singular_tag;
    let ac = Measure::new(m.dim, Vec::new(), ac_density, m.tail).expect("valid");
    (singular, ac)
}

/// A finite family of cubes over which suprema are taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CubeFamily {
    /// Dyadic subcubes of `window` of generations `min_level..=max_level`.
    Dyadic {
        window: Cube,
        #[serde(default)]
        min_level: u32,
        max_level: u32,
    },
    /// Cubes inside `window` whose halfsides and centres are multiples of
    /// `halfside(window) / divisions`.
    Lattice { window: Cube, divisions: u32 },
    /// Seeded random cubes inside `window`.
    Random { window: Cube, count: usize, seed: u64 },
    Explicit { cubes: Vec<Cube> },
    Union { members: Vec<CubeFamily> },
}

impl CubeFamily {
    pub fn dyadic(window: Cube, max_level: u32) -> Self {
        CubeFamily::Dyadic { window, min_level: 0, max_level }
    }

    pub fn cubes(&self) -> Vec<Cube> {
        match self {
            CubeFamily::Dyadic { window, min_level, max_level } => {
                let n = window.dim();
                let lo = window.lo();
                let mut out = Vec::new();
                for level in *min_level..=*max_level {
                    let k = 1usize << level;
                    let side = window.side() / k as f64;
                    let count = k.pow(n as u32);
                    for idx in 0..count {
                        let mut corner = lo;
                        let mut rem = idx;
                        for axis in (0..n).rev() {
                            corner = corner.with_coord(axis, lo[axis] + side * (rem % k) as f64);
                            rem /= k;
                        }
                        out.push(Cube::from_corner(corner, side).expect("positive"));
                    }
                }
                out
            }
            CubeFamily::Lattice { window, divisions } => {
                let n = window.dim();
                let m = *divisions as i64;
                let unit = window.halfside / m as f64;
                let mut out = Vec::new();
                for k in 1..=m {
                    let h = unit * k as f64;
                    // centre offsets j with |j| + k ≤ m along each axis
                    let span = m - k;
                    let per_axis = (2 * span + 1) as usize;
                    let count = per_axis.pow(n as u32);
                    for idx in 0..count {
                        let mut c = window.center;
                        let mut rem = idx;
                        for axis in (0..n).rev() {
                            let j = (rem % per_axis) as i64 - span;
                            c = c.with_coord(axis, window.center[axis] + unit * j as f64);
                            rem /= per_axis;
                        }
                        out.push(Cube { center: c, halfside: h });
                    }
                }
                out
            }
            CubeFamily::Random { window, count, seed } => {
                let n = window.dim();
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| {
                        let h = window.halfside * 2f64.powf(-rng.gen_range(0.0..10.0));
                        let mut c = window.center;
                        for axis in 0..n {
                            let slack = window.halfside - h;
                            c = c.with_coord(axis, window.center[axis] + rng.gen_range(-slack..=slack));
                        }
                        Cube { center: c, halfside: h }
                    })
                    .collect()
            }
            CubeFamily::Explicit { cubes } => cubes.clone(),
            CubeFamily::Union { members } => members.iter().flat_map(|m| m.cubes()).collect(),
        }
    }

    /// The window every member lies in, if the family declares one.
    pub fn window(&self) -> Option<Cube> {
        match self {
            CubeFamily::Dyadic { window, .. } | CubeFamily::Lattice { window, .. } | CubeFamily::Random { window, .. } => {
                Some(*window)
            }
            CubeFamily::Explicit { .. } => None,
            CubeFamily::Union { members } => {
                let ws: Vec<Cube> = members.iter().filter_map(|m| m.window()).collect();
                let first = *ws.first()?;
                ws.iter().all(|w| *w == first).then_some(first)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CubeFamily::Dyadic { window, min_level, max_level } => format!("dyadic{{{window},levels={min_level}..{max_level}}}"),
            CubeFamily::Lattice { window, divisions } => format!("lattice{{{window},m={divisions}}}"),
            CubeFamily::Random { window, count, seed } => format!("random{{{window},n={count},seed={seed}}}"),
            CubeFamily::Explicit { cubes } => format!("explicit{{{} cubes}}", cubes.len()),
            CubeFamily::Union { members } => {
                let parts: Vec<String> = members.iter().map(|m| m.describe()).collect();
                parts.join("+")
            }
        }
    }
}

/// Constant of a doubling-type scan together with its extremal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub constant: f64,
    pub witness: Option<(Cube, Cube)>,
    pub family: String,
    pub evaluated: usize,
    /// Constant restricted to each halfside present in the family.
    pub per_scale: Vec<(f64, f64)>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some(num / den)
    } else if num > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

fn scan_pairs(m: &Measure, pairs: Vec<(Cube, Cube)>, family: String, both: bool) -> DoublingReport {
    let results: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|(q, big)| {
            let a = m.measure_cube(q);
            let b = m.measure_cube(big);
            let r1 = ratio(b, a);
            if both {
                match (r1, ratio(a, b)) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            } else {
                r1
            }
        })
        .collect();
    let mut constant = 1.0;
    let mut witness = None;
    let mut evaluated = 0;
    let mut per_scale: Vec<(f64, f64)> = Vec::new();
    for ((q, p), r) in pairs.iter().zip(&results) {
        let Some(r) = *r else { continue };
        evaluated += 1;
        if r > constant || witness.is_none() && r >= constant {
            constant = r.max(constant);
            witness = Some((*q, *p));
        }
        match per_scale.iter_mut().find(|(h, _)| *h == q.halfside) {
            Some(e) => e.1 = e.1.max(r),
            None => per_scale.push((q.halfside, r)),
        }
    }
    per_scale.sort_by(|a, b| a.0.total_cmp(&b.0));
    DoublingReport { constant, witness, family, evaluated, per_scale }
}

/// `sup μ(2Q)/μ(Q)` over the family.
pub fn doubling_constant(m: &Measure, family: &CubeFamily) -> DoublingReport {
    let pairs = family.cubes().into_iter().map(|q| (q, q.dilate(2.0))).collect();
    scan_pairs(m, pairs, family.describe(), false)
}

/// `sup max(μ(P)/μ(Q), μ(Q)/μ(P))` over adjacent congruent pairs
/// `P = Q + 2r·u0/|u0|_∞`, keeping pairs inside the family window.
pub fn directional_doubling_constant(m: &Measure, u0: &Direction, family: &CubeFamily) -> DoublingReport {
    let window = family.window();
    let u = u0.vector();
    let shift = u * (1.0 / u.norm_inf());
    let pairs = family
        .cubes()
        .into_iter()
        .filter_map(|q| {
            let p = q.translate(shift * q.side());
            match &window {
                Some(w) if !w.aabb().contains_box(&p.aabb()) => None,
                _ => Some((q, p)),
            }
        })
        .collect();
    scan_pairs(m, pairs, format!("{} along {:?}", family.describe(), u), true)
}

/// `μ(A_j)/|A_j|` for `j` in `levels`.
pub fn shrinking_density(m: &Measure, family: &ShrinkingFamily, levels: std::ops::Range<i32>) -> Result<Vec<f64>> {
    if let Some(d) = &m.density {
        if d.grid.window().contains(&family.anchor) && d.grid.on_cell_boundary(&family.anchor) {
            return Err(Error::invalid(format!("anchor {} lies on a cell boundary", family.anchor)));
        }
    }
    let opts = RegionOptions { rel_tol: 1e-12, ..RegionOptions::default() };
    levels
        .map(|j| {
            let set = family.set(j);
            let num = m.measure_with_error(&set, &opts)?.value;
            let den = if m.dim == 1 {
                family.set_volume(j)
            } else {
                // same subdivision for numerator and denominator so that a
                // constant density gives an exact ratio
                let start = family.ball(j).aabb();
                subdivide(&set, start, &|b: &Aabb| b.volume(), &opts).value
            };
            Ok(num / den)
        })
        .collect()
}

/// Essential infimum of the density over `q`: the least cell value among
/// cells meeting `q`, with the tail value for parts outside the window.
pub fn essinf_on(m: &Measure, q: &Cube) -> f64 {
    let b = q.aabb();
    let mut best = f64::INFINITY;
    match &m.density {
        Some(d) => {
            if let Some(v) = d.min_on(&b) {
                best = best.min(v);
            }
            if !d.grid.window().contains_box(&b) {
                best = best.min(m.tail);
            }
        }
        None => best = m.tail,
    }
    best
}

/// `essinf_{Q(x, 2^{-j})} v` for `j` in `levels`.
pub fn essinf_limit(m: &Measure, x: &Point, levels: std::ops::Range<i32>) -> Vec<f64> {
    levels.map(|j| essinf_on(m, &Cube { center: *x, halfside: 2f64.powi(-j) })).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CellJson {
    Value(f64),
    Tag(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MeasureJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default)]
    atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cells: Vec<CellJson>,
    #[serde(default)]
    tail: f64,
    #[serde(default = "default_true")]
    singular_tag: bool,
}

fn default_true() -> bool {
    true
}

impl Serialize for Measure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let cells = self
            .density
            .as_ref()
            .map(|d| {
                d.values
                    .iter()
                    .map(|v| if v.is_infinite() { CellJson::Tag("inf".into()) } else { CellJson::Value(*v) })
                    .collect()
            })
            .unwrap_or_default();
        MeasureJson {
            dim: Some(self.dim),
            atoms: self.atoms.clone(),
            grid: self.density.as_ref().map(|d| d.grid.clone()),
            cells,
            tail: self.tail,
            singular_tag: self.singular_tag,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = MeasureJson::deserialize(d)?;
        let dim = j
            .dim
            .or_else(|| j.grid.as_ref().map(|g| g.dim()))
            .or_else(|| j.atoms.first().map(|a| a.point.dim()))
            .ok_or_else(|| D::Error::custom("measure needs a \"dim\", a \"grid\" or at least one atom"))?;
        let density = match j.grid {
            Some(grid) => {
                let vals = j
                    .cells
                    .into_iter()
                    .map(|c| match c {
                        CellJson::Value(v) => Ok(v),
                        CellJson::Tag(t) if t == "inf" => Ok(f64::INFINITY),
                        CellJson::Tag(t) => Err(D::Error::custom(format!("unknown cell tag {t:?}, expected \"inf\""))),
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Some(Density::new(grid, vals).map_err(D::Error::custom)?)
            }
            None if !j.cells.is_empty() => return Err(D::Error::custom("\"cells\" given without a \"grid\"")),
            None => None,
        };
        let mut m = Measure::new(dim, j.atoms, density, j.tail).map_err(D::Error::custom)?;
        m.singular_tag = j.singular_tag;
        Ok(m)
    }
}
