//! Test functions, the averaging operators `A_Q`, `A_{Q,σ}` with their exact
//! norms, quadrature for `T` and `T_σ`, weak-type lower bounds, and the tail
//! integrals of the Poisson-type conditions.

use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{unit_ball_volume, unit_sphere_area, Aabb, Ball, BoxClass, Cone, Cube, Direction, Grid, Point, Region};
use crate::kernels::Kernel;
use crate::measures::{rational, Measure, MeasureValue, RegionOptions};
use crate::quadrature::{adaptive_simpson, radial_bracket};

/// Conjugate exponent; `p = 1` gives `+∞`.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// Nonnegative function, constant on the cells of `grid`, multiplied by the
/// indicator of `restrict` when present. Zero outside the grid window.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub grid: Grid,
    pub values: Vec<f64>,
    pub restrict: Option<Region>,
}

impl TestFunction {
    pub fn new(name: impl Into<String>, grid: Grid, values: Vec<f64>, restrict: Option<Region>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!("grid has {} cells but {} values were given", grid.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("test function values must be finite and nonnegative, got {v}")));
        }
        if let Some(r) = &restrict {
            if r.dim() != grid.dim() {
                return Err(Error::DimensionMismatch { expected: grid.dim(), found: r.dim() });
            }
        }
        Ok(Self { name: name.into(), grid, values, restrict })
    }

    pub fn from_fn(name: impl Into<String>, grid: Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|c| f(&grid.cell_center(c))).collect();
        Self::new(name, grid, values, None)
    }

    /// Indicator of a union of grid cells.
    pub fn indicator(name: impl Into<String>, grid: Grid, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut values = vec![0.0; grid.len()];
        for c in cells {
            *values.get_mut(c).ok_or_else(|| Error::invalid(format!("cell {c} outside grid")))? = 1.0;
        }
        Self::new(name, grid, values, None)
    }

    /// `χ_Q` represented on a single cell.
    pub fn cube_indicator(q: &Cube) -> Self {
        Self::constant_on(q, 1.0)
    }

    pub fn constant_on(q: &Cube, value: f64) -> Self {
        let grid = Grid::new(q.lo(), q.side(), vec![1; q.dim()]).expect("valid cube");
        Self::new(format!("{value}·χ_{q}"), grid, vec![value], None).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn value_at(&self, x: &Point) -> f64 {
        match self.grid.locate(x) {
            Some(c) if self.restrict.as_ref().map_or(true, |r| r.contains(x)) => self.values[c],
            _ => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn nonzero_cells(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v))
    }

    /// `m(cell ∩ restrict ∩ within)` for the continuous part of `m`
    /// (Lebesgue when `m` is `None`).
    fn piece_mass(&self, cell: usize, m: Option<&Measure>, within: Option<&Aabb>) -> Result<f64> {
        let mut b = self.grid.cell_aabb(cell);
        if let Some(w) = within {
            b = b.intersect(w);
            if b.is_empty() {
                return Ok(0.0);
            }
        }
        let mass = |bx: &Aabb| match m {
            Some(m) => m.continuous_box_mass(bx),
            None => bx.volume(),
        };
        match &self.restrict {
            None => Ok(mass(&b)),
            Some(r) => match r.classify(&b) {
                BoxClass::Inside => Ok(mass(&b)),
                BoxClass::Outside => Ok(0.0),
                BoxClass::Partial => {
                    let region = Region::Box(b).intersect(r.clone());
                    let cont = match m {
                        Some(m) => strip_atoms(m),
                        None => Measure::lebesgue(self.dim()),
                    };
                    Ok(cont.measure_with_error(&region, &RegionOptions::default())?.value)
                }
            },
        }
    }

    /// `∫ g(f) dm` over `within` (all of space when `None`), for `g(0) = 0`.
    pub fn integrate_with(&self, m: Option<&Measure>, within: Option<&Cube>, g: impl Fn(f64) -> f64) -> Result<f64> {
        let wbox = within.map(|q| q.aabb());
        let mut total = 0.0;
        for (c, v) in self.nonzero_cells() {
            let mass = self.piece_mass(c, m, wbox.as_ref())?;
            if mass == 0.0 {
                continue;
            }
            if mass.is_infinite() {
                return Err(Error::Divergent(format!("{} is positive on a cell of infinite density", self.name)));
            }
            total += g(v) * mass;
        }
        if let Some(m) = m {
            for a in m.atoms() {
                if within.map_or(true, |q| q.contains(&a.point)) {
                    let v = self.value_at(&a.point);
                    if v != 0.0 {
                        total += g(v) * a.mass;
                    }
                }
            }
        }
        Ok(total)
    }

    /// `‖f‖_{L^p(m)}`; Lebesgue when `m` is `None`.
    pub fn lp_norm(&self, m: Option<&Measure>, p: f64) -> Result<f64> {
        Ok(self.integrate_with(m, None, |v| v.powf(p))?.powf(1.0 / p))
    }
}

fn strip_atoms(m: &Measure) -> Measure {
    Measure::new(m.dim(), Vec::new(), m.density().cloned(), m.tail()).expect("valid")
}

/// `A_Q f = (1/|Q|)∫_Q f dx · χ_Q`.
pub fn avg_apply(q: &Cube, f: &TestFunction) -> Result<TestFunction> {
    let avg = f.integrate_with(None, Some(q), |v| v)? / q.volume();
    Ok(TestFunction::constant_on(q, avg))
}

/// `A_{Q,σ} f = (1/|Q|)∫_Q f dσ · χ_Q`.
pub fn avg_sigma_apply(q: &Cube, sigma: &Measure, f: &TestFunction) -> Result<TestFunction> {
    let avg = f.integrate_with(Some(sigma), Some(q), |v| v)? / q.volume();
    Ok(TestFunction::constant_on(q, avg))
}

/// `(1/|Q|)∫_Q f dσ` in rational arithmetic, for `f` and `σ` on grids that
/// `Q` is aligned with (`σ = None` means Lebesgue). `None` means `+∞`.
pub fn avg_sigma_exact(q: &Cube, sigma: Option<&Measure>, f: &TestFunction) -> Result<Option<BigRational>> {
    if f.restrict.is_some() {
        return Err(Error::invalid("exact averages need an unrestricted test function"));
    }
    let qb = q.aabb();
    let mut total = BigRational::zero();
    for (c, v) in f.nonzero_cells() {
        let piece = f.grid.cell_aabb(c).intersect(&qb);
        if piece.is_empty() {
            continue;
        }
        let mass = match sigma {
            Some(m) => strip_atoms(m).exact_measure(&Region::Box(piece))?,
            None => Some(box_volume_exact(&piece)),
        };
        match mass {
            Some(mv) => total += rational(v) * mv,
            None => return Ok(None),
        }
    }
    if let Some(m) = sigma {
        for a in m.atoms() {
            if q.contains(&a.point) {
                total += rational(f.value_at(&a.point)) * rational(a.mass);
            }
        }
    }
    Ok(Some(total / box_volume_exact(&qb)))
}

pub fn box_volume_exact(b: &Aabb) -> BigRational {
    let mut v = BigRational::one();
    for i in 0..b.dim() {
        v *= rational(b.hi[i]) - rational(b.lo[i]);
    }
    v
}

/// Weight-by-cell data of `Q`: overlap volumes and the density values of
/// `u` and `v` on the common refinement of their grids.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeCells {
    pub boxes: Vec<Aabb>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Splits `Q` into pieces on which both weights are constant.
pub fn cube_cells(u: &Measure, v: &Measure, q: &Cube) -> CubeCells {
    let qb = q.aabb();
    let mut cuts: Vec<Vec<f64>> = (0..q.dim()).map(|i| vec![qb.lo[i], qb.hi[i]]).collect();
    for m in [u, v] {
        if let Some(d) = m.density() {
            let g = d.grid();
            for (i, cut) in cuts.iter_mut().enumerate() {
                let (a, b) = g.axis_range(i, qb.lo[i], qb.hi[i]);
                for k in a..=b {
                    let x = g.origin[i] + g.step * k as f64;
                    if x > qb.lo[i] && x < qb.hi[i] {
                        cut.push(x);
                    }
                }
            }
        }
    }
    for c in cuts.iter_mut() {
        c.sort_by(|a, b| a.total_cmp(b));
        c.dedup();
    }
    let n = q.dim();
    let counts: Vec<usize> = cuts.iter().map(|c| c.len() - 1).collect();
    let total: usize = counts.iter().product();
    let mut out = CubeCells { boxes: Vec::with_capacity(total), u: Vec::with_capacity(total), v: Vec::with_capacity(total) };
    for idx in 0..total {
        let mut lo = qb.lo;
        let mut hi = qb.hi;
        let mut rem = idx;
        for i in (0..n).rev() {
            let k = rem % counts[i];
            rem /= counts[i];
            lo = lo.with_coord(i, cuts[i][k]);
            hi = hi.with_coord(i, cuts[i][k + 1]);
        }
        let b = Aabb::new(lo, hi);
        let c = b.center();
        out.u.push(u.density_at(&c));
        out.v.push(v.density_at(&c));
        out.boxes.push(b);
    }
    out
}

/// Exact operator norm of `A_Q : L^p(v) → L^p(u)` with an extremal function.
#[derive(Clone, Debug, PartialEq)]
pub struct AvgNorm {
    pub norm: f64,
    /// `(avg u)(avg v^{1−p'})^{p−1}`, or `(avg u)/min v` for `p = 1`.
    pub ap_product: f64,
    pub witness: TestFunction,
}

/// Per-cube A_p functional; shared by [`avg_norm_exact`] and the condition scans.
pub fn ap_functional(cells: &CubeCells, q: &Cube, p: f64) -> (f64, f64, Option<usize>) {
    let vol = q.volume();
    let avg_u: f64 = cells.boxes.iter().zip(&cells.u).map(|(b, u)| if *u == 0.0 { 0.0 } else { u * b.volume() }).sum::<f64>() / vol;
    if p == 1.0 {
        let (imin, vmin) = cells
            .v
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if *v < bv { (i, *v) } else { (bi, bv) });
        let val = if avg_u == 0.0 { 0.0 } else { avg_u / vmin };
        return (val, avg_u, Some(imin));
    }
    let e = 1.0 - conjugate(p);
    let avg_w: f64 = cells
        .boxes
        .iter()
        .zip(&cells.v)
        .map(|(b, v)| {
            if *v == 0.0 {
                f64::INFINITY
            } else if v.is_infinite() {
                0.0
            } else {
                v.powf(e) * b.volume()
            }
        })
        .sum::<f64>()
        / vol;
    let val = if avg_u == 0.0 { 0.0 } else { avg_u * avg_w.powf(p - 1.0) };
    (val, avg_w, None)
}

pub fn avg_norm_exact(u: &Measure, v: &Measure, p: f64, q: &Cube) -> Result<AvgNorm> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must lie in [1, ∞), got {p}")));
    }
    let cells = cube_cells(u, v, q);
    let (ap_product, _, imin) = ap_functional(&cells, q, p);
    let witness = if p == 1.0 {
        let i = imin.expect("p = 1 returns the minimising piece");
        let b = cells.boxes[i];
        TestFunction::new(format!("χ of min-v piece of {q}"), piece_grid(&cells, q), one_hot(cells.boxes.len(), i), None)
            .map(|mut f| {
                f.name = format!("χ[{:?},{:?})", b.lo, b.hi);
                f
            })?
    } else {
        let e = 1.0 - conjugate(p);
        let vals = cells.v.iter().map(|v| if *v == 0.0 || v.is_infinite() { 0.0 } else { v.powf(e) }).collect();
        TestFunction::new(format!("v^(1-p')χ_{q}"), piece_grid(&cells, q), vals, None)?
    };
    let norm = if p == 1.0 { ap_product } else { ap_product.powf(1.0 / p) };
    Ok(AvgNorm { norm, ap_product, witness })
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// A grid whose cells are the pieces of `Q`, when the pieces are uniform.
fn piece_grid(cells: &CubeCells, q: &Cube) -> Grid {
    let n = q.dim();
    let side = cells.boxes.iter().map(|b| b.hi[0] - b.lo[0]).fold(f64::INFINITY, f64::min);
    let per_axis = (q.side() / side).round() as usize;
    if per_axis.pow(n as u32) == cells.boxes.len() {
        Grid::new(q.lo(), q.side() / per_axis as f64, vec![per_axis; n]).expect("valid")
    } else {
        Grid::new(q.lo(), q.side(), vec![1; n]).expect("valid")
    }
}

/// Quadrature controls for `T f(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzOptions {
    /// Stop refining a cell once successive levels agree to this relative tolerance.
    pub rel_tol: f64,
    /// Maximum dyadic refinement level per cell; `None` picks a per-dimension default.
    pub max_level: Option<u32>,
    /// Integrate `|K|` instead of `K`.
    pub absolute: bool,
}

impl Default for CzOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-9, max_level: None, absolute: false }
    }
}

impl CzOptions {
    fn level_cap(&self, n: usize) -> u32 {
        self.max_level.unwrap_or(match n {
            1 => 20,
            2 => 10,
            _ => 7,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzValue {
    pub value: f64,
    /// Sum over cells of the last refinement change.
    pub error: f64,
    pub converged: bool,
}

fn check_dims(k: &Kernel, f: &TestFunction, x: &Point) -> Result<()> {
    if k.dim() != f.dim() || x.dim() != f.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), found: f.dim() });
    }
    Ok(())
}

/// `T f(x) = ∫ K(x,y) f(y) dσ(y)` (`σ = None` means `dy`).
pub fn cz_apply(k: &Kernel, f: &TestFunction, sigma: Option<&Measure>, x: &Point, opts: &CzOptions) -> Result<CzValue> {
    check_dims(k, f, x)?;
    let g = |y: &Point| {
        let v = k.eval(x, y);
        if opts.absolute {
            v.abs()
        } else {
            v
        }
    };
    if !k.is_truncated() {
        for (c, _) in f.nonzero_cells() {
            let b = f.grid.cell_aabb(c);
            if b.nearest_distance(x) == 0.0 && f.restrict.as_ref().map_or(true, |r| r.classify(&b) != BoxClass::Outside) {
                return Err(Error::OnSupport(format!("{x} touches the support of {}", f.name)));
            }
        }
    }
    if let Some(m) = sigma {
        if !k.is_truncated() && m.atoms().iter().any(|a| a.point == *x && f.value_at(&a.point) != 0.0) {
            return Err(Error::OnSupport(format!("{x} carries an atom where f > 0")));
        }
    }
    integrate_against(f, sigma, &g, opts)
}

/// `∫ g(y) f(y) dσ(y)` with the quadrature of [`cz_apply`].
pub fn integrate_against(f: &TestFunction, sigma: Option<&Measure>, g: &(dyn Fn(&Point) -> f64 + Sync), opts: &CzOptions) -> Result<CzValue> {
    let mut value = 0.0;
    if let Some(m) = sigma {
        for a in m.atoms() {
            let fv = f.value_at(&a.point);
            if fv != 0.0 {
                value += g(&a.point) * fv * a.mass;
            }
        }
    }
    let cap = opts.level_cap(f.dim());
    let cells: Vec<(usize, f64)> = f.nonzero_cells().collect();
    let results: Vec<Result<(f64, f64, bool)>> =
        cells.par_iter().map(|&(c, fv)| cell_quadrature(f, c, sigma, g, cap, opts.rel_tol).map(|(s, e, ok)| (s * fv, e * fv, ok))).collect();
    let mut error = 0.0;
    let mut converged = true;
    for r in results {
        let (s, e, ok) = r?;
        value += s;
        error += e;
        converged &= ok;
    }
    Ok(CzValue { value, error, converged })
}

/// `∫ |Tf| dμ`: atoms of μ exactly, each cell of μ's density by the midpoint
/// rule on `2^{nL}` subcells, `L` increased until the sum settles to
/// `rel_tol` or reaches `max_level`. Points where `Tf` is undefined (on the
/// support of `f` for untruncated kernels) are skipped, so the result is a
/// lower bound there.
pub fn abs_integral(
    k: &Kernel,
    f: &TestFunction,
    integrate: Option<&Measure>,
    mu: &Measure,
    opts: &CzOptions,
    max_level: u32,
    rel_tol: f64,
) -> Result<CzValue> {
    let eval = |x: &Point| -> Result<f64> {
        match cz_apply(k, f, integrate, x, opts) {
            Ok(v) => Ok(v.value.abs()),
            Err(Error::OnSupport(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let mut atoms = 0.0;
    for a in mu.atoms() {
        atoms += eval(&a.point)? * a.mass;
    }
    let Some(d) = mu.density() else {
        if mu.tail() != 0.0 {
            return Err(Error::Divergent("∫|Tf| dμ over an unbounded tail density".into()));
        }
        return Ok(CzValue { value: atoms, error: 0.0, converged: true });
    };
    if mu.tail() != 0.0 {
        return Err(Error::Divergent("∫|Tf| dμ over an unbounded tail density".into()));
    }
    let grid = d.grid();
    let n = grid.dim();
    let cells: Vec<usize> = (0..grid.len()).filter(|&c| d.value(c) != 0.0).collect();
    if cells.iter().any(|&c| d.value(c).is_infinite()) {
        return Err(Error::Divergent("μ has a cell of infinite density".into()));
    }
    let level_sum = |level: u32| -> Result<f64> {
        let m = 1usize << level;
        let h = grid.step / m as f64;
        let pts: Vec<(Point, f64)> = cells
            .iter()
            .flat_map(|&c| {
                let lo = grid.cell_lo(c);
                let w = d.value(c) * h.powi(n as i32);
                (0..m.pow(n as u32)).map(move |idx| {
                    let mut x = lo;
                    let mut rem = idx;
                    for i in 0..n {
                        x = x.with_coord(i, lo[i] + h * ((rem % m) as f64 + 0.5));
                        rem /= m;
                    }
                    (x, w)
                })
            })
            .collect();
        let vals: Vec<Result<f64>> = pts.par_iter().map(|(x, w)| eval(x).map(|v| v * w)).collect();
        vals.into_iter().sum()
    };
    let mut prev = level_sum(0)?;
    for level in 1..=max_level {
        let cur = level_sum(level)?;
        let diff = (cur - prev).abs();
        if diff <= rel_tol * cur.abs() || level == max_level {
            return Ok(CzValue { value: atoms + cur, error: diff, converged: diff <= rel_tol * cur.abs() });
        }
        prev = cur;
    }
    Ok(CzValue { value: atoms + prev, error: 0.0, converged: true })
}

/// Midpoint rule over the `2^{nL}` dyadic subboxes of one cell, refined
/// until successive levels agree.
fn cell_quadrature(
    f: &TestFunction,
    cell: usize,
    sigma: Option<&Measure>,
    g: &(dyn Fn(&Point) -> f64 + Sync),
    cap: u32,
    rel_tol: f64,
) -> Result<(f64, f64, bool)> {
    let base = f.grid.cell_aabb(cell);
    let n = f.dim();
    let weight = |b: &Aabb| -> f64 {
        let mass = match sigma {
            Some(m) => m.continuous_box_mass(b),
            None => b.volume(),
        };
        match &f.restrict {
            None => mass,
            Some(r) => match r.classify(b) {
                BoxClass::Inside => mass,
                BoxClass::Outside => 0.0,
                BoxClass::Partial => {
                    if r.contains(&b.center()) {
                        mass
                    } else {
                        0.0
                    }
                }
            },
        }
    };
    let level_sum = |level: u32| -> Result<f64> {
        let k = 1usize << level;
        let side: Vec<f64> = (0..n).map(|i| (base.hi[i] - base.lo[i]) / k as f64).collect();
        let mut s = 0.0;
        for idx in 0..k.pow(n as u32) {
            let mut lo = base.lo;
            let mut hi = base.lo;
            let mut rem = idx;
            for i in (0..n).rev() {
                let j = rem % k;
                rem /= k;
                lo = lo.with_coord(i, base.lo[i] + side[i] * j as f64);
                hi = hi.with_coord(i, if j + 1 == k { base.hi[i] } else { base.lo[i] + side[i] * (j + 1) as f64 });
            }
            let b = Aabb::new(lo, hi);
            let w = weight(&b);
            if w == 0.0 {
                continue;
            }
            if w.is_infinite() {
                return Err(Error::Divergent("f is positive on a cell of infinite density".into()));
            }
            let gv = g(&b.center());
            if gv != 0.0 {
                s += gv * w;
            }
        }
        Ok(s)
    };
    let mut prev = level_sum(0)?;
    for level in 1..=cap {
        let cur = level_sum(level)?;
        let diff = (cur - prev).abs();
        if diff <= rel_tol * cur.abs() || (cur == 0.0 && prev == 0.0) {
            return Ok((cur, diff, true));
        }
        if level == cap {
            return Ok((cur, diff, false));
        }
        prev = cur;
    }
    Ok((prev, 0.0, true))
}

/// Outcome of the pointwise lower bound `|Tf(y)| ≥ c·avg_{Q(x0,r)} f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub value: f64,
    pub average: f64,
    /// `c(a,t,n) = a / (2(t√n)^n)`.
    pub c: f64,
    pub bound: f64,
    /// The sharper `a/(2(tr√n)^n)·∫f`, which equals `2^n·bound`.
    pub tight_bound: f64,
    pub pass: bool,
    pub tight_pass: bool,
}

pub fn pointwise_constant(a: f64, t: f64, n: usize) -> f64 {
    a / (2.0 * (t * (n as f64).sqrt()).powi(n as i32))
}

pub fn pointwise_lower_bound(
    k: &Kernel,
    t: f64,
    qx: &Cube,
    f: &TestFunction,
    sigma: Option<&Measure>,
    y: &Point,
    opts: &CzOptions,
) -> Result<PointwiseReport> {
    let n = k.dim();
    let tf = cz_apply(k, f, sigma, y, opts)?;
    let average = f.integrate_with(sigma, Some(qx), |v| v)? / qx.volume();
    let c = pointwise_constant(k.a, t, n);
    let bound = c * average;
    let tight_bound = bound * 2f64.powi(n as i32);
    let value = tf.value.abs();
    let slack = tf.error;
    Ok(PointwiseReport {
        value,
        average,
        c,
        bound,
        tight_bound,
        pass: value + slack >= bound,
        tight_pass: value + slack >= tight_bound,
    })
}

/// The operator probed by [`weak_norm_lower`].
#[derive(Clone, Debug)]
pub enum WeakOperator<'a> {
    /// `A_Q` (or `A_{Q,σ}` when the problem integrates against σ).
    Averaging(Cube),
    Cz { kernel: &'a Kernel, opts: CzOptions },
}

/// `sup_λ λ·μ({|Tf| ≥ λ})^{1/p} / ‖f‖_{L^p(norm)}` over a finite family.
pub struct WeakProblem<'a> {
    pub op: WeakOperator<'a>,
    /// μ, the measure of the superlevel sets.
    pub target: &'a Measure,
    /// The measure of the source norm (ν, v or σ).
    pub norm: &'a Measure,
    /// σ in `T_σ`; `None` integrates against `dy`.
    pub integrate: Option<&'a Measure>,
    pub p: f64,
    /// Superlevel sets are measured on the cells of this grid.
    pub eval_grid: Grid,
    pub lambdas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub exact: bool,
    pub best_function: Option<String>,
    pub best_lambda: f64,
    pub family: Vec<String>,
    pub lambda_count: usize,
    pub eval_points: usize,
}

fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || hi <= lo {
        return vec![hi];
    }
    let r = (hi / lo).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| if i + 1 == count { hi } else { lo * r.powi(i as i32) }).collect()
}

pub fn weak_norm_lower(problem: &WeakProblem<'_>, family: &[TestFunction]) -> Result<NormEstimate> {
    let mut best = NormEstimate {
        value: 0.0,
        exact: matches!(problem.op, WeakOperator::Averaging(_)),
        best_function: None,
        best_lambda: 0.0,
        family: family.iter().map(|f| f.name.clone()).collect(),
        lambda_count: problem.lambdas,
        eval_points: problem.eval_grid.len(),
    };
    for f in family {
        let norm = f.lp_norm(Some(problem.norm), problem.p)?;
        if norm == 0.0 || f.is_zero() {
            continue;
        }
        let (val, lambda) = match &problem.op {
            WeakOperator::Averaging(q) => {
                let avg = f.integrate_with(problem.integrate, Some(q), |v| v)? / q.volume();
                let mq = problem.target.measure_cube(q);
                (avg * mq.powf(1.0 / problem.p), avg)
            }
            WeakOperator::Cz { kernel, opts } => {
                let samples = superlevel_samples(kernel, f, problem, opts)?;
                let positive: Vec<f64> = samples.iter().map(|s| s.0).filter(|v| *v > 0.0).collect();
                if positive.is_empty() {
                    continue;
                }
                let lo = positive.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = positive.iter().cloned().fold(0.0, f64::max);
                let mut out = (0.0, 0.0);
                for lambda in geometric_grid(lo, hi, problem.lambdas) {
                    let m: f64 = samples.iter().filter(|s| s.0 >= lambda).map(|s| s.1).sum();
                    let v = lambda * m.powf(1.0 / problem.p);
                    if v > out.0 {
                        out = (v, lambda);
                    }
                }
                out
            }
        };
        let ratio = val / norm;
        if ratio > best.value {
            best.value = ratio;
            best.best_function = Some(f.name.clone());
            best.best_lambda = lambda;
        }
    }
    Ok(best)
}

/// `(|Tf|, μ-mass)` at every evaluation cell centre and every atom of μ.
fn superlevel_samples(k: &Kernel, f: &TestFunction, problem: &WeakProblem<'_>, opts: &CzOptions) -> Result<Vec<(f64, f64)>> {
    let grid = &problem.eval_grid;
    let mut points: Vec<(Point, f64)> = (0..grid.len())
        .map(|c| (grid.cell_center(c), problem.target.continuous_box_mass(&grid.cell_aabb(c))))
        .filter(|(_, m)| *m > 0.0)
        .collect();
    points.extend(problem.target.atoms().iter().map(|a| (a.point, a.mass)));
    let vals: Vec<Result<Option<(f64, f64)>>> = points
        .par_iter()
        .map(|(x, m)| match cz_apply(k, f, problem.integrate, x, opts) {
            Ok(v) => Ok(Some((v.value.abs(), *m))),
            // undefined on the support of f for untruncated kernels; skipping only lowers the estimate
            Err(Error::OnSupport(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut out = Vec::with_capacity(vals.len());
    for v in vals {
        if let Some(s) = v? {
            out.push(s);
        }
    }
    Ok(out)
}

/// `((|x − y0| + r)^{-1})^{n(p'−1)}`, the profile of the tail test function.
pub fn tail_weight(dist: f64, r: f64, n: usize, p: f64) -> f64 {
    (dist + r).powf(-(n as f64) * (conjugate(p) - 1.0))
}

/// `f_{r,S} = (|x − y0| + r)^{−n(p'−1)} χ_{C_r ∩ B(y0,S)}`, sampled at the
/// midpoints of `grid` and restricted to `C_r ∩ B(y0, S)` exactly.
pub fn tail_test_function(y0: Point, r: f64, s: f64, t: f64, u0: &Direction, p: f64, grid: Grid) -> Result<TestFunction> {
    if !(s > r) {
        return Err(Error::invalid(format!("tail test function needs S > r, got S={s}, r={r}")));
    }
    if !(p > 1.0) {
        return Err(Error::invalid("tail test function needs p > 1"));
    }
    let n = y0.dim();
    let cone = Cone::new(y0, *u0, t, r, None)?;
    let restrict = Region::Cone(cone).intersect(Region::Ball(Ball::new(y0, s)?));
    let values = (0..grid.len()).map(|c| tail_weight(grid.cell_center(c).dist(&y0), r, n, p)).collect();
    TestFunction::new(format!("f_(r={r},S={s})"), grid, values, Some(restrict))
}

/// Region of a tail integral.
#[derive(Clone, Debug, PartialEq)]
pub enum TailRegion {
    Region(Region),
    Whole,
}

/// `∫_{R^n} ((|x|+r)^{-p'} r^{p'-1})^n dx`, which is independent of `r`.
pub fn lebesgue_tail_total(n: usize, p: f64) -> f64 {
    let q = conjugate(p);
    let nf = n as f64;
    unit_sphere_area(n) * (ln_gamma(nf) + ln_gamma(nf * (q - 1.0)) - ln_gamma(nf * q)).exp()
}

/// `∫_region (r^{p'−1}/(|x − y0| + r)^{p'})^n dσ(x)`.
pub fn cone_tail_integral(sigma: &Measure, y0: &Point, r: f64, p: f64, region: &TailRegion) -> Result<MeasureValue> {
    if !(p > 1.0) {
        return Err(Error::invalid("tail integrals need p > 1"));
    }
    let n = sigma.dim();
    let q = conjugate(p);
    let nf = n as f64;
    let w = move |d: f64| (r.powf(q - 1.0) / (d + r).powf(q)).powf(nf);
    let atoms: f64 = sigma
        .atoms()
        .iter()
        .filter(|a| match region {
            TailRegion::Whole => true,
            TailRegion::Region(reg) => reg.contains(&a.point),
        })
        .map(|a| w(a.point.dist(y0)) * a.mass)
        .sum();
    let cont = match region {
        TailRegion::Whole => {
            // tail·(whole-space total) + ∫_window (density − tail)·w
            let tail = sigma.tail();
            let mut v = MeasureValue::exact(if tail == 0.0 { 0.0 } else { tail * lebesgue_tail_total(n, p) });
            if let Some(d) = sigma.density() {
                let window = d.grid().window();
                let signed = |b: &Aabb| sigma.continuous_box_mass(b) - tail * b.volume();
                let inner = integrate_weight(&Region::Box(window), window, y0, &w, &signed, n)?;
                v.value += inner.value;
                v.error += inner.error;
            }
            v
        }
        TailRegion::Region(reg) => {
            let start = match (reg.aabb().filter(|b| b.is_finite()), sigma.density()) {
                (Some(b), Some(d)) if sigma.tail() == 0.0 => b.intersect(&d.grid().window()),
                (Some(b), _) => b,
                (None, Some(d)) if sigma.tail() == 0.0 => d.grid().window(),
                (None, None) if sigma.tail() == 0.0 => return Ok(MeasureValue::exact(atoms)),
                _ => Err(Error::Divergent("unbounded tail region with a nonzero tail density".into()))?,
            };
            if start.is_empty() {
                MeasureValue::exact(0.0)
            } else {
                integrate_weight(reg, start, y0, &w, &|b: &Aabb| sigma.continuous_box_mass(b), n)?
            }
        }
    };
    Ok(MeasureValue { value: atoms + cont.value, error: cont.error })
}

/// `∫_region w(|x − y0|) dm` with box masses given by `mass`; exact
/// intervals plus adaptive Simpson in one dimension, bracketing boxes above.
fn integrate_weight(
    region: &Region,
    start: Aabb,
    y0: &Point,
    w: &dyn Fn(f64) -> f64,
    mass: &dyn Fn(&Aabb) -> f64,
    n: usize,
) -> Result<MeasureValue> {
    if n == 1 {
        let mut total = 0.0;
        for (a, b) in region.intervals_1d() {
            let (a, b) = (a.max(start.lo[0]), b.min(start.hi[0]));
            if b <= a {
                continue;
            }
            total += integrate_1d_pieces(a, b, y0[0], w, mass)?;
        }
        return Ok(MeasureValue::exact(total));
    }
    let opts = RegionOptions { rel_tol: 1e-9, max_depth: 40, max_boxes: 1 << 18 };
    Ok(radial_bracket(region, start, y0, w, mass, &opts))
}

/// Splits `[a, b)` at the apex and at the density breakpoints implied by
/// `mass`, then integrates `w` on each constant-density piece.
fn integrate_1d_pieces(a: f64, b: f64, y0: f64, w: &dyn Fn(f64) -> f64, mass: &dyn Fn(&Aabb) -> f64) -> Result<f64> {
    let mut cuts = vec![a, b];
    if y0 > a && y0 < b {
        cuts.push(y0);
    }
    cuts.sort_by(|x, y| x.total_cmp(y));
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        total += piecewise_constant_segments(lo, hi, mass, &mut |s, e, dens| {
            let f = |x: f64| w((x - y0).abs());
            let scale = w(((s + e) / 2.0 - y0).abs()).abs() * (e - s);
            dens * adaptive_simpson(&f, s, e, 1e-14 * scale.max(f64::MIN_POSITIVE))
        })?;
    }
    Ok(total)
}

/// Bisects `[lo, hi)` until the density (mass/length) is constant on each
/// piece, detected by matching halves. Pieces are passed to `each`.
fn piecewise_constant_segments(
    lo: f64,
    hi: f64,
    mass: &dyn Fn(&Aabb) -> f64,
    each: &mut dyn FnMut(f64, f64, f64) -> f64,
) -> Result<f64> {
    let iv = |lo: f64, hi: f64| Aabb::new(Point::from_slice(&[lo]), Point::from_slice(&[hi]));
    let mut stack = vec![(lo, hi, 0u32)];
    let mut total = 0.0;
    while let Some((a, b, depth)) = stack.pop() {
        let m = mass(&iv(a, b));
        if m == 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let ml = mass(&iv(a, mid));
        let mr = mass(&iv(mid, b));
        let dens = m / (b - a);
        let uniform = ((ml / (mid - a)) - dens).abs() <= 1e-12 * dens.abs() && ((mr / (b - mid)) - dens).abs() <= 1e-12 * dens.abs();
        if m.is_infinite() && (ml.is_infinite() && mr.is_infinite()) && depth > 60 {
            return Err(Error::Divergent("tail integrand meets a cell of infinite density".into()));
        }
        if (uniform && m.is_finite()) || depth >= 60 || mid <= a || mid >= b {
            total += each(a, b, dens);
        } else {
            stack.push((mid, b, depth + 1));
            stack.push((a, mid, depth + 1));
        }
    }
    Ok(total)
}

/// Per-annulus terms `∫_{A_j} |x − y0|^{−n} dμ` of the cone integral over
/// `C_0 ∩ B(y0, 2^{−j0})`, with the sets `A_j` of the shrinking cone family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularConeReport {
    pub levels: Vec<i32>,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Smallest term: the partial sums grow at least this much per annulus.
    pub min_term: f64,
    /// True when every term is bounded below by `threshold > 0`.
    pub diverging: bool,
    pub threshold: f64,
}

pub fn singular_cone_integral(
    mu: &Measure,
    y0: &Point,
    u0: &Direction,
    t: f64,
    levels: std::ops::Range<i32>,
    threshold: f64,
) -> Result<SingularConeReport> {
    if mu.atoms().iter().any(|a| a.point == *y0) {
        return Err(Error::Divergent(format!("atom at the apex {y0}: the cone integral is infinite")));
    }
    let fam = crate::geometry::shrinking_cone_family(*y0, u0, t)?;
    let n = mu.dim();
    let w = |d: f64| d.powi(-(n as i32));
    let mut terms = Vec::new();
    for j in levels.clone() {
        let set = fam.set(j);
        let atoms: f64 = mu.atoms().iter().filter(|a| set.contains(&a.point)).map(|a| w(a.point.dist(y0)) * a.mass).sum();
        let start = fam.ball(j).aabb();
        let cont = integrate_weight(&set, start, y0, &w, &|b: &Aabb| mu.continuous_box_mass(b), n)?;
        terms.push(atoms + cont.value - cont.error);
    }
    let mut acc = 0.0;
    let partial_sums = terms
        .iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect();
    let min_term = terms.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SingularConeReport {
        levels: levels.collect(),
        terms,
        partial_sums,
        min_term,
        diverging: min_term >= threshold && threshold > 0.0,
        threshold,
    })
}

/// `(α/2)·u(y0)·|B(0,1)|`, the per-annulus growth guaranteed once
/// `μ(A_j)/|B_j|` is within half of its limit `α·u(y0)`.
pub fn annulus_growth_floor(alpha: f64, u_at_apex: f64, n: usize) -> f64 {
    0.5 * alpha * u_at_apex * unit_ball_volume(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{choose_separation, separated_pair};
    use crate::kernels::{hilbert, riesz, truncate, Truncation};
    use crate::measures::Atom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(c: &[f64]) -> Point {
        Point::from_slice(c)
    }

    fn grid1(lo: f64, step: f64, n: usize) -> Grid {
        Grid::new(p(&[lo]), step, vec![n]).unwrap()
    }

    fn chi(lo: f64, hi: f64, step: f64) -> TestFunction {
        let n = ((hi - lo) / step).round() as usize;
        TestFunction::indicator(format!("χ[{lo},{hi})"), grid1(lo, step, n), 0..n).unwrap()
    }

    #[test]
    fn averaging_examples() {
        let q = Cube::new(p(&[0.5]), 0.5).unwrap();
        let one = TestFunction::cube_indicator(&q);
        assert_eq!(avg_apply(&q, &one).unwrap().values, vec![1.0]);
        let half = chi(0.0, 0.5, 0.5);
        assert_eq!(avg_apply(&q, &half).unwrap().values, vec![0.5]);
        let sigma = Measure::lebesgue_on(grid1(0.0, 0.25, 4)).unwrap().with_atoms([Atom { point: p(&[0.25]), mass: 1.0 }]).unwrap();
        let ones = TestFunction::from_fn("1", grid1(0.0, 0.25, 4), |_| 1.0).unwrap();
        assert_eq!(avg_sigma_apply(&q, &sigma, &ones).unwrap().values, vec![2.0]);
        assert_eq!(avg_sigma_exact(&q, Some(&sigma), &ones).unwrap(), Some(BigRational::from_integer(2.into())));
    }

    #[test]
    fn averaging_over_infinite_cells_diverges() {
        let mut vals = vec![1.0; 4];
        vals[1] = f64::INFINITY;
        let sigma = Measure::from_density(crate::measures::Density::new(grid1(0.0, 0.25, 4), vals).unwrap()).unwrap();
        let q = Cube::new(p(&[0.5]), 0.5).unwrap();
        let f = TestFunction::from_fn("1", grid1(0.0, 0.25, 4), |_| 1.0).unwrap();
        assert!(matches!(avg_sigma_apply(&q, &sigma, &f), Err(Error::Divergent(_))));
        let off = TestFunction::from_fn("χ off", grid1(0.0, 0.25, 4), |x| if x[0] > 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(avg_sigma_apply(&q, &sigma, &off).unwrap().values, vec![0.5]);
    }

    fn two_cell(u: [f64; 2], v: [f64; 2]) -> (Measure, Measure, Cube) {
        let g = grid1(0.0, 0.5, 2);
        (
            Measure::from_density(crate::measures::Density::new(g.clone(), u.to_vec()).unwrap()).unwrap(),
            Measure::from_density(crate::measures::Density::new(g, v.to_vec()).unwrap()).unwrap(),
            Cube::new(p(&[0.5]), 0.5).unwrap(),
        )
    }

    #[test]
    fn avg_norm_examples() {
        let (u, v, q) = two_cell([1.0, 1.0], [1.0, 1.0]);
        for pp in [1.0, 1.5, 2.0, 3.0] {
            assert!((avg_norm_exact(&u, &v, pp, &q).unwrap().norm - 1.0).abs() < 1e-15);
        }
        let (u, v, q) = two_cell([2.0, 2.0], [1.0, 1.0]);
        assert!((avg_norm_exact(&u, &v, 2.0, &q).unwrap().norm - 2f64.sqrt()).abs() < 1e-15);
        let (u, v, q) = two_cell([1.0, 3.0], [2.0, 1.0]);
        let r = avg_norm_exact(&u, &v, 2.0, &q).unwrap();
        assert!((r.norm - 1.5f64.sqrt()).abs() < 1e-15);
        // two-cell brute force: f = (a, 1−a)
        let mut best = 0.0f64;
        for i in 0..=100_000 {
            let a = i as f64 / 100_000.0;
            let avg = 0.5 * a + 0.5 * (1.0 - a);
            let lhs = avg * avg * 2.0; // u(Q) = 2
            let rhs = 0.5 * (a * a * 2.0 + (1.0 - a) * (1.0 - a));
            best = best.max(lhs / rhs);
        }
        assert!((best.sqrt() - r.norm).abs() < 1e-6);
        // the witness attains the norm
        let f = &r.witness;
        let af = avg_apply(&q, f).unwrap();
        let lhs = af.lp_norm(Some(&u), 2.0).unwrap();
        let rhs = f.lp_norm(Some(&v), 2.0).unwrap();
        assert!((lhs / rhs - r.norm).abs() < 1e-14);
    }

    #[test]
    fn avg_norm_with_vanishing_weight() {
        let (u, v, q) = two_cell([1.0, 1.0], [0.0, 1.0]);
        assert_eq!(avg_norm_exact(&u, &v, 2.0, &q).unwrap().norm, f64::INFINITY);
        assert_eq!(avg_norm_exact(&u, &v, 1.0, &q).unwrap().norm, f64::INFINITY);
        let (u, v, q) = two_cell([0.0, 0.0], [0.0, 1.0]);
        assert_eq!(avg_norm_exact(&u, &v, 1.0, &q).unwrap().norm, 0.0);
    }

    #[test]
    fn hilbert_on_an_interval_matches_the_logarithm() {
        let k = hilbert();
        let f = chi(2.0, 3.0, 1.0);
        for x in [-1.0, -0.5, 0.0, 0.3, 1.0] {
            let v = cz_apply(&k, &f, None, &p(&[x]), &CzOptions::default()).unwrap();
            let exact = -((3.0 - x) / (2.0 - x) as f64).ln();
            assert!((v.value - exact).abs() < 1e-6, "x={x}: {} vs {exact}", v.value);
            assert!(v.converged);
        }
        let at12 = cz_apply(&k, &f, None, &p(&[0.0]), &CzOptions { max_level: Some(12), rel_tol: 0.0, ..Default::default() }).unwrap();
        assert!((at12.value + 1.5f64.ln()).abs() < 1e-6);
        assert!(matches!(cz_apply(&k, &f, None, &p(&[2.5]), &CzOptions::default()), Err(Error::OnSupport(_))));
        let zero = TestFunction::from_fn("0", grid1(2.0, 1.0, 1), |_| 0.0).unwrap();
        assert_eq!(cz_apply(&k, &zero, None, &p(&[0.0]), &CzOptions::default()).unwrap().value, 0.0);
    }

    #[test]
    fn truncated_operator_against_a_single_atom() {
        let k = truncate(&hilbert(), Truncation::smooth(0.25, 100.0).unwrap());
        let sigma = Measure::dirac(p(&[2.0]));
        let f = TestFunction::from_fn("1", grid1(-8.0, 1.0, 16), |_| 1.0).unwrap();
        let v = cz_apply(&k, &f, Some(&sigma), &p(&[0.0]), &CzOptions::default()).unwrap();
        assert_eq!(v.value, -0.5);
    }

    #[test]
    fn pointwise_lower_bound_hilbert() {
        let k = hilbert();
        let cfg = choose_separation(k.c0, k.delta, k.a, 1).unwrap();
        let qy = Cube::new(p(&[0.0]), 1.0).unwrap();
        let qx = separated_pair(&qy, &k.u0, &cfg).unwrap();
        let f = TestFunction::cube_indicator(&qx);
        let rep = pointwise_lower_bound(&k, cfg.t, &qx, &f, None, &p(&[0.0]), &CzOptions::default()).unwrap();
        assert_eq!(rep.c, 1.0 / 40.0);
        assert!((rep.value - (21.0f64 / 19.0).ln()).abs() < 1e-6);
        assert!(rep.pass && rep.tight_pass);
        let zero = TestFunction::constant_on(&qx, 0.0);
        let rep = pointwise_lower_bound(&k, cfg.t, &qx, &zero, None, &p(&[0.0]), &CzOptions::default()).unwrap();
        assert_eq!((rep.value, rep.bound), (0.0, 0.0));
    }

    #[test]
    fn pointwise_lower_bound_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in [hilbert(), riesz(1, 2).unwrap()] {
            let n = k.dim();
            let cfg = choose_separation(k.c0, k.delta, k.a, n).unwrap();
            for _ in 0..20 {
                let r = 2f64.powi(rng.gen_range(-3..3));
                let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let qy = Cube::new(p(&c), r).unwrap();
                let qx = separated_pair(&qy, &k.u0, &cfg).unwrap();
                let g = Grid::over_cube(&qx, 4).unwrap();
                let vals = (0..g.len()).map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.0..2.0) } else { 0.0 }).collect();
                let f = TestFunction::new("rand", g, vals, None).unwrap();
                let yv: Vec<f64> = (0..n).map(|i| qy.center[i] + rng.gen_range(-r..r)).collect();
                let rep = pointwise_lower_bound(&k, cfg.t, &qx, &f, None, &p(&yv), &CzOptions { max_level: Some(if n == 1 { 12 } else { 4 }), ..Default::default() }).unwrap();
                assert!(rep.pass && rep.tight_pass, "{rep:?}");
                // no cancellation: |Tf| equals ∫|K| f
                let abs = cz_apply(&k, &f, None, &p(&yv), &CzOptions { absolute: true, max_level: Some(if n == 1 { 12 } else { 4 }), ..Default::default() }).unwrap();
                assert!((abs.value - rep.value).abs() <= 1e-9 * abs.value.max(1e-300));
            }
        }
    }

    #[test]
    fn weak_norm_of_averaging_operator_is_exact() {
        let g = grid1(-1.0, 0.25, 8);
        let leb = Measure::lebesgue_on(g.clone()).unwrap();
        let q = Cube::new(p(&[0.0]), 1.0).unwrap();
        let family =
            vec![TestFunction::cube_indicator(&q), TestFunction::indicator("χ_S", g.clone(), [1, 2, 5]).unwrap()];
        let prob = WeakProblem {
            op: WeakOperator::Averaging(q),
            target: &leb,
            norm: &leb,
            integrate: None,
            p: 2.0,
            eval_grid: g.clone(),
            lambdas: 64,
        };
        let est = weak_norm_lower(&prob, &family).unwrap();
        assert!((est.value - 1.0).abs() < 1e-15);
        assert!(est.exact);
        let empty = Measure::from_atoms(1, vec![Atom { point: p(&[5.0]), mass: 1.0 }]).unwrap();
        let prob = WeakProblem { target: &empty, ..prob };
        assert_eq!(weak_norm_lower(&prob, &family).unwrap().value, 0.0);
    }

    #[test]
    fn weak_norm_of_hilbert_approaches_the_level_set_oracle() {
        // |Hχ_[-1,1)|(x) = ln|(x+1)/(x−1)|; off the support, {|Hf| ≥ λ} ∩ [−8,8)
        // is 1 < |x| < min(coth(λ/2), 8)
        let oracle = (1..200_000)
            .map(|i| {
                let l = i as f64 * 1e-4;
                l * ((1.0 / (l / 2.0).tanh()).min(8.0) - 1.0).sqrt()
            })
            .fold(0.0, f64::max);
        let k = hilbert();
        let f = chi(-1.0, 1.0, 2.0);
        let mut errs = Vec::new();
        for step in [0.125, 0.03125] {
            let g = grid1(-8.0, step, (16.0 / step) as usize);
            let leb = Measure::lebesgue_on(g.clone()).unwrap();
            let prob = WeakProblem {
                op: WeakOperator::Cz { kernel: &k, opts: CzOptions::default() },
                target: &leb,
                norm: &leb,
                integrate: None,
                p: 2.0,
                eval_grid: g.clone(),
                lambdas: 64,
            };
            let est = weak_norm_lower(&prob, std::slice::from_ref(&f)).unwrap();
            errs.push((est.value - oracle).abs() / oracle);
        }
        assert!(errs[1] < errs[0] && errs[1] < 0.05, "{errs:?} oracle {oracle}");
    }

    #[test]
    fn tail_function_profile() {
        let r = 0.5;
        assert_eq!(tail_weight(r, r, 1, 2.0), 1.0 / (2.0 * r));
        assert_eq!(tail_weight(3.0 * r, r, 1, 2.0), 1.0 / (4.0 * r));
        assert!((tail_weight(r, r, 2, 3.0) - (2.0 * r).powf(-2.0 * 0.5)).abs() < 1e-15);
        let g = grid1(-20.0, 0.5, 80);
        let f = tail_test_function(p(&[0.0]), r, 10.0, 20.0, &Direction::axis(1, 0), 2.0, g).unwrap();
        assert_eq!(f.value_at(&p(&[-5.25])), 0.0);
        assert_eq!(f.value_at(&p(&[9.75])), 1.0 / (9.75 + 0.5));
        assert_eq!(f.value_at(&p(&[10.25])), 0.0);
        // the cone starts at t·r − r = 9.5
        assert_eq!(f.value_at(&p(&[9.25])), 0.0);
    }

    #[test]
    fn lebesgue_tail_integral_is_two() {
        // r ∫ dx/(|x−y0|+r)^2 = 2 by direct antiderivative
        for (y0, r) in [(0.0, 1.0), (3.5, 0.01), (-2.0, 7.0)] {
            let v = cone_tail_integral(&Measure::lebesgue(1), &p(&[y0]), r, 2.0, &TailRegion::Whole).unwrap();
            assert!((v.value - 2.0).abs() < 1e-12);
        }
        assert_eq!(cone_tail_integral(&Measure::zero(1), &p(&[0.0]), 1.0, 2.0, &TailRegion::Whole).unwrap().value, 0.0);
        // windowed density equal to the tail changes nothing
        let g = grid1(-4.0, 0.5, 16);
        let m = Measure::lebesgue_on(g).unwrap().with_tail(1.0).unwrap();
        let v = cone_tail_integral(&m, &p(&[0.3]), 0.7, 2.0, &TailRegion::Whole).unwrap();
        assert!((v.value - 2.0).abs() < 1e-12);
        // compactly supported Lebesgue on [-4, 4): r(1/r − 1/(4−y0+r)) + r(1/r − 1/(4+y0+r))
        let (y0, r) = (0.3f64, 0.7f64);
        let m = Measure::lebesgue_on(grid1(-4.0, 0.5, 16)).unwrap();
        let v = cone_tail_integral(&m, &p(&[y0]), r, 2.0, &TailRegion::Whole).unwrap();
        let exact = r * (1.0 / r - 1.0 / (4.0 - y0 + r)) + r * (1.0 / r - 1.0 / (4.0 + y0 + r));
        assert!((v.value - exact).abs() < 1e-12, "{} vs {exact}", v.value);
    }

    #[test]
    fn lebesgue_tail_total_in_higher_dimensions() {
        // ∫_{R^2} (r/(|x|+r)^2)^2 dx = 2π ∫ ρ/(ρ+1)^4 dρ = 2π/6 at p = 2
        assert!((lebesgue_tail_total(2, 2.0) - std::f64::consts::PI / 3.0).abs() < 1e-12);
        let m = Measure::lebesgue(2);
        let g = Grid::new(p(&[-2.0, -2.0]), 0.5, vec![8, 8]).unwrap();
        let windowed = Measure::lebesgue_on(g).unwrap().with_tail(1.0).unwrap();
        let a = cone_tail_integral(&m, &p(&[0.0, 0.0]), 0.5, 2.0, &TailRegion::Whole).unwrap();
        let b = cone_tail_integral(&windowed, &p(&[0.0, 0.0]), 0.5, 2.0, &TailRegion::Whole).unwrap();
        assert!((a.value - b.value).abs() <= b.error + 1e-12);
    }

    #[test]
    fn singular_cone_integral_grows_linearly_for_lebesgue() {
        let g = grid1(-1.0, 2f64.powi(-4), 32);
        let leb = Measure::lebesgue_on(g).unwrap();
        let rep = singular_cone_integral(&leb, &p(&[0.0]), &Direction::axis(1, 0), 20.0, 1..21, 0.25).unwrap();
        for t in &rep.terms {
            assert!((t - 2f64.ln()).abs() < 1e-12);
        }
        assert!(rep.diverging);
        let atom = Measure::dirac(p(&[0.0]));
        assert!(singular_cone_integral(&atom, &p(&[0.0]), &Direction::axis(1, 0), 20.0, 0..4, 0.25).is_err());
        let floor = annulus_growth_floor(0.25, 1.0, 1);
        assert_eq!(floor, 0.25);
    }
}
