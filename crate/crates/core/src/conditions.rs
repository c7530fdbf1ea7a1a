//! Condition constants over finite cube and ball families, and the
//! executable necessity pipelines that check each inequality of the
//! arguments on concrete instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    annulus_cover, choose_separation, cube_chain, separated_pair, unit_ball_volume, Aabb, Ball, Cone, Cube, Direction,
    Grid, Point, Region, SeparationConfig,
};
use crate::kernels::{perturbation_check, truncate, Kernel, Truncation};
use crate::measures::{
    directional_doubling_constant, doubling_constant, essinf_on, lebesgue_decompose, CubeFamily, Measure, RegionOptions,
};
use crate::operators::{
    abs_integral, ap_functional, avg_norm_exact, conjugate, cone_tail_integral, cube_cells, integrate_against,
    pointwise_constant, pointwise_lower_bound, singular_cone_integral, tail_test_function, annulus_growth_floor,
    CzOptions, SingularConeReport, TailRegion, TestFunction,
};
use crate::quadrature::adaptive_simpson;

/// Where a supremum was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Cube { cube: Cube },
    Ball { ball: Ball },
    /// A point mass shared by both measures.
    SharedAtom { point: Point },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub constant: f64,
    pub witness: Option<Witness>,
    pub family: String,
    pub p: f64,
    pub evaluated: usize,
    /// Supremum restricted to each halfside (or radius) in the family.
    pub per_scale: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionReport {
    fn from_values(values: Vec<(f64, f64, Witness)>, family: String, p: f64) -> Self {
        let mut constant = 0.0;
        let mut witness = None;
        let mut per_scale: Vec<(f64, f64)> = Vec::new();
        for (scale, v, w) in &values {
            if *v > constant || witness.is_none() {
                constant = v.max(constant);
                witness = Some(w.clone());
            }
            match per_scale.iter_mut().find(|(h, _)| h == scale) {
                Some(e) => e.1 = e.1.max(*v),
                None => per_scale.push((*scale, *v)),
            }
        }
        per_scale.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { constant, witness, family, p, evaluated: values.len(), per_scale, note: None }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must lie in [1, ∞), got {p}")));
    }
    Ok(())
}

/// `[u,v]_{A_p}` over the family: `sup (avg u)(avg v^{1−p'})^{p−1}`, or
/// `sup (avg u)/min v` when `p = 1`. Cells with `v = 0` make the dual
/// average infinite; a zero `u`-average gives 0.
pub fn ap_cube(u: &Measure, v: &Measure, p: f64, q: &Cube) -> f64 {
    ap_functional(&cube_cells(u, v, q), q, p).0
}

pub fn ap_weights(u: &Measure, v: &Measure, p: f64, family: &CubeFamily) -> Result<ConditionReport> {
    check_p(p)?;
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), found: v.dim() });
    }
    let cubes = family.cubes();
    let values = cubes.par_iter().map(|q| (q.halfside, ap_cube(u, v, p, q), Witness::Cube { cube: *q })).collect();
    Ok(ConditionReport::from_values(values, family.describe(), p))
}

fn shared_atom(mu: &Measure, sigma: &Measure) -> Option<Point> {
    mu.atoms().iter().find(|a| sigma.atoms().iter().any(|b| b.point == a.point)).map(|a| a.point)
}

/// `(μ(Q)/|Q|)(σ(Q)/|Q|)^{p−1}`, taken as 0 when either mass vanishes. At
/// `p = 1` this is `μ(Q)/|Q|` for `σ(Q) > 0`, the norm of `A_{Q,σ}` on `L^1(σ)`.
fn measures_functional(m: f64, s: f64, vol: f64, p: f64) -> f64 {
    if m == 0.0 || s == 0.0 {
        return 0.0;
    }
    (m / vol) * (s / vol).powf(p - 1.0)
}

/// `[μ,σ]_{A_p}` over a cube family. A point mass shared by μ and σ makes
/// the functional blow up on cubes shrinking to it, so it short-circuits to
/// `∞` with that point as witness.
pub fn ap_measures(mu: &Measure, sigma: &Measure, p: f64, family: &CubeFamily) -> Result<ConditionReport> {
    check_p(p)?;
    if mu.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: sigma.dim() });
    }
    if let Some(point) = shared_atom(mu, sigma) {
        return Ok(ConditionReport {
            constant: f64::INFINITY,
            witness: Some(Witness::SharedAtom { point }),
            family: family.describe(),
            p,
            evaluated: 0,
            per_scale: Vec::new(),
            note: Some(format!("μ and σ share the point mass at {point}")),
        });
    }
    let cubes = family.cubes();
    let values = cubes
        .par_iter()
        .map(|q| {
            let v = measures_functional(mu.measure_cube(q), sigma.measure_cube(q), q.volume(), p);
            (q.halfside, v, Witness::Cube { cube: *q })
        })
        .collect();
    Ok(ConditionReport::from_values(values, family.describe(), p))
}

/// `[μ,σ]_{A_p}` over balls. In dimension ≥ 2 the ball measures carry the
/// subdivision error of [`Measure::measure_with_error`]; the upper end of
/// each bracket is used.
pub fn ap_measures_balls(mu: &Measure, sigma: &Measure, p: f64, balls: &[Ball]) -> Result<ConditionReport> {
    check_p(p)?;
    if let Some(point) = shared_atom(mu, sigma) {
        return Ok(ConditionReport {
            constant: f64::INFINITY,
            witness: Some(Witness::SharedAtom { point }),
            family: format!("{} balls", balls.len()),
            p,
            evaluated: 0,
            per_scale: Vec::new(),
            note: Some(format!("μ and σ share the point mass at {point}")),
        });
    }
    let opts = RegionOptions::default();
    let mut values = Vec::with_capacity(balls.len());
    for b in balls {
        let region = Region::Ball(*b);
        let m = mu.measure_with_error(&region, &opts)?;
        let s = sigma.measure_with_error(&region, &opts)?;
        let v = measures_functional(m.value + m.error, s.value + s.error, b.volume(), p);
        values.push((b.radius, v, Witness::Ball { ball: *b }));
    }
    Ok(ConditionReport::from_values(values, format!("{} balls", balls.len()), p))
}

/// `(μ(Q)/|Q|)(∫ (r^{p'−1}/(|x−y0|+r)^{p'})^n dσ)^{p−1}` for `Q = Q(y0, r)`.
pub fn pap_cube(mu: &Measure, sigma: &Measure, p: f64, q: &Cube) -> Result<f64> {
    let m = mu.measure_cube(q);
    if m == 0.0 {
        return Ok(0.0);
    }
    let tail = cone_tail_integral(sigma, &q.center, q.halfside, p, &TailRegion::Whole)?;
    if tail.value == 0.0 {
        return Ok(0.0);
    }
    Ok(m / q.volume() * tail.value.powf(p - 1.0))
}

/// `[μ,σ]_{PA_p}` over the family. A divergent tail gives `∞` with the
/// diagnosis in `note`.
pub fn pap(mu: &Measure, sigma: &Measure, p: f64, family: &CubeFamily) -> Result<ConditionReport> {
    check_p(p)?;
    if p == 1.0 {
        return Err(Error::invalid("the tailed condition needs p > 1"));
    }
    let cubes = family.cubes();
    let results: Vec<Result<f64>> = cubes.par_iter().map(|q| pap_cube(mu, sigma, p, q)).collect();
    let mut values = Vec::with_capacity(cubes.len());
    let mut note = None;
    for (q, r) in cubes.iter().zip(results) {
        let v = match r {
            Ok(v) => v,
            Err(Error::Divergent(msg)) => {
                note.get_or_insert(msg);
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        values.push((q.halfside, v, Witness::Cube { cube: *q }));
    }
    let mut rep = ConditionReport::from_values(values, family.describe(), p);
    rep.note = note;
    Ok(rep)
}

/// `c_{n,p} = (2^n (√n+1)^{−np'})^{p−1}` with `PA_p ≥ c_{n,p}·A_p`, from
/// integrating the tail over `Q(y0, r)` alone, where `|x−y0| + r ≤ (√n+1) r`.
pub fn pap_restriction_constant(n: usize, p: f64) -> f64 {
    let nf = n as f64;
    (2f64.powf(nf) * (nf.sqrt() + 1.0).powf(-nf * conjugate(p))).powf(p - 1.0)
}

/// One inequality of a pipeline, checked over a set of instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub name: String,
    pub pass: bool,
    pub instances: usize,
    /// Largest `lhs / rhs` seen (≤ 1 when the step passes).
    pub worst_ratio: f64,
    pub detail: String,
}

impl Step {
    fn new(name: &str) -> Self {
        Self { name: name.into(), pass: true, instances: 0, worst_ratio: 0.0, detail: String::new() }
    }

    /// Records `lhs ≤ rhs` with relative slack `tol`.
    fn check(&mut self, lhs: f64, rhs: f64, tol: f64, what: impl FnOnce() -> String) {
        self.instances += 1;
        let ratio = if lhs == 0.0 { 0.0 } else if rhs == 0.0 { f64::INFINITY } else { lhs / rhs };
        if ratio.is_nan() {
            self.worst_ratio = f64::INFINITY;
        } else {
            self.worst_ratio = self.worst_ratio.max(ratio);
        }
        if !(lhs <= rhs * (1.0 + tol) + tol * f64::MIN_POSITIVE) {
            if self.pass {
                self.detail = format!("fails at {}: {lhs} > {rhs}", what());
            }
            self.pass = false;
        }
    }

    fn flag(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            if self.pass {
                self.detail = what();
            }
            self.pass = false;
        }
    }
}

/// Which pairing the weak-type hypothesis refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `T : L^p(ν) → L^{p,∞}(μ)`; the conclusion is `[u,v]_{A_p}`.
    Weights,
    /// `T_σ : L^p(σ) → L^{p,∞}(μ)`; the conclusion is `[μ,σ]_{A_p}`.
    Measures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityConfig {
    pub pairing: Pairing,
    pub p: f64,
    /// The hypothesised weak-type constant `K`.
    pub k: f64,
    /// Halfsides `r` of the tested pairs.
    pub scales: Vec<f64>,
    /// Centres `y0` of the tested pairs.
    pub placements: Vec<Point>,
    pub perturbation_samples: usize,
    /// Evaluation points `y ∈ Q(y0, r)` per pair.
    pub points: usize,
    /// Random nonnegative test functions per pair, besides `χ_{Q(x0,r)}`.
    pub functions: usize,
    /// Random grid sets `S ⊂ Q` for the indicator step.
    pub indicator_sets: usize,
    pub family: CubeFamily,
    pub seed: u64,
    pub quadrature: CzOptions,
}

impl NecessityConfig {
    pub fn new(pairing: Pairing, p: f64, k: f64, family: CubeFamily) -> Self {
        Self {
            pairing,
            p,
            k,
            scales: vec![0.25, 0.5],
            placements: Vec::new(),
            perturbation_samples: 10_000,
            points: 5,
            functions: 2,
            indicator_sets: 20,
            family,
            seed: 0,
            quadrature: CzOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub k: f64,
    pub a: f64,
    pub c0: f64,
    pub delta: f64,
    pub separation: SeparationConfig,
    /// `c(a,t,n) = a/(2(t√n)^n)`.
    pub c_pointwise: f64,
    /// `c(a,t,n,p) = (2(t√n)^n/a)^p·K^p`.
    pub c_weak: f64,
    /// Number of cubes in the longest chain.
    pub chain_length: usize,
    /// Directional doubling constant: the family scan and every chain pair.
    pub c_mu: f64,
    /// `C_μ^{N−1}`.
    pub chain_constant: f64,
    pub concluded_bound: f64,
    pub measured: ConditionReport,
    /// Largest `min_y |Tf(y)| · μ(Q(y0,r))^{1/p} / ‖f‖_p` seen; a sampled
    /// lower estimate of the weak-type constant.
    pub weak_lower: f64,
    pub hypothesis_consistent: bool,
    /// `μ` has neither atoms nor infinite cells.
    pub mu_absolutely_continuous: bool,
    /// Largest cell ratio `u/v` on the common refinement of the grids.
    pub u_over_v_max: f64,
    pub steps: Vec<Step>,
    pub pass: bool,
}

fn random_point_in(rng: &mut ChaCha8Rng, q: &Cube) -> Point {
    let mut x = q.lo();
    for i in 0..q.dim() {
        x = x.with_coord(i, q.center[i] + q.halfside * rng.gen_range(-1.0..1.0));
    }
    x
}

/// `y0`, the corners pulled in by 1%, then random points of `Q(y0, r)`.
fn sample_points(rng: &mut ChaCha8Rng, q: &Cube, count: usize) -> Vec<Point> {
    let mut pts = vec![q.center];
    let inner = Cube { center: q.center, halfside: 0.99 * q.halfside };
    pts.extend(inner.aabb().corners());
    pts.truncate(count.max(1));
    while pts.len() < count {
        pts.push(random_point_in(rng, q));
    }
    pts
}

/// Truncation with `η = 1` on every pair of a separated pair of cubes.
fn pair_truncation(cfg: &SeparationConfig, r: f64) -> Result<Truncation> {
    let sep = cfg.separation_length(r);
    let rn = (cfg.dim as f64).sqrt();
    Truncation::smooth(sep / 8.0, 4.0 * (sep + 2.0 * r * rn))
}

fn u_over_v(u: &Measure, v: &Measure, window: &Cube) -> f64 {
    let cells = cube_cells(u, v, window);
    cells
        .u
        .iter()
        .zip(&cells.v)
        .map(|(a, b)| if *a == 0.0 { 0.0 } else if *b == 0.0 { f64::INFINITY } else { a / b })
        .fold(0.0, f64::max)
}

/// Runs every step of the weak-type necessity argument on the configured
/// pairs and compares the concluded bound with the measured condition.
pub fn necessity_pipeline(mu: &Measure, nu: &Measure, kernel: &Kernel, cfg: &NecessityConfig) -> Result<NecessityReport> {
    let n = kernel.dim();
    if mu.dim() != n || nu.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: mu.dim() });
    }
    check_p(cfg.p)?;
    if cfg.pairing == Pairing::Measures && cfg.p == 1.0 {
        return Err(Error::invalid("the measure pairing needs p > 1"));
    }
    if kernel.is_truncated() {
        return Err(Error::invalid("pass the untruncated kernel; the pipeline truncates per scale"));
    }
    let p = cfg.p;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sep = choose_separation(kernel.c0, kernel.delta, kernel.a, n)?;
    let c_pointwise = pointwise_constant(kernel.a, sep.t, n);
    let c_weak = (1.0 / c_pointwise).powf(p) * cfg.k.powf(p);
    let integrate = match cfg.pairing {
        Pairing::Weights => None,
        Pairing::Measures => Some(nu),
    };

    // step 1: the separation parameter
    let mut s1 = Step::new("separation");
    let budget = SeparationConfig::perturbation_budget(kernel.c0, kernel.delta, n, sep.t);
    s1.check(budget, kernel.a, 1e-12, || format!("t = {}", sep.t));
    let rn = (n as f64).sqrt();
    s1.flag((sep.multiplier as f64 * sep.c2 / rn - sep.t).abs() <= 1e-12 * sep.t && sep.c2 <= 1.0 && sep.c2 >= 1.0 / rn - 1e-15, || {
        format!("t = N·C2/√n fails: N = {}, C2 = {}", sep.multiplier, sep.c2)
    });

    let placements = if cfg.placements.is_empty() { vec![Point::zero(n)] } else { cfg.placements.clone() };
    let mut s2 = Step::new("perturbation");
    let mut s3 = Step::new("pointwise");
    let mut s4 = Step::new("weak_type");
    let mut s5 = Step::new("chain");
    let mut chain_length = 0;
    let mut c_mu_chain: f64 = 1.0;
    let mut weak_lower: f64 = 0.0;
    let mut chains = Vec::new();
    let mut instance = 0u64;
    for &r in &cfg.scales {
        for y0 in &placements {
            instance += 1;
            let qy = Cube::new(*y0, r)?;
            let qx = separated_pair(&qy, &kernel.u0, &sep)?;
            let k_inst = match cfg.pairing {
                Pairing::Weights => kernel.clone(),
                Pairing::Measures => truncate(kernel, pair_truncation(&sep, r)?),
            };
            let pert = perturbation_check(&k_inst, &qx, &qy, cfg.perturbation_samples, cfg.seed.wrapping_add(instance))?;
            s2.check(pert.max_ratio, 0.5, 0.0, || format!("Q(y0,r) = {qy}"));

            let grid = Grid::over_cube(&qx, 4)?;
            let mut funcs = vec![TestFunction::cube_indicator(&qx)];
            for i in 0..cfg.functions {
                let vals = (0..grid.len()).map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.0..2.0) } else { 0.0 }).collect();
                funcs.push(TestFunction::new(format!("random #{i} on {qx}"), grid.clone(), vals, None)?);
            }
            let ys = sample_points(&mut rng, &qy, cfg.points);
            let mu_qy = mu.measure_cube(&qy);
            for f in &funcs {
                let mut min_tf = f64::INFINITY;
                for y in &ys {
                    let rep = pointwise_lower_bound(&k_inst, sep.t, &qx, f, integrate, y, &cfg.quadrature)?;
                    s3.check(rep.bound, rep.value + 0.0 * rep.tight_bound, 1e-12, || format!("y = {y}, f = {}", f.name));
                    min_tf = min_tf.min(rep.value);
                }
                let avg = f.integrate_with(integrate, Some(&qx), |v| v)? / qx.volume();
                let norm_p = f.integrate_with(Some(nu), None, |v| v.powf(p))?;
                // μ(Q(y0,r))·(avg f)^p ≤ c(a,t,n,p) ∫ f^p dν
                s4.check(mu_qy * avg.powf(p), c_weak * norm_p, 1e-12, || format!("f = {}, Q(y0,r) = {qy}", f.name));
                if norm_p > 0.0 {
                    weak_lower = weak_lower.max(min_tf * mu_qy.powf(1.0 / p) / norm_p.powf(1.0 / p));
                }
            }

            let chain = cube_chain(&qx, &qy, &kernel.u0.reversed())?;
            chain_length = chain_length.max(chain.len());
            let mut local: f64 = 1.0;
            for w in chain.windows(2) {
                let (a, b) = (mu.measure_cube(&w[0]), mu.measure_cube(&w[1]));
                let ratio = if a == 0.0 && b == 0.0 {
                    1.0
                } else if a == 0.0 || b == 0.0 {
                    f64::INFINITY
                } else {
                    (a / b).max(b / a)
                };
                local = local.max(ratio);
            }
            c_mu_chain = c_mu_chain.max(local);
            chains.push((qx, qy, chain.len(), local));
        }
    }
    let scan = directional_doubling_constant(mu, &kernel.u0, &cfg.family);
    let c_mu = c_mu_chain.max(scan.constant);
    for (qx, qy, len, local) in &chains {
        let rhs = local.powi(*len as i32 - 1) * mu.measure_cube(qy);
        s5.check(mu.measure_cube(qx), rhs, 1e-12, || format!("chain {qx} → {qy}"));
    }
    let chain_constant = c_mu.powi(chain_length.max(1) as i32 - 1);
    let concluded_bound = chain_constant * c_weak;

    let measured = match cfg.pairing {
        Pairing::Weights => ap_weights(mu, nu, p, &cfg.family)?,
        Pairing::Measures => ap_measures(mu, nu, p, &cfg.family)?,
    };

    // step 6: (w(S)/|Q|)^p μ(Q) ≤ C·w(S) on grid sets, with w = dx (weights) or σ
    let mut s6 = Step::new("indicator");
    let cubes = cfg.family.cubes();
    for i in 0..cfg.indicator_sets.min(cubes.len()) {
        let q = cubes[(i * 7919) % cubes.len()];
        let g = Grid::over_cube(&q, 4)?;
        let cells: Vec<usize> = (0..g.len()).filter(|_| rng.gen_bool(0.5)).collect();
        if cells.is_empty() {
            continue;
        }
        let chi = TestFunction::indicator("χ_S", g, cells)?;
        let (s_mass, s_norm) = match cfg.pairing {
            Pairing::Weights => (chi.integrate_with(None, None, |v| v)?, chi.integrate_with(Some(nu), None, |v| v)?),
            Pairing::Measures => {
                let s = chi.integrate_with(Some(nu), None, |v| v)?;
                (s, s)
            }
        };
        let lhs = (s_mass / q.volume()).powf(p) * mu.measure_cube(&q);
        s6.check(lhs, measured.constant * s_norm, 1e-9, || format!("S ⊂ {q} against the measured constant"));
        s6.check(lhs, concluded_bound * s_norm, 1e-9, || format!("S ⊂ {q} against the concluded bound"));
    }

    let mut s7 = Step::new("conclusion");
    s7.check(measured.constant, concluded_bound, 1e-12, || "measured condition against the concluded bound".into());

    let (sing, _) = lebesgue_decompose(mu);
    let window = cfg.family.window().unwrap_or_else(|| Cube { center: Point::zero(n), halfside: 1.0 });
    let steps = vec![s1, s2, s3, s4, s5, s6, s7];
    let pass = steps.iter().all(|s| s.pass);
    Ok(NecessityReport {
        k: cfg.k,
        a: kernel.a,
        c0: kernel.c0,
        delta: kernel.delta,
        separation: sep,
        c_pointwise,
        c_weak,
        chain_length,
        c_mu,
        chain_constant,
        concluded_bound,
        measured,
        weak_lower,
        hypothesis_consistent: cfg.k >= weak_lower,
        mu_absolutely_continuous: sing.is_zero(),
        u_over_v_max: u_over_v(mu, nu, &window),
        steps,
        pass,
    })
}

/// The averaging-operator form of the argument: `K = sup_Q ‖A_Q‖` over the
/// family gives `[u,v]_{A_p} ≤ K^p`, with equality on grid families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragingNecessity {
    pub k: f64,
    pub k_pow_p: f64,
    pub measured: ConditionReport,
    pub relative_gap: f64,
    pub pass: bool,
}

pub fn averaging_necessity(u: &Measure, v: &Measure, p: f64, family: &CubeFamily) -> Result<AveragingNecessity> {
    let cubes = family.cubes();
    let norms: Vec<Result<f64>> = cubes.par_iter().map(|q| avg_norm_exact(u, v, p, q).map(|r| r.norm)).collect();
    let mut k: f64 = 0.0;
    for r in norms {
        k = k.max(r?);
    }
    let measured = ap_weights(u, v, p, family)?;
    let k_pow_p = k.powf(p);
    let relative_gap = if k_pow_p == measured.constant { 0.0 } else { (k_pow_p - measured.constant).abs() / measured.constant };
    Ok(AveragingNecessity { k, k_pow_p, pass: measured.constant <= k_pow_p * (1.0 + 1e-12), relative_gap, measured })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PapConfig {
    pub p: f64,
    pub k: f64,
    pub y0: Point,
    pub r: f64,
    /// Increasing radii `S` of the truncated tail functions.
    pub s_ladder: Vec<f64>,
    pub k_max: u32,
    pub annulus_samples: usize,
    /// Cells per unit length of the grid carrying `f_{r,S}`.
    pub cells_per_unit: usize,
    pub points: usize,
    pub doubling_family: CubeFamily,
    pub seed: u64,
    pub quadrature: CzOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub s: f64,
    /// `∫_{C_r ∩ B(y0,S)} (r^{p'−1}/(|x−y0|+r)^{p'})^n dσ`.
    pub cone_integral: f64,
    pub min_tf: f64,
    /// `c(a,n)·∫ (|x−y0|+r)^{−n} f_{r,S} dσ` with the sampled `f_{r,S}`.
    pub pointwise_rhs: f64,
    /// Upper bound for `∫_{C_r ∖ B(y0,S)} w dσ`; `∞` while `S` is inside the density window.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusEntry {
    pub k: u32,
    /// `∫_{A_k} w dσ`.
    pub integral: f64,
    pub sigma_annulus: f64,
    pub sigma_cover: f64,
    pub sigma_inner: f64,
    /// `σ(B(x_k, 2^{k+2}tr√n)) / σ(B(x_k, 3/8·2^{k+2}r√n))`.
    pub doubling_ratio: f64,
    pub inner_integral: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PapReport {
    pub doubling: f64,
    pub t: f64,
    /// `c(a,n) = a/2^{n+1}`.
    pub c_an: f64,
    pub ladder: Vec<LadderEntry>,
    /// Bracket for `∫_{C_r} w dσ`.
    pub cone_limit: (f64, f64),
    pub annuli: Vec<AnnulusEntry>,
    /// `sup_k doubling_ratio_k · 2^{np'}`.
    pub c_far: f64,
    pub whole: f64,
    pub near: f64,
    /// Whole-space integral not accounted for by `near` and the `k ≤ k_max` annuli.
    pub remainder: f64,
    pub ap_ball: f64,
    pub concluded_bound: f64,
    pub measured: f64,
    pub steps: Vec<Step>,
    pub pass: bool,
}

fn tail_w(d: f64, r: f64, n: usize, p: f64) -> f64 {
    let q = conjugate(p);
    (r.powf(q - 1.0) / (d + r).powf(q)).powf(n as f64)
}

fn random_in_ball(rng: &mut ChaCha8Rng, b: &Ball) -> Point {
    let n = b.dim();
    loop {
        let mut x = b.center;
        for i in 0..n {
            x = x.with_coord(i, b.center[i] + b.radius * rng.gen_range(-1.0..1.0));
        }
        if b.contains(&x) {
            return x;
        }
    }
}

/// `∫_{C_r ∖ B(y0,S)} w dx` bounded above by the whole exterior of `B(y0,S)`
/// intersected with the limiting cone (1-D: exactly the half-line).
fn cone_exterior_bound(n: usize, r: f64, p: f64, s: f64, t: f64) -> f64 {
    let fraction = crate::geometry::shrinking_cone_family(Point::zero(n), &Direction::axis(n, 0), t)
        .map(|f| f.alpha / (1.0 - 2f64.powi(-(n as i32))))
        .unwrap_or(1.0);
    // substitute ρ = S/u on (0, 1]
    let g = |u: f64| {
        if u == 0.0 {
            0.0
        } else {
            let rho = s / u;
            rho.powi(n as i32 - 1) * tail_w(rho, r, n, p) * s / (u * u)
        }
    };
    fraction * crate::geometry::unit_sphere_area(n) * adaptive_simpson(&g, 0.0, 1.0, 1e-15)
}

/// Executes the tailed-condition argument on `Q(y0, r)`: the pointwise
/// estimate for `T_σ f_{r,S}`, the monotone `S`-ladder, the annulus
/// covering chain and the near-region bound.
pub fn pap_pipeline(mu: &Measure, sigma: &Measure, kernel: &Kernel, cfg: &PapConfig) -> Result<PapReport> {
    let n = kernel.dim();
    let p = cfg.p;
    if !(p > 1.0) {
        return Err(Error::invalid("the tailed condition needs p > 1"));
    }
    if kernel.is_truncated() {
        return Err(Error::invalid("pass the untruncated kernel; the pipeline truncates per S"));
    }
    let scan = doubling_constant(sigma, &cfg.doubling_family);
    if !scan.constant.is_finite() {
        return Err(Error::Hypothesis(format!("σ is not doubling on {}: constant ∞", scan.family)));
    }
    let sep = choose_separation(kernel.c0, kernel.delta, kernel.a, n)?;
    let t = sep.t;
    let (y0, r) = (cfg.y0, cfg.r);
    let rn = (n as f64).sqrt();
    let q = Cube::new(y0, r)?;
    let c_an = kernel.a / 2f64.powi(n as i32 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ys = sample_points(&mut rng, &q, cfg.points);
    let mu_q = mu.measure_cube(&q);
    let cone = Cone::new(y0, kernel.u0, t, r, None)?;

    // (a) pointwise estimate and (b) the ladder
    let mut sa = Step::new("pointwise");
    let mut sb = Step::new("ladder");
    let mut sh = Step::new("weak_type");
    let cone_bound = (1.0 / c_an).powf(p) * cfg.k.powf(p) / 2f64.powi(n as i32);
    let mut ladder = Vec::new();
    for &s in &cfg.s_ladder {
        let window = Cube::new(y0, s)?;
        let grid = Grid::over_cube(&window, ((2.0 * s * cfg.cells_per_unit as f64).ceil() as usize).max(1))?;
        let f = tail_test_function(y0, r, s, t, &kernel.u0, p, grid)?;
        let region = Region::Cone(cone).intersect(Region::Ball(Ball::new(y0, s)?));
        let cone_integral = cone_tail_integral(sigma, &y0, r, p, &TailRegion::Region(region))?.value;
        let trunc = Truncation::smooth(t * r * rn / 8.0, 4.0 * (s + 2.0 * r * rn))?;
        let kt = truncate(kernel, trunc);
        let g = |x: &Point| (x.dist(&y0) + r).powi(-(n as i32));
        let rhs = c_an * integrate_against(&f, Some(sigma), &g, &cfg.quadrature)?.value;
        let mut min_tf = f64::INFINITY;
        for y in &ys {
            let v = crate::operators::cz_apply(&kt, &f, Some(sigma), y, &cfg.quadrature)?.value.abs();
            sa.check(rhs, v, 1e-9, || format!("S = {s}, y = {y}"));
            min_tf = min_tf.min(v);
        }
        // (μ(Q)/|Q|)(∫_{C_r∩B_S} w dσ)^{p−1} ≤ 2^{−n} c(a,n)^{−p} K^p
        sh.check(mu_q / q.volume() * cone_integral.powf(p - 1.0), cone_bound, 1e-12, || format!("S = {s}"));
        if let Some(prev) = ladder.last() {
            let prev: &LadderEntry = prev;
            sb.check(prev.cone_integral, cone_integral, 1e-12, || format!("S = {s}"));
        }
        ladder.push(LadderEntry { s, cone_integral, min_tf, pointwise_rhs: rhs, gap: f64::INFINITY });
    }
    let lower = ladder.last().map_or(0.0, |e| e.cone_integral);
    // gap between the truncated integral and the C_r limit, once S passes the density window
    let window_radius = sigma.density().map_or(0.0, |d| d.grid().window().farthest_distance(&y0));
    for e in &mut ladder {
        e.gap = if e.s >= window_radius { sigma.tail() * cone_exterior_bound(n, r, p, e.s, t) } else { f64::INFINITY };
    }
    let upper = lower + ladder.last().map_or(f64::INFINITY, |e| e.gap);
    sb.flag(upper.is_finite(), || "the ladder does not reach past the density window".into());
    for w in ladder.windows(2) {
        if w[0].gap.is_finite() {
            sb.check(w[1].gap, w[0].gap, 1e-12, || format!("gap grows at S = {}", w[1].s));
        }
    }

    // (c) annulus covering chain
    let mut sc = Step::new("annulus");
    let mut annuli = Vec::new();
    let np = n as f64 * conjugate(p);
    let lift = 2f64.powf(np);
    let mut c_far: f64 = 0.0;
    let mut inner_total = 0.0;
    let mut prev_inner: Option<Ball> = None;
    for k in 0..=cfg.k_max {
        let cov = annulus_cover(y0, &kernel.u0, t, r, k)?;
        for _ in 0..cfg.annulus_samples {
            let x = random_in_ball(&mut rng, &Ball { center: y0, radius: cov.annulus.outer });
            if cov.annulus.contains(&x) {
                sc.flag(cov.cover.contains(&x), || format!("A_{k} ⊄ cover at {x}"));
            }
            let z = random_in_ball(&mut rng, &cov.inner);
            sc.flag(cone.contains(&z), || format!("inner ball {k} ⊄ C_r at {z}"));
        }
        if let Some(b) = prev_inner {
            sc.flag(b.center.dist(&cov.inner.center) >= b.radius + cov.inner.radius, || format!("inner balls {k} overlap"));
        }
        prev_inner = Some(cov.inner);
        let opts = RegionOptions::default();
        let integral = cone_tail_integral(sigma, &y0, r, p, &TailRegion::Region(Region::Annulus(cov.annulus)))?;
        let sig_a = sigma.measure_with_error(&Region::Annulus(cov.annulus), &opts)?;
        let sig_c = sigma.measure_with_error(&Region::Ball(cov.cover), &opts)?;
        let sig_i = sigma.measure_with_error(&Region::Ball(cov.inner), &opts)?;
        let inner_int = cone_tail_integral(sigma, &y0, r, p, &TailRegion::Region(Region::Ball(cov.inner)))?;
        let wk = tail_w(cov.annulus.inner, r, n, p);
        let ratio = if sig_c.value == 0.0 { 1.0 } else if sig_i.value - sig_i.error <= 0.0 { f64::INFINITY } else { (sig_c.value + sig_c.error) / (sig_i.value - sig_i.error) };
        let tol = 1e-9;
        sc.check(integral.value - integral.error, wk * (sig_a.value + sig_a.error), tol, || format!("k = {k}: ∫_A w ≤ w_k σ(A_k)"));
        sc.check(sig_a.value - sig_a.error, sig_c.value + sig_c.error, tol, || format!("k = {k}: σ(A_k) ≤ σ(cover)"));
        sc.check(wk * (sig_c.value - sig_c.error), ratio * wk * (sig_i.value + sig_i.error), tol, || format!("k = {k}: doubling"));
        sc.check(wk * (sig_i.value - sig_i.error), lift * (inner_int.value + inner_int.error), tol, || format!("k = {k}: w_k ≤ 2^(np') w on the inner ball"));
        c_far = c_far.max(ratio * lift);
        inner_total += inner_int.value;
        annuli.push(AnnulusEntry {
            k,
            integral: integral.value,
            sigma_annulus: sig_a.value,
            sigma_cover: sig_c.value,
            sigma_inner: sig_i.value,
            doubling_ratio: ratio,
            inner_integral: inner_int.value,
        });
    }
    sc.check(inner_total, upper, 1e-9, || "Σ_k ∫_{inner_k} w ≤ ∫_{C_r} w".into());
    let whole = cone_tail_integral(sigma, &y0, r, p, &TailRegion::Whole)?.value;
    let near_ball = Ball::new(y0, t * r * rn)?;
    let near = cone_tail_integral(sigma, &y0, r, p, &TailRegion::Region(Region::Ball(near_ball)))?.value;
    let far_k: f64 = annuli.iter().map(|a| a.integral).sum();
    let remainder = (whole - near - far_k).max(0.0);
    let mut sw = Step::new("whole_space");
    sw.check(far_k, c_far * upper, 1e-9, || "Σ_{k≤k_max} ∫_{A_k} w ≤ C·∫_{C_r} w".into());
    sw.check(whole, near + c_far * upper + remainder, 1e-9, || "whole-space tail".into());

    // (d) near region via the ball condition
    let mut sd = Step::new("near_region");
    let ap_ball = ap_measures_balls(mu, sigma, p, &[near_ball])?.constant;
    let sig_b = sigma.measure_with_error(&Region::Ball(near_ball), &RegionOptions::default())?;
    sd.check(near, r.powi(-(n as i32)) * (sig_b.value + sig_b.error), 1e-9, || "∫_B w dσ ≤ r^{-n} σ(B)".into());
    let near_term = mu_q / q.volume() * near.powf(p - 1.0);
    let near_bound = near_ball.volume() / q.volume() * (near_ball.volume() / r.powi(n as i32)).powf(p - 1.0) * ap_ball;
    sd.check(near_term, near_bound, 1e-9, || "near term against the ball condition".into());

    // conclusion: (x+y+z)^{p−1} ≤ κ(x^{p−1}+y^{p−1}+z^{p−1})
    let kappa = 3f64.powf(p - 2.0).max(1.0);
    let avg_mu = mu_q / q.volume();
    let far_term = c_far.powf(p - 1.0) * cone_bound;
    let concluded_bound = kappa * (near_bound + far_term + avg_mu * remainder.powf(p - 1.0));
    let measured = pap_cube(mu, sigma, p, &q)?;
    let mut sz = Step::new("conclusion");
    sz.check(measured, concluded_bound, 1e-9, || format!("PA_p on {q}"));
    let steps = vec![sa, sb, sh, sc, sw, sd, sz];
    let pass = steps.iter().all(|s| s.pass);
    Ok(PapReport {
        doubling: scan.constant,
        t,
        c_an,
        ladder,
        cone_limit: (lower, upper),
        annuli,
        c_far,
        whole,
        near,
        remainder,
        ap_ball,
        concluded_bound,
        measured,
        steps,
        pass,
    })
}

/// Strong `(1,1)` case with `ν` singular: `f = χ_{Q∖supp ν}` has zero
/// `ν`-integral while `∫|Tf| dμ > 0` unless `μ(C_r) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSourceReport {
    pub nu_integral: f64,
    pub t_integral: f64,
    /// `c(a,n)·|Q|·∫_{C_r} (r + |x−y0|)^{−n} dμ`, the lower bound of the argument.
    pub cone_lower_bound: f64,
    pub mu_cone: f64,
    /// `∫|Tf| dμ / ∫ f dν`; `∞` when the source side vanishes.
    pub contradiction_ratio: f64,
}

pub fn strong11_singular_source(mu: &Measure, nu: &Measure, kernel: &Kernel, q: &Cube, cells: usize) -> Result<SingularSourceReport> {
    let (_, ac) = lebesgue_decompose(nu);
    if !ac.is_zero() || nu.has_infinite_cells() {
        return Err(Error::Hypothesis("ν must be purely atomic for this case".into()));
    }
    let n = kernel.dim();
    let sep = choose_separation(kernel.c0, kernel.delta, kernel.a, n)?;
    // f vanishes on the atoms of ν, so its ν-integral is 0
    let nu_integral = 0.0;
    let f = TestFunction::from_fn("χ(Q∖supp ν)", Grid::over_cube(q, cells)?, |_| 1.0)?;
    let t_integral = abs_integral(kernel, &f, None, mu, &CzOptions::default(), 4, 1e-6)?.value;
    let cone = Cone::new(q.center, kernel.u0, sep.t, q.halfside, None)?;
    let mu_cone = mu.measure(&Region::Cone(cone)).unwrap_or(f64::INFINITY);
    let c_an = kernel.a / 2f64.powi(n as i32 + 1);
    let y0 = q.center;
    let r = q.halfside;
    let mut weighted: f64 = mu.atoms().iter().filter(|a| cone.contains(&a.point)).map(|a| (r + a.point.dist(&y0)).powi(-(n as i32)) * a.mass).sum();
    if let Some(d) = mu.density() {
        let g = d.grid();
        for c in 0..g.len() {
            let v = d.value(c);
            if v != 0.0 {
                let b = g.cell_aabb(c);
                let cl = Region::Cone(cone).classify(&b);
                if cl == crate::geometry::BoxClass::Inside {
                    weighted += v * b.volume() * (r + b.farthest_distance(&y0)).powi(-(n as i32));
                }
            }
        }
    }
    let cone_lower_bound = c_an * q.volume() * weighted;
    let contradiction_ratio = if t_integral > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(SingularSourceReport { nu_integral, t_integral, cone_lower_bound, mu_cone, contradiction_ratio })
}

/// Strong `(1,1)` case with `dμ = dμ_s + u dx`, `u ≢ 0`: the cone integral
/// at a point where `0 < u(y0) < ∞` diverges linearly in the annulus count,
/// which forces `v(y0) = ∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCaseReport {
    pub y0: Point,
    pub u_y0: f64,
    pub v_y0: f64,
    pub j0: i32,
    pub floor: f64,
    pub cone: SingularConeReport,
    /// Every partial sum is at least `(count)·floor`.
    pub linear_growth: bool,
    /// Last partial sum over `v(y0)`: the constant the key estimate would need.
    pub required_constant: f64,
    pub contradiction: bool,
}

pub fn strong11_density_case(mu: &Measure, nu: &Measure, kernel: &Kernel, y0: Option<Point>, annuli: usize) -> Result<DensityCaseReport> {
    let n = kernel.dim();
    let (_, ac) = lebesgue_decompose(mu);
    let y0 = match y0 {
        Some(y) => y,
        None => {
            let d = ac.density().ok_or_else(|| Error::Hypothesis("μ has no density part".into()))?;
            let c = (0..d.grid().len())
                .find(|&c| d.value(c) > 0.0 && d.value(c).is_finite())
                .ok_or_else(|| Error::Hypothesis("μ has no cell with 0 < u < ∞".into()))?;
            d.grid().cell_center(c)
        }
    };
    let u_y0 = ac.density_at(&y0);
    if !(u_y0 > 0.0 && u_y0.is_finite()) {
        return Err(Error::Hypothesis(format!("u({y0}) = {u_y0} is not in (0, ∞)")));
    }
    let j0 = (0..60)
        .find(|&j| essinf_on(&ac, &Cube { center: y0, halfside: 2f64.powi(-j) }) >= u_y0 / 2.0)
        .ok_or_else(|| Error::Hypothesis(format!("u is not bounded below near {y0}")))?;
    let sep = choose_separation(kernel.c0, kernel.delta, kernel.a, n)?;
    let fam = crate::geometry::shrinking_cone_family(y0, &kernel.u0, sep.t)?;
    let floor = annulus_growth_floor(fam.alpha, u_y0, n);
    let cone = singular_cone_integral(mu, &y0, &kernel.u0, sep.t, j0..j0 + annuli as i32, floor)?;
    let linear_growth = cone.partial_sums.iter().enumerate().all(|(i, s)| *s >= (i + 1) as f64 * floor * (1.0 - 1e-12));
    let v_y0 = nu.density_at(&y0);
    let last = cone.partial_sums.last().copied().unwrap_or(0.0);
    let required_constant = if v_y0 == 0.0 { f64::INFINITY } else { last / v_y0 };
    Ok(DensityCaseReport {
        y0,
        u_y0,
        v_y0,
        j0,
        floor,
        linear_growth,
        required_constant,
        contradiction: cone.diverging && linear_growth && v_y0.is_finite(),
        cone,
    })
}

/// Strong `(1,1)` case with `μ` singular and directionally doubling: the
/// weak `(1,1)` consequence would force `μ ≪ dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularTargetReport {
    pub directional_doubling: f64,
    pub family: String,
    pub mu_singular: bool,
    pub contradiction: bool,
    pub diagnosis: String,
}

pub fn strong11_singular_target(mu: &Measure, kernel: &Kernel, family: &CubeFamily) -> Result<SingularTargetReport> {
    let (_, ac) = lebesgue_decompose(mu);
    let mu_singular = ac.is_zero() && !mu.is_zero();
    if !mu_singular {
        return Err(Error::Hypothesis("μ must be nonzero and singular for this case".into()));
    }
    let scan = directional_doubling_constant(mu, &kernel.u0, family);
    let doubling = scan.constant.is_finite();
    let diagnosis = if doubling {
        "μ is directionally doubling on the family, so boundedness would make μ absolutely continuous".into()
    } else {
        let w = scan.witness.map(|(a, b)| format!(" ({a} next to {b})")).unwrap_or_default();
        format!("μ is not directionally doubling on the family{w}; the case hypothesis fails")
    };
    Ok(SingularTargetReport {
        directional_doubling: scan.constant,
        family: scan.family,
        mu_singular,
        contradiction: doubling,
        diagnosis,
    })
}

/// Every cube of a family scaled about the origin.
pub fn scaled_family(family: &CubeFamily, lambda: f64) -> CubeFamily {
    CubeFamily::Explicit { cubes: family.cubes().iter().map(|q| q.scaled_about_origin(lambda)).collect() }
}

/// `|x − y|`-independent box volume, used by callers that need exact boxes.
pub fn box_of(q: &Cube) -> Aabb {
    q.aabb()
}

/// Volume of the unit ball, re-exported for report builders.
pub fn ball_volume(n: usize) -> f64 {
    unit_ball_volume(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{hilbert, riesz};
    use crate::measures::{Atom, Density};
    use proptest::prelude::*;

    fn p(c: &[f64]) -> Point {
        Point::from_slice(c)
    }

    fn power_weight(level: u32, alpha: f64) -> Measure {
        let g = Grid::new(p(&[-1.0]), 2.0 / (1u64 << level) as f64, vec![1 << level]).unwrap();
        Measure::sampled(g, |x| x[0].abs().powf(alpha)).unwrap()
    }

    fn unit_family(max: u32) -> CubeFamily {
        CubeFamily::dyadic(Cube::new(p(&[0.0]), 1.0).unwrap(), max)
    }

    #[test]
    fn constant_weights_have_constant_one() {
        let g = Grid::new(p(&[-1.0]), 0.25, vec![8]).unwrap();
        let one = Measure::lebesgue_on(g).unwrap();
        for pp in [1.0, 1.5, 2.0, 4.0] {
            assert!((ap_weights(&one, &one, pp, &unit_family(3)).unwrap().constant - 1.0).abs() < 1e-14);
            assert!((ap_measures(&one, &one, pp, &unit_family(3)).unwrap().constant - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn square_root_weights_approach_four_thirds() {
        let w = power_weight(12, 0.5);
        let rep = ap_weights(&w, &w, 2.0, &unit_family(12)).unwrap();
        // (2/3)·2 over cubes with an endpoint at 0
        assert!((rep.constant - 4.0 / 3.0).abs() < 0.02 * 4.0 / 3.0, "{}", rep.constant);
        assert!(rep.constant <= 4.0 / 3.0);
    }

    #[test]
    fn vanishing_weight_gives_infinity() {
        let g = Grid::new(p(&[-1.0]), 0.25, vec![8]).unwrap();
        let u = Measure::lebesgue_on(g.clone()).unwrap();
        let v = Measure::sampled(g, |x| if x[0] >= 0.0 { 1.0 } else { 0.0 }).unwrap();
        let rep = ap_weights(&u, &v, 2.0, &unit_family(3)).unwrap();
        assert_eq!(rep.constant, f64::INFINITY);
        let Some(Witness::Cube { cube }) = rep.witness else { panic!() };
        assert!(cube.lo()[0] < 0.0);
    }

    #[test]
    fn shared_atoms_and_shrinking_cubes() {
        let d = Measure::dirac(p(&[0.0]));
        let rep = ap_measures(&d, &d, 2.0, &unit_family(3)).unwrap();
        assert_eq!(rep.constant, f64::INFINITY);
        assert_eq!(rep.witness, Some(Witness::SharedAtom { point: p(&[0.0]) }));
        let leb = Measure::lebesgue_on(Grid::new(p(&[-1.0]), 2f64.powi(-6), vec![128]).unwrap()).unwrap();
        let rep = ap_measures(&d, &leb, 2.0, &unit_family(6)).unwrap();
        for (h, v) in &rep.per_scale {
            // 1/|Q| on the cube containing 0
            assert!((v - 1.0 / (2.0 * h)).abs() < 1e-12);
        }
        assert_eq!(rep.constant, 32.0);
    }

    #[test]
    fn pap_of_lebesgue_is_two() {
        let leb = Measure::lebesgue(1);
        let fam = CubeFamily::Explicit { cubes: vec![Cube::new(p(&[0.3]), 0.1).unwrap(), Cube::new(p(&[-5.0]), 4.0).unwrap()] };
        let rep = pap(&leb, &leb, 2.0, &fam).unwrap();
        assert!((rep.constant - 2.0).abs() < 1e-9);
        assert_eq!(pap(&leb, &Measure::zero(1), 2.0, &fam).unwrap().constant, 0.0);
    }

    #[test]
    fn pap_dominates_scaled_ap() {
        let g = Grid::new(p(&[-4.0]), 0.125, vec![64]).unwrap();
        let mu = Measure::sampled(g.clone(), |x| 1.0 + x[0].abs()).unwrap();
        let sigma = Measure::sampled(g, |x| 1.0 / (1.0 + x[0] * x[0])).unwrap();
        let fam = CubeFamily::dyadic(Cube::new(p(&[0.0]), 4.0).unwrap(), 4);
        for pp in [1.5, 2.0, 3.0] {
            let c = pap_restriction_constant(1, pp);
            for q in fam.cubes() {
                let a = measures_functional(mu.measure_cube(&q), sigma.measure_cube(&q), q.volume(), pp);
                let b = pap_cube(&mu, &sigma, pp, &q).unwrap();
                assert!(b >= c * a * (1.0 - 1e-9), "{q}: {b} < {c}·{a}");
            }
        }
    }

    #[test]
    fn averaging_form_is_an_equality() {
        let w = power_weight(8, 0.5);
        let rep = averaging_necessity(&w, &w, 2.0, &unit_family(8)).unwrap();
        assert!(rep.pass && rep.relative_gap < 1e-12, "{rep:?}");
    }

    #[test]
    fn necessity_pipeline_on_constant_weights() {
        let g = Grid::new(p(&[-32.0]), 0.25, vec![256]).unwrap();
        let one = Measure::lebesgue_on(g).unwrap();
        let mut cfg = NecessityConfig::new(Pairing::Weights, 2.0, 1.0, unit_family(3));
        cfg.placements = vec![p(&[-20.0]), p(&[-15.0])];
        cfg.perturbation_samples = 1000;
        cfg.indicator_sets = 5;
        let rep = necessity_pipeline(&one, &one, &hilbert(), &cfg).unwrap();
        assert!(rep.pass, "{:#?}", rep.steps);
        assert_eq!(rep.separation.t, 20.0);
        assert_eq!(rep.c_pointwise, 1.0 / 40.0);
        assert_eq!(rep.chain_length, 11);
        assert!((rep.measured.constant - 1.0).abs() < 1e-14);
        assert!(rep.measured.constant <= rep.concluded_bound);
    }

    #[test]
    fn necessity_pipeline_for_measures_with_truncation() {
        let g = Grid::new(p(&[-32.0]), 0.25, vec![256]).unwrap();
        let one = Measure::lebesgue_on(g).unwrap();
        let mut cfg = NecessityConfig::new(Pairing::Measures, 2.0, 1.0, unit_family(3));
        cfg.placements = vec![p(&[-20.0])];
        cfg.perturbation_samples = 1000;
        cfg.indicator_sets = 5;
        let rep = necessity_pipeline(&one, &one, &hilbert(), &cfg).unwrap();
        assert!(rep.pass, "{:#?}", rep.steps);
    }

    #[test]
    fn necessity_pipeline_in_two_dimensions() {
        let g = Grid::new(p(&[-64.0, -64.0]), 4.0, vec![32, 32]).unwrap();
        let one = Measure::lebesgue_on(g).unwrap();
        let fam = CubeFamily::dyadic(Cube::new(p(&[0.0, 0.0]), 16.0).unwrap(), 2);
        let mut cfg = NecessityConfig::new(Pairing::Weights, 2.0, 1.0, fam);
        cfg.scales = vec![0.5];
        cfg.placements = vec![p(&[-30.0, 0.0])];
        cfg.perturbation_samples = 500;
        cfg.points = 2;
        cfg.functions = 1;
        cfg.indicator_sets = 3;
        cfg.quadrature = CzOptions { max_level: Some(3), ..Default::default() };
        let rep = necessity_pipeline(&one, &one, &riesz(1, 2).unwrap(), &cfg).unwrap();
        assert!(rep.pass, "{:#?}", rep.steps);
    }

    #[test]
    fn pap_pipeline_on_lebesgue() {
        let leb = Measure::lebesgue(1);
        let cfg = PapConfig {
            p: 2.0,
            k: 1.0,
            y0: p(&[0.0]),
            r: 0.5,
            s_ladder: vec![20.0, 40.0, 80.0, 160.0],
            k_max: 6,
            annulus_samples: 2000,
            cells_per_unit: 4,
            points: 3,
            doubling_family: unit_family(4),
            seed: 1,
            quadrature: CzOptions { max_level: Some(8), ..Default::default() },
        };
        let rep = pap_pipeline(&leb, &leb, &hilbert(), &cfg).unwrap();
        assert!(rep.pass, "{:#?}", rep.steps);
        assert!((rep.measured - 2.0).abs() < 1e-9);
        // ∫_{C_r} r/(x+r)^2 dx over x ≥ (t−1)r is 1/t
        assert!(rep.cone_limit.0 <= 0.05 + 1e-12 && rep.cone_limit.1 >= 0.05 - 1e-12);
        assert!(rep.concluded_bound >= rep.measured);
    }

    #[test]
    fn pap_pipeline_with_zero_sigma_is_vacuous() {
        let cfg = PapConfig {
            p: 2.0,
            k: 1.0,
            y0: p(&[0.0]),
            r: 0.5,
            s_ladder: vec![20.0],
            k_max: 2,
            annulus_samples: 100,
            cells_per_unit: 2,
            points: 2,
            doubling_family: unit_family(2),
            seed: 1,
            quadrature: CzOptions::default(),
        };
        let rep = pap_pipeline(&Measure::lebesgue(1), &Measure::zero(1), &hilbert(), &cfg).unwrap();
        assert!(rep.pass, "{:#?}", rep.steps);
        assert_eq!(rep.measured, 0.0);
    }

    #[test]
    fn pap_pipeline_refuses_non_doubling_sigma() {
        let g = Grid::new(p(&[-1.0]), 0.5, vec![4]).unwrap();
        let sigma = Measure::sampled(g, |x| if x[0] > 0.0 { 1.0 } else { 0.0 }).unwrap();
        let fam = CubeFamily::Explicit { cubes: vec![Cube::new(p(&[-0.25]), 0.25).unwrap()] };
        let cfg = PapConfig {
            p: 2.0,
            k: 1.0,
            y0: p(&[0.0]),
            r: 0.5,
            s_ladder: vec![2.0],
            k_max: 1,
            annulus_samples: 10,
            cells_per_unit: 2,
            points: 1,
            doubling_family: fam,
            seed: 0,
            quadrature: CzOptions::default(),
        };
        assert!(matches!(pap_pipeline(&sigma, &sigma, &hilbert(), &cfg), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn strong11_cases() {
        let mu = Measure::lebesgue_on(Grid::new(p(&[1.0]), 0.125, vec![8]).unwrap()).unwrap();
        let nu = Measure::dirac(p(&[0.0]));
        let rep = strong11_singular_source(&mu, &nu, &hilbert(), &Cube::new(p(&[0.0]), 0.05).unwrap(), 4).unwrap();
        assert_eq!(rep.contradiction_ratio, f64::INFINITY);
        assert!(rep.t_integral >= rep.cone_lower_bound && rep.cone_lower_bound > 0.0);

        let leb = Measure::lebesgue_on(Grid::new(p(&[-1.0]), 0.25, vec![8]).unwrap()).unwrap();
        let rep = strong11_density_case(&leb, &leb, &hilbert(), Some(p(&[0.125])), 20).unwrap();
        assert!(rep.linear_growth && rep.contradiction, "{rep:?}");
        assert_eq!(rep.cone.terms.len(), 20);

        let atoms = Measure::from_atoms(1, vec![Atom { point: p(&[0.1]), mass: 1.0 }]).unwrap();
        let rep = strong11_singular_target(&atoms, &hilbert(), &unit_family(3)).unwrap();
        assert!(!rep.contradiction);
        assert!(strong11_singular_target(&leb, &hilbert(), &unit_family(3)).is_err());
    }

    #[test]
    fn dilation_leaves_conditions_invariant() {
        let g = Grid::new(p(&[-1.0]), 0.125, vec![16]).unwrap();
        let u = Measure::from_density(Density::from_fn(g.clone(), |x| 1.0 + x[0] * x[0]).unwrap()).unwrap();
        let v = Measure::from_density(Density::from_fn(g, |x| 2.0 + x[0]).unwrap()).unwrap();
        let fam = unit_family(3);
        let lambda = 4.0;
        let (ud, vd) = (u.dilate(lambda).unwrap(), v.dilate(lambda).unwrap());
        let sf = scaled_family(&fam, lambda);
        for pp in [1.0, 2.0, 3.0] {
            let a = ap_weights(&u, &v, pp, &fam).unwrap().constant;
            let b = ap_weights(&ud, &vd, pp, &sf).unwrap().constant;
            assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn enlarging_the_family_never_decreases(vals in proptest::collection::vec(0.1f64..4.0, 8), extra in 0u32..3) {
            let g = Grid::new(p(&[-1.0]), 0.25, vec![8]).unwrap();
            let u = Measure::from_density(Density::new(g.clone(), vals.clone()).unwrap()).unwrap();
            let v = Measure::from_density(Density::new(g, vals.iter().rev().cloned().collect()).unwrap()).unwrap();
            let small = unit_family(1);
            let big = CubeFamily::Union { members: vec![small.clone(), unit_family(1 + extra)] };
            for pp in [1.0, 2.0] {
                prop_assert!(ap_weights(&u, &v, pp, &big).unwrap().constant >= ap_weights(&u, &v, pp, &small).unwrap().constant);
                prop_assert!(ap_measures(&u, &v, 2.0, &big).unwrap().constant >= ap_measures(&u, &v, 2.0, &small).unwrap().constant);
            }
        }
    }
}
