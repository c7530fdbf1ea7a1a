//! The counterexample gallery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use weightlab_core::{
    abs_integral, cz_apply, directional_doubling_constant, doubling_constant, hilbert, Cube, CubeFamily, CzOptions,
    Density, Direction, Grid, Measure, Point, TestFunction,
};

pub const ITEMS: [(&str, &str); 3] = [
    ("remark-1", "μ = χ[−1,1]dx, ν = χ{|x|>2}dx + ∞·χ[−2,2]dx: ∫|Hf|dμ ≤ 2∫|f|dν without the weak (1,1) premise"),
    ("remark-2", "μ = δ0, ν = dy/|y|: |Hf(0)| = ∫|f|dν for f = χ[1,2]"),
    ("exp-directional", "e^{−|x|}dxdy: directionally doubling along e2 but not doubling"),
];

fn pt(x: f64) -> Point {
    Point::from_slice(&[x])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioInstance {
    pub function: String,
    pub t_integral: f64,
    pub nu_integral: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Remark1Report {
    pub bound: f64,
    pub instances: Vec<RatioInstance>,
    pub max_ratio: f64,
    /// `∫_{−1}^{1} |Hχ_[2,3]| dx` by quadrature and in closed form `6 ln 2 − 3 ln 3`.
    pub chi23_quadrature: f64,
    pub chi23_closed_form: f64,
    pub pass: bool,
}

pub fn remark1_measures() -> (Measure, Measure) {
    let mu = Measure::lebesgue_on(Grid::new(pt(-1.0), 0.125, vec![16]).expect("valid")).expect("valid");
    let g = Grid::new(pt(-8.0), 0.25, vec![64]).expect("valid");
    let nu = Measure::from_density(
        Density::from_fn(g, |x| if x[0].abs() < 2.0 { f64::INFINITY } else { 1.0 }).expect("valid"),
    )
    .expect("valid")
    .with_tail(1.0)
    .expect("valid");
    (mu, nu)
}

/// `χ_[2,3]` and `count − 1` seeded nonnegative step functions on `|x| > 2`.
pub fn remark1_functions(count: usize, seed: u64) -> Vec<TestFunction> {
    let g = Grid::new(pt(-8.0), 0.25, vec![64]).expect("valid");
    let outside = |c: usize| g.cell_center(c)[0].abs() > 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![TestFunction::from_fn("χ[2,3]", g.clone(), |x| if (2.0..3.0).contains(&x[0]) { 1.0 } else { 0.0 }).expect("valid")];
    for i in 1..count {
        let vals = (0..g.len())
            .map(|c| if outside(c) && rng.gen_bool(0.3) { rng.gen_range(0.0..3.0) } else { 0.0 })
            .collect();
        out.push(TestFunction::new(format!("step #{i}"), g.clone(), vals, None).expect("valid"));
    }
    out
}

pub fn remark1(count: usize, seed: u64) -> weightlab_core::Result<Remark1Report> {
    let (mu, nu) = remark1_measures();
    let k = hilbert();
    let opts = CzOptions { rel_tol: 1e-8, ..Default::default() };
    let mut instances = Vec::new();
    for f in remark1_functions(count, seed) {
        if f.is_zero() {
            continue;
        }
        let t_integral = abs_integral(&k, &f, None, &mu, &opts, 7, 1e-7)?.value;
        let nu_integral = f.integrate_with(Some(&nu), None, f64::abs)?;
        instances.push(RatioInstance { function: f.name.clone(), t_integral, nu_integral, ratio: t_integral / nu_integral });
    }
    let max_ratio = instances.iter().map(|i| i.ratio).fold(0.0, f64::max);
    let chi23_closed_form = 6.0 * 2f64.ln() - 3.0 * 3f64.ln();
    let chi23_quadrature = instances[0].t_integral;
    let bound = 2.0;
    Ok(Remark1Report {
        bound,
        pass: max_ratio <= bound && (chi23_quadrature - chi23_closed_form).abs() < 1e-4,
        instances,
        max_ratio,
        chi23_quadrature,
        chi23_closed_form,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Remark2Report {
    pub hf_at_zero: f64,
    pub nu_integral: f64,
    pub closed_form: f64,
    pub difference: f64,
    pub pass: bool,
}

/// Cell averages of `1/|y|` on `[−8, 8)` with step `2^{−10}`; the two cells
/// touching 0 are set to 0.
pub fn remark2_nu() -> Measure {
    let h = 2f64.powi(-10);
    let count = (16.0 / h) as usize;
    let g = Grid::new(pt(-8.0), h, vec![count]).expect("valid");
    let vals = (0..count)
        .map(|c| {
            let a = -8.0 + c as f64 * h;
            let (lo, hi) = if a >= 0.0 { (a, a + h) } else { (-(a + h), -a) };
            if lo == 0.0 {
                0.0
            } else {
                (hi / lo).ln() / h
            }
        })
        .collect();
    Measure::from_density(Density::new(g, vals).expect("valid")).expect("valid")
}

pub fn remark2() -> weightlab_core::Result<Remark2Report> {
    let nu = remark2_nu();
    let f = TestFunction::cube_indicator(&Cube::new(pt(1.5), 0.5)?);
    let hf_at_zero = cz_apply(&hilbert(), &f, None, &pt(0.0), &CzOptions { rel_tol: 1e-12, ..Default::default() })?.value.abs();
    let nu_integral = f.integrate_with(Some(&nu), None, f64::abs)?;
    let difference = (hf_at_zero - nu_integral).abs();
    Ok(Remark2Report { hf_at_zero, nu_integral, closed_form: 2f64.ln(), difference, pass: difference < 1e-6 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowScan {
    pub half_width: f64,
    pub directional: f64,
    pub full: f64,
    pub full_witness: Option<(Cube, Cube)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpDirectionalReport {
    pub windows: Vec<WindowScan>,
    /// Successive ratios of the e2-directional constants (should stay ≤ 1.05).
    pub directional_ratios: Vec<f64>,
    /// Successive ratios of the full doubling constants (should be ≥ 1.5).
    pub full_ratios: Vec<f64>,
    pub pass: bool,
}

/// `e^{−|x1|}` on `[−2L, 2L)²` for the largest window, scanned over sixth-lattice
/// cubes of `[−L, L)²` for each `L`.
pub fn exp_directional(half_widths: &[f64], step: f64) -> weightlab_core::Result<ExpDirectionalReport> {
    let big = half_widths.iter().copied().fold(0.0, f64::max) * 2.0;
    let cells = (2.0 * big / step).round() as usize;
    let g = Grid::new(Point::from_slice(&[-big, -big]), step, vec![cells, cells])?;
    let m = Measure::sampled(g, |x| (-x[0].abs()).exp())?;
    let e2 = Direction::axis(2, 1);
    let mut windows = Vec::new();
    for &l in half_widths {
        let fam = CubeFamily::Lattice { window: Cube::new(Point::zero(2), l)?, divisions: 6 };
        let dir = directional_doubling_constant(&m, &e2, &fam);
        let full = doubling_constant(&m, &fam);
        windows.push(WindowScan { half_width: l, directional: dir.constant, full: full.constant, full_witness: full.witness });
    }
    let directional_ratios: Vec<f64> = windows.windows(2).map(|w| w[1].directional / w[0].directional).collect();
    let full_ratios: Vec<f64> = windows.windows(2).map(|w| w[1].full / w[0].full).collect();
    let pass = directional_ratios.iter().all(|r| *r <= 1.05) && full_ratios.iter().all(|r| *r >= 1.5);
    Ok(ExpDirectionalReport { windows, directional_ratios, full_ratios, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remark2_is_an_equality() {
        let r = remark2().unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.hf_at_zero - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn remark1_bound_holds() {
        let r = remark1(5, 3).unwrap();
        assert!(r.pass, "{r:?}");
        // |Hf| on [−1,1] is at most ln 3 times the mass of f for supp f ⊂ {|x| > 2}
        assert!(r.max_ratio <= 3f64.ln());
    }

    #[test]
    fn exponential_separates_the_two_constants() {
        let r = exp_directional(&[2.0, 4.0, 8.0], 0.125).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.windows[0].full - 4.92).abs() < 0.05, "{r:?}");
    }
}
