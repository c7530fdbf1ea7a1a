//! One-dimensional adaptive Simpson and a bracketing box integrator for
//! radially monotone weights.

use crate::geometry::{Aabb, BoxClass, Point, Region};
use crate::measures::{MeasureValue, RegionOptions};

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || m <= a || m >= b {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `∫_region w(|x − centre|) dm` for a nonincreasing `w`, where `mass(B)`
/// is the (possibly signed) continuous mass of a box. Every box contributes a
/// rigorous bracket `[w(far), w(near)]·mass`; boxes are refined until the
/// bracket total is below `rel_tol` of the estimate or the budget runs out.
pub fn radial_bracket(
    region: &Region,
    start: Aabb,
    centre: &Point,
    w: &dyn Fn(f64) -> f64,
    mass: &dyn Fn(&Aabb) -> f64,
    opts: &RegionOptions,
) -> MeasureValue {
    struct Item {
        b: Aabb,
        est: f64,
        width: f64,
    }
    let eval = |b: Aabb| -> Option<Item> {
        let class = region.classify(&b);
        if class == BoxClass::Outside {
            return None;
        }
        let m = mass(&b);
        if m == 0.0 {
            return None;
        }
        let near = w(b.nearest_distance(centre));
        let far = w(b.farthest_distance(centre));
        let mid = w(b.center().dist(centre));
        match class {
            BoxClass::Inside => {
                let (lo, hi) = if m >= 0.0 { (far * m, near * m) } else { (near * m, far * m) };
                Some(Item { b, est: mid * m, width: hi - lo })
            }
            _ => {
                let est = if region.contains(&b.center()) { mid * m } else { 0.0 };
                Some(Item { b, est, width: (near * m).abs() })
            }
        }
    };
    let mut items: Vec<Item> = eval(start).into_iter().collect();
    let children = 1usize << start.dim();
    for _ in 0..opts.max_depth {
        let total: f64 = items.iter().map(|i| i.est).sum();
        let width: f64 = items.iter().map(|i| i.width).sum();
        if !(width > opts.rel_tol * total.abs()) || !width.is_finite() {
            break;
        }
        let cut = width / (2.0 * items.len() as f64);
        let mut split: Vec<bool> = items.iter().map(|i| i.width > cut).collect();
        let splitting = split.iter().filter(|s| **s).count();
        if items.len() + splitting * (children - 1) > opts.max_boxes {
            // split only the widest boxes that still fit the budget
            let room = opts.max_boxes.saturating_sub(items.len()) / (children - 1);
            if room == 0 {
                break;
            }
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.sort_by(|&x, &y| items[y].width.total_cmp(&items[x].width));
            split = vec![false; items.len()];
            for &i in order.iter().take(room) {
                split[i] = true;
            }
        }
        let mut next = Vec::with_capacity(items.len() + splitting * children);
        for (it, s) in items.into_iter().zip(split) {
            if s {
                next.extend(it.b.split().filter_map(&eval));
            } else {
                next.push(it);
            }
        }
        items = next;
    }
    MeasureValue { value: items.iter().map(|i| i.est).sum(), error: items.iter().map(|i| i.width).sum() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Ball;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| 1.0 / x, 1.0, 2.0, 1e-14);
        assert!((v - 2f64.ln()).abs() < 1e-13);
        let v = adaptive_simpson(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bracket_contains_the_true_value() {
        let c = Point::from_slice(&[0.0, 0.0]);
        let region = Region::Ball(Ball::new(c, 1.0).unwrap());
        let start = Aabb::new(Point::from_slice(&[-1.0, -1.0]), Point::from_slice(&[1.0, 1.0]));
        // ∫_{B(0,1)} (1+|x|)^{-2} dx = 2π (ln 2 − 1/2)
        let truth = 2.0 * std::f64::consts::PI * (2f64.ln() - 0.5);
        let r = radial_bracket(&region, start, &c, &|d| (1.0 + d).powi(-2), &|b| b.volume(), &RegionOptions::default());
        assert!((r.value - truth).abs() <= r.error, "{r:?} vs {truth}");
        // the bound is rigorous but pessimistic on boundary boxes
        assert!(r.error < 2e-2, "{r:?}");
        assert!((r.value - truth).abs() < 1e-4);
    }
}
