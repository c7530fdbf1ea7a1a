//! Rational-arithmetic versions of the averaging-operator norms and the
//! A_p functionals on grid-aligned cubes.
//!
//! A constant `X` is carried as `X^d` where `p − 1 = c/d` in lowest terms,
//! which keeps every quantity rational whenever the weights admit exact
//! `c`-th roots of `v^{−d}` (always for `p ∈ {1, 2}` and `p = 1 + 1/d`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::geometry::{Cube, Region};
use crate::measures::{rational, CubeFamily, Measure};
use crate::operators::{box_volume_exact, cube_cells};

/// `p − 1 = c/d`, or `(0, 1)` for `p = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactExponent {
    pub c: u32,
    pub d: u32,
}

impl ExactExponent {
    pub fn of(p: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::invalid(format!("p must lie in [1, ∞), got {p}")));
        }
        let q = rational(p) - BigRational::one();
        let (c, d) = (q.numer().to_u32(), q.denom().to_u32());
        match (c, d) {
            (Some(c), Some(d)) if d <= 64 && c <= 64 => Ok(Self { c, d }),
            _ => Err(Error::invalid(format!("p = {p} has no small rational form for exact arithmetic"))),
        }
    }
}

/// An exact constant `X` stored as `X^d`; `None` is `+∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactConstant {
    pub power: u32,
    pub value: Option<BigRational>,
}

impl ExactConstant {
    pub fn to_f64(&self) -> f64 {
        match &self.value {
            None => f64::INFINITY,
            Some(v) => crate::measures::rational_to_f64(v).powf(1.0 / self.power as f64),
        }
    }

    fn max(self, other: ExactConstant) -> ExactConstant {
        match (&self.value, &other.value) {
            (None, _) => self,
            (_, None) => other,
            (Some(a), Some(b)) => {
                if b > a {
                    other
                } else {
                    self
                }
            }
        }
    }
}

/// Exact `k`-th root of a nonnegative rational, when it exists.
pub fn rational_root(x: &BigRational, k: u32) -> Option<BigRational> {
    if x.is_negative() {
        return None;
    }
    if k == 1 || x.is_zero() {
        return Some(x.clone());
    }
    let root = |n: &BigInt| {
        let r = n.nth_root(k);
        (r.pow(k) == *n).then_some(r)
    };
    Some(BigRational::new(root(x.numer())?, root(x.denom())?))
}

fn pow(x: &BigRational, k: u32) -> BigRational {
    num_traits::pow(x.clone(), k as usize)
}

fn weight_pieces(u: &Measure, v: &Measure, q: &Cube) -> Result<(Vec<BigRational>, Vec<BigRational>, Vec<BigRational>)> {
    let cells = cube_cells(u, v, q);
    let mut vol = Vec::with_capacity(cells.boxes.len());
    let mut uu = Vec::with_capacity(cells.boxes.len());
    let mut vv = Vec::with_capacity(cells.boxes.len());
    for ((b, a), w) in cells.boxes.iter().zip(&cells.u).zip(&cells.v) {
        if !(a.is_finite() && w.is_finite()) {
            return Err(Error::invalid("exact weight arithmetic needs finite cell values"));
        }
        vol.push(box_volume_exact(b));
        uu.push(rational(*a));
        vv.push(rational(*w));
    }
    Ok((vol, uu, vv))
}

/// `v^{1−p'} = v^{−d/c}` exactly, `None` for `v = 0`.
fn dual_weight(v: &BigRational, e: ExactExponent) -> Result<Option<BigRational>> {
    if v.is_zero() {
        return Ok(None);
    }
    let inv = pow(&v.recip(), e.d);
    rational_root(&inv, e.c)
        .map(Some)
        .ok_or_else(|| Error::invalid(format!("v = {v} has no exact {}-th root of v^-{}", e.c, e.d)))
}

/// `[(avg u)(avg v^{1−p'})^{p−1}]^d` on one cube, or `(avg u)/min v` for `p = 1`.
pub fn ap_cube_exact(u: &Measure, v: &Measure, p: f64, q: &Cube) -> Result<ExactConstant> {
    let e = ExactExponent::of(p)?;
    let (vol, uu, vv) = weight_pieces(u, v, q)?;
    let qv = box_volume_exact(&q.aabb());
    let avg_u: BigRational = vol.iter().zip(&uu).map(|(a, b)| a * b).sum::<BigRational>() / &qv;
    if avg_u.is_zero() {
        return Ok(ExactConstant { power: e.d, value: Some(BigRational::zero()) });
    }
    if e.c == 0 {
        let vmin = vv.iter().min().expect("nonempty cube").clone();
        let value = (!vmin.is_zero()).then(|| avg_u / vmin);
        return Ok(ExactConstant { power: 1, value });
    }
    let mut avg_w = BigRational::zero();
    for (a, b) in vol.iter().zip(&vv) {
        match dual_weight(b, e)? {
            Some(w) => avg_w += a * w,
            None => return Ok(ExactConstant { power: e.d, value: None }),
        }
    }
    avg_w /= &qv;
    Ok(ExactConstant { power: e.d, value: Some(pow(&avg_u, e.d) * pow(&avg_w, e.c)) })
}

/// `‖A_Q f*‖^p / ‖f*‖^p` raised to the power `d`, evaluated on the extremal
/// function: `f* = v^{1−p'}χ_Q` for `p > 1`, the indicator of the least-`v`
/// piece for `p = 1`. The measure of `Q` is taken from `u` directly.
pub fn avg_norm_power_exact(u: &Measure, v: &Measure, p: f64, q: &Cube) -> Result<ExactConstant> {
    let e = ExactExponent::of(p)?;
    let (vol, _, vv) = weight_pieces(u, v, q)?;
    let qv = box_volume_exact(&q.aabb());
    let uq = u.exact_measure(&Region::Cube(*q))?.ok_or_else(|| Error::invalid("u(Q) is infinite"))?;
    if uq.is_zero() {
        return Ok(ExactConstant { power: e.d.max(1), value: Some(BigRational::zero()) });
    }
    if e.c == 0 {
        let (i, vmin) = vv.iter().enumerate().min_by(|a, b| a.1.cmp(b.1)).expect("nonempty cube");
        if vmin.is_zero() {
            return Ok(ExactConstant { power: 1, value: None });
        }
        // ‖A_Q χ_S‖_{L^1(u)} = u(Q)|S|/|Q|, ‖χ_S‖_{L^1(v)} = v|S|
        let lhs = &uq * &vol[i] / &qv;
        let rhs = vmin * &vol[i];
        return Ok(ExactConstant { power: 1, value: Some(lhs / rhs) });
    }
    let mut f = Vec::with_capacity(vv.len());
    for b in &vv {
        match dual_weight(b, e)? {
            Some(w) => f.push(w),
            None => return Ok(ExactConstant { power: e.d, value: None }),
        }
    }
    let avg_f: BigRational = vol.iter().zip(&f).map(|(a, b)| a * b).sum::<BigRational>() / &qv;
    // ∫ f^p dv with f^p = (f^{c+d})^{1/d}
    let mut norm_f = BigRational::zero();
    for ((a, fv), w) in vol.iter().zip(&f).zip(&vv) {
        let fp = rational_root(&pow(fv, e.c + e.d), e.d).ok_or_else(|| Error::invalid("f*^p is not rational"))?;
        norm_f += fp * w * a;
    }
    // (u(Q)·avg(f)^p / ∫f^p dv)^d
    let value = pow(&uq, e.d) * pow(&avg_f, e.c + e.d) / pow(&norm_f, e.d);
    Ok(ExactConstant { power: e.d, value: Some(value) })
}

/// `[μ(Q)/|Q|·(σ(Q)/|Q|)^{p−1}]^d`, 0 when either mass vanishes.
pub fn ap_measures_cube_exact(mu: &Measure, sigma: &Measure, p: f64, q: &Cube) -> Result<ExactConstant> {
    let e = ExactExponent::of(p)?;
    let qv = box_volume_exact(&q.aabb());
    let region = Region::Cube(*q);
    let (m, s) = (mu.exact_measure(&region)?, sigma.exact_measure(&region)?);
    let value = match (m, s) {
        (Some(m), _) if m.is_zero() => Some(BigRational::zero()),
        (_, Some(s)) if s.is_zero() => Some(BigRational::zero()),
        (Some(m), Some(s)) => Some(pow(&(m / &qv), e.d) * pow(&(s / &qv), e.c)),
        _ => None,
    };
    Ok(ExactConstant { power: e.d, value })
}

/// `‖A_{Q,σ}χ_Q‖^p_{L^p(μ)} / ‖χ_Q‖^p_{L^p(σ)}` raised to the power `d`.
pub fn avg_sigma_norm_power_exact(mu: &Measure, sigma: &Measure, p: f64, q: &Cube) -> Result<ExactConstant> {
    let e = ExactExponent::of(p)?;
    let one = crate::operators::TestFunction::cube_indicator(q);
    let avg = crate::operators::avg_sigma_exact(q, Some(sigma), &one)?;
    let mq = mu.exact_measure(&Region::Cube(*q))?;
    let sq = sigma.exact_measure(&Region::Cube(*q))?;
    let value = match (avg, mq, sq) {
        (_, Some(m), _) if m.is_zero() => Some(BigRational::zero()),
        (_, _, Some(s)) if s.is_zero() => Some(BigRational::zero()),
        (Some(a), Some(m), Some(s)) => {
            // (m·a^p / s)^d = m^d a^{c+d} / s^d
            Some(pow(&m, e.d) * pow(&a, e.c + e.d) / pow(&s, e.d))
        }
        _ => None,
    };
    Ok(ExactConstant { power: e.d, value })
}

fn sup_over(family: &CubeFamily, f: impl Fn(&Cube) -> Result<ExactConstant>) -> Result<ExactConstant> {
    let mut best: Option<ExactConstant> = None;
    for q in family.cubes() {
        let v = f(&q)?;
        best = Some(match best {
            None => v,
            Some(b) => b.max(v),
        });
    }
    best.ok_or_else(|| Error::invalid("empty cube family"))
}

pub fn ap_weights_exact(u: &Measure, v: &Measure, p: f64, family: &CubeFamily) -> Result<ExactConstant> {
    sup_over(family, |q| ap_cube_exact(u, v, p, q))
}

pub fn avg_norm_sup_exact(u: &Measure, v: &Measure, p: f64, family: &CubeFamily) -> Result<ExactConstant> {
    sup_over(family, |q| avg_norm_power_exact(u, v, p, q))
}

pub fn ap_measures_exact(mu: &Measure, sigma: &Measure, p: f64, family: &CubeFamily) -> Result<ExactConstant> {
    sup_over(family, |q| ap_measures_cube_exact(mu, sigma, p, q))
}

pub fn avg_sigma_norm_sup_exact(mu: &Measure, sigma: &Measure, p: f64, family: &CubeFamily) -> Result<ExactConstant> {
    sup_over(family, |q| avg_sigma_norm_power_exact(mu, sigma, p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Grid, Point};
    use crate::measures::{Atom, Density};

    fn weights(u: &[f64], v: &[f64]) -> (Measure, Measure, Cube) {
        let g = Grid::new(Point::from_slice(&[0.0]), 1.0 / u.len() as f64, vec![u.len()]).unwrap();
        (
            Measure::from_density(Density::new(g.clone(), u.to_vec()).unwrap()).unwrap(),
            Measure::from_density(Density::new(g, v.to_vec()).unwrap()).unwrap(),
            Cube::new(Point::from_slice(&[0.5]), 0.5).unwrap(),
        )
    }

    #[test]
    fn exponents() {
        assert_eq!(ExactExponent::of(2.0).unwrap(), ExactExponent { c: 1, d: 1 });
        assert_eq!(ExactExponent::of(1.5).unwrap(), ExactExponent { c: 1, d: 2 });
        assert_eq!(ExactExponent::of(3.0).unwrap(), ExactExponent { c: 2, d: 1 });
        assert_eq!(ExactExponent::of(1.0).unwrap(), ExactExponent { c: 0, d: 1 });
        assert!(ExactExponent::of(1.1).is_err());
    }

    #[test]
    fn roots() {
        let x = BigRational::new(BigInt::from(9), BigInt::from(4));
        assert_eq!(rational_root(&x, 2), Some(BigRational::new(3.into(), 2.into())));
        assert_eq!(rational_root(&BigRational::from_integer(2.into()), 2), None);
    }

    #[test]
    fn both_routes_agree_on_the_two_cell_example() {
        let (u, v, q) = weights(&[1.0, 3.0], &[2.0, 1.0]);
        let a = ap_cube_exact(&u, &v, 2.0, &q).unwrap();
        let b = avg_norm_power_exact(&u, &v, 2.0, &q).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value, Some(BigRational::new(3.into(), 2.into())));
        for p in [1.0, 1.5, 3.0] {
            let (u, v, q) = weights(&[1.0, 3.0, 0.5, 2.0], &[4.0, 1.0, 0.25, 9.0]);
            assert_eq!(ap_cube_exact(&u, &v, p, &q).unwrap(), avg_norm_power_exact(&u, &v, p, &q).unwrap(), "p={p}");
        }
    }

    #[test]
    fn zero_weight_is_infinite_in_both_routes() {
        let (u, v, q) = weights(&[1.0, 1.0], &[0.0, 1.0]);
        for p in [1.0, 2.0] {
            assert_eq!(ap_cube_exact(&u, &v, p, &q).unwrap().value, None);
            assert_eq!(avg_norm_power_exact(&u, &v, p, &q).unwrap().value, None);
        }
    }

    #[test]
    fn measure_routes_agree_with_atoms() {
        let g = Grid::new(Point::from_slice(&[0.0]), 0.25, vec![4]).unwrap();
        let mu = Measure::from_density(Density::new(g.clone(), vec![1.0, 0.5, 2.0, 1.0]).unwrap()).unwrap();
        let sigma = Measure::lebesgue_on(g).unwrap().with_atoms([Atom { point: Point::from_slice(&[0.3]), mass: 0.5 }]).unwrap();
        let fam = CubeFamily::dyadic(Cube::new(Point::from_slice(&[0.5]), 0.5).unwrap(), 2);
        for p in [1.0, 1.5, 2.0, 3.0] {
            assert_eq!(ap_measures_exact(&mu, &sigma, p, &fam).unwrap(), avg_sigma_norm_sup_exact(&mu, &sigma, p, &fam).unwrap());
        }
    }
}
