use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use weightlab_core::{
    ap_weights, choose_separation, cz_apply, hilbert, perturbation_check, riesz, separated_pair, Cube, CubeFamily,
    CzOptions, Grid, Measure, Point, TestFunction,
};

fn kernel_eval(c: &mut Criterion) {
    let h = hilbert();
    let r = riesz(1, 3).unwrap();
    let (x1, y1) = (Point::from_slice(&[0.3]), Point::from_slice(&[-1.7]));
    let (x3, y3) = (Point::from_slice(&[0.3, 0.1, -0.2]), Point::from_slice(&[1.0, 2.0, 0.5]));
    c.bench_function("hilbert eval", |b| b.iter(|| h.eval(black_box(&x1), black_box(&y1))));
    c.bench_function("riesz_1 n=3 eval", |b| b.iter(|| r.eval(black_box(&x3), black_box(&y3))));
}

fn perturbation(c: &mut Criterion) {
    let k = hilbert();
    let sep = choose_separation(k.c0, k.delta, k.a, 1).unwrap();
    let qy = Cube::new(Point::from_slice(&[0.0]), 1.0).unwrap();
    let qx = separated_pair(&qy, &k.u0, &sep).unwrap();
    c.bench_function("perturbation 1e4 samples", |b| b.iter(|| perturbation_check(&k, &qx, &qy, 10_000, 1).unwrap()));
}

fn quadrature(c: &mut Criterion) {
    let k = hilbert();
    let f = TestFunction::cube_indicator(&Cube::new(Point::from_slice(&[2.5]), 0.5).unwrap());
    let x = Point::from_slice(&[0.0]);
    let opts = CzOptions::default();
    c.bench_function("hilbert chi[2,3] at 0", |b| b.iter(|| cz_apply(&k, &f, None, black_box(&x), &opts).unwrap()));
}

fn dyadic_ap(c: &mut Criterion) {
    let g = Grid::new(Point::from_slice(&[-1.0]), 2f64.powi(-9), vec![1 << 10]).unwrap();
    let w = Measure::sampled(g, |x| x[0].abs().sqrt()).unwrap();
    let fam = CubeFamily::dyadic(Cube::new(Point::from_slice(&[0.0]), 1.0).unwrap(), 10);
    c.bench_function("A_2 dyadic level 10", |b| b.iter(|| ap_weights(&w, &w, 2.0, &fam).unwrap()));
}

criterion_group!(benches, kernel_eval, perturbation, quadrature, dyadic_ap);
criterion_main!(benches);
