#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use topoproj::grid_field::{GridSpec, ScalarField2D};

pub const STEP: f64 = 1e-6;

pub fn random_field(s: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField2D {
    ScalarField2D::new(s, (0..s.len()).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap()
}

/// Worst relative error between `grad` and central differences of `f` over
/// `count` random pixels where the gradient is not negligible.
pub fn fd_worst(
    rho: &ScalarField2D,
    grad: &ScalarField2D,
    mut f: impl FnMut(&ScalarField2D) -> f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let scale = grad.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0, "gradient vanishes everywhere");
    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut tries = 0;
    while probes < count {
        tries += 1;
        assert!(tries < 100 * count, "not enough informative probes");
        let i = rng.gen_range(0..rho.values.len());
        let g = grad.values[i];
        if g.abs() < 1e-3 * scale {
            continue;
        }
        let mut p = rho.clone();
        p.values[i] += STEP;
        let fp = f(&p);
        p.values[i] -= 2.0 * STEP;
        let fm = f(&p);
        let fd = (fp - fm) / (2.0 * STEP);
        let rel = (fd - g).abs() / g.abs();
        worst = worst.max(rel);
        probes += 1;
    }
    worst
}

pub fn check(
    rho: &ScalarField2D,
    grad: &ScalarField2D,
    f: impl FnMut(&ScalarField2D) -> f64,
    count: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) {
    let worst = fd_worst(rho, grad, f, count, rng);
    assert!(worst <= tol, "worst relative error {worst:e} above {tol:e}");
}
