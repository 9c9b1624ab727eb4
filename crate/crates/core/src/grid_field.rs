//! Uniform-grid scalar fields and the conic smoothing filter.
//!
//! Fields are stored row-major with `y` as the outer index, so pixel
//! `(ix, iy)` lives at `iy * nx + ix`. Pixel centers sit at
//! `((ix + 0.5) dx, (iy + 0.5) dy)` in physical coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Clamped,
}

/// Shape, pixel size and boundary handling of a square-pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, boundary: Boundary) -> Result<Self> {
        let spec = GridSpec {
            nx,
            ny,
            dx,
            boundary,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A periodic `n x n` unit cell of side 1.
    pub fn unit_cell(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0 / n as f64, Boundary::Periodic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 3x3, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "pixel size must be positive, got {}",
                self.dx
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Physical coordinates of the center of pixel `(ix, iy)`.
    #[inline]
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.dx, (iy as f64 + 0.5) * self.dx)
    }
}

/// A real value per pixel of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch {
                expected: spec.len(),
                got: values.len(),
            });
        }
        Ok(ScalarField2D { spec, values })
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        ScalarField2D {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    /// Samples `f(x, y)` at every pixel center.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let (x, y) = spec.center(ix, iy);
                values.push(f(x, y));
            }
        }
        ScalarField2D { spec, values }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.spec.index(ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        let i = self.spec.index(ix, iy);
        self.values[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField2D {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &ScalarField2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Cyclic shift by `(sx, sy)` pixels.
    pub fn roll(&self, sx: usize, sy: usize) -> Self {
        let s = self.spec;
        let mut out = Self::zeros(s);
        for iy in 0..s.ny {
            for ix in 0..s.nx {
                out.set((ix + sx) % s.nx, (iy + sy) % s.ny, self.get(ix, iy));
            }
        }
        out
    }
}

/// Normalized taps of the conic filter `max(0, 1 - r / R)` sampled at
/// pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicKernel {
    pub radius_px: f64,
    half: isize,
    /// Nonzero taps as `(dx, dy, weight)`.
    taps: Vec<(isize, isize, f64)>,
}

impl ConicKernel {
    pub fn new(radius_px: f64) -> Result<Self> {
        if !(radius_px.is_finite() && radius_px >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "conic filter radius must be at least 1 pixel, got {radius_px}"
            )));
        }
        let half = radius_px.floor() as isize;
        let mut taps = Vec::new();
        for j in -half..=half {
            for i in -half..=half {
                let r = ((i * i + j * j) as f64).sqrt();
                let w = 1.0 - r / radius_px;
                if w > 0.0 {
                    taps.push((i, j, w));
                }
            }
        }
        let total: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= total;
        }
        Ok(ConicKernel {
            radius_px,
            half,
            taps,
        })
    }

    /// Normalized weight at pixel offset `(i, j)`; zero outside the support.
    pub fn weight(&self, i: isize, j: isize) -> f64 {
        if i.abs() > self.half || j.abs() > self.half {
            return 0.0;
        }
        self.taps
            .iter()
            .find(|t| t.0 == i && t.1 == j)
            .map_or(0.0, |t| t.2)
    }

    pub fn taps(&self) -> &[(isize, isize, f64)] {
        &self.taps
    }

    pub fn half_width(&self) -> isize {
        self.half
    }
}

pub fn make_conic_kernel(radius_px: f64) -> Result<ConicKernel> {
    ConicKernel::new(radius_px)
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Sum of in-domain tap weights around each pixel (clamped boundaries).
fn clamped_norms(spec: &GridSpec, k: &ConicKernel) -> Vec<f64> {
    let (nx, ny) = (spec.nx as isize, spec.ny as isize);
    let mut norms = vec![0.0; spec.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let mut s = 0.0;
            for &(i, j, w) in &k.taps {
                let (x, y) = (ix + i, iy + j);
                if x >= 0 && x < nx && y >= 0 && y < ny {
                    s += w;
                }
            }
            norms[(iy * nx + ix) as usize] = s;
        }
    }
    norms
}

/// Applies the conic filter, respecting the grid's boundary mode.
///
/// Periodic grids wrap. Clamped grids drop out-of-domain taps and
/// renormalize the remaining ones, so constants are preserved.
pub fn filter(rho: &ScalarField2D, k: &ConicKernel) -> ScalarField2D {
    let spec = rho.spec;
    let (nx, ny) = (spec.nx as isize, spec.ny as isize);
    let mut out = vec![0.0; spec.len()];
    match spec.boundary {
        Boundary::Periodic => {
            for iy in 0..ny {
                for ix in 0..nx {
                    let mut s = 0.0;
                    for &(i, j, w) in &k.taps {
                        s += w * rho.values[wrap(iy + j, spec.ny) * spec.nx + wrap(ix + i, spec.nx)];
                    }
                    out[(iy * nx + ix) as usize] = s;
                }
            }
        }
        Boundary::Clamped => {
            let norms = clamped_norms(&spec, k);
            for iy in 0..ny {
                for ix in 0..nx {
                    let mut s = 0.0;
                    for &(i, j, w) in &k.taps {
                        let (x, y) = (ix + i, iy + j);
                        if x >= 0 && x < nx && y >= 0 && y < ny {
                            s += w * rho.values[(y * nx + x) as usize];
                        }
                    }
                    let p = (iy * nx + ix) as usize;
                    out[p] = s / norms[p];
                }
            }
        }
    }
    ScalarField2D { spec, values: out }
}

/// Exact transpose of [`filter`].
pub fn filter_transpose(cotangent: &ScalarField2D, k: &ConicKernel) -> ScalarField2D {
    let spec = cotangent.spec;
    match spec.boundary {
        // symmetric circulant operator
        Boundary::Periodic => filter(cotangent, k),
        Boundary::Clamped => {
            let (nx, ny) = (spec.nx as isize, spec.ny as isize);
            let norms = clamped_norms(&spec, k);
            let mut out = vec![0.0; spec.len()];
            for iy in 0..ny {
                for ix in 0..nx {
                    let p = (iy * nx + ix) as usize;
                    let g = cotangent.values[p] / norms[p];
                    for &(i, j, w) in &k.taps {
                        let (x, y) = (ix + i, iy + j);
                        if x >= 0 && x < nx && y >= 0 && y < ny {
                            out[(y * nx + x) as usize] += w * g;
                        }
                    }
                }
            }
            ScalarField2D { spec, values: out }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: GridSpec, rng: &mut impl Rng) -> ScalarField2D {
        let values = (0..spec.len()).map(|_| rng.gen::<f64>()).collect();
        ScalarField2D::new(spec, values).unwrap()
    }

    #[test]
    fn radius_one_is_identity() {
        let k = make_conic_kernel(1.0).unwrap();
        assert_eq!(k.taps(), &[(0, 0, 1.0)]);
        let spec = GridSpec::new(7, 5, 0.1, Boundary::Clamped).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_field(spec, &mut rng);
        assert_eq!(filter(&rho, &k), rho);
    }

    #[test]
    fn radius_below_one_rejected() {
        assert!(make_conic_kernel(0.5).is_err());
        assert!(make_conic_kernel(f64::NAN).is_err());
    }

    #[test]
    fn radius_two_taps_by_hand() {
        let k = make_conic_kernel(2.0).unwrap();
        let diag = 1.0 - 2f64.sqrt() / 2.0;
        let total = 1.0 + 4.0 * 0.5 + 4.0 * diag;
        assert!((k.weight(0, 0) - 1.0 / total).abs() < 1e-15);
        assert!((k.weight(1, 0) - 0.5 / total).abs() < 1e-15);
        assert!((k.weight(0, -1) - 0.5 / total).abs() < 1e-15);
        assert!((k.weight(1, 1) - diag / total).abs() < 1e-15);
        assert_eq!(k.weight(2, 0), 0.0);
        assert_eq!(k.weight(3, 3), 0.0);
        let sum: f64 = k.taps().iter().map(|t| t.2).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radius_five_support() {
        let k = make_conic_kernel(5.0).unwrap();
        let sum: f64 = k.taps().iter().map(|t| t.2).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(k.taps().iter().all(|&(i, j, _)| ((i * i + j * j) as f64) < 25.0));
        // radial symmetry
        assert_eq!(k.weight(3, 1), k.weight(-1, 3));
    }

    #[test]
    fn constants_preserved() {
        let k = make_conic_kernel(3.5).unwrap();
        for b in [Boundary::Periodic, Boundary::Clamped] {
            let spec = GridSpec::new(9, 12, 0.5, b).unwrap();
            let out = filter(&ScalarField2D::constant(spec, 0.37), &k);
            assert!(out.values.iter().all(|v| (v - 0.37).abs() < 1e-14));
        }
    }

    #[test]
    fn delta_gives_kernel_cone() {
        let spec = GridSpec::new(11, 11, 1.0, Boundary::Periodic).unwrap();
        let k = make_conic_kernel(2.0).unwrap();
        let mut rho = ScalarField2D::zeros(spec);
        rho.set(5, 5, 1.0);
        let out = filter(&rho, &k);
        for iy in 0..11 {
            for ix in 0..11 {
                let w = k.weight(ix as isize - 5, iy as isize - 5);
                assert!((out.get(ix, iy) - w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transpose_dot_product_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = make_conic_kernel(2.7).unwrap();
        for b in [Boundary::Periodic, Boundary::Clamped] {
            let spec = GridSpec::new(10, 8, 1.0, b).unwrap();
            for _ in 0..100 {
                let x = random_field(spec, &mut rng);
                let y = random_field(spec, &mut rng);
                let lhs = filter(&x, &k).dot(&y);
                let rhs = x.dot(&filter_transpose(&y, &k));
                assert!((lhs - rhs).abs() < 1e-12, "{b:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn clamped_corner_transpose_matches_dense_matrix() {
        let spec = GridSpec::new(5, 5, 1.0, Boundary::Clamped).unwrap();
        let k = make_conic_kernel(2.0).unwrap();
        let n = spec.len();
        // dense forward matrix, column by column
        let mut a = vec![vec![0.0; n]; n];
        for c in 0..n {
            let mut e = ScalarField2D::zeros(spec);
            e.values[c] = 1.0;
            let col = filter(&e, &k);
            for r in 0..n {
                a[r][c] = col.values[r];
            }
        }
        let mut y = ScalarField2D::zeros(spec);
        y.set(0, 0, 1.0);
        let t = filter_transpose(&y, &k);
        // transpose applied to a corner delta is the forward row of the corner
        for c in 0..n {
            assert!((t.values[c] - a[0][c]).abs() < 1e-15);
        }
        assert!((t.values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_transpose_equals_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GridSpec::new(13, 9, 1.0, Boundary::Periodic).unwrap();
        let k = make_conic_kernel(4.0).unwrap();
        let x = random_field(spec, &mut rng);
        assert_eq!(filter(&x, &k), filter_transpose(&x, &k));
    }

    #[test]
    fn rejects_small_grids() {
        assert!(GridSpec::new(2, 5, 1.0, Boundary::Periodic).is_err());
        assert!(GridSpec::new(5, 5, 0.0, Boundary::Periodic).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn filter_is_linear_and_convex(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0, clamped in any::<bool>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bnd = if clamped { Boundary::Clamped } else { Boundary::Periodic };
                let spec = GridSpec::new(9, 7, 1.0, bnd).unwrap();
                let k = make_conic_kernel(2.5).unwrap();
                let x = random_field(spec, &mut rng);
                let y = random_field(spec, &mut rng);
                let combo = ScalarField2D::new(spec, x.values.iter().zip(&y.values).map(|(p, q)| a * p + b * q).collect()).unwrap();
                let lhs = filter(&combo, &k);
                let fx = filter(&x, &k);
                let fy = filter(&y, &k);
                for i in 0..spec.len() {
                    prop_assert!((lhs.values[i] - (a * fx.values[i] + b * fy.values[i])).abs() < 1e-12);
                    prop_assert!(fx.values[i] >= x.min() - 1e-15 && fx.values[i] <= x.max() + 1e-15);
                }
            }
        }
    }
}
