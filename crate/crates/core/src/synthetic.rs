//! Analytic filtered fields with exact jets: a 1D parabola describing two
//! approaching flat interfaces, and Cassini ovals whose two lobes touch at
//! the origin when `e = |b / a| = 1`.
//!
//! Coordinates are centered on the grid: pixel `(ix, iy)` sits at
//! `((ix - (nx-1)/2) dx, (iy - (ny-1)/2) dx)`, so odd grids have a pixel at
//! the origin.

use std::path::Path;

use serde::Serialize;

use crate::calculus::{jet, Jet, JetField};
use crate::error::{Error, Result};
use crate::grid_field::{GridSpec, ScalarField2D};
use crate::projection::{project_pixel, Method, ProjectionConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaSpec {
    pub alpha: f64,
    pub r_tilde: f64,
}

impl ParabolaSpec {
    /// `R̃ = 6 R̂`.
    pub fn with_default_radius(alpha: f64, r_hat: f64) -> Self {
        ParabolaSpec {
            alpha,
            r_tilde: 6.0 * r_hat,
        }
    }

    pub fn jet_at(&self, x: f64) -> Jet {
        let k = 1.0 / (self.r_tilde * self.r_tilde);
        Jet {
            value: self.alpha + 0.5 * x * x * k,
            gx: x * k,
            hxx: k,
            ..Jet::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CassiniSpec {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
}

impl CassiniSpec {
    /// Unit focal half-distance and `b = e`.
    pub fn from_e(e: f64, eta: f64) -> Self {
        CassiniSpec { a: 1.0, b: e, eta }
    }

    pub fn e(&self) -> f64 {
        (self.b / self.a).abs()
    }

    pub fn jet_at(&self, x: f64, y: f64) -> Jet {
        let a2 = self.a * self.a;
        let r2 = x * x + y * y;
        let p = (x - self.a).powi(2) + y * y;
        let q = (x + self.a).powi(2) + y * y;
        Jet {
            value: p * q - self.b.powi(4) + self.eta,
            gx: 4.0 * x * (r2 - a2),
            gy: 4.0 * y * (r2 + a2),
            hxx: 12.0 * x * x + 4.0 * y * y - 4.0 * a2,
            hxy: 8.0 * x * y,
            hyy: 4.0 * x * x + 12.0 * y * y + 4.0 * a2,
        }
    }
}

/// Centered coordinates of pixel `(ix, iy)`.
pub fn centered(spec: &GridSpec, ix: usize, iy: usize) -> (f64, f64) {
    (
        (ix as f64 - (spec.nx as f64 - 1.0) / 2.0) * spec.dx,
        (iy as f64 - (spec.ny as f64 - 1.0) / 2.0) * spec.dx,
    )
}

fn sample(grid: GridSpec, f: impl Fn(f64, f64) -> Jet) -> (ScalarField2D, JetField) {
    let mut jets = JetField::zeros(grid);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (x, y) = centered(&grid, ix, iy);
            jets.set(grid.index(ix, iy), f(x, y));
        }
    }
    let field = ScalarField2D {
        spec: grid,
        values: jets.value.clone(),
    };
    (field, jets)
}

/// `ρ̃ = α + ½ (x / R̃)²`, invariant along `y`.
pub fn parabola_field(spec: &ParabolaSpec, grid: GridSpec) -> (ScalarField2D, JetField) {
    sample(grid, |x, _| spec.jet_at(x))
}

/// `ρ̃ = [(x-a)² + y²][(x+a)² + y²] - b⁴ + η`.
pub fn cassini_field(spec: &CassiniSpec, grid: GridSpec) -> (ScalarField2D, JetField) {
    sample(grid, |x, y| spec.jet_at(x, y))
}

fn center_index(grid: &GridSpec) -> Result<usize> {
    if grid.nx % 2 == 0 || grid.ny % 2 == 0 {
        return Err(Error::InvalidGrid(format!(
            "sweeps need a pixel at the origin; use odd dimensions, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    Ok(grid.index(grid.nx / 2, grid.ny / 2))
}

/// One row of a parameter sweep evaluated at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub ssp1: f64,
    pub ssp2: f64,
    /// Central first difference of the SSP2 value in the parameter.
    pub ssp2_d1: f64,
    /// Central second difference of the SSP2 value in the parameter.
    pub ssp2_d2: f64,
}

/// Projects the filtered field produced by `field_at(param)` through the
/// numerical jet and reads the value at the origin pixel.
fn origin_value(
    grid: GridSpec,
    field_at: &impl Fn(f64) -> ScalarField2D,
    param: f64,
    cfg: &ProjectionConfig,
    method: Method,
) -> Result<f64> {
    let c = center_index(&grid)?;
    let j = jet(&field_at(param));
    Ok(project_pixel(&j.at(c), &cfg.with_method(method)))
}

fn sweep(
    cfg: &ProjectionConfig,
    grid: GridSpec,
    params: &[f64],
    step: f64,
    field_at: impl Fn(f64) -> ScalarField2D,
) -> Result<Vec<SweepRow>> {
    params
        .iter()
        .map(|&p| {
            let v2 = |q| origin_value(grid, &field_at, q, cfg, Method::Ssp2);
            let (lo, mid, hi) = (v2(p - step)?, v2(p)?, v2(p + step)?);
            Ok(SweepRow {
                param: p,
                ssp1: origin_value(grid, &field_at, p, cfg, Method::Ssp1)?,
                ssp2: mid,
                ssp2_d1: (hi - lo) / (2.0 * step),
                ssp2_d2: (hi - 2.0 * mid + lo) / (step * step),
            })
        })
        .collect()
}

/// SSP1 and SSP2 values at `x = 0` of the parabola as `α` varies, with
/// finite-difference derivatives of the SSP2 value using step `step`.
pub fn sweep_alpha(
    cfg: &ProjectionConfig,
    grid: GridSpec,
    r_tilde: f64,
    alphas: &[f64],
    step: f64,
) -> Result<Vec<SweepRow>> {
    sweep(cfg, grid, alphas, step, |alpha| {
        parabola_field(&ParabolaSpec { alpha, r_tilde }, grid).0
    })
}

/// SSP1 and SSP2 values at `(0, 0)` of the Cassini field (`a = 1`) as `e`
/// varies.
pub fn sweep_cassini(cfg: &ProjectionConfig, grid: GridSpec, e_values: &[f64], step: f64) -> Result<Vec<SweepRow>> {
    let eta = cfg.eta;
    sweep(cfg, grid, e_values, step, |e| {
        cassini_field(&CassiniSpec::from_e(e, eta), grid).0
    })
}

/// Uniform grid of `n` points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Projection profile across the parabola at normalized positions `x̂ = x/R̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub x_hat: f64,
    pub tanh: f64,
    pub ssp1: f64,
    pub ssp2: f64,
}

pub fn parabola_profile(cfg: &ProjectionConfig, spec: &ParabolaSpec, x_hats: &[f64]) -> Vec<ProfileRow> {
    x_hats
        .iter()
        .map(|&x_hat| {
            let j = spec.jet_at(x_hat * cfg.r_hat);
            ProfileRow {
                x_hat,
                tanh: project_pixel(&j, &cfg.with_method(Method::Tanh)),
                ssp1: project_pixel(&j, &cfg.with_method(Method::Ssp1)),
                ssp2: project_pixel(&j, &cfg.with_method(Method::Ssp2)),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_owned(),
        msg: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            path: path.to_owned(),
            msg: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_field::Boundary;
    use crate::projection::{signed_distance_hat, smooth_step, DistanceOrder};

    fn strip(n: usize, dx: f64) -> GridSpec {
        GridSpec::new(n, 5, dx, Boundary::Clamped).unwrap()
    }

    #[test]
    fn parabola_merge_point() {
        let p = ParabolaSpec::with_default_radius(0.5, 0.5);
        let j = p.jet_at(0.0);
        assert_eq!(j.value, 0.5);
        assert_eq!(j.gx, 0.0);
        // alpha = 0: level set 1/2 at x = ±R̃
        let p0 = ParabolaSpec { alpha: 0.0, r_tilde: 3.0 };
        assert!((p0.jet_at(3.0).value - 0.5).abs() < 1e-15);
        assert!((p0.jet_at(-3.0).value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parabola_second_distance_at_origin() {
        let r_hat = 0.5;
        let cfg = ProjectionConfig::new(f64::INFINITY, 0.5, r_hat, Method::Ssp2).unwrap();
        for &alpha in &[0.49, 0.5, 0.505] {
            let p = ParabolaSpec::with_default_radius(alpha, r_hat);
            let d = signed_distance_hat(&p.jet_at(0.0), &cfg, DistanceOrder::Second) * r_hat;
            let expected = (0.5 - alpha) * p.r_tilde.powi(2) / r_hat;
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_and_numeric_parabola_jets_agree() {
        let g = strip(41, 0.5);
        let (f, exact) = parabola_field(&ParabolaSpec { alpha: 0.2, r_tilde: 3.0 }, g);
        let num = jet(&f);
        for i in 0..g.len() {
            let (a, b) = (num.at(i), exact.at(i));
            assert!((a.gx - b.gx).abs() < 1e-10 && (a.hxx - b.hxx).abs() < 1e-10);
            assert!(a.gy.abs() < 1e-12 && a.hyy.abs() < 1e-10 && a.hxy.abs() < 1e-12);
        }
    }

    #[test]
    fn cassini_contact_and_sign() {
        let c = CassiniSpec::from_e(1.0, 0.5);
        let j = c.jet_at(0.0, 0.0);
        assert!((j.value - 0.5).abs() < 1e-15);
        assert_eq!((j.gx, j.gy), (0.0, 0.0));
        assert_eq!((j.hxx, j.hxy, j.hyy), (-4.0, 0.0, 4.0));
        // separated lobes: the origin lies above the level set
        let c8 = CassiniSpec::from_e(0.8, 0.5);
        assert!(c8.jet_at(0.0, 0.0).value - 0.5 > 0.0);
        // lobe interiors lie below it
        assert!(c8.jet_at(1.0, 0.0).value < 0.5);
    }

    #[test]
    fn cassini_numeric_jet_matches_analytic() {
        let n = 41;
        let g = GridSpec::new(n, n, 5.0 / n as f64, Boundary::Clamped).unwrap();
        let (f, exact) = cassini_field(&CassiniSpec::from_e(1.1, 0.5), g);
        let num = jet(&f);
        for iy in 2..n - 2 {
            for ix in 2..n - 2 {
                let i = g.index(ix, iy);
                let (a, b) = (num.at(i), exact.at(i));
                for (p, q) in [(a.gx, b.gx), (a.gy, b.gy), (a.hxx, b.hxx), (a.hxy, b.hxy), (a.hyy, b.hyy)] {
                    assert!((p - q).abs() <= 1e-8 * (1.0 + q.abs()), "{p} vs {q}");
                }
            }
        }
    }

    #[test]
    fn alpha_sweep_columns() {
        let r_hat = 0.5;
        let cfg = ProjectionConfig::new(f64::INFINITY, 0.5, r_hat, Method::Ssp2).unwrap();
        let g = strip(31, 2.0 * r_hat);
        let alphas = linspace(0.45, 0.55, 101);
        let rows = sweep_alpha(&cfg, g, 6.0 * r_hat, &alphas, 1e-3).unwrap();
        for r in &rows {
            let expected = if (r.param - 0.5).abs() < 1e-12 {
                0.5
            } else if r.param > 0.5 {
                1.0
            } else {
                0.0
            };
            assert_eq!(r.ssp1, expected, "alpha {}", r.param);
        }
        let mid = rows.iter().find(|r| (r.param - 0.5).abs() < 1e-12).unwrap();
        assert!((mid.ssp2 - smooth_step(0.0)).abs() < 1e-12);
    }

    #[test]
    fn sweeps_reproducible() {
        let cfg = ProjectionConfig::new(f64::INFINITY, 0.5, 1.0 / 3.0, Method::Ssp2).unwrap();
        let g = GridSpec::new(15, 15, 1.0 / 3.0, Boundary::Clamped).unwrap();
        let es = linspace(0.9, 1.1, 21);
        let a = sweep_cassini(&cfg, g, &es, 1e-3).unwrap();
        let b = sweep_cassini(&cfg, g, &es, 1e-3).unwrap();
        assert_eq!(a, b);
        assert!(sweep_cassini(&cfg, strip(14, 1.0), &es, 1e-3).is_err());
    }

    #[test]
    fn degenerate_oval_origin() {
        // b = 0: the lobes shrink to the foci and the origin is far above
        // the level set, so both methods project it fully solid.
        let cfg = ProjectionConfig::new(f64::INFINITY, 0.5, 1.0 / 3.0, Method::Ssp2).unwrap();
        let g = GridSpec::new(15, 15, 1.0 / 3.0, Boundary::Clamped).unwrap();
        let rows = sweep_cassini(&cfg, g, &[0.0], 1e-3).unwrap();
        assert_eq!(rows[0].ssp1, 1.0);
        assert_eq!(rows[0].ssp2, 1.0);
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let cfg = ProjectionConfig::new(f64::INFINITY, 0.5, 0.5, Method::Ssp2).unwrap();
        let rows = parabola_profile(&cfg, &ParabolaSpec::with_default_radius(0.5, 0.5), &linspace(-3.0, 3.0, 7));
        write_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x_hat,tanh,ssp1,ssp2\n"));
        assert_eq!(text.lines().count(), 8);
    }
}
