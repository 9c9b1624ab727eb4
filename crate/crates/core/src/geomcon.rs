//! Minimum-lengthscale inequality constraints on the solid and void
//! phases, and a morphological ruler measuring the smallest feature of a
//! binary structure.
//!
//! With `E = exp(-c ‖∇ρ̃‖²)` the constraints are
//!
//! ```text
//! g_s = (1/N) Σ ρ̂ E [min(ρ̃ - η_e, 0)]² - ε
//! g_v = (1/N) Σ (1 - ρ̂) E [min(η_d - ρ̃, 0)]² - ε
//! ```
//!
//! `E` selects the inflection region of the filtered field (where its
//! gradient vanishes), so solid pixels whose filtered value there has not
//! reached `η_e` are features too thin to survive erosion.

use serde::{Deserialize, Serialize};

use crate::calculus::JetField;
use crate::error::{Error, Result};
use crate::grid_field::{Boundary, ConicKernel, GridSpec, ScalarField2D};
use crate::projection::{Pipeline, PipelineState, ProjectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleConfig {
    /// Decay constant in physical length².
    pub c: f64,
    pub eps: f64,
    pub eta_e: f64,
    pub eta_d: f64,
}

impl LengthscaleConfig {
    /// `c = 64 R̃²` for a filter radius given in physical units.
    pub fn for_filter_radius(r_tilde: f64) -> Self {
        LengthscaleConfig {
            c: 64.0 * r_tilde * r_tilde,
            eps: 1e-8,
            eta_e: 0.75,
            eta_d: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0
            && self.eps > 0.0
            && 0.0 < self.eta_d
            && self.eta_d < 0.5
            && 0.5 < self.eta_e
            && self.eta_e < 1.0;
        if ok && self.c.is_finite() && self.eps.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid lengthscale constraint parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Solid,
    Void,
}

/// A constraint value and its gradient with respect to `ρ`.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub value: f64,
    /// Sum-of-squares part before the `-ε` shift; never negative.
    pub raw: f64,
    pub grad: ScalarField2D,
}

/// Evaluates one constraint on a forward pipeline state.
pub fn constraint_from_state(
    pipeline: &Pipeline,
    state: &PipelineState,
    lc: &LengthscaleConfig,
    phase: Phase,
) -> ConstraintEval {
    let n = pipeline.spec.len();
    let inv_n = 1.0 / n as f64;
    let jet = &state.jet;
    let mut raw = 0.0;
    let mut rho_hat_bar = vec![0.0; n];
    let mut jet_bar = JetField::zeros(pipeline.spec);
    for i in 0..n {
        let (rt, gx, gy) = (jet.value[i], jet.gx[i], jet.gy[i]);
        let e = (-lc.c * (gx * gx + gy * gy)).exp();
        // m = min(±(ρ̃ - η), 0), s = dm/dρ̃ where m < 0
        let (ind, dind, m, s) = match phase {
            Phase::Solid => (state.rho_hat.values[i], 1.0, (rt - lc.eta_e).min(0.0), 1.0),
            Phase::Void => (1.0 - state.rho_hat.values[i], -1.0, (lc.eta_d - rt).min(0.0), -1.0),
        };
        if m == 0.0 {
            continue;
        }
        let m2 = m * m;
        raw += ind * e * m2;
        rho_hat_bar[i] = inv_n * dind * e * m2;
        let w = inv_n * ind * e;
        jet_bar.value[i] = w * 2.0 * m * s;
        jet_bar.gx[i] = -w * m2 * 2.0 * lc.c * gx;
        jet_bar.gy[i] = -w * m2 * 2.0 * lc.c * gy;
    }
    let raw = raw * inv_n;
    debug_assert!(raw >= 0.0);
    ConstraintEval {
        value: raw - lc.eps,
        raw,
        grad: pipeline.backward(state, &rho_hat_bar, Some(&jet_bar)),
    }
}

fn constraint(
    rho: &ScalarField2D,
    kernel: &ConicKernel,
    cfg: &ProjectionConfig,
    lc: &LengthscaleConfig,
    phase: Phase,
) -> Result<(f64, ScalarField2D)> {
    lc.validate()?;
    let pipe = Pipeline::new(rho.spec, kernel.clone(), *cfg)?;
    let state = pipe.forward(rho);
    let c = constraint_from_state(&pipe, &state, lc, phase);
    Ok((c.value, c.grad))
}

/// Solid-phase constraint `g_s` and its gradient; feasible iff `<= 0`.
pub fn constraint_solid(
    rho: &ScalarField2D,
    kernel: &ConicKernel,
    cfg: &ProjectionConfig,
    lc: &LengthscaleConfig,
) -> Result<(f64, ScalarField2D)> {
    constraint(rho, kernel, cfg, lc, Phase::Solid)
}

/// Void-phase constraint `g_v` and its gradient; feasible iff `<= 0`.
pub fn constraint_void(
    rho: &ScalarField2D,
    kernel: &ConicKernel,
    cfg: &ProjectionConfig,
    lc: &LengthscaleConfig,
) -> Result<(f64, ScalarField2D)> {
    constraint(rho, kernel, cfg, lc, Phase::Void)
}

/// Outcome of a minimum-feature measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Lengthscale {
    /// The phase has no pixels.
    NoFeatures,
    /// No disc up to the domain size alters the phase.
    Unbounded,
    Pixels(usize),
}

impl Lengthscale {
    pub fn pixels(self) -> Option<usize> {
        match self {
            Lengthscale::Pixels(p) => Some(p),
            _ => None,
        }
    }
}

/// Pixel offsets of a disc of diameter `d` rasterized at pixel centers.
/// Odd diameters are centered on a pixel, even ones on a pixel corner.
pub fn disc_offsets(d: usize) -> Vec<(isize, isize)> {
    let r2 = (d as f64 / 2.0).powi(2);
    let shift = if d % 2 == 0 { 0.5 } else { 0.0 };
    let h = d as isize;
    let mut out = Vec::new();
    for j in -h..=h {
        for i in -h..=h {
            let (x, y) = (i as f64 + shift, j as f64 + shift);
            if x * x + y * y <= r2 {
                out.push((i, j));
            }
        }
    }
    out
}

struct Morph {
    spec: GridSpec,
}

impl Morph {
    fn at(&self, mask: &[bool], ix: isize, iy: isize) -> bool {
        let (nx, ny) = (self.spec.nx as isize, self.spec.ny as isize);
        let (x, y) = match self.spec.boundary {
            Boundary::Periodic => (ix.rem_euclid(nx), iy.rem_euclid(ny)),
            Boundary::Clamped => (ix.clamp(0, nx - 1), iy.clamp(0, ny - 1)),
        };
        mask[(y * nx + x) as usize]
    }

    fn erode(&self, mask: &[bool], se: &[(isize, isize)]) -> Vec<bool> {
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        let mut out = vec![false; mask.len()];
        for iy in 0..ny {
            for ix in 0..nx {
                out[iy * nx + ix] = se
                    .iter()
                    .all(|&(i, j)| self.at(mask, ix as isize + i, iy as isize + j));
            }
        }
        out
    }

    fn dilate(&self, mask: &[bool], se: &[(isize, isize)]) -> Vec<bool> {
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        let mut out = vec![false; mask.len()];
        for iy in 0..ny {
            for ix in 0..nx {
                out[iy * nx + ix] = se
                    .iter()
                    .any(|&(i, j)| self.at(mask, ix as isize - i, iy as isize - j));
            }
        }
        out
    }

    fn open(&self, mask: &[bool], se: &[(isize, isize)]) -> Vec<bool> {
        self.dilate(&self.erode(mask, se), se)
    }

    /// Phase pixels with a 4-neighbor outside the phase.
    fn is_edge(&self, mask: &[bool], ix: usize, iy: usize) -> bool {
        let (x, y) = (ix as isize, iy as isize);
        [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .any(|&(i, j)| !self.at(mask, x + i, y + j))
    }

    fn touches(&self, mask: &[bool], ix: usize, iy: usize) -> bool {
        let (x, y) = (ix as isize, iy as isize);
        (-1..=1).any(|j| (-1..=1).any(|i| (i, j) != (0, 0) && self.at(mask, x + i, y + j)))
    }
}

/// Whether opening the phase with a disc of diameter `d` removes any
/// pixel other than edge pixels bordering the retained part.
pub fn violates(mask: &[bool], spec: GridSpec, d: usize) -> bool {
    let m = Morph { spec };
    let opened = m.open(mask, &disc_offsets(d));
    (0..spec.ny).any(|iy| {
        (0..spec.nx).any(|ix| {
            let p = iy * spec.nx + ix;
            mask[p] && !opened[p] && !(m.is_edge(mask, ix, iy) && m.touches(&opened, ix, iy))
        })
    })
}

/// Minimum feature size of one phase of a structure binarized at 0.5: the
/// diameter just below the smallest disc whose opening alters the phase.
pub fn ruler_min_lengthscale(field: &ScalarField2D, phase: Phase) -> Lengthscale {
    let mask: Vec<bool> = field
        .values
        .iter()
        .map(|&v| match phase {
            Phase::Solid => v >= 0.5,
            Phase::Void => v < 0.5,
        })
        .collect();
    if !mask.iter().any(|&b| b) {
        return Lengthscale::NoFeatures;
    }
    let spec = field.spec;
    let limit = spec.nx.max(spec.ny);
    for d in 1..=limit {
        if violates(&mask, spec, d) {
            return Lengthscale::Pixels(d - 1);
        }
    }
    Lengthscale::Unbounded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Method;

    fn setup(n: usize, beta: f64) -> (GridSpec, ConicKernel, ProjectionConfig, LengthscaleConfig) {
        let spec = GridSpec::unit_cell(n).unwrap();
        let k = ConicKernel::new(3.0).unwrap();
        let cfg = ProjectionConfig::new(beta, 0.5, 0.5 * spec.dx, Method::Ssp2).unwrap();
        (spec, k, cfg, LengthscaleConfig::for_filter_radius(3.0 * spec.dx))
    }

    #[test]
    fn uniform_fields_are_feasible() {
        let (spec, k, cfg, lc) = setup(17, f64::INFINITY);
        for v in [0.0, 1.0] {
            let rho = ScalarField2D::constant(spec, v);
            let (s, gs) = constraint_solid(&rho, &k, &cfg, &lc).unwrap();
            let (w, gw) = constraint_void(&rho, &k, &cfg, &lc).unwrap();
            assert_eq!(s, -lc.eps);
            assert_eq!(w, -lc.eps);
            assert!(gs.values.iter().chain(&gw.values).all(|g| *g == 0.0));
        }
    }

    #[test]
    fn thin_features_violate() {
        let (spec, k, cfg, lc) = setup(33, 8.0);
        let mut dot = ScalarField2D::zeros(spec);
        dot.set(16, 16, 1.0);
        let (s, _) = constraint_solid(&dot, &k, &cfg, &lc).unwrap();
        assert!(s > 0.0, "{s}");

        let mut slit = ScalarField2D::constant(spec, 1.0);
        for iy in 0..33 {
            slit.set(16, iy, 0.0);
        }
        let (v, _) = constraint_void(&slit, &k, &cfg, &lc).unwrap();
        assert!(v > 0.0, "{v}");

        // a 2 px stripe survives the binary projection but not erosion
        let (_, _, cfg_inf, _) = setup(33, f64::INFINITY);
        let stripe = ScalarField2D::from_fn(spec, |x, _| if (x * 33.0 - 16.0).abs() < 1.0 { 1.0 } else { 0.0 });
        let (s, g) = constraint_solid(&stripe, &k, &cfg_inf, &lc).unwrap();
        assert!(s > 0.0, "{s}");
        // plateaus far from the stripe carry no gradient
        assert_eq!(g.get(0, 5), 0.0);
    }

    #[test]
    fn solid_void_duality() {
        let (spec, k, cfg, lc) = setup(17, 8.0);
        let rho = ScalarField2D::from_fn(spec, |x, y| 0.5 + 0.45 * (6.0 * x).sin() * (4.0 * y + 1.0).cos());
        let flipped = rho.map(|v| 1.0 - v);
        let swapped = LengthscaleConfig {
            eta_e: 1.0 - lc.eta_d,
            eta_d: 1.0 - lc.eta_e,
            ..lc
        };
        let (v, gv) = constraint_void(&rho, &k, &cfg, &lc).unwrap();
        let (s, gs) = constraint_solid(&flipped, &k, &cfg, &swapped).unwrap();
        assert!((v - s).abs() <= 1e-12);
        for (a, b) in gv.values.iter().zip(&gs.values) {
            assert!((a + b).abs() <= 1e-12);
        }
    }

    #[test]
    fn disc_rasterization() {
        assert_eq!(disc_offsets(1), vec![(0, 0)]);
        assert_eq!(disc_offsets(2).len(), 4);
        assert_eq!(disc_offsets(3).len(), 9);
        let d9 = disc_offsets(9);
        assert!(d9.contains(&(4, 2)) && !d9.contains(&(4, 3)) && !d9.contains(&(5, 0)));
        assert_eq!(d9.len(), 69);
    }

    #[test]
    fn ruler_disc_and_sentinels() {
        let spec = GridSpec::unit_cell(31).unwrap();
        let mut disc = ScalarField2D::zeros(spec);
        for (i, j) in disc_offsets(9) {
            disc.set((15 + i) as usize, (15 + j) as usize, 1.0);
        }
        let s = ruler_min_lengthscale(&disc, Phase::Solid).pixels().unwrap();
        assert!((8..=10).contains(&s), "{s}");

        let full = ScalarField2D::constant(spec, 1.0);
        assert_eq!(ruler_min_lengthscale(&full, Phase::Void), Lengthscale::NoFeatures);
        assert_eq!(ruler_min_lengthscale(&full, Phase::Solid), Lengthscale::Unbounded);
    }

    #[test]
    fn ruler_stripe_width() {
        let spec = GridSpec::unit_cell(32).unwrap();
        for w in [2usize, 5, 7] {
            let f = ScalarField2D::from_fn(spec, |x, _| if x * 32.0 < w as f64 { 1.0 } else { 0.0 });
            let s = ruler_min_lengthscale(&f, Phase::Solid).pixels().unwrap();
            assert!(s + 1 >= w && s <= w + 1, "w={w} s={s}");
        }
    }
}
