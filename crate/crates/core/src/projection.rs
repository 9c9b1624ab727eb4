//! Tanh projection and the first- and second-order subpixel-smoothed
//! projections (SSP1, SSP2), at finite and infinite steepness, together
//! with their vector-Jacobian products back to the design density.
//!
//! Inside the smoothing band `|d̂| < 1` the SSP operators blend the tanh
//! projection of two probe values straddling the level set with the
//! quintic smooth step `F`; outside the band they fall back to the plain
//! tanh projection (or the Heaviside step at `β = ∞`). SSP2 differs from
//! SSP1 only in the normalization `√(‖∇ρ̃‖² + R̂²‖H‖²_F)` used for both the
//! signed distance and the probe offsets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calculus::{GridDerivatives, Jet, JetField};
use crate::error::{Error, Result};
use crate::grid_field::{filter, filter_transpose, ConicKernel, GridSpec, ScalarField2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tanh,
    Ssp1,
    Ssp2,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Tanh => "tanh",
            Method::Ssp1 => "ssp1",
            Method::Ssp2 => "ssp2",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Method::Tanh),
            "ssp1" => Ok(Method::Ssp1),
            "ssp2" => Ok(Method::Ssp2),
            other => Err(Error::InvalidConfig(format!("unknown projection method `{other}`"))),
        }
    }
}

/// Steepness, level set, smoothing radius (physical length) and operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// `f64::INFINITY` selects the binary limit.
    #[serde(with = "beta_serde")]
    pub beta: f64,
    pub eta: f64,
    pub r_hat: f64,
    pub method: Method,
}

mod beta_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(b: &f64, s: S) -> Result<S::Ok, S::Error> {
        if b.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*b)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => super::parse_beta(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a steepness value, accepting `inf` / `infinity`.
pub fn parse_beta(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("invalid beta `{s}`"))),
    }
}

impl ProjectionConfig {
    pub fn new(beta: f64, eta: f64, r_hat: f64, method: Method) -> Result<Self> {
        let cfg = ProjectionConfig {
            beta,
            eta,
            r_hat,
            method,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidConfig(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.r_hat > 0.0 && self.r_hat.is_finite()) {
            return Err(Error::InvalidConfig(format!("r_hat must be positive, got {}", self.r_hat)));
        }
        Ok(())
    }

    /// The smoothing radius must not exceed one pixel on a sampled grid.
    pub fn validate_for(&self, spec: &GridSpec) -> Result<()> {
        self.validate()?;
        if self.r_hat > spec.dx * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "r_hat = {} exceeds the pixel size {}",
                self.r_hat, spec.dx
            )));
        }
        Ok(())
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn is_binary_limit(&self) -> bool {
        self.beta.is_infinite()
    }
}

/// Quintic smooth step: 1 for `s <= -1`, 0 for `s >= 1`, and
/// `1/2 - 15/16 s + 5/8 s³ - 3/16 s⁵` in between.
pub fn smooth_step(s: f64) -> f64 {
    if s <= -1.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let s2 = s * s;
        0.5 + s * (-15.0 / 16.0 + s2 * (5.0 / 8.0 - 3.0 / 16.0 * s2))
    }
}

/// `F'(s) = -15/16 (1 - s²)²` on the band, zero outside.
pub fn smooth_step_d1(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s * s;
        -15.0 / 16.0 * t * t
    }
}

/// `F''(s) = 15/4 s (1 - s²)` on the band, zero outside.
pub fn smooth_step_d2(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        15.0 / 4.0 * s * (1.0 - s * s)
    }
}

/// `[1 - F(s)] a + F(s) b`.
pub fn fill_factor(s: f64, a: f64, b: f64) -> f64 {
    let f = smooth_step(s);
    (1.0 - f) * a + f * b
}

#[inline]
fn heaviside(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else if s < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Tanh projection and its derivative for finite `beta`.
#[inline]
fn tanh_value_and_slope(x: f64, beta: f64, eta: f64) -> (f64, f64) {
    let a = (beta * eta).tanh();
    let denom = a + (beta * (1.0 - eta)).tanh();
    let t = (beta * (x - eta)).tanh();
    ((a + t) / denom, beta * (1.0 - t * t) / denom)
}

/// Tanh projection `[tanh βη + tanh β(ρ̃-η)] / [tanh βη + tanh β(1-η)]`.
pub fn tanh_project(rho_tilde: f64, cfg: &ProjectionConfig) -> Result<f64> {
    if cfg.beta.is_infinite() {
        return Err(Error::InfiniteBeta);
    }
    Ok(tanh_value_and_slope(rho_tilde, cfg.beta, cfg.eta).0)
}

/// Tanh projection with the Heaviside limit at `β = ∞`; the argument is
/// clamped to `[0, 1]` first so outputs stay in range.
#[inline]
fn base_projection(x: f64, cfg: &ProjectionConfig) -> (f64, f64) {
    let clamped = x.clamp(0.0, 1.0);
    if cfg.beta.is_infinite() {
        return (heaviside(clamped - cfg.eta), 0.0);
    }
    let (v, d) = tanh_value_and_slope(clamped, cfg.beta, cfg.eta);
    if clamped != x {
        (v, 0.0)
    } else {
        (v, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceOrder {
    First,
    Second,
}

/// Normalized signed distance `d / R̂` per pixel: positive in void,
/// negative in solid, `±∞` where the normalization vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    pub spec: GridSpec,
    pub d_hat: Vec<f64>,
    pub order: DistanceOrder,
}

impl SignedDistanceField {
    /// Physical signed distance `d = d̂ R̂`.
    pub fn distance(&self, r_hat: f64) -> Vec<f64> {
        self.d_hat.iter().map(|d| d * r_hat).collect()
    }
}

/// Normalization of the signed distance: `‖∇ρ̃‖` (first order) or
/// `√(‖∇ρ̃‖² + R̂²‖H‖²_F)` (second order).
#[inline]
pub fn distance_norm(j: &Jet, r_hat: f64, order: DistanceOrder) -> f64 {
    match order {
        DistanceOrder::First => j.grad_norm_sq().sqrt(),
        DistanceOrder::Second => (j.grad_norm_sq() + r_hat * r_hat * j.hess_frobenius_sq()).sqrt(),
    }
}

/// Normalized signed distance at one pixel. A zero numerator gives 0; a
/// zero normalization with nonzero numerator gives `±∞`.
#[inline]
pub fn signed_distance_hat(j: &Jet, cfg: &ProjectionConfig, order: DistanceOrder) -> f64 {
    let num = cfg.eta - j.value;
    if num == 0.0 {
        return 0.0;
    }
    let norm = distance_norm(j, cfg.r_hat, order);
    if norm == 0.0 {
        return f64::INFINITY.copysign(num);
    }
    num / (cfg.r_hat * norm)
}

fn distance_field(jet: &JetField, cfg: &ProjectionConfig, order: DistanceOrder) -> SignedDistanceField {
    SignedDistanceField {
        spec: jet.spec,
        d_hat: (0..jet.spec.len())
            .map(|i| signed_distance_hat(&jet.at(i), cfg, order))
            .collect(),
        order,
    }
}

/// SSP1 distance `(η - ρ̃) / ‖∇ρ̃‖`, normalized by `R̂`.
pub fn distance_first(jet: &JetField, cfg: &ProjectionConfig) -> SignedDistanceField {
    distance_field(jet, cfg, DistanceOrder::First)
}

/// SSP2 distance `(η - ρ̃) / √(‖∇ρ̃‖² + R̂²‖H‖²_F)`, normalized by `R̂`.
pub fn distance_second(jet: &JetField, cfg: &ProjectionConfig) -> SignedDistanceField {
    distance_field(jet, cfg, DistanceOrder::Second)
}

fn order_of(method: Method) -> Option<DistanceOrder> {
    match method {
        Method::Tanh => None,
        Method::Ssp1 => Some(DistanceOrder::First),
        Method::Ssp2 => Some(DistanceOrder::Second),
    }
}

/// Probe values `(ρ̃⁻, ρ̃⁺)` on either side of the level set, for a pixel
/// inside the smoothing band.
///
/// # Panics
///
/// If `|d_hat| >= 1` or the method is `Tanh`.
pub fn rho_plus_minus(j: &Jet, d_hat: f64, cfg: &ProjectionConfig) -> (f64, f64) {
    assert!(d_hat.abs() < 1.0, "probes are only defined inside the band, got d_hat = {d_hat}");
    let order = order_of(cfg.method).expect("probes need an SSP method");
    let norm = distance_norm(j, cfg.r_hat, order);
    let minus = j.value - cfg.r_hat * smooth_step(d_hat) * norm;
    let plus = j.value + cfg.r_hat * smooth_step(-d_hat) * norm;
    (minus, plus)
}

/// Projected value at one pixel.
pub fn project_pixel(j: &Jet, cfg: &ProjectionConfig) -> f64 {
    project_pixel_with_partials(j, cfg).0
}

/// Projected value at one pixel and its partial derivatives with respect
/// to every jet channel, returned in a [`Jet`].
pub fn project_pixel_with_partials(j: &Jet, cfg: &ProjectionConfig) -> (f64, Jet) {
    let mut partial = Jet::default();
    let order = match order_of(cfg.method) {
        None => {
            let (v, d) = base_projection(j.value, cfg);
            partial.value = d;
            return (v, partial);
        }
        Some(o) => o,
    };
    let r = cfg.r_hat;
    let norm = distance_norm(j, r, order);
    let d = signed_distance_hat(j, cfg, order);
    if d.abs() >= 1.0 {
        // saturated or outside the band
        let (v, dv) = base_projection(j.value, cfg);
        partial.value = dv;
        return (v, partial);
    }

    let fm = smooth_step(d);
    let fp = 1.0 - fm;
    let f1m = smooth_step_d1(d);
    let (value, a_rho, a_norm, a_d) = if cfg.is_binary_limit() {
        (fm, 0.0, 0.0, f1m)
    } else {
        let f1p = smooth_step_d1(-d);
        let p_minus = j.value - r * fm * norm;
        let p_plus = j.value + r * fp * norm;
        let (tm, dtm) = base_projection(p_minus, cfg);
        let (tp, dtp) = base_projection(p_plus, cfg);
        let value = (1.0 - fm) * tm + fm * tp;
        let a_d = f1m * (tp - tm) + (1.0 - fm) * dtm * (-r * f1m * norm) + fm * dtp * (-r * f1p * norm);
        let a_rho = (1.0 - fm) * dtm + fm * dtp;
        let a_norm = (1.0 - fm) * dtm * (-r * fm) + fm * dtp * (r * fp);
        (value, a_rho, a_norm, a_d)
    };

    if norm > 0.0 {
        // d = num / (r norm)
        let total_rho = a_rho - a_d / (r * norm);
        let total_norm = a_norm - a_d * d / norm;
        partial.value = total_rho;
        let g = total_norm / norm;
        partial.gx = g * j.gx;
        partial.gy = g * j.gy;
        if order == DistanceOrder::Second {
            let c = r * r * g;
            partial.hxx = c * j.hxx;
            partial.hxy = 2.0 * c * j.hxy;
            partial.hyy = c * j.hyy;
        }
    }
    // norm == 0 with num == 0 is a measure-zero point where the distance is
    // not differentiable; its partials are left at zero.
    (value, partial)
}

/// Projects a filtered field with the configured operator.
pub fn project(rho_tilde: &ScalarField2D, cfg: &ProjectionConfig) -> ScalarField2D {
    let jet = GridDerivatives::new(rho_tilde.spec).jet(rho_tilde);
    project_jet(&jet, cfg)
}

/// Projects precomputed jets.
pub fn project_jet(jet: &JetField, cfg: &ProjectionConfig) -> ScalarField2D {
    ScalarField2D {
        spec: jet.spec,
        values: (0..jet.spec.len()).map(|i| project_pixel(&jet.at(i), cfg)).collect(),
    }
}

/// Count of pixels strictly between `lo` and `1 - lo`.
pub fn gray_count(rho_hat: &ScalarField2D, lo: f64) -> usize {
    rho_hat.values.iter().filter(|&&v| v > lo && v < 1.0 - lo).count()
}

/// Forward pass of the density pipeline `ρ → ρ̃ → (ρ̃, ∇ρ̃, H) → ρ̂`.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub rho_tilde: ScalarField2D,
    pub jet: JetField,
    pub rho_hat: ScalarField2D,
    /// `∂ρ̂ / ∂(jet channel)` per pixel.
    pub partials: JetField,
}

/// Filter, derivative operators and projection for one grid.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub spec: GridSpec,
    pub kernel: ConicKernel,
    pub cfg: ProjectionConfig,
    deriv: GridDerivatives,
}

impl Pipeline {
    pub fn new(spec: GridSpec, kernel: ConicKernel, cfg: ProjectionConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate_for(&spec)?;
        Ok(Pipeline {
            spec,
            kernel,
            cfg,
            deriv: GridDerivatives::new(spec),
        })
    }

    pub fn with_config(&self, cfg: ProjectionConfig) -> Self {
        Pipeline {
            cfg,
            ..self.clone()
        }
    }

    pub fn derivatives(&self) -> &GridDerivatives {
        &self.deriv
    }

    pub fn forward(&self, rho: &ScalarField2D) -> PipelineState {
        let rho_tilde = filter(rho, &self.kernel);
        let jet = self.deriv.jet(&rho_tilde);
        let n = self.spec.len();
        let mut partials = JetField::zeros(self.spec);
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let (v, p) = project_pixel_with_partials(&jet.at(i), &self.cfg);
            values.push(v);
            partials.set(i, p);
        }
        PipelineState {
            rho_tilde,
            jet,
            rho_hat: ScalarField2D { spec: self.spec, values },
            partials,
        }
    }

    /// Pulls a cotangent on `ρ̂`, plus optional direct cotangents on the
    /// jet channels, back to the design density.
    pub fn backward(&self, state: &PipelineState, rho_hat_bar: &[f64], jet_bar: Option<&JetField>) -> ScalarField2D {
        let n = self.spec.len();
        let mut ct = match jet_bar {
            Some(j) => j.clone(),
            None => JetField::zeros(self.spec),
        };
        let p = &state.partials;
        for i in 0..n {
            let g = rho_hat_bar[i];
            if g == 0.0 {
                continue;
            }
            ct.value[i] += g * p.value[i];
            ct.gx[i] += g * p.gx[i];
            ct.gy[i] += g * p.gy[i];
            ct.hxx[i] += g * p.hxx[i];
            ct.hxy[i] += g * p.hxy[i];
            ct.hyy[i] += g * p.hyy[i];
        }
        let rt_bar = self.deriv.jet_transpose(&ct);
        filter_transpose(&rt_bar, &self.kernel)
    }
}

/// `∂L/∂ρ` given `∂L/∂ρ̂` for the pipeline filter → jet → projection.
pub fn project_vjp(
    rho: &ScalarField2D,
    kernel: &ConicKernel,
    cfg: &ProjectionConfig,
    cotangent: &ScalarField2D,
) -> ScalarField2D {
    let pipe = Pipeline {
        spec: rho.spec,
        kernel: kernel.clone(),
        cfg: *cfg,
        deriv: GridDerivatives::new(rho.spec),
    };
    let state = pipe.forward(rho);
    pipe.backward(&state, &cotangent.values, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_field::{make_conic_kernel, Boundary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(beta: f64, method: Method) -> ProjectionConfig {
        ProjectionConfig::new(beta, 0.5, 0.5, method).unwrap()
    }

    fn jet1d(value: f64, gx: f64, hxx: f64) -> Jet {
        Jet {
            value,
            gx,
            hxx,
            ..Jet::default()
        }
    }

    #[test]
    fn smooth_step_values_and_seams() {
        assert_eq!(smooth_step(0.0), 0.5);
        assert_eq!(smooth_step(-1.0), 1.0);
        assert_eq!(smooth_step(1.0), 0.0);
        // polynomial branch evaluated right at the seams
        let poly = |s: f64| 0.5 - 15.0 / 16.0 * s + 5.0 / 8.0 * s.powi(3) - 3.0 / 16.0 * s.powi(5);
        assert_eq!(poly(-1.0), 1.0);
        assert_eq!(poly(1.0), 0.0);
        for s in [-1.0, 1.0] {
            assert_eq!(-15.0 / 16.0 * (1.0 - s * s) * (1.0f64 - s * s), 0.0);
            assert_eq!(smooth_step_d1(s), 0.0);
            assert_eq!(smooth_step_d2(s), 0.0);
        }
        assert_eq!(smooth_step(-3.0), 1.0);
        assert_eq!(smooth_step(2.0), 0.0);
    }

    #[test]
    fn smooth_step_derivatives_match_fd() {
        for &s in &[-0.9, -0.3, 0.0, 0.41, 0.77] {
            let h = 1e-6;
            let fd1 = (smooth_step(s + h) - smooth_step(s - h)) / (2.0 * h);
            let fd2 = (smooth_step_d1(s + h) - smooth_step_d1(s - h)) / (2.0 * h);
            assert!((fd1 - smooth_step_d1(s)).abs() < 1e-8);
            assert!((fd2 - smooth_step_d2(s)).abs() < 1e-7);
        }
    }

    #[test]
    fn tanh_endpoints_and_midpoint() {
        for &beta in &[0.5, 4.0, 64.0, 300.0] {
            for &eta in &[0.2, 0.5, 0.8] {
                let c = ProjectionConfig::new(beta, eta, 0.5, Method::Tanh).unwrap();
                assert!((tanh_project(0.0, &c).unwrap()).abs() < 1e-15);
                assert!((tanh_project(1.0, &c).unwrap() - 1.0).abs() < 1e-15);
            }
            let c = cfg(beta, Method::Tanh);
            assert!((tanh_project(0.5, &c).unwrap() - 0.5).abs() < 1e-15);
        }
        assert!(matches!(tanh_project(0.3, &cfg(f64::INFINITY, Method::Tanh)), Err(Error::InfiniteBeta)));
    }

    #[test]
    fn tanh_beta64_reference() {
        // tanh(32) = 1 - 3e-28; tanh(1.28) from a 30-digit evaluation
        let t128 = 0.856_484_915_472_497_3_f64;
        let expected = (1.0 + t128) / 2.0;
        let got = tanh_project(0.52, &cfg(64.0, Method::Tanh)).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got}");
        assert!((got - 0.928).abs() < 5e-4);
    }

    #[test]
    fn first_distance_cases() {
        let c = cfg(f64::INFINITY, Method::Ssp1);
        assert_eq!(signed_distance_hat(&jet1d(0.5, 3.0, 0.0), &c, DistanceOrder::First), 0.0);
        // linear field eta + g x: d = -x
        let g = 2.5;
        for &x in &[-0.3, 0.1, 0.2] {
            let d = signed_distance_hat(&jet1d(0.5 + g * x, g, 0.0), &c, DistanceOrder::First) * c.r_hat;
            assert!((d + x).abs() < 1e-14);
        }
        let flat_solid = jet1d(0.7, 0.0, 0.0);
        assert_eq!(signed_distance_hat(&flat_solid, &c, DistanceOrder::First), f64::NEG_INFINITY);
        assert_eq!(project_pixel(&flat_solid, &c), 1.0);
        assert_eq!(project_pixel(&jet1d(0.2, 0.0, 0.0), &c), 0.0);
    }

    #[test]
    fn second_distance_at_stationary_point() {
        let c = cfg(f64::INFINITY, Method::Ssp2);
        let j = Jet {
            value: 0.45,
            hxx: 2.0,
            hxy: -0.5,
            hyy: 1.0,
            ..Jet::default()
        };
        let hf = (4.0 + 2.0 * 0.25 + 1.0f64).sqrt();
        let d = signed_distance_hat(&j, &c, DistanceOrder::Second) * c.r_hat;
        assert!((d - 0.05 / (c.r_hat * hf)).abs() < 1e-15);
    }

    #[test]
    fn second_distance_never_exceeds_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cfg(8.0, Method::Ssp2);
        for _ in 0..1000 {
            let j = Jet {
                value: rng.gen(),
                gx: rng.gen_range(-5.0..5.0),
                gy: rng.gen_range(-5.0..5.0),
                hxx: rng.gen_range(-50.0..50.0),
                hxy: rng.gen_range(-50.0..50.0),
                hyy: rng.gen_range(-50.0..50.0),
            };
            let d1 = signed_distance_hat(&j, &c, DistanceOrder::First);
            let d2 = signed_distance_hat(&j, &c, DistanceOrder::Second);
            assert!(d2.abs() <= d1.abs());
            assert_eq!(d1.signum(), d2.signum());
        }
    }

    #[test]
    fn probes() {
        let c1 = cfg(8.0, Method::Ssp1);
        let j = jet1d(0.5, 1.2, 0.0);
        let (m, p) = rho_plus_minus(&j, 0.0, &c1);
        assert!((m - (0.5 - 0.5 * 0.5 * 1.2)).abs() < 1e-15);
        assert!((p - (0.5 + 0.5 * 0.5 * 1.2)).abs() < 1e-15);
        // separation is one smoothing radius along the linear model
        for &d in &[-0.8, -0.1, 0.3, 0.95] {
            let (m, p) = rho_plus_minus(&j, d, &c1);
            assert!(((p - m) / (c1.r_hat * 1.2) - 1.0).abs() < 1e-14);
        }
        // zero Hessian: SSP2 probes equal SSP1 probes
        let c2 = cfg(8.0, Method::Ssp2);
        assert_eq!(rho_plus_minus(&j, 0.4, &c1), rho_plus_minus(&j, 0.4, &c2));
    }

    #[test]
    #[should_panic]
    fn probes_outside_band_panic() {
        rho_plus_minus(&jet1d(0.5, 1.0, 0.0), 1.0, &cfg(8.0, Method::Ssp1));
    }

    #[test]
    fn binary_limit_linear_interface() {
        let c = cfg(f64::INFINITY, Method::Ssp1);
        let g = 0.8;
        for k in -40..=40 {
            let x = k as f64 * 0.03;
            let v = project_pixel(&jet1d(0.5 + g * x, g, 0.0), &c);
            let expected = if x.abs() <= c.r_hat { smooth_step(-x / c.r_hat) } else if x > 0.0 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "x={x}: {v} vs {expected}");
        }
    }

    #[test]
    fn partials_match_fd_per_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for method in [Method::Tanh, Method::Ssp1, Method::Ssp2] {
            for beta in [4.0, 64.0, f64::INFINITY] {
                let c = ProjectionConfig::new(beta, 0.5, 0.05, method).unwrap();
                let mut checked = 0;
                while checked < 50 {
                    let j = Jet {
                        value: rng.gen_range(0.3..0.7),
                        gx: rng.gen_range(-3.0..3.0),
                        gy: rng.gen_range(-3.0..3.0),
                        hxx: rng.gen_range(-20.0..20.0),
                        hxy: rng.gen_range(-20.0..20.0),
                        hyy: rng.gen_range(-20.0..20.0),
                    };
                    let d = signed_distance_hat(&j, &c, DistanceOrder::Second);
                    if method != Method::Tanh && beta.is_infinite() && d.abs() > 0.9 {
                        continue;
                    }
                    checked += 1;
                    let (_, p) = project_pixel_with_partials(&j, &c);
                    let h = 1e-7;
                    let analytic = channels(&p);
                    for k in 0..6 {
                        let mut a = channels(&j);
                        let mut b = a;
                        a[k] += h;
                        b[k] -= h;
                        let num = (project_pixel(&from_channels(a), &c) - project_pixel(&from_channels(b), &c)) / (2.0 * h);
                        assert!(
                            (num - analytic[k]).abs() <= 1e-5 * (1.0 + analytic[k].abs()),
                            "{method} beta={beta} channel {k}: fd {num} vs {} at {j:?}",
                            analytic[k]
                        );
                    }
                }
            }
        }
    }

    fn channels(j: &Jet) -> [f64; 6] {
        [j.value, j.gx, j.gy, j.hxx, j.hxy, j.hyy]
    }

    fn from_channels(c: [f64; 6]) -> Jet {
        Jet {
            value: c[0],
            gx: c[1],
            gy: c[2],
            hxx: c[3],
            hxy: c[4],
            hyy: c[5],
        }
    }

    #[test]
    fn outputs_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = GridSpec::new(16, 16, 1.0, Boundary::Periodic).unwrap();
        for method in [Method::Tanh, Method::Ssp1, Method::Ssp2] {
            for beta in [0.5, 8.0, 512.0, f64::INFINITY] {
                let c = ProjectionConfig::new(beta, 0.5, 0.5, method).unwrap();
                let rt = ScalarField2D::new(spec, (0..spec.len()).map(|_| rng.gen()).collect()).unwrap();
                let out = project(&rt, &c);
                assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn vjp_zero_cotangent() {
        let spec = GridSpec::new(9, 9, 1.0, Boundary::Periodic).unwrap();
        let k = make_conic_kernel(2.0).unwrap();
        let rho = ScalarField2D::from_fn(spec, |x, y| 0.5 + 0.4 * (x * 0.7).sin() * (y * 0.5).cos());
        let out = project_vjp(&rho, &k, &cfg(4.0, Method::Ssp2), &ScalarField2D::zeros(spec));
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ProjectionConfig::new(0.0, 0.5, 0.5, Method::Ssp1).is_err());
        assert!(ProjectionConfig::new(8.0, 1.0, 0.5, Method::Ssp1).is_err());
        assert!(ProjectionConfig::new(8.0, 0.5, -1.0, Method::Ssp1).is_err());
        let c = ProjectionConfig::new(f64::INFINITY, 0.5, 0.5, Method::Ssp2).unwrap();
        let spec = GridSpec::new(5, 5, 0.4, Boundary::Periodic).unwrap();
        assert!(c.validate_for(&spec).is_err());
        assert_eq!(parse_beta("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_beta("64").unwrap(), 64.0);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"inf\""));
        let back: ProjectionConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
