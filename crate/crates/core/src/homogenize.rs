//! Periodic finite-volume heat conduction on the unit cell, effective
//! conductivity extraction and adjoint gradients of the tensor-matching
//! loss.
//!
//! Each imposed unit gradient `e` yields a periodic fluctuation `T` with
//! total temperature `-e·x + T`. Face conductances are harmonic means of
//! the two adjacent pixels. Writing `φ = T / Δx`, the discrete problem is
//! the minimizer of the cell energy
//!
//! ```text
//! E(φ; e) = (1/N) Σ_faces k_f (e_f - (φ_q - φ_p))²
//! ```
//!
//! whose normal equations are the FVM flux balance. The energy minimum is
//! `eᵀ K e`, so the tensor entries are bilinear in the two solutions and
//! their derivatives with respect to face conductances need no extra
//! solves: the operator is self-adjoint and the forward fields are their
//! own adjoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_field::{Boundary, GridSpec, ScalarField2D};
use crate::projection::{Pipeline, PipelineState};

/// Default regularized conductivity of the void phase in the porous regime.
pub const KAPPA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialPair {
    /// Scale conductivity in W m⁻¹ K⁻¹; all other values are relative to it.
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl MaterialPair {
    pub fn new(kappa1: f64, kappa2: f64) -> Result<Self> {
        let m = MaterialPair {
            kappa0: 1.0,
            kappa1,
            kappa2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn porous() -> Self {
        MaterialPair {
            kappa0: 1.0,
            kappa1: KAPPA_FLOOR,
            kappa2: 1.0,
        }
    }

    pub fn composite() -> Self {
        MaterialPair {
            kappa0: 1.0,
            kappa1: 0.1,
            kappa2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa1 > 0.0 && self.kappa2 > 0.0 && self.kappa0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "conductivities must be positive, got kappa0={} kappa1={} kappa2={}",
                self.kappa0, self.kappa1, self.kappa2
            )));
        }
        Ok(())
    }
}

/// Symmetric 2×2 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tensor2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Tensor2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Tensor2 { xx, xy, yy }
    }

    pub fn diag(xx: f64, yy: f64) -> Self {
        Tensor2 { xx, xy: 0.0, yy }
    }

    /// Target of the thermal experiments, `diag(0.2, 0.4)`.
    pub fn thermal_target() -> Self {
        Self::diag(0.2, 0.4)
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - r, m + r)
    }

    pub fn scale(&self, s: f64) -> Self {
        Tensor2::new(self.xx * s, self.xy * s, self.yy * s)
    }
}

/// `κ = κ₁ + ρ̂ (κ₂ - κ₁)` in relative units.
pub fn conductivity_field(rho_hat: &ScalarField2D, mats: &MaterialPair) -> ScalarField2D {
    rho_hat.map(|r| mats.kappa1 + r * (mats.kappa2 - mats.kappa1))
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// `∂ harmonic(a, b) / ∂a`.
#[inline]
fn harmonic_da(a: f64, b: f64) -> f64 {
    2.0 * b * b / ((a + b) * (a + b))
}

/// The periodic FVM operator `(Aφ)_p = Σ_q k_pq (φ_p - φ_q)` for one
/// conductivity field.
#[derive(Debug, Clone)]
pub struct CellOperator {
    nx: usize,
    ny: usize,
    /// Conductance of the face between `p` and its `+x` neighbour.
    kx: Vec<f64>,
    /// Conductance of the face between `p` and its `+y` neighbour.
    ky: Vec<f64>,
    diag: Vec<f64>,
}

impl CellOperator {
    pub fn new(kappa: &ScalarField2D) -> Result<Self> {
        let s = kappa.spec;
        if s.boundary != Boundary::Periodic {
            return Err(Error::InvalidGrid("cell problems need a periodic grid".into()));
        }
        if let Some(v) = kappa.values.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("conductivity must be positive, found {v}")));
        }
        let (nx, ny) = (s.nx, s.ny);
        let n = s.len();
        let (mut kx, mut ky) = (vec![0.0; n], vec![0.0; n]);
        for iy in 0..ny {
            for ix in 0..nx {
                let p = iy * nx + ix;
                kx[p] = harmonic(kappa.values[p], kappa.values[iy * nx + (ix + 1) % nx]);
                ky[p] = harmonic(kappa.values[p], kappa.values[((iy + 1) % ny) * nx + ix]);
            }
        }
        let mut diag = vec![0.0; n];
        for iy in 0..ny {
            for ix in 0..nx {
                let p = iy * nx + ix;
                let left = iy * nx + (ix + nx - 1) % nx;
                let down = ((iy + ny - 1) % ny) * nx + ix;
                diag[p] = kx[p] + kx[left] + ky[p] + ky[down];
            }
        }
        Ok(CellOperator { nx, ny, kx, ky, diag })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for iy in 0..ny {
            let row = iy * nx;
            let up = ((iy + 1) % ny) * nx;
            let down = ((iy + ny - 1) % ny) * nx;
            for ix in 0..nx {
                let p = row + ix;
                let r = row + if ix + 1 == nx { 0 } else { ix + 1 };
                let l = row + if ix == 0 { nx - 1 } else { ix - 1 };
                let u_p = u[p];
                out[p] = self.kx[p] * (u_p - u[r])
                    + self.kx[l] * (u_p - u[l])
                    + self.ky[p] * (u_p - u[up + ix])
                    + self.ky[down + ix] * (u_p - u[down + ix]);
            }
        }
    }

    /// Right-hand side for the imposed gradient `e`.
    fn rhs(&self, e: [f64; 2]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut b = vec![0.0; self.len()];
        for iy in 0..ny {
            for ix in 0..nx {
                let p = iy * nx + ix;
                let left = iy * nx + (ix + nx - 1) % nx;
                let down = ((iy + ny - 1) % ny) * nx + ix;
                b[p] = e[0] * (self.kx[left] - self.kx[p]) + e[1] * (self.ky[down] - self.ky[p]);
            }
        }
        b
    }

    /// Face "fluxes" `e_f - (φ_q - φ_p)` on x and y faces.
    fn face_drops(&self, phi: &[f64], e: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.nx, self.ny);
        let n = self.len();
        let (mut ax, mut ay) = (vec![0.0; n], vec![0.0; n]);
        for iy in 0..ny {
            for ix in 0..nx {
                let p = iy * nx + ix;
                ax[p] = e[0] - (phi[iy * nx + (ix + 1) % nx] - phi[p]);
                ay[p] = e[1] - (phi[((iy + 1) % ny) * nx + ix] - phi[p]);
            }
        }
        (ax, ay)
    }

    /// Mean flux `⟨-κ ∇T_total⟩` of a solution.
    fn mean_flux(&self, phi: &[f64], e: [f64; 2]) -> [f64; 2] {
        let (ax, ay) = self.face_drops(phi, e);
        let n = self.len() as f64;
        let fx: f64 = self.kx.iter().zip(&ax).map(|(k, a)| k * a).sum();
        let fy: f64 = self.ky.iter().zip(&ay).map(|(k, a)| k * a).sum();
        [fx / n, fy / n]
    }
}

/// Linear-solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients on the zero-mean subspace.
/// `x` holds the initial guess on entry.
pub fn solve_pcg(op: &CellOperator, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
    let n = op.len();
    let mut b = b.to_vec();
    remove_mean(&mut b);
    remove_mean(x);
    let bnorm = dot(&b, &b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    remove_mean(&mut r);
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= opts.rel_tol * bnorm {
        return Ok(SolveStats {
            iterations: 0,
            rel_residual: rnorm / bnorm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(r, d)| r / d).collect();
    remove_mean(&mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=opts.max_iter {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= opts.rel_tol * bnorm {
            remove_mean(x);
            // true residual
            op.apply(x, &mut ap);
            let mut res = 0.0;
            for i in 0..n {
                res += (b[i] - ap[i]).powi(2);
            }
            return Ok(SolveStats {
                iterations: it,
                rel_residual: res.sqrt() / bnorm,
            });
        }
        for i in 0..n {
            z[i] = r[i] / op.diag[i];
        }
        remove_mean(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: opts.max_iter,
        residual: rnorm / bnorm,
    })
}

/// Periodic fluctuation and mean flux for one imposed unit gradient.
#[derive(Debug, Clone)]
pub struct CellProblemSolution {
    /// Zero-mean periodic temperature fluctuation, physical units.
    pub t: ScalarField2D,
    pub flux_avg: [f64; 2],
    pub stats: SolveStats,
}

/// Solves the affine-periodic cell problem for the imposed gradient
/// `direction` (total temperature `-direction·x + T`).
pub fn solve_cell(kappa: &ScalarField2D, direction: [f64; 2]) -> Result<CellProblemSolution> {
    solve_cell_with(kappa, direction, &SolverOptions::default())
}

pub fn solve_cell_with(kappa: &ScalarField2D, direction: [f64; 2], opts: &SolverOptions) -> Result<CellProblemSolution> {
    let op = CellOperator::new(kappa)?;
    let b = op.rhs(direction);
    let mut phi = vec![0.0; op.len()];
    let stats = solve_pcg(&op, &b, &mut phi, opts)?;
    let flux_avg = op.mean_flux(&phi, direction);
    let dx = kappa.spec.dx;
    Ok(CellProblemSolution {
        t: ScalarField2D {
            spec: kappa.spec,
            values: phi.iter().map(|v| v * dx).collect(),
        },
        flux_avg,
        stats,
    })
}

/// Effective tensor together with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveTensorReport {
    pub tensor: Tensor2,
    /// Relative residuals of the x, y and diagonal solves.
    pub residuals: [f64; 3],
    /// `|e_dᵀ K e_d - flux_d · e_d|` for the redundant diagonal solve.
    pub symmetry_defect: f64,
    /// `|K_xy - K_yx|` before symmetrization.
    pub asymmetry: f64,
}

/// Effective conductivity in units of `κ₀`: columns are the mean fluxes
/// for unit gradients along x and y, symmetrized; a third solve along
/// `(1, 1)/√2` validates the result.
pub fn effective_tensor(rho_hat: &ScalarField2D, mats: &MaterialPair) -> Result<EffectiveTensorReport> {
    mats.validate()?;
    effective_tensor_of_kappa(&conductivity_field(rho_hat, mats))
}

pub fn effective_tensor_of_kappa(kappa: &ScalarField2D) -> Result<EffectiveTensorReport> {
    let sx = solve_cell(kappa, [1.0, 0.0])?;
    let sy = solve_cell(kappa, [0.0, 1.0])?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let sd = solve_cell(kappa, [h, h])?;
    let tensor = Tensor2::new(sx.flux_avg[0], 0.5 * (sx.flux_avg[1] + sy.flux_avg[0]), sy.flux_avg[1]);
    let predicted = 0.5 * (tensor.xx + 2.0 * tensor.xy + tensor.yy);
    let measured = h * (sd.flux_avg[0] + sd.flux_avg[1]);
    Ok(EffectiveTensorReport {
        tensor,
        residuals: [sx.stats.rel_residual, sy.stats.rel_residual, sd.stats.rel_residual],
        symmetry_defect: (predicted - measured).abs(),
        asymmetry: (sx.flux_avg[1] - sy.flux_avg[0]).abs(),
    })
}

/// Weights of the `xx`, `xy`, `yy` mismatches in the loss.
pub const LOSS_WEIGHTS: [f64; 3] = [1.0, 2.0, 1.0];

/// `Σ w_ij (K_ij - K*_ij)²` with `w = (1, 2, 1)`.
pub fn tensor_loss(k: &Tensor2, target: &Tensor2) -> f64 {
    LOSS_WEIGHTS[0] * (k.xx - target.xx).powi(2)
        + LOSS_WEIGHTS[1] * (k.xy - target.xy).powi(2)
        + LOSS_WEIGHTS[2] * (k.yy - target.yy).powi(2)
}

/// Result of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: ScalarField2D,
    pub tensor: Tensor2,
    pub state: PipelineState,
    pub solver_iterations: usize,
}

/// Thermal loss with adjoint gradient. Keeps the last solutions to warm
/// start the next evaluation.
#[derive(Debug, Clone)]
pub struct ThermalObjective {
    pub pipeline: Pipeline,
    pub mats: MaterialPair,
    pub target: Tensor2,
    pub solver: SolverOptions,
    warm: [Vec<f64>; 2],
}

impl ThermalObjective {
    pub fn new(pipeline: Pipeline, mats: MaterialPair, target: Tensor2) -> Result<Self> {
        mats.validate()?;
        if pipeline.spec.boundary != Boundary::Periodic {
            return Err(Error::InvalidGrid("thermal objective needs a periodic grid".into()));
        }
        let n = pipeline.spec.len();
        Ok(ThermalObjective {
            pipeline,
            mats,
            target,
            solver: SolverOptions::default(),
            warm: [vec![0.0; n], vec![0.0; n]],
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.pipeline.spec
    }

    /// Loss, its gradient with respect to the design density, and the
    /// effective tensor of the projected structure.
    pub fn evaluate(&mut self, rho: &ScalarField2D) -> Result<LossEval> {
        let state = self.pipeline.forward(rho);
        let kappa = conductivity_field(&state.rho_hat, &self.mats);
        let op = CellOperator::new(&kappa)?;
        let dirs = [[1.0, 0.0], [0.0, 1.0]];
        let mut drops = Vec::with_capacity(2);
        let mut iters = 0;
        for (d, warm) in dirs.iter().zip(self.warm.iter_mut()) {
            let b = op.rhs(*d);
            let stats = solve_pcg(&op, &b, warm, &self.solver)?;
            iters += stats.iterations;
            drops.push(op.face_drops(warm, *d));
        }
        let n = op.len();
        let inv_n = 1.0 / n as f64;
        let (ax, ay) = (&drops[0], &drops[1]);
        // energy-form entries K_ij = (1/N) Σ_f k_f a^i_f a^j_f
        let mut k = Tensor2::default();
        for p in 0..n {
            k.xx += op.kx[p] * ax.0[p] * ax.0[p] + op.ky[p] * ax.1[p] * ax.1[p];
            k.xy += op.kx[p] * ax.0[p] * ay.0[p] + op.ky[p] * ax.1[p] * ay.1[p];
            k.yy += op.kx[p] * ay.0[p] * ay.0[p] + op.ky[p] * ay.1[p] * ay.1[p];
        }
        k = k.scale(inv_n);
        let t = &self.target;
        let loss = tensor_loss(&k, t);
        let g_xx = 2.0 * LOSS_WEIGHTS[0] * (k.xx - t.xx);
        let g_xy = 2.0 * LOSS_WEIGHTS[1] * (k.xy - t.xy);
        let g_yy = 2.0 * LOSS_WEIGHTS[2] * (k.yy - t.yy);
        let face_grad = |a: f64, b: f64| inv_n * (g_xx * a * a + g_xy * a * b + g_yy * b * b);

        let spec = kappa.spec;
        let (nx, ny) = (spec.nx, spec.ny);
        let kv = &kappa.values;
        let mut dkappa = vec![0.0; n];
        for iy in 0..ny {
            for ix in 0..nx {
                let p = iy * nx + ix;
                let q = iy * nx + (ix + 1) % nx;
                let gf = face_grad(ax.0[p], ay.0[p]);
                dkappa[p] += gf * harmonic_da(kv[p], kv[q]);
                dkappa[q] += gf * harmonic_da(kv[q], kv[p]);
                let q = ((iy + 1) % ny) * nx + ix;
                let gf = face_grad(ax.1[p], ay.1[p]);
                dkappa[p] += gf * harmonic_da(kv[p], kv[q]);
                dkappa[q] += gf * harmonic_da(kv[q], kv[p]);
            }
        }
        let dk = self.mats.kappa2 - self.mats.kappa1;
        let rho_hat_bar: Vec<f64> = dkappa.iter().map(|g| g * dk).collect();
        let grad = self.pipeline.backward(&state, &rho_hat_bar, None);
        Ok(LossEval {
            loss,
            grad,
            tensor: k,
            state,
            solver_iterations: iters,
        })
    }
}

/// Loss and gradient of the thermal tensor-matching problem for a design.
pub fn loss_and_grad(
    rho: &ScalarField2D,
    pipeline: &Pipeline,
    mats: &MaterialPair,
    target: &Tensor2,
) -> Result<(f64, ScalarField2D)> {
    let mut obj = ThermalObjective::new(pipeline.clone(), *mats, *target)?;
    let ev = obj.evaluate(rho)?;
    Ok((ev.loss, ev.grad))
}
