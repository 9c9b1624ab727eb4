//! Conservative convex separable approximation (CCSA) with separable
//! quadratic models, for box-bounded problems with inequality constraints.
//!
//! Every function `h` (objective and constraints) is modelled around the
//! current point `x` by
//!
//! ```text
//! h̃(y) = h(x) + ∇h·(y - x) + ½ ρ_h Σ_j (y_j - x_j)² / σ_j²
//! ```
//!
//! and the convex subproblem is solved through its dual on the trust
//! region `|y_j - x_j| ≤ σ_j` intersected with the bounds. A candidate is
//! accepted once every model is conservative there (`h(y) ≤ h̃(y)`);
//! otherwise the penalties of the offending models grow and the subproblem
//! is re-solved. Constraint slacks with a large linear-plus-quadratic cost
//! keep the subproblem feasible when the iterate starts infeasible.

use serde::Serialize;

use crate::error::{Error, Result};

/// Objective and constraint values with gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub df: Vec<f64>,
    /// Constraint values; feasible means `<= 0`.
    pub g: Vec<f64>,
    pub dg: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn unconstrained(f: f64, df: Vec<f64>) -> Self {
        Evaluation {
            f,
            df,
            g: vec![],
            dg: vec![],
        }
    }

    pub fn max_violation(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    fn check(&self, n: usize, m: usize, iter: usize) -> Result<()> {
        if self.df.len() != n || self.g.len() != m || self.dg.len() != m || self.dg.iter().any(|d| d.len() != n) {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: self.df.len(),
            });
        }
        if !self.f.is_finite() || self.df.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "objective", iter });
        }
        if self.g.iter().any(|v| !v.is_finite()) || self.dg.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "constraint", iter });
        }
        Ok(())
    }
}

/// A box-bounded minimization problem with `m` inequality constraints.
pub trait OptProblem {
    fn n_vars(&self) -> usize;
    fn n_constraints(&self) -> usize;
    fn lower(&self) -> Vec<f64> {
        vec![0.0; self.n_vars()]
    }
    fn upper(&self) -> Vec<f64> {
        vec![1.0; self.n_vars()]
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation>;
}

/// Adapter turning a closure into an [`OptProblem`].
pub struct FnProblem<F> {
    pub n: usize,
    pub m: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub f: F,
}

impl<F: FnMut(&[f64]) -> Evaluation> FnProblem<F> {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, m: usize, f: F) -> Self {
        FnProblem {
            n: lower.len(),
            m,
            lower,
            upper,
            f,
        }
    }
}

impl<F: FnMut(&[f64]) -> Evaluation> OptProblem for FnProblem<F> {
    fn n_vars(&self) -> usize {
        self.n
    }
    fn n_constraints(&self) -> usize {
        self.m
    }
    fn lower(&self) -> Vec<f64> {
        self.lower.clone()
    }
    fn upper(&self) -> Vec<f64> {
        self.upper.clone()
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation> {
        Ok((self.f)(x))
    }
}

/// Optimizer hyperparameters. The defaults are recorded with every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcsaOptions {
    pub max_outer: usize,
    /// Relative objective change below which the run stops; 0 disables.
    pub ftol_rel: f64,
    /// Stop as soon as a feasible iterate reaches this objective value.
    pub f_stop: Option<f64>,
    pub max_inner: usize,
    /// Initial trust radius as a fraction of `upper - lower`.
    pub sigma_init: f64,
    pub sigma_grow: f64,
    pub sigma_shrink: f64,
    /// Initial penalty relative to `max(1, |h(x0)|)`.
    pub rho_init: f64,
    pub rho_min: f64,
    /// Penalty multiplier applied between outer iterations.
    pub rho_decay: f64,
    /// Linear and quadratic cost of the constraint slacks.
    pub slack_linear: f64,
    pub slack_quadratic: f64,
}

impl Default for CcsaOptions {
    fn default() -> Self {
        CcsaOptions {
            max_outer: 150,
            ftol_rel: 0.0,
            f_stop: None,
            max_inner: 30,
            sigma_init: 0.25,
            sigma_grow: 1.2,
            sigma_shrink: 0.7,
            rho_init: 1e-5,
            rho_min: 1e-30,
            rho_decay: 0.5,
            slack_linear: 1e6,
            slack_quadratic: 1.0,
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub g: Vec<f64>,
    /// Whether the inner loop reached a conservative model.
    pub accepted: bool,
    pub inner: usize,
    pub sigma_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    MaxOuter,
    FStop,
    FtolRel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    /// Iteration 0 is the initial point.
    pub iters: Vec<IterRecord>,
    pub evaluations: usize,
    pub stop: StopReason,
}

impl History {
    pub fn objective(&self) -> Vec<f64> {
        self.iters.iter().map(|r| r.f).collect()
    }

    /// CSV with columns `iter, loss, g0, g1, accepted, sigma_mean`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,loss,g0,g1,accepted,sigma_mean\n");
        for r in &self.iters {
            let g = |i: usize| r.g.get(i).map_or(String::new(), |v| format!("{v:e}"));
            s.push_str(&format!(
                "{},{:e},{},{},{},{:e}\n",
                r.iter,
                r.f,
                g(0),
                g(1),
                r.accepted as u8,
                r.sigma_mean
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcsaResult {
    /// Best feasible point, or the least infeasible one if none was.
    pub x: Vec<f64>,
    pub eval: Evaluation,
    pub history: History,
}

/// Separable quadratic models around one point.
struct Models<'a> {
    x: &'a [f64],
    ev: &'a Evaluation,
    sigma: &'a [f64],
    rho: &'a [f64],
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Models<'_> {
    /// Primal minimizer of the Lagrangian for multipliers `lambda`.
    fn step(&self, lambda: &[f64], y: &mut [f64]) {
        let a = self.rho[0] + lambda.iter().zip(&self.rho[1..]).map(|(l, r)| l * r).sum::<f64>();
        for j in 0..self.x.len() {
            let mut b = self.ev.df[j];
            for (i, l) in lambda.iter().enumerate() {
                b += l * self.ev.dg[i][j];
            }
            let s2 = self.sigma[j] * self.sigma[j];
            y[j] = (self.x[j] - s2 * b / a).clamp(self.lo[j], self.hi[j]);
        }
    }

    /// `(value, Σ ((y-x)/σ)² / 2)` of model `k` (0 = objective).
    fn value(&self, k: usize, y: &[f64]) -> (f64, f64) {
        let (h, dh) = if k == 0 {
            (self.ev.f, &self.ev.df)
        } else {
            (self.ev.g[k - 1], &self.ev.dg[k - 1])
        };
        let mut lin = 0.0;
        let mut w = 0.0;
        for j in 0..y.len() {
            let d = y[j] - self.x[j];
            lin += dh[j] * d;
            w += d * d / (self.sigma[j] * self.sigma[j]);
        }
        (h + lin + 0.5 * self.rho[k] * w, 0.5 * w)
    }
}

/// Solves the dual of the subproblem by cyclic coordinate ascent; each
/// coordinate's derivative is monotone, so it is located by bisection.
fn solve_dual(models: &Models, lambda: &mut [f64], opts: &CcsaOptions, y: &mut [f64]) {
    let m = lambda.len();
    if m == 0 {
        models.step(lambda, y);
        return;
    }
    let slack = |l: f64| ((l - opts.slack_linear) / opts.slack_quadratic).max(0.0);
    // derivative of the dual along coordinate i
    let deriv = |lambda: &[f64], i: usize, y: &mut [f64]| {
        models.step(lambda, y);
        models.value(i + 1, y).0 - slack(lambda[i])
    };
    for _sweep in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..m {
            let old = lambda[i];
            let mut trial = lambda.to_vec();
            trial[i] = 0.0;
            if deriv(&trial, i, y) <= 0.0 {
                lambda[i] = 0.0;
            } else {
                let mut lo = 0.0;
                let mut hi = old.max(1e-8);
                loop {
                    trial[i] = hi;
                    if deriv(&trial, i, y) <= 0.0 || hi > 1e300 {
                        break;
                    }
                    lo = hi;
                    hi *= 4.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi || hi - lo <= 1e-13 * hi {
                        break;
                    }
                    trial[i] = mid;
                    if deriv(&trial, i, y) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lambda[i] = hi;
            }
            moved = moved.max((lambda[i] - old).abs() / (1.0 + lambda[i].abs()));
        }
        if m == 1 || moved < 1e-10 {
            break;
        }
    }
    models.step(lambda, y);
}

/// Minimizes `problem` from `x0` with the quadratic CCSA method.
pub fn minimize<P: OptProblem + ?Sized>(problem: &mut P, x0: &[f64], opts: &CcsaOptions) -> Result<CcsaResult> {
    let n = problem.n_vars();
    let m = problem.n_constraints();
    let lower = problem.lower();
    let upper = problem.upper();
    if x0.len() != n || lower.len() != n || upper.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
        return Err(Error::InvalidConfig("lower bounds must be below upper bounds".into()));
    }
    let mut x: Vec<f64> = x0.iter().zip(lower.iter().zip(&upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect();
    let mut ev = problem.evaluate(&x)?;
    ev.check(n, m, 0)?;
    let mut evaluations = 1;

    let width: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| u - l).collect();
    let mut sigma: Vec<f64> = width.iter().map(|w| opts.sigma_init * w).collect();
    let mut rho: Vec<f64> = std::iter::once(ev.f)
        .chain(ev.g.iter().copied())
        .map(|h| opts.rho_init * h.abs().max(1.0))
        .collect();
    let mut lambda = vec![0.0; m];
    let (mut x_prev, mut x_prev2): (Option<Vec<f64>>, Option<Vec<f64>>) = (None, None);

    let mut best = (x.clone(), ev.clone());
    let better = |a: &Evaluation, b: &Evaluation| {
        let (va, vb) = (a.max_violation(), b.max_violation());
        if va <= 0.0 && vb <= 0.0 {
            a.f < b.f
        } else {
            va < vb
        }
    };
    let sigma_mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let mut iters = vec![IterRecord {
        iter: 0,
        f: ev.f,
        g: ev.g.clone(),
        accepted: true,
        inner: 0,
        sigma_mean: sigma_mean(&sigma),
    }];
    let mut stop = StopReason::MaxOuter;
    let mut y = vec![0.0; n];

    for outer in 1..=opts.max_outer {
        if let Some(fs) = opts.f_stop {
            if best.1.max_violation() <= 0.0 && best.1.f < fs {
                stop = StopReason::FStop;
                break;
            }
        }
        if let (Some(p1), Some(p2)) = (&x_prev, &x_prev2) {
            for j in 0..n {
                let s = (x[j] - p1[j]) * (p1[j] - p2[j]);
                let gamma = if s < 0.0 {
                    opts.sigma_shrink
                } else if s > 0.0 {
                    opts.sigma_grow
                } else {
                    1.0
                };
                sigma[j] = (sigma[j] * gamma).clamp(1e-8 * width[j], 10.0 * width[j]);
            }
        }

        let mut accepted = false;
        let mut inner = 0;
        let mut y_ev;
        loop {
            inner += 1;
            let models = Models {
                x: &x,
                ev: &ev,
                sigma: &sigma,
                rho: &rho,
                lo: (0..n).map(|j| (x[j] - sigma[j]).max(lower[j])).collect(),
                hi: (0..n).map(|j| (x[j] + sigma[j]).min(upper[j])).collect(),
            };
            solve_dual(&models, &mut lambda, opts, &mut y);
            y_ev = problem.evaluate(&y)?;
            y_ev.check(n, m, outer)?;
            evaluations += 1;

            let mut conservative = true;
            let mut new_rho = rho.clone();
            for k in 0..=m {
                let (model, w) = models.value(k, &y);
                let truth = if k == 0 { y_ev.f } else { y_ev.g[k - 1] };
                if truth > model + 1e-12 * model.abs() {
                    conservative = false;
                    if w > 0.0 {
                        new_rho[k] = (2.0 * rho[k]).max(1.1 * (rho[k] + (truth - model) / w));
                    } else {
                        new_rho[k] = 2.0 * rho[k];
                    }
                }
            }
            if better(&y_ev, &best.1) {
                best = (y.clone(), y_ev.clone());
            }
            if conservative {
                accepted = true;
                break;
            }
            rho = new_rho;
            if inner >= opts.max_inner {
                break;
            }
        }

        let f_old = ev.f;
        x_prev2 = x_prev.take();
        x_prev = Some(std::mem::replace(&mut x, y.clone()));
        ev = y_ev;
        for r in rho.iter_mut() {
            *r = (*r * opts.rho_decay).max(opts.rho_min);
        }
        iters.push(IterRecord {
            iter: outer,
            f: ev.f,
            g: ev.g.clone(),
            accepted,
            inner,
            sigma_mean: sigma_mean(&sigma),
        });
        if opts.ftol_rel > 0.0 && (ev.f - f_old).abs() <= opts.ftol_rel * ev.f.abs() {
            stop = StopReason::FtolRel;
            break;
        }
    }
    if stop == StopReason::MaxOuter {
        if let Some(fs) = opts.f_stop {
            if best.1.max_violation() <= 0.0 && best.1.f < fs {
                stop = StopReason::FStop;
            }
        }
    }
    Ok(CcsaResult {
        x: best.0,
        eval: best.1,
        history: History {
            iters,
            evaluations,
            stop,
        },
    })
}
