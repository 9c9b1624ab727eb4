//! Multi-seed optimization studies on the thermal homogenization problem,
//! convergence statistics and report files.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccsa::{minimize, CcsaOptions, Evaluation, History, OptProblem};
use crate::error::{Error, Result};
use crate::fieldio::{write_field, write_pgm};
use crate::geomcon::{constraint_from_state, LengthscaleConfig, Phase};
use crate::grid_field::{ConicKernel, GridSpec, ScalarField2D};
use crate::homogenize::{MaterialPair, Tensor2, ThermalObjective};
use crate::projection::{Method, Pipeline, ProjectionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    /// Conic filter radius in pixels.
    pub kernel_radius: f64,
    pub projection: ProjectionConfig,
    pub materials: MaterialPair,
    pub target: Tensor2,
    pub n_seeds: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_loss_threshold")]
    pub loss_threshold: f64,
    #[serde(default)]
    pub constraints: Option<LengthscaleConfig>,
    pub rng_seed_base: u64,
}

fn default_max_outer() -> usize {
    150
}

fn default_loss_threshold() -> f64 {
    1e-7
}

impl ExperimentConfig {
    /// 61×61 porous unit cell, `R̃ = 5` px, `R̂ = Δx/2`, binary limit.
    pub fn desk_porous() -> Self {
        let grid = GridSpec::unit_cell(61).expect("valid grid");
        ExperimentConfig {
            grid,
            kernel_radius: 5.0,
            projection: ProjectionConfig {
                beta: f64::INFINITY,
                eta: 0.5,
                r_hat: 0.5 * grid.dx,
                method: Method::Ssp2,
            },
            materials: MaterialPair::porous(),
            target: Tensor2::thermal_target(),
            n_seeds: 20,
            max_outer: 150,
            loss_threshold: 1e-7,
            constraints: None,
            rng_seed_base: 20240601,
        }
    }

    pub fn desk_composite() -> Self {
        ExperimentConfig {
            materials: MaterialPair::composite(),
            ..Self::desk_porous()
        }
    }

    /// Filter radius in physical units.
    pub fn filter_radius(&self) -> f64 {
        self.kernel_radius * self.grid.dx
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.projection.validate_for(&self.grid)?;
        self.materials.validate()?;
        ConicKernel::new(self.kernel_radius)?;
        if self.n_seeds == 0 {
            return Err(Error::InvalidConfig("n_seeds must be at least 1".into()));
        }
        if !(self.loss_threshold > 0.0) {
            return Err(Error::InvalidConfig("loss_threshold must be positive".into()));
        }
        if let Some(lc) = &self.constraints {
            lc.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_value(v: serde_json::Value) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pipeline(&self, method: Method) -> Result<Pipeline> {
        Pipeline::new(
            self.grid,
            ConicKernel::new(self.kernel_radius)?,
            self.projection.with_method(method),
        )
    }
}

/// Independent uniform draws on `[0, 1]`, one per pixel in row-major
/// order, from a ChaCha stream keyed by `(base, seed)`.
pub fn random_init(grid: GridSpec, base: u64, seed: u64) -> ScalarField2D {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(seed);
    let values = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
    ScalarField2D { spec: grid, values }
}

/// The thermal loss with optional lengthscale constraints as an
/// optimization problem over the design density.
pub struct ThermalProblem {
    pub objective: ThermalObjective,
    pub constraints: Option<LengthscaleConfig>,
}

impl ThermalProblem {
    pub fn new(cfg: &ExperimentConfig, method: Method) -> Result<Self> {
        Ok(ThermalProblem {
            objective: ThermalObjective::new(cfg.pipeline(method)?, cfg.materials, cfg.target)?,
            constraints: cfg.constraints,
        })
    }
}

impl OptProblem for ThermalProblem {
    fn n_vars(&self) -> usize {
        self.objective.spec().len()
    }

    fn n_constraints(&self) -> usize {
        if self.constraints.is_some() {
            2
        } else {
            0
        }
    }

    /// Constraints are reported in units of `ε`.
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation> {
        let rho = ScalarField2D::new(self.objective.spec(), x.to_vec())?;
        let ev = self.objective.evaluate(&rho)?;
        let mut out = Evaluation::unconstrained(ev.loss, ev.grad.values);
        if let Some(lc) = &self.constraints {
            for phase in [Phase::Solid, Phase::Void] {
                let c = constraint_from_state(&self.objective.pipeline, &ev.state, lc, phase);
                out.g.push(c.value / lc.eps);
                out.dg.push(c.grad.values.iter().map(|v| v / lc.eps).collect());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: Method,
    pub loss: Vec<f64>,
    /// Constraint values `[g_s, g_v]` per iteration, when constrained.
    pub constraints: Vec<Vec<f64>>,
    pub converged: bool,
    pub iters_to_converge: Option<usize>,
    pub final_loss: f64,
    pub best_loss: f64,
    pub feasible: bool,
    pub evaluations: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub history: Option<History>,
    #[serde(skip)]
    pub structure: Option<ScalarField2D>,
    #[serde(skip)]
    pub projected: Option<ScalarField2D>,
}

impl RunRecord {
    fn failed(seed: u64, method: Method, err: Error) -> Self {
        RunRecord {
            seed,
            method,
            loss: vec![],
            constraints: vec![],
            converged: false,
            iters_to_converge: None,
            final_loss: f64::NAN,
            best_loss: f64::NAN,
            feasible: false,
            evaluations: 0,
            error: Some(err.to_string()),
            history: None,
            structure: None,
            projected: None,
        }
    }

    /// First iteration whose loss is below `threshold`, if any.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.loss.iter().position(|&l| l < threshold)
    }

    /// Per-iteration CSV with columns `iter, loss, g0, g1, accepted, sigma_mean`.
    pub fn to_csv(&self) -> String {
        match &self.history {
            Some(h) => {
                let mut h = h.clone();
                for (rec, g) in h.iters.iter_mut().zip(&self.constraints) {
                    rec.g = g.clone();
                }
                h.to_csv()
            }
            None => "iter,loss,g0,g1,accepted,sigma_mean\n".to_string(),
        }
    }
}

/// Optimizes one design from `x0` and summarizes the run.
pub fn run_single(cfg: &ExperimentConfig, method: Method, seed: u64, x0: &ScalarField2D, opts: &CcsaOptions) -> RunRecord {
    match try_run_single(cfg, method, seed, x0, opts) {
        Ok(r) => r,
        Err(e) => RunRecord::failed(seed, method, e),
    }
}

fn try_run_single(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    x0: &ScalarField2D,
    opts: &CcsaOptions,
) -> Result<RunRecord> {
    let mut problem = ThermalProblem::new(cfg, method)?;
    let opts = CcsaOptions {
        max_outer: cfg.max_outer,
        ..*opts
    };
    let res = minimize(&mut problem, &x0.values, &opts)?;
    let h = &res.history;
    let loss: Vec<f64> = h.iters.iter().map(|r| r.f).collect();
    let eps = cfg.constraints.map_or(1.0, |lc| lc.eps);
    let constraints: Vec<Vec<f64>> = h.iters.iter().map(|r| r.g.iter().map(|g| g * eps).collect()).collect();
    let feasible = res.eval.g.iter().all(|&g| g <= 0.0);
    let iters_to_converge = loss.iter().position(|&l| l < cfg.loss_threshold);
    let structure = ScalarField2D::new(cfg.grid, res.x.clone())?;
    let projected = problem.objective.pipeline.forward(&structure).rho_hat;
    Ok(RunRecord {
        seed,
        method,
        converged: iters_to_converge.is_some(),
        iters_to_converge,
        final_loss: res.eval.f,
        best_loss: loss.iter().copied().fold(f64::INFINITY, f64::min),
        feasible,
        evaluations: h.evaluations,
        error: None,
        history: Some(res.history.clone()),
        structure: Some(structure),
        projected: Some(projected),
        loss,
        constraints,
    })
}

/// Pairwise outcomes over seeds run with both projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub both: usize,
    pub neither: usize,
    pub ssp2_only: usize,
    pub ssp1_only: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: ExperimentConfig,
    pub optimizer: CcsaOptions,
    /// Sorted by `(method, seed)`.
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub runs: usize,
    pub converged: usize,
    pub failed: usize,
    pub median_iters_to_converge: Option<f64>,
    pub median_final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub loss_threshold: f64,
    pub outcomes: OutcomeCounts,
    pub methods: BTreeMap<String, MethodSummary>,
    pub config: ExperimentConfig,
    pub optimizer: CcsaOptions,
    pub init_distribution: &'static str,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

impl StudyReport {
    pub fn runs_of(&self, method: Method) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.method == method)
    }

    pub fn run(&self, method: Method, seed: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.method == method && r.seed == seed)
    }

    pub fn converged_count(&self, method: Method, threshold: f64) -> usize {
        self.runs_of(method).filter(|r| r.first_below(threshold).is_some()).count()
    }

    pub fn outcomes_at(&self, threshold: f64) -> OutcomeCounts {
        let mut c = OutcomeCounts::default();
        for r1 in self.runs_of(Method::Ssp1) {
            let Some(r2) = self.run(Method::Ssp2, r1.seed) else { continue };
            match (r1.first_below(threshold).is_some(), r2.first_below(threshold).is_some()) {
                (true, true) => c.both += 1,
                (false, false) => c.neither += 1,
                (false, true) => c.ssp2_only += 1,
                (true, false) => c.ssp1_only += 1,
            }
        }
        c
    }

    pub fn outcomes(&self) -> OutcomeCounts {
        self.outcomes_at(self.config.loss_threshold)
    }

    /// Fraction of runs per method converged by each iteration.
    pub fn cumulative(&self) -> Vec<(usize, BTreeMap<Method, f64>)> {
        let methods: Vec<Method> = {
            let mut m: Vec<Method> = self.runs.iter().map(|r| r.method).collect();
            m.dedup();
            m
        };
        (0..=self.config.max_outer)
            .map(|k| {
                let row = methods
                    .iter()
                    .map(|&m| {
                        let total = self.runs_of(m).count().max(1) as f64;
                        let done = self
                            .runs_of(m)
                            .filter(|r| r.iters_to_converge.is_some_and(|i| i <= k))
                            .count() as f64;
                        (m, done / total)
                    })
                    .collect();
                (k, row)
            })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let mut methods = BTreeMap::new();
        for m in [Method::Tanh, Method::Ssp1, Method::Ssp2] {
            let runs: Vec<&RunRecord> = self.runs_of(m).collect();
            if runs.is_empty() {
                continue;
            }
            methods.insert(
                m.to_string(),
                MethodSummary {
                    runs: runs.len(),
                    converged: runs.iter().filter(|r| r.converged).count(),
                    failed: runs.iter().filter(|r| r.error.is_some()).count(),
                    median_iters_to_converge: median(
                        runs.iter().filter_map(|r| r.iters_to_converge.map(|i| i as f64)).collect(),
                    ),
                    median_final_loss: median(
                        runs.iter().map(|r| r.final_loss).filter(|l| l.is_finite()).collect(),
                    ),
                },
            );
        }
        Summary {
            loss_threshold: self.config.loss_threshold,
            outcomes: self.outcomes(),
            methods,
            config: self.config.clone(),
            optimizer: self.optimizer,
            init_distribution: "iid uniform [0,1], ChaCha8 keyed by (rng_seed_base, seed)",
        }
    }

    pub fn cumulative_csv(&self) -> String {
        let rows = self.cumulative();
        let methods: Vec<Method> = rows.first().map(|r| r.1.keys().copied().collect()).unwrap_or_default();
        let mut s = String::from("iter");
        for m in &methods {
            s.push_str(&format!(",{m}"));
        }
        s.push('\n');
        for (k, row) in rows {
            s.push_str(&k.to_string());
            for m in &methods {
                s.push_str(&format!(",{}", row[m]));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every `(method, seed)` pair from the given initial fields.
pub fn run_study_from(
    cfg: &ExperimentConfig,
    inits: &[(u64, ScalarField2D)],
    methods: &[Method],
    opts: &CcsaOptions,
) -> Result<StudyReport> {
    cfg.validate()?;
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..inits.len()).map(move |i| (m, i)))
        .collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(m, i)) = jobs.get(j) else { break };
                let (seed, x0) = &inits[i];
                let r = run_single(cfg, m, *seed, x0, opts);
                results.lock().expect("no poisoned workers").push(r);
            });
        }
    });
    let mut runs = results.into_inner().expect("no poisoned workers");
    runs.sort_by_key(|r| (r.method, r.seed));
    Ok(StudyReport {
        config: cfg.clone(),
        optimizer: *opts,
        runs,
    })
}

/// Runs `cfg.n_seeds` random initial fields with each method.
pub fn run_study(cfg: &ExperimentConfig, methods: &[Method]) -> Result<StudyReport> {
    let inits: Vec<(u64, ScalarField2D)> = (0..cfg.n_seeds as u64)
        .map(|s| (s, random_init(cfg.grid, cfg.rng_seed_base, s)))
        .collect();
    run_study_from(cfg, &inits, methods, &CcsaOptions::default())
}

/// Restarts the converged SSP1 designs of `base` (at most `count`, lowest
/// seeds first) with the lengthscale constraints switched on.
pub fn constrained_phase(
    base: &StudyReport,
    lc: LengthscaleConfig,
    count: usize,
    methods: &[Method],
) -> Result<StudyReport> {
    let inits: Vec<(u64, ScalarField2D)> = base
        .runs_of(Method::Ssp1)
        .filter(|r| r.converged)
        .filter_map(|r| r.structure.clone().map(|s| (r.seed, s)))
        .take(count)
        .collect();
    let cfg = ExperimentConfig {
        constraints: Some(lc),
        ..base.config.clone()
    };
    run_study_from(&cfg, &inits, methods, &base.optimizer)
}

/// Largest relative gap between the initial SSP1 and SSP2 losses over
/// seeds run with both.
pub fn initial_loss_gap(study: &StudyReport) -> f64 {
    study
        .runs_of(Method::Ssp1)
        .filter_map(|r1| {
            let r2 = study.run(Method::Ssp2, r1.seed)?;
            let (a, b) = (*r1.loss.first()?, *r2.loss.first()?);
            Some((a - b).abs() / a.abs().max(b.abs()))
        })
        .fold(0.0, f64::max)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `summary.json`, `cumulative.csv`, per-run CSVs and final
/// structures (raw field plus PGM preview) into `dir`.
pub fn report(study: &StudyReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = serde_json::to_string_pretty(&study.summary()).map_err(|e| Error::Format {
        path: dir.join("summary.json"),
        msg: e.to_string(),
    })?;
    write(&dir.join("summary.json"), &summary)?;
    write(&dir.join("cumulative.csv"), &study.cumulative_csv())?;
    for r in &study.runs {
        let stem = format!("{}_{}", r.method, r.seed);
        write(&dir.join(format!("run_{stem}.csv")), &r.to_csv())?;
        if let Some(s) = &r.structure {
            write_field(&dir.join(format!("final_{stem}.raw")), s)?;
        }
        if let Some(p) = &r.projected {
            write_pgm(&dir.join(format!("final_{stem}.pgm")), p)?;
        }
    }
    Ok(())
}
