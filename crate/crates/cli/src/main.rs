use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use topoproj::bench::{random_init, report, run_single, run_study, ExperimentConfig};
use topoproj::ccsa::CcsaOptions;
use topoproj::fieldio::{read_field, write_field};
use topoproj::geomcon::{ruler_min_lengthscale, Lengthscale, Phase};
use topoproj::grid_field::{Boundary, ConicKernel, GridSpec};
use topoproj::homogenize::{effective_tensor, MaterialPair};
use topoproj::projection::{gray_count, parse_beta, Method, Pipeline, ProjectionConfig};
use topoproj::synthetic::{linspace, sweep_alpha, sweep_cassini, write_csv};

#[derive(Parser)]
#[command(name = "topoproj", version, about = "Smoothed subpixel projection toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Filter and project a density field; prints the gray-pixel count.
    Project {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "ssp2")]
        method: Method,
        #[arg(long, default_value = "inf", value_parser = beta_arg)]
        beta: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        /// Smoothing radius, physical length or pixels with a `px` suffix.
        #[arg(long, default_value = "0.5px")]
        rhat: String,
        /// Conic filter radius in pixels.
        #[arg(long, default_value_t = 5.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep a synthetic geometry through its topology change.
    Synthetic {
        family: Family,
        /// Parameter range as `lo:hi:count`.
        #[arg(long)]
        sweep: String,
        /// Finite-difference step in the swept parameter.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Effective conductivity tensor of a projected structure.
    Homogenize {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        k1: f64,
        #[arg(long, default_value_t = 1.0)]
        k2: f64,
        /// Writes JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One optimization run from a random initial field.
    Optimize {
        /// TOML experiment config; the porous desk setup when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "ssp2")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-seed study with both projections.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ssp1,ssp2")]
        methods: Vec<Method>,
        /// Validate the config and print it as JSON without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Minimum feature size of a binary structure.
    Ruler {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
        phase: PhaseArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Parabola,
    Cassini,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PhaseArg {
    Solid,
    Void,
    Both,
}

fn beta_arg(s: &str) -> Result<f64, String> {
    parse_beta(s).map_err(|e| e.to_string())
}

fn parse_length(s: &str, dx: f64) -> Result<f64> {
    let (num, scale) = match s.trim().strip_suffix("px") {
        Some(n) => (n, dx),
        None => (s.trim(), 1.0),
    };
    let v: f64 = num.trim().parse().with_context(|| format!("invalid length `{s}`"))?;
    Ok(v * scale)
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        bail!("sweep must be `lo:hi:count`, got `{s}`");
    };
    let n: usize = n.parse().with_context(|| format!("invalid count in `{s}`"))?;
    Ok(linspace(lo.parse()?, hi.parse()?, n))
}

/// TOML allows `inf` floats, which JSON cannot carry, so they become strings.
fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => json!(i),
        toml::Value::Float(f) if f.is_finite() => json!(f),
        toml::Value::Float(f) => Value::String(if f > 0.0 { "inf" } else { "-inf" }.into()),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ExperimentConfig::from_toml_value(toml_to_json(v)).with_context(|| format!("invalid config {}", path.display()))
}

fn lengthscale_json(l: Lengthscale) -> Value {
    match l {
        Lengthscale::Pixels(p) => json!(p),
        Lengthscale::NoFeatures => json!("no_features"),
        Lengthscale::Unbounded => json!("unbounded"),
    }
}

fn write_json(path: Option<&Path>, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Project { input, method, beta, eta, rhat, radius, out } => {
            let rho = read_field(&input)?;
            let r_hat = parse_length(&rhat, rho.spec.dx)?;
            let cfg = ProjectionConfig::new(beta, eta, r_hat, method)?;
            let pipe = Pipeline::new(rho.spec, ConicKernel::new(radius)?, cfg)?;
            let rho_hat = pipe.forward(&rho).rho_hat;
            write_field(&out, &rho_hat)?;
            println!("{}", gray_count(&rho_hat, 1e-3));
        }
        Cmd::Synthetic { family, sweep, step, eta, csv } => {
            let params = parse_sweep(&sweep)?;
            let rows = match family {
                Family::Parabola => {
                    let r_hat = 1.0;
                    let cfg = ProjectionConfig::new(f64::INFINITY, eta, r_hat, Method::Ssp2)?;
                    let grid = GridSpec::new(31, 5, 2.0 * r_hat, Boundary::Clamped)?;
                    sweep_alpha(&cfg, grid, 6.0 * r_hat, &params, step)?
                }
                Family::Cassini => {
                    let h = 1.0 / 3.0;
                    let cfg = ProjectionConfig::new(f64::INFINITY, eta, h, Method::Ssp2)?;
                    let grid = GridSpec::new(15, 15, h, Boundary::Clamped)?;
                    sweep_cassini(&cfg, grid, &params, step)?
                }
            };
            write_csv(&csv, &rows)?;
        }
        Cmd::Homogenize { structure, k1, k2, out } => {
            let rho_hat = read_field(&structure)?;
            let r = effective_tensor(&rho_hat, &MaterialPair::new(k1, k2)?)?;
            let v = json!({
                "xx": r.tensor.xx,
                "xy": r.tensor.xy,
                "yy": r.tensor.yy,
                "residuals": r.residuals,
            });
            write_json(out.as_deref(), &v)?;
        }
        Cmd::Optimize { config, method, seed, out } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => ExperimentConfig::desk_porous(),
            };
            let x0 = random_init(cfg.grid, cfg.rng_seed_base, seed);
            let r = run_single(&cfg, method, seed, &x0, &CcsaOptions::default());
            if let Some(e) = &r.error {
                bail!("run failed: {e}");
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let stem = format!("{method}_{seed}");
            std::fs::write(out.join(format!("run_{stem}.csv")), r.to_csv())
                .with_context(|| format!("writing into {}", out.display()))?;
            if let Some(s) = &r.structure {
                write_field(&out.join(format!("final_{stem}.raw")), s)?;
            }
            if let Some(p) = &r.projected {
                write_field(&out.join(format!("projected_{stem}.raw")), p)?;
            }
            let v = json!({
                "method": method,
                "seed": seed,
                "final_loss": r.final_loss,
                "best_loss": r.best_loss,
                "converged": r.converged,
                "iters_to_converge": r.iters_to_converge,
                "feasible": r.feasible,
            });
            write_json(None, &v)?;
        }
        Cmd::Bench { config, out, methods, dry_run } => {
            let cfg = load_config(&config)?;
            if dry_run {
                return write_json(None, &serde_json::to_value(&cfg)?);
            }
            let study = run_study(&cfg, &methods)?;
            report(&study, &out)?;
            let o = study.outcomes();
            eprintln!(
                "both {} neither {} ssp2_only {} ssp1_only {}",
                o.both, o.neither, o.ssp2_only, o.ssp1_only
            );
        }
        Cmd::Ruler { structure, phase } => {
            let field = read_field(&structure)?;
            let mut v = serde_json::Map::new();
            if phase != PhaseArg::Void {
                v.insert("solid_px".into(), lengthscale_json(ruler_min_lengthscale(&field, Phase::Solid)));
            }
            if phase != PhaseArg::Solid {
                v.insert("void_px".into(), lengthscale_json(ruler_min_lengthscale(&field, Phase::Void)));
            }
            write_json(None, &Value::Object(v))?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
