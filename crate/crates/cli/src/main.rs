mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use epishape::epidemic::run_epidemic;
use epishape::shape::{
    estimate_shape, kappa_tail, linear_growth_tail, radial_limit, sandwich_check, RadialParams, ShapeParams,
    DEFAULT_C_PRIME,
};
use epishape::stats::{
    estimate_lambda_c, fkg_check, slab_percolation_probe, survival_csv, survival_profile, tail_fit_curves,
    MonotoneEvent, TailModel,
};
use epishape::{Dim, FieldConfig, LatticeBox, Orientation, RecoveryDist, Site};
use serde_json::json;

use crate::config::{Resolved, Settings};
use crate::output::Output;

#[derive(Parser)]
#[command(name = "epishape", version, about = "Spatial SIR epidemic and oriented percolation experiments on Z^d")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One epidemic from the origin: infection and recovery times per site.
    Epidemic(EpidemicArgs),
    /// Directional radii of the rescaled infected set, optionally with the sandwich check.
    Shape(ShapeArgs),
    /// Samples of τ̂(o, nz)/n and the linear-growth tail.
    Radial(RadialArgs),
    /// Bisection brackets for the critical rate, out and in.
    LambdaC(LambdaCArgs),
    /// Survival curves with decay fits, or the tail of κ(o).
    Tails(TailsArgs),
    /// Empirical covariance of two increasing events.
    Fkg(FkgArgs),
    /// Slab percolation frequencies at several heights.
    Slab(SlabArgs),
    /// Exact invariants against brute-force oracles.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Flat TOML file of settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Lattice dimension (2, 3 or 4).
    #[arg(long)]
    d: Option<usize>,
    /// Infection rate λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Recovery law: const:T0, exp:MEAN, uniform:A,B or pareto:SHAPE,SCALE.
    #[arg(long)]
    recovery: Option<String>,
}

#[derive(Args)]
struct EpidemicArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, visible_alias = "L")]
    box_radius: Option<i64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Also list sites that were never infected.
    #[arg(long)]
    all_sites: Option<bool>,
}

#[derive(Args)]
struct ShapeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, visible_alias = "L")]
    box_radius: Option<i64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    keep_cloud: Option<bool>,
    #[arg(long)]
    eps: Option<f64>,
    /// Times for the sandwich check, run on replicas disjoint from the reference.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
}

#[derive(Args)]
struct RadialArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, visible_alias = "L")]
    box_radius: Option<i64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    c_prime: Option<i64>,
    /// Direction z as comma-separated coordinates (default e_1).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<i64>>,
    /// Estimated critical rate, used for a subcriticality warning.
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Slopes K for the linear-growth tail; omitted means no tail run.
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    growth_radii: Option<Vec<i64>>,
}

#[derive(Args)]
struct LambdaCArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<i64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Args)]
struct TailsArgs {
    #[command(flatten)]
    common: Common,
    /// `survival` or `kappa`.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<i64>>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long, visible_alias = "L")]
    box_radius: Option<i64>,
    #[arg(long)]
    c_prime: Option<i64>,
}

#[derive(Args)]
struct FkgArgs {
    #[command(flatten)]
    common: Common,
    /// Increasing event, e.g. "(0,0,0)->(1,0,0) & (1,0,0)->(2,0,0) | (0,0,0)->(0,1,0)".
    #[arg(long)]
    u: Option<String>,
    #[arg(long)]
    v: Option<String>,
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Args)]
struct SlabArgs {
    #[command(flatten)]
    common: Common,
    /// Slab thickness.
    #[arg(long)]
    k: Option<i64>,
    /// Lateral extent M.
    #[arg(long)]
    extent: Option<i64>,
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    MissingSetting(String),
    Truncated(String),
    Failed(String),
}

impl From<epishape::Error> for Failure {
    fn from(e: epishape::Error) -> Self {
        use epishape::Error as E;
        match e {
            E::Truncated(_) => Failure::Truncated(e.to_string()),
            E::Estimation(_) => Failure::Failed(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Failed(format!("i/o error: {e}"))
    }
}

struct Run {
    settings: Settings,
    jobs: Option<usize>,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> Result<Self, Failure> {
        let mut settings = Settings::load(common.config.as_deref())?;
        let jobs = settings.opt("jobs", common.jobs)?;
        let out = settings
            .opt::<String>("out", common.out.as_ref().map(|p| p.display().to_string()))?
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Run { settings, jobs, out })
    }

    fn field(&mut self, common: &Common, lambda_required: bool) -> Result<FieldConfig, Failure> {
        let d = self.settings.or("d", common.d, 3)?;
        let lambda = if lambda_required {
            self.settings.required("lambda", common.lambda)?
        } else {
            self.settings.or("lambda", common.lambda, 1.0)?
        };
        let recovery: String = self.settings.required("recovery", common.recovery.clone())?;
        let seed = self.settings.or("seed", common.seed, 1)?;
        let dist: RecoveryDist = recovery.parse()?;
        Ok(FieldConfig::new(Dim::new(d)?, lambda, dist, seed)?)
    }

    fn finish(self, command: &str) -> Result<(Resolved, Output), Failure> {
        let Run { settings, jobs, out } = self;
        if let Some(j) = jobs {
            if j == 0 {
                return Err(Failure::Usage("jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .map_err(|e| Failure::Failed(e.to_string()))?;
        }
        let mut resolved = settings.finish(command)?;
        resolved.values.remove("jobs");
        resolved.values.remove("out");
        let output = Output::new(&out, &resolved)?;
        Ok((resolved, output))
    }
}

fn summary(out: &Output, line: String) {
    println!("{line}");
    for p in &out.written {
        println!("  wrote {}", p.display());
    }
}

fn cmd_epidemic(a: EpidemicArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, true)?;
    let l = run.settings.or("box_radius", a.box_radius, 16)?;
    let horizon = run.settings.or("horizon", a.horizon, 10.0)?;
    let all = run.settings.or("all_sites", a.all_sites, false)?;
    let bounds = LatticeBox::centered(cfg.dim, l)?;
    let (_, mut out) = run.finish("epidemic")?;
    let tr = run_epidemic(&cfg, bounds, horizon)?;
    out.csv("epidemic.csv", &tr.to_csv(all))?;
    if tr.touched_boundary() {
        eprintln!("warning: the infected set reached the boundary of B_{l} before t = {horizon}; increase box_radius");
    }
    summary(&out, format!("epidemic: {} sites infected by t = {horizon} in B_{l}", tr.infected_count()));
    Ok(())
}

fn cmd_shape(a: ShapeArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, true)?;
    let l = run.settings.or("box_radius", a.box_radius, 32)?;
    let replicas = run.settings.or("replicas", a.replicas, 100)?;
    let t = run.settings.or("t", a.t, 5.0)?;
    let keep = run.settings.or("keep_cloud", a.keep_cloud, true)?;
    let ladder = run.settings.opt("ladder", a.ladder)?;
    let eps = match ladder {
        Some(_) => Some(run.settings.or("eps", a.eps, 0.3)?),
        None => run.settings.opt("eps", a.eps)?,
    };
    let (_, mut out) = run.finish("shape")?;
    let mut p = ShapeParams::new(l, replicas);
    p.keep_cloud = keep;
    let shape = estimate_shape(&cfg, t, &p)?;
    out.csv("radii.csv", &shape.radii_csv())?;
    if keep {
        out.csv("cloud.csv", &shape.cloud_csv())?;
    }
    let mut info = json!({
        "t": t,
        "survivors": shape.survivors,
        "excluded": shape.excluded,
        "radii": shape.radii,
    });
    if let (Some(ladder), Some(eps)) = (ladder, eps) {
        let mut q = ShapeParams::new(l, replicas);
        q.first_replica = replicas;
        let report = sandwich_check(&cfg, eps, &ladder, &shape, &q)?;
        out.csv("sandwich.csv", &report.to_csv())?;
        info["sandwich"] = serde_json::to_value(&report).expect("serializable");
    }
    out.json("shape.json", info)?;
    summary(
        &out,
        format!("shape: t = {t}, {} surviving of {replicas} replicas, {} directions", shape.survivors, shape.radii.len()),
    );
    Ok(())
}

fn cmd_radial(a: RadialArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, true)?;
    let l = run.settings.or("box_radius", a.box_radius, 32)?;
    let replicas = run.settings.or("replicas", a.replicas, 100)?;
    let c_prime = run.settings.or("c_prime", a.c_prime, DEFAULT_C_PRIME)?;
    let mut e1 = vec![0; cfg.dim.get()];
    e1[0] = 1;
    let z = run.settings.or("z", a.z, e1)?;
    let ns = run.settings.or("n", a.n, vec![2, 4, 8])?;
    let lambda_c = run.settings.opt("lambda_c", a.lambda_c)?;
    let k_grid = run.settings.opt("k_grid", a.k_grid)?;
    let growth_radii = match k_grid {
        Some(_) => Some(run.settings.or("growth_radii", a.growth_radii, vec![4, 8, 12, 16])?),
        None => run.settings.opt("growth_radii", a.growth_radii)?,
    };
    let (_, mut out) = run.finish("radial")?;
    let z = Site::new(&z)?;
    let mut p = RadialParams::new(l, replicas);
    p.c_prime = c_prime;
    p.lambda_c = lambda_c;
    let r = radial_limit(&cfg, &z, &ns, &p)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    out.csv("radial.csv", &r.to_csv())?;
    out.json(
        "radial.json",
        json!({ "z": z.to_string(), "points": r.points, "mu_hat": r.mu_hat, "ci": r.ci, "warnings": r.warnings }),
    )?;
    if let (Some(k), Some(radii)) = (k_grid, growth_radii) {
        let g = linear_growth_tail(&cfg, &radii, &k, &p)?;
        out.json("growth.json", serde_json::to_value(&g).expect("serializable"))?;
    }
    summary(&out, format!("radial: mu_hat({z}) = {:.6} [{:.6}, {:.6}]", r.mu_hat, r.ci.0, r.ci.1));
    Ok(())
}

fn cmd_lambda_c(a: LambdaCArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, false)?;
    let n = run.settings.or("n", a.n, 8)?;
    let tol = run.settings.or("tol", a.tol, 0.05)?;
    let replicas = run.settings.or("replicas", a.replicas, 400)?;
    let (_, mut out) = run.finish("lambda-c")?;
    let b_out = estimate_lambda_c(&cfg, n, Orientation::Out, tol, replicas)?;
    let b_in = estimate_lambda_c(&cfg, n, Orientation::In, tol, replicas)?;
    let overlap = b_out.overlaps(&b_in);
    out.json("lambda_c.json", json!({ "out": b_out, "in": b_in, "overlap": overlap }))?;
    summary(
        &out,
        format!(
            "lambda-c: n = {n}, out [{:.6}, {:.6}], in [{:.6}, {:.6}], {}",
            b_out.lo,
            b_out.hi,
            b_in.lo,
            b_in.hi,
            if overlap { "overlapping" } else { "disjoint" }
        ),
    );
    Ok(())
}

fn cmd_tails(a: TailsArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, true)?;
    let kind = run.settings.or("kind", a.kind, "survival".to_string())?;
    let replicas = run.settings.or("replicas", a.replicas, 1000)?;
    match kind.as_str() {
        "survival" => {
            let ns = run.settings.or("n", a.n, (2..=8).collect())?;
            let (_, mut out) = run.finish("tails")?;
            let mut curves = Vec::new();
            let mut fits = serde_json::Map::new();
            for orient in [Orientation::Out, Orientation::In] {
                let c = survival_profile(&cfg, &ns, orient, replicas)?;
                let fit = match tail_fit_curves(&c, TailModel::Exp) {
                    Ok(f) => serde_json::to_value(f).expect("serializable"),
                    Err(e) => {
                        eprintln!("warning: {orient} fit: {e}");
                        serde_json::Value::Null
                    }
                };
                fits.insert(orient.to_string(), fit);
                curves.extend(c);
            }
            out.csv("survival.csv", &survival_csv(&curves))?;
            let line = format!(
                "tails: survival fits out rate {}, in rate {}",
                fits["out"]["rate"], fits["in"]["rate"]
            );
            out.json("survival_fit.json", serde_json::Value::Object(fits))?;
            summary(&out, line);
        }
        "kappa" => {
            let l = run.settings.or("box_radius", a.box_radius, 32)?;
            let c_prime = run.settings.or("c_prime", a.c_prime, DEFAULT_C_PRIME)?;
            let (_, mut out) = run.finish("tails")?;
            let k = kappa_tail(&cfg, l, c_prime, replicas, 0)?;
            out.csv("kappa.csv", &k.to_csv())?;
            out.json(
                "kappa_fit.json",
                json!({ "fit": k.fit, "l_max": k.l_max, "truncated": k.truncated(), "replicas": replicas }),
            )?;
            let rate = k.fit.as_ref().map_or("none".to_string(), |f| format!("{:.4}", f.rate));
            summary(&out, format!("tails: kappa with l_max = {}, {} truncated, rate {rate}", k.l_max, k.truncated()));
        }
        other => return Err(Failure::Usage(format!("kind must be `survival` or `kappa`, got `{other}`"))),
    }
    Ok(())
}

fn cmd_fkg(a: FkgArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, true)?;
    let u: String = run.settings.required("u", a.u)?;
    let v: String = run.settings.required("v", a.v)?;
    let replicas = run.settings.or("replicas", a.replicas, 10_000)?;
    let (u, v): (MonotoneEvent, MonotoneEvent) = (u.parse()?, v.parse()?);
    let (_, mut out) = run.finish("fkg")?;
    let r = fkg_check(&cfg, &u, &v, replicas)?;
    out.json("fkg.json", serde_json::to_value(&r).expect("serializable"))?;
    summary(
        &out,
        format!("fkg: cov {:.6} se {:.6} ({})", r.cov, r.se, if r.passed { "cov >= -3 se" } else { "cov < -3 se" }),
    );
    Ok(())
}

fn cmd_slab(a: SlabArgs) -> Result<(), Failure> {
    let mut run = Run::new(&a.common)?;
    let cfg = run.field(&a.common, true)?;
    let k = run.settings.or("k", a.k, 4)?;
    let extent = run.settings.or("extent", a.extent, 32)?;
    let replicas = run.settings.or("replicas", a.replicas, 100)?;
    let (_, mut out) = run.finish("slab")?;
    let r = slab_percolation_probe(&cfg, k, extent, replicas)?;
    out.csv("slab.csv", &r.to_csv())?;
    summary(&out, format!("slab: k = {k}, M = {extent}, min frequency over heights {:.4}", r.min_frequency));
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<bool, Failure> {
    if let Some(j) = a.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Failure::Failed(e.to_string()))?;
    }
    let report = epishape::verify::run(a.quick);
    for c in &report.checks {
        let tag = if c.passed() { "ok" } else { "FAIL" };
        let extra = if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) };
        println!("[{tag}] {}: {} cases, {} failures{extra}", c.name, c.cases, c.failures);
    }
    let failed = report.checks.iter().filter(|c| !c.passed()).count();
    println!("verify: {} checks, {failed} failed", report.checks.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, result) = match cli.command {
        Command::Epidemic(a) => ("epidemic", cmd_epidemic(a)),
        Command::Shape(a) => ("shape", cmd_shape(a)),
        Command::Radial(a) => ("radial", cmd_radial(a)),
        Command::LambdaC(a) => ("lambda-c", cmd_lambda_c(a)),
        Command::Tails(a) => ("tails", cmd_tails(a)),
        Command::Fkg(a) => ("fkg", cmd_fkg(a)),
        Command::Slab(a) => ("slab", cmd_slab(a)),
        Command::Verify(a) => match cmd_verify(a) {
            Ok(true) => return ExitCode::SUCCESS,
            Ok(false) => return ExitCode::from(1),
            Err(e) => ("verify", Err(e)),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::MissingSetting(m)) => {
            eprintln!("error: {m}\n");
            let mut cmd = Cli::command();
            let usage = cmd
                .find_subcommand_mut(name)
                .map(|s| s.clone().bin_name(format!("epishape {name}")).render_usage().to_string())
                .unwrap_or_default();
            eprintln!("{usage}\n\nFor more information, try 'epishape {name} --help'.");
            ExitCode::from(2)
        }
        Err(Failure::Truncated(m)) => {
            eprintln!("error: {m}\nhint: increase box_radius");
            ExitCode::from(3)
        }
        Err(Failure::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
