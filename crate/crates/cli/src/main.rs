use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neumann_core::experiment::{
    compare, run_config, write_atomic, ConfigError, Method, PathScheme, RunConfig, RunError,
    SolveReport, Task, TolerancePolicy,
};
use neumann_core::grid::GridFunction;

/// Numerical laboratory for parabolic Neumann problems with divergence terms.
#[derive(Parser, Debug)]
#[command(name = "neumann", version)]
struct Cli {
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (required unless the config sets `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Pairwise reductions in a fixed order, for byte-identical outputs.
    #[arg(long, global = true)]
    deterministic_reduction: bool,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Problem preset name.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Domain kind: `interval` or `ball`.
    #[arg(long, global = true)]
    domain: Option<String>,
    /// Domain parameters: `a,b` for an interval, `c1,..,cd,r` for a ball.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    domain_params: Option<Vec<f64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the geometry invariants of the domain.
    GeomCheck,
    /// Simulate reflected, penalized or coupled paths.
    Paths(PathsArgs),
    /// Solve for the lift and report its residual.
    Lift,
    /// Check the forward-backward integral on reflected paths.
    StarCheck(PathsArgs),
    /// Solve a linear problem.
    SolveLinear(MethodArgs),
    /// Solve the penalized sequence against the reflected reference.
    SolvePenalized {
        /// Penalty levels.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<f64>>,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Picard iteration for a nonlinear problem.
    SolveNonlinear(MethodArgs),
    /// Weak residual of the grid solution.
    Residual,
    /// Compare two solution tables, or FD against MC when none are given.
    Compare(CompareArgs),
    /// Print the checks recorded in `report.json`.
    Report,
}

#[derive(Args, Debug)]
struct PathsArgs {
    #[arg(long)]
    scheme: Option<PathScheme>,
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "T", alias = "horizon")]
    horizon: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct McArgs {
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args, Debug)]
struct MethodArgs {
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    grid_a: Option<PathBuf>,
    grid_b: Option<PathBuf>,
    #[arg(long)]
    se_multiplier: Option<f64>,
    #[arg(long)]
    bias: Option<f64>,
}

fn build_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let seed = match cli.command {
        Command::Report => cli.seed.or(Some(0)),
        _ => cli.seed,
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load_seeded(path, seed)?,
        None => RunConfig::from_toml_seeded("", seed)?,
    };
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    cfg.deterministic_reduction |= cli.deterministic_reduction;
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    if let Some(p) = &cli.preset {
        cfg.problem.preset = p.clone();
    }
    if let Some(d) = &cli.domain {
        cfg.domain.kind = d.clone();
    }
    if let Some(p) = &cli.domain_params {
        cfg.domain.params = p.clone();
    }
    let mc = |cfg: &mut RunConfig, a: &McArgs| {
        if let Some(p) = a.paths {
            cfg.mc.paths = p;
        }
        if let Some(dt) = a.dt {
            cfg.mc.dt = dt;
        }
    };
    let paths = |cfg: &mut RunConfig, a: &PathsArgs| {
        let p = &mut cfg.paths;
        p.scheme = a.scheme.unwrap_or(p.scheme);
        p.n = a.n.unwrap_or(p.n);
        p.dt = a.dt.unwrap_or(p.dt);
        p.horizon = a.horizon.unwrap_or(p.horizon);
        p.count = a.count.unwrap_or(p.count);
        if let Some(x0) = &a.x0 {
            p.x0 = x0.clone();
        }
    };
    let task = match &cli.command {
        Command::GeomCheck => Task::GeomCheck,
        Command::Paths(a) => {
            paths(&mut cfg, a);
            Task::Paths
        }
        Command::Lift => Task::Lift,
        Command::StarCheck(a) => {
            paths(&mut cfg, a);
            Task::StarCheck
        }
        Command::SolveLinear(a) => {
            cfg.solve.method = a.method.unwrap_or(cfg.solve.method);
            mc(&mut cfg, &a.mc);
            Task::SolveLinear
        }
        Command::SolvePenalized { n, mc: a } => {
            if let Some(n) = n {
                cfg.penalized.n = n.clone();
            }
            mc(&mut cfg, a);
            Task::SolvePenalized
        }
        Command::SolveNonlinear(a) => {
            cfg.picard.method = a.method.unwrap_or(cfg.picard.method);
            mc(&mut cfg, &a.mc);
            Task::SolveNonlinear
        }
        Command::Residual => Task::Residual,
        Command::Compare(a) => {
            cfg.compare.se_multiplier = a.se_multiplier.unwrap_or(cfg.compare.se_multiplier);
            cfg.compare.bias = a.bias.unwrap_or(cfg.compare.bias);
            Task::Compare
        }
        Command::Report => Task::GeomCheck,
    };
    cfg.tasks = vec![task];
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &SolveReport) {
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("content hash {}", report.content_hash);
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn read_grid(path: &Path) -> Result<GridFunction, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    GridFunction::read_csv(f).map_err(|e| format!("{}: {e}", path.display()))
}

fn compare_files(a: &Path, b: &Path, cfg: &RunConfig) -> ExitCode {
    let (ga, gb) = match (read_grid(a), read_grid(b)) {
        (Ok(ga), Ok(gb)) => (ga, gb),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let policy = TolerancePolicy {
        se_multiplier: cfg.compare.se_multiplier,
        bias: cfg.compare.bias,
    };
    let c = match compare(&ga, &gb, &policy) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let path = cfg.output.join("compare.csv");
    if let Err(e) = write_atomic(&path, c.to_csv().as_bytes()) {
        return fail(&e);
    }
    println!(
        "{} compare: max |diff| {:.3e} over {} points, table {}",
        if c.pass { "PASS" } else { "FAIL" },
        c.max_diff,
        c.rows.len(),
        path.display()
    );
    verdict(c.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&RunError::Config(e)),
    };
    match &cli.command {
        Command::Report => match SolveReport::load(&cfg.output) {
            Ok(r) => {
                print_report(&r);
                verdict(r.all_pass())
            }
            Err(e) => fail(&e),
        },
        Command::Compare(CompareArgs {
            grid_a: Some(a),
            grid_b: Some(b),
            ..
        }) => compare_files(a, b, &cfg),
        Command::Compare(CompareArgs {
            grid_a: Some(_), ..
        }) => {
            eprintln!("error: compare needs two tables or none");
            ExitCode::from(2)
        }
        _ => match run_config(&cfg) {
            Ok(r) => {
                print_report(&r);
                verdict(r.all_pass())
            }
            Err(e) => fail(&e),
        },
    }
}
