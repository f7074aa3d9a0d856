//! Config-driven runs: every task writes its tables atomically into the
//! output directory and adds metrics and pass/fail checks to the report.

pub mod compare;
pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bsde::{
    contraction_constants, picard_solve_mc, solve_linear_mc, solve_penalized_bsde, McConfig,
    McPicardConfig, PicardConfig, PicardHistory,
};
use crate::fd::{default_test_bank, picard_solve_fd, solve_linear_fd, weak_residual, FDConfig};
use crate::geometry::{geometry_selfcheck, DomainSpec};
use crate::grid::GridFunction;
use crate::lift::{solve_lift_spacetime, LiftField};
use crate::paths::{
    coupled_distance, simulate_coupled, simulate_penalized, simulate_reflected, star_integral,
    Noise, PathSpec, ReflectionScheme,
};
use crate::point::Point;
use crate::presets::Preset;
use crate::stats::{path_rng, per_path, Estimate, Reduction};

pub use compare::{compare, CompareError, CompareRow, Comparison, TolerancePolicy};
pub use config::{ConfigError, Method, PathScheme, RunConfig, Task};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{task}: {message}")]
    Solver { task: &'static str, message: String },
}

impl RunError {
    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRef {
    pub name: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub config: String,
    /// Hash over every table name and content.
    pub content_hash: String,
    pub tables: Vec<TableRef>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl SolveReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| RunError::Io {
            path,
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("table");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dom: DomainSpec,
    preset: Preset,
    reduction: Reduction,
    tables: Vec<TableRef>,
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    events: Vec<serde_json::Value>,
}

fn solver_err(task: &'static str) -> impl Fn(&dyn std::fmt::Display) -> RunError {
    move |e| RunError::Solver {
        task,
        message: e.to_string(),
    }
}

impl Ctx<'_> {
    fn table(&mut self, name: &str, file: &str, content: String) -> Result<(), RunError> {
        write_atomic(&self.cfg.output.join(file), content.as_bytes())?;
        self.tables.push(TableRef {
            name: name.into(),
            file: file.into(),
            sha256: sha256_hex(content.as_bytes()),
        });
        Ok(())
    }

    fn metric(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail,
        });
    }

    fn mc_config(&self) -> McConfig {
        McConfig {
            paths: self.cfg.mc.paths,
            dt: self.cfg.mc.dt,
            seed: self.cfg.seed,
            scheme: self.cfg.mc.scheme,
            se_cap: self.cfg.mc.se_cap,
            reduction: self.reduction,
        }
    }

    fn fd_config(&self) -> FDConfig {
        FDConfig {
            space_nodes: self.cfg.fd.space_nodes,
            time_nodes: self.cfg.fd.time_nodes,
            theta: self.cfg.fd.theta,
        }
    }

    fn eval_points(&self) -> Result<Vec<Point>, RunError> {
        if self.dom.dimension() != 1 {
            return Err(ConfigError::Invalid {
                key: "mc.eval_x".into(),
                reason: "evaluation lists are 1-D; use an interval domain".into(),
            }
            .into());
        }
        Ok(self
            .cfg
            .mc
            .eval_x
            .iter()
            .map(|&x| Point::scalar(x))
            .collect())
    }

    fn lift(&self, task: &'static str) -> Result<LiftField, RunError> {
        let coef = &self.preset.coefficients;
        let slices = GridFunction::uniform_times(0.0, coef.horizon, self.cfg.lift.slices.max(2));
        solve_lift_spacetime(coef, &self.dom, self.cfg.lift.nodes, &slices)
            .map_err(|e| solver_err(task)(&e))
    }

    fn exact_error(&self, u: &GridFunction) -> Option<(f64, bool)> {
        let exact = self.preset.exact.as_ref()?;
        let mut err: f64 = 0.0;
        let mut within = true;
        for i in 0..u.nt() {
            for j in 0..u.nx() {
                let k = u.index(i, j);
                let e = (u.values[k] - exact(u.t_nodes[i], &u.x_nodes[j])).abs();
                err = err.max(e);
                within &= e <= 3.0 * u.std_errors[k] + self.cfg.compare.bias;
            }
        }
        Some((err, within))
    }

    fn solve_mc(&self, task: &'static str) -> Result<GridFunction, RunError> {
        let lift = self.lift(task)?;
        let xs = self.eval_points()?;
        solve_linear_mc(
            &self.dom,
            &self.preset.coefficients,
            &lift,
            &self.cfg.mc.eval_t,
            &xs,
            &self.mc_config(),
        )
        .map_err(|e| solver_err(task)(&e))
    }

    fn solve_fd(&self, task: &'static str) -> Result<GridFunction, RunError> {
        solve_linear_fd(&self.dom, &self.preset.coefficients, &self.fd_config())
            .map_err(|e| solver_err(task)(&e))
    }

    fn geom_check(&mut self) -> Result<(), RunError> {
        let rep = geometry_selfcheck(&self.dom, self.cfg.geometry.samples, self.cfg.seed);
        let rows = [
            ("sign_consistency", rep.sign_consistency),
            ("normal_alignment", rep.normal_alignment),
            ("projection_idempotence", rep.projection_idempotence),
            ("distance_consistency", rep.distance_consistency),
            ("unit_normal", rep.unit_normal),
            ("gradient_fd", rep.gradient_fd),
        ];
        let mut csv = String::from("invariant,max_violation\n");
        for (name, v) in rows {
            csv.push_str(&format!("{name},{v:?}\n"));
            self.metric(format!("geometry.{name}"), v);
        }
        self.table("geometry", "geometry.csv", csv)?;
        let pass = rep.passes(1e-10, 1e-6);
        self.check(
            "geometry",
            pass,
            format!(
                "max exact violation {:.3e}, fd gradient {:.3e}",
                rep.max_exact_violation(),
                rep.gradient_fd
            ),
        );
        Ok(())
    }

    fn paths(&mut self) -> Result<(), RunError> {
        let p = &self.cfg.paths;
        let x0 = Point::from_slice(&p.x0);
        let spec = PathSpec::new(x0, 0.0, p.horizon, p.dt);
        let (dom, seed, scheme, n) = (self.dom.clone(), self.cfg.seed, p.scheme, p.n);
        let rows = per_path(p.count, |i| {
            let mut noise = Noise::stream(seed, i);
            match scheme {
                PathScheme::Coupled => {
                    simulate_coupled(&dom, None, n, &spec, &mut noise).map(|(pen, refl)| {
                        let d = coupled_distance(&pen, &refl);
                        let valid = pen.validate(&dom).is_ok() && refl.validate(&dom).is_ok();
                        (
                            Some(d.sup_distance),
                            refl.local_time(),
                            Some(d.sup_k_gap),
                            valid,
                        )
                    })
                }
                PathScheme::Reflected => {
                    simulate_reflected(&dom, None, ReflectionScheme::Projection, &spec, &mut noise)
                        .map(|b| (None, b.local_time(), None, b.validate(&dom).is_ok()))
                }
                PathScheme::Penalized => {
                    simulate_penalized(&dom, None, n, &spec, &mut noise).map(|b| {
                        let l: f64 = b.penalized_local_time_increments().iter().sum();
                        (None, l, None, b.validate(&dom).is_ok())
                    })
                }
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| solver_err("paths")(&e))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        let mut csv = String::from("path_id,sup_distance,L_T,K_gap\n");
        for (i, (d, l, k, _)) in rows.iter().enumerate() {
            csv.push_str(&format!("{i},{},{l:?},{}\n", opt(*d), opt(*k)));
        }
        self.table("paths", "paths.csv", csv)?;
        let lt: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let est = Estimate::from_samples(&lt, self.reduction);
        self.metric("paths.mean_local_time", est.mean);
        self.metric("paths.mean_local_time_se", est.std_err);
        let mut stats = json!({"event": "paths", "scheme": format!("{scheme:?}"), "paths": p.count,
            "mean_local_time": est.mean, "mean_local_time_se": est.std_err});
        if scheme == PathScheme::Coupled {
            let sq: Vec<f64> = rows.iter().map(|r| r.0.unwrap_or(0.0).powi(2)).collect();
            let gap: Vec<f64> = rows.iter().map(|r| r.2.unwrap_or(0.0)).collect();
            let (sq, gap) = (
                Estimate::from_samples(&sq, self.reduction),
                Estimate::from_samples(&gap, self.reduction),
            );
            self.metric("paths.sup_distance_sq", sq.mean);
            self.metric("paths.sup_k_gap", gap.mean);
            stats["sup_distance_sq"] = json!(sq.mean);
            stats["sup_k_gap"] = json!(gap.mean);
        }
        self.events.push(stats);
        let valid = rows.iter().all(|r| r.3);
        self.check(
            "path-invariants",
            valid,
            "every bundle satisfies its invariants".into(),
        );
        Ok(())
    }

    fn lift_task(&mut self) -> Result<(), RunError> {
        let lift = self.lift("lift")?;
        let mut csv = String::from("t,x,G,dG_dx,dG_dt\n");
        for (i, t) in lift.t_slices.iter().enumerate() {
            for (j, x) in lift.o_grid.iter().enumerate() {
                let (g, gx, gt) = lift.at(i, j);
                csv.push_str(&format!("{t:?},{x:?},{g:?},{gx:?},{gt:?}\n"));
            }
        }
        self.table("lift", "lift.csv", csv)?;
        let (sg, sgrad, sdt) = lift.bounds();
        self.metric("lift.sup_g", sg);
        self.metric("lift.sup_grad", sgrad);
        self.metric("lift.sup_dt", sdt);
        self.metric("lift.max_residual", lift.max_residual);
        self.metric("lift.condition", lift.condition);
        let tol = 10.0 * f64::EPSILON * lift.condition;
        self.check(
            "lift-residual",
            lift.max_residual <= tol,
            format!(
                "relative residual {:.3e}, tolerance {tol:.3e}",
                lift.max_residual
            ),
        );
        Ok(())
    }

    fn star_check(&mut self) -> Result<(), RunError> {
        let p = &self.cfg.paths;
        let (dom, seed) = (self.dom.clone(), self.cfg.seed);
        let dim = dom.dimension();
        let c = Point::from_slice(&[0.7, -0.3, 0.2][..dim]);
        let rows = per_path(p.count, |i| {
            let x0 = dom.sample_uniform(&mut path_rng(seed ^ 0x5157, i));
            let spec = PathSpec::new(x0, 0.0, p.horizon, p.dt);
            let b = simulate_reflected(
                &dom,
                None,
                ReflectionScheme::Projection,
                &spec,
                &mut Noise::stream(seed, i),
            )?;
            let constant = star_integral(|_, _| c, &b)?;
            let identity = star_integral(|_, x| *x, &b)?;
            let scale: f64 = b.brownian_increments.iter().map(|d| d.norm()).sum::<f64>() * c.norm();
            Ok::<_, crate::paths::PathError>((constant.abs() / scale.max(1.0), identity))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| solver_err("star-check")(&e))?;
        let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
        let ids: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let est = Estimate::from_samples(&ids, self.reduction);
        let target = -(dim as f64) * p.horizon;
        let mut csv = String::from("path_id,constant_field_relative,identity_field\n");
        for (i, (a, b)) in rows.iter().enumerate() {
            csv.push_str(&format!("{i},{a:?},{b:?}\n"));
        }
        self.table("star", "star.csv", csv)?;
        self.metric("star.constant_max_relative", worst);
        self.metric("star.identity_mean", est.mean);
        self.metric("star.identity_se", est.std_err);
        self.check(
            "star-constant-null",
            worst <= 1e-12,
            format!("max relative {worst:.3e}"),
        );
        self.check(
            "star-divergence-mean",
            (est.mean - target).abs() <= 3.0 * est.std_err,
            format!(
                "mean {:.5} +- {:.5}, target {target}",
                est.mean, est.std_err
            ),
        );
        Ok(())
    }

    fn solve_linear(&mut self) -> Result<(), RunError> {
        let u = match self.cfg.solve.method {
            Method::Fd => self.solve_fd("solve-linear")?,
            Method::Mc => self.solve_mc("solve-linear")?,
        };
        self.table("solution", "solution.csv", u.to_csv_string())?;
        self.metric("solution.max_se", u.max_std_err());
        if let Some((err, within)) = self.exact_error(&u) {
            self.metric("solution.max_error", err);
            match self.cfg.solve.method {
                Method::Fd => self.check(
                    "fd-exact-error",
                    err <= 5e-3,
                    format!("max error {err:.3e}"),
                ),
                Method::Mc => self.check(
                    "mc-exact-error",
                    within,
                    format!("max error {err:.3e}, max SE {:.3e}", u.max_std_err()),
                ),
            }
            if self.preset.name == "constant" {
                let pass = match self.cfg.solve.method {
                    Method::Fd => err <= 1e-12,
                    Method::Mc => err == 0.0 && u.max_std_err() == 0.0,
                };
                self.check("constant-exactness", pass, format!("max error {err:.3e}"));
            }
        }
        Ok(())
    }

    fn solve_penalized(&mut self) -> Result<(), RunError> {
        let lift = self.lift("solve-penalized")?;
        let xs = self.eval_points()?;
        let mc = self.mc_config();
        let coef = &self.preset.coefficients;
        let ts = self.cfg.mc.eval_t.clone();
        let reference = solve_linear_mc(&self.dom, coef, &lift, &ts, &xs, &mc)
            .map_err(|e| solver_err("solve-penalized")(&e))?;
        self.table(
            "reference",
            "solution_reflected.csv",
            reference.to_csv_string(),
        )?;
        let mut errors = Vec::new();
        for &n in &self.cfg.penalized.n.clone() {
            let un = solve_penalized_bsde(
                &self.dom,
                &self.preset.coefficients,
                &lift,
                n,
                &ts,
                &xs,
                &mc,
            )
            .map_err(|e| solver_err("solve-penalized")(&e))?;
            let e = un.max_abs_diff(&reference);
            self.metric(format!("penalized.n{n}.max_diff"), e);
            self.table(
                &format!("penalized_n{n}"),
                &format!("solution_n{n}.csv"),
                un.to_csv_string(),
            )?;
            errors.push(e);
        }
        let monotone = errors.windows(2).all(|w| w[1] < w[0]);
        self.check(
            "penalized-monotone",
            monotone,
            format!("max differences {errors:?}"),
        );
        Ok(())
    }

    fn solve_nonlinear(&mut self) -> Result<(), RunError> {
        let coef = &self.preset.coefficients;
        let asm = &{ self.preset.assumptions };
        let pc = PicardConfig {
            tol: self.cfg.picard.tol,
            max_iter: self.cfg.picard.max_iter,
            weight: None,
        };
        let (u, h): (GridFunction, PicardHistory) = match self.cfg.picard.method {
            Method::Fd => picard_solve_fd(&self.dom, coef, asm, &self.fd_config(), &pc)
                .map_err(|e| solver_err("solve-nonlinear")(&e))?,
            Method::Mc => {
                let cfg = McPicardConfig {
                    mc: self.mc_config(),
                    time_nodes: self.cfg.picard.time_nodes,
                    space_nodes: self.cfg.picard.space_nodes,
                    lift_nodes: self.cfg.lift.nodes,
                    lift_slices: self.cfg.lift.slices,
                    distance_paths: self.cfg.picard.distance_paths,
                    picard: pc,
                };
                picard_solve_mc(&self.dom, coef, asm, &cfg)
                    .map_err(|e| solver_err("solve-nonlinear")(&e))?
            }
        };
        self.table("solution", "solution.csv", u.to_csv_string())?;
        let mut csv = String::from("iteration,distance,distance_se,ratio,ratio_se\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        for r in &h.records {
            csv.push_str(&format!(
                "{},{:?},{:?},{},{}\n",
                r.iteration,
                r.distance,
                r.distance_se,
                opt(r.ratio),
                opt(r.ratio_se)
            ));
            self.events.push(json!({"event": "picard", "record": r}));
        }
        self.table("picard", "picard.csv", csv)?;
        self.metric("picard.iterations", h.records.len() as f64);
        self.check(
            "picard-no-alarm",
            h.alarm.is_none(),
            h.alarm.clone().unwrap_or_else(|| "no alarm".into()),
        );
        match self.cfg.picard.method {
            Method::Fd => {
                if let Some(w) = contraction_constants(asm).analytic.witness() {
                    let ok = h
                        .records
                        .iter()
                        .skip(2)
                        .all(|r| r.ratio.is_none_or(|q| q <= w.rho + 0.1));
                    self.check(
                        "fd-ratio-bound",
                        ok,
                        format!("ratios {:?}, rho {:.4}", h.ratios(), w.rho),
                    );
                }
            }
            Method::Mc => {
                let ok = h.records.iter().all(|r| match (r.ratio, r.ratio_se) {
                    (Some(q), Some(se)) => q < 1.0 + 3.0 * se,
                    _ => true,
                });
                self.check("mc-ratio-bound", ok, format!("ratios {:?}", h.ratios()));
            }
        }
        Ok(())
    }

    fn residual(&mut self) -> Result<(), RunError> {
        let coef = &self.preset.coefficients;
        let u = if coef.linear {
            self.solve_fd("residual")?
        } else {
            let pc = PicardConfig {
                tol: self.cfg.picard.tol,
                max_iter: self.cfg.picard.max_iter,
                weight: None,
            };
            picard_solve_fd(
                &self.dom,
                coef,
                &self.preset.assumptions,
                &self.fd_config(),
                &pc,
            )
            .map_err(|e| solver_err("residual")(&e))?
            .0
        };
        let r = weak_residual(&u, coef, &self.dom, &default_test_bank())
            .map_err(|e| solver_err("residual")(&e))?;
        let mut csv = String::from("test_function,residual\n");
        for (i, v) in r.per_function.iter().enumerate() {
            csv.push_str(&format!("{i},{v:?}\n"));
        }
        self.table("residual", "residual.csv", csv)?;
        self.metric("residual.max", r.max);
        if let Some((err, _)) = self.exact_error(&u) {
            self.metric("residual.manufactured_error", err);
            let bound = 10.0 * err.max(1e-13);
            self.check(
                "residual-vs-error",
                r.max <= bound,
                format!("residual {:.3e}, error {err:.3e}", r.max),
            );
        }
        Ok(())
    }

    fn compare_task(&mut self) -> Result<(), RunError> {
        let mc = self.solve_mc("compare")?;
        let fd = self.solve_fd("compare")?;
        let policy = TolerancePolicy {
            se_multiplier: self.cfg.compare.se_multiplier,
            bias: self.cfg.compare.bias,
        };
        let c = compare(&mc, &fd, &policy).map_err(|e| solver_err("compare")(&e))?;
        self.table("compare", "compare.csv", c.to_csv())?;
        self.metric("compare.max_diff", c.max_diff);
        self.check(
            "fd-mc-agreement",
            c.pass,
            format!("max |u_mc - u_fd| {:.3e}", c.max_diff),
        );
        Ok(())
    }
}

/// Runs every configured task and writes `manifest.jsonl` and
/// `report.json` next to the tables.
pub fn run_config(cfg: &RunConfig) -> Result<SolveReport, RunError> {
    cfg.validate()?;
    let work = || -> Result<SolveReport, RunError> {
        let mut ctx = Ctx {
            cfg,
            dom: cfg.domain_spec()?,
            preset: cfg.preset()?,
            reduction: if cfg.deterministic_reduction {
                Reduction::Pairwise
            } else {
                Reduction::Parallel
            },
            tables: Vec::new(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            events: Vec::new(),
        };
        for task in &cfg.tasks {
            match task {
                Task::GeomCheck => ctx.geom_check()?,
                Task::Paths => ctx.paths()?,
                Task::Lift => ctx.lift_task()?,
                Task::StarCheck => ctx.star_check()?,
                Task::SolveLinear => ctx.solve_linear()?,
                Task::SolvePenalized => ctx.solve_penalized()?,
                Task::SolveNonlinear => ctx.solve_nonlinear()?,
                Task::Residual => ctx.residual()?,
                Task::Compare => ctx.compare_task()?,
            }
        }
        let mut hasher = Sha256::new();
        for t in &ctx.tables {
            hasher.update(format!("{}\0{}\n", t.file, t.sha256).as_bytes());
        }
        let content_hash: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let report = SolveReport {
            config: cfg.to_toml(),
            content_hash,
            tables: ctx.tables,
            metrics: ctx.metrics,
            checks: ctx.checks,
        };
        let mut manifest = String::new();
        let mut line = |v: serde_json::Value| {
            manifest.push_str(&v.to_string());
            manifest.push('\n');
        };
        line(
            json!({"event": "config", "seed": cfg.seed, "preset": cfg.problem.preset,
            "tasks": cfg.tasks, "dt": cfg.mc.dt, "paths": cfg.mc.paths, "content_hash": report.content_hash}),
        );
        for t in &report.tables {
            line(json!({"event": "table", "name": t.name, "file": t.file, "sha256": t.sha256}));
        }
        for e in ctx.events {
            line(e);
        }
        for c in &report.checks {
            line(json!({"event": "check", "name": c.name, "pass": c.pass, "detail": c.detail}));
        }
        write_atomic(&cfg.output.join("manifest.jsonl"), manifest.as_bytes())?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_atomic(&cfg.output.join("report.json"), json.as_bytes())?;
        Ok(report)
    };
    match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunError::Solver {
                task: "run",
                message: e.to_string(),
            })?
            .install(work),
        None => work(),
    }
}

/// Loads, validates and runs a config file.
pub fn run(path: &Path) -> Result<SolveReport, RunError> {
    run_config(&RunConfig::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, body: &str) -> RunConfig {
        let mut cfg = RunConfig::from_toml(body).unwrap();
        cfg.output = dir.to_path_buf();
        cfg
    }

    #[test]
    fn minimal_constant_run_passes_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let body = "[run]\nseed = 3\ndeterministic_reduction = true\n[fd]\nspace_nodes = 21\ntime_nodes = 21\n";
        let a = run_config(&config(dir.path(), body)).unwrap();
        assert!(a.all_pass(), "{:?}", a.checks);
        assert!(a
            .checks
            .iter()
            .any(|c| c.name == "constant-exactness" && c.pass));
        let first = fs::read(dir.path().join("solution.csv")).unwrap();
        let b = run_config(&config(dir.path(), body)).unwrap();
        assert_eq!(a.content_hash, b.content_hash);
        assert_eq!(first, fs::read(dir.path().join("solution.csv")).unwrap());
        for t in &a.tables {
            assert!(dir.path().join(&t.file).exists());
        }
        let loaded = SolveReport::load(dir.path()).unwrap();
        assert_eq!(loaded, a);
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn mc_constant_run_has_zero_variance() {
        let dir = tempfile::tempdir().unwrap();
        let body = "[run]\nseed = 3\n[solve]\nmethod = \"mc\"\n[mc]\npaths = 50\ndt = 0.01\n";
        let r = run_config(&config(dir.path(), body)).unwrap();
        assert!(r.all_pass(), "{:?}", r.checks);
        assert_eq!(r.metrics["solution.max_se"], 0.0);
    }

    #[test]
    fn manifest_lists_every_table() {
        let dir = tempfile::tempdir().unwrap();
        let body = "[run]\nseed = 1\ntasks = [\"lift\", \"residual\"]\n[problem]\npreset = \"manufactured_gx\"\n[lift]\nnodes = 201\n[fd]\nspace_nodes = 41\ntime_nodes = 41\n";
        let r = run_config(&config(dir.path(), body)).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        for t in &r.tables {
            assert!(manifest.contains(&t.sha256));
        }
        for line in manifest.lines() {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
        assert!(r.all_pass(), "{:?}", r.checks);
    }
}
