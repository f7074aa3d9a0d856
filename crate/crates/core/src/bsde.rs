//! Monte Carlo solvers for the transformed BSDE and its penalized
//! approximations, the Picard driver built on them, and the contraction
//! constants of the two weighted-norm routes.
//!
//! With the lift `G` of the divergence field, `v = u - 2G` solves a problem
//! without `div g`:
//!
//! ```text
//! v(t,x) = E[ Phi(X_T) - 2G(T,X_T) + int (f + G + 2 dG/dt)(r,X_r) dr
//!             + int h~(r,X_r) dL_r ],     h~ = h + 2 <grad G - g, n>
//! ```
//!
//! and `u = v + 2G`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{AssumptionSet, CoefficientSet};
use crate::geometry::DomainSpec;
use crate::grid::{GridFunction, GridMeta};
use crate::lift::{eval_lift, solve_lift_from_fn, Extension, LiftError, LiftField, Provenance};
use crate::paths::{Noise, PathError, PathKind, PathSpec, ReflectionScheme, Stepper};
use crate::point::Point;
use crate::stats::{per_path, ratio_estimate, Estimate, Reduction};

#[derive(Debug, Error)]
pub enum McError {
    #[error("coefficient set is nonlinear; freeze it or use the Picard driver")]
    NotLinear,
    #[error("drift must be folded into the reaction first")]
    Drift,
    #[error("lift does not match the coefficients: {0}")]
    LiftMismatch(String),
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("evaluation point {0:?} outside the closed domain")]
    PointOutside(Point),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Path(#[from] PathError),
}

// ---------------------------------------------------------------- Picard

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    /// Stop once the square root of the distance drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Time weight of the grid norm; `None` takes it from the witness.
    pub weight: Option<f64>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20,
            weight: None,
        }
    }
}

/// One Picard step: `distance` is the squared weighted norm of
/// `u^{k+1} - u^k`, `ratio` is `d_k / d_{k-1}` (absent for `k = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardState {
    pub iteration: usize,
    pub distance: f64,
    pub distance_se: f64,
    pub ratio: Option<f64>,
    pub ratio_se: Option<f64>,
}

pub type PicardRecord = PicardState;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardHistory {
    pub records: Vec<PicardState>,
    pub converged: bool,
    pub alarm: Option<String>,
    /// `theta` of the grid norm or `lambda` of the path norm.
    pub weight: f64,
    pub mu: f64,
    pub delta: f64,
}

impl PicardHistory {
    pub fn ratios(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.ratio).collect()
    }
}

// --------------------------------------------------- contraction constants

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticWitness {
    pub epsilon: f64,
    pub epsilon1: f64,
    pub theta: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticWitness {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub epsilon3: f64,
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Route<W> {
    Feasible(W),
    Infeasible { binding: String },
}

impl<W> Route<W> {
    pub fn witness(&self) -> Option<&W> {
        match self {
            Route::Feasible(w) => Some(w),
            Route::Infeasible { .. } => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Route::Feasible(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    pub analytic: Route<AnalyticWitness>,
    pub probabilistic: Route<ProbabilisticWitness>,
}

const SEARCH_STEPS: usize = 400;
/// Free constant of the path-norm route.
pub const EPSILON2: f64 = 0.1;

/// Grid search of the epsilon boxes for the smallest contraction factor of
/// each route.
pub fn contraction_constants(asm: &AssumptionSet) -> ContractionConstants {
    ContractionConstants {
        analytic: analytic_route(asm),
        probabilistic: probabilistic_route(asm),
    }
}

fn grid(k: usize, upper: f64) -> f64 {
    upper * (k + 1) as f64 / SEARCH_STEPS as f64
}

fn analytic_route(asm: &AssumptionSet) -> Route<AnalyticWitness> {
    let (a, g) = (asm.alpha, asm.gamma);
    let bt = asm.beta * asm.trace_norm * asm.trace_norm;
    if bt >= 1.0 {
        return Route::Infeasible {
            binding: "beta |Tr|^2 < 1".into(),
        };
    }
    let mut best: Option<AnalyticWitness> = None;
    let mut denominators_positive = false;
    for i in 0..SEARCH_STEPS {
        let eps = grid(i, 2.0);
        for j in 0..SEARCH_STEPS {
            let eps1 = grid(j, 2.0);
            let den = 1.0 - g * eps - bt * eps1;
            if den <= 0.0 {
                continue;
            }
            denominators_positive = true;
            let rho = (a * eps + g / eps + bt / eps1) / den;
            if rho < 1.0 && best.is_none_or(|b| rho < b.rho) {
                best = Some(AnalyticWitness {
                    epsilon: eps,
                    epsilon1: eps1,
                    theta: 1.0 - g * eps + a / eps,
                    rho,
                });
            }
        }
    }
    match best {
        Some(w) => Route::Feasible(w),
        None if !denominators_positive => Route::Infeasible {
            binding: "1 - gamma eps - beta |Tr|^2 eps1 > 0".into(),
        },
        None => Route::Infeasible {
            binding: "rho < 1".into(),
        },
    }
}

fn probabilistic_route(asm: &AssumptionSet) -> Route<ProbabilisticWitness> {
    let (a2, b2, g2) = (asm.alpha.powi(2), asm.beta.powi(2), asm.gamma.powi(2));
    if 2.0 * std::f64::consts::SQRT_2 * asm.gamma >= 1.0 {
        return Route::Infeasible {
            binding: "2 sqrt(2) gamma < 1".into(),
        };
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..SEARCH_STEPS {
        let e1 = grid(i, 2.0);
        for j in 0..SEARCH_STEPS - 1 {
            let e3 = grid(j, 1.0);
            let s = a2 / e1 + g2 / e3;
            if s < 1.0 - e3 && best.is_none_or(|(_, _, b)| s / (1.0 - e3) < b) {
                best = Some((e1, e3, s / (1.0 - e3)));
            }
        }
    }
    let Some((e1, e3, rho)) = best else {
        return Route::Infeasible {
            binding: "alpha^2/eps1 + gamma^2/eps3 < 1 - eps3".into(),
        };
    };
    let s = a2 / e1 + g2 / e3;
    let delta = if b2 == 0.0 {
        0.0
    } else if s == 0.0 {
        return Route::Infeasible {
            binding: "mu balance needs alpha or gamma > 0 when beta > 0".into(),
        };
    } else {
        (b2 / e3) / s
    };
    Route::Feasible(ProbabilisticWitness {
        epsilon1: e1,
        epsilon2: EPSILON2,
        epsilon3: e3,
        lambda: 1.0 - e3 + e1,
        mu: EPSILON2 + (1.0 - e3) * delta,
        rho,
        delta,
    })
}

// ------------------------------------------------------------ MC solvers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub scheme: ReflectionScheme,
    /// Nodes with a larger standard error are flagged low-confidence.
    pub se_cap: f64,
    pub reduction: Reduction,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            dt: 1e-3,
            seed: 0,
            scheme: ReflectionScheme::Mirror,
            se_cap: 0.05,
            reduction: Reduction::Pairwise,
        }
    }
}

impl McConfig {
    fn check(&self) -> Result<(), McError> {
        if self.paths == 0 {
            return Err(McError::BadConfig("paths must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(PathError::NonPositiveStep(self.dt).into());
        }
        Ok(())
    }
}

/// Linear data along paths.
pub trait McData: Sync {
    fn terminal(&self, x: &Point) -> f64;
    fn reaction(&self, t: f64, x: &Point) -> f64;
    fn divergence(&self, t: f64, x: &Point) -> Point;
    fn boundary(&self, t: f64, x: &Point) -> f64;
}

impl McData for CoefficientSet {
    fn terminal(&self, x: &Point) -> f64 {
        CoefficientSet::terminal(self, x)
    }
    fn reaction(&self, t: f64, x: &Point) -> f64 {
        self.f_lin(t, x)
    }
    fn divergence(&self, t: f64, x: &Point) -> Point {
        if self.has_divergence() {
            self.g_lin(t, x)
        } else {
            Point::zeros(x.dim())
        }
    }
    fn boundary(&self, t: f64, x: &Point) -> f64 {
        self.h_lin(t, x)
    }
}

/// Bilinear lookup into a 1-D grid with uniform space nodes.
struct GridInterp<'a> {
    grid: &'a GridFunction,
    x0: f64,
    h: f64,
}

impl<'a> GridInterp<'a> {
    fn new(grid: &'a GridFunction) -> Self {
        let nx = grid.nx();
        let x0 = grid.x_nodes[0].x();
        let h = (grid.x_nodes[nx - 1].x() - x0) / (nx - 1) as f64;
        Self { grid, x0, h }
    }

    fn at(&self, t: f64, x: f64) -> (f64, f64) {
        let g = self.grid;
        let (nt, nx) = (g.nt(), g.nx());
        let ts = &g.t_nodes;
        let (i, wt) = if t <= ts[0] {
            (0, 0.0)
        } else if t >= ts[nt - 1] {
            (nt - 1, 0.0)
        } else {
            let i = ts.partition_point(|&s| s <= t) - 1;
            (i, (t - ts[i]) / (ts[i + 1] - ts[i]))
        };
        let s = ((x - self.x0) / self.h).clamp(0.0, (nx - 1) as f64);
        let j = (s.floor() as usize).min(nx - 2);
        let wx = s - j as f64;
        let row = |i: usize| {
            let (k0, k1) = (g.index(i, j), g.index(i, j + 1));
            (
                g.values[k0] * (1.0 - wx) + g.values[k1] * wx,
                g.gradient[k0].x() * (1.0 - wx) + g.gradient[k1].x() * wx,
            )
        };
        let (u0, z0) = row(i);
        if wt == 0.0 {
            return (u0, z0);
        }
        let (u1, z1) = row(i + 1);
        (u0 * (1.0 - wt) + u1 * wt, z0 * (1.0 - wt) + z1 * wt)
    }
}

/// A nonlinear set with `(y, z)` frozen at a grid iterate.
pub struct FrozenMcData<'a> {
    coef: &'a CoefficientSet,
    interp: GridInterp<'a>,
}

impl<'a> FrozenMcData<'a> {
    /// The iterate must be 1-D with uniform space nodes.
    pub fn new(coef: &'a CoefficientSet, iterate: &'a GridFunction) -> Self {
        Self {
            coef,
            interp: GridInterp::new(iterate),
        }
    }

    fn state(&self, t: f64, x: &Point) -> (f64, Point) {
        let (y, z) = self.interp.at(t, x.x());
        (y, Point::scalar(z))
    }
}

impl McData for FrozenMcData<'_> {
    fn terminal(&self, x: &Point) -> f64 {
        self.coef.terminal(x)
    }
    fn reaction(&self, t: f64, x: &Point) -> f64 {
        let (y, z) = self.state(t, x);
        self.coef.reaction(t, x, y, &z)
    }
    fn divergence(&self, t: f64, x: &Point) -> Point {
        if !self.coef.has_divergence() {
            return Point::zeros(x.dim());
        }
        let (y, z) = self.state(t, x);
        self.coef.divergence(t, x, y, &z)
    }
    fn boundary(&self, t: f64, x: &Point) -> f64 {
        let (y, _) = self.state(t, x);
        self.coef.boundary(t, x, y)
    }
}

fn check_lift(coef: &CoefficientSet, dom: &DomainSpec, lift: &LiftField) -> Result<(), McError> {
    if coef.has_divergence() == lift.is_zero() {
        return Err(McError::LiftMismatch(if lift.is_zero() {
            "zero lift for a nonzero divergence field".into()
        } else {
            "nonzero lift for a set without divergence".into()
        }));
    }
    if let Provenance::Separable(name) = &lift.provenance {
        if *name != coef.name {
            return Err(McError::LiftMismatch(format!(
                "lift built for '{name}', coefficients are '{}'",
                coef.name
            )));
        }
    }
    check_lift_range(dom, coef.horizon, lift)
}

fn check_lift_range(dom: &DomainSpec, horizon: f64, lift: &LiftField) -> Result<(), McError> {
    if lift.is_zero() {
        return Ok(());
    }
    let (lo, hi) = dom.bounding_box();
    let (xs, ts) = (&lift.o_grid, &lift.t_slices);
    if xs[0] > lo.x() || xs[xs.len() - 1] < hi.x() {
        return Err(McError::LiftMismatch(
            "lift grid does not cover the domain".into(),
        ));
    }
    if ts[0] > 0.0 || ts[ts.len() - 1] < horizon * (1.0 - 1e-12) {
        return Err(McError::LiftMismatch(
            "lift slices do not cover [0, T]".into(),
        ));
    }
    Ok(())
}

struct PathProblem<'a> {
    data: &'a dyn McData,
    lift: &'a LiftField,
    stepper: Stepper<'a>,
    horizon: f64,
    dt: f64,
    seed: u64,
}

impl PathProblem<'_> {
    /// `f + G + 2 dG/dt`.
    fn volume(&self, t: f64, x: &Point) -> Result<f64, McError> {
        let f = self.data.reaction(t, x);
        if self.lift.is_zero() {
            return Ok(f);
        }
        let l = eval_lift(self.lift, t, x)?;
        Ok(f + l.g + 2.0 * l.dt)
    }

    /// `h + 2 <grad G - g, n>` at a boundary point.
    fn boundary(&self, t: f64, x: &Point, normal: &Point) -> Result<f64, McError> {
        let h = self.data.boundary(t, x);
        if self.lift.is_zero() {
            return Ok(h);
        }
        let l = eval_lift(self.lift, t, x)?;
        Ok(h + 2.0 * (l.grad - self.data.divergence(t, x)).dot(normal))
    }

    fn lift_value(&self, t: f64, x: &Point) -> Result<f64, McError> {
        if self.lift.is_zero() {
            Ok(0.0)
        } else {
            Ok(eval_lift(self.lift, t, x)?.g)
        }
    }

    /// One sample of `v(t0, x0)`; trapezoid rule in time.
    fn sample(&self, t0: f64, x0: &Point, index: u64) -> Result<f64, McError> {
        let (m, dt) = PathSpec::new(*x0, t0, self.horizon, self.dt).steps();
        let sqrt_dt = dt.sqrt();
        let mut noise = Noise::stream(self.seed, index);
        let penalized = matches!(self.stepper.kind(), PathKind::Penalized { .. });
        let mut x = *x0;
        let mut acc = 0.0;
        let mut prev = self.volume(t0, &x)?;
        for k in 0..m {
            let t = t0 + k as f64 * dt;
            let t_next = if k + 1 == m { self.horizon } else { t + dt };
            let st = self.stepper.step(&x, noise.draw(x.dim(), sqrt_dt)?);
            if st.dl > 0.0 {
                let tb = if penalized { t } else { t_next };
                acc += self.boundary(tb, &st.contact, &st.normal)? * st.dl;
            }
            x = st.x;
            let cur = self.volume(t_next, &x)?;
            acc += 0.5 * (prev + cur) * dt;
            prev = cur;
        }
        Ok(acc + self.data.terminal(&x) - 2.0 * self.lift_value(self.horizon, &x)?)
    }
}

/// Solves at every `(t_i, x_j)`; path `p` uses stream `p` at every node.
#[allow(clippy::too_many_arguments)]
fn solve_nodes(
    dom: &DomainSpec,
    data: &dyn McData,
    lift: &LiftField,
    kind: PathKind,
    horizon: f64,
    t_nodes: &[f64],
    x_nodes: &[Point],
    cfg: &McConfig,
) -> Result<GridFunction, McError> {
    cfg.check()?;
    for x in x_nodes {
        if !dom.contains(x) {
            return Err(McError::PointOutside(*x));
        }
    }
    if t_nodes.iter().any(|t| !(0.0..=horizon).contains(t)) {
        return Err(McError::BadConfig(
            "evaluation times must lie in [0, T]".into(),
        ));
    }
    let problem = PathProblem {
        data,
        lift,
        stepper: Stepper::new(dom, None, kind, cfg.dt),
        horizon,
        dt: cfg.dt,
        seed: cfg.seed,
    };
    let (nt, nx) = (t_nodes.len(), x_nodes.len());
    let mut values = vec![0.0; nt * nx];
    let mut ses = vec![0.0; nt * nx];
    for (i, &t) in t_nodes.iter().enumerate() {
        for (j, x) in x_nodes.iter().enumerate() {
            let k = i * nx + j;
            if t >= horizon {
                values[k] = data.terminal(x);
                continue;
            }
            let samples = per_path(cfg.paths, |p| problem.sample(t, x, p))
                .into_iter()
                .collect::<Result<Vec<f64>, McError>>()?;
            let est = Estimate::from_samples(&samples, cfg.reduction);
            values[k] = est.mean + 2.0 * problem.lift_value(t, x)?;
            ses[k] = est.std_err;
        }
    }
    let (solver, n_penalty) = match kind {
        PathKind::Penalized { n } => ("mc-penalized", Some(n)),
        PathKind::Reflected { .. } => ("mc", None),
    };
    let mut grid = GridFunction::new(
        t_nodes.to_vec(),
        x_nodes.to_vec(),
        values,
        GridMeta {
            solver: solver.into(),
            paths: cfg.paths,
            dt: cfg.dt,
            seed: Some(cfg.seed),
            n_penalty,
        },
    );
    grid.low_confidence = ses.iter().map(|s| *s > cfg.se_cap).collect();
    grid.std_errors = ses;
    Ok(grid)
}

fn check_linear(coef: &CoefficientSet) -> Result<(), McError> {
    if coef.has_drift() {
        return Err(McError::Drift);
    }
    if !coef.linear {
        return Err(McError::NotLinear);
    }
    Ok(())
}

/// Reflected-path estimate of `u` at the tensor grid `t_nodes x x_nodes`.
pub fn solve_linear_mc(
    dom: &DomainSpec,
    coef: &CoefficientSet,
    lift: &LiftField,
    t_nodes: &[f64],
    x_nodes: &[Point],
    cfg: &McConfig,
) -> Result<GridFunction, McError> {
    check_linear(coef)?;
    check_lift(coef, dom, lift)?;
    let kind = PathKind::Reflected { scheme: cfg.scheme };
    solve_nodes(dom, coef, lift, kind, coef.horizon, t_nodes, x_nodes, cfg)
}

/// Same functional along penalized paths; boundary terms are charged to
/// the penalized local time `<dK, n>`, evaluated at the projection.
pub fn solve_penalized_bsde(
    dom: &DomainSpec,
    coef: &CoefficientSet,
    lift: &LiftField,
    n_penalty: f64,
    t_nodes: &[f64],
    x_nodes: &[Point],
    cfg: &McConfig,
) -> Result<GridFunction, McError> {
    check_linear(coef)?;
    check_lift(coef, dom, lift)?;
    if !(n_penalty > 0.0) {
        return Err(PathError::BadPenalty(n_penalty).into());
    }
    let kind = PathKind::Penalized { n: n_penalty };
    solve_nodes(dom, coef, lift, kind, coef.horizon, t_nodes, x_nodes, cfg)
}

/// Reflected-path solve for arbitrary linear data, e.g. a frozen iterate.
pub fn solve_mc_data(
    dom: &DomainSpec,
    data: &dyn McData,
    lift: &LiftField,
    horizon: f64,
    t_nodes: &[f64],
    x_nodes: &[Point],
    cfg: &McConfig,
) -> Result<GridFunction, McError> {
    check_lift_range(dom, horizon, lift)?;
    let kind = PathKind::Reflected { scheme: cfg.scheme };
    solve_nodes(dom, data, lift, kind, horizon, t_nodes, x_nodes, cfg)
}

// ------------------------------------------------------------ MC Picard

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPicardConfig {
    pub mc: McConfig,
    pub time_nodes: usize,
    pub space_nodes: usize,
    pub lift_nodes: usize,
    pub lift_slices: usize,
    /// Paths for the weighted distance, started uniformly over the space
    /// nodes at `t = 0`.
    pub distance_paths: usize,
    pub picard: PicardConfig,
}

impl Default for McPicardConfig {
    fn default() -> Self {
        Self {
            mc: McConfig {
                paths: 2000,
                dt: 2e-3,
                ..McConfig::default()
            },
            time_nodes: 11,
            space_nodes: 21,
            lift_nodes: 401,
            lift_slices: 21,
            distance_paths: 4200,
            picard: PicardConfig {
                tol: 1e-3,
                max_iter: 8,
                weight: None,
            },
        }
    }
}

/// Lift of `g(t, x, u^k, z^k)`.
pub fn frozen_lift(
    dom: &DomainSpec,
    coef: &CoefficientSet,
    iterate: &GridFunction,
    nodes: usize,
    slices: usize,
) -> Result<LiftField, McError> {
    if !coef.has_divergence() {
        return Ok(LiftField::zero(dom.dimension()));
    }
    let data = FrozenMcData::new(coef, iterate);
    let ts = GridFunction::uniform_times(0.0, coef.horizon, slices.max(3));
    Ok(solve_lift_from_fn(
        dom,
        |t, x| data.divergence(t, &Point::scalar(x)).x(),
        nodes,
        &ts,
        Extension::default(),
    )?)
}

/// Per-path samples of
/// `int e^{lambda r + mu L_r} (|du|^2 + |dz|^2) dr + delta int e^{..} |du|^2 dL`
/// for `du = a - b` on reflected paths from the space nodes.
fn weighted_distance_samples(
    dom: &DomainSpec,
    a: &GridFunction,
    b: &GridFunction,
    weights: (f64, f64, f64),
    paths: usize,
    cfg: &McConfig,
    seed: u64,
) -> Result<Vec<f64>, McError> {
    let (lambda, mu, delta) = weights;
    let (ia, ib) = (GridInterp::new(a), GridInterp::new(b));
    let horizon = *a.t_nodes.last().expect("nonempty grid");
    let stepper = Stepper::new(
        dom,
        None,
        PathKind::Reflected { scheme: cfg.scheme },
        cfg.dt,
    );
    let diff = |t: f64, x: f64| {
        let (ua, za) = ia.at(t, x);
        let (ub, zb) = ib.at(t, x);
        (ua - ub, za - zb)
    };
    per_path(paths, |p| {
        let x0 = a.x_nodes[(p % a.nx() as u64) as usize];
        let (m, dt) = PathSpec::new(x0, 0.0, horizon, cfg.dt).steps();
        let mut noise = Noise::stream(seed, p);
        let (mut x, mut l, mut acc) = (x0, 0.0, 0.0);
        for k in 0..m {
            let t = k as f64 * dt;
            let (du, dz) = diff(t, x.x());
            acc += (lambda * t + mu * l).exp() * (du * du + dz * dz) * dt;
            let st = stepper.step(&x, noise.draw(x.dim(), dt.sqrt())?);
            l += st.dl;
            if st.dl > 0.0 && delta > 0.0 {
                let tn = (k + 1) as f64 * dt;
                let (du, _) = diff(tn, st.contact.x());
                acc += delta * (lambda * tn + mu * l).exp() * du * du * st.dl;
            }
            x = st.x;
        }
        Ok(acc)
    })
    .into_iter()
    .collect()
}

const DISTANCE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Picard iteration over reflected-path Monte Carlo: freeze the data at
/// `(u^k, grad u^k)`, rebuild the lift, solve with the same random streams
/// every iteration, and measure `u^{k+1} - u^k` in the path-weighted norm.
pub fn picard_solve_mc(
    dom: &DomainSpec,
    coef: &CoefficientSet,
    asm: &AssumptionSet,
    cfg: &McPicardConfig,
) -> Result<(GridFunction, PicardHistory), McError> {
    let DomainSpec::Interval { a, b } = *dom else {
        return Err(McError::BadConfig(
            "the Picard driver supports intervals only".into(),
        ));
    };
    if coef.has_drift() {
        return Err(McError::Drift);
    }
    if cfg.time_nodes < 2 || cfg.space_nodes < 3 {
        return Err(McError::BadConfig(
            "need at least 2 time and 3 space nodes".into(),
        ));
    }
    let (lambda, mu, delta) = match (cfg.picard.weight, contraction_constants(asm).probabilistic) {
        (Some(w), _) => (w, 0.0, 0.0),
        (None, Route::Feasible(w)) => (w.lambda, w.mu, w.delta),
        (None, Route::Infeasible { .. }) => (1.0, 0.0, 0.0),
    };
    let ts = GridFunction::uniform_times(0.0, coef.horizon, cfg.time_nodes);
    let xs = GridFunction::uniform_nodes(a, b, cfg.space_nodes);
    let mut u = GridFunction::from_fn(ts.clone(), xs.clone(), GridMeta::default(), |_, _| 0.0);
    let mut history = PicardHistory {
        weight: lambda,
        mu,
        delta,
        ..Default::default()
    };
    let dseed = cfg.mc.seed.wrapping_add(DISTANCE_SEED_OFFSET);
    let mut prev_samples: Option<Vec<f64>> = None;
    let mut above = 0;
    for k in 0..cfg.picard.max_iter {
        let lift = frozen_lift(dom, coef, &u, cfg.lift_nodes, cfg.lift_slices)?;
        let data = FrozenMcData::new(coef, &u);
        let next = solve_mc_data(dom, &data, &lift, coef.horizon, &ts, &xs, &cfg.mc)?;
        let samples = weighted_distance_samples(
            dom,
            &next,
            &u,
            (lambda, mu, delta),
            cfg.distance_paths,
            &cfg.mc,
            dseed,
        )?;
        let d = Estimate::from_samples(&samples, cfg.mc.reduction);
        let ratio = match &prev_samples {
            Some(prev) if prev.iter().any(|v| *v != 0.0) => {
                Some(ratio_estimate(&samples, prev, cfg.mc.reduction))
            }
            _ => None,
        };
        history.records.push(PicardState {
            iteration: k,
            distance: d.mean,
            distance_se: d.std_err,
            ratio: ratio.map(|r| r.mean),
            ratio_se: ratio.map(|r| r.std_err),
        });
        u = next;
        if let Some(r) = ratio {
            if r.mean > 1.0 + 3.0 * r.std_err {
                above += 1;
                if above >= 2 {
                    history.alarm = Some(format!(
                        "ratio above 1 + 3 SE at iterations {} and {k}",
                        k - 1
                    ));
                    break;
                }
            } else {
                above = 0;
            }
        }
        if d.mean.sqrt() < cfg.picard.tol || d.mean == 0.0 {
            history.converged = true;
            break;
        }
        prev_samples = Some(samples);
    }
    u.meta.solver = "mc-picard".into();
    Ok((u, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::solve_lift_spacetime;
    use crate::presets;

    fn asm(alpha: f64, beta: f64, gamma: f64) -> AssumptionSet {
        AssumptionSet {
            alpha,
            beta,
            gamma,
            k_bound: 1.0,
            c_space: 1.0,
            c0_drift: 0.0,
            trace_norm: 1.2,
        }
    }

    #[test]
    fn zero_constants_contract_perfectly() {
        let c = contraction_constants(&asm(0.0, 0.0, 0.0));
        assert_eq!(c.analytic.witness().unwrap().rho, 0.0);
        let p = c.probabilistic.witness().unwrap();
        assert_eq!(p.rho, 0.0);
        assert_eq!(p.mu, EPSILON2);
    }

    #[test]
    fn large_gamma_blocks_path_route() {
        let c = contraction_constants(&asm(0.0, 0.0, 0.5));
        assert_eq!(
            c.probabilistic,
            Route::Infeasible {
                binding: "2 sqrt(2) gamma < 1".into()
            }
        );
    }

    #[test]
    fn preset_constants_have_witnesses() {
        let c = contraction_constants(&asm(0.2, 0.1, 0.1));
        let w = c.analytic.witness().unwrap();
        // independent evaluation of the two formulas at the witness
        let bt = 0.1 * 1.44;
        let den = 1.0 - 0.1 * w.epsilon - bt * w.epsilon1;
        let rho = (0.2 * w.epsilon + 0.1 / w.epsilon + bt / w.epsilon1) / den;
        assert!((rho - w.rho).abs() < 1e-12 && rho < 0.6, "{rho}");
        assert!(((w.theta - 0.2 / w.epsilon - bt * w.epsilon1) / den - 1.0).abs() < 1e-12);
        let p = c.probabilistic.witness().unwrap();
        let s = 0.04 / p.epsilon1 + 0.01 / p.epsilon3;
        assert!(s < 1.0 - p.epsilon3);
        assert!((p.lambda - p.epsilon1 - (1.0 - p.epsilon3)).abs() < 1e-12);
        assert!(((0.01 / p.epsilon3) / s - (p.mu - p.epsilon2) / (1.0 - p.epsilon3)).abs() < 1e-12);
        assert!(p.rho < 0.1);
    }

    #[test]
    fn trace_condition_binds() {
        let c = contraction_constants(&asm(0.0, 0.8, 0.0));
        assert_eq!(
            c.analytic,
            Route::Infeasible {
                binding: "beta |Tr|^2 < 1".into()
            }
        );
    }

    fn small_cfg(paths: usize) -> McConfig {
        McConfig {
            paths,
            dt: 1e-2,
            seed: 7,
            ..McConfig::default()
        }
    }

    #[test]
    fn constant_data_is_exact_with_zero_variance() {
        let p = presets::constant();
        let xs = GridFunction::uniform_nodes(-1.0, 1.0, 5);
        let u = solve_linear_mc(
            &p.domain,
            &p.coefficients,
            &LiftField::zero(1),
            &[0.0, 0.5, 1.0],
            &xs,
            &small_cfg(200),
        )
        .unwrap();
        assert!(u.values.iter().all(|v| *v == presets::CONSTANT_VALUE));
        assert!(u.std_errors.iter().all(|s| *s == 0.0));
        let un = solve_penalized_bsde(
            &p.domain,
            &p.coefficients,
            &LiftField::zero(1),
            32.0,
            &[0.0],
            &xs,
            &small_cfg(200),
        )
        .unwrap();
        assert!(un.values.iter().all(|v| *v == presets::CONSTANT_VALUE));
    }

    #[test]
    fn estimator_is_linear_under_shared_streams() {
        let base = presets::manufactured_g0().coefficients;
        let dom = presets::manufactured_g0().domain;
        let scaled = CoefficientSet::new("scaled", 1, 1.0, true)
            .with_terminal(|x| 3.0 * (-1f64).exp() * (std::f64::consts::PI * x.x()).cos())
            .with_linear_reaction(|t, x| {
                3.0 * (1.0 + 0.5 * std::f64::consts::PI.powi(2))
                    * (-t).exp()
                    * (std::f64::consts::PI * x.x()).cos()
            })
            .with_linear_boundary(|_, _| 0.0);
        let xs = [Point::scalar(0.3), Point::scalar(1.0)];
        let cfg = small_cfg(300);
        let u1 = solve_linear_mc(&dom, &base, &LiftField::zero(1), &[0.0], &xs, &cfg).unwrap();
        let u3 = solve_linear_mc(&dom, &scaled, &LiftField::zero(1), &[0.0], &xs, &cfg).unwrap();
        for j in 0..2 {
            assert!((3.0 * u1.values[j] - u3.values[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn lift_mismatch_is_rejected() {
        let p = presets::manufactured_gx();
        let err = solve_linear_mc(
            &p.domain,
            &p.coefficients,
            &LiftField::zero(1),
            &[0.0],
            &[Point::scalar(0.0)],
            &small_cfg(10),
        );
        assert!(matches!(err, Err(McError::LiftMismatch(_))));
        let q = presets::manufactured_g0();
        let lift = solve_lift_spacetime(&p.coefficients, &p.domain, 101, &[0.0, 1.0]).unwrap();
        let err = solve_linear_mc(
            &q.domain,
            &q.coefficients,
            &lift,
            &[0.0],
            &[Point::scalar(0.0)],
            &small_cfg(10),
        );
        assert!(matches!(err, Err(McError::LiftMismatch(_))));
    }

    #[test]
    fn nonlinear_sets_are_rejected() {
        let p = presets::nonlinear_small_gamma();
        let err = solve_linear_mc(
            &p.domain,
            &p.coefficients,
            &LiftField::zero(1),
            &[0.0],
            &[Point::scalar(0.0)],
            &small_cfg(10),
        );
        assert!(matches!(err, Err(McError::NotLinear)));
    }

    #[test]
    fn manufactured_solutions_within_tolerance() {
        for p in [presets::manufactured_g0(), presets::manufactured_gx()] {
            let lift = solve_lift_spacetime(&p.coefficients, &p.domain, 801, &[0.0, 1.0]).unwrap();
            let xs = [Point::scalar(0.0), Point::scalar(1.0)];
            let cfg = McConfig {
                paths: 4000,
                dt: 2e-3,
                seed: 3,
                ..McConfig::default()
            };
            let u =
                solve_linear_mc(&p.domain, &p.coefficients, &lift, &[0.0, 1.0], &xs, &cfg).unwrap();
            let exact = p.exact.as_ref().unwrap();
            for j in 0..2 {
                let err = (u.values[j] - exact(0.0, &xs[j])).abs();
                assert!(
                    err <= 3.0 * u.std_errors[j] + 0.02,
                    "{} x={:?}: {err}",
                    p.name,
                    xs[j]
                );
            }
            assert_eq!(u.values[2], exact(1.0, &xs[0]));
        }
    }

    #[test]
    fn infinite_tolerance_returns_first_iterate() {
        let p = presets::nonlinear_small_gamma();
        let cfg = McPicardConfig {
            mc: McConfig {
                paths: 50,
                dt: 0.02,
                seed: 11,
                ..McConfig::default()
            },
            time_nodes: 3,
            space_nodes: 5,
            lift_nodes: 101,
            lift_slices: 5,
            distance_paths: 50,
            picard: PicardConfig {
                tol: f64::INFINITY,
                max_iter: 10,
                weight: None,
            },
        };
        let (u, h) = picard_solve_mc(&p.domain, &p.coefficients, &p.assumptions, &cfg).unwrap();
        assert_eq!(h.records.len(), 1);
        assert!(h.records[0].ratio.is_none());
        let zero = GridFunction::from_fn(
            u.t_nodes.clone(),
            u.x_nodes.clone(),
            GridMeta::default(),
            |_, _| 0.0,
        );
        let lift = frozen_lift(&p.domain, &p.coefficients, &zero, 101, 5).unwrap();
        let direct = solve_mc_data(
            &p.domain,
            &FrozenMcData::new(&p.coefficients, &zero),
            &lift,
            1.0,
            &u.t_nodes,
            &u.x_nodes,
            &cfg.mc,
        )
        .unwrap();
        assert_eq!(u.values, direct.values);
    }

    #[test]
    fn picard_reaches_constant_fixed_point() {
        let c = 0.6;
        let coef = CoefficientSet::new("relax", 1, 1.0, false)
            .with_terminal(move |_| c)
            .with_reaction(move |_, _, y, _| c - y)
            .with_boundary(|_, _, _| 0.0);
        let dom = presets::constant().domain;
        let cfg = McPicardConfig {
            mc: McConfig {
                paths: 400,
                dt: 0.01,
                seed: 5,
                ..McConfig::default()
            },
            time_nodes: 6,
            space_nodes: 5,
            lift_nodes: 101,
            lift_slices: 5,
            distance_paths: 200,
            picard: PicardConfig {
                tol: 1e-4,
                max_iter: 12,
                weight: Some(1.0),
            },
        };
        let (u, h) = picard_solve_mc(&dom, &coef, &asm(1.0, 0.0, 0.0), &cfg).unwrap();
        assert!(h.alarm.is_none());
        let err = u.values.iter().fold(0.0f64, |m, v| m.max((v - c).abs()));
        assert!(err <= 3.0 * u.max_std_err() + 0.01, "{err}");
        let ratios = h.ratios();
        assert!(ratios.iter().all(|r| *r < 1.0), "{ratios:?}");
    }
}
