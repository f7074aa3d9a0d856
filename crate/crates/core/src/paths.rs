//! Penalized and reflected Brownian paths with boundary local time, and the
//! forward, backward and star stochastic integrals along them.
//!
//! Reflected step (projection scheme): `X^ = X_k + dB + b dt`; outside the
//! closure the state is projected back and `dL` is the pushed distance.
//! The mirror scheme reflects across the tangent plane instead, pushing
//! twice the overshoot; its expected local time per step is exact on a flat
//! boundary, which removes the `O(sqrt(dt))` bias of the projection scheme
//! in Feynman-Kac averages.
//!
//! Penalized step: `X_{k+1} = X_k + dK + dB + b dt` with
//! `dK = -n delta(X_k) dt`, or the exact flow of `x' = -n delta(x)` when
//! `n dt > 0.5`.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::DomainSpec;
use crate::point::Point;
use crate::stats::{path_rng, per_path, Estimate, Reduction};

pub type Drift<'a> = Option<&'a (dyn Fn(&Point) -> Point + Sync)>;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("start time {t_start} exceeds horizon {horizon}")]
    BadHorizon { t_start: f64, horizon: f64 },
    #[error("start point {0:?} lies outside the closed domain")]
    StartOutside(Point),
    #[error("penalty must be positive, got {0}")]
    BadPenalty(f64),
    #[error("path escaped radius {radius} at step {step}")]
    Escaped { step: usize, radius: f64 },
    #[error("operation needs a reflected path")]
    NotReflected,
    #[error("scripted noise exhausted after {0} increments")]
    NoiseExhausted(usize),
    #[error("exponential moment overflowed; reduce mu")]
    Overflow,
    #[error("dimension mismatch: domain {domain}, point {point}")]
    Dimension { domain: usize, point: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionScheme {
    #[default]
    Projection,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Penalized { n: f64 },
    Reflected { scheme: ReflectionScheme },
}

/// Source of Brownian increments. `Zero` and `Scripted` are test hooks.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Noise {
    Gaussian(ChaCha8Rng),
    Zero,
    /// Increments used verbatim (already scaled by `sqrt(dt)`).
    Scripted {
        increments: Vec<Point>,
        next: usize,
    },
}

impl Noise {
    pub fn stream(seed: u64, index: u64) -> Self {
        Noise::Gaussian(path_rng(seed, index))
    }

    pub fn scripted(increments: Vec<Point>) -> Self {
        Noise::Scripted {
            increments,
            next: 0,
        }
    }

    pub fn draw(&mut self, dim: usize, sqrt_dt: f64) -> Result<Point, PathError> {
        match self {
            Noise::Gaussian(rng) => {
                let mut p = Point::zeros(dim);
                for i in 0..dim {
                    let z: f64 = StandardNormal.sample(rng);
                    p[i] = z * sqrt_dt;
                }
                Ok(p)
            }
            Noise::Zero => Ok(Point::zeros(dim)),
            Noise::Scripted { increments, next } => {
                let p = increments
                    .get(*next)
                    .copied()
                    .ok_or(PathError::NoiseExhausted(*next))?;
                *next += 1;
                Ok(p)
            }
        }
    }
}

/// Start, horizon and step of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub x0: Point,
    pub t_start: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Distance from the domain centre beyond which a path is declared
    /// divergent.
    pub escape_radius: f64,
}

impl PathSpec {
    pub fn new(x0: Point, t_start: f64, horizon: f64, dt: f64) -> Self {
        Self {
            x0,
            t_start,
            horizon,
            dt,
            escape_radius: 1e6,
        }
    }

    /// Number of uniform steps and their length; the nominal `dt` is
    /// adjusted so the steps tile `[t_start, horizon]`.
    pub fn steps(&self) -> (usize, f64) {
        let span = self.horizon - self.t_start;
        if span <= 0.0 {
            return (0, self.dt);
        }
        let m = ((span / self.dt).round() as usize).max(1);
        (m, span / m as f64)
    }

    fn validate(&self, dom: &DomainSpec) -> Result<(), PathError> {
        if !(self.dt > 0.0) {
            return Err(PathError::NonPositiveStep(self.dt));
        }
        if self.t_start > self.horizon {
            return Err(PathError::BadHorizon {
                t_start: self.t_start,
                horizon: self.horizon,
            });
        }
        if self.x0.dim() != dom.dimension() {
            return Err(PathError::Dimension {
                domain: dom.dimension(),
                point: self.x0.dim(),
            });
        }
        Ok(())
    }
}

/// Result of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub x: Point,
    /// Local time increment; for penalized steps the penalized local time
    /// `<dK, n(proj X_k)>`.
    pub dl: f64,
    /// Unit inward normal at the contact point (zero without contact).
    pub normal: Point,
    /// Boundary point where boundary terms are evaluated.
    pub contact: Point,
    /// Penalization increment `dK` (penalized) or Skorokhod push `n dL`.
    pub dk: Point,
}

/// One-step map shared by bundle simulation and streaming solvers.
#[derive(Clone, Copy)]
pub struct Stepper<'a> {
    dom: &'a DomainSpec,
    drift: Drift<'a>,
    kind: PathKind,
    dt: f64,
    decay: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(dom: &'a DomainSpec, drift: Drift<'a>, kind: PathKind, dt: f64) -> Self {
        let decay = match kind {
            PathKind::Penalized { n } if n * dt > 0.5 => (-2.0 * n * dt).exp(),
            _ => 0.0,
        };
        Self {
            dom,
            drift,
            kind,
            dt,
            decay,
        }
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn step(&self, x: &Point, db: Point) -> Step {
        let mut xh = *x + db;
        if let Some(b) = self.drift {
            xh += b(x) * self.dt;
        }
        match self.kind {
            PathKind::Reflected { scheme } => {
                if self.dom.contains(&xh) {
                    return Step {
                        x: xh,
                        dl: 0.0,
                        normal: Point::zeros(x.dim()),
                        contact: xh,
                        dk: Point::zeros(x.dim()),
                    };
                }
                let p = self.dom.project(&xh);
                let normal = self.dom.boundary_normal(&p);
                let over = (xh - p).norm();
                let (next, dl) = match scheme {
                    ReflectionScheme::Projection => (p, over),
                    ReflectionScheme::Mirror => {
                        let m = 2.0 * p - xh;
                        if self.dom.contains(&m) {
                            (m, 2.0 * over)
                        } else {
                            (p, over)
                        }
                    }
                };
                Step {
                    x: next,
                    dl,
                    normal,
                    contact: p,
                    dk: next - xh,
                }
            }
            PathKind::Penalized { n } => {
                let p = self.dom.project(x);
                let dk = if self.decay > 0.0 {
                    (p + (*x - p) * self.decay) - *x
                } else {
                    self.dom.penal_field(x) * (-n * self.dt)
                };
                let normal = self.dom.boundary_normal(&p);
                Step {
                    x: xh + dk,
                    dl: dk.dot(&normal).max(0.0),
                    normal,
                    contact: p,
                    dk,
                }
            }
        }
    }
}

/// One discretized trajectory.
///
/// `contact_normals[k]` and `contact_points[k]` are meaningful only when
/// `local_time_increments[k] > 0`; otherwise the normal is zero. Penalized
/// bundles carry no local time; their penalized local time is derived from
/// `penal_increments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub kind: PathKind,
    pub t_grid: Vec<f64>,
    pub states: Vec<Point>,
    pub brownian_increments: Vec<Point>,
    pub local_time_increments: Vec<f64>,
    pub contact_normals: Vec<Point>,
    pub contact_points: Vec<Point>,
    pub penal_increments: Vec<Point>,
}

impl PathBundle {
    pub fn steps(&self) -> usize {
        self.brownian_increments.len()
    }

    pub fn is_reflected(&self) -> bool {
        matches!(self.kind, PathKind::Reflected { .. })
    }

    pub fn final_state(&self) -> Point {
        *self.states.last().expect("nonempty path")
    }

    /// Total local time `L_T` (reflected) or penalized local time.
    pub fn local_time(&self) -> f64 {
        if self.is_reflected() {
            self.local_time_increments.iter().sum()
        } else {
            self.penalized_local_time_increments().iter().sum()
        }
    }

    /// `<dK^n_k, n(proj X_k)>`.
    pub fn penalized_local_time_increments(&self) -> Vec<f64> {
        self.penal_increments
            .iter()
            .zip(&self.contact_normals)
            .map(|(dk, n)| dk.dot(n).max(0.0))
            .collect()
    }

    /// Cumulative `K_t` at every grid time: the sum of penalization
    /// increments, or of Skorokhod pushes `n dL` on a reflected path.
    pub fn cumulative_k(&self) -> Vec<Point> {
        let dim = self.states[0].dim();
        let mut acc = Point::zeros(dim);
        let mut out = Vec::with_capacity(self.states.len());
        out.push(acc);
        for k in 0..self.steps() {
            if self.is_reflected() {
                acc += self.contact_normals[k] * self.local_time_increments[k];
            } else {
                acc += self.penal_increments[k];
            }
            out.push(acc);
        }
        out
    }

    /// Checks the bundle invariants; returns the first broken one.
    pub fn validate(&self, dom: &DomainSpec) -> Result<(), String> {
        let m = self.steps();
        if self.t_grid.len() != m + 1 || self.states.len() != m + 1 {
            return Err("grid and state lengths disagree".into());
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err("time grid not strictly increasing".into());
        }
        match self.kind {
            PathKind::Reflected { .. } => {
                if let Some(k) = self.states.iter().position(|x| !dom.contains(x)) {
                    return Err(format!("state {k} outside the closed domain"));
                }
                for k in 0..m {
                    let dl = self.local_time_increments[k];
                    if dl < 0.0 {
                        return Err(format!("negative local time increment at {k}"));
                    }
                    if dl > 0.0 && dom.psi(&self.contact_points[k]).abs() > 1e-9 {
                        return Err(format!("contact point {k} off the boundary"));
                    }
                }
            }
            PathKind::Penalized { .. } => {
                if !self.local_time_increments.is_empty() {
                    return Err("penalized path with local time entries".into());
                }
            }
        }
        Ok(())
    }
}

fn simulate(
    dom: &DomainSpec,
    drift: Drift<'_>,
    kind: PathKind,
    spec: &PathSpec,
    noise: &mut Noise,
) -> Result<PathBundle, PathError> {
    spec.validate(dom)?;
    if !dom.contains(&spec.x0) && matches!(kind, PathKind::Reflected { .. }) {
        return Err(PathError::StartOutside(spec.x0));
    }
    let (m, dt) = spec.steps();
    let stepper = Stepper::new(dom, drift, kind, dt);
    let dim = dom.dimension();
    let sqrt_dt = dt.sqrt();
    let (centre, _) = dom.center_radius();
    let reflected = matches!(kind, PathKind::Reflected { .. });

    let mut b = PathBundle {
        kind,
        t_grid: (0..=m).map(|k| spec.t_start + k as f64 * dt).collect(),
        states: Vec::with_capacity(m + 1),
        brownian_increments: Vec::with_capacity(m),
        local_time_increments: Vec::with_capacity(if reflected { m } else { 0 }),
        contact_normals: Vec::with_capacity(m),
        contact_points: Vec::with_capacity(m),
        penal_increments: Vec::with_capacity(if reflected { 0 } else { m }),
    };
    if m > 0 {
        b.t_grid[m] = spec.horizon;
    }
    let mut x = spec.x0;
    b.states.push(x);
    for k in 0..m {
        let db = noise.draw(dim, sqrt_dt)?;
        let s = stepper.step(&x, db);
        x = s.x;
        if (x - centre).norm() > spec.escape_radius || !x.is_finite() {
            return Err(PathError::Escaped {
                step: k + 1,
                radius: spec.escape_radius,
            });
        }
        b.states.push(x);
        b.brownian_increments.push(db);
        if reflected {
            b.local_time_increments.push(s.dl);
            b.contact_normals.push(if s.dl > 0.0 {
                s.normal
            } else {
                Point::zeros(dim)
            });
        } else {
            b.penal_increments.push(s.dk);
            b.contact_normals.push(s.normal);
        }
        b.contact_points.push(s.contact);
    }
    Ok(b)
}

pub fn simulate_penalized(
    dom: &DomainSpec,
    drift: Drift<'_>,
    n_penalty: f64,
    spec: &PathSpec,
    noise: &mut Noise,
) -> Result<PathBundle, PathError> {
    if !(n_penalty > 0.0) {
        return Err(PathError::BadPenalty(n_penalty));
    }
    if !dom.contains(&spec.x0) {
        return Err(PathError::StartOutside(spec.x0));
    }
    simulate(
        dom,
        drift,
        PathKind::Penalized { n: n_penalty },
        spec,
        noise,
    )
}

/// Penalized path started anywhere, including outside the closure.
pub fn simulate_penalized_from_outside(
    dom: &DomainSpec,
    drift: Drift<'_>,
    n_penalty: f64,
    spec: &PathSpec,
    noise: &mut Noise,
) -> Result<PathBundle, PathError> {
    if !(n_penalty > 0.0) {
        return Err(PathError::BadPenalty(n_penalty));
    }
    simulate(
        dom,
        drift,
        PathKind::Penalized { n: n_penalty },
        spec,
        noise,
    )
}

pub fn simulate_reflected(
    dom: &DomainSpec,
    drift: Drift<'_>,
    scheme: ReflectionScheme,
    spec: &PathSpec,
    noise: &mut Noise,
) -> Result<PathBundle, PathError> {
    simulate(dom, drift, PathKind::Reflected { scheme }, spec, noise)
}

/// Penalized and reflected (projection scheme) paths driven by the same
/// Brownian increments.
pub fn simulate_coupled(
    dom: &DomainSpec,
    drift: Drift<'_>,
    n_penalty: f64,
    spec: &PathSpec,
    noise: &mut Noise,
) -> Result<(PathBundle, PathBundle), PathError> {
    spec.validate(dom)?;
    let (m, dt) = spec.steps();
    let sqrt_dt = dt.sqrt();
    let increments = (0..m)
        .map(|_| noise.draw(dom.dimension(), sqrt_dt))
        .collect::<Result<Vec<_>, _>>()?;
    let pen = simulate_penalized(
        dom,
        drift,
        n_penalty,
        spec,
        &mut Noise::scripted(increments.clone()),
    )?;
    let refl = simulate_reflected(
        dom,
        drift,
        ReflectionScheme::Projection,
        spec,
        &mut Noise::scripted(increments),
    )?;
    Ok((pen, refl))
}

/// Pathwise distances between a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledDistance {
    pub sup_distance: f64,
    pub sup_k_gap: f64,
    pub local_time: f64,
}

pub fn coupled_distance(pen: &PathBundle, refl: &PathBundle) -> CoupledDistance {
    let sup_distance = pen
        .states
        .iter()
        .zip(&refl.states)
        .map(|(a, b)| (*a - *b).norm())
        .fold(0.0, f64::max);
    let sup_k_gap = pen
        .cumulative_k()
        .iter()
        .zip(refl.cumulative_k())
        .map(|(a, b)| (*a - b).norm())
        .fold(0.0, f64::max);
    CoupledDistance {
        sup_distance,
        sup_k_gap,
        local_time: refl.local_time(),
    }
}

/// Ensemble statistics of one penalization level in [`coupled_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledSummary {
    pub n_penalty: f64,
    /// `E[sup |X^n - X|^2]`.
    pub sup_distance_sq: Estimate,
    /// `E[sup |K^n - K|]`.
    pub sup_k_gap: Estimate,
}

/// Streams one reflected (projection) path and one penalized path per level
/// from the same increments; path `i` uses stream `i` for every level.
#[allow(clippy::too_many_arguments)]
pub fn coupled_sweep(
    dom: &DomainSpec,
    levels: &[f64],
    x0: Point,
    horizon: f64,
    dt: f64,
    paths: usize,
    seed: u64,
    reduction: Reduction,
) -> Result<Vec<CoupledSummary>, PathError> {
    let spec = PathSpec::new(x0, 0.0, horizon, dt);
    spec.validate(dom)?;
    if !dom.contains(&x0) {
        return Err(PathError::StartOutside(x0));
    }
    if let Some(n) = levels.iter().find(|n| !(**n > 0.0)) {
        return Err(PathError::BadPenalty(*n));
    }
    let (m, step) = spec.steps();
    let refl = Stepper::new(
        dom,
        None,
        PathKind::Reflected {
            scheme: ReflectionScheme::Projection,
        },
        step,
    );
    let pens: Vec<Stepper> = levels
        .iter()
        .map(|&n| Stepper::new(dom, None, PathKind::Penalized { n }, step))
        .collect();
    let dim = dom.dimension();
    let rows = per_path(paths, |i| {
        let mut noise = Noise::stream(seed, i);
        let (mut x, mut k) = (x0, Point::zeros(dim));
        let mut xn = vec![x0; levels.len()];
        let mut kn = vec![Point::zeros(dim); levels.len()];
        let mut sup = vec![(0.0f64, 0.0f64); levels.len()];
        for _ in 0..m {
            let db = noise.draw(dim, step.sqrt())?;
            let s = refl.step(&x, db);
            x = s.x;
            k += s.dk;
            for l in 0..levels.len() {
                let sn = pens[l].step(&xn[l], db);
                xn[l] = sn.x;
                kn[l] += sn.dk;
                sup[l].0 = sup[l].0.max((xn[l] - x).norm_sq());
                sup[l].1 = sup[l].1.max((kn[l] - k).norm());
            }
        }
        Ok(sup)
    })
    .into_iter()
    .collect::<Result<Vec<_>, PathError>>()?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            let d: Vec<f64> = rows.iter().map(|r| r[l].0).collect();
            let g: Vec<f64> = rows.iter().map(|r| r[l].1).collect();
            CoupledSummary {
                n_penalty: n,
                sup_distance_sq: Estimate::from_samples(&d, reduction),
                sup_k_gap: Estimate::from_samples(&g, reduction),
            }
        })
        .collect())
}

/// Left-endpoint Ito sum of `<field(t_k, X_k), dB_k>`.
pub fn forward_integral(field: impl Fn(f64, &Point) -> Point, path: &PathBundle) -> f64 {
    (0..path.steps())
        .map(|k| field(path.t_grid[k], &path.states[k]).dot(&path.brownian_increments[k]))
        .sum()
}

/// Realized quadratic variation of the forward integral over grid times
/// `t <= upto`.
pub fn realized_quadratic_variation(
    field: impl Fn(f64, &Point) -> Point,
    path: &PathBundle,
    upto: f64,
) -> f64 {
    (0..path.steps())
        .take_while(|&k| path.t_grid[k + 1] <= upto + 1e-12)
        .map(|k| {
            let v = field(path.t_grid[k], &path.states[k]).dot(&path.brownian_increments[k]);
            v * v
        })
        .sum()
}

/// Right-endpoint sum against the reversed increments
/// `dB-bar_k = -dB_k - 2 n_k dL_k`.
pub fn backward_integral(
    field: impl Fn(f64, &Point) -> Point,
    path: &PathBundle,
) -> Result<f64, PathError> {
    if !path.is_reflected() {
        return Err(PathError::NotReflected);
    }
    Ok((0..path.steps())
        .map(|k| {
            let rev = -path.brownian_increments[k]
                - path.contact_normals[k] * (2.0 * path.local_time_increments[k]);
            field(path.t_grid[k + 1], &path.states[k + 1]).dot(&rev)
        })
        .sum())
}

/// Forward plus backward integral plus `2 sum <field, n> dL`, all three
/// accumulated step by step so that constant fields cancel exactly.
pub fn star_integral(
    field: impl Fn(f64, &Point) -> Point,
    path: &PathBundle,
) -> Result<f64, PathError> {
    if !path.is_reflected() {
        return Err(PathError::NotReflected);
    }
    Ok((0..path.steps())
        .map(|k| {
            let db = path.brownian_increments[k];
            let n = path.contact_normals[k];
            let dl = path.local_time_increments[k];
            let left = field(path.t_grid[k], &path.states[k]);
            let right = field(path.t_grid[k + 1], &path.states[k + 1]);
            let rev = -db - n * (2.0 * dl);
            left.dot(&db) + right.dot(&rev) + 2.0 * right.dot(&n) * dl
        })
        .sum())
}

/// Monte Carlo estimate of `E^x[exp(mu L_T)]` over reflected paths.
#[allow(clippy::too_many_arguments)]
pub fn local_time_exp_moment(
    dom: &DomainSpec,
    scheme: ReflectionScheme,
    x0: Point,
    mu: f64,
    horizon: f64,
    dt: f64,
    paths: usize,
    seed: u64,
    reduction: Reduction,
) -> Result<Estimate, PathError> {
    assert!(mu >= 0.0, "mu must be nonnegative");
    let spec = PathSpec::new(x0, 0.0, horizon, dt);
    spec.validate(dom)?;
    let (m, step) = spec.steps();
    let stepper = Stepper::new(dom, None, PathKind::Reflected { scheme }, step);
    let dim = dom.dimension();
    let values = per_path(paths, |i| {
        let mut noise = Noise::stream(seed, i);
        let mut x = x0;
        let mut l = 0.0;
        for _ in 0..m {
            let s = stepper.step(&x, noise.draw(dim, step.sqrt()).expect("gaussian"));
            x = s.x;
            l += s.dl;
        }
        (mu * l).exp()
    });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PathError::Overflow);
    }
    let est = Estimate::from_samples(&values, reduction);
    if !est.mean.is_finite() || !est.std_err.is_finite() {
        return Err(PathError::Overflow);
    }
    Ok(est)
}

/// Ensemble estimate of `E[L_T]` for reflected paths from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn mean_local_time(
    dom: &DomainSpec,
    scheme: ReflectionScheme,
    x0: Point,
    horizon: f64,
    dt: f64,
    paths: usize,
    seed: u64,
    reduction: Reduction,
) -> Result<Estimate, PathError> {
    let spec = PathSpec::new(x0, 0.0, horizon, dt);
    spec.validate(dom)?;
    let (m, step) = spec.steps();
    let stepper = Stepper::new(dom, None, PathKind::Reflected { scheme }, step);
    let dim = dom.dimension();
    let values = per_path(paths, |i| {
        let mut noise = Noise::stream(seed, i);
        let mut x = x0;
        let mut l = 0.0;
        for _ in 0..m {
            let s = stepper.step(&x, noise.draw(dim, step.sqrt()).expect("gaussian"));
            x = s.x;
            l += s.dl;
        }
        l
    });
    Ok(Estimate::from_samples(&values, reduction))
}
