//! Deterministic 1-D solver: P1 elements with lumped mass in space and the
//! theta-scheme in time, marching backward from `u(T) = Phi`.
//!
//! Semi-discrete form: `M u' = 1/2 K u - r` with
//! `r_j = (f, phi_j) + (g, phi_j') + 1/2 h phi_j` on the boundary.
//! The flux condition is natural in this form; lumping the mass matrix makes
//! it the ghost-node scheme for `du/dn = 2 <g, n> - h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bsde::{contraction_constants, PicardConfig, PicardHistory, PicardRecord};
use crate::coefficients::{AssumptionSet, CoefficientSet};
use crate::geometry::DomainSpec;
use crate::grid::{GridFunction, GridMeta};
use crate::point::Point;
use crate::tridiag::{Tridiagonal, ZeroPivot};

#[derive(Debug, Error, PartialEq)]
pub enum FdError {
    #[error("the grid solver supports interval domains only")]
    NotInterval,
    #[error("coefficient set is nonlinear; use the Picard driver")]
    NotLinear,
    #[error("drift must be folded into the reaction first")]
    Drift,
    #[error("need at least 3 space nodes and 2 time nodes")]
    TooFewNodes,
    #[error("theta = {0} outside [0, 1]")]
    BadTheta(f64),
    #[error("explicit scheme unstable: dt = {dt} exceeds dx^2 = {dx2}")]
    Unstable { dt: f64, dx2: f64 },
    #[error(transparent)]
    Pivot(#[from] ZeroPivot),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FDConfig {
    pub space_nodes: usize,
    pub time_nodes: usize,
    /// 0.5 is Crank-Nicolson, 1 is backward Euler.
    pub theta: f64,
}

impl Default for FDConfig {
    fn default() -> Self {
        Self {
            space_nodes: 201,
            time_nodes: 401,
            theta: 0.5,
        }
    }
}

impl FDConfig {
    fn check(&self, a: f64, b: f64, horizon: f64) -> Result<(), FdError> {
        if self.space_nodes < 3 || self.time_nodes < 2 {
            return Err(FdError::TooFewNodes);
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(FdError::BadTheta(self.theta));
        }
        let dx = (b - a) / (self.space_nodes - 1) as f64;
        let dt = horizon / (self.time_nodes - 1) as f64;
        if self.theta < 0.5 && dt > dx * dx {
            return Err(FdError::Unstable { dt, dx2: dx * dx });
        }
        Ok(())
    }
}

/// Data of a linear problem as seen by the grid solver.
pub trait LinearData: Sync {
    fn terminal(&self, x: f64) -> f64;
    fn reaction(&self, i: usize, t: f64, j: usize, x: f64) -> f64;
    /// `(g, phi_j')` for every node `j`, boundary nodes included.
    fn divergence_load(&self, i: usize, t: f64, xs: &[f64]) -> Vec<f64>;
    /// `h` at the left (`j = 0`) or right endpoint.
    fn boundary(&self, i: usize, t: f64, j: usize, x: f64) -> f64;
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Turns per-cell means of `g` into `(g, phi_j')`.
fn load_from_cell_means(means: &[f64]) -> Vec<f64> {
    let n = means.len() + 1;
    (0..n)
        .map(|j| {
            let left = if j > 0 { means[j - 1] } else { 0.0 };
            let right = if j + 1 < n { means[j] } else { 0.0 };
            left - right
        })
        .collect()
}

/// A linear coefficient set evaluated directly; `g` by Gauss quadrature.
pub struct ExactData<'a>(pub &'a CoefficientSet);

impl LinearData for ExactData<'_> {
    fn terminal(&self, x: f64) -> f64 {
        self.0.terminal(&Point::scalar(x))
    }
    fn reaction(&self, _: usize, t: f64, _: usize, x: f64) -> f64 {
        self.0.f_lin(t, &Point::scalar(x))
    }
    fn divergence_load(&self, _: usize, t: f64, xs: &[f64]) -> Vec<f64> {
        if !self.0.has_divergence() {
            return vec![0.0; xs.len()];
        }
        let means: Vec<f64> = xs
            .windows(2)
            .map(|w| {
                let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                GAUSS3
                    .iter()
                    .map(|(s, wt)| wt * self.0.g_lin(t, &Point::scalar(mid + half * s)).x())
                    .sum::<f64>()
                    * 0.5
            })
            .collect();
        load_from_cell_means(&means)
    }
    fn boundary(&self, _: usize, t: f64, _: usize, x: f64) -> f64 {
        self.0.h_lin(t, &Point::scalar(x))
    }
}

/// A nonlinear set frozen at a grid iterate `(u, grad u)` on the same grid.
pub struct FrozenData<'a> {
    pub coef: &'a CoefficientSet,
    pub iterate: &'a GridFunction,
}

impl FrozenData<'_> {
    fn state(&self, i: usize, j: usize) -> (f64, Point) {
        let k = self.iterate.index(i, j);
        (self.iterate.values[k], self.iterate.gradient[k])
    }
}

impl LinearData for FrozenData<'_> {
    fn terminal(&self, x: f64) -> f64 {
        self.coef.terminal(&Point::scalar(x))
    }
    fn reaction(&self, i: usize, t: f64, j: usize, x: f64) -> f64 {
        let (y, z) = self.state(i, j);
        self.coef.reaction(t, &Point::scalar(x), y, &z)
    }
    fn divergence_load(&self, i: usize, t: f64, xs: &[f64]) -> Vec<f64> {
        if !self.coef.has_divergence() {
            return vec![0.0; xs.len()];
        }
        let g: Vec<f64> = (0..xs.len())
            .map(|j| {
                let (y, z) = self.state(i, j);
                self.coef.divergence(t, &Point::scalar(xs[j]), y, &z).x()
            })
            .collect();
        let means: Vec<f64> = g.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        load_from_cell_means(&means)
    }
    fn boundary(&self, i: usize, t: f64, j: usize, x: f64) -> f64 {
        let (y, _) = self.state(i, j);
        self.coef.boundary(t, &Point::scalar(x), y)
    }
}

fn interval(dom: &DomainSpec) -> Result<(f64, f64), FdError> {
    match *dom {
        DomainSpec::Interval { a, b } => Ok((a, b)),
        _ => Err(FdError::NotInterval),
    }
}

/// Theta-scheme march for arbitrary linear data.
pub fn solve_linear_data(
    dom: &DomainSpec,
    horizon: f64,
    data: &dyn LinearData,
    cfg: &FDConfig,
) -> Result<GridFunction, FdError> {
    let (a, b) = interval(dom)?;
    cfg.check(a, b, horizon)?;
    let ts = GridFunction::uniform_times(0.0, horizon, cfg.time_nodes);
    let xn = GridFunction::uniform_nodes(a, b, cfg.space_nodes);
    let xs: Vec<f64> = xn.iter().map(|p| p.x()).collect();
    let (nx, nt) = (xs.len(), ts.len());
    let h = xs[1] - xs[0];
    let dt = ts[1] - ts[0];
    let th = cfg.theta;

    let mass: Vec<f64> = (0..nx)
        .map(|j| if j == 0 || j == nx - 1 { 0.5 * h } else { h })
        .collect();
    // half stiffness, 1/2 K
    let mut hk = Tridiagonal::zeros(nx);
    for j in 0..nx {
        let deg = if j == 0 || j == nx - 1 { 1.0 } else { 2.0 };
        hk.diag[j] = 0.5 * deg / h;
        hk.lower[j] = -0.5 / h;
        hk.upper[j] = -0.5 / h;
    }
    let mut lhs = Tridiagonal::zeros(nx);
    for j in 0..nx {
        lhs.diag[j] = mass[j] / dt + th * hk.diag[j];
        lhs.lower[j] = th * hk.lower[j];
        lhs.upper[j] = th * hk.upper[j];
    }

    // Load vectors are independent across slices.
    let loads: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|i| {
            let t = ts[i];
            let mut r = data.divergence_load(i, t, &xs);
            for j in 0..nx {
                r[j] += mass[j] * data.reaction(i, t, j, xs[j]);
            }
            r[0] += 0.5 * data.boundary(i, t, 0, xs[0]);
            r[nx - 1] += 0.5 * data.boundary(i, t, nx - 1, xs[nx - 1]);
            r
        })
        .collect();

    let mut values = vec![0.0; nt * nx];
    let mut next: Vec<f64> = xs.iter().map(|&x| data.terminal(x)).collect();
    values[(nt - 1) * nx..].copy_from_slice(&next);
    for i in (0..nt - 1).rev() {
        let kv = hk.mul_vec(&next);
        let rhs: Vec<f64> = (0..nx)
            .map(|j| {
                mass[j] / dt * next[j] - (1.0 - th) * kv[j]
                    + th * loads[i][j]
                    + (1.0 - th) * loads[i + 1][j]
            })
            .collect();
        next = lhs.solve(&rhs)?;
        values[i * nx..(i + 1) * nx].copy_from_slice(&next);
    }
    Ok(GridFunction::new(
        ts,
        xn,
        values,
        GridMeta {
            solver: "fd".into(),
            dt,
            ..Default::default()
        },
    ))
}

pub fn solve_linear_fd(
    dom: &DomainSpec,
    coef: &CoefficientSet,
    cfg: &FDConfig,
) -> Result<GridFunction, FdError> {
    if coef.has_drift() {
        return Err(FdError::Drift);
    }
    if !coef.linear {
        return Err(FdError::NotLinear);
    }
    solve_linear_data(dom, coef.horizon, &ExactData(coef), cfg)
}

/// `int_0^T e^{theta t} (|v_t|^2 + |grad v_t|^2) dt` by the trapezoid rule
/// in both variables.
pub fn theta_norm_sq(a: &GridFunction, b: &GridFunction, theta: f64) -> f64 {
    let tw = trapezoid_weights(&a.t_nodes);
    let xs = a.x_coords().expect("1-D grid");
    let xw = trapezoid_weights(&xs);
    let mut s = 0.0;
    for i in 0..a.nt() {
        let mut inner = 0.0;
        for j in 0..a.nx() {
            let k = a.index(i, j);
            let dv = a.values[k] - b.values[k];
            let dz = (a.gradient[k] - b.gradient[k]).norm_sq();
            inner += xw[j] * (dv * dv + dz);
        }
        s += tw[i] * (theta * a.t_nodes[i]).exp() * inner;
    }
    s
}

pub fn trapezoid_weights(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = xs[k + 1] - xs[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Picard iteration on the grid: `u^0 = 0`, then solve the linear problem
/// with data frozen at `(u^k, grad u^k)`. The distance is the squared
/// `e^{theta t}`-weighted `H^1` norm of `u^{k+1} - u^k`, with `theta` from
/// the analytic contraction witness unless given.
pub fn picard_solve_fd(
    dom: &DomainSpec,
    coef: &CoefficientSet,
    asm: &AssumptionSet,
    cfg: &FDConfig,
    picard: &PicardConfig,
) -> Result<(GridFunction, PicardHistory), FdError> {
    let (a, b) = interval(dom)?;
    if coef.has_drift() {
        return Err(FdError::Drift);
    }
    let theta = picard.weight.unwrap_or_else(|| {
        contraction_constants(asm)
            .analytic
            .witness()
            .map_or(1.0, |w| w.theta)
    });
    let ts = GridFunction::uniform_times(0.0, coef.horizon, cfg.time_nodes);
    let xn = GridFunction::uniform_nodes(a, b, cfg.space_nodes);
    let mut u = GridFunction::from_fn(ts, xn, GridMeta::default(), |_, _| 0.0);
    let mut history = PicardHistory {
        weight: theta,
        ..Default::default()
    };
    let mut above_one = 0;
    for k in 0..picard.max_iter {
        let next = solve_linear_data(dom, coef.horizon, &FrozenData { coef, iterate: &u }, cfg)?;
        let d = theta_norm_sq(&next, &u, theta);
        let prev = history.records.last().map(|r: &PicardRecord| r.distance);
        let ratio = prev.filter(|p| *p > 0.0).map(|p| d / p);
        history.records.push(PicardRecord {
            iteration: k,
            distance: d,
            distance_se: 0.0,
            ratio,
            ratio_se: ratio.map(|_| 0.0),
        });
        u = next;
        if ratio.is_some_and(|r| r >= 1.0) {
            above_one += 1;
            if above_one >= 2 {
                history.alarm = Some(format!("ratio >= 1 at iterations {} and {k}", k - 1));
                break;
            }
        } else {
            above_one = 0;
        }
        if d.sqrt() < picard.tol || d == 0.0 {
            history.converged = true;
            break;
        }
    }
    u.meta.solver = "fd-picard".into();
    Ok((u, history))
}

/// Space-time test function `(t/T)^p cos(m pi (x - a) / (b - a))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFunction {
    pub power: u32,
    pub mode: u32,
}

impl TestFunction {
    /// `(phi, d phi/dt, d phi/dx)`.
    fn eval(&self, t: f64, x: f64, horizon: f64, a: f64, b: f64) -> (f64, f64, f64) {
        let s = t / horizon;
        let k = self.mode as f64 * std::f64::consts::PI / (b - a);
        let (c, sn) = ((k * (x - a)).cos(), (k * (x - a)).sin());
        let p = self.power as i32;
        let tp = s.powi(p);
        let dtp = if p == 0 {
            0.0
        } else {
            p as f64 * s.powi(p - 1) / horizon
        };
        (tp * c, dtp * c, -tp * k * sn)
    }
}

/// `{1, t, t^2} x {cos(m pi xi), m = 0..3}`: twelve functions.
pub fn default_test_bank() -> Vec<TestFunction> {
    (0..3)
        .flat_map(|power| (0..4).map(move |mode| TestFunction { power, mode }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub max: f64,
    pub per_function: Vec<f64>,
}

/// Residual of the weak identity
///
/// ```text
/// (Phi, phi_T) - (u_0, phi_0) - int (u, phi_t) - 1/2 int (u', phi')
///   + int (f, phi) + int (g, phi') + 1/2 int [h phi]_boundary
/// ```
///
/// by the trapezoid rule on the grid of `u`, using `u` and its stored
/// gradient in the coefficients.
pub fn weak_residual(
    u: &GridFunction,
    coef: &CoefficientSet,
    dom: &DomainSpec,
    bank: &[TestFunction],
) -> Result<WeakResidual, FdError> {
    let (a, b) = interval(dom)?;
    let xs = u.x_coords().ok_or(FdError::NotInterval)?;
    let tw = trapezoid_weights(&u.t_nodes);
    let xw = trapezoid_weights(&xs);
    let horizon = *u.t_nodes.last().expect("nonempty grid");
    let (nt, nx) = (u.nt(), u.nx());
    let per_function: Vec<f64> = bank
        .par_iter()
        .map(|phi| {
            let mut r = 0.0;
            for j in 0..nx {
                let x = Point::scalar(xs[j]);
                let end = phi.eval(horizon, xs[j], horizon, a, b).0;
                let start = phi.eval(u.t_nodes[0], xs[j], horizon, a, b).0;
                r += xw[j] * (coef.terminal(&x) * end - u.value(0, j) * start);
            }
            for i in 0..nt {
                let t = u.t_nodes[i];
                let mut inner = 0.0;
                for j in 0..nx {
                    let k = u.index(i, j);
                    let x = Point::scalar(xs[j]);
                    let (p, pt, px) = phi.eval(t, xs[j], horizon, a, b);
                    let (y, z) = (u.values[k], u.gradient[k]);
                    let f = coef.reaction(t, &x, y, &z);
                    let g = coef.divergence(t, &x, y, &z).x();
                    inner += xw[j] * (-y * pt - 0.5 * z.x() * px + f * p + g * px);
                }
                for j in [0, nx - 1] {
                    let x = Point::scalar(xs[j]);
                    let p = phi.eval(t, xs[j], horizon, a, b).0;
                    inner += 0.5 * coef.boundary(t, &x, u.value(i, j)) * p;
                }
                r += tw[i] * inner;
            }
            r.abs()
        })
        .collect();
    Ok(WeakResidual {
        max: per_function.iter().fold(0.0, |m, v| m.max(*v)),
        per_function,
    })
}
