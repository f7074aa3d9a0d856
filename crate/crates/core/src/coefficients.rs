//! PDE data, structural constants and empirical checks of the standing
//! assumptions.
//!
//! The problem is
//!
//! ```text
//! du/dt + 1/2 Lap u + <b, grad u> + f(t,x,u,grad u) - div g(t,x,u,grad u) = 0   in D
//! du/dn - 2 <g, n> + h(t,x,u) = 0                                           on dD
//! u(T, .) = Phi
//! ```
//!
//! with `n` the unit inward normal.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::DomainSpec;
use crate::point::Point;
use crate::stats::path_rng;
use crate::tridiag::Tridiagonal;

pub type TerminalFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(f64, &Point, f64, &Point) -> f64 + Send + Sync>;
pub type DivergenceFn = Arc<dyn Fn(f64, &Point, f64, &Point) -> Point + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(f64, &Point, f64) -> f64 + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum CoefficientError {
    #[error("trace norm estimation is unsupported on this domain: {0}")]
    Unsupported(String),
    #[error("at least one element is required")]
    NoElements,
    #[error("coefficient dimension {coef} does not match domain dimension {domain}")]
    DimensionMismatch { coef: usize, domain: usize },
}

/// Divergence field of product form `g(t,x) = g1(t) g2(x)`.
#[derive(Clone)]
pub struct SeparableField {
    pub time: TimeFn,
    pub time_derivative: TimeFn,
    pub space: SpaceFn,
}

/// The data `(Phi, f, g, h, b, T)`.
///
/// In linear mode the `(y, z)` arguments never reach the user closures:
/// every evaluation passes `y = 0, z = 0`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub dimension: usize,
    pub horizon: f64,
    pub linear: bool,
    terminal: TerminalFn,
    reaction: ReactionFn,
    divergence: DivergenceFn,
    boundary: BoundaryFn,
    drift: Option<DriftFn>,
    separable: Option<SeparableField>,
    has_divergence: bool,
    /// Declared bound on `|f(t,x,0,0)|` and `|h(t,x,0)|`.
    pub integrability_bound: Option<f64>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("horizon", &self.horizon)
            .field("linear", &self.linear)
            .field("has_divergence", &self.has_divergence)
            .field("separable", &self.separable.is_some())
            .field("drift", &self.drift.is_some())
            .finish()
    }
}

impl CoefficientSet {
    /// All data zero: `Phi = f = g = h = 0`, no drift.
    pub fn new(name: impl Into<String>, dimension: usize, horizon: f64, linear: bool) -> Self {
        assert!(horizon > 0.0, "horizon must be positive");
        Self {
            name: name.into(),
            dimension,
            horizon,
            linear,
            terminal: Arc::new(|_| 0.0),
            reaction: Arc::new(|_, _, _, _| 0.0),
            divergence: Arc::new(|_, x, _, _| Point::zeros(x.dim())),
            boundary: Arc::new(|_, _, _| 0.0),
            drift: None,
            separable: None,
            has_divergence: false,
            integrability_bound: None,
        }
    }

    pub fn with_terminal(mut self, phi: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(phi);
        self
    }

    pub fn with_reaction(
        mut self,
        f: impl Fn(f64, &Point, f64, &Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.reaction = Arc::new(f);
        self
    }

    pub fn with_divergence(
        mut self,
        g: impl Fn(f64, &Point, f64, &Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        self.divergence = Arc::new(g);
        self.has_divergence = true;
        self.separable = None;
        self
    }

    pub fn with_boundary(
        mut self,
        h: impl Fn(f64, &Point, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.boundary = Arc::new(h);
        self
    }

    pub fn with_linear_reaction(
        self,
        f: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.with_reaction(move |t, x, _, _| f(t, x))
    }

    pub fn with_linear_divergence(
        self,
        g: impl Fn(f64, &Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        self.with_divergence(move |t, x, _, _| g(t, x))
    }

    pub fn with_linear_boundary(
        self,
        h: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.with_boundary(move |t, x, _| h(t, x))
    }

    /// Linear divergence field `g(t,x) = g1(t) g2(x)`; lifts of such fields
    /// are computed once and scaled.
    pub fn with_separable_divergence(mut self, field: SeparableField) -> Self {
        let (time, space) = (field.time.clone(), field.space.clone());
        self.divergence = Arc::new(move |t, x, _, _| space(x) * time(t));
        self.has_divergence = true;
        self.separable = Some(field);
        self
    }

    pub fn with_drift(mut self, b: impl Fn(&Point) -> Point + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(b));
        self
    }

    pub fn with_integrability_bound(mut self, bound: f64) -> Self {
        self.integrability_bound = Some(bound);
        self
    }

    pub fn terminal(&self, x: &Point) -> f64 {
        (self.terminal)(x)
    }

    pub fn reaction(&self, t: f64, x: &Point, y: f64, z: &Point) -> f64 {
        if self.linear {
            (self.reaction)(t, x, 0.0, &Point::zeros(x.dim()))
        } else {
            (self.reaction)(t, x, y, z)
        }
    }

    pub fn divergence(&self, t: f64, x: &Point, y: f64, z: &Point) -> Point {
        if !self.has_divergence {
            return Point::zeros(x.dim());
        }
        if self.linear {
            (self.divergence)(t, x, 0.0, &Point::zeros(x.dim()))
        } else {
            (self.divergence)(t, x, y, z)
        }
    }

    pub fn boundary(&self, t: f64, x: &Point, y: f64) -> f64 {
        if self.linear {
            (self.boundary)(t, x, 0.0)
        } else {
            (self.boundary)(t, x, y)
        }
    }

    pub fn drift(&self, x: &Point) -> Point {
        match &self.drift {
            Some(b) => b(x),
            None => Point::zeros(x.dim()),
        }
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn has_divergence(&self) -> bool {
        self.has_divergence
    }

    pub fn separable(&self) -> Option<&SeparableField> {
        self.separable.as_ref()
    }

    /// Linear-mode shorthands.
    pub fn f_lin(&self, t: f64, x: &Point) -> f64 {
        self.reaction(t, x, 0.0, &Point::zeros(x.dim()))
    }

    pub fn g_lin(&self, t: f64, x: &Point) -> Point {
        self.divergence(t, x, 0.0, &Point::zeros(x.dim()))
    }

    pub fn h_lin(&self, t: f64, x: &Point) -> f64 {
        self.boundary(t, x, 0.0)
    }

    /// Moves a drift into the reaction, `F = <b, z> + f`. The result has no
    /// drift and is nonlinear whenever a drift was present.
    pub fn fold_drift(&self) -> CoefficientSet {
        let Some(b) = self.drift.clone() else {
            return self.clone();
        };
        let f = self.reaction.clone();
        let linear = self.linear;
        let mut out = self.clone();
        out.drift = None;
        out.linear = false;
        out.reaction = Arc::new(move |t, x, y, z| {
            let base = if linear {
                f(t, x, 0.0, &Point::zeros(x.dim()))
            } else {
                f(t, x, y, z)
            };
            b(x).dot(z) + base
        });
        if linear {
            let g = self.divergence.clone();
            let h = self.boundary.clone();
            out.divergence = Arc::new(move |t, x, _, _| g(t, x, 0.0, &Point::zeros(x.dim())));
            out.boundary = Arc::new(move |t, x, _| h(t, x, 0.0));
        }
        out
    }
}

/// Declared structural constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionSet {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "k_bound")]
    pub k_bound: f64,
    pub c_space: f64,
    pub c0_drift: f64,
    pub trace_norm: f64,
}

impl AssumptionSet {
    /// `beta ||Tr||^2 < 1`.
    pub fn trace_condition(&self) -> bool {
        self.beta * self.trace_norm * self.trace_norm < 1.0
    }

    /// `2 sqrt(2) gamma < 1`.
    pub fn gamma_condition(&self) -> bool {
        2.0 * 2f64.sqrt() * self.gamma < 1.0
    }
}

/// Worst sampled quotients for each condition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedConstants {
    /// sup (y-y')(f(y)-f(y')) / |y-y'|^2; must not exceed alpha.
    pub f_monotone: f64,
    /// sup (y-y')(h(y)-h(y')) / |y-y'|^2; must not exceed -beta.
    pub h_monotone: f64,
    /// sup |f| / (1 + |y| + |z|).
    pub f_growth: f64,
    /// sup |h| over the probe box.
    pub h_bound: f64,
    /// Lipschitz quotient of f in (y, z).
    pub f_lipschitz: f64,
    /// Lipschitz quotient of f in x.
    pub f_space: f64,
    /// Lipschitz quotient of h in y.
    pub h_lipschitz: f64,
    /// Lipschitz quotient of h in x along the boundary.
    pub h_space: f64,
    /// Largest componentwise Lipschitz quotient of g in (y, z).
    pub g_lipschitz: f64,
    /// Lipschitz quotient of the drift.
    pub drift_lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub observed: f64,
    pub declared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub probes: usize,
    pub observed: ObservedConstants,
    pub violations: Vec<Violation>,
    pub trace_condition: bool,
    pub gamma_condition: bool,
    /// Linear mode ignored `(y, z)` on every probe, or the set is nonlinear.
    pub linear_mode_consistent: bool,
    pub non_finite_evaluations: usize,
}

impl AssumptionReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
            && self.trace_condition
            && self.gamma_condition
            && self.linear_mode_consistent
            && self.non_finite_evaluations == 0
    }
}

const PROBE_BOX: f64 = 3.0;
const LOCAL_STEP: f64 = 1e-3;

/// Samples `(t, x, y, y', z, z')` and records the worst quotient for every
/// condition. Sampling refutes; it cannot prove.
pub fn check_assumptions(
    coef: &CoefficientSet,
    asm: &AssumptionSet,
    dom: &DomainSpec,
    probes: usize,
    rng_seed: u64,
) -> Result<AssumptionReport, CoefficientError> {
    if coef.dimension != dom.dimension() {
        return Err(CoefficientError::DimensionMismatch {
            coef: coef.dimension,
            domain: dom.dimension(),
        });
    }
    let dim = coef.dimension;
    let mut rng = path_rng(rng_seed, 0);
    let mut obs = ObservedConstants {
        f_monotone: f64::NEG_INFINITY,
        h_monotone: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut linear_ok = true;
    let non_finite = std::cell::Cell::new(0usize);
    let check = |v: f64| {
        if !v.is_finite() {
            non_finite.set(non_finite.get() + 1);
        }
        v
    };

    for i in 0..probes {
        let local = i % 2 == 0;
        let t = rng.random_range(0.0..=coef.horizon);
        let x = dom.sample_uniform(&mut rng);
        let xb = dom.sample_boundary(&mut rng);
        let y = rng.random_range(-PROBE_BOX..=PROBE_BOX);
        let mut z = Point::zeros(dim);
        for k in 0..dim {
            z[k] = rng.random_range(-PROBE_BOX..=PROBE_BOX);
        }
        let (y2, z2, x2, xb2) = if local {
            let mut z2 = z;
            let mut x2 = x;
            for k in 0..dim {
                z2[k] += rng.random_range(-LOCAL_STEP..=LOCAL_STEP);
                x2[k] += rng.random_range(-LOCAL_STEP..=LOCAL_STEP);
            }
            let xb2 = dom.project(&(xb + (x2 - x)));
            (
                y + rng.random_range(-LOCAL_STEP..=LOCAL_STEP),
                z2,
                dom.project(&x2),
                xb2,
            )
        } else {
            let mut z2 = Point::zeros(dim);
            for k in 0..dim {
                z2[k] = rng.random_range(-PROBE_BOX..=PROBE_BOX);
            }
            (
                rng.random_range(-PROBE_BOX..=PROBE_BOX),
                z2,
                dom.sample_uniform(&mut rng),
                dom.sample_boundary(&mut rng),
            )
        };
        let dy = y - y2;
        let dz = (z - z2).norm();

        let f = check(coef.reaction(t, &x, y, &z));
        let f_y2 = check(coef.reaction(t, &x, y2, &z));
        let f_yz2 = check(coef.reaction(t, &x, y2, &z2));
        let f_x2 = check(coef.reaction(t, &x2, y, &z));
        let h = check(coef.boundary(t, &xb, y));
        let h_y2 = check(coef.boundary(t, &xb, y2));
        let h_x2 = check(coef.boundary(t, &xb2, y));
        let g = coef.divergence(t, &x, y, &z);
        let g2 = coef.divergence(t, &x, y2, &z2);
        if !(g.is_finite() && g2.is_finite()) {
            non_finite.set(non_finite.get() + 1);
        }

        if coef.linear && (f != f_yz2 || h != h_y2 || g != g2) {
            linear_ok = false;
        }
        if dy != 0.0 {
            obs.f_monotone = obs.f_monotone.max(dy * (f - f_y2) / (dy * dy));
            obs.h_monotone = obs.h_monotone.max(dy * (h - h_y2) / (dy * dy));
            obs.h_lipschitz = obs.h_lipschitz.max((h - h_y2).abs() / dy.abs());
        }
        if dy.abs() + dz > 0.0 {
            obs.f_lipschitz = obs.f_lipschitz.max((f - f_yz2).abs() / (dy.abs() + dz));
            for k in 0..dim {
                obs.g_lipschitz = obs.g_lipschitz.max((g[k] - g2[k]).abs() / (dy.abs() + dz));
            }
        }
        let dx = (x - x2).norm();
        if dx > 0.0 {
            obs.f_space = obs.f_space.max((f - f_x2).abs() / dx);
            let bx = coef.drift(&x) - coef.drift(&x2);
            obs.drift_lipschitz = obs.drift_lipschitz.max(bx.norm() / dx);
        }
        let dxb = (xb - xb2).norm();
        if dxb > 0.0 {
            obs.h_space = obs.h_space.max((h - h_x2).abs() / dxb);
        }
        obs.f_growth = obs.f_growth.max(f.abs() / (1.0 + y.abs() + z.norm()));
        obs.h_bound = obs.h_bound.max(h.abs());
    }
    if probes == 0 || obs.f_monotone == f64::NEG_INFINITY {
        obs.f_monotone = 0.0;
        obs.h_monotone = 0.0;
    }

    let slack = |declared: f64| declared.abs() * 1e-9 + 1e-12;
    let mut violations = Vec::new();
    let mut flag = |condition: &str, observed: f64, declared: f64| {
        if observed > declared + slack(declared) {
            violations.push(Violation {
                condition: condition.to_string(),
                observed,
                declared,
            });
        }
    };
    flag("H1 f monotonicity (alpha)", obs.f_monotone, asm.alpha);
    flag("H1 h monotonicity (-beta)", obs.h_monotone, -asm.beta);
    flag("H2 f growth (K)", obs.f_growth, asm.k_bound);
    flag("H2 h bound (K)", obs.h_bound, asm.k_bound);
    flag(
        "H4 f Lipschitz in (y,z) (alpha)",
        obs.f_lipschitz,
        asm.alpha,
    );
    flag("H4 f Lipschitz in x (C)", obs.f_space, asm.c_space);
    flag("H5 h Lipschitz in y (beta)", obs.h_lipschitz, asm.beta);
    flag("H5 h Lipschitz in x (C)", obs.h_space, asm.c_space);
    flag(
        "H6 g Lipschitz in (y,z) (gamma)",
        obs.g_lipschitz,
        asm.gamma,
    );
    flag("drift Lipschitz (C0)", obs.drift_lipschitz, asm.c0_drift);
    if let Some(bound) = coef.integrability_bound {
        let mut worst: f64 = 0.0;
        let mut rng = path_rng(rng_seed, 1);
        for _ in 0..probes {
            let t = rng.random_range(0.0..=coef.horizon);
            let x = dom.sample_uniform(&mut rng);
            let xb = dom.sample_boundary(&mut rng);
            worst = worst
                .max(coef.reaction(t, &x, 0.0, &Point::zeros(dim)).abs())
                .max(coef.boundary(t, &xb, 0.0).abs());
        }
        flag("integrability bound", worst, bound);
    }

    Ok(AssumptionReport {
        probes,
        observed: obs,
        violations,
        trace_condition: asm.trace_condition(),
        gamma_condition: asm.gamma_condition(),
        linear_mode_consistent: linear_ok,
        non_finite_evaluations: non_finite.get(),
    })
}

/// Stiffness `K + M` of P1 elements on a uniform mesh of `elements` cells.
fn h1_gram(a: f64, b: f64, elements: usize) -> Tridiagonal {
    let n = elements + 1;
    let h = (b - a) / elements as f64;
    let mut m = Tridiagonal::zeros(n);
    let (kd, ko) = (1.0 / h, -1.0 / h);
    let (md, mo) = (h / 3.0, h / 6.0);
    for e in 0..elements {
        m.diag[e] += kd + md;
        m.diag[e + 1] += kd + md;
        m.upper[e] += ko + mo;
        m.lower[e + 1] += ko + mo;
    }
    m
}

/// `||v||_{L2(dD)} / ||v||_{H1(D)}` for the continuous piecewise-linear
/// function with the given values on a uniform mesh of the interval.
pub fn trace_quotient(dom: &DomainSpec, values: &[f64]) -> Result<f64, CoefficientError> {
    let DomainSpec::Interval { a, b } = *dom else {
        return Err(CoefficientError::Unsupported("not an interval".into()));
    };
    if values.len() < 2 {
        return Err(CoefficientError::NoElements);
    }
    let gram = h1_gram(a, b, values.len() - 1);
    let energy: f64 = gram
        .mul_vec(values)
        .iter()
        .zip(values)
        .map(|(p, v)| p * v)
        .sum();
    let trace = values[0] * values[0] + values[values.len() - 1] * values[values.len() - 1];
    Ok((trace / energy).sqrt())
}

/// Largest trace quotient over all P1 functions on a uniform mesh with
/// `elements` cells: the square root of the top eigenvalue of the
/// boundary block of the inverse Gram matrix. Nondecreasing under nested
/// refinement. On an interval of half-length `l` the limit is `sqrt(coth l)`.
pub fn estimate_trace_norm(dom: &DomainSpec, elements: usize) -> Result<f64, CoefficientError> {
    let DomainSpec::Interval { a, b } = *dom else {
        return Err(CoefficientError::Unsupported(
            "only interval domains have a discrete estimator".into(),
        ));
    };
    if elements == 0 {
        return Err(CoefficientError::NoElements);
    }
    let n = elements + 1;
    let gram = h1_gram(a, b, elements);
    let mut e0 = vec![0.0; n];
    e0[0] = 1.0;
    let mut en = vec![0.0; n];
    en[n - 1] = 1.0;
    let w0 = gram
        .solve(&e0)
        .expect("H1 Gram matrix is positive definite");
    let wn = gram
        .solve(&en)
        .expect("H1 Gram matrix is positive definite");
    let (c00, c01, c11) = (w0[0], w0[n - 1], wn[n - 1]);
    let mid = 0.5 * (c00 + c11);
    let rad = (0.25 * (c00 - c11) * (c00 - c11) + c01 * c01).sqrt();
    Ok((mid + rad).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_ball, make_interval};

    fn zero_asm() -> AssumptionSet {
        AssumptionSet {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            k_bound: 10.0,
            c_space: 10.0,
            c0_drift: 0.0,
            trace_norm: 1.0,
        }
    }

    #[test]
    fn decreasing_reaction_satisfies_monotonicity() {
        let dom = make_interval(-1.0, 1.0).unwrap();
        let coef = CoefficientSet::new("t", 1, 1.0, false).with_reaction(|_, _, y, _| -y);
        let r = check_assumptions(&coef, &zero_asm(), &dom, 2000, 1).unwrap();
        assert!(r.observed.f_monotone <= 0.0);
        assert!(!r.violations.iter().any(|v| v.condition.starts_with("H1 f")));
    }

    #[test]
    fn linear_boundary_reaction_attains_minus_beta() {
        let dom = make_interval(-1.0, 1.0).unwrap();
        let coef = CoefficientSet::new("t", 1, 1.0, false).with_boundary(|_, _, y| -0.1 * y);
        let asm = AssumptionSet {
            beta: 0.1,
            ..zero_asm()
        };
        let r = check_assumptions(&coef, &asm, &dom, 2000, 1).unwrap();
        assert!((r.observed.h_monotone + 0.1).abs() < 1e-9);
        assert!(!r.violations.iter().any(|v| v.condition.starts_with("H1 h")));
    }

    #[test]
    fn understated_gamma_is_flagged() {
        let dom = make_interval(-1.0, 1.0).unwrap();
        let coef = CoefficientSet::new("t", 1, 1.0, false)
            .with_divergence(|_, _, y, _| Point::scalar(0.1 * y.sin()));
        let asm = AssumptionSet {
            gamma: 0.05,
            ..zero_asm()
        };
        let r = check_assumptions(&coef, &asm, &dom, 4000, 3).unwrap();
        let v = r
            .violations
            .iter()
            .find(|v| v.condition.starts_with("H6"))
            .expect("H6 violation");
        assert!(
            v.observed > 0.09 && v.observed <= 0.1 + 1e-9,
            "{}",
            v.observed
        );
    }

    #[test]
    fn linear_mode_ignores_state() {
        let dom = make_ball(Point::zeros(2), 1.0).unwrap();
        let coef = CoefficientSet::new("t", 2, 1.0, true)
            .with_reaction(|_, x, y, z| x[0] + y + z[1])
            .with_boundary(|_, _, y| y);
        let z = Point::from_slice(&[1.0, 2.0]);
        let x = Point::from_slice(&[0.3, 0.1]);
        assert_eq!(
            coef.reaction(0.5, &x, 4.0, &z),
            coef.reaction(0.5, &x, -1.0, &x)
        );
        let r = check_assumptions(&coef, &zero_asm(), &dom, 500, 2).unwrap();
        assert!(r.linear_mode_consistent);
    }

    #[test]
    fn check_is_deterministic() {
        let dom = make_interval(-1.0, 1.0).unwrap();
        let coef = CoefficientSet::new("t", 1, 1.0, false)
            .with_reaction(|_, x, y, z| (x.x() * y).sin() + z.x().tanh());
        let a = check_assumptions(&coef, &zero_asm(), &dom, 300, 11).unwrap();
        let b = check_assumptions(&coef, &zero_asm(), &dom, 300, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_folds_into_reaction() {
        let coef = CoefficientSet::new("t", 1, 1.0, true)
            .with_linear_reaction(|_, _| 1.0)
            .with_drift(|x| Point::scalar(2.0 * x.x()));
        let folded = coef.fold_drift();
        assert!(!folded.has_drift() && !folded.linear);
        let x = Point::scalar(0.5);
        assert_eq!(folded.reaction(0.0, &x, 0.0, &Point::scalar(3.0)), 4.0);
    }

    #[test]
    fn constant_function_has_unit_quotient() {
        let dom = make_interval(-1.0, 1.0).unwrap();
        assert_eq!(trace_quotient(&dom, &[1.0, 1.0]).unwrap(), 1.0);
        assert!(estimate_trace_norm(&dom, 1).unwrap() >= 1.0);
    }

    #[test]
    fn trace_norm_converges_to_coth() {
        // On (-1,1) the extremal is cosh(x) with ||Tr||^2 = coth(1).
        let dom = make_interval(-1.0, 1.0).unwrap();
        let exact = (1.0f64 / 1f64.tanh()).sqrt();
        let mut prev = 0.0;
        for k in 0..10 {
            let est = estimate_trace_norm(&dom, 1 << k).unwrap();
            assert!(est >= prev - 1e-14, "not monotone at level {k}");
            assert!(est <= exact + 1e-12);
            prev = est;
        }
        assert!((prev - exact).abs() / exact < 1e-5);
        let coarse = estimate_trace_norm(&dom, 256).unwrap();
        assert!((prev - coarse).abs() / prev < 0.01);
    }

    #[test]
    fn trace_norm_rejects_balls() {
        let dom = make_ball(Point::zeros(2), 1.0).unwrap();
        assert!(matches!(
            estimate_trace_norm(&dom, 10),
            Err(CoefficientError::Unsupported(_))
        ));
    }
}
