//! Named problem families on `(-1, 1)` with horizon `T = 1`, and a registry
//! for user-defined ones.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use crate::coefficients::{AssumptionSet, CoefficientSet, SeparableField};
use crate::geometry::{make_interval, DomainSpec};
use crate::point::Point;

pub type ExactFn = Arc<dyn Fn(f64, &Point) -> f64 + Send + Sync>;

/// A problem: domain, data, declared constants and, when known, the exact
/// solution.
#[derive(Clone)]
pub struct Preset {
    pub name: String,
    pub domain: DomainSpec,
    pub coefficients: CoefficientSet,
    pub assumptions: AssumptionSet,
    pub exact: Option<ExactFn>,
}

impl std::fmt::Debug for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preset")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("coefficients", &self.coefficients)
            .field("assumptions", &self.assumptions)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

/// Value taken by the `constant` preset.
pub const CONSTANT_VALUE: f64 = 0.7;

fn unit_interval() -> DomainSpec {
    make_interval(-1.0, 1.0).expect("valid interval")
}

fn linear_assumptions() -> AssumptionSet {
    AssumptionSet {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        k_bound: 8.0,
        c_space: 20.0,
        c0_drift: 0.0,
        trace_norm: 1.2,
    }
}

pub fn constant() -> Preset {
    let c = CONSTANT_VALUE;
    Preset {
        name: "constant".into(),
        domain: unit_interval(),
        coefficients: CoefficientSet::new("constant", 1, 1.0, true).with_terminal(move |_| c),
        assumptions: linear_assumptions(),
        exact: Some(Arc::new(move |_, _| c)),
    }
}

/// `u = exp(-t) cos(pi x)`, `g = h = 0`.
pub fn manufactured_g0() -> Preset {
    let coefficients = CoefficientSet::new("manufactured_g0", 1, 1.0, true)
        .with_terminal(|x| (-1f64).exp() * (PI * x.x()).cos())
        .with_linear_reaction(|t, x| (1.0 + 0.5 * PI * PI) * (-t).exp() * (PI * x.x()).cos())
        .with_integrability_bound(1.0 + 0.5 * PI * PI);
    Preset {
        name: "manufactured_g0".into(),
        domain: unit_interval(),
        coefficients,
        assumptions: linear_assumptions(),
        exact: Some(Arc::new(|t, x| (-t).exp() * (PI * x.x()).cos())),
    }
}

/// `u = exp(-t) x^2 / 2`, `g = exp(-t) x / 2`, `h = 0`.
pub fn manufactured_gx() -> Preset {
    let coefficients = CoefficientSet::new("manufactured_gx", 1, 1.0, true)
        .with_terminal(|x| (-1f64).exp() * 0.5 * x.x() * x.x())
        .with_linear_reaction(|t, x| (-t).exp() * 0.5 * x.x() * x.x())
        .with_separable_divergence(SeparableField {
            time: Arc::new(|t| (-t).exp()),
            time_derivative: Arc::new(|t| -(-t).exp()),
            space: Arc::new(|x| Point::scalar(0.5 * x.x())),
        })
        .with_integrability_bound(1.0);
    Preset {
        name: "manufactured_gx".into(),
        domain: unit_interval(),
        coefficients,
        assumptions: linear_assumptions(),
        exact: Some(Arc::new(|t, x| (-t).exp() * 0.5 * x.x() * x.x())),
    }
}

/// Lipschitz constants `alpha = 0.2`, `beta = 0.1`, `gamma = 0.1`; no
/// closed-form solution.
pub fn nonlinear_small_gamma() -> Preset {
    let coefficients = CoefficientSet::new("nonlinear_small_gamma", 1, 1.0, false)
        .with_terminal(|x| (PI * x.x()).cos())
        .with_reaction(|t, x, y, z| {
            0.2 * y.sin() + 0.1 * z.x().tanh() + (-t).exp() * (PI * x.x()).cos()
        })
        .with_divergence(|_, x, y, z| {
            Point::scalar(0.05 * y.sin() + 0.05 * z.x().tanh() + 0.25 * x.x())
        })
        .with_boundary(|_, _, y| 0.1 - 0.1 * y)
        .with_integrability_bound(1.0);
    Preset {
        name: "nonlinear_small_gamma".into(),
        domain: unit_interval(),
        coefficients,
        assumptions: AssumptionSet {
            alpha: 0.2,
            beta: 0.1,
            gamma: 0.1,
            k_bound: 2.0,
            c_space: 3.2,
            c0_drift: 0.0,
            trace_norm: 1.2,
        },
        exact: None,
    }
}

type Factory = Arc<dyn Fn() -> Preset + Send + Sync>;

fn registry() -> &'static RwLock<BTreeMap<String, Factory>> {
    static REGISTRY: std::sync::OnceLock<RwLock<BTreeMap<String, Factory>>> =
        std::sync::OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut m: BTreeMap<String, Factory> = BTreeMap::new();
        m.insert("constant".into(), Arc::new(constant));
        m.insert("manufactured_g0".into(), Arc::new(manufactured_g0));
        m.insert("manufactured_gx".into(), Arc::new(manufactured_gx));
        m.insert(
            "nonlinear_small_gamma".into(),
            Arc::new(nonlinear_small_gamma),
        );
        RwLock::new(m)
    })
}

/// Registers a user family under `name`, replacing any previous entry.
pub fn register(name: &str, factory: impl Fn() -> Preset + Send + Sync + 'static) {
    registry()
        .write()
        .expect("preset registry poisoned")
        .insert(name.to_string(), Arc::new(factory));
}

pub fn lookup(name: &str) -> Option<Preset> {
    let f = registry()
        .read()
        .expect("preset registry poisoned")
        .get(name)
        .cloned();
    f.map(|f| f())
}

pub fn names() -> Vec<String> {
    registry()
        .read()
        .expect("preset registry poisoned")
        .keys()
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::check_assumptions;

    /// Residuals of the strong form at a few points, by finite differences
    /// of the exact solution.
    fn strong_residual(p: &Preset, t: f64, x: f64) -> f64 {
        let u = p.exact.as_ref().unwrap();
        let c = &p.coefficients;
        let e = 1e-4;
        let at = |t: f64, x: f64| u(t, &Point::scalar(x));
        let ut = (at(t + e, x) - at(t - e, x)) / (2.0 * e);
        let uxx = (at(t, x + e) - 2.0 * at(t, x) + at(t, x - e)) / (e * e);
        let g = |x: f64| c.g_lin(t, &Point::scalar(x)).x();
        let divg = (g(x + e) - g(x - e)) / (2.0 * e);
        ut + 0.5 * uxx + c.f_lin(t, &Point::scalar(x)) - divg
    }

    fn flux_residual(p: &Preset, t: f64, x: f64, n: f64) -> f64 {
        let u = p.exact.as_ref().unwrap();
        let c = &p.coefficients;
        let e = 1e-5;
        let ux = (u(t, &Point::scalar(x + e)) - u(t, &Point::scalar(x - e))) / (2.0 * e);
        let xp = Point::scalar(x);
        ux * n - 2.0 * c.g_lin(t, &xp).x() * n + c.h_lin(t, &xp)
    }

    #[test]
    fn manufactured_solutions_solve_the_problem() {
        for p in [constant(), manufactured_g0(), manufactured_gx()] {
            for &t in &[0.1, 0.5, 0.9] {
                for &x in &[-0.7, 0.0, 0.3, 0.95] {
                    let r = strong_residual(&p, t, x);
                    assert!(r.abs() < 1e-5, "{} at ({t},{x}): {r}", p.name);
                }
                assert!(flux_residual(&p, t, -1.0, 1.0).abs() < 1e-8, "{}", p.name);
                assert!(flux_residual(&p, t, 1.0, -1.0).abs() < 1e-8, "{}", p.name);
            }
            let u = p.exact.as_ref().unwrap();
            for &x in &[-1.0, 0.2, 1.0] {
                let x = Point::scalar(x);
                assert!((u(1.0, &x) - p.coefficients.terminal(&x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn declared_constants_are_not_refuted() {
        for name in names() {
            let p = lookup(&name).unwrap();
            let r = check_assumptions(&p.coefficients, &p.assumptions, &p.domain, 4000, 5).unwrap();
            assert!(r.violations.is_empty(), "{name}: {:?}", r.violations);
            assert!(r.trace_condition && r.gamma_condition, "{name}");
        }
    }

    #[test]
    fn user_presets_can_be_registered() {
        register("my_constant", || {
            let mut p = constant();
            p.name = "my_constant".into();
            p
        });
        assert_eq!(lookup("my_constant").unwrap().name, "my_constant");
        assert!(names().contains(&"my_constant".to_string()));
        assert!(lookup("missing").is_none());
    }
}
