//! The lift `G` with `Lap G - G = div g` weakly on an enclosing interval
//! `O`, `G = 0` on the boundary of `O`.
//!
//! Linear finite elements: find `G` with `int G' phi' + G phi = int g phi'`
//! for every interior hat `phi`. The field `g` is first extended from `D`
//! to `O` by `chi(x) g(proj x)` with a smooth cutoff `chi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::CoefficientSet;
use crate::geometry::DomainSpec;
use crate::point::Point;
use crate::tridiag::{Tridiagonal, ZeroPivot};

#[derive(Debug, Error, PartialEq)]
pub enum LiftError {
    #[error("lift needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("enclosing interval ({0}, {1}) is empty")]
    EmptyInterval(f64, f64),
    #[error("the lift solver supports interval domains only")]
    Unsupported,
    #[error("slice {slice}: {source}")]
    Slice { slice: usize, source: ZeroPivot },
    #[error("query ({t}, {x}) outside the lift grid")]
    OutOfRange { t: f64, x: f64 },
    #[error("time slices must be strictly increasing and nonempty")]
    BadSlices,
}

/// Gauss-Legendre nodes and weights on [-1, 1].
const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// One time slice of the lift on a uniform mesh of `O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftSlice {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// 2-norm condition estimate of the interior system.
    pub condition: f64,
    /// Max interior residual `|A G - b|`, relative to `|A| |G| + |b|`.
    pub residual: f64,
}

impl LiftSlice {
    /// `10 eps cond`, the admissible relative residual.
    pub fn tolerance(&self) -> f64 {
        10.0 * f64::EPSILON * self.condition
    }
}

fn uniform(a: f64, b: f64, nodes: usize) -> Vec<f64> {
    let h = (b - a) / (nodes - 1) as f64;
    let mut v: Vec<f64> = (0..nodes).map(|i| a + i as f64 * h).collect();
    v[nodes - 1] = b;
    v
}

struct Assembly {
    matrix: Tridiagonal,
    h: f64,
}

fn assemble(nodes: usize, h: f64) -> Assembly {
    let n = nodes - 2;
    let mut m = Tridiagonal::zeros(n);
    for i in 0..n {
        m.diag[i] = 2.0 / h + 2.0 * h / 3.0;
        m.lower[i] = -1.0 / h + h / 6.0;
        m.upper[i] = -1.0 / h + h / 6.0;
    }
    Assembly { matrix: m, h }
}

/// Load vector `int g phi_i'` by three-point Gauss quadrature per element.
fn load(g: &dyn Fn(f64) -> f64, xs: &[f64], h: f64) -> Vec<f64> {
    let cells: Vec<f64> = xs
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            GAUSS3
                .iter()
                .map(|(s, wt)| wt * g(mid + 0.5 * h * s))
                .sum::<f64>()
                * 0.5
        })
        .collect();
    // phi_i' = 1/h on cell i-1, -1/h on cell i
    (1..xs.len() - 1).map(|i| cells[i - 1] - cells[i]).collect()
}

fn solve_with(asm: &Assembly, xs: &[f64], g: &dyn Fn(f64) -> f64) -> Result<LiftSlice, ZeroPivot> {
    let b = load(g, xs, asm.h);
    let inner = asm.matrix.solve(&b)?;
    let r = asm.matrix.mul_vec(&inner);
    let scale = asm.matrix.norm_inf() * inner.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let resid = r
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let mut values = Vec::with_capacity(xs.len());
    values.push(0.0);
    values.extend(inner);
    values.push(0.0);
    Ok(LiftSlice {
        nodes: xs.to_vec(),
        values,
        condition: 0.0,
        residual: if scale > 0.0 { resid / scale } else { 0.0 },
    })
}

/// Solves one slice on `o = (a, b)` with `nodes` uniform nodes. `g` must
/// already be defined on all of `O`.
pub fn solve_lift_slice(
    g: impl Fn(f64) -> f64,
    o: (f64, f64),
    nodes: usize,
) -> Result<LiftSlice, LiftError> {
    if nodes < 3 {
        return Err(LiftError::TooFewNodes(nodes));
    }
    if !(o.0 < o.1) {
        return Err(LiftError::EmptyInterval(o.0, o.1));
    }
    let xs = uniform(o.0, o.1, nodes);
    let asm = assemble(nodes, xs[1] - xs[0]);
    let mut s =
        solve_with(&asm, &xs, &g).map_err(|source| LiftError::Slice { slice: 0, source })?;
    s.condition = asm
        .matrix
        .condition_estimate()
        .map_err(|source| LiftError::Slice { slice: 0, source })?;
    Ok(s)
}

/// Smooth 0-extension of fields given on the closed interval `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extension {
    /// Cutoff reaches zero at this fraction of the margin beyond `D`.
    pub cutoff_fraction: f64,
}

impl Default for Extension {
    fn default() -> Self {
        Self {
            cutoff_fraction: 1.0,
        }
    }
}

fn smooth_step(s: f64) -> f64 {
    let bump = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let (p, q) = (bump(1.0 - s), bump(s));
    p / (p + q)
}

impl Extension {
    /// `chi(x)`: 1 on `[a, b]`, 0 beyond `width`, smooth in between.
    pub fn cutoff(&self, a: f64, b: f64, margin: f64, x: f64) -> f64 {
        let d = if x < a {
            a - x
        } else if x > b {
            x - b
        } else {
            return 1.0;
        };
        let width = self.cutoff_fraction * margin;
        if d >= width {
            0.0
        } else {
            smooth_step(d / width)
        }
    }
}

/// Enclosing interval `O` for `D = (a, b)` with margin half the diameter.
pub fn enclosing_interval(dom: &DomainSpec) -> Result<(f64, f64), LiftError> {
    match *dom {
        DomainSpec::Interval { a, b } => {
            let m = 0.5 * (b - a);
            Ok((a - m, b + m))
        }
        _ => Err(LiftError::Unsupported),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Provenance {
    Zero,
    Numeric,
    Separable(String),
}

/// `G`, `grad G` and `dG/dt` on a tensor grid of time slices and nodes of `O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftField {
    pub dimension: usize,
    pub o_grid: Vec<f64>,
    pub t_slices: Vec<f64>,
    /// Row-major `[slice][node]`.
    pub values: Vec<f64>,
    pub gradient: Vec<f64>,
    pub time_derivative: Vec<f64>,
    pub provenance: Provenance,
    /// Worst relative residual and condition estimate over slices.
    pub max_residual: f64,
    pub condition: f64,
}

/// Result of [`eval_lift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftValue {
    pub g: f64,
    pub grad: Point,
    pub dt: f64,
}

impl LiftField {
    /// Identically zero lift, valid in any dimension.
    pub fn zero(dimension: usize) -> Self {
        Self {
            dimension,
            o_grid: Vec::new(),
            t_slices: Vec::new(),
            values: Vec::new(),
            gradient: Vec::new(),
            time_derivative: Vec::new(),
            provenance: Provenance::Zero,
            max_residual: 0.0,
            condition: 1.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.provenance == Provenance::Zero
    }

    pub fn nx(&self) -> usize {
        self.o_grid.len()
    }

    pub fn at(&self, slice: usize, node: usize) -> (f64, f64, f64) {
        let k = slice * self.nx() + node;
        (self.values[k], self.gradient[k], self.time_derivative[k])
    }

    /// `(sup |G|, sup |grad G|, sup |dG/dt|)` over the grid.
    pub fn bounds(&self) -> (f64, f64, f64) {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (
            sup(&self.values),
            sup(&self.gradient),
            sup(&self.time_derivative),
        )
    }
}

/// Second-order gradient: central inside, one-sided three-point at the ends.
pub fn nodal_gradient(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (values[1] - values[0]) / h;
            d.fill(s);
        }
        return d;
    }
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// Lift of an arbitrary space-time field `g(t, x)` given on `D`; it is
/// extended to `O` with `ext` before solving.
pub fn solve_lift_from_fn(
    dom: &DomainSpec,
    g: impl Fn(f64, f64) -> f64 + Sync,
    nodes: usize,
    t_slices: &[f64],
    ext: Extension,
) -> Result<LiftField, LiftError> {
    let DomainSpec::Interval { a, b } = *dom else {
        return Err(LiftError::Unsupported);
    };
    check_slices(t_slices)?;
    if nodes < 3 {
        return Err(LiftError::TooFewNodes(nodes));
    }
    let o = enclosing_interval(dom)?;
    let margin = 0.5 * (b - a);
    let xs = uniform(o.0, o.1, nodes);
    let h = xs[1] - xs[0];
    let asm = assemble(nodes, h);
    let slices: Vec<LiftSlice> = t_slices
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let ge = |x: f64| ext.cutoff(a, b, margin, x) * g(t, x.clamp(a, b));
            solve_with(&asm, &xs, &ge).map_err(|source| LiftError::Slice { slice: i, source })
        })
        .collect::<Result<_, _>>()?;
    let condition = asm
        .matrix
        .condition_estimate()
        .map_err(|source| LiftError::Slice { slice: 0, source })?;
    let mut field = LiftField {
        dimension: 1,
        o_grid: xs,
        t_slices: t_slices.to_vec(),
        values: Vec::with_capacity(nodes * t_slices.len()),
        gradient: Vec::with_capacity(nodes * t_slices.len()),
        time_derivative: vec![0.0; nodes * t_slices.len()],
        provenance: Provenance::Numeric,
        max_residual: slices.iter().map(|s| s.residual).fold(0.0, f64::max),
        condition,
    };
    for s in &slices {
        field.gradient.extend(nodal_gradient(&s.values, h));
        field.values.extend_from_slice(&s.values);
    }
    time_differences(&mut field);
    Ok(field)
}

fn check_slices(t: &[f64]) -> Result<(), LiftError> {
    if t.is_empty() || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LiftError::BadSlices);
    }
    Ok(())
}

/// Second-order differences in time on a possibly nonuniform slice grid.
fn time_differences(field: &mut LiftField) {
    let nt = field.t_slices.len();
    let nx = field.nx();
    if nt < 2 {
        return;
    }
    let t = &field.t_slices;
    for j in 0..nx {
        let v = |i: usize| field.values[i * nx + j];
        for i in 0..nt {
            let d = if nt == 2 {
                (v(1) - v(0)) / (t[1] - t[0])
            } else {
                let (l, c, r) = if i == 0 {
                    (0, 1, 2)
                } else if i == nt - 1 {
                    (nt - 3, nt - 2, nt - 1)
                } else {
                    (i - 1, i, i + 1)
                };
                // derivative at t[i] of the quadratic through (l, c, r)
                let (x0, x1, x2) = (t[l], t[c], t[r]);
                let x = t[i];
                v(l) * (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2))
                    + v(c) * (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2))
                    + v(r) * (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1))
            };
            field.time_derivative[i * nx + j] = d;
        }
    }
}

/// Lift of the divergence field of `coef` with `(y, z)` frozen at zero.
/// Separable fields are solved once and scaled; `dG/dt` is then exact.
pub fn solve_lift_spacetime(
    coef: &CoefficientSet,
    dom: &DomainSpec,
    nodes: usize,
    t_slices: &[f64],
) -> Result<LiftField, LiftError> {
    if !coef.has_divergence() {
        return Ok(LiftField::zero(dom.dimension()));
    }
    let Some(sep) = coef.separable() else {
        return solve_lift_from_fn(
            dom,
            |t, x| coef.g_lin(t, &Point::scalar(x)).x(),
            nodes,
            t_slices,
            Extension::default(),
        );
    };
    check_slices(t_slices)?;
    let space = sep.space.clone();
    let base = solve_lift_from_fn(
        dom,
        move |_, x| space(&Point::scalar(x)).x(),
        nodes,
        &[0.0],
        Extension::default(),
    )?;
    let nx = base.nx();
    let mut field = LiftField {
        t_slices: t_slices.to_vec(),
        values: Vec::with_capacity(nx * t_slices.len()),
        gradient: Vec::with_capacity(nx * t_slices.len()),
        time_derivative: Vec::with_capacity(nx * t_slices.len()),
        provenance: Provenance::Separable(coef.name.clone()),
        ..base.clone()
    };
    for &t in t_slices {
        let (g1, dg1) = ((sep.time)(t), (sep.time_derivative)(t));
        field.values.extend(base.values.iter().map(|v| g1 * v));
        field.gradient.extend(base.gradient.iter().map(|v| g1 * v));
        field
            .time_derivative
            .extend(base.values.iter().map(|v| dg1 * v));
    }
    Ok(field)
}

/// Bilinear interpolation of `G`, `grad G` and `dG/dt` at `(t, x)`.
pub fn eval_lift(lift: &LiftField, t: f64, x: &Point) -> Result<LiftValue, LiftError> {
    if lift.is_zero() {
        return Ok(LiftValue {
            g: 0.0,
            grad: Point::zeros(x.dim()),
            dt: 0.0,
        });
    }
    let xv = x.x();
    let (xs, ts) = (&lift.o_grid, &lift.t_slices);
    let nx = xs.len();
    let tol = 1e-12 * (1.0 + t.abs());
    if !(xv >= xs[0] && xv <= xs[nx - 1]) || t < ts[0] - tol || t > ts[ts.len() - 1] + tol {
        return Err(LiftError::OutOfRange { t, x: xv });
    }
    let h = xs[1] - xs[0];
    let j = (((xv - xs[0]) / h).floor() as usize).min(nx - 2);
    let wx = if xv >= xs[j + 1] {
        1.0
    } else if xv <= xs[j] {
        0.0
    } else {
        (xv - xs[j]) / h
    };
    let (i, wt) = locate(ts, t);
    let mix = |arr: &[f64]| {
        let row = |s: usize| arr[s * nx + j] * (1.0 - wx) + arr[s * nx + j + 1] * wx;
        if wt == 0.0 {
            row(i)
        } else {
            row(i) * (1.0 - wt) + row(i + 1) * wt
        }
    };
    Ok(LiftValue {
        g: mix(&lift.values),
        grad: Point::scalar(mix(&lift.gradient)),
        dt: mix(&lift.time_derivative),
    })
}

/// Slice index and weight with `t = (1 - w) t_i + w t_{i+1}`.
fn locate(ts: &[f64], t: f64) -> (usize, f64) {
    let n = ts.len();
    if n == 1 || t <= ts[0] {
        return (0, 0.0);
    }
    if t >= ts[n - 1] {
        return (n - 1, 0.0);
    }
    let i = ts.partition_point(|&s| s <= t) - 1;
    (i, (t - ts[i]) / (ts[i + 1] - ts[i]))
}

/// Weak residual of a slice against every interior hat:
/// `max_i |int G' phi_i' + G phi_i - g phi_i'| / ||phi_i||_{H1}`.
pub fn slice_weak_residual(slice: &LiftSlice, g: impl Fn(f64) -> f64) -> f64 {
    let xs = &slice.nodes;
    let h = xs[1] - xs[0];
    let asm = assemble(xs.len(), h);
    let b = load(&g, xs, h);
    let inner = &slice.values[1..xs.len() - 1];
    let phi_norm = (2.0 / h + 2.0 * h / 3.0).sqrt();
    asm.matrix
        .mul_vec(inner)
        .iter()
        .zip(&b)
        .map(|(a, b)| (a - b).abs() / phi_norm)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_interval;
    use crate::presets;

    fn oracle(x: f64) -> f64 {
        x.cosh() / 2f64.cosh() - 1.0
    }

    #[test]
    fn analytic_oracle_solves_the_ode() {
        // G'' - G = 1 with G(+-2) = 0
        let e = 1e-4;
        for &x in &[-1.5, 0.0, 0.7] {
            let g2 = (oracle(x + e) - 2.0 * oracle(x) + oracle(x - e)) / (e * e);
            assert!((g2 - oracle(x) - 1.0).abs() < 1e-6);
        }
        assert!(oracle(2.0).abs() < 1e-15 && oracle(-2.0).abs() < 1e-15);
        assert!((oracle(0.0) + 0.734_20).abs() < 1e-5);
    }

    #[test]
    fn constant_field_has_zero_lift() {
        let s = solve_lift_slice(|_| 3.0, (-2.0, 2.0), 101).unwrap();
        assert!(s.values.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn linear_field_matches_cosh_and_converges_quadratically() {
        let err = |n: usize| {
            let s = solve_lift_slice(|x| x, (-2.0, 2.0), n).unwrap();
            assert!(
                s.residual <= s.tolerance(),
                "{} > {}",
                s.residual,
                s.tolerance()
            );
            s.nodes
                .iter()
                .zip(&s.values)
                .map(|(x, v)| (v - oracle(*x)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(101), err(201));
        assert!((e1 / e2).log2() > 1.8, "order {}", (e1 / e2).log2());
        assert!(err(2001) <= 1e-4);
    }

    #[test]
    fn weak_residual_is_tiny_for_the_solution() {
        let s = solve_lift_slice(|x| x.sin(), (-2.0, 2.0), 401).unwrap();
        let r = slice_weak_residual(&s, |x| x.sin());
        assert!(r < 1e-12, "{r}");
        let mut bad = s.clone();
        bad.values[200] += 1e-3;
        assert!(slice_weak_residual(&bad, |x| x.sin()) > 1e-4);
    }

    #[test]
    fn separable_lift_scales_the_spatial_solution() {
        let p = presets::manufactured_gx();
        let dom = make_interval(-1.0, 1.0).unwrap();
        let ts: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let sep = solve_lift_spacetime(&p.coefficients, &dom, 401, &ts).unwrap();
        let num = solve_lift_from_fn(
            &dom,
            |t, x| (-t).exp() * 0.5 * x,
            401,
            &ts,
            Extension::default(),
        )
        .unwrap();
        let nx = sep.nx();
        for i in 0..ts.len() {
            for j in 0..nx {
                let (g, _, dt) = sep.at(i, j);
                assert!((g - (-ts[i]).exp() * sep.values[j]).abs() < 1e-15);
                assert!((dt + g).abs() < 1e-15);
                let (gn, _, dtn) = num.at(i, j);
                assert!((g - gn).abs() < 1e-13);
                // one-sided quadratic differences err by dt^2/3 |G'''|
                assert!((dt - dtn).abs() < 5e-3 * g.abs().max(1e-3), "{dt} {dtn}");
            }
        }
    }

    #[test]
    fn zero_field_gives_zero_lift() {
        let p = presets::manufactured_g0();
        let dom = make_interval(-1.0, 1.0).unwrap();
        let l = solve_lift_spacetime(&p.coefficients, &dom, 101, &[0.0, 1.0]).unwrap();
        assert!(l.is_zero());
        let v = eval_lift(&l, 0.3, &Point::scalar(0.2)).unwrap();
        assert_eq!((v.g, v.grad.x(), v.dt), (0.0, 0.0, 0.0));
    }

    #[test]
    fn interpolation_contract() {
        let dom = make_interval(-1.0, 1.0).unwrap();
        let l = solve_lift_from_fn(
            &dom,
            |t, x| (1.0 + t) * x,
            81,
            &[0.0, 0.5, 1.0],
            Extension::default(),
        )
        .unwrap();
        let (g, _, _) = l.at(1, 30);
        let x30 = l.o_grid[30];
        assert_eq!(eval_lift(&l, 0.5, &Point::scalar(x30)).unwrap().g, g);
        let mid = 0.5 * (l.o_grid[30] + l.o_grid[31]);
        let m = eval_lift(&l, 0.5, &Point::scalar(mid)).unwrap().g;
        assert!((m - 0.5 * (l.at(1, 30).0 + l.at(1, 31).0)).abs() < 1e-15);
        let gmax = l.bounds().1;
        for k in 0..200 {
            let x = -1.9 + k as f64 * 0.019;
            let (a, b) = (
                eval_lift(&l, 0.7, &Point::scalar(x)).unwrap().g,
                eval_lift(&l, 0.7, &Point::scalar(x + 1e-3)).unwrap().g,
            );
            assert!((a - b).abs() / 1e-3 <= 1.05 * gmax);
        }
        assert!(matches!(
            eval_lift(&l, 0.5, &Point::scalar(2.5)),
            Err(LiftError::OutOfRange { .. })
        ));
    }

    #[test]
    fn extension_is_smooth_cutoff() {
        let e = Extension::default();
        assert_eq!(e.cutoff(-1.0, 1.0, 1.0, 0.3), 1.0);
        assert_eq!(e.cutoff(-1.0, 1.0, 1.0, 2.0), 0.0);
        let mid = e.cutoff(-1.0, 1.0, 1.0, 1.5);
        assert!((mid - 0.5).abs() < 1e-15);
    }
}
