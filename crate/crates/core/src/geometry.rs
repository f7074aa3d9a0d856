//! Convex smooth domains, their boundary geometry and the penalization field.
//!
//! A domain is described by an interior function `psi` with `D = {psi > 0}`
//! and `|grad psi| = 1` on the boundary, so `grad psi` restricted to the
//! boundary is the unit inward normal. Outside the closure the penalization
//! field is `delta(x) = grad dist(x, D)^2 = 2 (x - proj(x))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point::{Point, MAX_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("interval endpoints must satisfy a < b, got a = {a}, b = {b}")]
    EmptyInterval { a: f64, b: f64 },
    #[error("ball radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("ball dimension must be in 1..={MAX_DIM}, got {0}")]
    BadDimension(usize),
    #[error("non-finite domain parameter")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Ball { center: Point, radius: f64 },
}

pub fn make_interval(a: f64, b: f64) -> Result<DomainSpec, GeometryError> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if a >= b {
        return Err(GeometryError::EmptyInterval { a, b });
    }
    Ok(DomainSpec::Interval { a, b })
}

pub fn make_ball(center: Point, radius: f64) -> Result<DomainSpec, GeometryError> {
    if !(radius.is_finite() && center.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if radius <= 0.0 {
        return Err(GeometryError::NonPositiveRadius(radius));
    }
    Ok(DomainSpec::Ball { center, radius })
}

impl DomainSpec {
    pub fn dimension(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            DomainSpec::Ball { center, .. } => center.dim(),
        }
    }

    /// Centre and radius; an interval is the one-dimensional ball.
    /// Centre and radius; for an interval the midpoint and half-length.
    pub fn center_radius(&self) -> (Point, f64) {
        match *self {
            DomainSpec::Interval { a, b } => (Point::scalar(0.5 * (a + b)), 0.5 * (b - a)),
            DomainSpec::Ball { center, radius } => (center, radius),
        }
    }

    /// `psi(x) = (r^2 - |x - c|^2) / (2 r)`.
    pub fn psi(&self, x: &Point) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => {
                let x = x.x();
                (x - a) * (b - x) / (b - a)
            }
            DomainSpec::Ball { center, radius } => {
                (radius * radius - (*x - center).norm_sq()) / (2.0 * radius)
            }
        }
    }

    pub fn grad_psi(&self, x: &Point) -> Point {
        let (c, r) = self.center_radius();
        (*x - c) * (-1.0 / r)
    }

    /// Closest point of the closed domain.
    pub fn project(&self, x: &Point) -> Point {
        match *self {
            DomainSpec::Interval { a, b } => Point::scalar(x.x().clamp(a, b)),
            DomainSpec::Ball { center, radius } => {
                let v = *x - center;
                let dist = v.norm();
                if dist <= radius {
                    *x
                } else {
                    center + v * (radius / dist)
                }
            }
        }
    }

    /// Squared distance to the closed domain.
    pub fn dist_sq(&self, x: &Point) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => {
                let x = x.x();
                let d = if x > b {
                    x - b
                } else if x < a {
                    a - x
                } else {
                    0.0
                };
                d * d
            }
            DomainSpec::Ball { center, radius } => {
                let d = ((*x - center).norm() - radius).max(0.0);
                d * d
            }
        }
    }

    /// Penalization field `delta(x) = 2 (x - proj(x))`, zero on the closure.
    pub fn penal_field(&self, x: &Point) -> Point {
        match *self {
            DomainSpec::Interval { a, b } => {
                let x = x.x();
                Point::scalar(if x > b {
                    2.0 * (x - b)
                } else if x < a {
                    2.0 * (x - a)
                } else {
                    0.0
                })
            }
            DomainSpec::Ball { center, radius } => {
                let v = *x - center;
                let dist = v.norm();
                if dist <= radius {
                    Point::zeros(v.dim())
                } else {
                    v * (2.0 * (dist - radius) / dist)
                }
            }
        }
    }

    /// Unit inward normal at the boundary point closest to `x`.
    ///
    /// On the boundary this is `grad psi(x)`. The centre of a ball has no
    /// closest boundary point; the normal at `c + r e_1` is returned there.
    pub fn boundary_normal(&self, x: &Point) -> Point {
        match *self {
            DomainSpec::Interval { a, b } => {
                Point::scalar(if x.x() - a <= b - x.x() { 1.0 } else { -1.0 })
            }
            DomainSpec::Ball { center, .. } => {
                let v = *x - center;
                let dist = v.norm();
                if dist == 0.0 {
                    -Point::unit(v.dim(), 0)
                } else {
                    v * (-1.0 / dist)
                }
            }
        }
    }

    /// Membership in the closed domain, with a relative slack for points
    /// produced by a projection.
    pub fn contains(&self, x: &Point) -> bool {
        let (_, r) = self.center_radius();
        self.psi(x) >= -1e-12 * r.max(1.0)
    }

    pub fn is_interior(&self, x: &Point) -> bool {
        self.psi(x) > 0.0
    }

    /// Diameter of the domain.
    pub fn diameter(&self) -> f64 {
        2.0 * self.center_radius().1
    }

    /// Axis-aligned bounding box `(lower, upper)` of the closed domain.
    pub fn bounding_box(&self) -> (Point, Point) {
        let (c, r) = self.center_radius();
        let mut lo = c;
        let mut hi = c;
        for i in 0..c.dim() {
            lo[i] -= r;
            hi[i] += r;
        }
        (lo, hi)
    }

    /// Mirror image of `x` across the tangent plane at `proj(x)`.
    ///
    /// Falls back to the projection when the mirror image itself would leave
    /// the closure (overshoot larger than the domain).
    pub fn mirror(&self, x: &Point) -> Point {
        let p = self.project(x);
        let m = 2.0 * p - *x;
        if self.contains(&m) {
            m
        } else {
            p
        }
    }

    /// Random boundary point, uniform on the sphere (each endpoint with
    /// probability one half on an interval).
    pub fn sample_boundary<R: Rng>(&self, rng: &mut R) -> Point {
        let (c, r) = self.center_radius();
        loop {
            let mut v = Point::zeros(c.dim());
            for i in 0..c.dim() {
                v[i] = rng.random_range(-1.0..=1.0);
            }
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return self.project(&(c + v * (r / n)));
            }
        }
    }

    /// Uniform sample from the closed domain by rejection from its box.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Point {
        let (lo, hi) = self.bounding_box();
        loop {
            let mut x = lo;
            for i in 0..lo.dim() {
                x[i] = rng.random_range(lo[i]..=hi[i]);
            }
            if self.contains(&x) {
                return x;
            }
        }
    }
}

/// Worst observed violation of each geometric invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub samples: usize,
    /// `psi > 0` inside, `delta = 0` exactly on the closure.
    pub sign_consistency: f64,
    /// Positive part of `<grad psi, delta>`.
    pub normal_alignment: f64,
    /// `|proj(proj x) - proj x|`.
    pub projection_idempotence: f64,
    /// `| |x - proj x|^2 - d(x) |`.
    pub distance_consistency: f64,
    /// `| |grad psi| - 1 |` at boundary points.
    pub unit_normal: f64,
    /// `|delta - central-difference grad d| / (1 + |x|)`.
    pub gradient_fd: f64,
    /// Points where an exact invariant exceeded the tolerance.
    pub offenders: Vec<GeometryOffence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryOffence {
    pub invariant: String,
    pub point: Point,
    pub magnitude: f64,
}

impl GeometryReport {
    /// Largest violation among the closed-form invariants.
    pub fn max_exact_violation(&self) -> f64 {
        [
            self.sign_consistency,
            self.normal_alignment,
            self.projection_idempotence,
            self.distance_consistency,
            self.unit_normal,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, exact_tol: f64, fd_tol: f64) -> bool {
        self.max_exact_violation() <= exact_tol && self.gradient_fd <= fd_tol
    }
}

/// Offender threshold used by [`geometry_selfcheck`].
pub const SELFCHECK_TOLERANCE: f64 = 1e-10;

const FD_STEP: f64 = 1e-6;

/// Samples points in a box 50% larger than the domain on every side and
/// measures every invariant of [`DomainSpec`]. Violations are reported, not
/// raised.
pub fn geometry_selfcheck(dom: &DomainSpec, samples: usize, rng_seed: u64) -> GeometryReport {
    assert!(samples > 0, "samples must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (lo, hi) = dom.bounding_box();
    let dim = dom.dimension();
    let mut report = GeometryReport {
        samples,
        sign_consistency: 0.0,
        normal_alignment: 0.0,
        projection_idempotence: 0.0,
        distance_consistency: 0.0,
        unit_normal: 0.0,
        gradient_fd: 0.0,
        offenders: Vec::new(),
    };
    let flag = |report: &mut GeometryReport, name: &str, x: Point, mag: f64| {
        if mag > SELFCHECK_TOLERANCE && report.offenders.len() < 32 {
            report.offenders.push(GeometryOffence {
                invariant: name.to_string(),
                point: x,
                magnitude: mag,
            });
        }
    };

    for _ in 0..samples {
        let mut x = Point::zeros(dim);
        for i in 0..dim {
            let w = hi[i] - lo[i];
            x[i] = rng.random_range((lo[i] - 0.5 * w)..(hi[i] + 0.5 * w));
        }
        let psi = dom.psi(&x);
        let delta = dom.penal_field(&x);
        let p = dom.project(&x);

        let sign = if psi > 0.0 {
            delta.norm()
        } else if psi < 0.0 && delta.norm() == 0.0 {
            psi.abs()
        } else {
            0.0
        };
        report.sign_consistency = report.sign_consistency.max(sign);
        flag(&mut report, "sign_consistency", x, sign);

        let align = dom.grad_psi(&x).dot(&delta).max(0.0);
        report.normal_alignment = report.normal_alignment.max(align);
        flag(&mut report, "normal_alignment", x, align);

        let idem = (dom.project(&p) - p).norm();
        report.projection_idempotence = report.projection_idempotence.max(idem);
        flag(&mut report, "projection_idempotence", x, idem);

        let dist = ((x - p).norm_sq() - dom.dist_sq(&x)).abs();
        report.distance_consistency = report.distance_consistency.max(dist);
        flag(&mut report, "distance_consistency", x, dist);

        if psi < 0.0 {
            let unit = (dom.grad_psi(&p).norm() - 1.0).abs();
            report.unit_normal = report.unit_normal.max(unit);
            flag(&mut report, "unit_normal", x, unit);
        }

        let mut fd = Point::zeros(dim);
        for i in 0..dim {
            let mut xp = x;
            let mut xm = x;
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            fd[i] = (dom.dist_sq(&xp) - dom.dist_sq(&xm)) / (2.0 * FD_STEP);
        }
        let grad_err = (delta - fd).norm() / (1.0 + x.norm());
        report.gradient_fd = report.gradient_fd.max(grad_err);
    }
    report
}
