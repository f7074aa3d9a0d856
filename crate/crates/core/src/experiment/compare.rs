//! Pointwise comparison of two grid functions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridFunction;

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("grids are incompatible: {0}")]
    Incompatible(String),
}

/// Per-point tolerance `se_multiplier * sqrt(se_a^2 + se_b^2) + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub se_multiplier: f64,
    pub bias: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            se_multiplier: 3.0,
            bias: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub t: f64,
    pub x: f64,
    pub u_a: f64,
    pub u_b: f64,
    pub diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub max_diff: f64,
    pub pass: bool,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "x", "u_a", "u_b", "diff", "tolerance", "pass"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                format!("{:?}", r.t),
                format!("{:?}", r.x),
                format!("{:?}", r.u_a),
                format!("{:?}", r.u_b),
                format!("{:?}", r.diff),
                format!("{:?}", r.tolerance),
                r.pass.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn same_nodes(a: &GridFunction, b: &GridFunction) -> bool {
    a.t_nodes == b.t_nodes && a.x_nodes == b.x_nodes
}

/// Compares `a` with `b` at the nodes of `a`. Grids with different nodes
/// are compared by interpolating the 1-D grid `b`, which must cover the
/// nodes of `a`.
pub fn compare(
    a: &GridFunction,
    b: &GridFunction,
    policy: &TolerancePolicy,
) -> Result<Comparison, CompareError> {
    let exact_match = same_nodes(a, b);
    if !exact_match {
        if a.dimension() != 1 || b.dimension() != 1 {
            return Err(CompareError::Incompatible(
                "multi-dimensional grids must share their nodes".into(),
            ));
        }
        let bx = b
            .x_coords()
            .ok_or_else(|| CompareError::Incompatible("unsorted nodes".into()))?;
        let (bt0, bt1) = (b.t_nodes[0], b.t_nodes[b.nt() - 1]);
        let tol = 1e-12;
        for &t in &a.t_nodes {
            if t < bt0 - tol || t > bt1 + tol {
                return Err(CompareError::Incompatible(format!(
                    "time {t} outside [{bt0}, {bt1}]"
                )));
            }
        }
        for x in &a.x_nodes {
            if x.x() < bx[0] - tol || x.x() > bx[bx.len() - 1] + tol {
                return Err(CompareError::Incompatible(format!(
                    "point {} outside the second grid",
                    x.x()
                )));
            }
        }
    }
    let mut rows = Vec::with_capacity(a.values.len());
    for i in 0..a.nt() {
        for j in 0..a.nx() {
            let k = a.index(i, j);
            let (t, x) = (a.t_nodes[i], a.x_nodes[j].x());
            let (u_b, se_b) = if exact_match {
                (b.values[k], b.std_errors[k])
            } else {
                (b.interpolate(t, x).0, interpolate_se(b, t, x))
            };
            let diff = (a.values[k] - u_b).abs();
            let se = (a.std_errors[k].powi(2) + se_b.powi(2)).sqrt();
            let tolerance = policy.se_multiplier * se + policy.bias;
            rows.push(CompareRow {
                t,
                x,
                u_a: a.values[k],
                u_b,
                diff,
                tolerance,
                pass: diff <= tolerance,
            });
        }
    }
    Ok(Comparison {
        max_diff: rows.iter().map(|r| r.diff).fold(0.0, f64::max),
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

/// Largest standard error among the nodes bracketing `(t, x)`.
fn interpolate_se(b: &GridFunction, t: f64, x: f64) -> f64 {
    if b.std_errors.iter().all(|s| *s == 0.0) {
        return 0.0;
    }
    let ti = b.t_nodes.partition_point(|&s| s < t).min(b.nt() - 1);
    let xi = b.x_nodes.partition_point(|p| p.x() < x).min(b.nx() - 1);
    let mut m: f64 = 0.0;
    for i in ti.saturating_sub(1)..=ti {
        for j in xi.saturating_sub(1)..=xi {
            m = m.max(b.std_errors[b.index(i, j)]);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMeta;

    fn grid(f: impl Fn(f64, f64) -> f64, nx: usize) -> GridFunction {
        GridFunction::from_fn(
            GridFunction::uniform_times(0.0, 1.0, 5),
            GridFunction::uniform_nodes(-1.0, 1.0, nx),
            GridMeta::default(),
            |t, x| f(t, x.x()),
        )
    }

    #[test]
    fn grid_against_itself_is_zero() {
        let g = grid(|t, x| t * x, 11);
        let c = compare(&g, &g, &TolerancePolicy::default()).unwrap();
        assert!(c.pass);
        assert_eq!(c.max_diff, 0.0);
    }

    #[test]
    fn interpolates_finer_grid() {
        let coarse = grid(|t, x| t + x, 5);
        let fine = grid(|t, x| t + x, 41);
        let c = compare(
            &coarse,
            &fine,
            &TolerancePolicy {
                se_multiplier: 3.0,
                bias: 1e-12,
            },
        )
        .unwrap();
        assert!(c.pass, "{}", c.max_diff);
    }

    #[test]
    fn detects_disagreement_and_incompatibility() {
        let a = grid(|_, _| 0.0, 5);
        let b = grid(|_, _| 0.1, 5);
        assert!(!compare(&a, &b, &TolerancePolicy::default()).unwrap().pass);
        let narrow = GridFunction::from_fn(
            vec![0.0, 1.0],
            GridFunction::uniform_nodes(0.0, 1.0, 3),
            GridMeta::default(),
            |_, _| 0.0,
        );
        assert!(matches!(
            compare(&a, &narrow, &TolerancePolicy::default()),
            Err(CompareError::Incompatible(_))
        ));
    }
}
