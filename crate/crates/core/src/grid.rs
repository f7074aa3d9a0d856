//! Space-time grid functions: values, gradients and Monte Carlo errors on a
//! tensor grid `t_nodes x x_nodes`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point::Point;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grid table: {0}")]
    Malformed(String),
    #[error("query ({t}, {x}) outside the grid")]
    OutOfRange { t: f64, x: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub solver: String,
    pub paths: usize,
    pub dt: f64,
    pub seed: Option<u64>,
    pub n_penalty: Option<f64>,
}

/// Solution values on a tensor grid, row-major `[t index][x index]`.
///
/// `gradient` is always the declared transform of `values`
/// ([`GridFunction::refresh_gradient`]); it is zero for grids that are not
/// one-dimensional and sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub t_nodes: Vec<f64>,
    pub x_nodes: Vec<Point>,
    pub values: Vec<f64>,
    pub gradient: Vec<Point>,
    pub std_errors: Vec<f64>,
    pub low_confidence: Vec<bool>,
    pub meta: GridMeta,
}

/// Derivative at `xs[i]` of the quadratic through three neighbouring
/// nodes: central inside, one-sided at the ends. Exact for quadratics.
pub fn three_point_derivative(xs: &[f64], vs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0.0],
        2 => {
            let s = (vs[1] - vs[0]) / (xs[1] - xs[0]);
            return vec![s, s];
        }
        _ => {}
    }
    (0..n)
        .map(|i| {
            let (l, c, r) = if i == 0 {
                (0, 1, 2)
            } else if i == n - 1 {
                (n - 3, n - 2, n - 1)
            } else {
                (i - 1, i, i + 1)
            };
            let (x0, x1, x2, x) = (xs[l], xs[c], xs[r], xs[i]);
            vs[l] * (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2))
                + vs[c] * (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2))
                + vs[r] * (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1))
        })
        .collect()
}

impl GridFunction {
    pub fn new(t_nodes: Vec<f64>, x_nodes: Vec<Point>, values: Vec<f64>, meta: GridMeta) -> Self {
        assert_eq!(values.len(), t_nodes.len() * x_nodes.len());
        let n = values.len();
        let dim = x_nodes.first().map_or(1, |x| x.dim());
        let mut g = Self {
            t_nodes,
            x_nodes,
            values,
            gradient: vec![Point::zeros(dim); n],
            std_errors: vec![0.0; n],
            low_confidence: vec![false; n],
            meta,
        };
        g.refresh_gradient();
        g
    }

    pub fn from_fn(
        t_nodes: Vec<f64>,
        x_nodes: Vec<Point>,
        meta: GridMeta,
        f: impl Fn(f64, &Point) -> f64,
    ) -> Self {
        let values = t_nodes
            .iter()
            .flat_map(|&t| x_nodes.iter().map(move |x| (t, *x)))
            .map(|(t, x)| f(t, &x))
            .collect();
        Self::new(t_nodes, x_nodes, values, meta)
    }

    /// Uniform 1-D nodes on `[a, b]`.
    pub fn uniform_nodes(a: f64, b: f64, count: usize) -> Vec<Point> {
        assert!(count >= 2);
        let h = (b - a) / (count - 1) as f64;
        (0..count)
            .map(|j| Point::scalar(if j == count - 1 { b } else { a + j as f64 * h }))
            .collect()
    }

    pub fn uniform_times(t0: f64, t1: f64, count: usize) -> Vec<f64> {
        assert!(count >= 1);
        if count == 1 {
            return vec![t0];
        }
        let h = (t1 - t0) / (count - 1) as f64;
        (0..count)
            .map(|i| {
                if i == count - 1 {
                    t1
                } else {
                    t0 + i as f64 * h
                }
            })
            .collect()
    }

    pub fn nt(&self) -> usize {
        self.t_nodes.len()
    }

    pub fn nx(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn dimension(&self) -> usize {
        self.x_nodes.first().map_or(1, |x| x.dim())
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nx() + j
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        &self.values[i * self.nx()..(i + 1) * self.nx()]
    }

    /// 1-D coordinates of the spatial nodes, if the grid is 1-D and sorted.
    pub fn x_coords(&self) -> Option<Vec<f64>> {
        if self.dimension() != 1 {
            return None;
        }
        let xs: Vec<f64> = self.x_nodes.iter().map(|p| p.x()).collect();
        if xs.windows(2).all(|w| w[1] > w[0]) {
            Some(xs)
        } else {
            None
        }
    }

    /// Recomputes `gradient` from `values` by [`three_point_derivative`].
    pub fn refresh_gradient(&mut self) {
        let dim = self.dimension();
        let Some(xs) = self.x_coords() else {
            self.gradient.fill(Point::zeros(dim));
            return;
        };
        for i in 0..self.nt() {
            let d = three_point_derivative(&xs, self.slice(i));
            for (j, v) in d.into_iter().enumerate() {
                let k = self.index(i, j);
                self.gradient[k] = Point::scalar(v);
            }
        }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_std_err(&self) -> f64 {
        self.std_errors.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// Bilinear interpolation of `(u, du/dx)` on a 1-D sorted grid; times
    /// and points outside the grid are clamped to it.
    pub fn interpolate(&self, t: f64, x: f64) -> (f64, f64) {
        let (i, wt) = bracket(&self.t_nodes, t);
        let xs_first = self.x_nodes[0].x();
        let nx = self.nx();
        let (j, wx) = if nx == 1 {
            (0, 0.0)
        } else {
            let h = (self.x_nodes[nx - 1].x() - xs_first) / (nx - 1) as f64;
            let uniform = self
                .x_nodes
                .iter()
                .enumerate()
                .all(|(k, p)| (p.x() - (xs_first + k as f64 * h)).abs() <= 1e-9 * h);
            if uniform {
                let s = ((x - xs_first) / h).clamp(0.0, (nx - 1) as f64);
                let j = (s.floor() as usize).min(nx - 2);
                (j, s - j as f64)
            } else {
                let xs: Vec<f64> = self.x_nodes.iter().map(|p| p.x()).collect();
                bracket(&xs, x)
            }
        };
        let at = |arr: &dyn Fn(usize) -> f64, i: usize| {
            if nx == 1 {
                arr(self.index(i, 0))
            } else {
                arr(self.index(i, j)) * (1.0 - wx) + arr(self.index(i, j + 1)) * wx
            }
        };
        let val = |k: usize| self.values[k];
        let grad = |k: usize| self.gradient[k].x();
        let mix = |f: &dyn Fn(usize) -> f64| {
            if wt == 0.0 || i + 1 >= self.nt() {
                at(f, i)
            } else {
                at(f, i) * (1.0 - wt) + at(f, i + 1) * wt
            }
        };
        (mix(&val), mix(&grad))
    }

    /// CSV with columns `t, x, u, z, se` (1-D) or `t, x1.., u, z1.., se`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GridError> {
        let dim = self.dimension();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        if dim == 1 {
            header.extend(["x".into(), "u".into(), "z".into()]);
        } else {
            header.extend((1..=dim).map(|k| format!("x{k}")));
            header.push("u".into());
            header.extend((1..=dim).map(|k| format!("z{k}")));
        }
        header.push("se".into());
        wr.write_record(&header)?;
        for i in 0..self.nt() {
            for j in 0..self.nx() {
                let k = self.index(i, j);
                let mut row = vec![fmt(self.t_nodes[i])];
                row.extend(self.x_nodes[j].as_slice().iter().map(|v| fmt(*v)));
                row.push(fmt(self.values[k]));
                row.extend(self.gradient[k].as_slice().iter().map(|v| fmt(*v)));
                row.push(fmt(self.std_errors[k]));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads a table written by [`GridFunction::write_csv`]. Gradients are
    /// taken from the file.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, GridError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let t_col = col("t").ok_or_else(|| GridError::Malformed("missing t".into()))?;
        let u_col = col("u").ok_or_else(|| GridError::Malformed("missing u".into()))?;
        let se_col = col("se").ok_or_else(|| GridError::Malformed("missing se".into()))?;
        let (x_cols, z_cols): (Vec<usize>, Vec<usize>) = if let Some(x) = col("x") {
            (vec![x], col("z").into_iter().collect())
        } else {
            let xs: Vec<usize> = (1..=3).filter_map(|k| col(&format!("x{k}"))).collect();
            let zs: Vec<usize> = (1..=3).filter_map(|k| col(&format!("z{k}"))).collect();
            (xs, zs)
        };
        if x_cols.is_empty() {
            return Err(GridError::Malformed("missing x columns".into()));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64, GridError> {
                rec.get(c)
                    .ok_or_else(|| GridError::Malformed("short row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| GridError::Malformed(e.to_string()))
            };
            let x: Vec<f64> = x_cols.iter().map(|&c| num(c)).collect::<Result<_, _>>()?;
            let z: Vec<f64> = z_cols.iter().map(|&c| num(c)).collect::<Result<_, _>>()?;
            rows.push((
                num(t_col)?,
                Point::from_slice(&x),
                num(u_col)?,
                z,
                num(se_col)?,
            ));
        }
        let mut t_nodes: Vec<f64> = Vec::new();
        for r in &rows {
            if t_nodes.last() != Some(&r.0) {
                t_nodes.push(r.0);
            }
        }
        if t_nodes.is_empty() || rows.len() % t_nodes.len() != 0 {
            return Err(GridError::Malformed(
                "rows do not form a tensor grid".into(),
            ));
        }
        let nx = rows.len() / t_nodes.len();
        let x_nodes: Vec<Point> = rows[..nx].iter().map(|r| r.1).collect();
        for (k, r) in rows.iter().enumerate() {
            if r.0 != t_nodes[k / nx] || r.1 != x_nodes[k % nx] {
                return Err(GridError::Malformed(format!(
                    "row {k} breaks the grid order"
                )));
            }
        }
        let dim = x_nodes[0].dim();
        Ok(Self {
            t_nodes,
            x_nodes,
            values: rows.iter().map(|r| r.2).collect(),
            gradient: rows
                .iter()
                .map(|r| {
                    if r.3.len() == dim {
                        Point::from_slice(&r.3)
                    } else {
                        Point::zeros(dim)
                    }
                })
                .collect(),
            std_errors: rows.iter().map(|r| r.4).collect(),
            low_confidence: vec![false; rows.len()],
            meta: GridMeta::default(),
        })
    }
}

/// Shortest representation that round-trips.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Index and weight with `t = (1 - w) ts[i] + w ts[i+1]`, clamped.
fn bracket(ts: &[f64], t: f64) -> (usize, f64) {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_grid() -> GridFunction {
        let ts = GridFunction::uniform_times(0.0, 1.0, 3);
        let xs = GridFunction::uniform_nodes(-1.0, 1.0, 9);
        GridFunction::from_fn(ts, xs, GridMeta::default(), |t, x| {
            (1.0 + t) * x.x() * x.x()
        })
    }

    #[test]
    fn gradient_is_exact_for_quadratics() {
        let g = quad_grid();
        for i in 0..g.nt() {
            for j in 0..g.nx() {
                let k = g.index(i, j);
                let exact = 2.0 * (1.0 + g.t_nodes[i]) * g.x_nodes[j].x();
                assert!((g.gradient[k].x() - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_is_recomputable() {
        let g = quad_grid();
        let mut h = g.clone();
        h.gradient.iter_mut().for_each(|p| *p = Point::scalar(9.0));
        h.refresh_gradient();
        assert_eq!(g, h);
    }

    #[test]
    fn csv_round_trip() {
        let mut g = quad_grid();
        g.std_errors[3] = 0.125;
        let s = g.to_csv_string();
        assert!(s.starts_with("t,x,u,z,se\n"));
        let back = GridFunction::read_csv(s.as_bytes()).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!(back.gradient, g.gradient);
        assert_eq!(back.std_errors, g.std_errors);
        assert_eq!(back.x_nodes, g.x_nodes);
    }

    #[test]
    fn interpolation_hits_nodes_and_midpoints() {
        let g = quad_grid();
        let (u, _) = g.interpolate(0.5, 0.25);
        assert!((u - g.value(1, 5)).abs() < 1e-15);
        let (m, _) = g.interpolate(0.5, 0.125);
        assert!((m - 0.5 * (g.value(1, 4) + g.value(1, 5))).abs() < 1e-15);
        let (tm, _) = g.interpolate(0.25, 0.25);
        assert!((tm - 0.5 * (g.value(0, 5) + g.value(1, 5))).abs() < 1e-15);
    }

    #[test]
    fn rejects_ragged_tables() {
        let bad = "t,x,u,z,se\n0,0,1,0,0\n0,1,1,0,0\n1,0,1,0,0\n";
        assert!(GridFunction::read_csv(bad.as_bytes()).is_err());
    }
}
