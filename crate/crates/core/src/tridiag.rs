//! Tridiagonal matrices and the Thomas algorithm.

/// Square tridiagonal matrix. `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("zero pivot in tridiagonal solve at row {row}")]
pub struct ZeroPivot {
    pub row: usize,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.lower[i].abs();
                }
                if i + 1 < n {
                    s += self.upper[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// Thomas algorithm without pivoting; stable for the diagonally dominant
    /// and symmetric positive definite systems assembled in this crate.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, ZeroPivot> {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom == 0.0 {
            return Err(ZeroPivot { row: 0 });
        }
        c[0] = if n > 1 { self.upper[0] / denom } else { 0.0 };
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i] * c[i - 1];
            if denom == 0.0 {
                return Err(ZeroPivot { row: i });
            }
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) / denom;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    /// Estimate of the 2-norm condition number of a symmetric positive
    /// definite matrix: power iteration for the largest eigenvalue, inverse
    /// iteration for the smallest.
    pub fn condition_estimate(&self) -> Result<f64, ZeroPivot> {
        let n = self.len();
        let start: Vec<f64> = (0..n)
            .map(|i| {
                0.5 + ((i as f64 + 1.0) * 12.9898).sin().abs() * 0.5 * (-1f64).powi(i as i32 / 3)
            })
            .collect();
        let normalize = |v: &mut Vec<f64>| {
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= s);
            s
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut v = start.clone();
        normalize(&mut v);
        let mut lmax = 0.0;
        for _ in 0..200 {
            let mut w = self.mul_vec(&v);
            lmax = dot(&w, &v);
            normalize(&mut w);
            v = w;
        }
        let mut v = start;
        normalize(&mut v);
        let mut inv_lmin = 0.0;
        for _ in 0..50 {
            let mut w = self.solve(&v)?;
            inv_lmin = dot(&w, &v);
            normalize(&mut w);
            v = w;
        }
        Ok(lmax * inv_lmin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let m = Tridiagonal {
            lower: vec![0.0, -1.0, -1.0],
            diag: vec![2.0, 2.0, 2.0],
            upper: vec![-1.0, -1.0, 0.0],
        };
        let x = m.solve(&[1.0, 0.0, 1.0]).unwrap();
        for (a, b) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn condition_of_laplacian() {
        // eigenvalues 2 - 2cos(k pi/(n+1))
        let n = 20;
        let mut m = Tridiagonal::zeros(n);
        for i in 0..n {
            m.diag[i] = 2.0;
            m.lower[i] = -1.0;
            m.upper[i] = -1.0;
        }
        let h = std::f64::consts::PI / (n as f64 + 1.0);
        let exact = (2.0 - 2.0 * (n as f64 * h).cos()) / (2.0 - 2.0 * h.cos());
        let est = m.condition_estimate().unwrap();
        assert!((est - exact).abs() / exact < 1e-2, "{est} vs {exact}");
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = Tridiagonal {
            lower: vec![0.0, 0.0],
            diag: vec![0.0, 1.0],
            upper: vec![1.0, 0.0],
        };
        assert_eq!(m.solve(&[1.0, 1.0]), Err(ZeroPivot { row: 0 }));
    }
}
