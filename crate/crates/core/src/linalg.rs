//! Small dense linear algebra on row-major `Vec<f64>` matrices.

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a` (n x n, row-major). Returns `None` if a pivot is not
    /// strictly positive.
    pub fn new(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Factors `a + jitter * I`, escalating jitter by 10x from `start` up to `max`.
    pub fn with_jitter(a: &[f64], n: usize, start: f64, max: f64) -> Option<(Self, f64)> {
        if let Some(c) = Self::new(a, n) {
            return Some((c, 0.0));
        }
        let mut jitter = start;
        while jitter <= max * (1.0 + 1e-12) {
            let mut b = a.to_vec();
            for i in 0..n {
                b[i * n + i] += jitter;
            }
            if let Some(c) = Self::new(&b, n) {
                return Some((c, jitter));
            }
            jitter *= 10.0;
        }
        None
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        y
    }

    /// Solves `L^T x = y`.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }
}

/// Weighted least squares with intercept: minimizes
/// `sum_i w_i (y_i - b - x_i . beta)^2 + ridge * |beta|^2`.
/// Returns `(intercept, coefficients)`, or `None` if the normal equations are
/// singular.
pub fn weighted_least_squares(xs: &[Vec<f64>], ys: &[f64], ws: &[f64], ridge: f64) -> Option<(f64, Vec<f64>)> {
    let p = xs.first().map_or(0, Vec::len) + 1;
    let mut a = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut row = vec![0.0; p];
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        row[0] = 1.0;
        row[1..].copy_from_slice(x);
        for i in 0..p {
            rhs[i] += w * row[i] * y;
            for j in 0..p {
                a[i * p + j] += w * row[i] * row[j];
            }
        }
    }
    for i in 1..p {
        a[i * p + i] += ridge;
    }
    let chol = Cholesky::new(&a, p)?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol[0], sol[1..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let c = Cholesky::new(&a, 3).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 5.0 * 0.6);
        assert!((c.log_det() - f64::ln(det)).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(Cholesky::new(&a, 2).is_none());
        let (_, jitter) = Cholesky::with_jitter(&a, 2, 1e-8, 1e-4).unwrap();
        assert!(jitter >= 1e-8);
    }

    #[test]
    fn wls_recovers_plane() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, ((i * 7) % 5) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 + 2.0 * x[0] - 3.0 * x[1]).collect();
        let ws: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        let (b, beta) = weighted_least_squares(&xs, &ys, &ws, 0.0).unwrap();
        assert!((b - 1.5).abs() < 1e-9);
        assert!((beta[0] - 2.0).abs() < 1e-9 && (beta[1] + 3.0).abs() < 1e-9);
    }
}
