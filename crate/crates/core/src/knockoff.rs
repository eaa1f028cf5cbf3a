//! Second-order Gaussian knockoffs with the equicorrelated construction.
//!
//! Given sample moments `μ̂, Σ̂` of the features, knockoffs are drawn from
//! `X̃ | X ~ N(X - SΣ̂⁻¹(X - μ̂), 2S - SΣ̂⁻¹S)` with `S = diag(s)`. On the
//! correlation scale every `s_j` equals `min(2 λ_min(Σ̂_corr), 1)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative ridge added to the diagonal when `Σ̂` is numerically singular.
const RIDGE: f64 = 1e-8;
/// Smallest correlation-scale eigenvalue treated as positive definite.
const PD_TOL: f64 = 1e-10;

/// Fitted knockoff sampler for a fixed set of columns.
#[derive(Debug, Clone)]
pub struct GaussianKnockoffs {
    /// Columns with positive sample variance; the rest are copied through.
    active: Vec<usize>,
    q: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    s: DVector<f64>,
    /// `I - Σ̂⁻¹S`, applied on the right to row vectors `x - μ̂`.
    shrink: DMatrix<f64>,
    /// Symmetric square root of the conditional covariance.
    root: DMatrix<f64>,
}

fn column_matrix(columns: &[Vec<f64>], keep: &[usize]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, keep.len(), |i, j| columns[keep[j]][i])
}

impl GaussianKnockoffs {
    /// Estimates moments from `columns` (each of length `n`).
    pub fn fit(columns: &[Vec<f64>]) -> Result<Self> {
        let q = columns.len();
        let n = columns.first().map_or(0, |c| c.len());
        if q == 0 {
            return Err(Error::BadInput("no columns to knock off".into()));
        }
        if n < 2 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::BadInput("knockoff columns need equal lengths of at least 2".into()));
        }
        let active: Vec<usize> = (0..q)
            .filter(|&j| {
                let c = &columns[j];
                c.iter().any(|&v| v != c[0])
            })
            .collect();
        if active.is_empty() {
            return Ok(Self {
                active,
                q,
                mean: DVector::zeros(0),
                cov: DMatrix::zeros(0, 0),
                s: DVector::zeros(0),
                shrink: DMatrix::zeros(0, 0),
                root: DMatrix::zeros(0, 0),
            });
        }
        let x = column_matrix(columns, &active);
        let k = active.len();
        let mean = DVector::from_fn(k, |j, _| x.column(j).mean());
        let mut centered = x.clone();
        for j in 0..k {
            centered.column_mut(j).add_scalar_mut(-mean[j]);
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;

        let sd = DVector::from_fn(k, |j, _| cov[(j, j)].sqrt());
        let corr_of = |c: &DMatrix<f64>| DMatrix::from_fn(k, k, |a, b| c[(a, b)] / (sd[a] * sd[b]));
        let mut lambda_min = SymmetricEigen::new(corr_of(&cov)).eigenvalues.min();
        if lambda_min < PD_TOL {
            for j in 0..k {
                cov[(j, j)] *= 1.0 + RIDGE;
            }
            lambda_min = SymmetricEigen::new(corr_of(&cov)).eigenvalues.min();
            if !(lambda_min > 0.0) {
                return Err(Error::KnockoffFailure(format!(
                    "covariance singular after ridge repair (smallest eigenvalue {lambda_min:e})"
                )));
            }
        }
        let s_corr = (2.0 * lambda_min).min(1.0);
        let s = DVector::from_fn(k, |j, _| s_corr * sd[j] * sd[j]);
        let inv = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::KnockoffFailure("covariance is not positive definite".into()))?
            .inverse();
        let s_mat = DMatrix::from_diagonal(&s);
        let inv_s = &inv * &s_mat;
        let shrink = DMatrix::identity(k, k) - &inv_s;
        let mut cond = &s_mat * 2.0 - &s_mat * &inv_s;
        cond = (&cond + cond.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cond);
        let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        Ok(Self {
            active,
            q,
            mean,
            cov,
            s,
            shrink,
            root,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.q
    }

    /// `s_j` for column `j` (zero for constant columns).
    pub fn s(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        for (k, &j) in self.active.iter().enumerate() {
            out[j] = self.s[k];
        }
        out
    }

    /// Correlation-scale `s_j / Σ̂_jj`.
    pub fn s_corr(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        for (k, &j) in self.active.iter().enumerate() {
            out[j] = self.s[k] / self.cov[(k, k)];
        }
        out
    }

    /// Fitted covariance (after any ridge repair) of the non-constant columns.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Knockoff copies of `columns`, which must have the fitted column count.
    pub fn sample<R: Rng + ?Sized>(&self, columns: &[Vec<f64>], rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if columns.len() != self.q {
            return Err(Error::BadInput(format!(
                "knockoff model fitted on {} columns, given {}",
                self.q,
                columns.len()
            )));
        }
        let mut out: Vec<Vec<f64>> = columns.to_vec();
        if self.active.is_empty() {
            return Ok(out);
        }
        let n = columns[0].len();
        let k = self.active.len();
        let x = column_matrix(columns, &self.active);
        let mut centered = x;
        for j in 0..k {
            centered.column_mut(j).add_scalar_mut(-self.mean[j]);
        }
        let mut noise = DMatrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                noise[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let draw = centered * &self.shrink + noise * &self.root;
        for (col, &j) in self.active.iter().enumerate() {
            for i in 0..n {
                out[j][i] = draw[(i, col)] + self.mean[col];
            }
        }
        Ok(out)
    }
}

/// Fits on `columns` and returns one knockoff draw of them.
pub fn gaussian_knockoffs<R: Rng + ?Sized>(columns: &[Vec<f64>], rng: &mut R) -> Result<Vec<Vec<f64>>> {
    GaussianKnockoffs::fit(columns)?.sample(columns, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn normal_columns(n: usize, q: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[]);
        (0..q).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn single_column_is_an_independent_copy() {
        let x = normal_columns(5000, 1, 1);
        let model = GaussianKnockoffs::fit(&x).unwrap();
        assert!((model.s_corr()[0] - 1.0).abs() < 1e-12);
        let k = model.sample(&x, &mut stream(2, &[])).unwrap();
        let se = 1.0 / (5000f64).sqrt();
        assert!(corr(&x[0], &k[0]).abs() < 3.0 * se);
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        assert!((var(&k[0]) / var(&x[0]) - 1.0).abs() < 0.06);
    }

    #[test]
    fn duplicate_columns_reproduce_themselves() {
        let mut x = normal_columns(400, 2, 3);
        x[1] = x[0].clone();
        let model = GaussianKnockoffs::fit(&x).unwrap();
        assert!(model.s_corr().iter().all(|&s| s < 1e-6));
        let k = model.sample(&x, &mut stream(4, &[])).unwrap();
        for j in 0..2 {
            for i in 0..400 {
                assert!((k[j][i] - x[j][i]).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn constant_columns_pass_through() {
        let mut x = normal_columns(100, 3, 5);
        x[1] = vec![2.5; 100];
        let k = gaussian_knockoffs(&x, &mut stream(6, &[])).unwrap();
        assert_eq!(k[1], x[1]);
        assert_ne!(k[0], x[0]);
    }

    #[test]
    fn covariance_error_shrinks_with_n() {
        let dev = |n: usize| {
            let mut x = normal_columns(n, 3, 7);
            for i in 0..n {
                x[1][i] = 0.6 * x[0][i] + 0.8 * x[1][i];
            }
            let model = GaussianKnockoffs::fit(&x).unwrap();
            let k = model.sample(&x, &mut stream(8, &[])).unwrap();
            let kc = GaussianKnockoffs::fit(&k).unwrap();
            (model.covariance() - kc.covariance()).abs().max()
        };
        assert!(dev(10_000) < dev(1_000));
    }

    #[test]
    fn same_stream_same_draw() {
        let x = normal_columns(50, 2, 9);
        let a = gaussian_knockoffs(&x, &mut stream(1, &[1])).unwrap();
        let b = gaussian_knockoffs(&x, &mut stream(1, &[1])).unwrap();
        assert_eq!(a, b);
    }
}
