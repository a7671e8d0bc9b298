use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::{Error, Result};

/// Principal-axis rotation fitted on training instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// Kept components, one unit-length row each, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Standard deviation along each kept component.
    pub stddev: Vec<f64>,
    pub reduce: bool,
}

const SD_KEEP: f64 = 1.0 - 1e-9;

impl PcaTransform {
    /// With `reduce`, components whose standard deviation is below 1 are
    /// dropped (at least one is always kept).
    pub fn fit(x: &Matrix, reduce: bool) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::domain("PCA needs at least two samples"));
        }
        if !x.all_finite() {
            return Err(Error::domain("non-finite feature value"));
        }
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut c = vec![0.0; d];
        for row in x.iter_rows() {
            for ((ci, v), m) in c.iter_mut().zip(row).zip(&mean) {
                *ci = v - m;
            }
            for a in 0..d {
                let ca = c[a];
                for b in 0..=a {
                    cov[(a, b)] += ca * c[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / (n as f64 - 1.0);
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(d);
        let mut stddev = Vec::with_capacity(d);
        for &j in &order {
            let sd = eig.eigenvalues[j].max(0.0).sqrt();
            if reduce && sd < SD_KEEP && !components.is_empty() {
                continue;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            components.push(v);
            stddev.push(sd);
        }
        Ok(PcaTransform {
            mean,
            components,
            stddev,
            reduce,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn transform_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::domain(format!(
                "feature dimension {} != PCA input dimension {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), m)| ci * (xi - m)).sum())
            .collect())
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Vec::with_capacity(x.rows() * self.output_dim());
        for row in x.iter_rows() {
            out.extend(self.transform_row(row)?);
        }
        Matrix::new(x.rows(), self.output_dim(), out)
    }

    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, zi) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += zi * ci;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::seed;

    fn correlated(n: usize, s: u64) -> Matrix {
        let mut rng = seed::rng(s);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                let c: f64 = StandardNormal.sample(&mut rng);
                vec![3.0 * a + 1.0, a + 0.5 * b, 0.2 * c - b, 2.0]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn covariance(z: &Matrix) -> Vec<Vec<f64>> {
        let (n, d) = (z.rows(), z.cols());
        let mean: Vec<f64> = (0..d).map(|j| z.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| {
                        z.iter_rows().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>()
                            / (n as f64 - 1.0)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn decorrelates_and_round_trips() {
        let x = correlated(500, 1);
        let p = PcaTransform::fit(&x, false).unwrap();
        let z = p.transform(&x).unwrap();
        let c = covariance(&z);
        for a in 0..c.len() {
            for b in 0..c.len() {
                if a != b {
                    assert!(c[a][b].abs() < 1e-8);
                }
            }
            assert!((c[a][a].sqrt() - p.stddev[a]).abs() < 1e-8);
        }
        for a in 0..p.components.len() {
            for b in 0..p.components.len() {
                let dot: f64 = p.components[a].iter().zip(&p.components[b]).map(|(u, v)| u * v).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        for (i, row) in x.iter_rows().enumerate() {
            let back = p.inverse_row(z.row(i));
            for (u, v) in back.iter().zip(row) {
                assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reduction_drops_small_components() {
        let x = correlated(500, 2);
        let p = PcaTransform::fit(&x, true).unwrap();
        assert!(p.stddev.iter().all(|&s| s >= SD_KEEP));
        assert!(p.output_dim() < 4);
    }

    #[test]
    fn isotropic_unit_data_keeps_everything() {
        // orthogonal design with exactly unit sample variance per axis
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..3).map(|j| if (i >> j) & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let scale = (7.0f64 / 8.0).sqrt();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let x2 = Matrix::from_rows(&scaled).unwrap();
        assert_eq!(PcaTransform::fit(&x2, true).unwrap().output_dim(), 3);
        assert_eq!(PcaTransform::fit(&x, true).unwrap().output_dim(), 3);
    }

    #[test]
    fn rank_one_data() {
        let rows: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = PcaTransform::fit(&Matrix::from_rows(&rows).unwrap(), false).unwrap();
        assert!(p.stddev[0] > 1.0);
        assert!(p.stddev[1..].iter().all(|&s| s < 1e-7));
        assert!(PcaTransform::fit(&Matrix::from_rows(&[[1.0]]).unwrap(), false).is_err());
    }
}
