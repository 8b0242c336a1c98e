//! Small dense helpers shared by the estimator and simulator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number ceiling for explicit small-matrix inverses.
pub const COND_MAX: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a small symmetric positive-definite matrix with a
/// condition-number guard.
pub fn guarded_spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min > COND_MAX {
        let cond = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::SingularMeasurement { cond });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularMeasurement { cond: f64::INFINITY })
}

/// Symmetric square-root factor `L` with `L L^T = m`, tolerant of rank
/// deficiency (negative round-off eigenvalues are clipped to zero).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample mean and covariance of a set of vectors, with the standard error
/// of every mean and covariance entry. Summation is compensated so results
/// do not depend on accumulation order beyond round-off.
#[derive(Debug, Clone)]
pub struct EnsembleMoments {
    pub count: usize,
    pub mean: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub covariance_se: DMatrix<f64>,
}

impl EnsembleMoments {
    pub fn from_samples(samples: &[DVector<f64>]) -> Self {
        let count = samples.len();
        assert!(count >= 2, "need at least two samples");
        let n = samples[0].len();
        let nf = count as f64;

        let mean = DVector::from_fn(n, |i, _| {
            let mut acc = CompensatedSum::default();
            samples.iter().for_each(|s| acc.add(s[i]));
            acc.value() / nf
        });

        let mut covariance = DMatrix::zeros(n, n);
        let mut covariance_se = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = CompensatedSum::default();
                let mut acc2 = CompensatedSum::default();
                for s in samples {
                    let p = (s[i] - mean[i]) * (s[j] - mean[j]);
                    acc.add(p);
                    acc2.add(p * p);
                }
                let c = acc.value() / (nf - 1.0);
                let second = acc2.value() / nf;
                let centred = acc.value() / nf;
                covariance[(i, j)] = c;
                covariance_se[(i, j)] = ((second - centred * centred).max(0.0) / nf).sqrt();
            }
        }
        let mean_se = DVector::from_fn(n, |i, _| (covariance[(i, i)] / nf).sqrt());

        EnsembleMoments { count, mean, mean_se, covariance, covariance_se }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let mut acc = CompensatedSum::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            acc.add(x);
        }
        assert_eq!(acc.value(), 2.0);
    }

    #[test]
    fn psd_factor_handles_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&m);
        assert!((&l * l.transpose() - m).amax() < 1e-12);
    }

    #[test]
    fn guarded_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(guarded_spd_inverse(&m), Err(Error::SingularMeasurement { .. })));
    }

    #[test]
    fn ensemble_moments_of_fixed_samples() {
        let samples: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&x| DVector::from_vec(vec![x, 2.0 * x]))
            .collect();
        let m = EnsembleMoments::from_samples(&samples);
        assert!((m.mean[0] - 2.5).abs() < 1e-15);
        assert!((m.covariance[(0, 0)] - 5.0 / 3.0).abs() < 1e-14);
        assert!((m.covariance[(0, 1)] - 10.0 / 3.0).abs() < 1e-14);
    }
}
