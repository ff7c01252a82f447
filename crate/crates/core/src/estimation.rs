//! Weighted least-squares state estimation and chi-squared bad-data detection.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chi2;
use crate::error::{check_dim, Error, Result};
use crate::grid_model::{GridModel, MeasurementVector};
use crate::linalg::{Matrix, Qr};

/// Default significance level of the bad-data test.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub x_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
    /// Weighted residual cost `‖R^(-1/2)(z - ẑ)‖²`.
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BddVerdict {
    pub cost: f64,
    pub threshold: f64,
    pub degrees_of_freedom: usize,
    pub alarm: bool,
}

/// Reusable WLS solver: factors `R^(-1/2) H` once by Householder QR.
#[derive(Clone, Debug)]
pub struct WlsEstimator<'a> {
    model: &'a GridModel,
    qr: Qr,
    inv_sigma: Vec<f64>,
}

impl<'a> WlsEstimator<'a> {
    pub fn new(model: &'a GridModel) -> Result<Self> {
        let inv_sigma: Vec<f64> = model.sigmas().iter().map(|s| 1.0 / s).collect();
        let h = model.h();
        let mut weighted = Matrix::zeros(h.rows(), h.cols());
        for (i, w) in inv_sigma.iter().enumerate() {
            for (o, v) in weighted.row_mut(i).iter_mut().zip(h.row(i)) {
                *o = w * v;
            }
        }
        let qr = Qr::factor(&weighted, 1e-12);
        if qr.rank() < h.cols() {
            return Err(Error::SingularNormalEquations);
        }
        Ok(Self { model, qr, inv_sigma })
    }

    pub fn estimate(&self, z: &[f64]) -> Result<StateEstimate> {
        check_dim(self.model.n_z(), z.len())?;
        let b: Vec<f64> = z.iter().zip(&self.inv_sigma).map(|(v, w)| v * w).collect();
        let x_hat = self.qr.solve_least_squares(&b);
        let z_hat = self.model.h().mul_vec(&x_hat);
        let cost = z
            .iter()
            .zip(&z_hat)
            .zip(&self.inv_sigma)
            .map(|((zi, zh), w)| {
                let r = (zi - zh) * w;
                r * r
            })
            .sum();
        Ok(StateEstimate { x_hat, z_hat, cost })
    }

    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let est = self.estimate(z)?;
        Ok(z.iter().zip(&est.z_hat).map(|(a, b)| a - b).collect())
    }

    /// Degrees of freedom of the residual cost, `n_z - n_x`.
    pub fn dof(&self) -> usize {
        self.model.n_z() - self.model.n_x()
    }
}

/// `x̂ = (HᵀR⁻¹H)⁻¹HᵀR⁻¹z` together with `ẑ = Hx̂` and the residual cost.
pub fn wls_estimate(z: &MeasurementVector, model: &GridModel) -> Result<StateEstimate> {
    WlsEstimator::new(model)?.estimate(&z.values)
}

/// `r = z - Hx̂`.
pub fn residual(z: &MeasurementVector, model: &GridModel) -> Result<Vec<f64>> {
    WlsEstimator::new(model)?.residual(&z.values)
}

/// Chi-squared test of the residual cost at the given significance.
pub fn bdd_test(cost: f64, dof: usize, significance: f64) -> Result<BddVerdict> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidArgument(format!("significance {significance} not in (0, 1)")));
    }
    if dof == 0 {
        return Err(Error::InvalidArgument("bad-data test needs at least one degree of freedom".into()));
    }
    let threshold = chi2::chi2_inv(1.0 - significance, dof);
    Ok(BddVerdict {
        cost,
        threshold,
        degrees_of_freedom: dof,
        alarm: cost > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::tests::triangle_model;
    use crate::grid_model::{measure, StateVector};
    use crate::linalg::Lu;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column_model() -> GridModel {
        GridModel::from_matrix(Matrix::from_rows(&[[1.0], [1.0]]), vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_model_interpolates() {
        let m = GridModel::from_matrix(Matrix::identity(3), vec![1.0; 3]).unwrap();
        let est = wls_estimate(&MeasurementVector::new(vec![0.5, -2.0, 7.0]), &m).unwrap();
        assert_eq!(est.x_hat.len(), 3);
        for (a, b) in est.x_hat.iter().zip([0.5, -2.0, 7.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(est.cost < 1e-28);
    }

    #[test]
    fn single_column_hand_solution() {
        let z = MeasurementVector::new(vec![1.0, 3.0]);
        let est = wls_estimate(&z, &column_model()).unwrap();
        assert!((est.x_hat[0] - 2.0).abs() < 1e-14);
        assert!((est.cost - 2.0).abs() < 1e-13);
        let r = residual(&z, &column_model()).unwrap();
        assert!((r[0] + 1.0).abs() < 1e-14 && (r[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_data_is_recovered() {
        let m = triangle_model();
        let x = StateVector(vec![0.8, -0.35]);
        let z = measure(&m, &x, None).unwrap();
        let est = wls_estimate(&z, &m).unwrap();
        for (a, b) in est.x_hat.iter().zip(&x.0) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(est.cost <= 1e-16);
    }

    #[test]
    fn residual_matches_explicit_projector() {
        // r = (I - H (HᵀR⁻¹H)⁻¹ HᵀR⁻¹) z, formed explicitly as an independent route
        let m = triangle_model();
        let h = m.h();
        let w: Vec<f64> = m.variances().iter().map(|v| 1.0 / v).collect();
        let mut hw = h.transpose();
        for i in 0..hw.rows() {
            for j in 0..hw.cols() {
                hw[(i, j)] *= w[j];
            }
        }
        let g = hw.matmul(h);
        let ginv = Lu::factor(&g, 1e-14).unwrap().inverse();
        let k = h.matmul(&ginv).matmul(&hw);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = WlsEstimator::new(&m).unwrap();
        for _ in 0..50 {
            let z: Vec<f64> = (0..m.n_z()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let kz = k.mul_vec(&z);
            let r = est.residual(&z).unwrap();
            for ((ri, zi), kzi) in r.iter().zip(&z).zip(&kz) {
                assert!((ri - (zi - kzi)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stealth_and_orthogonality() {
        let m = triangle_model();
        let est = WlsEstimator::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let z: Vec<f64> = (0..m.n_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..m.n_x()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let hc = m.apply(&c).unwrap();
            let za: Vec<f64> = z.iter().zip(&hc).map(|(a, b)| a + b).collect();
            let r0 = est.residual(&z).unwrap();
            let r1 = est.residual(&za).unwrap();
            for (a, b) in r0.iter().zip(&r1) {
                assert!((a - b).abs() <= 1e-10);
            }
            // HᵀR⁻¹r = 0
            let wr: Vec<f64> = r0.iter().zip(m.variances()).map(|(r, v)| r / v).collect();
            let g = m.h().tr_mul_vec(&wr);
            assert!(g.iter().all(|v| v.abs() < 1e-9), "{g:?}");
        }
    }

    #[test]
    fn gradient_vanishes_at_estimate() {
        let m = triangle_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..m.n_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x_hat = WlsEstimator::new(&m).unwrap().estimate(&z).unwrap().x_hat;
        let f = |x: &[f64]| -> f64 {
            let hx = m.h().mul_vec(x);
            z.iter().zip(&hx).zip(m.variances()).map(|((a, b), v)| (a - b) * (a - b) / v).sum()
        };
        let scale = f(&x_hat).max(1.0);
        for k in 0..m.n_x() {
            let h = 1e-6;
            let mut xp = x_hat.clone();
            let mut xm = x_hat.clone();
            xp[k] += h;
            xm[k] -= h;
            let g = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(g.abs() / scale <= 1e-6, "gradient component {g}");
        }
    }

    #[test]
    fn bdd_thresholds_and_verdicts() {
        let v = bdd_test(0.0, 3, 0.05).unwrap();
        assert!(!v.alarm);
        let v = bdd_test(2.0, 1, 0.05).unwrap();
        assert!((v.threshold - 3.841).abs() < 1e-3);
        assert!(!v.alarm);
        assert!(bdd_test(4.0, 1, 0.05).unwrap().alarm);
        assert!(bdd_test(1.0, 1, 0.0).is_err());
        assert!(bdd_test(1.0, 1, 1.0).is_err());
        assert!(bdd_test(1.0, 0, 0.05).is_err());
    }

    #[test]
    fn rejects_wrong_measurement_length() {
        let m = triangle_model();
        let est = WlsEstimator::new(&m).unwrap();
        assert!(matches!(est.estimate(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
