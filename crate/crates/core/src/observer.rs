//! The harmonic-oscillator observer and the reduced plant-observer model.
//!
//! With the coupling Hamiltonian `z_p * beta^T x_o` the plant output `z_p`
//! is a conserved quantity, so the pair `(z_p, x_o)` obeys linear
//! equations
//!
//! ```text
//! dz_p = 0
//! dx_o = (-(kappa/2) I + 2 omega_o J) x_o dt + 2 J beta z_p dt - sqrt(kappa) dw
//! dy_o = sqrt(kappa) x_o dt + dw
//! ```
//!
//! At steady state `dy_o = e z_p dt + dw_out` with a white `dw_out`, and the
//! homodyne row `K = e^T / |e|^2` is the minimum-norm row with `K e = 1`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, RowVector2, Vector2, Vector3};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::spin::{qubit_moments, PlantSpec};

/// The symplectic matrix `[[0, 1], [-1, 0]]`.
pub fn symplectic_j() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// Oscillator observer data.
///
/// `omega_o = 0` is accepted; `kappa` must be positive and `beta` nonzero.
/// The initial observer mean and symmetrized covariance default to zero and
/// the identity (the oscillator vacuum in these quadrature units).
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverSpec {
    omega_o: f64,
    kappa: f64,
    beta: Vector2<f64>,
    initial_mean: Vector2<f64>,
    initial_covariance: Matrix2<f64>,
}

impl ObserverSpec {
    pub fn new(omega_o: f64, kappa: f64, beta: Vector2<f64>) -> Result<Self> {
        if !(omega_o.is_finite() && omega_o >= 0.0) {
            return Err(invalid("observer.omega_o", format!("must be finite and >= 0, got {omega_o}")));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(invalid("observer.kappa", format!("must be finite and > 0, got {kappa}")));
        }
        if beta.iter().any(|v| !v.is_finite()) || beta.norm() == 0.0 {
            return Err(invalid("observer.beta", "coupling direction must be finite and nonzero"));
        }
        Ok(ObserverSpec {
            omega_o,
            kappa,
            beta,
            initial_mean: Vector2::zeros(),
            initial_covariance: Matrix2::identity(),
        })
    }

    pub fn with_initial_state(mut self, mean: Vector2<f64>, covariance: Matrix2<f64>) -> Result<Self> {
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("observer.initial", "non-finite entry"));
        }
        if (covariance - covariance.transpose()).amax() > 1e-12 {
            return Err(invalid("observer.sigma_o0", "covariance must be symmetric"));
        }
        let eig = covariance.symmetric_eigen().eigenvalues;
        if eig.min() < -1e-10 {
            return Err(invalid("observer.sigma_o0", "covariance must be positive semidefinite"));
        }
        self.initial_mean = mean;
        self.initial_covariance = covariance;
        Ok(self)
    }

    pub fn omega_o(&self) -> f64 {
        self.omega_o
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn beta(&self) -> &Vector2<f64> {
        &self.beta
    }

    pub fn initial_mean(&self) -> &Vector2<f64> {
        &self.initial_mean
    }

    pub fn initial_covariance(&self) -> &Matrix2<f64> {
        &self.initial_covariance
    }

    /// Observer drift `-(kappa/2) I + 2 omega_o J`.
    pub fn drift(&self) -> Matrix2<f64> {
        Matrix2::identity() * (-0.5 * self.kappa) + symplectic_j() * (2.0 * self.omega_o)
    }

    /// Forcing column `2 J beta` multiplying `z_p`.
    pub fn forcing(&self) -> Vector2<f64> {
        symplectic_j() * self.beta * 2.0
    }
}

/// Observer QSDE coefficients from the Hamiltonian matrix `R_o` and the
/// coupling matrix `W_o`: `A_o = 2 J R_o + (1/2) J W_o^T J W_o`,
/// `B_o = J W_o^T J`, `C_o = W_o`.
pub fn realizability_matrices(
    r_o: &Matrix2<f64>,
    w_o: &Matrix2<f64>,
) -> Result<(Matrix2<f64>, Matrix2<f64>, Matrix2<f64>)> {
    if (r_o - r_o.transpose()).amax() > 1e-12 {
        return Err(invalid("r_o", "Hamiltonian matrix must be symmetric"));
    }
    let j = symplectic_j();
    let a_o = j * r_o * 2.0 + j * w_o.transpose() * j * w_o * 0.5;
    let b_o = j * w_o.transpose() * j;
    Ok((a_o, b_o, *w_o))
}

/// Map `M` with `<x_o>_ss = M beta z_p`:
/// `M = 4 / (kappa^2 + 16 omega_o^2) [[kappa, 4 omega_o], [-4 omega_o, kappa]] J`.
pub fn steady_state_mean(observer: &ObserverSpec) -> Matrix2<f64> {
    let k = observer.kappa;
    let w = observer.omega_o;
    let scale = 4.0 / (k * k + 16.0 * w * w);
    Matrix2::new(k, 4.0 * w, -4.0 * w, k) * symplectic_j() * scale
}

/// `-2 A~^{-1} J beta`, the steady-state observer mean per unit `z_p`
/// computed through the drift inverse.
pub fn steady_state_response(observer: &ObserverSpec) -> Vector2<f64> {
    let inv = observer
        .drift()
        .try_inverse()
        .expect("observer drift is invertible for kappa > 0");
    inv * symplectic_j() * observer.beta * -2.0
}

/// Output bias `e = -2 sqrt(kappa) A~^{-1} J beta`, the steady-state DC
/// level of `dy_o` per unit `z_p`.
pub fn output_bias(observer: &ObserverSpec) -> Vector2<f64> {
    steady_state_response(observer) * observer.kappa.sqrt()
}

/// Minimum-norm homodyne row satisfying `K e = 1`.
pub fn optimal_gain(e: &Vector2<f64>) -> Result<RowVector2<f64>> {
    let n2 = e.norm_squared();
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::DegenerateCoupling);
    }
    Ok(e.transpose() / n2)
}

/// Input-output map of the shifted observer, `T(s) = I - kappa (sI - A~)^{-1}`.
pub fn closed_loop_transfer(observer: &ObserverSpec, s: Complex64) -> Result<Matrix2<Complex64>> {
    let a = observer.drift().map(Complex64::from);
    let resolvent = (Matrix2::identity() * s - a)
        .try_inverse()
        .ok_or(Error::SingularResolvent { re: s.re, im: s.im })?;
    if resolvent.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularResolvent { re: s.re, im: s.im });
    }
    Ok(Matrix2::identity() - resolvent * Complex64::from(observer.kappa))
}

/// Largest entry modulus of `T(j w) T(j w)^H - I` over a frequency grid.
pub fn all_pass_residual(observer: &ObserverSpec, omegas: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in omegas {
        let t = closed_loop_transfer(observer, Complex64::new(0.0, w))?;
        let r = t * t.adjoint() - Matrix2::identity();
        worst = r.iter().map(|z| z.norm()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Eigenvalues of the observer drift and whether both lie in the open left
/// half-plane.
pub fn hurwitz_check(observer: &ObserverSpec) -> (bool, [Complex64; 2]) {
    let a = observer.drift();
    let half_tr = 0.5 * a.trace();
    let disc = Complex64::from(half_tr * half_tr - a.determinant()).sqrt();
    let eig = [Complex64::from(half_tr) + disc, Complex64::from(half_tr) - disc];
    (eig.iter().all(|l| l.re < 0.0), eig)
}

/// The reduced linear model of `(z_p, x_o)` with the homodyne row `D = K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
    pub c: Matrix2x3<f64>,
    pub d: RowVector2<f64>,
    pub x0_mean: Vector3<f64>,
    pub sigma0: Matrix3<f64>,
    /// `|C_p|`, the magnitude of the two eigenvalues of `z_p`.
    pub z_p_norm: f64,
}

impl AugmentedModel {
    pub fn kappa(&self) -> f64 {
        // B = [0; -sqrt(kappa) I]
        let s = -self.b[(1, 0)];
        s * s
    }

    pub fn observer_drift(&self) -> Matrix2<f64> {
        self.a.fixed_view::<2, 2>(1, 1).into_owned()
    }

    pub fn observer_forcing(&self) -> Vector2<f64> {
        self.a.fixed_view::<2, 1>(1, 0).into_owned()
    }

    pub fn observer_noise(&self) -> Matrix2<f64> {
        self.b.fixed_view::<2, 2>(1, 0).into_owned()
    }

    pub fn observer_output(&self) -> Matrix2<f64> {
        self.c.fixed_view::<2, 2>(0, 1).into_owned()
    }
}

pub fn build_augmented(plant: &PlantSpec, observer: &ObserverSpec) -> Result<AugmentedModel> {
    let k = observer.kappa;
    let sk = k.sqrt();

    let mut a = Matrix3::zeros();
    a.fixed_view_mut::<2, 1>(1, 0).copy_from(&observer.forcing());
    a.fixed_view_mut::<2, 2>(1, 1).copy_from(&observer.drift());

    let mut b = Matrix3x2::zeros();
    b.fixed_view_mut::<2, 2>(1, 0).copy_from(&(Matrix2::identity() * -sk));

    let mut c = Matrix2x3::zeros();
    c.fixed_view_mut::<2, 2>(0, 1).copy_from(&(Matrix2::identity() * sk));

    let d = optimal_gain(&output_bias(observer))?;

    let (z_mean, z_var) = qubit_moments(plant);
    let x0_mean = Vector3::new(z_mean, observer.initial_mean[0], observer.initial_mean[1]);
    let mut sigma0 = Matrix3::zeros();
    sigma0[(0, 0)] = z_var;
    sigma0.fixed_view_mut::<2, 2>(1, 1).copy_from(&observer.initial_covariance);

    Ok(AugmentedModel { a, b, c, d, x0_mean, sigma0, z_p_norm: plant.c_p().norm() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::RowVector3;
    use proptest::prelude::*;

    fn obs(omega: f64, kappa: f64, beta: (f64, f64)) -> ObserverSpec {
        ObserverSpec::new(omega, kappa, Vector2::new(beta.0, beta.1)).unwrap()
    }

    #[test]
    fn j_is_symplectic() {
        let j = symplectic_j();
        assert_eq!(j * j, -Matrix2::identity());
        assert_eq!(j.transpose(), -j);
    }

    #[test]
    fn realizability_examples() {
        let (a, b, c) = realizability_matrices(&Matrix2::identity(), &(Matrix2::identity() * 2.0)).unwrap();
        assert_eq!(a, Matrix2::new(-2.0, 2.0, -2.0, -2.0));
        assert_eq!(b, Matrix2::identity() * -2.0);
        assert_eq!(c, Matrix2::identity() * 2.0);

        let (a, b, c) = realizability_matrices(&Matrix2::identity(), &Matrix2::zeros()).unwrap();
        assert_eq!(a, symplectic_j() * 2.0);
        assert_eq!(b, Matrix2::zeros());
        assert_eq!(c, Matrix2::zeros());

        let (a, b, c) = realizability_matrices(&Matrix2::zeros(), &Matrix2::identity()).unwrap();
        assert_eq!(a, Matrix2::identity() * -0.5);
        assert_eq!(b, -Matrix2::identity());
        assert_eq!(c, Matrix2::identity());

        assert!(realizability_matrices(&Matrix2::new(0.0, 1.0, 0.0, 0.0), &Matrix2::identity()).is_err());
    }

    #[test]
    fn realizability_reproduces_reduced_dynamics() {
        for &(w, k) in &[(0.0, 0.5), (1.0, 4.0), (2.5, 0.01), (0.3, 9.0)] {
            let o = obs(w, k, (1.0, 0.0));
            let (a, b, c) = realizability_matrices(&(Matrix2::identity() * w), &(Matrix2::identity() * k.sqrt())).unwrap();
            assert!((a - o.drift()).amax() < 1e-14);
            assert!((b + Matrix2::identity() * k.sqrt()).amax() < 1e-14);
            assert!((c - Matrix2::identity() * k.sqrt()).amax() < 1e-14);
        }
    }

    #[test]
    fn steady_state_examples() {
        let o = obs(1.0, 4.0, (1.0, 0.0));
        let x = steady_state_mean(&o) * o.beta();
        assert!((x - Vector2::new(-0.5, -0.5)).amax() < 1e-15);
        assert!((steady_state_response(&o) - x).amax() < 1e-12);

        let o = obs(0.0, 4.0, (1.0, 0.0));
        assert!((steady_state_mean(&o) * o.beta() - Vector2::new(0.0, -1.0)).amax() < 1e-15);
        assert_eq!(steady_state_mean(&o) * o.beta() * 0.0, Vector2::zeros());
    }

    #[test]
    fn output_bias_examples() {
        assert!((output_bias(&obs(0.0, 4.0, (1.0, 0.0))) - Vector2::new(0.0, -2.0)).amax() < 1e-15);
        assert!((output_bias(&obs(1.0, 4.0, (1.0, 0.0))) - Vector2::new(-1.0, -1.0)).amax() < 1e-15);
        assert!((output_bias(&obs(0.0, 1.0, (0.0, 1.0))) - Vector2::new(4.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn optimal_gain_examples() {
        assert_eq!(optimal_gain(&Vector2::new(0.0, -2.0)).unwrap(), RowVector2::new(0.0, -0.5));
        assert_eq!(optimal_gain(&Vector2::new(-1.0, -1.0)).unwrap(), RowVector2::new(-0.5, -0.5));
        assert_eq!(optimal_gain(&Vector2::zeros()), Err(Error::DegenerateCoupling));
    }

    #[test]
    fn transfer_examples() {
        for k in [0.1, 1.0, 4.0] {
            let t = closed_loop_transfer(&obs(0.0, k, (1.0, 0.0)), Complex64::from(0.0)).unwrap();
            assert!((t + Matrix2::identity()).iter().all(|z| z.norm() < 1e-14));
        }
        let t = closed_loop_transfer(&obs(1.0, 4.0, (1.0, 0.0)), Complex64::from(1e9)).unwrap();
        assert!((t - Matrix2::identity()).iter().all(|z| z.norm() < 1e-8));

        let o = obs(1.0, 4.0, (1.0, 0.0));
        assert!(all_pass_residual(&o, &[0.0, 0.5, 1.0, 2.0, 10.0]).unwrap() < 1e-10);

        // s = -kappa/2 + 2 i omega_o is a pole.
        let pole = Complex64::new(-2.0, 2.0);
        assert!(matches!(closed_loop_transfer(&o, pole), Err(Error::SingularResolvent { .. })));
    }

    #[test]
    fn hurwitz_examples() {
        let (ok, eig) = hurwitz_check(&obs(1.0, 4.0, (1.0, 0.0)));
        assert!(ok);
        assert!((eig[0] - Complex64::new(-2.0, 2.0)).norm() < 1e-12);
        assert!((eig[1] - Complex64::new(-2.0, -2.0)).norm() < 1e-12);

        let (ok, eig) = hurwitz_check(&obs(0.0, 0.01, (1.0, 0.0)));
        assert!(ok);
        assert!(eig.iter().all(|l| (l - Complex64::from(-0.005)).norm() < 1e-15));

        let (ok, eig) = hurwitz_check(&obs(0.0, 4.0, (1.0, 0.0)));
        assert!(ok && eig.iter().all(|l| *l == Complex64::from(-2.0)));
    }

    #[test]
    fn observer_validation() {
        assert!(ObserverSpec::new(1.0, 0.0, Vector2::new(1.0, 0.0)).is_err());
        assert!(ObserverSpec::new(-1.0, 1.0, Vector2::new(1.0, 0.0)).is_err());
        assert!(matches!(
            ObserverSpec::new(1.0, 1.0, Vector2::zeros()),
            Err(Error::InvalidParameter { field: "observer.beta", .. })
        ));
        let o = obs(1.0, 1.0, (1.0, 0.0));
        assert!(o.clone().with_initial_state(Vector2::zeros(), Matrix2::new(1.0, 2.0, 0.0, 1.0)).is_err());
        assert!(o.with_initial_state(Vector2::zeros(), -Matrix2::identity()).is_err());
    }

    #[test]
    fn augmented_blocks() {
        let plant = PlantSpec::new(
            Vector3::zeros(),
            RowVector3::new(1.0, 0.0, 0.0),
            Matrix2::identity() * Complex64::from(0.5),
        )
        .unwrap();
        let m = build_augmented(&plant, &obs(1.0, 4.0, (1.0, 0.0))).unwrap();
        assert_eq!(m.b, Matrix3x2::new(0.0, 0.0, -2.0, 0.0, 0.0, -2.0));
        assert_eq!(m.c, Matrix2x3::new(0.0, 2.0, 0.0, 0.0, 0.0, 2.0));
        assert_eq!(m.observer_drift(), Matrix2::new(-2.0, 2.0, -2.0, -2.0));
        assert_eq!(m.observer_forcing(), Vector2::new(0.0, -2.0));
        assert_eq!(m.a.row(0).amax(), 0.0);
        assert!((m.d - RowVector2::new(-0.5, -0.5)).amax() < 1e-15);
        assert_eq!(m.x0_mean, Vector3::zeros());
        assert_eq!(m.sigma0, Matrix3::identity());
        assert_eq!(m.kappa(), 4.0);
        assert_eq!(m.z_p_norm, 1.0);
    }

    proptest! {
        #[test]
        fn bias_mean_and_transfer_are_consistent(
            omega in 0.0f64..5.0, kappa in 0.01f64..10.0,
            b1 in -1.0f64..1.0, b2 in -1.0f64..1.0,
        ) {
            prop_assume!(b1.abs() + b2.abs() > 1e-3);
            let o = obs(omega, kappa, (b1, b2));
            let e = output_bias(&o);
            let via_mean = steady_state_mean(&o) * o.beta() * kappa.sqrt();
            prop_assert!((e - via_mean).amax() <= 1e-12 * (1.0 + e.amax()));
            // DC gain of the unshifted observer output: sqrt(kappa) (-A~)^{-1} 2 J beta = e.
            let dc = (-o.drift()).try_inverse().unwrap() * o.forcing() * kappa.sqrt();
            prop_assert!((dc - e).amax() <= 1e-12 * (1.0 + e.amax()));
            let k = optimal_gain(&e).unwrap();
            prop_assert!(((k * e)[0] - 1.0).abs() <= 1e-14);
            prop_assert!((k.norm() - 1.0 / e.norm()).abs() <= 1e-12 * k.norm());
        }
    }
}
