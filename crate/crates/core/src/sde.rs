//! Classical surrogate simulation of the reduced plant-observer model.
//!
//! The homodyne record only involves operators that commute with `z_p`, so
//! its statistics coincide with those of a classical linear SDE in which
//! `z_p` is a random constant on the two-point spectrum `{+|C_p|, -|C_p|}`
//! and the quadrature noise `dw` is a standard Wiener increment. Each path
//! draws from its own ChaCha stream selected by the path index, so results
//! do not depend on scheduling.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Vector2, Vector6};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::psd_factor;
use crate::observer::{AugmentedModel, ObserverSpec};
use crate::spin::{qubit_moments, PlantSpec};

const MAX_STEPS: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    ExactLti,
}

/// How the record noise relates to the state noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseCoupling {
    /// The same `dw` drives the observer and appears in `dy_o`.
    #[default]
    Shared,
    /// An independent draw enters the record. Physically wrong; kept as a
    /// baseline that filtering tests must be able to reject.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub noise: NoiseCoupling,
}

impl SimConfig {
    pub fn new(dt: f64, t_final: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig { dt, t_final, n_paths, seed, scheme: Scheme::default(), noise: NoiseCoupling::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_noise(mut self, noise: NoiseCoupling) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("sim.dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final > self.dt) {
            return Err(invalid("sim.t_final", format!("must exceed dt, got {}", self.t_final)));
        }
        if self.t_final / self.dt > MAX_STEPS {
            return Err(invalid("sim.dt", "more than 1e8 steps requested"));
        }
        if self.n_paths == 0 {
            return Err(invalid("sim.n_paths", "must be at least 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| k as f64 * self.dt).collect()
    }
}

/// Homodyne record of one path: increments `dz_k` over `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub times: Vec<f64>,
    pub dz: Vec<f64>,
    pub z_p_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub x_o: Vec<Vector2<f64>>,
    pub z_p_true: f64,
}

impl StateTrajectory {
    /// Full reduced state `(z_p, x_o)` at grid index `k`.
    pub fn state(&self, k: usize) -> DVector<f64> {
        DVector::from_vec(vec![self.z_p_true, self.x_o[k][0], self.x_o[k][1]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub trajectory: StateTrajectory,
    pub record: MeasurementRecord,
}

/// One exact discretization step of `dx = (A x + u) dt + B dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiStep {
    pub transition: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub noise_covariance: DMatrix<f64>,
}

/// Exact step over `dt` via augmented matrix exponentials:
/// `exp([[-A, B B^T], [0, A^T]] dt)` yields `exp(A dt)` and the noise
/// covariance, `exp([[A, u], [0, 0]] dt)` the affine drift.
pub fn exact_lti_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    u: Option<&DVector<f64>>,
    dt: f64,
) -> Result<LtiStep> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension {
            context: "exact_lti_step",
            detail: format!("A is {}x{}, B is {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
        });
    }
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a * dt));
    m.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose() * dt));
    m.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * dt));
    let e = m.exp();
    let transition = e.view((n, n), (n, n)).transpose();
    let q = &transition * e.view((0, n), (n, n));
    let noise_covariance = (&q + q.transpose()) * 0.5;

    let drift = match u {
        None => DVector::zeros(n),
        Some(u) => {
            let mut m = DMatrix::zeros(n + 1, n + 1);
            m.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
            m.view_mut((0, n), (n, 1)).copy_from(&(u * dt));
            m.exp().view((0, n), (n, 1)).column(0).into_owned()
        }
    };
    Ok(LtiStep { transition, drift, noise_covariance })
}

/// Exact one-step map of a state together with its time integral and the
/// raw noise increment, for `dx = (A x + u) dt + B dw` over `[0, dt]`:
///
/// ```text
/// x(dt)          = transition x(0) + drift + xi
/// int_0^dt x ds  = integral_map x(0) + integral_drift + eta
/// int_0^dt dw    = dW
/// ```
///
/// `noise_covariance` is the joint covariance of `(xi, eta, dW)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordStep {
    pub transition: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub integral_map: DMatrix<f64>,
    pub integral_drift: DVector<f64>,
    pub noise_covariance: DMatrix<f64>,
}

pub fn exact_record_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    u: Option<&DVector<f64>>,
    dt: f64,
) -> Result<RecordStep> {
    let n = a.nrows();
    let m = b.ncols();
    let dim = 2 * n + m;
    let mut a_aug = DMatrix::zeros(dim, dim);
    a_aug.view_mut((0, 0), (n, n)).copy_from(a);
    a_aug.view_mut((n, 0), (n, n)).fill_with_identity();
    let mut b_aug = DMatrix::zeros(dim, m);
    b_aug.view_mut((0, 0), (n, m)).copy_from(b);
    b_aug.view_mut((2 * n, 0), (m, m)).fill_with_identity();
    let u_aug = u.map(|u| {
        let mut v = DVector::zeros(dim);
        v.rows_mut(0, n).copy_from(u);
        v
    });
    let step = exact_lti_step(&a_aug, &b_aug, u_aug.as_ref(), dt)?;
    Ok(RecordStep {
        transition: step.transition.view((0, 0), (n, n)).into_owned(),
        drift: step.drift.rows(0, n).into_owned(),
        integral_map: step.transition.view((n, 0), (n, n)).into_owned(),
        integral_drift: step.drift.rows(n, n).into_owned(),
        noise_covariance: step.noise_covariance,
    })
}

/// Exact mean and covariance of the full reduced state at time `t`.
pub fn exact_moments(model: &AugmentedModel, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let a = DMatrix::from_column_slice(3, 3, model.a.as_slice());
    let b = DMatrix::from_column_slice(3, 2, model.b.as_slice());
    let step = exact_lti_step(&a, &b, None, t)?;
    let x0 = DVector::from_column_slice(model.x0_mean.as_slice());
    let s0 = DMatrix::from_column_slice(3, 3, model.sigma0.as_slice());
    let mean = &step.transition * x0;
    let cov = &step.transition * s0 * step.transition.transpose() + step.noise_covariance;
    Ok((mean, cov))
}

/// Initial-condition law: two-point `z_p`, Gaussian observer.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub z_p_norm: f64,
    pub p_plus: f64,
    pub x_o_mean: Vector2<f64>,
    pub x_o_factor: Matrix2<f64>,
}

impl InitialLaw {
    pub fn from_model(model: &AugmentedModel) -> Result<Self> {
        let norm = model.z_p_norm;
        let mean = model.x0_mean[0];
        if mean.abs() > norm * (1.0 + 1e-12) {
            return Err(Error::InfeasibleMoments { mean: mean.abs(), norm });
        }
        let p_plus = (0.5 * (1.0 + mean / norm)).clamp(0.0, 1.0);
        let cov = DMatrix::from_fn(2, 2, |i, j| model.sigma0[(i + 1, j + 1)]);
        let f = psd_factor(&cov);
        Ok(InitialLaw {
            z_p_norm: norm,
            p_plus,
            x_o_mean: Vector2::new(model.x0_mean[1], model.x0_mean[2]),
            x_o_factor: Matrix2::from_fn(|i, j| f[(i, j)]),
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, Vector2<f64>) {
        let u: f64 = rng.random();
        let z = if u < self.p_plus { self.z_p_norm } else { -self.z_p_norm };
        let g = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        (z, self.x_o_mean + self.x_o_factor * g)
    }
}

/// Draw `(z_p, x_o)` at time zero for the given plant and observer.
pub fn sample_initial(
    plant: &PlantSpec,
    observer: &ObserverSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vector2<f64>)> {
    let (mean, _) = qubit_moments(plant);
    let norm = plant.c_p().norm();
    if mean.abs() > norm * (1.0 + 1e-12) {
        return Err(Error::InfeasibleMoments { mean: mean.abs(), norm });
    }
    let f = psd_factor(&DMatrix::from_column_slice(2, 2, observer.initial_covariance().as_slice()));
    let law = InitialLaw {
        z_p_norm: norm,
        p_plus: (0.5 * (1.0 + mean / norm)).clamp(0.0, 1.0),
        x_o_mean: *observer.initial_mean(),
        x_o_factor: Matrix2::from_fn(|i, j| f[(i, j)]),
    };
    Ok(law.sample(rng))
}

/// RNG for path `index` under `seed`.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

enum Stepper {
    Euler,
    Exact {
        transition: Matrix2<f64>,
        forcing: Vector2<f64>,
        integral_map: Matrix2<f64>,
        integral_forcing: Vector2<f64>,
        /// Factor of the joint covariance of (state noise, integral noise, dW).
        factor: Matrix6<f64>,
    },
}

/// Precomputed discretization of an [`AugmentedModel`] for a [`SimConfig`].
pub struct PathSimulator {
    config: SimConfig,
    law: InitialLaw,
    drift: Matrix2<f64>,
    forcing: Vector2<f64>,
    noise: Matrix2<f64>,
    /// `D C_o`, the homodyne row applied to the observer state.
    record_row: nalgebra::RowVector2<f64>,
    d: nalgebra::RowVector2<f64>,
    stepper: Stepper,
    times: Vec<f64>,
}

impl PathSimulator {
    pub fn new(model: &AugmentedModel, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let law = InitialLaw::from_model(model)?;
        let drift = model.observer_drift();
        let forcing = model.observer_forcing();
        let noise = model.observer_noise();
        let record_row = model.d * model.observer_output();

        let stepper = match config.scheme {
            Scheme::EulerMaruyama => Stepper::Euler,
            Scheme::ExactLti => {
                let a = DMatrix::from_column_slice(2, 2, drift.as_slice());
                let b = DMatrix::from_column_slice(2, 2, noise.as_slice());
                let u = DVector::from_column_slice(forcing.as_slice());
                let step = exact_record_step(&a, &b, Some(&u), config.dt)?;
                let f = psd_factor(&step.noise_covariance);
                Stepper::Exact {
                    transition: Matrix2::from_fn(|i, j| step.transition[(i, j)]),
                    forcing: Vector2::new(step.drift[0], step.drift[1]),
                    integral_map: Matrix2::from_fn(|i, j| step.integral_map[(i, j)]),
                    integral_forcing: Vector2::new(step.integral_drift[0], step.integral_drift[1]),
                    factor: Matrix6::from_fn(|i, j| f[(i, j)]),
                }
            }
        };
        Ok(PathSimulator {
            config: config.clone(),
            law,
            drift,
            forcing,
            noise,
            record_row,
            d: model.d,
            stepper,
            times: config.times(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn simulate(&self, index: usize) -> Result<SimulatedPath> {
        let mut rng = path_rng(self.config.seed, index);
        let (z_p, mut x) = self.law.sample(&mut rng);
        let n = self.config.n_steps();
        let dt = self.config.dt;
        let sdt = dt.sqrt();

        let mut x_o = Vec::with_capacity(n + 1);
        let mut dz = Vec::with_capacity(n);
        x_o.push(x);
        for k in 0..n {
            // `integral` is the time integral of x_o over the step.
            let (next, integral, dw) = match &self.stepper {
                Stepper::Euler => {
                    let dw = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)) * sdt;
                    let next = x + (self.drift * x + self.forcing * z_p) * dt + self.noise * dw;
                    (next, x * dt, dw)
                }
                Stepper::Exact { transition, forcing, integral_map, integral_forcing, factor } => {
                    let g = Vector6::from_fn(|_, _| rng.sample(StandardNormal));
                    let joint = factor * g;
                    let next = transition * x + forcing * z_p + Vector2::new(joint[0], joint[1]);
                    let integral = integral_map * x + integral_forcing * z_p + Vector2::new(joint[2], joint[3]);
                    (next, integral, Vector2::new(joint[4], joint[5]))
                }
            };
            let record_noise = match self.config.noise {
                NoiseCoupling::Shared => dw,
                NoiseCoupling::Independent => {
                    Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)) * sdt
                }
            };
            dz.push((self.record_row * integral)[0] + (self.d * record_noise)[0]);
            if !(next[0].is_finite() && next[1].is_finite()) {
                return Err(Error::NonFinite { context: "simulate_paths", step: k, time: self.times[k + 1] });
            }
            x = next;
            x_o.push(x);
        }
        Ok(SimulatedPath {
            trajectory: StateTrajectory { times: self.times.clone(), x_o, z_p_true: z_p },
            record: MeasurementRecord { times: self.times.clone(), dz, z_p_true: z_p },
        })
    }
}

/// Simulate `config.n_paths` independent paths in parallel, returned in
/// path-index order.
pub fn simulate_paths(model: &AugmentedModel, config: &SimConfig) -> Result<Vec<SimulatedPath>> {
    let sim = PathSimulator::new(model, config)?;
    (0..config.n_paths).into_par_iter().map(|i| sim.simulate(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::build_augmented;
    use crate::spin::CMatrix2;
    use nalgebra::{RowVector3, Vector3};
    use num_complex::Complex64;

    fn plant(c: [f64; 3], rho: CMatrix2) -> PlantSpec {
        PlantSpec::new(Vector3::zeros(), RowVector3::from_row_slice(&c), rho).unwrap()
    }

    fn mixed() -> CMatrix2 {
        CMatrix2::identity() * Complex64::from(0.5)
    }

    fn default_model() -> AugmentedModel {
        let o = ObserverSpec::new(1.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
        build_augmented(&plant([1.0, 0.0, 0.0], mixed()), &o).unwrap()
    }

    #[test]
    fn lti_step_examples() {
        let step = exact_lti_step(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), None, 0.3).unwrap();
        assert!((step.transition - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((step.noise_covariance - DMatrix::identity(2, 2) * 0.3).amax() < 1e-15);

        let a = DMatrix::identity(2, 2) * -2.0;
        let step = exact_lti_step(&a, &DMatrix::zeros(2, 2), None, 0.1).unwrap();
        assert!((step.transition - DMatrix::identity(2, 2) * (-0.2f64).exp()).amax() < 1e-15);
    }

    #[test]
    fn lti_step_scalar_closed_forms() {
        // dx = -a x dt + u dt + b dw: drift u(1 - e^{-a dt})/a, variance b^2 (1 - e^{-2 a dt}) / (2a).
        let (a, u, b, dt) = (1.7, 0.4, 0.9, 0.25);
        let step = exact_lti_step(
            &DMatrix::from_element(1, 1, -a),
            &DMatrix::from_element(1, 1, b),
            Some(&DVector::from_element(1, u)),
            dt,
        )
        .unwrap();
        assert!((step.drift[0] - u * (1.0 - (-a * dt).exp()) / a).abs() < 1e-14);
        assert!((step.noise_covariance[(0, 0)] - b * b * (1.0 - (-2.0 * a * dt).exp()) / (2.0 * a)).abs() < 1e-14);
    }

    #[test]
    fn record_step_scalar_closed_forms() {
        // dx = -a x dt + b dw: E[int x] = x0 (1 - e^{-a dt}) / a, Cov(xi, dW) = b (1 - e^{-a dt}) / a,
        // Var(int x) = (b/a)^2 (dt - 2 (1 - e^{-a dt})/a + (1 - e^{-2 a dt})/(2a)).
        let (a, b, dt) = (2.0, -2.0, 0.05);
        let step = exact_record_step(&DMatrix::from_element(1, 1, -a), &DMatrix::from_element(1, 1, b), None, dt).unwrap();
        let e1 = 1.0 - (-a * dt).exp();
        let e2 = 1.0 - (-2.0 * a * dt).exp();
        assert!((step.transition[(0, 0)] - (-a * dt).exp()).abs() < 1e-15);
        assert!((step.integral_map[(0, 0)] - e1 / a).abs() < 1e-15);
        let cov = &step.noise_covariance;
        assert!((cov[(2, 2)] - dt).abs() < 1e-15);
        assert!((cov[(0, 2)] - b * e1 / a).abs() < 1e-14);
        assert!((cov[(1, 2)] - b * (dt - e1 / a) / a).abs() < 1e-14);
        let var_int = (b / a).powi(2) * (dt - 2.0 * e1 / a + e2 / (2.0 * a));
        assert!((cov[(1, 1)] - var_int).abs() < 1e-14);
    }

    #[test]
    fn two_point_law_examples() {
        let o = ObserverSpec::new(1.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
        let p = plant([1.0, 0.0, 0.0], mixed());
        let mut rng = path_rng(7, 0);
        let draws: Vec<f64> = (0..1000).map(|_| sample_initial(&p, &o, &mut rng).unwrap().0).collect();
        assert!(draws.iter().all(|z| z.abs() == 1.0));
        assert!(draws.iter().any(|&z| z > 0.0) && draws.iter().any(|&z| z < 0.0));

        let up = CMatrix2::new(Complex64::from(1.0), Complex64::from(0.0), Complex64::from(0.0), Complex64::from(0.0));
        let p = plant([0.0, 0.0, 1.0], up);
        assert!((0..1000).all(|_| sample_initial(&p, &o, &mut rng).unwrap().0 == 1.0));
    }

    #[test]
    fn two_point_law_moments() {
        let rho = CMatrix2::new(
            Complex64::from(0.8),
            Complex64::new(0.1, 0.2),
            Complex64::new(0.1, -0.2),
            Complex64::from(0.2),
        );
        let p = plant([0.5, -1.0, 2.0], rho);
        let o = ObserverSpec::new(0.0, 1.0, Vector2::new(0.0, 1.0)).unwrap();
        let (mean, var) = qubit_moments(&p);
        let mut rng = path_rng(11, 3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_initial(&p, &o, &mut rng).unwrap().0).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (var / n as f64).sqrt();
        assert!((m - mean).abs() <= 4.0 * se_mean, "{m} vs {mean}");
        // Fourth central moment of the two-point law gives the variance SE.
        let mu4 = draws.iter().map(|z| (z - mean).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((mu4 - var * var) / n as f64).sqrt();
        assert!((v - var).abs() <= 4.0 * se_var, "{v} vs {var}");
    }

    #[test]
    fn z_p_constant_and_records_sized() {
        let cfg = SimConfig::new(0.01, 1.0, 3, 5).unwrap();
        for scheme in [Scheme::EulerMaruyama, Scheme::ExactLti] {
            let paths = simulate_paths(&default_model(), &cfg.clone().with_scheme(scheme)).unwrap();
            for p in &paths {
                assert_eq!(p.record.dz.len(), cfg.n_steps());
                assert_eq!(p.trajectory.x_o.len(), cfg.n_steps() + 1);
                assert_eq!(p.record.z_p_true.abs(), 1.0);
                assert!((0..=cfg.n_steps()).all(|k| p.trajectory.state(k)[0] == p.record.z_p_true));
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_and_order_free() {
        let cfg = SimConfig::new(0.01, 0.5, 8, 42).unwrap();
        let a = simulate_paths(&default_model(), &cfg).unwrap();
        let b = simulate_paths(&default_model(), &cfg).unwrap();
        assert_eq!(a, b);
        let sim = PathSimulator::new(&default_model(), &cfg).unwrap();
        assert_eq!(sim.simulate(5).unwrap(), a[5]);
    }

    #[test]
    fn config_guards() {
        assert!(SimConfig::new(0.0, 1.0, 1, 0).is_err());
        assert!(SimConfig::new(0.1, 0.05, 1, 0).is_err());
        assert!(SimConfig::new(0.1, 1.0, 0, 0).is_err());
        assert!(SimConfig::new(1e-9, 1.0, 1, 0).is_err());
    }

    #[test]
    fn exact_moments_reach_steady_state() {
        let m = default_model();
        let (mean, cov) = exact_moments(&m, 20.0).unwrap();
        assert!(mean.amax() < 1e-12);
        // z_p = +-1 with equal weight; observer covariance I + (M beta)(M beta)^T.
        let r = [-0.5, -0.5];
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 } + r[i] * r[j];
                assert!((cov[(i + 1, j + 1)] - expected).abs() < 1e-10);
            }
            assert!((cov[(0, i + 1)] - r[i]).abs() < 1e-10);
        }
    }
}
