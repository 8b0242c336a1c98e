//! Minimum-variance unbiased filtering for linear QSDEs with homodyne output.
//!
//! For the system
//!
//! ```text
//! dx = A(t) x dt + B(t) dw,   dy = C(t) x dt + dw,   dz = D dy
//! ```
//!
//! every unbiased linear filter has the form
//! `dx^ = (A - G D C) x^ dt + G dz` with `x^(t0) = <x0>`. The gain that
//! minimizes the terminal error variance is
//! `G = (S C^T D^T + B D^T)(D D^T)^{-1}`, where `S` solves the Riccati
//! equation integrated by [`solve_riccati`]. The estimator only uses first
//! and second moments, so it stays optimal among linear unbiased filters
//! when the initial state or the noise is not Gaussian.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{guarded_spd_inverse, is_finite, min_eigenvalue, symmetrize};
use crate::observer::{build_augmented, AugmentedModel, ObserverSpec};
use crate::sde::MeasurementRecord;
use crate::spin::PlantSpec;

type CoeffFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// A coefficient matrix that is either constant or a function of time.
#[derive(Clone)]
pub enum Coefficient {
    Constant(DMatrix<f64>),
    Varying(CoeffFn),
}

impl Coefficient {
    pub fn varying(f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Coefficient::Varying(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        match self {
            Coefficient::Constant(m) => m.clone(),
            Coefficient::Varying(f) => f(t),
        }
    }
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Coefficient::Varying(_) => f.write_str("Varying(..)"),
        }
    }
}

impl From<DMatrix<f64>> for Coefficient {
    fn from(m: DMatrix<f64>) -> Self {
        Coefficient::Constant(m)
    }
}

/// Linear QSDE with `n` states, `m` quadrature noises and `m/2` homodyne
/// outputs.
#[derive(Debug, Clone)]
pub struct LinearModel {
    a: Coefficient,
    b: Coefficient,
    c: Coefficient,
    d: DMatrix<f64>,
    x0_mean: DVector<f64>,
    sigma0: DMatrix<f64>,
    dd_inv: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(
        a: impl Into<Coefficient>,
        b: impl Into<Coefficient>,
        c: impl Into<Coefficient>,
        d: DMatrix<f64>,
        x0_mean: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = x0_mean.len();
        let m = d.ncols();
        if m == 0 || !m.is_multiple_of(2) {
            return Err(invalid("model.d", format!("noise dimension m = {m} must be even and positive")));
        }
        if d.nrows() != m / 2 {
            return Err(Error::Dimension {
                context: "LinearModel",
                detail: format!("D must be {}x{m}, got {}x{}", m / 2, d.nrows(), d.ncols()),
            });
        }
        if sigma0.shape() != (n, n) {
            return Err(Error::Dimension {
                context: "LinearModel",
                detail: format!("Sigma0 must be {n}x{n}, got {:?}", sigma0.shape()),
            });
        }
        if (&sigma0 - sigma0.transpose()).amax() > 1e-12 {
            return Err(invalid("model.sigma0", "must be symmetric"));
        }
        if min_eigenvalue(&sigma0) < -1e-10 {
            return Err(invalid("model.sigma0", "must be positive semidefinite"));
        }
        let dd_inv = guarded_spd_inverse(&(&d * d.transpose()))?;
        let model = LinearModel { a: a.into(), b: b.into(), c: c.into(), d, x0_mean, sigma0, dd_inv };
        model.coefficients(0.0)?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.x0_mean.len()
    }

    pub fn m(&self) -> usize {
        self.d.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.d.nrows()
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    /// `(A(t), B(t), C(t))`, with their shapes checked.
    pub fn coefficients(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (n, m) = (self.n(), self.m());
        let (a, b, c) = (self.a.at(t), self.b.at(t), self.c.at(t));
        if a.shape() != (n, n) || b.shape() != (n, m) || c.shape() != (m, n) {
            return Err(Error::Dimension {
                context: "LinearModel coefficients",
                detail: format!(
                    "expected A {n}x{n}, B {n}x{m}, C {m}x{n}; got {:?}, {:?}, {:?}",
                    a.shape(),
                    b.shape(),
                    c.shape()
                ),
            });
        }
        Ok((a, b, c))
    }

    fn gain(&self, sigma: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let dt = self.d.transpose();
        (symmetrize(sigma) * c.transpose() * &dt + b * &dt) * &self.dd_inv
    }

    fn riccati(&self, t: f64, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (a, b, c) = self.coefficients(t)?;
        Ok(riccati_terms(sigma, &a, &b, &c, &self.d, &self.dd_inv))
    }
}

fn riccati_terms(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    dd_inv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let proj = d.transpose() * dd_inv * d;
    let a_bar = a - b * &proj * c;
    let rhs = &a_bar * sigma + sigma * a_bar.transpose() - sigma * c.transpose() * &proj * c * sigma
        + b * b.transpose()
        - b * &proj * b.transpose();
    symmetrize(&rhs)
}

fn check_dims(context: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension { context, detail: detail() })
    }
}

/// Drift `F = A - G D C` forced by unbiasedness.
pub fn unbiased_drift(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    d: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_dims(
        "unbiased_drift",
        a.ncols() == n && g.nrows() == n && g.ncols() == d.nrows() && d.ncols() == c.nrows() && c.ncols() == n,
        || format!("A {:?}, G {:?}, D {:?}, C {:?}", a.shape(), g.shape(), d.shape(), c.shape()),
    )?;
    Ok(a - g * d * c)
}

/// Optimal gain `(S C^T D^T + B D^T)(D D^T)^{-1}`; `S` is symmetrized first.
pub fn kalman_gain(
    sigma: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    check_dims(
        "kalman_gain",
        sigma.ncols() == n && b.nrows() == n && c.ncols() == n && c.nrows() == d.ncols() && b.ncols() == d.ncols(),
        || format!("Sigma {:?}, B {:?}, C {:?}, D {:?}", sigma.shape(), b.shape(), c.shape(), d.shape()),
    )?;
    let dd_inv = guarded_spd_inverse(&(d * d.transpose()))?;
    let dt = d.transpose();
    Ok((symmetrize(sigma) * c.transpose() * &dt + b * &dt) * dd_inv)
}

/// Right-hand side of the Riccati equation for the optimal error covariance.
pub fn riccati_rhs(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    check_dims(
        "riccati_rhs",
        sigma.ncols() == n
            && a.shape() == (n, n)
            && b.nrows() == n
            && c.ncols() == n
            && c.nrows() == d.ncols()
            && b.ncols() == d.ncols(),
        || format!("Sigma {:?}, A {:?}, B {:?}, C {:?}, D {:?}", sigma.shape(), a.shape(), b.shape(), c.shape(), d.shape()),
    )?;
    let dd_inv = guarded_spd_inverse(&(d * d.transpose()))?;
    Ok(riccati_terms(sigma, a, b, c, d, &dd_inv))
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Grid("need at least two points".into()));
    }
    if let Some(k) = grid.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::Grid(format!("not strictly increasing at index {k}")));
    }
    Ok(())
}

/// Optimal error covariance `S*(t)` and gain `G(t)` on a time grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub sigma_star: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Riccati right-hand side at each node, used for Hermite interpolation.
    pub sigma_dot: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    /// Cubic Hermite interpolant of `S*` at `t` within the grid.
    pub fn sigma_at(&self, t: f64) -> DMatrix<f64> {
        let last = self.times.len() - 1;
        let k = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.sigma_star[k].clone(),
            Err(0) => return self.sigma_star[0].clone(),
            Err(k) if k > last => return self.sigma_star[last].clone(),
            Err(k) => k - 1,
        };
        let h = self.times[k + 1] - self.times[k];
        let s = (t - self.times[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.sigma_star[k] * h00
            + &self.sigma_dot[k] * (h10 * h)
            + &self.sigma_star[k + 1] * h01
            + &self.sigma_dot[k + 1] * (h11 * h)
    }

    /// Optimal gain at an arbitrary `t`, from the interpolated covariance.
    pub fn gain_at(&self, model: &LinearModel, t: f64) -> Result<DMatrix<f64>> {
        let (_, b, c) = model.coefficients(t)?;
        Ok(model.gain(&self.sigma_at(t), &b, &c))
    }

    /// Smallest eigenvalue of `S*` over the whole grid.
    pub fn min_eigenvalue(&self) -> f64 {
        self.sigma_star.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        self.sigma_star.last().expect("non-empty solution")
    }
}

fn rk4<F>(grid: &[f64], x0: &DMatrix<f64>, context: &'static str, mut f: F) -> Result<Vec<DMatrix<f64>>>
where
    F: FnMut(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let mut out = Vec::with_capacity(grid.len());
    let mut x = symmetrize(x0);
    out.push(x.clone());
    for (k, w) in grid.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        let k1 = f(t, &x)?;
        let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
        let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
        let k4 = f(t + h, &(&x + &k3 * h))?;
        x = symmetrize(&(&x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)));
        if !is_finite(&x) {
            return Err(Error::NonFinite { context, step: k + 1, time: w[1] });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Integrate the Riccati equation with classical RK4 on `grid`, starting
/// from the model's `Sigma0` at `grid[0]`.
pub fn solve_riccati(model: &LinearModel, grid: &[f64]) -> Result<RiccatiSolution> {
    validate_grid(grid)?;
    let sigma_star = rk4(grid, &model.sigma0, "solve_riccati", |t, s| model.riccati(t, s))?;
    let mut gains = Vec::with_capacity(grid.len());
    let mut sigma_dot = Vec::with_capacity(grid.len());
    for (&t, s) in grid.iter().zip(&sigma_star) {
        let (_, b, c) = model.coefficients(t)?;
        gains.push(model.gain(s, &b, &c));
        sigma_dot.push(model.riccati(t, s)?);
    }
    Ok(RiccatiSolution { times: grid.to_vec(), sigma_star, gains, sigma_dot })
}

/// Error covariance of the unbiased filter driven by an arbitrary gain
/// schedule `G(t)`:
/// `S' = (A - G D C) S + S (A - G D C)^T + (B - G D)(B - G D)^T`.
pub fn error_covariance_ode<G>(model: &LinearModel, gain: G, grid: &[f64]) -> Result<Vec<DMatrix<f64>>>
where
    G: Fn(f64) -> DMatrix<f64>,
{
    validate_grid(grid)?;
    rk4(grid, &model.sigma0, "error_covariance_ode", |t, s| {
        let (a, b, c) = model.coefficients(t)?;
        let g = gain(t);
        let f = unbiased_drift(&a, &g, &model.d, &c)?;
        let noise = b - &g * &model.d;
        Ok(&f * s + s * f.transpose() + &noise * noise.transpose())
    })
}

/// Estimates produced by one filter pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub times: Vec<f64>,
    pub x_hat: Vec<DVector<f64>>,
}

impl FilterRun {
    pub fn terminal(&self) -> &DVector<f64> {
        self.x_hat.last().expect("non-empty run")
    }

    pub fn terminal_error(&self, truth: &DVector<f64>) -> DVector<f64> {
        truth - self.terminal()
    }
}

/// Filter drift and gain tabulated on the Riccati grid, shareable across
/// an ensemble of records.
#[derive(Debug, Clone)]
pub struct FilterPlan {
    times: Vec<f64>,
    drift: Vec<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
    x0: DVector<f64>,
}

impl FilterPlan {
    pub fn new(model: &LinearModel, riccati: &RiccatiSolution) -> Result<Self> {
        let drift = riccati
            .times
            .iter()
            .zip(&riccati.gains)
            .map(|(&t, g)| {
                let (a, _, c) = model.coefficients(t)?;
                unbiased_drift(&a, g, &model.d, &c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterPlan {
            times: riccati.times.clone(),
            drift,
            gains: riccati.gains.clone(),
            x0: model.x0_mean.clone(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Run on increments stacked step-major: `dz[k * p .. (k + 1) * p]` is
    /// the output increment over `[t_k, t_{k+1}]`.
    pub fn run_stacked(&self, dz: &[f64]) -> Result<FilterRun> {
        let p = self.gains[0].ncols();
        let steps = self.times.len() - 1;
        if dz.len() != steps * p {
            return Err(Error::Grid(format!("record has {} values, grid needs {}", dz.len(), steps * p)));
        }
        let mut x = self.x0.clone();
        let mut x_hat = Vec::with_capacity(steps + 1);
        x_hat.push(x.clone());
        for k in 0..steps {
            let h = self.times[k + 1] - self.times[k];
            let mut next = x.clone();
            next.gemv(h, &self.drift[k], &x, 1.0);
            for (j, &inc) in dz[k * p..(k + 1) * p].iter().enumerate() {
                next.axpy(inc, &self.gains[k].column(j), 1.0);
            }
            x = next;
            x_hat.push(x.clone());
        }
        Ok(FilterRun { times: self.times.clone(), x_hat })
    }

    pub fn run(&self, record: &MeasurementRecord) -> Result<FilterRun> {
        check_grid_match(&self.times, &record.times)?;
        self.run_stacked(&record.dz)
    }
}

fn check_grid_match(a: &[f64], b: &[f64]) -> Result<()> {
    let scale = a.last().copied().unwrap_or(1.0).abs().max(1.0);
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-9 * scale) {
        return Err(Error::Grid(format!(
            "record grid ({} points) does not match Riccati grid ({} points)",
            b.len(),
            a.len()
        )));
    }
    Ok(())
}

/// Integrate `dx^ = (A - G D C) x^ dt + G dz` from `x^(t0) = <x0>` over a
/// scalar homodyne record.
pub fn run_filter(model: &LinearModel, riccati: &RiccatiSolution, record: &MeasurementRecord) -> Result<FilterRun> {
    if model.outputs() != 1 {
        return Err(Error::Dimension {
            context: "run_filter",
            detail: format!("scalar record but model has {} outputs", model.outputs()),
        });
    }
    FilterPlan::new(model, riccati)?.run(record)
}

impl AugmentedModel {
    pub fn to_linear_model(&self) -> Result<LinearModel> {
        LinearModel::new(
            DMatrix::from_column_slice(3, 3, self.a.as_slice()),
            DMatrix::from_column_slice(3, 2, self.b.as_slice()),
            DMatrix::from_column_slice(2, 3, self.c.as_slice()),
            DMatrix::from_row_slice(1, 2, self.d.as_slice()),
            DVector::from_column_slice(self.x0_mean.as_slice()),
            DMatrix::from_column_slice(3, 3, self.sigma0.as_slice()),
        )
    }
}

/// The plant-observer system as a [`LinearModel`] with `D = K`.
pub fn specialize_plant_observer(plant: &PlantSpec, observer: &ObserverSpec) -> Result<LinearModel> {
    build_augmented(plant, observer)?.to_linear_model()
}
