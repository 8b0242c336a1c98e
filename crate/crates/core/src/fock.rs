//! Operator-level oracle on qubit ⊗ truncated oscillator.
//!
//! The joint density matrix evolves under the Lindblad equation
//!
//! ```text
//! rho' = -i [H, rho] + L rho L^† - (1/2) {L^† L, rho}
//! H = (alpha . sigma) ⊗ (beta_1 q + beta_2 p) + I ⊗ (omega_o / 2)(q^2 + p^2)
//! L = sqrt(kappa) I ⊗ a
//! ```
//!
//! with `q = a + a^†`, `p = -i (a - a^†)`, so `[q, p] = 2i` and
//! `L + L^† = sqrt(kappa) q`, `(L - L^†)/i = sqrt(kappa) p`. Basis index is
//! `qubit * levels + fock`. Expectations of `z_p`, `q` and `p` computed here
//! are exact up to truncation and RK4 error, which makes them an
//! independent check of the reduced linear model.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::observer::{symplectic_j, ObserverSpec};
use crate::spin::{CMatrix2, PauliBasis, PlantSpec};

pub type CMatrix = DMatrix<Complex64>;

/// Population allowed in the top two Fock levels.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct FockConfig {
    /// Highest Fock number kept; the oscillator has `n_trunc + 1` levels.
    pub n_trunc: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Store every `record_every`-th step (the final step is always kept).
    pub record_every: usize,
}

impl FockConfig {
    pub fn new(n_trunc: usize, dt: f64, t_final: f64) -> Result<Self> {
        let cfg = FockConfig { n_trunc, dt, t_final, record_every: 1 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trunc < 4 {
            return Err(invalid("oracle.n_trunc", format!("must be >= 4, got {}", self.n_trunc)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("oracle.dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(invalid("oracle.t_final", format!("must be >= dt, got {}", self.t_final)));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.n_trunc + 1
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Sparse operator stored as `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != Complex64::new(0.0, 0.0) {
                    entries.push((i, j, v));
                }
            }
        }
        SparseOp { dim: m.nrows(), entries }
    }

    pub fn dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `self * rho`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, rho.ncols());
        for &(i, j, v) in &self.entries {
            for c in 0..rho.ncols() {
                out[(i, c)] += v * rho[(j, c)];
            }
        }
        out
    }

    /// `tr(rho * self)`.
    pub fn expectation(&self, rho: &CMatrix) -> Complex64 {
        self.entries.iter().map(|&(i, j, v)| v * rho[(j, i)]).sum()
    }
}

/// Operators of the joint qubit-oscillator model.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub levels: usize,
    pub hamiltonian: SparseOp,
    pub lindblad: SparseOp,
    pub z_p: SparseOp,
    pub q: SparseOp,
    pub p: SparseOp,
    /// `H - (i/2) L^† L`.
    effective: SparseOp,
}

impl OperatorSet {
    pub fn dim(&self) -> usize {
        2 * self.levels
    }
}

fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    CMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

fn qubit(m: &CMatrix2) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

/// Truncated annihilation operator on `levels` Fock states.
pub fn annihilation(levels: usize) -> CMatrix {
    let mut a = CMatrix::zeros(levels, levels);
    for n in 1..levels {
        a[(n - 1, n)] = Complex64::from((n as f64).sqrt());
    }
    a
}

/// Oscillator quadratures `(q, p)` on the truncated space.
pub fn quadratures(levels: usize) -> (CMatrix, CMatrix) {
    let a = annihilation(levels);
    let ad = a.adjoint();
    (&a + &ad, (&a - &ad) * -I)
}

pub fn build_operators(plant: &PlantSpec, observer: &ObserverSpec, config: &FockConfig) -> Result<OperatorSet> {
    config.validate()?;
    let levels = config.levels();
    let id_osc = CMatrix::identity(levels, levels);
    let id_q = CMatrix::identity(2, 2);
    let a = annihilation(levels);
    let (q, p) = quadratures(levels);

    let beta = observer.beta();
    let coupling_osc = &q * Complex64::from(beta[0]) + &p * Complex64::from(beta[1]);
    let alpha_sigma = qubit(&PauliBasis::new().combine(&plant.alpha()));
    let free_osc = (&q * &q + &p * &p) * Complex64::from(0.5 * observer.omega_o());
    let h = kron(&alpha_sigma, &coupling_osc) + kron(&id_q, &free_osc);

    let l = kron(&id_q, &a) * Complex64::from(observer.kappa().sqrt());
    let effective = &h - (l.adjoint() * &l) * (I * 0.5);

    Ok(OperatorSet {
        levels,
        hamiltonian: SparseOp::from_dense(&h),
        lindblad: SparseOp::from_dense(&l),
        z_p: SparseOp::from_dense(&kron(&qubit(&plant.output_operator()), &id_osc)),
        q: SparseOp::from_dense(&kron(&id_q, &q)),
        p: SparseOp::from_dense(&kron(&id_q, &p)),
        effective: SparseOp::from_dense(&effective),
    })
}

/// Joint density matrix on qubit ⊗ oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub rho: CMatrix,
}

impl JointState {
    pub fn new(rho: CMatrix) -> Result<Self> {
        if rho.nrows() != rho.ncols() || !rho.nrows().is_multiple_of(2) {
            return Err(invalid("joint_state", format!("shape {:?} is not 2N x 2N", rho.shape())));
        }
        let herm = (&rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-9 {
            return Err(invalid("joint_state", format!("not Hermitian (defect {herm:e})")));
        }
        let tr = rho.trace();
        if (tr - Complex64::from(1.0)).norm() > 1e-9 {
            return Err(invalid("joint_state", format!("trace {} != 1", tr.re)));
        }
        let hermitian = (&rho + rho.adjoint()) * Complex64::from(0.5);
        let lo = hermitian.symmetric_eigenvalues().min();
        if lo < -1e-9 {
            return Err(invalid("joint_state", format!("eigenvalue {lo:e} < 0")));
        }
        Ok(JointState { rho })
    }

    pub fn product(rho_qubit: &CMatrix2, rho_osc: &CMatrix) -> Result<Self> {
        Self::new(kron(&qubit(rho_qubit), rho_osc))
    }

    pub fn levels(&self) -> usize {
        self.rho.nrows() / 2
    }

    /// Population of the top two Fock levels.
    pub fn leakage(&self) -> f64 {
        let n = self.levels();
        [n - 2, n - 1, 2 * n - 2, 2 * n - 1].iter().map(|&i| self.rho[(i, i)].re).sum()
    }
}

/// Fock amplitudes of the coherent state `|z>`, normalized on the truncated
/// space.
pub fn coherent_amplitudes(levels: usize, z: Complex64) -> DVector<Complex64> {
    let mut v = DVector::zeros(levels);
    let mut term = Complex64::from((-0.5 * z.norm_sqr()).exp());
    for n in 0..levels {
        v[n] = term;
        term = term * z / ((n + 1) as f64).sqrt();
    }
    let norm = v.norm();
    v / Complex64::from(norm)
}

/// Coherent oscillator state with quadrature means `(q, p)`.
pub fn coherent_density(levels: usize, mean: &Vector2<f64>) -> CMatrix {
    let v = coherent_amplitudes(levels, Complex64::new(0.5 * mean[0], 0.5 * mean[1]));
    &v * v.adjoint()
}

/// Projector onto the eigenvector of `alpha . sigma` with eigenvalue
/// `sign * |alpha|`.
pub fn qubit_eigenstate(alpha: &nalgebra::Vector3<f64>, sign: f64) -> CMatrix2 {
    let n = alpha.norm();
    let m = PauliBasis::new().combine(&(alpha / n));
    // (I + s n.sigma) / 2
    (CMatrix2::identity() + m * Complex64::from(sign.signum())) * Complex64::from(0.5)
}

fn lindblad_rhs(ops: &OperatorSet, rho: &CMatrix) -> CMatrix {
    let x = ops.effective.apply(rho) * -I;
    let lr = ops.lindblad.apply(rho);
    let jump = ops.lindblad.apply(&lr.adjoint()).adjoint();
    &x + x.adjoint() + jump
}

/// Sampled master-equation trajectory.
#[derive(Debug, Clone)]
pub struct StateSeries {
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
}

/// RK4 integration of the master equation from `state`.
pub fn evolve(state: &JointState, ops: &OperatorSet, config: &FockConfig) -> Result<StateSeries> {
    config.validate()?;
    if state.rho.nrows() != ops.dim() {
        return Err(Error::Dimension {
            context: "evolve",
            detail: format!("state dimension {} vs operators {}", state.rho.nrows(), ops.dim()),
        });
    }
    let n = config.n_steps();
    let h = config.dt;
    let mut rho = state.rho.clone();
    let mut times = vec![0.0];
    let mut states = vec![state.clone()];
    for k in 1..=n {
        let k1 = lindblad_rhs(ops, &rho);
        let k2 = lindblad_rhs(ops, &(&rho + &k1 * Complex64::from(0.5 * h)));
        let k3 = lindblad_rhs(ops, &(&rho + &k2 * Complex64::from(0.5 * h)));
        let k4 = lindblad_rhs(ops, &(&rho + &k3 * Complex64::from(h)));
        rho += (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4) * Complex64::from(h / 6.0);
        rho = (&rho + rho.adjoint()) * Complex64::from(0.5);

        let t = k as f64 * h;
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { context: "evolve", step: k, time: t });
        }
        let drift = (rho.trace().re - 1.0).abs();
        if drift > 1e-8 * (1.0 + t) {
            return Err(Error::TraceDrift { drift, time: t });
        }
        let current = JointState { rho: rho.clone() };
        let leakage = current.leakage();
        if leakage > LEAKAGE_THRESHOLD {
            return Err(Error::Leakage { leakage, threshold: LEAKAGE_THRESHOLD, time: t });
        }
        if k % config.record_every == 0 || k == n {
            times.push(t);
            states.push(current);
        }
    }
    Ok(StateSeries { times, states })
}

/// `<z_p>`, `<q>`, `<p>` and leakage at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub t: f64,
    pub z_p: f64,
    pub q: f64,
    pub p: f64,
    pub leakage: f64,
}

fn real(z: Complex64) -> Result<f64> {
    if z.im.abs() > 1e-9 {
        return Err(Error::ComplexExpectation { imag: z.im });
    }
    Ok(z.re)
}

pub fn expectations(series: &StateSeries, ops: &OperatorSet) -> Result<Vec<Expectation>> {
    series
        .times
        .iter()
        .zip(&series.states)
        .map(|(&t, s)| {
            Ok(Expectation {
                t,
                z_p: real(ops.z_p.expectation(&s.rho))?,
                q: real(ops.q.expectation(&s.rho))?,
                p: real(ops.p.expectation(&s.rho))?,
                leakage: s.leakage(),
            })
        })
        .collect()
}

/// Closed-form solution of `x' = A~ x + 2 J beta z` with
/// `A~ = -(kappa/2) I + 2 omega_o J`, using
/// `exp(A~ t) = e^{-kappa t/2} (cos(2 omega_o t) I + sin(2 omega_o t) J)`.
pub fn reduced_mean(observer: &ObserverSpec, z_p: f64, x0: &Vector2<f64>, t: f64) -> Vector2<f64> {
    let k = observer.kappa();
    let w = observer.omega_o();
    let j = symplectic_j();
    let flow = (Matrix2::identity() * (2.0 * w * t).cos() + j * (2.0 * w * t).sin()) * (-0.5 * k * t).exp();
    // Fixed point of the forced system: -A~^{-1} 2 J beta z, with
    // A~^{-1} = (-(kappa/2) I - 2 omega_o J) / (kappa^2/4 + 4 omega_o^2).
    let inv = (Matrix2::identity() * (-0.5 * k) - j * (2.0 * w)) / (0.25 * k * k + 4.0 * w * w);
    let fixed = -(inv * j * observer.beta() * (2.0 * z_p));
    fixed + flow * (x0 - fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{RowVector3, Vector3};

    fn plant(c: [f64; 3], rho: CMatrix2) -> PlantSpec {
        PlantSpec::new(Vector3::zeros(), RowVector3::from_row_slice(&c), rho).unwrap()
    }

    fn mixed() -> CMatrix2 {
        CMatrix2::identity() * Complex64::from(0.5)
    }

    fn up() -> CMatrix2 {
        CMatrix2::new(Complex64::from(1.0), Complex64::from(0.0), Complex64::from(0.0), Complex64::from(0.0))
    }

    fn vacuum(levels: usize) -> CMatrix {
        let mut m = CMatrix::zeros(levels, levels);
        m[(0, 0)] = Complex64::from(1.0);
        m
    }

    fn comm(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a * b - b * a
    }

    #[test]
    fn quadrature_commutator_below_truncation() {
        let levels = 8;
        let (q, p) = quadratures(levels);
        let c = comm(&q, &p);
        for i in 0..levels - 1 {
            for j in 0..levels - 1 {
                let expected = if i == j { Complex64::new(0.0, 2.0) } else { Complex64::from(0.0) };
                assert!((c[(i, j)] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coupling_operator_reproduces_quadratures() {
        let o = ObserverSpec::new(1.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
        let cfg = FockConfig::new(6, 1e-3, 1.0).unwrap();
        let ops = build_operators(&plant([1.0, 0.0, 0.0], mixed()), &o, &cfg).unwrap();
        let l = ops.lindblad.dense();
        let sk = Complex64::from(2.0);
        assert!((&l + l.adjoint() - ops.q.dense() * sk).camax() < 1e-12);
        assert!(((&l - l.adjoint()) * -I - ops.p.dense() * sk).camax() < 1e-12);
    }

    #[test]
    fn hamiltonian_vanishes_without_coupling_or_frequency() {
        // beta = 0 is rejected by ObserverSpec, so check the pieces directly.
        let levels = 5;
        let (q, p) = quadratures(levels);
        let free = (&q * &q + &p * &p) * Complex64::from(0.0);
        assert!(free.camax() == 0.0);
        let coupling = &q * Complex64::from(0.0) + &p * Complex64::from(0.0);
        assert!(kron(&qubit(&mixed()), &coupling).camax() == 0.0);
    }

    #[test]
    fn output_operator_commutes_with_dynamics() {
        let o = ObserverSpec::new(0.7, 2.0, Vector2::new(0.4, -0.8)).unwrap();
        let cfg = FockConfig::new(10, 1e-3, 1.0).unwrap();
        let ops = build_operators(&plant([0.3, -0.5, 0.8], mixed()), &o, &cfg).unwrap();
        let z = ops.z_p.dense();
        assert!(comm(&z, &ops.hamiltonian.dense()).camax() <= 1e-12);
        assert!(comm(&z, &ops.lindblad.dense()).camax() <= 1e-12);
    }

    #[test]
    fn closed_system_without_dynamics_is_stationary() {
        // L = 0 and H = 0 would need kappa = 0; the lindblad_rhs with zero operators is checked directly.
        let levels = 5;
        let zero = SparseOp::from_dense(&CMatrix::zeros(2 * levels, 2 * levels));
        let ops = OperatorSet {
            levels,
            hamiltonian: zero.clone(),
            lindblad: zero.clone(),
            z_p: zero.clone(),
            q: zero.clone(),
            p: zero.clone(),
            effective: zero,
        };
        let s = JointState::product(&up(), &coherent_density(levels, &Vector2::new(0.1, 0.05))).unwrap();
        let cfg = FockConfig::new(4, 0.01, 0.5).unwrap();
        let series = evolve(&s, &ops, &cfg).unwrap();
        assert!(series.states.iter().all(|x| x.rho == s.rho));
    }

    #[test]
    fn lossy_cavity_decay() {
        // Qubit coupling along a direction with <alpha . sigma> = 0 in the
        // mixed state leaves the oscillator mean to decay freely.
        let kappa = 1.5;
        let o = ObserverSpec::new(0.0, kappa, Vector2::new(1e-12, 0.0)).unwrap();
        let cfg = FockConfig::new(12, 1e-3, 1.0).unwrap().with_record_every(100);
        let ops = build_operators(&plant([1.0, 0.0, 0.0], mixed()), &o, &cfg).unwrap();
        let x0 = Vector2::new(1.0, -0.6);
        let s = JointState::product(&mixed(), &coherent_density(cfg.levels(), &x0)).unwrap();
        let ex = expectations(&evolve(&s, &ops, &cfg).unwrap(), &ops).unwrap();
        for e in &ex {
            let decay = (-0.5 * kappa * e.t).exp();
            assert!((e.q - x0[0] * decay).abs() < 1e-6, "{e:?}");
            assert!((e.p - x0[1] * decay).abs() < 1e-6, "{e:?}");
        }
    }

    #[test]
    fn trace_is_preserved() {
        let o = ObserverSpec::new(1.0, 2.0, Vector2::new(0.5, 0.5)).unwrap();
        let cfg = FockConfig::new(10, 1e-3, 5.0).unwrap().with_record_every(500);
        let ops = build_operators(&plant([0.0, 0.0, 1.0], up()), &o, &cfg).unwrap();
        let s = JointState::product(&up(), &vacuum(cfg.levels())).unwrap();
        let series = evolve(&s, &ops, &cfg).unwrap();
        for st in &series.states {
            assert!((st.rho.trace().re - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn z_p_eigenstate_is_conserved() {
        let o = ObserverSpec::new(1.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
        let cfg = FockConfig::new(20, 1e-3, 2.5).unwrap().with_record_every(50);
        let ops = build_operators(&plant([0.0, 0.0, 1.0], up()), &o, &cfg).unwrap();
        let s = JointState::product(&up(), &vacuum(cfg.levels())).unwrap();
        let ex = expectations(&evolve(&s, &ops, &cfg).unwrap(), &ops).unwrap();
        assert!(ex.iter().all(|e| (e.z_p - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn unforced_mean_stays_at_origin() {
        let o = ObserverSpec::new(1.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
        let cfg = FockConfig::new(20, 1e-3, 2.0).unwrap().with_record_every(100);
        let ops = build_operators(&plant([1.0, 0.0, 0.0], mixed()), &o, &cfg).unwrap();
        let s = JointState::product(&mixed(), &vacuum(cfg.levels())).unwrap();
        let ex = expectations(&evolve(&s, &ops, &cfg).unwrap(), &ops).unwrap();
        assert!(ex.iter().all(|e| e.q.abs() <= 1e-6 && e.p.abs() <= 1e-6));
    }

    #[test]
    fn forced_mean_matches_linear_solution() {
        let o = ObserverSpec::new(1.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
        let cfg = FockConfig::new(20, 1e-3, 2.5).unwrap().with_record_every(25);
        let p = plant([1.0, 0.0, 0.0], mixed());
        let ops = build_operators(&p, &o, &cfg).unwrap();
        let rho_q = qubit_eigenstate(&p.alpha(), 1.0);
        let s = JointState::product(&rho_q, &vacuum(cfg.levels())).unwrap();
        let ex = expectations(&evolve(&s, &ops, &cfg).unwrap(), &ops).unwrap();
        let worst = ex
            .iter()
            .map(|e| {
                let lin = reduced_mean(&o, e.z_p, &Vector2::zeros(), e.t);
                (e.q - lin[0]).abs().max((e.p - lin[1]).abs())
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "{worst:e}");
        // Within e^{-5} of the steady state (-0.5, -0.5) by kappa t = 10.
        let last = ex.last().unwrap();
        assert!((last.q + 0.5).abs() < 1e-2 && (last.p + 0.5).abs() < 1e-2);
    }

    #[test]
    fn strong_driving_trips_leakage_guard() {
        let o = ObserverSpec::new(0.0, 1.0, Vector2::new(5.0, 0.0)).unwrap();
        let cfg = FockConfig::new(4, 1e-3, 5.0).unwrap();
        let p = plant([1.0, 0.0, 0.0], mixed());
        let ops = build_operators(&p, &o, &cfg).unwrap();
        let s = JointState::product(&qubit_eigenstate(&p.alpha(), 1.0), &vacuum(cfg.levels())).unwrap();
        assert!(matches!(evolve(&s, &ops, &cfg), Err(Error::Leakage { .. })));
    }

    #[test]
    fn config_and_state_validation() {
        assert!(FockConfig::new(3, 1e-3, 1.0).is_err());
        assert!(FockConfig::new(4, 0.0, 1.0).is_err());
        let mut rho = CMatrix::zeros(4, 4);
        rho[(0, 0)] = Complex64::from(0.5);
        assert!(JointState::new(rho.clone()).is_err());
        rho[(1, 1)] = Complex64::from(0.5);
        assert!(JointState::new(rho.clone()).is_ok());
        rho[(0, 1)] = Complex64::from(0.1);
        assert!(JointState::new(rho).is_err());
    }

    #[test]
    fn eigenstate_projector() {
        let alpha = Vector3::new(0.3, -1.0, 0.5);
        let rho = qubit_eigenstate(&alpha, 1.0);
        let z = PauliBasis::new().combine(&alpha);
        let mean = (rho * z).trace();
        assert!((mean.re - alpha.norm()).abs() < 1e-12 && mean.im.abs() < 1e-12);
    }
}
