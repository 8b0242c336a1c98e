//! Exact algebra of the qubit plant.
//!
//! The plant variables are the three spin operators, represented at time
//! zero by the Pauli matrices. Everything here is finite-dimensional and
//! exact up to round-off: the skew map [`theta`], the plant generator, a
//! brute-force commutator expansion that checks it, and the first two
//! moments of the estimated variable `z_p = C_p x_p`.

use nalgebra::{Matrix2, Matrix3, RowVector3, Vector3};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub type CMatrix2 = Matrix2<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// The three Pauli matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliBasis {
    pub sigma1: CMatrix2,
    pub sigma2: CMatrix2,
    pub sigma3: CMatrix2,
}

impl PauliBasis {
    pub fn new() -> Self {
        PauliBasis {
            sigma1: CMatrix2::new(ZERO, ONE, ONE, ZERO),
            sigma2: CMatrix2::new(ZERO, -I, I, ZERO),
            sigma3: CMatrix2::new(ONE, ZERO, ZERO, -ONE),
        }
    }

    /// `sigma_k` for `k` in `1..=3`.
    pub fn get(&self, k: usize) -> Result<CMatrix2> {
        match k {
            1 => Ok(self.sigma1),
            2 => Ok(self.sigma2),
            3 => Ok(self.sigma3),
            _ => Err(Error::PauliIndex(k)),
        }
    }

    pub fn as_array(&self) -> [CMatrix2; 3] {
        [self.sigma1, self.sigma2, self.sigma3]
    }

    /// `v_1 sigma_1 + v_2 sigma_2 + v_3 sigma_3`.
    pub fn combine(&self, v: &Vector3<f64>) -> CMatrix2 {
        self.sigma1 * Complex64::from(v[0])
            + self.sigma2 * Complex64::from(v[1])
            + self.sigma3 * Complex64::from(v[2])
    }

    /// Real Pauli coefficients of `m`, `(1/2) tr(sigma_k m)`, together with
    /// the identity coefficient `(1/2) tr(m)`.
    pub fn decompose(&self, m: &CMatrix2) -> (Complex64, [Complex64; 3]) {
        let half = Complex64::from(0.5);
        let id = m.trace() * half;
        let coeffs = self.as_array().map(|s| (s * m).trace() * half);
        (id, coeffs)
    }
}

impl Default for PauliBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// Levi-Civita symbol over 1-based indices.
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (1, 2, 3) | (2, 3, 1) | (3, 1, 2) => 1.0,
        (3, 2, 1) | (1, 3, 2) | (2, 1, 3) => -1.0,
        _ => 0.0,
    }
}

/// Skew-symmetric image of a 3-vector under the cross-product map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaMatrix(pub Matrix3<f64>);

impl ThetaMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Rows `(0, b3, -b2)`, `(-b3, 0, b1)`, `(b2, -b1, 0)`.
pub fn theta(beta: &Vector3<f64>) -> ThetaMatrix {
    let (b1, b2, b3) = (beta[0], beta[1], beta[2]);
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0,  b3, -b2,
        -b3, 0.0,  b1,
        b2,  -b1, 0.0,
    );
    ThetaMatrix(m)
}

/// `sigma_i sigma_j` for 1-based indices.
pub fn pauli_product(i: usize, j: usize) -> Result<CMatrix2> {
    let basis = PauliBasis::new();
    Ok(basis.get(i)? * basis.get(j)?)
}

/// Heisenberg generator of the free plant, `x_p' = A_p x_p`, for the
/// Hamiltonian `r_p . sigma`.
pub fn plant_generator(r_p: &Vector3<f64>) -> Matrix3<f64> {
    theta(r_p).0 * -2.0
}

/// Brute-force expansion of `-i [sigma_i, r_p . sigma]` in the Pauli basis.
///
/// Row `i` of the result holds the coefficients of that commutator, so the
/// returned matrix is the plant generator computed without the `theta` map.
pub fn commutator_oracle(r_p: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let basis = PauliBasis::new();
    let h = basis.combine(r_p);
    let mut out = Matrix3::zeros();
    for (row, s) in basis.as_array().iter().enumerate() {
        let m = (s * h - h * s) * -I;
        let (id, coeffs) = basis.decompose(&m);
        if id.norm() > 1e-12 {
            return Err(Error::IdentityComponent { row: row + 1, value: id.norm() });
        }
        for (col, c) in coeffs.iter().enumerate() {
            out[(row, col)] = c.re;
        }
    }
    Ok(out)
}

/// Qubit plant data: Hamiltonian coefficients, the output row `C_p`, and
/// the initial density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    r_p: Vector3<f64>,
    c_p: RowVector3<f64>,
    rho_p: CMatrix2,
}

impl PlantSpec {
    pub fn new(r_p: Vector3<f64>, c_p: RowVector3<f64>, rho_p: CMatrix2) -> Result<Self> {
        if r_p.iter().chain(c_p.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("plant", "non-finite entry"));
        }
        if c_p.norm() == 0.0 {
            return Err(invalid("plant.c_p", "output row must be nonzero"));
        }
        validate_density(&rho_p)?;
        Ok(PlantSpec { r_p, c_p, rho_p })
    }

    pub fn r_p(&self) -> &Vector3<f64> {
        &self.r_p
    }

    pub fn c_p(&self) -> &RowVector3<f64> {
        &self.c_p
    }

    pub fn rho_p(&self) -> &CMatrix2 {
        &self.rho_p
    }

    /// The coupling vector `alpha = C_p^T`.
    pub fn alpha(&self) -> Vector3<f64> {
        self.c_p.transpose()
    }

    /// `z_p` at time zero as a 2x2 operator.
    pub fn output_operator(&self) -> CMatrix2 {
        PauliBasis::new().combine(&self.alpha())
    }
}

fn validate_density(rho: &CMatrix2) -> Result<()> {
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("plant.rho_p", "non-finite entry"));
    }
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > 1e-12 {
        return Err(invalid("plant.rho_p", format!("not Hermitian (defect {herm:e})")));
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > 1e-12 {
        return Err(invalid("plant.rho_p", format!("trace {} != 1", tr.re)));
    }
    // Eigenvalues of a 2x2 Hermitian matrix in closed form.
    let a = rho[(0, 0)].re;
    let d = rho[(1, 1)].re;
    let b = rho[(0, 1)].norm();
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let lo = 0.5 * (a + d - disc);
    if lo < -1e-12 {
        return Err(invalid("plant.rho_p", format!("not positive semidefinite (eigenvalue {lo:e})")));
    }
    Ok(())
}

/// Mean and variance of `z_p(0) = C_p x_p(0)` in the state `rho_p`.
pub fn qubit_moments(plant: &PlantSpec) -> (f64, f64) {
    let basis = PauliBasis::new();
    let mean: f64 = basis
        .as_array()
        .iter()
        .zip(plant.c_p.iter())
        .map(|(s, c)| c * (plant.rho_p * s).trace().re)
        .sum();
    let mut variance = plant.c_p.norm_squared() - mean * mean;
    if variance < 0.0 && variance > -1e-12 {
        variance = 0.0;
    }
    (mean, variance)
}
