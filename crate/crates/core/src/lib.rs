//! Direct-coupled coherent observer for a qubit with homodyne measurement.
//!
//! The crate covers the whole chain from the qubit algebra to filtering:
//!
//! - [`spin`]: Pauli algebra, the skew map `theta`, the plant generator and
//!   the initial moments of the estimated variable `z_p = C_p x_p`.
//! - [`observer`]: the oscillator observer, the reduced linear
//!   plant-observer model, the steady-state output bias `e`, the optimal
//!   homodyne row `K`, and the all-pass and Hurwitz checks.
//! - [`sde`]: seeded, order-independent simulation of homodyne records.
//! - [`kalman`]: the minimum-variance unbiased filter for linear QSDEs and
//!   its Riccati equation.
//! - [`fock`]: a master-equation oracle on qubit ⊗ truncated oscillator.
//!
//! ```
//! use coherent_observer::observer::{optimal_gain, output_bias, ObserverSpec};
//! use nalgebra::Vector2;
//!
//! let observer = ObserverSpec::new(0.0, 4.0, Vector2::new(1.0, 0.0)).unwrap();
//! let e = output_bias(&observer);
//! let k = optimal_gain(&e).unwrap();
//! assert!(((k * e)[0] - 1.0).abs() < 1e-15);
//! assert!((k.norm() - 0.5).abs() < 1e-15);
//! ```

pub mod ensemble;
pub mod error;
pub mod fock;
pub mod kalman;
pub mod linalg;
pub mod observer;
pub mod sde;
pub mod spin;

pub use error::{Error, Result};
pub use kalman::{
    error_covariance_ode, kalman_gain, riccati_rhs, run_filter, solve_riccati, specialize_plant_observer,
    unbiased_drift, FilterPlan, FilterRun, LinearModel, RiccatiSolution,
};
pub use observer::{build_augmented, AugmentedModel, ObserverSpec};
pub use sde::{simulate_paths, MeasurementRecord, SimConfig, StateTrajectory};
pub use spin::PlantSpec;
