//! The chapters of the guide in `book/src`, compiled as documentation so
//! that every code sample runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/spin-algebra.md")]
pub mod spin_algebra {}

#[doc = include_str!("../../../book/src/observer-model.md")]
pub mod observer_model {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/kalman-filter.md")]
pub mod kalman_filter {}

#[doc = include_str!("../../../book/src/fock-oracle.md")]
pub mod fock_oracle {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
