//! Data-driven modeling and feed-forward control of attractor networks.
//!
//! The crate covers the full workflow for polynomial dynamical systems with
//! additive control:
//!
//! 1. exact polynomial vector fields with symbolic differentiation and a
//!    reciprocal (at-infinity) change of coordinates ([`poly`]),
//! 2. fixed-step RK4 simulation, seeded ensembles, and benchmark system
//!    generators ([`sim`], [`generators`]),
//! 3. rank-r orthonormal reduction of ensemble data ([`reduce`]),
//! 4. sparse regression of reduced dynamics onto a monomial library
//!    ([`sindy`]),
//! 5. phase-space analysis: fixed points, stability classification,
//!    bifurcation curves, control-plane stability maps, limit cycles, and 3D
//!    attractor probing ([`phase`]),
//! 6. transition planning between attractors and closed-loop-free execution
//!    with verification against the full system ([`planner`]),
//! 7. an artifact-driven pipeline behind the `actl` CLI ([`pipeline`]).
//!
//! All randomness flows through explicit seeds (ChaCha8); identical inputs
//! produce identical artifacts.

pub mod error;
pub mod generators;
// pub mod io; // TEMP
pub mod phase;
// pub mod pipeline; // TEMP
pub mod planner;
pub mod poly;
pub mod reduce;
pub mod sim;
pub mod sindy;

pub use error::{Error, Result};
pub use poly::{JacobianEval, PolySystem, Term};
