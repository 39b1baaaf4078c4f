//! Photon correlation functions of a laser-driven quantum-dot emitter coupled
//! to longitudinal-acoustic phonons.
//!
//! Three propagation modes share one set of correlator and figure-of-merit
//! routines:
//!
//! * [`Mode::Exact`]: iterative path sum over an augmented density matrix that
//!   carries the finite phonon memory through both time arguments.
//! * [`Mode::Qrt`]: the same path sum, but the memory is traced out at the
//!   first time argument, i.e. the quantum regression theorem in the lab frame.
//! * [`Mode::Pme`]: a time-local polaron master equation with the regression
//!   theorem applied in the polaron frame.
//!
//! All numerical code is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases at the crate root fix it to `f64`.

pub mod correlators;
pub mod error;
pub mod evaluate;
pub mod figures;
pub mod influence;
pub mod linalg;
pub mod model;
pub mod nonmarkov;
pub mod pathint;
pub mod pme;
pub mod quad;
pub mod real;
mod stationary;

pub use correlators::{Kind, Mode};
pub use error::{Error, Result};
pub use real::Real;

/// Complex scalar used throughout the crate.
pub type C<T> = num_complex::Complex<T>;

pub type Complex64 = num_complex::Complex<f64>;
pub type Model = model::Model<f64>;
pub type EtaTable = influence::EtaTable<f64>;
pub type BathCorrelation = influence::BathCorrelation<f64>;
pub type PathIntegral = pathint::PathIntegral<f64>;
pub type Adm = pathint::Adm<f64>;
pub type PolaronSolver = pme::PolaronSolver<f64>;
pub type CorrelationGrid = correlators::CorrelationGrid<f64>;
pub type AveragedCorrelations = correlators::AveragedCorrelations<f64>;
pub type FiguresOfMerit = figures::FiguresOfMerit;
pub type PointResult = evaluate::PointResult;
