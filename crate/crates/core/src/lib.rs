//! Numerics for one-dimensional discrete quasiperiodic Schrödinger operators
//!
//! `(Hψ)(n) = ψ(n-1) + ψ(n+1) + f(θ + nα) ψ(n)`
//!
//! The crate covers continued-fraction frequencies, periodic approximants and
//! their Floquet band structure, transfer matrices and Lyapunov exponents, and
//! Abel-averaged transport computed along three independent routes (time
//! quadrature, resolvent energy integral, Floquet formula). The [`verify`]
//! module turns the identities and inequalities of the theory into
//! machine-checked reports.
//!
//! Data-parallel loops (phase averages, ensembles, sweeps) run on rayon when
//! the default `parallel` feature is enabled and fall back to plain iterators
//! otherwise; see [`par`].

pub mod arithmetic;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod operator;
pub mod par;
pub mod quadrature;
pub mod report;
pub mod transfer;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
