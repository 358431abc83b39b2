//! Schrödinger heat kernels `p(t,x,y)` of `-½Δ + V` for radial potentials
//! `|V(x)| ≍ (1+|x|)^{-α}`, computed by Feynman–Kac Monte Carlo on Brownian
//! bridges, finite differences and the Duhamel series, together with the
//! closed-form two-sided envelopes and the machinery that fits them.

pub mod cli;
pub mod config;
pub mod dirichlet;
pub mod duhamel;
pub mod envelopes;
pub mod error;
pub mod fkmc;
pub mod pde;
pub mod freekernel;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod suites;
pub mod verify;

pub use error::{Error, Result};
