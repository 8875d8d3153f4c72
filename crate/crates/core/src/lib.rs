//! Numerical laboratory for derivative-loss counterexamples to Kirchhoff
//! equations and the matching a priori estimates.

pub mod logreal;
pub mod apriori;
pub mod classify;
pub mod config;
pub mod coefficient;
pub mod grid;
pub mod kirchhoff;
pub mod moduli;
pub mod modes;
pub mod params;
pub mod pipeline;
pub mod ode;
pub mod quadrature;
pub mod spectral;

pub use logreal::{log_sum_exp, Exponent, LogReal};
