// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Numerical kernels index several parallel arrays with one counter.
#![allow(clippy::needless_range_loop)]

pub mod artifacts;
pub mod cmaes;
pub mod config;
pub mod controller;
pub mod error;
pub mod field;
pub mod integrate;
pub mod objective;
pub mod pipeline;
pub mod series;
pub mod spectral;
pub mod ssm;
pub mod system;
pub mod validate;
