//! Pareto set identification (PSI) for multi-output linear bandits.
//!
//! A bandit instance has `K` arms with feature vectors in `R^h` and mean
//! reward vectors in `R^d`. The goal is to find the Pareto set: the arms
//! whose mean vector is not dominated componentwise by any other arm. This
//! crate implements an elimination algorithm that, each round, samples the
//! active arms according to a G-optimal design restricted to the subspace
//! they span, estimates their means by least squares, and discards arms
//! whose empirical sub-optimality (or optimality) gap is resolved at the
//! current accuracy level. Both a fixed-budget and a fixed-confidence
//! variant are provided, along with a uniform-sampling baseline and a
//! benchmark runner behind the `gege` binary.
//!
//! Module layout:
//! - [`pareto`]: dominance relations, gaps, complexity measures
//! - [`design`]: subspace bases, G-optimal designs, integer rounding
//! - [`regression`]: subspace least squares on pull logs
//! - [`env`]: sampling environments, seeded RNG streams, synthetic instances
//! - [`algo`]: the elimination algorithms and the uniform baseline
//! - [`bench`]: instance files, experiment configs, replication runner

pub mod algo;
pub mod bench;
pub mod design;
pub mod env;
pub mod error;
pub mod pareto;
pub mod regression;

pub use error::{Error, Result};
