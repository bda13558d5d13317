//! Structure learning for tiered chain graphs under partial interference and
//! auto-g-computation of network causal effects.
//!
//! Data are `n` iid blocks of `m` interacting units. Each unit has binary
//! covariates `L1..Lp`, a treatment `A` and an outcome `Y`. The crate learns
//! which cross-unit ties are present by greedy pseudolikelihood-BIC search,
//! fits auto-logistic conditional models on the learned graph, and estimates
//! the population average overall effect of a treatment policy by Gibbs
//! sampling.

pub mod data;
pub mod estimate;
pub mod evaluate;
pub mod graph;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod search;
pub mod simulate;

pub mod cli;
