//! Bayesian structure learning for Gaussian belief networks with a
//! normal-Wishart parameter prior.

pub mod bge;
pub mod dag;
pub mod dataset;
pub mod error;
pub mod matrix;
pub mod network;
pub mod oracle;
pub mod prior;
pub mod search;

pub use bge::{
    ln_to_sci, log_c, log_marginal_complete, log_predictive, update_posterior, BgeScorer,
    PosteriorNW, ScoreCache, StructureScore,
};
pub use dag::{enumerate_dags, partition_classes, same_class, Dag, EquivalenceClass};
pub use dataset::{Dataset, SufficientStats};
pub use error::{Error, Result};
pub use matrix::{SpdFactor, SymMatrix};
pub use network::{GaussianNetwork, GaussianParams, NetworkSpec};
pub use prior::{elicit, NWPrior, PriorSpec, PriorSpecFile, StructurePriorPolicy};
pub use search::{exhaustive, hill_climb, SearchReport};
