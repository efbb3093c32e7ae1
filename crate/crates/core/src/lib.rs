//! Gaussian Bayesian networks learned from related data sets.
//!
//! Three pooling strategies share one interface:
//!
//! * complete pooling ([`Strategy::Gbn`]): one linear-Gaussian network that
//!   ignores the group variable;
//! * no pooling ([`Strategy::Cgbn`]): a conditional Gaussian network with the
//!   group node as a discrete parent of every variable, fitted per group;
//! * partial pooling ([`Strategy::Lme`]): the same structure, with each local
//!   distribution a linear mixed-effects model whose group-specific
//!   coefficients are shrunk toward shared fixed effects.
//!
//! Structure is learned by greedy hill climbing on BIC; [`simgen`] and
//! [`metrics`] provide the simulation study used to compare the strategies.

pub mod data;
pub mod error;
pub mod exec;
pub mod graph;
pub mod infer;
pub mod linalg;
pub mod lme;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod score;
pub mod search;
pub mod simgen;

pub use data::GroupedDataset;
pub use error::{Error, Result};
pub use exec::Execution;
pub use graph::{ArcConstraints, Cpdag, Dag, Move, MoveRejection};
pub use lme::{fit_lme, LmeConfig, LmeFit, LmeProblem};
pub use model::{BnModel, GroupJoint, LocalDistribution, Strategy};

pub use nalgebra;

