//! Population based training (PBT) engine.
//!
//! A population of workers jointly optimizes model parameters and
//! hyperparameters: each member trains with iterative `step` calls, measures
//! itself with `eval`, and periodically exploits the rest of the population
//! (copying a better member's state) and explores (perturbing or resampling
//! the copied hyperparameters). Members coordinate only through a shared
//! store of performance records and checkpoints, so execution can be serial,
//! fully asynchronous, or partially synchronous.
//!
//! Crate layout:
//!
//! * [`core`]: domain types (parameter/hyperparameter vectors, eval windows,
//!   member state) and the elementary predicates of the training loop.
//! * [`stats`]: Welch's t-test and the Student-t tail probability behind it.
//! * [`strategies`]: the exploit selection and explore catalogue.
//! * [`store`]: the shared data-store: publish/snapshot plus checkpoint
//!   save/restore with atomic exploit copy (in-memory or directory-backed).
//! * [`tasks`]: pluggable step/eval pairs, including the two-worker toy
//!   quadratic problem, a noisy quadratic, and seeded logistic regression.
//! * [`engine`]: the member loop, the three execution modes, baselines and
//!   ablation drivers.
//! * [`analysis`]: lineage extraction, phylogenetic trees, curve
//!   aggregation from event logs.
//! * [`config`]: TOML experiment configs and validation.
//! * [`cli`]: the `run` / `suite` / `analyze` commands.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod core;
pub mod engine;
pub mod stats;
pub mod store;
pub mod strategies;
pub mod tasks;

pub use crate::core::{
    EvalWindow, ExploitMask, HyperValue, HyperparamSpec, HyperparamVector, MemberId, MemberState,
    ParamVector, Prior,
};
