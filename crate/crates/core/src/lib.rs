//! Recursive log-mean linear regression models for multivariate binary data,
//! and the decomposition of marginal relative risks into conditional relative
//! risks and deviation terms.
//!
//! The library covers the full pipeline: contingency-table ingestion, block
//! model designs with independence-derived zero constraints, constrained
//! maximum-likelihood fitting with standard errors and model comparison, and
//! the relative-risk decomposition with an exhaustive marginalization oracle.

pub mod decomposition;
pub mod error;
pub mod estimation;
pub mod model;
pub mod modelfile;
pub mod subsets;
pub mod tables;

pub use error::{Error, Result};
pub use model::{
    build_design, cells_to_params, constraints_from_independence, BlockDesign, BlockId,
    BlockStructure, Design, IndepStatement, LogMeanParams, ModelParams, ParamKey,
    ZeroConstraints,
};
pub use subsets::{moebius_invert, zeta_transform, MarginVector, Subset, VarSet};
pub use tables::{ContingencyTable, EmpiricalConditional, TableSchema};
