//! Piecewise-affine decision rules (PADR) for contextual stochastic programs.
//!
//! A PADR maps features `x` to decisions `z` through a difference of two
//! max-affine functions per decision coordinate. Parameters are learned by
//! empirical risk minimization with a stochastic majorization-minimization
//! loop that samples ε-active index mappings and solves convex proximal
//! subproblems built from convex surrogates of the composite cost.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, data
//! generators and the command-line front end live in the `padr` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cost;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod padr;
pub mod penalty;
pub mod problem;
pub mod qp;
pub mod rng;
pub mod smm;
pub mod subproblem;
pub mod surrogate;

pub use cost::{erm_cost, CostSpec, LowestOuter, OuterPiece, OuterSelector, PaCost, PaOutputCost, RandomOuter};
pub use data::{random_init, Dataset, FeatureScaler, HypothesisConfig, OutputParams, Theta};
pub use error::{PadrError, Result};
pub use padr::{eval_padr, ActiveSets, IndexMapping, InnerSurrogates};
pub use penalty::{ConstraintFn, ConstraintSpec};
pub use problem::Problem;
pub use rng::{RngHandle, Stream, StreamRng};
pub use smm::{multi_start, run_smm, EpsSchedule, OutputRule, SmmConfig, SmmRun, SmmTrace};
pub use surrogate::{ConvexExpr, ConvexSurrogate};
