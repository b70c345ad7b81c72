//! Newton-type solvers (matrix inversion, damped Newton on regularized
//! logistic regression) and linear-attention Transformer weights that
//! reproduce them exactly or to a chosen accuracy.

pub mod builders;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod logistic;
pub mod newton_inverse;
pub mod relu_approx;
pub mod rng;
pub mod tf;

pub use builders::{
    build_inversion_block, build_linreg_transformer, build_logreg_newton_step, width_depth_budget, BudgetReport,
    LinregModel, LogregStack,
};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use logistic::{IterateTrace, LogisticProblem, NewtonState};
pub use newton_inverse::InverseRun;
pub use relu_approx::{PwlApprox, PwlProduct};
pub use tf::{model_forward, PromptLayout, TransformerLayer};
