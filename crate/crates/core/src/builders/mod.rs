//! Mechanical weight constructions: one Newton inversion step, least
//! squares by in-context Newton iterations, and one damped Newton step on
//! the logistic loss, plus the width/depth budget for the latter.

mod budget;
mod inversion;
mod linreg;
mod logreg;

pub use budget::{width_depth_budget, BudgetReport, DEFAULT_PIECE_CEILING, MIN_PIECES};
pub use inversion::{build_inversion_block, inversion_layout, inversion_prompt, newton_layers};
pub use linreg::{
    build_linreg_transformer, build_linreg_transformer_with, linreg_prompt, read_prediction, LinregModel,
};
pub use logreg::{build_logreg_newton_step, LogregStack, StepGeometry};

use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::tf::{AttentionHead, BlockWeights, PromptLayout};

/// Builds a head from three weight closures over a fresh [`BlockWeights`].
pub(crate) fn head<'a>(
    layout: &'a PromptLayout,
    v: impl FnOnce(BlockWeights<'a>) -> Result<BlockWeights<'a>>,
    k: impl FnOnce(BlockWeights<'a>) -> Result<BlockWeights<'a>>,
    q: impl FnOnce(BlockWeights<'a>) -> Result<BlockWeights<'a>>,
) -> Result<AttentionHead> {
    AttentionHead::new(
        v(BlockWeights::new(layout))?.build(),
        k(BlockWeights::new(layout))?.build(),
        q(BlockWeights::new(layout))?.build(),
    )
}

/// `[I_d 0]` with `cols` columns.
pub(crate) fn padded_identity(d: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(d, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}
