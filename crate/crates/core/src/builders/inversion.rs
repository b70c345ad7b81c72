use crate::error::{shape, Error, Result};
use crate::linalg::DenseMatrix;
use crate::tf::{BlockSemantic, PromptLayout, TransformerLayer};

use super::head;

/// `(X; Aᵀ; 0; I)`, each block `d` rows.
pub fn inversion_layout(d: usize) -> Result<PromptLayout> {
    use BlockSemantic::*;
    PromptLayout::stacked(&[("x", d, Iterate), ("a_t", d, DataMatrix), ("scratch", d, Scratch), ("identity", d, IdentityPad)])
}

/// Stacks `(X₀; Aᵀ; 0; I)` into a `4d×d` prompt.
pub fn inversion_prompt(x0: &DenseMatrix, a: &DenseMatrix) -> Result<DenseMatrix> {
    let d = a.rows();
    if !a.is_square() || x0.shape() != (d, d) {
        return Err(shape("inversion_prompt", format!("x0 {:?}, a {:?}", x0.shape(), a.shape())));
    }
    let layout = inversion_layout(d)?;
    let mut h = DenseMatrix::zeros(4 * d, d);
    layout.fill(&mut h, "x", x0)?;
    layout.fill(&mut h, "a_t", &a.transpose())?;
    layout.fill(&mut h, "identity", &DenseMatrix::identity(d))?;
    Ok(h)
}

/// Two attention-only layers mapping `X ↦ X(2I − AX)` where the block
/// `a_t` holds `Aᵀ` (padded with zero columns is fine).
///
/// Layer 1 writes `I·(Aᵀ)ᵀ·X = AX` into `scratch`. Layer 2 adds `−X(AX)`
/// and `X` to `x` and clears `scratch`.
pub fn newton_layers(
    layout: &PromptLayout,
    x: &str,
    a_t: &str,
    scratch: &str,
    identity: &str,
) -> Result<[TransformerLayer; 2]> {
    let first = TransformerLayer::new(
        vec![head(
            layout,
            |w| w.copy(scratch, identity, 1.0),
            |w| w.copy(x, a_t, 1.0),
            |w| w.copy(x, x, 1.0),
        )?],
        None,
    )?;
    let second = TransformerLayer::new(
        vec![
            head(layout, |w| w.copy(x, x, 1.0), |w| w.copy(x, identity, 1.0), |w| w.copy(x, scratch, -1.0))?,
            head(
                layout,
                |w| w.copy(x, x, 1.0)?.copy(scratch, scratch, -1.0),
                |w| w.copy(x, identity, 1.0),
                |w| w.copy(x, identity, 1.0),
            )?,
        ],
        None,
    )?;
    Ok([first, second])
}

/// The two-layer Newton step on `4d×d` prompts `(X₀; Aᵀ; 0; I)`.
pub fn build_inversion_block(d: usize) -> Result<Vec<TransformerLayer>> {
    if d == 0 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    let layout = inversion_layout(d)?;
    Ok(newton_layers(&layout, "x", "a_t", "scratch", "identity")?.into())
}
