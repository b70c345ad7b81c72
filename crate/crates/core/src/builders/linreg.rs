use crate::error::{shape, Error, Result};
use crate::linalg::DenseMatrix;
use crate::tf::{BlockSemantic, PromptLayout, TransformerLayer};

use super::{head, padded_identity};

/// Constructed least-squares predictor and the layout of its prompt.
#[derive(Clone, Debug)]
pub struct LinregModel {
    pub layers: Vec<TransformerLayer>,
    pub layout: PromptLayout,
    pub d: usize,
    pub n: usize,
}

fn linreg_layout(d: usize) -> Result<PromptLayout> {
    use BlockSemantic::*;
    PromptLayout::stacked(&[
        ("x", d, IdentityPad),
        ("gram", d, IdentityPad),
        ("identity", d, IdentityPad),
        ("a_t", d, DataMatrix),
        ("a_test", 1, Constant),
        ("labels", 1, Labels),
        ("output", 1, Scratch),
    ])
}

/// `3 + t_steps` layers computing `ŷ = a_testᵀ X_T Aᵀ y`, where `X_T` is
/// `t_steps` Newton iterations on `AᵀA` from `X_0 = αAᵀA`.
pub fn build_linreg_transformer(d: usize, n: usize, t_steps: usize, alpha: f64) -> Result<LinregModel> {
    build_linreg_transformer_with(d, n, t_steps, alpha, None)
}

/// As [`build_linreg_transformer`]; `ridge = Some(μ)` inverts `AᵀA + μI`.
pub fn build_linreg_transformer_with(
    d: usize,
    n: usize,
    t_steps: usize,
    alpha: f64,
    ridge: Option<f64>,
) -> Result<LinregModel> {
    if d == 0 || n < d {
        return Err(Error::Domain(format!("need n >= d >= 1, got d={d}, n={n}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let shift = ridge.unwrap_or(0.0);
    if !(shift >= 0.0) {
        return Err(Error::Domain(format!("ridge shift must be nonnegative, got {shift}")));
    }
    let layout = linreg_layout(d)?;
    let l = &layout;
    let mut layers = Vec::with_capacity(t_steps + 3);

    // x ← α(AᵀA + μI), gram ← AᵀA + μI
    layers.push(TransformerLayer::new(
        vec![
            head(l, |w| w.copy("x", "a_t", alpha)?.copy("gram", "a_t", 1.0), |w| w.copy("x", "a_t", 1.0), |w| w.copy("x", "x", 1.0))?,
            head(
                l,
                |w| w.copy("x", "identity", alpha * shift - 1.0)?.copy("gram", "identity", shift - 1.0),
                |w| w.copy("x", "identity", 1.0),
                |w| w.copy("x", "identity", 1.0),
            )?,
        ],
        None,
    )?);

    // X ← 2X − X R X, valid because R is symmetric
    for _ in 0..t_steps {
        layers.push(TransformerLayer::new(
            vec![
                head(l, |w| w.copy("x", "x", -1.0), |w| w.copy("x", "gram", 1.0), |w| w.copy("x", "x", 1.0))?,
                head(l, |w| w.copy("x", "x", 1.0), |w| w.copy("x", "identity", 1.0), |w| w.copy("x", "identity", 1.0))?,
            ],
            None,
        )?);
    }

    // output ← [yᵀ A X_T, 0]
    layers.push(TransformerLayer::new(
        vec![head(l, |w| w.copy("output", "labels", 1.0), |w| w.copy("x", "a_t", 1.0), |w| w.copy("x", "x", 1.0))?],
        None,
    )?);

    // output ← [yᵀ A X_T a_test, 0, …]
    layers.push(TransformerLayer::new(
        vec![
            head(
                l,
                |w| w.copy("output", "output", 1.0),
                |w| w.copy("output", "a_test", 1.0),
                |w| w.entry("output", 0, "identity", 0, 1.0),
            )?,
            head(l, |w| w.copy("output", "output", -1.0), |w| w.copy("x", "identity", 1.0), |w| w.copy("x", "identity", 1.0))?,
        ],
        None,
    )?);

    Ok(LinregModel { layers, layout, d, n })
}

/// `(I 0; I 0; I 0; Aᵀ; a_testᵀ 0; yᵀ; 0)`.
pub fn linreg_prompt(model: &LinregModel, a: &DenseMatrix, y: &[f64], a_test: &[f64]) -> Result<DenseMatrix> {
    let (d, n) = (model.d, model.n);
    if a.shape() != (n, d) || y.len() != n || a_test.len() != d {
        return Err(shape(
            "linreg_prompt",
            format!("a {:?}, y {}, a_test {} for d={d}, n={n}", a.shape(), y.len(), a_test.len()),
        ));
    }
    let l = &model.layout;
    let mut h = DenseMatrix::zeros(l.dim(), n);
    let pad = padded_identity(d, n);
    for name in ["x", "gram", "identity"] {
        l.fill(&mut h, name, &pad)?;
    }
    l.fill(&mut h, "a_t", &a.transpose())?;
    let mut test_row = DenseMatrix::zeros(1, n);
    test_row.row_mut(0)[..d].copy_from_slice(a_test);
    l.fill(&mut h, "a_test", &test_row)?;
    l.fill(&mut h, "labels", &DenseMatrix::from_vec(1, n, y.to_vec())?)?;
    Ok(h)
}

/// `ŷ` from the first column of the output row.
pub fn read_prediction(model: &LinregModel, h: &DenseMatrix) -> Result<f64> {
    let row = model.layout.row("output")?;
    if h.rows() != model.layout.dim() {
        return Err(shape("read_prediction", format!("prompt has {} rows", h.rows())));
    }
    Ok(h[(row, 0)])
}
