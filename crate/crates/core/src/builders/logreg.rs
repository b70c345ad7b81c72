//! One damped Newton step on the regularized logistic loss as a stack of
//! `11 + 2k` linear-attention layers.
//!
//! Prompt blocks, top to bottom (`6d + 4` rows, `n` columns):
//!
//! | block       | rows | holds at entry and exit            |
//! |-------------|------|------------------------------------|
//! | `inv`       | d    | `[I 0]`                            |
//! | `hess`      | d    | `[I 0]`                            |
//! | `identity`  | d    | `[I 0]`                            |
//! | `work`      | d    | `0`                                |
//! | `a_t`       | d    | `Aᵀ`                               |
//! | `labels`    | 1    | `yᵀ`                               |
//! | `iterate`   | d    | `x 1ᵀ`                             |
//! | `e1_over_n` | 1    | `e₁ᵀ/n`                            |
//! | `scratch`   | 1    | `0`                                |
//! | `ones`      | 1    | `1ᵀ`                               |

use crate::error::{shape, Error, Result};
use crate::linalg::{spectral_norm_est, DenseMatrix};
use crate::logistic::{loss_grad_hess, LogisticProblem};
use crate::newton_inverse::{DEFAULT_SAFETY, POWER_ITERS};
use crate::relu_approx::{build_pwl, logistic_tail, sigmoid_derivative, step_size_fn, PwlApprox, PwlProduct};
use crate::tf::{layer_forward, BlockSemantic, FfnBuilder, PromptLayout, TransformerLayer};

use super::budget::BudgetReport;
use super::inversion::newton_layers;
use super::{head, padded_identity};

/// Gate of the label-selected branches in the probability layer.
const LABEL_GATE: f64 = 50.0;

/// Gate of the final scratch cleanup, `σ(−x/2 + M) − σ(x/2 + M) = −x`.
const CLEANUP_GATE: f64 = 5.0;

/// Default half-width of the margin domain; outside it both margin
/// functions are within 5e-5 of their clamped end values.
const MARGIN_DOMAIN: f64 = 10.0;

/// Margin on the `‖x‖ ≤ C` bound when that bound exceeds [`MARGIN_DOMAIN`].
const MARGIN_SLACK: f64 = 1.25;

/// Domain of the curvature-weight input to the products; the weights live
/// in `(0, 1/4]` and the slack absorbs interpolation error.
const CURVATURE_RANGE: (f64, f64) = (-0.05, 0.3);

/// Domains and gates the construction was sized for. [`LogregStack::run`]
/// checks the exactness conditions of the gadgets against these.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGeometry {
    /// PWL domain `[−Z, Z]` for the margins `xᵀaᵢ`.
    pub margin_range: f64,
    pub curvature_range: (f64, f64),
    pub label_gate: f64,
    pub cleanup_gate: f64,
    /// PWL domain `[0, z_max]` for the squared decrement.
    pub z_max: f64,
}

#[derive(Clone, Debug)]
pub struct LogregStack {
    pub layers: Vec<TransformerLayer>,
    pub layout: PromptLayout,
    pub problem: LogisticProblem,
    pub budget: BudgetReport,
    pub geometry: StepGeometry,
    /// Scale of the initial inverse guess `X₀ = α∇̂²f`.
    pub alpha: f64,
    pub k: usize,
}

fn logreg_layout(d: usize) -> Result<PromptLayout> {
    use BlockSemantic::*;
    PromptLayout::stacked(&[
        ("inv", d, IdentityPad),
        ("hess", d, IdentityPad),
        ("identity", d, IdentityPad),
        ("work", d, Scratch),
        ("a_t", d, DataMatrix),
        ("labels", 1, Labels),
        ("iterate", d, Iterate),
        ("e1_over_n", 1, Constant),
        ("scratch", 1, Scratch),
        ("ones", 1, Ones),
    ])
}

/// Rows used by the feed-forward wiring.
struct Rows {
    scratch: usize,
    ones: usize,
    labels: usize,
    a_t: usize,
    work: usize,
}

impl Rows {
    fn new(l: &PromptLayout) -> Result<Self> {
        Ok(Self {
            scratch: l.row("scratch")?,
            ones: l.row("ones")?,
            labels: l.row("labels")?,
            a_t: l.row("a_t")?,
            work: l.row("work")?,
        })
    }
}

/// `scratch ← f̂(scratch)` for a clamped PWL `f̂`, as constant plus ReLUs
/// minus the identity on `scratch`.
fn scalar_pwl_ffn(b: &mut FfnBuilder, r: &Rows, f: &PwlApprox) {
    let e = f.relu_expansion();
    b.unit(&[(r.ones, 1.0)], &[(r.scratch, e.constant)]);
    for u in &e.units {
        b.unit(&[(r.scratch, u.scale), (r.ones, u.bias)], &[(r.scratch, u.weight)]);
    }
    clear_scratch(b, r);
}

/// Adds `−scratch` exactly through `σ(t) − σ(−t) = t`.
fn clear_scratch(b: &mut FfnBuilder, r: &Rows) {
    b.unit(&[(r.scratch, 1.0)], &[(r.scratch, -1.0)]);
    b.unit(&[(r.scratch, -1.0)], &[(r.scratch, 1.0)]);
}

/// Attention head writing `xᵀaᵢ` into column `i` of `scratch`.
fn margin_head(l: &PromptLayout) -> Result<crate::tf::AttentionHead> {
    head(
        l,
        |w| w.entry("scratch", 0, "identity", 0, 1.0),
        |w| w.copy("iterate", "iterate", 1.0),
        |w| w.copy("iterate", "a_t", 1.0),
    )
}

/// Two heads that together scale `scratch` by `1/n` using the `e₁ᵀ/n` row.
fn divide_scratch_by_n(l: &PromptLayout) -> Result<Vec<crate::tf::AttentionHead>> {
    Ok(vec![
        head(
            l,
            |w| w.entry("scratch", 0, "identity", 0, 1.0),
            |w| w.copy("scratch", "e1_over_n", 1.0),
            |w| w.copy("scratch", "scratch", 1.0),
        )?,
        head(
            l,
            |w| w.entry("scratch", 0, "identity", 0, -1.0),
            |w| w.entry("scratch", 0, "identity", 0, 1.0),
            |w| w.copy("scratch", "scratch", 1.0),
        )?,
    ])
}

/// Head adding `c·[I 0]` to `dst` (and nothing else) via `[I 0]ᵀ[I 0]`.
fn add_identity_head<'a>(
    l: &'a PromptLayout,
    v: impl FnOnce(crate::tf::BlockWeights<'a>) -> Result<crate::tf::BlockWeights<'a>>,
) -> Result<crate::tf::AttentionHead> {
    head(l, v, |w| w.copy("work", "identity", 1.0), |w| w.copy("work", "identity", 1.0))
}

/// `α = 2·safety/σ̂(∇²f(0))²`. Every curvature weight is at most its value
/// at the origin, so `∇²f(x) ≼ ∇²f(0)` and one `α` serves every iterate.
fn inversion_alpha(p: &LogisticProblem) -> Result<f64> {
    let (_, _, h0) = loss_grad_hess(p, &vec![0.0; p.d()])?;
    let sigma = spectral_norm_est(&h0, POWER_ITERS, 0);
    Ok(2.0 * DEFAULT_SAFETY / (sigma * sigma))
}

fn check_budget(p: &LogisticProblem, b: &BudgetReport, alpha: f64) -> Result<()> {
    if b.depth != 11 + 2 * b.k {
        return Err(Error::Budget(format!("depth {} is not 11 + 2k for k = {}", b.depth, b.k)));
    }
    if b.d != p.d() {
        return Err(Error::Budget(format!("budget sized for d = {}, problem has d = {}", b.d, p.d())));
    }
    if (b.mu - p.mu).abs() > 1e-15 * p.mu.max(1.0) {
        return Err(Error::Budget(format!("budget sized for mu = {}, problem has mu = {}", b.mu, p.mu)));
    }
    // ‖I − αB²‖ with the spectrum of B in [μ, σ̂]: the two ends give 1 − αμ² and
    // |1 − 2·safety|.
    let r0 = (1.0 - alpha * p.mu * p.mu).abs().max((1.0 - 2.0 * DEFAULT_SAFETY).abs());
    let target = (b.target_eps * p.mu).powi(2) / (1.0 + p.mu).powi(3);
    let reached = r0.powf(2f64.powi(b.k.min(1000) as i32));
    if reached > target {
        return Err(Error::Budget(format!(
            "inversion bound: k = {} steps leave residual {reached:e} > {target:e} (r0 = {r0}); kappa_f is too small",
            b.k
        )));
    }
    Ok(())
}

/// Builds the `11 + 2k` layers of one damped Newton step for `p`.
///
/// The weights depend on `n`, `d`, `μ` and the inversion scale `α`; the
/// data `A`, `y` and the iterate enter only through the prompt.
pub fn build_logreg_newton_step(p: &LogisticProblem, budget: &BudgetReport) -> Result<LogregStack> {
    let (n, d, mu) = (p.n(), p.d(), p.mu);
    if n < d {
        return Err(Error::Domain(format!("need n >= d, got d={d}, n={n}")));
    }
    let alpha = inversion_alpha(p)?;
    check_budget(p, budget, alpha)?;

    let layout = logreg_layout(d)?;
    let l = &layout;
    let dim = l.dim();
    let r = Rows::new(l)?;
    let nf = n as f64;
    let z = MARGIN_DOMAIN.max(MARGIN_SLACK * budget.norm_bound);
    let geometry = StepGeometry {
        margin_range: z,
        curvature_range: CURVATURE_RANGE,
        label_gate: LABEL_GATE,
        cleanup_gate: CLEANUP_GATE,
        z_max: budget.z_max(),
    };

    let curvature = build_pwl(sigmoid_derivative, -z, z, budget.u1_pieces)?;
    let product = PwlProduct::new(CURVATURE_RANGE, (-1.0, 1.0), budget.u2_pieces)?;
    let prob = build_pwl(logistic_tail, -z, z, budget.u3_pieces)?;
    let step = build_pwl(step_size_fn(mu), 0.0, geometry.z_max, budget.eps4_pieces)?;

    let mut layers = Vec::with_capacity(budget.depth);

    // Step 1: scratch ← pᵢ(1 − pᵢ) from the margins.
    let mut ffn = FfnBuilder::new();
    scalar_pwl_ffn(&mut ffn, &r, &curvature);
    layers.push(TransformerLayer::new(vec![margin_head(l)?], Some(ffn.build(dim)?))?);

    // Step 2: work ← D̂Aᵀ/n through quarter-square products, then clear scratch.
    let mut ffn = FfnBuilder::new();
    let sum = product.square_sum.relu_expansion();
    let diff = product.square_diff.relu_expansion();
    let q = 1.0 / (4.0 * nf);
    for k in 0..d {
        let (a, out) = (r.a_t + k, r.work + k);
        ffn.unit(&[(r.ones, 1.0)], &[(out, (sum.constant - diff.constant) * q)]);
        for u in &sum.units {
            ffn.unit(&[(r.scratch, u.scale * nf), (a, u.scale), (r.ones, u.bias)], &[(out, u.weight * q)]);
        }
        for u in &diff.units {
            ffn.unit(&[(r.scratch, u.scale * nf), (a, -u.scale), (r.ones, u.bias)], &[(out, -u.weight * q)]);
        }
    }
    clear_scratch(&mut ffn, &r);
    layers.push(TransformerLayer::new(divide_scratch_by_n(l)?, Some(ffn.build(dim)?))?);

    // Step 3a: hess ← [B 0], inv ← α[B 0] with B = work·A + μI; work ← 0.
    layers.push(TransformerLayer::new(
        vec![
            head(
                l,
                |w| w.copy("inv", "a_t", alpha)?.copy("hess", "a_t", 1.0),
                |w| w.copy("work", "work", 1.0),
                |w| w.copy("work", "identity", 1.0),
            )?,
            add_identity_head(l, |w| {
                w.copy("inv", "identity", alpha * mu - 1.0)?.copy("hess", "identity", mu - 1.0)
            })?,
            head(l, |w| w.copy("work", "identity", 1.0), |w| w.copy("work", "identity", 1.0), |w| {
                w.copy("work", "work", -1.0)
            })?,
        ],
        None,
    )?);

    // Step 3b: hess ← [Bᵀ 0], the layout the inversion layers read.
    layers.push(TransformerLayer::new(
        vec![
            head(l, |w| w.copy("hess", "identity", 1.0), |w| w.copy("work", "hess", 1.0), |w| {
                w.copy("work", "identity", 1.0)
            })?,
            add_identity_head(l, |w| w.copy("hess", "hess", -1.0))?,
        ],
        None,
    )?);

    // Step 4: inv ← X_k ≈ B⁻¹.
    for _ in 0..budget.k {
        layers.extend(newton_layers(l, "inv", "hess", "work", "identity")?);
    }

    // Step 5: scratch ← p̂ᵢ = q̂(yᵢ xᵀaᵢ); hess ← [I 0].
    let mut ffn = FfnBuilder::new();
    let e = prob.relu_expansion();
    ffn.unit(&[(r.ones, 1.0)], &[(r.scratch, e.constant)]);
    for u in &e.units {
        let base = u.bias - LABEL_GATE;
        ffn.unit(&[(r.scratch, u.scale), (r.ones, base), (r.labels, LABEL_GATE)], &[(r.scratch, u.weight)]);
        ffn.unit(&[(r.scratch, -u.scale), (r.ones, base), (r.labels, -LABEL_GATE)], &[(r.scratch, u.weight)]);
    }
    clear_scratch(&mut ffn, &r);
    layers.push(TransformerLayer::new(
        vec![
            margin_head(l)?,
            add_identity_head(l, |w| w.copy("hess", "hess", -1.0)?.copy("hess", "identity", 1.0))?,
        ],
        Some(ffn.build(dim)?),
    )?);

    // Step 6: scratch ← yᵢp̂ᵢ/n through the four-ReLU signed copy.
    let mut ffn = FfnBuilder::new();
    for (sx, sy, out) in [(0.5, 2.0, 1.0), (-0.5, 2.0, -1.0), (-0.5, -2.0, 1.0), (0.5, -2.0, -1.0)] {
        ffn.unit(&[(r.scratch, sx), (r.labels, sy)], &[(r.scratch, out)]);
    }
    clear_scratch(&mut ffn, &r);
    layers.push(TransformerLayer::new(divide_scratch_by_n(l)?, Some(ffn.build(dim)?))?);

    // Step 7: hess ← [∇̂f 0] with ∇̂f = −(1/n)Σ yᵢp̂ᵢaᵢ + μx; scratch ← 0.
    let mut ffn = FfnBuilder::new();
    clear_scratch(&mut ffn, &r);
    layers.push(TransformerLayer::new(
        vec![
            head(l, |w| w.copy("hess", "a_t", -1.0), |w| w.copy("scratch", "scratch", 1.0), |w| {
                w.entry("scratch", 0, "identity", 0, 1.0)
            })?,
            add_identity_head(l, |w| w.copy("hess", "identity", -1.0))?,
            head(
                l,
                |w| w.copy("hess", "iterate", 1.0),
                |w| w.entry("scratch", 0, "identity", 0, 1.0),
                |w| w.entry("scratch", 0, "identity", 0, mu),
            )?,
        ],
        Some(ffn.build(dim)?),
    )?);

    // Step 8a: inv ← [v 0] with v = X_k ∇̂f.
    layers.push(TransformerLayer::new(
        vec![
            head(l, |w| w.copy("inv", "inv", 1.0), |w| w.copy("work", "identity", 1.0), |w| {
                w.copy("work", "hess", 1.0)
            })?,
            add_identity_head(l, |w| w.copy("inv", "inv", -1.0))?,
        ],
        None,
    )?);

    // Step 8b: scratch ← [η̂, 1, …, 1] from λ̂² = ∇̂fᵀv in column 0.
    let mut ffn = FfnBuilder::new();
    scalar_pwl_ffn(&mut ffn, &r, &step);
    layers.push(TransformerLayer::new(
        vec![head(l, |w| w.entry("scratch", 0, "identity", 0, 1.0), |w| w.copy("work", "hess", 1.0), |w| {
            w.copy("work", "inv", 1.0)
        })?],
        Some(ffn.build(dim)?),
    )?);

    // Step 9a: scratch ← [η̂vᵀ, 1, …, 1].
    layers.push(TransformerLayer::new(
        vec![
            head(l, |w| w.copy("scratch", "scratch", 1.0), |w| w.copy("work", "inv", 1.0), |w| {
                w.copy("work", "identity", 1.0)
            })?,
            add_identity_head(l, |w| w.copy("scratch", "scratch", -1.0))?,
        ],
        None,
    )?);

    // Step 9b: x ← x − η̂v; inv, hess ← [I 0]; scratch ← 0.
    let mut ffn = FfnBuilder::new();
    ffn.unit(&[(r.scratch, -0.5), (r.ones, CLEANUP_GATE)], &[(r.scratch, 1.0)]);
    ffn.unit(&[(r.scratch, 0.5), (r.ones, CLEANUP_GATE)], &[(r.scratch, -1.0)]);
    layers.push(TransformerLayer::new(
        vec![
            head(l, |w| w.copy("iterate", "identity", -1.0), |w| w.copy("scratch", "scratch", 1.0), |w| {
                w.copy("scratch", "ones", 1.0)
            })?,
            add_identity_head(l, |w| {
                w.copy("inv", "inv", -1.0)?
                    .copy("inv", "identity", 1.0)?
                    .copy("hess", "hess", -1.0)?
                    .copy("hess", "identity", 1.0)
            })?,
        ],
        Some(ffn.build(dim)?),
    )?);

    if layers.len() != budget.depth {
        return Err(Error::Build(format!("built {} layers, budget says {}", layers.len(), budget.depth)));
    }
    Ok(LogregStack { layers, layout, problem: p.clone(), budget: budget.clone(), geometry, alpha, k: budget.k })
}

impl LogregStack {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Hidden units summed over all feed-forward blocks.
    pub fn total_ffn_width(&self) -> usize {
        self.layers.iter().filter_map(|l| l.ffn.as_ref()).map(|f| f.width()).sum()
    }

    fn step_index(&self, step: usize) -> usize {
        // steps 5..=9b follow the 4 + 2k leading layers
        4 + 2 * self.k + (step - 5)
    }

    /// The prompt carrying the stored problem and iterate `x`.
    pub fn prompt(&self, x: &[f64]) -> Result<DenseMatrix> {
        let p = &self.problem;
        let (n, d) = (p.n(), p.d());
        if x.len() != d {
            return Err(shape("LogregStack::prompt", format!("x has length {}, expected {d}", x.len())));
        }
        let l = &self.layout;
        let mut h = DenseMatrix::zeros(l.dim(), n);
        let pad = padded_identity(d, n);
        for name in ["inv", "hess", "identity"] {
            l.fill(&mut h, name, &pad)?;
        }
        l.fill(&mut h, "a_t", &p.a.transpose())?;
        l.fill(&mut h, "labels", &DenseMatrix::from_fn(1, n, |_, j| f64::from(p.y[j])))?;
        l.fill(&mut h, "iterate", &DenseMatrix::from_fn(d, n, |i, _| x[i]))?;
        l.fill(&mut h, "e1_over_n", &DenseMatrix::from_fn(1, n, |_, j| if j == 0 { 1.0 / n as f64 } else { 0.0 }))?;
        l.fill(&mut h, "ones", &DenseMatrix::from_fn(1, n, |_, _| 1.0))?;
        Ok(h)
    }

    /// `x` from the first column of the iterate block.
    pub fn read_iterate(&self, h: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.layout.extract(h, "iterate")?.col(0))
    }

    /// Forward pass that checks, layer by layer, the input ranges under
    /// which the gadgets are exact.
    pub fn run(&self, h0: &DenseMatrix) -> Result<DenseMatrix> {
        let g = &self.geometry;
        let scratch = self.layout.row("scratch")?;
        let fail = |index: usize, msg: String| Error::Layer { index, source: Box::new(Error::Domain(msg)) };

        // The label gate needs |xᵀaᵢ| < 2G − Z for the inactive branch to stay dead.
        let x = self.read_iterate(h0)?;
        let limit = 2.0 * g.label_gate - g.margin_range;
        for (i, m) in self.problem.margins(&x)?.iter().enumerate() {
            if m.abs() >= limit {
                return Err(fail(self.step_index(5), format!("margin {m} of sample {i} exceeds label gate limit {limit}")));
            }
        }

        let mut h = h0.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            h = layer_forward(layer, &h).map_err(|e| Error::Layer { index, source: Box::new(e) })?;
            let row = h.row(scratch);
            if index == 0 {
                let (lo, hi) = g.curvature_range;
                if let Some(v) = row.iter().find(|v| !(**v >= lo && **v <= hi)) {
                    return Err(fail(index + 1, format!("curvature weight {v} outside product range [{lo}, {hi}]")));
                }
            } else if index == self.step_index(5) {
                let n = self.problem.n() as f64;
                if let Some(v) = row.iter().find(|v| !(**v > 0.0 && **v < n)) {
                    return Err(fail(index + 1, format!("probability {v} leaves the signed-copy range (0, n)")));
                }
            } else if index == self.step_index(5) + 4 {
                let limit = 2.0 * g.cleanup_gate;
                if let Some(v) = row.iter().find(|v| !(v.abs() < limit)) {
                    return Err(fail(index + 1, format!("scratch value {v} exceeds cleanup limit {limit}")));
                }
            }
        }
        Ok(h)
    }

    /// One constructed damped Newton step from `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.run(&self.prompt(x)?)?;
        self.read_iterate(&h)
    }
}
