use serde::Serialize;

use crate::error::{Error, Result};

/// Default ceiling on pieces per approximator.
pub const DEFAULT_PIECE_CEILING: u64 = 1 << 20;

/// No approximator is built with fewer pieces than this.
pub const MIN_PIECES: usize = 16;

// Reference configuration at which the piece counts below were found to
// meet the end-to-end target with margin. Elsewhere each count follows the
// corresponding width law, rounded up to a power of two so that refining
// nests the previous knots.
const REF_EPS: f64 = 1e-2;
const REF_MU: f64 = 0.1;
const REF_D: usize = 5;
const REF_U1: f64 = 1000.0;
const REF_U2: f64 = 1000.0;
const REF_U3: f64 = 1000.0;
const REF_EPS4: f64 = 3000.0;

/// Widths and depth of the one-step logistic construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetReport {
    pub target_eps: f64,
    pub mu: f64,
    pub kappa_f: f64,
    pub d: usize,
    /// Bound on `‖x‖` over the sublevel set `{f ≤ f(0)}`: `√(2 ln 2 / μ)`.
    pub norm_bound: f64,
    /// Newton steps used to invert the Hessian.
    pub k: usize,
    /// `11 + 2k`.
    pub depth: usize,
    /// Pieces for the curvature weights `pᵢ(1 − pᵢ)`.
    pub u1_pieces: usize,
    /// Pieces per square in the quarter-square products.
    #[serde(rename = "U2_pieces")]
    pub u2_pieces: usize,
    /// Pieces for the probabilities `pᵢ`.
    pub u3_pieces: usize,
    /// Pieces for the step size `2√μ/(2√μ + √z)`.
    pub eps4_pieces: usize,
}

impl BudgetReport {
    /// Upper end of the step-size domain. On the sublevel set
    /// `‖∇f‖ ≤ 1 + μC` and `∇²f ≽ μI`, so `λ_f² ≤ (1 + μC)²/μ`.
    pub fn z_max(&self) -> f64 {
        (1.0 + self.mu * self.norm_bound).powi(2) / self.mu
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

fn norm_bound(mu: f64) -> f64 {
    (2.0 * std::f64::consts::LN_2 / mu).sqrt()
}

/// Width laws as functions of `(ε, μ, d)` with `ρ = 1 + μC`.
struct Laws {
    u1: f64,
    u2: f64,
    u3: f64,
    eps4: f64,
}

fn laws(eps: f64, mu: f64, d: usize) -> Laws {
    let rho = 1.0 + mu * norm_bound(mu);
    Laws {
        u1: rho.powi(4) / (eps.powi(2) * mu.powi(5)),
        u2: d as f64 * rho.powi(8) / (eps.powi(4) * mu.powi(10)),
        u3: rho.powi(3) / (eps.powi(2) * mu.powi(4)),
        eps4: rho / (eps * mu),
    }
}

fn pieces(field: &'static str, raw: f64, ceiling: u64) -> Result<usize> {
    let raw = raw.max(MIN_PIECES as f64);
    let exp = raw.log2().ceil();
    if !exp.is_finite() || exp >= 63.0 || (1u64 << exp as u32) > ceiling {
        let need = if exp.is_finite() && exp < 63.0 { 1u64 << exp as u32 } else { u64::MAX };
        return Err(Error::BudgetOverflow { field, pieces: need, ceiling });
    }
    Ok(1usize << exp as u32)
}

/// Piece counts and inversion depth for a target per-step error `eps`.
///
/// `k = ⌈2 log₂ κ_f + log₂ log₂((1+μ)³/(ε²μ²))⌉` (at least 1). Piece counts
/// follow `ρ⁴/(ε²μ⁵)`, `dρ⁸/(ε⁴μ¹⁰)`, `ρ³/(ε²μ⁴)` and `ρ/(εμ)` for the four
/// approximators, scaled to the calibrated reference counts.
pub fn width_depth_budget(eps: f64, mu: f64, kappa_f: f64, d: usize) -> Result<BudgetReport> {
    width_depth_budget_with_ceiling(eps, mu, kappa_f, d, DEFAULT_PIECE_CEILING)
}

pub fn width_depth_budget_with_ceiling(
    eps: f64,
    mu: f64,
    kappa_f: f64,
    d: usize,
    ceiling: u64,
) -> Result<BudgetReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must be in (0, 1), got {eps}")));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    if !(kappa_f >= 1.0) || !kappa_f.is_finite() {
        return Err(Error::Domain(format!("kappa_f must be >= 1, got {kappa_f}")));
    }
    if d == 0 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    let inner = (1.0 + mu).powi(3) / (eps * eps * mu * mu);
    let loglog = if inner > 2.0 { inner.log2().log2() } else { 0.0 };
    let k = ((2.0 * kappa_f.log2() + loglog).ceil() as usize).max(1);
    let (now, reference) = (laws(eps, mu, d), laws(REF_EPS, REF_MU, REF_D));
    Ok(BudgetReport {
        target_eps: eps,
        mu,
        kappa_f,
        d,
        norm_bound: norm_bound(mu),
        k,
        depth: 11 + 2 * k,
        u1_pieces: pieces("u1_pieces", REF_U1 * now.u1 / reference.u1, ceiling)?,
        u2_pieces: pieces("U2_pieces", REF_U2 * now.u2 / reference.u2, ceiling)?,
        u3_pieces: pieces("u3_pieces", REF_U3 * now.u3 / reference.u3, ceiling)?,
        eps4_pieces: pieces("eps4_pieces", REF_EPS4 * now.eps4 / reference.eps4, ceiling)?,
    })
}
