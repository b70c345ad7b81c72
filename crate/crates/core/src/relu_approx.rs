//! Piecewise-linear scalar approximators and the exact ReLU gadgets that
//! the logistic construction wires into feed-forward layers.
//!
//! Every approximator here can be rewritten as a constant plus a sum of
//! scaled ReLUs ([`ReluExpansion`]), which is how the weight builders turn
//! it into `W₁`/`W₂` rows.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::fmt_f64;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Continuous piecewise-linear interpolant on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PwlApprox {
    pub lo: f64,
    pub hi: f64,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub clamp_outside: bool,
}

/// Samples `f` on `pieces + 1` uniform knots. The result clamps outside
/// `[lo, hi]`; flip `clamp_outside` for end-segment extrapolation.
pub fn build_pwl(f: impl Fn(f64) -> f64, lo: f64, hi: f64, pieces: usize) -> Result<PwlApprox> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    if pieces == 0 {
        return Err(Error::Domain("pieces must be at least 1".into()));
    }
    let width = hi - lo;
    let knots: Vec<f64> = (0..=pieces)
        .map(|i| if i == pieces { hi } else { lo + width * (i as f64 / pieces as f64) })
        .collect();
    let values: Vec<f64> = knots.iter().map(|&k| f(k)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Build(format!("f is not finite at knot {}", knots[i])));
    }
    Ok(PwlApprox { lo, hi, knots, values, clamp_outside: true })
}

impl PwlApprox {
    pub fn pieces(&self) -> usize {
        self.knots.len() - 1
    }

    fn slope(&self, i: usize) -> f64 {
        (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i])
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_pwl(self, x)
    }

    /// Rewrites the interpolant as `c + Σ wᵢ σ(sᵢ z + bᵢ)`.
    ///
    /// With clamping, each segment contributes `σ(z − kᵢ) − σ(z − kᵢ₊₁)`,
    /// which merges into one unit per knot. Without clamping, the first
    /// segment's line is written as `σ(z − k₀) − σ(k₀ − z)` and the last
    /// knot gets no unit.
    pub fn relu_expansion(&self) -> ReluExpansion {
        let p = self.pieces();
        let mut units = Vec::with_capacity(p + 2);
        let s0 = self.slope(0);
        units.push(ReluUnit { weight: s0, scale: 1.0, bias: -self.knots[0] });
        if !self.clamp_outside {
            units.push(ReluUnit { weight: -s0, scale: -1.0, bias: self.knots[0] });
        }
        for i in 1..p {
            let w = self.slope(i) - self.slope(i - 1);
            if w != 0.0 {
                units.push(ReluUnit { weight: w, scale: 1.0, bias: -self.knots[i] });
            }
        }
        if self.clamp_outside {
            units.push(ReluUnit { weight: -self.slope(p - 1), scale: 1.0, bias: -self.knots[p] });
        }
        ReluExpansion { constant: self.values[0], units }
    }

    /// `knot,value` pairs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "knot,value")?;
        for (k, v) in self.knots.iter().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(*k), fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// Interpolates inside `[lo, hi]`; clamps or extrapolates outside.
pub fn eval_pwl(p: &PwlApprox, x: f64) -> f64 {
    let last = p.knots.len() - 1;
    if x <= p.lo || x >= p.hi {
        let (end, seg) = if x <= p.lo { (0, 0) } else { (last, last - 1) };
        if x == p.knots[end] || p.clamp_outside {
            return p.values[end];
        }
        return p.values[end] + p.slope(seg) * (x - p.knots[end]);
    }
    // first knot strictly greater than x
    let j = p.knots.partition_point(|&k| k <= x);
    let i = j - 1;
    if x == p.knots[i] {
        return p.values[i];
    }
    let t = (x - p.knots[i]) / (p.knots[j] - p.knots[i]);
    p.values[i] + (p.values[j] - p.values[i]) * t
}

/// One hidden unit `weight · σ(scale·z + bias)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluUnit {
    pub weight: f64,
    pub scale: f64,
    pub bias: f64,
}

/// `constant + Σ units`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluExpansion {
    pub constant: f64,
    pub units: Vec<ReluUnit>,
}

impl ReluExpansion {
    pub fn eval(&self, z: f64) -> f64 {
        self.units
            .iter()
            .fold(self.constant, |acc, u| acc + u.weight * relu(u.scale * z + u.bias))
    }
}

/// `x·y` for `x ∈ (0, 1)`, `y ∈ {−1, 1}` through four ReLUs:
/// `σ(x/2 + 2y) − σ(−x/2 + 2y) + σ(−x/2 − 2y) − σ(x/2 − 2y)`.
pub fn signed_copy(x: f64, y: f64) -> Result<f64> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::Domain(format!("signed_copy needs y in {{-1, 1}}, got {y}")));
    }
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("signed_copy needs x in (0, 1), got {x}")));
    }
    Ok(signed_copy_unchecked(x, y))
}

pub(crate) fn signed_copy_unchecked(x: f64, y: f64) -> f64 {
    let o1 = relu(x / 2.0 + 2.0 * y) - relu(-x / 2.0 + 2.0 * y);
    let o2 = relu(-x / 2.0 - 2.0 * y) - relu(x / 2.0 - 2.0 * y);
    o1 + o2
}

/// `σ(−x/2 + g·y) − σ(x/2 + g·y)`, which equals `−x` when `y = 1` and
/// `|x| ≤ 2g`. Used to wipe a scratch row given a row of ones.
pub fn cleanup_gadget(x: f64, y: f64, gate: f64) -> f64 {
    relu(-x / 2.0 + gate * y) - relu(x / 2.0 + gate * y)
}

/// Quarter-square product approximator
/// `xy = ((x+y)² − (x−y)²)/4` with both squares interpolated.
#[derive(Clone, Debug, PartialEq)]
pub struct PwlProduct {
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
    pub square_sum: PwlApprox,
    pub square_diff: PwlApprox,
}

impl PwlProduct {
    pub fn new(range_x: (f64, f64), range_y: (f64, f64), pieces: usize) -> Result<Self> {
        for (name, (lo, hi)) in [("x", range_x), ("y", range_y)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Domain(format!("range_{name} must be bounded, got [{lo}, {hi}]")));
            }
        }
        let sq = |t: f64| t * t;
        let square_sum = build_pwl(sq, range_x.0 + range_y.0, range_x.1 + range_y.1, pieces)?;
        let square_diff = build_pwl(sq, range_x.0 - range_y.1, range_x.1 - range_y.0, pieces)?;
        Ok(Self { range_x, range_y, square_sum, square_diff })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !inside(x, self.range_x) || !inside(y, self.range_y) {
            return Err(Error::Domain(format!(
                "({x}, {y}) outside {:?} x {:?}",
                self.range_x, self.range_y
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        (self.square_sum.eval(x + y) - self.square_diff.eval(x - y)) / 4.0
    }

    /// Worst-case absolute error, `(h_sum² + h_diff²)/16` for uniform steps `h`.
    pub fn error_bound(&self) -> f64 {
        let h = |p: &PwlApprox| (p.hi - p.lo) / p.pieces() as f64;
        (h(&self.square_sum).powi(2) + h(&self.square_diff).powi(2)) / 16.0
    }
}

/// One-shot product approximation; builds the interpolants on every call.
pub fn pwl_product(
    x: f64,
    y: f64,
    range_x: (f64, f64),
    range_y: (f64, f64),
    pieces: usize,
) -> Result<f64> {
    PwlProduct::new(range_x, range_y, pieces)?.eval(x, y)
}

/// `eˣ/(1+eˣ)²`, the curvature weight `p(1−p)` of the logistic loss.
pub fn sigmoid_derivative(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `1/(1+eᶻ)`.
pub fn logistic_tail(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Damped step size as a function of the squared decrement:
/// `2√μ/(2√μ + √z)`.
pub fn step_size_fn(mu: f64) -> impl Fn(f64) -> f64 {
    let r = 2.0 * mu.sqrt();
    move |z: f64| r / (r + z.max(0.0).sqrt())
}
