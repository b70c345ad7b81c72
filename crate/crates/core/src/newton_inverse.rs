//! Newton–Schulz inversion and its order-n hyperpower generalization.

use std::io::Write;

use crate::error::{shape, Error, Result};
use crate::linalg::{fmt_f64, matmul, spectral_norm_est, DenseMatrix};

/// Largest supported hyperpower order; binomials stay exact well past it.
pub const MAX_ORDER: usize = 8;

/// Power iterations used to pick the initialization scale.
pub const POWER_ITERS: usize = 200;

/// Default safety factor for the initialization scale.
pub const DEFAULT_SAFETY: f64 = 0.9;

/// Full trace of an inversion run.
#[derive(Clone, Debug)]
pub struct InverseRun {
    pub iterates: Vec<DenseMatrix>,
    /// `‖I − X_t A‖_F` for every iterate.
    pub residuals: Vec<f64>,
    pub alpha: f64,
    pub order: usize,
}

impl InverseRun {
    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("a run holds at least X_0")
    }

    pub fn result(&self) -> &DenseMatrix {
        self.iterates.last().expect("a run holds at least X_0")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,residual_frobenius")?;
        for (t, r) in self.residuals.iter().enumerate() {
            writeln!(w, "{t},{}", fmt_f64(*r))?;
        }
        Ok(())
    }
}

fn check_square_pair(op: &'static str, x: &DenseMatrix, a: &DenseMatrix) -> Result<()> {
    if !x.is_square() || !a.is_square() || x.rows() != a.rows() {
        return Err(shape(op, format!("x is {:?}, a is {:?}", x.shape(), a.shape())));
    }
    Ok(())
}

/// `X (2I − A X)`.
pub fn newton_step(x: &DenseMatrix, a: &DenseMatrix) -> Result<DenseMatrix> {
    check_square_pair("newton_step", x, a)?;
    let mut m = matmul(a, x)?.scale(-1.0);
    for i in 0..m.rows() {
        m[(i, i)] += 2.0;
    }
    matmul(x, &m)
}

/// `X Σ_{m<n} (−1)^m C(n, m+1) (A X)^m`, so that `I − X'A = (I − XA)^n`.
///
/// `n = 2` runs exactly the [`newton_step`] code path.
pub fn hyperpower_step(x: &DenseMatrix, a: &DenseMatrix, n: usize) -> Result<DenseMatrix> {
    check_order(n)?;
    if n == 2 {
        return newton_step(x, a);
    }
    check_square_pair("hyperpower_step", x, a)?;
    let ax = matmul(a, x)?;
    let d = x.rows();
    let coef = |m: usize| -> f64 {
        let c = binomial(n as u64, m as u64 + 1) as f64;
        if m % 2 == 0 {
            c
        } else {
            -c
        }
    };
    // Horner in AX
    let mut p = DenseMatrix::identity(d).scale(coef(n - 1));
    for m in (0..n - 1).rev() {
        p = matmul(&p, &ax)?;
        for i in 0..d {
            p[(i, i)] += coef(m);
        }
    }
    matmul(x, &p)
}

fn check_order(n: usize) -> Result<()> {
    if !(2..=MAX_ORDER).contains(&n) {
        return Err(Error::Domain(format!("hyperpower order must be in 2..={MAX_ORDER}, got {n}")));
    }
    Ok(())
}

/// Exact binomial coefficient.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// `‖I − X A‖_F`.
pub fn residual(x: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    let mut e = matmul(x, a)?.scale(-1.0);
    for i in 0..e.rows() {
        e[(i, i)] += 1.0;
    }
    Ok(e.frobenius_norm())
}

/// Initialization scale `2·safety/σ̂²` with `σ̂` from [`POWER_ITERS`] power
/// iterations.
pub fn init_alpha(a: &DenseMatrix, safety: f64, seed: u64) -> Result<f64> {
    let sigma = spectral_norm_est(a, POWER_ITERS, seed);
    if sigma == 0.0 {
        return Err(Error::Domain("cannot invert the zero matrix".into()));
    }
    Ok(2.0 * safety / (sigma * sigma))
}

/// Iterates from `X_0 = α aᵀ` until `‖I − X_T a‖_F ≤ tol` or `max_iters`.
pub fn run_inverse(
    a: &DenseMatrix,
    order: usize,
    tol: f64,
    max_iters: usize,
    safety: f64,
) -> Result<InverseRun> {
    check_order(order)?;
    if !a.is_square() {
        return Err(shape("run_inverse", format!("{:?} is not square", a.shape())));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol must be positive, got {tol}")));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::Domain(format!("safety must be in (0, 1), got {safety}")));
    }
    let alpha = init_alpha(a, safety, 0)?;
    let x0 = a.transpose().scale(alpha);
    let mut run = InverseRun { residuals: vec![residual(&x0, a)?], iterates: vec![x0], alpha, order };
    while run.final_residual() > tol {
        if run.steps() >= max_iters || !run.final_residual().is_finite() {
            return Err(Error::InverseNotConverged(Box::new(run)));
        }
        let next = hyperpower_step(run.result(), a, order)?;
        run.residuals.push(residual(&next, a)?);
        run.iterates.push(next);
    }
    Ok(run)
}

/// Step-count envelope
/// `ceil(2·log_n κ) + ceil(log_n log₂(1/ε)) + 2`.
///
/// The inner logarithm is clamped at zero so that `ε ≥ 1/2` adds nothing.
pub fn predicted_steps(kappa: f64, eps: f64, order: usize) -> Result<usize> {
    check_order(order)?;
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must be in (0, 1), got {eps}")));
    }
    let base = (order as f64).ln();
    let warmup = (2.0 * kappa.ln() / base).ceil();
    let bits = (1.0 / eps).log2();
    let tail = if bits > 1.0 { (bits.ln() / base).ceil() } else { 0.0 };
    Ok(warmup as usize + tail as usize + 2)
}

/// Least-squares slope of `log r_{t+1}` against `log r_t` over the last
/// `window` transitions whose residuals lie strictly inside `(floor, 1)`.
///
/// Residuals at or below `floor` are rounding-dominated and carry no order
/// information. Returns `None` when fewer than `window` transitions qualify.
pub fn fitted_order(residuals: &[f64], floor: f64, window: usize) -> Option<f64> {
    let usable: Vec<f64> =
        residuals.iter().copied().filter(|&r| r > floor && r < 1.0).map(f64::ln).collect();
    if window < 2 || usable.len() < window + 1 {
        return None;
    }
    let tail = &usable[usable.len() - window - 1..];
    let xs = &tail[..window];
    let ys = &tail[1..];
    let mx = xs.iter().sum::<f64>() / window as f64;
    let my = ys.iter().sum::<f64>() / window as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_step_hand_cases() {
        let i2 = DenseMatrix::identity(2);
        assert_eq!(newton_step(&i2, &i2).unwrap(), i2);
        assert_eq!(newton_step(&i2.scale(0.5), &i2).unwrap(), i2.scale(0.75));
        let a = DenseMatrix::diag(&[1.0, 2.0]);
        let x = a.transpose().scale(0.3);
        let got = newton_step(&x, &a).unwrap();
        // 0.3·(2 − 0.3) and 0.6·(2 − 1.2)
        assert!((got[(0, 0)] - 0.51).abs() < 1e-15);
        assert!((got[(1, 1)] - 0.48).abs() < 1e-15);
        assert_eq!(got[(0, 1)], 0.0);
    }

    #[test]
    fn hyperpower_scalar_order_three() {
        let one = DenseMatrix::identity(1);
        let got = hyperpower_step(&one.scale(0.5), &one, 3).unwrap();
        assert!((got[(0, 0)] - 0.875).abs() < 1e-15);
    }

    #[test]
    fn order_bounds_are_enforced() {
        let one = DenseMatrix::identity(1);
        assert!(matches!(hyperpower_step(&one, &one, 1), Err(Error::Domain(_))));
        assert!(matches!(hyperpower_step(&one, &one, 9), Err(Error::Domain(_))));
        assert!(hyperpower_step(&one, &one, 8).is_ok());
    }

    #[test]
    fn binomials_are_exact() {
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn predicted_steps_examples() {
        assert_eq!(predicted_steps(1.0, 0.5, 2).unwrap(), 2);
        assert_eq!(predicted_steps(100.0, 1e-10, 2).unwrap(), 22);
        assert!(predicted_steps(0.5, 0.1, 2).is_err());
        assert!(predicted_steps(2.0, 1.0, 2).is_err());
    }

    #[test]
    fn identity_converges_quickly() {
        let run = run_inverse(&DenseMatrix::identity(3), 2, 1e-12, 50, DEFAULT_SAFETY).unwrap();
        // residual 0.8^(2^t)·√3 first drops below 1e-12 at t = 7
        assert_eq!(run.steps(), 7);
        assert!((run.alpha - 1.8).abs() < 1e-15);
    }

    #[test]
    fn non_convergence_carries_trace() {
        let a = DenseMatrix::diag(&[1.0, 1e-6]);
        match run_inverse(&a, 2, 1e-12, 3, DEFAULT_SAFETY) {
            Err(Error::InverseNotConverged(run)) => assert_eq!(run.steps(), 3),
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn order_fit_on_exact_powers() {
        let rs: Vec<f64> = (0..6).map(|t| 0.5f64.powi(2i32.pow(t))).collect();
        let p = fitted_order(&rs, 1e-13, 3).unwrap();
        assert!((p - 2.0).abs() < 1e-9);
    }
}
