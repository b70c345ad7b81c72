//! Regularized logistic loss, exact and inexact damped Newton, and the
//! self-concordance bookkeeping used to analyse them.
//!
//! The loss is `f(x) = (1/n) Σ log(1 + exp(−yᵢ xᵀaᵢ)) + μ/2 ‖x‖²`. Its
//! rescaling `g = f/(4μ)` is standard self-concordant, so decrements are
//! reported both for `f` and for `g` (`λ_g = λ_f / (2√μ)`).

use std::io::Write;

use crate::error::{shape, Error, Result};
use crate::linalg::{dot, fmt_f64, norm2, solve_spd, DenseMatrix};

/// Exponent arguments are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 40.0;

/// Quadratic phase begins once `λ_g` drops below this.
pub const QUADRATIC_THRESHOLD: f64 = 1.0 / 6.0;

/// Guaranteed decrease of `g` per exact step while `λ_g ≥ 1/6`.
pub const CONSTANT_DECREASE: f64 = 0.01;

/// Ground-truth runs stop once `λ_g` is below this.
pub const GROUND_TRUTH_TOL: f64 = 1e-12;

/// Slack allowed on the row-norm assumption, to absorb rounding from the
/// max-row-norm rescaling.
const ROW_NORM_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticProblem {
    /// `n×d`, one sample per row.
    pub a: DenseMatrix,
    pub y: Vec<i8>,
    pub mu: f64,
}

impl LogisticProblem {
    pub fn new(a: DenseMatrix, y: Vec<i8>, mu: f64) -> Result<Self> {
        if y.len() != a.rows() {
            return Err(shape("LogisticProblem", format!("{} labels for {} rows", y.len(), a.rows())));
        }
        if let Some(i) = y.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::Domain(format!("label {i} is {}, expected ±1", y[i])));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Domain(format!("mu must be positive, got {mu}")));
        }
        for i in 0..a.rows() {
            let r = norm2(a.row(i));
            if r > 1.0 + ROW_NORM_SLACK {
                return Err(Error::Domain(format!("row {i} has norm {r} > 1")));
            }
        }
        Ok(Self { a, y, mu })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(shape("logistic", format!("x has length {}, expected {}", x.len(), self.d())));
        }
        Ok(())
    }

    /// `xᵀaᵢ` for every sample.
    pub fn margins(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.a.matvec(x)
    }

    /// `pᵢ = 1/(1 + exp(yᵢ xᵀaᵢ))`.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.margins(x)?;
        Ok(z.iter().zip(&self.y).map(|(&zi, &yi)| tail_prob(f64::from(yi) * zi)).collect())
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        let z = self.margins(x)?;
        let data: f64 = z.iter().zip(&self.y).map(|(&zi, &yi)| softplus(-f64::from(yi) * zi)).sum();
        Ok(data / self.n() as f64 + 0.5 * self.mu * dot(x, x))
    }

    /// The standard self-concordant rescaling `g = f/(4μ)`.
    pub fn scaled_loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.loss(x)? / (4.0 * self.mu))
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn tail_prob(t: f64) -> f64 {
    1.0 / (1.0 + t.clamp(-EXP_CLAMP, EXP_CLAMP).exp())
}

/// `f(x)`, `∇f(x) = −(1/n) Σ yᵢpᵢaᵢ + μx` and
/// `∇²f(x) = (1/n) Aᵀ diag(pᵢ(1−pᵢ)) A + μI`.
pub fn loss_grad_hess(p: &LogisticProblem, x: &[f64]) -> Result<(f64, Vec<f64>, DenseMatrix)> {
    let f = p.loss(x)?;
    let probs = p.probabilities(x)?;
    let (n, d) = (p.n(), p.d());
    let inv_n = 1.0 / n as f64;
    let mut grad: Vec<f64> = x.iter().map(|xi| p.mu * xi).collect();
    let mut hess = DenseMatrix::identity(d).scale(p.mu);
    for i in 0..n {
        let ai = p.a.row(i);
        let gi = -f64::from(p.y[i]) * probs[i] * inv_n;
        let wi = probs[i] * (1.0 - probs[i]) * inv_n;
        for r in 0..d {
            grad[r] += gi * ai[r];
            for c in 0..d {
                hess[(r, c)] += wi * ai[r] * ai[c];
            }
        }
    }
    Ok((f, grad, hess))
}

/// Newton decrement of `f` and of the rescaled `g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decrement {
    pub lambda_f: f64,
    pub lambda_g: f64,
}

fn decrement_from(mu: f64, grad: &[f64], newton_dir: &[f64]) -> Decrement {
    let lambda_f = dot(grad, newton_dir).max(0.0).sqrt();
    Decrement { lambda_f, lambda_g: lambda_f / (2.0 * mu.sqrt()) }
}

pub fn newton_decrement(p: &LogisticProblem, x: &[f64]) -> Result<Decrement> {
    let (_, grad, hess) = loss_grad_hess(p, x)?;
    let dir = solve_spd(&hess, &DenseMatrix::column_vector(&grad))?.col(0);
    Ok(decrement_from(p.mu, &grad, &dir))
}

/// Damped step size `2√μ/(2√μ + λ_f)`, i.e. `1/(1 + λ_g)`.
pub fn damped_step_size(mu: f64, lambda_f: f64) -> f64 {
    let r = 2.0 * mu.sqrt();
    r / (r + lambda_f)
}

/// Outcome of one damped Newton step taken from some `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonState {
    /// The new iterate.
    pub x: Vec<f64>,
    /// `λ_f` at the point the step was taken from.
    pub lambda: f64,
    pub step_size: f64,
    pub injected_error_norm: f64,
}

impl NewtonState {
    pub fn lambda_g(&self, mu: f64) -> f64 {
        self.lambda / (2.0 * mu.sqrt())
    }
}

/// `x' = x − η(x) ∇²f(x)⁻¹ ∇f(x) + ε`.
pub fn damped_step(p: &LogisticProblem, x: &[f64], injected: Option<&[f64]>) -> Result<NewtonState> {
    let (_, grad, hess) = loss_grad_hess(p, x)?;
    let dir = solve_spd(&hess, &DenseMatrix::column_vector(&grad))?.col(0);
    let dec = decrement_from(p.mu, &grad, &dir);
    let eta = damped_step_size(p.mu, dec.lambda_f);
    let mut next: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi - eta * di).collect();
    let mut err_norm = 0.0;
    if let Some(e) = injected {
        if e.len() != x.len() {
            return Err(shape("damped_step", format!("error has length {}, expected {}", e.len(), x.len())));
        }
        next.iter_mut().zip(e).for_each(|(v, ei)| *v += ei);
        err_norm = norm2(e);
    }
    Ok(NewtonState { x: next, lambda: dec.lambda_f, step_size: eta, injected_error_norm: err_norm })
}

/// One row of an [`IterateTrace`], describing iterate `x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: f64,
    pub lambda_g: f64,
    /// Damping `η(x_t)` applied when leaving `x_t`.
    pub step_size: f64,
    /// Norm of the error injected when producing `x_t` (0 for `t = 0`).
    pub injected_error_norm: f64,
    /// `g(x_t) − g(x*)`; `NaN` until [`IterateTrace::attach_optimum`] runs.
    pub g_suboptimality: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateTrace {
    pub steps: Vec<TraceRow>,
}

impl IterateTrace {
    pub fn final_x(&self) -> &[f64] {
        &self.steps.last().expect("trace holds x_0").x
    }

    pub fn final_lambda_g(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |r| r.lambda_g)
    }

    pub fn final_suboptimality(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |r| r.g_suboptimality)
    }

    /// Fills `g_suboptimality` against a reference minimizer value `g*`.
    pub fn attach_optimum(&mut self, g_star: f64) {
        for row in &mut self.steps {
            row.g_suboptimality = row.g - g_star;
        }
    }

    /// Columns `step,f,g,lambda_g,step_size,injected_error_norm,g_suboptimality`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,f,g,lambda_g,step_size,injected_error_norm,g_suboptimality")?;
        for r in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_f64(r.f),
                fmt_f64(r.g),
                fmt_f64(r.lambda_g),
                fmt_f64(r.step_size),
                fmt_f64(r.injected_error_norm),
                fmt_f64(r.g_suboptimality)
            )?;
        }
        Ok(())
    }
}

fn trace_row(p: &LogisticProblem, step: usize, x: Vec<f64>, injected: f64) -> Result<TraceRow> {
    let (f, grad, hess) = loss_grad_hess(p, &x)?;
    let dir = solve_spd(&hess, &DenseMatrix::column_vector(&grad))?.col(0);
    let dec = decrement_from(p.mu, &grad, &dir);
    Ok(TraceRow {
        step,
        f,
        g: f / (4.0 * p.mu),
        lambda_g: dec.lambda_g,
        step_size: damped_step_size(p.mu, dec.lambda_f),
        injected_error_norm: injected,
        g_suboptimality: f64::NAN,
        x,
    })
}

/// Runs damped Newton until `λ_g ≤ stop_lambda_g`, injecting
/// `error_source(t, d)` after step `t`. Does not fill suboptimality.
pub fn run_damped_newton(
    p: &LogisticProblem,
    x0: &[f64],
    stop_lambda_g: f64,
    error_source: &mut dyn FnMut(usize, usize) -> Vec<f64>,
    max_iters: usize,
) -> Result<IterateTrace> {
    p.check_dim(x0)?;
    let mut trace = IterateTrace { steps: vec![trace_row(p, 0, x0.to_vec(), 0.0)?] };
    loop {
        let last = trace.steps.last().expect("trace holds x_0");
        if last.lambda_g <= stop_lambda_g {
            return Ok(trace);
        }
        let t = last.step;
        if t >= max_iters {
            return Err(Error::NewtonNotConverged(Box::new(trace)));
        }
        let err = error_source(t, p.d());
        let state = damped_step(p, &last.x, Some(&err))?;
        trace.steps.push(trace_row(p, t + 1, state.x, state.injected_error_norm)?);
    }
}

/// Exact damped Newton to `λ_g ≤ 1e-12`; the operational minimizer.
pub fn ground_truth(p: &LogisticProblem, x0: &[f64]) -> Result<IterateTrace> {
    let d = p.d();
    let mut trace = run_damped_newton(p, x0, GROUND_TRUTH_TOL, &mut |_, _| vec![0.0; d], 200)?;
    let g_star = trace.steps.last().expect("trace holds x_0").g;
    trace.attach_optimum(g_star);
    Ok(trace)
}

/// Stopping threshold on `λ_g` for an inexact run with error level `eps`.
pub fn inexact_stop_threshold(eps: f64) -> f64 {
    eps.sqrt().max(GROUND_TRUTH_TOL)
}

/// Damped Newton with injected errors `‖ε_t‖ ≤ eps`.
///
/// Stops once `λ_g ≤ √eps` (so `g − g* ≤ 3eps/5` when the bound applies).
/// Suboptimality is measured against [`ground_truth`] started from `x0`.
pub fn run_inexact_newton(
    p: &LogisticProblem,
    x0: &[f64],
    eps: f64,
    error_source: &mut dyn FnMut(usize, usize) -> Vec<f64>,
    max_iters: usize,
) -> Result<IterateTrace> {
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("eps must be nonnegative, got {eps}")));
    }
    let mut checked = |t: usize, d: usize| -> Vec<f64> {
        let e = error_source(t, d);
        debug_assert!(norm2(&e) <= eps * (1.0 + 1e-12), "error source exceeded eps");
        e
    };
    let truth = ground_truth(p, x0)?;
    let g_star = truth.steps.last().expect("trace holds x_0").g;
    match run_damped_newton(p, x0, inexact_stop_threshold(eps), &mut checked, max_iters) {
        Ok(mut trace) => {
            trace.attach_optimum(g_star);
            Ok(trace)
        }
        Err(Error::NewtonNotConverged(mut trace)) => {
            trace.attach_optimum(g_star);
            Err(Error::NewtonNotConverged(trace))
        }
        Err(e) => Err(e),
    }
}

/// `ω(t) = t − ln(1 + t)`.
pub fn omega(t: f64) -> f64 {
    t - t.ln_1p()
}

/// `ω*(t) = −t − ln(1 − t)`, defined for `t < 1`.
pub fn omega_star(t: f64) -> f64 {
    -t - (-t).ln_1p()
}

/// Suboptimality bound `g(x) − g(x*) ≤ ω*(λ_g)` in the self-concordant
/// regime. For `λ_g ≤ 1/6` this is further at most `3λ_g²/5`.
pub fn suboptimality_bound(lambda_g: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda_g) {
        return Err(Error::Domain(format!("lambda_g must be in [0, 1), got {lambda_g}")));
    }
    Ok(omega_star(lambda_g))
}

/// Additive term of the inexact quadratic-phase recursion
/// `λ_{t+1} ≤ 3λ_t² + ε′`.
pub fn epsilon_prime(eps: f64, mu: f64) -> f64 {
    3.0 * eps * (1.0 + mu) / (8.0 * mu) + eps * (1.0 + mu).sqrt() / (2.0 * mu.sqrt())
}

/// Per-step bound on `g(x_{t+1}) − g(x_t)` as a function of `x = λ_g(x_t)`,
/// `c = εᵀ∇g` and `c′ = εᵀ∇²g ε`:
/// `h = −x²/(1+x) + c − ln(1 − δ̃) − δ̃`, `δ̃² = x²/(1+x)² − 2c/(1+x) + c′`.
///
/// Returns `Err(δ̃²)` when `δ̃` falls outside `[0, 1)`.
pub fn constant_decrease_h(x: f64, c: f64, c_prime: f64) -> std::result::Result<f64, f64> {
    let delta_sq = x * x / ((1.0 + x) * (1.0 + x)) - 2.0 * c / (1.0 + x) + c_prime;
    if !(delta_sq >= 0.0) {
        return Err(delta_sq);
    }
    let delta = delta_sq.sqrt();
    if delta >= 1.0 {
        return Err(delta_sq);
    }
    Ok(-x * x / (1.0 + x) + c + omega_star(delta))
}

/// Grid point where `δ̃` left `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanAnomaly {
    pub x: f64,
    pub c: f64,
    pub c_prime: f64,
    pub delta_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanReport {
    /// Maximum of `h` over valid points of the full grid.
    pub max_h: f64,
    pub argmax: (f64, f64, f64),
    /// Largest forward difference of `h` in `x` over the full grid.
    pub max_dh: f64,
    /// Maximum of `h(1/6, c, c′)` restricted to `|c| ≤ narrow_c`.
    pub max_h_narrow: f64,
    pub narrow_c: f64,
    pub evaluated: usize,
    pub anomalies: Vec<ScanAnomaly>,
}

pub const SCAN_X_RANGE: (f64, f64) = (1.0 / 6.0, 1.0);
pub const SCAN_C_MAX: f64 = 0.06;
pub const SCAN_C_PRIME_MAX: f64 = 1e-4;
/// Range of `c` over which the per-step decrease of 0.01 is claimed.
pub const SCAN_NARROW_C: f64 = 0.012;

/// Exhaustive scan of [`constant_decrease_h`] over `x ∈ [1/6, 1]`,
/// `|c| ≤ 0.06` and `c′ ∈ {−1e-4, 0, 1e-4}`.
///
/// `h` increases with `c′` (through `ω*(δ̃)`), so the two endpoints and zero
/// cover the `c′` range. Invalid points are collected, not fatal.
pub fn scan_constant_decrease(grid_x: usize, grid_c: usize) -> Result<ScanReport> {
    if grid_x < 100 || grid_c < 100 {
        return Err(Error::Domain(format!("grid sizes must be >= 100, got {grid_x}x{grid_c}")));
    }
    let lin = |lo: f64, hi: f64, k: usize, m: usize| lo + (hi - lo) * k as f64 / (m - 1) as f64;
    let (x_lo, x_hi) = SCAN_X_RANGE;
    let c_primes = [-SCAN_C_PRIME_MAX, 0.0, SCAN_C_PRIME_MAX];
    let mut report = ScanReport {
        max_h: f64::NEG_INFINITY,
        argmax: (f64::NAN, f64::NAN, f64::NAN),
        max_dh: f64::NEG_INFINITY,
        max_h_narrow: f64::NEG_INFINITY,
        narrow_c: SCAN_NARROW_C,
        evaluated: 0,
        anomalies: Vec::new(),
    };
    for kc in 0..grid_c {
        let c = lin(-SCAN_C_MAX, SCAN_C_MAX, kc, grid_c);
        for &cp in &c_primes {
            let mut prev: Option<f64> = None;
            for kx in 0..grid_x {
                let x = lin(x_lo, x_hi, kx, grid_x);
                match constant_decrease_h(x, c, cp) {
                    Ok(h) => {
                        report.evaluated += 1;
                        if h > report.max_h {
                            report.max_h = h;
                            report.argmax = (x, c, cp);
                        }
                        if let Some(hp) = prev {
                            report.max_dh = report.max_dh.max(h - hp);
                        }
                        prev = Some(h);
                    }
                    Err(delta_sq) => {
                        report.anomalies.push(ScanAnomaly { x, c, c_prime: cp, delta_sq });
                        prev = None;
                    }
                }
            }
        }
    }
    for kc in 0..grid_c {
        let c = lin(-SCAN_NARROW_C, SCAN_NARROW_C, kc, grid_c);
        for &cp in &c_primes {
            if let Ok(h) = constant_decrease_h(x_lo, c, cp) {
                report.max_h_narrow = report.max_h_narrow.max(h);
            }
        }
    }
    Ok(report)
}
