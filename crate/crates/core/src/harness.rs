//! Experiment configuration, synthetic data with a controlled condition
//! number, and the runners behind the command-line subcommands.
//!
//! Every runner is a pure function of its [`ExperimentConfig`]; outputs are
//! CSV files whose numbers are printed with [`fmt_f64`], so identical
//! configs give byte-identical files.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::builders::{
    build_linreg_transformer, build_logreg_newton_step, linreg_prompt, read_prediction, width_depth_budget,
    BudgetReport,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, fmt_f64, matmul, norm2, orthogonal_factor, solve_spd, spectral_norm_est, DenseMatrix};
use crate::logistic::{damped_step, ground_truth, scan_constant_decrease, LogisticProblem, ScanReport};
use crate::newton_inverse::{hyperpower_step, run_inverse, DEFAULT_SAFETY, POWER_ITERS};
use crate::rng::{gaussian_vec, stream, streams};
use crate::tf::model_forward;

/// Offset between the random streams of consecutive batch items.
const ITEM_STRIDE: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Invert,
    Linreg,
    Logreg,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invert" => Ok(Task::Invert),
            "linreg" => Ok(Task::Linreg),
            "logreg" => Ok(Task::Logreg),
            other => Err(Error::Parse(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Invert => "invert",
            Task::Linreg => "linreg",
            Task::Logreg => "logreg",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub d: usize,
    pub n: usize,
    pub kappa: f64,
    pub noise_std: f64,
    pub mu: f64,
    pub eps: f64,
    pub orders: Vec<usize>,
    pub t_max: usize,
    pub seed: u64,
    /// Prompts per batch in the regression experiment.
    pub batch: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(task: Task) -> Self {
        let (d, n, t_max) = match task {
            Task::Invert => (8, 8, 40),
            Task::Linreg => (10, 50, 25),
            Task::Logreg => (5, 26, 10),
        };
        Self {
            task,
            d,
            n,
            kappa: 100.0,
            noise_std: 0.1,
            mu: 0.1,
            eps: 1e-2,
            orders: vec![2, 3],
            t_max,
            seed: 0,
            batch: 16,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Sets one field from its textual form; keys match the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{v}`")))
        }
        match key {
            "task" => self.task = value.parse()?,
            "d" => self.d = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "noise_std" => self.noise_std = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "orders" => {
                self.orders = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "t_max" => self.t_max = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Parse(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return bad(format!("kappa must be >= 1, got {}", self.kappa));
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        match self.task {
            Task::Invert => {
                if self.orders.is_empty() || self.orders.iter().any(|&o| o < 2) {
                    return bad(format!("orders must be >= 2, got {:?}", self.orders));
                }
            }
            Task::Linreg => {
                if self.n < self.d {
                    return bad(format!("linreg needs n >= d, got d={}, n={}", self.d, self.n));
                }
                if self.orders.iter().any(|&o| o < 2) || self.batch == 0 {
                    return bad("linreg needs orders >= 2 and batch >= 1".into());
                }
            }
            Task::Logreg => {
                if self.n < self.d {
                    return bad(format!("logreg needs n >= d, got d={}, n={}", self.d, self.n));
                }
                if !(self.mu > 0.0) || !(self.eps > 0.0 && self.eps < 1.0) {
                    return bad(format!("logreg needs mu > 0 and eps in (0, 1), got {} and {}", self.mu, self.eps));
                }
            }
        }
        Ok(())
    }
}

/// Samples `Σ = U S Uᵀ` with `λ_max ~ U[1, 100]`, `λ_min = λ_max/κ` and the
/// remaining eigenvalues uniform in between. Returns `(U, eigenvalues)`.
pub fn sample_covariance(d: usize, kappa: f64, seed: u64, item: u64) -> Result<(DenseMatrix, Vec<f64>)> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("kappa must be >= 1, got {kappa}")));
    }
    let mut rng = stream(seed, streams::COVARIANCE + ITEM_STRIDE * item);
    let g = DenseMatrix::from_vec(d, d, gaussian_vec(&mut rng, d * d))?;
    let u = orthogonal_factor(&g)?;
    let lmax: f64 = rng.gen_range(1.0..=100.0);
    let lmin = lmax / kappa;
    let mut eig = vec![lmax; d];
    if d > 1 {
        eig[d - 1] = lmin;
        for e in eig.iter_mut().take(d - 1).skip(1) {
            *e = rng.gen_range(lmin..=lmax);
        }
    }
    Ok((u, eig))
}

/// `U diag(s) Uᵀ`.
pub fn compose(u: &DenseMatrix, s: &[f64]) -> Result<DenseMatrix> {
    let us = DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| u[(i, j)] * s[j]);
    matmul(&us, &u.transpose())
}

/// One regression task.
#[derive(Clone, Debug, PartialEq)]
pub struct LinregData {
    pub a: DenseMatrix,
    pub y: Vec<f64>,
    pub a_test: Vec<f64>,
    pub y_test: f64,
    pub w_star: Vec<f64>,
    pub covariance: DenseMatrix,
}

fn draw_rows(u: &DenseMatrix, eig: &[f64], rows: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<DenseMatrix> {
    let d = eig.len();
    // a = U S^{1/2} g has covariance U S Uᵀ
    let root = DenseMatrix::from_fn(d, d, |i, j| u[(i, j)] * eig[j].sqrt());
    let g = DenseMatrix::from_vec(rows, d, gaussian_vec(rng, rows * d))?;
    matmul(&g, &root.transpose())
}

/// Batch item `item` of the regression data for `cfg`.
pub fn gen_linreg_item(cfg: &ExperimentConfig, item: u64) -> Result<LinregData> {
    let (d, n, seed) = (cfg.d, cfg.n, cfg.seed);
    let (u, eig) = sample_covariance(d, cfg.kappa, seed, item)?;
    let off = ITEM_STRIDE * item;
    let a = draw_rows(&u, &eig, n, &mut stream(seed, streams::ROWS + off))?;
    let w_star = gaussian_vec(&mut stream(seed, streams::W_STAR + off), d);
    let noise = gaussian_vec(&mut stream(seed, streams::NOISE + off), n + 1);
    let y: Vec<f64> = a.matvec(&w_star)?.iter().zip(&noise).map(|(v, e)| v + cfg.noise_std * e).collect();
    let a_test = draw_rows(&u, &eig, 1, &mut stream(seed, streams::TEST_POINT + off))?.row(0).to_vec();
    let y_test = dot(&a_test, &w_star) + cfg.noise_std * noise[n];
    Ok(LinregData { a, y, a_test, y_test, w_star, covariance: compose(&u, &eig)? })
}

pub fn gen_linreg_data(cfg: &ExperimentConfig) -> Result<LinregData> {
    cfg.validate()?;
    gen_linreg_item(cfg, 0)
}

/// Rows as in [`gen_linreg_data`] divided by the largest row norm, labels
/// `sign(aᵢᵀw*)` with ties sent to `+1`.
pub fn gen_logreg_data(cfg: &ExperimentConfig) -> Result<(LogisticProblem, Vec<f64>)> {
    cfg.validate()?;
    let (d, n, seed) = (cfg.d, cfg.n, cfg.seed);
    let (u, eig) = sample_covariance(d, cfg.kappa, seed, 0)?;
    let raw = draw_rows(&u, &eig, n, &mut stream(seed, streams::ROWS))?;
    let w_star = gaussian_vec(&mut stream(seed, streams::W_STAR), d);
    let (problem, _) = logreg_from_rows(&raw, &w_star, cfg.mu)?;
    Ok((problem, w_star))
}

/// Rescales `raw` to unit max row norm and labels it with `w*`.
pub fn logreg_from_rows(raw: &DenseMatrix, w_star: &[f64], mu: f64) -> Result<(LogisticProblem, f64)> {
    let scale = (0..raw.rows()).map(|i| norm2(raw.row(i))).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Domain("all sample rows are zero".into()));
    }
    let a = raw.scale(1.0 / scale);
    let y = a.matvec(w_star)?.iter().map(|&m| if m < 0.0 { -1 } else { 1 }).collect();
    Ok((LogisticProblem::new(a, y, mu)?, scale))
}

fn create(out_dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(out_dir)?;
    Ok(BufWriter::new(File::create(out_dir.join(name))?))
}

/// SPD matrix `U diag(λ) Uᵀ` with condition number exactly `κ` up to rounding.
pub fn gen_spd(d: usize, kappa: f64, seed: u64) -> Result<DenseMatrix> {
    let (u, eig) = sample_covariance(d, kappa, seed, 0)?;
    compose(&u, &eig)
}

/// Residual traces of the order-`n` iterations on one SPD matrix.
/// Writes `invert.csv` with columns `order,step,residual_frobenius`.
pub fn run_invert_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let a = gen_spd(cfg.d, cfg.kappa, cfg.seed)?;
    let mut w = create(&cfg.out_dir, "invert.csv")?;
    writeln!(w, "order,step,residual_frobenius")?;
    for &order in &cfg.orders {
        let run = run_inverse(&a, order, 1e-10, cfg.t_max, DEFAULT_SAFETY)?;
        for (t, r) in run.residuals.iter().enumerate() {
            writeln!(w, "{order},{t},{}", fmt_f64(*r))?;
        }
    }
    w.flush()?;
    Ok(vec![cfg.out_dir.join("invert.csv")])
}

/// Per-item quantities shared by every method and every `T`.
struct LinregItem {
    data: LinregData,
    gram: DenseMatrix,
    aty: Vec<f64>,
    alpha: f64,
    lstsq: f64,
}

fn linreg_item(cfg: &ExperimentConfig, item: u64) -> Result<LinregItem> {
    let data = gen_linreg_item(cfg, item)?;
    let gram = matmul(&data.a.transpose(), &data.a)?;
    let aty = data.a.transpose().matvec(&data.y)?;
    let sigma = spectral_norm_est(&gram, POWER_ITERS, 0);
    let alpha = 2.0 * DEFAULT_SAFETY / (sigma * sigma);
    let w = solve_spd(&gram, &DenseMatrix::column_vector(&aty))?.col(0);
    let lstsq = dot(&data.a_test, &w);
    Ok(LinregItem { data, gram, aty, alpha, lstsq })
}

/// Mean squared prediction error against the noisy test label, and
/// against the closed-form least-squares prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinregScore {
    pub mse: f64,
    pub mse_vs_lstsq: f64,
}

/// Writes `linreg.csv` with columns `method,order,T,mse,mse_vs_lstsq`.
///
/// `transformer` is the constructed model with `T` inversion layers;
/// `newton` rows run the order-`n` iteration `T` steps from `X₀ = αAᵀA`;
/// `lstsq` is the closed form and does not depend on `T`.
pub fn run_linreg_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let rows = linreg_table(cfg)?;
    let mut w = create(&cfg.out_dir, "linreg.csv")?;
    writeln!(w, "method,order,T,mse,mse_vs_lstsq")?;
    for (method, order, t, s) in rows {
        writeln!(w, "{method},{order},{t},{},{}", fmt_f64(s.mse), fmt_f64(s.mse_vs_lstsq))?;
    }
    w.flush()?;
    Ok(vec![cfg.out_dir.join("linreg.csv")])
}

/// Rows of the regression table; `order` is 0 for methods without one.
pub fn linreg_table(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, usize, usize, LinregScore)>> {
    cfg.validate()?;
    let items: Vec<LinregItem> = (0..cfg.batch as u64).map(|i| linreg_item(cfg, i)).collect::<Result<_>>()?;
    let b = items.len() as f64;
    let score = |preds: &[f64]| {
        let mut s = LinregScore::default();
        for (p, it) in preds.iter().zip(&items) {
            s.mse += (p - it.data.y_test).powi(2) / b;
            s.mse_vs_lstsq += (p - it.lstsq).powi(2) / b;
        }
        s
    };
    let mut rows = Vec::new();
    // iterates per item and order, advanced one step per T
    let mut iterates: Vec<Vec<DenseMatrix>> =
        cfg.orders.iter().map(|_| items.iter().map(|it| it.gram.scale(it.alpha)).collect()).collect();
    for t in 1..=cfg.t_max {
        let mut preds = Vec::with_capacity(items.len());
        for it in &items {
            let model = build_linreg_transformer(cfg.d, cfg.n, t, it.alpha)?;
            let h = model_forward(&model.layers, &linreg_prompt(&model, &it.data.a, &it.data.y, &it.data.a_test)?)?;
            preds.push(read_prediction(&model, &h)?);
        }
        rows.push(("transformer", 2, t, score(&preds)));
        for (oi, &order) in cfg.orders.iter().enumerate() {
            let mut preds = Vec::with_capacity(items.len());
            for (x, it) in iterates[oi].iter_mut().zip(&items) {
                *x = hyperpower_step(x, &it.gram, order)?;
                preds.push(dot(&it.data.a_test, &x.matvec(&it.aty)?));
            }
            rows.push(("newton", order, t, score(&preds)));
        }
        let exact: Vec<f64> = items.iter().map(|it| it.lstsq).collect();
        rows.push(("lstsq", 0, t, score(&exact)));
    }
    Ok(rows)
}

/// `κ_f = (1 + μ)/μ`, the ratio of the Hessian bounds `(1 + μ)I` and `μI`.
pub fn logistic_kappa(mu: f64) -> f64 {
    (1.0 + mu) / mu
}

/// One row of the logistic comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct LogregRow {
    pub method: &'static str,
    pub step: usize,
    pub layers: usize,
    pub loss: f64,
    pub g_suboptimality: f64,
    /// `‖x_t − x_t^exact‖₂`.
    pub dist_to_exact: f64,
}

/// Traces of exact damped Newton, damped Newton with injected errors of
/// norm `eps`, and the constructed stack applied repeatedly, all from `x₀ = 0`.
pub fn logreg_traces(cfg: &ExperimentConfig) -> Result<(BudgetReport, Vec<LogregRow>)> {
    let (p, _) = gen_logreg_data(cfg)?;
    let budget = width_depth_budget(cfg.eps, cfg.mu, logistic_kappa(cfg.mu), cfg.d)?;
    let stack = build_logreg_newton_step(&p, &budget)?;
    let d = p.d();
    let x0 = vec![0.0; d];
    let g_star = ground_truth(&p, &x0)?.steps.last().expect("trace holds x_0").g;
    let per_step = budget.depth;

    let mut exact = vec![x0.clone()];
    let mut inexact = vec![x0.clone()];
    let mut constructed = vec![x0.clone()];
    let mut err_rng = stream(cfg.seed, streams::INJECTED_ERROR);
    for _ in 0..cfg.t_max {
        exact.push(damped_step(&p, exact.last().expect("nonempty"), None)?.x);
        let dir = gaussian_vec(&mut err_rng, d);
        let scale = cfg.eps / norm2(&dir);
        let err: Vec<f64> = dir.iter().map(|v| v * scale).collect();
        inexact.push(damped_step(&p, inexact.last().expect("nonempty"), Some(&err))?.x);
        constructed.push(stack.apply(constructed.last().expect("nonempty"))?);
    }
    let mut rows = Vec::new();
    for (method, xs, layers) in [("exact", &exact, 0), ("inexact", &inexact, 0), ("transformer", &constructed, per_step)] {
        for (t, x) in xs.iter().enumerate() {
            let loss = p.loss(x)?;
            let dist = norm2(&x.iter().zip(&exact[t]).map(|(a, b)| a - b).collect::<Vec<_>>());
            rows.push(LogregRow {
                method,
                step: t,
                layers: layers * t,
                loss,
                g_suboptimality: loss / (4.0 * p.mu) - g_star,
                dist_to_exact: dist,
            });
        }
    }
    Ok((budget, rows))
}

/// Writes `logreg.csv` (columns
/// `method,step,layers_per_step,layers,loss,g_suboptimality,dist_to_exact`)
/// and `budget.json`.
pub fn run_logreg_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (budget, rows) = logreg_traces(cfg)?;
    let mut w = create(&cfg.out_dir, "logreg.csv")?;
    writeln!(w, "method,step,layers_per_step,layers,loss,g_suboptimality,dist_to_exact")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.method,
            r.step,
            budget.depth,
            r.layers,
            fmt_f64(r.loss),
            fmt_f64(r.g_suboptimality),
            fmt_f64(r.dist_to_exact)
        )?;
    }
    w.flush()?;
    let mut j = create(&cfg.out_dir, "budget.json")?;
    writeln!(j, "{}", budget.to_json())?;
    j.flush()?;
    Ok(vec![cfg.out_dir.join("logreg.csv"), cfg.out_dir.join("budget.json")])
}

/// Writes `budget.json` for the given target and returns the report.
pub fn run_budget(out_dir: &Path, eps: f64, mu: f64, kappa_f: f64, d: usize) -> Result<BudgetReport> {
    let budget = width_depth_budget(eps, mu, kappa_f, d)?;
    let mut w = create(out_dir, "budget.json")?;
    writeln!(w, "{}", budget.to_json())?;
    w.flush()?;
    Ok(budget)
}

/// Writes `scan_decrease.csv` (`metric,value`) and `scan_anomalies.csv`
/// (`x,c,c_prime,delta_sq`) for a `grid × grid` scan.
pub fn run_scan(out_dir: &Path, grid: usize) -> Result<ScanReport> {
    let report = scan_constant_decrease(grid, grid)?;
    let mut w = create(out_dir, "scan_decrease.csv")?;
    writeln!(w, "metric,value")?;
    let (ax, ac, acp) = report.argmax;
    for (k, v) in [
        ("max_h", report.max_h),
        ("argmax_x", ax),
        ("argmax_c", ac),
        ("argmax_c_prime", acp),
        ("max_dh", report.max_dh),
        ("max_h_narrow", report.max_h_narrow),
        ("narrow_c", report.narrow_c),
    ] {
        writeln!(w, "{k},{}", fmt_f64(v))?;
    }
    writeln!(w, "evaluated,{}", report.evaluated)?;
    writeln!(w, "anomalies,{}", report.anomalies.len())?;
    w.flush()?;
    let mut a = create(out_dir, "scan_anomalies.csv")?;
    writeln!(a, "x,c,c_prime,delta_sq")?;
    for s in &report.anomalies {
        writeln!(a, "{},{},{},{}", fmt_f64(s.x), fmt_f64(s.c), fmt_f64(s.c_prime), fmt_f64(s.delta_sq))?;
    }
    a.flush()?;
    Ok(report)
}
