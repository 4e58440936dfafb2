//! Basis-pursuit denoising: `min ‖e‖₁  s.t.  ‖E − Ψe‖₂ ≤ δ`.
//!
//! The solver follows the Pareto-curve root-finding scheme of SPGL1. For a
//! sequence of ℓ1 budgets `τ` it solves the LASSO subproblem
//! `min ½‖E − Ψe‖²  s.t.  ‖e‖₁ ≤ τ` by spectral projected gradient with a
//! non-monotone curvilinear line search and exact projection onto the ℓ1
//! ball. The residual norm `φ(τ)` is convex and non-increasing in `τ`, with
//! `φ'(τ) = −‖Ψᵀr‖_∞ / ‖r‖₂`, so Newton steps on `φ(τ) = δ` approach the
//! root from the left.
//!
//! The residual budget `δ` is chosen by k-fold cross-validation over a grid
//! of candidates relative to `‖E‖₂`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::PcBasis;
use crate::ensemble::DesignEnsemble;
use crate::error::{Error, Result};
use crate::numeric::{norm1, norm2, norm_inf, pairwise_dot};

/// `Ψ[q, k] = ψ_k(ξ_q)` for the rows of `nodes`.
pub fn measurement_matrix(basis: &PcBasis, nodes: ArrayView2<f64>) -> Result<Array2<f64>> {
    if nodes.ncols() != basis.dim() {
        return Err(Error::Shape {
            expected: basis.dim(),
            found: nodes.ncols(),
        });
    }
    let mut psi = Array2::zeros((nodes.nrows(), basis.len()));
    for (row, mut out) in nodes.rows().into_iter().zip(psi.rows_mut()) {
        let xi = row.to_vec();
        basis.eval_into(&xi, out.as_slice_mut().expect("standard layout"))?;
    }
    Ok(psi)
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ tau}` (sort-based, exact).
pub fn project_l1_ball(x: &mut [f64], tau: f64) {
    if norm1(x) <= tau {
        return;
    }
    if tau <= 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - tau) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for v in x.iter_mut() {
        *v = v.signum() * (v.abs() - theta).max(0.0);
    }
}

/// Why the root finder stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpdnStatus {
    /// `‖r‖₂ = δ` within tolerance.
    RootFound,
    /// `δ ≥ ‖E‖₂`: the zero vector is feasible and optimal.
    ZeroSolution,
    /// `δ` is below the least-squares residual; returned the least-squares
    /// iterate, which is the closest feasible point on the Pareto curve.
    LeastSquares,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub opt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 20_000,
            opt_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpdnSolution {
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
    pub l1_norm: f64,
    pub iterations: usize,
    pub status: BpdnStatus,
    /// `(τ, ‖r‖₂)` at the end of each LASSO subproblem.
    pub pareto_path: Vec<(f64, f64)>,
    /// Final ℓ1 budget, usable as a warm start.
    pub tau: f64,
}

impl BpdnSolution {
    pub fn converged(&self) -> bool {
        matches!(
            self.status,
            BpdnStatus::RootFound | BpdnStatus::ZeroSolution | BpdnStatus::LeastSquares
        )
    }
}

struct Problem<'a> {
    a: &'a Array2<f64>,
    at: Array2<f64>,
    b: &'a Array1<f64>,
}

impl Problem<'_> {
    fn residual(&self, x: &Array1<f64>) -> Array1<f64> {
        self.b - &self.a.dot(x)
    }

    fn gradient(&self, r: &Array1<f64>) -> Array1<f64> {
        -self.at.dot(r)
    }
}

const LINE_SEARCH_MEMORY: usize = 10;
const LS_GAMMA: f64 = 1e-4;
const STEP_MIN: f64 = 1e-16;
const STEP_MAX: f64 = 1e16;
const LS_TOL: f64 = 1e-6;

/// Solves the BPDN problem for a fixed residual budget.
pub fn solve_bpdn(psi: &Array2<f64>, e: &[f64], delta: f64, opts: SolverOptions) -> Result<BpdnSolution> {
    solve_bpdn_warm(psi, e, delta, opts, None)
}

/// [`solve_bpdn`] starting from a previous solution (coefficients, τ).
pub fn solve_bpdn_warm(
    psi: &Array2<f64>,
    e: &[f64],
    delta: f64,
    opts: SolverOptions,
    warm: Option<(&[f64], f64)>,
) -> Result<BpdnSolution> {
    if psi.nrows() != e.len() {
        return Err(Error::Shape {
            expected: psi.nrows(),
            found: e.len(),
        });
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!("residual budget must be >= 0, got {delta}")));
    }
    let n = psi.ncols();
    let b = Array1::from(e.to_vec());
    let b_norm = norm2(e);
    if delta >= b_norm {
        return Ok(BpdnSolution {
            coefficients: vec![0.0; n],
            residual_norm: b_norm,
            l1_norm: 0.0,
            iterations: 0,
            status: BpdnStatus::ZeroSolution,
            pareto_path: vec![(0.0, b_norm)],
            tau: 0.0,
        });
    }

    let prob = Problem {
        a: psi,
        at: psi.t().as_standard_layout().into_owned(),
        b: &b,
    };
    let root_tol = opts.opt_tol * b_norm.max(1.0);
    let col_scale = psi
        .columns()
        .into_iter()
        .map(|c| norm2(&c.to_vec()))
        .fold(0.0, f64::max);

    let (mut x, mut tau) = match warm {
        Some((x0, t0)) if x0.len() == n => {
            let mut x = x0.to_vec();
            project_l1_ball(&mut x, t0.max(0.0));
            let t = norm1(&x);
            (Array1::from(x), t)
        }
        _ => (Array1::zeros(n), 0.0),
    };

    let mut r = prob.residual(&x);
    let mut g = prob.gradient(&r);
    let mut f = 0.5 * pairwise_dot(r.as_slice().unwrap(), r.as_slice().unwrap());
    let mut history = [f; LINE_SEARCH_MEMORY];
    let mut step = {
        let gi = norm_inf(g.as_slice().unwrap());
        if gi > 0.0 { (1.0 / gi).clamp(STEP_MIN, STEP_MAX) } else { 1.0 }
    };
    let mut path = Vec::new();
    let mut best: Option<(Array1<f64>, f64)> = None;
    let mut f_old = f;
    let mut status = BpdnStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let r_norm = (2.0 * f).sqrt();
        let g_dual = norm_inf(g.as_slice().unwrap());
        // duality gap of the LASSO subproblem at the current iterate
        let gap = pairwise_dot(r.as_slice().unwrap(), r.as_slice().unwrap())
            - pairwise_dot(b.as_slice().unwrap(), r.as_slice().unwrap())
            + tau * g_dual;
        let r_gap = gap.abs() / f.max(1.0);
        let a_err = r_norm - delta;
        let r_err2 = (f - 0.5 * delta * delta).abs() / f.max(1.0);

        if r_norm >= delta {
            let better = best.as_ref().map(|(_, rn)| r_norm < *rn).unwrap_or(true);
            if better {
                best = Some((x.clone(), r_norm));
            }
        }

        let stagnant = iter > 0 && (f - f_old).abs() <= 1e-9 * f.max(1e-300) && r_norm > 2.0 * delta;
        let sub_done = r_gap <= opts.opt_tol.max(r_err2) || stagnant;

        if sub_done {
            let feasible = r_norm <= delta * (1.0 + opts.opt_tol) || (delta == 0.0 && r_norm <= root_tol);
            if a_err.abs() <= root_tol && feasible {
                status = BpdnStatus::RootFound;
                break;
            }
            // an interior stationary point of the subproblem is the
            // least-squares solution
            let interior = norm1(x.as_slice().unwrap()) < tau * (1.0 - 1e-6);
            let g_scale = r_norm * col_scale;
            if r_norm > delta && (g_dual <= LS_TOL * g_scale || (interior && g_dual <= opts.opt_tol * g_scale)) {
                status = BpdnStatus::LeastSquares;
                break;
            }
            if g_dual > 0.0 {
                path.push((tau, r_norm));
                let tau_old = tau;
                tau = (tau + r_norm * a_err / g_dual).max(0.0);
                if tau < tau_old {
                    let mut xs = x.to_vec();
                    project_l1_ball(&mut xs, tau);
                    x = Array1::from(xs);
                    r = prob.residual(&x);
                    g = prob.gradient(&r);
                    f = 0.5 * pairwise_dot(r.as_slice().unwrap(), r.as_slice().unwrap());
                }
                history.iter_mut().for_each(|h| *h = f);
            }
        }

        // spectral projected gradient step with curvilinear backtracking
        f_old = f;
        let f_max = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = step;
        let (x_new, r_new, f_new) = loop {
            let mut trial = (&x - &(&g * lambda)).to_vec();
            project_l1_ball(&mut trial, tau);
            let trial = Array1::from(trial);
            let d = &trial - &x;
            let gtd = pairwise_dot(g.as_slice().unwrap(), d.as_slice().unwrap());
            let r_t = prob.residual(&trial);
            let f_t = 0.5 * pairwise_dot(r_t.as_slice().unwrap(), r_t.as_slice().unwrap());
            if f_t <= f_max + LS_GAMMA * gtd || lambda < STEP_MIN || gtd >= 0.0 {
                break (trial, r_t, f_t);
            }
            lambda *= 0.5;
        };
        let g_new = prob.gradient(&r_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sts = pairwise_dot(s.as_slice().unwrap(), s.as_slice().unwrap());
        let sty = pairwise_dot(s.as_slice().unwrap(), y.as_slice().unwrap());
        step = if sty <= 0.0 { STEP_MAX } else { (sts / sty).clamp(STEP_MIN, STEP_MAX) };
        x = x_new;
        r = r_new;
        g = g_new;
        f = f_new;
        history.rotate_left(1);
        history[LINE_SEARCH_MEMORY - 1] = f;
    }

    if status == BpdnStatus::MaxIterations {
        if let Some((bx, _)) = best {
            x = bx;
            r = prob.residual(&x);
        }
    }
    let residual_norm = norm2(r.as_slice().unwrap());
    path.push((tau, residual_norm));
    let coefficients = x.to_vec();
    Ok(BpdnSolution {
        l1_norm: norm1(&coefficients),
        coefficients,
        residual_norm,
        iterations,
        status,
        pareto_path: path,
        tau,
    })
}

/// Cross-validation and solver settings for a BPDN fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BpdnConfig {
    /// Fixed residual budget; `None` selects it by cross-validation.
    pub delta: Option<f64>,
    pub cv_folds: usize,
    /// Candidate budgets relative to `‖E‖₂`, increasing.
    pub delta_grid: Vec<f64>,
    pub max_iters: usize,
    pub opt_tol: f64,
    /// Fold shuffling seed.
    pub seed: u64,
}

/// `count` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

impl Default for BpdnConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        BpdnConfig {
            delta: None,
            cv_folds: 4,
            delta_grid: log_grid(1e-4, 0.5, 40),
            max_iters: solver.max_iters,
            opt_tol: solver.opt_tol,
            seed: 0,
        }
    }
}

impl BpdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cv_folds < 2 {
            return Err(Error::Precondition("cv_folds must be >= 2".into()));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Precondition(format!("delta must be >= 0, got {d}")));
            }
        } else {
            if self.delta_grid.is_empty() {
                return Err(Error::Precondition("delta_grid is empty".into()));
            }
            if self.delta_grid.iter().any(|d| !(*d >= 0.0 && d.is_finite()))
                || self.delta_grid.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::Precondition(
                    "delta_grid must be non-negative and strictly increasing".into(),
                ));
            }
        }
        if self.max_iters == 0 || !(self.opt_tol > 0.0) {
            return Err(Error::Precondition("max_iters and opt_tol must be positive".into()));
        }
        Ok(())
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            opt_tol: self.opt_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpdnReport {
    pub coefficients: Vec<f64>,
    pub chosen_delta: f64,
    pub residual_norm: f64,
    pub l1_norm: f64,
    /// Validation residuals, `folds × delta_grid`; present iff cross-validated.
    pub cv_errors: Option<Array2<f64>>,
    /// The candidate grid (relative) the CV table refers to.
    pub delta_grid: Vec<f64>,
    pub iterations: usize,
    pub status: BpdnStatus,
}

/// Fits on the full ensemble at the configured budget, or cross-validates
/// one when `config.delta` is unset.
pub fn fit_bpdn(basis: &PcBasis, ensemble: &DesignEnsemble, config: &BpdnConfig) -> Result<BpdnReport> {
    config.validate()?;
    match config.delta {
        Some(delta) => {
            let psi = measurement_matrix(basis, ensemble.nodes().view())?;
            let sol = solve_bpdn(&psi, ensemble.values(), delta, config.solver())?;
            Ok(BpdnReport {
                coefficients: sol.coefficients,
                chosen_delta: delta,
                residual_norm: sol.residual_norm,
                l1_norm: sol.l1_norm,
                cv_errors: None,
                delta_grid: Vec::new(),
                iterations: sol.iterations,
                status: sol.status,
            })
        }
        None => cross_validate_delta(basis, ensemble, config),
    }
}

struct FoldResult {
    errors: Vec<f64>,
    deltas: Vec<f64>,
    n_train: usize,
    all_failed: bool,
    failures: usize,
}

/// k-fold selection of the residual budget, then a refit on all rows at the
/// selected budget scaled by `sqrt(N / N_train)`.
pub fn cross_validate_delta(
    basis: &PcBasis,
    ensemble: &DesignEnsemble,
    config: &BpdnConfig,
) -> Result<BpdnReport> {
    config.validate()?;
    let n = ensemble.len();
    let k = config.cv_folds;
    if n < k {
        return Err(Error::Precondition(format!("{n} rows cannot be split into {k} folds")));
    }
    let psi = measurement_matrix(basis, ensemble.nodes().view())?;
    let values = ensemble.values();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let folds: Vec<Vec<usize>> = (0..k)
        .map(|f| order.iter().copied().skip(f).step_by(k).collect())
        .collect();

    let solver = config.solver();
    let grid = &config.delta_grid;
    let results: Vec<FoldResult> = folds
        .par_iter()
        .map(|val_rows| {
            let mut is_val = vec![false; n];
            val_rows.iter().for_each(|&i| is_val[i] = true);
            let train_rows: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
            let a_train = psi.select(Axis(0), &train_rows);
            let b_train: Vec<f64> = train_rows.iter().map(|&i| values[i]).collect();
            let a_val = psi.select(Axis(0), val_rows);
            let b_val = Array1::from(val_rows.iter().map(|&i| values[i]).collect::<Vec<_>>());
            let scale = norm2(&b_train);

            let mut errors = vec![f64::NAN; grid.len()];
            let mut deltas = vec![0.0; grid.len()];
            let mut failures = 0;
            let mut warm: Option<(Vec<f64>, f64)> = None;
            // largest budget first: each solution warm-starts the next
            for (j, rel) in grid.iter().enumerate().rev() {
                let delta = rel * scale;
                deltas[j] = delta;
                let sol = solve_bpdn_warm(
                    &a_train,
                    &b_train,
                    delta,
                    solver,
                    warm.as_ref().map(|(x, t)| (x.as_slice(), *t)),
                );
                match sol {
                    Ok(sol) => {
                        if !sol.converged() {
                            failures += 1;
                        }
                        let pred = a_val.dot(&Array1::from(sol.coefficients.clone()));
                        errors[j] = norm2((&b_val - &pred).as_slice().unwrap());
                        warm = Some((sol.coefficients, sol.tau));
                    }
                    Err(_) => failures += 1,
                }
            }
            FoldResult {
                all_failed: failures == grid.len(),
                errors,
                deltas,
                n_train: train_rows.len(),
                failures,
            }
        })
        .collect();

    if results.iter().all(|r| r.all_failed) {
        let diag: Vec<String> = results
            .iter()
            .enumerate()
            .map(|(i, r)| format!("fold {i}: {} of {} fits failed", r.failures, grid.len()))
            .collect();
        return Err(Error::Solver(format!("cross-validation failed: {}", diag.join("; "))));
    }

    let mut cv = Array2::from_elem((k, grid.len()), f64::NAN);
    for (i, r) in results.iter().enumerate() {
        for (j, e) in r.errors.iter().enumerate() {
            cv[[i, j]] = *e;
        }
    }
    let mean_err: Vec<f64> = (0..grid.len())
        .map(|j| {
            let col: Vec<f64> = cv.column(j).iter().copied().filter(|v| v.is_finite()).collect();
            if col.is_empty() {
                f64::INFINITY
            } else {
                col.iter().sum::<f64>() / col.len() as f64
            }
        })
        .collect();
    let best = mean_err
        .iter()
        .enumerate()
        .fold(0, |bi, (j, e)| if *e < mean_err[bi] { j } else { bi });

    let train_delta =
        results.iter().map(|r| r.deltas[best]).sum::<f64>() / results.len() as f64;
    let n_train = results.iter().map(|r| r.n_train).sum::<usize>() as f64 / results.len() as f64;
    let chosen = train_delta * (n as f64 / n_train).sqrt();

    let sol = solve_bpdn(&psi, values, chosen, solver)?;
    Ok(BpdnReport {
        coefficients: sol.coefficients,
        chosen_delta: chosen,
        residual_norm: sol.residual_norm,
        l1_norm: sol.l1_norm,
        cv_errors: Some(cv),
        delta_grid: grid.clone(),
        iterations: sol.iterations,
        status: sol.status,
    })
}
