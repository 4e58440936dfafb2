//! Scaled-likelihood calibration of model parameters against a scalar cost.
//!
//! The joint posterior is
//! `π(p, S) ∝ S^(k_e/2) exp(-S·E(p)) · Gamma(S; α, β) · Π π(p_i)`
//! with uniform priors on the parameter box. Sampling alternates a
//! random-walk Metropolis step on `p` (in canonical coordinates) with an exact
//! draw of `S` from its Gamma conditional.

use std::io::Write;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::kde::{kde, Density};
use crate::space::ParameterSpace;
use crate::surrogate::PcExpansion;

/// Gamma prior on the likelihood scale `S` (shape `alpha`, rate `beta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            alpha: 18.18,
            beta: 72.02,
        }
    }
}

impl HyperPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Precondition(format!(
                "hyper-prior needs alpha, beta > 0, got {alpha}, {beta}"
            )));
        }
        Ok(HyperPrior { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha / (self.beta * self.beta)
    }

    /// Unnormalized log density; `-inf` for `S <= 0`.
    pub fn log_density(&self, s: f64) -> f64 {
        if s > 0.0 {
            (self.alpha - 1.0) * s.ln() - self.beta * s
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        Gamma::new(self.alpha, 1.0 / self.beta)
            .expect("validated parameters")
            .sample(rng)
    }
}

/// A scalar cost `E(p)` over physical parameters.
pub trait CostModel: Sync {
    fn dim(&self) -> usize;
    fn cost(&self, p: &[f64]) -> Result<f64>;
}

/// Evaluates a surrogate after mapping physical parameters to the cube.
pub struct SurrogateCost<'a> {
    pub space: &'a ParameterSpace,
    pub surrogate: &'a PcExpansion,
}

impl CostModel for SurrogateCost<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn cost(&self, p: &[f64]) -> Result<f64> {
        self.surrogate.eval(&self.space.to_canonical(p)?)
    }
}

/// Wraps a closure as a cost model.
pub struct FnCost<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> CostModel for FnCost<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cost(&self, p: &[f64]) -> Result<f64> {
        Ok((self.f)(p))
    }
}

/// Pre-run proposal tuning; discarded before the production chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    pub iterations: usize,
    pub batch: usize,
    pub target_low: f64,
    pub target_high: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            iterations: 20_000,
            batch: 200,
            target_low: 0.2,
            target_high: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub space: ParameterSpace,
    pub hyper: HyperPrior,
    /// Effective degrees of freedom of the cost statistic.
    pub ke: f64,
    pub n_iters: usize,
    pub burn_in: usize,
    /// Random-walk standard deviations in canonical units.
    pub proposal_scales: Vec<f64>,
    pub seed: u64,
    /// Holds `S` fixed instead of Gibbs-sampling it.
    pub fixed_s: Option<f64>,
    pub tuning: Option<Tuning>,
    /// Starting point in physical units; defaults, else the box centre.
    pub start: Option<Vec<f64>>,
}

impl CalibrationConfig {
    pub fn new(space: ParameterSpace) -> Self {
        let m = space.dim();
        CalibrationConfig {
            space,
            hyper: HyperPrior::default(),
            ke: 17.0,
            n_iters: 1_000_000,
            burn_in: 200_000,
            proposal_scales: vec![0.1; m],
            seed: 0,
            fixed_s: None,
            tuning: None,
            start: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.space.dim();
        HyperPrior::new(self.hyper.alpha, self.hyper.beta)?;
        if !(self.ke > 0.0 && self.ke.is_finite()) {
            return Err(Error::Precondition(format!("ke must be positive, got {}", self.ke)));
        }
        if self.n_iters == 0 || self.burn_in >= self.n_iters {
            return Err(Error::Precondition(format!(
                "need 0 <= burn_in < n_iters, got {} and {}",
                self.burn_in, self.n_iters
            )));
        }
        if self.proposal_scales.len() != m {
            return Err(Error::Shape {
                expected: m,
                found: self.proposal_scales.len(),
            });
        }
        if self.proposal_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Precondition("proposal scales must be positive".into()));
        }
        if let Some(s) = self.fixed_s {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Precondition(format!("fixed S must be positive, got {s}")));
            }
        }
        if let Some(t) = self.tuning {
            if t.batch == 0 || !(0.0 < t.target_low && t.target_low < t.target_high && t.target_high < 1.0) {
                return Err(Error::Precondition("invalid tuning settings".into()));
            }
        }
        if let Some(p) = &self.start {
            if p.len() != m {
                return Err(Error::Shape {
                    expected: m,
                    found: p.len(),
                });
            }
            if !self.space.contains(p) {
                return Err(Error::Precondition("start point outside the prior box".into()));
            }
        }
        Ok(())
    }

    fn start_point(&self) -> Vec<f64> {
        self.start.clone().unwrap_or_else(|| {
            self.space
                .params()
                .iter()
                .map(|s| s.default.unwrap_or(0.5 * (s.lower + s.upper)))
                .collect()
        })
    }

    fn shape(&self) -> f64 {
        0.5 * self.ke + self.hyper.alpha
    }
}

fn checked_cost(model: &dyn CostModel, p: &[f64]) -> Result<f64> {
    let e = model.cost(p)?;
    if !e.is_finite() {
        return Err(Error::Evaluation {
            point: p.to_vec(),
            value: e,
        });
    }
    Ok(e)
}

fn log_post_from_cost(config: &CalibrationConfig, e: f64, s: f64, log_prior: f64) -> f64 {
    (config.shape() - 1.0) * s.ln() - s * (e + config.hyper.beta) + log_prior
}

/// Unnormalized joint log posterior; `-inf` outside the box or for `S <= 0`.
pub fn log_posterior(config: &CalibrationConfig, model: &dyn CostModel, p: &[f64], s: f64) -> Result<f64> {
    let lp = config.space.log_prior(p);
    if lp == f64::NEG_INFINITY || !(s > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let e = checked_cost(model, p)?;
    Ok(log_post_from_cost(config, e, s, lp))
}

/// Metropolis acceptance probability for a log-posterior difference.
pub fn acceptance_probability(log_post_new: f64, log_post_old: f64) -> f64 {
    if log_post_new == f64::NEG_INFINITY {
        return 0.0;
    }
    (log_post_new - log_post_old).exp().min(1.0)
}

/// Exact draw from `S | p ~ Gamma(k_e/2 + α, rate = E(p) + β)`.
pub fn gibbs_draw_s(config: &CalibrationConfig, cost: f64, rng: &mut impl Rng) -> Result<f64> {
    let rate = cost + config.hyper.beta;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Degenerate(format!(
            "S conditional has rate E + beta = {rate}; the cost is below -beta"
        )));
    }
    let g = Gamma::new(config.shape(), 1.0 / rate).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(g.sample(rng))
}

/// MCMC output. Rows cover every iteration; `burn_in` marks where
/// reported statistics start.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples_p: Array2<f64>,
    pub samples_s: Vec<f64>,
    pub log_post: Vec<f64>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub burn_in: usize,
    /// Proposal scales actually used (after tuning).
    pub proposal_scales: Vec<f64>,
    pub names: Vec<String>,
}

struct Walker<'a> {
    config: &'a CalibrationConfig,
    model: &'a dyn CostModel,
    xi: Vec<f64>,
    p: Vec<f64>,
    cost: f64,
    s: f64,
}

impl Walker<'_> {
    fn metropolis(&mut self, scales: &[f64], rng: &mut ChaCha8Rng, iter: usize) -> Result<bool> {
        let prop: Vec<f64> = self
            .xi
            .iter()
            .zip(scales)
            .map(|(x, sc)| {
                let z: f64 = StandardNormal.sample(rng);
                x + sc * z
            })
            .collect();
        if prop.iter().any(|x| x.abs() > 1.0) {
            // outside the box: the prior is zero, reject without evaluating
            return Ok(false);
        }
        let p_new = self.config.space.from_canonical(&prop)?;
        let e_new = checked_cost(self.model, &p_new).map_err(|e| match e {
            Error::Evaluation { point, value } => Error::Evaluation { point, value },
            other => Error::Solver(format!("cost evaluation failed at iteration {iter}: {other}")),
        })?;
        // uniform prior and the S terms cancel in the ratio
        let log_ratio = -self.s * (e_new - self.cost);
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            self.xi = prop;
            self.p = p_new;
            self.cost = e_new;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn gibbs(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.config.fixed_s.is_none() {
            self.s = gibbs_draw_s(self.config, self.cost, rng)?;
        }
        Ok(())
    }
}

/// Runs the Metropolis-within-Gibbs chain. Fully determined by `config.seed`.
pub fn run_mcmc(config: &CalibrationConfig, model: &dyn CostModel) -> Result<Chain> {
    config.validate()?;
    let m = config.space.dim();
    if model.dim() != m {
        return Err(Error::Shape {
            expected: m,
            found: model.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p0 = config.start_point();
    let mut w = Walker {
        config,
        model,
        xi: config.space.to_canonical(&p0)?,
        cost: checked_cost(model, &p0)?,
        p: p0,
        s: config.fixed_s.unwrap_or_else(|| config.hyper.mean()),
    };
    w.gibbs(&mut rng)?;

    let mut scales = config.proposal_scales.clone();
    if let Some(t) = config.tuning {
        let mut done = 0;
        while done < t.iterations {
            let n = t.batch.min(t.iterations - done);
            let mut acc = 0;
            for i in 0..n {
                acc += w.metropolis(&scales, &mut rng, i)? as usize;
                w.gibbs(&mut rng)?;
            }
            done += n;
            let rate = acc as f64 / n as f64;
            let factor = if rate < t.target_low {
                0.7
            } else if rate > t.target_high {
                1.4
            } else {
                1.0
            };
            scales.iter_mut().for_each(|s| *s = (*s * factor).clamp(1e-6, 2.0));
        }
    }

    let n = config.n_iters;
    let mut samples_p = Array2::zeros((n, m));
    let mut samples_s = Vec::with_capacity(n);
    let mut log_post = Vec::with_capacity(n);
    let mut accepted = 0usize;
    for it in 0..n {
        accepted += w.metropolis(&scales, &mut rng, it)? as usize;
        w.gibbs(&mut rng)?;
        samples_p.row_mut(it).iter_mut().zip(&w.p).for_each(|(d, v)| *d = *v);
        samples_s.push(w.s);
        log_post.push(log_post_from_cost(config, w.cost, w.s, config.space.log_prior(&w.p)));
    }
    Ok(Chain {
        samples_p,
        samples_s,
        log_post,
        acceptance_rate: accepted as f64 / n as f64,
        seed: config.seed,
        burn_in: config.burn_in,
        proposal_scales: scales,
        names: config.space.names().map(str::to_string).collect(),
    })
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_s.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples_p.ncols()
    }

    /// Column `i` after burn-in; `i == dim()` selects `S`.
    pub fn kept(&self, i: usize) -> Vec<f64> {
        if i == self.dim() {
            self.samples_s[self.burn_in..].to_vec()
        } else {
            self.samples_p.column(i).iter().skip(self.burn_in).copied().collect()
        }
    }

    /// Posterior means of every parameter and `S`, after burn-in.
    pub fn posterior_mean(&self) -> Vec<f64> {
        (0..=self.dim())
            .map(|i| {
                let v = self.kept(i);
                crate::numeric::pairwise_sum(&v) / v.len() as f64
            })
            .collect()
    }

    /// KDE marginal for each parameter, then `S`.
    pub fn kde_marginals(&self, n_grid: usize) -> Result<Vec<Density>> {
        (0..=self.dim()).map(|i| kde(&self.kept(i), n_grid, None)).collect()
    }

    /// Post-burn-in rows: iteration, physical parameters, `S`, log posterior.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# pcecal chain")?;
        writeln!(w, "# seed = {}", self.seed)?;
        writeln!(w, "# burn_in = {}", self.burn_in)?;
        writeln!(w, "# acceptance_rate = {:.6}", self.acceptance_rate)?;
        writeln!(w, "# iteration {} S log_posterior", self.names.join(" "))?;
        for it in self.burn_in..self.len() {
            let mut line = it.to_string();
            for v in self.samples_p.row(it) {
                line.push_str(&format!(" {v:.16e}"));
            }
            line.push_str(&format!(" {:.16e} {:.16e}", self.samples_s[it], self.log_post[it]));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Cumulative means of every row-vector of `samples` (one column per
/// coordinate).
pub fn running_mean_of(samples: &Array2<f64>) -> Result<Array2<f64>> {
    if samples.nrows() == 0 {
        return Err(Error::Precondition("running mean of an empty chain".into()));
    }
    let mut out = Array2::zeros(samples.raw_dim());
    let mut sum = vec![0.0; samples.ncols()];
    for (i, row) in samples.axis_iter(Axis(0)).enumerate() {
        let row: ArrayView1<f64> = row;
        for (j, v) in row.iter().enumerate() {
            sum[j] += v;
            out[[i, j]] = sum[j] / (i + 1) as f64;
        }
    }
    Ok(out)
}

/// Running means of the parameters and `S` over the whole chain,
/// `n_iters × (m + 1)`.
pub fn running_mean(chain: &Chain) -> Result<Array2<f64>> {
    let m = chain.dim();
    let mut all = Array2::zeros((chain.len(), m + 1));
    all.slice_mut(ndarray::s![.., ..m]).assign(&chain.samples_p);
    all.column_mut(m).iter_mut().zip(&chain.samples_s).for_each(|(d, s)| *d = *s);
    running_mean_of(&all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterSpec;
    use approx::assert_abs_diff_eq;

    fn box2() -> ParameterSpace {
        ParameterSpace::new(vec![ParameterSpec::new("a", 0.0, 2.0), ParameterSpec::new("b", 1.0, 5.0)]).unwrap()
    }

    fn constant(c: f64) -> FnCost<impl Fn(&[f64]) -> f64 + Sync> {
        FnCost { dim: 2, f: move |_: &[f64]| c }
    }

    #[test]
    fn hyper_prior_moments() {
        let h = HyperPrior::default();
        assert_abs_diff_eq!(h.mean(), 0.252, epsilon = 5e-4);
        assert_abs_diff_eq!(h.variance(), 0.0035, epsilon = 5e-4);
        assert_eq!(h.log_density(0.0), f64::NEG_INFINITY);
        assert!(HyperPrior::new(0.0, 1.0).is_err());
    }

    #[test]
    fn posterior_sentinels_and_ratio_identity() {
        let cfg = CalibrationConfig::new(box2());
        let model = FnCost {
            dim: 2,
            f: |p: &[f64]| 3.0 + p[0] * p[0] + (p[1] - 2.0).powi(2),
        };
        assert_eq!(log_posterior(&cfg, &model, &[3.0, 2.0], 0.2).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_posterior(&cfg, &model, &[1.0, 2.0], 0.0).unwrap(), f64::NEG_INFINITY);
        let a = cfg.ke / 2.0 + cfg.hyper.alpha - 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = [rng.random_range(0.0..2.0), rng.random_range(1.0..5.0)];
            let (s1, s2) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
            let e = (model.f)(&p);
            let lhs = log_posterior(&cfg, &model, &p, s1).unwrap() - log_posterior(&cfg, &model, &p, s2).unwrap();
            let rhs = a * (s1 / s2).ln() - (s1 - s2) * (e + cfg.hyper.beta);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
        let bad = FnCost { dim: 2, f: |_: &[f64]| f64::NAN };
        assert!(matches!(log_posterior(&cfg, &bad, &[1.0, 2.0], 0.1), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn acceptance_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, b, c): (f64, f64, f64) = (rng.random_range(-50.0..0.0), rng.random_range(-50.0..0.0), rng.random_range(-10.0..10.0));
            assert!((acceptance_probability(a, b) - acceptance_probability(a + c, b + c)).abs() <= 1e-14);
        }
        assert_eq!(acceptance_probability(f64::NEG_INFINITY, -1.0), 0.0);
    }

    #[test]
    fn gibbs_conditional() {
        let cfg = CalibrationConfig::new(box2());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = 8.5 + 18.18;
        let n = 100_000;
        for e in [0.0, 325.62] {
            let rate = e + 72.02;
            let draws: Vec<f64> = (0..n).map(|_| gibbs_draw_s(&cfg, e, &mut rng).unwrap()).collect();
            let (m, v) = crate::numeric::mean_var(&draws);
            let (tm, tv) = (shape / rate, shape / (rate * rate));
            assert!((m - tm).abs() < 4.0 * (tv / n as f64).sqrt());
            // Var(sample var) = (μ4 - σ⁴)/n with μ4 = 3σ⁴(1 + 2/shape) for a Gamma
            let se_v = (tv * tv * (2.0 + 6.0 / shape) / n as f64).sqrt();
            assert!((v - tv).abs() < 4.0 * se_v);
        }
        assert_abs_diff_eq!(shape / (325.62 + 72.02), 0.0671, epsilon = 1e-4);
        assert!(matches!(gibbs_draw_s(&cfg, -100.0, &mut rng), Err(Error::Degenerate(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = CalibrationConfig::new(box2());
        assert!(cfg.validate().is_ok());
        cfg.burn_in = cfg.n_iters;
        assert!(cfg.validate().is_err());
        let mut cfg = CalibrationConfig::new(box2());
        cfg.proposal_scales = vec![0.1, 0.0];
        assert!(cfg.validate().is_err());
        cfg.proposal_scales = vec![0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = CalibrationConfig::new(box2());
        cfg.start = Some(vec![5.0, 2.0]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chains_are_reproducible_and_in_the_box() {
        let mut cfg = CalibrationConfig::new(box2());
        cfg.n_iters = 5000;
        cfg.burn_in = 1000;
        cfg.seed = 11;
        let model = FnCost {
            dim: 2,
            f: |p: &[f64]| 10.0 * (p[0] - 1.0).powi(2) + (p[1] - 3.0).powi(2),
        };
        let a = run_mcmc(&cfg, &model).unwrap();
        let b = run_mcmc(&cfg, &model).unwrap();
        assert_eq!(a, b);
        assert!(a.samples_p.rows().into_iter().all(|r| cfg.space.contains(&r.to_vec())));
        assert!(a.samples_s.iter().all(|s| *s > 0.0));
        assert!(a.acceptance_rate > 0.0 && a.acceptance_rate < 1.0);
        cfg.seed = 12;
        assert_ne!(run_mcmc(&cfg, &model).unwrap().samples_s, a.samples_s);

        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 4000);
        assert_eq!(rows[0].split_whitespace().count(), 1 + 2 + 2);
        assert!(rows[0].starts_with("1000 "));
    }

    #[test]
    fn flat_target_recovers_gamma_conditional() {
        let mut cfg = CalibrationConfig::new(box2());
        cfg.n_iters = 100_000;
        cfg.burn_in = 1;
        let c = 40.0;
        let chain = run_mcmc(&cfg, &constant(c)).unwrap();
        let s = chain.kept(2);
        let (m, v) = crate::numeric::mean_var(&s);
        let shape = cfg.ke / 2.0 + cfg.hyper.alpha;
        let rate = c + cfg.hyper.beta;
        let n = s.len() as f64;
        assert!((m - shape / rate).abs() < 4.0 * (shape / (rate * rate) / n).sqrt());
        let tv = shape / (rate * rate);
        assert!((v - tv).abs() < 4.0 * (tv * tv * (2.0 + 6.0 / shape) / n).sqrt());
    }

    #[test]
    fn tuning_lands_in_target_band() {
        let mut cfg = CalibrationConfig::new(box2());
        cfg.n_iters = 20_000;
        cfg.burn_in = 0;
        cfg.fixed_s = Some(1.0);
        cfg.proposal_scales = vec![1.5, 1.5];
        cfg.tuning = Some(Tuning::default());
        let model = FnCost {
            dim: 2,
            f: |p: &[f64]| 0.5 * (((p[0] - 0.8) / 0.05).powi(2) + ((p[1] - 3.2) / 0.1).powi(2)),
        };
        let chain = run_mcmc(&cfg, &model).unwrap();
        assert!(chain.acceptance_rate > 0.15 && chain.acceptance_rate < 0.45, "{}", chain.acceptance_rate);
        assert!(chain.proposal_scales[0] < 1.5);
    }

    #[test]
    fn running_means() {
        let c = Array2::from_elem((50, 2), 3.0);
        assert!(running_mean_of(&c).unwrap().iter().all(|v| *v == 3.0));
        let alt = Array2::from_shape_fn((1000, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        let rm = running_mean_of(&alt).unwrap();
        for i in 0..1000 {
            assert!(rm[[i, 0]].abs() <= 1.0 / (i + 1) as f64 + 1e-15);
        }
        assert!(running_mean_of(&Array2::zeros((0, 2))).is_err());
    }
}
