//! The fitted expansion `E(ξ) ≈ Σ e_k ψ_k(ξ)` and everything computed from it:
//! moments, total sensitivity indices, validation error, sampled densities
//! and response curves.

use std::fmt;
use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::PcBasis;
use crate::ensemble::DesignEnsemble;
use crate::error::{Error, Result};
use crate::kde::{kde, Density};
use crate::numeric::{norm2, pairwise_dot, pairwise_sum};

pub const BASIS_FAMILY: &str = "legendre-graded-lex";
pub const DEFAULT_SLICE_POINTS: usize = 201;
pub const DEFAULT_PDF_SAMPLES: usize = 1_000_000;

const SHARD: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Nisp,
    Bpdn,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::Nisp => "nisp",
            FitMethod::Bpdn => "bpdn",
        })
    }
}

impl std::str::FromStr for FitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nisp" => Ok(FitMethod::Nisp),
            "bpdn" => Ok(FitMethod::Bpdn),
            other => Err(Error::Precondition(format!("unknown fit method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcExpansion {
    basis: PcBasis,
    coefficients: Vec<f64>,
    fit_method: FitMethod,
    /// Free-form `key = value` provenance (δ, grid level, seeds, ...).
    pub fit_metadata: Vec<(String, String)>,
}

impl PcExpansion {
    pub fn new(basis: PcBasis, coefficients: Vec<f64>, fit_method: FitMethod) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::Shape {
                expected: basis.len(),
                found: coefficients.len(),
            });
        }
        Ok(PcExpansion {
            basis,
            coefficients,
            fit_method,
            fit_metadata: Vec::new(),
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.fit_metadata.push((key.into(), value.to_string()));
        self
    }

    pub fn basis(&self) -> &PcBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn fit_method(&self) -> FitMethod {
        self.fit_method
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn order(&self) -> usize {
        self.basis.order()
    }

    pub fn eval(&self, xi: &[f64]) -> Result<f64> {
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition(format!("non-finite point {xi:?}")));
        }
        let psi = self.basis.eval(xi)?;
        Ok(pairwise_dot(&psi, &self.coefficients))
    }

    /// Evaluates every row of a canonical node matrix.
    pub fn eval_rows(&self, nodes: ArrayView2<f64>) -> Result<Vec<f64>> {
        if nodes.ncols() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                found: nodes.ncols(),
            });
        }
        let mut psi = vec![0.0; self.basis.len()];
        nodes
            .rows()
            .into_iter()
            .map(|r| {
                self.basis.eval_into(&r.to_vec(), &mut psi)?;
                Ok(pairwise_dot(&psi, &self.coefficients))
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.coefficients[0]
    }

    fn partial_variances(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(self.basis.norms_sq())
            .map(|(e, n)| e * e * n)
            .collect()
    }

    pub fn variance(&self) -> f64 {
        pairwise_sum(&self.partial_variances()[1..])
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Total index `T_i`: share of the variance carried by every term whose
    /// multi-index involves dimension `i`.
    pub fn total_sensitivity(&self) -> Result<Vec<f64>> {
        let parts = self.partial_variances();
        let total = pairwise_sum(&parts[1..]);
        if !(total > 0.0) {
            return Err(Error::Degenerate(
                "sensitivity is undefined for a zero-variance surrogate".into(),
            ));
        }
        Ok((0..self.dim())
            .map(|i| {
                let s: Vec<f64> = self
                    .basis
                    .indices()
                    .iter()
                    .zip(&parts)
                    .filter(|(idx, _)| idx.degrees()[i] > 0)
                    .map(|(_, &v)| v)
                    .collect();
                (pairwise_sum(&s) / total).min(1.0)
            })
            .collect())
    }

    /// Normalized relative error `‖E_obs - E_pc‖₂ / ‖E_obs‖₂` over an ensemble.
    pub fn nre(&self, ensemble: &DesignEnsemble) -> Result<f64> {
        let pred = self.eval_rows(ensemble.nodes().view())?;
        let obs = ensemble.values();
        let denom = norm2(obs);
        if denom == 0.0 {
            return Err(Error::Normalization("observed values are all zero".into()));
        }
        let diff: Vec<f64> = obs.iter().zip(&pred).map(|(o, p)| o - p).collect();
        Ok(norm2(&diff) / denom)
    }

    /// Surrogate values at `n` uniform random points of the canonical cube.
    ///
    /// Points are drawn in fixed-size shards, each from its own ChaCha stream,
    /// so the result does not depend on the thread count.
    pub fn sample_values(&self, n: usize, seed: u64) -> Vec<f64> {
        let m = self.dim();
        let shards = n.div_ceil(SHARD);
        (0..shards)
            .into_par_iter()
            .flat_map_iter(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                let count = SHARD.min(n - s * SHARD);
                let mut xi = vec![0.0; m];
                let mut psi = vec![0.0; self.basis.len()];
                (0..count)
                    .map(|_| {
                        for x in xi.iter_mut() {
                            *x = rng.random_range(-1.0..=1.0);
                        }
                        self.basis.eval_into(&xi, &mut psi).expect("dimension checked");
                        pairwise_dot(&psi, &self.coefficients)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// KDE of the surrogate's pushforward of the uniform input law.
    pub fn sample_pdf(&self, n_samples: usize, seed: u64, n_grid: usize) -> Result<Density> {
        if n_samples < 1000 {
            return Err(Error::Precondition("pdf sampling needs at least 1000 samples".into()));
        }
        let values = self.sample_values(n_samples, seed);
        match kde(&values, n_grid, None) {
            Err(Error::Degenerate(_)) => {
                // constant surrogate: a spike at the value, one grid step wide
                let c = values[0];
                let h = 1e-6 * c.abs().max(1.0);
                kde(&values, n_grid, Some(h))
            }
            other => other,
        }
    }

    fn check_fixed(&self, fixed: Option<&[f64]>) -> Result<Vec<f64>> {
        match fixed {
            None => Ok(vec![0.0; self.dim()]),
            Some(f) if f.len() == self.dim() => Ok(f.to_vec()),
            Some(f) => Err(Error::Shape {
                expected: self.dim(),
                found: f.len(),
            }),
        }
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: axis,
                len: self.dim(),
            });
        }
        Ok(())
    }

    /// `(ξ_axis, E)` along an equispaced sweep of `[-1, 1]`, other coordinates
    /// held at `fixed` (the centre by default).
    pub fn response_slice(&self, axis: usize, fixed: Option<&[f64]>, n_points: usize) -> Result<Vec<(f64, f64)>> {
        self.check_axis(axis)?;
        let mut xi = self.check_fixed(fixed)?;
        sweep(n_points)
            .into_iter()
            .map(|t| {
                xi[axis] = t;
                Ok((t, self.eval(&xi)?))
            })
            .collect()
    }

    /// Values on the `n_points × n_points` grid over axes `i` (rows) and `j`
    /// (columns); returns the shared axis grid and the value matrix.
    pub fn response_surface(
        &self,
        i: usize,
        j: usize,
        fixed: Option<&[f64]>,
        n_points: usize,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        self.check_axis(i)?;
        self.check_axis(j)?;
        if i == j {
            return Err(Error::Precondition("surface axes must differ".into()));
        }
        let base = self.check_fixed(fixed)?;
        let ts = sweep(n_points);
        let mut out = Array2::zeros((ts.len(), ts.len()));
        for (a, &ta) in ts.iter().enumerate() {
            for (b, &tb) in ts.iter().enumerate() {
                let mut xi = base.clone();
                xi[i] = ta;
                xi[j] = tb;
                out[[a, b]] = self.eval(&xi)?;
            }
        }
        Ok((ts, out))
    }

    /// Self-describing coefficient file: header lines, then one row per term
    /// with its index, multi-index and coefficient.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# pcecal coefficients")?;
        writeln!(w, "# dim = {}", self.dim())?;
        writeln!(w, "# order = {}", self.order())?;
        writeln!(w, "# family = {BASIS_FAMILY}")?;
        writeln!(w, "# method = {}", self.fit_method)?;
        for (k, v) in &self.fit_metadata {
            writeln!(w, "# meta {k} = {v}")?;
        }
        let mut header = String::from("# term");
        for i in 1..=self.dim() {
            header.push_str(&format!(" alpha_{i}"));
        }
        writeln!(w, "{header} coefficient")?;
        for (t, (idx, c)) in self.basis.indices().iter().zip(&self.coefficients).enumerate() {
            let mut line = t.to_string();
            for d in idx.degrees() {
                line.push_str(&format!(" {d}"));
            }
            writeln!(w, "{line} {c:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut dim = None;
        let mut order = None;
        let mut method = None;
        let mut meta = Vec::new();
        let mut rows: Vec<(usize, Vec<u32>, f64)> = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let perr = |message: String| Error::Parse { line: lineno, message };
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(h) = t.strip_prefix('#') {
                let h = h.trim();
                if let Some(kv) = h.strip_prefix("meta ") {
                    if let Some((k, v)) = kv.split_once('=') {
                        meta.push((k.trim().to_string(), v.trim().to_string()));
                    }
                    continue;
                }
                if let Some((k, v)) = h.split_once('=') {
                    let v = v.trim();
                    match k.trim() {
                        "dim" => dim = Some(v.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                        "order" => order = Some(v.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                        "method" => method = Some(v.parse::<FitMethod>().map_err(|e| perr(e.to_string()))?),
                        "family" if v != BASIS_FAMILY => {
                            return Err(perr(format!("unsupported basis family `{v}`")))
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let d = dim.ok_or_else(|| perr("data row before `# dim = ` header".into()))?;
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != d + 2 {
                return Err(perr(format!("expected {} fields, found {}", d + 2, f.len())));
            }
            let term = f[0].parse().map_err(|e| perr(format!("term index: {e}")))?;
            let alpha = f[1..=d]
                .iter()
                .map(|s| s.parse::<u32>().map_err(|e| perr(format!("multi-index `{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let c = f[d + 1].parse().map_err(|e| perr(format!("coefficient: {e}")))?;
            rows.push((term, alpha, c));
        }
        let missing = |what: &str| Error::Parse {
            line: 0,
            message: format!("missing `# {what} = ` header"),
        };
        let basis = PcBasis::new(dim.ok_or_else(|| missing("dim"))?, order.ok_or_else(|| missing("order"))?)?;
        let method = method.ok_or_else(|| missing("method"))?;
        if rows.len() != basis.len() {
            return Err(Error::Shape {
                expected: basis.len(),
                found: rows.len(),
            });
        }
        let mut coeffs = vec![0.0; basis.len()];
        for (term, alpha, c) in rows {
            let pos = basis.position(&alpha).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("multi-index {alpha:?} not in basis"),
            })?;
            if pos != term {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("term {term} has multi-index {alpha:?}, expected position {pos}"),
                });
            }
            coeffs[pos] = c;
        }
        let mut out = PcExpansion::new(basis, coeffs, method)?;
        out.fit_metadata = meta;
        Ok(out)
    }
}

fn sweep(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect(),
    }
}
