//! Gaussian kernel density estimates on an equispaced grid.

use std::io::Write;

use crate::error::{Error, Result};
use crate::numeric::mean_var;

pub const DEFAULT_GRID: usize = 512;
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule: `0.9 · min(std, IQR / 1.34) · n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Degenerate("bandwidth needs at least two samples".into()));
    }
    let (_, var) = mean_var(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let std = var.sqrt();
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = 0.9 * spread * (samples.len() as f64).powf(-0.2);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Degenerate("samples have zero spread".into()));
    }
    Ok(h)
}

impl Density {
    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        self.mass_between(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Trapezoid mass over grid cells lying inside `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .filter(|(x, _)| x[0] >= a && x[1] <= b)
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Linear interpolation; zero outside the grid.
    pub fn at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x < self.grid[0] || x > self.grid[n - 1] {
            return 0.0;
        }
        let step = self.grid[1] - self.grid[0];
        let i = (((x - self.grid[0]) / step) as usize).min(n - 2);
        let t = (x - self.grid[i]) / step;
        self.density[i] * (1.0 - t) + self.density[i + 1] * t
    }

    /// Two-column `x density` table.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# bandwidth = {:.16e}", self.bandwidth)?;
        writeln!(w, "# x density")?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            writeln!(w, "{x:.16e} {d:.16e}")?;
        }
        Ok(())
    }
}

/// Gaussian-kernel KDE evaluated on `n_grid` points spanning
/// `[min - 3h, max + 3h]`.
pub fn kde(samples: &[f64], n_grid: usize, bandwidth: Option<f64>) -> Result<Density> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Precondition(format!(
            "KDE needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if n_grid < 2 {
        return Err(Error::Precondition("KDE grid needs at least two points".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("non-finite sample".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Degenerate(format!("bandwidth {h}"))),
        None => silverman_bandwidth(samples)?,
    };
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (n_grid - 1) as f64;
    let grid: Vec<f64> = (0..n_grid).map(|i| lo + step * i as f64).collect();

    // Bin samples onto the grid by linear assignment, then convolve with the
    // kernel truncated at 8h; the binning error is O(step²).
    let mut counts = vec![0.0; n_grid];
    for &x in samples {
        let pos = (x - lo) / step;
        let i = (pos.floor() as usize).min(n_grid - 2);
        let t = pos - i as f64;
        counts[i] += 1.0 - t;
        counts[i + 1] += t;
    }
    let reach = ((8.0 * h / step).ceil() as usize).min(n_grid - 1);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let kernel: Vec<f64> = (0..=reach)
        .map(|j| {
            let u = j as f64 * step / h;
            (-0.5 * u * u).exp() * norm
        })
        .collect();
    let mut density = vec![0.0; n_grid];
    for (i, &c) in counts.iter().enumerate().filter(|(_, c)| **c != 0.0) {
        let a = i.saturating_sub(reach);
        let b = (i + reach).min(n_grid - 1);
        for (j, d) in density.iter_mut().enumerate().take(b + 1).skip(a) {
            *d += c * kernel[i.abs_diff(j)];
        }
    }
    Ok(Density {
        grid,
        density,
        bandwidth: h,
    })
}
