//! Uncertain parameters, their uniform priors, and the affine map onto the
//! canonical cube `[-1, 1]^m`.
//!
//! The map keeps the orientation `ξ = (2p - (a + b)) / (a - b)`, so the lower
//! bound `a` lands on `ξ = +1` and the upper bound `b` on `ξ = -1`. Every
//! design file, coefficient file and chain produced by this crate uses that
//! orientation; mixing it with the ascending convention silently mirrors the
//! surrogate.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// One uncertain parameter with a uniform prior on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub default: Option<f64>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        ParameterSpec {
            name: name.into(),
            lower,
            upper,
            default: None,
        }
    }

    pub fn with_default(mut self, default: f64) -> Self {
        self.default = Some(default);
        self
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn to_canonical(&self, p: f64) -> f64 {
        (2.0 * p - (self.lower + self.upper)) / (self.lower - self.upper)
    }

    fn to_physical(&self, xi: f64) -> f64 {
        0.5 * (xi * (self.lower - self.upper) + self.lower + self.upper)
    }
}

/// Ordered, validated list of uncertain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    params: Vec<ParameterSpec>,
}

impl ParameterSpace {
    /// Validates bounds, defaults and name uniqueness.
    pub fn new(params: Vec<ParameterSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidSpace("at least one parameter required".into()));
        }
        let mut seen = HashSet::new();
        for spec in &params {
            if spec.name.is_empty() {
                return Err(Error::InvalidSpace("empty parameter name".into()));
            }
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate parameter `{}`", spec.name)));
            }
            if !(spec.lower.is_finite() && spec.upper.is_finite()) || spec.lower >= spec.upper {
                return Err(Error::InvalidSpace(format!(
                    "parameter `{}` needs finite lower < upper, got [{}, {}]",
                    spec.name, spec.lower, spec.upper
                )));
            }
            if let Some(d) = spec.default {
                if !(spec.lower..=spec.upper).contains(&d) {
                    return Err(Error::InvalidSpace(format!(
                        "default {} of `{}` outside [{}, {}]",
                        d, spec.name, spec.lower, spec.upper
                    )));
                }
            }
        }
        Ok(ParameterSpace { params })
    }

    /// The five mixing parameters and prior box used in the reference ocean
    /// calibration study (critical bulk / gradient Richardson numbers, two
    /// unstable-forcing structure functions, non-local transport).
    pub fn kpp_reference() -> Self {
        ParameterSpace::new(vec![
            ParameterSpec::new("Ri_c", 0.1, 1.0).with_default(0.3),
            ParameterSpec::new("Ri_g", 0.1, 1.0).with_default(0.7),
            ParameterSpec::new("phi_m_unst", 3.60, 331.06).with_default(16.0),
            ParameterSpec::new("phi_s_unst", 7.77, 67.02).with_default(16.0),
            ParameterSpec::new("C_star", 5.0, 15.0).with_default(10.0),
        ])
        .expect("reference box is valid")
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// Physical to canonical coordinates. Lower bounds map to `+1`.
    pub fn to_canonical(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p.len())?;
        self.params
            .iter()
            .zip(p)
            .map(|(spec, &v)| {
                if !(spec.lower..=spec.upper).contains(&v) {
                    return Err(Error::OutOfDomain {
                        name: spec.name.clone(),
                        value: v,
                        lower: spec.lower,
                        upper: spec.upper,
                    });
                }
                Ok(spec.to_canonical(v).clamp(-1.0, 1.0))
            })
            .collect()
    }

    /// Canonical to physical coordinates.
    pub fn from_canonical(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_len(xi.len())?;
        self.params
            .iter()
            .zip(xi)
            .map(|(spec, &x)| {
                if !(-1.0..=1.0).contains(&x) {
                    return Err(Error::OutOfDomain {
                        name: spec.name.clone(),
                        value: x,
                        lower: -1.0,
                        upper: 1.0,
                    });
                }
                Ok(spec.to_physical(x).clamp(spec.lower, spec.upper))
            })
            .collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && self
                .params
                .iter()
                .zip(p)
                .all(|(spec, &v)| v >= spec.lower && v <= spec.upper)
    }

    /// Log density of the product of uniform priors; `-inf` outside the box.
    pub fn log_prior(&self, p: &[f64]) -> f64 {
        if !self.contains(p) {
            return f64::NEG_INFINITY;
        }
        -self.params.iter().map(|s| s.width().ln()).sum::<f64>()
    }

    /// Default values, falling back to the box midpoint.
    pub fn defaults(&self) -> Vec<f64> {
        self.params
            .iter()
            .map(|s| s.default.unwrap_or(0.5 * (s.lower + s.upper)))
            .collect()
    }
}
