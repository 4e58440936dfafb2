//! Non-intrusive spectral projection: quadrature-discretized Galerkin
//! projection of model values onto the basis.
//!
//! Coefficients are `e_k = Σ_q P_kq E(ξ_q)` with the projection matrix
//! `P_kq = ψ_k(ξ_q) ω_q / <ψ_k, ψ_k>`. The matrix depends only on the basis
//! and the grid, so it is materialized once and reused across fits. Row
//! sums use pairwise summation, which keeps results bitwise stable for a
//! given input order.

use ndarray::{Array2, ArrayView2};

use crate::basis::PcBasis;
use crate::ensemble::DesignEnsemble;
use crate::error::{Error, Result};
use crate::numeric::pairwise_dot;
use crate::sparse_grid::SparseGrid;

fn projection_from_nodes(basis: &PcBasis, nodes: ArrayView2<f64>, weights: &[f64]) -> Result<Array2<f64>> {
    if nodes.ncols() != basis.dim() {
        return Err(Error::Shape {
            expected: basis.dim(),
            found: nodes.ncols(),
        });
    }
    let q = nodes.nrows();
    let mut p = Array2::zeros((basis.len(), q));
    let mut psi = vec![0.0; basis.len()];
    for (j, row) in nodes.rows().into_iter().enumerate() {
        let xi = row.to_vec();
        basis.eval_into(&xi, &mut psi)?;
        for (k, (&v, &n)) in psi.iter().zip(basis.norms_sq()).enumerate() {
            p[[k, j]] = v * weights[j] / n;
        }
    }
    Ok(p)
}

/// The `(R+1) × Q` projection matrix for a basis and a quadrature grid.
pub fn projection_matrix(basis: &PcBasis, grid: &SparseGrid) -> Result<Array2<f64>> {
    projection_from_nodes(basis, grid.nodes().view(), grid.weights())
}

/// Applies a precomputed projection matrix to model values.
pub fn project(matrix: &Array2<f64>, values: &[f64]) -> Result<Vec<f64>> {
    if matrix.ncols() != values.len() {
        return Err(Error::Shape {
            expected: matrix.ncols(),
            found: values.len(),
        });
    }
    Ok(matrix
        .rows()
        .into_iter()
        .map(|row| pairwise_dot(row.as_slice().expect("standard layout"), values))
        .collect())
}

/// NISP coefficients from a quadrature ensemble.
///
/// Ensembles without weights (random designs, subsets) are refused: spectral
/// projection is only meaningful on a quadrature, use basis pursuit there.
pub fn nisp_coefficients(basis: &PcBasis, ensemble: &DesignEnsemble) -> Result<Vec<f64>> {
    let weights = ensemble.weights().ok_or_else(|| {
        Error::Precondition(
            "NISP requires a quadrature design with weights; use BPDN for random or subset designs"
                .into(),
        )
    })?;
    let p = projection_from_nodes(basis, ensemble.nodes().view(), weights)?;
    project(&p, ensemble.values())
}

/// One entry of a normalized coefficient spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumEntry {
    pub term: usize,
    pub degree: u32,
    pub ratio: f64,
}

/// `|e_k / e_0|` for every term, annotated with the term's total degree.
pub fn spectrum(basis: &PcBasis, coeffs: &[f64]) -> Result<Vec<SpectrumEntry>> {
    if coeffs.len() != basis.len() {
        return Err(Error::Shape {
            expected: basis.len(),
            found: coeffs.len(),
        });
    }
    let e0 = coeffs[0];
    if e0 == 0.0 || !e0.is_finite() {
        return Err(Error::Normalization(format!("leading coefficient is {e0}")));
    }
    Ok(basis
        .indices()
        .iter()
        .zip(coeffs)
        .enumerate()
        .map(|(term, (idx, c))| SpectrumEntry {
            term,
            degree: idx.total_degree(),
            ratio: (c / e0).abs(),
        })
        .collect())
}

/// Mean `|e_k / e_0|` within each total-degree band `0..=order`.
pub fn band_means(spectrum: &[SpectrumEntry]) -> Vec<f64> {
    let max = spectrum.iter().map(|s| s.degree).max().unwrap_or(0) as usize;
    let mut sum = vec![0.0; max + 1];
    let mut count = vec![0usize; max + 1];
    for s in spectrum {
        sum[s.degree as usize] += s.ratio;
        count[s.degree as usize] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}
