//! Total-degree tensorized Legendre basis on `[-1, 1]^m`.
//!
//! Polynomials are the classical (unnormalized) Legendre family, so
//! `P_n(1) = 1` and `<P_n, P_n> = 1 / (2n + 1)` under the uniform density
//! `1/2` on `[-1, 1]`. Multivariate norms are products of the 1D ones and are
//! carried explicitly in [`PcBasis::norms_sq`].
//!
//! Terms are graded: sorted by total degree, and within a degree by
//! descending lexicographic order of the degree vector, so term 1 is `ξ₁`,
//! term 2 is `ξ₂` and so on.

use crate::error::{Error, Result};

/// Upper bound on the number of basis terms we are willing to materialize.
pub const MAX_TERMS: usize = 50_000_000;

/// Per-dimension polynomial degrees of one basis term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn degrees(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&d| d == 0)
    }
}

/// Evaluates `P_0(x) ..= P_order(x)` with the three-term recurrence.
pub fn legendre_values(x: f64, order: usize, out: &mut [f64]) {
    debug_assert!(out.len() > order);
    out[0] = 1.0;
    if order == 0 {
        return;
    }
    out[1] = x;
    for n in 1..order {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0);
    }
}

/// Number of multi-indices of total degree `<= order` in `dim` variables,
/// `(dim + order)! / (dim! order!)`, or `None` on overflow.
pub fn basis_size(dim: usize, order: usize) -> Option<usize> {
    let k = dim.min(order);
    let n = dim.checked_add(order)?;
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.checked_mul((n - k + i) as u128)? / i as u128;
    }
    usize::try_from(acc).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcBasis {
    dim: usize,
    order: usize,
    indices: Vec<MultiIndex>,
    norms_sq: Vec<f64>,
}

impl PcBasis {
    /// Builds the total-degree basis of the given dimension and order.
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Precondition("basis dimension must be >= 1".into()));
        }
        let size = basis_size(dim, order)
            .filter(|&n| n <= MAX_TERMS)
            .ok_or_else(|| {
                Error::Capacity(format!("dimension {dim} order {order} exceeds {MAX_TERMS} terms"))
            })?;
        let order_u32 = u32::try_from(order)
            .map_err(|_| Error::Capacity(format!("order {order} too large")))?;

        let mut indices = Vec::with_capacity(size);
        for degree in 0..=order_u32 {
            let mut current = vec![0u32; dim];
            compositions(degree, 0, &mut current, &mut indices);
        }
        debug_assert_eq!(indices.len(), size);

        let norms_sq = indices
            .iter()
            .map(|idx: &MultiIndex| idx.0.iter().map(|&d| 1.0 / (2.0 * d as f64 + 1.0)).product())
            .collect();

        Ok(PcBasis {
            dim,
            order,
            indices,
            norms_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    /// `<ψ_k, ψ_k>` under the uniform density on the cube.
    pub fn norm_sq(&self, k: usize) -> Result<f64> {
        self.norms_sq.get(k).copied().ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.len(),
        })
    }

    /// Position of a multi-index in the basis ordering.
    pub fn position(&self, degrees: &[u32]) -> Option<usize> {
        self.indices.iter().position(|idx| idx.0 == degrees)
    }

    /// Evaluates every basis function at `xi`. Points outside the cube are
    /// evaluated by polynomial extrapolation.
    pub fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(xi, &mut out)?;
        Ok(out)
    }

    /// Allocation-light variant of [`PcBasis::eval`].
    pub fn eval_into(&self, xi: &[f64], out: &mut [f64]) -> Result<()> {
        if xi.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                found: xi.len(),
            });
        }
        if out.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                found: out.len(),
            });
        }
        let stride = self.order + 1;
        let mut table = vec![0.0; self.dim * stride];
        for (d, &x) in xi.iter().enumerate() {
            legendre_values(x, self.order, &mut table[d * stride..(d + 1) * stride]);
        }
        for (o, idx) in out.iter_mut().zip(&self.indices) {
            *o = idx
                .0
                .iter()
                .enumerate()
                .map(|(d, &deg)| table[d * stride + deg as usize])
                .product();
        }
        Ok(())
    }
}

// Appends all degree vectors with the given remaining degree for positions
// `pos..`, leading coordinates taking the largest values first.
fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    let dim = current.len();
    if pos == dim - 1 {
        current[pos] = remaining;
        out.push(MultiIndex(current.clone()));
        return;
    }
    for d in (0..=remaining).rev() {
        current[pos] = d;
        compositions(remaining - d, pos + 1, current, out);
    }
    current[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Gauss-Legendre rule from Golub-Welsch-free Newton iteration, independent of
    // the sparse grid tables.
    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            // normalized to the density 1/2
            weights.push(1.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    }

    #[test]
    fn sizes() {
        assert_eq!(PcBasis::new(5, 5).unwrap().len(), 252);
        assert_eq!(PcBasis::new(5, 0).unwrap().len(), 1);
        assert_eq!(PcBasis::new(2, 3).unwrap().len(), 10);
        assert_eq!(basis_size(5, 5), Some(252));
        assert!(PcBasis::new(0, 3).is_err());
        assert!(matches!(PcBasis::new(400, 400), Err(Error::Capacity(_))));
    }

    #[test]
    fn graded_ordering() {
        let b = PcBasis::new(2, 2).unwrap();
        let got: Vec<Vec<u32>> = b.indices().iter().map(|i| i.0.clone()).collect();
        assert_eq!(
            got,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        let big = PcBasis::new(5, 5).unwrap();
        assert!(big.indices()[0].is_zero());
        assert_eq!(big.norms_sq()[0], 1.0);
        assert!(big
            .indices()
            .windows(2)
            .all(|w| w[0].total_degree() <= w[1].total_degree()));
        assert_eq!(big, PcBasis::new(5, 5).unwrap());
    }

    #[test]
    fn evaluation_examples() {
        let b = PcBasis::new(3, 4).unwrap();
        let v = b.eval(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(v[0], 1.0);
        for (idx, val) in b.indices().iter().zip(&v) {
            if idx.0.iter().any(|d| d % 2 == 1) {
                assert_eq!(*val, 0.0);
            }
        }
        let b1 = PcBasis::new(1, 2).unwrap();
        assert_abs_diff_eq!(b1.eval(&[1.0]).unwrap()[2], 1.0, epsilon = 1e-15);
        let b2 = PcBasis::new(2, 2).unwrap();
        let k = b2.position(&[1, 1]).unwrap();
        assert_abs_diff_eq!(b2.eval(&[0.5, -0.5]).unwrap()[k], -0.25, epsilon = 1e-15);
        assert!(b2.eval(&[0.5]).is_err());
    }

    #[test]
    fn recurrence_matches_closed_forms() {
        let mut vals = [0.0; 6];
        for &x in &[-0.9, -0.3, 0.1, 0.77] {
            legendre_values(x, 5, &mut vals);
            let x2: f64 = x * x;
            assert_abs_diff_eq!(vals[2], 0.5 * (3.0 * x2 - 1.0), epsilon = 1e-14);
            assert_abs_diff_eq!(vals[3], 0.5 * (5.0 * x2 * x - 3.0 * x), epsilon = 1e-14);
            assert_abs_diff_eq!(
                vals[5],
                (63.0 * x2 * x2 * x - 70.0 * x2 * x + 15.0 * x) / 8.0,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn norms() {
        let b = PcBasis::new(2, 3).unwrap();
        assert_eq!(b.norm_sq(0).unwrap(), 1.0);
        assert_abs_diff_eq!(b.norm_sq(b.position(&[1, 0]).unwrap()).unwrap(), 1.0 / 3.0);
        assert_abs_diff_eq!(
            b.norm_sq(b.position(&[1, 2]).unwrap()).unwrap(),
            1.0 / 15.0,
            epsilon = 1e-16
        );
        assert!(b.norm_sq(10).is_err());
    }

    #[test]
    fn quadrature_orthogonality() {
        for (dim, order) in [(1, 4), (2, 4), (3, 4)] {
            let b = PcBasis::new(dim, order).unwrap();
            let (x, w) = gauss_legendre(order + 1);
            let n = b.len();
            let mut gram = vec![0.0; n * n];
            let total = x.len().pow(dim as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut pt = vec![0.0; dim];
                let mut wt = 1.0;
                for p in pt.iter_mut() {
                    *p = x[rem % x.len()];
                    wt *= w[rem % x.len()];
                    rem /= x.len();
                }
                let v = b.eval(&pt).unwrap();
                for j in 0..n {
                    for k in 0..n {
                        gram[j * n + k] += wt * v[j] * v[k];
                    }
                }
            }
            for j in 0..n {
                for k in 0..n {
                    let expect = if j == k { b.norms_sq()[k] } else { 0.0 };
                    assert_abs_diff_eq!(gram[j * n + k], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn monte_carlo_orthogonality() {
        for (dim, order) in [(1, 4), (2, 2)] {
        let b = PcBasis::new(dim, order).unwrap();
        let n = b.len();
        let samples = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = vec![0.0; n * n];
        let mut sum_sq = vec![0.0; n * n];
        let mut v = vec![0.0; n];
        for _ in 0..samples {
            let xi: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.eval_into(&xi, &mut v).unwrap();
            for j in 0..n {
                for k in j..n {
                    let p = v[j] * v[k];
                    sum[j * n + k] += p;
                    sum_sq[j * n + k] += p * p;
                }
            }
        }
        let ns = samples as f64;
        for j in 0..n {
            for k in j..n {
                let mean = sum[j * n + k] / ns;
                let var = sum_sq[j * n + k] / ns - mean * mean;
                let se = (var / ns).sqrt();
                let expect = if j == k { b.norms_sq()[k] } else { 0.0 };
                assert!((mean - expect).abs() <= 3.0 * se + 1e-12, "({j},{k}): {mean} vs {expect}");
            }
        }
        }
    }
}
