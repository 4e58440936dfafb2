//! Small dense-vector helpers shared by the solvers.

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation of `a[i] * b[i]`.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= PAIRWISE_BLOCK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

pub fn pairwise_sum(a: &[f64]) -> f64 {
    if a.len() <= PAIRWISE_BLOCK {
        return a.iter().sum();
    }
    let mid = a.len() / 2;
    pairwise_sum(&a[..mid]) + pairwise_sum(&a[mid..])
}

pub fn norm2(a: &[f64]) -> f64 {
    pairwise_dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sample mean and unbiased variance.
pub fn mean_var(a: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let mean = pairwise_sum(a) / n;
    if a.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = a.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums() {
        let a: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&a), 5050.0);
        assert_eq!(pairwise_dot(&a, &vec![1.0; 100]), 5050.0);
        assert_eq!(norm1(&[-1.0, 2.0]), 3.0);
        assert_eq!(norm_inf(&[-3.0, 2.0]), 3.0);
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }
}
