use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the standard
/// normal weight `exp(-x²/2)/√(2π)` (Golub-Welsch). Weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// `E[g(x)]` for `x ~ N(0, σ²)`, doubling the rule order from `start` until
/// successive estimates agree to `tol`. Returns the estimate and the order used.
pub fn gaussian_expectation<G: Fn(f64) -> f64>(g: G, sigma: f64, start: usize, tol: f64) -> (f64, usize) {
    if sigma == 0.0 {
        return (g(0.0), 1);
    }
    let eval = |n: usize| {
        let (xs, ws) = gauss_hermite(n);
        xs.iter().zip(&ws).map(|(x, w)| w * g(sigma * x)).sum::<f64>()
    };
    let mut n = start.max(2);
    let mut prev = eval(n);
    loop {
        let next = eval(2 * n);
        if (next - prev).abs() < tol || 2 * n >= 512 {
            return (next, 2 * n);
        }
        n *= 2;
        prev = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_gaussian_moments() {
        let (xs, ws) = gauss_hermite(12);
        let m2: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x * x).sum();
        let m4: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
    }

    #[test]
    fn cosine_characteristic_function() {
        // E[cos(kx)] = exp(-k²σ²/2)
        let (v, _) = gaussian_expectation(|x| (3.0 * x).cos(), 0.4, 8, 1e-12);
        assert!((v - (-(3.0f64 * 0.4).powi(2) / 2.0).exp()).abs() < 1e-11);
    }
}
