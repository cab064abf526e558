//! Gauss–Hermite quadrature rules (weight e^{−x²}) via the Golub–Welsch
//! eigendecomposition of the Jacobi matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported rule; the Jacobi eigenproblem is dense.
pub const MAX_NODES: usize = 512;

/// Nodes and weights with Σw = √π, nodes ascending.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn hermite_rule(n: usize) -> Result<HermiteRule> {
    if n == 0 {
        return Err(Error::parameter("quadrature rule needs at least one node"));
    }
    if n > MAX_NODES {
        return Err(Error::Capacity(format!(
            "quadrature rule capped at {MAX_NODES} nodes (got {n})"
        )));
    }
    if n == 1 {
        return Ok(HermiteRule {
            nodes: vec![0.0],
            weights: vec![std::f64::consts::PI.sqrt()],
        });
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &i in &order {
        nodes.push(eig.eigenvalues[i]);
        let first = eig.eigenvectors[(0, i)];
        weights.push(sqrt_pi * first * first);
    }
    Ok(HermiteRule { nodes, weights })
}

impl HermiteRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫ e^{−x²} f(x) dx.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_are_exact() {
        // ∫e^{−x²}x^{2k}dx = Γ(k+½): √π, √π/2, 3√π/4, 15√π/8, ...
        let rule = hermite_rule(10).unwrap();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut expected = sqrt_pi;
        for k in 0..6usize {
            let got = rule.integrate(|x| x.powi(2 * k as i32));
            assert_relative_eq!(got, expected, epsilon = 1e-12 * expected);
            expected *= k as f64 + 0.5;
        }
        for k in 0..6 {
            assert!(rule.integrate(|x| x.powi(2 * k + 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_mgf_converges() {
        // ∫e^{−x²}e^{bx}dx = √π e^{b²/4}
        let sqrt_pi = std::f64::consts::PI.sqrt();
        for &b in &[0.5f64, 2.0, 5.0] {
            let want = sqrt_pi * (b * b / 4.0).exp();
            let got = hermite_rule(30).unwrap().integrate(|x| (b * x).exp());
            assert_relative_eq!(got, want, epsilon = 1e-11 * want);
        }
    }

    #[test]
    fn nodes_sorted_weights_positive() {
        let rule = hermite_rule(21).unwrap();
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        // middle node of an odd rule sits at the origin
        assert!(rule.nodes[10].abs() < 1e-12);
        assert!(hermite_rule(0).is_err());
        assert!(hermite_rule(MAX_NODES + 1).is_err());
    }
}
