//! Extreme adjacency eigenvalues of regular graphs, exactly (dense) or via
//! Lanczos with the trivial constant eigenvector deflated.
//!
//! For a d-regular graph the all-ones vector carries the top eigenvalue d;
//! the quantities of interest are the extremes on its orthogonal complement
//! (λ₂ and λ_min), e.g. to place them inside the 2√(d−1) window.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SpectralMethod {
    DenseExact,
    Lanczos,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub degree: usize,
    /// Largest adjacency eigenvalue orthogonal to constants.
    pub lambda2: f64,
    /// Smallest adjacency eigenvalue (always orthogonal to constants).
    pub lambda_min: f64,
    pub iterations: u32,
    pub restarts: u32,
    /// Max Ritz residual ‖Av − λv‖ bound at acceptance (0 for dense).
    pub residual: f64,
    pub method: SpectralMethod,
}

/// Second-eigenvalue window 2√(d−1) (Ramanujan threshold).
pub fn ramanujan_bound(d: usize) -> f64 {
    2.0 * ((d - 1) as f64).sqrt()
}

fn regular_degree(g: &Graph) -> Result<usize> {
    g.regular_degree().ok_or_else(|| {
        Error::Model("spectral extremes are defined here for regular graphs only".into())
    })
}

/// Exact λ₂/λ_min by dense symmetric eigendecomposition of
/// B = A + ((4d+1)/n)·J: J annihilates the complement of constants, and the
/// shifted trivial eigenvalue 5d+1 clears the top even under degeneracy.
pub fn spectrum_dense(g: &Graph) -> Result<SpectrumReport> {
    let d = regular_degree(g)?;
    let n = g.n();
    if n > 2048 {
        return Err(Error::Capacity(format!(
            "dense spectrum limited to n <= 2048 (got {n}); use spectrum_lanczos"
        )));
    }
    let shift = (4 * d + 1) as f64 / n as f64;
    let mut b = g.adjacency_dense();
    b.add_scalar_mut(shift);
    let mut eigs: Vec<f64> = b.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    debug_assert!((eigs[0] - (5 * d + 1) as f64).abs() < 1e-6);
    Ok(SpectrumReport {
        n,
        degree: d,
        lambda2: eigs[1],
        lambda_min: *eigs.last().unwrap(),
        iterations: 0,
        restarts: 0,
        residual: 0.0,
        method: SpectralMethod::DenseExact,
    })
}

const LANCZOS_TOL: f64 = 1e-8;
const LANCZOS_MAX_DIM: usize = 240;
const LANCZOS_MAX_RESTARTS: u32 = 3;

/// Both spectral extremes on the complement of constants by one Lanczos
/// sweep with full reorthogonalisation; restarts seed from the current
/// extreme Ritz directions if the Krylov budget runs out.
pub fn spectrum_lanczos(g: &Graph, seed: u64) -> Result<SpectrumReport> {
    let d = regular_degree(g)?;
    let n = g.n();
    if n < 4 {
        return spectrum_dense(g);
    }
    let mut rng = rng::stream(seed, "spectral.lanczos");
    let max_dim = LANCZOS_MAX_DIM.min(n - 1);
    let mut start: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut total_iters = 0u32;

    for restart in 0..=LANCZOS_MAX_RESTARTS {
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_dim);
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();

        let mut v = DVector::from_vec(start.clone());
        deflate_constant(&mut v);
        let norm = v.norm();
        if norm < 1e-12 {
            return Err(Error::Numerical("degenerate Lanczos start vector".into()));
        }
        v /= norm;
        basis.push(v);

        let mut w_buf = vec![0.0; n];
        let mut exhausted = false;
        for j in 0..max_dim {
            total_iters += 1;
            let vj = basis[j].clone();
            g.adjacency_matvec(vj.as_slice(), &mut w_buf);
            let mut w = DVector::from_vec(w_buf.clone());
            if j > 0 {
                w.axpy(-betas[j - 1], &basis[j - 1], 1.0);
            }
            let alpha = vj.dot(&w);
            w.axpy(-alpha, &vj, 1.0);
            alphas.push(alpha);
            // full reorthogonalisation, constants included
            deflate_constant(&mut w);
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
            let beta = w.norm();

            let check_now = beta < 1e-12 || j + 1 == max_dim || (j >= 8 && (j + 1) % 4 == 0);
            if check_now {
                if let Some((l2, lmin, res)) = ritz_extremes(&alphas, &betas, beta) {
                    let tol = LANCZOS_TOL * (d as f64).max(1.0);
                    if res <= tol || beta < 1e-12 {
                        return Ok(SpectrumReport {
                            n,
                            degree: d,
                            lambda2: l2,
                            lambda_min: lmin,
                            iterations: total_iters,
                            restarts: restart,
                            residual: res,
                            method: SpectralMethod::Lanczos,
                        });
                    }
                }
            }
            if beta < 1e-12 {
                exhausted = true;
                break;
            }
            betas.push(beta);
            basis.push(w / beta);
        }
        if exhausted {
            break;
        }
        // warm restart: blend the two extreme Ritz vectors
        start = restart_vector(&basis, &alphas, &betas, &mut rng);
    }
    Err(Error::Numerical(format!(
        "Lanczos failed to reach residual {LANCZOS_TOL} within {LANCZOS_MAX_RESTARTS} restarts"
    )))
}

/// Dense for small n, Lanczos above.
pub fn spectrum(g: &Graph, seed: u64) -> Result<SpectrumReport> {
    if g.n() <= 512 {
        spectrum_dense(g)
    } else {
        spectrum_lanczos(g, seed)
    }
}

fn deflate_constant(v: &mut DVector<f64>) {
    let mean = v.mean();
    v.add_scalar_mut(-mean);
}

fn tridiagonal(alphas: &[f64], betas: &[f64]) -> DMatrix<f64> {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    t
}

/// Extreme Ritz values of T_k plus the usual residual bound β_k·|y_k| taken
/// over both ends.
fn ritz_extremes(alphas: &[f64], betas: &[f64], beta_next: f64) -> Option<(f64, f64, f64)> {
    let k = alphas.len();
    if k == 0 {
        return None;
    }
    let t = tridiagonal(alphas, betas);
    let se = t.symmetric_eigen();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let top = idx[0];
    let bot = idx[k - 1];
    let res_top = beta_next * se.eigenvectors[(k - 1, top)].abs();
    let res_bot = beta_next * se.eigenvectors[(k - 1, bot)].abs();
    Some((
        se.eigenvalues[top],
        se.eigenvalues[bot],
        res_top.max(res_bot),
    ))
}

fn restart_vector(
    basis: &[DVector<f64>],
    alphas: &[f64],
    betas: &[f64],
    rng: &mut impl rand::Rng,
) -> Vec<f64> {
    let k = alphas.len();
    let t = tridiagonal(alphas, betas);
    let se = t.symmetric_eigen();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let n = basis[0].len();
    let mut out = DVector::zeros(n);
    for &which in [idx[0], idx[k - 1]].iter() {
        for (j, b) in basis.iter().take(k).enumerate() {
            out.axpy(se.eigenvectors[(j, which)], b, 1.0);
        }
    }
    // small noise so a restart never repeats the failed subspace exactly
    for x in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x += 1e-3 * z;
    }
    out.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cycle_spectrum_closed_form() {
        // C4 adjacency eigenvalues: 2, 0, 0, -2 -> lambda2 = 0, min = -2
        let g = Graph::cycle(4);
        let rep = spectrum_dense(&g).unwrap();
        assert_abs_diff_eq!(rep.lambda2, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.lambda_min, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn complete_graph_spectrum() {
        // K5: eigenvalues 4, -1 (x4)
        let g = Graph::complete(5);
        let rep = spectrum_dense(&g).unwrap();
        assert_abs_diff_eq!(rep.lambda2, -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.lambda_min, -1.0, epsilon = 1e-10);
    }

    #[test]
    fn petersen_spectrum() {
        // eigenvalues 3, 1 (x5), -2 (x4)
        let g = Graph::petersen();
        let rep = spectrum_dense(&g).unwrap();
        assert_abs_diff_eq!(rep.lambda2, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.lambda_min, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn lanczos_matches_dense() {
        let (g, _) = crate::graph::sample_regular(200, 3, 42).unwrap();
        let exact = spectrum_dense(&g).unwrap();
        let iter = spectrum_lanczos(&g, 7).unwrap();
        assert_abs_diff_eq!(iter.lambda2, exact.lambda2, epsilon = 1e-7);
        assert_abs_diff_eq!(iter.lambda_min, exact.lambda_min, epsilon = 1e-7);
        assert!(iter.residual <= 1e-8 * 3.0);
    }

    #[test]
    fn ramanujan_window_value() {
        assert_abs_diff_eq!(ramanujan_bound(3), 2.0 * 2f64.sqrt(), epsilon = 1e-15);
    }
}
