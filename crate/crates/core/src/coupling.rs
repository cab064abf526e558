//! Coupling matrices with constant eigenvector, and their normal form.
//!
//! On the fixed-magnetisation cube the quadratic form (σ, Aσ) only matters
//! through the action of A on the zero-sum subspace X_{N,0}: adding c·P
//! (P the orthogonal projector onto X_{N,0}) shifts every weight by the same
//! constant, and scaling A can be absorbed into β. The normal form places the
//! nontrivial spectrum inside (ε₀, 1−ε₀), which keeps I − Ã and friends
//! invertible downstream.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Margin used when mapping the nontrivial spectrum into (0, 1).
pub const EPS0: f64 = 1e-3;

/// Orthonormal basis of the zero-sum subspace X_{N,0} ⊂ ℝ^N as columns of an
/// N×(N−1) matrix (Helmert construction).
pub fn zero_sum_basis(n: usize) -> DMatrix<f64> {
    assert!(n >= 2);
    let mut v = DMatrix::zeros(n, n - 1);
    for j in 1..n {
        let norm = (j as f64 * (j as f64 + 1.0)).sqrt();
        for i in 0..j {
            v[(i, j - 1)] = 1.0 / norm;
        }
        v[(j, j - 1)] = -(j as f64) / norm;
    }
    v
}

/// Orthogonal projector P = I − 𝟙𝟙ᵀ/N onto X_{N,0}.
pub fn zero_sum_projector(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - 1.0 / n as f64
    })
}

/// Symmetric coupling matrix with 𝟙 as an eigenvector, together with its
/// normal form (spectrum on X_{N,0} mapped into (ε₀, 1−ε₀)).
#[derive(Clone, Debug)]
pub struct Coupling {
    raw: DMatrix<f64>,
    lambda1: f64,
    nontrivial_lo: f64,
    nontrivial_hi: f64,
    normalised: DMatrix<f64>,
    shift_c: f64,
    scale: f64,
}

impl Coupling {
    /// Validates symmetry and the constant eigenvector, computes the
    /// nontrivial spectrum exactly, and builds the normal form
    /// Ã = (A + cP)/s.
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        let n = raw.nrows();
        if n < 2 || raw.ncols() != n {
            return Err(Error::parameter("coupling must be square, N >= 2"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (raw[(i, j)] - raw[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Model(format!(
                        "coupling not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let row_sums = &raw * DVector::from_element(n, 1.0);
        let lambda1 = row_sums.mean();
        let dev = row_sums
            .iter()
            .map(|r| (r - lambda1).abs())
            .fold(0.0, f64::max);
        if dev > 1e-10 {
            return Err(Error::Model(format!(
                "constant vector is not an eigenvector (row-sum spread {dev:.3e})"
            )));
        }

        // exact nontrivial spectrum: restrict to an orthonormal basis of X_{N,0}
        let v = zero_sum_basis(n);
        let restricted = v.transpose() * &raw * &v;
        let eigs = restricted.symmetric_eigenvalues();
        let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let delta = hi - lo;

        let (scale, shift_c) = if delta > 1e-12 {
            let s = delta / (1.0 - 2.0 * EPS0);
            (s, EPS0 * s - lo)
        } else {
            (1.0, 0.5 - lo)
        };
        let p = zero_sum_projector(n);
        let normalised = (&raw + shift_c * p) / scale;

        Ok(Coupling {
            raw,
            lambda1,
            nontrivial_lo: lo,
            nontrivial_hi: hi,
            normalised,
            shift_c,
            scale,
        })
    }

    pub fn from_graph(g: &crate::graph::Graph) -> Result<Self> {
        Self::new(g.adjacency_dense())
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    /// Normal form Ã with nontrivial spectrum in (ε₀, 1−ε₀) (exactly ½ when
    /// the nontrivial spectrum is a single point).
    pub fn normalised(&self) -> &DMatrix<f64> {
        &self.normalised
    }

    /// Eigenvalue on the constant vector.
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// Range of the spectrum restricted to X_{N,0}.
    pub fn nontrivial_range(&self) -> (f64, f64) {
        (self.nontrivial_lo, self.nontrivial_hi)
    }

    /// Length δ(A) of the support of the nontrivial spectrum.
    pub fn delta(&self) -> f64 {
        self.nontrivial_hi - self.nontrivial_lo
    }

    pub fn shift_c(&self) -> f64 {
        self.shift_c
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// β for the normal form producing the same measure: (A, β) ≡ (Ã, βs)
    /// up to a configuration-independent constant on fixed magnetisation.
    pub fn normalised_beta(&self, beta: f64) -> f64 {
        beta * self.scale
    }

    /// Covariance magnifier M(β) = 1/(1 − 2βδ(A)), defined for 2βδ < 1.
    /// Invariant under the normal form, since β_n δ_n = β δ.
    pub fn magnifier(&self, beta: f64) -> Result<f64> {
        let d = 2.0 * beta * self.delta();
        if d >= 1.0 {
            return Err(Error::Domain(format!(
                "covariance magnifier undefined: 2βδ = {d:.4} ≥ 1"
            )));
        }
        Ok(1.0 / (1.0 - d))
    }
}
