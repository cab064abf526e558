//! Canonical (fixed-magnetisation) spin models and their conservative
//! dynamics, with exact desk-scale verification of the functional
//! inequalities that control mixing.
//!
//! The central object is the measure
//!
//! ```text
//!     nu(sigma) ∝ exp(-(beta/2)(sigma, A sigma) + (h, sigma))
//! ```
//!
//! on configurations `sigma ∈ {±1}^N` with a fixed number `k` of `+1` sites
//! (equivalently fixed magnetisation `m = (2k - N)/N`), together with the
//! infinite-temperature product measure conditioned on the same constraint.
//! Around it the crate provides:
//!
//! * [`graph`]: interaction graphs — random regular sampling, spectra
//!   (dense and deflated-Lanczos), diameters, geodesic path systems and
//!   congestion constants;
//! * [`ising`]: exact enumeration, moments, and the spectral / covariance
//!   condition reports that produce the constant `M(beta)`;
//! * [`dynamics`]: jump-rate kernels (mean-field exchange, down-up /
//!   up-down walks, Kawasaki), exact sparse generators, Dirichlet forms and
//!   seeded continuous-time simulation;
//! * [`funcineq`]: entropy, variance, spectral gaps, (modified)
//!   log-Sobolev searches, total-variation mixing, and the particle-level
//!   entropy-contraction pipeline ([`levels`]);
//! * [`decomp`]: the Gaussian convolution decomposition of `nu` along a
//!   matrix curve `C_t`, the renormalised potential, entropic stability and
//!   the closed-form jump-rate comparison constant;
//! * [`mp`]: moving-particle comparison bounds (exact generalized
//!   eigenproblems vs. path/congestion upper bounds);
//! * [`matroid`]: bases oracles (uniform, graphic, explicit), perturbed
//!   bases measures and their spin-model form, and down-up walks on bases.
//!
//! Everything is exact where it can be: enumeration is capped at
//! [`space::ENUMERATION_CAP`] states, probability arithmetic is done in log
//! space, and search-based constants are always reported as brackets, never
//! as point values.

pub mod combin;
pub mod config;
pub mod coupling;
pub mod decomp;
pub mod dynamics;
pub mod error;
pub mod expm;
pub mod funcineq;
pub mod ising;
pub mod graph;
pub mod levels;
pub mod matroid;
pub mod mp;
pub mod quad;
pub mod rng;
pub mod space;
pub mod spectral;

pub use error::{Error, Result};
