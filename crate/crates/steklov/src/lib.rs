//! Spectral geometry of curvilinear polygons on the quasi-eigenvalue level.
//!
//! The crate implements both directions of the map between polygon data
//! (side lengths and angle cosines) and the spectrum of an associated
//! characteristic trigonometric polynomial:
//!
//! * [`charpoly`] — polygon data, admissibility checks, and construction /
//!   evaluation of the characteristic polynomial `F(σ) = Σ r_k cos(t_k σ) − r₀`.
//! * [`spectra`] — quasi-eigenvalues as the non-negative roots of `F`,
//!   Weyl-count diagnostics, and synthetic perturbed spectra.
//! * [`reconstruct`] — recovery of `F` from a (possibly perturbed) root
//!   sequence via truncated Hadamard products and the almost-periodic mean
//!   transform.
//! * [`geometry`] — the constructive inverse map: sorted side lengths,
//!   side ordering, angle cosines up to a global sign, and exceptional
//!   boundary components with parities.
//! * [`graph_oracle`] — an independent route to the same spectrum through a
//!   circular quantum graph, used for cross-validation.
//! * [`sample`] — seeded generators for admissible test polygons.
//!
//! All operations are pure functions over immutable values and are safe to
//! call concurrently; the heavier loops parallelize internally with
//! deterministic, order-preserving reductions.

pub mod charpoly;
pub mod geometry;
pub mod graph_oracle;
pub mod reconstruct;
mod rootscan;
pub mod sample;
pub mod spectra;

pub use charpoly::{
    build_char_poly, check_admissible, cosine_vector, eval_char_poly, AdmissibilityReport,
    AngleClass, CharPoly, CharPolyError, CosineVector, Parity, PolygonSpec, SignVector,
};
pub use reconstruct::{
    compute_c0, mean_transform, mean_transform_of, recover_charpoly, C0Result, MeanTransform,
    ProductEvaluator, ReconstructError, Recovery, RecoveryOpts, SpectrumLike,
};
pub use spectra::{
    find_quasi_eigenvalues, perturb_spectrum, weyl_check, PerturbOpts, PerturbedSpectrum,
    QuasiSpectrum, RootOpts, SpectraError, WeylReport,
};
