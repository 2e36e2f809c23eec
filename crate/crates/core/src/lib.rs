//! Differentially private manifold denoising.
//!
//! Given a private reference point cloud sampled near an unknown low-dimensional
//! manifold and public noisy query points, this crate iteratively corrects the
//! queries toward the manifold using only privatized local geometric summaries:
//! kernel-weighted means and rank-d tangent projectors released through the
//! Gaussian mechanism, with zCDP accounting across iterations and queries.
//!
//! Modules:
//! - [`linalg`]: symmetric-matrix algebra, spectral projectors, principal angles,
//!   symmetric Gaussian noise matrices.
//! - [`manifolds`]: synthetic ground-truth generators (circle, torus, Swiss roll,
//!   sphere) with analytic projection/distance oracles, plus noise models.
//! - [`neighbors`]: exact fixed-radius neighbor search.
//! - [`privacy`]: zCDP accountant, (ε,δ)↔ρ conversion, sensitivity formulas,
//!   Gaussian-mechanism calibration, budget scheduling.
//! - [`denoiser`]: local PCA, the private projector mechanism, kernel-weighted
//!   summaries, and the full multi-query denoising loop.
//! - [`experiments`]: error metrics and a resumable parameter-sweep harness.

pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod manifolds;
pub mod neighbors;
pub mod privacy;

pub use denoiser::{
    denoise_queries, Bandwidth, Budget, DenoiseConfig, DenoiseReport, KernelWeights, QueryStatus,
    ReferenceGeometry,
};
pub use error::{Error, Result};
pub use experiments::{MetricRow, SweepConfig};
pub use linalg::{EigenDecomposition, Projector, SymMatrix};
pub use manifolds::{ManifoldKind, ManifoldSpec, NoiseModel, PointCloud};
pub use neighbors::RadiusIndex;
pub use privacy::{Accountant, BudgetSchedule, PrivacyBudget, SensitivityParams};
