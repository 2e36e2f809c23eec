//! Shared fixtures for the criterion benchmarks in `benches/`.

use dpmd_core::manifolds::{add_noise, sample_manifold, ManifoldKind, ManifoldSpec, NoiseModel, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Noisy circle cloud used across benchmarks.
pub fn circle_cloud(n: usize, sigma: f64, seed: u64) -> PointCloud {
    let spec = ManifoldSpec::with_natural_ambient(ManifoldKind::Circle { radius: 1.0 }).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let clean = sample_manifold(&spec, n, &mut rng);
    add_noise(&clean, &NoiseModel::BoundedBall { sigma }, &mut rng).unwrap()
}

/// Noisy sphere cloud embedded in `dim` ambient dimensions.
pub fn sphere_cloud(n: usize, dim: usize, sigma: f64, seed: u64) -> PointCloud {
    let spec = ManifoldSpec::new(ManifoldKind::Sphere { radius: 1.0 }, dim).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let clean = sample_manifold(&spec, n, &mut rng);
    add_noise(&clean, &NoiseModel::BoundedBall { sigma }, &mut rng).unwrap()
}
