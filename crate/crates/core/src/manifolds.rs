//! Synthetic ground-truth manifolds (circle, torus, Swiss roll, sphere in R^D),
//! bounded and Gaussian noise models, and analytic projection/distance oracles.
//!
//! The oracles are evaluation-only: the denoiser never sees them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Projector;

/// Points closer than this to a projection-ambiguity set are rejected
/// (center of circle/sphere, torus axis and center ring): reach violation.
const AMBIGUITY_TOL: f64 = 1e-12;
/// Swiss roll parameter range starts here; `turns` extends it by 2π each.
const SWISS_T0: f64 = 1.5 * std::f64::consts::PI;
/// Coarse grid size seeding the Swiss roll projection search.
const SWISS_GRID: usize = 2048;

/// n × D array of ambient coordinates, optionally paired with the clean
/// (pre-noise) coordinates of the same points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    n: usize,
    dim: usize,
    coords: Vec<f64>,
    clean: Option<Vec<f64>>,
}

impl PointCloud {
    /// Build from row-major coordinates. All values must be finite.
    pub fn from_rows(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "coords",
                format!("length {} not a multiple of dim {dim}", coords.len()),
            ));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "PointCloud::from_rows",
            });
        }
        Ok(PointCloud {
            n: coords.len() / dim,
            dim,
            coords,
            clean: None,
        })
    }

    /// Attach a clean companion of identical shape.
    pub fn with_clean(mut self, clean: Vec<f64>) -> Result<Self> {
        if clean.len() != self.coords.len() {
            return Err(Error::DimensionMismatch {
                left_name: "clean",
                left: clean.len(),
                right_name: "coords",
                right: self.coords.len(),
            });
        }
        if clean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "PointCloud::with_clean",
            });
        }
        self.clean = Some(clean);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn clean_point(&self, i: usize) -> Option<&[f64]> {
        self.clean
            .as_ref()
            .map(|c| &c[i * self.dim..(i + 1) * self.dim])
    }

    pub fn has_clean(&self) -> bool {
        self.clean.is_some()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// The clean companion as its own cloud, when present.
    pub fn clean_cloud(&self) -> Option<PointCloud> {
        self.clean.as_ref().map(|c| PointCloud {
            n: self.n,
            dim: self.dim,
            coords: c.clone(),
            clean: None,
        })
    }
}

/// Parametric family of a synthetic manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle { radius: f64 },
    Torus { major_radius: f64, minor_radius: f64 },
    SwissRoll { turns: f64, height: f64 },
    Sphere { radius: f64 },
}

impl ManifoldKind {
    /// Dimension of the canonical embedding (before zero-padding).
    pub fn natural_dim(&self) -> usize {
        match self {
            ManifoldKind::Circle { .. } => 2,
            _ => 3,
        }
    }

    /// Intrinsic dimension d.
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            ManifoldKind::Circle { .. } => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ManifoldKind::Circle { .. } => "circle",
            ManifoldKind::Torus { .. } => "torus",
            ManifoldKind::SwissRoll { .. } => "swiss_roll",
            ManifoldKind::Sphere { .. } => "sphere",
        }
    }
}

/// A manifold embedded in the first `natural_dim` coordinates of R^D, the
/// remaining coordinates identically zero before noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    #[serde(flatten)]
    pub kind: ManifoldKind,
    pub ambient_dim: usize,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, ambient_dim: usize) -> Result<Self> {
        match kind {
            ManifoldKind::Circle { radius } | ManifoldKind::Sphere { radius } => {
                if !radius.is_finite() || radius <= 0.0 {
                    return Err(Error::invalid("radius", format!("{radius} must be > 0")));
                }
            }
            ManifoldKind::Torus {
                major_radius,
                minor_radius,
            } => {
                // R > r > 0: embeddability and positive reach.
                if !minor_radius.is_finite()
                    || minor_radius <= 0.0
                    || !major_radius.is_finite()
                    || major_radius <= minor_radius
                {
                    return Err(Error::invalid(
                        "torus",
                        format!("need R > r > 0, got R = {major_radius}, r = {minor_radius}"),
                    ));
                }
            }
            ManifoldKind::SwissRoll { turns, height } => {
                if !turns.is_finite() || turns <= 0.0 || !height.is_finite() || height <= 0.0 {
                    return Err(Error::invalid(
                        "swiss_roll",
                        format!("turns ({turns}) and height ({height}) must be > 0"),
                    ));
                }
            }
        }
        if ambient_dim < kind.natural_dim() {
            return Err(Error::invalid(
                "ambient_dim",
                format!(
                    "{} needs ambient dimension >= {}, got {ambient_dim}",
                    kind.name(),
                    kind.natural_dim()
                ),
            ));
        }
        Ok(ManifoldSpec { kind, ambient_dim })
    }

    /// Canonical ambient dimension for the kind.
    pub fn with_natural_ambient(kind: ManifoldKind) -> Result<Self> {
        Self::new(kind, kind.natural_dim())
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.kind.intrinsic_dim()
    }
}

/// Measurement-noise model for perturbing on-manifold points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Uniform in the closed D-ball of radius sigma: `‖ε‖ ≤ sigma` exactly.
    BoundedBall { sigma: f64 },
    /// Isotropic Gaussian with per-coordinate variance `sigma²/(D+2)`, so that
    /// `E‖ε‖²` matches the bounded-ball model at the same sigma.
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::BoundedBall { sigma } | NoiseModel::Gaussian { sigma } => *sigma,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> NoiseModel {
        match self {
            NoiseModel::BoundedBall { .. } => NoiseModel::BoundedBall { sigma },
            NoiseModel::Gaussian { .. } => NoiseModel::Gaussian { sigma },
        }
    }
}

fn swiss_scale(turns: f64) -> (f64, f64, f64) {
    let t1 = SWISS_T0 + 2.0 * std::f64::consts::PI * turns;
    // Unit diameter for the spiral in the (x, z) plane.
    let scale = 1.0 / (2.0 * t1);
    (SWISS_T0, t1, scale)
}

fn swiss_point(t: f64, y: f64, scale: f64) -> [f64; 3] {
    [scale * t * t.cos(), y, scale * t * t.sin()]
}

/// Sample `n` points exactly on the manifold, uniform in the natural
/// parameters: angle(s) for circle/torus/sphere, (t, height) for Swiss roll.
pub fn sample_manifold(spec: &ManifoldSpec, n: usize, rng: &mut impl Rng) -> PointCloud {
    use std::f64::consts::PI;
    let dim = spec.ambient_dim;
    let mut coords = vec![0.0; n * dim];
    for i in 0..n {
        let row = &mut coords[i * dim..(i + 1) * dim];
        match spec.kind {
            ManifoldKind::Circle { radius } => {
                let theta = rng.random::<f64>() * 2.0 * PI;
                row[0] = radius * theta.cos();
                row[1] = radius * theta.sin();
            }
            ManifoldKind::Torus {
                major_radius,
                minor_radius,
            } => {
                let u = rng.random::<f64>() * 2.0 * PI;
                let v = rng.random::<f64>() * 2.0 * PI;
                let ring = major_radius + minor_radius * v.cos();
                row[0] = ring * u.cos();
                row[1] = ring * u.sin();
                row[2] = minor_radius * v.sin();
            }
            ManifoldKind::SwissRoll { turns, height } => {
                let (t0, t1, scale) = swiss_scale(turns);
                let t = t0 + rng.random::<f64>() * (t1 - t0);
                let y = rng.random::<f64>() * height;
                row[..3].copy_from_slice(&swiss_point(t, y, scale));
            }
            ManifoldKind::Sphere { radius } => {
                let azimuth = rng.random::<f64>() * 2.0 * PI;
                let polar = rng.random::<f64>() * PI;
                row[0] = radius * polar.sin() * azimuth.cos();
                row[1] = radius * polar.sin() * azimuth.sin();
                row[2] = radius * polar.cos();
            }
        }
    }
    PointCloud::from_rows(coords, dim).expect("finite by construction")
}

fn sample_unit_ball(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Direction uniform on the sphere, radius = u^(1/D).
    loop {
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let u: f64 = rng.random();
            let r = u.powf(1.0 / dim as f64);
            return dir.into_iter().map(|v| v * r / norm).collect();
        }
    }
}

/// Perturb every point by the noise model; the input coordinates are kept
/// bit-exact as the clean companion of the output.
pub fn add_noise(pc: &PointCloud, model: &NoiseModel, rng: &mut impl Rng) -> Result<PointCloud> {
    if !model.sigma().is_finite() || model.sigma() <= 0.0 {
        return Err(Error::invalid(
            "sigma",
            format!("{} must be > 0", model.sigma()),
        ));
    }
    let dim = pc.dim();
    let mut coords = Vec::with_capacity(pc.coords().len());
    for row in pc.rows() {
        match model {
            NoiseModel::BoundedBall { sigma } => {
                let eps = sample_unit_ball(dim, rng);
                coords.extend(row.iter().zip(&eps).map(|(x, e)| x + sigma * e));
            }
            NoiseModel::Gaussian { sigma } => {
                let sd = sigma / ((dim + 2) as f64).sqrt();
                coords.extend(
                    row.iter()
                        .map(|x| x + sd * rng.sample::<f64, _>(StandardNormal)),
                );
            }
        }
    }
    PointCloud::from_rows(coords, dim)?.with_clean(pc.coords().to_vec())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn golden_section(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    f: &impl Fn(f64) -> f64,
) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    if f(mid) <= f1.min(f2) {
        mid
    } else if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Parameter of the spiral point nearest to `(a, b)` in the (x, z) plane,
/// found by golden-section refinement of a coarse-grid seed.
fn swiss_nearest_t(a: f64, b: f64, t0: f64, t1: f64, scale: f64) -> f64 {
    let f = |t: f64| {
        let dx = a - scale * t * t.cos();
        let dz = b - scale * t * t.sin();
        dx * dx + dz * dz
    };
    let step = (t1 - t0) / (SWISS_GRID - 1) as f64;
    let mut best_i = 0;
    let mut best_f = f64::INFINITY;
    for i in 0..SWISS_GRID {
        let v = f(t0 + step * i as f64);
        if v < best_f {
            best_f = v;
            best_i = i;
        }
    }
    let lo = t0 + step * best_i.saturating_sub(1) as f64;
    let hi = (t0 + step * (best_i + 1) as f64).min(t1);
    golden_section(lo, hi, 1e-13, &f)
}

/// Nearest-point projection onto the manifold. Analytic for circle, sphere,
/// and torus; one-dimensional numerical minimization for the Swiss roll.
///
/// Inputs on the ambiguity set of the projection (center of circle/sphere,
/// torus axis or center ring) are rejected: there the reach condition the
/// theory assumes is violated.
pub fn project_to_manifold(spec: &ManifoldSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.ambient_dim {
        return Err(Error::DimensionMismatch {
            left_name: "x",
            left: x.len(),
            right_name: "ambient_dim",
            right: spec.ambient_dim,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "project_to_manifold",
        });
    }
    let mut out = vec![0.0; spec.ambient_dim];
    match spec.kind {
        ManifoldKind::Circle { radius } => {
            let s = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if s < AMBIGUITY_TOL * radius.max(1.0) {
                return Err(Error::AmbiguousProjection(
                    "point at the circle center has no unique nearest point".into(),
                ));
            }
            out[0] = radius * x[0] / s;
            out[1] = radius * x[1] / s;
        }
        ManifoldKind::Sphere { radius } => {
            let s = norm2(&x[..3]);
            if s < AMBIGUITY_TOL * radius.max(1.0) {
                return Err(Error::AmbiguousProjection(
                    "point at the sphere center has no unique nearest point".into(),
                ));
            }
            for j in 0..3 {
                out[j] = radius * x[j] / s;
            }
        }
        ManifoldKind::Torus {
            major_radius,
            minor_radius,
        } => {
            let s = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if s < AMBIGUITY_TOL {
                return Err(Error::AmbiguousProjection(
                    "point on the torus axis has no unique nearest point".into(),
                ));
            }
            // Nearest point on the center ring, then radial projection in the
            // tube plane spanned by the ring normal and the z axis.
            let cx = major_radius * x[0] / s;
            let cy = major_radius * x[1] / s;
            let tube = [x[0] - cx, x[1] - cy, x[2]];
            let rho = norm2(&tube);
            if rho < AMBIGUITY_TOL {
                return Err(Error::AmbiguousProjection(
                    "point on the torus center ring has no unique nearest point".into(),
                ));
            }
            out[0] = cx + minor_radius * tube[0] / rho;
            out[1] = cy + minor_radius * tube[1] / rho;
            out[2] = minor_radius * tube[2] / rho;
        }
        ManifoldKind::SwissRoll { turns, height } => {
            let (t0, t1, scale) = swiss_scale(turns);
            let t = swiss_nearest_t(x[0], x[2], t0, t1, scale);
            let y = x[1].clamp(0.0, height);
            out[..3].copy_from_slice(&swiss_point(t, y, scale));
        }
    }
    Ok(out)
}

/// Distance to the manifold: `‖x − project_to_manifold(spec, x)‖`.
pub fn distance_to_manifold(spec: &ManifoldSpec, x: &[f64]) -> Result<f64> {
    let p = project_to_manifold(spec, x)?;
    Ok(x.iter()
        .zip(&p)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Orthonormal tangent basis at (the projection of) `x`, as a rank-d
/// projector in ambient coordinates. Evaluation-only oracle.
pub fn tangent_at(spec: &ManifoldSpec, x: &[f64]) -> Result<Projector> {
    let p = project_to_manifold(spec, x)?;
    let dim = spec.ambient_dim;
    let d = spec.intrinsic_dim();
    let mut basis = nalgebra::DMatrix::<f64>::zeros(dim, d);
    match spec.kind {
        ManifoldKind::Circle { radius } => {
            let (c, s) = (p[0] / radius, p[1] / radius);
            basis[(0, 0)] = -s;
            basis[(1, 0)] = c;
        }
        ManifoldKind::Sphere { radius } => {
            // Two orthonormal directions perpendicular to the radial direction,
            // built from the least-aligned coordinate axis.
            let r = [p[0] / radius, p[1] / radius, p[2] / radius];
            let axis = (0..3).min_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs())).unwrap();
            let mut u = [0.0; 3];
            u[axis] = 1.0;
            let dot: f64 = (0..3).map(|j| u[j] * r[j]).sum();
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= dot * rj;
            }
            let nu = norm2(&u);
            for uj in u.iter_mut() {
                *uj /= nu;
            }
            let v = [
                r[1] * u[2] - r[2] * u[1],
                r[2] * u[0] - r[0] * u[2],
                r[0] * u[1] - r[1] * u[0],
            ];
            for j in 0..3 {
                basis[(j, 0)] = u[j];
                basis[(j, 1)] = v[j];
            }
        }
        ManifoldKind::Torus {
            major_radius,
            minor_radius,
        } => {
            let s = (p[0] * p[0] + p[1] * p[1]).sqrt();
            // Direction around the main ring, and around the tube: with
            // cos v = (s − R)/r and sin v = z/r, the tube tangent is
            // (−sin v · radial, cos v · ẑ).
            let du = [-p[1] / s, p[0] / s, 0.0];
            let radial = [p[0] / s, p[1] / s, 0.0];
            let sv = p[2] / minor_radius;
            let cv = (s - major_radius) / minor_radius;
            let dv = [-sv * radial[0], -sv * radial[1], cv];
            let nv = norm2(&dv);
            for j in 0..3 {
                basis[(j, 0)] = du[j];
                basis[(j, 1)] = dv[j] / nv;
            }
        }
        ManifoldKind::SwissRoll { turns, .. } => {
            let (t0, t1, scale) = swiss_scale(turns);
            let t = swiss_nearest_t(p[0], p[2], t0, t1, scale);
            let dx = scale * (t.cos() - t * t.sin());
            let dz = scale * (t.sin() + t * t.cos());
            let n = (dx * dx + dz * dz).sqrt();
            basis[(0, 0)] = dx / n;
            basis[(2, 0)] = dz / n;
            basis[(1, 1)] = 1.0;
        }
    }
    Projector::from_basis(basis)
}
