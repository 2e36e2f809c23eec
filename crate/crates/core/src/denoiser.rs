//! Private manifold denoising: local covariance and local PCA, the
//! noise-then-retruncate projector mechanism, kernel-weighted summaries,
//! and the multi-query fixed-point correction loop.
//!
//! The loop releases, per query and step, a privatized rank-d tangent
//! projector and a privatized kernel-weighted local mean, then removes the
//! estimated normal component: `x ← x − (I − P̃)(x − b̃)`. Privacy noise is
//! calibrated from the replace-one sensitivities in [`crate::privacy`]; the
//! budget is pre-partitioned across queries, steps, and the two mechanisms.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    gram_into, sample_symmetric_gaussian, sym_from_gram, top_d_projector, Projector, SymMatrix,
};
use crate::manifolds::PointCloud;
use crate::neighbors::{build_index, RadiusIndex};
use crate::privacy::{
    gaussian_scale_for_approx_dp, gaussian_scale_for_zcdp, make_schedule, mean_sensitivity,
    projector_sensitivity, zcdp_to_epsilon, Accountant, PrivacyBudget, SensitivityParams,
};

/// Substream tags keeping the projector and mean mechanisms on independent
/// random streams for every (query, step) pair.
const STREAM_PROJECTOR: u64 = 1;
const STREAM_MEAN: u64 = 2;

/// One master seed derives an independent ChaCha stream per
/// (query, step, mechanism), so results do not depend on execution order.
fn substream(seed: u64, query: usize, step: usize, mech: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((query as u64) << 20) | ((step as u64) << 4) | mech);
    rng
}

/// Bandwidth choice: a fixed radius, or the rule
/// `h = max{5·(ln n / n)^(1/(d+1)), 2√σ}` resolved against the reference count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Bandwidth {
    Auto { sigma: f64 },
    Fixed { h: f64 },
}

impl Bandwidth {
    pub fn resolve(&self, n: usize, d: usize) -> Result<f64> {
        match *self {
            Bandwidth::Auto { sigma } => default_bandwidth(n, d, sigma),
            Bandwidth::Fixed { h } => {
                if !h.is_finite() || h <= 0.0 {
                    return Err(Error::invalid("h", format!("{h} must be > 0")));
                }
                Ok(h)
            }
        }
    }
}

/// `h = max{5·(ln n / n)^(1/(d+1)), 2√σ}`, natural logarithm.
pub fn default_bandwidth(n: usize, d: usize, sigma: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("n", "bandwidth rule needs n >= 2"));
    }
    if d < 1 {
        return Err(Error::invalid("d", "intrinsic dimension must be >= 1"));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid("sigma", format!("{sigma} must be > 0")));
    }
    let rate = ((n as f64).ln() / n as f64).powf(1.0 / (d as f64 + 1.0));
    Ok((5.0 * rate).max(2.0 * sigma.sqrt()))
}

/// Privacy mode of a denoising run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Budget {
    /// No noise anywhere; the run is the non-private baseline.
    NonPrivate,
    /// Total (ε,δ)/zCDP budget split uniformly by the schedule.
    Private { budget: PrivacyBudget },
}

/// Parameters of a denoising run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub h: Bandwidth,
    /// Intrinsic dimension of the manifold.
    pub d: usize,
    /// Correction steps per query.
    pub steps: usize,
    /// Kernel exponent; must be >= 2.
    pub beta: f64,
    /// Budget fraction given to the projector mechanism each step.
    pub theta: f64,
    pub budget: Budget,
    pub c_proj: f64,
    pub c_mean: f64,
    /// Log constant of the classical (ε,δ) calibration, standalone mode only.
    pub c1: f64,
    pub seed: u64,
    /// Neighbor threshold of the no_neighbor rule; `None` means d + 1.
    pub min_neighbors: Option<usize>,
    /// Keep the full iterate trajectory of every query in the report.
    pub record_trajectories: bool,
}

impl DenoiseConfig {
    /// Defaults: T = 3, θ = 0.5, β = 2, unit sensitivity constants, c1 = 1.25.
    pub fn new(d: usize, h: Bandwidth, budget: Budget) -> Self {
        DenoiseConfig {
            h,
            d,
            steps: 3,
            beta: 2.0,
            theta: 0.5,
            budget,
            c_proj: 1.0,
            c_mean: 1.0,
            c1: 1.25,
            seed: 0,
            min_neighbors: None,
            record_trajectories: false,
        }
    }

    pub fn min_neighbors(&self) -> usize {
        self.min_neighbors.unwrap_or(self.d + 1)
    }

    pub fn validate(&self, ambient_dim: usize) -> Result<()> {
        if self.d < 1 || self.d > ambient_dim {
            return Err(Error::invalid(
                "d",
                format!("intrinsic dimension {} not in 1..={ambient_dim}", self.d),
            ));
        }
        if self.steps < 1 {
            return Err(Error::invalid("steps", "need at least one step"));
        }
        if !self.beta.is_finite() || self.beta < 2.0 {
            return Err(Error::invalid(
                "beta",
                format!("kernel exponent {} must be >= 2", self.beta),
            ));
        }
        if !self.c_proj.is_finite()
            || self.c_proj <= 0.0
            || !self.c_mean.is_finite()
            || self.c_mean <= 0.0
        {
            return Err(Error::invalid(
                "c_proj/c_mean",
                "sensitivity constants must be > 0",
            ));
        }
        if self.min_neighbors() < 1 {
            return Err(Error::invalid("min_neighbors", "must be >= 1"));
        }
        Ok(())
    }
}

/// Local covariance over the closed-ball neighborhood of `z`, with the
/// 1/(n_z − 1) normalization. Neighborhoods with n_z ≤ 1 yield the zero
/// matrix; the count is always returned so callers can apply thresholds.
pub fn local_covariance(
    refs: &PointCloud,
    idx: &RadiusIndex,
    z: &[f64],
    h: f64,
) -> Result<(SymMatrix, usize)> {
    let ids = idx.radius_query(z, h)?;
    let nz = ids.len();
    let dim = refs.dim();
    if nz <= 1 {
        return Ok((SymMatrix::zeros(dim), nz));
    }
    // One column per neighbor, contiguous for the gram product.
    let mut buf = vec![0.0; dim * nz];
    for (c, &i) in ids.iter().enumerate() {
        buf[c * dim..(c + 1) * dim].copy_from_slice(refs.point(i as usize));
    }
    let mut mean = vec![0.0; dim];
    for col in buf.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(col) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= nz as f64;
    }
    for col in buf.chunks_exact_mut(dim) {
        for (v, m) in col.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut gram = vec![0.0; dim * dim];
    gram_into(&buf, dim, nz, &mut gram);
    Ok((sym_from_gram(&gram, dim, 1.0 / (nz - 1) as f64)?, nz))
}

/// Noise-then-retruncate release of a rank-d projector from a symmetric
/// matrix: add a symmetric Gaussian matrix at scale `sigma`, then take the
/// top-d eigenspace (post-processing, privacy-free). With `sigma == 0` the
/// noise path is skipped entirely and this is plain spectral truncation.
pub fn privatize_projector(
    s: &SymMatrix,
    d: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Projector> {
    if sigma == 0.0 {
        return top_d_projector(s, d);
    }
    let noise = sample_symmetric_gaussian(s.dim(), sigma, rng)?;
    top_d_projector(&s.add(&noise)?, d)
}

/// Single private tangent-projector release at a query location (the
/// standalone mechanism): local covariance → top-d projector → symmetric
/// Gaussian noise at the zCDP-calibrated scale → top-d retruncation.
///
/// Insufficient neighbors are signalled before any noise is drawn, so no
/// budget is consumed on failure.
pub fn dp_projector(
    refs: &PointCloud,
    idx: &RadiusIndex,
    z: &[f64],
    cfg: &DenoiseConfig,
    rho_step: f64,
    rng: &mut impl Rng,
) -> Result<Projector> {
    let h = cfg.h.resolve(refs.len(), cfg.d)?;
    let (cov, nz) = local_covariance(refs, idx, z, h)?;
    if nz < cfg.min_neighbors() {
        return Err(Error::InsufficientNeighbors {
            found: nz,
            needed: cfg.min_neighbors(),
        });
    }
    let p_hat = top_d_projector(&cov, cfg.d)?;
    match cfg.budget {
        Budget::NonPrivate => Ok(p_hat),
        Budget::Private { .. } => {
            let sens = SensitivityParams::new(refs.len(), h, cfg.d, cfg.c_proj, cfg.c_mean)?;
            let sigma = gaussian_scale_for_zcdp(projector_sensitivity(&sens), rho_step)?;
            privatize_projector(&p_hat.matrix(), cfg.d, sigma, rng)
        }
    }
}

/// Standalone-release variant calibrated with the classical (ε,δ) Gaussian
/// mechanism (requires ε < 1; the zCDP path has no such restriction).
pub fn dp_projector_approx_dp(
    refs: &PointCloud,
    idx: &RadiusIndex,
    z: &[f64],
    cfg: &DenoiseConfig,
    eps: f64,
    dlt: f64,
    rng: &mut impl Rng,
) -> Result<Projector> {
    let h = cfg.h.resolve(refs.len(), cfg.d)?;
    let (cov, nz) = local_covariance(refs, idx, z, h)?;
    if nz < cfg.min_neighbors() {
        return Err(Error::InsufficientNeighbors {
            found: nz,
            needed: cfg.min_neighbors(),
        });
    }
    let p_hat = top_d_projector(&cov, cfg.d)?;
    let sens = SensitivityParams::new(refs.len(), h, cfg.d, cfg.c_proj, cfg.c_mean)?;
    let sigma = gaussian_scale_for_approx_dp(projector_sensitivity(&sens), eps, dlt, cfg.c1)?;
    privatize_projector(&p_hat.matrix(), cfg.d, sigma, rng)
}

/// Compactly supported kernel weights at a location: raw weight
/// `(1 − ‖x−y_i‖²/h²)₊^β` normalized to sum to one over its support.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    support: Vec<u32>,
    alpha: Vec<f64>,
}

impl KernelWeights {
    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }
}

/// Kernel weights over the closed-ball neighbor set of `x`. Points at
/// distance ≥ h carry zero raw weight and are excluded from the support;
/// an empty support is allowed.
pub fn kernel_weights(
    refs: &PointCloud,
    idx: &RadiusIndex,
    x: &[f64],
    h: f64,
    beta: f64,
) -> Result<KernelWeights> {
    let ids = idx.radius_query(x, h)?;
    kernel_weights_over(refs, &ids, x, h, beta)
}

fn kernel_weights_over(
    refs: &PointCloud,
    ids: &[u32],
    x: &[f64],
    h: f64,
    beta: f64,
) -> Result<KernelWeights> {
    if !beta.is_finite() || beta < 2.0 {
        return Err(Error::invalid("beta", format!("{beta} must be >= 2")));
    }
    let h2 = h * h;
    let mut support = Vec::with_capacity(ids.len());
    let mut alpha = Vec::with_capacity(ids.len());
    for &i in ids {
        let p = refs.point(i as usize);
        let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let u = 1.0 - d2 / h2;
        if u > 0.0 {
            let w = u.powf(beta);
            if w > 0.0 {
                support.push(i);
                alpha.push(w);
            }
        }
    }
    let total: f64 = alpha.iter().sum();
    if total > 0.0 {
        for a in alpha.iter_mut() {
            *a /= total;
        }
    } else {
        support.clear();
        alpha.clear();
    }
    Ok(KernelWeights { support, alpha })
}

/// Kernel-weighted local mean `Σ αᵢ·yᵢ`; a convex combination of the
/// support points. Fails on empty support.
pub fn weighted_mean(refs: &PointCloud, w: &KernelWeights) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::EmptySupport);
    }
    let dim = refs.dim();
    let mut out = vec![0.0; dim];
    for (&i, &a) in w.support.iter().zip(&w.alpha) {
        for (o, v) in out.iter_mut().zip(refs.point(i as usize)) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Non-private local tangent projectors at every reference point, computed
/// with the same bandwidth as the kernel weights and cached for aggregation.
/// References with fewer than `min_neighbors` in-radius neighbors (their own
/// row included) are flagged absent; aggregation later renormalizes their
/// kernel mass away.
pub fn reference_projectors(
    refs: &PointCloud,
    idx: &RadiusIndex,
    d: usize,
    h: f64,
    min_neighbors: usize,
) -> Result<Vec<Option<Projector>>> {
    (0..refs.len())
        .into_par_iter()
        .map(|i| {
            let (cov, nz) = local_covariance(refs, idx, refs.point(i), h)?;
            if nz < min_neighbors {
                Ok(None)
            } else {
                top_d_projector(&cov, d).map(Some)
            }
        })
        .collect()
}

/// Kernel-weighted aggregation of reference projectors,
/// `P̂ʷ = Σ α̂ᵢ·P̂_{yᵢ}` over the support entries whose projector is present
/// (weights renormalized over that set). Symmetric with eigenvalues in [0,1].
pub fn weighted_projector(
    projectors: &[Option<Projector>],
    w: &KernelWeights,
) -> Result<SymMatrix> {
    let mut mass = 0.0;
    let mut present: Vec<(usize, f64)> = Vec::with_capacity(w.len());
    for (&i, &a) in w.support.iter().zip(&w.alpha) {
        if projectors[i as usize].is_some() {
            mass += a;
            present.push((i as usize, a));
        }
    }
    if present.is_empty() || mass <= 0.0 {
        return Err(Error::EmptySupport);
    }
    let first = projectors[present[0].0].as_ref().expect("present");
    let dim = first.ambient_dim();
    let d = first.rank();
    // P̂ʷ = W·Wᵀ with W the horizontal stack of √α̂ᵢ·Vᵢ: one gram product
    // instead of per-reference rank-d updates.
    let mut stack = vec![0.0; dim * d * present.len()];
    for (c, &(i, a)) in present.iter().enumerate() {
        let basis = projectors[i].as_ref().expect("present").basis();
        let scale = (a / mass).sqrt();
        let dst = &mut stack[c * dim * d..(c + 1) * dim * d];
        for (out, v) in dst.iter_mut().zip(basis.as_slice()) {
            *out = scale * v;
        }
    }
    let mut gram = vec![0.0; dim * dim];
    gram_into(&stack, dim, d * present.len(), &mut gram);
    sym_from_gram(&gram, dim, 1.0)
}

/// Normal-correction update `x′ = x − (I − P̃)(x − b̃) = b̃ + P̃(x − b̃)`:
/// removes the entire estimated normal component in one affine step.
pub fn denoise_step(x: &[f64], p: &Projector, b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), p.ambient_dim());
    debug_assert_eq!(b.len(), p.ambient_dim());
    let diff: Vec<f64> = x.iter().zip(b).map(|(a, c)| a - c).collect();
    let tangential = p.apply(&diff);
    b.iter().zip(&tangential).map(|(c, t)| c + t).collect()
}

/// Immutable preprocessing of the reference side: cloud, exact radius index,
/// and cached per-reference tangent projectors. Shared read-only by queries.
#[derive(Debug)]
pub struct ReferenceGeometry {
    refs: Arc<PointCloud>,
    index: RadiusIndex,
    projectors: Vec<Option<Projector>>,
    h: f64,
    d: usize,
    min_neighbors: usize,
    build_seconds: f64,
}

impl ReferenceGeometry {
    pub fn build(refs: PointCloud, cfg: &DenoiseConfig) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::invalid("refs", "reference cloud is empty"));
        }
        cfg.validate(refs.dim())?;
        let start = Instant::now();
        let h = cfg.h.resolve(refs.len(), cfg.d)?;
        let refs = Arc::new(refs);
        let index = build_index(Arc::clone(&refs));
        let projectors = reference_projectors(&refs, &index, cfg.d, h, cfg.min_neighbors())?;
        Ok(ReferenceGeometry {
            refs,
            index,
            projectors,
            h,
            d: cfg.d,
            min_neighbors: cfg.min_neighbors(),
            build_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn refs(&self) -> &PointCloud {
        &self.refs
    }

    pub fn index(&self) -> &RadiusIndex {
        &self.index
    }

    pub fn projectors(&self) -> &[Option<Projector>] {
        &self.projectors
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn build_seconds(&self) -> f64 {
        self.build_seconds
    }
}

/// Outcome of one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Denoised,
    NoNeighbor,
}

/// Per-step bookkeeping: the exact noise scales used and the support size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub sigma_projector: f64,
    pub sigma_mean: f64,
    pub support_size: usize,
}

/// Per-query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub status: QueryStatus,
    pub steps_completed: usize,
    pub initial: Vec<f64>,
    pub final_point: Vec<f64>,
    pub steps: Vec<StepRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Vec<f64>>>,
}

/// Echo of the run configuration with every resolved value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub ambient_dim: usize,
    pub n_references: usize,
    pub query_count: usize,
    pub d: usize,
    pub steps: usize,
    pub beta: f64,
    pub theta: f64,
    pub h: f64,
    pub bandwidth: Bandwidth,
    pub c_proj: f64,
    pub c_mean: f64,
    pub c1: f64,
    pub seed: u64,
    pub min_neighbors: usize,
}

/// Privacy accounting of a run. `epsilon_realized` converts the actually
/// spent ρ back to (ε,δ); budget scheduled for steps a query never executed
/// is returned as unspent. The sensitivity bounds hold on a high-probability
/// sampling event, so the calibration is event-conditional; the flag records
/// that convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub mode: String,
    pub delta: f64,
    pub epsilon_target: f64,
    pub rho_total: f64,
    pub rho_spent: f64,
    pub rho_returned: f64,
    pub epsilon_realized: f64,
    pub projector_sensitivity: f64,
    pub mean_sensitivity: f64,
    pub event_conditional_calibration: bool,
}

/// Wall-clock timing of a run (excluded from determinism comparisons).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub preprocess_seconds: f64,
    pub denoise_seconds: f64,
}

/// Complete record of a denoising run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub config: ConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySummary>,
    pub timing: TimingSummary,
    pub queries: Vec<QueryRecord>,
}

impl DenoiseReport {
    /// Denoised coordinates as a cloud (row order follows the query order).
    pub fn output_cloud(&self, dim: usize) -> Result<PointCloud> {
        let mut coords = Vec::with_capacity(self.queries.len() * dim);
        for q in &self.queries {
            coords.extend_from_slice(&q.final_point);
        }
        PointCloud::from_rows(coords, dim)
    }

    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Flat per-query metrics CSV: status, steps, spent budget share, displacement.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record([
            "query",
            "status",
            "steps_completed",
            "displacement",
            "mean_support_size",
        ])?;
        for q in &self.queries {
            let displacement: f64 = q
                .initial
                .iter()
                .zip(&q.final_point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let mean_support = if q.steps.is_empty() {
                0.0
            } else {
                q.steps.iter().map(|s| s.support_size as f64).sum::<f64>()
                    / q.steps.len() as f64
            };
            let status = match q.status {
                QueryStatus::Denoised => "denoised",
                QueryStatus::NoNeighbor => "no_neighbor",
            };
            w.write_record([
                q.index.to_string(),
                status.to_string(),
                q.steps_completed.to_string(),
                displacement.to_string(),
                mean_support.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON with timing zeroed: the deterministic content of the report.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.timing = TimingSummary::default();
        Ok(serde_json::to_string(&clone)?)
    }
}

enum StepOutcome {
    Advanced {
        next: Vec<f64>,
        record: StepRecord,
    },
    Starved,
}

#[allow(clippy::too_many_arguments)]
fn run_step(
    geom: &ReferenceGeometry,
    x: &[f64],
    cfg: &DenoiseConfig,
    query: usize,
    step: usize,
    sigma_projector: f64,
    sigma_mean: f64,
) -> Result<StepOutcome> {
    let in_radius = geom.index.radius_query(x, geom.h)?;
    if in_radius.len() < geom.min_neighbors {
        return Ok(StepOutcome::Starved);
    }
    let weights = kernel_weights_over(&geom.refs, &in_radius, x, geom.h, cfg.beta)?;
    if weights.is_empty() {
        return Ok(StepOutcome::Starved);
    }
    let aggregated = match weighted_projector(&geom.projectors, &weights) {
        Ok(m) => m,
        Err(Error::EmptySupport) => return Ok(StepOutcome::Starved),
        Err(e) => return Err(e),
    };
    let p_tilde = if sigma_projector == 0.0 {
        top_d_projector(&aggregated, geom.d)?
    } else {
        let mut rng = substream(cfg.seed, query, step, STREAM_PROJECTOR);
        privatize_projector(&aggregated, geom.d, sigma_projector, &mut rng)?
    };
    let mut b_tilde = weighted_mean(&geom.refs, &weights)?;
    if sigma_mean > 0.0 {
        let mut rng = substream(cfg.seed, query, step, STREAM_MEAN);
        for v in b_tilde.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma_mean * g;
        }
    }
    let next = denoise_step(x, &p_tilde, &b_tilde);
    Ok(StepOutcome::Advanced {
        next,
        record: StepRecord {
            sigma_projector,
            sigma_mean,
            support_size: weights.len(),
        },
    })
}

fn run_query(
    geom: &ReferenceGeometry,
    initial: &[f64],
    cfg: &DenoiseConfig,
    query: usize,
    noise_scales: &[(f64, f64)],
) -> Result<QueryRecord> {
    let mut x = initial.to_vec();
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut trajectory = cfg.record_trajectories.then(|| vec![initial.to_vec()]);
    let mut status = QueryStatus::Denoised;
    for (step, &(sigma_p, sigma_m)) in noise_scales.iter().enumerate() {
        match run_step(geom, &x, cfg, query, step, sigma_p, sigma_m)? {
            StepOutcome::Advanced { next, record } => {
                x = next;
                steps.push(record);
                if let Some(t) = trajectory.as_mut() {
                    t.push(x.clone());
                }
            }
            StepOutcome::Starved => {
                status = QueryStatus::NoNeighbor;
                break;
            }
        }
    }
    let steps_completed = steps.len();
    // A query starved before its first step is returned unchanged, bit-exact.
    let final_point = if steps_completed == 0 {
        initial.to_vec()
    } else {
        x
    };
    Ok(QueryRecord {
        index: query,
        status,
        steps_completed,
        initial: initial.to_vec(),
        final_point,
        steps,
        trajectory,
    })
}

/// Run the full denoising loop against prebuilt reference geometry.
pub fn denoise_queries_with_geometry(
    geom: &ReferenceGeometry,
    queries: &PointCloud,
    cfg: &DenoiseConfig,
) -> Result<DenoiseReport> {
    cfg.validate(geom.refs.dim())?;
    if queries.dim() != geom.refs.dim() {
        return Err(Error::DimensionMismatch {
            left_name: "references",
            left: geom.refs.dim(),
            right_name: "queries",
            right: queries.dim(),
        });
    }
    let resolved_h = cfg.h.resolve(geom.refs.len(), cfg.d)?;
    if resolved_h != geom.h || cfg.d != geom.d || cfg.min_neighbors() != geom.min_neighbors {
        return Err(Error::invalid(
            "geometry",
            "reference geometry was built with different h, d, or min_neighbors",
        ));
    }
    let m = queries.len();
    let sens = SensitivityParams::new(geom.refs.len(), geom.h, cfg.d, cfg.c_proj, cfg.c_mean)?;
    let delta_p = projector_sensitivity(&sens);
    let delta_m = mean_sensitivity(&sens);

    // Noise scales per (query, step), fixed up front by the schedule.
    let schedule = match &cfg.budget {
        Budget::NonPrivate => None,
        Budget::Private { budget } => {
            if m == 0 {
                None
            } else {
                Some(make_schedule(budget, m, cfg.steps, cfg.theta)?)
            }
        }
    };
    let scales_for = |query: usize| -> Result<Vec<(f64, f64)>> {
        (0..cfg.steps)
            .map(|t| match &schedule {
                None => Ok((0.0, 0.0)),
                Some(s) => Ok((
                    gaussian_scale_for_zcdp(delta_p, s.rho_projector(query, t))?,
                    gaussian_scale_for_zcdp(delta_m, s.rho_mean(query, t))?,
                )),
            })
            .collect()
    };

    let start = Instant::now();
    let records: Vec<QueryRecord> = (0..m)
        .into_par_iter()
        .map(|q| {
            let scales = scales_for(q)?;
            run_query(geom, queries.point(q), cfg, q, &scales)
        })
        .collect::<Result<Vec<_>>>()?;
    let denoise_seconds = start.elapsed().as_secs_f64();

    // The ledger is pre-partitioned by the schedule; merge per-query spends
    // in query order. Only executed steps consume budget.
    let privacy = match (&cfg.budget, &schedule) {
        (Budget::Private { budget }, Some(sched)) => {
            let mut ledger = Accountant::new(budget.rho_total);
            for rec in &records {
                for t in 0..rec.steps_completed {
                    ledger.spend(sched.rho_projector(rec.index, t))?;
                    ledger.spend(sched.rho_mean(rec.index, t))?;
                }
            }
            let rho_spent = ledger.spent();
            Some(PrivacySummary {
                mode: "zcdp".into(),
                delta: budget.delta,
                epsilon_target: budget.epsilon,
                rho_total: budget.rho_total,
                rho_spent,
                rho_returned: budget.rho_total - rho_spent,
                epsilon_realized: zcdp_to_epsilon(rho_spent, budget.delta)?,
                projector_sensitivity: delta_p,
                mean_sensitivity: delta_m,
                event_conditional_calibration: true,
            })
        }
        (Budget::Private { budget }, None) => Some(PrivacySummary {
            mode: "zcdp".into(),
            delta: budget.delta,
            epsilon_target: budget.epsilon,
            rho_total: budget.rho_total,
            rho_spent: 0.0,
            rho_returned: budget.rho_total,
            epsilon_realized: 0.0,
            projector_sensitivity: delta_p,
            mean_sensitivity: delta_m,
            event_conditional_calibration: true,
        }),
        (Budget::NonPrivate, _) => None,
    };

    Ok(DenoiseReport {
        config: ConfigEcho {
            ambient_dim: geom.refs.dim(),
            n_references: geom.refs.len(),
            query_count: m,
            d: cfg.d,
            steps: cfg.steps,
            beta: cfg.beta,
            theta: cfg.theta,
            h: geom.h,
            bandwidth: cfg.h,
            c_proj: cfg.c_proj,
            c_mean: cfg.c_mean,
            c1: cfg.c1,
            seed: cfg.seed,
            min_neighbors: cfg.min_neighbors(),
        },
        privacy,
        timing: TimingSummary {
            preprocess_seconds: geom.build_seconds,
            denoise_seconds,
        },
        queries: records,
    })
}

/// Preprocess the references and denoise the queries in one call.
pub fn denoise_queries(
    refs: PointCloud,
    queries: &PointCloud,
    cfg: &DenoiseConfig,
) -> Result<DenoiseReport> {
    let geom = ReferenceGeometry::build(refs, cfg)?;
    denoise_queries_with_geometry(&geom, queries, cfg)
}
