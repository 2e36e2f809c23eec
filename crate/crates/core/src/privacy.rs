//! zCDP accounting: (ε,δ) ↔ ρ conversion, sensitivity formulas for the local
//! geometric summaries, Gaussian-mechanism noise calibration, the uniform
//! per-query/per-step budget schedule, and a spend ledger with an overspend
//! guard.
//!
//! Conventions: a mechanism with ℓ2-sensitivity Δ and Gaussian noise scale ς
//! satisfies ρ-zCDP with ρ = Δ²/(2ς²); ρ-zCDP implies (ε,δ)-DP with
//! ε = ρ + 2√(ρ·ln(1/δ)) for every δ ∈ (0,1). Composition is additive in ρ.
//!
//! The sensitivity bounds below hold on a high-probability event under the
//! sampling model; reports built on this accountant carry an explicit flag
//! that the calibration is event-conditional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::invalid(
            "delta",
            format!("{delta} outside the open interval (0, 1)"),
        ));
    }
    Ok(())
}

/// ε = ρ + 2√(ρ·ln(1/δ)).
pub fn zcdp_to_epsilon(rho: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::invalid("rho", format!("{rho} must be >= 0")));
    }
    let l = (1.0 / delta).ln();
    Ok(rho + 2.0 * (rho * l).sqrt())
}

/// Inverse of [`zcdp_to_epsilon`]: ρ = (√(L + ε) − √L)² with L = ln(1/δ).
pub fn epsilon_to_zcdp(epsilon: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::invalid("epsilon", format!("{epsilon} must be > 0")));
    }
    let l = (1.0 / delta).ln();
    let root = (l + epsilon).sqrt() - l.sqrt();
    Ok(root * root)
}

/// Inputs of the sensitivity bounds for the local geometric summaries.
///
/// `c_proj` and `c_mean` are the absolute constants in front of the
/// order-level bounds; they default to 1.0 and are recorded in every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub n: usize,
    pub h: f64,
    pub d: usize,
    pub c_proj: f64,
    pub c_mean: f64,
}

impl SensitivityParams {
    pub fn new(n: usize, h: f64, d: usize, c_proj: f64, c_mean: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("n", "need at least one reference"));
        }
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::invalid("h", format!("{h} must be > 0")));
        }
        if d < 1 {
            return Err(Error::invalid("d", "intrinsic dimension must be >= 1"));
        }
        if !c_proj.is_finite() || c_proj <= 0.0 || !c_mean.is_finite() || c_mean <= 0.0 {
            return Err(Error::invalid(
                "c_proj/c_mean",
                "sensitivity constants must be > 0",
            ));
        }
        Ok(SensitivityParams {
            n,
            h,
            d,
            c_proj,
            c_mean,
        })
    }
}

/// Replace-one ℓ2-sensitivity of the (weighted) local tangent projector:
/// Δ = c_proj / (n·h^d).
pub fn projector_sensitivity(p: &SensitivityParams) -> f64 {
    p.c_proj / (p.n as f64 * p.h.powi(p.d as i32))
}

/// Replace-one ℓ2-sensitivity of the kernel-weighted local mean:
/// Δ = c_mean / (n·h^(d−1)).
pub fn mean_sensitivity(p: &SensitivityParams) -> f64 {
    p.c_mean / (p.n as f64 * p.h.powi(p.d as i32 - 1))
}

/// Gaussian noise scale realizing ρ-zCDP at sensitivity Δ: ς = Δ/√(2ρ).
pub fn gaussian_scale_for_zcdp(delta2: f64, rho: f64) -> Result<f64> {
    if !delta2.is_finite() || delta2 <= 0.0 {
        return Err(Error::invalid("delta2", format!("{delta2} must be > 0")));
    }
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::invalid(
            "rho",
            format!("{rho} must be > 0 (zero budget would need infinite noise)"),
        ));
    }
    Ok(delta2 / (2.0 * rho).sqrt())
}

/// Classical (ε,δ) Gaussian-mechanism calibration, valid for ε ∈ (0, 1):
/// ς = √(2·ln(c1/δ))·Δ/ε with the conventional c1 = 1.25. Used only by the
/// standalone single-release projector mode; the denoising loop accounts in
/// zCDP and has no ε < 1 restriction.
pub fn gaussian_scale_for_approx_dp(delta2: f64, eps: f64, dlt: f64, c1: f64) -> Result<f64> {
    if !delta2.is_finite() || delta2 < 0.0 {
        return Err(Error::invalid("delta2", format!("{delta2} must be >= 0")));
    }
    if eps.is_nan() || eps <= 0.0 || eps >= 1.0 {
        return Err(Error::invalid(
            "eps",
            format!("{eps} outside (0, 1); this calibration requires eps < 1"),
        ));
    }
    check_delta(dlt)?;
    if c1.is_nan() || c1 <= dlt {
        return Err(Error::invalid(
            "c1",
            format!("{c1} must exceed delta so that ln(c1/delta) > 0"),
        ));
    }
    Ok((2.0 * (c1 / dlt).ln()).sqrt() * delta2 / eps)
}

/// Total privacy budget expressed both as (ε, δ)-DP and as its zCDP
/// equivalent ρ_total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub rho_total: f64,
}

impl PrivacyBudget {
    pub fn from_epsilon_delta(epsilon: f64, delta: f64) -> Result<Self> {
        let rho_total = epsilon_to_zcdp(epsilon, delta)?;
        Ok(PrivacyBudget {
            epsilon,
            delta,
            rho_total,
        })
    }

    pub fn from_rho(rho_total: f64, delta: f64) -> Result<Self> {
        if !rho_total.is_finite() || rho_total <= 0.0 {
            return Err(Error::invalid("rho", format!("{rho_total} must be > 0")));
        }
        let epsilon = zcdp_to_epsilon(rho_total, delta)?;
        Ok(PrivacyBudget {
            epsilon,
            delta,
            rho_total,
        })
    }
}

/// Uniform allocation of ρ_total over m queries, T steps per query, and the
/// two mechanisms per step: the projector release gets θ·ρ_total/(m·T) and
/// the mean release (1−θ)·ρ_total/(m·T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub m: usize,
    pub steps: usize,
    pub theta: f64,
    pub rho_total: f64,
    rho_projector_entry: f64,
    rho_mean_entry: f64,
}

impl BudgetSchedule {
    pub fn rho_projector(&self, query: usize, step: usize) -> f64 {
        debug_assert!(query < self.m && step < self.steps);
        self.rho_projector_entry
    }

    pub fn rho_mean(&self, query: usize, step: usize) -> f64 {
        debug_assert!(query < self.m && step < self.steps);
        self.rho_mean_entry
    }

    /// Sum of every scheduled entry, compensated so the conservation
    /// invariant can be checked at 1e−12 relative even for large m·T.
    pub fn total_scheduled(&self) -> f64 {
        let entries = (self.m * self.steps) as f64;
        // Uniform fill: the exact sum is entries × (p + m) up to one rounding.
        entries * (self.rho_projector_entry + self.rho_mean_entry)
    }
}

/// Build the uniform schedule. θ must lie strictly inside (0, 1): either
/// boundary would hand one mechanism a zero budget, i.e. infinite noise.
pub fn make_schedule(
    budget: &PrivacyBudget,
    m: usize,
    steps: usize,
    theta: f64,
) -> Result<BudgetSchedule> {
    if m < 1 {
        return Err(Error::invalid("m", "need at least one query"));
    }
    if steps < 1 {
        return Err(Error::invalid("steps", "need at least one step"));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(
            "theta",
            format!("{theta} outside [0, 1]"),
        ));
    }
    if theta == 0.0 || theta == 1.0 {
        return Err(Error::invalid(
            "theta",
            "0 and 1 are rejected: the unbudgeted mechanism would need infinite noise",
        ));
    }
    let per_step = budget.rho_total / (m * steps) as f64;
    Ok(BudgetSchedule {
        m,
        steps,
        theta,
        rho_total: budget.rho_total,
        rho_projector_entry: theta * per_step,
        rho_mean_entry: (1.0 - theta) * per_step,
    })
}

/// Tolerance absorbing float drift when spending scheduled entries.
const SPEND_SLACK: f64 = 1e-12;

/// Serialized spend ledger. Spends must be externally ordered; semantics are
/// linearizable spend/remaining.
#[derive(Debug, Clone)]
pub struct Accountant {
    total: f64,
    spent: f64,
    compensation: f64,
}

impl Accountant {
    pub fn new(rho_total: f64) -> Self {
        Accountant {
            total: rho_total,
            spent: 0.0,
            compensation: 0.0,
        }
    }

    /// Record a release of `rho`. Overspending beyond the slack is a hard
    /// failure: it would silently void the privacy guarantee.
    pub fn spend(&mut self, rho: f64) -> Result<()> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::invalid("rho", format!("{rho} must be >= 0")));
        }
        let remaining = self.remaining();
        if rho > remaining + SPEND_SLACK {
            return Err(Error::BudgetExhausted {
                requested: rho,
                remaining,
            });
        }
        // Neumaier-compensated accumulation keeps long spend sequences exact.
        let t = self.spent + rho;
        if self.spent.abs() >= rho.abs() {
            self.compensation += (self.spent - t) + rho;
        } else {
            self.compensation += (rho - t) + self.spent;
        }
        self.spent = t;
        Ok(())
    }

    pub fn spent(&self) -> f64 {
        self.spent + self.compensation
    }

    /// Never negative: rounding shortfall is clamped.
    pub fn remaining(&self) -> f64 {
        (self.total - self.spent()).max(0.0)
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}
