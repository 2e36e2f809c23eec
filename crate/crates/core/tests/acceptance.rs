//! Acceptance suite: end-to-end checks of the denoising pipeline, privacy
//! accounting, and neighbor search. All criteria run sequentially inside a
//! single test so wall-clock measurements are not polluted by parallel test
//! load; one PASS/FAIL line is printed per criterion.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use dpmd_core::denoiser::{
    denoise_queries_with_geometry, dp_projector, Bandwidth, Budget, DenoiseConfig,
};
use dpmd_core::experiments::{
    derive_seed, generate_clouds, mean_median, summarize_points, summarize_report, NoiseKind,
};
use dpmd_core::linalg::principal_angle_distance;
use dpmd_core::manifolds::{tangent_at, ManifoldKind, ManifoldSpec, NoiseModel, PointCloud};
use dpmd_core::neighbors::{build_index, linear_scan};
use dpmd_core::privacy::{
    epsilon_to_zcdp, gaussian_scale_for_zcdp, make_schedule, mean_sensitivity,
    projector_sensitivity, zcdp_to_epsilon, PrivacyBudget, SensitivityParams,
};
use dpmd_core::{QueryStatus, ReferenceGeometry};

type CriterionResult = Result<String, String>;

fn circle() -> ManifoldSpec {
    ManifoldSpec::with_natural_ambient(ManifoldKind::Circle { radius: 1.0 }).unwrap()
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in order.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    cov / (vx * vy).sqrt()
}

/// Noiseless references on a random d-dimensional linear subspace of R^D;
/// one nonprivate correction step must reproduce the closed-form orthogonal
/// projection of every query.
fn linear_subspace_oracle() -> CriterionResult {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for (d, dim) in [(1usize, 3usize), (2, 5), (3, 8)] {
        let raw = DMatrix::<f64>::from_fn(dim, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let basis = raw.qr().q();
        let mut coords = Vec::with_capacity(500 * dim);
        for _ in 0..500 {
            let g: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            for j in 0..dim {
                coords.push((0..d).map(|c| basis[(j, c)] * g[c]).sum());
            }
        }
        let refs = PointCloud::from_rows(coords, dim).unwrap();
        let mut cfg = DenoiseConfig::new(d, Bandwidth::Fixed { h: 4.0 }, Budget::NonPrivate);
        cfg.steps = 1;
        let geom = ReferenceGeometry::build(refs, &cfg).map_err(|e| e.to_string())?;
        let mut qcoords = Vec::with_capacity(100 * dim);
        for _ in 0..100 * dim {
            qcoords.push(rng.random::<f64>() * 2.0 - 1.0);
        }
        let queries = PointCloud::from_rows(qcoords, dim).unwrap();
        let report =
            denoise_queries_with_geometry(&geom, &queries, &cfg).map_err(|e| e.to_string())?;
        for rec in &report.queries {
            if rec.status != QueryStatus::Denoised {
                return Err(format!("({d},{dim}): query {} starved", rec.index));
            }
            let x = DMatrix::from_column_slice(dim, 1, &rec.initial);
            let expect = &basis * (basis.transpose() * x);
            for j in 0..dim {
                worst = worst.max((rec.final_point[j] - expect[(j, 0)]).abs());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if worst > 1e-8 {
        return Err(format!("max error {worst:.3e} exceeds 1e-8"));
    }
    if elapsed >= 5.0 {
        return Err(format!("runtime {elapsed:.1}s exceeds 5s"));
    }
    Ok(format!("max error {worst:.2e}, {elapsed:.1}s"))
}

struct CircleDeskRun {
    raw_mean_manifold: f64,
    dp_mean_manifold: f64,
    dp_mean_clean: f64,
    np_mean_manifold: f64,
    np_mean_clean: f64,
}

/// One circle desk cell: n = 20000, σ = 0.1 bounded, 200 queries at √σ,
/// T = 3, θ = 0.5, h auto. Returns raw / nonprivate / DP summary means.
fn circle_desk_run(seed_tag: u64, rep: u64, budget: PrivacyBudget) -> Result<CircleDeskRun, String> {
    let spec = circle();
    let data_seed = derive_seed(&[seed_tag, rep]);
    let (refs, queries) = generate_clouds(&spec, 20_000, 200, 0.1, NoiseKind::Bounded, data_seed)
        .map_err(|e| e.to_string())?;
    let queries_clean = queries.clean_cloud().unwrap();
    let mut base = DenoiseConfig::new(1, Bandwidth::Auto { sigma: 0.1 }, Budget::NonPrivate);
    base.seed = data_seed;
    let geom = ReferenceGeometry::build(refs, &base).map_err(|e| e.to_string())?;

    let raw = summarize_points(&queries, &queries_clean, &spec).map_err(|e| e.to_string())?;
    let np_report =
        denoise_queries_with_geometry(&geom, &queries, &base).map_err(|e| e.to_string())?;
    let np = summarize_report(&np_report, &queries_clean, &spec).map_err(|e| e.to_string())?;

    let dp_cfg = DenoiseConfig {
        budget: Budget::Private { budget },
        ..base
    };
    let dp_report =
        denoise_queries_with_geometry(&geom, &queries, &dp_cfg).map_err(|e| e.to_string())?;
    let dp = summarize_report(&dp_report, &queries_clean, &spec).map_err(|e| e.to_string())?;

    Ok(CircleDeskRun {
        raw_mean_manifold: raw.mean_dist_manifold,
        dp_mean_manifold: dp.mean_dist_manifold,
        dp_mean_clean: dp.mean_dist_clean,
        np_mean_manifold: np.mean_dist_manifold,
        np_mean_clean: np.mean_dist_clean,
    })
}

/// DP denoising on the circle desk case must cut the mean manifold distance
/// to at most 0.6× the raw queries' on at least 9 of 10 seeds, within 2 min.
fn circle_desk_improvement() -> CriterionResult {
    let start = Instant::now();
    let budget = PrivacyBudget::from_epsilon_delta(1.0, 0.1).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut ratios = Vec::new();
    for rep in 0..10 {
        let run = circle_desk_run(71, rep, budget)?;
        let ratio = run.dp_mean_manifold / run.raw_mean_manifold;
        ratios.push(ratio);
        if ratio <= 0.6 {
            wins += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 120.0 {
        return Err(format!("runtime {elapsed:.1}s exceeds 2 min"));
    }
    if wins < 9 {
        return Err(format!("only {wins}/10 seeds reached ratio <= 0.6: {ratios:.3?}"));
    }
    let (mean_ratio, _) = mean_median(&ratios);
    Ok(format!(
        "{wins}/10 seeds, mean ratio {mean_ratio:.3}, {elapsed:.0}s"
    ))
}

/// Error must fall monotonically in ε (Spearman ≤ −0.8 over the ε grid) and
/// the ε = 3 error must sit within 1.25× of the nonprivate error.
fn privacy_utility_monotonicity() -> CriterionResult {
    let spec = circle();
    let eps_grid = [0.05, 0.1, 0.3, 0.5, 1.0, 3.0];
    let seeds = 10;
    let mut per_eps_means = vec![Vec::new(); eps_grid.len()];
    let mut np_means = Vec::new();
    for rep in 0..seeds {
        let data_seed = derive_seed(&[99, rep]);
        let (refs, queries) =
            generate_clouds(&spec, 20_000, 200, 0.1, NoiseKind::Bounded, data_seed)
                .map_err(|e| e.to_string())?;
        let queries_clean = queries.clean_cloud().unwrap();
        let mut base = DenoiseConfig::new(1, Bandwidth::Auto { sigma: 0.1 }, Budget::NonPrivate);
        base.seed = data_seed;
        let geom = ReferenceGeometry::build(refs, &base).map_err(|e| e.to_string())?;
        let np_report =
            denoise_queries_with_geometry(&geom, &queries, &base).map_err(|e| e.to_string())?;
        let np = summarize_report(&np_report, &queries_clean, &spec).map_err(|e| e.to_string())?;
        np_means.push(np.mean_dist_manifold);
        for (i, &eps) in eps_grid.iter().enumerate() {
            let budget = PrivacyBudget::from_epsilon_delta(eps, 0.1).map_err(|e| e.to_string())?;
            let cfg = DenoiseConfig {
                budget: Budget::Private { budget },
                ..base
            };
            let report = denoise_queries_with_geometry(&geom, &queries, &cfg)
                .map_err(|e| e.to_string())?;
            let s = summarize_report(&report, &queries_clean, &spec).map_err(|e| e.to_string())?;
            per_eps_means[i].push(s.mean_dist_manifold);
        }
    }
    let means: Vec<f64> = per_eps_means
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let rho = spearman(&eps_grid, &means);
    if rho > -0.8 {
        return Err(format!("Spearman {rho:.3} > -0.8; means {means:.4?}"));
    }
    let np_mean = np_means.iter().sum::<f64>() / np_means.len() as f64;
    let ratio = means[eps_grid.len() - 1] / np_mean;
    if !(1.0 / 1.25..=1.25).contains(&ratio) {
        return Err(format!(
            "eps=3 error {:.4} not within 1.25x of nonprivate {np_mean:.4}",
            means[eps_grid.len() - 1]
        ));
    }
    Ok(format!("Spearman {rho:.2}, eps=3/nonprivate ratio {ratio:.3}"))
}

/// Accuracy must be insensitive to the ambient dimension (max/min mean error
/// ratio ≤ 1.5 across D), and runtime may grow at most linearly in D within
/// a factor-2 slack.
fn dimension_insensitivity() -> CriterionResult {
    let dims = [5usize, 10, 20, 50];
    let seeds = 2;
    let mut means = Vec::new();
    let mut runtimes = Vec::new();
    for &dim in &dims {
        let spec =
            ManifoldSpec::new(ManifoldKind::Sphere { radius: 1.0 }, dim).map_err(|e| e.to_string())?;
        let mut dim_means = Vec::new();
        let mut elapsed = 0.0;
        for rep in 0..seeds {
            let data_seed = derive_seed(&[55, dim as u64, rep]);
            let (refs, queries) =
                generate_clouds(&spec, 10_000, 40, 0.3, NoiseKind::Bounded, data_seed)
                    .map_err(|e| e.to_string())?;
            let queries_clean = queries.clean_cloud().unwrap();
            let budget = PrivacyBudget::from_epsilon_delta(1.0, 0.1).map_err(|e| e.to_string())?;
            let mut cfg =
                DenoiseConfig::new(2, Bandwidth::Auto { sigma: 0.3 }, Budget::Private { budget });
            cfg.seed = data_seed;
            let start = Instant::now();
            let geom = ReferenceGeometry::build(refs, &cfg).map_err(|e| e.to_string())?;
            let report = denoise_queries_with_geometry(&geom, &queries, &cfg)
                .map_err(|e| e.to_string())?;
            elapsed += start.elapsed().as_secs_f64();
            let s = summarize_report(&report, &queries_clean, &spec).map_err(|e| e.to_string())?;
            dim_means.push(s.mean_dist_manifold);
        }
        means.push(dim_means.iter().sum::<f64>() / seeds as f64);
        runtimes.push(elapsed);
    }
    let max = means.iter().cloned().fold(f64::MIN, f64::max);
    let min = means.iter().cloned().fold(f64::MAX, f64::min);
    if max / min > 1.5 {
        return Err(format!("error ratio {:.3} > 1.5; means {means:.4?}", max / min));
    }
    for (i, &dim) in dims.iter().enumerate() {
        let allowed = 2.0 * runtimes[0] * (dim as f64 / dims[0] as f64);
        if runtimes[i] > allowed {
            return Err(format!(
                "runtime at D={dim} is {:.1}s, exceeds linear-in-D bound {allowed:.1}s; \
                 runtimes {runtimes:.2?}",
                runtimes[i]
            ));
        }
    }
    Ok(format!(
        "error ratio {:.2}, runtime D=50/D=5 {:.1}x (bound 20x)",
        max / min,
        runtimes[3] / runtimes[0]
    ))
}

/// Schedule conservation, conversion round trips, and closed-form noise
/// scales over 1000 fuzzed accounting configurations.
fn accounting_exactness() -> CriterionResult {
    let mut rng = ChaCha12Rng::seed_from_u64(5150);
    for trial in 0..1000 {
        let eps = 0.01 + rng.random::<f64>() * 5.0;
        let delta = 1e-8 + rng.random::<f64>() * (0.5 - 1e-8);
        let m = 1 + rng.random_range(0..40);
        let steps = 1 + rng.random_range(0..5);
        let theta = 0.01 + rng.random::<f64>() * 0.98;

        let rho_tot = epsilon_to_zcdp(eps, delta).map_err(|e| e.to_string())?;
        let back = zcdp_to_epsilon(rho_tot, delta).map_err(|e| e.to_string())?;
        if ((back - eps) / eps).abs() > 1e-10 {
            return Err(format!("round trip drift {:.2e} at trial {trial}", back - eps));
        }

        let budget = PrivacyBudget::from_epsilon_delta(eps, delta).map_err(|e| e.to_string())?;
        let schedule = make_schedule(&budget, m, steps, theta).map_err(|e| e.to_string())?;
        // Neumaier-compensated sum of every scheduled entry.
        let mut sum = 0.0;
        let mut comp = 0.0;
        let add = |v: f64, sum: &mut f64, comp: &mut f64| {
            let t = *sum + v;
            if sum.abs() >= v.abs() {
                *comp += (*sum - t) + v;
            } else {
                *comp += (v - t) + *sum;
            }
            *sum = t;
        };
        let sens = SensitivityParams::new(
            100 + rng.random_range(0..100_000),
            0.05 + rng.random::<f64>(),
            1 + rng.random_range(0..3),
            1.0,
            1.0,
        )
        .map_err(|e| e.to_string())?;
        let dp = projector_sensitivity(&sens);
        let dm = mean_sensitivity(&sens);
        for q in 0..m {
            for t in 0..steps {
                let rp = schedule.rho_projector(q, t);
                let rm = schedule.rho_mean(q, t);
                add(rp, &mut sum, &mut comp);
                add(rm, &mut sum, &mut comp);
                let sp = gaussian_scale_for_zcdp(dp, rp).map_err(|e| e.to_string())?;
                let sm = gaussian_scale_for_zcdp(dm, rm).map_err(|e| e.to_string())?;
                if sp.to_bits() != (dp / (2.0 * rp).sqrt()).to_bits()
                    || sm.to_bits() != (dm / (2.0 * rm).sqrt()).to_bits()
                {
                    return Err(format!("noise scale drifted from closed form at trial {trial}"));
                }
            }
        }
        let total = sum + comp;
        if ((total - rho_tot) / rho_tot).abs() > 1e-12 {
            return Err(format!(
                "schedule sum off by {:.2e} relative at trial {trial}",
                (total - rho_tot) / rho_tot
            ));
        }
    }
    Ok("1000 fuzzed configurations exact".into())
}

/// 10^5 fuzzed radius queries must match linear scan exactly, boundary
/// inclusion and duplicates included.
fn neighbor_exactness() -> CriterionResult {
    let mut rng = ChaCha12Rng::seed_from_u64(606);
    let dims = [1usize, 2, 3, 5, 8];
    let mut total_queries = 0usize;
    while total_queries < 100_000 {
        let dim = dims[rng.random_range(0..dims.len())];
        let n = 1 + rng.random_range(0..1500);
        let mut coords: Vec<f64> = (0..n * dim)
            .map(|_| (rng.random::<f64>() * 4.0 - 2.0) * 0.5)
            .collect();
        // Sprinkle exact duplicates.
        if n > 4 {
            for _ in 0..n / 4 {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let (src, dst) = (a * dim, b * dim);
                for j in 0..dim {
                    coords[dst + j] = coords[src + j];
                }
            }
        }
        let cloud = PointCloud::from_rows(coords, dim).unwrap();
        let idx = build_index(cloud.clone());
        let queries_here = 500.min(100_000 - total_queries);
        for _ in 0..queries_here {
            // Half the queries sit exactly on data points so the closed
            // boundary is exercised.
            let x: Vec<f64> = if rng.random::<bool>() {
                cloud.point(rng.random_range(0..n)).to_vec()
            } else {
                (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
            };
            let h = 0.01 + rng.random::<f64>() * 2.0;
            let got = idx.radius_query(&x, h).map_err(|e| e.to_string())?;
            let want = linear_scan(&cloud, &x, h);
            if got != want {
                return Err(format!(
                    "mismatch at dim {dim}, n {n}: got {} ids, want {}",
                    got.len(),
                    want.len()
                ));
            }
        }
        total_queries += queries_here;
    }
    Ok(format!("{total_queries} fuzzed queries exact"))
}

/// Raising n from 20k to 80k must shrink the median private tangent error on
/// at least 8 of 10 paired seeds.
fn tangent_estimation_trend() -> CriterionResult {
    let spec = circle();
    let sigma = 0.05;
    let rho = epsilon_to_zcdp(1.0, 0.1).map_err(|e| e.to_string())?;
    let budget = PrivacyBudget::from_epsilon_delta(1.0, 0.1).map_err(|e| e.to_string())?;
    let mut improved = 0;
    let mut pairs = Vec::new();
    for rep in 0..10u64 {
        // Queries are shared between the two sample sizes for tight pairing.
        let mut qrng = ChaCha12Rng::seed_from_u64(derive_seed(&[303, rep]));
        let queries_clean = dpmd_core::manifolds::sample_manifold(&spec, 50, &mut qrng);
        let queries = dpmd_core::manifolds::add_noise(
            &queries_clean,
            &NoiseModel::BoundedBall { sigma },
            &mut qrng,
        )
        .map_err(|e| e.to_string())?;

        let mut medians = Vec::new();
        for (ni, &n) in [20_000usize, 80_000].iter().enumerate() {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(&[404, rep]));
            let refs_clean = dpmd_core::manifolds::sample_manifold(&spec, n, &mut rng);
            let refs = dpmd_core::manifolds::add_noise(
                &refs_clean,
                &NoiseModel::BoundedBall { sigma },
                &mut rng,
            )
            .map_err(|e| e.to_string())?;
            let idx = build_index(refs.clone());
            let mut cfg = DenoiseConfig::new(
                1,
                Bandwidth::Auto { sigma },
                Budget::Private { budget },
            );
            cfg.seed = derive_seed(&[505, rep, ni as u64]);
            let mut errors = Vec::new();
            for q in 0..queries.len() {
                let z = queries.point(q);
                let mut mech_rng =
                    ChaCha12Rng::seed_from_u64(derive_seed(&[cfg.seed, q as u64]));
                let released = dp_projector(&refs, &idx, z, &cfg, rho, &mut mech_rng)
                    .map_err(|e| e.to_string())?;
                let truth = tangent_at(&spec, z).map_err(|e| e.to_string())?;
                errors.push(
                    principal_angle_distance(&released, &truth).map_err(|e| e.to_string())?,
                );
            }
            let (_, median) = mean_median(&errors);
            medians.push(median);
        }
        pairs.push((medians[0], medians[1]));
        if medians[1] < medians[0] {
            improved += 1;
        }
    }
    if improved < 8 {
        return Err(format!("only {improved}/10 paired seeds improved: {pairs:.4?}"));
    }
    Ok(format!("{improved}/10 paired seeds improved"))
}

/// With an enormous zCDP budget the DP run must match the nonprivate run to
/// under 1% on both mean metrics.
fn nonprivate_limit_consistency() -> CriterionResult {
    let budget = PrivacyBudget::from_rho(1e3, 0.1).map_err(|e| e.to_string())?;
    let run = circle_desk_run(808, 0, budget)?;
    let manifold_drift = (run.dp_mean_manifold - run.np_mean_manifold).abs() / run.np_mean_manifold;
    let clean_drift = (run.dp_mean_clean - run.np_mean_clean).abs() / run.np_mean_clean;
    if manifold_drift >= 0.01 || clean_drift >= 0.01 {
        return Err(format!(
            "drift too large: manifold {manifold_drift:.4}, clean {clean_drift:.4}"
        ));
    }
    Ok(format!(
        "manifold drift {manifold_drift:.5}, clean drift {clean_drift:.5}"
    ))
}

type Criterion = (&'static str, fn() -> CriterionResult);

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        ("linear-subspace-oracle", linear_subspace_oracle),
        ("circle-desk-improvement", circle_desk_improvement),
        ("privacy-utility-monotonicity", privacy_utility_monotonicity),
        ("dimension-insensitivity", dimension_insensitivity),
        ("accounting-exactness", accounting_exactness),
        ("neighbor-exactness", neighbor_exactness),
        ("tangent-estimation-trend", tangent_estimation_trend),
        ("nonprivate-limit-consistency", nonprivate_limit_consistency),
    ];
    let mut failures = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        match run() {
            Ok(detail) => println!(
                "PASS {name} [{detail}] ({:.1}s)",
                start.elapsed().as_secs_f64()
            ),
            Err(msg) => {
                println!(
                    "FAIL {name}: {msg} ({:.1}s)",
                    start.elapsed().as_secs_f64()
                );
                failures.push(format!("{name}: {msg}"));
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
