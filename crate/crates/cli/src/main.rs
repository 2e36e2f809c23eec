//! `dpmd`: differentially private manifold denoising from the command line.
//!
//! Subcommands: `generate` synthetic reference/query clouds, `denoise` query
//! files against a private reference file, `sweep` a parameter grid from a
//! JSON config, and `account` to print a privacy schedule table.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dpmd_core::denoiser::{denoise_queries, Bandwidth, Budget, DenoiseConfig};
use dpmd_core::experiments::{generate_clouds, run_sweep, NoiseKind, SweepConfig};
use dpmd_core::io::{read_point_cloud, write_point_cloud};
use dpmd_core::manifolds::{ManifoldKind, ManifoldSpec};
use dpmd_core::privacy::{
    gaussian_scale_for_zcdp, make_schedule, mean_sensitivity, projector_sensitivity,
    PrivacyBudget, SensitivityParams,
};

#[derive(Parser)]
#[command(
    name = "dpmd",
    about = "Differentially private manifold denoising",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic reference cloud (and optionally queries).
    Generate(GenerateArgs),
    /// Denoise query points against a private reference cloud.
    Denoise(DenoiseArgs),
    /// Run a parameter sweep described by a JSON config file.
    Sweep(SweepArgs),
    /// Print the per-query/per-step privacy schedule as CSV.
    Account(AccountArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ManifoldArg {
    Circle,
    Torus,
    Swissroll,
    Sphere,
}

impl ManifoldArg {
    /// Canonical shape parameters; the grids vary n, sigma, and dimension.
    fn kind(self) -> ManifoldKind {
        match self {
            ManifoldArg::Circle => ManifoldKind::Circle { radius: 1.0 },
            ManifoldArg::Torus => ManifoldKind::Torus {
                major_radius: 2.0,
                minor_radius: 0.5,
            },
            ManifoldArg::Swissroll => ManifoldKind::SwissRoll {
                turns: 1.5,
                height: 1.0,
            },
            ManifoldArg::Sphere => ManifoldKind::Sphere { radius: 1.0 },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Bounded,
    Gaussian,
}

#[derive(Args)]
struct GenerateArgs {
    /// Manifold family (canonical shape parameters).
    #[arg(long)]
    manifold: ManifoldArg,
    /// Number of reference points (noised at sigma).
    #[arg(long)]
    n: usize,
    /// Reference noise magnitude; queries are noised at sqrt(sigma).
    #[arg(long)]
    sigma: f64,
    /// Ambient dimension (defaults to the manifold's natural embedding).
    #[arg(long)]
    ambient_dim: Option<usize>,
    /// Number of query points; written to a `_queries` sibling of --out.
    #[arg(long, default_value_t = 0)]
    query_count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Bounded)]
    noise: NoiseArg,
    /// Reference cloud output path.
    #[arg(long)]
    out: PathBuf,
    /// Clean (pre-noise) reference coordinates; queries get a sibling file.
    #[arg(long)]
    clean_out: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Private reference cloud CSV.
    #[arg(long)]
    refs: PathBuf,
    /// Public query cloud CSV.
    #[arg(long)]
    queries: PathBuf,
    /// Intrinsic dimension of the manifold.
    #[arg(long)]
    d: usize,
    /// Bandwidth: a positive number, or `auto` (requires --sigma).
    #[arg(long, default_value = "auto")]
    h: String,
    /// Noise magnitude used by the automatic bandwidth rule.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Total privacy budget; required unless --nonprivate.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    c_proj: f64,
    #[arg(long, default_value_t = 1.0)]
    c_mean: f64,
    #[arg(long, default_value_t = 1.25)]
    c1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Denoised query cloud CSV.
    #[arg(long)]
    out: PathBuf,
    /// Run report; JSON at this path plus a per-query CSV sibling.
    #[arg(long)]
    report: PathBuf,
    /// Skip all privacy noise (the non-private baseline).
    #[arg(long)]
    nonprivate: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON file mirroring the sweep configuration schema.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Number of queries sharing the budget.
    #[arg(long)]
    queries: usize,
    /// Correction steps per query.
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    theta: f64,
    /// Reference count entering the sensitivity bounds.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    h: f64,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    c_proj: f64,
    #[arg(long, default_value_t = 1.0)]
    c_mean: f64,
}

/// `a.csv` → `a_queries.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}{tag}"),
    };
    path.with_file_name(name)
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let kind = args.manifold.kind();
    let ambient = args.ambient_dim.unwrap_or_else(|| kind.natural_dim());
    let spec = ManifoldSpec::new(kind, ambient)?;
    let noise = match args.noise {
        NoiseArg::Bounded => NoiseKind::Bounded,
        NoiseArg::Gaussian => NoiseKind::Gaussian,
    };
    let (refs, queries) =
        generate_clouds(&spec, args.n, args.query_count, args.sigma, noise, args.seed)?;
    write_point_cloud(&args.out, &refs)?;
    println!("wrote {} references to {}", refs.len(), args.out.display());
    if args.query_count > 0 {
        let qpath = sibling(&args.out, "_queries");
        write_point_cloud(&qpath, &queries)?;
        println!("wrote {} queries to {}", queries.len(), qpath.display());
    }
    if let Some(clean_out) = args.clean_out {
        let refs_clean = refs.clean_cloud().expect("generated with clean pairing");
        write_point_cloud(&clean_out, &refs_clean)?;
        println!("wrote clean references to {}", clean_out.display());
        if args.query_count > 0 {
            let qclean = queries.clean_cloud().expect("generated with clean pairing");
            let qpath = sibling(&clean_out, "_queries");
            write_point_cloud(&qpath, &qclean)?;
            println!("wrote clean queries to {}", qpath.display());
        }
    }
    Ok(())
}

fn cmd_denoise(args: DenoiseArgs) -> anyhow::Result<()> {
    let refs = read_point_cloud(&args.refs)
        .with_context(|| format!("reading references {}", args.refs.display()))?;
    let queries = read_point_cloud(&args.queries)
        .with_context(|| format!("reading queries {}", args.queries.display()))?;
    if refs.dim() != queries.dim() {
        bail!(
            "reference dimension {} does not match query dimension {}",
            refs.dim(),
            queries.dim()
        );
    }
    let bandwidth = if args.h == "auto" {
        match args.sigma {
            Some(sigma) => Bandwidth::Auto { sigma },
            None => bail!("--h auto requires --sigma (the bandwidth rule depends on it)"),
        }
    } else {
        let h: f64 = args
            .h
            .parse()
            .with_context(|| format!("--h must be `auto` or a number, got {:?}", args.h))?;
        Bandwidth::Fixed { h }
    };
    let budget = if args.nonprivate {
        Budget::NonPrivate
    } else {
        let (Some(epsilon), Some(delta)) = (args.epsilon, args.delta) else {
            bail!("--epsilon and --delta are required unless --nonprivate is set");
        };
        Budget::Private {
            budget: PrivacyBudget::from_epsilon_delta(epsilon, delta)?,
        }
    };
    let cfg = DenoiseConfig {
        h: bandwidth,
        d: args.d,
        steps: args.steps,
        beta: args.beta,
        theta: args.theta,
        budget,
        c_proj: args.c_proj,
        c_mean: args.c_mean,
        c1: args.c1,
        seed: args.seed,
        min_neighbors: None,
        record_trajectories: false,
    };
    let dim = queries.dim();
    let report = denoise_queries(refs, &queries, &cfg)?;
    write_point_cloud(&args.out, &report.output_cloud(dim)?)?;
    report.write_json(&args.report)?;
    let csv_path = args.report.with_extension("csv");
    report.write_csv(&csv_path)?;
    let served = report
        .queries
        .iter()
        .filter(|q| q.status == dpmd_core::QueryStatus::Denoised)
        .count();
    println!(
        "denoised {served}/{} queries (h = {:.6}); output {}, report {} / {}",
        report.queries.len(),
        report.config.h,
        args.out.display(),
        args.report.display(),
        csv_path.display()
    );
    if let Some(privacy) = &report.privacy {
        println!(
            "privacy: rho_spent = {:.6e} of {:.6e}, realized epsilon = {:.4} at delta = {}",
            privacy.rho_spent, privacy.rho_total, privacy.epsilon_realized, privacy.delta
        );
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let cfg: SweepConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", args.config.display()))?;
    let rows = run_sweep(&cfg)?;
    let errors = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "appended {} rows to {} ({errors} with errors)",
        rows.len(),
        cfg.output.display()
    );
    Ok(())
}

fn cmd_account(args: AccountArgs) -> anyhow::Result<()> {
    let budget = PrivacyBudget::from_epsilon_delta(args.epsilon, args.delta)?;
    let schedule = make_schedule(&budget, args.queries, args.steps, args.theta)?;
    let sens = SensitivityParams::new(args.n, args.h, args.d, args.c_proj, args.c_mean)?;
    let dp = projector_sensitivity(&sens);
    let dm = mean_sensitivity(&sens);
    println!("query,step,rho_P,rho_m,sigma_P,sigma_m");
    for q in 0..args.queries {
        for t in 0..args.steps {
            let rp = schedule.rho_projector(q, t);
            let rm = schedule.rho_mean(q, t);
            println!(
                "{q},{t},{rp},{rm},{},{}",
                gaussian_scale_for_zcdp(dp, rp)?,
                gaussian_scale_for_zcdp(dm, rm)?
            );
        }
    }
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Denoise(args) => cmd_denoise(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Account(args) => cmd_account(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
