//! Thin command-line wrapper over `scatlab::cli`.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical-divergence or other
//! reportable numerical outcome (a JSON error report is still written),
//! 4 IO error.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use scatlab::cli::{execute, exit_code, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "scatlab",
    version,
    about = "Numerical laboratory for 3D Schrodinger operators H = -div(grad) + div Q \
             with slowly decaying vector fields",
    long_about = None,
    after_help = "Config files are line-oriented `key = value` with [section] headers. \
                  Results are cached under <out>/cache, keyed by a digest of the \
                  canonicalized config; set SCATLAB_CACHE_DIR to relocate the cache."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to a `key = value` config file with [section] headers.
    #[arg(long)]
    config: Option<PathBuf>,

    /// RNG seed; overrides the config file's `seed` key.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for the JSON report, CSV tables, and SVG plots.
    #[arg(long, default_value = "scatlab-out")]
    out: PathBuf,

    /// Disable the result cache for this run.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Born-series Green function at sampled (x, y) pairs.
    ///
    /// CSV `green`: x1,x2,x3,y1,y2,y3,re,im,abs -- one row per pair.
    /// Keys: [wavenumber] tau, delta; [field] kind, eta; [green] n_pairs;
    /// [born] tol, n_max, c_cal; [quadrature] overrides.
    Green(Common),

    /// Resolvent samples u = (H - z)^{-1} f on a direction/radius grid.
    ///
    /// CSV `resolvent`: dir,d1,d2,d3,r,re,im,abs. CSV `decay`: r,mean_abs
    /// (also rendered as an SVG log-log plot with the fitted slope).
    /// Keys: [wavenumber]; [field]; [source] amp, alpha; [grid]
    /// n_directions, r_min, r_max, n_radii; [born]; [quadrature].
    Resolvent(Common),

    /// Far-field amplitude extracted from the resolvent's radial decay.
    ///
    /// CSV `amplitude`: t1,t2,t3,weight,re,im,abs -- one row per direction.
    /// Keys: as for resolvent, plus [amplitude] min_radius.
    Amplitude(Common),

    /// Spectral density k/pi * ||A(k,.)||^2 at a list of wavenumbers.
    ///
    /// CSV `density`: k,e,density,norm_sq.
    /// Keys: [wavenumber] taus (comma list), delta; rest as for amplitude.
    Density(Common),

    /// Harmonic-measure entropy certificate on a triangle in the upper
    /// half plane (walk-on-spheres Monte Carlo).
    ///
    /// CSV `measure`: edge,bin,mass,error,nu.
    /// Keys: [triangle] a1, a2, gamma1; [walk] n_walkers, bins_per_edge;
    /// [quadrature].
    Entropy(Common),

    /// Picard iteration for the phase correction mu of the damped eikonal
    /// equation; exits 3 if the iteration stops contracting.
    ///
    /// CSV `mu`: d1,d2,d3,r,mu,w.
    /// Keys: [eikonal] k, n_iter, amp, alpha, r_min, r_max, n_radii,
    /// residual (bool); [quadrature].
    Eikonal(Common),

    /// Helmholtz reconstruction Q of a scalar potential V with div Q = V,
    /// checked by finite-difference divergence.
    ///
    /// CSV `helmholtz`: x1,x2,x3,q1,q2,q3,div_fd,v,rel_err,tail.
    /// Keys: [helmholtz] amp, alpha, split_radius, fd_step, radii;
    /// [quadrature].
    Helmholtz(Common),

    /// Monte Carlo decay statistics of the randomized slowly decaying
    /// potential Q2 (lattice of smoothed bumps with random signs).
    ///
    /// CSV `decay`: r,mean_sq,stderr (plus SVG log-log plot).
    /// Keys: [anderson] eps, max_radius, n_realizations, n_directions,
    /// radii; [quadrature].
    Anderson(Common),

    /// Quadrature sweeps validating the two damped-kernel integral bounds
    /// (sphere bounds and the exterior-lens exponential gain).
    ///
    /// CSV `lemma1`: delta,rho,x,lhs0..2,shape0..2. CSV `lemma2`:
    /// delta,x,lhs,shape.
    /// Keys: [lemma1] deltas, rhos, x_norms; [lemma2] deltas, x_norms;
    /// [quadrature].
    VerifyLemmas(Common),

    /// Supersymmetric 8x8 factorization check: the squared off-diagonal
    /// block reproduces -lap + |v|^2 + div v to O(h^2).
    ///
    /// CSV `dirac`: h,max_deviation,max_offdiagonal.
    /// Keys: [dirac] grid_step; [field] kind, eta.
    DiracCheck(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Green(c) => ("green", c),
            Command::Resolvent(c) => ("resolvent", c),
            Command::Amplitude(c) => ("amplitude", c),
            Command::Density(c) => ("density", c),
            Command::Entropy(c) => ("entropy", c),
            Command::Eikonal(c) => ("eikonal", c),
            Command::Helmholtz(c) => ("helmholtz", c),
            Command::Anderson(c) => ("anderson", c),
            Command::VerifyLemmas(c) => ("verify-lemmas", c),
            Command::DiracCheck(c) => ("dirac-check", c),
        }
    }
}

fn run() -> Result<(), (i32, String)> {
    let cli = Cli::parse();
    let (name, common) = cli.command.split();

    let text = match &common.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| (4, format!("cannot read config {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let cfg = ExperimentConfig::build(
        name,
        text.as_deref(),
        common.seed,
        &common.out,
        common.no_cache,
    )
    .map_err(|e| (exit_code(&e), e.to_string()))?;

    let report = match execute(&cfg) {
        Ok(r) => r,
        Err(e) => {
            let code = exit_code(&e);
            if code == 3 {
                // Reportable numerical outcome: still emit a JSON record.
                let record = serde_json::json!({
                    "command": cfg.command,
                    "config_digest": cfg.digest(),
                    "seed": cfg.seed,
                    "outcome": "numerical",
                    "error": e.to_string(),
                });
                let path = common.out.join(format!("{name}_error.json"));
                let _ = scatlab::report::write_json(&path, &record);
            }
            return Err((code, e.to_string()));
        }
    };
    write_outputs(&report, &common.out).map_err(|e| (exit_code(&e), e.to_string()))?;
    println!(
        "{name}: ok (digest {}, cache {}, {:.2}s); artifacts in {}",
        &report.config_digest[..12],
        if report.cache_hit { "hit" } else { "miss" },
        report.elapsed_seconds,
        common.out.display()
    );
    Ok(())
}

fn main() {
    if let Err((code, msg)) = run() {
        eprintln!("scatlab: {msg}");
        std::process::exit(code);
    }
}
