//! Command front end: experiment configuration, pipeline orchestration,
//! result caching, and report/plot emission.
//!
//! Every command is a pure function of (config, seed): reports are cached
//! content-addressed by a digest of the canonicalized config, and a cache
//! hit reproduces the result tables byte for byte.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::anderson::{AndersonPotentialSpec, SignLaw};
use crate::born::{born_series_green, solve_resolvent, BornSettings, RadialGrid};
use crate::cache::Cache;
use crate::config::ConfigDoc;
use crate::eikonal::{eikonal_residual, eikonal_spec, picard_iterate_mu};
use crate::error::{Error, Result};
use crate::fields::{helmholtz_divergence_fd, helmholtz_reconstruct, ScalarField, VectorField};
use crate::geom::{directions_axes, directions_fibonacci, log_radii, ComplexWavenumber, Point3};
use crate::quad::QuadratureSpec;
use crate::report::{CsvTable, DecayPlot};
use crate::rng::stream;
use crate::scattering::{
    amplitude_from_resolvent, entropy_certificate, free_amplitude, harmonic_measure, pick_k0,
    spectral_density, sphere_grid, TriangleDomain, WosOptions,
};
use crate::verify::{default_lemma_grids, dirac_factorization_check, lemma1_sweep, lemma2_sweep};

pub const COMMANDS: &[&str] = &[
    "green",
    "resolvent",
    "amplitude",
    "density",
    "entropy",
    "eikonal",
    "helmholtz",
    "anderson",
    "verify-lemmas",
    "dirac-check",
];

/// A validated experiment: command, settings document, and run controls.
/// The command and seed are materialized into the document so the digest
/// covers everything that determines the result tables. The output
/// directory is deliberately *not* digested: moving artifacts elsewhere
/// does not change what they contain.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: String,
    pub doc: ConfigDoc,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub use_cache: bool,
}

impl ExperimentConfig {
    pub fn build(
        command: &str,
        config_text: Option<&str>,
        seed_override: Option<u64>,
        out_dir: &Path,
        no_cache: bool,
    ) -> Result<ExperimentConfig> {
        if !COMMANDS.contains(&command) {
            return Err(Error::Config(format!(
                "unknown command `{command}`; expected one of {}",
                COMMANDS.join(", ")
            )));
        }
        let mut doc = match config_text {
            Some(t) => ConfigDoc::parse(t)?,
            None => ConfigDoc::new(),
        };
        let seed = match seed_override {
            Some(s) => s,
            None => doc.get_u64("", "seed", 7)?,
        };
        doc.set("", "command", command);
        doc.set("", "seed", &seed.to_string());
        Ok(ExperimentConfig {
            command: command.to_string(),
            doc,
            seed,
            out_dir: out_dir.to_path_buf(),
            use_cache: !no_cache,
        })
    }

    pub fn digest(&self) -> String {
        self.doc.digest()
    }

    fn cache(&self) -> Cache {
        Cache::new(&self.out_dir.join("cache"), self.use_cache)
    }
}

/// The result of one command run. `tables` hold the numeric results;
/// everything else is provenance and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub cache_hit: bool,
    pub elapsed_seconds: f64,
    pub provenance: Value,
    pub diagnostics: Value,
    pub tables: BTreeMap<String, CsvTable>,
}

#[derive(Debug)]
struct Pipe {
    provenance: Value,
    diagnostics: Value,
    tables: BTreeMap<String, CsvTable>,
}

/// Run a command, consulting the cache first. A hit is served verbatim
/// (same digest implies same tables); only the timing and the hit flag
/// are refreshed.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunReport> {
    let digest = cfg.digest();
    let cache = cfg.cache();
    let start = Instant::now();
    if let Some(stored) = cache.lookup(&digest) {
        if let Ok(mut report) = serde_json::from_value::<RunReport>(stored) {
            report.cache_hit = true;
            report.elapsed_seconds = start.elapsed().as_secs_f64();
            return Ok(report);
        }
    }
    let pipe = run_pipeline(cfg)?;
    let report = RunReport {
        command: cfg.command.clone(),
        config_digest: digest.clone(),
        seed: cfg.seed,
        cache_hit: false,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        provenance: pipe.provenance,
        diagnostics: pipe.diagnostics,
        tables: pipe.tables,
    };
    if let Ok(v) = serde_json::to_value(&report) {
        cache.store(&digest, &v);
    }
    Ok(report)
}

/// Write the JSON report, one CSV per table, and any decay plots under
/// the configured output directory.
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> Result<()> {
    crate::report::write_json(&out_dir.join(format!("{}.json", report.command)), report)?;
    for (name, table) in &report.tables {
        table.write(&out_dir.join(format!("{}_{name}.csv", report.command)))?;
    }
    for (name, plot) in render_plots(report) {
        plot.write(&out_dir.join(format!("{}_{name}.svg", report.command)))?;
    }
    Ok(())
}

/// Log-log decay plots for commands that produce a radius/magnitude table
/// named `decay`. Rendered from the (possibly cached) tables, so plots are
/// reproduced on cache hits too.
pub fn render_plots(report: &RunReport) -> Vec<(String, DecayPlot)> {
    let mut out = Vec::new();
    if let Some(t) = report.tables.get("decay") {
        let mut plot = DecayPlot::new(&format!("{}: decay vs radius", report.command));
        for row in &t.rows {
            if row.len() >= 2 {
                plot.points.push((row[0], row[1]));
            }
        }
        let d = &report.diagnostics;
        if let (Some(i), Some(s)) = (
            d.get("plot_intercept").and_then(Value::as_f64),
            d.get("plot_slope").and_then(Value::as_f64),
        ) {
            plot.fit = Some((i, s));
        }
        out.push(("decay".to_string(), plot));
    }
    out
}

/// Process exit code for a failed run: 2 for configuration problems,
/// 4 for IO, 3 for reportable numerical outcomes (divergence, accuracy,
/// degenerate data).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}

/// Collects every config problem instead of stopping at the first.
struct KeyReader<'a> {
    doc: &'a ConfigDoc,
    problems: Vec<String>,
}

impl<'a> KeyReader<'a> {
    fn new(doc: &'a ConfigDoc) -> Self {
        KeyReader {
            doc,
            problems: Vec::new(),
        }
    }

    fn f64(&mut self, section: &str, key: &str, default: f64) -> f64 {
        self.doc.get_f64(section, key, default).unwrap_or_else(|e| {
            self.problems.push(e.to_string());
            default
        })
    }

    fn usize(&mut self, section: &str, key: &str, default: usize) -> usize {
        self.doc
            .get_usize(section, key, default)
            .unwrap_or_else(|e| {
                self.problems.push(e.to_string());
                default
            })
    }

    fn u64(&mut self, section: &str, key: &str, default: u64) -> u64 {
        self.doc.get_u64(section, key, default).unwrap_or_else(|e| {
            self.problems.push(e.to_string());
            default
        })
    }

    fn bool(&mut self, section: &str, key: &str, default: bool) -> bool {
        self.doc
            .get_bool(section, key, default)
            .unwrap_or_else(|e| {
                self.problems.push(e.to_string());
                default
            })
    }

    fn f64_list(&mut self, section: &str, key: &str, default: &[f64]) -> Vec<f64> {
        self.doc
            .get_f64_list(section, key, default)
            .unwrap_or_else(|e| {
                self.problems.push(e.to_string());
                default.to_vec()
            })
    }

    fn string(&mut self, section: &str, key: &str, default: &str) -> String {
        self.doc.get(section, key).unwrap_or(default).to_string()
    }

    fn problem(&mut self, msg: String) {
        self.problems.push(msg);
    }

    /// Reads a vector field from `[field]`: kind, eta.
    fn field(&mut self, default_kind: &str) -> VectorField {
        let kind = self.string("field", "kind", default_kind);
        let eta = self.f64("field", "eta", 1.0);
        match kind.as_str() {
            "zero" => VectorField::zero(),
            "bump_gradient" => VectorField::bump_gradient(eta),
            "gradient_gaussian" => VectorField::gradient_gaussian(eta),
            other => {
                self.problem(format!(
                    "[field] kind: `{other}` is not one of zero, bump_gradient, gradient_gaussian"
                ));
                VectorField::zero()
            }
        }
    }

    /// Quadrature overrides from `[quadrature]` on top of `base`.
    fn quadrature(&mut self, base: &QuadratureSpec) -> QuadratureSpec {
        QuadratureSpec {
            n_theta: self.usize("quadrature", "n_theta", base.n_theta),
            n_phi: self.usize("quadrature", "n_phi", base.n_phi),
            n_radial: self.usize("quadrature", "n_radial", base.n_radial),
            panel_len: self.f64("quadrature", "panel_len", base.panel_len),
            refine_steps: self.usize("quadrature", "refine_steps", base.refine_steps),
            tol: self.f64("quadrature", "tol", base.tol),
        }
    }

    fn finish(self) -> Result<()> {
        if self.problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(self.problems.join("; ")))
        }
    }
}

fn run_pipeline(cfg: &ExperimentConfig) -> Result<Pipe> {
    match cfg.command.as_str() {
        "green" => run_green(cfg),
        "resolvent" => run_resolvent(cfg),
        "amplitude" => run_amplitude(cfg),
        "density" => run_density(cfg),
        "entropy" => run_entropy(cfg),
        "eikonal" => run_eikonal(cfg),
        "helmholtz" => run_helmholtz(cfg),
        "anderson" => run_anderson(cfg),
        "verify-lemmas" => run_verify_lemmas(cfg),
        "dirac-check" => run_dirac_check(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn born_settings(r: &mut KeyReader) -> BornSettings {
    let base = BornSettings::default();
    BornSettings {
        tol: r.f64("born", "tol", base.tol),
        n_max: r.usize("born", "n_max", base.n_max),
        spec: r.quadrature(&base.spec),
        c_cal: r.f64("born", "c_cal", base.c_cal),
        grid: base.grid,
    }
}

fn wavenumber(r: &mut KeyReader, tau: f64, delta: f64) -> ComplexWavenumber {
    ComplexWavenumber::new(
        r.f64("wavenumber", "tau", tau),
        r.f64("wavenumber", "delta", delta),
    )
}

fn sample_grid(r: &mut KeyReader) -> Result<RadialGrid> {
    let nd = r.usize("grid", "n_directions", 6);
    let r_min = r.f64("grid", "r_min", 2.0);
    let r_max = r.f64("grid", "r_max", 16.0);
    let n_radii = r.usize("grid", "n_radii", 6);
    RadialGrid::new(directions_fibonacci(nd), log_radii(r_min, r_max, n_radii))
}

fn run_green(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let k = wavenumber(&mut r, 1.0, 0.5);
    let q = r.field("zero");
    let n_pairs = r.usize("green", "n_pairs", 6);
    let settings = born_settings(&mut r);
    r.finish()?;

    let mut rng = stream(cfg.seed, 1);
    let mut sample = || loop {
        let p = Point3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = p.norm();
        if n > 0.2 {
            return p.scale(rng.gen_range(1.5..4.0) / n);
        }
    };
    let mut table = CsvTable::new(&["x1", "x2", "x3", "y1", "y2", "y3", "re", "im", "abs"]);
    let mut converged = true;
    let mut smallness: f64 = 0.0;
    let mut orders: Vec<f64> = Vec::new();
    for _ in 0..n_pairs {
        let x = sample();
        let mut y = sample();
        while x.sub(&y).norm() < 0.5 {
            y = sample();
        }
        let g = born_series_green(k, &q, &x, &y, &settings)?;
        converged &= g.converged;
        smallness = smallness.max(g.smallness_ratio);
        if g.orders.len() > orders.len() {
            orders = g.orders.clone();
        }
        let v = g.value();
        table.push(vec![
            x.x1,
            x.x2,
            x.x3,
            y.x1,
            y.x2,
            y.x3,
            v.re,
            v.im,
            v.norm(),
        ]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("green".to_string(), table);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "tau": k.tau, "delta": k.delta,
            "born_tol": settings.tol, "n_max": settings.n_max, "n_pairs": n_pairs,
        }),
        diagnostics: json!({
            "converged": converged,
            "smallness_ratio": smallness,
            "orders": orders,
        }),
        tables,
    })
}

fn resolvent_inputs(
    r: &mut KeyReader,
) -> (ComplexWavenumber, VectorField, ScalarField, BornSettings) {
    let k = wavenumber(r, 1.0, 0.5);
    let q = r.field("bump_gradient");
    let f = ScalarField::gaussian(r.f64("source", "amp", 1.0), r.f64("source", "alpha", 1.0));
    let settings = born_settings(r);
    (k, q, f, settings)
}

fn resolvent_tables(table: &crate::born::ResolventTable) -> BTreeMap<String, CsvTable> {
    let mut full = CsvTable::new(&["dir", "d1", "d2", "d3", "r", "re", "im", "abs"]);
    let mut decay = CsvTable::new(&["r", "mean_abs"]);
    for (ri, &rad) in table.radii.iter().enumerate() {
        let mut acc = 0.0;
        for (di, d) in table.directions.iter().enumerate() {
            let v = table.value(di, ri);
            acc += v.norm();
            full.push(vec![di as f64, d[0], d[1], d[2], rad, v.re, v.im, v.norm()]);
        }
        decay.push(vec![rad, acc / table.directions.len() as f64]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("resolvent".to_string(), full);
    tables.insert("decay".to_string(), decay);
    tables
}

fn run_resolvent(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let (k, q, f, settings) = resolvent_inputs(&mut r);
    let grid = sample_grid(&mut r)?;
    r.finish()?;

    let table = solve_resolvent(k, &q, &f, &grid, &settings)?;
    let tables = resolvent_tables(&table);
    let fit = crate::fit::power_law_fit(
        &table.radii,
        &tables["decay"]
            .rows
            .iter()
            .map(|row| row[1])
            .collect::<Vec<_>>(),
    );
    let (slope, intercept) = fit.map(|f| (f.slope, f.intercept)).unwrap_or((0.0, 0.0));
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "tau": k.tau, "delta": k.delta,
            "directions": table.directions.len(), "radii": table.radii,
            "born_tol": settings.tol,
        }),
        diagnostics: json!({
            "converged": table.converged,
            "smallness_ratio": table.smallness_ratio,
            "orders": table.orders,
            "weighted_sup": table.weighted_sup(),
            "l2_norm": table.l2_norm(),
            "plot_slope": slope, "plot_intercept": intercept,
        }),
        tables,
    })
}

fn run_amplitude(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let (k, q, f, settings) = resolvent_inputs(&mut r);
    let grid = sample_grid(&mut r)?;
    let min_radius = r.f64("amplitude", "min_radius", 2.0);
    r.finish()?;

    let table = solve_resolvent(k, &q, &f, &grid, &settings)?;
    let amp = amplitude_from_resolvent(&table, min_radius)?;
    let mut out = CsvTable::new(&["t1", "t2", "t3", "weight", "re", "im", "abs"]);
    for (i, d) in amp.directions.iter().enumerate() {
        let v = amp.value(i);
        out.push(vec![d[0], d[1], d[2], amp.weights[i], v.re, v.im, v.norm()]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("amplitude".to_string(), out);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "tau": k.tau, "delta": k.delta,
            "extraction_radii": amp.extraction_radii, "min_radius": min_radius,
        }),
        diagnostics: json!({
            "norm_sq": amp.norm_sq(),
            "extraction_residual": amp.residual,
            "resolvent_converged": table.converged,
        }),
        tables,
    })
}

fn run_density(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let taus = r.f64_list("wavenumber", "taus", &[1.0]);
    let delta = r.f64("wavenumber", "delta", 1e-2);
    let q = r.field("zero");
    let f = ScalarField::gaussian(r.f64("source", "amp", 1.0), r.f64("source", "alpha", 1.0));
    let settings = born_settings(&mut r);
    let grid = sample_grid(&mut r)?;
    let min_radius = r.f64("amplitude", "min_radius", 2.0);
    r.finish()?;

    let mut out = CsvTable::new(&["k", "e", "density", "norm_sq"]);
    for &tau in &taus {
        let k = ComplexWavenumber::new(tau, delta);
        let table = solve_resolvent(k, &q, &f, &grid, &settings)?;
        let amp = amplitude_from_resolvent(&table, min_radius)?;
        let s = spectral_density(&amp, tau)?;
        out.push(vec![tau, s.e, s.density, amp.norm_sq()]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("density".to_string(), out);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "taus": taus, "delta": delta, "min_radius": min_radius,
        }),
        diagnostics: json!({ "n_points": taus.len() }),
        tables,
    })
}

fn run_entropy(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let a1 = r.f64("triangle", "a1", 0.5);
    let a2 = r.f64("triangle", "a2", 1.5);
    let gamma1 = r.f64("triangle", "gamma1", 4.0);
    let n_walkers = r.u64("walk", "n_walkers", 20_000);
    let bins = r.usize("walk", "bins_per_edge", WosOptions::default().bins_per_edge);
    let spec = r.quadrature(&QuadratureSpec {
        n_theta: 6,
        n_phi: 8,
        n_radial: 6,
        refine_steps: 0,
        ..QuadratureSpec::default()
    });
    r.finish()?;

    let f = ScalarField::new(|x: &Point3| if x.norm_sq() < 1.0 { 1.0 } else { 0.0 }, None);
    let t = TriangleDomain::new(a1, a2, gamma1)?;
    let (dirs, weights) = sphere_grid(4, 8);
    let norm_sq_at = |k: Complex64| -> Result<f64> {
        let mut acc = 0.0;
        for (d, w) in dirs.iter().zip(&weights) {
            acc += w * free_amplitude(&f, k, d, &spec)?.norm_sqr();
        }
        Ok(acc)
    };
    let k0 = pick_k0(&f, &t, &spec)?;
    let nu_at_k0 = norm_sq_at(k0)?.sqrt().ln();
    let opts = WosOptions {
        bins_per_edge: bins,
        ..WosOptions::default()
    };
    let omega = harmonic_measure(&t, k0, n_walkers, cfg.seed, &opts)?;
    let cert = entropy_certificate(
        &t,
        &omega,
        |z| Ok(norm_sq_at(z)?.sqrt().ln()),
        |k| Ok(k / std::f64::consts::PI * norm_sq_at(Complex64::new(k, 0.0))?),
        nu_at_k0,
        0.0,
        f64::INFINITY,
    )?;

    let mut measure = CsvTable::new(&["edge", "bin", "mass", "error", "nu"]);
    for (i, (&m, &e)) in omega.masses.iter().zip(&omega.errors).enumerate() {
        measure.push(vec![
            (i / bins) as f64,
            (i % bins) as f64,
            m,
            e,
            cert.nu_boundary[i],
        ]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("measure".to_string(), measure);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "a1": a1, "a2": a2, "gamma1": gamma1,
            "n_walkers": n_walkers, "bins_per_edge": bins,
            "k0": [k0.re, k0.im],
        }),
        diagnostics: json!({
            "mean_value_gap": cert.mean_value_gap,
            "entropy_integral": cert.entropy_integral,
            "nu_at_k0": cert.nu_at_k0,
            "total_mass": omega.total_mass(),
            "edge_masses": [omega.edge_mass(0), omega.edge_mass(1), omega.edge_mass(2)],
        }),
        tables,
    })
}

fn run_eikonal(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let k = r.f64("eikonal", "k", 10.0);
    let n_iter = r.usize("eikonal", "n_iter", 2);
    let amp = r.f64("eikonal", "amp", 150.0);
    let alpha = r.f64("eikonal", "alpha", 0.15);
    let r_min = r.f64("eikonal", "r_min", 1.25);
    let r_max = r.f64("eikonal", "r_max", 6.0);
    let n_radii = r.usize("eikonal", "n_radii", 5);
    let with_residual = r.bool("eikonal", "residual", false);
    let spec = r.quadrature(&eikonal_spec());
    r.finish()?;

    let v = ScalarField::gaussian(amp, alpha);
    let dirs = directions_axes();
    let radii = log_radii(r_min, r_max, n_radii);
    let mu = picard_iterate_mu(&v, k, n_iter, &dirs, &radii, &spec)?;
    let residual = if with_residual {
        Some(eikonal_residual(&mu, &v, k, &spec)?)
    } else {
        None
    };

    let mut table = CsvTable::new(&["d1", "d2", "d3", "r", "mu", "w"]);
    for (di, d) in mu.directions.iter().enumerate() {
        for (ri, &rad) in mu.radii.iter().enumerate() {
            let idx = di * mu.radii.len() + ri;
            table.push(vec![d[0], d[1], d[2], rad, mu.mu[idx], mu.w_source[idx]]);
        }
    }
    let mut tables = BTreeMap::new();
    tables.insert("mu".to_string(), table);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "k": k, "amp": amp, "alpha": alpha,
            "radii": radii, "n_iter": n_iter, "fd_step": mu.fd_step,
        }),
        diagnostics: json!({
            "iteration": mu.iteration,
            "diff_norms": mu.diff_norms,
            "hj_residual": residual,
        }),
        tables,
    })
}

fn run_helmholtz(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let amp = r.f64("helmholtz", "amp", 1.0);
    let alpha = r.f64("helmholtz", "alpha", 1.0);
    let split_radius = r.f64("helmholtz", "split_radius", 1.0);
    let h = r.f64("helmholtz", "fd_step", 0.05);
    let radii = r.f64_list("helmholtz", "radii", &[0.6, 1.0, 1.6]);
    let spec = r.quadrature(&QuadratureSpec {
        tol: 1e-7,
        refine_steps: 0,
        ..QuadratureSpec::default()
    });
    r.finish()?;

    let v = ScalarField::gaussian(amp, alpha);
    let mut table = CsvTable::new(&[
        "x1", "x2", "x3", "q1", "q2", "q3", "div_fd", "v", "rel_err", "tail",
    ]);
    let mut max_rel = 0.0f64;
    let v_scale = amp.abs().max(1e-300);
    for &rad in &radii {
        let x = Point3::new(rad, 0.0, 0.0);
        let q = helmholtz_reconstruct(&v, &x, split_radius, &spec)?;
        let div = helmholtz_divergence_fd(&v, &x, split_radius, h, &spec)?;
        let want = v.at(&x);
        let rel = (div - want).abs() / v_scale;
        max_rel = max_rel.max(rel);
        table.push(vec![
            x.x1,
            x.x2,
            x.x3,
            q.q[0],
            q.q[1],
            q.q[2],
            div,
            want,
            rel,
            q.tail_estimate,
        ]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("helmholtz".to_string(), table);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "amp": amp, "alpha": alpha,
            "split_radius": split_radius, "fd_step": h, "radii": radii,
        }),
        diagnostics: json!({ "max_rel_err": max_rel }),
        tables,
    })
}

fn run_anderson(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let eps = r.f64("anderson", "eps", 0.25);
    let max_radius = r.f64("anderson", "max_radius", 24.0);
    let n_realizations = r.usize("anderson", "n_realizations", 60);
    let n_directions = r.usize("anderson", "n_directions", 3);
    let radii = r.f64_list("anderson", "radii", &[4.0, 8.0, 16.0]);
    let spec = r.quadrature(&QuadratureSpec::default().fast());
    r.finish()?;

    let pot = AndersonPotentialSpec::lattice(eps, max_radius, SignLaw::Rademacher, cfg.seed)?;
    let stats = crate::verify::anderson_decay_stats(
        &pot,
        n_realizations,
        &radii,
        n_directions,
        cfg.seed,
        &spec,
    )?;

    let mut decay = CsvTable::new(&["r", "mean_sq", "stderr"]);
    for ((&rad, &m), &e) in radii.iter().zip(&stats.mean_sq).zip(&stats.stderr_sq) {
        decay.push(vec![rad, m, e]);
    }
    let (slope, intercept) = match stats.decay_exponent {
        Some(exp) => {
            // Plot guide line in plain log-log coordinates through the
            // first point (the fit itself uses ln(1+r)).
            let i = stats.mean_sq[0].max(1e-300).ln() + exp * (1.0 + radii[0]).ln();
            (-exp, i)
        }
        None => (0.0, 0.0),
    };
    let mut tables = BTreeMap::new();
    tables.insert("decay".to_string(), decay);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed, "eps": eps, "max_radius": max_radius,
            "n_realizations": n_realizations, "n_directions": n_directions,
            "radii": radii, "n_centers": pot.centers.len(),
        }),
        diagnostics: json!({
            "decay_exponent": stats.decay_exponent,
            "decay_r_squared": stats.decay_r_squared,
            "envelope_exponent": stats.envelope_exponent,
            "mean_over_sigma_max": stats.mean_over_sigma_max,
            "grad_shape_ratio_max": stats.grad_shape_ratio_max,
            "envelope_weaker_flag": stats.envelope_weaker_flag,
            "plot_slope": slope, "plot_intercept": intercept,
        }),
        tables,
    })
}

fn run_verify_lemmas(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let (d_def, rho_def, x_def) = default_lemma_grids();
    let deltas = r.f64_list("lemma1", "deltas", &d_def);
    let rhos = r.f64_list("lemma1", "rhos", &rho_def);
    let x_norms = r.f64_list("lemma1", "x_norms", &x_def);
    let deltas2 = r.f64_list("lemma2", "deltas", &[0.35, 0.5, 0.7]);
    let x_norms2 = r.f64_list("lemma2", "x_norms", &[4.0, 8.0, 16.0]);
    let spec = r.quadrature(&QuadratureSpec::default().fast());
    r.finish()?;

    let sweep1 = lemma1_sweep(&deltas, &rhos, &x_norms, &spec)?;
    let sweep2 = lemma2_sweep(&deltas2, &x_norms2)?;

    let mut t1 = CsvTable::new(&[
        "delta", "rho", "x", "lhs0", "lhs1", "lhs2", "shape0", "shape1", "shape2",
    ]);
    for (i, &(d, rho, x)) in sweep1.triples.iter().enumerate() {
        t1.push(vec![
            d,
            rho,
            x,
            sweep1.lhs[0][i],
            sweep1.lhs[1][i],
            sweep1.lhs[2][i],
            sweep1.shapes[0][i],
            sweep1.shapes[1][i],
            sweep1.shapes[2][i],
        ]);
    }
    let mut t2 = CsvTable::new(&["delta", "x", "lhs", "shape"]);
    for (i, &(d, _, x)) in sweep2.triples.iter().enumerate() {
        t2.push(vec![d, x, sweep2.lhs[0][i], sweep2.shapes[0][i]]);
    }
    let mut tables = BTreeMap::new();
    tables.insert("lemma1".to_string(), t1);
    tables.insert("lemma2".to_string(), t2);
    Ok(Pipe {
        provenance: json!({
            "seed": cfg.seed,
            "lemma1": { "deltas": deltas, "rhos": rhos, "x_norms": x_norms },
            "lemma2": { "deltas": deltas2, "x_norms": x_norms2 },
        }),
        diagnostics: json!({
            "lemma1_constants": sweep1.constants,
            "lemma1_ratio_spread": sweep1.ratio_spread,
            "lemma1_pass": sweep1.pass,
            "lemma2_gamma": sweep2.gamma,
            "lemma2_r_squared": sweep2.r_squared,
            "lemma2_pass": sweep2.pass,
        }),
        tables,
    })
}

fn run_dirac_check(cfg: &ExperimentConfig) -> Result<Pipe> {
    let mut r = KeyReader::new(&cfg.doc);
    let h = r.f64("dirac", "grid_step", 0.2);
    let v = r.field("gradient_gaussian");
    r.finish()?;

    let gauss_f = |p: &Point3| (-p.norm_sq()).exp();
    let gauss_lap = |p: &Point3| (4.0 * p.norm_sq() - 6.0) * (-p.norm_sq()).exp();
    let coarse = dirac_factorization_check(&v, h, &gauss_f, &gauss_lap)?;
    let fine = dirac_factorization_check(&v, h / 2.0, &gauss_f, &gauss_lap)?;

    let mut table = CsvTable::new(&["h", "max_deviation", "max_offdiagonal"]);
    table.push(vec![h, coarse.max_deviation, coarse.max_offdiagonal]);
    table.push(vec![h / 2.0, fine.max_deviation, fine.max_offdiagonal]);
    let dev_factor = coarse.max_deviation / fine.max_deviation.max(1e-300);
    let off_factor = if fine.max_offdiagonal > 1e-13 {
        Some(coarse.max_offdiagonal / fine.max_offdiagonal)
    } else {
        None
    };
    let mut tables = BTreeMap::new();
    tables.insert("dirac".to_string(), table);
    Ok(Pipe {
        provenance: json!({ "seed": cfg.seed, "grid_step": h }),
        diagnostics: json!({
            "deviation_factor": dev_factor,
            "offdiagonal_factor": off_factor,
            "unitary_defect": coarse.unitary_defect,
            "second_order": (3.4..=4.6).contains(&dev_factor),
        }),
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(command: &str, text: &str, out: &Path) -> ExperimentConfig {
        ExperimentConfig::build(command, Some(text), Some(11), out, true).unwrap()
    }

    #[test]
    fn digest_covers_command_and_seed() {
        let out = PathBuf::from("unused");
        let a = cfg("green", "", &out);
        let b = cfg("resolvent", "", &out);
        assert_ne!(a.digest(), b.digest());
        let c = ExperimentConfig::build("green", Some(""), Some(12), &out, true).unwrap();
        assert_ne!(a.digest(), c.digest());
        // Output directory is not part of the digest.
        let d = ExperimentConfig::build("green", Some(""), Some(11), Path::new("x"), true).unwrap();
        assert_eq!(a.digest(), d.digest());
    }

    #[test]
    fn unknown_command_rejected() {
        let err = ExperimentConfig::build("nope", None, None, Path::new("x"), true).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn validation_reports_every_bad_key() {
        let out = PathBuf::from("unused");
        let c = cfg(
            "green",
            "[wavenumber]\ntau = abc\ndelta = xyz\n[green]\nn_pairs = many\n",
            &out,
        );
        let err = run_pipeline(&c).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tau"), "{msg}");
        assert!(msg.contains("delta"), "{msg}");
        assert!(msg.contains("n_pairs"), "{msg}");
    }

    #[test]
    fn exit_codes_map_error_families() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Divergence("x".into())), 3);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 4);
        assert_eq!(exit_code(&Error::InsufficientData("x".into())), 3);
    }

    #[test]
    fn green_free_case_runs_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::build(
            "green",
            Some("[green]\nn_pairs = 3\n"),
            Some(5),
            dir.path(),
            false,
        )
        .unwrap();
        let first = execute(&c).unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.diagnostics["converged"], Value::Bool(true));
        assert_eq!(first.tables["green"].rows.len(), 3);
        let second = execute(&c).unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.config_digest, first.config_digest);
        assert_eq!(
            second.tables["green"].to_csv_string(),
            first.tables["green"].to_csv_string()
        );
        write_outputs(&first, dir.path()).unwrap();
        assert!(dir.path().join("green.json").exists());
        assert!(dir.path().join("green_green.csv").exists());
    }

    #[test]
    fn dirac_check_pipeline_is_second_order() {
        let c = cfg("dirac-check", "", Path::new("unused"));
        let pipe = run_pipeline(&c).unwrap();
        let f = pipe.diagnostics["deviation_factor"].as_f64().unwrap();
        assert!((3.4..=4.6).contains(&f), "factor {f}");
        assert_eq!(pipe.diagnostics["second_order"], Value::Bool(true));
    }
}
