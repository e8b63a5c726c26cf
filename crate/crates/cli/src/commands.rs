//! Subcommand pipelines: config resolution, module orchestration and artifact
//! persistence.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use pepsvqe::circuit::{warm_start_extend, Checkpoint, CircuitSpec};
use pepsvqe::hamiltonian::relative_error;
use pepsvqe::landscape::{find_rmax, hypercube_sample, variance_scan, RmaxResult, ScanConfig, VarianceScan};
use pepsvqe::lattice::{Lattice, LatticeKind};
use pepsvqe::optimize::{minimize, optimize_sweep, EvalConfig, Evaluator, InitPolicy, SweepConfig};
use pepsvqe::peps::{imaginary_time_evolve, IteConfig};
use pepsvqe::scaling::{fit_power_law, scaling_benchmark, BenchmarkConfig, Selection, BETA_QC};
use pepsvqe::statevector::{exact_ground_energy, GROUND_STATE_CAP};
use pepsvqe::tensor::set_kernel_threads;

use crate::cli::{CommonArgs, DiagnoseArgs, IteArgs, OptimizeArgs, ScalingArgs, WarmArgs};
use crate::config::{InitChoice, RunConfig};
use crate::error::{CliError, CliResult};
use crate::plot::{emit_plot, PlotKind, PlotSpec};

/// Every circuit starts from `|0...0>`.
const LOCAL: [f64; 2] = [1.0, 0.0];

/// Samples per grid point in `--fast` mode.
pub const FAST_SAMPLES: usize = 200;

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Config resolution: CLI > config file > defaults.
// ---------------------------------------------------------------------------

/// Reads a TOML config, or the `config` object of a persisted `metadata.json`.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let mut v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| cfg_err(format!("invalid JSON config: {e}")))?;
        if let Some(inner) = v.get_mut("config") {
            v = inner.take();
        }
        serde_json::from_value(v).map_err(|e| cfg_err(format!("invalid config: {e}")))
    } else {
        RunConfig::load(path)
    }
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn apply_common(c: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.lattice {
        cfg.lattice = v.clone();
    }
    if let Some(v) = c.g {
        cfg.model.g = Some(v);
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.output_dir = Some(v.display().to_string());
    }
    if let Some(v) = c.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = c.chi {
        cfg.tn.chi = v;
    }
    if let Some(v) = &c.chi_e_rule {
        cfg.tn.chi_e_rule = v.clone();
    }
    if let Some(v) = &c.method {
        cfg.tn.method = v.parse()?;
    }
    if let Some(v) = c.regauge {
        cfg.tn.regauge = v;
    }
    Ok(cfg)
}

fn apply_warm(cfg: &mut RunConfig, w: &WarmArgs) {
    if let Some(p) = &w.warm {
        cfg.optimizer.warm = Some(absolute(p));
    }
    if let Some(d) = w.warm_depth {
        cfg.circuit.warm_depth = d;
    }
    if let Some(d) = w.depth_total {
        cfg.circuit.depth = d;
    }
}

/// Makes the config consistent with its warm-start checkpoint: the
/// checkpoint fixes `D*` and the lattice. An explicit conflicting
/// `--lattice` is an error.
fn reconcile_checkpoint(cfg: &mut RunConfig, lattice_flag: bool) -> CliResult<()> {
    let Some(path) = cfg.optimizer.warm.clone() else { return Ok(()) };
    let ck = Checkpoint::load(Path::new(&path)).map_err(|e| cfg_err(format!("cannot load checkpoint {path}: {e}")))?;
    let current: Option<LatticeKind> = cfg.lattice.parse().ok();
    if current != Some(ck.lattice) {
        if lattice_flag {
            return Err(cfg_err(format!("--lattice {} conflicts with checkpoint lattice {}", cfg.lattice, ck.lattice)));
        }
        cfg.lattice = ck.lattice.to_string();
    }
    cfg.circuit.warm_depth = ck.depth;
    Ok(())
}

fn finish(mut cfg: RunConfig, subcommand: &str) -> CliResult<(RunConfig, PathBuf)> {
    cfg.validate()?;
    let out = cfg.output_dir(subcommand);
    cfg.output_dir = Some(out.display().to_string());
    Ok((cfg, out))
}

pub fn resolve_optimize(a: &OptimizeArgs) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = apply_common(&a.common)?;
    if let Some(d) = a.depth {
        cfg.circuit.depth = d;
    }
    if let Some(l) = &a.depth_list {
        cfg.circuit.depth_list = l.clone();
    }
    if let Some(v) = a.max_iters {
        cfg.optimizer.max_iters = v;
    }
    if let Some(v) = a.gtol {
        cfg.optimizer.gtol = v;
    }
    if let Some(v) = a.ftol {
        cfg.optimizer.ftol = v;
    }
    if let Some(init) = &a.init {
        match init.split_once(':') {
            Some(("warm", path)) => cfg.optimizer.warm = Some(absolute(Path::new(path))),
            _ => {
                cfg.optimizer.init = match init.as_str() {
                    "zeros" => InitChoice::Zeros,
                    "small-random" => InitChoice::SmallRandom,
                    "uniform-pi" => InitChoice::UniformPi,
                    _ => {
                        return Err(cfg_err(format!(
                            "unknown init `{init}` (zeros|small-random|uniform-pi|warm:PATH)"
                        )))
                    }
                };
                cfg.optimizer.warm = None;
            }
        }
    }
    reconcile_checkpoint(&mut cfg, a.common.lattice.is_some())?;
    finish(cfg, "optimize")
}

/// Parses `log:LO:HI:N` or a comma-separated list.
pub fn parse_r_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || cfg_err(format!("invalid r grid `{spec}` (log:LO:HI:N or a comma list)"));
    if let Some(rest) = spec.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        let n: usize = n.parse().map_err(|_| bad())?;
        pepsvqe::landscape::log_grid(lo, hi, n).map_err(|e| cfg_err(e.to_string()))
    } else {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
    }
}

pub fn resolve_diagnose(a: &DiagnoseArgs) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = apply_common(&a.common)?;
    apply_warm(&mut cfg, &a.warm);
    if let Some(g) = &a.r_grid {
        cfg.diagnostics.r_grid = Some(parse_r_grid(g)?);
    }
    if a.fast {
        cfg.diagnostics.n_samples = FAST_SAMPLES;
    }
    if let Some(n) = a.samples {
        cfg.diagnostics.n_samples = n;
    }
    if let Some(e) = &a.evaluator {
        cfg.diagnostics.evaluator = e.parse()?;
    }
    if a.gradients {
        cfg.diagnostics.gradients = true;
    }
    reconcile_checkpoint(&mut cfg, a.common.lattice.is_some())?;
    finish(cfg, "diagnose")
}

pub fn resolve_scaling(a: &ScalingArgs) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = apply_common(&a.common)?;
    apply_warm(&mut cfg, &a.warm);
    if let Some(r) = a.rmax {
        cfg.scaling.r_max = Some(r);
    }
    if let Some(p) = &a.rmax_from {
        let text = std::fs::read_to_string(p).map_err(|e| cfg_err(format!("cannot read {}: {e}", p.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| cfg_err(format!("invalid r_max JSON: {e}")))?;
        let r = v.get("r_max").and_then(|r| r.as_f64()).ok_or_else(|| cfg_err("r_max JSON lacks a numeric `r_max`"))?;
        cfg.scaling.r_max = Some(r);
    }
    if let Some(n) = a.points {
        cfg.scaling.n_points = n;
    }
    if let Some(l) = &a.chi_list {
        cfg.scaling.chi_list = l.clone();
    }
    if let Some(r) = &a.reference {
        cfg.scaling.reference = r.clone();
    }
    if cfg.threads.is_some_and(|t| t != 1) {
        warn!("timing mode: forcing a single thread");
    }
    cfg.threads = Some(1);
    reconcile_checkpoint(&mut cfg, a.common.lattice.is_some())?;
    finish(cfg, "scaling")
}

pub fn resolve_ite(a: &IteArgs) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = apply_common(&a.common)?;
    if let Some(s) = &a.dtau_schedule {
        cfg.ite.dtau_schedule = s.clone();
    }
    if let Some(n) = a.max_sweeps {
        cfg.ite.max_sweeps = n;
    }
    if let Some(t) = a.energy_tol {
        cfg.ite.energy_tol = t;
    }
    finish(cfg, "ite-reference")
}

pub fn resolve_validate(a: &CommonArgs) -> CliResult<(RunConfig, PathBuf)> {
    finish(apply_common(a)?, "validate")
}

// ---------------------------------------------------------------------------
// Persistence helpers.
// ---------------------------------------------------------------------------

/// Writes `config.toml` (the resolved config) and `metadata.json`.
pub fn persist(cfg: &RunConfig, out: &Path, subcommand: &str) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let meta = json!({
        "software": "pepsvqe",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "threads": cfg.threads(),
        "config": cfg,
    });
    std::fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn plot(csv: &Path, kind: PlotKind, x: &str, ys: &[&str], title: &str, sqrt_baseline: bool, out: &Path) {
    let spec = PlotSpec { kind, x, ys, title, sqrt_baseline };
    if let Err(e) = emit_plot(csv, &spec, out) {
        warn!("plot {} skipped: {e}", out.display());
    }
}

fn ite_config(cfg: &RunConfig, lat: &Lattice) -> CliResult<IteConfig> {
    Ok(IteConfig {
        dtau_schedule: cfg.ite.dtau_schedule.clone(),
        max_sweeps: cfg.ite.max_sweeps,
        energy_tol: cfg.ite.energy_tol,
        chi_e: lat.is_square().then(|| cfg.chi_e_rule().map(|r| r.chi_e(cfg.tn.chi))).transpose()?,
    })
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TraceCsv {
    depth: usize,
    iter: usize,
    energy: f64,
    grad_norm: f64,
    n_evals: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct SweepCsv<'a> {
    g: f64,
    depth: usize,
    energy: f64,
    e_ref: f64,
    delta_e: f64,
    status: &'a str,
    iterations: usize,
    reference: &'static str,
}

pub fn run_optimize(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let lat = cfg.lattice()?;
    let g = cfg.g()?;
    let depths = if cfg.circuit.depth_list.is_empty() { vec![cfg.circuit.depth] } else { cfg.circuit.depth_list.clone() };
    let init = match &cfg.optimizer.warm {
        Some(p) => {
            let ck = Checkpoint::load(Path::new(p))?;
            InitPolicy::Warm { theta: ck.values, depth: ck.depth }
        }
        None => cfg.init_policy(),
    };
    let eval = cfg.eval_config(cfg.tn.method)?;
    info!("optimize on {} (g={g}, depths {depths:?}, {:?}, chi={})", cfg.lattice, eval.method, eval.chi);
    let sweep = SweepConfig {
        eval,
        lbfgs: cfg.lbfgs(),
        init,
        chain_warm: true,
        local: LOCAL,
        reference_chi: cfg.tn.chi,
        reference_ite: Some(ite_config(cfg, &lat)?),
    };
    let rows = optimize_sweep(&lat, &[g], &depths, cfg.seed, &sweep)?;

    let mut trace_rows = Vec::new();
    let mut last_ok = None;
    for row in &rows {
        let Some(trace) = &row.trace else { continue };
        trace_rows.extend(trace.rows.iter().map(|r| TraceCsv {
            depth: row.depth,
            iter: r.iter,
            energy: r.energy,
            grad_norm: r.grad_norm,
            n_evals: r.n_evals,
            seconds: r.seconds,
        }));
        let spec = CircuitSpec::new(&lat, row.depth)?;
        let ck = Checkpoint::new(&spec, &trace.theta_opt)?;
        ck.save(&out.join(format!("checkpoint_D{}.json", row.depth)))?;
        last_ok = Some(ck);
        info!("D={}: E={:.10} E_ref={:.10} dE={:.3e} ({})", row.depth, row.energy, row.e_ref, row.delta_e, row.status);
        println!("D={} E={:.10} dE={:.3e} status={}", row.depth, row.energy, row.delta_e, row.status);
    }
    write_csv(&out.join("trace.csv"), &trace_rows)?;
    let sweep_rows: Vec<SweepCsv<'_>> = rows
        .iter()
        .map(|r| SweepCsv {
            g: r.g,
            depth: r.depth,
            energy: r.energy,
            e_ref: r.e_ref,
            delta_e: r.delta_e,
            status: &r.status,
            iterations: r.iterations,
            reference: match r.reference {
                pepsvqe::optimize::ReferenceKind::Exact => "exact",
                pepsvqe::optimize::ReferenceKind::Ite => "ite",
            },
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &sweep_rows)?;
    let summary: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "g": r.g, "depth": r.depth, "energy": r.energy, "e_ref": r.e_ref, "delta_e": r.delta_e,
                "status": r.status, "iterations": r.iterations, "reference": r.reference,
            })
        })
        .collect();
    write_json(
        &out.join("result.json"),
        &json!({ "lattice": cfg.lattice, "g": g, "method": eval.method, "chi": eval.chi, "rows": summary }),
    )?;
    if depths.len() == 1 {
        plot(&out.join("trace.csv"), PlotKind::Line, "iter", &["energy"], "L-BFGS energy trace", false, &out.join("trace.svg"));
    } else {
        plot(&out.join("sweep.csv"), PlotKind::Line, "depth", &["delta_e"], "relative energy error vs depth", false, &out.join("sweep.svg"));
    }
    match last_ok {
        Some(ck) => {
            ck.save(&out.join("checkpoint.json"))?;
            Ok(())
        }
        None => Err(CliError::Numerical("every optimization cell failed".into())),
    }
}

// ---------------------------------------------------------------------------
// Warm start shared by diagnose and scaling.
// ---------------------------------------------------------------------------

/// Depth-`D` parameters built from the warm start: either the configured
/// checkpoint or a fresh depth-`D*` optimization (saved as
/// `checkpoint_warm.json`).
fn warm_theta(cfg: &RunConfig, out: &Path) -> CliResult<(Vec<f64>, CircuitSpec)> {
    let lat = cfg.lattice()?;
    let (theta_star, spec_star) = match &cfg.optimizer.warm {
        Some(p) => {
            let ck = Checkpoint::load(Path::new(p))?;
            let spec = ck.spec()?;
            (ck.values, spec)
        }
        None => {
            let spec = CircuitSpec::new(&lat, cfg.circuit.warm_depth)?;
            let ev = Evaluator::new(&spec, cfg.g()?, LOCAL, cfg.eval_config(cfg.tn.method)?)?;
            let init = cfg.init_policy().initial(&spec, cfg.seed)?;
            info!("optimizing warm start D*={}", spec.depth());
            let (theta, trace) = minimize(|t| ev.energy_and_gradient(t), &init, &cfg.lbfgs())?;
            info!("warm start: E={:.10} ({})", trace.final_energy(), trace.status.as_str());
            Checkpoint::new(&spec, &theta)?.save(&out.join("checkpoint_warm.json"))?;
            (theta, spec)
        }
    };
    let spec = CircuitSpec::new(&lat, cfg.circuit.depth)?;
    let theta = warm_start_extend(&theta_star, &spec_star, &spec)?.values;
    Ok((theta, spec))
}

#[derive(Serialize)]
struct ScanCsv {
    r: f64,
    var: f64,
    stderr: f64,
    n_valid: usize,
    grad_sq_mean: Option<f64>,
}

fn scan_and_rmax(cfg: &RunConfig, theta: &[f64], spec: &CircuitSpec, out: &Path) -> CliResult<(VarianceScan, RmaxResult)> {
    let ev = Evaluator::new(spec, cfg.g()?, LOCAL, cfg.diagnostics_eval()?)?;
    let threads = cfg.threads();
    if threads > 1 {
        // Parallelism goes to independent samples, not to the kernels.
        set_kernel_threads(1);
    }
    let scan_cfg = ScanConfig {
        r_grid: cfg.r_grid()?,
        n_samples: cfg.diagnostics.n_samples,
        seed: cfg.seed,
        threads,
        gradients: cfg.diagnostics.gradients,
    };
    info!(
        "variance scan: {} grid points x {} samples, {:?}",
        scan_cfg.r_grid.len(),
        scan_cfg.n_samples,
        ev.config().method
    );
    let scan = variance_scan(theta, &ev, &scan_cfg)?;
    let rows: Vec<ScanCsv> = scan
        .points
        .iter()
        .map(|p| ScanCsv { r: p.r, var: p.var, stderr: p.stderr, n_valid: p.n_valid, grad_sq_mean: p.grad_sq_mean })
        .collect();
    write_csv(&out.join("scan.csv"), &rows)?;
    let rmax = find_rmax(&scan)?;
    let plateau = scan.points.last().map(|p| p.var).unwrap_or(f64::NAN);
    write_json(
        &out.join("rmax.json"),
        &json!({
            "r_max": rmax.r_max,
            "var_at_rmax": rmax.var_at_rmax,
            "index": rmax.index,
            "resolution": rmax.resolution,
            "r_fit": rmax.r_fit,
            "var_at_largest_r": plateau,
            "depth": spec.depth(),
            "warm_depth": cfg.circuit.warm_depth,
            "n_samples": scan.n_samples,
            "seed": scan.seed,
            "evaluator": scan.evaluator,
        }),
    )?;
    plot(&out.join("scan.csv"), PlotKind::LogLog, "r", &["var"], "Var(E) vs hypercube half-width", false, &out.join("scan.svg"));
    info!("r_max = {:.4e} (Var = {:.4e}; {})", rmax.r_max, rmax.var_at_rmax, rmax.resolution);
    Ok((scan, rmax))
}

pub fn run_diagnose(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (theta, spec) = warm_theta(cfg, out)?;
    let (_, rmax) = scan_and_rmax(cfg, &theta, &spec, out)?;
    println!("r_max={:.6e} var={:.6e}", rmax.r_max, rmax.var_at_rmax);
    Ok(())
}

// ---------------------------------------------------------------------------
// scaling
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PointCsv {
    chi: usize,
    chi_e: Option<usize>,
    t: f64,
    eps_mean: f64,
    eps_std: f64,
}

#[derive(Serialize)]
struct SampleCsv {
    chi: usize,
    sample: usize,
    eps: f64,
}

pub fn run_scaling(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (theta, spec) = warm_theta(cfg, out)?;
    let r_max = match cfg.scaling.r_max {
        Some(r) => r,
        None => {
            info!("no r_max configured; running a variance scan");
            scan_and_rmax(cfg, &theta, &spec, out)?.1.r_max
        }
    };
    set_kernel_threads(1);
    let bench = BenchmarkConfig {
        g: cfg.g()?,
        local: LOCAL,
        r_max,
        n_points: cfg.scaling.n_points,
        chi_list: cfg.scaling.chi_list.clone(),
        chi_e_rule: cfg.chi_e_rule()?,
        regauge: cfg.tn.regauge,
        reference: cfg.reference()?,
        seed: cfg.seed,
    };
    info!("scaling benchmark at r_max={r_max:.4e}, chi {:?}", bench.chi_list);
    let points = scaling_benchmark(&theta, &spec, &bench)?;
    let rows: Vec<PointCsv> = points
        .iter()
        .map(|p| PointCsv { chi: p.chi, chi_e: p.chi_e, t: p.t, eps_mean: p.eps_mean, eps_std: p.eps_std })
        .collect();
    write_csv(&out.join("points.csv"), &rows)?;
    let samples: Vec<SampleCsv> = points
        .iter()
        .flat_map(|p| p.eps.iter().enumerate().map(|(k, &eps)| SampleCsv { chi: p.chi, sample: k, eps }))
        .collect();
    write_csv(&out.join("samples.csv"), &samples)?;
    plot(&out.join("points.csv"), PlotKind::LogLog, "t", &["eps_mean"], "energy error vs time per evaluation", true, &out.join("scaling.svg"));
    let fit = fit_power_law(&points, Selection::All)?;
    write_json(
        &out.join("fit.json"),
        &json!({
            "alpha": fit.alpha,
            "beta": fit.beta,
            "residual": fit.residual,
            "n_points": fit.n_points,
            "verdict": fit.verdict,
            "beta_qc": BETA_QC,
            "r_max": r_max,
            "reference": cfg.scaling.reference,
        }),
    )?;
    println!("alpha={:.6e} beta={:.6} verdict={}", fit.alpha, fit.beta, serde_json::to_value(fit.verdict)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// ite-reference
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct IteCsv {
    g: f64,
    chi: usize,
    chi_e: Option<usize>,
    energy: f64,
    energy_su: f64,
    e_exact: Option<f64>,
    delta_e: Option<f64>,
    converged: bool,
}

pub fn run_ite(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let lat = cfg.lattice()?;
    let g = cfg.g()?;
    let ite = ite_config(cfg, &lat)?;
    info!("ITE on {} at g={g}, chi={}, schedule {:?}", cfg.lattice, cfg.tn.chi, ite.dtau_schedule);
    let res = imaginary_time_evolve(&lat, g, cfg.tn.chi, &ite)?;
    let e_exact = if lat.n_sites() <= GROUND_STATE_CAP { Some(exact_ground_energy(&lat, g)?) } else { None };
    let delta_e = e_exact.map(|e| relative_error(res.energy, e)).transpose()?;
    let row = IteCsv {
        g,
        chi: cfg.tn.chi,
        chi_e: ite.chi_e,
        energy: res.energy,
        energy_su: res.energy_su,
        e_exact,
        delta_e,
        converged: res.converged,
    };
    write_csv(&out.join("ite.csv"), std::slice::from_ref(&row))?;
    write_json(
        &out.join("ite.json"),
        &json!({
            "lattice": cfg.lattice, "g": g, "chi": cfg.tn.chi, "chi_e": ite.chi_e,
            "energy": res.energy, "energy_su": res.energy_su, "e_exact": e_exact, "delta_e": delta_e,
            "converged": res.converged, "sweeps": res.sweeps, "dtau_schedule": ite.dtau_schedule,
        }),
    )?;
    println!("E_ite={:.10} converged={}", res.energy, res.converged);
    if let (Some(e), Some(d)) = (e_exact, delta_e) {
        info!("exact E={e:.10}, relative error {d:.3e}");
    }
    if !res.converged {
        return Err(CliError::ReferenceUnconverged(format!(
            "ITE did not reach energy_tol {} within {} sweeps per step",
            ite.energy_tol, ite.max_sweeps
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CheckCsv {
    check: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

/// Self-checks on a fixed 2x3 instance (no truncation; gradient spot-checked
/// on every seventh component) plus the configured
/// lattice's structure and its zero-field ITE energy.
pub fn run_validate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let mut checks = Vec::new();
    let lat = cfg.lattice()?;
    checks.push(CheckCsv { check: "lattice_violations", value: lat.validate().len() as f64, tolerance: 0.0, pass: lat.validate().is_empty() });

    let small = Lattice::square(2, 3)?;
    let spec = CircuitSpec::new(&small, 2)?;
    let g = 1.3;
    let exact = Evaluator::new(&spec, g, LOCAL, EvalConfig::statevector())?;
    // Bonds reach at most 16 at depth 2; chi_E = 256 contracts two rows exactly.
    let peps = Evaluator::new(&spec, g, LOCAL, EvalConfig::boundary(16, 256))?;
    let zeros = vec![0.0; spec.n_params()];
    let theta = hypercube_sample(&zeros, 1.0, cfg.seed, 0, 0);
    let e_sv = exact.energy(&theta)?;
    let (e_tn, grad) = peps.energy_and_gradient(&theta)?;
    let e_err = ((e_tn - e_sv) / e_sv).abs();
    let h = 1e-5;
    let picked: Vec<usize> = (0..theta.len()).step_by(7).collect();
    let fd: Vec<f64> = picked
        .iter()
        .map(|&i| {
            let mut p = theta.clone();
            p[i] += h;
            let mut m = theta.clone();
            m[i] -= h;
            Ok((peps.energy(&p)? - peps.energy(&m)?) / (2.0 * h))
        })
        .collect::<CliResult<_>>()?;
    let scale = grad.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let g_err = picked.iter().zip(&fd).map(|(&i, f)| (grad[i] - f).abs() / scale).fold(0.0, f64::max);
    checks.push(CheckCsv { check: "peps_vs_statevector_rel", value: e_err, tolerance: 1e-7, pass: e_err < 1e-7 });
    checks.push(CheckCsv { check: "gradient_vs_finite_difference_rel", value: g_err, tolerance: 1e-5, pass: g_err < 1e-5 });

    let ite = IteConfig { chi_e: None, ..ite_config(cfg, &lat)? };
    let e0 = imaginary_time_evolve(&lat, 0.0, cfg.tn.chi, &ite)?.energy;
    let d0 = (e0 + lat.n_edges() as f64).abs();
    checks.push(CheckCsv { check: "zero_field_ite_abs", value: d0, tolerance: 1e-12, pass: d0 < 1e-12 });

    write_csv(&out.join("validate.csv"), &checks)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.check).collect();
    for c in &checks {
        println!("{} {} value={:.3e} tol={:.1e}", if c.pass { "PASS" } else { "FAIL" }, c.check, c.value, c.tolerance);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("failed checks: {}", failed.join(", "))))
    }
}

