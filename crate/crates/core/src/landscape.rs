//! Energy-landscape diagnostics around a warm start: variance of `E` over
//! uniform hypercube samples, the variance-maximizing half-width `r_max`, and
//! trends of `r_max` with system size or depth.

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::Method;
use crate::optimize::Evaluator;

/// Largest tolerated fraction of failed samples at one `r`.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::Config(format!("log grid needs 0 < lo < hi and n >= 2 (got {lo}, {hi}, {n})")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect())
}

/// Default grid: 24 log-spaced half-widths in `[1e-3, π]`.
pub fn default_r_grid() -> Vec<f64> {
    log_grid(1e-3, std::f64::consts::PI, 24).unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub r_grid: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Worker threads for sampling (results do not depend on it).
    pub threads: usize,
    /// Also record the mean squared gradient norm per `r`.
    pub gradients: bool,
}

impl ScanConfig {
    pub fn new(r_grid: Vec<f64>, n_samples: usize, seed: u64) -> Self {
        Self { r_grid, n_samples, seed, threads: 1, gradients: false }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("variance scan needs n_samples >= 2".into()));
        }
        if self.r_grid.is_empty() {
            return Err(Error::Config("variance scan needs a nonempty r grid".into()));
        }
        if self.r_grid.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("r grid entries must be finite and >= 0".into()));
        }
        if self.r_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("r grid must be strictly ascending".into()));
        }
        Ok(())
    }
}

/// Results at one half-width `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub r: f64,
    /// Sample energies in draw order; failed draws are absent.
    pub energies: Vec<f64>,
    pub n_valid: usize,
    /// Unbiased sample variance (`NaN` if the point is invalid).
    pub var: f64,
    /// Jackknife standard error of `var`.
    pub stderr: f64,
    /// Mean `|∇E|²` when gradients were requested.
    pub grad_sq_mean: Option<f64>,
    /// False when more than [`MAX_FAILURE_RATE`] of the draws failed.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorDescriptor {
    pub method: Method,
    pub chi: usize,
    pub regauge: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceScan {
    pub theta_opt: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub evaluator: EvaluatorDescriptor,
    pub points: Vec<ScanPoint>,
}

/// Deterministic generator for sample `sample` at grid index `r_index`:
/// one ChaCha stream per `(r_index, sample)` pair, so the drawn parameters do
/// not depend on evaluation order or thread count.
fn sample_rng(seed: u64, r_index: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((r_index as u64) << 32) | sample as u64);
    rng
}

/// Parameter vector for one draw: each component uniform in `[θ_k - r, θ_k + r]`.
pub fn hypercube_sample(theta: &[f64], r: f64, seed: u64, r_index: usize, sample: usize) -> Vec<f64> {
    let mut rng = sample_rng(seed, r_index, sample);
    theta
        .iter()
        .map(|t| if r > 0.0 { t + rng.random_range(-r..=r) } else { *t })
        .collect()
}

/// Unbiased variance and its jackknife standard error.
pub fn variance_with_jackknife(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 2 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = pairwise_sum(x) / nf;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    let s = pairwise_sum(&sq);
    let var = s / (nf - 1.0);
    if n < 3 {
        return (var, f64::NAN);
    }
    // Leave-one-out variances: (S - d_i^2 n/(n-1)) / (n-2).
    let loo: Vec<f64> = d.iter().map(|di| (s - di * di * nf / (nf - 1.0)) / (nf - 2.0)).collect();
    let loo_mean = pairwise_sum(&loo) / nf;
    let dev: Vec<f64> = loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)).collect();
    let se = ((nf - 1.0) / nf * pairwise_sum(&dev)).sqrt();
    (var, se)
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

type Sample = std::result::Result<(f64, Option<f64>), String>;

fn evaluate_samples(ev: &Evaluator, theta: &[f64], r: f64, r_index: usize, cfg: &ScanConfig) -> Vec<Sample> {
    let one = |k: usize| -> Sample {
        let t = hypercube_sample(theta, r, cfg.seed, r_index, k);
        if cfg.gradients {
            let (e, g) = ev.energy_and_gradient(&t).map_err(|e| e.to_string())?;
            Ok((e, Some(g.iter().map(|x| x * x).sum())))
        } else {
            Ok((ev.energy(&t).map_err(|e| e.to_string())?, None))
        }
    };
    let threads = cfg.threads.max(1).min(cfg.n_samples);
    if threads == 1 {
        return (0..cfg.n_samples).map(one).collect();
    }
    let mut out: Vec<Option<Sample>> = vec![None; cfg.n_samples];
    let chunk = cfg.n_samples.div_ceil(threads);
    std::thread::scope(|scope| {
        for (c, slot) in out.chunks_mut(chunk).enumerate() {
            let one = &one;
            scope.spawn(move || {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s = Some(one(c * chunk + i));
                }
            });
        }
    });
    out.into_iter().map(|s| s.unwrap()).collect()
}

/// Samples `E` on hypercubes of half-width `r` around `theta_opt` for every
/// `r` in the grid.
pub fn variance_scan(theta_opt: &[f64], ev: &Evaluator, cfg: &ScanConfig) -> Result<VarianceScan> {
    cfg.validate()?;
    ev.spec().check_len(theta_opt.len())?;
    let mut points = Vec::with_capacity(cfg.r_grid.len());
    for (ri, &r) in cfg.r_grid.iter().enumerate() {
        let samples = evaluate_samples(ev, theta_opt, r, ri, cfg);
        let mut energies = Vec::with_capacity(samples.len());
        let mut grads = Vec::new();
        let mut failures = 0;
        for (k, s) in samples.into_iter().enumerate() {
            match s {
                Ok((e, g)) => {
                    energies.push(e);
                    grads.extend(g);
                }
                Err(msg) => {
                    failures += 1;
                    warn!("r={r:.4e} sample {k} failed: {msg}");
                }
            }
        }
        let valid = (failures as f64) <= MAX_FAILURE_RATE * cfg.n_samples as f64 && energies.len() >= 2;
        let (var, stderr) = if valid { variance_with_jackknife(&energies) } else { (f64::NAN, f64::NAN) };
        let grad_sq_mean = cfg.gradients.then(|| pairwise_sum(&grads) / grads.len().max(1) as f64);
        info!("r={r:.4e}: var={var:.4e} ± {stderr:.1e} ({} valid)", energies.len());
        points.push(ScanPoint { r, n_valid: energies.len(), energies, var, stderr, grad_sq_mean, valid });
    }
    let c = ev.config();
    Ok(VarianceScan {
        theta_opt: theta_opt.to_vec(),
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        evaluator: EvaluatorDescriptor { method: c.method, chi: c.chi, regauge: c.regauge },
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmaxResult {
    pub r_max: f64,
    pub var_at_rmax: f64,
    pub index: usize,
    /// Grid spacing around `r_max`, i.e. the resolution of the estimate.
    pub resolution: String,
    /// Sub-grid peak location: vertex of a least-squares parabola in `ln r`
    /// through the maximum and up to two valid neighbours on each side. Equals
    /// `r_max` when the maximum sits on the grid edge or the fit is not concave.
    pub r_fit: f64,
}

/// Grid point of largest variance; ties go to the smaller `r`.
pub fn find_rmax(scan: &VarianceScan) -> Result<RmaxResult> {
    let pts = &scan.points;
    if pts.len() < 3 {
        return Err(Error::Config("find_rmax needs at least 3 grid points".into()));
    }
    let mut best: Option<usize> = None;
    for (k, p) in pts.iter().enumerate() {
        if p.valid && p.var.is_finite() && best.is_none_or(|b| p.var > pts[b].var) {
            best = Some(k);
        }
    }
    let k = best.ok_or_else(|| Error::Numerical("every grid point of the scan is invalid".into()))?;
    let lo = if k > 0 { pts[k - 1].r } else { pts[k].r };
    let hi = if k + 1 < pts.len() { pts[k + 1].r } else { pts[k].r };
    Ok(RmaxResult {
        r_max: pts[k].r,
        var_at_rmax: pts[k].var,
        index: k,
        resolution: format!("neighbouring grid points {lo:.4e} .. {hi:.4e}"),
        r_fit: peak_fit(pts, k).unwrap_or(pts[k].r),
    })
}

/// Vertex of the least-squares parabola `var ≈ c0 + c1 u + c2 u²` with
/// `u = ln(r / r_k)` over the window around index `k`, clamped to the window.
fn peak_fit(pts: &[ScanPoint], k: usize) -> Option<f64> {
    if k == 0 || k + 1 == pts.len() {
        return None;
    }
    let window = &pts[k.saturating_sub(2)..(k + 3).min(pts.len())];
    let (u, v): (Vec<f64>, Vec<f64>) = window
        .iter()
        .filter(|p| p.valid && p.var.is_finite() && p.r > 0.0)
        .map(|p| ((p.r / pts[k].r).ln(), p.var))
        .unzip();
    if u.len() < 3 {
        return None;
    }
    // Normal equations in the monomials 1, u, u².
    let m = |e: i32| u.iter().map(|x| x.powi(e)).sum::<f64>();
    let b = |e: i32| u.iter().zip(&v).map(|(x, y)| x.powi(e) * y).sum::<f64>();
    let a = [[m(0), m(1), m(2)], [m(1), m(2), m(3)], [m(2), m(3), m(4)]];
    let rhs = [b(0), b(1), b(2)];
    let det3 = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let det = det3(&a);
    if det.abs() < 1e-300 {
        return None;
    }
    let coef = |col: usize| {
        let mut t = a;
        for (row, r) in t.iter_mut().zip(rhs) {
            row[col] = r;
        }
        det3(&t) / det
    };
    let (c1, c2) = (coef(1), coef(2));
    if c2.is_nan() || c2 >= 0.0 {
        return None;
    }
    let (lo, hi) = (u.iter().cloned().fold(f64::INFINITY, f64::min), u.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    Some(pts[k].r * (-c1 / (2.0 * c2)).clamp(lo, hi).exp())
}

/// Flags grid points where scans at `chi` and `2 chi` disagree by more than 10%
/// in variance; such regions are not bond-dimension converged.
pub fn unconverged_points(scan_chi: &VarianceScan, scan_2chi: &VarianceScan) -> Result<Vec<bool>> {
    if scan_chi.points.len() != scan_2chi.points.len() {
        return Err(Error::Shape("scans have different grids".into()));
    }
    Ok(scan_chi
        .points
        .iter()
        .zip(&scan_2chi.points)
        .map(|(a, b)| !(a.valid && b.valid) || (a.var - b.var).abs() > 0.1 * b.var.abs())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyAxis {
    /// `x` is the number of sites; linear fit `r_max = a + b N`.
    SystemSize,
    /// `x` is the total depth; log-log fit `r_max ∝ D^slope`.
    Depth,
}

/// One instance of an `r_max` study.
pub struct StudyInstance<'a> {
    pub x: f64,
    pub theta_opt: Vec<f64>,
    pub evaluator: &'a Evaluator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub x: f64,
    pub r_max: f64,
    pub var_at_rmax: f64,
    /// Sub-grid peak estimate; the trend is fitted to this.
    pub r_fit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub axis: StudyAxis,
    /// Linear: `r_max = intercept + slope x`. Depth: `ln r_max = intercept + slope ln D`.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fitted relation.
    pub rms_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub fit: TrendFit,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Config("linear fit needs at least 2 paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("linear fit with identical abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum::<f64>() / n).sqrt();
    Ok((a, b, rms))
}

pub fn fit_trend(axis: StudyAxis, rows: &[StudyRow]) -> Result<TrendFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = match axis {
        StudyAxis::SystemSize => rows.iter().map(|r| (r.x, r.r_fit)).unzip(),
        StudyAxis::Depth => rows.iter().map(|r| (r.x.ln(), r.r_fit.ln())).unzip(),
    };
    let (intercept, slope, rms_residual) = linear_fit(&x, &y)?;
    Ok(TrendFit { axis, slope, intercept, rms_residual })
}

/// Runs a variance scan and `find_rmax` per instance and fits the trend.
pub fn rmax_study(axis: StudyAxis, instances: &[StudyInstance<'_>], cfg: &ScanConfig) -> Result<StudyResult> {
    if instances.len() < 3 {
        return Err(Error::Config("an r_max study needs at least 3 instances".into()));
    }
    let mut rows = Vec::with_capacity(instances.len());
    for inst in instances {
        let scan = variance_scan(&inst.theta_opt, inst.evaluator, cfg)?;
        let rm = find_rmax(&scan)?;
        info!("x={}: r_max={:.4e} (fitted {:.4e})", inst.x, rm.r_max, rm.r_fit);
        rows.push(StudyRow { x: inst.x, r_max: rm.r_max, var_at_rmax: rm.var_at_rmax, r_fit: rm.r_fit });
    }
    let fit = fit_trend(axis, &rows)?;
    Ok(StudyResult { rows, fit })
}
