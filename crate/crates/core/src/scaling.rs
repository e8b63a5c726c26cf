//! Error-versus-cost benchmark inside the trainable region and the power-law
//! fit `ε = α / t^β` compared with the sampling exponent `β_QC = 1/2`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::circuit::CircuitSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::{Method, TfimHamiltonian};
use crate::landscape::hypercube_sample;
use crate::optimize::{EvalConfig, Evaluator};
use crate::statevector::{self, StateVector};

/// Error exponent of shot-noise-limited quantum sampling.
pub const BETA_QC: f64 = 0.5;

/// Boundary bond dimension as a function of `chi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChiERule {
    /// `chi_E = chi^2`.
    Square,
    Fixed(usize),
}

impl ChiERule {
    pub fn chi_e(self, chi: usize) -> usize {
        match self {
            ChiERule::Square => chi * chi,
            ChiERule::Fixed(k) => k,
        }
    }
}

impl fmt::Display for ChiERule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChiERule::Square => write!(f, "square"),
            ChiERule::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl FromStr for ChiERule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "square" {
            return Ok(ChiERule::Square);
        }
        match s.strip_prefix("fixed:").and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k > 0 => Ok(ChiERule::Fixed(k)),
            _ => Err(Error::Config(format!("chi_E rule must be `square` or `fixed:K`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Exact statevector energy of each sampled circuit.
    Statevector,
    /// Energy at the largest `chi`, accepted after a self-consistency check.
    ConvergedTn,
}

impl FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "statevector" => Ok(Reference::Statevector),
            "converged-tn" => Ok(Reference::ConvergedTn),
            _ => Err(Error::Config(format!("reference must be `statevector` or `converged-tn`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub chi: usize,
    /// Boundary bond dimension when boundary-MPS expectations were used.
    pub chi_e: Option<usize>,
    /// Mean wall-clock seconds per energy evaluation (evolution + contraction).
    pub t: f64,
    /// `|E_chi(θ) - E_ref(θ)|` per sampled θ (failed evaluations excluded).
    pub eps: Vec<f64>,
    pub eps_mean: f64,
    /// Sample standard deviation of `eps` (0 for a single sample).
    pub eps_std: f64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub g: f64,
    pub local: [f64; 2],
    pub r_max: f64,
    pub n_points: usize,
    pub chi_list: Vec<usize>,
    pub chi_e_rule: ChiERule,
    pub regauge: bool,
    pub reference: Reference,
    pub seed: u64,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = if x.len() > 1 { (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, s)
}

/// Samples `n_points` parameter vectors in the hypercube of half-width `r_max`
/// around `theta_opt` and, for each `chi`, times the energy evaluation and
/// records its error against the reference. Kernels are forced onto one
/// thread and cells run strictly serially.
pub fn scaling_benchmark(theta_opt: &[f64], spec: &CircuitSpec, cfg: &BenchmarkConfig) -> Result<Vec<ScalingPoint>> {
    if cfg.n_points == 0 {
        return Err(Error::Config("scaling benchmark needs n_points >= 1".into()));
    }
    if cfg.chi_list.is_empty() || cfg.chi_list.windows(2).any(|w| w[1] <= w[0]) || cfg.chi_list[0] == 0 {
        return Err(Error::Config("chi list must be nonempty, positive and strictly ascending".into()));
    }
    if !(cfg.r_max >= 0.0) {
        return Err(Error::Config("r_max must be >= 0".into()));
    }
    spec.check_len(theta_opt.len())?;
    crate::tensor::set_single_threaded();
    let lat = spec.lattice();
    let thetas: Vec<Vec<f64>> =
        (0..cfg.n_points).map(|k| hypercube_sample(theta_opt, cfg.r_max, cfg.seed, 0, k)).collect();

    // energies[c][k]: energy at chi_list[c] for sample k (None on failure).
    let mut energies: Vec<Vec<Option<f64>>> = Vec::with_capacity(cfg.chi_list.len());
    let mut times = Vec::with_capacity(cfg.chi_list.len());
    for &chi in &cfg.chi_list {
        let eval = if lat.is_square() {
            EvalConfig { method: Method::BoundaryMps { chi_e: cfg.chi_e_rule.chi_e(chi) }, chi, regauge: cfg.regauge }
        } else {
            EvalConfig { method: Method::Su, chi, regauge: cfg.regauge }
        };
        let ev = Evaluator::new(spec, cfg.g, cfg.local, eval)?;
        let mut row = Vec::with_capacity(thetas.len());
        let mut elapsed = Vec::with_capacity(thetas.len());
        for (k, th) in thetas.iter().enumerate() {
            let start = Instant::now();
            let e = ev.energy(th);
            let dt = start.elapsed().as_secs_f64();
            match e {
                Ok(e) => {
                    row.push(Some(e));
                    elapsed.push(dt);
                }
                Err(err) => {
                    warn!("chi={chi} sample {k} failed: {err}");
                    row.push(None);
                }
            }
        }
        let t = if elapsed.is_empty() { f64::NAN } else { elapsed.iter().sum::<f64>() / elapsed.len() as f64 };
        info!("chi={chi}: {:.4e} s per evaluation", t);
        energies.push(row);
        times.push(t);
    }

    let reference: Vec<Option<f64>> = match cfg.reference {
        Reference::Statevector => {
            let h = TfimHamiltonian::new(lat, cfg.g);
            let init = StateVector::product(lat.n_sites(), cfg.local)?;
            thetas
                .iter()
                .map(|th| {
                    let psi = statevector::run_circuit(spec, th, &init)?;
                    Ok(Some(statevector::tfim_energy(&h, &psi)?))
                })
                .collect::<Result<_>>()?
        }
        Reference::ConvergedTn => converged_reference(&energies)?,
    };

    let mut points = Vec::with_capacity(cfg.chi_list.len());
    for (c, &chi) in cfg.chi_list.iter().enumerate() {
        let eps: Vec<f64> = energies[c]
            .iter()
            .zip(&reference)
            .filter_map(|(e, r)| Some((e.as_ref()? - r.as_ref()?).abs()))
            .collect();
        if eps.is_empty() {
            warn!("chi={chi}: no successful evaluations; point dropped");
            continue;
        }
        let (eps_mean, eps_std) = mean_std(&eps);
        points.push(ScalingPoint {
            chi,
            chi_e: lat.is_square().then(|| cfg.chi_e_rule.chi_e(chi)),
            t: times[c],
            eps,
            eps_mean,
            eps_std,
        });
    }
    Ok(points)
}

/// Largest-`chi` energies as reference, accepted only if they differ from the
/// next-largest `chi` by less than 10% of the smallest error still resolved
/// (the mean error of the smaller bond dimensions).
fn converged_reference(energies: &[Vec<Option<f64>>]) -> Result<Vec<Option<f64>>> {
    let n = energies.len();
    if n < 3 {
        return Err(Error::Config("converged-TN reference needs at least 3 bond dimensions".into()));
    }
    let top = &energies[n - 1];
    if top.iter().any(|e| e.is_none()) {
        return Err(Error::ReferenceUnconverged("reference bond dimension failed on some samples".into()));
    }
    let mean_diff = |row: &[Option<f64>]| -> f64 {
        let d: Vec<f64> = row.iter().zip(top).filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs())).collect();
        d.iter().sum::<f64>() / d.len().max(1) as f64
    };
    let step = mean_diff(&energies[n - 2]);
    let resolved = energies[..n - 2].iter().map(|r| mean_diff(r)).fold(f64::INFINITY, f64::min);
    if !(step < 0.1 * resolved) {
        return Err(Error::ReferenceUnconverged(format!(
            "largest-chi step {step:.3e} is not below 10% of the smallest resolved error {resolved:.3e}"
        )));
    }
    Ok(top.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// `β >= 1/2`: classical error falls at least as fast as sampling error.
    #[serde(rename = "TN_favored")]
    TnFavored,
    /// `β < 1/2`: the sampling error eventually wins.
    #[serde(rename = "QC_favored")]
    QcFavored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    /// Root-mean-square residual in `ln ε`.
    pub residual: f64,
    pub n_points: usize,
    pub verdict: Verdict,
}

/// Which points enter the fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    All,
    /// Only points with `chi_E = chi^2` (boundary-MPS runs).
    ChiESquare,
}

/// Least squares on `ln ε = ln α - β ln t` over the selected points with `ε > 0`.
pub fn fit_power_law(points: &[ScalingPoint], selection: Selection) -> Result<ScalingFit> {
    let sel: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| match selection {
            Selection::All => true,
            Selection::ChiESquare => p.chi_e == Some(p.chi * p.chi),
        })
        .filter(|p| p.eps_mean > 0.0 && p.t > 0.0 && p.eps_mean.is_finite() && p.t.is_finite())
        .map(|p| (p.t, p.eps_mean))
        .collect();
    fit_pairs(&sel)
}

/// Power-law fit on raw `(t, ε)` pairs.
pub fn fit_pairs(pairs: &[(f64, f64)]) -> Result<ScalingFit> {
    if pairs.len() < 3 {
        return Err(Error::Config(format!("power-law fit needs >= 3 points with eps > 0 (got {})", pairs.len())));
    }
    let tmin = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let tmax = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if tmax / tmin < 2.0 {
        return Err(Error::Numerical(format!("time spread {:.3} < 2; refusing to fit", tmax / tmin)));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let (a, b, residual) = crate::landscape::linear_fit(&x, &y)?;
    let beta = -b;
    Ok(ScalingFit {
        alpha: a.exp(),
        beta,
        residual,
        n_points: pairs.len(),
        verdict: if beta < BETA_QC { Verdict::QcFavored } else { Verdict::TnFavored },
    })
}

/// Sampling-error baseline `c / sqrt(t)` through the first point, evaluated at
/// every point's `t`. For plotting only.
pub fn quantum_baseline(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let &(t0, e0) = points.first().ok_or_else(|| Error::Config("quantum baseline needs a point".into()))?;
    let c = e0 * t0.sqrt();
    Ok(points.iter().map(|&(t, _)| (t, c / t.sqrt())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;

    fn pt(t: f64, e: f64, chi: usize, chi_e: Option<usize>) -> ScalingPoint {
        ScalingPoint { chi, chi_e, t, eps: vec![e], eps_mean: e, eps_std: 0.0 }
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let pts: Vec<ScalingPoint> = [0.5, 1.0, 3.0, 10.0, 40.0]
            .iter()
            .enumerate()
            .map(|(k, &t)| pt(t, 2.0 / f64::powf(t, 0.5), k + 2, Some((k + 2) * (k + 2))))
            .collect();
        let f = fit_power_law(&pts, Selection::ChiESquare).unwrap();
        assert!((f.alpha - 2.0).abs() < 1e-10 && (f.beta - 0.5).abs() < 1e-10);
        let steep: Vec<(f64, f64)> = [1.0, 3.0, 9.0].iter().map(|&t| (t, f64::powf(t, -0.7))).collect();
        assert_eq!(fit_pairs(&steep).unwrap().verdict, Verdict::TnFavored);
        let flat: Vec<ScalingPoint> = [1.0, 2.0, 8.0].iter().map(|&t| pt(t, 0.3, 2, None)).collect();
        let f = fit_power_law(&flat, Selection::All).unwrap();
        assert!(f.beta.abs() < 1e-12 && f.verdict == Verdict::QcFavored);
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let pairs = [(0.1, 0.3), (0.4, 0.21), (2.0, 0.11), (9.0, 0.09)];
        let f = fit_pairs(&pairs).unwrap();
        let k: f64 = 7.5;
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(t, e)| (k * t, e)).collect();
        let g = fit_pairs(&scaled).unwrap();
        assert!((g.beta - f.beta).abs() < 1e-10);
        assert!((g.alpha - f.alpha * k.powf(f.beta)).abs() < 1e-10 * g.alpha);
        let mut perm = pairs;
        perm.reverse();
        assert!((fit_pairs(&perm).unwrap().beta - f.beta).abs() < 1e-12);
    }

    #[test]
    fn fit_refusals_and_selection() {
        assert!(fit_pairs(&[(1.0, 1.0), (3.0, 0.5)]).is_err());
        assert!(fit_pairs(&[(1.0, 1.0), (1.5, 0.5), (1.9, 0.4)]).is_err());
        let pts = vec![pt(1.0, 1.0, 2, Some(4)), pt(2.0, 0.5, 3, Some(5)), pt(4.0, 0.3, 4, Some(16)), pt(8.0, 0.0, 5, Some(25))];
        assert!(fit_power_law(&pts, Selection::ChiESquare).is_err());
        assert_eq!(fit_power_law(&pts, Selection::All).unwrap().n_points, 3);
    }

    #[test]
    fn baseline_examples() {
        let b = quantum_baseline(&[(1.0, 0.1), (100.0, 5.0)]).unwrap();
        assert_eq!(b[0], (1.0, 0.1));
        assert!((b[1].1 - 0.01).abs() < 1e-15);
        let slope = (b[1].1.ln() - b[0].1.ln()) / (100f64.ln() - 1f64.ln());
        assert!((slope + 0.5).abs() < 1e-14);
        assert!(quantum_baseline(&[]).is_err());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("square".parse::<ChiERule>().unwrap(), ChiERule::Square);
        assert_eq!("fixed:12".parse::<ChiERule>().unwrap(), ChiERule::Fixed(12));
        assert!("fixed:0".parse::<ChiERule>().is_err());
        assert_eq!(ChiERule::Fixed(3).to_string(), "fixed:3");
        assert!("tn".parse::<Reference>().is_err());
    }

    #[test]
    fn small_benchmark_against_statevector() {
        let lat = Lattice::square(2, 3).unwrap();
        let spec = CircuitSpec::new(&lat, 2).unwrap();
        let theta = vec![0.0; spec.n_params()];
        let cfg = BenchmarkConfig {
            g: 2.6,
            local: [1.0, 0.0],
            r_max: 0.3,
            n_points: 3,
            chi_list: vec![1, 2, 8],
            chi_e_rule: ChiERule::Square,
            regauge: true,
            reference: Reference::Statevector,
            seed: 5,
        };
        let pts = scaling_benchmark(&theta, &spec, &cfg).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| p.t > 0.0 && p.eps.len() == 3));
        assert!(pts[0].eps_mean > pts[2].eps_mean);
        // Single sample: the mean is that sample.
        let one = scaling_benchmark(&theta, &spec, &BenchmarkConfig { n_points: 1, ..cfg.clone() }).unwrap();
        assert_eq!(one[0].eps_mean, one[0].eps[0]);
        // Converged-TN reference: zero error at the reference bond dimension.
        let conv = scaling_benchmark(
            &theta,
            &spec,
            &BenchmarkConfig { chi_list: vec![1, 8, 16], reference: Reference::ConvergedTn, ..cfg },
        )
        .unwrap();
        assert_eq!(conv[2].eps_mean, 0.0);
    }
}
