//! Energy evaluation, reverse-mode gradients and L-BFGS minimization.
//!
//! The PEPS gradient differentiates the map the simulator actually computes,
//! truncations included. Memory is bounded by checkpointing the state at every
//! layer boundary and re-recording one layer at a time during the backward
//! sweep.

use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EagerNoQr, Tape, Var};
use crate::circuit::{so4_derivatives, warm_start_extend, CircuitSpec};
use crate::error::{Error, Result};
use crate::hamiltonian::{relative_error, Method, TfimHamiltonian};
use crate::lattice::Lattice;
use crate::peps::{self, apply_circuit, energy_generic, evolve_layer, gate_tensor, IteConfig, Net, PepsState};
use crate::statevector::{self, StateVector};
use crate::tensor::DenseTensor;

/// How `E(θ)` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub method: Method,
    /// PEPS bond dimension (ignored by the statevector method).
    pub chi: usize,
    /// SU-regauge after each layer.
    pub regauge: bool,
}

impl EvalConfig {
    pub fn statevector() -> Self {
        Self { method: Method::Statevector, chi: 1, regauge: false }
    }

    pub fn su(chi: usize) -> Self {
        Self { method: Method::Su, chi, regauge: chi > 1 }
    }

    pub fn boundary(chi: usize, chi_e: usize) -> Self {
        Self { method: Method::BoundaryMps { chi_e }, chi, regauge: chi > 1 }
    }
}

/// Energy pipeline `θ -> E(θ)` for a fixed circuit, Hamiltonian and initial
/// product state.
#[derive(Clone, Debug)]
pub struct Evaluator {
    spec: CircuitSpec,
    h: TfimHamiltonian,
    local: [f64; 2],
    cfg: EvalConfig,
}

impl Evaluator {
    pub fn new(spec: &CircuitSpec, g: f64, local: [f64; 2], cfg: EvalConfig) -> Result<Self> {
        if cfg.chi == 0 {
            return Err(Error::Config("chi must be >= 1".into()));
        }
        if let Method::BoundaryMps { chi_e } = cfg.method {
            if !spec.lattice().is_square() {
                return Err(Error::Config("boundary-MPS expectations need a square lattice".into()));
            }
            if chi_e == 0 {
                return Err(Error::Config("chi_E must be >= 1".into()));
            }
        }
        PepsState::product(spec.lattice(), local)?;
        Ok(Self { spec: spec.clone(), h: TfimHamiltonian::new(spec.lattice(), g), local, cfg })
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn hamiltonian(&self) -> &TfimHamiltonian {
        &self.h
    }

    pub fn config(&self) -> EvalConfig {
        self.cfg
    }

    fn chi_e(&self) -> Option<usize> {
        match self.cfg.method {
            Method::BoundaryMps { chi_e } => Some(chi_e),
            _ => None,
        }
    }

    pub fn energy(&self, theta: &[f64]) -> Result<f64> {
        self.spec.check_len(theta.len())?;
        match self.cfg.method {
            Method::Statevector => {
                let init = StateVector::product(self.spec.lattice().n_sites(), self.local)?;
                statevector::tfim_energy(&self.h, &statevector::run_circuit(&self.spec, theta, &init)?)
            }
            _ => {
                let st0 = PepsState::product(self.spec.lattice(), self.local)?;
                let (st, _) = apply_circuit(&st0, &self.spec, theta, self.cfg.chi, self.cfg.regauge)?;
                match self.chi_e() {
                    Some(chi_e) => peps::energy_boundary_mps(&st, &self.h, chi_e),
                    None => peps::energy_su(&st, &self.h),
                }
            }
        }
    }

    /// `E(θ)` and `∇E(θ)`.
    pub fn energy_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.spec.check_len(theta.len())?;
        match self.cfg.method {
            Method::Statevector => {
                let init = StateVector::product(self.spec.lattice().n_sites(), self.local)?;
                statevector::energy_and_gradient(&self.spec, theta, &init, &self.h)
            }
            _ => self.peps_gradient(theta),
        }
    }

    fn peps_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = &self.spec;
        let lat = spec.lattice();
        let (chi, regauge) = (self.cfg.chi, self.cfg.regauge);
        let gates: Vec<DenseTensor> = spec.gates(theta)?.iter().map(gate_tensor).collect();

        // Forward pass, keeping the state at the start of every layer.
        let mut net = PepsState::product(lat, self.local)?.net().clone();
        let mut checkpoints = Vec::with_capacity(spec.depth());
        for layer in 0..spec.depth() {
            checkpoints.push(net.clone());
            evolve_layer(&mut EagerNoQr, spec, layer, &mut net, &gates[spec.layer_range(layer)], chi, regauge)?;
        }

        let mut tape = Tape::new();
        let vars = net.lift(&mut tape);
        let e = energy_generic(&mut tape, lat, &vars, &self.h, self.chi_e())?;
        let energy = tape.value(e).item();
        let grads = tape.backward(&[(e, DenseTensor::scalar(1.0))])?;
        let mut adjoint = adjoint_net(&tape, &grads, &vars);
        drop(tape);

        let mut grad = vec![0.0; spec.n_params()];
        for layer in (0..spec.depth()).rev() {
            let range = spec.layer_range(layer);
            let mut tape = Tape::new();
            let inputs = checkpoints[layer].lift(&mut tape);
            let gate_vars: Vec<Var> = gates[range.clone()].iter().map(|g| tape.leaf(g.clone())).collect();
            let mut out = inputs.clone();
            evolve_layer(&mut tape, spec, layer, &mut out, &gate_vars, chi, regauge)?;
            let mut seeds = Vec::with_capacity(out.tensors.len() + out.weights.len());
            for (v, a) in out.tensors.iter().chain(&out.weights).zip(adjoint.tensors.iter().chain(&adjoint.weights)) {
                if tape.value(*v).shape() != a.shape() {
                    return Err(Error::Numerical("layer recomputation changed a bond dimension".into()));
                }
                seeds.push((*v, a.clone()));
            }
            let grads = tape.backward(&seeds)?;
            adjoint = adjoint_net(&tape, &grads, &inputs);
            for (slot, gv) in range.zip(&gate_vars) {
                let gbar = grads.get_or_zeros(*gv, &[2, 2, 2, 2]);
                for (k, dk) in so4_derivatives(&spec.angles(theta, slot)).iter().enumerate() {
                    grad[6 * slot + k] = dk.iter().flatten().zip(gbar.data()).map(|(x, y)| x * y).sum();
                }
            }
        }
        Ok((energy, grad))
    }
}

fn adjoint_net(tape: &Tape, grads: &crate::autodiff::Gradients, vars: &Net<Var>) -> Net<DenseTensor> {
    let get = |v: &Var| grads.get_or_zeros(*v, tape.value(*v).shape());
    Net { tensors: vars.tensors.iter().map(get).collect(), weights: vars.weights.iter().map(get).collect() }
}

/// Why [`minimize`] stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Gradient infinity-norm below `gtol`.
    Converged,
    /// Relative energy decrease below `ftol`.
    Stalled,
    MaxIters,
    LineSearchFailed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Stalled => "stalled",
            Status::MaxIters => "max-iters",
            Status::LineSearchFailed => "line-search-failed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub gtol: f64,
    pub ftol: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iters: 200, gtol: 1e-6, ftol: 1e-13, memory: 10 }
    }
}

/// One accepted iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub n_evals: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
    pub theta_opt: Vec<f64>,
    pub status: Status,
}

impl OptimizationTrace {
    pub fn final_energy(&self) -> f64 {
        self.rows.last().map(|r| r.energy).unwrap_or(f64::NAN)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS with a strong-Wolfe line search. `f` returns value and gradient.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    theta0: &[f64],
    cfg: &LbfgsConfig,
) -> Result<(Vec<f64>, OptimizationTrace)> {
    if !(cfg.gtol > 0.0) {
        return Err(Error::Config("gtol must be > 0".into()));
    }
    let start = Instant::now();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<(f64, Vec<f64>)> {
        *evals += 1;
        let (v, g) = f(x)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("objective returned a non-finite value".into()));
        }
        Ok((v, g))
    };
    let mut x = theta0.to_vec();
    let (mut fx, mut gx) = eval(&x, &mut evals)?;
    let mut rows = vec![TraceRow {
        iter: 0,
        energy: fx,
        grad_norm: inf_norm(&gx),
        n_evals: evals,
        seconds: start.elapsed().as_secs_f64(),
    }];
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut status = Status::MaxIters;
    for iter in 1..=cfg.max_iters {
        if inf_norm(&gx) < cfg.gtol {
            status = Status::Converged;
            break;
        }
        // Two-loop recursion.
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&gx, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = gx.iter().map(|v| -v).collect();
            slope = dot(&gx, &dir);
        }
        let alpha0 = if hist.is_empty() { (1.0 / inf_norm(&gx)).min(1.0) } else { 1.0 };
        let ls = line_search(&mut |a: f64| {
            let xa: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + a * di).collect();
            let (v, g) = eval(&xa, &mut evals)?;
            let d = dot(&g, &dir);
            Ok((v, g, d))
        }, fx, slope, alpha0)?;
        let Some((alpha, fnew, gnew)) = ls else {
            status = Status::LineSearchFailed;
            warn!("line search failed at iteration {iter}; returning best iterate");
            break;
        };
        let s: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            hist.push((s, y, 1.0 / sy));
            if hist.len() > cfg.memory {
                hist.remove(0);
            }
        }
        let decrease = fx - fnew;
        fx = fnew;
        gx = gnew;
        rows.push(TraceRow {
            iter,
            energy: fx,
            grad_norm: inf_norm(&gx),
            n_evals: evals,
            seconds: start.elapsed().as_secs_f64(),
        });
        debug!("iter {iter}: E={fx:.12} |g|={:.3e}", inf_norm(&gx));
        if inf_norm(&gx) < cfg.gtol {
            status = Status::Converged;
            break;
        }
        if decrease <= cfg.ftol * fx.abs().max(1.0) {
            status = Status::Stalled;
            break;
        }
    }
    let trace = OptimizationTrace { rows, theta_opt: x.clone(), status };
    Ok((x, trace))
}

type Probe<'a> = dyn FnMut(f64) -> Result<(f64, Vec<f64>, f64)> + 'a;

/// Strong-Wolfe line search (bracketing + zoom with cubic interpolation).
/// Returns `None` if no acceptable step was found.
fn line_search(phi: &mut Probe<'_>, f0: f64, d0: f64, alpha0: f64) -> Result<Option<(f64, f64, Vec<f64>)>> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    const MAX_EVALS: usize = 40;
    let mut evals = 0;
    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, d0);
    let mut a = alpha0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    loop {
        let (fa, ga, da) = phi(a)?;
        evals += 1;
        if fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, ga.clone()));
        }
        if fa > f0 + C1 * a * d0 || (evals > 1 && fa >= f_prev) {
            return zoom(phi, f0, d0, (a_prev, f_prev, d_prev), (a, fa, da), MAX_EVALS - evals, best);
        }
        if da.abs() <= -C2 * d0 {
            return Ok(Some((a, fa, ga)));
        }
        if da >= 0.0 {
            return zoom(phi, f0, d0, (a, fa, da), (a_prev, f_prev, d_prev), MAX_EVALS - evals, best);
        }
        if evals >= MAX_EVALS {
            return Ok(best);
        }
        (a_prev, f_prev, d_prev) = (a, fa, da);
        a *= 2.0;
    }
}

fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (x0, f0, d0) = a;
    let (x1, f1, d1) = b;
    let d1_ = d0 + d1 - 3.0 * (f0 - f1) / (x0 - x1);
    let disc = d1_ * d1_ - d0 * d1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (x1 - x0).signum() * disc.sqrt();
    let x = x1 - (x1 - x0) * (d1 + d2 - d1_) / (d1 - d0 + 2.0 * d2);
    x.is_finite().then_some(x)
}

fn zoom(
    phi: &mut Probe<'_>,
    f0: f64,
    d0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    budget: usize,
    mut best: Option<(f64, f64, Vec<f64>)>,
) -> Result<Option<(f64, f64, Vec<f64>)>> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..budget {
        let (a_min, a_max) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = a_max - a_min;
        let mut a = cubic_min(lo, hi).unwrap_or(0.5 * (lo.0 + hi.0));
        if !(a > a_min + 0.1 * width && a < a_max - 0.1 * width) {
            a = 0.5 * (lo.0 + hi.0);
        }
        let (fa, ga, da) = phi(a)?;
        if fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, ga.clone()));
        }
        if fa > f0 + C1 * a * d0 || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -C2 * d0 {
                return Ok(Some((a, fa, ga)));
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
        if width < 1e-14 * a_max.max(1e-300) {
            break;
        }
    }
    // Fall back to the best sufficient-decrease point seen, if any.
    Ok(best.filter(|b| b.1 <= f0 + C1 * b.0 * d0))
}

/// Initial parameters for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    Zeros,
    /// Uniform in `[-0.1, 0.1]`.
    SmallRandom,
    /// Uniform in `[-π, π]`.
    UniformPi,
    /// Warm start from a shallower optimum (remaining layers zero).
    Warm { theta: Vec<f64>, depth: usize },
}

impl InitPolicy {
    pub fn initial(&self, spec: &CircuitSpec, seed: u64) -> Result<Vec<f64>> {
        let n = spec.n_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self {
            InitPolicy::Zeros => vec![0.0; n],
            InitPolicy::SmallRandom => (0..n).map(|_| rng.random_range(-0.1..=0.1)).collect(),
            InitPolicy::UniformPi => {
                (0..n).map(|_| rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI)).collect()
            }
            InitPolicy::Warm { theta, depth } => {
                let short = CircuitSpec::new(spec.lattice(), *depth)?;
                warm_start_extend(theta, &short, spec)?.values
            }
        })
    }
}

/// Reference ground energy: Lanczos for `N <= 20`, otherwise converged ITE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Exact,
    Ite,
}

pub fn reference_energy(lattice: &Lattice, g: f64, chi: usize) -> Result<(f64, ReferenceKind)> {
    reference_energy_with(lattice, g, chi, &IteConfig::default_for(lattice, chi))
}

/// As [`reference_energy`] with an explicit ITE schedule for large lattices.
pub fn reference_energy_with(lattice: &Lattice, g: f64, chi: usize, ite: &IteConfig) -> Result<(f64, ReferenceKind)> {
    if lattice.n_sites() <= statevector::GROUND_STATE_CAP {
        return Ok((statevector::exact_ground_energy(lattice, g)?, ReferenceKind::Exact));
    }
    let res = peps::imaginary_time_evolve(lattice, g, chi, ite)?;
    if !res.converged {
        return Err(Error::ReferenceUnconverged(format!("ITE at g={g}, chi={chi} did not converge")));
    }
    Ok((res.energy, ReferenceKind::Ite))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub g: f64,
    pub depth: usize,
    pub energy: f64,
    pub e_ref: f64,
    pub delta_e: f64,
    pub status: String,
    pub iterations: usize,
    pub reference: ReferenceKind,
    /// Full optimizer trace (`None` when the cell failed).
    pub trace: Option<OptimizationTrace>,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub eval: EvalConfig,
    pub lbfgs: LbfgsConfig,
    pub init: InitPolicy,
    /// Warm-start each depth from the previous depth's optimum at the same `g`.
    pub chain_warm: bool,
    pub local: [f64; 2],
    /// Bond dimension used for ITE references (large lattices only).
    pub reference_chi: usize,
    /// ITE schedule for references (`None`: [`IteConfig::default_for`]).
    pub reference_ite: Option<IteConfig>,
}

/// Optimizes every `(g, D)` cell. Failed cells are recorded with `NaN`
/// energies and the error in `status`; the sweep continues.
pub fn optimize_sweep(
    lattice: &Lattice,
    g_list: &[f64],
    d_list: &[usize],
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if g_list.is_empty() || d_list.is_empty() {
        return Err(Error::Config("optimize_sweep needs nonempty g and depth lists".into()));
    }
    let mut rows = Vec::new();
    for &g in g_list {
        let ite = cfg.reference_ite.clone().unwrap_or_else(|| IteConfig::default_for(lattice, cfg.reference_chi));
        let (e_ref, kind) = reference_energy_with(lattice, g, cfg.reference_chi, &ite)?;
        let mut prev: Option<(Vec<f64>, usize)> = None;
        for &d in d_list {
            let cell = || -> Result<(f64, OptimizationTrace)> {
                let spec = CircuitSpec::new(lattice, d)?;
                let ev = Evaluator::new(&spec, g, cfg.local, cfg.eval)?;
                let init = match (&prev, cfg.chain_warm) {
                    (Some((theta, pd)), true) if *pd <= d => {
                        InitPolicy::Warm { theta: theta.clone(), depth: *pd }.initial(&spec, seed)?
                    }
                    _ => cfg.init.initial(&spec, seed)?,
                };
                let (_, trace) = minimize(|t| ev.energy_and_gradient(t), &init, &cfg.lbfgs)?;
                Ok((trace.final_energy(), trace))
            };
            match cell() {
                Ok((e, trace)) => {
                    info!("g={g} D={d}: E={e:.10} ({:?})", trace.status);
                    rows.push(SweepRow {
                        g,
                        depth: d,
                        energy: e,
                        e_ref,
                        delta_e: relative_error(e, e_ref)?,
                        status: trace.status.as_str().into(),
                        iterations: trace.rows.len() - 1,
                        reference: kind,
                        trace: None,
                    });
                    prev = Some((trace.theta_opt.clone(), d));
                    rows.last_mut().unwrap().trace = Some(trace);
                }
                Err(err) => {
                    warn!("g={g} D={d} failed: {err}");
                    rows.push(SweepRow {
                        g,
                        depth: d,
                        energy: f64::NAN,
                        e_ref,
                        delta_e: f64::NAN,
                        status: format!("error: {err}"),
                        iterations: 0,
                        reference: kind,
                        trace: None,
                    });
                }
            }
        }
    }
    Ok(rows)
}
