//! Derivative-free tuning of release coupling waveforms: a knot-based
//! pulse parameterization with hardware-style rate ceiling and smoothing
//! filter, an objective that scores a waveform by how much of a single
//! excitation it emits into a target traveling envelope, and a budgeted
//! optimizer that explores with a Gaussian-process surrogate before
//! polishing the best point with a Nelder-Mead simplex.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::cascade::{build_stage, rate_schedule, run_stage, NodeParams, Stage};
use crate::hilbert::{fock, identity, kron, number, pure_density};
use crate::lindblad::Tolerances;
use crate::pulses::{gaussian_filter, sech_wavepacket, PulseShape, TimeGrid};
use crate::{Error, Result, C64};

/// Hardware-style ceiling on the instantaneous coupler rate, rad/s.
pub const DEFAULT_MAX_RATE: f64 = 2.0 * std::f64::consts::PI * 55e6;

/// Default smoothing width applied to rendered waveforms, seconds.
pub const DEFAULT_FILTER_SIGMA_S: f64 = 3e-9;

/// Piecewise-linear coupler waveform: `n_knots` control values uniformly
/// spaced over [0, duration], clipped to [0, max_rate], linearly
/// interpolated onto a fine grid, then smoothed by a Gaussian filter the
/// way a finite-bandwidth control chain would.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PulseParameterization {
    pub n_knots: usize,
    pub duration_s: f64,
    /// Ceiling on the instantaneous rate, rad/s.
    pub max_rate: f64,
    /// Smoothing filter standard deviation; zero disables filtering.
    pub filter_sigma_s: f64,
    /// Samples in the rendered waveform grid.
    pub samples: usize,
}

impl PulseParameterization {
    pub fn new(n_knots: usize, duration_s: f64) -> Self {
        Self {
            n_knots,
            duration_s,
            max_rate: DEFAULT_MAX_RATE,
            filter_sigma_s: DEFAULT_FILTER_SIGMA_S,
            samples: 601,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=24).contains(&self.n_knots) {
            return Err(Error::Invalid(format!(
                "knot count must lie in [3, 24], got {}",
                self.n_knots
            )));
        }
        if !(self.duration_s > 0.0) || !(self.max_rate > 0.0) {
            return Err(Error::Invalid(
                "pulse duration and rate ceiling must be positive".into(),
            ));
        }
        if self.filter_sigma_s < 0.0 {
            return Err(Error::Invalid("filter width must be nonnegative".into()));
        }
        if self.samples < self.n_knots {
            return Err(Error::Invalid(format!(
                "waveform grid of {} samples cannot resolve {} knots",
                self.samples, self.n_knots
            )));
        }
        Ok(())
    }

    /// Times of the control knots.
    pub fn knot_times(&self) -> Vec<f64> {
        (0..self.n_knots)
            .map(|i| self.duration_s * i as f64 / (self.n_knots - 1) as f64)
            .collect()
    }

    /// Render knot values into the rate waveform kappa(t).
    pub fn waveform(&self, knot_values: &[f64]) -> Result<PulseShape> {
        self.validate()?;
        if knot_values.len() != self.n_knots {
            return Err(Error::Dimension(format!(
                "expected {} knot values, got {}",
                self.n_knots,
                knot_values.len()
            )));
        }
        let clipped: Vec<f64> = knot_values
            .iter()
            .map(|&v| v.clamp(0.0, self.max_rate))
            .collect();
        let knot_times = self.knot_times();
        let grid = TimeGrid::new(0.0, self.duration_s, self.samples)?;
        let seg = self.duration_s / (self.n_knots - 1) as f64;
        let interp = PulseShape::from_fn(&grid, |t| {
            let j = ((t / seg).floor() as usize).min(self.n_knots - 2);
            let frac = (t - knot_times[j]) / seg;
            C64::from(clipped[j] + (clipped[j + 1] - clipped[j]) * frac.clamp(0.0, 1.0))
        })?;
        gaussian_filter(&interp, self.filter_sigma_s)
    }
}

/// Scores a coupler waveform by the fraction of one excitation it releases
/// into a fixed target envelope.
#[derive(Clone, Debug)]
pub struct EmissionObjective {
    pub parameterization: PulseParameterization,
    /// Traveling envelope the release should fill.
    pub target: PulseShape,
    /// Resonator truncation for the simulation.
    pub truncation: usize,
    pub tol: Tolerances,
}

impl EmissionObjective {
    /// Standard single-photon release problem: a sech target of bandwidth
    /// kappa_c centered in the parameterization window.
    pub fn sech_release(parameterization: PulseParameterization, kappa_c: f64) -> Result<Self> {
        parameterization.validate()?;
        let grid = TimeGrid::new(0.0, parameterization.duration_s, parameterization.samples)?;
        let target = sech_wavepacket(kappa_c, parameterization.duration_s / 2.0, &grid)?;
        Ok(Self {
            parameterization,
            target,
            truncation: 2,
            tol: Tolerances {
                rel: 1e-7,
                abs: 1e-9,
            },
        })
    }

    /// Transfer efficiency for one set of knot values: simulate the release
    /// stage from a single excitation and return the mean photon number
    /// accumulated in the target envelope's mode. Failures inside the
    /// simulation are logged and scored as zero so a search can continue.
    pub fn evaluate(&self, knot_values: &[f64]) -> f64 {
        match self.efficiency(knot_values) {
            Ok(e) => e,
            Err(err) => {
                log::warn!("objective evaluation failed, scoring 0: {err}");
                0.0
            }
        }
    }

    fn efficiency(&self, knot_values: &[f64]) -> Result<f64> {
        let kappa = self.parameterization.waveform(knot_values)?;
        let node = NodeParams::lossless(self.truncation, rate_schedule(&kappa));
        let ts = build_stage(&node, &self.target, Stage::Emission, None)?;
        let (nc, nv) = ts.dims;
        let rho0 = kron(&pure_density(&fock(nc, 1)?), &pure_density(&fock(nv, 0)?));
        let traj = run_stage(&ts, &rho0, 2, self.tol)?;
        let n_virtual = kron(&identity(nc), &number(nv));
        let final_state = traj.final_state();
        let mut acc = C64::from(0.0);
        for i in 0..final_state.nrows() {
            for j in 0..final_state.ncols() {
                acc += final_state[(i, j)] * n_virtual[(j, i)];
            }
        }
        Ok(acc.re)
    }
}

/// One scored waveform in an optimization log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub knot_values: Vec<f64>,
    pub value: f64,
}

/// Which search phase produced the best point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Surrogate,
    Simplex,
}

/// Outcome of a budgeted pulse search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub best_knots: Vec<f64>,
    pub best_value: f64,
    pub evaluations: Vec<EvaluationRecord>,
    pub method: SearchMethod,
}

struct BudgetedObjective<'a> {
    f: &'a dyn Fn(&[f64]) -> f64,
    lo: f64,
    hi: f64,
    budget: usize,
    log: Vec<EvaluationRecord>,
    cache: HashMap<Vec<u64>, f64>,
}

impl<'a> BudgetedObjective<'a> {
    fn new(f: &'a dyn Fn(&[f64]) -> f64, lo: f64, hi: f64, budget: usize) -> Self {
        Self {
            f,
            lo,
            hi,
            budget,
            log: Vec::new(),
            cache: HashMap::new(),
        }
    }

    fn exhausted(&self) -> bool {
        self.log.len() >= self.budget
    }

    /// Evaluate at a unit-cube point, denormalizing to physical knots.
    /// Returns None once the budget is spent. Cached repeats are free.
    fn eval(&mut self, x: &[f64]) -> Option<f64> {
        let knots: Vec<f64> = x
            .iter()
            .map(|&u| self.lo + (self.hi - self.lo) * u.clamp(0.0, 1.0))
            .collect();
        let key: Vec<u64> = knots.iter().map(|v| v.to_bits()).collect();
        if let Some(&v) = self.cache.get(&key) {
            return Some(v);
        }
        if self.exhausted() {
            return None;
        }
        let v = (self.f)(&knots);
        self.cache.insert(key, v);
        self.log.push(EvaluationRecord {
            knot_values: knots,
            value: v,
        });
        Some(v)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian-process posterior (squared-exponential kernel, median-heuristic
/// length scale) over observed unit-cube points; returns posterior mean and
/// standard deviation at each candidate.
fn gp_posterior(xs: &[Vec<f64>], ys: &[f64], cands: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let yn = DVector::<f64>::from_iterator(n, ys.iter().map(|y| (y - mean) / std));

    let mut d2: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(sq_dist(&xs[i], &xs[j]));
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ls2 = d2[d2.len() / 2].max(1e-6);

    let kernel = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * ls2)).exp();
    let mut gram = DMatrix::<f64>::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j]));
    let mut chol = None;
    for jitter_exp in [-8, -6, -4] {
        let jitter = 10f64.powi(jitter_exp);
        for i in 0..n {
            gram[(i, i)] = 1.0 + jitter;
        }
        if let Some(c) = gram.clone().cholesky() {
            chol = Some(c);
            break;
        }
    }
    let chol = chol?;
    let alpha = chol.solve(&yn);

    let mut mus = Vec::with_capacity(cands.len());
    let mut sigmas = Vec::with_capacity(cands.len());
    for c in cands {
        let kstar = DVector::<f64>::from_iterator(n, xs.iter().map(|x| kernel(x, c)));
        let mu = kstar.dot(&alpha);
        let v = chol.solve(&kstar);
        let var = (1.0 - kstar.dot(&v)).max(1e-12);
        mus.push(mean + std * mu);
        sigmas.push(std * var.sqrt());
    }
    Some((mus, sigmas))
}

/// Expected improvement of a Gaussian posterior over the incumbent.
fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let gauss = Normal::new(0.0, 1.0).unwrap();
    let z = (mu - best - xi) / sigma;
    (mu - best - xi) * gauss.cdf(z) + sigma * gauss.pdf(z)
}

/// Maximize a black-box objective over an `n_dims`-dimensional box with a
/// fixed evaluation budget: random initialization, then surrogate-guided
/// sampling by expected improvement for 70% of the budget, then Nelder-Mead
/// refinement of the incumbent for the remainder. Deterministic for a fixed
/// seed.
pub fn optimize_pulse<F>(
    objective: F,
    n_dims: usize,
    bounds: (f64, f64),
    budget: usize,
    seed: u64,
) -> Result<OptimizationReport>
where
    F: Fn(&[f64]) -> f64,
{
    let (lo, hi) = bounds;
    if n_dims == 0 {
        return Err(Error::Invalid(
            "objective needs at least one dimension".into(),
        ));
    }
    if !(hi > lo) {
        return Err(Error::Invalid(format!("empty bounds [{lo:e}, {hi:e}]")));
    }
    if budget < 3 {
        return Err(Error::Invalid(format!(
            "budget of {budget} evaluations is too small to search"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obj = BudgetedObjective::new(&objective, lo, hi, budget);

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let push = |obj: &mut BudgetedObjective,
                xs: &mut Vec<Vec<f64>>,
                ys: &mut Vec<f64>,
                x: Vec<f64>|
     -> bool {
        match obj.eval(&x) {
            Some(v) => {
                xs.push(x);
                ys.push(v);
                true
            }
            None => false,
        }
    };

    // random initialization
    let n_init = (2 * n_dims).clamp(2, budget);
    for _ in 0..n_init {
        let x: Vec<f64> = (0..n_dims).map(|_| rng.random::<f64>()).collect();
        if !push(&mut obj, &mut xs, &mut ys, x) {
            break;
        }
    }

    // surrogate phase
    let surrogate_budget = (budget as f64 * 0.7).round() as usize;
    let mut method_of_best = SearchMethod::Surrogate;
    while obj.log.len() < surrogate_budget {
        let best = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let best_x = xs[ys
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0]
            .clone();
        let mut cands: Vec<Vec<f64>> = (0..256)
            .map(|_| (0..n_dims).map(|_| rng.random::<f64>()).collect())
            .collect();
        for _ in 0..64 {
            let c: Vec<f64> = best_x
                .iter()
                .map(|&v| (v + 0.1 * normal_sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            cands.push(c);
        }
        let proposal = match gp_posterior(&xs, &ys, &cands) {
            Some((mus, sigmas)) => {
                let xi = 1e-4;
                let (mut top, mut top_ei) = (0, f64::NEG_INFINITY);
                for (i, (&mu, &sigma)) in mus.iter().zip(&sigmas).enumerate() {
                    let ei = expected_improvement(mu, sigma, best, xi);
                    if ei > top_ei {
                        top_ei = ei;
                        top = i;
                    }
                }
                cands.swap_remove(top)
            }
            None => (0..n_dims).map(|_| rng.random::<f64>()).collect(),
        };
        if !push(&mut obj, &mut xs, &mut ys, proposal) {
            break;
        }
    }

    // simplex polish from the incumbent
    let best_idx = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let surrogate_best = ys[best_idx];
    let polished = nelder_mead(&mut obj, xs[best_idx].clone(), 0.08);
    if polished > surrogate_best {
        method_of_best = SearchMethod::Simplex;
    }

    let log = obj.log;
    let best = log
        .iter()
        .max_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
        .expect("at least one evaluation");
    Ok(OptimizationReport {
        best_knots: best.knot_values.clone(),
        best_value: best.value,
        evaluations: log.clone(),
        method: method_of_best,
    })
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Maximizing Nelder-Mead on the unit cube, consuming whatever budget
/// remains in `obj`; returns the best value seen during the polish.
fn nelder_mead(obj: &mut BudgetedObjective, start: Vec<f64>, step: f64) -> f64 {
    let n = start.len();
    let clamp = |x: Vec<f64>| -> Vec<f64> { x.iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let Some(v0) = obj.eval(&start) else {
        return f64::NEG_INFINITY;
    };
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut x = start.clone();
        x[i] = (x[i] + if x[i] < 0.5 { step } else { -step }).clamp(0.0, 1.0);
        match obj.eval(&x) {
            Some(v) => simplex.push((x, v)),
            None => {
                return simplex
                    .iter()
                    .map(|s| s.1)
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    let best_of = |s: &[(Vec<f64>, f64)]| s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    loop {
        if obj.exhausted() {
            return best_of(&simplex);
        }
        // sort descending: best first (maximization)
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| sq_dist(x, &simplex[0].0).sqrt())
            .fold(0.0, f64::max);
        if diameter < 1e-4 {
            return best_of(&simplex);
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect = clamp(
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + (c - w))
                .collect(),
        );
        let Some(fr) = obj.eval(&reflect) else {
            return best_of(&simplex);
        };
        if fr > simplex[0].1 {
            // try expanding
            let expand = clamp(
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + 2.0 * (c - w))
                    .collect(),
            );
            let fe = obj.eval(&expand);
            match fe {
                Some(fe) if fe > fr => simplex[n] = (expand, fe),
                Some(_) => simplex[n] = (reflect, fr),
                None => {
                    simplex[n] = (reflect, fr);
                    return best_of(&simplex);
                }
            }
            continue;
        }
        if fr > simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
            continue;
        }
        // contract toward the centroid
        let contract = clamp(
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + 0.5 * (w - c))
                .collect(),
        );
        let Some(fc) = obj.eval(&contract) else {
            return best_of(&simplex);
        };
        if fc > worst.1 {
            simplex[n] = (contract, fc);
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[0].0.clone();
        for i in 1..=n {
            let x = clamp(
                anchor
                    .iter()
                    .zip(&simplex[i].0)
                    .map(|(a, b)| a + 0.5 * (b - a))
                    .collect(),
            );
            match obj.eval(&x) {
                Some(v) => simplex[i] = (x, v),
                None => return best_of(&simplex),
            }
        }
    }
}

/// Optimize the knots of an emission objective within its rate bounds.
pub fn optimize_release(
    objective: &EmissionObjective,
    budget: usize,
    seed: u64,
) -> Result<OptimizationReport> {
    optimize_pulse(
        |knots| objective.evaluate(knots),
        objective.parameterization.n_knots,
        (0.0, objective.parameterization.max_rate),
        budget,
        seed,
    )
}
