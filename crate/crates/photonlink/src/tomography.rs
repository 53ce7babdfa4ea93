//! Resonator-state readout and reconstruction: Wigner maps from displaced
//! parity, photon-number distributions fitted from the qubit's
//! number-dependent exchange beating, density-matrix estimation from
//! displaced Fock statistics (single resonator or a joint pair, with an
//! optional photon-number cap for entangled targets), plus
//! displacement-amplitude calibration and microwave-crosstalk inversion.
//!
//! Conventions: a dataset records the displacement beta that was applied to
//! the resonator before photon counting, so each entry holds the statistics
//! of D(beta) rho D(beta)^dag. The parity of that displaced state equals
//! (pi/2) W(-beta) of the undisplaced state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::hilbert::{displacement_element, kron_vec};
use crate::linalg::{eigh, nnls, project_simplex};
use crate::{Error, Result, C64};

const MAX_FIT_ITERS: usize = 5000;
const FIT_TOL: f64 = 1e-10;

/// Wigner quasiprobability at one phase-space point,
/// W(alpha) = (2/pi) tr[rho D(2 alpha) P] with P the photon parity.
/// Closed-form displacement elements make this exact for any state fully
/// supported on the matrix dimensions supplied.
pub fn wigner_at(rho: &DMatrix<C64>, alpha: C64) -> f64 {
    let d = rho.nrows();
    let beta = alpha * C64::from(2.0);
    let mut acc = C64::from(0.0);
    for n in 0..d {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        for m in 0..d {
            acc += rho[(n, m)] * displacement_element(m, n, beta) * C64::from(sign);
        }
    }
    std::f64::consts::FRAC_2_PI * acc.re
}

/// Wigner function over a list of phase-space points.
pub fn wigner(rho: &DMatrix<C64>, alphas: &[C64]) -> Result<Vec<f64>> {
    if rho.nrows() != rho.ncols() || rho.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "state must be square and nonempty, got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    Ok(alphas.iter().map(|&a| wigner_at(rho, a)).collect())
}

/// Square phase-space grid [-half_extent, half_extent]^2 with n_side points
/// per axis, row-major with the real part varying fastest.
pub fn displacement_grid(half_extent: f64, n_side: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(n_side * n_side);
    let step = if n_side > 1 {
        2.0 * half_extent / (n_side - 1) as f64
    } else {
        0.0
    };
    for iy in 0..n_side {
        let im = -half_extent + step * iy as f64;
        for ix in 0..n_side {
            let re = -half_extent + step * ix as f64;
            out.push(C64::new(re, im));
        }
    }
    out
}

/// Amplitudes <i|D(-beta)|n> for i < dim: the i-th component of the state
/// whose photon-count statistics a measurement after displacing by beta
/// projects onto.
fn displaced_fock_column(dim: usize, beta: C64, n: usize) -> DVector<C64> {
    DVector::from_fn(dim, |i, _| displacement_element(i, n, -beta))
}

/// Measurement operator for "displace by beta, count n photons", cropped to
/// a dim-dimensional state space.
pub fn displaced_fock_projector(dim: usize, beta: C64, n: usize) -> DMatrix<C64> {
    let c = displaced_fock_column(dim, beta, n);
    &c * c.adjoint()
}

/// Photon-number distribution P_0..P_n_max of the state after displacing it
/// by beta. The synthetic twin of a displaced Fock measurement.
pub fn displaced_fock_probabilities(
    rho: &DMatrix<C64>,
    beta: C64,
    n_max: usize,
) -> Result<Vec<f64>> {
    let d = rho.nrows();
    if d != rho.ncols() || d == 0 {
        return Err(Error::Dimension(format!(
            "state must be square and nonempty, got {}x{}",
            d,
            rho.ncols()
        )));
    }
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let c = displaced_fock_column(d, beta, n);
        out.push((c.adjoint() * rho * &c)[(0, 0)].re.max(0.0));
    }
    Ok(out)
}

/// Joint photon-number distribution of a two-resonator state after
/// displacing the modes by beta.0 and beta.1. Row-major in (n1, n2) with n2
/// varying fastest; each mode is resolved up to n_max.
pub fn joint_displaced_probabilities(
    rho: &DMatrix<C64>,
    levels: usize,
    beta: (C64, C64),
    n_max: usize,
) -> Result<Vec<f64>> {
    let d = levels * levels;
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::Dimension(format!(
            "joint state is {}x{}, expected {d}x{d} for {levels} levels per mode",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let mut out = Vec::with_capacity((n_max + 1) * (n_max + 1));
    for n1 in 0..=n_max {
        let c1 = displaced_fock_column(levels, beta.0, n1);
        for n2 in 0..=n_max {
            let c2 = displaced_fock_column(levels, beta.1, n2);
            let c = kron_vec(&c1, &c2);
            out.push((c.adjoint() * rho * &c)[(0, 0)].re.max(0.0));
        }
    }
    Ok(out)
}

/// Qubit excited-state trace produced by a photon-number mixture during
/// resonant exchange: P_e(t) = sum_n P_n sin^2(sqrt(n) g t). This is the
/// model the number-distribution fit inverts.
pub fn number_beating_trace(distribution: &[f64], g: f64, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            distribution
                .iter()
                .enumerate()
                .skip(1)
                .map(|(n, &p)| p * ((n as f64).sqrt() * g * t).sin().powi(2))
                .sum()
        })
        .collect()
}

/// Fit a photon-number distribution P_0..P_n_max to a qubit exchange trace
/// by nonnegative least squares on the sin^2(sqrt(n) g t) basis; the vacuum
/// weight is whatever the excited components leave over. The trace must
/// cover at least one full single-photon exchange period pi/g.
pub fn extract_fock_distribution(
    times: &[f64],
    trace: &[f64],
    g: f64,
    n_max: usize,
) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(Error::Domain(
            "distribution fit needs n_max >= 1 excited components".into(),
        ));
    }
    if g <= 0.0 {
        return Err(Error::Domain(format!("coupling must be positive, got {g}")));
    }
    if times.len() != trace.len() || times.len() < n_max + 2 {
        return Err(Error::Dimension(format!(
            "trace fit needs matching times/values with > {} samples, got {} and {}",
            n_max + 1,
            times.len(),
            trace.len()
        )));
    }
    let span = times.last().unwrap() - times.first().unwrap();
    let period = std::f64::consts::PI / g;
    if span < period {
        return Err(Error::Domain(format!(
            "trace spans {span:.3e} s but resolving photon numbers needs at least \
             one exchange period {period:.3e} s"
        )));
    }
    let a = DMatrix::<f64>::from_fn(times.len(), n_max, |r, c| {
        (((c + 1) as f64).sqrt() * g * times[r]).sin().powi(2)
    });
    let y = DVector::<f64>::from_column_slice(trace);
    let p = nnls(&a, &y)?;
    let excited: f64 = p.iter().sum();
    let mut dist = Vec::with_capacity(n_max + 1);
    if excited > 1.0 {
        dist.push(0.0);
        dist.extend(p.iter().map(|&v| v / excited));
    } else {
        dist.push(1.0 - excited);
        dist.extend(p.iter().copied());
    }
    Ok(dist)
}

/// Measured statistics of one resonator over a set of displacements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    /// Displacement applied to the resonator before each photon count.
    pub displacements: Vec<C64>,
    /// Highest photon number the readout resolves.
    pub n_max: usize,
    pub data: TomographyData,
}

/// The two forms readout data arrives in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TomographyData {
    /// Raw qubit excited-state traces, one per displacement.
    QubitTraces {
        times_s: Vec<f64>,
        g_rad_s: f64,
        traces: Vec<Vec<f64>>,
    },
    /// Photon-number distributions already extracted, one per displacement,
    /// each of length n_max + 1.
    FockDistributions { distributions: Vec<Vec<f64>> },
}

impl TomographyDataset {
    pub fn validate(&self) -> Result<()> {
        let k = self.displacements.len();
        if k == 0 {
            return Err(Error::Dimension("dataset has no displacements".into()));
        }
        match &self.data {
            TomographyData::QubitTraces {
                times_s, traces, ..
            } => {
                if traces.len() != k {
                    return Err(Error::Dimension(format!(
                        "{k} displacements but {} traces",
                        traces.len()
                    )));
                }
                if traces.iter().any(|t| t.len() != times_s.len()) {
                    return Err(Error::Dimension(
                        "every trace must match the time grid length".into(),
                    ));
                }
            }
            TomographyData::FockDistributions { distributions } => {
                if distributions.len() != k {
                    return Err(Error::Dimension(format!(
                        "{k} displacements but {} distributions",
                        distributions.len()
                    )));
                }
                if distributions.iter().any(|d| d.len() != self.n_max + 1) {
                    return Err(Error::Dimension(format!(
                        "every distribution must have n_max + 1 = {} entries",
                        self.n_max + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Photon-number distributions per displacement, fitting the qubit
    /// traces first when that is what the dataset holds.
    pub fn fock_distributions(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        match &self.data {
            TomographyData::FockDistributions { distributions } => Ok(distributions.clone()),
            TomographyData::QubitTraces {
                times_s,
                g_rad_s,
                traces,
            } => traces
                .iter()
                .map(|tr| extract_fock_distribution(times_s, tr, *g_rad_s, self.n_max))
                .collect(),
        }
    }
}

/// Measured joint statistics of two resonators over per-mode displacement
/// pairs; distributions are row-major in (n1, n2) with n2 fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTomographyDataset {
    pub displacements: Vec<(C64, C64)>,
    /// Highest photon number resolved in each mode.
    pub n_max: usize,
    pub distributions: Vec<Vec<f64>>,
}

impl JointTomographyDataset {
    pub fn validate(&self) -> Result<()> {
        if self.displacements.is_empty() {
            return Err(Error::Dimension("dataset has no displacements".into()));
        }
        if self.distributions.len() != self.displacements.len() {
            return Err(Error::Dimension(format!(
                "{} displacement pairs but {} distributions",
                self.displacements.len(),
                self.distributions.len()
            )));
        }
        let want = (self.n_max + 1) * (self.n_max + 1);
        if self.distributions.iter().any(|d| d.len() != want) {
            return Err(Error::Dimension(format!(
                "every joint distribution must have {want} entries"
            )));
        }
        Ok(())
    }
}

/// Least-squares density-matrix fit under the physical constraints
/// (Hermitian, positive, unit trace), by accelerated projected gradient
/// descent. `allowed` optionally restricts support to a subset of basis
/// states; forbidden rows and columns are zeroed and the trace rescaled
/// around the spectral projection.
fn fit_density(
    effects: &[DMatrix<C64>],
    data: &[f64],
    dim: usize,
    allowed: Option<&[bool]>,
) -> Result<DMatrix<C64>> {
    if effects.is_empty() || effects.len() != data.len() {
        return Err(Error::Dimension(format!(
            "{} measurement operators for {} data points",
            effects.len(),
            data.len()
        )));
    }
    if effects.len() < dim * dim {
        log::warn!(
            "density fit is underdetermined: {} measurements for {} real parameters",
            effects.len(),
            dim * dim
        );
    }
    let d2 = dim * dim;
    let k = effects.len();
    // row r = vec(E_r^T), so row . vec(rho) = tr(rho E_r)
    let mut meas = DMatrix::<C64>::zeros(k, d2);
    for (r, e) in effects.iter().enumerate() {
        if e.nrows() != dim || e.ncols() != dim {
            return Err(Error::Dimension(format!(
                "measurement operator {r} is {}x{}, expected {dim}x{dim}",
                e.nrows(),
                e.ncols()
            )));
        }
        for n in 0..dim {
            for m in 0..dim {
                meas[(r, n * dim + m)] = e[(n, m)];
            }
        }
    }
    let y = DVector::<f64>::from_column_slice(data);
    let lipschitz = 2.0 * effects.iter().map(|e| e.norm_squared()).sum::<f64>();
    let step = 1.0 / lipschitz.max(1e-300);

    let objective = |rho: &DMatrix<C64>| -> f64 {
        let v = DVector::<C64>::from_column_slice(rho.as_slice());
        let pred = &meas * v;
        pred.iter()
            .zip(y.iter())
            .map(|(p, &yy)| (p.re - yy) * (p.re - yy))
            .sum()
    };
    let gradient = |rho: &DMatrix<C64>| -> DMatrix<C64> {
        let v = DVector::<C64>::from_column_slice(rho.as_slice());
        let pred = &meas * v;
        let resid = DVector::<C64>::from_iterator(
            k,
            pred.iter()
                .zip(y.iter())
                .map(|(p, &yy)| C64::from(p.re - yy)),
        );
        let g = meas.adjoint() * resid;
        DMatrix::<C64>::from_column_slice(dim, dim, g.as_slice()) * C64::from(2.0)
    };

    let mut x = project_physical(
        &(DMatrix::<C64>::identity(dim, dim) / C64::from(dim as f64)),
        allowed,
    )?;
    let mut x_prev = x.clone();
    let mut momentum = x.clone();
    let mut t: f64 = 1.0;
    let mut f_prev = objective(&x);
    for iter in 0..MAX_FIT_ITERS {
        let g = gradient(&momentum);
        let candidate = &momentum - g * C64::from(step);
        let x_new = project_physical(&candidate, allowed)?;
        let f_new = objective(&x_new);
        if f_new > f_prev {
            // restart the acceleration from the last good iterate
            momentum = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        momentum = &x_new + (&x_new - &x_prev) * C64::from((t - 1.0) / t_next);
        x_prev = std::mem::replace(&mut x, x_new);
        t = t_next;
        if iter > 20 && (f_prev - f_new).abs() < FIT_TOL {
            break;
        }
        f_prev = f_new;
    }
    Ok(x)
}

/// Nearest density matrix: spectral decomposition with eigenvalues
/// projected onto the probability simplex, with optional support masking.
fn project_physical(rho: &DMatrix<C64>, allowed: Option<&[bool]>) -> Result<DMatrix<C64>> {
    let dim = rho.nrows();
    let mut work = rho.clone();
    if let Some(mask) = allowed {
        apply_support_mask(&mut work, mask);
    }
    let (vals, vecs) = eigh(&work);
    let probs = project_simplex(&vals);
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            let col = vecs.column(i);
            out += (col * col.adjoint()) * C64::from(p);
        }
    }
    if let Some(mask) = allowed {
        apply_support_mask(&mut out, mask);
        let tr = out.trace().re;
        if tr <= 1e-12 {
            return Err(Error::Numerics(
                "photon-number cap removed all state weight".into(),
            ));
        }
        out /= C64::from(tr);
    }
    Ok(out)
}

fn apply_support_mask(rho: &mut DMatrix<C64>, allowed: &[bool]) {
    let dim = rho.nrows();
    for i in 0..dim {
        if !allowed[i] {
            for j in 0..dim {
                rho[(i, j)] = C64::from(0.0);
                rho[(j, i)] = C64::from(0.0);
            }
        }
    }
}

/// Reconstruct one resonator's density matrix on `dim` levels from its
/// displaced photon-number statistics.
pub fn reconstruct_density_matrix(dataset: &TomographyDataset, dim: usize) -> Result<DMatrix<C64>> {
    if dim <= dataset.n_max {
        return Err(Error::Dimension(format!(
            "reconstruction space of {dim} levels cannot hold measured photon \
             numbers up to {}",
            dataset.n_max
        )));
    }
    let distributions = dataset.fock_distributions()?;
    let mut effects = Vec::new();
    let mut values = Vec::new();
    for (beta, dist) in dataset.displacements.iter().zip(&distributions) {
        for (n, &p) in dist.iter().enumerate() {
            effects.push(displaced_fock_projector(dim, *beta, n));
            values.push(p);
        }
    }
    fit_density(&effects, &values, dim, None)
}

/// Reconstruct a two-resonator density matrix on `levels` levels per mode
/// from joint displaced photon-number statistics. `photon_cap` zeroes every
/// basis state holding more than that many photons in either mode, the
/// support constraint appropriate for an n-photon entangled target.
pub fn reconstruct_joint_density_matrix(
    dataset: &JointTomographyDataset,
    levels: usize,
    photon_cap: Option<usize>,
) -> Result<DMatrix<C64>> {
    if levels <= dataset.n_max {
        return Err(Error::Dimension(format!(
            "{levels} levels per mode cannot hold measured photon numbers up to {}",
            dataset.n_max
        )));
    }
    dataset.validate()?;
    let dim = levels * levels;
    let mut effects = Vec::new();
    let mut values = Vec::new();
    for ((b1, b2), dist) in dataset.displacements.iter().zip(&dataset.distributions) {
        let mut idx = 0;
        for n1 in 0..=dataset.n_max {
            let c1 = displaced_fock_column(levels, *b1, n1);
            for n2 in 0..=dataset.n_max {
                let c2 = displaced_fock_column(levels, *b2, n2);
                let c = kron_vec(&c1, &c2);
                effects.push(&c * c.adjoint());
                values.push(dist[idx]);
                idx += 1;
            }
        }
    }
    let allowed: Option<Vec<bool>> = photon_cap.map(|cap| {
        (0..dim)
            .map(|i| i / levels <= cap && i % levels <= cap)
            .collect()
    });
    fit_density(&effects, &values, dim, allowed.as_deref())
}

/// Result of a displacement-amplitude calibration.
#[derive(Clone, Copy, Debug)]
pub struct DisplacementCalibration {
    /// Resonator displacement magnitude per unit drive amplitude.
    pub alpha_per_unit: f64,
    /// Points inside the linear low-power region the fit kept.
    pub points_used: usize,
    /// Largest relative model deviation inside the kept region.
    pub max_rel_deviation: f64,
}

/// Calibrate the drive-amplitude-to-displacement scale from mean photon
/// numbers measured at increasing drive amplitudes: <n> = (s A)^2 in the
/// linear region. The fit grows from the smallest amplitudes and stops at
/// the first point deviating more than 5% from the through-origin model,
/// excluding the compressed high-power region automatically.
pub fn calibrate_displacement(
    amplitudes: &[f64],
    mean_photons: &[f64],
) -> Result<DisplacementCalibration> {
    const REL_TOL: f64 = 0.05;
    if amplitudes.len() != mean_photons.len() {
        return Err(Error::Dimension(format!(
            "{} amplitudes but {} photon numbers",
            amplitudes.len(),
            mean_photons.len()
        )));
    }
    let mut pairs: Vec<(f64, f64)> = amplitudes
        .iter()
        .zip(mean_photons)
        .filter(|(&a, &n)| a > 0.0 && n.is_finite() && n >= 0.0)
        .map(|(&a, &n)| (a, n))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::Dimension(
            "calibration needs at least 3 points with positive amplitude".into(),
        ));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let slope = |k: usize| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(a, n) in &pairs[..k] {
            let a2 = a * a;
            num += n * a2;
            den += a2 * a2;
        }
        num / den
    };
    let rel_dev = |c: f64, a: f64, n: f64| -> f64 {
        let model = c * a * a;
        (n - model).abs() / model.abs().max(1e-3)
    };

    let mut used = 3;
    while used < pairs.len() {
        let c = slope(used + 1);
        let (a, n) = pairs[used];
        if rel_dev(c, a, n) > REL_TOL {
            break;
        }
        used += 1;
    }
    let c = slope(used);
    if !(c > 0.0) {
        return Err(Error::Domain(
            "calibration data has no positive power slope".into(),
        ));
    }
    let max_dev = pairs[..used]
        .iter()
        .map(|&(a, n)| rel_dev(c, a, n))
        .fold(0.0, f64::max);
    Ok(DisplacementCalibration {
        alpha_per_unit: c.sqrt(),
        points_used: used,
        max_rel_deviation: max_dev,
    })
}

/// Drive amplitudes that realize `desired` displacements through a mixing
/// matrix whose off-diagonal entries are the measured crosstalk: solves
/// mixing * x = desired, refusing ill-conditioned mixing matrices.
pub fn correct_crosstalk(mixing: &DMatrix<C64>, desired: &DVector<C64>) -> Result<DVector<C64>> {
    let n = mixing.nrows();
    if n == 0 || mixing.ncols() != n || desired.len() != n {
        return Err(Error::Dimension(format!(
            "mixing matrix is {}x{}, desired vector has {} entries",
            mixing.nrows(),
            mixing.ncols(),
            desired.len()
        )));
    }
    let gram = mixing.adjoint() * mixing;
    let (vals, _) = eigh(&gram);
    let smin = vals.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let smax = vals.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    if smin <= 0.0 || smax / smin > 1e6 {
        return Err(Error::Numerics(format!(
            "mixing matrix condition number {:.2e} is too large to invert",
            if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            }
        )));
    }
    mixing
        .clone()
        .full_piv_lu()
        .solve(desired)
        .ok_or_else(|| Error::Numerics("mixing matrix could not be inverted".into()))
}
