//! Time-domain envelopes for wavepacket emission/capture and coupler
//! control: hyperbolic-secant wavepackets, the matched release rate,
//! skewed-sech shapes with a least-squares fitter, flattop pulses, and the
//! Gaussian smoothing filter that models the control-line bandwidth.
//!
//! Wavepacket envelopes are normalized to unit energy, integral |u|^2 dt = 1
//! (units 1/sqrt(s)); coupler rate pulses carry rad/s values.

use statrs::function::erf::erf;

use crate::{Error, Result, C64};

/// Uniform time grid in seconds.
#[derive(Clone, Copy, Debug)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, n: usize) -> Result<Self> {
        if !(end > start) || n < 2 {
            return Err(Error::Domain(format!(
                "time grid needs end > start and n >= 2, got [{start:e}, {end:e}] with n = {n}"
            )));
        }
        Ok(TimeGrid { start, end, n })
    }

    /// Grid from a requested spacing; the spacing is rounded so the span
    /// divides evenly.
    pub fn with_spacing(start: f64, end: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::Domain("grid spacing must be positive".into()));
        }
        let n = ((end - start) / dt).round() as usize + 1;
        Self::new(start, end, n.max(2))
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / (self.n - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.n).map(|i| self.start + i as f64 * dt).collect()
    }
}

impl Default for TimeGrid {
    /// 0 to 200 ns in 0.1 ns steps: resolves 2 ns wavepackets and the
    /// 3 ns control filter.
    fn default() -> Self {
        TimeGrid {
            start: 0.0,
            end: 200e-9,
            n: 2001,
        }
    }
}

/// A sampled complex envelope on a uniform time grid.
#[derive(Clone, Debug)]
pub struct PulseShape {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
}

impl PulseShape {
    pub fn new(times: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::Dimension(format!(
                "pulse needs >= 2 samples with matching lengths ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(Error::Domain("pulse grid must be increasing".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
                return Err(Error::Domain("pulse grid must be uniform".into()));
            }
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::Numerics("pulse contains non-finite values".into()));
        }
        Ok(PulseShape { times, values })
    }

    pub fn from_real(times: Vec<f64>, values: &[f64]) -> Result<Self> {
        Self::new(times, values.iter().map(|&v| C64::from(v)).collect())
    }

    /// Sample a closed-form function on a grid.
    pub fn from_fn<F>(grid: &TimeGrid, f: F) -> Result<Self>
    where
        F: Fn(f64) -> C64,
    {
        let times = grid.times();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation, clamped to the endpoint values outside the grid.
    pub fn value_at(&self, t: f64) -> C64 {
        let x = (t - self.start()) / self.dt();
        if x <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if x >= last as f64 {
            return self.values[last];
        }
        let i = x.floor() as usize;
        let w = x - i as f64;
        self.values[i] * C64::from(1.0 - w) + self.values[i + 1] * C64::from(w)
    }

    /// Trapezoid integral of |u|^2 over the grid.
    pub fn norm_sq(&self) -> f64 {
        let dt = self.dt();
        let mut acc = 0.0;
        for w in self.values.windows(2) {
            acc += 0.5 * (w[0].norm_sqr() + w[1].norm_sqr()) * dt;
        }
        acc
    }

    /// Trapezoid integral of u (not |u|^2) over the grid.
    pub fn area(&self) -> C64 {
        let dt = C64::from(self.dt());
        let mut acc = C64::from(0.0);
        for w in self.values.windows(2) {
            acc += (w[0] + w[1]) * C64::from(0.5) * dt;
        }
        acc
    }

    /// Running trapezoid integral of |u|^2, same length as the grid.
    pub fn cumulative_norm_sq(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * (w[0].norm_sqr() + w[1].norm_sqr()) * dt;
            out.push(acc);
        }
        out
    }

    /// Running trapezoid integral of Re(u), same length as the grid. Useful
    /// for rate schedules, whose samples are real.
    pub fn cumulative_real_integral(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * (w[0].re + w[1].re) * dt;
            out.push(acc);
        }
        out
    }

    /// Rescaled copy with unit energy.
    pub fn normalized_energy(&self) -> Result<PulseShape> {
        let n = self.norm_sq();
        if n <= 0.0 {
            return Err(Error::Numerics("cannot normalize a zero pulse".into()));
        }
        Ok(self.scaled(C64::from(1.0 / n.sqrt())))
    }

    /// Rescaled copy with unit area (real part of the trapezoid integral).
    pub fn normalized_area(&self) -> Result<PulseShape> {
        let a = self.area().re;
        if a.abs() <= 0.0 {
            return Err(Error::Numerics("cannot area-normalize a zero pulse".into()));
        }
        Ok(self.scaled(C64::from(1.0 / a)))
    }

    pub fn scaled(&self, z: C64) -> PulseShape {
        PulseShape {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| v * z).collect(),
        }
    }

    /// Time-mirrored copy on the same grid: out(t) = in(start + end - t).
    pub fn mirrored(&self) -> PulseShape {
        let mut values = self.values.clone();
        values.reverse();
        PulseShape {
            times: self.times.clone(),
            values,
        }
    }

    /// True when the envelope carries unit energy within `tol`.
    pub fn is_energy_normalized(&self, tol: f64) -> bool {
        (self.norm_sq() - 1.0).abs() <= tol
    }
}

/// Hyperbolic-secant wavepacket u(t) = sqrt(kappa_c/4) sech(kappa_c (t-t0)/2),
/// renormalized to unit energy on the grid. Warns when the grid covers less
/// than 10/kappa_c on either side of t0 (truncated tails).
pub fn sech_wavepacket(kappa_c: f64, t0: f64, grid: &TimeGrid) -> Result<PulseShape> {
    if kappa_c <= 0.0 {
        return Err(Error::Domain(format!(
            "sech width parameter must be positive, got {kappa_c:e}"
        )));
    }
    let margin = 10.0 / kappa_c;
    if t0 - grid.start < margin || grid.end - t0 < margin {
        log::warn!(
            "sech wavepacket tails truncated: grid [{:e}, {:e}] around t0 = {:e} \
             is narrower than 10/kappa_c = {:e} per side",
            grid.start,
            grid.end,
            t0,
            margin
        );
    }
    let amp = (kappa_c / 4.0).sqrt();
    let raw = PulseShape::from_fn(grid, |t| C64::from(amp / (kappa_c * (t - t0) / 2.0).cosh()))?;
    raw.normalized_energy()
}

/// The release rate kappa(t) = kappa_m e^{kappa_c (t-t0)} / (1 + e^{kappa_c (t-t0)})
/// that emits a unit-energy sech wavepacket of width parameter kappa_c: a
/// rising logistic with asymptote kappa_m and midpoint t0.
pub fn optimal_release_kappa(
    kappa_c: f64,
    kappa_m: f64,
    t0: f64,
    grid: &TimeGrid,
) -> Result<PulseShape> {
    if kappa_c <= 0.0 || kappa_m <= 0.0 {
        return Err(Error::Domain(format!(
            "release rate needs positive kappa_c and kappa_m, got {kappa_c:e}, {kappa_m:e}"
        )));
    }
    PulseShape::from_fn(grid, |t| {
        C64::from(kappa_m / (1.0 + (-kappa_c * (t - t0)).exp()))
    })
}

/// Skewed hyperbolic secant
/// f(t) = cos(theta) e^{theta (t-t0)/w} / (2 cosh(pi (t-t0) / 2w)).
/// With `normalize`, the result is rescaled to unit area on the grid. The raw
/// formula integrates to w·cos(theta)/cos(theta) ~ w at theta = 0, so the
/// "cosine normalizes" reading does not hold on a time axis; the flag gives
/// a correctly normalized variant.
pub fn skewed_sech(
    theta: f64,
    w: f64,
    t0: f64,
    grid: &TimeGrid,
    normalize: bool,
) -> Result<PulseShape> {
    if theta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "skew parameter must satisfy |theta| < pi/2 (divergent tail), got {theta}"
        )));
    }
    if w <= 0.0 {
        return Err(Error::Domain(format!("width must be positive, got {w:e}")));
    }
    let p = skewed_sech_shape(theta, w, t0, grid)?;
    if normalize {
        p.normalized_area()
    } else {
        Ok(p)
    }
}

fn skewed_sech_shape(theta: f64, w: f64, t0: f64, grid: &TimeGrid) -> Result<PulseShape> {
    let c = theta.cos();
    PulseShape::from_fn(grid, |t| {
        let x = (t - t0) / w;
        C64::from(c * (theta * x).exp() / (2.0 * (std::f64::consts::PI * x / 2.0).cosh()))
    })
}

/// Flattop pulse: a rectangle of the given width centered on the grid
/// midpoint, convolved with a Gaussian of standard deviation `rise_w`.
/// rise_w = 0 gives the exact rectangle.
pub fn flattop(width: f64, rise_w: f64, amplitude: f64, grid: &TimeGrid) -> Result<PulseShape> {
    if width <= 0.0 {
        return Err(Error::Domain(format!(
            "flattop width must be positive, got {width:e}"
        )));
    }
    if rise_w < 0.0 {
        return Err(Error::Domain(format!(
            "rise width must be nonnegative, got {rise_w:e}"
        )));
    }
    let mid = 0.5 * (grid.start + grid.end);
    let (lo, hi) = (mid - width / 2.0, mid + width / 2.0);
    if rise_w == 0.0 {
        return PulseShape::from_fn(grid, |t| {
            C64::from(if t >= lo && t <= hi { amplitude } else { 0.0 })
        });
    }
    let s = rise_w * std::f64::consts::SQRT_2;
    PulseShape::from_fn(grid, |t| {
        C64::from(0.5 * amplitude * (erf((t - lo) / s) - erf((t - hi) / s)))
    })
}

/// Discrete Gaussian convolution with standard deviation `sigma` seconds;
/// edges are handled by clamping to the endpoint samples, so constants are
/// fixed points. sigma = 0 returns the input unchanged.
pub fn gaussian_filter(p: &PulseShape, sigma: f64) -> Result<PulseShape> {
    if sigma < 0.0 {
        return Err(Error::Domain(format!(
            "filter width must be nonnegative, got {sigma:e}"
        )));
    }
    if sigma == 0.0 {
        return Ok(p.clone());
    }
    let dt = p.dt();
    let radius = ((6.0 * sigma / dt).ceil() as usize).max(1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let mut ksum = 0.0;
    for k in -(radius as i64)..=(radius as i64) {
        let x = k as f64 * dt / sigma;
        let w = (-0.5 * x * x).exp();
        kernel.push(w);
        ksum += w;
    }
    for w in &mut kernel {
        *w /= ksum;
    }
    let n = p.values.len() as i64;
    let values: Vec<C64> = (0..n)
        .map(|i| {
            let mut acc = C64::from(0.0);
            for (j, &w) in kernel.iter().enumerate() {
                let idx = (i + j as i64 - radius as i64).clamp(0, n - 1) as usize;
                acc += p.values[idx] * C64::from(w);
            }
            acc
        })
        .collect();
    PulseShape::new(p.times.clone(), values)
}

/// Result of a skewed-sech least-squares fit.
#[derive(Clone, Copy, Debug)]
pub struct SkewedSechFit {
    pub theta: f64,
    pub w: f64,
    pub t0: f64,
    pub amplitude: f64,
    /// RMS misfit of the model against the samples.
    pub residual: f64,
}

/// Fit amplitude·skewed_sech(theta, w, t0) to a real-valued trace by
/// Levenberg-Marquardt with a numerical Jacobian. The initial guess comes
/// from the peak location, the half-maximum width, and the sign of the
/// asymmetry around the peak.
pub fn fit_skewed_sech(samples: &PulseShape) -> Result<SkewedSechFit> {
    let y: Vec<f64> = samples.values.iter().map(|v| v.re).collect();
    let t = &samples.times;
    if y.len() < 8 {
        return Err(Error::Dimension(format!(
            "fit needs >= 8 samples, got {}",
            y.len()
        )));
    }

    // Initial guess from moments of the trace.
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if ymax <= 0.0 {
        return Err(Error::Domain("trace has no positive peak".into()));
    }
    let half = ymax / 2.0;
    let mut i_lo = imax;
    while i_lo > 0 && y[i_lo] > half {
        i_lo -= 1;
    }
    let mut i_hi = imax;
    while i_hi + 1 < y.len() && y[i_hi] > half {
        i_hi += 1;
    }
    let fwhm = (t[i_hi] - t[i_lo]).max(samples.dt());
    // sech(pi x / 2) reaches half max at x = (2/pi)·ln(2+sqrt(3))
    let w0 = fwhm * std::f64::consts::PI / (4.0 * (2.0 + 3f64.sqrt()).ln());
    let left: f64 = y[..imax].iter().sum();
    let right: f64 = y[imax + 1..].iter().sum();
    let theta0 = if right > left { 0.1 } else { -0.1 };
    // raw shape peaks near cos(theta)/2 for small skew
    let mut p = [theta0, w0, t[imax], 2.0 * ymax];

    let model = |p: &[f64; 4], ti: f64| -> f64 {
        let x = (ti - p[2]) / p[1];
        p[3] * p[0].cos() * (p[0] * x).exp() / (2.0 * (std::f64::consts::PI * x / 2.0).cosh())
    };
    let cost = |p: &[f64; 4]| -> f64 {
        t.iter()
            .zip(&y)
            .map(|(&ti, &yi)| {
                let r = model(p, ti) - yi;
                r * r
            })
            .sum()
    };
    let clamp_params = |p: &mut [f64; 4], dt: f64| {
        let lim = std::f64::consts::FRAC_PI_2 - 1e-3;
        p[0] = p[0].clamp(-lim, lim);
        p[1] = p[1].max(dt);
    };

    let dt = samples.dt();
    clamp_params(&mut p, dt);
    let n = y.len();
    let mut lambda = 1e-3;
    let mut c_old = cost(&p);
    let mut converged = false;

    for _ in 0..200 {
        // numerical Jacobian, central differences
        let mut jtj = nalgebra::DMatrix::<f64>::zeros(4, 4);
        let mut jtr = nalgebra::DVector::<f64>::zeros(4);
        let steps: Vec<f64> = p.iter().map(|&v| 1e-6 * v.abs().max(1e-6)).collect();
        let mut jac = vec![[0.0f64; 4]; n];
        for k in 0..4 {
            let mut pp = p;
            let mut pm = p;
            pp[k] += steps[k];
            pm[k] -= steps[k];
            for (i, &ti) in t.iter().enumerate() {
                jac[i][k] = (model(&pp, ti) - model(&pm, ti)) / (2.0 * steps[k]);
            }
        }
        for (i, &ti) in t.iter().enumerate() {
            let r = model(&p, ti) - y[i];
            for k in 0..4 {
                jtr[k] += jac[i][k] * r;
                for l in 0..4 {
                    jtj[(k, l)] += jac[i][k] * jac[i][l];
                }
            }
        }

        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            if let Some(delta) = a.lu().solve(&(-&jtr)) {
                let mut p_new = p;
                for k in 0..4 {
                    p_new[k] += delta[k];
                }
                clamp_params(&mut p_new, dt);
                let c_new = cost(&p_new);
                if c_new < c_old {
                    let rel = (c_old - c_new) / c_old.max(1e-300);
                    p = p_new;
                    c_old = c_new;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-12 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 3.0;
            if lambda > 1e10 {
                break;
            }
        }
        if !improved {
            converged = true; // stationary within numerical resolution
            break;
        }
        if converged {
            break;
        }
    }

    let residual = (c_old / n as f64).sqrt();
    let fit = SkewedSechFit {
        theta: p[0],
        w: p[1],
        t0: p[2],
        amplitude: p[3],
        residual,
    };
    if !converged && residual > 0.05 * ymax {
        return Err(Error::NonConvergence(format!(
            "skewed-sech fit stalled at theta = {:.4}, w = {:.4e}, t0 = {:.4e}, \
             amplitude = {:.4e}, rms residual = {:.3e}",
            fit.theta, fit.w, fit.t0, fit.amplitude, fit.residual
        )));
    }
    Ok(fit)
}
