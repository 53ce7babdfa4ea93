//! Classical device-design calculators for the tunable resonator and its
//! flux-controlled waveguide coupler: effective lumped parameters and
//! anharmonicity of a SQUID-terminated waveguide resonator versus mode
//! phase, the RF-SQUID flux-to-phase map, admittance-based resonance and
//! lifetime of the coupled circuit, and rectangular box modes of dies and
//! packages.
//!
//! The mode-phase variable x = k_n l runs over (n pi, (n + 1/2) pi) for the
//! n-th eigenmode band, from the half-wave point (coupler fully screened)
//! to the quarter-wave point.

use serde::{Deserialize, Serialize};

use crate::linalg::{bisect, bracketed_newton};
use crate::{Error, Result};

pub const ELEMENTARY_CHARGE_C: f64 = 1.602176634e-19;
pub const REDUCED_PLANCK_JS: f64 = 1.054571817e-34;
pub const SPEED_OF_LIGHT_M_S: f64 = 2.99792458e8;

/// Distributed-element description of the SQUID-terminated waveguide
/// resonator, with the shunt capacitance closing its far end.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ResonatorGeometry {
    pub length_m: f64,
    pub cap_per_length_f_m: f64,
    pub ind_per_length_h_m: f64,
    /// Small capacitance to ground terminating the far end of the line.
    pub end_capacitance_f: f64,
    /// Fixed series inductance of the boundary SQUID.
    pub squid_inductance_h: f64,
    /// Which standing-wave eigenmode the device operates on (1-based).
    pub mode_index: usize,
}

impl Default for ResonatorGeometry {
    fn default() -> Self {
        Self {
            length_m: 20.5e-3,
            cap_per_length_f_m: 173e-12,
            ind_per_length_h_m: 402e-9,
            end_capacitance_f: 10e-15,
            squid_inductance_h: 0.3e-9,
            mode_index: 2,
        }
    }
}

impl ResonatorGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.length_m,
            self.cap_per_length_f_m,
            self.ind_per_length_h_m,
            self.end_capacitance_f,
            self.squid_inductance_h,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) || self.mode_index < 1 {
            return Err(Error::Invalid(
                "resonator geometry needs positive element values and mode_index >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Total cavity capacitance of the bare line.
    pub fn cavity_capacitance_f(&self) -> f64 {
        self.cap_per_length_f_m * self.length_m
    }

    /// Total cavity inductance of the bare line.
    pub fn cavity_inductance_h(&self) -> f64 {
        self.ind_per_length_h_m * self.length_m
    }

    /// Wave velocity on the line, 1/sqrt(L'C').
    pub fn wave_velocity_m_s(&self) -> f64 {
        1.0 / (self.ind_per_length_h_m * self.cap_per_length_f_m).sqrt()
    }

    /// Characteristic impedance of the line, sqrt(L'/C').
    pub fn line_impedance_ohm(&self) -> f64 {
        (self.ind_per_length_h_m / self.cap_per_length_f_m).sqrt()
    }

    /// Mode-phase interval (x_lo, x_hi) the configured eigenmode tunes
    /// over, half-wave to quarter-wave.
    pub fn mode_band(&self) -> (f64, f64) {
        let n = self.mode_index as f64;
        (n * std::f64::consts::PI, (n + 0.5) * std::f64::consts::PI)
    }
}

/// Effective lumped parameters of one resonator eigenmode.
#[derive(Clone, Copy, Debug)]
pub struct EffectiveParams {
    pub c_r_f: f64,
    pub l_r_h: f64,
    pub omega_r_rad_s: f64,
}

/// Effective capacitance, inductance, and frequency of the eigenmode at
/// mode phase x: C_r = (C_cav/2)(1 + sin(2x)/(2x)), L_r = L_cav C_cav /
/// (x^2 C_r), omega_r = x / sqrt(C_cav L_cav).
pub fn resonator_effective_params(x: f64, geo: &ResonatorGeometry) -> Result<EffectiveParams> {
    geo.validate()?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!(
            "mode phase must be positive, got {x}"
        )));
    }
    let c_cav = geo.cavity_capacitance_f();
    let l_cav = geo.cavity_inductance_h();
    let c_r = 0.5 * c_cav * (1.0 + (2.0 * x).sin() / (2.0 * x));
    let l_r = l_cav * c_cav / (x * x * c_r);
    let omega_r = x / (c_cav * l_cav).sqrt();
    Ok(EffectiveParams {
        c_r_f: c_r,
        l_r_h: l_r,
        omega_r_rad_s: omega_r,
    })
}

/// First-order energy shift of resonator level n from the junction
/// nonlinearity, delta E_n = -(6n^2 + 6n + 3)/4 B_k^2 E_C in joules, with
/// B_k = (1/4) cos^2(x) / (1 + 2x/sin(2x)) and E_C = e^2/(2 C_r). The
/// shift is second order in the junction participation B_k; the linear
/// form overshoots the known sub-20-kHz anharmonicity of this geometry by
/// an order of magnitude.
pub fn level_shift_j(n: usize, x: f64, geo: &ResonatorGeometry) -> Result<f64> {
    let params = resonator_effective_params(x, geo)?;
    let nn = n as f64;
    let coeff = -(6.0 * nn * nn + 6.0 * nn + 3.0) / 4.0;
    let e_c = ELEMENTARY_CHARGE_C * ELEMENTARY_CHARGE_C / (2.0 * params.c_r_f);
    Ok(coeff * b_k(x).powi(2) * e_c)
}

/// B_k written as (1/4) cos^2(x) sin(2x) / (sin(2x) + 2x): identical to the
/// ratio form but finite at the half-wave points, where sin(2x) = 0 sends
/// the ratio denominator to infinity and B_k smoothly to zero. The
/// rewritten denominator sin(2x) + 2x is strictly positive for x > 0.
fn b_k(x: f64) -> f64 {
    let s = (2.0 * x).sin();
    0.25 * x.cos().powi(2) * s / (s + 2.0 * x)
}

/// Self-Kerr anharmonicity of the eigenmode at mode phase x, in rad/s:
/// alpha_r = [(dE_2 - dE_1) - (dE_1 - dE_0)] / hbar.
pub fn anharmonicity(x: f64, geo: &ResonatorGeometry) -> Result<f64> {
    let d0 = level_shift_j(0, x, geo)?;
    let d1 = level_shift_j(1, x, geo)?;
    let d2 = level_shift_j(2, x, geo)?;
    Ok(((d2 - d1) - (d1 - d0)) / REDUCED_PLANCK_JS)
}

/// Where the grounding inductor of the coupler sits relative to the
/// tunable junction. The schematic ordering is ambiguous, and only the
/// load-side placement lets the diverging junction inductance switch the
/// coupling off: with the shunt on the resonator side, the load-port
/// resonance stays pinned at the shunted-resonator mode and its slope (and
/// therefore the lifetime) is junction-independent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplerTopology {
    /// Grounding inductor taps the node between the junction and the
    /// stray inductance to the load. Reproduces the coupler's on/off flux
    /// point and the nanosecond-scale lifetime minimum.
    #[default]
    ShuntLoadSide,
    /// Grounding inductor taps the node between the resonator's SQUID
    /// inductance and the junction.
    ShuntResonatorSide,
}

/// Lumped parameters of the flux-tunable coupler and its load.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CouplerParams {
    /// Junction inductance at zero phase.
    pub junction_inductance_h: f64,
    /// Inductance from the coupler node to ground.
    pub ground_inductance_h: f64,
    /// Stray series inductance between the coupler and the load.
    pub stray_inductance_h: f64,
    /// Loop screening parameter multiplying sin(delta) in the flux map.
    pub beta: f64,
    /// Load resistance standing in for the matched waveguide.
    pub load_ohm: f64,
    pub topology: CouplerTopology,
}

impl Default for CouplerParams {
    fn default() -> Self {
        Self {
            junction_inductance_h: 0.6e-9,
            ground_inductance_h: 0.2e-9,
            stray_inductance_h: 0.1e-9,
            beta: 0.33,
            load_ohm: 50.0,
            topology: CouplerTopology::default(),
        }
    }
}

/// Junction phase delta for an external flux phi_ext (in units of the flux
/// quantum), solving delta + beta sin(delta) = 2 pi phi_ext. For beta < 1
/// the map is single-valued; larger beta is hysteretic and the returned
/// branch is the one containing delta = 0.
pub fn coupler_phase(phi_ext: f64, params: &CouplerParams) -> Result<f64> {
    if params.beta >= 1.0 {
        log::warn!(
            "loop screening beta = {} >= 1: flux map is multivalued, returning the central branch",
            params.beta
        );
    }
    let target = 2.0 * std::f64::consts::PI * phi_ext;
    let margin = params.beta.abs() + 0.1;
    bracketed_newton(
        |d| d + params.beta * d.sin() - target,
        |d| 1.0 + params.beta * d.cos(),
        target - margin,
        target + margin,
        1e-13,
        200,
    )
}

/// Flux-dependent junction inductance L_j0 / cos(delta). Negative values
/// are physical (they reverse the coupling sign); a phase near +-pi/2
/// diverges and is rejected.
pub fn junction_inductance(delta: f64, l_j0: f64) -> Result<f64> {
    const COS_FLOOR: f64 = 1e-9;
    let c = delta.cos();
    if c.abs() < COS_FLOOR {
        return Err(Error::DivergentInductance(COS_FLOOR));
    }
    Ok(l_j0 / c)
}

/// Input reactance of the C_g-terminated resonator line at angular
/// frequency omega, looking in from the SQUID end.
fn line_reactance(omega: f64, geo: &ResonatorGeometry) -> f64 {
    let z_t = geo.line_impedance_ohm();
    let theta = omega * geo.length_m / geo.wave_velocity_m_s();
    let x_load = -1.0 / (omega * geo.end_capacitance_f);
    let t = theta.tan();
    z_t * (x_load + z_t * t) / (z_t - x_load * t)
}

fn parallel_reactance(x1: f64, x2: f64) -> f64 {
    let den = x1 + x2;
    if den == 0.0 {
        return f64::INFINITY;
    }
    x1 * x2 / den
}

/// Imaginary part of the admittance the load sees, looking back into the
/// coupler and resonator, for a fixed junction inductance.
fn admittance_im(omega: f64, geo: &ResonatorGeometry, params: &CouplerParams, l_j: f64) -> f64 {
    let x_res = omega * geo.squid_inductance_h + line_reactance(omega, geo);
    let x_g = omega * params.ground_inductance_h;
    let x_total = match params.topology {
        CouplerTopology::ShuntResonatorSide => {
            omega * (params.stray_inductance_h + l_j) + parallel_reactance(x_g, x_res)
        }
        CouplerTopology::ShuntLoadSide => {
            omega * params.stray_inductance_h + parallel_reactance(x_g, omega * l_j + x_res)
        }
    };
    if x_total == 0.0 {
        return f64::INFINITY;
    }
    -1.0 / x_total
}

/// Resonance of the loaded circuit at one flux point.
#[derive(Clone, Copy, Debug)]
pub struct CircuitResonance {
    pub omega_p_rad_s: f64,
    /// Effective parallel capacitance at resonance.
    pub c_p_f: f64,
    pub q0: f64,
    pub t1_s: f64,
    /// Junction phase realizing this flux point.
    pub delta_rad: f64,
}

/// Default frequency search window for the circuit resonance, in Hz.
pub const DEFAULT_RESONANCE_WINDOW_HZ: (f64, f64) = (3.5e9, 4.5e9);

const RESONANCE_SCAN_POINTS: usize = 20_001;

/// Resonance frequency, quality factor, and lifetime of the resonator
/// loaded through the flux-tuned coupler: finds the lowest parallel
/// resonance (rising zero crossing of Im Y) inside the window, extracts
/// the effective capacitance C_p = (1/2) d(Im Y)/d omega there, and forms
/// Q_0 = omega_p Z_0 C_p and T1 = Q_0 / omega_p.
pub fn resonance_and_lifetime(
    phi_ext: f64,
    geo: &ResonatorGeometry,
    params: &CouplerParams,
    window_hz: Option<(f64, f64)>,
) -> Result<CircuitResonance> {
    geo.validate()?;
    let (lo_hz, hi_hz) = window_hz.unwrap_or(DEFAULT_RESONANCE_WINDOW_HZ);
    if !(lo_hz > 0.0 && hi_hz > lo_hz) {
        return Err(Error::Invalid(format!(
            "bad frequency window [{lo_hz:.4e}, {hi_hz:.4e}] Hz"
        )));
    }
    let delta = coupler_phase(phi_ext, params)?;
    let l_j = junction_inductance(delta, params.junction_inductance_h)?;
    let f = |omega: f64| admittance_im(omega, geo, params, l_j);

    let (w_lo, w_hi) = (
        2.0 * std::f64::consts::PI * lo_hz,
        2.0 * std::f64::consts::PI * hi_hz,
    );
    let dw = (w_hi - w_lo) / (RESONANCE_SCAN_POINTS - 1) as f64;
    let mut root = None;
    let mut prev = f(w_lo);
    for i in 1..RESONANCE_SCAN_POINTS {
        let w = w_lo + dw * i as f64;
        let cur = f(w);
        // parallel resonance: Im Y rises through zero
        if prev < 0.0 && cur >= 0.0 {
            root = Some(bisect(f, w - dw, w, 1e-14)?);
            break;
        }
        prev = cur;
    }
    let omega_p = root.ok_or(Error::NoRoot { lo_hz, hi_hz })?;
    let residual = f(omega_p).abs();
    if residual > 1e-9 {
        return Err(Error::Numerics(format!(
            "admittance root residual {residual:.3e} S exceeds tolerance"
        )));
    }
    let h = 1e-6 * omega_p;
    let c_p = 0.5 * (f(omega_p + h) - f(omega_p - h)) / (2.0 * h);
    if !(c_p > 0.0) || !c_p.is_finite() {
        return Err(Error::Numerics(format!(
            "admittance derivative at the root gives nonphysical capacitance {c_p:.3e} F"
        )));
    }
    let q0 = omega_p * params.load_ohm * c_p;
    Ok(CircuitResonance {
        omega_p_rad_s: omega_p,
        c_p_f: c_p,
        q0,
        t1_s: q0 / omega_p,
        delta_rad: delta,
    })
}

/// Rectangular cavity enclosing the circuit: a die or the package itself.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub a_m: f64,
    pub b_m: f64,
    pub d_m: f64,
    pub epsilon_r: f64,
    pub mu_r: f64,
}

impl BoxGeometry {
    /// Square sapphire die, 20 mm on a side.
    pub fn sapphire_die() -> Self {
        Self {
            a_m: 20e-3,
            b_m: 20e-3,
            d_m: 0.5e-3,
            epsilon_r: 11.4,
            mu_r: 1.0,
        }
    }

    /// Square vacuum enclosure, 27 mm on a side.
    pub fn vacuum_package() -> Self {
        Self {
            a_m: 27e-3,
            b_m: 27e-3,
            d_m: 5e-3,
            epsilon_r: 1.0,
            mu_r: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.a_m, self.b_m, self.d_m, self.epsilon_r, self.mu_r];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Invalid(
                "box geometry needs positive dimensions and material constants".into(),
            ));
        }
        Ok(())
    }
}

/// One rectangular-cavity mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxMode {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub f_hz: f64,
}

/// Rectangular cavity modes f_nml = c/(2 pi sqrt(mu_r eps_r)) sqrt((n
/// pi/a)^2 + (m pi/b)^2 + (l pi/d)^2) for all index triples up to
/// max_index with at least two nonzero indices, ascending in frequency.
pub fn box_modes(geo: &BoxGeometry, max_index: usize) -> Result<Vec<BoxMode>> {
    geo.validate()?;
    if max_index < 1 {
        return Err(Error::Invalid("max_index must be at least 1".into()));
    }
    let pref =
        SPEED_OF_LIGHT_M_S / (2.0 * std::f64::consts::PI * (geo.mu_r * geo.epsilon_r).sqrt());
    let mut modes = Vec::new();
    for n in 0..=max_index {
        for m in 0..=max_index {
            for l in 0..=max_index {
                let nonzero = [n, m, l].iter().filter(|&&i| i > 0).count();
                if nonzero < 2 {
                    continue;
                }
                let pi = std::f64::consts::PI;
                let k2 = (n as f64 * pi / geo.a_m).powi(2)
                    + (m as f64 * pi / geo.b_m).powi(2)
                    + (l as f64 * pi / geo.d_m).powi(2);
                modes.push(BoxMode {
                    n,
                    m,
                    l,
                    f_hz: pref * k2.sqrt(),
                });
            }
        }
    }
    modes.sort_by(|p, q| {
        p.f_hz
            .partial_cmp(&q.f_hz)
            .unwrap()
            .then((p.n, p.m, p.l).cmp(&(q.n, q.m, q.l)))
    });
    Ok(modes)
}
