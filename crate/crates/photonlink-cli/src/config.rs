//! Scenario configuration: a TOML document with explicit unit suffixes on
//! every physical quantity (_hz for cycles per second, _rad_s for angular
//! rates, _s for times, _m for lengths), strict rejection of unknown keys,
//! and dotted-path command-line overrides.

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Transfer,
    Modes,
    EmitRecapture,
    Noon,
    Tomography,
    Circuit,
    Optimize,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Transfer => "transfer",
            ScenarioKind::Modes => "modes",
            ScenarioKind::EmitRecapture => "emit_recapture",
            ScenarioKind::Noon => "noon",
            ScenarioKind::Tomography => "tomography",
            ScenarioKind::Circuit => "circuit",
            ScenarioKind::Optimize => "optimize",
        }
    }
}

/// Root configuration document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// Master seed for every random choice in the scenario.
    #[serde(default)]
    pub seed: u64,
    /// Where artifacts are written; default "photonlink-out/<scenario>".
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub transfer: TransferSection,
    #[serde(default)]
    pub modes: ModesSection,
    #[serde(default)]
    pub emit_recapture: EmitRecaptureSection,
    #[serde(default)]
    pub noon: NoonSection,
    #[serde(default)]
    pub tomography: TomographySection,
    #[serde(default)]
    pub circuit: CircuitSection,
    #[serde(default)]
    pub optimize: OptimizeSection,
}

/// Hardware constants shared across scenarios.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    /// Qubit-resonator exchange coupling g/2pi.
    pub qubit_coupling_hz: f64,
    /// Fock-space truncation of each transfer resonator.
    pub resonator_levels: usize,
    /// Physical length of the connecting waveguide.
    pub line_length_m: f64,
    /// Substrate dielectric constant setting the line's wave velocity.
    pub line_epsilon_r: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            qubit_coupling_hz: 6.8e6,
            resonator_levels: 3,
            line_length_m: 2.0,
            line_epsilon_r: 11.4,
        }
    }
}

/// Shaped release-and-catch of a resonator state across the line.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    /// Photon number of the initial Fock state.
    pub photons: usize,
    /// Send (|0> + |n>)/sqrt(2) instead of |n>.
    pub superposition: bool,
    /// Bandwidth of the traveling sech envelope.
    pub kappa_c_rad_s: f64,
    /// Release-rate plateau.
    pub kappa_m_rad_s: f64,
    /// Envelope center relative to the stage start.
    pub t0_s: f64,
    /// Duration of each stage.
    pub span_s: f64,
    /// Time-grid samples per stage.
    pub samples: usize,
    /// Fractional photon loss on the line.
    pub line_loss: f64,
    /// Fixed line phase; ignored when fit_line_phase is set.
    pub line_phase_rad: f64,
    /// Calibrate the line phase from a reference transfer first.
    pub fit_line_phase: bool,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            photons: 1,
            superposition: false,
            kappa_c_rad_s: 0.5e9,
            kappa_m_rad_s: 0.6e9,
            t0_s: 2.62e-9,
            span_s: 40e-9,
            samples: 801,
            line_loss: 0.0,
            line_phase_rad: 0.0,
            fit_line_phase: false,
        }
    }
}

/// Resonator sweeping across the standing-mode comb of the waveguide.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesSection {
    /// Standing modes kept in the simulation.
    pub n_modes: usize,
    /// Free spectral range of the comb.
    pub fsr_hz: f64,
    /// Resonator-mode coupling g_rw/2pi.
    pub coupling_hz: f64,
    /// Lifetime of each standing mode; omit for lossless.
    pub mode_t1_s: Option<f64>,
    /// Detuning sweep half-width.
    pub detuning_span_hz: f64,
    pub detuning_points: usize,
    /// Longest hold time.
    pub hold_max_s: f64,
    pub hold_points: usize,
}

impl Default for ModesSection {
    fn default() -> Self {
        Self {
            n_modes: 3,
            fsr_hz: 31e6,
            coupling_hz: 1.55e6,
            mode_t1_s: None,
            detuning_span_hz: 40e6,
            detuning_points: 81,
            hold_max_s: 400e-9,
            hold_points: 41,
        }
    }
}

/// Release a wavepacket, let it reflect, and recapture after a delay.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitRecaptureSection {
    /// Plateau of the rectangular release pulse.
    pub kappa_rad_s: f64,
    /// Width of the release pulse.
    pub release_width_s: f64,
    /// Rise/fall width of the release pulse edges.
    pub rise_s: f64,
    /// Stage duration.
    pub span_s: f64,
    pub samples: usize,
    /// Detuning sweep half-width applied during the delay.
    pub detuning_span_hz: f64,
    pub detuning_points: usize,
    /// Delays between release and recapture.
    pub delays_s: Vec<f64>,
}

impl Default for EmitRecaptureSection {
    fn default() -> Self {
        Self {
            kappa_rad_s: 2.0 * std::f64::consts::PI * 20e6,
            release_width_s: 30e-9,
            rise_s: 2e-9,
            span_s: 60e-9,
            samples: 601,
            detuning_span_hz: 60e6,
            detuning_points: 121,
            delays_s: vec![50e-9, 100e-9],
        }
    }
}

/// Entangled-pair preparation across the two nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoonSection {
    /// Photon number per branch of the entangled target (1 or 2).
    pub photons: usize,
    pub kappa_c_rad_s: f64,
    pub kappa_m_rad_s: f64,
    pub t0_s: f64,
    pub span_s: f64,
    pub samples: usize,
    /// Line phase to compensate; omit to fit it from the state itself.
    pub line_phase_rad: Option<f64>,
}

impl Default for NoonSection {
    fn default() -> Self {
        Self {
            photons: 1,
            kappa_c_rad_s: 0.5e9,
            kappa_m_rad_s: 0.6e9,
            t0_s: 2.62e-9,
            span_s: 40e-9,
            samples: 801,
            line_phase_rad: None,
        }
    }
}

/// States the tomography round-trip scenario can prepare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TomographyState {
    Vacuum,
    SinglePhoton,
    /// (|0> + |2>)/sqrt(2)
    PlusZeroTwo,
    /// Random full-rank density matrix drawn from the seed.
    Random,
}

/// Synthesize displaced photon statistics for a known state, reconstruct,
/// and compare.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographySection {
    pub state: TomographyState,
    /// Reconstruction space dimension.
    pub dim: usize,
    /// Highest photon number resolved by the readout.
    pub n_max: usize,
    /// Half-extent of the square displacement grid.
    pub grid_half_extent: f64,
    pub grid_points_per_side: usize,
    /// Gaussian noise added to each synthetic probability.
    pub noise_sigma: f64,
    /// Wigner map half-extent for the reconstructed state.
    pub wigner_half_extent: f64,
    pub wigner_points_per_side: usize,
}

impl Default for TomographySection {
    fn default() -> Self {
        Self {
            state: TomographyState::PlusZeroTwo,
            dim: 5,
            n_max: 4,
            grid_half_extent: 1.8,
            grid_points_per_side: 5,
            noise_sigma: 0.0,
            wigner_half_extent: 2.5,
            wigner_points_per_side: 41,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitTask {
    Boxmodes,
    Lifetime,
    Anharmonicity,
}

/// Classical circuit calculators.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitSection {
    pub task: CircuitTask,
    /// Flux sweep upper end, in flux quanta (lifetime task).
    pub flux_max: f64,
    pub flux_points: usize,
    /// Admittance-root search window (lifetime task).
    pub window_lo_hz: f64,
    pub window_hi_hz: f64,
    /// Mode-phase sweep points across the operating band (anharmonicity).
    pub sweep_points: usize,
    /// Highest cavity index per axis (boxmodes task).
    pub max_box_index: usize,
}

impl Default for CircuitSection {
    fn default() -> Self {
        Self {
            task: CircuitTask::Boxmodes,
            flux_max: 0.5,
            flux_points: 121,
            window_lo_hz: 2.0e9,
            window_hi_hz: 6.0e9,
            sweep_points: 201,
            max_box_index: 2,
        }
    }
}

/// Budgeted search for a release waveform.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub n_knots: usize,
    pub duration_s: f64,
    /// Bandwidth of the sech target the release should fill.
    pub kappa_c_rad_s: f64,
    /// Ceiling on the instantaneous coupler rate.
    pub max_rate_rad_s: f64,
    pub filter_sigma_s: f64,
    /// Objective evaluations allowed.
    pub budget: usize,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            n_knots: 6,
            duration_s: 84e-9,
            kappa_c_rad_s: 2.5e8,
            max_rate_rad_s: photonlink::optimize::DEFAULT_MAX_RATE,
            filter_sigma_s: 3e-9,
            budget: 60,
        }
    }
}

/// Parse a config document, apply `key=value` overrides (dotted paths into
/// the TOML tree), and deserialize strictly.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    let value = toml::Value::Table(doc);
    ScenarioConfig::deserialize(value)
        .map_err(|e| CliError::Config(format!("config validation error: {e}")))
}

fn apply_override(doc: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{item}' is not KEY=VALUE")))?;
    let value = parse_override_value(raw);
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!(
            "override path '{path}' has empty segments"
        )));
    }
    let mut table = doc;
    for seg in &segments[..segments.len() - 1] {
        table = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Config(format!("override path '{path}' crosses a non-table value"))
            })?;
    }
    table.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Interpret an override value with TOML literal syntax, falling back to a
/// bare string (so --set circuit.task=lifetime needs no quoting).
fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
