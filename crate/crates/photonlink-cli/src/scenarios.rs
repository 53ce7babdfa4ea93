//! Scenario runners. Each takes the parsed configuration, drives the
//! library, writes CSV artifacts plus summary.json/manifest.json, and
//! returns the output directory.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use photonlink::cascade::{
    free_spectral_range_hz, rate_schedule, run_transfer, simulate_emit_recapture,
    simulate_standing_modes, NodeParams, WaveguideModel,
};
use photonlink::circuit::{
    anharmonicity, box_modes, resonance_and_lifetime, resonator_effective_params, BoxGeometry,
    CouplerParams, ResonatorGeometry,
};
use photonlink::hilbert::{expect, fidelity, fock, identity, kron, number, pure_density, purity};
use photonlink::jc::{prepare_noon, NoonConfig};
use photonlink::lindblad::Trajectory;
use photonlink::optimize::{optimize_release, EmissionObjective, PulseParameterization};
use photonlink::pulses::{flattop, optimal_release_kappa, sech_wavepacket, TimeGrid};
use photonlink::tomography::{
    displaced_fock_probabilities, displacement_grid, reconstruct_density_matrix, wigner,
    TomographyData, TomographyDataset,
};
use photonlink::C64;

use crate::config::{CircuitTask, ScenarioConfig, ScenarioKind, TomographyState};
use crate::output::{num, RunOutput};
use crate::CliError;

pub fn run_scenario(cfg: &ScenarioConfig, out: RunOutput) -> Result<PathBuf, CliError> {
    match cfg.scenario {
        ScenarioKind::Transfer => run_transfer_scenario(cfg, out),
        ScenarioKind::Modes => run_modes_scenario(cfg, out),
        ScenarioKind::EmitRecapture => run_emit_recapture_scenario(cfg, out),
        ScenarioKind::Noon => run_noon_scenario(cfg, out),
        ScenarioKind::Tomography => run_tomography_scenario(cfg, out),
        ScenarioKind::Circuit => run_circuit_scenario(cfg, out),
        ScenarioKind::Optimize => run_optimize_scenario(cfg, out),
    }
}

fn sim_err(e: photonlink::Error) -> CliError {
    CliError::Simulation(e.to_string())
}

fn parameters(cfg: &ScenarioConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// State vector |n> or (|0> + |n>)/sqrt(2) in `levels` dimensions.
fn initial_vector(
    levels: usize,
    photons: usize,
    superposition: bool,
) -> Result<DVector<C64>, CliError> {
    if photons + 1 > levels {
        return Err(CliError::Config(format!(
            "{photons} photons need at least {} resonator levels, got {levels}",
            photons + 1
        )));
    }
    let mut psi = fock(levels, photons).map_err(sim_err)?;
    if superposition {
        if photons == 0 {
            return Err(CliError::Config(
                "a superposition with the vacuum needs photons >= 1".into(),
            ));
        }
        psi[0] = C64::from(1.0);
        psi /= C64::from(2f64.sqrt());
    }
    Ok(psi)
}

fn timeline_rows(stage: &str, traj: &Trajectory, dims: (usize, usize)) -> Vec<Vec<String>> {
    let n_res = kron(&number(dims.0), &identity(dims.1));
    let n_line = kron(&identity(dims.0), &number(dims.1));
    let res = traj.expectation(&n_res);
    let line = traj.expectation(&n_line);
    traj.times
        .iter()
        .zip(res.iter().zip(&line))
        .map(|(&t, (&r, &l))| vec![stage.to_string(), num(t), num(r), num(l)])
        .collect()
}

fn run_transfer_scenario(cfg: &ScenarioConfig, mut out: RunOutput) -> Result<PathBuf, CliError> {
    let t = &cfg.transfer;
    let levels = cfg.device.resonator_levels;
    let psi = initial_vector(levels, t.photons, t.superposition)?;
    let rho0 = pure_density(&psi);

    let grid = TimeGrid::new(0.0, t.span_s, t.samples).map_err(sim_err)?;
    let envelope = sech_wavepacket(t.kappa_c_rad_s, t.t0_s, &grid).map_err(sim_err)?;
    let release =
        optimal_release_kappa(t.kappa_c_rad_s, t.kappa_m_rad_s, t.t0_s, &grid).map_err(sim_err)?;
    let emitter = NodeParams::lossless(levels, rate_schedule(&release));
    let receiver = NodeParams::lossless(levels, rate_schedule(&release.mirrored()));

    // Calibrate the line phase on a single-photon superposition first, then
    // run the requested state with the fitted compensation applied.
    let mut line_phase = t.line_phase_rad;
    if t.fit_line_phase {
        let cal_psi = initial_vector(levels, 1, true)?;
        let cal = run_transfer(
            &emitter,
            &receiver,
            &envelope,
            &pure_density(&cal_psi),
            line_phase,
            t.line_loss,
        )
        .map_err(sim_err)?;
        line_phase += photonlink::cascade::fit_line_phase(&cal.rho_receiver);
    }

    let result = run_transfer(
        &emitter,
        &receiver,
        &envelope,
        &rho0,
        line_phase,
        t.line_loss,
    )
    .map_err(sim_err)?;

    let mut rows = timeline_rows("emission", &result.emission, (levels, levels));
    rows.extend(timeline_rows("capture", &result.capture, (levels, levels)));
    out.write_csv(
        "transfer_timeline.csv",
        &["stage", "time_s", "resonator_population", "line_population"],
        rows,
    )?;
    out.write_density_csv("receiver_state.csv", &result.rho_receiver)?;

    let target = pure_density(&psi);
    let state_fidelity = fidelity(&result.rho_receiver, &target).map_err(sim_err)?;
    let mut results = BTreeMap::new();
    results.insert("efficiency".into(), json!(result.efficiency));
    results.insert(
        "released_population".into(),
        json!(result.released_population),
    );
    results.insert(
        "captured_population".into(),
        json!(result.captured_population),
    );
    results.insert("state_fidelity".into(), json!(state_fidelity));
    results.insert("line_phase_rad".into(), json!(line_phase));
    results.insert(
        "initial_population".into(),
        json!(expect(&rho0, &number(levels))),
    );
    out.finish("transfer", cfg.seed, parameters(cfg), results)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn run_modes_scenario(cfg: &ScenarioConfig, mut out: RunOutput) -> Result<PathBuf, CliError> {
    let m = &cfg.modes;
    let fsr = 2.0 * PI * m.fsr_hz;
    let g = 2.0 * PI * m.coupling_hz;
    let wg = WaveguideModel::new(m.n_modes, fsr, 0.0, g, m.mode_t1_s.unwrap_or(f64::INFINITY));
    let node = NodeParams::lossless(2, photonlink::lindblad::Schedule::constant(0.0));
    let rho0 = pure_density(&fock(2, 1).map_err(sim_err)?);
    let detunings: Vec<f64> = linspace(
        -2.0 * PI * m.detuning_span_hz,
        2.0 * PI * m.detuning_span_hz,
        m.detuning_points,
    );
    let holds = linspace(0.0, m.hold_max_s, m.hold_points);
    let map = simulate_standing_modes(&node, &wg, &detunings, &holds, &rho0).map_err(sim_err)?;

    let mut rows = Vec::with_capacity(detunings.len() * holds.len());
    let mut max_exchange: f64 = 0.0;
    for (i, &det) in map.detunings.iter().enumerate() {
        for (j, &h) in map.hold_times.iter().enumerate() {
            let p = map.population[i][j];
            max_exchange = max_exchange.max(1.0 - p);
            rows.push(vec![num(det / (2.0 * PI)), num(h), num(p)]);
        }
    }
    out.write_csv(
        "mode_population.csv",
        &["detuning_hz", "hold_time_s", "resonator_population"],
        rows,
    )?;

    let line_fsr = free_spectral_range_hz(cfg.device.line_length_m, cfg.device.line_epsilon_r);
    let mut results = BTreeMap::new();
    results.insert("max_population_exchange".into(), json!(max_exchange));
    results.insert("line_fsr_hz".into(), json!(line_fsr));
    results.insert(
        "mode_frequencies_hz".into(),
        json!(wg
            .mode_frequencies()
            .iter()
            .map(|f| f / (2.0 * PI))
            .collect::<Vec<_>>()),
    );
    out.finish("modes", cfg.seed, parameters(cfg), results)
}

fn run_emit_recapture_scenario(
    cfg: &ScenarioConfig,
    mut out: RunOutput,
) -> Result<PathBuf, CliError> {
    let e = &cfg.emit_recapture;
    let grid = TimeGrid::new(0.0, e.span_s, e.samples).map_err(sim_err)?;
    let release = flattop(e.release_width_s, e.rise_s, e.kappa_rad_s, &grid).map_err(sim_err)?;
    let node = NodeParams::lossless(
        cfg.device.resonator_levels,
        photonlink::lindblad::Schedule::constant(0.0),
    );
    let detunings = linspace(
        -2.0 * PI * e.detuning_span_hz,
        2.0 * PI * e.detuning_span_hz,
        e.detuning_points,
    );
    let map =
        simulate_emit_recapture(&node, &release, &detunings, &e.delays_s, None).map_err(sim_err)?;

    let mut rows = Vec::new();
    for (i, &det) in map.detunings.iter().enumerate() {
        for (j, &d) in map.delays.iter().enumerate() {
            rows.push(vec![
                num(det / (2.0 * PI)),
                num(d),
                num(map.fringe[i][j]),
                num(map.population[i][j]),
            ]);
        }
    }
    out.write_csv(
        "recapture_fringes.csv",
        &["detuning_hz", "delay_s", "fringe", "recaptured_population"],
        rows,
    )?;

    let flat: Vec<f64> = map.fringe.iter().flatten().copied().collect();
    let mut results = BTreeMap::new();
    results.insert("return_time_s".into(), json!(map.return_time));
    results.insert(
        "fringe_max".into(),
        json!(flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
    );
    results.insert(
        "fringe_min".into(),
        json!(flat.iter().cloned().fold(f64::INFINITY, f64::min)),
    );
    out.finish("emit_recapture", cfg.seed, parameters(cfg), results)
}

fn run_noon_scenario(cfg: &ScenarioConfig, mut out: RunOutput) -> Result<PathBuf, CliError> {
    let n = &cfg.noon;
    if !(n.photons == 1 || n.photons == 2) {
        return Err(CliError::Config(format!(
            "entangled-pair preparation supports 1 or 2 photons, got {}",
            n.photons
        )));
    }
    let levels = cfg.device.resonator_levels.max(n.photons + 1);
    let noon_cfg = NoonConfig {
        g: 2.0 * PI * cfg.device.qubit_coupling_hz,
        resonator_levels: levels,
        kappa_c: n.kappa_c_rad_s,
        kappa_m: n.kappa_m_rad_s,
        t0: n.t0_s,
        span: n.span_s,
        samples: n.samples,
        line_phase: n.line_phase_rad,
    };
    let outcome = prepare_noon(n.photons, &noon_cfg).map_err(sim_err)?;

    out.write_density_csv("joint_state.csv", &outcome.rho)?;
    let mut results = BTreeMap::new();
    results.insert("fidelity".into(), json!(outcome.fidelity));
    results.insert("line_phase_rad".into(), json!(outcome.line_phase));
    results.insert("double_occupancy".into(), json!(outcome.double_occupancy));
    results.insert("photons".into(), json!(n.photons));
    out.finish("noon", cfg.seed, parameters(cfg), results)
}

/// Standard-normal draw via Box-Muller on the uniform generator.
fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn tomography_true_state(
    state: TomographyState,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<C64>, CliError> {
    let need = match state {
        TomographyState::Vacuum => 1,
        TomographyState::SinglePhoton => 2,
        TomographyState::PlusZeroTwo => 3,
        TomographyState::Random => 2,
    };
    if dim < need {
        return Err(CliError::Config(format!(
            "reconstruction dim {dim} is too small for the requested state"
        )));
    }
    Ok(match state {
        TomographyState::Vacuum => pure_density(&fock(dim, 0).map_err(sim_err)?),
        TomographyState::SinglePhoton => pure_density(&fock(dim, 1).map_err(sim_err)?),
        TomographyState::PlusZeroTwo => {
            let mut psi = fock(dim, 0).map_err(sim_err)?;
            psi[2] = C64::from(1.0);
            psi /= C64::from(2f64.sqrt());
            pure_density(&psi)
        }
        TomographyState::Random => {
            let g = DMatrix::from_fn(dim, dim, |_, _| {
                C64::new(normal_draw(rng), normal_draw(rng))
            });
            let rho = &g * g.adjoint();
            let tr: f64 = (0..dim).map(|i| rho[(i, i)].re).sum();
            rho / C64::from(tr)
        }
    })
}

fn run_tomography_scenario(cfg: &ScenarioConfig, mut out: RunOutput) -> Result<PathBuf, CliError> {
    let t = &cfg.tomography;
    if t.n_max >= t.dim {
        return Err(CliError::Config(format!(
            "n_max = {} must be below the reconstruction dim {}",
            t.n_max, t.dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rho_true = tomography_true_state(t.state, t.dim, &mut rng)?;

    let displacements = displacement_grid(t.grid_half_extent, t.grid_points_per_side);
    let mut distributions = Vec::with_capacity(displacements.len());
    for &beta in &displacements {
        let mut p = displaced_fock_probabilities(&rho_true, beta, t.n_max).map_err(sim_err)?;
        if t.noise_sigma > 0.0 {
            for x in &mut p {
                *x += t.noise_sigma * normal_draw(&mut rng);
            }
        }
        distributions.push(p);
    }
    let dataset = TomographyDataset {
        displacements: displacements.clone(),
        n_max: t.n_max,
        data: TomographyData::FockDistributions { distributions },
    };
    let rho_fit = reconstruct_density_matrix(&dataset, t.dim)
        .map_err(|e| CliError::Reconstruction(e.to_string()))?;

    let alphas = displacement_grid(t.wigner_half_extent, t.wigner_points_per_side);
    let w_true = wigner(&rho_true, &alphas).map_err(sim_err)?;
    let w_fit = wigner(&rho_fit, &alphas).map_err(sim_err)?;
    let rows = alphas
        .iter()
        .zip(w_true.iter().zip(&w_fit))
        .map(|(a, (&wt, &wf))| vec![num(a.re), num(a.im), num(wt), num(wf)])
        .collect::<Vec<_>>();
    out.write_csv(
        "wigner_map.csv",
        &[
            "re_alpha",
            "im_alpha",
            "wigner_true",
            "wigner_reconstructed",
        ],
        rows,
    )?;
    out.write_density_csv("true_state.csv", &rho_true)?;
    out.write_density_csv("reconstructed_state.csv", &rho_fit)?;

    let f = fidelity(&rho_true, &rho_fit).map_err(sim_err)?;
    let mut results = BTreeMap::new();
    results.insert("fidelity".into(), json!(f));
    results.insert("purity_true".into(), json!(purity(&rho_true)));
    results.insert("purity_reconstructed".into(), json!(purity(&rho_fit)));
    results.insert("n_displacements".into(), json!(displacements.len()));
    out.finish("tomography", cfg.seed, parameters(cfg), results)
}

fn run_circuit_scenario(cfg: &ScenarioConfig, mut out: RunOutput) -> Result<PathBuf, CliError> {
    let c = &cfg.circuit;
    let geo = ResonatorGeometry::default();
    let params = CouplerParams::default();
    let mut results = BTreeMap::new();

    match c.task {
        CircuitTask::Boxmodes => {
            for (name, geo) in [
                ("die_modes.csv", BoxGeometry::sapphire_die()),
                ("package_modes.csv", BoxGeometry::vacuum_package()),
            ] {
                let modes = box_modes(&geo, c.max_box_index).map_err(sim_err)?;
                let rows = modes
                    .iter()
                    .map(|m| {
                        vec![
                            m.n.to_string(),
                            m.m.to_string(),
                            m.l.to_string(),
                            num(m.f_hz),
                        ]
                    })
                    .collect::<Vec<_>>();
                out.write_csv(name, &["n", "m", "l", "f_hz"], rows)?;
                let key = if name.starts_with("die") {
                    "die_lowest_mode_hz"
                } else {
                    "package_lowest_mode_hz"
                };
                results.insert(key.into(), json!(modes.first().map(|m| m.f_hz)));
            }
        }
        CircuitTask::Lifetime => {
            let window = Some((c.window_lo_hz, c.window_hi_hz));
            let fluxes = linspace(0.0, c.flux_max, c.flux_points);
            let mut rows = Vec::new();
            let mut best: Option<(f64, f64)> = None;
            let mut worst: Option<(f64, f64)> = None;
            let mut at_zero = None;
            for &phi in &fluxes {
                match resonance_and_lifetime(phi, &geo, &params, window) {
                    Ok(r) => {
                        if phi == 0.0 {
                            at_zero = Some(r.t1_s);
                        }
                        if best.is_none_or(|(_, t)| r.t1_s > t) {
                            best = Some((phi, r.t1_s));
                        }
                        if worst.is_none_or(|(_, t)| r.t1_s < t) {
                            worst = Some((phi, r.t1_s));
                        }
                        rows.push(vec![
                            num(phi),
                            num(r.omega_p_rad_s / (2.0 * PI)),
                            num(r.q0),
                            num(r.t1_s),
                            num(r.delta_rad),
                        ]);
                    }
                    Err(e) => log::warn!("flux {phi:.4}: {e}; row skipped"),
                }
            }
            if rows.is_empty() {
                return Err(CliError::Simulation(
                    "no resonance found anywhere in the flux sweep".into(),
                ));
            }
            out.write_csv(
                "lifetime_sweep.csv",
                &["phi_ext", "omega_p_hz", "q0", "t1_s", "delta_rad"],
                rows,
            )?;
            results.insert("t1_at_zero_flux_s".into(), json!(at_zero));
            if let Some((phi, t1)) = best {
                results.insert("t1_max_s".into(), json!(t1));
                results.insert("t1_max_flux".into(), json!(phi));
            }
            if let Some((phi, t1)) = worst {
                results.insert("t1_min_s".into(), json!(t1));
                results.insert("t1_min_flux".into(), json!(phi));
            }
        }
        CircuitTask::Anharmonicity => {
            let (lo, hi) = geo.mode_band();
            // stay strictly inside the band; the edges are where the mode
            // equation degenerates
            let xs = linspace(lo + 1e-3, hi - 1e-3, c.sweep_points);
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for &x in &xs {
                let eff = resonator_effective_params(x, &geo).map_err(sim_err)?;
                let alpha = anharmonicity(x, &geo).map_err(sim_err)?;
                worst = worst.max((alpha / (2.0 * PI)).abs());
                rows.push(vec![
                    num(x),
                    num(eff.omega_r_rad_s / (2.0 * PI)),
                    num(alpha / (2.0 * PI)),
                ]);
            }
            out.write_csv(
                "anharmonicity_sweep.csv",
                &["mode_phase_rad", "mode_frequency_hz", "anharmonicity_hz"],
                rows,
            )?;
            results.insert("max_abs_anharmonicity_hz".into(), json!(worst));
        }
    }
    out.finish("circuit", cfg.seed, parameters(cfg), results)
}

fn run_optimize_scenario(cfg: &ScenarioConfig, mut out: RunOutput) -> Result<PathBuf, CliError> {
    let o = &cfg.optimize;
    let mut param = PulseParameterization::new(o.n_knots, o.duration_s);
    param.max_rate = o.max_rate_rad_s;
    param.filter_sigma_s = o.filter_sigma_s;
    param
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let objective =
        EmissionObjective::sech_release(param.clone(), o.kappa_c_rad_s).map_err(sim_err)?;
    let report = optimize_release(&objective, o.budget, cfg.seed).map_err(sim_err)?;

    let mut header: Vec<String> = vec!["evaluation".into(), "value".into()];
    header.extend((0..o.n_knots).map(|k| format!("knot_{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = report
        .evaluations
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut row = vec![i.to_string(), num(rec.value)];
            row.extend(rec.knot_values.iter().map(|&v| num(v)));
            row
        })
        .collect::<Vec<_>>();
    out.write_csv("optimizer_trace.csv", &header_refs, rows)?;

    let wave = param.waveform(&report.best_knots).map_err(sim_err)?;
    let wave_rows = wave
        .times
        .iter()
        .zip(&wave.values)
        .map(|(&t, v)| vec![num(t), num(v.re)])
        .collect::<Vec<_>>();
    out.write_csv("best_waveform.csv", &["time_s", "rate_rad_s"], wave_rows)?;

    let mut results = BTreeMap::new();
    results.insert("best_value".into(), json!(report.best_value));
    results.insert("n_evaluations".into(), json!(report.evaluations.len()));
    results.insert(
        "method".into(),
        serde_json::to_value(report.method).unwrap_or(serde_json::Value::Null),
    );
    results.insert("best_knots".into(), json!(report.best_knots));
    out.finish("optimize", cfg.seed, parameters(cfg), results)
}
