//! Qubit-resonator control layer: a three-level transmon (g, e, f) exchanges
//! excitations with its storage resonator through a Jaynes-Cummings coupling.
//! Microwave drives are fast against the swap timescale and enter as
//! instantaneous block rotations on one addressed transition; number-state
//! ladders, superpositions, and entangled two-node states are built from
//! short sequences of drives and timed swaps, optionally interleaved with
//! the itinerant-photon transfer from the cascade layer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cascade::{
    build_stage, capture_coupling, emitted_envelope, rate_schedule, release_truncation_time,
    run_stage, truncate_rate, NodeParams, Stage,
};
use crate::hilbert::{
    create, destroy, embed, fidelity_to_pure, fock, identity, kron, permute_factors, ptrace,
    pure_density,
};
use crate::linalg::expm;
use crate::lindblad::{LindbladSystem, Tolerances};
use crate::pulses::{optimal_release_kappa, PulseShape, TimeGrid};
use crate::{Error, Result, C64};

/// Number of transmon levels tracked (ground, excited, second excited).
pub const QUBIT_LEVELS: usize = 3;

/// Default qubit-resonator coupling strength, rad/s.
pub const DEFAULT_COUPLING: f64 = 2.0 * std::f64::consts::PI * 6.8e6;

/// Transmon anharmonicity that spectrally separates the two transitions,
/// rad/s. Drives address a transition by label; in the rotating frame of
/// each drive the offset itself never enters the dynamics, so this constant
/// exists for reporting and frequency bookkeeping only.
pub const DEFAULT_ANHARMONICITY: f64 = -2.0 * std::f64::consts::PI * 192e6;

/// Which transmon transition a drive or swap addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Ground to first excited state.
    Ge,
    /// First to second excited state (matrix element sqrt(2) larger).
    Ef,
}

/// How the swap durations of multi-photon sequences are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapTiming {
    /// Each swap runs for pi/2 over its actual matrix element, so every
    /// step is a complete population transfer (default).
    #[default]
    Calibrated,
    /// The two-photon ladder runs its final ge swap for the bare
    /// single-photon duration, as idealized schedules often quote it.
    Nominal,
}

/// One element of a control sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceStep {
    /// Instantaneous rotation by `theta` about the axis set by `phi` on one
    /// transition.
    Drive {
        transition: Transition,
        theta: f64,
        phi: f64,
    },
    /// Resonant qubit-resonator exchange for `duration_s` seconds. A
    /// negative duration runs the exchange backwards (the algebraic
    /// inverse, useful for sequence reversal).
    Swap {
        transition: Transition,
        duration_s: f64,
    },
}

impl SequenceStep {
    /// The step that undoes this one.
    pub fn inverse(&self) -> SequenceStep {
        match *self {
            SequenceStep::Drive {
                transition,
                theta,
                phi,
            } => SequenceStep::Drive {
                transition,
                theta: -theta,
                phi,
            },
            SequenceStep::Swap {
                transition,
                duration_s,
            } => SequenceStep::Swap {
                transition,
                duration_s: -duration_s,
            },
        }
    }
}

/// Duration of a complete single-quantum exchange through the ge transition
/// when the resonator moves between n-1 and n photons: pi / (2 g sqrt(n)).
pub fn swap_time(n_photons: usize, g: f64) -> f64 {
    std::f64::consts::PI / (2.0 * g * (n_photons as f64).sqrt())
}

/// Lowering operator of one addressed transition, including its physical
/// matrix element (the ef element carries the harmonic-ladder sqrt(2)).
pub fn transition_lowering(transition: Transition) -> DMatrix<C64> {
    let mut s = DMatrix::<C64>::zeros(QUBIT_LEVELS, QUBIT_LEVELS);
    match transition {
        Transition::Ge => s[(0, 1)] = C64::from(1.0),
        Transition::Ef => s[(1, 2)] = C64::from(2f64.sqrt()),
    }
    s
}

/// Instantaneous drive rotation on one transition:
/// R(theta, phi) = exp(-i theta/2 (e^{i phi} s- + e^{-i phi} s+)) with s-
/// the unit-element block lowering operator, so
/// R|g> = cos(theta/2)|g> - i sin(theta/2) e^{-i phi}|e> on the ge block.
pub fn drive_rotation(transition: Transition, theta: f64, phi: f64) -> DMatrix<C64> {
    let (lo, hi) = match transition {
        Transition::Ge => (0, 1),
        Transition::Ef => (1, 2),
    };
    let mut r = identity(QUBIT_LEVELS);
    let c = C64::from((theta / 2.0).cos());
    let s = (theta / 2.0).sin();
    r[(lo, lo)] = c;
    r[(hi, hi)] = c;
    r[(lo, hi)] = C64::new(0.0, -s) * C64::new(0.0, phi).exp();
    r[(hi, lo)] = C64::new(0.0, -s) * C64::new(0.0, -phi).exp();
    r
}

/// One transmon-resonator node driven by instantaneous pulses and resonant
/// swaps; all sequence dynamics are unitary (loss channels belong to the
/// transfer layer, where the slow itinerant operations live).
#[derive(Clone, Debug)]
pub struct JcNode {
    /// Qubit-resonator coupling, rad/s.
    pub g: f64,
    /// Resonator Fock truncation (number of levels).
    pub resonator_levels: usize,
}

impl JcNode {
    pub fn new(g: f64, resonator_levels: usize) -> Result<Self> {
        if g <= 0.0 {
            return Err(Error::Domain(format!("coupling must be positive, got {g}")));
        }
        if resonator_levels < 2 {
            return Err(Error::Dimension(format!(
                "resonator needs >= 2 levels, got {resonator_levels}"
            )));
        }
        Ok(JcNode {
            g,
            resonator_levels,
        })
    }

    /// Total dimension of the qubit (x) resonator space.
    pub fn dim(&self) -> usize {
        QUBIT_LEVELS * self.resonator_levels
    }

    /// Exchange Hamiltonian with only the addressed transition coupled:
    /// H = g (s+ a + s- a^dag), qubit factor first.
    pub fn swap_hamiltonian(&self, transition: Transition) -> DMatrix<C64> {
        let s = transition_lowering(transition);
        let l = self.resonator_levels;
        let h = kron(&s.adjoint(), &destroy(l)) + kron(&s, &create(l));
        h * C64::from(self.g)
    }

    /// Unitary for one sequence step on the qubit (x) resonator space.
    pub fn step_unitary(&self, step: &SequenceStep) -> DMatrix<C64> {
        match *step {
            SequenceStep::Drive {
                transition,
                theta,
                phi,
            } => kron(
                &drive_rotation(transition, theta, phi),
                &identity(self.resonator_levels),
            ),
            SequenceStep::Swap {
                transition,
                duration_s,
            } => {
                let h = self.swap_hamiltonian(transition) * C64::new(0.0, -duration_s);
                expm(&h)
            }
        }
    }

    /// Run a sequence on a density matrix of the joint space.
    pub fn apply_sequence(
        &self,
        rho0: &DMatrix<C64>,
        steps: &[SequenceStep],
    ) -> Result<DMatrix<C64>> {
        let d = self.dim();
        if rho0.nrows() != d || rho0.ncols() != d {
            return Err(Error::Dimension(format!(
                "state is {}x{}, node dimension is {d}",
                rho0.nrows(),
                rho0.ncols()
            )));
        }
        let mut rho = rho0.clone();
        for step in steps {
            let u = self.step_unitary(step);
            rho = &u * rho * u.adjoint();
        }
        Ok(rho)
    }

    /// Joint ground state |g, 0>.
    pub fn ground_state(&self) -> DMatrix<C64> {
        let psi = crate::hilbert::kron_vec(
            &fock(QUBIT_LEVELS, 0).expect("qubit ground exists"),
            &fock(self.resonator_levels, 0).expect("resonator vacuum exists"),
        );
        pure_density(&psi)
    }

    /// Climb the resonator to Fock state |n> and return its reduced state.
    pub fn prepare_fock(&self, n: usize) -> Result<DMatrix<C64>> {
        let steps = fock_sequence(n, self.g)?;
        if n >= self.resonator_levels {
            return Err(Error::Dimension(format!(
                "Fock |{n}> does not fit in {} resonator levels",
                self.resonator_levels
            )));
        }
        let rho = self.apply_sequence(&self.ground_state(), &steps)?;
        ptrace(&rho, &[QUBIT_LEVELS, self.resonator_levels], &[1])
    }

    /// Prepare (|0> + |n>)/sqrt(2) in the resonator, n in {1, 2}, and
    /// return its reduced state.
    pub fn prepare_superposition(&self, n: usize, timing: SwapTiming) -> Result<DMatrix<C64>> {
        let steps = superposition_sequence(n, self.g, timing)?;
        if n >= self.resonator_levels {
            return Err(Error::Dimension(format!(
                "superposition with |{n}> does not fit in {} resonator levels",
                self.resonator_levels
            )));
        }
        let rho = self.apply_sequence(&self.ground_state(), &steps)?;
        ptrace(&rho, &[QUBIT_LEVELS, self.resonator_levels], &[1])
    }

    /// Excited-state probability of the qubit, initially in |g>, after
    /// exchanging with the resonator state `rho_resonator` for each hold
    /// time: the photon-number components beat as P_e(t) =
    /// sum_n P_n sin^2(sqrt(n) g t).
    pub fn rabi_trace(&self, rho_resonator: &DMatrix<C64>, times: &[f64]) -> Result<Vec<f64>> {
        let l = self.resonator_levels;
        if rho_resonator.nrows() != l || rho_resonator.ncols() != l {
            return Err(Error::Dimension(format!(
                "resonator state is {}x{}, node has {l} levels",
                rho_resonator.nrows(),
                rho_resonator.ncols()
            )));
        }
        let rho0 = kron(&pure_density(&fock(QUBIT_LEVELS, 0)?), rho_resonator);
        let h = self.swap_hamiltonian(Transition::Ge);
        let (evals, vecs) = crate::linalg::eigh(&h);
        let rho_eig = vecs.adjoint() * &rho0 * &vecs;
        let mut e_proj = DMatrix::<C64>::zeros(QUBIT_LEVELS, QUBIT_LEVELS);
        e_proj[(1, 1)] = C64::from(1.0);
        let p_e_op = kron(&e_proj, &identity(l));
        let p_e_eig = vecs.adjoint() * &p_e_op * &vecs;
        let n = h.nrows();
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            // tr(P U rho U^dag) in the eigenbasis
            let mut acc = C64::from(0.0);
            for a in 0..n {
                for b in 0..n {
                    let phase = C64::new(0.0, -(evals[a] - evals[b]) * t).exp();
                    acc += p_e_eig[(b, a)] * phase * rho_eig[(a, b)];
                }
            }
            out.push(acc.re);
        }
        Ok(out)
    }
}

/// Drive-and-swap ladder that walks the resonator from vacuum to |n>.
pub fn fock_sequence(n: usize, g: f64) -> Result<Vec<SequenceStep>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut steps = Vec::with_capacity(2 * n);
    for k in 1..=n {
        steps.push(SequenceStep::Drive {
            transition: Transition::Ge,
            theta: std::f64::consts::PI,
            phi: std::f64::consts::PI,
        });
        steps.push(SequenceStep::Swap {
            transition: Transition::Ge,
            duration_s: swap_time(k, g),
        });
    }
    Ok(steps)
}

/// Sequence preparing (|0> + |n>)/sqrt(2) in the resonator for n in {1, 2}.
/// The single-photon case is a half rotation followed by a full swap; the
/// two-photon case parks half the amplitude in |f> and walks it down the
/// ladder, leaving |0> untouched.
pub fn superposition_sequence(n: usize, g: f64, timing: SwapTiming) -> Result<Vec<SequenceStep>> {
    let pi = std::f64::consts::PI;
    match n {
        1 => Ok(vec![
            SequenceStep::Drive {
                transition: Transition::Ge,
                theta: pi / 2.0,
                phi: pi,
            },
            SequenceStep::Swap {
                transition: Transition::Ge,
                duration_s: swap_time(1, g),
            },
        ]),
        2 => {
            let ge_swap = match timing {
                // |e,1> <-> |g,2> exchanges through a sqrt(2) g element
                SwapTiming::Calibrated => swap_time(2, g),
                SwapTiming::Nominal => swap_time(1, g),
            };
            Ok(vec![
                SequenceStep::Drive {
                    transition: Transition::Ge,
                    theta: pi / 2.0,
                    phi: pi,
                },
                SequenceStep::Drive {
                    transition: Transition::Ef,
                    theta: pi,
                    phi: pi,
                },
                SequenceStep::Swap {
                    transition: Transition::Ef,
                    duration_s: swap_time(2, g),
                },
                SequenceStep::Swap {
                    transition: Transition::Ge,
                    duration_s: ge_swap,
                },
            ])
        }
        _ => Err(Error::Domain(format!(
            "superposition ladder is defined for n in {{1, 2}}, got {n}"
        ))),
    }
}

/// Configuration of the entangled two-node preparation.
#[derive(Clone, Debug)]
pub struct NoonConfig {
    /// Qubit-resonator coupling at both nodes, rad/s.
    pub g: f64,
    /// Resonator truncation at both nodes (>= n+1 for an n-photon target).
    pub resonator_levels: usize,
    /// Bandwidth of the released wavepacket, rad/s.
    pub kappa_c: f64,
    /// Release-rate plateau, rad/s.
    pub kappa_m: f64,
    /// Packet center offset from the stage start, seconds.
    pub t0: f64,
    /// Duration of each transfer stage, seconds.
    pub span: f64,
    /// Samples per stage grid.
    pub samples: usize,
    /// Phase picked up on the line; None fits the phase that maximizes the
    /// target fidelity.
    pub line_phase: Option<f64>,
}

impl Default for NoonConfig {
    fn default() -> Self {
        NoonConfig {
            g: DEFAULT_COUPLING,
            resonator_levels: 3,
            kappa_c: 0.5e9,
            kappa_m: 0.6e9,
            t0: 2.62e-9,
            span: 40e-9,
            samples: 801,
            line_phase: None,
        }
    }
}

/// Result of an entangled-state preparation.
#[derive(Clone, Debug)]
pub struct NoonOutcome {
    /// Reduced state of (resonator 1 (x) resonator 2).
    pub rho: DMatrix<C64>,
    /// Fidelity against (|n,0> - |0,n>)/sqrt(2).
    pub fidelity: f64,
    /// Line phase actually applied (the fitted value when none was given).
    pub line_phase: f64,
    /// Population of the |1,1> component, which the target excludes.
    pub double_occupancy: f64,
}

/// The antisymmetric two-mode target (|n,0> - |0,n>)/sqrt(2).
pub fn noon_target(n: usize, levels: usize) -> Result<DVector<C64>> {
    if n == 0 || n >= levels {
        return Err(Error::Dimension(format!(
            "target photon number {n} must fit in {levels} levels"
        )));
    }
    let mut psi = DVector::<C64>::zeros(levels * levels);
    psi[n * levels] = C64::from(1.0 / 2f64.sqrt());
    psi[n] = C64::from(-1.0 / 2f64.sqrt());
    Ok(psi)
}

fn noon_stage_grid(cfg: &NoonConfig) -> Result<TimeGrid> {
    TimeGrid::new(0.0, cfg.span, cfg.samples)
}

/// Entangle the two remote resonators in (|n,0> - |0,n>)/sqrt(2).
///
/// n = 1 shares a single photon: the sender releases exactly half of a
/// stored photon and the receiver catches the traveling half, leaving the
/// two resonators holding one delocalized excitation.
///
/// n = 2 routes entanglement through the qubits: half a quantum swaps from
/// qubit 1 into resonator 1, travels to node 2 and is parked in qubit 2,
/// after which both qubits climb their local ladders, turning
/// (|eg> - |ge>) of the qubits into (|2,0> - |0,2>) of the resonators.
pub fn prepare_noon(n: usize, cfg: &NoonConfig) -> Result<NoonOutcome> {
    match n {
        1 => prepare_noon_single(cfg),
        2 => prepare_noon_double(cfg),
        _ => Err(Error::Domain(format!(
            "entangled preparation is defined for n in {{1, 2}}, got {n}"
        ))),
    }
}

/// Emission stage with `left_dim` spectator levels in front: the stage
/// operators act on (node (x) virtual) and are padded on the left.
fn lifted_stage(
    node: &NodeParams,
    envelope: &PulseShape,
    stage: Stage,
    left_dim: usize,
) -> Result<(LindbladSystem, usize)> {
    let ts = build_stage(node, envelope, stage, Some(node.truncation))?;
    let stage_dim = ts.dims.0 * ts.dims.1;
    let mut sys = LindbladSystem::new(left_dim * stage_dim, ts.sys.t_span);
    let pad = identity(left_dim);
    for term in &ts.sys.h_terms {
        sys.add_h_term(term.coeff.clone(), kron(&pad, &term.op));
    }
    for coll in &ts.sys.collapse {
        let parts = coll
            .parts
            .iter()
            .map(|(sched, op)| (sched.clone(), kron(&pad, op)))
            .collect();
        sys.add_collapse(crate::lindblad::CollapseTerm { parts });
    }
    Ok((sys, stage_dim))
}

fn prepare_noon_single(cfg: &NoonConfig) -> Result<NoonOutcome> {
    let l = cfg.resonator_levels;
    if l < 2 {
        return Err(Error::Dimension(
            "single-photon target needs >= 2 resonator levels".into(),
        ));
    }
    let grid = noon_stage_grid(cfg)?;
    let kappa = optimal_release_kappa(cfg.kappa_c, cfg.kappa_m, cfg.t0, &grid)?;
    let t_half = release_truncation_time(&kappa, 0.5)?;
    let half_rate = truncate_rate(&kappa, t_half);
    let (packet, released) = emitted_envelope(&half_rate)?;
    if (released - 0.5).abs() > 5e-3 {
        return Err(Error::Numerics(format!(
            "half release calibrated poorly: fraction {released:.4}"
        )));
    }

    // Release half the photon from resonator 1 into the packet.
    let sender = NodeParams::lossless(l, rate_schedule(&half_rate));
    let em = build_stage(&sender, &packet, Stage::Emission, Some(l))?;
    let rho0 = kron(&pure_density(&fock(l, 1)?), &pure_density(&fock(l, 0)?));
    let emission = run_stage(&em, &rho0, 2, Tolerances::default())?;
    let rho_joint = emission.final_state(); // (R1, u)

    // Hand the traveling mode to the catch stage with R1 as spectator. The
    // catch rate must be the matched absorber of the incoming packet,
    // |v(t)|^2 / int_0^t |v|^2: a rate that merely mirrors the interrupted
    // release pulse integrates to ln 2 and can never absorb more than half
    // of what arrives (captured fraction 1 - e^{-int rate}).
    let arriving = packet.mirrored();
    let g_v = capture_coupling(&arriving)?;
    let catch_rate = g_v.conj().product(&g_v);
    let catcher = NodeParams::lossless(l, catch_rate);
    let (cap_sys, _) = lifted_stage(&catcher, &arriving, Stage::Capture, l)?;
    // (R1, u) (x) vac_R2, reordered to (R1, R2, v)
    let with_r2 = kron(rho_joint, &pure_density(&fock(l, 0)?));
    let rho_cap0 = permute_factors(&with_r2, &[l, l, l], &[0, 2, 1])?;
    let out_times = [cap_sys.t_span.1];
    let capture = crate::lindblad::evolve(&cap_sys, &rho_cap0, &out_times, Tolerances::default())?;
    let rho_pair = ptrace(capture.final_state(), &[l, l, l], &[0, 1])?;

    finish_noon(rho_pair, 1, cfg, l)
}

fn prepare_noon_double(cfg: &NoonConfig) -> Result<NoonOutcome> {
    let l = cfg.resonator_levels;
    if l < 3 {
        return Err(Error::Dimension(
            "two-photon target needs >= 3 resonator levels".into(),
        ));
    }
    let q = QUBIT_LEVELS;
    let pi = std::f64::consts::PI;
    let node = JcNode::new(cfg.g, l)?;

    // Qubit 1: half a quantum into resonator 1.
    let prep = [
        SequenceStep::Drive {
            transition: Transition::Ge,
            theta: pi,
            phi: pi,
        },
        SequenceStep::Swap {
            transition: Transition::Ge,
            duration_s: swap_time(1, cfg.g) / 2.0,
        },
    ];
    let rho_q1r1 = node.apply_sequence(&node.ground_state(), &prep)?; // (q1, R1)

    // Send resonator 1's half photon across the line.
    let grid = noon_stage_grid(cfg)?;
    let kappa = optimal_release_kappa(cfg.kappa_c, cfg.kappa_m, cfg.t0, &grid)?;
    let (packet, _released) = emitted_envelope(&kappa)?;
    let sender = NodeParams::lossless(l, rate_schedule(&kappa));
    let (em_sys, _) = lifted_stage(&sender, &packet, Stage::Emission, q)?;
    let rho_em0 = kron(&rho_q1r1, &pure_density(&fock(l, 0)?)); // (q1, R1, u)
    let t_end = [em_sys.t_span.1];
    let emission = crate::lindblad::evolve(&em_sys, &rho_em0, &t_end, Tolerances::default())?;

    // Catch into resonator 2, spectators q1 and R1.
    let catcher = NodeParams::lossless(l, rate_schedule(&kappa.mirrored()));
    let (cap_sys, _) = lifted_stage(&catcher, &packet.mirrored(), Stage::Capture, q * l)?;
    let with_r2 = kron(emission.final_state(), &pure_density(&fock(l, 0)?));
    // (q1, R1, u, R2) -> (q1, R1, R2, v)
    let rho_cap0 = permute_factors(&with_r2, &[q, l, l, l], &[0, 1, 3, 2])?;
    let capture = crate::lindblad::evolve(&cap_sys, &rho_cap0, &t_end, Tolerances::default())?;
    let rho_mid = ptrace(capture.final_state(), &[q, l, l, l], &[0, 1, 2])?; // (q1, R1, R2)

    // The line phase acts on the single traveling photon, so it can be
    // applied to resonator 2 right after the catch; the rest of the
    // preparation is the cheap unitary tail, re-run once if the phase is
    // fitted from a first pass.
    let tail = |phase: f64| -> Result<DMatrix<C64>> {
        let mut rho = rho_mid.clone();
        if phase != 0.0 {
            let rot = embed(&phase_rotation(l, phase), &[q, l, l], 2)?;
            rho = &rot * rho * rot.adjoint();
        }
        // attach qubit 2 in its ground state: (q1, R1, R2, q2)
        let mut rho4 = kron(&rho, &pure_density(&fock(q, 0)?));
        let dims4 = [q, l, l, q];

        // park the received photon in qubit 2
        let u_swap2 = node_unitary_resonator_first(&node, Transition::Ge, swap_time(1, cfg.g));
        let u = kron(&identity(q * l), &u_swap2);
        rho4 = &u * rho4 * u.adjoint();

        // raise both qubits to the f manifold and climb down the ladder
        let drive_ef = drive_rotation(Transition::Ef, pi, pi);
        let u = embed(&drive_ef, &dims4, 0)?;
        rho4 = &u * rho4 * u.adjoint();
        let u = embed(&drive_ef, &dims4, 3)?;
        rho4 = &u * rho4 * u.adjoint();

        let tau_ladder = swap_time(2, cfg.g);
        for (transition, dur) in [(Transition::Ef, tau_ladder), (Transition::Ge, tau_ladder)] {
            let u1 = kron(
                &node.step_unitary(&SequenceStep::Swap {
                    transition,
                    duration_s: dur,
                }),
                &identity(l * q),
            );
            rho4 = &u1 * rho4 * u1.adjoint();
            let u2 = kron(
                &identity(q * l),
                &node_unitary_resonator_first(&node, transition, dur),
            );
            rho4 = &u2 * rho4 * u2.adjoint();
        }
        ptrace(&rho4, &dims4, &[1, 2])
    };

    let phase = match cfg.line_phase {
        Some(p) => p,
        None => {
            let probe = tail(0.0)?;
            fit_pair_phase(&probe, 2, l)
        }
    };
    let rho_pair = tail(phase)?;
    finish_noon_with_phase(rho_pair, 2, l, phase)
}

/// Swap unitary on a (resonator, qubit) ordered pair.
fn node_unitary_resonator_first(
    node: &JcNode,
    transition: Transition,
    duration: f64,
) -> DMatrix<C64> {
    let s = transition_lowering(transition);
    let l = node.resonator_levels;
    let h = (kron(&destroy(l), &s.adjoint()) + kron(&create(l), &s)) * C64::from(node.g);
    expm(&(h * C64::new(0.0, -duration)))
}

fn phase_rotation(levels: usize, phase: f64) -> DMatrix<C64> {
    DMatrix::<C64>::from_fn(levels, levels, |i, j| {
        if i == j {
            C64::new(0.0, phase * i as f64).exp()
        } else {
            C64::from(0.0)
        }
    })
}

/// Phase that rotates the |n,0><0,n| coherence of a two-mode state onto the
/// negative real axis, as the antisymmetric target requires.
fn fit_pair_phase(rho_pair: &DMatrix<C64>, n: usize, levels: usize) -> f64 {
    let c = rho_pair[(n * levels, n)];
    if c.norm() == 0.0 {
        0.0
    } else {
        c.arg() - std::f64::consts::PI
    }
}

fn finish_noon(
    rho_pair: DMatrix<C64>,
    n: usize,
    cfg: &NoonConfig,
    levels: usize,
) -> Result<NoonOutcome> {
    let phase = match cfg.line_phase {
        Some(p) => p,
        None => fit_pair_phase(&rho_pair, n, levels),
    };
    let rot = kron(&identity(levels), &phase_rotation(levels, phase));
    let rotated = &rot * rho_pair * rot.adjoint();
    finish_noon_with_phase(rotated, n, levels, phase)
}

fn finish_noon_with_phase(
    rho_pair: DMatrix<C64>,
    n: usize,
    levels: usize,
    phase: f64,
) -> Result<NoonOutcome> {
    let target = noon_target(n, levels)?;
    let fidelity = fidelity_to_pure(&rho_pair, &target)?;
    let double_occupancy = rho_pair[(levels + 1, levels + 1)].re;
    Ok(NoonOutcome {
        rho: rho_pair,
        fidelity,
        line_phase: phase,
        double_occupancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::kron_vec;
    use proptest::prelude::*;

    fn plain_g() -> f64 {
        DEFAULT_COUPLING
    }

    #[test]
    fn swap_time_single_photon() {
        let t = swap_time(1, plain_g());
        assert!(
            (t - 36.8e-9).abs() < 0.1e-9,
            "single-photon swap time {:.3} ns",
            t * 1e9
        );
        assert!((swap_time(2, plain_g()) - t / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn drive_rotations_are_unitary_and_selective() {
        for (tr, theta, phi) in [
            (Transition::Ge, 0.7, 0.3),
            (Transition::Ef, 2.1, -1.2),
            (Transition::Ge, std::f64::consts::PI, std::f64::consts::PI),
        ] {
            let r = drive_rotation(tr, theta, phi);
            let err = (&r * r.adjoint() - identity(QUBIT_LEVELS)).norm();
            assert!(err < 1e-12, "unitarity defect {err}");
        }
        // ge drives leave |f> alone; ef drives leave |g> alone
        let r = drive_rotation(Transition::Ge, 1.0, 0.5);
        assert!((r[(2, 2)] - C64::from(1.0)).norm() < 1e-15);
        let r = drive_rotation(Transition::Ef, 1.0, 0.5);
        assert!((r[(0, 0)] - C64::from(1.0)).norm() < 1e-15);
    }

    #[test]
    fn half_pi_drive_splits_ground_state() {
        let pi = std::f64::consts::PI;
        let r = drive_rotation(Transition::Ge, pi / 2.0, pi);
        let psi = r * fock(QUBIT_LEVELS, 0).unwrap();
        // (|g> + i|e>)/sqrt(2)
        assert!((psi[0] - C64::from(1.0 / 2f64.sqrt())).norm() < 1e-12);
        assert!((psi[1] - C64::new(0.0, 1.0 / 2f64.sqrt())).norm() < 1e-12);
    }

    #[test]
    fn full_swap_moves_excitation_into_resonator() {
        let node = JcNode::new(plain_g(), 3).unwrap();
        let psi0 = kron_vec(&fock(3, 1).unwrap(), &fock(3, 0).unwrap()); // |e,0>
        let u = node.step_unitary(&SequenceStep::Swap {
            transition: Transition::Ge,
            duration_s: swap_time(1, plain_g()),
        });
        let psi = u * psi0;
        // -i |g,1>
        let target_idx = 1; // |g,1> in (qubit, resonator) flattening
        assert!(
            (psi[target_idx] - C64::new(0.0, -1.0)).norm() < 1e-7,
            "swap output amplitude {}",
            psi[target_idx]
        );
        let p = psi[target_idx].norm_sqr();
        assert!(p >= 0.9999, "swap population {p}");
    }

    #[test]
    fn fock_preparation_climbs_the_ladder() {
        let node = JcNode::new(plain_g(), 5).unwrap();
        for n in 1..=3 {
            let rho = node.prepare_fock(n).unwrap();
            let pop = rho[(n, n)].re;
            assert!(pop >= 0.999, "Fock |{n}> population {pop}");
        }
    }

    #[test]
    fn single_photon_superposition() {
        let node = JcNode::new(plain_g(), 3).unwrap();
        let rho = node
            .prepare_superposition(1, SwapTiming::Calibrated)
            .unwrap();
        let mut target = DVector::<C64>::zeros(3);
        target[0] = C64::from(1.0 / 2f64.sqrt());
        target[1] = C64::from(1.0 / 2f64.sqrt());
        let f = fidelity_to_pure(&rho, &target).unwrap();
        assert!(f >= 0.999, "superposition fidelity {f}");
    }

    #[test]
    fn two_photon_superposition_calibrated_vs_nominal() {
        let node = JcNode::new(plain_g(), 4).unwrap();
        let mut target = DVector::<C64>::zeros(4);
        target[0] = C64::from(1.0 / 2f64.sqrt());
        target[2] = C64::from(1.0 / 2f64.sqrt());

        let rho = node
            .prepare_superposition(2, SwapTiming::Calibrated)
            .unwrap();
        let f_cal = fidelity_to_pure(&rho, &target).unwrap();
        assert!(f_cal >= 0.999, "calibrated ladder fidelity {f_cal}");

        let rho = node.prepare_superposition(2, SwapTiming::Nominal).unwrap();
        let f_nom = fidelity_to_pure(&rho, &target).unwrap();
        assert!(
            f_nom < f_cal - 0.01,
            "nominal timing should degrade the ladder: {f_nom} vs {f_cal}"
        );
    }

    #[test]
    fn rabi_trace_matches_number_beating() {
        let node = JcNode::new(plain_g(), 4).unwrap();
        // mixed resonator state with known weights
        let mut rho = DMatrix::<C64>::zeros(4, 4);
        rho[(0, 0)] = C64::from(0.2);
        rho[(1, 1)] = C64::from(0.5);
        rho[(2, 2)] = C64::from(0.3);
        let times: Vec<f64> = (0..60).map(|i| i as f64 * 2e-9).collect();
        let trace = node.rabi_trace(&rho, &times).unwrap();
        for (&t, &p) in times.iter().zip(&trace) {
            let want = 0.5 * (plain_g() * t).sin().powi(2)
                + 0.3 * (2f64.sqrt() * plain_g() * t).sin().powi(2);
            assert!((p - want).abs() < 1e-6, "P_e({t:e}) = {p}, analytic {want}");
        }
    }

    #[test]
    fn sequence_steps_serialize_round_trip() {
        let steps = superposition_sequence(2, plain_g(), SwapTiming::Calibrated).unwrap();
        let json = serde_json::to_string(&steps).unwrap();
        let back: Vec<SequenceStep> = serde_json::from_str(&json).unwrap();
        assert_eq!(steps, back);
        assert!(json.contains("\"kind\""));
        assert!(json.contains("\"ge\""));
    }

    #[test]
    fn entangled_single_photon_state() {
        let cfg = NoonConfig::default();
        let out = prepare_noon(1, &cfg).unwrap();
        assert!(out.fidelity >= 0.99, "fidelity {}", out.fidelity);
        assert!(
            out.fidelity >= 0.995,
            "matched-packet sharing should be nearly ideal: {}",
            out.fidelity
        );
        assert!(out.double_occupancy < 1e-6);
        // the fitted phase must be reproducible when passed back explicitly
        let again = prepare_noon(
            1,
            &NoonConfig {
                line_phase: Some(out.line_phase),
                ..cfg
            },
        )
        .unwrap();
        assert!((again.fidelity - out.fidelity).abs() < 1e-9);
    }

    #[test]
    fn entangled_two_photon_state() {
        let cfg = NoonConfig::default();
        let out = prepare_noon(2, &cfg).unwrap();
        assert!(out.fidelity >= 0.99, "fidelity {}", out.fidelity);
        assert!(
            out.double_occupancy <= 1e-3,
            "|1,1> leakage {}",
            out.double_occupancy
        );
    }

    #[test]
    fn noon_rejects_tight_truncation() {
        let cfg = NoonConfig {
            resonator_levels: 2,
            ..NoonConfig::default()
        };
        assert!(prepare_noon(2, &cfg).is_err());
        assert!(noon_target(2, 2).is_err());
        assert!(noon_target(0, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn sequences_reverse_exactly(seed in 0u64..1_000_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let node = JcNode::new(plain_g(), 4).unwrap();
            let mut steps = Vec::new();
            for _ in 0..5 {
                let tr = if rng.random::<f64>() < 0.5 { Transition::Ge } else { Transition::Ef };
                if rng.random::<f64>() < 0.5 {
                    steps.push(SequenceStep::Drive {
                        transition: tr,
                        theta: rng.random::<f64>() * std::f64::consts::PI,
                        phi: rng.random::<f64>() * std::f64::consts::TAU,
                    });
                } else {
                    steps.push(SequenceStep::Swap {
                        transition: tr,
                        duration_s: rng.random::<f64>() * 60e-9,
                    });
                }
            }
            let rho0 = node.ground_state();
            let forward = node.apply_sequence(&rho0, &steps).unwrap();
            let inverse: Vec<SequenceStep> = steps.iter().rev().map(|s| s.inverse()).collect();
            let back = node.apply_sequence(&forward, &inverse).unwrap();
            let err = (back - &rho0).norm();
            prop_assert!(err < 1e-3, "sequence reversal defect {err}");
        }
    }
}
