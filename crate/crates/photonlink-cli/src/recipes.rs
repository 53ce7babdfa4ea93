//! Embedded, named configuration recipes. Each is a complete TOML document
//! that can also serve as a starting point for a custom config (print one
//! with `photonlink recipes --show <name>`).

pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const RECIPES: &[Recipe] = &[
    Recipe {
        name: "transfer",
        description: "Single-photon release and catch across the line",
        toml: "scenario = \"transfer\"\n\n[transfer]\nphotons = 1\nfit_line_phase = true\n",
    },
    Recipe {
        name: "fig2a_standing_modes",
        description: "Resonator swept across the standing-mode comb of the line",
        toml: "scenario = \"modes\"\n",
    },
    Recipe {
        name: "fig2c_emit_recapture",
        description: "Release, reflect, and recapture fringes vs detuning and delay",
        toml: "scenario = \"emit_recapture\"\n",
    },
    Recipe {
        name: "fig3_fock2_transfer",
        description: "Two-photon Fock state sent as a single shaped wavepacket",
        toml: "scenario = \"transfer\"\n\n[transfer]\nphotons = 2\nfit_line_phase = true\n",
    },
    Recipe {
        name: "fig4a_superposition",
        description: "Transfer of (|0> + |1>)/sqrt(2) with line-phase calibration",
        toml: "scenario = \"transfer\"\n\n[transfer]\nphotons = 1\nsuperposition = true\nfit_line_phase = true\n",
    },
    Recipe {
        name: "fig4b_noon1",
        description: "One-photon entangled pair shared between the nodes",
        toml: "scenario = \"noon\"\n\n[noon]\nphotons = 1\n",
    },
    Recipe {
        name: "fig4c_noon2",
        description: "Two-photon entangled pair shared between the nodes",
        toml: "scenario = \"noon\"\n\n[noon]\nphotons = 2\n",
    },
    Recipe {
        name: "circuit_boxmodes",
        description: "Cavity modes of the die and of the enclosing package",
        toml: "scenario = \"circuit\"\n\n[circuit]\ntask = \"boxmodes\"\n",
    },
    Recipe {
        name: "circuit_lifetime",
        description: "Coupler resonance and loaded lifetime across a flux sweep",
        toml: "scenario = \"circuit\"\n\n[circuit]\ntask = \"lifetime\"\n",
    },
    Recipe {
        name: "circuit_anharmonicity",
        description: "Residual resonator anharmonicity across the operating band",
        toml: "scenario = \"circuit\"\n\n[circuit]\ntask = \"anharmonicity\"\n",
    },
    Recipe {
        name: "tomography_roundtrip",
        description: "Synthesize displaced photon statistics, reconstruct, compare",
        toml: "scenario = \"tomography\"\n",
    },
    Recipe {
        name: "optimize_release",
        description: "Budgeted search for a release waveform matching a sech packet",
        toml: "scenario = \"optimize\"\n",
    },
];

pub fn find(name: &str) -> Option<&'static Recipe> {
    RECIPES.iter().find(|r| r.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipes_are_named_uniquely_and_parse() {
        let mut names: Vec<&str> = RECIPES.iter().map(|r| r.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), RECIPES.len());
        assert!(RECIPES.len() >= 8);
        assert!(find("fig2a_standing_modes").is_some());
        assert!(find("fig4b_noon1").is_some());
        for r in RECIPES {
            let cfg = crate::config::parse_config(r.toml, &[]).unwrap();
            let _ = cfg.scenario;
        }
    }
}
