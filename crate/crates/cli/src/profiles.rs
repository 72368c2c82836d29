//! Built-in experiment profiles and profile-file loading.
//!
//! A profile bundles everything one pipeline run needs: the lab config, the
//! pulse constraint set, shot count, dataset sizes, model architecture, and
//! optimizer options. Reference profiles use the full-scale grid
//! (M = 1024, 9000/1000 examples, 100 hidden units); `desk-` profiles are
//! scaled to run on a workstation (M = 128, 1000/200 examples, 32 hidden
//! units); `smoke` is a seconds-scale config for CI and command tests.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gbx_core::control::{GaOptions, GdOptions};
use gbx_core::dataset::DataConfig;
use gbx_core::model::train::TrainOptions;
use gbx_core::model::ModelConfig;
use gbx_core::pulse::{Axis, PulseConstraints};
use gbx_core::sim::{BathKind, LabConfig, Shots};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub data: DataConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub hidden: [usize; 2],
    pub train: TrainOptions,
    pub gd: GdOptions,
    pub ga: GaOptions,
}

impl Profile {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::for_data(&self.data, self.hidden)
    }

    pub fn config_hash(&self) -> String {
        self.data.hash()
    }
}

fn shots_tag(shots: Shots) -> &'static str {
    match shots {
        Shots::Finite(512) => "512",
        Shots::Finite(1024) => "1024",
        Shots::Infinite => "inf",
        _ => "n",
    }
}

fn axes_for(multi: bool) -> Vec<Axis> {
    if multi {
        vec![Axis::X, Axis::Y]
    } else {
        vec![Axis::X]
    }
}

/// Full-scale profile on the reference grid (M = 1024).
fn paper_profile(
    bath: BathKind,
    multi: bool,
    shots: Shots,
    coupling: f64,
    a_max: f64,
    name: String,
) -> Profile {
    let lab = match bath {
        BathKind::Fermionic => LabConfig::fermionic_ref(),
        BathKind::Bosonic => LabConfig::bosonic_ref(),
    }
    .with_coupling(coupling)
    .with_substeps(2);
    let pulses = PulseConstraints::standard(5, lab.t_horizon, lab.steps, a_max, axes_for(multi));
    Profile {
        name,
        data: DataConfig { lab, pulses, shots },
        n_train: 9000,
        n_test: 1000,
        data_seed: 0,
        hidden: [100, 100],
        train: TrainOptions::default(),
        gd: GdOptions::default(),
        ga: GaOptions::default(),
    }
}

/// Workstation-scale profile (M = 128, smaller datasets and hidden size).
fn desk_profile(
    bath: BathKind,
    multi: bool,
    shots: Shots,
    coupling: f64,
    name: String,
) -> Profile {
    let mut lab = match bath {
        BathKind::Fermionic => LabConfig::fermionic_ref(),
        BathKind::Bosonic => {
            let mut cfg = LabConfig::bosonic_ref();
            cfg.trunc_dim = 10;
            cfg
        }
    }
    .with_coupling(coupling)
    .with_substeps(4);
    lab.steps = 128;
    let pulses = PulseConstraints::standard(5, lab.t_horizon, lab.steps, 25.0, axes_for(multi));
    Profile {
        name,
        data: DataConfig { lab, pulses, shots },
        n_train: 1000,
        n_test: 200,
        data_seed: 0,
        hidden: [32, 32],
        train: TrainOptions::default(),
        gd: GdOptions::default(),
        ga: GaOptions::default(),
    }
}

/// Seconds-scale configuration for command tests.
fn smoke_profile() -> Profile {
    let mut lab = LabConfig::fermionic_ref().with_substeps(32);
    lab.steps = 16;
    let pulses = PulseConstraints::standard(2, 1.0, 16, 25.0, vec![Axis::X]);
    Profile {
        name: "smoke".into(),
        data: DataConfig { lab, pulses, shots: Shots::Infinite },
        n_train: 32,
        n_test: 8,
        data_seed: 0,
        hidden: [8, 8],
        train: TrainOptions {
            iterations: 40,
            batch_size: 16,
            eval_every: 10,
            ..TrainOptions::default()
        },
        gd: GdOptions { iterations: 40, restarts: 2, ..GdOptions::default() },
        ga: GaOptions { population: 12, generations: 15, ..GaOptions::default() },
    }
}

pub fn builtin_profiles() -> Vec<Profile> {
    let mut out = Vec::new();

    // reference grid: bath x axes x shots at the default couplings
    for (bath, v) in [(BathKind::Fermionic, 2.0), (BathKind::Bosonic, 1.3)] {
        let bname = match bath {
            BathKind::Fermionic => "fermionic",
            BathKind::Bosonic => "bosonic",
        };
        for multi in [false, true] {
            let axes = if multi { "multi" } else { "single" };
            for shots in [Shots::Finite(512), Shots::Finite(1024), Shots::Infinite] {
                let name = format!("{bname}-{axes}-{}", shots_tag(shots));
                out.push(paper_profile(bath, multi, shots, v, 25.0, name));
            }
        }
    }
    // coupling sweep (multi-axis, N = 1024)
    for (bath, vs) in [
        (BathKind::Fermionic, [0.2, 1.0].as_slice()),
        (BathKind::Bosonic, [0.13, 0.65].as_slice()),
    ] {
        let bname = match bath {
            BathKind::Fermionic => "fermionic",
            BathKind::Bosonic => "bosonic",
        };
        for &v in vs {
            let name = format!("{bname}-multi-1024-v{v}");
            out.push(paper_profile(bath, true, Shots::Finite(1024), v, 25.0, name));
        }
    }
    // relaxed-amplitude follow-up (A_max = 100 at the intermediate coupling)
    out.push(paper_profile(
        BathKind::Fermionic,
        true,
        Shots::Finite(1024),
        1.0,
        100.0,
        "fermionic-multi-1024-v1-amax100".into(),
    ));
    out.push(paper_profile(
        BathKind::Bosonic,
        true,
        Shots::Finite(1024),
        0.65,
        100.0,
        "bosonic-multi-1024-v0.65-amax100".into(),
    ));

    // desk grid
    for shots in [Shots::Finite(512), Shots::Finite(1024), Shots::Infinite] {
        out.push(desk_profile(
            BathKind::Fermionic,
            false,
            shots,
            2.0,
            format!("desk-fermionic-single-{}", shots_tag(shots)),
        ));
    }
    for v in [0.2, 1.0, 2.0] {
        out.push(desk_profile(
            BathKind::Fermionic,
            true,
            Shots::Finite(1024),
            v,
            format!("desk-fermionic-multi-1024-v{v}"),
        ));
    }
    out.push(desk_profile(
        BathKind::Bosonic,
        false,
        Shots::Infinite,
        1.3,
        "desk-bosonic-single-inf".into(),
    ));
    out.push(desk_profile(
        BathKind::Bosonic,
        true,
        Shots::Finite(1024),
        1.3,
        "desk-bosonic-multi-1024".into(),
    ));
    // closed system (no bath coupling)
    out.push(desk_profile(
        BathKind::Fermionic,
        true,
        Shots::Infinite,
        0.0,
        "desk-closed-multi-inf".into(),
    ));

    out.push(smoke_profile());
    out
}

/// Resolve a profile by built-in name or by path to a profile JSON file.
pub fn resolve(spec: &str) -> Result<Profile> {
    if let Some(p) = builtin_profiles().into_iter().find(|p| p.name == spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading profile file {spec}"))?;
        let profile: Profile =
            serde_json::from_str(&text).with_context(|| format!("parsing profile file {spec}"))?;
        return Ok(profile);
    }
    bail!(
        "unknown profile {spec:?}; built-ins: {}",
        builtin_profiles().iter().map(|p| p.name.clone()).collect::<Vec<_>>().join(", ")
    )
}
