pub mod control;
pub mod evaluate;
pub mod gen_data;
pub mod report;
pub mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gbx_cli::profiles::{self, Profile};
use crate::CliError;

/// Global flags shared by the pipeline commands.
pub struct Context {
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn resolve_profile(&self) -> Result<Profile, CliError> {
        let spec = self
            .profile
            .as_deref()
            .ok_or_else(|| CliError::Usage("--profile is required for this command".into()))?;
        profiles::resolve(spec).map_err(|e| {
            if spec.ends_with(".json") || Path::new(spec).exists() {
                CliError::Config(format!("{e:#}"))
            } else {
                CliError::Usage(format!("{e:#}"))
            }
        })
    }

    pub fn run_dir(&self, profile: &Profile) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&profile.name))
    }
}

/// Generation record written next to the datasets. Timestamps live only
/// here; every other artifact is byte-reproducible.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub profile: Profile,
    pub config_hash: String,
    pub data_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub substeps: u32,
    pub max_trace_drift: f64,
    pub trace_drift_train: Vec<f64>,
    pub trace_drift_test: Vec<f64>,
    pub generated_at_unix: u64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Other(anyhow::anyhow!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("parsing {}: {e}", path.display())))
}

/// Calibrate the RK4 substep count if the profile left it unset.
pub fn ensure_substeps(profile: &mut Profile) -> Result<(), CliError> {
    if profile.data.lab.substeps == 0 {
        let s = gbx_core::sim::calibrate_substeps(&profile.data.lab, &profile.data.pulses)
            .map_err(|e| CliError::Config(format!("substep calibration: {e}")))?;
        profile.data.lab.substeps = s;
        println!("calibrated RK4 substeps: {s}");
    }
    Ok(())
}
