//! Prepare-control-measure datasets: generation, JSON-lines serialization,
//! and loading with integrity checks.
//!
//! File layout: line 1 is a JSON header (version, config, config hash, seed,
//! split, example count); each following line is one example
//! `{"pulse": .., "record": ..}`. Waveforms are not stored; they are
//! re-rendered from the pulse parameters on load, which reproduces them
//! bit-exactly through the shared [`crate::pulse::render`] path.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pulse::{render, random_sequence, PulseConstraints, PulseError, PulseSequence, Waveform};
use crate::sim::{
    expectations_exact, sample_expectation, LabConfig, MeasurementRecord, Shots, SimError,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("example {index} failed: {source}")]
    Generation { index: usize, source: SimError },
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Everything that determines the physics and statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub lab: LabConfig,
    pub pulses: PulseConstraints,
    pub shots: Shots,
}

impl DataConfig {
    /// SHA-256 over the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.lab.validate()?;
        self.pulses.validate()?;
        if self.pulses.steps != self.lab.steps
            || (self.pulses.t_horizon - self.lab.t_horizon).abs() > 1e-12
        {
            return Err(DatasetError::Integrity(
                "pulse constraints and lab config disagree on the time grid".into(),
            ));
        }
        Ok(())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Base seed of the per-example stream; train and test never overlap.
    fn stream_base(&self, seed: u64) -> u64 {
        match self {
            Split::Train => seed,
            Split::Test => seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        }
    }
}

/// One prepare-control-measure experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub pulse: PulseSequence,
    pub waveform: Waveform,
    pub record: MeasurementRecord,
}

#[derive(Serialize, Deserialize)]
struct ExampleWire {
    pulse: PulseSequence,
    record: MeasurementRecord,
}

impl Example {
    fn from_wire(wire: ExampleWire) -> Self {
        let waveform = render(&wire.pulse);
        Self { pulse: wire.pulse, waveform, record: wire.record }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub seed: u64,
    pub split: Split,
    pub examples: Vec<Example>,
}

/// Per-example diagnostics collected during generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Maximum `|tr rho - 1|` observed over each example's six propagations.
    pub trace_drift: Vec<f64>,
}

impl GenerationStats {
    pub fn max_trace_drift(&self) -> f64 {
        self.trace_drift.iter().cloned().fold(0.0, f64::max)
    }
}

/// Generate `n_examples` i.i.d. random-pulse experiments.
///
/// Deterministic given (config, seed, split): example `i` draws from a
/// ChaCha stream seeded with `stream_base ^ i`, so examples are independent
/// and the train/test streams are disjoint.
pub fn generate(
    config: &DataConfig,
    n_examples: usize,
    seed: u64,
    split: Split,
) -> Result<(Dataset, GenerationStats), DatasetError> {
    config.validate()?;
    if config.lab.substeps == 0 {
        return Err(DatasetError::Integrity(
            "lab config has no substep count; run calibration first".into(),
        ));
    }
    let base = split.stream_base(seed);
    let results: Vec<Result<(Example, f64), DatasetError>> = (0..n_examples)
        .into_par_iter()
        .map(|i| {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(base ^ i as u64);
            let pulse = random_sequence(&mut rng, &config.pulses)?;
            let waveform = render(&pulse);
            let exact = expectations_exact(&config.lab, &waveform)
                .map_err(|source| DatasetError::Generation { index: i, source })?;
            let values = match config.shots {
                Shots::Infinite => exact.values.to_vec(),
                Shots::Finite(n) => {
                    exact.values.iter().map(|&v| sample_expectation(v, n, &mut rng)).collect()
                }
            };
            let record = MeasurementRecord { values, shots: config.shots };
            Ok((Example { pulse, waveform, record }, exact.max_trace_drift))
        })
        .collect();

    let mut examples = Vec::with_capacity(n_examples);
    let mut trace_drift = Vec::with_capacity(n_examples);
    for r in results {
        let (ex, drift) = r?;
        examples.push(ex);
        trace_drift.push(drift);
    }
    Ok((
        Dataset { config: config.clone(), seed, split, examples },
        GenerationStats { trace_drift },
    ))
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: DataConfig,
    config_hash: String,
    seed: u64,
    split: Split,
    n_examples: usize,
}

const FORMAT_VERSION: u32 = 1;

pub fn save(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = Header {
        version: FORMAT_VERSION,
        kind: "gbx-dataset".into(),
        config: ds.config.clone(),
        config_hash: ds.config.hash(),
        seed: ds.seed,
        split: ds.split,
        n_examples: ds.examples.len(),
    };
    serde_json::to_writer(&mut file, &header)
        .map_err(|e| DatasetError::Integrity(format!("header write failed: {e}")))?;
    file.write_all(b"\n")?;
    for ex in &ds.examples {
        let wire = ExampleWire { pulse: ex.pulse.clone(), record: ex.record.clone() };
        serde_json::to_writer(&mut file, &wire)
            .map_err(|e| DatasetError::Integrity(format!("example write failed: {e}")))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header_line = lines
        .next()
        .ok_or(DatasetError::Parse { line: 1, msg: "empty file, missing header".into() })??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| DatasetError::Parse { line: 1, msg: e.to_string() })?;
    if header.kind != "gbx-dataset" || header.version != FORMAT_VERSION {
        return Err(DatasetError::Integrity(format!(
            "unsupported file kind {:?} version {}",
            header.kind, header.version
        )));
    }
    if header.config.hash() != header.config_hash {
        return Err(DatasetError::Integrity(
            "config hash in header does not match the stored config".into(),
        ));
    }
    let mut examples = Vec::with_capacity(header.n_examples);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: ExampleWire = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: line_no, msg: e.to_string() })?;
        let ex = Example::from_wire(wire);
        ex.record
            .validate()
            .map_err(|e| DatasetError::Parse { line: line_no, msg: e.to_string() })?;
        examples.push(ex);
    }
    if examples.len() != header.n_examples {
        return Err(DatasetError::Parse {
            line: examples.len() + 2,
            msg: format!(
                "file truncated: header promises {} examples, found {}",
                header.n_examples,
                examples.len()
            ),
        });
    }
    Ok(Dataset { config: header.config, seed: header.seed, split: header.split, examples })
}
