use std::path::Path;

use gbx_core::dataset;
use gbx_core::model::GrayboxModel;
use gbx_core::sim::N_OUTPUTS;
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_examples: usize,
    pub mse: f64,
    /// MSE split by the 18 canonical (state, observable) outputs.
    pub per_output_mse: Vec<f64>,
}

pub fn run(model_path: &Path, data_path: &Path) -> Result<(), CliError> {
    let model = GrayboxModel::load(model_path).map_err(|e| CliError::Data(e.to_string()))?;
    let ds = dataset::load(data_path).map_err(|e| CliError::Data(e.to_string()))?;
    match &model.data_hash {
        Some(h) if *h == ds.config.hash() => {}
        Some(_) => {
            return Err(CliError::Data(
                "model and dataset were built from different configs".into(),
            ))
        }
        None => return Err(CliError::Data("model carries no data config hash".into())),
    }

    let mut per_output = vec![0.0; N_OUTPUTS];
    for ex in &ds.examples {
        let pred = model.predict(&ex.waveform).map_err(|e| CliError::Data(e.to_string()))?;
        for p in 0..N_OUTPUTS {
            per_output[p] += (pred[p] - ex.record.values[p]).powi(2);
        }
    }
    let n = ds.examples.len().max(1);
    for v in &mut per_output {
        *v /= n as f64;
    }
    let mse = per_output.iter().sum::<f64>() / N_OUTPUTS as f64;

    let eval = Evaluation { n_examples: ds.examples.len(), mse, per_output_mse: per_output };
    let out = data_path.with_extension("eval.json");
    write_json(&out, &eval)?;
    println!("MSE over {} examples: {mse:.4e} (details in {})", eval.n_examples, out.display());
    Ok(())
}
