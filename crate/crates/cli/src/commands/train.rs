use std::io::Write;
use std::path::PathBuf;

use gbx_core::dataset;
use gbx_core::model::train::train;
use gbx_core::model::GrayboxModel;
use serde::{Deserialize, Serialize};

use super::{write_json, Context};
use crate::CliError;

/// Final scores of a training run.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub profile: String,
    pub config_hash: String,
    pub iterations: usize,
    pub best_iteration: usize,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
}

pub fn run(ctx: &Context, data: Option<PathBuf>) -> Result<(), CliError> {
    let profile = ctx.resolve_profile()?;
    let dir = ctx.run_dir(&profile);
    let data_dir = data.unwrap_or_else(|| dir.clone());

    let train_ds = dataset::load(&data_dir.join("train.jsonl"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let test_ds =
        dataset::load(&data_dir.join("test.jsonl")).map_err(|e| CliError::Data(e.to_string()))?;
    let expected = profile.config_hash();
    if train_ds.config.hash() != expected {
        return Err(CliError::Data(format!(
            "dataset config hash {} does not match profile {} ({})",
            &train_ds.config.hash()[..12],
            profile.name,
            &expected[..12]
        )));
    }

    let mut opts = profile.train.clone();
    if let Some(seed) = ctx.seed {
        opts.seed = seed;
    }
    let model = GrayboxModel::new(profile.model_config(), opts.seed);
    println!(
        "training {} on {} examples ({} iterations, batch {}, hidden {:?})",
        profile.name,
        train_ds.examples.len(),
        opts.iterations,
        opts.batch_size,
        profile.hidden
    );
    let out = train(model, &train_ds, &test_ds, &opts)
        .map_err(|e| CliError::Data(format!("training failed: {e}")))?;

    std::fs::create_dir_all(&dir)?;
    out.model.save(&dir.join("model.gbx.json")).map_err(|e| CliError::Data(e.to_string()))?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("curves.csv"))?);
    writeln!(csv, "iteration,train_mse,test_mse")?;
    for point in &out.curves {
        match point.test_mse {
            Some(t) => writeln!(csv, "{},{},{}", point.iteration, point.train_mse, t)?,
            None => writeln!(csv, "{},{},", point.iteration, point.train_mse)?,
        }
    }
    drop(csv);

    let summary = TrainSummary {
        profile: profile.name.clone(),
        config_hash: expected,
        iterations: opts.iterations,
        best_iteration: out.best_iteration,
        final_train_mse: out.final_train_mse,
        final_test_mse: out.final_test_mse,
    };
    write_json(&dir.join("summary.json"), &summary)?;

    println!(
        "final train MSE {:.4e}, test MSE {:.4e} (best at iteration {})",
        out.final_train_mse, out.final_test_mse, out.best_iteration
    );
    println!("wrote {}: model.gbx.json, curves.csv, summary.json", dir.display());
    Ok(())
}
