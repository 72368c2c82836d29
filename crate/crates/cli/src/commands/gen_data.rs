use gbx_core::dataset::{self, DatasetError, Split};

use super::{ensure_substeps, write_json, Context, Manifest};
use crate::CliError;

fn classify(e: DatasetError) -> CliError {
    match e {
        DatasetError::Pulse(p) => CliError::Config(p.to_string()),
        DatasetError::Integrity(m) => CliError::Config(m),
        DatasetError::Sim(s) => CliError::Config(s.to_string()),
        other => CliError::Other(anyhow::anyhow!(other)),
    }
}

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let mut profile = ctx.resolve_profile()?;
    profile.data.validate().map_err(classify)?;
    ensure_substeps(&mut profile)?;
    let seed = ctx.seed.unwrap_or(profile.data_seed);
    profile.data_seed = seed;
    let dir = ctx.run_dir(&profile);
    std::fs::create_dir_all(&dir)?;

    println!(
        "generating {} train + {} test examples for {} (seed {seed})",
        profile.n_train, profile.n_test, profile.name
    );
    let (train_ds, train_stats) =
        dataset::generate(&profile.data, profile.n_train, seed, Split::Train).map_err(classify)?;
    let (test_ds, test_stats) =
        dataset::generate(&profile.data, profile.n_test, seed, Split::Test).map_err(classify)?;

    dataset::save(&train_ds, &dir.join("train.jsonl")).map_err(classify)?;
    dataset::save(&test_ds, &dir.join("test.jsonl")).map_err(classify)?;

    let max_drift = train_stats.max_trace_drift().max(test_stats.max_trace_drift());
    let manifest = Manifest {
        config_hash: profile.config_hash(),
        data_seed: seed,
        n_train: profile.n_train,
        n_test: profile.n_test,
        substeps: profile.data.lab.substeps,
        max_trace_drift: max_drift,
        trace_drift_train: train_stats.trace_drift,
        trace_drift_test: test_stats.trace_drift,
        generated_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        profile,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    println!(
        "wrote {}: train.jsonl, test.jsonl, manifest.json (max trace drift {max_drift:.2e})",
        dir.display()
    );
    Ok(())
}
