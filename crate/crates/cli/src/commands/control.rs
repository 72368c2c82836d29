use std::io::Write;
use std::path::PathBuf;

use gbx_core::control::{optimize_ga, optimize_gd, ControlError, Gate, OptimizerKind};
use gbx_core::model::GrayboxModel;

use super::{ensure_substeps, write_json, Context};
use crate::CliError;

fn parse_gates(spec: &str) -> Result<Vec<Gate>, CliError> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(Gate::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| {
            Gate::parse(s.trim()).map_err(|e| match e {
                ControlError::UnknownGate(g) => CliError::Usage(format!(
                    "unknown gate {g:?}; expected one of I, X, Y, Z, H, RX_PI4"
                )),
                other => CliError::Other(anyhow::anyhow!(other)),
            })
        })
        .collect()
}

fn parse_optimizers(spec: &str) -> Result<Vec<OptimizerKind>, CliError> {
    match spec.to_ascii_lowercase().as_str() {
        "gd" => Ok(vec![OptimizerKind::Gd]),
        "ga" => Ok(vec![OptimizerKind::Ga]),
        "both" => Ok(vec![OptimizerKind::Gd, OptimizerKind::Ga]),
        other => Err(CliError::Usage(format!("unknown optimizer {other:?}; use gd, ga, or both"))),
    }
}

pub fn run(
    ctx: &Context,
    model_path: Option<PathBuf>,
    gates: &str,
    optimizer: &str,
) -> Result<(), CliError> {
    let gates = parse_gates(gates)?;
    let optimizers = parse_optimizers(optimizer)?;
    let mut profile = ctx.resolve_profile()?;
    ensure_substeps(&mut profile)?;
    let dir = ctx.run_dir(&profile);
    let model_path = model_path.unwrap_or_else(|| dir.join("model.gbx.json"));

    let model = GrayboxModel::load(&model_path).map_err(|e| CliError::Data(e.to_string()))?;
    let expected = profile.config_hash();
    match &model.data_hash {
        Some(h) if *h == expected => {}
        Some(h) => {
            return Err(CliError::Data(format!(
                "model was trained against config {} but profile {} hashes to {}",
                &h[..12],
                profile.name,
                &expected[..12]
            )))
        }
        None => {
            return Err(CliError::Data(
                "model file carries no data config hash; retrain before control".into(),
            ))
        }
    }

    std::fs::create_dir_all(&dir)?;
    let mut gd_opts = profile.gd.clone();
    let mut ga_opts = profile.ga.clone();
    if let Some(seed) = ctx.seed {
        gd_opts.seed = seed;
        ga_opts.seed = seed;
    }

    let mut rows = Vec::new();
    for &gate in &gates {
        for &opt in &optimizers {
            let result = match opt {
                OptimizerKind::Gd => {
                    optimize_gd(&model, &profile.data.lab, gate, &profile.data.pulses, &gd_opts)
                }
                OptimizerKind::Ga => {
                    optimize_ga(&model, &profile.data.lab, gate, &profile.data.pulses, &ga_opts)
                }
            }
            .map_err(|e| CliError::Other(anyhow::anyhow!("{} via {}: {e}", gate.name(), opt.name())))?;
            println!(
                "gate {:7} {}: J = {:.4e}, simulator fidelity = {:.4}",
                gate.name(),
                opt.name(),
                result.cost,
                result.fidelity
            );
            let file = dir.join(format!(
                "control_{}_{}.json",
                gate.name().to_ascii_lowercase(),
                opt.name()
            ));
            write_json(&file, &result)?;
            rows.push((gate.name().to_string(), opt.name().to_string(), result.fidelity));
        }
    }

    let mut csv =
        std::io::BufWriter::new(std::fs::File::create(dir.join("fidelity_summary.csv"))?);
    writeln!(csv, "gate,optimizer,shots,fidelity")?;
    for (gate, opt, fidelity) in &rows {
        writeln!(csv, "{gate},{opt},{},{fidelity}", profile.data.shots)?;
    }
    drop(csv);
    println!("wrote {}: control_*.json, fidelity_summary.csv", dir.display());
    Ok(())
}
