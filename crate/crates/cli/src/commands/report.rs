use std::io::Write;
use std::path::{Path, PathBuf};

use gbx_core::sim::BathKind;

use super::{read_json, Manifest};
use crate::commands::train::TrainSummary;
use crate::CliError;

const REQUIRED: [&str; 4] = ["manifest.json", "summary.json", "curves.csv", "fidelity_summary.csv"];

struct RunArtifacts {
    dir: PathBuf,
    manifest: Manifest,
    summary: TrainSummary,
    /// (gate, optimizer, shots, fidelity)
    fidelities: Vec<(String, String, String, f64)>,
}

fn find_run_dirs(root: &Path) -> Vec<PathBuf> {
    if root.join("manifest.json").exists() {
        return vec![root.to_path_buf()];
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    dirs
}

fn load_run(dir: &Path) -> Result<RunArtifacts, CliError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let summary: TrainSummary = read_json(&dir.join("summary.json"))?;
    let text = std::fs::read_to_string(dir.join("fidelity_summary.csv"))
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut fidelities = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(CliError::Data(format!(
                "{}: fidelity_summary.csv line {} has {} columns",
                dir.display(),
                i + 1,
                cols.len()
            )));
        }
        let fidelity: f64 = cols[3]
            .parse()
            .map_err(|e| CliError::Data(format!("{}: bad fidelity: {e}", dir.display())))?;
        fidelities.push((cols[0].into(), cols[1].into(), cols[2].into(), fidelity));
    }
    Ok(RunArtifacts { dir: dir.to_path_buf(), manifest, summary, fidelities })
}

fn bath_name(bath: BathKind) -> &'static str {
    match bath {
        BathKind::Fermionic => "fermionic",
        BathKind::Bosonic => "bosonic",
    }
}

pub fn run(run_dir: &Path) -> Result<(), CliError> {
    if !run_dir.exists() {
        return Err(CliError::Missing(vec![run_dir.display().to_string()]));
    }
    let dirs = find_run_dirs(run_dir);
    if dirs.is_empty() {
        return Err(CliError::Missing(
            REQUIRED.iter().map(|f| run_dir.join(f).display().to_string()).collect(),
        ));
    }
    let mut missing = Vec::new();
    for dir in &dirs {
        for file in REQUIRED {
            if !dir.join(file).exists() {
                missing.push(dir.join(file).display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }

    let mut runs = Vec::new();
    for dir in &dirs {
        runs.push(load_run(dir)?);
    }
    runs.sort_by(|a, b| a.manifest.profile.name.cmp(&b.manifest.profile.name));

    let report_dir = run_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;

    // MSE table
    let mut mse = std::io::BufWriter::new(std::fs::File::create(report_dir.join("mse_table.csv"))?);
    writeln!(mse, "profile,bath,axes,shots,coupling,train_mse,test_mse")?;
    for r in &runs {
        let p = &r.manifest.profile;
        writeln!(
            mse,
            "{},{},{},{},{},{},{}",
            p.name,
            bath_name(p.data.lab.bath),
            if p.data.pulses.axes.len() > 1 { "multi" } else { "single" },
            p.data.shots,
            p.data.lab.coupling.re,
            r.summary.final_train_mse,
            r.summary.final_test_mse
        )?;
    }
    drop(mse);

    // fidelity-by-gate table
    let mut fid = std::io::BufWriter::new(
        std::fs::File::create(report_dir.join("fidelity_by_gate.csv"))?,
    );
    writeln!(fid, "profile,gate,optimizer,shots,fidelity")?;
    for r in &runs {
        for (gate, opt, shots, fidelity) in &r.fidelities {
            writeln!(fid, "{},{gate},{opt},{shots},{fidelity}", r.manifest.profile.name)?;
        }
    }
    drop(fid);

    // coupling sweep: groups of runs differing only in V, mean fidelity over
    // gates per optimizer
    let mut sweep_rows: Vec<(String, String, String, f64, f64, String)> = Vec::new();
    for r in &runs {
        let p = &r.manifest.profile;
        for opt in ["gd", "ga"] {
            let fids: Vec<f64> = r
                .fidelities
                .iter()
                .filter(|(_, o, _, _)| o == opt)
                .map(|(_, _, _, f)| *f)
                .collect();
            if fids.is_empty() {
                continue;
            }
            let mean = fids.iter().sum::<f64>() / fids.len() as f64;
            let axes = if p.data.pulses.axes.len() > 1 { "multi" } else { "single" };
            sweep_rows.push((
                bath_name(p.data.lab.bath).to_string(),
                axes.to_string(),
                opt.to_string(),
                p.data.lab.coupling.re,
                mean,
                p.name.clone(),
            ));
        }
    }
    let mut sweep =
        std::io::BufWriter::new(std::fs::File::create(report_dir.join("v_sweep.csv"))?);
    writeln!(sweep, "bath,axes,optimizer,coupling,mean_fidelity,profile")?;
    sweep_rows.sort_by(|a, b| {
        (&a.0, &a.1, &a.2)
            .cmp(&(&b.0, &b.1, &b.2))
            .then(a.3.partial_cmp(&b.3).unwrap())
    });
    for (bath, axes, opt, v, mean, name) in &sweep_rows {
        writeln!(sweep, "{bath},{axes},{opt},{v},{mean},{name}")?;
    }
    drop(sweep);

    // plain-text summary
    let mut txt = String::new();
    txt.push_str(&format!("runs: {}\n\n", runs.len()));
    for r in &runs {
        let p = &r.manifest.profile;
        txt.push_str(&format!(
            "{}\n  dir: {}\n  bath {} | axes {} | shots {} | V {} | M {}\n  train MSE {:.4e} | test MSE {:.4e}\n  max trace drift {:.2e} | substeps {}\n",
            p.name,
            r.dir.display(),
            bath_name(p.data.lab.bath),
            p.data.pulses.axes.len(),
            p.data.shots,
            p.data.lab.coupling.re,
            p.data.lab.steps,
            r.summary.final_train_mse,
            r.summary.final_test_mse,
            r.manifest.max_trace_drift,
            r.manifest.substeps,
        ));
        for (gate, opt, _, fidelity) in &r.fidelities {
            txt.push_str(&format!("  {gate:7} {opt}: fidelity {fidelity:.4}\n"));
        }
        txt.push('\n');
    }
    std::fs::write(report_dir.join("summary.txt"), &txt)?;

    print!("{txt}");
    println!(
        "wrote {}: mse_table.csv, fidelity_by_gate.csv, v_sweep.csv, summary.txt",
        report_dir.display()
    );
    Ok(())
}
