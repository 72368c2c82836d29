//! Acceptance suite: every release-gating criterion as one test. Each test
//! prints a single `ACCEPTANCE C# PASS` line with the measured numbers and
//! elapsed wall time (visible with `--nocapture`); a failed criterion fails
//! its test.
//!
//! The heavy criteria share trained pipelines through an in-process cache,
//! so e.g. the weak-coupling control check and the coupling sweep reuse the
//! same training run.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use gbx_cli::profiles::{self, Profile};
use gbx_core::control::{
    optimize_ga, optimize_gd, ControlResult, GaOptions, Gate, GdOptions,
};
use gbx_core::dataset::{generate, Dataset, Example, Split};
use gbx_core::linalg::{
    hermitian_eigenvalues, hermiticity_error, kron, pauli, trace, DensityMatrix, Operator, Pauli,
    UnitaryOperator,
};
use gbx_core::model::train::train;
use gbx_core::model::{loss_and_gradients, loss_mse, GrayboxModel, ModelConfig};
use gbx_core::pulse::{random_sequence, render, Axis, PulseConstraints, Waveform};
use gbx_core::sim::{
    choi_state, lindblad_propagate, process_fidelity, purity_trajectory, ChoiState,
    JointGenerator, LabConfig, MasterEquation, MeasurementRecord, PauliState, Shots, N_OUTPUTS,
    PAULI_STATES,
};

fn pass(criterion: &str, details: &str, t0: Instant) {
    println!("ACCEPTANCE {criterion} PASS - {details} ({:.1}s)", t0.elapsed().as_secs_f64());
}

struct Pipeline {
    profile: Profile,
    model: GrayboxModel,
    test_ds: Dataset,
    final_test_mse: f64,
}

type Cell<T> = Arc<OnceLock<Arc<T>>>;

fn cached<T, F: FnOnce() -> T>(
    registry: &'static OnceLock<Mutex<HashMap<String, Cell<T>>>>,
    key: &str,
    build: F,
) -> Arc<T> {
    let cells = registry.get_or_init(|| Mutex::new(HashMap::new()));
    let cell = cells.lock().unwrap().entry(key.to_string()).or_default().clone();
    cell.get_or_init(|| Arc::new(build())).clone()
}

/// Generate the profile's datasets and train its model (cached per profile).
fn pipeline(name: &str) -> Arc<Pipeline> {
    static PIPELINES: OnceLock<Mutex<HashMap<String, Cell<Pipeline>>>> = OnceLock::new();
    cached(&PIPELINES, name, || {
        let profile = profiles::resolve(name).expect("built-in profile");
        let (train_ds, _) =
            generate(&profile.data, profile.n_train, profile.data_seed, Split::Train)
                .expect("generation");
        let (test_ds, _) = generate(&profile.data, profile.n_test, profile.data_seed, Split::Test)
            .expect("generation");
        let model = GrayboxModel::new(profile.model_config(), profile.train.seed);
        let out = train(model, &train_ds, &test_ds, &profile.train).expect("training");
        Pipeline { profile, model: out.model, test_ds, final_test_mse: out.final_test_mse }
    })
}

/// Gradient-descent synthesis of all six gates for a trained pipeline
/// (cached per profile).
fn gd_gate_results(name: &str) -> Arc<Vec<ControlResult>> {
    static RESULTS: OnceLock<Mutex<HashMap<String, Cell<Vec<ControlResult>>>>> = OnceLock::new();
    cached(&RESULTS, name, || {
        let p = pipeline(name);
        Gate::ALL
            .iter()
            .map(|&gate| {
                optimize_gd(&p.model, &p.profile.data.lab, gate, &p.profile.data.pulses, &p.profile.gd)
                    .expect("gd synthesis")
            })
            .collect()
    })
}

#[test]
fn c01_lindblad_amplitude_damping_oracle() {
    let t0 = Instant::now();
    // bare qubit, decay from the sigma_z = +1 state at rate gamma = 0.7
    let gamma: f64 = 0.7;
    let mut decay = Array2::zeros((2, 2));
    decay[[1, 0]] = C64::new(gamma.sqrt(), 0.0);
    let me = MasterEquation::new(
        Array2::zeros((2, 2)),
        pauli(Pauli::X).scale(C64::new(0.5, 0.0)).into_mat(),
        pauli(Pauli::Y).scale(C64::new(0.5, 0.0)).into_mat(),
        vec![decay],
    );
    let w = Waveform::zero(1.0, 128, &[Axis::X]);
    let mut rho0 = Array2::zeros((2, 2));
    rho0[[0, 0]] = C64::new(1.0, 0.0);
    let out = me.propagate(&w, &rho0, 8, |_, _| {}).unwrap();
    let z = trace(&out.rho_final.dot(pauli(Pauli::Z).mat())).re;
    let want = 2.0 * (-gamma).exp() - 1.0;
    assert!(
        (z - want).abs() < 1e-6,
        "C1 FAIL: <sigma_z(1)> = {z}, analytic {want}, error {:.2e}",
        (z - want).abs()
    );
    pass("C1", &format!("<sigma_z(1)> = {z:.9} vs 2e^(-0.7)-1 = {want:.9}"), t0);
}

#[test]
fn c02_physicality_sweep() {
    let t0 = Instant::now();
    let mut summary = String::new();
    for (label, cfg) in [
        ("fermionic dim-4", LabConfig::fermionic_ref().with_grid(128).with_substeps(4)),
        ("bosonic dim-40", LabConfig::bosonic_ref().with_grid(128).with_substeps(4)),
    ] {
        let constraints =
            PulseConstraints::standard(5, 1.0, 128, 25.0, vec![Axis::X, Axis::Y]);
        let gen = JointGenerator::build(&cfg).unwrap();
        let thermal = cfg.aux_thermal().unwrap();

        use rayon::prelude::*;
        let units: Vec<(usize, usize)> =
            (0..100).flat_map(|i| (0..6).map(move |s| (i, s))).collect();
        let stats: Vec<(f64, f64, f64)> = units
            .par_iter()
            .map(|&(i, s)| {
                let mut rng = ChaCha12Rng::seed_from_u64(0xACC0 + i as u64);
                let seq = random_sequence(&mut rng, &constraints).unwrap();
                let w = render(&seq);
                let rho0 = kron(PAULI_STATES[s].density().op(), thermal.op());
                let mut max_herm = 0.0f64;
                let mut min_ev = f64::INFINITY;
                let out = gen
                    .master_equation()
                    .propagate(&w, rho0.mat(), cfg.substeps, |_, rho| {
                        max_herm = max_herm.max(hermiticity_error(rho));
                        let op = Operator::new(rho.clone()).unwrap();
                        let evs = hermitian_eigenvalues(&op).unwrap();
                        min_ev = min_ev.min(evs[0]);
                    })
                    .unwrap();
                (out.max_trace_drift, max_herm, min_ev)
            })
            .collect();
        let max_drift = stats.iter().map(|s| s.0).fold(0.0, f64::max);
        let max_herm = stats.iter().map(|s| s.1).fold(0.0, f64::max);
        let min_ev = stats.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
        assert!(
            max_drift <= 1e-8,
            "C2 FAIL ({label}): trace drift {max_drift:.2e} exceeds 1e-8"
        );
        assert!(
            max_herm <= 1e-10,
            "C2 FAIL ({label}): Hermiticity error {max_herm:.2e} exceeds 1e-10"
        );
        assert!(
            min_ev >= -1e-8,
            "C2 FAIL ({label}): minimum eigenvalue {min_ev:.2e} below -1e-8"
        );
        summary.push_str(&format!(
            "[{label}: drift {max_drift:.1e}, herm {max_herm:.1e}, min-ev {min_ev:.1e}] "
        ));
    }
    pass("C2", &format!("100 random pulse examples per config; {summary}"), t0);
}

#[test]
fn c03_free_evolution_structure() {
    let t0 = Instant::now();
    let cfg = LabConfig::fermionic_ref().with_grid(128).with_substeps(4);
    let w = Waveform::zero(1.0, 128, &[Axis::X]);

    let mut max_coherence = 0.0f64;
    for state in [PauliState::ZPlus, PauliState::ZMinus] {
        let evolution = lindblad_propagate(&cfg, &w, &state.density(), true).unwrap();
        for rho in evolution.trajectory.unwrap() {
            let x = trace(&rho.mat().dot(pauli(Pauli::X).mat())).re;
            let y = trace(&rho.mat().dot(pauli(Pauli::Y).mat())).re;
            max_coherence = max_coherence.max(x.abs()).max(y.abs());
        }
    }
    assert!(
        max_coherence <= 1e-8,
        "C3 FAIL: z+/z- states developed transverse coherence {max_coherence:.2e}"
    );

    let reference = purity_trajectory(&cfg, PauliState::XPlus).unwrap();
    let mut max_gap = 0.0f64;
    for state in [PauliState::XMinus, PauliState::YPlus, PauliState::YMinus] {
        let p = purity_trajectory(&cfg, state).unwrap();
        for (a, b) in reference.iter().zip(p.iter()) {
            max_gap = max_gap.max((a - b).abs());
        }
    }
    assert!(
        max_gap <= 1e-8,
        "C3 FAIL: equatorial purity curves differ by {max_gap:.2e}"
    );
    let pz_plus = purity_trajectory(&cfg, PauliState::ZPlus).unwrap();
    let pz_minus = purity_trajectory(&cfg, PauliState::ZMinus).unwrap();
    let z_gap = pz_plus
        .iter()
        .zip(pz_minus.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(z_gap > 1e-3, "C3 FAIL: z+ and z- purity curves coincide (gap {z_gap:.2e})");
    pass(
        "C3",
        &format!(
            "z+- coherences <= {max_coherence:.1e}; equatorial purity spread {max_gap:.1e}; z gap {z_gap:.3}"
        ),
        t0,
    );
}

#[test]
fn c04_choi_fidelity_calibration() {
    let t0 = Instant::now();
    let mut cfg = LabConfig::fermionic_ref().with_coupling(0.0).with_grid(64).with_substeps(8);
    cfg.omega_s = 0.0;
    let w = Waveform::zero(1.0, 64, &[Axis::X]);
    let choi = choi_state(&cfg, &w).unwrap();
    let f_id = process_fidelity(&choi, &Gate::I.unitary());
    assert!((f_id - 1.0).abs() <= 1e-9, "C4 FAIL: identity-channel fidelity {f_id}");

    let depolarizing = ChoiState::try_new(
        DensityMatrix::try_new(Operator::identity(4).scale(C64::new(0.25, 0.0))).unwrap(),
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for gate in Gate::ALL {
        let f = process_fidelity(&depolarizing, &gate.unitary());
        worst = worst.max((f - 0.25).abs());
    }
    assert!(worst <= 1e-12, "C4 FAIL: depolarizing fidelity off 0.25 by {worst:.2e}");
    pass(
        "C4",
        &format!("identity channel {f_id:.12}; depolarizing off-by {worst:.1e} from 0.25"),
        t0,
    );
}

#[test]
fn c05_gradient_integrity() {
    let t0 = Instant::now();
    let config = ModelConfig {
        omega_s: 12.0,
        t_horizon: 1.0,
        steps: 16,
        axes: vec![Axis::X, Axis::Y],
        hidden: [8, 8],
        input_scale: 1.0 / 25.0,
    };
    let mut model = GrayboxModel::new(config, 17);
    let mut rng = ChaCha12Rng::seed_from_u64(19);
    let constraints = PulseConstraints::standard(2, 1.0, 16, 25.0, vec![Axis::X, Axis::Y]);
    let examples: Vec<Example> = (0..2)
        .map(|_| {
            let pulse = random_sequence(&mut rng, &constraints).unwrap();
            let waveform = render(&pulse);
            let values: Vec<f64> = (0..N_OUTPUTS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Example { pulse, waveform, record: MeasurementRecord { values, shots: Shots::Infinite } }
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();

    // weight gradients against central finite differences (h = 1e-5)
    let (_, grads) = loss_and_gradients(&model, &refs).unwrap();
    let gflat = grads.flatten();
    let mut flat = model.weights.flatten();
    let n_params = flat.len();
    let eps = 1e-5;
    let mut worst_weight = 0.0f64;
    for i in 0..n_params {
        let orig = flat[i];
        flat[i] = orig + eps;
        model.weights.assign_flat(&flat);
        let lp = loss_mse(&model, &refs).unwrap();
        flat[i] = orig - eps;
        model.weights.assign_flat(&flat);
        let lm = loss_mse(&model, &refs).unwrap();
        flat[i] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        let err = (gflat[i] - fd).abs();
        let tol = 1e-4f64.max(1e-3 * fd.abs());
        assert!(err < tol, "C5 FAIL: weight {i} gradient {} vs FD {fd}", gflat[i]);
        worst_weight = worst_weight.max(err / tol.max(1e-300));
    }
    model.weights.assign_flat(&flat);

    // input gradients, all 18 outputs x all samples x both axes
    let w = examples[0].waveform.clone();
    let pass_fwd = model.forward(&w).unwrap();
    let jac = model.input_gradient(&pass_fwd);
    let mut worst_input = 0.0f64;
    for axis in [Axis::X, Axis::Y] {
        let jm = match axis {
            Axis::X => jac.x.as_ref().unwrap(),
            Axis::Y => jac.y.as_ref().unwrap(),
        };
        for k in 0..16 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            let (p_samples, m_samples) = match axis {
                Axis::X => (wp.x.as_mut().unwrap(), wm.x.as_mut().unwrap()),
                Axis::Y => (wp.y.as_mut().unwrap(), wm.y.as_mut().unwrap()),
            };
            p_samples[k] += 1e-5;
            m_samples[k] -= 1e-5;
            let pp = model.predict(&wp).unwrap();
            let pm = model.predict(&wm).unwrap();
            for p in 0..N_OUTPUTS {
                let fd = (pp[p] - pm[p]) / 2e-5;
                let err = (jm[[p, k]] - fd).abs();
                let tol = 1e-4f64.max(1e-3 * fd.abs());
                assert!(err < tol, "C5 FAIL: input grad axis {axis:?} sample {k} output {p}");
                worst_input = worst_input.max(err / tol);
            }
        }
    }
    pass(
        "C5",
        &format!(
            "{n_params} weight and {} input gradients within max(1e-4, 1e-3 rel); worst ratios {worst_weight:.2}/{worst_input:.2}",
            2 * 16 * N_OUTPUTS
        ),
        t0,
    );
}

#[test]
fn c06_closed_system_end_to_end() {
    let t0 = Instant::now();
    let p = pipeline("desk-closed-multi-inf");
    assert!(
        p.final_test_mse <= 1e-3,
        "C6 FAIL: closed-system test MSE {:.3e} above 1e-3",
        p.final_test_mse
    );

    // mean Frobenius distance of the reconstructed noise operators from I
    let mut vdist = 0.0;
    for ex in &p.test_ds.examples {
        let fwd = p.model.forward(&ex.waveform).unwrap();
        for v in &fwd.vo {
            let mut d2 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                    d2 += (v[[i, j]] - want).norm_sqr();
                }
            }
            vdist += d2.sqrt();
        }
    }
    vdist /= (p.test_ds.examples.len() * 3) as f64;
    assert!(vdist <= 0.1, "C6 FAIL: mean ||V_O - I||_F = {vdist:.4} above 0.1");

    let results = gd_gate_results("desk-closed-multi-inf");
    let mut details = format!("test MSE {:.2e}, mean ||V-I|| {vdist:.4};", p.final_test_mse);
    for r in results.iter() {
        assert!(
            r.fidelity >= 0.999,
            "C6 FAIL: gate {} reached simulator fidelity {:.6} < 0.999",
            r.gate,
            r.fidelity
        );
        details.push_str(&format!(" {}={:.4}", r.gate, r.fidelity));
    }
    pass("C6", &details, t0);
}

#[test]
fn c07_shot_noise_trend() {
    let t0 = Instant::now();
    let mse_512 = pipeline("desk-fermionic-single-512").final_test_mse;
    let mse_1024 = pipeline("desk-fermionic-single-1024").final_test_mse;
    let mse_inf = pipeline("desk-fermionic-single-inf").final_test_mse;
    assert!(
        mse_512 > mse_1024 && mse_1024 > mse_inf,
        "C7 FAIL: MSE ordering violated: {mse_512:.3e} (512) vs {mse_1024:.3e} (1024) vs {mse_inf:.3e} (inf)"
    );
    pass(
        "C7",
        &format!("test MSE {mse_512:.3e} (N=512) > {mse_1024:.3e} (N=1024) > {mse_inf:.3e} (N=inf)"),
        t0,
    );
}

#[test]
fn c08_weak_coupling_control() {
    let t0 = Instant::now();
    let results = gd_gate_results("desk-fermionic-multi-1024-v0.2");
    let mut details = String::new();
    for want in ["I", "X"] {
        let r = results.iter().find(|r| r.gate == want).unwrap();
        assert!(
            r.fidelity >= 0.95,
            "C8 FAIL: gate {} fidelity {:.4} below 0.95",
            r.gate,
            r.fidelity
        );
        details.push_str(&format!("{}={:.4} ", r.gate, r.fidelity));
    }
    pass("C8", &format!("fermionic V=0.2 multi-axis GD: {details}"), t0);
}

#[test]
fn c09_coupling_monotonicity() {
    let t0 = Instant::now();
    let mut means = Vec::new();
    for name in [
        "desk-fermionic-multi-1024-v0.2",
        "desk-fermionic-multi-1024-v1",
        "desk-fermionic-multi-1024-v2",
    ] {
        let results = gd_gate_results(name);
        let mean = results.iter().map(|r| r.fidelity).sum::<f64>() / results.len() as f64;
        means.push(mean);
    }
    assert!(
        means[0] >= means[1] && means[1] >= means[2],
        "C9 FAIL: mean six-gate fidelity not non-increasing in V: {means:?}"
    );
    pass(
        "C9",
        &format!(
            "mean six-gate fidelity {:.4} (V=0.2) >= {:.4} (V=1) >= {:.4} (V=2)",
            means[0], means[1], means[2]
        ),
        t0,
    );
}

#[test]
fn c10_optimizer_parity_on_toy() {
    let t0 = Instant::now();
    // constraint-bound toy: weak single-axis drive on a closed qubit, so
    // both optimizers probe the same reachability-limited cost floor
    let steps = 32;
    let a_max = 3.0;
    let mut lab = LabConfig::fermionic_ref().with_coupling(0.0).with_grid(steps);
    lab.substeps = 16;
    let constraints = PulseConstraints::standard(2, 1.0, steps, a_max, vec![Axis::X]);
    let model = GrayboxModel::new_identity(ModelConfig {
        omega_s: lab.omega_s,
        t_horizon: 1.0,
        steps,
        axes: vec![Axis::X],
        hidden: [8, 8],
        input_scale: 1.0 / a_max,
    });
    let gd_opts = GdOptions { learning_rate: 0.1, iterations: 400, restarts: 10, seed: 7 };
    let ga_opts = GaOptions {
        population: 50,
        generations: 600,
        mutation_sigma: 0.1,
        mutation_decay: 0.985,
        tournament_k: 3,
        elitism: 2,
        seed: 7,
    };

    let mut details = String::new();
    for gate in Gate::ALL {
        let gd = optimize_gd(&model, &lab, gate, &constraints, &gd_opts).unwrap();
        let ga = optimize_ga(&model, &lab, gate, &constraints, &ga_opts).unwrap();
        assert!(
            ga.cost <= 2.0 * gd.cost,
            "C10 FAIL: gate {} GA J {:.4e} exceeds 2x GD J {:.4e}",
            gate.name(),
            ga.cost,
            gd.cost
        );
        // determinism under fixed seeds
        let gd2 = optimize_gd(&model, &lab, gate, &constraints, &gd_opts).unwrap();
        let ga2 = optimize_ga(&model, &lab, gate, &constraints, &ga_opts).unwrap();
        assert!(
            gd2.cost == gd.cost && gd2.pulse == gd.pulse,
            "C10 FAIL: GD not deterministic for {}",
            gate.name()
        );
        assert!(
            ga2.cost == ga.cost && ga2.pulse == ga.pulse,
            "C10 FAIL: GA not deterministic for {}",
            gate.name()
        );
        details.push_str(&format!(
            "{}: gd {:.3e} / ga {:.3e}; ",
            gate.name(),
            gd.cost,
            ga.cost
        ));
    }
    pass("C10", &details, t0);
}

#[test]
fn pinned_substeps_pass_convergence_gate() {
    // the desk profiles ship with precalibrated RK4 substep counts; verify
    // the halving gate still holds for them
    let t0 = Instant::now();
    for name in ["desk-fermionic-multi-1024-v2", "desk-bosonic-multi-1024", "smoke"] {
        let p = profiles::resolve(name).unwrap();
        let cfg = p.data.lab.clone();
        assert!(cfg.substeps >= 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0x6A7E);
        let seq = random_sequence(&mut rng, &p.data.pulses).unwrap();
        let w = render(&seq);
        let coarse = gbx_core::sim::expectations_exact(&cfg, &w).unwrap().values;
        let fine = gbx_core::sim::expectations_exact(
            &cfg.clone().with_substeps(2 * cfg.substeps),
            &w,
        )
        .unwrap()
        .values;
        let diff =
            coarse.iter().zip(fine.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(
            diff <= gbx_core::sim::CONVERGENCE_GATE,
            "profile {name}: halving the substep moved outputs by {diff:.2e}"
        );
    }
    pass("substeps", "pinned desk substep counts satisfy the 1e-6 halving gate", t0);
}

#[test]
fn control_unitary_phase_consistency() {
    // the identity-channel fidelity of the drift gate must be exact for any
    // grid, pinning the process-fidelity phase conventions
    let t0 = Instant::now();
    let lab = LabConfig::fermionic_ref().with_coupling(0.0).with_grid(32).with_substeps(16);
    let w = Waveform::zero(1.0, 32, &[Axis::X]);
    let drift = gbx_core::sim::control_unitary(&w, lab.omega_s);
    let choi = choi_state(&lab, &w).unwrap();
    let f = process_fidelity(&choi, &drift);
    assert!((f - 1.0).abs() < 1e-8);
    let g = UnitaryOperator::try_new(
        Operator::new(drift.mat().mapv(|z| z * C64::new(0.0, 0.421).exp())).unwrap(),
    )
    .unwrap();
    let f_phased = process_fidelity(&choi, &g);
    assert!((f - f_phased).abs() < 1e-12);
    pass("phase", "drift-gate fidelity 1, invariant under global phase", t0);
}
