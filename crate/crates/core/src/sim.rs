//! Ground-truth physics: time-ordered control unitary, Lindblad propagation
//! of the qubit + auxiliary joint state, measurement statistics, and
//! Choi-state process evaluation.
//!
//! The qubit couples to a single auxiliary mode (fermionic two-level dot or
//! truncated bosonic cavity) which is itself damped by two Markovian
//! channels. The joint state obeys
//! `drho/dt = -i[H(t), rho] + sum_j (L_j rho L_j^dag - 1/2 {L_j^dag L_j, rho})`
//! with `H(t) = H_ctrl(t) (x) I + I (x) omega_d n + (V sigma_+ (x) b + h.c.)`
//! and jumps `sqrt(gamma_L) I (x) b`, `sqrt(gamma_R) I (x) b^dag`.
//!
//! Integration is fixed-step RK4 with a piecewise-constant Hamiltonian per
//! control step and a configurable number of substeps; [`calibrate_substeps`]
//! doubles the substep count until halving the step changes the 18 final
//! expectations by no more than 1e-6.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, bosonic_annihilation, dagger, fermionic_annihilation, kron, partial_trace_mat, pauli,
    trace, DensityMatrix, Keep, LinalgError, Operator, Pauli, ThermalParams, UnitaryOperator,
};
use crate::pulse::{Axis, Waveform};

/// Abort threshold on `|tr rho - 1|` during propagation.
pub const TRACE_TOL: f64 = 1e-6;
/// Convergence gate for substep calibration: halving the substep size must
/// move the 18 final expectations by no more than this.
pub const CONVERGENCE_GATE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid lab config: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: trace drift {drift:.3e} at control step {step} exceeds {TRACE_TOL:.0e}; increase substeps")]
    NumericalFailure { step: usize, drift: f64 },
    #[error("substep calibration did not converge below S = {0}")]
    CalibrationDiverged(u32),
    #[error("waveform/config mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Kind of the auxiliary mode and its Markovian baths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BathKind {
    Fermionic,
    Bosonic,
}

/// Ground-truth simulator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    /// Qubit energy gap (drift along z).
    pub omega_s: f64,
    pub bath: BathKind,
    /// Auxiliary mode frequency.
    pub omega_d: f64,
    /// Qubit-auxiliary coupling V (complex in general).
    pub coupling: C64,
    /// Rate of the `I (x) b` jump.
    pub gamma_l: f64,
    /// Rate of the `I (x) b^dag` jump.
    pub gamma_r: f64,
    /// Initial thermal state of the auxiliary.
    pub thermal: ThermalParams,
    /// Auxiliary Hilbert-space dimension (2 for fermionic).
    pub trunc_dim: usize,
    #[serde(rename = "T")]
    pub t_horizon: f64,
    /// Number of control steps.
    #[serde(rename = "M")]
    pub steps: usize,
    /// RK4 substeps per control step; 0 means "calibrate before use".
    pub substeps: u32,
}

impl LabConfig {
    /// Fermionic reference configuration: omega_s = 12, omega_d = 5, V = 2,
    /// gamma_L = gamma_R = 0.7, thermal beta = 1 / mu = 3, T = 1, M = 1024.
    pub fn fermionic_ref() -> Self {
        Self {
            omega_s: 12.0,
            bath: BathKind::Fermionic,
            omega_d: 5.0,
            coupling: C64::new(2.0, 0.0),
            gamma_l: 0.7,
            gamma_r: 0.7,
            thermal: ThermalParams::Fermionic { beta: 1.0, mu_chem: 3.0 },
            trunc_dim: 2,
            t_horizon: 1.0,
            steps: 1024,
            substeps: 0,
        }
    }

    /// Bosonic reference configuration: V = 1.3, mean photon number 1,
    /// truncation 20, otherwise as the fermionic reference.
    pub fn bosonic_ref() -> Self {
        Self {
            omega_s: 12.0,
            bath: BathKind::Bosonic,
            omega_d: 5.0,
            coupling: C64::new(1.3, 0.0),
            gamma_l: 0.7,
            gamma_r: 0.7,
            thermal: ThermalParams::Bosonic { n_bar: 1.0 },
            trunc_dim: 20,
            t_horizon: 1.0,
            steps: 1024,
            substeps: 0,
        }
    }

    pub fn with_coupling(mut self, v: f64) -> Self {
        self.coupling = C64::new(v, 0.0);
        self
    }

    pub fn with_grid(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_substeps(mut self, substeps: u32) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.gamma_l < 0.0 || self.gamma_r < 0.0 {
            return Err(SimError::InvalidConfig("decay rates must be non-negative".into()));
        }
        match self.bath {
            BathKind::Fermionic => {
                if self.trunc_dim != 2 {
                    return Err(SimError::InvalidConfig(
                        "fermionic auxiliary is exactly 2-dimensional".into(),
                    ));
                }
                if !matches!(self.thermal, ThermalParams::Fermionic { .. }) {
                    return Err(SimError::InvalidConfig(
                        "fermionic bath needs fermionic thermal parameters".into(),
                    ));
                }
            }
            BathKind::Bosonic => {
                if self.trunc_dim < 2 {
                    return Err(SimError::InvalidConfig("bosonic truncation must be >= 2".into()));
                }
                if !matches!(self.thermal, ThermalParams::Bosonic { .. }) {
                    return Err(SimError::InvalidConfig(
                        "bosonic bath needs bosonic thermal parameters".into(),
                    ));
                }
            }
        }
        if !(self.t_horizon > 0.0) || self.steps == 0 {
            return Err(SimError::InvalidConfig("need T > 0 and at least one step".into()));
        }
        Ok(())
    }

    /// Annihilation operator of the auxiliary mode.
    pub fn mode_operator(&self) -> Result<Operator, SimError> {
        Ok(match self.bath {
            BathKind::Fermionic => fermionic_annihilation(),
            BathKind::Bosonic => bosonic_annihilation(self.trunc_dim)?,
        })
    }

    pub fn aux_thermal(&self) -> Result<DensityMatrix, SimError> {
        Ok(linalg::thermal_state(&self.thermal, self.omega_d, self.trunc_dim)?)
    }
}

/// Number of measurement repetitions per expectation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Finite(u32),
    Infinite,
}

impl Serialize for Shots {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Shots::Finite(n) => serializer.serialize_u32(*n),
            Shots::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Shots;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a positive shot count or \"inf\"")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Shots, E> {
                if v == 0 || v > u32::MAX as u64 {
                    return Err(E::custom("shot count out of range"));
                }
                Ok(Shots::Finite(v as u32))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Shots, E> {
                if v == "inf" {
                    Ok(Shots::Infinite)
                } else {
                    Err(E::custom(format!("expected \"inf\", got {v:?}")))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            Shots::Finite(n) => write!(f, "{n}"),
            Shots::Infinite => write!(f, "inf"),
        }
    }
}

/// Total number of (initial state, observable) pairs.
pub const N_OUTPUTS: usize = 18;

/// The six Pauli eigenstates, canonical order x+, x-, y+, y-, z+, z-.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliState {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
    ZPlus,
    ZMinus,
}

pub const PAULI_STATES: [PauliState; 6] = [
    PauliState::XPlus,
    PauliState::XMinus,
    PauliState::YPlus,
    PauliState::YMinus,
    PauliState::ZPlus,
    PauliState::ZMinus,
];

impl PauliState {
    pub fn label(&self) -> &'static str {
        match self {
            PauliState::XPlus => "x+",
            PauliState::XMinus => "x-",
            PauliState::YPlus => "y+",
            PauliState::YMinus => "y-",
            PauliState::ZPlus => "z+",
            PauliState::ZMinus => "z-",
        }
    }

    /// Density matrix `(I +- sigma)/2`.
    pub fn density(&self) -> DensityMatrix {
        let (p, sign) = match self {
            PauliState::XPlus => (Pauli::X, 1.0),
            PauliState::XMinus => (Pauli::X, -1.0),
            PauliState::YPlus => (Pauli::Y, 1.0),
            PauliState::YMinus => (Pauli::Y, -1.0),
            PauliState::ZPlus => (Pauli::Z, 1.0),
            PauliState::ZMinus => (Pauli::Z, -1.0),
        };
        let m = (&Operator::identity(2) + &pauli(p).scale(C64::new(sign, 0.0)))
            .scale(C64::new(0.5, 0.0));
        DensityMatrix::new_unchecked(m)
    }
}

/// Measured observables, canonical order X, Y, Z.
pub fn observables() -> [Operator; 3] {
    [pauli(Pauli::X), pauli(Pauli::Y), pauli(Pauli::Z)]
}

pub fn observable_label(o: usize) -> &'static str {
    ["X", "Y", "Z"][o]
}

/// Index into the 18-vector for (state, observable).
pub fn output_index(state: usize, observable: usize) -> usize {
    3 * state + observable
}

/// The 18 expectation values of one prepare-control-measure experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub values: Vec<f64>,
    pub shots: Shots,
}

impl MeasurementRecord {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.values.len() != N_OUTPUTS {
            return Err(SimError::Mismatch(format!(
                "record has {} values, expected {N_OUTPUTS}",
                self.values.len()
            )));
        }
        for &v in &self.values {
            if !(v.abs() <= 1.0 + 1e-9) {
                return Err(SimError::Mismatch(format!("expectation {v} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

/// A Lindblad master equation with a Hamiltonian that is constant except for
/// the two scalar control drives: `H(t) = H_const + f_x(t) H_x + f_y(t) H_y`.
pub struct MasterEquation {
    h_const: Array2<C64>,
    h_x: Array2<C64>,
    h_y: Array2<C64>,
    /// `H_const - i/2 sum_j L_j^dag L_j`; the anti-Hermitian part folds the
    /// anticommutator into a single product per RHS evaluation.
    heff_const: Array2<C64>,
    jumps: Vec<Array2<C64>>,
    jumps_dag: Vec<Array2<C64>>,
    dim: usize,
}

/// Result of one propagation.
pub struct Propagated {
    pub rho_final: Array2<C64>,
    pub max_trace_drift: f64,
}

impl MasterEquation {
    pub fn new(
        h_const: Array2<C64>,
        h_x: Array2<C64>,
        h_y: Array2<C64>,
        jumps: Vec<Array2<C64>>,
    ) -> Self {
        let dim = h_const.nrows();
        let mut heff_const = h_const.clone();
        for l in &jumps {
            let ldl = dagger(l).dot(l);
            // -i/2 L^dag L
            heff_const.scaled_add(C64::new(0.0, -0.5), &ldl);
        }
        let jumps_dag = jumps.iter().map(dagger).collect();
        Self { h_const, h_x, h_y, heff_const, jumps, jumps_dag, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jumps(&self) -> &[Array2<C64>] {
        &self.jumps
    }

    /// The Hermitian Hamiltonian at given drive values.
    pub fn hamiltonian_at(&self, fx: f64, fy: f64) -> Array2<C64> {
        let mut h = self.h_const.clone();
        h.scaled_add(C64::new(fx, 0.0), &self.h_x);
        h.scaled_add(C64::new(fy, 0.0), &self.h_y);
        h
    }

    /// `-i (A - A^dag) + sum_j L_j rho L_j^dag` with `A = H_eff rho`.
    fn rhs(&self, heff: &Array2<C64>, rho: &Array2<C64>) -> Array2<C64> {
        let a = heff.dot(rho);
        let adag = dagger(&a);
        let mut out = Array2::from_shape_fn((self.dim, self.dim), |(i, j)| {
            let z = a[[i, j]] - adag[[i, j]];
            C64::new(z.im, -z.re)
        });
        for (l, ld) in self.jumps.iter().zip(&self.jumps_dag) {
            out = out + l.dot(rho).dot(ld);
        }
        out
    }

    /// Fixed-step RK4 through all control steps; `on_step(k, rho)` runs after
    /// control step `k` completes. Aborts when `|tr rho - 1|` exceeds
    /// [`TRACE_TOL`].
    pub fn propagate<F: FnMut(usize, &Array2<C64>)>(
        &self,
        w: &Waveform,
        rho0: &Array2<C64>,
        substeps: u32,
        mut on_step: F,
    ) -> Result<Propagated, SimError> {
        if substeps == 0 {
            return Err(SimError::InvalidConfig("substeps must be >= 1 (calibrate first)".into()));
        }
        let m = w.steps();
        if m == 0 {
            return Err(SimError::Mismatch("empty waveform".into()));
        }
        let dt = w.t_horizon / m as f64 / substeps as f64;
        let mut rho = rho0.clone();
        let mut max_drift = 0.0f64;
        for k in 0..m {
            let mut heff = self.heff_const.clone();
            let fx = w.sample(Axis::X, k);
            let fy = w.sample(Axis::Y, k);
            if fx != 0.0 {
                heff.scaled_add(C64::new(fx, 0.0), &self.h_x);
            }
            if fy != 0.0 {
                heff.scaled_add(C64::new(fy, 0.0), &self.h_y);
            }
            for _ in 0..substeps {
                let k1 = self.rhs(&heff, &rho);
                let mut s = rho.clone();
                s.scaled_add(C64::new(0.5 * dt, 0.0), &k1);
                let k2 = self.rhs(&heff, &s);
                let mut s = rho.clone();
                s.scaled_add(C64::new(0.5 * dt, 0.0), &k2);
                let k3 = self.rhs(&heff, &s);
                let mut s = rho.clone();
                s.scaled_add(C64::new(dt, 0.0), &k3);
                let k4 = self.rhs(&heff, &s);
                rho.scaled_add(C64::new(dt / 6.0, 0.0), &k1);
                rho.scaled_add(C64::new(dt / 3.0, 0.0), &k2);
                rho.scaled_add(C64::new(dt / 3.0, 0.0), &k3);
                rho.scaled_add(C64::new(dt / 6.0, 0.0), &k4);
            }
            let drift = (trace(&rho) - C64::new(1.0, 0.0)).norm();
            if !(drift <= TRACE_TOL) {
                return Err(SimError::NumericalFailure { step: k, drift });
            }
            max_drift = max_drift.max(drift);
            on_step(k, &rho);
        }
        Ok(Propagated { rho_final: rho, max_trace_drift: max_drift })
    }
}

/// How the qubit factor is embedded in the joint space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SystemEmbedding {
    /// system = qubit (dimension 2)
    Qubit,
    /// system = qubit (x) unevolved reference (dimension 4), for Choi states
    QubitWithReference,
}

/// The joint qubit(+reference)+auxiliary generator of a [`LabConfig`].
pub struct JointGenerator {
    me: MasterEquation,
    dim_sys: usize,
    dim_aux: usize,
    aux_thermal: Array2<C64>,
}

impl JointGenerator {
    pub fn build(cfg: &LabConfig) -> Result<Self, SimError> {
        Self::build_embedded(cfg, SystemEmbedding::Qubit)
    }

    fn build_embedded(cfg: &LabConfig, embedding: SystemEmbedding) -> Result<Self, SimError> {
        cfg.validate()?;
        let mode = cfg.mode_operator()?;
        let mode_dag = mode.dagger();
        let da = cfg.trunc_dim;
        let i_aux = Operator::identity(da);

        // embed a qubit operator into the system factor
        let embed = |op: &Operator| -> Operator {
            match embedding {
                SystemEmbedding::Qubit => op.clone(),
                SystemEmbedding::QubitWithReference => kron(op, &Operator::identity(2)),
            }
        };
        let ds = match embedding {
            SystemEmbedding::Qubit => 2,
            SystemEmbedding::QubitWithReference => 4,
        };
        let i_sys = Operator::identity(ds);

        let number = mode_dag.matmul(&mode);
        let half = C64::new(0.5, 0.0);
        let v = cfg.coupling;

        let mut h_const = kron(&embed(&pauli(Pauli::Z)).scale(half * cfg.omega_s), &i_aux);
        h_const = &h_const + &kron(&i_sys, &number.scale(C64::new(cfg.omega_d, 0.0)));
        let coupling = &kron(&embed(&pauli(Pauli::Plus)), &mode).scale(v)
            + &kron(&embed(&pauli(Pauli::Minus)), &mode_dag).scale(v.conj());
        h_const = &h_const + &coupling;

        let h_x = kron(&embed(&pauli(Pauli::X)).scale(half), &i_aux);
        let h_y = kron(&embed(&pauli(Pauli::Y)).scale(half), &i_aux);

        let mut jumps = Vec::new();
        if cfg.gamma_l > 0.0 {
            jumps.push(kron(&i_sys, &mode.scale(C64::new(cfg.gamma_l.sqrt(), 0.0))).into_mat());
        }
        if cfg.gamma_r > 0.0 {
            jumps.push(kron(&i_sys, &mode_dag.scale(C64::new(cfg.gamma_r.sqrt(), 0.0))).into_mat());
        }

        let aux_thermal = cfg.aux_thermal()?.mat().clone();
        Ok(Self {
            me: MasterEquation::new(h_const.into_mat(), h_x.into_mat(), h_y.into_mat(), jumps),
            dim_sys: ds,
            dim_aux: da,
            aux_thermal,
        })
    }

    pub fn master_equation(&self) -> &MasterEquation {
        &self.me
    }

    pub fn dim_joint(&self) -> usize {
        self.dim_sys * self.dim_aux
    }

    /// Joint Hamiltonian at drive values (f_x, f_y).
    pub fn hamiltonian_at(&self, fx: f64, fy: f64) -> Operator {
        Operator::new(self.me.hamiltonian_at(fx, fy)).expect("generator matrices are finite")
    }

    /// Tensor the system state with the auxiliary thermal state.
    fn joint_initial(&self, rho_sys: &Array2<C64>) -> Array2<C64> {
        let (ds, da) = (self.dim_sys, self.dim_aux);
        let mut out = Array2::zeros((ds * da, ds * da));
        for i1 in 0..ds {
            for j1 in 0..ds {
                let s = rho_sys[[i1, j1]];
                if s == C64::new(0.0, 0.0) {
                    continue;
                }
                for i2 in 0..da {
                    for j2 in 0..da {
                        out[[i1 * da + i2, j1 * da + j2]] = s * self.aux_thermal[[i2, j2]];
                    }
                }
            }
        }
        out
    }

    /// Reduced system state (auxiliary traced out), renormalized to unit
    /// trace to absorb integrator drift (bounded by [`TRACE_TOL`]).
    fn reduce(&self, rho_joint: &Array2<C64>) -> Array2<C64> {
        let mut sys = partial_trace_mat(rho_joint, (self.dim_sys, self.dim_aux), Keep::Sys)
            .expect("joint dimension is ds*da by construction");
        let tr = trace(&sys);
        sys.mapv_inplace(|z| z / tr.re);
        sys
    }
}

/// Per-step closed-system propagators `exp(-i H_k T/M)` with
/// `H_k = 1/2 (omega_s sigma_z + f_x(t_k) sigma_x + f_y(t_k) sigma_y)`.
pub fn step_unitaries(w: &Waveform, omega_s: f64) -> Vec<Array2<C64>> {
    let m = w.steps();
    let dt = w.t_horizon / m as f64;
    (0..m)
        .map(|k| {
            let h = control_hamiltonian(omega_s, w.sample(Axis::X, k), w.sample(Axis::Y, k));
            linalg::expm_2x2_raw(&h, dt)
        })
        .collect()
}

/// The 2x2 control Hamiltonian at given drive values.
pub fn control_hamiltonian(omega_s: f64, fx: f64, fy: f64) -> Array2<C64> {
    let mut h = Array2::zeros((2, 2));
    h[[0, 0]] = C64::new(0.5 * omega_s, 0.0);
    h[[1, 1]] = C64::new(-0.5 * omega_s, 0.0);
    h[[0, 1]] = C64::new(0.5 * fx, -0.5 * fy);
    h[[1, 0]] = C64::new(0.5 * fx, 0.5 * fy);
    h
}

/// Time-ordered control unitary; the leftmost factor is the latest time.
pub fn control_unitary(w: &Waveform, omega_s: f64) -> UnitaryOperator {
    let mut u: Array2<C64> = Array2::eye(2);
    for uk in step_unitaries(w, omega_s) {
        u = uk.dot(&u);
    }
    UnitaryOperator::try_new(Operator::new(u).expect("finite product"))
        .expect("product of closed-form step unitaries is unitary")
}

/// Closed-system predictions `tr(U rho0 U^dag O)` for the 18 canonical pairs.
pub fn closed_system_expectations(w: &Waveform, omega_s: f64) -> [f64; N_OUTPUTS] {
    let u = control_unitary(w, omega_s);
    let obs = observables();
    let mut out = [0.0; N_OUTPUTS];
    for (s, state) in PAULI_STATES.iter().enumerate() {
        let evolved = u.mat().dot(state.density().mat()).dot(&dagger(u.mat()));
        for (o, ob) in obs.iter().enumerate() {
            out[output_index(s, o)] = trace(&evolved.dot(ob.mat())).re;
        }
    }
    out
}

/// Final system state (and optionally the per-step trajectory) of the qubit
/// prepared in `rho_s0` and driven by `w` inside the bath.
pub struct QubitEvolution {
    pub final_state: DensityMatrix,
    pub trajectory: Option<Vec<DensityMatrix>>,
    pub max_trace_drift: f64,
}

pub fn lindblad_propagate(
    cfg: &LabConfig,
    w: &Waveform,
    rho_s0: &DensityMatrix,
    want_trajectory: bool,
) -> Result<QubitEvolution, SimError> {
    check_grid(cfg, w)?;
    let gen = JointGenerator::build(cfg)?;
    let rho0 = gen.joint_initial(rho_s0.mat());
    let mut traj = want_trajectory.then(Vec::new);
    let propagated = gen.me.propagate(w, &rho0, cfg.substeps, |_k, rho| {
        if let Some(t) = traj.as_mut() {
            t.push(DensityMatrix::new_unchecked(
                Operator::new(gen.reduce(rho)).expect("reduced state finite"),
            ));
        }
    })?;
    let final_state = DensityMatrix::try_new(
        Operator::new(gen.reduce(&propagated.rho_final)).expect("reduced state finite"),
    )?;
    Ok(QubitEvolution {
        final_state,
        trajectory: traj,
        max_trace_drift: propagated.max_trace_drift,
    })
}

fn check_grid(cfg: &LabConfig, w: &Waveform) -> Result<(), SimError> {
    if w.steps() != cfg.steps {
        return Err(SimError::Mismatch(format!(
            "waveform has {} steps, config says {}",
            w.steps(),
            cfg.steps
        )));
    }
    if (w.t_horizon - cfg.t_horizon).abs() > 1e-12 {
        return Err(SimError::Mismatch(format!(
            "waveform horizon {} differs from config {}",
            w.t_horizon, cfg.t_horizon
        )));
    }
    Ok(())
}

/// Exact (infinite-shot) expectations for all 18 canonical pairs.
#[derive(Debug)]
pub struct ExactExpectations {
    pub values: [f64; N_OUTPUTS],
    pub max_trace_drift: f64,
}

pub fn expectations_exact(cfg: &LabConfig, w: &Waveform) -> Result<ExactExpectations, SimError> {
    check_grid(cfg, w)?;
    let gen = JointGenerator::build(cfg)?;
    let obs = observables();
    let mut values = [0.0; N_OUTPUTS];
    let mut max_drift = 0.0f64;
    for (s, state) in PAULI_STATES.iter().enumerate() {
        let rho0 = gen.joint_initial(state.density().mat());
        let propagated = gen.me.propagate(w, &rho0, cfg.substeps, |_, _| {})?;
        max_drift = max_drift.max(propagated.max_trace_drift);
        let rho_s = gen.reduce(&propagated.rho_final);
        for (o, ob) in obs.iter().enumerate() {
            values[output_index(s, o)] = trace(&rho_s.dot(ob.mat())).re;
        }
    }
    Ok(ExactExpectations { values, max_trace_drift: max_drift })
}

/// Replace an exact expectation by a finite-shot estimate `2k/N - 1`,
/// `k ~ Binomial(N, (1 + <O>)/2)`.
pub fn sample_expectation<R: Rng>(exact: f64, shots: u32, rng: &mut R) -> f64 {
    let p = ((1.0 + exact) / 2.0).clamp(0.0, 1.0);
    let k = Binomial::new(shots as u64, p).expect("probability in range").sample(rng);
    2.0 * k as f64 / shots as f64 - 1.0
}

/// Propagate all 6 initial states and measure X, Y, Z on each.
pub fn measure_all<R: Rng>(
    cfg: &LabConfig,
    w: &Waveform,
    shots: Shots,
    rng: &mut R,
) -> Result<MeasurementRecord, SimError> {
    let exact = expectations_exact(cfg, w)?;
    let values = match shots {
        Shots::Infinite => exact.values.to_vec(),
        Shots::Finite(n) => {
            exact.values.iter().map(|&v| sample_expectation(v, n, rng)).collect()
        }
    };
    Ok(MeasurementRecord { values, shots })
}

/// Normalized 4x4 Choi state of the pulse-driven channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiState {
    rho: DensityMatrix,
}

impl ChoiState {
    /// Tolerance on trace preservation: the reduced state on the unevolved
    /// reference must stay I/2.
    pub const TRACE_PRESERVATION_TOL: f64 = 1e-6;

    pub fn try_new(rho: DensityMatrix) -> Result<Self, SimError> {
        if rho.dim() != 4 {
            return Err(SimError::Mismatch(format!("Choi state must be 4x4, got {}", rho.dim())));
        }
        // tracing out the evolved qubit must leave the reference in I/2
        let reduced = partial_trace_mat(rho.mat(), (2, 2), Keep::Aux)?;
        let mut err = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { C64::new(0.5, 0.0) } else { C64::new(0.0, 0.0) };
                err = err.max((reduced[[i, j]] - want).norm());
            }
        }
        if err > Self::TRACE_PRESERVATION_TOL {
            return Err(SimError::Mismatch(format!(
                "channel is not trace preserving: reference reduced state off I/2 by {err:.3e}"
            )));
        }
        Ok(Self { rho })
    }

    pub fn density(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn mat(&self) -> &Array2<C64> {
        self.rho.mat()
    }

    /// 4x4 nested arrays of [re, im] pairs.
    pub fn to_json_value(&self) -> serde_json::Value {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|i| (0..4).map(|j| [self.mat()[[i, j]].re, self.mat()[[i, j]].im]).collect())
            .collect();
        serde_json::json!(rows)
    }

    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Result<Self, SimError> {
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(SimError::Mismatch("Choi matrix must be 4x4".into()));
        }
        let mut mat = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                mat[[i, j]] = C64::new(rows[i][j][0], rows[i][j][1]);
            }
        }
        Self::try_new(DensityMatrix::try_new(Operator::new(mat)?)?)
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self, SimError> {
        let rows: Vec<Vec<[f64; 2]>> = serde_json::from_value(v.clone())
            .map_err(|e| SimError::Mismatch(format!("bad Choi JSON: {e}")))?;
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(SimError::Mismatch("Choi JSON must be 4x4".into()));
        }
        let mut mat = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                mat[[i, j]] = C64::new(rows[i][j][0], rows[i][j][1]);
            }
        }
        Self::try_new(DensityMatrix::try_new(Operator::new(mat)?)?)
    }
}

impl Serialize for ChoiState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|i| (0..4).map(|j| [self.mat()[[i, j]].re, self.mat()[[i, j]].im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChoiState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        ChoiState::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Evolve half of an EPR pair (with the auxiliary attached) and return the
/// normalized Choi state on (evolved qubit) (x) (reference).
pub fn choi_state(cfg: &LabConfig, w: &Waveform) -> Result<ChoiState, SimError> {
    check_grid(cfg, w)?;
    let gen = JointGenerator::build_embedded(cfg, SystemEmbedding::QubitWithReference)?;
    // |Phi+> = (|00> + |11>)/sqrt(2) on qubit (x) reference, index q*2 + r
    let mut epr = Array2::zeros((4, 4));
    for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        epr[[i, j]] = C64::new(0.5, 0.0);
    }
    let rho0 = gen.joint_initial(&epr);
    let propagated = gen.me.propagate(w, &rho0, cfg.substeps, |_, _| {})?;
    let choi = gen.reduce(&propagated.rho_final);
    ChoiState::try_new(DensityMatrix::try_new(Operator::new(choi)?)?)
}

/// `<Phi_G| choi |Phi_G>` with `|Phi_G> = (G (x) I)(|00> + |11>)/sqrt(2)`.
pub fn process_fidelity(choi: &ChoiState, g: &UnitaryOperator) -> f64 {
    // (G (x) I)|Phi+> has amplitudes G[q, r]/sqrt(2) at index q*2 + r
    let gm = g.mat();
    let mut v = [C64::new(0.0, 0.0); 4];
    for q in 0..2 {
        for r in 0..2 {
            v[q * 2 + r] = gm[[q, r]] / C64::new(2.0f64.sqrt(), 0.0);
        }
    }
    let mut f = C64::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            f += v[i].conj() * choi.mat()[[i, j]] * v[j];
        }
    }
    f.re
}

/// Purity `tr(rho_s(t_k)^2)` of the qubit under free evolution.
pub fn purity_trajectory(cfg: &LabConfig, initial: PauliState) -> Result<Vec<f64>, SimError> {
    let w = Waveform::zero(cfg.t_horizon, cfg.steps, &[Axis::X]);
    let evolution = lindblad_propagate(cfg, &w, &initial.density(), true)?;
    Ok(evolution.trajectory.unwrap().iter().map(|rho| rho.purity()).collect())
}

/// Double the RK4 substep count, starting at 2, until halving the step moves
/// the 18 final expectations of a strong probe pulse by at most
/// [`CONVERGENCE_GATE`]. Returns the accepted substep count.
pub fn calibrate_substeps(
    cfg: &LabConfig,
    constraints: &crate::pulse::PulseConstraints,
) -> Result<u32, SimError> {
    use rand::SeedableRng;
    cfg.validate()?;
    if constraints.steps != cfg.steps || (constraints.t_horizon - cfg.t_horizon).abs() > 1e-12 {
        return Err(SimError::Mismatch("constraints grid differs from config grid".into()));
    }
    // deterministic probe: seeded random centers, amplitudes pushed to the
    // bound with alternating sign (worst-case drive strength)
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5EED_CA11);
    let mut probe = crate::pulse::random_sequence(&mut rng, constraints)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    for pulses in [probe.x.as_mut(), probe.y.as_mut()].into_iter().flatten() {
        for (i, p) in pulses.iter_mut().enumerate() {
            p.amplitude = if i % 2 == 0 { constraints.a_max } else { -constraints.a_max };
        }
    }
    let w = crate::pulse::render(&probe);

    let run = |s: u32| -> Result<[f64; N_OUTPUTS], SimError> {
        let c = cfg.clone().with_substeps(s);
        Ok(expectations_exact(&c, &w)?.values)
    };
    let mut s = 2u32;
    let mut coarse = run(s)?;
    loop {
        let fine = run(2 * s)?;
        let diff = coarse
            .iter()
            .zip(fine.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff <= CONVERGENCE_GATE {
            return Ok(s);
        }
        s *= 2;
        coarse = fine;
        if s > 1024 {
            return Err(SimError::CalibrationDiverged(s));
        }
    }
}
