//! The trainable graybox: a two-layer GRU maps the control waveform to the
//! parameters of three Hermitian noise operators `V_O` (one per Pauli
//! observable); fixed whitebox layers rebuild the control unitary from the
//! same waveform and evaluate the 18 expectations
//! `E{O} = Re tr(V_O U rho0 U^dag O)`.
//!
//! `V_O` is reconstructed as `Q diag(tanh d1, tanh d2) Q^dag` from three
//! unitary angles, one reserved global phase, and two eigenvalue logits, so
//! every prediction is bounded in [-1, 1] for any weights. All gradients
//! (weights and inputs) are hand-rolled reverse mode; the input gradient
//! flows through both the recurrent stack and the closed-form step
//! exponentials of the control unitary.

mod gru;
pub mod train;

pub use gru::{GruTrace, GruWeights};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataConfig, Example};
use crate::linalg::{expm_2x2_grad_raw, UnitaryOperator};
use crate::pulse::{Axis, Waveform};
use crate::sim::{
    control_hamiltonian, observables, output_index, step_unitaries, SimError, N_OUTPUTS,
    PAULI_STATES,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model/input mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged: non-finite loss at iteration {iteration}, batch {batch_index}")]
    NanLoss { iteration: usize, batch_index: usize },
    #[error("tensor {tensor}: expected shape {expected:?}, got {got:?}")]
    Shape { tensor: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("model file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Minimal 2x2 complex matrix for the whitebox hot paths, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct M2(pub [C64; 4]);

impl M2 {
    const ZERO: M2 = M2([C64::new(0.0, 0.0); 4]);

    fn identity() -> M2 {
        M2([C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)])
    }

    fn from_array(m: &Array2<C64>) -> M2 {
        M2([m[[0, 0]], m[[0, 1]], m[[1, 0]], m[[1, 1]]])
    }

    fn to_array(self) -> Array2<C64> {
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = self.0[0];
        m[[0, 1]] = self.0[1];
        m[[1, 0]] = self.0[2];
        m[[1, 1]] = self.0[3];
        m
    }

    fn mul(self, o: M2) -> M2 {
        let a = self.0;
        let b = o.0;
        M2([
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ])
    }

    fn dagger(self) -> M2 {
        M2([self.0[0].conj(), self.0[2].conj(), self.0[1].conj(), self.0[3].conj()])
    }

    fn add(self, o: M2) -> M2 {
        M2([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2], self.0[3] + o.0[3]])
    }

    fn scaled(self, s: f64) -> M2 {
        M2([self.0[0] * s, self.0[1] * s, self.0[2] * s, self.0[3] * s])
    }

    /// tr(self * o)
    fn trace_mul(self, o: M2) -> C64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[2] + self.0[2] * o.0[1] + self.0[3] * o.0[3]
    }
}

/// Dense head emitting the 6 raw parameters of one `V_O`:
/// (theta, phi, lambda, global phase, d1, d2). Lambda and the global phase
/// are reserved; the Hermitian reconstruction makes them drop out, so their
/// gradients are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

pub const HEAD_PARAMS: usize = 6;
/// Eigenvalue-logit bias at initialization: tanh(2) puts V_O near I.
pub const INIT_EIGEN_LOGIT: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct VoCache {
    c: f64,
    s: f64,
    t1: f64,
    t2: f64,
    eiphi: C64,
}

impl HeadWeights {
    fn zeros(hidden: usize) -> Self {
        Self { w: Array2::zeros((HEAD_PARAMS, hidden)), b: Array1::zeros(HEAD_PARAMS) }
    }

    fn random<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut h = Self::zeros(hidden);
        h.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
        h.b[4] = INIT_EIGEN_LOGIT;
        h.b[5] = INIT_EIGEN_LOGIT;
        h
    }

    fn forward(&self, hidden: &ArrayView1<f64>) -> (M2, VoCache) {
        let raw = self.w.dot(hidden) + &self.b;
        let (theta, phi, d1, d2) = (raw[0], raw[1], raw[4], raw[5]);
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let (t1, t2) = (d1.tanh(), d2.tanh());
        let eiphi = C64::new(phi.cos(), phi.sin());
        let cache = VoCache { c, s, t1, t2, eiphi };
        (reconstruct_vo(&cache), cache)
    }

    /// Raw-parameter gradients for the pairing `dL/dp = Re tr(dV/dp * T)`.
    fn raw_gradients(cache: &VoCache, t_mat: M2) -> [f64; HEAD_PARAMS] {
        let VoCache { c, s, t1, t2, eiphi } = *cache;
        let diff = t1 - t2;
        let cs = c * s;
        let half_cos = 0.5 * (c * c - s * s);
        let m_theta = M2([
            C64::new(-cs, 0.0),
            eiphi.conj() * half_cos,
            eiphi * half_cos,
            C64::new(cs, 0.0),
        ]);
        let i = C64::new(0.0, 1.0);
        let m_phi = M2([
            C64::new(0.0, 0.0),
            -i * cs * eiphi.conj(),
            i * cs * eiphi,
            C64::new(0.0, 0.0),
        ]);
        let p1 = projector_p1(cache);
        let p2 = M2::identity().add(p1.scaled(-1.0));
        [
            diff * m_theta.trace_mul(t_mat).re,
            diff * m_phi.trace_mul(t_mat).re,
            0.0,
            0.0,
            (1.0 - t1 * t1) * p1.trace_mul(t_mat).re,
            (1.0 - t2 * t2) * p2.trace_mul(t_mat).re,
        ]
    }
}

fn projector_p1(cache: &VoCache) -> M2 {
    let VoCache { c, s, eiphi, .. } = *cache;
    let cs = c * s;
    M2([C64::new(c * c, 0.0), eiphi.conj() * cs, eiphi * cs, C64::new(s * s, 0.0)])
}

/// `V = tanh(d2) I + (tanh(d1) - tanh(d2)) P1`, Hermitian with spectrum in
/// (-1, 1).
fn reconstruct_vo(cache: &VoCache) -> M2 {
    let p1 = projector_p1(cache);
    M2::identity().scaled(cache.t2).add(p1.scaled(cache.t1 - cache.t2))
}

/// All trainable weights; doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub gru1: GruWeights,
    pub gru2: GruWeights,
    pub heads: [HeadWeights; 3],
}

impl WeightSet {
    pub fn zeros(in_dim: usize, hidden: [usize; 2]) -> Self {
        Self {
            gru1: GruWeights::zeros(in_dim, hidden[0]),
            gru2: GruWeights::zeros(hidden[0], hidden[1]),
            heads: std::array::from_fn(|_| HeadWeights::zeros(hidden[1])),
        }
    }

    pub fn random<R: Rng>(
        in_dim: usize,
        hidden: [usize; 2],
        horizon: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            gru1: GruWeights::random(in_dim, hidden[0], horizon, rng),
            gru2: GruWeights::random(hidden[0], hidden[1], horizon, rng),
            heads: std::array::from_fn(|_| HeadWeights::random(hidden[1], rng)),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.gru1.axpy(a, &other.gru1);
        self.gru2.axpy(a, &other.gru2);
        for (dst, src) in self.heads.iter_mut().zip(other.heads.iter()) {
            dst.w.zip_mut_with(&src.w, |d, s| *d += a * s);
            dst.b.zip_mut_with(&src.b, |d, s| *d += a * s);
        }
    }

    pub fn flat_len(&self) -> usize {
        self.flatten().len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, t) in self.tensor_views() {
            match t {
                TensorView::M(m) => out.extend(m.iter()),
                TensorView::V(v) => out.extend(v.iter()),
            }
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for (_, t) in self.tensor_views_mut() {
            match t {
                TensorViewMut::M(m) => {
                    for e in m.iter_mut() {
                        *e = flat[pos];
                        pos += 1;
                    }
                }
                TensorViewMut::V(v) => {
                    for e in v.iter_mut() {
                        *e = flat[pos];
                        pos += 1;
                    }
                }
            }
        }
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }

    fn tensor_views(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out: Vec<(String, TensorView)> = Vec::with_capacity(24);
        for (prefix, g) in [("gru1", &self.gru1), ("gru2", &self.gru2)] {
            out.push((format!("{prefix}.w_z"), TensorView::M(&g.w_z)));
            out.push((format!("{prefix}.u_z"), TensorView::M(&g.u_z)));
            out.push((format!("{prefix}.b_z"), TensorView::V(&g.b_z)));
            out.push((format!("{prefix}.w_r"), TensorView::M(&g.w_r)));
            out.push((format!("{prefix}.u_r"), TensorView::M(&g.u_r)));
            out.push((format!("{prefix}.b_r"), TensorView::V(&g.b_r)));
            out.push((format!("{prefix}.w_c"), TensorView::M(&g.w_c)));
            out.push((format!("{prefix}.u_c"), TensorView::M(&g.u_c)));
            out.push((format!("{prefix}.b_c"), TensorView::V(&g.b_c)));
        }
        for (name, head) in ["head_x", "head_y", "head_z"].iter().zip(self.heads.iter()) {
            out.push((format!("{name}.w"), TensorView::M(&head.w)));
            out.push((format!("{name}.b"), TensorView::V(&head.b)));
        }
        out
    }

    fn tensor_views_mut(&mut self) -> Vec<(String, TensorViewMut<'_>)> {
        let mut out: Vec<(String, TensorViewMut)> = Vec::with_capacity(24);
        let (g1, g2, heads) = (&mut self.gru1, &mut self.gru2, &mut self.heads);
        for (prefix, g) in [("gru1", g1), ("gru2", g2)] {
            out.push((format!("{prefix}.w_z"), TensorViewMut::M(&mut g.w_z)));
            out.push((format!("{prefix}.u_z"), TensorViewMut::M(&mut g.u_z)));
            out.push((format!("{prefix}.b_z"), TensorViewMut::V(&mut g.b_z)));
            out.push((format!("{prefix}.w_r"), TensorViewMut::M(&mut g.w_r)));
            out.push((format!("{prefix}.u_r"), TensorViewMut::M(&mut g.u_r)));
            out.push((format!("{prefix}.b_r"), TensorViewMut::V(&mut g.b_r)));
            out.push((format!("{prefix}.w_c"), TensorViewMut::M(&mut g.w_c)));
            out.push((format!("{prefix}.u_c"), TensorViewMut::M(&mut g.u_c)));
            out.push((format!("{prefix}.b_c"), TensorViewMut::V(&mut g.b_c)));
        }
        for (name, head) in ["head_x", "head_y", "head_z"].iter().zip(heads.iter_mut()) {
            out.push((format!("{name}.w"), TensorViewMut::M(&mut head.w)));
            out.push((format!("{name}.b"), TensorViewMut::V(&mut head.b)));
        }
        out
    }
}

enum TensorView<'a> {
    M(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

enum TensorViewMut<'a> {
    M(&'a mut Array2<f64>),
    V(&'a mut Array1<f64>),
}

/// Architecture and whitebox constants of a graybox model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub omega_s: f64,
    #[serde(rename = "T")]
    pub t_horizon: f64,
    #[serde(rename = "M")]
    pub steps: usize,
    pub axes: Vec<Axis>,
    pub hidden: [usize; 2],
    /// Waveform samples are multiplied by this before entering the GRU
    /// (typically 1/A_max); the whitebox path always sees raw samples.
    pub input_scale: f64,
}

impl ModelConfig {
    pub fn for_data(dc: &DataConfig, hidden: [usize; 2]) -> Self {
        Self {
            omega_s: dc.lab.omega_s,
            t_horizon: dc.lab.t_horizon,
            steps: dc.lab.steps,
            axes: dc.pulses.axes.clone(),
            hidden,
            input_scale: 1.0 / dc.pulses.a_max,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.axes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayboxModel {
    pub config: ModelConfig,
    pub weights: WeightSet,
    /// Hash of the data config this model was trained against.
    pub data_hash: Option<String>,
}

impl GrayboxModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let weights = WeightSet::random(config.in_dim(), config.hidden, config.steps, &mut rng);
        Self { config, weights, data_hash: None }
    }

    /// All-zero weights with saturated eigenvalue logits: every head emits
    /// exactly `V_O = I` independent of the input (closed-system reference).
    pub fn new_identity(config: ModelConfig) -> Self {
        let mut weights = WeightSet::zeros(config.in_dim(), config.hidden);
        for head in &mut weights.heads {
            head.b[4] = 20.0;
            head.b[5] = 20.0;
        }
        Self { config, weights, data_hash: None }
    }

    fn check_waveform(&self, w: &Waveform) -> Result<(), ModelError> {
        if w.steps() != self.config.steps {
            return Err(ModelError::Mismatch(format!(
                "waveform has {} steps, model expects {}",
                w.steps(),
                self.config.steps
            )));
        }
        if w.active_axes() != self.config.axes {
            return Err(ModelError::Mismatch(format!(
                "waveform axes {:?} differ from model axes {:?}",
                w.active_axes(),
                self.config.axes
            )));
        }
        if (w.t_horizon - self.config.t_horizon).abs() > 1e-12 {
            return Err(ModelError::Mismatch("waveform horizon differs from model".into()));
        }
        Ok(())
    }

    /// Run the full graybox: GRU stack -> V_O heads -> whitebox evaluation.
    /// The returned pass carries everything the backward passes need.
    pub fn forward(&self, w: &Waveform) -> Result<ForwardPass, ModelError> {
        self.check_waveform(w)?;
        let m = w.steps();
        let axes = &self.config.axes;
        let mut inputs = Array2::zeros((m, axes.len()));
        for k in 0..m {
            for (a, &axis) in axes.iter().enumerate() {
                inputs[[k, a]] = w.sample(axis, k) * self.config.input_scale;
            }
        }

        let trace1 = self.weights.gru1.forward(&inputs);
        let inputs2 = trace1.outputs().to_owned();
        let trace2 = self.weights.gru2.forward(&inputs2);
        let h_final = trace2.final_hidden().to_owned();

        let mut vo_m2 = [M2::ZERO; 3];
        let mut vo_caches = Vec::with_capacity(3);
        for (o, head) in self.weights.heads.iter().enumerate() {
            let (v, cache) = head.forward(&h_final.view());
            vo_m2[o] = v;
            vo_caches.push(cache);
        }

        let step_us: Vec<M2> =
            step_unitaries(w, self.config.omega_s).iter().map(M2::from_array).collect();
        let mut u = M2::identity();
        for uk in &step_us {
            u = uk.mul(u);
        }
        let obs = observable_m2s();
        let states = pauli_state_m2s();
        let udag = u.dagger();
        let mut w_states = [M2::ZERO; 6];
        for (s, rho) in states.iter().enumerate() {
            w_states[s] = u.mul(*rho).mul(udag);
        }
        let mut predictions = [0.0; N_OUTPUTS];
        for s in 0..6 {
            for o in 0..3 {
                let q = w_states[s].mul(obs[o]);
                predictions[output_index(s, o)] = vo_m2[o].trace_mul(q).re;
            }
        }
        let vo = std::array::from_fn(|o| vo_m2[o].to_array());
        let u_ctrl = UnitaryOperator::try_new(
            crate::linalg::Operator::new(u.to_array()).expect("finite unitary"),
        )
        .expect("product of step unitaries is unitary");
        Ok(ForwardPass {
            predictions,
            vo,
            u_ctrl,
            waveform: w.clone(),
            inputs,
            trace1,
            trace2,
            vo_m2,
            vo_caches: [vo_caches[0], vo_caches[1], vo_caches[2]],
            step_us,
            u,
            w_states,
        })
    }

    /// Predictions only.
    pub fn predict(&self, w: &Waveform) -> Result<[f64; N_OUTPUTS], ModelError> {
        Ok(self.forward(w)?.predictions)
    }

    /// Gradients of `sum_p out_grads[p] * prediction_p` with respect to all
    /// weights. The control unitary is constant in the weights; only the
    /// recurrent/head path contributes.
    pub fn backward_weights(&self, pass: &ForwardPass, out_grads: &[f64; N_OUTPUTS]) -> WeightSet {
        let (head_grads, dh_final) = self.head_backward(pass, out_grads);
        let m = pass.inputs.nrows();
        let h2 = self.config.hidden[1];
        let mut dh_ext2 = Array2::zeros((m, h2));
        dh_ext2.row_mut(m - 1).assign(&dh_final);
        let inputs2 = pass.trace1.outputs().to_owned();
        let (g2, dx2) = self.weights.gru2.backward(&inputs2, &pass.trace2, &dh_ext2);
        let (g1, _) = self.weights.gru1.backward(&pass.inputs, &pass.trace1, &dx2);
        WeightSet { gru1: g1, gru2: g2, heads: head_grads }
    }

    /// Gradient of `sum_p out_grads[p] * prediction_p` with respect to the
    /// waveform samples, through both the recurrent stack and the
    /// closed-form step exponentials of the control unitary.
    pub fn backward_inputs(
        &self,
        pass: &ForwardPass,
        out_grads: &[f64; N_OUTPUTS],
    ) -> WaveformGradient {
        let m = pass.inputs.nrows();
        let axes = &self.config.axes;

        // blackbox path: heads -> BPTT -> inputs, then undo the input scale
        let (_, dh_final) = self.head_backward(pass, out_grads);
        let h2 = self.config.hidden[1];
        let mut dh_ext2 = Array2::zeros((m, h2));
        dh_ext2.row_mut(m - 1).assign(&dh_final);
        let inputs2 = pass.trace1.outputs().to_owned();
        let (_, dx2) = self.weights.gru2.backward(&inputs2, &pass.trace2, &dh_ext2);
        let (_, dx1) = self.weights.gru1.backward(&pass.inputs, &pass.trace1, &dx2);

        let mut grad = WaveformGradient {
            x: axes.contains(&Axis::X).then(|| vec![0.0; m]),
            y: axes.contains(&Axis::Y).then(|| vec![0.0; m]),
        };
        for (a, &axis) in axes.iter().enumerate() {
            let dst = grad.axis_mut(axis).unwrap();
            for k in 0..m {
                dst[k] = dx1[[k, a]] * self.config.input_scale;
            }
        }

        // whitebox path: dU/df_k = S_k (dU_k/df) P_k, collapsed into
        // Re tr(D_k (P_k K S_k)) with a single effective 2x2 kernel K
        let obs = observable_m2s();
        let states = pauli_state_m2s();
        let udag = pass.u.dagger();
        let mut g1 = M2::ZERO;
        let mut g2 = M2::ZERO;
        for s in 0..6 {
            for o in 0..3 {
                let cso = out_grads[output_index(s, o)];
                if cso == 0.0 {
                    continue;
                }
                // rho_s U^dag O_o V_o   and   O_o V_o U rho_s
                let left = states[s].mul(udag).mul(obs[o]).mul(pass.vo_m2[o]);
                let right = obs[o].mul(pass.vo_m2[o]).mul(pass.u).mul(states[s]);
                g1 = g1.add(left.scaled(cso));
                g2 = g2.add(right.scaled(cso));
            }
        }
        let kernel = g1.add(g2.dagger());

        // prefix products P_k = U_{k-1}..U_0 and suffixes S_k = U_{M-1}..U_{k+1}
        let mut prefixes = Vec::with_capacity(m);
        let mut p = M2::identity();
        for k in 0..m {
            prefixes.push(p);
            p = pass.step_us[k].mul(p);
        }
        let mut suffixes = vec![M2::identity(); m];
        for k in (0..m - 1).rev() {
            suffixes[k] = suffixes[k + 1].mul(pass.step_us[k + 1]);
        }

        let dt = self.config.t_horizon / m as f64;
        let half = C64::new(0.5, 0.0);
        let mut dh_x = Array2::zeros((2, 2));
        dh_x[[0, 1]] = half;
        dh_x[[1, 0]] = half;
        let mut dh_y = Array2::zeros((2, 2));
        dh_y[[0, 1]] = C64::new(0.0, -0.5);
        dh_y[[1, 0]] = C64::new(0.0, 0.5);

        for k in 0..m {
            let c_k = prefixes[k].mul(kernel).mul(suffixes[k]);
            let h_k = control_hamiltonian(
                self.config.omega_s,
                pass.waveform.sample(Axis::X, k),
                pass.waveform.sample(Axis::Y, k),
            );
            for &axis in axes {
                let dh = match axis {
                    Axis::X => &dh_x,
                    Axis::Y => &dh_y,
                };
                let d = M2::from_array(&expm_2x2_grad_raw(&h_k, dh, dt));
                let contribution = d.trace_mul(c_k).re;
                grad.axis_mut(axis).unwrap()[k] += contribution;
            }
        }
        grad
    }

    /// Full Jacobian of the 18 predictions with respect to every waveform
    /// sample on every active axis.
    pub fn input_gradient(&self, pass: &ForwardPass) -> InputJacobian {
        let m = pass.inputs.nrows();
        let mut jac = InputJacobian {
            x: self.config.axes.contains(&Axis::X).then(|| Array2::zeros((N_OUTPUTS, m))),
            y: self.config.axes.contains(&Axis::Y).then(|| Array2::zeros((N_OUTPUTS, m))),
        };
        for p in 0..N_OUTPUTS {
            let mut unit = [0.0; N_OUTPUTS];
            unit[p] = 1.0;
            let g = self.backward_inputs(pass, &unit);
            for &axis in &self.config.axes {
                let row = g.axis(axis).unwrap();
                let dst = match axis {
                    Axis::X => jac.x.as_mut().unwrap(),
                    Axis::Y => jac.y.as_mut().unwrap(),
                };
                for k in 0..m {
                    dst[[p, k]] = row[k];
                }
            }
        }
        jac
    }

    fn head_backward(
        &self,
        pass: &ForwardPass,
        out_grads: &[f64; N_OUTPUTS],
    ) -> ([HeadWeights; 3], Array1<f64>) {
        let obs = observable_m2s();
        let h_final = pass.trace2.final_hidden();
        let h2 = self.config.hidden[1];
        let mut dh_final = Array1::zeros(h2);
        let mut head_grads: [HeadWeights; 3] = std::array::from_fn(|_| HeadWeights::zeros(h2));
        for o in 0..3 {
            let mut t_mat = M2::ZERO;
            for s in 0..6 {
                let g = out_grads[output_index(s, o)];
                if g == 0.0 {
                    continue;
                }
                t_mat = t_mat.add(pass.w_states[s].mul(obs[o]).scaled(g));
            }
            let draw = HeadWeights::raw_gradients(&pass.vo_caches[o], t_mat);
            for (i, &d) in draw.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                head_grads[o].b[i] += d;
                let mut row = head_grads[o].w.row_mut(i);
                row.zip_mut_with(&h_final, |dst, &h| *dst += d * h);
                let wrow = self.weights.heads[o].w.row(i);
                dh_final.zip_mut_with(&wrow, |dst, &w| *dst += d * w);
            }
        }
        (head_grads, dh_final)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut tensors = BTreeMap::new();
        for (name, view) in self.weights.tensor_views() {
            let wire = match view {
                TensorView::M(m) => TensorWire {
                    shape: vec![m.nrows(), m.ncols()],
                    data: m.iter().cloned().collect(),
                },
                TensorView::V(v) => TensorWire { shape: vec![v.len()], data: v.to_vec() },
            };
            tensors.insert(name, wire);
        }
        let file = ModelFile {
            version: 1,
            kind: "gbx-model".into(),
            config: self.config.clone(),
            data_config_hash: self.data_hash.clone(),
            tensors,
        };
        let json = serde_json::to_string(&file).map_err(|e| ModelError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.kind != "gbx-model" || file.version != 1 {
            return Err(ModelError::Format(format!(
                "unsupported model file kind {:?} version {}",
                file.kind, file.version
            )));
        }
        let mut weights = WeightSet::zeros(file.config.in_dim(), file.config.hidden);
        let mut seen = 0usize;
        for (name, view) in weights.tensor_views_mut() {
            let wire = file
                .tensors
                .get(&name)
                .ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?;
            seen += 1;
            match view {
                TensorViewMut::M(m) => {
                    let expected = vec![m.nrows(), m.ncols()];
                    if wire.shape != expected || wire.data.len() != m.len() {
                        return Err(ModelError::Shape {
                            tensor: name,
                            expected,
                            got: wire.shape.clone(),
                        });
                    }
                    for (dst, src) in m.iter_mut().zip(wire.data.iter()) {
                        *dst = *src;
                    }
                }
                TensorViewMut::V(v) => {
                    let expected = vec![v.len()];
                    if wire.shape != expected || wire.data.len() != v.len() {
                        return Err(ModelError::Shape {
                            tensor: name,
                            expected,
                            got: wire.shape.clone(),
                        });
                    }
                    for (dst, src) in v.iter_mut().zip(wire.data.iter()) {
                        *dst = *src;
                    }
                }
            }
        }
        if seen != file.tensors.len() {
            return Err(ModelError::Format(format!(
                "model file has {} tensors, expected {seen}",
                file.tensors.len()
            )));
        }
        Ok(Self { config: file.config, weights, data_hash: file.data_config_hash })
    }
}

#[derive(Serialize, Deserialize)]
struct TensorWire {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    kind: String,
    config: ModelConfig,
    data_config_hash: Option<String>,
    tensors: BTreeMap<String, TensorWire>,
}

/// Everything one forward pass produces: the 18 predictions, the
/// reconstructed noise operators, the control unitary, and the caches the
/// backward passes consume.
pub struct ForwardPass {
    pub predictions: [f64; N_OUTPUTS],
    pub vo: [Array2<C64>; 3],
    pub u_ctrl: UnitaryOperator,
    waveform: Waveform,
    inputs: Array2<f64>,
    trace1: GruTrace,
    trace2: GruTrace,
    vo_m2: [M2; 3],
    vo_caches: [VoCache; 3],
    step_us: Vec<M2>,
    u: M2,
    w_states: [M2; 6],
}

/// Per-axis gradient with respect to the waveform samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformGradient {
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

impl WaveformGradient {
    pub fn axis(&self, axis: Axis) -> Option<&[f64]> {
        match axis {
            Axis::X => self.x.as_deref(),
            Axis::Y => self.y.as_deref(),
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> Option<&mut Vec<f64>> {
        match axis {
            Axis::X => self.x.as_mut(),
            Axis::Y => self.y.as_mut(),
        }
    }
}

/// 18 x M Jacobian per active axis.
pub struct InputJacobian {
    pub x: Option<Array2<f64>>,
    pub y: Option<Array2<f64>>,
}

fn observable_m2s() -> [M2; 3] {
    let obs = observables();
    std::array::from_fn(|o| M2::from_array(obs[o].mat()))
}

fn pauli_state_m2s() -> [M2; 6] {
    std::array::from_fn(|s| M2::from_array(PAULI_STATES[s].density().mat()))
}

/// Mean squared error over a batch, averaged over examples and the 18
/// outputs.
pub fn loss_mse(model: &GrayboxModel, examples: &[&Example]) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::Mismatch("empty batch".into()));
    }
    let losses: Vec<Result<f64, ModelError>> = examples
        .par_iter()
        .map(|ex| {
            let pred = model.predict(&ex.waveform)?;
            Ok(example_mse(&pred, &ex.record.values))
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

fn example_mse(pred: &[f64; N_OUTPUTS], labels: &[f64]) -> f64 {
    pred.iter()
        .zip(labels.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / N_OUTPUTS as f64
}

/// Batch MSE and its gradient with respect to every weight. Examples are
/// evaluated in parallel; the reduction runs in index order so the result
/// does not depend on the worker count.
pub fn loss_and_gradients(
    model: &GrayboxModel,
    examples: &[&Example],
) -> Result<(f64, WeightSet), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::Mismatch("empty batch".into()));
    }
    let per_example: Vec<Result<(f64, WeightSet), ModelError>> = examples
        .par_iter()
        .map(|ex| {
            let pass = model.forward(&ex.waveform)?;
            let mut out_grads = [0.0; N_OUTPUTS];
            for p in 0..N_OUTPUTS {
                out_grads[p] =
                    2.0 * (pass.predictions[p] - ex.record.values[p]) / N_OUTPUTS as f64;
            }
            let grads = model.backward_weights(&pass, &out_grads);
            Ok((example_mse(&pass.predictions, &ex.record.values), grads))
        })
        .collect();

    let scale = 1.0 / examples.len() as f64;
    let mut loss = 0.0;
    let mut total = WeightSet::zeros(model.config.in_dim(), model.config.hidden);
    for item in per_example {
        let (l, g) = item?;
        loss += l * scale;
        total.axpy(scale, &g);
    }
    Ok((loss, total))
}
