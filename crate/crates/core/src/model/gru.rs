//! A gated-recurrent-unit layer with hand-rolled backpropagation through
//! time.
//!
//! Cell equations (update gate z, reset gate r, candidate c):
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! c_t = tanh(W_c x_t + U_c (r_t * h_{t-1}) + b_c)
//! h_t = z_t * h_{t-1} + (1 - z_t) * c_t
//! ```

use ndarray::{Array1, Array2, ArrayView1, Axis as NdAxis};
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of one GRU layer; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_c: Array2<f64>,
    pub u_c: Array2<f64>,
    pub b_c: Array1<f64>,
}

impl GruWeights {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w_z: Array2::zeros((hidden, in_dim)),
            u_z: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            w_r: Array2::zeros((hidden, in_dim)),
            u_r: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            w_c: Array2::zeros((hidden, in_dim)),
            u_c: Array2::zeros((hidden, hidden)),
            b_c: Array1::zeros(hidden),
        }
    }

    /// Uniform +-1/sqrt(fan_in) weights, zero biases except the update
    /// gate: its biases are log-spaced over `[1, horizon]` so the memory
    /// horizons of the units cover the full sequence length (with a zero
    /// bias the update gate sits at 1/2 and the state forgets everything
    /// older than a few tens of steps, which makes pulses in the early part
    /// of the waveform invisible to the final hidden state).
    pub fn random<R: Rng>(in_dim: usize, hidden: usize, horizon: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(in_dim, hidden);
        let wb = 1.0 / (in_dim as f64).sqrt();
        let ub = 1.0 / (hidden as f64).sqrt();
        for m in [&mut w.w_z, &mut w.w_r, &mut w.w_c] {
            m.mapv_inplace(|_| rng.gen_range(-wb..wb));
        }
        for m in [&mut w.u_z, &mut w.u_r, &mut w.u_c] {
            m.mapv_inplace(|_| rng.gen_range(-ub..ub));
        }
        // sigmoid(b_z) = tau/(tau+1) with tau log-spaced in [1, horizon]
        let log_max = (horizon.max(2) as f64).ln();
        for i in 0..hidden {
            w.b_z[i] = log_max * i as f64 / (hidden - 1).max(1) as f64;
        }
        w
    }

    pub fn in_dim(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.nrows()
    }

    /// Run the layer over a sequence (rows of `inputs`), keeping every
    /// intermediate needed by [`GruWeights::backward`].
    pub fn forward(&self, inputs: &Array2<f64>) -> GruTrace {
        let m = inputs.nrows();
        let h = self.hidden();
        let mut hs = Array2::zeros((m + 1, h));
        let mut zs = Array2::zeros((m, h));
        let mut rs = Array2::zeros((m, h));
        let mut cs = Array2::zeros((m, h));

        for t in 0..m {
            let x = inputs.row(t);
            let h_prev = hs.row(t).to_owned();

            let mut z = self.w_z.dot(&x) + self.u_z.dot(&h_prev) + &self.b_z;
            z.mapv_inplace(sigmoid);
            let mut r = self.w_r.dot(&x) + self.u_r.dot(&h_prev) + &self.b_r;
            r.mapv_inplace(sigmoid);
            let gated: Array1<f64> = &r * &h_prev;
            let mut c = self.w_c.dot(&x) + self.u_c.dot(&gated) + &self.b_c;
            c.mapv_inplace(f64::tanh);
            let h_new: Array1<f64> = &z * &h_prev + &(1.0 - &z) * &c;

            zs.row_mut(t).assign(&z);
            rs.row_mut(t).assign(&r);
            cs.row_mut(t).assign(&c);
            hs.row_mut(t + 1).assign(&h_new);
        }
        GruTrace { hs, zs, rs, cs }
    }

    /// Backpropagate through time. `dh_ext` supplies the gradient flowing
    /// into `h_t` from outside the recurrence at each step (row `t`).
    /// Returns the weight gradients and the gradient with respect to the
    /// inputs.
    pub fn backward(
        &self,
        inputs: &Array2<f64>,
        trace: &GruTrace,
        dh_ext: &Array2<f64>,
    ) -> (GruWeights, Array2<f64>) {
        let m = inputs.nrows();
        let h = self.hidden();
        let mut grads = GruWeights::zeros(self.in_dim(), h);
        let mut dinputs = Array2::zeros((m, self.in_dim()));
        let mut dh_carry: Array1<f64> = Array1::zeros(h);

        for t in (0..m).rev() {
            let x = inputs.row(t);
            let h_prev = trace.hs.row(t);
            let z = trace.zs.row(t);
            let r = trace.rs.row(t);
            let c = trace.cs.row(t);

            let dh: Array1<f64> = &dh_carry + &dh_ext.row(t);
            let dz: Array1<f64> = &dh * &(&h_prev - &c);
            let dc: Array1<f64> = &dh * &(1.0 - &z);
            let mut dh_prev: Array1<f64> = &dh * &z;

            // candidate path
            let dc_raw: Array1<f64> = &dc * &(1.0 - &(&c * &c));
            accumulate_outer(&mut grads.w_c, &dc_raw, &x);
            let gated: Array1<f64> = &r * &h_prev;
            accumulate_outer(&mut grads.u_c, &dc_raw, &gated.view());
            grads.b_c += &dc_raw;
            let drh = self.u_c.t().dot(&dc_raw);
            let dr: Array1<f64> = &drh * &h_prev;
            dh_prev += &(&drh * &r);

            // update gate
            let dz_raw: Array1<f64> = &dz * &(&z * &(1.0 - &z));
            accumulate_outer(&mut grads.w_z, &dz_raw, &x);
            accumulate_outer(&mut grads.u_z, &dz_raw, &h_prev);
            grads.b_z += &dz_raw;
            dh_prev += &self.u_z.t().dot(&dz_raw);

            // reset gate
            let dr_raw: Array1<f64> = &dr * &(&r * &(1.0 - &r));
            accumulate_outer(&mut grads.w_r, &dr_raw, &x);
            accumulate_outer(&mut grads.u_r, &dr_raw, &h_prev);
            grads.b_r += &dr_raw;
            dh_prev += &self.u_r.t().dot(&dr_raw);

            let dx =
                self.w_z.t().dot(&dz_raw) + self.w_r.t().dot(&dr_raw) + self.w_c.t().dot(&dc_raw);
            dinputs.row_mut(t).assign(&dx);
            dh_carry = dh_prev;
        }
        (grads, dinputs)
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.zip_mut_with(src, |d, s| *d += a * s);
        }
        for (dst, src) in self.biases_mut().into_iter().zip(other.biases()) {
            dst.zip_mut_with(src, |d, s| *d += a * s);
        }
    }

    pub(crate) fn tensors(&self) -> [&Array2<f64>; 6] {
        [&self.w_z, &self.u_z, &self.w_r, &self.u_r, &self.w_c, &self.u_c]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Array2<f64>; 6] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.w_c,
            &mut self.u_c,
        ]
    }

    pub(crate) fn biases(&self) -> [&Array1<f64>; 3] {
        [&self.b_z, &self.b_r, &self.b_c]
    }

    pub(crate) fn biases_mut(&mut self) -> [&mut Array1<f64>; 3] {
        [&mut self.b_z, &mut self.b_r, &mut self.b_c]
    }
}

fn accumulate_outer(m: &mut Array2<f64>, col: &Array1<f64>, row: &ArrayView1<f64>) {
    for (i, &ci) in col.iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        let mut mrow = m.index_axis_mut(NdAxis(0), i);
        mrow.zip_mut_with(row, |d, &r| *d += ci * r);
    }
}

/// Stored activations of one forward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    /// `(M+1) x hidden`; row 0 is the zero initial state, row `t+1` is `h_t`.
    pub hs: Array2<f64>,
    pub zs: Array2<f64>,
    pub rs: Array2<f64>,
    pub cs: Array2<f64>,
}

impl GruTrace {
    pub fn final_hidden(&self) -> ArrayView1<'_, f64> {
        self.hs.row(self.hs.nrows() - 1)
    }

    /// The per-step outputs `h_1..h_M` as an `M x hidden` view.
    pub fn outputs(&self) -> ndarray::ArrayView2<'_, f64> {
        self.hs.slice(ndarray::s![1.., ..])
    }
}
