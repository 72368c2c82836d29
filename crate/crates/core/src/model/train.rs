//! Adam training loop over prepare-control-measure datasets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, loss_mse, GrayboxModel, ModelError};
use crate::dataset::{Dataset, Example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Evaluate the test set every this many iterations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            iterations: 3000,
            eval_every: 50,
            seed: 0,
        }
    }
}

/// One learning-curve row; `test_mse` is present on the evaluation cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

pub struct TrainOutput {
    /// Weights of the best test-MSE snapshot.
    pub model: GrayboxModel,
    pub curves: Vec<CurvePoint>,
    pub best_iteration: usize,
    /// Full-train-set MSE of the returned snapshot.
    pub final_train_mse: f64,
    /// Test-set MSE of the returned snapshot.
    pub final_test_mse: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], opts: &TrainOptions) {
        self.t += 1;
        let b1t = 1.0 - opts.beta1.powi(self.t as i32);
        let b2t = 1.0 - opts.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = opts.beta1 * self.m[i] + (1.0 - opts.beta1) * grads[i];
            self.v[i] = opts.beta2 * self.v[i] + (1.0 - opts.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= opts.learning_rate * m_hat / (v_hat.sqrt() + opts.epsilon);
        }
    }
}

/// Train against `train_ds`, monitoring `test_ds` on a fixed cadence, and
/// return the best-test-MSE snapshot. Deterministic given the options seed.
pub fn train(
    mut model: GrayboxModel,
    train_ds: &Dataset,
    test_ds: &Dataset,
    opts: &TrainOptions,
) -> Result<TrainOutput, ModelError> {
    let hash = train_ds.config.hash();
    if hash != test_ds.config.hash() {
        return Err(ModelError::Mismatch(
            "train and test datasets have different configs".into(),
        ));
    }
    if train_ds.examples.is_empty() || test_ds.examples.is_empty() {
        return Err(ModelError::Mismatch("datasets must be non-empty".into()));
    }
    let dc = &train_ds.config;
    if model.config.steps != dc.lab.steps
        || (model.config.t_horizon - dc.lab.t_horizon).abs() > 1e-12
        || (model.config.omega_s - dc.lab.omega_s).abs() > 1e-12
        || model.config.axes != dc.pulses.axes
    {
        return Err(ModelError::Mismatch(
            "model whitebox constants disagree with the dataset config".into(),
        ));
    }
    model.data_hash = Some(hash);

    let test_refs: Vec<&Example> = test_ds.examples.iter().collect();
    let n = train_ds.examples.len();
    let batch = opts.batch_size.min(n).max(1);

    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut params = model.weights.flatten();
    let mut adam = Adam::new(params.len());
    let mut curves = Vec::with_capacity(opts.iterations);
    let mut best: Option<(f64, Vec<f64>, usize)> = None;

    for iteration in 0..opts.iterations {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch_index = cursor / batch;
        let refs: Vec<&Example> =
            order[cursor..cursor + batch].iter().map(|&i| &train_ds.examples[i]).collect();
        cursor += batch;

        let (loss, grads) = loss_and_gradients(&model, &refs)?;
        if !loss.is_finite() {
            return Err(ModelError::NanLoss { iteration, batch_index });
        }
        adam.step(&mut params, &grads.flatten(), opts);
        model.weights.assign_flat(&params);

        let eval_now =
            (iteration + 1) % opts.eval_every.max(1) == 0 || iteration + 1 == opts.iterations;
        let test_mse = if eval_now {
            let mse = loss_mse(&model, &test_refs)?;
            if best.as_ref().map_or(true, |(b, _, _)| mse < *b) {
                best = Some((mse, params.clone(), iteration));
            }
            Some(mse)
        } else {
            None
        };
        curves.push(CurvePoint { iteration, train_mse: loss, test_mse });
    }

    let (final_test_mse, best_params, best_iteration) = match best {
        Some(b) => b,
        // zero-iteration run: score the initial weights
        None => (loss_mse(&model, &test_refs)?, params, 0),
    };
    model.weights.assign_flat(&best_params);
    let train_refs: Vec<&Example> = train_ds.examples.iter().collect();
    let final_train_mse = loss_mse(&model, &train_refs)?;

    Ok(TrainOutput { model, curves, best_iteration, final_train_mse, final_test_mse })
}
