//! Gaussian pulse trains: parameterization, constraints, randomization,
//! discretization, and analytic parameter gradients.
//!
//! A sequence on one axis is `f(t) = sum_i A_i exp(-(t - mu_i)^2 / sigma^2)`.
//! Centers follow the slot scheme: the horizon `[0, T]` is split into
//! `n_pulses` equal slots and each center lives in its slot shrunk by a
//! `3 sigma` margin on both sides, which guarantees a minimum gap of
//! `6 sigma` between neighbouring pulses on the same axis.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("infeasible pulse constraints: {0}")]
    Infeasible(String),
    #[error("invalid pulse sequence: {0}")]
    Invalid(String),
}

/// Control axes, canonical order x then y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// One Gaussian pulse: amplitude and time center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amplitude: f64,
    pub center: f64,
}

/// The constraint set from which sequences are drawn and within which the
/// optimizers search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseConstraints {
    pub n_pulses: usize,
    #[serde(rename = "T")]
    pub t_horizon: f64,
    #[serde(rename = "M")]
    pub steps: usize,
    #[serde(rename = "sigma")]
    pub width: f64,
    pub a_max: f64,
    pub axes: Vec<Axis>,
}

impl PulseConstraints {
    /// Paper-style geometry: width `T / (12 n_pulses)`.
    pub fn standard(n_pulses: usize, t_horizon: f64, steps: usize, a_max: f64, axes: Vec<Axis>) -> Self {
        Self {
            n_pulses,
            t_horizon,
            steps,
            width: t_horizon / (12.0 * n_pulses as f64),
            a_max,
            axes,
        }
    }

    /// Usable center interval of slot `i`: the slot shrunk by `3 sigma`.
    pub fn slot_bounds(&self, i: usize) -> (f64, f64) {
        let slot = self.t_horizon / self.n_pulses as f64;
        let margin = 3.0 * self.width;
        (i as f64 * slot + margin, (i + 1) as f64 * slot - margin)
    }

    pub fn slot_midpoint(&self, i: usize) -> f64 {
        let (lo, hi) = self.slot_bounds(i);
        0.5 * (lo + hi)
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        if self.n_pulses == 0 || self.steps == 0 {
            return Err(PulseError::Infeasible("need at least one pulse and one step".into()));
        }
        if !(self.t_horizon > 0.0) || !(self.width > 0.0) || !(self.a_max > 0.0) {
            return Err(PulseError::Infeasible("T, sigma and A_max must be positive".into()));
        }
        if self.axes.is_empty() {
            return Err(PulseError::Infeasible("at least one control axis required".into()));
        }
        if self.n_pulses as f64 * 6.0 * self.width >= self.t_horizon {
            return Err(PulseError::Infeasible(format!(
                "n_pulses * 6 sigma = {} must stay below T = {}",
                self.n_pulses as f64 * 6.0 * self.width,
                self.t_horizon
            )));
        }
        Ok(())
    }

    pub fn has_axis(&self, axis: Axis) -> bool {
        self.axes.contains(&axis)
    }
}

/// A multi-axis train of Gaussian pulses.
///
/// Serializes as `{"T": .., "M": .., "sigma": .., "axes": {"x": [[A, mu], ..], "y": ..}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub t_horizon: f64,
    pub steps: usize,
    pub width: f64,
    pub x: Option<Vec<Pulse>>,
    pub y: Option<Vec<Pulse>>,
}

#[derive(Serialize, Deserialize)]
struct PulseSequenceWire {
    #[serde(rename = "T")]
    t_horizon: f64,
    #[serde(rename = "M")]
    steps: usize,
    #[serde(rename = "sigma")]
    width: f64,
    axes: AxesWire,
}

#[derive(Serialize, Deserialize)]
struct AxesWire {
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<Vec<[f64; 2]>>,
}

impl Serialize for PulseSequence {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let pack = |ps: &Option<Vec<Pulse>>| {
            ps.as_ref()
                .map(|v| v.iter().map(|p| [p.amplitude, p.center]).collect())
        };
        PulseSequenceWire {
            t_horizon: self.t_horizon,
            steps: self.steps,
            width: self.width,
            axes: AxesWire { x: pack(&self.x), y: pack(&self.y) },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PulseSequence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = PulseSequenceWire::deserialize(deserializer)?;
        let unpack = |ps: Option<Vec<[f64; 2]>>| {
            ps.map(|v| {
                v.into_iter()
                    .map(|[amplitude, center]| Pulse { amplitude, center })
                    .collect()
            })
        };
        Ok(PulseSequence {
            t_horizon: wire.t_horizon,
            steps: wire.steps,
            width: wire.width,
            x: unpack(wire.axes.x),
            y: unpack(wire.axes.y),
        })
    }
}

impl PulseSequence {
    pub fn axis(&self, axis: Axis) -> Option<&[Pulse]> {
        match axis {
            Axis::X => self.x.as_deref(),
            Axis::Y => self.y.as_deref(),
        }
    }

    pub fn active_axes(&self) -> Vec<Axis> {
        let mut axes = Vec::new();
        if self.x.is_some() {
            axes.push(Axis::X);
        }
        if self.y.is_some() {
            axes.push(Axis::Y);
        }
        axes
    }

    /// Midpoint-sampled grid `t_k = (k + 1/2) T / M`.
    pub fn grid(&self) -> Vec<f64> {
        let dt = self.t_horizon / self.steps as f64;
        (0..self.steps).map(|k| (k as f64 + 0.5) * dt).collect()
    }

    /// Check amplitude bound, center range, ordering, and the `6 sigma`
    /// same-axis gap.
    pub fn validate(&self, constraints: &PulseConstraints) -> Result<(), PulseError> {
        for axis in self.active_axes() {
            let pulses = self.axis(axis).unwrap();
            if pulses.len() != constraints.n_pulses {
                return Err(PulseError::Invalid(format!(
                    "axis {axis:?} has {} pulses, constraints say {}",
                    pulses.len(),
                    constraints.n_pulses
                )));
            }
            for (i, p) in pulses.iter().enumerate() {
                if p.amplitude.abs() > constraints.a_max + 1e-12 {
                    return Err(PulseError::Invalid(format!(
                        "amplitude {} exceeds bound {}",
                        p.amplitude, constraints.a_max
                    )));
                }
                if !(p.center > 0.0 && p.center < self.t_horizon) {
                    return Err(PulseError::Invalid(format!(
                        "center {} outside (0, {})",
                        p.center, self.t_horizon
                    )));
                }
                if i > 0 {
                    let gap = p.center - pulses[i - 1].center;
                    if gap < 6.0 * self.width - 1e-12 {
                        return Err(PulseError::Invalid(format!(
                            "centers {} and {} closer than 6 sigma = {}",
                            pulses[i - 1].center,
                            p.center,
                            6.0 * self.width
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Discretized waveform on the midpoint grid, one sample array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub t_horizon: f64,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

impl Waveform {
    pub fn steps(&self) -> usize {
        self.x
            .as_ref()
            .map(|v| v.len())
            .or_else(|| self.y.as_ref().map(|v| v.len()))
            .unwrap_or(0)
    }

    pub fn axis(&self, axis: Axis) -> Option<&[f64]> {
        match axis {
            Axis::X => self.x.as_deref(),
            Axis::Y => self.y.as_deref(),
        }
    }

    pub fn active_axes(&self) -> Vec<Axis> {
        let mut axes = Vec::new();
        if self.x.is_some() {
            axes.push(Axis::X);
        }
        if self.y.is_some() {
            axes.push(Axis::Y);
        }
        axes
    }

    /// A silent waveform (all-zero samples) on the given axes.
    pub fn zero(t_horizon: f64, steps: usize, axes: &[Axis]) -> Self {
        Self {
            t_horizon,
            x: axes.contains(&Axis::X).then(|| vec![0.0; steps]),
            y: axes.contains(&Axis::Y).then(|| vec![0.0; steps]),
        }
    }

    /// Sample at grid index k on an axis, 0 if the axis is inactive.
    pub fn sample(&self, axis: Axis, k: usize) -> f64 {
        self.axis(axis).map(|v| v[k]).unwrap_or(0.0)
    }
}

fn gaussian(t: f64, p: &Pulse, width: f64) -> f64 {
    let d = (t - p.center) / width;
    p.amplitude * (-d * d).exp()
}

/// Evaluate the pulse train on the midpoint grid.
pub fn render(seq: &PulseSequence) -> Waveform {
    let grid = seq.grid();
    let eval = |pulses: &Vec<Pulse>| {
        grid.iter()
            .map(|&t| pulses.iter().map(|p| gaussian(t, p, seq.width)).sum())
            .collect::<Vec<f64>>()
    };
    Waveform {
        t_horizon: seq.t_horizon,
        x: seq.x.as_ref().map(eval),
        y: seq.y.as_ref().map(eval),
    }
}

/// Per-parameter sample gradients of one axis: `d f / d A_i` and `d f / d mu_i`.
#[derive(Debug, Clone)]
pub struct AxisGradient {
    /// `[i][k] = d f(t_k) / d A_i = exp(-(t_k - mu_i)^2 / sigma^2)`
    pub d_amplitude: Vec<Vec<f64>>,
    /// `[i][k] = d f(t_k) / d mu_i = A_i 2 (t_k - mu_i) / sigma^2 * exp(..)`
    pub d_center: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PulseGradient {
    pub x: Option<AxisGradient>,
    pub y: Option<AxisGradient>,
}

impl PulseGradient {
    pub fn axis(&self, axis: Axis) -> Option<&AxisGradient> {
        match axis {
            Axis::X => self.x.as_ref(),
            Axis::Y => self.y.as_ref(),
        }
    }
}

/// Analytic waveform gradients for the control optimizer.
pub fn render_gradient(seq: &PulseSequence) -> PulseGradient {
    let grid = seq.grid();
    let sigma2 = seq.width * seq.width;
    let eval = |pulses: &Vec<Pulse>| {
        let mut d_amplitude = Vec::with_capacity(pulses.len());
        let mut d_center = Vec::with_capacity(pulses.len());
        for p in pulses {
            let mut da = Vec::with_capacity(grid.len());
            let mut dmu = Vec::with_capacity(grid.len());
            for &t in &grid {
                let g = (-(t - p.center) * (t - p.center) / sigma2).exp();
                da.push(g);
                dmu.push(p.amplitude * 2.0 * (t - p.center) / sigma2 * g);
            }
            d_amplitude.push(da);
            d_center.push(dmu);
        }
        AxisGradient { d_amplitude, d_center }
    };
    PulseGradient {
        x: seq.x.as_ref().map(eval),
        y: seq.y.as_ref().map(eval),
    }
}

/// Draw a random feasible sequence: amplitudes uniform in `[-A_max, A_max]`,
/// centers uniform within their `3 sigma`-shrunk slots.
pub fn random_sequence<R: Rng>(
    rng: &mut R,
    constraints: &PulseConstraints,
) -> Result<PulseSequence, PulseError> {
    constraints.validate()?;
    let mut draw_axis = || {
        (0..constraints.n_pulses)
            .map(|i| {
                let (lo, hi) = constraints.slot_bounds(i);
                Pulse {
                    amplitude: rng.gen_range(-constraints.a_max..=constraints.a_max),
                    center: rng.gen_range(lo..hi),
                }
            })
            .collect::<Vec<_>>()
    };
    // canonical axis order keeps draws reproducible
    let x = constraints.has_axis(Axis::X).then(&mut draw_axis);
    let y = constraints.has_axis(Axis::Y).then(&mut draw_axis);
    Ok(PulseSequence {
        t_horizon: constraints.t_horizon,
        steps: constraints.steps,
        width: constraints.width,
        x,
        y,
    })
}

/// Map unconstrained logits to amplitudes through `A_max tanh(u)` with the
/// centers frozen at their slot midpoints. This is the feasibility
/// projection used by the gradient-based optimizer.
pub fn project_constraints(
    raw: &RawAmplitudes,
    constraints: &PulseConstraints,
) -> PulseSequence {
    let build = |logits: &Vec<f64>| {
        logits
            .iter()
            .enumerate()
            .map(|(i, &u)| Pulse {
                amplitude: constraints.a_max * u.tanh(),
                center: constraints.slot_midpoint(i),
            })
            .collect::<Vec<_>>()
    };
    PulseSequence {
        t_horizon: constraints.t_horizon,
        steps: constraints.steps,
        width: constraints.width,
        x: raw.x.as_ref().map(build),
        y: raw.y.as_ref().map(build),
    }
}

/// Unconstrained amplitude logits, one per pulse per active axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAmplitudes {
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

impl RawAmplitudes {
    pub fn zeros(constraints: &PulseConstraints) -> Self {
        let n = constraints.n_pulses;
        Self {
            x: constraints.has_axis(Axis::X).then(|| vec![0.0; n]),
            y: constraints.has_axis(Axis::Y).then(|| vec![0.0; n]),
        }
    }

    /// Inverse of the tanh reparameterization, for `|A| < A_max`.
    pub fn from_amplitudes(seq: &PulseSequence, a_max: f64) -> Self {
        let invert = |pulses: &Vec<Pulse>| {
            pulses.iter().map(|p| (p.amplitude / a_max).atanh()).collect::<Vec<f64>>()
        };
        Self {
            x: seq.x.as_ref().map(invert),
            y: seq.y.as_ref().map(invert),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn test_constraints(axes: Vec<Axis>) -> PulseConstraints {
        PulseConstraints::standard(5, 1.0, 128, 25.0, axes)
    }

    #[test]
    fn render_zero_amplitudes() {
        let seq = PulseSequence {
            t_horizon: 1.0,
            steps: 32,
            width: 0.02,
            x: Some(vec![Pulse { amplitude: 0.0, center: 0.5 }]),
            y: None,
        };
        let w = render(&seq);
        assert!(w.x.unwrap().iter().all(|&v| v == 0.0));
        assert!(w.y.is_none());
    }

    #[test]
    fn render_single_gaussian_peak() {
        let seq = PulseSequence {
            t_horizon: 1.0,
            steps: 128,
            width: 0.05,
            x: Some(vec![Pulse { amplitude: 1.0, center: 0.5 }]),
            y: None,
        };
        let w = render(&seq);
        let samples = w.x.unwrap();
        let peak = samples.iter().cloned().fold(f64::MIN, f64::max);
        // the midpoint grid misses the exact center by at most T/(2M)
        let offset: f64 = 0.5 / 128.0 / 0.05;
        assert!(peak <= 1.0 && peak >= (-offset * offset).exp() - 1e-12, "peak {peak}");
        // symmetric tails around the center
        for k in 0..samples.len() / 2 {
            assert!((samples[k] - samples[samples.len() - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn render_matches_term_by_term_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let constraints = test_constraints(vec![Axis::X, Axis::Y]);
        for _ in 0..20 {
            let seq = random_sequence(&mut rng, &constraints).unwrap();
            let w = render(&seq);
            for axis in [Axis::X, Axis::Y] {
                let pulses = seq.axis(axis).unwrap();
                let samples = w.axis(axis).unwrap();
                for (k, &t) in seq.grid().iter().enumerate() {
                    let mut direct = 0.0;
                    for p in pulses {
                        direct += p.amplitude * (-((t - p.center) / seq.width).powi(2)).exp();
                    }
                    assert!((samples[k] - direct).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn render_linear_in_amplitudes() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let constraints = test_constraints(vec![Axis::X]);
        let seq = random_sequence(&mut rng, &constraints).unwrap();
        let mut scaled = seq.clone();
        for p in scaled.x.as_mut().unwrap() {
            p.amplitude *= 2.5;
        }
        let w = render(&seq);
        let ws = render(&scaled);
        for (a, b) in w.x.unwrap().iter().zip(ws.x.unwrap().iter()) {
            assert!((b - 2.5 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_values_at_center() {
        let seq = PulseSequence {
            t_horizon: 1.0,
            steps: 1000,
            width: 0.05,
            x: Some(vec![Pulse { amplitude: 2.0, center: 0.5005 }]),
            y: None,
        };
        // t_k = 0.5005 lands exactly on the grid for M = 1000
        let g = render_gradient(&seq);
        let ax = g.x.as_ref().unwrap();
        let k = 500;
        assert!((seq.grid()[k] - 0.5005).abs() < 1e-12);
        assert!((ax.d_amplitude[0][k] - 1.0).abs() < 1e-12);
        assert!(ax.d_center[0][k].abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let constraints = test_constraints(vec![Axis::X, Axis::Y]);
        for _ in 0..5 {
            let seq = random_sequence(&mut rng, &constraints).unwrap();
            let grads = render_gradient(&seq);
            let h = 1e-6;
            for axis in [Axis::X, Axis::Y] {
                let ag = grads.axis(axis).unwrap();
                for i in 0..constraints.n_pulses {
                    for (param, grad_row) in [(0, &ag.d_amplitude[i]), (1, &ag.d_center[i])] {
                        let mut plus = seq.clone();
                        let mut minus = seq.clone();
                        {
                            let (p, m) = match axis {
                                Axis::X => (&mut plus.x, &mut minus.x),
                                Axis::Y => (&mut plus.y, &mut minus.y),
                            };
                            if param == 0 {
                                p.as_mut().unwrap()[i].amplitude += h;
                                m.as_mut().unwrap()[i].amplitude -= h;
                            } else {
                                p.as_mut().unwrap()[i].center += h;
                                m.as_mut().unwrap()[i].center -= h;
                            }
                        }
                        let wp = render(&plus);
                        let wm = render(&minus);
                        let (wp, wm) = (wp.axis(axis).unwrap(), wm.axis(axis).unwrap());
                        for k in 0..seq.steps {
                            let fd = (wp[k] - wm[k]) / (2.0 * h);
                            let scale = grad_row[k].abs().max(1.0);
                            assert!(
                                (grad_row[k] - fd).abs() / scale < 1e-5,
                                "axis {axis:?} pulse {i} param {param} sample {k}: {} vs {}",
                                grad_row[k],
                                fd
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn random_sequences_satisfy_constraints() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let constraints = test_constraints(vec![Axis::X, Axis::Y]);
        assert!((constraints.width - 1.0 / 60.0).abs() < 1e-15);
        for _ in 0..10_000 {
            let seq = random_sequence(&mut rng, &constraints).unwrap();
            seq.validate(&constraints).unwrap();
        }
    }

    #[test]
    fn random_sequence_deterministic() {
        let constraints = test_constraints(vec![Axis::X]);
        let a = random_sequence(&mut ChaCha12Rng::seed_from_u64(42), &constraints).unwrap();
        let b = random_sequence(&mut ChaCha12Rng::seed_from_u64(42), &constraints).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn amplitude_distribution_uniform_ks() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let constraints = test_constraints(vec![Axis::X]);
        let mut samples = Vec::new();
        for _ in 0..2000 {
            let seq = random_sequence(&mut rng, &constraints).unwrap();
            for p in seq.x.as_ref().unwrap() {
                samples.push(p.amplitude);
            }
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        // KS statistic against U(-A_max, A_max)
        let mut d = 0.0f64;
        for (i, &v) in samples.iter().enumerate() {
            let cdf = (v + 25.0) / 50.0;
            d = d.max((cdf - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - cdf).abs());
        }
        // asymptotic Kolmogorov p-value
        let lambda = d * n.sqrt();
        let mut p = 0.0;
        for k in 1..100 {
            let kf = k as f64;
            p += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        }
        assert!(p > 0.01, "KS p-value {p} with D = {d}");
    }

    #[test]
    fn infeasible_constraints_rejected() {
        let mut c = test_constraints(vec![Axis::X]);
        c.width = 0.05; // 5 * 6 * 0.05 = 1.5 > T = 1
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(random_sequence(&mut rng, &c).is_err());
    }

    #[test]
    fn projection_saturates_and_round_trips() {
        let constraints = test_constraints(vec![Axis::X]);
        let zero = project_constraints(&RawAmplitudes::zeros(&constraints), &constraints);
        assert!(zero.x.as_ref().unwrap().iter().all(|p| p.amplitude == 0.0));

        let big = RawAmplitudes { x: Some(vec![50.0; 5]), y: None };
        let sat = project_constraints(&big, &constraints);
        for p in sat.x.as_ref().unwrap() {
            assert!((p.amplitude - 25.0).abs() < 1e-9);
            assert!(p.amplitude.abs() <= 25.0);
        }

        // round trip u -> A -> u for |A| <= 0.999 A_max
        for frac in [-0.999, -0.5, 0.0, 0.3, 0.999] {
            let u = (frac as f64).atanh();
            let raw = RawAmplitudes { x: Some(vec![u; 5]), y: None };
            let seq = project_constraints(&raw, &constraints);
            let back = RawAmplitudes::from_amplitudes(&seq, constraints.a_max);
            for &ub in back.x.as_ref().unwrap() {
                assert!((ub - u).abs() < 1e-9, "round trip {u} -> {ub}");
            }
        }
    }

    #[test]
    fn projected_centers_sit_at_slot_midpoints() {
        let constraints = test_constraints(vec![Axis::X, Axis::Y]);
        let seq = project_constraints(&RawAmplitudes::zeros(&constraints), &constraints);
        seq.validate(&constraints).unwrap();
        for (i, p) in seq.x.as_ref().unwrap().iter().enumerate() {
            assert!((p.center - constraints.slot_midpoint(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn pulse_sequence_json_shape() {
        let seq = PulseSequence {
            t_horizon: 1.0,
            steps: 4,
            width: 0.02,
            x: Some(vec![Pulse { amplitude: 1.5, center: 0.25 }]),
            y: None,
        };
        let json = serde_json::to_string(&seq).unwrap();
        assert!(json.starts_with("{\"T\":1.0,\"M\":4,\"sigma\":0.02,\"axes\":{\"x\":[[1.5,0.25]]}}"));
        let back: PulseSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(seq, back);
    }
}
