//! Dense complex linear algebra and the operator/state constructors shared by
//! the simulator and the model.
//!
//! Conventions fixed here and relied on everywhere else:
//! - computational basis with `sigma_z = diag(1, -1)`, `|0>` the +1 eigenstate;
//! - the raising operator is `|1><0|` (entry (1,0) = 1);
//! - composite spaces are ordered system (x) auxiliary in [`kron`] and
//!   [`partial_trace`].

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("invalid dimension {0}: {1}")]
    InvalidDimension(usize, &'static str),
    #[error("dimension mismatch: operator is {got}x{got}, expected {expected}x{expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrix is not Hermitian (max |M - M^dag| = {0:.3e})")]
    NotHermitian(f64),
    #[error("not a density matrix: {0}")]
    NotDensityMatrix(String),
    #[error("not unitary (max |U^dag U - I| = {0:.3e})")]
    NotUnitary(f64),
    #[error("invalid thermal parameters: {0}")]
    InvalidThermal(String),
}

/// A square complex matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: Array2<C64>,
}

impl Operator {
    pub fn new(mat: Array2<C64>) -> Result<Self, LinalgError> {
        if mat.nrows() != mat.ncols() {
            return Err(LinalgError::InvalidDimension(mat.nrows(), "must be square"));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { mat })
    }

    /// Build from row-major entries; panics on length mismatch (test helper).
    pub fn from_rows(dim: usize, entries: &[C64]) -> Self {
        let mat = Array2::from_shape_vec((dim, dim), entries.to_vec())
            .expect("entry count must equal dim*dim");
        Self { mat }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mat: Array2::eye(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { mat: Array2::zeros((dim, dim)) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_mat(self) -> Array2<C64> {
        self.mat
    }

    pub fn dagger(&self) -> Self {
        Self { mat: dagger(&self.mat) }
    }

    pub fn trace(&self) -> C64 {
        self.mat.diag().sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { mat: self.mat.mapv(|z| z * s) }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self { mat: self.mat.dot(&other.mat) }
    }

    /// max_ij |self_ij - other_ij|
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// max_ij |M_ij - conj(M_ji)|
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator { mat: &self.mat + &rhs.mat }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator { mat: &self.mat - &rhs.mat }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.matmul(rhs)
    }
}

pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn hermiticity_error(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut err = 0.0f64;
    for i in 0..n {
        for j in i..n {
            err = err.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    err
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

/// Pauli and ladder operators on the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    Identity,
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// Canonical 2x2 matrices in the computational basis, `sigma_z = diag(1, -1)`.
/// The raising operator `Plus` is `|1><0|`.
pub fn pauli(p: Pauli) -> Operator {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let entries = match p {
        Pauli::Identity => [one, zero, zero, one],
        Pauli::X => [zero, one, one, zero],
        Pauli::Y => [zero, -i, i, zero],
        Pauli::Z => [one, zero, zero, -one],
        Pauli::Plus => [zero, zero, one, zero],
        Pauli::Minus => [zero, one, zero, zero],
    };
    Operator::from_rows(2, &entries)
}

/// Truncated bosonic annihilation operator, `(a)_{k,k+1} = sqrt(k+1)`.
pub fn bosonic_annihilation(trunc_dim: usize) -> Result<Operator, LinalgError> {
    if trunc_dim < 2 {
        return Err(LinalgError::InvalidDimension(trunc_dim, "bosonic truncation must be >= 2"));
    }
    let mut mat = Array2::zeros((trunc_dim, trunc_dim));
    for k in 0..trunc_dim - 1 {
        mat[[k, k + 1]] = C64::new(((k + 1) as f64).sqrt(), 0.0);
    }
    Ok(Operator { mat })
}

/// Single-mode fermionic annihilation operator `c = |0><1|` in the occupation
/// basis, so that `{c, c^dag} = I` exactly.
pub fn fermionic_annihilation() -> Operator {
    let mut mat = Array2::zeros((2, 2));
    mat[[0, 1]] = C64::new(1.0, 0.0);
    Operator { mat }
}

/// Kronecker product with the fixed system (x) auxiliary ordering.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    let (da, db) = (a.dim(), b.dim());
    let mut mat = Array2::zeros((da * db, da * db));
    for i1 in 0..da {
        for j1 in 0..da {
            let av = a.mat[[i1, j1]];
            if av == C64::new(0.0, 0.0) {
                continue;
            }
            for i2 in 0..db {
                for j2 in 0..db {
                    mat[[i1 * db + i2, j1 * db + j2]] = av * b.mat[[i2, j2]];
                }
            }
        }
    }
    Operator { mat }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    Sys,
    Aux,
}

/// Partial trace of an operator on a system (x) auxiliary space.
pub fn partial_trace(
    m: &Operator,
    dims: (usize, usize),
    keep: Keep,
) -> Result<Operator, LinalgError> {
    let (ds, da) = dims;
    if m.dim() != ds * da {
        return Err(LinalgError::DimensionMismatch { got: m.dim(), expected: ds * da });
    }
    partial_trace_mat(&m.mat, dims, keep).map(|mat| Operator { mat })
}

pub(crate) fn partial_trace_mat(
    m: &Array2<C64>,
    (ds, da): (usize, usize),
    keep: Keep,
) -> Result<Array2<C64>, LinalgError> {
    if m.nrows() != ds * da {
        return Err(LinalgError::DimensionMismatch { got: m.nrows(), expected: ds * da });
    }
    let mat = match keep {
        Keep::Sys => {
            let mut out = Array2::zeros((ds, ds));
            for s in 0..ds {
                for sp in 0..ds {
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..da {
                        acc += m[[s * da + a, sp * da + a]];
                    }
                    out[[s, sp]] = acc;
                }
            }
            out
        }
        Keep::Aux => {
            let mut out = Array2::zeros((da, da));
            for a in 0..da {
                for ap in 0..da {
                    let mut acc = C64::new(0.0, 0.0);
                    for s in 0..ds {
                        acc += m[[s * da + a, s * da + ap]];
                    }
                    out[[a, ap]] = acc;
                }
            }
            out
        }
    };
    Ok(mat)
}

/// Closed-form `exp(-i H t)` for a 2x2 Hermitian `H`.
///
/// Writes `H = a0 I + a . sigma`; the result is
/// `e^{-i a0 t} (cos(|a| t) I - i sin(|a| t) (a/|a|) . sigma)`.
/// This decomposition is also the differentiation point for control
/// gradients (see [`expm_2x2_with_gradient`]).
pub fn expm_2x2(h: &Operator, t: f64) -> Result<UnitaryOperator, LinalgError> {
    if h.dim() != 2 {
        return Err(LinalgError::DimensionMismatch { got: h.dim(), expected: 2 });
    }
    let herm = h.hermiticity_error();
    if herm > 1e-10 {
        return Err(LinalgError::NotHermitian(herm));
    }
    let mat = expm_2x2_raw(h.mat(), t);
    Ok(UnitaryOperator { op: Operator { mat } })
}

/// Unchecked closed-form step exponential for the hot paths.
pub(crate) fn expm_2x2_raw(h: &Array2<C64>, t: f64) -> Array2<C64> {
    let a0 = 0.5 * (h[[0, 0]].re + h[[1, 1]].re);
    // symmetrized off-diagonal guards against tiny Hermiticity roundoff
    let off = 0.5 * (h[[0, 1]] + h[[1, 0]].conj());
    let (ax, ay) = (off.re, -off.im);
    let az = 0.5 * (h[[0, 0]].re - h[[1, 1]].re);
    let r = (ax * ax + ay * ay + az * az).sqrt();
    let u = r * t;
    let phase = C64::new(0.0, -a0 * t).exp();
    // kappa = sin(|a| t) / |a|, finite limit t as |a| -> 0
    let kappa = if r > 0.0 { u.sin() / r } else { t };
    let cosu = u.cos();
    let i = C64::new(0.0, 1.0);
    let mut mat = Array2::zeros((2, 2));
    mat[[0, 0]] = phase * (C64::new(cosu, 0.0) - i * kappa * az);
    mat[[0, 1]] = phase * (-i * kappa * C64::new(ax, -ay));
    mat[[1, 0]] = phase * (-i * kappa * C64::new(ax, ay));
    mat[[1, 1]] = phase * (C64::new(cosu, 0.0) + i * kappa * az);
    mat
}

/// `exp(-i H t)` together with its derivative along a Hermitian direction
/// `dH` (both traceless contributions handled exactly).
///
/// `H = a0 I + a . sigma`, `dH = e0 I + e . sigma`; the derivative of the
/// closed form with respect to a scalar parameter moving `H` by `dH`.
pub(crate) fn expm_2x2_grad_raw(h: &Array2<C64>, dh: &Array2<C64>, t: f64) -> Array2<C64> {
    let a0 = 0.5 * (h[[0, 0]].re + h[[1, 1]].re);
    let off = 0.5 * (h[[0, 1]] + h[[1, 0]].conj());
    let a = [off.re, -off.im, 0.5 * (h[[0, 0]].re - h[[1, 1]].re)];
    let e0 = 0.5 * (dh[[0, 0]].re + dh[[1, 1]].re);
    let doff = 0.5 * (dh[[0, 1]] + dh[[1, 0]].conj());
    let e = [doff.re, -doff.im, 0.5 * (dh[[0, 0]].re - dh[[1, 1]].re)];

    let r2 = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
    let r = r2.sqrt();
    let u = r * t;
    let ae = a[0] * e[0] + a[1] * e[1] + a[2] * e[2];
    let phase = C64::new(0.0, -a0 * t).exp();
    let i = C64::new(0.0, 1.0);

    let sigma = |v: [f64; 3]| -> Array2<C64> {
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = C64::new(v[2], 0.0);
        m[[0, 1]] = C64::new(v[0], -v[1]);
        m[[1, 0]] = C64::new(v[0], v[1]);
        m[[1, 1]] = C64::new(-v[2], 0.0);
        m
    };
    let eye: Array2<C64> = Array2::eye(2);

    // d/dp [ e^{-i a0 t} (cos u I - i kappa a.sigma) ] with kappa = sin(u)/r,
    // da0/dp = e0, da/dp = e. The I-coefficient derivative is
    // -sin(u) du/dp = -t (a.e) kappa, which stays finite as r -> 0.
    let cosu = u.cos();
    let kappa = if r > 0.0 { u.sin() / r } else { t };
    let dkappa_dp = if u.abs() > 1e-4 {
        ae * (cosu * t * r - u.sin()) / (r2 * r)
    } else {
        // series in u: (cos(u) t r - sin(u)) / r^3 = t^3 (-1/3 + u^2/30 + ...)
        ae * t * t * t * (-1.0 / 3.0 + u * u / 30.0)
    };
    let asig = sigma(a);
    let esig = sigma(e);

    let core = eye.mapv(|z| z * C64::new(cosu, 0.0)) - asig.mapv(|z| i * kappa * z);
    let dcore = eye.mapv(|z| z * C64::new(-t * ae * kappa, 0.0))
        - asig.mapv(|z| i * dkappa_dp * z)
        - esig.mapv(|z| i * kappa * z);
    let dphase = phase * C64::new(0.0, -e0 * t);
    dcore.mapv(|z| z * phase) + core.mapv(|z| z * dphase)
}

/// `exp(scale * M)` by Taylor series with scaling and squaring.
pub fn expm_dense(m: &Operator, scale: C64) -> Operator {
    Operator { mat: expm_dense_mat(m.mat(), scale) }
}

pub(crate) fn expm_dense_mat(m: &Array2<C64>, scale: C64) -> Array2<C64> {
    let n = m.nrows();
    let b = m.mapv(|z| z * scale);
    // infinity norm
    let norm = (0..n)
        .map(|i| (0..n).map(|j| b[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let t = b.mapv(|z| z / (2.0f64.powi(s as i32)));

    let mut acc: Array2<C64> = Array2::eye(n);
    let mut term: Array2<C64> = Array2::eye(n);
    for k in 1..=64u32 {
        term = term.dot(&t).mapv(|z| z / k as f64);
        acc = acc + &term;
        let tnorm = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if tnorm < 1e-20 {
            break;
        }
    }
    for _ in 0..s {
        acc = acc.dot(&acc);
    }
    acc
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations, ascending.
pub fn hermitian_eigenvalues(m: &Operator) -> Result<Vec<f64>, LinalgError> {
    let herm = m.hermiticity_error();
    if herm > 1e-8 {
        return Err(LinalgError::NotHermitian(herm));
    }
    Ok(hermitian_eigenvalues_mat(&m.mat))
}

pub(crate) fn hermitian_eigenvalues_mat(m: &Array2<C64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-14 * scale;
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[[p, q]].norm());
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                let g = apq.norm();
                if g <= tol * 1e-2 {
                    continue;
                }
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                // zero the (p,q) entry: theta from tan(2 theta) = -2|g|/(app-aqq)
                let theta = 0.5 * (-2.0 * g).atan2(app - aqq);
                let (c, sn) = (theta.cos(), theta.sin());
                let w = apq / g; // unit phase of the off-diagonal entry
                let s = w * sn;
                // G has block [[c, s], [-conj(s), c]] on (p,q); apply A <- G^dag A G
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = akp * c - akq * s.conj();
                    a[[k, q]] = akp * s + akq * c;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = apk * c - aqk * s;
                    a[[q, k]] = apk * s.conj() + aqk * c;
                }
            }
        }
    }
    let mut evs: Vec<f64> = (0..n).map(|i| a[[i, i]].re).collect();
    evs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    evs
}

/// A positive unit-trace Hermitian operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const EIGENVALUE_FLOOR: f64 = -1e-8;

    pub fn try_new(op: Operator) -> Result<Self, LinalgError> {
        let herm = op.hermiticity_error();
        if herm > Self::HERMITICITY_TOL {
            return Err(LinalgError::NotDensityMatrix(format!(
                "Hermiticity error {herm:.3e} exceeds {:.0e}",
                Self::HERMITICITY_TOL
            )));
        }
        let tr = op.trace();
        if (tr.re - 1.0).abs() > Self::TRACE_TOL || tr.im.abs() > Self::TRACE_TOL {
            return Err(LinalgError::NotDensityMatrix(format!(
                "trace {tr} differs from 1 beyond {:.0e}",
                Self::TRACE_TOL
            )));
        }
        let evs = hermitian_eigenvalues_mat(op.mat());
        let min_ev = evs.first().copied().unwrap_or(0.0);
        if min_ev < Self::EIGENVALUE_FLOOR {
            return Err(LinalgError::NotDensityMatrix(format!(
                "minimum eigenvalue {min_ev:.3e} below {:.0e}",
                Self::EIGENVALUE_FLOOR
            )));
        }
        Ok(Self { op })
    }

    /// Caller asserts validity (hot paths; the invariants are enforced by the
    /// integrator's own physicality checks).
    pub fn new_unchecked(op: Operator) -> Self {
        Self { op }
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn mat(&self) -> &Array2<C64> {
        self.op.mat()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// tr(rho^2); equals the squared Frobenius norm for Hermitian rho.
    pub fn purity(&self) -> f64 {
        self.op.mat().iter().map(|z| z.norm_sqr()).sum()
    }
}

/// An operator with `U^dag U = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOperator {
    op: Operator,
}

impl UnitaryOperator {
    pub const UNITARITY_TOL: f64 = 1e-9;

    pub fn try_new(op: Operator) -> Result<Self, LinalgError> {
        let prod = op.dagger().matmul(&op);
        let err = prod.max_abs_diff(&Operator::identity(op.dim()));
        if err > Self::UNITARITY_TOL {
            return Err(LinalgError::NotUnitary(err));
        }
        Ok(Self { op })
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn mat(&self) -> &Array2<C64> {
        self.op.mat()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn dagger(&self) -> Self {
        Self { op: self.op.dagger() }
    }
}

/// Thermal-state parameters of the auxiliary mode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThermalParams {
    Fermionic { beta: f64, mu_chem: f64 },
    Bosonic { n_bar: f64 },
}

/// Thermal state of the auxiliary.
///
/// Fermionic: `diag(1-f, f)` with Fermi-Dirac occupation
/// `f = 1/(1 + exp(beta (omega_d - mu_chem)))`. Bosonic: geometric
/// populations `p_k ~ (n_bar/(n_bar+1))^k` on `k = 0..trunc_dim-1`,
/// renormalized to unit trace after truncation.
pub fn thermal_state(
    params: &ThermalParams,
    omega_d: f64,
    trunc_dim: usize,
) -> Result<DensityMatrix, LinalgError> {
    let mat = match *params {
        ThermalParams::Fermionic { beta, mu_chem } => {
            if trunc_dim != 2 {
                return Err(LinalgError::InvalidDimension(trunc_dim, "fermionic mode is 2-dimensional"));
            }
            let f = 1.0 / (1.0 + (beta * (omega_d - mu_chem)).exp());
            let mut m = Array2::zeros((2, 2));
            m[[0, 0]] = C64::new(1.0 - f, 0.0);
            m[[1, 1]] = C64::new(f, 0.0);
            m
        }
        ThermalParams::Bosonic { n_bar } => {
            if n_bar < 0.0 {
                return Err(LinalgError::InvalidThermal(format!(
                    "mean occupation must be non-negative, got {n_bar}"
                )));
            }
            if trunc_dim < 2 {
                return Err(LinalgError::InvalidDimension(trunc_dim, "bosonic truncation must be >= 2"));
            }
            let ratio = n_bar / (n_bar + 1.0);
            let mut probs: Vec<f64> = Vec::with_capacity(trunc_dim);
            let mut p = 1.0;
            for _ in 0..trunc_dim {
                probs.push(p);
                p *= ratio;
            }
            let total: f64 = probs.iter().sum();
            let mut m = Array2::zeros((trunc_dim, trunc_dim));
            for (k, pk) in probs.iter().enumerate() {
                m[[k, k]] = C64::new(pk / total, 0.0);
            }
            m
        }
    };
    DensityMatrix::try_new(Operator { mat })
}
