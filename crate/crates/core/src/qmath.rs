//! Scalar numerics shared by every other module: overlaps, the per-qubit
//! failure weight λ, the bias factor h, Chernoff tails, log-space binomial
//! sums, and single-qubit states.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};
use thiserror::Error;

pub type C64 = Complex<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmathError {
    #[error("domain error: {name} = {value} outside {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("state not normalised: |a|^2 + |b|^2 = {0}")]
    NotNormalised(f64),
}

fn domain(name: &'static str, value: f64, domain: &'static str) -> QmathError {
    QmathError::Domain {
        name,
        value,
        domain,
    }
}

/// An angle stored in radians.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Angle(pub f64);

impl Angle {
    pub fn from_degrees(deg: f64) -> Self {
        Angle(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// True when the angle sits on an edge of the open uncertainty interval (0, π/4).
    pub fn is_boundary(self) -> bool {
        self.0 == 0.0 || self.0 == FRAC_PI_4
    }
}

/// A deviation from the uniform distribution, in [0, ½).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize, Default)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bias(f64);

impl Bias {
    pub fn new(value: f64) -> Result<Self, QmathError> {
        if value.is_finite() && (0.0..0.5).contains(&value) {
            Ok(Bias(value))
        } else {
            Err(domain("bias", value, "[0, 1/2)"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bias {
    type Error = QmathError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Bias::new(v)
    }
}

impl From<Bias> for f64 {
    fn from(b: Bias) -> f64 {
        b.0
    }
}

/// A probability carried both as its natural log and its linear value.
///
/// Exponents such as −1052 underflow `f64`, so comparisons should use `ln`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProb {
    pub ln: f64,
    pub value: f64,
}

impl LogProb {
    pub fn from_ln(ln: f64) -> Self {
        LogProb { ln, value: ln.exp() }
    }

    pub fn from_value(value: f64) -> Self {
        LogProb {
            ln: value.ln(),
            value,
        }
    }

    pub fn zero() -> Self {
        LogProb {
            ln: f64::NEG_INFINITY,
            value: 0.0,
        }
    }

    /// ln(e^a + e^b) without overflow or underflow.
    pub fn add(self, other: LogProb) -> LogProb {
        LogProb::from_ln(log_add_exp(self.ln, other.ln))
    }

    /// ln of 10^k, handy for targets.
    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// O(θ) = (cos θ + sin θ)/√2, the largest cross-basis overlap allowed by a
/// misalignment of at most θ.
pub fn overlap_o(theta: Angle) -> Result<f64, QmathError> {
    let th = theta.radians();
    if !th.is_finite() || !(0.0..=FRAC_PI_4).contains(&th) {
        return Err(domain("theta", th, "[0, pi/4]"));
    }
    Ok((th.cos() + th.sin()) * FRAC_1_SQRT_2)
}

/// λ as a function of the overlap bound directly.
pub fn lambda_from_overlap(o: f64, beta_pb: f64) -> Result<f64, QmathError> {
    if !(FRAC_1_SQRT_2 - 1e-15..=1.0).contains(&o) {
        return Err(domain("overlap", o, "[1/sqrt2, 1]"));
    }
    if !(0.0..=0.5).contains(&beta_pb) {
        return Err(domain("beta_PB", beta_pb, "[0, 1/2]"));
    }
    let radicand = 1.0 - (1.0 - o * o) * (1.0 - 4.0 * beta_pb * beta_pb);
    Ok(0.5 * (1.0 - radicand.max(0.0).sqrt()))
}

/// λ(θ, β_PB) = ½(1 − √(1 − (1 − O(θ)²)(1 − 4β_PB²))).
pub fn lambda_bound(theta: Angle, beta_pb: f64) -> Result<f64, QmathError> {
    lambda_from_overlap(overlap_o(theta)?, beta_pb)
}

/// h(β_PS, β_PB, θ) = 2β_PS √(½ + 2β_PB² + (½ − 2β_PB²) sin 2θ).
pub fn h_factor(beta_ps: f64, beta_pb: f64, theta: Angle) -> Result<f64, QmathError> {
    if !(0.0..=0.5).contains(&beta_ps) {
        return Err(domain("beta_PS", beta_ps, "[0, 1/2]"));
    }
    if !(0.0..=0.5).contains(&beta_pb) {
        return Err(domain("beta_PB", beta_pb, "[0, 1/2]"));
    }
    let th = theta.radians();
    if !(0.0..=FRAC_PI_4).contains(&th) {
        return Err(domain("theta", th, "[0, pi/4]"));
    }
    let b2 = beta_pb * beta_pb;
    Ok(2.0 * beta_ps * (0.5 + 2.0 * b2 + (0.5 - 2.0 * b2) * (2.0 * th).sin()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Lower,
    Upper,
}

/// Chernoff bound for a sum of independent Bernoulli variables with the given
/// mean deviating by a relative amount ε below (lower) or above (upper).
pub fn chernoff_tail(mean: f64, epsilon: f64, side: Tail) -> Result<LogProb, QmathError> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(domain("mean", mean, "(0, inf)"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain("epsilon", epsilon, "(0, 1)"));
    }
    let denom = match side {
        Tail::Lower => 2.0,
        Tail::Upper => 3.0,
    };
    Ok(LogProb::from_ln(-mean * epsilon * epsilon / denom))
}

/// Largest number of errors n with n ≤ N·γ.
pub fn max_errors(n_total: u64, gamma: f64) -> u64 {
    let cut = (n_total as f64 * gamma).floor();
    if cut < 0.0 {
        0
    } else {
        (cut as u64).min(n_total)
    }
}

/// Σ_{n=0}^{⌊Nγ⌋} C(N,n) λ0^{N−n} (1−λ0)^n, evaluated by log-sum-exp.
pub fn binomial_tail_weighted(n_total: u64, gamma: f64, lam0: f64) -> Result<LogProb, QmathError> {
    if n_total == 0 {
        return Err(domain("N", 0.0, "N >= 1"));
    }
    if !(gamma >= 0.0) {
        return Err(domain("gamma", gamma, "[0, inf)"));
    }
    if !(lam0 > 0.0 && lam0 <= 1.0) {
        return Err(domain("lam0", lam0, "(0, 1]"));
    }
    let cut = max_errors(n_total, gamma);
    if cut == n_total {
        return Ok(LogProb::from_ln(0.0));
    }
    let ln_p = lam0.ln();
    let ln_q = (1.0 - lam0).ln();
    // Terms peak near n = N(1−λ0); accumulate with a running max.
    let mut acc = f64::NEG_INFINITY;
    for n in 0..=cut {
        let term = if n == 0 {
            n_total as f64 * ln_p
        } else {
            ln_binomial(n_total, n) + (n_total - n) as f64 * ln_p + n as f64 * ln_q
        };
        acc = log_add_exp(acc, term);
    }
    Ok(LogProb::from_ln(acc.min(0.0)))
}

/// A single-qubit pure state a|0⟩ + b|1⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitState {
    pub a: C64,
    pub b: C64,
}

impl QubitState {
    pub fn new(a: C64, b: C64) -> Result<Self, QmathError> {
        let norm = a.norm_sqr() + b.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(QmathError::NotNormalised(norm));
        }
        Ok(QubitState { a, b })
    }

    /// cos α |0⟩ + sin α |1⟩ (real amplitudes, Hilbert-space angle α).
    pub fn real(alpha: f64) -> Self {
        QubitState {
            a: C64::new(alpha.cos(), 0.0),
            b: C64::new(alpha.sin(), 0.0),
        }
    }

    /// BB84 state |φ_{t,u}⟩ with the basis tilted by a Bloch-sphere angle `tilt`.
    pub fn bb84(t: bool, u: bool, tilt: f64) -> Self {
        let alpha = if u { FRAC_PI_4 } else { 0.0 }
            + if t { std::f64::consts::FRAC_PI_2 } else { 0.0 }
            + 0.5 * tilt;
        QubitState::real(alpha)
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &QubitState) -> C64 {
        self.a.conj() * other.a + self.b.conj() * other.b
    }

    pub fn is_real(&self) -> bool {
        self.a.im == 0.0 && self.b.im == 0.0
    }

    pub fn projector(&self) -> DensityMatrix2 {
        DensityMatrix2 {
            m: [
                [self.a * self.a.conj(), self.a * self.b.conj()],
                [self.b * self.a.conj(), self.b * self.b.conj()],
            ],
        }
    }

    /// Probability that a measurement of this state in the real basis with
    /// Hilbert-space angle `basis_angle` yields the outcome 0.
    pub fn prob_zero_in_basis(&self, basis_angle: f64) -> f64 {
        self.inner(&QubitState::real(basis_angle)).norm_sqr()
    }
}

/// 2×2 density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix2 {
    pub m: [[C64; 2]; 2],
}

impl DensityMatrix2 {
    pub fn zero() -> Self {
        let z = C64::new(0.0, 0.0);
        DensityMatrix2 { m: [[z, z], [z, z]] }
    }

    pub fn add_scaled(&mut self, w: f64, other: &DensityMatrix2) {
        for i in 0..2 {
            for j in 0..2 {
                self.m[i][j] += other.m[i][j] * w;
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (self.m[0][0] + self.m[1][1]).re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.m[0][1] - self.m[1][0].conj()).norm()
            + self.m[0][0].im.abs()
            + self.m[1][1].im.abs()
    }

    /// Eigenvalues (ascending) of the Hermitian part.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let b = (self.m[0][1] + self.m[1][0].conj()) * 0.5;
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        (mid - rad, mid + rad)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().1
    }

    pub fn is_valid_state(&self) -> bool {
        let (lo, _) = self.eigenvalues();
        self.hermiticity_error() <= 1e-12 && (self.trace() - 1.0).abs() <= 1e-12 && lo >= -1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_values() {
        assert!((overlap_o(Angle(0.0)).unwrap() - 0.7071067811865476).abs() < 1e-15);
        assert!((overlap_o(Angle(FRAC_PI_4)).unwrap() - 1.0).abs() < 1e-15);
        assert!(Angle(FRAC_PI_4).is_boundary());
        assert!((overlap_o(Angle::from_degrees(10.0)).unwrap() - 0.8191520).abs() < 1e-7);
        assert!(overlap_o(Angle(-0.1)).is_err());
        assert!(overlap_o(Angle(1.0)).is_err());
    }

    #[test]
    fn lambda_values() {
        let ideal = lambda_bound(Angle(0.0), 0.0).unwrap();
        assert!((ideal - (0.5 - 0.5 * FRAC_1_SQRT_2)).abs() < 1e-15);
        assert_eq!(lambda_bound(Angle(0.3), 0.5).unwrap(), 0.0);
        let l = lambda_bound(Angle::from_degrees(10.0), 2.4e-3).unwrap();
        assert!((l - 0.0904217).abs() < 1e-7, "{l}");
    }

    #[test]
    fn h_values() {
        assert_eq!(h_factor(0.0, 0.1, Angle(0.2)).unwrap(), 0.0);
        let x = 0.123;
        assert!((h_factor(x, 0.0, Angle(0.0)).unwrap() - x * 2f64.sqrt()).abs() < 1e-15);
        assert!((h_factor(0.5, 0.0, Angle(0.0)).unwrap() - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn chernoff_values() {
        let r = chernoff_tail(760000.0, 1.0 / 19.0, Tail::Lower).unwrap();
        assert!((r.ln + 1052.6316).abs() < 1e-3);
        assert_eq!(r.value, 0.0);
        let up = chernoff_tail(100.0, 0.3, Tail::Upper).unwrap();
        assert!((up.ln + 3.0).abs() < 1e-12);
        let near = chernoff_tail(10.0, 1.0 - 1e-12, Tail::Lower).unwrap();
        assert!((near.ln + 5.0).abs() < 1e-9);
        assert!(chernoff_tail(10.0, 1.0, Tail::Lower).is_err());
        assert!(chernoff_tail(0.0, 0.5, Tail::Lower).is_err());
    }

    #[test]
    fn binomial_values() {
        let lam0 = 0.5 + 0.5 * FRAC_1_SQRT_2;
        let one = binomial_tail_weighted(1, 0.0, lam0).unwrap();
        assert!((one.value - 0.8535533905932737).abs() < 1e-14);
        let r = binomial_tail_weighted(4, 0.3, 0.85).unwrap();
        let direct = 0.85f64.powi(4) + 4.0 * 0.85f64.powi(3) * 0.15;
        assert!((r.value - direct).abs() < 1e-13);
        assert!((r.value - 0.8904812).abs() < 1e-7);
        assert_eq!(binomial_tail_weighted(5, 1.0, 0.3).unwrap().value, 1.0);
        let big = binomial_tail_weighted(40_000_000, 0.0, 0.9).unwrap();
        assert!((big.ln - 4e7 * 0.9f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn bb84_states_are_orthonormal() {
        for &u in &[false, true] {
            let s0 = QubitState::bb84(false, u, 0.1);
            let s1 = QubitState::bb84(true, u, 0.1);
            assert!(s0.inner(&s1).norm() < 1e-15);
        }
        let plus = QubitState::bb84(false, true, 0.0);
        assert!((plus.inner(&QubitState::bb84(false, false, 0.0)).norm() - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn density_matrix_mixture() {
        let mut rho = DensityMatrix2::zero();
        rho.add_scaled(0.5, &QubitState::bb84(false, false, 0.0).projector());
        rho.add_scaled(0.5, &QubitState::bb84(false, true, 0.0).projector());
        assert!(rho.is_valid_state());
        assert!((rho.max_eigenvalue() - 0.5 * (1.0 + FRAC_1_SQRT_2)).abs() < 1e-15);
    }

    #[test]
    fn bias_domain() {
        assert!(Bias::new(0.5).is_err());
        assert!(Bias::new(-0.01).is_err());
        assert_eq!(Bias::new(0.2).unwrap().value(), 0.2);
        let b: Result<Bias, _> = serde_json::from_str("0.7");
        assert!(b.is_err());
    }
}
