//! Exact small-N unforgeability oracle.
//!
//! For a preparation ensemble and a tolerated error fraction γ, the
//! probability that two tokens validated at different presentation points is
//! governed by the largest eigenvalue of
//!
//! D_{a,b} = Σ_s P_s Σ_{r : d(a,r) on S₀ + d(b,r) on S₁ ≤ Nγ} ⊗_k |φ_{r_k,s_k}⟩⟨φ_{r_k,s_k}|
//!
//! where S_i = {k : s_k = h_k ⊕ i}. This module builds D_{a,b} densely,
//! maximises its norm over (a,b), and compares against the binomial closed
//! form and the Chernoff-type bound.

use crate::bits::BitString;
use crate::qmath::{self, Angle, DensityMatrix2, LogProb, QmathError, QubitState, C64};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::FRAC_PI_4;
use thiserror::Error;

/// Largest N for which D_{a,b} is built densely.
pub const MAX_DENSE_N: usize = 12;
/// Largest N for exhaustive enumeration over all (a,b).
pub const MAX_FULL_ENUM_N: usize = 6;
/// Largest N for the literal sum-over-(s,r) construction.
pub const MAX_LITERAL_N: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("capability limit: {0}")]
    Capability(String),
    #[error("invalid preparation ensemble: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Math(#[from] QmathError),
}

/// Qubit ensemble: per position k, states φ^k_{t,u} and the probability P^k_0
/// of preparing in basis 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparationSpec {
    #[serde(rename = "N")]
    pub n: usize,
    /// `states[k][t][u]`
    pub states: Vec<[[QubitState; 2]; 2]>,
    pub basis_probs: Vec<f64>,
    pub overlap_cap: f64,
    /// Every position carries the same states and probabilities.
    pub homogeneous: bool,
}

impl PreparationSpec {
    pub fn new(states: Vec<[[QubitState; 2]; 2]>, basis_probs: Vec<f64>, overlap_cap: f64) -> Result<Self, OracleError> {
        let n = states.len();
        if basis_probs.len() != n {
            return Err(OracleError::Dimension(format!("{n} state sets but {} basis probabilities", basis_probs.len())));
        }
        let homogeneous = states.windows(2).all(|w| w[0] == w[1]) && basis_probs.windows(2).all(|w| w[0] == w[1]);
        let spec = PreparationSpec {
            n,
            states,
            basis_probs,
            overlap_cap,
            homogeneous,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ideal BB84 states with uniform basis choice.
    pub fn ideal_bb84(n: usize) -> Self {
        Self::homogeneous(n, Angle(0.0), 0.0).expect("ideal ensemble is valid")
    }

    /// Worst case for a misalignment bound θ and basis bias β_PB: basis 0
    /// tilted by −θ and basis 1 by +θ on the Bloch sphere, P_0 = ½ + β_PB.
    pub fn homogeneous(n: usize, theta: Angle, beta_pb: f64) -> Result<Self, OracleError> {
        let o = qmath::overlap_o(theta)?;
        let th = theta.radians();
        let one = bb84_with_tilts(-th, th);
        Self::new(vec![one; n], vec![0.5 + beta_pb; n], o)
    }

    /// Independent per-position tilts in [−θ, θ] and basis probabilities in
    /// [½ − β_PB, ½ + β_PB].
    pub fn random(n: usize, theta: Angle, beta_pb: f64, rng: &mut impl Rng) -> Result<Self, OracleError> {
        let o = qmath::overlap_o(theta)?;
        let th = theta.radians();
        let mut states = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for _ in 0..n {
            let x0 = if th > 0.0 { rng.random_range(-th..=th) } else { 0.0 };
            let x1 = if th > 0.0 { rng.random_range(-th..=th) } else { 0.0 };
            states.push(bb84_with_tilts(x0, x1));
            let d = if beta_pb > 0.0 { rng.random_range(-beta_pb..=beta_pb) } else { 0.0 };
            probs.push(0.5 + d);
        }
        Self::new(states, probs, o)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(std::f64::consts::FRAC_1_SQRT_2 - 1e-15..=1.0).contains(&self.overlap_cap) {
            return Err(OracleError::InvalidSpec(format!("overlap cap {} outside [1/sqrt2, 1)", self.overlap_cap)));
        }
        for (k, set) in self.states.iter().enumerate() {
            for u in 0..2 {
                for t in 0..2 {
                    let s = &set[t][u];
                    if (s.a.norm_sqr() + s.b.norm_sqr() - 1.0).abs() > 1e-12 {
                        return Err(OracleError::InvalidSpec(format!("state ({t},{u}) at k={k} not normalised")));
                    }
                }
                if set[0][u].inner(&set[1][u]).norm() > 1e-12 {
                    return Err(OracleError::InvalidSpec(format!("basis {u} at k={k} not orthogonal")));
                }
            }
            for t in 0..2 {
                for t2 in 0..2 {
                    let ov = set[t][0].inner(&set[t2][1]).norm();
                    if ov > self.overlap_cap + 1e-12 {
                        return Err(OracleError::InvalidSpec(format!(
                            "cross-basis overlap {ov} at k={k} exceeds cap {}",
                            self.overlap_cap
                        )));
                    }
                }
            }
            let p = self.basis_probs[k];
            if !(0.0..=1.0).contains(&p) {
                return Err(OracleError::InvalidSpec(format!("P_0 = {p} at k={k}")));
            }
        }
        Ok(())
    }

    /// Largest |P^k_0 − ½| over positions.
    pub fn beta_pb(&self) -> f64 {
        self.basis_probs.iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max)
    }

    fn prob(&self, k: usize, s: bool) -> f64 {
        if s {
            1.0 - self.basis_probs[k]
        } else {
            self.basis_probs[k]
        }
    }

    pub fn is_real(&self) -> bool {
        self.states.iter().flatten().flatten().all(QubitState::is_real)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serialises");
        hex::encode(Sha256::digest(&json))
    }
}

fn bb84_with_tilts(tilt0: f64, tilt1: f64) -> [[QubitState; 2]; 2] {
    [
        [QubitState::bb84(false, false, tilt0), QubitState::bb84(false, true, tilt1)],
        [QubitState::bb84(true, false, tilt0), QubitState::bb84(true, true, tilt1)],
    ]
}

fn check_lengths(spec: &PreparationSpec, strings: &[&BitString]) -> Result<(), OracleError> {
    if spec.n == 0 {
        return Err(OracleError::Dimension("N = 0".into()));
    }
    if spec.n > MAX_DENSE_N {
        return Err(OracleError::Capability(format!("N = {} exceeds dense limit {MAX_DENSE_N}", spec.n)));
    }
    for s in strings {
        if s.len() != spec.n {
            return Err(OracleError::Dimension(format!("bit string of length {} for N = {}", s.len(), spec.n)));
        }
    }
    Ok(())
}

fn to_matrix(rho: &DensityMatrix2) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |i, j| rho.m[i][j])
}

/// Build D_{a,b} by accumulating over error patterns by Hamming weight.
pub fn build_dab(
    spec: &PreparationSpec,
    h: &BitString,
    a: &BitString,
    b: &BitString,
    gamma_err: f64,
) -> Result<DMatrix<C64>, OracleError> {
    check_lengths(spec, &[h, a, b])?;
    let cut = qmath::max_errors(spec.n as u64, gamma_err) as usize;
    // by_weight[j] = sum over error patterns of weight j on the positions so far
    let mut by_weight: Vec<DMatrix<C64>> = vec![DMatrix::from_element(1, 1, C64::new(1.0, 0.0))];
    for k in 0..spec.n {
        let hk = h.0[k];
        let pk_same = spec.prob(k, hk);
        let pk_other = spec.prob(k, !hk);
        let rho = |flip: bool| {
            let mut r = DensityMatrix2::zero();
            let s_a = &spec.states[k][(a.0[k] ^ flip) as usize][hk as usize];
            let s_b = &spec.states[k][(b.0[k] ^ flip) as usize][!hk as usize];
            r.add_scaled(pk_same, &s_a.projector());
            r.add_scaled(pk_other, &s_b.projector());
            to_matrix(&r)
        };
        let (rho_ok, rho_err) = (rho(false), rho(true));
        let top = by_weight.len().min(cut + 1);
        let mut next = Vec::with_capacity((top + 1).min(cut + 1));
        for j in 0..=top.min(cut) {
            let mut m: Option<DMatrix<C64>> = by_weight.get(j).map(|prev| prev.kronecker(&rho_ok));
            if j >= 1 {
                if let Some(prev) = by_weight.get(j - 1) {
                    let add = prev.kronecker(&rho_err);
                    m = Some(match m {
                        Some(x) => x + add,
                        None => add,
                    });
                }
            }
            if let Some(m) = m {
                next.push(m);
            }
        }
        by_weight = next;
    }
    let dim = 1usize << spec.n;
    Ok(by_weight
        .into_iter()
        .fold(DMatrix::zeros(dim, dim), |acc, m| acc + m))
}

/// Build D_{a,b} term by term from its defining double sum (N ≤ 6).
pub fn build_dab_literal(
    spec: &PreparationSpec,
    h: &BitString,
    a: &BitString,
    b: &BitString,
    gamma_err: f64,
) -> Result<DMatrix<C64>, OracleError> {
    check_lengths(spec, &[h, a, b])?;
    if spec.n > MAX_LITERAL_N {
        return Err(OracleError::Capability(format!("literal construction limited to N <= {MAX_LITERAL_N}")));
    }
    let n = spec.n;
    let dim = 1usize << n;
    let threshold = n as f64 * gamma_err;
    let mut d = DMatrix::<C64>::zeros(dim, dim);
    for s_idx in 0..dim as u64 {
        let s = BitString::from_index(s_idx, n);
        let p_s: f64 = (0..n).map(|k| spec.prob(k, s.0[k])).product();
        for r_idx in 0..dim as u64 {
            let r = BitString::from_index(r_idx, n);
            let dist: usize = (0..n)
                .filter(|&k| {
                    let reference = if s.0[k] == h.0[k] { a.0[k] } else { b.0[k] };
                    reference != r.0[k]
                })
                .count();
            if dist as f64 > threshold {
                continue;
            }
            let mut psi = vec![C64::new(1.0, 0.0)];
            for k in 0..n {
                let st = &spec.states[k][r.0[k] as usize][s.0[k] as usize];
                psi = psi.iter().flat_map(|&c| [c * st.a, c * st.b]).collect();
            }
            for i in 0..dim {
                for j in 0..dim {
                    d[(i, j)] += psi[i] * psi[j].conj() * p_s;
                }
            }
        }
    }
    Ok(d)
}

/// (smallest, largest) eigenvalue of the Hermitian part of `d`.
pub fn eigen_extremes(d: &DMatrix<C64>) -> (f64, f64) {
    let herm = (d + d.adjoint()) * C64::new(0.5, 0.0);
    let eig: Vec<f64> = if herm.iter().all(|c| c.im == 0.0) {
        herm.map(|c| c.re).symmetric_eigenvalues().iter().copied().collect()
    } else {
        herm.symmetric_eigenvalues().iter().copied().collect()
    };
    eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub spec_hash: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma_err: f64,
    pub norm_exact: f64,
    pub norm_closed: f64,
    pub bound: f64,
    pub argmax_a: BitString,
    pub argmax_b: BitString,
    /// Smallest eigenvalue seen over every built operator.
    #[serde(skip)]
    pub min_eigenvalue: f64,
}

/// Norm of every candidate (a,b) with h fixed, max taken deterministically.
pub fn max_norm_exact_with_h(spec: &PreparationSpec, gamma_err: f64, h: &BitString) -> Result<OracleResult, OracleError> {
    check_lengths(spec, &[h])?;
    let n = spec.n;
    let pairs: Vec<(BitString, BitString)> = if n <= MAX_FULL_ENUM_N {
        let dim = 1u64 << n;
        (0..dim * dim)
            .map(|i| (BitString::from_index(i / dim, n), BitString::from_index(i % dim, n)))
            .collect()
    } else if spec.homogeneous {
        // The norm depends on (a,b) only through the weight of a ⊕ b here.
        (0..=n)
            .map(|w| (BitString::zeros(n), BitString((0..n).map(|k| k < w).collect())))
            .collect()
    } else {
        return Err(OracleError::Capability(format!(
            "non-homogeneous ensembles are enumerated only up to N = {MAX_FULL_ENUM_N}"
        )));
    };
    let norms: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(a, b)| build_dab(spec, h, a, b, gamma_err).map(|d| eigen_extremes(&d)))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, &(_, hi)) in norms.iter().enumerate() {
        if hi > norms[best].1 {
            best = i;
        }
    }
    let min_eigenvalue = norms.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let beta = spec.beta_pb();
    let lambda = qmath::lambda_from_overlap(spec.overlap_cap, beta)?;
    Ok(OracleResult {
        spec_hash: spec.hash(),
        n,
        gamma_err,
        norm_exact: norms[best].1,
        norm_closed: max_norm_closed(n as u64, gamma_err, spec.overlap_cap, beta)?.value,
        bound: forging_norm_bound(n as u64, gamma_err, lambda).value,
        argmax_a: pairs[best].0.clone(),
        argmax_b: pairs[best].1.clone(),
        min_eigenvalue,
    })
}

pub fn max_norm_exact(spec: &PreparationSpec, gamma_err: f64) -> Result<OracleResult, OracleError> {
    max_norm_exact_with_h(spec, gamma_err, &BitString::zeros(spec.n))
}

/// (1−λ)^N at γ = 0, otherwise Σ_{n ≤ ⌊Nγ⌋} C(N,n)(1−λ)^{N−n}λ^n.
pub fn max_norm_closed(n: u64, gamma_err: f64, overlap: f64, beta_pb: f64) -> Result<LogProb, OracleError> {
    if !(gamma_err >= 0.0) {
        return Err(OracleError::Math(QmathError::Domain {
            name: "gamma_err",
            value: gamma_err,
            domain: "[0, inf)",
        }));
    }
    let lambda = qmath::lambda_from_overlap(overlap, beta_pb)?;
    if gamma_err == 0.0 {
        return Ok(LogProb::from_ln(n as f64 * (-lambda).ln_1p()));
    }
    Ok(qmath::binomial_tail_weighted(n, gamma_err, 1.0 - lambda)?)
}

/// Upper bound on the norm: (1−λ)^N at γ = 0, exp(−(Nλ/2)(1−γ/λ)²) for
/// 0 < γ < λ, and the trivial 1 beyond.
pub fn forging_norm_bound(n: u64, gamma_err: f64, lambda: f64) -> LogProb {
    if gamma_err == 0.0 {
        LogProb::from_ln(n as f64 * (-lambda).ln_1p())
    } else if gamma_err < lambda {
        let r = 1.0 - gamma_err / lambda;
        LogProb::from_ln(-(n as f64 * lambda / 2.0) * r * r)
    } else {
        LogProb::from_ln(0.0)
    }
}

// ---------------------------------------------------------------------------
// Largest eigenvalue of the biased, misaligned single-qubit average state.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum XiSearch {
    /// Evaluate at one tilt only.
    Fixed(f64),
    /// Corners ±2θ plus this many interior points.
    Grid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoCheck {
    pub mu_plus_exact: f64,
    pub mu_plus_bound: f64,
    /// Basis-0 probability, state-0 probability and tilt at the maximum.
    pub argmax: (f64, f64, f64),
}

/// Average state Σ_{t,u} P(u) R(t) |φ_{tu}⟩⟨φ_{tu}| with basis 0 computational
/// and basis 1 tilted by ξ from the x axis towards z.
pub fn average_state(p: f64, r: f64, xi: f64) -> DensityMatrix2 {
    let mut rho = DensityMatrix2::zero();
    let tilted = FRAC_PI_4 - xi / 2.0;
    let states = [
        (p * r, QubitState::real(0.0)),
        (p * (1.0 - r), QubitState::real(std::f64::consts::FRAC_PI_2)),
        ((1.0 - p) * r, QubitState::real(tilted)),
        ((1.0 - p) * (1.0 - r), QubitState::real(tilted + std::f64::consts::FRAC_PI_2)),
    ];
    for (w, s) in states {
        rho.add_scaled(w, &s.projector());
    }
    rho
}

fn axis(lo: f64, hi: f64, interior: usize) -> Vec<f64> {
    let mut v = vec![lo, hi];
    for i in 1..=interior {
        v.push(lo + (hi - lo) * i as f64 / (interior + 1) as f64);
    }
    v
}

pub fn rho_eigen_check(beta_ps: f64, beta_pb: f64, theta: Angle, xi: XiSearch) -> Result<RhoCheck, OracleError> {
    let bound = 0.5 * (1.0 + qmath::h_factor(beta_ps, beta_pb, theta)?);
    let th = theta.radians();
    let xis = match xi {
        XiSearch::Fixed(x) => {
            if x.abs() > 2.0 * th + 1e-15 {
                return Err(OracleError::InvalidSpec(format!("tilt {x} outside [-2 theta, 2 theta]")));
            }
            vec![x]
        }
        XiSearch::Grid(k) => axis(-2.0 * th, 2.0 * th, k),
    };
    let ps = axis(0.5 - beta_pb, 0.5 + beta_pb, 4);
    let rs = axis(0.5 - beta_ps, 0.5 + beta_ps, 4);
    let mut best = RhoCheck {
        mu_plus_exact: f64::NEG_INFINITY,
        mu_plus_bound: bound,
        argmax: (f64::NAN, f64::NAN, f64::NAN),
    };
    for &p in &ps {
        for &r in &rs {
            for &x in &xis {
                let mu = average_state(p, r, x).max_eigenvalue();
                if mu > best.mu_plus_exact {
                    best.mu_plus_exact = mu;
                    best.argmax = (p, r, x);
                }
            }
        }
    }
    Ok(best)
}
