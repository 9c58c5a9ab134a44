//! Security-bound evaluators (robustness, correctness, privacy,
//! unforgeability and their multi-round forms), constraint checking, and the
//! β_max feasibility sweep.

use crate::photonics::DarkCounts;
use crate::qmath::{self, Angle, LogProb, QmathError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NOT_GUARANTEED: &str = "UNFORGEABILITY NOT GUARANTEED";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("constraint violated: {}", format_violations(.0))]
    Precondition(Vec<ConstraintFlag>),
    #[error("invalid parameters: {0}")]
    Domain(String),
    #[error(transparent)]
    Math(#[from] QmathError),
}

fn format_violations(v: &[ConstraintFlag]) -> String {
    v.iter()
        .map(|c| format!("{} (margin {:.6e})", c.name, c.margin))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Protocol and security parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "M", default = "one")]
    pub m: u32,
    pub p_det: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub gamma_det: f64,
    pub gamma_err: f64,
    #[serde(default)]
    pub beta_pb: f64,
    #[serde(default)]
    pub beta_ps: f64,
    #[serde(default)]
    pub beta_e: f64,
    #[serde(default)]
    pub theta_deg: f64,
    #[serde(default)]
    pub p_noqub: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one_f")]
    pub eta: f64,
    #[serde(default)]
    pub dark: DarkCounts,
}

fn one() -> u32 {
    1
}

fn one_f() -> f64 {
    1.0
}

impl SchemeParams {
    pub fn theta(&self) -> Angle {
        Angle::from_degrees(self.theta_deg)
    }

    /// Noise-free, lossless parameters for the ideal schemes.
    pub fn ideal(n: u64) -> Self {
        SchemeParams {
            n,
            m: 1,
            p_det: 1.0,
            e: 0.0,
            gamma_det: 0.0,
            gamma_err: 0.0,
            beta_pb: 0.0,
            beta_ps: 0.0,
            beta_e: 0.0,
            theta_deg: 0.0,
            p_noqub: 0.0,
            mu: 0.0,
            eta: 1.0,
            dark: DarkCounts::default(),
        }
    }

    /// Domain checks on every field (boundaries of the open intervals are allowed).
    pub fn validate(&self) -> Result<(), BoundsError> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, what: String| {
            if !ok {
                bad.push(what);
            }
        };
        need(self.n >= 1, format!("N = {} must be >= 1", self.n));
        need(self.m >= 1, format!("M = {} must be >= 1", self.m));
        need(self.p_det > 0.0 && self.p_det <= 1.0, format!("P_det = {} not in (0,1]", self.p_det));
        need((0.0..1.0).contains(&self.e), format!("E = {} not in [0,1)", self.e));
        need((0.0..1.0).contains(&self.gamma_det), format!("gamma_det = {} not in [0,1)", self.gamma_det));
        need((0.0..1.0).contains(&self.gamma_err), format!("gamma_err = {} not in [0,1)", self.gamma_err));
        for (name, b) in [("beta_PB", self.beta_pb), ("beta_PS", self.beta_ps), ("beta_E", self.beta_e)] {
            need((0.0..0.5).contains(&b), format!("{name} = {b} not in [0,1/2)"));
        }
        need((0.0..45.0).contains(&self.theta_deg), format!("theta = {} deg not in [0,45)", self.theta_deg));
        need((0.0..1.0).contains(&self.p_noqub), format!("P_noqub = {} not in [0,1)", self.p_noqub));
        need(self.mu >= 0.0 && self.mu.is_finite(), format!("mu = {} must be >= 0", self.mu));
        need(self.eta > 0.0 && self.eta <= 1.0, format!("eta = {} not in (0,1]", self.eta));
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BoundsError::Domain(bad.join("; ")))
        }
    }

    /// Notes on parameters sitting at the closed end of an open interval.
    pub fn boundary_flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.theta_deg == 0.0 {
            out.push("theta = 0 (ideal alignment, boundary of (0, pi/4))".to_string());
        }
        for (name, b) in [("beta_PB", self.beta_pb), ("beta_PS", self.beta_ps), ("beta_E", self.beta_e)] {
            if b == 0.0 {
                out.push(format!("{name} = 0 (boundary)"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeVariables {
    pub nu_cor: f64,
    pub nu_unf: f64,
}

/// A named inequality with its slack (positive when satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFlag {
    pub name: String,
    pub ok: bool,
    pub margin: f64,
}

fn flag(name: &str, lhs: f64, rhs: f64) -> ConstraintFlag {
    // lhs < rhs
    ConstraintFlag {
        name: name.to_string(),
        ok: lhs < rhs,
        margin: rhs - lhs,
    }
}

fn require(flags: Vec<ConstraintFlag>) -> Result<(), BoundsError> {
    let bad: Vec<_> = flags.into_iter().filter(|f| !f.ok).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(BoundsError::Precondition(bad))
    }
}

pub fn robustness_constraints(p: &SchemeParams) -> Vec<ConstraintFlag> {
    vec![
        flag("0 < gamma_det", 0.0, p.gamma_det),
        flag("gamma_det < P_det", p.gamma_det, p.p_det),
    ]
}

pub fn correctness_constraints(p: &SchemeParams, v: &FreeVariables) -> Vec<ConstraintFlag> {
    let cap = p.p_det * (1.0 - 2.0 * p.beta_pb) / 2.0;
    vec![
        flag("0 < gamma_err/2", 0.0, p.gamma_err / 2.0),
        flag("gamma_err/2 < E", p.gamma_err / 2.0, p.e),
        flag("E < gamma_err", p.e, p.gamma_err),
        flag("0 < nu_cor", 0.0, v.nu_cor),
        flag("nu_cor < P_det(1-2 beta_PB)/2", v.nu_cor, cap),
    ]
}

pub fn unforgeability_constraints(p: &SchemeParams, v: &FreeVariables) -> Result<Vec<ConstraintFlag>, BoundsError> {
    let lam = qmath::lambda_bound(p.theta(), p.beta_pb)?;
    let mut out = vec![
        flag("0 < gamma_err", 0.0, p.gamma_err),
        flag("gamma_err < lambda", p.gamma_err, lam),
        flag("P_noqub < nu_unf", p.p_noqub, v.nu_unf),
        flag("nu_unf < 2 P_noqub", v.nu_unf, 2.0 * p.p_noqub),
        flag("nu_unf < gamma_det(1 - gamma_err/lambda)", v.nu_unf, p.gamma_det * (1.0 - p.gamma_err / lam)),
    ];
    if v.nu_unf < p.gamma_det && lam > 0.0 {
        let delta = delta(p, v);
        let cap = 0.5 * ((lam / 2.0 * (1.0 - delta / lam).powi(2)).exp() - 1.0);
        out.push(flag("beta_PS < (exp((lambda/2)(1-delta/lambda)^2) - 1)/2", p.beta_ps, cap));
    } else {
        out.push(flag("nu_unf < gamma_det", v.nu_unf, p.gamma_det));
    }
    Ok(out)
}

/// ε_rob = exp(−(P_det N/2)(1 − γ_det/P_det)²).
pub fn epsilon_rob(p: &SchemeParams) -> Result<LogProb, BoundsError> {
    require(robustness_constraints(p))?;
    let r = 1.0 - p.gamma_det / p.p_det;
    Ok(LogProb::from_ln(-(p.p_det * p.n as f64 / 2.0) * r * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessTerms {
    /// Exponent of the detection-count term.
    pub t1: f64,
    /// Exponent of the error-count term.
    pub t2: f64,
    pub total: LogProb,
}

pub fn correctness_exponents(p: &SchemeParams, nu_cor: f64) -> (f64, f64) {
    let n = p.n as f64;
    let pd = p.p_det * (1.0 - 2.0 * p.beta_pb);
    let r1 = 1.0 - 2.0 * nu_cor / pd;
    let t1 = -(pd * n / 4.0) * r1 * r1;
    let r2 = p.gamma_err / p.e - 1.0;
    let t2 = -(p.e * nu_cor * n / 3.0) * r2 * r2;
    (t1, t2)
}

pub fn epsilon_cor(p: &SchemeParams, v: &FreeVariables) -> Result<CorrectnessTerms, BoundsError> {
    require(correctness_constraints(p, v))?;
    let (t1, t2) = correctness_exponents(p, v.nu_cor);
    Ok(CorrectnessTerms {
        t1,
        t2,
        total: LogProb::from_ln(qmath::log_add_exp(t1, t2)),
    })
}

/// ε^M_priv = ((1+2β_E)^M − 1)/2^M; exactly β_E when M = 1.
pub fn epsilon_priv(beta_e: f64, m: u32) -> Result<f64, BoundsError> {
    if m == 0 {
        return Err(BoundsError::Domain("M must be >= 1".into()));
    }
    if !(0.0..0.5).contains(&beta_e) {
        return Err(BoundsError::Domain(format!("beta_E = {beta_e} not in [0,1/2)")));
    }
    if m == 1 {
        return Ok(beta_e);
    }
    Ok((m as f64 * (2.0 * beta_e).ln_1p()).exp_m1() / 2f64.powi(m as i32))
}

fn delta(p: &SchemeParams, v: &FreeVariables) -> f64 {
    p.gamma_det * p.gamma_err / (p.gamma_det - v.nu_unf)
}

/// The per-pulse exponent f of the second unforgeability term.
pub fn f_value(gamma_det: f64, nu_unf: f64, lambda: f64, delta: f64, beta_ps: f64, h: f64) -> f64 {
    let g = gamma_det - nu_unf;
    g * ((lambda / 2.0) * (1.0 - delta / lambda).powi(2) - (2.0 * beta_ps).ln_1p()) - (1.0 - g) * h.ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guarantee {
    Guaranteed,
    NotGuaranteed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnforgeabilityTerms {
    pub lambda: f64,
    pub h: f64,
    pub delta: f64,
    pub f: f64,
    /// Exponent of the multi-photon term.
    pub t1: f64,
    /// Exponent −N·f of the qubit term.
    pub t2: f64,
    pub guarantee: Guarantee,
    /// Absent when f ≤ 0.
    pub eps: Option<LogProb>,
    pub status: String,
}

pub fn epsilon_unf(p: &SchemeParams, v: &FreeVariables) -> Result<UnforgeabilityTerms, BoundsError> {
    require(unforgeability_constraints(p, v)?)?;
    let n = p.n as f64;
    let lambda = qmath::lambda_bound(p.theta(), p.beta_pb)?;
    let h = qmath::h_factor(p.beta_ps, p.beta_pb, p.theta())?;
    let delta = delta(p, v);
    let f = f_value(p.gamma_det, v.nu_unf, lambda, delta, p.beta_ps, h);
    let r = v.nu_unf / p.p_noqub - 1.0;
    let t1 = -(p.p_noqub * n / 3.0) * r * r;
    let t2 = -n * f;
    let (guarantee, eps, status) = if f > 0.0 {
        (
            Guarantee::Guaranteed,
            Some(LogProb::from_ln(qmath::log_add_exp(t1, t2))),
            "guaranteed".to_string(),
        )
    } else {
        (Guarantee::NotGuaranteed, None, NOT_GUARANTEED.to_string())
    };
    Ok(UnforgeabilityTerms {
        lambda,
        h,
        delta,
        f,
        t1,
        t2,
        guarantee,
        eps,
        status,
    })
}

/// An M-round quantity in exact form and its union-bound form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compounded {
    pub exact: LogProb,
    pub linear: LogProb,
}

/// 1 − (1 − ε)^M and M·ε, both in log space.
pub fn compound(eps: LogProb, m: u32) -> Compounded {
    let mf = m as f64;
    let linear = LogProb::from_ln(mf.ln() + eps.ln);
    let exact = if m == 1 {
        eps
    } else if eps.ln < -700.0 {
        // (1−ε)^M = 1 − Mε + O(ε²); the correction is below double precision.
        linear
    } else {
        LogProb::from_ln((-(mf * (-eps.value).ln_1p()).exp_m1()).ln())
    };
    Compounded { exact, linear }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRound {
    #[serde(rename = "M")]
    pub m: u32,
    #[serde(rename = "C")]
    pub c: u64,
    pub eps_rob: Compounded,
    pub eps_cor: Compounded,
    pub eps_priv: f64,
    /// C·ε_unf; absent when the single-round bound is not guaranteed.
    pub eps_unf: Option<LogProb>,
}

pub fn epsilon_multi(p: &SchemeParams, v: &FreeVariables, c: i64) -> Result<MultiRound, BoundsError> {
    if c < 0 {
        return Err(BoundsError::Domain(format!("C = {c} must be >= 0")));
    }
    if p.m == 0 {
        return Err(BoundsError::Domain("M must be >= 1".into()));
    }
    let rob = epsilon_rob(p)?;
    let cor = epsilon_cor(p, v)?;
    let unf = epsilon_unf(p, v)?;
    let eps_unf = unf.eps.map(|e| {
        if c == 0 {
            LogProb::zero()
        } else {
            LogProb::from_ln((c as f64).ln() + e.ln)
        }
    });
    Ok(MultiRound {
        m: p.m,
        c: c as u64,
        eps_rob: compound(rob, p.m),
        eps_cor: compound(cor.total, p.m),
        eps_priv: epsilon_priv(p.beta_e, p.m)?,
        eps_unf,
    })
}

/// Everything the bound calculator can say about one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub eps_rob: Option<LogProb>,
    pub eps_cor: Option<CorrectnessTerms>,
    pub eps_priv: Option<f64>,
    pub eps_unf: Option<UnforgeabilityTerms>,
    pub multi: Option<MultiRound>,
    pub unforgeability: String,
    pub constraints: Vec<ConstraintFlag>,
    pub boundary_flags: Vec<String>,
}

impl BoundReport {
    pub fn violations(&self) -> Vec<&ConstraintFlag> {
        self.constraints.iter().filter(|c| !c.ok).collect()
    }
}

/// Evaluate every section independently; a violated section is left empty
/// and its failing inequalities are listed in `constraints`.
pub fn evaluate_all(p: &SchemeParams, v: &FreeVariables, c: Option<u64>) -> Result<BoundReport, BoundsError> {
    p.validate()?;
    let mut constraints = robustness_constraints(p);
    constraints.extend(correctness_constraints(p, v));
    constraints.extend(unforgeability_constraints(p, v)?);
    let eps_unf = epsilon_unf(p, v).ok();
    let unforgeability = match &eps_unf {
        Some(u) => u.status.clone(),
        None => format!("{NOT_GUARANTEED} (constraints violated)"),
    };
    Ok(BoundReport {
        eps_rob: epsilon_rob(p).ok(),
        eps_cor: epsilon_cor(p, v).ok(),
        eps_priv: epsilon_priv(p.beta_e, p.m).ok(),
        eps_unf,
        multi: c.and_then(|c| epsilon_multi(p, v, c as i64).ok()),
        unforgeability,
        constraints,
        boundary_flags: p.boundary_flags(),
    })
}

// ---------------------------------------------------------------------------
// β_max sweep

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Starting inner grid size per axis.
    pub grid: usize,
    /// Largest inner grid size tried.
    pub max_grid: usize,
    /// Zoom levels per inner search.
    pub refine_levels: usize,
    pub bisect_iters: usize,
    /// Upper end of the β bracket.
    pub beta_hi: f64,
    /// Stop doubling the grid once β_max moves less than this (relative).
    pub tolerance: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            grid: 8,
            max_grid: 64,
            refine_levels: 12,
            bisect_iters: 48,
            beta_hi: 0.05,
            tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta_deg: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub beta_max: f64,
    pub gamma_err_opt: f64,
    pub nu_cor_opt: f64,
    pub nu_unf: f64,
    pub cor_t1_exp: f64,
    pub cor_t2_exp: f64,
    pub unf_t1_exp: f64,
    pub unf_t2_exp: f64,
    pub note: String,
}

/// Smallest ν_unf making the multi-photon term equal `half_target`.
pub fn nu_unf_for_target(p_noqub: f64, n: u64, half_target: f64) -> Result<f64, BoundsError> {
    if !(p_noqub > 0.0) {
        return Err(BoundsError::Domain("P_noqub must be > 0".into()));
    }
    let l = -half_target.ln();
    let nu = p_noqub * (1.0 + (3.0 * l / (p_noqub * n as f64)).sqrt());
    if nu >= 2.0 * p_noqub {
        return Err(BoundsError::Domain(format!(
            "multi-photon term cannot reach {half_target:e} with nu_unf < 2 P_noqub"
        )));
    }
    Ok(nu)
}

struct Point {
    score: f64,
    gamma: f64,
    nu: f64,
}

struct SweepCase<'a> {
    fixed: &'a SchemeParams,
    theta: Angle,
    e: f64,
    nu_unf: f64,
    l: f64,
}

impl SweepCase<'_> {
    fn params(&self, beta: f64, gamma: f64) -> SchemeParams {
        SchemeParams {
            e: self.e,
            gamma_err: gamma,
            beta_pb: beta,
            beta_ps: beta,
            theta_deg: self.theta.degrees(),
            ..self.fixed.clone()
        }
    }

    /// γ_err window where every γ-only constraint holds, or None.
    fn gamma_window(&self, beta: f64) -> Option<(f64, f64, f64)> {
        let lam = qmath::lambda_bound(self.theta, beta).ok()?;
        let hi = (2.0 * self.e).min(lam).min(lam * (1.0 - self.nu_unf / self.fixed.gamma_det));
        (hi > self.e).then_some((self.e, hi, lam))
    }

    fn nu_cap(&self, beta: f64) -> f64 {
        self.fixed.p_det * (1.0 - 2.0 * beta) / 2.0
    }

    /// min(slack of each exponent)/L − 1; ≥ 0 means every term ≤ target/2.
    fn score(&self, beta: f64, lam: f64, h: f64, gamma: f64, nu: f64) -> f64 {
        let p = self.params(beta, gamma);
        let (t1, t2) = correctness_exponents(&p, nu);
        let v = FreeVariables { nu_cor: nu, nu_unf: self.nu_unf };
        let f = f_value(p.gamma_det, self.nu_unf, lam, delta(&p, &v), beta, h);
        let u2 = p.n as f64 * f;
        (-t1).min(-t2).min(u2) / self.l - 1.0
    }

    fn best(&self, beta: f64, grid: usize, levels: usize) -> Option<Point> {
        let (mut g_lo, mut g_hi, lam) = self.gamma_window(beta)?;
        let h = qmath::h_factor(beta, beta, self.theta).ok()?;
        let (mut n_lo, mut n_hi) = (0.0, self.nu_cap(beta));
        let (g_min, g_max, n_min, n_max) = (g_lo, g_hi, n_lo, n_hi);
        let mut best = Point { score: f64::NEG_INFINITY, gamma: f64::NAN, nu: f64::NAN };
        for _ in 0..levels {
            let gw = (g_hi - g_lo) / grid as f64;
            let nw = (n_hi - n_lo) / grid as f64;
            for i in 0..grid {
                let gamma = g_lo + (i as f64 + 0.5) * gw;
                for j in 0..grid {
                    let nu = n_lo + (j as f64 + 0.5) * nw;
                    let s = self.score(beta, lam, h, gamma, nu);
                    if s > best.score {
                        best = Point { score: s, gamma, nu };
                    }
                }
            }
            g_lo = (best.gamma - gw).max(g_min);
            g_hi = (best.gamma + gw).min(g_max);
            n_lo = (best.nu - nw).max(n_min);
            n_hi = (best.nu + nw).min(n_max);
        }
        Some(best)
    }

    fn feasible(&self, beta: f64, grid: usize, levels: usize) -> Option<Point> {
        self.best(beta, grid, levels).filter(|p| p.score >= 0.0)
    }

    fn beta_max(&self, s: &SweepSettings, grid: usize) -> (f64, Option<Point>, String) {
        let Some(at_zero) = self.feasible(0.0, grid, s.refine_levels) else {
            return (0.0, None, "infeasible at beta = 0".into());
        };
        if let Some(p) = self.feasible(s.beta_hi, grid, s.refine_levels) {
            return (s.beta_hi, Some(p), "feasible at bracket top".into());
        }
        let (mut lo, mut hi, mut best) = (0.0, s.beta_hi, at_zero);
        for _ in 0..s.bisect_iters {
            let mid = 0.5 * (lo + hi);
            match self.feasible(mid, grid, s.refine_levels) {
                Some(p) => {
                    lo = mid;
                    best = p;
                }
                None => hi = mid,
            }
        }
        (lo, Some(best), String::new())
    }
}

/// For each (θ, E), the largest β = β_PS = β_PB for which some (γ_err, ν_cor)
/// keeps both correctness terms and the qubit unforgeability term below
/// target/2, with ν_unf fixed so the multi-photon term equals target/2
/// (unless `nu_unf_override` is given).
pub fn sweep_beta_max(
    fixed: &SchemeParams,
    theta_grid: &[Angle],
    e_list: &[f64],
    target: f64,
    nu_unf_override: Option<f64>,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>, BoundsError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(BoundsError::Domain(format!("target = {target} not in (0,1)")));
    }
    if theta_grid.is_empty() || e_list.is_empty() {
        return Err(BoundsError::Domain("empty sweep grid".into()));
    }
    if !(fixed.gamma_det > 0.0 && fixed.gamma_det < fixed.p_det) {
        return Err(BoundsError::Precondition(robustness_constraints(fixed).into_iter().filter(|f| !f.ok).collect()));
    }
    let nu_unf = match nu_unf_override {
        Some(v) => v,
        None => nu_unf_for_target(fixed.p_noqub, fixed.n, target / 2.0)?,
    };
    let l = -(target / 2.0).ln();
    let cells: Vec<(Angle, f64)> = theta_grid
        .iter()
        .flat_map(|&th| e_list.iter().map(move |&e| (th, e)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(theta, e)| {
            let case = SweepCase { fixed, theta, e, nu_unf, l };
            let mut grid = settings.grid;
            let mut prev = case.beta_max(settings, grid);
            while grid * 2 <= settings.max_grid {
                grid *= 2;
                let next = case.beta_max(settings, grid);
                let change = (next.0 - prev.0).abs() / next.0.max(f64::MIN_POSITIVE);
                prev = next;
                if change < settings.tolerance {
                    break;
                }
            }
            let (beta, point, note) = prev;
            let unf_t1 = {
                let r = nu_unf / fixed.p_noqub - 1.0;
                -(fixed.p_noqub * fixed.n as f64 / 3.0) * r * r
            };
            match point {
                None => SweepRow {
                    theta_deg: theta.degrees(),
                    e,
                    beta_max: 0.0,
                    gamma_err_opt: f64::NAN,
                    nu_cor_opt: f64::NAN,
                    nu_unf,
                    cor_t1_exp: f64::NAN,
                    cor_t2_exp: f64::NAN,
                    unf_t1_exp: unf_t1,
                    unf_t2_exp: f64::NAN,
                    note,
                },
                Some(pt) => {
                    let p = case.params(beta, pt.gamma);
                    let (t1, t2) = correctness_exponents(&p, pt.nu);
                    let lam = qmath::lambda_bound(theta, beta).unwrap_or(f64::NAN);
                    let h = qmath::h_factor(beta, beta, theta).unwrap_or(f64::NAN);
                    let v = FreeVariables { nu_cor: pt.nu, nu_unf };
                    let f = f_value(p.gamma_det, nu_unf, lam, delta(&p, &v), beta, h);
                    SweepRow {
                        theta_deg: theta.degrees(),
                        e,
                        beta_max: beta,
                        gamma_err_opt: pt.gamma,
                        nu_cor_opt: pt.nu,
                        nu_unf,
                        cor_t1_exp: t1,
                        cor_t2_exp: t2,
                        unf_t1_exp: unf_t1,
                        unf_t2_exp: -(p.n as f64) * f,
                        note,
                    }
                }
            }
        })
        .collect();
    Ok(rows)
}

/// Fixed parameters of the reported experiment used for the β_max curves.
pub fn experiment_fixed() -> SchemeParams {
    SchemeParams {
        n: 40_000_000,
        m: 1,
        p_det: 0.019,
        e: 0.058,
        gamma_det: 0.018,
        gamma_err: 0.062,
        beta_pb: 0.0,
        beta_ps: 0.0,
        beta_e: 0.0,
        theta_deg: 0.0,
        p_noqub: 3.8e-3,
        mu: 0.09,
        eta: 0.21,
        dark: DarkCounts::default(),
    }
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SchemeParams {
        SchemeParams {
            beta_pb: 2.4e-3,
            beta_ps: 3.6e-3,
            theta_deg: 10.0,
            ..experiment_fixed()
        }
    }

    #[test]
    fn robustness_examples() {
        let r = epsilon_rob(&base()).unwrap();
        assert!((r.ln + 1052.63).abs() < 0.01, "{}", r.ln);
        let p = SchemeParams { p_det: 0.02, gamma_det: 0.01, n: 1000, ..base() };
        assert!((epsilon_rob(&p).unwrap().ln + 2.5).abs() < 1e-12);
        let p = SchemeParams { gamma_det: 1e-15, ..base() };
        assert!((epsilon_rob(&p).unwrap().ln + 0.019 * 4e7 / 2.0).abs() < 1e-6);
        let bad = SchemeParams { gamma_det: 0.02, ..base() };
        match epsilon_rob(&bad) {
            Err(BoundsError::Precondition(v)) => assert_eq!(v[0].name, "gamma_det < P_det"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn correctness_examples() {
        let p = SchemeParams { beta_pb: 0.0, e: 0.03, gamma_err: 0.05, ..base() };
        let c = epsilon_cor(&p, &FreeVariables { nu_cor: 0.004, nu_unf: 0.0 }).unwrap();
        assert!((c.t1 + 63684.21).abs() < 0.01, "{}", c.t1);
        assert!((c.t2 + 711.111).abs() < 1e-2, "{}", c.t2);
        assert!((c.total.ln - c.t2).abs() < 1e-9);
        let tiny = epsilon_cor(&p, &FreeVariables { nu_cor: 1e-300, nu_unf: 0.0 }).unwrap();
        assert!(tiny.t2.abs() < 1e-290);
        let at_edge = SchemeParams { e: 0.05, gamma_err: 0.05, ..p.clone() };
        let v = FreeVariables { nu_cor: 0.004, nu_unf: 0.0 };
        assert!(epsilon_cor(&at_edge, &v).is_err());
        assert_eq!(correctness_exponents(&at_edge, 0.004).1, 0.0);
        let low = SchemeParams { e: 0.02, gamma_err: 0.05, ..p };
        match epsilon_cor(&low, &v) {
            Err(BoundsError::Precondition(v)) => assert_eq!(v[0].name, "gamma_err/2 < E"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn privacy_examples() {
        assert_eq!(epsilon_priv(0.01, 1).unwrap(), 0.01);
        assert_eq!(epsilon_priv(0.0, 5).unwrap(), 0.0);
        assert!((epsilon_priv(0.01, 2).unwrap() - 0.0101).abs() < 1e-15);
        assert!(epsilon_priv(0.1, 0).is_err());
    }

    #[test]
    fn unforgeability_limits() {
        let p = SchemeParams {
            beta_pb: 0.0,
            beta_ps: 0.0,
            theta_deg: 0.0,
            gamma_err: 1e-12,
            p_noqub: 1e-13,
            ..base()
        };
        let v = FreeVariables { nu_cor: 0.001, nu_unf: 1.5e-13 };
        let u = epsilon_unf(&p, &v).unwrap();
        let lam = qmath::lambda_bound(Angle(0.0), 0.0).unwrap();
        assert!((u.f - 0.018 * lam / 2.0).abs() < 1e-9);
        let d = delta(&SchemeParams { gamma_err: 0.04, ..p }, &FreeVariables { nu_cor: 0.0, nu_unf: 0.0 });
        assert!((d - 0.04).abs() < 1e-15);
    }

    #[test]
    fn measured_experiment_is_not_guaranteed() {
        let v = FreeVariables { nu_cor: 0.009, nu_unf: 3.9e-3 };
        let r = evaluate_all(&base(), &v, Some(1)).unwrap();
        assert!(r.eps_rob.is_some());
        assert!(r.eps_cor.is_some());
        assert!(r.eps_unf.is_none());
        assert!(r.unforgeability.starts_with(NOT_GUARANTEED));
        assert!(r.violations().iter().any(|c| c.name.starts_with("beta_PS <")));
    }

    #[test]
    fn nonpositive_f_reports_no_guarantee() {
        // All constraints hold, but the bias penalty outweighs the qubit term.
        let p = SchemeParams { beta_ps: 1e-4, beta_pb: 1e-4, theta_deg: 10.0, gamma_err: 0.06, ..base() };
        let v = FreeVariables { nu_cor: 0.009, nu_unf: 3.9e-3 };
        let flags = unforgeability_constraints(&p, &v).unwrap();
        assert!(flags.iter().all(|f| f.ok), "{flags:?}");
        let u = epsilon_unf(&p, &v).unwrap();
        assert!(u.f <= 0.0);
        assert_eq!(u.guarantee, Guarantee::NotGuaranteed);
        assert!(u.eps.is_none());
        assert_eq!(u.status, NOT_GUARANTEED);
    }

    #[test]
    fn multi_round_examples() {
        let c = compound(LogProb::from_value(1e-12), 5);
        assert!((c.exact.value - 5e-12).abs() < 1e-20);
        assert!((c.linear.value - 5e-12).abs() < 1e-24);
        assert!(c.exact.value <= c.linear.value);
        let p = SchemeParams { beta_ps: 1e-6, beta_pb: 1e-6, gamma_err: 0.062, ..base() };
        let v = FreeVariables { nu_cor: 0.009, nu_unf: 3.9e-3 };
        let single_unf = epsilon_unf(&p, &v).unwrap().eps.unwrap();
        let m = epsilon_multi(&p, &v, 1).unwrap();
        assert_eq!(m.eps_unf.unwrap(), LogProb::from_ln(single_unf.ln));
        assert_eq!(m.eps_rob.exact, epsilon_rob(&p).unwrap());
        assert_eq!(m.eps_cor.exact, epsilon_cor(&p, &v).unwrap().total);
        let m6 = epsilon_multi(&p, &v, 6).unwrap();
        assert!((m6.eps_unf.unwrap().ln - (6f64.ln() + single_unf.ln)).abs() < 1e-12);
        assert!(epsilon_multi(&p, &v, -1).is_err());
    }

    #[test]
    fn nu_unf_heuristic() {
        let nu = nu_unf_for_target(3.8e-3, 40_000_000, 5e-10).unwrap();
        assert!((nu - 3.878e-3).abs() < 1e-6, "{nu}");
        let r = nu / 3.8e-3 - 1.0;
        assert!(((3.8e-3 * 4e7 / 3.0) * r * r - (-(5e-10f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn sweep_small_grid_is_deterministic() {
        let thetas = [Angle::from_degrees(0.0), Angle::from_degrees(6.0)];
        let es = [0.03];
        let s = SweepSettings { max_grid: 16, ..Default::default() };
        let a = sweep_beta_max(&experiment_fixed(), &thetas, &es, 1e-9, None, &s).unwrap();
        let b = sweep_beta_max(&experiment_fixed(), &thetas, &es, 1e-9, None, &s).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a[0].beta_max >= a[1].beta_max);
        assert!(a[0].beta_max > 0.0);
    }

    #[test]
    fn sweep_reports_infeasible_cells() {
        // E above λ leaves no γ_err window.
        let rows = sweep_beta_max(
            &experiment_fixed(),
            &[Angle::from_degrees(10.0)],
            &[0.2],
            1e-9,
            None,
            &SweepSettings { max_grid: 8, ..Default::default() },
        )
        .unwrap();
        assert_eq!(rows[0].beta_max, 0.0);
        assert!(!rows[0].note.is_empty());
    }
}
