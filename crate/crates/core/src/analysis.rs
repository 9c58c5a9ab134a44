//! Parameter estimation from pulse records or aggregated counts.

use crate::photonics::PulseRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("count table inconsistent: {0}")]
    Inconsistent(String),
}

/// Counts indexed `[t][u]` (state bit, basis bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountTable {
    /// Prepared-and-reported pulses per (t,u).
    pub n_tu: [[u64; 2]; 2],
    /// Reported pulses measured in the preparation basis.
    pub n_same: [[u64; 2]; 2],
    /// Of those, how many gave the wrong outcome.
    pub n_err: [[u64; 2]; 2],
    /// Total reported pulses.
    pub n: u64,
    /// Total transmitted pulses.
    #[serde(rename = "N")]
    pub n_total: u64,
}

impl CountTable {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let sum: u64 = self.n_tu.iter().flatten().sum();
        if sum != self.n {
            return Err(AnalysisError::Inconsistent(format!("sum of n_tu = {sum} but n = {}", self.n)));
        }
        if self.n > self.n_total {
            return Err(AnalysisError::Inconsistent(format!("n = {} exceeds N = {}", self.n, self.n_total)));
        }
        for t in 0..2 {
            for u in 0..2 {
                if self.n_err[t][u] > self.n_same[t][u] || self.n_same[t][u] > self.n_tu[t][u] {
                    return Err(AnalysisError::Inconsistent(format!("cell ({t},{u}) has n_err > n_same or n_same > n_tu")));
                }
            }
        }
        Ok(())
    }

    /// Aggregate records; with `all_pulses` the n_tu cells count every
    /// transmitted pulse instead of only the reported ones.
    pub fn from_records(records: &[PulseRecord], all_pulses: bool) -> CountTable {
        let mut c = CountTable {
            n_total: records.len() as u64,
            ..Default::default()
        };
        for r in records {
            let (t, u) = (r.t as usize, r.u as usize);
            if r.m {
                c.n += 1;
                if r.w == r.u {
                    c.n_same[t][u] += 1;
                    if r.x != Some(r.t) {
                        c.n_err[t][u] += 1;
                    }
                }
            }
            if r.m || all_pulses {
                c.n_tu[t][u] += 1;
            }
        }
        if all_pulses {
            c.n = c.n_total;
        }
        c
    }
}

/// Either a number or the reason it could not be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Estimate {
    Value(f64),
    Insufficient(InsufficientData),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsufficientData {
    InsufficientData,
}

impl Estimate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Estimate::Value(v) => Some(*v),
            Estimate::Insufficient(_) => None,
        }
    }

    fn ratio(num: u64, den: u64) -> Estimate {
        if den == 0 {
            Estimate::Insufficient(InsufficientData::InsufficientData)
        } else {
            Estimate::Value(num as f64 / den as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub p_det: Estimate,
    /// Error rate per (t,u).
    pub e_tu: [[Estimate; 2]; 2],
    pub e: Estimate,
    pub beta_pb: Estimate,
    pub beta_ps: Estimate,
}

pub fn estimate_stats(c: &CountTable) -> Stats {
    let e_tu = [0, 1].map(|t| [0, 1].map(|u| Estimate::ratio(c.n_err[t][u], c.n_same[t][u])));
    let e = e_tu
        .iter()
        .flatten()
        .try_fold(f64::NEG_INFINITY, |acc, v| v.value().map(|x| acc.max(x)))
        .map(Estimate::Value)
        .unwrap_or(Estimate::Insufficient(InsufficientData::InsufficientData));
    let basis0 = c.n_tu[0][0] + c.n_tu[1][0];
    let basis1 = c.n_tu[0][1] + c.n_tu[1][1];
    let beta_pb = match Estimate::ratio(basis0, c.n) {
        Estimate::Value(v) => Estimate::Value((v - 0.5).abs()),
        other => other,
    };
    let beta_ps = match (Estimate::ratio(c.n_tu[0][0], basis0), Estimate::ratio(c.n_tu[0][1], basis1)) {
        (Estimate::Value(a), Estimate::Value(b)) => Estimate::Value((a - 0.5).abs().max((b - 0.5).abs())),
        _ => Estimate::Insufficient(InsufficientData::InsufficientData),
    };
    Stats {
        p_det: Estimate::ratio(c.n, c.n_total),
        e_tu,
        e,
        beta_pb,
        beta_ps,
    }
}

/// Round to `digits` significant figures.
pub fn sig_figs(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (x * scale).round() / scale
}

/// Two-significant-figure human-readable summary.
pub fn human_report(s: &Stats) -> String {
    let f = |e: &Estimate| match e.value() {
        Some(v) => format!("{:e}", sig_figs(v, 2)),
        None => "insufficient data".to_string(),
    };
    format!(
        "P_det = {}\nE_00 = {}  E_10 = {}  E_01 = {}  E_11 = {}\nE = {}\nbeta_PB = {}\nbeta_PS = {}\n",
        f(&s.p_det),
        f(&s.e_tu[0][0]),
        f(&s.e_tu[1][0]),
        f(&s.e_tu[0][1]),
        f(&s.e_tu[1][1]),
        f(&s.e),
        f(&s.beta_pb),
        f(&s.beta_ps)
    )
}
