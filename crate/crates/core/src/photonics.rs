//! Statistical model of the optical setup: Poissonian weak-coherent source,
//! threshold detectors with efficiency and dark counts, and the two reporting
//! strategies that keep the reported set independent of Bob's basis choice.

use crate::qmath::{Angle, QubitState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;
use std::io::{BufRead, Write};
use thiserror::Error;

pub const RECORD_SCHEMA: &str = "# smoney-pulse-records v1";
/// Photon numbers above this are folded into it.
pub const MAX_PHOTONS: u32 = 50;

#[derive(Debug, Error)]
pub enum PhotonicsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("detector dark counts violate equal-efficiency constraint: (1-d0)(1-d1) = {lhs} but (1-d+)(1-d-) = {rhs}")]
    AssumptionF { lhs: f64, rhs: f64 },
    #[error("record I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("record format: {0}")]
    Csv(#[from] csv::Error),
    #[error("record file missing schema line `{RECORD_SCHEMA}`")]
    Schema,
}

fn check_prob(name: &str, v: f64, allow_one: bool) -> Result<(), PhotonicsError> {
    let ok = v.is_finite() && v >= 0.0 && (if allow_one { v <= 1.0 } else { v < 1.0 });
    if ok {
        Ok(())
    } else {
        Err(PhotonicsError::Domain(format!("{name} = {v}")))
    }
}

/// Probability that a pulse from a Poissonian source holds two or more photons.
pub fn p_noqub(mu: f64) -> Result<f64, PhotonicsError> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(PhotonicsError::Domain(format!("mu = {mu}")));
    }
    Ok(-(-mu).exp_m1() - mu * (-mu).exp())
}

/// Expected fraction of reported pulses under reporting strategy 1 with no dark counts.
pub fn p_det_theory(mu: f64, eta: f64) -> Result<f64, PhotonicsError> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(PhotonicsError::Domain(format!("mu = {mu}")));
    }
    check_prob("eta", eta, true)?;
    Ok(2.0 * ((-mu * eta / 2.0).exp() - (-mu * eta).exp()))
}

/// Probability that strategy 1 reports `m` with basis `w` given `a` photons.
pub fn g1(m: bool, w: bool, d0: f64, d1: f64, eta: f64, a: u32) -> Result<f64, PhotonicsError> {
    check_prob("d0", d0, false)?;
    check_prob("d1", d1, false)?;
    check_prob("eta", eta, true)?;
    let quiet = (1.0 - d0) * (1.0 - d1);
    let one = quiet * (1.0 - eta / 2.0).powi(a as i32) - quiet * quiet * (1.0 - eta).powi(a as i32);
    Ok(match (m, w) {
        (true, _) => one,
        (false, false) => 1.0 - 2.0 * one,
        (false, true) => 0.0,
    })
}

/// Probability that strategy 2 reports `m` given `a` photons.
pub fn g2(m: bool, d0: f64, d1: f64, eta: f64, a: u32) -> Result<f64, PhotonicsError> {
    check_prob("d0", d0, false)?;
    check_prob("d1", d1, false)?;
    check_prob("eta", eta, true)?;
    let none = (1.0 - d0) * (1.0 - d1) * (1.0 - eta).powi(a as i32);
    Ok(if m { 1.0 - none } else { none })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub mu: f64,
    /// Recorded only; phase randomisation has no observable effect here.
    #[serde(default = "default_true")]
    pub phase_randomized: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    D0,
    D1,
    Dp,
    Dm,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::D0, Arm::D1, Arm::Dp, Arm::Dm];

    /// Arm measuring basis `basis` with outcome `bit`.
    pub fn of(basis: bool, bit: bool) -> Arm {
        match (basis, bit) {
            (false, false) => Arm::D0,
            (false, true) => Arm::D1,
            (true, false) => Arm::Dp,
            (true, true) => Arm::Dm,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DarkCounts {
    pub d0: f64,
    pub d1: f64,
    pub dp: f64,
    pub dm: f64,
}

impl DarkCounts {
    pub fn uniform(d: f64) -> Self {
        DarkCounts {
            d0: d,
            d1: d,
            dp: d,
            dm: d,
        }
    }

    pub fn get(&self, arm: Arm) -> f64 {
        match arm {
            Arm::D0 => self.d0,
            Arm::D1 => self.d1,
            Arm::Dp => self.dp,
            Arm::Dm => self.dm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Four arms; requires (1−d0)(1−d1) = (1−d+)(1−d−).
    Strategy1,
    /// Two arms used; no cross-basis constraint.
    Strategy2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub eta: f64,
    #[serde(default)]
    pub dark: DarkCounts,
    pub mode: ConstraintMode,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(PhotonicsError::Domain(format!("eta = {}", self.eta)));
        }
        for arm in Arm::ALL {
            check_prob("dark count", self.dark.get(arm), false)?;
        }
        if self.mode == ConstraintMode::Strategy1 {
            let lhs = (1.0 - self.dark.d0) * (1.0 - self.dark.d1);
            let rhs = (1.0 - self.dark.dp) * (1.0 - self.dark.dm);
            if (lhs - rhs).abs() > 1e-12 {
                return Err(PhotonicsError::AssumptionF { lhs, rhs });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum ReportingStrategy {
    /// 50:50 splitter picks the measurement basis; report iff exactly one basis pair clicks.
    One,
    /// Measure every pulse in the fixed basis `z`; report iff any detector clicks.
    Two { z: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TiltModel {
    /// Per-pulse Bloch tilt drawn uniformly from [−θ, θ].
    #[default]
    Uniform,
    /// Basis 0 tilted by −θ, basis 1 by +θ on every pulse.
    FixedWorstCase,
}

/// Bob's preparation imperfections plus the injected same-basis error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PrepConfig {
    #[serde(default)]
    pub beta_ps: f64,
    #[serde(default)]
    pub beta_pb: f64,
    #[serde(default)]
    pub theta: Angle,
    #[serde(default)]
    pub tilt: TiltModel,
    #[serde(default)]
    pub error_rate: f64,
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        for (name, b) in [("beta_PS", self.beta_ps), ("beta_PB", self.beta_pb)] {
            if !(0.0..0.5).contains(&b) {
                return Err(PhotonicsError::Domain(format!("{name} = {b}")));
            }
        }
        if !(0.0..=FRAC_PI_4).contains(&self.theta.0) {
            return Err(PhotonicsError::Domain(format!("theta = {}", self.theta.0)));
        }
        check_prob("error_rate", self.error_rate, false)
    }

    fn tilt_for(&self, u: bool, rng: &mut impl Rng) -> f64 {
        let th = self.theta.0;
        match self.tilt {
            _ if th == 0.0 => 0.0,
            TiltModel::Uniform => rng.random_range(-th..=th),
            TiltModel::FixedWorstCase => {
                if u {
                    th
                } else {
                    -th
                }
            }
        }
    }
}

/// What the detectors and reporting logic did with one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub clicks: [bool; 4],
    pub m: bool,
    pub w: bool,
    pub x: Option<bool>,
}

/// Route each photon (given its real polarisation angle) through the receiver.
pub fn detect_pulse(
    rng: &mut impl Rng,
    photon_angles: &[f64],
    detectors: &DetectorModel,
    strategy: ReportingStrategy,
) -> Detection {
    let mut hit = [false; 4];
    for &alpha in photon_angles {
        let basis = match strategy {
            ReportingStrategy::One => rng.random_bool(0.5),
            ReportingStrategy::Two { z } => z,
        };
        let basis_angle = if basis { FRAC_PI_4 } else { 0.0 };
        let p0 = QubitState::real(alpha).prob_zero_in_basis(basis_angle);
        let bit = !rng.random_bool(p0.clamp(0.0, 1.0));
        if rng.random_bool(detectors.eta) {
            hit[Arm::of(basis, bit).index()] = true;
        }
    }
    let mut clicks = [false; 4];
    for arm in Arm::ALL {
        let dark = detectors.dark.get(arm);
        clicks[arm.index()] = hit[arm.index()] || (dark > 0.0 && rng.random_bool(dark));
    }
    let pair = |basis: bool| {
        (
            clicks[Arm::of(basis, false).index()],
            clicks[Arm::of(basis, true).index()],
        )
    };
    let report = |basis: bool, rng: &mut dyn rand::RngCore| -> Detection {
        let (c0, c1) = pair(basis);
        let x = match (c0, c1) {
            (true, false) => false,
            (false, true) => true,
            _ => rng.random_bool(0.5),
        };
        Detection {
            clicks,
            m: true,
            w: basis,
            x: Some(x),
        }
    };
    let silent = Detection {
        clicks,
        m: false,
        w: false,
        x: None,
    };
    match strategy {
        ReportingStrategy::One => {
            let (a0, a1) = pair(false);
            let (b0, b1) = pair(true);
            match (a0 || a1, b0 || b1) {
                (true, false) => report(false, rng),
                (false, true) => report(true, rng),
                _ => silent,
            }
        }
        ReportingStrategy::Two { z } => {
            let (c0, c1) = pair(z);
            if c0 || c1 {
                report(z, rng)
            } else {
                silent
            }
        }
    }
}

/// Ground truth and observations for one transmitted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub k: u64,
    pub t: bool,
    pub u: bool,
    pub photons: u32,
    pub clicks: [bool; 4],
    pub m: bool,
    pub w: bool,
    pub x: Option<bool>,
}

impl PulseRecord {
    pub fn in_lambda(&self) -> bool {
        self.m
    }
}

/// Per-pulse random stream keyed by (seed, k).
pub fn pulse_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

pub fn sample_photons(rng: &mut impl Rng, poisson: Option<&Poisson<f64>>) -> u32 {
    match poisson {
        None => 0,
        Some(p) => (p.sample(rng) as u32).min(MAX_PHOTONS),
    }
}

/// Simulate one pulse: Bob's preparation, photon number, detection, report.
pub fn simulate_pulse(
    k: u64,
    seed: u64,
    poisson: Option<&Poisson<f64>>,
    detectors: &DetectorModel,
    strategy: ReportingStrategy,
    prep: &PrepConfig,
) -> PulseRecord {
    let mut rng = pulse_rng(seed, k);
    let t = !rng.random_bool(0.5 + prep.beta_ps);
    let u = !rng.random_bool(0.5 + prep.beta_pb);
    let tilt = prep.tilt_for(u, &mut rng);
    let photons = sample_photons(&mut rng, poisson);
    let state = QubitState::bb84(t, u, tilt);
    let alpha = state.b.re.atan2(state.a.re);
    let angles = vec![alpha; photons as usize];
    let det = detect_pulse(&mut rng, &angles, detectors, strategy);
    let mut x = det.x;
    if det.m && det.w == u && prep.error_rate > 0.0 && rng.random_bool(prep.error_rate) {
        x = x.map(|b| !b);
    }
    PulseRecord {
        k,
        t,
        u,
        photons,
        clicks: det.clicks,
        m: det.m,
        w: det.w,
        x,
    }
}

pub fn poisson_for(source: &SourceModel) -> Result<Option<Poisson<f64>>, PhotonicsError> {
    if !(source.mu >= 0.0) || !source.mu.is_finite() {
        return Err(PhotonicsError::Domain(format!("mu = {}", source.mu)));
    }
    if source.mu == 0.0 {
        return Ok(None);
    }
    Poisson::new(source.mu)
        .map(Some)
        .map_err(|e| PhotonicsError::Domain(format!("mu = {}: {e}", source.mu)))
}

/// Generate `n` pulse records; identical inputs give identical output
/// regardless of thread count.
pub fn simulate_pulses(
    source: &SourceModel,
    detectors: &DetectorModel,
    strategy: ReportingStrategy,
    prep: &PrepConfig,
    n: u64,
    seed: u64,
) -> Result<Vec<PulseRecord>, PhotonicsError> {
    detectors.validate()?;
    prep.validate()?;
    if n == 0 {
        return Err(PhotonicsError::Domain("N = 0".into()));
    }
    let poisson = poisson_for(source)?;
    Ok((0..n)
        .into_par_iter()
        .map(|k| simulate_pulse(k, seed, poisson.as_ref(), detectors, strategy, prep))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    k: u64,
    t: u8,
    u: u8,
    #[serde(rename = "L")]
    photons: u32,
    #[serde(rename = "click_D0")]
    click_d0: u8,
    #[serde(rename = "click_D1")]
    click_d1: u8,
    #[serde(rename = "click_Dp")]
    click_dp: u8,
    #[serde(rename = "click_Dm")]
    click_dm: u8,
    m: u8,
    w: u8,
    x: Option<u8>,
}

impl From<&PulseRecord> for CsvRow {
    fn from(r: &PulseRecord) -> Self {
        CsvRow {
            k: r.k,
            t: r.t as u8,
            u: r.u as u8,
            photons: r.photons,
            click_d0: r.clicks[0] as u8,
            click_d1: r.clicks[1] as u8,
            click_dp: r.clicks[2] as u8,
            click_dm: r.clicks[3] as u8,
            m: r.m as u8,
            w: r.w as u8,
            x: r.x.map(|b| b as u8),
        }
    }
}

fn bit(name: &str, v: u8) -> Result<bool, PhotonicsError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(PhotonicsError::Domain(format!("{name} = {v} is not a bit"))),
    }
}

impl TryFrom<CsvRow> for PulseRecord {
    type Error = PhotonicsError;
    fn try_from(r: CsvRow) -> Result<Self, Self::Error> {
        Ok(PulseRecord {
            k: r.k,
            t: bit("t", r.t)?,
            u: bit("u", r.u)?,
            photons: r.photons,
            clicks: [
                bit("click_D0", r.click_d0)?,
                bit("click_D1", r.click_d1)?,
                bit("click_Dp", r.click_dp)?,
                bit("click_Dm", r.click_dm)?,
            ],
            m: bit("m", r.m)?,
            w: bit("w", r.w)?,
            x: r.x.map(|v| bit("x", v)).transpose()?,
        })
    }
}

pub fn write_records<W: Write>(mut out: W, records: &[PulseRecord]) -> Result<(), PhotonicsError> {
    writeln!(out, "{RECORD_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(mut input: R) -> Result<Vec<PulseRecord>, PhotonicsError> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != RECORD_SCHEMA {
        return Err(PhotonicsError::Schema);
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    rdr.deserialize::<CsvRow>()
        .map(|row| PulseRecord::try_from(row?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(eta: f64, d: f64) -> DetectorModel {
        DetectorModel {
            eta,
            dark: DarkCounts::uniform(d),
            mode: ConstraintMode::Strategy1,
        }
    }

    #[test]
    fn closed_forms() {
        assert!((p_noqub(0.09).unwrap() - 3.8e-3).abs() < 5e-5);
        assert_eq!(p_noqub(0.0).unwrap(), 0.0);
        assert!((p_noqub(1.0).unwrap() - (1.0 - 2.0 / std::f64::consts::E)).abs() < 1e-15);
        assert!((p_det_theory(0.09, 0.21).unwrap() - 0.01863).abs() < 5e-6);
        assert_eq!(p_det_theory(0.3, 0.0).unwrap(), 0.0);
        let v = 2.0 * ((-0.05f64).exp() - (-0.1f64).exp());
        assert!((p_det_theory(0.2, 0.5).unwrap() - v).abs() < 1e-15);
        assert!((v - 0.0927840).abs() < 1e-6);
    }

    #[test]
    fn g_examples() {
        assert_eq!(g1(false, true, 0.1, 0.2, 0.3, 4).unwrap(), 0.0);
        assert!((g1(true, false, 0.0, 0.0, 0.21, 1).unwrap() - 0.105).abs() < 1e-15);
        assert_eq!(g2(true, 0.0, 0.0, 0.21, 0).unwrap(), 0.0);
        assert!((g2(true, 0.0, 0.0, 0.21, 1).unwrap() - 0.21).abs() < 1e-15);
        let v = g2(false, 0.01, 0.02, 0.21, 3).unwrap();
        assert!((v - 0.99 * 0.98 * 0.79f64.powi(3)).abs() < 1e-15);
        assert!(g1(true, false, 1.0, 0.0, 0.2, 1).is_err());
    }

    #[test]
    fn assumption_f_is_enforced() {
        let mut d = det(0.2, 0.01);
        assert!(d.validate().is_ok());
        d.dark.dp = 0.05;
        assert!(matches!(d.validate(), Err(PhotonicsError::AssumptionF { .. })));
        d.mode = ConstraintMode::Strategy2;
        assert!(d.validate().is_ok());
    }

    #[test]
    fn vacuum_never_reports() {
        let recs = simulate_pulses(
            &SourceModel { mu: 0.0, phase_randomized: true },
            &det(0.5, 0.0),
            ReportingStrategy::One,
            &PrepConfig::default(),
            10_000,
            3,
        )
        .unwrap();
        assert!(recs.iter().all(|r| !r.m && r.x.is_none()));
    }

    #[test]
    fn reproducible_and_roundtrips_csv() {
        let run = || {
            simulate_pulses(
                &SourceModel { mu: 0.5, phase_randomized: true },
                &det(0.5, 0.01),
                ReportingStrategy::One,
                &PrepConfig { beta_ps: 0.05, error_rate: 0.05, theta: Angle::from_degrees(5.0), ..Default::default() },
                2_000,
                99,
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let mut buf = Vec::new();
        write_records(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(RECORD_SCHEMA));
        assert!(text.lines().nth(1).unwrap() == "k,t,u,L,click_D0,click_D1,click_Dp,click_Dm,m,w,x");
        let back = read_records(&buf[..]).unwrap();
        assert_eq!(a, back);
        assert!(read_records(&b"k,t\n"[..]).is_err());
    }

    #[test]
    fn strategy_one_never_reports_cross_basis_double_clicks() {
        let recs = simulate_pulses(
            &SourceModel { mu: 3.0, phase_randomized: true },
            &det(0.9, 0.05),
            ReportingStrategy::One,
            &PrepConfig::default(),
            20_000,
            1,
        )
        .unwrap();
        for r in &recs {
            let b0 = r.clicks[0] || r.clicks[1];
            let b1 = r.clicks[2] || r.clicks[3];
            if r.m {
                assert!(b0 ^ b1);
                assert_eq!(r.w, b1);
            } else {
                assert!(!r.w);
            }
        }
    }

    #[test]
    fn strategy_two_uses_fixed_basis() {
        let recs = simulate_pulses(
            &SourceModel { mu: 1.0, phase_randomized: true },
            &DetectorModel { eta: 0.8, dark: DarkCounts::default(), mode: ConstraintMode::Strategy2 },
            ReportingStrategy::Two { z: true },
            &PrepConfig::default(),
            5_000,
            2,
        )
        .unwrap();
        assert!(recs.iter().any(|r| r.m));
        assert!(recs.iter().all(|r| !r.clicks[0] && !r.clicks[1]));
        assert!(recs.iter().filter(|r| r.m).all(|r| r.w));
    }
}
