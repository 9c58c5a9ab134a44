//! Executable token schemes: ideal (IQT1/IQT2), practical (QT1/QT2) and their
//! 2^M-point extensions (QT1M/QT2M).
//!
//! A run is a single-threaded discrete-event simulation. Alice's and Bob's
//! central agents sit at a hub event inside the common causal past of every
//! presentation point; their local agents sit at the presentation points.
//! Classical channels are ideal and signals travel at light speed.

use crate::bits::BitString;
use crate::bounds::SchemeParams;
use crate::photonics::{self, DetectorModel, PrepConfig, ReportingStrategy, SourceModel, TiltModel};
use crate::qmath::QubitState;
use crate::spacetime::{self, SpacetimePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("unknown adversary `{0}` (expected measure_once_replay, random_second_token or basis_guess)")]
    UnknownAdversary(String),
    #[error(transparent)]
    Photonics(#[from] photonics::PhotonicsError),
    #[error(transparent)]
    Spacetime(#[from] spacetime::SpacetimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "IQT1")]
    Iqt1,
    #[serde(rename = "IQT2")]
    Iqt2,
    #[serde(rename = "QT1")]
    Qt1,
    #[serde(rename = "QT2")]
    Qt2,
    #[serde(rename = "QT1M")]
    Qt1M,
    #[serde(rename = "QT2M")]
    Qt2M,
}

impl Scheme {
    pub fn is_ideal(self) -> bool {
        matches!(self, Scheme::Iqt1 | Scheme::Iqt2)
    }

    /// Alice measures every qubit in one basis z instead of a random one.
    pub fn fixed_basis(self) -> bool {
        matches!(self, Scheme::Iqt2 | Scheme::Qt2 | Scheme::Qt2M)
    }

    /// Local agents warn causal-future agents about presentations.
    pub fn signals(self) -> bool {
        matches!(self, Scheme::Qt1M | Scheme::Qt2M)
    }

    pub fn rounds(self, params: &SchemeParams) -> u32 {
        if matches!(self, Scheme::Qt1M | Scheme::Qt2M) {
            params.m
        } else {
            1
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(s.trim_matches('"'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Measure each qubit once in a random basis; present the same outcomes twice.
    MeasureOnceReplay,
    /// Honest token at the first point, uniformly random string at the second.
    RandomSecondToken,
    /// Measure each qubit in the intermediate basis that guesses the state bit
    /// equally well in both bases; present the guesses twice.
    BasisGuess,
}

impl std::str::FromStr for Adversary {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| ProtocolError::UnknownAdversary(s.to_string()))
    }
}

/// How Bob's pulses reach Alice's measurement record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    /// Each pulse is reported with probability P_det; same-basis outcomes
    /// are flipped with probability E.
    #[default]
    Abstract,
    /// Full source/detector model; QT1 uses reporting strategy 1, QT2 strategy 2.
    Photonic { source: SourceModel, detectors: DetectorModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub points: Vec<SpacetimePoint>,
    /// Where and when the central agents act last; defaults to the latest
    /// common-past event above the midpoint of the presentation points.
    #[serde(default)]
    pub hub: Option<SpacetimePoint>,
}

impl Geometry {
    /// 2^M points at equal time spread along x (all pairwise spacelike).
    pub fn spacelike_line(m: u32, t: f64, spacing: f64) -> Self {
        let count = 1u64 << m;
        Geometry {
            points: (0..count)
                .map(|i| SpacetimePoint::labeled(BitString::from_index(i, m as usize).to_string(), t, i as f64 * spacing))
                .collect(),
            hub: None,
        }
    }

    /// Point lookup by label.
    pub fn point(&self, label: &BitString) -> Option<&SpacetimePoint> {
        let s = label.to_string();
        self.points.iter().find(|p| p.label == s)
    }

    /// Checks the labels and returns the hub event.
    pub fn validate(&self, m: u32) -> Result<SpacetimePoint, ProtocolError> {
        let expected = 1usize << m;
        if self.points.len() != expected {
            return Err(ProtocolError::Geometry(format!(
                "{} presentation points given, scheme needs 2^{m} = {expected}",
                self.points.len()
            )));
        }
        for i in 0..expected as u64 {
            let label = BitString::from_index(i, m as usize);
            if self.point(&label).is_none() {
                return Err(ProtocolError::Geometry(format!("no presentation point labelled {label}")));
            }
        }
        spacetime::count_spacelike_pairs(&self.points)?;
        match &self.hub {
            Some(h) => {
                h.validate()?;
                if !spacetime::intersection_past_contains(h, &self.points) {
                    return Err(ProtocolError::Geometry(
                        "hub is not in the causal past of every presentation point".into(),
                    ));
                }
                Ok(h.clone())
            }
            None => {
                let lo = self.points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
                let hi = self.points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
                let mut h = spacetime::latest_common_past_at(0.5 * (lo + hi), &self.points)?;
                h.label = "hub".into();
                Ok(h)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Agent {
    Alice,
    Bob,
    AliceAt(BitString),
    BobAt(BitString),
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Agent::Alice => f.write_str("A"),
            Agent::Bob => f.write_str("B"),
            Agent::AliceAt(i) => write!(f, "A[{i}]"),
            Agent::BobAt(i) => write!(f, "B[{i}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Quantum transmission of one round's pulses.
    Quantum { round: u32, pulses: u64 },
    /// Labels of the successfully measured pulses.
    Reported { round: u32, lambda: Vec<u64> },
    /// The injective map Λ → [n], listed as g⁻¹(0), g⁻¹(1), …
    Ordering { round: u32, order: Vec<u64> },
    Outcomes { round: u32, x: BitString },
    Bases { round: u32, d: BitString },
    BasesRelay { round: u32, d: BitString },
    /// Bob's state and basis strings re-indexed by the ordering.
    Preparation { round: u32, r: BitString, s: BitString },
    Commit { round: u32, c: bool },
    CommitRelay { round: u32, c: bool },
    PresentOrder { point: BitString },
    Token { x: Vec<BitString> },
    PresentationSignal { from: BitString },
}

impl Payload {
    /// True for items whose content depends on the chosen presentation point.
    pub fn depends_on_choice(&self) -> bool {
        matches!(
            self,
            Payload::Commit { .. } | Payload::CommitRelay { .. } | Payload::PresentOrder { .. } | Payload::Token { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub step: u8,
    pub sender: Agent,
    pub receiver: Agent,
    pub sent_at: SpacetimePoint,
    pub received_at: SpacetimePoint,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Prepare { round: u32 },
    Measure { round: u32 },
    Abort { round: u32, n: u64, threshold: f64 },
    ChoosePresentation { points: Vec<BitString> },
    Validate { decision: Decision },
}

impl EventKind {
    pub fn is_quantum(&self) -> bool {
        matches!(self, EventKind::Prepare { .. } | EventKind::Measure { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: SpacetimePoint,
    pub agent: Agent,
    pub kind: EventKind,
}

/// Per-round validation detail: Hamming distance and |Δ|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundCheck {
    pub distance: usize,
    pub delta_size: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub point: BitString,
    pub accepted: bool,
    pub reason: String,
    pub rounds: Vec<RoundCheck>,
    /// Message sequence numbers the decision read.
    pub consumed: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Aborted { round: u32 },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub scheme: Scheme,
    pub hub: SpacetimePoint,
    pub points: Vec<SpacetimePoint>,
    pub messages: Vec<Message>,
    pub events: Vec<Event>,
    pub decisions: Vec<Decision>,
    pub outcome: RunOutcome,
    /// Per-round private state, kept for analysis only.
    #[serde(skip)]
    pub rounds: Vec<RoundState>,
}

impl Transcript {
    pub fn accepted_at(&self, label: &BitString) -> bool {
        self.decisions.iter().any(|d| &d.point == label && d.accepted)
    }

    /// One JSON object per message.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("message serialises"));
            out.push('\n');
        }
        out
    }

    pub fn message(&self, seq: u64) -> Option<&Message> {
        self.messages.iter().find(|m| m.seq == seq)
    }
}

/// Both parties' data for one round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundState {
    pub t: BitString,
    pub u: BitString,
    pub lambda: Vec<u64>,
    pub y: BitString,
    pub x: BitString,
    pub d: BitString,
    pub r: BitString,
    pub s: BitString,
    pub z: bool,
    pub c: bool,
}

/// Δ_v = {j : d̃_{v,j} = s_j}, 0-indexed.
pub fn compute_delta(s: &BitString, d_tilde: &BitString) -> Result<Vec<usize>, ProtocolError> {
    if s.len() != d_tilde.len() {
        return Err(ProtocolError::Length(s.len(), d_tilde.len()));
    }
    Ok((0..s.len()).filter(|&j| s.0[j] == d_tilde.0[j]).collect())
}

/// Accept iff no presentation signal from a causal-past point arrived and
/// every round satisfies d(x_b, r_b) ≤ |Δ_b|·γ_err (ties accept).
///
/// `rounds` holds the already-restricted strings (x_b, r_b).
pub fn validate_token(
    rounds: &[(BitString, BitString)],
    gamma_err: f64,
    prior_presentation: bool,
) -> Result<(bool, Vec<RoundCheck>), ProtocolError> {
    let mut checks = Vec::with_capacity(rounds.len());
    let mut ok = !prior_presentation;
    for (x, r) in rounds {
        if x.len() != r.len() {
            return Err(ProtocolError::Length(x.len(), r.len()));
        }
        let distance = x.hamming(r);
        let threshold = x.len() as f64 * gamma_err;
        ok &= distance as f64 <= threshold;
        checks.push(RoundCheck {
            distance,
            delta_size: x.len(),
            threshold,
        });
    }
    Ok((ok, checks))
}

/// Everything needed to run a scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub scheme: Scheme,
    pub params: SchemeParams,
    pub geometry: Geometry,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub tilt: TiltModel,
}

impl Setup {
    pub fn rounds(&self) -> u32 {
        self.scheme.rounds(&self.params)
    }

    pub fn validate(&self) -> Result<SpacetimePoint, ProtocolError> {
        self.params.validate().map_err(|e| ProtocolError::Config(e.to_string()))?;
        if self.params.n > 50_000_000 {
            return Err(ProtocolError::Config(format!("N = {} too large for in-memory runs", self.params.n)));
        }
        if let ChannelModel::Photonic { detectors, .. } = &self.channel {
            if self.scheme.is_ideal() {
                return Err(ProtocolError::Config("ideal schemes use the lossless channel".into()));
            }
            detectors.validate()?;
        }
        self.geometry.validate(self.rounds())
    }

    fn gamma_err(&self) -> f64 {
        if self.scheme.is_ideal() {
            0.0
        } else {
            self.params.gamma_err
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum AliceMode {
    Honest(BitString),
    Cheat(Adversary, BitString, BitString),
}

/// Alice's measurement record for one round, indexed by pulse label.
struct Measured {
    lambda: Vec<u64>,
    y: Vec<bool>,
    x: Vec<bool>,
}

const TICK: f64 = 1.0;

struct Engine<'a> {
    setup: &'a Setup,
    hub: SpacetimePoint,
    rng: ChaCha8Rng,
    seed: u64,
    seq: u64,
    messages: Vec<Message>,
    events: Vec<Event>,
}

impl<'a> Engine<'a> {
    fn hub_at(&self, step: u8) -> SpacetimePoint {
        let mut p = self.hub.clone();
        p.t -= (STAGE_STEPS - step as u32) as f64 * TICK;
        p
    }

    fn location(&self, agent: &Agent, at_step: u8) -> SpacetimePoint {
        match agent {
            Agent::Alice | Agent::Bob => self.hub_at(at_step),
            Agent::AliceAt(i) | Agent::BobAt(i) => {
                let q = self.setup.geometry.point(i).expect("validated label");
                SpacetimePoint::new(f64::NAN, q.x)
            }
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Send from a central agent at hub step `step` at light speed.
    fn send(&mut self, step: u8, sender: Agent, receiver: Agent, payload: Payload) {
        let sent_at = self.hub_at(step);
        let dest_x = self.location(&receiver, step).x;
        let received_at = spacetime::light_arrival(&sent_at, dest_x);
        let seq = self.next_seq();
        self.messages.push(Message {
            seq,
            step,
            sender,
            receiver,
            sent_at,
            received_at,
            payload,
        });
    }

    fn event(&mut self, at: SpacetimePoint, agent: Agent, kind: EventKind) {
        let seq = self.next_seq();
        self.events.push(Event { seq, at, agent, kind });
    }

    fn labels(&self) -> Vec<BitString> {
        let m = self.setup.rounds() as usize;
        (0..1u64 << m).map(|i| BitString::from_index(i, m)).collect()
    }

    fn measure_round(&mut self, round: u32, z: bool, mode: &AliceMode) -> Result<(BitString, BitString, Measured), ProtocolError> {
        let p = &self.setup.params;
        let n = p.n as usize;
        let mut t = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut m = Measured {
            lambda: Vec::new(),
            y: Vec::new(),
            x: Vec::new(),
        };
        let breidbart = matches!(mode, AliceMode::Cheat(Adversary::BasisGuess, ..));
        match self.setup.channel {
            ChannelModel::Abstract => {
                let ideal = self.setup.scheme.is_ideal();
                let th = p.theta().radians();
                for k in 0..n as u64 {
                    let tk = !self.rng.random_bool(0.5 + p.beta_ps);
                    let uk = !self.rng.random_bool(0.5 + p.beta_pb);
                    t.push(tk);
                    u.push(uk);
                    let tilt = match self.setup.tilt {
                        _ if ideal || th == 0.0 => 0.0,
                        TiltModel::Uniform => self.rng.random_range(-th..=th),
                        TiltModel::FixedWorstCase => {
                            if uk {
                                th
                            } else {
                                -th
                            }
                        }
                    };
                    let detected = ideal || self.rng.random_bool(p.p_det);
                    if !detected {
                        continue;
                    }
                    let y = if self.setup.scheme.fixed_basis() { z } else { self.rng.random_bool(0.5) };
                    let state = QubitState::bb84(tk, uk, tilt);
                    let basis_angle = if breidbart {
                        FRAC_PI_8
                    } else if y {
                        FRAC_PI_4
                    } else {
                        0.0
                    };
                    let mut x = !self.rng.random_bool(state.prob_zero_in_basis(basis_angle).clamp(0.0, 1.0));
                    if !ideal && !breidbart && y == uk && p.e > 0.0 && self.rng.random_bool(p.e) {
                        x = !x;
                    }
                    m.lambda.push(k);
                    m.y.push(y);
                    m.x.push(x);
                }
            }
            ChannelModel::Photonic { source, detectors } => {
                if !matches!(mode, AliceMode::Honest(_)) {
                    return Err(ProtocolError::Config(
                        "scripted adversaries run on the abstract channel only".into(),
                    ));
                }
                let strategy = if self.setup.scheme.fixed_basis() {
                    ReportingStrategy::Two { z }
                } else {
                    ReportingStrategy::One
                };
                let prep = PrepConfig {
                    beta_ps: p.beta_ps,
                    beta_pb: p.beta_pb,
                    theta: p.theta(),
                    tilt: self.setup.tilt,
                    error_rate: p.e,
                };
                prep.validate()?;
                let poisson = photonics::poisson_for(&source)?;
                let offset = round as u64 * p.n;
                for k in 0..n as u64 {
                    let rec = photonics::simulate_pulse(offset + k, self.seed, poisson.as_ref(), &detectors, strategy, &prep);
                    t.push(rec.t);
                    u.push(rec.u);
                    if rec.m {
                        m.lambda.push(k);
                        m.y.push(rec.w);
                        m.x.push(rec.x.unwrap_or(false));
                    }
                }
            }
        }
        Ok((BitString(t), BitString(u), m))
    }

    fn run(mut self, mode: AliceMode) -> Result<Transcript, ProtocolError> {
        let scheme = self.setup.scheme;
        let params = self.setup.params.clone();
        let rounds = self.setup.rounds();
        let labels = self.labels();
        let mut states = Vec::with_capacity(rounds as usize);

        // Stage I
        let mut aborted = None;
        for l in 0..rounds {
            let z = !self.rng.random_bool(0.5 + params.beta_e);
            self.event(self.hub_at(0), Agent::Bob, EventKind::Prepare { round: l });
            self.send(0, Agent::Bob, Agent::Alice, Payload::Quantum { round: l, pulses: params.n });
            let (t, u, meas) = self.measure_round(l, z, &mode)?;
            self.event(self.hub_at(1), Agent::Alice, EventKind::Measure { round: l });

            // numerical ordering: j-th reported label
            let order = meas.lambda.clone();
            let n_rep = order.len() as u64;
            if !scheme.is_ideal() {
                self.send(2, Agent::Alice, Agent::Bob, Payload::Reported { round: l, lambda: meas.lambda.clone() });
                let threshold = params.gamma_det * params.n as f64;
                if (n_rep as f64) < threshold {
                    self.event(self.hub_at(2), Agent::Bob, EventKind::Abort { round: l, n: n_rep, threshold });
                    aborted = Some(l);
                    states.push(RoundState { t, u, lambda: meas.lambda, ..Default::default() });
                    break;
                }
                self.send(2, Agent::Alice, Agent::Bob, Payload::Ordering { round: l, order: order.clone() });
            }
            let x = BitString(meas.x.clone());
            let y = BitString(meas.y.clone());
            for i in &labels {
                self.send(2, Agent::Alice, Agent::AliceAt(i.clone()), Payload::Outcomes { round: l, x: x.clone() });
            }
            let d = if scheme.fixed_basis() {
                BitString::default()
            } else {
                let d = match &mode {
                    AliceMode::Cheat(Adversary::BasisGuess, ..) => {
                        BitString((0..y.len()).map(|_| self.rng.random_bool(0.5)).collect())
                    }
                    _ => y.xor_bit(z),
                };
                self.send(3, Agent::Alice, Agent::Bob, Payload::Bases { round: l, d: d.clone() });
                for i in &labels {
                    self.send(4, Agent::Bob, Agent::BobAt(i.clone()), Payload::BasesRelay { round: l, d: d.clone() });
                }
                d
            };
            let r = t.select(&order.iter().map(|&k| k as usize).collect::<Vec<_>>());
            let s = u.select(&order.iter().map(|&k| k as usize).collect::<Vec<_>>());
            for i in &labels {
                self.send(4, Agent::Bob, Agent::BobAt(i.clone()), Payload::Preparation { round: l, r: r.clone(), s: s.clone() });
            }
            states.push(RoundState {
                t,
                u,
                lambda: meas.lambda,
                y,
                x,
                d,
                r,
                s,
                z,
                c: false,
            });
        }

        if let Some(round) = aborted {
            return Ok(self.finish(states, Vec::new(), RunOutcome::Aborted { round }));
        }

        // Stage II
        let (targets, commit_to) = match &mode {
            AliceMode::Honest(b) => (vec![b.clone()], b.clone()),
            AliceMode::Cheat(_, v, w) => (vec![v.clone(), w.clone()], v.clone()),
        };
        self.event(self.hub_at(5), Agent::Alice, EventKind::ChoosePresentation { points: targets.clone() });
        for (l, st) in states.iter_mut().enumerate() {
            st.c = commit_to.0[l] ^ st.z;
            self.send(5, Agent::Alice, Agent::Bob, Payload::Commit { round: l as u32, c: st.c });
            for i in &labels {
                self.send(6, Agent::Bob, Agent::BobAt(i.clone()), Payload::CommitRelay { round: l as u32, c: st.c });
            }
        }
        let mut presentations = Vec::new();
        for (idx, target) in targets.iter().enumerate() {
            self.send(6, Agent::Alice, Agent::AliceAt(target.clone()), Payload::PresentOrder { point: target.clone() });
            let x: Vec<BitString> = states
                .iter()
                .map(|st| match (&mode, idx) {
                    (AliceMode::Cheat(Adversary::RandomSecondToken, ..), 1) => {
                        BitString((0..st.x.len()).map(|_| self.rng.random_bool(0.5)).collect())
                    }
                    _ => st.x.clone(),
                })
                .collect();
            let q = self.setup.geometry.point(target).expect("validated").clone();
            let seq = self.next_seq();
            self.messages.push(Message {
                seq,
                step: 7,
                sender: Agent::AliceAt(target.clone()),
                receiver: Agent::BobAt(target.clone()),
                sent_at: q.clone(),
                received_at: q,
                payload: Payload::Token { x },
            });
            presentations.push(target.clone());
        }
        let decisions = self.deliver_and_validate(&presentations)?;
        Ok(self.finish(states, decisions, RunOutcome::Completed))
    }

    /// Process deliveries in (receive time, send order), emitting presentation
    /// signals and validating at each presentation point.
    fn deliver_and_validate(&mut self, presentations: &[BitString]) -> Result<Vec<Decision>, ProtocolError> {
        #[derive(PartialEq, PartialOrd)]
        struct Key(f64);
        impl Eq for Key {}
        impl Ord for Key {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                self.0.total_cmp(&o.0)
            }
        }
        // (time, kind: 0 delivery / 1 validation, seq or presentation index)
        let mut queue: BinaryHeap<Reverse<(Key, u8, u64)>> = BinaryHeap::new();
        for m in &self.messages {
            queue.push(Reverse((Key(m.received_at.t), 0, m.seq)));
        }
        for (i, p) in presentations.iter().enumerate() {
            let q = self.setup.geometry.point(p).expect("validated");
            queue.push(Reverse((Key(q.t), 1, i as u64)));
        }
        let mut inbox: BTreeMap<Agent, Vec<u64>> = BTreeMap::new();
        let mut decisions = Vec::new();
        let signals = self.setup.scheme.signals();
        while let Some(Reverse((_, kind, id))) = queue.pop() {
            if kind == 0 {
                let msg = self.messages.iter().find(|m| m.seq == id).expect("queued message").clone();
                inbox.entry(msg.receiver.clone()).or_default().push(msg.seq);
                if let (true, Payload::Token { .. }, Agent::BobAt(from)) = (signals, &msg.payload, &msg.receiver) {
                    let origin = self.setup.geometry.point(from).expect("validated").clone();
                    for q in self.setup.geometry.points.clone() {
                        if q.label == origin.label || !spacetime::causally_precedes(&origin, &q) {
                            continue;
                        }
                        let to: BitString = q.label.parse().expect("validated label");
                        let seq = self.next_seq();
                        let received_at = spacetime::light_arrival(&origin, q.x);
                        queue.push(Reverse((Key(received_at.t), 0, seq)));
                        self.messages.push(Message {
                            seq,
                            step: 8,
                            sender: Agent::BobAt(from.clone()),
                            receiver: Agent::BobAt(to),
                            sent_at: origin.clone(),
                            received_at,
                            payload: Payload::PresentationSignal { from: from.clone() },
                        });
                    }
                }
            } else {
                let label = &presentations[id as usize];
                let agent = Agent::BobAt(label.clone());
                let seen = inbox.get(&agent).cloned().unwrap_or_default();
                let decision = self.decide(label, &seen)?;
                let at = self.setup.geometry.point(label).expect("validated").clone();
                self.event(at, agent, EventKind::Validate { decision: decision.clone() });
                decisions.push(decision);
            }
        }
        Ok(decisions)
    }

    /// B_b's decision from the messages it has received.
    fn decide(&self, label: &BitString, seen: &[u64]) -> Result<Decision, ProtocolError> {
        let rounds = self.setup.rounds() as usize;
        let q = self.setup.geometry.point(label).expect("validated");
        let mut d: Vec<Option<(u64, BitString)>> = vec![None; rounds];
        let mut rs: Vec<Option<(u64, BitString, BitString)>> = vec![None; rounds];
        let mut c: Vec<Option<(u64, bool)>> = vec![None; rounds];
        let mut token = None;
        let mut prior = Vec::new();
        for &seq in seen {
            let m = self.messages.iter().find(|m| m.seq == seq).expect("delivered message");
            match &m.payload {
                Payload::BasesRelay { round, d: dd } => d[*round as usize] = Some((seq, dd.clone())),
                Payload::Preparation { round, r, s } => rs[*round as usize] = Some((seq, r.clone(), s.clone())),
                Payload::CommitRelay { round, c: cc } => c[*round as usize] = Some((seq, *cc)),
                Payload::Token { x } => token = Some((seq, x.clone())),
                Payload::PresentationSignal { from } => {
                    let origin = self.setup.geometry.point(from).expect("validated");
                    if spacetime::causally_precedes(origin, q) {
                        prior.push(seq);
                    }
                }
                _ => {}
            }
        }
        let mut consumed = Vec::new();
        let reject = |reason: &str, consumed: Vec<u64>| Decision {
            point: label.clone(),
            accepted: false,
            reason: reason.to_string(),
            rounds: Vec::new(),
            consumed,
        };
        let Some((tseq, x)) = token else {
            return Ok(reject("no token received", consumed));
        };
        consumed.push(tseq);
        if x.len() != rounds {
            return Ok(reject("token has wrong number of rounds", consumed));
        }
        let mut restricted = Vec::with_capacity(rounds);
        for l in 0..rounds {
            let (Some((rseq, r, s)), Some((cseq, cbit))) = (&rs[l], &c[l]) else {
                return Ok(reject("missing round data", consumed));
            };
            consumed.extend([*rseq, *cseq]);
            let bit = label.0[l];
            let d_tilde = if self.setup.scheme.fixed_basis() {
                BitString(vec![bit ^ cbit; s.len()])
            } else {
                let Some((dseq, dd)) = &d[l] else {
                    return Ok(reject("missing round data", consumed));
                };
                consumed.push(*dseq);
                dd.xor_bit(bit ^ cbit)
            };
            if x[l].len() != s.len() {
                return Ok(reject("token length mismatch", consumed));
            }
            let delta = compute_delta(s, &d_tilde)?;
            restricted.push((x[l].select(&delta), r.select(&delta)));
        }
        consumed.extend(prior.iter().copied());
        let (accepted, checks) = validate_token(&restricted, self.setup.gamma_err(), !prior.is_empty())?;
        let reason = if !prior.is_empty() {
            "token already presented in the causal past".to_string()
        } else if accepted {
            "valid".to_string()
        } else {
            "too many errors".to_string()
        };
        consumed.sort_unstable();
        Ok(Decision {
            point: label.clone(),
            accepted,
            reason,
            rounds: checks,
            consumed,
        })
    }

    fn finish(self, rounds: Vec<RoundState>, decisions: Vec<Decision>, outcome: RunOutcome) -> Transcript {
        let mut messages = self.messages;
        messages.sort_by(|a, b| a.received_at.t.total_cmp(&b.received_at.t).then(a.seq.cmp(&b.seq)));
        Transcript {
            scheme: self.setup.scheme,
            hub: self.hub,
            points: self.setup.geometry.points.clone(),
            messages,
            events: self.events,
            decisions,
            outcome,
            rounds,
        }
    }
}

const STAGE_STEPS: u32 = 7;

fn engine(setup: &Setup, seed: u64) -> Result<Engine<'_>, ProtocolError> {
    let hub = setup.validate()?;
    Ok(Engine {
        setup,
        hub,
        rng: ChaCha8Rng::seed_from_u64(seed),
        seed,
        seq: 0,
        messages: Vec::new(),
        events: Vec::new(),
    })
}

/// Run the scheme with honest parties presenting at `b`.
pub fn run_honest(setup: &Setup, b: &BitString, seed: u64) -> Result<Transcript, ProtocolError> {
    let e = engine(setup, seed)?;
    if b.len() != setup.rounds() as usize {
        return Err(ProtocolError::Length(b.len(), setup.rounds() as usize));
    }
    e.run(AliceMode::Honest(b.clone()))
}

/// Single double-presentation attempt: Alice commits to `v` and presents at both `v` and `w`.
pub fn run_double_spend_once(
    adversary: Adversary,
    setup: &Setup,
    v: &BitString,
    w: &BitString,
    seed: u64,
) -> Result<Transcript, ProtocolError> {
    let e = engine(setup, seed)?;
    let m = setup.rounds() as usize;
    if v.len() != m || w.len() != m {
        return Err(ProtocolError::Length(v.len().max(w.len()), m));
    }
    if v == w {
        return Err(ProtocolError::Config("double presentation needs two different points".into()));
    }
    e.run(AliceMode::Cheat(adversary, v.clone(), w.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleSpendRecord {
    pub adversary: Adversary,
    pub scheme: Scheme,
    pub v: BitString,
    pub w: BitString,
    pub spacelike: bool,
    pub trials: u64,
    pub aborted: u64,
    pub successes: u64,
    pub frequency: f64,
    /// Binomial standard error of `frequency`.
    pub sigma: f64,
    /// Transcripts failing the causal-validity check.
    pub causal_failures: u64,
    #[serde(skip)]
    pub outcomes: Vec<bool>,
}

/// Independent per-trial seed.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_double_spend(
    adversary: Adversary,
    setup: &Setup,
    target: (&BitString, &BitString),
    trials: u64,
    seed: u64,
) -> Result<DoubleSpendRecord, ProtocolError> {
    setup.validate()?;
    let (v, w) = target;
    let pv = setup.geometry.point(v).ok_or_else(|| ProtocolError::Geometry(format!("no point {v}")))?;
    let pw = setup.geometry.point(w).ok_or_else(|| ProtocolError::Geometry(format!("no point {w}")))?;
    let spacelike = spacetime::spacelike(pv, pw);
    let runs: Vec<(bool, bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let tr = run_double_spend_once(adversary, setup, v, w, trial_seed(seed, i))?;
            let aborted = matches!(tr.outcome, RunOutcome::Aborted { .. });
            let success = tr.accepted_at(v) && tr.accepted_at(w);
            Ok((success, aborted, causal_check(&tr).is_ok()))
        })
        .collect::<Result<_, ProtocolError>>()?;
    let successes = runs.iter().filter(|r| r.0).count() as u64;
    let frequency = successes as f64 / trials.max(1) as f64;
    Ok(DoubleSpendRecord {
        adversary,
        scheme: setup.scheme,
        v: v.clone(),
        w: w.clone(),
        spacelike,
        trials,
        aborted: runs.iter().filter(|r| r.1).count() as u64,
        successes,
        frequency,
        sigma: (frequency * (1.0 - frequency) / trials.max(1) as f64).sqrt(),
        causal_failures: runs.iter().filter(|r| !r.2).count() as u64,
        outcomes: runs.iter().map(|r| r.0).collect(),
    })
}

/// Mechanical causality audit of a transcript:
/// - every message is received in the causal future of where it was sent;
/// - stage-I and stage-II hub traffic happens inside the common causal past;
/// - every decision reads only messages received by then at its point and
///   sent from its causal past.
pub fn causal_check(tr: &Transcript) -> Result<(), String> {
    for m in &tr.messages {
        if !spacetime::causally_precedes(&m.sent_at, &m.received_at) {
            return Err(format!("message {} received outside the future light cone of its sender", m.seq));
        }
        if matches!(m.sender, Agent::Alice | Agent::Bob) && !spacetime::intersection_past_contains(&m.sent_at, &tr.points) {
            return Err(format!("message {} sent by {} outside the common causal past", m.seq, m.sender));
        }
        if matches!(m.receiver, Agent::Alice | Agent::Bob) && !spacetime::intersection_past_contains(&m.received_at, &tr.points) {
            return Err(format!("message {} reaches {} outside the common causal past", m.seq, m.receiver));
        }
    }
    for d in &tr.decisions {
        let q = tr
            .points
            .iter()
            .find(|p| p.label == d.point.to_string())
            .ok_or_else(|| format!("decision at unknown point {}", d.point))?;
        for seq in &d.consumed {
            let m = tr.message(*seq).ok_or_else(|| format!("decision reads unknown message {seq}"))?;
            if m.receiver != Agent::BobAt(d.point.clone()) {
                return Err(format!("decision at {} reads message {seq} addressed to {}", d.point, m.receiver));
            }
            if m.received_at.t > q.t || m.received_at.x != q.x {
                return Err(format!("decision at {} reads message {seq} not yet received", d.point));
            }
            if !spacetime::causally_precedes(&m.sent_at, q) {
                return Err(format!("decision at {} reads message {seq} sent outside its causal past", d.point));
            }
        }
    }
    Ok(())
}

/// True iff the presentation choice is first referenced after every quantum
/// preparation and measurement event.
pub fn flexibility_check(tr: &Transcript) -> bool {
    let last_quantum = tr.events.iter().filter(|e| e.kind.is_quantum());
    let (q_seq, q_t) = last_quantum.fold((0u64, f64::NEG_INFINITY), |(s, t), e| (s.max(e.seq), t.max(e.at.t)));
    let choice_events = tr
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::ChoosePresentation { .. }))
        .map(|e| (e.seq, e.at.t));
    let choice_messages = tr
        .messages
        .iter()
        .filter(|m| m.payload.depends_on_choice())
        .map(|m| (m.seq, m.sent_at.t));
    choice_events.chain(choice_messages).all(|(seq, t)| seq > q_seq && t >= q_t)
}
