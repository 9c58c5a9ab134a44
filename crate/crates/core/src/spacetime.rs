//! 1+1-dimensional Minkowski geometry (c = 1) for presentation points.
//!
//! Lightlike separation counts as causal: a signal sent at light speed from
//! `p` arrives at `q` when `t_q − t_p = |x_q − x_p|`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpacetimeError {
    #[error("non-finite coordinate in point {0}")]
    NonFinite(String),
    #[error("duplicate points {0} and {1}")]
    Duplicate(String, String),
    #[error("empty point set")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimePoint {
    #[serde(default)]
    pub label: String,
    pub t: f64,
    pub x: f64,
}

impl SpacetimePoint {
    pub fn new(t: f64, x: f64) -> Self {
        SpacetimePoint {
            label: String::new(),
            t,
            x,
        }
    }

    pub fn labeled(label: impl Into<String>, t: f64, x: f64) -> Self {
        SpacetimePoint {
            label: label.into(),
            t,
            x,
        }
    }

    pub fn validate(&self) -> Result<(), SpacetimeError> {
        if self.t.is_finite() && self.x.is_finite() {
            Ok(())
        } else {
            Err(SpacetimeError::NonFinite(self.label.clone()))
        }
    }

    fn same_event(&self, other: &SpacetimePoint) -> bool {
        self.t == other.t && self.x == other.x
    }
}

/// True iff `q` lies in the causal future of `p` (boundary inclusive, reflexive).
pub fn causally_precedes(p: &SpacetimePoint, q: &SpacetimePoint) -> bool {
    q.t - p.t >= (q.x - p.x).abs()
}

pub fn spacelike(p: &SpacetimePoint, q: &SpacetimePoint) -> bool {
    (p.t - q.t).abs() < (p.x - q.x).abs()
}

/// Number of unordered spacelike-separated pairs.
pub fn count_spacelike_pairs(points: &[SpacetimePoint]) -> Result<usize, SpacetimeError> {
    let mut count = 0;
    for (i, p) in points.iter().enumerate() {
        p.validate()?;
        for q in &points[i + 1..] {
            if p.same_event(q) {
                return Err(SpacetimeError::Duplicate(p.label.clone(), q.label.clone()));
            }
            if spacelike(p, q) {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// True iff `p` is in the causal past of every point.
pub fn intersection_past_contains(p: &SpacetimePoint, points: &[SpacetimePoint]) -> bool {
    !points.is_empty() && points.iter().all(|q| causally_precedes(p, q))
}

/// Latest event at position `x` lying in the causal past of every point.
pub fn latest_common_past_at(x: f64, points: &[SpacetimePoint]) -> Result<SpacetimePoint, SpacetimeError> {
    if points.is_empty() {
        return Err(SpacetimeError::Empty);
    }
    let t = points
        .iter()
        .map(|q| q.t - (q.x - x).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(SpacetimePoint::new(t, x))
}

/// Arrival event at position `x` of a light-speed signal emitted at `from`.
pub fn light_arrival(from: &SpacetimePoint, x: f64) -> SpacetimePoint {
    SpacetimePoint::new(from.t + (x - from.x).abs(), x)
}
