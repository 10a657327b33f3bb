//! Policy-vector network selection.
//!
//! Candidates are scored by a weighted sum of per-axis min-max normalised
//! values. Two selection schemes sit on top of the score:
//!
//! * MN-driven: the terminal ranks candidates with its own policy and asks the
//!   core for resources on the top `k` ([`select_mmt_driven`]).
//! * Negotiated: the terminal proposes a shortlist, the network prunes it with
//!   its own policy and picks one AP ([`select_negotiated`]).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ApId;

pub const DEFAULT_SHORTLIST: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("every candidate was removed by hard constraints")]
    AllCandidatesFiltered,
    #[error("network policy left nothing of the MN shortlist")]
    EmptyIntersection,
    #[error("selection size must be at least 1")]
    ZeroK,
    #[error("invalid policy vector: {0}")]
    InvalidPolicy(String),
}

/// Parameter axes in the order they are stored and summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rssi,
    Load,
    Latency,
    OperatorPreference,
    Cost,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Rssi, Axis::Load, Axis::Latency, Axis::OperatorPreference, Axis::Cost];

    pub fn natural_direction(self) -> Direction {
        match self {
            Axis::Rssi | Axis::OperatorPreference => Direction::Maximize,
            Axis::Load | Axis::Latency | Axis::Cost => Direction::Minimize,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisPolicy {
    pub weight: f64,
    pub direction: Direction,
    /// Hard lower bound on the raw value.
    pub min: Option<f64>,
    /// Hard upper bound on the raw value.
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyVector {
    pub axes: [AxisPolicy; 5],
    pub forbid_rat: BTreeSet<String>,
    /// When non-empty, candidates must carry one of these tags.
    pub require_rat: BTreeSet<String>,
}

impl Default for PolicyVector {
    /// Signal strength only.
    fn default() -> Self {
        PolicyVector::with_weights([1.0, 0.0, 0.0, 0.0, 0.0])
    }
}

impl PolicyVector {
    /// Natural directions, no constraints.
    pub fn with_weights(weights: [f64; 5]) -> Self {
        let axes = Axis::ALL.map(|a| AxisPolicy {
            weight: weights[a.index()],
            direction: a.natural_direction(),
            min: None,
            max: None,
        });
        PolicyVector { axes, forbid_rat: BTreeSet::new(), require_rat: BTreeSet::new() }
    }

    pub fn axis(&self, axis: Axis) -> &AxisPolicy {
        &self.axes[axis.index()]
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut AxisPolicy {
        &mut self.axes[axis.index()]
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.axes.iter().any(|a| !a.weight.is_finite() || a.weight < 0.0) {
            return Err(SelectionError::InvalidPolicy("weights must be finite and non-negative".into()));
        }
        if !self.axes.iter().any(|a| a.weight > 0.0) {
            return Err(SelectionError::InvalidPolicy("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// Same policy with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.axes {
            a.weight *= c;
        }
        out
    }

    pub fn admits(&self, c: &CandidateRecord) -> bool {
        if self.forbid_rat.contains(&c.rat) {
            return false;
        }
        if !self.require_rat.is_empty() && !self.require_rat.contains(&c.rat) {
            return false;
        }
        Axis::ALL.iter().all(|&axis| {
            let p = self.axis(axis);
            let v = c.value(axis);
            p.min.is_none_or(|lo| v >= lo) && p.max.is_none_or(|hi| v <= hi)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub ap_id: ApId,
    /// Raw values indexed by [`Axis`].
    pub values: [f64; 5],
    pub rat: String,
}

impl CandidateRecord {
    pub fn value(&self, axis: Axis) -> f64 {
        self.values[axis.index()]
    }
}

/// Ranks the candidates that pass the hard constraints, best first. Ties go to
/// the lowest AP id.
pub fn score(policy: &PolicyVector, candidates: &[CandidateRecord]) -> Result<Vec<(ApId, f64)>, SelectionError> {
    let admitted: Vec<&CandidateRecord> = candidates.iter().filter(|c| policy.admits(c)).collect();
    if admitted.is_empty() {
        return Err(SelectionError::AllCandidatesFiltered);
    }
    let mut totals = vec![0.0; admitted.len()];
    for axis in Axis::ALL {
        let p = policy.axis(axis);
        let (lo, hi) = admitted
            .iter()
            .map(|c| c.value(axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        for (total, c) in totals.iter_mut().zip(&admitted) {
            let n = if hi == lo {
                0.5
            } else {
                let n = (c.value(axis) - lo) / (hi - lo);
                match p.direction {
                    Direction::Maximize => n,
                    Direction::Minimize => 1.0 - n,
                }
            };
            *total += p.weight * n;
        }
    }
    let mut ranked: Vec<(ApId, f64)> = admitted.iter().map(|c| c.ap_id.clone()).zip(totals).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Top-`k` APs under the MN's own policy.
pub fn select_mmt_driven(
    mn_policy: &PolicyVector,
    candidates: &[CandidateRecord],
    k: usize,
) -> Result<Vec<ApId>, SelectionError> {
    if k == 0 {
        return Err(SelectionError::ZeroK);
    }
    Ok(score(mn_policy, candidates)?.into_iter().take(k).map(|(ap, _)| ap).collect())
}

/// The MN shortlists its top `shortlist` APs, the network keeps those its own
/// policy admits and returns its best one.
pub fn select_negotiated(
    mn_policy: &PolicyVector,
    network_policy: &PolicyVector,
    candidates: &[CandidateRecord],
    shortlist: usize,
) -> Result<ApId, SelectionError> {
    let listed: BTreeSet<ApId> = select_mmt_driven(mn_policy, candidates, shortlist.max(1))?.into_iter().collect();
    let offered: Vec<CandidateRecord> = candidates.iter().filter(|c| listed.contains(&c.ap_id)).cloned().collect();
    match score(network_policy, &offered) {
        Ok(ranked) => Ok(ranked[0].0.clone()),
        Err(SelectionError::AllCandidatesFiltered) => Err(SelectionError::EmptyIntersection),
        Err(e) => Err(e),
    }
}

/// Outcome of a negotiated selection after any fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct Negotiated {
    pub ap: ApId,
    pub fell_back: bool,
}

/// [`select_negotiated`], falling back to the MN's own top choice when the
/// network prunes the whole shortlist.
pub fn negotiate_or_fallback(
    mn_policy: &PolicyVector,
    network_policy: &PolicyVector,
    candidates: &[CandidateRecord],
    shortlist: usize,
) -> Result<Negotiated, SelectionError> {
    match select_negotiated(mn_policy, network_policy, candidates, shortlist) {
        Ok(ap) => Ok(Negotiated { ap, fell_back: false }),
        Err(SelectionError::EmptyIntersection) => {
            let ap = select_mmt_driven(mn_policy, candidates, 1)?.remove(0);
            Ok(Negotiated { ap, fell_back: true })
        }
        Err(e) => Err(e),
    }
}

/// Policy as written in a scenario file; omitted axes weigh nothing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default)]
    pub rssi: Option<AxisSpec>,
    #[serde(default)]
    pub load: Option<AxisSpec>,
    #[serde(default)]
    pub latency: Option<AxisSpec>,
    #[serde(default)]
    pub operator_preference: Option<AxisSpec>,
    #[serde(default)]
    pub cost: Option<AxisSpec>,
    #[serde(default)]
    pub forbid_rat: Vec<String>,
    #[serde(default)]
    pub require_rat: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    #[serde(default)]
    pub weight: f64,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl PolicySpec {
    pub fn build(&self) -> Result<PolicyVector, SelectionError> {
        let mut pv = PolicyVector::with_weights([0.0; 5]);
        let specs = [&self.rssi, &self.load, &self.latency, &self.operator_preference, &self.cost];
        for (axis, spec) in Axis::ALL.into_iter().zip(specs) {
            if let Some(s) = spec {
                let p = pv.axis_mut(axis);
                p.weight = s.weight;
                p.direction = s.direction.unwrap_or(axis.natural_direction());
                p.min = s.min;
                p.max = s.max;
            }
        }
        pv.forbid_rat = self.forbid_rat.iter().cloned().collect();
        pv.require_rat = self.require_rat.iter().cloned().collect();
        pv.validate()?;
        Ok(pv)
    }
}
