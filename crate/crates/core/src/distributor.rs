//! Personalized model distribution.
//!
//! At round `t`, a client that was also active at `t − 1` receives the
//! propagated center of the cluster it belonged to at `t − 1` (condition 1).
//! Any other active client receives the mean of all propagated centers from
//! `t − 1` (condition 2). Before anything is recorded, everyone gets the
//! shared initial model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::param_space::{ParamError, ParamVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributeError {
    #[error("ledger was last recorded at round {recorded}; cannot distribute for round {requested}")]
    Stale { recorded: usize, requested: usize },
    #[error("assignment covers {assigned} clients but the active set has {active}")]
    AssignmentMismatch { assigned: usize, active: usize },
    #[error("assignment refers to cluster {cluster} but only {centers} centers were given")]
    ClusterOutOfRange { cluster: usize, centers: usize },
    #[error("active set lists client {0} twice")]
    DuplicateClient(usize),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", content = "cluster")]
pub enum DecisionSource {
    /// Previous-round cluster model, with that round's cluster index.
    Condition1(usize),
    Condition2Average,
    InitialSeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionDecision {
    pub client_id: usize,
    pub source: DecisionSource,
    pub model: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub last_round: usize,
    pub last_cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct RoundSnapshot {
    round: usize,
    active: BTreeSet<usize>,
    centers: Vec<ParamVector>,
    mean: ParamVector,
}

/// Per-client membership history plus the previous round's propagated centers.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipLedger {
    initial_model: ParamVector,
    members: BTreeMap<usize, Membership>,
    previous: Option<RoundSnapshot>,
}

impl MembershipLedger {
    pub fn new(initial_model: ParamVector) -> Self {
        Self {
            initial_model,
            members: BTreeMap::new(),
            previous: None,
        }
    }

    pub fn initial_model(&self) -> &ParamVector {
        &self.initial_model
    }

    pub fn membership(&self, client: usize) -> Option<Membership> {
        self.members.get(&client).copied()
    }

    pub fn last_recorded_round(&self) -> Option<usize> {
        self.previous.as_ref().map(|p| p.round)
    }

    pub fn previous_active(&self) -> Option<&BTreeSet<usize>> {
        self.previous.as_ref().map(|p| &p.active)
    }

    pub fn previous_centers(&self) -> Option<&[ParamVector]> {
        self.previous.as_ref().map(|p| p.centers.as_slice())
    }

    pub fn previous_center_mean(&self) -> Option<&ParamVector> {
        self.previous.as_ref().map(|p| &p.mean)
    }

    /// Starting model for each client in `active`, in the given order.
    pub fn distribute(&self, active: &[usize], round: usize) -> Result<Vec<DistributionDecision>, DistributeError> {
        check_unique(active)?;
        let Some(prev) = &self.previous else {
            return Ok(active
                .iter()
                .map(|&client_id| DistributionDecision {
                    client_id,
                    source: DecisionSource::InitialSeed,
                    model: self.initial_model.clone(),
                })
                .collect());
        };
        if prev.round + 1 != round {
            return Err(DistributeError::Stale {
                recorded: prev.round,
                requested: round,
            });
        }
        Ok(active
            .iter()
            .map(|&client_id| {
                let member = self.members.get(&client_id);
                match member {
                    Some(m) if prev.active.contains(&client_id) => DistributionDecision {
                        client_id,
                        source: DecisionSource::Condition1(m.last_cluster),
                        model: prev.centers[m.last_cluster].clone(),
                    },
                    _ => DistributionDecision {
                        client_id,
                        source: DecisionSource::Condition2Average,
                        model: prev.mean.clone(),
                    },
                }
            })
            .collect())
    }

    /// Stores round `round`'s active set, each client's cluster and the
    /// propagated centers. `assignment` is aligned with `active`.
    pub fn record_round(
        &mut self,
        round: usize,
        active: &[usize],
        assignment: &ClusterAssignment,
        centers: Vec<ParamVector>,
    ) -> Result<(), DistributeError> {
        check_unique(active)?;
        if assignment.len() != active.len() {
            return Err(DistributeError::AssignmentMismatch {
                assigned: assignment.len(),
                active: active.len(),
            });
        }
        if let Some(&cluster) = assignment.labels().iter().find(|&&c| c >= centers.len()) {
            return Err(DistributeError::ClusterOutOfRange {
                cluster,
                centers: centers.len(),
            });
        }
        let mean = ParamVector::mean(&centers)?;
        for (&client, &cluster) in active.iter().zip(assignment.labels()) {
            self.members.insert(
                client,
                Membership {
                    last_round: round,
                    last_cluster: cluster,
                },
            );
        }
        self.previous = Some(RoundSnapshot {
            round,
            active: active.iter().copied().collect(),
            centers,
            mean,
        });
        Ok(())
    }
}

fn check_unique(active: &[usize]) -> Result<(), DistributeError> {
    let mut seen = BTreeSet::new();
    for &c in active {
        if !seen.insert(c) {
            return Err(DistributeError::DuplicateClient(c));
        }
    }
    Ok(())
}
