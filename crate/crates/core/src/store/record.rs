use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::qd::{FeatureRegion, RunOutcome};

use super::{FullConfig, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Created,
    Running,
    Finished,
    Failed,
}

impl RunStatus {
    /// Forward-only: created → running → finished | failed. A created run
    /// may also fail before it starts.
    pub fn can_advance_to(self, next: RunStatus) -> bool {
        use RunStatus::*;
        matches!(
            (self, next),
            (Created, Running) | (Created, Failed) | (Running, Finished) | (Running, Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Finished | RunStatus::Failed)
    }
}

/// Where a zoom child came from: the parent run and the selected region in
/// the parent's normalized feature square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: String,
    pub region: FeatureRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub config: FullConfig,
    /// Milliseconds since the Unix epoch.
    pub created_ms: u64,
    pub updated_ms: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub lineage: Option<Lineage>,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn new_run_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

impl RunRecord {
    pub fn new(config: FullConfig) -> Self {
        let now = now_ms();
        Self {
            run_id: new_run_id(),
            status: RunStatus::Created,
            config,
            created_ms: now,
            updated_ms: now,
            artifacts: Vec::new(),
            lineage: None,
            outcome: None,
            error: None,
        }
    }

    pub fn advance(&mut self, next: RunStatus) -> Result<(), StoreError> {
        if !self.status.can_advance_to(next) {
            return Err(StoreError::InvalidTransition {
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        self.updated_ms = now_ms().max(self.updated_ms);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_only_go_forward() {
        use RunStatus::*;
        let all = [Created, Running, Finished, Failed];
        for a in all {
            for b in all {
                let ok = a.can_advance_to(b);
                let rank = |s| match s {
                    Created => 0,
                    Running => 1,
                    Finished | Failed => 2,
                };
                if ok {
                    assert!(rank(b) > rank(a));
                }
            }
        }
        let mut r = RunRecord::new(FullConfig::desk());
        r.advance(Running).unwrap();
        r.advance(Finished).unwrap();
        assert!(matches!(
            r.advance(Running),
            Err(StoreError::InvalidTransition { .. })
        ));
    }
}
