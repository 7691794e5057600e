use modelsel_core::policies::{
    final_selection, init_state, leaderboard, next_query, record_label, FinalSelection, LeaderboardRow, SelectionState,
};
use modelsel_core::{PolicySpec, PredictionMatrix};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Exhausted,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub query: usize,
    pub example_id: String,
    pub label: u32,
}

/// Everything needed to rebuild a session: replaying the steps through the
/// policy with the recorded seed reproduces every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub collection: String,
    pub policy: PolicySpec,
    pub budget: usize,
    pub seed: u64,
    pub steps: Vec<TranscriptStep>,
    #[serde(default)]
    pub finalized: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    transcript: Transcript,
    state: SelectionState,
    current: Option<usize>,
}

impl Session {
    pub fn create(
        session_id: String,
        collection: &str,
        matrix: &PredictionMatrix,
        policy: PolicySpec,
        budget: usize,
        seed: u64,
    ) -> Result<Self, ServiceError> {
        if budget == 0 {
            return Err(ServiceError::invalid("budget must be at least 1"));
        }
        if budget > matrix.num_examples() {
            return Err(ServiceError::invalid(format!(
                "budget {budget} exceeds the {} examples in the collection",
                matrix.num_examples()
            )));
        }
        policy.validate().map_err(|e| ServiceError::invalid(e.to_string()))?;
        let transcript = Transcript {
            session_id,
            collection: collection.to_owned(),
            policy,
            budget,
            seed,
            steps: Vec::new(),
            finalized: false,
        };
        Self::replay(matrix, transcript)
    }

    /// Rebuilds a session from its transcript, checking that every recorded
    /// query is the one the policy would ask.
    pub fn replay(matrix: &PredictionMatrix, transcript: Transcript) -> Result<Self, ServiceError> {
        let spec = &transcript.policy;
        let mut state = init_state(matrix, spec, transcript.seed).map_err(ServiceError::from)?;
        for (t, step) in transcript.steps.iter().enumerate() {
            let q = next_query(&mut state, matrix, spec).map_err(ServiceError::from)?;
            if q != step.query {
                return Err(ServiceError::invalid(format!(
                    "transcript diverges at step {}: expected query {q}, found {}",
                    t + 1,
                    step.query
                )));
            }
            matrix.check_class(step.label as usize).map_err(ServiceError::from)?;
            record_label(&mut state, matrix, q, step.label, spec).map_err(ServiceError::from)?;
        }
        let mut session = Self {
            transcript,
            state,
            current: None,
        };
        session.advance(matrix)?;
        Ok(session)
    }

    fn advance(&mut self, matrix: &PredictionMatrix) -> Result<(), ServiceError> {
        self.current = if self.status() == SessionStatus::Active {
            Some(next_query(&mut self.state, matrix, &self.transcript.policy).map_err(ServiceError::from)?)
        } else {
            None
        };
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.transcript.session_id
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn state(&self) -> &SelectionState {
        &self.state
    }

    pub fn step(&self) -> usize {
        self.state.step()
    }

    pub fn budget(&self) -> usize {
        self.transcript.budget
    }

    pub fn current_query(&self) -> Option<usize> {
        self.current
    }

    pub fn status(&self) -> SessionStatus {
        if self.transcript.finalized {
            SessionStatus::Finalized
        } else if self.step() >= self.transcript.budget || self.state.unlabeled().is_empty() {
            SessionStatus::Exhausted
        } else {
            SessionStatus::Active
        }
    }

    pub fn leaderboard(&self, matrix: &PredictionMatrix) -> Vec<LeaderboardRow> {
        leaderboard(&self.state, matrix)
    }

    /// Records the human's answer to the current query and moves on to the
    /// next one.
    pub fn post_label(&mut self, matrix: &PredictionMatrix, query_id: usize, label: u32) -> Result<(), ServiceError> {
        match self.status() {
            SessionStatus::Finalized => return Err(ServiceError::Finalized),
            SessionStatus::Exhausted => return Err(ServiceError::Exhausted),
            SessionStatus::Active => {}
        }
        let current = self.current.ok_or(ServiceError::Exhausted)?;
        if query_id != current {
            return Err(ServiceError::StaleQuery { expected: Some(current) });
        }
        matrix.check_class(label as usize).map_err(|e| ServiceError::invalid(e.to_string()))?;
        record_label(&mut self.state, matrix, current, label, &self.transcript.policy).map_err(ServiceError::from)?;
        self.transcript.steps.push(TranscriptStep {
            query: current,
            example_id: matrix.example_ids()[current].clone(),
            label,
        });
        self.advance(matrix)
    }

    /// Freezes the session and returns the selected model. Repeated calls
    /// return the same selection.
    pub fn finalize(&mut self, matrix: &PredictionMatrix) -> Result<FinalSelection, ServiceError> {
        if self.step() == 0 {
            return Err(ServiceError::NoLabels);
        }
        let selection = final_selection(&self.state, matrix).map_err(ServiceError::from)?;
        self.transcript.finalized = true;
        self.current = None;
        Ok(selection)
    }
}

/// Replays a transcript offline and returns the selection it leads to.
pub fn replay_selection(matrix: &PredictionMatrix, transcript: &Transcript) -> Result<FinalSelection, ServiceError> {
    let session = Session::replay(matrix, Transcript {
        finalized: false,
        ..transcript.clone()
    })?;
    if session.step() == 0 {
        return Err(ServiceError::NoLabels);
    }
    final_selection(session.state(), matrix).map_err(ServiceError::from)
}
