//! The trust engine: evaluate, execute, audit, record, recompute, update.

use serde::Serialize;

use crate::algorithm::{compute_score, transition, AlgorithmParams};
use crate::harness::{execute, AccessMatrix, ExecTrace, ForkTarget, HarnessError};
use crate::history::ExecutionRecord;
use crate::integrity::{check_installed, IntegrityError, IntegrityStatus};
use crate::model::{ExecMode, ExecutionOutcome, ReasonCode, TrustLevel, TrustRecord, Verdict};
use crate::registry::{Registry, StateViolationReason};
use crate::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("UnknownCode: {0:?}")]
    UnknownCode(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Integrity(IntegrityError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<IntegrityError> for EngineError {
    fn from(e: IntegrityError) -> Self {
        match e {
            IntegrityError::UnknownCode(id) => EngineError::UnknownCode(id),
            IntegrityError::Store(s) => EngineError::Store(s),
            other => EngineError::Integrity(other),
        }
    }
}

/// Hook for application-specific trust requirements. The engine ships with
/// none; implementations observe verdicts and finished runs.
pub trait StandardizedConstruct {
    fn on_verdict(&self, _code_id: &str, _verdict: &Verdict) {}
    fn on_report(&self, _report: &ExecutionReport) {}
}

/// Result of the pre-execution checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub verdict: Verdict,
    pub integrity: IntegrityStatus,
    pub record: TrustRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionReport {
    pub code_id: String,
    pub verdict: Verdict,
    /// `None` when the verdict was Deny.
    pub outcome: Option<ExecutionOutcome>,
    /// Sequence number of the history record this run appended.
    pub seq: Option<u64>,
    pub score_before: f64,
    pub score_after: f64,
    pub record_before: TrustRecord,
    pub record_after: TrustRecord,
    pub audit: Vec<StateViolationReason>,
    #[serde(skip)]
    pub trace: Option<ExecTrace>,
}

#[derive(Debug, thiserror::Error)]
#[error("batch stopped at entry {index}: {source}")]
pub struct BatchError {
    pub index: usize,
    pub completed: Vec<ExecutionReport>,
    #[source]
    pub source: EngineError,
}

/// Owns a store exclusively and drives runs against it.
pub struct Engine {
    store: Store,
    params: AlgorithmParams,
    matrix: AccessMatrix,
    constructs: Vec<Box<dyn StandardizedConstruct>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store.dir())
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(store: Store, params: AlgorithmParams) -> Self {
        Self {
            store,
            params,
            matrix: AccessMatrix::default(),
            constructs: Vec::new(),
        }
    }

    pub fn with_matrix(mut self, matrix: AccessMatrix) -> Self {
        self.matrix = matrix;
        self
    }

    pub fn with_construct(mut self, construct: Box<dyn StandardizedConstruct>) -> Self {
        self.constructs.push(construct);
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn into_store(self) -> Store {
        self.store
    }

    pub fn params(&self) -> &AlgorithmParams {
        &self.params
    }

    pub fn matrix(&self) -> &AccessMatrix {
        &self.matrix
    }

    /// Load the trust record, re-check integrity and map the effective level
    /// to a verdict. Read-only.
    pub fn evaluate(&self, code_id: &str) -> Result<Verdict, EngineError> {
        Ok(self.evaluation(code_id)?.verdict)
    }

    pub fn evaluation(&self, code_id: &str) -> Result<Evaluation, EngineError> {
        let record = self
            .store
            .trust_record(code_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownCode(code_id.to_string()))?;
        let integrity = check_installed(&self.store, code_id)?;
        let level = match integrity {
            // Code failing verification never gets more than the sandbox.
            IntegrityStatus::Failed(_) => record.effective_level.min(TrustLevel::Untrustable),
            _ => record.effective_level,
        };
        let verdict = Verdict::for_level(level, vec![integrity.reason()]);
        for c in &self.constructs {
            c.on_verdict(code_id, &verdict);
        }
        Ok(Evaluation {
            verdict,
            integrity,
            record,
        })
    }

    /// Run one code unit end to end. A Deny verdict yields a report without
    /// touching the store; otherwise the outcome is appended to the history
    /// and the trust record recomputed.
    pub fn run(&mut self, code_id: &str) -> Result<ExecutionReport, EngineError> {
        let Evaluation {
            verdict,
            integrity,
            record,
        } = self.evaluation(code_id)?;

        if verdict.is_deny() {
            let report = ExecutionReport {
                code_id: code_id.to_string(),
                verdict,
                outcome: None,
                seq: None,
                score_before: record.transactional_score,
                score_after: record.transactional_score,
                record_before: record.clone(),
                record_after: record,
                audit: Vec::new(),
                trace: None,
            };
            for c in &self.constructs {
                c.on_report(&report);
            }
            return Ok(report);
        }
        let mode = verdict.mode().unwrap_or(ExecMode::Sandbox);

        let (outcome, audit, trace) = match integrity {
            IntegrityStatus::Failed(_) => (ExecutionOutcome::IntegrityFailure, Vec::new(), None),
            IntegrityStatus::Verified | IntegrityStatus::Unsigned => {
                let code = self.store.load_code(code_id)?;
                let mut registry = Registry::new();
                let store = &self.store;
                let mut resolver = |child: &str| resolve_child(store, child);
                let exec = execute(&code, verdict.level, &mut registry, &self.matrix, &mut resolver)?;
                (exec.outcome, exec.audit, Some(exec.trace))
            }
        };

        let owner_trust = self
            .store
            .owner_trust(code_id)
            .ok_or_else(|| EngineError::UnknownCode(code_id.to_string()))?;
        let agg = self.store.history().cached_aggregate(code_id).with(outcome);
        let score = compute_score(&agg, owner_trust, &self.params);
        let seq = self.store.history().next_seq();
        let mut next = transition(&record, &agg, score, integrity.is_verified(), &self.params);
        next.updated_seq = seq;

        let entry = ExecutionRecord {
            seq,
            code_id: code_id.to_string(),
            outcome,
            mode,
            score_after: score,
            level_after: next.effective_level,
        };
        self.store.commit_run(&entry, next.clone())?;

        let report = ExecutionReport {
            code_id: code_id.to_string(),
            verdict,
            outcome: Some(outcome),
            seq: Some(seq),
            score_before: record.transactional_score,
            score_after: score,
            record_before: record,
            record_after: next,
            audit,
            trace,
        };
        for c in &self.constructs {
            c.on_report(&report);
        }
        Ok(report)
    }

    /// Run each code in order. Deny verdicts are reports, not errors; the
    /// first error stops the batch.
    pub fn batch<S: AsRef<str>>(&mut self, codes: &[S]) -> Result<Vec<ExecutionReport>, BatchError> {
        let mut completed = Vec::with_capacity(codes.len());
        for (index, code) in codes.iter().enumerate() {
            match self.run(code.as_ref()) {
                Ok(r) => completed.push(r),
                Err(source) => {
                    return Err(BatchError {
                        index,
                        completed,
                        source,
                    })
                }
            }
        }
        Ok(completed)
    }
}

fn resolve_child(store: &Store, child: &str) -> Option<ForkTarget> {
    let record = store.trust_record(child)?;
    if record.effective_level == TrustLevel::Denied {
        return Some(ForkTarget::Refuse(ExecutionOutcome::AccessViolation));
    }
    let status = match check_installed(store, child) {
        Ok(s) => s,
        Err(_) => return Some(ForkTarget::Refuse(ExecutionOutcome::IntegrityFailure)),
    };
    if let IntegrityStatus::Failed(_) = status {
        return Some(ForkTarget::Refuse(ExecutionOutcome::IntegrityFailure));
    }
    match store.load_code(child) {
        Ok(code) => Some(ForkTarget::Run {
            code,
            level: record.effective_level,
        }),
        Err(_) => Some(ForkTarget::Refuse(ExecutionOutcome::IntegrityFailure)),
    }
}

impl ExecutionReport {
    /// Compact JSON line for the CLI.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn reasons(&self) -> &[ReasonCode] {
        &self.verdict.reasons
    }
}
