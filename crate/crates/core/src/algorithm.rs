//! Deterministic trust algorithm: score from aggregated history and owner
//! trust, and one-step level transitions with hysteresis.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ExecutionOutcome, FunctionalLevel, TrustLevel, TrustRecord};

/// Folded operational history of one code unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryAggregate {
    pub code_id: String,
    pub successes: u64,
    pub failures: u64,
    pub total: u64,
    pub last_outcome: Option<ExecutionOutcome>,
}

impl HistoryAggregate {
    pub fn empty(code_id: impl Into<String>) -> Self {
        Self {
            code_id: code_id.into(),
            successes: 0,
            failures: 0,
            total: 0,
            last_outcome: None,
        }
    }

    /// Fold one more outcome in.
    pub fn record(&mut self, outcome: ExecutionOutcome) {
        match classify_outcome(outcome) {
            Correctness::Correct => self.successes += 1,
            Correctness::Incorrect => self.failures += 1,
        }
        self.total += 1;
        self.last_outcome = Some(outcome);
    }

    pub fn with(mut self, outcome: ExecutionOutcome) -> Self {
        self.record(outcome);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correctness {
    Correct,
    Incorrect,
}

/// Success and handled errors are correct executions; everything else is not.
pub fn classify_outcome(outcome: ExecutionOutcome) -> Correctness {
    match outcome {
        ExecutionOutcome::Success | ExecutionOutcome::HandledError => Correctness::Correct,
        ExecutionOutcome::UnhandledError
        | ExecutionOutcome::AccessViolation
        | ExecutionOutcome::StateViolation
        | ExecutionOutcome::IntegrityFailure => Correctness::Incorrect,
    }
}

/// Tunables for scoring and transitions. Defaults are compiled in; a flat
/// `key = value` file can override any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    /// Weight of the owner-trust prior, in pseudo-executions.
    pub prior_weight: f64,
    /// Each incorrect execution subtracts this many successes.
    pub failure_penalty: f64,
    pub promote_transitional: f64,
    pub promote_operational: f64,
    pub demote_transitional: f64,
    pub demote_untrustable: f64,
    pub demote_denied: f64,
    pub recover_verifiable: f64,
    pub min_n_promote1: u64,
    pub min_n_promote2: u64,
    pub min_n_demote: u64,
    pub min_n_deny: u64,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self {
            prior_weight: 10.0,
            failure_penalty: 2.0,
            promote_transitional: 0.6,
            promote_operational: 0.9,
            demote_transitional: 0.5,
            demote_untrustable: 0.3,
            demote_denied: 0.1,
            recover_verifiable: 0.4,
            min_n_promote1: 10,
            min_n_promote2: 50,
            min_n_demote: 10,
            min_n_deny: 20,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("reading params file: {0}")]
    Io(#[from] std::io::Error),
}

impl AlgorithmParams {
    /// Check the ranges and hysteresis gaps.
    pub fn validate(&self) -> Result<(), ParamsError> {
        let bad = |m: String| Err(ParamsError::Invalid(m));
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return bad(format!("prior_weight must be positive, got {}", self.prior_weight));
        }
        if !(self.failure_penalty >= 1.0 && self.failure_penalty.is_finite()) {
            return bad(format!("failure_penalty must be >= 1, got {}", self.failure_penalty));
        }
        for (name, v) in self.thresholds() {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let gaps = [
            ("promote_transitional", self.promote_transitional, "demote_transitional", self.demote_transitional),
            ("recover_verifiable", self.recover_verifiable, "demote_untrustable", self.demote_untrustable),
            ("promote_operational", self.promote_operational, "demote_transitional", self.demote_transitional),
            ("demote_untrustable", self.demote_untrustable, "demote_denied", self.demote_denied),
        ];
        for (hi_name, hi, lo_name, lo) in gaps {
            if hi <= lo {
                return bad(format!("{hi_name} ({hi}) must exceed {lo_name} ({lo})"));
            }
        }
        Ok(())
    }

    fn thresholds(&self) -> [(&'static str, f64); 6] {
        [
            ("promote_transitional", self.promote_transitional),
            ("promote_operational", self.promote_operational),
            ("demote_transitional", self.demote_transitional),
            ("demote_untrustable", self.demote_untrustable),
            ("demote_denied", self.demote_denied),
            ("recover_verifiable", self.recover_verifiable),
        ]
    }

    /// Parse a flat `key = value` config. Blank lines and `#` comments are
    /// ignored; keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let mut params = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ParamsError::Syntax { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || {
                value
                    .parse::<f64>()
                    .map_err(|_| syntax(format!("{key}: {value:?} is not a number")))
            };
            let count = || {
                value
                    .parse::<u64>()
                    .map_err(|_| syntax(format!("{key}: {value:?} is not a count")))
            };
            match key {
                "prior_weight" => params.prior_weight = real()?,
                "failure_penalty" => params.failure_penalty = real()?,
                "promote_transitional" => params.promote_transitional = real()?,
                "promote_operational" => params.promote_operational = real()?,
                "demote_transitional" => params.demote_transitional = real()?,
                "demote_untrustable" => params.demote_untrustable = real()?,
                "demote_denied" => params.demote_denied = real()?,
                "recover_verifiable" => params.recover_verifiable = real()?,
                "min_n_promote1" => params.min_n_promote1 = count()?,
                "min_n_promote2" => params.min_n_promote2 = count()?,
                "min_n_demote" => params.min_n_demote = count()?,
                "min_n_deny" => params.min_n_deny = count()?,
                other => return Err(syntax(format!("unknown key {other:?}"))),
            }
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Render as a config file that [`AlgorithmParams::parse`] reads back.
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("prior_weight", self.prior_weight),
            ("failure_penalty", self.failure_penalty),
        ]
        .into_iter()
        .chain(self.thresholds())
        {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (k, v) in [
            ("min_n_promote1", self.min_n_promote1),
            ("min_n_promote2", self.min_n_promote2),
            ("min_n_demote", self.min_n_demote),
            ("min_n_deny", self.min_n_deny),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Transactional score: the owner-trust prior blended with the execution
/// record, failures weighted by the penalty, clamped to `[0, 1]`.
///
/// `clamp((k0 * owner_trust + S - penalty * F) / (k0 + N), 0, 1)`
pub fn compute_score(agg: &HistoryAggregate, owner_trust: f64, params: &AlgorithmParams) -> f64 {
    let k0 = params.prior_weight;
    let num = k0 * owner_trust + agg.successes as f64 - params.failure_penalty * agg.failures as f64;
    let den = k0 + agg.total as f64;
    (num / den).clamp(0.0, 1.0)
}

/// Advance a trust record by at most one level given the latest aggregate.
///
/// Rules in precedence order:
/// 1. functional Denied is absorbing;
/// 2. a failed integrity check steps one level down toward Untrustable, and
///    from Untrustable into Denied once the score is below
///    `demote_untrustable` with at least `min_n_demote` executions;
/// 3. Verifiable -> Transitional on `promote_transitional` / `min_n_promote1`;
/// 4. Transitional -> Operational on `promote_operational` / `min_n_promote2`;
/// 5. Transitional -> Verifiable below `demote_transitional`;
/// 6. Verifiable -> Untrustable below `demote_untrustable` / `min_n_demote`;
/// 7. Untrustable -> Verifiable at `recover_verifiable` with integrity intact;
/// 8. Untrustable -> Denied below `demote_denied` / `min_n_deny`.
///
/// Operational code with intact integrity stays Operational.
pub fn transition(
    record: &TrustRecord,
    agg: &HistoryAggregate,
    score: f64,
    integrity_ok: bool,
    params: &AlgorithmParams,
) -> TrustRecord {
    let next = next_level(record, agg.total, score, integrity_ok, params);
    TrustRecord {
        code_id: record.code_id.clone(),
        functional_level: FunctionalLevel::for_effective(next),
        transactional_score: score,
        effective_level: next,
        updated_seq: record.updated_seq,
    }
}

fn next_level(
    record: &TrustRecord,
    n: u64,
    score: f64,
    integrity_ok: bool,
    p: &AlgorithmParams,
) -> TrustLevel {
    use TrustLevel::*;

    let current = record.effective_level;
    if record.functional_level == FunctionalLevel::Denied || current == Denied {
        return Denied;
    }
    if !integrity_ok {
        return match current {
            Untrustable if score < p.demote_untrustable && n >= p.min_n_demote => Denied,
            Untrustable => Untrustable,
            higher => higher.step_down(),
        };
    }
    match current {
        Operational => Operational,
        Transitional if score >= p.promote_operational && n >= p.min_n_promote2 => Operational,
        Transitional if score < p.demote_transitional => Verifiable,
        Verifiable if score >= p.promote_transitional && n >= p.min_n_promote1 => Transitional,
        Verifiable if score < p.demote_untrustable && n >= p.min_n_demote => Untrustable,
        Untrustable if score >= p.recover_verifiable => Verifiable,
        Untrustable if score < p.demote_denied && n >= p.min_n_deny => Denied,
        unchanged => unchanged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(s: u64, f: u64) -> HistoryAggregate {
        HistoryAggregate {
            code_id: "c".into(),
            successes: s,
            failures: f,
            total: s + f,
            last_outcome: None,
        }
    }

    fn record(level: TrustLevel) -> TrustRecord {
        TrustRecord {
            code_id: "c".into(),
            functional_level: FunctionalLevel::for_effective(level),
            transactional_score: 0.5,
            effective_level: level,
            updated_seq: 0,
        }
    }

    #[test]
    fn defaults_are_valid() {
        AlgorithmParams::default().validate().unwrap();
    }

    #[test]
    fn score_examples() {
        let p = AlgorithmParams::default();
        assert_eq!(compute_score(&agg(0, 0), 0.5, &p), 0.5);
        assert_eq!(compute_score(&agg(10, 0), 0.5, &p), 0.75);
        assert_eq!(compute_score(&agg(0, 10), 0.5, &p), 0.0);
        assert_eq!(compute_score(&agg(1000, 0), 1.0, &p), 1.0);
    }

    #[test]
    fn outcome_classes() {
        use ExecutionOutcome::*;
        assert_eq!(classify_outcome(Success), Correctness::Correct);
        assert_eq!(classify_outcome(HandledError), Correctness::Correct);
        for o in [UnhandledError, AccessViolation, StateViolation, IntegrityFailure] {
            assert_eq!(classify_outcome(o), Correctness::Incorrect);
        }
    }

    #[test]
    fn transition_examples() {
        let p = AlgorithmParams::default();
        let up = transition(&record(TrustLevel::Verifiable), &agg(10, 0), 0.75, true, &p);
        assert_eq!(up.effective_level, TrustLevel::Transitional);

        let down = transition(&record(TrustLevel::Untrustable), &agg(0, 20), 0.0, true, &p);
        assert_eq!(down.effective_level, TrustLevel::Denied);
        assert_eq!(down.functional_level, FunctionalLevel::Denied);

        for score in [0.0, 0.2, 0.5, 1.0] {
            let op = transition(&record(TrustLevel::Operational), &agg(0, 40), score, true, &p);
            assert_eq!(op.effective_level, TrustLevel::Operational);
        }
    }

    #[test]
    fn promotion_to_operational_sets_functional() {
        let p = AlgorithmParams::default();
        let r = transition(&record(TrustLevel::Transitional), &agg(50, 0), 55.0 / 60.0, true, &p);
        assert_eq!(r.effective_level, TrustLevel::Operational);
        assert_eq!(r.functional_level, FunctionalLevel::Operational);
        // score qualifies but the count gate holds
        let r = transition(&record(TrustLevel::Transitional), &agg(49, 0), 0.95, true, &p);
        assert_eq!(r.effective_level, TrustLevel::Transitional);
    }

    #[test]
    fn integrity_failure_steps_down_one_level() {
        let p = AlgorithmParams::default();
        let r = transition(&record(TrustLevel::Operational), &agg(60, 1), 0.9, false, &p);
        assert_eq!(r.effective_level, TrustLevel::Transitional);
        assert_eq!(r.functional_level, FunctionalLevel::Verifiable);
        let r = transition(&record(TrustLevel::Verifiable), &agg(0, 1), 0.2, false, &p);
        assert_eq!(r.effective_level, TrustLevel::Untrustable);
        let r = transition(&record(TrustLevel::Untrustable), &agg(0, 9), 0.0, false, &p);
        assert_eq!(r.effective_level, TrustLevel::Untrustable);
        let r = transition(&record(TrustLevel::Untrustable), &agg(0, 10), 0.0, false, &p);
        assert_eq!(r.effective_level, TrustLevel::Denied);
    }

    #[test]
    fn untrustable_recovers_only_with_integrity() {
        let p = AlgorithmParams::default();
        let r = transition(&record(TrustLevel::Untrustable), &agg(5, 0), 0.45, true, &p);
        assert_eq!(r.effective_level, TrustLevel::Verifiable);
        let r = transition(&record(TrustLevel::Untrustable), &agg(5, 0), 0.45, false, &p);
        assert_eq!(r.effective_level, TrustLevel::Untrustable);
    }

    #[test]
    fn transitional_demotes_below_gap_only() {
        let p = AlgorithmParams::default();
        let r = transition(&record(TrustLevel::Transitional), &agg(10, 3), 0.55, true, &p);
        assert_eq!(r.effective_level, TrustLevel::Transitional);
        let r = transition(&record(TrustLevel::Transitional), &agg(10, 6), 0.49, true, &p);
        assert_eq!(r.effective_level, TrustLevel::Verifiable);
    }

    #[test]
    fn params_config_round_trip() {
        let p = AlgorithmParams {
            prior_weight: 4.5,
            min_n_deny: 7,
            ..AlgorithmParams::default()
        };
        assert_eq!(AlgorithmParams::parse(&p.to_config()).unwrap(), p);
        let partial = AlgorithmParams::parse("# tuned\nfailure_penalty = 3\n\n").unwrap();
        assert_eq!(partial.failure_penalty, 3.0);
        assert_eq!(partial.prior_weight, 10.0);
    }

    #[test]
    fn params_rejects_bad_input() {
        assert!(matches!(
            AlgorithmParams::parse("nope = 1"),
            Err(ParamsError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            AlgorithmParams::parse("\nmin_n_deny = -3"),
            Err(ParamsError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            AlgorithmParams::parse("promote_transitional = 0.4"),
            Err(ParamsError::Invalid(_))
        ));
        assert!(matches!(
            AlgorithmParams::parse("failure_penalty = 0.5"),
            Err(ParamsError::Invalid(_))
        ));
    }
}
