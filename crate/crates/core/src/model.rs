//! Shared vocabulary: trust levels, principals, code units, outcomes and verdicts.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithm::AlgorithmParams;

/// Id of the single system principal present in every store.
pub const SYSTEM_PRINCIPAL: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrincipalKind {
    System,
    Vendor,
    User,
}

/// An accountable owner of operating code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    /// Ed25519 verification key, hex encoded on disk. Empty for the system principal.
    #[serde(with = "hex::serde")]
    pub public_key: Vec<u8>,
    /// Baseline credibility in `[0, 1]`; seeds the score of code this principal installs.
    pub owner_trust: f64,
    pub kind: PrincipalKind,
}

impl Principal {
    pub fn new(
        id: impl Into<String>,
        public_key: impl Into<Vec<u8>>,
        owner_trust: f64,
        kind: PrincipalKind,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        if !(0.0..=1.0).contains(&owner_trust) {
            return Err(ModelError::OwnerTrustOutOfRange(owner_trust));
        }
        if (kind == PrincipalKind::System) != (id == SYSTEM_PRINCIPAL) {
            return Err(ModelError::SystemPrincipalId(id));
        }
        Ok(Self {
            id,
            public_key: public_key.into(),
            owner_trust,
            kind,
        })
    }

    pub fn system() -> Self {
        Self {
            id: SYSTEM_PRINCIPAL.to_string(),
            public_key: Vec::new(),
            owner_trust: 1.0,
            kind: PrincipalKind::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("owner trust {0} outside [0, 1]")]
    OwnerTrustOutOfRange(f64),
    #[error("principal {0:?}: only the principal with id \"system\" may be (and must be) of kind system")]
    SystemPrincipalId(String),
    #[error("unknown {kind} {value:?}")]
    UnknownName { kind: &'static str, value: String },
}

/// The five effective trust levels, totally ordered
/// `Operational > Transitional > Verifiable > Untrustable > Denied`.
///
/// Variant order is significant: the derived `Ord` is the trust order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustLevel {
    Denied,
    Untrustable,
    Verifiable,
    Transitional,
    Operational,
}

impl TrustLevel {
    pub const ALL: [TrustLevel; 5] = [
        TrustLevel::Denied,
        TrustLevel::Untrustable,
        TrustLevel::Verifiable,
        TrustLevel::Transitional,
        TrustLevel::Operational,
    ];

    /// Operational, Verifiable and Denied form the functional category.
    pub fn is_functional(self) -> bool {
        matches!(
            self,
            TrustLevel::Operational | TrustLevel::Verifiable | TrustLevel::Denied
        )
    }

    /// Transitional and Untrustable are the evolving, transactional levels.
    pub fn is_transactional(self) -> bool {
        !self.is_functional()
    }

    pub fn rank(self) -> u8 {
        self as u8
    }

    /// One level higher, saturating at Operational.
    pub fn step_up(self) -> TrustLevel {
        Self::ALL[(self.rank() as usize + 1).min(4)]
    }

    /// One level lower, saturating at Denied.
    pub fn step_down(self) -> TrustLevel {
        Self::ALL[(self.rank() as usize).saturating_sub(1)]
    }

    /// Number of steps between two levels along the order.
    pub fn distance(self, other: TrustLevel) -> u8 {
        self.rank().abs_diff(other.rank())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrustLevel::Denied => "denied",
            TrustLevel::Untrustable => "untrustable",
            TrustLevel::Verifiable => "verifiable",
            TrustLevel::Transitional => "transitional",
            TrustLevel::Operational => "operational",
        }
    }

    /// Execution mode granted at this level, `None` for Denied.
    pub fn mode(self) -> Option<ExecMode> {
        match self {
            TrustLevel::Operational => Some(ExecMode::Full),
            TrustLevel::Transitional | TrustLevel::Verifiable => Some(ExecMode::Standard),
            TrustLevel::Untrustable => Some(ExecMode::Sandbox),
            TrustLevel::Denied => None,
        }
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrustLevel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ModelError::UnknownName {
                kind: "trust level",
                value: s.to_string(),
            })
    }
}

/// Compare two levels under the fixed trust order.
pub fn level_order(a: TrustLevel, b: TrustLevel) -> Ordering {
    a.cmp(&b)
}

/// The coarse baseline standing of a code unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalLevel {
    Operational,
    Verifiable,
    Denied,
}

impl FunctionalLevel {
    pub fn as_level(self) -> TrustLevel {
        match self {
            FunctionalLevel::Operational => TrustLevel::Operational,
            FunctionalLevel::Verifiable => TrustLevel::Verifiable,
            FunctionalLevel::Denied => TrustLevel::Denied,
        }
    }

    /// Functional category implied by an effective level: Operational and
    /// Denied map to themselves, every intermediate level sits on Verifiable.
    pub fn for_effective(level: TrustLevel) -> Self {
        match level {
            TrustLevel::Operational => FunctionalLevel::Operational,
            TrustLevel::Denied => FunctionalLevel::Denied,
            _ => FunctionalLevel::Verifiable,
        }
    }
}

/// Stateless effective level for a functional standing, a score and an
/// execution count, using the default thresholds.
///
/// The stored level of a code unit evolves through
/// [`crate::algorithm::transition`], which adds hysteresis and the one-step
/// rule on top of this table.
pub fn effective_trust_level(functional: FunctionalLevel, score: f64, total_execs: u64) -> TrustLevel {
    effective_trust_level_with(functional, score, total_execs, &AlgorithmParams::default())
}

pub fn effective_trust_level_with(
    functional: FunctionalLevel,
    score: f64,
    total_execs: u64,
    params: &AlgorithmParams,
) -> TrustLevel {
    match functional {
        FunctionalLevel::Denied => TrustLevel::Denied,
        FunctionalLevel::Operational => TrustLevel::Operational,
        FunctionalLevel::Verifiable => {
            if score >= params.promote_transitional && total_execs >= params.min_n_promote1 {
                TrustLevel::Transitional
            } else if score < params.demote_untrustable && total_execs >= params.min_n_demote {
                TrustLevel::Untrustable
            } else {
                TrustLevel::Verifiable
            }
        }
    }
}

/// Installed operating code: a manifest header plus its instruction workload.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeUnit {
    pub code_id: String,
    pub owner_id: String,
    pub body: Vec<u8>,
    pub body_hash: String,
    pub signature: Option<Vec<u8>>,
    pub line_count_n: u64,
    pub ops_per_line_k: f64,
}

/// Per-code trust metrics as persisted in `trust.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRecord {
    pub code_id: String,
    pub functional_level: FunctionalLevel,
    pub transactional_score: f64,
    pub effective_level: TrustLevel,
    pub updated_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecutionOutcome {
    Success,
    HandledError,
    UnhandledError,
    StateViolation,
    AccessViolation,
    IntegrityFailure,
}

impl ExecutionOutcome {
    pub const ALL: [ExecutionOutcome; 6] = [
        ExecutionOutcome::Success,
        ExecutionOutcome::HandledError,
        ExecutionOutcome::UnhandledError,
        ExecutionOutcome::StateViolation,
        ExecutionOutcome::AccessViolation,
        ExecutionOutcome::IntegrityFailure,
    ];

    /// Precedence rank; higher wins when a run hits several fault conditions.
    pub fn precedence(self) -> u8 {
        self as u8
    }

    /// Collapse every condition a run produced into the single outcome it is
    /// classified as. An empty set is a clean success.
    pub fn classify<I: IntoIterator<Item = ExecutionOutcome>>(conditions: I) -> ExecutionOutcome {
        conditions
            .into_iter()
            .max()
            .unwrap_or(ExecutionOutcome::Success)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Full,
    Standard,
    Sandbox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "mode")]
pub enum Decision {
    #[serde(rename = "DENY")]
    Deny,
    #[serde(rename = "EXECUTE")]
    Execute(ExecMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    IntegrityOk,
    NoSignature,
    BadSignature,
    HashMismatch,
    LevelOperational,
    LevelTransitional,
    LevelVerifiable,
    LevelUntrustable,
    LevelDenied,
}

impl ReasonCode {
    pub fn for_level(level: TrustLevel) -> Self {
        match level {
            TrustLevel::Operational => ReasonCode::LevelOperational,
            TrustLevel::Transitional => ReasonCode::LevelTransitional,
            TrustLevel::Verifiable => ReasonCode::LevelVerifiable,
            TrustLevel::Untrustable => ReasonCode::LevelUntrustable,
            TrustLevel::Denied => ReasonCode::LevelDenied,
        }
    }
}

/// Pre-execution decision for a code unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub decision: Decision,
    /// Effective level the decision was made at.
    pub level: TrustLevel,
    pub reasons: Vec<ReasonCode>,
}

impl Verdict {
    /// Build the verdict for an effective level; the mode mapping is fixed.
    pub fn for_level(level: TrustLevel, mut reasons: Vec<ReasonCode>) -> Self {
        let decision = match level.mode() {
            Some(mode) => Decision::Execute(mode),
            None => Decision::Deny,
        };
        reasons.push(ReasonCode::for_level(level));
        Self {
            decision,
            level,
            reasons,
        }
    }

    pub fn is_deny(&self) -> bool {
        self.decision == Decision::Deny
    }

    pub fn mode(&self) -> Option<ExecMode> {
        match self.decision {
            Decision::Execute(m) => Some(m),
            Decision::Deny => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceClass {
    System,
    ProtectedUser,
    User,
    Sandbox,
}

impl ResourceClass {
    pub const ALL: [ResourceClass; 4] = [
        ResourceClass::System,
        ResourceClass::ProtectedUser,
        ResourceClass::User,
        ResourceClass::Sandbox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceClass::System => "system",
            ResourceClass::ProtectedUser => "protected",
            ResourceClass::User => "user",
            ResourceClass::Sandbox => "sandbox",
        }
    }
}

impl fmt::Display for ResourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(ResourceClass::System),
            "protected" | "protected_user" | "protecteduser" => Ok(ResourceClass::ProtectedUser),
            "user" => Ok(ResourceClass::User),
            "sandbox" => Ok(ResourceClass::Sandbox),
            _ => Err(ModelError::UnknownName {
                kind: "resource class",
                value: s.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_table_is_a_total_order() {
        // Expected order from the level definitions, highest first.
        let ranked = [
            TrustLevel::Operational,
            TrustLevel::Transitional,
            TrustLevel::Verifiable,
            TrustLevel::Untrustable,
            TrustLevel::Denied,
        ];
        for (i, a) in ranked.iter().enumerate() {
            for (j, b) in ranked.iter().enumerate() {
                let expected = j.cmp(&i);
                assert_eq!(level_order(*a, *b), expected, "{a} vs {b}");
                assert_eq!(level_order(*b, *a), expected.reverse());
                for c in ranked {
                    if level_order(*a, *b) == Ordering::Greater
                        && level_order(*b, c) == Ordering::Greater
                    {
                        assert_eq!(level_order(*a, c), Ordering::Greater);
                    }
                }
            }
        }
    }

    #[test]
    fn level_order_examples() {
        use TrustLevel::*;
        assert_eq!(level_order(Operational, Operational), Ordering::Equal);
        assert_eq!(level_order(Transitional, Verifiable), Ordering::Greater);
        assert_eq!(level_order(Untrustable, Denied), Ordering::Greater);
    }

    #[test]
    fn categories() {
        use TrustLevel::*;
        let functional: Vec<_> = TrustLevel::ALL.into_iter().filter(|l| l.is_functional()).collect();
        assert_eq!(functional, vec![Denied, Verifiable, Operational]);
        assert!(Transitional.is_transactional() && Untrustable.is_transactional());
    }

    #[test]
    fn effective_level_examples() {
        assert_eq!(effective_trust_level(FunctionalLevel::Denied, 0.99, 100), TrustLevel::Denied);
        assert_eq!(
            effective_trust_level(FunctionalLevel::Verifiable, 0.75, 10),
            TrustLevel::Transitional
        );
        assert_eq!(
            effective_trust_level(FunctionalLevel::Verifiable, 0.0, 10),
            TrustLevel::Untrustable
        );
        assert_eq!(
            effective_trust_level(FunctionalLevel::Verifiable, 0.75, 9),
            TrustLevel::Verifiable
        );
    }

    #[test]
    fn mode_mapping_is_fixed() {
        assert_eq!(TrustLevel::Operational.mode(), Some(ExecMode::Full));
        assert_eq!(TrustLevel::Transitional.mode(), Some(ExecMode::Standard));
        assert_eq!(TrustLevel::Verifiable.mode(), Some(ExecMode::Standard));
        assert_eq!(TrustLevel::Untrustable.mode(), Some(ExecMode::Sandbox));
        assert_eq!(TrustLevel::Denied.mode(), None);
        for level in TrustLevel::ALL {
            assert_eq!(Verdict::for_level(level, vec![]).is_deny(), level == TrustLevel::Denied);
        }
    }

    #[test]
    fn outcome_precedence() {
        use ExecutionOutcome::*;
        let order = [IntegrityFailure, AccessViolation, StateViolation, UnhandledError, HandledError, Success];
        for w in order.windows(2) {
            assert!(w[0].precedence() > w[1].precedence());
        }
        assert_eq!(ExecutionOutcome::classify([]), Success);
        assert_eq!(ExecutionOutcome::classify([HandledError, StateViolation, UnhandledError]), StateViolation);
        assert_eq!(ExecutionOutcome::classify([AccessViolation, IntegrityFailure]), IntegrityFailure);
    }

    #[test]
    fn system_principal_rules() {
        assert!(Principal::new("system", vec![], 1.0, PrincipalKind::System).is_ok());
        assert!(Principal::new("acme", vec![], 1.0, PrincipalKind::System).is_err());
        assert!(Principal::new("system", vec![], 1.0, PrincipalKind::Vendor).is_err());
        assert!(Principal::new("acme", vec![], 1.5, PrincipalKind::Vendor).is_err());
    }

    #[test]
    fn verdict_serializes_decision_inline() {
        let v = Verdict::for_level(TrustLevel::Denied, vec![ReasonCode::IntegrityOk]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"decision":"DENY","level":"denied","reasons":["INTEGRITY_OK","LEVEL_DENIED"]}"#);
        let v = Verdict::for_level(TrustLevel::Untrustable, vec![]);
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.starts_with(r#"{"decision":"EXECUTE","mode":"sandbox""#), "{s}");
    }
}
