//! Property tests for the invariants the engine relies on.

use std::fs;

use explicit_trust::harness::{execute, Access, AccessMatrix, AccessOp, NoForks, TraceKind};
use explicit_trust::history::replay;
use explicit_trust::integrity::install;
use explicit_trust::model::{FunctionalLevel, PrincipalKind, ResourceClass};
use explicit_trust::registry::{ExitStatus, Registry, StateViolationReason};
use explicit_trust::store::HISTORY_FILE;
use explicit_trust::{
    compute_score, sign_manifest, transition, verify_manifest, AlgorithmParams, CodeUnit, Engine,
    ExecutionOutcome, HistoryAggregate, KeyPair, Manifest, Principal, Store, TrustLevel, TrustRecord,
};
use proptest::prelude::*;

fn level() -> impl Strategy<Value = TrustLevel> {
    (0usize..5).prop_map(|i| TrustLevel::ALL[i])
}

fn outcome() -> impl Strategy<Value = ExecutionOutcome> {
    (0usize..6).prop_map(|i| ExecutionOutcome::ALL[i])
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,15}"
}

fn aggregate(outcomes: &[ExecutionOutcome]) -> HistoryAggregate {
    let mut agg = HistoryAggregate::empty("c");
    for o in outcomes {
        agg.record(*o);
    }
    agg
}

fn workload_line() -> impl Strategy<Value = String> {
    let class = prop_oneof![Just("system"), Just("protected"), Just("user"), Just("sandbox")];
    prop_oneof![
        (1u64..100).prop_map(|c| format!("COMPUTE {c}")),
        (class.clone(), 0u8..9).prop_map(|(c, i)| format!("READ {c} r{i}")),
        (class, 0u8..9).prop_map(|(c, i)| format!("WRITE {c} w{i}")),
        Just("RAISE_HANDLED".to_string()),
    ]
}

fn workload() -> impl Strategy<Value = String> {
    (prop::collection::vec(workload_line(), 0..12), any::<bool>()).prop_map(|(lines, crash)| {
        let mut body = lines.join("\n");
        body.push_str(if crash { "\nRAISE_UNHANDLED\n" } else { "\nEXIT success\n" });
        body
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signature_binds_manifest_and_body(
        id in ident(),
        body in workload(),
        seed in any::<u64>(),
        flip in any::<usize>(),
        bit in 0u8..8,
    ) {
        let key = KeyPair::from_label(&format!("k{seed}"));
        let m = Manifest::describe(&id, "acme", body.as_bytes(), 1.0).unwrap();
        let sig = sign_manifest(&m, &key).unwrap();
        prop_assert!(verify_manifest(&m, Some(&sig), &key.public_key(), Some(body.as_bytes())));

        let mut bad_sig = sig.clone();
        let i = flip % bad_sig.len();
        bad_sig[i] ^= 1 << bit;
        prop_assert!(!verify_manifest(&m, Some(&bad_sig), &key.public_key(), Some(body.as_bytes())));

        let mut bad_body = body.clone().into_bytes();
        let i = flip % bad_body.len();
        bad_body[i] ^= 1 << bit;
        prop_assert!(!verify_manifest(&m, Some(&sig), &key.public_key(), Some(&bad_body)));

        let other = KeyPair::from_label(&format!("other{seed}"));
        prop_assert!(!verify_manifest(&m, Some(&sig), &other.public_key(), Some(body.as_bytes())));
        prop_assert!(!verify_manifest(&m, None, &key.public_key(), Some(body.as_bytes())));
    }

    #[test]
    fn manifest_canonical_form_round_trips(
        id in ident(),
        owner in ident(),
        body in workload(),
        k in 0.001f64..1e6,
    ) {
        let m = Manifest::describe(&id, &owner, body.as_bytes(), k).unwrap();
        let text = m.to_canonical();
        let back = Manifest::parse(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_canonical(), text);
    }

    #[test]
    fn score_ignores_outcome_order(
        outcomes in prop::collection::vec(outcome(), 0..60),
        owner_trust in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let params = AlgorithmParams::default();
        let mut shuffled = outcomes.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = compute_score(&aggregate(&outcomes), owner_trust, &params);
        let b = compute_score(&aggregate(&shuffled), owner_trust, &params);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn score_is_monotone_in_outcomes(
        outcomes in prop::collection::vec(outcome(), 0..60),
        owner_trust in 0.0f64..=1.0,
    ) {
        let params = AlgorithmParams::default();
        let agg = aggregate(&outcomes);
        let base = compute_score(&agg, owner_trust, &params);
        let up = compute_score(&agg.clone().with(ExecutionOutcome::Success), owner_trust, &params);
        let down = compute_score(&agg.with(ExecutionOutcome::UnhandledError), owner_trust, &params);
        prop_assert!(up >= base, "success lowered the score: {base} -> {up}");
        prop_assert!(down <= base, "failure raised the score: {base} -> {down}");
    }

    #[test]
    fn transitions_move_at_most_one_step(
        start in level(),
        outcomes in prop::collection::vec(outcome(), 0..80),
        owner_trust in 0.0f64..=1.0,
        integrity in prop::collection::vec(any::<bool>(), 80),
    ) {
        let params = AlgorithmParams::default();
        let mut record = TrustRecord {
            code_id: "c".into(),
            functional_level: FunctionalLevel::for_effective(start),
            transactional_score: owner_trust,
            effective_level: start,
            updated_seq: 0,
        };
        let mut agg = HistoryAggregate::empty("c");
        for (i, o) in outcomes.iter().enumerate() {
            agg.record(*o);
            let score = compute_score(&agg, owner_trust, &params);
            let next = transition(&record, &agg, score, integrity[i], &params);
            prop_assert!(next.effective_level.distance(record.effective_level) <= 1);
            if record.effective_level == TrustLevel::Denied {
                prop_assert_eq!(next.effective_level, TrustLevel::Denied);
            }
            if !integrity[i] {
                prop_assert!(next.effective_level <= record.effective_level);
            }
            prop_assert_eq!(next.functional_level, FunctionalLevel::for_effective(next.effective_level));
            record = next;
        }
    }

    #[test]
    fn access_grows_with_trust(a in level(), b in level(), class in 0usize..4, op in 0usize..2) {
        let m = AccessMatrix::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let class = ResourceClass::ALL[class];
        let op = AccessOp::ALL[op];
        if m.check(lo, class, op) == Access::Allow {
            prop_assert_eq!(m.check(hi, class, op), Access::Allow);
        }
    }

    #[test]
    fn untrustable_code_stays_in_the_sandbox(body in workload()) {
        let code = CodeUnit::unsigned("w", "anon", body.as_bytes(), 1.0).unwrap();
        let mut reg = Registry::new();
        let exec = execute(&code, TrustLevel::Untrustable, &mut reg, &AccessMatrix::default(), &mut NoForks).unwrap();
        for ev in &exec.trace.events {
            if let Some(class) = ev.touched_class() {
                prop_assert_eq!(class, ResourceClass::Sandbox);
            }
            if let TraceKind::Access { class, .. } = &ev.kind {
                prop_assert_eq!(*class, ResourceClass::Sandbox);
            }
        }
    }

    #[test]
    fn audit_matches_parent_walk(ops in prop::collection::vec((0u8..4, any::<usize>()), 0..80)) {
        let (reg, parent, status) = build_tree(&ops);
        prop_assert_eq!(reg.audit(1).unwrap(), oracle_audit(&parent, &status));
    }
}

const STARTED: u8 = 0;
const COMPLETED: u8 = 1;
const ABORTED: u8 = 2;

/// Apply fork/complete/abort operations to running processes, mirroring the
/// tree in plain vectors.
fn build_tree(ops: &[(u8, usize)]) -> (Registry, Vec<Option<usize>>, Vec<u8>) {
    let mut reg = Registry::new();
    let mut parent = vec![None];
    let mut status = vec![STARTED];
    reg.begin_process("n0", None).unwrap();
    for &(op, pick) in ops {
        let running: Vec<usize> = (0..status.len()).filter(|&i| status[i] == STARTED).collect();
        if running.is_empty() {
            break;
        }
        let i = running[pick % running.len()];
        let pid = i as u32 + 1;
        match op {
            0 | 1 => {
                reg.begin_process(&format!("n{}", parent.len()), Some(pid)).unwrap();
                parent.push(Some(i));
                status.push(STARTED);
            }
            2 => {
                reg.complete_process(pid, ExitStatus::Success).unwrap();
                status[i] = COMPLETED;
            }
            _ => {
                reg.abort_process(pid, ExecutionOutcome::UnhandledError).unwrap();
                status[i] = ABORTED;
            }
        }
    }
    (reg, parent, status)
}

fn oracle_audit(parent: &[Option<usize>], status: &[u8]) -> Vec<StateViolationReason> {
    let mut out = Vec::new();
    if status[0] != COMPLETED {
        out.push(StateViolationReason::IncompleteRoot(1));
    }
    for v in 1..parent.len() {
        let mut cur = v;
        while let Some(p) = parent[cur] {
            cur = p;
        }
        if cur != 0 {
            continue;
        }
        let pid = v as u32 + 1;
        let p = parent[v].unwrap();
        if status[v] == STARTED && status[p] == ABORTED {
            out.push(StateViolationReason::OrphanChild(pid));
        }
        if status[v] != COMPLETED {
            out.push(StateViolationReason::DanglingChild(pid));
        }
    }
    out
}

fn engine_with(bodies: &[String]) -> (tempfile::TempDir, Engine) {
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path().join("store")).unwrap();
    store.set_sync(false);
    let key = KeyPair::from_label("acme");
    store
        .register_principal(Principal::new("acme", key.public_key().to_vec(), 0.5, PrincipalKind::Vendor).unwrap())
        .unwrap();
    for (i, body) in bodies.iter().enumerate() {
        let code = CodeUnit::signed(&format!("c{i}"), "acme", body.as_bytes(), 1.0, &key).unwrap();
        install(&mut store, code, false).unwrap();
    }
    (dir, Engine::new(store, AlgorithmParams::default()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn history_only_grows(
        bodies in prop::collection::vec(workload(), 1..4),
        picks in prop::collection::vec(any::<usize>(), 1..25),
    ) {
        let (_dir, mut engine) = engine_with(&bodies);
        let path = engine.store().dir().join(HISTORY_FILE);
        let mut before = fs::read(&path).unwrap_or_default();
        for pick in picks {
            let report = engine.run(&format!("c{}", pick % bodies.len())).unwrap();
            let after = fs::read(&path).unwrap_or_default();
            prop_assert!(after.starts_with(&before));
            if report.outcome.is_some() {
                prop_assert!(after.len() > before.len());
            } else {
                prop_assert_eq!(after.len(), before.len());
            }
            before = after;
        }
    }

    #[test]
    fn replay_rebuilds_the_live_state(
        bodies in prop::collection::vec(workload(), 1..4),
        picks in prop::collection::vec(any::<usize>(), 1..25),
    ) {
        let (_dir, mut engine) = engine_with(&bodies);
        for pick in picks {
            engine.run(&format!("c{}", pick % bodies.len())).unwrap();
        }
        let live = engine.store().history().cached_aggregates();
        let dir = engine.store().dir().to_path_buf();
        let records: Vec<TrustRecord> =
            (0..bodies.len()).map(|i| engine.store().trust_record(&format!("c{i}")).unwrap().clone()).collect();
        drop(engine);

        prop_assert_eq!(&replay(&dir.join(HISTORY_FILE)).unwrap(), &live);
        let reopened = Store::open(&dir).unwrap();
        for (i, want) in records.iter().enumerate() {
            prop_assert_eq!(reopened.trust_record(&format!("c{i}")).unwrap(), want);
        }
    }
}
