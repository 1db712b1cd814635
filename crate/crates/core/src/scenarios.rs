//! Scripted attack stories replayed against a private store.
//!
//! Each scenario installs its own principals and code, drives the engine and
//! checks the expected mitigation: verdicts, demotions, refused updates and an
//! unchanged store. Keys are derived from fixed labels so transcripts are
//! reproducible byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::algorithm::AlgorithmParams;
use crate::analysis::fmt_sig;
use crate::engine::{Engine, EngineError, ExecutionReport};
use crate::integrity::{authorize_update, install, sign_manifest, IntegrityError, KeyPair, Manifest};
use crate::model::{
    CodeUnit, ExecMode, ExecutionOutcome, Principal, PrincipalKind, TrustLevel,
};
use crate::registry::StateViolationReason;
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioName {
    ServiceDisruption,
    PrivilegeEscalation,
    DataTheft,
    SystemCorruption,
    ProtocolExploitation,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::ServiceDisruption,
        ScenarioName::PrivilegeEscalation,
        ScenarioName::DataTheft,
        ScenarioName::SystemCorruption,
        ScenarioName::ProtocolExploitation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::ServiceDisruption => "service-disruption",
            ScenarioName::PrivilegeEscalation => "privilege-escalation",
            ScenarioName::DataTheft => "data-theft",
            ScenarioName::SystemCorruption => "system-corruption",
            ScenarioName::ProtocolExploitation => "protocol-exploitation",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ScenarioError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("UnknownScenario: {0:?} (expected one of service-disruption, privilege-escalation, data-theft, system-corruption, protocol-exploitation)")]
    UnknownScenario(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("scenario setup: {0}")]
    Setup(String),
    #[error("scenario io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expectation {
    pub description: String,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: ScenarioName,
    pub expectations: Vec<Expectation>,
    pub transcript: Vec<String>,
    /// Where the store was kept, when requested.
    pub store_dir: Option<PathBuf>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.passed)
    }

    pub fn transcript_text(&self) -> String {
        self.transcript.iter().map(|l| format!("{l}\n")).collect()
    }

    /// One `PASS`/`FAIL` line per expectation.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for e in &self.expectations {
            let tag = if e.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", self.name, e.description));
        }
        out
    }
}

/// Run a scenario in a fresh temporary directory that is removed afterwards.
pub fn run_scenario(name: &str) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_with(name, false)
}

/// Run a scenario, optionally keeping its temporary directory.
pub fn run_scenario_with(name: &str, keep: bool) -> Result<ScenarioReport, ScenarioError> {
    let name: ScenarioName = name.parse()?;
    let tmp = tempfile::Builder::new().prefix("etrust-scenario-").tempdir()?;
    let mut report = run_scenario_in(name, tmp.path())?;
    if keep {
        report.store_dir = Some(tmp.keep().join("store"));
    }
    Ok(report)
}

/// Run a scenario with its store at `<dir>/store` and its transcript at
/// `<dir>/transcript.txt`.
pub fn run_scenario_in(name: ScenarioName, dir: &Path) -> Result<ScenarioReport, ScenarioError> {
    let store_dir = dir.join("store");
    let mut store = Store::open(&store_dir)?;
    store.set_sync(false);
    let mut ctx = Ctx {
        engine: Engine::new(store, AlgorithmParams::default()),
        report: ScenarioReport {
            name,
            expectations: Vec::new(),
            transcript: Vec::new(),
            store_dir: None,
        },
        system_writes: 0,
    };
    ctx.log(format!("scenario {name}"));
    match name {
        ScenarioName::ServiceDisruption => service_disruption(&mut ctx)?,
        ScenarioName::PrivilegeEscalation => privilege_escalation(&mut ctx)?,
        ScenarioName::DataTheft => data_theft(&mut ctx)?,
        ScenarioName::SystemCorruption => system_corruption(&mut ctx)?,
        ScenarioName::ProtocolExploitation => protocol_exploitation(&mut ctx)?,
    }
    let writes = ctx.system_writes;
    ctx.expect(
        "no System-class write by code below Operational",
        writes == 0,
    );
    let report = ctx.report;
    fs::write(dir.join("transcript.txt"), report.transcript_text())?;
    Ok(report)
}

struct Ctx {
    engine: Engine,
    report: ScenarioReport,
    system_writes: usize,
}

impl Ctx {
    fn log(&mut self, line: String) {
        self.report.transcript.push(line);
    }

    fn expect(&mut self, description: &str, passed: bool) {
        let tag = if passed { "PASS" } else { "FAIL" };
        self.log(format!("expect {tag} {description}"));
        self.report.expectations.push(Expectation {
            description: description.to_string(),
            passed,
        });
    }

    fn principal(&mut self, id: &str, trust: f64) -> Result<KeyPair, ScenarioError> {
        let key = KeyPair::from_label(id);
        let p = Principal::new(id, key.public_key().to_vec(), trust, PrincipalKind::Vendor)
            .map_err(|e| ScenarioError::Setup(e.to_string()))?;
        self.engine.store_mut().register_principal(p)?;
        self.log(format!("principal {id} owner_trust={}", fmt_sig(trust)));
        Ok(key)
    }

    fn install(&mut self, code: CodeUnit, as_system: bool) -> Result<(), ScenarioError> {
        let id = code.code_id.clone();
        let signed = code.signature.is_some();
        let record = install(self.engine.store_mut(), code, as_system)?;
        self.log(format!(
            "install {id} signed={signed} system={as_system} level={} score={}",
            record.effective_level,
            fmt_sig(record.transactional_score)
        ));
        Ok(())
    }

    fn run(&mut self, code_id: &str) -> Result<ExecutionReport, ScenarioError> {
        let r = self.engine.run(code_id)?;
        if let Some(trace) = &r.trace {
            self.system_writes += trace.system_writes_below_operational();
        }
        let decision = match r.verdict.mode() {
            Some(mode) => format!("EXECUTE({})", mode_str(mode)),
            None => "DENY".to_string(),
        };
        let outcome = r.outcome.map_or("-".to_string(), |o| format!("{o:?}"));
        self.log(format!(
            "run {code_id} seq={} verdict={decision} outcome={outcome} score={} level={}",
            r.seq.map_or("-".to_string(), |s| s.to_string()),
            fmt_sig(r.score_after),
            r.record_after.effective_level
        ));
        Ok(r)
    }

    fn level(&self, code_id: &str) -> Option<TrustLevel> {
        self.engine
            .store()
            .trust_record(code_id)
            .map(|r| r.effective_level)
    }
}

fn mode_str(mode: ExecMode) -> &'static str {
    match mode {
        ExecMode::Full => "full",
        ExecMode::Standard => "standard",
        ExecMode::Sandbox => "sandbox",
    }
}

/// Run `code_id` until it is denied or `max` runs have happened. Returns the
/// reports of the runs that executed, plus the 1-based run at which the code
/// first reached Denied.
fn run_until_denied(
    ctx: &mut Ctx,
    code_id: &str,
    max: usize,
) -> Result<(Vec<ExecutionReport>, Option<usize>), ScenarioError> {
    let mut reports = Vec::new();
    for i in 1..=max {
        let r = ctx.run(code_id)?;
        let denied = r.record_after.effective_level == TrustLevel::Denied;
        reports.push(r);
        if denied {
            return Ok((reports, Some(i)));
        }
    }
    Ok((reports, None))
}

fn service_disruption(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let vendor = ctx.principal("acme", 0.9)?;
    ctx.principal("anon", 0.5)?;
    ctx.install(
        CodeUnit::signed(
            "server",
            "acme",
            b"READ system config\nCOMPUTE 20\nWRITE user sessions\nEXIT success\n",
            2.0,
            &vendor,
        )?,
        true,
    )?;
    // A client hammering the server's resources without any signature.
    ctx.install(
        CodeUnit::unsigned(
            "client",
            "anon",
            b"COMPUTE 1000\nREAD user sessions\nWRITE user sessions\nEXIT success\n",
            1.0,
        )?,
        false,
    )?;

    let mut server_ok = true;
    let mut refused_ok = true;
    let mut flood = Vec::new();
    let mut denied_at = None;
    for i in 1..=30 {
        if denied_at.is_none() {
            let r = ctx.run("client")?;
            if r.record_after.effective_level == TrustLevel::Denied {
                denied_at = Some(i);
            }
            flood.push(r);
        } else {
            let r = ctx.run("client")?;
            refused_ok &= r.verdict.is_deny() && r.seq.is_none();
        }
        let s = ctx.run("server")?;
        server_ok &= s.outcome == Some(ExecutionOutcome::Success)
            && s.record_after.effective_level == TrustLevel::Operational;
    }
    ctx.expect(
        "client runs only in the sandbox",
        flood.iter().all(|r| r.verdict.mode() == Some(ExecMode::Sandbox)),
    );
    ctx.expect(
        "client attempts on user resources are AccessViolations",
        flood
            .iter()
            .all(|r| r.outcome == Some(ExecutionOutcome::AccessViolation)),
    );
    ctx.expect(
        "client is demoted to Denied within 10 runs",
        matches!(denied_at, Some(i) if i <= 10),
    );
    ctx.expect("denied client is refused without being recorded", refused_ok);
    ctx.expect("server stays Operational and succeeds throughout", server_ok);
    Ok(())
}

fn privilege_escalation(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let key = ctx.principal("toolsmith", 0.5)?;
    ctx.install(
        CodeUnit::signed(
            "parser",
            "toolsmith",
            b"READ sandbox input\nRAISE_UNHANDLED\nWRITE system kernel\nEXIT success\n",
            1.0,
            &key,
        )?,
        false,
    )?;
    ctx.install(
        CodeUnit::signed(
            "escalator",
            "toolsmith",
            b"COMPUTE 5\nWRITE system passwd\nEXIT success\n",
            1.0,
            &key,
        )?,
        false,
    )?;

    let (parser, parser_denied) = run_until_denied(ctx, "parser", 20)?;
    let (escalator, escalator_denied) = run_until_denied(ctx, "escalator", 20)?;

    ctx.expect(
        "crashing parser records UnhandledError on every run",
        parser
            .iter()
            .all(|r| r.outcome == Some(ExecutionOutcome::UnhandledError)),
    );
    ctx.expect(
        "system write attempts record AccessViolation on every run",
        escalator
            .iter()
            .all(|r| r.outcome == Some(ExecutionOutcome::AccessViolation)),
    );
    ctx.expect(
        "parser is Untrustable at run 10",
        parser.get(9).map(|r| r.record_after.effective_level) == Some(TrustLevel::Untrustable),
    );
    ctx.expect("parser is Denied at run 20", parser_denied == Some(20));
    ctx.expect("escalator is Denied at run 20", escalator_denied == Some(20));
    let r = ctx.run("escalator")?;
    ctx.expect("denied escalator gets a DENY verdict", r.verdict.is_deny());
    Ok(())
}

fn data_theft(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let key = ctx.principal("acme", 0.8)?;
    ctx.principal("stranger", 0.5)?;
    ctx.install(
        CodeUnit::unsigned(
            "trojan",
            "stranger",
            b"READ sandbox scratch\nREAD protected wallet\nWRITE sandbox loot\nEXIT success\n",
            1.0,
        )?,
        false,
    )?;
    ctx.install(
        CodeUnit::signed(
            "mailer",
            "acme",
            b"READ user contacts\nREAD protected wallet\nEXIT success\n",
            1.0,
            &key,
        )?,
        false,
    )?;
    ctx.install(
        CodeUnit::signed(
            "notes",
            "acme",
            b"READ user notes\nWRITE user notes\nEXIT success\n",
            1.0,
            &key,
        )?,
        false,
    )?;

    let verdict = ctx.engine.evaluate("trojan")?;
    ctx.log(format!(
        "evaluate trojan mode={}",
        verdict.mode().map_or("-", mode_str)
    ));
    ctx.expect(
        "unsigned trojan gets a Sandbox verdict",
        verdict.mode() == Some(ExecMode::Sandbox),
    );
    let r = ctx.run("trojan")?;
    ctx.expect(
        "trojan's protected read is an AccessViolation",
        r.outcome == Some(ExecutionOutcome::AccessViolation),
    );
    let leaked = r.trace.as_ref().is_some_and(|t| {
        t.events
            .iter()
            .any(|e| e.touched_class().is_some_and(|c| c != crate::model::ResourceClass::Sandbox))
    });
    ctx.expect("trojan touches nothing outside the sandbox", !leaked);

    let r = ctx.run("mailer")?;
    ctx.expect(
        "signed but unproven code is also refused protected data",
        r.verdict.mode() == Some(ExecMode::Standard)
            && r.outcome == Some(ExecutionOutcome::AccessViolation),
    );
    let r = ctx.run("notes")?;
    ctx.expect(
        "signed code keeps ordinary access to user data",
        r.outcome == Some(ExecutionOutcome::Success),
    );
    Ok(())
}

fn system_corruption(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let vendor = ctx.principal("acme", 0.9)?;
    let mallory = ctx.principal("mallory", 0.5)?;
    let v1: &[u8] = b"READ system config\nWRITE system log\nEXIT success\n";
    ctx.install(CodeUnit::signed("bootmgr", "acme", v1, 4.0, &vendor)?, true)?;
    ctx.run("bootmgr")?;

    let evil: &[u8] = b"WRITE system mbr\nWRITE system kernel\nEXIT success\n";
    let forged = Manifest::describe("bootmgr", "acme", evil, 4.0)?;
    let forged_sig = sign_manifest(&forged, &mallory)?;
    let before = ctx.engine.store().fingerprint()?;
    let accepted = authorize_update(ctx.engine.store_mut(), "bootmgr", evil, &forged, &forged_sig)?;
    let after = ctx.engine.store().fingerprint()?;
    ctx.log(format!("update bootmgr signer=mallory accepted={accepted}"));
    ctx.expect("update signed by someone else is rejected", !accepted);
    ctx.expect("rejected update leaves the store unchanged", before == after);

    let self_owned = Manifest::describe("bootmgr", "mallory", evil, 4.0)?;
    let self_sig = sign_manifest(&self_owned, &mallory)?;
    let accepted = authorize_update(ctx.engine.store_mut(), "bootmgr", evil, &self_owned, &self_sig)?;
    ctx.log(format!("update bootmgr owner=mallory accepted={accepted}"));
    ctx.expect("update claiming a different owner is rejected", !accepted);

    let v2: &[u8] = b"READ system config\nCOMPUTE 3\nWRITE system log\nEXIT success\n";
    let manifest = Manifest::describe("bootmgr", "acme", v2, 4.0)?;
    let sig = sign_manifest(&manifest, &vendor)?;
    let accepted = authorize_update(ctx.engine.store_mut(), "bootmgr", v2, &manifest, &sig)?;
    ctx.log(format!("update bootmgr signer=acme accepted={accepted}"));
    ctx.expect("update signed by the original owner is accepted", accepted);
    let r = ctx.run("bootmgr")?;
    ctx.expect(
        "updated code keeps running at Operational",
        r.outcome == Some(ExecutionOutcome::Success)
            && r.record_after.effective_level == TrustLevel::Operational,
    );

    // Corrupt the installed body behind the engine's back.
    let path = ctx.engine.store().body_path("bootmgr");
    let mut body = fs::read(&path)?;
    body[0] ^= 0x20;
    fs::write(&path, body)?;
    ctx.log("tamper bootmgr body".to_string());
    let r = ctx.run("bootmgr")?;
    ctx.expect(
        "tampered body is an IntegrityFailure",
        r.outcome == Some(ExecutionOutcome::IntegrityFailure),
    );
    ctx.expect(
        "tampered code is not executed",
        r.trace.is_none() && r.verdict.mode() == Some(ExecMode::Sandbox),
    );
    ctx.expect(
        "tampered code drops from Operational to Transitional",
        r.record_before.effective_level == TrustLevel::Operational
            && ctx.level("bootmgr") == Some(TrustLevel::Transitional),
    );
    Ok(())
}

fn protocol_exploitation(ctx: &mut Ctx) -> Result<(), ScenarioError> {
    let key = ctx.principal("netco", 0.5)?;
    ctx.install(
        CodeUnit::signed("handshake", "netco", b"COMPUTE 2\nREAD sandbox buffer\n", 1.0, &key)?,
        false,
    )?;
    ctx.install(
        CodeUnit::signed(
            "listener",
            "netco",
            b"FORK handshake\nFORK handshake\nCOMPUTE 1\nEXIT success\n",
            1.0,
            &key,
        )?,
        false,
    )?;

    let first = ctx.run("listener")?;
    let dangling = first
        .audit
        .iter()
        .filter(|r| matches!(r, StateViolationReason::DanglingChild(_)))
        .count();
    ctx.log(format!("audit listener dangling={dangling}"));
    ctx.expect(
        "children that never exit are a StateViolation",
        first.outcome == Some(ExecutionOutcome::StateViolation),
    );
    ctx.expect("both unfinished children are reported", dangling == 2);

    let (rest, denied_at) = run_until_denied(ctx, "listener", 19)?;
    ctx.expect(
        "every repetition is a StateViolation",
        rest.iter()
            .all(|r| r.outcome == Some(ExecutionOutcome::StateViolation)),
    );
    ctx.expect(
        "listener is Untrustable at run 10",
        rest.get(8).map(|r| r.record_after.effective_level) == Some(TrustLevel::Untrustable),
    );
    ctx.expect(
        "listener is Denied at run 20",
        denied_at.map(|i| i + 1) == Some(20),
    );
    Ok(())
}
