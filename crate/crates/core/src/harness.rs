//! Simulated CPU: parses instruction workloads and interprets them under a
//! trust-level access matrix, driving the state registry.
//!
//! Workload scripts have one instruction per line; `#` starts a comment.
//!
//! ```text
//! COMPUTE <cost>
//! READ <class> <name>        class: system | protected | user | sandbox
//! WRITE <class> <name>
//! FORK <child_code_id>
//! RAISE_HANDLED
//! RAISE_UNHANDLED
//! EXIT success|failure
//! ```

use std::fmt;

use serde::Serialize;

use crate::model::{CodeUnit, ExecutionOutcome, ResourceClass, TrustLevel};
use crate::registry::{ExitStatus, Pid, Registry, RegistryError, RegistryEvent, StateViolationReason};

/// Upper bound on processes per run; wider fork trees are trapped.
pub const MAX_PROCESSES: usize = 1024;
/// Upper bound on fork nesting.
pub const MAX_FORK_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Compute(u64),
    Read(ResourceClass, String),
    Write(ResourceClass, String),
    Fork(String),
    RaiseHandled,
    RaiseUnhandled,
    Exit(ExitStatus),
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Compute(c) => write!(f, "COMPUTE {c}"),
            Instruction::Read(class, name) => write!(f, "READ {class} {name}"),
            Instruction::Write(class, name) => write!(f, "WRITE {class} {name}"),
            Instruction::Fork(child) => write!(f, "FORK {child}"),
            Instruction::RaiseHandled => f.write_str("RAISE_HANDLED"),
            Instruction::RaiseUnhandled => f.write_str("RAISE_UNHANDLED"),
            Instruction::Exit(s) => write!(f, "EXIT {}", s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ParseError: line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Parse a workload script. Blank and comment-only lines do not count as
/// instruction lines.
pub fn parse_workload(body: &[u8]) -> Result<Vec<Instruction>, ParseError> {
    let text = std::str::from_utf8(body).map_err(|e| ParseError {
        line: 1 + body[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
        message: "workload is not valid UTF-8".into(),
    })?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = code.split_whitespace().collect();
        let Some((&op, args)) = tokens.split_first() else {
            continue;
        };
        let err = |message: String| ParseError { line, message };
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(format!("{op} takes {n} argument(s), got {}", args.len())))
            }
        };
        let class = |s: &str| {
            s.parse::<ResourceClass>()
                .map_err(|_| err(format!("unknown resource class {s:?}")))
        };
        let ins = match op {
            "COMPUTE" => {
                arity(1)?;
                let cost: u64 = args[0]
                    .parse()
                    .map_err(|_| err(format!("COMPUTE cost {:?} is not a positive integer", args[0])))?;
                if cost == 0 {
                    return Err(err("COMPUTE cost must be positive".into()));
                }
                Instruction::Compute(cost)
            }
            "READ" => {
                arity(2)?;
                Instruction::Read(class(args[0])?, args[1].to_string())
            }
            "WRITE" => {
                arity(2)?;
                Instruction::Write(class(args[0])?, args[1].to_string())
            }
            "FORK" => {
                arity(1)?;
                Instruction::Fork(args[0].to_string())
            }
            "RAISE_HANDLED" => {
                arity(0)?;
                Instruction::RaiseHandled
            }
            "RAISE_UNHANDLED" => {
                arity(0)?;
                Instruction::RaiseUnhandled
            }
            "EXIT" => {
                arity(1)?;
                match args[0] {
                    "success" => Instruction::Exit(ExitStatus::Success),
                    "failure" => Instruction::Exit(ExitStatus::Failure),
                    other => return Err(err(format!("EXIT status {other:?} is not success|failure"))),
                }
            }
            other => return Err(err(format!("unknown opcode {other:?}"))),
        };
        out.push(ins);
    }
    Ok(out)
}

/// Render instructions back to script text.
pub fn render_workload(instructions: &[Instruction]) -> String {
    instructions.iter().map(|i| format!("{i}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessOp {
    Read,
    Write,
}

impl AccessOp {
    pub const ALL: [AccessOp; 2] = [AccessOp::Read, AccessOp::Write];

    pub fn as_str(self) -> &'static str {
        match self {
            AccessOp::Read => "read",
            AccessOp::Write => "write",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("grants shrink from {lower} to {higher} on {class} {op}")]
    NotMonotone {
        lower: TrustLevel,
        higher: TrustLevel,
        class: ResourceClass,
        op: &'static str,
    },
    #[error("the denied level must not be granted anything")]
    DeniedGranted,
}

/// `(level, class, op) -> allow|deny`, monotone in trust.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessMatrix {
    grants: [[[bool; 2]; 4]; 5],
}

impl Default for AccessMatrix {
    /// Operational: everything. Transitional: System read-only, all other
    /// classes read/write. Verifiable: User and Sandbox. Untrustable: Sandbox
    /// only. Denied: nothing.
    fn default() -> Self {
        use ResourceClass::*;
        let mut m = Self::empty();
        for class in ResourceClass::ALL {
            m.grant(TrustLevel::Operational, class, AccessOp::Read);
            m.grant(TrustLevel::Operational, class, AccessOp::Write);
        }
        m.grant(TrustLevel::Transitional, System, AccessOp::Read);
        for class in [ProtectedUser, User, Sandbox] {
            for op in AccessOp::ALL {
                m.grant(TrustLevel::Transitional, class, op);
            }
        }
        for class in [User, Sandbox] {
            for op in AccessOp::ALL {
                m.grant(TrustLevel::Verifiable, class, op);
            }
        }
        for op in AccessOp::ALL {
            m.grant(TrustLevel::Untrustable, Sandbox, op);
        }
        m
    }
}

impl AccessMatrix {
    pub fn empty() -> Self {
        Self {
            grants: [[[false; 2]; 4]; 5],
        }
    }

    pub fn grant(&mut self, level: TrustLevel, class: ResourceClass, op: AccessOp) -> &mut Self {
        self.grants[level as usize][class as usize][op as usize] = true;
        self
    }

    pub fn revoke(&mut self, level: TrustLevel, class: ResourceClass, op: AccessOp) -> &mut Self {
        self.grants[level as usize][class as usize][op as usize] = false;
        self
    }

    pub fn check(&self, level: TrustLevel, class: ResourceClass, op: AccessOp) -> Access {
        if self.grants[level as usize][class as usize][op as usize] {
            Access::Allow
        } else {
            Access::Deny
        }
    }

    /// Reject matrices where a higher level holds fewer grants than a lower one.
    pub fn validate(&self) -> Result<(), MatrixError> {
        for class in ResourceClass::ALL {
            for op in AccessOp::ALL {
                if self.check(TrustLevel::Denied, class, op) == Access::Allow {
                    return Err(MatrixError::DeniedGranted);
                }
                for pair in TrustLevel::ALL.windows(2) {
                    let (lower, higher) = (pair[0], pair[1]);
                    if self.check(lower, class, op) == Access::Allow
                        && self.check(higher, class, op) == Access::Deny
                    {
                        return Err(MatrixError::NotMonotone {
                            lower,
                            higher,
                            class,
                            op: op.as_str(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Access decision under the default matrix.
pub fn check_access(level: TrustLevel, class: ResourceClass, op: AccessOp) -> Access {
    AccessMatrix::default().check(level, class, op)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TraceKind {
    Process(RegistryEvent),
    Compute { pid: Pid, cost: u64 },
    Access { pid: Pid, level: TrustLevel, op: AccessOp, class: ResourceClass, name: String },
    Denied { pid: Pid, level: TrustLevel, op: AccessOp, class: ResourceClass, name: String },
    Raise { pid: Pid, handled: bool },
    ForkRefused { pid: Pid, child: String, reason: ExecutionOutcome },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: TraceKind,
}

impl TraceEvent {
    /// The resource class this event actually accessed. Refused accesses
    /// touch nothing.
    pub fn touched_class(&self) -> Option<ResourceClass> {
        match &self.kind {
            TraceKind::Access { class, .. } => Some(*class),
            _ => None,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq = self.seq;
        match &self.kind {
            TraceKind::Process(e) => f.write_str(&e.render_with_seq(seq)),
            TraceKind::Compute { pid, cost } => write!(f, "EVT {seq} COMPUTE pid={pid} cost={cost}"),
            TraceKind::Access { pid, level, op, class, name } => write!(
                f,
                "EVT {seq} {} pid={pid} level={level} class={class} name={name}",
                op.as_str().to_uppercase()
            ),
            TraceKind::Denied { pid, level, op, class, name } => write!(
                f,
                "EVT {seq} DENY pid={pid} level={level} op={} class={class} name={name}",
                op.as_str()
            ),
            TraceKind::Raise { pid, handled } => write!(
                f,
                "EVT {seq} RAISE pid={pid} handled={handled}"
            ),
            TraceKind::ForkRefused { pid, child, reason } => write!(
                f,
                "EVT {seq} FORK_REFUSED pid={pid} child={child} status={reason:?}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExecTrace {
    pub events: Vec<TraceEvent>,
    /// Sum of all COMPUTE costs.
    pub total_cost: u64,
}

impl ExecTrace {
    fn push(&mut self, kind: TraceKind) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(TraceEvent { seq, kind });
    }

    pub fn lines(&self) -> Vec<String> {
        self.events.iter().map(ToString::to_string).collect()
    }

    pub fn render(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    /// Successful writes to System-class resources below Operational.
    pub fn system_writes_below_operational(&self) -> usize {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    &e.kind,
                    TraceKind::Access { level, op: AccessOp::Write, class: ResourceClass::System, .. }
                        if *level < TrustLevel::Operational
                )
            })
            .count()
    }
}

/// How a FORK target should be handled.
#[derive(Debug, Clone, PartialEq)]
pub enum ForkTarget {
    /// Run the child at its own effective level.
    Run { code: CodeUnit, level: TrustLevel },
    /// Refuse to start the child; the parent is aborted with this fault.
    Refuse(ExecutionOutcome),
}

/// Looks up the code unit a FORK names. `None` means no such code.
pub trait ForkResolver {
    fn resolve(&mut self, code_id: &str) -> Option<ForkTarget>;
}

impl<F> ForkResolver for F
where
    F: FnMut(&str) -> Option<ForkTarget>,
{
    fn resolve(&mut self, code_id: &str) -> Option<ForkTarget> {
        self(code_id)
    }
}

/// Resolver for workloads that never fork.
pub struct NoForks;

impl ForkResolver for NoForks {
    fn resolve(&mut self, _code_id: &str) -> Option<ForkTarget> {
        None
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{code_id}: {source}")]
    Parse { code_id: String, source: ParseError },
    #[error("ForkTargetUnknown: {0:?}")]
    ForkTargetUnknown(String),
    #[error("refusing to execute {0:?} at the denied level")]
    DeniedLevel(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Execution {
    pub outcome: ExecutionOutcome,
    pub root_pid: Pid,
    pub audit: Vec<StateViolationReason>,
    pub trace: ExecTrace,
}

/// Interpret `code` at `level`.
///
/// READ/WRITE consult the matrix; a denial aborts the process with an
/// access violation. FORK runs the child depth-first to its end at the
/// child's own level before the parent resumes; faults in a child abort the
/// child only. RAISE_UNHANDLED aborts the process, RAISE_HANDLED (and
/// `EXIT failure`) mark the run as having handled an error, EXIT completes
/// the process. Afterwards the registry is audited: any process left
/// running is a state violation. The run's outcome is the highest-precedence
/// condition observed.
pub fn execute(
    code: &CodeUnit,
    level: TrustLevel,
    registry: &mut Registry,
    matrix: &AccessMatrix,
    resolver: &mut dyn ForkResolver,
) -> Result<Execution, HarnessError> {
    if level == TrustLevel::Denied {
        return Err(HarnessError::DeniedLevel(code.code_id.clone()));
    }
    let mut cpu = Cpu {
        registry,
        matrix,
        resolver,
        trace: ExecTrace::default(),
        faults: Vec::new(),
        handled: false,
    };
    let root_pid = cpu.run_process(code, level, None, 0)?;
    let Cpu { registry, trace, mut faults, handled, .. } = cpu;

    let audit = registry.audit(root_pid)?;
    // Processes aborted by a trapped fault are already accounted for by that
    // fault; anything still running is a state violation.
    let unexplained = audit.iter().any(|r| {
        registry
            .entry(r.pid())
            .is_some_and(|e| e.status == crate::registry::ProcessStatus::Started)
    });
    if unexplained {
        faults.push(ExecutionOutcome::StateViolation);
    }
    if handled {
        faults.push(ExecutionOutcome::HandledError);
    }
    Ok(Execution {
        outcome: ExecutionOutcome::classify(faults),
        root_pid,
        audit,
        trace,
    })
}

struct Cpu<'a> {
    registry: &'a mut Registry,
    matrix: &'a AccessMatrix,
    resolver: &'a mut dyn ForkResolver,
    trace: ExecTrace,
    faults: Vec<ExecutionOutcome>,
    handled: bool,
}

impl Cpu<'_> {
    fn record_process_event(&mut self) {
        let event = self.registry.events().last().expect("registry emitted an event").clone();
        self.trace.push(TraceKind::Process(event));
    }

    fn abort(&mut self, pid: Pid, fault: ExecutionOutcome) -> Result<(), HarnessError> {
        self.registry.abort_process(pid, fault)?;
        self.record_process_event();
        self.faults.push(fault);
        Ok(())
    }

    fn run_process(
        &mut self,
        code: &CodeUnit,
        level: TrustLevel,
        parent: Option<Pid>,
        depth: usize,
    ) -> Result<Pid, HarnessError> {
        let program = parse_workload(&code.body).map_err(|source| HarnessError::Parse {
            code_id: code.code_id.clone(),
            source,
        })?;
        let pid = self.registry.begin_process(&code.code_id, parent)?;
        self.record_process_event();

        for ins in program {
            match ins {
                Instruction::Compute(cost) => {
                    self.trace.total_cost += cost;
                    self.trace.push(TraceKind::Compute { pid, cost });
                }
                Instruction::Read(class, name) => {
                    if !self.access(pid, level, AccessOp::Read, class, name)? {
                        return Ok(pid);
                    }
                }
                Instruction::Write(class, name) => {
                    if !self.access(pid, level, AccessOp::Write, class, name)? {
                        return Ok(pid);
                    }
                }
                Instruction::Fork(child_id) => {
                    if self.registry.len() >= MAX_PROCESSES || depth + 1 >= MAX_FORK_DEPTH {
                        self.trace.push(TraceKind::ForkRefused {
                            pid,
                            child: child_id,
                            reason: ExecutionOutcome::StateViolation,
                        });
                        self.abort(pid, ExecutionOutcome::StateViolation)?;
                        return Ok(pid);
                    }
                    match self.resolver.resolve(&child_id) {
                        None => return Err(HarnessError::ForkTargetUnknown(child_id)),
                        Some(ForkTarget::Refuse(reason)) => {
                            self.trace.push(TraceKind::ForkRefused { pid, child: child_id, reason });
                            self.abort(pid, reason)?;
                            return Ok(pid);
                        }
                        Some(ForkTarget::Run { level: TrustLevel::Denied, .. }) => {
                            let reason = ExecutionOutcome::AccessViolation;
                            self.trace.push(TraceKind::ForkRefused { pid, child: child_id, reason });
                            self.abort(pid, reason)?;
                            return Ok(pid);
                        }
                        Some(ForkTarget::Run { code: child, level: child_level }) => {
                            self.run_process(&child, child_level, Some(pid), depth + 1)?;
                        }
                    }
                }
                Instruction::RaiseHandled => {
                    self.handled = true;
                    self.trace.push(TraceKind::Raise { pid, handled: true });
                }
                Instruction::RaiseUnhandled => {
                    self.trace.push(TraceKind::Raise { pid, handled: false });
                    self.abort(pid, ExecutionOutcome::UnhandledError)?;
                    return Ok(pid);
                }
                Instruction::Exit(status) => {
                    if status == ExitStatus::Failure {
                        self.handled = true;
                    }
                    self.registry.complete_process(pid, status)?;
                    self.record_process_event();
                    return Ok(pid);
                }
            }
        }
        // Fell off the end without EXIT: the process stays Started.
        Ok(pid)
    }

    fn access(
        &mut self,
        pid: Pid,
        level: TrustLevel,
        op: AccessOp,
        class: ResourceClass,
        name: String,
    ) -> Result<bool, HarnessError> {
        match self.matrix.check(level, class, op) {
            Access::Allow => {
                self.trace.push(TraceKind::Access { pid, level, op, class, name });
                Ok(true)
            }
            Access::Deny => {
                self.trace.push(TraceKind::Denied { pid, level, op, class, name });
                self.abort(pid, ExecutionOutcome::AccessViolation)?;
                Ok(false)
            }
        }
    }
}
