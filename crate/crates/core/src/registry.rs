//! State management registry: tracks simulated processes from begin through
//! fork to completion, and audits that a run finished start to finish.

use std::fmt;

use serde::Serialize;

use crate::model::ExecutionOutcome;

pub type Pid = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitStatus {
    Success,
    Failure,
}

impl ExitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatus::Success => "success",
            ExitStatus::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProcessStatus {
    Started,
    Completed(ExitStatus),
    /// Trapped and terminated because of the given fault.
    Aborted(ExecutionOutcome),
}

impl ProcessStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, ProcessStatus::Started)
    }

    pub fn is_completed(self) -> bool {
        matches!(self, ProcessStatus::Completed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessEntry {
    pub pid: Pid,
    pub code_id: String,
    pub parent_pid: Option<Pid>,
    pub status: ProcessStatus,
    pub children: Vec<Pid>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("UnknownParent: pid {0}")]
    UnknownParent(Pid),
    #[error("ParentNotRunning: pid {0}")]
    ParentNotRunning(Pid),
    #[error("UnknownPid: {0}")]
    UnknownPid(Pid),
    #[error("AlreadyTerminal: pid {0}")]
    AlreadyTerminal(Pid),
}

/// Why an audited process tree did not run to completion. Sorted by pid,
/// then in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum StateViolationReason {
    /// The audited root is not Completed.
    IncompleteRoot(Pid),
    /// A child still running although its parent was aborted.
    OrphanChild(Pid),
    /// A descendant that never completed.
    DanglingChild(Pid),
}

impl StateViolationReason {
    pub fn pid(self) -> Pid {
        match self {
            Self::IncompleteRoot(p) | Self::OrphanChild(p) | Self::DanglingChild(p) => p,
        }
    }

    fn rank(self) -> u8 {
        match self {
            Self::IncompleteRoot(_) => 0,
            Self::OrphanChild(_) => 1,
            Self::DanglingChild(_) => 2,
        }
    }
}

impl fmt::Display for StateViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IncompleteRoot(p) => write!(f, "IncompleteRoot({p})"),
            Self::OrphanChild(p) => write!(f, "OrphanChild({p})"),
            Self::DanglingChild(p) => write!(f, "DanglingChild({p})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegistryEventKind {
    Begin,
    Complete(ExitStatus),
    Abort(ExecutionOutcome),
}

/// A lifecycle event, rendered as
/// `EVT <seq> BEGIN|COMPLETE|ABORT pid=<p> parent=<q|-> code=<id> [status=<s>]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistryEvent {
    pub seq: u64,
    pub kind: RegistryEventKind,
    pub pid: Pid,
    pub parent: Option<Pid>,
    pub code_id: String,
}

impl RegistryEvent {
    /// Render with an explicit sequence number (the harness numbers events
    /// across its whole trace).
    pub fn render_with_seq(&self, seq: u64) -> String {
        let parent = self
            .parent
            .map_or_else(|| "-".to_string(), |p| p.to_string());
        let head = format!("pid={} parent={} code={}", self.pid, parent, self.code_id);
        match self.kind {
            RegistryEventKind::Begin => format!("EVT {seq} BEGIN {head}"),
            RegistryEventKind::Complete(s) => format!("EVT {seq} COMPLETE {head} status={}", s.as_str()),
            RegistryEventKind::Abort(o) => format!("EVT {seq} ABORT {head} status={o:?}"),
        }
    }
}

impl fmt::Display for RegistryEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_with_seq(self.seq))
    }
}

/// Per-run process table. Pids start at 1 and are never reused.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<ProcessEntry>,
    events: Vec<RegistryEvent>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, pid: Pid) -> Option<&ProcessEntry> {
        (pid as usize)
            .checked_sub(1)
            .and_then(|i| self.entries.get(i))
    }

    fn entry_mut(&mut self, pid: Pid) -> Option<&mut ProcessEntry> {
        (pid as usize)
            .checked_sub(1)
            .and_then(|i| self.entries.get_mut(i))
    }

    pub fn entries(&self) -> &[ProcessEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn events(&self) -> &[RegistryEvent] {
        &self.events
    }

    fn push_event(&mut self, kind: RegistryEventKind, pid: Pid) -> &RegistryEvent {
        let entry = &self.entries[pid as usize - 1];
        let event = RegistryEvent {
            seq: self.events.len() as u64 + 1,
            kind,
            pid,
            parent: entry.parent_pid,
            code_id: entry.code_id.clone(),
        };
        self.events.push(event);
        self.events.last().expect("just pushed")
    }

    pub fn begin_process(&mut self, code_id: &str, parent: Option<Pid>) -> Result<Pid, RegistryError> {
        if let Some(ppid) = parent {
            let p = self.entry(ppid).ok_or(RegistryError::UnknownParent(ppid))?;
            if p.status.is_terminal() {
                return Err(RegistryError::ParentNotRunning(ppid));
            }
        }
        let pid = self.entries.len() as Pid + 1;
        self.entries.push(ProcessEntry {
            pid,
            code_id: code_id.to_string(),
            parent_pid: parent,
            status: ProcessStatus::Started,
            children: Vec::new(),
        });
        if let Some(ppid) = parent {
            self.entry_mut(ppid).expect("checked").children.push(pid);
        }
        self.push_event(RegistryEventKind::Begin, pid);
        Ok(pid)
    }

    pub fn complete_process(&mut self, pid: Pid, status: ExitStatus) -> Result<&ProcessEntry, RegistryError> {
        self.finish(pid, ProcessStatus::Completed(status), RegistryEventKind::Complete(status))
    }

    pub fn abort_process(&mut self, pid: Pid, reason: ExecutionOutcome) -> Result<&ProcessEntry, RegistryError> {
        self.finish(pid, ProcessStatus::Aborted(reason), RegistryEventKind::Abort(reason))
    }

    fn finish(
        &mut self,
        pid: Pid,
        status: ProcessStatus,
        kind: RegistryEventKind,
    ) -> Result<&ProcessEntry, RegistryError> {
        let entry = self.entry_mut(pid).ok_or(RegistryError::UnknownPid(pid))?;
        if entry.status.is_terminal() {
            return Err(RegistryError::AlreadyTerminal(pid));
        }
        entry.status = status;
        self.push_event(kind, pid);
        Ok(self.entry(pid).expect("exists"))
    }

    /// Audit the tree rooted at `root`: empty iff the root and all of its
    /// transitive children are Completed.
    pub fn audit(&self, root: Pid) -> Result<Vec<StateViolationReason>, RegistryError> {
        let root_entry = self.entry(root).ok_or(RegistryError::UnknownPid(root))?;
        let mut reasons = Vec::new();
        if !root_entry.status.is_completed() {
            reasons.push(StateViolationReason::IncompleteRoot(root));
        }
        let mut stack: Vec<Pid> = root_entry.children.clone();
        while let Some(pid) = stack.pop() {
            let entry = self.entry(pid).expect("children reference existing pids");
            if !entry.status.is_completed() {
                reasons.push(StateViolationReason::DanglingChild(pid));
            }
            if entry.status == ProcessStatus::Started {
                let parent = entry.parent_pid.and_then(|p| self.entry(p));
                if parent.is_some_and(|p| matches!(p.status, ProcessStatus::Aborted(_))) {
                    reasons.push(StateViolationReason::OrphanChild(pid));
                }
            }
            stack.extend(entry.children.iter().copied());
        }
        reasons.sort_by_key(|r| (r.pid(), r.rank()));
        reasons.dedup();
        Ok(reasons)
    }
}
