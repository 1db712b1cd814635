//! On-disk trust store.
//!
//! ```text
//! <dir>/
//!   lock              exclusive writer lock
//!   principals.jsonl  registered principals
//!   codes.jsonl       installed code: current and original owner
//!   code/<id>.etm     canonical manifest
//!   code/<id>.etw     workload body
//!   code/<id>.sig     detached signature (absent for unsigned code)
//!   trust.jsonl       current trust record per code
//!   history.jsonl     append-only execution log
//! ```
//!
//! Snapshot files are rewritten through a temp file and rename. The history
//! append is the commit point of a run: on open, any trust record that lags
//! the log is rebuilt from the newest log entry for that code.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use fs2::FileExt;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::history::{ExecutionRecord, HistoryError, HistoryLog};
use crate::integrity::{IntegrityError, Manifest};
use crate::model::{CodeUnit, FunctionalLevel, Principal, TrustRecord, SYSTEM_PRINCIPAL};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRUST_FILE: &str = "trust.jsonl";
pub const PRINCIPALS_FILE: &str = "principals.jsonl";
pub const CODES_FILE: &str = "codes.jsonl";
pub const LOCK_FILE: &str = "lock";
pub const CODE_DIR: &str = "code";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("StorageFailure: {0}")]
    Io(#[from] io::Error),
    #[error("StorageFailure: store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("StorageFailure: {file}: line {line}: {message}")]
    Corrupt {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("principal {0:?} is already registered with a different key")]
    PrincipalConflict(String),
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// Ownership metadata for installed code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstalledCode {
    pub code_id: String,
    /// Current owner; `"system"` after a system install.
    pub owner_id: String,
    /// The accountable author whose key signs the manifest.
    pub original_owner: String,
}

/// Exclusive handle on a store directory.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    _lock: File,
    principals: BTreeMap<String, Principal>,
    codes: BTreeMap<String, InstalledCode>,
    trust: BTreeMap<String, TrustRecord>,
    history: HistoryLog,
}

impl Store {
    /// Open or initialise a store, taking the writer lock.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(CODE_DIR))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        lock.try_lock_exclusive()
            .map_err(|_| StoreError::Locked(dir.clone()))?;

        let mut principals: BTreeMap<String, Principal> =
            read_jsonl::<Principal>(&dir, PRINCIPALS_FILE)?
                .into_iter()
                .map(|p| (p.id.clone(), p))
                .collect();
        let codes = read_jsonl::<InstalledCode>(&dir, CODES_FILE)?
            .into_iter()
            .map(|c| (c.code_id.clone(), c))
            .collect();
        let trust = read_jsonl::<TrustRecord>(&dir, TRUST_FILE)?
            .into_iter()
            .map(|t| (t.code_id.clone(), t))
            .collect();
        let history = HistoryLog::open(dir.join(HISTORY_FILE))?;

        let mut store = Self {
            dir,
            _lock: lock,
            principals: BTreeMap::new(),
            codes,
            trust,
            history,
        };
        if !principals.contains_key(SYSTEM_PRINCIPAL) {
            principals.insert(SYSTEM_PRINCIPAL.to_string(), Principal::system());
            store.principals = principals;
            store.write_principals()?;
        } else {
            store.principals = principals;
        }
        store.reconcile()?;
        Ok(store)
    }

    /// Bring trust records up to date with the log after an interrupted run.
    fn reconcile(&mut self) -> Result<(), StoreError> {
        let mut dirty = false;
        for (code_id, record) in self.trust.iter_mut() {
            if let Some(last) = self.history.last_record(code_id) {
                if last.seq > record.updated_seq {
                    *record = TrustRecord {
                        code_id: code_id.clone(),
                        functional_level: FunctionalLevel::for_effective(last.level_after),
                        transactional_score: last.score_after,
                        effective_level: last.level_after,
                        updated_seq: last.seq,
                    };
                    dirty = true;
                }
            }
        }
        if dirty {
            self.write_trust()?;
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn history(&self) -> &HistoryLog {
        &self.history
    }

    /// Toggle fsync on history appends (on by default).
    pub fn set_sync(&mut self, sync: bool) {
        self.history.set_sync(sync);
    }

    pub fn principal(&self, id: &str) -> Option<&Principal> {
        self.principals.get(id)
    }

    pub fn principals(&self) -> impl Iterator<Item = &Principal> {
        self.principals.values()
    }

    /// Register a principal. Re-registering identical data is a no-op.
    pub fn register_principal(&mut self, principal: Principal) -> Result<(), StoreError> {
        if let Some(existing) = self.principals.get(&principal.id) {
            if *existing == principal {
                return Ok(());
            }
            return Err(StoreError::PrincipalConflict(principal.id));
        }
        self.principals.insert(principal.id.clone(), principal);
        self.write_principals()
    }

    pub fn installed(&self, code_id: &str) -> Option<&InstalledCode> {
        self.codes.get(code_id)
    }

    pub fn code_ids(&self) -> impl Iterator<Item = &str> {
        self.codes.keys().map(String::as_str)
    }

    pub fn trust_record(&self, code_id: &str) -> Option<&TrustRecord> {
        self.trust.get(code_id)
    }

    /// Owner trust seeding the score of `code_id`: that of its original author.
    pub fn owner_trust(&self, code_id: &str) -> Option<f64> {
        let meta = self.codes.get(code_id)?;
        self.principals
            .get(&meta.original_owner)
            .map(|p| p.owner_trust)
    }

    pub fn manifest_path(&self, code_id: &str) -> PathBuf {
        self.dir.join(CODE_DIR).join(format!("{code_id}.etm"))
    }

    pub fn body_path(&self, code_id: &str) -> PathBuf {
        self.dir.join(CODE_DIR).join(format!("{code_id}.etw"))
    }

    pub fn signature_path(&self, code_id: &str) -> PathBuf {
        self.dir.join(CODE_DIR).join(format!("{code_id}.sig"))
    }

    /// Read installed code back from its files.
    pub fn load_code(&self, code_id: &str) -> Result<CodeUnit, IntegrityError> {
        if !self.codes.contains_key(code_id) {
            return Err(IntegrityError::UnknownCode(code_id.to_string()));
        }
        let manifest = Manifest::load(&self.manifest_path(code_id))?;
        let body = fs::read(self.body_path(code_id)).map_err(StoreError::from)?;
        let sig_path = self.signature_path(code_id);
        let signature = if sig_path.exists() {
            let text = fs::read_to_string(&sig_path).map_err(StoreError::from)?;
            // An unreadable signature is kept as raw bytes so it fails verification.
            Some(hex::decode(text.trim()).unwrap_or_else(|_| text.into_bytes()))
        } else {
            None
        };
        Ok(CodeUnit::from_parts(&manifest, body, signature))
    }

    pub(crate) fn insert_code(
        &mut self,
        meta: InstalledCode,
        code: &CodeUnit,
        record: TrustRecord,
    ) -> Result<(), StoreError> {
        self.write_code_files(code)?;
        self.codes.insert(meta.code_id.clone(), meta);
        self.trust.insert(record.code_id.clone(), record);
        self.write_codes()?;
        self.write_trust()
    }

    pub(crate) fn replace_code(&mut self, code: &CodeUnit) -> Result<(), StoreError> {
        self.write_code_files(code)
    }

    fn write_code_files(&self, code: &CodeUnit) -> Result<(), StoreError> {
        let dir = self.dir.join(CODE_DIR);
        write_atomic(&dir, &self.body_path(&code.code_id), &code.body)?;
        let sig_path = self.signature_path(&code.code_id);
        match &code.signature {
            Some(sig) => write_atomic(&dir, &sig_path, format!("{}\n", hex::encode(sig)).as_bytes())?,
            None if sig_path.exists() => fs::remove_file(&sig_path)?,
            None => {}
        }
        write_atomic(
            &dir,
            &self.manifest_path(&code.code_id),
            code.manifest().to_canonical().as_bytes(),
        )
    }

    /// Persist one run: append the history record, then the new trust record.
    /// If the trust snapshot cannot be written the append is backed out.
    pub fn commit_run(&mut self, record: &ExecutionRecord, trust: TrustRecord) -> Result<(), StoreError> {
        let before = self.history.len_bytes();
        self.history.append(record)?;
        let previous = self.trust.insert(trust.code_id.clone(), trust);
        if let Err(e) = self.write_trust() {
            let code_id = record.code_id.clone();
            match previous {
                Some(p) => self.trust.insert(code_id, p),
                None => self.trust.remove(&code_id),
            };
            self.history.rollback_last(before)?;
            return Err(e);
        }
        Ok(())
    }

    fn write_principals(&self) -> Result<(), StoreError> {
        write_jsonl(&self.dir, PRINCIPALS_FILE, self.principals.values())
    }

    fn write_codes(&self) -> Result<(), StoreError> {
        write_jsonl(&self.dir, CODES_FILE, self.codes.values())
    }

    fn write_trust(&self) -> Result<(), StoreError> {
        write_jsonl(&self.dir, TRUST_FILE, self.trust.values())
    }

    /// Digest over every file in the store (relative path and contents).
    pub fn fingerprint(&self) -> Result<String, StoreError> {
        Ok(dir_fingerprint(&self.dir)?)
    }
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, name: &'static str) -> Result<Vec<T>, StoreError> {
    let text = match fs::read_to_string(dir.join(name)) {
        Ok(text) => text,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                file: name,
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_jsonl<'a, T: Serialize + 'a>(
    dir: &Path,
    name: &str,
    items: impl Iterator<Item = &'a T>,
) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(io::Error::from)?;
        buf.push(b'\n');
    }
    write_atomic(dir, &dir.join(name), &buf)
}

fn write_atomic(dir: &Path, target: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(target).map_err(|e| e.error)?;
    Ok(())
}

/// SHA-256 over the sorted (relative path, contents) pairs of a directory tree.
pub fn dir_fingerprint(dir: &Path) -> io::Result<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for (name, contents) in files {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((contents.len() as u64).to_le_bytes());
        hasher.update(&contents);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PrincipalKind;

    #[test]
    fn fresh_store_has_system_principal() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let sys = store.principal("system").unwrap();
        assert_eq!(sys.kind, PrincipalKind::System);
        assert_eq!(store.principals().filter(|p| p.kind == PrincipalKind::System).count(), 1);
    }

    #[test]
    fn second_writer_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let _first = Store::open(dir.path()).unwrap();
        assert!(matches!(Store::open(dir.path()), Err(StoreError::Locked(_))));
    }

    #[test]
    fn principals_persist() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open(dir.path()).unwrap();
            let p = Principal::new("acme", vec![7; 32], 0.8, PrincipalKind::Vendor).unwrap();
            store.register_principal(p.clone()).unwrap();
            store.register_principal(p).unwrap();
            let clash = Principal::new("acme", vec![8; 32], 0.8, PrincipalKind::Vendor).unwrap();
            assert!(matches!(
                store.register_principal(clash),
                Err(StoreError::PrincipalConflict(_))
            ));
        }
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.principal("acme").unwrap().owner_trust, 0.8);
    }

    #[test]
    fn fingerprint_tracks_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), b"1").unwrap();
        let before = dir_fingerprint(dir.path()).unwrap();
        assert_eq!(before, dir_fingerprint(dir.path()).unwrap());
        fs::write(dir.path().join("a"), b"2").unwrap();
        assert_ne!(before, dir_fingerprint(dir.path()).unwrap());
    }
}
