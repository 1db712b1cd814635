//! Code integrity: canonical hashing, signed manifests, install-time
//! ownership transfer and owner-verified updates.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::harness::parse_workload;
use crate::model::{
    CodeUnit, FunctionalLevel, Principal, ReasonCode, TrustLevel, TrustRecord, SYSTEM_PRINCIPAL,
};
use crate::store::{InstalledCode, Store, StoreError};

/// Lowercase hex SHA-256 of `body`.
pub fn canonical_hash(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

#[derive(Debug, thiserror::Error)]
pub enum IntegrityError {
    #[error("MalformedManifest: {0}")]
    MalformedManifest(String),
    #[error("DuplicateCode: {0:?} is already installed")]
    DuplicateCode(String),
    #[error("UnknownOwner: no principal {0:?} in the store")]
    UnknownOwner(String),
    #[error("UnknownCode: {0:?} is not installed")]
    UnknownCode(String),
    #[error("SystemInstallRequiresValidSignature: {0:?}")]
    SystemInstallRequiresValidSignature(String),
    #[error("NotSystemOwned: {0:?} is owned by {1:?}")]
    NotSystemOwned(String, String),
    #[error("UnknownOriginalOwner: {0:?}")]
    UnknownOriginalOwner(String),
    #[error("InvalidWorkload: {0}")]
    InvalidWorkload(String),
    #[error("BodyMismatch: {0}")]
    BodyMismatch(String),
    #[error("InvalidKey: {0}")]
    InvalidKey(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Canonical five-line header of a code unit; the exact bytes that get signed.
///
/// ```text
/// id: <code_id>
/// owner: <owner_id>
/// hash: <64 lowercase hex>
/// lines: <n>
/// k: <decimal>
/// ```
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Manifest {
    pub code_id: String,
    pub owner_id: String,
    pub hash: String,
    pub lines: u64,
    pub k: f64,
}

/// Identifiers double as file names inside the store.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Manifest {
    pub fn for_body(
        code_id: impl Into<String>,
        owner_id: impl Into<String>,
        body: &[u8],
        lines: u64,
        k: f64,
    ) -> Self {
        Self {
            code_id: code_id.into(),
            owner_id: owner_id.into(),
            hash: canonical_hash(body),
            lines,
            k,
        }
    }

    /// Build a manifest describing `body`, counting its instruction lines.
    pub fn describe(
        code_id: impl Into<String>,
        owner_id: impl Into<String>,
        body: &[u8],
        k: f64,
    ) -> Result<Self, IntegrityError> {
        let lines = parse_workload(body)
            .map_err(|e| IntegrityError::InvalidWorkload(e.to_string()))?
            .len() as u64;
        let m = Self::for_body(code_id, owner_id, body, lines, k);
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<(), IntegrityError> {
        let malformed = |m: String| Err(IntegrityError::MalformedManifest(m));
        if !is_valid_id(&self.code_id) {
            return malformed(format!("invalid code id {:?}", self.code_id));
        }
        if !is_valid_id(&self.owner_id) {
            return malformed(format!("invalid owner id {:?}", self.owner_id));
        }
        if self.hash.len() != 64
            || !self
                .hash
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return malformed(format!("hash must be 64 lowercase hex chars, got {:?}", self.hash));
        }
        if self.lines == 0 {
            return malformed("lines must be positive".into());
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return malformed(format!("k must be a positive real, got {}", self.k));
        }
        Ok(())
    }

    pub fn to_canonical(&self) -> String {
        self.to_string()
    }

    /// Parse canonical text. Anything that would not serialize back to the
    /// identical bytes is rejected.
    pub fn parse(text: &str) -> Result<Self, IntegrityError> {
        let malformed = |m: String| IntegrityError::MalformedManifest(m);
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| malformed("missing final line feed".into()))?;
        let fields: Vec<&str> = body.split('\n').collect();
        if fields.len() != 5 {
            return Err(malformed(format!("expected 5 lines, found {}", fields.len())));
        }
        let value = |idx: usize, key: &str| {
            fields[idx]
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(": "))
                .ok_or_else(|| malformed(format!("line {} must start with {key:?}", idx + 1)))
        };
        let code_id = value(0, "id")?.to_string();
        let owner_id = value(1, "owner")?.to_string();
        let hash = value(2, "hash")?.to_string();
        let lines = value(3, "lines")?
            .parse::<u64>()
            .map_err(|e| malformed(format!("lines: {e}")))?;
        let k = value(4, "k")?
            .parse::<f64>()
            .map_err(|e| malformed(format!("k: {e}")))?;
        let m = Self {
            code_id,
            owner_id,
            hash,
            lines,
            k,
        };
        m.check()?;
        if m.to_canonical() != text {
            return Err(malformed("not in canonical form".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, IntegrityError> {
        let bytes = fs::read(path).map_err(StoreError::from)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| IntegrityError::MalformedManifest("not UTF-8".into()))?;
        Self::parse(&text)
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "id: {}", self.code_id)?;
        writeln!(f, "owner: {}", self.owner_id)?;
        writeln!(f, "hash: {}", self.hash)?;
        writeln!(f, "lines: {}", self.lines)?;
        writeln!(f, "k: {}", self.k)
    }
}

/// Ed25519 signing key with its verification half.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &hex::encode(self.public_key()))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self {
            signing: SigningKey::generate(rng),
        }
    }

    pub fn from_private_bytes(bytes: &[u8]) -> Result<Self, IntegrityError> {
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| IntegrityError::InvalidKey(format!("private key must be 32 bytes, got {}", bytes.len())))?;
        Ok(Self {
            signing: SigningKey::from_bytes(&seed),
        })
    }

    /// Deterministic key derived from a label; handy for fixtures.
    pub fn from_label(label: &str) -> Self {
        let seed: [u8; 32] = Sha256::digest(label.as_bytes()).into();
        Self {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn private_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    /// Write `<prefix>.key` and `<prefix>.pub`, one hex line each.
    pub fn write_files(&self, prefix: &Path) -> Result<(PathBuf, PathBuf), IntegrityError> {
        let private = with_suffix(prefix, "key");
        let public = with_suffix(prefix, "pub");
        fs::write(&private, format!("{}\n", hex::encode(self.private_key()))).map_err(StoreError::from)?;
        fs::write(&public, format!("{}\n", hex::encode(self.public_key()))).map_err(StoreError::from)?;
        Ok((private, public))
    }

    pub fn read_private(path: &Path) -> Result<Self, IntegrityError> {
        Self::from_private_bytes(&read_hex_file(path)?)
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Read a one-line hex file (keys and `.sig` files).
pub fn read_hex_file(path: &Path) -> Result<Vec<u8>, IntegrityError> {
    let text = fs::read_to_string(path).map_err(StoreError::from)?;
    hex::decode(text.trim())
        .map_err(|e| IntegrityError::InvalidKey(format!("{}: {e}", path.display())))
}

pub fn read_public_key(path: &Path) -> Result<Vec<u8>, IntegrityError> {
    let key = read_hex_file(path)?;
    if key.len() != 32 {
        return Err(IntegrityError::InvalidKey(format!(
            "{}: public key must be 32 bytes, got {}",
            path.display(),
            key.len()
        )));
    }
    Ok(key)
}

pub fn write_signature_file(path: &Path, signature: &[u8]) -> Result<(), IntegrityError> {
    fs::write(path, format!("{}\n", hex::encode(signature))).map_err(StoreError::from)?;
    Ok(())
}

/// Detached Ed25519 signature over the canonical manifest bytes.
pub fn sign_manifest(manifest: &Manifest, key: &KeyPair) -> Result<Vec<u8>, IntegrityError> {
    manifest.check()?;
    Ok(key
        .signing
        .sign(manifest.to_canonical().as_bytes())
        .to_bytes()
        .to_vec())
}

/// True iff `signature` is a valid signature by `public_key` over the
/// canonical manifest and, when `body` is given, the manifest hash matches it.
/// Never panics on malformed input.
pub fn verify_manifest(
    manifest: &Manifest,
    signature: Option<&[u8]>,
    public_key: &[u8],
    body: Option<&[u8]>,
) -> bool {
    let Some(signature) = signature else {
        return false;
    };
    if manifest.check().is_err() {
        return false;
    }
    if let Some(body) = body {
        if canonical_hash(body) != manifest.hash {
            return false;
        }
    }
    let Ok(key_bytes) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(key) = VerifyingKey::from_bytes(&key_bytes) else {
        return false;
    };
    let Ok(signature) = Signature::from_slice(signature) else {
        return false;
    };
    key.verify(manifest.to_canonical().as_bytes(), &signature)
        .is_ok()
}

impl CodeUnit {
    /// Assemble a code unit from its manifest, workload body and optional signature.
    pub fn from_parts(manifest: &Manifest, body: Vec<u8>, signature: Option<Vec<u8>>) -> Self {
        Self {
            code_id: manifest.code_id.clone(),
            owner_id: manifest.owner_id.clone(),
            body_hash: manifest.hash.clone(),
            body,
            signature,
            line_count_n: manifest.lines,
            ops_per_line_k: manifest.k,
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            code_id: self.code_id.clone(),
            owner_id: self.owner_id.clone(),
            hash: self.body_hash.clone(),
            lines: self.line_count_n,
            k: self.ops_per_line_k,
        }
    }

    /// Build and sign a code unit in one go.
    pub fn signed(
        code_id: &str,
        owner: &str,
        body: &[u8],
        k: f64,
        key: &KeyPair,
    ) -> Result<Self, IntegrityError> {
        let manifest = Manifest::describe(code_id, owner, body, k)?;
        let sig = sign_manifest(&manifest, key)?;
        Ok(Self::from_parts(&manifest, body.to_vec(), Some(sig)))
    }

    pub fn unsigned(code_id: &str, owner: &str, body: &[u8], k: f64) -> Result<Self, IntegrityError> {
        let manifest = Manifest::describe(code_id, owner, body, k)?;
        Ok(Self::from_parts(&manifest, body.to_vec(), None))
    }
}

/// Result of re-checking installed code before a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityStatus {
    /// Signed by its accountable owner and the body matches the signed hash.
    Verified,
    /// Installed without a signature; the body still matches the manifest.
    Unsigned,
    /// Tampered or forged.
    Failed(ReasonCode),
}

impl IntegrityStatus {
    pub fn is_verified(self) -> bool {
        self == IntegrityStatus::Verified
    }

    pub fn reason(self) -> ReasonCode {
        match self {
            IntegrityStatus::Verified => ReasonCode::IntegrityOk,
            IntegrityStatus::Unsigned => ReasonCode::NoSignature,
            IntegrityStatus::Failed(r) => r,
        }
    }
}

/// Check a code unit against the key of its accountable owner.
pub fn check_code(code: &CodeUnit, public_key: &[u8]) -> IntegrityStatus {
    if canonical_hash(&code.body) != code.body_hash {
        return IntegrityStatus::Failed(ReasonCode::HashMismatch);
    }
    match &code.signature {
        None => IntegrityStatus::Unsigned,
        Some(sig) => {
            if verify_manifest(&code.manifest(), Some(sig), public_key, Some(&code.body)) {
                IntegrityStatus::Verified
            } else {
                IntegrityStatus::Failed(ReasonCode::BadSignature)
            }
        }
    }
}

/// Re-read installed code from the store and check it.
pub fn check_installed(store: &Store, code_id: &str) -> Result<IntegrityStatus, IntegrityError> {
    let meta = store
        .installed(code_id)
        .ok_or_else(|| IntegrityError::UnknownCode(code_id.to_string()))?;
    let code = match store.load_code(code_id) {
        Ok(code) => code,
        Err(IntegrityError::MalformedManifest(_)) => {
            return Ok(IntegrityStatus::Failed(ReasonCode::BadSignature))
        }
        Err(e) => return Err(e),
    };
    if code.code_id != code_id || code.owner_id != meta.original_owner {
        return Ok(IntegrityStatus::Failed(ReasonCode::BadSignature));
    }
    let key = store
        .principal(&meta.original_owner)
        .map(|p| p.public_key.clone())
        .unwrap_or_default();
    Ok(check_code(&code, &key))
}

fn check_body(code: &CodeUnit) -> Result<(), IntegrityError> {
    if canonical_hash(&code.body) != code.body_hash {
        return Err(IntegrityError::BodyMismatch(format!(
            "{}: body does not hash to the manifest hash",
            code.code_id
        )));
    }
    let lines = parse_workload(&code.body)
        .map_err(|e| IntegrityError::InvalidWorkload(format!("{}: {e}", code.code_id)))?
        .len() as u64;
    if lines != code.line_count_n {
        return Err(IntegrityError::BodyMismatch(format!(
            "{}: manifest declares {} lines, body has {lines}",
            code.code_id, code.line_count_n
        )));
    }
    Ok(())
}

/// Install code into the store and create its initial trust record.
///
/// With `as_system` the code must carry a valid signature from its owner;
/// ownership then moves to the system principal and the code starts
/// Operational. Otherwise signed code starts Verifiable and unsigned (or
/// badly signed) code starts Untrustable. The score is seeded with the
/// original owner's trust either way.
pub fn install(store: &mut Store, code: CodeUnit, as_system: bool) -> Result<TrustRecord, IntegrityError> {
    code.manifest().check()?;
    if store.installed(&code.code_id).is_some() {
        return Err(IntegrityError::DuplicateCode(code.code_id));
    }
    let owner: Principal = store
        .principal(&code.owner_id)
        .cloned()
        .ok_or_else(|| IntegrityError::UnknownOwner(code.owner_id.clone()))?;
    check_body(&code)?;

    let verified = check_code(&code, &owner.public_key).is_verified();
    if as_system && !verified {
        return Err(IntegrityError::SystemInstallRequiresValidSignature(code.code_id));
    }

    let (functional, effective) = match (as_system, verified) {
        (true, _) => (FunctionalLevel::Operational, TrustLevel::Operational),
        (false, true) => (FunctionalLevel::Verifiable, TrustLevel::Verifiable),
        (false, false) => (FunctionalLevel::Verifiable, TrustLevel::Untrustable),
    };
    let record = TrustRecord {
        code_id: code.code_id.clone(),
        functional_level: functional,
        transactional_score: owner.owner_trust,
        effective_level: effective,
        updated_seq: store.history().last_seq(),
    };
    let meta = InstalledCode {
        code_id: code.code_id.clone(),
        owner_id: if as_system {
            SYSTEM_PRINCIPAL.to_string()
        } else {
            owner.id.clone()
        },
        original_owner: owner.id,
    };
    store.insert_code(meta, &code, record.clone())?;
    Ok(record)
}

/// Replace the body of system-owned code if the update is signed by the
/// code's original owner. Returns `Ok(false)`, leaving the store untouched,
/// when verification fails. Accumulated history and trust are kept.
pub fn authorize_update(
    store: &mut Store,
    code_id: &str,
    new_body: &[u8],
    new_manifest: &Manifest,
    signature: &[u8],
) -> Result<bool, IntegrityError> {
    let meta = store
        .installed(code_id)
        .cloned()
        .ok_or_else(|| IntegrityError::UnknownCode(code_id.to_string()))?;
    if meta.owner_id != SYSTEM_PRINCIPAL {
        return Err(IntegrityError::NotSystemOwned(meta.code_id, meta.owner_id));
    }
    let original = store
        .principal(&meta.original_owner)
        .cloned()
        .ok_or_else(|| IntegrityError::UnknownOriginalOwner(meta.original_owner.clone()))?;

    if new_manifest.code_id != code_id || new_manifest.owner_id != original.id {
        return Ok(false);
    }
    if !verify_manifest(new_manifest, Some(signature), &original.public_key, Some(new_body)) {
        return Ok(false);
    }
    let code = CodeUnit::from_parts(new_manifest, new_body.to_vec(), Some(signature.to_vec()));
    if check_body(&code).is_err() {
        return Ok(false);
    }
    store.replace_code(&code)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BODY: &[u8] = b"COMPUTE 5\nEXIT success\n";

    fn manifest() -> Manifest {
        Manifest::describe("hello", "acme", BODY, 1.5).unwrap()
    }

    #[test]
    fn hash_vectors() {
        assert_eq!(
            canonical_hash(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            canonical_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_ne!(canonical_hash(b"abd"), canonical_hash(b"abc"));
    }

    #[test]
    fn manifest_text_is_canonical() {
        let m = manifest();
        let text = m.to_canonical();
        assert_eq!(
            text,
            format!("id: hello\nowner: acme\nhash: {}\nlines: 2\nk: 1.5\n", canonical_hash(BODY))
        );
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_non_canonical() {
        let text = manifest().to_canonical();
        for bad in [
            text.replace("k: 1.5", "k: 1.50"),
            text.replace("lines: 2", "lines: 02"),
            text.replace("id: hello", "id:  hello"),
            text.trim_end().to_string(),
            text.replace('\n', "\r\n"),
            format!("{text}\n"),
            text.replace("hash: ", "hash: A"),
            text.replace("lines: 2", "lines: 0"),
            text.replace("k: 1.5", "k: -1"),
            text.replace("owner: acme", "owner: ac me"),
        ] {
            assert!(Manifest::parse(&bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        let key = KeyPair::from_label("acme");
        let m = manifest();
        let sig = sign_manifest(&m, &key).unwrap();
        assert!(verify_manifest(&m, Some(&sig), &key.public_key(), Some(BODY)));
        assert!(verify_manifest(&m, Some(&sig), &key.public_key(), None));
    }

    #[test]
    fn verify_rejections() {
        let key = KeyPair::from_label("acme");
        let other = KeyPair::from_label("mallory");
        let m = manifest();
        let sig = sign_manifest(&m, &key).unwrap();

        let mut flipped = m.clone();
        flipped.lines = 3;
        assert!(!verify_manifest(&flipped, Some(&sig), &key.public_key(), None));
        assert!(!verify_manifest(&m, Some(&sig), &other.public_key(), None));
        assert!(!verify_manifest(&m, Some(&sig), &key.public_key(), Some(b"COMPUTE 6\nEXIT success\n")));
        assert!(!verify_manifest(&m, None, &key.public_key(), None));
        assert!(!verify_manifest(&m, Some(&sig[..10]), &key.public_key(), None));
        assert!(!verify_manifest(&m, Some(&sig), &[1, 2, 3], None));
    }

    #[test]
    fn sign_rejects_malformed_manifest() {
        let mut m = manifest();
        m.hash = "xyz".into();
        assert!(matches!(
            sign_manifest(&m, &KeyPair::from_label("acme")),
            Err(IntegrityError::MalformedManifest(_))
        ));
    }

    #[test]
    fn private_key_determines_public_key() {
        let a = KeyPair::from_label("x");
        let b = KeyPair::from_private_bytes(&a.private_key()).unwrap();
        assert_eq!(a.public_key(), b.public_key());
        assert!(KeyPair::from_private_bytes(&[0; 31]).is_err());
    }

    #[test]
    fn key_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let key = KeyPair::generate(&mut rand::rngs::OsRng);
        let (private, public) = key.write_files(&dir.path().join("acme")).unwrap();
        assert!(private.ends_with("acme.key") && public.ends_with("acme.pub"));
        assert_eq!(KeyPair::read_private(&private).unwrap().public_key(), key.public_key());
        assert_eq!(read_public_key(&public).unwrap(), key.public_key());
        let text = fs::read_to_string(&public).unwrap();
        assert_eq!(text.len(), 65);
    }
}
