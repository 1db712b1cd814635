//! Command-line front end for the `etrust` binary.
//!
//! Machine-readable results go to stdout (one JSON object per line, CSV, or a
//! `key=value` line); diagnostics go to stderr. Exit codes: 0 success
//! (including a DENY verdict), 1 domain error, 2 usage error, 3 storage or
//! file-format failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::algorithm::{AlgorithmParams, ParamsError};
use crate::analysis::{self, fmt_sig, AnalysisError, AnalysisInput, NRange};
use crate::engine::{Engine, EngineError};
use crate::integrity::{
    authorize_update, install, read_hex_file, read_public_key, sign_manifest, write_signature_file,
    IntegrityError, KeyPair, Manifest,
};
use crate::model::{CodeUnit, ModelError, Principal, PrincipalKind};
use crate::scenarios::{self, ScenarioError};
use crate::store::{Store, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFRA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "etrust", version, about = "Explicit trust engine for signed operating code")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an Ed25519 key pair as <prefix>.key and <prefix>.pub.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the canonical manifest for a workload body.
    Manifest {
        #[arg(long)]
        code_id: String,
        #[arg(long)]
        owner: String,
        #[arg(long)]
        body: PathBuf,
        /// Instructions per line of code.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign a manifest with a private key.
    Sign {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Install code into a store.
    Install {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        body: PathBuf,
        /// Detached signature; omit to install unsigned code.
        #[arg(long)]
        sig: Option<PathBuf>,
        #[command(flatten)]
        store: StoreArg,
        /// Hand ownership to the system principal (requires a valid signature).
        #[arg(long)]
        as_system: bool,
        /// Register the manifest owner with this public key first.
        #[arg(long, requires = "owner_trust")]
        owner_key: Option<PathBuf>,
        #[arg(long, requires = "owner_key")]
        owner_trust: Option<f64>,
        #[arg(long, value_parser = ["vendor", "user"], default_value = "vendor")]
        owner_kind: String,
    },
    /// Replace the body of system-owned code with an update signed by its original owner.
    Update {
        #[arg(long)]
        code_id: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        sig: PathBuf,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Evaluate and execute installed code once.
    Run {
        #[arg(long)]
        code_id: String,
        #[command(flatten)]
        store: StoreArg,
        /// Write the execution trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Algorithm parameter file (key=value lines).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Print the trust record of installed code.
    Trust {
        #[arg(long)]
        code_id: String,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Print execution history records, oldest first.
    History {
        #[arg(long)]
        code_id: String,
        #[command(flatten)]
        store: StoreArg,
        /// Only the most recent N records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Evaluate the security and performance model for one program size.
    Analyze {
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        model: ModelArgs,
        /// Print a JSON object instead of key=value pairs.
        #[arg(long)]
        json: bool,
    },
    /// Sweep the model over a range of program sizes and write CSV.
    Sweep {
        /// start:stop:step, inclusive.
        #[arg(long)]
        n: String,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay one of the built-in attack scenarios.
    Scenario {
        #[arg(long)]
        name: String,
        /// Keep the scenario's temporary store and transcript.
        #[arg(long)]
        keep: bool,
    },
}

#[derive(Debug, Args)]
pub struct StoreArg {
    #[arg(long = "store")]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub k: f64,
    #[arg(long, default_value_t = analysis::DEFAULT_OP_UNIT)]
    pub o: f64,
    /// Four comma-separated overhead coefficients.
    #[arg(long, value_delimiter = ',')]
    pub l: Option<Vec<f64>>,
}

impl ModelArgs {
    fn coefficients(&self) -> Result<Option<[f64; 4]>, CliError> {
        match &self.l {
            None => Ok(None),
            Some(v) => <[f64; 4]>::try_from(v.as_slice())
                .map(Some)
                .map_err(|_| CliError::Usage(format!("--l takes 4 values, got {}", v.len()))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Infra(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Infra(_) => EXIT_INFRA,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::PrincipalConflict(_) => CliError::Domain(e.to_string()),
            other => CliError::Infra(other.to_string()),
        }
    }
}

impl From<IntegrityError> for CliError {
    fn from(e: IntegrityError) -> Self {
        match e {
            IntegrityError::Store(s) => s.into(),
            IntegrityError::MalformedManifest(_) | IntegrityError::InvalidKey(_) => {
                CliError::Infra(e.to_string())
            }
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            EngineError::Integrity(i) => i.into(),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ParamsError> for CliError {
    fn from(e: ParamsError) -> Self {
        match e {
            ParamsError::Io(_) => CliError::Infra(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::UnknownScenario(_) => CliError::Usage(e.to_string()),
            ScenarioError::Io(_) | ScenarioError::Store(_) => CliError::Infra(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Infra(format!("StorageFailure: {}: {e}", path.display()))
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Infra(format!("writing output: {e}")))
}

fn json_line<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable output")
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Keygen { out: prefix } => {
            let key = KeyPair::generate(&mut rand::rngs::OsRng);
            let (private, public) = key.write_files(&prefix)?;
            emit(
                out,
                &json_line(&json!({
                    "private_key_file": private,
                    "public_key_file": public,
                    "public_key": hex::encode(key.public_key()),
                })),
            )?;
        }
        Command::Manifest {
            code_id,
            owner,
            body,
            k,
            out: path,
        } => {
            let bytes = fs::read(&body).map_err(io_err(&body))?;
            let manifest = Manifest::describe(&code_id, &owner, &bytes, k)?;
            fs::write(&path, manifest.to_canonical()).map_err(io_err(&path))?;
            emit(out, &json_line(&manifest))?;
        }
        Command::Sign {
            manifest,
            key,
            out: path,
        } => {
            let manifest = Manifest::load(&manifest)?;
            let key = KeyPair::read_private(&key)?;
            let sig = sign_manifest(&manifest, &key)?;
            write_signature_file(&path, &sig)?;
            emit(
                out,
                &json_line(&json!({ "code_id": manifest.code_id, "signature": hex::encode(sig) })),
            )?;
        }
        Command::Install {
            manifest,
            body,
            sig,
            store,
            as_system,
            owner_key,
            owner_trust,
            owner_kind,
        } => {
            let manifest = Manifest::load(&manifest)?;
            let bytes = fs::read(&body).map_err(io_err(&body))?;
            let sig = sig.as_deref().map(read_hex_file).transpose()?;
            let mut store = Store::open(&store.dir)?;
            if let (Some(key), Some(trust)) = (owner_key, owner_trust) {
                let kind = match owner_kind.as_str() {
                    "user" => PrincipalKind::User,
                    _ => PrincipalKind::Vendor,
                };
                let principal =
                    Principal::new(manifest.owner_id.clone(), read_public_key(&key)?, trust, kind)?;
                store.register_principal(principal)?;
            }
            let code = CodeUnit::from_parts(&manifest, bytes, sig);
            let record = install(&mut store, code, as_system)?;
            emit(out, &json_line(&record))?;
        }
        Command::Update {
            code_id,
            manifest,
            body,
            sig,
            store,
        } => {
            let manifest = Manifest::load(&manifest)?;
            let bytes = fs::read(&body).map_err(io_err(&body))?;
            let sig = read_hex_file(&sig)?;
            let mut store = Store::open(&store.dir)?;
            let accepted = authorize_update(&mut store, &code_id, &bytes, &manifest, &sig)?;
            if !accepted {
                let _ = writeln!(err, "update of {code_id} rejected: not signed by its original owner");
            }
            emit(out, &json_line(&json!({ "code_id": code_id, "accepted": accepted })))?;
        }
        Command::Run {
            code_id,
            store,
            trace,
            params,
        } => {
            let params = match params {
                Some(p) => AlgorithmParams::load(&p)?,
                None => AlgorithmParams::default(),
            };
            let mut engine = Engine::new(Store::open(&store.dir)?, params);
            let report = engine.run(&code_id)?;
            if let Some(path) = trace {
                let text = report.trace.as_ref().map(|t| t.render()).unwrap_or_default();
                fs::write(&path, text).map_err(io_err(&path))?;
            }
            emit(out, &report.to_json_line())?;
        }
        Command::Trust { code_id, store } => {
            let store = Store::open(&store.dir)?;
            let record = store
                .trust_record(&code_id)
                .ok_or_else(|| CliError::Domain(format!("UnknownCode: {code_id:?} is not installed")))?;
            emit(out, &json_line(record))?;
        }
        Command::History {
            code_id,
            store,
            limit,
        } => {
            let store = Store::open(&store.dir)?;
            if store.installed(&code_id).is_none() {
                return Err(CliError::Domain(format!("UnknownCode: {code_id:?} is not installed")));
            }
            let records: Vec<_> = store
                .history()
                .records()
                .map_err(|e| CliError::Infra(e.to_string()))?
                .into_iter()
                .filter(|r| r.code_id == code_id)
                .collect();
            let skip = limit.map_or(0, |l| records.len().saturating_sub(l));
            for r in &records[skip..] {
                emit(out, &json_line(r))?;
            }
        }
        Command::Analyze { n, model, json } => {
            let (perf_base, sec_base) = analysis::baseline_metrics(n, model.k, model.o)?;
            let mut fields = vec![
                ("n", n.to_string()),
                ("k", fmt_sig(model.k)),
                ("o", fmt_sig(model.o)),
                ("base_ops", fmt_sig(perf_base)),
                ("perf_base", fmt_sig(perf_base)),
                ("sec_base", fmt_sig(sec_base)),
            ];
            let mut value = json!({ "n": n, "k": model.k, "o": model.o, "base_ops": perf_base,
                                    "perf_base": perf_base, "sec_base": sec_base });
            if let Some(l) = model.coefficients()? {
                let r = analysis::secured_metrics(&AnalysisInput::new(n, model.k, model.o, l)?)?;
                fields.push(("perf_secured", fmt_sig(r.perf_secured)));
                fields.push(("sec_secured_raw", fmt_sig(r.sec_secured)));
                fields.push(("sec_clamped", fmt_sig(r.sec_clamped)));
                for (i, ops) in r.overhead_ops.iter().enumerate() {
                    fields.push((["overhead_1", "overhead_2", "overhead_3", "overhead_4"][i], fmt_sig(*ops)));
                }
                value["perf_secured"] = json!(r.perf_secured);
                value["sec_secured_raw"] = json!(r.sec_secured);
                value["sec_clamped"] = json!(r.sec_clamped);
                value["overhead_ops"] = json!(r.overhead_ops);
                if r.sec_secured < r.sec_base {
                    let _ = writeln!(
                        err,
                        "note: the secured security metric is below the baseline; formulas are evaluated as written"
                    );
                }
            }
            if json {
                emit(out, &json_line(&value))?;
            } else {
                let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
                emit(out, &line.join(" "))?;
            }
        }
        Command::Sweep { n, model, out: path } => {
            let range: NRange = n.parse()?;
            let l = model
                .coefficients()?
                .ok_or_else(|| CliError::Usage("sweep requires --l".into()))?;
            let rows = analysis::sweep(range, model.k, model.o, l)?;
            let mut buf = Vec::new();
            analysis::write_csv(&rows, &mut buf).expect("writing to memory");
            fs::write(&path, buf).map_err(io_err(&path))?;
            emit(
                out,
                &json_line(&json!({ "rows": rows.len(), "out": path })),
            )?;
        }
        Command::Scenario { name, keep } => {
            let report = scenarios::run_scenario_with(&name, keep)?;
            let _ = write!(err, "{}", report.summary());
            if let Some(dir) = &report.store_dir {
                let _ = writeln!(err, "store kept at {}", dir.display());
            }
            let expectations: Vec<_> = report
                .expectations
                .iter()
                .map(|e| json!({ "description": e.description, "passed": e.passed }))
                .collect();
            emit(
                out,
                &json_line(&json!({
                    "scenario": report.name.as_str(),
                    "passed": report.passed(),
                    "expectations": expectations,
                })),
            )?;
            if !report.passed() {
                return Ok(EXIT_DOMAIN);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Entry point used by the `etrust` binary.
pub fn run_from_env() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    main_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
