use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::{CliError, ConsentMode, GlobalArgs};

/// Optional TOML file naming the stores a command works on. Relative paths
/// resolve against the file's directory. Command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub trust_store: Option<PathBuf>,
    pub approval_store: Option<PathBuf>,
    pub revocations: Option<PathBuf>,
    #[serde(default)]
    pub policy_files: Vec<PathBuf>,
    pub callstack_policy: Option<PathBuf>,
    pub violation_log: Option<PathBuf>,
    pub strict: Option<bool>,
    pub consent: Option<ConsentMode>,
}

/// Effective settings after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub trust_store: Option<PathBuf>,
    pub approval_store: Option<PathBuf>,
    pub revocations: Option<PathBuf>,
    pub policy_files: Vec<PathBuf>,
    pub callstack_policy: Option<PathBuf>,
    pub violation_log: Option<PathBuf>,
    /// `None` keeps each component's own default.
    pub strict: Option<bool>,
    pub consent: ConsentMode,
}

impl CliConfig {
    pub fn resolve(g: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &g.config {
            Some(path) => {
                let text = read(path)?;
                let mut fc: FileConfig =
                    toml::from_str(&text).map_err(|e| CliError::op(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let fix = |p: &mut Option<PathBuf>| {
                    if let Some(x) = p {
                        if x.is_relative() {
                            *x = base.join(&*x);
                        }
                    }
                };
                fix(&mut fc.trust_store);
                fix(&mut fc.approval_store);
                fix(&mut fc.revocations);
                fix(&mut fc.callstack_policy);
                fix(&mut fc.violation_log);
                for p in &mut fc.policy_files {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
                fc
            }
            None => FileConfig::default(),
        };
        let strict = if g.strict {
            Some(true)
        } else if g.lenient {
            Some(false)
        } else {
            file.strict
        };
        Ok(Self {
            trust_store: g.trust.clone().or(file.trust_store),
            approval_store: g.approvals.clone().or(file.approval_store),
            revocations: g.revocations.clone().or(file.revocations),
            policy_files: if g.policy.is_empty() { file.policy_files } else { g.policy.clone() },
            callstack_policy: g.callstack_policy.clone().or(file.callstack_policy),
            violation_log: g.violation_log.clone().or(file.violation_log),
            strict,
            consent: g.consent.or(file.consent).unwrap_or(ConsentMode::Prompt),
        })
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
        p.as_deref()
            .ok_or_else(|| CliError::op(format!("no {what} configured (use a flag or --config)")))
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::op(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::op(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::op(format!("{}: {e}", path.display())))
}

/// Exclusive advisory lock on a store file, held until dropped.
pub struct StoreLock(#[allow(dead_code)] File);

pub fn lock(path: &Path) -> Result<StoreLock, CliError> {
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::op(format!("{}: {e}", path.display())))?;
    f.lock().map_err(|e| CliError::op(format!("lock {}: {e}", path.display())))?;
    Ok(StoreLock(f))
}
