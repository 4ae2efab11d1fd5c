//! User consent records and the definition verification state machine.
//!
//! [`evaluate_tool`] decides whether a presented signed definition matches
//! what the user approved before. It never writes; recording consent is a
//! separate, explicit [`ApprovalStore::record_approval`] call made by the host
//! after it asked the user.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::canonical::{CanonicalError, ContentHash};
use crate::crypto::{InvalidReason, SignedToolDefinition, TrustStore, VerificationResult};
use crate::diff::{diff_definitions, ChangeReport, ReapprovalMode};
use crate::model::{compare_versions, SemVer, ToolDefinition};

/// One line of the approval history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRecord {
    pub tool_id: String,
    pub version: SemVer,
    pub content_hash: ContentHash,
    pub granted_permissions: BTreeSet<String>,
    pub approved_at: u64,
    #[serde(default)]
    pub revoked: bool,
    /// Snapshot of the approved definition, used for field-level diffs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<ToolDefinition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerificationOutcome {
    AllowedExisting,
    NeedsApprovalNewTool,
    NeedsApprovalNewVersion {
        approved_version: SemVer,
        report: ChangeReport,
    },
    NeedsApprovalTampered {
        report: ChangeReport,
    },
    RejectedSignature {
        reason: InvalidReason,
    },
    DowngradeWarning {
        approved_version: SemVer,
        presented_version: SemVer,
    },
}

impl VerificationOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            VerificationOutcome::AllowedExisting => "ALLOWED_EXISTING",
            VerificationOutcome::NeedsApprovalNewTool => "NEEDS_APPROVAL_NEW_TOOL",
            VerificationOutcome::NeedsApprovalNewVersion { .. } => "NEEDS_APPROVAL_NEW_VERSION",
            VerificationOutcome::NeedsApprovalTampered { .. } => "NEEDS_APPROVAL_TAMPERED",
            VerificationOutcome::RejectedSignature { .. } => "REJECTED_SIGNATURE",
            VerificationOutcome::DowngradeWarning { .. } => "DOWNGRADE_WARNING",
        }
    }

    pub fn needs_approval(&self) -> bool {
        matches!(
            self,
            VerificationOutcome::NeedsApprovalNewTool
                | VerificationOutcome::NeedsApprovalNewVersion { .. }
                | VerificationOutcome::NeedsApprovalTampered { .. }
        )
    }

    pub fn report(&self) -> Option<&ChangeReport> {
        match self {
            VerificationOutcome::NeedsApprovalNewVersion { report, .. }
            | VerificationOutcome::NeedsApprovalTampered { report } => Some(report),
            _ => None,
        }
    }

    /// Prompt text shown to the approver.
    pub fn prompt(&self, def: &ToolDefinition) -> Option<String> {
        match self {
            VerificationOutcome::NeedsApprovalNewTool => Some(format!("Approve new tool {}?", def.id)),
            VerificationOutcome::NeedsApprovalNewVersion { .. } => Some(format!(
                "New version {} for tool {}. Approve?",
                def.version, def.id
            )),
            VerificationOutcome::NeedsApprovalTampered { .. } => Some(format!(
                "Tool {} content changed. Re-approve?",
                def.id
            )),
            _ => None,
        }
    }
}

/// What a host does when an older version than the approved one shows up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DowngradeAction {
    #[default]
    Block,
    Warn,
    Allow,
}

/// What a host does on a same-version content change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperAction {
    /// Ask the user to re-approve.
    #[default]
    Prompt,
    /// Refuse without asking.
    HardFail,
}

/// Host-side handling of verification outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalPolicy {
    #[serde(default)]
    pub mode: ReapprovalMode,
    #[serde(default)]
    pub on_downgrade: DowngradeAction,
    #[serde(default)]
    pub on_tamper: TamperAction,
}

#[derive(Debug, thiserror::Error)]
pub enum ApprovalError {
    #[error("granted scopes not declared by the definition: {extra:?}")]
    SubsetViolation { extra: BTreeSet<String> },
    #[error("no current approval for tool {0:?}")]
    NotFound(String),
    #[error("approval store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("approval store line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Encoding(#[from] CanonicalError),
}

/// Append-only approval history, optionally backed by a JSON-lines file.
///
/// Readers share a lock; writers are serialized and append to the file while
/// holding the write lock, so a completed write is visible to every later
/// reader in the process.
#[derive(Debug, Default)]
pub struct ApprovalStore {
    records: RwLock<Vec<ApprovalRecord>>,
    path: Option<PathBuf>,
}

fn check_granted(rec: &ApprovalRecord) -> Result<(), String> {
    if let Some(def) = &rec.definition {
        if !rec.granted_permissions.is_subset(&def.permissions) {
            return Err(format!(
                "granted scopes of {} exceed declared permissions",
                rec.tool_id
            ));
        }
    }
    Ok(())
}

impl ApprovalStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or lazily creates) a file-backed store.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ApprovalError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ApprovalRecord =
                    serde_json::from_str(&line).map_err(|e| ApprovalError::Corrupt {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                check_granted(&rec).map_err(|message| ApprovalError::Corrupt {
                    line: i + 1,
                    message,
                })?;
                records.push(rec);
            }
        }
        Ok(Self {
            records: RwLock::new(records),
            path: Some(path),
        })
    }

    pub fn history(&self) -> Vec<ApprovalRecord> {
        self.records.read().expect("approval lock poisoned").clone()
    }

    /// Highest-version live approval for `tool_id`. A revocation entry hides
    /// every earlier record of that tool.
    pub fn current(&self, tool_id: &str) -> Result<Option<ApprovalRecord>, ApprovalError> {
        let records = self.records.read().expect("approval lock poisoned");
        let current = current_in(&records, tool_id);
        if let Some(rec) = &current {
            check_granted(rec).map_err(|message| ApprovalError::Corrupt { line: 0, message })?;
        }
        Ok(current)
    }

    /// Persists consent for `sd` with the given subset of its permissions.
    pub fn record_approval(
        &self,
        sd: &SignedToolDefinition,
        granted_permissions: &BTreeSet<String>,
        approved_at: u64,
    ) -> Result<ApprovalRecord, ApprovalError> {
        let def = &sd.definition;
        let extra: BTreeSet<String> = granted_permissions
            .difference(&def.permissions)
            .cloned()
            .collect();
        if !extra.is_empty() {
            return Err(ApprovalError::SubsetViolation { extra });
        }
        let rec = ApprovalRecord {
            tool_id: def.id.clone(),
            version: def.version,
            content_hash: def.content_hash()?,
            granted_permissions: granted_permissions.clone(),
            approved_at,
            revoked: false,
            definition: Some(def.clone()),
        };
        self.append(rec.clone())?;
        Ok(rec)
    }

    /// Withdraws consent for a tool; the next evaluation sees a new tool.
    pub fn revoke_approval(&self, tool_id: &str, revoked_at: u64) -> Result<(), ApprovalError> {
        let current = self
            .current(tool_id)?
            .ok_or_else(|| ApprovalError::NotFound(tool_id.to_string()))?;
        self.append(ApprovalRecord {
            approved_at: revoked_at,
            revoked: true,
            definition: None,
            ..current
        })
    }

    fn append(&self, rec: ApprovalRecord) -> Result<(), ApprovalError> {
        let mut records = self.records.write().expect("approval lock poisoned");
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_vec(&rec).map_err(CanonicalError::from)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        records.push(rec);
        Ok(())
    }
}

fn current_in(records: &[ApprovalRecord], tool_id: &str) -> Option<ApprovalRecord> {
    let mut best: Option<&ApprovalRecord> = None;
    for rec in records.iter().filter(|r| r.tool_id == tool_id) {
        if rec.revoked {
            best = None;
            continue;
        }
        // ties go to the later record (re-approval of the same version)
        if best.is_none_or(|b| rec.version >= b.version) {
            best = Some(rec);
        }
    }
    best.cloned()
}

/// Compares a presented definition with the stored approval.
///
/// 1. bad signature → `RejectedSignature`
/// 2. same version, same hash → `AllowedExisting`
/// 3. same version, other hash → `NeedsApprovalTampered`
/// 4. older version → `DowngradeWarning`
/// 5. newer version → `NeedsApprovalNewVersion`
/// 6. nothing approved → `NeedsApprovalNewTool`
pub fn evaluate_tool(
    sd: &SignedToolDefinition,
    ts: &TrustStore,
    store: &ApprovalStore,
    mode: ReapprovalMode,
) -> Result<VerificationOutcome, ApprovalError> {
    if let VerificationResult::Invalid { reason } = sd.verify(ts) {
        return Ok(VerificationOutcome::RejectedSignature { reason });
    }
    let def = &sd.definition;
    let Some(approved) = store.current(&def.id)? else {
        return Ok(VerificationOutcome::NeedsApprovalNewTool);
    };
    let hash = def.content_hash()?;
    let report = || -> Result<ChangeReport, ApprovalError> {
        let hash_changed = hash != approved.content_hash;
        Ok(match &approved.definition {
            Some(old) => diff_definitions(old, def, mode).map_err(|e| match e {
                crate::diff::DiffError::Encoding(e) => ApprovalError::Encoding(e),
                other => ApprovalError::Corrupt {
                    line: 0,
                    message: other.to_string(),
                },
            })?,
            None => ChangeReport::from_permissions(
                &def.id,
                &approved.granted_permissions,
                &def.permissions,
                hash_changed,
                mode,
            ),
        })
    };
    Ok(match compare_versions(&def.version, &approved.version) {
        Ordering::Equal if hash == approved.content_hash => VerificationOutcome::AllowedExisting,
        Ordering::Equal => VerificationOutcome::NeedsApprovalTampered { report: report()? },
        Ordering::Less => VerificationOutcome::DowngradeWarning {
            approved_version: approved.version,
            presented_version: def.version,
        },
        Ordering::Greater => VerificationOutcome::NeedsApprovalNewVersion {
            approved_version: approved.version,
            report: report()?,
        },
    })
}
