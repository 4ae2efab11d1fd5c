//! Field-level comparison of two versions of a tool definition.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalError;
use crate::model::ToolDefinition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChangeClass {
    SecurityRelevant,
    Cosmetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefinitionField {
    Name,
    Description,
    ProviderId,
    Version,
    InputSchema,
    OutputSchema,
    Permissions,
    RequiredCallerEntitlements,
    ApiContractHash,
}

impl DefinitionField {
    pub fn class(self) -> ChangeClass {
        match self {
            DefinitionField::Name | DefinitionField::Description | DefinitionField::Version => {
                ChangeClass::Cosmetic
            }
            DefinitionField::ProviderId
            | DefinitionField::InputSchema
            | DefinitionField::OutputSchema
            | DefinitionField::Permissions
            | DefinitionField::RequiredCallerEntitlements
            | DefinitionField::ApiContractHash => ChangeClass::SecurityRelevant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldChange {
    pub field: DefinitionField,
    pub class: ChangeClass,
    /// Scopes present only in the new definition (set-valued fields only).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub added: BTreeSet<String>,
    /// Scopes present only in the old definition (set-valued fields only).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub removed: BTreeSet<String>,
}

/// Whether cosmetic-only edits still force a new consent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReapprovalMode {
    /// Any change of the content hash requires re-approval.
    #[default]
    Strict,
    /// Only security-relevant changes require re-approval.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub tool_id: String,
    pub changes: Vec<FieldChange>,
    pub content_hash_changed: bool,
    pub requires_reapproval: bool,
}

impl ChangeReport {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn has_security_relevant(&self) -> bool {
        self.changes
            .iter()
            .any(|c| c.class == ChangeClass::SecurityRelevant)
    }

    pub fn change(&self, field: DefinitionField) -> Option<&FieldChange> {
        self.changes.iter().find(|c| c.field == field)
    }

    /// Scopes newly requested through `permissions`.
    pub fn added_permissions(&self) -> BTreeSet<String> {
        self.change(DefinitionField::Permissions)
            .map(|c| c.added.clone())
            .unwrap_or_default()
    }

    /// Report built only from scope sets, used when no snapshot of the
    /// previously approved definition is available.
    pub(crate) fn from_permissions(
        tool_id: &str,
        old: &BTreeSet<String>,
        new: &BTreeSet<String>,
        content_hash_changed: bool,
        mode: ReapprovalMode,
    ) -> Self {
        let mut changes = Vec::new();
        if old != new {
            changes.push(set_change(DefinitionField::Permissions, old, new));
        }
        finish(tool_id, changes, content_hash_changed, mode)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("cannot diff definitions with different ids ({old:?} vs {new:?})")]
    IdMismatch { old: String, new: String },
    #[error(transparent)]
    Encoding(#[from] CanonicalError),
}

fn plain_change(field: DefinitionField) -> FieldChange {
    FieldChange {
        field,
        class: field.class(),
        added: BTreeSet::new(),
        removed: BTreeSet::new(),
    }
}

fn set_change(field: DefinitionField, old: &BTreeSet<String>, new: &BTreeSet<String>) -> FieldChange {
    FieldChange {
        field,
        class: field.class(),
        added: new.difference(old).cloned().collect(),
        removed: old.difference(new).cloned().collect(),
    }
}

fn finish(
    tool_id: &str,
    changes: Vec<FieldChange>,
    content_hash_changed: bool,
    mode: ReapprovalMode,
) -> ChangeReport {
    let security = changes
        .iter()
        .any(|c| c.class == ChangeClass::SecurityRelevant);
    let requires_reapproval = match mode {
        ReapprovalMode::Strict => security || content_hash_changed,
        ReapprovalMode::Lenient => security,
    };
    ChangeReport {
        tool_id: tool_id.to_string(),
        changes,
        content_hash_changed,
        requires_reapproval,
    }
}

/// Lists every differing field of two definitions with the same id.
pub fn diff_definitions(
    old: &ToolDefinition,
    new: &ToolDefinition,
    mode: ReapprovalMode,
) -> Result<ChangeReport, DiffError> {
    if old.id != new.id {
        return Err(DiffError::IdMismatch {
            old: old.id.clone(),
            new: new.id.clone(),
        });
    }
    let mut changes = Vec::new();
    if old.name != new.name {
        changes.push(plain_change(DefinitionField::Name));
    }
    if old.description != new.description {
        changes.push(plain_change(DefinitionField::Description));
    }
    if old.provider_id != new.provider_id {
        changes.push(plain_change(DefinitionField::ProviderId));
    }
    if old.version != new.version {
        changes.push(plain_change(DefinitionField::Version));
    }
    if old.input_schema != new.input_schema {
        changes.push(plain_change(DefinitionField::InputSchema));
    }
    if old.output_schema != new.output_schema {
        changes.push(plain_change(DefinitionField::OutputSchema));
    }
    if old.permissions != new.permissions {
        changes.push(set_change(
            DefinitionField::Permissions,
            &old.permissions,
            &new.permissions,
        ));
    }
    if old.required_caller_entitlements != new.required_caller_entitlements {
        changes.push(set_change(
            DefinitionField::RequiredCallerEntitlements,
            &old.required_caller_entitlements,
            &new.required_caller_entitlements,
        ));
    }
    if old.api_contract_hash != new.api_contract_hash {
        changes.push(plain_change(DefinitionField::ApiContractHash));
    }
    let hash_changed = old.content_hash()? != new.content_hash()?;
    Ok(finish(&old.id, changes, hash_changed, mode))
}
