use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::approval::{
    evaluate_tool, ApprovalError, ApprovalPolicy, ApprovalStore, DowngradeAction, TamperAction,
    VerificationOutcome,
};
use crate::callstack::{CallSession, CallStackError, CallStackPolicy, CallVerdict};
use crate::crypto::{KeyPair, SignedToolDefinition, TrustStore, VerificationResult};
use crate::policy::{flatten_context, AttrValue, AuthorizationRequest, PolicyStore};
use crate::scope::{check_scope_adherence, Adherence};
use crate::token::{
    check_caller_entitlements, issue_token, validate_token, EntitlementError, RevocationList,
    ToolBinding, ToolClaims,
};
use crate::model::ToolDefinition;

use super::server::{NestedCall, SimServer};
use super::transcript::{EventKind, Stage, Transcript};

/// Unix time of logical tick 0.
pub const EPOCH_BASE: u64 = 1_700_000_000;
/// Bound on nested calls in standard mode, where no call-stack policy runs.
pub const HOST_RECURSION_CAP: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    /// Every layer enforced.
    #[default]
    Etdi,
    /// Plain MCP behavior: no verification, prompts on first sight of a name.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsentAnswer {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Consent {
    AutoApprove,
    AutoDeny,
    /// Answers consumed in order; an exhausted script denies.
    Scripted(VecDeque<ConsentAnswer>),
}

impl Consent {
    fn ask(&mut self) -> bool {
        match self {
            Consent::AutoApprove => true,
            Consent::AutoDeny => false,
            Consent::Scripted(q) => q.pop_front() == Some(ConsentAnswer::Yes),
        }
    }
}

/// Where the tool token for an invocation comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRef {
    /// Current token held for the named tool.
    Wallet(String),
    /// A token stashed earlier under a label.
    Saved(String),
    /// A token for the named tool minted by an issuer the client does not trust.
    Rogue(String),
    None,
}

/// One top-level invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeSpec {
    pub tool_id: String,
    pub action: String,
    pub resource: String,
    #[serde(default)]
    pub scopes: BTreeSet<String>,
    #[serde(default)]
    pub user_context: Value,
    /// Scopes of a user token minted for this call; no user token when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_scopes: Option<BTreeSet<String>>,
    /// Defaults to the wallet token of `tool_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_token: Option<TokenRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl InvokeSpec {
    pub fn new(tool_id: &str, action: &str, resource: &str, scopes: &[&str]) -> Self {
        Self {
            tool_id: tool_id.to_string(),
            action: action.to_string(),
            resource: resource.to_string(),
            scopes: scopes.iter().map(|s| s.to_string()).collect(),
            user_context: Value::Object(Default::default()),
            user_scopes: None,
            tool_token: None,
            tag: None,
        }
    }

    pub fn tagged(mut self, tag: &str) -> Self {
        self.tag = Some(tag.to_string());
        self
    }

    pub fn with_token(mut self, token: TokenRef) -> Self {
        self.tool_token = Some(token);
        self
    }

    pub fn with_user_scopes(mut self, scopes: &[&str]) -> Self {
        self.user_scopes = Some(scopes.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_context(mut self, ctx: Value) -> Self {
        self.user_context = ctx;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Approval(#[from] ApprovalError),
    #[error(transparent)]
    CallStack(#[from] CallStackError),
    #[error("scenario setup: {0}")]
    Setup(String),
}

/// A discovered definition that failed verification, with the reason.
pub type Rejection = (SignedToolDefinition, String);

/// A tool that passed discovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredTool {
    pub server_id: String,
    pub tool_id: String,
    pub name: String,
}

/// Key material and identities the client uses to mint tokens.
#[derive(Debug)]
pub struct Issuers {
    pub tool_issuer: String,
    pub tool_key: KeyPair,
    pub user_issuer: String,
    pub user_key: KeyPair,
    pub rogue_issuer: String,
    pub rogue_key: KeyPair,
}

/// Everything a host needs to run the invocation pipeline.
#[derive(Debug)]
pub struct ClientConfig {
    pub mode: ClientMode,
    pub trust: TrustStore,
    /// Issuers trusted for tool tokens.
    pub tool_issuers: TrustStore,
    /// Issuers trusted for caller (user) tokens.
    pub user_issuers: TrustStore,
    pub approvals: ApprovalStore,
    pub approval_policy: ApprovalPolicy,
    pub revocations: RevocationList,
    pub policies: PolicyStore,
    /// Route policy checks to one store id instead of all documents.
    pub policy_store_id: Option<String>,
    pub callstack_policy: CallStackPolicy,
    pub consent: Consent,
    pub issuers: Issuers,
    pub token_ttl: u64,
    pub user_id: String,
}

#[derive(Debug)]
pub struct SimClient {
    cfg: ClientConfig,
    session: CallSession,
    catalog: BTreeMap<String, DiscoveredTool>,
    seen_names: BTreeSet<String>,
    host_stack: Vec<String>,
    wallet: BTreeMap<String, String>,
    saved: BTreeMap<String, String>,
    next_jti: u64,
    next_request: u64,
    transcript: Transcript,
}

struct Ctx<'a> {
    request: u64,
    tag: Option<String>,
    caller: Option<String>,
    user_token: Option<&'a str>,
    user_context: &'a Value,
}

impl SimClient {
    pub fn new(cfg: ClientConfig, session_id: &str) -> Result<Self, SimError> {
        let session = CallSession::new(session_id, cfg.callstack_policy.clone())?;
        Ok(Self {
            cfg,
            session,
            catalog: BTreeMap::new(),
            seen_names: BTreeSet::new(),
            host_stack: Vec::new(),
            wallet: BTreeMap::new(),
            saved: BTreeMap::new(),
            next_jti: 1,
            next_request: 1,
            transcript: Transcript::default(),
        })
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn session(&self) -> &CallSession {
        &self.session
    }

    pub fn catalog(&self) -> impl Iterator<Item = &DiscoveredTool> {
        self.catalog.values()
    }

    pub fn now(&self) -> u64 {
        EPOCH_BASE + self.session.clock()
    }

    pub fn advance_clock(&mut self, ticks: u64) {
        self.session.advance_clock(ticks);
    }

    pub fn wallet_token(&self, tool_id: &str) -> Option<&str> {
        self.wallet.get(tool_id).map(String::as_str)
    }

    /// Stashes the current wallet token of `tool_id` under `label`.
    pub fn save_token(&mut self, tool_id: &str, label: &str) {
        if let Some(t) = self.wallet.get(tool_id).cloned() {
            self.saved.insert(label.to_string(), t);
        }
    }

    /// Adds the jti of the current wallet token of `tool_id` to the revocation list.
    pub fn revoke_token(&mut self, tool_id: &str) {
        if let Some(t) = self.wallet.get(tool_id) {
            if let Ok(tok) = crate::token::ToolToken::parse(t) {
                self.cfg.revocations.revoke(tok.claims.jti);
            }
        }
    }

    fn emit(&mut self, request: Option<u64>, tag: &Option<String>, kind: EventKind) {
        let tick = self.session.clock();
        self.transcript.push(request, tick, tag.clone(), kind);
    }

    fn mint(&mut self, key_choice: MintKey, tool: &ToolDefinition, scopes: &BTreeSet<String>) -> String {
        let jti = format!("jti-{:06}", self.next_jti);
        self.next_jti += 1;
        let now = self.now();
        let (iss, key) = match key_choice {
            MintKey::Tool => (&self.cfg.issuers.tool_issuer, &self.cfg.issuers.tool_key),
            MintKey::Rogue => (&self.cfg.issuers.rogue_issuer, &self.cfg.issuers.rogue_key),
        };
        let claims = ToolClaims {
            iss: iss.clone(),
            sub: self.cfg.user_id.clone(),
            iat: now,
            exp: now + self.cfg.token_ttl,
            tool_id: tool.id.clone(),
            tool_version: tool.version.to_string(),
            scopes: scopes.clone(),
            jti,
        };
        issue_token(key, &claims)
            .expect("client-built claims are valid")
            .as_str()
            .to_string()
    }

    fn mint_user_token(&mut self, scopes: &BTreeSet<String>) -> String {
        let jti = format!("jti-{:06}", self.next_jti);
        self.next_jti += 1;
        let now = self.now();
        let claims = ToolClaims {
            iss: self.cfg.issuers.user_issuer.clone(),
            sub: self.cfg.user_id.clone(),
            iat: now,
            exp: now + self.cfg.token_ttl,
            tool_id: "*".to_string(),
            tool_version: "0.0.0".to_string(),
            scopes: scopes.clone(),
            jti,
        };
        issue_token(&self.cfg.issuers.user_key, &claims)
            .expect("client-built claims are valid")
            .as_str()
            .to_string()
    }

    /// Mints a fresh tool token for the currently approved version of `tool_id`.
    pub fn refresh_token(&mut self, tool_id: &str, servers: &[SimServer]) -> Result<(), SimError> {
        let Some(entry) = self.catalog.get(tool_id).cloned() else {
            return Err(SimError::UnknownTool(tool_id.to_string()));
        };
        let Some(sd) = server(servers, &entry.server_id).and_then(|s| s.fetch(tool_id)) else {
            return Err(SimError::UnknownTool(tool_id.to_string()));
        };
        let granted = self
            .cfg
            .approvals
            .current(tool_id)?
            .map(|r| r.granted_permissions)
            .unwrap_or_default();
        let tok = self.mint(MintKey::Tool, &sd.definition, &granted);
        self.wallet.insert(tool_id.to_string(), tok);
        Ok(())
    }

    fn approve(&mut self, request: Option<u64>, tag: &Option<String>, sd: &SignedToolDefinition) -> Result<(), SimError> {
        let def = &sd.definition;
        let granted = def.permissions.clone();
        let at = self.now();
        self.cfg.approvals.record_approval(sd, &granted, at)?;
        self.emit(
            request,
            tag,
            EventKind::Approved {
                tool_id: def.id.clone(),
                version: def.version,
                granted: granted.clone(),
            },
        );
        let tok = self.mint(MintKey::Tool, def, &granted);
        self.wallet.insert(def.id.clone(), tok);
        Ok(())
    }

    /// Lists tools from every server, verifies them and asks for consent
    /// where the approval state machine requires it.
    pub fn discover_tools(
        &mut self,
        servers: &[SimServer],
    ) -> Result<(Vec<DiscoveredTool>, Vec<Rejection>), SimError> {
        let mut verified = Vec::new();
        let mut rejected = Vec::new();
        for srv in servers {
            for sd in srv.list_tools() {
                let def = sd.definition.clone();
                self.emit(
                    None,
                    &None,
                    EventKind::Discovered {
                        server_id: srv.server_id.clone(),
                        tool_id: def.id.clone(),
                        version: def.version,
                        key_id: sd.key_id.clone(),
                    },
                );
                let found = DiscoveredTool {
                    server_id: srv.server_id.clone(),
                    tool_id: def.id.clone(),
                    name: def.name.clone(),
                };
                let outcome = match self.cfg.mode {
                    ClientMode::Standard => self.discover_standard(&sd, found.clone())?,
                    ClientMode::Etdi => self.discover_etdi(&sd, found.clone())?,
                };
                match outcome {
                    Ok(()) => verified.push(found),
                    Err(reason) => {
                        self.emit(
                            None,
                            &None,
                            EventKind::Rejected {
                                server_id: srv.server_id.clone(),
                                tool_id: def.id.clone(),
                                reason: reason.clone(),
                            },
                        );
                        rejected.push((sd, reason));
                    }
                }
            }
        }
        Ok((verified, rejected))
    }

    fn discover_standard(&mut self, sd: &SignedToolDefinition, found: DiscoveredTool) -> Result<Result<(), String>, SimError> {
        let def = &sd.definition;
        // identically named tools collapse to the first one seen
        if self.seen_names.contains(&def.name) {
            if self.catalog.get(&def.id).is_some_and(|e| e.server_id == found.server_id) {
                return Ok(Ok(()));
            }
            return Ok(Err("DUPLICATE_NAME".into()));
        }
        self.seen_names.insert(def.name.clone());
        self.emit(
            None,
            &None,
            EventKind::Prompted {
                tool_id: def.id.clone(),
                prompt: format!("Allow tool {}?", def.name),
                report: None,
            },
        );
        if !self.cfg.consent.ask() {
            return Ok(Err("USER_DECLINED".into()));
        }
        self.emit(
            None,
            &None,
            EventKind::Approved {
                tool_id: def.id.clone(),
                version: def.version,
                granted: def.permissions.clone(),
            },
        );
        self.catalog.insert(def.id.clone(), found);
        Ok(Ok(()))
    }

    fn discover_etdi(&mut self, sd: &SignedToolDefinition, found: DiscoveredTool) -> Result<Result<(), String>, SimError> {
        let def = &sd.definition;
        let (provider_id, key_id) = match sd.verify(&self.cfg.trust) {
            VerificationResult::VerifiedBy { provider_id, key_id } => (provider_id, key_id),
            VerificationResult::Invalid { reason } => return Ok(Err(reason.as_str().to_string())),
        };
        if self.catalog.get(&def.id).is_some_and(|e| e.server_id != found.server_id) {
            return Ok(Err("DUPLICATE_TOOL".into()));
        }
        let outcome = evaluate_tool(sd, &self.cfg.trust, &self.cfg.approvals, self.cfg.approval_policy.mode)?;
        self.emit(
            None,
            &None,
            EventKind::Verified {
                server_id: found.server_id.clone(),
                tool_id: def.id.clone(),
                version: def.version,
                provider_id,
                key_id,
                outcome: outcome.name().to_string(),
            },
        );
        match &outcome {
            VerificationOutcome::AllowedExisting => {
                if !self.wallet.contains_key(&def.id) {
                    let granted = self.cfg.approvals.current(&def.id)?.map(|r| r.granted_permissions).unwrap_or_default();
                    let tok = self.mint(MintKey::Tool, def, &granted);
                    self.wallet.insert(def.id.clone(), tok);
                }
            }
            VerificationOutcome::DowngradeWarning { .. } => {
                if self.cfg.approval_policy.on_downgrade == DowngradeAction::Block {
                    return Ok(Err(outcome.name().into()));
                }
            }
            VerificationOutcome::RejectedSignature { reason } => return Ok(Err(reason.as_str().into())),
            VerificationOutcome::NeedsApprovalTampered { .. }
                if self.cfg.approval_policy.on_tamper == TamperAction::HardFail =>
            {
                return Ok(Err(outcome.name().into()));
            }
            _ if outcome.report().is_some_and(|r| !r.requires_reapproval) => {
                self.approve(None, &None, sd)?;
            }
            _ => {
                let prompt = outcome.prompt(def).unwrap_or_default();
                self.emit(
                    None,
                    &None,
                    EventKind::Prompted {
                        tool_id: def.id.clone(),
                        prompt,
                        report: outcome.report().cloned(),
                    },
                );
                if !self.cfg.consent.ask() {
                    return Ok(Err("USER_DECLINED".into()));
                }
                self.approve(None, &None, sd)?;
            }
        }
        self.catalog.insert(def.id.clone(), found);
        Ok(Ok(()))
    }

    /// Runs one top-level invocation through the full pipeline.
    pub fn invoke_tool(&mut self, servers: &[SimServer], spec: &InvokeSpec) -> Result<(), SimError> {
        let user_token = spec.user_scopes.as_ref().map(|s| self.mint_user_token(s));
        let tool_token = match &spec.tool_token {
            Some(TokenRef::Wallet(t)) => self.wallet.get(t).cloned(),
            Some(TokenRef::Saved(l)) => self.saved.get(l).cloned(),
            Some(TokenRef::Rogue(t)) => {
                let sd = self
                    .catalog
                    .get(t)
                    .and_then(|e| server(servers, &e.server_id))
                    .and_then(|s| s.fetch(t));
                sd.map(|sd| self.mint(MintKey::Rogue, &sd.definition, &sd.definition.permissions))
            }
            Some(TokenRef::None) => None,
            None => self.wallet.get(&spec.tool_id).cloned(),
        };
        let call = NestedCall {
            tool_id: spec.tool_id.clone(),
            action: spec.action.clone(),
            resource: spec.resource.clone(),
            scopes: spec.scopes.clone(),
            tag: spec.tag.clone(),
        };
        self.invoke_inner(servers, &call, tool_token, None, user_token.as_deref(), &spec.user_context)
    }

    fn invoke_inner(
        &mut self,
        servers: &[SimServer],
        call: &NestedCall,
        tool_token: Option<String>,
        caller: Option<String>,
        user_token: Option<&str>,
        user_context: &Value,
    ) -> Result<(), SimError> {
        let Some(entry) = self.catalog.get(&call.tool_id).cloned() else {
            return Err(SimError::UnknownTool(call.tool_id.clone()));
        };
        let request = self.next_request;
        self.next_request += 1;
        let ctx = Ctx {
            request,
            tag: call.tag.clone(),
            caller,
            user_token,
            user_context,
        };
        let Some(srv) = server(servers, &entry.server_id) else {
            return Err(SimError::UnknownTool(call.tool_id.clone()));
        };
        let Some(sd) = srv.fetch(&call.tool_id) else {
            self.deny(&ctx, &call.tool_id, Stage::Lookup, "TOOL_WITHDRAWN");
            return Ok(());
        };
        match self.cfg.mode {
            ClientMode::Standard => self.run_standard(servers, srv, &sd, ctx),
            ClientMode::Etdi => self.run_etdi(servers, srv, &sd, call, tool_token, ctx),
        }
    }

    /// Records an invocation of a tool that never passed discovery.
    pub fn deny_unknown(&mut self, spec: &InvokeSpec) {
        let request = self.next_request;
        self.next_request += 1;
        self.emit(
            Some(request),
            &spec.tag,
            EventKind::Denied {
                tool_id: spec.tool_id.clone(),
                stage: Stage::Lookup,
                reason: "UNKNOWN_TOOL".into(),
            },
        );
    }

    fn deny(&mut self, ctx: &Ctx, tool_id: &str, stage: Stage, reason: impl Into<String>) {
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::Denied {
                tool_id: tool_id.to_string(),
                stage,
                reason: reason.into(),
            },
        );
    }

    fn run_standard(
        &mut self,
        servers: &[SimServer],
        srv: &SimServer,
        sd: &SignedToolDefinition,
        ctx: Ctx,
    ) -> Result<(), SimError> {
        let def = &sd.definition;
        if self.host_stack.len() >= HOST_RECURSION_CAP {
            self.deny(&ctx, &def.id, Stage::Host, "RECURSION_CAP");
            return Ok(());
        }
        self.execute(servers, srv, def, ctx)
    }

    fn run_etdi(
        &mut self,
        servers: &[SimServer],
        srv: &SimServer,
        sd: &SignedToolDefinition,
        call: &NestedCall,
        tool_token: Option<String>,
        ctx: Ctx,
    ) -> Result<(), SimError> {
        let def = &sd.definition;
        let id = def.id.as_str();

        // (1) approval state
        let (provider_id, key_id) = match sd.verify(&self.cfg.trust) {
            VerificationResult::VerifiedBy { provider_id, key_id } => (provider_id, key_id),
            VerificationResult::Invalid { reason } => {
                self.deny(&ctx, id, Stage::Approval, reason.as_str());
                return Ok(());
            }
        };
        let mut outcome = evaluate_tool(sd, &self.cfg.trust, &self.cfg.approvals, self.cfg.approval_policy.mode)?;
        let mut tool_token = tool_token;
        let silently_reapprovable = outcome.needs_approval()
            && !matches!(outcome, VerificationOutcome::NeedsApprovalNewTool)
            && outcome.report().is_some_and(|r| !r.requires_reapproval);
        if silently_reapprovable {
            self.approve(Some(ctx.request), &ctx.tag, sd)?;
            tool_token = self.wallet.get(id).cloned();
            outcome = VerificationOutcome::AllowedExisting;
        }
        let allowed = match &outcome {
            VerificationOutcome::AllowedExisting => true,
            VerificationOutcome::DowngradeWarning { .. } => {
                self.cfg.approval_policy.on_downgrade != DowngradeAction::Block
            }
            _ => false,
        };
        if !allowed {
            let reason = match &outcome {
                VerificationOutcome::RejectedSignature { reason } => reason.as_str(),
                o => o.name(),
            };
            self.deny(&ctx, id, Stage::Approval, reason);
            return Ok(());
        }
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::Verified {
                server_id: srv.server_id.clone(),
                tool_id: id.to_string(),
                version: def.version,
                provider_id,
                key_id,
                outcome: outcome.name().to_string(),
            },
        );
        let granted = self
            .cfg
            .approvals
            .current(id)?
            .map(|r| r.granted_permissions)
            .unwrap_or_default();

        // (2) tool token and binding
        let now = self.now();
        let Some(token) = tool_token else {
            self.deny(&ctx, id, Stage::Token, "MISSING_TOKEN");
            return Ok(());
        };
        let claims = match validate_token(
            &token,
            &self.cfg.tool_issuers,
            Some(&ToolBinding::of(def)),
            now,
            &self.cfg.revocations,
        ) {
            Ok(c) => c,
            Err(e) => {
                self.deny(&ctx, id, Stage::Token, e.as_str());
                return Ok(());
            }
        };

        // (3) requested scopes against token and approved grant
        for held in [&claims.scopes, &granted] {
            match check_scope_adherence(&call.scopes, held) {
                Ok(Adherence::Pass) => {}
                Ok(Adherence::Fail { missing }) => {
                    let list: Vec<&str> = missing.iter().map(String::as_str).collect();
                    self.deny(&ctx, id, Stage::Scope, format!("SCOPE_NOT_GRANTED: {}", list.join(",")));
                    return Ok(());
                }
                Err(e) => {
                    self.deny(&ctx, id, Stage::Scope, format!("MALFORMED_SCOPE: {e}"));
                    return Ok(());
                }
            }
        }

        // (4) caller entitlements
        if !def.required_caller_entitlements.is_empty() || ctx.user_token.is_some() {
            match check_caller_entitlements(def, ctx.user_token, &self.cfg.user_issuers, now, &self.cfg.revocations) {
                Ok(Adherence::Pass) => {}
                Ok(Adherence::Fail { missing }) => {
                    let list: Vec<&str> = missing.iter().map(String::as_str).collect();
                    self.deny(&ctx, id, Stage::Entitlement, format!("MISSING_ENTITLEMENT: {}", list.join(",")));
                    return Ok(());
                }
                Err(EntitlementError::Token(e)) => {
                    self.deny(&ctx, id, Stage::Entitlement, e.as_str());
                    return Ok(());
                }
                Err(EntitlementError::Scope(e)) => {
                    self.deny(&ctx, id, Stage::Entitlement, format!("MALFORMED_SCOPE: {e}"));
                    return Ok(());
                }
            }
        }
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::TokenChecked {
                tool_id: id.to_string(),
                jti: claims.jti.clone(),
            },
        );

        // (5) policy decision
        let mut context = match flatten_context(ctx.user_context) {
            Ok(c) => c,
            Err(e) => {
                self.deny(&ctx, id, Stage::Policy, format!("BAD_CONTEXT: {e}"));
                return Ok(());
            }
        };
        context.insert("request.time".into(), AttrValue::Num(now as f64));
        let req = AuthorizationRequest {
            principal: def.principal(),
            action: call.action.clone(),
            resource: call.resource.clone(),
            context,
        };
        let decision = match &self.cfg.policy_store_id {
            Some(store) => self.cfg.policies.is_authorized_in(store, &req),
            None => self.cfg.policies.is_authorized(&req),
        };
        if !decision.allowed {
            let reason = if decision.determining_rules.is_empty() {
                "DEFAULT_DENY".to_string()
            } else {
                decision.determining_rules.join(",")
            };
            self.deny(&ctx, id, Stage::Policy, reason);
            return Ok(());
        }
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::PolicyChecked {
                principal: req.principal,
                action: req.action,
                resource: req.resource,
                determining_rules: decision.determining_rules,
            },
        );

        // (6) call stack
        match self.session.push_call(ctx.caller.as_deref(), id, &granted)? {
            CallVerdict::Block { violation } => {
                self.deny(&ctx, id, Stage::Stack, violation.as_str());
                return Ok(());
            }
            CallVerdict::Allow { .. } => {}
        }
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::StackChecked {
                caller: ctx.caller.clone(),
                tool_id: id.to_string(),
                depth: self.session.depth(),
            },
        );

        // (7) run, (8) unwind
        self.execute(servers, srv, def, ctx)
    }

    /// Emits INVOKED, runs nested calls and RESULT, then unwinds. In ETDI
    /// mode the call-stack verifier already holds a frame for this call.
    fn execute(
        &mut self,
        servers: &[SimServer],
        srv: &SimServer,
        def: &ToolDefinition,
        ctx: Ctx,
    ) -> Result<(), SimError> {
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::Invoked {
                server_id: srv.server_id.clone(),
                tool_id: def.id.clone(),
                version: def.version,
                caller: ctx.caller.clone(),
            },
        );
        if self.cfg.mode == ClientMode::Standard {
            self.host_stack.push(def.id.clone());
        }
        let behavior = srv.behavior(&def.id);
        for nested in &behavior.calls {
            let token = self.wallet.get(&nested.tool_id).cloned();
            match self.invoke_inner(servers, nested, token, Some(def.id.clone()), ctx.user_token, ctx.user_context) {
                Err(SimError::UnknownTool(t)) => {
                    let request = self.next_request;
                    self.next_request += 1;
                    let nctx = Ctx {
                        request,
                        tag: nested.tag.clone(),
                        caller: Some(def.id.clone()),
                        user_token: None,
                        user_context: ctx.user_context,
                    };
                    self.deny(&nctx, &t, Stage::Lookup, "UNKNOWN_TOOL");
                }
                other => other?,
            }
        }
        self.emit(
            Some(ctx.request),
            &ctx.tag,
            EventKind::Result {
                tool_id: def.id.clone(),
                payload: behavior.payload.clone(),
                effects: behavior.effects.clone(),
            },
        );
        match self.cfg.mode {
            ClientMode::Standard => {
                self.host_stack.pop();
            }
            ClientMode::Etdi => self.session.pop_call(&def.id)?,
        }
        Ok(())
    }
}

enum MintKey {
    Tool,
    Rogue,
}

fn server<'a>(servers: &'a [SimServer], id: &str) -> Option<&'a SimServer> {
    servers.iter().find(|s| s.server_id == id)
}
