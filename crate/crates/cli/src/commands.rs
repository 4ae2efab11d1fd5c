use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use etdi_core::approval::{evaluate_tool, ApprovalPolicy, ApprovalStore, DowngradeAction, TamperAction, VerificationOutcome};
use etdi_core::callstack::{begin_session, CallStackPolicy, CallVerdict};
use etdi_core::crypto::{
    generate_keypair, KeyPair, KeyPairFile, SignedPolicyDocument, SignedToolDefinition, TrustStore, VerificationResult,
};
use etdi_core::diff::ReapprovalMode;
use etdi_core::model::{decode_definition, SemVer};
use etdi_core::policy::{load_policy_store, AuthorizationRequest, PolicyDocument, PolicyMode};
use etdi_core::sim::{run_scenario, ClientMode, ScenarioConfig, ScenarioName};
use etdi_core::token::{issue_token, validate_token, RevocationList, ToolBinding, ToolClaims};

use crate::config::{lock, read, read_json, write, CliConfig};
use crate::{Cli, CliError, Command, ConsentMode, Format};

const ALLOW: u8 = 0;
const DENY: u8 = 1;

struct Out {
    format: Format,
}

impl Out {
    /// Prints the machine document in JSON mode, `text` otherwise.
    fn emit(&self, doc: &Value, text: impl FnOnce() -> String) {
        match self.format {
            Format::Json => println!("{}", serde_json::to_string(doc).expect("values serialize")),
            Format::Text => println!("{}", text()),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("library documents serialize")
}

fn unix_now(now: Option<u64>) -> u64 {
    now.unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn load_trust(cfg: &CliConfig) -> Result<TrustStore, CliError> {
    let path = cfg.require(&cfg.trust_store, "trust store")?;
    let ts: TrustStore = read_json(path)?;
    ts.validate().map_err(|e| CliError::op(format!("{}: {e}", path.display())))?;
    Ok(ts)
}

fn load_revocations(cfg: &CliConfig) -> Result<RevocationList, CliError> {
    match &cfg.revocations {
        Some(p) => RevocationList::load(p).map_err(|e| CliError::op(format!("{}: {e}", p.display()))),
        None => Ok(RevocationList::new()),
    }
}

fn open_approvals(cfg: &CliConfig) -> Result<ApprovalStore, CliError> {
    let path = cfg.require(&cfg.approval_store, "approval store")?;
    ApprovalStore::open(path).map_err(|e| CliError::op(format!("{}: {e}", path.display())))
}

fn load_key(path: &Path) -> Result<KeyPair, CliError> {
    let file: KeyPairFile = read_json(path)?;
    KeyPair::from_file(&file).map_err(|e| CliError::op(format!("{}: {e}", path.display())))
}

pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let cfg = CliConfig::resolve(&cli.global)?;
    let out = Out {
        format: cli.global.format,
    };
    match &cli.command {
        Command::Keygen { key_id, out: path, force } => keygen(&out, key_id, path, *force),
        Command::Sign {
            definition,
            key,
            out: path,
            policy_doc,
        } => sign(&out, definition, key, path.as_deref(), *policy_doc),
        Command::Verify { envelope, policy_doc } => verify(&out, &cfg, envelope, *policy_doc),
        Command::Approve { envelope, grant, now } => approve(&out, &cfg, envelope, grant, unix_now(*now)),
        Command::RevokeApproval { tool_id, now } => revoke_approval(&out, &cfg, tool_id, unix_now(*now)),
        Command::RevokeKey { owner, key_id, issuer } => revoke_key(&out, &cfg, owner, key_id, *issuer),
        Command::TokenMint {
            key,
            issuer,
            subject,
            tool_id,
            tool_version,
            scopes,
            jti,
            ttl,
            now,
        } => {
            let iat = unix_now(*now);
            let claims = ToolClaims {
                iss: issuer.clone(),
                sub: subject.clone(),
                iat,
                exp: iat.saturating_add(*ttl),
                tool_id: tool_id.clone(),
                tool_version: tool_version.clone(),
                scopes: scopes.iter().filter(|s| !s.is_empty()).cloned().collect(),
                jti: jti.clone(),
            };
            token_mint(&out, key, &claims)
        }
        Command::TokenCheck {
            token,
            tool_id,
            tool_version,
            now,
        } => token_check(&out, &cfg, token, tool_id.as_deref(), tool_version.as_deref(), unix_now(*now)),
        Command::PolicyCheck { request, store_id } => policy_check(&out, &cfg, request, store_id.as_deref()),
        Command::StackCheck { script } => stack_check(&out, &cfg, script),
        Command::RunScenario {
            scenario_config,
            name,
            seed,
            standard,
            out: path,
        } => run_scenario_cmd(&out, scenario_config.as_deref(), name.as_deref(), *seed, *standard, path.as_deref()),
        Command::Audit => audit(&out, &cfg),
    }
}

fn keygen(out: &Out, key_id: &str, path: &Path, force: bool) -> Result<u8, CliError> {
    if path.exists() && !force {
        return Err(CliError::op(format!("{} exists (use --force to overwrite)", path.display())));
    }
    let pair = generate_keypair(key_id).map_err(|e| CliError::op(e.to_string()))?;
    let file = pair.to_file();
    let text = serde_json::to_string_pretty(&file).expect("key file serializes");
    write_private(path, text.as_bytes())?;
    let doc = json!({
        "key_id": file.key_id,
        "algorithm": file.algorithm,
        "public_key": file.public_key,
    });
    out.emit(&doc, || format!("key_id: {}\npublic_key: {}", file.key_id, file.public_key));
    Ok(ALLOW)
}

#[cfg(unix)]
fn write_private(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)
        .map_err(|e| CliError::op(format!("{}: {e}", path.display())))?;
    f.write_all(contents)
        .map_err(|e| CliError::op(format!("{}: {e}", path.display())))?;
    // mode() only applies on creation
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))
        .map_err(|e| CliError::op(format!("{}: {e}", path.display())))
}

#[cfg(not(unix))]
fn write_private(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    write(path, contents)
}

fn sign(out: &Out, def_path: &Path, key_path: &Path, dest: Option<&Path>, policy_doc: bool) -> Result<u8, CliError> {
    let key = load_key(key_path)?;
    let text = read(def_path)?;
    let envelope = if policy_doc {
        let doc: PolicyDocument =
            serde_json::from_str(&text).map_err(|e| CliError::op(format!("{}: {e}", def_path.display())))?;
        let spd = SignedPolicyDocument::sign(doc, &key).map_err(|e| CliError::op(e.to_string()))?;
        to_value(&spd)
    } else {
        let def = decode_definition(text.as_bytes()).map_err(|e| CliError::op(format!("{}: {e}", def_path.display())))?;
        let sd = SignedToolDefinition::sign(def, &key).map_err(|e| CliError::op(e.to_string()))?;
        to_value(&sd)
    };
    if let Some(dest) = dest {
        let pretty = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
        write(dest, pretty.as_bytes())?;
    }
    let hash = envelope["signed_bytes_hash"].as_str().unwrap_or_default().to_string();
    out.emit(&envelope, || match dest {
        Some(d) => format!("signed with {} -> {} (hash {hash})", key.key_id(), d.display()),
        None => serde_json::to_string_pretty(&envelope).expect("envelope serializes"),
    });
    Ok(ALLOW)
}

fn verification_text(r: &VerificationResult) -> String {
    match r {
        VerificationResult::VerifiedBy { provider_id, key_id } => format!("VERIFIED by {provider_id} (key {key_id})"),
        VerificationResult::Invalid { reason } => format!("INVALID {reason}"),
    }
}

fn verify(out: &Out, cfg: &CliConfig, envelope: &Path, policy_doc: bool) -> Result<u8, CliError> {
    let ts = load_trust(cfg)?;
    let result = if policy_doc {
        read_json::<SignedPolicyDocument>(envelope)?.verify(&ts)
    } else {
        read_json::<SignedToolDefinition>(envelope)?.verify(&ts)
    };
    out.emit(&to_value(&result), || verification_text(&result));
    Ok(if result.is_verified() { ALLOW } else { DENY })
}

fn ask(prompt: &str) -> Result<bool, CliError> {
    eprint!("{prompt} [y/N] ");
    std::io::stderr().flush().ok();
    let mut line = String::new();
    std::io::stdin()
        .lock()
        .read_line(&mut line)
        .map_err(|e| CliError::op(format!("reading consent: {e}")))?;
    Ok(matches!(line.trim().to_ascii_lowercase().as_str(), "y" | "yes"))
}

fn approval_policy(cfg: &CliConfig) -> ApprovalPolicy {
    ApprovalPolicy {
        mode: match cfg.strict {
            Some(false) => ReapprovalMode::Lenient,
            _ => ReapprovalMode::Strict,
        },
        ..ApprovalPolicy::default()
    }
}

/// Result document of `approve`.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ApproveReport {
    pub outcome: VerificationOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// approved, declined, blocked, not_required or rejected
    pub decision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<etdi_core::approval::ApprovalRecord>,
}

fn approve(out: &Out, cfg: &CliConfig, envelope: &Path, grant: &[String], now: u64) -> Result<u8, CliError> {
    let ts = load_trust(cfg)?;
    let sd: SignedToolDefinition = read_json(envelope)?;
    let store_path = cfg.require(&cfg.approval_store, "approval store")?;
    let _guard = lock(store_path)?;
    let store = open_approvals(cfg)?;
    let policy = approval_policy(cfg);
    let outcome = evaluate_tool(&sd, &ts, &store, policy.mode).map_err(|e| CliError::op(e.to_string()))?;
    let def = &sd.definition;
    let prompt = outcome.prompt(def);
    let granted: BTreeSet<String> = if grant.is_empty() {
        def.permissions.clone()
    } else {
        grant.iter().cloned().collect()
    };

    let (decision, code, record) = match &outcome {
        VerificationOutcome::RejectedSignature { reason } => {
            let report = ApproveReport {
                outcome: outcome.clone(),
                prompt: None,
                decision: "rejected".into(),
                record: None,
            };
            out.emit(&to_value(&report), || format!("REJECTED_SIGNATURE {reason}"));
            return Err(CliError::op(format!("envelope does not verify: {reason}")));
        }
        VerificationOutcome::AllowedExisting => ("not_required", ALLOW, None),
        VerificationOutcome::DowngradeWarning { .. } => match policy.on_downgrade {
            DowngradeAction::Block => ("blocked", DENY, None),
            _ => ("not_required", ALLOW, None),
        },
        VerificationOutcome::NeedsApprovalTampered { .. } if policy.on_tamper == TamperAction::HardFail => {
            ("blocked", DENY, None)
        }
        _ => {
            let silent = outcome.report().is_some_and(|r| !r.requires_reapproval);
            let yes = silent
                || match cfg.consent {
                    ConsentMode::Yes => true,
                    ConsentMode::No => false,
                    ConsentMode::Prompt => {
                        if out.format == Format::Text {
                            print_outcome(&outcome);
                        }
                        ask(prompt.as_deref().unwrap_or("Approve?"))?
                    }
                };
            if yes {
                let rec = store
                    .record_approval(&sd, &granted, now)
                    .map_err(|e| CliError::op(e.to_string()))?;
                ("approved", ALLOW, Some(rec))
            } else {
                ("declined", DENY, None)
            }
        }
    };
    let report = ApproveReport {
        outcome,
        prompt,
        decision: decision.to_string(),
        record,
    };
    out.emit(&to_value(&report), || {
        let mut s = describe_outcome(&report.outcome);
        if let Some(p) = &report.prompt {
            s.push_str(&format!("\nprompt: {p}"));
        }
        s.push_str(&format!("\ndecision: {}", report.decision));
        s
    });
    Ok(code)
}

fn describe_outcome(o: &VerificationOutcome) -> String {
    let mut s = o.name().to_string();
    if let Some(r) = o.report() {
        s.push_str(&format!("\ncontent hash changed: {}", r.content_hash_changed));
        for c in &r.changes {
            let field = to_value(&c.field);
            let class = to_value(&c.class);
            s.push_str(&format!(
                "\n  {} [{}]",
                field.as_str().unwrap_or_default(),
                class.as_str().unwrap_or_default()
            ));
            for a in &c.added {
                s.push_str(&format!("\n    + {a}"));
            }
            for r in &c.removed {
                s.push_str(&format!("\n    - {r}"));
            }
        }
    }
    s
}

fn print_outcome(o: &VerificationOutcome) {
    eprintln!("{}", describe_outcome(o));
}

fn revoke_approval(out: &Out, cfg: &CliConfig, tool_id: &str, now: u64) -> Result<u8, CliError> {
    let path = cfg.require(&cfg.approval_store, "approval store")?;
    let _guard = lock(path)?;
    let store = open_approvals(cfg)?;
    store
        .revoke_approval(tool_id, now)
        .map_err(|e| CliError::op(e.to_string()))?;
    out.emit(&json!({"tool_id": tool_id, "revoked": true}), || format!("approval of {tool_id} revoked"));
    Ok(ALLOW)
}

fn revoke_key(out: &Out, cfg: &CliConfig, owner: &str, key_id: &str, issuer: bool) -> Result<u8, CliError> {
    let path = cfg.require(&cfg.trust_store, "trust store")?;
    let ts = load_trust(cfg)?;
    let _guard = lock(path)?;
    let updated = if issuer {
        ts.revoke_issuer_key(owner, key_id)
    } else {
        ts.revoke_key(owner, key_id)
    }
    .map_err(|e| CliError::op(e.to_string()))?;
    let text = serde_json::to_string_pretty(&updated).expect("trust store serializes");
    write(path, text.as_bytes())?;
    out.emit(
        &json!({"owner": owner, "key_id": key_id, "status": "REVOKED"}),
        || format!("key {key_id} of {owner} revoked"),
    );
    Ok(ALLOW)
}

fn token_mint(out: &Out, key_path: &Path, claims: &ToolClaims) -> Result<u8, CliError> {
    let key = load_key(key_path)?;
    let tok = issue_token(&key, claims).map_err(|e| CliError::op(e.to_string()))?;
    out.emit(&json!({"token": tok.as_str(), "claims": claims}), || tok.as_str().to_string());
    Ok(ALLOW)
}

fn token_check(
    out: &Out,
    cfg: &CliConfig,
    token: &str,
    tool_id: Option<&str>,
    tool_version: Option<&str>,
    now: u64,
) -> Result<u8, CliError> {
    let ts = load_trust(cfg)?;
    let revoked = load_revocations(cfg)?;
    let binding = match (tool_id, tool_version) {
        (Some(id), Some(v)) => Some(ToolBinding {
            tool_id: id.to_string(),
            tool_version: v
                .parse::<SemVer>()
                .map_err(|e| CliError::op(format!("--tool-version: {e}")))?,
        }),
        _ => None,
    };
    match validate_token(token, &ts, binding.as_ref(), now, &revoked) {
        Ok(claims) => {
            out.emit(&json!({"valid": true, "claims": claims}), || {
                format!("VALID {} for {}@{} (jti {})", claims.sub, claims.tool_id, claims.tool_version, claims.jti)
            });
            Ok(ALLOW)
        }
        Err(e) => {
            out.emit(&json!({"valid": false, "error": e}), || format!("INVALID {e}"));
            Ok(DENY)
        }
    }
}

fn policy_check(out: &Out, cfg: &CliConfig, request: &Path, store_id: Option<&str>) -> Result<u8, CliError> {
    let ts = load_trust(cfg)?;
    let req: AuthorizationRequest = read_json(request)?;
    let mut docs = Vec::new();
    for p in &cfg.policy_files {
        docs.push(read_json::<SignedPolicyDocument>(p)?);
    }
    let mode = match cfg.strict {
        Some(true) => PolicyMode::Strict,
        _ => PolicyMode::Lenient,
    };
    let (store, report) = load_policy_store(&docs, &ts, mode).map_err(|e| CliError::op(e.to_string()))?;
    for r in &report.rejected {
        eprintln!("warning: policy {} {} rejected: {}", r.policy_store_id, r.version, r.reason);
    }
    let decision = match store_id {
        Some(id) => store.is_authorized_in(id, &req),
        None => store.is_authorized(&req),
    };
    out.emit(&to_value(&decision), || {
        format!(
            "{} ({})\nrules: {}",
            if decision.allowed { "ALLOW" } else { "DENY" },
            decision.reason,
            if decision.determining_rules.is_empty() {
                "-".to_string()
            } else {
                decision.determining_rules.join(", ")
            }
        )
    });
    Ok(if decision.allowed { ALLOW } else { DENY })
}

/// Input of `stack-check`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackScript {
    #[serde(default = "default_session")]
    pub session_id: String,
    /// Inline policy; falls back to the configured policy file.
    #[serde(default)]
    pub policy: Option<CallStackPolicy>,
    pub ops: Vec<StackOp>,
}

fn default_session() -> String {
    "cli".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum StackOp {
    Push {
        #[serde(default)]
        caller: Option<String>,
        callee: String,
        #[serde(default)]
        scopes: BTreeSet<String>,
    },
    Pop {
        tool_id: String,
    },
    Advance {
        ticks: u64,
    },
}

fn stack_check(out: &Out, cfg: &CliConfig, script: &Path) -> Result<u8, CliError> {
    let script: StackScript = read_json(script)?;
    let policy = match script.policy {
        Some(p) => p,
        None => read_json(cfg.require(&cfg.callstack_policy, "call-stack policy")?)?,
    };
    let mut session = begin_session(&script.session_id, policy).map_err(|e| CliError::op(e.to_string()))?;
    let mut results = Vec::new();
    let mut blocked = false;
    for (i, op) in script.ops.iter().enumerate() {
        let r = match op {
            StackOp::Push { caller, callee, scopes } => {
                let v = session
                    .push_call(caller.as_deref(), callee, scopes)
                    .map_err(|e| CliError::op(format!("op {i}: {e}")))?;
                blocked |= matches!(v, CallVerdict::Block { .. });
                to_value(&v)
            }
            StackOp::Pop { tool_id } => {
                session.pop_call(tool_id).map_err(|e| CliError::op(format!("op {i}: {e}")))?;
                json!({"popped": tool_id, "depth": session.depth()})
            }
            StackOp::Advance { ticks } => {
                session.advance_clock(*ticks);
                json!({"clock": session.clock()})
            }
        };
        results.push(r);
    }
    if let Some(log) = &cfg.violation_log {
        let _guard = lock(log)?;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(log)
            .map_err(|e| CliError::op(format!("{}: {e}", log.display())))?;
        for v in session.violations() {
            let line = serde_json::to_string(v).expect("violation serializes");
            writeln!(f, "{line}").map_err(|e| CliError::op(format!("{}: {e}", log.display())))?;
        }
    }
    let doc = json!({"results": results, "violations": session.violations()});
    out.emit(&doc, || {
        let mut lines: Vec<String> = script
            .ops
            .iter()
            .zip(&results)
            .map(|(op, r)| match op {
                StackOp::Push { caller, callee, .. } => format!(
                    "push {} -> {callee}: {}{}",
                    caller.as_deref().unwrap_or("(root)"),
                    r["verdict"].as_str().unwrap_or_default(),
                    r.get("violation").and_then(Value::as_str).map(|v| format!(" {v}")).unwrap_or_default()
                ),
                StackOp::Pop { tool_id } => format!("pop {tool_id}"),
                StackOp::Advance { ticks } => format!("advance {ticks}"),
            })
            .collect();
        lines.push(format!("violations: {}", session.violations().len()));
        lines.join("\n")
    });
    Ok(if blocked { DENY } else { ALLOW })
}

fn load_scenario_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    let mut cfg: ScenarioConfig = parsed.map_err(|e| CliError::op(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in &mut cfg.policy_files {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn run_scenario_cmd(
    out: &Out,
    config: Option<&Path>,
    name: Option<&str>,
    seed: Option<u64>,
    standard: bool,
    dest: Option<&Path>,
) -> Result<u8, CliError> {
    let mut cfg = match (config, name) {
        (Some(p), _) => load_scenario_config(p)?,
        (None, Some(n)) => ScenarioConfig::new(n.parse::<ScenarioName>().map_err(|e| CliError::op(e.to_string()))?),
        (None, None) => return Err(CliError::op("pass --scenario-config or --name")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if standard {
        cfg.mode = ClientMode::Standard;
    }
    let run = run_scenario(&cfg).map_err(|e| CliError::op(e.to_string()))?;
    let jsonl = run.transcript.to_jsonl();
    let invariant = run.check_invariant();
    let blocked = run.attacks_blocked();
    let summary = json!({
        "name": run.name,
        "mode": run.mode,
        "events": run.transcript.len(),
        "invariant": match &invariant { Ok(()) => "ok".to_string(), Err(e) => e.to_string() },
        "attacks_blocked": blocked,
    });
    match dest {
        Some(d) => {
            write(d, jsonl.as_bytes())?;
            out.emit(&summary, || {
                format!(
                    "{} ({:?}): {} events, invariant {}, attacks {}",
                    run.name,
                    run.mode,
                    run.transcript.len(),
                    summary["invariant"].as_str().unwrap_or_default(),
                    if blocked { "blocked" } else { "NOT blocked" }
                )
            });
        }
        None => {
            print!("{jsonl}");
            eprintln!("{summary}");
        }
    }
    Ok(if invariant.is_ok() && blocked { ALLOW } else { DENY })
}

fn audit(out: &Out, cfg: &CliConfig) -> Result<u8, CliError> {
    let approvals = match &cfg.approval_store {
        Some(_) => open_approvals(cfg)?.history(),
        None => Vec::new(),
    };
    let revoked_tokens: Vec<String> = load_revocations(cfg)?.iter().map(String::from).collect();
    let mut revoked_keys = Vec::new();
    if let Some(p) = &cfg.trust_store {
        if p.exists() {
            let ts = load_trust(cfg)?;
            revoked_keys = ts.revoked_keys();
        }
    }
    let mut violations: Vec<Value> = Vec::new();
    if let Some(p) = &cfg.violation_log {
        if p.exists() {
            for (i, line) in read(p)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                violations.push(
                    serde_json::from_str(line).map_err(|e| CliError::op(format!("{}:{}: {e}", p.display(), i + 1)))?,
                );
            }
        }
    }
    let doc = json!({
        "approvals": approvals,
        "revoked_tokens": revoked_tokens,
        "revoked_keys": revoked_keys,
        "violations": violations,
    });
    out.emit(&doc, || {
        let mut s = format!("approvals ({}):", approvals.len());
        for a in &approvals {
            s.push_str(&format!(
                "\n  {} {} {} {}",
                a.approved_at,
                a.tool_id,
                a.version,
                if a.revoked { "REVOKED" } else { "approved" }
            ));
        }
        s.push_str(&format!("\nrevoked tokens ({}):", revoked_tokens.len()));
        for t in &revoked_tokens {
            s.push_str(&format!("\n  {t}"));
        }
        s.push_str(&format!("\nrevoked keys ({}):", revoked_keys.len()));
        for k in &revoked_keys {
            s.push_str(&format!("\n  {} {}", k.0, k.1));
        }
        s.push_str(&format!("\nviolations ({}):", violations.len()));
        for v in &violations {
            s.push_str(&format!("\n  {v}"));
        }
        s
    });
    Ok(ALLOW)
}
