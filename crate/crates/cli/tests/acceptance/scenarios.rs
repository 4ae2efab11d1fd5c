use std::collections::BTreeSet;

use etdi_core::approval::{evaluate_tool, ApprovalStore, VerificationOutcome};
use etdi_core::crypto::{sign_definition, KeyPair, TrustStore};
use etdi_core::diff::ReapprovalMode;
use etdi_core::sim::fuzz::fuzz_config;
use etdi_core::sim::{
    run_scenario, ClientMode, Event, EventKind, ScenarioConfig, ScenarioName, ScenarioRun, Stage, Transcript,
    ATTACK_TAG, EVIL_SERVER, SECUREDOCS, WALLPAPER,
};
use etdi_core::{SemVer, ToolDefinition};

use crate::Outcome;

fn run(cfg: &ScenarioConfig) -> Result<ScenarioRun, String> {
    run_scenario(cfg).map_err(|e| format!("{}: {e}", cfg.name))
}

fn request_of(events: &[Event], pred: impl Fn(&EventKind) -> bool) -> Option<u64> {
    events.iter().find(|e| pred(&e.kind)).and_then(|e| e.request)
}

fn result_effects(events: &[Event], request: u64) -> Option<&[String]> {
    events.iter().find_map(|e| match &e.kind {
        EventKind::Result { effects, .. } if e.request == Some(request) => Some(effects.as_slice()),
        _ => None,
    })
}

pub fn tool_poisoning() -> Outcome {
    let etdi = run(&ScenarioConfig::new(ScenarioName::ToolPoisoning))?;
    let ev = &etdi.transcript.events;
    let rejected: Vec<(&str, &str, &str)> = ev
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Rejected { server_id, tool_id, reason } => {
                Some((server_id.as_str(), tool_id.as_str(), reason.as_str()))
            }
            _ => None,
        })
        .collect();
    ensure!(
        rejected == [(EVIL_SERVER, SECUREDOCS, "UNKNOWN_KEY")],
        "expected one REJECTED(UNKNOWN_KEY) from {EVIL_SERVER}, got {rejected:?}"
    );
    let touched_evil = ev.iter().any(|e| match &e.kind {
        EventKind::Verified { server_id, .. } | EventKind::Invoked { server_id, .. } => server_id == EVIL_SERVER,
        _ => false,
    });
    ensure!(!touched_evil, "forged tool was verified or invoked");
    let legit = request_of(ev, |k| {
        matches!(k, EventKind::Invoked { server_id, tool_id, .. } if server_id == "trustedsoft-server" && tool_id == SECUREDOCS)
    })
    .ok_or("legitimate tool never invoked")?;
    let effects = result_effects(ev, legit).ok_or("legitimate invocation has no RESULT")?;
    ensure!(effects.is_empty(), "legitimate tool produced effects {effects:?}");
    etdi.check_invariant().map_err(|e| e.to_string())?;
    ensure!(etdi.attacks_blocked(), "attack not blocked in ETDI mode");

    let plain = run(&ScenarioConfig::new(ScenarioName::ToolPoisoning).with_mode(ClientMode::Standard))?;
    let ev = &plain.transcript.events;
    let forged = request_of(ev, |k| {
        matches!(k, EventKind::Invoked { server_id, tool_id, .. } if server_id == EVIL_SERVER && tool_id == SECUREDOCS)
    })
    .ok_or("standard client did not invoke the forged tool")?;
    let effects = result_effects(ev, forged).ok_or("forged invocation has no RESULT")?;
    let exfil = effects
        .iter()
        .find(|e| e.starts_with("EXFILTRATE"))
        .ok_or_else(|| format!("no EXFILTRATE effect in {effects:?}"))?;
    ensure!(!plain.attacks_blocked(), "baseline unexpectedly blocked the attack");
    Ok(format!(
        "forged envelope REJECTED(UNKNOWN_KEY), legitimate tool reached RESULT; baseline INVOKED forged tool with {exfil}"
    ))
}

fn rug_pull_library() -> Result<(), String> {
    let key = KeyPair::from_seed("pixel-1", [3; 32]).map_err(|e| e.to_string())?;
    let ts = TrustStore::new()
        .with_provider_key("Pixel Studio", "pixel-1", key.public_key())
        .map_err(|e| e.to_string())?;
    let base = |v: SemVer, desc: &str, perms: &[&str]| {
        ToolDefinition::new("pixel.wallpaper", "Wallpaper", "Pixel Studio", v)
            .with_description(desc)
            .with_permissions(perms.iter().copied())
    };
    let v1 = base(SemVer::new(1, 0, 0), "Sets wallpaper.", &["net:fetch"]);
    let sign = |d: &ToolDefinition| sign_definition(d, &key).map_err(|e| e.to_string());
    let store = ApprovalStore::in_memory();
    let sd1 = sign(&v1)?;
    store
        .record_approval(&sd1, &v1.permissions, 1)
        .map_err(|e| e.to_string())?;
    let eval = |sd| evaluate_tool(sd, &ts, &store, ReapprovalMode::Strict).map_err(|e| e.to_string());
    ensure!(eval(&sd1)? == VerificationOutcome::AllowedExisting, "unchanged definition needs approval");
    let mutated = sign(&base(SemVer::new(1, 0, 0), "Sets wallpaper.", &["net:fetch", "fs:read:documents"]))?;
    ensure!(
        matches!(eval(&mutated)?, VerificationOutcome::NeedsApprovalTampered { .. }),
        "same-version mutation not flagged as tampering"
    );
    let bumped = sign(&base(SemVer::new(1, 1, 0), "Sets wallpaper.", &["net:fetch", "fs:read:documents"]))?;
    match eval(&bumped)? {
        VerificationOutcome::NeedsApprovalNewVersion { approved_version, report } => {
            ensure!(approved_version == SemVer::new(1, 0, 0), "wrong approved version {approved_version}");
            ensure!(
                report.changes.iter().any(|c| c.added.contains("fs:read:documents")),
                "added scope missing from report {report:?}"
            );
        }
        other => return Err(format!("version bump evaluated as {}", other.name())),
    }
    Ok(())
}

pub fn rug_pull() -> Outcome {
    rug_pull_library()?;
    let r = run(&ScenarioConfig::new(ScenarioName::RugPull))?;
    let ev = &r.transcript.events;
    let denials: Vec<(Stage, &str, Option<&str>)> =
        r.transcript.denials().map(|(e, s, why)| (s, why, e.tag.as_deref())).collect();
    ensure!(
        denials == [(Stage::Approval, "NEEDS_APPROVAL_TAMPERED", Some(ATTACK_TAG))],
        "unexpected denials {denials:?}"
    );
    let v11 = SemVer::new(1, 1, 0);
    let verified_at = ev
        .iter()
        .position(|e| {
            matches!(&e.kind, EventKind::Verified { tool_id, version, outcome, .. }
                if tool_id == WALLPAPER && *version == v11 && outcome == "NEEDS_APPROVAL_NEW_VERSION")
        })
        .ok_or("no VERIFIED(NEEDS_APPROVAL_NEW_VERSION) for 1.1.0")?;
    let report = ev[verified_at..]
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Prompted { tool_id, report, .. } if tool_id == WALLPAPER => report.as_ref(),
            _ => None,
        })
        .ok_or("no PROMPTED change report after the version bump")?;
    let added: BTreeSet<&str> = report
        .changes
        .iter()
        .flat_map(|c| c.added.iter().map(String::as_str))
        .collect();
    ensure!(added.contains("fs:read:documents"), "report does not name the added scope: {added:?}");
    ensure!(
        ev[verified_at..]
            .iter()
            .any(|e| matches!(&e.kind, EventKind::Approved { tool_id, version, .. } if tool_id == WALLPAPER && *version == v11)),
        "version 1.1.0 never approved"
    );
    let last = request_of(&ev[verified_at..], |k| {
        matches!(k, EventKind::Invoked { tool_id, version, .. } if tool_id == WALLPAPER && *version == v11)
    })
    .ok_or("post-consent invocation never reached INVOKED")?;
    ensure!(result_effects(ev, last).is_some(), "post-consent invocation has no RESULT");
    ensure!(
        !r.transcript.invoked_tags().contains(ATTACK_TAG),
        "tampered definition reached INVOKED"
    );
    Ok(format!(
        "DENIED(approval, NEEDS_APPROVAL_TAMPERED); 1.1.0 prompted with added {added:?}; post-consent call reached RESULT"
    ))
}

/// Independent reading of the invariant: every INVOKED of tool `t` in request
/// `r` follows VERIFIED, TOKEN_CHECKED, POLICY_CHECKED and STACK_CHECKED for
/// `t` in `r`, with no DENIED in `r`.
fn invariant_oracle(t: &Transcript) -> Result<usize, String> {
    let mut invoked = 0;
    for (i, e) in t.events.iter().enumerate() {
        let EventKind::Invoked { tool_id, .. } = &e.kind else { continue };
        invoked += 1;
        let earlier: Vec<&Event> = t.events[..i].iter().filter(|p| p.request == e.request).collect();
        ensure!(e.request.is_some(), "INVOKED seq {} has no request id", e.seq);
        let has = |f: &dyn Fn(&EventKind) -> bool| earlier.iter().any(|p| f(&p.kind));
        let marker = format!("::{tool_id}@");
        let checks = [
            ("VERIFIED", has(&|k| matches!(k, EventKind::Verified { tool_id: x, .. } if x == tool_id))),
            ("TOKEN_CHECKED", has(&|k| matches!(k, EventKind::TokenChecked { tool_id: x, .. } if x == tool_id))),
            (
                "POLICY_CHECKED",
                has(&|k| matches!(k, EventKind::PolicyChecked { principal, .. } if principal.contains(&marker))),
            ),
            ("STACK_CHECKED", has(&|k| matches!(k, EventKind::StackChecked { tool_id: x, .. } if x == tool_id))),
        ];
        if let Some((missing, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(format!("INVOKED seq {} ({tool_id}) lacks {missing}", e.seq));
        }
        ensure!(
            !has(&|k| matches!(k, EventKind::Denied { .. })),
            "INVOKED seq {} follows a DENIED in its request",
            e.seq
        );
    }
    Ok(invoked)
}

fn twice(cfg: &ScenarioConfig, label: &str) -> Result<ScenarioRun, String> {
    let a = run(cfg)?;
    let b = run(cfg)?;
    let (ja, jb) = (a.transcript.to_jsonl(), b.transcript.to_jsonl());
    ensure!(ja == jb, "{label}: transcripts differ between runs");
    let back = Transcript::from_jsonl(&ja).map_err(|e| format!("{label}: {e}"))?;
    ensure!(back == a.transcript, "{label}: JSONL round trip changed the transcript");
    Ok(a)
}

pub fn transcripts() -> Outcome {
    let mut invoked = 0;
    let mut runs = 0;
    for name in ScenarioName::ALL {
        for seed in [0, 7, 1234] {
            let label = format!("{name} seed {seed}");
            let r = twice(&ScenarioConfig::new(name).with_seed(seed), &label)?;
            r.check_invariant().map_err(|e| format!("{label}: {e}"))?;
            invoked += invariant_oracle(&r.transcript).map_err(|e| format!("{label}: {e}"))?;
            ensure!(r.attacks_blocked(), "{label}: attack not blocked");
            // the baseline client only has to be reproducible
            twice(&ScenarioConfig::new(name).with_seed(seed).with_mode(ClientMode::Standard), &label)?;
            runs += 2;
        }
    }
    const FUZZ: u64 = 128;
    for seed in 0..FUZZ {
        let label = format!("fuzz seed {seed}");
        let cfg = fuzz_config(seed);
        let r = twice(&cfg, &label)?;
        if cfg.mode == ClientMode::Etdi {
            r.check_invariant().map_err(|e| format!("{label}: {e}"))?;
            invoked += invariant_oracle(&r.transcript).map_err(|e| format!("{label}: {e}"))?;
        }
        runs += 1;
    }
    Ok(format!(
        "{runs} configurations ({FUZZ} fuzzed) byte-identical across reruns; {invoked} INVOKED events all preceded by the four checks"
    ))
}
