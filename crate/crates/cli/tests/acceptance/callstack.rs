use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use etdi_core::callstack::{
    begin_session, CallSession, CallStackError, CallStackPolicy, CallVerdict, RateLimit, Violation,
};

use crate::Outcome;

pub const TOOLS: [&str; 5] = ["A", "B", "C", "D", "E"];
pub const SCOPES: [&str; 3] = ["s1", "s2", "s3"];
const SESSIONS: usize = 250;
const STEPS_PER_SESSION: usize = 60;

fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn random_scopes(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    SCOPES.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.to_string()).collect()
}

fn pair(rng: &mut ChaCha8Rng) -> (String, String) {
    (
        TOOLS[rng.gen_range(0..TOOLS.len())].to_string(),
        TOOLS[rng.gen_range(0..TOOLS.len())].to_string(),
    )
}

/// A valid random policy.
pub fn random_policy(rng: &mut ChaCha8Rng) -> CallStackPolicy {
    let mut p = CallStackPolicy {
        max_depth: rng.gen_range(1..=5),
        allow_reentrancy: rng.gen_bool(0.2),
        ..CallStackPolicy::default()
    };
    for _ in 0..rng.gen_range(0..4) {
        p.blocked_chains.insert(pair(rng));
    }
    if rng.gen_bool(0.3) {
        for _ in 0..rng.gen_range(1..8) {
            let c = pair(rng);
            if !p.blocked_chains.contains(&c) {
                p.allowed_chains.insert(c);
            }
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        p.permitted_elevations.insert(pair(rng));
    }
    for _ in 0..rng.gen_range(0..3) {
        p.rate_limits.insert(
            TOOLS[rng.gen_range(0..TOOLS.len())].to_string(),
            RateLimit {
                max_calls: rng.gen_range(0..4),
                window: rng.gen_range(1..6),
            },
        );
    }
    for v in [
        Violation::ChainBlocked,
        Violation::ChainNotAllowlisted,
        Violation::CircularCall,
        Violation::PrivilegeEscalation,
        Violation::RateLimited,
    ] {
        if rng.gen_bool(0.1) {
            p.log_only.insert(v);
        }
    }
    p
}

/// Shadow state kept independently of the verifier.
struct Model {
    policy: CallStackPolicy,
    stack: Vec<(String, BTreeSet<String>)>,
    /// Every allowed call ever made; never pruned.
    history: Vec<(String, u64)>,
    clock: u64,
}

impl Model {
    /// Brute-force recount over the full history.
    fn recount(&self, tool: &str, window: u64) -> usize {
        self.history
            .iter()
            .filter(|(t, at)| t == tool && self.clock < at + window)
            .count()
    }

    fn violations(&self, callee: &str, scopes: &BTreeSet<String>) -> Vec<Violation> {
        let p = &self.policy;
        let mut v = Vec::new();
        if let Some(rl) = p.rate_limits.get(callee) {
            if self.recount(callee, rl.window) >= rl.max_calls as usize {
                v.push(Violation::RateLimited);
            }
        }
        if self.stack.len() >= p.max_depth as usize {
            v.push(Violation::DepthExceeded);
        }
        if !p.allow_reentrancy && self.stack.iter().any(|(t, _)| t == callee) {
            v.push(Violation::CircularCall);
        }
        if let Some((caller, caller_scopes)) = self.stack.last() {
            let chain = (caller.clone(), callee.to_string());
            if p.blocked_chains.contains(&chain) {
                v.push(Violation::ChainBlocked);
            }
            if !p.allowed_chains.is_empty() && !p.allowed_chains.contains(&chain) {
                v.push(Violation::ChainNotAllowlisted);
            }
            if !scopes.iter().all(|s| caller_scopes.contains(s)) && !p.permitted_elevations.contains(&chain) {
                v.push(Violation::PrivilegeEscalation);
            }
        }
        v
    }

    fn expect(&self, callee: &str, scopes: &BTreeSet<String>) -> (CallVerdict, usize) {
        let found = self.violations(callee, scopes);
        let mut logged = Vec::new();
        for (i, v) in found.iter().enumerate() {
            if !self.policy.log_only.contains(v) {
                return (CallVerdict::Block { violation: *v }, i + 1);
            }
            logged.push(*v);
        }
        let n = logged.len();
        (CallVerdict::Allow { logged }, n)
    }
}

fn check_invariants(s: &CallSession, m: &Model) -> Result<(), String> {
    let p = &m.policy;
    let frames: Vec<(String, BTreeSet<String>)> =
        s.stack().iter().map(|f| (f.tool_id.clone(), f.granted_scopes.clone())).collect();
    ensure!(frames == m.stack, "stack diverged from model");
    ensure!(s.depth() <= p.max_depth as usize, "depth {} over {}", s.depth(), p.max_depth);
    if !p.allow_reentrancy && !p.log_only.contains(&Violation::CircularCall) {
        let ids: BTreeSet<&str> = frames.iter().map(|(t, _)| t.as_str()).collect();
        ensure!(ids.len() == frames.len(), "tool repeated on stack {frames:?}");
    }
    if !p.log_only.contains(&Violation::PrivilegeEscalation) {
        for w in frames.windows(2) {
            let chain = (w[0].0.clone(), w[1].0.clone());
            ensure!(
                w[1].1.is_subset(&w[0].1) || p.permitted_elevations.contains(&chain),
                "escalation {} -> {} admitted",
                w[0].0,
                w[1].0
            );
        }
    }
    ensure!(s.clock() == m.clock, "clock diverged");
    Ok(())
}

fn canonical_fixtures() -> Result<(), String> {
    let push = |s: &mut CallSession, caller: Option<&str>, callee: &str, scopes: &[&str]| {
        s.push_call(caller, callee, &set(scopes)).map_err(|e| e.to_string())
    };
    let block = |v: CallVerdict, want: Violation, what: &str| -> Result<(), String> {
        ensure!(v == CallVerdict::Block { violation: want }, "{what}: expected BLOCK {want}, got {v:?}");
        Ok(())
    };
    let session = |p: CallStackPolicy| begin_session("fixture", p).map_err(|e| e.to_string());

    // A -> B -> A
    let mut s = session(CallStackPolicy::default())?;
    push(&mut s, None, "A", &["s1"])?;
    push(&mut s, Some("A"), "B", &["s1"])?;
    block(push(&mut s, Some("B"), "A", &["s1"])?, Violation::CircularCall, "circular")?;

    // max_depth + 1
    let mut s = session(CallStackPolicy {
        max_depth: 3,
        ..CallStackPolicy::default()
    })?;
    let mut caller = None;
    for t in ["A", "B", "C"] {
        ensure!(push(&mut s, caller, t, &["s1"])?.is_allow(), "depth: call {t} within limit blocked");
        caller = Some(t);
    }
    block(push(&mut s, caller, "D", &["s1"])?, Violation::DepthExceeded, "depth")?;

    // blocked pair
    let mut s = session(CallStackPolicy {
        blocked_chains: BTreeSet::from([("A".to_string(), "B".to_string())]),
        ..CallStackPolicy::default()
    })?;
    push(&mut s, None, "A", &["s1"])?;
    block(push(&mut s, Some("A"), "B", &["s1"])?, Violation::ChainBlocked, "blocked pair")?;

    // non-subset scopes, then the same call with a permitted elevation
    let mut s = session(CallStackPolicy::default())?;
    push(&mut s, None, "A", &["s1"])?;
    block(push(&mut s, Some("A"), "B", &["s1", "s2"])?, Violation::PrivilegeEscalation, "escalation")?;
    let mut s = session(CallStackPolicy {
        permitted_elevations: BTreeSet::from([("A".to_string(), "B".to_string())]),
        ..CallStackPolicy::default()
    })?;
    push(&mut s, None, "A", &["s1"])?;
    ensure!(push(&mut s, Some("A"), "B", &["s1", "s2"])?.is_allow(), "permitted elevation blocked");

    // limit + 1 calls in one window
    let mut s = session(CallStackPolicy {
        rate_limits: BTreeMap::from([("A".to_string(), RateLimit { max_calls: 2, window: 5 })]),
        ..CallStackPolicy::default()
    })?;
    for _ in 0..2 {
        ensure!(push(&mut s, None, "A", &[])?.is_allow(), "rate: call within limit blocked");
        s.pop_call("A").map_err(|e| e.to_string())?;
        s.advance_clock(2);
    }
    block(push(&mut s, None, "A", &[])?, Violation::RateLimited, "rate")?;
    s.advance_clock(1);
    ensure!(push(&mut s, None, "A", &[])?.is_allow(), "rate: call after window expiry blocked");

    // allowlist miss
    let mut s = session(CallStackPolicy {
        allowed_chains: BTreeSet::from([("A".to_string(), "C".to_string())]),
        ..CallStackPolicy::default()
    })?;
    push(&mut s, None, "A", &["s1"])?;
    block(push(&mut s, Some("A"), "B", &["s1"])?, Violation::ChainNotAllowlisted, "allowlist")?;
    Ok(())
}

fn fuzz() -> Result<(usize, usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57ac);
    let (mut steps, mut rate_decisions, mut blocks) = (0, 0, 0);
    for sid in 0..SESSIONS {
        let policy = random_policy(&mut rng);
        let mut s = begin_session(&format!("s{sid}"), policy.clone()).map_err(|e| e.to_string())?;
        let mut m = Model {
            policy,
            stack: Vec::new(),
            history: Vec::new(),
            clock: 0,
        };
        for step in 0..STEPS_PER_SESSION {
            let at = format!("session {sid} step {step}");
            let roll = rng.gen_range(0..100);
            if roll < 55 {
                let callee = TOOLS[rng.gen_range(0..TOOLS.len())];
                let scopes = random_scopes(&mut rng);
                let top = m.stack.last().map(|(t, _)| t.clone());
                if roll < 4 {
                    // a caller other than the top is refused without effect
                    let wrong = if top.is_some() { None } else { Some("A") };
                    let before = s.clone();
                    let r = s.push_call(wrong, callee, &scopes);
                    ensure!(matches!(r, Err(CallStackError::CallerMismatch { .. })), "{at}: wrong caller accepted");
                    ensure!(s == before, "{at}: refused push changed the session");
                } else {
                    let (want, recorded) = m.expect(callee, &scopes);
                    if m.policy.rate_limits.contains_key(callee) {
                        rate_decisions += 1;
                    }
                    let before = s.violations().len();
                    let got = s.push_call(top.as_deref(), callee, &scopes).map_err(|e| format!("{at}: {e}"))?;
                    ensure!(got == want, "{at}: push {callee}: verifier {got:?}, model {want:?}");
                    ensure!(
                        s.violations().len() - before == recorded,
                        "{at}: {} violation records, model expects {recorded}",
                        s.violations().len() - before
                    );
                    if got.is_allow() {
                        m.stack.push((callee.to_string(), scopes));
                        m.history.push((callee.to_string(), m.clock));
                    } else {
                        blocks += 1;
                    }
                }
            } else if roll < 85 {
                match m.stack.last().map(|(t, _)| t.clone()) {
                    Some(t) => {
                        s.pop_call(&t).map_err(|e| format!("{at}: {e}"))?;
                        m.stack.pop();
                    }
                    None => ensure!(s.pop_call("A").is_err(), "{at}: pop on empty stack accepted"),
                }
            } else {
                let ticks = rng.gen_range(0..4);
                s.advance_clock(ticks);
                m.clock += ticks;
            }
            check_invariants(&s, &m).map_err(|e| format!("{at}: {e}"))?;
            steps += 1;
        }
    }
    Ok((steps, rate_decisions, blocks))
}

pub fn verifier() -> Outcome {
    canonical_fixtures()?;
    let (steps, rate, blocks) = fuzz()?;
    ensure!(steps >= 10_000, "only {steps} fuzz steps");
    Ok(format!(
        "canonical fixtures give CIRCULAR_CALL, DEPTH_EXCEEDED, CHAIN_BLOCKED, PRIVILEGE_ESCALATION, RATE_LIMITED, \
         CHAIN_NOT_ALLOWLISTED; {steps} fuzz steps ({blocks} blocks) hold the invariants, \
         {rate} rate decisions match the recount"
    ))
}
