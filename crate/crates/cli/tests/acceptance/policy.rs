use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use etdi_core::crypto::{sign_policy, KeyPair, TrustStore};
use etdi_core::policy::{
    decide, eval_condition, load_policy_store, AttrValue, AuthorizationRequest, Condition, Context, Decision, Effect,
    PolicyDocument, PolicyMode, PolicyRule,
};
use etdi_core::SemVer;

use crate::Outcome;

const STORES: usize = 1000;
const REQUESTS_PER_STORE: usize = 4;
const TREES: usize = 12_000;

const PATHS: [&str; 6] = ["user.role", "user.level", "user.suspended", "device.trusted", "request.time", "org.name"];
const PRINCIPALS: [&str; 4] = ["Acme::reader@1.0.0", "Acme::writer@2.0.0", "Pixel::wall@1.1.0", "Evil::x@0.1.0"];
const PRINCIPAL_PATTERNS: [&str; 6] = ["*", "Acme::*", "Acme::reader@*", "Pixel::wall@1.1.0", "Evil::*", "Nope::*"];
const ACTIONS: [&str; 3] = ["read", "write", "send"];
const ACTION_PATTERNS: [&str; 4] = ["*", "read", "write", "se*"];
const RESOURCES: [&str; 3] = ["Docs::Shared::a", "Docs::Private::b", "Mail::Outbox"];
const RESOURCE_PATTERNS: [&str; 4] = ["*", "Docs::*", "Docs::Private::*", "Mail::Outbox"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Eval {
    True,
    False,
    Missing,
    TypeError,
}

/// Reference interpreter over the raw `[op, ...]` arrays. Evaluation is left
/// to right; a missing attribute or a type error aborts the whole expression.
fn oracle(expr: &Value, ctx: &Map<String, Value>) -> Eval {
    let a = expr.as_array().expect("generated expressions are arrays");
    let head = a[0].as_str().expect("string head");
    match head {
        "and" => {
            for x in &a[1..] {
                match oracle(x, ctx) {
                    Eval::True => {}
                    other => return other,
                }
            }
            Eval::True
        }
        "or" => {
            for x in &a[1..] {
                match oracle(x, ctx) {
                    Eval::False => {}
                    other => return other,
                }
            }
            Eval::False
        }
        "not" => match oracle(&a[1], ctx) {
            Eval::True => Eval::False,
            Eval::False => Eval::True,
            other => other,
        },
        "in" => match ctx.get(a[1].as_str().expect("path")) {
            None => Eval::Missing,
            Some(Value::String(s)) => {
                if a[2].as_array().expect("list").iter().any(|v| v.as_str() == Some(s)) {
                    Eval::True
                } else {
                    Eval::False
                }
            }
            Some(_) => Eval::TypeError,
        },
        op => {
            let Some(actual) = ctx.get(a[1].as_str().expect("path")) else {
                return Eval::Missing;
            };
            let lit = &a[2];
            let truth = |b: bool| if b { Eval::True } else { Eval::False };
            match op {
                "lt" | "lte" | "gt" | "gte" => match (actual.as_f64(), lit.as_f64()) {
                    (Some(x), Some(y)) if actual.is_number() && lit.is_number() => truth(match op {
                        "lt" => x < y,
                        "lte" => x <= y,
                        "gt" => x > y,
                        _ => x >= y,
                    }),
                    _ => Eval::TypeError,
                },
                "eq" | "neq" => {
                    let same = match (actual, lit) {
                        (Value::String(x), Value::String(y)) => x == y,
                        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
                        (Value::Bool(x), Value::Bool(y)) => x == y,
                        _ => return Eval::TypeError,
                    };
                    truth(same == (op == "eq"))
                }
                other => panic!("generator produced unknown operator {other}"),
            }
        }
    }
}

fn static_type_error(expr: &Value) -> bool {
    let a = expr.as_array().expect("array");
    match a[0].as_str().expect("head") {
        "and" | "or" | "not" => a[1..].iter().any(static_type_error),
        "lt" | "lte" | "gt" | "gte" => !a[2].is_number(),
        _ => false,
    }
}

fn literal(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..3) {
        0 => json!(["admin", "guest", "staff"][rng.gen_range(0..3)]),
        1 => [json!(0), json!(1), json!(2), json!(3), json!(2.5)][rng.gen_range(0..5)].clone(),
        _ => json!(rng.gen_bool(0.5)),
    }
}

fn gen_expr(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let path = PATHS[rng.gen_range(0..PATHS.len())];
    let leaf = depth == 0 || rng.gen_bool(0.35);
    if leaf {
        if rng.gen_bool(0.2) {
            let n = rng.gen_range(0..3);
            let list: Vec<Value> = (0..n).map(|_| json!(["admin", "guest", "staff"][rng.gen_range(0..3)])).collect();
            return json!(["in", path, list]);
        }
        let op = ["eq", "neq", "lt", "lte", "gt", "gte"][rng.gen_range(0..6)];
        // ordering literals are mostly numbers so that most trees evaluate
        let lit = if op.len() > 2 && rng.gen_bool(0.8) { json!(rng.gen_range(0..4)) } else { literal(rng) };
        return json!([op, path, lit]);
    }
    match rng.gen_range(0..3) {
        0 => json!(["not", gen_expr(rng, depth - 1)]),
        k => {
            let mut items = vec![json!(if k == 1 { "and" } else { "or" })];
            for _ in 0..rng.gen_range(0..4) {
                items.push(gen_expr(rng, depth - 1));
            }
            Value::Array(items)
        }
    }
}

fn gen_context(rng: &mut ChaCha8Rng) -> Map<String, Value> {
    let mut m = Map::new();
    for p in PATHS {
        if rng.gen_bool(0.75) {
            m.insert(p.to_string(), literal(rng));
        }
    }
    m
}

fn to_context(m: &Map<String, Value>) -> Context {
    m.iter()
        .map(|(k, v)| (k.clone(), AttrValue::from_json(v).expect("generated values are scalars")))
        .collect()
}

fn conditions() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0d1);
    let mut cases = 0;
    for i in 0..TREES {
        let tree = gen_expr(&mut rng, 4);
        let cond = Condition::from_json(&tree).map_err(|e| format!("tree {i}: {e}"))?;
        ensure!(cond.to_json() == tree, "tree {i}: JSON round trip changed {tree}");
        ensure!(
            !cond.static_type_errors().is_empty() == static_type_error(&tree),
            "tree {i}: static type check disagrees on {tree}"
        );
        for _ in 0..2 {
            let raw = gen_context(&mut rng);
            let got = eval_condition(&cond, &to_context(&raw));
            let want = oracle(&tree, &raw);
            let agree = matches!(
                (want, &got),
                (Eval::True, Ok(true)) | (Eval::False | Eval::Missing, Ok(false)) | (Eval::TypeError, Err(_))
            );
            ensure!(agree, "tree {i}: {tree} in {raw:?}: oracle {want:?}, engine {got:?}");
            cases += 1;
        }
    }
    Ok(cases)
}

#[derive(Debug, Clone)]
struct RawRule {
    id: String,
    forbid: bool,
    principal: String,
    action: String,
    resource: String,
    cond: Option<Value>,
}

impl RawRule {
    fn to_rule(&self) -> PolicyRule {
        let effect = if self.forbid { Effect::Forbid } else { Effect::Permit };
        let r = PolicyRule::new(&self.id, effect, &self.principal, &self.action, &self.resource);
        match &self.cond {
            Some(c) => r.when(Condition::from_json(c).expect("generated conditions parse")),
            None => r,
        }
    }
}

fn matches(pattern: &str, value: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => value.len() >= prefix.len() && &value[..prefix.len()] == prefix,
        None => pattern == value,
    }
}

struct Request {
    principal: &'static str,
    action: &'static str,
    resource: &'static str,
    ctx: Map<String, Value>,
}

impl Request {
    fn to_request(&self) -> AuthorizationRequest {
        AuthorizationRequest {
            principal: self.principal.into(),
            action: self.action.into(),
            resource: self.resource.into(),
            context: to_context(&self.ctx),
        }
    }
}

/// (allowed, ids of applicable rules in order, any condition type error)
fn rules_oracle(rules: &[RawRule], req: &Request) -> (bool, Vec<String>, bool) {
    let mut hit = Vec::new();
    let (mut permit, mut forbid, mut error) = (false, false, false);
    for r in rules {
        if !(matches(&r.principal, req.principal) && matches(&r.action, req.action) && matches(&r.resource, req.resource)) {
            continue;
        }
        let applies = match &r.cond {
            None => true,
            Some(c) => match oracle(c, &req.ctx) {
                Eval::True => true,
                Eval::TypeError => {
                    error = true;
                    false
                }
                _ => false,
            },
        };
        if applies {
            hit.push(r.id.clone());
            if r.forbid {
                forbid = true;
            } else {
                permit = true;
            }
        }
    }
    (permit && !forbid, hit, error)
}

fn pick(rng: &mut ChaCha8Rng, xs: &[&'static str]) -> &'static str {
    xs[rng.gen_range(0..xs.len())]
}

fn gen_rule(rng: &mut ChaCha8Rng, id: String, forbid: bool) -> RawRule {
    RawRule {
        id,
        forbid,
        principal: pick(rng, &PRINCIPAL_PATTERNS).into(),
        action: pick(rng, &ACTION_PATTERNS).into(),
        resource: pick(rng, &RESOURCE_PATTERNS).into(),
        cond: rng.gen_bool(0.5).then(|| gen_expr(rng, 2)),
    }
}

fn gen_request(rng: &mut ChaCha8Rng) -> Request {
    Request {
        principal: pick(rng, &PRINCIPALS),
        action: pick(rng, &ACTIONS),
        resource: pick(rng, &RESOURCES),
        ctx: gen_context(rng),
    }
}

fn run(rules: &[RawRule], req: &AuthorizationRequest) -> Decision {
    let rules: Vec<PolicyRule> = rules.iter().map(RawRule::to_rule).collect();
    decide(rules.iter(), req)
}

fn stores() -> Result<(usize, usize), String> {
    let admin = KeyPair::from_seed("pap-1", [21; 32]).map_err(|e| e.to_string())?;
    let ts = TrustStore::new()
        .with_provider_key("Host Admin", "pap-1", admin.public_key())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5707e);
    let (mut cases, mut allowed_cases) = (0, 0);
    for s in 0..STORES {
        let n = rng.gen_range(0..8);
        let no_forbid = rng.gen_bool(0.3);
        let rules: Vec<RawRule> = (0..n)
            .map(|i| {
                let forbid = !no_forbid && rng.gen_bool(0.35);
                gen_rule(&mut rng, format!("r{i}"), forbid)
            })
            .collect();

        // the signed path must agree with direct evaluation
        let doc = PolicyDocument {
            policy_store_id: format!("store-{s}"),
            version: SemVer::new(1, 0, 0),
            author_provider_id: "Host Admin".into(),
            rules: rules.iter().map(RawRule::to_rule).collect(),
        };
        let signed = sign_policy(&doc, &admin).map_err(|e| e.to_string())?;
        let (store, _) = load_policy_store(std::slice::from_ref(&signed), &ts, PolicyMode::Lenient)
            .map_err(|e| format!("store {s}: {e}"))?;
        let strict_ok = load_policy_store(std::slice::from_ref(&signed), &ts, PolicyMode::Strict).is_ok();
        let has_static = rules.iter().filter_map(|r| r.cond.as_ref()).any(static_type_error);
        ensure!(strict_ok != has_static, "store {s}: strict load {strict_ok} with static errors {has_static}");

        for q in 0..REQUESTS_PER_STORE {
            let raw = gen_request(&mut rng);
            let req = raw.to_request();
            let at = format!("store {s} request {q}");
            let d = run(&rules, &req);
            let (allowed, hit, error) = rules_oracle(&rules, &raw);
            ensure!(
                d.allowed == allowed && d.determining_rules == hit && d.errors.is_empty() != error,
                "{at}: engine {d:?}, oracle ({allowed}, {hit:?}, error {error})"
            );
            ensure!(store.is_authorized(&req) == d, "{at}: loaded store disagrees with direct evaluation");
            allowed_cases += usize::from(d.allowed);

            // default deny: nothing permits, so nothing allows
            let forbids_only: Vec<RawRule> = rules.iter().filter(|r| r.forbid).cloned().collect();
            ensure!(!run(&forbids_only, &req).allowed, "{at}: forbid-only store allowed");
            ensure!(!run(&[], &req).allowed, "{at}: empty store allowed");

            // forbid dominance: one applicable forbid anywhere denies
            let mut with_forbid = rules.clone();
            let f = RawRule {
                id: "dominant-forbid".into(),
                forbid: true,
                principal: raw.principal.into(),
                action: if rng.gen_bool(0.5) { "*".into() } else { raw.action.into() },
                resource: "*".into(),
                cond: None,
            };
            with_forbid.insert(rng.gen_range(0..=with_forbid.len()), f);
            let fd = run(&with_forbid, &req);
            ensure!(
                !fd.allowed && fd.determining_rules.iter().any(|id| id == "dominant-forbid"),
                "{at}: applicable forbid did not dominate: {fd:?}"
            );

            // permit monotonicity on forbid-free stores
            if rules.iter().all(|r| !r.forbid) {
                let mut more = rules.clone();
                more.insert(rng.gen_range(0..=more.len()), gen_rule(&mut rng, "extra-permit".into(), false));
                ensure!(!d.allowed || run(&more, &req).allowed, "{at}: adding a permit revoked an allow");
            }

            // rule order does not matter
            let mut shuffled = rules.clone();
            shuffled.shuffle(&mut rng);
            let sd = run(&shuffled, &req);
            let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
            ensure!(
                sd.allowed == d.allowed && set(&sd.determining_rules) == set(&d.determining_rules),
                "{at}: shuffling changed the decision"
            );
            cases += 1;
        }
    }
    Ok((cases, allowed_cases))
}

pub fn semantics() -> Outcome {
    let (cases, allowed) = stores()?;
    let trees = conditions()?;
    Ok(format!(
        "{cases} store/request cases over {STORES} stores ({allowed} allowed) hold default deny, forbid dominance, \
         permit monotonicity and order irrelevance; {trees} evaluations of {TREES} condition trees match the oracle"
    ))
}
