use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use etdi_core::crypto::{KeyPair, TrustStore};
use etdi_core::token::{issue_token, validate_token, RevocationList, TokenError, ToolBinding, ToolClaims};
use etdi_core::SemVer;

use crate::Outcome;

const ISSUER: &str = "idp.example";
const CASES: usize = 400;

fn bind(id: &str, v: SemVer) -> ToolBinding {
    ToolBinding {
        tool_id: id.to_string(),
        tool_version: v,
    }
}

fn random_claims(rng: &mut ChaCha8Rng, i: usize) -> (ToolClaims, SemVer) {
    let version = SemVer::new(rng.gen_range(0..4), rng.gen_range(0..10), rng.gen_range(0..10));
    let iat = rng.gen_range(1_000..2_000_000_000u64);
    let scopes: BTreeSet<String> = (0..rng.gen_range(0..4))
        .map(|_| ["fs:read", "net:send", "reports:*", "mail:send:draft"][rng.gen_range(0..4)].to_string())
        .collect();
    let claims = ToolClaims {
        iss: ISSUER.into(),
        sub: format!("user-{}", rng.gen_range(0..50)),
        iat,
        exp: iat + rng.gen_range(1..100_000),
        tool_id: format!("tool.{}", rng.gen_range(0..20)),
        tool_version: version.to_string(),
        scopes,
        jti: format!("jti-{i:06}"),
    };
    (claims, version)
}

/// Replaces one character inside the signature segment.
fn corrupt_signature(token: &str, rng: &mut ChaCha8Rng) -> String {
    let cut = token.rfind('.').expect("three segments") + 1;
    let mut chars: Vec<char> = token.chars().collect();
    // stay clear of the last character, whose low bits are padding
    let i = rng.gen_range(cut..chars.len() - 1);
    chars[i] = if chars[i] == 'A' { 'B' } else { 'A' };
    chars.into_iter().collect()
}

pub fn binding() -> Outcome {
    let idp = KeyPair::from_seed("idp-1", [11; 32]).map_err(|e| e.to_string())?;
    let other = KeyPair::from_seed("idp-2", [12; 32]).map_err(|e| e.to_string())?;
    let trusted = TrustStore::new()
        .with_issuer_key(ISSUER, "idp-1", idp.public_key())
        .map_err(|e| e.to_string())?;
    let untrusted_variants = [
        TrustStore::new(),
        trusted.revoke_issuer_key(ISSUER, "idp-1").map_err(|e| e.to_string())?,
        TrustStore::new()
            .with_issuer_key(ISSUER, "idp-2", other.public_key())
            .map_err(|e| e.to_string())?,
    ];
    let none = RevocationList::new();

    // fixed pair: (A, 1.0.0) against B and against (A, 1.1.0)
    let v100 = SemVer::new(1, 0, 0);
    let a = ToolClaims {
        iss: ISSUER.into(),
        sub: "alice".into(),
        iat: 100,
        exp: 3_700,
        tool_id: "acme.tool-a".into(),
        tool_version: v100.to_string(),
        scopes: BTreeSet::from(["fs:read".to_string()]),
        jti: "jti-a".into(),
    };
    let tok = issue_token(&idp, &a).map_err(|e| e.to_string())?;
    let check = |b: &ToolBinding| validate_token(tok.as_str(), &trusted, Some(b), 200, &none);
    ensure!(check(&bind("acme.tool-a", v100)).is_ok(), "token rejected for its own tool");
    ensure!(
        check(&bind("acme.tool-b", v100)) == Err(TokenError::ToolBindingMismatch),
        "token for A accepted by B"
    );
    ensure!(
        check(&bind("acme.tool-a", SemVer::new(1, 1, 0))) == Err(TokenError::ToolBindingMismatch),
        "token for 1.0.0 accepted by 1.1.0"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0x70c3);
    for i in 0..CASES {
        let (claims, version) = random_claims(&mut rng, i);
        let tok = issue_token(&idp, &claims).map_err(|e| e.to_string())?;
        let good = bind(&claims.tool_id, version);
        let now = rng.gen_range(claims.iat..claims.exp);
        let base = validate_token(tok.as_str(), &trusted, Some(&good), now, &none);
        ensure!(base.as_ref() == Ok(&claims), "case {i}: unperturbed token rejected: {base:?}");

        let mut wrong = good.clone();
        if rng.gen_bool(0.5) {
            wrong.tool_id.push_str("-other");
        } else {
            wrong.tool_version = SemVer::new(version.major, version.minor, version.patch + 1);
        }
        let revoked = {
            let mut r = RevocationList::new();
            r.revoke(claims.jti.clone());
            r
        };
        let untrusted = &untrusted_variants[i % untrusted_variants.len()];
        let expired_at = claims.exp + if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..10_000) };
        let bad_sig = corrupt_signature(tok.as_str(), &mut rng);
        let perturbed = [
            (validate_token(tok.as_str(), untrusted, Some(&good), now, &none), TokenError::UntrustedIssuer),
            (validate_token(&bad_sig, &trusted, Some(&good), now, &none), TokenError::BadSignature),
            (validate_token(tok.as_str(), &trusted, Some(&good), expired_at, &none), TokenError::Expired),
            (validate_token(tok.as_str(), &trusted, Some(&wrong), now, &none), TokenError::ToolBindingMismatch),
            (validate_token(tok.as_str(), &trusted, Some(&good), now, &revoked), TokenError::Revoked),
        ];
        for (got, want) in perturbed {
            ensure!(got == Err(want), "case {i}: perturbation {want} gave {got:?}");
        }
    }
    Ok(format!(
        "A@1.0.0 token refused by B and by A@1.1.0; {CASES} random tokens each fail on all 5 single perturbations"
    ))
}
