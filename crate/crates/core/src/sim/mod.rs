//! Deterministic in-process client/server simulation.
//!
//! A [`SimClient`] discovers tools from [`SimServer`]s and runs each
//! invocation through the full pipeline: approval state, tool token and
//! binding, scope adherence, caller entitlements, policy decision and
//! call-stack verification. Every step lands in a [`Transcript`]. A
//! `Standard` client mode skips all of it and reproduces plain MCP behavior
//! as a baseline.
//!
//! All keys derive from the scenario seed and time is a logical clock, so a
//! given [`ScenarioConfig`] always produces the same transcript bytes.

mod client;
pub mod fuzz;
mod scenario;
mod server;
mod transcript;

pub use client::{
    ClientConfig, ClientMode, Consent, ConsentAnswer, DiscoveredTool, InvokeSpec, Issuers, SimClient, SimError,
    TokenRef, EPOCH_BASE, HOST_RECURSION_CAP,
};
pub use scenario::{
    fixture, host_policy, run_scenario, Fixture, ScenarioConfig, ScenarioKeys, ScenarioName, ScenarioRun, Step,
    ATTACK_TAG, CHART_RENDERER, DOC_READER, EVIL_SERVER, MAIL_SENDER, PREMIUM_REPORT, REPORT_BUILDER, SECUREDOCS,
    TOKEN_TTL, UPLOADER, WALLPAPER,
};
pub use server::{Behavior, NestedCall, SimServer};
pub use transcript::{Event, EventKind, InvariantViolation, Stage, Transcript};
