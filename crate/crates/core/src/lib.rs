//! Signed, versioned tool definitions for MCP-style tool ecosystems.
//!
//! The crate is layered the way a client checks a tool before running it:
//!
//! - [`model`], [`canonical`], [`diff`]: the definition document, its
//!   canonical bytes and content hash, and field-level change reports.
//! - [`crypto`]: Ed25519 signing, signature envelopes and the trust store.
//! - [`approval`]: consent records and the verify-then-approve state machine
//!   that detects silent definition changes.
//! - [`token`] and [`scope`]: issuer-signed tokens bound to a tool id and
//!   version, scope adherence and caller entitlements.
//! - [`policy`]: a small permit/forbid policy decision point over signed
//!   policy documents.
//! - [`callstack`]: per-session verification of nested tool calls.
//! - [`sim`]: a deterministic in-process client/server harness that replays
//!   tool poisoning, rug pull, token replay and chain abuse scenarios.

pub mod approval;
pub mod callstack;
pub mod canonical;
pub mod crypto;
pub mod diff;
pub mod model;
pub mod policy;
pub mod scope;
pub mod sim;
pub mod token;

pub use canonical::{CanonicalError, ContentHash};
pub use model::{SemVer, ToolDefinition};
