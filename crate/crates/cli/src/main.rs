//! `etdi`: key, trust, approval, token, policy and scenario tooling.
//!
//! Exit codes: 0 success or allow, 1 security denial, 2 operational error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "etdi", version, about = "Signed tool definitions: keys, approvals, tokens, policies")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file naming stores and defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Strict re-approval and policy validation.
    #[arg(long, global = true, conflicts_with = "lenient")]
    pub strict: bool,
    /// Lenient re-approval (cosmetic updates pass silently) and policy loading.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// How consent prompts are answered.
    #[arg(long, global = true, value_enum)]
    pub consent: Option<ConsentMode>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Trust store (provider and issuer keys).
    #[arg(long, global = true)]
    pub trust: Option<PathBuf>,
    /// Approval history (JSON lines).
    #[arg(long, global = true)]
    pub approvals: Option<PathBuf>,
    /// Revoked token ids, one per line.
    #[arg(long, global = true)]
    pub revocations: Option<PathBuf>,
    /// Signed policy document; repeatable.
    #[arg(long, global = true)]
    pub policy: Vec<PathBuf>,
    /// Call-stack policy (JSON) used by stack-check scripts without one.
    #[arg(long, global = true)]
    pub callstack_policy: Option<PathBuf>,
    /// Violation log (JSON lines) appended by stack-check.
    #[arg(long, global = true)]
    pub violation_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsentMode {
    Prompt,
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an Ed25519 key pair file.
    Keygen {
        #[arg(long)]
        key_id: String,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Sign a tool definition (or policy document) into an envelope.
    Sign {
        #[arg(long)]
        definition: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// The input is a policy document.
        #[arg(long = "policy-doc")]
        policy_doc: bool,
    },
    /// Verify an envelope against the trust store.
    Verify {
        #[arg(long)]
        envelope: PathBuf,
        #[arg(long = "policy-doc")]
        policy_doc: bool,
    },
    /// Evaluate an envelope against past approvals and record consent.
    Approve {
        #[arg(long)]
        envelope: PathBuf,
        /// Grant only these scopes (default: all declared permissions).
        #[arg(long)]
        grant: Vec<String>,
        /// Approval time (unix seconds); defaults to now.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Withdraw the current approval of a tool.
    RevokeApproval {
        #[arg(long)]
        tool_id: String,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Mark a provider (or issuer) key revoked in the trust store.
    RevokeKey {
        #[arg(long)]
        owner: String,
        #[arg(long)]
        key_id: String,
        /// The owner is a token issuer rather than a provider.
        #[arg(long)]
        issuer: bool,
    },
    /// Issue a tool-bound token.
    TokenMint {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        tool_id: String,
        #[arg(long)]
        tool_version: String,
        #[arg(long, value_delimiter = ',')]
        scopes: Vec<String>,
        #[arg(long)]
        jti: String,
        #[arg(long, default_value_t = 3600)]
        ttl: u64,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Validate a token, optionally against an expected tool binding.
    TokenCheck {
        #[arg(long)]
        token: String,
        #[arg(long, requires = "tool_version")]
        tool_id: Option<String>,
        #[arg(long, requires = "tool_id")]
        tool_version: Option<String>,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Evaluate an authorization request against the policy store.
    PolicyCheck {
        #[arg(long)]
        request: PathBuf,
        /// Route to one policy store id.
        #[arg(long)]
        store_id: Option<String>,
    },
    /// Replay push/pop/advance operations against the call-stack verifier.
    StackCheck {
        #[arg(long)]
        script: PathBuf,
    },
    /// Run an attack scenario and write its transcript.
    RunScenario {
        /// Scenario config file (JSON or TOML).
        #[arg(long, conflicts_with = "name")]
        scenario_config: Option<PathBuf>,
        /// Built-in scenario name with default settings.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run as a plain MCP client with every check disabled.
        #[arg(long)]
        standard: bool,
        /// Transcript path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print approval history, revocations and the violation log.
    Audit,
}

/// Operational failure (exit 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CliError(String);

impl CliError {
    pub fn op(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
