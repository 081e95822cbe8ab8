use serde::Deserialize;

use super::install_demo_types;
use crate::error::{Error, Result};
use crate::model::{PeerKind, TransmissionDecision, Winner};
use crate::policy::{CallContext, PolicyManager, Role};
use crate::registry::Registry;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextDoc {
    role: String,
    #[serde(default)]
    index: usize,
    class: String,
    method: String,
    actual: String,
    #[serde(default = "rrt")]
    peer: String,
}

fn rrt() -> String {
    "rrt".into()
}

/// Human-readable reason for a decision, e.g. `BY_VALUE via class rule, level 6`.
pub fn explain_decision(d: &TransmissionDecision) -> String {
    match d.winner {
        Winner::Rule { kind, level, .. } => format!("{} via {} rule, level {level}", d.kind(), kind.label()),
        Winner::Default => format!("{} via default policy", d.kind()),
        Winner::Primitive => format!("{} via primitive type", d.kind()),
    }
}

/// Resolves a JSON call context against a policy document. Types are looked
/// up among the demo types; others have no supertypes.
///
/// Context: `{"role":"arg"|"return","index":0,"class":..,"method":..,"actual":..,"peer":"rrt"|"plain"}`.
pub fn explain(policy_document: &str, context_json: &str) -> Result<String> {
    let ctx: ContextDoc =
        serde_json::from_str(context_json).map_err(|e| Error::protocol(format!("call context: {e}")))?;
    let role = match ctx.role.as_str() {
        "arg" => Role::Argument(ctx.index),
        "return" => Role::ReturnValue,
        other => return Err(Error::protocol(format!("role must be arg or return, not `{other}`"))),
    };
    let peer: PeerKind = ctx.peer.parse()?;
    let registry = Registry::seeded(0);
    install_demo_types(&registry)?;
    let policy = PolicyManager::new();
    policy.load_policy_file(policy_document)?;
    Ok(explain_context(
        &policy,
        &CallContext {
            role,
            declared_type: &ctx.class,
            method: &ctx.method,
            actual_type: &ctx.actual,
            peer,
        },
        &registry,
    ))
}

pub fn explain_context(policy: &PolicyManager, ctx: &CallContext<'_>, registry: &Registry) -> String {
    explain_decision(&policy.resolve(ctx, registry))
}
