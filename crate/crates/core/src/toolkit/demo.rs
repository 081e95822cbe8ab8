use std::sync::Arc;

use super::{install_demo_types, spawn_local_pair_with};
use crate::error::{Error, Result};
use crate::model::{Depth, PolicyKind, Value};
use crate::node::{DecisionLog, NodeConfig, Runtime};
use crate::remote::Handle;

/// Messages with larger payloads travel by reference.
pub const LARGE_MESSAGE_BYTES: usize = 1024;

/// Client-side delivery: oversized messages get a temporary non-overridable
/// by-reference rule for the message parameter.
fn deliver(client: &Runtime, node: &Handle, dest: &Value, msg: &Value) -> Result<Value> {
    let size = msg
        .as_object()
        .and_then(|m| m.get("payload").as_str().map(str::len))
        .unwrap_or_default();
    let _by_ref = if size > LARGE_MESSAGE_BYTES {
        Some(client.policy().scoped_param_policy(
            "IP2PNode",
            "route",
            1,
            PolicyKind::ByReference,
            Depth::Unbounded,
            false,
        )?)
    } else {
        None
    };
    node.invoke("route", &[dest.clone(), msg.clone()])
}

fn install_rules(rt: &Runtime) -> Result<()> {
    let p = rt.policy();
    p.set_class_policy("Key", PolicyKind::ByValue, true, true)?;
    p.set_field_to_be_cached("P2PNode", "key")?;
    p.set_class_policy("Message", PolicyKind::ByValue, true, false)?;
    Ok(())
}

/// Runs the P2P walkthrough on a local pair and returns its transcript:
/// one line per wire decision, `# ` lines narrate.
pub fn p2p_demo() -> Result<Vec<String>> {
    let server_config = NodeConfig {
        guid_seed: Some(11),
        ..NodeConfig::default()
    };
    let client_config = NodeConfig {
        guid_seed: Some(12),
        ..NodeConfig::default()
    };
    let pair = spawn_local_pair_with(server_config, client_config, |rt| install_demo_types(rt.registry()))?;
    let (server, client) = (pair.a.runtime(), pair.b.runtime());
    let log = DecisionLog::new();
    for rt in [server, client] {
        rt.set_transcript(Some(Arc::clone(&log)));
        install_rules(rt)?;
    }

    let node = server.registry().construct("P2PNode", &[Value::Int(42)])?;
    for (iface, name) in [("IManage", "Manage"), ("IMonitor", "Monitor"), ("IP2PNode", "P2P")] {
        server.deploy(&node, Some(iface), Some(name))?;
    }
    log.note(&format!("server deployed {} services for one P2PNode", server.registry().service_count()));

    let host = server.endpoint().host().to_owned();
    let port = server.endpoint().port();
    let p2p = client.get_handle(&host, port, "P2P")?;
    log.note(&format!("client resolved P2P as {}", p2p.interface().type_name));

    let hits = server.invoke_hits();
    let cached = p2p.invoke("get_key", &[])?;
    let id = cached.as_object().map(|k| k.get("id")).and_then(|v| v.as_i64());
    log.note(&format!(
        "get_key from smart proxy: key={} invoke hits +{}",
        id.unwrap_or(-1),
        server.invoke_hits() - hits
    ));

    let key = p2p.invoke("getKey", &[])?;
    log.note("getKey over the wire");

    let small = client.registry().construct("Message", &[Value::str("hello")])?;
    log.note("route small message");
    deliver(client, &p2p, &key, &Value::Object(small))?;

    let large = client
        .registry()
        .construct("Message", &[Value::str("x".repeat(LARGE_MESSAGE_BYTES * 2))])?;
    log.note("route large message");
    deliver(client, &p2p, &key, &Value::Object(large))?;

    let manage = client.get_handle(&host, port, "Manage")?;
    manage.invoke("stop", &[])?;
    match manage.invoke("route", &[key.clone(), Value::Null]) {
        Err(Error::UnknownMethod { .. }) => log.note("route via Manage rejected: not in IManage"),
        other => return Err(Error::protocol(format!("route via Manage unexpectedly gave {other:?}"))),
    }
    let tiny = client.registry().construct("Message", &[Value::str("while stopped")])?;
    deliver(client, &p2p, &key, &Value::Object(tiny))?;
    log.note("route via P2P accepted");
    manage.invoke("start", &[])?;

    let monitor = client.get_handle(&host, port, "Monitor")?;
    let text = monitor.invoke("getLog", &[])?;
    for line in text.as_str().unwrap_or_default().lines() {
        log.note(&format!("node log: {line}"));
    }
    Ok(log.lines())
}
