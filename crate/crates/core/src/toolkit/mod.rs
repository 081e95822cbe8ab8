//! Operator tooling: the demo types, an in-process two-node harness, the P2P
//! walkthrough, the policy-overhead benchmark and rule explanation.

mod bench;
mod demo;
mod explain;

pub use bench::{bench_policy_overhead, BenchReport};
pub use demo::{p2p_demo, LARGE_MESSAGE_BYTES};
pub use explain::{explain, explain_context, explain_decision};

use crate::error::Result;
use crate::model::{Object, ObjectRef, Value};
use crate::node::{Node, NodeConfig, Runtime};
use crate::registry::{AppFault, Registry, TypeDef};

fn key_id(v: &Value) -> Result<Value, AppFault> {
    match v {
        Value::Object(k) => Ok(k.get("id")),
        Value::Remote(h) => Ok(h.invoke("get_id", &[])?),
        Value::Null => Ok(Value::Null),
        other => Err(AppFault::new("IllegalArgument", format!("not a key: {other:?}"))),
    }
}

fn new_p2p_node(args: &[Value]) -> Result<ObjectRef, AppFault> {
    let key = match args {
        [Value::Int(id)] => Value::Object(Object::new("Key", [("id", Value::Int(*id))])),
        [k @ Value::Object(_)] => k.clone(),
        _ => return Err(AppFault::new("IllegalArgument", "P2PNode takes a key id or a Key")),
    };
    Ok(Object::new(
        "P2PNode",
        [
            ("key", key),
            ("peers", Value::Seq(Vec::new())),
            ("log", Value::Seq(Vec::new())),
            ("delivered", Value::Seq(Vec::new())),
            ("running", Value::Bool(true)),
        ],
    ))
}

fn push(o: &ObjectRef, field: &str, v: Value) {
    o.update(field, |slot| match slot {
        Value::Seq(items) => items.push(v),
        other => *other = Value::Seq(vec![v]),
    });
}

/// Registers Key, Message, the P2P node with its three interfaces, and Echo.
pub fn install_demo_types(registry: &Registry) -> Result<()> {
    TypeDef::class("Key")
        .field("id", "i64", false)
        .repr(|o| format!("Key({})", o.get("id").as_i64().unwrap_or_default()))
        .register(registry)?;
    TypeDef::class("Message")
        .field("payload", "string", false)
        .method("size", &[], "i64", |o, _| {
            Ok(Value::Int(o.get("payload").as_str().map_or(0, str::len) as i64))
        })
        .register(registry)?;
    TypeDef::interface("IP2PNode")
        .field("key", "Key", false)
        .signature("addPeer", &["IP2PNode"], "void")
        .signature("route", &["Key", "Message"], "void")
        .throws_network()
        .signature("getKey", &[], "Key")
        .register(registry)?;
    TypeDef::interface("IManage")
        .signature("stop", &[], "void")
        .signature("start", &[], "void")
        .register(registry)?;
    TypeDef::interface("IMonitor")
        .signature("getLog", &[], "string")
        .register(registry)?;
    TypeDef::class("P2PNode")
        .field("key", "Key", false)
        .field("peers", "list", true)
        .field("log", "list", true)
        .field("delivered", "list", true)
        .field("running", "bool", true)
        .method("addPeer", &["IP2PNode"], "void", |o, args| {
            push(o, "peers", args[0].clone());
            Ok(Value::Null)
        })
        .method("route", &["Key", "Message"], "void", |o, args| {
            let how = match &args[1] {
                Value::Remote(_) => "reference",
                _ => "value",
            };
            let state = if o.get("running").as_bool() == Some(true) { "delivered" } else { "held" };
            let id = key_id(&args[0])?;
            push(o, "log", Value::str(format!("route key={} message by {how}: {state}", id.as_i64().unwrap_or(-1))));
            push(o, "delivered", args[1].clone());
            Ok(Value::Null)
        })
        .throws_network()
        .method("getKey", &[], "Key", |o, _| Ok(o.get("key")))
        .method("stop", &[], "void", |o, _| {
            o.set("running", Value::Bool(false));
            push(o, "log", Value::str("stopped"));
            Ok(Value::Null)
        })
        .method("start", &[], "void", |o, _| {
            o.set("running", Value::Bool(true));
            push(o, "log", Value::str("started"));
            Ok(Value::Null)
        })
        .method("getLog", &[], "string", |o, _| {
            let lines: Vec<String> = o
                .get("log")
                .as_seq()
                .unwrap_or_default()
                .iter()
                .filter_map(|v| v.as_str().map(str::to_owned))
                .collect();
            Ok(Value::str(lines.join("\n")))
        })
        .constructor(new_p2p_node)
        .repr(|o| {
            let id = o.get("key").as_object().map(|k| k.get("id").as_i64().unwrap_or_default());
            format!("P2PNode(key={})", id.unwrap_or_default())
        })
        .register(registry)?;
    TypeDef::class("Echo")
        .method("echo", &["Message"], "Message", |_, args| Ok(args[0].clone()))
        .register(registry)?;
    Ok(())
}

/// Two nodes in one process on distinct ports. Dropping the pair stops both.
pub struct LocalPair {
    pub a: Node,
    pub b: Node,
}

impl LocalPair {
    pub fn runtimes(&self) -> [&Runtime; 2] {
        [self.a.runtime(), self.b.runtime()]
    }
}

/// A pair on ephemeral ports with the demo types installed.
pub fn spawn_local_pair() -> Result<LocalPair> {
    spawn_local_pair_with(NodeConfig::default(), NodeConfig::default(), |rt| install_demo_types(rt.registry()))
}

pub fn spawn_local_pair_with(
    config_a: NodeConfig,
    config_b: NodeConfig,
    install: impl Fn(&Runtime) -> Result<()>,
) -> Result<LocalPair> {
    let a = Node::start(config_a, &install)?;
    let b = Node::start(config_b, &install)?;
    Ok(LocalPair { a, b })
}
