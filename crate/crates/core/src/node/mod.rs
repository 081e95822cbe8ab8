//! The runtime process: configuration, failure policy, fault log and the
//! per-node state shared by the transport and the reference machinery.

mod server;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value as Json};

use crate::codec::{
    decode_request, rior_to_json, Decoder, Encoder, Fault, Response, WireValue,
};
use crate::error::{Error, Result};
use crate::json;
use crate::model::{builtin, Endpoint, MethodDescriptor, ObjectRef, TransmissionDecision, Value, Winner};
use crate::policy::{CallContext, PolicyManager, Role};
use crate::registry::{Registry, Skeleton};
use crate::remote::{Exporter, ProxyCache};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogSink {
    /// Records are only kept in memory.
    Memory,
    Stderr,
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub workers: usize,
    pub fast_fail: bool,
    pub concrete_type_always: bool,
    pub policy_file: Option<PathBuf>,
    pub deploy_manifest: Option<PathBuf>,
    pub log_sink: LogSink,
    /// Deterministic GUIDs when set.
    pub guid_seed: Option<u64>,
    pub call_timeout: Duration,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            host: "127.0.0.1".into(),
            port: 0,
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()).max(4),
            fast_fail: false,
            concrete_type_always: true,
            policy_file: None,
            deploy_manifest: None,
            log_sink: LogSink::Memory,
            guid_seed: None,
            call_timeout: Duration::from_secs(10),
        }
    }
}

/// Outcome of a network failure on an outbound call.
#[derive(Debug)]
pub enum FaultPolicyOutcome {
    Propagate(Error),
    Suppress { default: Value, record: String },
}

/// Zero value a suppressed call returns.
pub fn default_for(return_type: &str) -> Value {
    match return_type {
        builtin::I64 => Value::Int(0),
        builtin::F64 => Value::Float(0.0),
        builtin::BOOL => Value::Bool(false),
        _ => Value::Null,
    }
}

/// Method identifier used in log records: `Interface.method/arity`.
pub fn method_id(interface: &str, method: &MethodDescriptor) -> String {
    format!("{interface}.{}/{}", method.name, method.arity())
}

pub fn apply_failure_policy(method: &MethodDescriptor, interface: &str, message: &str, fast_fail: bool) -> FaultPolicyOutcome {
    if method.declares_network_fault {
        return FaultPolicyOutcome::Propagate(Error::Network {
            message: message.to_owned(),
            fast_fail: false,
        });
    }
    if fast_fail {
        return FaultPolicyOutcome::Propagate(Error::Network {
            message: message.to_owned(),
            fast_fail: true,
        });
    }
    let one_line: String = message.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    FaultPolicyOutcome::Suppress {
        default: default_for(&method.return_type),
        record: format!(
            "{} WARN {} network {}",
            Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            method_id(interface, method),
            one_line
        ),
    }
}

/// Suppressed-failure records, one line each.
pub struct FaultLog {
    records: Mutex<Vec<String>>,
    sink: Mutex<Option<Box<dyn Write + Send>>>,
}

impl FaultLog {
    fn open(sink: &LogSink) -> Result<Self> {
        let writer: Option<Box<dyn Write + Send>> = match sink {
            LogSink::Memory => None,
            LogSink::Stderr => Some(Box::new(std::io::stderr())),
            LogSink::File(path) => Some(Box::new(
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::Startup(format!("log file {}: {e}", path.display())))?,
            )),
        };
        Ok(FaultLog {
            records: Mutex::new(Vec::new()),
            sink: Mutex::new(writer),
        })
    }

    pub fn write(&self, record: String) {
        if let Some(w) = self.sink.lock().as_mut() {
            let _ = writeln!(w, "{record}");
            let _ = w.flush();
        }
        self.records.lock().push(record);
    }

    pub fn records(&self) -> Vec<String> {
        self.records.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Line-oriented transcript of wire decisions.
#[derive(Default)]
pub struct DecisionLog {
    lines: Mutex<Vec<String>>,
}

impl DecisionLog {
    pub fn new() -> Arc<Self> {
        Arc::default()
    }

    pub fn record(&self, role: Role, type_name: &str, decision: &TransmissionDecision) {
        let role = match role {
            Role::Argument(_) => "arg",
            Role::ReturnValue => "return",
        };
        self.lines.lock().push(format!(
            "{role} {type_name} {} level={}",
            decision.kind(),
            decision.winner.level_label()
        ));
    }

    pub fn note(&self, text: &str) {
        self.lines.lock().push(format!("# {text}"));
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().clone()
    }
}

/// Per-node state. Handles hold it weakly.
pub struct Runtime {
    endpoint: Endpoint,
    registry: Arc<Registry>,
    policy: PolicyManager,
    pub(crate) proxies: ProxyCache,
    faults: FaultLog,
    pub(crate) agent: ureq::Agent,
    fast_fail: bool,
    concrete_type_always: bool,
    invoke_hits: AtomicU64,
    policy_evaluation: AtomicBool,
    transcript: RwLock<Option<Arc<DecisionLog>>>,
    pub(crate) deploy_lock: Mutex<()>,
    pub(crate) this: Weak<Runtime>,
}

impl Runtime {
    fn new(endpoint: Endpoint, config: &NodeConfig) -> Result<Arc<Self>> {
        let registry = Arc::new(match config.guid_seed {
            Some(seed) => Registry::seeded(seed),
            None => Registry::new(),
        });
        let faults = FaultLog::open(&config.log_sink)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.call_timeout))
            .proxy(None)
            .build()
            .into();
        Ok(Arc::new_cyclic(|this| Runtime {
            endpoint,
            policy: PolicyManager::with_catalog(registry.clone()),
            registry,
            proxies: ProxyCache::default(),
            faults,
            agent,
            fast_fail: config.fast_fail,
            concrete_type_always: config.concrete_type_always,
            invoke_hits: AtomicU64::new(0),
            policy_evaluation: AtomicBool::new(true),
            transcript: RwLock::new(None),
            deploy_lock: Mutex::new(()),
            this: this.clone(),
        }))
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn policy(&self) -> &PolicyManager {
        &self.policy
    }

    pub fn faults(&self) -> &FaultLog {
        &self.faults
    }

    pub fn fast_fail(&self) -> bool {
        self.fast_fail
    }

    pub fn concrete_type_always(&self) -> bool {
        self.concrete_type_always
    }

    /// Requests received on the invoke endpoint.
    pub fn invoke_hits(&self) -> u64 {
        self.invoke_hits.load(Ordering::Relaxed)
    }

    /// When off, objects travel by reference without consulting any rule.
    pub fn set_policy_evaluation(&self, on: bool) {
        self.policy_evaluation.store(on, Ordering::Relaxed);
    }

    pub fn set_transcript(&self, log: Option<Arc<DecisionLog>>) {
        *self.transcript.write() = log;
    }

    pub fn deploy(&self, object: &ObjectRef, interface: Option<&str>, name: Option<&str>) -> Result<Arc<Skeleton>> {
        self.registry.deploy(object, interface, name)
    }

    pub(crate) fn decide(&self, ctx: &CallContext<'_>, value: &Value) -> TransmissionDecision {
        let decision = if self.policy_evaluation.load(Ordering::Relaxed) {
            self.policy.resolve(ctx, self.registry.as_ref())
        } else if builtin::is_primitive(ctx.actual_type) {
            TransmissionDecision::by_value(crate::model::Depth::Unbounded, Winner::Primitive)
        } else {
            TransmissionDecision::by_reference(Winner::Default)
        };
        if !value.is_null() {
            if let Some(log) = self.transcript.read().as_ref() {
                log.record(ctx.role, ctx.actual_type, &decision);
            }
        }
        decision
    }

    pub(crate) fn network_failure(&self, method: &MethodDescriptor, interface: &str, message: &str) -> Result<Value> {
        match apply_failure_policy(method, interface, message, self.fast_fail) {
            FaultPolicyOutcome::Propagate(e) => Err(e),
            FaultPolicyOutcome::Suppress { default, record } => {
                self.faults.write(record);
                Ok(default)
            }
        }
    }

    /// Serves one invoke request. Every failure becomes a fault envelope.
    pub fn handle_invoke(&self, target: &str, body: &[u8]) -> Response {
        self.invoke_hits.fetch_add(1, Ordering::Relaxed);
        match self.serve_invoke(target, body) {
            Ok(w) => Response::Ok(w),
            Err(e) => Response::Fault(Fault::from_error(&e)),
        }
    }

    fn serve_invoke(&self, target: &str, body: &[u8]) -> Result<WireValue> {
        let req = decode_request(body)?;
        let skeleton = self.registry.lookup(target)?;
        if req.target != target && self.registry.lookup(&req.target)?.guid != skeleton.guid {
            return Err(Error::protocol(format!("envelope target `{}` differs from `{target}`", req.target)));
        }
        let method = skeleton.interface_method(&req.method, req.args.len())?.clone();
        let mut decoder = Decoder::new(self.registry.as_ref(), self);
        let args = req.args.iter().map(|w| decoder.decode(w)).collect::<Result<Vec<_>>>()?;
        let result = skeleton.invoke_local(&req.method, &args)?;
        let ctx = CallContext {
            role: Role::ReturnValue,
            declared_type: &skeleton.interface.type_name,
            method: &method.name,
            actual_type: result.type_name(),
            peer: req.peer,
        };
        let decision = self.decide(&ctx, &result);
        let exporter = Exporter::new(self, true);
        Encoder::new(self.registry.as_ref(), &exporter).encode(&result, &decision, &method.return_type)
    }

    pub fn list_services(&self) -> Json {
        Json::Array(
            self.registry
                .services()
                .iter()
                .map(|s| {
                    json!({
                        "name": s.name,
                        "guid": s.guid.to_hex(),
                        "interface_name": s.interface.type_name,
                        "object_repr": self.registry.repr(s),
                    })
                })
                .collect(),
        )
    }

    /// The service description: its full reference document.
    pub fn describe(&self, name_or_guid: &str) -> Result<Json> {
        let skeleton = self.registry.lookup(name_or_guid)?;
        rior_to_json(&self.rior_for(&skeleton, true)?)
    }

    pub fn browse_html(&self) -> String {
        let mut rows = String::new();
        for s in self.registry.services() {
            let guid = s.guid.to_hex();
            rows.push_str(&format!(
                "<tr><td>{}</td><td>{}</td><td>{}</td><td><a href=\"/describe/{guid}\">{guid}</a></td></tr>\n",
                html_escape(s.name.as_deref().unwrap_or("")),
                html_escape(&s.interface.type_name),
                html_escape(&self.registry.repr(&s)),
            ));
        }
        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Services at {ep}</title></head><body>\n\
             <h1>Services at {ep}</h1>\n<table>\n<tr><th>Name</th><th>Interface</th><th>Object</th><th>Description</th></tr>\n\
             {rows}</table>\n</body></html>\n",
            ep = html_escape(&self.endpoint.to_string()),
        )
    }

    /// Deploys the entries of a manifest document. Entries sharing an
    /// `object` label deploy one instance.
    pub fn apply_manifest(&self, document: &str) -> Result<Vec<Arc<Skeleton>>> {
        let entries: Vec<Json> = match serde_json::from_str(document) {
            Ok(Json::Array(items)) => items,
            Ok(_) => return Err(Error::Startup("manifest must be a JSON array".into())),
            Err(e) => return Err(Error::Startup(format!("manifest: {e}"))),
        };
        let mut shared: HashMap<String, ObjectRef> = HashMap::new();
        let mut deployed = Vec::new();
        for (i, entry) in entries.iter().enumerate() {
            let fail = |msg: String| Error::Startup(format!("manifest entry {i}: {msg}"));
            let Some(m) = entry.as_object() else {
                return Err(fail("entries are objects".into()));
            };
            if let Some(k) = m
                .keys()
                .find(|k| !["type", "constructor_args", "interface", "name", "object"].contains(&k.as_str()))
            {
                return Err(fail(format!("unexpected key `{k}`")));
            }
            let opt_text = |key: &str| -> Result<Option<String>> {
                match m.get(key) {
                    None | Some(Json::Null) => Ok(None),
                    Some(Json::String(s)) => Ok(Some(s.clone())),
                    Some(_) => Err(fail(format!("`{key}` must be a string"))),
                }
            };
            let type_name = opt_text("type")?.ok_or_else(|| fail("missing `type`".into()))?;
            let label = opt_text("object")?;
            let object = match label.as_ref().and_then(|l| shared.get(l)) {
                Some(o) => {
                    if o.type_name() != type_name {
                        return Err(fail(format!("object `{}` is a {}", label.unwrap_or_default(), o.type_name())));
                    }
                    o.clone()
                }
                None => {
                    let args = match m.get("constructor_args") {
                        None | Some(Json::Null) => Vec::new(),
                        Some(Json::Array(items)) => items
                            .iter()
                            .map(|j| json::from_json(j, &self.registry))
                            .collect::<Result<_>>()
                            .map_err(|e| fail(e.to_string()))?,
                        Some(_) => return Err(fail("`constructor_args` must be an array".into())),
                    };
                    let o = self.registry.construct(&type_name, &args).map_err(|e| fail(e.to_string()))?;
                    if let Some(l) = label {
                        shared.insert(l, o.clone());
                    }
                    o
                }
            };
            let skeleton = self
                .registry
                .deploy(&object, opt_text("interface")?.as_deref(), opt_text("name")?.as_deref())
                .map_err(|e| fail(e.to_string()))?;
            deployed.push(skeleton);
        }
        Ok(deployed)
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A serving node. Dropping it stops the workers after in-flight requests.
pub struct Node {
    runtime: Arc<Runtime>,
    server: Arc<tiny_http::Server>,
    shutdown: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl Node {
    /// Binds, runs `install` (type registration and programmatic setup), then
    /// applies the policy file and manifest before accepting traffic.
    pub fn start(config: NodeConfig, install: impl FnOnce(&Runtime) -> Result<()>) -> Result<Node> {
        let server = tiny_http::Server::http((config.host.as_str(), config.port))
            .map_err(|e| Error::Startup(format!("cannot bind {}:{}: {e}", config.host, config.port)))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Startup("listener has no IP address".into()))?;
        let endpoint = Endpoint::new(config.host.clone(), port)?;
        let runtime = Runtime::new(endpoint, &config)?;
        install(&runtime)?;
        if let Some(path) = &config.policy_file {
            let doc = fs::read_to_string(path).map_err(|e| Error::Startup(format!("policy file {}: {e}", path.display())))?;
            runtime.policy.load_policy_file(&doc)?;
        }
        if let Some(path) = &config.deploy_manifest {
            let doc = fs::read_to_string(path).map_err(|e| Error::Startup(format!("manifest {}: {e}", path.display())))?;
            runtime.apply_manifest(&doc)?;
        }
        let server = Arc::new(server);
        let shutdown = Arc::new(AtomicBool::new(false));
        let workers = (0..config.workers.max(1))
            .map(|i| {
                let (server, runtime, shutdown) = (server.clone(), runtime.clone(), shutdown.clone());
                std::thread::Builder::new()
                    .name(format!("rrt-worker-{i}"))
                    .spawn(move || server::serve(&server, &runtime, &shutdown))
                    .map_err(|e| Error::Startup(format!("worker spawn: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Node {
            runtime,
            server,
            shutdown,
            workers,
        })
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.runtime
    }

    pub fn endpoint(&self) -> &Endpoint {
        self.runtime.endpoint()
    }

    /// Blocks until the workers exit (they only exit on shutdown).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.server.unblock();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        self.stop();
    }
}
