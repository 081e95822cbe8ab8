//! Proxies, loop-back resolution, smart-proxy caching, automatic deployment
//! and the outbound invocation pipeline.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::{Mutex, RwLock};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};

use crate::codec::{
    decode_response, encode_request, rior_from_json, Decoder, Encoder, FaultKind, RefExporter, RefImporter, Request,
    Response, WireValue,
};
use crate::error::{Error, Result};
use crate::model::{
    builtin, is_subtype, supertype_chain, Accessor, AccessorKind, Endpoint, Guid, MethodDescriptor, ObjectRef,
    PeerKind, Rior, SmartProxyInfo, TransmissionDecision, TypeCatalog, TypeDescriptor, Value,
};
use crate::node::Runtime;
use crate::policy::{CallContext, Role};
use crate::registry::{InterfaceChoice, Skeleton};

/// Client-side stand-in for a remote service. Presents exactly the methods
/// of the reference's interface.
pub struct Handle {
    rior: Rior,
    runtime: Weak<Runtime>,
    cached: Mutex<BTreeMap<String, Value>>,
    // accessor method name -> (field, kind)
    accessors: HashMap<String, (String, AccessorKind)>,
    calls: AtomicU64,
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({} {})", self.rior.interface.type_name, self.rior.url())
    }
}

impl Handle {
    fn new(rior: Rior, runtime: &Runtime) -> Result<Self> {
        let mut cached = BTreeMap::new();
        for (field, w) in &rior.cache.fields {
            let v = Decoder::new(runtime.registry().as_ref(), runtime).decode(w)?;
            cached.insert(field.clone(), v);
        }
        let mut accessors = HashMap::new();
        for name in &rior.cache.accessors {
            let found = rior.interface.methods_named(name).find_map(|m| m.accessor.clone());
            if let Some(Accessor { field, kind }) = found {
                accessors.insert(name.clone(), (field, kind));
            }
        }
        Ok(Handle {
            rior,
            runtime: runtime.this.clone(),
            cached: Mutex::new(cached),
            accessors,
            calls: AtomicU64::new(0),
        })
    }

    pub fn rior(&self) -> &Rior {
        &self.rior
    }

    pub fn guid(&self) -> &Guid {
        &self.rior.guid
    }

    pub fn interface(&self) -> &TypeDescriptor {
        &self.rior.interface
    }

    /// Outbound requests this handle has attempted.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn cached_field(&self, field: &str) -> Option<Value> {
        self.cached.lock().get(field).cloned()
    }

    pub fn invoke(&self, method: &str, args: &[Value]) -> Result<Value> {
        self.invoke_as(method, args, PeerKind::Rrt)
    }

    /// Invokes announcing the given peer kind, which selects the default
    /// transmission policy at the server.
    pub fn invoke_as(&self, method: &str, args: &[Value], peer: PeerKind) -> Result<Value> {
        if let Some((field, kind)) = self.accessors.get(method) {
            match (kind, args) {
                (AccessorKind::Get, []) => return Ok(self.cached_field(field).unwrap_or(Value::Null)),
                (AccessorKind::Set, [v]) => {
                    self.cached.lock().insert(field.clone(), v.clone());
                    return Ok(Value::Null);
                }
                _ => {}
            }
        }
        let descriptor = self.rior.interface.method(method, args.len()).ok_or_else(|| {
            if self.rior.interface.methods_named(method).next().is_some() {
                Error::ArgumentMismatch {
                    method: method.to_owned(),
                    reason: format!("no overload takes {} arguments", args.len()),
                }
            } else {
                Error::UnknownMethod {
                    interface: self.rior.interface.type_name.clone(),
                    method: method.to_owned(),
                }
            }
        })?;
        let runtime = self.runtime.upgrade().ok_or_else(|| Error::Network {
            message: "local runtime has shut down".into(),
            fast_fail: false,
        })?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        runtime.call_remote(&self.rior, descriptor, args, peer)
    }
}

/// At most one handle per GUID.
#[derive(Default)]
pub struct ProxyCache {
    handles: RwLock<HashMap<Guid, Arc<Handle>>>,
}

impl ProxyCache {
    pub fn get(&self, guid: &Guid) -> Option<Arc<Handle>> {
        self.handles.read().get(guid).cloned()
    }

    pub fn len(&self) -> usize {
        self.handles.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_create(&self, rior: Rior, runtime: &Runtime) -> Result<Arc<Handle>> {
        if let Some(h) = self.get(&rior.guid) {
            return Ok(h);
        }
        // Built outside the lock: decoding the snapshot may import references.
        let fresh = Arc::new(Handle::new(rior, runtime)?);
        let mut handles = self.handles.write();
        Ok(handles.entry(fresh.rior.guid).or_insert(fresh).clone())
    }
}

/// Exports objects as references of one runtime, deploying them on demand.
pub(crate) struct Exporter<'a> {
    runtime: &'a Runtime,
    // Snapshots are only taken for top-level references so that a cached
    // field referring back to its owner cannot recurse.
    snapshot: bool,
}

impl<'a> Exporter<'a> {
    pub(crate) fn new(runtime: &'a Runtime, snapshot: bool) -> Self {
        Exporter { runtime, snapshot }
    }
}

impl RefExporter for Exporter<'_> {
    fn export(&self, object: &ObjectRef, signature: &str) -> Result<Rior> {
        let skeleton = self.runtime.auto_deploy(object, signature)?;
        self.runtime.rior_for(&skeleton, self.snapshot)
    }
}

impl RefImporter for Runtime {
    fn import(&self, rior: Rior) -> Result<Value> {
        self.resolve_incoming_rior(rior)
    }
}

fn synthesized_accessor(field: &crate::model::FieldDescriptor, kind: AccessorKind) -> MethodDescriptor {
    let mut m = match kind {
        AccessorKind::Get => MethodDescriptor::new(format!("get_{}", field.name), &[], field.type_name.clone()),
        AccessorKind::Set => MethodDescriptor::new(format!("set_{}", field.name), &[&field.type_name], builtin::VOID),
    };
    m.accessor = Some(Accessor {
        field: field.name.clone(),
        kind,
    });
    m
}

impl Runtime {
    /// Loop-back first, then the proxy cache, then a new proxy.
    pub fn resolve_incoming_rior(&self, rior: Rior) -> Result<Value> {
        rior.validate()?;
        if rior.endpoint == *self.endpoint() {
            return self
                .registry()
                .by_guid(&rior.guid)
                .map(|s| Value::Object(s.object.clone()))
                .ok_or_else(|| Error::NotFound(rior.guid.to_hex()));
        }
        self.proxies.get_or_create(rior, self).map(Value::Remote)
    }

    pub fn proxy_cache(&self) -> &ProxyCache {
        &self.proxies
    }

    /// Fetches a service's reference from a remote node and resolves it.
    pub fn get_object_by_name(&self, host: &str, port: u16, name: &str) -> Result<Value> {
        let endpoint = Endpoint::new(host, port)?;
        let url = format!("{}/describe/{}", endpoint.base_url(), utf8_percent_encode(name, NON_ALPHANUMERIC));
        let mut response = self.agent.get(&url).call().map_err(|e| Error::Network {
            message: format!("{url}: {e}"),
            fast_fail: false,
        })?;
        let status = response.status().as_u16();
        let body = read_body(&mut response).map_err(|message| Error::Network {
            message,
            fast_fail: false,
        })?;
        match status {
            200 => {
                let doc: serde_json::Value =
                    serde_json::from_slice(&body).map_err(|e| Error::protocol(format!("describe document: {e}")))?;
                self.resolve_incoming_rior(rior_from_json(&doc)?)
            }
            404 => Err(Error::NotFound(name.to_owned())),
            other => Err(Error::protocol(format!("describe returned HTTP {other}"))),
        }
    }

    /// Convenience for callers that expect a proxy.
    pub fn get_handle(&self, host: &str, port: u16, name: &str) -> Result<Arc<Handle>> {
        self.get_object_by_name(host, port, name)?.into_handle()
    }

    /// Service a reference to `object` should denote, deploying it if no
    /// suitable service exists.
    pub fn auto_deploy(&self, object: &ObjectRef, signature: &str) -> Result<Arc<Skeleton>> {
        let _serial = self.deploy_lock.lock();
        let registry = self.registry();
        if registry.registered(object.type_name()).is_none() {
            return Err(Error::UnknownType(object.type_name().to_owned()));
        }
        let deployments = registry.deployments_of(object);
        if let Some(own) = deployments
            .iter()
            .filter(|s| s.interface.type_name == object.type_name())
            .max_by_key(|s| s.seq())
        {
            return Ok(own.clone());
        }
        let wanted = if builtin::is_builtin(signature) {
            None
        } else {
            registry.descriptor(signature)
        };
        let mut best: Option<(usize, u64, &Arc<Skeleton>)> = None;
        for s in &deployments {
            if let Some(w) = &wanted {
                if !is_subtype(&s.interface, w, registry.as_ref())? {
                    continue;
                }
            }
            let depth = supertype_chain(&s.interface.type_name, registry.as_ref())?.len();
            if best.is_none_or(|(d, seq, _)| (depth, s.seq()) > (d, seq)) {
                best = Some((depth, s.seq(), s));
            }
        }
        if let Some((_, _, s)) = best {
            return Ok(s.clone());
        }
        let choice = match &wanted {
            Some(w) if !self.concrete_type_always() => InterfaceChoice::Named(&w.type_name),
            _ => InterfaceChoice::ConcretePublic,
        };
        registry.deploy_with(object, choice, None)
    }

    /// Reference to a deployed service. With `snapshot`, cache rules for the
    /// service object's type add the cached fields and their accessors.
    pub fn rior_for(&self, skeleton: &Skeleton, snapshot: bool) -> Result<Rior> {
        let mut interface = (*skeleton.interface).clone();
        let mut cache = SmartProxyInfo::default();
        if snapshot {
            let registry = self.registry();
            let mut owners: Vec<String> = supertype_chain(&skeleton.concrete.type_name, registry.as_ref())?
                .iter()
                .map(|t| t.type_name.clone())
                .collect();
            owners.push(interface.type_name.clone());
            let plan = registry
                .field_plan(&skeleton.concrete.type_name)
                .ok_or_else(|| Error::UnknownType(skeleton.concrete.type_name.clone()))?;
            for owner in owners {
                for name in self.policy().get_fields_to_be_cached(&owner) {
                    let Some(field) = plan.field(&name) else { continue };
                    if cache.fields.contains_key(&name) {
                        continue;
                    }
                    let value = skeleton.object.get(&name);
                    let decision = self
                        .policy()
                        .resolve_class_only(value.type_name(), PeerKind::Rrt, registry.as_ref());
                    let exporter = Exporter::new(self, false);
                    let w = Encoder::new(registry.as_ref(), &exporter).encode(&value, &decision, &field.type_name)?;
                    cache.fields.insert(name.clone(), w);
                    if interface.field(&name).is_none() {
                        interface.fields.push(field.clone());
                    }
                    for kind in [AccessorKind::Get, AccessorKind::Set] {
                        let accessor = skeleton
                            .concrete
                            .accessor_for(&name, kind)
                            .cloned()
                            .unwrap_or_else(|| synthesized_accessor(field, kind));
                        if interface.method(&accessor.name, accessor.arity()).is_none() {
                            interface.methods.push(accessor.clone());
                        }
                        cache.accessors.push(accessor.name);
                    }
                }
            }
        }
        Ok(Rior {
            endpoint: self.endpoint().clone(),
            guid: skeleton.guid,
            name: skeleton.name.clone(),
            interface,
            cache,
        })
    }

    /// Encodes one value as this node would send it, deploying escaping
    /// references here.
    pub fn encode_value(&self, value: &Value, decision: &TransmissionDecision, signature: &str) -> Result<WireValue> {
        let exporter = Exporter::new(self, true);
        Encoder::new(self.registry().as_ref(), &exporter).encode(value, decision, signature)
    }

    /// Decodes one value as this node would receive it.
    pub fn decode_value(&self, w: &WireValue) -> Result<Value> {
        Decoder::new(self.registry().as_ref(), self).decode(w)
    }

    /// Encodes, sends and decodes one remote call.
    pub(crate) fn call_remote(&self, rior: &Rior, method: &MethodDescriptor, args: &[Value], peer: PeerKind) -> Result<Value> {
        let interface = &rior.interface.type_name;
        let exporter = Exporter::new(self, true);
        let mut encoder = Encoder::new(self.registry().as_ref(), &exporter);
        let mut wire_args = Vec::with_capacity(args.len());
        for (i, (arg, param)) in args.iter().zip(&method.params).enumerate() {
            let ctx = CallContext {
                role: Role::Argument(i),
                declared_type: interface,
                method: &method.name,
                actual_type: arg.type_name(),
                peer,
            };
            let decision = self.decide(&ctx, arg);
            wire_args.push(encoder.encode(arg, &decision, param)?);
        }
        drop(encoder);
        let body = encode_request(&Request {
            target: rior.guid.to_hex(),
            method: method.name.clone(),
            args: wire_args,
            peer,
        })?;
        let url = format!("{}/invoke/{}", rior.endpoint.base_url(), rior.guid.to_hex());
        let bytes = match self.post(&url, &body) {
            Ok(bytes) => bytes,
            Err(message) => return self.network_failure(method, interface, &message),
        };
        match decode_response(&bytes)? {
            Response::Ok(w) => Decoder::new(self.registry().as_ref(), self).decode(&w),
            Response::Fault(f) if f.kind == FaultKind::Network => self.network_failure(method, interface, &f.message),
            Response::Fault(f) => Err(f.into_error()),
        }
    }

    fn post(&self, url: &str, body: &[u8]) -> std::result::Result<Vec<u8>, String> {
        let mut response = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| format!("{url}: {e}"))?;
        let status = response.status().as_u16();
        let bytes = read_body(&mut response)?;
        if status == 200 {
            Ok(bytes)
        } else {
            Err(format!("{url}: HTTP {status}"))
        }
    }
}

fn read_body(response: &mut ureq::http::Response<ureq::Body>) -> std::result::Result<Vec<u8>, String> {
    let mut bytes = Vec::new();
    response
        .body_mut()
        .as_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| format!("reading response: {e}"))?;
    Ok(bytes)
}
