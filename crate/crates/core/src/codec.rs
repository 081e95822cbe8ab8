//! Wire representation and its canonical JSON form.
//!
//! Object ids are assigned in first-encounter preorder starting at 0, with
//! fields walked in name order; sequences do not count as a nesting level.

use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Map, Number, Value as Json};

use crate::error::{Error, Result};
use crate::model::{builtin, Endpoint, Guid, ObjectRef, Rior, SmartProxyInfo, TransmissionDecision, TypeCatalog, Value, Object, Depth, PeerKind};

#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    I64(i64),
    F64(f64),
    Bool(bool),
    Str(String),
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireValue {
    Prim(Prim),
    Obj {
        class: String,
        id: u32,
        fields: BTreeMap<String, WireValue>,
    },
    Backref(u32),
    Seq(Vec<WireValue>),
    Ref(Box<Rior>),
}

impl WireValue {
    pub const NULL: WireValue = WireValue::Prim(Prim::Null);

    pub fn i64(v: i64) -> Self {
        WireValue::Prim(Prim::I64(v))
    }

    pub fn str(v: impl Into<String>) -> Self {
        WireValue::Prim(Prim::Str(v.into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub target: String,
    pub method: String,
    pub args: Vec<WireValue>,
    pub peer: PeerKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    Application,
    Network,
    Protocol,
}

impl FaultKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultKind::Application => "application",
            FaultKind::Network => "network",
            FaultKind::Protocol => "protocol",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "application" => Ok(FaultKind::Application),
            "network" => Ok(FaultKind::Network),
            "protocol" => Ok(FaultKind::Protocol),
            other => Err(Error::protocol(format!("unknown fault kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fault {
    pub kind: FaultKind,
    pub class: String,
    pub message: String,
}

impl Fault {
    /// Structured form of a server-side error.
    pub fn from_error(err: &Error) -> Self {
        match err {
            Error::Application { class, message } => Fault {
                kind: FaultKind::Application,
                class: class.clone(),
                message: message.clone(),
            },
            Error::Network { message, .. } => Fault {
                kind: FaultKind::Network,
                class: "network".into(),
                message: message.clone(),
            },
            other => Fault {
                kind: FaultKind::Protocol,
                class: error_class(other).into(),
                message: other.to_string(),
            },
        }
    }

    /// Local error a received fault re-raises as.
    pub fn into_error(self) -> Error {
        match self.kind {
            FaultKind::Application => Error::Application {
                class: self.class,
                message: self.message,
            },
            FaultKind::Network => Error::Network {
                message: self.message,
                fast_fail: false,
            },
            FaultKind::Protocol => Error::Protocol(format!("{}: {}", self.class, self.message)),
        }
    }
}

fn error_class(err: &Error) -> &'static str {
    match err {
        Error::NotFound(_) => "not-found",
        Error::UnknownMethod { .. } => "unknown-method",
        Error::ArgumentMismatch { .. } => "argument-mismatch",
        Error::UnknownType(_) => "unknown-type",
        _ => "protocol",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Ok(WireValue),
    Fault(Fault),
}

// ---------------------------------------------------------------------------
// JSON form

pub const RRT_VERSION: u64 = 1;

fn finite(v: f64) -> Result<Number> {
    Number::from_f64(v).ok_or_else(|| Error::protocol("non-finite float"))
}

pub fn wire_to_json(w: &WireValue) -> Result<Json> {
    Ok(match w {
        WireValue::Prim(p) => match p {
            Prim::I64(v) => json!({"k": "prim", "t": "i64", "v": v}),
            Prim::F64(v) => json!({"k": "prim", "t": "f64", "v": Json::Number(finite(*v)?)}),
            Prim::Bool(v) => json!({"k": "prim", "t": "bool", "v": v}),
            Prim::Str(v) => json!({"k": "prim", "t": "str", "v": v}),
            Prim::Null => json!({"k": "prim", "t": "null"}),
        },
        WireValue::Obj { class, id, fields } => {
            let mut f = Map::new();
            for (name, v) in fields {
                f.insert(name.clone(), wire_to_json(v)?);
            }
            json!({"k": "obj", "class": class, "id": id, "fields": f})
        }
        WireValue::Backref(id) => json!({"k": "backref", "id": id}),
        WireValue::Seq(items) => {
            let elements = items.iter().map(wire_to_json).collect::<Result<Vec<_>>>()?;
            json!({"k": "seq", "elements": elements})
        }
        WireValue::Ref(rior) => json!({"k": "ref", "rior": rior_to_json(rior)?}),
    })
}

pub fn rior_to_json(r: &Rior) -> Result<Json> {
    let mut fields = Map::new();
    for (name, v) in &r.cache.fields {
        fields.insert(name.clone(), wire_to_json(v)?);
    }
    let iface = serde_json::to_value(&r.interface).map_err(|e| Error::protocol(e.to_string()))?;
    Ok(json!({
        "host": r.endpoint.host(),
        "port": r.endpoint.port(),
        "guid": r.guid.to_hex(),
        "name": r.name,
        "iface": iface,
        "cache": {"fields": fields, "accessors": r.cache.accessors},
    }))
}

fn object<'a>(j: &'a Json, what: &str, required: &[&str], optional: &[&str]) -> Result<&'a Map<String, Json>> {
    let m = j
        .as_object()
        .ok_or_else(|| Error::protocol(format!("{what} must be a JSON object")))?;
    for key in m.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(Error::protocol(format!("unexpected key `{key}` in {what}")));
        }
    }
    for key in required {
        if !m.contains_key(*key) {
            return Err(Error::protocol(format!("missing key `{key}` in {what}")));
        }
    }
    Ok(m)
}

fn text<'a>(m: &'a Map<String, Json>, key: &str) -> Result<&'a str> {
    m[key]
        .as_str()
        .ok_or_else(|| Error::protocol(format!("`{key}` must be a string")))
}

fn id_of(m: &Map<String, Json>) -> Result<u32> {
    m["id"]
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| Error::protocol("`id` must be a non-negative 32-bit integer"))
}

pub fn wire_from_json(j: &Json) -> Result<WireValue> {
    let k = j
        .get("k")
        .and_then(Json::as_str)
        .ok_or_else(|| Error::protocol("wire value without discriminator `k`"))?;
    match k {
        "prim" => {
            let head = object(j, "prim", &["k", "t"], &["v"])?;
            let t = text(head, "t")?;
            let v = head.get("v");
            let need = || v.ok_or_else(|| Error::protocol(format!("prim `{t}` needs `v`")));
            let prim = match t {
                "null" => {
                    if v.is_some() {
                        return Err(Error::protocol("null prim carries no value"));
                    }
                    Prim::Null
                }
                "i64" => {
                    let n = need()?;
                    Prim::I64(
                        n.as_i64()
                            .filter(|_| n.is_i64() || n.is_u64())
                            .ok_or_else(|| Error::protocol(format!("`{n}` is not a 64-bit signed integer")))?,
                    )
                }
                "f64" => Prim::F64(need()?.as_f64().ok_or_else(|| Error::protocol("f64 prim needs a number"))?),
                "bool" => Prim::Bool(need()?.as_bool().ok_or_else(|| Error::protocol("bool prim needs a boolean"))?),
                "str" => Prim::Str(
                    need()?
                        .as_str()
                        .ok_or_else(|| Error::protocol("str prim needs a string"))?
                        .to_owned(),
                ),
                other => return Err(Error::protocol(format!("unknown prim type `{other}`"))),
            };
            Ok(WireValue::Prim(prim))
        }
        "obj" => {
            let m = object(j, "obj", &["k", "class", "id", "fields"], &[])?;
            let fields = m["fields"]
                .as_object()
                .ok_or_else(|| Error::protocol("`fields` must be an object"))?
                .iter()
                .map(|(name, v)| Ok((name.clone(), wire_from_json(v)?)))
                .collect::<Result<_>>()?;
            Ok(WireValue::Obj {
                class: text(m, "class")?.to_owned(),
                id: id_of(m)?,
                fields,
            })
        }
        "backref" => {
            let m = object(j, "backref", &["k", "id"], &[])?;
            Ok(WireValue::Backref(id_of(m)?))
        }
        "seq" => {
            let m = object(j, "seq", &["k", "elements"], &[])?;
            let items = m["elements"]
                .as_array()
                .ok_or_else(|| Error::protocol("`elements` must be an array"))?;
            Ok(WireValue::Seq(items.iter().map(wire_from_json).collect::<Result<_>>()?))
        }
        "ref" => {
            let m = object(j, "ref", &["k", "rior"], &[])?;
            Ok(WireValue::Ref(Box::new(rior_from_json(&m["rior"])?)))
        }
        other => Err(Error::protocol(format!("unknown wire kind `{other}`"))),
    }
}

pub fn rior_from_json(j: &Json) -> Result<Rior> {
    let m = object(j, "rior", &["host", "port", "guid", "name", "iface", "cache"], &[])?;
    let port = m["port"]
        .as_u64()
        .and_then(|p| u16::try_from(p).ok())
        .ok_or_else(|| Error::protocol("`port` must be a TCP port"))?;
    let endpoint = Endpoint::new(text(m, "host")?, port).map_err(|e| Error::protocol(e.to_string()))?;
    let guid: Guid = text(m, "guid")?.parse().map_err(|e: Error| Error::protocol(e.to_string()))?;
    let name = match &m["name"] {
        Json::Null => None,
        Json::String(s) => Some(s.clone()),
        _ => return Err(Error::protocol("`name` must be a string or null")),
    };
    let interface = serde_json::from_value(m["iface"].clone()).map_err(|e| Error::protocol(format!("iface: {e}")))?;
    let cache = object(&m["cache"], "cache", &["fields", "accessors"], &[])?;
    let fields = cache["fields"]
        .as_object()
        .ok_or_else(|| Error::protocol("cache `fields` must be an object"))?
        .iter()
        .map(|(name, v)| Ok((name.clone(), wire_from_json(v)?)))
        .collect::<Result<_>>()?;
    let accessors = cache["accessors"]
        .as_array()
        .ok_or_else(|| Error::protocol("cache `accessors` must be an array"))?
        .iter()
        .map(|a| a.as_str().map(str::to_owned).ok_or_else(|| Error::protocol("accessor names are strings")))
        .collect::<Result<_>>()?;
    let rior = Rior {
        endpoint,
        guid,
        name,
        interface,
        cache: SmartProxyInfo { fields, accessors },
    };
    rior.validate().map_err(|e| Error::protocol(format!("malformed rior: {e}")))?;
    Ok(rior)
}

/// Checks the id invariants over one message scope: obj ids run 0, 1, 2, ...
/// in preorder and every backref points at an earlier obj. Each cached-field
/// snapshot inside a ref is its own scope.
pub fn check_ids<'a>(values: impl IntoIterator<Item = &'a WireValue>) -> Result<()> {
    fn walk(w: &WireValue, next: &mut u32) -> Result<()> {
        match w {
            WireValue::Obj { id, fields, .. } => {
                if *id != *next {
                    return Err(Error::protocol(format!("obj id {id} out of order, expected {next}")));
                }
                *next += 1;
                fields.values().try_for_each(|f| walk(f, next))
            }
            WireValue::Backref(id) if *id >= *next => Err(Error::protocol(format!("dangling backref {id}"))),
            WireValue::Seq(items) => items.iter().try_for_each(|i| walk(i, next)),
            WireValue::Ref(rior) => rior.cache.fields.values().try_for_each(|f| walk(f, &mut 0)),
            WireValue::Prim(_) | WireValue::Backref(_) => Ok(()),
        }
    }
    let mut next = 0;
    values.into_iter().try_for_each(|v| walk(v, &mut next))
}

pub fn encode_request(req: &Request) -> Result<Vec<u8>> {
    let args = req.args.iter().map(wire_to_json).collect::<Result<Vec<_>>>()?;
    let doc = json!({
        "rrt": RRT_VERSION,
        "target": req.target,
        "method": req.method,
        "args": args,
        "peer": req.peer.as_str(),
    });
    Ok(serde_json::to_vec(&doc).expect("JSON values always serialize"))
}

pub fn decode_request(bytes: &[u8]) -> Result<Request> {
    let doc: Json = serde_json::from_slice(bytes).map_err(|e| Error::protocol(format!("malformed JSON: {e}")))?;
    let m = object(&doc, "request", &["rrt", "target", "method", "args", "peer"], &[])?;
    match m["rrt"].as_u64() {
        Some(RRT_VERSION) => {}
        _ => return Err(Error::protocol(format!("unsupported rrt version {}", m["rrt"]))),
    }
    let args: Vec<WireValue> = m["args"]
        .as_array()
        .ok_or_else(|| Error::protocol("`args` must be an array"))?
        .iter()
        .map(wire_from_json)
        .collect::<Result<_>>()?;
    check_ids(&args)?;
    Ok(Request {
        target: text(m, "target")?.to_owned(),
        method: text(m, "method")?.to_owned(),
        args,
        peer: text(m, "peer")?.parse()?,
    })
}

pub fn encode_response(resp: &Response) -> Result<Vec<u8>> {
    let doc = match resp {
        Response::Ok(result) => json!({"ok": true, "result": wire_to_json(result)?}),
        Response::Fault(f) => json!({
            "ok": false,
            "fault": {"kind": f.kind.as_str(), "class": f.class, "message": f.message},
        }),
    };
    Ok(serde_json::to_vec(&doc).expect("JSON values always serialize"))
}

pub fn decode_response(bytes: &[u8]) -> Result<Response> {
    let doc: Json = serde_json::from_slice(bytes).map_err(|e| Error::protocol(format!("malformed JSON: {e}")))?;
    let ok = doc
        .get("ok")
        .and_then(Json::as_bool)
        .ok_or_else(|| Error::protocol("response needs boolean `ok`"))?;
    if ok {
        let m = object(&doc, "response", &["ok", "result"], &[])?;
        let result = wire_from_json(&m["result"])?;
        check_ids([&result])?;
        Ok(Response::Ok(result))
    } else {
        let m = object(&doc, "response", &["ok", "fault"], &[])?;
        let f = object(&m["fault"], "fault", &["kind", "class", "message"], &[])?;
        Ok(Response::Fault(Fault {
            kind: FaultKind::parse(text(f, "kind")?)?,
            class: text(f, "class")?.to_owned(),
            message: text(f, "message")?.to_owned(),
        }))
    }
}

// ---------------------------------------------------------------------------
// Value graphs

/// Turns an object into a reference, deploying it if needed.
pub trait RefExporter {
    fn export(&self, object: &ObjectRef, signature: &str) -> Result<Rior>;
}

/// Turns a received reference into a local object or a proxy.
pub trait RefImporter {
    fn import(&self, rior: Rior) -> Result<Value>;
}

/// Per-message encoder. One instance spans all values of one envelope so
/// aliasing across arguments is preserved.
pub struct Encoder<'a> {
    types: &'a dyn TypeCatalog,
    exporter: &'a dyn RefExporter,
    seen: HashMap<usize, u32>,
    // Keeps encoded objects alive so their addresses stay unique.
    pinned: Vec<ObjectRef>,
}

impl<'a> Encoder<'a> {
    pub fn new(types: &'a dyn TypeCatalog, exporter: &'a dyn RefExporter) -> Self {
        Encoder {
            types,
            exporter,
            seen: HashMap::new(),
            pinned: Vec::new(),
        }
    }

    /// `signature` is the declared type at this position; it guides
    /// automatic deployment of references.
    pub fn encode(&mut self, value: &Value, decision: &TransmissionDecision, signature: &str) -> Result<WireValue> {
        match value {
            Value::Object(o) => match decision.depth() {
                Some(depth) => self.inline(o, 1, depth),
                None => self.reference(o, signature),
            },
            Value::Seq(items) => Ok(WireValue::Seq(
                items
                    .iter()
                    .map(|v| self.encode(v, decision, builtin::ANY))
                    .collect::<Result<_>>()?,
            )),
            other => leaf(other),
        }
    }

    fn reference(&mut self, o: &ObjectRef, signature: &str) -> Result<WireValue> {
        Ok(WireValue::Ref(Box::new(self.exporter.export(o, signature)?)))
    }

    fn inline(&mut self, o: &ObjectRef, level: u32, depth: Depth) -> Result<WireValue> {
        if let Some(id) = self.seen.get(&Object::identity(o)) {
            return Ok(WireValue::Backref(*id));
        }
        let plan = self
            .types
            .field_plan(o.type_name())
            .ok_or_else(|| Error::UnknownType(o.type_name().to_owned()))?;
        let id = u32::try_from(self.pinned.len()).map_err(|_| Error::protocol("too many objects in one message"))?;
        self.seen.insert(Object::identity(o), id);
        self.pinned.push(o.clone());
        let mut fields = BTreeMap::new();
        for f in &plan.fields {
            let v = o.get(&f.name);
            fields.insert(f.name.clone(), self.field(&v, level + 1, depth, &f.type_name)?);
        }
        Ok(WireValue::Obj {
            class: o.type_name().to_owned(),
            id,
            fields,
        })
    }

    fn field(&mut self, v: &Value, level: u32, depth: Depth, signature: &str) -> Result<WireValue> {
        match v {
            Value::Object(o) => {
                if let Some(id) = self.seen.get(&Object::identity(o)) {
                    Ok(WireValue::Backref(*id))
                } else if depth.admits(level) {
                    self.inline(o, level, depth)
                } else {
                    self.reference(o, signature)
                }
            }
            Value::Seq(items) => Ok(WireValue::Seq(
                items
                    .iter()
                    .map(|i| self.field(i, level, depth, builtin::ANY))
                    .collect::<Result<_>>()?,
            )),
            other => leaf(other),
        }
    }
}

fn leaf(v: &Value) -> Result<WireValue> {
    Ok(WireValue::Prim(match v {
        Value::Null => Prim::Null,
        Value::Int(i) => Prim::I64(*i),
        Value::Float(f) if f.is_finite() => Prim::F64(*f),
        Value::Float(_) => return Err(Error::protocol("non-finite float")),
        Value::Bool(b) => Prim::Bool(*b),
        Value::Str(s) => Prim::Str(s.clone()),
        Value::Remote(h) => return Ok(WireValue::Ref(Box::new(h.rior().clone()))),
        Value::Object(_) | Value::Seq(_) => unreachable!("composite values are not leaves"),
    }))
}

/// Per-message decoder; the counterpart of [`Encoder`].
pub struct Decoder<'a> {
    types: &'a dyn TypeCatalog,
    importer: &'a dyn RefImporter,
    objects: Vec<ObjectRef>,
}

impl<'a> Decoder<'a> {
    pub fn new(types: &'a dyn TypeCatalog, importer: &'a dyn RefImporter) -> Self {
        Decoder {
            types,
            importer,
            objects: Vec::new(),
        }
    }

    pub fn decode(&mut self, w: &WireValue) -> Result<Value> {
        Ok(match w {
            WireValue::Prim(p) => match p {
                Prim::I64(v) => Value::Int(*v),
                Prim::F64(v) => Value::Float(*v),
                Prim::Bool(v) => Value::Bool(*v),
                Prim::Str(v) => Value::Str(v.clone()),
                Prim::Null => Value::Null,
            },
            WireValue::Obj { class, id, fields } => {
                if *id as usize != self.objects.len() {
                    return Err(Error::protocol(format!("obj id {id} out of order")));
                }
                let plan = self
                    .types
                    .field_plan(class)
                    .ok_or_else(|| Error::UnknownType(class.clone()))?;
                let object = Object::new(class.clone(), std::iter::empty::<(String, Value)>());
                self.objects.push(object.clone());
                for (name, fw) in fields {
                    if plan.field(name).is_none() {
                        return Err(Error::protocol(format!("`{class}` has no field `{name}`")));
                    }
                    let v = self.decode(fw)?;
                    object.set(name, v);
                }
                Value::Object(object)
            }
            WireValue::Backref(id) => Value::Object(
                self.objects
                    .get(*id as usize)
                    .cloned()
                    .ok_or_else(|| Error::protocol(format!("dangling backref {id}")))?,
            ),
            WireValue::Seq(items) => Value::Seq(items.iter().map(|i| self.decode(i)).collect::<Result<_>>()?),
            WireValue::Ref(rior) => {
                rior.validate().map_err(|e| Error::protocol(format!("malformed rior: {e}")))?;
                self.importer.import((**rior).clone())?
            }
        })
    }
}
