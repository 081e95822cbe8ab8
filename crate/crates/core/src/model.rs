//! Identifiers, descriptors, remote references and the policy vocabulary
//! shared by every other module.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::codec::WireValue;
use crate::error::{Error, Result};
use crate::remote::Handle;

// ---------------------------------------------------------------------------
// GUID

/// 128-bit service identifier. Canonical text is 32 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Guid([u8; 16]);

impl Guid {
    pub const fn from_bytes(bytes: [u8; 16]) -> Self {
        Guid(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

/// Fresh GUID from the thread-local CSPRNG.
pub fn guid_new() -> Guid {
    Guid(rand::random())
}

impl fmt::Display for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Guid({})", self.to_hex())
    }
}

impl FromStr for Guid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canonical = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !canonical {
            return Err(Error::InvalidGuid(s.to_owned()));
        }
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out).map_err(|_| Error::InvalidGuid(s.to_owned()))?;
        Ok(Guid(out))
    }
}

// ---------------------------------------------------------------------------
// Endpoint

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Endpoint {
    host: String,
    port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Self> {
        let host = host.into();
        if host.is_empty() || host.contains(char::is_whitespace) || host.contains('/') {
            return Err(Error::InvalidEndpoint(format!("bad host `{host}`")));
        }
        if port == 0 {
            return Err(Error::InvalidEndpoint("port must be in 1..=65535".into()));
        }
        Ok(Endpoint { host, port })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://{}:{}", self.host, self.port)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    /// Parses `host:port`.
    fn from_str(s: &str) -> Result<Self> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidEndpoint(format!("expected host:port, got `{s}`")))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| Error::InvalidEndpoint(format!("bad port in `{s}`")))?;
        Endpoint::new(host, port)
    }
}

/// `http://<host>:<port>/<name or guid>`
pub fn service_url(endpoint: &Endpoint, name_or_guid: &str) -> String {
    format!("http://{}:{}/{}", endpoint.host, endpoint.port, name_or_guid)
}

// ---------------------------------------------------------------------------
// Type descriptors

/// Semantic type names understood without registration.
pub mod builtin {
    pub const I64: &str = "i64";
    pub const F64: &str = "f64";
    pub const BOOL: &str = "bool";
    pub const STRING: &str = "string";
    pub const VOID: &str = "void";
    pub const LIST: &str = "list";
    pub const ANY: &str = "any";

    /// Primitives always travel by value.
    pub fn is_primitive(name: &str) -> bool {
        matches!(name, I64 | F64 | BOOL | STRING)
    }

    pub fn is_builtin(name: &str) -> bool {
        is_primitive(name) || matches!(name, VOID | LIST | ANY)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
    pub mutable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Visibility {
    Public,
    NonPublic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessorKind {
    Get,
    Set,
}

/// Marks a method synthesized to read or write a field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accessor {
    pub field: String,
    pub kind: AccessorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodDescriptor {
    pub name: String,
    pub params: Vec<String>,
    #[serde(rename = "returns")]
    pub return_type: String,
    #[serde(rename = "throws_network")]
    pub declares_network_fault: bool,
    pub visibility: Visibility,
    pub accessor: Option<Accessor>,
}

impl MethodDescriptor {
    pub fn new(name: impl Into<String>, params: &[&str], return_type: impl Into<String>) -> Self {
        MethodDescriptor {
            name: name.into(),
            params: params.iter().map(|p| (*p).to_owned()).collect(),
            return_type: return_type.into(),
            declares_network_fault: false,
            visibility: Visibility::Public,
            accessor: None,
        }
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn key(&self) -> MethodKey {
        MethodKey::new(&self.name, self.params.len())
    }

    /// Same name, parameter types and return type.
    pub fn same_signature(&self, other: &MethodDescriptor) -> bool {
        self.name == other.name && self.params == other.params && self.return_type == other.return_type
    }
}

/// Method identity within a type: name plus arity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodKey {
    pub name: String,
    pub arity: usize,
}

impl MethodKey {
    pub fn new(name: &str, arity: usize) -> Self {
        MethodKey {
            name: name.to_owned(),
            arity,
        }
    }
}

impl fmt::Display for MethodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

/// Registered metadata about an application class or deployment interface.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeDescriptor {
    #[serde(rename = "name")]
    pub type_name: String,
    #[serde(rename = "super")]
    pub supertype: Option<String>,
    #[serde(rename = "interface")]
    pub is_interface: bool,
    pub fields: Vec<FieldDescriptor>,
    pub methods: Vec<MethodDescriptor>,
}

impl TypeDescriptor {
    pub fn class(name: impl Into<String>) -> Self {
        TypeDescriptor {
            type_name: name.into(),
            supertype: None,
            is_interface: false,
            fields: Vec::new(),
            methods: Vec::new(),
        }
    }

    pub fn interface(name: impl Into<String>) -> Self {
        TypeDescriptor {
            is_interface: true,
            ..TypeDescriptor::class(name)
        }
    }

    pub fn method(&self, name: &str, arity: usize) -> Option<&MethodDescriptor> {
        self.methods.iter().find(|m| m.name == name && m.arity() == arity)
    }

    pub fn methods_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a MethodDescriptor> + 'a {
        self.methods.iter().filter(move |m| m.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&FieldDescriptor> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn accessor_for(&self, field: &str, kind: AccessorKind) -> Option<&MethodDescriptor> {
        self.methods
            .iter()
            .find(|m| matches!(&m.accessor, Some(a) if a.field == field && a.kind == kind))
    }

    /// Local invariants: non-empty name, unique fields, unique name+arity.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidDescriptor {
            type_name: self.type_name.clone(),
            reason,
        };
        if self.type_name.trim().is_empty() {
            return Err(bad("empty type name".into()));
        }
        if self.supertype.as_deref() == Some(self.type_name.as_str()) {
            return Err(bad("type names itself as supertype".into()));
        }
        let mut fields = HashSet::new();
        for f in &self.fields {
            if f.name.is_empty() || !fields.insert(f.name.as_str()) {
                return Err(bad(format!("duplicate or empty field `{}`", f.name)));
            }
        }
        let mut keys = HashSet::new();
        for m in &self.methods {
            if m.name.is_empty() || !keys.insert(m.key()) {
                return Err(bad(format!("duplicate or empty method `{}`", m.key())));
            }
            if m.params.iter().any(|p| p == builtin::VOID) {
                return Err(bad(format!("`{}` takes a void parameter", m.name)));
            }
        }
        Ok(())
    }
}

/// Field-walk plan for one type: every field including inherited ones, in
/// wire order (sorted by name). Built once per type at registration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldPlan {
    pub type_name: String,
    pub fields: Vec<FieldDescriptor>,
}

impl FieldPlan {
    pub fn field(&self, name: &str) -> Option<&FieldDescriptor> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Read access to a table of registered types.
pub trait TypeCatalog: Send + Sync {
    fn descriptor(&self, type_name: &str) -> Option<Arc<TypeDescriptor>>;

    fn field_plan(&self, type_name: &str) -> Option<Arc<FieldPlan>>;
}

/// The type itself followed by its ancestors, most derived first.
pub fn supertype_chain(type_name: &str, catalog: &dyn TypeCatalog) -> Result<Vec<Arc<TypeDescriptor>>> {
    let mut chain: Vec<Arc<TypeDescriptor>> = Vec::new();
    let mut next = Some(type_name.to_owned());
    while let Some(name) = next {
        if chain.iter().any(|t| t.type_name == name) {
            return Err(Error::RegistryIntegrity(format!("supertype cycle through `{name}`")));
        }
        let desc = catalog
            .descriptor(&name)
            .ok_or_else(|| Error::RegistryIntegrity(format!("supertype `{name}` is not registered")))?;
        next = desc.supertype.clone();
        chain.push(desc);
    }
    Ok(chain)
}

/// True iff `candidate` equals `ancestor` or has it on its supertype chain.
pub fn is_subtype(candidate: &TypeDescriptor, ancestor: &TypeDescriptor, catalog: &dyn TypeCatalog) -> Result<bool> {
    if candidate.type_name == ancestor.type_name {
        return Ok(true);
    }
    match &candidate.supertype {
        None => Ok(false),
        Some(parent) => Ok(supertype_chain(parent, catalog)?
            .iter()
            .any(|t| t.type_name == ancestor.type_name)),
    }
}

// ---------------------------------------------------------------------------
// Runtime values

pub type ObjectRef = Arc<Object>;

/// A live application object: a registered type name plus named fields.
/// Behaviour lives in the method table registered for the type.
pub struct Object {
    type_name: String,
    fields: RwLock<BTreeMap<String, Value>>,
}

impl Object {
    pub fn new<I, K>(type_name: impl Into<String>, fields: I) -> ObjectRef
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        Arc::new(Object {
            type_name: type_name.into(),
            fields: RwLock::new(fields.into_iter().map(|(k, v)| (k.into(), v)).collect()),
        })
    }

    pub fn type_name(&self) -> &str {
        &self.type_name
    }

    /// Field value, `Null` when unset.
    pub fn get(&self, field: &str) -> Value {
        self.fields.read().get(field).cloned().unwrap_or(Value::Null)
    }

    pub fn set(&self, field: &str, value: Value) {
        self.fields.write().insert(field.to_owned(), value);
    }

    /// Applies `f` to a field in place, under the object's write lock.
    pub fn update<R>(&self, field: &str, f: impl FnOnce(&mut Value) -> R) -> R {
        let mut guard = self.fields.write();
        f(guard.entry(field.to_owned()).or_insert(Value::Null))
    }

    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        self.fields.read().clone()
    }

    /// In-process identity.
    pub fn identity(this: &ObjectRef) -> usize {
        Arc::as_ptr(this) as usize
    }
}

impl fmt::Debug for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:p}", self.type_name, self)
    }
}

#[derive(Clone)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Seq(Vec<Value>),
    Object(ObjectRef),
    Remote(Arc<Handle>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[Value]> {
        match self {
            Value::Seq(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&ObjectRef> {
        match self {
            Value::Object(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_handle(&self) -> Option<&Arc<Handle>> {
        match self {
            Value::Remote(h) => Some(h),
            _ => None,
        }
    }

    pub fn into_handle(self) -> Result<Arc<Handle>> {
        match self {
            Value::Remote(h) => Ok(h),
            other => Err(Error::protocol(format!("expected a remote handle, got {other:?}"))),
        }
    }

    pub fn into_object(self) -> Result<ObjectRef> {
        match self {
            Value::Object(o) => Ok(o),
            other => Err(Error::protocol(format!("expected a local object, got {other:?}"))),
        }
    }

    /// Semantic type of the value as seen by the policy manager.
    pub fn type_name(&self) -> &str {
        match self {
            Value::Null => builtin::ANY,
            Value::Int(_) => builtin::I64,
            Value::Float(_) => builtin::F64,
            Value::Bool(_) => builtin::BOOL,
            Value::Str(_) => builtin::STRING,
            Value::Seq(_) => builtin::LIST,
            Value::Object(o) => o.type_name(),
            Value::Remote(h) => &h.interface().type_name,
        }
    }

    /// Primitive equality, identity for objects and handles.
    pub fn same(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Seq(a), Value::Seq(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same(y)),
            (Value::Object(a), Value::Object(b)) => Arc::ptr_eq(a, b),
            (Value::Remote(a), Value::Remote(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("Null"),
            Value::Int(v) => write!(f, "Int({v})"),
            Value::Float(v) => write!(f, "Float({v})"),
            Value::Bool(v) => write!(f, "Bool({v})"),
            Value::Str(v) => write!(f, "Str({v:?})"),
            Value::Seq(v) => f.debug_list().entries(v).finish(),
            Value::Object(o) => write!(f, "Object({o:?})"),
            Value::Remote(h) => write!(f, "Remote({}@{})", h.interface().type_name, h.guid()),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<ObjectRef> for Value {
    fn from(v: ObjectRef) -> Self {
        Value::Object(v)
    }
}

// ---------------------------------------------------------------------------
// Remote references

/// Cached-field snapshot carried inside a reference.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SmartProxyInfo {
    pub fields: BTreeMap<String, WireValue>,
    /// Accessor method names the receiving proxy serves locally.
    pub accessors: Vec<String>,
}

impl SmartProxyInfo {
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty() && self.accessors.is_empty()
    }
}

/// Interoperable reference to a deployed service.
#[derive(Clone, Debug, PartialEq)]
pub struct Rior {
    pub endpoint: Endpoint,
    pub guid: Guid,
    pub name: Option<String>,
    pub interface: TypeDescriptor,
    pub cache: SmartProxyInfo,
}

impl Rior {
    pub fn url(&self) -> String {
        service_url(&self.endpoint, &self.guid.to_hex())
    }

    pub fn validate(&self) -> Result<()> {
        self.interface.validate()?;
        for name in self.cache.fields.keys() {
            if self.interface.field(name).is_none() {
                return Err(Error::protocol(format!(
                    "cached field `{name}` is not declared by `{}`",
                    self.interface.type_name
                )));
            }
        }
        for acc in &self.cache.accessors {
            let declared = self
                .interface
                .methods_named(acc)
                .any(|m| matches!(&m.accessor, Some(a) if self.cache.fields.contains_key(&a.field)));
            if !declared {
                return Err(Error::protocol(format!("cache accessor `{acc}` has no cached field")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Policy vocabulary

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    ByValue,
    ByReference,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::ByValue => "BY_VALUE",
            PolicyKind::ByReference => "BY_REFERENCE",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BY_VALUE" => Ok(PolicyKind::ByValue),
            "BY_REFERENCE" => Ok(PolicyKind::ByReference),
            other => Err(Error::MalformedRule(format!("unknown policy `{other}`"))),
        }
    }
}

/// Maximum number of inlined object levels in a by-value closure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    Limited(NonZeroU32),
    Unbounded,
}

impl Depth {
    pub fn limited(levels: u32) -> Option<Depth> {
        NonZeroU32::new(levels).map(Depth::Limited)
    }

    /// Whether an object at nesting `level` (root = 1) is inlined.
    pub fn admits(&self, level: u32) -> bool {
        match self {
            Depth::Limited(max) => level <= max.get(),
            Depth::Unbounded => true,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Limited(n) => write!(f, "{n}"),
            Depth::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "unbounded" {
            return Ok(Depth::Unbounded);
        }
        s.parse::<u32>()
            .ok()
            .and_then(Depth::limited)
            .ok_or_else(|| Error::MalformedRule(format!("depth must be a positive integer or `unbounded`, got `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub u64);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Class,
    Method,
    Return,
    Param,
    CacheField,
}

impl RuleKind {
    pub fn label(&self) -> &'static str {
        match self {
            RuleKind::Class => "class",
            RuleKind::Method => "method",
            RuleKind::Return => "return",
            RuleKind::Param => "param",
            RuleKind::CacheField => "cache",
        }
    }
}

/// Which rule produced a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Winner {
    /// A stored rule at precedence level 1..=6.
    Rule { id: RuleId, kind: RuleKind, level: u8 },
    /// Level 7.
    Default,
    /// Primitives bypass rules.
    Primitive,
}

impl Winner {
    pub fn level_label(&self) -> String {
        match self {
            Winner::Rule { level, .. } => level.to_string(),
            Winner::Default | Winner::Primitive => "default".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransmissionDecision {
    kind: PolicyKind,
    depth: Option<Depth>,
    pub winner: Winner,
}

impl TransmissionDecision {
    pub fn by_value(depth: Depth, winner: Winner) -> Self {
        TransmissionDecision {
            kind: PolicyKind::ByValue,
            depth: Some(depth),
            winner,
        }
    }

    pub fn by_reference(winner: Winner) -> Self {
        TransmissionDecision {
            kind: PolicyKind::ByReference,
            depth: None,
            winner,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Present only for by-value decisions.
    pub fn depth(&self) -> Option<Depth> {
        self.depth
    }
}

/// Who is on the other end of a call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PeerKind {
    Rrt,
    Plain,
}

impl PeerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PeerKind::Rrt => "rrt",
            PeerKind::Plain => "plain",
        }
    }
}

impl FromStr for PeerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rrt" => Ok(PeerKind::Rrt),
            "plain" => Ok(PeerKind::Plain),
            other => Err(Error::protocol(format!("unknown peer kind `{other}`"))),
        }
    }
}
