//! Type registration, accessor synthesis, deployment and local dispatch.
//!
//! Application types are registered together with a [`MethodTable`] of
//! bindings; deployment builds a [`Skeleton`] whose table is restricted to
//! the deployment interface, so only interface methods are reachable
//! remotely.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::model::{
    builtin, supertype_chain, Accessor, AccessorKind, FieldDescriptor, FieldPlan, Guid, MethodDescriptor, MethodKey,
    Object, ObjectRef, TypeCatalog, TypeDescriptor, Value, Visibility,
};

/// Failure raised by application code inside a binding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppFault {
    pub class: String,
    pub message: String,
}

impl AppFault {
    pub fn new(class: impl Into<String>, message: impl Into<String>) -> Self {
        AppFault {
            class: class.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for AppFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.class, self.message)
    }
}

/// Middleware failures surfacing inside application code keep their kind in
/// the class name.
impl From<Error> for AppFault {
    fn from(e: Error) -> Self {
        match e {
            Error::Application { class, message } => AppFault { class, message },
            other => AppFault::new(format!("rrt.{}", other.fault_kind()), other.to_string()),
        }
    }
}

pub type Binding = Arc<dyn Fn(&ObjectRef, &[Value]) -> Result<Value, AppFault> + Send + Sync>;
pub type Constructor = Arc<dyn Fn(&[Value]) -> Result<ObjectRef, AppFault> + Send + Sync>;
pub type ReprFn = Arc<dyn Fn(&ObjectRef) -> String + Send + Sync>;

/// Bindings keyed by method name and arity.
#[derive(Clone, Default)]
pub struct MethodTable {
    bindings: HashMap<MethodKey, Binding>,
}

impl MethodTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind<F>(&mut self, name: &str, arity: usize, f: F)
    where
        F: Fn(&ObjectRef, &[Value]) -> Result<Value, AppFault> + Send + Sync + 'static,
    {
        self.bindings.insert(MethodKey::new(name, arity), Arc::new(f));
    }

    pub fn get(&self, key: &MethodKey) -> Option<&Binding> {
        self.bindings.get(key)
    }

    pub fn contains(&self, key: &MethodKey) -> bool {
        self.bindings.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

impl fmt::Debug for MethodTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<_> = self.bindings.keys().map(ToString::to_string).collect();
        keys.sort();
        f.debug_tuple("MethodTable").field(&keys).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TypeId(pub u32);

/// Builder pairing a descriptor with its bindings.
pub struct TypeDef {
    descriptor: TypeDescriptor,
    table: MethodTable,
    constructor: Option<Constructor>,
    repr: Option<ReprFn>,
}

impl TypeDef {
    pub fn class(name: &str) -> Self {
        Self::from_descriptor(TypeDescriptor::class(name))
    }

    pub fn interface(name: &str) -> Self {
        Self::from_descriptor(TypeDescriptor::interface(name))
    }

    fn from_descriptor(descriptor: TypeDescriptor) -> Self {
        TypeDef {
            descriptor,
            table: MethodTable::new(),
            constructor: None,
            repr: None,
        }
    }

    pub fn extends(mut self, supertype: &str) -> Self {
        self.descriptor.supertype = Some(supertype.to_owned());
        self
    }

    pub fn field(mut self, name: &str, type_name: &str, mutable: bool) -> Self {
        self.descriptor.fields.push(FieldDescriptor {
            name: name.to_owned(),
            type_name: type_name.to_owned(),
            mutable,
        });
        self
    }

    /// Public method with a binding.
    pub fn method<F>(mut self, name: &str, params: &[&str], returns: &str, f: F) -> Self
    where
        F: Fn(&ObjectRef, &[Value]) -> Result<Value, AppFault> + Send + Sync + 'static,
    {
        self.descriptor.methods.push(MethodDescriptor::new(name, params, returns));
        self.table.bind(name, params.len(), f);
        self
    }

    /// Method signature without a binding (interfaces).
    pub fn signature(mut self, name: &str, params: &[&str], returns: &str) -> Self {
        self.descriptor.methods.push(MethodDescriptor::new(name, params, returns));
        self
    }

    /// Marks the last method as declaring network faults.
    pub fn throws_network(mut self) -> Self {
        if let Some(m) = self.descriptor.methods.last_mut() {
            m.declares_network_fault = true;
        }
        self
    }

    /// Marks the last method as non-public.
    pub fn non_public(mut self) -> Self {
        if let Some(m) = self.descriptor.methods.last_mut() {
            m.visibility = Visibility::NonPublic;
        }
        self
    }

    pub fn constructor<F>(mut self, f: F) -> Self
    where
        F: Fn(&[Value]) -> Result<ObjectRef, AppFault> + Send + Sync + 'static,
    {
        self.constructor = Some(Arc::new(f));
        self
    }

    pub fn repr<F>(mut self, f: F) -> Self
    where
        F: Fn(&ObjectRef) -> String + Send + Sync + 'static,
    {
        self.repr = Some(Arc::new(f));
        self
    }

    pub fn register(self, registry: &Registry) -> Result<TypeId> {
        registry.register_with(self.descriptor, self.table, self.constructor, self.repr)
    }
}

pub struct RegisteredType {
    pub id: TypeId,
    pub descriptor: Arc<TypeDescriptor>,
    pub table: MethodTable,
    pub plan: Arc<FieldPlan>,
    constructor: Option<Constructor>,
    repr: Option<ReprFn>,
}

/// Getter and setter descriptors for every field that lacks one. Names gain a
/// `_field` suffix when they would collide with an existing method.
pub fn synthesize_accessors(descriptor: &TypeDescriptor) -> Vec<MethodDescriptor> {
    let mut taken: HashSet<String> = descriptor.methods.iter().map(|m| m.name.clone()).collect();
    let mut out = Vec::new();
    let fresh = |base: String, taken: &mut HashSet<String>| {
        let mut name = base;
        while taken.contains(&name) {
            name.push_str("_field");
        }
        taken.insert(name.clone());
        name
    };
    for f in &descriptor.fields {
        if descriptor.accessor_for(&f.name, AccessorKind::Get).is_none() {
            let name = fresh(format!("get_{}", f.name), &mut taken);
            out.push(MethodDescriptor {
                accessor: Some(Accessor {
                    field: f.name.clone(),
                    kind: AccessorKind::Get,
                }),
                ..MethodDescriptor::new(name, &[], f.type_name.clone())
            });
        }
        if f.mutable && descriptor.accessor_for(&f.name, AccessorKind::Set).is_none() {
            let name = fresh(format!("set_{}", f.name), &mut taken);
            out.push(MethodDescriptor {
                accessor: Some(Accessor {
                    field: f.name.clone(),
                    kind: AccessorKind::Set,
                }),
                ..MethodDescriptor::new(name, &[f.type_name.as_str()], builtin::VOID)
            });
        }
    }
    out
}

fn accessor_binding(acc: &Accessor) -> Binding {
    let field = acc.field.clone();
    match acc.kind {
        AccessorKind::Get => Arc::new(move |obj: &ObjectRef, _: &[Value]| Ok(obj.get(&field))),
        AccessorKind::Set => Arc::new(move |obj: &ObjectRef, args: &[Value]| {
            obj.set(&field, args[0].clone());
            Ok(Value::Null)
        }),
    }
}

/// Server-side binding of one deployed service.
pub struct Skeleton {
    pub guid: Guid,
    pub name: Option<String>,
    /// Deployment interface with inherited methods flattened in.
    pub interface: Arc<TypeDescriptor>,
    pub concrete: Arc<TypeDescriptor>,
    pub object: ObjectRef,
    table: MethodTable,
    seq: u64,
}

impl Skeleton {
    pub fn service_object(&self) -> &ObjectRef {
        &self.object
    }

    /// Deployment order within the node.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Runs an interface method on the service object. Application failures,
    /// including panics, come back as [`Error::Application`].
    pub fn invoke_local(&self, method: &str, args: &[Value]) -> Result<Value> {
        let desc = self.interface_method(method, args.len())?;
        check_args(desc, args)?;
        let binding = self
            .table
            .get(&desc.key())
            .ok_or_else(|| Error::RegistryIntegrity(format!("no binding for {}", desc.key())))?;
        match catch_unwind(AssertUnwindSafe(|| binding(&self.object, args))) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(fault)) => Err(Error::Application {
                class: fault.class,
                message: fault.message,
            }),
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                Err(Error::Application {
                    class: "panic".into(),
                    message,
                })
            }
        }
    }

    pub fn return_type_of(&self, method: &str) -> Result<&str> {
        self.interface
            .methods
            .iter()
            .find(|m| m.name == method)
            .map(|m| m.return_type.as_str())
            .ok_or_else(|| self.unknown(method))
    }

    pub fn interface_method(&self, method: &str, arity: usize) -> Result<&MethodDescriptor> {
        if let Some(m) = self.interface.method(method, arity) {
            return Ok(m);
        }
        if self.interface.methods_named(method).next().is_some() {
            return Err(Error::ArgumentMismatch {
                method: method.to_owned(),
                reason: format!("no overload takes {arity} argument(s)"),
            });
        }
        Err(self.unknown(method))
    }

    fn unknown(&self, method: &str) -> Error {
        Error::UnknownMethod {
            interface: self.interface.type_name.clone(),
            method: method.to_owned(),
        }
    }
}

impl fmt::Debug for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Skeleton")
            .field("guid", &self.guid)
            .field("name", &self.name)
            .field("interface", &self.interface.type_name)
            .field("object", &self.object)
            .finish()
    }
}

fn check_args(desc: &MethodDescriptor, args: &[Value]) -> Result<()> {
    for (i, (param, arg)) in desc.params.iter().zip(args).enumerate() {
        let ok = match param.as_str() {
            builtin::I64 => matches!(arg, Value::Int(_)),
            builtin::F64 => matches!(arg, Value::Float(_)),
            builtin::BOOL => matches!(arg, Value::Bool(_)),
            builtin::STRING => matches!(arg, Value::Str(_) | Value::Null),
            builtin::LIST => matches!(arg, Value::Seq(_) | Value::Null),
            builtin::ANY => true,
            _ => matches!(arg, Value::Object(_) | Value::Remote(_) | Value::Null),
        };
        if !ok {
            return Err(Error::ArgumentMismatch {
                method: desc.name.clone(),
                reason: format!("argument {i} is {arg:?}, expected {param}"),
            });
        }
    }
    Ok(())
}

/// How deploy picks the deployment interface.
#[derive(Clone, Copy, Debug)]
pub enum InterfaceChoice<'a> {
    /// A registered class or interface the object must comply with.
    Named(&'a str),
    /// The object's concrete type, public methods only.
    ConcretePublic,
    /// The object's concrete type, every method.
    ConcreteAll,
}

#[derive(Default)]
struct ServiceMap {
    by_guid: HashMap<Guid, Arc<Skeleton>>,
    by_name: HashMap<String, Arc<Skeleton>>,
    by_object: HashMap<usize, Vec<Arc<Skeleton>>>,
}

enum GuidSource {
    Random(Mutex<StdRng>),
}

/// Types plus the service map of one node.
pub struct Registry {
    types: RwLock<HashMap<String, Arc<RegisteredType>>>,
    services: RwLock<ServiceMap>,
    guids: GuidSource,
    next_type: AtomicU32,
    next_seq: AtomicU64,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    /// GUIDs from an OS-seeded CSPRNG.
    pub fn new() -> Self {
        Self::with_rng(StdRng::from_os_rng())
    }

    /// Deterministic GUID stream for reproducible transcripts.
    pub fn seeded(seed: u64) -> Self {
        Self::with_rng(StdRng::seed_from_u64(seed))
    }

    fn with_rng(rng: StdRng) -> Self {
        Registry {
            types: RwLock::new(HashMap::new()),
            services: RwLock::new(ServiceMap::default()),
            guids: GuidSource::Random(Mutex::new(rng)),
            next_type: AtomicU32::new(1),
            next_seq: AtomicU64::new(0),
        }
    }

    fn fresh_guid(&self) -> Guid {
        match &self.guids {
            GuidSource::Random(rng) => Guid::from_bytes(rng.lock().random()),
        }
    }

    pub fn register_type(&self, descriptor: TypeDescriptor, table: MethodTable) -> Result<TypeId> {
        self.register_with(descriptor, table, None, None)
    }

    pub fn register_with(
        &self,
        mut descriptor: TypeDescriptor,
        mut table: MethodTable,
        constructor: Option<Constructor>,
        repr: Option<ReprFn>,
    ) -> Result<TypeId> {
        descriptor.validate()?;
        let mut types = self.types.write();
        let name = descriptor.type_name.clone();
        if types.contains_key(&name) || builtin::is_builtin(&name) {
            return Err(Error::DuplicateType(name));
        }
        let invalid = |reason: String| Error::InvalidDescriptor {
            type_name: name.clone(),
            reason,
        };
        let resolvable = |t: &str| builtin::is_builtin(t) || t == name || types.contains_key(t);
        for f in &descriptor.fields {
            if !resolvable(&f.type_name) || f.type_name == builtin::VOID {
                return Err(invalid(format!("field `{}` has unknown type `{}`", f.name, f.type_name)));
            }
        }
        for m in &descriptor.methods {
            if let Some(t) = m.params.iter().chain([&m.return_type]).find(|t| !resolvable(t)) {
                return Err(invalid(format!("method `{}` uses unknown type `{t}`", m.name)));
            }
        }
        let mut fields = descriptor.fields.clone();
        if let Some(parent) = &descriptor.supertype {
            let parent = types
                .get(parent)
                .ok_or_else(|| invalid(format!("supertype `{parent}` is not registered")))?;
            for f in &parent.plan.fields {
                if descriptor.field(&f.name).is_some() {
                    return Err(invalid(format!("field `{}` shadows an inherited field", f.name)));
                }
                fields.push(f.clone());
            }
        }
        fields.sort_by(|a, b| a.name.cmp(&b.name));

        for acc in synthesize_accessors(&descriptor) {
            if !descriptor.is_interface {
                let spec = acc.accessor.as_ref().expect("synthesized accessor");
                table.bindings.insert(acc.key(), accessor_binding(spec));
            }
            descriptor.methods.push(acc);
        }
        if !descriptor.is_interface {
            for m in &descriptor.methods {
                if !table.contains(&m.key()) {
                    if let Some(acc) = &m.accessor {
                        table.bindings.insert(m.key(), accessor_binding(acc));
                        continue;
                    }
                    return Err(Error::MissingBinding {
                        type_name: name.clone(),
                        method: m.key().to_string(),
                    });
                }
            }
        }

        let id = TypeId(self.next_type.fetch_add(1, Ordering::Relaxed));
        let plan = Arc::new(FieldPlan {
            type_name: name.clone(),
            fields,
        });
        types.insert(
            name,
            Arc::new(RegisteredType {
                id,
                descriptor: Arc::new(descriptor),
                table,
                plan,
                constructor,
                repr,
            }),
        );
        Ok(id)
    }

    pub fn registered(&self, type_name: &str) -> Option<Arc<RegisteredType>> {
        self.types.read().get(type_name).cloned()
    }

    fn require(&self, type_name: &str) -> Result<Arc<RegisteredType>> {
        self.registered(type_name)
            .ok_or_else(|| Error::UnknownType(type_name.to_owned()))
    }

    /// Builds an instance through the type's registered constructor, or
    /// populates declared fields positionally when none was registered.
    pub fn construct(&self, type_name: &str, args: &[Value]) -> Result<ObjectRef> {
        let ty = self.require(type_name)?;
        if ty.descriptor.is_interface {
            return Err(Error::InvalidDescriptor {
                type_name: type_name.to_owned(),
                reason: "interfaces cannot be instantiated".into(),
            });
        }
        if let Some(ctor) = &ty.constructor {
            return ctor(args).map_err(|f| Error::Application {
                class: f.class,
                message: f.message,
            });
        }
        if args.len() > ty.descriptor.fields.len() {
            return Err(Error::ArgumentMismatch {
                method: format!("{type_name}::new"),
                reason: format!("{} arguments for {} fields", args.len(), ty.descriptor.fields.len()),
            });
        }
        let obj = Object::new(type_name, ty.plan.fields.iter().map(|f| (f.name.clone(), Value::Null)));
        for (f, v) in ty.descriptor.fields.iter().zip(args) {
            obj.set(&f.name, v.clone());
        }
        Ok(obj)
    }

    /// All methods reachable on `type_name`, own declarations shadowing
    /// inherited ones, each with the binding that implements it.
    fn flattened(&self, type_name: &str) -> Result<Vec<(MethodDescriptor, Option<Binding>)>> {
        let mut out: Vec<(MethodDescriptor, Option<Binding>)> = Vec::new();
        for desc in supertype_chain(type_name, self)? {
            let ty = self.require(&desc.type_name)?;
            for m in &ty.descriptor.methods {
                if out.iter().all(|(seen, _)| seen.key() != m.key()) {
                    out.push((m.clone(), ty.table.get(&m.key()).cloned()));
                }
            }
        }
        Ok(out)
    }

    /// Deploys with the default interface (concrete type, public methods).
    pub fn deploy(&self, object: &ObjectRef, interface: Option<&str>, name: Option<&str>) -> Result<Arc<Skeleton>> {
        let choice = interface.map_or(InterfaceChoice::ConcretePublic, InterfaceChoice::Named);
        self.deploy_with(object, choice, name)
    }

    pub fn deploy_with(&self, object: &ObjectRef, choice: InterfaceChoice<'_>, name: Option<&str>) -> Result<Arc<Skeleton>> {
        let concrete = self.require(object.type_name())?;
        if concrete.descriptor.is_interface {
            return Err(Error::UnknownType(object.type_name().to_owned()));
        }
        let available = self.flattened(object.type_name())?;

        let (mut iface, wanted): (TypeDescriptor, Vec<MethodDescriptor>) = match choice {
            InterfaceChoice::Named(iface_name) => {
                let iface = self.require(iface_name)?;
                let wanted = self.flattened(iface_name)?.into_iter().map(|(m, _)| m).collect();
                ((*iface.descriptor).clone(), wanted)
            }
            InterfaceChoice::ConcretePublic | InterfaceChoice::ConcreteAll => {
                let all = matches!(choice, InterfaceChoice::ConcreteAll);
                let wanted = available
                    .iter()
                    .map(|(m, _)| m.clone())
                    .filter(|m| all || m.visibility == Visibility::Public)
                    .collect();
                ((*concrete.descriptor).clone(), wanted)
            }
        };

        let mut table = MethodTable::new();
        for m in &wanted {
            let found = available.iter().find(|(c, _)| c.same_signature(m));
            match found {
                Some((_, Some(binding))) => {
                    table.bindings.insert(m.key(), binding.clone());
                }
                _ => {
                    return Err(Error::NonCompliant {
                        concrete: object.type_name().to_owned(),
                        interface: iface.type_name.clone(),
                        reason: format!("no method matching {}({}) -> {}", m.name, m.params.join(", "), m.return_type),
                    })
                }
            }
        }
        iface.methods = wanted;

        let mut services = self.services.write();
        if let Some(n) = name {
            if n.is_empty() {
                return Err(Error::NotFound(String::new()));
            }
            if services.by_name.contains_key(n) {
                return Err(Error::NameInUse(n.to_owned()));
            }
        }
        let guid = self.fresh_guid();
        if services.by_guid.contains_key(&guid) {
            return Err(Error::DuplicateGuid(guid));
        }
        let skeleton = Arc::new(Skeleton {
            guid,
            name: name.map(str::to_owned),
            interface: Arc::new(iface),
            concrete: concrete.descriptor.clone(),
            object: object.clone(),
            table,
            seq: self.next_seq.fetch_add(1, Ordering::Relaxed),
        });
        services.by_guid.insert(guid, skeleton.clone());
        if let Some(n) = name {
            services.by_name.insert(n.to_owned(), skeleton.clone());
        }
        services
            .by_object
            .entry(Object::identity(object))
            .or_default()
            .push(skeleton.clone());
        Ok(skeleton)
    }

    /// Exact, case-sensitive match on service name, then on GUID text.
    pub fn lookup(&self, name_or_guid: &str) -> Result<Arc<Skeleton>> {
        let services = self.services.read();
        if let Some(s) = services.by_name.get(name_or_guid) {
            return Ok(s.clone());
        }
        name_or_guid
            .parse::<Guid>()
            .ok()
            .and_then(|g| services.by_guid.get(&g).cloned())
            .ok_or_else(|| Error::NotFound(name_or_guid.to_owned()))
    }

    pub fn by_guid(&self, guid: &Guid) -> Option<Arc<Skeleton>> {
        self.services.read().by_guid.get(guid).cloned()
    }

    /// Every deployment of this instance, oldest first.
    pub fn deployments_of(&self, object: &ObjectRef) -> Vec<Arc<Skeleton>> {
        self.services
            .read()
            .by_object
            .get(&Object::identity(object))
            .cloned()
            .unwrap_or_default()
    }

    /// Services in deployment order.
    pub fn services(&self) -> Vec<Arc<Skeleton>> {
        let mut all: Vec<_> = self.services.read().by_guid.values().cloned().collect();
        all.sort_by_key(|s| s.seq);
        all
    }

    pub fn service_count(&self) -> usize {
        self.services.read().by_guid.len()
    }

    pub fn named_service_count(&self) -> usize {
        self.services.read().by_name.len()
    }

    pub fn undeploy(&self, guid: &Guid) -> Option<Arc<Skeleton>> {
        let mut services = self.services.write();
        let skeleton = services.by_guid.remove(guid)?;
        if let Some(n) = &skeleton.name {
            services.by_name.remove(n);
        }
        let key = Object::identity(&skeleton.object);
        if let Some(list) = services.by_object.get_mut(&key) {
            list.retain(|s| s.guid != *guid);
            if list.is_empty() {
                services.by_object.remove(&key);
            }
        }
        Some(skeleton)
    }

    /// `<type>@<guid prefix>` unless the type registered its own repr.
    pub fn repr(&self, skeleton: &Skeleton) -> String {
        match self.registered(skeleton.object.type_name()).and_then(|t| t.repr.clone()) {
            Some(f) => f(&skeleton.object),
            None => format!("{}@{}", skeleton.object.type_name(), &skeleton.guid.to_hex()[..8]),
        }
    }
}

impl TypeCatalog for Registry {
    fn descriptor(&self, type_name: &str) -> Option<Arc<TypeDescriptor>> {
        self.types.read().get(type_name).map(|t| t.descriptor.clone())
    }

    fn field_plan(&self, type_name: &str) -> Option<Arc<FieldPlan>> {
        self.types.read().get(type_name).map(|t| t.plan.clone())
    }
}
