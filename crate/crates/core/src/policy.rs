//! Transmission policy: five rule stores and the precedence resolution that
//! decides, per transmitted value, between by-value and by-reference.
//!
//! Precedence, highest first:
//!
//! 1. param (non-overridable)
//! 2. method (non-overridable)
//! 3. class (non-overridable)
//! 4. param (overridable)
//! 5. method (overridable)
//! 6. class (overridable)
//! 7. default: by-reference towards other nodes, by-value towards plain clients
//!
//! For return values the return rule occupies the method levels and no param
//! rule applies.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::error::{Error, Result};
use crate::model::{
    builtin, supertype_chain, Depth, PeerKind, PolicyKind, RuleId, RuleKind, TransmissionDecision, TypeCatalog,
    Winner,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    Class {
        type_name: String,
        policy: PolicyKind,
        overridable: bool,
        subtypes: bool,
    },
    Method {
        type_name: String,
        method: String,
        policy: PolicyKind,
        depth: Depth,
        overridable: bool,
    },
    Return {
        type_name: String,
        method: String,
        policy: PolicyKind,
        overridable: bool,
    },
    Param {
        type_name: String,
        method: String,
        index: usize,
        policy: PolicyKind,
        depth: Depth,
        overridable: bool,
    },
    CacheField {
        type_name: String,
        field: String,
    },
}

impl Rule {
    pub fn kind(&self) -> RuleKind {
        match self {
            Rule::Class { .. } => RuleKind::Class,
            Rule::Method { .. } => RuleKind::Method,
            Rule::Return { .. } => RuleKind::Return,
            Rule::Param { .. } => RuleKind::Param,
            Rule::CacheField { .. } => RuleKind::CacheField,
        }
    }

    pub fn type_name(&self) -> &str {
        match self {
            Rule::Class { type_name, .. }
            | Rule::Method { type_name, .. }
            | Rule::Return { type_name, .. }
            | Rule::Param { type_name, .. }
            | Rule::CacheField { type_name, .. } => type_name,
        }
    }

    /// Deterministic store key: `type[#method[#index]]`.
    pub fn key(&self) -> String {
        match self {
            Rule::Class { type_name, .. } | Rule::CacheField { type_name, .. } => type_name.clone(),
            Rule::Method { type_name, method, .. } | Rule::Return { type_name, method, .. } => {
                method_key(type_name, method)
            }
            Rule::Param {
                type_name, method, index, ..
            } => param_key(type_name, method, *index),
        }
    }

    fn overridable(&self) -> bool {
        match self {
            Rule::Class { overridable, .. }
            | Rule::Method { overridable, .. }
            | Rule::Return { overridable, .. }
            | Rule::Param { overridable, .. } => *overridable,
            Rule::CacheField { .. } => true,
        }
    }

    fn decision(&self, winner: Winner) -> TransmissionDecision {
        let (policy, depth) = match self {
            Rule::Class { policy, .. } | Rule::Return { policy, .. } => (*policy, Depth::Unbounded),
            Rule::Method { policy, depth, .. } | Rule::Param { policy, depth, .. } => (*policy, *depth),
            Rule::CacheField { .. } => unreachable!("cache rules never decide transmission"),
        };
        match policy {
            PolicyKind::ByValue => TransmissionDecision::by_value(depth, winner),
            PolicyKind::ByReference => TransmissionDecision::by_reference(winner),
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = |what: &str, s: &str| {
            if s.trim().is_empty() {
                Err(Error::MalformedRule(format!("empty {what}")))
            } else {
                Ok(())
            }
        };
        empty("type name", self.type_name())?;
        match self {
            Rule::Method { method, .. } | Rule::Return { method, .. } | Rule::Param { method, .. } => {
                empty("method name", method)
            }
            Rule::CacheField { field, .. } => empty("field name", field),
            Rule::Class { .. } => Ok(()),
        }
    }
}

fn method_key(type_name: &str, method: &str) -> String {
    format!("{type_name}#{method}")
}

fn param_key(type_name: &str, method: &str, index: usize) -> String {
    format!("{type_name}#{method}#{index}")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyRule {
    pub id: RuleId,
    pub rule: Rule,
}

/// One live rule per overridability tier.
#[derive(Clone, Debug, Default)]
struct Slot {
    fixed: Option<PolicyRule>,
    overridable: Option<PolicyRule>,
}

impl Slot {
    fn tier_mut(&mut self, overridable: bool) -> &mut Option<PolicyRule> {
        if overridable {
            &mut self.overridable
        } else {
            &mut self.fixed
        }
    }

    fn rules(&self) -> impl Iterator<Item = &PolicyRule> {
        self.fixed.iter().chain(self.overridable.iter())
    }

    fn is_empty(&self) -> bool {
        self.fixed.is_none() && self.overridable.is_none()
    }
}

#[derive(Clone, Debug, Default)]
struct RuleStore {
    class: HashMap<String, Slot>,
    method: HashMap<String, Slot>,
    ret: HashMap<String, Slot>,
    param: HashMap<String, Slot>,
    cache: HashMap<String, BTreeMap<String, PolicyRule>>,
}

impl RuleStore {
    fn slots(&mut self, kind: RuleKind) -> &mut HashMap<String, Slot> {
        match kind {
            RuleKind::Class => &mut self.class,
            RuleKind::Method => &mut self.method,
            RuleKind::Return => &mut self.ret,
            RuleKind::Param => &mut self.param,
            RuleKind::CacheField => unreachable!("cache store is keyed by field"),
        }
    }

    /// Installs a rule and returns the one it displaced, if any.
    fn install(&mut self, rule: PolicyRule) -> Option<PolicyRule> {
        let key = rule.rule.key();
        if let Rule::CacheField { field, .. } = &rule.rule {
            let field = field.clone();
            return self.cache.entry(key).or_default().insert(field, rule);
        }
        let ov = rule.rule.overridable();
        self.slots(rule.rule.kind()).entry(key).or_default().tier_mut(ov).replace(rule)
    }

    fn remove(&mut self, id: RuleId) -> Option<PolicyRule> {
        for kind in [RuleKind::Class, RuleKind::Method, RuleKind::Return, RuleKind::Param] {
            let slots = self.slots(kind);
            let mut found = None;
            for (key, slot) in slots.iter_mut() {
                for tier in [&mut slot.fixed, &mut slot.overridable] {
                    if tier.as_ref().is_some_and(|r| r.id == id) {
                        found = Some((key.clone(), tier.take()));
                    }
                }
                if found.is_some() {
                    break;
                }
            }
            if let Some((key, rule)) = found {
                if slots.get(&key).is_some_and(Slot::is_empty) {
                    slots.remove(&key);
                }
                return rule;
            }
        }
        let mut found = None;
        for (key, fields) in self.cache.iter_mut() {
            if let Some(field) = fields.iter().find(|(_, r)| r.id == id).map(|(f, _)| f.clone()) {
                found = Some((key.clone(), fields.remove(&field)));
                break;
            }
        }
        let (key, rule) = found?;
        if self.cache.get(&key).is_some_and(BTreeMap::is_empty) {
            self.cache.remove(&key);
        }
        rule
    }

    fn all(&self) -> Vec<PolicyRule> {
        let mut out: Vec<PolicyRule> = [&self.class, &self.method, &self.ret, &self.param]
            .into_iter()
            .flat_map(|m| m.values().flat_map(Slot::rules))
            .chain(self.cache.values().flat_map(BTreeMap::values))
            .cloned()
            .collect();
        out.sort_by_key(|r| r.id);
        out
    }
}

/// Position of a transmitted value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Argument(usize),
    ReturnValue,
}

/// Everything resolution looks at. `declared_type` is the owner of the
/// invoked method (the deployment interface); `actual_type` is the runtime
/// type of the transmitted value.
#[derive(Clone, Copy, Debug)]
pub struct CallContext<'a> {
    pub role: Role,
    pub declared_type: &'a str,
    pub method: &'a str,
    pub actual_type: &'a str,
    pub peer: PeerKind,
}

/// Thread-safe rule manager. Resolution reads a consistent snapshot of all
/// five stores under one read lock.
pub struct PolicyManager {
    store: RwLock<RuleStore>,
    next_id: AtomicU64,
    probes: AtomicU64,
    catalog: Option<Arc<dyn TypeCatalog>>,
}

impl Default for PolicyManager {
    fn default() -> Self {
        Self::new()
    }
}

impl PolicyManager {
    pub fn new() -> Self {
        PolicyManager {
            store: RwLock::new(RuleStore::default()),
            next_id: AtomicU64::new(1),
            probes: AtomicU64::new(0),
            catalog: None,
        }
    }

    /// Rules naming a type the catalog knows are validated on insertion.
    pub fn with_catalog(catalog: Arc<dyn TypeCatalog>) -> Self {
        PolicyManager {
            catalog: Some(catalog),
            ..Self::new()
        }
    }

    pub fn set_class_policy(&self, type_name: &str, policy: PolicyKind, overridable: bool, subtypes: bool) -> Result<RuleId> {
        self.install(Rule::Class {
            type_name: type_name.into(),
            policy,
            overridable,
            subtypes,
        })
    }

    pub fn set_method_policy(
        &self,
        type_name: &str,
        method: &str,
        policy: PolicyKind,
        depth: Depth,
        overridable: bool,
    ) -> Result<RuleId> {
        self.install(Rule::Method {
            type_name: type_name.into(),
            method: method.into(),
            policy,
            depth,
            overridable,
        })
    }

    pub fn set_return_value_policy(&self, type_name: &str, method: &str, policy: PolicyKind, overridable: bool) -> Result<RuleId> {
        self.install(Rule::Return {
            type_name: type_name.into(),
            method: method.into(),
            policy,
            overridable,
        })
    }

    pub fn set_param_policy(
        &self,
        type_name: &str,
        method: &str,
        index: usize,
        policy: PolicyKind,
        depth: Depth,
        overridable: bool,
    ) -> Result<RuleId> {
        self.install(Rule::Param {
            type_name: type_name.into(),
            method: method.into(),
            index,
            policy,
            depth,
            overridable,
        })
    }

    pub fn set_field_to_be_cached(&self, type_name: &str, field: &str) -> Result<RuleId> {
        self.install(Rule::CacheField {
            type_name: type_name.into(),
            field: field.into(),
        })
    }

    /// Param rule that is withdrawn when the guard drops, restoring whatever
    /// rule it displaced.
    pub fn scoped_param_policy(
        &self,
        type_name: &str,
        method: &str,
        index: usize,
        policy: PolicyKind,
        depth: Depth,
        overridable: bool,
    ) -> Result<ScopedRule<'_>> {
        let rule = Rule::Param {
            type_name: type_name.into(),
            method: method.into(),
            index,
            policy,
            depth,
            overridable,
        };
        let (id, displaced) = self.install_inner(rule)?;
        Ok(ScopedRule {
            manager: self,
            id,
            displaced,
        })
    }

    pub fn install(&self, rule: Rule) -> Result<RuleId> {
        self.install_inner(rule).map(|(id, _)| id)
    }

    fn install_inner(&self, rule: Rule) -> Result<(RuleId, Option<PolicyRule>)> {
        rule.validate()?;
        self.check_against_catalog(&rule)?;
        let id = RuleId(self.next_id.fetch_add(1, Ordering::Relaxed));
        let displaced = self.store.write().install(PolicyRule { id, rule });
        Ok((id, displaced))
    }

    fn check_against_catalog(&self, rule: &Rule) -> Result<()> {
        let Some(catalog) = &self.catalog else {
            return Ok(());
        };
        let Some(_) = catalog.descriptor(rule.type_name()) else {
            return Ok(());
        };
        let chain = supertype_chain(rule.type_name(), catalog.as_ref())?;
        let arities = |method: &str| -> Vec<usize> {
            chain
                .iter()
                .flat_map(|t| t.methods_named(method).map(|m| m.arity()).collect::<Vec<_>>())
                .collect()
        };
        match rule {
            Rule::Method { method, .. } | Rule::Return { method, .. } if arities(method).is_empty() => Err(
                Error::MalformedRule(format!("`{}` has no method `{method}`", rule.type_name())),
            ),
            Rule::Param { method, index, .. } => {
                let arities = arities(method);
                if arities.is_empty() {
                    Err(Error::MalformedRule(format!("`{}` has no method `{method}`", rule.type_name())))
                } else if arities.iter().all(|a| index >= a) {
                    Err(Error::MalformedRule(format!("`{method}` has no parameter {index}")))
                } else {
                    Ok(())
                }
            }
            Rule::CacheField { type_name, field } => {
                let known = catalog.field_plan(type_name).is_some_and(|p| p.field(field).is_some());
                if known {
                    Ok(())
                } else {
                    Err(Error::MalformedRule(format!("`{type_name}` has no field `{field}`")))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn remove_rule(&self, id: RuleId) -> bool {
        self.store.write().remove(id).is_some()
    }

    pub fn clear(&self) {
        *self.store.write() = RuleStore::default();
    }

    /// Every live rule, oldest first.
    pub fn rules(&self) -> Vec<PolicyRule> {
        self.store.read().all()
    }

    pub fn rule(&self, id: RuleId) -> Option<PolicyRule> {
        self.rules().into_iter().find(|r| r.id == id)
    }

    pub fn get_class_policy(&self, type_name: &str) -> Vec<PolicyRule> {
        self.store.read().class.get(type_name).map(|s| s.rules().cloned().collect()).unwrap_or_default()
    }

    pub fn get_method_policy(&self, type_name: &str, method: &str) -> Vec<PolicyRule> {
        let key = method_key(type_name, method);
        self.store.read().method.get(&key).map(|s| s.rules().cloned().collect()).unwrap_or_default()
    }

    pub fn get_return_value_policy(&self, type_name: &str, method: &str) -> Vec<PolicyRule> {
        let key = method_key(type_name, method);
        self.store.read().ret.get(&key).map(|s| s.rules().cloned().collect()).unwrap_or_default()
    }

    pub fn get_param_policy(&self, type_name: &str, method: &str, index: usize) -> Vec<PolicyRule> {
        let key = param_key(type_name, method, index);
        self.store.read().param.get(&key).map(|s| s.rules().cloned().collect()).unwrap_or_default()
    }

    /// Names of fields cached for proxies of `type_name`.
    pub fn get_fields_to_be_cached(&self, type_name: &str) -> Vec<String> {
        self.store.read().cache.get(type_name).map(|m| m.keys().cloned().collect()).unwrap_or_default()
    }

    /// Number of store lookups performed so far.
    pub fn probe_count(&self) -> u64 {
        self.probes.load(Ordering::Relaxed)
    }

    fn probe<'s>(&self, map: &'s HashMap<String, Slot>, key: &str) -> Option<&'s Slot> {
        self.probes.fetch_add(1, Ordering::Relaxed);
        map.get(key)
    }

    /// Decision of the highest-priority applicable rule. Total: unknown types
    /// simply have no ancestors to inherit class rules from.
    pub fn resolve(&self, ctx: &CallContext<'_>, catalog: &dyn TypeCatalog) -> TransmissionDecision {
        if builtin::is_primitive(ctx.actual_type) {
            return TransmissionDecision::by_value(Depth::Unbounded, Winner::Primitive);
        }
        let store = self.store.read();
        let param = match ctx.role {
            Role::Argument(i) => self.probe(&store.param, &param_key(ctx.declared_type, ctx.method, i)),
            Role::ReturnValue => None,
        };
        let method_store = match ctx.role {
            Role::Argument(_) => &store.method,
            Role::ReturnValue => &store.ret,
        };
        let method = self.probe(method_store, &method_key(ctx.declared_type, ctx.method));
        let (class_fixed, class_ov) = self.class_rules(&store, ctx.actual_type, catalog);

        let candidates = [
            (1, param.and_then(|s| s.fixed.as_ref())),
            (2, method.and_then(|s| s.fixed.as_ref())),
            (3, class_fixed),
            (4, param.and_then(|s| s.overridable.as_ref())),
            (5, method.and_then(|s| s.overridable.as_ref())),
            (6, class_ov),
        ];
        for (level, rule) in candidates {
            if let Some(r) = rule {
                return r.rule.decision(Winner::Rule {
                    id: r.id,
                    kind: r.rule.kind(),
                    level,
                });
            }
        }
        default_decision(ctx.peer)
    }

    /// Class rules only (levels 3, 6 and the default). Used for values that
    /// travel outside a method call, such as cached-field snapshots.
    pub fn resolve_class_only(&self, actual_type: &str, peer: PeerKind, catalog: &dyn TypeCatalog) -> TransmissionDecision {
        if builtin::is_primitive(actual_type) {
            return TransmissionDecision::by_value(Depth::Unbounded, Winner::Primitive);
        }
        let store = self.store.read();
        let (fixed, ov) = self.class_rules(&store, actual_type, catalog);
        for (level, rule) in [(3, fixed), (6, ov)] {
            if let Some(r) = rule {
                return r.rule.decision(Winner::Rule {
                    id: r.id,
                    kind: RuleKind::Class,
                    level,
                });
            }
        }
        default_decision(peer)
    }

    /// Most-derived applicable class rule per tier. Ancestor rules apply only
    /// when they were set with `subtypes`.
    fn class_rules<'s>(
        &self,
        store: &'s RuleStore,
        actual_type: &str,
        catalog: &dyn TypeCatalog,
    ) -> (Option<&'s PolicyRule>, Option<&'s PolicyRule>) {
        let chain: Vec<String> = match supertype_chain(actual_type, catalog) {
            Ok(chain) => chain.iter().map(|t| t.type_name.clone()).collect(),
            Err(_) => vec![actual_type.to_owned()],
        };
        let mut fixed = None;
        let mut ov = None;
        for (distance, name) in chain.iter().enumerate() {
            if fixed.is_some() && ov.is_some() {
                break;
            }
            let Some(slot) = self.probe(&store.class, name) else {
                continue;
            };
            let applies = |r: &&PolicyRule| distance == 0 || matches!(r.rule, Rule::Class { subtypes: true, .. });
            fixed = fixed.or(slot.fixed.as_ref().filter(applies));
            ov = ov.or(slot.overridable.as_ref().filter(applies));
        }
        (fixed, ov)
    }

    // -- persistence -------------------------------------------------------

    /// Installs every rule of a policy document, in document order. The whole
    /// document is validated before anything is installed.
    pub fn load_policy_file(&self, document: &str) -> Result<Vec<RuleId>> {
        let rules = parse_policy_document(document)?;
        for (line, element, rule) in &rules {
            rule.validate()
                .and_then(|_| self.check_against_catalog(rule))
                .map_err(|e| Error::PolicyFile {
                    line: *line,
                    element: element.clone(),
                    message: e.to_string(),
                })?;
        }
        rules.into_iter().map(|(_, _, rule)| self.install(rule)).collect()
    }

    /// Canonical document of the live rules, oldest first.
    pub fn save_policy_file(&self) -> String {
        let mut out = String::from("<policies>\n");
        for r in self.rules() {
            out.push_str("  ");
            out.push_str(&rule_element(&r.rule));
            out.push('\n');
        }
        out.push_str("</policies>\n");
        out
    }
}

fn default_decision(peer: PeerKind) -> TransmissionDecision {
    match peer {
        PeerKind::Rrt => TransmissionDecision::by_reference(Winner::Default),
        PeerKind::Plain => TransmissionDecision::by_value(Depth::Unbounded, Winner::Default),
    }
}

/// Withdraws a temporary rule on drop.
pub struct ScopedRule<'a> {
    manager: &'a PolicyManager,
    id: RuleId,
    displaced: Option<PolicyRule>,
}

impl ScopedRule<'_> {
    pub fn id(&self) -> RuleId {
        self.id
    }
}

impl Drop for ScopedRule<'_> {
    fn drop(&mut self) {
        let mut store = self.manager.store.write();
        if store.remove(self.id).is_some() {
            if let Some(prev) = self.displaced.take() {
                store.install(prev);
            }
        }
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn rule_element(rule: &Rule) -> String {
    let mut s = String::new();
    let e = escape_attr;
    match rule {
        Rule::Class {
            type_name,
            policy,
            overridable,
            subtypes,
        } => {
            let _ = write!(
                s,
                r#"<class name="{}" policy="{policy}" overridable="{overridable}" subclasses="{subtypes}"/>"#,
                e(type_name)
            );
        }
        Rule::Method {
            type_name,
            method,
            policy,
            depth,
            overridable,
        } => {
            let _ = write!(
                s,
                r#"<method class="{}" name="{}" policy="{policy}" depth="{depth}" overridable="{overridable}"/>"#,
                e(type_name),
                e(method)
            );
        }
        Rule::Return {
            type_name,
            method,
            policy,
            overridable,
        } => {
            let _ = write!(
                s,
                r#"<return class="{}" method="{}" policy="{policy}" overridable="{overridable}"/>"#,
                e(type_name),
                e(method)
            );
        }
        Rule::Param {
            type_name,
            method,
            index,
            policy,
            depth,
            overridable,
        } => {
            let _ = write!(
                s,
                r#"<param class="{}" method="{}" index="{index}" policy="{policy}" depth="{depth}" overridable="{overridable}"/>"#,
                e(type_name),
                e(method)
            );
        }
        Rule::CacheField { type_name, field } => {
            let _ = write!(s, r#"<cache class="{}" field="{}"/>"#, e(type_name), e(field));
        }
    }
    s
}

type ParsedRule = (u32, String, Rule);

fn parse_policy_document(document: &str) -> Result<Vec<ParsedRule>> {
    let doc = roxmltree::Document::parse(document).map_err(|e| Error::PolicyFile {
        line: e.pos().row,
        element: "?".into(),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "policies" {
        return Err(Error::PolicyFile {
            line: doc.text_pos_at(root.range().start).row,
            element: root.tag_name().name().into(),
            message: "root element must be <policies>".into(),
        });
    }
    let mut out = Vec::new();
    for node in root.children() {
        if node.is_text() && node.text().is_some_and(|t| t.trim().is_empty()) || node.is_comment() {
            continue;
        }
        let line = doc.text_pos_at(node.range().start).row;
        let element = node.tag_name().name().to_owned();
        let fail = |message: String| Error::PolicyFile {
            line,
            element: if element.is_empty() { "#text".into() } else { element.clone() },
            message,
        };
        if !node.is_element() {
            return Err(fail("unexpected text".into()));
        }
        let allowed: &[&str] = match element.as_str() {
            "class" => &["name", "policy", "overridable", "subclasses"],
            "method" => &["class", "name", "policy", "depth", "overridable"],
            "return" => &["class", "method", "policy", "overridable"],
            "param" => &["class", "method", "index", "policy", "depth", "overridable"],
            "cache" => &["class", "field"],
            other => return Err(fail(format!("unknown rule element <{other}>"))),
        };
        if let Some(a) = node.attributes().find(|a| !allowed.contains(&a.name())) {
            return Err(fail(format!("unexpected attribute `{}`", a.name())));
        }
        if node.has_children() {
            return Err(fail("rule elements must be empty".into()));
        }
        let attr = |name: &str| -> Result<String> {
            node.attribute(name)
                .map(str::to_owned)
                .ok_or_else(|| fail(format!("missing attribute `{name}`")))
        };
        let flag = |name: &str, default: Option<bool>| -> Result<bool> {
            match node.attribute(name) {
                Some("true") => Ok(true),
                Some("false") => Ok(false),
                Some(other) => Err(fail(format!("`{name}` must be true or false, got `{other}`"))),
                None => default.ok_or_else(|| fail(format!("missing attribute `{name}`"))),
            }
        };
        let policy = || -> Result<PolicyKind> { attr("policy")?.parse().map_err(|e: Error| fail(e.to_string())) };
        let depth = || -> Result<Depth> {
            match node.attribute("depth") {
                None => Ok(Depth::Unbounded),
                Some(d) => d.parse().map_err(|e: Error| fail(e.to_string())),
            }
        };
        let rule = match element.as_str() {
            "class" => Rule::Class {
                type_name: attr("name")?,
                policy: policy()?,
                overridable: flag("overridable", None)?,
                subtypes: flag("subclasses", Some(false))?,
            },
            "method" => Rule::Method {
                type_name: attr("class")?,
                method: attr("name")?,
                policy: policy()?,
                depth: depth()?,
                overridable: flag("overridable", None)?,
            },
            "return" => Rule::Return {
                type_name: attr("class")?,
                method: attr("method")?,
                policy: policy()?,
                overridable: flag("overridable", None)?,
            },
            "param" => Rule::Param {
                type_name: attr("class")?,
                method: attr("method")?,
                index: attr("index")?
                    .parse()
                    .map_err(|_| fail("`index` must be a non-negative integer".into()))?,
                policy: policy()?,
                depth: depth()?,
                overridable: flag("overridable", None)?,
            },
            _ => Rule::CacheField {
                type_name: attr("class")?,
                field: attr("field")?,
            },
        };
        out.push((line, element, rule));
    }
    Ok(out)
}
