//! Plain JSON view of runtime values, for manifests and the command line.
//!
//! Objects are written `{"class": T, "fields": {..}}` and proxies
//! `{"ref": url, "interface": name}`.

use std::collections::HashSet;

use serde_json::{json, Map, Number, Value as Json};

use crate::error::{Error, Result};
use crate::model::{builtin, Object, TypeCatalog, Value};
use crate::registry::Registry;

pub fn to_json(value: &Value) -> Json {
    fn walk(v: &Value, path: &mut HashSet<usize>) -> Json {
        match v {
            Value::Null => Json::Null,
            Value::Int(i) => json!(i),
            Value::Float(f) => Number::from_f64(*f).map_or(Json::Null, Json::Number),
            Value::Bool(b) => json!(b),
            Value::Str(s) => json!(s),
            Value::Seq(items) => Json::Array(items.iter().map(|i| walk(i, path)).collect()),
            Value::Remote(h) => json!({"ref": h.rior().url(), "interface": h.interface().type_name}),
            Value::Object(o) => {
                let id = Object::identity(o);
                if !path.insert(id) {
                    return json!({"class": o.type_name(), "cycle": true});
                }
                let fields: Map<String, Json> = o.snapshot().iter().map(|(k, v)| (k.clone(), walk(v, path))).collect();
                path.remove(&id);
                json!({"class": o.type_name(), "fields": fields})
            }
        }
    }
    walk(value, &mut HashSet::new())
}

pub fn from_json(j: &Json, registry: &Registry) -> Result<Value> {
    Ok(match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().ok_or_else(|| Error::protocol(format!("unrepresentable number {n}")))?),
        },
        Json::String(s) => Value::Str(s.clone()),
        Json::Array(items) => Value::Seq(items.iter().map(|i| from_json(i, registry)).collect::<Result<_>>()?),
        Json::Object(m) => {
            let class = m
                .get("class")
                .and_then(Json::as_str)
                .ok_or_else(|| Error::protocol("JSON objects denote instances and need a `class`"))?;
            if let Some(k) = m.keys().find(|k| *k != "class" && *k != "fields") {
                return Err(Error::protocol(format!("unexpected key `{k}` in instance")));
            }
            let plan = registry.field_plan(class).ok_or_else(|| Error::UnknownType(class.to_owned()))?;
            let object = Object::new(class, std::iter::empty::<(String, Value)>());
            if let Some(fields) = m.get("fields") {
                let fields = fields.as_object().ok_or_else(|| Error::protocol("`fields` must be an object"))?;
                for (name, v) in fields {
                    if plan.field(name).is_none() {
                        return Err(Error::protocol(format!("`{class}` has no field `{name}`")));
                    }
                    object.set(name, from_json(v, registry)?);
                }
            }
            Value::Object(object)
        }
    })
}

/// Argument conversion against a declared parameter type: a bare value or
/// array given for a registered class is passed to its constructor.
pub fn coerce_arg(j: &Json, param_type: &str, registry: &Registry) -> Result<Value> {
    let constructible = !builtin::is_builtin(param_type)
        && registry.registered(param_type).is_some_and(|t| !t.descriptor.is_interface);
    match j {
        Json::Object(_) | Json::Null => from_json(j, registry),
        Json::Array(items) if constructible => {
            let args = items.iter().map(|i| from_json(i, registry)).collect::<Result<Vec<_>>>()?;
            Ok(Value::Object(registry.construct(param_type, &args)?))
        }
        _ if constructible => Ok(Value::Object(registry.construct(param_type, &[from_json(j, registry)?])?)),
        _ => from_json(j, registry),
    }
}
