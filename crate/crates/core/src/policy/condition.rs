//! Condition expressions over request context attributes.
//!
//! Serialized as nested arrays:
//! `["and", ["eq", "user.id", "u1"], ["lt", "request.time", 1700000000]]`.
//!
//! Evaluation is left to right with short-circuiting `and`/`or`. A reference
//! to an absent attribute aborts evaluation and the whole condition is false;
//! comparing values of different types is a [`ConditionTypeError`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// A context attribute value.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl AttrValue {
    fn type_name(&self) -> &'static str {
        match self {
            AttrValue::Str(_) => "string",
            AttrValue::Num(_) => "number",
            AttrValue::Bool(_) => "boolean",
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            AttrValue::Str(s) => Value::String(s.clone()),
            AttrValue::Num(n) => num_to_json(*n),
            AttrValue::Bool(b) => Value::Bool(*b),
        }
    }

    pub fn from_json(v: &Value) -> Option<Self> {
        match v {
            Value::String(s) => Some(AttrValue::Str(s.clone())),
            Value::Bool(b) => Some(AttrValue::Bool(*b)),
            Value::Number(n) => n.as_f64().filter(|f| f.is_finite()).map(AttrValue::Num),
            _ => None,
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<f64> for AttrValue {
    fn from(n: f64) -> Self {
        AttrValue::Num(n)
    }
}

impl From<bool> for AttrValue {
    fn from(b: bool) -> Self {
        AttrValue::Bool(b)
    }
}

/// Integral values inside the exactly-representable range print as integers
/// so that `1700000000` survives a parse/serialize cycle unchanged.
fn num_to_json(n: f64) -> Value {
    const EXACT: f64 = 9_007_199_254_740_992.0;
    if n.fract() == 0.0 && n.abs() < EXACT {
        Value::from(n as i64)
    } else {
        serde_json::Number::from_f64(n).map_or(Value::Null, Value::Number)
    }
}

impl Serialize for AttrValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttrValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        AttrValue::from_json(&v)
            .ok_or_else(|| serde::de::Error::custom("attribute must be a string, number or boolean"))
    }
}

/// Flat attribute map keyed by dotted path (`user.department`).
pub type Context = BTreeMap<String, AttrValue>;

/// Flattens nested JSON objects into dotted keys.
pub fn flatten_context(v: &Value) -> Result<Context, String> {
    fn walk(prefix: &str, v: &Value, out: &mut Context) -> Result<(), String> {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let path = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&path, child, out)?;
                }
                Ok(())
            }
            other => {
                let val = AttrValue::from_json(other)
                    .ok_or_else(|| format!("unsupported context value at {prefix:?}"))?;
                out.insert(prefix.to_string(), val);
                Ok(())
            }
        }
    }
    if !v.is_object() {
        return Err("context must be an object".into());
    }
    let mut out = Context::new();
    walk("", v, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
}

impl CompareOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CompareOp::Eq => "eq",
            CompareOp::Neq => "neq",
            CompareOp::Lt => "lt",
            CompareOp::Lte => "lte",
            CompareOp::Gt => "gt",
            CompareOp::Gte => "gte",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "eq" => CompareOp::Eq,
            "neq" => CompareOp::Neq,
            "lt" => CompareOp::Lt,
            "lte" => CompareOp::Lte,
            "gt" => CompareOp::Gt,
            "gte" => CompareOp::Gte,
            _ => return None,
        })
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CompareOp::Eq | CompareOp::Neq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
    Compare {
        op: CompareOp,
        path: String,
        value: AttrValue,
    },
    In {
        path: String,
        values: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed condition: {0}")]
pub struct ConditionParseError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("type error: {op} on {path:?} compares {found} with {expected}")]
pub struct ConditionTypeError {
    pub op: String,
    pub path: String,
    pub found: String,
    pub expected: String,
}

enum Abort {
    Missing,
    Type(ConditionTypeError),
}

impl Condition {
    pub fn eq(path: &str, value: impl Into<AttrValue>) -> Self {
        Condition::Compare {
            op: CompareOp::Eq,
            path: path.to_string(),
            value: value.into(),
        }
    }

    pub fn compare(op: CompareOp, path: &str, value: impl Into<AttrValue>) -> Self {
        Condition::Compare {
            op,
            path: path.to_string(),
            value: value.into(),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Condition::And(items) | Condition::Or(items) => {
                let head = if matches!(self, Condition::And(_)) { "and" } else { "or" };
                let mut arr = vec![Value::from(head)];
                arr.extend(items.iter().map(Condition::to_json));
                Value::Array(arr)
            }
            Condition::Not(inner) => Value::Array(vec![Value::from("not"), inner.to_json()]),
            Condition::Compare { op, path, value } => {
                Value::Array(vec![Value::from(op.as_str()), Value::from(path.as_str()), value.to_json()])
            }
            Condition::In { path, values } => Value::Array(vec![
                Value::from("in"),
                Value::from(path.as_str()),
                Value::Array(values.iter().map(|s| Value::from(s.as_str())).collect()),
            ]),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, ConditionParseError> {
        let err = |m: &str| ConditionParseError(format!("{m}: {v}"));
        let arr = v.as_array().ok_or_else(|| err("expected array"))?;
        let (head, args) = arr.split_first().ok_or_else(|| err("empty expression"))?;
        let head = head.as_str().ok_or_else(|| err("operator must be a string"))?;
        let path_at = |i: usize| -> Result<String, ConditionParseError> {
            let p = args
                .get(i)
                .and_then(Value::as_str)
                .ok_or_else(|| err("expected attribute path"))?;
            if p.is_empty() || p.split('.').any(str::is_empty) {
                return Err(err("invalid attribute path"));
            }
            Ok(p.to_string())
        };
        match head {
            "and" | "or" => {
                let items = args.iter().map(Condition::from_json).collect::<Result<Vec<_>, _>>()?;
                Ok(if head == "and" { Condition::And(items) } else { Condition::Or(items) })
            }
            "not" => {
                if args.len() != 1 {
                    return Err(err("not takes one operand"));
                }
                Ok(Condition::Not(Box::new(Condition::from_json(&args[0])?)))
            }
            "in" => {
                if args.len() != 2 {
                    return Err(err("in takes a path and a list"));
                }
                let values = args[1]
                    .as_array()
                    .ok_or_else(|| err("in expects a list"))?
                    .iter()
                    .map(|x| x.as_str().map(String::from).ok_or_else(|| err("in list must hold strings")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Condition::In {
                    path: path_at(0)?,
                    values,
                })
            }
            other => {
                let op = CompareOp::parse(other).ok_or_else(|| err("unknown operator"))?;
                if args.len() != 2 {
                    return Err(err("comparison takes a path and a literal"));
                }
                let value = AttrValue::from_json(&args[1]).ok_or_else(|| err("invalid literal"))?;
                Ok(Condition::Compare {
                    op,
                    path: path_at(0)?,
                    value,
                })
            }
        }
    }

    /// Type errors detectable without a context: ordering operators applied to
    /// non-numeric literals.
    pub fn static_type_errors(&self) -> Vec<ConditionTypeError> {
        let mut out = Vec::new();
        self.collect_static_errors(&mut out);
        out
    }

    fn collect_static_errors(&self, out: &mut Vec<ConditionTypeError>) {
        match self {
            Condition::And(items) | Condition::Or(items) => {
                items.iter().for_each(|c| c.collect_static_errors(out))
            }
            Condition::Not(inner) => inner.collect_static_errors(out),
            Condition::Compare { op, path, value } => {
                if op.is_ordering() && !matches!(value, AttrValue::Num(_)) {
                    out.push(ConditionTypeError {
                        op: op.as_str().into(),
                        path: path.clone(),
                        found: value.type_name().into(),
                        expected: "number".into(),
                    });
                }
            }
            Condition::In { .. } => {}
        }
    }

    fn eval(&self, ctx: &Context) -> Result<bool, Abort> {
        match self {
            Condition::And(items) => {
                for c in items {
                    if !c.eval(ctx)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Condition::Or(items) => {
                for c in items {
                    if c.eval(ctx)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Condition::Not(inner) => Ok(!inner.eval(ctx)?),
            Condition::Compare { op, path, value } => {
                let actual = ctx.get(path).ok_or(Abort::Missing)?;
                compare(*op, path, actual, value).map_err(Abort::Type)
            }
            Condition::In { path, values } => match ctx.get(path).ok_or(Abort::Missing)? {
                AttrValue::Str(s) => Ok(values.iter().any(|v| v == s)),
                other => Err(Abort::Type(ConditionTypeError {
                    op: "in".into(),
                    path: path.clone(),
                    found: other.type_name().into(),
                    expected: "string".into(),
                })),
            },
        }
    }
}

fn compare(
    op: CompareOp,
    path: &str,
    actual: &AttrValue,
    literal: &AttrValue,
) -> Result<bool, ConditionTypeError> {
    let mismatch = || ConditionTypeError {
        op: op.as_str().into(),
        path: path.to_string(),
        found: actual.type_name().into(),
        expected: literal.type_name().into(),
    };
    if op.is_ordering() {
        let (AttrValue::Num(a), AttrValue::Num(b)) = (actual, literal) else {
            return Err(ConditionTypeError {
                expected: "number".into(),
                ..mismatch()
            });
        };
        return Ok(match op {
            CompareOp::Lt => a < b,
            CompareOp::Lte => a <= b,
            CompareOp::Gt => a > b,
            _ => a >= b,
        });
    }
    let equal = match (actual, literal) {
        (AttrValue::Str(a), AttrValue::Str(b)) => a == b,
        (AttrValue::Num(a), AttrValue::Num(b)) => a == b,
        (AttrValue::Bool(a), AttrValue::Bool(b)) => a == b,
        _ => return Err(mismatch()),
    };
    Ok(if op == CompareOp::Eq { equal } else { !equal })
}

/// Evaluates a condition; a missing attribute yields `Ok(false)`.
pub fn eval_condition(expr: &Condition, ctx: &Context) -> Result<bool, ConditionTypeError> {
    match expr.eval(ctx) {
        Ok(b) => Ok(b),
        Err(Abort::Missing) => Ok(false),
        Err(Abort::Type(e)) => Err(e),
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Condition::from_json(&v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}
