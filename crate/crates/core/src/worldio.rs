//! Domain definitions, demonstration files and policy files.
//!
//! Domains are JSON objects, demonstrations are JSON Lines and policies
//! are stored in the DSL's own concrete syntax.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::dimensions::{check_policy, OpRegistry, TypeEnv, TypeError};
use crate::dsl::{parse_policy, print_policy, Dimension, ParseError, Policy, Value, ValueType};
use crate::interp::WorldState;
use crate::synth::Demonstration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Scalar,
    Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDef {
    pub name: String,
    pub kind: InputKind,
    pub dim: Dimension,
}

impl InputDef {
    pub fn value_type(&self) -> ValueType {
        match self.kind {
            InputKind::Scalar => ValueType::Scalar(self.dim),
            InputKind::Vector => ValueType::Vector(self.dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstDef {
    pub value: f64,
    pub dim: Dimension,
}

/// Actions, input schema and enabled operators of one problem domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDef {
    pub name: String,
    pub actions: Vec<String>,
    pub default_action: String,
    pub inputs: Vec<InputDef>,
    pub operators: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constants: Vec<ConstDef>,
}

#[derive(Debug, Error)]
pub enum WorldIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error at {at}: {message}")]
    Schema { at: String, message: String },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("line {line}: input `{input}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        input: String,
        expected: Dimension,
        found: Dimension,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

fn schema(at: impl Into<String>, message: impl Into<String>) -> WorldIoError {
    WorldIoError::Schema {
        at: at.into(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, WorldIoError> {
    fs::read_to_string(path).map_err(|source| WorldIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), WorldIoError> {
    fs::write(path, text).map_err(|source| WorldIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl DomainDef {
    /// Checks the domain against the builtin operator registry.
    pub fn validate(&self) -> Result<(), WorldIoError> {
        self.type_env().map(|_| ())
    }

    pub fn type_env(&self) -> Result<TypeEnv, WorldIoError> {
        self.type_env_with(&OpRegistry::default())
    }

    /// Builds the type environment, resolving operators in `registry`.
    pub fn type_env_with(&self, registry: &OpRegistry) -> Result<TypeEnv, WorldIoError> {
        if self.actions.is_empty() {
            return Err(schema("actions", "at least one action is required"));
        }
        let mut seen = HashSet::new();
        for (i, a) in self.actions.iter().enumerate() {
            if !is_identifier(a) || a == "a_s" {
                return Err(schema(
                    format!("actions[{i}]"),
                    format!("`{a}` is not a valid action name"),
                ));
            }
            if !seen.insert(a.as_str()) {
                return Err(schema(
                    format!("actions[{i}]"),
                    format!("duplicate action `{a}`"),
                ));
            }
        }
        if !self.actions.contains(&self.default_action) {
            return Err(schema(
                "default_action",
                format!("`{}` is not one of the actions", self.default_action),
            ));
        }
        let mut inputs = IndexMap::new();
        for (i, d) in self.inputs.iter().enumerate() {
            if !is_identifier(&d.name) || d.name == "a_s" {
                return Err(schema(
                    format!("inputs[{i}].name"),
                    format!("`{}` is not a valid input name", d.name),
                ));
            }
            if inputs.insert(d.name.clone(), d.value_type()).is_some() {
                return Err(schema(
                    format!("inputs[{i}].name"),
                    format!("duplicate input `{}`", d.name),
                ));
            }
        }
        let mut ops = Vec::new();
        for name in &self.operators {
            let sig = registry
                .get(name)
                .ok_or_else(|| WorldIoError::UnknownOperator(name.clone()))?;
            if !ops
                .iter()
                .any(|o: &std::sync::Arc<_>| std::sync::Arc::ptr_eq(o, sig))
            {
                ops.push(sig.clone());
            }
        }
        Ok(TypeEnv {
            inputs,
            ops,
            actions: self.actions.clone(),
            constants: self.constants.iter().map(|c| (c.value, c.dim)).collect(),
        })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// The robot-soccer domain: go to the ball, intercept it, or kick it.
pub fn soccer_domain() -> DomainDef {
    let input = |name: &str| InputDef {
        name: name.into(),
        kind: InputKind::Vector,
        dim: if name.starts_with('p') {
            Dimension::LENGTH
        } else {
            Dimension::VELOCITY
        },
    };
    DomainDef {
        name: "soccer".into(),
        actions: vec!["Goto".into(), "Inter".into(), "Kick".into()],
        default_action: "Goto".into(),
        inputs: ["p_r", "v_r", "p_b", "v_b"]
            .into_iter()
            .map(input)
            .collect(),
        operators: ["abs", "sin", "cos", "norm", "+", "-", "*", "/", "dist"]
            .map(String::from)
            .to_vec(),
        constants: Vec::new(),
    }
}

pub fn parse_domain(text: &str) -> Result<DomainDef, WorldIoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let d: DomainDef = serde_path_to_error::deserialize(de)
        .map_err(|e| schema(e.path().to_string(), e.inner().to_string()))?;
    d.validate()?;
    Ok(d)
}

pub fn load_domain(path: &Path) -> Result<DomainDef, WorldIoError> {
    parse_domain(&read(path)?)
}

pub fn domain_to_json(d: &DomainDef) -> String {
    let mut s = serde_json::to_string_pretty(d).expect("domain serializes");
    s.push('\n');
    s
}

fn json_number(v: &Json, at: &str) -> Result<f64, WorldIoError> {
    v.as_f64()
        .ok_or_else(|| schema(at, format!("expected a number, found {v}")))
}

fn parse_value(v: &Json, def: &InputDef, line: usize) -> Result<Value, WorldIoError> {
    let at = format!("line {line}: world.{}", def.name);
    // an object form carries an explicit dimension that must match the schema
    let raw = match v {
        Json::Object(o) => {
            let dim: Dimension = o
                .get("dim")
                .map(|d| serde_json::from_value(d.clone()))
                .transpose()
                .map_err(|e| schema(&at, e.to_string()))?
                .ok_or_else(|| schema(&at, "missing `dim`"))?;
            if dim != def.dim {
                return Err(WorldIoError::DimensionMismatch {
                    line,
                    input: def.name.clone(),
                    expected: def.dim,
                    found: dim,
                });
            }
            o.get("value")
                .ok_or_else(|| schema(&at, "missing `value`"))?
        }
        other => other,
    };
    match (def.kind, raw) {
        (InputKind::Scalar, Json::Number(_)) => Ok(Value::Scalar(json_number(raw, &at)?)),
        (InputKind::Vector, Json::Array(a)) if a.len() == 2 => Ok(Value::Vector([
            json_number(&a[0], &at)?,
            json_number(&a[1], &at)?,
        ])),
        (InputKind::Scalar, _) => Err(schema(at, format!("expected a scalar, found {raw}"))),
        (InputKind::Vector, _) => Err(schema(at, format!("expected a 2-vector, found {raw}"))),
    }
}

fn action_field(
    o: &Map<String, Json>,
    key: &str,
    domain: &DomainDef,
    line: usize,
) -> Result<String, WorldIoError> {
    let at = format!("line {line}: {key}");
    let a = o
        .get(key)
        .and_then(Json::as_str)
        .ok_or_else(|| schema(&at, "expected an action name"))?;
    if !domain.actions.iter().any(|x| x == a) {
        return Err(schema(at, format!("unknown action `{a}`")));
    }
    Ok(a.to_string())
}

/// Parses one JSON Lines record; `line` is 1-based and used in errors.
pub fn parse_demo(
    text: &str,
    domain: &DomainDef,
    line: usize,
) -> Result<Demonstration, WorldIoError> {
    let v: Json =
        serde_json::from_str(text).map_err(|e| schema(format!("line {line}"), e.to_string()))?;
    let o = v
        .as_object()
        .ok_or_else(|| schema(format!("line {line}"), "expected a JSON object"))?;
    for k in o.keys() {
        if !matches!(k.as_str(), "start" | "next" | "world") {
            return Err(schema(format!("line {line}: {k}"), "unknown field"));
        }
    }
    let start = action_field(o, "start", domain, line)?;
    let next_action = action_field(o, "next", domain, line)?;
    let world = o
        .get("world")
        .and_then(Json::as_object)
        .ok_or_else(|| schema(format!("line {line}: world"), "expected an object"))?;
    for k in world.keys() {
        if !domain.inputs.iter().any(|d| &d.name == k) {
            return Err(schema(format!("line {line}: world.{k}"), "unknown input"));
        }
    }
    let mut state = WorldState::new(start);
    for def in &domain.inputs {
        let v = world
            .get(&def.name)
            .ok_or_else(|| schema(format!("line {line}: world.{}", def.name), "missing input"))?;
        state
            .bindings
            .insert(def.name.clone(), parse_value(v, def, line)?);
    }
    Ok(Demonstration {
        world: state,
        next_action,
    })
}

/// Parses JSON Lines text; blank lines are skipped, order is preserved.
pub fn parse_demos(text: &str, domain: &DomainDef) -> Result<Vec<Demonstration>, WorldIoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_demo(l, domain, i + 1))
        .collect()
}

pub fn load_demos(path: &Path, domain: &DomainDef) -> Result<Vec<Demonstration>, WorldIoError> {
    parse_demos(&read(path)?, domain)
}

fn value_json(v: &Value) -> Json {
    match v {
        Value::Scalar(x) => Json::from(*x),
        Value::Vector([x, y]) => Json::from(vec![*x, *y]),
    }
}

/// One JSON Lines record, without the trailing newline.
pub fn demo_to_json(d: &Demonstration) -> String {
    let world: Map<String, Json> = d
        .world
        .bindings
        .iter()
        .map(|(k, v)| (k.clone(), value_json(v)))
        .collect();
    let mut o = Map::new();
    o.insert("start".into(), Json::from(d.world.start_action.clone()));
    o.insert("next".into(), Json::from(d.next_action.clone()));
    o.insert("world".into(), Json::Object(world));
    Json::Object(o).to_string()
}

pub fn demos_to_jsonl(demos: &[Demonstration]) -> String {
    let mut out = String::new();
    for d in demos {
        out.push_str(&demo_to_json(d));
        out.push('\n');
    }
    out
}

pub fn save_demos(demos: &[Demonstration], path: &Path) -> Result<(), WorldIoError> {
    let file = fs::File::create(path).map_err(|source| WorldIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(demos_to_jsonl(demos).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|source| WorldIoError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Parses and type-checks a policy or sketch.
pub fn parse_policy_text(text: &str, domain: &DomainDef) -> Result<Policy, WorldIoError> {
    let env = domain.type_env()?;
    let p = parse_policy(text, &env)?;
    check_policy(&p, &env)?;
    Ok(p)
}

pub fn load_policy(path: &Path, domain: &DomainDef) -> Result<Policy, WorldIoError> {
    parse_policy_text(&read(path)?, domain)
}

pub fn save_policy(p: &Policy, path: &Path) -> Result<(), WorldIoError> {
    write(path, &print_policy(p))
}
