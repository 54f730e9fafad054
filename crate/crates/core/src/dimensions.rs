//! Dimension algebra, operator signatures and the dimensional type checker.
//!
//! Quantities may be multiplied or divided freely, but adding, subtracting
//! and comparing them requires equal dimensions. Every operator carries a
//! typing rule that either produces a result type or rejects its operands.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::dsl::{ActionRef, Dimension, Expr, Policy, Pred, Threshold, Value, ValueType};
use crate::interp::EvalError;

pub fn dim_add(a: Dimension, b: Dimension) -> Dimension {
    a + b
}

pub fn dim_sub(a: Dimension, b: Dimension) -> Dimension {
    a - b
}

/// Why an operator refused its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpReject {
    /// Shapes fit but dimensions must agree and do not.
    Incommensurable,
    /// No rule covers these operand shapes or dimensions.
    Domain,
}

pub type TypeRule = Arc<dyn Fn(&[ValueType]) -> Result<ValueType, OpReject> + Send + Sync>;
pub type EvalRule = Arc<dyn Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync>;

/// An operator: name, arity, typing rule and evaluation rule.
#[derive(Clone)]
pub struct OpSignature {
    pub name: String,
    pub arity: usize,
    pub rule: TypeRule,
    pub eval: EvalRule,
}

impl OpSignature {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        rule: impl Fn(&[ValueType]) -> Result<ValueType, OpReject> + Send + Sync + 'static,
        eval: impl Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync + 'static,
    ) -> Self {
        OpSignature {
            name: name.into(),
            arity,
            rule: Arc::new(rule),
            eval: Arc::new(eval),
        }
    }

    pub fn type_of(&self, operands: &[ValueType]) -> Result<ValueType, OpReject> {
        if operands.len() != self.arity {
            return Err(OpReject::Domain);
        }
        (self.rule)(operands)
    }

    /// The rule applied to dimension-erased operands.
    pub fn shape_of(&self, operands: &[ValueType]) -> Result<ValueType, OpReject> {
        let erased: Vec<ValueType> = operands.iter().map(ValueType::shape).collect();
        self.type_of(&erased).map(|t| t.shape())
    }
}

impl fmt::Debug for OpSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpSignature")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish()
    }
}

use ValueType::{Scalar as S, Vector as V};

fn shape_fault() -> EvalError {
    EvalError::ShapeFault
}

fn scalar_unary(f: fn(f64) -> f64) -> impl Fn(&[Value]) -> Result<Value, EvalError> {
    move |args| match args {
        [Value::Scalar(x)] => Ok(Value::Scalar(f(*x))),
        _ => Err(shape_fault()),
    }
}

fn additive(sign: f64) -> impl Fn(&[Value]) -> Result<Value, EvalError> {
    move |args| match args {
        [Value::Scalar(a), Value::Scalar(b)] => Ok(Value::Scalar(a + sign * b)),
        [Value::Vector(a), Value::Vector(b)] => {
            Ok(Value::Vector([a[0] + sign * b[0], a[1] + sign * b[1]]))
        }
        _ => Err(shape_fault()),
    }
}

fn additive_rule(args: &[ValueType]) -> Result<ValueType, OpReject> {
    match args {
        [S(a), S(b)] | [V(a), V(b)] if a == b => Ok(args[0]),
        [S(_), S(_)] | [V(_), V(_)] => Err(OpReject::Incommensurable),
        _ => Err(OpReject::Domain),
    }
}

/// Operators of the robot-soccer domain, in registration order.
pub fn builtin_signatures() -> Vec<OpSignature> {
    vec![
        OpSignature::new(
            "abs",
            1,
            |a| match a {
                [S(d)] => Ok(S(*d)),
                _ => Err(OpReject::Domain),
            },
            scalar_unary(f64::abs),
        ),
        OpSignature::new(
            "sin",
            1,
            |a| match a {
                [S(d)] if d.is_dimensionless() => Ok(S(*d)),
                _ => Err(OpReject::Domain),
            },
            scalar_unary(f64::sin),
        ),
        OpSignature::new(
            "cos",
            1,
            |a| match a {
                [S(d)] if d.is_dimensionless() => Ok(S(*d)),
                _ => Err(OpReject::Domain),
            },
            scalar_unary(f64::cos),
        ),
        OpSignature::new(
            "norm",
            1,
            |a| match a {
                [V(d)] => Ok(S(*d)),
                _ => Err(OpReject::Domain),
            },
            |args| match args {
                [Value::Vector([x, y])] => Ok(Value::Scalar(x.hypot(*y))),
                _ => Err(shape_fault()),
            },
        ),
        OpSignature::new("+", 2, additive_rule, additive(1.0)),
        OpSignature::new("-", 2, additive_rule, additive(-1.0)),
        OpSignature::new(
            "*",
            2,
            |a| match a {
                [S(x), S(y)] => Ok(S(*x + *y)),
                [S(x), V(y)] => Ok(V(*x + *y)),
                _ => Err(OpReject::Domain),
            },
            |args| match args {
                [Value::Scalar(a), Value::Scalar(b)] => Ok(Value::Scalar(a * b)),
                [Value::Scalar(a), Value::Vector(v)] => Ok(Value::Vector([a * v[0], a * v[1]])),
                _ => Err(shape_fault()),
            },
        ),
        OpSignature::new(
            "/",
            2,
            |a| match a {
                [S(x), S(y)] => Ok(S(*x - *y)),
                [V(x), S(y)] => Ok(V(*x - *y)),
                _ => Err(OpReject::Domain),
            },
            |args| match args {
                [_, Value::Scalar(b)] if *b == 0.0 => Err(EvalError::DivisionByZero),
                [Value::Scalar(a), Value::Scalar(b)] => Ok(Value::Scalar(a / b)),
                [Value::Vector(v), Value::Scalar(b)] => Ok(Value::Vector([v[0] / b, v[1] / b])),
                _ => Err(shape_fault()),
            },
        ),
        OpSignature::new(
            "dist",
            2,
            |a| match a {
                [V(x), V(y)] if x == y => Ok(S(*x)),
                [V(_), V(_)] => Err(OpReject::Incommensurable),
                _ => Err(OpReject::Domain),
            },
            |args| match args {
                [Value::Vector(a), Value::Vector(b)] => {
                    Ok(Value::Scalar((a[0] - b[0]).hypot(a[1] - b[1])))
                }
                _ => Err(shape_fault()),
            },
        ),
    ]
}

/// Names of the operators written infix in the concrete syntax.
pub const INFIX_OPS: [&str; 4] = ["+", "-", "*", "/"];

/// Registry of known operators; a domain enables a subset of it.
#[derive(Clone, Debug)]
pub struct OpRegistry {
    ops: Vec<Arc<OpSignature>>,
}

impl Default for OpRegistry {
    fn default() -> Self {
        OpRegistry {
            ops: builtin_signatures().into_iter().map(Arc::new).collect(),
        }
    }
}

impl OpRegistry {
    pub fn empty() -> Self {
        OpRegistry { ops: Vec::new() }
    }

    /// Adds or replaces an operator.
    pub fn register(&mut self, sig: OpSignature) {
        let sig = Arc::new(sig);
        match self.ops.iter_mut().find(|o| o.name == sig.name) {
            Some(slot) => *slot = sig,
            None => self.ops.push(sig),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Arc<OpSignature>> {
        self.ops.iter().find(|o| o.name == name)
    }
}

/// Names and types of everything a policy may mention.
#[derive(Clone, Debug)]
pub struct TypeEnv {
    pub inputs: IndexMap<String, ValueType>,
    /// Enabled operators in registration order.
    pub ops: Vec<Arc<OpSignature>>,
    pub actions: Vec<String>,
    /// Constants available to the enumerator.
    pub constants: Vec<(f64, Dimension)>,
}

impl TypeEnv {
    pub fn op(&self, name: &str) -> Option<&Arc<OpSignature>> {
        self.ops.iter().find(|o| o.name == name)
    }

    pub fn has_action(&self, name: &str) -> bool {
        self.actions.iter().any(|a| a == name)
    }
}

/// Location of a subterm: child indices from the root of a policy or term.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TermPath(pub Vec<usize>);

impl TermPath {
    fn child(&self, i: usize) -> TermPath {
        let mut v = self.0.clone();
        v.push(i);
        TermPath(v)
    }
}

impl fmt::Display for TermPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "/");
        }
        for i in &self.0 {
            write!(f, "/{i}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("incommensurable operands for `{op}` at {path}: {lhs} vs {rhs}")]
    IncommensurableOperands {
        op: String,
        lhs: ValueType,
        rhs: ValueType,
        path: TermPath,
    },
    #[error("operator `{op}` is not defined for ({}) at {path}", fmt_types(.operands))]
    OperatorDomain {
        op: String,
        operands: Vec<ValueType>,
        path: TermPath,
    },
    #[error("unknown operator `{op}` at {path}")]
    UnknownOperator { op: String, path: TermPath },
    #[error("unknown variable `{name}` at {path}")]
    UnknownVariable { name: String, path: TermPath },
    #[error(
        "variable `{name}` is annotated {annotated} but the environment says {expected} at {path}"
    )]
    VariableTypeMismatch {
        name: String,
        annotated: ValueType,
        expected: ValueType,
        path: TermPath,
    },
    #[error("constant at {path} does not match its type {ty}")]
    ConstantShape { ty: ValueType, path: TermPath },
    #[error("comparison at {path} needs a scalar, found {found}")]
    NonScalarComparison { found: ValueType, path: TermPath },
    #[error("comparison at {path} compares dimension {expr} against a threshold of dimension {threshold}")]
    ComparisonDimensionMismatch {
        expr: Dimension,
        threshold: Dimension,
        path: TermPath,
    },
    #[error("unknown action `{action}` at {path}")]
    UnknownAction { action: String, path: TermPath },
    #[error("hole `{name}` appears more than once")]
    DuplicateHole { name: String },
}

fn fmt_types(ts: &[ValueType]) -> String {
    ts.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// The unique type of `e` under `env`.
pub fn check_expr(e: &Expr, env: &TypeEnv) -> Result<ValueType, TypeError> {
    check_expr_at(e, env, &TermPath::default())
}

fn check_expr_at(e: &Expr, env: &TypeEnv, path: &TermPath) -> Result<ValueType, TypeError> {
    match e {
        Expr::Var { name, ty } => match env.inputs.get(name) {
            None => Err(TypeError::UnknownVariable {
                name: name.clone(),
                path: path.clone(),
            }),
            Some(expected) if expected != ty => Err(TypeError::VariableTypeMismatch {
                name: name.clone(),
                annotated: *ty,
                expected: *expected,
                path: path.clone(),
            }),
            Some(t) => Ok(*t),
        },
        Expr::Const { value, ty } => match (value, ty) {
            (Value::Scalar(_), ValueType::Scalar(_)) | (Value::Vector(_), ValueType::Vector(_)) => {
                Ok(*ty)
            }
            _ => Err(TypeError::ConstantShape {
                ty: *ty,
                path: path.clone(),
            }),
        },
        Expr::Hole { ty, .. } => Ok(*ty),
        Expr::Unary { op, arg } => {
            let t = check_expr_at(arg, env, &path.child(0))?;
            apply(env, op, &[t], path)
        }
        Expr::Binary { op, lhs, rhs } => {
            let l = check_expr_at(lhs, env, &path.child(0))?;
            let r = check_expr_at(rhs, env, &path.child(1))?;
            apply(env, op, &[l, r], path)
        }
    }
}

fn apply(
    env: &TypeEnv,
    op: &str,
    args: &[ValueType],
    path: &TermPath,
) -> Result<ValueType, TypeError> {
    let sig = env.op(op).ok_or_else(|| TypeError::UnknownOperator {
        op: op.to_string(),
        path: path.clone(),
    })?;
    sig.type_of(args).map_err(|rej| match (rej, args) {
        (OpReject::Incommensurable, [l, r]) => TypeError::IncommensurableOperands {
            op: op.to_string(),
            lhs: *l,
            rhs: *r,
            path: path.clone(),
        },
        _ => TypeError::OperatorDomain {
            op: op.to_string(),
            operands: args.to_vec(),
            path: path.clone(),
        },
    })
}

/// Checks a predicate; `path` locates it within its policy.
pub fn check_pred(p: &Pred, env: &TypeEnv) -> Result<(), TypeError> {
    check_pred_at(p, env, &TermPath::default())
}

fn check_pred_at(p: &Pred, env: &TypeEnv, path: &TermPath) -> Result<(), TypeError> {
    match p {
        Pred::True | Pred::False | Pred::Hole(_) => Ok(()),
        Pred::ActionEq(a, b) => {
            for (i, r) in [a, b].into_iter().enumerate() {
                if let ActionRef::Named(name) = r {
                    if !env.has_action(name) {
                        return Err(TypeError::UnknownAction {
                            action: name.clone(),
                            path: path.child(i),
                        });
                    }
                }
            }
            Ok(())
        }
        Pred::Cmp(_, e, t) => {
            let ty = check_expr_at(e, env, &path.child(0))?;
            let dim = match ty {
                ValueType::Scalar(d) => d,
                other => {
                    return Err(TypeError::NonScalarComparison {
                        found: other,
                        path: path.clone(),
                    })
                }
            };
            if dim != t.dim() {
                return Err(TypeError::ComparisonDimensionMismatch {
                    expr: dim,
                    threshold: t.dim(),
                    path: path.child(1),
                });
            }
            Ok(())
        }
        Pred::And(a, b) | Pred::Or(a, b) => {
            check_pred_at(a, env, &path.child(0))?;
            check_pred_at(b, env, &path.child(1))
        }
    }
}

/// Checks every guard, every action name, and hole uniqueness.
pub fn check_policy(p: &Policy, env: &TypeEnv) -> Result<(), TypeError> {
    for (i, b) in p.branches.iter().enumerate() {
        let path = TermPath(vec![i]);
        check_pred_at(&b.guard, env, &path)?;
        if !env.has_action(&b.action) {
            return Err(TypeError::UnknownAction {
                action: b.action.clone(),
                path,
            });
        }
    }
    if !env.has_action(&p.fallback) {
        return Err(TypeError::UnknownAction {
            action: p.fallback.clone(),
            path: TermPath(vec![p.branches.len()]),
        });
    }
    check_unique_holes(p)
}

fn check_unique_holes(p: &Policy) -> Result<(), TypeError> {
    let mut seen = HashSet::new();
    let mut dup = None;
    for b in &p.branches {
        let mut visit = |name: &str| {
            if !seen.insert(name.to_string()) && dup.is_none() {
                dup = Some(name.to_string());
            }
        };
        walk_hole_occurrences(&b.guard, &mut visit);
    }
    match dup {
        Some(name) => Err(TypeError::DuplicateHole { name }),
        None => Ok(()),
    }
}

fn walk_hole_occurrences(p: &Pred, f: &mut impl FnMut(&str)) {
    match p {
        Pred::Hole(n) => f(n),
        Pred::Cmp(_, e, t) => {
            walk_expr_holes(e, f);
            if let Threshold::Hole { name, .. } = t {
                f(name);
            }
        }
        Pred::And(a, b) | Pred::Or(a, b) => {
            walk_hole_occurrences(a, f);
            walk_hole_occurrences(b, f);
        }
        _ => {}
    }
}

fn walk_expr_holes(e: &Expr, f: &mut impl FnMut(&str)) {
    match e {
        Expr::Hole { name, .. } => f(name),
        Expr::Unary { arg, .. } => walk_expr_holes(arg, f),
        Expr::Binary { lhs, rhs, .. } => {
            walk_expr_holes(lhs, f);
            walk_expr_holes(rhs, f);
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldio::soccer_domain;

    fn env() -> TypeEnv {
        soccer_domain().type_env().unwrap()
    }

    fn sig(name: &str) -> OpSignature {
        builtin_signatures()
            .into_iter()
            .find(|s| s.name == name)
            .unwrap()
    }

    #[test]
    fn dimension_algebra_examples() {
        assert_eq!(
            dim_add(Dimension::new(1, 0, 0), Dimension::new(0, -1, 0)),
            Dimension::new(1, -1, 0)
        );
        let d = Dimension::new(2, -3, 1);
        assert_eq!(dim_add(d, Dimension::DIMENSIONLESS), d);
        assert_eq!(
            dim_add(Dimension::VELOCITY, Dimension::VELOCITY),
            Dimension::new(2, -2, 0)
        );
        assert_eq!(
            dim_sub(Dimension::LENGTH, Dimension::TIME),
            Dimension::VELOCITY
        );
        assert_eq!(dim_sub(d, d), Dimension::DIMENSIONLESS);
        assert_eq!(
            dim_sub(Dimension::DIMENSIONLESS, Dimension::LENGTH),
            Dimension::new(-1, 0, 0)
        );
    }

    #[test]
    fn dimension_algebra_laws_exhaustive() {
        let range = -3..=3;
        let all: Vec<Dimension> = range
            .clone()
            .flat_map(|l| {
                range
                    .clone()
                    .flat_map(move |t| (-3..=3).map(move |m| Dimension::new(l, t, m)))
            })
            .collect();
        assert_eq!(all.len(), 343);
        for &a in &all {
            assert_eq!(dim_add(a, Dimension::DIMENSIONLESS), a);
            assert_eq!(dim_sub(a, a), Dimension::DIMENSIONLESS);
            for &b in &all {
                assert_eq!(dim_add(a, b), dim_add(b, a));
                // associativity against a fixed third operand keeps this at 343^2
                let c = Dimension::new(b.mass, a.length, b.time);
                assert_eq!(dim_add(dim_add(a, b), c), dim_add(a, dim_add(b, c)));
            }
        }
    }

    #[test]
    fn builtin_rules() {
        assert_eq!(
            sig("norm").type_of(&[V(Dimension::VELOCITY)]),
            Ok(S(Dimension::VELOCITY))
        );
        assert_eq!(
            sig("sin").type_of(&[S(Dimension::LENGTH)]),
            Err(OpReject::Domain)
        );
        assert_eq!(
            sig("cos").type_of(&[S(Dimension::TIME)]),
            Err(OpReject::Domain)
        );
        assert_eq!(
            sig("*").type_of(&[S(Dimension::new(0, -1, 0)), V(Dimension::LENGTH)]),
            Ok(V(Dimension::VELOCITY))
        );
        assert_eq!(
            sig("-").type_of(&[S(Dimension::LENGTH), S(Dimension::TIME)]),
            Err(OpReject::Incommensurable)
        );
        assert_eq!(
            sig("dist").type_of(&[V(Dimension::LENGTH), V(Dimension::LENGTH)]),
            Ok(S(Dimension::LENGTH))
        );
        let names: Vec<_> = builtin_signatures()
            .iter()
            .map(|s| s.name.clone())
            .collect();
        for n in ["abs", "sin", "cos", "norm", "+", "-", "*", "/", "dist"] {
            assert!(names.contains(&n.to_string()), "{n}");
        }
    }

    #[test]
    fn rules_are_total() {
        let types = [
            ValueType::Bool,
            S(Dimension::DIMENSIONLESS),
            S(Dimension::LENGTH),
            V(Dimension::LENGTH),
            V(Dimension::VELOCITY),
        ];
        for s in builtin_signatures() {
            for a in types {
                let _ = s.type_of(&[a]);
                for b in types {
                    let _ = s.type_of(&[a, b]);
                }
            }
        }
    }

    #[test]
    fn check_expr_examples() {
        let env = env();
        let p_r = Expr::var("p_r", V(Dimension::LENGTH));
        let p_b = Expr::var("p_b", V(Dimension::LENGTH));
        let v_b = Expr::var("v_b", V(Dimension::VELOCITY));
        let e = Expr::unary("norm", Expr::binary("-", p_r.clone(), p_b));
        assert_eq!(check_expr(&e, &env), Ok(S(Dimension::LENGTH)));

        let bad = Expr::binary("+", p_r, v_b.clone());
        assert!(matches!(
            check_expr(&bad, &env),
            Err(TypeError::IncommensurableOperands { .. })
        ));

        let half = Expr::binary("/", v_b, Expr::scalar(2.0, Dimension::DIMENSIONLESS));
        assert_eq!(check_expr(&half, &env), Ok(V(Dimension::VELOCITY)));

        let unknown = Expr::unary("norm", Expr::var("q", V(Dimension::LENGTH)));
        match check_expr(&unknown, &env) {
            Err(TypeError::UnknownVariable { name, path }) => {
                assert_eq!(name, "q");
                assert_eq!(path, TermPath(vec![0]));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn check_expr_reports_operator_domain() {
        let env = env();
        let e = Expr::unary(
            "sin",
            Expr::unary("norm", Expr::var("p_b", V(Dimension::LENGTH))),
        );
        assert!(matches!(
            check_expr(&e, &env),
            Err(TypeError::OperatorDomain { .. })
        ));
    }
}
