//! Evaluation of expressions, predicates and policies, and partial
//! evaluation of predicates into formulas over blank parameters.

use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::dimensions::TypeEnv;
use crate::dsl::{ActionRef, Cmp, Expr, Policy, Pred, Threshold, Value};

/// A world observation plus the action that was running when it was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub start_action: String,
    pub bindings: IndexMap<String, Value>,
}

impl WorldState {
    pub fn new(start_action: impl Into<String>) -> Self {
        WorldState {
            start_action: start_action.into(),
            bindings: IndexMap::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, v: Value) -> Self {
        self.bindings.insert(name.into(), v);
        self
    }

    fn action<'a>(&'a self, r: &'a ActionRef) -> &'a str {
        match r {
            ActionRef::Current => &self.start_action,
            ActionRef::Named(n) => n,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("operand shape does not fit the operator")]
    ShapeFault,
    #[error("operator `{0}` produced a non-finite value")]
    NonFinite(String),
    #[error("unfilled hole `{0}`")]
    Hole(String),
    #[error("input `{0}` is not bound in the world state")]
    UnboundInput(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{0}` applied to the wrong number of operands")]
    ArityFault(String),
}

/// Evaluates a hole-free expression.
pub fn eval_expr(e: &Expr, w: &WorldState, env: &TypeEnv) -> Result<Value, EvalError> {
    eval_expr_with(e, w, env, &|_| None)
}

/// Evaluates `e`, taking the values of expression holes from `hole`.
pub fn eval_expr_with(
    e: &Expr,
    w: &WorldState,
    env: &TypeEnv,
    hole: &dyn Fn(&str) -> Option<Value>,
) -> Result<Value, EvalError> {
    let apply = |op: &str, args: &[Value]| -> Result<Value, EvalError> {
        let sig = env
            .op(op)
            .ok_or_else(|| EvalError::UnknownOperator(op.to_string()))?;
        if sig.arity != args.len() {
            return Err(EvalError::ArityFault(op.to_string()));
        }
        let v = (sig.eval)(args)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite(op.to_string()))
        }
    };
    match e {
        Expr::Var { name, .. } => w
            .bindings
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UnboundInput(name.clone())),
        Expr::Const { value, .. } => Ok(*value),
        Expr::Hole { name, .. } => hole(name).ok_or_else(|| EvalError::Hole(name.clone())),
        Expr::Unary { op, arg } => {
            let a = eval_expr_with(arg, w, env, hole)?;
            apply(op, &[a])
        }
        Expr::Binary { op, lhs, rhs } => {
            let a = eval_expr_with(lhs, w, env, hole)?;
            let b = eval_expr_with(rhs, w, env, hole)?;
            apply(op, &[a, b])
        }
    }
}

fn eval_scalar(e: &Expr, w: &WorldState, env: &TypeEnv) -> Result<f64, EvalError> {
    eval_expr(e, w, env)?
        .as_scalar()
        .ok_or(EvalError::ShapeFault)
}

/// Evaluates a hole-free predicate with left-to-right short circuiting.
pub fn eval_pred(p: &Pred, w: &WorldState, env: &TypeEnv) -> Result<bool, EvalError> {
    match p {
        Pred::True => Ok(true),
        Pred::False => Ok(false),
        Pred::ActionEq(a, b) => Ok(w.action(a) == w.action(b)),
        Pred::Cmp(c, e, t) => match t {
            Threshold::Param { value, .. } => Ok(c.holds(eval_scalar(e, w, env)?, *value)),
            Threshold::Hole { name, .. } => Err(EvalError::Hole(name.clone())),
        },
        Pred::And(a, b) => Ok(eval_pred(a, w, env)? && eval_pred(b, w, env)?),
        Pred::Or(a, b) => Ok(eval_pred(a, w, env)? || eval_pred(b, w, env)?),
        Pred::Hole(name) => Err(EvalError::Hole(name.clone())),
    }
}

/// Action chosen by `p`: the first branch whose guard holds, else the fallback.
pub fn eval_policy<'p>(p: &'p Policy, w: &WorldState, env: &TypeEnv) -> Result<&'p str, EvalError> {
    for b in &p.branches {
        if eval_pred(&b.guard, w, env)? {
            return Ok(&b.action);
        }
    }
    Ok(&p.fallback)
}

/// Truth of `p` if it is decided by action tests alone.
pub fn static_truth(p: &Pred, w: &WorldState) -> Option<bool> {
    match p {
        Pred::True => Some(true),
        Pred::False => Some(false),
        Pred::ActionEq(a, b) => Some(w.action(a) == w.action(b)),
        Pred::Cmp(..) | Pred::Hole(_) => None,
        Pred::And(a, b) => match (static_truth(a, w), static_truth(b, w)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Pred::Or(a, b) => match (static_truth(a, w), static_truth(b, w)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
    }
}

/// A boolean formula whose atoms compare a constant against a blank parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ResidualPred {
    True,
    False,
    /// `constant cmp param`
    Atom {
        constant: f64,
        cmp: Cmp,
        param: String,
    },
    And(Box<ResidualPred>, Box<ResidualPred>),
    Or(Box<ResidualPred>, Box<ResidualPred>),
}

impl ResidualPred {
    pub fn and(a: ResidualPred, b: ResidualPred) -> ResidualPred {
        match (a, b) {
            (ResidualPred::False, _) | (_, ResidualPred::False) => ResidualPred::False,
            (ResidualPred::True, x) | (x, ResidualPred::True) => x,
            (a, b) => ResidualPred::And(Box::new(a), Box::new(b)),
        }
    }

    pub fn or(a: ResidualPred, b: ResidualPred) -> ResidualPred {
        match (a, b) {
            (ResidualPred::True, _) | (_, ResidualPred::True) => ResidualPred::True,
            (ResidualPred::False, x) | (x, ResidualPred::False) => x,
            (a, b) => ResidualPred::Or(Box::new(a), Box::new(b)),
        }
    }

    pub fn is_literal(&self) -> Option<bool> {
        match self {
            ResidualPred::True => Some(true),
            ResidualPred::False => Some(false),
            _ => None,
        }
    }

    /// Truth under an assignment of every parameter.
    pub fn holds(&self, value: &impl Fn(&str) -> f64) -> bool {
        match self {
            ResidualPred::True => true,
            ResidualPred::False => false,
            ResidualPred::Atom {
                constant,
                cmp,
                param,
            } => cmp.holds(*constant, value(param)),
            ResidualPred::And(a, b) => a.holds(value) && b.holds(value),
            ResidualPred::Or(a, b) => a.holds(value) || b.holds(value),
        }
    }

    pub fn visit_atoms(&self, f: &mut impl FnMut(f64, Cmp, &str)) {
        match self {
            ResidualPred::Atom {
                constant,
                cmp,
                param,
            } => f(*constant, *cmp, param),
            ResidualPred::And(a, b) | ResidualPred::Or(a, b) => {
                a.visit_atoms(f);
                b.visit_atoms(f);
            }
            _ => {}
        }
    }

    /// Rewrites every atom's constant.
    pub fn map_constants(&self, f: &impl Fn(f64, &str) -> f64) -> ResidualPred {
        match self {
            ResidualPred::Atom {
                constant,
                cmp,
                param,
            } => ResidualPred::Atom {
                constant: f(*constant, param),
                cmp: *cmp,
                param: param.clone(),
            },
            ResidualPred::And(a, b) => ResidualPred::and(a.map_constants(f), b.map_constants(f)),
            ResidualPred::Or(a, b) => ResidualPred::or(a.map_constants(f), b.map_constants(f)),
            other => other.clone(),
        }
    }
}

impl fmt::Display for ResidualPred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResidualPred::True => write!(f, "true"),
            ResidualPred::False => write!(f, "false"),
            ResidualPred::Atom {
                constant,
                cmp,
                param,
            } => write!(f, "{constant} {} ?{param}", cmp.symbol()),
            ResidualPred::And(a, b) => write!(f, "({a} && {b})"),
            ResidualPred::Or(a, b) => write!(f, "({a} || {b})"),
        }
    }
}

/// Folds inputs and concrete parameters into `b`, leaving atoms over blank
/// parameters only.
pub fn partial_eval(b: &Pred, w: &WorldState, env: &TypeEnv) -> Result<ResidualPred, EvalError> {
    partial_eval_with(b, w, &mut |e| eval_scalar(e, w, env))
}

/// `partial_eval` with a caller-supplied valuation of comparison operands.
pub fn partial_eval_with(
    b: &Pred,
    w: &WorldState,
    value: &mut dyn FnMut(&Expr) -> Result<f64, EvalError>,
) -> Result<ResidualPred, EvalError> {
    Ok(match b {
        Pred::True => ResidualPred::True,
        Pred::False => ResidualPred::False,
        Pred::ActionEq(a, c) => {
            if w.action(a) == w.action(c) {
                ResidualPred::True
            } else {
                ResidualPred::False
            }
        }
        Pred::Hole(name) => return Err(EvalError::Hole(name.clone())),
        Pred::Cmp(cmp, e, t) => {
            let x = value(e)?;
            match t {
                Threshold::Param { value, .. } => {
                    if cmp.holds(x, *value) {
                        ResidualPred::True
                    } else {
                        ResidualPred::False
                    }
                }
                Threshold::Hole { name, .. } => ResidualPred::Atom {
                    constant: x,
                    cmp: *cmp,
                    param: name.clone(),
                },
            }
        }
        Pred::And(l, r) => {
            let a = partial_eval_with(l, w, value)?;
            if a == ResidualPred::False {
                return Ok(a);
            }
            ResidualPred::and(a, partial_eval_with(r, w, value)?)
        }
        Pred::Or(l, r) => {
            let a = partial_eval_with(l, w, value)?;
            if a == ResidualPred::True {
                return Ok(a);
            }
            ResidualPred::or(a, partial_eval_with(r, w, value)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_policy, parse_pred, Dimension, ValueType};
    use crate::worldio::soccer_domain;

    fn env() -> TypeEnv {
        soccer_domain().type_env().unwrap()
    }

    fn world(
        start: &str,
        p_r: [f64; 2],
        v_r: [f64; 2],
        p_b: [f64; 2],
        v_b: [f64; 2],
    ) -> WorldState {
        WorldState::new(start)
            .with("p_r", Value::Vector(p_r))
            .with("v_r", Value::Vector(v_r))
            .with("p_b", Value::Vector(p_b))
            .with("v_b", Value::Vector(v_b))
    }

    const WORKED_POLICY: &str = "if (a_s == Kick || norm(p_r - p_b) < 150 && norm(v_r - v_b) < 100): Kick
elif (norm(v_b) > 100): Inter
else: Goto";

    #[test]
    fn eval_expr_examples() {
        let env = env();
        let w = world("Goto", [0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [0.0, -0.201]);
        let e = crate::dsl::parse_expr("norm(p_r - p_b)", &env).unwrap();
        assert_eq!(eval_expr(&e, &w, &env), Ok(Value::Scalar(5.0)));
        let a = Expr::unary("abs", Expr::scalar(-2.5, Dimension::DIMENSIONLESS));
        assert_eq!(eval_expr(&a, &w, &env), Ok(Value::Scalar(2.5)));
        let n = Expr::unary(
            "norm",
            Expr::var("v_b", ValueType::Vector(Dimension::VELOCITY)),
        );
        assert_eq!(eval_expr(&n, &w, &env), Ok(Value::Scalar(0.201)));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let env = env();
        let w = world("Goto", [0.0; 2], [0.0; 2], [1.0, 0.0], [0.0; 2]);
        let e = crate::dsl::parse_expr("norm(p_b) / norm(v_b)", &env).unwrap();
        assert_eq!(eval_expr(&e, &w, &env), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn eval_policy_examples() {
        let env = env();
        let p = parse_policy(WORKED_POLICY, &env).unwrap();
        let far = world("Kick", [0.0, 0.0], [0.0; 2], [500.0, 0.0], [0.0, 50.0]);
        assert_eq!(eval_policy(&p, &far, &env), Ok("Kick"));

        let w = world("Goto", [0.0, 0.0], [200.0, 0.0], [200.0, 0.0], [50.0, 0.0]);
        // |p_r-p_b| = 200, |v_r-v_b| = 150, |v_b| = 50
        assert_eq!(eval_policy(&p, &w, &env), Ok("Goto"));

        let close = world("Goto", [0.0, 0.0], [10.0, 0.0], [10.0, 0.0], [0.0, 0.0]);
        assert_eq!(eval_policy(&p, &close, &env), Ok("Kick"));
    }

    #[test]
    fn partial_eval_examples() {
        let env = env();
        let w = world("Goto", [0.0, 0.0], [0.0; 2], [3.0, 4.0], [0.0; 2]);
        let b = parse_pred("norm(p_r - p_b) < ?k:[1,0,0]", &env).unwrap();
        assert_eq!(
            partial_eval(&b, &w, &env),
            Ok(ResidualPred::Atom {
                constant: 5.0,
                cmp: Cmp::Lt,
                param: "k".into()
            })
        );

        let kick = world("Kick", [0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        let b = parse_pred("a_s == Kick || norm(v_b) < ?k:[1,-1,0]", &env).unwrap();
        assert_eq!(partial_eval(&b, &kick, &env), Ok(ResidualPred::True));

        let goto = world("Goto", [0.0; 2], [0.0; 2], [0.0; 2], [0.0, 0.5]);
        let b = parse_pred("a_s == Goto && norm(v_b) > ?k:[1,-1,0]", &env).unwrap();
        assert_eq!(
            partial_eval(&b, &goto, &env),
            Ok(ResidualPred::Atom {
                constant: 0.5,
                cmp: Cmp::Gt,
                param: "k".into()
            })
        );
    }

    #[test]
    fn static_truth_ignores_comparisons() {
        let env = env();
        let w = world("Inter", [0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        let b = parse_pred("a_s == Goto && ?p", &env).unwrap();
        assert_eq!(static_truth(&b, &w), Some(false));
        let b = parse_pred("a_s == Inter && ?p", &env).unwrap();
        assert_eq!(static_truth(&b, &w), None);
    }
}
