use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Exponents over the base quantities Length, Time and Mass.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct Dimension {
    pub length: i32,
    pub time: i32,
    pub mass: i32,
}

impl Dimension {
    pub const DIMENSIONLESS: Dimension = Dimension::new(0, 0, 0);
    pub const LENGTH: Dimension = Dimension::new(1, 0, 0);
    pub const TIME: Dimension = Dimension::new(0, 1, 0);
    pub const MASS: Dimension = Dimension::new(0, 0, 1);
    pub const VELOCITY: Dimension = Dimension::new(1, -1, 0);

    pub const fn new(length: i32, time: i32, mass: i32) -> Self {
        Dimension { length, time, mass }
    }

    pub fn is_dimensionless(&self) -> bool {
        *self == Self::DIMENSIONLESS
    }
}

impl From<[i32; 3]> for Dimension {
    fn from(v: [i32; 3]) -> Self {
        Dimension::new(v[0], v[1], v[2])
    }
}

impl From<Dimension> for [i32; 3] {
    fn from(d: Dimension) -> Self {
        [d.length, d.time, d.mass]
    }
}

impl Add for Dimension {
    type Output = Dimension;
    fn add(self, o: Dimension) -> Dimension {
        Dimension::new(
            self.length + o.length,
            self.time + o.time,
            self.mass + o.mass,
        )
    }
}

impl Sub for Dimension {
    type Output = Dimension;
    fn sub(self, o: Dimension) -> Dimension {
        Dimension::new(
            self.length - o.length,
            self.time - o.time,
            self.mass - o.mass,
        )
    }
}

impl Neg for Dimension {
    type Output = Dimension;
    fn neg(self) -> Dimension {
        Dimension::DIMENSIONLESS - self
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.length, self.time, self.mass)
    }
}

/// Type of a DSL value. Vectors are planar and share one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueType {
    Bool,
    Scalar(Dimension),
    Vector(Dimension),
}

impl ValueType {
    pub fn dimension(&self) -> Option<Dimension> {
        match self {
            ValueType::Bool => None,
            ValueType::Scalar(d) | ValueType::Vector(d) => Some(*d),
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, ValueType::Scalar(_))
    }

    /// Same shape with the dimension erased.
    pub fn shape(&self) -> ValueType {
        match self {
            ValueType::Bool => ValueType::Bool,
            ValueType::Scalar(_) => ValueType::Scalar(Dimension::DIMENSIONLESS),
            ValueType::Vector(_) => ValueType::Vector(Dimension::DIMENSIONLESS),
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Bool => write!(f, "bool"),
            ValueType::Scalar(d) => write!(f, "{d}"),
            ValueType::Vector(d) => write!(f, "V{d}"),
        }
    }
}

/// A runtime value: a scalar or a planar vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector([f64; 2]),
}

impl Value {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(x) => Some(*x),
            Value::Vector(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Scalar(x) => x.is_finite(),
            Value::Vector([x, y]) => x.is_finite() && y.is_finite(),
        }
    }

    /// Largest componentwise absolute difference, `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Value) -> Option<f64> {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Some((a - b).abs()),
            (Value::Vector(a), Value::Vector(b)) => {
                Some((a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Var {
        name: String,
        ty: ValueType,
    },
    Const {
        value: Value,
        ty: ValueType,
    },
    Unary {
        op: String,
        arg: Box<Expr>,
    },
    Binary {
        op: String,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Hole {
        name: String,
        ty: ValueType,
    },
}

impl Expr {
    pub fn var(name: impl Into<String>, ty: ValueType) -> Expr {
        Expr::Var {
            name: name.into(),
            ty,
        }
    }

    pub fn scalar(value: f64, dim: Dimension) -> Expr {
        Expr::Const {
            value: Value::Scalar(value),
            ty: ValueType::Scalar(dim),
        }
    }

    pub fn unary(op: impl Into<String>, arg: Expr) -> Expr {
        Expr::Unary {
            op: op.into(),
            arg: Box::new(arg),
        }
    }

    pub fn binary(op: impl Into<String>, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op: op.into(),
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn hole(name: impl Into<String>, ty: ValueType) -> Expr {
        Expr::Hole {
            name: name.into(),
            ty,
        }
    }

    /// AST height; leaves have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Var { .. } | Expr::Const { .. } | Expr::Hole { .. } => 1,
            Expr::Unary { arg, .. } => 1 + arg.depth(),
            Expr::Binary { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
        }
    }

    pub fn has_holes(&self) -> bool {
        match self {
            Expr::Hole { .. } => true,
            Expr::Var { .. } | Expr::Const { .. } => false,
            Expr::Unary { arg, .. } => arg.has_holes(),
            Expr::Binary { lhs, rhs, .. } => lhs.has_holes() || rhs.has_holes(),
        }
    }

    fn visit_holes<'a>(&'a self, f: &mut impl FnMut(&'a str, ValueType)) {
        match self {
            Expr::Hole { name, ty } => f(name, *ty),
            Expr::Var { .. } | Expr::Const { .. } => {}
            Expr::Unary { arg, .. } => arg.visit_holes(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.visit_holes(f);
                rhs.visit_holes(f);
            }
        }
    }

    /// Replaces expression holes by name; unknown names are left in place.
    pub fn fill(&self, lookup: &impl Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Hole { name, .. } => lookup(name).unwrap_or_else(|| self.clone()),
            Expr::Var { .. } | Expr::Const { .. } => self.clone(),
            Expr::Unary { op, arg } => Expr::Unary {
                op: op.clone(),
                arg: Box::new(arg.fill(lookup)),
            },
            Expr::Binary { op, lhs, rhs } => Expr::Binary {
                op: op.clone(),
                lhs: Box::new(lhs.fill(lookup)),
                rhs: Box::new(rhs.fill(lookup)),
            },
        }
    }
}

/// The right-hand side of a comparison: a concrete parameter or a blank one.
#[derive(Clone, Debug, PartialEq)]
pub enum Threshold {
    Param {
        name: String,
        value: f64,
        dim: Dimension,
    },
    Hole {
        name: String,
        dim: Dimension,
    },
}

impl Threshold {
    pub fn name(&self) -> &str {
        match self {
            Threshold::Param { name, .. } | Threshold::Hole { name, .. } => name,
        }
    }

    pub fn dim(&self) -> Dimension {
        match self {
            Threshold::Param { dim, .. } | Threshold::Hole { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ActionRef {
    /// The previous action, written `a_s`.
    Current,
    Named(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cmp {
    Lt,
    Gt,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Gt => ">",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Gt => lhs > rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pred {
    True,
    False,
    ActionEq(ActionRef, ActionRef),
    Cmp(Cmp, Expr, Threshold),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
    Hole(String),
}

impl Pred {
    pub fn lt(e: Expr, t: Threshold) -> Pred {
        Pred::Cmp(Cmp::Lt, e, t)
    }

    pub fn gt(e: Expr, t: Threshold) -> Pred {
        Pred::Cmp(Cmp::Gt, e, t)
    }

    pub fn and(a: Pred, b: Pred) -> Pred {
        Pred::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Pred, b: Pred) -> Pred {
        Pred::Or(Box::new(a), Box::new(b))
    }

    pub fn current_is(action: impl Into<String>) -> Pred {
        Pred::ActionEq(ActionRef::Current, ActionRef::Named(action.into()))
    }

    pub fn has_holes(&self) -> bool {
        let (p, e, b) = self.holes();
        !(p.is_empty() && e.is_empty() && b.is_empty())
    }

    /// Hole names in first textual occurrence order: (params, exprs, preds).
    pub fn holes(&self) -> (Vec<String>, Vec<String>, Vec<String>) {
        let mut out = HoleSet::default();
        self.collect_into(&mut out);
        (out.params, out.exprs, out.preds)
    }

    fn collect_into(&self, out: &mut HoleSet) {
        match self {
            Pred::True | Pred::False | Pred::ActionEq(..) => {}
            Pred::Hole(name) => out.push_pred(name),
            Pred::Cmp(_, e, t) => {
                e.visit_holes(&mut |name, _| out.push_expr(name));
                if let Threshold::Hole { name, .. } = t {
                    out.push_param(name);
                }
            }
            Pred::And(a, b) | Pred::Or(a, b) => {
                a.collect_into(out);
                b.collect_into(out);
            }
        }
    }

    /// Typed expression holes in textual order.
    pub fn expr_holes(&self) -> Vec<(String, ValueType)> {
        let mut out: Vec<(String, ValueType)> = Vec::new();
        self.visit_cmps(&mut |_, e, _| {
            e.visit_holes(&mut |name, ty| {
                if !out.iter().any(|(n, _)| n == name) {
                    out.push((name.to_string(), ty));
                }
            })
        });
        out
    }

    pub fn visit_cmps<'a>(&'a self, f: &mut impl FnMut(Cmp, &'a Expr, &'a Threshold)) {
        match self {
            Pred::Cmp(c, e, t) => f(*c, e, t),
            Pred::And(a, b) | Pred::Or(a, b) => {
                a.visit_cmps(f);
                b.visit_cmps(f);
            }
            _ => {}
        }
    }

    /// Structural map over comparisons, used to fill or rename holes.
    pub fn map_cmps(&self, f: &mut impl FnMut(Cmp, &Expr, &Threshold) -> Pred) -> Pred {
        match self {
            Pred::Cmp(c, e, t) => f(*c, e, t),
            Pred::And(a, b) => Pred::and(a.map_cmps(f), b.map_cmps(f)),
            Pred::Or(a, b) => Pred::or(a.map_cmps(f), b.map_cmps(f)),
            other => other.clone(),
        }
    }

    /// Replaces predicate holes by name.
    pub fn fill_preds(&self, lookup: &impl Fn(&str) -> Option<Pred>) -> Pred {
        match self {
            Pred::Hole(name) => lookup(name).unwrap_or_else(|| self.clone()),
            Pred::And(a, b) => Pred::and(a.fill_preds(lookup), b.fill_preds(lookup)),
            Pred::Or(a, b) => Pred::or(a.fill_preds(lookup), b.fill_preds(lookup)),
            other => other.clone(),
        }
    }
}

#[derive(Default)]
struct HoleSet {
    params: Vec<String>,
    exprs: Vec<String>,
    preds: Vec<String>,
}

impl HoleSet {
    fn push(list: &mut Vec<String>, name: &str) {
        if !list.iter().any(|n| n == name) {
            list.push(name.to_string());
        }
    }
    fn push_param(&mut self, name: &str) {
        Self::push(&mut self.params, name)
    }
    fn push_expr(&mut self, name: &str) {
        Self::push(&mut self.exprs, name)
    }
    fn push_pred(&mut self, name: &str) {
        Self::push(&mut self.preds, name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub guard: Pred,
    pub action: String,
}

/// An ordered decision list with a fallback action.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub branches: Vec<Branch>,
    pub fallback: String,
}

/// Holes of a policy, each list ordered by first textual occurrence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyHoles {
    pub params: Vec<String>,
    pub exprs: Vec<String>,
    pub preds: Vec<String>,
}

impl PolicyHoles {
    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.exprs.is_empty() && self.preds.is_empty()
    }
}

impl Policy {
    pub fn fallback_only(action: impl Into<String>) -> Policy {
        Policy {
            branches: Vec::new(),
            fallback: action.into(),
        }
    }

    pub fn is_complete(&self) -> bool {
        collect_holes(self).is_empty()
    }

    /// Every threshold in textual order.
    pub fn thresholds(&self) -> Vec<&Threshold> {
        let mut out = Vec::new();
        for b in &self.branches {
            b.guard.visit_cmps(&mut |_, _, t| out.push(t));
        }
        out
    }

    /// Renames every concrete parameter to its positional default name.
    pub fn with_positional_param_names(&self) -> Policy {
        let mut index = 0usize;
        let branches = self
            .branches
            .iter()
            .map(|b| {
                let guard = b.guard.map_cmps(&mut |c, e, t| {
                    index += 1;
                    let t = match t {
                        Threshold::Param { value, dim, .. } => Threshold::Param {
                            name: positional_name(index),
                            value: *value,
                            dim: *dim,
                        },
                        hole => hole.clone(),
                    };
                    Pred::Cmp(c, e.clone(), t)
                });
                Branch {
                    guard,
                    action: b.action.clone(),
                }
            })
            .collect();
        Policy {
            branches,
            fallback: self.fallback.clone(),
        }
    }
}

/// Default name of the `index`-th (1-based) threshold of a policy.
pub fn positional_name(index: usize) -> String {
    format!("#{index}")
}

/// Blank parameters, expressions and predicates of `p`, in textual order.
pub fn collect_holes(p: &Policy) -> PolicyHoles {
    let mut out = HoleSet::default();
    for b in &p.branches {
        b.guard.collect_into(&mut out);
    }
    PolicyHoles {
        params: out.params,
        exprs: out.exprs,
        preds: out.preds,
    }
}
