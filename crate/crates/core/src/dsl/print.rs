use std::fmt::Write;
use std::sync::OnceLock;

use super::ast::*;
use super::parse::is_infix;
use crate::dimensions::{OpRegistry, OpReject};

fn builtins() -> &'static OpRegistry {
    static REG: OnceLock<OpRegistry> = OnceLock::new();
    REG.get_or_init(OpRegistry::default)
}

fn infer_type(e: &Expr) -> Option<ValueType> {
    let apply = |op: &str, args: &[ValueType]| -> Option<ValueType> {
        builtins()
            .get(op)?
            .type_of(args)
            .map_err(|_: OpReject| ())
            .ok()
    };
    match e {
        Expr::Var { ty, .. } | Expr::Const { ty, .. } | Expr::Hole { ty, .. } => Some(*ty),
        Expr::Unary { op, arg } => apply(op, &[infer_type(arg)?]),
        Expr::Binary { op, lhs, rhs } => apply(op, &[infer_type(lhs)?, infer_type(rhs)?]),
    }
}

/// Dimension a bare threshold compared against `lhs` defaults to.
///
/// Only the builtin operator rules are consulted so that printing and
/// parsing agree regardless of the domain.
pub fn infer_threshold_dim(lhs: &Expr) -> Option<Dimension> {
    match infer_type(lhs)? {
        ValueType::Scalar(d) => Some(d),
        _ => None,
    }
}

/// Shortest round-trip decimal, switching to exponent form for very large
/// or very small magnitudes.
pub(crate) struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || (1e-6..1e16).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

fn dim_suffix(out: &mut String, d: Dimension) {
    if !d.is_dimensionless() {
        let _ = write!(out, ":{d}");
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Var { name, .. } => out.push_str(name),
        Expr::Const {
            value: Value::Scalar(v),
            ty,
        } => {
            let _ = write!(out, "{}", Num(*v));
            dim_suffix(out, ty.dimension().unwrap_or_default());
        }
        Expr::Const {
            value: Value::Vector([x, y]),
            ty,
        } => {
            let _ = write!(out, "<{}, {}>", Num(*x), Num(*y));
            dim_suffix(out, ty.dimension().unwrap_or_default());
        }
        Expr::Hole { name, ty } => {
            let _ = write!(out, "?{name}:{ty}");
        }
        Expr::Unary { op, arg } => {
            let _ = write!(out, "{op}(");
            write_expr(out, arg);
            out.push(')');
        }
        Expr::Binary { op, lhs, rhs } if is_infix(op) => {
            write_operand(out, lhs);
            let _ = write!(out, " {op} ");
            write_operand(out, rhs);
        }
        Expr::Binary { op, lhs, rhs } => {
            let _ = write!(out, "{op}(");
            write_expr(out, lhs);
            out.push_str(", ");
            write_expr(out, rhs);
            out.push(')');
        }
    }
}

fn write_operand(out: &mut String, e: &Expr) {
    if matches!(e, Expr::Binary { op, .. } if is_infix(op)) {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

fn write_action_ref(out: &mut String, r: &ActionRef) {
    match r {
        ActionRef::Current => out.push_str("a_s"),
        ActionRef::Named(n) => out.push_str(n),
    }
}

fn write_pred(out: &mut String, p: &Pred, index: &mut usize) {
    match p {
        Pred::True => out.push_str("true"),
        Pred::False => out.push_str("false"),
        Pred::Hole(name) => {
            let _ = write!(out, "?{name}");
        }
        Pred::ActionEq(a, b) => {
            write_action_ref(out, a);
            out.push_str(" == ");
            write_action_ref(out, b);
        }
        Pred::Cmp(c, e, t) => {
            *index += 1;
            write_expr(out, e);
            let _ = write!(out, " {} ", c.symbol());
            match t {
                Threshold::Hole { name, dim } => {
                    let _ = write!(out, "?{name}:{dim}");
                }
                Threshold::Param { name, value, dim } => {
                    if *name != positional_name(*index) {
                        let _ = write!(out, "{name}=");
                    }
                    let _ = write!(out, "{}", Num(*value));
                    if infer_threshold_dim(e).unwrap_or_default() != *dim {
                        let _ = write!(out, ":{dim}");
                    }
                }
            }
        }
        Pred::Or(a, b) => {
            write_pred(out, a, index);
            out.push_str(" || ");
            write_child(out, b, index, matches!(**b, Pred::Or(..)));
        }
        Pred::And(a, b) => {
            write_child(out, a, index, matches!(**a, Pred::Or(..)));
            out.push_str(" && ");
            write_child(out, b, index, matches!(**b, Pred::Or(..) | Pred::And(..)));
        }
    }
}

fn write_child(out: &mut String, p: &Pred, index: &mut usize, paren: bool) {
    if paren {
        out.push('(');
        write_pred(out, p, index);
        out.push(')');
    } else {
        write_pred(out, p, index);
    }
}

/// Prints a predicate; thresholds are numbered from 1 for positional names.
pub fn print_pred(p: &Pred) -> String {
    let mut out = String::new();
    write_pred(&mut out, p, &mut 0);
    out
}

/// Prints a policy in the form accepted by `parse_policy`.
pub fn print_policy(p: &Policy) -> String {
    if p.branches.is_empty() {
        return format!("return {}\n", p.fallback);
    }
    let mut out = String::new();
    let mut index = 0;
    for (i, b) in p.branches.iter().enumerate() {
        out.push_str(if i == 0 { "if (" } else { "elif (" });
        write_pred(&mut out, &b.guard, &mut index);
        let _ = writeln!(out, "): {}", b.action);
    }
    let _ = writeln!(out, "else: {}", p.fallback);
    out
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&print_expr(self))
    }
}

impl std::fmt::Display for Pred {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&print_pred(self))
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&print_policy(self))
    }
}
