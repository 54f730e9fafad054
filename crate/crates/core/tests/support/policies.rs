use ldips::dimensions::TypeEnv;
use ldips::dsl::{
    parse_policy, positional_name, print_policy, ActionRef, Branch, Cmp, Dimension, Expr, Policy,
    Pred, Threshold, Value, ValueType,
};
use ldips::worldio::soccer_domain;
use proptest::prelude::*;

pub fn env() -> TypeEnv {
    soccer_domain().type_env().unwrap()
}

const ACTIONS: [&str; 3] = ["Goto", "Inter", "Kick"];

fn dim() -> impl Strategy<Value = Dimension> {
    (-2i32..=2, -2i32..=2, -1i32..=1).prop_map(|(l, t, m)| Dimension::new(l, t, m))
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i32..1000).prop_map(f64::from),
        -1e6f64..1e6,
        (-1e-3f64..1e-3),
        prop::num::f64::NORMAL,
    ]
}

fn leaf() -> impl Strategy<Value = Expr> {
    let env = env();
    let vars: Vec<Expr> = env
        .inputs
        .iter()
        .map(|(n, t)| Expr::var(n.clone(), *t))
        .collect();
    prop_oneof![
        4 => prop::sample::select(vars),
        1 => (number(), dim()).prop_map(|(v, d)| Expr::scalar(v, d)),
        1 => (number(), number(), dim())
            .prop_map(|(x, y, d)| Expr::Const { value: Value::Vector([x, y]), ty: ValueType::Vector(d) }),
        1 => (dim(), prop::bool::ANY).prop_map(|(d, v)| {
            Expr::hole("e", if v { ValueType::Vector(d) } else { ValueType::Scalar(d) })
        }),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (
                prop::sample::select(vec!["abs", "sin", "cos", "norm"]),
                inner.clone()
            )
                .prop_map(|(op, a)| Expr::unary(op, a)),
            (
                prop::sample::select(vec!["+", "-", "*", "/", "dist"]),
                inner.clone(),
                inner
            )
                .prop_map(|(op, a, b)| Expr::binary(op, a, b)),
        ]
    })
}

#[derive(Clone, Debug)]
enum ThresholdKind {
    Bare,
    Named,
    Annotated(Dimension),
    Hole(Dimension),
}

fn atom() -> impl Strategy<Value = Pred> {
    let cmp = (
        expr(),
        prop::bool::ANY,
        number(),
        prop_oneof![
            3 => Just(ThresholdKind::Bare),
            1 => Just(ThresholdKind::Named),
            1 => dim().prop_map(ThresholdKind::Annotated),
            1 => dim().prop_map(ThresholdKind::Hole),
        ],
    )
        .prop_map(|(e, lt, value, kind)| {
            let dim = match kind {
                ThresholdKind::Annotated(d) => d,
                _ => ldips::dsl::infer_threshold_dim(&e).unwrap_or_default(),
            };
            let t = match kind {
                ThresholdKind::Hole(d) => Threshold::Hole {
                    name: "k".into(),
                    dim: d,
                },
                ThresholdKind::Named => Threshold::Param {
                    name: "k".into(),
                    value,
                    dim,
                },
                _ => Threshold::Param {
                    name: String::new(),
                    value,
                    dim,
                },
            };
            Pred::Cmp(if lt { Cmp::Lt } else { Cmp::Gt }, e, t)
        });
    prop_oneof![
        6 => cmp,
        1 => Just(Pred::True),
        1 => Just(Pred::False),
        1 => Just(Pred::Hole("b".into())),
        2 => prop::sample::select(ACTIONS.to_vec())
            .prop_map(|a| Pred::ActionEq(ActionRef::Current, ActionRef::Named(a.into()))),
    ]
}

fn pred() -> impl Strategy<Value = Pred> {
    atom().prop_recursive(3, 12, 2, |inner| {
        (inner.clone(), inner, prop::bool::ANY).prop_map(|(a, b, and)| {
            if and {
                Pred::and(a, b)
            } else {
                Pred::or(a, b)
            }
        })
    })
}

/// Gives every hole and parameter a distinct name; unnamed parameters take
/// their positional name.
fn uniquely_named(p: Policy) -> Policy {
    let mut index = 0;
    let mut exprs = 0;
    let mut preds = 0;
    let branches = p
        .branches
        .into_iter()
        .map(|b| {
            let guard = rename_preds(&b.guard, &mut preds);
            let guard = guard.map_cmps(&mut |c, e, t| {
                index += 1;
                let e = rename_exprs(e, &mut exprs);
                let t = match t {
                    Threshold::Hole { dim, .. } => Threshold::Hole {
                        name: format!("k{index}"),
                        dim: *dim,
                    },
                    Threshold::Param { name, value, dim } if name.is_empty() => Threshold::Param {
                        name: positional_name(index),
                        value: *value,
                        dim: *dim,
                    },
                    Threshold::Param { value, dim, .. } => Threshold::Param {
                        name: format!("k{index}"),
                        value: *value,
                        dim: *dim,
                    },
                };
                Pred::Cmp(c, e, t)
            });
            Branch {
                guard,
                action: b.action,
            }
        })
        .collect();
    Policy {
        branches,
        fallback: p.fallback,
    }
}

fn rename_exprs(e: &Expr, n: &mut usize) -> Expr {
    match e {
        Expr::Hole { ty, .. } => {
            *n += 1;
            Expr::hole(format!("e{n}"), *ty)
        }
        Expr::Unary { op, arg } => Expr::unary(op.clone(), rename_exprs(arg, n)),
        Expr::Binary { op, lhs, rhs } => {
            let l = rename_exprs(lhs, n);
            Expr::binary(op.clone(), l, rename_exprs(rhs, n))
        }
        other => other.clone(),
    }
}

fn rename_preds(p: &Pred, n: &mut usize) -> Pred {
    match p {
        Pred::Hole(_) => {
            *n += 1;
            Pred::Hole(format!("b{n}"))
        }
        Pred::And(a, b) => {
            let a = rename_preds(a, n);
            Pred::and(a, rename_preds(b, n))
        }
        Pred::Or(a, b) => {
            let a = rename_preds(a, n);
            Pred::or(a, rename_preds(b, n))
        }
        other => other.clone(),
    }
}

pub fn policy() -> impl Strategy<Value = Policy> {
    let branch = (pred(), prop::sample::select(ACTIONS.to_vec())).prop_map(|(guard, a)| Branch {
        guard,
        action: a.to_string(),
    });
    (
        prop::collection::vec(branch, 0..5),
        prop::sample::select(ACTIONS.to_vec()),
    )
        .prop_map(|(branches, f)| {
            uniquely_named(Policy {
                branches,
                fallback: f.to_string(),
            })
        })
}

/// Printing then parsing gives back the same policy and the same text.
pub fn check_roundtrip(p: &Policy) -> Result<(), TestCaseError> {
    let text = print_policy(p);
    let back =
        parse_policy(&text, &env()).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    prop_assert_eq!(&back, p, "{}", text);
    prop_assert_eq!(print_policy(&back), text);
    Ok(())
}
